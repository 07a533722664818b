//! Exhaustive enumeration oracles. These are exact or absent: inputs beyond
//! the guards are rejected rather than truncated.

use crate::error::{Error, Result};
use crate::vocab::{collapse_ctc, Alignment, TokenSequence, Vocabulary, BLANK_ID};

pub const MAX_ORACLE_FRAMES: usize = 8;
pub const MAX_ORACLE_VOCAB: usize = 4;

/// Every length-`t_frames` alignment over `{ε} ∪ regular tokens` whose CTC
/// collapse equals `w`, in lexicographic order.
pub fn enumerate_ctc_alignments(
    w: &TokenSequence,
    t_frames: usize,
    vocab: &Vocabulary,
) -> Result<Vec<Alignment>> {
    if t_frames > MAX_ORACLE_FRAMES || vocab.regular_count() > MAX_ORACLE_VOCAB {
        return Err(Error::OracleTooLarge(format!(
            "T={t_frames}, |V|={} exceeds T<={MAX_ORACLE_FRAMES}, |V|<={MAX_ORACLE_VOCAB}",
            vocab.regular_count()
        )));
    }
    vocab.check_ids(w)?;
    let symbols: Vec<usize> = std::iter::once(BLANK_ID).chain(vocab.regular_ids()).collect();
    let base = symbols.len();
    let total = base.pow(t_frames as u32);
    let mut out = Vec::new();
    let mut digits = vec![0usize; t_frames];
    for _ in 0..total {
        let ids: Vec<usize> = digits.iter().map(|&d| symbols[d]).collect();
        let a = Alignment::new(ids)?;
        if collapse_ctc(&a) == *w {
            out.push(a);
        }
        // odometer increment, last digit fastest
        for d in digits.iter_mut().rev() {
            *d += 1;
            if *d < base {
                break;
            }
            *d = 0;
        }
    }
    Ok(out)
}

/// Sum over an explicit alignment set of the product of per-frame
/// probabilities, returned as a negative log.
pub fn ctc_brute_force_nll(alignments: &[Alignment], log_probs: &[Vec<f64>]) -> f64 {
    let total: f64 = alignments
        .iter()
        .map(|a| {
            a.ids()
                .iter()
                .enumerate()
                .map(|(t, &id)| log_probs[t][id].exp())
                .product::<f64>()
        })
        .sum();
    -total.ln()
}
