//! Mask-predict bookkeeping checked against a line-by-line transcription of
//! the reference inference pseudocode.

use bertctc_core::*;
use proptest::prelude::*;

/// Verbatim token-level probability loop: the token index advances only on a
/// blank that follows a non-blank, and each non-blank frame updates the
/// running maximum of `p(a_t = ŵ_n)`.
fn pseudocode_confidences(alignment: &[TokenId], post: &FramePosteriors) -> Vec<f64> {
    let hyp = collapse_ctc_ids(alignment).unwrap();
    let mut p_hat = vec![0.0; hyp.len()];
    let mut n = 0usize;
    let mut prev = BLANK_ID;
    for (t, &a_t) in alignment.iter().enumerate() {
        if a_t == BLANK_ID {
            if prev != BLANK_ID {
                n += 1;
            }
        } else {
            let p = post.get(t, hyp[n]).exp();
            p_hat[n] = f64::max(p, p_hat[n]);
        }
        prev = a_t;
    }
    p_hat
}

/// Alignments where every change between distinct tokens passes through a
/// blank; on these the pseudocode's index bookkeeping is unambiguous.
fn blank_separated(ids: &[TokenId]) -> bool {
    ids.windows(2)
        .all(|w| w[0] == BLANK_ID || w[1] == BLANK_ID || w[0] == w[1])
}

fn posteriors(frames: usize, logits: &[f64]) -> FramePosteriors {
    FramePosteriors::from_logits(frames, 5, logits).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn confidences_match_pseudocode(
        lead in 0usize..3,
        runs in prop::collection::vec((2usize..5, 1usize..4, 1usize..3), 0..5),
        logits in prop::collection::vec(-3.0f64..3.0, 40 * 5),
    ) {
        // leading blanks, then token runs each followed by a blank run
        let mut ids = vec![BLANK_ID; lead];
        for &(tok, len, gap) in &runs {
            ids.extend(std::iter::repeat_n(tok, len));
            ids.extend(std::iter::repeat_n(BLANK_ID, gap));
        }
        prop_assume!(!ids.is_empty());
        prop_assert!(blank_separated(&ids));
        let post = posteriors(ids.len(), &logits[..ids.len() * 5]);
        let a = Alignment::new(ids.clone()).unwrap();
        let (w, conf) = token_confidences(&a, &post).unwrap();
        prop_assert_eq!(w.clone(), collapse_ctc(&a));
        let expected = pseudocode_confidences(&ids, &post);
        prop_assert_eq!(conf.scores(), expected.as_slice());
    }

    #[test]
    fn confidence_tokens_equal_collapse(
        raw in prop::collection::vec(0usize..4, 1..14),
        logits in prop::collection::vec(-3.0f64..3.0, 14 * 5),
    ) {
        let ids: Vec<TokenId> = raw.iter().map(|&x| if x == 0 { BLANK_ID } else { x + 1 }).collect();
        let post = posteriors(ids.len(), &logits[..ids.len() * 5]);
        let a = Alignment::new(ids).unwrap();
        let (w, conf) = token_confidences(&a, &post).unwrap();
        prop_assert_eq!(w.clone(), collapse_ctc(&a));
        prop_assert_eq!(conf.len(), w.len());
        prop_assert!(conf.scores().iter().all(|&s| (0.0..=1.0).contains(&s)));
    }

    #[test]
    fn mask_lowest_preserves_observed(
        ids in prop::collection::vec(2usize..6, 0..12),
        scores in prop::collection::vec(0.0f64..1.0, 12),
        m_frac in 0.0f64..=1.0,
    ) {
        let hyp = TokenSequence::new(ids.clone()).unwrap();
        let conf = ConfidenceVector(scores[..ids.len()].to_vec());
        let m = (m_frac * ids.len() as f64).floor() as usize;
        let masked = mask_lowest(&hyp, &conf, m).unwrap();
        prop_assert_eq!(masked.len(), hyp.len());
        prop_assert_eq!(masked.mask_count(), m);
        let masked_pos = masked.masked_positions();
        for n in 0..ids.len() {
            if masked.is_observed(n) {
                prop_assert_eq!(masked.ids()[n], ids[n]);
                // every observed score is >= every masked score
                for &q in &masked_pos {
                    prop_assert!(conf.0[n] >= conf.0[q]);
                }
            }
        }
    }
}

#[test]
fn hand_traced_confidences() {
    let rows = |chosen: &[(TokenId, f64)]| {
        let r: Vec<Vec<f64>> = chosen
            .iter()
            .map(|&(k, p)| {
                let mut row = vec![0.0; 5];
                row[k] = p;
                row[if k == BLANK_ID { 4 } else { BLANK_ID }] += 1.0 - p;
                row
            })
            .collect();
        FramePosteriors::from_probs(&r).unwrap()
    };
    let post = rows(&[(2, 0.9), (0, 0.6), (3, 0.6), (3, 0.8)]);
    let a = Alignment::new(vec![2, 0, 3, 3]).unwrap();
    let (w, c) = token_confidences(&a, &post).unwrap();
    assert_eq!(w.ids(), &[2, 3]);
    assert_eq!(c.scores(), pseudocode_confidences(a.ids(), &post).as_slice());
    assert!((c.0[0] - 0.9).abs() < 1e-12 && (c.0[1] - 0.8).abs() < 1e-12);

    let post = rows(&[(2, 0.3), (2, 0.7)]);
    let a = Alignment::new(vec![2, 2]).unwrap();
    let (w, c) = token_confidences(&a, &post).unwrap();
    assert_eq!(w.ids(), &[2]);
    assert!((c.0[0] - 0.7).abs() < 1e-12);
}

#[test]
fn decay_schedule_exhaustive() {
    for iterations in 1..=32 {
        for len in 0..=64 {
            let mut prev = usize::MAX;
            for k in 1..=iterations {
                let m = decay_count(len, iterations, k).unwrap();
                assert!(m <= prev && m <= len);
                prev = m;
            }
            assert_eq!(decay_count(len, iterations, iterations).unwrap(), 0);
        }
    }
}
