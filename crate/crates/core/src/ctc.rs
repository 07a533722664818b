//! CTC negative log-likelihood by forward–backward over the blank-interleaved
//! label sequence, best-path decoding, and hierarchical loss composition.

use crate::error::{Error, Result};
use crate::logspace::{log_add, LOG_ZERO};
use crate::posteriors::FramePosteriors;
use crate::vocab::{collapse_ctc, Alignment, TokenId, TokenSequence, BLANK_ID, MASK_ID};

#[derive(Debug, Clone, PartialEq)]
pub struct CtcLossResult {
    /// `-ln p(W|O)` in nats; `+inf` when no alignment exists.
    pub loss: f64,
    /// `T × V` gradient with respect to the pre-softmax logits.
    pub grad_logits: Vec<f64>,
    /// `T × V` occupation probabilities `γ_t(k)` given the target.
    pub occupation: Vec<f64>,
    pub feasible: bool,
    pub frames: usize,
    pub vocab: usize,
}

impl CtcLossResult {
    fn infeasible(frames: usize, vocab: usize) -> Self {
        Self {
            loss: f64::INFINITY,
            grad_logits: vec![0.0; frames * vocab],
            occupation: vec![0.0; frames * vocab],
            feasible: false,
            frames,
            vocab,
        }
    }

    pub fn grad_row(&self, t: usize) -> &[f64] {
        &self.grad_logits[t * self.vocab..(t + 1) * self.vocab]
    }

    pub fn occupation_row(&self, t: usize) -> &[f64] {
        &self.occupation[t * self.vocab..(t + 1) * self.vocab]
    }
}

fn extended_labels(w: &[TokenId]) -> Vec<TokenId> {
    let mut ext = Vec::with_capacity(2 * w.len() + 1);
    ext.push(BLANK_ID);
    for &id in w {
        ext.push(id);
        ext.push(BLANK_ID);
    }
    ext
}

/// Whether state `s` may be entered from `s - 2` (skip over a blank).
fn can_skip(ext: &[TokenId], s: usize) -> bool {
    s >= 2 && ext[s] != BLANK_ID && ext[s] != ext[s - 2]
}

/// Exact CTC loss and its gradient with respect to frame logits.
pub fn ctc_loss(post: &FramePosteriors, w: &TokenSequence) -> Result<CtcLossResult> {
    let (frames, vocab) = (post.frames(), post.vocab());
    if frames == 0 {
        return Err(Error::Contract("CTC loss needs at least one frame".into()));
    }
    if let Some(&bad) = w.iter().find(|&&id| id >= vocab) {
        return Err(Error::InvalidSequence(format!(
            "token id {bad} outside posterior width {vocab}"
        )));
    }
    if w.min_ctc_frames() > frames {
        return Ok(CtcLossResult::infeasible(frames, vocab));
    }

    let ext = extended_labels(w);
    let states = ext.len();
    let mut alpha = vec![LOG_ZERO; frames * states];
    let mut beta = vec![LOG_ZERO; frames * states];

    alpha[0] = post.get(0, ext[0]);
    if states > 1 {
        alpha[1] = post.get(0, ext[1]);
    }
    for t in 1..frames {
        let (prev, cur) = alpha.split_at_mut(t * states);
        let prev = &prev[(t - 1) * states..];
        for s in 0..states {
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if can_skip(&ext, s) {
                acc = log_add(acc, prev[s - 2]);
            }
            cur[s] = if acc == LOG_ZERO {
                LOG_ZERO
            } else {
                acc + post.get(t, ext[s])
            };
        }
    }

    // beta excludes the emission at its own frame.
    let last = (frames - 1) * states;
    beta[last + states - 1] = 0.0;
    if states > 1 {
        beta[last + states - 2] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        for s in 0..states {
            let step = |s2: usize| beta[(t + 1) * states + s2] + post.get(t + 1, ext[s2]);
            let mut acc = step(s);
            if s + 1 < states {
                acc = log_add(acc, step(s + 1));
            }
            if s + 2 < states && can_skip(&ext, s + 2) {
                acc = log_add(acc, step(s + 2));
            }
            beta[t * states + s] = acc;
        }
    }

    let mut log_z = alpha[last + states - 1];
    if states > 1 {
        log_z = log_add(log_z, alpha[last + states - 2]);
    }
    if log_z == LOG_ZERO {
        return Ok(CtcLossResult::infeasible(frames, vocab));
    }

    let mut occupation = vec![0.0; frames * vocab];
    for t in 0..frames {
        let row = &mut occupation[t * vocab..(t + 1) * vocab];
        for s in 0..states {
            let lp = alpha[t * states + s] + beta[t * states + s];
            if lp != LOG_ZERO {
                row[ext[s]] += (lp - log_z).exp();
            }
        }
    }
    let grad_logits = post
        .data()
        .iter()
        .zip(&occupation)
        .map(|(lp, g)| lp.exp() - g)
        .collect();

    Ok(CtcLossResult {
        loss: -log_z,
        grad_logits,
        occupation,
        feasible: true,
        frames,
        vocab,
    })
}

/// CTC loss on an intermediate encoder layer's posteriors; identical math.
pub fn intermediate_ctc_loss(
    layer_post: &FramePosteriors,
    w_small: &TokenSequence,
) -> Result<CtcLossResult> {
    ctc_loss(layer_post, w_small)
}

/// Per-frame argmax, skipping the mask column; ties go to the lowest id.
pub fn best_path_alignment(post: &FramePosteriors) -> Alignment {
    let ids = (0..post.frames())
        .map(|t| argmax_excluding_mask(post.row(t)))
        .collect();
    Alignment::new(ids).expect("argmax never selects the mask id")
}

pub fn best_path_decode(post: &FramePosteriors) -> (Alignment, TokenSequence) {
    let a = best_path_alignment(post);
    let w = collapse_ctc(&a);
    (a, w)
}

pub(crate) fn argmax_excluding_mask(row: &[f64]) -> TokenId {
    let mut best = BLANK_ID;
    let mut best_val = f64::NEG_INFINITY;
    for (k, &v) in row.iter().enumerate() {
        if k == MASK_ID {
            continue;
        }
        if v > best_val {
            best = k;
            best_val = v;
        }
    }
    best
}

/// Weights for the hierarchical loss combination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HierarchicalWeights {
    /// Share of the auxiliary CTC losses against the main objective.
    pub ctc: f64,
    /// Share of the intermediate-layer loss within the auxiliary losses.
    pub inter: f64,
}

impl Default for HierarchicalWeights {
    fn default() -> Self {
        Self {
            ctc: 0.3,
            inter: 0.5,
        }
    }
}

impl HierarchicalWeights {
    pub fn new(ctc: f64, inter: f64) -> Result<Self> {
        let w = Self { ctc, inter };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_ctc", self.ctc), ("lambda_ic", self.inter)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name}={v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Coefficients `(main, final_ctc, inter_ctc)` of the linear combination.
    pub fn coefficients(&self) -> (f64, f64, f64) {
        (
            1.0 - self.ctc,
            self.ctc * (1.0 - self.inter),
            self.ctc * self.inter,
        )
    }
}

/// `(1-λctc)·main + λctc·((1-λic)·final + λic·inter)`. Terms with a zero
/// coefficient are dropped so an infinite ignored term cannot poison the sum.
pub fn compose_hierarchical_loss(
    main: f64,
    final_ctc: f64,
    inter_ctc: f64,
    weights: HierarchicalWeights,
) -> Result<f64> {
    weights.validate()?;
    let (a, b, c) = weights.coefficients();
    Ok([(a, main), (b, final_ctc), (c, inter_ctc)]
        .iter()
        .filter(|(coef, _)| *coef != 0.0)
        .map(|(coef, v)| coef * v)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(frames: usize, vocab: usize) -> FramePosteriors {
        FramePosteriors::from_probs(&vec![vec![1.0 / vocab as f64; vocab]; frames]).unwrap()
    }

    fn seq(ids: &[usize]) -> TokenSequence {
        TokenSequence::new(ids.to_vec()).unwrap()
    }

    // Columns: 0 = blank, 1 = mask, 2 = a, 3 = b. The uniform examples use a
    // three-symbol alphabet {ε, a, b}, so mask gets probability 0.
    fn uniform_eab(frames: usize) -> FramePosteriors {
        let third = 1.0 / 3.0;
        FramePosteriors::from_probs(&vec![vec![third, 0.0, third, third]; frames]).unwrap()
    }

    #[test]
    fn forced_single_alignment_has_zero_loss() {
        let post = FramePosteriors::from_probs(&[vec![0.0, 0.0, 1.0]]).unwrap();
        let r = ctc_loss(&post, &seq(&[2])).unwrap();
        assert!(r.loss.abs() < 1e-12);
    }

    #[test]
    fn uniform_single_token_three_frames() {
        let r = ctc_loss(&uniform_eab(3), &seq(&[2])).unwrap();
        assert!((r.loss - (-(6.0f64 / 27.0).ln())).abs() < 1e-12);
        assert!((r.loss - 1.50408).abs() < 1e-5);
    }

    #[test]
    fn uniform_two_tokens_two_frames() {
        let r = ctc_loss(&uniform_eab(2), &seq(&[2, 3])).unwrap();
        assert!((r.loss - 9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn infeasible_target_flags_and_zeroes_gradient() {
        let r = ctc_loss(&uniform(2, 4), &seq(&[2, 2])).unwrap();
        assert!(!r.feasible);
        assert_eq!(r.loss, f64::INFINITY);
        assert!(r.grad_logits.iter().all(|&g| g == 0.0));
        let r = intermediate_ctc_loss(&uniform(1, 4), &seq(&[2, 3])).unwrap();
        assert!(!r.feasible);
    }

    #[test]
    fn intermediate_delegates() {
        let post = uniform(5, 4);
        let w = seq(&[2, 3, 2]);
        assert_eq!(
            ctc_loss(&post, &w).unwrap(),
            intermediate_ctc_loss(&post, &w).unwrap()
        );
        let r = intermediate_ctc_loss(&uniform_eab(3), &seq(&[2])).unwrap();
        assert!((r.loss - 1.50408).abs() < 1e-5);
    }

    #[test]
    fn empty_target_is_all_blank_path() {
        let post = FramePosteriors::from_probs(&[vec![0.5, 0.0, 0.5], vec![0.25, 0.0, 0.75]]).unwrap();
        let r = ctc_loss(&post, &TokenSequence::empty()).unwrap();
        assert!((r.loss - -(0.125f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn gradient_rows_sum_to_zero_and_occupation_to_one() {
        let post = FramePosteriors::from_logits(
            4,
            4,
            &[
                0.1, -0.3, 0.7, 0.2, 1.0, 0.0, -1.0, 0.5, 0.3, 0.3, 0.3, 0.9, -0.2, 0.1, 0.4, 0.0,
            ],
        )
        .unwrap();
        let r = ctc_loss(&post, &seq(&[2, 3])).unwrap();
        for t in 0..4 {
            assert!(r.grad_row(t).iter().sum::<f64>().abs() < 1e-12);
            assert!((r.occupation_row(t).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn best_path_examples() {
        let one_hot = |k: usize| {
            let mut r = vec![0.0; 4];
            r[k] = 1.0;
            r
        };
        let post =
            FramePosteriors::from_probs(&[one_hot(2), one_hot(2), one_hot(0), one_hot(3)]).unwrap();
        let (a, w) = best_path_decode(&post);
        assert_eq!(a.ids(), &[2, 2, 0, 3]);
        assert_eq!(w.ids(), &[2, 3]);

        let post = FramePosteriors::from_probs(&[one_hot(0), one_hot(0)]).unwrap();
        assert!(best_path_decode(&post).1.is_empty());

        let post = FramePosteriors::from_probs(&[vec![0.4, 0.0, 0.4, 0.2]]).unwrap();
        assert_eq!(best_path_decode(&post).0.ids(), &[BLANK_ID]);
    }

    #[test]
    fn best_path_never_picks_mask() {
        let post = FramePosteriors::from_probs(&[vec![0.1, 0.8, 0.05, 0.05]]).unwrap();
        assert_eq!(best_path_decode(&post).0.ids(), &[BLANK_ID]);
    }

    #[test]
    fn hierarchical_composition() {
        let w = HierarchicalWeights::default();
        let v = compose_hierarchical_loss(2.0, 4.0, 6.0, w).unwrap();
        assert!((v - 2.9).abs() < 1e-12);
        let w0 = HierarchicalWeights::new(0.0, 0.5).unwrap();
        assert_eq!(compose_hierarchical_loss(2.0, 4.0, 6.0, w0).unwrap(), 2.0);
        let w1 = HierarchicalWeights::new(1.0, 0.5).unwrap();
        assert_eq!(compose_hierarchical_loss(f64::INFINITY, 4.0, 6.0, w1).unwrap(), 5.0);
        assert!(matches!(
            HierarchicalWeights::new(1.5, 0.5),
            Err(Error::Config(_))
        ));
        let bad = HierarchicalWeights { ctc: 0.3, inter: -0.1 };
        assert!(compose_hierarchical_loss(1.0, 1.0, 1.0, bad).is_err());
    }
}
