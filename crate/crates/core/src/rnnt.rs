//! RNN-T lattice loss over the `(t, n)` grid and greedy decoding.
//!
//! Node `(t, n)` for `t ∈ 0..=T`, `n ∈ 0..=N` carries a distribution over the
//! vocabulary. A blank at `(t, n)` moves to `(t+1, n)` (only for `t < T`); the
//! token `w_{n+1}` at `(t, n)` moves to `(t, n+1)`. Paths run from `(0, 0)` to
//! `(T, N)`, so every alignment has length `T + N` with exactly `T` blanks.

use std::io::Write;

use crate::ctc::argmax_excluding_mask;
use crate::error::{Error, Result};
use crate::logspace::{log_add, log_sum_exp, LOG_ZERO};
use crate::posteriors::{write_grid_csv, NORMALIZATION_TOL};
use crate::vocab::{RnntAlignment, TokenId, TokenSequence, BLANK_ID};

pub const MAX_ORACLE_PATH_LEN: usize = 12;
pub const DEFAULT_MAX_SYMBOLS_PER_FRAME: usize = 5;

/// `(T+1) × (N+1) × V` log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGrid {
    frames: usize,
    tokens: usize,
    vocab: usize,
    data: Vec<f64>,
}

impl JointGrid {
    pub fn from_log_probs(frames: usize, tokens: usize, vocab: usize, data: Vec<f64>) -> Result<Self> {
        let expected = (frames + 1) * (tokens + 1) * vocab;
        if data.len() != expected || vocab == 0 {
            return Err(Error::Shape(format!(
                "joint grid ({frames}+1)x({tokens}+1)x{vocab} needs {expected} entries, got {}",
                data.len()
            )));
        }
        for (i, node) in data.chunks(vocab).enumerate() {
            let z = log_sum_exp(node);
            if node.iter().any(|x| x.is_nan()) || z.abs() > NORMALIZATION_TOL || z.is_nan() {
                return Err(Error::Contract(format!(
                    "node ({}, {}) is not normalized (logsumexp = {z})",
                    i / (tokens + 1),
                    i % (tokens + 1)
                )));
            }
        }
        Ok(Self {
            frames,
            tokens,
            vocab,
            data,
        })
    }

    /// Builds a grid from a per-node function returning linear probabilities.
    pub fn from_node_probs<F>(frames: usize, tokens: usize, vocab: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize) -> Vec<f64>,
    {
        let mut data = Vec::with_capacity((frames + 1) * (tokens + 1) * vocab);
        for t in 0..=frames {
            for n in 0..=tokens {
                data.extend(f(t, n).into_iter().map(f64::ln));
            }
        }
        Self::from_log_probs(frames, tokens, vocab, data)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn node_index(&self, t: usize, n: usize) -> usize {
        (t * (self.tokens + 1) + n) * self.vocab
    }

    pub fn node(&self, t: usize, n: usize) -> &[f64] {
        let i = self.node_index(t, n);
        &self.data[i..i + self.vocab]
    }

    /// One CSV per token index `n`: rows are `t = 0..=T`, columns token ids.
    pub fn write_csv_slice<W: Write>(&self, n: usize, out: W) -> Result<()> {
        let mut slice = Vec::with_capacity((self.frames + 1) * self.vocab);
        for t in 0..=self.frames {
            slice.extend_from_slice(self.node(t, n));
        }
        write_grid_csv(out, self.vocab, &slice)
    }

    fn check_target(&self, w: &TokenSequence) -> Result<()> {
        if w.len() != self.tokens {
            return Err(Error::Shape(format!(
                "grid built for N={} but target has {} tokens",
                self.tokens,
                w.len()
            )));
        }
        if let Some(&bad) = w.iter().find(|&&id| id >= self.vocab) {
            return Err(Error::Shape(format!("token id {bad} outside vocab {}", self.vocab)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnntLossResult {
    pub loss: f64,
    /// Gradient with respect to every grid log-probability.
    pub grad_log_probs: Vec<f64>,
    /// Gradient with respect to per-node logits, assuming the grid is a
    /// node-wise log-softmax of those logits.
    pub grad_logits: Vec<f64>,
}

/// `-ln` of the sum over all monotone lattice paths.
pub fn rnnt_loss(grid: &JointGrid, w: &TokenSequence) -> Result<f64> {
    grid.check_target(w)?;
    let alpha = forward(grid, w);
    Ok(-alpha[grid.frames * (grid.tokens + 1) + grid.tokens])
}

fn forward(grid: &JointGrid, w: &TokenSequence) -> Vec<f64> {
    let (frames, tokens) = (grid.frames, grid.tokens);
    let cols = tokens + 1;
    let mut alpha = vec![LOG_ZERO; (frames + 1) * cols];
    alpha[0] = 0.0;
    for t in 0..=frames {
        for n in 0..=tokens {
            if t == 0 && n == 0 {
                continue;
            }
            let mut acc = LOG_ZERO;
            if t > 0 {
                acc = alpha[(t - 1) * cols + n] + grid.node(t - 1, n)[BLANK_ID];
            }
            if n > 0 {
                acc = log_add(acc, alpha[t * cols + n - 1] + grid.node(t, n - 1)[w[n - 1]]);
            }
            alpha[t * cols + n] = acc;
        }
    }
    alpha
}

/// Loss plus exact gradients via the backward variables.
pub fn rnnt_loss_with_grad(grid: &JointGrid, w: &TokenSequence) -> Result<RnntLossResult> {
    grid.check_target(w)?;
    let (frames, tokens, vocab) = (grid.frames, grid.tokens, grid.vocab);
    let cols = tokens + 1;
    let alpha = forward(grid, w);
    let mut beta = vec![LOG_ZERO; (frames + 1) * cols];
    beta[frames * cols + tokens] = 0.0;
    for t in (0..=frames).rev() {
        for n in (0..=tokens).rev() {
            if t == frames && n == tokens {
                continue;
            }
            let mut acc = LOG_ZERO;
            if t < frames {
                acc = grid.node(t, n)[BLANK_ID] + beta[(t + 1) * cols + n];
            }
            if n < tokens {
                acc = log_add(acc, grid.node(t, n)[w[n]] + beta[t * cols + n + 1]);
            }
            beta[t * cols + n] = acc;
        }
    }
    let log_z = alpha[frames * cols + tokens];
    let mut grad_log_probs = vec![0.0; grid.data.len()];
    if log_z != LOG_ZERO {
        for t in 0..=frames {
            for n in 0..=tokens {
                let base = grid.node_index(t, n);
                let a = alpha[t * cols + n];
                if t < frames {
                    let occ = (a + grid.data[base + BLANK_ID] + beta[(t + 1) * cols + n] - log_z).exp();
                    grad_log_probs[base + BLANK_ID] -= occ;
                }
                if n < tokens {
                    let k = w[n];
                    let occ = (a + grid.data[base + k] + beta[t * cols + n + 1] - log_z).exp();
                    grad_log_probs[base + k] -= occ;
                }
            }
        }
    }
    let mut grad_logits = vec![0.0; grid.data.len()];
    for (node, (g_in, g_out)) in grid
        .data
        .chunks(vocab)
        .zip(grad_log_probs.chunks(vocab).zip(grad_logits.chunks_mut(vocab)))
    {
        let total: f64 = g_in.iter().sum();
        for k in 0..vocab {
            g_out[k] = g_in[k] - node[k].exp() * total;
        }
    }
    Ok(RnntLossResult {
        loss: -log_z,
        grad_log_probs,
        grad_logits,
    })
}

/// Supplies the output distribution for frame `t` after emitting `history`.
pub trait JointProvider {
    fn log_probs(&mut self, frame: usize, history: &[TokenId]) -> Vec<f64>;
}

impl<F> JointProvider for F
where
    F: FnMut(usize, &[TokenId]) -> Vec<f64>,
{
    fn log_probs(&mut self, frame: usize, history: &[TokenId]) -> Vec<f64> {
        self(frame, history)
    }
}

/// Greedy decoding: at each frame keep emitting the argmax token until the
/// argmax is blank or `max_tokens` emissions have been made, then advance.
pub fn rnnt_greedy_decode<P: JointProvider>(
    provider: &mut P,
    t_frames: usize,
    max_tokens: usize,
) -> TokenSequence {
    let mut out: Vec<TokenId> = Vec::new();
    for t in 0..t_frames {
        for _ in 0..max_tokens {
            let best = argmax_excluding_mask(&provider.log_probs(t, &out));
            if best == BLANK_ID {
                break;
            }
            out.push(best);
        }
    }
    TokenSequence::new(out).expect("argmax excludes specials other than blank")
}

/// All interleavings of `t_frames` blanks with the tokens of `w`.
pub fn enumerate_rnnt_paths(w: &TokenSequence, t_frames: usize) -> Result<Vec<RnntAlignment>> {
    let len = t_frames + w.len();
    if len > MAX_ORACLE_PATH_LEN {
        return Err(Error::OracleTooLarge(format!(
            "T+N={len} exceeds {MAX_ORACLE_PATH_LEN}"
        )));
    }
    let mut out = Vec::new();
    for bits in 0u32..(1u32 << len) {
        if bits.count_ones() as usize != w.len() {
            continue;
        }
        let mut ids = Vec::with_capacity(len);
        let mut n = 0;
        for u in 0..len {
            if bits >> u & 1 == 1 {
                ids.push(w[n]);
                n += 1;
            } else {
                ids.push(BLANK_ID);
            }
        }
        out.push(RnntAlignment::new(ids, t_frames)?);
    }
    Ok(out)
}

/// Probability of one explicit path, walking the lattice node by node.
pub fn rnnt_path_log_prob(grid: &JointGrid, z: &RnntAlignment) -> f64 {
    let (mut t, mut n) = (0, 0);
    let mut lp = 0.0;
    for &id in z.ids() {
        lp += grid.node(t, n)[id];
        if id == BLANK_ID {
            t += 1;
        } else {
            n += 1;
        }
    }
    lp
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(ids: &[usize]) -> TokenSequence {
        TokenSequence::new(ids.to_vec()).unwrap()
    }

    /// Columns {blank, mask, a}; `p_tok` on a, rest on blank.
    fn constant_grid(frames: usize, tokens: usize, p_tok: f64) -> JointGrid {
        JointGrid::from_node_probs(frames, tokens, 3, |_, _| vec![1.0 - p_tok, 0.0, p_tok]).unwrap()
    }

    #[test]
    fn one_frame_one_token() {
        let loss = rnnt_loss(&constant_grid(1, 1, 0.4), &seq(&[2])).unwrap();
        assert!((loss - -(0.48f64.ln())).abs() < 1e-12);
        assert!((loss - 0.73397).abs() < 1e-5);
    }

    #[test]
    fn empty_target_all_blank() {
        let grid = JointGrid::from_node_probs(4, 0, 3, |_, _| vec![1.0, 0.0, 0.0]).unwrap();
        assert!(rnnt_loss(&grid, &TokenSequence::empty()).unwrap().abs() < 1e-15);
    }

    #[test]
    fn two_frames_one_token() {
        let loss = rnnt_loss(&constant_grid(2, 1, 0.5), &seq(&[2])).unwrap();
        assert!((loss - -(0.375f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        assert!(matches!(
            rnnt_loss(&constant_grid(2, 1, 0.5), &seq(&[2, 2])),
            Err(Error::Shape(_))
        ));
        assert!(JointGrid::from_log_probs(1, 1, 3, vec![0.0; 5]).is_err());
    }

    #[test]
    fn path_counts_are_binomial() {
        assert_eq!(enumerate_rnnt_paths(&seq(&[2]), 1).unwrap().len(), 2);
        assert_eq!(enumerate_rnnt_paths(&seq(&[2]), 2).unwrap().len(), 3);
        assert_eq!(enumerate_rnnt_paths(&seq(&[2, 3]), 3).unwrap().len(), 10);
        assert!(matches!(
            enumerate_rnnt_paths(&seq(&[2, 3, 2]), 10),
            Err(Error::OracleTooLarge(_))
        ));
    }

    #[test]
    fn greedy_all_blank() {
        let mut p = |_: usize, _: &[TokenId]| vec![0.0, f64::NEG_INFINITY, -5.0];
        assert!(rnnt_greedy_decode(&mut p, 4, 5).is_empty());
    }

    #[test]
    fn greedy_single_emission() {
        let mut p = |t: usize, h: &[TokenId]| {
            if t == 0 && h.is_empty() {
                vec![-2.0, f64::NEG_INFINITY, -0.1]
            } else {
                vec![-0.1, f64::NEG_INFINITY, -2.0]
            }
        };
        assert_eq!(rnnt_greedy_decode(&mut p, 3, 5).ids(), &[2]);
    }

    #[test]
    fn greedy_respects_cap() {
        let mut p = |_: usize, _: &[TokenId]| vec![-3.0, f64::NEG_INFINITY, -0.01];
        assert_eq!(rnnt_greedy_decode(&mut p, 3, 5).len(), 15);
        assert_eq!(rnnt_greedy_decode(&mut p, 2, 1).len(), 2);
    }

    #[test]
    fn gradient_sums_match_path_count_identity() {
        // Total blank occupation on any path is exactly T, tokens exactly N.
        let grid = constant_grid(3, 2, 0.3);
        let r = rnnt_loss_with_grad(&grid, &seq(&[2, 2])).unwrap();
        let blank: f64 = r.grad_log_probs.iter().step_by(3).sum();
        let tok: f64 = r.grad_log_probs.iter().skip(2).step_by(3).sum();
        assert!((blank + 3.0).abs() < 1e-12);
        assert!((tok + 2.0).abs() < 1e-12);
    }
}
