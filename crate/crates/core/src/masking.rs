//! Mask-sequence algebra for mask-predict training and inference.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::posteriors::FramePosteriors;
use crate::vocab::{Alignment, TokenId, TokenSequence, BLANK_ID, MASK_ID};

/// A target sequence in which some positions are replaced by `[MASK]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct MaskedSequence {
    ids: Vec<TokenId>,
}

impl MaskedSequence {
    pub fn new(ids: Vec<TokenId>) -> Result<Self> {
        if ids.contains(&BLANK_ID) {
            return Err(Error::InvalidSequence("blank in masked sequence".into()));
        }
        Ok(Self { ids })
    }

    pub fn observed_all(w: &TokenSequence) -> Self {
        Self { ids: w.to_vec() }
    }

    pub fn all_masked(len: usize) -> Self {
        Self {
            ids: vec![MASK_ID; len],
        }
    }

    /// Masks `positions` of `w`.
    pub fn with_masks(w: &TokenSequence, positions: &[usize]) -> Result<Self> {
        let mut ids = w.to_vec();
        for &p in positions {
            let slot = ids
                .get_mut(p)
                .ok_or_else(|| Error::Contract(format!("mask position {p} out of range")))?;
            *slot = MASK_ID;
        }
        Ok(Self { ids })
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn is_observed(&self, n: usize) -> bool {
        self.ids[n] != MASK_ID
    }

    pub fn observed(&self) -> Vec<bool> {
        self.ids.iter().map(|&id| id != MASK_ID).collect()
    }

    pub fn masked_positions(&self) -> Vec<usize> {
        (0..self.ids.len()).filter(|&n| !self.is_observed(n)).collect()
    }

    pub fn mask_count(&self) -> usize {
        self.ids.iter().filter(|&&id| id == MASK_ID).count()
    }
}

/// Per-token confidence scores for a collapsed hypothesis.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfidenceVector(pub Vec<f64>);

impl ConfidenceVector {
    pub fn scores(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Draws `M ~ Uniform{1..N}` then masks a uniformly random `M`-subset.
pub fn sample_training_mask<R: Rng + ?Sized>(w: &TokenSequence, rng: &mut R) -> Result<MaskedSequence> {
    let n = w.len();
    if n == 0 {
        return Err(Error::Contract("cannot sample a mask for an empty target".into()));
    }
    let m = rng.random_range(1..=n);
    let positions = index::sample(rng, n, m).into_vec();
    MaskedSequence::with_masks(w, &positions)
}

/// Linear decay `⌊len · (K − k) / K⌋` for iteration `k ∈ 1..=K`.
pub fn decay_count(hyp_len: usize, iterations: usize, k: usize) -> Result<usize> {
    if iterations == 0 || k == 0 || k > iterations {
        return Err(Error::Contract(format!(
            "iteration k={k} outside 1..={iterations}"
        )));
    }
    Ok(hyp_len * (iterations - k) / iterations)
}

/// Collapses `alignment` and scores each emitted token with the maximum
/// frame probability of that token over the frames that produced it.
///
/// A new token starts at a non-blank frame following a blank (or the start)
/// or following a different non-blank token; repeated frames of the same
/// token keep the running maximum.
pub fn token_confidences(
    alignment: &Alignment,
    post: &FramePosteriors,
) -> Result<(TokenSequence, ConfidenceVector)> {
    if alignment.frames() != post.frames() {
        return Err(Error::Shape(format!(
            "alignment has {} frames, posteriors have {}",
            alignment.frames(),
            post.frames()
        )));
    }
    let mut tokens = Vec::new();
    let mut scores: Vec<f64> = Vec::new();
    let mut prev = BLANK_ID;
    for (t, &id) in alignment.ids().iter().enumerate() {
        if id != BLANK_ID {
            let p = post.get(t, id).exp();
            if id != prev {
                tokens.push(id);
                scores.push(p);
            } else if let Some(last) = scores.last_mut() {
                *last = last.max(p);
            }
        }
        prev = id;
    }
    Ok((TokenSequence::new(tokens)?, ConfidenceVector(scores)))
}

/// Positions of the `m` lowest scores; ties go to the earliest position.
pub fn lowest_positions(conf: &ConfidenceVector, m: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..conf.len()).collect();
    order.sort_by(|&a, &b| conf.0[a].total_cmp(&conf.0[b]).then(a.cmp(&b)));
    let mut picked: Vec<usize> = order.into_iter().take(m).collect();
    picked.sort_unstable();
    picked
}

pub fn mask_lowest(hyp: &TokenSequence, conf: &ConfidenceVector, m: usize) -> Result<MaskedSequence> {
    if hyp.len() != conf.len() {
        return Err(Error::Shape(format!(
            "hypothesis has {} tokens, confidences {}",
            hyp.len(),
            conf.len()
        )));
    }
    if m > hyp.len() {
        return Err(Error::Contract(format!(
            "cannot mask {m} of {} tokens",
            hyp.len()
        )));
    }
    MaskedSequence::with_masks(hyp, &lowest_positions(conf, m))
}
