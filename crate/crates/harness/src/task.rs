//! Synthetic speech-like task with homophones whose identity is fixed only
//! by the surrounding words.
//!
//! Every regular token has its own acoustic class. Each homophone pair
//! shares one class, so the two members produce identical clean features;
//! which member is spoken is a fixed random binary function of the previous
//! and next tokens. Features are per-frame class vectors plus Gaussian noise.

use std::sync::Arc;

use bertctc_autodiff::Tensor;
use bertctc_core::{MaskedSequence, TokenId, TokenSequence, Vocabulary, MASK_ID};
use bertctc_model::{ContextRule, Utterance};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// First regular token id (after blank and mask).
const FIRST_REGULAR: TokenId = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub regular_tokens: usize,
    pub homophone_pairs: usize,
    /// Probability that a given pair appears (at most once) in an utterance.
    pub homophone_rate: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub min_frames_per_token: usize,
    pub max_frames_per_token: usize,
    /// Probability of one silence frame after each token.
    pub silence_rate: f64,
    pub feature_dim: usize,
    pub noise: f64,
    /// Number of intent labels, when the task carries an intent rule.
    #[serde(default)]
    pub intents: Option<usize>,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self {
            regular_tokens: 16,
            homophone_pairs: 1,
            homophone_rate: 0.8,
            min_tokens: 4,
            max_tokens: 8,
            min_frames_per_token: 2,
            max_frames_per_token: 4,
            silence_rate: 0.3,
            feature_dim: 16,
            noise: 0.3,
            intents: None,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.regular_tokens < 3 {
            return bad("need at least 3 regular tokens".into());
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return bad(format!("token range {}..={} is empty", self.min_tokens, self.max_tokens));
        }
        if self.min_frames_per_token == 0 || self.min_frames_per_token > self.max_frames_per_token {
            return bad("frames-per-token range is empty".into());
        }
        if !(0.0..=1.0).contains(&self.homophone_rate) || !(0.0..=1.0).contains(&self.silence_rate) {
            return bad("rates must lie in [0, 1]".into());
        }
        if self.feature_dim == 0 || !(self.noise >= 0.0) {
            return bad("feature_dim must be positive and noise non-negative".into());
        }
        // every homophone needs a regular token on both sides and no
        // homophone neighbour: pairs * 2 + 1 <= max_tokens
        if self.homophone_pairs > 0 && 2 * self.homophone_pairs + 1 > self.max_tokens {
            return bad(format!(
                "{} homophone pairs cannot fit in utterances of at most {} tokens",
                self.homophone_pairs, self.max_tokens
            ));
        }
        if let Some(y) = self.intents {
            if y < 2 || y % 2 != 0 {
                return bad(format!("intent count {y} must be even and at least 2"));
            }
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        FIRST_REGULAR + self.regular_tokens + 2 * self.homophone_pairs
    }
}

/// The member-selection rule shared by the generator and the oracle embedder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomophoneRule {
    regular_tokens: usize,
    pairs: usize,
    /// `table[prev * R + next]` is the member index (0 or 1).
    table: Vec<u8>,
}

impl HomophoneRule {
    pub fn is_regular(&self, id: TokenId) -> bool {
        (FIRST_REGULAR..FIRST_REGULAR + self.regular_tokens).contains(&id)
    }

    /// `(pair, member)` of a homophone id.
    pub fn homophone(&self, id: TokenId) -> Option<(usize, usize)> {
        let base = FIRST_REGULAR + self.regular_tokens;
        (base..base + 2 * self.pairs)
            .contains(&id)
            .then(|| ((id - base) / 2, (id - base) % 2))
    }

    pub fn homophone_id(&self, pair: usize, member: usize) -> TokenId {
        FIRST_REGULAR + self.regular_tokens + 2 * pair + member
    }

    /// Member index forced by a regular `(prev, next)` context.
    pub fn member(&self, prev: TokenId, next: TokenId) -> usize {
        let (a, b) = (prev - FIRST_REGULAR, next - FIRST_REGULAR);
        self.table[a * self.regular_tokens + b] as usize
    }
}

impl ContextRule for HomophoneRule {
    fn resolve(&self, masked: &MaskedSequence, pos: usize) -> bertctc_model::Result<Option<Vec<TokenId>>> {
        let v = self.vocab();
        if let Some(&bad) = masked.ids().iter().find(|&&id| id >= v) {
            return Err(bertctc_model::Error::Contract(format!(
                "token {bad} outside the homophone rule's vocabulary of {v}"
            )));
        }
        if pos == 0 || pos + 1 >= masked.len() || masked.ids()[pos] != MASK_ID {
            return Ok(None);
        }
        let (prev, next) = (masked.ids()[pos - 1], masked.ids()[pos + 1]);
        if !self.is_regular(prev) || !self.is_regular(next) {
            return Ok(None);
        }
        let m = self.member(prev, next);
        Ok(Some((0..self.pairs).map(|p| self.homophone_id(p, m)).collect()))
    }

    fn vocab(&self) -> usize {
        FIRST_REGULAR + self.regular_tokens + 2 * self.pairs
    }
}

/// A fully instantiated task: vocabulary, rule tables and acoustic classes.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub spec: SyntheticTaskSpec,
    pub vocab: Vocabulary,
    pub rule: Arc<HomophoneRule>,
    /// One row per acoustic class: regular tokens, then pairs, then silence.
    classes: Tensor,
    /// Per-regular-token bit used by the intent rule.
    intent_bits: Vec<u8>,
}

/// A generated sentence with its homophone bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    pub tokens: TokenSequence,
    /// Positions holding a homophone.
    pub ambiguous: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub utterance: Utterance,
    pub ambiguous: Vec<usize>,
}

fn balanced_bits(n: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut bits: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    bits.shuffle(rng);
    bits
}

impl SyntheticTask {
    /// Instantiates the task's hidden tables from `seed`.
    pub fn new(spec: SyntheticTaskSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a5c_0001);
        let mut names: Vec<String> = (0..spec.regular_tokens).map(|i| format!("w{i:02}")).collect();
        for p in 0..spec.homophone_pairs {
            names.push(format!("h{p}a"));
            names.push(format!("h{p}b"));
        }
        let vocab = Vocabulary::from_regular(names)?;
        let r = spec.regular_tokens;
        let rule = HomophoneRule {
            regular_tokens: r,
            pairs: spec.homophone_pairs,
            table: balanced_bits(r * r, &mut rng),
        };
        let n_classes = r + spec.homophone_pairs + 1;
        let classes = Tensor::randn(n_classes, spec.feature_dim, 1.0, &mut rng);
        let intent_bits = balanced_bits(r, &mut rng);
        Ok(Self {
            spec,
            vocab,
            rule: Arc::new(rule),
            classes,
            intent_bits,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.size()
    }

    fn class_of(&self, id: TokenId) -> usize {
        match self.rule.homophone(id) {
            Some((pair, _)) => self.spec.regular_tokens + pair,
            None => id - FIRST_REGULAR,
        }
    }

    fn silence_class(&self) -> usize {
        self.spec.regular_tokens + self.spec.homophone_pairs
    }

    fn random_regular<R: Rng + ?Sized>(&self, rng: &mut R, avoid: &[TokenId]) -> TokenId {
        loop {
            let id = FIRST_REGULAR + rng.random_range(0..self.spec.regular_tokens);
            if !avoid.contains(&id) {
                return id;
            }
        }
    }

    /// Samples a sentence: regular tokens with no immediate repeats, plus at
    /// most one occurrence of each homophone pair at interior positions
    /// flanked by regular tokens.
    pub fn sample_sentence<R: Rng + ?Sized>(&self, rng: &mut R) -> Sentence {
        let spec = &self.spec;
        let n = rng.random_range(spec.min_tokens..=spec.max_tokens);
        let mut slots: Vec<Option<usize>> = vec![None; n];
        if n >= 3 {
            for pair in 0..spec.homophone_pairs {
                if !rng.random_bool(spec.homophone_rate) {
                    continue;
                }
                let free: Vec<usize> = (1..n - 1)
                    .filter(|&i| slots[i - 1].is_none() && slots[i].is_none() && slots[i + 1].is_none())
                    .collect();
                if let Some(&pos) = free.get(rng.random_range(0..free.len().max(1))) {
                    slots[pos] = Some(pair);
                }
            }
        }
        let mut ids = vec![0; n];
        for i in 0..n {
            if slots[i].is_none() {
                let prev = if i > 0 { vec![ids[i - 1]] } else { vec![] };
                ids[i] = self.random_regular(rng, &prev);
            }
        }
        let mut ambiguous = Vec::new();
        for i in 0..n {
            if let Some(pair) = slots[i] {
                let m = self.rule.member(ids[i - 1], ids[i + 1]);
                ids[i] = self.rule.homophone_id(pair, m);
                ambiguous.push(i);
            }
        }
        Sentence {
            tokens: TokenSequence::new(ids).expect("generated ids are regular"),
            ambiguous,
        }
    }

    /// Intent label: one bit from the first word, one from the first
    /// homophone's member (0 without homophones), spread over the label set.
    pub fn intent_of(&self, sentence: &Sentence) -> Option<usize> {
        let y = self.spec.intents?;
        let first = sentence.tokens[0];
        let a = self.intent_bits[first - FIRST_REGULAR] as usize;
        let b = sentence
            .ambiguous
            .first()
            .and_then(|&p| self.rule.homophone(sentence.tokens[p]))
            .map_or(0, |(_, m)| m);
        Some((2 * a + b) % y)
    }

    /// Renders frame features for a sentence.
    pub fn synthesize<R: Rng + ?Sized>(&self, tokens: &TokenSequence, rng: &mut R) -> Tensor {
        let spec = &self.spec;
        let mut class_seq = Vec::new();
        for &id in tokens.iter() {
            let frames = rng.random_range(spec.min_frames_per_token..=spec.max_frames_per_token);
            class_seq.extend(std::iter::repeat_n(self.class_of(id), frames));
            if rng.random_bool(spec.silence_rate) {
                class_seq.push(self.silence_class());
            }
        }
        if class_seq.is_empty() {
            class_seq.push(self.silence_class());
        }
        let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("finite noise");
        let mut out = Tensor::zeros(class_seq.len(), spec.feature_dim);
        for (t, &c) in class_seq.iter().enumerate() {
            for (x, &base) in out.row_mut(t).iter_mut().zip(self.classes.row(c)) {
                *x = base + if spec.noise > 0.0 { noise.sample(rng) } else { 0.0 };
            }
        }
        out
    }

    pub fn sample_example<R: Rng + ?Sized>(&self, id: String, rng: &mut R) -> Example {
        let sentence = self.sample_sentence(rng);
        let features = self.synthesize(&sentence.tokens, rng);
        Example {
            id,
            utterance: Utterance {
                features,
                w_small: sentence.tokens.clone(),
                intent: self.intent_of(&sentence),
                w: sentence.tokens,
            },
            ambiguous: sentence.ambiguous,
        }
    }

    /// Text-only corpus for language-model pre-training.
    pub fn text_corpus<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Vec<TokenSequence> {
        (0..size).map(|_| self.sample_sentence(rng).tokens).collect()
    }
}
