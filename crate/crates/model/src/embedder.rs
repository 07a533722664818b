//! Contextual embedders: the pluggable stand-in for a pre-trained masked
//! language model. Both implementations emit one `d_bert`-wide row per token
//! position and never receive gradients when frozen.

use std::sync::Arc;

use bertctc_autodiff::{ParamStore, Tape, Tensor, Value};
use bertctc_core::{MaskedSequence, TokenId, TokenSequence, MASK_ID};
use rand::Rng;

use crate::config::MlmConfig;
use crate::error::{Error, Result};
use crate::nn::{sinusoidal, LayerNorm, Linear, Params, TransformerBlock};

pub trait Embedder: Send + Sync {
    /// Output width `d_bert`.
    fn dim(&self) -> usize;

    fn is_frozen(&self) -> bool;

    /// `N × d_bert` embedding of a (partially) masked sequence.
    fn embed(&self, tape: &Tape, masked: &MaskedSequence) -> Result<Value>;

    /// Short identifier used in reports and checkpoints.
    fn kind(&self) -> &'static str;
}

/// A deterministic rule telling which tokens a masked position can hold
/// given the observed context.
pub trait ContextRule: Send + Sync {
    /// Candidate tokens for masked position `pos`, or `None` if the observed
    /// context does not constrain it. Errors on ids outside the rule's domain.
    fn resolve(&self, masked: &MaskedSequence, pos: usize) -> Result<Option<Vec<TokenId>>>;

    /// Vocabulary size (blank and mask included) the rule is defined over.
    fn vocab(&self) -> usize;
}

/// Embeds observed tokens as one-hot rows; a masked position gets the mean
/// of its context-forced candidates' rows, or the mask row when unforced.
pub struct OracleEmbedder {
    rule: Arc<dyn ContextRule>,
}

impl OracleEmbedder {
    pub fn new(rule: Arc<dyn ContextRule>) -> Self {
        Self { rule }
    }

    /// The embedding as a plain tensor.
    pub fn table(&self, masked: &MaskedSequence) -> Result<Tensor> {
        let v = self.rule.vocab();
        if let Some(&bad) = masked.ids().iter().find(|&&id| id >= v) {
            return Err(Error::Contract(format!("token {bad} outside the rule's vocabulary of {v}")));
        }
        let mut t = Tensor::zeros(masked.len(), v);
        for n in 0..masked.len() {
            let row = t.row_mut(n);
            if masked.is_observed(n) {
                row[masked.ids()[n]] = 1.0;
                continue;
            }
            match self.rule.resolve(masked, n)? {
                Some(cands) if !cands.is_empty() => {
                    let w = 1.0 / cands.len() as f64;
                    for c in cands {
                        row[c] += w;
                    }
                }
                _ => row[MASK_ID] = 1.0,
            }
        }
        Ok(t)
    }
}

impl Embedder for OracleEmbedder {
    fn dim(&self) -> usize {
        self.rule.vocab()
    }

    fn is_frozen(&self) -> bool {
        true
    }

    fn embed(&self, tape: &Tape, masked: &MaskedSequence) -> Result<Value> {
        Ok(tape.constant(self.table(masked)?))
    }

    fn kind(&self) -> &'static str {
        "oracle"
    }
}

/// Small transformer masked language model. Its output distribution over
/// the vocabulary serves as the contextual embedding.
#[derive(Debug, Clone)]
pub struct ToyMlm {
    pub config: MlmConfig,
    pub params: ParamStore,
    pub frozen: bool,
    embed_name: String,
    edge_name: String,
    /// Projections of the left and right neighbours' embeddings, added to
    /// each position before the attention stack.
    local_prev: Linear,
    local_next: Linear,
    blocks: Vec<TransformerBlock>,
    ln_out: LayerNorm,
    out: Linear,
}

impl ToyMlm {
    fn layout(config: MlmConfig) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        Ok(Self {
            embed_name: "mlm.embed".into(),
            edge_name: "mlm.edge".into(),
            local_prev: Linear::new("mlm.local.prev", d, d),
            local_next: Linear::new("mlm.local.next", d, d),
            blocks: (0..config.layers)
                .map(|i| TransformerBlock::new(&format!("mlm.block{i}"), d, config.heads, config.feedforward_dim))
                .collect(),
            ln_out: LayerNorm::new("mlm.ln_out", d),
            out: Linear::new("mlm.out", d, config.vocab),
            config,
            params: ParamStore::new(),
            frozen: false,
        })
    }

    pub fn new<R: Rng + ?Sized>(config: MlmConfig, rng: &mut R) -> Result<Self> {
        let mut m = Self::layout(config)?;
        let mut store = ParamStore::new();
        store.insert(
            m.embed_name.clone(),
            Tensor::randn(m.config.vocab, m.config.model_dim, 1.0, rng),
        )?;
        store.insert(m.edge_name.clone(), Tensor::randn(1, m.config.model_dim, 1.0, rng))?;
        m.local_prev.init(&mut store, rng)?;
        m.local_next.init(&mut store, rng)?;
        for b in &m.blocks {
            b.init(&mut store, rng)?;
        }
        m.ln_out.init(&mut store)?;
        m.out.init(&mut store, rng)?;
        m.params = store;
        Ok(m)
    }

    /// Rebuilds a model from stored parameters (checked against the layout).
    pub fn from_params(config: MlmConfig, params: ParamStore) -> Result<Self> {
        let mut rng = <rand::rngs::StdRng as rand::SeedableRng>::seed_from_u64(0);
        let reference = Self::new(config, &mut rng)?;
        crate::model::check_layout(&reference.params, &params)?;
        Ok(Self {
            params,
            ..reference
        })
    }

    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    /// Output logits, `N × vocab`.
    pub fn logits(&self, tape: &Tape, ps: Params, ids: &[TokenId]) -> Result<Value> {
        if let Some(&bad) = ids.iter().find(|&&id| id >= self.config.vocab) {
            return Err(Error::Contract(format!("token {bad} outside mlm vocabulary")));
        }
        let table = ps.get(tape, &self.embed_name)?;
        let n = ids.len();
        let x = tape.gather_rows(table, ids)?;
        // neighbours of position i sit at rows i and i+2 of [edge; x; edge]
        let edge = ps.get(tape, &self.edge_name)?;
        let padded = tape.concat_rows(&[edge, x, edge])?;
        let prev = tape.gather_rows(padded, &(0..n).collect::<Vec<_>>())?;
        let next = tape.gather_rows(padded, &(2..n + 2).collect::<Vec<_>>())?;
        let local = tape.add(self.local_prev.forward(tape, ps, prev)?, self.local_next.forward(tape, ps, next)?)?;
        let pe = tape.constant(sinusoidal(n, self.config.model_dim));
        let mut h = tape.add(tape.add(x, local)?, pe)?;
        for b in &self.blocks {
            h = b.forward(tape, ps, h, None)?.hidden;
        }
        let h = self.ln_out.forward(tape, ps, h)?;
        self.out.forward(tape, ps, h)
    }

    /// Mask-and-predict cross-entropy over every position of one sentence,
    /// with the masks supplied by the caller.
    pub fn loss(&self, tape: &Tape, masked: &MaskedSequence, target: &TokenSequence) -> Result<Value> {
        if masked.len() != target.len() || target.is_empty() {
            return Err(Error::Contract("mlm loss needs a nonempty target matching the mask".into()));
        }
        let logits = self.logits(tape, Params::trainable(&self.params), masked.ids())?;
        Ok(tape.cross_entropy(logits, target.ids())?)
    }

    /// Predicted distribution at every position as a plain tensor.
    pub fn predict(&self, masked: &MaskedSequence) -> Result<Tensor> {
        let tape = Tape::new();
        let v = self.embed(&tape, masked)?;
        Ok(tape.tensor(v))
    }
}

impl Embedder for ToyMlm {
    fn dim(&self) -> usize {
        self.config.vocab
    }

    fn is_frozen(&self) -> bool {
        self.frozen
    }

    fn embed(&self, tape: &Tape, masked: &MaskedSequence) -> Result<Value> {
        if masked.is_empty() {
            return Ok(tape.constant(Tensor::zeros(0, self.config.vocab)));
        }
        let ps = Params {
            store: &self.params,
            frozen: self.frozen,
        };
        let logits = self.logits(tape, ps, masked.ids())?;
        Ok(tape.softmax_lastdim(logits))
    }

    fn kind(&self) -> &'static str {
        "mlm"
    }
}
