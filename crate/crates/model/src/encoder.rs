use bertctc_autodiff::{ParamStore, Tape, Tensor, Value};
use bertctc_core::{ctc_loss, FramePosteriors, TokenSequence};
use rand::Rng;

use crate::config::AudioEncoderConfig;
use crate::error::{Error, Result};
use crate::nn::{log_softmax_rows, sinusoidal, LayerNorm, Linear, Params, TransformerBlock};

/// Stack of pre-norm self-attention blocks over acoustic frames.
#[derive(Debug, Clone)]
pub struct AudioEncoder {
    pub config: AudioEncoderConfig,
    input: Linear,
    blocks: Vec<TransformerBlock>,
}

pub struct EncoderOutput {
    /// Final block output `H^ae`, `T × d`.
    pub hidden: Value,
    /// Output of block `tap_layer`, `T × d`.
    pub tapped: Value,
}

impl AudioEncoder {
    pub fn new(config: AudioEncoderConfig) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        Ok(Self {
            input: Linear::new("enc.input", config.input_dim, d),
            blocks: (0..config.layers)
                .map(|i| TransformerBlock::new(&format!("enc.block{i}"), d, config.heads, config.feedforward_dim))
                .collect(),
            config,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.input.init(store, rng)?;
        for b in &self.blocks {
            b.init(store, rng)?;
        }
        Ok(())
    }

    pub fn forward(&self, tape: &Tape, ps: Params, features: &Tensor) -> Result<EncoderOutput> {
        if features.rows() == 0 {
            return Err(Error::Contract("audio encoder needs at least one frame".into()));
        }
        if features.cols() != self.config.input_dim {
            return Err(Error::Contract(format!(
                "features have dim {}, encoder expects {}",
                features.cols(),
                self.config.input_dim
            )));
        }
        let x = tape.constant(features.clone());
        let x = self.input.forward(tape, ps, x)?;
        let pe = tape.constant(sinusoidal(features.rows(), self.config.model_dim));
        let mut h = tape.add(x, pe)?;
        let mut tapped = None;
        for (i, b) in self.blocks.iter().enumerate() {
            h = b.forward(tape, ps, h, None)?.hidden;
            if i == self.config.tap_layer {
                tapped = Some(h);
            }
        }
        Ok(EncoderOutput {
            hidden: h,
            tapped: tapped.expect("tap layer validated"),
        })
    }
}

/// Layer norm plus a linear projection onto a vocabulary (blank and mask
/// columns included).
#[derive(Debug, Clone)]
pub struct CtcHead {
    ln: LayerNorm,
    proj: Linear,
    pub vocab: usize,
}

impl CtcHead {
    pub fn new(prefix: &str, dim: usize, vocab: usize) -> Self {
        Self {
            ln: LayerNorm::new(&format!("{prefix}.ln"), dim),
            proj: Linear::new(&format!("{prefix}.proj"), dim, vocab),
            vocab,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.ln.init(store)?;
        self.proj.init_scaled(store, rng, 0.5)
    }

    /// Frame logits, `T × vocab`.
    pub fn forward(&self, tape: &Tape, ps: Params, h: Value) -> Result<Value> {
        let h = self.ln.forward(tape, ps, h)?;
        self.proj.forward(tape, ps, h)
    }
}

pub(crate) fn posteriors_of(tape: &Tape, logits: Value) -> Result<FramePosteriors> {
    let t = tape.value(logits);
    Ok(FramePosteriors::from_log_probs(t.rows(), t.cols(), log_softmax_rows(&t))?)
}

/// CTC loss of `target` under `softmax(logits)` recorded on the tape, or
/// `None` when the target cannot be aligned to the frames.
pub(crate) fn ctc_term(tape: &Tape, logits: Value, target: &TokenSequence) -> Result<Option<Value>> {
    let post = posteriors_of(tape, logits)?;
    let res = ctc_loss(&post, target)?;
    if !res.feasible {
        return Ok(None);
    }
    let grad = Tensor::new(res.frames, res.vocab, res.grad_logits)?;
    Ok(Some(tape.external_scalar(res.loss, vec![(logits, grad)])?))
}
