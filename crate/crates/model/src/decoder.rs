//! Mask-predict inference: length initialization from the encoder's CTC
//! head, then `K` rounds of predict-all / re-mask-least-confident.

use bertctc_autodiff::Tensor;
use bertctc_core::{
    best_path_decode, decay_count, mask_lowest, token_confidences, FramePosteriors, MaskedSequence, TokenId,
    TokenSequence,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusedPosteriorOutput;
use crate::model::{AsrModel, EncodedAudio};
use crate::nn::argmax;

pub const DEFAULT_ITERATIONS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    /// Number of predict/mask rounds `K`.
    pub iterations: usize,
    /// Record per-iteration hypotheses and mask sets.
    #[serde(default)]
    pub trace: bool,
    /// Stop once the next conditioning sequence equals the current one and
    /// contains no masks (every later round would repeat it exactly).
    #[serde(default)]
    pub early_exit: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            iterations: DEFAULT_ITERATIONS,
            trace: false,
            early_exit: false,
        }
    }
}

impl DecodeConfig {
    pub fn with_iterations(iterations: usize) -> Self {
        Self {
            iterations,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("decode needs at least one iteration".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// 1-based iteration index `k`.
    pub iteration: usize,
    /// Conditioning sequence fed to the embedder (mask id where masked).
    pub input: Vec<TokenId>,
    /// Best-path frame alignment.
    pub alignment: Vec<TokenId>,
    pub hypothesis: Vec<TokenId>,
    pub confidences: Vec<f64>,
    /// Positions of `hypothesis` masked for the next round.
    pub masked_positions: Vec<usize>,
    #[serde(default)]
    pub intent: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub initial_length: usize,
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub hypothesis: TokenSequence,
    /// Intent read at the last iteration, for models with an intent head.
    pub intent: Option<usize>,
    pub trace: Option<DecodeTrace>,
    pub initial_length: usize,
    pub iterations_run: usize,
}

/// What the mask-predict loop needs from a model.
pub trait MaskPredictModel {
    type Encoded;

    fn encode(&self, features: &Tensor) -> Result<Self::Encoded>;

    /// Posteriors used for length initialization.
    fn length_posteriors(&self, enc: &Self::Encoded) -> Result<FramePosteriors>;

    fn fuse(&self, enc: &Self::Encoded, masked: &MaskedSequence) -> Result<FusedPosteriorOutput>;
}

impl MaskPredictModel for AsrModel {
    type Encoded = EncodedAudio;

    fn encode(&self, features: &Tensor) -> Result<EncodedAudio> {
        AsrModel::encode(self, features)
    }

    fn length_posteriors(&self, enc: &EncodedAudio) -> Result<FramePosteriors> {
        self.final_posteriors(enc)
    }

    fn fuse(&self, enc: &EncodedAudio, masked: &MaskedSequence) -> Result<FusedPosteriorOutput> {
        AsrModel::fuse(self, enc, masked)
    }
}

/// Length of the collapsed best path. The auxiliary vocabulary maps
/// one-to-one onto the main one here, so no re-tokenization is needed.
pub fn estimate_length_from_posteriors(post: &FramePosteriors) -> usize {
    best_path_decode(post).1.len()
}

pub fn estimate_length<M: MaskPredictModel>(model: &M, enc: &M::Encoded) -> Result<usize> {
    Ok(estimate_length_from_posteriors(&model.length_posteriors(enc)?))
}

pub fn decode<M: MaskPredictModel>(model: &M, features: &Tensor, cfg: &DecodeConfig) -> Result<DecodeOutput> {
    let enc = model.encode(features)?;
    decode_encoded(model, &enc, cfg)
}

/// The loop proper, starting from already-encoded audio.
pub fn decode_encoded<M: MaskPredictModel>(model: &M, enc: &M::Encoded, cfg: &DecodeConfig) -> Result<DecodeOutput> {
    cfg.validate()?;
    let k_total = cfg.iterations;
    let initial_length = estimate_length(model, enc)?;
    let mut trace = cfg.trace.then(|| DecodeTrace {
        initial_length,
        records: Vec::new(),
    });
    if initial_length == 0 {
        return Ok(DecodeOutput {
            hypothesis: TokenSequence::empty(),
            intent: None,
            trace,
            initial_length,
            iterations_run: 0,
        });
    }

    let mut input = MaskedSequence::all_masked(initial_length);
    let mut hypothesis = TokenSequence::empty();
    let mut intent = None;
    let mut iterations_run = 0;
    for k in 1..=k_total {
        let out = model.fuse(enc, &input)?;
        let (alignment, hyp) = best_path_decode(&out.frame_log_probs);
        let (_, conf) = token_confidences(&alignment, &out.frame_log_probs)?;
        let m = decay_count(hyp.len(), k_total, k)?;
        let next = mask_lowest(&hyp, &conf, m)?;
        intent = out.summary_logits.as_deref().map(argmax);
        iterations_run = k;
        if let Some(tr) = trace.as_mut() {
            tr.records.push(TraceRecord {
                iteration: k,
                input: input.ids().to_vec(),
                alignment: alignment.ids().to_vec(),
                hypothesis: hyp.ids().to_vec(),
                confidences: conf.0.clone(),
                masked_positions: next.masked_positions(),
                intent,
            });
        }
        hypothesis = hyp;
        let fixed_point = next == input && next.mask_count() == 0;
        input = next;
        if cfg.early_exit && fixed_point {
            break;
        }
    }
    Ok(DecodeOutput {
        hypothesis,
        intent,
        trace,
        initial_length,
        iterations_run,
    })
}

/// Joint transcription and intent prediction. When the length estimate is
/// zero the intent comes from a single pass with no token conditioning.
pub fn predict_intent(model: &AsrModel, features: &Tensor, cfg: &DecodeConfig) -> Result<(usize, TokenSequence)> {
    if !model.has_intent_head() {
        return Err(Error::Capability(format!("{} model has no intent head", model.family())));
    }
    let enc = model.encode(features)?;
    let out = decode_encoded(model, &enc, cfg)?;
    let intent = match out.intent {
        Some(i) => i,
        None => {
            let fused = model.fuse(&enc, &MaskedSequence::all_masked(0))?;
            argmax(fused.summary_logits.as_deref().expect("intent head present"))
        }
    };
    Ok((intent, out.hypothesis))
}

pub fn decode_ctc_baseline(model: &AsrModel, features: &Tensor) -> Result<TokenSequence> {
    model.ctc_decode(&model.encode(features)?)
}

pub fn decode_rnnt_baseline(model: &AsrModel, features: &Tensor) -> Result<TokenSequence> {
    model.rnnt_decode(&model.encode(features)?)
}
