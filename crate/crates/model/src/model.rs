//! The four model families and their training losses.

use std::sync::Arc;

use bertctc_autodiff::{Gradients, ParamStore, Tape, Tensor, Value};
use bertctc_core::{
    best_path_decode, rnnt_greedy_decode, sample_training_mask, FramePosteriors, MaskedSequence, TokenSequence,
};
use rand::{Rng, SeedableRng};

use crate::config::{Family, ModelConfig};
use crate::embedder::Embedder;
use crate::encoder::{ctc_term, posteriors_of, AudioEncoder, CtcHead};
use crate::error::{Error, Result};
use crate::fusion::{FusedPosteriorOutput, Fusion, FusionNodes};
use crate::nn::Params;
use crate::transducer::Transducer;

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    /// `T × D` acoustic features.
    pub features: Tensor,
    /// Target over the main vocabulary.
    pub w: TokenSequence,
    /// Target over the auxiliary vocabulary.
    pub w_small: TokenSequence,
    pub intent: Option<usize>,
}

/// Raw values of the individual loss terms (before weighting). A term is
/// `None` when its weight is zero and it was not computed.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub main: Option<f64>,
    pub final_ctc: Option<f64>,
    pub inter_ctc: Option<f64>,
    pub intent: Option<f64>,
}

#[derive(Debug)]
pub enum LossOutcome {
    Computed { terms: LossTerms, grads: Gradients },
    /// A required CTC target could not be aligned to the available frames.
    Skipped { reason: String },
}

/// Encoder outputs detached from any tape.
#[derive(Debug, Clone)]
pub struct EncodedAudio {
    pub hidden: Tensor,
    pub tapped: Tensor,
}

impl EncodedAudio {
    pub fn frames(&self) -> usize {
        self.hidden.rows()
    }
}

pub struct AsrModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    encoder: AudioEncoder,
    final_head: CtcHead,
    inter_head: CtcHead,
    fusion: Option<Fusion>,
    transducer: Option<Transducer>,
    embedder: Option<Arc<dyn Embedder>>,
}

impl std::fmt::Debug for AsrModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AsrModel")
            .field("family", &self.config.family)
            .field("parameters", &self.params.num_scalars())
            .field("embedder", &self.embedder.as_ref().map(|e| e.kind()))
            .finish()
    }
}

/// Checks that `actual` holds exactly the names and shapes of `reference`.
pub(crate) fn check_layout(reference: &ParamStore, actual: &ParamStore) -> Result<()> {
    for (name, t) in reference.iter() {
        match actual.get(name) {
            None => return Err(Error::Config(format!("checkpoint lacks parameter {name:?}"))),
            Some(a) if a.shape() != t.shape() => {
                return Err(Error::Config(format!(
                    "parameter {name:?} has shape {:?}, expected {:?}",
                    a.shape(),
                    t.shape()
                )))
            }
            _ => {}
        }
    }
    if let Some(extra) = actual.names().find(|n| !reference.contains(n)) {
        return Err(Error::Config(format!("unexpected parameter {extra:?}")));
    }
    Ok(())
}

impl AsrModel {
    /// Builds a freshly initialized model. Fusion families need an embedder
    /// whose width matches the fusion config.
    pub fn new<R: Rng + ?Sized>(
        config: ModelConfig,
        embedder: Option<Arc<dyn Embedder>>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let family = config.family;
        let d = config.encoder.model_dim;
        let final_vocab = if family == Family::Ctc { config.vocab } else { config.small_vocab };
        let encoder = AudioEncoder::new(config.encoder.clone())?;
        let final_head = CtcHead::new("enc.head_final", d, final_vocab);
        let inter_head = CtcHead::new("enc.head_inter", d, config.small_vocab);
        let fusion = match (&config.fusion, family.uses_fusion()) {
            (Some(fc), true) => {
                let intents = if family == Family::BertctcSlu { config.intents } else { None };
                Some(Fusion::new(fc.clone(), d, config.vocab, intents)?)
            }
            _ => None,
        };
        if let Some(f) = &fusion {
            let e = embedder
                .as_ref()
                .ok_or_else(|| Error::Config(format!("{family} family needs a contextual embedder")))?;
            if !e.is_frozen() {
                return Err(Error::Config(format!("{} embedder must be frozen", e.kind())));
            }
            if e.dim() != f.config.bert_dim {
                return Err(Error::Config(format!(
                    "embedder width {} does not match fusion bert_dim {}",
                    e.dim(),
                    f.config.bert_dim
                )));
            }
        }
        let transducer = match (&config.rnnt, family) {
            (Some(rc), Family::Rnnt) => Some(Transducer::new(rc.clone(), d, config.vocab)),
            _ => None,
        };

        let mut params = ParamStore::new();
        encoder.init(&mut params, rng)?;
        final_head.init(&mut params, rng)?;
        inter_head.init(&mut params, rng)?;
        if let Some(f) = &fusion {
            f.init(&mut params, rng)?;
        }
        if let Some(t) = &transducer {
            t.init(&mut params, rng)?;
        }
        Ok(Self {
            config,
            params,
            encoder,
            final_head,
            inter_head,
            fusion,
            transducer,
            embedder: if family.uses_fusion() { embedder } else { None },
        })
    }

    /// Rebuilds a model around stored parameters.
    pub fn from_params(config: ModelConfig, params: ParamStore, embedder: Option<Arc<dyn Embedder>>) -> Result<Self> {
        let mut rng = rand::rngs::StdRng::seed_from_u64(0);
        let reference = Self::new(config, embedder, &mut rng)?;
        check_layout(&reference.params, &params)?;
        Ok(Self { params, ..reference })
    }

    pub fn family(&self) -> Family {
        self.config.family
    }

    pub fn embedder(&self) -> Option<&Arc<dyn Embedder>> {
        self.embedder.as_ref()
    }

    pub fn has_intent_head(&self) -> bool {
        self.fusion.as_ref().is_some_and(Fusion::has_intent_head)
    }

    fn fusion_ref(&self) -> Result<&Fusion> {
        self.fusion
            .as_ref()
            .ok_or_else(|| Error::Capability(format!("{} model has no fusion stack", self.family())))
    }

    fn fuse_on_tape(&self, tape: &Tape, ps: Params, h_ae: Value, masked: &MaskedSequence) -> Result<FusionNodes> {
        let fusion = self.fusion_ref()?;
        let embedder = self.embedder.as_ref().expect("fusion implies embedder");
        let h_bert = embedder.embed(tape, masked)?;
        fusion.forward(tape, ps, h_ae, h_bert)
    }

    /// Training loss with a freshly sampled mask for the fusion families (no
    /// mask is drawn when no fused term is weighted in).
    pub fn loss<R: Rng + ?Sized>(&self, utt: &Utterance, rng: &mut R) -> Result<LossOutcome> {
        let (c_main, _, _) = self.config.weights.hierarchical().coefficients();
        let fused = c_main != 0.0 || (self.family() == Family::BertctcSlu && self.config.weights.slu != 0.0);
        let masked = if self.family().uses_fusion() && fused && !utt.w.is_empty() {
            Some(sample_training_mask(&utt.w, rng)?)
        } else {
            None
        };
        self.loss_with_mask(utt, masked.as_ref())
    }

    /// Training loss with an explicit conditioning mask (fusion families).
    pub fn loss_with_mask(&self, utt: &Utterance, masked: Option<&MaskedSequence>) -> Result<LossOutcome> {
        let family = self.family();
        let weights = self.config.weights;
        let tape = Tape::new();
        let ps = Params::trainable(&self.params);
        let enc = self.encoder.forward(&tape, ps, &utt.features)?;

        let (c_main, c_final, c_inter) = match family {
            Family::Ctc => (0.0, 1.0 - weights.inter, weights.inter),
            _ => weights.hierarchical().coefficients(),
        };
        let final_target = if family == Family::Ctc { &utt.w } else { &utt.w_small };
        let mut terms = LossTerms::default();
        let mut weighted: Vec<(f64, Value)> = Vec::new();
        let skip = |what: &str| {
            Ok(LossOutcome::Skipped {
                reason: format!("{what} target of length {} does not fit {} frames", utt.w.len(), utt.features.rows()),
            })
        };

        if c_final != 0.0 {
            let logits = self.final_head.forward(&tape, ps, enc.hidden)?;
            match ctc_term(&tape, logits, final_target)? {
                Some(v) => {
                    terms.final_ctc = Some(tape.scalar(v));
                    weighted.push((c_final, v));
                }
                None => return skip("final-layer"),
            }
        }
        if c_inter != 0.0 {
            let logits = self.inter_head.forward(&tape, ps, enc.tapped)?;
            match ctc_term(&tape, logits, &utt.w_small)? {
                Some(v) => {
                    terms.inter_ctc = Some(tape.scalar(v));
                    weighted.push((c_inter, v));
                }
                None => return skip("intermediate"),
            }
        }

        let slu = family == Family::BertctcSlu && weights.slu != 0.0;
        match family {
            Family::Rnnt if c_main != 0.0 => {
                let t = self.transducer.as_ref().expect("rnnt family has a transducer");
                let v = t.loss(&tape, ps, enc.hidden, &utt.w)?;
                terms.main = Some(tape.scalar(v));
                weighted.push((c_main, v));
            }
            Family::Bertctc | Family::BertctcSlu if c_main != 0.0 || slu => {
                let masked = masked.ok_or_else(|| Error::Contract("fusion loss needs a masked sequence".into()))?;
                if masked.len() != utt.w.len() {
                    return Err(Error::Contract(format!(
                        "mask of length {} for a target of length {}",
                        masked.len(),
                        utt.w.len()
                    )));
                }
                let nodes = self.fuse_on_tape(&tape, ps, enc.hidden, masked)?;
                if c_main != 0.0 {
                    match ctc_term(&tape, nodes.frame_logits, &utt.w)? {
                        Some(v) => {
                            terms.main = Some(tape.scalar(v));
                            weighted.push((c_main, v));
                        }
                        None => return skip("fused"),
                    }
                }
                if slu {
                    let intent = utt
                        .intent
                        .ok_or_else(|| Error::Contract("slu loss needs an intent label".into()))?;
                    let n = self.config.intents.unwrap_or(0);
                    if intent >= n {
                        return Err(Error::Contract(format!("intent {intent} outside 0..{n}")));
                    }
                    let logits = nodes.summary_logits.expect("slu family has an intent head");
                    let v = tape.cross_entropy(logits, &[intent])?;
                    terms.intent = Some(tape.scalar(v));
                    weighted.push((weights.slu, v));
                }
            }
            _ => {}
        }

        let total = tape.weighted_sum(&weighted)?;
        terms.total = tape.scalar(total);
        let grads = tape.backward(total)?;
        Ok(LossOutcome::Computed { terms, grads })
    }

    /// Runs the audio encoder without recording gradients.
    pub fn encode(&self, features: &Tensor) -> Result<EncodedAudio> {
        let tape = Tape::new();
        let ps = Params::frozen(&self.params);
        let enc = self.encoder.forward(&tape, ps, features)?;
        Ok(EncodedAudio {
            hidden: tape.tensor(enc.hidden),
            tapped: tape.tensor(enc.tapped),
        })
    }

    fn head_posteriors(&self, head: &CtcHead, h: &Tensor) -> Result<FramePosteriors> {
        let tape = Tape::new();
        let x = tape.constant(h.clone());
        let logits = head.forward(&tape, Params::frozen(&self.params), x)?;
        posteriors_of(&tape, logits)
    }

    /// Posteriors of the encoder's final-layer CTC head (main vocabulary for
    /// the CTC family, auxiliary vocabulary otherwise).
    pub fn final_posteriors(&self, enc: &EncodedAudio) -> Result<FramePosteriors> {
        self.head_posteriors(&self.final_head, &enc.hidden)
    }

    /// Posteriors of the intermediate-layer CTC head (auxiliary vocabulary).
    pub fn inter_posteriors(&self, enc: &EncodedAudio) -> Result<FramePosteriors> {
        self.head_posteriors(&self.inter_head, &enc.tapped)
    }

    /// CTC loss of the encoder's final-layer head against its own target.
    pub fn encoder_ctc_loss(&self, utt: &Utterance) -> Result<Option<f64>> {
        let enc = self.encode(&utt.features)?;
        let post = self.final_posteriors(&enc)?;
        let target = if self.family() == Family::Ctc { &utt.w } else { &utt.w_small };
        let res = bertctc_core::ctc_loss(&post, target)?;
        Ok(res.feasible.then_some(res.loss))
    }

    /// One fusion pass conditioned on `masked`.
    pub fn fuse(&self, enc: &EncodedAudio, masked: &MaskedSequence) -> Result<FusedPosteriorOutput> {
        let tape = Tape::new();
        let ps = Params::frozen(&self.params);
        let h_ae = tape.constant(enc.hidden.clone());
        let nodes = self.fuse_on_tape(&tape, ps, h_ae, masked)?;
        Fusion::collect(&tape, &nodes)
    }

    /// Single-pass best-path decoding of the encoder's final CTC head.
    pub fn ctc_decode(&self, enc: &EncodedAudio) -> Result<TokenSequence> {
        Ok(best_path_decode(&self.final_posteriors(enc)?).1)
    }

    /// Greedy transducer decoding with the configured per-frame cap.
    pub fn rnnt_decode(&self, enc: &EncodedAudio) -> Result<TokenSequence> {
        let t = self
            .transducer
            .as_ref()
            .ok_or_else(|| Error::Capability(format!("{} model has no transducer", self.family())))?;
        let ps = Params::frozen(&self.params);
        let mut states: Vec<Vec<f64>> = vec![t.step(ps, None, bertctc_core::BLANK_ID)?];
        let mut failure: Option<Error> = None;
        let mut provider = |frame: usize, history: &[bertctc_core::TokenId]| -> Vec<f64> {
            while states.len() <= history.len() && failure.is_none() {
                let prev = states.last().expect("nonempty").clone();
                match t.step(ps, Some(&prev), history[states.len() - 1]) {
                    Ok(s) => states.push(s),
                    Err(e) => failure = Some(e),
                }
            }
            let fallback = || {
                let mut v = vec![f64::NEG_INFINITY; self.config.vocab];
                v[bertctc_core::BLANK_ID] = 0.0;
                v
            };
            if failure.is_some() {
                return fallback();
            }
            match t.node_log_probs(ps, enc.hidden.row(frame), &states[history.len()]) {
                Ok(v) => v,
                Err(e) => {
                    failure = Some(e);
                    fallback()
                }
            }
        };
        let out = rnnt_greedy_decode(&mut provider, enc.frames(), t.config.max_symbols_per_frame);
        match failure {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }
}
