//! Self-attention over the concatenated `[audio frames][summary][tokens]`
//! sequence.

use bertctc_autodiff::{ParamStore, Tape, Tensor, Value};
use bertctc_core::FramePosteriors;
use rand::Rng;

use crate::config::FusionConfig;
use crate::error::{Error, Result};
use crate::nn::{log_softmax_rows, sinusoidal, LayerNorm, Linear, Params, TransformerBlock};

const AUDIO_STREAM: usize = 0;
const TOKEN_STREAM: usize = 1;

#[derive(Debug, Clone)]
pub struct Fusion {
    pub config: FusionConfig,
    audio_dim: usize,
    audio_proj: Linear,
    bert_proj: Linear,
    summary: String,
    stream_type: String,
    blocks: Vec<TransformerBlock>,
    ln_out: LayerNorm,
    out: Linear,
    intent: Option<Linear>,
}

/// Tape handles produced by one fusion pass.
pub struct FusionNodes {
    /// `T × |V|` frame logits (fused positions `0..T`).
    pub frame_logits: Value,
    /// `1 × |Y|` intent logits read at fused position `T`.
    pub summary_logits: Option<Value>,
    /// Attention node of every block.
    pub attention: Vec<Value>,
    pub frames: usize,
    pub tokens: usize,
}

/// Concrete values of a fusion pass.
#[derive(Debug, Clone)]
pub struct FusedPosteriorOutput {
    pub frame_log_probs: FramePosteriors,
    pub summary_logits: Option<Vec<f64>>,
    /// `attention_maps[layer][head]` is `(T+N+1) × (T+N+1)`.
    pub attention_maps: Vec<Vec<Tensor>>,
}

impl Fusion {
    pub fn new(config: FusionConfig, audio_dim: usize, vocab: usize, intents: Option<usize>) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        Ok(Self {
            audio_dim,
            audio_proj: Linear::new("fusion.audio_proj", audio_dim, d),
            bert_proj: Linear::new("fusion.bert_proj", config.bert_dim, d),
            summary: "fusion.summary".into(),
            stream_type: "fusion.stream_type".into(),
            blocks: (0..config.layers)
                .map(|i| TransformerBlock::new(&format!("fusion.block{i}"), d, config.heads, config.feedforward_dim))
                .collect(),
            ln_out: LayerNorm::new("fusion.ln_out", d),
            out: Linear::new("fusion.out", d, vocab),
            intent: intents.map(|y| Linear::new("fusion.intent", d, y)),
            config,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let d = self.config.model_dim;
        self.audio_proj.init(store, rng)?;
        self.bert_proj.init_scaled(store, rng, 4.0)?;
        store.insert(self.summary.clone(), Tensor::randn(1, d, 0.5, rng))?;
        store.insert(self.stream_type.clone(), Tensor::randn(2, d, 0.5, rng))?;
        for b in &self.blocks {
            b.init(store, rng)?;
        }
        self.ln_out.init(store)?;
        self.out.init_scaled(store, rng, 0.5)?;
        if let Some(l) = &self.intent {
            l.init_scaled(store, rng, 0.5)?;
        }
        Ok(())
    }

    pub fn has_intent_head(&self) -> bool {
        self.intent.is_some()
    }

    /// Fuses `h_ae` (`T × d_ae`) with `h_bert` (`N × d_bert`).
    pub fn forward(&self, tape: &Tape, ps: Params, h_ae: Value, h_bert: Value) -> Result<FusionNodes> {
        let [frames, da] = tape.shape(h_ae);
        let [tokens, db] = tape.shape(h_bert);
        if da != self.audio_dim || db != self.config.bert_dim || frames == 0 {
            return Err(Error::Contract(format!(
                "fusion expects audio {}-dim and bert {}-dim streams, got {frames}x{da} and {tokens}x{db}",
                self.audio_dim, self.config.bert_dim
            )));
        }
        let d = self.config.model_dim;
        let types = ps.get(tape, &self.stream_type)?;

        let audio = self.audio_proj.forward(tape, ps, h_ae)?;
        let audio = tape.add(audio, tape.constant(sinusoidal(frames, d)))?;
        let audio = tape.add(audio, tape.gather_rows(types, &vec![AUDIO_STREAM; frames])?)?;

        let summary = ps.get(tape, &self.summary)?;
        let token_stream = if tokens > 0 {
            let t = self.bert_proj.forward(tape, ps, h_bert)?;
            tape.concat_rows(&[summary, t])?
        } else {
            summary
        };
        let token_stream = tape.add(token_stream, tape.constant(sinusoidal(tokens + 1, d)))?;
        let token_stream = tape.add(token_stream, tape.gather_rows(types, &vec![TOKEN_STREAM; tokens + 1])?)?;

        let mut h = tape.concat_rows(&[audio, token_stream])?;
        let mut attention = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let o = b.forward(tape, ps, h, None)?;
            h = o.hidden;
            attention.push(o.attention);
        }
        let h = self.ln_out.forward(tape, ps, h)?;
        let frame_h = tape.slice_rows(h, 0, frames)?;
        let frame_logits = self.out.forward(tape, ps, frame_h)?;
        let summary_logits = match &self.intent {
            Some(l) => {
                let s = tape.slice_rows(h, frames, 1)?;
                Some(l.forward(tape, ps, s)?)
            }
            None => None,
        };
        Ok(FusionNodes {
            frame_logits,
            summary_logits,
            attention,
            frames,
            tokens,
        })
    }

    /// Reads the concrete outputs of a finished fusion pass.
    pub fn collect(tape: &Tape, nodes: &FusionNodes) -> Result<FusedPosteriorOutput> {
        let logits = tape.value(nodes.frame_logits);
        let frame_log_probs =
            FramePosteriors::from_log_probs(logits.rows(), logits.cols(), log_softmax_rows(&logits))?;
        drop(logits);
        Ok(FusedPosteriorOutput {
            frame_log_probs,
            summary_logits: nodes.summary_logits.map(|v| tape.tensor(v).into_data()),
            attention_maps: nodes
                .attention
                .iter()
                .map(|&a| tape.attention_weights(a).expect("attention node"))
                .collect(),
        })
    }
}
