//! Toy-scale neural components: audio encoder, contextual embedders, the
//! audio/token fusion stack, the transducer baseline, loss assembly for every
//! model family, and mask-predict decoding.

pub mod config;
pub mod decoder;
pub mod embedder;
pub mod encoder;
mod error;
pub mod fusion;
pub mod model;
pub mod nn;
pub mod transducer;

pub use config::{AudioEncoderConfig, Family, FusionConfig, LossWeights, MlmConfig, ModelConfig, RnntConfig};
pub use decoder::{
    decode, decode_ctc_baseline, decode_encoded, decode_rnnt_baseline, estimate_length,
    estimate_length_from_posteriors, predict_intent, DecodeConfig, DecodeOutput, DecodeTrace, MaskPredictModel,
    TraceRecord,
};
pub use embedder::{ContextRule, Embedder, OracleEmbedder, ToyMlm};
pub use error::{Error, Result};
pub use fusion::FusedPosteriorOutput;
pub use model::{AsrModel, EncodedAudio, LossOutcome, LossTerms, Utterance};
