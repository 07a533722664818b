//! Experiment configuration: one JSON document drives every subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use bertctc_model::{
    AudioEncoderConfig, Family, FusionConfig, LossWeights, MlmConfig, ModelConfig, RnntConfig,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::SyntheticTaskSpec;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    /// Sentences in the text-only corpus used to pre-train the MLM.
    pub text: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub feedforward_dim: usize,
    pub tap_layer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackDims {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub feedforward_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub encoder: EncoderDims,
    pub fusion: StackDims,
    pub mlm: StackDims,
    pub rnnt: RnntConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderKind {
    /// Rule-based one-hot embedder with access to the task's context rule.
    Oracle,
    /// Toy MLM pre-trained on the text corpus, then frozen.
    Mlm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeSettings {
    /// Iterations `K` used by `decode`.
    pub iterations: usize,
    /// Iteration counts swept by `evaluate`.
    pub k_list: Vec<usize>,
    #[serde(default)]
    pub early_exit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub task: SyntheticTaskSpec,
    pub data: DataSizes,
    pub model: ModelDims,
    pub embedder: EmbedderKind,
    pub weights: LossWeights,
    pub train: TrainConfig,
    pub mlm_train: TrainConfig,
    pub decode: DecodeSettings,
    /// Audio-equivalent duration of one feature frame, for RTF.
    pub frame_period_ms: f64,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// The shipped configuration used by the acceptance runs.
    pub fn default_with_seed(seed: u64) -> Self {
        Self {
            seed,
            task: SyntheticTaskSpec {
                regular_tokens: 12,
                homophone_pairs: 1,
                homophone_rate: 0.8,
                min_tokens: 4,
                max_tokens: 8,
                min_frames_per_token: 2,
                max_frames_per_token: 4,
                silence_rate: 0.3,
                feature_dim: 16,
                noise: 0.3,
                intents: Some(4),
            },
            data: DataSizes {
                train: 2000,
                dev: 200,
                test: 200,
                text: 20000,
            },
            model: ModelDims {
                encoder: EncoderDims {
                    layers: 2,
                    model_dim: 32,
                    heads: 2,
                    feedforward_dim: 64,
                    tap_layer: 0,
                },
                fusion: StackDims {
                    layers: 2,
                    model_dim: 32,
                    heads: 2,
                    feedforward_dim: 64,
                },
                mlm: StackDims {
                    layers: 1,
                    model_dim: 32,
                    heads: 2,
                    feedforward_dim: 256,
                },
                rnnt: RnntConfig {
                    embed_dim: 16,
                    hidden_dim: 32,
                    joint_dim: 32,
                    max_symbols_per_frame: bertctc_core::rnnt::DEFAULT_MAX_SYMBOLS_PER_FRAME,
                },
            },
            embedder: EmbedderKind::Mlm,
            weights: LossWeights::default(),
            train: TrainConfig {
                steps: 3000,
                batch_size: 8,
                lr: 0.05,
                momentum: 0.9,
                clip_norm: Some(5.0),
                warmup_steps: 20,
                final_lr_fraction: 0.1,
            },
            mlm_train: TrainConfig {
                steps: 12000,
                batch_size: 16,
                lr: 0.25,
                momentum: 0.9,
                clip_norm: Some(5.0),
                warmup_steps: 20,
                final_lr_fraction: 0.1,
            },
            decode: DecodeSettings {
                iterations: 10,
                k_list: vec![1, 5, 10, 20],
                early_exit: false,
            },
            frame_period_ms: 10.0,
            output_dir: PathBuf::from("runs/default"),
        }
    }

    /// A seconds-scale configuration for smoke tests: tiny data, narrow
    /// models, a few dozen steps.
    pub fn smoke(seed: u64) -> Self {
        let mut c = Self::default_with_seed(seed);
        c.task.regular_tokens = 6;
        c.task.feature_dim = 8;
        c.data = DataSizes {
            train: 40,
            dev: 10,
            test: 10,
            text: 200,
        };
        let narrow = StackDims {
            layers: 1,
            model_dim: 16,
            heads: 2,
            feedforward_dim: 32,
        };
        c.model.encoder = EncoderDims {
            layers: 1,
            model_dim: 16,
            heads: 2,
            feedforward_dim: 32,
            tap_layer: 0,
        };
        c.model.fusion = narrow.clone();
        c.model.mlm = narrow;
        c.model.rnnt.hidden_dim = 16;
        c.model.rnnt.joint_dim = 16;
        c.train.steps = 20;
        c.train.batch_size = 4;
        c.mlm_train.steps = 20;
        c.mlm_train.batch_size = 4;
        c.decode.k_list = vec![1, 3];
        c.decode.iterations = 3;
        c
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Format {
            what: format!("config {}", path.display()),
            detail: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.weights.validate()?;
        self.train.validate()?;
        self.mlm_train.validate()?;
        if self.data.train == 0 {
            return Err(Error::Config("training split is empty".into()));
        }
        if self.decode.iterations == 0 || self.decode.k_list.iter().any(|&k| k == 0) {
            return Err(Error::Config("decode iteration counts must be positive".into()));
        }
        if !(self.frame_period_ms > 0.0) {
            return Err(Error::Config("frame_period_ms must be positive".into()));
        }
        for (name, fam) in [("ctc", Family::Ctc), ("bertctc-slu", Family::BertctcSlu), ("rnnt", Family::Rnnt)] {
            self.model_config(fam)
                .validate()
                .map_err(|e| Error::Config(format!("{name} model: {e}")))?;
        }
        if self.embedder == EmbedderKind::Mlm && self.data.text == 0 {
            return Err(Error::Config("the mlm embedder needs a text corpus".into()));
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.task.vocab_size()
    }

    pub fn mlm_config(&self) -> MlmConfig {
        let m = &self.model.mlm;
        MlmConfig {
            vocab: self.vocab_size(),
            layers: m.layers,
            model_dim: m.model_dim,
            heads: m.heads,
            feedforward_dim: m.feedforward_dim,
        }
    }

    /// Model configuration for one family. The auxiliary vocabulary equals
    /// the main one on the synthetic task.
    pub fn model_config(&self, family: Family) -> ModelConfig {
        let v = self.vocab_size();
        let e = &self.model.encoder;
        let f = &self.model.fusion;
        ModelConfig {
            family,
            vocab: v,
            small_vocab: v,
            encoder: AudioEncoderConfig {
                input_dim: self.task.feature_dim,
                layers: e.layers,
                model_dim: e.model_dim,
                heads: e.heads,
                feedforward_dim: e.feedforward_dim,
                tap_layer: e.tap_layer,
            },
            fusion: family.uses_fusion().then(|| FusionConfig {
                layers: f.layers,
                model_dim: f.model_dim,
                heads: f.heads,
                feedforward_dim: f.feedforward_dim,
                bert_dim: v,
            }),
            rnnt: (family == Family::Rnnt).then(|| self.model.rnnt.clone()),
            intents: if family == Family::BertctcSlu { self.task.intents } else { None },
            weights: self.weights,
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.output_dir.join("data")
    }

    pub fn run_dir(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}
