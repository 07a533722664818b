use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_heads(what: &str, dim: usize, heads: usize) -> Result<()> {
    if heads == 0 || dim == 0 || dim % heads != 0 {
        return Err(Error::Config(format!(
            "{what}: model_dim {dim} not divisible by heads {heads}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioEncoderConfig {
    pub input_dim: usize,
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub feedforward_dim: usize,
    /// Zero-based block index whose output feeds the intermediate head.
    pub tap_layer: usize,
}

impl AudioEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        check_heads("audio encoder", self.model_dim, self.heads)?;
        if self.layers == 0 || self.tap_layer >= self.layers {
            return Err(Error::Config(format!(
                "audio encoder: tap layer {} must be < layer count {}",
                self.tap_layer, self.layers
            )));
        }
        if self.input_dim == 0 {
            return Err(Error::Config("audio encoder: input_dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub feedforward_dim: usize,
    /// Width of the contextual embedder's output.
    pub bert_dim: usize,
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        check_heads("fusion", self.model_dim, self.heads)?;
        if self.layers == 0 || self.bert_dim == 0 {
            return Err(Error::Config("fusion: layers and bert_dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmConfig {
    pub vocab: usize,
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub feedforward_dim: usize,
}

impl MlmConfig {
    pub fn validate(&self) -> Result<()> {
        check_heads("mlm", self.model_dim, self.heads)?;
        if self.layers == 0 || self.vocab < 3 {
            return Err(Error::Config("mlm: need layers > 0 and a vocabulary".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnntConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub joint_dim: usize,
    #[serde(default = "default_symbols_per_frame")]
    pub max_symbols_per_frame: usize,
}

fn default_symbols_per_frame() -> usize {
    bertctc_core::rnnt::DEFAULT_MAX_SYMBOLS_PER_FRAME
}

/// λ weights of the loss compositions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub ctc: f64,
    pub inter: f64,
    pub slu: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ctc: 0.3,
            inter: 0.5,
            slu: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_ctc", self.ctc), ("lambda_ic", self.inter), ("lambda_slu", self.slu)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name}={v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn hierarchical(&self) -> bertctc_core::HierarchicalWeights {
        bertctc_core::HierarchicalWeights {
            ctc: self.ctc,
            inter: self.inter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Ctc,
    Rnnt,
    Bertctc,
    BertctcSlu,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Ctc => "ctc",
            Family::Rnnt => "rnnt",
            Family::Bertctc => "bertctc",
            Family::BertctcSlu => "bertctc-slu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ctc" => Ok(Family::Ctc),
            "rnnt" => Ok(Family::Rnnt),
            "bertctc" => Ok(Family::Bertctc),
            "bertctc-slu" => Ok(Family::BertctcSlu),
            other => Err(Error::Config(format!("unknown model family {other:?}"))),
        }
    }

    pub fn uses_fusion(self) -> bool {
        matches!(self, Family::Bertctc | Family::BertctcSlu)
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: Family,
    /// Main vocabulary size including blank and mask.
    pub vocab: usize,
    /// Auxiliary (small) vocabulary size including blank and mask.
    pub small_vocab: usize,
    pub encoder: AudioEncoderConfig,
    #[serde(default)]
    pub fusion: Option<FusionConfig>,
    #[serde(default)]
    pub rnnt: Option<RnntConfig>,
    /// Number of intent labels; required for the SLU family.
    #[serde(default)]
    pub intents: Option<usize>,
    #[serde(default)]
    pub weights: LossWeights,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.weights.validate()?;
        if self.vocab < 3 || self.small_vocab < 3 {
            return Err(Error::Config("vocabularies need at least one regular token".into()));
        }
        match self.family {
            Family::Ctc => {}
            Family::Rnnt => {
                if self.rnnt.is_none() {
                    return Err(Error::Config("rnnt family needs an rnnt section".into()));
                }
            }
            Family::Bertctc | Family::BertctcSlu => {
                self.fusion
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("{} family needs a fusion section", self.family)))?
                    .validate()?;
            }
        }
        if self.family == Family::BertctcSlu && !matches!(self.intents, Some(n) if n >= 2) {
            return Err(Error::Config("bertctc-slu family needs intents >= 2".into()));
        }
        Ok(())
    }
}
