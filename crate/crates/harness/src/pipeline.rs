//! Glue between configs, datasets, models and run directories.
//!
//! A run directory holds `params.json` (parameters), `model.json` (model or
//! MLM config), `trainer.json` (optimizer state and step) and `loss.csv`.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use bertctc_autodiff::ParamStore;
use bertctc_model::{AsrModel, Embedder, Family, ModelConfig, OracleEmbedder, ToyMlm};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{EmbedderKind, ExperimentConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::train::{StepRecord, TrainConfig, Trainer, TrainerState};

pub const MLM_RUN: &str = "mlm";

/// Stream offsets keeping model initialization, training and data apart.
fn stream_id(name: &str) -> u64 {
    match name {
        "ctc" => 11,
        "rnnt" => 12,
        "bertctc" => 13,
        "bertctc-slu" => 14,
        _ => 15,
    }
}

fn init_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(100 + stream_id(name));
    rng
}

fn trainer_seed(seed: u64, name: &str) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ stream_id(name)
}

pub fn oracle_embedder(ds: &Dataset) -> Arc<dyn Embedder> {
    Arc::new(OracleEmbedder::new(ds.task.rule.clone()))
}

pub fn new_mlm(cfg: &ExperimentConfig) -> Result<ToyMlm> {
    Ok(ToyMlm::new(cfg.mlm_config(), &mut init_rng(cfg.seed, MLM_RUN))?)
}

pub fn mlm_trainer(cfg: &ExperimentConfig) -> Result<Trainer> {
    Trainer::new(cfg.mlm_train.clone(), trainer_seed(cfg.seed, MLM_RUN))
}

/// Pre-trains the MLM on the text corpus and returns it frozen.
pub fn train_mlm(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    on_step: impl FnMut(&StepRecord) -> Result<()>,
) -> Result<(ToyMlm, Vec<StepRecord>)> {
    let mut mlm = new_mlm(cfg)?;
    let mut trainer = mlm_trainer(cfg)?;
    let records = crate::train::train_mlm(&mut trainer, &mut mlm, &ds.text, on_step)?;
    Ok((mlm.freeze(), records))
}

pub fn new_model(cfg: &ExperimentConfig, family: Family, embedder: Option<Arc<dyn Embedder>>) -> Result<AsrModel> {
    let mc = cfg.model_config(family);
    let embedder = if family.uses_fusion() { embedder } else { None };
    Ok(AsrModel::new(mc, embedder, &mut init_rng(cfg.seed, family.name()))?)
}

pub fn model_trainer(cfg: &ExperimentConfig, family: Family) -> Result<Trainer> {
    Trainer::new(cfg.train.clone(), trainer_seed(cfg.seed, family.name()))
}

/// Trains one family from scratch for the configured step budget.
pub fn train_model(
    cfg: &ExperimentConfig,
    family: Family,
    ds: &Dataset,
    embedder: Option<Arc<dyn Embedder>>,
    on_step: impl FnMut(&StepRecord, &AsrModel, &Trainer) -> Result<()>,
) -> Result<(AsrModel, Vec<StepRecord>)> {
    let mut model = new_model(cfg, family, embedder)?;
    let mut trainer = model_trainer(cfg, family)?;
    let records = crate::train::train_asr(&mut trainer, &mut model, &ds.train, on_step)?;
    Ok((model, records))
}

/// The embedder a fusion model should use under `cfg`, training the MLM
/// when none is supplied.
pub fn embedder_for(cfg: &ExperimentConfig, ds: &Dataset, mlm: Option<ToyMlm>) -> Result<Arc<dyn Embedder>> {
    Ok(match cfg.embedder {
        EmbedderKind::Oracle => oracle_embedder(ds),
        EmbedderKind::Mlm => match mlm {
            Some(m) => Arc::new(m.freeze()),
            None => Arc::new(train_mlm(cfg, ds, |_| Ok(()))?.0),
        },
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerFile {
    pub config: TrainConfig,
    pub state: TrainerState,
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read(path)?).map_err(|e| Error::Format {
        what: path.display().to_string(),
        detail: e.to_string(),
    })
}

/// Saves parameters, config and optimizer state of a run.
pub fn save_checkpoint<C: Serialize>(
    dir: impl AsRef<Path>,
    config: &C,
    params: &ParamStore,
    trainer: &Trainer,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    params.save(dir.join("params.json"))?;
    write(&dir.join("model.json"), &serde_json::to_string_pretty(config)?)?;
    let tf = TrainerFile {
        config: trainer.config.clone(),
        state: trainer.state(),
    };
    write(&dir.join("trainer.json"), &serde_json::to_string(&tf)?)
}

pub fn load_trainer(dir: impl AsRef<Path>) -> Result<Trainer> {
    let tf: TrainerFile = parse(&dir.as_ref().join("trainer.json"))?;
    Trainer::resume(tf.config, tf.state)
}

pub fn load_model(dir: impl AsRef<Path>, embedder: Option<Arc<dyn Embedder>>) -> Result<AsrModel> {
    let dir = dir.as_ref();
    let mc: ModelConfig = parse(&dir.join("model.json"))?;
    let params = ParamStore::load(dir.join("params.json"))?;
    let embedder = if mc.family.uses_fusion() { embedder } else { None };
    Ok(AsrModel::from_params(mc, params, embedder)?)
}

/// Loads a saved MLM, still trainable.
pub fn load_mlm_params(dir: impl AsRef<Path>) -> Result<ToyMlm> {
    let dir = dir.as_ref();
    let config = parse(&dir.join("model.json"))?;
    let params = ParamStore::load(dir.join("params.json"))?;
    Ok(ToyMlm::from_params(config, params)?)
}

/// Loads a saved MLM frozen, ready to serve as an embedder.
pub fn load_mlm(dir: impl AsRef<Path>) -> Result<ToyMlm> {
    Ok(load_mlm_params(dir)?.freeze())
}

/// Family of a saved model run.
pub fn saved_family(dir: impl AsRef<Path>) -> Result<Family> {
    let mc: ModelConfig = parse(&dir.as_ref().join("model.json"))?;
    Ok(mc.family)
}

/// Appends loss records to `<dir>/loss.csv`, writing the header only when
/// the file is new.
pub fn append_losses(dir: impl AsRef<Path>, records: &[StepRecord]) -> Result<()> {
    let path = dir.as_ref().join("loss.csv");
    let exists = path.exists();
    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}
