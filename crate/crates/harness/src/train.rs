//! Fixed-budget SGD training for the ASR families and the toy MLM.
//!
//! Every step draws its minibatch and masks from its own RNG stream derived
//! from `(seed, step)`, so a run resumed from a checkpoint at step `s`
//! replays exactly what an uninterrupted run would have done.

use std::collections::BTreeMap;

use bertctc_autodiff::{Gradients, ParamStore, Sgd, Tape};
use bertctc_core::{sample_training_mask, TokenSequence};
use bertctc_model::{AsrModel, LossOutcome, ToyMlm};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::Example;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub clip_norm: Option<f64>,
    /// Linear warm-up length in steps.
    #[serde(default)]
    pub warmup_steps: usize,
    /// Learning rate at the last step as a fraction of `lr` (linear decay
    /// after warm-up); 1.0 keeps it constant.
    #[serde(default = "one")]
    pub final_lr_fraction: f64,
}

fn one() -> f64 {
    1.0
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::Config("final_lr_fraction outside [0, 1]".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate used at 0-based `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let frac = ((step - self.warmup_steps) as f64 / span).min(1.0);
        self.lr * (1.0 - frac * (1.0 - self.final_lr_fraction))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub main: Option<f64>,
    pub final_ctc: Option<f64>,
    pub inter_ctc: Option<f64>,
    pub intent: Option<f64>,
    pub grad_norm: f64,
    pub lr: f64,
    /// Minibatch members whose targets did not fit their frame count.
    pub skipped: usize,
}

/// Optimizer state that, together with the parameters, fully determines the
/// rest of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub seed: u64,
    pub step: usize,
    pub velocity: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub seed: u64,
    pub step: usize,
    opt: Sgd,
}

/// RNG stream for one training step.
pub fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    rng
}

fn mean_of(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

impl Trainer {
    pub fn new(config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut opt = Sgd::new(config.lr).with_momentum(config.momentum);
        if let Some(c) = config.clip_norm {
            opt = opt.with_clip_norm(c);
        }
        Ok(Self {
            config,
            seed,
            step: 0,
            opt,
        })
    }

    pub fn resume(config: TrainConfig, state: TrainerState) -> Result<Self> {
        let mut t = Self::new(config, state.seed)?;
        t.step = state.step;
        t.opt.set_velocity(state.velocity);
        Ok(t)
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            seed: self.seed,
            step: self.step,
            velocity: self.opt.velocity().clone(),
        }
    }

    pub fn finished(&self) -> bool {
        self.step >= self.config.steps
    }

    fn apply(&mut self, params: &mut ParamStore, grads: &mut Gradients, count: usize) -> Result<(f64, f64)> {
        let lr = self.config.lr_at(self.step);
        grads.scale(1.0 / count.max(1) as f64);
        self.opt.lr = lr;
        let norm = self.opt.step(params, grads).map_err(|e| match e {
            bertctc_autodiff::Error::NonFiniteGradient { name } => Error::Diverged {
                step: self.step,
                detail: format!("non-finite gradient for parameter {name:?}"),
            },
            other => other.into(),
        })?;
        Ok((norm, lr))
    }

    /// One minibatch update of an ASR model.
    pub fn step_asr(&mut self, model: &mut AsrModel, data: &[Example]) -> Result<StepRecord> {
        if data.is_empty() {
            return Err(Error::Contract("training set is empty".into()));
        }
        let mut rng = step_rng(self.seed, self.step);
        let mut grads = Gradients::default();
        let (mut total, mut main, mut fin, mut inter, mut intent) = (vec![], vec![], vec![], vec![], vec![]);
        let mut skipped = 0;
        for _ in 0..self.config.batch_size {
            let ex = &data[rng.random_range(0..data.len())];
            match model.loss(&ex.utterance, &mut rng)? {
                LossOutcome::Skipped { .. } => skipped += 1,
                LossOutcome::Computed { terms, grads: g } => {
                    if !terms.total.is_finite() {
                        return Err(Error::Diverged {
                            step: self.step,
                            detail: format!("loss {} on utterance {}", terms.total, ex.id),
                        });
                    }
                    total.push(terms.total);
                    main.extend(terms.main);
                    fin.extend(terms.final_ctc);
                    inter.extend(terms.inter_ctc);
                    intent.extend(terms.intent);
                    grads.accumulate(&g);
                }
            }
        }
        let (grad_norm, lr) = if total.is_empty() {
            (0.0, self.config.lr_at(self.step))
        } else {
            self.apply(&mut model.params, &mut grads, total.len())?
        };
        let rec = StepRecord {
            step: self.step,
            loss: mean_of(&total).unwrap_or(f64::NAN),
            main: mean_of(&main),
            final_ctc: mean_of(&fin),
            inter_ctc: mean_of(&inter),
            intent: mean_of(&intent),
            grad_norm,
            lr,
            skipped,
        };
        self.step += 1;
        Ok(rec)
    }

    /// One minibatch update of the MLM: random masking, cross-entropy on
    /// every position.
    pub fn step_mlm(&mut self, mlm: &mut ToyMlm, corpus: &[TokenSequence]) -> Result<StepRecord> {
        if corpus.is_empty() {
            return Err(Error::Contract("text corpus is empty".into()));
        }
        let mut rng = step_rng(self.seed, self.step);
        let mut grads = Gradients::default();
        let mut losses = Vec::new();
        for _ in 0..self.config.batch_size {
            let w = &corpus[rng.random_range(0..corpus.len())];
            if w.is_empty() {
                continue;
            }
            let masked = sample_training_mask(w, &mut rng)?;
            let tape = Tape::new();
            let loss = mlm.loss(&tape, &masked, w)?;
            let l = tape.scalar(loss);
            if !l.is_finite() {
                return Err(Error::Diverged {
                    step: self.step,
                    detail: format!("mlm loss {l}"),
                });
            }
            losses.push(l);
            grads.accumulate(&tape.backward(loss)?);
        }
        let (grad_norm, lr) = self.apply(&mut mlm.params, &mut grads, losses.len())?;
        let rec = StepRecord {
            step: self.step,
            loss: mean_of(&losses).unwrap_or(f64::NAN),
            grad_norm,
            lr,
            ..StepRecord::default()
        };
        self.step += 1;
        Ok(rec)
    }
}

/// Trains until the step budget is exhausted, calling `on_step` after each
/// update.
pub fn train_asr(
    trainer: &mut Trainer,
    model: &mut AsrModel,
    data: &[Example],
    mut on_step: impl FnMut(&StepRecord, &AsrModel, &Trainer) -> Result<()>,
) -> Result<Vec<StepRecord>> {
    let mut out = Vec::new();
    while !trainer.finished() {
        let rec = trainer.step_asr(model, data)?;
        on_step(&rec, model, trainer)?;
        out.push(rec);
    }
    Ok(out)
}

pub fn train_mlm(
    trainer: &mut Trainer,
    mlm: &mut ToyMlm,
    corpus: &[TokenSequence],
    mut on_step: impl FnMut(&StepRecord) -> Result<()>,
) -> Result<Vec<StepRecord>> {
    let mut out = Vec::new();
    while !trainer.finished() {
        let rec = trainer.step_mlm(mlm, corpus)?;
        on_step(&rec)?;
        out.push(rec);
    }
    Ok(out)
}

/// Writes a loss curve as CSV.
pub fn write_loss_csv<W: std::io::Write>(records: &[StepRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("loss csv", e))?;
    Ok(())
}
