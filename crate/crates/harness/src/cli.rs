//! The `bertctc` command line.
//!
//! Exit codes: 0 success, 1 contract/config/IO error, 2 a verification or
//! trace-consistency check failed.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use bertctc_model::{decode_encoded, AsrModel, DecodeConfig, Embedder, Family, MaskPredictModel};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::attention::{dump_attention, write_attention};
use crate::bench::bench;
use crate::config::{EmbedderKind, ExperimentConfig};
use crate::dataset::{generate_dataset, load_dataset, save_dataset, write_jsonl, Dataset, Split};
use crate::error::{Error, Result};
use crate::eval::{decoders_for, evaluate, EvalOptions};
use crate::pipeline::{self, MLM_RUN};
use crate::task::Example;
use crate::trace::{check_trace, trace_lines, TraceLine};
use crate::train::StepRecord;
use crate::verify::verify_all;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CHECK_FAILED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "bertctc", version, about = "Mask-predict ASR with a masked-LM conditioned CTC head")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment config (JSON); built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Built-in configuration used when no config file is given.
    #[arg(long, value_enum, default_value = "default")]
    pub preset: Preset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Default,
    /// Tiny data and models; every subcommand finishes in seconds.
    Smoke,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RunKind {
    Ctc,
    Rnnt,
    Bertctc,
    BertctcSlu,
    Mlm,
}

impl RunKind {
    fn family(self) -> Option<Family> {
        match self {
            RunKind::Ctc => Some(Family::Ctc),
            RunKind::Rnnt => Some(Family::Rnnt),
            RunKind::Bertctc => Some(Family::Bertctc),
            RunKind::BertctcSlu => Some(Family::BertctcSlu),
            RunKind::Mlm => None,
        }
    }

    fn name(self) -> &'static str {
        self.family().map_or(MLM_RUN, Family::name)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train one model family (or the MLM).
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        family: RunKind,
        /// Continue from the run directory's checkpoint.
        #[arg(long)]
        resume: bool,
        /// Stop after this many steps in this invocation.
        #[arg(long)]
        max_steps: Option<usize>,
        /// Checkpoint every N steps (0: only at the end).
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
    },
    /// Decode a split, optionally writing per-iteration traces.
    Decode {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        family: RunKind,
        #[arg(long, default_value = "test")]
        split: String,
        /// Mask-predict iterations K (config default when omitted).
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        limit: Option<usize>,
        /// JSON-lines trace output, one record per iteration.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// JSON-lines hypotheses output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score every trained model on a split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "test")]
        split: String,
        /// Families to score (default: every trained run).
        #[arg(long, value_enum, value_delimiter = ',')]
        families: Vec<RunKind>,
        #[arg(long)]
        limit: Option<usize>,
        /// Output directory (default: <output_dir>/eval).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure real-time factor of single-pass and mask-predict decoding.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "bertctc")]
        family: RunKind,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 50)]
        limit: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the implementation against exact oracles.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write fusion attention maps of one utterance.
    DumpAttention {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "bertctc")]
        family: RunKind,
        #[arg(long, default_value = "test")]
        split: String,
        /// Utterance id (default: the first of the split).
        #[arg(long)]
        utterance: Option<String>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Outcome of a subcommand that ran to completion.
enum Outcome {
    Ok,
    CheckFailed(String),
}

pub fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => match common.preset {
            Preset::Default => ExperimentConfig::default_with_seed(common.seed.unwrap_or(0)),
            Preset::Smoke => ExperimentConfig::smoke(common.seed.unwrap_or(0)),
        },
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(d) = &common.output_dir {
        cfg.output_dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Loads the dataset for `cfg`, generating it first if absent.
pub fn dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let dir = cfg.data_dir();
    if !dir.join("manifest.jsonl").exists() {
        eprintln!("no dataset at {}; generating", dir.display());
        let ds = generate_dataset(&cfg.task, &cfg.data, cfg.seed)?;
        save_dataset(&ds, &dir)?;
        return Ok(ds);
    }
    let ds = load_dataset(&dir)?;
    if ds.seed != cfg.seed || ds.task.spec != cfg.task {
        return Err(Error::Contract(format!(
            "dataset at {} was generated with another seed or task; rerun generate",
            dir.display()
        )));
    }
    Ok(ds)
}

fn embedder(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Arc<dyn Embedder>> {
    match cfg.embedder {
        EmbedderKind::Oracle => Ok(pipeline::oracle_embedder(ds)),
        EmbedderKind::Mlm => {
            let dir = cfg.run_dir(MLM_RUN);
            if !dir.join("params.json").exists() {
                return Err(Error::Contract(format!(
                    "no trained MLM in {}; run `train --family mlm` first",
                    dir.display()
                )));
            }
            Ok(Arc::new(pipeline::load_mlm(dir)?))
        }
    }
}

fn load_run(cfg: &ExperimentConfig, ds: &Dataset, kind: RunKind) -> Result<AsrModel> {
    let Some(family) = kind.family() else {
        return Err(Error::Contract("the MLM is not an ASR model".into()));
    };
    let dir = cfg.run_dir(family.name());
    if !dir.join("params.json").exists() {
        return Err(Error::Contract(format!("no trained {family} model in {}", dir.display())));
    }
    let emb = if family.uses_fusion() { Some(embedder(cfg, ds)?) } else { None };
    pipeline::load_model(dir, emb)
}

fn examples<'a>(ds: &'a Dataset, split: &str, limit: Option<usize>) -> Result<&'a [Example]> {
    let all = ds.split(Split::parse(split)?);
    Ok(&all[..limit.map_or(all.len(), |n| n.min(all.len()))])
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn report_step(kind: RunKind, rec: &StepRecord, total: usize) {
    if rec.step % 100 == 0 || rec.step + 1 == total {
        eprintln!("{} step {:>6}/{total} loss {:.5} lr {:.4}", kind.name(), rec.step + 1, rec.loss, rec.lr);
    }
}

fn train(cfg: &ExperimentConfig, kind: RunKind, resume: bool, max_steps: Option<usize>, every: usize) -> Result<()> {
    let ds = dataset(cfg)?;
    let dir = cfg.run_dir(kind.name());
    let resuming = resume && dir.join("trainer.json").exists();
    if !resuming && dir.join("loss.csv").exists() {
        fs::remove_file(dir.join("loss.csv")).map_err(|e| Error::io(&dir, e))?;
    }
    let budget = max_steps.unwrap_or(usize::MAX);
    let mut pending = Vec::new();
    let mut done = 0;
    match kind.family() {
        None => {
            let (mut mlm, mut trainer) = if resuming {
                (pipeline::load_mlm_params(&dir)?, pipeline::load_trainer(&dir)?)
            } else {
                (pipeline::new_mlm(cfg)?, pipeline::mlm_trainer(cfg)?)
            };
            let total = trainer.config.steps;
            while !trainer.finished() && done < budget {
                let rec = trainer.step_mlm(&mut mlm, &ds.text)?;
                report_step(kind, &rec, total);
                pending.push(rec);
                done += 1;
                if every > 0 && trainer.step % every == 0 {
                    pipeline::save_checkpoint(&dir, &mlm.config, &mlm.params, &trainer)?;
                    pipeline::append_losses(&dir, &std::mem::take(&mut pending))?;
                }
            }
            pipeline::save_checkpoint(&dir, &mlm.config, &mlm.params, &trainer)?;
        }
        Some(family) => {
            let emb = if family.uses_fusion() { Some(embedder(cfg, &ds)?) } else { None };
            let (mut model, mut trainer) = if resuming {
                (pipeline::load_model(&dir, emb)?, pipeline::load_trainer(&dir)?)
            } else {
                (pipeline::new_model(cfg, family, emb)?, pipeline::model_trainer(cfg, family)?)
            };
            let total = trainer.config.steps;
            while !trainer.finished() && done < budget {
                let rec = trainer.step_asr(&mut model, &ds.train)?;
                report_step(kind, &rec, total);
                pending.push(rec);
                done += 1;
                if every > 0 && trainer.step % every == 0 {
                    pipeline::save_checkpoint(&dir, &model.config, &model.params, &trainer)?;
                    pipeline::append_losses(&dir, &std::mem::take(&mut pending))?;
                }
            }
            pipeline::save_checkpoint(&dir, &model.config, &model.params, &trainer)?;
        }
    }
    pipeline::append_losses(&dir, &pending)?;
    println!("{}: {done} steps this run, checkpoint in {}", kind.name(), dir.display());
    Ok(())
}

#[derive(Serialize)]
struct DecodedLine<'a> {
    id: &'a str,
    reference: String,
    hypothesis: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    intent: Option<usize>,
}

fn decode(
    cfg: &ExperimentConfig,
    kind: RunKind,
    split: &str,
    iterations: Option<usize>,
    limit: Option<usize>,
    trace_path: Option<&Path>,
    out: Option<&Path>,
) -> Result<Outcome> {
    let ds = dataset(cfg)?;
    let model = load_run(cfg, &ds, kind)?;
    let vocab = &ds.task.vocab;
    let iterations = iterations.unwrap_or(cfg.decode.iterations);
    let dcfg = DecodeConfig {
        iterations,
        trace: trace_path.is_some(),
        early_exit: cfg.decode.early_exit,
    };
    let render = |w: &[usize]| {
        w.iter()
            .map(|&id| vocab.token(id).unwrap_or("?"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut lines = Vec::new();
    let mut traces: Vec<TraceLine> = Vec::new();
    let mut inconsistent = Vec::new();
    for ex in examples(&ds, split, limit)? {
        let enc = MaskPredictModel::encode(&model, &ex.utterance.features)?;
        let (hyp, intent) = match model.family() {
            Family::Ctc => (model.ctc_decode(&enc)?, None),
            Family::Rnnt => (model.rnnt_decode(&enc)?, None),
            Family::Bertctc | Family::BertctcSlu => {
                let o = decode_encoded(&model, &enc, &dcfg)?;
                if let Some(t) = &o.trace {
                    if let Err(e) = check_trace(t, iterations) {
                        inconsistent.push(format!("{}: {e}", ex.id));
                    }
                    for l in trace_lines(vocab, &ex.id, t) {
                        println!("{} k={} {}", ex.id, l.record.iteration, l.rendered);
                        traces.push(l);
                    }
                }
                (o.hypothesis, o.intent)
            }
        };
        println!("{}\t{}", ex.id, render(hyp.ids()));
        lines.push(DecodedLine {
            id: &ex.id,
            reference: render(ex.utterance.w.ids()),
            hypothesis: render(hyp.ids()),
            intent,
        });
    }
    if let Some(p) = trace_path {
        write_jsonl(p, &traces)?;
    }
    if let Some(p) = out {
        write_jsonl(p, &lines)?;
    }
    Ok(if inconsistent.is_empty() {
        Outcome::Ok
    } else {
        Outcome::CheckFailed(format!("trace inconsistency: {}", inconsistent.join("; ")))
    })
}

fn trained_runs(cfg: &ExperimentConfig) -> Vec<RunKind> {
    [RunKind::Ctc, RunKind::Rnnt, RunKind::Bertctc, RunKind::BertctcSlu]
        .into_iter()
        .filter(|k| cfg.run_dir(k.name()).join("params.json").exists())
        .collect()
}

fn evaluate_cmd(
    cfg: &ExperimentConfig,
    split: &str,
    families: &[RunKind],
    limit: Option<usize>,
    out: Option<&Path>,
) -> Result<()> {
    let ds = dataset(cfg)?;
    let kinds = if families.is_empty() { trained_runs(cfg) } else { families.to_vec() };
    if kinds.is_empty() {
        return Err(Error::Contract("no trained models to evaluate".into()));
    }
    let models = kinds.iter().map(|&k| load_run(cfg, &ds, k)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&AsrModel> = models.iter().collect();
    let opts = EvalOptions {
        seed: cfg.seed,
        split,
        k_list: &cfg.decode.k_list,
        frame_period_ms: cfg.frame_period_ms,
        early_exit: cfg.decode.early_exit,
    };
    let report = evaluate(&refs, examples(&ds, split, limit)?, &ds.task.vocab, &opts)?;
    for d in &report.decoders {
        let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{:.2}%", 100.0 * v));
        println!(
            "{:<12} {:<18} WER {:6.2}%  CER {:6.2}%  homophone err {:>7}  intent acc {:>7}",
            d.model,
            d.decoder.label(),
            100.0 * d.wer.rate,
            100.0 * d.cer.rate,
            opt(d.ambiguous_error),
            opt(d.intent_accuracy)
        );
    }
    let dir = out.map_or_else(|| cfg.run_dir("eval"), Path::to_path_buf);
    write_json(&dir.join(format!("report-{split}.json")), &report)?;
    let csv_path = dir.join(format!("wer_vs_k-{split}.csv"));
    let f = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    report.write_k_csv(f)?;
    println!("report written to {}", dir.display());
    Ok(())
}

fn bench_cmd(
    cfg: &ExperimentConfig,
    kind: RunKind,
    split: &str,
    limit: usize,
    repeats: usize,
    out: Option<&Path>,
) -> Result<()> {
    let ds = dataset(cfg)?;
    let model = load_run(cfg, &ds, kind)?;
    let decoders = decoders_for(model.family(), &cfg.decode.k_list);
    let report = bench(&model, &decoders, examples(&ds, split, Some(limit))?, repeats, cfg.frame_period_ms)?;
    for r in &report.rows {
        println!("{:<12} {:<18} RTF {:.5}  ({:.3}s for {:.2}s audio)", r.model, r.decoder.label(), r.rtf, r.seconds, r.audio_seconds);
    }
    let path = out.map_or_else(|| cfg.run_dir("bench").join(format!("{}.json", kind.name())), Path::to_path_buf);
    write_json(&path, &report)
}

fn verify_cmd(cfg: &ExperimentConfig, json: Option<&Path>) -> Result<Outcome> {
    let report = verify_all(cfg.seed);
    for p in &report.properties {
        println!(
            "{} {:<34} observed {:.3e}  tolerance {:.1e}  cases {}{}",
            if p.passed { "PASS" } else { "FAIL" },
            p.name,
            p.observed,
            p.tolerance,
            p.cases,
            if p.detail.is_empty() { String::new() } else { format!("  ({})", p.detail) }
        );
    }
    if let Some(p) = json {
        write_json(p, &report)?;
    }
    let failed: Vec<_> = report.properties.iter().filter(|p| !p.passed).map(|p| p.name.clone()).collect();
    Ok(if failed.is_empty() {
        Outcome::Ok
    } else {
        Outcome::CheckFailed(format!("failed: {}", failed.join(", ")))
    })
}

fn dump_attention_cmd(
    cfg: &ExperimentConfig,
    kind: RunKind,
    split: &str,
    utterance: Option<&str>,
    iterations: Option<usize>,
    out: Option<&Path>,
) -> Result<()> {
    let ds = dataset(cfg)?;
    let model = load_run(cfg, &ds, kind)?;
    let all = examples(&ds, split, None)?;
    let ex = match utterance {
        Some(id) => all
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::Contract(format!("no utterance {id:?} in {split}")))?,
        None => all.first().ok_or_else(|| Error::Contract(format!("split {split} is empty")))?,
    };
    let dump = dump_attention(&model, ex, &ds.task.vocab, iterations.unwrap_or(cfg.decode.iterations))?;
    let dir = out.map_or_else(|| cfg.run_dir("attention").join(&ex.id), Path::to_path_buf);
    write_attention(&dump, &dir)?;
    println!(
        "{} maps of size {} (T = {}, N = {}) written to {}",
        dump.sidecar.files.len(),
        dump.sidecar.size,
        dump.sidecar.frames,
        dump.sidecar.tokens,
        dir.display()
    );
    Ok(())
}

fn dispatch(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Generate { common } => {
            let cfg = load_config(&common)?;
            let ds = generate_dataset(&cfg.task, &cfg.data, cfg.seed)?;
            save_dataset(&ds, cfg.data_dir())?;
            cfg.save(cfg.output_dir.join("config.json"))?;
            println!(
                "{} train / {} dev / {} test utterances, {} text sentences, vocabulary {} -> {}",
                ds.train.len(),
                ds.dev.len(),
                ds.test.len(),
                ds.text.len(),
                ds.task.vocab.size(),
                cfg.data_dir().display()
            );
            Ok(Outcome::Ok)
        }
        Command::Train {
            common,
            family,
            resume,
            max_steps,
            checkpoint_every,
        } => train(&load_config(&common)?, family, resume, max_steps, checkpoint_every).map(|_| Outcome::Ok),
        Command::Decode {
            common,
            family,
            split,
            iterations,
            limit,
            trace,
            out,
        } => decode(&load_config(&common)?, family, &split, iterations, limit, trace.as_deref(), out.as_deref()),
        Command::Evaluate {
            common,
            split,
            families,
            limit,
            out,
        } => evaluate_cmd(&load_config(&common)?, &split, &families, limit, out.as_deref()).map(|_| Outcome::Ok),
        Command::Bench {
            common,
            family,
            split,
            limit,
            repeats,
            out,
        } => bench_cmd(&load_config(&common)?, family, &split, limit, repeats, out.as_deref()).map(|_| Outcome::Ok),
        Command::Verify { common, json } => verify_cmd(&load_config(&common)?, json.as_deref()),
        Command::DumpAttention {
            common,
            family,
            split,
            utterance,
            iterations,
            out,
        } => dump_attention_cmd(&load_config(&common)?, family, &split, utterance.as_deref(), iterations, out.as_deref())
            .map(|_| Outcome::Ok),
    }
}

/// Parses `args` and runs the subcommand, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(Outcome::Ok) => EXIT_OK,
        Ok(Outcome::CheckFailed(msg)) => {
            eprintln!("check failed: {msg}");
            EXIT_CHECK_FAILED
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
