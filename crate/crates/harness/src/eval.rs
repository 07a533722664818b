//! Scoring of trained models: WER/CER with S/I/D counts, error at homophone
//! positions, intent accuracy, WER as a function of `K`, and real-time
//! factor.

use std::collections::BTreeMap;
use std::time::Instant;

use bertctc_core::{align, EditOp, ErrorAccumulator, ErrorRate, TokenSequence, Vocabulary};
use bertctc_model::{
    decode_encoded, predict_intent, AsrModel, DecodeConfig, Family, MaskPredictModel,
};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::task::Example;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DecoderKind {
    /// Best path of the encoder's final CTC head, one pass.
    CtcGreedy,
    RnntGreedy,
    MaskPredict { iterations: usize },
}

impl DecoderKind {
    pub fn label(&self) -> String {
        match self {
            DecoderKind::CtcGreedy => "ctc-greedy".into(),
            DecoderKind::RnntGreedy => "rnnt-greedy".into(),
            DecoderKind::MaskPredict { iterations } => format!("mask-predict-k{iterations}"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub reference_len: usize,
    pub rate: f64,
}

impl From<ErrorRate> for ErrorSummary {
    fn from(r: ErrorRate) -> Self {
        Self {
            substitutions: r.counts.substitutions,
            insertions: r.counts.insertions,
            deletions: r.counts.deletions,
            reference_len: r.reference_len,
            rate: r.rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceResult {
    pub id: String,
    pub reference: Vec<String>,
    pub hypothesis: Vec<String>,
    #[serde(default)]
    pub intent_reference: Option<usize>,
    #[serde(default)]
    pub intent_hypothesis: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderReport {
    pub model: String,
    pub decoder: DecoderKind,
    pub wer: ErrorSummary,
    pub cer: ErrorSummary,
    /// Fraction of homophone reference positions not matched by the hypothesis.
    pub ambiguous_error: Option<f64>,
    pub ambiguous_positions: usize,
    pub intent_accuracy: Option<f64>,
    pub results: Vec<UtteranceResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KPoint {
    pub iterations: usize,
    pub wer: f64,
    pub ambiguous_error: Option<f64>,
    pub intent_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub model: String,
    pub decoder: String,
    pub seconds: f64,
    pub audio_seconds: f64,
    pub rtf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub split: String,
    pub utterances: usize,
    pub decoders: Vec<DecoderReport>,
    /// Mask-predict WER for each swept `K`, per model.
    pub wer_vs_k: BTreeMap<String, Vec<KPoint>>,
    /// Accuracy of always answering the most frequent reference intent.
    pub majority_intent_accuracy: Option<f64>,
    /// Wall-clock measurements; the only non-deterministic part.
    pub timing: Vec<Timing>,
}

impl EvalReport {
    /// The report without wall-clock fields.
    pub fn without_timing(&self) -> Self {
        Self {
            timing: Vec::new(),
            ..self.clone()
        }
    }

    pub fn decoder(&self, model: &str, decoder: DecoderKind) -> Option<&DecoderReport> {
        self.decoders.iter().find(|d| d.model == model && d.decoder == decoder)
    }

    /// Writes the WER-vs-K points as CSV.
    pub fn write_k_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "iterations", "wer", "ambiguous_error", "intent_accuracy"])?;
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
        for (model, points) in &self.wer_vs_k {
            for p in points {
                w.write_record([
                    model.clone(),
                    p.iterations.to_string(),
                    p.wer.to_string(),
                    opt(p.ambiguous_error),
                    opt(p.intent_accuracy),
                ])?;
            }
        }
        w.flush().map_err(|e| crate::Error::io("wer-vs-k csv", e))
    }
}

fn render(vocab: &Vocabulary, w: &TokenSequence) -> Vec<String> {
    w.iter().map(|&id| vocab.token(id).unwrap_or("?").to_string()).collect()
}

fn chars(tokens: &[String]) -> Vec<char> {
    tokens.iter().flat_map(|t| t.chars()).collect()
}

/// Word and character error rates over stored reference/hypothesis pairs.
pub fn score_results(results: &[UtteranceResult]) -> (ErrorSummary, ErrorSummary) {
    let mut wer = ErrorAccumulator::default();
    let mut cer = ErrorAccumulator::default();
    for r in results {
        wer.add(&r.reference, &r.hypothesis);
        cer.add(&chars(&r.reference), &chars(&r.hypothesis));
    }
    (wer.finish().into(), cer.finish().into())
}

/// Counts homophone reference positions left unmatched by an optimal
/// alignment of the hypothesis.
pub fn ambiguous_errors(reference: &TokenSequence, hyp: &TokenSequence, positions: &[usize]) -> usize {
    if positions.is_empty() {
        return 0;
    }
    let ops = align(reference.ids(), hyp.ids());
    positions
        .iter()
        .filter(|&&p| !ops.iter().any(|op| matches!(op, EditOp::Match(r, _) if *r == p)))
        .count()
}

/// Runs one decoder over `examples`, returning the report and the elapsed
/// decode time (encoder included).
pub fn run_decoder(
    model: &AsrModel,
    decoder: DecoderKind,
    examples: &[Example],
    vocab: &Vocabulary,
    early_exit: bool,
) -> Result<(DecoderReport, f64)> {
    let slu = model.has_intent_head();
    let mut results = Vec::with_capacity(examples.len());
    let (mut amb, mut amb_err) = (0usize, 0usize);
    let (mut intent_total, mut intent_ok) = (0usize, 0usize);
    let mut seconds = 0.0;
    for ex in examples {
        let feats = &ex.utterance.features;
        let start = Instant::now();
        let (hyp, intent) = match decoder {
            DecoderKind::CtcGreedy => (model.ctc_decode(&MaskPredictModel::encode(model, feats)?)?, None),
            DecoderKind::RnntGreedy => (model.rnnt_decode(&MaskPredictModel::encode(model, feats)?)?, None),
            DecoderKind::MaskPredict { iterations } => {
                let cfg = DecodeConfig {
                    iterations,
                    trace: false,
                    early_exit,
                };
                if slu {
                    let (i, h) = predict_intent(model, feats, &cfg)?;
                    (h, Some(i))
                } else {
                    let enc = MaskPredictModel::encode(model, feats)?;
                    (decode_encoded(model, &enc, &cfg)?.hypothesis, None)
                }
            }
        };
        seconds += start.elapsed().as_secs_f64();
        amb += ex.ambiguous.len();
        amb_err += ambiguous_errors(&ex.utterance.w, &hyp, &ex.ambiguous);
        if let (Some(r), Some(h)) = (ex.utterance.intent, intent) {
            intent_total += 1;
            intent_ok += usize::from(r == h);
        }
        results.push(UtteranceResult {
            id: ex.id.clone(),
            reference: render(vocab, &ex.utterance.w),
            hypothesis: render(vocab, &hyp),
            intent_reference: ex.utterance.intent.filter(|_| slu),
            intent_hypothesis: intent,
        });
    }
    let (wer, cer) = score_results(&results);
    let report = DecoderReport {
        model: model.family().name().to_string(),
        decoder,
        wer,
        cer,
        ambiguous_error: (amb > 0).then(|| amb_err as f64 / amb as f64),
        ambiguous_positions: amb,
        intent_accuracy: (intent_total > 0).then(|| intent_ok as f64 / intent_total as f64),
        results,
    };
    Ok((report, seconds))
}

/// Decoders applicable to a model: its single-pass baseline, plus
/// mask-predict at every `K` for fusion models.
pub fn decoders_for(family: Family, k_list: &[usize]) -> Vec<DecoderKind> {
    let mut out = vec![DecoderKind::CtcGreedy];
    match family {
        Family::Rnnt => out.push(DecoderKind::RnntGreedy),
        Family::Bertctc | Family::BertctcSlu => {
            out.extend(k_list.iter().map(|&iterations| DecoderKind::MaskPredict { iterations }))
        }
        Family::Ctc => {}
    }
    out
}

pub fn majority_intent_accuracy(examples: &[Example]) -> Option<f64> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for ex in examples {
        *counts.entry(ex.utterance.intent?).or_default() += 1;
    }
    let best = counts.values().max()?;
    Some(*best as f64 / examples.len() as f64)
}

pub struct EvalOptions<'a> {
    pub seed: u64,
    pub split: &'a str,
    pub k_list: &'a [usize],
    pub frame_period_ms: f64,
    pub early_exit: bool,
}

/// Evaluates every model with every applicable decoder.
pub fn evaluate(models: &[&AsrModel], examples: &[Example], vocab: &Vocabulary, opts: &EvalOptions) -> Result<EvalReport> {
    let frames: usize = examples.iter().map(|e| e.utterance.features.rows()).sum();
    let audio_seconds = frames as f64 * opts.frame_period_ms / 1000.0;
    let mut report = EvalReport {
        seed: opts.seed,
        split: opts.split.to_string(),
        utterances: examples.len(),
        decoders: Vec::new(),
        wer_vs_k: BTreeMap::new(),
        majority_intent_accuracy: majority_intent_accuracy(examples)
            .filter(|_| models.iter().any(|m| m.has_intent_head())),
        timing: Vec::new(),
    };
    for model in models {
        let name = model.family().name().to_string();
        for decoder in decoders_for(model.family(), opts.k_list) {
            let (r, seconds) = run_decoder(model, decoder, examples, vocab, opts.early_exit)?;
            if let DecoderKind::MaskPredict { iterations } = decoder {
                report.wer_vs_k.entry(name.clone()).or_default().push(KPoint {
                    iterations,
                    wer: r.wer.rate,
                    ambiguous_error: r.ambiguous_error,
                    intent_accuracy: r.intent_accuracy,
                });
            }
            report.timing.push(Timing {
                model: name.clone(),
                decoder: decoder.label(),
                seconds,
                audio_seconds,
                rtf: if audio_seconds > 0.0 { seconds / audio_seconds } else { 0.0 },
            });
            report.decoders.push(r);
        }
    }
    Ok(report)
}
