//! Real-time-factor measurement: decode seconds per second of audio.

use std::time::Instant;

use bertctc_model::{decode_encoded, AsrModel, DecodeConfig, MaskPredictModel};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::DecoderKind;
use crate::task::Example;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: String,
    pub decoder: DecoderKind,
    /// Fastest of the repeats.
    pub seconds: f64,
    pub audio_seconds: f64,
    pub rtf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub utterances: usize,
    pub repeats: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn rtf(&self, decoder: DecoderKind) -> Option<f64> {
        self.rows.iter().find(|r| r.decoder == decoder).map(|r| r.rtf)
    }
}

fn time_once(model: &AsrModel, decoder: DecoderKind, examples: &[Example]) -> Result<f64> {
    let start = Instant::now();
    for ex in examples {
        let enc = MaskPredictModel::encode(model, &ex.utterance.features)?;
        let hyp = match decoder {
            DecoderKind::CtcGreedy => model.ctc_decode(&enc)?,
            DecoderKind::RnntGreedy => model.rnnt_decode(&enc)?,
            // every round runs: timing must not depend on convergence
            DecoderKind::MaskPredict { iterations } => {
                decode_encoded(model, &enc, &DecodeConfig::with_iterations(iterations))?.hypothesis
            }
        };
        std::hint::black_box(hyp);
    }
    Ok(start.elapsed().as_secs_f64())
}

/// Times each decoder over `examples`, keeping the minimum over `repeats`.
pub fn bench(
    model: &AsrModel,
    decoders: &[DecoderKind],
    examples: &[Example],
    repeats: usize,
    frame_period_ms: f64,
) -> Result<BenchReport> {
    if repeats == 0 || examples.is_empty() {
        return Err(Error::Config("bench needs at least one repeat and one utterance".into()));
    }
    let frames: usize = examples.iter().map(|e| e.utterance.features.rows()).sum();
    let audio_seconds = frames as f64 * frame_period_ms / 1000.0;
    let mut rows = Vec::with_capacity(decoders.len());
    for &decoder in decoders {
        let mut best = f64::INFINITY;
        for _ in 0..repeats {
            best = best.min(time_once(model, decoder, examples)?);
        }
        rows.push(BenchRow {
            model: model.family().name().to_string(),
            decoder,
            seconds: best,
            audio_seconds,
            rtf: best / audio_seconds,
        });
    }
    Ok(BenchReport {
        utterances: examples.len(),
        repeats,
        rows,
    })
}
