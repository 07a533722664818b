//! Per-frame log-probability grids.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::logspace::{log_softmax, log_sum_exp};

/// Tolerance on `logsumexp(row) == 0`.
pub const NORMALIZATION_TOL: f64 = 1e-6;

/// A `T × V` grid of natural-log probabilities, one normalized row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePosteriors {
    frames: usize,
    vocab: usize,
    data: Vec<f64>,
}

impl FramePosteriors {
    /// Validates normalization and finiteness (entries may be `-inf`).
    pub fn from_log_probs(frames: usize, vocab: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * vocab {
            return Err(Error::Shape(format!(
                "posterior grid expects {frames}x{vocab}={} entries, got {}",
                frames * vocab,
                data.len()
            )));
        }
        if vocab == 0 {
            return Err(Error::Shape("posterior grid with zero columns".into()));
        }
        for (t, row) in data.chunks(vocab).enumerate() {
            if row.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
                return Err(Error::Contract(format!("non-finite entry in frame {t}")));
            }
            let z = log_sum_exp(row);
            if (z.abs() > NORMALIZATION_TOL) || z.is_nan() {
                return Err(Error::Contract(format!(
                    "frame {t} is not normalized (logsumexp = {z})"
                )));
            }
        }
        Ok(Self { frames, vocab, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let vocab = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != vocab) {
            return Err(Error::Shape("ragged posterior rows".into()));
        }
        Self::from_log_probs(rows.len(), vocab, rows.concat())
    }

    /// Log-softmax each row of unnormalized scores.
    pub fn from_logits(frames: usize, vocab: usize, logits: &[f64]) -> Result<Self> {
        if logits.len() != frames * vocab || vocab == 0 {
            return Err(Error::Shape(format!(
                "logit grid expects {frames}x{vocab} entries, got {}",
                logits.len()
            )));
        }
        let data = logits.chunks(vocab).flat_map(log_softmax).collect();
        Self::from_log_probs(frames, vocab, data)
    }

    /// Rows given as linear probabilities.
    pub fn from_probs(rows: &[Vec<f64>]) -> Result<Self> {
        let logs: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().map(|p| p.ln()).collect())
            .collect();
        Self::from_rows(&logs)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.vocab..(t + 1) * self.vocab]
    }

    pub fn get(&self, t: usize, k: usize) -> f64 {
        self.data[t * self.vocab + k]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.vocab).map(<[f64]>::to_vec).collect()
    }

    /// Header-less CSV: one frame per row, one token id per column.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_grid_csv(out, self.vocab, &self.data)
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let rows = read_grid_csv(input)?;
        Self::from_rows(&rows)
    }
}

pub(crate) fn write_grid_csv<W: Write>(out: W, cols: usize, data: &[f64]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for row in data.chunks(cols) {
        w.write_record(row.iter().map(|x| x.to_string()))
            .map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))
}

pub(crate) fn read_grid_csv<R: Read>(input: R) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let row = rec
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{f:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}
