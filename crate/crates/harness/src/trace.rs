//! Decode-trace export and the trace-consistency check.

use bertctc_core::{decay_count, mask_lowest, ConfidenceVector, TokenSequence, Vocabulary, MASK_ID};
use bertctc_model::{DecodeTrace, TraceRecord};
use serde::{Deserialize, Serialize};

/// One JSON-lines row: a single iteration of one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub utterance: String,
    pub initial_length: usize,
    #[serde(flatten)]
    pub record: TraceRecord,
    /// Hypothesis with the positions masked for the next round in brackets.
    pub rendered: String,
}

/// Renders `hyp` with the tokens at `masked` wrapped in brackets.
pub fn render_masked(vocab: &Vocabulary, hyp: &[usize], masked: &[usize]) -> String {
    hyp.iter()
        .enumerate()
        .map(|(i, &id)| {
            let t = vocab.token(id).unwrap_or("?");
            if masked.contains(&i) {
                format!("[{t}]")
            } else {
                t.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn trace_lines(vocab: &Vocabulary, utterance: &str, trace: &DecodeTrace) -> Vec<TraceLine> {
    trace
        .records
        .iter()
        .map(|r| TraceLine {
            utterance: utterance.to_string(),
            initial_length: trace.initial_length,
            rendered: render_masked(vocab, &r.hypothesis, &r.masked_positions),
            record: r.clone(),
        })
        .collect()
}

/// Checks every iteration of a trace against the decoding rules: the first
/// input is all masks of the initial length, each round masks exactly the
/// `decay_count` lowest-confidence positions of its hypothesis, and the next
/// round's input is that masked hypothesis.
pub fn check_trace(trace: &DecodeTrace, iterations: usize) -> std::result::Result<(), String> {
    let Some(first) = trace.records.first() else {
        return if trace.initial_length == 0 {
            Ok(())
        } else {
            Err(format!("empty trace for initial length {}", trace.initial_length))
        };
    };
    if first.input != vec![MASK_ID; trace.initial_length] {
        return Err("first input is not fully masked at the initial length".into());
    }
    for (i, r) in trace.records.iter().enumerate() {
        let k = i + 1;
        if r.iteration != k {
            return Err(format!("record {i} has iteration {}", r.iteration));
        }
        if r.confidences.len() != r.hypothesis.len() {
            return Err(format!("iteration {k}: {} confidences for {} tokens", r.confidences.len(), r.hypothesis.len()));
        }
        let hyp = TokenSequence::new(r.hypothesis.clone()).map_err(|e| format!("iteration {k}: {e}"))?;
        let conf = ConfidenceVector(r.confidences.clone());
        let m = decay_count(hyp.len(), iterations, k).map_err(|e| e.to_string())?;
        let next = mask_lowest(&hyp, &conf, m).map_err(|e| e.to_string())?;
        if next.masked_positions() != r.masked_positions {
            return Err(format!(
                "iteration {k}: masked {:?}, rule gives {:?}",
                r.masked_positions,
                next.masked_positions()
            ));
        }
        if let Some(n) = trace.records.get(i + 1) {
            if n.input != next.ids() {
                return Err(format!("iteration {}: input does not follow iteration {k}", k + 1));
            }
        }
    }
    Ok(())
}
