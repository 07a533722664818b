//! Fusion attention dumps.
//!
//! Fused positions are `0..T` (audio frames), `T` (summary token) and
//! `T+1..T+N+1` (conditioning tokens).

use std::fs;
use std::path::Path;

use bertctc_autodiff::Tensor;
use bertctc_core::{MaskedSequence, Vocabulary};
use bertctc_model::{decode_encoded, AsrModel, DecodeConfig, MaskPredictModel};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::Example;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSidecar {
    pub utterance: String,
    pub frames: usize,
    pub tokens: usize,
    /// Matrix side, `T + N + 1`.
    pub size: usize,
    /// First summary position and first conditioning-token position.
    pub boundaries: [usize; 2],
    pub layers: usize,
    pub heads: usize,
    pub conditioning: Vec<String>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct AttentionDump {
    pub sidecar: AttentionSidecar,
    /// `maps[layer][head]`.
    pub maps: Vec<Vec<Tensor>>,
}

/// Decodes `ex` with `iterations` rounds, then records the fusion attention
/// with the final hypothesis as fully observed conditioning.
pub fn dump_attention(model: &AsrModel, ex: &Example, vocab: &Vocabulary, iterations: usize) -> Result<AttentionDump> {
    if !model.family().uses_fusion() {
        return Err(Error::Contract(format!("{} has no fusion stack", model.family().name())));
    }
    let enc = MaskPredictModel::encode(model, &ex.utterance.features)?;
    let hyp = decode_encoded(model, &enc, &DecodeConfig::with_iterations(iterations))?.hypothesis;
    let fused = model.fuse(&enc, &MaskedSequence::observed_all(&hyp))?;
    let (frames, tokens) = (enc.frames(), hyp.len());
    let layers = fused.attention_maps.len();
    let heads = fused.attention_maps.first().map_or(0, Vec::len);
    let files = (0..layers)
        .flat_map(|l| (0..heads).map(move |h| format!("layer{l}_head{h}.csv")))
        .collect();
    Ok(AttentionDump {
        sidecar: AttentionSidecar {
            utterance: ex.id.clone(),
            frames,
            tokens,
            size: frames + tokens + 1,
            boundaries: [frames, frames + 1],
            layers,
            heads,
            conditioning: hyp.iter().map(|&id| vocab.token(id).unwrap_or("?").to_string()).collect(),
            files,
        },
        maps: fused.attention_maps,
    })
}

/// Writes one CSV per layer and head plus `attention.json`.
pub fn write_attention(dump: &AttentionDump, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = dump.sidecar.files.iter();
    for layer in &dump.maps {
        for m in layer {
            let path = dir.join(files.next().expect("one file per map"));
            let mut w = csv::Writer::from_path(&path)?;
            for row in m.data().chunks(m.cols()) {
                w.write_record(row.iter().map(|x| x.to_string()))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
    }
    let path = dir.join("attention.json");
    fs::write(&path, serde_json::to_string_pretty(&dump.sidecar)?).map_err(|e| Error::io(&path, e))
}
