//! Seeded dataset generation and on-disk layout.
//!
//! ```text
//! <dir>/task.json        spec + seed (the hidden tables are rebuilt from it)
//! <dir>/vocab.txt        one token per line
//! <dir>/manifest.jsonl   one utterance per line
//! <dir>/<split>.feats    "BCFEATS1", then per utterance: rows u32, cols u32, rows·cols f64 (LE)
//! <dir>/text.txt         MLM corpus, one space-separated sentence per line
//! ```

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use bertctc_autodiff::Tensor;
use bertctc_core::{TokenSequence, Vocabulary};
use bertctc_model::Utterance;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::DataSizes;
use crate::error::{Error, Result};
use crate::task::{Example, SyntheticTask, SyntheticTaskSpec};

const FEATS_MAGIC: &[u8; 8] = b"BCFEATS1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?}")))
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Dev => 2,
            Split::Test => 3,
        }
    }
}

const TEXT_STREAM: u64 = 4;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub seed: u64,
    pub task: SyntheticTask,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
    pub text: Vec<TokenSequence>,
}

impl Dataset {
    pub fn split(&self, s: Split) -> &[Example] {
        match s {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

fn split_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generates every split from independent streams of one seed.
pub fn generate_dataset(spec: &SyntheticTaskSpec, sizes: &DataSizes, seed: u64) -> Result<Dataset> {
    let task = SyntheticTask::new(spec.clone(), seed)?;
    let gen = |split: Split, n: usize| {
        let mut rng = split_rng(seed, split.stream());
        (0..n)
            .map(|i| task.sample_example(format!("{}-{i:05}", split.name()), &mut rng))
            .collect::<Vec<_>>()
    };
    let text = task.text_corpus(sizes.text, &mut split_rng(seed, TEXT_STREAM));
    Ok(Dataset {
        seed,
        train: gen(Split::Train, sizes.train),
        dev: gen(Split::Dev, sizes.dev),
        test: gen(Split::Test, sizes.test),
        text,
        task,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TaskFile {
    seed: u64,
    spec: SyntheticTaskSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    split: Split,
    tokens: Vec<String>,
    small_tokens: Vec<String>,
    #[serde(default)]
    intent: Option<usize>,
    ambiguous: Vec<usize>,
    features: String,
    offset: u64,
    frames: usize,
    dim: usize,
}

fn names(vocab: &Vocabulary, w: &TokenSequence) -> Vec<String> {
    w.iter().map(|&id| vocab.token(id).unwrap_or("?").to_string()).collect()
}

fn ids(vocab: &Vocabulary, names: &[String], what: &str) -> Result<TokenSequence> {
    let ids = names
        .iter()
        .map(|n| {
            vocab.id(n).ok_or_else(|| Error::Format {
                what: what.into(),
                detail: format!("unknown token {n:?}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TokenSequence::new(ids)?)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes a dataset; the same seed and spec always give identical bytes.
pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let vocab = &ds.task.vocab;
    let task = TaskFile {
        seed: ds.seed,
        spec: ds.task.spec.clone(),
    };
    write_file(&dir.join("task.json"), serde_json::to_string_pretty(&task)?.as_bytes())?;
    write_file(&dir.join("vocab.txt"), vocab.to_text().as_bytes())?;

    let mut manifest = Vec::new();
    for split in Split::ALL {
        let file = format!("{}.feats", split.name());
        let mut feats = Vec::from(&FEATS_MAGIC[..]);
        for ex in ds.split(split) {
            let f = &ex.utterance.features;
            let entry = ManifestEntry {
                id: ex.id.clone(),
                split,
                tokens: names(vocab, &ex.utterance.w),
                small_tokens: names(vocab, &ex.utterance.w_small),
                intent: ex.utterance.intent,
                ambiguous: ex.ambiguous.clone(),
                features: file.clone(),
                offset: feats.len() as u64,
                frames: f.rows(),
                dim: f.cols(),
            };
            feats.extend((f.rows() as u32).to_le_bytes());
            feats.extend((f.cols() as u32).to_le_bytes());
            for x in f.data() {
                feats.extend(x.to_le_bytes());
            }
            manifest.extend(serde_json::to_vec(&entry)?);
            manifest.push(b'\n');
        }
        write_file(&dir.join(&file), &feats)?;
    }
    write_file(&dir.join("manifest.jsonl"), &manifest)?;

    let mut text = String::new();
    for w in &ds.text {
        text.push_str(&names(vocab, w).join(" "));
        text.push('\n');
    }
    write_file(&dir.join("text.txt"), text.as_bytes())
}

fn read_features(file: &mut File, path: &Path, entry: &ManifestEntry) -> Result<Tensor> {
    let bad = |detail: String| Error::Format {
        what: format!("feature file {}", path.display()),
        detail,
    };
    file.seek(SeekFrom::Start(entry.offset)).map_err(|e| Error::io(path, e))?;
    let mut header = [0u8; 8];
    file.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    let rows = u32::from_le_bytes(header[..4].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(header[4..].try_into().expect("4 bytes")) as usize;
    if rows != entry.frames || cols != entry.dim {
        return Err(bad(format!(
            "{}: header says {rows}x{cols}, manifest says {}x{}",
            entry.id, entry.frames, entry.dim
        )));
    }
    let mut raw = vec![0u8; rows * cols * 8];
    file.read_exact(&mut raw).map_err(|e| Error::io(path, e))?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Tensor::new(rows, cols, data)?)
}

/// Reads a dataset written by [`save_dataset`].
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let task_path = dir.join("task.json");
    let text = fs::read_to_string(&task_path).map_err(|e| Error::io(&task_path, e))?;
    let tf: TaskFile = serde_json::from_str(&text).map_err(|e| Error::Format {
        what: task_path.display().to_string(),
        detail: e.to_string(),
    })?;
    let task = SyntheticTask::new(tf.spec, tf.seed)?;
    let vocab = task.vocab.clone();

    let mut ds = Dataset {
        seed: tf.seed,
        task,
        train: vec![],
        dev: vec![],
        test: vec![],
        text: vec![],
    };
    let manifest_path = dir.join("manifest.jsonl");
    let manifest = File::open(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut open: Option<(String, File)> = None;
    for (lineno, line) in BufReader::new(manifest).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&manifest_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| Error::Format {
            what: format!("manifest line {}", lineno + 1),
            detail: e.to_string(),
        })?;
        if open.as_ref().is_none_or(|(name, _)| *name != entry.features) {
            let p = dir.join(&entry.features);
            let mut f = File::open(&p).map_err(|e| Error::io(&p, e))?;
            let mut magic = [0u8; 8];
            f.read_exact(&mut magic).map_err(|e| Error::io(&p, e))?;
            if &magic != FEATS_MAGIC {
                return Err(Error::Format {
                    what: p.display().to_string(),
                    detail: "bad magic".into(),
                });
            }
            open = Some((entry.features.clone(), f));
        }
        let (_, file) = open.as_mut().expect("opened above");
        let features = read_features(file, &dir.join(&entry.features), &entry)?;
        let ex = Example {
            utterance: Utterance {
                features,
                w: ids(&vocab, &entry.tokens, "manifest")?,
                w_small: ids(&vocab, &entry.small_tokens, "manifest")?,
                intent: entry.intent,
            },
            id: entry.id,
            ambiguous: entry.ambiguous,
        };
        match entry.split {
            Split::Train => ds.train.push(ex),
            Split::Dev => ds.dev.push(ex),
            Split::Test => ds.test.push(ex),
        }
    }

    let text_path = dir.join("text.txt");
    let text = File::open(&text_path).map_err(|e| Error::io(&text_path, e))?;
    for line in BufReader::new(text).lines() {
        let line = line.map_err(|e| Error::io(&text_path, e))?;
        let toks: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        ds.text.push(ids(&vocab, &toks, "text corpus")?);
    }
    Ok(ds)
}

/// Writes a JSON-lines file, one serialized record per line.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
