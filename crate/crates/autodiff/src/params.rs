use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::Gradients;
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Named trainable tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    params: BTreeMap<String, StoredTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name {name:?}")));
        }
        self.params.insert(name, value);
        Ok(())
    }

    /// Gaussian-initialized `rows × cols` matrix with std `1/sqrt(rows)`.
    pub fn insert_randn<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> Result<()> {
        let std = 1.0 / (rows.max(1) as f64).sqrt();
        self.insert(name, Tensor::randn(rows, cols, std, rng))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Moves every parameter of `other` into this store.
    pub fn extend(&mut self, other: ParamStore) -> Result<()> {
        for (name, t) in other.params {
            self.insert(name, t)?;
        }
        Ok(())
    }

    /// Parameters whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let ck = Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            params: self
                .params
                .iter()
                .map(|(k, t)| {
                    (
                        k.clone(),
                        StoredTensor {
                            shape: t.shape(),
                            data: t.data().to_vec(),
                        },
                    )
                })
                .collect(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                ck.format_version
            )));
        }
        let mut params = BTreeMap::new();
        for (name, st) in ck.params {
            let t = Tensor::new(st.shape[0], st.shape[1], st.data)
                .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            params.insert(name, t);
        }
        Ok(Self { params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Plain gradient descent with optional momentum and global-norm clipping.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub clip_norm: Option<f64>,
    velocity: BTreeMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            momentum: 0.0,
            clip_norm: None,
            velocity: BTreeMap::new(),
        }
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn with_clip_norm(mut self, clip: f64) -> Self {
        self.clip_norm = Some(clip);
        self
    }

    /// Momentum buffers, keyed by parameter name (empty without momentum).
    pub fn velocity(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.velocity
    }

    /// Restores momentum buffers saved from [`Sgd::velocity`].
    pub fn set_velocity(&mut self, velocity: BTreeMap<String, Vec<f64>>) {
        self.velocity = velocity;
    }

    /// Applies one update to every parameter that has a gradient and returns
    /// the pre-clipping gradient norm. Fails without touching any parameter
    /// if a gradient is non-finite or does not match its parameter.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<f64> {
        for (name, g) in grads.iter() {
            if g.data().iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient { name: name.clone() });
            }
            match params.get(name) {
                None => return Err(Error::UnknownParameter(name.clone())),
                Some(p) if p.shape() != g.shape() => {
                    return Err(Error::Shape {
                        op: "sgd_step",
                        detail: format!(
                            "parameter {name:?} is {:?}, gradient is {:?}",
                            p.shape(),
                            g.shape()
                        ),
                    })
                }
                _ => {}
            }
        }
        let norm = grads.norm();
        let factor = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        for (name, g) in grads.iter() {
            let p = params.get_mut(name).expect("checked above");
            if self.momentum == 0.0 {
                for (x, gv) in p.data_mut().iter_mut().zip(g.data()) {
                    *x -= self.lr * factor * gv;
                }
            } else {
                let vel = self
                    .velocity
                    .entry(name.clone())
                    .or_insert_with(|| vec![0.0; g.len()]);
                for ((x, gv), v) in p.data_mut().iter_mut().zip(g.data()).zip(vel.iter_mut()) {
                    *v = self.momentum * *v + factor * gv;
                    *x -= self.lr * *v;
                }
            }
        }
        Ok(norm)
    }
}

/// `p ← p − lr·g` for every named gradient.
pub fn sgd_step(params: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
    Sgd::new(lr).step(params, grads).map(|_| ())
}
