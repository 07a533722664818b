//! Parameter-name layouts for the shared building blocks.

use bertctc_autodiff::{ParamStore, Tape, Tensor, Value};
use rand::Rng;

use crate::error::Result;

/// A parameter store viewed either as trainable or frozen.
#[derive(Clone, Copy)]
pub struct Params<'a> {
    pub store: &'a ParamStore,
    pub frozen: bool,
}

impl<'a> Params<'a> {
    pub fn trainable(store: &'a ParamStore) -> Self {
        Self { store, frozen: false }
    }

    pub fn frozen(store: &'a ParamStore) -> Self {
        Self { store, frozen: true }
    }

    pub fn get(&self, tape: &Tape, name: &str) -> Result<Value> {
        Ok(if self.frozen {
            tape.frozen_param(self.store, name)?
        } else {
            tape.param(self.store, name)?
        })
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    w: String,
    b: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(prefix: &str, in_dim: usize, out_dim: usize) -> Self {
        Self {
            w: format!("{prefix}.w"),
            b: format!("{prefix}.b"),
            in_dim,
            out_dim,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        store.insert_randn(&self.w, self.in_dim, self.out_dim, rng)?;
        store.insert(&self.b, Tensor::zeros(1, self.out_dim))?;
        Ok(())
    }

    /// Like [`Linear::init`] with the weights scaled down, for output layers.
    pub fn init_scaled<R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore,
        rng: &mut R,
        scale: f64,
    ) -> Result<()> {
        let std = scale / (self.in_dim as f64).sqrt();
        store.insert(&self.w, Tensor::randn(self.in_dim, self.out_dim, std, rng))?;
        store.insert(&self.b, Tensor::zeros(1, self.out_dim))?;
        Ok(())
    }

    pub fn forward(&self, tape: &Tape, ps: Params, x: Value) -> Result<Value> {
        let w = ps.get(tape, &self.w)?;
        let b = ps.get(tape, &self.b)?;
        Ok(tape.linear(x, w, b)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gain: String,
    bias: String,
    dim: usize,
}

impl LayerNorm {
    pub fn new(prefix: &str, dim: usize) -> Self {
        Self {
            gain: format!("{prefix}.gain"),
            bias: format!("{prefix}.bias"),
            dim,
        }
    }

    pub fn init(&self, store: &mut ParamStore) -> Result<()> {
        store.insert(&self.gain, Tensor::filled(1, self.dim, 1.0))?;
        store.insert(&self.bias, Tensor::zeros(1, self.dim))?;
        Ok(())
    }

    pub fn forward(&self, tape: &Tape, ps: Params, x: Value) -> Result<Value> {
        let g = ps.get(tape, &self.gain)?;
        let b = ps.get(tape, &self.bias)?;
        Ok(tape.layernorm(x, g, b)?)
    }
}

/// Pre-norm self-attention block:
/// `x + Attn(LN(x))`, then `x + W₂ GELU(W₁ LN(x))`.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    ln_attn: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln_ff: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
    heads: usize,
}

pub struct BlockOutput {
    pub hidden: Value,
    /// The attention node; per-head weights via `Tape::attention_weights`.
    pub attention: Value,
}

impl TransformerBlock {
    pub fn new(prefix: &str, dim: usize, heads: usize, ff_dim: usize) -> Self {
        Self {
            ln_attn: LayerNorm::new(&format!("{prefix}.ln_attn"), dim),
            q: Linear::new(&format!("{prefix}.attn.q"), dim, dim),
            k: Linear::new(&format!("{prefix}.attn.k"), dim, dim),
            v: Linear::new(&format!("{prefix}.attn.v"), dim, dim),
            o: Linear::new(&format!("{prefix}.attn.o"), dim, dim),
            ln_ff: LayerNorm::new(&format!("{prefix}.ln_ff"), dim),
            ff_in: Linear::new(&format!("{prefix}.ff.in"), dim, ff_dim),
            ff_out: Linear::new(&format!("{prefix}.ff.out"), ff_dim, dim),
            heads,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.ln_attn.init(store)?;
        for l in [&self.q, &self.k, &self.v] {
            l.init(store, rng)?;
        }
        self.o.init_scaled(store, rng, 0.5)?;
        self.ln_ff.init(store)?;
        self.ff_in.init(store, rng)?;
        self.ff_out.init_scaled(store, rng, 0.5)?;
        Ok(())
    }

    pub fn forward(&self, tape: &Tape, ps: Params, x: Value, mask: Option<&Tensor>) -> Result<BlockOutput> {
        let h = self.ln_attn.forward(tape, ps, x)?;
        let q = self.q.forward(tape, ps, h)?;
        let k = self.k.forward(tape, ps, h)?;
        let v = self.v.forward(tape, ps, h)?;
        let attention = tape.scaled_dot_attention(q, k, v, self.heads, mask)?;
        let a = self.o.forward(tape, ps, attention)?;
        let x = tape.add(x, a)?;
        let h = self.ln_ff.forward(tape, ps, x)?;
        let h = self.ff_in.forward(tape, ps, h)?;
        let h = tape.gelu(h);
        let h = self.ff_out.forward(tape, ps, h)?;
        Ok(BlockOutput {
            hidden: tape.add(x, h)?,
            attention,
        })
    }
}

/// Standard sinusoidal position table, `len × dim`.
pub fn sinusoidal(len: usize, dim: usize) -> Tensor {
    let mut t = Tensor::zeros(len, dim);
    for pos in 0..len {
        let row = t.row_mut(pos);
        for i in 0..dim {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 * rate;
            row[i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    t
}

/// Row-wise log-softmax of a logits tensor as a flat buffer.
pub(crate) fn log_softmax_rows(t: &Tensor) -> Vec<f64> {
    let mut out = Vec::with_capacity(t.len());
    for r in 0..t.rows() {
        out.extend(bertctc_core::logspace::log_softmax(t.row(r)));
    }
    out
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
