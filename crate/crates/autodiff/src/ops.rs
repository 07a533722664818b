//! Forward definitions of every differentiable operation.

use crate::error::{shape_err, Result};
use crate::tape::{Op, Tape, Value};
use crate::tensor::{matmul_nt, matmul_raw, Tensor};

const LAYERNORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = if x == f64::NEG_INFINITY { 0.0 } else { (x - max).exp() };
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

impl Tape {
    fn unary(&self, a: Value, f: impl Fn(f64) -> f64, op: Op) -> Value {
        let out = {
            let t = self.value(a);
            Tensor::new(t.rows(), t.cols(), t.data().iter().map(|&x| f(x)).collect())
                .expect("same shape")
        };
        let rg = self.needs_grad(&[a]);
        self.push(out, op, rg)
    }

    fn same_shape(&self, op: &'static str, a: Value, b: Value) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, format!("operands {sa:?} and {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&self, a: Value, b: Value) -> Result<Value> {
        let out = {
            let (ta, tb) = (self.value(a), self.value(b));
            if ta.cols() != tb.rows() {
                return Err(shape_err(
                    "matmul",
                    format!("operands {:?} and {:?}", ta.shape(), tb.shape()),
                ));
            }
            let data = matmul_raw(ta.data(), tb.data(), ta.rows(), ta.cols(), tb.cols());
            Tensor::new(ta.rows(), tb.cols(), data)?
        };
        Ok(self.push(out, Op::MatMul(a, b), self.needs_grad(&[a, b])))
    }

    pub fn add(&self, a: Value, b: Value) -> Result<Value> {
        self.same_shape("add", a, b)?;
        let out = {
            let (ta, tb) = (self.value(a), self.value(b));
            let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
            Tensor::new(ta.rows(), ta.cols(), data)?
        };
        Ok(self.push(out, Op::Add(a, b), self.needs_grad(&[a, b])))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Value, b: Value) -> Result<Value> {
        self.same_shape("mul", a, b)?;
        let out = {
            let (ta, tb) = (self.value(a), self.value(b));
            let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
            Tensor::new(ta.rows(), ta.cols(), data)?
        };
        Ok(self.push(out, Op::Mul(a, b), self.needs_grad(&[a, b])))
    }

    /// Adds a `1 × C` bias to every row of an `R × C` value.
    pub fn add_row(&self, a: Value, bias: Value) -> Result<Value> {
        let out = {
            let (ta, tb) = (self.value(a), self.value(bias));
            if tb.rows() != 1 || tb.cols() != ta.cols() {
                return Err(shape_err(
                    "add_row",
                    format!("value {:?} and bias {:?}", ta.shape(), tb.shape()),
                ));
            }
            let mut t = ta.clone();
            for r in 0..t.rows() {
                for (x, b) in t.row_mut(r).iter_mut().zip(tb.data()) {
                    *x += b;
                }
            }
            t
        };
        Ok(self.push(out, Op::AddRow(a, bias), self.needs_grad(&[a, bias])))
    }

    /// `a · scale + shift`, elementwise.
    pub fn affine(&self, a: Value, scale: f64, shift: f64) -> Value {
        self.unary(a, |x| x * scale + shift, Op::Affine(a, scale))
    }

    pub fn scale(&self, a: Value, s: f64) -> Value {
        self.affine(a, s, 0.0)
    }

    pub fn sigmoid(&self, a: Value) -> Value {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&self, a: Value) -> Value {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&self, a: Value) -> Value {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&self, a: Value) -> Value {
        self.unary(a, gelu, Op::Gelu(a))
    }

    pub fn softmax_lastdim(&self, a: Value) -> Value {
        let out = {
            let t = self.value(a);
            let mut o = Tensor::zeros(t.rows(), t.cols());
            for r in 0..t.rows() {
                softmax_row(t.row(r), o.row_mut(r));
            }
            o
        };
        self.push(out, Op::Softmax(a), self.needs_grad(&[a]))
    }

    pub fn log_softmax_lastdim(&self, a: Value) -> Value {
        let out = {
            let t = self.value(a);
            let mut o = Tensor::zeros(t.rows(), t.cols());
            for r in 0..t.rows() {
                let row = t.row(r);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
                for (o, x) in o.row_mut(r).iter_mut().zip(row) {
                    *o = x - z;
                }
            }
            o
        };
        self.push(out, Op::LogSoftmax(a), self.needs_grad(&[a]))
    }

    /// Normalizes each row, then applies a `1 × C` gain and bias.
    pub fn layernorm(&self, x: Value, gain: Value, bias: Value) -> Result<Value> {
        let (out, xhat, rstd) = {
            let t = self.value(x);
            let cols = t.cols();
            if self.shape(gain) != [1, cols] || self.shape(bias) != [1, cols] {
                return Err(shape_err(
                    "layernorm",
                    format!(
                        "input {:?}, gain {:?}, bias {:?}",
                        t.shape(),
                        self.shape(gain),
                        self.shape(bias)
                    ),
                ));
            }
            let (g, b) = (self.value(gain), self.value(bias));
            let mut out = Tensor::zeros(t.rows(), cols);
            let mut xhat = vec![0.0; t.len()];
            let mut rstd = vec![0.0; t.rows()];
            for r in 0..t.rows() {
                let row = t.row(r);
                let mean = row.iter().sum::<f64>() / cols as f64;
                let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols as f64;
                let rs = 1.0 / (var + LAYERNORM_EPS).sqrt();
                rstd[r] = rs;
                for j in 0..cols {
                    let xh = (row[j] - mean) * rs;
                    xhat[r * cols + j] = xh;
                    out.row_mut(r)[j] = xh * g.data()[j] + b.data()[j];
                }
            }
            (out, xhat, rstd)
        };
        let rg = self.needs_grad(&[x, gain, bias]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Rows of `table` selected by `ids` (repeats allowed).
    pub fn gather_rows(&self, table: Value, ids: &[usize]) -> Result<Value> {
        let out = {
            let t = self.value(table);
            if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
                return Err(shape_err(
                    "gather_rows",
                    format!("row {bad} out of range for {:?}", t.shape()),
                ));
            }
            let mut data = Vec::with_capacity(ids.len() * t.cols());
            for &i in ids {
                data.extend_from_slice(t.row(i));
            }
            Tensor::new(ids.len(), t.cols(), data)?
        };
        let rg = self.needs_grad(&[table]);
        Ok(self.push(out, Op::GatherRows(table, ids.to_vec()), rg))
    }

    pub fn embedding_lookup(&self, table: Value, ids: &[usize]) -> Result<Value> {
        self.gather_rows(table, ids)
    }

    pub fn concat_rows(&self, parts: &[Value]) -> Result<Value> {
        let out = {
            let cols = parts.first().map(|p| self.shape(*p)[1]).unwrap_or(0);
            let mut rows = 0;
            let mut data = Vec::new();
            for p in parts {
                let t = self.value(*p);
                if t.cols() != cols {
                    return Err(shape_err(
                        "concat_rows",
                        format!("column mismatch {} vs {cols}", t.cols()),
                    ));
                }
                rows += t.rows();
                data.extend_from_slice(t.data());
            }
            Tensor::new(rows, cols, data)?
        };
        let rg = self.needs_grad(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_rows(&self, a: Value, start: usize, len: usize) -> Result<Value> {
        let out = {
            let t = self.value(a);
            if start + len > t.rows() {
                return Err(shape_err(
                    "slice_rows",
                    format!("rows {start}..{} of {:?}", start + len, t.shape()),
                ));
            }
            Tensor::new(len, t.cols(), t.data()[start * t.cols()..(start + len) * t.cols()].to_vec())?
        };
        Ok(self.push(out, Op::SliceRows(a, start), self.needs_grad(&[a])))
    }

    /// Multi-head scaled dot-product attention. `q` is `L × d`, `k`/`v` are
    /// `S × d`, `d` divisible by `heads`. `mask`, if given, is an additive
    /// `L × S` matrix (use `-inf` to block a position).
    pub fn scaled_dot_attention(
        &self,
        q: Value,
        k: Value,
        v: Value,
        heads: usize,
        mask: Option<&Tensor>,
    ) -> Result<Value> {
        let (out, probs) = {
            let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
            let (l, s, d) = (tq.rows(), tk.rows(), tq.cols());
            if heads == 0 || d % heads != 0 || tk.cols() != d || tv.shape() != tk.shape() {
                return Err(shape_err(
                    "scaled_dot_attention",
                    format!(
                        "q {:?}, k {:?}, v {:?}, heads {heads}",
                        tq.shape(),
                        tk.shape(),
                        tv.shape()
                    ),
                ));
            }
            if let Some(m) = mask {
                if m.shape() != [l, s] {
                    return Err(shape_err(
                        "scaled_dot_attention",
                        format!("mask {:?} for scores {l}x{s}", m.shape()),
                    ));
                }
            }
            let dh = d / heads;
            let scale = 1.0 / (dh as f64).sqrt();
            let mut out = vec![0.0; l * d];
            let mut probs = Vec::with_capacity(heads);
            for h in 0..heads {
                let off = h * dh;
                let qh: Vec<f64> = (0..l).flat_map(|i| tq.data()[i * d + off..i * d + off + dh].to_vec()).collect();
                let kh: Vec<f64> = (0..s).flat_map(|j| tk.data()[j * d + off..j * d + off + dh].to_vec()).collect();
                let mut scores = matmul_nt(&qh, &kh, l, dh, s);
                for (i, sc) in scores.iter_mut().enumerate() {
                    *sc *= scale;
                    if let Some(m) = mask {
                        *sc += m.data()[i];
                    }
                }
                let mut p = vec![0.0; l * s];
                for i in 0..l {
                    softmax_row(&scores[i * s..(i + 1) * s], &mut p[i * s..(i + 1) * s]);
                }
                for i in 0..l {
                    for j in 0..s {
                        let w = p[i * s + j];
                        if w == 0.0 {
                            continue;
                        }
                        for c in 0..dh {
                            out[i * d + off + c] += w * tv.data()[j * d + off + c];
                        }
                    }
                }
                probs.push(p);
            }
            (Tensor::new(l, d, out)?, probs)
        };
        let rg = self.needs_grad(&[q, k, v]);
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Mean over all entries, as a `1 × 1` value.
    pub fn mean(&self, a: Value) -> Value {
        let m = {
            let t = self.value(a);
            t.data().iter().sum::<f64>() / t.len() as f64
        };
        let rg = self.needs_grad(&[a]);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    pub fn sum(&self, a: Value) -> Value {
        let s = self.value(a).data().iter().sum::<f64>();
        let rg = self.needs_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Mean negative log-likelihood of `targets` (one per row) under a
    /// row-wise softmax of `logits`.
    pub fn cross_entropy(&self, logits: Value, targets: &[usize]) -> Result<Value> {
        let (loss, probs) = {
            let t = self.value(logits);
            if t.rows() != targets.len() || targets.iter().any(|&y| y >= t.cols()) {
                return Err(shape_err(
                    "cross_entropy",
                    format!("logits {:?} with {} targets", t.shape(), targets.len()),
                ));
            }
            let mut probs = vec![0.0; t.len()];
            let mut loss = 0.0;
            for (r, &y) in targets.iter().enumerate() {
                let row = &mut probs[r * t.cols()..(r + 1) * t.cols()];
                softmax_row(t.row(r), row);
                loss -= row[y].ln();
            }
            (loss / targets.len() as f64, probs)
        };
        let rg = self.needs_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Records a scalar computed outside the tape together with its exact
    /// gradients with respect to `inputs`.
    pub fn external_scalar(&self, value: f64, parts: Vec<(Value, Tensor)>) -> Result<Value> {
        for (v, g) in &parts {
            if self.shape(*v) != g.shape() {
                return Err(shape_err(
                    "external_scalar",
                    format!("input {:?} with gradient {:?}", self.shape(*v), g.shape()),
                ));
            }
        }
        let inputs: Vec<Value> = parts.iter().map(|(v, _)| *v).collect();
        let rg = self.needs_grad(&inputs);
        Ok(self.push(Tensor::scalar(value), Op::External(parts), rg))
    }

    /// `x W + b` for a `1 × out` bias.
    pub fn linear(&self, x: Value, w: Value, b: Value) -> Result<Value> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    /// Weighted sum of `1 × 1` values; zero-weight terms are skipped.
    pub fn weighted_sum(&self, terms: &[(f64, Value)]) -> Result<Value> {
        let mut acc: Option<Value> = None;
        for &(w, v) in terms {
            if w == 0.0 {
                continue;
            }
            let scaled = self.scale(v, w);
            acc = Some(match acc {
                Some(a) => self.add(a, scaled)?,
                None => scaled,
            });
        }
        Ok(acc.unwrap_or_else(|| self.constant(Tensor::scalar(0.0))))
    }
}

/// Weights of one gated recurrent cell.
#[derive(Debug, Clone, Copy)]
pub struct GruWeights {
    pub w_z: Value,
    pub u_z: Value,
    pub b_z: Value,
    pub w_r: Value,
    pub u_r: Value,
    pub b_r: Value,
    pub w_n: Value,
    pub u_n: Value,
    pub b_n: Value,
}

impl Tape {
    /// One step of a gated recurrent unit over `1 × in` input `x` and
    /// `1 × hidden` state `h`:
    /// `z = σ(xW_z + hU_z + b_z)`, `r = σ(xW_r + hU_r + b_r)`,
    /// `n = tanh(xW_n + (r⊙h)U_n + b_n)`, `h' = (1−z)⊙n + z⊙h`.
    pub fn gated_recurrent_cell(&self, x: Value, h: Value, w: &GruWeights) -> Result<Value> {
        let gate = |wx: Value, uh: Value, b: Value, hv: Value| -> Result<Value> {
            let a = self.matmul(x, wx)?;
            let c = self.matmul(hv, uh)?;
            let s = self.add(a, c)?;
            self.add_row(s, b)
        };
        let z = self.sigmoid(gate(w.w_z, w.u_z, w.b_z, h)?);
        let r = self.sigmoid(gate(w.w_r, w.u_r, w.b_r, h)?);
        let rh = self.mul(r, h)?;
        let n = self.tanh(gate(w.w_n, w.u_n, w.b_n, rh)?);
        let one_minus_z = self.affine(z, -1.0, 1.0);
        let keep = self.mul(one_minus_z, n)?;
        let carry = self.mul(z, h)?;
        self.add(keep, carry)
    }
}
