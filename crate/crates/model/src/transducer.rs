//! Prediction network and joint network of the transducer baseline.

use bertctc_autodiff::{GruWeights, ParamStore, Tape, Tensor, Value};
use bertctc_core::{rnnt_loss_with_grad, JointGrid, TokenId, TokenSequence, BLANK_ID};
use rand::Rng;

use crate::config::RnntConfig;
use crate::error::Result;
use crate::nn::{log_softmax_rows, Linear, Params};

#[derive(Debug, Clone)]
pub struct Transducer {
    pub config: RnntConfig,
    vocab: usize,
    embed: String,
    gru: [String; 9],
    enc_proj: Linear,
    pred_proj: Linear,
    out: Linear,
}

const GRU_PARTS: [&str; 9] = ["w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_n", "u_n", "b_n"];

impl Transducer {
    pub fn new(config: RnntConfig, enc_dim: usize, vocab: usize) -> Self {
        Self {
            vocab,
            embed: "rnnt.embed".into(),
            gru: GRU_PARTS.map(|p| format!("rnnt.gru.{p}")),
            enc_proj: Linear::new("rnnt.joint.enc", enc_dim, config.joint_dim),
            pred_proj: Linear::new("rnnt.joint.pred", config.hidden_dim, config.joint_dim),
            out: Linear::new("rnnt.joint.out", config.joint_dim, vocab),
            config,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let (e, h) = (self.config.embed_dim, self.config.hidden_dim);
        store.insert(self.embed.clone(), Tensor::randn(self.vocab, e, 1.0, rng))?;
        for (name, part) in self.gru.iter().zip(GRU_PARTS) {
            let t = match &part[..1] {
                "w" => Tensor::randn(e, h, 1.0 / (e as f64).sqrt(), rng),
                "u" => Tensor::randn(h, h, 1.0 / (h as f64).sqrt(), rng),
                _ => Tensor::zeros(1, h),
            };
            store.insert(name.clone(), t)?;
        }
        self.enc_proj.init(store, rng)?;
        self.pred_proj.init(store, rng)?;
        self.out.init_scaled(store, rng, 0.5)?;
        Ok(())
    }

    fn weights(&self, tape: &Tape, ps: Params) -> Result<GruWeights> {
        let v = |i: usize| ps.get(tape, &self.gru[i]);
        Ok(GruWeights {
            w_z: v(0)?,
            u_z: v(1)?,
            b_z: v(2)?,
            w_r: v(3)?,
            u_r: v(4)?,
            b_r: v(5)?,
            w_n: v(6)?,
            u_n: v(7)?,
            b_n: v(8)?,
        })
    }

    /// Prediction-network states after each prefix of `history`:
    /// row `n` summarizes `history[..n]`, `(len+1) × hidden`.
    pub fn prediction(&self, tape: &Tape, ps: Params, history: &[TokenId]) -> Result<Value> {
        let table = ps.get(tape, &self.embed)?;
        let w = self.weights(tape, ps)?;
        let mut h = tape.constant(Tensor::zeros(1, self.config.hidden_dim));
        let mut states = Vec::with_capacity(history.len() + 1);
        for &tok in std::iter::once(&BLANK_ID).chain(history) {
            let x = tape.gather_rows(table, &[tok])?;
            h = tape.gated_recurrent_cell(x, h, &w)?;
            states.push(h);
        }
        Ok(tape.concat_rows(&states)?)
    }

    /// Joint logits for every `(t, n)` of the `(T+1) × (N+1)` lattice in
    /// row-major node order. Lattice row `T` reuses the last frame.
    pub fn joint_logits(&self, tape: &Tape, ps: Params, h_ae: Value, w: &TokenSequence) -> Result<Value> {
        let frames = tape.shape(h_ae)[0];
        let tokens = w.len();
        let enc = self.enc_proj.forward(tape, ps, h_ae)?;
        let pred = self.prediction(tape, ps, w.ids())?;
        let pred = self.pred_proj.forward(tape, ps, pred)?;
        let mut t_idx = Vec::with_capacity((frames + 1) * (tokens + 1));
        let mut n_idx = Vec::with_capacity(t_idx.capacity());
        for t in 0..=frames {
            for n in 0..=tokens {
                t_idx.push(t.min(frames - 1));
                n_idx.push(n);
            }
        }
        let a = tape.gather_rows(enc, &t_idx)?;
        let b = tape.gather_rows(pred, &n_idx)?;
        let s = tape.tanh(tape.add(a, b)?);
        self.out.forward(tape, ps, s)
    }

    /// Transducer loss recorded on the tape.
    pub fn loss(&self, tape: &Tape, ps: Params, h_ae: Value, w: &TokenSequence) -> Result<Value> {
        let frames = tape.shape(h_ae)[0];
        let logits = self.joint_logits(tape, ps, h_ae, w)?;
        let grid = {
            let l = tape.value(logits);
            JointGrid::from_log_probs(frames, w.len(), self.vocab, log_softmax_rows(&l))?
        };
        let res = rnnt_loss_with_grad(&grid, w)?;
        let shape = tape.shape(logits);
        let grad = Tensor::new(shape[0], shape[1], res.grad_logits)?;
        Ok(tape.external_scalar(res.loss, vec![(logits, grad)])?)
    }

    /// Log-distribution at one node given a prediction state and an
    /// encoder frame, both as plain row vectors.
    pub fn node_log_probs(&self, ps: Params, enc_row: &[f64], pred_state: &[f64]) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let e = tape.constant(Tensor::row_vector(enc_row.to_vec()));
        let p = tape.constant(Tensor::row_vector(pred_state.to_vec()));
        let a = self.enc_proj.forward(&tape, ps, e)?;
        let b = self.pred_proj.forward(&tape, ps, p)?;
        let s = tape.tanh(tape.add(a, b)?);
        let logits = self.out.forward(&tape, ps, s)?;
        let l = tape.value(logits);
        Ok(log_softmax_rows(&l))
    }

    /// One prediction-network step from `state` after emitting `token`.
    pub fn step(&self, ps: Params, state: Option<&[f64]>, token: TokenId) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let table = ps.get(&tape, &self.embed)?;
        let w = self.weights(&tape, ps)?;
        let h = tape.constant(match state {
            Some(s) => Tensor::row_vector(s.to_vec()),
            None => Tensor::zeros(1, self.config.hidden_dim),
        });
        let x = tape.gather_rows(table, &[token])?;
        let h = tape.gated_recurrent_cell(x, h, &w)?;
        Ok(tape.tensor(h).into_data())
    }
}
