//! Oracle verification: exact enumeration checks, finite-difference
//! gradient suites and the masking algebra, reported per property.

use std::sync::Arc;

use bertctc_autodiff::{check_gradients, relative_error, GruWeights, ParamStore, Tape, Tensor, Value};
use bertctc_core::logspace::{log_add, log_sum_exp, log_softmax};
use bertctc_core::*;
use bertctc_model::{
    AsrModel, AudioEncoderConfig, Embedder, Family, FusionConfig, LossOutcome, LossWeights, ModelConfig,
    OracleEmbedder, Utterance,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::task::{SyntheticTask, SyntheticTaskSpec};

pub const EXACT_TOL: f64 = 1e-9;
pub const OP_GRAD_TOL: f64 = 1e-4;
pub const MODEL_GRAD_TOL: f64 = 1e-3;
const FD_STEP: f64 = 1e-5;
const FD_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Property {
    pub name: String,
    pub passed: bool,
    /// Largest observed deviation (absolute or relative, per property).
    pub observed: f64,
    pub tolerance: f64,
    pub cases: usize,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl Property {
    fn new(name: &str, observed: f64, tolerance: f64, cases: usize, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: observed <= tolerance,
            observed,
            tolerance,
            cases,
            detail: detail.into(),
        }
    }

    fn exact(name: &str, ok: bool, cases: usize, detail: impl Into<String>) -> Self {
        Self::new(name, if ok { 0.0 } else { 1.0 }, 0.0, cases, detail)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub properties: Vec<Property>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.properties.iter().all(|p| p.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Property> {
        self.properties.iter().find(|p| p.name == name)
    }
}

fn seq(ids: &[usize]) -> TokenSequence {
    TokenSequence::new(ids.to_vec()).expect("valid ids")
}

fn vocab(regular: usize) -> Vocabulary {
    Vocabulary::from_regular((0..regular).map(|i| format!("t{i}"))).expect("small vocab")
}

fn normals<R: Rng>(n: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Posteriors with the mask column at probability zero.
fn random_posteriors<R: Rng>(frames: usize, v: usize, rng: &mut R) -> FramePosteriors {
    let rows: Vec<Vec<f64>> = (0..frames)
        .map(|_| {
            let mut logits = normals(v, 2.0, rng);
            logits[MASK_ID] = f64::NEG_INFINITY;
            log_softmax(&logits)
        })
        .collect();
    FramePosteriors::from_rows(&rows).expect("normalized rows")
}

pub fn ctc_fixed_cases() -> Property {
    let third = 1.0 / 3.0;
    let uniform = |t: usize| FramePosteriors::from_probs(&vec![vec![third, 0.0, third, third]; t]).expect("valid");
    let a = ctc_loss(&uniform(3), &seq(&[2])).map(|r| r.loss).unwrap_or(f64::NAN);
    let b = ctc_loss(&uniform(2), &seq(&[2, 3])).map(|r| r.loss).unwrap_or(f64::NAN);
    let err = (a + (6.0f64 / 27.0).ln()).abs().max((b + (1.0f64 / 9.0).ln()).abs());
    Property::new(
        "ctc.fixed-cases",
        if err.is_nan() { f64::INFINITY } else { err },
        1e-12,
        2,
        format!("T=3 (a): {a}; T=2 (a,b): {b}"),
    )
}

/// `loss` against brute-force alignment enumeration on random cases with
/// `T ≤ 6`, `|V| ≤ 3`.
pub fn ctc_equivalence<F>(cases: usize, seed: u64, loss: F) -> Property
where
    F: Fn(&FramePosteriors, &TokenSequence) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut detail = String::new();
    for case in 0..cases {
        let frames = rng.random_range(1..=6);
        let regular = rng.random_range(1..=3);
        let v = vocab(regular);
        let post = random_posteriors(frames, v.size(), &mut rng);
        let len = rng.random_range(0..=frames);
        let target: Vec<usize> = (0..len).map(|_| rng.random_range(2..2 + regular)).collect();
        let w = seq(&target);
        let set = enumerate_ctc_alignments(&w, frames, &v).expect("within oracle limits");
        let got = loss(&post, &w);
        let err = if set.is_empty() {
            if got == f64::INFINITY { 0.0 } else { f64::INFINITY }
        } else {
            (got - ctc_brute_force_nll(&set, &post.rows())).abs()
        };
        let err = if err.is_nan() { f64::INFINITY } else { err };
        if err > worst {
            worst = err;
            detail = format!("case {case}: T={frames}, target {target:?}");
        }
    }
    Property::new("ctc.enumeration-equivalence", worst, EXACT_TOL, cases, detail)
}

pub fn rnnt_fixed_case() -> Property {
    let grid = JointGrid::from_node_probs(1, 1, 3, |_, _| vec![0.6, 0.0, 0.4]).expect("valid grid");
    let loss = rnnt_loss(&grid, &seq(&[2])).unwrap_or(f64::NAN);
    let err = (loss + 0.48f64.ln()).abs();
    Property::new(
        "rnnt.fixed-case",
        if err.is_nan() { f64::INFINITY } else { err },
        1e-12,
        1,
        format!("loss {loss}"),
    )
}

fn random_grid<R: Rng>(frames: usize, tokens: usize, v: usize, rng: &mut R) -> (Vec<f64>, JointGrid) {
    let logits = normals((frames + 1) * (tokens + 1) * v, 1.5, rng);
    let lp: Vec<f64> = logits.chunks(v).flat_map(log_softmax).collect();
    let grid = JointGrid::from_log_probs(frames, tokens, v, lp).expect("normalized grid");
    (logits, grid)
}

/// RNN-T loss against path enumeration on random grids with `T + N ≤ 10`.
pub fn rnnt_equivalence(cases: usize, seed: u64) -> Property {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut detail = String::new();
    for case in 0..cases {
        let frames = rng.random_range(1..=8);
        let tokens = rng.random_range(0..=(10 - frames).min(4));
        let regular = rng.random_range(1..=3);
        let v = regular + 2;
        let target: Vec<usize> = (0..tokens).map(|_| rng.random_range(2..v)).collect();
        let w = seq(&target);
        let (_, grid) = random_grid(frames, tokens, v, &mut rng);
        let paths = enumerate_rnnt_paths(&w, frames).expect("within oracle limits");
        let brute = -log_sum_exp(&paths.iter().map(|z| rnnt_path_log_prob(&grid, z)).collect::<Vec<_>>());
        let err = match rnnt_loss(&grid, &w) {
            Ok(l) => (l - brute).abs(),
            Err(_) => f64::INFINITY,
        };
        if err > worst || err.is_nan() {
            worst = if err.is_nan() { f64::INFINITY } else { err };
            detail = format!("case {case}: T={frames}, N={tokens}");
        }
    }
    Property::new("rnnt.enumeration-equivalence", worst, EXACT_TOL, cases, detail)
}

fn fd_scan(x: &[f64], f: impl Fn(&[f64]) -> f64, analytic: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + FD_STEP;
        let plus = f(&probe);
        probe[i] = x[i] - FD_STEP;
        let minus = f(&probe);
        probe[i] = x[i];
        worst = worst.max(relative_error(analytic[i], (plus - minus) / (2.0 * FD_STEP), FD_FLOOR));
    }
    worst
}

pub fn ctc_gradient(cases: usize, seed: u64) -> Property {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let frames = rng.random_range(2..=8);
        let v = rng.random_range(3..=6);
        let len = rng.random_range(1..=frames / 2);
        let w = seq(&(0..len).map(|_| rng.random_range(2..v)).collect::<Vec<_>>());
        let logits = normals(frames * v, 1.5, &mut rng);
        let loss = |l: &[f64]| {
            let post = FramePosteriors::from_logits(frames, v, l).expect("finite logits");
            ctc_loss(&post, &w).expect("valid target").loss
        };
        let post = FramePosteriors::from_logits(frames, v, &logits).expect("finite logits");
        let r = ctc_loss(&post, &w).expect("valid target");
        worst = worst.max(fd_scan(&logits, loss, &r.grad_logits));
    }
    Property::new("ctc.gradient-fd", worst, OP_GRAD_TOL, cases, "")
}

pub fn rnnt_gradient(cases: usize, seed: u64) -> Property {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let frames = rng.random_range(1..=4);
        let tokens = rng.random_range(0..=3);
        let v = rng.random_range(3..=5);
        let w = seq(&(0..tokens).map(|_| rng.random_range(2..v)).collect::<Vec<_>>());
        let (logits, grid) = random_grid(frames, tokens, v, &mut rng);
        let loss = |l: &[f64]| {
            let lp: Vec<f64> = l.chunks(v).flat_map(log_softmax).collect();
            let g = JointGrid::from_log_probs(frames, tokens, v, lp).expect("normalized grid");
            rnnt_loss(&g, &w).expect("valid target")
        };
        let r = rnnt_loss_with_grad(&grid, &w).expect("valid target");
        worst = worst.max(fd_scan(&logits, loss, &r.grad_logits));
    }
    Property::new("rnnt.gradient-fd", worst, OP_GRAD_TOL, cases, "")
}

/// Finite-difference check of one tape computation. Inputs become named
/// parameters; a non-scalar output is reduced against a fixed random
/// projection.
pub fn op_gradient_error(inputs: &[Tensor], seed: u64, build: impl Fn(&Tape, &[Value]) -> Value) -> f64 {
    let mut store = ParamStore::new();
    for (i, t) in inputs.iter().enumerate() {
        store.insert(format!("x{i}"), t.clone()).expect("unique names");
    }
    let run = |s: &ParamStore, grad: bool| {
        let tape = Tape::new();
        let vs: Vec<Value> = (0..inputs.len())
            .map(|i| tape.param(s, &format!("x{i}")).expect("present"))
            .collect();
        let out = build(&tape, &vs);
        let [r, c] = tape.shape(out);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let proj = tape.constant(Tensor::randn(r, c, 1.0, &mut rng));
        let root = tape.sum(tape.mul(out, proj).expect("same shape"));
        (tape.scalar(root), grad.then(|| tape.backward(root).expect("scalar root")))
    };
    let grads = run(&store, true).1.expect("requested");
    check_gradients(&store, &grads, FD_STEP, FD_FLOOR, |s| run(s, false).0).max_rel_err
}

fn mat<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    Tensor::randn(rows, cols, 1.0, rng)
}

/// Keeps entries away from the ReLU kink.
fn off_zero(mut t: Tensor) -> Tensor {
    for x in t.data_mut() {
        *x = x.signum() * (0.1 + x.abs());
    }
    t
}

pub fn autodiff_ops(seed: u64) -> Vec<Property> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name: &str, errs: Vec<f64>| {
        let worst = errs.iter().cloned().fold(0.0, f64::max);
        let n = errs.len();
        out.push(Property::new(name, worst, OP_GRAD_TOL, n, ""));
    };

    let (a, b, c) = (mat(3, 4, &mut rng), mat(4, 5, &mut rng), mat(3, 4, &mut rng));
    let row = mat(1, 4, &mut rng);
    push(
        "autodiff.linear-algebra-fd",
        vec![
            op_gradient_error(&[a.clone(), b.clone()], 1, |t, v| t.matmul(v[0], v[1]).unwrap()),
            op_gradient_error(&[a.clone(), c.clone()], 2, |t, v| t.add(v[0], v[1]).unwrap()),
            op_gradient_error(&[a.clone(), c.clone()], 3, |t, v| t.mul(v[0], v[1]).unwrap()),
            op_gradient_error(&[a.clone(), row.clone()], 4, |t, v| t.add_row(v[0], v[1]).unwrap()),
            op_gradient_error(&[a.clone()], 5, |t, v| t.affine(v[0], 1.7, -0.3)),
            op_gradient_error(&[a.clone()], 6, |t, v| t.scale(v[0], -2.5)),
            op_gradient_error(&[a.clone(), b.clone(), mat(1, 5, &mut rng)], 7, |t, v| {
                t.linear(v[0], v[1], v[2]).unwrap()
            }),
            op_gradient_error(&[a.clone(), c.clone()], 8, |t, v| {
                t.weighted_sum(&[(0.3, t.sum(v[0])), (0.7, t.mean(v[1]))]).unwrap()
            }),
        ],
    );
    push(
        "autodiff.pointwise-fd",
        vec![
            op_gradient_error(&[a.clone()], 11, |t, v| t.sigmoid(v[0])),
            op_gradient_error(&[a.clone()], 12, |t, v| t.tanh(v[0])),
            op_gradient_error(&[off_zero(a.clone())], 13, |t, v| t.relu(v[0])),
            op_gradient_error(&[a.clone()], 14, |t, v| t.gelu(v[0])),
        ],
    );
    push(
        "autodiff.normalization-fd",
        vec![
            op_gradient_error(&[a.clone()], 21, |t, v| t.softmax_lastdim(v[0])),
            op_gradient_error(&[a.clone()], 22, |t, v| t.log_softmax_lastdim(v[0])),
            op_gradient_error(&[a.clone(), row.clone(), mat(1, 4, &mut rng)], 23, |t, v| {
                t.layernorm(v[0], v[1], v[2]).unwrap()
            }),
            op_gradient_error(&[a.clone()], 24, |t, v| t.cross_entropy(v[0], &[0, 3, 1]).unwrap()),
        ],
    );
    push(
        "autodiff.indexing-fd",
        vec![
            op_gradient_error(&[mat(5, 3, &mut rng)], 31, |t, v| t.gather_rows(v[0], &[4, 0, 4, 2]).unwrap()),
            op_gradient_error(&[a.clone(), c.clone()], 32, |t, v| t.concat_rows(&[v[0], v[1]]).unwrap()),
            op_gradient_error(&[mat(6, 3, &mut rng)], 33, |t, v| t.slice_rows(v[0], 2, 3).unwrap()),
        ],
    );
    let mut mask = Tensor::zeros(5, 5);
    for i in 0..5 {
        for j in i + 1..5 {
            mask.data_mut()[i * 5 + j] = f64::NEG_INFINITY;
        }
    }
    let (q, k, v) = (mat(5, 4, &mut rng), mat(5, 4, &mut rng), mat(5, 4, &mut rng));
    push(
        "autodiff.attention-fd",
        vec![
            op_gradient_error(&[q.clone(), k.clone(), v.clone()], 41, |t, x| {
                t.scaled_dot_attention(x[0], x[1], x[2], 2, None).unwrap()
            }),
            op_gradient_error(&[q, k, v], 42, |t, x| {
                t.scaled_dot_attention(x[0], x[1], x[2], 2, Some(&mask)).unwrap()
            }),
        ],
    );
    let mut gru_inputs = vec![mat(2, 3, &mut rng), mat(1, 4, &mut rng)];
    for _ in 0..3 {
        gru_inputs.extend([mat(3, 4, &mut rng), mat(4, 4, &mut rng), mat(1, 4, &mut rng)]);
    }
    push(
        "autodiff.recurrent-fd",
        vec![op_gradient_error(&gru_inputs, 51, |t, v| {
            let w = GruWeights {
                w_z: v[2],
                u_z: v[3],
                b_z: v[4],
                w_r: v[5],
                u_r: v[6],
                b_r: v[7],
                w_n: v[8],
                u_n: v[9],
                b_n: v[10],
            };
            let h1 = t.gated_recurrent_cell(t.slice_rows(v[0], 0, 1).unwrap(), v[1], &w).unwrap();
            t.gated_recurrent_cell(t.slice_rows(v[0], 1, 1).unwrap(), h1, &w).unwrap()
        })],
    );
    // the external op carries a CTC gradient onto the tape
    let ext_logits = mat(4, 4, &mut rng);
    push(
        "autodiff.external-ctc-fd",
        vec![op_gradient_error(&[ext_logits], 61, |t, v| {
            let l = t.tensor(v[0]);
            let post = FramePosteriors::from_logits(4, 4, l.data()).unwrap();
            let r = ctc_loss(&post, &seq(&[2, 3])).unwrap();
            t.external_scalar(r.loss, vec![(v[0], Tensor::new(4, 4, r.grad_logits).unwrap())])
                .unwrap()
        })],
    );
    out
}

/// A tiny fusion model with a fixed utterance and conditioning mask, for
/// end-to-end gradient checks.
pub struct TinyCase {
    pub model: AsrModel,
    pub utterance: Utterance,
    pub masked: MaskedSequence,
}

pub fn tiny_case(family: Family, seed: u64) -> TinyCase {
    let spec = SyntheticTaskSpec {
        regular_tokens: 3,
        homophone_pairs: 1,
        min_tokens: 3,
        max_tokens: 3,
        feature_dim: 4,
        intents: Some(2),
        ..SyntheticTaskSpec::default()
    };
    let task = SyntheticTask::new(spec, seed).expect("valid tiny spec");
    let v = task.vocab_size();
    let cfg = ModelConfig {
        family,
        vocab: v,
        small_vocab: v,
        encoder: AudioEncoderConfig {
            input_dim: 4,
            layers: 1,
            model_dim: 8,
            heads: 2,
            feedforward_dim: 16,
            tap_layer: 0,
        },
        fusion: family.uses_fusion().then_some(FusionConfig {
            layers: 1,
            model_dim: 8,
            heads: 2,
            feedforward_dim: 16,
            bert_dim: v,
        }),
        rnnt: None,
        intents: (family == Family::BertctcSlu).then_some(2),
        weights: LossWeights::default(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embedder: Arc<dyn Embedder> = Arc::new(OracleEmbedder::new(task.rule.clone()));
    let model = AsrModel::new(cfg, Some(embedder), &mut rng).expect("valid tiny model");
    let member = task.rule.member(2, 3);
    let w = seq(&[2, task.rule.homophone_id(0, member), 3]);
    let utterance = Utterance {
        features: Tensor::randn(4, 4, 1.0, &mut rng),
        w_small: w.clone(),
        w: w.clone(),
        intent: Some(1),
    };
    let masked = MaskedSequence::with_masks(&w, &[1]).expect("valid mask");
    TinyCase {
        model,
        utterance,
        masked,
    }
}

/// End-to-end gradient of the full training loss against finite differences
/// over every parameter.
pub fn model_gradient(family: Family, seed: u64) -> Property {
    let case = tiny_case(family, seed);
    let masked = family.uses_fusion().then_some(&case.masked);
    let loss_of = |m: &AsrModel| match m.loss_with_mask(&case.utterance, masked) {
        Ok(LossOutcome::Computed { terms, grads }) => Some((terms.total, grads)),
        _ => None,
    };
    let Some((_, grads)) = loss_of(&case.model) else {
        return Property::exact(&format!("model.{}-loss-fd", family.name()), false, 0, "loss not computable");
    };
    let embedder = case.model.embedder().cloned();
    let report = check_gradients(&case.model.params, &grads, FD_STEP, FD_FLOOR, |p| {
        AsrModel::from_params(case.model.config.clone(), p.clone(), embedder.clone())
            .ok()
            .and_then(|m| loss_of(&m))
            .map_or(f64::NAN, |(l, _)| l)
    });
    let detail = report
        .worst
        .map(|(n, i, a, f)| format!("worst {n}[{i}]: analytic {a:.6e}, numeric {f:.6e}"))
        .unwrap_or_default();
    Property::new(
        &format!("model.{}-loss-fd", family.name()),
        report.max_rel_err,
        MODEL_GRAD_TOL,
        report.checked,
        detail,
    )
}

/// Hand-traced confidence examples.
pub fn confidence_hand_trace() -> Property {
    // columns: blank, mask, a, b
    let probs = |rows: &[[f64; 4]]| FramePosteriors::from_probs(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>());
    let p1 = probs(&[
        [0.1, 0.0, 0.9, 0.0],
        [0.5, 0.0, 0.25, 0.25],
        [0.4, 0.0, 0.0, 0.6],
        [0.2, 0.0, 0.0, 0.8],
    ])
    .expect("normalized");
    let a1 = Alignment::new(vec![2, BLANK_ID, 3, 3]).expect("valid");
    let p2 = probs(&[[0.7, 0.0, 0.3, 0.0], [0.3, 0.0, 0.7, 0.0]]).expect("normalized");
    let a2 = Alignment::new(vec![2, 2]).expect("valid");
    let close = |x: &[f64], y: &[f64]| x.len() == y.len() && x.iter().zip(y).all(|(a, b)| (a - b).abs() < 1e-12);
    let ok = match (token_confidences(&a1, &p1), token_confidences(&a2, &p2)) {
        (Ok((t1, c1)), Ok((t2, c2))) => {
            t1.ids() == [2, 3] && close(&c1.0, &[0.9, 0.8]) && t2.ids() == [2] && close(&c2.0, &[0.7])
        }
        _ => false,
    };
    Property::exact("masking.confidence-hand-trace", ok, 2, "")
}

/// `m(K) = 0`, `m(k) ≤ len`, and non-increasing in `k`, for every length up
/// to 64 and every `K` up to 32.
pub fn decay_schedule() -> Property {
    let mut cases = 0;
    for len in 0..=64 {
        for k_total in 1..=32 {
            let mut prev = usize::MAX;
            for k in 1..=k_total {
                cases += 1;
                let m = match decay_count(len, k_total, k) {
                    Ok(m) => m,
                    Err(e) => return Property::exact("masking.decay-schedule", false, cases, e.to_string()),
                };
                if m > len || m > prev || (k == k_total && m != 0) {
                    return Property::exact(
                        "masking.decay-schedule",
                        false,
                        cases,
                        format!("len {len}, K {k_total}, k {k}: m = {m}"),
                    );
                }
                prev = m;
            }
        }
    }
    Property::exact("masking.decay-schedule", true, cases, "")
}

pub fn mask_lowest_rules() -> Property {
    let hyp = seq(&[2, 3, 4]);
    let conf = ConfidenceVector(vec![0.5, 0.5, 0.9]);
    let ok = [
        mask_lowest(&hyp, &conf, 1).map(|m| m.masked_positions() == vec![0]),
        mask_lowest(&hyp, &conf, 0).map(|m| m.mask_count() == 0),
        mask_lowest(&hyp, &conf, 3).map(|m| m.mask_count() == 3),
    ]
    .into_iter()
    .all(|r| r.unwrap_or(false))
        && mask_lowest(&hyp, &conf, 4).is_err();
    Property::exact("masking.mask-lowest", ok, 4, "")
}

pub fn collapse_rules() -> Property {
    let a = Alignment::new(vec![2, 2, BLANK_ID, 2, 3, 3]).expect("valid");
    let ok_ctc = collapse_ctc(&a).ids() == [2, 2, 3];
    let z = RnntAlignment::new(vec![2, BLANK_ID, 2, 3, BLANK_ID], 2).expect("valid");
    let ok_rnnt = collapse_rnnt(&z).ids() == [2, 2, 3];
    Property::exact("vocab.collapse", ok_ctc && ok_rnnt, 2, "")
}

pub fn edit_distance_rules() -> Property {
    let same = error_rate(&[2, 3, 4], &[2, 3, 4]).rate == 0.0;
    let swap = edit_distance(&[2, 3], &[3, 2]).total() == 2;
    let c = edit_distance(&[2, 3, 4, 5], &[2, 6, 4]);
    let mixed = c.substitutions + c.deletions + c.insertions == 2 && c.deletions >= 1;
    Property::exact("edit.distance", same && swap && mixed, 3, "")
}

pub fn logspace_stability() -> Property {
    let ln2 = 2f64.ln();
    let errs = [
        (log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + ln2)).abs(),
        (log_sum_exp(&[-1000.0, -1000.0]) - (-1000.0 + ln2)).abs(),
        (log_add(-800.0, -800.0) - (-800.0 + ln2)).abs(),
        if log_add(f64::NEG_INFINITY, f64::NEG_INFINITY) == f64::NEG_INFINITY { 0.0 } else { 1.0 },
    ];
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    Property::new("logspace.stability", if worst.is_nan() { f64::INFINITY } else { worst }, 1e-12, errs.len(), "")
}

/// Runs the whole inventory.
pub fn verify_all(seed: u64) -> VerifyReport {
    let mut properties = vec![
        ctc_fixed_cases(),
        ctc_equivalence(200, seed, |p, w| ctc_loss(p, w).map_or(f64::NAN, |r| r.loss)),
        rnnt_fixed_case(),
        rnnt_equivalence(100, seed),
        ctc_gradient(20, seed),
        rnnt_gradient(20, seed),
    ];
    properties.extend(autodiff_ops(seed));
    properties.push(model_gradient(Family::Bertctc, seed));
    properties.push(model_gradient(Family::BertctcSlu, seed));
    properties.extend([
        confidence_hand_trace(),
        decay_schedule(),
        mask_lowest_rules(),
        collapse_rules(),
        edit_distance_rules(),
        logspace_stability(),
    ]);
    VerifyReport { properties }
}
