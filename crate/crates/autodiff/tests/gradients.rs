//! Every op's reverse-mode gradient against central finite differences.

use bertctc_autodiff::{GruWeights, Tape, Tensor, Value};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Builds a scalar from the inputs on a fresh tape. Non-scalar outputs are
/// reduced against a fixed random projection so every entry is exercised.
fn check<F>(inputs: &[Tensor], seed: u64, build: F) -> Result<(), TestCaseError>
where
    F: Fn(&Tape, &[Value]) -> Value,
{
    let eval = |ts: &[Tensor], grad: bool| {
        let tape = Tape::new();
        let vs: Vec<Value> = ts.iter().map(|t| tape.variable(t.clone())).collect();
        let out = build(&tape, &vs);
        let shape = tape.shape(out);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let proj = tape.constant(Tensor::randn(shape[0], shape[1], 1.0, &mut rng));
        let prod = tape.mul(out, proj).unwrap();
        let root = tape.sum(prod);
        let value = tape.scalar(root);
        let grads = grad.then(|| {
            let g = tape.backward(root).unwrap();
            vs.iter()
                .zip(ts)
                .map(|(v, t)| g.get_value(*v).map_or(vec![0.0; t.len()], <[f64]>::to_vec))
                .collect::<Vec<_>>()
        });
        (value, grads)
    };
    let (_, analytic) = eval(inputs, true);
    let analytic = analytic.unwrap();
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= STEP;
            let fd = (eval(&plus, false).0 - eval(&minus, false).0) / (2.0 * STEP);
            let e = rel_err(analytic[i][j], fd);
            prop_assert!(
                e < TOL,
                "input {i} entry {j}: analytic {} vs fd {fd} (rel {e})",
                analytic[i][j]
            );
        }
    }
    Ok(())
}

fn mat(rows: usize, cols: usize, seed: u64) -> Tensor {
    Tensor::randn(rows, cols, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=16, 1usize..=16)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matmul_grad((n, k) in dims(), m in 1usize..=16, seed in any::<u64>()) {
        check(&[mat(n, k, seed), mat(k, m, seed ^ 1)], seed, |t, v| t.matmul(v[0], v[1]).unwrap())?;
    }

    #[test]
    fn add_mul_grad((r, c) in dims(), seed in any::<u64>()) {
        let ins = [mat(r, c, seed), mat(r, c, seed ^ 1)];
        check(&ins, seed, |t, v| t.add(v[0], v[1]).unwrap())?;
        check(&ins, seed, |t, v| t.mul(v[0], v[1]).unwrap())?;
        // fan-out: x used twice
        check(&ins[..1], seed, |t, v| t.mul(v[0], v[0]).unwrap())?;
    }

    #[test]
    fn add_row_and_affine_grad((r, c) in dims(), seed in any::<u64>()) {
        check(&[mat(r, c, seed), mat(1, c, seed ^ 1)], seed, |t, v| t.add_row(v[0], v[1]).unwrap())?;
        check(&[mat(r, c, seed)], seed, |t, v| t.affine(v[0], -1.7, 0.3))?;
    }

    #[test]
    fn pointwise_grad((r, c) in dims(), seed in any::<u64>()) {
        let x = [mat(r, c, seed)];
        check(&x, seed, |t, v| t.sigmoid(v[0]))?;
        check(&x, seed, |t, v| t.tanh(v[0]))?;
        check(&x, seed, |t, v| t.gelu(v[0]))?;
    }

    #[test]
    fn relu_grad((r, c) in dims(), seed in any::<u64>()) {
        // keep entries away from the kink
        let mut x = mat(r, c, seed);
        for v in x.data_mut() {
            *v += if *v >= 0.0 { 0.1 } else { -0.1 };
        }
        check(&[x], seed, |t, v| t.relu(v[0]))?;
    }

    #[test]
    fn softmax_family_grad((r, c) in dims(), seed in any::<u64>()) {
        let x = [mat(r, c, seed)];
        check(&x, seed, |t, v| t.softmax_lastdim(v[0]))?;
        check(&x, seed, |t, v| t.log_softmax_lastdim(v[0]))?;
    }

    #[test]
    fn layernorm_grad(r in 1usize..=16, c in 2usize..=16, seed in any::<u64>()) {
        let ins = [mat(r, c, seed), mat(1, c, seed ^ 1), mat(1, c, seed ^ 2)];
        check(&ins, seed, |t, v| t.layernorm(v[0], v[1], v[2]).unwrap())?;
    }

    #[test]
    fn row_ops_grad(
        (r, c) in dims(),
        ids in prop::collection::vec(0usize..16, 1..16),
        seed in any::<u64>(),
    ) {
        let ids: Vec<usize> = ids.iter().map(|i| i % r).collect();
        check(&[mat(r, c, seed)], seed, |t, v| t.gather_rows(v[0], &ids).unwrap())?;
        check(&[mat(r, c, seed), mat(3, c, seed ^ 1)], seed, |t, v| {
            t.concat_rows(&[v[1], v[0], v[1]]).unwrap()
        })?;
        let start = ids[0];
        check(&[mat(r, c, seed)], seed, |t, v| t.slice_rows(v[0], start, r - start).unwrap())?;
    }

    #[test]
    fn attention_grad(
        l in 1usize..=8,
        s in 1usize..=8,
        heads in 1usize..=3,
        dh in 1usize..=4,
        masked in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let d = heads * dh;
        let ins = [mat(l, d, seed), mat(s, d, seed ^ 1), mat(s, d, seed ^ 2)];
        // block the last key for every query except the first when masked
        let mask = masked.then(|| {
            let mut m = Tensor::zeros(l, s);
            if s > 1 {
                for i in 1..l {
                    m.data_mut()[i * s + s - 1] = f64::NEG_INFINITY;
                }
            }
            m
        });
        check(&ins, seed, |t, v| t.scaled_dot_attention(v[0], v[1], v[2], heads, mask.as_ref()).unwrap())?;
    }

    #[test]
    fn reductions_grad((r, c) in dims(), seed in any::<u64>()) {
        let x = [mat(r, c, seed)];
        check(&x, seed, |t, v| t.mean(v[0]))?;
        check(&x, seed, |t, v| t.sum(v[0]))?;
    }

    #[test]
    fn cross_entropy_grad((r, c) in dims(), seed in any::<u64>()) {
        let targets: Vec<usize> = (0..r).map(|i| (i * 7 + seed as usize) % c).collect();
        check(&[mat(r, c, seed)], seed, |t, v| t.cross_entropy(v[0], &targets).unwrap())?;
    }

    #[test]
    fn gru_cell_grad(input in 1usize..=6, hidden in 1usize..=6, seed in any::<u64>()) {
        let mut ins = vec![mat(1, input, seed), mat(1, hidden, seed ^ 1)];
        for g in 0..3 {
            ins.push(mat(input, hidden, seed ^ (10 + g)));
            ins.push(mat(hidden, hidden, seed ^ (20 + g)));
            ins.push(mat(1, hidden, seed ^ (30 + g)));
        }
        check(&ins, seed, |t, v| {
            let w = GruWeights {
                w_z: v[2], u_z: v[3], b_z: v[4],
                w_r: v[5], u_r: v[6], b_r: v[7],
                w_n: v[8], u_n: v[9], b_n: v[10],
            };
            t.gated_recurrent_cell(v[0], v[1], &w).unwrap()
        })?;
    }

    #[test]
    fn external_scalar_grad((r, c) in dims(), seed in any::<u64>()) {
        // f(x) = Σ x², supplied with its gradient 2x from outside the tape
        check(&[mat(r, c, seed)], seed, |t, v| {
            let x = t.tensor(v[0]);
            let value = x.data().iter().map(|a| a * a).sum();
            let g = Tensor::new(x.rows(), x.cols(), x.data().iter().map(|a| 2.0 * a).collect()).unwrap();
            let ext = t.external_scalar(value, vec![(v[0], g)]).unwrap();
            t.tanh(ext)
        })?;
    }
}

#[test]
fn mean_of_softmax_length_eight() {
    for seed in 0..20 {
        check(&[mat(1, 8, seed)], seed, |t, v| {
            let p = t.softmax_lastdim(v[0]);
            t.mean(p)
        })
        .unwrap();
    }
}

#[test]
fn deep_composite_grad() {
    // a small two-layer block with shared weights
    let ins = [mat(5, 6, 1), mat(6, 6, 2), mat(1, 6, 3), mat(1, 6, 4)];
    check(&ins, 7, |t, v| {
        let n = t.layernorm(v[0], v[2], v[3]).unwrap();
        let h = t.matmul(n, v[1]).unwrap();
        let a = t.scaled_dot_attention(h, h, h, 2, None).unwrap();
        let g = t.gelu(a);
        let o = t.matmul(g, v[1]).unwrap();
        t.add(o, v[0]).unwrap()
    })
    .unwrap();
}
