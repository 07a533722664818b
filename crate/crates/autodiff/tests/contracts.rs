use bertctc_autodiff::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn store(entries: &[(&str, Tensor)]) -> ParamStore {
    let mut s = ParamStore::new();
    for (n, t) in entries {
        s.insert(*n, t.clone()).unwrap();
    }
    s
}

#[test]
fn matmul_identity() {
    let tape = Tape::new();
    let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![-4.0, 5.0, 0.5]]).unwrap();
    let i = tape.constant(Tensor::identity(2));
    let xv = tape.constant(x.clone());
    let y = tape.matmul(i, xv).unwrap();
    assert_eq!(*tape.value(y), x);
}

#[test]
fn softmax_of_equal_row_is_uniform() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::filled(1, 5, 2.5));
    let p = tape.softmax_lastdim(x);
    for &v in tape.value(p).data() {
        assert!((v - 0.2).abs() < 1e-15);
    }
}

#[test]
fn chain_rule_example() {
    let s = store(&[("x", Tensor::scalar(3.0))]);
    let tape = Tape::new();
    let x = tape.param(&s, "x").unwrap();
    let y = tape.scale(x, 2.0);
    let z = tape.mul(y, y).unwrap();
    let g = tape.backward(z).unwrap();
    assert_eq!(g.get("x").unwrap().item(), 24.0);
}

#[test]
fn sum_gives_all_ones_and_disconnected_gets_zero() {
    let s = store(&[("x", Tensor::filled(2, 3, 0.7)), ("unused", Tensor::filled(1, 4, 9.0))]);
    let tape = Tape::new();
    let x = tape.param(&s, "x").unwrap();
    let _ = tape.param(&s, "unused").unwrap();
    let root = tape.sum(x);
    let g = tape.backward(root).unwrap();
    assert!(g.get("x").unwrap().data().iter().all(|&v| v == 1.0));
    let u = g.get("unused").expect("present in map");
    assert_eq!(u.shape(), [1, 4]);
    assert!(u.data().iter().all(|&v| v == 0.0));
}

#[test]
fn frozen_leaves_get_no_gradient() {
    let s = store(&[("w", Tensor::filled(1, 3, 2.0)), ("e", Tensor::filled(1, 3, 1.0))]);
    let tape = Tape::new();
    let w = tape.param(&s, "w").unwrap();
    let e = tape.frozen_param(&s, "e").unwrap();
    let c = tape.constant(Tensor::filled(1, 3, 5.0));
    let m = tape.mul(w, e).unwrap();
    let m = tape.mul(m, c).unwrap();
    let root = tape.sum(m);
    let g = tape.backward(root).unwrap();
    assert!(g.get("e").is_none());
    assert!(g.get_value(e).is_none());
    assert!(g.get_value(c).is_none());
    assert_eq!(g.get("w").unwrap().data(), &[5.0, 5.0, 5.0]);
}

#[test]
fn non_scalar_root_is_contract_error() {
    let tape = Tape::new();
    let x = tape.variable(Tensor::zeros(2, 2));
    assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
}

#[test]
fn shape_errors_name_the_op() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::zeros(2, 3));
    let b = tape.constant(Tensor::zeros(2, 3));
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    assert!(matches!(tape.add_row(a, b), Err(Error::Shape { op: "add_row", .. })));
    assert!(matches!(
        tape.scaled_dot_attention(a, b, b, 2, None),
        Err(Error::Shape { op: "scaled_dot_attention", .. })
    ));
    assert!(matches!(tape.slice_rows(a, 1, 2), Err(Error::Shape { op: "slice_rows", .. })));
}

#[test]
fn backward_is_deterministic() {
    let s = store(&[("w", Tensor::randn(4, 4, 1.0, &mut ChaCha8Rng::seed_from_u64(3)))]);
    let run = || {
        let tape = Tape::new();
        let w = tape.param(&s, "w").unwrap();
        let h = tape.matmul(w, w).unwrap();
        let a = tape.scaled_dot_attention(h, w, h, 2, None).unwrap();
        let r = tape.mean(a);
        tape.backward(r).unwrap().get("w").unwrap().clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn attention_rows_normalized_and_mask_respected() {
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q = tape.constant(Tensor::randn(3, 4, 1.0, &mut rng));
    let k = tape.constant(Tensor::randn(5, 4, 1.0, &mut rng));
    let mut mask = Tensor::zeros(3, 5);
    mask.data_mut()[4] = f64::NEG_INFINITY;
    let out = tape.scaled_dot_attention(q, k, k, 2, Some(&mask)).unwrap();
    let maps = tape.attention_weights(out).unwrap();
    assert_eq!(maps.len(), 2);
    for m in &maps {
        for r in 0..3 {
            assert!((m.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(m.get(0, 4), 0.0);
    }
}

fn grads_for(s: &ParamStore, name: &str, coeff: f64) -> Gradients {
    let tape = Tape::new();
    let p = tape.param(s, name).unwrap();
    let c = tape.constant(Tensor::filled(1, 1, coeff));
    let m = tape.mul(p, c).unwrap();
    let r = tape.sum(m);
    tape.backward(r).unwrap()
}

#[test]
fn sgd_examples() {
    let mut s = store(&[("p", Tensor::scalar(1.0))]);
    let g = grads_for(&s, "p", 2.0);
    sgd_step(&mut s, &g, 0.1).unwrap();
    assert!((s.get("p").unwrap().item() - 0.8).abs() < 1e-15);

    let mut s = store(&[("p", Tensor::scalar(1.0))]);
    let g = grads_for(&s, "p", 0.0);
    sgd_step(&mut s, &g, 0.1).unwrap();
    assert_eq!(s.get("p").unwrap().item(), 1.0);

    let g = grads_for(&s, "p", 2.0);
    sgd_step(&mut s, &g, 0.0).unwrap();
    assert_eq!(s.get("p").unwrap().item(), 1.0);
}

#[test]
fn nan_gradient_aborts_with_name() {
    let mut s = store(&[("enc.w", Tensor::scalar(1.0))]);
    let g = grads_for(&s, "enc.w", f64::NAN);
    let err = Sgd::new(0.1).step(&mut s, &g).unwrap_err();
    assert!(matches!(&err, Error::NonFiniteGradient { name } if name == "enc.w"));
    assert!(err.to_string().contains("enc.w"));
    assert_eq!(s.get("enc.w").unwrap().item(), 1.0);
}

#[test]
fn momentum_and_clipping() {
    let mut s = store(&[("p", Tensor::scalar(0.0))]);
    let mut opt = Sgd::new(1.0).with_momentum(0.5).with_clip_norm(1.0);
    let g = grads_for(&s, "p", 4.0);
    let norm = opt.step(&mut s, &g).unwrap();
    assert_eq!(norm, 4.0);
    assert!((s.get("p").unwrap().item() + 1.0).abs() < 1e-15);
    opt.step(&mut s, &g).unwrap();
    // v = 0.5·1 + 1 = 1.5
    assert!((s.get("p").unwrap().item() + 2.5).abs() < 1e-15);
}

#[test]
fn checkpoint_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = ParamStore::new();
    s.insert_randn("a.w", 3, 4, &mut rng).unwrap();
    s.insert_randn("b", 1, 2, &mut rng).unwrap();
    let dir = std::env::temp_dir().join(format!("ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("m.json");
    s.save(&path).unwrap();
    assert_eq!(ParamStore::load(&path).unwrap(), s);
    let bad = s.to_json().unwrap().replace("\"format_version\":1", "\"format_version\":9");
    assert!(matches!(ParamStore::from_json(&bad), Err(Error::Checkpoint(_))));
    assert!(s.clone().insert("b", Tensor::scalar(0.0)).is_err());
    std::fs::remove_dir_all(dir).ok();
}
