//! Exact-oracle and property checks for the lattice algorithms.

use bertctc_core::*;
use proptest::prelude::*;

fn vocab(regular: usize) -> Vocabulary {
    Vocabulary::from_regular((0..regular).map(|i| format!("t{i}"))).unwrap()
}

fn seq(ids: &[usize]) -> TokenSequence {
    TokenSequence::new(ids.to_vec()).unwrap()
}

/// Random logits, random target (possibly infeasible).
fn ctc_case() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<usize>)> {
    (1usize..=6, 1usize..=3).prop_flat_map(|(frames, regular)| {
        let v = regular + 2;
        (
            Just(frames),
            Just(regular),
            prop::collection::vec(-3.0f64..3.0, frames * v),
            prop::collection::vec(2usize..2 + regular, 0..=frames),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ctc_matches_enumeration((frames, regular, logits, target) in ctc_case()) {
        let v = vocab(regular);
        let post = FramePosteriors::from_logits(frames, v.size(), &logits).unwrap();
        let w = seq(&target);
        let set = enumerate_ctc_alignments(&w, frames, &v).unwrap();
        let brute = ctc_brute_force_nll(&set, &post.rows());
        let r = ctc_loss(&post, &w).unwrap();
        if set.is_empty() {
            prop_assert!(!r.feasible);
            prop_assert_eq!(r.loss, f64::INFINITY);
        } else {
            prop_assert!(r.feasible);
            prop_assert!((r.loss - brute).abs() < 1e-9, "dp {} brute {}", r.loss, brute);
            // probability bound
            prop_assert!(r.loss >= -1e-12);
        }
    }

    #[test]
    fn enumerated_alignments_collapse_to_target((frames, regular, _l, target) in ctc_case()) {
        let v = vocab(regular);
        let w = seq(&target);
        let set = enumerate_ctc_alignments(&w, frames, &v).unwrap();
        for a in &set {
            prop_assert_eq!(collapse_ctc(a), w.clone());
        }
        if frames < w.min_ctc_frames() {
            prop_assert!(set.is_empty());
        }
    }

    #[test]
    fn best_path_alignment_is_in_enumerated_set((frames, regular, logits, _t) in ctc_case()) {
        let v = vocab(regular);
        let post = FramePosteriors::from_logits(frames, v.size(), &logits).unwrap();
        let (a, w) = best_path_decode(&post);
        let set = enumerate_ctc_alignments(&w, frames, &v).unwrap();
        prop_assert!(set.contains(&a));
    }

    #[test]
    fn occupation_rows_sum_to_one((frames, regular, logits, target) in ctc_case()) {
        let v = vocab(regular);
        let post = FramePosteriors::from_logits(frames, v.size(), &logits).unwrap();
        let r = ctc_loss(&post, &seq(&target)).unwrap();
        if r.feasible {
            for t in 0..frames {
                prop_assert!((r.occupation_row(t).iter().sum::<f64>() - 1.0).abs() < 1e-6);
                prop_assert!(r.grad_row(t).iter().sum::<f64>().abs() < 1e-6);
            }
        }
    }

    #[test]
    fn feasibility_is_monotone_in_frames(target in prop::collection::vec(2usize..5, 0..6), frames in 1usize..12) {
        let w = seq(&target);
        let post = |t: usize| FramePosteriors::from_probs(&vec![vec![0.2; 5]; t]).unwrap();
        let here = ctc_loss(&post(frames), &w).unwrap().feasible;
        let next = ctc_loss(&post(frames + 1), &w).unwrap().feasible;
        prop_assert!(!here || next);
    }

    #[test]
    fn ctc_gradient_matches_finite_differences(
        (frames, regular, logits, target) in ctc_case()
    ) {
        let v = vocab(regular).size();
        let w = seq(&target);
        let eval = |l: &[f64]| ctc_loss(&FramePosteriors::from_logits(frames, v, l).unwrap(), &w).unwrap();
        let r = eval(&logits);
        prop_assume!(r.feasible);
        let h = 1e-4;
        for i in 0..logits.len() {
            let mut lp = logits.clone();
            let mut lm = logits.clone();
            lp[i] += h;
            lm[i] -= h;
            let fd = (eval(&lp).loss - eval(&lm).loss) / (2.0 * h);
            let an = r.grad_logits[i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
            prop_assert!(rel < 1e-4, "entry {i}: analytic {an} fd {fd}");
        }
    }

    #[test]
    fn collapse_is_idempotent(ids in prop::collection::vec(0usize..5, 0..12)) {
        let ids: Vec<usize> = ids.into_iter().map(|x| if x == MASK_ID { BLANK_ID } else { x }).collect();
        let once = collapse_ctc_ids(&ids).unwrap();
        let twice = collapse_ctc_ids(once.ids()).unwrap();
        prop_assert!(twice.len() <= once.len());
        // re-collapsing merges nothing only when the output has no adjacent repeats
        if once.repeat_count() == 0 {
            prop_assert_eq!(twice, once);
        }
    }

    #[test]
    fn rnnt_matches_path_enumeration(
        frames in 1usize..=6,
        target in prop::collection::vec(2usize..5, 0..=4),
        seed in prop::collection::vec(-2.0f64..2.0, 7 * 5 * 5),
    ) {
        let n = target.len();
        prop_assume!(frames + n <= 10);
        let w = seq(&target);
        let v = 5;
        let mut data = Vec::new();
        for node in 0..(frames + 1) * (n + 1) {
            data.extend(bertctc_core::logspace::log_softmax(&seed[node * v..(node + 1) * v]));
        }
        let grid = JointGrid::from_log_probs(frames, n, v, data).unwrap();
        let paths = enumerate_rnnt_paths(&w, frames).unwrap();
        let binom = (1..=n).fold(1usize, |acc, i| acc * (frames + i) / i);
        prop_assert_eq!(paths.len(), binom);
        let total: f64 = paths.iter().map(|z| rnnt_path_log_prob(&grid, z).exp()).sum();
        let loss = rnnt_loss(&grid, &w).unwrap();
        prop_assert!((loss + total.ln()).abs() < 1e-9);
        for z in &paths {
            prop_assert_eq!(collapse_rnnt(z), w.clone());
        }
    }

    #[test]
    fn rnnt_gradient_matches_finite_differences(
        frames in 1usize..=4,
        target in prop::collection::vec(2usize..4, 0..=3),
        logits in prop::collection::vec(-2.0f64..2.0, 5 * 4 * 4),
    ) {
        let n = target.len();
        let w = seq(&target);
        let v = 4;
        let nodes = (frames + 1) * (n + 1);
        let logits = &logits[..nodes * v];
        let build = |l: &[f64]| {
            let data = l.chunks(v).flat_map(bertctc_core::logspace::log_softmax).collect();
            JointGrid::from_log_probs(frames, n, v, data).unwrap()
        };
        let r = rnnt_loss_with_grad(&build(logits), &w).unwrap();
        let h = 1e-4;
        for i in 0..logits.len() {
            let mut lp = logits.to_vec();
            let mut lm = logits.to_vec();
            lp[i] += h;
            lm[i] -= h;
            let fd = (rnnt_loss(&build(&lp), &w).unwrap() - rnnt_loss(&build(&lm), &w).unwrap()) / (2.0 * h);
            let an = r.grad_logits[i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
            prop_assert!(rel < 1e-4, "entry {i}: analytic {an} fd {fd}");
        }
    }

    #[test]
    fn edit_distance_is_a_metric(
        a in prop::collection::vec(0u8..4, 0..8),
        b in prop::collection::vec(0u8..4, 0..8),
        c in prop::collection::vec(0u8..4, 0..8),
    ) {
        let d = |x: &[u8], y: &[u8]| edit_distance(x, y).total();
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        prop_assert_eq!(d(&a, &a), 0);
    }
}

#[test]
fn fixed_ctc_cases() {
    let v = vocab(2);
    let third = 1.0 / 3.0;
    let uniform = |t: usize| FramePosteriors::from_probs(&vec![vec![third, 0.0, third, third]; t]).unwrap();
    let w = seq(&[2]);
    let set = enumerate_ctc_alignments(&w, 3, &v).unwrap();
    assert_eq!(set.len(), 6);
    let loss = ctc_loss(&uniform(3), &w).unwrap().loss;
    assert!((loss - -(6.0f64 / 27.0).ln()).abs() < 1e-12);
    let loss = ctc_loss(&uniform(2), &seq(&[2, 3])).unwrap().loss;
    assert!((loss - 9f64.ln()).abs() < 1e-12);
}

#[test]
fn edit_distance_swap_is_minimal_two() {
    // exhaustive check: no single edit turns (a,b) into (b,a)
    let c = edit_distance(&[2, 3], &[3, 2]);
    assert_eq!(c.total(), 2);
}
