//! End-to-end acceptance run: exact-oracle checks, gradient suites, the
//! decoding algebra, the trained-model comparisons, determinism and speed.
//! Prints one PASS/FAIL line per criterion and exits non-zero on failure.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use bertctc_core::ctc_loss;
use bertctc_harness::bench::bench;
use bertctc_harness::config::{EmbedderKind, ExperimentConfig};
use bertctc_harness::dataset::{generate_dataset, Dataset};
use bertctc_harness::eval::{evaluate, run_decoder, DecoderKind, EvalOptions};
use bertctc_harness::pipeline::{embedder_for, oracle_embedder, train_mlm, train_model};
use bertctc_harness::trace::check_trace;
use bertctc_harness::verify::{self, Property};
use bertctc_model::{decode_encoded, AsrModel, DecodeConfig, Embedder, Family, MaskPredictModel, ToyMlm};

const SEEDS: [u64; 3] = [1, 2, 3];

struct Outcome {
    passed: bool,
    summary: String,
}

fn from_properties(props: &[Property]) -> Outcome {
    let failed: Vec<_> = props.iter().filter(|p| !p.passed).collect();
    let summary = props
        .iter()
        .map(|p| format!("{} {:.1e}/{:.0e}", p.name, p.observed, p.tolerance))
        .collect::<Vec<_>>()
        .join(", ");
    Outcome {
        passed: failed.is_empty(),
        summary: if failed.is_empty() {
            summary
        } else {
            format!("failing: {}; {summary}", failed.iter().map(|p| p.name.as_str()).collect::<Vec<_>>().join(", "))
        },
    }
}

struct Runner {
    all_passed: bool,
}

impl Runner {
    fn run(&mut self, id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let out = f();
        let took = start.elapsed();
        let in_time = took <= budget;
        let passed = out.passed && in_time;
        self.all_passed &= passed;
        println!(
            "[{}] {id}/9 {name}: {}{} ({:.1}s, budget {}s)",
            if passed { "PASS" } else { "FAIL" },
            out.summary,
            if in_time { "" } else { "; over time budget" },
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
}

struct SeedRun {
    cfg: ExperimentConfig,
    ds: Dataset,
    mlm: ToyMlm,
    ctc: AsrModel,
    bertctc: AsrModel,
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn wer(model: &AsrModel, decoder: DecoderKind, ds: &Dataset) -> bertctc_harness::eval::DecoderReport {
    run_decoder(model, decoder, &ds.test, &ds.task.vocab, false).unwrap().0
}

fn main() -> ExitCode {
    let mut r = Runner { all_passed: true };
    let seed = 20;

    r.run(1, "ctc-enumeration", Duration::from_secs(10), || {
        from_properties(&[
            verify::ctc_fixed_cases(),
            verify::ctc_equivalence(200, seed, |p, w| ctc_loss(p, w).map_or(f64::NAN, |r| r.loss)),
        ])
    });

    r.run(2, "rnnt-enumeration", Duration::from_secs(10), || {
        from_properties(&[verify::rnnt_fixed_case(), verify::rnnt_equivalence(100, seed)])
    });

    r.run(3, "gradient-suites", Duration::from_secs(60), || {
        let mut props = vec![verify::ctc_gradient(20, seed), verify::rnnt_gradient(20, seed)];
        props.extend(verify::autodiff_ops(seed));
        props.push(verify::model_gradient(Family::Bertctc, seed));
        props.push(verify::model_gradient(Family::BertctcSlu, seed));
        from_properties(&props)
    });

    r.run(4, "mask-predict-algebra", Duration::from_secs(5), || {
        from_properties(&[
            verify::confidence_hand_trace(),
            verify::decay_schedule(),
            verify::mask_lowest_rules(),
        ])
    });

    r.run(5, "oracle-embedder-refinement", Duration::from_secs(15 * 60), || {
        let mut cfg = ExperimentConfig::default_with_seed(SEEDS[0]);
        cfg.embedder = EmbedderKind::Oracle;
        let ds = generate_dataset(&cfg.task, &cfg.data, cfg.seed).unwrap();
        let (model, _) = train_model(&cfg, Family::Bertctc, &ds, Some(oracle_embedder(&ds)), |_, _, _| Ok(())).unwrap();
        let points: Vec<_> = [1, 5, 10]
            .into_iter()
            .map(|k| wer(&model, DecoderKind::MaskPredict { iterations: k }, &ds))
            .collect();
        let amb: Vec<f64> = points.iter().map(|p| p.ambiguous_error.unwrap_or(0.0)).collect();
        let w: Vec<f64> = points.iter().map(|p| p.wer.rate).collect();
        let halves = amb[2] <= 0.5 * amb[0];
        let monotone = w.windows(2).all(|p| p[1] <= p[0] + 0.01);
        Outcome {
            passed: halves && monotone,
            summary: format!(
                "homophone error K=1/5/10 {}/{}/{}, WER {}/{}/{}",
                pct(amb[0]),
                pct(amb[1]),
                pct(amb[2]),
                pct(w[0]),
                pct(w[1]),
                pct(w[2])
            ),
        }
    });

    let mut runs: Vec<SeedRun> = Vec::new();
    r.run(6, "bertctc-beats-ctc", Duration::from_secs(30 * 60), || {
        let mut lines = Vec::new();
        let mut all = true;
        for s in SEEDS {
            let cfg = ExperimentConfig::default_with_seed(s);
            let ds = generate_dataset(&cfg.task, &cfg.data, cfg.seed).unwrap();
            let (mlm, _) = train_mlm(&cfg, &ds, |_| Ok(())).unwrap();
            let emb = embedder_for(&cfg, &ds, Some(mlm.clone())).unwrap();
            let (ctc, _) = train_model(&cfg, Family::Ctc, &ds, None, |_, _, _| Ok(())).unwrap();
            let (bertctc, _) = train_model(&cfg, Family::Bertctc, &ds, Some(emb), |_, _, _| Ok(())).unwrap();
            let base = wer(&ctc, DecoderKind::CtcGreedy, &ds).wer.rate;
            let ours = wer(&bertctc, DecoderKind::MaskPredict { iterations: cfg.decode.iterations }, &ds).wer.rate;
            let ok = ours <= 0.8 * base;
            all &= ok;
            lines.push(format!("seed {s}: CTC {} vs BERT-CTC {}", pct(base), pct(ours)));
            runs.push(SeedRun {
                cfg,
                ds,
                mlm,
                ctc,
                bertctc,
            });
        }
        Outcome {
            passed: all,
            summary: lines.join(", "),
        }
    });

    r.run(7, "slu-intent", Duration::from_secs(15 * 60), || {
        let run = &runs[0];
        let emb: Arc<dyn Embedder> = Arc::new(run.mlm.clone().freeze());
        let (slu, _) = train_model(&run.cfg, Family::BertctcSlu, &run.ds, Some(emb), |_, _, _| Ok(())).unwrap();
        let acc = |k| wer(&slu, DecoderKind::MaskPredict { iterations: k }, &run.ds).intent_accuracy.unwrap();
        let (a1, a10) = (acc(1), acc(10));
        let majority = bertctc_harness::eval::majority_intent_accuracy(&run.ds.test).unwrap();
        Outcome {
            passed: a10 >= a1 && a1 > majority && a10 > majority,
            summary: format!("intent accuracy K=1 {}, K=10 {}, majority class {}", pct(a1), pct(a10), pct(majority)),
        }
    });

    r.run(8, "determinism-and-traces", Duration::from_secs(15 * 60), || {
        let run = &runs[0];
        let examples = &run.ds.test[..50];
        let opts = EvalOptions {
            seed: run.cfg.seed,
            split: "test",
            k_list: &run.cfg.decode.k_list,
            frame_period_ms: run.cfg.frame_period_ms,
            early_exit: false,
        };
        let models = [&run.ctc, &run.bertctc];
        let a = evaluate(&models, examples, &run.ds.task.vocab, &opts).unwrap();
        let b = evaluate(&models, examples, &run.ds.task.vocab, &opts).unwrap();
        let identical = serde_json::to_string(&a.without_timing()).unwrap()
            == serde_json::to_string(&b.without_timing()).unwrap();
        let k = run.cfg.decode.iterations;
        let cfg = DecodeConfig {
            iterations: k,
            trace: true,
            early_exit: false,
        };
        let mut records = 0;
        let mut bad = Vec::new();
        for ex in examples {
            let enc = MaskPredictModel::encode(&run.bertctc, &ex.utterance.features).unwrap();
            let trace = decode_encoded(&run.bertctc, &enc, &cfg).unwrap().trace.unwrap();
            records += trace.records.len();
            if let Err(e) = check_trace(&trace, k) {
                bad.push(format!("{}: {e}", ex.id));
            }
        }
        Outcome {
            passed: identical && bad.is_empty(),
            summary: format!(
                "reports identical: {identical}; {records} trace records over {} utterances, {} inconsistent{}",
                examples.len(),
                bad.len(),
                bad.first().map_or(String::new(), |b| format!(" ({b})"))
            ),
        }
    });

    r.run(9, "real-time-factor", Duration::from_secs(15 * 60), || {
        let run = &runs[0];
        let examples = &run.ds.test[..50];
        let fp = run.cfg.frame_period_ms;
        let single = bench(&run.ctc, &[DecoderKind::CtcGreedy], examples, 3, fp).unwrap();
        let ks = [DecoderKind::MaskPredict { iterations: 1 }, DecoderKind::MaskPredict { iterations: 20 }];
        let iterative = bench(&run.bertctc, &ks, examples, 3, fp).unwrap();
        let ctc = single.rtf(DecoderKind::CtcGreedy).unwrap();
        let (k1, k20) = (iterative.rtf(ks[0]).unwrap(), iterative.rtf(ks[1]).unwrap());
        Outcome {
            passed: ctc < k20 && k20 / k1 <= 25.0,
            summary: format!("RTF CTC {ctc:.5}, K=1 {k1:.5}, K=20 {k20:.5}, K=20/K=1 {:.2}", k20 / k1),
        }
    });

    if r.all_passed {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: some criteria FAILED");
        ExitCode::FAILURE
    }
}
