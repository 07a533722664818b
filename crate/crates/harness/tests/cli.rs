use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bertctc_harness::attention::AttentionSidecar;
use bertctc_harness::eval::{score_results, EvalReport};
use bertctc_harness::trace::TraceLine;

fn bertctc(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bertctc"))
        .args(args)
        .args(["--preset", "smoke", "--seed", "5", "--output-dir"])
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = bertctc(out, args);
    assert_eq!(o.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn csv_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn full_pipeline_runs_with_traces_reports_and_attention() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["generate"]);
    ok(out, &["train", "--family", "mlm"]);
    for f in ["ctc", "rnnt", "bertctc", "bertctc-slu"] {
        ok(out, &["train", "--family", f]);
        let rows = csv_rows(&out.join(f).join("loss.csv"));
        assert_eq!(rows.len(), 1 + 20);
        assert!(rows[0].starts_with("step,loss"));
    }

    // decode with traces: bracketed rendering and per-iteration records
    let trace_path = out.join("trace.jsonl");
    let stdout = ok(
        out,
        &["decode", "--family", "bertctc", "--iterations", "3", "--limit", "4", "--trace", trace_path.to_str().unwrap()],
    );
    let lines: Vec<TraceLine> = fs::read_to_string(&trace_path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(!lines.is_empty());
    for l in &lines {
        assert!((1..=3).contains(&l.record.iteration));
        assert_eq!(l.rendered.matches('[').count(), l.record.masked_positions.len());
        assert_eq!(l.rendered.split(' ').count(), l.record.hypothesis.len().max(1));
    }
    assert!(lines.iter().filter(|l| l.record.iteration == 3).all(|l| l.record.masked_positions.is_empty()));
    assert!(stdout.contains("test-00000"));

    // evaluation report is deterministic apart from timing and scores recompute
    ok(out, &["evaluate"]);
    let first: EvalReport = serde_json::from_str(&fs::read_to_string(out.join("eval/report-test.json")).unwrap()).unwrap();
    ok(out, &["evaluate"]);
    let second: EvalReport = serde_json::from_str(&fs::read_to_string(out.join("eval/report-test.json")).unwrap()).unwrap();
    assert_eq!(first.without_timing(), second.without_timing());
    assert_eq!(first.decoders.len(), 1 + 2 + 3 + 3);
    for d in &first.decoders {
        let (wer, cer) = score_results(&d.results);
        assert_eq!(wer, d.wer);
        assert_eq!(cer, d.cer);
    }
    let k_rows = csv_rows(&out.join("eval/wer_vs_k-test.csv"));
    assert_eq!(k_rows[0], "model,iterations,wer,ambiguous_error,intent_accuracy");
    assert_eq!(k_rows.len(), 1 + 2 * 2);

    ok(out, &["bench", "--limit", "3", "--repeats", "1"]);
    assert!(out.join("bench/bertctc.json").exists());

    ok(out, &["dump-attention", "--utterance", "test-00001"]);
    let adir = out.join("attention/test-00001");
    let side: AttentionSidecar = serde_json::from_str(&fs::read_to_string(adir.join("attention.json")).unwrap()).unwrap();
    assert_eq!(side.size, side.frames + side.tokens + 1);
    assert_eq!(side.boundaries, [side.frames, side.frames + 1]);
    assert_eq!(side.files.len(), side.layers * side.heads);
    for f in &side.files {
        let rows = csv_rows(&adir.join(f));
        assert_eq!(rows.len(), side.size);
        for r in rows {
            let vals: Vec<f64> = r.split(',').map(|x| x.parse().unwrap()).collect();
            assert_eq!(vals.len(), side.size);
            assert!((vals.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn resumed_training_reproduces_the_uninterrupted_run_bitwise() {
    let (a, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    // a stops partway and resumes; c runs straight through
    ok(a.path(), &["train", "--family", "mlm", "--max-steps", "4", "--checkpoint-every", "2"]);
    ok(a.path(), &["train", "--family", "mlm", "--resume"]);
    ok(c.path(), &["train", "--family", "mlm"]);
    for run in ["mlm", "bertctc-slu"] {
        if run != "mlm" {
            ok(a.path(), &["train", "--family", run, "--max-steps", "7"]);
            ok(a.path(), &["train", "--family", run, "--resume"]);
            ok(c.path(), &["train", "--family", run]);
        }
        let rows = csv_rows(&a.path().join(run).join("loss.csv"));
        assert_eq!(rows.len(), 21);
        assert_eq!(rows, csv_rows(&c.path().join(run).join("loss.csv")));
        assert_eq!(
            fs::read(a.path().join(run).join("params.json")).unwrap(),
            fs::read(c.path().join(run).join("params.json")).unwrap()
        );
    }
}

#[test]
fn verify_passes_and_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let json = out.join("verify.json");
    let stdout = ok(out, &["verify", "--json", json.to_str().unwrap()]);
    let passes = stdout.lines().filter(|l| l.starts_with("PASS")).count();
    assert!(passes >= 12, "{stdout}");
    assert!(!stdout.contains("FAIL"));

    // a fusion model without a trained MLM is a contract error
    assert_eq!(bertctc(out, &["train", "--family", "bertctc"]).status.code(), Some(1));
    // unknown arguments and missing config files too
    assert_eq!(bertctc(out, &["train", "--family", "transformer"]).status.code(), Some(1));
    assert_eq!(bertctc(out, &["generate", "--config", "/nonexistent.json"]).status.code(), Some(1));
    assert_eq!(bertctc(out, &["decode", "--family", "ctc"]).status.code(), Some(1));
    // an invalid config file
    let bad = out.join("bad.json");
    fs::write(&bad, "{\"seed\": 1}").unwrap();
    assert_eq!(bertctc(out, &["generate", "--config", bad.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn generate_is_reproducible_through_the_cli() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(a.path(), &["generate"]);
    ok(b.path(), &["generate"]);
    // the written config reproduces the same data
    let c = tempfile::tempdir().unwrap();
    let saved = a.path().join("config.json");
    ok(c.path(), &["generate", "--config", saved.to_str().unwrap()]);
    assert_eq!(fs::read(a.path().join("data/train.feats")).unwrap(), fs::read(c.path().join("data/train.feats")).unwrap());
    for f in ["manifest.jsonl", "train.feats", "text.txt", "task.json"] {
        assert_eq!(fs::read(a.path().join("data").join(f)).unwrap(), fs::read(b.path().join("data").join(f)).unwrap());
    }
}
