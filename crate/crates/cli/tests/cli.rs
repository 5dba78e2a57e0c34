use std::path::Path;
use std::process::{Command, Output};

fn urfb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_urfb"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = urfb(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn blobs_train(out: &Path, extra: &[&str]) -> Output {
    let out = format!("--out={}", out.display());
    let mut args = vec![
        "train",
        out.as_str(),
        "--dataset=blobs",
        "--arch=Full 8; Output",
        "--epochs=3",
        "--batch_size=10",
        "--val_size=60",
        "--seed=5",
    ];
    args.extend_from_slice(extra);
    ok(&args)
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn train_writes_artifacts_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    blobs_train(&a, &["--mode=URFB"]);
    blobs_train(&b, &["--mode=URFB"]);
    let ma = std::fs::read(a.join("metrics.csv")).unwrap();
    assert_eq!(ma, std::fs::read(b.join("metrics.csv")).unwrap());
    let rows = csv_rows(&a.join("metrics.csv"));
    assert_eq!(rows[0].join(","), "epoch,train_err,val_err,train_loss,corr_l1,corr_l2");
    assert_eq!(rows.len(), 4);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["mode"], "URFB");
    assert_eq!(manifest["config"]["epochs"], 3);
    let files: Vec<&str> = manifest["files"].as_array().unwrap().iter().map(|f| f.as_str().unwrap()).collect();
    for f in ["metrics.csv", "curves.png", "checkpoints/epoch_00000.ckpt", "checkpoints/epoch_00003.ckpt"] {
        assert!(files.contains(&f), "{f} missing from {files:?}");
        assert!(a.join(f).exists(), "{f} not written");
    }
    for f in &files {
        assert!(a.join(f).exists(), "manifest names missing file {f}");
    }
}

#[test]
fn mode_sweep_makes_sibling_runs() {
    let tmp = tempfile::tempdir().unwrap();
    blobs_train(tmp.path(), &["--mode=BP,URFB,FRFB"]);
    for m in ["BP", "URFB", "FRFB"] {
        assert!(tmp.path().join(m).join("metrics.csv").exists(), "{m}");
        assert!(tmp.path().join(m).join("manifest.json").exists(), "{m}");
    }
}

#[test]
fn align_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let bp = tmp.path().join("bp");
    blobs_train(&bp, &["--mode=BP", "--checkpoint_every=1"]);
    let o = ok(&["align", bp.to_str().unwrap()]);
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "checkpoint,epoch,corr_l1,corr_l2");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        for c in r.split(',').skip(2) {
            assert!((c.parse::<f64>().unwrap() - 1.0).abs() < 1e-12, "{r}");
        }
    }

    let ur = tmp.path().join("ur");
    blobs_train(&ur, &["--mode=URFB", "--epochs=10"]);
    let table = tmp.path().join("align.csv");
    ok(&["align", ur.to_str().unwrap(), "--out", table.to_str().unwrap()]);
    let rows = csv_rows(&table);
    let first: Vec<f64> = rows[1][2..].iter().map(|v| v.parse().unwrap()).collect();
    let last: Vec<f64> = rows.last().unwrap()[2..].iter().map(|v| v.parse().unwrap()).collect();
    assert!(first.iter().zip(&last).all(|(a, b)| b >= a), "{first:?} -> {last:?}");

    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let o = urfb(&["align", empty.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no checkpoints"));
}

#[test]
fn bad_override_fails_with_a_diagnostic() {
    let o = urfb(&["train", "--dataset=blobs", "--eta=-1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("eta"));
}

#[test]
fn lindyn_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("full");
    ok(&["lindyn", "--max-iters=200", "--record-every=50", "--out", out.to_str().unwrap()]);
    let rows = csv_rows(&out.join("lindyn.csv"));
    assert_eq!(rows[0].join(","), "iteration,eps,log10_e2,corr_layer_1,corr_layer_2,corr_layer_3");
    let mut labels: Vec<&str> = rows[1..].iter().map(|r| r[1].as_str()).collect();
    labels.dedup();
    assert_eq!(labels, vec!["bp", "0", "0.25", "0.5", "1"]);
    for f in ["lindyn.png", "summary.json", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }

    let two = tmp.path().join("two");
    ok(&["lindyn", "--k=2", "--max-iters=100", "--out", two.to_str().unwrap()]);
    let rows = csv_rows(&two.join("lindyn.csv"));
    assert_eq!(rows[0].join(","), "iteration,eps,log10_e2,corr_layer_1,corr_layer_2");

    let one = tmp.path().join("one");
    ok(&["lindyn", "--eps=1", "--max-iters=100", "--out", one.to_str().unwrap()]);
    let rows = csv_rows(&one.join("lindyn.csv"));
    assert!(rows[1..].iter().all(|r| r[1] == "1"));
}

#[test]
fn lindyn_instability_suggests_a_smaller_step() {
    let tmp = tempfile::tempdir().unwrap();
    let o = urfb(&["lindyn", "--dt=20", "--max-iters=200", "--out", tmp.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("retry with dt"));
}

#[test]
fn circuit_report_and_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("c");
    let o = urfb(&["circuit", "--trace=h=2,s=1", "--out", out.to_str().unwrap()]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let bad = report["output_counterexamples"].as_array().unwrap();
    // only the upper boundary h = M disagrees; see README
    assert!(bad.iter().all(|c| c[0] == 10.0), "{bad:?}");
    assert_eq!(report["shutdown_counterexamples"].as_array().unwrap().len(), 0);
    assert_eq!(o.status.success(), bad.is_empty());
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "step,delta,t");
    assert_eq!(lines.len(), 5);

    let perturbed = tmp.path().join("p");
    let o = urfb(&["circuit", "--mu=0.5", "--ref-mu=1", "--out", perturbed.to_str().unwrap()]);
    assert!(!o.status.success());
    let text = std::fs::read_to_string(perturbed.join("report.txt")).unwrap();
    assert!(text.starts_with("equivalent: false"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(perturbed.join("report.json")).unwrap()).unwrap();
    assert!(report["output_counterexamples"].as_array().unwrap().len() > 2);
}
