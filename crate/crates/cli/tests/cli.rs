use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use radial_threat::dastrace::{read_trace_file, write_trace_file};
use radial_threat::featurize::read_feature_file;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_radial-threat"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = run(dir, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn fails_with(dir: &Path, args: &[&str], code: i32, kind: &str) {
    let o = run(dir, args);
    assert_eq!(o.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("error kind={kind} code={code} message=\"")), "{err}");
}

fn read(p: PathBuf) -> Vec<u8> {
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

const SMALL: [&str; 2] = ["--set", "resolution=32"];

#[test]
fn simulate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for out in ["a", "b"] {
        ok(d, &["simulate", "--n-per-class", "5", "--seed", "1", "--out", out]);
    }
    for f in ["traces.dast", "manifest.txt", "effective_config.txt"] {
        assert_eq!(read(d.join("a").join(f)), read(d.join("b").join(f)), "{f}");
    }
    assert_eq!(read_trace_file(&d.join("a/traces.dast")).unwrap().len(), 15);
}

#[test]
fn echoed_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["simulate", "--n-per-class", "6", "--seed", "4", "--noise-floor", "0.001", "--out", "a"]);
    ok(d, &["simulate", "--config", "a/effective_config.txt", "--out", "b"]);
    assert_eq!(read(d.join("a/traces.dast")), read(d.join("b/traces.dast")));
    let other = run(d, &["simulate", "--n-per-class", "6", "--seed", "5", "--out", "c"]);
    assert!(other.status.success());
    assert_ne!(read(d.join("a/traces.dast")), read(d.join("c/traces.dast")));
}

#[test]
fn featurize_three_records() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["simulate", "--n-per-class", "5", "--out", "sim"]);
    let recs = read_trace_file(&d.join("sim/traces.dast")).unwrap();
    write_trace_file(&recs[..3], &d.join("three.dast")).unwrap();
    ok(d, &["featurize", "--input", "three.dast", "--variant", "STFF", "--out", "f"]);
    let maps = read_feature_file(&d.join("f/features.dasf")).unwrap();
    assert_eq!(maps.len(), 3);
    assert!(maps.iter().all(|m| m.shape() == [1, 96, 96]));
    let manifest = String::from_utf8(read(d.join("f/features.manifest"))).unwrap();
    assert_eq!(manifest.lines().count(), 3);
    assert!(manifest.lines().all(|l| l.starts_with("features.dasf:") && l.ends_with(":STFF")));
}

#[test]
fn train_eval_infer_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["simulate", "--n-per-class", "5", "--seed", "2", "--out", "sim"]);
    let train_args = ["train", "--manifest", "sim/manifest.txt", "--variant", "tff", "--epochs", "2", "--out", "t"];
    ok(d, &[&train_args[..], &SMALL[..]].concat());
    let curve = String::from_utf8(read(d.join("t/loss_curve.csv"))).unwrap();
    assert_eq!(curve.lines().count(), 3);

    let eval = ok(d, &["eval", "--checkpoint", "t/model.dasm", "--manifest", "sim/manifest.txt", "--out", "e"]);
    assert!(eval.contains("F1_ave"));
    let csv = String::from_utf8(read(d.join("e/metrics.csv"))).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("TFF,"));

    let out = ok(d, &["infer", "--checkpoint", "t/model.dasm", "--input", "sim/traces.dast", "--out", "i"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 16);
    for (i, l) in lines[..15].iter().enumerate() {
        let f: Vec<&str> = l.split(' ').collect();
        assert_eq!(f[0], format!("record={i}"));
        let class = f[1].strip_prefix("class=").unwrap();
        let p: Vec<f64> = f[2].strip_prefix("p=").unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(p.len(), 3);
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-6, "{l}");
        let expected = match class {
            "Alarm" => "DispatchVerification",
            "Tracking" => "ContinueTracking",
            "NoThreat" => "None",
            other => panic!("class {other}"),
        };
        assert_eq!(f[3], format!("action={expected}"));
    }
    let summary = lines[15];
    assert!(summary.starts_with("summary records=15 "), "{summary}");
    let total: usize = summary
        .split(' ')
        .skip(2)
        .map(|kv| kv.split_once('=').unwrap().1.parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, 15);
    assert_eq!(read(d.join("i/decisions.txt")), out.as_bytes());

    // Same inputs, same decisions.
    let again = ok(d, &["infer", "--checkpoint", "t/model.dasm", "--input", "sim/traces.dast", "--out", "i2"]);
    assert_eq!(out, again);

    let infer_stff = ["infer", "--checkpoint", "t/model.dasm", "--input", "sim/traces.dast", "--variant", "stff", "--out", "x"];
    fails_with(d, &infer_stff, 5, "format");
    let infer_res = ["infer", "--checkpoint", "t/model.dasm", "--input", "sim/traces.dast", "--set", "resolution=64", "--out", "x"];
    fails_with(d, &infer_res, 5, "format");
}

#[test]
fn ablation_reports_every_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["simulate", "--n-per-class", "5", "--out", "sim"]);
    let args = ["ablation", "--manifest", "sim/manifest.txt", "--variants", "raw,tf", "--set", "epochs=1"];
    let table = ok(d, &[&args[..], &SMALL[..], &["--out", "a"][..]].concat());
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 4, "{table}");
    assert!(rows[1].starts_with("Raw") && rows[2].starts_with("TF") && rows[3].starts_with("reference"));
    let csv = String::from_utf8(read(d.join("a/ablation.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let repeated = ok(d, &[&args[..], &SMALL[..], &["--repeats", "2", "--out", "b"][..]].concat());
    assert!(repeated.contains('±'), "{repeated}");
    let csv = String::from_utf8(read(d.join("b/ablation.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn errors_have_distinct_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("bad.conf"), "seed = 1\nlearning_rate = 3\n").unwrap();
    fails_with(d, &["simulate", "--config", "bad.conf", "--out", "o"], 3, "config");
    fails_with(d, &["simulate", "--set", "variant=spectral", "--out", "o"], 3, "config");
    fails_with(d, &["simulate", "--n-per-class", "2", "--out", "o"], 3, "config");
    fails_with(d, &["simulate", "--config", "absent.conf", "--out", "o"], 4, "missing_input");
    fails_with(d, &["featurize", "--input", "absent.dast", "--out", "o"], 4, "missing_input");
    std::fs::write(d.join("junk.dast"), b"not a trace file").unwrap();
    fails_with(d, &["featurize", "--input", "junk.dast", "--out", "o"], 5, "format");
    fails_with(d, &["eval", "--checkpoint", "junk.dast", "--manifest", "m", "--out", "o"], 5, "format");
    fails_with(d, &["frobnicate"], 2, "usage");
}
