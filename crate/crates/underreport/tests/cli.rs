use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_underreport"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_csv(dir: &Path) -> PathBuf {
    let csv = dir.join("small.csv");
    let mut body = String::from("a,b,grp,label\n");
    for i in 0..400 {
        let a = (i % 17) as f64 * 0.5;
        let b = ((i * 7) % 11) as f64;
        let label = u8::from((a + 0.3 * b + (i % 5) as f64) > 6.0);
        body.push_str(&format!("{a},{b},{},{label}\n", if i % 3 == 0 { "x" } else { "y" }));
    }
    fs::write(&csv, body).unwrap();
    let schema = dir.join("small.schema.json");
    fs::write(
        &schema,
        r#"{"features":["a","b"],"group":{"column":"grp","map":{"x":0,"y":1}},"binary_label":"label"}"#,
    )
    .unwrap();
    csv
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["theory"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_input_exits_two() {
    let dir = TempDir::new().unwrap();
    let out = run(&["ingest", "--csv", "/nonexistent.csv", "--schema", s(&data("compas.schema.json")), "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonexistent"));
}

#[test]
fn invalid_population_exits_two() {
    let dir = TempDir::new().unwrap();
    let moments = dir.path().join("m.json");
    fs::write(
        &moments,
        r#"{"mu":[0,0],"sigma":[[1,1],[1,1]],"alpha":0,"beta":[1,1],"r":0.5,"m0":[0.5,1],"m1":[0.5,1]}"#,
    )
    .unwrap();
    let out = run(&["theory", "--moments", s(&moments), "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn collinear_design_exits_three() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    let mut body = String::from("a,b,grp,label\n");
    for i in 0..50 {
        body.push_str(&format!("{i},{},{},0\n", 2 * i, i % 2));
    }
    fs::write(p.join("c.csv"), body).unwrap();
    fs::write(
        p.join("c.schema.json"),
        r#"{"features":["a","b"],"group":{"column":"grp"},"binary_label":"label"}"#,
    )
    .unwrap();
    let out = run(&["ingest", "--csv", s(&p.join("c.csv")), "--schema", s(&p.join("c.schema.json")), "--out-dir", s(p)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(&["fit", "--input", s(&p.join("dataset.csv")), "--out-dir", s(p)]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn theory_reports_worked_example() {
    let dir = TempDir::new().unwrap();
    let moments = dir.path().join("m.json");
    fs::write(
        &moments,
        r#"{"mu":[0,0],"sigma":[[1,0.5],[0.5,1]],"alpha":0,"beta":[1,-2],"r":0.5,"m0":[0.75,1],"m1":[0.25,1]}"#,
    )
    .unwrap();
    let out = run(&["theory", "--moments", s(&moments), "--out-dir", s(dir.path())]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("theory.json")).unwrap()).unwrap();
    assert!((v["c"].as_f64().unwrap() - 4.0 / 7.0).abs() < 1e-12);
    assert_eq!(v["case_label"], "Case1_overselected");

    let out = run(&["theory", "--moments", s(&moments), "--out-dir", s(dir.path()), "--format", "csv"]);
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.path().join("theory.csv")).unwrap();
    assert!(csv.starts_with("key,value\n"));
    assert!(csv.contains("case_label,Case1_overselected"));
}

#[test]
fn pipeline_round_trip() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    let csv = small_csv(p);
    let schema = p.join("small.schema.json");
    assert!(run(&["ingest", "--csv", s(&csv), "--schema", s(&schema), "--out-dir", s(p)]).status.success());
    assert!(run(&["synthesize", "--input", s(&p.join("dataset.csv")), "--out-dir", s(p)]).status.success());
    assert!(p.join("true_model.json").exists());
    let out = run(&[
        "corrupt", "--input", s(&p.join("synthetic.csv")), "--feature", "a", "--rate-g1", "0.5", "--seed", "3", "--out-dir", s(p),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let plain = p.join("plain");
    let out = run(&["fit", "--input", s(&p.join("corrupted.csv")), "--out-dir", s(&plain)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let aug = p.join("aug");
    let out = run(&[
        "fit", "--input", s(&p.join("corrupted.csv")), "--method", "augmented", "--feature", "a", "--rates", "1", "0.5", "--out-dir", s(&aug),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let model: serde_json::Value = serde_json::from_slice(&fs::read(aug.join("model.json")).unwrap()).unwrap();
    assert_eq!(model["method"], "augmented");

    // identical prediction files give zero excess selection everywhere
    let preds = plain.join("predictions.csv");
    let out = run(&["audit", "--corrupted", s(&preds), "--reference", s(&preds), "--out-dir", s(p)]);
    assert!(out.status.success());
    let audit = fs::read_to_string(p.join("audit.csv")).unwrap();
    let mut lines = audit.lines();
    assert_eq!(
        lines.next(),
        Some("C,group,rate_corrupted,rate_reference,delta,threshold_corrupted,threshold_reference,tie_flag")
    );
    let mut rows = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[2], f[3]);
        assert_eq!(f[4].parse::<f64>().unwrap(), 0.0);
        rows += 1;
    }
    assert_eq!(rows, 18);

    let out = run(&[
        "estimate-rate", "--input", s(&p.join("corrupted.csv")), "--feature", "a", "--group", "1", "--classifier", "boosted-trees", "--out-dir", s(p),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let est: serde_json::Value = serde_json::from_slice(&fs::read(p.join("rate_estimate.json")).unwrap()).unwrap();
    let m = est["m_hat"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&m));
}

#[test]
fn unknown_feature_exits_two() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    let csv = small_csv(p);
    assert!(run(&["ingest", "--csv", s(&csv), "--schema", s(&p.join("small.schema.json")), "--out-dir", s(p)]).status.success());
    let out = run(&["corrupt", "--input", s(&p.join("dataset.csv")), "--feature", "zzz", "--rate-g0", "0.2", "--out-dir", s(p)]);
    assert_eq!(out.status.code(), Some(2));
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let cfg = dir.join("cfg.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"dataset":"{}","schema":"{}","features":["priors_count"],"groups":["Other"],"rates":[0.0,0.5],"methods":["plain","augmented"],"reps":2,"seed":7{extra}}}"#,
            s(&data("compas-scores-two-years.csv")),
            s(&data("compas.schema.json"))
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn run_is_identical_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    let one = dir.path().join("one");
    let four = dir.path().join("four");
    assert!(run(&["run", "--config", s(&cfg), "--threads", "1", "--out-dir", s(&one)]).status.success());
    assert!(run(&["run", "--config", s(&cfg), "--threads", "4", "--out-dir", s(&four)]).status.success());
    for f in ["results.csv", "summary.csv", "params.csv", "r2.csv", "manifest.json"] {
        assert_eq!(fs::read(one.join(f)).unwrap(), fs::read(four.join(f)).unwrap(), "{f} differs");
    }

    // rate 0 leaves the plain model equal to the reference
    let results = fs::read_to_string(one.join("results.csv")).unwrap();
    let mut zero_rows = 0;
    for line in results.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f[2].parse::<f64>().unwrap() == 0.0 && f[3] == "plain" {
            zero_rows += 1;
            assert_eq!(f[7].parse::<f64>().unwrap(), 0.0, "{line}");
            assert_eq!(f[8].parse::<f64>().unwrap(), 0.0, "{line}");
        }
    }
    assert_eq!(zero_rows, 2 * 9);
}

#[test]
fn seed_override_changes_results() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&["run", "--config", s(&cfg), "--out-dir", s(&a)]).status.success());
    assert!(run(&["run", "--config", s(&cfg), "--seed", "8", "--out-dir", s(&b)]).status.success());
    assert_ne!(fs::read(a.join("results.csv")).unwrap(), fs::read(b.join("results.csv")).unwrap());
}

#[test]
fn bad_config_exits_two() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), r#","C_grid":[]"#);
    assert_eq!(run(&["run", "--config", s(&cfg), "--out-dir", s(dir.path())]).status.code(), Some(2));
    let cfg = write_config(dir.path(), r#","bogus":1"#);
    assert_eq!(run(&["run", "--config", s(&cfg), "--out-dir", s(dir.path())]).status.code(), Some(2));
}
