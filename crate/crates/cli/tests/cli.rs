use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn abstain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_abstain"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = abstain(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn single_error_line(out: &Output) -> String {
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(err.lines().count(), 1, "stderr: {err}");
    assert!(err.starts_with("error: "), "stderr: {err}");
    err
}

#[test]
fn generate_writes_two_csvs_with_expected_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    ok(&[
        "generate",
        "--n",
        "10",
        "--t",
        "8",
        "--h",
        "4",
        "--seed",
        "1",
        "--out",
        p(&out),
    ]);
    let series = fs::read_to_string(out.join("series.csv")).unwrap();
    assert_eq!(series.lines().count(), 1 + 10 * 12);
    assert_eq!(series.lines().next(), Some("id,t,value"));
    assert!(out.join("truth.csv").exists());

    let again = dir.path().join("e");
    ok(&[
        "generate",
        "--n",
        "10",
        "--t",
        "8",
        "--h",
        "4",
        "--seed",
        "1",
        "--out",
        p(&again),
    ]);
    assert_eq!(
        series,
        fs::read_to_string(again.join("series.csv")).unwrap()
    );
    assert_eq!(
        fs::read(out.join("truth.csv")).unwrap(),
        fs::read(again.join("truth.csv")).unwrap()
    );
}

#[test]
fn usage_errors_are_one_line_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let out = abstain(&["generate", "--h", "0", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(single_error_line(&out).starts_with("error: usage:"));

    let out = abstain(&["fit", "--h", "4", "--out-model", "m.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(single_error_line(&out).contains("--data"));

    let out = abstain(&[
        "calibrate",
        "--predictions",
        "x.csv",
        "--c",
        "1.5",
        "--mode",
        "full",
    ]);
    assert_eq!(out.status.code(), Some(2));
    single_error_line(&out);
}

#[test]
fn runtime_errors_carry_a_kind_tag() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "id,t,value\na,1,0.5\na,3,0.1\n").unwrap();
    let out = abstain(&[
        "fit",
        "--data",
        p(&bad),
        "--h",
        "1",
        "--out-model",
        p(&dir.path().join("m")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = single_error_line(&out);
    assert!(err.starts_with("error: parse:"), "{err}");
    assert!(err.contains("`a`"), "{err}");
}

fn linear_series(path: &Path) {
    let mut text = String::from("id,t,value\n");
    for i in 0..30 {
        let mut x = 0.3 + 0.01 * i as f64;
        for t in 1..=10 {
            text.push_str(&format!("s{i},{t},{x}\n"));
            x = 0.1 + 0.8 * x;
        }
    }
    fs::write(path, text).unwrap();
}

#[test]
fn two_stage_fit_on_noiseless_linear_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("lin.csv");
    linear_series(&data);
    let model = dir.path().join("m.json");
    let stdout = ok(&[
        "fit",
        "--data",
        p(&data),
        "--h",
        "3",
        "--lag",
        "1",
        "--out-model",
        p(&model),
    ]);
    let mse: f64 = stdout
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix("train_mse="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(mse <= 1e-10, "{stdout}");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(model).unwrap()).unwrap();
    assert_eq!(json["lag"], 1);
}

struct Fixture {
    _dir: tempfile::TempDir,
    series: std::path::PathBuf,
    preds: std::path::PathBuf,
    root: std::path::PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    ok(&[
        "generate",
        "--n",
        "120",
        "--t",
        "16",
        "--h",
        "5",
        "--seed",
        "4",
        "--out",
        p(&root),
    ]);
    let series = root.join("series.csv");
    let preds = root.join("preds.csv");
    ok(&[
        "fit",
        "--data",
        p(&series),
        "--h",
        "5",
        "--out-model",
        p(&root.join("m.json")),
        "--out-predictions",
        p(&preds),
    ]);
    Fixture {
        _dir: dir,
        series,
        preds,
        root,
    }
}

#[test]
fn calibrate_emits_expected_policy_fields() {
    let f = fixture();
    let full = ok(&[
        "calibrate",
        "--predictions",
        p(&f.preds),
        "--c",
        "0.8",
        "--mode",
        "full",
    ]);
    let v: serde_json::Value = serde_json::from_str(&full).unwrap();
    assert_eq!(v["mode"], "full");
    assert!(v.get("tau").is_some() && v.get("kappa").is_some());

    let from_model = ok(&[
        "calibrate",
        "--model",
        p(&f.root.join("m.json")),
        "--data",
        p(&f.series),
        "--c",
        "0.8",
        "--mode",
        "full",
    ]);
    assert_eq!(full, from_model);

    let pol = f.root.join("all.json");
    ok(&[
        "calibrate",
        "--predictions",
        p(&f.preds),
        "--c",
        "1.0",
        "--mode",
        "partial",
        "--out-policy",
        p(&pol),
    ]);
    let dec = f.root.join("dec.csv");
    ok(&[
        "evaluate",
        "--policy",
        p(&pol),
        "--predictions",
        p(&f.preds),
        "--data",
        p(&f.series),
        "--out-decisions",
        p(&dec),
    ]);
    let rows = fs::read_to_string(dec).unwrap();
    assert_eq!(rows.lines().count(), 121);
    assert!(rows.lines().skip(1).all(|l| l.ends_with(",1,5")), "{rows}");
}

#[test]
fn evaluate_report_is_deterministic_and_has_schema_header() {
    let f = fixture();
    let pol = f.root.join("p.json");
    ok(&[
        "calibrate",
        "--predictions",
        p(&f.preds),
        "--c",
        "0.75",
        "--mode",
        "interval",
        "--out-policy",
        p(&pol),
    ]);
    let args = [
        "evaluate",
        "--policy",
        p(&pol),
        "--predictions",
        p(&f.preds),
        "--data",
        p(&f.series),
        "--seed",
        "9",
    ];
    let a = ok(&args);
    assert_eq!(a, ok(&args));
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(
        lines[0],
        "strategy,c,seed,selective_risk,empirical_coverage,consat_0.01,consat_0.02,consat_0.05,consat_0.10,n_test"
    );
    assert!(lines[1].starts_with("interval,0.75,9,"));
}

#[test]
fn reject_everything_policy_reports_undefined_risk() {
    let f = fixture();
    let pol = f.root.join("reject.json");
    fs::write(&pol, r#"{"mode":"full","c":0.5,"tau":-1.0,"kappa":0.0}"#).unwrap();
    let out = ok(&[
        "evaluate",
        "--policy",
        p(&pol),
        "--predictions",
        p(&f.preds),
        "--data",
        p(&f.series),
    ]);
    let row = out.lines().nth(1).unwrap();
    assert!(row.starts_with("full,0.5,0,undefined,0,"), "{row}");
}

#[test]
fn sweep_counts_rows_and_is_byte_identical() {
    let f = fixture();
    let run = |name: &str, extra: &[&str]| {
        let out = f.root.join(name);
        let mut args = vec![
            "sweep",
            "--data",
            p(&f.series),
            "--h",
            "5",
            "--seeds",
            "1,2",
            "--out",
            p(&out),
        ];
        args.extend_from_slice(extra);
        ok(&args);
        out
    };
    let a = run("a", &[]);
    let b = run("b", &["--sequential"]);
    let report = fs::read_to_string(a.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 3 * 6 * 2);
    assert_eq!(report, fs::read_to_string(b.join("report.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("report_long.csv")).unwrap(),
        fs::read(b.join("report_long.csv")).unwrap()
    );
    let long = fs::read_to_string(a.join("report_long.csv")).unwrap();
    assert_eq!(long.lines().next(), Some("strategy,c,seed,metric,value"));
    assert!(long.lines().skip(1).all(|l| l.split(',').count() == 5));

    let with_base = run("c", &["--strategies", "full,partial,interval,accept-ch"]);
    let report = fs::read_to_string(with_base.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 4 * 6 * 2);
}

#[test]
fn oracle_check_passes_on_tiny_instance_and_refuses_large_ones() {
    let f = fixture();
    let preds = fs::read_to_string(&f.preds).unwrap();
    let tiny: String = preds
        .lines()
        .filter(|l| {
            l.starts_with("id,")
                || l.starts_with("s0,")
                || l.starts_with("s1,")
                || l.starts_with("s2,")
        })
        .map(|l| format!("{l}\n"))
        .collect();
    let tiny_path = f.root.join("tiny.csv");
    fs::write(&tiny_path, tiny).unwrap();
    let out = ok(&["oracle-check", "--data", p(&tiny_path), "--c", "0.6"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 4, "{out}");
    assert!(lines.iter().all(|l| l.ends_with("PASS")), "{out}");
    assert!(lines[3].starts_with("nesting"));

    let out = abstain(&[
        "oracle-check",
        "--data",
        p(&f.preds),
        "--c",
        "0.6",
        "--mode",
        "partial",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(single_error_line(&out).starts_with("error: budget_exceeded:"));
}
