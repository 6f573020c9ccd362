use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn nbmf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nbmf"))
        .args(args)
        .output()
        .expect("spawn nbmf")
}

fn ok(args: &[&str]) -> String {
    let out = nbmf(args);
    assert!(
        out.status.success(),
        "nbmf {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn field<'a>(stdout: &'a str, key: &str) -> &'a str {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(key).map(str::trim))
        .unwrap_or_else(|| panic!("no {key:?} line in {stdout:?}"))
}

fn iterations(stdout: &str) -> usize {
    field(stdout, "iterations:")
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap()
}

/// trace.csv without the wall-clock column.
fn trace_without_timing(dir: &Path) -> Vec<String> {
    fs::read_to_string(dir.join("trace.csv"))
        .unwrap()
        .lines()
        .map(|l| l.split(',').take(2).collect::<Vec<_>>().join(","))
        .collect()
}

fn gen_plain(dir: &Path, seed: &str) -> PathBuf {
    let data = dir.join("train.csv");
    ok(&["gen-synthetic", "--out", s(&data), "--seed", seed]);
    data
}

fn gen_classes(dir: &Path) -> (PathBuf, PathBuf) {
    let train = dir.join("train.csv");
    let test = dir.join("test.csv");
    ok(&[
        "gen-synthetic", "--n", "100", "--k", "10", "--classes", "5", "--per-class", "4",
        "--test-m", "4", "--noise", "0.02", "--seed", "11",
        "--out", s(&train), "--test-out", s(&test),
    ]);
    (train, test)
}

#[test]
fn factorize_is_deterministic_for_fixed_seed() {
    let tmp = TempDir::new().unwrap();
    let data = gen_plain(tmp.path(), "5");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        ok(&["factorize", "--input", s(&data), "--out", s(out), "--k", "8", "--seed", "42"]);
    }
    for file in ["W.csv", "H.csv", "meta.json"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    assert_eq!(trace_without_timing(&a), trace_without_timing(&b));
    assert!(trace_without_timing(&a)[0].starts_with("iteration,mean_rmse"));
}

#[test]
fn factorize_thread_count_does_not_change_output() {
    let tmp = TempDir::new().unwrap();
    let data = gen_plain(tmp.path(), "6");
    let a = tmp.path().join("t1");
    let b = tmp.path().join("t3");
    ok(&["--threads", "1", "factorize", "--input", s(&data), "--out", s(&a), "--k", "8", "--seed", "1"]);
    ok(&["--threads", "3", "factorize", "--input", s(&data), "--out", s(&b), "--k", "8", "--seed", "1"]);
    for file in ["W.csv", "H.csv"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn nmf_needs_more_iterations_than_nbmf() {
    let tmp = TempDir::new().unwrap();
    let data = gen_plain(tmp.path(), "7");
    let run = |method: &str| {
        let out = tmp.path().join(method);
        iterations(&ok(&[
            "factorize", "--method", method, "--input", s(&data), "--out", s(&out),
            "--k", "8", "--seed", "3",
        ]))
    };
    let nbmf_iters = run("nbmf");
    let nmf_iters = run("nmf");
    assert!(nmf_iters > nbmf_iters, "nmf {nmf_iters} vs nbmf {nbmf_iters}");
}

#[test]
fn negative_alpha_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let data = gen_plain(tmp.path(), "1");
    let out = tmp.path().join("m");
    let res = nbmf(&["factorize", "--input", s(&data), "--out", s(&out), "--alpha", "-1", "--seed", "1"]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("alpha"));
    assert!(!out.join("W.csv").exists());
}

#[test]
fn classify_report_matches_printed_accuracy() {
    let tmp = TempDir::new().unwrap();
    let (train, test) = gen_classes(tmp.path());
    let model = tmp.path().join("model");
    let report = tmp.path().join("report.csv");
    ok(&["factorize", "--input", s(&train), "--out", s(&model), "--k", "10", "--seed", "4"]);
    let stdout = ok(&[
        "classify", "--model", s(&model), "--test", s(&test), "--report", s(&report), "--seed", "4",
    ]);

    let text = fs::read_to_string(&report).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    let correct = rows
        .iter()
        .filter(|r| {
            let f: Vec<&str> = r.split(',').collect();
            f[1] == f[2]
        })
        .count();
    let printed = field(&stdout, "accuracy:");
    assert!(printed.starts_with(&format!("{correct}/{}", rows.len())), "{printed}");
    assert_eq!(rows.len(), 20);
    assert!(correct as f64 / rows.len() as f64 >= 0.9, "{printed}");
    assert!(with_name(&report, "report.csv.manifest.json").exists());
}

fn with_name(p: &Path, name: &str) -> PathBuf {
    p.with_file_name(name)
}

#[test]
fn classify_with_missing_model_fails() {
    let tmp = TempDir::new().unwrap();
    let (_, test) = gen_classes(tmp.path());
    let res = nbmf(&[
        "classify", "--model", s(&tmp.path().join("nope")), "--test", s(&test),
        "--report", s(&tmp.path().join("r.csv")),
    ]);
    assert!(!res.status.success());
    assert!(!tmp.path().join("r.csv").exists());
}

#[test]
fn gen_synthetic_defaults_load_and_reproduce() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    ok(&["gen-synthetic", "--out", s(&a), "--seed", "9"]);
    ok(&["gen-synthetic", "--out", s(&b), "--seed", "9"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let text = fs::read_to_string(&a).unwrap();
    assert!(text.starts_with("n,64,height,8,width,8"), "{}", &text[..40]);
    // Loadable by the factorizer.
    ok(&["factorize", "--input", s(&a), "--out", s(&tmp.path().join("m")), "--k", "8", "--seed", "1", "--max-iters", "2"]);
}

#[test]
fn gen_synthetic_test_split_shares_planted_basis() {
    let tmp = TempDir::new().unwrap();
    let train = tmp.path().join("train.csv");
    let test = tmp.path().join("test.csv");
    let alone = tmp.path().join("alone.csv");
    ok(&["gen-synthetic", "--out", s(&train), "--test-out", s(&test), "--test-m", "6", "--seed", "2"]);
    ok(&["gen-synthetic", "--out", s(&alone), "--seed", "2"]);
    assert!(test.exists());
    assert!(with_name(&test, "test.csv.H_true.csv").exists());
    assert_eq!(
        fs::read(with_name(&train, "train.csv.W_true.csv")).unwrap(),
        fs::read(with_name(&alone, "alone.csv.W_true.csv")).unwrap()
    );
}

#[test]
fn solve_qubo_identity_example() {
    let tmp = TempDir::new().unwrap();
    // W = I, v = (1, 0): a = (-1, 1), b = 0.
    let q = tmp.path().join("q.csv");
    fs::write(&q, "i,j,coefficient\n0,0,-1\n1,1,1\n0,1,0\n").unwrap();
    let stdout = ok(&["solve-qubo", "--input", s(&q), "--seed", "1"]);
    assert_eq!(field(&stdout, "q:"), "10");
    assert_eq!(field(&stdout, "energy:").parse::<f64>().unwrap(), -1.0);
    assert!(with_name(&q, "q.csv.manifest.json").exists());
}

#[test]
fn solve_qubo_oracle_gap_is_nonnegative() {
    use std::fmt::Write;
    let tmp = TempDir::new().unwrap();
    let q = tmp.path().join("rand.csv");
    let mut text = String::from("i,j,coefficient\n");
    // Deterministic pseudo-random coefficients in [-1, 1].
    let mut x: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut next = || {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        (x % 2001) as f64 / 1000.0 - 1.0
    };
    for i in 0..10 {
        for j in i..10 {
            writeln!(text, "{i},{j},{}", next()).unwrap();
        }
    }
    fs::write(&q, text).unwrap();
    for backend in ["sa", "pt"] {
        let stdout = ok(&["solve-qubo", "--input", s(&q), "--backend", backend, "--seed", "3", "--oracle"]);
        let gap: f64 = field(&stdout, "gap:").parse().unwrap();
        assert!(gap >= -1e-9, "{backend}: gap {gap}");
        let opt: f64 = field(&stdout, "optimum energy:").parse().unwrap();
        let got: f64 = field(&stdout, "energy:").parse().unwrap();
        assert!((got - opt - gap).abs() < 1e-9);
    }
}

#[test]
fn solve_qubo_rejects_empty_file() {
    let tmp = TempDir::new().unwrap();
    let q = tmp.path().join("empty.csv");
    fs::write(&q, "").unwrap();
    let res = nbmf(&["solve-qubo", "--input", s(&q)]);
    assert!(!res.status.success());
}

#[test]
fn manifest_argv_replays_to_same_artifacts() {
    let tmp = TempDir::new().unwrap();
    let data = gen_plain(tmp.path(), "8");
    let model = tmp.path().join("m");
    ok(&["factorize", "--input", s(&data), "--out", s(&model), "--k", "8", "--max-iters", "5"]);

    let manifest_path = model.join("manifest.json");
    let first: serde_json::Value = serde_json::from_slice(&fs::read(&manifest_path).unwrap()).unwrap();
    let seed = first["seed"].as_u64().expect("seed recorded");
    let mut argv: Vec<String> = first["argv"]
        .as_array()
        .unwrap()
        .iter()
        .skip(1)
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    argv.extend(["--seed".to_string(), seed.to_string()]);
    fs::remove_dir_all(&model).unwrap();

    let args: Vec<&str> = argv.iter().map(String::as_str).collect();
    ok(&args);
    let second: serde_json::Value = serde_json::from_slice(&fs::read(&manifest_path).unwrap()).unwrap();
    assert_eq!(first["artifacts"], second["artifacts"]);
    assert_eq!(first["params"], second["params"]);
}
