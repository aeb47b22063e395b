use std::path::Path;
use std::process::{Command, Output};

const HEADER: &str =
    "run,seed,algorithm,n,d,mdp_kind,n_samples,sample_len,pop,gens,goals,misprediction,seconds,generations_run,terminated_early";

fn neuro_irl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neuro-irl"))
        .args(args)
        .env("NEURO_IRL_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn column(csv: &str, idx: usize) -> Vec<String> {
    csv.lines().skip(1).map(|l| l.split(',').nth(idx).unwrap().to_owned()).collect()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn run_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("neat.csv");
    let o = neuro_irl(&[
        "run", "--algorithm", "neat-irl", "--pop", "10", "--gens", "5", "--runs", "3", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = read(&out);
    assert_eq!(text.lines().next().unwrap(), HEADER);
    assert_eq!(text.lines().count(), 4);
    assert_eq!(column(&text, 8), vec!["10"; 3]);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.json");
    std::fs::write(&config, r#"{"algorithm": "bnp-mean", "n": 4, "runs": 5, "determinism": 0.7}"#).unwrap();
    let out = dir.path().join("out.csv");
    let o = neuro_irl(&[
        "run", "--config", config.to_str().unwrap(), "--runs", "2", "--goals", "2", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = read(&out);
    assert_eq!(text.lines().count(), 3);
    assert_eq!(column(&text, 2), vec!["bnp-mean"; 2]);
    assert_eq!(column(&text, 4), vec!["0.7"; 2]);
    assert_eq!(column(&text, 10), vec!["2"; 2]);
}

#[test]
fn sweep_writes_one_long_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let o = neuro_irl(&[
        "sweep", "--algorithm", "bnp-mean", "--runs", "2", "--axis", "samples", "--values", "1,2,3", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = read(&out);
    assert_eq!(text.lines().count(), 7);
    assert_eq!(column(&text, 6), vec!["1", "1", "2", "2", "3", "3"]);
}

#[test]
fn rerun_is_byte_identical_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for p in [&a, &b] {
        let o = neuro_irl(&["run", "--algorithm", "bnp-neat", "--runs", "3", "--pop", "10", "--gens", "3", "--seed", "7",
            "--out", p.to_str().unwrap()]);
        assert!(o.status.success());
    }
    assert_eq!(column(&read(&a), 11), column(&read(&b), 11));
}

#[test]
fn config_errors_exit_with_two() {
    assert_eq!(neuro_irl(&["run", "--n", "1"]).status.code(), Some(2));
    assert_eq!(neuro_irl(&["run", "--algorithm", "gpirl"]).status.code(), Some(2));
    assert_eq!(neuro_irl(&["run", "--config", "/nonexistent/exp.json"]).status.code(), Some(2));
    assert_eq!(neuro_irl(&["sweep", "--axis", "width", "--values", "1"]).status.code(), Some(2));
    assert_eq!(neuro_irl(&["run", "--bogus"]).status.code(), Some(2));
}

#[test]
fn compare_reports_t_test() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for (p, alg) in [(&a, "bnp-mean"), (&b, "bnp-neat")] {
        let o = neuro_irl(&["run", "--algorithm", alg, "--runs", "4", "--pop", "10", "--gens", "3", "--determinism",
            "0.7", "--out", p.to_str().unwrap()]);
        assert!(o.status.success());
    }
    let o = neuro_irl(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert!(o.status.success());
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let p = json["t_test"]["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert_eq!(json["a"]["count"], 4);
}
