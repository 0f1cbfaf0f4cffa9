use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_latent-unmix"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(text: &str) -> Value {
    serde_json::from_str(text).expect("valid JSON")
}

fn read_json(path: &Path) -> Value {
    json(&std::fs::read_to_string(path).unwrap())
}

fn check_answer(args: &[&str]) -> String {
    let mut all = vec!["check"];
    all.extend_from_slice(args);
    let v = json(&run_ok(&all));
    v["result"]["answer"].as_str().unwrap().to_string()
}

#[test]
fn check_cells() {
    assert_eq!(check_answer(&["--family", "hmm", "--obs", "all-pairs", "--k", "2", "--d", "3", "--L", "3"]), "yes");
    assert_eq!(check_answer(&["--family", "lcm", "--obs", "pairs", "--k", "2", "--d", "3", "--L", "5"]), "no");
    assert_eq!(check_answer(&["--family", "pcfg-ie", "--obs", "all-thin-triples", "--k", "3", "--d", "2", "--L", "4"]), "no");
}

#[test]
fn check_output_embeds_config() {
    let v = json(&run_ok(&["check", "--family", "hmm", "--obs", "all-pairs", "--k", "2", "--d", "3", "--L", "3", "--seed", "7"]));
    assert_eq!(v["tool"], "latent-unmix");
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(v["config"]["seed"], 7);
    assert_eq!(v["config"]["L"], 3);
}

#[test]
fn check_is_deterministic() {
    let args = ["check", "--table", "--family", "hmm,lcm", "--k", "2", "--d", "2", "--L-max", "4"];
    assert_eq!(run_ok(&args), run_ok(&args));
}

#[test]
fn check_table_csv() {
    let text = run_ok(&["check", "--table", "--family", "hmm,lcm", "--k", "2", "--d", "2", "--L-max", "4", "--format", "csv"]);
    let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(lines[0], "family,k,d,pairs,all-pairs,thin-triples,triples,all-thin-triples,all-triples");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("hmm,2,2,none,>=3"));
    assert!(lines[2].starts_with("lcm,2,2,none,none"));
}

#[test]
fn check_table_respects_thread_cap() {
    let out = bin()
        .env("LATENT_UNMIX_THREADS", "1")
        .args(["check", "--table", "--family", "hmm", "--k", "2", "--d", "2", "--L-max", "3"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let bad = bin().env("LATENT_UNMIX_THREADS", "x").args(["validate", "--in", "nope.json"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn mixing_l3_exports() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("m3");
    let summary = run_ok(&["mixing", "--family", "pcfg-ie", "--obs", "all-thin-triples", "--L", "3", "--out", prefix.to_str().unwrap()]);
    assert!(summary.contains("3 rows x 3 columns"), "{summary}");
    assert!(summary.contains("rank 3"));
    assert!(summary.contains("row sums exact: 3/3"));
    let csv = std::fs::read_to_string(dir.path().join("m3.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[1], "3:123eta,0.5,0.5,0");
    let v = read_json(&dir.path().join("m3.json"));
    assert_eq!(v["result"]["rows"], 3);
    assert_eq!(v["result"]["columns"], 3);
    assert_eq!(v["result"]["row_sum_violations"].as_array().unwrap().len(), 0);
}

#[test]
fn simulate_estimate_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.txt");
    let truth = dir.path().join("truth.json");
    let est = dir.path().join("est.json");
    run_ok(&[
        "simulate", "--family", "hmm", "--k", "2", "--d", "3", "--L", "3", "--samples", "20000", "--seed", "5", "--out",
        corpus.to_str().unwrap(), "--params-out", truth.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&corpus).unwrap();
    assert!(text.starts_with("# latent-unmix"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 20000);

    run_ok(&["estimate", "--family", "hmm", "--k", "2", "--in", corpus.to_str().unwrap(), "--out", est.to_str().unwrap()]);
    let v = read_json(&est);
    assert_eq!(v["result"]["source"], "empirical");
    assert_eq!(v["result"]["samples"]["3"], 20000);

    let report = json(&run_ok(&["eval", "--in", est.to_str().unwrap(), "--truth", truth.to_str().unwrap()]));
    let err = report["result"]["error"].as_f64().unwrap();
    assert!(err.is_finite() && err < 1.0, "error {err}");

    // exact moments recover the truth
    let exact = json(&run_ok(&["estimate", "--family", "hmm", "--in", truth.to_str().unwrap(), "--truth", truth.to_str().unwrap()]));
    assert_eq!(exact["result"]["source"], "exact");
    assert!(exact["result"]["match"]["error"].as_f64().unwrap() < 1e-8);
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    for p in [&a, &b] {
        run_ok(&["simulate", "--family", "dep-ies", "--d", "3", "--L-min", "2", "--L-max", "3", "--samples", "50", "--seed", "9", "--out", p.to_str().unwrap()]);
    }
    let ta = std::fs::read_to_string(&a).unwrap();
    let tb = std::fs::read_to_string(&b).unwrap();
    assert_eq!(ta.lines().skip(1).collect::<Vec<_>>(), tb.lines().skip(1).collect::<Vec<_>>());
}

#[test]
fn estimate_exact_pcfg_ie_and_dep_ies() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("unused.txt");
    for (family, extra) in [("pcfg-ie", vec!["--k", "2", "--d", "3"]), ("dep-ies", vec!["--d", "3"])] {
        let truth = dir.path().join(format!("{family}.json"));
        let mut args = vec!["simulate", "--family", family, "--samples", "1", "--seed", "2", "--out", corpus.to_str().unwrap()];
        args.extend(extra);
        args.extend(["--params-out", truth.to_str().unwrap()]);
        run_ok(&args);
        let v = json(&run_ok(&["estimate", "--family", family, "--in", truth.to_str().unwrap(), "--truth", truth.to_str().unwrap()]));
        let err = v["result"]["match"]["error"].as_f64().unwrap();
        assert!(err < 1e-7, "{family}: error {err}");
    }
}

#[test]
fn eval_self_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.txt");
    let truth = dir.path().join("t.json");
    run_ok(&["simulate", "--family", "pcfg", "--k", "2", "--d", "2", "--samples", "1", "--out", corpus.to_str().unwrap(), "--params-out", truth.to_str().unwrap()]);
    let v = json(&run_ok(&["eval", "--in", truth.to_str().unwrap(), "--truth", truth.to_str().unwrap()]));
    assert_eq!(v["result"]["error"].as_f64().unwrap(), 0.0);
    assert_eq!(v["result"]["permutation"], serde_json::json!([0, 1]));
}

#[test]
fn validate_reports_invalid_params() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    std::fs::write(&good, r#"{"family":"lcm","k":2,"d":2,"pi":[0.5,0.5],"O":[[0.9,0.2],[0.1,0.8]]}"#).unwrap();
    let v = json(&run_ok(&["validate", "--in", good.to_str().unwrap()]));
    assert_eq!(v["result"]["valid"], true);
    assert_eq!(v["result"]["free_parameters"], 3);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"family":"lcm","k":2,"d":2,"pi":[0.5,0.5],"O":[[0.9,0.2],[0.2,0.8]]}"#).unwrap();
    let out = run(&["validate", "--in", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[invalid-params]"));
}

#[test]
fn estimate_errors_are_categorized() {
    let dir = tempfile::tempdir().unwrap();
    let truth = dir.path().join("t.json");
    std::fs::write(&truth, r#"{"family":"lcm","k":2,"d":2,"pi":[0.5,0.5],"O":[[0.9,0.2],[0.1,0.8]]}"#).unwrap();
    let out = run(&["estimate", "--family", "lcm", "--in", truth.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[unsupported]"));

    let out = run(&["estimate", "--family", "pcfg-ie", "--k", "2", "--eta-mode", "ones", "--in", truth.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--eta-mode both"));
}

#[test]
fn hypergraph_dump() {
    let text = run_ok(&["hypergraph", "--family", "hmm", "--k", "2", "--d", "2", "--L", "2"]);
    assert!(text.starts_with("# latent-unmix"));
    assert!(text.lines().any(|l| l.starts_with("node ")));
    assert!(text.lines().any(|l| l.starts_with("edge ")));
}
