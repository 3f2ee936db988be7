use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pqlearn::estimators::{ols_fit, pq_fit, SolverOptions};
use pqlearn::multistage::stage_designs;
use pqlearn::penalty::{PenaltySpec, DEFAULT_ALPHA};
use pqlearn::rng::stream_rng;
use pqlearn::simstudy::{generate, SimSetting};
use serde_json::Value;

const LAYOUT: &str = r#"
[data]
id = "id"

[[stages]]
main = ["1", "O1"]
interaction = ["1", "O1"]
action = "A1"
reward = "R1"

[[stages]]
main = ["1", "O1", "A1", "O1*A1"]
interaction = ["1", "O2", "A1"]
action = "A2"
reward = "R2"
"#;

fn pqlearn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pqlearn")).args(args).output().unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Workspace {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn file(&self, name: &str, body: &str) -> PathBuf {
        let p = self.dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn cohort(&self, setting: usize, n: usize, seed: u64) -> PathBuf {
        let out = self.path("cohort.csv");
        let seed = seed.to_string();
        let n = n.to_string();
        let setting = setting.to_string();
        let o = pqlearn(&["generate", "--setting", &setting, "--n", &n, "--seed", &seed, "--out", path_str(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    }

    fn fit(&self, data: &Path, penalty: &str) -> Value {
        let cfg = self.file("run.toml", &format!("{penalty}\n{LAYOUT}"));
        let out = self.path("fit.json");
        let o = pqlearn(&["fit", "--data", path_str(data), "--config", path_str(&cfg), "--out", path_str(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap()
    }
}

fn stage2_psi(doc: &Value) -> Vec<f64> {
    let stage = doc["stages"].as_array().unwrap().iter().find(|s| s["stage"] == 2).unwrap();
    stage["coefficients"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["block"] == "interaction")
        .map(|c| c["estimate"].as_f64().unwrap())
        .collect()
}

fn stage2_zero_count(doc: &Value) -> u64 {
    let stage = doc["stages"].as_array().unwrap().iter().find(|s| s["stage"] == 2).unwrap();
    stage["zero_set_size"].as_u64().unwrap()
}

#[test]
fn unpenalized_fit_matches_least_squares() {
    let ws = Workspace::new();
    let data = ws.cohort(2, 200, 11);
    let doc = ws.fit(&data, "[penalty]\nfamily = \"none\"\nlambda = 0.0");

    let traj = generate(&SimSetting::standard(2, 200).unwrap(), &mut stream_rng(11, 0));
    let (designs, ys) = stage_designs(&traj, 2).unwrap();
    let ols = ols_fit(&designs[1], &ys[1]).unwrap();
    let got = stage2_psi(&doc);
    assert_eq!(got.len(), 3);
    for (a, b) in got.iter().zip(ols.model.psi.iter()) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
    assert_eq!(stage2_zero_count(&doc), 0);
}

#[test]
fn adaptive_lasso_zero_set_matches_library() {
    let ws = Workspace::new();
    let data = ws.cohort(1, 300, 5);
    let doc = ws.fit(&data, "[penalty]\nfamily = \"adaptive_lasso\"\nlambda = 2.0");

    let traj = generate(&SimSetting::standard(1, 300).unwrap(), &mut stream_rng(5, 0));
    let (designs, ys) = stage_designs(&traj, 2).unwrap();
    let opts = SolverOptions::with_penalty(PenaltySpec::adaptive_lasso(2.0, DEFAULT_ALPHA));
    let fit = pq_fit(&designs[1], &ys[1], &opts).unwrap();
    assert_eq!(stage2_zero_count(&doc), fit.zero_set.len() as u64);
    for (a, b) in stage2_psi(&doc).iter().zip(fit.model.psi.iter()) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn fit_reports_every_subject() {
    let ws = Workspace::new();
    let data = ws.cohort(3, 120, 2);
    let doc = ws.fit(&data, "");
    assert_eq!(doc["schema_version"], 1);
    assert_eq!(doc["n_subjects"], 120);
    let stages = doc["stages"].as_array().unwrap();
    assert_eq!(stages.len(), 2);
    for s in stages {
        let subjects = s["subjects"].as_array().unwrap();
        assert_eq!(subjects.len(), 120);
        assert!(subjects.iter().all(|r| r["decision"] == 1 || r["decision"] == -1));
    }
}

#[test]
fn invalid_action_is_a_data_error_with_line() {
    let ws = Workspace::new();
    let data = ws.file(
        "bad.csv",
        "id,O1,A1,R1,O2,A2,R2\ns1,1,1,0,1,-1,0.5\ns2,1,-1,0,-1,2,0.1\n",
    );
    let cfg = ws.file("run.toml", LAYOUT);
    let out = ws.path("fit.json");
    let o = pqlearn(&["fit", "--data", path_str(&data), "--config", path_str(&cfg), "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
    assert!(!out.exists());
}

#[test]
fn missing_column_is_a_config_error() {
    let ws = Workspace::new();
    let data = ws.file("short.csv", "id,O1,A1,R1\ns1,1,1,0\n");
    let cfg = ws.file("run.toml", LAYOUT);
    let out = ws.path("fit.json");
    let o = pqlearn(&["fit", "--data", path_str(&data), "--config", path_str(&cfg), "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_setting_is_a_config_error() {
    let ws = Workspace::new();
    let out = ws.path("mc.csv");
    let o = pqlearn(&["simulate", "--setting", "9", "--reps", "2", "--seed", "1", "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let ws = Workspace::new();
    let cfg = ws.file("run.toml", "[penalty]\nlamda = 1.0\n");
    let out = ws.path("mc.csv");
    let o = pqlearn(&[
        "simulate", "--setting", "1", "--reps", "2", "--seed", "1", "--config", path_str(&cfg), "--out", path_str(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_is_reproducible_and_reports_each_estimator() {
    let ws = Workspace::new();
    let run = |name: &str| {
        let out = ws.path(name);
        let o = pqlearn(&[
            "simulate", "--setting", "1", "--n", "150", "--reps", "12", "--seed", "42", "--out", path_str(&out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(out).unwrap()
    };
    let a = run("a.csv");
    let b = run("b.csv");
    assert_eq!(a, b);

    let mut rdr = csv::Reader::from_reader(a.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "estimator").unwrap();
    let mut names: Vec<String> = rdr.records().map(|r| r.unwrap()[col].to_string()).collect();
    assert_eq!(names.len(), 6);
    names.dedup();
    assert_eq!(names, ["pq", "oracle", "hardmax"]);
}

#[test]
fn report_round_trips_simulate_output() {
    let ws = Workspace::new();
    let mc = ws.path("mc.csv");
    let o = pqlearn(&[
        "simulate", "--setting", "2", "--n", "120", "--reps", "8", "--seed", "3", "--estimators", "oracle,hardmax",
        "--out", path_str(&mc),
    ]);
    assert!(o.status.success());
    let printed = String::from_utf8(o.stdout).unwrap();

    let table = ws.path("table.txt");
    let o = pqlearn(&["report", "--data", path_str(&mc), "--out", path_str(&table)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rendered = std::fs::read_to_string(&table).unwrap();
    assert_eq!(rendered, printed);
    assert!(rendered.contains("oracle") && rendered.contains("hardmax"));
}

#[test]
fn report_marks_coverage_outside_band() {
    let ws = Workspace::new();
    let data = ws.file(
        "mc.csv",
        "setting,estimator,coefficient,bias,std_mc,std,cp,reps,seed\n\
         1,pq,psi11,0.001,0.1,0.1,95.0,1000,7\n\
         1,pq,psi12,0.002,0.1,0.1,91.2,1000,7\n\
         1,hardmax,psi11,0.01,0.1,,,1000,7\n",
    );
    let o = pqlearn(&["report", "--data", path_str(&data)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout).unwrap();
    let line = |coef: &str, est: &str| out.lines().find(|l| l.contains(coef) && l.contains(est)).unwrap().to_string();
    assert!(line("psi12", "pq").contains('*'));
    assert!(!line("psi11", "pq").contains('*'));
    assert!(line("psi11", "hardmax").contains('-'));
}

#[test]
fn report_rejects_empty_input() {
    let ws = Workspace::new();
    let data = ws.file("empty.csv", "");
    let o = pqlearn(&["report", "--data", path_str(&data)]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn bootstrap_writes_one_row_per_method() {
    let ws = Workspace::new();
    let out = ws.path("boot.csv");
    let o = pqlearn(&[
        "bootstrap", "--setting", "3", "--n", "100", "--reps", "3", "--boot-B", "100", "--estimators", "hardmax",
        "--seed", "9", "--out", path_str(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 2);
    assert!(text.lines().next().unwrap().contains("ci_method"));
}

#[test]
fn small_bootstrap_count_is_rejected() {
    let ws = Workspace::new();
    let out = ws.path("boot.csv");
    let o = pqlearn(&["bootstrap", "--setting", "3", "--reps", "2", "--boot-B", "10", "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(2));
}
