use std::path::Path;
use std::process::{Command, Output};

use rfl_mpc::harness::{evaluate, SimLog};

fn rfl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rfl-mpc")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr_lines(out: &Output) -> usize {
    String::from_utf8_lossy(&out.stderr).lines().filter(|l| !l.trim().is_empty()).count()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn help_and_version_succeed() {
    let out = rfl(&["--help"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["collect", "train", "run", "eval", "compare"] {
        assert!(text.contains(sub), "{text}");
    }
    assert_eq!(code(&rfl(&["--version"])), 0);
    assert_eq!(code(&rfl(&["train", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one_with_one_line() {
    for args in [
        vec!["frobnicate"],
        vec!["run", "--bogus"],
        vec!["train"],
        vec!["run", "--seed", "minus-one"],
        vec!["run", "--path", "Q9"],
    ] {
        let out = rfl(&args);
        assert_eq!(code(&out), 1, "{args:?}");
        assert_eq!(stderr_lines(&out), 1, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn malformed_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = p(dir.path(), "bad.toml");
    for text in ["bogus = 1\n", "[horizon]\nn = \"sixteen\"\n", "horizon.nc = 40\n", "[forest\n"] {
        std::fs::write(&cfg, text).unwrap();
        let out = rfl(&["run", "--config", &cfg]);
        assert_eq!(code(&out), 1, "{text}");
        assert_eq!(stderr_lines(&out), 1, "{text}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = rfl(&["run", "--config", &p(dir.path(), "missing.toml")]);
    assert_eq!(code(&out), 1);
}

#[test]
fn eval_on_empty_csv_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = p(dir.path(), "empty.csv");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(code(&rfl(&["eval", &empty])), 2);
    std::fs::write(&empty, SimLog::new(0.02).to_csv()).unwrap();
    let out = rfl(&["eval", &empty]);
    assert_eq!(code(&out), 2);
    assert_eq!(stderr_lines(&out), 1);
    assert_eq!(code(&rfl(&["eval", &p(dir.path(), "absent.csv")])), 2);
}

#[test]
fn run_eval_compare_round() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = p(d, "short.toml");
    std::fs::write(&cfg, "[paths]\neval = [\"S20 L30:90 S20\"]\n").unwrap();
    assert_eq!(code(&rfl(&["run", "--config", &cfg, "--out", &p(d, "a.csv")])), 0);
    assert_eq!(code(&rfl(&["run", "--config", &cfg, "--path", "S20 R35:60 S20", "--out", &p(d, "b.csv")])), 0);

    let out = rfl(&["eval", &p(d, "b.csv"), "--baseline", &p(d, "a.csv")]);
    assert_eq!(code(&out), 0);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["mae", "rmse", "me"] {
        assert!(report["e1"][key].is_number() && report["e2"][key].is_number());
    }
    assert!(report["pe_percent"].is_number());
    assert!(report["timing"]["mean_ms"].is_number() && report["timing"]["max_ms"].is_number());

    let out = rfl(&["compare", &p(d, "a.csv"), &p(d, "b.csv")]);
    assert_eq!(code(&out), 0);
    let table = String::from_utf8(out.stdout).unwrap();
    let printed: f64 = table
        .lines()
        .find_map(|l| l.strip_prefix("pe_percent,,"))
        .expect("pe row")
        .parse()
        .unwrap();
    let a = SimLog::load(Path::new(&p(d, "a.csv"))).unwrap();
    let b = SimLog::load(Path::new(&p(d, "b.csv"))).unwrap();
    let expected = evaluate(&b, Some(&a)).unwrap().pe_percent.unwrap();
    assert!((printed - expected).abs() <= 5e-5, "{printed} vs {expected}");
}

#[test]
fn timing_flag_fills_step_times() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = p(dir.path(), "t.csv");
    assert_eq!(code(&rfl(&["run", "--path", "S15", "--timing", "--out", &out_path])), 0);
    let log = SimLog::load(Path::new(&out_path)).unwrap();
    assert!(log.records.iter().all(|r| r.step_ms > 0.0));
    assert_eq!(code(&rfl(&["run", "--path", "S15", "--out", &out_path])), 0);
    let log = SimLog::load(Path::new(&out_path)).unwrap();
    assert!(log.records.iter().all(|r| r.step_ms == 0.0));
}

#[test]
fn collect_and_train_report_leaf_linear_gain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&rfl(&["collect", "--out", &p(d, "data.csv")])), 0);
    let out = rfl(&[
        "train",
        "--data",
        &p(d, "data.csv"),
        "--trees",
        "20",
        "--depth",
        "6",
        "--out",
        &p(d, "model.json"),
        "--report",
        &p(d, "fit.json"),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let model = rfl_mpc::residual::ResidualForest::load(Path::new(&p(d, "model.json"))).unwrap();
    assert_eq!(model.trees.len(), 20);
    assert!(model.trees.iter().all(|t| t.depth() <= 6));
    let fit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p(d, "fit.json")).unwrap()).unwrap();
    let lin = fit["test"]["leaf_linear"][0]["rmse"].as_f64().unwrap();
    let mean = fit["test"]["leaf_mean"][0]["rmse"].as_f64().unwrap();
    assert!(lin < mean, "{lin} vs {mean}");

    // a different seed changes the dithered dataset
    assert_eq!(code(&rfl(&["collect", "--seed", "7", "--out", &p(d, "data7.csv")])), 0);
    assert_ne!(std::fs::read(p(d, "data.csv")).unwrap(), std::fs::read(p(d, "data7.csv")).unwrap());

    // a model for another horizon is rejected at run time
    let cfg = p(d, "n8.toml");
    std::fs::write(&cfg, "horizon.n = 8\nhorizon.nc = 8\nforest.min_leaf = 20\n").unwrap();
    let out = rfl(&["run", "--config", &cfg, "--model", &p(d, "model.json"), "--out", &p(d, "x.csv")]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_rejects_bad_overrides_and_missing_data() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&rfl(&["train", "--data", &p(d, "nope.csv")])), 2);
    std::fs::write(p(d, "junk.csv"), "a,b\n1,2\n").unwrap();
    assert_eq!(code(&rfl(&["train", "--data", &p(d, "junk.csv")])), 2);
    assert_eq!(code(&rfl(&["train", "--data", &p(d, "junk.csv"), "--trees", "0"])), 1);
}
