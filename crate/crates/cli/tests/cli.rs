use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bnn")).args(args).env("BNN_NUM_THREADS", "2").output().expect("bnn runs")
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name).canonicalize().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("experiment.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

fn ngvi_config(dir: &Path, extra: &str) -> String {
    let body = format!(
        "seed = 3\nmethod = \"ngvi\"\nn_iterations = 200\n{extra}\n[data]\npath = {:?}\ntask = \"regression\"\n\n[model]\nkind = \"linear\"\nnoise_var = 1.0\n\n[predict]\nn_s = 50\n",
        data("conjugate.csv")
    );
    write_config(dir, &body)
}

#[test]
fn fit_then_predict_writes_one_summary_per_row() {
    let tmp = TempDir::new().unwrap();
    let cfg = ngvi_config(tmp.path(), "");
    let run = tmp.path().join("run");
    let out = bnn(&["fit", "--config", &cfg, "--out", run.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["trace.jsonl", "summary.json", "posterior.json", "config.toml"] {
        assert!(run.join(file).is_file(), "{file} missing");
    }
    let trace = fs::read_to_string(run.join("trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 200);

    let inputs = tmp.path().join("inputs.csv");
    fs::write(&inputs, "x0,x1,x2,x3,x4\n0,0,0,0,0\n1,-1,0.5,2,0\n").unwrap();
    let out = bnn(&["predict", "--run", run.to_str().unwrap(), "--inputs", inputs.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let preds = fs::read_to_string(run.join("predictions.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> = preds.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        assert_eq!(row["mean"].as_array().unwrap().len(), 1);
        assert_eq!(row["n_draws"], 50);
    }
}

#[test]
fn same_seed_gives_identical_traces() {
    let tmp = TempDir::new().unwrap();
    let cfg = ngvi_config(tmp.path(), "");
    let read = |name: &str| {
        let dir = tmp.path().join(name);
        assert_eq!(bnn(&["fit", "--config", &cfg, "--out", dir.to_str().unwrap()]).status.code(), Some(0));
        fs::read(dir.join("trace.jsonl")).unwrap()
    };
    assert_eq!(read("a"), read("b"));
}

#[test]
fn invalid_configs_exit_with_config_code() {
    let tmp = TempDir::new().unwrap();
    let unknown = ngvi_config(tmp.path(), "bogus_key = 1");
    assert_eq!(bnn(&["fit", "--config", &unknown]).status.code(), Some(2));

    let hmc = format!(
        "seed = 1\nmethod = \"hmc\"\nn_iterations = 10\n\n[data]\npath = {:?}\n\n[model]\nkind = \"linear\"\n",
        data("conjugate.csv")
    );
    let hmc = write_config(tmp.path(), &hmc);
    let out = bnn(&["sample", "--config", &hmc]);
    assert_eq!(out.status.code(), Some(2), "missing step size: {}", String::from_utf8_lossy(&out.stderr));

    let ngvi = ngvi_config(tmp.path(), "");
    assert_eq!(bnn(&["sample", "--config", &ngvi]).status.code(), Some(2), "fit method under sample");
}

#[test]
fn missing_inputs_exit_with_data_code() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nowhere");
    let out = bnn(&["predict", "--run", missing.to_str().unwrap(), "--inputs", data("conjugate.csv").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let cfg = format!(
        "seed = 1\nmethod = \"ngvi\"\nn_iterations = 10\n\n[data]\npath = {:?}\n\n[model]\nkind = \"linear\"\n",
        tmp.path().join("absent.csv")
    );
    let cfg = write_config(tmp.path(), &cfg);
    assert_eq!(bnn(&["fit", "--config", &cfg, "--out", tmp.path().join("r").to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn gradient_check_fails_only_under_fault_injection() {
    let clean = bnn(&["check", "gradients"]);
    assert_eq!(clean.status.code(), Some(0), "{}", String::from_utf8_lossy(&clean.stdout));
    let faulty = bnn(&["check", "gradients", "--fault-injection"]);
    assert_eq!(faulty.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&faulty.stdout).contains("FAIL"));
}
