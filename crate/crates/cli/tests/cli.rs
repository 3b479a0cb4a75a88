use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const C1: &str = r#"{"states":["a","g"],"P":[[0.75,0.25],[0.0,1.0]],"absorbing":["g"]}"#;
const C2: &str =
    r#"{"states":["1","2","3"],"P":[[0.5,0.3,0.2],[0.2,0.5,0.3],[0.0,0.0,1.0]],"absorbing":["3"]}"#;

fn qst(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qst"))
        .args(args)
        .current_dir(dir)
        .env_remove("QST_THREADS")
        .output()
        .expect("qst runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn analyze_two_state() {
    let dir = TempDir::new().unwrap();
    let chain = write(dir.path(), "c1.json", C1);
    let o = qst(&["analyze", "--chain", &chain, "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let spectral = json(&dir.path().join("out/spectral.json"));
    assert_eq!(spectral["lambda"].as_f64().unwrap(), 0.75);
    let csv = fs::read_to_string(dir.path().join("out/separation.csv")).unwrap();
    assert!(csv.starts_with("t,s_tilde_alpha,s_tilde_global\n"));
}

#[test]
fn analyze_three_state() {
    let dir = TempDir::new().unwrap();
    let chain = write(dir.path(), "c2.json", C2);
    let o = qst(&["analyze", "--chain", &chain, "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let spectral = json(&dir.path().join("out/spectral.json"));
    let lambda = spectral["lambda"].as_f64().unwrap();
    assert!((lambda - (0.5 + 0.06f64.sqrt())).abs() < 1e-12);
    assert!((spectral["delta_alpha"].as_f64().unwrap() + 0.36165).abs() < 1e-4);
}

#[test]
fn periodic_chain_rejected() {
    let dir = TempDir::new().unwrap();
    let chain = write(
        dir.path(),
        "cycle.json",
        r#"{"states":["a","b","g"],"P":[[0,0.9,0.1],[0.9,0,0.1],[0,0,1]],"absorbing":["g"]}"#,
    );
    let o = qst(&["analyze", "--chain", &chain], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("primitive"), "{}", stderr(&o));
}

#[test]
fn corrupted_row_sum_rejected_before_verification() {
    let dir = TempDir::new().unwrap();
    let chain = write(
        dir.path(),
        "bad.json",
        r#"{"states":["a","g"],"P":[[0.74,0.25],[0,1]],"absorbing":["g"]}"#,
    );
    let o = qst(&["verify", "--chain", &chain, "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("out/summary.json").exists());
}

#[test]
fn non_absorbing_target_needs_flag() {
    let dir = TempDir::new().unwrap();
    let chain = write(
        dir.path(),
        "leaky.json",
        r#"{"states":["a","g"],"P":[[0.75,0.25],[0.5,0.5]],"absorbing":["g"]}"#,
    );
    let o = qst(&["analyze", "--chain", &chain, "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = qst(
        &["analyze", "--chain", &chain, "--out", "out", "--force-absorb"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn verify_two_state_has_vanishing_residuals() {
    let dir = TempDir::new().unwrap();
    let chain = write(dir.path(), "c1.json", C1);
    let o = qst(&["verify", "--chain", &chain, "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary = json(&dir.path().join("out/summary.json"));
    assert_eq!(summary["passed"], Value::Bool(true));
    for check in summary["checks"].as_array().unwrap() {
        assert!(check["residual"].as_f64().unwrap() <= 1e-15, "{check}");
    }
}

#[test]
fn verify_three_state_point_mass() {
    let dir = TempDir::new().unwrap();
    let chain = write(dir.path(), "c2.json", C2);
    let o = qst(
        &["verify", "--chain", &chain, "--alpha", "point:1", "--out", "out"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary = json(&dir.path().join("out/summary.json"));
    assert!(summary["max_residual"].as_f64().unwrap() <= 1e-10);
    let csv = fs::read_to_string(dir.path().join("out/csqst.csv")).unwrap();
    assert!(csv.starts_with("t,atom,tail,partial_sum_identity_residual\n"));
    assert_eq!(csv.lines().count(), 2 + summary["t_max"].as_u64().unwrap() as usize);
    for name in ["tail_report.csv", "exit_split.csv", "strong_time.csv"] {
        assert!(dir.path().join("out").join(name).exists(), "{name}");
    }
}

#[test]
fn alpha_forms() {
    let dir = TempDir::new().unwrap();
    let chain = write(dir.path(), "c2.json", C2);
    for alpha in ["mu-star", "uniform", "point:2", "1=0.25,2=0.75"] {
        let o = qst(
            &["analyze", "--chain", &chain, "--alpha", alpha, "--out", "out"],
            dir.path(),
        );
        assert_eq!(o.status.code(), Some(0), "{alpha}: {}", stderr(&o));
    }
    let spectral = json(&dir.path().join("out/spectral.json"));
    let tilted: Vec<f64> = spectral["alpha_tilde"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert!((tilted.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    for bad in ["point:3", "point:9", "1=0.5", "gaussian"] {
        let o = qst(
            &["analyze", "--chain", &chain, "--alpha", bad, "--out", "out"],
            dir.path(),
        );
        assert_eq!(o.status.code(), Some(2), "{bad}");
    }
}

#[test]
fn alpha_from_chain_file() {
    let dir = TempDir::new().unwrap();
    let chain = write(
        dir.path(),
        "c2a.json",
        r#"{"states":["1","2","3"],"P":[[0.5,0.3,0.2],[0.2,0.5,0.3],[0,0,1]],
            "absorbing":["3"],"alpha":{"2":1.0}}"#,
    );
    let o = qst(&["analyze", "--chain", &chain, "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let spectral = json(&dir.path().join("out/spectral.json"));
    assert_eq!(spectral["alpha"], Value::String("file".into()));
    assert_eq!(spectral["alpha_tilde"][1].as_f64().unwrap(), 1.0);
}

#[test]
fn report_writes_tail_and_exit_split() {
    let dir = TempDir::new().unwrap();
    let o = qst(&["zoo", "trap-walk-6"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let o = qst(
        &["report", "--chain", "trap-walk-6.json", "--alpha", "point:2", "--out", "out"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let split = fs::read_to_string(dir.path().join("out/exit_split.csv")).unwrap();
    assert_eq!(split.lines().count(), 3);
    let tail = fs::read_to_string(dir.path().join("out/tail_report.csv")).unwrap();
    assert!(tail.starts_with("t,exact_tail,leading_term,residual,"));
}

#[test]
fn zoo_emits_reference_chains() {
    let dir = TempDir::new().unwrap();
    let o = qst(&["zoo", "two-state", "--out", "-"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let emitted: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(emitted, serde_json::from_str::<Value>(C1).unwrap());
    let o = qst(&["zoo", "three-state", "--out", "c2.json"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        json(&dir.path().join("c2.json")),
        serde_json::from_str::<Value>(C2).unwrap()
    );
    let o = qst(&["zoo", "birth-death-8", "--drift", "0.3"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let o = qst(&["analyze", "--chain", "birth-death-8.json", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = qst(&["zoo", "five-state"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn every_zoo_model_verifies() {
    let dir = TempDir::new().unwrap();
    // birth-death-64 is covered by the same code path and takes ~20 s.
    for name in [
        "two-state",
        "three-state",
        "birth-death-4",
        "birth-death-8",
        "birth-death-16",
        "birth-death-32",
        "trap-walk-3",
        "trap-walk-6",
        "trap-walk-12",
    ] {
        assert_eq!(qst(&["zoo", name], dir.path()).status.code(), Some(0));
        let chain = format!("{name}.json");
        let out = format!("out-{name}");
        let o = qst(&["verify", "--chain", &chain, "--out", &out], dir.path());
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stderr(&o));
    }
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let chain = write(dir.path(), "c2.json", C2);
    for out in ["a", "b"] {
        let o = qst(&["verify", "--chain", &chain, "--out", out], dir.path());
        assert_eq!(o.status.code(), Some(0));
    }
    for name in ["csqst.csv", "tail_report.csv", "exit_split.csv", "strong_time.csv"] {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        let b = fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn simulate_two_state() {
    let dir = TempDir::new().unwrap();
    let chain = write(dir.path(), "c1.json", C1);
    let o = qst(
        &["simulate", "--chain", &chain, "--n", "100000", "--seed", "7", "--out", "out"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out/sim_tail.csv")).unwrap();
    assert!(csv.starts_with("t,empirical,lo99,hi99,exact\n"));
}

#[test]
fn simulate_is_deterministic_and_thread_independent() {
    let dir = TempDir::new().unwrap();
    let chain = write(dir.path(), "c2.json", C2);
    let run = |out: &str, threads: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_qst"));
        cmd.args([
            "simulate", "--chain", &chain, "--alpha", "point:1", "--n", "200000", "--seed", "42",
            "--t-cap", "20", "--out", out,
        ])
        .current_dir(dir.path());
        match threads {
            Some(k) => cmd.env("QST_THREADS", k),
            None => cmd.env_remove("QST_THREADS"),
        };
        let o = cmd.output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    };
    run("a", Some("1"));
    run("b", Some("3"));
    run("c", None);
    for name in ["sim_tail.csv", "sim_stop_tail.csv", "sim_combined_tail.csv", "sim_exit.csv"] {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        assert_eq!(a, fs::read(dir.path().join("b").join(name)).unwrap(), "{name}");
        assert_eq!(a, fs::read(dir.path().join("c").join(name)).unwrap(), "{name}");
    }
}

#[test]
fn simulate_small_sample_warns() {
    let dir = TempDir::new().unwrap();
    let chain = write(dir.path(), "c2.json", C2);
    let o = qst(
        &["simulate", "--chain", &chain, "--n", "10", "--hazard", "strong", "--out", "out"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("uninformative"));
}

#[test]
fn bad_thread_count_rejected() {
    let dir = TempDir::new().unwrap();
    let chain = write(dir.path(), "c1.json", C1);
    let o = Command::new(env!("CARGO_BIN_EXE_qst"))
        .args(["simulate", "--chain", &chain, "--n", "10", "--out", "out"])
        .current_dir(dir.path())
        .env("QST_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn tolerance_overrides() {
    let dir = TempDir::new().unwrap();
    let chain = write(dir.path(), "c2.json", C2);
    let base = ["verify", "--chain", chain.as_str(), "--alpha", "point:1", "--out", "out"];
    let o = qst(&[&base[..], &["--tol", "tail=1e-300"]].concat(), dir.path());
    let summary = json(&dir.path().join("out/summary.json"));
    let mut expect_pass = true;
    for check in summary["checks"].as_array().unwrap() {
        if check["name"].as_str().unwrap().starts_with("tail.") {
            assert_eq!(check["tolerance"].as_f64(), Some(1e-300), "{check}");
            expect_pass &= check["residual"].as_f64().unwrap() <= 1e-300;
        }
    }
    assert_eq!(o.status.code(), Some(if expect_pass { 0 } else { 4 }), "{}", stderr(&o));

    let o = qst(&[&base[..], &["--tol", "no_such_check=1e-3"]].concat(), dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = qst(&[&base[..], &["--tol", "tail=-1"]].concat(), dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
