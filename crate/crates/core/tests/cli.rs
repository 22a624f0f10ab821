use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn toy_file() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy.toml")
}

fn robustpo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robustpo")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("experiment.toml");
    std::fs::write(&path, format!("[mdp]\nfile = {:?}\n{body}", toy_file())).unwrap();
    path
}

#[test]
fn reproduce_toy_passes_and_writes_json() {
    let o = robustpo(&["reproduce-toy", "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(doc["passed"], true);
    assert_eq!(doc["checks"].as_array().unwrap().len(), 8);
}

#[test]
fn reproduce_toy_fails_on_other_discount() {
    let cfg = configs().join("reproduce_gamma05.toml");
    let o = robustpo(&["reproduce-toy", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn spo_config_reaches_the_corner() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("spo_toy.toml");
    let o = robustpo(&["train", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(tmp.path().join("trace.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "iter,v_nat,v_adv,v_adv_exact,grad_norm,inner_metric");
    let last: Vec<&str> = csv.lines().last().unwrap().split(',').collect();
    assert_eq!(last[0], "300");
    let v: f64 = last[1].parse().unwrap();
    assert!((v - 1.03).abs() < 0.01, "final v_nat {v}");
    let m = robustpo::manifest::RunManifest::load(tmp.path()).unwrap();
    assert_eq!(m.command, "train");
    let names: Vec<&str> = m.outputs.iter().map(|o| o.path.as_str()).collect();
    assert_eq!(names, ["trace.csv", "trace.jsonl", "final_policy.toml"]);
    assert!(m.mismatches(tmp.path()).is_empty());
}

#[test]
fn attack_strongest_row_is_minimal() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["attack", "attack_embedded"] {
        let out = tmp.path().join(name);
        let cfg = configs().join(format!("{name}.toml"));
        let o = robustpo(&["attack", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let csv = std::fs::read_to_string(out.join("attacks.csv")).unwrap();
        let rows: Vec<(String, f64)> = csv
            .lines()
            .skip(1)
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                (f[0].to_string(), f[1].parse().unwrap())
            })
            .collect();
        let strongest = rows.iter().find(|r| r.0 == "exact_strongest").unwrap().1;
        assert!(rows.iter().all(|r| strongest <= r.1), "{name}: {csv}");
    }
}

#[test]
fn sweep_robust_never_exceeds_natural() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[sweep]\nresolution = 21\n");
    let out = tmp.path().join("out");
    let o = robustpo(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("landscape.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 21 * 21);
    for line in csv.lines().skip(1) {
        let f: Vec<f64> = line.split(',').take(4).map(|x| x.parse().unwrap()).collect();
        assert!(f[3] <= f[2] + 1e-9, "{line}");
    }
}

#[test]
fn seed_flag_controls_basin_inits() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[policy]\nvariant = \"direct2\"\nalpha = 0.5\nbeta = 0.5\n[basins]\nn_inits = 5\n[train]\nparadigm = \"spo\"\nouter_steps = 5\n",
    );
    let run = |seed: &str, dir: &str| {
        let out = tmp.path().join(dir);
        let o = robustpo(&["basins", "--config", cfg.to_str().unwrap(), "--seed", seed, "--workers", "1", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        std::fs::read_to_string(out.join("terminals.csv")).unwrap()
    };
    assert_eq!(run("4", "a"), run("4", "b"));
    assert_ne!(run("4", "a"), run("5", "c"));
}

#[test]
fn config_errors_exit_2_with_line_numbers() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[sweep]\nresolution = 21\nresolutoin = 3\n");
    let o = robustpo(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("line 5"), "{err}");

    let cfg = write_config(tmp.path(), "[sweep]\nresolution = 1\n");
    let o = robustpo(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = robustpo(&["sweep", "--config", "/nonexistent/config.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_without_policy_creates_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[train]\nparadigm = \"spo\"\n");
    let out = tmp.path().join("never");
    let o = robustpo(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}
