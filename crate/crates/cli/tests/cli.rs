use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = r#"mode = "cluster"
seed = 3

[dataset]
source = "synthetic"
kind = "gaussian-grid"
classes = 2
samples = 120

[em]
iterations = 2
m_epochs = 1
e_iterations = 5
clip = 1.0

[model]
noise_dim = 2
generator_hidden = [8]
discriminator_hidden = [8]
enet_hidden = [8]
"#;

struct Sandbox {
    root: TempDir,
}

impl Sandbox {
    fn new() -> Self {
        Self {
            root: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self) -> &Path {
        self.root.path()
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path().join(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn ganem(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_ganem"))
            .args(args)
            .env("GANEM_OUTPUT_ROOT", self.path())
            .output()
            .unwrap()
    }

    fn run(&self, config: &Path) -> Output {
        let out = self.ganem(&["run", config.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        out
    }

    fn run_dir(&self, stem: &str) -> PathBuf {
        self.path().join("runs").join(stem)
    }
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn last_row(csv: &str) -> Vec<String> {
    let mut r = csv::Reader::from_reader(csv.as_bytes());
    let header = r.headers().unwrap().clone();
    let row = r.records().last().unwrap().unwrap();
    header.iter().zip(row.iter()).map(|(h, v)| format!("{h}={v}")).collect()
}

#[test]
fn reruns_write_identical_metrics() {
    let sb = Sandbox::new();
    let a = sb.write("a.toml", TINY);
    let b = sb.write("b.toml", TINY);
    sb.run(&a);
    sb.run(&b);
    let first = fs::read(sb.run_dir("a").join("metrics.csv")).unwrap();
    let second = fs::read(sb.run_dir("b").join("metrics.csv")).unwrap();
    assert_eq!(first, second);
    let assign_a = fs::read(sb.run_dir("a").join("final_assignments.csv")).unwrap();
    let assign_b = fs::read(sb.run_dir("b").join("final_assignments.csv")).unwrap();
    assert_eq!(assign_a, assign_b);
}

#[test]
fn evaluate_reproduces_the_final_metrics_row() {
    let sb = Sandbox::new();
    let cfg = sb.write("tiny.toml", TINY);
    sb.run(&cfg);
    let dir = sb.run_dir("tiny");
    let metrics = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    let final_error: f64 = last_row(&metrics)
        .iter()
        .find_map(|kv| kv.strip_prefix("clustering_error=").map(|v| v.parse().unwrap()))
        .unwrap();

    let out = sb.ganem(&["evaluate", dir.to_str().unwrap(), cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let scores: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("scores.json")).unwrap()).unwrap();
    assert_eq!(scores["clustering_error"].as_f64().unwrap(), final_error);
    let sizes: u64 = scores["cluster_sizes"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(sizes, 120);
}

#[test]
fn assignments_are_row_stochastic() {
    let sb = Sandbox::new();
    let cfg = sb.write("tiny.toml", TINY);
    sb.run(&cfg);
    let mut r = csv::Reader::from_path(sb.run_dir("tiny").join("final_assignments.csv")).unwrap();
    let header = r.headers().unwrap().clone();
    let probs: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with("p_")).collect();
    assert_eq!(probs.len(), 2);
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec.unwrap();
        let s: f64 = probs.iter().map(|&i| rec[i].parse::<f64>().unwrap()).sum();
        assert!((s - 1.0).abs() <= 1e-9);
        rows += 1;
    }
    assert_eq!(rows, 120);
}

#[test]
fn missing_checkpoint_is_an_error() {
    let sb = Sandbox::new();
    let cfg = sb.write("tiny.toml", TINY);
    let missing = sb.path().join("nowhere");
    let out = sb.ganem(&["evaluate", missing.to_str().unwrap(), cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!stderr(&out).is_empty());
}

#[test]
fn invalid_config_exits_with_code_two_and_a_line() {
    let sb = Sandbox::new();
    let cfg = sb.write("bad.toml", &TINY.replace("clip = 1.0", "clip = -1.0"));
    let out = sb.ganem(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("bad.toml:"), "{msg}");
    assert!(msg.contains("clip"), "{msg}");

    let cfg = sb.write("typo.toml", &TINY.replace("m_epochs = 1", "m_epoch = 1"));
    let out = sb.ganem(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("typo.toml:12:"), "{}", stderr(&out));
}

#[test]
fn gmm_baseline_log_likelihood_never_decreases() {
    let sb = Sandbox::new();
    let cfg = sb.write(
        "gmm.toml",
        "mode = \"baseline-gmm\"\nseed = 1\n\n[dataset]\nsource = \"synthetic\"\nkind = \"gaussian-grid\"\nclasses = 4\nsamples = 400\n",
    );
    sb.run(&cfg);
    let mut r = csv::Reader::from_path(sb.run_dir("gmm").join("metrics.csv")).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), ["iteration", "log_likelihood"]);
    let ll: Vec<f64> = r.records().map(|rec| rec.unwrap()[1].parse().unwrap()).collect();
    assert!(ll.len() > 1);
    for pair in ll.windows(2) {
        assert!(pair[1] >= pair[0] - 1e-9, "{pair:?}");
    }
}

#[test]
fn verify_theory_passes() {
    let sb = Sandbox::new();
    let out = sb.ganem(&["verify-theory", "--trials", "20", "--seed", "5"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).lines().any(|l| l == "PASS"));
}

#[test]
fn manifest_records_the_run() {
    let sb = Sandbox::new();
    let cfg = sb.write("tiny.toml", TINY);
    sb.run(&cfg);
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(sb.run_dir("tiny").join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["status"], "completed");
    assert_eq!(m["mode"], "cluster");
    assert_eq!(m["seed"], 3);
    let artifacts: Vec<&str> = m["artifacts"].as_array().unwrap().iter().map(|a| a.as_str().unwrap()).collect();
    for a in ["metrics.csv", "final_assignments.csv"] {
        assert!(artifacts.contains(&a), "{artifacts:?}");
    }
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let out = Command::new(env!("CARGO_BIN_EXE_ganem"))
                .args(["check", path.to_str().unwrap()])
                .output()
                .unwrap();
            assert!(out.status.success(), "{}: {}", path.display(), stderr(&out));
            seen += 1;
        }
    }
    assert!(seen >= 5);
}
