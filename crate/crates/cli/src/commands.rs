use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ganem::data::{sample_labeled_subset, Dataset, SynthKind};
use ganem::emcore::{argmax, GanEm, MetricsTrace, SoftAssignment, ThetaState};
use ganem::eval::{classification_error, clustering_error, embedding_matrix, export_embeddings, write_embeddings_csv};
use ganem::models::{ENet, ModelConfig};
use ganem::nn::{load_params_into, save_params};
use ganem::oracles::{gmm_em_fit, kmeans_fit, verify_theory as run_theory, GmmConfig, KmeansConfig, TheoryReport};
use ganem::rng::{stream, Stream};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{DatasetSpec, ExperimentConfig, Mode};
use crate::OUTPUT_ROOT_ENV;

pub enum Outcome {
    Success,
    /// The command ran but a verification it performs did not pass.
    ChecksFailed,
}

const CHECKPOINT_DIR: &str = "checkpoint";
const MODEL_FILE: &str = "model.json";

/// Everything needed to rebuild the networks of a checkpoint.
#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    classes: usize,
    data_dim: usize,
    model: ModelConfig,
    supervised: bool,
    dataset: DatasetSpec,
    seed: u64,
}

fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn run_dir(config: &ExperimentConfig, config_path: &Path) -> PathBuf {
    let rel = config.output_dir.clone().unwrap_or_else(|| {
        let stem = config_path.file_stem().map(|s| s.to_string_lossy().into_owned());
        PathBuf::from("runs").join(stem.unwrap_or_else(|| "run".into()))
    });
    if rel.is_absolute() {
        rel
    } else {
        output_root().join(rel)
    }
}

fn e17(x: f64) -> String {
    format!("{x:.17e}")
}

/// `index,assigned,truth,p_0..p_{K-1}`; `truth` is empty when unknown.
fn write_assignments(path: &Path, w: &SoftAssignment, truth: Option<&[usize]>) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["index", "assigned", "truth"].map(String::from).to_vec();
    header.extend((0..w.classes()).map(|c| format!("p_{c}")));
    out.write_record(&header)?;
    for i in 0..w.rows() {
        let row = w.row(i);
        let mut rec = vec![
            i.to_string(),
            argmax(row).to_string(),
            truth.map(|t| t[i].to_string()).unwrap_or_default(),
        ];
        rec.extend(row.iter().map(|&p| e17(p)));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

fn write_series(path: &Path, column: &str, values: &[f64]) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    out.write_record(["iteration", column])?;
    for (i, v) in values.iter().enumerate() {
        out.write_record([(i + 1).to_string(), e17(*v)])?;
    }
    out.flush()?;
    Ok(())
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

struct Manifest {
    path: PathBuf,
    config: ExperimentConfig,
    dataset: Option<Value>,
    summary: BTreeMap<String, Value>,
    artifacts: Vec<String>,
}

impl Manifest {
    fn write(&self, failure: Option<&anyhow::Error>) -> Result<()> {
        write_json(
            &self.path,
            &json!({
                "tool": "ganem",
                "version": env!("CARGO_PKG_VERSION"),
                "mode": self.config.mode.name(),
                "seed": self.config.seed,
                "status": if failure.is_some() { "failed" } else { "completed" },
                "error": failure.map(|e| format!("{e:#}")),
                "config": self.config,
                "dataset": self.dataset,
                "summary": self.summary,
                "artifacts": self.artifacts,
            }),
        )
    }
}

fn dataset_info(d: &Dataset) -> Value {
    json!({
        "name": d.meta.name,
        "samples": d.len(),
        "dim": d.dim(),
        "classes": d.classes(),
        "range": [d.meta.range.0, d.meta.range.1],
    })
}

const ARTIFACTS: [&str; 6] = [
    "metrics.csv",
    "final_assignments.csv",
    "embeddings.csv",
    "manifest.json",
    "scores.json",
    CHECKPOINT_DIR,
];

/// Removes outputs of an earlier run so the directory only describes this one.
fn clear_artifacts(dir: &Path) -> Result<()> {
    for name in ARTIFACTS {
        let p = dir.join(name);
        if p.is_dir() {
            fs::remove_dir_all(&p)?;
        } else if p.exists() {
            fs::remove_file(&p)?;
        }
    }
    Ok(())
}

/// Validates a config and loads its dataset without training.
pub fn check(config_path: &Path) -> Result<Outcome> {
    let text = fs::read_to_string(config_path).with_context(|| format!("reading {}", config_path.display()))?;
    let loaded = ExperimentConfig::load(&text, config_path)?;
    println!("mode = {}", loaded.config.mode.name());
    if let Some(d) = &loaded.dataset {
        println!("dataset = {} ({} samples, {} features)", d.meta.name, d.len(), d.dim());
    }
    Ok(Outcome::Success)
}

pub fn run(config_path: &Path) -> Result<Outcome> {
    let text = fs::read_to_string(config_path).with_context(|| format!("reading {}", config_path.display()))?;
    let loaded = ExperimentConfig::load(&text, config_path)?;
    let config = loaded.config;
    let dir = run_dir(&config, config_path);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    clear_artifacts(&dir)?;
    let mut manifest = Manifest {
        path: dir.join("manifest.json"),
        dataset: loaded.dataset.as_ref().map(dataset_info),
        config,
        summary: BTreeMap::new(),
        artifacts: Vec::new(),
    };
    let result = execute(&mut manifest, loaded.dataset.as_ref(), &dir);
    manifest.artifacts.push("manifest.json".into());
    match result {
        Ok(outcome) => {
            manifest.write(None)?;
            for (k, v) in &manifest.summary {
                println!("{k} = {v}");
            }
            println!("artifacts in {}", dir.display());
            Ok(outcome)
        }
        Err(e) => {
            manifest.write(Some(&e))?;
            Err(e)
        }
    }
}

fn execute(m: &mut Manifest, dataset: Option<&Dataset>, dir: &Path) -> Result<Outcome> {
    let mode = m.config.mode;
    if mode == Mode::VerifyTheory {
        let report = run_theory(m.config.verify.trials, m.config.seed)?;
        write_theory(&report, dir, m)?;
        return Ok(if report.passed() { Outcome::Success } else { Outcome::ChecksFailed });
    }
    let data = dataset.expect("validated configs carry a dataset");
    let truth = data.labels();
    let k = m.config.em.classes;
    let score = |labels: &[usize]| -> Result<Option<f64>> {
        Ok(match truth {
            Some(t) => Some(clustering_error(labels, t, k)?.error),
            None => None,
        })
    };
    match mode {
        Mode::BaselineGmm => {
            let mut cfg = GmmConfig {
                covariance: m.config.baseline.covariance,
                seed: m.config.seed,
                ..Default::default()
            };
            cfg.restarts = m.config.baseline.restarts.unwrap_or(cfg.restarts);
            cfg.max_iter = m.config.baseline.max_iter.unwrap_or(cfg.max_iter);
            let fit = gmm_em_fit(data.features(), k, &cfg)?;
            write_series(&dir.join("metrics.csv"), "log_likelihood", &fit.log_likelihood)?;
            write_assignments(&dir.join("final_assignments.csv"), &fit.responsibilities, truth)?;
            m.artifacts.extend(["metrics.csv".into(), "final_assignments.csv".into()]);
            m.summary.insert("log_likelihood".into(), json!(fit.log_likelihood.last()));
            m.summary.insert("variance_floored".into(), json!(fit.floored));
            m.summary.insert("clustering_error".into(), json!(score(&fit.responsibilities.hard_labels())?));
        }
        Mode::BaselineKmeans => {
            let mut cfg = KmeansConfig {
                seed: m.config.seed,
                ..Default::default()
            };
            cfg.restarts = m.config.baseline.restarts.unwrap_or(cfg.restarts);
            cfg.max_iter = m.config.baseline.max_iter.unwrap_or(cfg.max_iter);
            let fit = kmeans_fit(data.features(), k, &cfg)?;
            write_series(&dir.join("metrics.csv"), "inertia", &fit.inertia)?;
            let w = SoftAssignment::one_hot(&fit.labels, k)?;
            write_assignments(&dir.join("final_assignments.csv"), &w, truth)?;
            m.artifacts.extend(["metrics.csv".into(), "final_assignments.csv".into()]);
            m.summary.insert("inertia".into(), json!(fit.final_inertia()));
            m.summary.insert("clustering_error".into(), json!(score(&fit.labels)?));
        }
        _ => train(m, data, dir)?,
    }
    Ok(Outcome::Success)
}

fn train(m: &mut Manifest, data: &Dataset, dir: &Path) -> Result<()> {
    let config = &m.config;
    let truth = data.labels();
    let labeled = match (&config.semisup, config.mode) {
        (Some(s), Mode::Semisup) => Some(sample_labeled_subset(data, s.labels, s.label_seed.unwrap_or(config.seed))?),
        _ => None,
    };
    let mut em = GanEm::new(config.em.clone(), config.model.clone(), data.dim())?;
    let mut trace = MetricsTrace::default();
    let result = em.run_observed(data.features(), truth, labeled.as_ref(), |_, row, _| trace.push(row.clone()));
    trace.write_csv(fs::File::create(dir.join("metrics.csv"))?)?;
    m.artifacts.push("metrics.csv".into());
    let (w, _) = result?;

    write_assignments(&dir.join("final_assignments.csv"), &w, truth)?;
    m.artifacts.push("final_assignments.csv".into());
    let meta = CheckpointMeta {
        classes: config.em.classes,
        data_dim: data.dim(),
        model: config.model.clone(),
        supervised: labeled.is_some(),
        dataset: config.dataset.clone().expect("validated configs carry a dataset"),
        seed: config.seed,
    };
    save_checkpoint(&dir.join(CHECKPOINT_DIR), &em.state, &meta)?;
    m.artifacts.push(CHECKPOINT_DIR.into());

    let last = trace.last().expect("the trace always holds the initial row");
    m.summary.insert("iterations".into(), json!(last.iteration));
    m.summary.insert("phi".into(), json!(last.phi));
    m.summary.insert("clustering_error".into(), json!(last.clustering_error));
    if labeled.is_some() {
        m.summary.insert("classification_error".into(), json!(last.classification_error));
        m.summary.insert("labeled_error".into(), json!(last.labeled_error));
    }
    if config.mode == Mode::Dimreduce {
        let rows = export_embeddings(&em.state.enet, data.features(), truth)?;
        write_embeddings_csv(&rows, fs::File::create(dir.join("embeddings.csv"))?)?;
        m.artifacts.push("embeddings.csv".into());
        if let Some(t) = truth {
            let k = config.em.classes;
            let kcfg = KmeansConfig {
                seed: config.seed,
                ..Default::default()
            };
            let on_embed = kmeans_fit(&embedding_matrix(&rows)?, k, &kcfg)?;
            let on_raw = kmeans_fit(data.features(), k, &kcfg)?;
            m.summary.insert(
                "kmeans_embedding_error".into(),
                json!(clustering_error(&on_embed.labels, t, k)?.error),
            );
            m.summary.insert("kmeans_raw_error".into(), json!(clustering_error(&on_raw.labels, t, k)?.error));
        }
    }
    Ok(())
}

fn save_checkpoint(dir: &Path, state: &ThetaState, meta: &CheckpointMeta) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("generator.gemc"), save_params(&state.generator))?;
    fs::write(dir.join("discriminator.gemc"), save_params(&state.discriminator))?;
    fs::write(dir.join("enet.gemc"), save_params(&state.enet))?;
    fs::write(dir.join(MODEL_FILE), serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(())
}

fn write_theory(report: &TheoryReport, dir: &Path, m: &mut Manifest) -> Result<()> {
    let checks = [
        ("argmax_error", report.max_argmax_error, TheoryReport::ARGMAX_TOLERANCE, report.argmax_ok()),
        (
            "identity_residual",
            report.max_identity_residual,
            TheoryReport::IDENTITY_TOLERANCE,
            report.identity_ok(),
        ),
        (
            "prior_sum_error",
            report.max_prior_sum_error,
            TheoryReport::PRIOR_SUM_TOLERANCE,
            report.prior_ok(),
        ),
    ];
    let mut out = csv::Writer::from_path(dir.join("metrics.csv"))?;
    out.write_record(["check", "value", "tolerance", "passed"])?;
    for (name, value, tol, ok) in checks {
        out.write_record([name.to_string(), e17(value), e17(tol), ok.to_string()])?;
        m.summary.insert(name.into(), json!(value));
    }
    out.flush()?;
    m.summary.insert("prior_dominance_failures".into(), json!(report.prior_dominance_failures));
    m.summary.insert("passed".into(), json!(report.passed()));
    m.artifacts.push("metrics.csv".into());
    Ok(())
}

fn print_theory(report: &TheoryReport) {
    println!("trials                   {}", report.trials);
    println!(
        "max |D_brute - D*|       {:.3e}  (tolerance {:.0e})",
        report.max_argmax_error,
        TheoryReport::ARGMAX_TOLERANCE
    );
    println!("min objective margin     {:.3e}", report.min_objective_margin);
    println!(
        "max identity residual    {:.3e}  (tolerance {:.0e})",
        report.max_identity_residual,
        TheoryReport::IDENTITY_TOLERANCE
    );
    println!(
        "prior probes beaten      {} of {}",
        report.prior_dominance_failures,
        report.prior_matrices * report.prior_probes
    );
    println!(
        "max |sum(phi) - 1|       {:.3e}  (tolerance {:.0e})",
        report.max_prior_sum_error,
        TheoryReport::PRIOR_SUM_TOLERANCE
    );
    println!("{}", if report.passed() { "PASS" } else { "FAIL" });
}

pub fn verify_theory(trials: usize, seed: u64) -> Result<Outcome> {
    if trials == 0 {
        bail!("--trials must be positive");
    }
    let report = run_theory(trials, seed)?;
    print_theory(&report);
    Ok(if report.passed() { Outcome::Success } else { Outcome::ChecksFailed })
}

pub fn list_datasets() {
    println!("synthetic (source = \"synthetic\", kind = <name>):");
    for kind in SynthKind::ALL {
        println!("  {:<18} {}", kind.name(), kind.description());
    }
    println!("idx (source = \"idx\", images = <path>, labels = <path>):");
    println!("  {:<18} MNIST-format IDX files; optional downsample, digits, per_class", "idx");
}

fn read_dataset_spec(path: &Path) -> Result<(DatasetSpec, Dataset)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let seed = table.get("seed").and_then(|v| v.as_integer()).unwrap_or(0);
    let Some(raw) = table.get("dataset") else {
        bail!("{}: no [dataset] table", path.display());
    };
    let mut spec: DatasetSpec = raw.clone().try_into().with_context(|| format!("{}: [dataset]", path.display()))?;
    spec.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    spec.pin_seed(u64::try_from(seed).context("seed must be non-negative")?);
    let data = spec.load()?;
    Ok((spec, data))
}

fn checkpoint_dir(path: &Path) -> Result<PathBuf> {
    for dir in [path.to_path_buf(), path.join(CHECKPOINT_DIR)] {
        if dir.join(MODEL_FILE).is_file() {
            return Ok(dir);
        }
    }
    bail!("{}: no checkpoint ({MODEL_FILE} not found)", path.display())
}

fn load_enet(dir: &Path) -> Result<(CheckpointMeta, ENet)> {
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(dir.join(MODEL_FILE))?)
        .with_context(|| format!("parsing {}", dir.join(MODEL_FILE).display()))?;
    let mut rng = stream(meta.seed, Stream::Init);
    let mut enet = ENet::init(&meta.model, meta.classes, meta.data_dim, &mut rng)?;
    let bytes = fs::read(dir.join("enet.gemc")).with_context(|| format!("reading {}", dir.join("enet.gemc").display()))?;
    load_params_into(&mut enet, &bytes)?;
    Ok((meta, enet))
}

pub fn evaluate(checkpoint: &Path, dataset: &Path, out: Option<&Path>) -> Result<Outcome> {
    let dir = checkpoint_dir(checkpoint)?;
    let (meta, enet) = load_enet(&dir)?;
    let (spec, data) = read_dataset_spec(dataset)?;
    if data.dim() != meta.data_dim {
        bail!(
            "checkpoint expects {}-dimensional samples, the dataset has {}",
            meta.data_dim,
            data.dim()
        );
    }
    let w = SoftAssignment::new(enet.predict(data.features())?)?;
    let hard = w.hard_labels();
    let mut counts = vec![0usize; meta.classes];
    hard.iter().for_each(|&c| counts[c] += 1);
    let (mut clus, mut class) = (None, None);
    if let Some(t) = data.labels() {
        clus = Some(clustering_error(&hard, t, meta.classes)?.error);
        if meta.supervised {
            class = Some(classification_error(&hard, t)?);
        }
    }
    let scores = json!({
        "checkpoint": dir,
        "dataset": spec,
        "samples": data.len(),
        "classes": meta.classes,
        "cluster_sizes": counts,
        "clustering_error": clus,
        "classification_error": class,
    });
    if let Some(e) = clus {
        println!("clustering_error = {e}");
    }
    if let Some(e) = class {
        println!("classification_error = {e}");
    }
    println!("cluster_sizes = {counts:?}");
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => dir.parent().unwrap_or(Path::new(".")).join("scores.json"),
    };
    write_json(&path, &scores)?;
    println!("scores written to {}", path.display());
    Ok(Outcome::Success)
}
