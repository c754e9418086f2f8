use std::fmt;
use std::path::{Path, PathBuf};

use ganem::data::{load_idx, synth_mixture, Dataset, IdxOptions, SynthKind};
use ganem::emcore::EmConfig;
use ganem::models::ModelConfig;
use ganem::oracles::CovarianceKind;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Cluster,
    Semisup,
    Dimreduce,
    BaselineGmm,
    BaselineKmeans,
    VerifyTheory,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Cluster => "cluster",
            Mode::Semisup => "semisup",
            Mode::Dimreduce => "dimreduce",
            Mode::BaselineGmm => "baseline-gmm",
            Mode::BaselineKmeans => "baseline-kmeans",
            Mode::VerifyTheory => "verify-theory",
        }
    }
}

/// Where the samples come from. Relative IDX paths are resolved against the
/// directory of the file that names them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        kind: SynthKind,
        classes: usize,
        samples: usize,
        /// Defaults to the run seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        downsample: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        digits: Option<Vec<u8>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        per_class: Option<usize>,
    },
}

impl DatasetSpec {
    pub fn resolve_paths(&mut self, base: &Path) {
        if let DatasetSpec::Idx { images, labels, .. } = self {
            for p in [images, labels] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }

    /// Fills in the default seed so the table alone reproduces the data.
    pub fn pin_seed(&mut self, run_seed: u64) {
        if let DatasetSpec::Synthetic { seed, .. } = self {
            seed.get_or_insert(run_seed);
        }
    }

    pub fn load(&self) -> ganem::Result<Dataset> {
        match self {
            DatasetSpec::Synthetic {
                kind,
                classes,
                samples,
                seed,
            } => synth_mixture(*kind, *classes, *samples, seed.unwrap_or(0)),
            DatasetSpec::Idx {
                images,
                labels,
                downsample,
                digits,
                per_class,
            } => load_idx(
                images,
                labels,
                &IdxOptions {
                    downsample: *downsample,
                    classes: digits.clone(),
                    per_class: *per_class,
                },
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemisupSpec {
    /// Total labeled samples, spread evenly over the classes.
    pub labels: usize,
    /// Defaults to the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimreduceSpec {
    /// Width of the E-net bottleneck.
    pub k: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSpec {
    pub covariance: CovarianceKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySpec {
    pub trials: usize,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self { trials: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    /// Relative paths live under the output root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSpec>,
    #[serde(default)]
    pub em: EmConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semisup: Option<SemisupSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimreduce: Option<DimreduceSpec>,
    #[serde(default)]
    pub baseline: BaselineSpec,
    #[serde(default)]
    pub verify: VerifySpec,
}

/// A configuration problem, pointing at a line of the file when possible.
#[derive(Debug)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{}: {}", self.path.display(), l, self.message),
            None => write!(f, "{}: {}", self.path.display(), self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// 1-based line of `key = ...` inside `[section]` (top level when `None`),
/// or of the section header itself when `key` is empty.
pub fn line_of(text: &str, section: Option<&str>, key: &str) -> Option<usize> {
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.trim_end_matches(']').trim().to_string();
            if key.is_empty() && Some(name.as_str()) == section {
                return Some(i + 1);
            }
            current = Some(name);
            continue;
        }
        if key.is_empty() || current.as_deref() != section {
            continue;
        }
        if let Some(rest) = line.strip_prefix(key) {
            if rest.trim_start().starts_with('=') {
                return Some(i + 1);
            }
        }
    }
    None
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// A parsed configuration with everything resolved that a rerun needs.
pub struct Loaded {
    pub config: ExperimentConfig,
    pub dataset: Option<Dataset>,
}

impl ExperimentConfig {
    /// Parses and validates `text`; `path` anchors messages and relative
    /// dataset paths. Loads the dataset so that `em.classes` can default to
    /// its class count.
    pub fn load(text: &str, path: &Path) -> Result<Loaded, ConfigError> {
        let err = |line: Option<usize>, message: String| ConfigError {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut config: ExperimentConfig = toml::from_str(text)
            .map_err(|e| err(e.span().map(|s| line_at(text, s.start)), e.message().to_string()))?;
        let raw: toml::Table = toml::from_str(text).map_err(|e| err(None, e.to_string()))?;
        let em_table = raw.get("em").and_then(|v| v.as_table());
        if em_table.is_some_and(|t| t.contains_key("seed")) && config.em.seed != config.seed {
            return Err(err(
                line_of(text, Some("em"), "seed"),
                format!("em.seed = {} disagrees with the run seed {}", config.em.seed, config.seed),
            ));
        }
        config.em.seed = config.seed;
        let mode_line = line_of(text, None, "mode");
        let base = path.parent().unwrap_or(Path::new("."));

        match config.mode {
            Mode::Semisup if config.semisup.is_none() => {
                return Err(err(mode_line, "mode \"semisup\" needs a [semisup] table with `labels`".into()));
            }
            Mode::Dimreduce => {
                let Some(dr) = &config.dimreduce else {
                    return Err(err(mode_line, "mode \"dimreduce\" needs a [dimreduce] table with `k`".into()));
                };
                if dr.k == 0 {
                    return Err(err(line_of(text, Some("dimreduce"), "k"), "k must be positive".into()));
                }
                match config.model.bottleneck {
                    None => config.model.bottleneck = Some(dr.k),
                    Some(b) if b == dr.k => {}
                    Some(b) => {
                        return Err(err(
                            line_of(text, Some("model"), "bottleneck"),
                            format!("model.bottleneck = {b} disagrees with dimreduce.k = {}", dr.k),
                        ))
                    }
                }
            }
            _ => {}
        }
        if config.mode == Mode::VerifyTheory {
            if config.verify.trials == 0 {
                return Err(err(line_of(text, Some("verify"), "trials"), "trials must be positive".into()));
            }
            return Ok(Loaded { config, dataset: None });
        }

        let Some(spec) = config.dataset.as_mut() else {
            return Err(err(mode_line, format!("mode \"{}\" needs a [dataset] table", config.mode.name())));
        };
        spec.resolve_paths(base);
        spec.pin_seed(config.seed);
        let dataset = spec
            .load()
            .map_err(|e| err(line_of(text, Some("dataset"), ""), e.to_string()))?;
        if !em_table.is_some_and(|t| t.contains_key("classes")) {
            config.em.classes = dataset.classes();
        }
        let em_line = line_of(text, Some("em"), "").or(mode_line);
        config.em.validate().map_err(|e| err(em_line, e.to_string()))?;
        let model_line = line_of(text, Some("model"), "").or(mode_line);
        config.model.validate().map_err(|e| err(model_line, e.to_string()))?;
        if config.em.classes > dataset.len() {
            return Err(err(em_line, format!("K = {} exceeds the {} samples", config.em.classes, dataset.len())));
        }
        if let Some(s) = &config.semisup {
            if config.mode == Mode::Semisup && dataset.labels().is_none() {
                return Err(err(mode_line, "semisup needs a dataset with ground truth".into()));
            }
            if s.labels == 0 || s.labels > dataset.len() {
                return Err(err(
                    line_of(text, Some("semisup"), "labels"),
                    format!("labels must lie in 1..={}", dataset.len()),
                ));
            }
        }
        Ok(Loaded {
            config,
            dataset: Some(dataset),
        })
    }
}
