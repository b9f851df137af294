//! Experiment configuration: JSON schema, `--set` overrides, validation,
//! and loading dataset pairs into memory.
//!
//! Validation failures are user errors (bad config, missing files) and map
//! to exit code 1; anything that goes wrong after validation is a runtime
//! error and maps to exit code 2.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use dcv_rood_core::rng::derive_seed;
use dcv_rood_core::split::{select_id_ood_split, SplitSpec};
use dcv_rood_core::taxonomy::SampleSet;

use crate::formats::{self, FormatError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Unreadable { path: String, message: String },
    #[error("config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("pair `{pair}`: {source}")]
    Split { pair: String, source: dcv_rood_core::split::SplitError },
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

/// One ID/OOD dataset pair, in one of two forms: two separate manifests
/// (flat datasets with disjoint classes), or a single hierarchical manifest
/// whose classification-level classes are split into ID and OOD by seeded
/// stratified selection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairConfig {
    pub name: String,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_features: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_logits: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood_manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood_features: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood_logits: Option<PathBuf>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
}

impl PairConfig {
    fn is_single_manifest(&self) -> bool {
        self.manifest.is_some()
    }

    fn has_logits(&self) -> bool {
        if self.is_single_manifest() {
            self.logits.is_some()
        } else {
            self.id_logits.is_some() && self.ood_logits.is_some()
        }
    }

    fn has_features(&self) -> bool {
        if self.is_single_manifest() {
            self.features.is_some()
        } else {
            self.id_features.is_some() && self.ood_features.is_some()
        }
    }

    fn referenced_files(&self) -> Vec<&PathBuf> {
        [
            &self.id_manifest,
            &self.id_features,
            &self.id_logits,
            &self.ood_manifest,
            &self.ood_features,
            &self.ood_logits,
            &self.manifest,
            &self.features,
            &self.logits,
        ]
        .into_iter()
        .filter_map(|o| o.as_ref())
        .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKindConfig {
    Ebo,
    Gen,
    Knn,
    Mds,
}

impl DetectorKindConfig {
    pub fn needs_logits(self) -> bool {
        matches!(self, DetectorKindConfig::Ebo | DetectorKindConfig::Gen)
    }

    pub fn needs_features(self) -> bool {
        matches!(self, DetectorKindConfig::Knn | DetectorKindConfig::Mds)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub name: String,
    pub kind: DetectorKindConfig,
    /// Entropy exponent for `gen`, in (0, 1). Defaults to 0.1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Softmax truncation for `gen`; clamped to the class count. Defaults
    /// to 100.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_m: Option<usize>,
    /// Neighbor count for `knn`. Defaults to `min(50, ⌈√n_train⌉)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_neighbors: Option<usize>,
    /// Additive Gaussian noise, in units of the clean score spread of the
    /// round. Zero (the default) leaves scores untouched.
    #[serde(default)]
    pub noise_std: f64,
}

fn default_k() -> usize {
    5
}
fn default_e_runs() -> usize {
    10
}
fn default_r_truth() -> usize {
    100
}
fn default_alphas() -> Vec<f64> {
    vec![0.1, 0.05, 0.01]
}
fn default_alpha_normality() -> f64 {
    0.05
}
fn default_fpr_cap() -> f64 {
    0.05
}
fn default_id_percentile() -> f64 {
    0.90
}
fn default_convergence_window() -> usize {
    10
}
fn default_convergence_threshold() -> f64 {
    0.005
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset_pairs: Vec<PairConfig>,
    pub detectors: Vec<DetectorConfig>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_e_runs")]
    pub e_runs: usize,
    #[serde(default = "default_r_truth")]
    pub r_truth: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    pub output_dir: PathBuf,
    #[serde(default = "default_alpha_normality")]
    pub alpha_normality: f64,
    #[serde(default = "default_fpr_cap")]
    pub fpr_cap: f64,
    #[serde(default = "default_id_percentile")]
    pub id_percentile: f64,
    /// When set, pairwise tests consume one observation per (pair, round)
    /// instead of per-pair means. Flagged in every report.
    #[serde(default)]
    pub per_fold_contexts: bool,
    /// Switches the ID fold construction from stratified to class-blind.
    #[serde(default)]
    pub plain_id_folds: bool,
    /// Fraction of ID samples placed in each benchmark-truth test split;
    /// defaults to `1/k` so both regimes target the same train/test scale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_id_test_fraction: Option<f64>,
    /// Fraction of OOD classes placed in each benchmark-truth test split;
    /// defaults to `1/k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_ood_test_fraction: Option<f64>,
    #[serde(default = "default_convergence_window")]
    pub convergence_window: usize,
    /// Advisory: the convergence trace is always emitted; crossing the
    /// threshold is reported, never enforced.
    #[serde(default = "default_convergence_threshold")]
    pub convergence_threshold: f64,
}

impl ExperimentConfig {
    pub fn truth_id_fraction(&self) -> f64 {
        self.truth_id_test_fraction.unwrap_or(1.0 / self.k as f64)
    }

    pub fn truth_ood_fraction(&self) -> f64 {
        self.truth_ood_test_fraction.unwrap_or(1.0 / self.k as f64)
    }
}

// ---------------------------------------------------------------------------
// Loading and overrides
// ---------------------------------------------------------------------------

/// Reads a config file and applies `--set key=value` overrides before
/// deserializing, so overrides are type-checked exactly like file values.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let file = File::open(path).map_err(|e| ConfigError::Unreadable {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut doc: serde_json::Value = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| ConfigError::Unreadable {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    for assignment in overrides {
        apply_override(&mut doc, assignment)?;
    }
    let cfg: ExperimentConfig = serde_json::from_value(doc)
        .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    validate(&cfg)?;
    Ok(cfg)
}

/// Applies one `key=value` override. Keys are dotted paths into the JSON
/// document; numeric components index arrays. Values parse as JSON when
/// they can (numbers, booleans, arrays) and fall back to strings;
/// comma-separated lists of scalars become arrays (`alphas=0.1,0.05`).
pub fn apply_override(doc: &mut serde_json::Value, assignment: &str) -> Result<(), ConfigError> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| invalid(format!("override `{assignment}` is not key=value")))?;
    if key.is_empty() {
        return Err(invalid(format!("override `{assignment}` has an empty key")));
    }
    let mut slot = doc;
    for part in key.split('.') {
        slot = match slot {
            serde_json::Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| invalid(format!("`{part}` is not an array index in `{key}`")))?;
                items
                    .get_mut(idx)
                    .ok_or_else(|| invalid(format!("index {idx} out of range in `{key}`")))?
            }
            serde_json::Value::Object(map) => {
                map.entry(part.to_string()).or_insert(serde_json::Value::Null)
            }
            _ => return Err(invalid(format!("`{key}` descends into a scalar"))),
        };
    }
    *slot = parse_override_value(value);
    Ok(())
}

fn parse_override_value(raw: &str) -> serde_json::Value {
    if raw.contains(',') {
        return serde_json::Value::Array(raw.split(',').map(parse_override_value).collect());
    }
    serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()))
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

fn check_unit_open(name: &str, v: f64) -> Result<(), ConfigError> {
    if !(v > 0.0 && v < 1.0) {
        return Err(invalid(format!("{name} must lie strictly inside (0, 1), got {v}")));
    }
    Ok(())
}

pub fn validate(cfg: &ExperimentConfig) -> Result<(), ConfigError> {
    if cfg.dataset_pairs.is_empty() {
        return Err(invalid("dataset_pairs must not be empty"));
    }
    if cfg.detectors.is_empty() {
        return Err(invalid("detectors must not be empty"));
    }
    if cfg.k < 2 {
        return Err(invalid(format!("k must be at least 2, got {}", cfg.k)));
    }
    if cfg.e_runs < 1 {
        return Err(invalid("e_runs must be at least 1"));
    }
    if cfg.r_truth < 1 {
        return Err(invalid("r_truth must be at least 1"));
    }
    if cfg.alphas.is_empty() {
        return Err(invalid("alphas must not be empty"));
    }
    for &a in &cfg.alphas {
        check_unit_open("alphas", a)?;
    }
    check_unit_open("alpha_normality", cfg.alpha_normality)?;
    check_unit_open("fpr_cap", cfg.fpr_cap)?;
    check_unit_open("id_percentile", cfg.id_percentile)?;
    for (name, v) in [
        ("truth_id_test_fraction", cfg.truth_id_test_fraction),
        ("truth_ood_test_fraction", cfg.truth_ood_test_fraction),
    ] {
        if let Some(v) = v {
            check_unit_open(name, v)?;
        }
    }
    if cfg.convergence_window < 1 {
        return Err(invalid("convergence_window must be at least 1"));
    }
    if cfg.convergence_threshold.is_nan() || cfg.convergence_threshold <= 0.0 {
        return Err(invalid("convergence_threshold must be positive"));
    }

    let mut names = BTreeSet::new();
    for d in &cfg.detectors {
        if d.name.is_empty() {
            return Err(invalid("detector names must not be empty"));
        }
        if !names.insert(d.name.as_str()) {
            return Err(invalid(format!("duplicate detector name `{}`", d.name)));
        }
        if let Some(g) = d.gamma {
            if !(g > 0.0 && g < 1.0) {
                return Err(invalid(format!("detector `{}`: gamma must lie in (0, 1)", d.name)));
            }
        }
        if d.top_m == Some(0) {
            return Err(invalid(format!("detector `{}`: top_m must be positive", d.name)));
        }
        if d.k_neighbors == Some(0) {
            return Err(invalid(format!("detector `{}`: k_neighbors must be positive", d.name)));
        }
        if !(d.noise_std >= 0.0 && d.noise_std.is_finite()) {
            return Err(invalid(format!(
                "detector `{}`: noise_std must be finite and non-negative",
                d.name
            )));
        }
    }

    let needs_logits = cfg.detectors.iter().any(|d| d.kind.needs_logits());
    let needs_features = cfg.detectors.iter().any(|d| d.kind.needs_features());

    let mut pair_names = BTreeSet::new();
    for pair in &cfg.dataset_pairs {
        if pair.name.is_empty() {
            return Err(invalid("pair names must not be empty"));
        }
        if !pair_names.insert(pair.name.as_str()) {
            return Err(invalid(format!("duplicate pair name `{}`", pair.name)));
        }
        let single = pair.is_single_manifest();
        let dual = pair.id_manifest.is_some() || pair.ood_manifest.is_some();
        if single && dual {
            return Err(invalid(format!(
                "pair `{}` mixes the single-manifest and two-manifest forms",
                pair.name
            )));
        }
        if single {
            if pair.ood_fraction.is_none() {
                return Err(invalid(format!(
                    "pair `{}` uses a single manifest and needs ood_fraction",
                    pair.name
                )));
            }
            let f = pair.ood_fraction.unwrap();
            if !(f > 0.0 && f < 1.0) {
                return Err(invalid(format!(
                    "pair `{}`: ood_fraction must lie strictly inside (0, 1)",
                    pair.name
                )));
            }
        } else {
            if pair.id_manifest.is_none() || pair.ood_manifest.is_none() {
                return Err(invalid(format!(
                    "pair `{}` needs either `manifest` or both `id_manifest` and `ood_manifest`",
                    pair.name
                )));
            }
            if pair.ood_fraction.is_some() || pair.split_seed.is_some() {
                return Err(invalid(format!(
                    "pair `{}`: ood_fraction/split_seed apply to the single-manifest form only",
                    pair.name
                )));
            }
        }
        if needs_logits && !pair.has_logits() {
            return Err(invalid(format!(
                "pair `{}` has no logits but a configured detector needs them",
                pair.name
            )));
        }
        if needs_features && !pair.has_features() {
            return Err(invalid(format!(
                "pair `{}` has no features but a configured detector needs them",
                pair.name
            )));
        }
        for file in pair.referenced_files() {
            if !file.is_file() {
                return Err(invalid(format!(
                    "pair `{}`: `{}` does not exist",
                    pair.name,
                    file.display()
                )));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Loaded pairs
// ---------------------------------------------------------------------------

/// A dataset pair resolved into memory, ready for fold construction. For
/// single-manifest pairs the ID/OOD class selection has already run.
#[derive(Debug, Clone)]
pub struct LoadedPair {
    pub name: String,
    pub id_name: String,
    pub ood_name: String,
    pub id: SampleSet,
    pub ood: SampleSet,
    pub warnings: Vec<String>,
}

impl LoadedPair {
    /// Routes the pair to a fold construction by taxonomy shape: a shared
    /// multi-level taxonomy gets the stratified hierarchical treatment,
    /// anything else the flat one.
    pub fn hierarchical(&self) -> bool {
        self.id.taxonomy() == self.ood.taxonomy()
            && self.id.taxonomy().strata_level().is_some()
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Loads one pair. `pair_index` feeds the selection seed for
/// single-manifest pairs when no explicit `split_seed` is given, so
/// distinct pairs never share a selection stream.
pub fn load_pair(
    cfg: &ExperimentConfig,
    pair_index: usize,
) -> Result<LoadedPair, ConfigError> {
    let pair = &cfg.dataset_pairs[pair_index];
    if pair.is_single_manifest() {
        let manifest = pair.manifest.as_ref().unwrap();
        let whole = formats::load_sample_set(
            manifest,
            pair.features.as_deref(),
            pair.logits.as_deref(),
        )?;
        let seed = pair
            .split_seed
            .unwrap_or_else(|| derive_seed(cfg.seed, "idood-split", pair_index as u64));
        let spec = SplitSpec { ood_fraction: pair.ood_fraction.unwrap(), seed };
        let (id, ood, warnings) = select_id_ood_split(&whole, &spec)
            .map_err(|source| ConfigError::Split { pair: pair.name.clone(), source })?;
        Ok(LoadedPair {
            name: pair.name.clone(),
            id_name: format!("{}-id", pair.name),
            ood_name: format!("{}-ood", pair.name),
            id,
            ood,
            warnings: warnings.iter().map(|w| w.to_string()).collect(),
        })
    } else {
        let id = formats::load_sample_set(
            pair.id_manifest.as_ref().unwrap(),
            pair.id_features.as_deref(),
            pair.id_logits.as_deref(),
        )?;
        let ood = formats::load_sample_set(
            pair.ood_manifest.as_ref().unwrap(),
            pair.ood_features.as_deref(),
            pair.ood_logits.as_deref(),
        )?;
        Ok(LoadedPair {
            name: pair.name.clone(),
            id_name: stem(pair.id_manifest.as_ref().unwrap()),
            ood_name: stem(pair.ood_manifest.as_ref().unwrap()),
            id,
            ood,
            warnings: Vec::new(),
        })
    }
}

pub fn load_pairs(cfg: &ExperimentConfig) -> Result<Vec<LoadedPair>, ConfigError> {
    (0..cfg.dataset_pairs.len()).map(|i| load_pair(cfg, i)).collect()
}
