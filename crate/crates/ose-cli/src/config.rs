//! Run-configuration documents: JSON from disk, command-line overrides on
//! top, and an auditable echo of the effective values in every report.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use ose_core::{derive_seed, fixed_lr, Dataset, HyperParams, Loss, TemplateDoc, Threshold};

/// Stream tag under which per-theta training batches are subsampled from
/// the master seed, so batch choice is part of the reproducibility contract.
const BATCH_STREAM: u64 = 0x6261_7463;

/// Everything a run needs, as written by the user. Optional fields either
/// have defaults or are only required by some subcommands, which check for
/// them with a pointed message instead of failing at parse time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub template: TemplateDoc,
    /// CSV dataset path, resolved relative to the config file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub thetas: Vec<ThetaDoc>,
    /// Stride through the sorted space; defaults to 1 (exhaustive).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<usize>,
    /// Training steps per candidate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    #[serde(default = "default_loss")]
    pub loss: Loss,
    #[serde(default)]
    pub master_seed: u64,
    /// Report path, resolved relative to the config file's directory;
    /// `--out` overrides it with a path relative to the working directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Worker threads for candidate evaluation. The default of 1 keeps runs
    /// bit-reproducible on any machine; higher values change wall time only.
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    /// Variables treated as growth directions by `abnc-check`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub growth_vars: Vec<String>,
    /// Sampled instantiations for the strong estimate of `abnc-check`.
    #[serde(default = "default_strong_pairs")]
    pub strong_pairs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordering: Option<OrderingDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleDoc>,
}

fn default_loss() -> Loss {
    Loss::BoundedQuadratic
}

fn default_jobs() -> usize {
    1
}

fn default_strong_pairs() -> usize {
    5
}

/// One hyper-parameter point. Give `eta` directly, or give `l`, `g`, and
/// `eps_sgd` to derive it as `sqrt(eps_sgd) / (l * g)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_sgd: Option<f64>,
    /// Training-batch size; omitted means the whole dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_cap: Option<u64>,
}

impl ThetaDoc {
    /// Materialize the hyper-parameter point against a dataset. The batch is
    /// subsampled deterministically from the master seed and the theta's
    /// position, so the same config always trains on the same rows.
    pub fn resolve(
        &self,
        dataset: &Dataset,
        master_seed: u64,
        index: usize,
    ) -> anyhow::Result<HyperParams> {
        let eta = match (self.eta, self.l, self.g, self.eps_sgd) {
            (Some(eta), None, None, None) => eta,
            (None, Some(l), Some(g), Some(eps)) => fixed_lr(l, g, eps)?,
            _ => bail!("theta {index}: give either `eta` alone, or all of `l`, `g`, `eps_sgd`"),
        };
        let batch = match self.batch_size {
            Some(0) => bail!("theta {index}: batch_size must be at least 1"),
            Some(k) => dataset.subsample(k, derive_seed(master_seed, BATCH_STREAM, index as u64)),
            None => dataset.clone(),
        };
        let mut theta = HyperParams::new(batch, eta)?;
        if let Some(cap) = self.step_cap {
            theta = theta.with_step_cap(cap);
        }
        Ok(theta)
    }
}

/// Knobs for the empirical error-ordering run of `abnc-check`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderingDoc {
    pub eta: f64,
    pub steps: u64,
    pub num_seeds: usize,
}

/// Inputs to the `oracle` subcommands.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleDoc {
    /// Weight-grid levels; omitted means {-1, -0.5, 0, 0.5, 1}.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    /// Parameter-count threshold: a number, or "unbounded".
    #[serde(default = "unbounded")]
    pub k_p: Threshold,
    /// Inference-count threshold: a number, or "unbounded".
    #[serde(default = "unbounded")]
    pub k_i: Threshold,
    /// Error-rate threshold in [0, 1]; required by `dec` and `reduce`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_e: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_cap: Option<u64>,
}

fn unbounded() -> Threshold {
    Threshold::Unbounded
}

/// A parsed config plus the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

pub fn load_config(path: &Path) -> anyhow::Result<LoadedConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let config: RunConfig = serde_json::from_str(&text)
        .with_context(|| format!("config {} is not a valid run configuration", path.display()))?;
    let base_dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    Ok(LoadedConfig { config, base_dir })
}

pub fn resolve_relative(base_dir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base_dir.join(path)
    }
}
