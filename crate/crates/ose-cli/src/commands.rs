//! Argument surface and subcommand implementations.
//!
//! Exit-code policy: 0 on success; 2 for anything wrong with the inputs
//! (flags, config schema, datasets, preconditions, ill-posed spaces, size
//! caps); 3 when a search finishes without a single usable candidate; 1 for
//! internal failures that indicate a bug rather than bad input.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde::Serialize;

use ose_core::metrics::{param_size_poly, surrogate_inference_poly, CensusModel};
use ose_core::{
    brute_force_ose_dec, check_ordering, check_strong, check_weak, equal_error_shortest_path,
    exhaustive_opt, extract, find_max_point, reduce_nn_training, validate_search_space,
    write_weight_sidecar, AbncReport, CandidateRecord, Dataset, DecAnswer, Error, ExtractOptions,
    ExtractionResult, HyperParams, MaxPoint, OrderingReport, OseDecInstance, ParamAssignment,
    ShortestPathResult, Threshold, ValidationIssue, WeightGrid, DEFAULT_EVAL_CAP,
};

use crate::config::{load_config, resolve_relative, OracleDoc, RunConfig};
use crate::data::{self, DataKind};
use crate::report::emit;

#[derive(Debug, Parser)]
#[command(
    name = "ose",
    version,
    about = "Search parametric network families for the best small architecture"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Run-configuration JSON file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Candidate stride through the sorted space; overrides the config.
    #[arg(long, global = true, value_name = "N")]
    pub epsilon: Option<usize>,

    /// Training steps per candidate; overrides the config.
    #[arg(long, global = true, value_name = "N")]
    pub steps: Option<u64>,

    /// Master seed; overrides the config.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    /// Report path (gen-data: the CSV path); overrides the config.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,

    /// Worker threads for candidate evaluation; overrides the config.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check that the template and search space are well-posed.
    Validate,
    /// Report parameter and inference counts for every candidate.
    Metrics,
    /// Run the strided search and write the result with its weights.
    Extract,
    /// Check the family's growth structure and error ordering.
    AbncCheck,
    /// Ground-truth references: exact decision scan, stride-1 search,
    /// training-to-decision reduction, and the equal-error special case.
    Oracle {
        #[command(subcommand)]
        mode: OracleMode,
    },
    /// Write a synthetic CSV dataset.
    GenData {
        /// Dataset family to generate.
        #[arg(long, value_enum)]
        kind: DataKind,
        /// Number of rows (n).
        #[arg(long)]
        rows: u64,
        /// Number of feature columns (p).
        #[arg(long)]
        features: u64,
        /// Jitter scale (blobs, xor) or label-flip probability (linear).
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
}

#[derive(Debug, Subcommand)]
pub enum OracleMode {
    /// Decide by exact grid enumeration whether any candidate satisfies the
    /// thresholds. No training.
    Dec,
    /// Reference search: train every candidate (stride 1) and report the
    /// winner's sorted-order index.
    Exhaustive,
    /// Phrase a single-architecture training question as a decision
    /// instance and answer it.
    Reduce,
    /// Equal-error special case: the candidate minimizing p + inference
    /// count, via the graph construction.
    ShortestPath,
}

/// Map an error to the exit-code policy above.
pub fn exit_code_for(err: &anyhow::Error) -> i32 {
    if let Some(core) = err.downcast_ref::<Error>() {
        return match core {
            Error::ExtractionFailed(_) => 3,
            Error::Numeric(_)
            | Error::TrainingDiverged(_)
            | Error::LossContract(_)
            | Error::Consistency(_) => 1,
            _ => 2,
        };
    }
    2
}

pub fn dispatch(cli: Cli) -> anyhow::Result<i32> {
    match &cli.command {
        Command::GenData { kind, rows, features, noise } => {
            let out = cli
                .out
                .clone()
                .ok_or_else(|| anyhow!("gen-data needs --out for the CSV path"))?;
            gen_data_cmd(*kind, *rows, *features, *noise, cli.seed.unwrap_or(0), &out)
        }
        Command::Validate => validate_cmd(&Ctx::new(&cli)?),
        Command::Metrics => metrics_cmd(&Ctx::new(&cli)?),
        Command::Extract => extract_cmd(&Ctx::new(&cli)?),
        Command::AbncCheck => abnc_cmd(&Ctx::new(&cli)?),
        Command::Oracle { mode } => {
            let ctx = Ctx::new(&cli)?;
            match mode {
                OracleMode::Dec => oracle_dec_cmd(&ctx),
                OracleMode::Exhaustive => oracle_exhaustive_cmd(&ctx),
                OracleMode::Reduce => oracle_reduce_cmd(&ctx),
                OracleMode::ShortestPath => oracle_shortest_path_cmd(&ctx),
            }
        }
    }
}

/// A loaded config with flag overrides already applied, plus resolved paths.
struct Ctx {
    config: RunConfig,
    base_dir: PathBuf,
    /// Effective report path: `--out` as given, or the config's `out`
    /// resolved against the config's directory.
    out: Option<PathBuf>,
}

impl Ctx {
    fn new(cli: &Cli) -> anyhow::Result<Ctx> {
        let path = cli.config.as_ref().ok_or_else(|| {
            anyhow!("this subcommand needs --config pointing at a run-configuration JSON")
        })?;
        let loaded = load_config(path)?;
        let mut config = loaded.config;
        if let Some(e) = cli.epsilon {
            config.epsilon = Some(e);
        }
        if let Some(s) = cli.steps {
            config.steps = Some(s);
        }
        if let Some(seed) = cli.seed {
            config.master_seed = seed;
        }
        if let Some(jobs) = cli.jobs {
            config.jobs = jobs;
        }
        let out = match (&cli.out, &config.out) {
            (Some(flag), _) => {
                config.out = Some(flag.clone());
                Some(flag.clone())
            }
            (None, Some(configured)) => Some(resolve_relative(&loaded.base_dir, configured)),
            (None, None) => None,
        };
        Ok(Ctx { config, base_dir: loaded.base_dir, out })
    }

    fn load_dataset(&self) -> anyhow::Result<Dataset> {
        let rel = self
            .config
            .dataset
            .as_ref()
            .ok_or_else(|| anyhow!("the config has no `dataset` path"))?;
        data::load_dataset(&resolve_relative(&self.base_dir, rel))
    }

    fn resolve_thetas(&self, dataset: &Dataset) -> anyhow::Result<Vec<HyperParams>> {
        self.config
            .thetas
            .iter()
            .enumerate()
            .map(|(i, doc)| doc.resolve(dataset, self.config.master_seed, i))
            .collect()
    }

    fn steps(&self) -> anyhow::Result<u64> {
        self.config
            .steps
            .ok_or_else(|| anyhow!("`steps` is required (config field or --steps)"))
    }

    fn oracle_doc(&self) -> anyhow::Result<&OracleDoc> {
        self.config
            .oracle
            .as_ref()
            .ok_or_else(|| anyhow!("this subcommand needs an `oracle` section in the config"))
    }

    fn weight_grid(&self) -> anyhow::Result<WeightGrid> {
        Ok(match self.oracle_doc()?.grid.as_ref() {
            Some(levels) => WeightGrid::new(levels.clone())?,
            None => WeightGrid::default(),
        })
    }
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct DatasetCheck {
    rows: usize,
    features: usize,
    matches_input_dim: bool,
}

#[derive(Serialize)]
struct ValidatePayload {
    well_posed: bool,
    space_size: usize,
    issues: Vec<ValidationIssue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dataset: Option<DatasetCheck>,
}

fn validate_cmd(ctx: &Ctx) -> anyhow::Result<i32> {
    let (template, space) = ctx.config.template.build()?;
    let report = validate_search_space(&template, &space)?;
    let dataset = match &ctx.config.dataset {
        Some(_) => {
            let data = ctx.load_dataset()?;
            let features = data.points()[0].x.len();
            Some(DatasetCheck {
                rows: data.len(),
                features,
                matches_input_dim: features as u64 == template.input_dim,
            })
        }
        None => None,
    };
    let ok = report.well_posed && dataset.as_ref().is_none_or(|d| d.matches_input_dim);
    let payload = ValidatePayload {
        well_posed: report.well_posed,
        space_size: space.len(),
        issues: report.issues,
        dataset,
    };
    emit("validate", &ctx.config, ctx.out.as_deref(), payload)?;
    Ok(if ok { 0 } else { 2 })
}

#[derive(Serialize)]
struct CountRow {
    assignment: ParamAssignment,
    params: u64,
    inference: u64,
}

#[derive(Serialize)]
struct MetricsPayload {
    params_poly: String,
    inference_poly: String,
    counts: Vec<CountRow>,
    max_point: MaxPoint,
}

fn metrics_cmd(ctx: &Ctx) -> anyhow::Result<i32> {
    let (template, space) = ctx.config.template.build()?;
    let census = CensusModel::default();
    let p_poly = param_size_poly(&template);
    let i_poly = surrogate_inference_poly(&template, &census);
    let counts = space
        .assignments
        .iter()
        .map(|a| {
            Ok(CountRow {
                assignment: a.clone(),
                params: p_poly.evaluate(a.lookup())?,
                inference: i_poly.evaluate(a.lookup())?,
            })
        })
        .collect::<ose_core::Result<Vec<_>>>()?;
    let payload = MetricsPayload {
        params_poly: p_poly.to_string(),
        inference_poly: i_poly.to_string(),
        counts,
        max_point: find_max_point(&template, &space)?,
    };
    emit("metrics", &ctx.config, ctx.out.as_deref(), payload)?;
    Ok(0)
}

#[derive(Serialize)]
struct ExtractPayload<'a> {
    result: &'a ExtractionResult,
    /// Sidecar file names, next to the report.
    weights_bin: String,
    weights_manifest: String,
}

fn extract_cmd(ctx: &Ctx) -> anyhow::Result<i32> {
    let (template, space) = ctx.config.template.build()?;
    let dataset = ctx.load_dataset()?;
    let thetas = ctx.resolve_thetas(&dataset)?;
    let out = ctx
        .out
        .clone()
        .ok_or_else(|| anyhow!("extract needs an output path (--out or config `out`)"))?;
    let mut options = ExtractOptions::new(
        ctx.config.epsilon.unwrap_or(1),
        ctx.steps()?,
        ctx.config.master_seed,
    );
    options.loss = ctx.config.loss;
    options.jobs = ctx.config.jobs;
    let result = extract(&template, &dataset, &space, &thetas, &options)?;

    let stem = out
        .file_stem()
        .ok_or_else(|| anyhow!("output path {} has no file name", out.display()))?
        .to_string_lossy()
        .into_owned();
    let bin_name = format!("{stem}.weights.bin");
    let manifest_name = format!("{stem}.weights.json");
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("cannot create {}", dir.display()))?;
        }
    }
    write_weight_sidecar(
        &result.best_weights,
        &out.with_file_name(&bin_name),
        &out.with_file_name(&manifest_name),
    )?;
    let payload = ExtractPayload {
        result: &result,
        weights_bin: bin_name,
        weights_manifest: manifest_name,
    };
    emit("extract", &ctx.config, Some(&out), payload)?;
    println!(
        "best candidate `{}` (sorted index {}, theta {}) with score {:.6}; report at {}",
        result.best.assignment,
        result.best.xi_index_in_sorted_order,
        result.best.theta_index,
        result.best.w,
        out.display()
    );
    Ok(0)
}

#[derive(Serialize)]
struct AbncPayload {
    abnc: AbncReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    ordering: Option<OrderingReport>,
}

fn abnc_cmd(ctx: &Ctx) -> anyhow::Result<i32> {
    let (template, space) = ctx.config.template.build()?;
    let growth = &ctx.config.growth_vars;
    if growth.is_empty() {
        return Err(anyhow!("abnc-check needs `growth_vars` in the config"));
    }
    let mut ordering = None;
    let abnc = match &ctx.config.dataset {
        Some(_) => {
            let dataset = ctx.load_dataset()?;
            let mut report = check_strong(
                &template,
                &space,
                &dataset,
                ctx.config.loss,
                growth,
                ctx.config.strong_pairs,
                ctx.config.master_seed,
            )?;
            if let Some(ord) = &ctx.config.ordering {
                let run = check_ordering(
                    &template,
                    &space,
                    &dataset,
                    ord.eta,
                    ord.steps,
                    ord.num_seeds,
                    ctx.config.master_seed,
                )?;
                report.ordering_concordance = Some(run.concordance);
                ordering = Some(run);
            }
            report
        }
        None => AbncReport {
            weak_holds: check_weak(&template, growth)?,
            strong_estimate: None,
            ordering_concordance: None,
        },
    };
    emit("abnc-check", &ctx.config, ctx.out.as_deref(), AbncPayload { abnc, ordering })?;
    Ok(0)
}

#[derive(Serialize)]
struct DecPayload {
    space_size: usize,
    grid_levels: Vec<f64>,
    k_p: Threshold,
    k_i: Threshold,
    k_e: f64,
    eval_cap: u64,
    answer: DecAnswer,
}

fn oracle_dec_cmd(ctx: &Ctx) -> anyhow::Result<i32> {
    let (template, space) = ctx.config.template.build()?;
    let dataset = ctx.load_dataset()?;
    let doc = ctx.oracle_doc()?;
    let k_e = doc.k_e.ok_or_else(|| anyhow!("`oracle.k_e` is required for dec"))?;
    let grid = ctx.weight_grid()?;
    let eval_cap = doc.eval_cap.unwrap_or(DEFAULT_EVAL_CAP);
    let thetas = ctx.resolve_thetas(&dataset)?;
    let instance = OseDecInstance {
        template,
        dataset,
        weight_grid: grid.clone(),
        space: space.clone(),
        thetas,
        k_p: doc.k_p,
        k_i: doc.k_i,
        k_e,
    };
    let answer = brute_force_ose_dec(&instance, eval_cap)?;
    let payload = DecPayload {
        space_size: space.len(),
        grid_levels: grid.levels().to_vec(),
        k_p: doc.k_p,
        k_i: doc.k_i,
        k_e,
        eval_cap,
        answer,
    };
    emit("oracle dec", &ctx.config, ctx.out.as_deref(), payload)?;
    Ok(0)
}

#[derive(Serialize)]
struct ExhaustivePayload {
    best_index_in_sorted_order: usize,
    best: CandidateRecord,
}

fn oracle_exhaustive_cmd(ctx: &Ctx) -> anyhow::Result<i32> {
    let (template, space) = ctx.config.template.build()?;
    let dataset = ctx.load_dataset()?;
    let thetas = ctx.resolve_thetas(&dataset)?;
    let (best_index, best) = exhaustive_opt(
        &template,
        &dataset,
        &space,
        &thetas,
        ctx.steps()?,
        ctx.config.loss,
        ctx.config.master_seed,
    )?;
    let payload = ExhaustivePayload { best_index_in_sorted_order: best_index, best };
    emit("oracle exhaustive", &ctx.config, ctx.out.as_deref(), payload)?;
    Ok(0)
}

#[derive(Serialize)]
struct InstanceSummary {
    space: Vec<ParamAssignment>,
    thetas: usize,
    k_p: Threshold,
    k_i: Threshold,
    k_e: f64,
    grid_levels: Vec<f64>,
    dataset_rows: usize,
}

#[derive(Serialize)]
struct ReducePayload {
    instance: InstanceSummary,
    answer: DecAnswer,
}

fn oracle_reduce_cmd(ctx: &Ctx) -> anyhow::Result<i32> {
    let (template, space) = ctx.config.template.build()?;
    let dataset = ctx.load_dataset()?;
    let doc = ctx.oracle_doc()?;
    let k_e = doc.k_e.ok_or_else(|| anyhow!("`oracle.k_e` is required for reduce"))?;
    let grid = ctx.weight_grid()?;
    let instance = reduce_nn_training(&template, &space, &dataset, &grid, k_e)?;
    let eval_cap = doc.eval_cap.unwrap_or(DEFAULT_EVAL_CAP);
    let answer = brute_force_ose_dec(&instance, eval_cap)?;
    let payload = ReducePayload {
        instance: InstanceSummary {
            space: instance.space.assignments.clone(),
            thetas: instance.thetas.len(),
            k_p: instance.k_p,
            k_i: instance.k_i,
            k_e: instance.k_e,
            grid_levels: instance.weight_grid.levels().to_vec(),
            dataset_rows: instance.dataset.len(),
        },
        answer,
    };
    emit("oracle reduce", &ctx.config, ctx.out.as_deref(), payload)?;
    Ok(0)
}

fn oracle_shortest_path_cmd(ctx: &Ctx) -> anyhow::Result<i32> {
    let (template, space) = ctx.config.template.build()?;
    let result: ShortestPathResult = equal_error_shortest_path(&template, &space)?;
    emit("oracle shortest-path", &ctx.config, ctx.out.as_deref(), result)?;
    Ok(0)
}

fn gen_data_cmd(
    kind: DataKind,
    rows: u64,
    features: u64,
    noise: f64,
    seed: u64,
    out: &Path,
) -> anyhow::Result<i32> {
    let dataset = data::gen_data(kind, rows, features, noise, seed)?;
    data::write_csv(&dataset, out)?;
    println!("wrote {} rows x {} features to {}", dataset.len(), features, out.display());
    Ok(0)
}
