//! The search itself: pick the apex of the space, score candidates against
//! it, and walk every epsilon-th architecture of the sorted space under each
//! hyper-parameter point, keeping the first-recorded argmax.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Pow;
use rayon::prelude::*;
use serde::Serialize;

use crate::arch::{ArchTemplate, ParamAssignment, SearchSpace};
use crate::error::{Error, Result};
use crate::metrics::{
    compute_metrics, param_size_poly, surrogate_inference_poly, CensusModel, Dataset, Loss,
    MetricsReport,
};
use crate::network::{InitScheme, Network, WeightArray};
use crate::poly::{Monomial, PolyExpr};
use crate::trainer::{derive_seed, sgd_shuffling_train, HyperParams};

/// Division floor for the error factor of the score; a perfect surrogate
/// error would otherwise divide by zero.
pub const ERROR_FLOOR: f64 = 1e-9;

/// The apex of a search space: the assignment whose parameter size and
/// inference cost bound every other assignment's.
#[derive(Debug, Clone, Serialize)]
pub struct MaxPoint {
    pub assignment: ParamAssignment,
    pub p_t: u64,
    pub i_t: u64,
}

/// Scan the whole space and return its apex: the assignment maximizing
/// `(p, i_hat)` lexicographically, with residual ties broken toward the
/// lexicographically largest assignment values. The scan is purely
/// symbolic — it evaluates the two cost polynomials once per assignment.
///
/// The apex must bound every assignment in both coordinates for the scores
/// downstream to be well-defined; a space whose inference costs are not
/// maximized at the parameter apex is rejected.
pub fn find_max_point(template: &ArchTemplate, space: &SearchSpace) -> Result<MaxPoint> {
    if space.is_empty() {
        return Err(Error::Precondition("cannot take the apex of an empty space".into()));
    }
    let p_poly = param_size_poly(template);
    let i_poly = surrogate_inference_poly(template, &CensusModel::default());
    let mut best: Option<(u64, u64, Vec<u64>, &ParamAssignment)> = None;
    let mut i_max = 0u64;
    for assignment in &space.assignments {
        let p = p_poly.evaluate(assignment.lookup())?;
        let i = i_poly.evaluate(assignment.lookup())?;
        i_max = i_max.max(i);
        let key = (p, i, assignment.values_key());
        let better = match &best {
            None => true,
            Some((bp, bi, bk, _)) => key > (*bp, *bi, bk.clone()),
        };
        if better {
            best = Some((p, i, assignment.values_key(), assignment));
        }
    }
    let (p_t, i_t, _, assignment) = best.expect("nonempty space");
    if i_t < i_max {
        return Err(Error::InvalidSpace(format!(
            "no single apex: the largest architecture ({assignment}) has inference cost \
             {i_t}, but the space reaches {i_max}"
        )));
    }
    if p_t == 0 || i_t == 0 {
        return Err(Error::InvalidSpace(
            "the apex must have positive parameter and inference size".into(),
        ));
    }
    Ok(MaxPoint { assignment: assignment.clone(), p_t, i_t })
}

/// Score one candidate against the apex: the product of its relative
/// parameter saving, its relative inference saving, and the reciprocal of
/// its surrogate error (floored at [`ERROR_FLOOR`]).
pub fn w_coefficient(p_f: u64, i_f: u64, e_hat_f: f64, max_point: &MaxPoint) -> Result<f64> {
    if p_f > max_point.p_t || i_f > max_point.i_t {
        return Err(Error::Precondition(format!(
            "candidate ({p_f}, {i_f}) exceeds the apex ({}, {})",
            max_point.p_t, max_point.i_t
        )));
    }
    if !(0.0..=1.0).contains(&e_hat_f) {
        return Err(Error::Precondition(format!(
            "surrogate error must lie in [0, 1], got {e_hat_f}"
        )));
    }
    let p_saving = (max_point.p_t - p_f) as f64 / max_point.p_t as f64;
    let i_saving = (max_point.i_t - i_f) as f64 / max_point.i_t as f64;
    Ok(p_saving * i_saving / e_hat_f.max(ERROR_FLOOR))
}

fn monomial_value(m: &Monomial, assignment: &ParamAssignment) -> Result<BigRational> {
    let mut acc = m.coeff.clone();
    for (name, exp) in &m.exponents {
        let v = assignment.get(name).ok_or_else(|| {
            Error::Schema(format!("assignment `{assignment}` has no value for {name}"))
        })?;
        acc *= BigRational::from_integer(BigInt::from(v)).pow(*exp);
    }
    Ok(acc)
}

/// Order the space ascending by the value of the leading term of the
/// parameter polynomial, breaking ties by full parameter size, then by
/// inference cost, then by assignment values. The result is deterministic
/// for any input order.
pub fn sort_space(
    space: &SearchSpace,
    p_poly: &PolyExpr,
    i_poly: &PolyExpr,
) -> Result<Vec<ParamAssignment>> {
    let leading = p_poly.leading_term().map_err(|_| {
        Error::Precondition("cannot sort by the leading term of a zero polynomial".into())
    })?;
    let mut keyed: Vec<(BigRational, u64, u64, Vec<u64>, ParamAssignment)> = space
        .assignments
        .iter()
        .map(|a| {
            Ok((
                monomial_value(&leading, a)?,
                p_poly.evaluate(a.lookup())?,
                i_poly.evaluate(a.lookup())?,
                a.values_key(),
                a.clone(),
            ))
        })
        .collect::<Result<_>>()?;
    keyed.sort_by(|x, y| {
        (&x.0, x.1, x.2, &x.3).cmp(&(&y.0, y.1, y.2, &y.3))
    });
    Ok(keyed.into_iter().map(|k| k.4).collect())
}

/// Search-wide knobs: stride, per-candidate budget, and the seeds and
/// parallelism everything derives from.
#[derive(Debug, Clone)]
pub struct ExtractOptions {
    /// Stride through the sorted space; 1 visits everything.
    pub epsilon: usize,
    /// Training steps per candidate.
    pub steps: u64,
    pub loss: Loss,
    pub master_seed: u64,
    /// Worker threads; 0 uses the global default. The result is identical
    /// either way — only wall time changes.
    pub jobs: usize,
    pub census: CensusModel,
}

impl ExtractOptions {
    pub fn new(epsilon: usize, steps: u64, master_seed: u64) -> Self {
        ExtractOptions {
            epsilon,
            steps,
            loss: Loss::BoundedQuadratic,
            master_seed,
            jobs: 0,
            census: CensusModel::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateStatus {
    Ok,
    Failed,
}

/// One evaluated candidate, in the order the reduction saw it.
#[derive(Debug, Clone, Serialize)]
pub struct CandidateRecord {
    pub theta_index: usize,
    /// Position of this assignment in the sorted space.
    pub xi_index_in_sorted_order: usize,
    pub assignment: ParamAssignment,
    /// Absent when the candidate failed to train.
    pub metrics: Option<MetricsReport>,
    /// Score against the apex; zero for failed candidates.
    pub w: f64,
    pub status: CandidateStatus,
    /// Why the candidate failed, when it did.
    pub failure: Option<String>,
}

/// Everything a search run produced. Weights travel in a binary sidecar,
/// not in the JSON serialization of this struct.
#[derive(Debug, Clone, Serialize)]
pub struct ExtractionResult {
    pub best: CandidateRecord,
    #[serde(skip)]
    pub best_weights: Vec<Vec<WeightArray>>,
    pub trace: Vec<CandidateRecord>,
    pub max_point: MaxPoint,
    pub epsilon: usize,
    pub steps: u64,
    pub master_seed: u64,
    pub theta_count: usize,
    pub space_len: usize,
}

/// The seeds a candidate draws: one for weight initialization, one for the
/// epoch shuffles. Keyed by the candidate's position in the *sorted* space,
/// so a strided run and an exhaustive run give any shared candidate the
/// exact same draw.
pub fn candidate_seeds(master: u64, theta_index: usize, sorted_index: usize) -> (u64, u64) {
    let base = derive_seed(master, theta_index as u64, sorted_index as u64);
    (derive_seed(base, 0, 0), derive_seed(base, 1, 0))
}

enum Evaluation {
    Trained { metrics: MetricsReport, weights: Vec<Vec<WeightArray>> },
    Failed { note: String },
}

fn evaluate_candidate(
    template: &ArchTemplate,
    dataset: &Dataset,
    assignment: &ParamAssignment,
    theta: &HyperParams,
    options: &ExtractOptions,
    theta_index: usize,
    sorted_index: usize,
) -> Result<Evaluation> {
    let (init_seed, shuffle_seed) = candidate_seeds(options.master_seed, theta_index, sorted_index);
    let mut network =
        Network::instantiate(template, assignment, InitScheme::UniformFanIn, init_seed)?;
    let theta = theta.clone().with_shuffle_seed(shuffle_seed);
    let trained = sgd_shuffling_train(&mut network, &theta, options.steps);
    let soft_failure = |note: String| Ok(Evaluation::Failed { note });
    match trained {
        Ok(_) => {}
        Err(Error::TrainingDiverged(msg)) => return soft_failure(msg),
        Err(Error::Numeric(msg)) | Err(Error::LossContract(msg)) => return soft_failure(msg),
        Err(other) => return Err(other),
    }
    match compute_metrics(template, &network, dataset, &theta.batch, options.loss, &options.census)
    {
        Ok(metrics) => Ok(Evaluation::Trained { metrics, weights: network.weights }),
        Err(Error::Numeric(msg)) | Err(Error::LossContract(msg)) => soft_failure(msg),
        Err(other) => Err(other),
    }
}

fn run_search(
    template: &ArchTemplate,
    dataset: &Dataset,
    space: &SearchSpace,
    thetas: &[HyperParams],
    options: &ExtractOptions,
) -> Result<ExtractionResult> {
    let max_point = find_max_point(template, space)?;
    let p_poly = param_size_poly(template);
    let i_poly = surrogate_inference_poly(template, &options.census);
    let sorted = sort_space(space, &p_poly, &i_poly)?;

    let jobs: Vec<(usize, usize)> = (0..thetas.len())
        .flat_map(|t| (0..sorted.len()).step_by(options.epsilon).map(move |x| (t, x)))
        .collect();
    let evaluations: Vec<Result<(usize, usize, Evaluation)>> = jobs
        .par_iter()
        .map(|&(theta_index, sorted_index)| {
            let eval = evaluate_candidate(
                template,
                dataset,
                &sorted[sorted_index],
                &thetas[theta_index],
                options,
                theta_index,
                sorted_index,
            )?;
            Ok((theta_index, sorted_index, eval))
        })
        .collect();

    // Reduce strictly in (theta, candidate) order — completion order must
    // not influence which record the incumbent rule picks first.
    let mut trace: Vec<CandidateRecord> = Vec::with_capacity(jobs.len());
    let mut best: Option<(usize, Vec<Vec<WeightArray>>)> = None;
    for outcome in evaluations {
        let (theta_index, sorted_index, eval) = outcome?;
        let record = match eval {
            Evaluation::Trained { metrics, weights } => {
                let w = w_coefficient(metrics.p, metrics.i_hat, metrics.e_hat, &max_point)?;
                let record = CandidateRecord {
                    theta_index,
                    xi_index_in_sorted_order: sorted_index,
                    assignment: sorted[sorted_index].clone(),
                    metrics: Some(metrics),
                    w,
                    status: CandidateStatus::Ok,
                    failure: None,
                };
                let strictly_better = match &best {
                    None => true,
                    Some((best_idx, _)) => w > trace[*best_idx].w,
                };
                if strictly_better {
                    best = Some((trace.len(), weights));
                }
                record
            }
            Evaluation::Failed { note } => CandidateRecord {
                theta_index,
                xi_index_in_sorted_order: sorted_index,
                assignment: sorted[sorted_index].clone(),
                metrics: None,
                w: 0.0,
                status: CandidateStatus::Failed,
                failure: Some(note),
            },
        };
        trace.push(record);
    }
    let (best_idx, best_weights) = best.ok_or_else(|| {
        let failures: Vec<&str> = trace
            .iter()
            .filter_map(|r| r.failure.as_deref())
            .collect();
        Error::ExtractionFailed(format!(
            "every candidate failed to train; first failures: {}",
            failures.join("; ")
        ))
    })?;
    let result = ExtractionResult {
        best: trace[best_idx].clone(),
        best_weights,
        trace,
        max_point,
        epsilon: options.epsilon,
        steps: options.steps,
        master_seed: options.master_seed,
        theta_count: thetas.len(),
        space_len: space.len(),
    };
    assert_best_not_dominated(&result)?;
    Ok(result)
}

/// The winning record must not be strictly dominated in `(p, i_hat, e_hat)`
/// by any successful record of the same trace — with errors compared after
/// the scoring floor, below which the score cannot distinguish candidates.
/// Only meaningful when the winner scored above zero.
fn assert_best_not_dominated(result: &ExtractionResult) -> Result<()> {
    if result.best.w <= 0.0 {
        return Ok(());
    }
    let best = result.best.metrics.as_ref().expect("winner trained");
    for record in &result.trace {
        let Some(m) = record.metrics.as_ref() else { continue };
        let no_worse = m.p <= best.p
            && m.i_hat <= best.i_hat
            && m.e_hat.max(ERROR_FLOOR) <= best.e_hat.max(ERROR_FLOOR);
        let strictly_better = m.p < best.p
            || m.i_hat < best.i_hat
            || m.e_hat.max(ERROR_FLOOR) < best.e_hat.max(ERROR_FLOOR);
        if no_worse && strictly_better {
            return Err(Error::Consistency(format!(
                "winner `{}` is dominated by `{}`",
                result.best.assignment, record.assignment
            )));
        }
    }
    Ok(())
}

/// Run the full strided search and return the best candidate with its
/// trained weights and the complete evaluation trace.
pub fn extract(
    template: &ArchTemplate,
    dataset: &Dataset,
    space: &SearchSpace,
    thetas: &[HyperParams],
    options: &ExtractOptions,
) -> Result<ExtractionResult> {
    if space.is_empty() {
        return Err(Error::InvalidSpace("nothing to search".into()));
    }
    if options.epsilon == 0 || options.epsilon > space.len() {
        return Err(Error::Precondition(format!(
            "stride must lie in [1, {}], got {}",
            space.len(),
            options.epsilon
        )));
    }
    if options.steps == 0 {
        return Err(Error::Precondition("candidates need at least one training step".into()));
    }
    if thetas.is_empty() {
        return Err(Error::Precondition("at least one hyper-parameter point is required".into()));
    }
    if options.jobs > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.jobs)
            .build()
            .map_err(|e| Error::Precondition(format!("cannot build a {}-thread pool: {e}", options.jobs)))?;
        pool.install(|| run_search(template, dataset, space, thetas, options))
    } else {
        run_search(template, dataset, space, thetas, options)
    }
}

/// Shapes of every weight array of the result, in layer order, for decoding
/// the binary sidecar.
#[derive(Debug, Clone, Serialize, serde::Deserialize, PartialEq, Eq)]
pub struct WeightsManifest {
    /// One entry per layer: the shapes of its arrays.
    pub layers: Vec<Vec<Vec<usize>>>,
    /// Total number of 64-bit values in the sidecar.
    pub total_values: usize,
}

impl WeightsManifest {
    pub fn describe(weights: &[Vec<WeightArray>]) -> Self {
        let layers: Vec<Vec<Vec<usize>>> = weights
            .iter()
            .map(|arrays| arrays.iter().map(|a| a.shape.clone()).collect())
            .collect();
        let total_values = weights
            .iter()
            .flat_map(|arrays| arrays.iter())
            .map(|a| a.data.len())
            .sum();
        WeightsManifest { layers, total_values }
    }
}

/// Write weights as a flat little-endian 64-bit binary file in row-major
/// array order, plus a JSON manifest of the shapes next to it.
pub fn write_weight_sidecar(
    weights: &[Vec<WeightArray>],
    bin_path: &std::path::Path,
    manifest_path: &std::path::Path,
) -> Result<()> {
    let manifest = WeightsManifest::describe(weights);
    let mut bytes = Vec::with_capacity(manifest.total_values * 8);
    for arrays in weights {
        for array in arrays {
            for value in &array.data {
                bytes.extend_from_slice(&value.to_le_bytes());
            }
        }
    }
    std::fs::write(bin_path, bytes)?;
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    std::fs::write(manifest_path, json)?;
    Ok(())
}

/// Read a weight sidecar back; the manifest drives the shapes and the
/// binary file must match it exactly.
pub fn read_weight_sidecar(
    bin_path: &std::path::Path,
    manifest_path: &std::path::Path,
) -> Result<Vec<Vec<WeightArray>>> {
    let manifest: WeightsManifest =
        serde_json::from_slice(&std::fs::read(manifest_path)?)?;
    let bytes = std::fs::read(bin_path)?;
    if bytes.len() != manifest.total_values * 8 {
        return Err(Error::Format(format!(
            "sidecar holds {} bytes but the manifest promises {} values",
            bytes.len(),
            manifest.total_values
        )));
    }
    let mut offset = 0usize;
    let mut weights = Vec::with_capacity(manifest.layers.len());
    for layer_shapes in &manifest.layers {
        let mut arrays = Vec::with_capacity(layer_shapes.len());
        for shape in layer_shapes {
            let len: usize = shape.iter().product();
            let mut array = WeightArray::zeros(shape.clone());
            for i in 0..len {
                let chunk: [u8; 8] = bytes[offset..offset + 8]
                    .try_into()
                    .expect("length checked against the manifest");
                array.data[i] = f64::from_le_bytes(chunk);
                offset += 8;
            }
            arrays.push(array);
        }
        weights.push(arrays);
    }
    Ok(weights)
}
