//! Diagnostics for repeated-block families: whether the repeated middle
//! block asymptotically dominates the head and tail (the structural premise
//! behind sorting candidates by their leading cost term), whether sampled
//! instantiations admit finite smoothness and gradient bounds (so a fixed
//! step budget is meaningful), and whether the size ordering of a family
//! empirically predicts its trained-error ordering.

use rayon::prelude::*;
use serde::Serialize;

use crate::arch::{ArchTemplate, ParamAssignment, SearchSpace};
use crate::error::{Error, Result};
use crate::metrics::{param_size, segment_polys, CensusModel, Dataset, Loss};
use crate::network::{InitScheme, Network};
use crate::trainer::{
    derive_seed, estimate_smoothness, sgd_shuffling_train, HyperParams,
};

/// One strict-degree comparison between an outer segment and the repeated
/// block, in one growth variable, for one size metric.
#[derive(Debug, Clone, Serialize)]
pub struct DegreeComparison {
    /// "params" or "inference".
    pub metric: String,
    /// "head" or "tail".
    pub segment: String,
    pub variable: String,
    pub segment_degree: u32,
    pub block_degree: u32,
    pub holds: bool,
}

/// Outcome of the block-dominance check, with every comparison it made.
#[derive(Debug, Clone, Serialize)]
pub struct WeakReport {
    pub holds: bool,
    pub comparisons: Vec<DegreeComparison>,
}

/// Smoothness and gradient bounds pooled over sampled instantiations.
#[derive(Debug, Clone, Serialize)]
pub struct StrongEstimate {
    /// Largest smoothness ratio over the samples that produced one.
    pub l_hat: Option<f64>,
    /// Largest per-example gradient norm over all samples.
    pub g_hat: f64,
    /// Assignments actually instantiated and measured.
    pub samples: usize,
    /// Every estimate that was produced came out finite.
    pub consistent: bool,
    pub notes: Vec<String>,
}

/// Combined diagnostic report, serialized for the `abnc-check` subcommand.
#[derive(Debug, Clone, Serialize)]
pub struct AbncReport {
    pub weak_holds: WeakReport,
    /// Present only when the dominance check holds.
    pub strong_estimate: Option<StrongEstimate>,
    /// Filled in when an ordering run was requested alongside.
    pub ordering_concordance: Option<f64>,
}

/// Empirical check of whether smaller candidates err no worse than larger
/// ones once both are trained the same way.
#[derive(Debug, Clone, Serialize)]
pub struct OrderingReport {
    /// Fraction of size-ordered pairs whose trained errors respect the
    /// order (up to `1e-6`), averaged over seeds; vacuously 1.
    pub concordance: f64,
    pub per_seed: Vec<f64>,
    /// Successful trainings across all seeds.
    pub trained: usize,
    /// Trainings excluded from the pair counts, with the reason.
    pub failures: Vec<String>,
}

/// Check that the head and tail of a segmented template are strictly
/// dominated, degree-wise, by one repetition of the middle block — in every
/// growth variable, for both the parameter and the inference polynomial.
///
/// All the polynomials involved are operation counts, so strict degree
/// dominance in a variable is the same as vanishing relative cost as that
/// variable grows. The comparison is purely symbolic; the precision constant
/// multiplies whole censuses and cannot shift a degree.
pub fn check_weak(template: &ArchTemplate, growth_vars: &[String]) -> Result<WeakReport> {
    if growth_vars.is_empty() {
        return Err(Error::Precondition(
            "at least one growth variable is required".into(),
        ));
    }
    for v in growth_vars {
        if !template.variables.contains(v) {
            return Err(Error::Precondition(format!(
                "growth variable {v} is not declared by the template"
            )));
        }
    }
    let polys = segment_polys(template, &CensusModel::default())?;
    let mut comparisons = Vec::new();
    let mut holds = true;
    for v in growth_vars {
        let cases = [
            ("params", "head", &polys.params_head, &polys.params_block),
            ("params", "tail", &polys.params_tail, &polys.params_block),
            ("inference", "head", &polys.inference_head, &polys.inference_block),
            ("inference", "tail", &polys.inference_tail, &polys.inference_block),
        ];
        for (metric, segment, outer, block) in cases {
            let segment_degree = outer.degree_in(v);
            let block_degree = block.degree_in(v);
            let ok = segment_degree < block_degree;
            holds &= ok;
            comparisons.push(DegreeComparison {
                metric: metric.into(),
                segment: segment.into(),
                variable: v.clone(),
                segment_degree,
                block_degree,
                holds: ok,
            });
        }
    }
    Ok(WeakReport { holds, comparisons })
}

fn assignment_stream(assignment: &ParamAssignment) -> u64 {
    // FNV-1a over the assignment's value vector, so identical assignments
    // train identically no matter where they sit in the space.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in assignment.values_key() {
        for byte in v.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
    h
}

/// Run the dominance check and, if it holds, instantiate up to five sampled
/// assignments and pool their smoothness and gradient-norm estimates.
pub fn check_strong(
    template: &ArchTemplate,
    space: &SearchSpace,
    dataset: &Dataset,
    loss: Loss,
    growth_vars: &[String],
    pairs: usize,
    seed: u64,
) -> Result<AbncReport> {
    let weak = check_weak(template, growth_vars)?;
    if !weak.holds {
        return Ok(AbncReport {
            weak_holds: weak,
            strong_estimate: None,
            ordering_concordance: None,
        });
    }
    if space.is_empty() {
        return Err(Error::InvalidSpace("no assignments to sample".into()));
    }
    let mut indices: Vec<usize> = (0..space.len()).collect();
    if space.len() > 5 {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, 0));
        indices.shuffle(&mut rng);
        indices.truncate(5);
        indices.sort_unstable();
    }
    let mut l_hat: Option<f64> = None;
    let mut g_hat: f64 = 0.0;
    let mut consistent = true;
    let mut notes = Vec::new();
    for &idx in &indices {
        let assignment = &space.assignments[idx];
        let network = Network::instantiate(
            template,
            assignment,
            InitScheme::UniformFanIn,
            derive_seed(seed, assignment_stream(assignment), 0),
        )?;
        let est = estimate_smoothness(
            &network,
            dataset,
            loss,
            pairs,
            derive_seed(seed, assignment_stream(assignment), 1),
        )?;
        g_hat = g_hat.max(est.g_hat);
        consistent &= est.g_hat.is_finite();
        match est.l_hat {
            Some(ratio) => {
                consistent &= ratio.is_finite();
                l_hat = Some(l_hat.map_or(ratio, |cur| cur.max(ratio)));
            }
            None => notes.push(format!(
                "{assignment}: all sampled pairs had indistinguishable losses; \
                 no smoothness ratio from this sample"
            )),
        }
    }
    Ok(AbncReport {
        weak_holds: weak,
        strong_estimate: Some(StrongEstimate {
            l_hat,
            g_hat,
            samples: indices.len(),
            consistent,
            notes,
        }),
        ordering_concordance: None,
    })
}

enum TrainOutcome {
    Trained { seed_idx: usize, p: u64, e_hat: f64 },
    Failed { note: String },
}

/// Train every assignment in the space for `s` steps under each of
/// `num_seeds` seeds and measure how often the parameter-size order of a
/// pair is respected by the trained surrogate errors (ties within `1e-6`
/// count as respected). Divergent trainings are excluded from the pair
/// counts and reported in `failures`.
pub fn check_ordering(
    template: &ArchTemplate,
    space: &SearchSpace,
    dataset: &Dataset,
    eta: f64,
    s: u64,
    num_seeds: usize,
    master_seed: u64,
) -> Result<OrderingReport> {
    if s == 0 {
        return Err(Error::Precondition("ordering needs at least one step".into()));
    }
    if num_seeds == 0 {
        return Err(Error::Precondition("ordering needs at least one seed".into()));
    }
    if space.is_empty() {
        return Err(Error::InvalidSpace("no assignments to order".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..num_seeds)
        .flat_map(|seed_idx| (0..space.len()).map(move |a_idx| (seed_idx, a_idx)))
        .collect();
    let outcomes: Vec<Result<TrainOutcome>> = jobs
        .par_iter()
        .map(|&(seed_idx, a_idx)| {
            let assignment = &space.assignments[a_idx];
            let stream = assignment_stream(assignment);
            let mut network = Network::instantiate(
                template,
                assignment,
                InitScheme::UniformFanIn,
                derive_seed(master_seed, stream, 2 * seed_idx as u64),
            )?;
            let theta = HyperParams::new(dataset.clone(), eta)?
                .with_shuffle_seed(derive_seed(master_seed, stream, 2 * seed_idx as u64 + 1));
            match sgd_shuffling_train(&mut network, &theta, s) {
                Ok(trace) => Ok(TrainOutcome::Trained {
                    seed_idx,
                    p: param_size(&network),
                    e_hat: trace.final_e_hat(),
                }),
                Err(Error::TrainingDiverged(msg)) => Ok(TrainOutcome::Failed {
                    note: format!("seed {seed_idx}, {assignment}: {msg}"),
                }),
                Err(other) => Err(other),
            }
        })
        .collect();

    let mut per_seed_points: Vec<Vec<(u64, f64)>> = vec![Vec::new(); num_seeds];
    let mut failures = Vec::new();
    let mut trained = 0;
    for outcome in outcomes {
        match outcome? {
            TrainOutcome::Trained { seed_idx, p, e_hat } => {
                per_seed_points[seed_idx].push((p, e_hat));
                trained += 1;
            }
            TrainOutcome::Failed { note } => failures.push(note),
        }
    }
    let per_seed: Vec<f64> = per_seed_points
        .iter()
        .map(|points| {
            let mut total = 0u64;
            let mut concordant = 0u64;
            for (i, &(p_i, e_i)) in points.iter().enumerate() {
                for (j, &(p_j, e_j)) in points.iter().enumerate() {
                    if i == j || p_i > p_j {
                        continue;
                    }
                    total += 1;
                    if e_i <= e_j + 1e-6 {
                        concordant += 1;
                    }
                }
            }
            if total == 0 {
                1.0
            } else {
                concordant as f64 / total as f64
            }
        })
        .collect();
    let concordance = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
    Ok(OrderingReport { concordance, per_seed, trained, failures })
}
