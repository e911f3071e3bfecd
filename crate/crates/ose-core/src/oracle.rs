//! Ground-truth references the search can be tested against: an exact
//! grid-enumeration decision procedure, an exhaustive (stride-1) search kept
//! deliberately separate from the production path, a reduction that phrases
//! "can this fixed network train to error k" as a decision instance, and the
//! shortest-path formulation of the equal-error special case.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use num_bigint::BigInt;
use num_rational::BigRational;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{ArchTemplate, ParamAssignment, SearchSpace};
use crate::error::{Error, Result};
use crate::extractor::{
    candidate_seeds, find_max_point, sort_space, w_coefficient, CandidateRecord, CandidateStatus,
};
use crate::metrics::{
    compute_metrics, error_rate, param_size_poly, surrogate_inference_poly, CensusModel, Dataset,
    Loss,
};
use crate::network::{InitScheme, Network, WeightArray};
use crate::trainer::{sgd_shuffling_train, HyperParams};

/// Ceiling on grid evaluations a decision scan may attempt.
pub const DEFAULT_EVAL_CAP: u64 = 10_000_000;

/// The finite set of values every weight is drawn from during exact
/// enumeration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightGrid {
    levels: Vec<f64>,
}

impl WeightGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Schema("a weight grid needs at least one level".into()));
        }
        for pair in levels.windows(2) {
            if !(pair[0] < pair[1]) {
                return Err(Error::Schema(format!(
                    "grid levels must be strictly ascending, got {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        if levels.iter().any(|l| !l.is_finite()) {
            return Err(Error::Schema("grid levels must be finite".into()));
        }
        Ok(WeightGrid { levels })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }
}

impl Default for WeightGrid {
    fn default() -> Self {
        WeightGrid { levels: vec![-1.0, -0.5, 0.0, 0.5, 1.0] }
    }
}

impl TryFrom<Vec<f64>> for WeightGrid {
    type Error = Error;
    fn try_from(levels: Vec<f64>) -> Result<Self> {
        WeightGrid::new(levels)
    }
}

impl From<WeightGrid> for Vec<f64> {
    fn from(grid: WeightGrid) -> Vec<f64> {
        grid.levels
    }
}

/// An upper bound that may be absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Threshold {
    Bounded(u64),
    Unbounded,
}

impl Threshold {
    pub fn admits(&self, value: u64) -> bool {
        match self {
            Threshold::Bounded(k) => value <= *k,
            Threshold::Unbounded => true,
        }
    }

    pub fn from_option(value: Option<u64>) -> Self {
        value.map_or(Threshold::Unbounded, Threshold::Bounded)
    }
}

impl Serialize for Threshold {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Threshold::Bounded(k) => serializer.serialize_u64(*k),
            Threshold::Unbounded => serializer.serialize_str("unbounded"),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = Threshold;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a non-negative integer or the string \"unbounded\"")
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> std::result::Result<Threshold, E> {
                Ok(Threshold::Bounded(v))
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> std::result::Result<Threshold, E> {
                u64::try_from(v)
                    .map(Threshold::Bounded)
                    .map_err(|_| E::custom("threshold cannot be negative"))
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> std::result::Result<Threshold, E> {
                if v == "unbounded" {
                    Ok(Threshold::Unbounded)
                } else {
                    Err(E::custom("expected \"unbounded\""))
                }
            }
            fn visit_none<E: serde::de::Error>(self) -> std::result::Result<Threshold, E> {
                Ok(Threshold::Unbounded)
            }
            fn visit_unit<E: serde::de::Error>(self) -> std::result::Result<Threshold, E> {
                Ok(Threshold::Unbounded)
            }
        }
        deserializer.deserialize_any(V)
    }
}

/// A decision question: does any architecture in the space, under any grid
/// weight assignment, satisfy all three thresholds at once?
#[derive(Debug, Clone)]
pub struct OseDecInstance {
    pub template: ArchTemplate,
    pub dataset: Dataset,
    pub weight_grid: WeightGrid,
    pub space: SearchSpace,
    /// Carried for completeness; the exact scan never trains.
    pub thetas: Vec<HyperParams>,
    pub k_p: Threshold,
    pub k_i: Threshold,
    /// Error-rate threshold in `[0, 1]`; compared exactly.
    pub k_e: f64,
}

/// The satisfying pair found by the scan, if any.
#[derive(Debug, Clone, Serialize)]
pub struct DecWitness {
    pub assignment: ParamAssignment,
    pub weights: Vec<Vec<WeightArray>>,
    pub p: u64,
    pub i_hat: u64,
    pub e_errors: u64,
    pub e_total: u64,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "answer", rename_all = "kebab-case")]
pub enum DecAnswer {
    Yes { witness: DecWitness },
    /// Every admitted candidate was fully enumerated.
    No { evaluations: u64 },
}

impl DecAnswer {
    pub fn is_yes(&self) -> bool {
        matches!(self, DecAnswer::Yes { .. })
    }
}

/// Scan one architecture's full weight grid in odometer order (last weight
/// fastest) and return the first satisfying weight set.
fn scan_grid(
    template: &ArchTemplate,
    assignment: &ParamAssignment,
    grid: &WeightGrid,
    dataset: &Dataset,
    k_e: &BigRational,
) -> Result<Option<(Vec<Vec<WeightArray>>, u64, u64)>> {
    let mut network = Network::instantiate(template, assignment, InitScheme::Zeros, 0)?;
    let weight_count = network.weight_count() as usize;
    let levels = grid.levels();
    let mut odometer = vec![0usize; weight_count];
    let total = dataset.len() as u64;
    loop {
        let mut cursor = 0usize;
        for arrays in &mut network.weights {
            for array in arrays {
                for w in &mut array.data {
                    *w = levels[odometer[cursor]];
                    cursor += 1;
                }
            }
        }
        let rate = error_rate(&network, dataset)?;
        let e = BigRational::new(BigInt::from(rate.errors), BigInt::from(total));
        if e <= *k_e {
            return Ok(Some((network.weights.clone(), rate.errors, total)));
        }
        // Advance the odometer; done once every position wraps.
        let mut pos = weight_count;
        loop {
            if pos == 0 {
                return Ok(None);
            }
            pos -= 1;
            odometer[pos] += 1;
            if odometer[pos] < levels.len() {
                break;
            }
            odometer[pos] = 0;
        }
    }
}

/// Decide the instance by exact enumeration: walk the space in order, skip
/// architectures whose parameter or inference size already violates its
/// threshold, and try every grid weight assignment against the error
/// threshold. No training happens anywhere. The witness is the first in
/// (space order, odometer order), independent of scheduling.
pub fn brute_force_ose_dec(instance: &OseDecInstance, eval_cap: u64) -> Result<DecAnswer> {
    if !(0.0..=1.0).contains(&instance.k_e) {
        return Err(Error::Precondition(format!(
            "error threshold must lie in [0, 1], got {}",
            instance.k_e
        )));
    }
    let k_e = BigRational::from_float(instance.k_e)
        .ok_or_else(|| Error::Precondition("error threshold is not representable".into()))?;
    let p_poly = param_size_poly(&instance.template);
    let i_poly = surrogate_inference_poly(&instance.template, &CensusModel::default());

    // Admission and cost pre-pass: everything that will be enumerated, with
    // the total evaluation count checked against the cap before any work.
    let levels = instance.weight_grid.levels().len() as u128;
    let mut admitted: Vec<&ParamAssignment> = Vec::new();
    let mut planned: u128 = 0;
    for assignment in &instance.space.assignments {
        let p = p_poly.evaluate(assignment.lookup())?;
        if !instance.k_p.admits(p) {
            continue;
        }
        let i_hat = i_poly.evaluate(assignment.lookup())?;
        if !instance.k_i.admits(i_hat) {
            continue;
        }
        let evals = levels
            .checked_pow(u32::try_from(p).map_err(|_| {
                Error::SizeLimit(format!("{p} weights cannot be grid-enumerated"))
            })?)
            .ok_or_else(|| Error::SizeLimit(format!("grid of {levels}^{p} overflows")))?;
        planned = planned.saturating_add(evals);
        admitted.push(assignment);
    }
    if planned > eval_cap as u128 {
        return Err(Error::SizeLimit(format!(
            "the scan would need {planned} evaluations, over the cap of {eval_cap}"
        )));
    }

    let hit: Option<Result<DecWitness>> = admitted
        .par_iter()
        .filter_map(|assignment| {
            match scan_grid(
                &instance.template,
                assignment,
                &instance.weight_grid,
                &instance.dataset,
                &k_e,
            ) {
                Ok(Some((weights, e_errors, e_total))) => {
                    let p = p_poly.evaluate(assignment.lookup()).expect("evaluated above");
                    let i_hat = i_poly.evaluate(assignment.lookup()).expect("evaluated above");
                    Some(Ok(DecWitness {
                        assignment: (*assignment).clone(),
                        weights,
                        p,
                        i_hat,
                        e_errors,
                        e_total,
                    }))
                }
                Ok(None) => None,
                Err(e) => Some(Err(e)),
            }
        })
        .find_first(|_| true);
    match hit {
        Some(Ok(witness)) => Ok(DecAnswer::Yes { witness }),
        Some(Err(e)) => Err(e),
        None => Ok(DecAnswer::No { evaluations: planned as u64 }),
    }
}

/// Reference search: train every architecture of the sorted space (stride 1)
/// and return the sorted-order index and record of the winner. This is a
/// standalone loop rather than a call into the production search, so the two
/// can be compared against each other; only the seed derivation is shared,
/// because matching draws is the contract under test.
pub fn exhaustive_opt(
    template: &ArchTemplate,
    dataset: &Dataset,
    space: &SearchSpace,
    thetas: &[HyperParams],
    s: u64,
    loss: Loss,
    master_seed: u64,
) -> Result<(usize, CandidateRecord)> {
    if thetas.is_empty() {
        return Err(Error::Precondition("at least one hyper-parameter point is required".into()));
    }
    if s == 0 {
        return Err(Error::Precondition("candidates need at least one training step".into()));
    }
    let census = CensusModel::default();
    let max_point = find_max_point(template, space)?;
    let p_poly = param_size_poly(template);
    let i_poly = surrogate_inference_poly(template, &census);
    let sorted = sort_space(space, &p_poly, &i_poly)?;
    let mut best: Option<(usize, CandidateRecord)> = None;
    for (theta_index, theta) in thetas.iter().enumerate() {
        for (sorted_index, assignment) in sorted.iter().enumerate() {
            let (init_seed, shuffle_seed) =
                candidate_seeds(master_seed, theta_index, sorted_index);
            let mut network =
                Network::instantiate(template, assignment, InitScheme::UniformFanIn, init_seed)?;
            let theta = theta.clone().with_shuffle_seed(shuffle_seed);
            let outcome = sgd_shuffling_train(&mut network, &theta, s).and_then(|_| {
                compute_metrics(template, &network, dataset, &theta.batch, loss, &census)
            });
            let record = match outcome {
                Ok(metrics) => {
                    let w = w_coefficient(metrics.p, metrics.i_hat, metrics.e_hat, &max_point)?;
                    CandidateRecord {
                        theta_index,
                        xi_index_in_sorted_order: sorted_index,
                        assignment: assignment.clone(),
                        metrics: Some(metrics),
                        w,
                        status: CandidateStatus::Ok,
                        failure: None,
                    }
                }
                Err(Error::TrainingDiverged(msg))
                | Err(Error::Numeric(msg))
                | Err(Error::LossContract(msg)) => CandidateRecord {
                    theta_index,
                    xi_index_in_sorted_order: sorted_index,
                    assignment: assignment.clone(),
                    metrics: None,
                    w: 0.0,
                    status: CandidateStatus::Failed,
                    failure: Some(msg),
                },
                Err(other) => return Err(other),
            };
            let take = record.status == CandidateStatus::Ok
                && best.as_ref().is_none_or(|(_, b)| record.w > b.w);
            if take {
                best = Some((sorted_index, record));
            }
        }
    }
    best.ok_or_else(|| Error::ExtractionFailed("every candidate failed to train".into()))
}

/// Phrase "can this one fixed architecture reach error `k` on the dataset"
/// as a decision instance: the space collapses to its single assignment, no
/// hyper-parameters are carried, the size thresholds fall away, and only the
/// error threshold remains.
pub fn reduce_nn_training(
    template: &ArchTemplate,
    space: &SearchSpace,
    dataset: &Dataset,
    weight_grid: &WeightGrid,
    k: f64,
) -> Result<OseDecInstance> {
    if space.len() != 1 {
        return Err(Error::Precondition(format!(
            "the reduction needs exactly one architecture, the space holds {}",
            space.len()
        )));
    }
    Ok(OseDecInstance {
        template: template.clone(),
        dataset: dataset.clone(),
        weight_grid: weight_grid.clone(),
        space: space.clone(),
        thetas: Vec::new(),
        k_p: Threshold::Unbounded,
        k_i: Threshold::Unbounded,
        k_e: k,
    })
}

/// Winner of the equal-error special case, with the graph's dimensions as
/// evidence of the construction.
#[derive(Debug, Clone, Serialize)]
pub struct ShortestPathResult {
    pub assignment: ParamAssignment,
    /// `p + i_hat` of the winner — the length of the shortest path.
    pub cost: u64,
    pub vertices: usize,
    pub edges: usize,
}

/// When every candidate errs equally, the search degenerates to minimizing
/// `p + i_hat`. Build that as a graph — a zero-weight chain per assignment
/// from the source through its variable values, closed by one edge to the
/// target carrying the assignment's combined size — and run a shortest-path
/// search over it.
pub fn equal_error_shortest_path(
    template: &ArchTemplate,
    space: &SearchSpace,
) -> Result<ShortestPathResult> {
    if space.is_empty() {
        return Err(Error::Precondition("no assignments to route through".into()));
    }
    let p_poly = param_size_poly(template);
    let i_poly = surrogate_inference_poly(template, &CensusModel::default());
    let costs: Vec<u64> = space
        .assignments
        .iter()
        .map(|a| {
            let p = p_poly.evaluate(a.lookup())?;
            let i = i_poly.evaluate(a.lookup())?;
            p.checked_add(i)
                .ok_or_else(|| Error::SizeLimit(format!("p + i overflows at `{a}`")))
        })
        .collect::<Result<_>>()?;

    // Vertices: 0 = source, 1 = target, then one per positional value of
    // each assignment's chain.
    let source = 0usize;
    let target = 1usize;
    let mut adjacency: Vec<Vec<(usize, u64)>> = vec![Vec::new(), Vec::new()];
    let mut edges = 0usize;
    for (assignment, &cost) in space.assignments.iter().zip(&costs) {
        let chain_len = assignment.pairs().len();
        if chain_len == 0 {
            adjacency[source].push((target, cost));
            edges += 1;
            continue;
        }
        let first = adjacency.len();
        for _ in 0..chain_len {
            adjacency.push(Vec::new());
        }
        adjacency[source].push((first, 0));
        edges += 1;
        for j in 0..chain_len - 1 {
            adjacency[first + j].push((first + j + 1, 0));
            edges += 1;
        }
        adjacency[first + chain_len - 1].push((target, cost));
        edges += 1;
    }
    let vertices = adjacency.len();

    // Plain binary-heap shortest path over nonnegative weights.
    let mut dist = vec![u64::MAX; vertices];
    dist[source] = 0;
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((0u64, source)));
    while let Some(Reverse((d, v))) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        for &(next, weight) in &adjacency[v] {
            let candidate = d + weight;
            if candidate < dist[next] {
                dist[next] = candidate;
                heap.push(Reverse((candidate, next)));
            }
        }
    }
    let shortest = dist[target];
    debug_assert_ne!(shortest, u64::MAX, "target is reachable by construction");
    let winner = costs
        .iter()
        .position(|&c| c == shortest)
        .expect("some chain realizes the shortest distance");
    Ok(ShortestPathResult {
        assignment: space.assignments[winner].clone(),
        cost: shortest,
        vertices,
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::TemplateDoc;
    use crate::extractor::{extract, ExtractOptions};
    use crate::metrics::DataPoint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn template(doc: &str) -> (ArchTemplate, SearchSpace) {
        TemplateDoc::from_json(doc).unwrap().build().unwrap()
    }

    /// One weight in total: y_hat = w * x on scalar inputs.
    const ONE_WEIGHT_DOC: &str = r#"{
        "input_dim": 1,
        "variables": [{"name": "h", "role": "dimension", "domain": [1]}],
        "layers": [{"kind": "dense", "input": "p", "output": "h", "bias": false}]
    }"#;

    fn two_point_data() -> Dataset {
        Dataset::new(vec![
            DataPoint { x: vec![1.0], y: 1 },
            DataPoint { x: vec![-1.0], y: 0 },
        ])
        .unwrap()
    }

    fn instance(
        doc: &str,
        dataset: Dataset,
        grid: WeightGrid,
        k_p: Threshold,
        k_i: Threshold,
        k_e: f64,
    ) -> OseDecInstance {
        let (template, space) = template(doc);
        OseDecInstance {
            template,
            dataset,
            weight_grid: grid,
            space,
            thetas: Vec::new(),
            k_p,
            k_i,
            k_e,
        }
    }

    #[test]
    fn grid_must_be_ascending_and_finite() {
        assert!(WeightGrid::new(vec![]).is_err());
        assert!(WeightGrid::new(vec![0.0, 0.0]).is_err());
        assert!(WeightGrid::new(vec![1.0, -1.0]).is_err());
        assert!(WeightGrid::new(vec![0.0, f64::INFINITY]).is_err());
        assert_eq!(WeightGrid::default().levels(), &[-1.0, -0.5, 0.0, 0.5, 1.0]);
        let grid: WeightGrid = serde_json::from_str("[-1.0, 0.0, 1.0]").unwrap();
        assert_eq!(grid.levels(), &[-1.0, 0.0, 1.0]);
        assert!(serde_json::from_str::<WeightGrid>("[1.0, 0.0]").is_err());
    }

    #[test]
    fn threshold_serde_round_trips() {
        assert_eq!(serde_json::to_string(&Threshold::Bounded(5)).unwrap(), "5");
        assert_eq!(
            serde_json::to_string(&Threshold::Unbounded).unwrap(),
            "\"unbounded\""
        );
        let b: Threshold = serde_json::from_str("12").unwrap();
        assert_eq!(b, Threshold::Bounded(12));
        let u: Threshold = serde_json::from_str("\"unbounded\"").unwrap();
        assert_eq!(u, Threshold::Unbounded);
        assert!(serde_json::from_str::<Threshold>("-3").is_err());
        assert!(Threshold::Bounded(3).admits(3));
        assert!(!Threshold::Bounded(3).admits(4));
        assert!(Threshold::Unbounded.admits(u64::MAX));
    }

    #[test]
    fn one_weight_scan_finds_the_separating_weight() {
        let inst = instance(
            ONE_WEIGHT_DOC,
            two_point_data(),
            WeightGrid::new(vec![-1.0, 0.0, 1.0]).unwrap(),
            Threshold::Unbounded,
            Threshold::Unbounded,
            0.25,
        );
        let answer = brute_force_ose_dec(&inst, DEFAULT_EVAL_CAP).unwrap();
        let DecAnswer::Yes { witness } = answer else {
            panic!("expected a witness");
        };
        // -1 misclassifies both, 0 misclassifies the positive point (0.5 >
        // 0.25), so the first satisfying grid point is w = 1.
        assert_eq!(witness.weights[0][0].data, vec![1.0]);
        assert_eq!(witness.p, 1);
        assert_eq!(witness.e_errors, 0);
        assert_eq!(witness.e_total, 2);
    }

    #[test]
    fn zero_parameter_budget_answers_no() {
        let inst = instance(
            ONE_WEIGHT_DOC,
            two_point_data(),
            WeightGrid::default(),
            Threshold::Bounded(0),
            Threshold::Unbounded,
            1.0,
        );
        let answer = brute_force_ose_dec(&inst, DEFAULT_EVAL_CAP).unwrap();
        match answer {
            DecAnswer::No { evaluations } => assert_eq!(evaluations, 0),
            DecAnswer::Yes { .. } => panic!("one parameter exceeds a budget of zero"),
        }
    }

    #[test]
    fn unreachable_error_threshold_answers_no_after_full_enumeration() {
        // Without w = 1 in the grid, nothing classifies both points.
        let inst = instance(
            ONE_WEIGHT_DOC,
            two_point_data(),
            WeightGrid::new(vec![-1.0, 0.0]).unwrap(),
            Threshold::Unbounded,
            Threshold::Unbounded,
            0.0,
        );
        let answer = brute_force_ose_dec(&inst, DEFAULT_EVAL_CAP).unwrap();
        match answer {
            DecAnswer::No { evaluations } => assert_eq!(evaluations, 2),
            DecAnswer::Yes { .. } => panic!("no grid point separates the data"),
        }
    }

    #[test]
    fn evaluation_cap_is_enforced_before_scanning() {
        let doc = r#"{
            "input_dim": 4,
            "variables": [{"name": "h", "role": "dimension", "domain": [2]}],
            "layers": [
                {"kind": "dense", "input": "p", "output": "h"},
                {"kind": "dense", "input": "h", "output": "1", "bias": false}
            ]
        }"#;
        let inst = instance(
            doc,
            two_point_data_dim(4),
            WeightGrid::default(),
            Threshold::Unbounded,
            Threshold::Unbounded,
            1.0,
        );
        // 12 weights at 5 levels is ~244 million evaluations.
        let err = brute_force_ose_dec(&inst, 1000).unwrap_err();
        assert!(matches!(err, Error::SizeLimit(_)), "{err}");
    }

    fn two_point_data_dim(dim: usize) -> Dataset {
        Dataset::new(vec![
            DataPoint { x: vec![1.0; dim], y: 1 },
            DataPoint { x: vec![-1.0; dim], y: 0 },
        ])
        .unwrap()
    }

    #[test]
    fn first_witness_follows_odometer_order() {
        // Two weights, one positive point: any (w0, w1) with w0 + w1 >= 0.5
        // works; enumeration order must pick (-1, 1)... wait: (-1, 1) sums
        // to 0, classified 0, an error. The first satisfying pair in
        // odometer order (w0 slow, w1 fast) is (0, 1).
        let doc = r#"{
            "input_dim": 2,
            "variables": [{"name": "h", "role": "dimension", "domain": [1]}],
            "layers": [{"kind": "dense", "input": "p", "output": "h", "bias": false}]
        }"#;
        let dataset =
            Dataset::new(vec![DataPoint { x: vec![1.0, 1.0], y: 1 }]).unwrap();
        let inst = instance(
            doc,
            dataset,
            WeightGrid::new(vec![-1.0, 0.0, 1.0]).unwrap(),
            Threshold::Unbounded,
            Threshold::Unbounded,
            0.0,
        );
        let DecAnswer::Yes { witness } = brute_force_ose_dec(&inst, DEFAULT_EVAL_CAP).unwrap()
        else {
            panic!("expected a witness");
        };
        assert_eq!(witness.weights[0][0].data, vec![0.0, 1.0]);
    }

    #[test]
    fn relaxing_thresholds_never_flips_yes_to_no() {
        // Two grids: one holds a perfect separator (w = 1), one does not, so
        // all three threshold axes get exercised somewhere in the lattice.
        let grids = [
            WeightGrid::new(vec![-1.0, 0.0, 1.0]).unwrap(),
            WeightGrid::new(vec![-1.0, 0.0]).unwrap(),
        ];
        let p_cuts = [Threshold::Bounded(0), Threshold::Bounded(1), Threshold::Unbounded];
        let i_cuts = [Threshold::Bounded(0), Threshold::Bounded(1), Threshold::Unbounded];
        let e_cuts = [0.0, 0.25, 0.5, 1.0];
        for grid in &grids {
            let mut answers = Vec::new();
            for (pi, p_cut) in p_cuts.iter().enumerate() {
                for (ii, i_cut) in i_cuts.iter().enumerate() {
                    for (ei, &e_cut) in e_cuts.iter().enumerate() {
                        let inst = instance(
                            ONE_WEIGHT_DOC,
                            two_point_data(),
                            grid.clone(),
                            *p_cut,
                            *i_cut,
                            e_cut,
                        );
                        let yes = brute_force_ose_dec(&inst, DEFAULT_EVAL_CAP).unwrap().is_yes();
                        answers.push(((pi, ii, ei), yes));
                    }
                }
            }
            for &((pi, ii, ei), yes) in &answers {
                for &((pj, ij, ej), yes_relaxed) in &answers {
                    if pj >= pi && ij >= ii && ej >= ei && yes {
                        assert!(
                            yes_relaxed,
                            "relaxing ({pi},{ii},{ei}) -> ({pj},{ij},{ej}) flipped yes to no"
                        );
                    }
                }
            }
            // The lattice is not all-yes and not all-no.
            assert!(answers.iter().any(|(_, y)| *y));
            assert!(answers.iter().any(|(_, y)| !*y));
        }
    }

    #[test]
    fn reduction_builds_the_expected_instance() {
        let (template, space) = template(ONE_WEIGHT_DOC);
        let data = two_point_data();
        let grid = WeightGrid::new(vec![-1.0, 1.0]).unwrap();
        let inst = reduce_nn_training(&template, &space, &data, &grid, 0.25).unwrap();
        assert_eq!(inst.k_p, Threshold::Unbounded);
        assert_eq!(inst.k_i, Threshold::Unbounded);
        assert_eq!(inst.k_e, 0.25);
        assert!(inst.thetas.is_empty());
        assert_eq!(inst.space.len(), 1);
        assert_eq!(inst.weight_grid, grid);
        assert_eq!(inst.dataset.points(), data.points());
    }

    #[test]
    fn reduction_rejects_multi_candidate_spaces() {
        let doc = r#"{
            "input_dim": 1,
            "variables": [{"name": "h", "role": "dimension", "domain": [1, 2]}],
            "layers": [{"kind": "dense", "input": "p", "output": "h", "bias": false}]
        }"#;
        let (template, space) = template(doc);
        let err = reduce_nn_training(
            &template,
            &space,
            &two_point_data(),
            &WeightGrid::default(),
            0.5,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn reduced_answer_matches_direct_grid_search() {
        let (template, space) = template(ONE_WEIGHT_DOC);
        let data = two_point_data();
        for levels in [vec![-1.0, 0.0], vec![-1.0, 0.0, 1.0], vec![-0.5, 0.25]] {
            for k in [0.0, 0.5, 1.0] {
                let grid = WeightGrid::new(levels.clone()).unwrap();
                let inst = reduce_nn_training(&template, &space, &data, &grid, k).unwrap();
                let reduced = brute_force_ose_dec(&inst, DEFAULT_EVAL_CAP).unwrap().is_yes();
                // The unreduced question, answered by hand: does any level,
                // used as the single weight, reach error rate <= k?
                let direct = grid.levels().iter().any(|&w| {
                    let errors = data
                        .points()
                        .iter()
                        .filter(|point| {
                            let class = u8::from(w * point.x[0] >= 0.5);
                            class != point.y
                        })
                        .count();
                    errors as f64 / data.len() as f64 <= k
                });
                assert_eq!(reduced, direct, "levels {levels:?}, k {k}");
            }
        }
    }

    const CHAIN_DOC: &str = r#"{
        "input_dim": 4,
        "variables": [{"name": "h", "role": "dimension", "domain": [2, 4, 8]}],
        "layers": [
            {"kind": "dense", "input": "p", "output": "h"},
            {"kind": "activation", "function": "tanh", "dim": "h"},
            {"kind": "dense", "input": "h", "output": "1"},
            {"kind": "activation", "function": "sigmoid", "dim": "1"}
        ]
    }"#;

    fn blobs(count: usize, dim: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Dataset::new(
            (0..count)
                .map(|_| {
                    let y = rng.random_range(0..2) as u8;
                    let center = if y == 1 { 1.5 } else { -1.5 };
                    DataPoint {
                        x: (0..dim).map(|_| center + rng.random_range(-0.5..0.5)).collect(),
                        y,
                    }
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn exhaustive_reference_matches_the_production_search_at_stride_one() {
        for master_seed in [3u64, 19, 71] {
            let (template, space) = template(CHAIN_DOC);
            let data = blobs(12, 4, master_seed);
            let thetas = vec![
                HyperParams::new(data.clone(), 0.2).unwrap(),
                HyperParams::new(data.clone(), 0.05).unwrap(),
            ];
            let (index, record) = exhaustive_opt(
                &template,
                &data,
                &space,
                &thetas,
                20,
                Loss::BoundedQuadratic,
                master_seed,
            )
            .unwrap();
            let options = ExtractOptions::new(1, 20, master_seed);
            let production = extract(&template, &data, &space, &thetas, &options).unwrap();
            assert_eq!(index, production.best.xi_index_in_sorted_order);
            assert_eq!(
                serde_json::to_string(&record).unwrap(),
                serde_json::to_string(&production.best).unwrap(),
                "seed {master_seed}"
            );
        }
    }

    #[test]
    fn exhaustive_reference_is_deterministic_and_handles_singletons() {
        let (template, space) = template(ONE_WEIGHT_DOC);
        let data = Dataset::new(vec![
            DataPoint { x: vec![1.0], y: 1 },
            DataPoint { x: vec![-1.0], y: 0 },
            DataPoint { x: vec![0.5], y: 1 },
        ])
        .unwrap();
        let thetas = vec![HyperParams::new(data.clone(), 0.1).unwrap()];
        let run = || {
            exhaustive_opt(&template, &data, &space, &thetas, 10, Loss::BoundedQuadratic, 5)
                .unwrap()
        };
        let (index, record) = run();
        assert_eq!(index, 0);
        let (again_index, again_record) = run();
        assert_eq!(index, again_index);
        assert_eq!(
            serde_json::to_string(&record).unwrap(),
            serde_json::to_string(&again_record).unwrap()
        );
    }

    #[test]
    fn shortest_path_matches_direct_argmin_on_random_spaces() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for round in 0..50 {
            let h_choices: Vec<u64> = {
                let mut v: Vec<u64> = (1..=12).collect();
                // Random nonempty ascending subset.
                v.retain(|_| rng.random_range(0..3) > 0);
                if v.is_empty() {
                    v.push(rng.random_range(1..6));
                }
                v
            };
            let j_choices: Vec<u64> = {
                let mut v: Vec<u64> = (1..=6).collect();
                v.retain(|_| rng.random_range(0..2) > 0);
                if v.is_empty() {
                    v.push(1);
                }
                v
            };
            let doc = format!(
                r#"{{
                    "input_dim": 3,
                    "variables": [
                        {{"name": "h", "role": "dimension", "domain": {h_choices:?}}},
                        {{"name": "j", "role": "dimension", "domain": {j_choices:?}}}
                    ],
                    "layers": [
                        {{"kind": "dense", "input": "p", "output": "h"}},
                        {{"kind": "dense", "input": "h", "output": "j"}},
                        {{"kind": "dense", "input": "j", "output": "1"}}
                    ]
                }}"#
            );
            let (template, space) = template(&doc);
            let result = equal_error_shortest_path(&template, &space).unwrap();

            let p_poly = param_size_poly(&template);
            let i_poly = surrogate_inference_poly(&template, &CensusModel::default());
            let direct = space
                .assignments
                .iter()
                .map(|a| {
                    p_poly.evaluate(a.lookup()).unwrap() + i_poly.evaluate(a.lookup()).unwrap()
                })
                .min()
                .unwrap();
            assert_eq!(result.cost, direct, "round {round}");
            assert_eq!(
                result.vertices,
                space.len() * 2 + 2,
                "two variables per chain, plus source and target"
            );
            assert_eq!(result.edges, space.len() * 3);
        }
    }

    #[test]
    fn shortest_path_singleton_returns_its_element() {
        let (template, space) = template(ONE_WEIGHT_DOC);
        let result = equal_error_shortest_path(&template, &space).unwrap();
        assert_eq!(result.assignment, space.assignments[0]);
        assert_eq!(result.vertices, 3);
        assert_eq!(result.edges, 2);
    }

    #[test]
    fn shortest_path_ties_go_to_the_first_assignment() {
        // j never affects the cost polynomials, so all assignments tie.
        let doc = r#"{
            "input_dim": 2,
            "variables": [
                {"name": "h", "role": "dimension", "domain": [2]},
                {"name": "j", "role": "other", "domain": [1, 2, 3]}
            ],
            "layers": [
                {"kind": "dense", "input": "p", "output": "h"},
                {"kind": "dense", "input": "h", "output": "1"}
            ]
        }"#;
        let (template, space) = template(doc);
        let result = equal_error_shortest_path(&template, &space).unwrap();
        assert_eq!(result.assignment, space.assignments[0]);
    }
}
