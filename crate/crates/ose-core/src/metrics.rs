//! The four quantities attached to every candidate architecture.
//!
//! * `p` — parameter size: how many weight scalars the network stores.
//! * `i_hat` — surrogate inference cost: additions + multiplications +
//!   length-weighted "other" scalar operations (exp, div, comparisons, ...),
//!   counted for one forward pass.
//! * `e_hat` — surrogate error: mean loss over a training batch.
//! * `e` — exact misclassification rate over a dataset, kept as an integer
//!   ratio so repeated comparisons never accumulate float noise.
//!
//! `p` and `i_hat` are each computed twice, deliberately: once symbolically
//! from the template (polynomials over the architectural variables) and once
//! numerically from an instantiated network (counting allocated scalars and
//! concrete loop extents). [`compute_metrics`] insists the two agree.

use serde::{Deserialize, Serialize};

use crate::arch::{ArchTemplate, LayerKind, LayerTemplate, ParamAssignment};
use crate::error::{Error, Result};
use crate::network::{ConcreteLayer, Network};
use crate::poly::PolyExpr;

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

/// One labelled example.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub x: Vec<f64>,
    /// Binary label, 0 or 1.
    pub y: u8,
}

/// A non-empty set of labelled examples with a uniform feature width.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<DataPoint>,
}

impl Dataset {
    pub fn new(points: Vec<DataPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Format("dataset has no rows".into()));
        }
        let dim = points[0].x.len();
        if dim == 0 {
            return Err(Error::Format("dataset rows have no features".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if p.x.len() != dim {
                return Err(Error::Format(format!(
                    "row {i} has {} features, expected {dim}",
                    p.x.len()
                )));
            }
            if p.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("row {i} contains a non-finite feature")));
            }
            if p.y > 1 {
                return Err(Error::Format(format!(
                    "row {i} has label {}, expected 0 or 1",
                    p.y
                )));
            }
        }
        Ok(Dataset { points })
    }

    pub fn points(&self) -> &[DataPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false // enforced non-empty at construction
    }

    pub fn dim(&self) -> usize {
        self.points[0].x.len()
    }

    /// Deterministic sample of `k` distinct rows (all of them if `k` is at
    /// least the dataset size), in draw order. Used to carve training
    /// batches out of a dataset.
    pub fn subsample(&self, k: usize, seed: u64) -> Dataset {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        if k >= self.points.len() {
            return self.clone();
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut indices: Vec<usize> = (0..self.points.len()).collect();
        indices.shuffle(&mut rng);
        indices.truncate(k);
        Dataset { points: indices.into_iter().map(|i| self.points[i].clone()).collect() }
    }
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Smooth per-example losses mapping into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    /// `(y_hat - y)^2`, bounded on `[0, 1]` for outputs in the unit interval.
    BoundedQuadratic,
}

impl Loss {
    /// Evaluate the loss, enforcing the `[0, 1]` contract at runtime.
    pub fn value(self, y_hat: f64, y: u8) -> Result<f64> {
        let v = match self {
            Loss::BoundedQuadratic => {
                let d = y_hat - f64::from(y);
                d * d
            }
        };
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(Error::LossContract(format!(
                "loss of prediction {y_hat} against label {y} is {v}, outside [0, 1]"
            )));
        }
        Ok(v)
    }

    /// Derivative of the loss with respect to the prediction.
    pub fn grad(self, y_hat: f64, y: u8) -> f64 {
        match self {
            Loss::BoundedQuadratic => 2.0 * (y_hat - f64::from(y)),
        }
    }
}

// ---------------------------------------------------------------------------
// Operation census
// ---------------------------------------------------------------------------

/// A bundle of same-shaped scalar operations that are neither additions nor
/// multiplications: `count` operations, each touching `length` scalars.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OtherOp {
    pub label: String,
    pub length: PolyExpr,
    pub count: PolyExpr,
}

/// Symbolic operation counts for one forward pass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpCensus {
    pub additions: PolyExpr,
    pub multiplications: PolyExpr,
    pub others: Vec<OtherOp>,
}

impl OpCensus {
    fn empty() -> Self {
        OpCensus {
            additions: PolyExpr::zero(),
            multiplications: PolyExpr::zero(),
            others: Vec::new(),
        }
    }

    fn accumulate(&mut self, other: OpCensus) {
        self.additions = self.additions.add(&other.additions);
        self.multiplications = self.multiplications.add(&other.multiplications);
        self.others.extend(other.others);
    }

    /// Multiply every count by `factor` (used to fold the repeated middle
    /// segment into a single symbolic term).
    fn scaled(mut self, factor: &PolyExpr) -> OpCensus {
        self.additions = self.additions.mul(factor);
        self.multiplications = self.multiplications.mul(factor);
        for o in &mut self.others {
            o.count = o.count.mul(factor);
        }
        self
    }

    /// Anchor the polynomials' variable precedence to `vars`.
    fn anchored<S: AsRef<str>>(mut self, vars: &[S]) -> OpCensus {
        let anchor = PolyExpr::zero_with_vars(vars);
        self.additions = anchor.add(&self.additions);
        self.multiplications = anchor.add(&self.multiplications);
        for o in &mut self.others {
            o.length = anchor.add(&o.length);
            o.count = anchor.add(&o.count);
        }
        self
    }

    /// Total surrogate cost: additions + multiplications + the
    /// length-weighted other operations (scaled by the precision constant).
    pub fn inference_poly(&self, model: &CensusModel) -> PolyExpr {
        let mut total = self.additions.add(&self.multiplications);
        for o in &self.others {
            total = total.add(&o.length.mul(&o.count).scale_int(model.precision_b as i64));
        }
        total
    }
}

/// Cost accounting rules. `precision_b` is the constant weight applied to
/// "other" operations; additions and multiplications always cost 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CensusModel {
    pub precision_b: u64,
}

impl Default for CensusModel {
    fn default() -> Self {
        CensusModel { precision_b: 1 }
    }
}

/// Census of a single dense map, shared by several layer kinds. With a bias
/// the add count equals `in*out` exactly (accumulation plus the bias adds);
/// without one it loses the `out` bias additions.
fn dense_census(input: &PolyExpr, output: &PolyExpr, bias: bool) -> OpCensus {
    let prod = input.mul(output);
    OpCensus {
        additions: if bias { prod.clone() } else { prod.sub(output) },
        multiplications: prod,
        others: Vec::new(),
    }
}

/// A matrix product `(a x b)(b x c)` counted as `abc` multiply and `abc`
/// accumulate operations.
fn matmul_census(a: &PolyExpr, b: &PolyExpr, c: &PolyExpr) -> OpCensus {
    let abc = a.mul(b).mul(c);
    OpCensus { additions: abc.clone(), multiplications: abc, others: Vec::new() }
}

/// A softmax over `length` entries applied `count` times: `length - 1`
/// additions per application plus an exp and a divide pass.
fn softmax_census(length: &PolyExpr, count: &PolyExpr) -> OpCensus {
    OpCensus {
        additions: length.sub(&PolyExpr::one()).mul(count),
        multiplications: PolyExpr::zero(),
        others: vec![
            OtherOp { label: "exp".into(), length: length.clone(), count: count.clone() },
            OtherOp { label: "div".into(), length: length.clone(), count: count.clone() },
        ],
    }
}

fn layer_census(layer: &LayerTemplate) -> OpCensus {
    match &layer.kind {
        LayerKind::Dense { input, output, bias } => dense_census(input, output, *bias),
        LayerKind::Activation { function, dim } => OpCensus {
            additions: PolyExpr::zero(),
            multiplications: PolyExpr::zero(),
            others: vec![OtherOp {
                label: format!("{function:?}").to_lowercase(),
                length: dim.clone(),
                count: PolyExpr::one(),
            }],
        },
        LayerKind::Softmax { dim } => softmax_census(dim, &PolyExpr::one()),
        LayerKind::Scale { dim, .. } => OpCensus {
            additions: PolyExpr::zero(),
            multiplications: PolyExpr::zero(),
            others: vec![OtherOp {
                label: "scale".into(),
                length: dim.clone(),
                count: PolyExpr::one(),
            }],
        },
        LayerKind::MatmulPair { rows, inner, cols } => matmul_census(rows, inner, cols),
        LayerKind::AttentionBlock { input, hidden, .. } => {
            // Three projections, the score product, its scaling, a softmax
            // per score row, and the value mixdown.
            let one = PolyExpr::one();
            let mut census = OpCensus::empty();
            for _ in 0..3 {
                census.accumulate(dense_census(input, hidden, true));
            }
            census.accumulate(matmul_census(hidden, &one, hidden));
            census.accumulate(OpCensus {
                additions: PolyExpr::zero(),
                multiplications: PolyExpr::zero(),
                others: vec![OtherOp {
                    label: "scale".into(),
                    length: hidden.mul(hidden),
                    count: one.clone(),
                }],
            });
            census.accumulate(softmax_census(hidden, hidden));
            census.accumulate(matmul_census(hidden, hidden, &one));
            census
        }
    }
}

fn census_of_layers(layers: &[LayerTemplate]) -> OpCensus {
    let mut acc = OpCensus::empty();
    for l in layers {
        acc.accumulate(layer_census(l));
    }
    acc
}

fn params_of_layers(layers: &[LayerTemplate]) -> PolyExpr {
    let mut acc = PolyExpr::zero();
    for layer in layers {
        for shape in layer.weight_shapes() {
            let mut prod = PolyExpr::one();
            for d in &shape {
                prod = prod.mul(d);
            }
            acc = acc.add(&prod);
        }
    }
    acc
}

/// Symbolic operation census of a whole template. For segmented templates
/// the middle block is counted once and multiplied by the depth variable.
pub fn census(template: &ArchTemplate) -> OpCensus {
    let census = match template.segment_slices() {
        None => census_of_layers(&template.layers),
        Some((a, b, c)) => {
            let depth = PolyExpr::var(
                &template.segments.as_ref().expect("segmented").depth_var,
            );
            let mut acc = census_of_layers(a);
            acc.accumulate(census_of_layers(b).scaled(&depth));
            acc.accumulate(census_of_layers(c));
            acc
        }
    };
    census.anchored(&template.variables)
}

/// Symbolic sizes of a segmented template taken segment by segment: the
/// parameter and inference polynomials of the head, of one repetition of the
/// middle block (no depth multiplier), and of the tail.
#[derive(Debug, Clone)]
pub struct SegmentPolys {
    pub params_head: PolyExpr,
    pub params_block: PolyExpr,
    pub params_tail: PolyExpr,
    pub inference_head: PolyExpr,
    pub inference_block: PolyExpr,
    pub inference_tail: PolyExpr,
}

pub fn segment_polys(template: &ArchTemplate, model: &CensusModel) -> Result<SegmentPolys> {
    let (a, b, c) = template.segment_slices().ok_or_else(|| {
        Error::Schema("the template declares no repeated middle block".into())
    })?;
    Ok(SegmentPolys {
        params_head: params_of_layers(a),
        params_block: params_of_layers(b),
        params_tail: params_of_layers(c),
        inference_head: census_of_layers(a).inference_poly(model),
        inference_block: census_of_layers(b).inference_poly(model),
        inference_tail: census_of_layers(c).inference_poly(model),
    })
}

/// Symbolic surrogate inference cost.
pub fn surrogate_inference_poly(template: &ArchTemplate, model: &CensusModel) -> PolyExpr {
    census(template).inference_poly(model)
}

/// Symbolic parameter count: the sum over layers of the product of each
/// weight array's dimensions, with the middle segment multiplied by depth.
pub fn param_size_poly(template: &ArchTemplate) -> PolyExpr {
    let poly = match template.segment_slices() {
        None => params_of_layers(&template.layers),
        Some((a, b, c)) => {
            let depth = PolyExpr::var(
                &template.segments.as_ref().expect("segmented").depth_var,
            );
            params_of_layers(a)
                .add(&params_of_layers(b).mul(&depth))
                .add(&params_of_layers(c))
        }
    };
    PolyExpr::zero_with_vars(&template.variables).add(&poly)
}

/// Concrete operation counts for one instantiated network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CensusCounts {
    pub additions: u64,
    pub multiplications: u64,
    /// Length-weighted cost of the non-add non-mul operations, already
    /// scaled by the precision constant.
    pub other_cost: u64,
}

impl CensusCounts {
    pub fn total(&self) -> Result<u64> {
        self.additions
            .checked_add(self.multiplications)
            .and_then(|t| t.checked_add(self.other_cost))
            .ok_or_else(|| Error::SizeLimit("operation count exceeds u64".into()))
    }
}

/// Count operations from the resolved layer dimensions, independently of the
/// symbolic census.
pub fn census_counts(network: &Network, model: &CensusModel) -> Result<CensusCounts> {
    let mut adds: u64 = 0;
    let mut muls: u64 = 0;
    let mut other: u64 = 0;
    let b = model.precision_b;
    let bump = |acc: &mut u64, v: u64| -> Result<()> {
        *acc = acc
            .checked_add(v)
            .ok_or_else(|| Error::SizeLimit("operation count exceeds u64".into()))?;
        Ok(())
    };
    for layer in network.concrete_layers() {
        match *layer {
            ConcreteLayer::Dense { in_dim, out_dim, bias } => {
                let prod = (in_dim as u64) * (out_dim as u64);
                bump(&mut muls, prod)?;
                bump(&mut adds, if bias { prod } else { prod - out_dim as u64 })?;
            }
            ConcreteLayer::Activation { dim, .. } => bump(&mut other, b * dim as u64)?,
            ConcreteLayer::Softmax { dim } => {
                bump(&mut adds, dim as u64 - 1)?;
                bump(&mut other, b * 2 * dim as u64)?;
            }
            ConcreteLayer::Scale { dim, .. } => bump(&mut other, b * dim as u64)?,
            ConcreteLayer::MatmulPair { rows, inner, cols } => {
                let prod = (rows as u64) * (inner as u64) * (cols as u64);
                bump(&mut muls, prod)?;
                bump(&mut adds, prod)?;
            }
            ConcreteLayer::Attention { in_dim, hidden, .. } => {
                let p = in_dim as u64;
                let h = hidden as u64;
                bump(&mut muls, 3 * p * h + 2 * h * h)?;
                bump(&mut adds, 3 * p * h + 3 * h * h - h)?;
                bump(&mut other, b * 3 * h * h)?;
            }
        }
    }
    Ok(CensusCounts { additions: adds, multiplications: muls, other_cost: other })
}

/// Parameter size of an instantiated network: the number of weight scalars
/// it actually stores.
pub fn param_size(network: &Network) -> u64 {
    network.weight_count()
}

/// Concrete surrogate inference cost.
pub fn surrogate_inference(network: &Network, model: &CensusModel) -> Result<u64> {
    census_counts(network, model)?.total()
}

// ---------------------------------------------------------------------------
// Error measures
// ---------------------------------------------------------------------------

/// Exact misclassification rate as an integer ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ErrorRate {
    pub errors: u64,
    pub total: u64,
}

impl ErrorRate {
    pub fn value(self) -> f64 {
        self.errors as f64 / self.total as f64
    }

    /// Exact comparison by cross-multiplication; no rounding involved.
    pub fn cmp_exact(self, other: ErrorRate) -> std::cmp::Ordering {
        let lhs = u128::from(self.errors) * u128::from(other.total);
        let rhs = u128::from(other.errors) * u128::from(self.total);
        lhs.cmp(&rhs)
    }
}

/// Fraction of `dataset` the network misclassifies. Outputs of exactly one
/// half count as class 1.
pub fn error_rate(network: &Network, dataset: &Dataset) -> Result<ErrorRate> {
    let mut errors = 0u64;
    for point in dataset.points() {
        if network.classify(&point.x)? != point.y {
            errors += 1;
        }
    }
    Ok(ErrorRate { errors, total: dataset.len() as u64 })
}

/// Mean loss of the network over a batch.
pub fn surrogate_error(network: &Network, batch: &Dataset, loss: Loss) -> Result<f64> {
    let mut sum = 0.0;
    for point in batch.points() {
        sum += loss.value(network.forward(&point.x)?, point.y)?;
    }
    Ok(sum / batch.len() as f64)
}

// ---------------------------------------------------------------------------
// Combined report
// ---------------------------------------------------------------------------

/// Everything measured about one candidate, plus the symbolic cost
/// polynomials it was checked against.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub p: u64,
    pub i_hat: u64,
    pub e_hat: f64,
    /// `e_errors / e_total` as a decimal, for readers.
    pub e: f64,
    pub e_errors: u64,
    pub e_total: u64,
    pub p_poly: PolyExpr,
    pub i_poly: PolyExpr,
}

impl MetricsReport {
    pub fn error_rate(&self) -> ErrorRate {
        ErrorRate { errors: self.e_errors, total: self.e_total }
    }
}

/// Measure one network every way at once and cross-check the numeric counts
/// against the polynomial evaluations. `e` is measured on `dataset`,
/// `e_hat` on `batch`.
pub fn compute_metrics(
    template: &ArchTemplate,
    network: &Network,
    dataset: &Dataset,
    batch: &Dataset,
    loss: Loss,
    model: &CensusModel,
) -> Result<MetricsReport> {
    let assignment: &ParamAssignment = network.assignment();
    let p = param_size(network);
    let i_hat = surrogate_inference(network, model)?;
    let p_poly = param_size_poly(template);
    let i_poly = surrogate_inference_poly(template, model);
    let p_sym = p_poly.evaluate(assignment.lookup())?;
    if p_sym != p {
        return Err(Error::Consistency(format!(
            "parameter size mismatch at `{assignment}`: counted {p}, polynomial gives {p_sym}"
        )));
    }
    let i_sym = i_poly.evaluate(assignment.lookup())?;
    if i_sym != i_hat {
        return Err(Error::Consistency(format!(
            "inference cost mismatch at `{assignment}`: counted {i_hat}, polynomial gives {i_sym}"
        )));
    }
    let rate = error_rate(network, dataset)?;
    let e_hat = surrogate_error(network, batch, loss)?;
    Ok(MetricsReport {
        p,
        i_hat,
        e_hat,
        e: rate.value(),
        e_errors: rate.errors,
        e_total: rate.total,
        p_poly,
        i_poly,
    })
}

// ---------------------------------------------------------------------------
