//! Backpropagation and shuffling SGD under an explicit step budget.
//!
//! Training here is deliberately plain: single-example gradient steps with a
//! fixed learning rate, walking the batch in a fresh random permutation each
//! epoch. The step budget and the learning rate are not tuning knobs but
//! functions of the assumed smoothness `L`, gradient bound `G`, initial
//! suboptimality, batch size, and target accuracy — so a search over many
//! candidates spends a comparable, principled effort on each.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::arch::Activation;
use crate::error::{Error, Result};
use crate::metrics::{surrogate_error, Dataset, Loss};
use crate::network::{apply_layer_traced, AttnTrace, ConcreteLayer, Network, WeightArray};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent seed from a master seed and two indices, so that
/// work items running concurrently draw from reproducible, well-separated
/// streams regardless of scheduling order.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master).wrapping_add(stream)).wrapping_add(index))
}

/// Per-candidate training configuration.
#[derive(Debug, Clone)]
pub struct HyperParams {
    /// The batch trained on; the surrogate error is measured on it too.
    pub batch: Dataset,
    /// Fixed learning rate.
    pub eta: f64,
    /// Seed of the per-epoch permutation stream.
    pub shuffle_seed: u64,
    /// Optional hard ceiling on steps, applied on top of the requested count.
    pub step_cap: Option<u64>,
}

impl HyperParams {
    pub fn new(batch: Dataset, eta: f64) -> Result<Self> {
        if !eta.is_finite() || eta <= 0.0 {
            return Err(Error::Precondition(format!(
                "learning rate must be positive and finite, got {eta}"
            )));
        }
        Ok(HyperParams { batch, eta, shuffle_seed: 0, step_cap: None })
    }

    pub fn with_shuffle_seed(mut self, seed: u64) -> Self {
        self.shuffle_seed = seed;
        self
    }

    pub fn with_step_cap(mut self, cap: u64) -> Self {
        self.step_cap = Some(cap);
        self
    }
}

/// What happened during one training run.
#[derive(Debug, Clone, Serialize)]
pub struct TrainTrace {
    pub steps_taken: u64,
    /// Surrogate error on the batch before any step.
    pub e_hat_initial: f64,
    /// Surrogate error after each epoch; a partial final epoch gets an entry.
    pub e_hat_per_epoch: Vec<f64>,
}

impl TrainTrace {
    /// Surrogate error at the end of training (initial value if no steps ran).
    pub fn final_e_hat(&self) -> f64 {
        self.e_hat_per_epoch.last().copied().unwrap_or(self.e_hat_initial)
    }
}

/// Loss gradients with the exact same array layout as [`Network::weights`].
pub type Gradients = Vec<Vec<WeightArray>>;

/// Output of one backpropagation pass.
#[derive(Debug, Clone)]
pub struct BackpropResult {
    pub y_hat: f64,
    pub loss: f64,
    pub grads: Gradients,
}

/// Backpropagate one example: compute the loss of `network` on `(x, y)` and
/// its gradient with respect to every stored weight.
pub fn backprop(network: &Network, x: &[f64], y: u8, loss: Loss) -> Result<BackpropResult> {
    if x.len() != network.input_dim() {
        return Err(Error::Precondition(format!(
            "input has {} entries, network expects {}",
            x.len(),
            network.input_dim()
        )));
    }
    let layers = network.concrete_layers();

    // Forward, keeping every layer input (the output chain) and the
    // attention intermediates.
    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    let mut traces: Vec<Option<AttnTrace>> = Vec::with_capacity(layers.len());
    let mut current = x.to_vec();
    for (layer, arrays) in layers.iter().zip(&network.weights) {
        let (out, trace) = apply_layer_traced(layer, arrays, &current);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "non-finite value produced during the forward pass".into(),
            ));
        }
        inputs.push(std::mem::replace(&mut current, out));
        traces.push(trace);
    }
    debug_assert_eq!(current.len(), 1);
    let y_hat = current[0];
    let loss_value = loss.value(y_hat, y)?;

    // Backward.
    let mut grads: Gradients = network
        .weights
        .iter()
        .map(|arrays| arrays.iter().map(|a| WeightArray::zeros(a.shape.clone())).collect())
        .collect();
    let mut delta = vec![loss.grad(y_hat, y)];
    for (li, layer) in layers.iter().enumerate().rev() {
        let input = &inputs[li];
        let arrays = &network.weights[li];
        let grad_arrays = &mut grads[li];
        delta = backward_layer(layer, arrays, grad_arrays, input, traces[li].as_ref(), &delta);
    }
    for arrays in &grads {
        for a in arrays {
            if a.data.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric("non-finite gradient".into()));
            }
        }
    }
    Ok(BackpropResult { y_hat, loss: loss_value, grads })
}

/// Gradient of one layer: fills `grad_arrays` and returns the gradient with
/// respect to the layer input.
fn backward_layer(
    layer: &ConcreteLayer,
    arrays: &[WeightArray],
    grad_arrays: &mut [WeightArray],
    input: &[f64],
    trace: Option<&AttnTrace>,
    delta: &[f64],
) -> Vec<f64> {
    match layer {
        ConcreteLayer::Dense { in_dim, out_dim, bias } => {
            let w = &arrays[0];
            for r in 0..*out_dim {
                for c in 0..*in_dim {
                    grad_arrays[0].data[r * in_dim + c] = delta[r] * input[c];
                }
            }
            if *bias {
                grad_arrays[1].data.copy_from_slice(delta);
            }
            (0..*in_dim)
                .map(|c| (0..*out_dim).map(|r| w.at(r, c) * delta[r]).sum())
                .collect()
        }
        ConcreteLayer::Activation { function, dim } => {
            // Recompute outputs from the cached inputs; cheaper than hauling
            // both vectors around.
            (0..*dim)
                .map(|i| {
                    let y = function.apply(input[i]);
                    let dydx = match function {
                        // The ReLU kink takes the zero branch at exactly 0.
                        Activation::Relu => {
                            if input[i] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        _ => function.derivative_from_output(y),
                    };
                    delta[i] * dydx
                })
                .collect()
        }
        ConcreteLayer::Softmax { dim } => {
            let mut out = input.to_vec();
            crate::network::softmax_in_place(&mut out);
            let dot: f64 = out.iter().zip(delta).map(|(o, d)| o * d).sum();
            (0..*dim).map(|i| out[i] * (delta[i] - dot)).collect()
        }
        ConcreteLayer::Scale { factor, .. } => delta.iter().map(|d| d * factor).collect(),
        ConcreteLayer::MatmulPair { rows, inner, cols } => {
            let w = &arrays[0];
            for k in 0..*inner {
                for c in 0..*cols {
                    let mut acc = 0.0;
                    for r in 0..*rows {
                        acc += input[r * inner + k] * delta[r * cols + c];
                    }
                    grad_arrays[0].data[k * cols + c] = acc;
                }
            }
            let mut dx = vec![0.0; rows * inner];
            for r in 0..*rows {
                for k in 0..*inner {
                    let mut acc = 0.0;
                    for c in 0..*cols {
                        acc += delta[r * cols + c] * w.at(k, c);
                    }
                    dx[r * inner + k] = acc;
                }
            }
            dx
        }
        ConcreteLayer::Attention { in_dim, hidden, score_scale } => {
            let h = *hidden;
            let t = trace.expect("attention trace cached during forward");
            // u = P v, delta is du (length h).
            let mut dv = vec![0.0; h];
            for j in 0..h {
                dv[j] = (0..h).map(|i| t.p[i * h + j] * delta[i]).sum();
            }
            // Row-wise softmax backward through the scaled scores.
            let mut dk = vec![0.0; h];
            let mut dq = vec![0.0; h];
            for i in 0..h {
                let row = &t.p[i * h..(i + 1) * h];
                // dP[i][j] = delta[i] * v[j]
                let dot: f64 = (0..h).map(|j| row[j] * delta[i] * t.v[j]).sum();
                for j in 0..h {
                    let ds = row[j] * (delta[i] * t.v[j] - dot) * score_scale;
                    dk[i] += ds * t.q[j];
                    dq[j] += ds * t.k[i];
                }
            }
            // Three projections: W* x + b*.
            let mut dx = vec![0.0; *in_dim];
            for (slot, dvec) in [(0usize, &dk), (2, &dq), (4, &dv)] {
                let w = &arrays[slot];
                for r in 0..h {
                    for c in 0..*in_dim {
                        grad_arrays[slot].data[r * in_dim + c] = dvec[r] * input[c];
                        dx[c] += w.at(r, c) * dvec[r];
                    }
                }
                grad_arrays[slot + 1].data.copy_from_slice(dvec);
            }
            dx
        }
    }
}

/// Train in place for `s` gradient steps (capped by the hyper-parameters),
/// shuffling the batch each epoch with a dedicated deterministic stream.
pub fn sgd_shuffling_train(
    network: &mut Network,
    theta: &HyperParams,
    s: u64,
) -> Result<TrainTrace> {
    let budget = theta.step_cap.map_or(s, |cap| s.min(cap));
    let e_hat_initial = surrogate_error(network, &theta.batch, Loss::BoundedQuadratic)?;
    let mut trace = TrainTrace { steps_taken: 0, e_hat_initial, e_hat_per_epoch: Vec::new() };
    if budget == 0 {
        return Ok(trace);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(theta.shuffle_seed);
    let mut order: Vec<usize> = (0..theta.batch.len()).collect();
    'epochs: loop {
        order.shuffle(&mut rng);
        for &idx in &order {
            let point = &theta.batch.points()[idx];
            let result = backprop(network, &point.x, point.y, Loss::BoundedQuadratic)
                .map_err(|e| match e {
                    // A numeric blowup mid-training is a divergence, not a
                    // malformed-input problem.
                    Error::Numeric(msg) => Error::TrainingDiverged(msg),
                    other => other,
                })?;
            for (arrays, grad_arrays) in network.weights.iter_mut().zip(&result.grads) {
                for (a, g) in arrays.iter_mut().zip(grad_arrays) {
                    for (w, d) in a.data.iter_mut().zip(&g.data) {
                        *w -= theta.eta * d;
                        if !w.is_finite() {
                            return Err(Error::TrainingDiverged(format!(
                                "weight left the finite range at step {}",
                                trace.steps_taken + 1
                            )));
                        }
                    }
                }
            }
            trace.steps_taken += 1;
            if trace.steps_taken == budget {
                break 'epochs;
            }
        }
        trace
            .e_hat_per_epoch
            .push(surrogate_error(network, &theta.batch, Loss::BoundedQuadratic)?);
    }
    // The final (possibly partial) epoch gets its measurement too.
    trace
        .e_hat_per_epoch
        .push(surrogate_error(network, &theta.batch, Loss::BoundedQuadratic)?);
    Ok(trace)
}

/// Read a finite float as the decimal number it prints as: `0.01` means
/// exactly `1/100`, not the binary value the float stores. Budget inputs
/// are decimal by convention, and honoring the digit string keeps floors
/// exact where it matters (`0.01^(3/2)` is exactly `0.001`).
fn decimal_rational(value: f64, name: &str) -> Result<BigRational> {
    if !value.is_finite() {
        return Err(Error::Precondition(format!("{name} must be finite, got {value}")));
    }
    let text = format!("{value}");
    let unsigned = text.strip_prefix('-').unwrap_or(&text);
    let (int_part, frac_part) = unsigned.split_once('.').unwrap_or((unsigned, ""));
    let digits = format!("{int_part}{frac_part}");
    let mut numer = BigInt::parse_bytes(digits.as_bytes(), 10)
        .ok_or_else(|| Error::Precondition(format!("{name} is not representable")))?;
    if text.starts_with('-') {
        numer = -numer;
    }
    let denom = BigInt::from(10u32).pow(frac_part.len() as u32);
    Ok(BigRational::new(numer, denom))
}

/// The step budget `floor(3 L G (F0 - F_inf) n / eps^(3/2))`, computed
/// exactly. Arguments are interpreted as the decimal numbers they print as
/// (see `decimal_rational`); the only irrational quantity is `eps^(3/2)`,
/// so the floor is found by integer search on `k^2 eps^3 <= Q^2` instead of
/// through floats.
pub fn step_budget(l: f64, g: f64, f0: f64, f_inf: f64, n: u64, eps: f64) -> Result<u64> {
    let l = decimal_rational(l, "smoothness L")?;
    let g = decimal_rational(g, "gradient bound G")?;
    let f0 = decimal_rational(f0, "starting loss F0")?;
    let f_inf = decimal_rational(f_inf, "loss infimum F_inf")?;
    let eps = decimal_rational(eps, "target accuracy eps")?;
    if !l.is_positive() || !g.is_positive() || !eps.is_positive() {
        return Err(Error::Precondition(
            "L, G, and eps must all be positive in the step budget".into(),
        ));
    }
    if f0 < f_inf {
        return Err(Error::Precondition(
            "the starting loss cannot undershoot the loss infimum".into(),
        ));
    }
    if n == 0 {
        return Err(Error::Precondition("batch size must be positive".into()));
    }
    let delta_f = f0 - f_inf;
    let q = l * g * delta_f * BigRational::from_integer(BigInt::from(3u32) * BigInt::from(n));
    if q.is_zero() {
        return Ok(0);
    }
    let q2 = &q * &q;
    let eps3 = &eps * &eps * &eps;
    // Largest k with k^2 * eps^3 <= Q^2, by binary search. An f64 estimate
    // brackets the answer; the comparisons themselves are exact.
    let estimate = {
        let qf = q.to_f64().unwrap_or(f64::MAX);
        let ef = eps.to_f64().unwrap_or(1.0);
        (qf / ef.powf(1.5)).min(u64::MAX as f64 / 4.0) as u64
    };
    let mut lo: u64 = 0;
    let mut hi: u64 = estimate.saturating_mul(2).saturating_add(16);
    let fits = |k: u64| {
        let kr = BigRational::from_integer(BigInt::from(k));
        &kr * &kr * &eps3 <= q2
    };
    while !fits(lo) {
        return Ok(0); // eps so large even one step exceeds the budget
    }
    while fits(hi) {
        hi = hi.checked_mul(2).ok_or_else(|| {
            Error::SizeLimit("step budget exceeds the representable range".into())
        })?;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// The fixed learning rate `sqrt(eps) / (L G)` that the step budget assumes.
pub fn fixed_lr(l: f64, g: f64, eps: f64) -> Result<f64> {
    for (v, name) in [(l, "L"), (g, "G"), (eps, "eps")] {
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::Precondition(format!(
                "{name} must be positive and finite, got {v}"
            )));
        }
    }
    let eta = eps.sqrt() / (l * g);
    if !eta.is_finite() || eta <= 0.0 {
        return Err(Error::Numeric(format!("learning rate {eta} is not usable")));
    }
    Ok(eta)
}

/// Empirical stand-ins for the smoothness constant and gradient bound.
#[derive(Debug, Clone, Serialize)]
pub struct SmoothnessEstimate {
    /// Largest observed `|grad_i - grad_j| / |loss_i - loss_j|`, or `None`
    /// when every sampled pair had indistinguishable losses.
    pub l_hat: Option<f64>,
    /// Largest observed per-example gradient norm.
    pub g_hat: f64,
    pub pairs_sampled: usize,
    /// Pairs that actually contributed to `l_hat`.
    pub pairs_used: usize,
}

/// Sample example pairs at the current weights and measure the ratio of
/// gradient distance to loss distance, plus the largest gradient norm.
/// Pairs whose losses differ by less than `1e-12` are degenerate for the
/// ratio and only contribute to the gradient bound.
pub fn estimate_smoothness(
    network: &Network,
    batch: &Dataset,
    loss: Loss,
    pairs: usize,
    seed: u64,
) -> Result<SmoothnessEstimate> {
    if pairs == 0 {
        return Err(Error::Precondition("need at least one pair to estimate".into()));
    }
    if batch.len() < 2 {
        return Err(Error::Precondition("need at least two examples to form pairs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut memo: std::collections::BTreeMap<usize, (f64, Vec<f64>)> = Default::default();
    let mut example = |idx: usize, net: &Network| -> Result<(f64, Vec<f64>)> {
        if let Some(hit) = memo.get(&idx) {
            return Ok(hit.clone());
        }
        let point = &batch.points()[idx];
        let result = backprop(net, &point.x, point.y, loss)?;
        let flat: Vec<f64> = result
            .grads
            .iter()
            .flat_map(|arrays| arrays.iter())
            .flat_map(|a| a.data.iter().copied())
            .collect();
        memo.insert(idx, (result.loss, flat.clone()));
        Ok((result.loss, flat))
    };

    let mut l_hat: Option<f64> = None;
    let mut g_hat: f64 = 0.0;
    let mut pairs_used = 0;
    for _ in 0..pairs {
        let i = rng.random_range(0..batch.len());
        let j = loop {
            let j = rng.random_range(0..batch.len());
            if j != i {
                break j;
            }
        };
        let (loss_i, grad_i) = example(i, network)?;
        let (loss_j, grad_j) = example(j, network)?;
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        g_hat = g_hat.max(norm(&grad_i)).max(norm(&grad_j));
        let loss_gap = (loss_i - loss_j).abs();
        if loss_gap < 1e-12 {
            continue;
        }
        let grad_gap: f64 = grad_i
            .iter()
            .zip(&grad_j)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let ratio = grad_gap / loss_gap;
        l_hat = Some(l_hat.map_or(ratio, |cur| cur.max(ratio)));
        pairs_used += 1;
    }
    Ok(SmoothnessEstimate { l_hat, g_hat, pairs_sampled: pairs, pairs_used })
}
