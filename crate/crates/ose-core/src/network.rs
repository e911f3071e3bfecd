//! Instantiated networks: concrete dimensions, weight storage, and the
//! forward pass.
//!
//! A [`Network`] is one point of the family: the template's layers unrolled
//! for a particular assignment, with every dimension evaluated to a `usize`
//! and every weight array allocated. Weights are plain row-major `f64`
//! buffers so tests can set them directly and the on-disk sidecar format is
//! exactly the in-memory layout.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{Activation, ArchTemplate, LayerKind, ParamAssignment};
use crate::error::{Error, Result};

/// How fresh weights are drawn at instantiation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Matrices uniform in `(-r, r)` with `r = 1/sqrt(fan_in)`; biases zero.
    UniformFanIn,
    /// Everything zero. Useful for tests and as a degenerate baseline.
    Zeros,
}

/// A dense row-major array of weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl WeightArray {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        WeightArray { shape, data: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Matrix element accessor for 2-d arrays.
    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[row * self.shape[1] + col]
    }
}

/// A layer with all dimensions resolved for one assignment.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum ConcreteLayer {
    Dense { in_dim: usize, out_dim: usize, bias: bool },
    Activation { function: Activation, dim: usize },
    Softmax { dim: usize },
    Scale { dim: usize, factor: f64 },
    MatmulPair { rows: usize, inner: usize, cols: usize },
    /// `score_scale` is `1/sqrt(hidden/heads)`, precomputed.
    Attention { in_dim: usize, hidden: usize, score_scale: f64 },
}

impl ConcreteLayer {
    pub(crate) fn out_dim(&self) -> usize {
        match self {
            ConcreteLayer::Dense { out_dim, .. } => *out_dim,
            ConcreteLayer::Activation { dim, .. }
            | ConcreteLayer::Softmax { dim }
            | ConcreteLayer::Scale { dim, .. } => *dim,
            ConcreteLayer::MatmulPair { rows, cols, .. } => rows * cols,
            ConcreteLayer::Attention { hidden, .. } => *hidden,
        }
    }

    fn in_dim(&self) -> usize {
        match self {
            ConcreteLayer::Dense { in_dim, .. } => *in_dim,
            ConcreteLayer::Activation { dim, .. }
            | ConcreteLayer::Softmax { dim }
            | ConcreteLayer::Scale { dim, .. } => *dim,
            ConcreteLayer::MatmulPair { rows, inner, .. } => rows * inner,
            ConcreteLayer::Attention { in_dim, .. } => *in_dim,
        }
    }
}

/// One instantiated architecture with its weights.
#[derive(Debug, Clone)]
pub struct Network {
    assignment: ParamAssignment,
    input_dim: usize,
    layers: Vec<ConcreteLayer>,
    /// Weight arrays per layer, in layer order; weightless layers hold an
    /// empty vector. Public so callers (and tests) can read or set weights.
    pub weights: Vec<Vec<WeightArray>>,
}

/// Numerically stable in-place softmax of a slice.
pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

impl Network {
    /// Resolve a template at `assignment` and allocate weights.
    ///
    /// The assignment must produce positive dimensions that chain correctly
    /// into a scalar output; anything else is a precondition error. `seed`
    /// fully determines the initial weights.
    pub fn instantiate(
        template: &ArchTemplate,
        assignment: &ParamAssignment,
        init: InitScheme,
        seed: u64,
    ) -> Result<Network> {
        let effective = template.effective_layers(assignment)?;
        let mut layers = Vec::with_capacity(effective.len());
        let mut weights = Vec::with_capacity(effective.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let eval = |poly: &crate::poly::PolyExpr| -> Result<usize> {
            let v = poly.evaluate(assignment.lookup()).map_err(|e| {
                Error::Precondition(format!("assignment `{assignment}` is invalid: {e}"))
            })?;
            if v == 0 {
                return Err(Error::Precondition(format!(
                    "dimension `{poly}` is zero under `{assignment}`"
                )));
            }
            usize::try_from(v).map_err(|_| {
                Error::Precondition(format!("dimension `{poly}` is too large under `{assignment}`"))
            })
        };

        let mut prev_out = usize::try_from(template.input_dim)
            .map_err(|_| Error::Schema("input dimension too large".into()))?;
        for layer in &effective {
            let concrete = match &layer.kind {
                LayerKind::Dense { input, output, bias } => ConcreteLayer::Dense {
                    in_dim: eval(input)?,
                    out_dim: eval(output)?,
                    bias: *bias,
                },
                LayerKind::Activation { function, dim } => ConcreteLayer::Activation {
                    function: *function,
                    dim: eval(dim)?,
                },
                LayerKind::Softmax { dim } => ConcreteLayer::Softmax { dim: eval(dim)? },
                LayerKind::Scale { dim, factor } => {
                    ConcreteLayer::Scale { dim: eval(dim)?, factor: *factor }
                }
                LayerKind::MatmulPair { rows, inner, cols } => ConcreteLayer::MatmulPair {
                    rows: eval(rows)?,
                    inner: eval(inner)?,
                    cols: eval(cols)?,
                },
                LayerKind::AttentionBlock { input, hidden, heads } => {
                    let h = eval(hidden)?;
                    let a = eval(heads)?;
                    ConcreteLayer::Attention {
                        in_dim: eval(input)?,
                        hidden: h,
                        score_scale: (a as f64 / h as f64).sqrt(),
                    }
                }
            };
            if concrete.in_dim() != prev_out {
                return Err(Error::Precondition(format!(
                    "assignment `{assignment}` breaks the layer chain: expected {} inputs, found {}",
                    concrete.in_dim(),
                    prev_out
                )));
            }
            prev_out = concrete.out_dim();

            let mut arrays = Vec::new();
            for shape_polys in layer.weight_shapes() {
                let shape: Vec<usize> =
                    shape_polys.iter().map(&eval).collect::<Result<_>>()?;
                let mut array = WeightArray::zeros(shape);
                if init == InitScheme::UniformFanIn && array.shape.len() == 2 {
                    let r = 1.0 / (array.shape[1] as f64).sqrt();
                    for w in &mut array.data {
                        *w = rng.random_range(-r..r);
                    }
                }
                arrays.push(array);
            }
            layers.push(concrete);
            weights.push(arrays);
        }
        if prev_out != 1 {
            return Err(Error::Precondition(format!(
                "assignment `{assignment}` yields output width {prev_out}, expected 1"
            )));
        }
        Ok(Network {
            assignment: assignment.clone(),
            input_dim: usize::try_from(template.input_dim).expect("checked above"),
            layers,
            weights,
        })
    }

    pub fn assignment(&self) -> &ParamAssignment {
        &self.assignment
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub(crate) fn concrete_layers(&self) -> &[ConcreteLayer] {
        &self.layers
    }

    /// Total number of stored weight scalars, counted from the allocated
    /// arrays themselves.
    pub fn weight_count(&self) -> u64 {
        self.weights
            .iter()
            .flat_map(|arrays| arrays.iter())
            .map(|a| a.data.len() as u64)
            .sum()
    }

    /// True if every stored weight is finite.
    pub fn weights_finite(&self) -> bool {
        self.weights
            .iter()
            .flat_map(|arrays| arrays.iter())
            .all(|a| a.data.iter().all(|w| w.is_finite()))
    }

    /// Run one input through the network and return the scalar output.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim {
            return Err(Error::Precondition(format!(
                "input has {} entries, network expects {}",
                x.len(),
                self.input_dim
            )));
        }
        let mut current = x.to_vec();
        for (layer, arrays) in self.layers.iter().zip(&self.weights) {
            current = apply_layer(layer, arrays, &current);
            if current.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(
                    "non-finite value produced during the forward pass".into(),
                ));
            }
        }
        debug_assert_eq!(current.len(), 1);
        Ok(current[0])
    }

    /// Binary decision: 1 iff the output is at least one half.
    pub fn classify(&self, x: &[f64]) -> Result<u8> {
        Ok(u8::from(self.forward(x)? >= 0.5))
    }
}

/// Intermediates of an attention layer that backpropagation needs beyond
/// the layer's input: the three projections and the softmaxed score rows.
#[derive(Debug, Clone)]
pub(crate) struct AttnTrace {
    pub k: Vec<f64>,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    /// Row-softmaxed scores, `hidden x hidden`, row-major.
    pub p: Vec<f64>,
}

/// Apply one layer, discarding intermediates.
pub(crate) fn apply_layer(layer: &ConcreteLayer, arrays: &[WeightArray], x: &[f64]) -> Vec<f64> {
    apply_layer_traced(layer, arrays, x).0
}

/// Apply one layer and surface the intermediates backpropagation needs.
/// This is the single implementation of the layer math; the plain forward
/// pass is a wrapper, so the two can never drift apart.
pub(crate) fn apply_layer_traced(
    layer: &ConcreteLayer,
    arrays: &[WeightArray],
    x: &[f64],
) -> (Vec<f64>, Option<AttnTrace>) {
    match layer {
        ConcreteLayer::Dense { in_dim, out_dim, bias } => {
            debug_assert_eq!(x.len(), *in_dim);
            let w = &arrays[0];
            let mut out = vec![0.0; *out_dim];
            for (r, o) in out.iter_mut().enumerate() {
                let row = &w.data[r * in_dim..(r + 1) * in_dim];
                *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
            }
            if *bias {
                for (o, b) in out.iter_mut().zip(&arrays[1].data) {
                    *o += b;
                }
            }
            (out, None)
        }
        ConcreteLayer::Activation { function, dim } => {
            debug_assert_eq!(x.len(), *dim);
            (x.iter().map(|&v| function.apply(v)).collect(), None)
        }
        ConcreteLayer::Softmax { dim } => {
            debug_assert_eq!(x.len(), *dim);
            let mut out = x.to_vec();
            softmax_in_place(&mut out);
            (out, None)
        }
        ConcreteLayer::Scale { dim, factor } => {
            debug_assert_eq!(x.len(), *dim);
            (x.iter().map(|&v| v * factor).collect(), None)
        }
        ConcreteLayer::MatmulPair { rows, inner, cols } => {
            debug_assert_eq!(x.len(), rows * inner);
            let w = &arrays[0];
            let mut out = vec![0.0; rows * cols];
            for r in 0..*rows {
                for c in 0..*cols {
                    let mut acc = 0.0;
                    for k in 0..*inner {
                        acc += x[r * inner + k] * w.at(k, c);
                    }
                    out[r * cols + c] = acc;
                }
            }
            (out, None)
        }
        ConcreteLayer::Attention { in_dim, hidden, score_scale } => {
            debug_assert_eq!(x.len(), *in_dim);
            let h = *hidden;
            let project = |w: &WeightArray, b: &WeightArray| -> Vec<f64> {
                (0..h)
                    .map(|r| {
                        let row = &w.data[r * in_dim..(r + 1) * in_dim];
                        row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b.data[r]
                    })
                    .collect()
            };
            let k = project(&arrays[0], &arrays[1]);
            let q = project(&arrays[2], &arrays[3]);
            let v = project(&arrays[4], &arrays[5]);
            // Scores k_i q_j, scaled, then softmaxed row by row.
            let mut p = vec![0.0; h * h];
            for i in 0..h {
                for j in 0..h {
                    p[i * h + j] = k[i] * q[j] * score_scale;
                }
                softmax_in_place(&mut p[i * h..(i + 1) * h]);
            }
            let out = (0..h)
                .map(|i| (0..h).map(|j| p[i * h + j] * v[j]).sum())
                .collect();
            (out, Some(AttnTrace { k, q, v, p }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::TemplateDoc;
    use approx::assert_abs_diff_eq;

    fn attention_net(h: u64, a: u64, seed: u64) -> Network {
        let doc = r#"{
            "input_dim": 3,
            "variables": [
                {"name": "H", "role": "dimension", "domain": [2, 4]},
                {"name": "A", "role": "divisor", "domain": [1, 2]},
                {"name": "J", "role": "dimension", "domain": [1]}
            ],
            "constraints": [{"kind": "divides", "divisor": "A", "multiple": "H"}],
            "layers": [
                {"kind": "attention-block", "input": "p", "hidden": "H", "heads": "A"},
                {"kind": "dense", "input": "H", "output": "J", "bias": true},
                {"kind": "activation", "function": "sigmoid", "dim": "J"}
            ]
        }"#;
        let (template, _) = TemplateDoc::from_json(doc).unwrap().build().unwrap();
        let assignment = ParamAssignment::new(vec![
            ("H".into(), h),
            ("A".into(), a),
            ("J".into(), 1),
        ])
        .unwrap();
        Network::instantiate(&template, &assignment, InitScheme::UniformFanIn, seed).unwrap()
    }

    #[test]
    fn zero_weights_output_exactly_one_half() {
        let mut net = attention_net(2, 1, 0);
        for arrays in &mut net.weights {
            for a in arrays {
                a.data.fill(0.0);
            }
        }
        assert_eq!(net.forward(&[0.3, -1.0, 2.5]).unwrap(), 0.5);
        assert_eq!(net.classify(&[0.3, -1.0, 2.5]).unwrap(), 1);
    }

    #[test]
    fn forward_matches_straight_line_composition() {
        // Hand-rolled reference for H=2, A=1, p=3, J=1 with fixed weights,
        // written as one unfactored expression chain.
        let mut net = attention_net(2, 1, 0);
        let wk = [0.1, -0.2, 0.3, 0.4, 0.5, -0.6];
        let bk = [0.01, -0.02];
        let wq = [-0.3, 0.2, 0.1, 0.6, -0.5, 0.4];
        let bq = [0.03, 0.04];
        let wv = [0.7, 0.1, -0.1, -0.2, 0.2, 0.3];
        let bv = [-0.05, 0.06];
        let wl = [1.5, -2.0];
        let bl = [0.25];
        net.weights[0][0].data.copy_from_slice(&wk);
        net.weights[0][1].data.copy_from_slice(&bk);
        net.weights[0][2].data.copy_from_slice(&wq);
        net.weights[0][3].data.copy_from_slice(&bq);
        net.weights[0][4].data.copy_from_slice(&wv);
        net.weights[0][5].data.copy_from_slice(&bv);
        net.weights[1][0].data.copy_from_slice(&wl);
        net.weights[1][1].data.copy_from_slice(&bl);

        let x = [0.9, -0.4, 0.2];
        let proj = |w: &[f64], b: &[f64], i: usize| {
            w[3 * i] * x[0] + w[3 * i + 1] * x[1] + w[3 * i + 2] * x[2] + b[i]
        };
        let (k0, k1) = (proj(&wk, &bk, 0), proj(&wk, &bk, 1));
        let (q0, q1) = (proj(&wq, &bq, 0), proj(&wq, &bq, 1));
        let (v0, v1) = (proj(&wv, &bv, 0), proj(&wv, &bv, 1));
        let alpha = (1.0f64 / 2.0).sqrt(); // 1/sqrt(H/A) with H=2, A=1
        let row = |ki: f64| {
            let (s0, s1) = (ki * q0 * alpha, ki * q1 * alpha);
            let (e0, e1) = (s0.exp(), s1.exp());
            (e0 / (e0 + e1), e1 / (e0 + e1))
        };
        let (p00, p01) = row(k0);
        let (p10, p11) = row(k1);
        let u0 = p00 * v0 + p01 * v1;
        let u1 = p10 * v0 + p11 * v1;
        let z = wl[0] * u0 + wl[1] * u1 + bl[0];
        let expected = 1.0 / (1.0 + (-z).exp());

        assert_abs_diff_eq!(net.forward(&x).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn instantiation_is_seed_deterministic() {
        let a = attention_net(4, 2, 42);
        let b = attention_net(4, 2, 42);
        let c = attention_net(4, 2, 43);
        assert_eq!(a.weights, b.weights);
        assert_ne!(a.weights, c.weights);
    }

    #[test]
    fn dense_shapes_follow_out_by_in_convention() {
        let doc = r#"{
            "input_dim": 3,
            "variables": [{"name": "h", "role": "dimension", "domain": [2]}],
            "layers": [
                {"kind": "dense", "input": "p", "output": "h"},
                {"kind": "dense", "input": "h", "output": "1"},
                {"kind": "activation", "function": "sigmoid", "dim": "1"}
            ]
        }"#;
        let (template, space) = TemplateDoc::from_json(doc).unwrap().build().unwrap();
        let net = Network::instantiate(
            &template,
            &space.assignments[0],
            InitScheme::Zeros,
            0,
        )
        .unwrap();
        assert_eq!(net.weights[0][0].shape, vec![2, 3]);
        assert_eq!(net.weights[0].len(), 2, "bias defaults to true");
        assert_eq!(net.weights[0][1].shape, vec![2]);
        assert_eq!(net.weight_count(), (6 + 2) + (2 + 1));
    }

    #[test]
    fn chain_break_is_a_precondition_error() {
        let doc = r#"{
            "input_dim": 3,
            "variables": [{"name": "h", "role": "dimension", "domain": [2]}],
            "layers": [
                {"kind": "dense", "input": "p", "output": "h"},
                {"kind": "dense", "input": "h + 1", "output": "1"}
            ]
        }"#;
        let (template, space) = TemplateDoc::from_json(doc).unwrap().build().unwrap();
        let err = Network::instantiate(&template, &space.assignments[0], InitScheme::Zeros, 0)
            .unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let net = attention_net(2, 1, 0);
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn forward_flags_non_finite_values() {
        let mut net = attention_net(2, 1, 0);
        net.weights[1][0].data[0] = 1e308;
        net.weights[0][4].data.fill(1e120); // huge values feed the overflow
        net.weights[0][5].data.fill(1e120);
        let err = net.forward(&[1e3, 1e3, 1e3]).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn matmul_pair_multiplies_reshaped_input() {
        let doc = r#"{
            "input_dim": 4,
            "variables": [{"name": "h", "role": "dimension", "domain": [2]}],
            "layers": [
                {"kind": "matmul-pair", "rows": "h", "inner": "2", "cols": "1"},
                {"kind": "dense", "input": "h", "output": "1"},
                {"kind": "activation", "function": "sigmoid", "dim": "1"}
            ]
        }"#;
        let (template, space) = TemplateDoc::from_json(doc).unwrap().build().unwrap();
        let mut net =
            Network::instantiate(&template, &space.assignments[0], InitScheme::Zeros, 0).unwrap();
        // x reshaped to [[1,2],[3,4]]; weight [[10],[100]] -> [210, 340].
        net.weights[0][0].data.copy_from_slice(&[10.0, 100.0]);
        net.weights[1][0].data.copy_from_slice(&[1.0, 1.0]);
        let out = net.forward(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let expected = 1.0 / (1.0 + (-(210.0f64 + 340.0)).exp());
        assert_abs_diff_eq!(out, expected, epsilon = 1e-12);
    }
}
