//! Architecture templates and their induced search spaces.
//!
//! A template is a fixed sequence of layer descriptions whose dimensions are
//! polynomial expressions over a small set of integer architectural
//! variables. Assigning a concrete value to every variable yields one
//! architecture in the family; the cross product of the variable domains,
//! filtered by arithmetic constraints, is the search space the extractor
//! walks.
//!
//! Templates may optionally be split into three segments A | B | C, where the
//! middle segment is repeated `n` times under the control of a depth
//! variable. That structure is what the dominance checks in [`crate::abnc`]
//! reason about.

use std::collections::BTreeSet;
use std::fmt;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::poly::PolyExpr;

/// Reserved name for the (fixed) input dimension inside dimension
/// expressions; it is substituted by its numeric value when a document is
/// built, so it can never be an architectural variable.
pub const INPUT_DIM_NAME: &str = "p";

/// What a variable controls. Roles are advisory metadata: `Dimension`
/// variables are the ones expected to appear in cost polynomials, `Depth`
/// counts middle-segment repetitions, and `Divisor` variables (like a head
/// count) shape the computation without changing weight shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarRole {
    Dimension,
    Depth,
    Divisor,
    Other,
}

/// One architectural variable together with its finite domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchParamVar {
    pub name: String,
    pub role: VarRole,
    /// Candidate values, strictly ascending and positive.
    pub domain: Vec<u64>,
}

impl ArchParamVar {
    fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Schema("variable with empty name".into()));
        }
        if self.name == INPUT_DIM_NAME {
            return Err(Error::Schema(format!(
                "variable name `{INPUT_DIM_NAME}` is reserved for the input dimension"
            )));
        }
        if self.domain.is_empty() {
            return Err(Error::Schema(format!("variable `{}` has an empty domain", self.name)));
        }
        if self.domain.iter().any(|&v| v == 0) {
            return Err(Error::Schema(format!(
                "variable `{}` has a zero in its domain; values must be positive",
                self.name
            )));
        }
        if !self.domain.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Schema(format!(
                "domain of variable `{}` must be strictly ascending",
                self.name
            )));
        }
        Ok(())
    }
}

/// A concrete value for every architectural variable, in declaration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamAssignment {
    pairs: Vec<(String, u64)>,
}

impl ParamAssignment {
    pub fn new(pairs: Vec<(String, u64)>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (name, _) in &pairs {
            if !seen.insert(name.clone()) {
                return Err(Error::Schema(format!("duplicate variable `{name}` in assignment")));
            }
        }
        Ok(ParamAssignment { pairs })
    }

    pub fn get(&self, name: &str) -> Option<u64> {
        self.pairs.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    pub fn pairs(&self) -> &[(String, u64)] {
        &self.pairs
    }

    /// Values in declaration order; lexicographic comparison of these keys is
    /// the deterministic tie-breaker used throughout the crate.
    pub fn values_key(&self) -> Vec<u64> {
        self.pairs.iter().map(|&(_, v)| v).collect()
    }

    /// Lookup closure in the shape [`PolyExpr::evaluate`] expects.
    pub fn lookup(&self) -> impl Fn(&str) -> Option<u64> + '_ {
        move |name| self.get(name)
    }
}

impl fmt::Display for ParamAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (n, v)) in self.pairs.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{n}={v}")?;
        }
        Ok(())
    }
}

impl Serialize for ParamAssignment {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.pairs.len()))?;
        for (n, v) in &self.pairs {
            map.serialize_entry(n, v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for ParamAssignment {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = ParamAssignment;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map of variable names to positive integers")
            }
            fn visit_map<A: MapAccess<'de>>(
                self,
                mut access: A,
            ) -> std::result::Result<Self::Value, A::Error> {
                let mut pairs = Vec::new();
                while let Some((k, v)) = access.next_entry::<String, u64>()? {
                    pairs.push((k, v));
                }
                ParamAssignment::new(pairs).map_err(serde::de::Error::custom)
            }
        }
        deserializer.deserialize_map(V)
    }
}

/// Arithmetic side conditions on assignments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Constraint {
    /// `divisor` divides `multiple` exactly.
    Divides { divisor: String, multiple: String },
    /// Two variables carry the same value.
    Equals { left: String, right: String },
}

impl Constraint {
    pub fn names(&self) -> [&str; 2] {
        match self {
            Constraint::Divides { divisor, multiple } => [divisor, multiple],
            Constraint::Equals { left, right } => [left, right],
        }
    }

    pub fn holds(&self, a: &ParamAssignment) -> Result<bool> {
        let value = |name: &str| {
            a.get(name)
                .ok_or_else(|| Error::Schema(format!("constraint references unknown variable `{name}`")))
        };
        Ok(match self {
            Constraint::Divides { divisor, multiple } => value(multiple)? % value(divisor)? == 0,
            Constraint::Equals { left, right } => value(left)? == value(right)?,
        })
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::Divides { divisor, multiple } => write!(f, "{divisor} | {multiple}"),
            Constraint::Equals { left, right } => write!(f, "{left} = {right}"),
        }
    }
}

/// The enumerated search space: variables, constraints, and every admissible
/// assignment in ascending lexicographic order of values.
#[derive(Debug, Clone, Serialize)]
pub struct SearchSpace {
    pub variables: Vec<ArchParamVar>,
    pub constraints: Vec<Constraint>,
    pub assignments: Vec<ParamAssignment>,
}

impl SearchSpace {
    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn var_names(&self) -> Vec<String> {
        self.variables.iter().map(|v| v.name.clone()).collect()
    }
}

pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

/// Materialize the admissible assignments of a variable grid.
///
/// The full cross product is counted before anything is allocated; if it
/// exceeds `cap` the call fails rather than grinding through an enumeration
/// nobody can use. Assignments come out in ascending lexicographic order of
/// the variable values (last variable fastest). If the constraints filter out
/// everything, the space is unusable and that is an error too.
pub fn enumerate_space(
    variables: Vec<ArchParamVar>,
    constraints: Vec<Constraint>,
    cap: u64,
) -> Result<SearchSpace> {
    if variables.is_empty() {
        return Err(Error::Schema("search space declares no variables".into()));
    }
    let mut names = BTreeSet::new();
    for v in &variables {
        v.validate()?;
        if !names.insert(v.name.clone()) {
            return Err(Error::Schema(format!("duplicate variable `{}`", v.name)));
        }
    }
    for c in &constraints {
        for n in c.names() {
            if !names.contains(n) {
                return Err(Error::Schema(format!(
                    "constraint `{c}` references unknown variable `{n}`"
                )));
            }
        }
    }
    let mut product: u128 = 1;
    for v in &variables {
        product = product.saturating_mul(v.domain.len() as u128);
    }
    if product > u128::from(cap) {
        return Err(Error::SizeLimit(format!(
            "search space has {product} raw assignments, more than the cap of {cap}"
        )));
    }

    let mut assignments = Vec::new();
    let mut indices = vec![0usize; variables.len()];
    'outer: loop {
        let pairs: Vec<(String, u64)> = variables
            .iter()
            .zip(&indices)
            .map(|(v, &i)| (v.name.clone(), v.domain[i]))
            .collect();
        let assignment = ParamAssignment::new(pairs)?;
        let mut ok = true;
        for c in &constraints {
            if !c.holds(&assignment)? {
                ok = false;
                break;
            }
        }
        if ok {
            assignments.push(assignment);
        }
        // Odometer: last variable fastest, so output order is ascending
        // lexicographic in declaration order.
        for pos in (0..variables.len()).rev() {
            indices[pos] += 1;
            if indices[pos] < variables[pos].domain.len() {
                continue 'outer;
            }
            indices[pos] = 0;
        }
        break;
    }
    if assignments.is_empty() {
        return Err(Error::InvalidSpace(
            "constraints eliminate every assignment in the space".into(),
        ));
    }
    Ok(SearchSpace { variables, constraints, assignments })
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

/// Element-wise nonlinearities available to templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Sigmoid,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation *output* `y = f(x)`.
    /// For ReLU the kink at 0 takes the 0 branch.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// One layer of a template, with symbolic dimensions.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    /// Affine map `W x (+ b)` from `input` to `output` features.
    Dense { input: PolyExpr, output: PolyExpr, bias: bool },
    /// Element-wise nonlinearity over `dim` entries.
    Activation { function: Activation, dim: PolyExpr },
    /// Softmax over the whole vector of `dim` entries.
    Softmax { dim: PolyExpr },
    /// Multiply every entry by a fixed constant.
    Scale { dim: PolyExpr, factor: f64 },
    /// Reshape the input to `rows x inner` and multiply by a learned
    /// `inner x cols` matrix, flattening the result.
    MatmulPair { rows: PolyExpr, inner: PolyExpr, cols: PolyExpr },
    /// Single-query self-attention head bank: three affine projections of the
    /// input into `hidden` features, a scaled score matrix, a row softmax,
    /// and a value mixdown. `heads` only sets the score scaling.
    AttentionBlock { input: PolyExpr, hidden: PolyExpr, heads: PolyExpr },
}

/// A template layer. Today this is just the kind; the wrapper keeps room for
/// per-layer metadata without touching every call site.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTemplate {
    pub kind: LayerKind,
}

impl LayerTemplate {
    pub fn new(kind: LayerKind) -> Self {
        LayerTemplate { kind }
    }

    /// Symbolic number of inputs the layer consumes.
    pub fn in_dim(&self) -> PolyExpr {
        match &self.kind {
            LayerKind::Dense { input, .. } => input.clone(),
            LayerKind::Activation { dim, .. }
            | LayerKind::Softmax { dim }
            | LayerKind::Scale { dim, .. } => dim.clone(),
            LayerKind::MatmulPair { rows, inner, .. } => rows.mul(inner),
            LayerKind::AttentionBlock { input, .. } => input.clone(),
        }
    }

    /// Symbolic number of outputs the layer produces.
    pub fn out_dim(&self) -> PolyExpr {
        match &self.kind {
            LayerKind::Dense { output, .. } => output.clone(),
            LayerKind::Activation { dim, .. }
            | LayerKind::Softmax { dim }
            | LayerKind::Scale { dim, .. } => dim.clone(),
            LayerKind::MatmulPair { rows, cols, .. } => rows.mul(cols),
            LayerKind::AttentionBlock { hidden, .. } => hidden.clone(),
        }
    }

    /// Shapes of the layer's weight arrays, outermost dimension first.
    /// Matrices are `out x in`; biases are vectors.
    pub fn weight_shapes(&self) -> Vec<Vec<PolyExpr>> {
        match &self.kind {
            LayerKind::Dense { input, output, bias } => {
                let mut shapes = vec![vec![output.clone(), input.clone()]];
                if *bias {
                    shapes.push(vec![output.clone()]);
                }
                shapes
            }
            LayerKind::Activation { .. } | LayerKind::Softmax { .. } | LayerKind::Scale { .. } => {
                Vec::new()
            }
            LayerKind::MatmulPair { inner, cols, .. } => vec![vec![inner.clone(), cols.clone()]],
            LayerKind::AttentionBlock { input, hidden, .. } => vec![
                vec![hidden.clone(), input.clone()],
                vec![hidden.clone()],
                vec![hidden.clone(), input.clone()],
                vec![hidden.clone()],
                vec![hidden.clone(), input.clone()],
                vec![hidden.clone()],
            ],
        }
    }

    pub fn has_bias(&self) -> bool {
        match &self.kind {
            LayerKind::Dense { bias, .. } => *bias,
            LayerKind::AttentionBlock { .. } => true,
            _ => false,
        }
    }
}

/// Segment structure A | B^n | C over the layer list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segments {
    /// Number of prefix layers.
    pub a_len: usize,
    /// Number of layers in the repeated middle block.
    pub b_len: usize,
    /// Number of suffix layers.
    pub c_len: usize,
    /// Variable holding the repetition count `n`.
    pub depth_var: String,
}

/// A parametric architecture: declared variables, fixed input width, layer
/// stack, and optional repeated-middle segmentation. The output width of
/// every admissible instantiation must be exactly 1 (binary classification by
/// thresholding), which is checked per assignment during validation and
/// instantiation.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchTemplate {
    /// Variable names in declaration order. This order is the term-order
    /// precedence of every polynomial derived from the template and the
    /// tie-break order for assignments.
    pub variables: Vec<String>,
    pub input_dim: u64,
    pub layers: Vec<LayerTemplate>,
    pub segments: Option<Segments>,
}

impl ArchTemplate {
    pub fn new(
        variables: Vec<String>,
        input_dim: u64,
        layers: Vec<LayerTemplate>,
        segments: Option<Segments>,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Schema("input dimension must be positive".into()));
        }
        if layers.is_empty() {
            return Err(Error::Schema("template has no layers".into()));
        }
        let mut seen = BTreeSet::new();
        for v in &variables {
            if v == INPUT_DIM_NAME {
                return Err(Error::Schema(format!(
                    "variable name `{INPUT_DIM_NAME}` is reserved for the input dimension"
                )));
            }
            if !seen.insert(v.clone()) {
                return Err(Error::Schema(format!("duplicate variable `{v}`")));
            }
        }
        if let Some(seg) = &segments {
            if seg.a_len == 0 || seg.b_len == 0 || seg.c_len == 0 {
                return Err(Error::Schema(
                    "each of the A, B, C segments needs at least one layer".into(),
                ));
            }
            let total = seg
                .a_len
                .checked_add(seg.b_len)
                .and_then(|x| x.checked_add(seg.c_len));
            if total != Some(layers.len()) {
                return Err(Error::Schema(format!(
                    "segment lengths {}+{}+{} do not cover the {} layers",
                    seg.a_len,
                    seg.b_len,
                    seg.c_len,
                    layers.len()
                )));
            }
            if !variables.contains(&seg.depth_var) {
                return Err(Error::Schema(format!(
                    "depth variable `{}` is not declared",
                    seg.depth_var
                )));
            }
        }
        // Every variable mentioned by a dimension expression must be declared.
        for layer in &layers {
            for poly in [layer.in_dim(), layer.out_dim()] {
                for v in poly.vars() {
                    if !variables.contains(v) {
                        return Err(Error::Schema(format!(
                            "layer dimension mentions undeclared variable `{v}`"
                        )));
                    }
                }
            }
        }
        Ok(ArchTemplate { variables, input_dim, layers, segments })
    }

    /// The A, B, C layer slices when the template is segmented.
    pub fn segment_slices(&self) -> Option<(&[LayerTemplate], &[LayerTemplate], &[LayerTemplate])> {
        let seg = self.segments.as_ref()?;
        let a_end = seg.a_len;
        let b_end = seg.a_len + seg.b_len;
        Some((&self.layers[..a_end], &self.layers[a_end..b_end], &self.layers[b_end..]))
    }

    /// Repetition count of the middle segment under `assignment` (1 when the
    /// template is unsegmented).
    pub fn depth(&self, assignment: &ParamAssignment) -> Result<u64> {
        match &self.segments {
            None => Ok(1),
            Some(seg) => assignment.get(&seg.depth_var).ok_or_else(|| {
                Error::Schema(format!("assignment is missing depth variable `{}`", seg.depth_var))
            }),
        }
    }

    /// The concrete layer sequence for one assignment: A, then B repeated
    /// `n` times, then C. Unsegmented templates return their layers as-is.
    pub fn effective_layers(&self, assignment: &ParamAssignment) -> Result<Vec<&LayerTemplate>> {
        match self.segment_slices() {
            None => Ok(self.layers.iter().collect()),
            Some((a, b, c)) => {
                let n = self.depth(assignment)?;
                let mut out: Vec<&LayerTemplate> =
                    Vec::with_capacity(a.len() + b.len() * n as usize + c.len());
                out.extend(a);
                for _ in 0..n {
                    out.extend(b);
                }
                out.extend(c);
                Ok(out)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// One problem found while validating a space against a template.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationIssue {
    /// Index into `space.assignments`, or `None` for template-level issues.
    pub assignment_index: Option<usize>,
    pub message: String,
}

/// Outcome of [`validate_search_space`]: well-posed means no issues at all.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub well_posed: bool,
    pub issues: Vec<ValidationIssue>,
}

/// Check that every assignment of the space yields a structurally sound
/// network: positive integer dimensions, consecutive layers that agree on
/// width, input width matching the template, scalar output, constraints
/// satisfied, and values drawn from the declared domains.
///
/// Structural mismatches between template and space (different variable
/// sets) are hard errors; per-assignment problems are collected as issues.
pub fn validate_search_space(
    template: &ArchTemplate,
    space: &SearchSpace,
) -> Result<ValidationReport> {
    if space.var_names() != template.variables {
        return Err(Error::Schema(format!(
            "space variables [{}] do not match template variables [{}]",
            space.var_names().join(", "),
            template.variables.join(", ")
        )));
    }
    if space.is_empty() {
        return Err(Error::InvalidSpace("space has no assignments".into()));
    }

    let mut issues = Vec::new();
    for (idx, assignment) in space.assignments.iter().enumerate() {
        let mut note = |message: String| {
            issues.push(ValidationIssue { assignment_index: Some(idx), message });
        };
        for (var, value) in assignment.pairs() {
            match space.variables.iter().find(|v| &v.name == var) {
                None => note(format!("assignment sets undeclared variable `{var}`")),
                Some(decl) if !decl.domain.contains(value) => {
                    note(format!("value {value} of `{var}` is outside its domain"))
                }
                _ => {}
            }
        }
        for c in &space.constraints {
            match c.holds(assignment) {
                Ok(true) => {}
                Ok(false) => note(format!("constraint `{c}` fails")),
                Err(e) => note(e.to_string()),
            }
        }
        let layers = match template.effective_layers(assignment) {
            Ok(l) => l,
            Err(e) => {
                note(e.to_string());
                continue;
            }
        };
        let mut prev_out = template.input_dim;
        let mut broken = false;
        for (li, layer) in layers.iter().enumerate() {
            let dims = [layer.in_dim(), layer.out_dim()];
            let mut vals = [0u64; 2];
            for (slot, poly) in vals.iter_mut().zip(&dims) {
                match poly.evaluate(assignment.lookup()) {
                    Ok(0) => {
                        note(format!("layer {li}: dimension `{poly}` evaluates to zero"));
                        broken = true;
                    }
                    Ok(v) => *slot = v,
                    Err(e) => {
                        note(format!("layer {li}: {e}"));
                        broken = true;
                    }
                }
            }
            if broken {
                break;
            }
            if vals[0] != prev_out {
                note(format!(
                    "layer {li} expects {} inputs but receives {prev_out}",
                    vals[0]
                ));
                broken = true;
                break;
            }
            prev_out = vals[1];
        }
        if !broken && prev_out != 1 {
            note(format!("network output width is {prev_out}, expected 1"));
        }
    }
    Ok(ValidationReport { well_posed: issues.is_empty(), issues })
}

// ---------------------------------------------------------------------------
// JSON document form
// ---------------------------------------------------------------------------

/// Serde form of a layer: dimensions are expression strings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerDoc {
    Dense {
        input: String,
        output: String,
        #[serde(default = "default_true")]
        bias: bool,
    },
    Activation {
        function: Activation,
        dim: String,
    },
    Softmax {
        dim: String,
    },
    Scale {
        dim: String,
        factor: f64,
    },
    MatmulPair {
        rows: String,
        inner: String,
        cols: String,
    },
    AttentionBlock {
        input: String,
        hidden: String,
        heads: String,
    },
}

fn default_true() -> bool {
    true
}

/// Serde form of a template plus its variable grid. This is the on-disk
/// JSON format; [`TemplateDoc::build`] turns it into the checked runtime
/// types. Dimension expressions may mention declared variables and the
/// reserved input-dimension name `p`, which is replaced by `input_dim`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateDoc {
    pub input_dim: u64,
    pub variables: Vec<ArchParamVar>,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
    pub layers: Vec<LayerDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<SegmentsDoc>,
    /// Cap on the raw cross-product size of the variable grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enumeration_cap: Option<u64>,
}

/// Serde form of [`Segments`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentsDoc {
    pub a: usize,
    pub b: usize,
    pub c: usize,
    pub depth_var: String,
}

impl TemplateDoc {
    pub fn from_json(src: &str) -> Result<Self> {
        Ok(serde_json::from_str(src)?)
    }

    /// Parse every dimension expression, substitute the input dimension, and
    /// enumerate the search space.
    pub fn build(&self) -> Result<(ArchTemplate, SearchSpace)> {
        let mut names: Vec<String> = self.variables.iter().map(|v| v.name.clone()).collect();
        // Expressions may also mention the input dimension by name.
        let mut expr_context = names.clone();
        expr_context.push(INPUT_DIM_NAME.to_string());
        let dim = |src: &str| -> Result<PolyExpr> {
            let parsed = PolyExpr::parse(src, &expr_context)?;
            Ok(parsed.substitute(INPUT_DIM_NAME, self.input_dim))
        };

        let mut layers = Vec::with_capacity(self.layers.len());
        for doc in &self.layers {
            let kind = match doc {
                LayerDoc::Dense { input, output, bias } => LayerKind::Dense {
                    input: dim(input)?,
                    output: dim(output)?,
                    bias: *bias,
                },
                LayerDoc::Activation { function, dim: d } => LayerKind::Activation {
                    function: *function,
                    dim: dim(d)?,
                },
                LayerDoc::Softmax { dim: d } => LayerKind::Softmax { dim: dim(d)? },
                LayerDoc::Scale { dim: d, factor } => {
                    if !factor.is_finite() {
                        return Err(Error::Schema("scale factor must be finite".into()));
                    }
                    LayerKind::Scale { dim: dim(d)?, factor: *factor }
                }
                LayerDoc::MatmulPair { rows, inner, cols } => LayerKind::MatmulPair {
                    rows: dim(rows)?,
                    inner: dim(inner)?,
                    cols: dim(cols)?,
                },
                LayerDoc::AttentionBlock { input, hidden, heads } => LayerKind::AttentionBlock {
                    input: dim(input)?,
                    hidden: dim(hidden)?,
                    heads: dim(heads)?,
                },
            };
            layers.push(LayerTemplate::new(kind));
        }

        let segments = self.segments.as_ref().map(|s| Segments {
            a_len: s.a,
            b_len: s.b,
            c_len: s.c,
            depth_var: s.depth_var.clone(),
        });
        let template =
            ArchTemplate::new(std::mem::take(&mut names), self.input_dim, layers, segments)?;
        let cap = self.enumeration_cap.unwrap_or(DEFAULT_ENUMERATION_CAP);
        let space = enumerate_space(self.variables.clone(), self.constraints.clone(), cap)?;
        Ok((template, space))
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const ATTENTION_DOC: &str = r#"{
        "input_dim": 16,
        "variables": [
            {"name": "H", "role": "dimension", "domain": [4, 8, 16]},
            {"name": "A", "role": "divisor", "domain": [1, 2, 4]},
            {"name": "J", "role": "dimension", "domain": [1]}
        ],
        "constraints": [
            {"kind": "divides", "divisor": "A", "multiple": "H"}
        ],
        "layers": [
            {"kind": "attention-block", "input": "p", "hidden": "H", "heads": "A"},
            {"kind": "dense", "input": "H", "output": "J", "bias": true},
            {"kind": "activation", "function": "sigmoid", "dim": "J"}
        ]
    }"#;

    fn var(name: &str, domain: &[u64]) -> ArchParamVar {
        ArchParamVar { name: name.into(), role: VarRole::Dimension, domain: domain.to_vec() }
    }

    #[test]
    fn enumeration_is_ascending_lexicographic() {
        let space = enumerate_space(
            vec![var("H", &[2, 4]), var("A", &[1, 2])],
            vec![Constraint::Divides { divisor: "A".into(), multiple: "H".into() }],
            1000,
        )
        .unwrap();
        let got: Vec<Vec<u64>> = space.assignments.iter().map(|a| a.values_key()).collect();
        assert_eq!(got, vec![vec![2, 1], vec![2, 2], vec![4, 1], vec![4, 2]]);
    }

    #[test]
    fn constraints_filter_assignments() {
        let space = enumerate_space(
            vec![var("H", &[2, 3, 4]), var("A", &[2])],
            vec![Constraint::Divides { divisor: "A".into(), multiple: "H".into() }],
            1000,
        )
        .unwrap();
        let got: Vec<Vec<u64>> = space.assignments.iter().map(|a| a.values_key()).collect();
        assert_eq!(got, vec![vec![2, 2], vec![4, 2]]);
    }

    #[test]
    fn empty_space_is_an_error() {
        let err = enumerate_space(
            vec![var("H", &[2]), var("A", &[3])],
            vec![Constraint::Divides { divisor: "A".into(), multiple: "H".into() }],
            1000,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidSpace(_)));
    }

    #[test]
    fn cross_product_cap_is_enforced_before_enumeration() {
        let big: Vec<u64> = (1..=1001).collect();
        let err = enumerate_space(
            vec![var("H", &big), var("A", &big)],
            vec![],
            1_000_000,
        )
        .unwrap_err();
        assert!(matches!(err, Error::SizeLimit(_)));
    }

    #[test]
    fn domains_must_be_ascending_and_positive() {
        assert!(enumerate_space(vec![var("H", &[4, 2])], vec![], 10).is_err());
        assert!(enumerate_space(vec![var("H", &[0, 2])], vec![], 10).is_err());
        assert!(enumerate_space(vec![var("H", &[])], vec![], 10).is_err());
        assert!(enumerate_space(
            vec![var("H", &[2]), var("H", &[2])],
            vec![],
            10
        )
        .is_err());
    }

    #[test]
    fn assignment_round_trips_through_json_in_order() {
        let a = ParamAssignment::new(vec![("H".into(), 8), ("A".into(), 2), ("J".into(), 1)])
            .unwrap();
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(json, r#"{"H":8,"A":2,"J":1}"#);
        let back: ParamAssignment = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn attention_doc_builds_and_validates() {
        let doc = TemplateDoc::from_json(ATTENTION_DOC).unwrap();
        let (template, space) = doc.build().unwrap();
        assert_eq!(space.len(), 9);
        assert_eq!(template.variables, vec!["H", "A", "J"]);
        let report = validate_search_space(&template, &space).unwrap();
        assert!(report.well_posed, "{:?}", report.issues);
    }

    #[test]
    fn input_dim_is_substituted_into_expressions() {
        let doc = TemplateDoc::from_json(ATTENTION_DOC).unwrap();
        let (template, _) = doc.build().unwrap();
        // Attention projections are H x 16 after substituting p = 16.
        let shapes = template.layers[0].weight_shapes();
        let assignment =
            ParamAssignment::new(vec![("H".into(), 4), ("A".into(), 1), ("J".into(), 1)]).unwrap();
        let dims: Vec<u64> = shapes[0]
            .iter()
            .map(|d| d.evaluate(assignment.lookup()).unwrap())
            .collect();
        assert_eq!(dims, vec![4, 16]);
    }

    #[test]
    fn chain_mismatch_is_reported() {
        let doc = r#"{
            "input_dim": 4,
            "variables": [{"name": "H", "role": "dimension", "domain": [3]}],
            "layers": [
                {"kind": "dense", "input": "p", "output": "H"},
                {"kind": "dense", "input": "H + 1", "output": "1"}
            ]
        }"#;
        let (template, space) = TemplateDoc::from_json(doc).unwrap().build().unwrap();
        let report = validate_search_space(&template, &space).unwrap();
        assert!(!report.well_posed);
        assert!(report.issues[0].message.contains("expects 4 inputs but receives 3"));
    }

    #[test]
    fn non_scalar_output_is_reported() {
        let doc = r#"{
            "input_dim": 4,
            "variables": [{"name": "H", "role": "dimension", "domain": [3]}],
            "layers": [{"kind": "dense", "input": "p", "output": "H"}]
        }"#;
        let (template, space) = TemplateDoc::from_json(doc).unwrap().build().unwrap();
        let report = validate_search_space(&template, &space).unwrap();
        assert!(!report.well_posed);
        assert!(report.issues[0].message.contains("output width is 3"));
    }

    #[test]
    fn reserved_input_name_cannot_be_declared() {
        let doc = r#"{
            "input_dim": 4,
            "variables": [{"name": "p", "role": "dimension", "domain": [3]}],
            "layers": [{"kind": "dense", "input": "p", "output": "1"}]
        }"#;
        let err = TemplateDoc::from_json(doc).unwrap().build().unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn unknown_variable_in_expression_is_a_schema_error() {
        let doc = r#"{
            "input_dim": 4,
            "variables": [{"name": "H", "role": "dimension", "domain": [3]}],
            "layers": [{"kind": "dense", "input": "p", "output": "Q"}]
        }"#;
        let err = TemplateDoc::from_json(doc).unwrap().build().unwrap_err();
        assert!(err.to_string().contains("unknown variable `Q`"));
    }

    #[test]
    fn segments_unroll_the_middle_block() {
        let doc = r#"{
            "input_dim": 4,
            "variables": [
                {"name": "h", "role": "dimension", "domain": [5]},
                {"name": "n", "role": "depth", "domain": [1, 2, 3]}
            ],
            "layers": [
                {"kind": "dense", "input": "p", "output": "h"},
                {"kind": "dense", "input": "h", "output": "h"},
                {"kind": "activation", "function": "relu", "dim": "h"},
                {"kind": "dense", "input": "h", "output": "1"},
                {"kind": "activation", "function": "sigmoid", "dim": "1"}
            ],
            "segments": {"a": 1, "b": 2, "c": 2, "depth_var": "n"}
        }"#;
        let (template, space) = TemplateDoc::from_json(doc).unwrap().build().unwrap();
        let report = validate_search_space(&template, &space).unwrap();
        assert!(report.well_posed, "{:?}", report.issues);
        let a3 = &space.assignments[2];
        assert_eq!(template.depth(a3).unwrap(), 3);
        assert_eq!(template.effective_layers(a3).unwrap().len(), 1 + 2 * 3 + 2);
        let (a, b, c) = template.segment_slices().unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (1, 2, 2));
    }

    #[test]
    fn segment_lengths_must_cover_layers() {
        let doc = r#"{
            "input_dim": 4,
            "variables": [
                {"name": "h", "role": "dimension", "domain": [5]},
                {"name": "n", "role": "depth", "domain": [1]}
            ],
            "layers": [
                {"kind": "dense", "input": "p", "output": "h"},
                {"kind": "dense", "input": "h", "output": "1"}
            ],
            "segments": {"a": 1, "b": 1, "c": 1, "depth_var": "n"}
        }"#;
        let err = TemplateDoc::from_json(doc).unwrap().build().unwrap_err();
        assert!(err.to_string().contains("do not cover"));
    }

    #[test]
    fn matmul_pair_dims_multiply() {
        let layer = LayerTemplate::new(LayerKind::MatmulPair {
            rows: PolyExpr::var("H"),
            inner: PolyExpr::var("H"),
            cols: PolyExpr::constant(3),
        });
        let lookup = |v: &str| (v == "H").then_some(4);
        assert_eq!(layer.in_dim().evaluate(lookup).unwrap(), 16);
        assert_eq!(layer.out_dim().evaluate(lookup).unwrap(), 12);
        assert!(!layer.has_bias());
    }
}
