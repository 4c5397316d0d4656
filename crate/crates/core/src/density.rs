//! Source and sink densities, their CDFs, and the transport problem that
//! pairs them.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{find_root_monotone, integrate_with_breaks, Bracket, Tolerances};

/// Number of points (endpoints included) on which positivity is checked.
pub const POSITIVITY_GRID: usize = 1025;

/// Allowed deviation of a normalized density's mass from one.
pub const NORMALIZED_MASS_TOL: f64 = 1e-9;

/// Allowed deviation of either mass from one before a problem is rejected.
pub const BALANCE_TOL: f64 = 1e-6;

fn default_level() -> f64 {
    1.0
}

/// Functional family of a density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DensityKind {
    /// Constant `level` on the interval.
    Uniform {
        #[serde(default = "default_level")]
        level: f64,
    },
    /// `Σ c_i x^i`, coefficients in increasing degree.
    Polynomial { coefficients: Vec<f64> },
    /// Piecewise-linear through `(nodes[i], values[i])`; nodes span the interval.
    Tabulated { nodes: Vec<f64>, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySpec {
    pub lo: f64,
    pub hi: f64,
    #[serde(rename = "density")]
    pub kind: DensityKind,
}

impl DensitySpec {
    pub fn uniform(lo: f64, hi: f64) -> Self {
        Self { lo, hi, kind: DensityKind::Uniform { level: 1.0 } }
    }

    pub fn polynomial(lo: f64, hi: f64, coefficients: Vec<f64>) -> Self {
        Self { lo, hi, kind: DensityKind::Polynomial { coefficients } }
    }

    pub fn tabulated(nodes: Vec<f64>, values: Vec<f64>) -> Self {
        let lo = nodes.first().copied().unwrap_or(f64::NAN);
        let hi = nodes.last().copied().unwrap_or(f64::NAN);
        Self { lo, hi, kind: DensityKind::Tabulated { nodes, values } }
    }
}

/// A validated positive density on a closed interval.
///
/// Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    spec: DensitySpec,
    mass: f64,
    normalized: bool,
    /// Tabulated only: `∫ f` from `lo` up to each node.
    node_mass: Vec<f64>,
}

impl Density {
    pub fn spec(&self) -> &DensitySpec {
        &self.spec
    }

    pub fn lo(&self) -> f64 {
        self.spec.lo
    }

    pub fn hi(&self) -> f64 {
        self.spec.hi
    }

    pub fn len(&self) -> f64 {
        self.spec.hi - self.spec.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.spec.lo + self.spec.hi)
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.spec.lo && x <= self.spec.hi
    }

    /// Interior knots where the density is not smooth.
    pub fn breakpoints(&self) -> &[f64] {
        match &self.spec.kind {
            DensityKind::Tabulated { nodes, .. } => &nodes[1..nodes.len() - 1],
            _ => &[],
        }
    }

    /// Density value; zero outside the interval.
    pub fn value(&self, x: f64) -> f64 {
        if !self.contains(x) {
            return 0.0;
        }
        match &self.spec.kind {
            DensityKind::Uniform { level } => *level,
            DensityKind::Polynomial { coefficients } => horner(coefficients, x),
            DensityKind::Tabulated { nodes, values } => {
                let i = cell_index(nodes, x);
                let t = (x - nodes[i]) / (nodes[i + 1] - nodes[i]);
                values[i] + t * (values[i + 1] - values[i])
            }
        }
    }

    /// `∫_lo^x f` without any normalization.
    fn cumulative(&self, x: f64) -> f64 {
        let lo = self.spec.lo;
        match &self.spec.kind {
            DensityKind::Uniform { level } => level * (x - lo),
            DensityKind::Polynomial { coefficients } => {
                antiderivative(coefficients, x) - antiderivative(coefficients, lo)
            }
            DensityKind::Tabulated { nodes, values } => {
                let i = cell_index(nodes, x);
                let dx = x - nodes[i];
                let slope = (values[i + 1] - values[i]) / (nodes[i + 1] - nodes[i]);
                self.node_mass[i] + values[i] * dx + 0.5 * slope * dx * dx
            }
        }
    }

    /// Cumulative distribution `F(x) = ∫_lo^x f`, in `[0, 1]`.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        if !self.normalized {
            return Err(self.not_normalized());
        }
        if !self.contains(x) {
            return Err(Error::Domain(format!("x = {x} outside [{}, {}]", self.spec.lo, self.spec.hi)));
        }
        if x == self.spec.hi {
            return Ok(1.0);
        }
        Ok(self.cumulative(x).clamp(0.0, 1.0))
    }

    /// Quantile: `x` with `F(x) = p`.
    pub fn inverse_cdf(&self, p: f64, tol: &Tolerances) -> Result<f64> {
        if !self.normalized {
            return Err(self.not_normalized());
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
        }
        let (lo, hi) = (self.spec.lo, self.spec.hi);
        if p == 0.0 {
            return Ok(lo);
        }
        if p == 1.0 {
            return Ok(hi);
        }
        if let DensityKind::Uniform { .. } = self.spec.kind {
            return Ok((lo + p * (hi - lo)).clamp(lo, hi));
        }
        let bracket = Bracket::new(lo, hi)?;
        let root_tol = tol.with_root_tol(tol.root_abs_tol.min(1e-14 * (hi - lo).max(1.0)));
        Ok(find_root_monotone(|x| self.cumulative(x) - p, bracket, &root_tol)?)
    }

    fn not_normalized(&self) -> Error {
        Error::NotNormalized { lo: self.spec.lo, hi: self.spec.hi, mass: self.mass }
    }
}

fn horner(coefficients: &[f64], x: f64) -> f64 {
    coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn antiderivative(coefficients: &[f64], x: f64) -> f64 {
    let n = coefficients.len();
    let mut acc = 0.0;
    for i in (0..n).rev() {
        acc = acc * x + coefficients[i] / (i as f64 + 1.0);
    }
    acc * x
}

/// Index `i` with `nodes[i] <= x <= nodes[i + 1]`.
fn cell_index(nodes: &[f64], x: f64) -> usize {
    let last_cell = nodes.len() - 2;
    nodes.partition_point(|&n| n <= x).saturating_sub(1).min(last_cell)
}

/// Validate a spec and compute its mass.
pub fn make_density(spec: DensitySpec) -> Result<Density> {
    let (lo, hi) = (spec.lo, spec.hi);
    if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
        return Err(Error::Domain(format!("interval [{lo}, {hi}] must have positive length")));
    }

    let mut node_mass = Vec::new();
    match &spec.kind {
        DensityKind::Uniform { level } => {
            if !(level.is_finite() && *level > 0.0) {
                return Err(Error::Positivity { x: lo, value: *level });
            }
        }
        DensityKind::Polynomial { coefficients } => {
            if coefficients.is_empty() || coefficients.iter().any(|c| !c.is_finite()) {
                return Err(Error::Domain("polynomial needs at least one finite coefficient".into()));
            }
        }
        DensityKind::Tabulated { nodes, values } => {
            if nodes.len() < 2 || nodes.len() != values.len() {
                return Err(Error::Domain(
                    "tabulated density needs matching nodes/values, at least two".into(),
                ));
            }
            if nodes.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::Domain("tabulated nodes must be strictly increasing".into()));
            }
            if nodes[0] != lo || nodes[nodes.len() - 1] != hi {
                return Err(Error::Domain(format!("tabulated nodes must span exactly [{lo}, {hi}]")));
            }
            if let Some((x, v)) = nodes.iter().zip(values).find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
                return Err(Error::Positivity { x: *x, value: *v });
            }
            let tol = Tolerances::default();
            node_mass.push(0.0);
            let mut acc = 0.0;
            for i in 0..nodes.len() - 1 {
                let (x0, x1, v0, v1) = (nodes[i], nodes[i + 1], values[i], values[i + 1]);
                let cell =
                    integrate_with_breaks(|x| v0 + (x - x0) / (x1 - x0) * (v1 - v0), x0, x1, &[], &tol)?;
                acc += cell;
                node_mass.push(acc);
            }
        }
    }

    let mut density = Density { spec, mass: f64::NAN, normalized: false, node_mass };

    // Interior must be strictly positive; a zero at an endpoint (e.g. 3x² at 0)
    // keeps the CDF strictly increasing and is allowed.
    let n = POSITIVITY_GRID - 1;
    for i in 0..=n {
        let x = if i == n { hi } else { lo + (hi - lo) * (i as f64 / n as f64) };
        let v = density.value(x);
        let endpoint = i == 0 || i == n;
        let ok = v.is_finite() && if endpoint { v >= 0.0 } else { v > 0.0 };
        if !ok {
            return Err(Error::Positivity { x, value: v });
        }
    }

    let tol = Tolerances::default().with_quad_tol(1e-13);
    let breaks = density.breakpoints().to_vec();
    density.mass = integrate_with_breaks(|x| density.value(x), lo, hi, &breaks, &tol)?;
    density.normalized = (density.mass - 1.0).abs() <= NORMALIZED_MASS_TOL;
    Ok(density)
}

/// Rescale a density to unit mass. Already-normalized input is returned as is.
pub fn normalize(d: &Density) -> Result<Density> {
    if d.normalized {
        return Ok(d.clone());
    }
    let mass = d.mass;
    if !(mass.is_finite() && mass > 0.0) {
        return Err(Error::DegenerateDensity { mass });
    }
    let kind = match &d.spec.kind {
        DensityKind::Uniform { level } => DensityKind::Uniform { level: level / mass },
        DensityKind::Polynomial { coefficients } => {
            DensityKind::Polynomial { coefficients: coefficients.iter().map(|c| c / mass).collect() }
        }
        DensityKind::Tabulated { nodes, values } => {
            DensityKind::Tabulated { nodes: nodes.clone(), values: values.iter().map(|v| v / mass).collect() }
        }
    };
    let mut out = make_density(DensitySpec { kind, ..d.spec.clone() })?;
    // Mass was measured once; rescaling by it is exact up to rounding.
    if (out.mass - 1.0).abs() <= NORMALIZED_MASS_TOL {
        out.normalized = true;
    }
    Ok(out)
}

/// Relative position of the source and sink supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Disjoint,
    Touching,
    Overlapping,
}

impl Layout {
    pub fn classify(a: f64, b: f64, c: f64, d: f64) -> Self {
        if b < c || d < a {
            Layout::Disjoint
        } else if b == c || d == a {
            Layout::Touching
        } else {
            Layout::Overlapping
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Layout::Disjoint => "disjoint",
            Layout::Touching => "touching",
            Layout::Overlapping => "overlapping",
        };
        f.write_str(s)
    }
}

/// Source density on Ω = (a, b) and sink density on Ω* = (c, d).
#[derive(Debug, Clone, PartialEq)]
pub struct TransportProblem {
    pub source: Density,
    pub sink: Density,
    pub layout: Layout,
}

impl TransportProblem {
    pub fn new(source: Density, sink: Density) -> Self {
        let layout = Layout::classify(source.lo(), source.hi(), sink.lo(), sink.hi());
        Self { source, sink, layout }
    }

    pub fn from_specs(source: DensitySpec, sink: DensitySpec) -> Result<Self> {
        Ok(Self::new(make_density(source)?, make_density(sink)?))
    }

    /// Total length of both supports, `(b - a) + (d - c)`.
    pub fn support_length(&self) -> f64 {
        self.source.len() + self.sink.len()
    }

    /// Signed density `f = f⁺ - f⁻`.
    pub fn signed_density(&self, x: f64) -> f64 {
        self.source.value(x) - self.sink.value(x)
    }

    /// Reject anything the certified pipeline cannot handle.
    pub fn require_certified(&self) -> Result<()> {
        let diag = validate_problem(self)?;
        if diag.layout != Layout::Disjoint {
            return Err(Error::Layout {
                layout: diag.layout.to_string(),
                reason: "only disjoint supports are certified; use the experimental path".into(),
            });
        }
        Ok(())
    }
}

/// Outcome of [`validate_problem`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemDiagnostics {
    pub source_mass_residual: f64,
    pub sink_mass_residual: f64,
    pub layout: Layout,
    pub positivity_ok: bool,
    /// True for touching or overlapping supports.
    pub experimental: bool,
}

/// Check the balance condition and classify the layout.
pub fn validate_problem(p: &TransportProblem) -> Result<ProblemDiagnostics> {
    let source_mass_residual = p.source.mass() - 1.0;
    let sink_mass_residual = p.sink.mass() - 1.0;
    if source_mass_residual.abs() > BALANCE_TOL || sink_mass_residual.abs() > BALANCE_TOL {
        return Err(Error::Balance { source_mass: p.source.mass(), sink_mass: p.sink.mass() });
    }
    Ok(ProblemDiagnostics {
        source_mass_residual,
        sink_mass_residual,
        layout: p.layout,
        // Densities can only be constructed after passing the positivity grid.
        positivity_ok: true,
        experimental: p.layout != Layout::Disjoint,
    })
}
