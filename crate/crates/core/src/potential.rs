//! Dual stress fields, balance constants, and the assembled potential.
//!
//! On the source side the stress is `θ(x) = C - F⁺(x)`, on the sink side
//! `θ(x) = F⁻(x) - D`. The slope is recovered pointwise from θ and integrated
//! from the left endpoint of each side; the constants are the unique values
//! that make the potential vanish again at the right endpoint.

use std::cell::RefCell;
use std::fmt;

use serde::Serialize;

use crate::density::{validate_problem, Density, Layout, TransportProblem};
use crate::dual_algebra::{lambda_from_stress, slope_from_stress, RegularizationIndex};
use crate::error::{Error, Result};
use crate::numerics::{find_root_monotone_report, integrate_with_breaks, Bracket, Tolerances};

/// Abscissae per side, endpoints included.
pub const GRID_POINTS: usize = 2049;

/// Balance residual the constant search must reach.
pub const MISMATCH_TOL: f64 = 1e-9;

const INITIAL_BRACKET_MARGIN: f64 = 1e-6;
const MIN_BRACKET_MARGIN: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Source,
    Sink,
}

impl Side {
    /// Sign of the limit potential on this side.
    pub fn sign(self) -> f64 {
        match self {
            Side::Source => 1.0,
            Side::Sink => -1.0,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Source => "source",
            Side::Sink => "sink",
        })
    }
}

/// Integrate a fallible integrand; the first error raised inside wins.
pub(crate) fn integrate_fallible<F>(
    mut f: F,
    lo: f64,
    hi: f64,
    breaks: &[f64],
    tol: &Tolerances,
) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let failure = RefCell::new(None);
    let q = integrate_with_breaks(
        |x| match f(x) {
            Ok(v) => v,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        },
        lo,
        hi,
        breaks,
        tol,
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(q?)
}

/// The stress on one side (or one component of a side), affine in the CDF.
#[derive(Debug, Clone, Copy)]
pub struct DualField<'a> {
    pub side: Side,
    pub density: &'a Density,
    pub lo: f64,
    pub hi: f64,
    /// `F(lo)`, subtracted so the stress restarts on a component.
    base: f64,
    pub constant: Option<f64>,
}

impl<'a> DualField<'a> {
    /// Field over the density's whole interval.
    pub fn new(side: Side, density: &'a Density) -> Self {
        Self { side, density, lo: density.lo(), hi: density.hi(), base: 0.0, constant: None }
    }

    /// Field over a sub-interval `[lo, hi]` of the density's support.
    pub fn restricted(side: Side, density: &'a Density, lo: f64, hi: f64) -> Result<Self> {
        if !(density.contains(lo) && density.contains(hi) && lo < hi) {
            return Err(Error::Domain(format!(
                "[{lo}, {hi}] is not a sub-interval of [{}, {}]",
                density.lo(),
                density.hi()
            )));
        }
        let base = density.cdf(lo)?;
        Ok(Self { side, density, lo, hi, base, constant: None })
    }

    pub fn with_constant(mut self, t: f64) -> Self {
        self.constant = Some(t);
        self
    }

    /// Mass carried by the field's interval.
    pub fn mass(&self) -> Result<f64> {
        Ok(self.density.cdf(self.hi)? - self.base)
    }

    fn require_constant(&self) -> Result<f64> {
        self.constant.ok_or_else(|| Error::State(format!("{} field has no balance constant", self.side)))
    }

    pub fn theta_at(&self, x: f64) -> Result<f64> {
        let t = self.require_constant()?;
        if !(x >= self.lo && x <= self.hi) {
            return Err(Error::Domain(format!("x = {x} outside [{}, {}]", self.lo, self.hi)));
        }
        let moved = self.density.cdf(x)? - self.base;
        Ok(match self.side {
            Side::Source => t - moved,
            Side::Sink => moved - t,
        })
    }

    /// Location where the stress changes sign.
    pub fn zero_crossing(&self, tol: &Tolerances) -> Result<f64> {
        self.location_of(0.0, tol)
    }

    /// Point where the stress equals `theta`, clamped to the interval when
    /// the value is never reached.
    pub fn location_of(&self, theta: f64, tol: &Tolerances) -> Result<f64> {
        let t = self.require_constant()?;
        let moved = match self.side {
            Side::Source => t - theta,
            Side::Sink => t + theta,
        };
        let p = (self.base + moved).clamp(0.0, 1.0);
        Ok(self.density.inverse_cdf(p, tol)?.clamp(self.lo, self.hi))
    }
}

/// `∫ η` over the field's interval for its trial constant: the value the
/// potential reaches at the right endpoint.
///
/// Increasing in the constant on the source side, decreasing on the sink side.
pub fn balance_mismatch(k: RegularizationIndex, field: &DualField<'_>, tol: &Tolerances) -> Result<f64> {
    let zero = field.zero_crossing(tol)?;
    integrate_fallible(|x| slope_from_stress(k, field.theta_at(x)?), field.lo, field.hi, &[zero], tol)
}

/// Constant search outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BalanceReport {
    pub constant: f64,
    pub mismatch: f64,
    pub iterations: u32,
    pub bracket_width: f64,
}

fn solve_field_constant(
    k: RegularizationIndex,
    field: DualField<'_>,
    tol: &Tolerances,
) -> Result<BalanceReport> {
    let mass = field.mass()?;
    let fail = |reason: String| Error::BalanceConstant { side: field.side.to_string(), reason };
    if !(mass > 0.0) {
        return Err(fail(format!("component mass {mass} is not positive")));
    }
    let mismatch = |t: f64| balance_mismatch(k, &field.with_constant(t), tol);

    // Widen toward (0, mass) until the mismatch changes sign.
    let mut margin = INITIAL_BRACKET_MARGIN;
    let (lo, hi) = loop {
        let (lo, hi) = (margin * mass, (1.0 - margin) * mass);
        let (m_lo, m_hi) = (mismatch(lo)?, mismatch(hi)?);
        if m_lo == 0.0 || m_hi == 0.0 || m_lo.signum() != m_hi.signum() {
            break (lo, hi);
        }
        margin *= 1e-3;
        if margin < MIN_BRACKET_MARGIN {
            return Err(fail(format!(
                "no sign change on ({lo}, {hi}): mismatch {m_lo} .. {m_hi}; \
                 density may violate positivity"
            )));
        }
    };

    let failure = RefCell::new(None);
    let report = find_root_monotone_report(
        |t| match mismatch(t) {
            Ok(v) => v,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        },
        Bracket::new(lo, hi)?,
        tol,
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let report = report?;
    if report.residual > MISMATCH_TOL {
        return Err(fail(format!(
            "balance residual {} above {MISMATCH_TOL} at constant {}",
            report.residual, report.root
        )));
    }
    Ok(BalanceReport {
        constant: report.root,
        mismatch: report.residual,
        iterations: report.iterations,
        bracket_width: report.width,
    })
}

fn side_density(problem: &TransportProblem, side: Side) -> &Density {
    match side {
        Side::Source => &problem.source,
        Side::Sink => &problem.sink,
    }
}

/// The balance constant (`C_k` on the source side, `D_k` on the sink side).
pub fn solve_balance_constant(
    k: RegularizationIndex,
    side: Side,
    problem: &TransportProblem,
    tol: &Tolerances,
) -> Result<f64> {
    solve_balance_constant_report(k, side, problem, tol).map(|r| r.constant)
}

pub fn solve_balance_constant_report(
    k: RegularizationIndex,
    side: Side,
    problem: &TransportProblem,
    tol: &Tolerances,
) -> Result<BalanceReport> {
    problem.require_certified()?;
    solve_field_constant(k, DualField::new(side, side_density(problem, side)), tol)
}

/// Sampled potential on one side (or one component of it).
#[derive(Debug, Clone, PartialEq)]
pub struct SideSolution {
    pub side: Side,
    pub lo: f64,
    pub hi: f64,
    pub balance: BalanceReport,
    /// Point where θ, and with it the slope, changes sign.
    pub zero_crossing: f64,
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub eta: Vec<f64>,
    pub u: Vec<f64>,
    /// Fritsch–Carlson node derivatives for interpolating `u`.
    interp_slopes: Vec<f64>,
}

impl SideSolution {
    pub fn constant(&self) -> f64 {
        self.balance.constant
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.x.len() - 1) as f64
    }

    pub fn right_value(&self) -> f64 {
        *self.u.last().expect("grid is never empty")
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Monotone piecewise-cubic interpolation of the sampled potential.
    pub fn interpolate(&self, x: f64) -> f64 {
        let n = self.x.len() - 1;
        let h = self.step();
        let pos = ((x - self.lo) / h).clamp(0.0, n as f64);
        let i = (pos.floor() as usize).min(n - 1);
        let t = pos - i as f64;
        let (u0, u1) = (self.u[i], self.u[i + 1]);
        let (d0, d1) = (self.interp_slopes[i] * h, self.interp_slopes[i + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * u0
            + (t3 - 2.0 * t2 + t) * d0
            + (-2.0 * t3 + 3.0 * t2) * u1
            + (t3 - t2) * d1
    }
}

fn pchip_slopes(u: &[f64], h: f64) -> Vec<f64> {
    let n = u.len();
    let delta: Vec<f64> = u.windows(2).map(|w| (w[1] - w[0]) / h).collect();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        let (a, b) = (delta[i - 1], delta[i]);
        d[i] = if a * b <= 0.0 { 0.0 } else { 2.0 / (1.0 / a + 1.0 / b) };
    }
    let edge = |d0: f64, d1: f64| {
        let m = 0.5 * (3.0 * d0 - d1);
        if m.signum() != d0.signum() {
            0.0
        } else if d0.signum() != d1.signum() && m.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            m
        }
    };
    if n > 2 {
        d[0] = edge(delta[0], delta[1]);
        d[n - 1] = edge(delta[n - 2], delta[n - 3]);
    } else {
        d[0] = delta[0];
        d[1] = delta[0];
    }
    d
}

fn solve_field(k: RegularizationIndex, field: DualField<'_>, tol: &Tolerances) -> Result<SideSolution> {
    let balance = solve_field_constant(k, field, tol)?;
    let field = field.with_constant(balance.constant);
    let zero_crossing = field.zero_crossing(tol)?;

    let n = GRID_POINTS - 1;
    let (lo, hi) = (field.lo, field.hi);
    let h = (hi - lo) / n as f64;
    let x: Vec<f64> = (0..=n).map(|i| if i == n { hi } else { lo + h * i as f64 }).collect();

    let mut theta = Vec::with_capacity(x.len());
    let mut eta = Vec::with_capacity(x.len());
    let mut lambda = Vec::with_capacity(x.len());
    for &xi in &x {
        let th = field.theta_at(xi)?;
        theta.push(th);
        eta.push(slope_from_stress(k, th)?);
        lambda.push(lambda_from_stress(k, th)?);
    }

    // Cell errors add up along the sweep, so each cell gets a share of the budget.
    let cell_tol = tol.with_quad_tol(tol.quad_abs_tol / n as f64);
    let mut u = Vec::with_capacity(x.len());
    u.push(0.0);
    for w in x.windows(2) {
        let cell = integrate_fallible(
            |t| slope_from_stress(k, field.theta_at(t)?),
            w[0],
            w[1],
            &[zero_crossing],
            &cell_tol,
        )?;
        u.push(u.last().copied().unwrap_or(0.0) + cell);
    }

    let interp_slopes = pchip_slopes(&u, h);
    Ok(SideSolution {
        side: field.side,
        lo,
        hi,
        balance,
        zero_crossing,
        x,
        theta,
        lambda,
        eta,
        u,
        interp_slopes,
    })
}

/// Approximate Kantorovich potential for one regularization index.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSolution {
    pub k: RegularizationIndex,
    pub problem: TransportProblem,
    pub tolerances: Tolerances,
    pub source: SideSolution,
    pub sink: SideSolution,
}

impl PotentialSolution {
    pub fn c_k(&self) -> f64 {
        self.source.constant()
    }

    pub fn d_k(&self) -> f64 {
        self.sink.constant()
    }

    pub fn sides(&self) -> [&SideSolution; 2] {
        [&self.source, &self.sink]
    }

    pub fn side(&self, side: Side) -> &SideSolution {
        match side {
            Side::Source => &self.source,
            Side::Sink => &self.sink,
        }
    }

    pub fn field(&self, side: Side) -> DualField<'_> {
        let s = self.side(side);
        DualField::new(side, side_density(&self.problem, side)).with_constant(s.constant())
    }

    /// `[u(a), u(b), u(c), u(d)]`.
    pub fn boundary_values(&self) -> [f64; 4] {
        [self.source.u[0], self.source.right_value(), self.sink.u[0], self.sink.right_value()]
    }

    pub fn sup_slope(&self) -> f64 {
        self.sides().iter().flat_map(|s| s.eta.iter()).fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sup_potential(&self) -> f64 {
        self.sides().iter().flat_map(|s| s.u.iter()).fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Exact slope at `x` from the stress; zero outside both supports.
    pub fn slope_at(&self, x: f64) -> Result<f64> {
        for side in [Side::Source, Side::Sink] {
            if self.side(side).contains(x) {
                return slope_from_stress(self.k, self.field(side).theta_at(x)?);
            }
        }
        Ok(0.0)
    }
}

/// Assemble the potential for a disjoint, balanced problem.
pub fn solve_potential(
    k: RegularizationIndex,
    problem: &TransportProblem,
    tol: &Tolerances,
) -> Result<PotentialSolution> {
    tol.validate()?;
    problem.require_certified()?;
    let source = solve_field(k, DualField::new(Side::Source, &problem.source), tol)?;
    let sink = solve_field(k, DualField::new(Side::Sink, &problem.sink), tol)?;
    Ok(PotentialSolution { k, problem: problem.clone(), tolerances: *tol, source, sink })
}

/// Potential at any point; zero off both supports.
pub fn evaluate_potential(sol: &PotentialSolution, x: f64) -> f64 {
    sol.sides().iter().find(|s| s.contains(x)).map_or(0.0, |s| s.interpolate(x))
}

/// Anything that can be fed to the energy functionals as a candidate potential.
pub trait TrialPotential {
    fn value(&self, x: f64) -> f64;
    fn slope(&self, x: f64) -> f64;
    /// Points where the slope is not smooth.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

impl TrialPotential for PotentialSolution {
    fn value(&self, x: f64) -> f64 {
        evaluate_potential(self, x)
    }

    fn slope(&self, x: f64) -> f64 {
        self.slope_at(x).unwrap_or(f64::NAN)
    }

    fn breakpoints(&self) -> Vec<f64> {
        vec![self.source.zero_crossing, self.sink.zero_crossing]
    }
}

/// `u ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPotential;

impl TrialPotential for ZeroPotential {
    fn value(&self, _x: f64) -> f64 {
        0.0
    }

    fn slope(&self, _x: f64) -> f64 {
        0.0
    }
}

/// One piece of a support on which the potential is solved independently.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Subproblem {
    pub side: Side,
    pub lo: f64,
    pub hi: f64,
    pub experimental: bool,
}

/// Components of `(lo, hi)` minus the closed interval `[cut_lo, cut_hi]`.
fn subtract(lo: f64, hi: f64, cut_lo: f64, cut_hi: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let left_end = hi.min(cut_lo);
    if lo < left_end {
        out.push((lo, left_end));
    }
    let right_start = lo.max(cut_hi);
    if right_start < hi {
        out.push((right_start, hi));
    }
    out
}

/// Split a problem into single-side pieces with zero boundary values.
pub fn decompose(problem: &TransportProblem) -> Vec<Subproblem> {
    let experimental = problem.layout != Layout::Disjoint;
    let (a, b, c, d) = (problem.source.lo(), problem.source.hi(), problem.sink.lo(), problem.sink.hi());
    let mut out = Vec::new();
    for (lo, hi) in subtract(a, b, c, d) {
        out.push(Subproblem { side: Side::Source, lo, hi, experimental });
    }
    for (lo, hi) in subtract(c, d, a, b) {
        out.push(Subproblem { side: Side::Sink, lo, hi, experimental });
    }
    out
}

/// Uncertified solve for touching or overlapping supports.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentalSolution {
    pub k: RegularizationIndex,
    pub layout: Layout,
    pub components: Vec<SideSolution>,
}

impl ExperimentalSolution {
    /// Right-endpoint value of each component; ideally all zero.
    pub fn boundary_residuals(&self) -> Vec<f64> {
        self.components.iter().map(SideSolution::right_value).collect()
    }
}

/// Solve each component of `decompose(problem)` with its own balance constant.
pub fn solve_potential_experimental(
    k: RegularizationIndex,
    problem: &TransportProblem,
    tol: &Tolerances,
) -> Result<ExperimentalSolution> {
    tol.validate()?;
    validate_problem(problem)?;
    let mut components = Vec::new();
    for sub in decompose(problem) {
        let density = side_density(problem, sub.side);
        let field = DualField::restricted(sub.side, density, sub.lo, sub.hi)?;
        components.push(solve_field(k, field, tol)?);
    }
    Ok(ExperimentalSolution { k, layout: problem.layout, components })
}
