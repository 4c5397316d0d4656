//! Ground truth that shares nothing with the duality pipeline beyond raw
//! quadrature: the limit (tent) potential, its Kantorovich value in closed
//! form, the limit balance constants, and a brute-force grid certificate of
//! constrained maximality.

use serde::Serialize;

use crate::density::{Density, DensityKind, Layout, TransportProblem};
use crate::error::{Error, Result};
use crate::numerics::{integrate_with_breaks, Tolerances};
use crate::potential::{Side, TrialPotential};

/// Slack on the discrete constraints `|Δu| <= h` and `u = 0` at endpoints.
const FEASIBILITY_SLACK: f64 = 1e-12;

/// One side of the limit potential: `sign · min(x - lo, hi - x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TentSide {
    pub lo: f64,
    pub hi: f64,
    pub apex: f64,
    pub sign: f64,
}

impl TentSide {
    fn new(lo: f64, hi: f64, side: Side) -> Self {
        Self { lo, hi, apex: 0.5 * (lo + hi), sign: side.sign() }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn value(&self, x: f64) -> f64 {
        if !self.contains(x) {
            return 0.0;
        }
        self.sign * (x - self.lo).min(self.hi - x)
    }

    /// Slope, taken from the left at the apex so that `|u'| = 1` on the
    /// whole interval.
    pub fn slope(&self, x: f64) -> f64 {
        if !self.contains(x) {
            return 0.0;
        }
        if x <= self.apex {
            self.sign
        } else {
            -self.sign
        }
    }
}

/// The limit potential, pointwise maximal on the source side and minimal on
/// the sink side among all feasible potentials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TentPotential {
    pub source: TentSide,
    pub sink: TentSide,
}

impl TentPotential {
    fn part(&self, x: f64) -> Option<&TentSide> {
        [&self.source, &self.sink].into_iter().find(|s| s.contains(x))
    }
}

impl TrialPotential for TentPotential {
    fn value(&self, x: f64) -> f64 {
        self.part(x).map_or(0.0, |s| s.value(x))
    }

    fn slope(&self, x: f64) -> f64 {
        self.part(x).map_or(0.0, |s| s.slope(x))
    }

    fn breakpoints(&self) -> Vec<f64> {
        vec![self.source.apex, self.sink.apex]
    }
}

fn require_disjoint(problem: &TransportProblem) -> Result<()> {
    if problem.layout != Layout::Disjoint {
        return Err(Error::Layout {
            layout: problem.layout.to_string(),
            reason: "the limit potential is only known for disjoint supports".into(),
        });
    }
    Ok(())
}

pub fn tent_potential(problem: &TransportProblem) -> Result<TentPotential> {
    require_disjoint(problem)?;
    let (s, t) = (&problem.source, &problem.sink);
    Ok(TentPotential {
        source: TentSide::new(s.lo(), s.hi(), Side::Source),
        sink: TentSide::new(t.lo(), t.hi(), Side::Sink),
    })
}

/// `∫ min(x - lo, hi - x) f(x) dx` over the density's interval.
fn tent_moment(d: &Density) -> Result<f64> {
    let (lo, hi) = (d.lo(), d.hi());
    let m = 0.5 * (lo + hi);
    match &d.spec().kind {
        DensityKind::Uniform { level } => Ok(level * (hi - lo).powi(2) / 4.0),
        DensityKind::Polynomial { coefficients } => {
            // P' = p and Q' = x p.
            let p = |x: f64| {
                coefficients
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c * x.powi(i as i32 + 1) / (i as f64 + 1.0))
                    .sum::<f64>()
            };
            let q = |x: f64| {
                coefficients
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c * x.powi(i as i32 + 2) / (i as f64 + 2.0))
                    .sum::<f64>()
            };
            let left = (q(m) - q(lo)) - lo * (p(m) - p(lo));
            let right = hi * (p(hi) - p(m)) - (q(hi) - q(m));
            Ok(left + right)
        }
        DensityKind::Tabulated { nodes, .. } => {
            let mut b = nodes.clone();
            b.push(m);
            let tol = Tolerances::default().with_quad_tol(1e-13);
            Ok(integrate_with_breaks(|x| (x - lo).min(hi - x) * d.value(x), lo, hi, &b, &tol)?)
        }
    }
}

/// `K` at the limit potential: the constrained maximum of the transport value.
pub fn tent_value(problem: &TransportProblem) -> Result<f64> {
    require_disjoint(problem)?;
    Ok(tent_moment(&problem.source)? + tent_moment(&problem.sink)?)
}

/// Limit of the balance constant: the CDF at the interval midpoint.
pub fn limit_constant(problem: &TransportProblem, side: Side) -> Result<f64> {
    require_disjoint(problem)?;
    let d = match side {
        Side::Source => &problem.source,
        Side::Sink => &problem.sink,
    };
    d.cdf(d.midpoint())
}

/// Outcome of [`grid_improve_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImprovementReport {
    /// Largest change of the discrete `K` over all feasible single moves;
    /// `None` when no move is feasible.
    pub best_improvement: Option<f64>,
    pub best_move: Option<(Side, usize, f64)>,
    pub moves_tried: usize,
    pub discrete_value: f64,
}

impl ImprovementReport {
    /// Best improvement, counting "no feasible move" as zero.
    pub fn improvement(&self) -> f64 {
        self.best_improvement.unwrap_or(0.0)
    }
}

struct SideGrid {
    side: Side,
    h: f64,
    u: Vec<f64>,
    /// `∫ hat_j f`.
    weights: Vec<f64>,
}

fn side_grid(d: &Density, side: Side, u: &dyn Fn(f64) -> f64, n: usize) -> Result<SideGrid> {
    let (lo, hi) = (d.lo(), d.hi());
    let h = (hi - lo) / (n - 1) as f64;
    let x: Vec<f64> = (0..n).map(|j| if j == n - 1 { hi } else { lo + h * j as f64 }).collect();
    let tol = Tolerances::default().with_quad_tol(1e-13);
    let mut weights = Vec::with_capacity(n);
    for j in 0..n {
        let a = if j == 0 { x[0] } else { x[j - 1] };
        let b = if j == n - 1 { x[n - 1] } else { x[j + 1] };
        let hat = |t: f64| (1.0 - (t - x[j]).abs() / h).max(0.0) * d.value(t);
        let mut breaks = d.breakpoints().to_vec();
        breaks.push(x[j]);
        weights.push(integrate_with_breaks(hat, a, b, &breaks, &tol)?);
    }
    Ok(SideGrid { side, h, u: x.iter().map(|&t| u(t)).collect(), weights })
}

fn violations(g: &SideGrid) -> Vec<String> {
    let mut out = Vec::new();
    let n = g.u.len();
    for j in [0, n - 1] {
        if g.u[j].abs() > FEASIBILITY_SLACK {
            out.push(format!("{} endpoint {j}: u = {} is not zero", g.side, g.u[j]));
        }
    }
    for j in 0..n - 1 {
        let du = (g.u[j + 1] - g.u[j]).abs();
        if !(du <= g.h * (1.0 + FEASIBILITY_SLACK)) {
            out.push(format!("{} cell {j}: |du| = {du} exceeds h = {}", g.side, g.h));
        }
    }
    out
}

/// Try every single-node move `u_j ± step` that keeps `|Δu| <= h` and the
/// endpoint zeros, on `n`-point grids over both supports, and report the
/// best change in the discrete transport value `Σ ± w_j u_j`.
pub fn grid_improve_check(
    problem: &TransportProblem,
    u: &dyn Fn(f64) -> f64,
    n: usize,
    step: f64,
) -> Result<ImprovementReport> {
    require_disjoint(problem)?;
    if n < 3 || !(step > 0.0) {
        return Err(Error::Domain(format!("grid check needs n >= 3 and step > 0, got {n}, {step}")));
    }
    let grids =
        [side_grid(&problem.source, Side::Source, u, n)?, side_grid(&problem.sink, Side::Sink, u, n)?];
    let bad: Vec<String> = grids.iter().flat_map(violations).collect();
    if !bad.is_empty() {
        return Err(Error::Feasibility { violations: bad });
    }

    let mut report = ImprovementReport {
        best_improvement: None,
        best_move: None,
        moves_tried: 0,
        discrete_value: grids
            .iter()
            .map(|g| g.side.sign() * g.u.iter().zip(&g.weights).map(|(u, w)| u * w).sum::<f64>())
            .sum(),
    };
    for g in &grids {
        let limit = g.h * (1.0 + FEASIBILITY_SLACK);
        for j in 1..n - 1 {
            for delta in [step, -step] {
                report.moves_tried += 1;
                let v = g.u[j] + delta;
                if (v - g.u[j - 1]).abs() > limit || (v - g.u[j + 1]).abs() > limit {
                    continue;
                }
                let gain = g.side.sign() * g.weights[j] * delta;
                if report.best_improvement.is_none_or(|b| gain > b) {
                    report.best_improvement = Some(gain);
                    report.best_move = Some((g.side, j, delta));
                }
            }
        }
    }
    Ok(report)
}
