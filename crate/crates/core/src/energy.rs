//! Primal, dual and mixed energy functionals, the Kantorovich value, and the
//! optimality diagnostics built on them.
//!
//! Dual integrands are written in `λ = kζ` so that nothing depends on `ζ`
//! itself being representable. For a solved potential the potential term is
//! taken in the exact form `∫ u f = ∫ η (1 - F)`, which avoids the grid
//! interpolant altogether.

use serde::Serialize;

use crate::density::{Density, TransportProblem};
use crate::dual_algebra::{
    lambda_from_stress, psi_star, regularized_cost, slope_from_log_stress, slope_from_stress,
    stress_from_slope, RegularizationIndex,
};
use crate::error::{Error, Result};
use crate::numerics::Tolerances;
use crate::potential::{integrate_fallible, PotentialSolution, Side, SideSolution, TrialPotential};
use crate::test_functions::{random_family, sine_family, PerSide, PiecewiseLinear, TestFunction};

/// Below this `|θ|` the dual second variation is integrated in `τ = -ln|θ|`.
const THETA_CUT: f64 = 1e-4;

/// Log-stress range kept beyond `k/2`; the dropped tail is `O(k e^{-40})`.
const TAIL_MARGIN: f64 = 40.0;

/// Largest perturbation amplitude tried by the minimizer check.
const MAX_PERTURBATION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SideTotals {
    pub source: f64,
    pub sink: f64,
}

impl SideTotals {
    pub fn total(&self) -> f64 {
        self.source + self.sink
    }

    fn from_fn(mut f: impl FnMut(Side) -> Result<f64>) -> Result<Self> {
        Ok(Self { source: f(Side::Source)?, sink: f(Side::Sink)? })
    }
}

fn density(problem: &TransportProblem, side: Side) -> &Density {
    match side {
        Side::Source => &problem.source,
        Side::Sink => &problem.sink,
    }
}

fn breaks(d: &Density, extra: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut b: Vec<f64> = d.breakpoints().to_vec();
    b.extend(extra);
    b
}

/// `∓ η (1 - F)` on one side: the exact potential term of the primal energy,
/// since `∫ u f = ∫ η(t) (1 - F(t)) dt` when `u` starts from zero.
fn potential_term(sol: &PotentialSolution, side: Side, x: f64) -> Result<f64> {
    let field = sol.field(side);
    let eta = slope_from_stress(sol.k, field.theta_at(x)?)?;
    let tail = 1.0 - field.density.cdf(x)?;
    Ok(-side.sign() * eta * tail)
}

fn side_integral(
    sol: &PotentialSolution,
    side: Side,
    extra: impl IntoIterator<Item = f64>,
    tol: &Tolerances,
    f: impl FnMut(f64) -> Result<f64>,
) -> Result<f64> {
    let s = sol.side(side);
    let b = breaks(density(&sol.problem, side), extra.into_iter().chain([s.zero_crossing]));
    integrate_fallible(f, s.lo, s.hi, &b, tol)
}

/// `∫ H(η) - u f` per side at a solved potential.
pub fn primal_energy(sol: &PotentialSolution, tol: &Tolerances) -> Result<SideTotals> {
    SideTotals::from_fn(|side| {
        let field = sol.field(side);
        side_integral(sol, side, [], tol, |x| {
            let eta = slope_from_stress(sol.k, field.theta_at(x)?)?;
            Ok(regularized_cost(sol.k, eta) + potential_term(sol, side, x)?)
        })
    })
}

/// `∫ H(u_x) - u f` per side for any trial potential, by direct quadrature.
pub fn primal_energy_of(
    k: RegularizationIndex,
    trial: &dyn TrialPotential,
    problem: &TransportProblem,
    tol: &Tolerances,
) -> Result<SideTotals> {
    SideTotals::from_fn(|side| {
        let d = density(problem, side);
        let b = breaks(d, trial.breakpoints());
        integrate_fallible(
            |x| Ok(regularized_cost(k, trial.slope(x)) - side.sign() * trial.value(x) * d.value(x)),
            d.lo(),
            d.hi(),
            &b,
            tol,
        )
    })
}

/// `-½ ∫ θ²/λ + λ + (2/k) λ (ln λ - 1)` per side, with `λ = E⁻¹(θ²)`.
///
/// Where `λ` underflows to zero with the stress (`k` above about 1400) the
/// integrand takes its limit value zero.
pub fn dual_energy(sol: &PotentialSolution, tol: &Tolerances) -> Result<SideTotals> {
    let kv = sol.k.get();
    SideTotals::from_fn(|side| {
        let field = sol.field(side);
        side_integral(sol, side, [], tol, |x| {
            let theta = field.theta_at(x)?;
            let lambda = lambda_from_stress(sol.k, theta)?;
            if lambda == 0.0 && theta.abs() <= f64::MIN_POSITIVE.sqrt() {
                return Ok(0.0);
            }
            if !(lambda > 0.0) {
                return Err(Error::Domain(format!("lambda = {lambda} at x = {x} is not positive")));
            }
            Ok(-0.5 * (theta * theta / lambda + lambda + 2.0 / kv * lambda * (lambda.ln() - 1.0)))
        })
    })
}

/// `∫ Φ(u_x) ζ - Ψ*(ζ) - f u` per side for any pair `(u, ζ)`.
///
/// Fails with a domain error as soon as `ζ` leaves `(0, 1/k]`.
pub fn total_complementary(
    k: RegularizationIndex,
    trial: &dyn TrialPotential,
    zeta: impl Fn(f64) -> f64,
    problem: &TransportProblem,
    tol: &Tolerances,
) -> Result<SideTotals> {
    let kv = k.get();
    SideTotals::from_fn(|side| {
        let d = density(problem, side);
        let b = breaks(d, trial.breakpoints());
        integrate_fallible(
            |x| {
                let s = trial.slope(x);
                let z = zeta(x);
                let phi = 0.5 * kv * (s * s - 1.0);
                Ok(phi * z - psi_star(k, z)? - side.sign() * trial.value(x) * d.value(x))
            },
            d.lo(),
            d.hi(),
            &b,
            tol,
        )
    })
}

/// Total complementary energy at the computed critical pair.
///
/// `ū_x` comes from the slope solve, `ζ̄ = λ/k` from the squared-stress
/// inverse, so the two halves of the pair are reconstructed independently.
pub fn critical_total_complementary(sol: &PotentialSolution, tol: &Tolerances) -> Result<SideTotals> {
    let kv = sol.k.get();
    SideTotals::from_fn(|side| {
        let field = sol.field(side);
        side_integral(sol, side, [], tol, |x| {
            let theta = field.theta_at(x)?;
            let eta = slope_from_stress(sol.k, theta)?;
            let lambda = lambda_from_stress(sol.k, theta)?;
            let mixed = if lambda > 0.0 {
                let phi = 0.5 * kv * (eta * eta - 1.0);
                (phi - lambda.ln() + 1.0) * lambda / kv
            } else {
                0.0
            };
            Ok(mixed + potential_term(sol, side, x)?)
        })
    })
}

/// `K[u] = ∫_Ω u f⁺ - ∫_Ω* u f⁻` by quadrature of the trial potential.
pub fn kantorovich_value(
    trial: &dyn TrialPotential,
    problem: &TransportProblem,
    tol: &Tolerances,
) -> Result<f64> {
    let totals = SideTotals::from_fn(|side| {
        let d = density(problem, side);
        let b = breaks(d, trial.breakpoints());
        integrate_fallible(|x| Ok(side.sign() * trial.value(x) * d.value(x)), d.lo(), d.hi(), &b, tol)
    })?;
    Ok(totals.total())
}

/// `K[ū]` from the exact slope, bypassing the sampled potential.
pub fn solution_kantorovich_value(sol: &PotentialSolution, tol: &Tolerances) -> Result<f64> {
    let totals =
        SideTotals::from_fn(|side| side_integral(sol, side, [], tol, |x| potential_term(sol, side, x)))?;
    Ok(-totals.total())
}

/// Euler–Lagrange residuals on the sampling grids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ElResidual {
    /// `max |D(g(η)) + f|` with `D` the central difference.
    pub conservation: f64,
    /// `max |g(η) - θ|`.
    pub exact: f64,
}

fn el_residual_from(sol: &PotentialSolution, slopes: impl Fn(&SideSolution, usize) -> f64) -> ElResidual {
    let mut out = ElResidual { conservation: 0.0, exact: 0.0 };
    for s in sol.sides() {
        let d = density(&sol.problem, s.side);
        let g: Vec<f64> = (0..s.x.len()).map(|i| stress_from_slope(sol.k, slopes(s, i))).collect();
        let h = s.step();
        for i in 1..s.x.len() - 1 {
            let flux = (g[i + 1] - g[i - 1]) / (2.0 * h);
            let r = (flux + s.side.sign() * d.value(s.x[i])).abs();
            out.conservation = out.conservation.max(r);
        }
        for (gi, th) in g.iter().zip(&s.theta) {
            out.exact = out.exact.max((gi - th).abs());
        }
    }
    out
}

/// Residuals of the computed slopes.
pub fn el_residual(sol: &PotentialSolution) -> ElResidual {
    el_residual_from(sol, |s, i| s.eta[i])
}

/// Residuals of another candidate's slopes on the same grids.
pub fn el_residual_of(sol: &PotentialSolution, trial: &dyn TrialPotential) -> ElResidual {
    el_residual_from(sol, |s, i| trial.slope(s.x[i]))
}

/// `∫ e^{ξ(ū_x)} (k (ū_x φ_x)² + φ_x²)`; nonnegative by construction.
pub fn second_variation_primal(
    sol: &PotentialSolution,
    phi: &dyn TestFunction,
    tol: &Tolerances,
) -> Result<f64> {
    let kv = sol.k.get();
    let totals = SideTotals::from_fn(|side| {
        let field = sol.field(side);
        side_integral(sol, side, phi.breakpoints(), tol, |x| {
            let eta = slope_from_stress(sol.k, field.theta_at(x)?)?;
            let lambda = (0.5 * kv * (eta * eta - 1.0)).exp();
            let p = phi.derivative(x);
            Ok(lambda * (kv * (eta * p).powi(2) + p * p))
        })
    })?;
    Ok(totals.total())
}

/// `-∫ θ²ψ²/(kζ³) + ψ²/ζ`, written as `-∫ k ψ² (1 + k η²) / λ`.
///
/// The integrand grows like `1/|θ|` towards the stress zero until `|θ|`
/// reaches `e^{-k/2}`. Where `|θ| < 1e-4` the integral is taken in
/// `τ = -ln|θ|`, in which it becomes `-∫ k ψ² (1 + k η²) η / f dτ` and stays
/// bounded for every certified `k`.
pub fn second_variation_dual(
    sol: &PotentialSolution,
    psi: &dyn TestFunction,
    tol: &Tolerances,
) -> Result<f64> {
    let kv = sol.k.get();
    let k = sol.k;
    let mut total = 0.0;
    for s in sol.sides() {
        let field = sol.field(s.side);
        let d = density(&sol.problem, s.side);
        let x_pos = field.location_of(THETA_CUT, tol)?;
        let x_neg = field.location_of(-THETA_CUT, tol)?;
        let (xa, xb) = (x_pos.min(x_neg), x_pos.max(x_neg));

        let outer = |x: f64| -> Result<f64> {
            let theta = field.theta_at(x)?;
            let eta = slope_from_stress(k, theta)?;
            let xi = 0.5 * kv * (eta * eta - 1.0);
            if !(xi.exp() > 0.0) {
                return Err(Error::Domain(format!("zeta at x = {x} is not positive")));
            }
            let p = psi.value(x);
            Ok(-kv * p * p * (1.0 + kv * eta * eta) * (-xi).exp())
        };
        let b = breaks(d, psi.breakpoints());
        if xa > s.lo {
            total += integrate_fallible(outer, s.lo, xa, &b, tol)?;
        }
        if xb < s.hi {
            total += integrate_fallible(outer, xb, s.hi, &b, tol)?;
        }

        let (th_lo, th_hi) = (field.theta_at(s.lo)?, field.theta_at(s.hi)?);
        for sign in [1.0f64, -1.0] {
            let reach = (sign * th_lo).max(sign * th_hi);
            if !(reach > 0.0) {
                continue;
            }
            let tau_lo = -reach.min(THETA_CUT).ln();
            let tau_hi = 0.5 * kv + TAIL_MARGIN;
            if tau_hi <= tau_lo {
                continue;
            }
            let tau_breaks: Vec<f64> = psi
                .breakpoints()
                .into_iter()
                .chain(d.breakpoints().iter().copied())
                .filter(|&x| x > xa && x < xb && x >= s.lo && x <= s.hi)
                .filter_map(|x| field.theta_at(x).ok())
                .filter(|th| sign * th > 0.0)
                .map(|th| -th.abs().ln())
                .collect();
            total += integrate_fallible(
                |tau| {
                    let x = field.location_of(sign * (-tau).exp(), tol)?;
                    let eta = slope_from_log_stress(k, tau)?;
                    let f = d.value(x);
                    if !(f > 0.0) {
                        return Err(Error::Positivity { x, value: f });
                    }
                    let p = psi.value(x);
                    Ok(-kv * p * p * (1.0 + kv * eta * eta) * eta / f)
                },
                tau_lo,
                tau_hi,
                &tau_breaks,
                tol,
            )?;
        }
    }
    Ok(total)
}

/// `ū + εφ` as a trial potential.
pub struct Perturbed<'a, T: TestFunction> {
    pub base: &'a PotentialSolution,
    pub phi: &'a T,
    pub eps: f64,
}

impl<T: TestFunction> TrialPotential for Perturbed<'_, T> {
    fn value(&self, x: f64) -> f64 {
        self.base.value(x) + self.eps * self.phi.value(x)
    }

    fn slope(&self, x: f64) -> f64 {
        self.base.slope(x) + self.eps * self.phi.derivative(x)
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut b = self.base.breakpoints();
        b.extend(self.phi.breakpoints());
        b
    }
}

/// `I[ū + εφ] - I[ū]`, integrated as a single difference so the quadrature
/// error does not swamp the second-order change.
pub fn perturbation_gain(
    sol: &PotentialSolution,
    phi: &dyn TestFunction,
    eps: f64,
    tol: &Tolerances,
) -> Result<f64> {
    let totals = SideTotals::from_fn(|side| {
        let field = sol.field(side);
        let d = density(&sol.problem, side);
        side_integral(sol, side, phi.breakpoints(), tol, |x| {
            let eta = slope_from_stress(sol.k, field.theta_at(x)?)?;
            let moved = regularized_cost(sol.k, eta + eps * phi.derivative(x)) - regularized_cost(sol.k, eta);
            Ok(moved - side.sign() * eps * phi.value(x) * d.value(x))
        })
    })?;
    Ok(totals.total())
}

/// Largest-change summary over a family of feasible perturbations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MinimizerReport {
    pub count: usize,
    /// `max (I[ū] - I[w])`; negative when every perturbation costs energy.
    pub worst_decrease: f64,
    pub smallest_eps: f64,
}

fn feasible_eps(sol: &PotentialSolution, phi: &PerSide<PiecewiseLinear>) -> f64 {
    let room = 1.0 - sol.sup_slope();
    let steep = phi.source.max_abs_derivative().max(phi.sink.max_abs_derivative());
    if steep == 0.0 {
        return MAX_PERTURBATION;
    }
    (0.5 * room / steep).min(MAX_PERTURBATION)
}

/// Perturb `ū` by `count` seeded endpoint-vanishing functions, each scaled so
/// that `|ū_x + εφ_x| <= 1` holds everywhere.
pub fn minimizer_check(
    sol: &PotentialSolution,
    count: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<MinimizerReport> {
    let mut report =
        MinimizerReport { count, worst_decrease: f64::NEG_INFINITY, smallest_eps: f64::INFINITY };
    for phi in random_family(&sol.problem, count, seed, true) {
        let eps = feasible_eps(sol, &phi);
        let gain = perturbation_gain(sol, &phi, eps, tol)?;
        report.worst_decrease = report.worst_decrease.max(-gain);
        report.smallest_eps = report.smallest_eps.min(eps);
    }
    Ok(report)
}

/// `(min primal, max dual)` second variation over sine bumps of modes
/// `1..=modes` plus `random` seeded piecewise-linear functions.
pub fn second_variation_extremes(
    sol: &PotentialSolution,
    modes: u32,
    random: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<(f64, f64)> {
    let mut min_primal = f64::INFINITY;
    let mut max_dual = f64::NEG_INFINITY;
    let mut visit = |phi: &dyn TestFunction, psi: &dyn TestFunction| -> Result<()> {
        min_primal = min_primal.min(second_variation_primal(sol, phi, tol)?);
        max_dual = max_dual.max(second_variation_dual(sol, psi, tol)?);
        Ok(())
    };
    for f in sine_family(&sol.problem, modes) {
        visit(&f, &f)?;
    }
    let pinned = random_family(&sol.problem, random, seed, true);
    let free = random_family(&sol.problem, random, seed.wrapping_add(1), false);
    for (phi, psi) in pinned.iter().zip(&free) {
        visit(phi, psi)?;
    }
    Ok((min_primal, max_dual))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyReport {
    pub k: f64,
    pub i_primal: f64,
    pub i_dual: f64,
    pub xi: f64,
    pub k_value: f64,
    pub duality_gap: f64,
    pub sup_slope: f64,
    pub el_residual: f64,
    pub el_exact_residual: f64,
    pub second_var_min_primal: f64,
    pub second_var_max_dual: f64,
    pub primal: SideTotals,
    pub dual: SideTotals,
}

/// Every functional and diagnostic at a solved potential.
pub fn energy_report(sol: &PotentialSolution, tol: &Tolerances) -> Result<EnergyReport> {
    let primal = primal_energy(sol, tol)?;
    let dual = dual_energy(sol, tol)?;
    let xi = critical_total_complementary(sol, tol)?.total();
    let el = el_residual(sol);
    let (second_var_min_primal, second_var_max_dual) = second_variation_extremes(sol, 3, 5, 1, tol)?;
    Ok(EnergyReport {
        k: sol.k.get(),
        i_primal: primal.total(),
        i_dual: dual.total(),
        xi,
        k_value: solution_kantorovich_value(sol, tol)?,
        duality_gap: (primal.total() - dual.total()).abs(),
        sup_slope: sol.sup_slope(),
        el_residual: el.conservation,
        el_exact_residual: el.exact,
        second_var_min_primal,
        second_var_max_dual,
        primal,
        dual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::DensitySpec;
    use crate::potential::{solve_potential, ZeroPotential};
    use crate::test_functions::{Constant, SineBump};

    fn k(v: f64) -> RegularizationIndex {
        RegularizationIndex::new(v).unwrap()
    }

    fn uniform() -> TransportProblem {
        TransportProblem::from_specs(DensitySpec::uniform(0.0, 1.0), DensitySpec::uniform(2.0, 3.0)).unwrap()
    }

    fn cubic() -> TransportProblem {
        TransportProblem::from_specs(
            DensitySpec::polynomial(0.0, 1.0, vec![0.0, 0.0, 3.0]),
            DensitySpec::uniform(2.0, 3.0),
        )
        .unwrap()
    }

    fn solve(kv: f64, p: &TransportProblem) -> PotentialSolution {
        solve_potential(k(kv), p, &Tolerances::default()).unwrap()
    }

    #[test]
    fn zero_potential_energy() {
        let t = Tolerances::default();
        for kv in [1.0, 8.0, 100.0] {
            let e = primal_energy_of(k(kv), &ZeroPotential, &uniform(), &t).unwrap().total();
            let expected = 2.0 * (-0.5 * kv).exp() / kv;
            assert!((e - expected).abs() < 1e-14, "k {kv}: {e} vs {expected}");
        }
        assert_eq!(kantorovich_value(&ZeroPotential, &uniform(), &t).unwrap(), 0.0);
    }

    #[test]
    fn complementary_energy_at_zero_pair() {
        let t = Tolerances::default();
        let kv = 8.0;
        let xi = total_complementary(k(kv), &ZeroPotential, |_| 1.0 / kv, &uniform(), &t).unwrap().total();
        assert!((xi - 2.0 * (1.0 / kv - 0.5)).abs() < 1e-13);
    }

    #[test]
    fn complementary_energy_rejects_bad_zeta() {
        let t = Tolerances::default();
        for z in [0.0, -0.1, 0.2] {
            let err = total_complementary(k(8.0), &ZeroPotential, |_| z, &uniform(), &t).unwrap_err();
            assert!(matches!(err, Error::Domain(_)), "{z}: {err:?}");
        }
    }

    #[test]
    fn dual_integrand_on_unit_stress() {
        // θ = λ = 1 gives -½(1 + 1 - 2/k) = -1 + 1/k.
        for kv in [1.0, 4.0, 64.0] {
            let lam = lambda_from_stress(k(kv), 1.0).unwrap();
            let v = -0.5 * (1.0 / lam + lam + 2.0 / kv * lam * (lam.ln() - 1.0));
            assert!((v - (-1.0 + 1.0 / kv)).abs() < 1e-15);
        }
    }

    #[test]
    fn duality_chain_on_fixtures() {
        let t = Tolerances::default();
        for p in [uniform(), cubic()] {
            for kv in [1.0, 8.0, 64.0, 1024.0] {
                let sol = solve(kv, &p);
                let ip = primal_energy(&sol, &t).unwrap().total();
                let id = dual_energy(&sol, &t).unwrap().total();
                let xi = critical_total_complementary(&sol, &t).unwrap().total();
                let scale = 1e-6 * (1.0 + ip.abs());
                assert!((ip - id).abs() <= scale, "k {kv}: {ip} vs {id}");
                assert!((ip - xi).abs() <= scale && (xi - id).abs() <= scale);
                assert!(id <= ip + 1e-6);
            }
        }
    }

    #[test]
    fn quadrature_routes_agree() {
        let t = Tolerances::default();
        let p = cubic();
        let sol = solve(8.0, &p);
        let exact = primal_energy(&sol, &t).unwrap().total();
        let generic = primal_energy_of(sol.k, &sol, &p, &t).unwrap().total();
        assert!((exact - generic).abs() < 1e-8, "{exact} vs {generic}");
        let kx = solution_kantorovich_value(&sol, &t).unwrap();
        let kq = kantorovich_value(&sol, &p, &t).unwrap();
        assert!((kx - kq).abs() < 1e-8);
        let zeta = |x: f64| {
            let side = if sol.source.contains(x) { Side::Source } else { Side::Sink };
            lambda_from_stress(sol.k, sol.field(side).theta_at(x).unwrap()).unwrap() / 8.0
        };
        let xi = total_complementary(sol.k, &sol, zeta, &p, &t).unwrap().total();
        assert!((xi - exact).abs() < 1e-8);
    }

    #[test]
    fn zeta_perturbations_lower_complementary_energy() {
        let t = Tolerances::default();
        let p = uniform();
        let sol = solve(8.0, &p);
        let zeta_bar = |x: f64| {
            let side = if sol.source.contains(x) { Side::Source } else { Side::Sink };
            lambda_from_stress(sol.k, sol.field(side).theta_at(x).unwrap()).unwrap() / 8.0
        };
        let base = total_complementary(sol.k, &sol, zeta_bar, &p, &t).unwrap().total();
        for factor in [0.99, 1.01] {
            let moved = total_complementary(sol.k, &sol, |x| zeta_bar(x) * factor, &p, &t).unwrap().total();
            assert!(moved < base, "factor {factor}: {moved} vs {base}");
        }
    }

    #[test]
    fn el_residuals_uniform_k8() {
        let sol = solve(8.0, &uniform());
        let r = el_residual(&sol);
        assert!(r.exact <= 1e-9, "{r:?}");
        assert!(r.conservation <= 1e-4, "{r:?}");
    }

    #[test]
    fn second_variations_have_their_signs() {
        let t = Tolerances::default();
        let p = uniform();
        let sol = solve(4.0, &p);
        assert_eq!(second_variation_primal(&sol, &Constant(0.0), &t).unwrap(), 0.0);
        assert_eq!(second_variation_dual(&sol, &Constant(0.0), &t).unwrap(), 0.0);
        let bump = SineBump { lo: 0.0, hi: 1.0, mode: 1, amplitude: 1.0 };
        assert!(second_variation_primal(&sol, &bump, &t).unwrap() > 0.0);
        assert!(second_variation_dual(&sol, &Constant(1.0), &t).unwrap() < 0.0);
    }

    #[test]
    fn dual_second_variation_log_split_is_seamless() {
        // At k = 1 nothing is singular, so a plain x-quadrature is an oracle.
        let t = Tolerances::default();
        let sol = solve(1.0, &uniform());
        let psi = SineBump { lo: 0.0, hi: 1.0, mode: 2, amplitude: 1.0 };
        let split = second_variation_dual(&sol, &psi, &t).unwrap();
        let field = sol.field(Side::Source);
        let plain = crate::numerics::integrate(
            |x| {
                let eta = slope_from_stress(sol.k, field.theta_at(x).unwrap()).unwrap();
                let lam = (0.5 * (eta * eta - 1.0)).exp();
                -psi.value(x).powi(2) * (1.0 + eta * eta) / lam
            },
            0.0,
            1.0,
            &t,
        )
        .unwrap();
        assert!((split - plain).abs() < 1e-8 * plain.abs(), "{split} vs {plain}");
    }

    #[test]
    fn dual_second_variation_finite_at_large_k() {
        let t = Tolerances::default();
        for kv in [1024.0, 4096.0] {
            let sol = solve(kv, &cubic());
            let v = second_variation_dual(&sol, &Constant(1.0), &t).unwrap();
            assert!(v.is_finite() && v < 0.0, "k {kv}: {v}");
        }
    }

    #[test]
    fn perturbations_never_lower_energy() {
        let t = Tolerances::default();
        for kv in [1.0, 64.0] {
            let sol = solve(kv, &cubic());
            let r = minimizer_check(&sol, 10, 5, &t).unwrap();
            assert!(r.worst_decrease <= 1e-8, "k {kv}: {r:?}");
            assert!(r.smallest_eps > 0.0);
        }
    }

    #[test]
    fn perturbation_gain_matches_full_difference() {
        let t = Tolerances::default();
        let p = uniform();
        let sol = solve(2.0, &p);
        let phi = SineBump { lo: 0.0, hi: 1.0, mode: 1, amplitude: 1.0 };
        let eps = 0.05;
        let w = Perturbed { base: &sol, phi: &phi, eps };
        let full = primal_energy_of(sol.k, &w, &p, &t).unwrap().total()
            - primal_energy_of(sol.k, &sol, &p, &t).unwrap().total();
        let gain = perturbation_gain(&sol, &phi, eps, &t).unwrap();
        assert!(gain > 0.0);
        assert!((full - gain).abs() < 1e-8, "{full} vs {gain}");
    }

    #[test]
    fn report_is_consistent() {
        let sol = solve(8.0, &uniform());
        let r = energy_report(&sol, &Tolerances::default()).unwrap();
        assert!(r.duality_gap >= 0.0 && r.duality_gap <= 1e-6);
        assert!(r.sup_slope <= 1.0 + 1e-9);
        assert!(r.second_var_min_primal >= -1e-8 && r.second_var_max_dual <= 1e-8);
        assert!((r.primal.total() - r.i_primal).abs() == 0.0);
        assert!(r.k_value > 0.0 && r.k_value < 0.5);
    }
}
