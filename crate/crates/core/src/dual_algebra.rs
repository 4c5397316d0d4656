//! Pointwise canonical-duality algebra.
//!
//! Notation used throughout the crate, for a regularization index `k >= 1`
//! and a slope `s = u_x`:
//!
//! * `ξ = k (s² - 1) / 2`, the geometric measure (always `<= 0` when `|s| <= 1`),
//! * `λ = e^ξ = k ζ`, the scaled dual variable in `[e^{-k/2}, 1]`,
//! * `θ = λ s`, the dual stress, with `|θ| <= 1`.
//!
//! The stress/slope map `s ↦ s e^{k(s²-1)/2}` is strictly increasing, which
//! is what makes every inversion here a bracketed monotone root solve.

use crate::error::{Error, Result};
use crate::numerics::{find_root_monotone, Bracket, Tolerances};

/// Largest regularization index accepted by the certified pipeline.
pub const MAX_CERTIFIED_K: f64 = 4096.0;

/// Above this `k` the slope equation is solved in logarithmic form.
const LOG_FORM_K: f64 = 50.0;

/// Relative slack on the λ band boundaries.
const BAND_SLACK: f64 = 1e-12;

fn inner_tol(root_abs_tol: f64) -> Tolerances {
    Tolerances { root_abs_tol, max_root_iters: 400, ..Tolerances::default() }
}

/// The approximation index `k`. Real-valued, at least one.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct RegularizationIndex(f64);

impl RegularizationIndex {
    pub fn new(k: f64) -> Result<Self> {
        if !(k.is_finite() && k >= 1.0) {
            return Err(Error::Domain(format!("regularization index k = {k} must be finite and >= 1")));
        }
        Ok(Self(k))
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// Lower end `e^{-k/2}` of the λ band (zero once it underflows).
    pub fn lambda_floor(self) -> f64 {
        (-0.5 * self.0).exp()
    }
}

/// All dual quantities at one point, tied together by the canonical relations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualScalars {
    pub theta: f64,
    pub lambda: f64,
    pub zeta: f64,
    pub slope: f64,
    pub xi: f64,
}

impl DualScalars {
    pub fn from_slope(k: RegularizationIndex, slope: f64) -> Self {
        let kv = k.get();
        let xi = 0.5 * kv * (slope * slope - 1.0);
        let lambda = xi.exp();
        Self { theta: lambda * slope, lambda, zeta: lambda / kv, slope, xi }
    }

    pub fn from_stress(k: RegularizationIndex, theta: f64) -> Result<Self> {
        let slope = slope_from_stress(k, theta)?;
        let mut out = Self::from_slope(k, slope);
        // Keep the caller's stress rather than the reconstructed one.
        out.theta = theta;
        Ok(out)
    }
}

/// Regularized cost `e^{k(s²-1)/2} / k`, evaluated in log space.
///
/// Lies in `(0, 1/k]` for `|s| <= 1`; overflows to `+inf` for large `|s| > 1`.
pub fn regularized_cost(k: RegularizationIndex, s: f64) -> f64 {
    let kv = k.get();
    (0.5 * kv * (s * s - 1.0) - kv.ln()).exp()
}

/// Stress generated by a slope, `s e^{k(s²-1)/2}`.
pub fn stress_from_slope(k: RegularizationIndex, s: f64) -> f64 {
    s * (0.5 * k.get() * (s * s - 1.0)).exp()
}

/// Conjugate energy `ζ (ln(kζ) - 1)` without the `ζ ∈ (0, 1/k]` check.
pub fn psi_star_unchecked(k: RegularizationIndex, zeta: f64) -> f64 {
    zeta * ((k.get() * zeta).ln() - 1.0)
}

/// Conjugate energy `ζ (ln(kζ) - 1)` for `ζ ∈ (0, 1/k]`.
pub fn psi_star(k: RegularizationIndex, zeta: f64) -> Result<f64> {
    let cap = 1.0 / k.get();
    if !(zeta > 0.0 && zeta <= cap * (1.0 + BAND_SLACK)) {
        return Err(Error::Domain(format!("zeta = {zeta} outside (0, {cap}]")));
    }
    Ok(psi_star_unchecked(k, zeta))
}

fn check_band(k: RegularizationIndex, lambda: f64) -> Result<()> {
    let floor = k.lambda_floor();
    if !(lambda >= floor * (1.0 - BAND_SLACK) && lambda <= 1.0 + BAND_SLACK) {
        return Err(Error::Domain(format!("lambda = {lambda} outside [{floor}, 1] for k = {}", k.get())));
    }
    Ok(())
}

fn squared_stress_raw(k: RegularizationIndex, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    (lambda * lambda * (1.0 + 2.0 / k.get() * lambda.ln())).max(0.0)
}

/// `λ² ln(e λ^{2/k}) = λ² (1 + (2/k) ln λ)`: the squared stress carried by λ.
///
/// Strictly increasing on `[e^{-k/2}, 1]`, from 0 to 1.
pub fn squared_stress(k: RegularizationIndex, lambda: f64) -> Result<f64> {
    check_band(k, lambda)?;
    Ok(squared_stress_raw(k, lambda))
}

/// Inverse of [`squared_stress`] on `[e^{-k/2}, 1]`.
///
/// Solved for `ln λ`, which keeps the answer relatively accurate for tiny
/// squared stresses. Returns zero where the band floor itself underflows.
pub fn lambda_from_squared_stress(k: RegularizationIndex, y: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::Domain(format!("squared stress {y} outside [0, 1]")));
    }
    let kv = k.get();
    if y == 0.0 {
        return Ok(k.lambda_floor());
    }
    if y == 1.0 {
        return Ok(1.0);
    }
    let bracket = Bracket::new(-0.5 * kv, 0.0)?;
    let tol = inner_tol(4.0 * f64::EPSILON * (0.5 * kv).max(1.0));
    let log_lambda = find_root_monotone(|l| (2.0 * l).exp() * (1.0 + 2.0 * l / kv) - y, bracket, &tol)?;
    Ok(log_lambda.exp())
}

/// Slope `s ∈ [-1, 1]` with `s e^{k(s²-1)/2} = θ`.
///
/// Solved directly on a positive bracket and mirrored, so the result is an
/// exactly odd function of θ. For `k > 50` the equation is taken in the form
/// `ln s + k(s²-1)/2 = ln|θ|`, which stays well scaled when `e^{-k/2}`
/// underflows.
pub fn slope_from_stress(k: RegularizationIndex, theta: f64) -> Result<f64> {
    let a = theta.abs();
    if !(a <= 1.0) {
        return Err(Error::InfeasibleStress { theta });
    }
    if a == 0.0 {
        return Ok(0.0);
    }
    if a == 1.0 {
        return Ok(theta.signum());
    }
    let kv = k.get();
    // g(a) <= a and g(2a e^{k/2}) >= a, with g increasing. The factor 2 keeps
    // the upper end strictly on the far side after rounding when a is tiny.
    let hi = (2.0 * a * (0.5 * kv).exp()).min(1.0);
    let bracket = Bracket::new(a, hi)?;
    let tol = inner_tol(4.0 * f64::EPSILON * hi);
    let s = if kv > LOG_FORM_K {
        let target = a.ln();
        find_root_monotone(|s| s.ln() + 0.5 * kv * (s * s - 1.0) - target, bracket, &tol)?
    } else {
        find_root_monotone(|s| s * (0.5 * kv * (s * s - 1.0)).exp() - a, bracket, &tol)?
    };
    Ok(s.copysign(theta))
}

/// Positive slope `s` with `s e^{k(s²-1)/2} = e^{-τ}`, for any `τ >= 0`.
///
/// Solved for `ln s`, so nothing under- or overflows even when `e^{-τ}` or
/// `e^{-k/2}` do.
pub fn slope_from_log_stress(k: RegularizationIndex, tau: f64) -> Result<f64> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::Domain(format!("log stress {tau} must be finite and >= 0")));
    }
    if tau == 0.0 {
        return Ok(1.0);
    }
    let kv = k.get();
    let hi = (0.5 * kv - tau + std::f64::consts::LN_2).min(0.0);
    let bracket = Bracket::new(-tau, hi)?;
    let tol = inner_tol(4.0 * f64::EPSILON * tau.max(1.0));
    let log_s = find_root_monotone(|l| l + 0.5 * kv * ((2.0 * l).exp() - 1.0) + tau, bracket, &tol)?;
    Ok(log_s.exp())
}

/// `λ = E⁻¹(θ²)`, the scaled dual variable matching a stress.
pub fn lambda_from_stress(k: RegularizationIndex, theta: f64) -> Result<f64> {
    if !(theta.abs() <= 1.0) {
        return Err(Error::InfeasibleStress { theta });
    }
    if theta == 0.0 {
        return Ok(k.lambda_floor());
    }
    lambda_from_squared_stress(k, (theta * theta).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(v: f64) -> RegularizationIndex {
        RegularizationIndex::new(v).unwrap()
    }

    /// Plain bisection on an increasing function, independent of the solver.
    fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let m = 0.5 * (lo + hi);
            if g(m) < 0.0 {
                lo = m;
            } else {
                hi = m;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn index_validation() {
        assert!(RegularizationIndex::new(0.5).is_err());
        assert!(RegularizationIndex::new(f64::INFINITY).is_err());
        assert_eq!(k(1.0).get(), 1.0);
    }

    #[test]
    fn regularized_cost_examples() {
        for kv in [1.0, 3.0, 64.0, 4096.0] {
            assert!((regularized_cost(k(kv), 1.0) - 1.0 / kv).abs() < 1e-15);
            assert!((regularized_cost(k(kv), -1.0) - 1.0 / kv).abs() < 1e-15);
        }
        assert!((regularized_cost(k(2.0), 0.0) - (-1.0f64).exp() / 2.0).abs() < 1e-15);
        assert!((regularized_cost(k(2.0), 0.0) - 0.18394).abs() < 1e-5);
        let mut prev = f64::INFINITY;
        for kv in [1.0, 4.0, 16.0, 64.0, 256.0] {
            let h = regularized_cost(k(kv), 0.5);
            assert!(h <= 1.0 / kv && h < prev);
            prev = h;
        }
        assert_eq!(regularized_cost(k(4096.0), 2.0), f64::INFINITY);
    }

    #[test]
    fn psi_star_examples() {
        let kk = k(3.0);
        assert!((psi_star(kk, 1.0 / 3.0).unwrap() + 1.0 / 3.0).abs() < 1e-15);
        assert!(psi_star_unchecked(kk, std::f64::consts::E / 3.0).abs() < 1e-15);
        assert!(psi_star(kk, std::f64::consts::E / 3.0).is_err());
        assert!(psi_star(kk, 0.0).is_err());
        let oracle = 0.25 * (0.5f64.ln() - 1.0);
        assert!((psi_star(k(2.0), 0.25).unwrap() - oracle).abs() < 1e-15);
        assert!((oracle + 0.42329).abs() < 1e-5);
    }

    #[test]
    fn squared_stress_examples() {
        for kv in [1.0, 2.0, 8.0, 100.0] {
            assert!((squared_stress(k(kv), 1.0).unwrap() - 1.0).abs() < 1e-15);
            let floor = (-0.5 * kv).exp();
            assert!(squared_stress(k(kv), floor).unwrap().abs() < 1e-15);
        }
        let oracle = 0.64 * (1.0 + 2.0 * 0.8f64.ln());
        assert!((squared_stress(k(1.0), 0.8).unwrap() - oracle).abs() < 1e-15);
        assert!((oracle - 0.35437).abs() < 1e-5);
        assert!(squared_stress(k(1.0), 0.5).is_err());
        assert!(squared_stress(k(1.0), 1.1).is_err());
    }

    #[test]
    fn squared_stress_inverse_examples() {
        assert_eq!(lambda_from_squared_stress(k(5.0), 1.0).unwrap(), 1.0);
        assert_eq!(lambda_from_squared_stress(k(5.0), 0.0).unwrap(), (-2.5f64).exp());
        let oracle = bisect(|x| x * x * (1.0 + x.ln()) - 0.25, (-1.0f64).exp(), 1.0);
        let got = lambda_from_squared_stress(k(2.0), 0.25).unwrap();
        assert!((got - oracle).abs() < 1e-13);
        assert!((got - 0.6568).abs() < 5e-5);
        assert!(lambda_from_squared_stress(k(2.0), 1.5).is_err());
    }

    #[test]
    fn slope_examples() {
        for kv in [1.0, 2.0, 60.0, 4096.0] {
            assert_eq!(slope_from_stress(k(kv), 0.0).unwrap(), 0.0);
            assert_eq!(slope_from_stress(k(kv), 1.0).unwrap(), 1.0);
            assert_eq!(slope_from_stress(k(kv), -1.0).unwrap(), -1.0);
        }
        let oracle = bisect(|s| s * (s * s - 1.0).exp() - 0.5, 0.0, 1.0);
        let got = slope_from_stress(k(2.0), 0.5).unwrap();
        assert!((got - oracle).abs() < 1e-14);
        assert!((got - 0.7613).abs() < 5e-5);
        assert!(matches!(slope_from_stress(k(2.0), 1.0001), Err(Error::InfeasibleStress { .. })));
        assert!(slope_from_stress(k(2.0), f64::NAN).is_err());
    }

    #[test]
    fn lambda_examples() {
        for kv in [1.0, 2.0, 40.0] {
            assert_eq!(lambda_from_stress(k(kv), 0.0).unwrap(), (-0.5 * kv).exp());
            assert_eq!(lambda_from_stress(k(kv), 1.0).unwrap(), 1.0);
            assert_eq!(lambda_from_stress(k(kv), -1.0).unwrap(), 1.0);
        }
        let lam = lambda_from_stress(k(2.0), 0.5).unwrap();
        let s = slope_from_stress(k(2.0), 0.5).unwrap();
        assert!((lam - 0.6568).abs() < 5e-5);
        assert!((lam * s - 0.5).abs() < 1e-10);
    }

    #[test]
    fn large_k_slope_is_well_conditioned() {
        let kk = k(4096.0);
        for theta in [1e-300, 1e-17, 1e-3, 0.3, 0.999_999] {
            let s = slope_from_stress(kk, theta).unwrap();
            assert!(s > 0.0 && s <= 1.0);
            // ln form residual
            let r = s.ln() + 2048.0 * (s * s - 1.0) - theta.ln();
            assert!(r.abs() < 1e-9, "theta {theta}: residual {r}");
        }
    }

    #[test]
    fn log_stress_slope_matches_direct_solve() {
        for kv in [1.0, 8.0, 64.0, 1024.0] {
            for tau in [0.01f64, 0.7, 3.0, 20.0, 100.0] {
                let theta = (-tau).exp();
                let direct = slope_from_stress(k(kv), theta).unwrap();
                let logged = slope_from_log_stress(k(kv), tau).unwrap();
                assert!(
                    (direct - logged).abs() <= 1e-12 * direct.max(1e-300) + 1e-300,
                    "k {kv} tau {tau}: {direct} vs {logged}"
                );
            }
        }
    }

    #[test]
    fn log_stress_slope_beyond_underflow() {
        // e^{-3000} underflows; the slope ln s ≈ k/2 - τ does not.
        let s = slope_from_log_stress(k(4096.0), 3000.0).unwrap();
        let expected = (2048.0f64 - 3000.0).exp();
        assert!(s == 0.0 && expected == 0.0);
        let s = slope_from_log_stress(k(4096.0), 2070.0).unwrap();
        assert!((s.ln() - (2048.0 - 2070.0)).abs() < 1e-9);
        assert_eq!(slope_from_log_stress(k(4.0), 0.0).unwrap(), 1.0);
        assert!(slope_from_log_stress(k(4.0), -1.0).is_err());
    }

    #[test]
    fn small_squared_stress_inverse_is_relatively_accurate() {
        // At k = 1024 the stress near the floor squares to zero in f64, so the
        // check runs where θ² is still representable.
        let kv = k(64.0);
        for s in [1e-3, 0.1, 0.5] {
            let d = DualScalars::from_slope(kv, s);
            let lam = lambda_from_stress(kv, d.theta).unwrap();
            assert!((lam / d.lambda - 1.0).abs() < 1e-10, "s {s}: {lam} vs {}", d.lambda);
        }
    }

    #[test]
    fn dual_scalars_relations() {
        let kk = k(6.0);
        for s in [-1.0, -0.4, 0.0, 0.3, 0.9] {
            let d = DualScalars::from_slope(kk, s);
            assert!((d.lambda - 6.0 * d.zeta).abs() < 1e-15);
            assert!((d.theta - d.lambda * d.slope).abs() < 1e-15);
            assert!(d.xi <= 0.0);
            assert!((d.lambda - d.xi.exp()).abs() < 1e-15);
            assert!(d.theta.abs() <= 1.0);
        }
        let d = DualScalars::from_stress(kk, -0.25).unwrap();
        assert_eq!(d.theta, -0.25);
        assert!((d.lambda * d.slope + 0.25).abs() < 1e-13);
    }

    #[test]
    fn dae_identity_by_substitution() {
        for kv in [1.0, 2.0, 8.0, 32.0] {
            let kk = k(kv);
            for i in 0..=1000 {
                let s = -1.0 + 2.0 * i as f64 / 1000.0;
                let lam = (0.5 * kv * (s * s - 1.0)).exp();
                let lhs = squared_stress(kk, lam).unwrap();
                let rhs = (s * lam).powi(2);
                // 1 + (2/k) ln λ cancels near s = 0, so only an absolute bound is meaningful.
                assert!((lhs - rhs).abs() <= 1e-12, "k={kv} s={s}");
            }
        }
    }

    #[test]
    fn legendre_consistency() {
        for kv in [1.0, 4.0, 32.0] {
            let kk = k(kv);
            for i in 0..=200 {
                let xi = -kv * i as f64 / 200.0;
                let zeta = xi.exp() / kv;
                let lhs = psi_star(kk, zeta).unwrap() + xi.exp() / kv;
                assert!((lhs - xi * zeta).abs() <= 1e-12, "k={kv} xi={xi}");
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn any_k() -> impl Strategy<Value = f64> {
            prop_oneof![1.0f64..8.0, 8.0f64..64.0, 64.0f64..1024.0]
        }

        proptest! {
            #[test]
            fn inverse_round_trip(kv in any_k(), t in 0.0f64..=1.0) {
                let kk = k(kv);
                let floor = kk.lambda_floor();
                let lam = floor + t * (1.0 - floor);
                let y = squared_stress(kk, lam).unwrap();
                let back = lambda_from_squared_stress(kk, y).unwrap();
                prop_assert!((back - lam).abs() <= 1e-9, "lam {lam} back {back}");
            }

            #[test]
            fn odd_and_in_range(kv in any_k(), theta in -1.0f64..=1.0) {
                let kk = k(kv);
                let s = slope_from_stress(kk, theta).unwrap();
                prop_assert_eq!(slope_from_stress(kk, -theta).unwrap(), -s);
                prop_assert!((-1.0..=1.0).contains(&s));
                let lam = lambda_from_stress(kk, theta).unwrap();
                prop_assert!(lam >= kk.lambda_floor() * (1.0 - 1e-12) && lam <= 1.0);
                prop_assert!((lam * s - theta).abs() <= 1e-10);
                prop_assert!((stress_from_slope(kk, s) - theta).abs() <= 1e-12);
            }

            #[test]
            fn monotone_maps(kv in any_k(), a in -1.0f64..1.0, gap in 1e-6f64..0.5) {
                let kk = k(kv);
                let b = (a + gap).min(1.0);
                prop_assert!(slope_from_stress(kk, a).unwrap() < slope_from_stress(kk, b).unwrap());
                let floor = kk.lambda_floor();
                let la = floor + (a + 1.0) / 2.0 * (1.0 - floor);
                let lb = floor + (b + 1.0) / 2.0 * (1.0 - floor);
                prop_assert!(squared_stress(kk, la).unwrap() < squared_stress(kk, lb).unwrap());
            }
        }
    }
}
