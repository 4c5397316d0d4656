//! Deterministic numerical kernels shared by every other module: globally
//! adaptive Simpson quadrature and a safeguarded bracketing root finder.
//!
//! Both kernels are pure functions of their inputs. Tolerances are passed in
//! explicitly so that callers can tighten them per use site.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hard cap on live quadrature segments in a single call.
const MAX_SEGMENTS: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error(
        "quadrature did not reach tolerance before depth exhaustion \
         (estimate {estimate}, error bound {error_bound})"
    )]
    QuadratureDepth { estimate: f64, error_bound: f64 },

    #[error("no sign change on bracket [{lo}, {hi}]: g(lo) = {g_lo}, g(hi) = {g_hi}")]
    NoSignChange { lo: f64, hi: f64, g_lo: f64, g_hi: f64 },

    #[error("non-finite evaluation {value} at x = {x}")]
    NonFinite { x: f64, value: f64 },

    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },

    #[error("invalid tolerances: {0}")]
    InvalidTolerance(String),

    #[error("root iteration limit reached with bracket [{lo}, {hi}]")]
    IterationLimit { lo: f64, hi: f64 },
}

/// Accuracy targets and work caps for the quadrature and root kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Absolute quadrature error target, scaled by `1 + |Q|`.
    pub quad_abs_tol: f64,
    /// Target width of the final root bracket.
    pub root_abs_tol: f64,
    pub max_quad_depth: u32,
    pub max_root_iters: u32,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { quad_abs_tol: 1e-10, root_abs_tol: 1e-12, max_quad_depth: 40, max_root_iters: 200 }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<(), NumericsError> {
        for (name, v) in [("quad_abs_tol", self.quad_abs_tol), ("root_abs_tol", self.root_abs_tol)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(NumericsError::InvalidTolerance(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        if self.max_quad_depth < 1 {
            return Err(NumericsError::InvalidTolerance("max_quad_depth must be >= 1".into()));
        }
        if self.max_root_iters < 1 {
            return Err(NumericsError::InvalidTolerance("max_root_iters must be >= 1".into()));
        }
        Ok(())
    }

    /// Copy with a different quadrature target.
    pub fn with_quad_tol(mut self, quad_abs_tol: f64) -> Self {
        self.quad_abs_tol = quad_abs_tol;
        self
    }

    /// Copy with a different root bracket target.
    pub fn with_root_tol(mut self, root_abs_tol: f64) -> Self {
        self.root_abs_tol = root_abs_tol;
        self
    }
}

/// A closed interval `[lo, hi]` with `lo < hi` handed to the root finder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
}

impl Bracket {
    pub fn new(lo: f64, hi: f64) -> Result<Self, NumericsError> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(NumericsError::InvalidInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    flm: f64,
    frm: f64,
    /// Simpson on the whole segment.
    coarse: f64,
    /// Composite Simpson on both halves.
    fine: f64,
    err: f64,
    depth: u32,
}

impl Segment {
    fn estimate(&self) -> f64 {
        self.fine + (self.fine - self.coarse) / 15.0
    }
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Segment {}

impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        // Worst error first; ties broken by position for determinism.
        self.err.total_cmp(&other.err).then_with(|| other.a.total_cmp(&self.a))
    }
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn eval_finite<F: FnMut(f64) -> f64>(f: &mut F, x: f64) -> Result<f64, NumericsError> {
    let v = f(x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(NumericsError::NonFinite { x, value: v })
    }
}

fn make_segment<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    depth: u32,
) -> Result<Segment, NumericsError> {
    let m = 0.5 * (a + b);
    let flm = eval_finite(f, 0.5 * (a + m))?;
    let frm = eval_finite(f, 0.5 * (m + b))?;
    let coarse = simpson(a, b, fa, fm, fb);
    let fine = simpson(a, m, fa, flm, fm) + simpson(m, b, fm, frm, fb);
    Ok(Segment { a, b, fa, fm, fb, flm, frm, coarse, fine, err: (fine - coarse).abs() / 15.0, depth })
}

/// Integrate `f` over `[lo, hi]`.
///
/// Returns `Q` with estimated `|Q - ∫f| <= quad_abs_tol * (1 + |Q|)`.
pub fn integrate<F: FnMut(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    tol: &Tolerances,
) -> Result<f64, NumericsError> {
    integrate_with_breaks(f, lo, hi, &[], tol)
}

/// Integrate `f` over `[lo, hi]` with known trouble spots (kinks, jumps in a
/// derivative) listed in `breaks`. Break points outside the open interval are
/// ignored. Refinement is global: the segment with the worst error estimate
/// is always split next, so the error budget flows to wherever it is needed.
pub fn integrate_with_breaks<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    breaks: &[f64],
    tol: &Tolerances,
) -> Result<f64, NumericsError> {
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(NumericsError::InvalidInterval { lo, hi });
    }
    if lo == hi {
        return Ok(0.0);
    }

    let mut knots: Vec<f64> = breaks.iter().copied().filter(|&x| x.is_finite() && x > lo && x < hi).collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    knots.insert(0, lo);
    knots.push(hi);

    let mut heap = BinaryHeap::new();
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let m = 0.5 * (a + b);
        let fa = eval_finite(&mut f, a)?;
        let fm = eval_finite(&mut f, m)?;
        let fb = eval_finite(&mut f, b)?;
        heap.push(make_segment(&mut f, a, b, fa, fm, fb, 0)?);
    }

    let mut frozen: Vec<Segment> = Vec::new();
    let mut total: f64 = heap.iter().map(Segment::estimate).sum();
    let mut total_err: f64 = heap.iter().map(|s| s.err).sum();

    loop {
        if total_err <= tol.quad_abs_tol * (1.0 + total.abs()) {
            // Re-sum from scratch to shed incremental drift before accepting.
            let exact_total: f64 = heap.iter().chain(frozen.iter()).map(Segment::estimate).sum();
            let exact_err: f64 = heap.iter().chain(frozen.iter()).map(|s| s.err).sum();
            if exact_err <= tol.quad_abs_tol * (1.0 + exact_total.abs()) {
                return Ok(exact_total);
            }
            total = exact_total;
            total_err = exact_err;
        }

        let Some(seg) = heap.pop() else {
            let estimate: f64 = frozen.iter().map(Segment::estimate).sum();
            let error_bound: f64 = frozen.iter().map(|s| s.err).sum();
            return Err(NumericsError::QuadratureDepth { estimate, error_bound });
        };

        let m = 0.5 * (seg.a + seg.b);
        if seg.depth >= tol.max_quad_depth || !(seg.a < m && m < seg.b) {
            frozen.push(seg);
            continue;
        }
        if heap.len() + frozen.len() >= MAX_SEGMENTS {
            let all = heap.iter().chain(frozen.iter()).chain(std::iter::once(&seg));
            let (estimate, error_bound) = all.fold((0.0, 0.0), |(q, e), s| (q + s.estimate(), e + s.err));
            return Err(NumericsError::QuadratureDepth { estimate, error_bound });
        }

        let left = make_segment(&mut f, seg.a, m, seg.fa, seg.flm, seg.fm, seg.depth + 1)?;
        let right = make_segment(&mut f, m, seg.b, seg.fm, seg.frm, seg.fb, seg.depth + 1)?;
        total += left.estimate() + right.estimate() - seg.estimate();
        total_err += left.err + right.err - seg.err;
        heap.push(left);
        heap.push(right);
    }
}

// ---------------------------------------------------------------------------
// Root finding
// ---------------------------------------------------------------------------

/// Outcome of a bracketed root solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootReport {
    pub root: f64,
    pub residual: f64,
    pub iterations: u32,
    /// Width of the last bracket (zero when an exact root was hit).
    pub width: f64,
}

/// Root of a monotone function on a sign-changing bracket.
pub fn find_root_monotone<F: FnMut(f64) -> f64>(
    g: F,
    bracket: Bracket,
    tol: &Tolerances,
) -> Result<f64, NumericsError> {
    find_root_monotone_report(g, bracket, tol).map(|r| r.root)
}

/// Like [`find_root_monotone`] but also returns iteration metadata.
///
/// Secant steps are taken while they keep halving the bracket; otherwise the
/// next step bisects. The returned root always lies inside `bracket`.
pub fn find_root_monotone_report<F: FnMut(f64) -> f64>(
    mut g: F,
    bracket: Bracket,
    tol: &Tolerances,
) -> Result<RootReport, NumericsError> {
    let (mut lo, mut hi) = (bracket.lo, bracket.hi);
    let mut g_lo = eval_finite(&mut g, lo)?;
    if g_lo == 0.0 {
        return Ok(RootReport { root: lo, residual: 0.0, iterations: 0, width: 0.0 });
    }
    let mut g_hi = eval_finite(&mut g, hi)?;
    if g_hi == 0.0 {
        return Ok(RootReport { root: hi, residual: 0.0, iterations: 0, width: 0.0 });
    }
    if g_lo.signum() == g_hi.signum() {
        return Err(NumericsError::NoSignChange { lo, hi, g_lo, g_hi });
    }

    let mut iterations = 0;
    let mut use_secant = true;
    let mut last_width = hi - lo;
    while hi - lo > tol.root_abs_tol {
        let mid = lo + 0.5 * (hi - lo);
        if !(lo < mid && mid < hi) {
            break;
        }
        if iterations >= tol.max_root_iters {
            return Err(NumericsError::IterationLimit { lo, hi });
        }
        iterations += 1;

        let mut x = mid;
        if use_secant {
            let s = lo - g_lo * (hi - lo) / (g_hi - g_lo);
            if s.is_finite() && s > lo && s < hi {
                // Keep a minimum step off the endpoints so the far side moves too.
                let nudge = 0.5 * tol.root_abs_tol;
                x = s.clamp(lo + nudge, hi - nudge);
                if !(lo < x && x < hi) {
                    x = mid;
                }
            }
        }

        let gx = eval_finite(&mut g, x)?;
        if gx == 0.0 {
            return Ok(RootReport { root: x, residual: 0.0, iterations, width: 0.0 });
        }
        if gx.signum() == g_lo.signum() {
            lo = x;
            g_lo = gx;
        } else {
            hi = x;
            g_hi = gx;
        }
        let width = hi - lo;
        use_secant = width <= 0.5 * last_width;
        last_width = width;
    }

    let (root, residual) = if g_lo.abs() <= g_hi.abs() { (lo, g_lo.abs()) } else { (hi, g_hi.abs()) };
    Ok(RootReport { root, residual, iterations, width: hi - lo })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn integrates_closed_forms() {
        let t = tol();
        assert_eq!(integrate(|_| 0.0, 0.0, 1.0, &t).unwrap(), 0.0);
        assert!((integrate(|_| 1.0, 2.0, 3.0, &t).unwrap() - 1.0).abs() < 1e-14);
        assert!((integrate(|x| 3.0 * x * x, 0.0, 0.5, &t).unwrap() - 0.125).abs() < 1e-14);
        let s = integrate(f64::sin, 0.0, std::f64::consts::PI, &t).unwrap();
        assert!((s - 2.0).abs() < 1e-10);
    }

    #[test]
    fn empty_and_reversed_intervals() {
        let t = tol();
        assert_eq!(integrate(|x| x, 1.0, 1.0, &t).unwrap(), 0.0);
        assert!(matches!(integrate(|x| x, 1.0, 0.0, &t), Err(NumericsError::InvalidInterval { .. })));
    }

    #[test]
    fn kink_is_handled_with_and_without_break() {
        let t = tol();
        let f = |x: f64| (x - 0.3).abs();
        let exact = 0.5 * (0.3f64.powi(2) + 0.7f64.powi(2));
        let with_break = integrate_with_breaks(f, 0.0, 1.0, &[0.3], &t).unwrap();
        assert!((with_break - exact).abs() < 1e-13);
        let without = integrate(f, 0.0, 1.0, &t).unwrap();
        assert!((without - exact).abs() < 1e-9);
    }

    #[test]
    fn log_singular_derivative_converges() {
        // ∫_0^1 x ln x dx = -1/4, and ∫_0^1 sqrt(x) dx = 2/3.
        let t = tol();
        let q = integrate(|x: f64| if x == 0.0 { 0.0 } else { x * x.ln() }, 0.0, 1.0, &t).unwrap();
        assert!((q + 0.25).abs() < 1e-9);
        let q = integrate(f64::sqrt, 0.0, 1.0, &t).unwrap();
        assert!((q - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn jump_exhausts_depth_with_tight_cap() {
        let t = Tolerances { max_quad_depth: 3, ..tol() };
        let err = integrate(|x| if x < 0.3 { 0.0 } else { 1.0 }, 0.0, 1.0, &t).unwrap_err();
        match err {
            NumericsError::QuadratureDepth { estimate, error_bound } => {
                assert!((estimate - 0.7).abs() < 0.2);
                assert!(error_bound > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_integrand_is_reported() {
        let err = integrate(|x| 1.0 / x, 0.0, 1.0, &tol()).unwrap_err();
        assert!(matches!(err, NumericsError::NonFinite { .. }));
    }

    #[test]
    fn root_examples() {
        let t = tol();
        let r = find_root_monotone(|x| x - 0.5, Bracket::new(0.0, 1.0).unwrap(), &t).unwrap();
        assert!((r - 0.5).abs() < 1e-12);
        let r = find_root_monotone(|x| x * x * x - 0.125, Bracket::new(0.0, 1.0).unwrap(), &t).unwrap();
        assert!((r - 0.5).abs() < 1e-12);
    }

    /// Plain bisection used as an oracle for the accelerated solver.
    fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let g_lo = g(lo);
        while hi - lo > 1e-14 {
            let m = 0.5 * (lo + hi);
            if g(m).signum() == g_lo.signum() {
                lo = m;
            } else {
                hi = m;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn root_of_e2_matches_bisection_oracle() {
        let g = |x: f64| x * x * (1.0 + x.ln()) - 0.25;
        let oracle = bisect(g, (-1.0f64).exp(), 1.0);
        assert!((oracle - 0.6568).abs() < 5e-5, "oracle {oracle}");
        let r = find_root_monotone(g, Bracket::new((-1.0f64).exp(), 1.0).unwrap(), &tol()).unwrap();
        assert!((r - oracle).abs() < 1e-12);
    }

    #[test]
    fn root_errors() {
        let t = tol();
        let b = Bracket::new(0.0, 1.0).unwrap();
        assert!(matches!(find_root_monotone(|x| x + 1.0, b, &t), Err(NumericsError::NoSignChange { .. })));
        assert!(matches!(
            find_root_monotone(|x| if x > 0.7 { f64::NAN } else { x - 0.9 }, b, &t),
            Err(NumericsError::NonFinite { .. })
        ));
        assert!(Bracket::new(1.0, 1.0).is_err());
    }

    #[test]
    fn root_exact_hit_on_endpoint() {
        let r = find_root_monotone(|x| x, Bracket::new(0.0, 1.0).unwrap(), &tol()).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn secant_stagnation_still_converges_quickly() {
        // Strongly convex: pure regula falsi would stall on one side.
        let g = |x: f64| x.powi(9) - 1e-9;
        let rep = find_root_monotone_report(g, Bracket::new(0.0, 1.0).unwrap(), &tol()).unwrap();
        assert!((rep.root - 0.1).abs() < 1e-11);
        assert!(rep.iterations < 100);
    }

    #[test]
    fn tolerance_validation() {
        assert!(tol().validate().is_ok());
        assert!(Tolerances { quad_abs_tol: 0.0, ..tol() }.validate().is_err());
        assert!(Tolerances { root_abs_tol: f64::NAN, ..tol() }.validate().is_err());
        assert!(Tolerances { max_root_iters: 0, ..tol() }.validate().is_err());
        assert!(Tolerances { max_quad_depth: 0, ..tol() }.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn integrate_is_additive(a in -2.0f64..0.0, t1 in 0.0f64..1.0, len in 0.1f64..3.0,
                                     w in 0.5f64..6.0) {
                let tol = Tolerances::default();
                let c = a + len;
                let b = a + t1 * len;
                let f = |x: f64| (w * x).sin() + 0.3 * x * x;
                let whole = integrate(f, a, c, &tol).unwrap();
                let parts = integrate(f, a, b, &tol).unwrap() + integrate(f, b, c, &tol).unwrap();
                prop_assert!((whole - parts).abs() <= 3.0 * tol.quad_abs_tol);
            }

            #[test]
            fn root_stays_in_bracket(lo in -5.0f64..0.0, width in 0.01f64..5.0, frac in 0.0f64..1.0) {
                let hi = lo + width;
                let target = lo + frac * width;
                let r = find_root_monotone(|x| (x - target).powi(3),
                    Bracket::new(lo, hi).unwrap(), &Tolerances::default()).unwrap();
                prop_assert!(r >= lo && r <= hi);
            }

            #[test]
            fn kernels_are_deterministic(w in 1.5f64..10.0) {
                let tol = Tolerances::default();
                let f = |x: f64| (w * x).cos().abs();
                let q1 = integrate(f, 0.0, 1.0, &tol).unwrap();
                let q2 = integrate(f, 0.0, 1.0, &tol).unwrap();
                prop_assert_eq!(q1.to_bits(), q2.to_bits());
                let g = |x: f64| x.exp() - w;
                let b = Bracket::new(0.0, 3.0).unwrap();
                let r1 = find_root_monotone(g, b, &tol).unwrap();
                let r2 = find_root_monotone(g, b, &tol).unwrap();
                prop_assert_eq!(r1.to_bits(), r2.to_bits());
            }
        }
    }
}
