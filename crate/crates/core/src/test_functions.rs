//! Deterministic test-function families for the second variations and the
//! perturbation checks: scaled sine bumps and seeded random piecewise-linear
//! functions.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::density::TransportProblem;

pub trait TestFunction {
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// `amplitude · sin(mode π (x - lo) / (hi - lo))` on `[lo, hi]`, zero elsewhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SineBump {
    pub lo: f64,
    pub hi: f64,
    pub mode: u32,
    pub amplitude: f64,
}

impl SineBump {
    fn freq(&self) -> f64 {
        self.mode as f64 * PI / (self.hi - self.lo)
    }
}

impl TestFunction for SineBump {
    fn value(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return 0.0;
        }
        self.amplitude * (self.freq() * (x - self.lo)).sin()
    }

    fn derivative(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return 0.0;
        }
        self.amplitude * self.freq() * (self.freq() * (x - self.lo)).cos()
    }

    fn breakpoints(&self) -> Vec<f64> {
        vec![self.lo, self.hi]
    }
}

/// Linear interpolation through `(knots[i], values[i])`, zero outside the knots.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseLinear {
    fn cell(&self, x: f64) -> Option<usize> {
        let n = self.knots.len();
        if n < 2 || x < self.knots[0] || x > self.knots[n - 1] {
            return None;
        }
        Some(self.knots.partition_point(|&k| k <= x).saturating_sub(1).min(n - 2))
    }

    pub fn max_abs_derivative(&self) -> f64 {
        self.knots
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(k, v)| ((v[1] - v[0]) / (k[1] - k[0])).abs())
            .fold(0.0, f64::max)
    }

    /// Random function on `[lo, hi]` with `interior` random knots and values
    /// in `[-1, 1]`; pinned to zero at both ends when `pinned`.
    pub fn random(rng: &mut impl Rng, lo: f64, hi: f64, interior: usize, pinned: bool) -> Self {
        let mut knots: Vec<f64> = (0..interior).map(|_| rng.gen_range(lo..hi)).collect();
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        knots.insert(0, lo);
        knots.push(hi);
        let n = knots.len();
        let values = (0..n)
            .map(|i| {
                let v = rng.gen_range(-1.0..=1.0);
                if pinned && (i == 0 || i == n - 1) {
                    0.0
                } else {
                    v
                }
            })
            .collect();
        Self { knots, values }
    }
}

impl TestFunction for PiecewiseLinear {
    fn value(&self, x: f64) -> f64 {
        self.cell(x).map_or(0.0, |i| {
            let (x0, x1) = (self.knots[i], self.knots[i + 1]);
            let t = (x - x0) / (x1 - x0);
            self.values[i] + t * (self.values[i + 1] - self.values[i])
        })
    }

    fn derivative(&self, x: f64) -> f64 {
        self.cell(x)
            .map_or(0.0, |i| (self.values[i + 1] - self.values[i]) / (self.knots[i + 1] - self.knots[i]))
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.knots.clone()
    }
}

/// One function per side; supports are disjoint so the pair is a plain sum.
#[derive(Debug, Clone, PartialEq)]
pub struct PerSide<T> {
    pub source: T,
    pub sink: T,
}

impl<T: TestFunction> TestFunction for PerSide<T> {
    fn value(&self, x: f64) -> f64 {
        self.source.value(x) + self.sink.value(x)
    }

    fn derivative(&self, x: f64) -> f64 {
        self.source.derivative(x) + self.sink.derivative(x)
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut b = self.source.breakpoints();
        b.extend(self.sink.breakpoints());
        b
    }
}

/// `ψ ≡ c` on both supports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant(pub f64);

impl TestFunction for Constant {
    fn value(&self, _x: f64) -> f64 {
        self.0
    }

    fn derivative(&self, _x: f64) -> f64 {
        0.0
    }
}

/// Sine bumps of modes `1..=modes` on both sides.
pub fn sine_family(problem: &TransportProblem, modes: u32) -> Vec<PerSide<SineBump>> {
    (1..=modes)
        .map(|mode| PerSide {
            source: SineBump { lo: problem.source.lo(), hi: problem.source.hi(), mode, amplitude: 1.0 },
            sink: SineBump { lo: problem.sink.lo(), hi: problem.sink.hi(), mode, amplitude: 1.0 },
        })
        .collect()
}

/// `count` seeded random piecewise-linear functions with 1 to 8 interior knots
/// per side. Pinned ones vanish at all four endpoints.
pub fn random_family(
    problem: &TransportProblem,
    count: usize,
    seed: u64,
    pinned: bool,
) -> Vec<PerSide<PiecewiseLinear>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let m = rng.gen_range(1..=8);
            let source =
                PiecewiseLinear::random(&mut rng, problem.source.lo(), problem.source.hi(), m, pinned);
            let m = rng.gen_range(1..=8);
            let sink = PiecewiseLinear::random(&mut rng, problem.sink.lo(), problem.sink.hi(), m, pinned);
            PerSide { source, sink }
        })
        .collect()
}
