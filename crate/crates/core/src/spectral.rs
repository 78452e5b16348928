//! Level sets of the difference spectrum `E~_{beta,m} = E_beta - E_{beta+m}`
//! and the exact value of
//!
//! ```text
//! J_m = (tau/2) ∫ dE |Omega_m(E)|^2,   Omega_m(E) = { beta : |E - E~_{beta,m}| < 1/tau }.
//! ```
//!
//! `|Omega_m(E)|` is a step function whose breakpoints are the levels
//! shifted by `±1/tau`, so `J_m` is a finite sum over the sorted breakpoints.

use std::f64::consts::PI;

use thiserror::Error;

use crate::bounds::BoundReport;
use crate::lattice::{Lattice, MomentumIndex};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("the level set of m = 0 is degenerate at zero")]
    ZeroMomentum,
    #[error("tau must be positive, got {0}")]
    BadTau(f64),
    #[error("m = {m} has {got} components, lattice dimension is {dim}")]
    DimensionMismatch { m: String, got: usize, dim: usize },
}

/// `C_m = 4 sin(pi m / L)`.
pub fn c_m(m: i64, size: usize) -> f64 {
    4.0 * (PI * m as f64 / size as f64).sin()
}

/// One-dimensional level `C_m sin(2 pi (beta + m/2) / L)`.
pub fn level_1d(beta: i64, m: i64, size: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    c_m(m, size) * (2.0 * PI * (beta as f64 + m as f64 / 2.0) / size as f64).sin()
}

/// Sorted levels `{E~_{beta,m}}` with multiplicity, one per `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSet {
    pub m: MomentumIndex,
    pub values: Vec<f64>,
}

pub fn levels(m: &MomentumIndex, lattice: Lattice) -> Result<LevelSet, SpectralError> {
    if m.0.len() != lattice.dim {
        return Err(SpectralError::DimensionMismatch { m: m.to_string(), got: m.0.len(), dim: lattice.dim });
    }
    if m.is_zero() {
        return Err(SpectralError::ZeroMomentum);
    }
    let half = lattice.half();
    let mut values = vec![0.0];
    for &mu in &m.0 {
        let axis: Vec<f64> = (-half..=half).map(|b| level_1d(b, mu, lattice.size)).collect();
        values = values.iter().flat_map(|v| axis.iter().map(move |a| v + a)).collect();
    }
    values.sort_by(f64::total_cmp);
    Ok(LevelSet { m: m.clone(), values })
}

impl LevelSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// `|Omega_m(E)|` by binary search on the sorted levels.
    pub fn omega_count(&self, energy: f64, tau: f64) -> usize {
        let r = 1.0 / tau;
        // same interval endpoints v ± r as the profile, so both agree exactly
        let lo = self.values.partition_point(|&v| v + r <= energy);
        let hi = self.values.partition_point(|&v| v - r < energy);
        hi.saturating_sub(lo)
    }
}

/// `|omega_m(x, delta)| = |{ beta : |x - sin(2 pi (beta + m/2) / L)| < delta }|`
/// by exhaustive counting, the rescaled count with `x = E / C_m` and
/// `delta = 1 / (|C_m| tau)`.
pub fn omega_rescaled(size: usize, m: i64, x: f64, delta: f64) -> usize {
    let half = (size / 2) as i64;
    (-half..=half).filter(|&b| (x - (2.0 * PI * (b as f64 + m as f64 / 2.0) / size as f64).sin()).abs() < delta).count()
}

/// Piecewise-constant `E -> |Omega_m(E)|`: `counts[i]` holds on
/// `(breakpoints[i], breakpoints[i+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralProfile {
    pub breakpoints: Vec<f64>,
    pub counts: Vec<u32>,
    /// Intervals closing at each breakpoint.
    ends: Vec<u32>,
    pub tau: f64,
}

impl SpectralProfile {
    pub fn new(levels: &LevelSet, tau: f64) -> Result<Self, SpectralError> {
        if !(tau > 0.0) {
            return Err(SpectralError::BadTau(tau));
        }
        Ok(Self::from_sorted(&levels.values, 1.0, tau))
    }

    /// Profile of the levels `scale * sorted[i]` (`scale > 0`).
    pub fn from_sorted(sorted: &[f64], scale: f64, tau: f64) -> Self {
        let r = 1.0 / tau;
        let mut breakpoints = Vec::with_capacity(2 * sorted.len());
        let mut counts = Vec::with_capacity(2 * sorted.len());
        let mut ends = Vec::with_capacity(2 * sorted.len());
        let (mut i, mut j) = (0, 0);
        let mut count: u32 = 0;
        let n = sorted.len();
        while j < n {
            let start = if i < n { scale * sorted[i] - r } else { f64::INFINITY };
            let end = scale * sorted[j] + r;
            let pos = start.min(end);
            let mut closing = 0;
            while i < n && scale * sorted[i] - r == pos {
                count += 1;
                i += 1;
            }
            while j < n && scale * sorted[j] + r == pos {
                count -= 1;
                closing += 1;
                j += 1;
            }
            if breakpoints.last() == Some(&pos) {
                *counts.last_mut().unwrap() = count;
                *ends.last_mut().unwrap() += closing;
            } else {
                breakpoints.push(pos);
                counts.push(count);
                ends.push(closing);
            }
        }
        SpectralProfile { breakpoints, counts, ends, tau }
    }

    /// Step value at `e`; at a breakpoint the open intervals ending or
    /// starting there are excluded.
    pub fn value_at(&self, e: f64) -> u32 {
        let k = self.breakpoints.partition_point(|&b| b <= e);
        if k == 0 {
            return 0;
        }
        if self.breakpoints[k - 1] == e {
            let left = if k >= 2 { self.counts[k - 2] } else { 0 };
            left - self.ends[k - 1]
        } else {
            self.counts[k - 1]
        }
    }

    /// `(tau/2) ∫ |Omega|^p dE` for `p = 1, 2`.
    fn moment(&self, p: i32) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.breakpoints.len().saturating_sub(1) {
            let c = self.counts[k] as f64;
            acc += c.powi(p) * (self.breakpoints[k + 1] - self.breakpoints[k]);
        }
        0.5 * self.tau * acc
    }

    pub fn jm(&self) -> f64 {
        self.moment(2)
    }

    /// `(tau/2) ∫ |Omega| dE`, equal to the number of levels.
    pub fn sum_rule(&self) -> f64 {
        self.moment(1)
    }

    pub fn total_variation(&self) -> u64 {
        let mut prev = 0i64;
        let mut tv = 0;
        for &c in &self.counts {
            tv += (c as i64 - prev).unsigned_abs();
            prev = c as i64;
        }
        tv + prev.unsigned_abs()
    }
}

/// Streaming `J = (tau/2) sum count^2 * width` over the merged breakpoints
/// of `scale * sorted ± 1/tau`, without materialising the profile.
fn jm_streaming(sorted: &[f64], scale: f64, tau: f64) -> f64 {
    let r = 1.0 / tau;
    let n = sorted.len();
    let (mut i, mut j) = (0, 0);
    let mut count: f64 = 0.0;
    let mut prev = f64::NEG_INFINITY;
    let mut acc = 0.0;
    while j < n {
        let start = if i < n { scale * sorted[i] - r } else { f64::INFINITY };
        let end = scale * sorted[j] + r;
        let pos = start.min(end);
        if count > 0.0 {
            acc += count * count * (pos - prev);
        }
        prev = pos;
        if start <= end {
            count += 1.0;
            i += 1;
        } else {
            count -= 1.0;
            j += 1;
        }
    }
    0.5 * tau * acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct JmValue {
    pub m: MomentumIndex,
    pub tau: f64,
    pub value: f64,
    pub sum_rule: f64,
    pub levels: usize,
}

pub fn jm_exact(m: &MomentumIndex, tau: f64, lattice: Lattice) -> Result<JmValue, SpectralError> {
    let set = levels(m, lattice)?;
    let profile = SpectralProfile::new(&set, tau)?;
    Ok(JmValue { m: m.clone(), tau, value: profile.jm(), sum_rule: profile.sum_rule(), levels: set.len() })
}

/// All one-dimensional `J_m` for `m = 1..=(L-1)/2` at one `tau`.
///
/// The multiset `{sin(2 pi (beta + m/2) / L)}` depends only on the parity
/// of `m`, so two sorts serve every `m`.
#[derive(Debug, Clone)]
pub struct Jm1d {
    pub size: usize,
    pub tau: f64,
    /// `values[m - 1] = J_m`.
    pub values: Vec<f64>,
}

impl Jm1d {
    pub fn compute(size: usize, tau: f64) -> Self {
        Self::compute_up_to(size, tau, size / 2)
    }

    pub fn compute_up_to(size: usize, tau: f64, m_max: usize) -> Self {
        use rayon::prelude::*;
        let half = (size / 2) as i64;
        let sorted_for = |shift: f64| {
            let mut v: Vec<f64> = (-half..=half).map(|b| (2.0 * PI * (b as f64 + shift) / size as f64).sin()).collect();
            v.sort_by(f64::total_cmp);
            v
        };
        let even = sorted_for(0.0);
        let odd = sorted_for(0.5);
        let values = (1..=m_max)
            .into_par_iter()
            .map(|m| {
                let base = if m % 2 == 0 { &even } else { &odd };
                jm_streaming(base, c_m(m as i64, size), tau)
            })
            .collect();
        Jm1d { size, tau, values }
    }

    pub fn get(&self, m: i64) -> f64 {
        self.values[m.unsigned_abs() as usize - 1]
    }
}

/// Level-count bound `L delta / sqrt(1 - min(|x|, 1-delta)^2) + 2` on
/// `|omega_m(x, delta)|`; zero outside `|x| <= 1 + delta`.
pub fn lemma5_bound(size: usize, x: f64, delta: f64) -> f64 {
    if x.abs() > 1.0 + delta {
        return 0.0;
    }
    let y = x.abs().min(1.0 - delta);
    size as f64 * delta / (1.0 - y * y).sqrt() + 2.0
}

/// `L^2 log(|C_m| tau) / (|C_m| tau) + 4 L`.
pub fn lemma6_bound(m: i64, tau: f64, size: usize) -> f64 {
    let x = c_m(m, size).abs() * tau;
    let l = size as f64;
    l * l * x.ln() / x + 4.0 * l
}

/// The regime in which the one-dimensional bounds are stated.
pub fn in_hypothesis(size: usize, tau: f64) -> bool {
    size > 10_000 && tau > 2.0 * size as f64
}

pub fn lemma6_check(m: i64, tau: f64, size: usize) -> BoundReport {
    let lat = Lattice::new(1, size).expect("odd size");
    let j = jm_exact(&MomentumIndex(vec![m]), tau, lat).expect("m != 0");
    BoundReport::new("lemma6", j.value, lemma6_bound(m, tau, size))
        .hypothesis(in_hypothesis(size, tau))
        .param("d", 1)
        .param("L", size)
        .param("tau", tau)
        .param("m", m)
}

/// Index of the largest-magnitude component of `m`, lowest axis on ties.
pub fn dominant_axis(m: &MomentumIndex) -> usize {
    let mut best = 0;
    for (i, &c) in m.0.iter().enumerate() {
        if c.abs() > m.0[best].abs() {
            best = i;
        }
    }
    best
}

/// Exact `d`-dimensional `J_m` against `(V^2 / L^2) J_{||m||_inf}` in one
/// dimension. Equality holds whenever `m` has a single nonzero component,
/// so the comparison carries a relative rounding tolerance.
pub fn lemma7_check(m: &MomentumIndex, tau: f64, lattice: Lattice) -> Result<BoundReport, SpectralError> {
    let exact = jm_exact(m, tau, lattice)?;
    let line = Lattice::new(1, lattice.size).expect("odd size");
    let top = m.0[dominant_axis(m)];
    let one_d = jm_exact(&MomentumIndex(vec![top]), tau, line)?;
    let v = lattice.volume() as f64;
    let l = lattice.size as f64;
    let rhs = v * v / (l * l) * one_d.value;
    Ok(BoundReport::new("lemma7", exact.value, rhs)
        .tolerance(1e-9 * rhs.abs())
        .hypothesis(in_hypothesis(lattice.size, tau))
        .param("d", lattice.dim)
        .param("L", lattice.size)
        .param("tau", tau)
        .param("m", m.to_string()))
}

/// `log delta + log(2 - delta) + 4 / (2 - delta)`, negative on `(0, 1/25]`.
pub fn small_delta_margin(delta: f64) -> f64 {
    delta.ln() + (2.0 - delta).ln() + 4.0 / (2.0 - delta)
}

/// `Arcsin(x + delta) - Arcsin(x - delta)` and its bound `2 sqrt 2 delta / sqrt(1 - x^2)`.
pub fn arcsin_gap(x: f64, delta: f64) -> (f64, f64) {
    let lhs = (x + delta).asin() - (x - delta).asin();
    let rhs = 2.0 * 2f64.sqrt() * delta / (1.0 - x * x).sqrt();
    (lhs, rhs)
}

/// `Y(theta, eps) = 8 (sin theta - sin(theta - eps))^2 / (4 - (sin theta + sin(theta - eps))^2) - eps^2`.
pub fn y_function(theta: f64, eps: f64) -> f64 {
    let (a, b) = (theta.sin(), (theta - eps).sin());
    8.0 * (a - b).powi(2) / (4.0 - (a + b).powi(2)) - eps * eps
}

/// Closed form of `dY/dtheta`.
pub fn y_derivative(theta: f64, eps: f64) -> f64 {
    let (a, b) = (theta.sin(), (theta - eps).sin());
    let den = 4.0 - (a + b).powi(2);
    -128.0 * (eps / 2.0).sin().powi(4) * (2.0 * theta - eps).sin() / (den * den)
}
