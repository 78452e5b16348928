//! Inequality checks with computed, constant-free right-hand sides.
//!
//! Every check produces a [`BoundReport`]. A report is a violation only when
//! the inequality is a proved one, its hypotheses hold, and the margin is
//! below the stated tolerance; everything else is informational.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::lattice::{Lattice, LatticeConfig, MomentumIndex};
use crate::observables::{w1, WindowFunction};
use crate::spectral::{
    arcsin_gap, c_m, in_hypothesis, jm_exact, lemma5_bound, omega_rescaled, small_delta_margin, y_derivative,
    y_function, Jm1d,
};
use crate::states::ManyBody;
use crate::timeavg::{delta_a, noneq_fraction, time_average_spectral, TimeAvgError, TimeFractionReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    /// Absolute slack allowed for rounding, e.g. when the bound is attained.
    pub tolerance: f64,
    pub hypothesis_ok: bool,
    /// Whether the inequality is a theorem (as opposed to a reported ratio).
    pub proved: bool,
    pub parameters: BTreeMap<String, Value>,
}

impl BoundReport {
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        BoundReport {
            name: name.into(),
            lhs,
            rhs,
            margin: rhs - lhs,
            tolerance: 0.0,
            hypothesis_ok: true,
            proved: true,
            parameters: BTreeMap::new(),
        }
    }

    pub fn hypothesis(mut self, ok: bool) -> Self {
        self.hypothesis_ok = ok;
        self
    }

    pub fn tolerance(mut self, tol: f64) -> Self {
        self.tolerance = tol;
        self
    }

    pub fn informational(mut self) -> Self {
        self.proved = false;
        self
    }

    pub fn param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.parameters.insert(key.to_string(), value.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.margin >= -self.tolerance
    }

    pub fn violation(&self) -> bool {
        self.proved && self.hypothesis_ok && !self.passed()
    }
}

/// `<P_neq> <= sum_c <(rho_c - N/V)^2> / (epsilon rho_bar)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma3 {
    pub surrogate: f64,
    pub p_neq: Option<f64>,
}

pub fn lemma3_surrogate<S: ManyBody>(state: &S, t: f64) -> Lemma3 {
    let s = if t == 0.0 { None } else { Some(state.evolve(t)) };
    let s = s.as_ref().unwrap_or(state);
    Lemma3 { surrogate: s.noneq_surrogate(), p_neq: s.exact_p_neq() }
}

impl Lemma3 {
    pub fn report(&self) -> Option<BoundReport> {
        self.p_neq.map(|p| BoundReport::new("lemma3", p, self.surrogate).tolerance(1e-12))
    }
}

/// The operator-norm chain `S = (1/V) sum_{m != 0} |w~(m)| sqrt(J_m)` that
/// bounds every box's time-averaged variance by `S^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainEvaluation {
    pub tau: f64,
    pub m_cut: i64,
    pub s: f64,
    pub s_sq: f64,
    /// `S` with each `J_m` replaced by `(V^2/L^2) J_{||m||_inf}` (d >= 2).
    pub s_lemma7: Option<f64>,
    pub delta_half: Option<f64>,
    pub delta_one: Option<f64>,
    /// `S / (n^d delta_{1/2})`.
    pub ratio: Option<f64>,
}

/// One-dimensional `S` from a precomputed table of `J_m`.
pub fn chain_s_1d(size: usize, box_side: usize, jm: &Jm1d, m_cut: i64) -> f64 {
    let top = m_cut.min((size / 2) as i64).min(jm.values.len() as i64);
    let sum: f64 = (1..=top).map(|m| w1(m, size, box_side).abs() * jm.get(m).sqrt()).sum();
    2.0 * sum / size as f64
}

pub fn chain_evaluate(cfg: &LatticeConfig, tau: f64, m_cut: i64) -> ChainEvaluation {
    let lat = cfg.lattice;
    let size = lat.size;
    let half = lat.half();
    let m_cut = m_cut.min(half);
    let one_d = Jm1d::compute_up_to(size, tau, m_cut as usize);
    let (s, s_lemma7) = if lat.dim == 1 {
        (chain_s_1d(size, cfg.box_side, &one_d, m_cut), None)
    } else {
        let win = WindowFunction::new(cfg);
        let v = lat.volume() as f64;
        let l = size as f64;
        let mut cache: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
        let mut exact = 0.0;
        let mut routed = 0.0;
        for mi in lat.momenta_within(m_cut) {
            let w = win.w(&mi).abs();
            if w == 0.0 {
                continue;
            }
            let mut key: Vec<i64> = mi.0.iter().map(|c| c.abs()).collect();
            key.sort_unstable();
            let j = *cache.entry(key).or_insert_with(|| jm_exact(&mi, tau, lat).expect("nonzero momentum").value);
            exact += w * j.sqrt();
            routed += w * (v / l) * one_d.get(mi.sup_norm()).sqrt();
        }
        (exact / v, Some(routed / v))
    };
    finish_chain(cfg.dim(), size, cfg.boxes_per_axis, tau, m_cut, s, s_lemma7)
}

fn finish_chain(
    dim: usize,
    size: usize,
    n: usize,
    tau: f64,
    m_cut: i64,
    s: f64,
    s_lemma7: Option<f64>,
) -> ChainEvaluation {
    let delta_half = delta_a(0.5, tau, size, dim).ok();
    let delta_one = delta_a(1.0, tau, size, dim).ok();
    let ratio = delta_half.map(|d| s / ((n as f64).powi(dim as i32) * d));
    ChainEvaluation { tau, m_cut, s, s_sq: s * s, s_lemma7, delta_half, delta_one, ratio }
}

/// One-dimensional chain without a particle configuration, for sweeps.
pub fn chain_evaluate_1d(size: usize, box_side: usize, jm: &Jm1d) -> ChainEvaluation {
    let m_cut = (size / 2) as i64;
    let s = chain_s_1d(size, box_side, jm, m_cut);
    finish_chain(1, size, size.div_ceil(box_side), jm.tau, m_cut, s, None)
}

/// `[<(rho_c(t) - N/V)^2>]_tau <= S^2` with the left side from the exact
/// spectral path. The ratio against `n^{2d} delta_1` is reported alongside.
pub fn proposition2_check<S: ManyBody>(
    state: &S,
    box_id: usize,
    chain: &ChainEvaluation,
) -> Result<BoundReport, TimeAvgError> {
    let cfg = state.config();
    let source = state.quartic_source();
    let avg = time_average_spectral(source.as_ref(), cfg, box_id, chain.tau, chain.m_cut)?;
    let mut r = BoundReport::new("proposition2", avg.value, chain.s_sq)
        .tolerance(1e-12 + avg.imag_residual.abs())
        .param("d", cfg.dim())
        .param("L", cfg.size())
        .param("l", cfg.box_side)
        .param("tau", chain.tau)
        .param("m_cut", chain.m_cut)
        .param("box", box_id)
        .param("truncation_bound", avg.truncation_bound);
    if let Some(d1) = chain.delta_one {
        let n = cfg.boxes_per_axis as f64;
        r = r.param("ratio_to_n2d_delta1", avg.value / (n.powi(2 * cfg.dim() as i32) * d1));
    }
    Ok(r)
}

/// Measured nonequilibrium fraction over `[-tau, tau]` with threshold
/// `delta_{1/2}(tau, L)`, against `3 B / delta + grid error` where
/// `B = sum_c [<(rho_c - N/V)^2>]_tau / (epsilon rho_bar)^2`.
pub fn theorem1prime_report<S: ManyBody>(
    state: &S,
    tau: f64,
    dt: f64,
    m_cut: i64,
) -> Result<(TimeFractionReport, BoundReport), TimeAvgError> {
    let cfg = state.config();
    let delta = delta_a(0.5, tau, cfg.size(), cfg.dim())?;
    let source = state.quartic_source();
    let mut b = 0.0;
    let mut trunc = 0.0;
    for c in 0..cfg.boxes.len() {
        let avg = time_average_spectral(source.as_ref(), cfg, c, tau, m_cut)?;
        b += avg.value;
        trunc += avg.truncation_bound;
    }
    let b = b / cfg.threshold_sq();
    let trunc = trunc / cfg.threshold_sq();
    drop(source);
    let frac = noneq_fraction(state, tau, delta, dt)?;
    let n = cfg.boxes_per_axis as f64;
    let d = cfg.dim() as i32;
    let report = BoundReport::new("theorem1prime", frac.fraction, 3.0 * (b + trunc) / delta + frac.grid_error)
        .hypothesis(tau > 2.0 * cfg.size() as f64)
        .param("d", cfg.dim())
        .param("L", cfg.size())
        .param("l", cfg.box_side)
        .param("tau", tau)
        .param("dt", dt)
        .param("delta", delta)
        .param("B", b)
        .param("grid_error", frac.grid_error)
        .param("surrogate", frac.surrogate)
        .param("k_empirical", frac.fraction * cfg.threshold_sq() / (n.powi(3 * d) * delta));
    Ok((frac, report))
}

/// First `t > 0` at which `|<rho_c>(t) - N/V|` drops to `threshold`,
/// located on a grid of `step` and refined by bisection.
pub fn persistence_time<S: ManyBody>(state: &S, box_id: usize, threshold: f64, step: f64, t_max: f64) -> Option<f64> {
    let mean = state.config().mean_density();
    let sampler = state.sampler();
    let above = |t: f64| (sampler(t).density(box_id) - mean).abs() > threshold;
    if !above(0.0) {
        return Some(0.0);
    }
    let mut lo = 0.0;
    let mut hi = None;
    let mut t = step;
    while t <= t_max {
        if !above(t) {
            hi = Some(t);
            break;
        }
        lo = t;
        t += step;
    }
    let mut hi = hi?;
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if above(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

fn worst(reports: Vec<BoundReport>) -> BoundReport {
    reports.into_iter().min_by(|a, b| a.margin.total_cmp(&b.margin)).expect("nonempty")
}

/// Window-sum, `|C_m|` and `J_m` estimates used to sum the chain over `m`,
/// each reduced to its worst case over `1 <= m < L/2`.
pub fn appendix_f_estimates(size: usize, box_side: usize, tau: f64) -> Vec<BoundReport> {
    let half = (size / 2) as i64;
    let n = size.div_ceil(box_side) as f64;
    let l = size as f64;
    let hyp = in_hypothesis(size, tau);
    let mut partial = Vec::with_capacity(half as usize);
    let mut acc = 1.0;
    for m in 1..=half {
        acc += 2.0 * w1(m, size, box_side).abs();
        partial.push(acc);
    }
    let tag = |r: BoundReport, m: i64| {
        r.hypothesis(hyp).param("L", size).param("l", box_side).param("tau", tau).param("m", m)
    };
    let window_log_m = worst(
        (1..=half)
            .map(|m| {
                tag(BoundReport::new("window_sum_log_m", partial[m as usize - 1], n + 2.0 + n * (m as f64).ln()), m)
            })
            .collect(),
    );
    let window_log_l = worst(
        (1..=half)
            .map(|m| tag(BoundReport::new("window_sum_log_l", partial[m as usize - 1], 2.0 * n * l.ln()), m))
            .collect(),
    );
    let cm = worst(
        (1..=half).map(|m| tag(BoundReport::new("c_m_lower", 8.0 * m as f64 / l, c_m(m, size).abs()), m)).collect(),
    );
    let jm = Jm1d::compute(size, tau);
    let jm_linear = worst(
        (1..=half)
            .map(|m| {
                let x = 8.0 * m as f64 * tau / l;
                tag(BoundReport::new("jm_linear_cm", jm.get(m), l * l * x.ln() / x + 4.0 * l), m)
            })
            .collect(),
    );
    let sqrt_split = worst(
        (1..=half)
            .map(|m| {
                let mf = m as f64;
                let rhs = (l * (8.0 * tau / l).ln().sqrt() + l * mf.ln().sqrt()) / (8.0 * mf * tau / l).sqrt()
                    + 2.0 * l.sqrt();
                tag(BoundReport::new("sqrt_jm_split", jm.get(m).sqrt(), rhs), m)
            })
            .collect(),
    );
    vec![window_log_m, window_log_l, cm, jm_linear, sqrt_split]
}

/// `a <= b + c` with `a, b, c >= 0` implies `a^2 <= b^2 + 2ac`.
pub fn square_of_sum(a: f64, b: f64, c: f64) -> BoundReport {
    BoundReport::new("square_of_sum", a * a, b * b + 2.0 * a * c)
        .tolerance(1e-12 * (a * a + b * b + 2.0 * a * c))
        .hypothesis(a >= 0.0 && b >= 0.0 && c >= 0.0 && a <= b + c)
}

/// The dimension-reduced chain never undercuts the exact one.
pub fn lemma7_route_report(chain: &ChainEvaluation) -> Option<BoundReport> {
    chain.s_lemma7.map(|s7| BoundReport::new("lemma7_route", chain.s, s7).tolerance(1e-9 * s7))
}

/// Worst case of brute-force `|omega_m(x, delta)|` against its bound over
/// `points` evenly spaced `x` in `[-(1 + delta), 1 + delta]`, outside of
/// which both sides vanish.
pub fn lemma5_report(size: usize, m: i64, delta: f64, points: usize) -> BoundReport {
    let span = 1.0 + delta;
    let reports = (0..points)
        .into_par_iter()
        .map(|i| {
            let x = -span + 2.0 * span * i as f64 / (points - 1) as f64;
            BoundReport::new("lemma5", omega_rescaled(size, m, x, delta) as f64, lemma5_bound(size, x, delta))
                .param("x", x)
        })
        .collect();
    worst(reports).param("L", size).param("m", m).param("delta", delta).param("points", points)
}

/// Worst cases over a `grid x grid` mesh of `0 < delta <= 1/2`,
/// `0 <= x <= 1 - delta` of the arcsin gap bound, of `Y >= 0` and of
/// `dY/dtheta <= 0` by central differences at `theta = Arcsin(x + delta)`,
/// `eps = ` the arcsin gap; plus `small_delta_margin < 0` on `grid` points of `(0, 1/25]`.
pub fn auxiliary_inequality_reports(grid: usize) -> Vec<BoundReport> {
    let h = 1e-6;
    let mut gap = Vec::with_capacity(grid * grid);
    let mut y = Vec::with_capacity(grid * grid);
    let mut dy = Vec::with_capacity(grid * grid);
    let mut closed_err: f64 = 0.0;
    for i in 1..=grid {
        let delta = 0.5 * i as f64 / grid as f64;
        for j in 0..grid {
            let x = (1.0 - delta) * j as f64 / (grid - 1).max(1) as f64;
            let (lhs, rhs) = arcsin_gap(x, delta);
            gap.push(BoundReport::new("arcsin_gap", lhs, rhs).tolerance(1e-12).param("x", x).param("delta", delta));
            let theta = (x + delta).asin();
            let eps = lhs;
            y.push(
                BoundReport::new("y_nonnegative", 0.0, y_function(theta, eps))
                    .tolerance(1e-14)
                    .param("theta", theta)
                    .param("eps", eps),
            );
            let fd = (y_function(theta + h, eps) - y_function(theta - h, eps)) / (2.0 * h);
            closed_err = closed_err.max((fd - y_derivative(theta, eps)).abs());
            dy.push(
                BoundReport::new("y_nonincreasing", fd, 0.0).tolerance(1e-8).param("theta", theta).param("eps", eps),
            );
        }
    }
    let margins = (1..=grid)
        .map(|i| {
            let delta = i as f64 / (25.0 * grid as f64);
            BoundReport::new("small_delta_margin_negative", small_delta_margin(delta), 0.0).param("delta", delta)
        })
        .collect();
    vec![
        worst(gap).param("points", grid * grid),
        worst(y).param("points", grid * grid),
        worst(dy).param("points", grid * grid).param("max_closed_form_error", closed_err),
        worst(margins).param("points", grid),
    ]
}

pub fn axis_momentum(dim: usize, m: i64) -> MomentumIndex {
    let mut v = vec![0; dim];
    v[0] = m;
    MomentumIndex(v)
}

pub fn line(size: usize) -> Lattice {
    Lattice::new(1, size).expect("odd size")
}
