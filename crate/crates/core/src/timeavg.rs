//! The sinc² time average
//!
//! ```text
//! [X]_tau = ∫ dt f_tau(t) X(t),   f_tau(t) = (1/(pi tau)) (sin(t/tau) / (t/tau))^2,
//! ```
//!
//! its closed form on phases, `[exp(-i omega t)]_tau = max(0, 1 - tau |omega| / 2)`,
//! and sampled measurements of the fraction of time a state spends out of
//! equilibrium.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::LatticeConfig;
use crate::observables::{QuarticSource, WindowFunction};
use crate::states::ManyBody;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimeAvgError {
    #[error("tau must be positive, got {0}")]
    BadTau(f64),
    #[error("cutoff t_cut = {t_cut} is below tau = {tau}")]
    CutoffBelowTau { t_cut: f64, tau: f64 },
    #[error("step dt = {0} must be positive")]
    BadStep(f64),
    #[error("m_cut must be at least 1, got {0}")]
    BadMomentumCut(i64),
    #[error("delta_a needs tau > L > 1, got tau = {tau}, L = {size}")]
    TauNotAboveL { tau: f64, size: usize },
    #[error("quadrature did not stabilise after {0} halvings")]
    NoConvergence(usize),
}

const CHUNK: usize = 4096;

/// Deterministic parallel sum: fixed chunks, ordered reduction.
fn ordered_sum<F: Fn(usize) -> f64 + Sync>(n: usize, f: F) -> f64 {
    let partial: Vec<f64> =
        (0..n.div_ceil(CHUNK)).into_par_iter().map(|c| (c * CHUNK..((c + 1) * CHUNK).min(n)).map(&f).sum()).collect();
    partial.iter().sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragingKernel {
    pub tau: f64,
}

impl AveragingKernel {
    pub fn new(tau: f64) -> Result<Self, TimeAvgError> {
        if tau > 0.0 && tau.is_finite() {
            Ok(AveragingKernel { tau })
        } else {
            Err(TimeAvgError::BadTau(tau))
        }
    }

    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        let u = t / self.tau;
        let s = if u == 0.0 { 1.0 } else { u.sin() / u };
        s * s / (PI * self.tau)
    }

    /// `∫_{|t| > t_cut} f_tau(t) cos(omega t) dt`, in closed form.
    pub fn tail(&self, omega: f64, t_cut: f64) -> f64 {
        let k = omega * self.tau;
        let u = t_cut / self.tau;
        (2.0 / PI)
            * (0.5 * cos_over_square_tail(k, u)
                - 0.25 * cos_over_square_tail(2.0 + k, u)
                - 0.25 * cos_over_square_tail(2.0 - k, u))
    }
}

/// `[exp(-i omega t)]_tau = max(0, 1 - tau |omega| / 2)`.
#[inline]
pub fn tent(omega: f64, tau: f64) -> f64 {
    (1.0 - 0.5 * tau * omega.abs()).max(0.0)
}

/// `pi/2 - Si(x)` for `x >= 0`: power series for small `x`, continued
/// fraction of `E_1(ix)` beyond.
pub fn si_complement(x: f64) -> f64 {
    assert!(x >= 0.0);
    if x <= 2.0 {
        let mut sum = 0.0;
        let mut term = x;
        let mut k = 0;
        loop {
            let add = term / (2 * k + 1) as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
            k += 1;
            term *= -x * x / ((2 * k) as f64 * (2 * k + 1) as f64);
        }
        return FRAC_PI_2 - sum;
    }
    let tiny = 1e-300;
    let mut b = Complex64::new(1.0, x);
    let mut c = Complex64::new(1.0 / tiny, 0.0);
    let mut d = Complex64::new(1.0, 0.0) / b;
    let mut h = d;
    for i in 2..10_000 {
        let a = -((i - 1) as f64).powi(2);
        b += 2.0;
        d = Complex64::new(1.0, 0.0) / (d * a + b);
        c = b + Complex64::new(a, 0.0) / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).norm() < 1e-16 {
            break;
        }
    }
    let h = Complex64::new(x.cos(), -x.sin()) * h;
    -h.im
}

pub fn sine_integral(x: f64) -> f64 {
    if x < 0.0 {
        -sine_integral(-x)
    } else {
        FRAC_PI_2 - si_complement(x)
    }
}

/// `∫_U^∞ cos(a u) / u^2 du = cos(aU)/U - |a| (pi/2 - Si(|a| U))`.
pub fn cos_over_square_tail(a: f64, u: f64) -> f64 {
    if a == 0.0 {
        return 1.0 / u;
    }
    (a * u).cos() / u - a.abs() * si_complement(a.abs() * u)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureResult {
    pub value: f64,
    /// `B_X (2 tau) / (pi t_cut)`, bounding the discarded kernel mass times `sup |X|`.
    pub truncation_bound: f64,
    pub dt: f64,
    /// Change of the estimate under the last halving of `dt`.
    pub halving_change: f64,
    pub points: usize,
}

fn midpoint<F: Fn(f64) -> f64 + Sync>(g: &F, t_cut: f64, dt: f64) -> (f64, usize) {
    let n = (2.0 * t_cut / dt).ceil() as usize;
    let h = 2.0 * t_cut / n as f64;
    (ordered_sum(n, |k| g(-t_cut + (k as f64 + 0.5) * h)) * h, n)
}

/// Composite midpoint approximation of `∫_{-t_cut}^{t_cut} f_tau(t) X(t) dt`,
/// halving the step until two successive estimates differ by at most `tol`.
pub fn time_average_quadrature<F: Fn(f64) -> f64 + Sync>(
    x: F,
    tau: f64,
    t_cut: f64,
    dt0: f64,
    sup_x: f64,
    tol: f64,
) -> Result<QuadratureResult, TimeAvgError> {
    let kernel = AveragingKernel::new(tau)?;
    if t_cut < tau {
        return Err(TimeAvgError::CutoffBelowTau { t_cut, tau });
    }
    if !(dt0 > 0.0) {
        return Err(TimeAvgError::BadStep(dt0));
    }
    let g = |t: f64| kernel.value(t) * x(t);
    let mut dt = dt0;
    let (mut prev, _) = midpoint(&g, t_cut, dt);
    for _ in 0..30 {
        dt /= 2.0;
        let (cur, points) = midpoint(&g, t_cut, dt);
        let change = (cur - prev).abs();
        if change <= tol {
            return Ok(QuadratureResult {
                value: cur,
                truncation_bound: sup_x * 2.0 * tau / (PI * t_cut),
                dt,
                halving_change: change,
                points,
            });
        }
        prev = cur;
    }
    Err(TimeAvgError::NoConvergence(30))
}

/// `[exp(-i omega t)]_tau` by quadrature on `[-t_cut, t_cut]` plus the exact
/// kernel tail; returns real and imaginary parts.
pub fn phase_average_quadrature(omega: f64, tau: f64, t_cut: f64, tol: f64) -> Result<(f64, f64), TimeAvgError> {
    let kernel = AveragingKernel::new(tau)?;
    // band limit of the integrand is |omega| + 2/tau
    let dt0 = (PI / (omega.abs() + 2.0 / tau)).min(tau) / 2.0;
    let re = time_average_quadrature(|t| (omega * t).cos(), tau, t_cut, dt0, 1.0, tol)?;
    let im = time_average_quadrature(|t| -(omega * t).sin(), tau, t_cut, dt0, 1.0, tol)?;
    Ok((re.value + kernel.tail(omega, t_cut), im.value))
}

/// Exact `[<(rho_c(t) - N/V)^2>]_tau` from the plane-wave quartic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralAverage {
    pub value: f64,
    /// Imaginary part of the accumulated sum; zero up to rounding.
    pub imag_residual: f64,
    /// Bound on the effect of momenta beyond `m_cut`.
    pub truncation_bound: f64,
    pub m_cut: i64,
    pub pairs: u64,
}

struct Level {
    e: f64,
    w: Complex64,
    beta: u32,
    beta_m: u32,
}

pub fn default_m_cut(cfg: &LatticeConfig) -> i64 {
    let half = cfg.lattice.half();
    let n = cfg.boxes_per_axis as f64;
    // smallest m with n / (2m) < 1e-3
    let m = (n / 2e-3).floor() as i64 + 1;
    m.min(half)
}

pub fn time_average_spectral(
    source: &dyn QuarticSource,
    cfg: &LatticeConfig,
    box_id: usize,
    tau: f64,
    m_cut: i64,
) -> Result<SpectralAverage, TimeAvgError> {
    if !(tau > 0.0) {
        return Err(TimeAvgError::BadTau(tau));
    }
    if m_cut <= 0 {
        return Err(TimeAvgError::BadMomentumCut(m_cut));
    }
    let lat = cfg.lattice;
    let win = WindowFunction::new(cfg);
    let center = &cfg.boxes[box_id].center;
    let energies = lat.energies();
    let v = lat.volume();
    let mut discarded = 0.0;
    let mut levels = Vec::new();
    for m in 1..v {
        let mi = lat.momentum(m);
        if mi.sup_norm() > m_cut {
            discarded += win.w(&mi).abs();
            continue;
        }
        let w = win.w_centered(m, center);
        if w == Complex64::default() {
            continue;
        }
        for beta in 0..v {
            let bm = lat.add_flat(beta, m);
            levels.push(Level { e: energies[beta] - energies[bm], w, beta: beta as u32, beta_m: bm as u32 });
        }
    }
    levels.sort_by(|a, b| a.e.total_cmp(&b.e));
    let width = 2.0 / tau;
    let n = levels.len();
    let chunks: Vec<(Complex64, u64)> = (0..n.div_ceil(256))
        .into_par_iter()
        .map(|c| {
            let mut acc = Complex64::default();
            let mut pairs = 0u64;
            for i in c * 256..((c + 1) * 256).min(n) {
                let a = &levels[i];
                for b in &levels[i..] {
                    let diff = b.e - a.e;
                    if diff >= width {
                        break;
                    }
                    let k = tent(diff, tau);
                    if k == 0.0 {
                        continue;
                    }
                    pairs += 1;
                    let (ab, am, bb, bm) = (a.beta as usize, a.beta_m as usize, b.beta as usize, b.beta_m as usize);
                    // <a†_{beta+m} a_beta a†_gamma a_{gamma+n}> with (beta, m) = a, (gamma, n) = b
                    acc += a.w * b.w.conj() * k * source.quartic(am, ab, bb, bm);
                    if !std::ptr::eq(a, b) {
                        acc += b.w * a.w.conj() * k * source.quartic(bm, bb, ab, am);
                    }
                }
            }
            (acc, pairs)
        })
        .collect();
    let mut total = Complex64::default();
    let mut pairs = 0;
    for (c, p) in chunks {
        total += c;
        pairs += p;
    }
    let scale = 1.0 / (v as f64 * v as f64);
    let r = cfg.particles as f64 / v as f64 * discarded;
    Ok(SpectralAverage {
        value: total.re * scale,
        imag_residual: total.im * scale,
        truncation_bound: 2.0 * (1.0 + r) * r + r * r,
        m_cut,
        pairs,
    })
}

/// `delta_a(tau, L) = (log(tau/L) / (tau/L))^a + ((log L)^{2d} / L)^a`.
pub fn delta_a(a: f64, tau: f64, size: usize, dim: usize) -> Result<f64, TimeAvgError> {
    let l = size as f64;
    if !(tau > l && l > 1.0) {
        return Err(TimeAvgError::TauNotAboveL { tau, size });
    }
    let r = tau / l;
    Ok((r.ln() / r).powf(a) + (l.ln().powi(2 * dim as i32) / l).powf(a))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeFractionReport {
    pub tau: f64,
    pub delta: f64,
    pub dt: f64,
    pub fraction: f64,
    /// Fraction measured with `dt / 2`.
    pub fraction_refined: f64,
    /// `|fraction - fraction_refined| + 1 / samples`.
    pub grid_error: f64,
    pub samples: usize,
    /// Whether `X` is the box-variance surrogate rather than exact `<P_neq>`.
    pub surrogate: bool,
}

/// Fraction of grid points `t = k dt`, `|t| <= tau`, with `x(t) > delta`.
/// With `even` set only `t >= 0` is evaluated and mirrored.
pub fn fraction_on_grid<F: Fn(f64) -> f64 + Sync>(x: F, tau: f64, delta: f64, dt: f64, even: bool) -> (f64, usize) {
    let k_max = (tau / dt + 1e-9).floor() as i64;
    let total = (2 * k_max + 1) as usize;
    let ks: Vec<i64> = if even { (0..=k_max).collect() } else { (-k_max..=k_max).collect() };
    let hits: usize = ks
        .par_iter()
        .map(|&k| {
            let above = x(k as f64 * dt) > delta;
            match (above, even && k != 0) {
                (false, _) => 0,
                (true, true) => 2,
                (true, false) => 1,
            }
        })
        .sum();
    (hits as f64 / total as f64, total)
}

/// Samples `<P_neq>` (exact engine) or the surrogate
/// `sum_c <(rho_c - N/V)^2> / (epsilon rho_bar)^2` over `[-tau, tau]`.
pub fn noneq_fraction<S: ManyBody>(
    state: &S,
    tau: f64,
    delta: f64,
    dt: f64,
) -> Result<TimeFractionReport, TimeAvgError> {
    if !(tau > 0.0) {
        return Err(TimeAvgError::BadTau(tau));
    }
    if !(dt > 0.0) {
        return Err(TimeAvgError::BadStep(dt));
    }
    let surrogate = state.exact_p_neq().is_none();
    let sampler = state.sampler();
    let x = |t: f64| {
        let s = sampler(t);
        s.exact_p_neq().unwrap_or_else(|| s.noneq_surrogate())
    };
    let even = state.is_time_symmetric();
    let (fraction, samples) = fraction_on_grid(&x, tau, delta, dt, even);
    let (fraction_refined, fine) = fraction_on_grid(&x, tau, delta, dt / 2.0, even);
    Ok(TimeFractionReport {
        tau,
        delta,
        dt,
        fraction,
        fraction_refined,
        grid_error: (fraction - fraction_refined).abs() + 1.0 / samples.min(fine) as f64,
        samples,
        surrogate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeParams;
    use crate::observables::{FockQuartic, WickQuartic};
    use crate::states::{momentum_filled_state, FockEngine, SlaterState};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn cfg(size: usize, l: usize, n: usize) -> Arc<LatticeConfig> {
        Arc::new(
            LatticeConfig::derive(LatticeParams {
                dim: 1,
                size,
                box_side: l,
                rho_bar: n as f64 / size as f64,
                epsilon: 0.1,
            })
            .unwrap(),
        )
    }

    #[test]
    fn tent_examples() {
        assert_eq!(tent(0.0, 3.0), 1.0);
        assert_eq!(tent(1.0, 2.0), 0.0);
        assert_eq!(tent(-5.0, 2.0), 0.0);
        assert_eq!(tent(0.5, 2.0), 0.5);
    }

    #[test]
    fn sine_integral_reference_values() {
        // Si(1), Si(2), Si(5), Si(20), Si(100) to 15 digits
        for (x, want) in [
            (1.0, 0.946083070367183),
            (2.0, 1.605412976802695),
            (5.0, 1.549931244944674),
            (20.0, 1.548241701043440),
            (100.0, 1.562225466889056),
        ] {
            assert!((sine_integral(x) - want).abs() < 1e-13, "{x}");
        }
        assert!((si_complement(1e6) - (1e6f64).cos() / 1e6).abs() < 1e-11);
    }

    #[test]
    fn kernel_normalisation_and_floor() {
        let k = AveragingKernel::new(3.0).unwrap();
        let q = time_average_quadrature(|_| 1.0, 3.0, 200.0 * 3.0, 0.5, 1.0, 1e-9).unwrap();
        assert!((q.value + k.tail(0.0, 600.0) - 1.0).abs() < 1e-9);
        assert!((1.0 - q.value) <= q.truncation_bound);
        let floor = (1f64.sin()).powi(2) / (PI * 3.0);
        assert!((k.value(3.0) - floor).abs() < 1e-15);
        assert!(k.value(1.0) > floor && k.value(-2.9) > floor);
    }

    #[test]
    fn cos_tail_matches_direct_integration() {
        let (a, u) = (0.7, 3.0);
        // ∫_U^∞ cos(a u)/u^2: integrate to 4000 numerically plus 1/u^2 bound
        let n = 4_000_000;
        let h = (4000.0 - u) / n as f64;
        let direct: f64 = (0..n)
            .map(|k| {
                let t = u + (k as f64 + 0.5) * h;
                (a * t).cos() / (t * t)
            })
            .sum::<f64>()
            * h;
        assert!((cos_over_square_tail(a, u) - direct).abs() < 1e-6);
    }

    #[test]
    fn phase_average_matches_tent() {
        let (re, im) = phase_average_quadrature(0.5, 2.0, 400.0, 1e-9).unwrap();
        assert!((re - 0.5).abs() < 1e-7);
        assert!(im.abs() < 1e-12);
    }

    #[test]
    fn delta_a_examples() {
        let size = 1001;
        let tau = std::f64::consts::E * size as f64;
        let second = (size as f64).ln().powi(2) / size as f64;
        assert!((delta_a(1.0, tau, size, 1).unwrap() - (1.0 / std::f64::consts::E + second)).abs() < 1e-12);
        assert!(delta_a(1.0, 1000.0, 1001, 1).is_err());
        let mut prev = f64::INFINITY;
        for k in 1..20 {
            let v = delta_a(1.0, tau * (1.0 + k as f64), size, 1).unwrap();
            assert!(v < prev);
            prev = v;
        }
        let mut prev = f64::INFINITY;
        for size in [101usize, 1001, 10001, 100001, 1000001] {
            let v = delta_a(0.5, 5.0 * size as f64, size, 1).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn spectral_average_of_stationary_state_is_its_value() {
        let c = cfg(9, 3, 3);
        let s = momentum_filled_state(c.clone());
        let g = WickQuartic { g: s.momentum_two_point() };
        for b in 0..3 {
            let avg = time_average_spectral(&g, &c, b, 7.0, 4).unwrap();
            assert!((avg.value - s.delta_rho_sq(b)).abs() < 1e-12);
            assert!(avg.imag_residual.abs() < 1e-12);
            assert_eq!(avg.truncation_bound, 0.0);
        }
        let full = cfg(9, 3, 9);
        let s = momentum_filled_state(full.clone());
        let avg = time_average_spectral(&WickQuartic { g: s.momentum_two_point() }, &full, 1, 7.0, 4).unwrap();
        assert!(avg.value.abs() < 1e-14);
    }

    #[test]
    fn spectral_and_quadrature_paths_agree() {
        let c = cfg(9, 3, 3);
        let s = SlaterState::random(c.clone(), 5);
        let tau = 20.0;
        let spectral = time_average_spectral(&WickQuartic { g: s.momentum_two_point() }, &c, 0, tau, 4).unwrap();
        let evolver = crate::states::SlaterEvolver::new(&s);
        let sup = (2.0f64 / 3.0).powi(2);
        let q = time_average_quadrature(|t| evolver.at(t).delta_rho_sq(0), tau, 200.0 * tau, 0.25, sup, 1e-7).unwrap();
        let tol = q.truncation_bound + q.halving_change + 1e-9;
        assert!((spectral.value - q.value).abs() <= tol, "{} vs {} (tol {tol})", spectral.value, q.value);

        let engine = FockEngine::new(c.clone()).unwrap();
        let psi = engine.random(31);
        let fock = time_average_spectral(&FockQuartic::new(&psi), &c, 1, tau, 4).unwrap();
        let q = time_average_quadrature(|t| psi.evolve(t).delta_rho_sq(1), tau, 200.0 * tau, 0.25, sup, 1e-7).unwrap();
        let tol = q.truncation_bound + q.halving_change + 1e-9;
        assert!((fock.value - q.value).abs() <= tol, "{} vs {}", fock.value, q.value);
    }

    #[test]
    fn truncation_bound_covers_discarded_momenta() {
        let c = cfg(15, 5, 5);
        let s = SlaterState::random(c.clone(), 2);
        let src = WickQuartic { g: s.momentum_two_point() };
        let full = time_average_spectral(&src, &c, 0, 9.0, 7).unwrap();
        for cut in 1..7 {
            let part = time_average_spectral(&src, &c, 0, 9.0, cut).unwrap();
            assert!((part.value - full.value).abs() <= part.truncation_bound + 1e-12);
        }
    }

    #[test]
    fn fraction_examples() {
        let full = cfg(9, 3, 9);
        let s = momentum_filled_state(full);
        let r = noneq_fraction(&s, 50.0, 1e-6, 0.05).unwrap();
        assert_eq!(r.fraction, 0.0);
        assert!(r.surrogate);

        let c = cfg(201, 67, 67);
        let s = crate::states::concentrated_state(c);
        let r = noneq_fraction(&s, 10.0, 1e-3, 0.01).unwrap();
        assert_eq!(r.fraction, 1.0);

        let c = cfg(9, 3, 3);
        let engine = FockEngine::new(c.clone()).unwrap();
        let sites: Vec<usize> = crate::states::uniform_product_sites(&c);
        let psi = engine.basis_state(&sites).unwrap();
        assert_eq!(psi.p_neq(), 0.0);
        let r = noneq_fraction(&psi, 30.0, 0.5, 0.03).unwrap();
        assert!(!r.surrogate);
        assert!((0.0..=1.0).contains(&r.fraction));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn kernel_is_nonnegative(t in -1e4f64..1e4, tau in 0.01f64..100.0) {
            prop_assert!(AveragingKernel::new(tau).unwrap().value(t) >= 0.0);
        }

        #[test]
        fn key_identity(e1 in -4.0f64..4.0, e2 in -4.0f64..4.0, tau in 0.5f64..20.0) {
            let w = e1 - e2;
            let (re, im) = phase_average_quadrature(w, tau, 200.0 * tau, 1e-9).unwrap();
            prop_assert!((re - tent(w, tau)).abs() < 1e-6);
            prop_assert!(im.abs() < 1e-10);
        }
    }
}
