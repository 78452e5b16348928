//! Coarse-grained densities and the Fourier window of a box.
//!
//! With `a†_alpha = V^{-1/2} sum_x exp(2 pi i alpha.x / L) c†_x` the box
//! density reads
//!
//! ```text
//! rho_c = (1/V) sum_{alpha,beta} w~(alpha - beta) exp(-2 pi i (alpha - beta).c / L) a†_alpha a_beta
//! ```
//!
//! and the `alpha = beta` part is exactly `N/V`, so
//! `rho_c - N/V = (1/V) sum_{m != 0} w_c(m) F(m)` with
//! `F(m) = sum_beta a†_{beta+m} a_beta`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::lattice::{Lattice, LatticeConfig, MomentumIndex, SiteIndex};
use crate::states::{FockBasis, FockState, ManyBody};

/// `w~_1(k) = sin(pi k l / L) / (l sin(pi k / L))`, with `w~_1(0) = 1`.
pub fn w1(k: i64, size: usize, box_side: usize) -> f64 {
    let k = crate::lattice::wrap(k, size);
    if k == 0 {
        return 1.0;
    }
    let (l, big_l) = (box_side as f64, size as f64);
    let num = (PI * k as f64 * l / big_l).sin();
    let den = l * (PI * k as f64 / big_l).sin();
    let v = num / den;
    // sin(pi k l / L) vanishes exactly when L divides k l
    if (k * box_side as i64).rem_euclid(size as i64) == 0 {
        0.0
    } else {
        v
    }
}

/// Cached `w~_1` table and the product window `w~(m)`.
#[derive(Debug, Clone)]
pub struct WindowFunction {
    lattice: Lattice,
    box_side: usize,
    /// `w~_1(k)` for `k = 0..=(L-1)/2`.
    table: Vec<f64>,
}

impl WindowFunction {
    pub fn new(cfg: &LatticeConfig) -> Self {
        Self::from_parts(cfg.lattice, cfg.box_side)
    }

    pub fn from_parts(lattice: Lattice, box_side: usize) -> Self {
        let half = lattice.half() as usize;
        let table = (0..=half as i64).map(|k| w1(k, lattice.size, box_side)).collect();
        WindowFunction { lattice, box_side, table }
    }

    #[inline]
    pub fn w1(&self, k: i64) -> f64 {
        self.table[crate::lattice::wrap(k, self.lattice.size).unsigned_abs() as usize]
    }

    pub fn w(&self, m: &MomentumIndex) -> f64 {
        m.0.iter().map(|&k| self.w1(k)).product()
    }

    pub fn w_flat(&self, m: usize) -> f64 {
        self.w(&self.lattice.momentum(m))
    }

    /// Window of the box at `center`: `w~(m) exp(-2 pi i m.c / L)`.
    pub fn w_centered(&self, m: usize, center: &SiteIndex) -> Complex64 {
        let mm = self.lattice.coords(m);
        let dot: i64 = mm.iter().zip(&center.0).map(|(a, b)| a * b).sum();
        let phase = -2.0 * PI * dot.rem_euclid(self.lattice.size as i64) as f64 / self.lattice.size as f64;
        Complex64::from_polar(self.w(&self.lattice.momentum(m)), phase)
    }

    pub fn box_side(&self) -> usize {
        self.box_side
    }

    /// `sum_{k=-m}^{m} |w~_1(k)|`.
    pub fn abs_sum_to(&self, m: i64) -> f64 {
        (-m..=m).map(|k| self.w1(k).abs()).sum()
    }
}

/// The coarse-grained density observable of one box.
#[derive(Debug, Clone)]
pub struct DensityObservable<'a> {
    pub cfg: &'a LatticeConfig,
    pub box_id: usize,
}

impl<'a> DensityObservable<'a> {
    pub fn at(cfg: &'a LatticeConfig, center: &SiteIndex) -> Option<Self> {
        cfg.box_id(center).map(|box_id| DensityObservable { cfg, box_id })
    }

    pub fn center(&self) -> &SiteIndex {
        &self.cfg.boxes[self.box_id].center
    }

    pub fn expectation<S: ManyBody>(&self, state: &S) -> f64 {
        state.density(self.box_id)
    }

    pub fn delta_sq<S: ManyBody>(&self, state: &S) -> f64 {
        state.delta_rho_sq(self.box_id)
    }
}

pub fn density_expectation<S: ManyBody>(state: &S, box_id: usize) -> f64 {
    state.density(box_id)
}

/// `<Psi(t)| (rho_c - N/V)^2 |Psi(t)>`.
pub fn delta_rho_sq_expectation<S: ManyBody>(state: &S, box_id: usize, t: f64) -> f64 {
    if t == 0.0 {
        state.delta_rho_sq(box_id)
    } else {
        state.evolve(t).delta_rho_sq(box_id)
    }
}

/// `<rho_c>` evaluated from the plane-wave two-point function.
pub fn momentum_space_density<S: ManyBody>(state: &S, box_id: usize) -> f64 {
    let cfg = state.config();
    let lat = cfg.lattice;
    let win = WindowFunction::new(cfg);
    let center = &cfg.boxes[box_id].center;
    let g = state.momentum_two_point();
    let v = lat.volume();
    let mut acc = Complex64::default();
    for a in 0..v {
        for b in 0..v {
            let m = lat.add_flat(a, lat.neg_flat(b));
            acc += win.w_centered(m, center) * g[(a, b)];
        }
    }
    acc.re / v as f64
}

/// Levels `E~_{beta,m} = E_beta - E_{beta+m}` of `F_t(m)`, indexed by flat `beta`.
#[derive(Debug, Clone)]
pub struct FPhases {
    pub m: usize,
    pub levels: Vec<f64>,
}

pub fn f_matrix_elements(m: usize, cfg: &LatticeConfig) -> FPhases {
    let lat = cfg.lattice;
    let e = lat.energies();
    let levels = (0..lat.volume()).map(|b| e[b] - e[lat.add_flat(b, m)]).collect();
    FPhases { m, levels }
}

/// `<F_t(m)> = sum_beta exp(-i t E~_{beta,m}) <a†_{beta+m} a_beta>`.
pub fn f_expectation<S: ManyBody>(state: &S, m: usize, t: f64) -> Complex64 {
    let lat = state.config().lattice;
    let g = state.momentum_two_point();
    let phases = f_matrix_elements(m, state.config());
    (0..lat.volume()).map(|b| Complex64::from_polar(1.0, -t * phases.levels[b]) * g[(lat.add_flat(b, m), b)]).sum()
}

/// Source of `<a†_{beta+m} a_beta a†_gamma a_{gamma+n}>` (flat indices,
/// `bm = beta + m`, `gn = gamma + n`).
pub trait QuarticSource: Sync {
    fn quartic(&self, bm: usize, beta: usize, gamma: usize, gn: usize) -> Complex64;
}

/// Wick contraction of the plane-wave two-point matrix `G~[p,q] = <a†_p a_q>`.
pub struct WickQuartic {
    pub g: DMatrix<Complex64>,
}

impl QuarticSource for WickQuartic {
    #[inline]
    fn quartic(&self, bm: usize, beta: usize, gamma: usize, gn: usize) -> Complex64 {
        let g = &self.g;
        let delta = if beta == gamma { 1.0 } else { 0.0 };
        g[(bm, beta)] * g[(gamma, gn)] + g[(bm, gn)] * (Complex64::new(delta, 0.0) - g[(gamma, beta)])
    }
}

/// Exact quartic from the occupation-basis state: the expectation equals
/// `<v_{beta,m} | v_{gamma,n}>` with `v_{beta,m} = a†_beta a_{beta+m} |psi>`.
pub struct FockQuartic {
    modes: usize,
    vectors: Vec<Vec<Complex64>>,
}

impl FockQuartic {
    pub fn new(state: &FockState) -> Self {
        let basis: &FockBasis = state.engine().basis();
        let mom = state.momentum_amplitudes();
        let v = basis.modes();
        let mut vectors = Vec::with_capacity(v * v);
        for p in 0..v {
            for q in 0..v {
                vectors.push(basis.apply_hop(&mom, p, q));
            }
        }
        FockQuartic { modes: v, vectors }
    }
}

impl QuarticSource for FockQuartic {
    fn quartic(&self, bm: usize, beta: usize, gamma: usize, gn: usize) -> Complex64 {
        let left = &self.vectors[beta * self.modes + bm];
        let right = &self.vectors[gamma * self.modes + gn];
        left.iter().zip(right).map(|(a, b)| a.conj() * b).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeParams;
    use crate::states::{concentrated_state, momentum_filled_state, FockEngine, SlaterState};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn cfg(d: usize, size: usize, l: usize, n: usize) -> Arc<LatticeConfig> {
        let v = size.pow(d as u32);
        Arc::new(
            LatticeConfig::derive(LatticeParams {
                dim: d,
                size,
                box_side: l,
                rho_bar: n as f64 / v as f64,
                epsilon: 0.1,
            })
            .unwrap(),
        )
    }

    #[test]
    fn window_examples() {
        assert_eq!(w1(0, 15, 5), 1.0);
        assert_eq!(w1(3, 15, 5), 0.0);
        // independent: (1/l) sum_{|x| < l/2} exp(-2 pi i k x / L)
        let direct: f64 = (-2..=2).map(|x: i64| (2.0 * PI * x as f64 / 15.0).cos()).sum::<f64>() / 5.0;
        assert!((w1(1, 15, 5) - direct).abs() < 1e-14);
        assert!((w1(1, 15, 5) - 0.833070425600584).abs() < 1e-12);

        let lat2 = Lattice::new(2, 15).unwrap();
        let win2 = WindowFunction::from_parts(lat2, 5);
        assert_eq!(win2.w(&MomentumIndex(vec![3, 0])), 0.0);
        assert_eq!(win2.w(&MomentumIndex(vec![0, 0])), 1.0);
        let win1 = WindowFunction::from_parts(Lattice::new(1, 15).unwrap(), 5);
        assert_eq!(win1.w(&MomentumIndex(vec![1])), w1(1, 15, 5));
    }

    #[test]
    fn density_examples() {
        let c = cfg(1, 9, 3, 3);
        let s = concentrated_state(c.clone());
        let origin = c.box_id(&SiteIndex(vec![0])).unwrap();
        let far = c.box_id(&SiteIndex(vec![3])).unwrap();
        assert_eq!(density_expectation(&s, origin), 1.0);
        assert_eq!(density_expectation(&s, far), 0.0);

        let mf = momentum_filled_state(c.clone());
        for b in 0..c.boxes.len() {
            assert!((mf.density(b) - 3.0 / 9.0).abs() < 1e-14);
        }
        let v0 = delta_rho_sq_expectation(&mf, 0, 0.0);
        for t in [0.9, 7.0, 40.0] {
            assert!((delta_rho_sq_expectation(&mf, 0, t) - v0).abs() < 1e-12);
        }

        let full = cfg(1, 9, 3, 9);
        let s = momentum_filled_state(full.clone());
        for b in 0..full.boxes.len() {
            assert!(delta_rho_sq_expectation(&s, b, 2.5).abs() < 1e-14);
        }
    }

    #[test]
    fn wick_variance_matches_fock_oracle() {
        let c = cfg(1, 9, 3, 3);
        let s = SlaterState::random(c.clone(), 77);
        let engine = FockEngine::new(c.clone()).unwrap();
        let psi = engine.from_orbitals(s.orbitals()).unwrap();
        for t in [0.0, 1.1, 9.0] {
            for b in 0..3 {
                let a = delta_rho_sq_expectation(&s, b, t);
                let f = delta_rho_sq_expectation(&psi, b, t);
                assert!((a - f).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn f_levels_examples() {
        let c = cfg(1, 9, 3, 3);
        let lat = c.lattice;
        let ph = f_matrix_elements(lat.flat(&[1]), &c);
        assert!(ph.levels[lat.flat(&[4])].abs() < 1e-14);
        let cm = 4.0 * (PI / 9.0).sin();
        for beta in -4..=4i64 {
            let want = cm * (2.0 * PI * (beta as f64 + 0.5) / 9.0).sin();
            assert!((ph.levels[lat.flat(&[beta])] - want).abs() < 1e-12);
        }
        let s = SlaterState::random(c.clone(), 3);
        let f0 = f_expectation(&s, 0, 4.2);
        assert!((f0 - Complex64::new(3.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn box_densities_sum_to_particle_number_when_boxes_tile() {
        let c = cfg(2, 9, 3, 20);
        let s = SlaterState::random(c.clone(), 8).evolve(1.3);
        let total: f64 = (0..c.boxes.len()).map(|b| s.density(b) * 9.0).sum();
        assert!((total - 20.0).abs() < 1e-10);
    }

    #[test]
    fn heisenberg_picture_agrees() {
        let c = cfg(1, 9, 3, 3);
        let engine = FockEngine::new(c.clone()).unwrap();
        let psi = engine.random(4);
        let t = 2.7;
        let schrodinger = psi.evolve(t).delta_rho_sq(1);
        // <psi| e^{iHt} (drho)^2 e^{-iHt} |psi> with the operator applied in
        // the site basis and both propagations done separately
        let mask = engine.box_mask(1);
        let mean = c.mean_density();
        let forward = psi.evolve(t);
        let weighted: Vec<Complex64> = engine
            .basis()
            .states()
            .iter()
            .zip(forward.amplitudes())
            .map(|(&s, a)| a * ((s & mask).count_ones() as f64 / 3.0 - mean).powi(2))
            .collect();
        let norm = weighted.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        let scaled: Vec<Complex64> = weighted.iter().map(|a| a / norm).collect();
        let back = engine.state(scaled).unwrap().evolve(-t);
        let heisenberg: Complex64 =
            psi.amplitudes().iter().zip(back.amplitudes()).map(|(a, b)| a.conj() * b * norm).sum();
        assert!((heisenberg.re - schrodinger).abs() < 1e-10);
        assert!(heisenberg.im.abs() < 1e-10);
    }

    #[test]
    fn fock_quartic_matches_wick_on_determinants() {
        let c = cfg(1, 7, 3, 2);
        let s = SlaterState::random(c.clone(), 12);
        let engine = FockEngine::new(c.clone()).unwrap();
        let psi = engine.from_orbitals(s.orbitals()).unwrap();
        let wick = WickQuartic { g: s.momentum_two_point() };
        let fock = FockQuartic::new(&psi);
        for (a, b, g, d) in [(1, 0, 0, 1), (2, 5, 3, 4), (6, 6, 1, 1), (3, 2, 2, 3), (0, 4, 4, 0)] {
            assert!((wick.quartic(a, b, g, d) - fock.quartic(a, b, g, d)).norm() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn window_bound(size in (3usize..400).prop_map(|s| s | 1), frac in 0.0f64..1.0, k in 1i64..200) {
            let l = crate::lattice::largest_odd_at_most(((size as f64 * frac) as usize).max(1));
            let n = size.div_ceil(l) as f64;
            let k = k % (size as i64 / 2).max(1) + 1;
            prop_assume!(2 * k < size as i64);
            let v = w1(k, size, l);
            prop_assert!(v.abs() <= 1.0 + 1e-12);
            prop_assert!(v.abs() <= n / (2.0 * k as f64) + 1e-12);
            prop_assert!((w1(-k, size, l) - v).abs() < 1e-15);
        }

        #[test]
        fn site_and_momentum_densities_agree(d in 1usize..=2, seed in any::<u64>(), t in 0.0f64..10.0) {
            let (size, n) = if d == 1 { (11, 4) } else { (5, 7) };
            let c = cfg(d, size, 3, n);
            let s = SlaterState::random(c.clone(), seed).evolve(t);
            for b in 0..c.boxes.len() {
                prop_assert!((s.density(b) - momentum_space_density(&s, b)).abs() < 1e-9);
            }
        }
    }
}
