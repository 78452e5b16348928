//! Exact N-fermion states over the occupation-number basis.
//!
//! Basis states are bitmasks with exactly `N` bits set, ordered by numeric
//! value (lexicographic on the bitmask). A bitmask `S = {s_1 < ... < s_N}`
//! stands for `c†_{s_1} ... c†_{s_N} |vac>`. The same bitmask layout is used
//! for plane-wave occupations, with bit `k` standing for the momentum of
//! flat index `k`.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::fourier::Fourier;
use super::StateError;
use crate::lattice::LatticeConfig;

/// Largest occupation basis the exact engine will build.
pub const FOCK_CAPACITY: usize = 1_000_000;

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

#[derive(Debug, Clone)]
pub struct FockBasis {
    modes: usize,
    particles: usize,
    states: Vec<u64>,
    binom: Vec<Vec<usize>>,
}

impl FockBasis {
    pub fn new(modes: usize, particles: usize) -> Result<Self, StateError> {
        if modes > 64 {
            return Err(StateError::TooManyModes(modes));
        }
        if particles > modes {
            return Err(StateError::TooManyParticles { particles, modes });
        }
        let dim = binomial(modes, particles);
        if dim > FOCK_CAPACITY as u128 {
            return Err(StateError::Capacity { dimension: dim, capacity: FOCK_CAPACITY });
        }
        let mut states = Vec::with_capacity(dim as usize);
        if particles == 0 {
            states.push(0);
        } else {
            let limit: u128 = 1u128 << modes;
            let mut s: u64 = if particles == 64 { u64::MAX } else { (1u64 << particles) - 1 };
            loop {
                states.push(s);
                // next bitmask with the same popcount
                let c = s & s.wrapping_neg();
                let r = s.wrapping_add(c);
                if r == 0 {
                    break;
                }
                let next = (((r ^ s) >> 2) / c) | r;
                if (next as u128) >= limit || next < s {
                    break;
                }
                s = next;
            }
        }
        debug_assert_eq!(states.len() as u128, dim);
        let binom = (0..=modes)
            .map(|n| (0..=particles + 1).map(|k| binomial(n, k).min(usize::MAX as u128) as usize).collect())
            .collect();
        Ok(FockBasis { modes, particles, states, binom })
    }

    #[inline]
    pub fn modes(&self) -> usize {
        self.modes
    }

    #[inline]
    pub fn particles(&self) -> usize {
        self.particles
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.states.len()
    }

    #[inline]
    pub fn states(&self) -> &[u64] {
        &self.states
    }

    #[inline]
    fn choose(&self, n: usize, k: usize) -> usize {
        if k > n {
            0
        } else {
            self.binom[n][k]
        }
    }

    /// Position of `mask` in the basis (combinatorial number system).
    pub fn rank(&self, mask: u64) -> usize {
        let mut r = 0;
        let mut k = 0;
        let mut m = mask;
        while m != 0 {
            let p = m.trailing_zeros() as usize;
            k += 1;
            r += self.choose(p, k);
            m &= m - 1;
        }
        r
    }

    /// Applies `a†_p a_q` to a basis state, returning the sign and new mask.
    #[inline]
    pub fn hop(mask: u64, p: usize, q: usize) -> Option<(f64, u64)> {
        if mask & (1 << q) == 0 {
            return None;
        }
        let below_q = (mask & ((1u64 << q) - 1)).count_ones();
        let removed = mask & !(1u64 << q);
        if removed & (1 << p) != 0 {
            return None;
        }
        let below_p = (removed & ((1u64 << p) - 1)).count_ones();
        let sign = if (below_p + below_q) % 2 == 0 { 1.0 } else { -1.0 };
        Some((sign, removed | (1u64 << p)))
    }

    /// `a†_p a_q |psi>` for amplitudes over this basis.
    pub fn apply_hop(&self, amps: &[Complex64], p: usize, q: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); self.dim()];
        for (i, &s) in self.states.iter().enumerate() {
            if amps[i] == Complex64::default() {
                continue;
            }
            if let Some((sign, t)) = Self::hop(s, p, q) {
                out[self.rank(t)] += amps[i] * sign;
            }
        }
        out
    }

    /// Applies the Fock-space lift of a 2x2 mode rotation on the adjacent
    /// modes `(p, p + 1)`: `c†_p -> g00 c†_p + g10 c†_{p+1}`,
    /// `c†_{p+1} -> g01 c†_p + g11 c†_{p+1}`.
    fn apply_adjacent(&self, amps: &mut [Complex64], p: usize, g: &[[Complex64; 2]; 2]) {
        let lo = 1u64 << p;
        let hi = 1u64 << (p + 1);
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        for (i, &s) in self.states.iter().enumerate() {
            match (s & lo != 0, s & hi != 0) {
                (true, false) => {
                    let below = (s & (lo - 1)).count_ones() as usize;
                    // rank(partner) - rank(s) = C(p + 1, k + 1) - C(p, k + 1) = C(p, k)
                    let j = i + self.choose(p, below);
                    let (a, b) = (amps[i], amps[j]);
                    amps[i] = g[0][0] * a + g[0][1] * b;
                    amps[j] = g[1][0] * a + g[1][1] * b;
                }
                (true, true) => amps[i] *= det,
                _ => {}
            }
        }
    }
}

/// A single-particle unitary factored into adjacent-mode rotations and
/// a diagonal, so that its Fock-space lift can be applied in
/// `O(V^2 dim)` without forming determinants.
#[derive(Debug, Clone)]
pub struct ModeTransform {
    rotations: Vec<(usize, [[Complex64; 2]; 2])>,
    diagonal: Vec<Complex64>,
}

impl ModeTransform {
    /// Factor `u = G_1† ... G_K† D` by zeroing the sub-diagonal with
    /// adjacent-row Givens rotations.
    pub fn decompose(u: &DMatrix<Complex64>) -> Self {
        let n = u.nrows();
        assert_eq!(n, u.ncols());
        let mut w = u.clone();
        let mut rotations = Vec::new();
        for j in 0..n {
            for i in (j + 1..n).rev() {
                let a = w[(i - 1, j)];
                let b = w[(i, j)];
                if b.norm() == 0.0 {
                    continue;
                }
                let r = a.norm().hypot(b.norm());
                let g = [[a.conj() / r, b.conj() / r], [-b / r, a / r]];
                for k in j..n {
                    let (x, y) = (w[(i - 1, k)], w[(i, k)]);
                    w[(i - 1, k)] = g[0][0] * x + g[0][1] * y;
                    w[(i, k)] = g[1][0] * x + g[1][1] * y;
                }
                rotations.push((i - 1, g));
            }
        }
        let diagonal = (0..n).map(|k| w[(k, k)]).collect();
        ModeTransform { rotations, diagonal }
    }

    fn adjoint2(g: &[[Complex64; 2]; 2]) -> [[Complex64; 2]; 2] {
        [[g[0][0].conj(), g[1][0].conj()], [g[0][1].conj(), g[1][1].conj()]]
    }

    /// `psi <- Gamma(u) psi`.
    pub fn apply(&self, basis: &FockBasis, amps: &mut [Complex64]) {
        for (i, &s) in basis.states.iter().enumerate() {
            amps[i] *= mask_product(&self.diagonal, s, false);
        }
        for (p, g) in self.rotations.iter().rev() {
            basis.apply_adjacent(amps, *p, &Self::adjoint2(g));
        }
    }

    /// `psi <- Gamma(u)† psi`.
    pub fn apply_adjoint(&self, basis: &FockBasis, amps: &mut [Complex64]) {
        for (p, g) in &self.rotations {
            basis.apply_adjacent(amps, *p, g);
        }
        for (i, &s) in basis.states.iter().enumerate() {
            amps[i] *= mask_product(&self.diagonal, s, true);
        }
    }
}

fn mask_product(values: &[Complex64], mut mask: u64, conj: bool) -> Complex64 {
    let mut acc = Complex64::new(1.0, 0.0);
    while mask != 0 {
        let p = mask.trailing_zeros() as usize;
        acc *= if conj { values[p].conj() } else { values[p] };
        mask &= mask - 1;
    }
    acc
}

/// Determinant by partial-pivot LU; destroys `a` (row-major `n x n`).
pub(crate) fn det_in_place(a: &mut [Complex64], n: usize) -> Complex64 {
    let mut det = Complex64::new(1.0, 0.0);
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| a[x * n + col].norm().total_cmp(&a[y * n + col].norm())).unwrap();
        if a[pivot * n + col].norm() == 0.0 {
            return Complex64::default();
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            det = -det;
        }
        let d = a[col * n + col];
        det *= d;
        for row in col + 1..n {
            let f = a[row * n + col] / d;
            if f == Complex64::default() {
                continue;
            }
            for k in col + 1..n {
                let v = a[col * n + k];
                a[row * n + k] -= f * v;
            }
        }
    }
    det
}

/// Unitary evolution machinery shared by all states on one configuration.
#[derive(Debug, Clone)]
pub struct FockEngine {
    cfg: Arc<LatticeConfig>,
    basis: Arc<FockBasis>,
    fourier: ModeTransform,
    /// Total single-particle energy of each plane-wave occupation state.
    mode_energies: Vec<f64>,
    box_masks: Vec<u64>,
}

impl FockEngine {
    pub fn new(cfg: Arc<LatticeConfig>) -> Result<Self, StateError> {
        let basis = Arc::new(FockBasis::new(cfg.volume(), cfg.particles)?);
        let fourier = ModeTransform::decompose(&Fourier::new(cfg.lattice).matrix());
        let energies = cfg.lattice.energies();
        let mode_energies = basis
            .states()
            .iter()
            .map(|&s| {
                let mut e = 0.0;
                let mut m = s;
                while m != 0 {
                    e += energies[m.trailing_zeros() as usize];
                    m &= m - 1;
                }
                e
            })
            .collect();
        let box_masks = cfg.boxes.iter().map(|b| b.sites.iter().fold(0u64, |acc, &s| acc | (1u64 << s))).collect();
        Ok(FockEngine { cfg, basis, fourier, mode_energies, box_masks })
    }

    pub fn config(&self) -> &Arc<LatticeConfig> {
        &self.cfg
    }

    pub fn basis(&self) -> &Arc<FockBasis> {
        &self.basis
    }

    pub fn box_mask(&self, box_id: usize) -> u64 {
        self.box_masks[box_id]
    }

    /// Site-basis amplitudes to plane-wave occupation amplitudes.
    pub fn to_momentum(&self, site_amps: &[Complex64]) -> Vec<Complex64> {
        let mut v = site_amps.to_vec();
        self.fourier.apply_adjoint(&self.basis, &mut v);
        v
    }

    pub fn to_sites(&self, momentum_amps: &[Complex64]) -> Vec<Complex64> {
        let mut v = momentum_amps.to_vec();
        self.fourier.apply(&self.basis, &mut v);
        v
    }

    /// Phases `exp(-i t E)` on plane-wave occupation amplitudes.
    pub fn propagate_momentum(&self, momentum_amps: &mut [Complex64], t: f64) {
        for (a, &e) in momentum_amps.iter_mut().zip(&self.mode_energies) {
            *a *= Complex64::from_polar(1.0, -t * e);
        }
    }

    pub fn state(&self, amps: Vec<Complex64>) -> Result<FockState, StateError> {
        FockState::new(self.clone(), amps)
    }

    pub(crate) fn state_unchecked(&self, amps: Vec<Complex64>) -> FockState {
        FockState { engine: self.clone(), amps }
    }

    /// Occupation basis state for the given flat site indices.
    pub fn basis_state(&self, sites: &[usize]) -> Result<FockState, StateError> {
        let mask = sites.iter().fold(0u64, |acc, &s| acc | (1u64 << s));
        if mask.count_ones() as usize != self.cfg.particles {
            return Err(StateError::WrongParticleNumber {
                expected: self.cfg.particles,
                got: mask.count_ones() as usize,
            });
        }
        let mut amps = vec![Complex64::default(); self.basis.dim()];
        amps[self.basis.rank(mask)] = Complex64::new(1.0, 0.0);
        self.state(amps)
    }

    /// Plane-wave occupation state for the given flat momentum indices.
    pub fn momentum_state(&self, momenta: &[usize]) -> Result<FockState, StateError> {
        let mask = momenta.iter().fold(0u64, |acc, &s| acc | (1u64 << s));
        let mut amps = vec![Complex64::default(); self.basis.dim()];
        amps[self.basis.rank(mask)] = Complex64::new(1.0, 0.0);
        self.state(self.to_sites(&amps))
    }

    pub fn random(&self, seed: u64) -> FockState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut amps: Vec<Complex64> = (0..self.basis.dim())
            .map(|_| Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
            .collect();
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        amps.iter_mut().for_each(|a| *a /= norm);
        FockState { engine: self.clone(), amps }
    }

    /// Expands a Slater determinant: amplitude of `S` is `det(Phi[S, :])`.
    pub fn from_orbitals(&self, orbitals: &DMatrix<Complex64>) -> Result<FockState, StateError> {
        let n = orbitals.ncols();
        if n != self.cfg.particles || orbitals.nrows() != self.cfg.volume() {
            return Err(StateError::WrongParticleNumber { expected: self.cfg.particles, got: n });
        }
        let mut buf = vec![Complex64::default(); n * n];
        let amps = self
            .basis
            .states()
            .iter()
            .map(|&s| {
                let mut m = s;
                let mut row = 0;
                while m != 0 {
                    let x = m.trailing_zeros() as usize;
                    for k in 0..n {
                        buf[row * n + k] = orbitals[(x, k)];
                    }
                    row += 1;
                    m &= m - 1;
                }
                det_in_place(&mut buf, n)
            })
            .collect();
        self.state(amps)
    }

    /// `H |psi>` with `H = sum_{<x,y>} c†_x c_y` applied in the site basis.
    pub fn apply_hamiltonian(&self, amps: &[Complex64]) -> Vec<Complex64> {
        let lat = self.cfg.lattice;
        let mut out = vec![Complex64::default(); self.basis.dim()];
        for x in 0..lat.volume() {
            for y in lat.neighbours(x) {
                for (i, &s) in self.basis.states().iter().enumerate() {
                    if let Some((sign, t)) = FockBasis::hop(s, x, y) {
                        out[self.basis.rank(t)] += amps[i] * sign;
                    }
                }
            }
        }
        out
    }

    /// Flags of the equilibrium subspace: a basis state is in equilibrium
    /// iff every box density is within `epsilon * rho_bar` of `N / V`.
    pub fn equilibrium_flags(&self) -> Vec<bool> {
        let mean = self.cfg.mean_density();
        let thr = self.cfg.epsilon * self.cfg.rho_bar;
        let lv = self.cfg.box_volume() as f64;
        self.basis
            .states()
            .iter()
            .map(|&s| self.box_masks.iter().all(|&b| ((s & b).count_ones() as f64 / lv - mean).abs() <= thr))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct FockState {
    engine: FockEngine,
    amps: Vec<Complex64>,
}

impl FockState {
    pub fn new(engine: FockEngine, amps: Vec<Complex64>) -> Result<Self, StateError> {
        if amps.len() != engine.basis.dim() {
            return Err(StateError::DimensionMismatch { expected: engine.basis.dim(), got: amps.len() });
        }
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(StateError::NotNormalized(norm));
        }
        Ok(FockState { engine, amps })
    }

    pub fn engine(&self) -> &FockEngine {
        &self.engine
    }

    pub fn config(&self) -> &LatticeConfig {
        &self.engine.cfg
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `exp(-i H t) |psi>`, through the plane-wave occupation basis.
    pub fn evolve(&self, t: f64) -> FockState {
        let mut mom = self.engine.to_momentum(&self.amps);
        self.engine.propagate_momentum(&mut mom, t);
        FockState { engine: self.engine.clone(), amps: self.engine.to_sites(&mom) }
    }

    pub fn momentum_amplitudes(&self) -> Vec<Complex64> {
        self.engine.to_momentum(&self.amps)
    }

    /// Applies a function of the occupation pattern (diagonal operator).
    pub fn diagonal_expectation(&self, f: impl Fn(u64) -> f64) -> f64 {
        self.engine.basis.states().iter().zip(&self.amps).map(|(&s, a)| a.norm_sqr() * f(s)).sum()
    }

    pub fn density(&self, box_id: usize) -> f64 {
        let mask = self.engine.box_masks[box_id];
        let lv = self.config().box_volume() as f64;
        self.diagonal_expectation(|s| (s & mask).count_ones() as f64 / lv)
    }

    pub fn delta_rho_sq(&self, box_id: usize) -> f64 {
        let mask = self.engine.box_masks[box_id];
        let lv = self.config().box_volume() as f64;
        let mean = self.config().mean_density();
        self.diagonal_expectation(|s| ((s & mask).count_ones() as f64 / lv - mean).powi(2))
    }

    /// Exact `<P_neq>`: weight on basis states outside the equilibrium subspace.
    pub fn p_neq(&self) -> f64 {
        self.p_neq_with(&self.engine.equilibrium_flags())
    }

    pub fn p_neq_with(&self, flags: &[bool]) -> f64 {
        flags.iter().zip(&self.amps).filter(|(eq, _)| !**eq).map(|(_, a)| a.norm_sqr()).sum()
    }

    /// `<H>` evaluated in the plane-wave basis.
    pub fn energy(&self) -> f64 {
        self.momentum_amplitudes().iter().zip(&self.engine.mode_energies).map(|(a, e)| a.norm_sqr() * e).sum()
    }

    /// `<a†_p a_q>` over plane waves, indexed `[(p, q)]`.
    pub fn momentum_two_point(&self) -> DMatrix<Complex64> {
        let mom = self.momentum_amplitudes();
        let basis = &self.engine.basis;
        let v = basis.modes();
        let mut g = DMatrix::zeros(v, v);
        for (i, &s) in basis.states().iter().enumerate() {
            if mom[i] == Complex64::default() {
                continue;
            }
            for q in 0..v {
                if s & (1 << q) == 0 {
                    continue;
                }
                for p in 0..v {
                    if let Some((sign, t)) = FockBasis::hop(s, p, q) {
                        let j = basis.rank(t);
                        g[(p, q)] += mom[j].conj() * mom[i] * sign;
                    }
                }
            }
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeParams;
    use nalgebra::DVector;

    fn engine(size: usize, l: usize, n: usize) -> FockEngine {
        let cfg = LatticeConfig::derive(LatticeParams {
            dim: 1,
            size,
            box_side: l,
            rho_bar: n as f64 / size as f64,
            epsilon: 0.1,
        })
        .unwrap();
        FockEngine::new(Arc::new(cfg)).unwrap()
    }

    fn random_unitary(n: usize, seed: u64) -> DMatrix<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = DMatrix::from_fn(n, n, |_, _| {
            Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
        });
        for j in 0..n {
            for k in 0..j {
                let proj: Complex64 = (0..n).map(|i| m[(i, k)].conj() * m[(i, j)]).sum();
                for i in 0..n {
                    let v = m[(i, k)];
                    m[(i, j)] -= proj * v;
                }
            }
            let norm = (0..n).map(|i| m[(i, j)].norm_sqr()).sum::<f64>().sqrt();
            for i in 0..n {
                m[(i, j)] /= norm;
            }
        }
        m
    }

    #[test]
    fn basis_is_ordered_and_ranked() {
        let b = FockBasis::new(9, 3).unwrap();
        assert_eq!(b.dim(), 84);
        assert!(b.states().windows(2).all(|w| w[0] < w[1]));
        for (i, &s) in b.states().iter().enumerate() {
            assert_eq!(s.count_ones(), 3);
            assert_eq!(b.rank(s), i);
        }
    }

    #[test]
    fn capacity_is_enforced() {
        assert!(FockBasis::new(15, 7).is_ok());
        assert!(matches!(FockBasis::new(31, 15), Err(StateError::Capacity { .. })));
        assert!(matches!(FockBasis::new(65, 1), Err(StateError::TooManyModes(65))));
    }

    #[test]
    fn lift_on_one_particle_is_the_matrix() {
        let u = random_unitary(6, 3);
        let t = ModeTransform::decompose(&u);
        let basis = FockBasis::new(6, 1).unwrap();
        let psi: Vec<Complex64> = (0..6).map(|i| Complex64::new(i as f64, 1.0 - i as f64)).collect();
        let mut lifted = psi.clone();
        t.apply(&basis, &mut lifted);
        let direct = &u * DVector::from_vec(psi.clone());
        for i in 0..6 {
            assert!((lifted[i] - direct[i]).norm() < 1e-12);
        }
        t.apply_adjoint(&basis, &mut lifted);
        for i in 0..6 {
            assert!((lifted[i] - psi[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn lift_on_two_particles_matches_minors() {
        // Gamma(u)|{a<b}> has amplitude det(u[{x,y},{a,b}]) on |{x<y}>.
        let u = random_unitary(5, 11);
        let t = ModeTransform::decompose(&u);
        let basis = FockBasis::new(5, 2).unwrap();
        for (col, &src) in basis.states().iter().enumerate() {
            let mut amps = vec![Complex64::default(); basis.dim()];
            amps[col] = Complex64::new(1.0, 0.0);
            t.apply(&basis, &mut amps);
            let (a, b) = (src.trailing_zeros() as usize, 63 - src.leading_zeros() as usize);
            for (row, &dst) in basis.states().iter().enumerate() {
                let (x, y) = (dst.trailing_zeros() as usize, 63 - dst.leading_zeros() as usize);
                let minor = u[(x, a)] * u[(y, b)] - u[(x, b)] * u[(y, a)];
                assert!((amps[row] - minor).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn evolve_at_zero_is_identity() {
        let e = engine(9, 3, 3);
        let psi = e.random(5);
        let same = psi.evolve(0.0);
        for (a, b) in psi.amplitudes().iter().zip(same.amplitudes()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn momentum_eigenstate_is_stationary_up_to_phase() {
        let e = engine(9, 3, 3);
        let psi = e.momentum_state(&[0, 1, 8]).unwrap();
        let p0 = psi.p_neq();
        for t in [0.3, 1.7, 12.0] {
            let later = psi.evolve(t);
            let overlap: Complex64 = psi.amplitudes().iter().zip(later.amplitudes()).map(|(a, b)| a.conj() * b).sum();
            assert!((overlap.norm() - 1.0).abs() < 1e-10);
            assert!((later.p_neq() - p0).abs() < 1e-10);
        }
    }

    #[test]
    fn energy_is_conserved_and_matches_site_hamiltonian() {
        let e = engine(9, 3, 3);
        let psi = e.random(17);
        let h_psi = e.apply_hamiltonian(psi.amplitudes());
        let site_energy: f64 = psi.amplitudes().iter().zip(&h_psi).map(|(a, b)| (a.conj() * b).re).sum();
        let e0 = psi.energy();
        assert!((site_energy - e0).abs() < 1e-10);
        for t in [0.5, 3.0, 20.0] {
            let later = psi.evolve(t);
            assert!((later.norm() - 1.0).abs() < 1e-10);
            assert!((later.energy() - e0).abs() < 1e-9);
        }
    }

    #[test]
    fn evolution_matches_taylor_series_of_site_hamiltonian() {
        let e = engine(7, 3, 2);
        let psi = e.random(2);
        let t = 0.4;
        // exp(-iHt) by a converged Taylor series
        let mut term = psi.amplitudes().to_vec();
        let mut sum = term.clone();
        for k in 1..60 {
            let h = e.apply_hamiltonian(&term);
            term = h.into_iter().map(|v| v * Complex64::new(0.0, -t / k as f64)).collect();
            for (s, v) in sum.iter_mut().zip(&term) {
                *s += v;
            }
        }
        let evolved = psi.evolve(t);
        for (a, b) in sum.iter().zip(evolved.amplitudes()) {
            assert!((a - b).norm() < 1e-11);
        }
    }

    #[test]
    fn p_neq_examples() {
        let e = engine(9, 3, 3);
        let lat = e.config().lattice;
        let sites = |xs: &[i64]| xs.iter().map(|&x| lat.flat(&[x])).collect::<Vec<_>>();
        let packed = e.basis_state(&sites(&[-1, 0, 1])).unwrap();
        assert_eq!(packed.p_neq(), 1.0);
        let spread = e.basis_state(&sites(&[-3, 0, 3])).unwrap();
        assert_eq!(spread.p_neq(), 0.0);
        let mut amps = vec![Complex64::default(); e.basis().dim()];
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for st in [&packed, &spread] {
            for (a, b) in amps.iter_mut().zip(st.amplitudes()) {
                *a += b * s;
            }
        }
        let sup = e.state(amps).unwrap();
        assert!((sup.p_neq() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn determinant_small_cases() {
        let mut a = vec![
            Complex64::new(2.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(3.0, 0.0),
        ];
        assert!((det_in_place(&mut a, 2) - Complex64::new(5.0, 0.0)).norm() < 1e-14);
        let mut b = vec![
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
        ];
        assert!((det_in_place(&mut b, 2) + Complex64::new(1.0, 0.0)).norm() < 1e-14);
    }
}
