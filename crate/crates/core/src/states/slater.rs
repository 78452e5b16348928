//! Slater determinants: `N` orthonormal orbitals on `V` sites. Every
//! expectation value reduces to the one-body correlation matrix.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::fourier::Fourier;
use super::StateError;
use crate::lattice::LatticeConfig;

#[derive(Debug, Clone)]
pub struct SlaterState {
    cfg: Arc<LatticeConfig>,
    orbitals: DMatrix<Complex64>,
}

/// `G_xy = <c†_x c_y>`.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix(pub DMatrix<Complex64>);

impl CorrelationMatrix {
    pub fn trace(&self) -> f64 {
        self.0.diagonal().iter().map(|z| z.re).sum()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.0.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    pub fn hermiticity_defect(&self) -> f64 {
        (&self.0 - self.0.adjoint()).camax()
    }
}

fn orthonormality_defect(m: &DMatrix<Complex64>) -> f64 {
    let gram = m.adjoint() * m;
    let n = gram.nrows();
    (gram - DMatrix::identity(n, n)).camax()
}

/// Two passes of modified Gram-Schmidt on the columns.
fn orthonormalize(m: &mut DMatrix<Complex64>) {
    let (rows, cols) = m.shape();
    for _ in 0..2 {
        for j in 0..cols {
            for k in 0..j {
                let proj: Complex64 = (0..rows).map(|i| m[(i, k)].conj() * m[(i, j)]).sum();
                for i in 0..rows {
                    let v = m[(i, k)];
                    m[(i, j)] -= proj * v;
                }
            }
            let norm = m.column(j).norm();
            m.column_mut(j).unscale_mut(norm);
        }
    }
}

impl SlaterState {
    pub fn new(cfg: Arc<LatticeConfig>, orbitals: DMatrix<Complex64>) -> Result<Self, StateError> {
        if orbitals.nrows() != cfg.volume() {
            return Err(StateError::DimensionMismatch { expected: cfg.volume(), got: orbitals.nrows() });
        }
        if orbitals.ncols() != cfg.particles {
            return Err(StateError::WrongParticleNumber { expected: cfg.particles, got: orbitals.ncols() });
        }
        let defect = orthonormality_defect(&orbitals);
        if defect > 1e-10 {
            return Err(StateError::NotOrthonormal(defect));
        }
        Ok(SlaterState { cfg, orbitals })
    }

    /// Occupation basis state on the given flat sites.
    pub fn from_sites(cfg: Arc<LatticeConfig>, sites: &[usize]) -> Result<Self, StateError> {
        let mut m = DMatrix::zeros(cfg.volume(), sites.len());
        for (k, &s) in sites.iter().enumerate() {
            if s >= cfg.volume() {
                return Err(StateError::DimensionMismatch { expected: cfg.volume(), got: s });
            }
            m[(s, k)] = Complex64::new(1.0, 0.0);
        }
        Self::new(cfg, m)
    }

    /// Plane waves `a†_alpha` for the given flat momenta.
    pub fn from_momenta(cfg: Arc<LatticeConfig>, momenta: &[usize]) -> Result<Self, StateError> {
        let fourier = Fourier::new(cfg.lattice);
        let mut m = DMatrix::zeros(cfg.volume(), momenta.len());
        for (k, &a) in momenta.iter().enumerate() {
            m[(a, k)] = Complex64::new(1.0, 0.0);
            fourier.to_sites(m.column_mut(k).as_mut_slice());
        }
        Self::new(cfg, m)
    }

    /// Orthonormalized complex Gaussian orbitals.
    pub fn random(cfg: Arc<LatticeConfig>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = DMatrix::from_fn(cfg.volume(), cfg.particles, |_, _| {
            Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
        });
        orthonormalize(&mut m);
        SlaterState { cfg, orbitals: m }
    }

    pub fn config(&self) -> &Arc<LatticeConfig> {
        &self.cfg
    }

    pub fn orbitals(&self) -> &DMatrix<Complex64> {
        &self.orbitals
    }

    pub fn orthonormality_defect(&self) -> f64 {
        orthonormality_defect(&self.orbitals)
    }

    pub fn evolve(&self, t: f64) -> SlaterState {
        SlaterEvolver::new(self).at(t)
    }

    pub fn correlation(&self) -> CorrelationMatrix {
        CorrelationMatrix(self.orbitals.conjugate() * self.orbitals.transpose())
    }

    /// Orbitals in the plane-wave basis, one column per orbital.
    pub fn momentum_orbitals(&self) -> DMatrix<Complex64> {
        let fourier = Fourier::new(self.cfg.lattice);
        let mut m = self.orbitals.clone();
        for mut col in m.column_iter_mut() {
            fourier.to_momentum(col.as_mut_slice());
        }
        m
    }

    /// `<a†_p a_q>` over plane waves, indexed `[(p, q)]`.
    pub fn momentum_two_point(&self) -> DMatrix<Complex64> {
        let m = self.momentum_orbitals();
        m.conjugate() * m.transpose()
    }

    pub fn energy(&self) -> f64 {
        let energies = self.cfg.lattice.energies();
        let m = self.momentum_orbitals();
        m.column_iter().map(|c| c.iter().zip(&energies).map(|(z, e)| z.norm_sqr() * e).sum::<f64>()).sum()
    }

    /// Expected particle number in a set of sites.
    pub fn occupation(&self, sites: &[usize]) -> f64 {
        self.orbitals.column_iter().map(|c| sites.iter().map(|&x| c[x].norm_sqr()).sum::<f64>()).sum()
    }

    pub fn density(&self, box_id: usize) -> f64 {
        self.occupation(&self.cfg.boxes[box_id].sites) / self.cfg.box_volume() as f64
    }

    /// `<(rho_c - N/V)^2>` by Wick contraction restricted to the box.
    pub fn delta_rho_sq(&self, box_id: usize) -> f64 {
        let sites = &self.cfg.boxes[box_id].sites;
        let lv = self.cfg.box_volume() as f64;
        let n_box = self.occupation(sites);
        let frob = box_gram_frobenius_sq(&self.orbitals, sites);
        let centred = n_box - self.cfg.mean_density() * lv;
        ((centred * centred + n_box - frob) / (lv * lv)).max(0.0)
    }
}

/// `sum_{x,y in sites} |G_xy|^2 = ||Phi_B† Phi_B||_F^2`, with the Gram
/// matrix taken over whichever of sites or orbitals is fewer.
fn box_gram_frobenius_sq(orbitals: &DMatrix<Complex64>, sites: &[usize]) -> f64 {
    let n = orbitals.ncols();
    let b = sites.len();
    let (rows, len) = if n <= b { (n, b) } else { (b, n) };
    let mut re = vec![0.0; rows * len];
    let mut im = vec![0.0; rows * len];
    for k in 0..n {
        for (i, &x) in sites.iter().enumerate() {
            let z = orbitals[(x, k)];
            let idx = if n <= b { k * len + i } else { i * len + k };
            re[idx] = z.re;
            im[idx] = z.im;
        }
    }
    let mut total = 0.0;
    for r in 0..rows {
        let (ar, ai) = (&re[r * len..(r + 1) * len], &im[r * len..(r + 1) * len]);
        let self_dot: f64 = ar.iter().zip(ai).map(|(x, y)| x * x + y * y).sum();
        total += self_dot * self_dot;
        for s in r + 1..rows {
            let (br, bi) = (&re[s * len..(s + 1) * len], &im[s * len..(s + 1) * len]);
            let mut dr = 0.0;
            let mut di = 0.0;
            for i in 0..len {
                dr += ar[i] * br[i] + ai[i] * bi[i];
                di += ar[i] * bi[i] - ai[i] * br[i];
            }
            total += 2.0 * (dr * dr + di * di);
        }
    }
    total
}

/// Repeated evolution of one Slater state: the plane-wave components are
/// computed once and each time point costs one inverse transform per orbital.
#[derive(Debug, Clone)]
pub struct SlaterEvolver {
    cfg: Arc<LatticeConfig>,
    fourier: Fourier,
    energies: Vec<f64>,
    momentum: DMatrix<Complex64>,
}

impl SlaterEvolver {
    pub fn new(state: &SlaterState) -> Self {
        let fourier = Fourier::new(state.cfg.lattice);
        let mut momentum = state.orbitals.clone();
        for mut col in momentum.column_iter_mut() {
            fourier.to_momentum(col.as_mut_slice());
        }
        SlaterEvolver { cfg: state.cfg.clone(), fourier, energies: state.cfg.lattice.energies(), momentum }
    }

    pub fn at(&self, t: f64) -> SlaterState {
        let phases: Vec<Complex64> = self.energies.iter().map(|&e| Complex64::from_polar(1.0, -t * e)).collect();
        let mut m = self.momentum.clone();
        for mut col in m.column_iter_mut() {
            for (z, p) in col.iter_mut().zip(&phases) {
                *z *= p;
            }
            self.fourier.to_sites(col.as_mut_slice());
        }
        SlaterState { cfg: self.cfg.clone(), orbitals: m }
    }
}
