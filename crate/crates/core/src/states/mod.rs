//! Many-fermion pure states.
//!
//! Two engines share one set of conventions: [`FockState`] stores every
//! occupation amplitude and is exact but capped in size, [`SlaterState`]
//! stores `N` orbitals and reaches large lattices. Both evolve under the
//! nearest-neighbour hopping Hamiltonian, which is diagonal in plane waves.

pub mod fock;
pub mod fourier;
pub mod slater;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

pub use fock::{FockBasis, FockEngine, FockState, ModeTransform, FOCK_CAPACITY};
pub use fourier::Fourier;
pub use slater::{CorrelationMatrix, SlaterEvolver, SlaterState};

use crate::lattice::LatticeConfig;
use crate::observables::{FockQuartic, QuarticSource, WickQuartic};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("occupation basis of dimension {dimension} exceeds the capacity {capacity}")]
    Capacity { dimension: u128, capacity: usize },
    #[error("the exact engine supports at most 64 sites, got {0}")]
    TooManyModes(usize),
    #[error("{particles} fermions do not fit in {modes} modes")]
    TooManyParticles { particles: usize, modes: usize },
    #[error("expected {expected} fermions, got {got}")]
    WrongParticleNumber { expected: usize, got: usize },
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("state norm {0} differs from 1")]
    NotNormalized(f64),
    #[error("orbitals deviate from orthonormality by {0:e}")]
    NotOrthonormal(f64),
    #[error("unknown initial state {0:?}")]
    UnknownInitialState(String),
    #[error("initial state {0} needs the exact engine")]
    NeedsFock(String),
}

/// Flat indices of the `N` sites closest to the origin in Euclidean
/// distance; equal distances are ordered by flat index.
pub fn concentrated_sites(cfg: &LatticeConfig) -> Vec<usize> {
    let lat = cfg.lattice;
    let mut sites: Vec<(i64, usize)> =
        (0..lat.volume()).map(|f| (lat.coords(f).iter().map(|x| x * x).sum(), f)).collect();
    sites.sort_unstable();
    let mut out: Vec<usize> = sites.into_iter().take(cfg.particles).map(|(_, f)| f).collect();
    out.sort_unstable();
    out
}

/// Fills boxes round-robin, each box from its centre outward, so that with
/// `N` equal to the number of boxes every centre holds one fermion.
pub fn uniform_product_sites(cfg: &LatticeConfig) -> Vec<usize> {
    let lat = cfg.lattice;
    let ordered: Vec<Vec<usize>> = cfg
        .boxes
        .iter()
        .map(|b| {
            let c = &b.center.0;
            let mut s: Vec<(i64, usize)> = b
                .sites
                .iter()
                .map(|&f| {
                    let d =
                        lat.coords(f).iter().zip(c).map(|(x, y)| crate::lattice::wrap(x - y, lat.size).pow(2)).sum();
                    (d, f)
                })
                .collect();
            s.sort_unstable();
            s.into_iter().map(|(_, f)| f).collect()
        })
        .collect();
    let mut taken = vec![false; lat.volume()];
    let mut out = Vec::with_capacity(cfg.particles);
    let depth = cfg.box_volume();
    'fill: for k in 0..depth {
        for list in &ordered {
            if out.len() == cfg.particles {
                break 'fill;
            }
            let f = list[k];
            if !taken[f] {
                taken[f] = true;
                out.push(f);
            }
        }
    }
    out.sort_unstable();
    out
}

/// The `N` plane waves of smallest `|E_alpha|`, ties by flat index.
pub fn momentum_filled_modes(cfg: &LatticeConfig) -> Vec<usize> {
    let e = cfg.lattice.energies();
    let mut modes: Vec<usize> = (0..e.len()).collect();
    modes.sort_by(|&a, &b| e[a].abs().total_cmp(&e[b].abs()).then(a.cmp(&b)));
    modes.truncate(cfg.particles);
    modes.sort_unstable();
    modes
}

pub fn concentrated_state(cfg: Arc<LatticeConfig>) -> SlaterState {
    let sites = concentrated_sites(&cfg);
    SlaterState::from_sites(cfg, &sites).expect("site occupation is orthonormal")
}

pub fn uniform_product_state(cfg: Arc<LatticeConfig>) -> SlaterState {
    let sites = uniform_product_sites(&cfg);
    SlaterState::from_sites(cfg, &sites).expect("site occupation is orthonormal")
}

pub fn momentum_filled_state(cfg: Arc<LatticeConfig>) -> SlaterState {
    let modes = momentum_filled_modes(&cfg);
    SlaterState::from_momenta(cfg, &modes).expect("plane waves are orthonormal")
}

/// Initial-state specifier as written in run configurations:
/// `concentrated`, `uniform_product`, `momentum_filled`,
/// `random_slater(seed)` or `random_fock(seed)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialState {
    Concentrated,
    UniformProduct,
    MomentumFilled,
    RandomSlater(u64),
    /// Gaussian random amplitudes over the whole occupation basis; exact engine only.
    RandomFock(u64),
}

impl InitialState {
    /// Whether the state is invariant under complex conjugation of its
    /// site amplitudes, which makes its expectation values even in `t`.
    pub fn is_real(&self) -> bool {
        matches!(self, InitialState::Concentrated | InitialState::UniformProduct | InitialState::MomentumFilled)
    }
}

impl FromStr for InitialState {
    type Err = StateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let seeded = |prefix: &str| -> Option<u64> {
            t.strip_prefix(prefix)?.strip_prefix('(')?.strip_suffix(')')?.trim().parse().ok()
        };
        match t {
            "concentrated" => Ok(InitialState::Concentrated),
            "uniform_product" => Ok(InitialState::UniformProduct),
            "momentum_filled" => Ok(InitialState::MomentumFilled),
            _ => {
                if let Some(seed) = seeded("random_slater") {
                    Ok(InitialState::RandomSlater(seed))
                } else if let Some(seed) = seeded("random_fock") {
                    Ok(InitialState::RandomFock(seed))
                } else {
                    Err(StateError::UnknownInitialState(s.to_string()))
                }
            }
        }
    }
}

impl fmt::Display for InitialState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialState::Concentrated => write!(f, "concentrated"),
            InitialState::UniformProduct => write!(f, "uniform_product"),
            InitialState::MomentumFilled => write!(f, "momentum_filled"),
            InitialState::RandomSlater(s) => write!(f, "random_slater({s})"),
            InitialState::RandomFock(s) => write!(f, "random_fock({s})"),
        }
    }
}

impl InitialState {
    pub fn slater(&self, cfg: Arc<LatticeConfig>) -> Result<SlaterState, StateError> {
        Ok(match self {
            InitialState::Concentrated => concentrated_state(cfg),
            InitialState::UniformProduct => uniform_product_state(cfg),
            InitialState::MomentumFilled => momentum_filled_state(cfg),
            InitialState::RandomSlater(seed) => SlaterState::random(cfg, *seed),
            InitialState::RandomFock(_) => return Err(StateError::NeedsFock(self.to_string())),
        })
    }

    pub fn fock(&self, engine: &FockEngine) -> Result<FockState, StateError> {
        match self {
            InitialState::RandomFock(seed) => Ok(engine.random(*seed)),
            _ => engine.from_orbitals(self.slater(engine.config().clone())?.orbitals()),
        }
    }
}

/// Expectation values shared by both engines.
pub trait ManyBody: Send + Sync + Sized {
    fn config(&self) -> &LatticeConfig;
    fn evolve(&self, t: f64) -> Self;
    /// `<rho_c>` for box index `box_id`.
    fn density(&self, box_id: usize) -> f64;
    /// `<(rho_c - N/V)^2>`.
    fn delta_rho_sq(&self, box_id: usize) -> f64;
    /// `<a†_p a_q>` over plane waves.
    fn momentum_two_point(&self) -> DMatrix<Complex64>;
    /// Exact `<P_neq>` when the engine can evaluate it.
    fn exact_p_neq(&self) -> Option<f64>;
    /// Plane-wave quartic expectations for the spectral time average.
    fn quartic_source(&self) -> Box<dyn QuarticSource + '_>;
    /// Whether the state is, up to a global phase, invariant under complex
    /// conjugation in the site basis; expectation values of densities are
    /// then even in `t`.
    fn is_time_symmetric(&self) -> bool;

    /// `t -> Psi(t)`, with whatever precomputation repeated evolution allows.
    fn sampler(&self) -> Box<dyn Fn(f64) -> Self + Send + Sync + '_> {
        Box::new(move |t| self.evolve(t))
    }

    /// `sum_c <(rho_c - N/V)^2> / (epsilon rho_bar)^2`, an upper bound on `<P_neq>`.
    fn noneq_surrogate(&self) -> f64 {
        let cfg = self.config();
        (0..cfg.boxes.len()).map(|b| self.delta_rho_sq(b)).sum::<f64>() / cfg.threshold_sq()
    }
}

impl ManyBody for SlaterState {
    fn config(&self) -> &LatticeConfig {
        self.config()
    }
    fn evolve(&self, t: f64) -> Self {
        self.evolve(t)
    }
    fn density(&self, box_id: usize) -> f64 {
        self.density(box_id)
    }
    fn delta_rho_sq(&self, box_id: usize) -> f64 {
        self.delta_rho_sq(box_id)
    }
    fn momentum_two_point(&self) -> DMatrix<Complex64> {
        self.momentum_two_point()
    }
    fn exact_p_neq(&self) -> Option<f64> {
        None
    }
    fn quartic_source(&self) -> Box<dyn QuarticSource + '_> {
        Box::new(WickQuartic { g: self.momentum_two_point() })
    }
    fn is_time_symmetric(&self) -> bool {
        let g = self.correlation().0;
        g.iter().all(|z| z.im.abs() < 1e-13)
    }
    fn sampler(&self) -> Box<dyn Fn(f64) -> Self + Send + Sync + '_> {
        let evolver = SlaterEvolver::new(self);
        Box::new(move |t| evolver.at(t))
    }
}

impl ManyBody for FockState {
    fn config(&self) -> &LatticeConfig {
        self.config()
    }
    fn evolve(&self, t: f64) -> Self {
        self.evolve(t)
    }
    fn density(&self, box_id: usize) -> f64 {
        self.density(box_id)
    }
    fn delta_rho_sq(&self, box_id: usize) -> f64 {
        self.delta_rho_sq(box_id)
    }
    fn momentum_two_point(&self) -> DMatrix<Complex64> {
        self.momentum_two_point()
    }
    fn exact_p_neq(&self) -> Option<f64> {
        Some(self.p_neq())
    }
    fn quartic_source(&self) -> Box<dyn QuarticSource + '_> {
        Box::new(FockQuartic::new(self))
    }
    fn is_time_symmetric(&self) -> bool {
        let amps = self.amplitudes();
        let pivot = amps.iter().copied().max_by(|a, b| a.norm_sqr().total_cmp(&b.norm_sqr())).unwrap_or_default();
        if pivot.norm() == 0.0 {
            return true;
        }
        let phase = pivot.conj() / pivot.norm();
        amps.iter().all(|a| (a * phase).im.abs() < 1e-13)
    }
    fn sampler(&self) -> Box<dyn Fn(f64) -> Self + Send + Sync + '_> {
        let engine = self.engine().clone();
        let mom = self.momentum_amplitudes();
        Box::new(move |t| {
            let mut m = mom.clone();
            engine.propagate_momentum(&mut m, t);
            engine.state_unchecked(engine.to_sites(&m))
        })
    }
}
