//! Periodic hypercubic lattice, momentum labels, dispersion and the
//! coarse-graining boxes.
//!
//! Sites and momenta share one labelling convention: every coordinate is an
//! integer in `(-L/2, L/2)`. Flat indices enumerate `x mod L` with the first
//! axis varying fastest, so the flat index of a coordinate vector is
//! `sum_mu (x^mu mod L) * L^mu`.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("linear size L = {0} must be odd and at least 3")]
    BadLinearSize(usize),
    #[error("box side l = {0} must be odd")]
    EvenBoxSide(usize),
    #[error("box side l = {l} must satisfy 1 <= l <= L = {size}")]
    BoxTooLarge { l: usize, size: usize },
    #[error("density rho_bar = {0} must lie in (0, 1]")]
    BadDensity(f64),
    #[error("threshold epsilon = {0} must lie in (0, 1)")]
    BadEpsilon(f64),
    #[error("density rho_bar = {rho_bar} leaves no fermion on V = {volume} sites")]
    NoParticles { rho_bar: f64, volume: usize },
    #[error("lattice volume L^d overflows")]
    VolumeOverflow,
}

/// Canonical representative of `x mod size` in `(-size/2, size/2)`.
///
/// This is the only place coordinates are wrapped.
#[inline]
pub fn wrap(x: i64, size: usize) -> i64 {
    let size = size as i64;
    let r = x.rem_euclid(size);
    if 2 * r > size {
        r - size
    } else {
        r
    }
}

/// Lattice site label `x = (x^1, ..., x^d)` with `|x^mu| < L/2`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SiteIndex(pub Vec<i64>);

/// Momentum label `alpha = (alpha^1, ..., alpha^d)` with `|alpha^mu| < L/2`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MomentumIndex(pub Vec<i64>);

impl MomentumIndex {
    pub fn zero(dim: usize) -> Self {
        MomentumIndex(vec![0; dim])
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn sup_norm(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }
}

impl fmt::Display for MomentumIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|c| c.to_string()).collect();
        write!(f, "{}", parts.join(";"))
    }
}

/// Geometry of the periodic `L^d` lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    pub dim: usize,
    pub size: usize,
}

impl Lattice {
    pub fn new(dim: usize, size: usize) -> Result<Self, LatticeError> {
        if dim == 0 {
            return Err(LatticeError::ZeroDimension);
        }
        if size < 3 || size % 2 == 0 {
            return Err(LatticeError::BadLinearSize(size));
        }
        size.checked_pow(dim as u32).ok_or(LatticeError::VolumeOverflow)?;
        Ok(Lattice { dim, size })
    }

    #[inline]
    pub fn volume(&self) -> usize {
        self.size.pow(self.dim as u32)
    }

    /// Largest coordinate magnitude, `(L - 1) / 2`.
    #[inline]
    pub fn half(&self) -> i64 {
        (self.size as i64 - 1) / 2
    }

    pub fn flat(&self, coords: &[i64]) -> usize {
        debug_assert_eq!(coords.len(), self.dim);
        let size = self.size as i64;
        coords.iter().rev().fold(0usize, |acc, &c| acc * self.size + c.rem_euclid(size) as usize)
    }

    pub fn coords(&self, mut flat: usize) -> Vec<i64> {
        let mut out = Vec::with_capacity(self.dim);
        for _ in 0..self.dim {
            out.push(wrap((flat % self.size) as i64, self.size));
            flat /= self.size;
        }
        out
    }

    pub fn site(&self, flat: usize) -> SiteIndex {
        SiteIndex(self.coords(flat))
    }

    pub fn momentum(&self, flat: usize) -> MomentumIndex {
        MomentumIndex(self.coords(flat))
    }

    pub fn site_flat(&self, x: &SiteIndex) -> usize {
        self.flat(&x.0)
    }

    pub fn momentum_flat(&self, a: &MomentumIndex) -> usize {
        self.flat(&a.0)
    }

    /// Flat index of `a + b` with periodic wrapping in every coordinate.
    #[inline]
    pub fn add_flat(&self, mut a: usize, mut b: usize) -> usize {
        let mut out = 0;
        let mut stride = 1;
        for _ in 0..self.dim {
            let s = (a % self.size + b % self.size) % self.size;
            out += s * stride;
            stride *= self.size;
            a /= self.size;
            b /= self.size;
        }
        out
    }

    /// Flat index of `-a`.
    #[inline]
    pub fn neg_flat(&self, mut a: usize) -> usize {
        let mut out = 0;
        let mut stride = 1;
        for _ in 0..self.dim {
            let s = (self.size - a % self.size) % self.size;
            out += s * stride;
            stride *= self.size;
            a /= self.size;
        }
        out
    }

    /// Flat-index table of nearest neighbours `x +- e_mu`.
    pub fn neighbours(&self, flat: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(2 * self.dim);
        let mut stride = 1;
        for _ in 0..self.dim {
            for step in [1, self.size - 1] {
                let unit = stride * step;
                let moved = self.add_flat(flat, unit);
                out.push(moved);
            }
            stride *= self.size;
        }
        out
    }

    /// Single-particle energy `E_alpha = sum_mu 2 cos(2 pi alpha^mu / L)`.
    pub fn dispersion(&self, alpha: &MomentumIndex) -> f64 {
        alpha.0.iter().map(|&a| 2.0 * (2.0 * PI * a as f64 / self.size as f64).cos()).sum()
    }

    /// Energies of all momenta, indexed by flat momentum index.
    pub fn energies(&self) -> Vec<f64> {
        let one_d: Vec<f64> = (0..self.size).map(|k| 2.0 * (2.0 * PI * k as f64 / self.size as f64).cos()).collect();
        (0..self.volume())
            .map(|mut f| {
                let mut e = 0.0;
                for _ in 0..self.dim {
                    e += one_d[f % self.size];
                    f /= self.size;
                }
                e
            })
            .collect()
    }

    /// All nonzero momenta with `||m||_inf <= cut`, in flat-index order.
    pub fn momenta_within(&self, cut: i64) -> Vec<MomentumIndex> {
        (0..self.volume()).map(|f| self.momentum(f)).filter(|m| !m.is_zero() && m.sup_norm() <= cut).collect()
    }
}

/// Raw parameters of a lattice world, as read from configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeParams {
    pub dim: usize,
    pub size: usize,
    pub box_side: usize,
    pub rho_bar: f64,
    pub epsilon: f64,
}

/// A coarse-graining box `B(c) = { x : ||x - c||_inf < l/2 }`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseBox {
    pub center: SiteIndex,
    /// Flat site indices, sorted ascending; always `l^d` of them.
    pub sites: Vec<usize>,
}

/// The derived world: lattice, particle number and coarse-graining boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeConfig {
    pub lattice: Lattice,
    pub box_side: usize,
    pub rho_bar: f64,
    pub epsilon: f64,
    /// Number of fermions `N`, the largest integer with `N / V <= rho_bar`.
    pub particles: usize,
    /// Boxes per axis, `n = ceil(L / l)`.
    pub boxes_per_axis: usize,
    pub boxes: Vec<CoarseBox>,
}

/// Largest `N` with `N / V <= rho_bar`, evaluated with the same floating
/// division a reader of `N / V` would perform.
pub fn particle_number(rho_bar: f64, volume: usize) -> usize {
    let v = volume as f64;
    let mut n = (rho_bar * v).floor().max(0.0) as usize;
    n = n.min(volume);
    while n < volume && ((n + 1) as f64) / v <= rho_bar {
        n += 1;
    }
    while n > 0 && (n as f64) / v > rho_bar {
        n -= 1;
    }
    n
}

impl LatticeConfig {
    pub fn derive(params: LatticeParams) -> Result<Self, LatticeError> {
        let lattice = Lattice::new(params.dim, params.size)?;
        let LatticeParams { box_side, rho_bar, epsilon, .. } = params;
        if box_side % 2 == 0 {
            return Err(LatticeError::EvenBoxSide(box_side));
        }
        if box_side == 0 || box_side > params.size {
            return Err(LatticeError::BoxTooLarge { l: box_side, size: params.size });
        }
        if !(rho_bar > 0.0 && rho_bar <= 1.0) {
            return Err(LatticeError::BadDensity(rho_bar));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(LatticeError::BadEpsilon(epsilon));
        }
        let volume = lattice.volume();
        let particles = particle_number(rho_bar, volume);
        if particles == 0 {
            return Err(LatticeError::NoParticles { rho_bar, volume });
        }
        let boxes_per_axis = params.size.div_ceil(box_side);

        let mut cfg =
            LatticeConfig { lattice, box_side, rho_bar, epsilon, particles, boxes_per_axis, boxes: Vec::new() };
        cfg.boxes = cfg
            .centers()
            .into_iter()
            .map(|center| {
                let sites = cfg.box_sites(&center);
                CoarseBox { center, sites }
            })
            .collect();
        Ok(cfg)
    }

    pub fn params(&self) -> LatticeParams {
        LatticeParams {
            dim: self.lattice.dim,
            size: self.lattice.size,
            box_side: self.box_side,
            rho_bar: self.rho_bar,
            epsilon: self.epsilon,
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.lattice.dim
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.lattice.size
    }

    #[inline]
    pub fn volume(&self) -> usize {
        self.lattice.volume()
    }

    /// Mean density `N / V`.
    #[inline]
    pub fn mean_density(&self) -> f64 {
        self.particles as f64 / self.volume() as f64
    }

    /// Number of sites in each box, `l^d`.
    #[inline]
    pub fn box_volume(&self) -> usize {
        self.box_side.pow(self.dim() as u32)
    }

    /// `(epsilon * rho_bar)^2`, the denominator of the occupation surrogate.
    #[inline]
    pub fn threshold_sq(&self) -> f64 {
        (self.epsilon * self.rho_bar).powi(2)
    }

    /// Box centres `{ j l : -n/2 < j <= n/2 }^d`, wrapped onto the lattice.
    pub fn centers(&self) -> Vec<SiteIndex> {
        let n = self.boxes_per_axis as i64;
        // -n/2 < j <= n/2  <=>  j in [floor(-n/2) + 1, floor(n/2)]
        let lo = (-n).div_euclid(2) + 1;
        let hi = n.div_euclid(2);
        let axis: Vec<i64> = (lo..=hi).map(|j| wrap(j * self.box_side as i64, self.size())).collect();
        let mut out = vec![Vec::new()];
        for _ in 0..self.dim() {
            out = out
                .into_iter()
                .flat_map(|prefix: Vec<i64>| {
                    axis.iter().map(move |&c| {
                        let mut p = prefix.clone();
                        p.push(c);
                        p
                    })
                })
                .collect();
        }
        out.into_iter().map(SiteIndex).collect()
    }

    /// Sites of `B(c)` as flat indices, sorted.
    pub fn box_sites(&self, center: &SiteIndex) -> Vec<usize> {
        let r = (self.box_side as i64 - 1) / 2;
        let mut offsets = vec![Vec::new()];
        for _ in 0..self.dim() {
            offsets = offsets
                .into_iter()
                .flat_map(|prefix: Vec<i64>| {
                    (-r..=r).map(move |o| {
                        let mut p = prefix.clone();
                        p.push(o);
                        p
                    })
                })
                .collect();
        }
        let mut sites: Vec<usize> = offsets
            .into_iter()
            .map(|off| {
                let x: Vec<i64> = center.0.iter().zip(&off).map(|(c, o)| c + o).collect();
                self.lattice.flat(&x)
            })
            .collect();
        sites.sort_unstable();
        sites
    }

    /// Index of the box whose centre equals `center`.
    pub fn box_id(&self, center: &SiteIndex) -> Option<usize> {
        let flat = self.lattice.site_flat(center);
        self.boxes.iter().position(|b| self.lattice.site_flat(&b.center) == flat)
    }

    /// Coverage multiplicity of each site by the boxes.
    pub fn coverage(&self) -> Vec<usize> {
        let mut cov = vec![0; self.volume()];
        for b in &self.boxes {
            for &s in &b.sites {
                cov[s] += 1;
            }
        }
        cov
    }

    pub fn dispersion(&self, alpha: &MomentumIndex) -> f64 {
        self.lattice.dispersion(alpha)
    }
}

/// Smallest odd `l` with `ceil(L / l) = n`, if one exists.
pub fn box_side_for(size: usize, n: usize) -> Option<usize> {
    let mut l = size.div_ceil(n);
    if l % 2 == 0 {
        l += 1;
    }
    (l <= size && size.div_ceil(l) == n).then_some(l)
}

/// Largest odd integer `<= x`.
pub fn largest_odd_at_most(x: usize) -> usize {
    if x % 2 == 1 {
        x
    } else {
        x.saturating_sub(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(d: usize, size: usize, l: usize, rho: f64) -> LatticeConfig {
        LatticeConfig::derive(LatticeParams { dim: d, size, box_side: l, rho_bar: rho, epsilon: 0.1 }).unwrap()
    }

    #[test]
    fn derive_one_dimensional() {
        let c = cfg(1, 9, 3, 1.0 / 3.0);
        assert_eq!(c.volume(), 9);
        assert_eq!(c.particles, 3);
        assert_eq!(c.boxes_per_axis, 3);
        let centers: Vec<i64> = c.centers().into_iter().map(|s| s.0[0]).collect();
        assert_eq!(centers, vec![-3, 0, 3]);
    }

    #[test]
    fn derive_two_dimensional() {
        let c = cfg(2, 9, 3, 1.0 / 3.0);
        assert_eq!(c.volume(), 81);
        assert_eq!(c.particles, 27);
        assert_eq!(c.boxes_per_axis, 3);
        assert_eq!(c.boxes.len(), 9);
    }

    #[test]
    fn derive_particle_number_matches_brute_force() {
        let c = cfg(1, 15, 7, 0.4);
        let brute = (0..=15usize).filter(|&n| n as f64 / 15.0 <= 0.4).max().unwrap();
        assert_eq!(brute, 6);
        assert_eq!(c.particles, brute);
        assert_eq!(c.boxes_per_axis, 3);
    }

    #[test]
    fn derive_rejects_bad_input() {
        let p = LatticeParams { dim: 1, size: 8, box_side: 3, rho_bar: 0.3, epsilon: 0.1 };
        assert_eq!(LatticeConfig::derive(p), Err(LatticeError::BadLinearSize(8)));
        let p = LatticeParams { size: 9, box_side: 4, ..p };
        assert_eq!(LatticeConfig::derive(p), Err(LatticeError::EvenBoxSide(4)));
        let p = LatticeParams { box_side: 11, ..p };
        assert!(matches!(LatticeConfig::derive(p), Err(LatticeError::BoxTooLarge { .. })));
        let p = LatticeParams { box_side: 3, rho_bar: 0.05, ..p };
        assert!(matches!(LatticeConfig::derive(p), Err(LatticeError::NoParticles { .. })));
        let p = LatticeParams { rho_bar: 0.3, epsilon: 1.0, ..p };
        assert_eq!(LatticeConfig::derive(p), Err(LatticeError::BadEpsilon(1.0)));
    }

    #[test]
    fn dispersion_values() {
        let lat = Lattice::new(1, 7).unwrap();
        assert_eq!(lat.dispersion(&MomentumIndex(vec![0])), 2.0);
        let lat2 = Lattice::new(2, 7).unwrap();
        assert_eq!(lat2.dispersion(&MomentumIndex(vec![0, 0])), 4.0);
        let lat5 = Lattice::new(1, 5).unwrap();
        let e = lat5.dispersion(&MomentumIndex(vec![2]));
        assert!((e - (-1.618_033_988_749_895)).abs() < 1e-12);
    }

    #[test]
    fn energies_table_matches_dispersion() {
        let lat = Lattice::new(2, 5).unwrap();
        let table = lat.energies();
        for f in 0..lat.volume() {
            assert!((table[f] - lat.dispersion(&lat.momentum(f))).abs() < 1e-14);
        }
    }

    #[test]
    fn centred_box_at_origin() {
        let c = cfg(1, 9, 3, 1.0 / 3.0);
        let sites: Vec<i64> = c.box_sites(&SiteIndex(vec![0])).into_iter().map(|f| c.lattice.coords(f)[0]).collect();
        let mut sorted = sites.clone();
        sorted.sort();
        assert_eq!(sorted, vec![-1, 0, 1]);
    }

    #[test]
    fn exact_divisibility_gives_partition() {
        let c = cfg(1, 9, 3, 1.0 / 3.0);
        assert!(c.coverage().iter().all(|&k| k == 1));
    }

    #[test]
    fn overlapping_boxes_cover_with_six_doubles() {
        let c = cfg(1, 15, 7, 0.4);
        let cov = c.coverage();
        assert!(cov.iter().all(|&k| k >= 1));
        assert_eq!(cov.iter().filter(|&&k| k == 2).count(), 6);
        assert_eq!(cov.iter().sum::<usize>(), 21);
        assert!(c.boxes.iter().all(|b| b.sites.len() == 7));
    }

    #[test]
    fn box_cardinality_in_three_dimensions() {
        let c = cfg(3, 7, 3, 0.2);
        assert_eq!(c.boxes.len(), 27);
        for b in &c.boxes {
            assert_eq!(b.sites.len(), 27);
        }
    }

    #[test]
    fn box_side_helpers() {
        assert_eq!(box_side_for(10001, 3), Some(3335));
        assert_eq!(box_side_for(10001, 5), Some(2001));
        assert_eq!(largest_odd_at_most(133), 133);
        assert_eq!(largest_odd_at_most(134), 133);
    }

    #[test]
    fn neighbours_are_distinct_unit_steps() {
        let lat = Lattice::new(2, 5).unwrap();
        let nb = lat.neighbours(lat.flat(&[2, -2]));
        let coords: Vec<Vec<i64>> = nb.iter().map(|&f| lat.coords(f)).collect();
        assert_eq!(coords, vec![vec![-2, -2], vec![1, -2], vec![2, -1], vec![2, 2]]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn wrap_is_periodic(x in -1000i64..1000, k in -5i64..5, half in 1usize..20) {
                let size = 2 * half + 1;
                let w = wrap(x, size);
                prop_assert_eq!(w, wrap(x + k * size as i64, size));
                prop_assert!(2 * w.abs() < size as i64);
            }

            #[test]
            fn flat_round_trip(d in 1usize..4, half in 1usize..5, seed in 0usize..10_000) {
                let lat = Lattice::new(d, 2 * half + 1).unwrap();
                let f = seed % lat.volume();
                prop_assert_eq!(lat.flat(&lat.coords(f)), f);
            }

            #[test]
            fn dispersion_is_even(d in 1usize..4, half in 1usize..6, seed in 0usize..10_000) {
                let lat = Lattice::new(d, 2 * half + 1).unwrap();
                let a = lat.momentum(seed % lat.volume());
                let neg = MomentumIndex(a.0.iter().map(|c| -c).collect());
                prop_assert!((lat.dispersion(&a) - lat.dispersion(&neg)).abs() < 1e-13);
                prop_assert!(lat.dispersion(&a).abs() <= 2.0 * d as f64 + 1e-12);
            }

            #[test]
            fn add_and_neg_agree_with_coordinates(d in 1usize..4, half in 1usize..5, a in 0usize..10_000, b in 0usize..10_000) {
                let lat = Lattice::new(d, 2 * half + 1).unwrap();
                let (a, b) = (a % lat.volume(), b % lat.volume());
                let sum: Vec<i64> = lat.coords(a).iter().zip(lat.coords(b)).map(|(x, y)| x + y).collect();
                prop_assert_eq!(lat.add_flat(a, b), lat.flat(&sum));
                prop_assert_eq!(lat.add_flat(a, lat.neg_flat(a)), 0);
            }
        }
    }
}
