//! Multi-dimensional discrete Fourier transform between site amplitudes and
//! plane-wave amplitudes.
//!
//! `a†_alpha = V^{-1/2} sum_x exp(2 pi i alpha.x / L) c†_x`, so an orbital
//! `phi(x)` has plane-wave components
//! `phi~(alpha) = V^{-1/2} sum_x exp(-2 pi i alpha.x / L) phi(x)`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::lattice::Lattice;

#[derive(Clone)]
pub struct Fourier {
    lattice: Lattice,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl std::fmt::Debug for Fourier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fourier").field("lattice", &self.lattice).finish()
    }
}

impl Fourier {
    pub fn new(lattice: Lattice) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(lattice.size);
        let inverse = planner.plan_fft_inverse(lattice.size);
        Fourier { lattice, forward, inverse, scale: 1.0 / (lattice.volume() as f64).sqrt() }
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    /// Site amplitudes to plane-wave amplitudes, in place.
    pub fn to_momentum(&self, data: &mut [Complex64]) {
        self.transform(data, &*self.forward);
    }

    /// Plane-wave amplitudes to site amplitudes, in place.
    pub fn to_sites(&self, data: &mut [Complex64]) {
        self.transform(data, &*self.inverse);
    }

    fn transform(&self, data: &mut [Complex64], fft: &dyn Fft<f64>) {
        let size = self.lattice.size;
        let volume = self.lattice.volume();
        assert_eq!(data.len(), volume);
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        // axis 0 lines are contiguous
        fft.process_with_scratch(data, &mut scratch);
        let mut line = vec![Complex64::default(); size];
        let mut stride = size;
        for _ in 1..self.lattice.dim {
            let block = stride * size;
            for base in (0..volume).step_by(block) {
                for offset in 0..stride {
                    let start = base + offset;
                    for (k, v) in line.iter_mut().enumerate() {
                        *v = data[start + k * stride];
                    }
                    fft.process_with_scratch(&mut line, &mut scratch);
                    for (k, v) in line.iter().enumerate() {
                        data[start + k * stride] = *v;
                    }
                }
            }
            stride = block;
        }
        for v in data.iter_mut() {
            *v *= self.scale;
        }
    }

    /// Dense unitary `F_{x,alpha} = V^{-1/2} exp(2 pi i alpha.x / L)`.
    pub fn matrix(&self) -> nalgebra::DMatrix<Complex64> {
        let lat = self.lattice;
        let v = lat.volume();
        let size = lat.size as f64;
        let coords: Vec<Vec<i64>> = (0..v).map(|f| lat.coords(f)).collect();
        nalgebra::DMatrix::from_fn(v, v, |x, a| {
            let dot: i64 = coords[x].iter().zip(&coords[a]).map(|(p, q)| p * q).sum();
            let phase = 2.0 * std::f64::consts::PI * (dot.rem_euclid(lat.size as i64)) as f64 / size;
            Complex64::from_polar(self.scale, phase)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_dense_matrix() {
        for (d, size) in [(1, 7), (2, 5), (3, 3)] {
            let lat = Lattice::new(d, size).unwrap();
            let f = Fourier::new(lat);
            let m = f.matrix();
            let v = lat.volume();
            let data: Vec<Complex64> =
                (0..v).map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 1.3).cos())).collect();
            let mut mom = data.clone();
            f.to_momentum(&mut mom);
            let dense = m.adjoint() * nalgebra::DVector::from_vec(data.clone());
            for i in 0..v {
                assert!((mom[i] - dense[i]).norm() < 1e-12);
            }
            f.to_sites(&mut mom);
            for i in 0..v {
                assert!((mom[i] - data[i]).norm() < 1e-12);
            }
        }
    }
}
