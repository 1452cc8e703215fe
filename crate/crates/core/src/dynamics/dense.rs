//! Dense symplectic propagation for models small enough to hold A.
//!
//! With M = A^{1/2} J A^{1/2} (antisymmetric) and K = M^T M, the flow is
//! exp(t J A) = A^{-1/2} [cos(t sqrt K) + M sin(t sqrt K)/sqrt K] A^{1/2}
//! and the thermal covariance is 1/2 A^{-1/2} sqrt K coth(beta sqrt K / 2) A^{-1/2}.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{GaussianState, QuadraticModel};
use crate::units::Temperature;

pub(crate) fn symplectic_form(dim: usize) -> DMatrix<f64> {
    let n = dim / 2;
    let mut j = DMatrix::zeros(dim, dim);
    for i in 0..n {
        j[(i, n + i)] = 1.0;
        j[(n + i, i)] = -1.0;
    }
    j
}

fn spectral_function(
    vectors: &DMatrix<f64>,
    values: &DVector<f64>,
    f: impl Fn(f64) -> f64,
) -> DMatrix<f64> {
    let mut scaled = vectors.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= f(values[k]);
    }
    scaled * vectors.transpose()
}

#[derive(Debug, Clone)]
pub struct DenseModes {
    a: DMatrix<f64>,
    a_half: DMatrix<f64>,
    a_inv_half: DMatrix<f64>,
    m: DMatrix<f64>,
    k_vectors: DMatrix<f64>,
    /// Normal-mode frequencies sqrt(kappa), each appearing twice.
    frequencies: DVector<f64>,
}

impl DenseModes {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let dim = a.nrows();
        if dim == 0 || dim % 2 != 0 || a.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim + dim % 2,
                found: a.ncols(),
            });
        }
        let sym = (a + a.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        let max = eig.eigenvalues.amax();
        let min = eig.eigenvalues.min();
        if !(min > 1e-18 * max) {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
        }
        let a_half = spectral_function(&eig.eigenvectors, &eig.eigenvalues, f64::sqrt);
        let a_inv_half = spectral_function(&eig.eigenvectors, &eig.eigenvalues, |x| 1.0 / x.sqrt());
        let m = &a_half * symplectic_form(dim) * &a_half;
        let k = m.transpose() * &m;
        let k = (&k + k.transpose()) * 0.5;
        let keig = k.symmetric_eigen();
        let frequencies = keig.eigenvalues.map(|x| x.max(0.0).sqrt());
        Ok(DenseModes {
            a: sym,
            a_half,
            a_inv_half,
            m,
            k_vectors: keig.eigenvectors,
            frequencies,
        })
    }

    pub fn dimension(&self) -> usize {
        self.a.nrows()
    }

    pub fn normal_frequencies(&self) -> &DVector<f64> {
        &self.frequencies
    }

    pub fn generator(&self) -> DMatrix<f64> {
        symplectic_form(self.dimension()) * &self.a
    }

    pub fn propagator(&self, t: f64) -> DMatrix<f64> {
        let c = spectral_function(&self.k_vectors, &self.frequencies, |w| (w * t).cos());
        let s = spectral_function(&self.k_vectors, &self.frequencies, |w| {
            if w * t.abs() < 1e-8 {
                t
            } else {
                (w * t).sin() / w
            }
        });
        let inner = c + &self.m * s;
        &self.a_inv_half * inner * &self.a_half
    }

    pub fn thermal_covariance(&self, temperature: Temperature) -> DMatrix<f64> {
        let g = spectral_function(&self.k_vectors, &self.frequencies, |w| {
            0.5 * w * temperature.coth_factor(w)
        });
        let cov = &self.a_inv_half * g * &self.a_inv_half;
        (&cov + cov.transpose()) * 0.5
    }
}

/// exp(t J A) for one model, evaluated on demand per time.
#[derive(Debug, Clone)]
pub struct SymplecticPropagator {
    modes: DenseModes,
}

impl SymplecticPropagator {
    pub fn new(model: &QuadraticModel) -> Result<Self> {
        Ok(SymplecticPropagator {
            modes: DenseModes::new(&model.coefficient_matrix())?,
        })
    }

    pub fn from_matrix(a: &DMatrix<f64>) -> Result<Self> {
        Ok(SymplecticPropagator {
            modes: DenseModes::new(a)?,
        })
    }

    pub fn generator(&self) -> DMatrix<f64> {
        self.modes.generator()
    }

    pub fn at(&self, t: f64) -> DMatrix<f64> {
        self.modes.propagator(t)
    }

    /// Scaling-and-squaring matrix exponential of t J A, for cross-checks.
    pub fn at_by_scaling_and_squaring(&self, t: f64) -> DMatrix<f64> {
        (self.generator() * t).exp()
    }

    pub fn modes(&self) -> &DenseModes {
        &self.modes
    }

    pub fn evolve(&self, state: &GaussianState, t: f64) -> Result<GaussianState> {
        if !t.is_finite() {
            return Err(Error::param("t", "must be finite"));
        }
        let dim = self.modes.dimension();
        if state.mean.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: state.mean.len(),
            });
        }
        let s = self.at(t);
        let cov = &s * &state.covariance * s.transpose();
        Ok(GaussianState {
            mean: &s * &state.mean,
            covariance: (&cov + cov.transpose()) * 0.5,
            layout: state.layout.clone(),
        })
    }
}
