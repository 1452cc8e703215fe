use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::dynamics::dense::SymplecticPropagator;
use crate::dynamics::star::{BathTemperatures, StarModes};
use crate::error::{Error, Result};
use crate::model::{BlockTag, GaussianState, QuadraticModel};

/// Reduced map of the system for a factorized start:
/// mean -> drift * mean, covariance -> drift * C * drift^T + noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianChannel {
    pub drift: Matrix2<f64>,
    pub noise: Matrix2<f64>,
    pub time: f64,
}

impl GaussianChannel {
    pub fn identity() -> Self {
        GaussianChannel {
            drift: Matrix2::identity(),
            noise: Matrix2::zeros(),
            time: 0.0,
        }
    }

    /// Free evolution of an oscillator of mass m and frequency w.
    pub fn free(mass: f64, omega: f64, t: f64) -> Self {
        let (s, c) = (omega * t).sin_cos();
        GaussianChannel {
            drift: Matrix2::new(c, s / (mass * omega), -mass * omega * s, c),
            noise: Matrix2::zeros(),
            time: t,
        }
    }

    pub fn apply_mean(&self, mean: &Vector2<f64>) -> Vector2<f64> {
        self.drift * mean
    }

    pub fn apply_covariance(&self, cov: &Matrix2<f64>) -> Matrix2<f64> {
        let out = self.drift * cov * self.drift.transpose() + self.noise;
        (out + out.transpose()) * 0.5
    }

    /// `self` after `first`.
    pub fn after(&self, first: &GaussianChannel) -> GaussianChannel {
        GaussianChannel {
            drift: self.drift * first.drift,
            noise: self.drift * first.noise * self.drift.transpose() + self.noise,
            time: self.time + first.time,
        }
    }

    /// Smallest eigenvalue of noise + (i/2)(J - drift J drift^T); non-negative
    /// for a completely positive channel.
    pub fn complete_positivity_margin(&self) -> f64 {
        let det = self.drift.determinant();
        let imag = 0.5 * (1.0 - det);
        let n = &self.noise;
        let mean = 0.5 * (n[(0, 0)] + n[(1, 1)]);
        let half = 0.5 * (n[(0, 0)] - n[(1, 1)]);
        let off = 0.5 * (n[(0, 1)] + n[(1, 0)]);
        mean - (half * half + off * off + imag * imag).sqrt()
    }
}

/// Exact reduced channel at each time through the structured normal modes.
pub fn extract_channels(
    model: &QuadraticModel,
    temps: &BathTemperatures,
    times: &[f64],
) -> Result<Vec<GaussianChannel>> {
    for &t in times {
        if !t.is_finite() {
            return Err(Error::param("t", "must be finite"));
        }
    }
    StarModes::new(model)?.channels(temps, times)
}

pub fn extract_channel(
    model: &QuadraticModel,
    temps: &BathTemperatures,
    t: f64,
) -> Result<GaussianChannel> {
    Ok(extract_channels(model, temps, &[t])?[0])
}

/// Channel from three dense seed evolutions: two unit system means with zero
/// bath means for the drift, and one seed covariance `seed` (system block)
/// next to thermal baths for the noise.
pub fn extract_channel_dense(
    model: &QuadraticModel,
    temps: &BathTemperatures,
    t: f64,
    seed: Matrix2<f64>,
) -> Result<GaussianChannel> {
    let prop = SymplecticPropagator::new(model)?;
    let n = 1 + model.mode_count();
    let s = prop.at(t);
    let sys = [0, n];
    let mut drift = Matrix2::zeros();
    for (col, &src) in sys.iter().enumerate() {
        let mut e = DVector::zeros(2 * n);
        e[src] = 1.0;
        let out = &s * e;
        drift[(0, col)] = out[0];
        drift[(1, col)] = out[n];
    }
    let mut cov = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..2 {
        for j in 0..2 {
            cov[(sys[i], sys[j])] = seed[(i, j)];
        }
    }
    let mut offset = 1;
    for bath in model.baths() {
        let temp = temps.get(bath.label)?;
        for mode in &bath.modes {
            let (q, p) = (offset, n + offset);
            cov[(q, q)] = temp.position_variance(mode.frequency) / mode.mass;
            cov[(p, p)] = temp.momentum_variance(mode.frequency) * mode.mass;
            offset += 1;
        }
    }
    let state = GaussianState::new(DVector::zeros(2 * n), cov, model.layout())?;
    let evolved = prop.evolve(&state, t)?;
    let reduced = reduce_to_system(&evolved)?;
    let noise = reduced.system_covariance().expect("system block") - drift * seed * drift.transpose();
    Ok(GaussianChannel {
        drift,
        noise: (noise + noise.transpose()) * 0.5,
        time: t,
    })
}

pub fn evolve(state: &GaussianState, model: &QuadraticModel, t: f64) -> Result<GaussianState> {
    SymplecticPropagator::new(model)?.evolve(state, t)
}

/// Partial trace onto the system oscillator.
pub fn reduce_to_system(state: &GaussianState) -> Result<GaussianState> {
    if !state.layout.iter().any(|b| b.tag == BlockTag::System) {
        return Err(Error::Layout("state has no system block".into()));
    }
    let mean = state.system_mean().expect("system block");
    let cov = state.system_covariance().expect("system block");
    Ok(GaussianState::system(mean, cov))
}
