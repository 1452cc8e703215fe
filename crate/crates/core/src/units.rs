//! Physical constants and the natural-unit convention.
//!
//! Everything inside the crate is expressed with hbar = m = omega_0 = k_B = 1.
//! SI values only appear at the edges (thermal correlation times, the
//! blackbody radiation time constant).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reduced Planck constant, J s.
pub const HBAR_SI: f64 = 1.054_571_817e-34;
/// Boltzmann constant, J/K.
pub const BOLTZMANN_SI: f64 = 1.380_649e-23;
/// Radiation-reaction time of the electron, 2e^2 / 3 m_e c^3, in seconds.
pub const ELECTRON_RADIATION_TIME_SI: f64 = 6.24e-24;

/// Temperature in natural units, k_B T / (hbar omega_0).
///
/// Zero is allowed and means the ground-state limit (coth -> 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value >= 0.0 {
            Ok(Temperature(value))
        } else {
            Err(Error::param(
                "temperature",
                format!("must be finite and non-negative, got {value}"),
            ))
        }
    }

    pub const fn zero() -> Self {
        Temperature(0.0)
    }

    /// From the dimensionless inverse temperature hbar omega_0 / k_B T.
    /// An infinite beta gives zero temperature.
    pub fn from_beta(beta: f64) -> Result<Self> {
        if beta.is_nan() || beta <= 0.0 {
            return Err(Error::param(
                "beta",
                format!("must be positive, got {beta}"),
            ));
        }
        if beta.is_infinite() {
            return Ok(Temperature::zero());
        }
        Temperature::new(1.0 / beta)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn beta(self) -> f64 {
        if self.0 == 0.0 {
            f64::INFINITY
        } else {
            1.0 / self.0
        }
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0.0
    }

    /// coth(omega / 2T), equal to 1 at T = 0.
    pub fn coth_factor(self, omega: f64) -> f64 {
        if self.0 == 0.0 {
            return 1.0;
        }
        let x = 0.5 * omega / self.0;
        if x > 20.0 {
            1.0
        } else {
            1.0 / x.tanh()
        }
    }

    /// Variance of a mass-weighted coordinate of a free mode of frequency omega.
    pub fn position_variance(self, omega: f64) -> f64 {
        self.coth_factor(omega) / (2.0 * omega)
    }

    /// Variance of a mass-weighted momentum of a free mode of frequency omega.
    pub fn momentum_variance(self, omega: f64) -> f64 {
        0.5 * omega * self.coth_factor(omega)
    }
}

/// Natural-unit time corresponding to `seconds` for an oscillator of angular
/// frequency `omega0_si` (rad/s).
pub fn natural_time(seconds: f64, omega0_si: f64) -> f64 {
    seconds * omega0_si
}

/// Natural-unit temperature for `kelvin` and an oscillator of angular frequency
/// `omega0_si` (rad/s).
pub fn natural_temperature(kelvin: f64, omega0_si: f64) -> Result<Temperature> {
    Temperature::new(BOLTZMANN_SI * kelvin / (HBAR_SI * omega0_si))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_temperature_coth_is_one() {
        assert_eq!(Temperature::zero().coth_factor(0.3), 1.0);
        assert!(Temperature::from_beta(f64::INFINITY).unwrap().is_zero());
    }

    #[test]
    fn beta_round_trip() {
        let t = Temperature::from_beta(8.2724).unwrap();
        assert!((t.beta() - 8.2724).abs() < 1e-12);
        assert!(Temperature::from_beta(-1.0).is_err());
        assert!(Temperature::new(f64::NAN).is_err());
    }

    #[test]
    fn high_temperature_equipartition() {
        let t = Temperature::new(1e4).unwrap();
        let var = t.position_variance(1.0);
        assert!((var - 1e4).abs() / 1e4 < 1e-8);
    }

    #[test]
    fn paper_temperature_ratio_at_277_kelvin() {
        let t = natural_temperature(277.0, 3e14).unwrap();
        assert!((t.beta() - 8.27).abs() < 0.02);
    }
}
