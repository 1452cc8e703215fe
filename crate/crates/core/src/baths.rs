//! Spectral densities, damping kernels and bath discretization.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_positive, Error, Result};
use crate::par;
use crate::units::{BOLTZMANN_SI, HBAR_SI};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BathKind {
    OhmicDrude,
    Blackbody,
}

/// A bath characterized by its spectral density.
///
/// For `OhmicDrude`, `coupling_strength` is the friction rate gamma and
/// `system_mass_ref` is the bare mass. For `Blackbody` it is the radiative
/// time constant tau and `system_mass_ref` is the renormalized mass
/// M = m / (1 - tau * cutoff), which is infinite exactly at the causality bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralDensitySpec {
    pub kind: BathKind,
    pub coupling_strength: f64,
    pub cutoff: f64,
    pub system_mass_ref: f64,
}

/// Value of a damping kernel. The blackbody kernel carries a delta function at
/// t = 0 whose weight is reported separately instead of being sampled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelValue {
    pub smooth: f64,
    pub delta_weight: f64,
}

impl SpectralDensitySpec {
    pub fn ohmic_drude(gamma: f64, cutoff: f64, mass: f64) -> Result<Self> {
        ensure_finite("gamma", gamma)?;
        if gamma < 0.0 {
            return Err(Error::param("gamma", format!("must be >= 0, got {gamma}")));
        }
        ensure_positive("cutoff", cutoff)?;
        ensure_positive("mass", mass)?;
        Ok(SpectralDensitySpec {
            kind: BathKind::OhmicDrude,
            coupling_strength: gamma,
            cutoff,
            system_mass_ref: mass,
        })
    }

    /// Blackbody spec for a charge of bare mass `bare_mass`. Rejects
    /// `cutoff > 1/tau_bb`.
    pub fn blackbody(tau_bb: f64, cutoff: f64, bare_mass: f64) -> Result<Self> {
        ensure_finite("tau_bb", tau_bb)?;
        if tau_bb < 0.0 {
            return Err(Error::param("tau_bb", format!("must be >= 0, got {tau_bb}")));
        }
        ensure_positive("cutoff", cutoff)?;
        ensure_positive("mass", bare_mass)?;
        if tau_bb > 0.0 && cutoff > 1.0 / tau_bb {
            return Err(Error::CausalityViolation {
                cutoff,
                bound: 1.0 / tau_bb,
            });
        }
        Ok(SpectralDensitySpec {
            kind: BathKind::Blackbody,
            coupling_strength: tau_bb,
            cutoff,
            system_mass_ref: renormalized_mass(bare_mass, tau_bb, cutoff),
        })
    }

    pub fn is_momentum_coupled(&self) -> bool {
        self.kind == BathKind::Blackbody
    }

    pub fn evaluate(&self, omega: f64) -> Result<f64> {
        if omega.is_nan() || omega < 0.0 {
            return Err(Error::param("omega", format!("must be >= 0, got {omega}")));
        }
        Ok(self.density(omega))
    }

    pub(crate) fn density(&self, omega: f64) -> f64 {
        let c2 = self.cutoff * self.cutoff;
        let lorentz = c2 / (c2 + omega * omega);
        match self.kind {
            BathKind::OhmicDrude => {
                self.system_mass_ref * self.coupling_strength * omega * lorentz
            }
            BathKind::Blackbody => {
                self.system_mass_ref * self.coupling_strength * omega.powi(3) * lorentz
            }
        }
    }

    pub fn damping_kernel(&self, t: f64) -> KernelValue {
        let decay = (-self.cutoff * t.abs()).exp();
        match self.kind {
            BathKind::OhmicDrude => KernelValue {
                smooth: self.coupling_strength * self.cutoff * decay,
                delta_weight: 0.0,
            },
            BathKind::Blackbody => KernelValue {
                smooth: -self.coupling_strength * self.cutoff.powi(3) * decay,
                delta_weight: 2.0 * self.coupling_strength * self.cutoff * self.cutoff,
            },
        }
    }

    /// Integral of the kernel over the whole real line, delta weight included.
    pub fn kernel_integral(&self) -> f64 {
        match self.kind {
            BathKind::OhmicDrude => 2.0 * self.coupling_strength,
            BathKind::Blackbody => {
                let tau = self.coupling_strength;
                let c = self.cutoff;
                2.0 * tau * c * c - 2.0 * tau * c * c
            }
        }
    }

    /// Constant-kernel friction rate omega0^2 * tau used for the blackbody
    /// field when the static friction of the Drude-regularized kernel vanishes.
    pub fn constant_kernel_rate(&self, omega0: f64) -> Option<f64> {
        match self.kind {
            BathKind::Blackbody => Some(omega0 * omega0 * self.coupling_strength),
            BathKind::OhmicDrude => None,
        }
    }
}

pub fn renormalized_mass(bare_mass: f64, tau_bb: f64, cutoff: f64) -> f64 {
    let denom = 1.0 - tau_bb * cutoff;
    if denom <= 0.0 {
        f64::INFINITY
    } else {
        bare_mass / denom
    }
}

pub fn evaluate_spectral_density(spec: &SpectralDensitySpec, omega: f64) -> Result<f64> {
    spec.evaluate(omega)
}

pub fn damping_kernel(spec: &SpectralDensitySpec, t: f64) -> KernelValue {
    spec.damping_kernel(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingType {
    Position,
    Momentum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathMode {
    pub mass: f64,
    pub frequency: f64,
    /// c_j for position coupling, m_k * omega_k for momentum coupling.
    pub coupling: f64,
    pub coupling_type: CouplingType,
}

impl BathMode {
    /// Coupling of the equivalent position-coupled mode after the canonical
    /// swap Q = p/(m w), P = -m w q, which maps the momentum form onto the
    /// position form with c = -m_k w_k^2.
    pub fn position_equivalent_coupling(&self) -> f64 {
        match self.coupling_type {
            CouplingType::Position => self.coupling,
            CouplingType::Momentum => -self.coupling * self.frequency,
        }
    }

    /// Spectral weight pi c^2 / (2 m w) carried by this mode.
    pub fn spectral_weight(&self) -> f64 {
        let c = self.position_equivalent_coupling();
        0.5 * PI * c * c / (self.mass * self.frequency)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRule {
    Linear,
    Logarithmic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationScheme {
    pub node_rule: NodeRule,
    pub mode_count: usize,
    pub frequency_ceiling: f64,
    /// Lower edge of the logarithmic grid. Ignored by the linear rule.
    pub frequency_floor: Option<f64>,
}

const DEFAULT_FLOOR_RATIO: f64 = 1e-6;

impl DiscretizationScheme {
    pub fn new(node_rule: NodeRule, mode_count: usize, frequency_ceiling: f64) -> Self {
        DiscretizationScheme {
            node_rule,
            mode_count,
            frequency_ceiling,
            frequency_floor: None,
        }
    }

    /// Ceiling at ten times the cutoff.
    pub fn for_spec(spec: &SpectralDensitySpec, node_rule: NodeRule, mode_count: usize) -> Self {
        Self::new(node_rule, mode_count, 10.0 * spec.cutoff)
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.frequency_floor = Some(floor);
        self
    }

    pub fn with_mode_count(mut self, mode_count: usize) -> Self {
        self.mode_count = mode_count;
        self
    }

    pub fn validate(&self, cutoff: f64) -> Result<()> {
        if self.mode_count == 0 {
            return Err(Error::param("mode_count", "must be at least 1"));
        }
        ensure_positive("omega_max", self.frequency_ceiling)?;
        if self.frequency_ceiling <= cutoff {
            return Err(Error::param(
                "omega_max",
                format!(
                    "must lie strictly above the cutoff {cutoff}, got {}",
                    self.frequency_ceiling
                ),
            ));
        }
        if let Some(floor) = self.frequency_floor {
            ensure_positive("omega_min", floor)?;
            if floor >= self.frequency_ceiling {
                return Err(Error::param("omega_min", "must lie below omega_max"));
            }
        }
        Ok(())
    }

    /// Frequency interval covered by the cells.
    pub fn window(&self) -> (f64, f64) {
        let top = self.frequency_ceiling;
        match self.node_rule {
            NodeRule::Linear => (0.0, top),
            NodeRule::Logarithmic => (self.frequency_floor.unwrap_or(top * DEFAULT_FLOOR_RATIO), top),
        }
    }

    /// Node frequencies and cell widths.
    pub fn nodes(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.mode_count;
        let top = self.frequency_ceiling;
        match self.node_rule {
            NodeRule::Linear => {
                let dw = top / n as f64;
                ((0..n).map(|j| (j as f64 + 0.5) * dw).collect(), vec![dw; n])
            }
            NodeRule::Logarithmic => {
                let floor = self.frequency_floor.unwrap_or(top * DEFAULT_FLOOR_RATIO);
                let h = (top / floor).ln() / n as f64;
                let edge = |j: usize| floor * (j as f64 * h).exp();
                let nodes = (0..n).map(|j| floor * ((j as f64 + 0.5) * h).exp()).collect();
                let widths = (0..n).map(|j| edge(j + 1) - edge(j)).collect();
                (nodes, widths)
            }
        }
    }
}

/// Midpoint-rule discretization c_j^2 = (2/pi) m_j w_j J(w_j) dw_j with
/// m_j equal to the system mass. Blackbody modes are momentum coupled with
/// m_k = (2/pi) J(w_k) dw_k / w_k^3.
pub fn discretize_bath(
    spec: &SpectralDensitySpec,
    scheme: &DiscretizationScheme,
) -> Result<Vec<BathMode>> {
    scheme.validate(spec.cutoff)?;
    ensure_finite("coupling_strength", spec.coupling_strength)?;
    ensure_positive("system_mass_ref", spec.system_mass_ref)?;
    let (nodes, widths) = scheme.nodes();
    let modes = par::map_range(nodes.len(), |j| {
        let w = nodes[j];
        let weight = 2.0 / PI * spec.density(w) * widths[j];
        match spec.kind {
            BathKind::OhmicDrude => {
                let mass = spec.system_mass_ref;
                BathMode {
                    mass,
                    frequency: w,
                    coupling: (mass * w * weight).sqrt(),
                    coupling_type: CouplingType::Position,
                }
            }
            BathKind::Blackbody => {
                let mass = weight / w.powi(3);
                BathMode {
                    mass,
                    frequency: w,
                    coupling: mass * w,
                    coupling_type: CouplingType::Momentum,
                }
            }
        }
    });
    // zero coupling yields zero-mass momentum modes, which are not oscillators
    if modes.iter().any(|m| !(m.mass > 0.0) || !m.mass.is_finite()) {
        return Err(Error::param(
            "tau_bb",
            "blackbody modes need a positive radiative time constant",
        ));
    }
    Ok(modes)
}

/// Damping kernel rebuilt from discrete modes,
/// (1/m) sum_j c_j^2 / (m_j w_j^2) cos(w_j t).
pub fn reconstructed_kernel(modes: &[BathMode], reference_mass: f64, t: f64) -> f64 {
    modes
        .iter()
        .map(|m| {
            let c = m.position_equivalent_coupling();
            c * c / (m.mass * m.frequency * m.frequency) * (m.frequency * t).cos()
        })
        .sum::<f64>()
        / reference_mass
}

/// hbar / (k_B T) in seconds for a temperature in kelvin.
pub fn thermal_correlation_time(kelvin: f64) -> Result<f64> {
    if !(kelvin.is_finite() && kelvin > 0.0) {
        return Err(Error::param(
            "temperature",
            format!("must be positive, got {kelvin}"),
        ));
    }
    Ok(HBAR_SI / (BOLTZMANN_SI * kelvin))
}
