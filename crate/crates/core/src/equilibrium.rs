//! Equilibrium of the damped oscillator: reduced variances, the effective
//! oscillator whose canonical state reproduces them, and its Fock matrix.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::baths::{BathKind, SpectralDensitySpec};
use crate::dynamics::StarModes;
use crate::error::{Error, Result};
use crate::fock::{FockBasis, FockDensityMatrix};
use crate::model::{QuadraticModel, SystemOscillator};
use crate::units::Temperature;

const STATIONARY_LEAKAGE_LIMIT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquilibriumVariances {
    pub q2: f64,
    pub p2: f64,
    pub inverse_temperature: f64,
}

impl EquilibriumVariances {
    pub fn new(q2: f64, p2: f64, inverse_temperature: f64) -> Result<Self> {
        if !(q2 > 0.0 && p2 > 0.0) {
            return Err(Error::Unphysical(format!("variances must be positive: {q2}, {p2}")));
        }
        if q2 * p2 < 0.25 * (1.0 - 1e-12) {
            return Err(Error::Unphysical(format!(
                "<q^2><p^2> = {} violates the uncertainty bound",
                q2 * p2
            )));
        }
        if !(inverse_temperature > 0.0 && inverse_temperature.is_finite()) {
            return Err(Error::param("beta", "must be positive and finite"));
        }
        Ok(EquilibriumVariances {
            q2,
            p2,
            inverse_temperature,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectiveOscillator {
    pub m_eff: f64,
    pub omega_eff: f64,
    pub partition_norm: f64,
    pub inverse_temperature: f64,
}

/// Reduced variances of the global thermal state of `model`.
pub fn equilibrium_variances(
    model: &QuadraticModel,
    temperature: Temperature,
) -> Result<EquilibriumVariances> {
    if temperature.is_zero() {
        return Err(Error::param("temperature", "must be positive"));
    }
    let cov = StarModes::new(model)?.thermal_system_covariance(temperature);
    EquilibriumVariances::new(cov[(0, 0)], cov[(1, 1)], temperature.beta())
}

/// m_eff = sqrt(p2/q2)/w_eff, w_eff = (2/beta) arccoth(2 sqrt(q2 p2)).
pub fn effective_parameters(v: &EquilibriumVariances) -> Result<EffectiveOscillator> {
    let x = 2.0 * (v.q2 * v.p2).sqrt();
    if !(x > 1.0) {
        return Err(Error::ArccothDomain(x));
    }
    let arccoth = 0.5 * ((x + 1.0) / (x - 1.0)).ln();
    let beta = v.inverse_temperature;
    let omega_eff = 2.0 / beta * arccoth;
    let m_eff = (v.p2 / v.q2).sqrt() / omega_eff;
    Ok(EffectiveOscillator {
        m_eff,
        omega_eff,
        partition_norm: 1.0 / (2.0 * (0.5 * beta * omega_eff).sinh()),
        inverse_temperature: beta,
    })
}

/// <n|k_eff> for n < rows, k < cols. The effective eigenstates are the bare
/// ones squeezed by r = ln sqrt(m_eff w_eff / m w0); with b = cosh r a + sinh r a^dag
/// the overlaps follow a three-term recursion.
pub fn effective_overlap(
    eff: &EffectiveOscillator,
    bare: &SystemOscillator,
    rows: usize,
    cols: usize,
) -> DMatrix<f64> {
    let r = 0.5 * (eff.m_eff * eff.omega_eff / (bare.mass * bare.frequency)).ln();
    let (ch, sh, th) = (r.cosh(), r.sinh(), r.tanh());
    let work_rows = rows + cols + 1;
    let mut o = DMatrix::zeros(work_rows, cols);
    o[(0, 0)] = 1.0 / ch.sqrt();
    for n in 1..work_rows - 1 {
        if n % 2 == 1 {
            // odd rows of the ground state stay zero
            let v = -th * ((n as f64 - 0.0) / (n as f64 + 1.0)).sqrt() * o[(n - 1, 0)];
            o[(n + 1, 0)] = v;
        }
    }
    for k in 0..cols - 1 {
        let inv = 1.0 / ((k + 1) as f64).sqrt();
        for n in 0..work_rows - (k + 2) {
            let mut v = sh * ((n + 1) as f64).sqrt() * o[(n + 1, k)];
            if n > 0 {
                v += ch * (n as f64).sqrt() * o[(n - 1, k)];
            }
            o[(n, k + 1)] = v * inv;
        }
    }
    o.rows(0, rows).into_owned()
}

fn effective_populations(eff: &EffectiveOscillator) -> Vec<f64> {
    let q = (-eff.inverse_temperature * eff.omega_eff).exp();
    let mut p = Vec::new();
    let mut w = 1.0 - q;
    while p.len() < 4000 && (p.is_empty() || w > 1e-18) {
        p.push(w);
        w *= q;
    }
    p
}

/// Canonical state of the effective oscillator in the bare Fock basis.
pub fn stationary_density_matrix(
    eff: &EffectiveOscillator,
    basis: &FockBasis,
) -> Result<FockDensityMatrix> {
    let p = effective_populations(eff);
    let o = effective_overlap(eff, basis.oscillator(), basis.dim(), p.len());
    let mut weighted = o.clone();
    for (k, mut col) in weighted.column_iter_mut().enumerate() {
        col *= p[k];
    }
    let rho = weighted * o.transpose();
    let rho = FockDensityMatrix::from_real(&((&rho + rho.transpose()) * 0.5));
    let leak = rho.leakage();
    if leak > STATIONARY_LEAKAGE_LIMIT {
        return Err(Error::TruncationLeakage {
            leakage: leak,
            limit: STATIONARY_LEAKAGE_LIMIT,
        });
    }
    Ok(rho)
}

/// Reduced variances from imaginary-frequency sums,
/// <q^2> = (1/beta) sum_n 1/(w0^2 + v_n^2 + |v_n| g(|v_n|)),
/// <p^2> = (1/beta) sum_n (w0^2 + |v_n| g)/(w0^2 + v_n^2 + |v_n| g),
/// with g the Laplace transform of the damping kernel (natural units,
/// m = w0 = 1). `window` restricts the spectral density to [lo, hi], matching
/// a discretized bath; `None` uses the full Drude kernel.
pub fn matsubara_variances(
    spec: &SpectralDensitySpec,
    window: Option<(f64, f64)>,
    omega0: f64,
    beta: f64,
) -> Result<(f64, f64)> {
    if spec.kind != BathKind::OhmicDrude {
        return Err(Error::param("kind", "imaginary-frequency oracle covers ohmic_drude only"));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::param("beta", "must be positive and finite"));
    }
    let gamma = spec.coupling_strength;
    let cut = spec.cutoff;
    let laplace = |nu: f64| -> f64 {
        match window {
            None => gamma * cut / (cut + nu),
            Some((lo, hi)) => band_limited_laplace(gamma, cut, lo, hi, nu),
        }
    };
    let w2 = omega0 * omega0;
    let term = |n: usize| -> (f64, f64) {
        let nu = 2.0 * PI * n as f64 / beta;
        let g = if n == 0 { 0.0 } else { nu * laplace(nu) };
        let den = w2 + nu * nu + g;
        (1.0 / den, (w2 + g) / den)
    };
    let sum_to = |count: usize| -> (f64, f64) {
        let (mut q, mut p) = term(0);
        let mut qs = 0.0;
        let mut ps = 0.0;
        for n in 1..=count {
            let (a, b) = term(n);
            qs += a;
            ps += b;
        }
        // terms fall as 1/n^2: close the tail with sum_{n>N} 1/n^2
        let nn = count as f64;
        let tail = 1.0 / nn - 0.5 / (nn * nn) + 1.0 / (6.0 * nn * nn * nn);
        let (a, b) = term(count);
        qs += a * nn * nn * tail;
        ps += b * nn * nn * tail;
        q += 2.0 * qs;
        p += 2.0 * ps;
        (q / beta, p / beta)
    };
    let n1 = 200_000;
    let (q1, p1) = sum_to(n1);
    let (q2, p2) = sum_to(2 * n1);
    // remaining error falls as 1/N^2
    Ok(((4.0 * q2 - q1) / 3.0, (4.0 * p2 - p1) / 3.0))
}

/// (2/pi) int_lo^hi gamma cut^2 / (cut^2 + w^2) * nu / (nu^2 + w^2) dw.
fn band_limited_laplace(gamma: f64, cut: f64, lo: f64, hi: f64, nu: f64) -> f64 {
    let arc = |c: f64| ((hi / c).atan() - (lo / c).atan()) / c;
    let eval = |nu: f64| 2.0 / PI * gamma * cut * cut * nu * (arc(nu) - arc(cut)) / (cut * cut - nu * nu);
    if (nu - cut).abs() < 1e-4 * cut {
        0.5 * (eval(cut * (1.0 - 2e-4)) + eval(cut * (1.0 + 2e-4)))
    } else {
        eval(nu)
    }
}
