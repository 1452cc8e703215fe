//! Quadratic Hamiltonians over system + discretized baths, and Gaussian states.
//!
//! Phase-space ordering is z = (q_S, q_1..q_N, p_S, p_1..p_N) everywhere, with
//! H = 1/2 z^T A z.

use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::baths::{BathKind, BathMode, CouplingType, SpectralDensitySpec};
use crate::dynamics::dense::DenseModes;
use crate::error::{ensure_positive, Error, Result};
use crate::units::Temperature;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemOscillator {
    pub mass: f64,
    pub frequency: f64,
    pub charge_renormalized_mass: Option<f64>,
}

impl SystemOscillator {
    pub fn new(mass: f64, frequency: f64) -> Result<Self> {
        ensure_positive("mass", mass)?;
        ensure_positive("frequency", frequency)?;
        Ok(SystemOscillator {
            mass,
            frequency,
            charge_renormalized_mass: None,
        })
    }

    /// The oscillator in natural units, m = omega_0 = 1.
    pub fn natural() -> Self {
        SystemOscillator {
            mass: 1.0,
            frequency: 1.0,
            charge_renormalized_mass: None,
        }
    }

    pub fn with_renormalized_mass(mut self, mass: f64) -> Self {
        self.charge_renormalized_mass = Some(mass);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BathLabel {
    Tb,
    TbPrime,
    Bb,
}

impl fmt::Display for BathLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BathLabel::Tb => "TB",
            BathLabel::TbPrime => "TB'",
            BathLabel::Bb => "BB",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockTag {
    System,
    Bath(BathLabel),
}

/// A contiguous run of `len` oscillators in the coordinate ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutBlock {
    pub tag: BlockTag,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttachedBath {
    pub label: BathLabel,
    pub spec: SpectralDensitySpec,
    pub modes: Vec<BathMode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel {
    system: SystemOscillator,
    baths: Vec<AttachedBath>,
}

impl QuadraticModel {
    pub fn assemble(system: SystemOscillator, baths: Vec<AttachedBath>) -> Result<Self> {
        ensure_positive("mass", system.mass)?;
        ensure_positive("frequency", system.frequency)?;
        let mut momentum_baths = 0;
        for (i, bath) in baths.iter().enumerate() {
            if baths[..i].iter().any(|b| b.label == bath.label) {
                return Err(Error::DuplicateLabel(bath.label.to_string()));
            }
            if bath.modes.is_empty() {
                return Err(Error::Layout(format!("bath {} has no modes", bath.label)));
            }
            let expected = match bath.spec.kind {
                BathKind::OhmicDrude => CouplingType::Position,
                BathKind::Blackbody => CouplingType::Momentum,
            };
            if bath.modes.iter().any(|m| m.coupling_type != expected) {
                return Err(Error::Layout(format!(
                    "bath {} mixes coupling types",
                    bath.label
                )));
            }
            for m in &bath.modes {
                ensure_positive("mode mass", m.mass)?;
                ensure_positive("mode frequency", m.frequency)?;
            }
            if expected == CouplingType::Momentum {
                momentum_baths += 1;
            }
        }
        if momentum_baths > 1 {
            return Err(Error::Layout(
                "at most one momentum-coupled bath is supported".into(),
            ));
        }
        Ok(QuadraticModel { system, baths })
    }

    pub fn system(&self) -> &SystemOscillator {
        &self.system
    }

    pub fn baths(&self) -> &[AttachedBath] {
        &self.baths
    }

    pub fn mode_count(&self) -> usize {
        self.baths.iter().map(|b| b.modes.len()).sum()
    }

    /// Phase-space dimension 2(1 + N).
    pub fn dimension(&self) -> usize {
        2 * (1 + self.mode_count())
    }

    pub fn layout(&self) -> Vec<LayoutBlock> {
        let mut blocks = vec![LayoutBlock {
            tag: BlockTag::System,
            len: 1,
        }];
        blocks.extend(self.baths.iter().map(|b| LayoutBlock {
            tag: BlockTag::Bath(b.label),
            len: b.modes.len(),
        }));
        blocks
    }

    pub fn all_modes(&self) -> impl Iterator<Item = &BathMode> {
        self.baths.iter().flat_map(|b| b.modes.iter())
    }

    /// A copy without the bath labelled `label`.
    pub fn without(&self, label: BathLabel) -> QuadraticModel {
        QuadraticModel {
            system: self.system,
            baths: self
                .baths
                .iter()
                .filter(|b| b.label != label)
                .cloned()
                .collect(),
        }
    }

    /// Dense coefficient matrix A. Counter-terms are included so that the
    /// minimum over bath coordinates at fixed q_S is the bare potential.
    pub fn coefficient_matrix(&self) -> DMatrix<f64> {
        let n = 1 + self.mode_count();
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        let m = self.system.mass;
        let w0 = self.system.frequency;
        a[(0, 0)] = m * w0 * w0;
        a[(n, n)] = 1.0 / m;
        for (j, mode) in self.all_modes().enumerate() {
            let (qj, pj) = (1 + j, n + 1 + j);
            let (mj, wj) = (mode.mass, mode.frequency);
            a[(qj, qj)] = mj * wj * wj;
            a[(pj, pj)] = 1.0 / mj;
            match mode.coupling_type {
                CouplingType::Position => {
                    let c = mode.coupling;
                    a[(0, qj)] = -c;
                    a[(qj, 0)] = -c;
                    a[(0, 0)] += c * c / (mj * wj * wj);
                }
                CouplingType::Momentum => {
                    // (p_k + m_k w_k q_S)^2 / 2 m_k
                    let g = mode.coupling;
                    a[(0, pj)] = g / mj;
                    a[(pj, 0)] = g / mj;
                    a[(0, 0)] += g * g / mj;
                }
            }
        }
        a
    }

    /// Exact thermal state through a dense normal-mode decomposition. Meant for
    /// models small enough to hold the full covariance.
    pub fn thermal_state(&self, temperature: Temperature) -> Result<GaussianState> {
        let modes = DenseModes::new(&self.coefficient_matrix())?;
        Ok(GaussianState {
            mean: DVector::zeros(self.dimension()),
            covariance: modes.thermal_covariance(temperature),
            layout: self.layout(),
        })
    }
}

pub fn assemble(system: SystemOscillator, baths: Vec<AttachedBath>) -> Result<QuadraticModel> {
    QuadraticModel::assemble(system, baths)
}

pub fn thermal_state(model: &QuadraticModel, temperature: Temperature) -> Result<GaussianState> {
    model.thermal_state(temperature)
}

/// Gaussian state over the coordinate ordering described by `layout`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub layout: Vec<LayoutBlock>,
}

impl GaussianState {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>, layout: Vec<LayoutBlock>) -> Result<Self> {
        let modes: usize = layout.iter().map(|b| b.len).sum();
        let dim = 2 * modes;
        if mean.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: mean.len(),
            });
        }
        if covariance.nrows() != dim || covariance.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: covariance.nrows(),
            });
        }
        Ok(GaussianState {
            mean,
            covariance,
            layout,
        })
    }

    pub fn empty() -> Self {
        GaussianState {
            mean: DVector::zeros(0),
            covariance: DMatrix::zeros(0, 0),
            layout: Vec::new(),
        }
    }

    /// One-mode system state from a 2-vector mean and 2x2 covariance.
    pub fn system(mean: Vector2<f64>, covariance: Matrix2<f64>) -> Self {
        GaussianState {
            mean: DVector::from_column_slice(mean.as_slice()),
            covariance: DMatrix::from_column_slice(2, 2, covariance.as_slice()),
            layout: vec![LayoutBlock {
                tag: BlockTag::System,
                len: 1,
            }],
        }
    }

    pub fn mode_count(&self) -> usize {
        self.mean.len() / 2
    }

    pub fn system_covariance(&self) -> Option<Matrix2<f64>> {
        let (start, _) = self.block_range(BlockTag::System)?;
        let n = self.mode_count();
        let idx = [start, start + n];
        Some(Matrix2::from_fn(|i, j| self.covariance[(idx[i], idx[j])]))
    }

    pub fn system_mean(&self) -> Option<Vector2<f64>> {
        let (start, _) = self.block_range(BlockTag::System)?;
        let n = self.mode_count();
        Some(Vector2::new(self.mean[start], self.mean[start + n]))
    }

    fn block_range(&self, tag: BlockTag) -> Option<(usize, usize)> {
        let mut offset = 0;
        for b in &self.layout {
            if b.tag == tag {
                return Some((offset, b.len));
            }
            offset += b.len;
        }
        None
    }

    /// Largest violation of sigma + (i/2) J >= 0, as the most negative
    /// eigenvalue of that Hermitian matrix (zero or positive when physical).
    pub fn uncertainty_margin(&self) -> f64 {
        let n = self.mode_count();
        let dim = 2 * n;
        if dim == 0 {
            return 0.0;
        }
        // Hermitian matrix [[S, iJ/2]] embedded as a real symmetric 2dim matrix
        // [[S, -K], [K, S]] with K = J/2, whose spectrum duplicates it.
        let mut big = DMatrix::zeros(2 * dim, 2 * dim);
        for i in 0..dim {
            for j in 0..dim {
                let s = self.covariance[(i, j)];
                big[(i, j)] = s;
                big[(dim + i, dim + j)] = s;
            }
        }
        for k in 0..n {
            let (q, p) = (k, n + k);
            // K = J / 2 with J[q,p] = 1, J[p,q] = -1
            big[(dim + q, p)] = 0.5;
            big[(dim + p, q)] = -0.5;
            big[(q, dim + p)] = -0.5;
            big[(p, dim + q)] = 0.5;
        }
        big.symmetric_eigenvalues().min()
    }

    /// Purity 1 / (2^n sqrt(det sigma)) with hbar = 1.
    pub fn purity(&self) -> f64 {
        let n = self.mode_count();
        if n == 0 {
            return 1.0;
        }
        let det = self.covariance.clone().determinant();
        1.0 / (2f64.powi(n as i32) * det.sqrt())
    }
}

pub fn compose_product(a: &GaussianState, b: &GaussianState) -> Result<GaussianState> {
    for block in &b.layout {
        if a.layout.iter().any(|x| x.tag == block.tag) {
            return Err(Error::Layout(format!("overlapping block {:?}", block.tag)));
        }
    }
    let (na, nb) = (a.mode_count(), b.mode_count());
    let n = na + nb;
    // old index -> new index
    let map_a = |i: usize| if i < na { i } else { n + (i - na) };
    let map_b = |i: usize| if i < nb { na + i } else { n + na + (i - nb) };
    let mut mean = DVector::zeros(2 * n);
    let mut cov = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..2 * na {
        mean[map_a(i)] = a.mean[i];
        for j in 0..2 * na {
            cov[(map_a(i), map_a(j))] = a.covariance[(i, j)];
        }
    }
    for i in 0..2 * nb {
        mean[map_b(i)] = b.mean[i];
        for j in 0..2 * nb {
            cov[(map_b(i), map_b(j))] = b.covariance[(i, j)];
        }
    }
    let mut layout = a.layout.clone();
    layout.extend(b.layout.iter().copied());
    Ok(GaussianState {
        mean,
        covariance: cov,
        layout,
    })
}
