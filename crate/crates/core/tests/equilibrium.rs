use nalgebra::{DMatrix, Vector2};
use proptest::prelude::*;

use qbm_core::baths::{discretize_bath, DiscretizationScheme, NodeRule, SpectralDensitySpec};
use qbm_core::dynamics::StarModes;
use qbm_core::equilibrium::{
    effective_overlap, effective_parameters, equilibrium_variances, matsubara_variances,
    stationary_density_matrix, EffectiveOscillator, EquilibriumVariances,
};
use qbm_core::fock::{gaussian_to_fock, FockBasis, FockDensityMatrix};
use qbm_core::model::{AttachedBath, BathLabel, GaussianState, QuadraticModel, SystemOscillator};
use qbm_core::scenarios::ScenarioPreset;
use qbm_core::units::Temperature;

fn coupled(gamma: f64, cutoff: f64, n: usize) -> (QuadraticModel, DiscretizationScheme, SpectralDensitySpec) {
    let spec = SpectralDensitySpec::ohmic_drude(gamma, cutoff, 1.0).unwrap();
    let scheme = DiscretizationScheme::new(NodeRule::Logarithmic, n, 10.0 * cutoff).with_floor(1e-2 * cutoff);
    let bath = AttachedBath { label: BathLabel::Tb, spec, modes: discretize_bath(&spec, &scheme).unwrap() };
    (QuadraticModel::assemble(SystemOscillator::natural(), vec![bath]).unwrap(), scheme, spec)
}

fn microscopic(model: &QuadraticModel, t: Temperature, basis: &FockBasis) -> FockDensityMatrix {
    let cov = StarModes::new(model).unwrap().thermal_system_covariance(t);
    gaussian_to_fock(&GaussianState::system(Vector2::zeros(), cov), basis).unwrap()
}

fn effective(model: &QuadraticModel, t: Temperature) -> EffectiveOscillator {
    effective_parameters(&equilibrium_variances(model, t).unwrap()).unwrap()
}

/// Off-diagonal size of rho in the first `k` effective eigenstates.
fn effective_basis_off_diagonal(eff: &EffectiveOscillator, rho: &FockDensityMatrix, k: usize) -> f64 {
    let o = effective_overlap(eff, &SystemOscillator::natural(), rho.dim(), k);
    let re = DMatrix::from_fn(rho.dim(), rho.dim(), |i, j| rho.get(i, j).re);
    let back = o.transpose() * re * o;
    let mut worst = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                worst = worst.max(back[(i, j)].abs());
            }
        }
    }
    worst
}

#[test]
fn effective_hamiltonian_state_matches_microscopic_state() {
    let preset = ScenarioPreset::fig2(8.2724).unwrap().with_mode_count(4000);
    let model = QuadraticModel::assemble(preset.system, vec![preset.tb.attach().unwrap()]).unwrap();
    let basis = FockBasis::new(20, preset.system).unwrap();
    let t = preset.tb.temperature;
    let rho = stationary_density_matrix(&effective(&model, t), &basis).unwrap();
    let reference = microscopic(&model, t, &basis);
    assert!(rho.max_abs_diff(&reference) < 1e-4, "{:e}", rho.max_abs_diff(&reference));
    // the coupling leaves visible stationary coherences
    assert!(rho.max_off_diagonal() > 1e-3);
}

#[test]
fn discrete_variances_match_imaginary_frequency_sum() {
    let beta = 8.2724;
    let (model, scheme, spec) = coupled(0.1, 20.0, 4000);
    let v = equilibrium_variances(&model, Temperature::from_beta(beta).unwrap()).unwrap();
    let (q2, p2) = matsubara_variances(&spec, Some(scheme.window()), 1.0, beta).unwrap();
    assert!((v.q2 - q2).abs() < 1e-3 * q2, "{} {}", v.q2, q2);
    assert!((v.p2 - p2).abs() < 1e-3 * p2, "{} {}", v.p2, p2);
}

#[test]
fn variances_converge_under_doubling() {
    let t = Temperature::from_beta(8.2724).unwrap();
    let (a, _, _) = coupled(0.1, 20.0, 2000);
    let (b, _, _) = coupled(0.1, 20.0, 4000);
    let (va, vb) = (equilibrium_variances(&a, t).unwrap(), equilibrium_variances(&b, t).unwrap());
    assert!((va.q2 - vb.q2).abs() < 1e-4 * vb.q2);
    assert!((va.p2 - vb.p2).abs() < 1e-4 * vb.p2);
}

#[test]
fn high_temperature_is_canonical() {
    let beta = 0.1;
    let (model, _, _) = coupled(0.5, 20.0, 2000);
    let t = Temperature::from_beta(beta).unwrap();
    let v = equilibrium_variances(&model, t).unwrap();
    assert!((v.q2 - 1.0 / beta).abs() < 1e-2 / beta, "{}", v.q2);
    let eff = effective_parameters(&v).unwrap();
    assert!((eff.omega_eff - 1.0).abs() < 1e-2 && (eff.m_eff - 1.0).abs() < 1e-2, "{eff:?}");

    let preset = ScenarioPreset::fig2(0.5179).unwrap();
    let model = QuadraticModel::assemble(preset.system, vec![preset.tb.attach().unwrap()]).unwrap();
    let basis = FockBasis::new(20, preset.system).unwrap();
    let rho = stationary_density_matrix(&effective(&model, preset.tb.temperature), &basis).unwrap();
    assert!(rho.max_off_diagonal() < 1e-3, "{:e}", rho.max_off_diagonal());
}

#[test]
fn strong_coupling_shifts_the_effective_frequency() {
    let t = Temperature::from_beta(8.2724).unwrap();
    let (a, _, _) = coupled(0.5, 20.0, 2000);
    let (b, _, _) = coupled(0.5, 20.0, 4000);
    let (ea, eb) = (effective(&a, t), effective(&b, t));
    let shift = eb.omega_eff - 1.0;
    eprintln!("omega_eff - omega0 = {shift:e}, m_eff - m = {:e}", eb.m_eff - 1.0);
    assert!(shift.abs() > 1e-2);
    assert!((ea.omega_eff - eb.omega_eff).abs() < 1e-3 * shift.abs());
}

#[test]
fn matched_frequency_and_mass_give_a_diagonal_state() {
    let omega_eff = 1.37;
    let beta = 2.0;
    let eff = EffectiveOscillator {
        m_eff: 1.0 / omega_eff,
        omega_eff,
        partition_norm: 1.0 / (2.0 * (0.5 * beta * omega_eff).sinh()),
        inverse_temperature: beta,
    };
    let rho = stationary_density_matrix(&eff, &FockBasis::new(20, SystemOscillator::natural()).unwrap()).unwrap();
    assert_eq!(rho.max_off_diagonal(), 0.0);
    let q = (-beta * omega_eff).exp();
    assert!((rho.get(3, 3).re - (1.0 - q) * q.powi(3)).abs() < 1e-15);
}

#[test]
fn invalid_variances_are_rejected() {
    assert!(EquilibriumVariances::new(0.4, 0.4, 1.0).is_err());
    assert!(EquilibriumVariances::new(-1.0, 1.0, 1.0).is_err());
    let (model, _, _) = coupled(0.1, 20.0, 50);
    assert!(equilibrium_variances(&model, Temperature::zero()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn effective_state_properties(gamma in 0.02f64..0.8, cutoff in 2.0f64..30.0, beta in 1.0f64..12.0) {
        let (model, _, _) = coupled(gamma, cutoff, 300);
        let t = Temperature::from_beta(beta).unwrap();
        let eff = effective(&model, t);
        let basis = FockBasis::new(30, SystemOscillator::natural()).unwrap();
        let rho = stationary_density_matrix(&eff, &basis).unwrap();
        prop_assert!(rho.max_abs_diff(&microscopic(&model, t, &basis)) < 1e-9);
        for n in 0..basis.dim() {
            for m in 0..basis.dim() {
                if (n + m) % 2 == 1 {
                    prop_assert!(rho.get(n, m).norm() < 1e-10);
                }
            }
        }
        let wide = stationary_density_matrix(&eff, &FockBasis::new(160, SystemOscillator::natural()).unwrap()).unwrap();
        prop_assert!(effective_basis_off_diagonal(&eff, &wide, 8) < 1e-10);
    }
}
