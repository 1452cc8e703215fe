use num_complex::Complex64;

use qbm_core::baths::SpectralDensitySpec;
use qbm_core::equilibrium::{effective_overlap, effective_parameters, equilibrium_variances};
use qbm_core::fock::{propagator_tensor, FockBasis};
use qbm_core::model::{BathLabel, QuadraticModel};
use qbm_core::scenarios::{
    channels, run, run_blackbody, run_second_bath, run_thermalization, uniform_grid, InitialSystem,
    ScenarioKind, ScenarioPreset, ScenarioResult,
};
use qbm_core::units::Temperature;

fn max_population_drift(r: &ScenarioResult) -> f64 {
    let first = r.exact[0].populations();
    r.exact
        .iter()
        .flat_map(|m| m.populations().into_iter().zip(first.clone()).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn uncoupled_ground_state_stays_put() {
    let mut p = ScenarioPreset::fig2(1.0341).unwrap().with_mode_count(200);
    p.tb.spec = SpectralDensitySpec::ohmic_drude(0.0, 20.0, 1.0).unwrap();
    p.time_grid = uniform_grid(50.0, 25);
    let r = run_thermalization(&p).unwrap();
    for rho in &r.exact {
        for n in 0..rho.dim() {
            let target = if n == 0 { 1.0 } else { 0.0 };
            assert!((rho.get(n, n).re - target).abs() < 1e-12);
        }
    }
    assert!(r.passed());
}

#[test]
fn thermalization_relaxes_to_the_effective_state() {
    let r = run(&ScenarioPreset::fig2(8.2724).unwrap()).unwrap();
    assert_eq!(r.kind, ScenarioKind::Thermalization);
    assert!(r.is_ground_start());
    let last = r.exact.last().unwrap();
    let stationary = r.stationary.as_ref().unwrap();
    assert!(last.max_abs_diff(stationary) < 1e-3, "{:e}", last.max_abs_diff(stationary));
    assert!(r.checks.iter().all(|c| c.passed), "{:?}", r.checks);
    // the stored tensor column is the exact series for a ground start
    for (rho, slice) in r.exact.iter().zip(&r.slices) {
        assert!((rho.get(0, 2) - slice.get(0, 2, 0, 0)).norm() < 1e-12);
    }
}

#[test]
fn correlated_start_is_stationary_without_second_bath() {
    let mut p = ScenarioPreset::fig2(1.0341).unwrap().with_mode_count(800);
    p.initial_system = InitialSystem::EffectiveEquilibrium;
    p.time_grid = uniform_grid(20.0, 40);
    let r = run(&p).unwrap();
    let worst = r.exact.iter().map(|m| m.max_abs_diff(&r.exact[0])).fold(0.0, f64::max);
    assert!(worst < 1e-6, "{worst:e}");
    assert!(r.exact[0].max_abs_diff(r.stationary.as_ref().unwrap()) < 1e-10);
}

#[test]
fn decoupled_second_bath_changes_nothing() {
    let mut p = ScenarioPreset::fig4().unwrap().with_mode_count(400);
    let second = p.second.as_mut().unwrap();
    second.spec = SpectralDensitySpec::ohmic_drude(0.0, 40.0, 1.0).unwrap();
    p.time_grid = uniform_grid(60.0, 30);
    let r = run_second_bath(&p).unwrap();
    let worst = r.exact.iter().map(|m| m.max_abs_diff(&r.exact[0])).fold(0.0, f64::max);
    assert!(worst < 1e-10, "{worst:e}");
}

#[test]
fn matched_second_bath_moves_populations_by_the_extra_coupling_only() {
    // at equal temperature the only change is the stronger total coupling;
    // the exact run must end at the equilibrium of the doubled bath
    let mut p = ScenarioPreset::fig4().unwrap().with_mode_count(600);
    let mut twin = p.tb.clone();
    twin.label = BathLabel::TbPrime;
    p.second = Some(twin);
    p.time_grid = uniform_grid(300.0, 60);
    let r = run_second_bath(&p).unwrap();
    let drift = max_population_drift(&r);
    let doubled = {
        let mut d = p.tb.clone();
        d.spec = SpectralDensitySpec::ohmic_drude(0.2, 20.0, 1.0).unwrap();
        let model = QuadraticModel::assemble(p.system, vec![d.attach().unwrap()]).unwrap();
        let eff = effective_parameters(&equilibrium_variances(&model, d.temperature).unwrap()).unwrap();
        qbm_core::equilibrium::stationary_density_matrix(&eff, &FockBasis::new(p.n_max, p.system).unwrap()).unwrap()
    };
    let end = r.exact.last().unwrap();
    eprintln!("matched TB': population drift {drift:e}, distance to doubled-bath equilibrium {:e}", end.max_abs_diff(&doubled));
    assert!(end.max_abs_diff(&doubled) < 1e-3);
}

#[test]
fn second_bath_coherence_transients() {
    let r = run(&ScenarioPreset::fig4().unwrap()).unwrap();
    assert_eq!(r.kind, ScenarioKind::SecondBath);
    let peak02 = r.exact.iter().map(|m| m.get(0, 2).norm()).fold(0.0, f64::max);
    let peak13 = r.exact.iter().map(|m| m.get(1, 3).norm()).fold(0.0, f64::max);
    let p0 = r.exact[0].get(0, 0).re;
    eprintln!("peak |rho_02| {peak02:e}, |rho_13| {peak13:e}, rho_00(0) {p0}");
    assert!(peak02 > 1e-2 && peak13 > 1e-3);
    // exact, secular and canonical-start curves of the ground population
    let dev = r
        .exact
        .iter()
        .zip(&r.secular)
        .zip(&r.canonical_start)
        .map(|((a, b), c)| {
            let (a, b, c) = (a.get(0, 0).re, b.get(0, 0).re, c.get(0, 0).re);
            (a - b).abs().max((a - c).abs()).max((b - c).abs())
        })
        .fold(0.0, f64::max);
    assert!(dev < 0.05, "{dev}");
    assert!(r.passed(), "{:?}", r.checks);
}

#[test]
fn effective_basis_tensor_obeys_parity_and_decays() {
    let mut p = ScenarioPreset::fig4().unwrap().with_mode_count(1000);
    p.time_grid = vec![0.0, 2.5, 500.0];
    let tb_model = QuadraticModel::assemble(p.system, vec![p.tb.attach().unwrap()]).unwrap();
    let eff = effective_parameters(&equilibrium_variances(&tb_model, p.tb.temperature).unwrap()).unwrap();
    let basis = FockBasis::new(20, p.system).unwrap();
    let d = basis.dim();
    let k = 4;
    let o = effective_overlap(&eff, &p.system, d, k);
    let chans = channels(&p).unwrap();
    let mut even = Vec::new();
    for ch in &chans[1..] {
        let j = propagator_tensor(ch, &basis).unwrap();
        let (mut odd_max, mut even_max) = (0.0f64, 0.0f64);
        for a in 0..k {
            for c in 0..k {
                for e in (0..k).filter(|&e| e != c) {
                    let mut s = Complex64::new(0.0, 0.0);
                    for n in 0..d {
                        for m in 0..d {
                            let w = o[(n, a)] * o[(m, a)];
                            if w == 0.0 {
                                continue;
                            }
                            for nu in 0..d {
                                for mu in 0..d {
                                    s += w * o[(nu, c)] * o[(mu, e)] * j.get(n, m, nu, mu);
                                }
                            }
                        }
                    }
                    if (c + e) % 2 == 1 {
                        odd_max = odd_max.max(s.norm());
                    } else {
                        even_max = even_max.max(s.norm());
                    }
                }
            }
        }
        assert!(odd_max < 1e-12, "{odd_max:e}");
        even.push(even_max);
    }
    eprintln!("even nu-mu effective-basis entries: {even:?}");
    assert!(even[0] > 1e-2);
    assert!(even[1] < 5e-3 * even[0]);
}

#[test]
fn wrong_second_bath_kind_is_rejected() {
    let p = ScenarioPreset::fig4().unwrap();
    assert!(run_blackbody(&p).is_err());
    let q = ScenarioPreset::fig2(1.0341).unwrap();
    assert!(run_second_bath(&q).is_err());
    let mut bad = q.clone();
    bad.time_grid = vec![0.0, 1.0, 1.0];
    assert!(run(&bad).is_err());
    let mut cold = q;
    cold.initial_system = InitialSystem::EffectiveEquilibrium;
    cold.tb.temperature = Temperature::zero();
    assert!(cold.validate().is_err());
}
