//! Run configuration, command-line entry point and result serialization.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::baths::{BathKind, DiscretizationScheme, NodeRule, SpectralDensitySpec};
use crate::error::{Error, Result};
use crate::fock::{propagator_tensor, propagator_tensor_at_order, FockBasis, FockDensityMatrix};
use crate::model::{BathLabel, SystemOscillator};
use crate::par;
use crate::scenarios::{
    self, field_setup, BathSetup, InitialSystem, ScenarioKind, ScenarioPreset, ScenarioResult,
    CONVERGENCE_LIMIT, LEAKAGE_LIMIT, SLICE_N_MAX,
};
use crate::units::Temperature;

pub const EXIT_SUCCESS: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmitKind {
    Populations,
    Coherences,
    TensorSlices,
    EquilibriumReport,
}

impl EmitKind {
    pub const ALL: [EmitKind; 4] = [
        EmitKind::Populations,
        EmitKind::Coherences,
        EmitKind::TensorSlices,
        EmitKind::EquilibriumReport,
    ];

    fn file_name(self) -> &'static str {
        match self {
            EmitKind::Populations => "populations.csv",
            EmitKind::Coherences => "coherences.csv",
            EmitKind::TensorSlices => "tensor_slices.csv",
            EmitKind::EquilibriumReport => "equilibrium_report.csv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
pub enum SweepAxis {
    #[serde(rename = "N")]
    #[value(name = "N")]
    N,
    #[serde(rename = "n_max")]
    #[value(name = "n_max")]
    NMax,
    #[serde(rename = "quadrature_order")]
    #[value(name = "quadrature_order")]
    QuadratureOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub factors: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub presets: Vec<ScenarioPreset>,
    pub outputs: Option<PathBuf>,
    pub emit: BTreeSet<EmitKind>,
    pub sweep: Option<SweepSpec>,
    pub convergence_gate: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    out: Option<PathBuf>,
    emit: Option<Vec<EmitKind>>,
    sweep: Option<SweepSpec>,
    convergence_gate: Option<bool>,
    #[serde(default)]
    preset: Vec<RawPreset>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPreset {
    label: String,
    initial_system: Option<InitialSystem>,
    n_max: Option<usize>,
    t_end: f64,
    steps: usize,
    tb: RawBath,
    second: Option<RawBath>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBath {
    kind: BathKind,
    gamma: Option<f64>,
    tau_bb: Option<f64>,
    cutoff: f64,
    mass: Option<f64>,
    node_rule: Option<NodeRule>,
    mode_count: Option<usize>,
    omega_max: Option<f64>,
    omega_min: Option<f64>,
    beta: Option<f64>,
    temperature: Option<f64>,
}

fn at(path: &str, e: Error) -> Error {
    match e {
        Error::Config { .. } => e,
        other => Error::config(path, other.to_string()),
    }
}

impl RawBath {
    fn temperature(&self, path: &str) -> Result<Temperature> {
        match (self.beta, self.temperature) {
            (Some(b), None) => Temperature::from_beta(b).map_err(|e| at(&format!("{path}.beta"), e)),
            (None, Some(t)) => Temperature::new(t).map_err(|e| at(&format!("{path}.temperature"), e)),
            (Some(_), Some(_)) => Err(Error::config(path, "give either `beta` or `temperature`, not both")),
            (None, None) => Err(Error::config(path, "missing `beta` or `temperature`")),
        }
    }

    fn scheme(&self, path: &str) -> Result<DiscretizationScheme> {
        let mut scheme = DiscretizationScheme::new(
            self.node_rule.unwrap_or(NodeRule::Logarithmic),
            self.mode_count.unwrap_or(2000),
            self.omega_max.unwrap_or(10.0 * self.cutoff),
        );
        if let Some(floor) = self.omega_min {
            scheme = scheme.with_floor(floor);
        }
        scheme.validate(self.cutoff).map_err(|e| at(path, e))?;
        Ok(scheme)
    }

    fn setup(&self, path: &str, label: BathLabel, system: &SystemOscillator) -> Result<BathSetup> {
        let mass = self.mass.unwrap_or(system.mass);
        if (mass - system.mass).abs() > 1e-12 * system.mass {
            return Err(Error::config(format!("{path}.mass"), "must equal the system mass (natural units: 1)"));
        }
        let temperature = self.temperature(path)?;
        let scheme = self.scheme(path)?;
        match self.kind {
            BathKind::OhmicDrude => {
                if self.tau_bb.is_some() {
                    return Err(Error::config(format!("{path}.tau_bb"), "only valid for kind = \"blackbody\""));
                }
                let gamma = self
                    .gamma
                    .ok_or_else(|| Error::config(format!("{path}.gamma"), "required for ohmic_drude"))?;
                let spec = SpectralDensitySpec::ohmic_drude(gamma, self.cutoff, mass).map_err(|e| at(path, e))?;
                Ok(BathSetup {
                    label,
                    spec,
                    temperature,
                    scheme,
                })
            }
            BathKind::Blackbody => {
                if self.gamma.is_some() {
                    return Err(Error::config(format!("{path}.gamma"), "only valid for kind = \"ohmic_drude\""));
                }
                let tau = self
                    .tau_bb
                    .ok_or_else(|| Error::config(format!("{path}.tau_bb"), "required for blackbody"))?;
                // a cutoff written as the decimal value of 1/tau_bb sits on the bound
                let mut cutoff = self.cutoff;
                if tau > 0.0 && (cutoff * tau - 1.0).abs() < 1e-12 {
                    cutoff = 1.0 / tau;
                }
                field_setup(system, tau, cutoff, temperature, scheme).map_err(|e| at(path, e))
            }
        }
    }
}

impl RawPreset {
    fn build(&self, path: &str) -> Result<ScenarioPreset> {
        let system = SystemOscillator::natural();
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::config(format!("{path}.t_end"), "must be positive and finite"));
        }
        if self.steps == 0 {
            return Err(Error::config(format!("{path}.steps"), "must be at least 1"));
        }
        let tb = self.tb.setup(&format!("{path}.tb"), BathLabel::Tb, &system)?;
        if tb.spec.kind != BathKind::OhmicDrude {
            return Err(Error::config(format!("{path}.tb.kind"), "the first bath must be ohmic_drude"));
        }
        let second = match &self.second {
            None => None,
            Some(raw) => {
                let label = match raw.kind {
                    BathKind::OhmicDrude => BathLabel::TbPrime,
                    BathKind::Blackbody => BathLabel::Bb,
                };
                Some(raw.setup(&format!("{path}.second"), label, &system)?)
            }
        };
        let initial_system = self.initial_system.unwrap_or(if second.is_some() {
            InitialSystem::EffectiveEquilibrium
        } else {
            InitialSystem::Ground
        });
        let system = match &second {
            Some(s) if s.spec.kind == BathKind::Blackbody => system.with_renormalized_mass(s.spec.system_mass_ref),
            _ => system,
        };
        let preset = ScenarioPreset {
            label: self.label.clone(),
            system,
            tb,
            second,
            initial_system,
            time_grid: scenarios::uniform_grid(self.t_end, self.steps),
            n_max: self.n_max.unwrap_or(20),
        };
        preset.validate().map_err(|e| at(path, e))?;
        Ok(preset)
    }
}

/// Parses and validates a TOML run configuration. Unknown keys are errors.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::config("<document>", e.message().to_string() + &span_hint(text, e.span())))?;
    if raw.preset.is_empty() {
        return Err(Error::config("preset", "at least one [[preset]] table is required"));
    }
    let mut presets = Vec::new();
    let mut labels = BTreeSet::new();
    for (i, p) in raw.preset.iter().enumerate() {
        let path = format!("preset[{i}]");
        if !labels.insert(p.label.clone()) {
            return Err(Error::config(format!("{path}.label"), format!("duplicate preset label `{}`", p.label)));
        }
        if p.label.is_empty() || p.label.contains(['/', '\\']) || p.label.starts_with('.') {
            return Err(Error::config(format!("{path}.label"), "must be a plain, non-empty file name"));
        }
        presets.push(p.build(&path)?);
    }
    if let Some(s) = &raw.sweep {
        validate_factors(&s.factors)?;
    }
    Ok(RunConfig {
        presets,
        outputs: raw.out,
        emit: raw.emit.map(|v| v.into_iter().collect()).unwrap_or_else(|| EmitKind::ALL.into_iter().collect()),
        sweep: raw.sweep,
        convergence_gate: raw.convergence_gate.unwrap_or(true),
    })
}

fn span_hint(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(r) => {
            let line = text[..r.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        }
        None => String::new(),
    }
}

fn validate_factors(factors: &[usize]) -> Result<()> {
    if factors.is_empty() || factors.contains(&0) {
        return Err(Error::config("sweep.factors", "need at least one positive factor"));
    }
    if factors.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("sweep.factors", "must be strictly increasing"));
    }
    Ok(())
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(io_err(path))
}

/// CSV bodies for one result, keyed by emit kind.
pub fn render_csv(result: &ScenarioResult, kind: EmitKind) -> String {
    let mut out = String::new();
    let ground_start = result.kind == ScenarioKind::Thermalization && result.is_ground_start();
    match kind {
        EmitKind::Populations => {
            let cols: Vec<String> = if ground_start {
                (0..3).map(|n| format!("J_{n}{n}_00")).collect()
            } else {
                (0..3).map(|n| format!("rho_{n}{n}")).collect()
            };
            let mut header = vec!["t".to_string()];
            header.extend(cols.iter().cloned());
            let two_step = !result.secular.is_empty();
            if two_step {
                header.extend((0..3).map(|n| format!("secular_{n}{n}")));
                header.extend((0..3).map(|n| format!("canonical_{n}{n}")));
            }
            out.push_str(&header.join(","));
            out.push('\n');
            for (i, t) in result.times.iter().enumerate() {
                let mut row = vec![fmt(*t)];
                row.extend((0..3).map(|n| fmt(result.exact[i].get(n, n).re)));
                if two_step {
                    row.extend((0..3).map(|n| fmt(result.secular[i].get(n, n).re)));
                    row.extend((0..3).map(|n| fmt(result.canonical_start[i].get(n, n).re)));
                }
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
        EmitKind::Coherences => {
            let pairs = [(0usize, 2usize), (1, 3)];
            let name = |n: usize, m: usize| if ground_start { format!("J_{n}{m}_00") } else { format!("rho_{n}{m}") };
            let mut header = vec!["t".to_string()];
            for (n, m) in pairs {
                header.push(format!("re_{}", name(n, m)));
                header.push(format!("im_{}", name(n, m)));
            }
            out.push_str(&header.join(","));
            out.push('\n');
            for (i, t) in result.times.iter().enumerate() {
                let mut row = vec![fmt(*t)];
                for (n, m) in pairs {
                    let z = result.exact[i].get(n, m);
                    row.push(fmt(z.re));
                    row.push(fmt(z.im));
                }
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
        EmitKind::TensorSlices => {
            out.push_str("t,n,m,nu,mu,re,im\n");
            let d = SLICE_N_MAX + 1;
            for s in &result.slices {
                for n in 0..d {
                    for m in 0..d {
                        for nu in 0..d {
                            for mu in 0..d {
                                let z = s.get(n, m, nu, mu);
                                let _ = writeln!(out, "{},{n},{m},{nu},{mu},{},{}", fmt(s.time()), fmt(z.re), fmt(z.im));
                            }
                        }
                    }
                }
            }
        }
        EmitKind::EquilibriumReport => {
            out.push_str("quantity,value\n");
            if let Some(e) = &result.equilibrium {
                let rows = [
                    ("beta", e.variances.inverse_temperature),
                    ("q2", e.variances.q2),
                    ("p2", e.variances.p2),
                    ("matsubara_q2", e.matsubara_q2),
                    ("matsubara_p2", e.matsubara_p2),
                    ("m_eff", e.effective.m_eff),
                    ("omega_eff", e.effective.omega_eff),
                    ("partition_norm", e.effective.partition_norm),
                    ("max_off_diagonal", e.max_off_diagonal),
                    ("leakage", e.leakage),
                ];
                for (k, v) in rows {
                    let _ = writeln!(out, "{k},{}", fmt(v));
                }
            }
            if let Some(t) = &result.turn_on {
                for (k, v) in [
                    ("turn_on_time", t.time),
                    ("turn_on_total_jump", t.total_jump),
                    ("turn_on_field_jump", t.field_jump),
                    ("field_population_change", t.field_population_change),
                ] {
                    let _ = writeln!(out, "{k},{}", fmt(v));
                }
            }
        }
    }
    out
}

fn tolerances() -> serde_json::Value {
    json!({
        "leakage": LEAKAGE_LIMIT,
        "convergence_max_delta": CONVERGENCE_LIMIT,
        "hermiticity": 1e-10,
        "negative_eigenvalue": 1e-8,
        "quadrature_change": 1e-9,
        "stationarity": 1e-6,
    })
}

fn units() -> serde_json::Value {
    json!({
        "system": "natural units hbar = m = omega_0 = k_B = 1",
        "time": "1/omega_0",
        "temperature": "hbar omega_0 / k_B",
        "frequency": "omega_0",
        "to_si": {
            "time_s": "t / omega_0[s^-1]",
            "temperature_K": "T * 1.054571817e-34 * omega_0[s^-1] / 1.380649e-23",
        },
    })
}

fn unix_time() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter { .. }
        | Error::CausalityViolation { .. }
        | Error::DuplicateLabel(_)
        | Error::Config { .. }
        | Error::Layout(_)
        | Error::DimensionMismatch { .. } => EXIT_VALIDATION,
        Error::Io { .. } => EXIT_OTHER,
        _ => EXIT_INVARIANT,
    }
}

/// What `execute` produced.
#[derive(Debug)]
pub struct Execution {
    pub exit_code: i32,
    pub manifest: PathBuf,
    pub failures: Vec<String>,
}

fn mark_failed(dir: &Path, failures: &[String]) -> Result<()> {
    let marker = dir.join(".failed");
    write_file(&marker, &(failures.join("\n") + "\n"))
}

/// Runs every preset and writes CSVs plus `manifest.json` under `out`.
pub fn execute(config: &RunConfig, out: &Path) -> Result<Execution> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let stale = out.join(".failed");
    if stale.exists() {
        fs::remove_file(&stale).map_err(io_err(&stale))?;
    }
    let gate = config.convergence_gate;
    let results = par::map_slice(&config.presets, |p| {
        info!("running preset {}", p.label);
        if gate {
            scenarios::run_with_gate(p, 2).map(|(r, _)| r)
        } else {
            scenarios::run(p)
        }
    });

    let mut failures = Vec::new();
    let mut exit_code = EXIT_SUCCESS;
    let mut entries = Vec::new();
    for (preset, outcome) in config.presets.iter().zip(results) {
        let dir = out.join(&preset.label);
        let mut files = Vec::new();
        let entry = match outcome {
            Ok(result) => {
                fs::create_dir_all(&dir).map_err(io_err(&dir))?;
                let stale = dir.join(".failed");
                if stale.exists() {
                    fs::remove_file(&stale).map_err(io_err(&stale))?;
                }
                for kind in &config.emit {
                    let path = dir.join(kind.file_name());
                    write_file(&path, &render_csv(&result, *kind))?;
                    files.push(format!("{}/{}", preset.label, kind.file_name()));
                }
                let ok = result.passed();
                if !ok {
                    let failed: Vec<String> = result
                        .checks
                        .iter()
                        .filter(|c| !c.passed)
                        .map(|c| format!("{}: {} = {:e} (limit {:e})", preset.label, c.name, c.value, c.limit))
                        .chain(result.convergence.iter().filter(|c| !c.passed).map(|c| {
                            format!("{}: convergence max_delta = {:e} (limit {:e})", preset.label, c.max_delta, c.limit)
                        }))
                        .collect();
                    mark_failed(&dir, &failed)?;
                    failures.extend(failed);
                    exit_code = exit_code.max(EXIT_INVARIANT);
                }
                json!({
                    "label": preset.label,
                    "status": if ok { "ok" } else { "failed" },
                    "kind": result.kind,
                    "preset": preset_echo(preset),
                    "metadata": result.metadata,
                    "checks": result.checks,
                    "convergence": result.convergence,
                    "equilibrium": result.equilibrium,
                    "turn_on": result.turn_on,
                    "files": files,
                })
            }
            Err(e) => {
                let msg = format!("{}: {e}", preset.label);
                warn!("{msg}");
                fs::create_dir_all(&dir).map_err(io_err(&dir))?;
                mark_failed(&dir, std::slice::from_ref(&msg))?;
                failures.push(msg.clone());
                exit_code = exit_code.max(exit_code_for(&e));
                json!({
                    "label": preset.label,
                    "status": "error",
                    "error": e.to_string(),
                    "preset": preset_echo(preset),
                })
            }
        };
        entries.push(entry);
    }
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "created_unix": unix_time(),
        "execution": format!("{:?}", par::execution()),
        "units": units(),
        "tolerances": tolerances(),
        "emit": config.emit,
        "convergence_gate": gate,
        "status": if failures.is_empty() { "ok" } else { "failed" },
        "presets": entries,
    });
    let path = out.join("manifest.json");
    write_file(&path, &(serde_json::to_string_pretty(&manifest).expect("json") + "\n"))?;
    if !failures.is_empty() {
        mark_failed(out, &failures)?;
    }
    Ok(Execution {
        exit_code,
        manifest: path,
        failures,
    })
}

/// Normalized natural-unit echo of a preset (time grid summarized).
pub fn preset_echo(p: &ScenarioPreset) -> serde_json::Value {
    let bath = |b: &BathSetup| {
        json!({
            "label": b.label.to_string(),
            "kind": b.spec.kind,
            "coupling_strength": b.spec.coupling_strength,
            "cutoff": b.spec.cutoff,
            "system_mass_ref": b.spec.system_mass_ref,
            "temperature": b.temperature.value(),
            "beta": b.temperature.beta(),
            "node_rule": b.scheme.node_rule,
            "mode_count": b.scheme.mode_count,
            "omega_max": b.scheme.frequency_ceiling,
            "omega_min": b.scheme.window().0,
        })
    };
    json!({
        "label": p.label,
        "initial_system": p.initial_system,
        "n_max": p.n_max,
        "t_end": p.time_grid.last().copied().unwrap_or(0.0),
        "steps": p.time_grid.len().saturating_sub(1),
        "system": p.system,
        "tb": bath(&p.tb),
        "second": p.second.as_ref().map(bath),
    })
}

fn max_delta_common(a: &[FockDensityMatrix], b: &[FockDensityMatrix]) -> f64 {
    let mut d = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let dim = x.dim().min(y.dim());
        for n in 0..dim {
            for m in 0..dim {
                d = d.max((x.get(n, m) - y.get(n, m)).norm());
            }
        }
    }
    d
}

/// One row of a convergence sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub preset: String,
    pub factor: usize,
    pub value: usize,
    pub max_delta: f64,
}

/// Reruns each preset with the chosen axis scaled by each factor; the
/// reported delta is against the previous factor (NaN for the first).
pub fn sweep(config: &RunConfig, spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    validate_factors(&spec.factors)?;
    let mut rows = Vec::new();
    for preset in &config.presets {
        match spec.axis {
            SweepAxis::N | SweepAxis::NMax => {
                let mut prev: Option<ScenarioResult> = None;
                for &f in &spec.factors {
                    let mut p = preset.clone();
                    let value = match spec.axis {
                        SweepAxis::N => {
                            p = p.with_mode_factor(f);
                            p.tb.scheme.mode_count
                        }
                        _ => {
                            p.n_max = preset.n_max * f;
                            p.n_max
                        }
                    };
                    let r = scenarios::run(&p)?;
                    let delta = match &prev {
                        None => f64::NAN,
                        Some(q) => {
                            max_delta_common(&q.exact, &r.exact)
                                .max(max_delta_common(&q.secular, &r.secular))
                                .max(max_delta_common(&q.canonical_start, &r.canonical_start))
                        }
                    };
                    rows.push(SweepRow {
                        preset: preset.label.clone(),
                        factor: f,
                        value,
                        max_delta: delta,
                    });
                    prev = Some(r);
                }
            }
            SweepAxis::QuadratureOrder => {
                let channels = scenarios::channels(preset)?;
                let basis = FockBasis::new(SLICE_N_MAX, preset.system)?;
                let base: Vec<usize> = par::map_slice(&channels, |c| propagator_tensor(c, &basis).map(|t| t.quadrature_order()))
                    .into_iter()
                    .collect::<Result<_>>()?;
                let mut prev: Option<Vec<_>> = None;
                for &f in &spec.factors {
                    let tensors = par::map_range(channels.len(), |i| propagator_tensor_at_order(&channels[i], &basis, base[i] * f))
                        .into_iter()
                        .collect::<Result<Vec<_>>>()?;
                    let delta = prev.as_ref().map_or(f64::NAN, |p: &Vec<crate::fock::PropagatorTensor>| {
                        p.iter().zip(&tensors).fold(0.0f64, |acc, (a, b)| acc.max(a.max_abs_diff(b)))
                    });
                    rows.push(SweepRow {
                        preset: preset.label.clone(),
                        factor: f,
                        value: base.iter().copied().max().unwrap_or(0) * f,
                        max_delta: delta,
                    });
                    prev = Some(tensors);
                }
            }
        }
    }
    Ok(rows)
}

pub fn render_sweep_csv(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let axis_name = match axis {
        SweepAxis::N => "N",
        SweepAxis::NMax => "n_max",
        SweepAxis::QuadratureOrder => "quadrature_order",
    };
    let mut out = String::from("preset,axis,factor,value,max_delta\n");
    for r in rows {
        let _ = writeln!(out, "{},{axis_name},{},{},{}", r.preset, r.factor, r.value, fmt(r.max_delta));
    }
    out
}

#[derive(Debug, Parser)]
#[command(name = "qbm", version, about = "Exact damped-oscillator simulations in the energy basis")]
pub struct Cli {
    /// Worker threads for data-parallel sections (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Output directory (overrides the config's `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Skip the N-doubling convergence gate.
    #[arg(long, global = true)]
    pub no_gate: bool,
    /// Run without rayon even when the parallel feature is compiled in.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every preset and write CSVs and a manifest.
    Run { config: PathBuf },
    /// Convergence sweep along one axis.
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: Option<SweepAxis>,
        #[arg(long, value_delimiter = ',')]
        factors: Option<Vec<usize>>,
    },
    /// Parse and validate only; prints the normalized presets.
    Check { config: PathBuf },
}

fn load_or_exit(path: &Path) -> std::result::Result<RunConfig, i32> {
    load_config(path).map_err(|e| {
        eprintln!("error: {e}");
        match e {
            Error::Io { .. } => EXIT_VALIDATION,
            other => exit_code_for(&other),
        }
    })
}

fn output_dir(cli: &Cli, config: &RunConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| config.outputs.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Entry point shared by the binary and the tests; returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_SUCCESS,
                _ => EXIT_VALIDATION,
            };
        }
    };
    if cli.sequential {
        par::set_execution(par::Execution::Sequential);
    }
    if cli.workers > 0 {
        par::configure_workers(cli.workers);
    }
    match &cli.command {
        Command::Check { config } => match load_or_exit(config) {
            Ok(cfg) => {
                let echo: Vec<_> = cfg.presets.iter().map(preset_echo).collect();
                println!("{}", serde_json::to_string_pretty(&echo).expect("json"));
                EXIT_SUCCESS
            }
            Err(code) => code,
        },
        Command::Run { config } => {
            let mut cfg = match load_or_exit(config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            if cli.no_gate {
                cfg.convergence_gate = false;
            }
            let out = output_dir(&cli, &cfg);
            match execute(&cfg, &out) {
                Ok(ex) => {
                    for f in &ex.failures {
                        eprintln!("failed: {f}");
                    }
                    println!("manifest: {}", ex.manifest.display());
                    ex.exit_code
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    exit_code_for(&e)
                }
            }
        }
        Command::Sweep { config, axis, factors } => {
            let cfg = match load_or_exit(config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let spec = match (axis, factors, &cfg.sweep) {
                (Some(a), Some(f), _) => SweepSpec { axis: *a, factors: f.clone() },
                (a, f, Some(s)) => SweepSpec {
                    axis: a.unwrap_or(s.axis),
                    factors: f.clone().unwrap_or_else(|| s.factors.clone()),
                },
                (a, f, None) => SweepSpec {
                    axis: a.unwrap_or(SweepAxis::N),
                    factors: f.clone().unwrap_or_else(|| vec![1, 2, 4]),
                },
            };
            let out = output_dir(&cli, &cfg);
            match sweep_to_disk(&cfg, &spec, &out) {
                Ok(code) => code,
                Err(e) => {
                    eprintln!("error: {e}");
                    exit_code_for(&e)
                }
            }
        }
    }
}

fn sweep_to_disk(cfg: &RunConfig, spec: &SweepSpec, out: &Path) -> Result<i32> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let rows = sweep(cfg, spec)?;
    let csv = out.join("convergence.csv");
    write_file(&csv, &render_sweep_csv(spec.axis, &rows))?;
    let limit = match spec.axis {
        SweepAxis::QuadratureOrder => 1e-9,
        _ => CONVERGENCE_LIMIT,
    };
    let failed: Vec<String> = rows
        .iter()
        .filter(|r| r.max_delta.is_finite() && r.max_delta >= limit || r.max_delta.is_infinite())
        .map(|r| format!("{}: factor {} max_delta {:e} (limit {limit:e})", r.preset, r.factor, r.max_delta))
        .collect();
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "created_unix": unix_time(),
        "units": units(),
        "sweep": spec,
        "limit": limit,
        "rows": rows,
        "presets": cfg.presets.iter().map(preset_echo).collect::<Vec<_>>(),
        "status": if failed.is_empty() { "ok" } else { "failed" },
    });
    let path = out.join("manifest.json");
    write_file(&path, &(serde_json::to_string_pretty(&manifest).expect("json") + "\n"))?;
    if failed.is_empty() {
        Ok(EXIT_SUCCESS)
    } else {
        for f in &failed {
            eprintln!("failed: {f}");
        }
        mark_failed(out, &failed)?;
        Ok(EXIT_INVARIANT)
    }
}
