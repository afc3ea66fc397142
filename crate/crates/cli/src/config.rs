//! TOML scenario configuration: schema, fixture resolution and physical-range checks.

use std::path::{Path, PathBuf};

use paracoupler::circuit::{fixtures as chip, CircuitSpec, Coupling, CouplerSpec, DecayRates, Element};
use paracoupler::dynamics::EnvelopeSpec;
use paracoupler::floquet::{fixtures as fq, fourier_decompose, DriveSpec, Transition};
use paracoupler::protocols::{fixtures as cz, ShotModel};
use paracoupler::rbsim::RBModel;
use serde::Deserialize;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    ResetDynamics,
    ResetMetrics,
    LrDynamics,
    LeakageRb,
    PeriodicLr,
    ChiMap,
    ReadoutShots,
    CzChevron,
    FloquetReport,
}

impl Scenario {
    pub const ALL: [Scenario; 9] = [
        Scenario::ResetDynamics,
        Scenario::ResetMetrics,
        Scenario::LrDynamics,
        Scenario::LeakageRb,
        Scenario::PeriodicLr,
        Scenario::ChiMap,
        Scenario::ReadoutShots,
        Scenario::CzChevron,
        Scenario::FloquetReport,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::ResetDynamics => "reset-dynamics",
            Scenario::ResetMetrics => "reset-metrics",
            Scenario::LrDynamics => "lr-dynamics",
            Scenario::LeakageRb => "leakage-rb",
            Scenario::PeriodicLr => "periodic-lr",
            Scenario::ChiMap => "chi-map",
            Scenario::ReadoutShots => "readout-shots",
            Scenario::CzChevron => "cz-chevron",
            Scenario::FloquetReport => "floquet-report",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }

    fn uses_drive(self) -> bool {
        matches!(self, Scenario::ResetDynamics | Scenario::CzChevron | Scenario::FloquetReport)
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: String,
    seed: Option<u64>,
    output: Option<PathBuf>,
    #[serde(default)]
    circuit: CircuitSection,
    #[serde(default)]
    drive: DriveSection,
    #[serde(default)]
    rates: RatesSection,
    #[serde(default)]
    params: toml::Table,
}

/// Either a named fixture (optionally re-truncated) or an explicit element list.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CircuitSection {
    fixture: Option<String>,
    /// Levels of (qubits, coupler, resonator) for the fixture.
    levels: Option<[usize; 3]>,
    elements: Option<Vec<Element>>,
    couplings: Option<Vec<Coupling>>,
    coupler: Option<CouplerSpec>,
}

/// Field-wise overrides of the scenario's default drive.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DriveSection {
    fixture: Option<String>,
    phi_dc: Option<f64>,
    a_d: Option<f64>,
    omega_d: Option<f64>,
    k: Option<u32>,
    envelope: Option<EnvelopeSpec>,
}

impl DriveSection {
    fn is_empty(&self) -> bool {
        self.fixture.is_none()
            && self.phi_dc.is_none()
            && self.a_d.is_none()
            && self.omega_d.is_none()
            && self.k.is_none()
            && self.envelope.is_none()
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RatesSection {
    gamma1: Option<f64>,
    gamma_phi: Option<f64>,
    kappa_r: Option<f64>,
    gamma_fe: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResetDynamicsParams {
    /// Drive amplitudes a_D (rad); defaults to zero, weak and the drive's own a_D.
    pub amplitudes: Option<Vec<f64>>,
    pub duration: f64,
    pub points: usize,
    pub lindblad: bool,
}

impl Default for ResetDynamicsParams {
    fn default() -> Self {
        Self { amplitudes: None, duration: 1e-6, points: 501, lindblad: true }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResetMetricsParams {
    pub p_id: f64,
    pub p_pi: f64,
    pub p_id_r: f64,
    pub p_pi_r: f64,
    pub tau_r: f64,
    pub tau_m: f64,
    pub t_resonator: Option<f64>,
    /// Shots per synthetic experiment; 0 skips the IQ workflow.
    pub shots: usize,
}

impl Default for ResetMetricsParams {
    fn default() -> Self {
        Self { p_id: 0.0062, p_pi: 0.88, p_id_r: 0.00074, p_pi_r: 0.0033, tau_r: 150e-9, tau_m: 2.3e-6, t_resonator: None, shots: 20_000 }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrDynamicsParams {
    pub g_tilde: f64,
    pub duration: f64,
    pub points: usize,
    pub ptm: bool,
    /// LR pulse length for the PTM; defaults to the closed-form swap time.
    pub ptm_duration: Option<f64>,
}

impl Default for LrDynamicsParams {
    fn default() -> Self {
        Self { g_tilde: fq::LR_G_TILDE, duration: 600e-9, points: 601, ptm: true, ptm_duration: None }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeakageRbParams {
    pub l_cl: Option<f64>,
    pub tau_cl: f64,
    pub tau_leak: f64,
    pub tau_lr: f64,
    pub f_lr: f64,
    pub n_lr: usize,
    pub lengths: Vec<usize>,
    pub randomizations: usize,
    pub shots: usize,
    pub depolarizing: f64,
    pub model: RBModel,
}

impl Default for LeakageRbParams {
    fn default() -> Self {
        let s = paracoupler::rbsim::RBScenario::fixture(0.0, chip::rates_q1());
        Self {
            l_cl: None,
            tau_cl: s.tau_cl,
            tau_leak: s.tau_leak,
            tau_lr: s.tau_lr,
            f_lr: s.f_lr,
            n_lr: s.n_lr,
            lengths: s.lengths,
            randomizations: s.randomizations,
            shots: 0,
            depolarizing: 0.0,
            model: RBModel::WithLeakage,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PeriodicLrParams {
    pub l_cl: Option<f64>,
    /// LR periods N; 0 is the leakage-only reference.
    pub n_lr: Vec<usize>,
    pub n_max: usize,
    pub tau_cl: f64,
    pub tau_leak: f64,
    pub tau_lr: f64,
    pub f_lr: f64,
}

impl Default for PeriodicLrParams {
    fn default() -> Self {
        let s = paracoupler::rbsim::RBScenario::fixture(0.0, chip::rates_q1());
        Self { l_cl: None, n_lr: vec![0, 1, 5, 10, 20], n_max: 500, tau_cl: s.tau_cl, tau_leak: s.tau_leak, tau_lr: s.tau_lr, f_lr: s.f_lr }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChiMapParams {
    pub g_tilde: Vec<f64>,
    pub lab_detuning_min: f64,
    pub lab_detuning_max: f64,
    pub points: usize,
    pub k: u32,
    /// Operating point used for the resonator-response table.
    pub operating_g_tilde: f64,
    pub operating_lab_detuning: f64,
    pub probe_span: f64,
    pub probe_points: usize,
}

impl Default for ChiMapParams {
    fn default() -> Self {
        Self {
            g_tilde: vec![0.06e6, 0.15e6, 0.41e6, 0.90e6, 1.50e6, 2.12e6, 2.50e6],
            lab_detuning_min: -20e6,
            lab_detuning_max: 20e6,
            points: 401,
            k: 2,
            operating_g_tilde: fq::READOUT_G_TILDE,
            operating_lab_detuning: fq::READOUT_LAB_DETUNING,
            probe_span: 6e6,
            probe_points: 301,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReadoutShotsParams {
    /// Shots per calibration set and per measured state.
    pub shots: usize,
    /// Prepared (P_g, P_e, P_f) of the states to measure.
    pub populations: Vec<[f64; 3]>,
    pub model: Option<ShotModel>,
}

impl Default for ReadoutShotsParams {
    fn default() -> Self {
        Self { shots: 5000, populations: vec![[0.9938, 0.0062, 0.0], [0.12, 0.88, 0.0], [0.05, 0.15, 0.8]], model: None }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CzChevronParams {
    /// Chevron centre; defaults to the drive frequency.
    pub center: Option<f64>,
    pub span: f64,
    pub frequencies: usize,
    pub t_max: f64,
    pub times: usize,
    pub phase: bool,
    pub phase_center: Option<f64>,
    pub phase_span: f64,
    pub phase_frequencies: usize,
}

impl Default for CzChevronParams {
    fn default() -> Self {
        Self {
            center: None,
            span: 30e6,
            frequencies: 31,
            t_max: 1e-6,
            times: 201,
            phase: true,
            phase_center: None,
            phase_span: 20e6,
            phase_frequencies: 11,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FloquetReportParams {
    pub transition: Transition,
    pub m_max: usize,
    pub time_domain: bool,
}

impl Default for FloquetReportParams {
    fn default() -> Self {
        Self { transition: Transition::Reset, m_max: 4, time_domain: false }
    }
}

#[derive(Clone, Debug)]
pub enum Params {
    ResetDynamics(ResetDynamicsParams),
    ResetMetrics(ResetMetricsParams),
    LrDynamics(LrDynamicsParams),
    LeakageRb(LeakageRbParams),
    PeriodicLr(PeriodicLrParams),
    ChiMap(ChiMapParams),
    ReadoutShots(ReadoutShotsParams),
    CzChevron(CzChevronParams),
    FloquetReport(FloquetReportParams),
}

/// Fully resolved configuration.
#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub circuit: CircuitSpec,
    pub drive: Option<DriveSpec>,
    pub rates: DecayRates,
    pub params: Params,
}

/// Errors and warnings, each prefixed with its field path.
#[derive(Debug, Default)]
pub struct Diagnostics {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl Diagnostics {
    fn error(&mut self, path: &str, msg: impl AsRef<str>) {
        self.errors.push(format!("{path}: {}", msg.as_ref()));
    }

    fn warn(&mut self, path: &str, msg: impl AsRef<str>) {
        self.warnings.push(format!("{path}: {}", msg.as_ref()));
    }

    fn positive(&mut self, path: &str, v: f64) {
        if !(v > 0.0) || !v.is_finite() {
            self.error(path, format!("must be > 0, got {v}"));
        }
    }

    fn non_negative(&mut self, path: &str, v: f64) {
        if !(v >= 0.0) || !v.is_finite() {
            self.error(path, format!("must be >= 0, got {v}"));
        }
    }

    fn probability(&mut self, path: &str, v: f64) {
        if !(0.0..=1.0).contains(&v) {
            self.error(path, format!("must lie in [0, 1], got {v}"));
        }
    }

    fn at_least(&mut self, path: &str, v: usize, min: usize) {
        if v < min {
            self.error(path, format!("must be >= {min}, got {v}"));
        }
    }
}

pub fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

/// Parses and resolves a configuration; schema errors become `CliError::Schema`.
pub fn parse(text: &str) -> Result<(ScenarioConfig, Diagnostics), CliError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::schema(format!("schema: {}", e.to_string().trim_end())))?;
    let scenario = Scenario::parse(&raw.scenario).ok_or_else(|| {
        let names: Vec<&str> = Scenario::ALL.iter().map(|s| s.name()).collect();
        CliError::schema(format!("scenario: unknown scenario '{}', expected one of {}", raw.scenario, names.join(", ")))
    })?;
    let mut diag = Diagnostics::default();

    let circuit = resolve_circuit(scenario, &raw.circuit)?;
    let rates = resolve_rates(&raw.rates);
    let drive = if scenario.uses_drive() {
        Some(resolve_drive(scenario, &raw.drive, &circuit)?)
    } else {
        if !raw.drive.is_empty() {
            diag.warn("drive", format!("ignored by scenario {}", scenario.name()));
        }
        None
    };
    let params = parse_params(scenario, raw.params)?;
    let config = ScenarioConfig { scenario, seed: raw.seed, output: raw.output, circuit, drive, rates, params };
    check(&config, &mut diag);
    Ok((config, diag))
}

fn resolve_circuit(scenario: Scenario, s: &CircuitSection) -> Result<CircuitSpec, CliError> {
    if s.elements.is_some() {
        if s.fixture.is_some() || s.levels.is_some() {
            return Err(CliError::schema("circuit: give either fixture/levels or elements, not both"));
        }
        let mut spec = CircuitSpec {
            elements: s.elements.clone().unwrap_or_default(),
            couplings: s.couplings.clone().unwrap_or_default(),
            coupler: s.coupler.unwrap_or_else(chip::coupler),
        };
        if scenario == Scenario::CzChevron {
            strip_resonator(&mut spec);
        }
        return Ok(spec);
    }
    if s.couplings.is_some() {
        return Err(CliError::schema("circuit.couplings: only allowed together with circuit.elements"));
    }
    match s.fixture.as_deref().unwrap_or("reference") {
        "reference" => {}
        other => return Err(CliError::schema(format!("circuit.fixture: unknown fixture '{other}', expected 'reference'"))),
    }
    let mut spec = match (scenario, s.levels) {
        (Scenario::CzChevron, None) => cz::cz_circuit(),
        (Scenario::CzChevron, Some([q, c, _])) => {
            let mut spec = chip::circuit(q, c, 2).at_flux(cz::CZ_PHI_DC);
            strip_resonator(&mut spec);
            spec
        }
        (_, Some([q, c, r])) => chip::circuit(q, c, r),
        (_, None) => chip::circuit(3, 2, 3),
    };
    if let Some(coupler) = s.coupler {
        spec.coupler = coupler;
    }
    Ok(spec)
}

fn strip_resonator(spec: &mut CircuitSpec) {
    spec.elements.retain(|e| e.name != "R");
    spec.couplings.retain(|c| c.a != "R" && c.b != "R");
}

fn resolve_rates(s: &RatesSection) -> DecayRates {
    let base = chip::rates_q1();
    DecayRates {
        gamma1: s.gamma1.unwrap_or(base.gamma1),
        gamma_phi: s.gamma_phi.unwrap_or(base.gamma_phi),
        kappa_r: s.kappa_r.unwrap_or(base.kappa_r),
        gamma_fe: s.gamma_fe.unwrap_or(base.gamma_fe),
    }
}

fn resolve_drive(scenario: Scenario, s: &DriveSection, circuit: &CircuitSpec) -> Result<DriveSpec, CliError> {
    let default = if scenario == Scenario::CzChevron { "cz" } else { "reset" };
    let name = s.fixture.as_deref().unwrap_or(default);
    let needs = |el: &str| {
        circuit
            .element(el)
            .map(|_| ())
            .map_err(|_| CliError::schema(format!("drive.fixture: fixture '{name}' needs circuit element {el}")))
    };
    let mut d = match name {
        "reset" => {
            needs("Q1")?;
            needs("R")?;
            fq::reset_drive(circuit)
        }
        "cz" => {
            for el in ["Q1", "Q2", "C"] {
                needs(el)?;
            }
            cz::cz_drive(circuit).map_err(|e| CliError::schema(format!("drive.fixture: cannot resolve 'cz': {e}")))?
        }
        other => return Err(CliError::schema(format!("drive.fixture: unknown fixture '{other}', expected 'reset' or 'cz'"))),
    };
    if let Some(v) = s.phi_dc {
        d.phi_dc = v;
    }
    if let Some(v) = s.a_d {
        d.a_d = v;
    }
    if let Some(v) = s.omega_d {
        d.omega_d = v;
    }
    if let Some(v) = s.k {
        d.k = v;
    }
    if s.envelope.is_some() {
        d.envelope = s.envelope;
    }
    Ok(d)
}

fn parse_params(scenario: Scenario, table: toml::Table) -> Result<Params, CliError> {
    fn typed<T: serde::de::DeserializeOwned>(table: toml::Table) -> Result<T, CliError> {
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::schema(format!("params: {}", e.message().trim_end())))
    }
    Ok(match scenario {
        Scenario::ResetDynamics => Params::ResetDynamics(typed(table)?),
        Scenario::ResetMetrics => Params::ResetMetrics(typed(table)?),
        Scenario::LrDynamics => Params::LrDynamics(typed(table)?),
        Scenario::LeakageRb => Params::LeakageRb(typed(table)?),
        Scenario::PeriodicLr => Params::PeriodicLr(typed(table)?),
        Scenario::ChiMap => Params::ChiMap(typed(table)?),
        Scenario::ReadoutShots => Params::ReadoutShots(typed(table)?),
        Scenario::CzChevron => Params::CzChevron(typed(table)?),
        Scenario::FloquetReport => Params::FloquetReport(typed(table)?),
    })
}

/// |D_k| against k·ω_D/2 for the drive's own harmonic.
fn drive_window(path: &str, drive: &DriveSpec, coupler: &CouplerSpec, diag: &mut Diagnostics) {
    let k = drive.k as usize;
    match fourier_decompose(drive, coupler, k.max(1)) {
        Ok(f) => {
            let dk = f.numerical.d_m(k).abs();
            let limit = drive.k as f64 * drive.omega_d / 2.0;
            if dk >= limit {
                diag.warn(
                    path,
                    format!(
                        "a_D = {} gives |D_{k}| = {:.4e} Hz >= k·ω_D/2 = {:.4e} Hz; the single-Bessel coupling estimate is outside its validity window",
                        drive.a_d, dk, limit
                    ),
                );
            }
        }
        Err(e) => diag.error(path, format!("Fourier decomposition failed: {e}")),
    }
}

fn check(c: &ScenarioConfig, d: &mut Diagnostics) {
    if let Err(e) = c.circuit.validate() {
        d.error("circuit", e.to_string());
    }
    let r = &c.rates;
    for (field, v) in [("gamma1", r.gamma1), ("gamma_phi", r.gamma_phi), ("kappa_r", r.kappa_r), ("gamma_fe", r.gamma_fe)] {
        d.non_negative(&format!("rates.{field}"), v);
    }
    if let Some(drive) = &c.drive {
        if !drive.phi_dc.is_finite() {
            d.error("drive.phi_dc", "must be finite");
        }
        d.non_negative("drive.a_d", drive.a_d);
        d.positive("drive.omega_d", drive.omega_d);
        if !(1..=2).contains(&drive.k) {
            d.error("drive.k", format!("must be 1 or 2, got {}", drive.k));
        }
        if let Some(env) = &drive.envelope {
            if let Err(e) = env.validate() {
                d.error("drive.envelope", e.to_string());
            }
        }
        if d.errors.is_empty() {
            drive_window("drive.a_d", drive, &c.circuit.coupler, d);
        }
    }
    match &c.params {
        Params::ResetDynamics(p) => {
            d.positive("params.duration", p.duration);
            d.at_least("params.points", p.points, 2);
            if let (Some(a), Some(drive)) = (&p.amplitudes, &c.drive) {
                if a.is_empty() {
                    d.error("params.amplitudes", "must not be empty");
                }
                for (i, &v) in a.iter().enumerate() {
                    let path = format!("params.amplitudes[{i}]");
                    d.non_negative(&path, v);
                    if v > 0.0 && v.is_finite() && d.errors.is_empty() {
                        drive_window(&path, &DriveSpec { a_d: v, ..drive.clone() }, &c.circuit.coupler, d);
                    }
                }
            }
            for el in ["Q1", "R"] {
                if c.circuit.element(el).is_err() {
                    d.error("circuit.elements", format!("scenario needs element {el}"));
                }
            }
        }
        Params::ResetMetrics(p) => {
            for (f, v) in [("p_id", p.p_id), ("p_pi", p.p_pi), ("p_id_r", p.p_id_r), ("p_pi_r", p.p_pi_r)] {
                d.probability(&format!("params.{f}"), v);
            }
            d.positive("params.tau_r", p.tau_r);
            d.positive("params.tau_m", p.tau_m);
            if let Some(t) = p.t_resonator {
                d.non_negative("params.t_resonator", t);
            }
            if p.shots != 0 {
                d.at_least("params.shots", p.shots, 1000);
            }
            for el in ["Q1", "R"] {
                if c.circuit.element(el).is_err() {
                    d.error("circuit.elements", format!("scenario needs element {el}"));
                }
            }
        }
        Params::LrDynamics(p) => {
            d.non_negative("params.g_tilde", p.g_tilde);
            d.positive("params.duration", p.duration);
            d.at_least("params.points", p.points, 2);
            if let Some(t) = p.ptm_duration {
                d.positive("params.ptm_duration", t);
            }
            if c.circuit.element("Q1").is_err() {
                d.error("circuit.elements", "scenario needs element Q1");
            }
        }
        Params::LeakageRb(p) => {
            match p.l_cl {
                None => d.error("params.l_cl", "required"),
                Some(l) => d.probability("params.l_cl", l),
            }
            check_timing(d, p.tau_cl, p.tau_leak, p.tau_lr, p.f_lr);
            d.probability("params.depolarizing", p.depolarizing);
            d.at_least("params.randomizations", p.randomizations, 2);
            if p.lengths.len() < 4 {
                d.error("params.lengths", format!("need at least 4 lengths, got {}", p.lengths.len()));
            }
            if p.lengths.windows(2).any(|w| w[1] <= w[0]) {
                d.error("params.lengths", "must be strictly increasing");
            }
        }
        Params::PeriodicLr(p) => {
            match p.l_cl {
                None => d.error("params.l_cl", "required"),
                Some(l) => d.probability("params.l_cl", l),
            }
            check_timing(d, p.tau_cl, p.tau_leak, p.tau_lr, p.f_lr);
            if p.n_lr.is_empty() {
                d.error("params.n_lr", "must not be empty");
            }
            d.at_least("params.n_max", p.n_max, 1);
        }
        Params::ChiMap(p) => {
            if p.g_tilde.is_empty() {
                d.error("params.g_tilde", "must not be empty");
            }
            for (i, &g) in p.g_tilde.iter().enumerate() {
                d.non_negative(&format!("params.g_tilde[{i}]"), g);
            }
            if !(p.lab_detuning_max > p.lab_detuning_min) {
                d.error("params.lab_detuning_max", "must exceed lab_detuning_min");
            }
            d.at_least("params.points", p.points, 2);
            if !(1..=2).contains(&p.k) {
                d.error("params.k", format!("must be 1 or 2, got {}", p.k));
            }
            d.non_negative("params.operating_g_tilde", p.operating_g_tilde);
            d.positive("params.probe_span", p.probe_span);
            d.at_least("params.probe_points", p.probe_points, 2);
            d.positive("rates.kappa_r", c.rates.kappa_r);
        }
        Params::ReadoutShots(p) => {
            d.at_least("params.shots", p.shots, 1000);
            for (i, pop) in p.populations.iter().enumerate() {
                let path = format!("params.populations[{i}]");
                if pop.iter().any(|v| !(0.0..=1.0).contains(v)) || (pop.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    d.error(&path, "must be probabilities summing to 1");
                }
            }
            if let Some(m) = &p.model {
                d.positive("params.model.sigma", m.sigma);
            }
        }
        Params::CzChevron(p) => {
            d.positive("params.span", p.span);
            d.at_least("params.frequencies", p.frequencies, 1);
            d.positive("params.t_max", p.t_max);
            d.at_least("params.times", p.times, 2);
            d.positive("params.phase_span", p.phase_span);
            d.at_least("params.phase_frequencies", p.phase_frequencies, 2);
            if let Some(drive) = &c.drive {
                let lowest = p.center.unwrap_or(drive.omega_d) - p.span / 2.0;
                let lowest_phase = p.phase_center.unwrap_or(drive.omega_d) - p.phase_span / 2.0;
                if !(lowest > 0.0) || (p.phase && !(lowest_phase > 0.0)) {
                    d.error("params.span", "sweep reaches non-positive drive frequencies");
                }
            }
            for el in ["Q1", "Q2", "C"] {
                if c.circuit.element(el).is_err() {
                    d.error("circuit.elements", format!("scenario needs element {el}"));
                }
            }
        }
        Params::FloquetReport(p) => {
            d.at_least("params.m_max", p.m_max, 2);
            if let Some(drive) = &c.drive {
                if drive.k != 2 {
                    d.warn("drive.k", "k2 closed forms and the Schrieffer-Wolff correction are skipped for k = 1");
                }
            }
        }
    }
}

fn check_timing(d: &mut Diagnostics, tau_cl: f64, tau_leak: f64, tau_lr: f64, f_lr: f64) {
    d.positive("params.tau_cl", tau_cl);
    d.non_negative("params.tau_leak", tau_leak);
    d.non_negative("params.tau_lr", tau_lr);
    d.probability("params.f_lr", f_lr);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_resolves_fixtures() {
        let (c, d) = parse("scenario = \"floquet-report\"").unwrap();
        assert!(d.errors.is_empty(), "{:?}", d.errors);
        assert_eq!(c.circuit.elements.len(), 4);
        assert_eq!(c.drive.unwrap().k, 2);
    }

    #[test]
    fn unknown_scenario_rejected() {
        let err = parse("scenario = \"nope\"").unwrap_err();
        assert!(matches!(err, CliError::Schema(_)));
        assert!(err.to_string().contains("unknown scenario"));
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(matches!(parse("scenario = \"chi-map\"\nbogus = 1"), Err(CliError::Schema(_))));
        assert!(matches!(parse("scenario = \"chi-map\"\n[params]\nbogus = 1"), Err(CliError::Schema(_))));
        assert!(matches!(parse("scenario = \"chi-map\"\n[circuit]\nfixture = \"other\""), Err(CliError::Schema(_))));
    }

    #[test]
    fn negative_rate_names_its_field() {
        let (_, d) = parse("scenario = \"lr-dynamics\"\n[rates]\nkappa_r = -1.0").unwrap();
        assert_eq!(d.errors.len(), 1);
        assert!(d.errors[0].starts_with("rates.kappa_r:"), "{}", d.errors[0]);
    }

    #[test]
    fn required_leakage_parameter() {
        let (_, d) = parse("scenario = \"leakage-rb\"").unwrap();
        assert!(d.errors.iter().any(|e| e.starts_with("params.l_cl")));
        let (_, d) = parse("scenario = \"leakage-rb\"\n[params]\nl_cl = 0.02").unwrap();
        assert!(d.errors.is_empty());
    }

    #[test]
    fn strong_drive_warns() {
        let (_, d) = parse("scenario = \"floquet-report\"").unwrap();
        assert!(d.warnings.is_empty(), "{:?}", d.warnings);
        let (_, d) = parse("scenario = \"floquet-report\"\n[drive]\nomega_d = 1.0e8\nk = 1\na_d = 0.3").unwrap();
        assert!(d.errors.is_empty());
        assert!(d.warnings.iter().any(|w| w.starts_with("drive.a_d:")), "{:?}", d.warnings);
    }

    #[test]
    fn drive_ignored_warning() {
        let (c, d) = parse("scenario = \"chi-map\"\n[drive]\na_d = 0.1").unwrap();
        assert!(c.drive.is_none());
        assert!(d.warnings.iter().any(|w| w.starts_with("drive:")));
    }

    #[test]
    fn cz_circuit_has_no_resonator() {
        let (c, d) = parse("scenario = \"cz-chevron\"").unwrap();
        assert!(d.errors.is_empty(), "{:?}", d.errors);
        assert!(c.circuit.element("R").is_err());
        assert_eq!(c.drive.unwrap().k, 1);
    }
}
