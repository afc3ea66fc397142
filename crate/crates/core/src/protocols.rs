//! Operation-level models and metrics: reset, thermal budget, flux calibration,
//! parametric readout with Gaussian-mixture classification, and CZ calibration.

use std::f64::consts::PI;
use std::io::{Read, Write};

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::circuit::{coupler_frequency, CircuitSpec, CouplerSpec, ElementKind};
use crate::dynamics::PopulationVector;
use crate::floquet::{fit_rabi_oscillation, fourier_decompose, DriveSpec, FloquetError};
use crate::numerics::linalg::{basis_ket, c, hermitian_eigen, zeros, ComplexMatrix, ComplexVector};
use crate::numerics::{fit_least_squares, propagate_ket_sampled, NumericsError, Observation, RngStream, Tolerances};

/// Planck constant (J·s) and Boltzmann constant (J/K), exact SI values.
pub const PLANCK: f64 = 6.626_070_15e-34;
pub const BOLTZMANN: f64 = 1.380_649e-23;

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("confusion matrix is singular (states indistinguishable)")]
    SingularConfusion,
    #[error("fit did not converge: {0}")]
    NoConvergence(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Floquet(#[from] FloquetError),
    #[error("io: {0}")]
    Io(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ProtocolError> {
    Err(ProtocolError::InvalidInput(msg.into()))
}

fn is_prob(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResetMetrics {
    pub eta_r: f64,
    pub f_r: f64,
}

/// η_r = 1 − P_π^r/P_π and F_r = 1 − (P_Id^r + P_π^r)/2.
pub fn reset_metrics(p_id: f64, p_pi: f64, p_id_r: f64, p_pi_r: f64) -> Result<ResetMetrics, ProtocolError> {
    if ![p_id, p_pi, p_id_r, p_pi_r].iter().all(|p| is_prob(*p)) {
        return invalid("populations must lie in [0, 1]");
    }
    if p_pi == 0.0 {
        return invalid("P_pi = 0: reset efficiency undefined");
    }
    Ok(ResetMetrics { eta_r: 1.0 - p_pi_r / p_pi, f_r: 1.0 - (p_id_r + p_pi_r) / 2.0 })
}

/// Two-level Boltzmann temperature (K) for excited population `p_e` at ω_q/2π (Hz).
pub fn population_to_temperature(p_e: f64, omega_q: f64) -> Result<f64, ProtocolError> {
    if !(p_e > 0.0 && p_e < 0.5) {
        return invalid(format!("P_e = {p_e} has no positive-temperature solution"));
    }
    if !(omega_q > 0.0) {
        return invalid("omega_q must be positive");
    }
    Ok(PLANCK * omega_q / (BOLTZMANN * ((1.0 - p_e) / p_e).ln()))
}

/// Inverse of [`population_to_temperature`].
pub fn temperature_to_population(t: f64, omega_q: f64) -> Result<f64, ProtocolError> {
    if !(t >= 0.0) || !(omega_q > 0.0) {
        return invalid("need T >= 0 and omega_q > 0");
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    Ok(1.0 / (1.0 + (PLANCK * omega_q / (BOLTZMANN * t)).exp()))
}

/// Bose occupation at frequency ω/2π (Hz) and temperature T (K).
pub fn bose_occupation(omega: f64, t: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    1.0 / (PLANCK * omega / (BOLTZMANN * t)).exp_m1()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalInputs {
    pub p_id: f64,
    /// Γ₁ (Hz, cyclic).
    pub gamma1: f64,
    pub omega_q: f64,
    pub omega_r: f64,
    pub tau_r: f64,
    pub tau_m: f64,
    /// Resonator bath temperature; `None` means the qubit temperature T_Id.
    #[serde(default)]
    pub t_resonator: Option<f64>,
}

impl ThermalInputs {
    /// Q1 reset fixture: P_Id = 0.62 %, Γ₁ = 6.8 kHz, τ_r = 150 ns, τ_m = 2.3 µs.
    pub fn fixture() -> Self {
        use crate::circuit::fixtures as chip;
        Self { p_id: 0.0062, gamma1: chip::GAMMA1_Q1, omega_q: chip::OMEGA_Q1, omega_r: chip::OMEGA_R, tau_r: 150e-9, tau_m: 2.3e-6, t_resonator: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalBudget {
    /// Qubit temperature T_Id (K).
    pub t: f64,
    pub n_th: f64,
    pub n_up: f64,
    /// κ_{0→1}/2π (Hz).
    pub kappa_01: f64,
    pub tau_r: f64,
    pub tau_m: f64,
    /// n_th + n_↑.
    pub floor: f64,
    /// Lower bound (ω_q/ω_r)·T_R on the post-reset qubit temperature (K).
    pub t_reset_bound: f64,
}

pub fn thermal_budget(inputs: &ThermalInputs) -> Result<ThermalBudget, ProtocolError> {
    let ThermalInputs { p_id, gamma1, omega_q, omega_r, tau_r, tau_m, t_resonator } = *inputs;
    if !(tau_r > 0.0 && tau_m > 0.0) {
        return invalid("tau_r and tau_m must be positive");
    }
    if !(gamma1 >= 0.0) || !(omega_r > 0.0) {
        return invalid("need gamma1 >= 0 and omega_r > 0");
    }
    let t = if p_id == 0.0 { 0.0 } else { population_to_temperature(p_id, omega_q)? };
    let t_r = t_resonator.unwrap_or(t);
    if !(t_r >= 0.0) {
        return invalid("resonator temperature must be >= 0");
    }
    let n_th = bose_occupation(omega_r, t_r);
    let kappa_01 = p_id * gamma1;
    let n_up = 2.0 * PI * kappa_01 * (tau_r + tau_m) / 2.0;
    Ok(ThermalBudget { t, n_th, n_up, kappa_01, tau_r, tau_m, floor: n_th + n_up, t_reset_bound: omega_q / omega_r * t_r })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluxCalibration {
    /// Conversion a_D = c·V_D (rad/V).
    pub c: f64,
    pub c_std: f64,
    pub residuals: Vec<f64>,
    pub converged: bool,
}

/// Coupler shift ω̄_C(a_D) − ω_C(φ_dc) (Hz) of the time-averaged frequency.
pub fn mean_coupler_shift(a_d: f64, coupler: &CouplerSpec, phi_dc: f64) -> Result<f64, ProtocolError> {
    if a_d == 0.0 {
        return Ok(0.0);
    }
    let drive = DriveSpec { phi_dc, a_d: a_d.abs(), omega_d: 1.0, k: 1, envelope: None };
    let spectrum = fourier_decompose(&drive, coupler, 1)?.numerical;
    Ok(spectrum.omega_bar_c - coupler_frequency(phi_dc, coupler))
}

/// Fits Δ_C(V_D) = ω̄_C(c·V_D) − ω_C(φ_dc) for the volts-to-radians factor c.
pub fn flux_amplitude_calibration(data: &[(f64, f64)], coupler: &CouplerSpec, phi_dc: f64, sigma: Option<&[f64]>) -> Result<FluxCalibration, ProtocolError> {
    if data.len() < 3 {
        return invalid("need at least 3 (V_D, Δ_C) points");
    }
    if let Some(s) = sigma {
        if s.len() != data.len() {
            return invalid("sigma length must match data");
        }
    }
    // seed: invert the lowest-order (quadratic) response on the largest-|V| point
    let &(v_max, d_max) = data.iter().max_by(|a, b| a.0.abs().total_cmp(&b.0.abs())).expect("non-empty");
    if v_max == 0.0 {
        return invalid("all drive voltages are zero");
    }
    let probe = 0.05;
    let curvature = mean_coupler_shift(probe, coupler, phi_dc)? / (probe * probe);
    let c0 = if curvature != 0.0 && d_max / curvature > 0.0 { (d_max / curvature).sqrt() / v_max.abs() } else { probe / v_max.abs() };
    let obs: Vec<Observation<f64>> = data
        .iter()
        .enumerate()
        .map(|(i, &(v, d))| Observation::new(v, d * 1e-6, sigma.map(|s| s[i] * 1e-6).unwrap_or(1.0)))
        .collect();
    let model = |v: &f64, p: &[f64]| mean_coupler_shift(p[0] * v, coupler, phi_dc).unwrap_or(f64::NAN) * 1e-6;
    let fit = fit_least_squares(model, &obs, &[c0])?;
    let c = fit.params[0].abs();
    let residuals = data.iter().map(|&(v, d)| d - mean_coupler_shift(c * v, coupler, phi_dc).unwrap_or(f64::NAN)).collect();
    Ok(FluxCalibration { c, c_std: fit.std_err(0), residuals, converged: fit.converged })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QubitState {
    G,
    E,
}

/// Transmission (κ/2)/(κ/2 − i(δ_p − 2χ·[e])) of the readout resonator; χ, κ, δ_p in Hz.
pub fn resonator_response(chi: f64, kappa_r: f64, delta_p: f64, state: QubitState) -> Result<Complex64, ProtocolError> {
    if !(kappa_r > 0.0) {
        return invalid("kappa_R must be positive");
    }
    let center = match state {
        QubitState::G => 0.0,
        QubitState::E => 2.0 * chi,
    };
    let half = kappa_r / 2.0;
    Ok(Complex64::new(half, 0.0) / Complex64::new(half, -(delta_p - center)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateLabel {
    G,
    E,
    F,
    Unknown,
}

impl StateLabel {
    fn as_str(&self) -> &'static str {
        match self {
            StateLabel::G => "g",
            StateLabel::E => "e",
            StateLabel::F => "f",
            StateLabel::Unknown => "unknown",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "g" => Some(StateLabel::G),
            "e" => Some(StateLabel::E),
            "f" => Some(StateLabel::F),
            "unknown" => Some(StateLabel::Unknown),
            _ => None,
        }
    }
}

/// Integrated single-shot IQ points (arbitrary units).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotSet {
    pub shots: Vec<[f64; 2]>,
    pub label: StateLabel,
    #[serde(default)]
    pub seed: Option<RngStream>,
}

impl ShotSet {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.shots.is_empty() {
            return invalid("shot set is empty");
        }
        if !self.shots.iter().all(|s| s[0].is_finite() && s[1].is_finite()) {
            return invalid("shots must be finite");
        }
        Ok(())
    }

    /// CSV with header `I,Q,label`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), ProtocolError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["I", "Q", "label"]).map_err(|e| ProtocolError::Io(e.to_string()))?;
        for s in &self.shots {
            w.write_record([format!("{:.16e}", s[0]), format!("{:.16e}", s[1]), self.label.as_str().to_string()])
                .map_err(|e| ProtocolError::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| ProtocolError::Io(e.to_string()))
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, ProtocolError> {
        let mut r = csv::Reader::from_reader(reader);
        let mut shots = Vec::new();
        let mut label = None;
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| ProtocolError::Io(e.to_string()))?;
            if rec.len() != 3 {
                return invalid(format!("row {}: expected 3 columns", line + 2));
            }
            let num = |k: usize| rec[k].trim().parse::<f64>().map_err(|_| ProtocolError::InvalidInput(format!("row {}: bad number '{}'", line + 2, &rec[k])));
            shots.push([num(0)?, num(1)?]);
            let l = StateLabel::parse(&rec[2]).ok_or_else(|| ProtocolError::InvalidInput(format!("row {}: bad label '{}'", line + 2, &rec[2])))?;
            match label {
                None => label = Some(l),
                Some(prev) if prev != l => label = Some(StateLabel::Unknown),
                _ => {}
            }
        }
        let set = ShotSet { shots, label: label.unwrap_or(StateLabel::Unknown), seed: None };
        set.validate()?;
        Ok(set)
    }
}

/// Qubit decay during readout: an |e⟩ shot whose exponential decay time falls before
/// τ_meas/2 is drawn from the |g⟩ component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutDecay {
    /// Γ₁ (Hz, cyclic).
    pub gamma1: f64,
    pub tau_meas: f64,
}

impl ReadoutDecay {
    /// e^{−τΓ₁/2}.
    pub fn survival(&self) -> f64 {
        (-2.0 * PI * self.gamma1 * self.tau_meas / 2.0).exp()
    }
}

/// Ground truth of the synthetic IQ distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotModel {
    pub centers: [[f64; 2]; 3],
    pub sigma: f64,
    #[serde(default)]
    pub decay: Option<ReadoutDecay>,
}

/// F_overlap = Φ(d/2σ) for two isotropic Gaussians at distance d.
pub fn overlap_fidelity(distance: f64, sigma: f64) -> f64 {
    1.0 - 0.5 * libm::erfc(distance / (2.0 * sigma) / 2f64.sqrt())
}

/// Tail probability Q(x) = 1 − Φ(x).
pub fn gaussian_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x / 2f64.sqrt())
}

impl ShotModel {
    /// Paper-matched readout: unit σ, |g⟩–|e⟩ distance set by F_overlap = 95.0 %, direction
    /// along S21(e) − S21(g) at the midpoint probe; |f⟩ off-axis; Q1 Γ₁ and τ_meas = 10 µs.
    pub fn fixture() -> Self {
        use crate::circuit::fixtures as chip;
        let chi = -0.525e6;
        let kappa = chip::KAPPA_R;
        let probe = chi;
        let sg = resonator_response(chi, kappa, probe, QubitState::G).expect("kappa > 0");
        let se = resonator_response(chi, kappa, probe, QubitState::E).expect("kappa > 0");
        let diff = se - sg;
        let distance = 2.0 * 1.644_853_626_951_472_2;
        let u = diff / diff.norm();
        let e = [distance * u.re, distance * u.im];
        let f = [e[0] * 0.5 - 2.8 * u.im, e[1] * 0.5 + 2.8 * u.re];
        Self { centers: [[0.0, 0.0], e, f], sigma: 1.0, decay: Some(ReadoutDecay { gamma1: chip::GAMMA1_Q1, tau_meas: 10e-6 }) }
    }
}

/// Draws `n_shots` IQ points from the Gaussian mixture weighted by (P_g, P_e, P_f).
pub fn generate_shots(populations: &PopulationVector, truth: &ShotModel, n_shots: usize, seed: RngStream) -> Result<ShotSet, ProtocolError> {
    let w = [populations.p_g, populations.p_e, populations.p_f];
    if !w.iter().all(|p| is_prob(*p)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return invalid("populations (P_g, P_e, P_f) must be probabilities summing to 1");
    }
    if n_shots == 0 {
        return invalid("n_shots must be >= 1");
    }
    if !(truth.sigma > 0.0) {
        return invalid("sigma must be positive");
    }
    let mut rng = seed.rng();
    let normal = Normal::new(0.0, truth.sigma).expect("sigma > 0");
    let decay = match truth.decay {
        Some(d) if d.gamma1 > 0.0 => Some((Exp::new(2.0 * PI * d.gamma1).expect("rate > 0"), d.tau_meas / 2.0)),
        _ => None,
    };
    let mut shots = Vec::with_capacity(n_shots);
    for _ in 0..n_shots {
        let u: f64 = rng.random();
        let mut k = if u < w[0] { 0 } else if u < w[0] + w[1] { 1 } else { 2 };
        if k == 1 {
            if let Some((exp, half)) = &decay {
                if exp.sample(&mut rng) < *half {
                    k = 0;
                }
            }
        }
        let c = truth.centers[k];
        shots.push([c[0] + normal.sample(&mut rng), c[1] + normal.sample(&mut rng)]);
    }
    let label = match w {
        [g, _, _] if g == 1.0 => StateLabel::G,
        [_, e, _] if e == 1.0 => StateLabel::E,
        [_, _, f] if f == 1.0 => StateLabel::F,
        _ => StateLabel::Unknown,
    };
    Ok(ShotSet { shots, label, seed: Some(seed) })
}

fn gauss_density(x: &[f64; 2], c: &[f64; 2], sigma: f64) -> f64 {
    let r2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
    (-r2 / (2.0 * sigma * sigma)).exp() / (2.0 * PI * sigma * sigma)
}

/// Maximum-likelihood mixture weights for fixed components; when `free` is given, that
/// component's center is fitted as well.
fn mixture_fit(shots: &[[f64; 2]], centers: &mut [[f64; 2]], sigma: f64, free: Option<usize>) -> Vec<f64> {
    let k = centers.len();
    let mut w = vec![1.0 / k as f64; k];
    for _ in 0..2000 {
        let mut acc_w = vec![0.0; k];
        let mut acc_x = [0.0; 2];
        for x in shots {
            let dens: Vec<f64> = (0..k).map(|j| w[j] * gauss_density(x, &centers[j], sigma)).collect();
            let total: f64 = dens.iter().sum();
            if total <= 0.0 {
                continue;
            }
            for j in 0..k {
                acc_w[j] += dens[j] / total;
            }
            if let Some(f) = free {
                let r = dens[f] / total;
                acc_x[0] += r * x[0];
                acc_x[1] += r * x[1];
            }
        }
        let n = shots.len() as f64;
        let new_w: Vec<f64> = acc_w.iter().map(|a| a / n).collect();
        let mut change = new_w.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if let Some(f) = free {
            if acc_w[f] > 0.0 {
                let nc = [acc_x[0] / acc_w[f], acc_x[1] / acc_w[f]];
                change = change.max(((nc[0] - centers[f][0]).abs() + (nc[1] - centers[f][1]).abs()) / sigma);
                centers[f] = nc;
            }
        }
        w = new_w;
        if change < 1e-10 {
            break;
        }
    }
    w
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn median_center(shots: &[[f64; 2]]) -> [f64; 2] {
    [median(shots.iter().map(|s| s[0]).collect()), median(shots.iter().map(|s| s[1]).collect())]
}

/// Single isotropic Gaussian: center and σ from the shots within 3σ, corrected for the
/// truncation of the radial distribution.
fn fit_single_gaussian(shots: &[[f64; 2]]) -> ([f64; 2], f64) {
    let mut center = median_center(shots);
    let r2: Vec<f64> = shots.iter().map(|s| (s[0] - center[0]).powi(2) + (s[1] - center[1]).powi(2)).collect();
    // r²/2σ² ~ Exp(1), whose median is ln 2
    let mut sigma = (median(r2) / (2.0 * 2f64.ln())).sqrt();
    let cut = 4.5_f64;
    let trunc = 1.0 - cut * (-cut).exp() / (1.0 - (-cut).exp());
    for _ in 0..200 {
        let inside: Vec<&[f64; 2]> = shots
            .iter()
            .filter(|s| (s[0] - center[0]).powi(2) + (s[1] - center[1]).powi(2) < 2.0 * cut * sigma * sigma)
            .collect();
        let n = inside.len() as f64;
        let nc = [inside.iter().map(|s| s[0]).sum::<f64>() / n, inside.iter().map(|s| s[1]).sum::<f64>() / n];
        let mean_r2 = inside.iter().map(|s| (s[0] - nc[0]).powi(2) + (s[1] - nc[1]).powi(2)).sum::<f64>() / n;
        let ns = (mean_r2 / (2.0 * trunc)).sqrt();
        let change = ((nc[0] - center[0]).abs() + (nc[1] - center[1]).abs() + (ns - sigma).abs()) / sigma;
        center = nc;
        sigma = ns;
        if change < 1e-12 {
            break;
        }
    }
    (center, sigma)
}

/// Three-component readout model and its calibration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutClassifier {
    pub centers: [[f64; 2]; 3],
    pub sigma: f64,
    /// Fitted heights h_i of F(x, y) per calibration set (rows g, e, f preparations).
    pub heights: [[f64; 3]; 3],
    /// Row-stochastic: confusion[prepared][fitted component].
    pub confusion: [[f64; 3]; 3],
    /// Nearest-center assignment probabilities: assignment[prepared][assigned].
    pub assignment: [[f64; 3]; 3],
}

impl ReadoutClassifier {
    pub fn to_json(&self) -> Result<String, ProtocolError> {
        serde_json::to_string_pretty(self).map_err(|e| ProtocolError::Io(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self, ProtocolError> {
        let c: Self = serde_json::from_str(s).map_err(|e| ProtocolError::Io(e.to_string()))?;
        if !(c.sigma > 0.0) {
            return invalid("classifier sigma must be positive");
        }
        Ok(c)
    }

    pub fn assign(&self, x: &[f64; 2]) -> usize {
        nearest(x, &self.centers)
    }

    /// Mixture weights of a shot set with all components fixed.
    pub fn raw_fractions(&self, shots: &[[f64; 2]]) -> [f64; 3] {
        let mut centers = self.centers;
        let w = mixture_fit(shots, &mut centers, self.sigma, None);
        [w[0], w[1], w[2]]
    }
}

fn nearest(x: &[f64; 2], centers: &[[f64; 2]]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (k, c) in centers.iter().enumerate() {
        let d = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
        if d < best.0 {
            best = (d, k);
        }
    }
    best.1
}

/// Sequential calibration: |g⟩ center and σ, then the |e⟩ and |f⟩ centers at fixed σ, then
/// height-only three-component fits of each set for the confusion matrix.
pub fn calibrate_classifier(shots_g: &ShotSet, shots_e: &ShotSet, shots_f: &ShotSet) -> Result<ReadoutClassifier, ProtocolError> {
    for s in [shots_g, shots_e, shots_f] {
        s.validate()?;
        if s.shots.len() < 1000 {
            return invalid("each calibration set needs >= 1000 shots");
        }
    }
    let (cg, sigma) = fit_single_gaussian(&shots_g.shots);
    let mut two = [cg, median_center(&shots_e.shots)];
    mixture_fit(&shots_e.shots, &mut two, sigma, Some(1));
    let mut three = [cg, two[1], median_center(&shots_f.shots)];
    mixture_fit(&shots_f.shots, &mut three, sigma, Some(2));
    let centers = three;

    let mut heights = [[0.0; 3]; 3];
    let mut confusion = [[0.0; 3]; 3];
    let mut assignment = [[0.0; 3]; 3];
    for (i, set) in [shots_g, shots_e, shots_f].iter().enumerate() {
        let mut cs = centers;
        let w = mixture_fit(&set.shots, &mut cs, sigma, None);
        let n = set.shots.len() as f64;
        for j in 0..3 {
            confusion[i][j] = w[j];
            heights[i][j] = w[j] * n / (2.0 * PI * sigma * sigma);
        }
        let total: f64 = confusion[i].iter().sum();
        for j in 0..3 {
            confusion[i][j] /= total;
        }
        for x in &set.shots {
            assignment[i][nearest(x, &centers)] += 1.0 / n;
        }
    }
    let m = Matrix3::from_fn(|i, j| confusion[i][j]);
    if m.determinant().abs() < 1e-6 {
        return Err(ProtocolError::SingularConfusion);
    }
    Ok(ReadoutClassifier { centers, sigma, heights, confusion, assignment })
}

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationEstimate {
    pub populations: PopulationVector,
    /// Mixture weights before confusion correction.
    pub raw: [f64; 3],
    /// Euclidean distance moved by the simplex projection.
    pub clamp_correction: f64,
}

/// Raw mixture weights corrected by the inverse confusion matrix, projected onto the simplex.
pub fn estimate_populations(classifier: &ReadoutClassifier, shots: &ShotSet) -> Result<PopulationEstimate, ProtocolError> {
    shots.validate()?;
    let raw = classifier.raw_fractions(&shots.shots);
    let m = Matrix3::from_fn(|i, j| classifier.confusion[i][j]);
    // measured_j = Σ_i p_i·confusion[i][j]
    let p = m.transpose().lu().solve(&Vector3::new(raw[0], raw[1], raw[2])).ok_or(ProtocolError::SingularConfusion)?;
    let proj = project_to_simplex(p.as_slice());
    let clamp_correction = p.iter().zip(&proj).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Ok(PopulationEstimate { populations: PopulationVector::new(proj[0], proj[1], proj[2]), raw, clamp_correction })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentFidelity {
    /// [P(g|g) + P(e|e)]/2 from nearest-center assignment of the labeled shots.
    pub f_meas: f64,
    /// Φ(d/2σ) from the fitted |g⟩, |e⟩ Gaussians.
    pub f_overlap: f64,
    /// e^{−τ_meas Γ₁/2}.
    pub f_decay: Option<f64>,
    /// F_overlap·F_decay.
    pub budget: Option<f64>,
}

pub fn assignment_fidelity(shots_g: &ShotSet, shots_e: &ShotSet, classifier: &ReadoutClassifier, decay: Option<ReadoutDecay>) -> Result<AssignmentFidelity, ProtocolError> {
    shots_g.validate()?;
    shots_e.validate()?;
    let ge = [classifier.centers[0], classifier.centers[1]];
    let frac = |set: &ShotSet, k: usize| set.shots.iter().filter(|x| nearest(x, &ge) == k).count() as f64 / set.shots.len() as f64;
    let f_meas = 0.5 * (frac(shots_g, 0) + frac(shots_e, 1));
    let d = ((ge[1][0] - ge[0][0]).powi(2) + (ge[1][1] - ge[0][1]).powi(2)).sqrt();
    let f_overlap = overlap_fidelity(d, classifier.sigma);
    let f_decay = decay.map(|d| d.survival());
    Ok(AssignmentFidelity { f_meas, f_overlap, f_decay, budget: f_decay.map(|f| f * f_overlap) })
}

/// ε = (1 − λ_i/λ_b)(d − 1)/d; `negative` flags λ_i > λ_b.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterleavedEstimate {
    pub epsilon: f64,
    pub negative: bool,
}

pub fn interleaved_rb_gate_error(lambda_b: f64, lambda_i: f64, d: u32) -> Result<InterleavedEstimate, ProtocolError> {
    if !(lambda_b > 0.0 && lambda_b <= 1.0) || !(lambda_i > 0.0) || d < 2 {
        return invalid("need 0 < λ_b <= 1, λ_i > 0 and d >= 2");
    }
    let d = d as f64;
    let epsilon = (1.0 - lambda_i / lambda_b) * (d - 1.0) / d;
    Ok(InterleavedEstimate { epsilon, negative: epsilon < 0.0 })
}

/// Number-conserving two-transmon + coupler model (Q1 ⊗ Q2 ⊗ C, C truncated to two levels)
/// restricted to a fixed excitation number.
struct ExcitationBlock {
    states: Vec<[usize; 3]>,
    static_energy: Vec<f64>,
    couplings: Vec<(usize, usize, f64)>,
}

impl ExcitationBlock {
    fn new(circuit: &CircuitSpec, n: usize) -> Result<Self, ProtocolError> {
        let q1 = circuit.element("Q1").map_err(|e| ProtocolError::InvalidInput(e.to_string()))?;
        let q2 = circuit.element("Q2").map_err(|e| ProtocolError::InvalidInput(e.to_string()))?;
        if !circuit.elements.iter().any(|e| e.kind == ElementKind::Coupler) {
            return invalid("circuit has no coupler");
        }
        let levels = [q1.levels.min(3), q2.levels.min(3), 2];
        let mut states = Vec::new();
        for a in 0..levels[0] {
            for b in 0..levels[1] {
                for cc in 0..levels[2] {
                    if a + b + cc == n {
                        states.push([a, b, cc]);
                    }
                }
            }
        }
        let e = |f: f64, alpha: f64, k: usize| k as f64 * f + alpha * (k * k.saturating_sub(1)) as f64 / 2.0;
        let static_energy = states.iter().map(|s| e(q1.frequency, q1.anharmonicity, s[0]) + e(q2.frequency, q2.anharmonicity, s[1])).collect();
        let g = [
            (0, 1, circuit.coupling("Q1", "Q2")),
            (0, 2, circuit.coupling("Q1", "C")),
            (1, 2, circuit.coupling("Q2", "C")),
        ];
        let mut couplings = Vec::new();
        for (i, si) in states.iter().enumerate() {
            for (j, sj) in states.iter().enumerate().skip(i + 1) {
                for &(a, b, gab) in &g {
                    // −g(a†b + ab†): one quantum moves from b to a or back
                    for (x, y) in [(a, b), (b, a)] {
                        let mut t = *sj;
                        if t[y] == 0 {
                            continue;
                        }
                        let amp = (t[y] as f64).sqrt() * ((t[x] + 1) as f64).sqrt();
                        t[y] -= 1;
                        t[x] += 1;
                        if &t == si {
                            couplings.push((i, j, -gab * amp));
                        }
                    }
                }
            }
        }
        Ok(Self { states, static_energy, couplings })
    }

    fn index(&self, s: [usize; 3]) -> usize {
        self.states.iter().position(|x| *x == s).expect("state in block")
    }

    /// H(t)/ħ with the energy `reference` (Hz) removed, in rad/s.
    fn hamiltonian(&self, omega_c: f64, reference: f64) -> ComplexMatrix {
        let n = self.states.len();
        let mut h = zeros(n);
        for (k, s) in self.states.iter().enumerate() {
            h[(k, k)] = c(2.0 * PI * (self.static_energy[k] + s[2] as f64 * omega_c - reference), 0.0);
        }
        for &(i, j, g) in &self.couplings {
            h[(i, j)] = c(2.0 * PI * g, 0.0);
            h[(j, i)] = c(2.0 * PI * g, 0.0);
        }
        h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CzOptions {
    /// Longest drive duration searched for one full oscillation (s).
    pub max_duration: f64,
    /// Integration step as a fraction of the drive period.
    pub step_fraction: f64,
    pub samples: usize,
}

impl Default for CzOptions {
    fn default() -> Self {
        Self { max_duration: 1.5e-6, step_fraction: 1.0 / 64.0, samples: 300 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CzPoint {
    pub omega_d: f64,
    /// Duration of one full |ee⟩ population oscillation (s), if found.
    pub duration: Option<f64>,
    /// Conditional phase φ_ee − φ_ge − φ_eg + φ_gg in (−π, π] after `duration`.
    pub phase: Option<f64>,
    /// Fitted |ee⟩→|fg⟩ transfer amplitude.
    pub amplitude: f64,
    /// |ee⟩ population after `duration`.
    pub p_ee_return: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CzCalibration {
    pub points: Vec<CzPoint>,
    /// (ω_D, τ) where the conditional phase crosses π, by linear interpolation.
    pub operating_point: Option<(f64, f64)>,
    /// Dressed |ee⟩ − |fg⟩ splitting at ω̄_C divided by k (Hz).
    pub predicted_resonance: f64,
}

struct CzModel {
    single: ExcitationBlock,
    double: ExcitationBlock,
    coupler: CouplerSpec,
    ref_eg: f64,
    ref_ge: f64,
    ref_ee: f64,
}

impl CzModel {
    fn new(circuit: &CircuitSpec) -> Result<Self, ProtocolError> {
        let single = ExcitationBlock::new(circuit, 1)?;
        let double = ExcitationBlock::new(circuit, 2)?;
        let ref_eg = single.static_energy[single.index([1, 0, 0])];
        let ref_ge = single.static_energy[single.index([0, 1, 0])];
        let ref_ee = double.static_energy[double.index([1, 1, 0])];
        Ok(Self { single, double, coupler: circuit.coupler, ref_eg, ref_ge, ref_ee })
    }

    fn evolve(&self, block: &ExcitationBlock, start: [usize; 3], reference: f64, drive: &DriveSpec, times: &[f64]) -> Result<Vec<ComplexVector>, ProtocolError> {
        let coupler = self.coupler;
        let d = drive.clone();
        let h = |t: f64| block.hamiltonian(coupler_frequency(d.flux(t), &coupler), reference);
        let period = 1.0 / drive.omega_d;
        let mut spread: f64 = 0.0;
        for n in 0..32 {
            let m = h(period * n as f64 / 32.0);
            let radius = |i: usize| (0..m.ncols()).filter(|j| *j != i).map(|j| m[(i, j)].norm()).sum::<f64>();
            let hi = (0..m.nrows()).map(|i| m[(i, i)].re + radius(i)).fold(f64::NEG_INFINITY, f64::max);
            let lo = (0..m.nrows()).map(|i| m[(i, i)].re - radius(i)).fold(f64::INFINITY, f64::min);
            spread = spread.max(hi - lo);
        }
        let steps_per_period = (period * spread * 25.0 / (2.0 * PI)).ceil().max(64.0);
        let step = period / steps_per_period;
        let i0 = block.index(start);
        let psi0 = basis_ket(block.states.len(), i0);
        Ok(propagate_ket_sampled(h, &psi0, times, step, Tolerances::default())?)
    }

    fn p_ee(&self, drive: &DriveSpec, times: &[f64]) -> Result<Vec<f64>, ProtocolError> {
        let i = self.double.index([1, 1, 0]);
        Ok(self.evolve(&self.double, [1, 1, 0], self.ref_ee, drive, times)?.iter().map(|s| s[i].norm_sqr()).collect())
    }

    /// Conditional phase and |ee⟩ return population after `t`.
    fn phase_at(&self, drive: &DriveSpec, t: f64) -> Result<(f64, f64), ProtocolError> {
        let diag = |block: &ExcitationBlock, s: [usize; 3], r: f64| -> Result<Complex64, ProtocolError> {
            let out = self.evolve(block, s, r, drive, &[t])?;
            Ok(out[0][block.index(s)])
        };
        let ee = diag(&self.double, [1, 1, 0], self.ref_ee)?;
        let ge = diag(&self.single, [0, 1, 0], self.ref_ge)?;
        let eg = diag(&self.single, [1, 0, 0], self.ref_eg)?;
        // frame references cancel: E_ee − E_ge − E_eg = 0 for bare levels
        let residual = 2.0 * PI * (self.ref_ee - self.ref_ge - self.ref_eg) * t;
        let z = ee * ge.conj() * eg.conj() * Complex64::from_polar(1.0, -residual);
        Ok((z.arg(), ee.norm_sqr()))
    }

    /// Dressed ee − fg splitting with the coupler parked at `omega_c`.
    fn dressed_splitting(&self, omega_c: f64) -> f64 {
        let h = self.double.hamiltonian(omega_c, self.ref_ee);
        let (vals, vecs) = hermitian_eigen(&h);
        let overlap = |s: [usize; 3]| {
            let i = self.double.index(s);
            (0..vals.len()).max_by(|a, b| vecs[(i, *a)].norm_sqr().total_cmp(&vecs[(i, *b)].norm_sqr())).expect("non-empty")
        };
        (vals[overlap([1, 1, 0])] - vals[overlap([2, 0, 0])]) / (2.0 * PI)
    }
}

/// P_ee(ω_D, t) with both qubits excited at t = 0.
pub fn cz_chevron(circuit: &CircuitSpec, drive: &DriveSpec, omega_ds: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>, ProtocolError> {
    let model = CzModel::new(circuit)?;
    omega_ds
        .iter()
        .map(|&w| {
            let d = DriveSpec { omega_d: w, ..drive.clone() };
            d.validate()?;
            model.p_ee(&d, times)
        })
        .collect()
}

/// Dressed |ee⟩↔|fg⟩ resonance k·ω_D at the mean coupler frequency (Hz, per harmonic).
pub fn cz_predicted_resonance(circuit: &CircuitSpec, drive: &DriveSpec) -> Result<f64, ProtocolError> {
    let model = CzModel::new(circuit)?;
    let spectrum = fourier_decompose(&DriveSpec { omega_d: drive.omega_d.max(1.0), ..drive.clone() }, &circuit.coupler, drive.k as usize)?.numerical;
    Ok(model.dressed_splitting(spectrum.omega_bar_c).abs() / drive.k as f64)
}

/// Generalized Rabi fit of the |ee⟩ population: returns (transfer amplitude, Ω in rad/s).
pub fn cz_oscillation(circuit: &CircuitSpec, drive: &DriveSpec, g_guess: f64, opts: CzOptions) -> Result<(f64, f64), ProtocolError> {
    let model = CzModel::new(circuit)?;
    oscillation(&model, drive, g_guess, opts)
}

fn oscillation(model: &CzModel, drive: &DriveSpec, g_guess: f64, opts: CzOptions) -> Result<(f64, f64), ProtocolError> {
    let period = 1.0 / drive.omega_d;
    let n_periods = (opts.max_duration / period).ceil() as usize;
    let stride = n_periods.div_ceil(opts.samples).max(1);
    let times: Vec<f64> = (0..=n_periods / stride).map(|n| (n * stride) as f64 * period).collect();
    let p = model.p_ee(drive, &times)?;
    let transfer: Vec<f64> = p.iter().map(|x| 1.0 - x).collect();
    Ok(fit_rabi_oscillation(&times, &transfer, 2.0 * 2.0 * PI * g_guess.abs().max(1e4))?)
}

/// Sweeps ω_D; at each point finds the duration of one full |ee⟩ oscillation and the
/// conditional phase accumulated over it.
pub fn cz_conditional_phase(circuit: &CircuitSpec, drive: &DriveSpec, omega_ds: &[f64], g_guess: f64, opts: CzOptions) -> Result<CzCalibration, ProtocolError> {
    drive.validate()?;
    let model = CzModel::new(circuit)?;
    let mut points = Vec::with_capacity(omega_ds.len());
    for &w in omega_ds {
        let d = DriveSpec { omega_d: w, ..drive.clone() };
        d.validate()?;
        let mut point = CzPoint { omega_d: w, duration: None, phase: None, amplitude: 0.0, p_ee_return: None };
        if let Ok((amp, omega)) = oscillation(&model, &d, g_guess, opts) {
            point.amplitude = amp;
            let tau = 2.0 * PI / omega;
            if amp > 0.05 && tau <= opts.max_duration {
                let (phase, back) = model.phase_at(&d, tau)?;
                point.duration = Some(tau);
                point.phase = Some(phase);
                point.p_ee_return = Some(back);
            }
        }
        points.push(point);
    }
    let operating_point = pi_crossing(&points);
    Ok(CzCalibration { points, operating_point, predicted_resonance: cz_predicted_resonance(circuit, drive)? })
}

/// First sign change of sin(φ) between neighbouring valid points with |φ| near π.
fn pi_crossing(points: &[CzPoint]) -> Option<(f64, f64)> {
    // distance to π on the circle, signed: φ − π wrapped to (−π, π]
    let off = |p: f64| {
        let x = p - PI;
        (x + PI).rem_euclid(2.0 * PI) - PI
    };
    for pair in points.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let (Some(pa), Some(pb), Some(ta), Some(tb)) = (a.phase, b.phase, a.duration, b.duration) else { continue };
        let (oa, ob) = (off(pa), off(pb));
        if oa == 0.0 {
            return Some((a.omega_d, ta));
        }
        if oa * ob < 0.0 && (oa - ob).abs() < PI {
            let s = oa / (oa - ob);
            return Some((a.omega_d + s * (b.omega_d - a.omega_d), ta + s * (tb - ta)));
        }
    }
    None
}

pub mod fixtures {
    use super::*;
    use crate::circuit::fixtures as chip;
    use crate::floquet::{effective_coupling, manifold, Transition};

    pub const CZ_PHI_DC: f64 = 1.0;
    /// One full oscillation in τ_CZ = 339 ns: g̃ = 1/(2τ_CZ).
    pub const CZ_G_TILDE: f64 = 1.0 / (2.0 * 339e-9);

    /// Q1, Q2, C (two-level) circuit for the CZ model.
    pub fn cz_circuit() -> CircuitSpec {
        let mut c = chip::circuit(3, 2, 2).at_flux(CZ_PHI_DC);
        c.elements.retain(|e| e.name != "R");
        c.couplings.retain(|cp| cp.a != "R" && cp.b != "R");
        c
    }

    /// k = 1 drive whose amplitude gives |g̃| = CZ_G_TILDE from the Bessel estimate at the
    /// bare |ee⟩↔|fg⟩ splitting.
    pub fn cz_drive(circuit: &CircuitSpec) -> Result<DriveSpec, ProtocolError> {
        let omega_c = coupler_frequency(CZ_PHI_DC, &circuit.coupler);
        let m = manifold(circuit, Transition::ControlledZ, omega_c)?;
        let omega_d = m.transition().abs();
        let g_at = |a: f64| -> Result<f64, ProtocolError> {
            let d = DriveSpec { phi_dc: CZ_PHI_DC, a_d: a, omega_d, k: 1, envelope: None };
            let s = fourier_decompose(&d, &circuit.coupler, 1)?.numerical;
            Ok(effective_coupling(m.g_ac, m.g_bc, 1, omega_d, &s)?.value.abs())
        };
        let (mut lo, mut hi) = (1e-4, 0.5);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if g_at(mid)? < CZ_G_TILDE {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(DriveSpec { phi_dc: CZ_PHI_DC, a_d: 0.5 * (lo + hi), omega_d, k: 1, envelope: None })
    }
}
