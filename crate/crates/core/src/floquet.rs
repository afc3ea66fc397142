//! Drive-frame theory of the flux-modulated coupler.
//!
//! The coupler is driven as φ(t) = φ_dc + a_D sin(ω_D t), so with y = ω_D t − π/2
//! ω_C(t) = ω̄_C + Σ_m D_m cos(m y).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::circuit::{coupler_frequency, CircuitError, CircuitSpec, CouplerSpec};
use crate::dynamics::EnvelopeSpec;
use crate::numerics::linalg::{basis_ket, c, zeros, ComplexMatrix};
use crate::numerics::{bessel_j, fit_least_squares, propagate_ket_sampled, NumericsError, Observation, Tolerances};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum FloquetError {
    #[error("invalid drive: {0}")]
    InvalidDrive(String),
    #[error("flux excursion reaches E_J = 0 (d = 0 and the drive crosses φ = π/2 mod π)")]
    JosephsonZero,
    #[error("harmonic k = {0} unsupported here (closed forms exist for k = 2 only)")]
    UnsupportedHarmonic(u32),
    #[error("coupler detuning Δ̃_C = 0; Schrieffer-Wolff elimination is singular")]
    SingularDetuning,
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("time-domain fit failed: {0}")]
    Fit(String),
}

pub const DEFAULT_M_MAX: usize = 4;
const DFT_POINTS: usize = 512;

/// Flux drive: static offset φ_dc, amplitude a_D (rad), drive frequency ω_D/2π (Hz), harmonic k.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveSpec {
    pub phi_dc: f64,
    pub a_d: f64,
    pub omega_d: f64,
    pub k: u32,
    #[serde(default)]
    pub envelope: Option<EnvelopeSpec>,
}

impl DriveSpec {
    pub fn validate(&self) -> Result<(), FloquetError> {
        if !self.phi_dc.is_finite() {
            return Err(FloquetError::InvalidDrive("phi_dc must be finite".into()));
        }
        if !(self.a_d >= 0.0) || !self.a_d.is_finite() {
            return Err(FloquetError::InvalidDrive(format!("a_d must be >= 0, got {}", self.a_d)));
        }
        if !(self.omega_d > 0.0) || !self.omega_d.is_finite() {
            return Err(FloquetError::InvalidDrive(format!("omega_d must be > 0, got {}", self.omega_d)));
        }
        if !(1..=2).contains(&self.k) {
            return Err(FloquetError::InvalidDrive(format!("harmonic k must be 1 or 2, got {}", self.k)));
        }
        Ok(())
    }

    /// Instantaneous flux at time t (no envelope).
    pub fn flux(&self, t: f64) -> f64 {
        self.phi_dc + self.a_d * (2.0 * PI * self.omega_d * t).sin()
    }
}

/// Mean coupler frequency and Fourier coefficients D_1..D_M (all /2π, Hz).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveSpectrum {
    pub omega_bar_c: f64,
    pub d: Vec<f64>,
}

impl DriveSpectrum {
    /// D_m for m ≥ 1 (0 beyond the stored range).
    pub fn d_m(&self, m: usize) -> f64 {
        if m == 0 {
            return 0.0;
        }
        self.d.get(m - 1).copied().unwrap_or(0.0)
    }
}

/// Analytic derivative series and numerical transform of the same modulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierDecomposition {
    pub analytic: DriveSpectrum,
    pub numerical: DriveSpectrum,
}

impl FourierDecomposition {
    /// Largest |D_m| mismatch relative to the largest numerical |D_m| (m ≤ `m_max`).
    pub fn relative_mismatch(&self, m_max: usize) -> f64 {
        let scale = (1..=m_max).map(|m| self.numerical.d_m(m).abs()).fold(0.0, f64::max);
        if scale == 0.0 {
            return 0.0;
        }
        (1..=m_max)
            .map(|m| (self.analytic.d_m(m) - self.numerical.d_m(m)).abs())
            .fold(0.0, f64::max)
            / scale
    }
}

/// Taylor coefficients c_j = f^(j)(φ_dc)/j! of ω_C(φ) up to order `order`.
pub fn coupler_taylor(phi_dc: f64, coupler: &CouplerSpec, order: usize) -> Vec<f64> {
    // u(φ0+h) = (1+d²)/2 + (1−d²)/2 · cos(2φ0 + 2h)
    let d2 = coupler.d * coupler.d;
    let a = 0.5 * (1.0 + d2);
    let b = 0.5 * (1.0 - d2);
    let (s0, c0) = (2.0 * phi_dc).sin_cos();
    let mut u = vec![0.0; order + 1];
    let mut fact = 1.0;
    for j in 0..=order {
        if j > 0 {
            fact *= j as f64;
        }
        let p = 2f64.powi(j as i32) / fact;
        // d^j/dh^j cos(2φ0+2h) at h=0 = 2^j cos(2φ0 + jπ/2)
        let deriv = match j % 4 {
            0 => c0,
            1 => -s0,
            2 => -c0,
            _ => s0,
        };
        u[j] = b * p * deriv;
    }
    u[0] += a;
    // v = u^(1/4) by the power recursion
    let alpha = 0.25;
    let mut v = vec![0.0; order + 1];
    v[0] = u[0].powf(alpha);
    for n in 1..=order {
        let mut acc = 0.0;
        for k in 1..=n {
            acc += ((alpha + 1.0) * k as f64 - n as f64) * u[k] * v[n - k];
        }
        v[n] = acc / (n as f64 * u[0]);
    }
    let scale = (8.0 * coupler.e_sigma * coupler.e_c).sqrt();
    let mut out: Vec<f64> = v.iter().map(|x| x * scale).collect();
    out[0] -= coupler.e_c;
    out
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Fourier decomposition of ω_C(φ_dc + a_D sin ω_D t): analytic derivative series with
/// derivative orders up to 2·M_max, and a direct transform of one sampled period.
pub fn fourier_decompose(drive: &DriveSpec, coupler: &CouplerSpec, m_max: usize) -> Result<FourierDecomposition, FloquetError> {
    drive.validate()?;
    coupler.validate()?;
    if m_max < drive.k as usize {
        return Err(FloquetError::InvalidDrive(format!("m_max = {m_max} below harmonic k = {}", drive.k)));
    }
    if coupler.d == 0.0 {
        // zeros of cos φ at π/2 + nπ
        let lo = drive.phi_dc - drive.a_d;
        let hi = drive.phi_dc + drive.a_d;
        let n = ((lo - PI / 2.0) / PI).ceil();
        if PI / 2.0 + n * PI <= hi {
            return Err(FloquetError::JosephsonZero);
        }
    }
    let a = drive.a_d;
    let order = 2 * m_max + 1;
    let taylor = coupler_taylor(drive.phi_dc, coupler, order);
    // derivative of order j is j!·c_j
    let deriv = |j: usize| taylor[j] * factorial(j);
    let max_deriv = 2 * m_max;

    let mut omega_bar = 0.0;
    for n in 0..=max_deriv / 2 {
        omega_bar += deriv(2 * n) * a.powi(2 * n as i32) / (4f64.powi(n as i32) * factorial(n).powi(2));
    }
    let mut d_analytic = Vec::with_capacity(m_max);
    for m in 1..=m_max {
        let mut sum = 0.0;
        if m % 2 == 0 {
            for n in m / 2..=max_deriv / 2 {
                sum += deriv(2 * n) * 2.0 * a.powi(2 * n as i32)
                    / (4f64.powi(n as i32) * factorial((2 * n - m) / 2) * factorial((2 * n + m) / 2));
            }
        } else {
            let mut n = (m - 1) / 2;
            while 2 * n + 1 <= max_deriv {
                sum += deriv(2 * n + 1) * a.powi(2 * n as i32 + 1)
                    / (4f64.powi(n as i32) * factorial((2 * n + 1 - m) / 2) * factorial((2 * n + 1 + m) / 2));
                n += 1;
            }
        }
        d_analytic.push(sum);
    }

    let samples: Vec<f64> = (0..DFT_POINTS)
        .map(|j| {
            let y = 2.0 * PI * j as f64 / DFT_POINTS as f64;
            coupler_frequency(drive.phi_dc + a * y.cos(), coupler)
        })
        .collect();
    if samples.iter().any(|f| !f.is_finite() || *f <= 0.0) {
        return Err(FloquetError::JosephsonZero);
    }
    let mean = samples.iter().sum::<f64>() / DFT_POINTS as f64;
    let d_numerical = (1..=m_max)
        .map(|m| {
            if a == 0.0 {
                return 0.0;
            }
            let s: f64 = samples
                .iter()
                .enumerate()
                .map(|(j, f)| f * (2.0 * PI * (m * j) as f64 / DFT_POINTS as f64).cos())
                .sum();
            2.0 * s / DFT_POINTS as f64
        })
        .collect();

    Ok(FourierDecomposition {
        analytic: DriveSpectrum { omega_bar_c: omega_bar, d: d_analytic },
        numerical: DriveSpectrum { omega_bar_c: mean, d: d_numerical },
    })
}

/// Coupling estimate with an optional validity warning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingEstimate {
    /// g̃/2π in Hz.
    pub value: f64,
    pub warning: Option<String>,
}

/// Real reduction of (−i)^k: the phase of odd harmonics is absorbed into the basis.
fn phase_sign(k: u32) -> f64 {
    match k % 4 {
        0 => 1.0,
        1 => -1.0,
        2 => -1.0,
        _ => 1.0,
    }
}

/// g̃ ≈ −g_iC g_jC (−i)^k/(kω_D) · J₁(D_k/kω_D), all in Hz.
pub fn effective_coupling(g_ic: f64, g_jc: f64, k: u32, omega_d: f64, spectrum: &DriveSpectrum) -> Result<CouplingEstimate, FloquetError> {
    if k == 0 {
        return Err(FloquetError::InvalidDrive("harmonic k must be positive".into()));
    }
    if !(omega_d > 0.0) {
        return Err(FloquetError::InvalidDrive("omega_d must be positive".into()));
    }
    let kw = k as f64 * omega_d;
    let dk = spectrum.d_m(k as usize);
    let value = -g_ic * g_jc * phase_sign(k) / kw * bessel_j(1, dk / kw)?;
    let warning = (dk.abs() > kw / 2.0).then(|| format!("|D_{k}| = {:.4e} Hz exceeds k·ω_D/2 = {:.4e} Hz", dk.abs(), kw / 2.0));
    Ok(CouplingEstimate { value, warning })
}

/// Transitions activated by the parametric drive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transition {
    /// |e0⟩ ↔ |g1⟩ on Q1 and R via |g0, 1_C⟩.
    Reset,
    /// |f0⟩ ↔ |e1⟩ on Q1 and R via |e0, 1_C⟩.
    LeakageRecovery,
    /// |ee⟩ ↔ |fg⟩ on Q1, Q2 via |eg, 1_C⟩.
    ControlledZ,
}

/// Three-state manifold {A, B, C}: bare energies and single-excitation matrix elements (Hz).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifold {
    pub energy_a: f64,
    pub energy_b: f64,
    /// Energy of C with the coupler at its undriven frequency.
    pub energy_c_static: f64,
    /// Bare coupler contribution to energy_c_static.
    pub coupler_frequency: f64,
    pub g_ab: f64,
    pub g_ac: f64,
    pub g_bc: f64,
}

impl Manifold {
    /// Energy of C when the coupler sits at `omega_c`.
    pub fn energy_c(&self, omega_c: f64) -> f64 {
        self.energy_c_static - self.coupler_frequency + omega_c
    }

    pub fn transition(&self) -> f64 {
        self.energy_b - self.energy_a
    }
}

/// Builds the manifold for `transition` from a circuit with elements named Q1, Q2, C, R.
pub fn manifold(circuit: &CircuitSpec, transition: Transition, omega_c: f64) -> Result<Manifold, FloquetError> {
    let q1 = circuit.element("Q1")?;
    let sqrt2 = 2f64.sqrt();
    let m = match transition {
        Transition::Reset => {
            let r = circuit.element("R")?;
            Manifold {
                energy_a: q1.frequency,
                energy_b: r.frequency,
                energy_c_static: omega_c,
                coupler_frequency: omega_c,
                g_ab: -circuit.coupling("Q1", "R"),
                g_ac: -circuit.coupling("Q1", "C"),
                g_bc: -circuit.coupling("C", "R"),
            }
        }
        Transition::LeakageRecovery => {
            let r = circuit.element("R")?;
            Manifold {
                energy_a: 2.0 * q1.frequency + q1.anharmonicity,
                energy_b: q1.frequency + r.frequency,
                energy_c_static: q1.frequency + omega_c,
                coupler_frequency: omega_c,
                g_ab: -sqrt2 * circuit.coupling("Q1", "R"),
                g_ac: -sqrt2 * circuit.coupling("Q1", "C"),
                g_bc: -circuit.coupling("C", "R"),
            }
        }
        Transition::ControlledZ => {
            let q2 = circuit.element("Q2")?;
            Manifold {
                energy_a: q1.frequency + q2.frequency,
                energy_b: 2.0 * q1.frequency + q1.anharmonicity,
                energy_c_static: q1.frequency + omega_c,
                coupler_frequency: omega_c,
                g_ab: -sqrt2 * circuit.coupling("Q1", "Q2"),
                g_ac: -circuit.coupling("Q2", "C"),
                g_bc: -sqrt2 * circuit.coupling("Q1", "C"),
            }
        }
    };
    Ok(m)
}

/// Drive-frame parameters of the {A, B, C} manifold (all /2π, Hz).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveFrame {
    pub omega_tilde_a: f64,
    pub omega_tilde_b: f64,
    pub delta_tilde_c: f64,
    pub g_tilde_ab: f64,
    pub g_tilde_ac: f64,
    pub g_tilde_bc: f64,
    pub g_tilde_prime_ab: Option<f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// J_{n,m} = J_n(D₁/ω_D)·J_m(−D₂/2ω_D).
pub fn j_nm(n: i32, m: i32, d1: f64, d2: f64, omega_d: f64) -> Result<f64, FloquetError> {
    Ok(bessel_j(n, d1 / omega_d)? * bessel_j(m, -d2 / (2.0 * omega_d))?)
}

/// k = 2 closed forms from bare manifold parameters (Hz): Δ_C = ω̄_C − E_A.
pub fn k2_closed_forms_raw(g_ab: f64, g_ac: f64, g_bc: f64, omega_d: f64, d1: f64, d2: f64, delta_c: f64) -> Result<EffectiveFrame, FloquetError> {
    let j = |n: i32, m: i32| j_nm(n, m, d1, d2, omega_d);
    let (j00, j01, j02) = (j(0, 0)?, j(0, 1)?, j(0, 2)?);
    let (j10, j11, j12) = (j(1, 0)?, j(1, 1)?, j(1, 2)?);
    let (j20, j21, j22) = (j(2, 0)?, j(2, 1)?, j(2, 2)?);
    let w = omega_d;

    let g_tilde_ac = g_ac * j00 + g_ab * g_bc / (2.0 * w) * (j02 + j21);
    let omega_tilde_a = (g_ab * g_ab / 2.0 + g_ac * g_ac * (4.0 * j10 * j11 - 2.0 * (j01 * j22 + j00 * j21))) / w;
    let g_tilde_bc = -g_bc * (j01 + j20 + j22) + g_ab * g_ac / (2.0 * w) * (-j01 + j20 + j22);
    let omega_tilde_b = (g_bc * g_bc
        * (j00 * j00 - j02 * j02 - j21 * j21 + 2.0 * (j10 * j10 - j12 * j12 - j01 * j22) + 4.0 * j11 * (j12 - j10))
        - g_ab * g_ab)
        / (2.0 * w);
    let g_tilde_ab = g_ac * g_bc / (2.0 * w)
        * (j00 * (j01 - j20) + j01 * (j02 + j21) + j02 * j22 + j20 * j21 + 2.0 * j10 * (j10 + j11 - j12) + 2.0 * j11 * j12
            - 4.0 * j11 * j11);
    let delta_tilde_c = delta_c - omega_tilde_a - omega_tilde_b;
    Ok(EffectiveFrame {
        omega_tilde_a,
        omega_tilde_b,
        delta_tilde_c,
        g_tilde_ab,
        g_tilde_ac,
        g_tilde_bc,
        g_tilde_prime_ab: None,
        warnings: Vec::new(),
    })
}

/// k = 2 drive-frame parameters for `transition` of `circuit` under `drive`.
///
/// The coupler element frequency of `circuit` is ignored; the coupler sits at
/// ω_C(φ_dc) and its mean under drive comes from the numerical Fourier transform.
pub fn k2_closed_forms(circuit: &CircuitSpec, drive: &DriveSpec, transition: Transition) -> Result<EffectiveFrame, FloquetError> {
    if drive.k != 2 {
        return Err(FloquetError::UnsupportedHarmonic(drive.k));
    }
    let spectrum = fourier_decompose(drive, &circuit.coupler, DEFAULT_M_MAX)?.numerical;
    let m = manifold(circuit, transition, coupler_frequency(drive.phi_dc, &circuit.coupler))?;
    let delta_c = m.energy_c(spectrum.omega_bar_c) - m.energy_a;
    let mut frame = k2_closed_forms_raw(m.g_ab, m.g_ac, m.g_bc, drive.omega_d, spectrum.d_m(1), spectrum.d_m(2), delta_c)?;
    if spectrum.d_m(2).abs() > drive.omega_d || spectrum.d_m(1).abs() > drive.omega_d / 2.0 {
        frame.warnings.push("Fourier coefficients outside the small-amplitude regime".into());
    }
    Ok(frame)
}

/// g̃′_AB ≈ g̃_AB − g̃_AC g̃_CB/Δ̃_C, stored in the frame and returned.
///
/// Second-order elimination of C; a warning is attached when |Δ̃_C| is not at least
/// five times every other drive-frame parameter.
pub fn schrieffer_wolff_correction(frame: &mut EffectiveFrame) -> Result<f64, FloquetError> {
    if frame.delta_tilde_c == 0.0 || !frame.delta_tilde_c.is_finite() {
        return Err(FloquetError::SingularDetuning);
    }
    let g_prime = frame.g_tilde_ab - frame.g_tilde_ac * frame.g_tilde_bc / frame.delta_tilde_c;
    let largest = [frame.omega_tilde_a, frame.omega_tilde_b, frame.g_tilde_ab, frame.g_tilde_ac, frame.g_tilde_bc]
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    if frame.delta_tilde_c.abs() <= 5.0 * largest {
        frame.warnings.push(format!(
            "|Δ̃_C| = {:.4e} Hz is not >> drive-frame couplings/shifts (max {:.4e} Hz)",
            frame.delta_tilde_c.abs(),
            largest
        ));
    }
    frame.g_tilde_prime_ab = Some(g_prime);
    Ok(g_prime)
}

/// 3×3 drive-frame matrix (Hz) with an extra detuning added to B.
pub fn drive_frame_matrix(frame: &EffectiveFrame, b_offset: f64) -> [[f64; 3]; 3] {
    [
        [frame.omega_tilde_a, frame.g_tilde_ab, frame.g_tilde_ac],
        [frame.g_tilde_ab, frame.omega_tilde_b + b_offset, frame.g_tilde_bc],
        [frame.g_tilde_ac, frame.g_tilde_bc, frame.delta_tilde_c],
    ]
}

/// k·ω_D at which A and B are resonant in the drive frame, including the second-order
/// coupler-induced shifts of A and B.
pub fn predicted_resonance(frame: &EffectiveFrame, manifold: &Manifold, k: u32) -> f64 {
    let shift_a = -frame.g_tilde_ac.powi(2) / (frame.delta_tilde_c - frame.omega_tilde_a);
    let shift_b = -frame.g_tilde_bc.powi(2) / (frame.delta_tilde_c - frame.omega_tilde_b);
    (manifold.transition() + frame.omega_tilde_b + shift_b - frame.omega_tilde_a - shift_a) / k as f64
}

/// Conversion of a lab-frame detuning to the frame of the k-th drive harmonic.
pub fn lab_to_drive_detuning(lab_detuning: f64, k: u32) -> f64 {
    k as f64 * lab_detuning
}

/// Drive-frame detuning k·ω_D − (dressed A↔B transition), dressed by the frame shifts.
pub fn drive_frame_detuning(k: u32, omega_d: f64, manifold: &Manifold, frame: &EffectiveFrame) -> f64 {
    k as f64 * omega_d - (manifold.transition() + frame.omega_tilde_b - frame.omega_tilde_a)
}

/// Readout operating point (all /2π, Hz); `delta` is in the drive frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutOperatingPoint {
    pub g_tilde_qr: f64,
    pub delta: f64,
    pub chi: f64,
    pub delta_p: f64,
}

impl ReadoutOperatingPoint {
    /// Operating point from a lab-frame detuning of the k-th harmonic.
    pub fn from_lab_detuning(g_tilde_qr: f64, lab_detuning: f64, k: u32, delta_p: f64) -> Self {
        let mut p = Self { g_tilde_qr, delta: lab_to_drive_detuning(lab_detuning, k), chi: 0.0, delta_p };
        p.chi = chi_shift(&p);
        p
    }

    /// Warning when the dispersive picture is questionable (|g̃/Δ| > 0.5).
    pub fn dispersive_warning(&self) -> Option<String> {
        (self.g_tilde_qr.abs() > 0.5 * self.delta.abs())
            .then(|| format!("|g̃/Δ| = {:.3} > 0.5: dispersive approximation not strictly valid", (self.g_tilde_qr / self.delta).abs()))
    }
}

/// Drive-induced resonator shift (|Δ| − √(4|g̃|² + Δ²))/2 in Hz; always ≤ 0.
pub fn chi_shift(point: &ReadoutOperatingPoint) -> f64 {
    let g = point.g_tilde_qr.abs();
    let d = point.delta.abs();
    let root = (4.0 * g * g + d * d).sqrt();
    // (d − root)/2 written to avoid cancellation at large |Δ|
    -2.0 * g * g / (d + root)
}

/// Parameters of the time-domain swap measurement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwapFitOptions {
    /// Number of A→B population periods to simulate.
    pub periods: f64,
    /// Maximum stroboscopic samples used in the fit.
    pub max_samples: usize,
    /// Maximum integrator step as a fraction of the drive period.
    pub step_fraction: f64,
}

impl Default for SwapFitOptions {
    fn default() -> Self {
        Self { periods: 2.0, max_samples: 400, step_fraction: 1.0 / 64.0 }
    }
}

/// Result of fitting P_B(t) = A·sin²(Ωt/2) to a simulated transfer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwapFit {
    /// Effective coupling |g̃|/2π = Ω√A/(4π) in Hz.
    pub g_fit: f64,
    pub omega_d: f64,
    pub amplitude: f64,
    /// Ω/2π in Hz.
    pub frequency: f64,
}

/// Simulates the {A, B, C} manifold with the exact modulated coupler frequency and fits
/// the stroboscopic A→B transfer at the given drive frequency.
pub fn swap_fit_at(manifold: &Manifold, drive: &DriveSpec, coupler: &CouplerSpec, g_guess: f64, opts: SwapFitOptions) -> Result<SwapFit, FloquetError> {
    drive.validate()?;
    let two_pi = 2.0 * PI;
    let e_b = two_pi * manifold.transition();
    let e_c0 = manifold.energy_c(0.0) - manifold.energy_a;
    let (g_ab, g_ac, g_bc) = (two_pi * manifold.g_ab, two_pi * manifold.g_ac, two_pi * manifold.g_bc);
    let drive_c = drive.clone();
    let coupler_c = *coupler;
    let h = move |t: f64| -> ComplexMatrix {
        let mut m = zeros(3);
        m[(1, 1)] = c(e_b, 0.0);
        m[(2, 2)] = c(two_pi * (e_c0 + coupler_frequency(drive_c.flux(t), &coupler_c)), 0.0);
        m[(0, 1)] = c(g_ab, 0.0);
        m[(1, 0)] = c(g_ab, 0.0);
        m[(0, 2)] = c(g_ac, 0.0);
        m[(2, 0)] = c(g_ac, 0.0);
        m[(1, 2)] = c(g_bc, 0.0);
        m[(2, 1)] = c(g_bc, 0.0);
        m
    };
    let period = 1.0 / drive.omega_d;
    let g_guess = g_guess.abs().max(1e3);
    let swap_period = 1.0 / (2.0 * g_guess);
    let n_periods = ((opts.periods * swap_period) / period).ceil().max(8.0) as usize;
    let stride = n_periods.div_ceil(opts.max_samples).max(1);
    let times: Vec<f64> = (0..=n_periods / stride).map(|n| (n * stride) as f64 * period).collect();
    let states = propagate_ket_sampled(h, &basis_ket(3, 0), &times, period * opts.step_fraction, Tolerances::default())?;
    let pb: Vec<f64> = states.iter().map(|s| s[1].norm_sqr()).collect();

    let (amplitude, omega) = fit_rabi_oscillation(&times, &pb, 2.0 * two_pi * g_guess)?;
    Ok(SwapFit { g_fit: omega * amplitude.max(0.0).sqrt() / (2.0 * two_pi), omega_d: drive.omega_d, amplitude, frequency: omega / two_pi })
}

/// Fit of y(t) = A·sin²(Ωt/2) to sampled populations; returns (A, Ω) with Ω in rad/s.
/// Ω is seeded from a scan over [0.2, 5]×`omega_guess` with A solved linearly.
pub fn fit_rabi_oscillation(times: &[f64], values: &[f64], omega_guess: f64) -> Result<(f64, f64), FloquetError> {
    let mut seed = (f64::INFINITY, 0.0, omega_guess);
    for i in 0..=600 {
        let omega = omega_guess * (0.2 + 4.8 * i as f64 / 600.0);
        let s: Vec<f64> = times.iter().map(|t| (0.5 * omega * t).sin().powi(2)).collect();
        let ss: f64 = s.iter().map(|x| x * x).sum();
        if ss == 0.0 {
            continue;
        }
        let amp = s.iter().zip(values).map(|(x, y)| x * y).sum::<f64>() / ss;
        let res: f64 = s.iter().zip(values).map(|(x, y)| (amp * x - y).powi(2)).sum();
        if res < seed.0 {
            seed = (res, amp, omega);
        }
    }
    let data: Vec<Observation<f64>> = times.iter().zip(values).map(|(&t, &p)| Observation::new(t * 1e6, p, 1.0)).collect();
    let model = |t: &f64, p: &[f64]| p[0] * (0.5 * p[1] * t).sin().powi(2);
    let fit = fit_least_squares(model, &data, &[seed.1, seed.2 * 1e-6])?;
    if !fit.converged {
        return Err(FloquetError::Fit("Rabi fit did not converge".into()));
    }
    Ok((fit.params[0], fit.params[1].abs() * 1e6))
}

/// Time-domain effective coupling: swap fits at the predicted resonance and at the
/// drive frequencies offset by the detuning inferred from the first fit; the fit with
/// the largest transfer amplitude is returned.
pub fn time_domain_coupling(manifold: &Manifold, drive: &DriveSpec, coupler: &CouplerSpec, omega_d_guess: f64, g_guess: f64) -> Result<SwapFit, FloquetError> {
    let opts = SwapFitOptions::default();
    let at = |w: f64| {
        let d = DriveSpec { omega_d: w, ..drive.clone() };
        swap_fit_at(manifold, &d, coupler, g_guess, opts)
    };
    let first = at(omega_d_guess)?;
    let omega = 2.0 * PI * first.frequency;
    let delta = omega * (1.0 - first.amplitude.clamp(0.0, 1.0)).sqrt() / (2.0 * PI);
    let mut best = first;
    if delta > 1e-3 * first.frequency {
        for sign in [-1.0, 1.0] {
            let w = omega_d_guess + sign * delta / drive.k as f64;
            if let Ok(fit) = at(w) {
                if fit.amplitude > best.amplitude {
                    best = fit;
                }
            }
        }
    }
    Ok(best)
}

/// Drive amplitude a_D giving |g̃′_AB| = `target` (Hz) at the bare k = 2 resonance,
/// found by bisection on [lo, hi].
pub fn fit_drive_amplitude(circuit: &CircuitSpec, phi_dc: f64, transition: Transition, target: f64, lo: f64, hi: f64) -> Result<f64, FloquetError> {
    let m = manifold(circuit, transition, coupler_frequency(phi_dc, &circuit.coupler))?;
    let omega_d = m.transition() / 2.0;
    let g_at = |a: f64| -> Result<f64, FloquetError> {
        let drive = DriveSpec { phi_dc, a_d: a, omega_d, k: 2, envelope: None };
        let mut frame = k2_closed_forms(circuit, &drive, transition)?;
        Ok(schrieffer_wolff_correction(&mut frame)?.abs() - target)
    };
    let (mut a, mut b) = (lo, hi);
    let (mut fa, fb) = (g_at(a)?, g_at(b)?);
    if fa.signum() == fb.signum() {
        return Err(FloquetError::Fit(format!("target coupling not bracketed by a_D in [{lo}, {hi}]")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let fm = g_at(mid)?;
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
        if (b - a).abs() < 1e-14 {
            break;
        }
    }
    Ok(0.5 * (a + b))
}

/// Fixture operating points.
pub mod fixtures {
    use super::*;

    /// Reset: static flux placing the coupler near 4.23 GHz.
    pub const RESET_PHI_DC: f64 = 1.0;
    /// Reset drive amplitude giving |g̃′_QR| = 2.07 MHz at RESET_PHI_DC.
    pub const RESET_A_D: f64 = 0.310_642_540_388_907_6;
    pub const RESET_G_TILDE: f64 = 2.07e6;
    pub const LR_G_TILDE: f64 = 0.91e6;
    pub const READOUT_G_TILDE: f64 = 2.12e6;
    pub const READOUT_LAB_DETUNING: f64 = 4.02e6;

    /// Reset drive at the bare k = 2 resonance (ω_R − ω_Q1)/2.
    pub fn reset_drive(circuit: &CircuitSpec) -> DriveSpec {
        let q1 = circuit.element("Q1").expect("fixture has Q1").frequency;
        let r = circuit.element("R").expect("fixture has R").frequency;
        DriveSpec { phi_dc: RESET_PHI_DC, a_d: RESET_A_D, omega_d: (r - q1) / 2.0, k: 2, envelope: None }
    }
}
