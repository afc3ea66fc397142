//! Time-domain models: pulse envelopes, damped two-level swaps, three-level leakage
//! recovery and Pauli transfer matrices of simulated channels.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::circuit::DecayRates;
use crate::numerics::linalg::{basis_ket, c, hermitian_eigenvalues, ket_to_density, outer, trace, zeros, ComplexMatrix, I, ONE};
use crate::numerics::{propagate_sampled, Collapse, NumericsError, Tolerances};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid envelope: {0}")]
    InvalidEnvelope(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvelopeShape {
    #[default]
    FlatTopGaussian,
}

/// Flat-top pulse with Gaussian edges. Each edge spans 2σ and is lifted so the
/// envelope starts and ends at exactly zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSpec {
    #[serde(default)]
    pub shape: EnvelopeShape,
    pub total_length: f64,
    pub sigma_rise: f64,
    pub sigma_fall: f64,
    #[serde(default = "unit_peak")]
    pub peak: f64,
}

fn unit_peak() -> f64 {
    1.0
}

impl EnvelopeSpec {
    pub fn flat_top(total_length: f64, sigma: f64) -> Self {
        Self { shape: EnvelopeShape::FlatTopGaussian, total_length, sigma_rise: sigma, sigma_fall: sigma, peak: 1.0 }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.total_length > 0.0) || !self.total_length.is_finite() {
            return Err(DynamicsError::InvalidEnvelope("total_length must be > 0".into()));
        }
        if !(self.sigma_rise >= 0.0) || !(self.sigma_fall >= 0.0) {
            return Err(DynamicsError::InvalidEnvelope("sigma must be >= 0".into()));
        }
        if 2.0 * (self.sigma_rise + self.sigma_fall) > self.total_length {
            return Err(DynamicsError::InvalidEnvelope("rise and fall edges do not fit inside total_length".into()));
        }
        if !self.peak.is_finite() {
            return Err(DynamicsError::InvalidEnvelope("peak must be finite".into()));
        }
        Ok(())
    }
}

fn lifted_edge(x: f64, sigma: f64) -> f64 {
    // x ∈ [0, 2σ] measured from the pulse boundary
    let floor = (-2.0_f64).exp();
    let g = (-(x - 2.0 * sigma).powi(2) / (2.0 * sigma * sigma)).exp();
    ((g - floor) / (1.0 - floor)).max(0.0)
}

/// Envelope value at time t; zero outside [0, total_length].
pub fn envelope_value(t: f64, env: &EnvelopeSpec) -> f64 {
    let len = env.total_length;
    if !(0.0..=len).contains(&t) {
        return 0.0;
    }
    let rise = 2.0 * env.sigma_rise;
    let fall = 2.0 * env.sigma_fall;
    let shape = if t < rise {
        lifted_edge(t, env.sigma_rise)
    } else if t > len - fall {
        lifted_edge(len - t, env.sigma_fall)
    } else {
        1.0
    };
    env.peak * shape
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// γ(τ) = ∫₀^τ A_D(t) dt in seconds.
pub fn envelope_integral(tau: f64, env: &EnvelopeSpec) -> f64 {
    let end = tau.min(env.total_length);
    if end <= 0.0 {
        return 0.0;
    }
    let f = |t: f64| envelope_value(t, env);
    let tol = 1e-14 * env.total_length;
    // split at the edge boundaries so each piece is smooth
    let mut cuts = vec![0.0, 2.0 * env.sigma_rise, env.total_length - 2.0 * env.sigma_fall, env.total_length];
    cuts.retain(|x| *x < end);
    cuts.push(end);
    cuts.windows(2).map(|w| integrate(&f, w[0], w[1], tol)).sum()
}

/// Populations of a qubit with its readout resonator in the single-excitation manifold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PopulationVector {
    pub p_g: f64,
    pub p_e: f64,
    pub p_f: f64,
    pub p_r: f64,
}

impl PopulationVector {
    pub fn new(p_g: f64, p_e: f64, p_f: f64) -> Self {
        Self { p_g, p_e, p_f, p_r: 0.0 }
    }

    pub fn is_valid(&self) -> bool {
        let tol = 1e-9;
        [self.p_g, self.p_e, self.p_f, self.p_r].iter().all(|p| *p >= -tol && *p <= 1.0 + tol)
            && self.p_g + self.p_e + self.p_f + self.p_r <= 1.0 + tol
    }
}

/// Donor population of a resonant swap with donor decay Γ₁ and acceptor decay κ_R:
/// P(t) = e^{−κ_Σ t/2}[cos Mt + κ_Δ/(4M) sin Mt]², with the overdamped and
/// critical continuations for |g̃| ≤ κ_Δ/4.
pub fn damped_swap_population(t: f64, g_tilde: f64, gamma1: f64, kappa_r: f64) -> f64 {
    let amp = swap_amplitudes(t, g_tilde, gamma1, kappa_r).0;
    (amp * amp).clamp(0.0, 1.0)
}

/// Real donor and acceptor amplitudes (acceptor up to a global −i).
fn swap_amplitudes(t: f64, g_tilde: f64, gamma1: f64, kappa_r: f64) -> (f64, f64) {
    let g = 2.0 * PI * g_tilde.abs();
    let k_sum = 2.0 * PI * (kappa_r + gamma1);
    let k_diff = 2.0 * PI * (kappa_r - gamma1);
    let q = k_diff / 4.0;
    let m2 = g * g - q * q;
    let a = k_sum / 4.0;
    let scale = g * g + q * q;
    if m2.abs() <= 1e-14 * scale {
        let damp = (-a * t).exp();
        return (damp * (1.0 + q * t), damp * g * t);
    }
    if m2 > 0.0 {
        let m = m2.sqrt();
        let (s, co) = (m * t).sin_cos();
        let damp = (-a * t).exp();
        (damp * (co + q / m * s), damp * g / m * s)
    } else {
        let mu = (-m2).sqrt();
        // cosh μt + r sinh μt written with decaying exponentials only
        let r = q / mu;
        let up = ((mu - a) * t).exp();
        let down = ((-mu - a) * t).exp();
        (0.5 * ((1.0 + r) * up + (1.0 - r) * down), 0.5 * g / mu * (up - down))
    }
}

/// First local minimum of the donor population for constant drive; `None` when the
/// dynamics are not underdamped.
pub fn swap_time(g_tilde: f64, donor_decay: f64, acceptor_decay: f64) -> Option<f64> {
    let g = 2.0 * PI * g_tilde.abs();
    let q = 2.0 * PI * (acceptor_decay - donor_decay) / 4.0;
    let m2 = g * g - q * q;
    if m2 <= 0.0 {
        return None;
    }
    let m = m2.sqrt();
    // cos Mt + (q/M) sin Mt = 0
    Some((PI / 2.0 + (q / m).atan()) / m)
}

/// Donor population for a pulsed drive: t is replaced by γ(t).
pub fn envelope_weighted_swap(t: f64, g_tilde: f64, gamma1: f64, kappa_r: f64, env: &EnvelopeSpec) -> f64 {
    damped_swap_population(envelope_integral(t, env), g_tilde, gamma1, kappa_r)
}

/// Lindblad simulation of the swap |e0⟩ ↔ |g1⟩ in the basis {|g0⟩, |e0⟩, |g1⟩}; returns
/// P_e at each time. An envelope scales the coupling.
pub fn swap_lindblad_populations(times: &[f64], g_tilde: f64, gamma1: f64, kappa_r: f64, envelope: Option<&EnvelopeSpec>) -> Result<Vec<f64>, DynamicsError> {
    let g = 2.0 * PI * g_tilde;
    let env = envelope.copied();
    let h = move |t: f64| -> ComplexMatrix {
        let s = env.map_or(1.0, |e| envelope_value(t, &e));
        let mut m = zeros(3);
        m[(1, 2)] = c(g * s, 0.0);
        m[(2, 1)] = c(g * s, 0.0);
        m
    };
    let collapses = [
        Collapse::new(outer(3, 0, 1), 2.0 * PI * gamma1),
        Collapse::new(outer(3, 0, 2), 2.0 * PI * kappa_r),
    ];
    let rho0 = outer(3, 1, 1);
    let rate_scale = 2.0 * PI * (g_tilde.abs() + gamma1 + kappa_r);
    let step = 0.02 / rate_scale.max(1.0);
    let tol = Tolerances { rtol: 1e-11, atol: 1e-13, ..Tolerances::default() };
    let states = propagate_sampled(h, &collapses, &rho0, times, step, tol)?;
    Ok(states.iter().map(|r| r[(1, 1)].re).collect())
}

/// Three-level leakage-recovery populations starting from |f, 0⟩.
///
/// P_f follows the damped swap with donor decay Γ_{f→e} and acceptor decay κ_R; the
/// remaining population sits in |e⟩ and relaxes at Γ₁:
/// P_e = e^{−Γ₁t}(1 − P_f), P_g = (1 − e^{−Γ₁t})(1 − P_f). The |e1⟩ share of P_e is
/// reported as P_R, so `p_e` holds |e0⟩ only.
pub fn lr_three_level_populations(t: f64, g_tilde: f64, rates: &DecayRates) -> PopulationVector {
    let (donor, acceptor) = swap_amplitudes(t, g_tilde, rates.gamma_fe, rates.kappa_r);
    let p_f = (donor * donor).clamp(0.0, 1.0);
    let p_r = (acceptor * acceptor).clamp(0.0, 1.0 - p_f);
    let relax = (-2.0 * PI * rates.gamma1 * t).exp();
    PopulationVector { p_g: (1.0 - relax) * (1.0 - p_f), p_e: relax * (1.0 - p_f - p_r), p_f, p_r: relax * p_r }
}

/// Full |f0⟩→|e1⟩ transfer time of the three-level model.
pub fn lr_swap_time(g_tilde: f64, rates: &DecayRates) -> Option<f64> {
    swap_time(g_tilde, rates.gamma_fe, rates.kappa_r)
}

/// Index of |q, n⟩ in the qutrit ⊗ two-level-resonator space.
fn qr(q: usize, n: usize) -> usize {
    2 * q + n
}

/// Drive-frame Lindblad model of leakage recovery on qutrit ⊗ resonator (dim 6).
///
/// |f0⟩ ↔ |e1⟩ is resonant with coupling g̃; |e0⟩ ↔ |g1⟩ is coupled with g̃/√2 and
/// detuned by the qubit anharmonicity `alpha`.
pub struct LrModel {
    pub g_tilde: f64,
    pub alpha: f64,
    pub rates: DecayRates,
}

impl LrModel {
    fn hamiltonian(&self) -> ComplexMatrix {
        let g = 2.0 * PI * self.g_tilde;
        let gr = g / 2f64.sqrt();
        let mut h = zeros(6);
        h[(qr(2, 0), qr(1, 1))] = c(g, 0.0);
        h[(qr(1, 1), qr(2, 0))] = c(g, 0.0);
        h[(qr(1, 0), qr(0, 1))] = c(gr, 0.0);
        h[(qr(0, 1), qr(1, 0))] = c(gr, 0.0);
        h[(qr(0, 1), qr(0, 1))] = c(2.0 * PI * self.alpha, 0.0);
        h
    }

    fn collapses(&self) -> Vec<Collapse> {
        let mut lower_q = zeros(6);
        let mut fe = zeros(6);
        let mut a = zeros(6);
        let mut nq = zeros(6);
        for n in 0..2 {
            lower_q[(qr(0, n), qr(1, n))] = ONE;
            fe[(qr(1, n), qr(2, n))] = ONE;
            nq[(qr(1, n), qr(1, n))] = ONE;
            nq[(qr(2, n), qr(2, n))] = c(2.0, 0.0);
        }
        for q in 0..3 {
            a[(qr(q, 0), qr(q, 1))] = ONE;
        }
        vec![
            Collapse::new(lower_q, 2.0 * PI * self.rates.gamma1),
            Collapse::new(fe, 2.0 * PI * self.rates.gamma_fe),
            Collapse::new(a, 2.0 * PI * self.rates.kappa_r),
            Collapse::new(nq, 2.0 * 2.0 * PI * self.rates.gamma_phi),
        ]
    }

    fn step(&self) -> f64 {
        let scale = 2.0 * PI * (self.g_tilde.abs() + self.alpha.abs() + self.rates.kappa_r);
        0.02 / scale.max(1.0)
    }

    /// Density matrices at `times` from a 6×6 initial state.
    pub fn evolve(&self, rho0: &ComplexMatrix, times: &[f64]) -> Result<Vec<ComplexMatrix>, DynamicsError> {
        let h = self.hamiltonian();
        Ok(propagate_sampled(|_| h.clone(), &self.collapses(), rho0, times, self.step(), Tolerances::default())?)
    }

    /// Lindblad populations from |f0⟩: g and f summed over the resonator, `p_e` = |e0⟩,
    /// `p_r` = |e1⟩.
    pub fn populations(&self, times: &[f64]) -> Result<Vec<PopulationVector>, DynamicsError> {
        let rho0 = outer(6, qr(2, 0), qr(2, 0));
        let states = self.evolve(&rho0, times)?;
        Ok(states
            .iter()
            .map(|r| {
                let p = |q: usize| r[(qr(q, 0), qr(q, 0))].re + r[(qr(q, 1), qr(q, 1))].re;
                PopulationVector { p_g: p(0), p_e: r[(qr(1, 0), qr(1, 0))].re, p_f: p(2), p_r: r[(qr(1, 1), qr(1, 1))].re }
            })
            .collect())
    }

    /// Channel on the qubit subspace after `duration`: returns the {g, e} block of the
    /// resonator-traced state and the population outside it.
    pub fn subspace_channel(&self, duration: f64) -> impl Fn(&ComplexMatrix) -> Result<(ComplexMatrix, f64), DynamicsError> + '_ {
        move |rho_q: &ComplexMatrix| {
            let mut rho0 = zeros(6);
            for i in 0..2 {
                for j in 0..2 {
                    rho0[(qr(i, 0), qr(j, 0))] = rho_q[(i, j)];
                }
            }
            let out = self.evolve(&rho0, &[duration])?.pop().expect("one sample");
            let mut block = zeros(2);
            for i in 0..2 {
                for j in 0..2 {
                    block[(i, j)] = out[(qr(i, 0), qr(j, 0))] + out[(qr(i, 1), qr(j, 1))];
                }
            }
            let leak = out[(qr(2, 0), qr(2, 0))].re + out[(qr(2, 1), qr(2, 1))].re;
            Ok((block, leak))
        }
    }
}

/// Pauli transfer matrix on the qubit subspace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PtmResult {
    /// R_ij = ½ Tr(P_i Λ(P_j)), Pauli order (I, X, Y, Z).
    pub matrix: [[f64; 4]; 4],
    /// Mean population found outside {|g⟩, |e⟩} over the probe states.
    pub leakage: f64,
    /// Smallest eigenvalue of the normalized Choi matrix.
    pub min_choi_eigenvalue: f64,
    pub physical: bool,
}

impl PtmResult {
    /// Average gate fidelity to the identity, (Tr R/2 + 1)/3.
    pub fn average_gate_fidelity(&self) -> f64 {
        let tr: f64 = (0..4).map(|k| self.matrix[k][k]).sum();
        (tr / 2.0 + 1.0) / 3.0
    }
}

pub fn pauli(k: usize) -> ComplexMatrix {
    let mut m = zeros(2);
    match k {
        0 => {
            m[(0, 0)] = ONE;
            m[(1, 1)] = ONE;
        }
        1 => {
            m[(0, 1)] = ONE;
            m[(1, 0)] = ONE;
        }
        2 => {
            m[(0, 1)] = -I;
            m[(1, 0)] = I;
        }
        _ => {
            m[(0, 0)] = ONE;
            m[(1, 1)] = -ONE;
        }
    }
    m
}

/// Tomography probes |0⟩, |1⟩, |+⟩, |+i⟩.
pub fn probe_states() -> [ComplexMatrix; 4] {
    let s = 1.0 / 2f64.sqrt();
    let mut plus = basis_ket(2, 0) * c(s, 0.0);
    plus[1] = c(s, 0.0);
    let mut plus_i = basis_ket(2, 0) * c(s, 0.0);
    plus_i[1] = c(0.0, s);
    [ket_to_density(&basis_ket(2, 0)), ket_to_density(&basis_ket(2, 1)), ket_to_density(&plus), ket_to_density(&plus_i)]
}

/// PTM by linear inversion from the images of the four probe states. Each image is
/// renormalized to unit trace on the subspace; the lost population is averaged into
/// `leakage`.
pub fn pauli_transfer_matrix<F>(channel: F) -> Result<PtmResult, DynamicsError>
where
    F: Fn(&ComplexMatrix) -> Result<(ComplexMatrix, f64), DynamicsError>,
{
    let mut images = Vec::with_capacity(4);
    let mut leakage = 0.0;
    for probe in probe_states() {
        let (out, leak) = channel(&probe)?;
        if out.nrows() != 2 || out.ncols() != 2 {
            return Err(DynamicsError::InvalidInput("channel must return a 2×2 block".into()));
        }
        let tr = trace(&out).re;
        if !(tr > 0.0) {
            return Err(DynamicsError::InvalidInput("channel output has no weight on the subspace".into()));
        }
        images.push(out.scale(1.0 / tr));
        leakage += leak / 4.0;
    }
    let (r0, r1, rp, ri) = (&images[0], &images[1], &images[2], &images[3]);
    let lam = [r0 + r1, rp.scale(2.0) - r0 - r1, ri.scale(2.0) - r0 - r1, r0 - r1];
    let mut matrix = [[0.0; 4]; 4];
    for (i, row) in matrix.iter_mut().enumerate() {
        let p = pauli(i);
        for (j, entry) in row.iter_mut().enumerate() {
            *entry = 0.5 * trace(&(&p * &lam[j])).re;
        }
    }
    // Λ(|a⟩⟨b|) from the Pauli images
    let e00 = (&lam[0] + &lam[3]).scale(0.5);
    let e11 = (&lam[0] - &lam[3]).scale(0.5);
    let e01 = (&lam[1] + &lam[2] * I).scale(0.5);
    let e10 = (&lam[1] - &lam[2] * I).scale(0.5);
    let mut choi = zeros(4);
    for (a, b, img) in [(0, 0, &e00), (0, 1, &e01), (1, 0, &e10), (1, 1, &e11)] {
        for i in 0..2 {
            for j in 0..2 {
                choi[(2 * a + i, 2 * b + j)] = img[(i, j)] * 0.5;
            }
        }
    }
    let min_choi_eigenvalue = hermitian_eigenvalues(&choi)[0];
    Ok(PtmResult { matrix, leakage, min_choi_eigenvalue, physical: min_choi_eigenvalue >= -1e-9 })
}

/// Applies a Z rotation by −φ to a 2×2 block, where φ is the phase of the |+⟩ image.
pub fn virtual_z(block: &ComplexMatrix, phase: f64) -> ComplexMatrix {
    let mut out = block.clone();
    let rot = c(0.0, -phase).exp();
    out[(1, 0)] = block[(1, 0)] * rot;
    out[(0, 1)] = block[(0, 1)] * rot.conj();
    out
}

/// PTM of the simulated leakage-recovery pulse on subspace inputs, with the
/// drive-induced qubit phase removed by a virtual Z extracted from the |+⟩ input.
pub fn lr_subspace_ptm(model: &LrModel, duration: f64) -> Result<PtmResult, DynamicsError> {
    let channel = model.subspace_channel(duration);
    let (plus_out, _) = channel(&probe_states()[2])?;
    let phase = plus_out[(1, 0)].arg();
    pauli_transfer_matrix(|rho| {
        let (block, leak) = channel(rho)?;
        Ok((virtual_z(&block, phase), leak))
    })
}
