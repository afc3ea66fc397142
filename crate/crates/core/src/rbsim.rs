//! Randomized benchmarking with leakage: rate equations and their closed forms,
//! error models, a Monte Carlo qutrit simulation and the leakage-RB fit.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::DecayRates;
use crate::dynamics::PopulationVector;
use crate::numerics::linalg::{c, identity, zeros, ComplexMatrix, I, ONE, ZERO};
use crate::numerics::{fit_least_squares, FitResult, NumericsError, Observation, RngStream};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum RbError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid curves: {0}")]
    InvalidCurves(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Leakage-RB scenario. Times in seconds, rates cyclic (Hz).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RBScenario {
    pub l_cl: f64,
    pub tau_cl: f64,
    pub tau_leak: f64,
    pub tau_lr: f64,
    pub rates: DecayRates,
    pub f_lr: f64,
    /// Apply LR after every `n_lr`-th Clifford; 0 disables LR.
    pub n_lr: usize,
    pub lengths: Vec<usize>,
    #[serde(default)]
    pub shots: usize,
    #[serde(default = "default_randomizations")]
    pub randomizations: usize,
}

fn default_randomizations() -> usize {
    50
}

impl RBScenario {
    /// Reference timing: τ_Cl = 200 ns, τ_leak = 100 ns, τ_LR = 310 ns, LR every Clifford.
    pub fn fixture(l_cl: f64, rates: DecayRates) -> Self {
        Self {
            l_cl,
            tau_cl: 200e-9,
            tau_leak: 100e-9,
            tau_lr: 310e-9,
            rates,
            f_lr: 1.0,
            n_lr: 1,
            lengths: vec![1, 2, 4, 8, 12, 16, 24, 32, 48, 64, 96, 128, 160, 200, 250, 300, 350, 400, 450, 500],
            shots: 0,
            randomizations: 50,
        }
    }

    pub fn validate(&self) -> Result<(), RbError> {
        let bad = |m: String| Err(RbError::InvalidScenario(m));
        if !(0.0..=1.0).contains(&self.l_cl) {
            return bad(format!("l_cl = {} outside [0, 1]", self.l_cl));
        }
        if !(0.0..=1.0).contains(&self.f_lr) {
            return bad(format!("f_lr = {} outside [0, 1]", self.f_lr));
        }
        for (name, v) in [("tau_cl", self.tau_cl), ("tau_leak", self.tau_leak), ("tau_lr", self.tau_lr)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} = {v} must be >= 0"));
            }
        }
        self.rates.validate().map_err(|e| RbError::InvalidScenario(e.to_string()))?;
        Ok(())
    }

    /// d_q = e^{−τ_Cl Γ_{f→e}}.
    pub fn d_q(&self) -> f64 {
        (-self.tau_cl * 2.0 * PI * self.rates.gamma_fe).exp()
    }

    /// d_r = e^{−(τ_Cl + τ_leak + τ_LR) κ_R}.
    pub fn d_r(&self) -> f64 {
        (-(self.tau_cl + self.tau_leak + self.tau_lr) * 2.0 * PI * self.rates.kappa_r).exp()
    }

    /// Whether LR follows Clifford number `step` (0-based).
    pub fn lr_at(&self, step: usize) -> bool {
        self.n_lr > 0 && (step + 1) % self.n_lr == 0
    }
}

/// Per-Clifford transfer matrix on (P_sub, P_f, P_R).
pub fn rate_matrix(scenario: &RBScenario, with_lr: bool) -> Matrix3<f64> {
    let l = scenario.l_cl;
    let dq = scenario.d_q();
    let m_leak = Matrix3::new(1.0 - l / 2.0, l, 0.0, l / 2.0, 1.0 - l, 0.0, 0.0, 0.0, 1.0);
    let m_fe = Matrix3::new(1.0, 1.0 - dq, 0.0, 0.0, dq, 0.0, 0.0, 0.0, 1.0);
    if !with_lr {
        return m_fe * m_leak;
    }
    let f = scenario.f_lr;
    let m_lr = Matrix3::new(1.0, f, -f / 2.0, 0.0, 1.0 - f, f / 2.0, 0.0, f, 1.0 - f / 2.0);
    let m_r = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, scenario.d_r()));
    m_r * m_fe * m_lr * m_leak
}

fn to_vec(p: &PopulationVector) -> Vector3<f64> {
    Vector3::new(p.p_g + p.p_e, p.p_f, p.p_r)
}

/// One Clifford of the rate equations. The subspace population P_sub = P_g + P_e is
/// propagated as a whole and split back in the input g:e ratio.
pub fn rate_step(pop: &PopulationVector, scenario: &RBScenario, with_lr: bool) -> PopulationVector {
    let v = rate_matrix(scenario, with_lr) * to_vec(pop);
    let sub = pop.p_g + pop.p_e;
    let frac_g = if sub > 0.0 { pop.p_g / sub } else { 1.0 };
    PopulationVector { p_g: v[0] * frac_g, p_e: v[0] * (1.0 - frac_g), p_f: v[1], p_r: v[2] }
}

/// Steady state by power iteration: repeated squaring to get close, then plain steps.
pub fn steady_state_iterated(scenario: &RBScenario, with_lr: bool) -> Vector3<f64> {
    let one = rate_matrix(scenario, with_lr);
    // squaring amplifies roundoff in the unit eigenvalue: stop once the change grows again
    let mut m = one;
    let mut last = f64::INFINITY;
    for _ in 0..40 {
        let next = m * m;
        let delta = (next - m).amax();
        if delta > last && last < 1e-8 {
            break;
        }
        m = next;
        last = delta;
        if delta <= 1e-13 {
            break;
        }
    }
    let mut v = m * Vector3::new(1.0, 0.0, 0.0);
    for _ in 0..10_000 {
        let next = one * v;
        let delta = (next - v).amax();
        v = next;
        if delta <= 1e-18 {
            break;
        }
    }
    v
}

/// Closed forms for the equilibrium leakage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct A2ClosedForms {
    /// No LR: L/(3L + 2(e^{τ_Cl Γ_{f→e}} − 1)).
    pub a2_leak: f64,
    /// Steady state of M_R·M_{f→e}·M_LR·M_leak.
    pub a2_lr_full: f64,
    /// Simplified LR form L·d_r/(4(1 − d_r) + 3L).
    pub a2_lr_simplified: f64,
    /// No-LR transient P_f(n) on the scenario's length grid.
    pub p_f_of_n: Vec<f64>,
}

pub fn a2_closed_forms(scenario: &RBScenario) -> A2ClosedForms {
    let l = scenario.l_cl;
    let dq = scenario.d_q();
    let dr = scenario.d_r();
    let f = scenario.f_lr;
    let e_tau = (scenario.tau_cl * 2.0 * PI * scenario.rates.gamma_fe).exp();
    let denom_leak = 2.0 * e_tau - 2.0 + 3.0 * l;
    let a2_leak = if l == 0.0 { 0.0 } else { l / denom_leak };
    let chain = 2.0 - 2.0 * f + dr * (3.0 * f - 2.0);
    let a2_lr_full = if l == 0.0 { 0.0 } else { l * dq * chain / (4.0 + 2.0 * dr * (f - 2.0) + (3.0 * l - 2.0) * dq * chain) };
    let a2_lr_simplified = if l == 0.0 { 0.0 } else { l * dr / (4.0 * (1.0 - dr) + 3.0 * l) };
    let rate = dq * (1.0 - 1.5 * l);
    let p_f_of_n = scenario
        .lengths
        .iter()
        .map(|&n| if l == 0.0 { 0.0 } else { l * (1.0 - rate.powi(n as i32)) / denom_leak })
        .collect();
    A2ClosedForms { a2_leak, a2_lr_full, a2_lr_simplified, p_f_of_n }
}

/// Exact F_LR = 1, Γ_{f→e} = 0 limit of the LR steady state: L·d_r/(4(1 − d_r) + 3L·d_r).
pub fn a2_lr_limit(l_cl: f64, d_r: f64) -> f64 {
    if l_cl == 0.0 {
        return 0.0;
    }
    l_cl * d_r / (4.0 * (1.0 - d_r) + 3.0 * l_cl * d_r)
}

/// Average error per Clifford predicted by decoherence and injected leakage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorModels {
    pub eps_ref: f64,
    pub eps_leak: f64,
    pub eps_lr: f64,
    /// Leakage per Clifford above which LR lowers the error: τ_LR·Γ_Σ.
    pub breakeven_l: f64,
}

pub fn error_models(scenario: &RBScenario) -> ErrorModels {
    let g = 2.0 * PI * scenario.rates.gamma_sigma();
    let l = scenario.l_cl;
    ErrorModels {
        eps_ref: g * scenario.tau_cl / 3.0,
        eps_leak: g * (scenario.tau_cl + scenario.tau_leak) / 3.0 + l / 2.0,
        eps_lr: g * (scenario.tau_cl + scenario.tau_leak + scenario.tau_lr) / 3.0 + l / 6.0,
        breakeven_l: scenario.tau_lr * g,
    }
}

/// Dephasing rate (cyclic, Hz) equivalent to recovering leakage L per time τ:
/// returns (exact −ln√(1−L)/τ, small-L L/(2τ)), both divided by 2π.
pub fn leakage_dephasing_rate(l_cl: f64, tau: f64) -> Result<(f64, f64), RbError> {
    if !(0.0..1.0).contains(&l_cl) {
        return Err(RbError::InvalidScenario(format!("L_Cl = {l_cl} must lie in [0, 1)")));
    }
    if !(tau > 0.0) {
        return Err(RbError::InvalidScenario("tau must be > 0".into()));
    }
    let exact = -(1.0 - l_cl).sqrt().ln() / tau;
    let approx = l_cl / (2.0 * tau);
    Ok((exact / (2.0 * PI), approx / (2.0 * PI)))
}

/// P_f(n) for n = 0..=n_max with LR every N Cliffords (N = 0: never), from P_f(0) = 0.
pub fn periodic_lr_trace(scenario: &RBScenario, n_max: usize) -> Vec<f64> {
    let m_plain = rate_matrix(scenario, false);
    let m_lr = rate_matrix(scenario, true);
    let mut v = Vector3::new(1.0, 0.0, 0.0);
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(v[1]);
    for step in 0..n_max {
        v = if scenario.lr_at(step) { m_lr * v } else { m_plain * v };
        out.push(v[1]);
    }
    out
}

/// Upper bound N·L_Cl/2 on the periodic-LR leakage.
pub fn periodic_lr_bound(scenario: &RBScenario) -> f64 {
    scenario.n_lr as f64 * scenario.l_cl / 2.0
}

type Mat2 = [[num_complex::Complex64; 2]; 2];

fn mul2(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[ZERO; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn dagger2(a: &Mat2) -> Mat2 {
    [[a[0][0].conj(), a[1][0].conj()], [a[0][1].conj(), a[1][1].conj()]]
}

/// Single-qubit Clifford gate set acting on {|g⟩, |e⟩}, identity on |f⟩.
#[derive(Clone, Debug)]
pub struct CliffordGateSet {
    pub elements: Vec<Mat2>,
    /// Depolarizing probability p per Clifford on the subspace: ρ → (1−p)ρ + p·Tr(ρ)·I/2.
    pub depolarizing: f64,
}

impl CliffordGateSet {
    /// The 48-element binary octahedral group generated by exp(−iπX/4) and exp(−iπY/4).
    pub fn single_qubit() -> Self {
        let s = 1.0 / 2f64.sqrt();
        let x90: Mat2 = [[c(s, 0.0), c(0.0, -s)], [c(0.0, -s), c(s, 0.0)]];
        let y90: Mat2 = [[c(s, 0.0), c(-s, 0.0)], [c(s, 0.0), c(s, 0.0)]];
        let id: Mat2 = [[ONE, ZERO], [ZERO, ONE]];
        let same = |a: &Mat2, b: &Mat2| (0..2).all(|i| (0..2).all(|j| (a[i][j] - b[i][j]).norm() < 1e-9));
        let mut elements = vec![id];
        let mut frontier = vec![id];
        while let Some(u) = frontier.pop() {
            for g in [&x90, &y90] {
                let v = mul2(g, &u);
                if !elements.iter().any(|e| same(e, &v)) {
                    elements.push(v);
                    frontier.push(v);
                }
            }
        }
        Self { elements, depolarizing: 0.0 }
    }

    pub fn with_depolarizing(mut self, p: f64) -> Self {
        self.depolarizing = p;
        self
    }
}

/// Index of |q, n⟩ in qutrit ⊗ two-level resonator.
fn idx(q: usize, n: usize) -> usize {
    2 * q + n
}

const DIM: usize = 6;

fn embed_clifford(u: &Mat2) -> ComplexMatrix {
    let mut m = identity(DIM);
    for n in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                m[(idx(i, n), idx(j, n))] = u[i][j];
            }
        }
    }
    m
}

fn kraus(rho: &ComplexMatrix, ops: &[ComplexMatrix]) -> ComplexMatrix {
    let mut out = zeros(DIM);
    for k in ops {
        out += k * rho * k.adjoint();
    }
    out
}

/// Amplitude damping between two single-excitation-ladder levels, acting on all other
/// tensor labels alike.
fn damping_ops(pairs: &[(usize, usize)], p: f64) -> Vec<ComplexMatrix> {
    let mut k0 = identity(DIM);
    let mut k1 = zeros(DIM);
    for &(to, from) in pairs {
        k0[(from, from)] = c((1.0 - p).sqrt(), 0.0);
        k1[(to, from)] = c(p.sqrt(), 0.0);
    }
    vec![k0, k1]
}

fn unitary_on_pair(a: usize, b: usize, prob: f64, phase_i: bool) -> ComplexMatrix {
    let s = prob.sqrt();
    let co = (1.0 - prob).max(0.0).sqrt();
    let mut u = identity(DIM);
    u[(a, a)] = c(co, 0.0);
    u[(b, b)] = c(co, 0.0);
    if phase_i {
        u[(a, b)] = -I * s;
        u[(b, a)] = -I * s;
    } else {
        u[(a, b)] = c(-s, 0.0);
        u[(b, a)] = c(s, 0.0);
    }
    u
}

/// Noise applied after each Clifford, in the order leak → LR → f decay → resonator decay →
/// relaxation and dephasing of the subspace over the step duration.
struct StepChannel {
    superop: DMatrix<num_complex::Complex64>,
}

impl StepChannel {
    fn build(scenario: &RBScenario, gates: &CliffordGateSet, with_lr: bool) -> Self {
        let duration = scenario.tau_cl + scenario.tau_leak + if with_lr { scenario.tau_lr } else { 0.0 };
        let p1 = 1.0 - (-2.0 * PI * scenario.rates.gamma1 * duration).exp();
        let phi = (-2.0 * PI * scenario.rates.gamma_phi * duration).exp();
        let leak = unitary_on_pair(idx(1, 0), idx(2, 0), scenario.l_cl, false) * unitary_on_pair(idx(1, 1), idx(2, 1), scenario.l_cl, false);
        let lr = unitary_on_pair(idx(2, 0), idx(1, 1), scenario.f_lr, true);
        let f_decay = damping_ops(&[(idx(1, 0), idx(2, 0)), (idx(1, 1), idx(2, 1))], 1.0 - scenario.d_q());
        let r_decay = damping_ops(&[(idx(0, 0), idx(0, 1)), (idx(1, 0), idx(1, 1)), (idx(2, 0), idx(2, 1))], 1.0 - scenario.d_r());
        let relax = damping_ops(&[(idx(0, 0), idx(1, 0)), (idx(0, 1), idx(1, 1))], p1);
        let depol = gates.depolarizing;
        let apply = |mut rho: ComplexMatrix| -> ComplexMatrix {
            if depol > 0.0 {
                let mut mixed = zeros(DIM);
                for n in 0..2 {
                    let tr = rho[(idx(0, n), idx(0, n))] + rho[(idx(1, n), idx(1, n))];
                    for q in 0..2 {
                        mixed[(idx(q, n), idx(q, n))] = tr * 0.5;
                    }
                }
                let mut sub = zeros(DIM);
                for a in 0..2 {
                    for b in 0..2 {
                        for n in 0..2 {
                            for m in 0..2 {
                                sub[(idx(a, n), idx(b, m))] = rho[(idx(a, n), idx(b, m))];
                            }
                        }
                    }
                }
                rho = &rho - sub.scale(depol) + mixed.scale(depol);
            }
            rho = &leak * &rho * leak.adjoint();
            if with_lr {
                rho = &lr * &rho * lr.adjoint();
            }
            rho = kraus(&rho, &f_decay);
            if with_lr {
                rho = kraus(&rho, &r_decay);
            }
            rho = kraus(&rho, &relax);
            for i in 0..DIM {
                for j in 0..DIM {
                    let dq = (i / 2) as f64 - (j / 2) as f64;
                    if dq != 0.0 {
                        rho[(i, j)] *= phi.powf(dq * dq);
                    }
                }
            }
            rho
        };
        let mut superop = DMatrix::zeros(DIM * DIM, DIM * DIM);
        for i in 0..DIM {
            for j in 0..DIM {
                let mut e = zeros(DIM);
                e[(i, j)] = ONE;
                let out = apply(e);
                for a in 0..DIM {
                    for b in 0..DIM {
                        superop[(a * DIM + b, i * DIM + j)] = out[(a, b)];
                    }
                }
            }
        }
        Self { superop }
    }

    fn apply(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        let v = DMatrix::from_iterator(DIM * DIM, 1, (0..DIM * DIM).map(|k| rho[(k / DIM, k % DIM)]));
        let out = &self.superop * v;
        ComplexMatrix::from_fn(DIM, DIM, |a, b| out[(a * DIM + b, 0)])
    }
}

/// Mean and spread of P_g (after the inversion gate) and P_f per sequence length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RBCurves {
    pub lengths: Vec<usize>,
    pub p_g_mean: Vec<f64>,
    pub p_g_std: Vec<f64>,
    pub p_f_mean: Vec<f64>,
    pub p_f_std: Vec<f64>,
    /// Number of samples behind each mean (randomizations or shots).
    pub samples: usize,
}

impl RBCurves {
    pub fn validate(&self) -> Result<(), RbError> {
        let n = self.lengths.len();
        if [self.p_g_mean.len(), self.p_g_std.len(), self.p_f_mean.len(), self.p_f_std.len()].iter().any(|&k| k != n) {
            return Err(RbError::InvalidCurves("column lengths differ".into()));
        }
        if self.samples == 0 {
            return Err(RbError::InvalidCurves("samples must be >= 1".into()));
        }
        Ok(())
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Monte Carlo leakage RB. Each randomization draws one Clifford sequence of the longest
/// length; shorter lengths use its prefixes, closed by the ideal inverse of the prefix.
/// With `scenario.shots > 0` each measured probability is replaced by a binomial estimate.
pub fn monte_carlo_rb(scenario: &RBScenario, gates: &CliffordGateSet, seed: RngStream) -> Result<RBCurves, RbError> {
    scenario.validate()?;
    if scenario.randomizations == 0 || scenario.lengths.is_empty() {
        return Err(RbError::InvalidScenario("need >= 1 randomization and >= 1 length".into()));
    }
    let plain = StepChannel::build(scenario, gates, false);
    let with_lr = StepChannel::build(scenario, gates, true);
    let embedded: Vec<ComplexMatrix> = gates.elements.iter().map(embed_clifford).collect();
    let mut lengths = scenario.lengths.clone();
    lengths.sort_unstable();
    lengths.dedup();
    let n_max = *lengths.last().expect("non-empty");

    let runs: Vec<Vec<(f64, f64)>> = (0..scenario.randomizations)
        .into_par_iter()
        .map(|r| {
            let mut rng = seed.child(r as u64).rng();
            let mut rho = zeros(DIM);
            rho[(0, 0)] = ONE;
            let mut total: Mat2 = [[ONE, ZERO], [ZERO, ONE]];
            let mut out = Vec::with_capacity(lengths.len());
            let mut next = 0;
            for step in 0..n_max {
                let k = rng.random_range(0..gates.elements.len());
                rho = &embedded[k] * &rho * embedded[k].adjoint();
                total = mul2(&gates.elements[k], &total);
                rho = if scenario.lr_at(step) { with_lr.apply(&rho) } else { plain.apply(&rho) };
                while next < lengths.len() && lengths[next] == step + 1 {
                    let inv = dagger2(&total);
                    let mut p_g = 0.0;
                    for n in 0..2 {
                        let mut acc = ZERO;
                        for i in 0..2 {
                            for j in 0..2 {
                                acc += inv[0][i] * rho[(idx(i, n), idx(j, n))] * inv[0][j].conj();
                            }
                        }
                        p_g += acc.re;
                    }
                    let p_f = rho[(idx(2, 0), idx(2, 0))].re + rho[(idx(2, 1), idx(2, 1))].re;
                    let (p_g, p_f) = (p_g.clamp(0.0, 1.0), p_f.clamp(0.0, 1.0));
                    if scenario.shots > 0 {
                        let n_g = Binomial::new(scenario.shots as u64, p_g).expect("valid p").sample(&mut rng);
                        let rest = scenario.shots as u64 - n_g;
                        let q = if p_g < 1.0 { (p_f / (1.0 - p_g)).clamp(0.0, 1.0) } else { 0.0 };
                        let n_f = Binomial::new(rest, q).expect("valid p").sample(&mut rng);
                        out.push((n_g as f64 / scenario.shots as f64, n_f as f64 / scenario.shots as f64));
                    } else {
                        out.push((p_g, p_f));
                    }
                    next += 1;
                }
            }
            out
        })
        .collect();

    let mut curves = RBCurves {
        lengths: lengths.clone(),
        p_g_mean: vec![],
        p_g_std: vec![],
        p_f_mean: vec![],
        p_f_std: vec![],
        samples: scenario.randomizations,
    };
    for k in 0..lengths.len() {
        let g: Vec<f64> = runs.iter().map(|r| r[k].0).collect();
        let f: Vec<f64> = runs.iter().map(|r| r[k].1).collect();
        let (gm, gs) = mean_std(&g);
        let (fm, fs) = mean_std(&f);
        curves.p_g_mean.push(gm);
        curves.p_g_std.push(gs);
        curves.p_f_mean.push(fm);
        curves.p_f_std.push(fs);
    }
    Ok(curves)
}

/// Fit model for RB curves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RBModel {
    /// P_g = A₀ + B₀λ₀ⁿ + B₂λ₂ⁿ, P_f = A₂ + B₂λ₂ⁿ.
    WithLeakage,
    /// P_g = A₀ + B₀λ₀ⁿ.
    NoLeakage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RBFitResult {
    pub a0: f64,
    pub b0: f64,
    pub lambda0: f64,
    pub a2: f64,
    pub b2: f64,
    pub lambda2: f64,
    pub epsilon: f64,
    pub l2: f64,
    /// Covariance of (A₀, B₀, λ₀, A₂, B₂, λ₂).
    pub covariance: Vec<Vec<f64>>,
    pub converged: bool,
    /// λ₀ and λ₂ within 1 %: λ₂ is tied to λ₀.
    pub degenerate: bool,
    /// False when the P_f transient is below the noise floor; then λ₂ = 1, B₂ = 0.
    pub leakage_resolved: bool,
    pub residual_norm: f64,
}

impl RBFitResult {
    pub fn std_err(&self, k: usize) -> f64 {
        self.covariance[k][k].max(0.0).sqrt()
    }

    /// L₂ = (1 − A₂)(1 − λ₂).
    pub fn leakage_rate(a2: f64, lambda2: f64) -> f64 {
        (1.0 - a2) * (1.0 - lambda2)
    }

    /// ε = (1 − λ₀ + L₂)/2.
    pub fn error_per_clifford(lambda0: f64, a2: f64, lambda2: f64) -> f64 {
        (1.0 - lambda0 + Self::leakage_rate(a2, lambda2)) / 2.0
    }

    /// Model values (P_g, P_f) at length n.
    pub fn model(&self, n: f64) -> (f64, f64) {
        let l2n = self.lambda2.powf(n);
        (self.a0 + self.b0 * self.lambda0.powf(n) + self.b2 * l2n, self.a2 + self.b2 * l2n)
    }
}

/// Best (A, B, λ) for y ≈ A + Bλⁿ on a λ grid, amplitudes solved linearly.
fn seed_exponential(ns: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let mut best = (f64::INFINITY, 0.0, 0.0, 0.5);
    for i in 0..=800 {
        let u = -6.0 + 6.0 * i as f64 / 800.0;
        let lam = 1.0 - 10f64.powf(u);
        let xs: Vec<f64> = ns.iter().map(|n| lam.powf(*n)).collect();
        let k = xs.len() as f64;
        let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
        let det = k * sxx - sx * sx;
        if det.abs() < 1e-300 {
            continue;
        }
        let b = (k * sxy - sx * sy) / det;
        let a = (sy - b * sx) / k;
        let res: f64 = xs.iter().zip(ys).map(|(x, y)| (a + b * x - y).powi(2)).sum();
        if res < best.0 {
            best = (res, a, b, lam);
        }
    }
    (best.1, best.2, best.3)
}

/// Spreads below this are roundoff, not noise.
const STD_NOISE_FLOOR: f64 = 1e-12;

fn sigmas(std: &[f64], samples: usize, floor: f64) -> Vec<f64> {
    let sem: Vec<f64> = std.iter().map(|s| if *s > STD_NOISE_FLOOR { s / (samples as f64).sqrt() } else { 0.0 }).collect();
    let positive = sem.iter().cloned().filter(|s| *s > 0.0).fold(floor, f64::min);
    if !positive.is_finite() {
        return vec![1.0; sem.len()];
    }
    sem.iter().map(|s| if *s > 0.0 { *s } else { positive }).collect()
}

/// Smallest positive standard error over all columns, or ∞ for noiseless curves.
fn sem_floor(curves: &RBCurves) -> f64 {
    curves
        .p_g_std
        .iter()
        .chain(&curves.p_f_std)
        .filter(|s| **s > STD_NOISE_FLOOR)
        .map(|s| s / (curves.samples as f64).sqrt())
        .fold(f64::INFINITY, f64::min)
}

fn covariance_rows(fit: &FitResult, map: &[Option<usize>]) -> Vec<Vec<f64>> {
    (0..6)
        .map(|i| (0..6).map(|j| match (map[i], map[j]) {
            (Some(a), Some(b)) => fit.covariance[(a, b)],
            _ => 0.0,
        }).collect())
        .collect()
}

/// Joint fit of leakage-RB curves.
pub fn fit_rb(curves: &RBCurves, model: RBModel) -> Result<RBFitResult, RbError> {
    curves.validate()?;
    if curves.lengths.len() < 5 {
        return Err(RbError::InvalidCurves("need >= 5 sequence lengths".into()));
    }
    let ns: Vec<f64> = curves.lengths.iter().map(|&n| n as f64).collect();
    let floor = sem_floor(curves);
    let sg = sigmas(&curves.p_g_std, curves.samples, floor);
    let sf = sigmas(&curves.p_f_std, curves.samples, floor);

    if model == RBModel::NoLeakage {
        let (a0, b0, l0) = seed_exponential(&ns, &curves.p_g_mean);
        let data: Vec<Observation<f64>> = ns.iter().zip(&curves.p_g_mean).zip(&sg).map(|((n, y), s)| Observation::new(*n, *y, *s)).collect();
        let fit = fit_least_squares(|n: &f64, p: &[f64]| p[0] + p[1] * p[2].powf(*n), &data, &[a0, b0, l0])?;
        let p = &fit.params;
        return Ok(RBFitResult {
            a0: p[0],
            b0: p[1],
            lambda0: p[2],
            a2: 0.0,
            b2: 0.0,
            lambda2: 1.0,
            epsilon: RBFitResult::error_per_clifford(p[2], 0.0, 1.0),
            l2: RBFitResult::leakage_rate(0.0, 1.0),
            covariance: covariance_rows(&fit, &[Some(0), Some(1), Some(2), None, None, None]),
            converged: fit.converged,
            degenerate: false,
            leakage_resolved: false,
            residual_norm: fit.residual_norm,
        });
    }

    let mut data: Vec<Observation<(usize, f64)>> = Vec::with_capacity(2 * ns.len());
    for k in 0..ns.len() {
        data.push(Observation::new((0, ns[k]), curves.p_g_mean[k], sg[k]));
        data.push(Observation::new((1, ns[k]), curves.p_f_mean[k], sf[k]));
    }
    let (a2, b2, l2) = seed_exponential(&ns, &curves.p_f_mean);
    let resid: Vec<f64> = ns.iter().zip(&curves.p_g_mean).map(|(n, y)| y - b2 * l2.powf(*n)).collect();
    let (a0, b0, l0) = seed_exponential(&ns, &resid);

    let full = |x: &(usize, f64), p: &[f64]| -> f64 {
        let l2n = p[5].powf(x.1);
        if x.0 == 0 {
            p[0] + p[1] * p[2].powf(x.1) + p[4] * l2n
        } else {
            p[3] + p[4] * l2n
        }
    };
    let fit = fit_least_squares(full, &data, &[a0, b0, l0, a2, b2, l2])?;
    let p = fit.params.clone();
    let n_min = ns.iter().cloned().fold(f64::INFINITY, f64::min);
    let transient = (p[4] * p[5].powf(n_min)).abs();
    let noise = if floor.is_finite() {
        let mut sem = sf.clone();
        sem.sort_by(f64::total_cmp);
        3.0 * sem[sem.len() / 2]
    } else {
        1e-12
    };
    // transient below the noise, or gone before the shortest sequence
    if transient < noise || p[5].powf(n_min) < 1e-2 {
        return fit_flat_leakage(&data, &p);
    }
    let degenerate = (p[2] - p[5]).abs() < 0.01 * p[2].abs().max(p[5].abs());
    if !degenerate {
        return Ok(RBFitResult {
            a0: p[0],
            b0: p[1],
            lambda0: p[2],
            a2: p[3],
            b2: p[4],
            lambda2: p[5],
            epsilon: RBFitResult::error_per_clifford(p[2], p[3], p[5]),
            l2: RBFitResult::leakage_rate(p[3], p[5]),
            covariance: covariance_rows(&fit, &[Some(0), Some(1), Some(2), Some(3), Some(4), Some(5)]),
            converged: fit.converged,
            degenerate: false,
            leakage_resolved: true,
            residual_norm: fit.residual_norm,
        });
    }
    // tie λ₂ = λ₀
    let tied = |x: &(usize, f64), p: &[f64]| -> f64 {
        let ln = p[2].powf(x.1);
        if x.0 == 0 {
            p[0] + (p[1] + p[4]) * ln
        } else {
            p[3] + p[4] * ln
        }
    };
    let guess = [p[0], p[1], 0.5 * (p[2] + p[5]), p[3], p[4]];
    let fit = fit_least_squares(tied, &data, &guess)?;
    let q = &fit.params;
    let mut cov = covariance_rows(&fit, &[Some(0), Some(1), Some(2), Some(3), Some(4), Some(2)]);
    // λ₂ inherits λ₀'s variance; widen both by the spread of the untied estimates
    let spread = (p[2] - p[5]).powi(2);
    cov[2][2] += spread;
    cov[5][5] += spread;
    Ok(RBFitResult {
        a0: q[0],
        b0: q[1],
        lambda0: q[2],
        a2: q[3],
        b2: q[4],
        lambda2: q[2],
        epsilon: RBFitResult::error_per_clifford(q[2], q[3], q[2]),
        l2: RBFitResult::leakage_rate(q[3], q[2]),
        covariance: cov,
        converged: fit.converged,
        degenerate: true,
        leakage_resolved: true,
        residual_norm: fit.residual_norm,
    })
}

/// P_f without a resolvable transient: P_g = A₀ + B₀λ₀ⁿ, P_f = A₂.
fn fit_flat_leakage(data: &[Observation<(usize, f64)>], p: &[f64]) -> Result<RBFitResult, RbError> {
    let flat = |x: &(usize, f64), q: &[f64]| -> f64 {
        if x.0 == 0 {
            q[0] + q[1] * q[2].powf(x.1)
        } else {
            q[3]
        }
    };
    let fit = fit_least_squares(flat, data, &[p[0], p[1], p[2], p[3] + p[4] * p[5]])?;
    let q = &fit.params;
    Ok(RBFitResult {
        a0: q[0],
        b0: q[1],
        lambda0: q[2],
        a2: q[3],
        b2: 0.0,
        lambda2: 1.0,
        epsilon: RBFitResult::error_per_clifford(q[2], q[3], 1.0),
        l2: RBFitResult::leakage_rate(q[3], 1.0),
        covariance: covariance_rows(&fit, &[Some(0), Some(1), Some(2), Some(3), None, None]),
        converged: fit.converged,
        degenerate: false,
        leakage_resolved: false,
        residual_norm: fit.residual_norm,
    })
}

/// Synthetic curves from model parameters. With `shots > 0` each point is a binomial
/// estimate and the std column holds the single-shot standard deviation.
pub fn synthetic_curves(truth: &RBFitResult, lengths: &[usize], shots: usize, seed: RngStream) -> RBCurves {
    let mut rng = seed.rng();
    let mut curves = RBCurves {
        lengths: lengths.to_vec(),
        p_g_mean: vec![],
        p_g_std: vec![],
        p_f_mean: vec![],
        p_f_std: vec![],
        samples: shots.max(1),
    };
    for &n in lengths {
        let (pg, pf) = truth.model(n as f64);
        let (pg, pf) = (pg.clamp(0.0, 1.0), pf.clamp(0.0, 1.0));
        if shots == 0 {
            curves.p_g_mean.push(pg);
            curves.p_f_mean.push(pf);
            curves.p_g_std.push(0.0);
            curves.p_f_std.push(0.0);
        } else {
            let draw = |p: f64, rng: &mut rand_chacha::ChaCha8Rng| Binomial::new(shots as u64, p).expect("valid p").sample(rng) as f64 / shots as f64;
            let g = draw(pg, &mut rng);
            let f = draw(pf, &mut rng);
            curves.p_g_mean.push(g);
            curves.p_f_mean.push(f);
            curves.p_g_std.push((pg * (1.0 - pg)).sqrt().max(1e-9));
            curves.p_f_std.push((pf * (1.0 - pf)).sqrt().max(1e-9));
        }
    }
    curves
}

/// RB parameters with L₂ and ε derived from (λ₀, A₂, λ₂).
pub fn rb_parameters(a0: f64, b0: f64, lambda0: f64, a2: f64, b2: f64, lambda2: f64) -> RBFitResult {
    RBFitResult {
        a0,
        b0,
        lambda0,
        a2,
        b2,
        lambda2,
        epsilon: RBFitResult::error_per_clifford(lambda0, a2, lambda2),
        l2: RBFitResult::leakage_rate(a2, lambda2),
        covariance: vec![vec![0.0; 6]; 6],
        converged: true,
        degenerate: false,
        leakage_resolved: true,
        residual_norm: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::fixtures as chip;

    fn scenario(l: f64) -> RBScenario {
        RBScenario { n_lr: 0, ..RBScenario::fixture(l, chip::rates_q1()) }
    }

    #[test]
    fn clifford_group_has_48_elements() {
        let g = CliffordGateSet::single_qubit();
        assert_eq!(g.elements.len(), 48);
        let sum = g.elements.iter().fold([[ZERO; 2]; 2], |mut acc, u| {
            for i in 0..2 {
                for j in 0..2 {
                    acc[i][j] += u[i][j];
                }
            }
            acc
        });
        assert!(sum.iter().flatten().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn no_leakage_fixed_point() {
        let s = RBScenario { l_cl: 0.0, f_lr: 0.7, ..RBScenario::fixture(0.0, chip::rates_q1()) };
        let p = rate_step(&PopulationVector::new(1.0, 0.0, 0.0), &s, true);
        assert_eq!((p.p_g, p.p_e, p.p_f, p.p_r), (1.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn one_step_half_occupancy() {
        let mut s = scenario(0.02);
        s.rates.gamma_fe = 0.0;
        let p = rate_step(&PopulationVector::new(1.0, 0.0, 0.0), &s, false);
        assert!((p.p_f - 0.01).abs() < 1e-15);
        let s = scenario(0.02);
        let p = rate_step(&PopulationVector::new(1.0, 0.0, 0.0), &s, false);
        assert!((p.p_f - 0.01 * s.d_q()).abs() < 1e-15);
    }

    #[test]
    fn steady_state_matches_eq4() {
        let s = scenario(0.02);
        let iter = steady_state_iterated(&s, false);
        assert!((iter[1] - a2_closed_forms(&s).a2_leak).abs() < 1e-10);
    }

    #[test]
    fn saturates_at_one_third() {
        let mut s = scenario(0.9);
        s.rates.gamma_fe = 0.0;
        assert!((a2_closed_forms(&s).a2_leak - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn lr_full_matches_iteration() {
        let s = RBScenario::fixture(0.02, chip::rates_q1());
        let cf = a2_closed_forms(&s);
        assert!((steady_state_iterated(&s, true)[1] - cf.a2_lr_full).abs() < 1e-12);
        assert!(cf.a2_lr_full < 0.003);
    }

    #[test]
    fn lr_limit_exact() {
        let mut s = RBScenario::fixture(0.03, chip::rates_q1());
        s.rates.gamma_fe = 0.0;
        let it = steady_state_iterated(&s, true)[1];
        assert!((a2_lr_limit(0.03, s.d_r()) - it).abs() < 1e-12);
    }

    #[test]
    fn error_model_values() {
        let e = error_models(&RBScenario::fixture(0.0, chip::rates_q1()));
        assert!((e.eps_ref - 0.00469).abs() < 1e-5);
        assert!((e.breakeven_l - 0.0218).abs() < 1e-4);
    }

    #[test]
    fn dephasing_rate_limits() {
        assert_eq!(leakage_dephasing_rate(0.0, 1e-7).unwrap(), (0.0, 0.0));
        let (exact, approx) = leakage_dephasing_rate(0.002, 310e-9).unwrap();
        assert!((exact - approx).abs() / exact < 0.01);
        assert!(leakage_dephasing_rate(1.0, 1e-7).is_err());
    }

    #[test]
    fn periodic_trace_limits() {
        let mut s = RBScenario::fixture(0.01, chip::rates_q1());
        let per_clifford = periodic_lr_trace(&s, 60);
        let m = rate_matrix(&s, true);
        let mut v = Vector3::new(1.0, 0.0, 0.0);
        for (n, p) in per_clifford.iter().enumerate().skip(1) {
            v = m * v;
            assert_eq!(*p, v[1], "{n}");
        }
        s.n_lr = 10;
        let trace = periodic_lr_trace(&s, 400);
        assert!(trace.iter().cloned().fold(0.0, f64::max) <= periodic_lr_bound(&s));
        for n in 300..390 {
            assert!((trace[n] - trace[n + 10]).abs() < 1e-9);
        }
        s.n_lr = 0;
        let none = periodic_lr_trace(&s, 50);
        s.lengths = (0..=50).collect();
        let closed = a2_closed_forms(&s).p_f_of_n;
        for n in 0..=50 {
            assert!((none[n] - closed[n]).abs() < 1e-14);
        }
    }

    #[test]
    fn noiseless_mc_is_ideal() {
        let s = RBScenario {
            l_cl: 0.0,
            rates: DecayRates { gamma1: 0.0, gamma_phi: 0.0, kappa_r: 0.0, gamma_fe: 0.0 },
            lengths: vec![1, 5, 20],
            randomizations: 5,
            ..RBScenario::fixture(0.0, chip::rates_q1())
        };
        let c = monte_carlo_rb(&s, &CliffordGateSet::single_qubit(), RngStream::new(1, 0)).unwrap();
        for p in &c.p_g_mean {
            assert!((p - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_fit_roundtrip() {
        let truth = rb_parameters(0.45, 0.5, 0.985, 0.2, -0.2, 0.96);
        let lengths: Vec<usize> = (0..20).map(|k| 1 + k * 25).collect();
        let curves = synthetic_curves(&truth, &lengths, 0, RngStream::new(0, 0));
        let fit = fit_rb(&curves, RBModel::WithLeakage).unwrap();
        for (a, b) in [(fit.a0, truth.a0), (fit.b0, truth.b0), (fit.lambda0, truth.lambda0), (fit.a2, truth.a2), (fit.b2, truth.b2), (fit.lambda2, truth.lambda2)] {
            assert!((a - b).abs() < 1e-8, "{a} {b}");
        }
        assert_eq!(fit.epsilon, RBFitResult::error_per_clifford(fit.lambda0, fit.a2, fit.lambda2));
    }

    #[test]
    fn depolarizing_only_decay() {
        let p = 0.01;
        let s = RBScenario {
            l_cl: 0.0,
            rates: DecayRates { gamma1: 0.0, gamma_phi: 0.0, kappa_r: 0.0, gamma_fe: 0.0 },
            lengths: vec![1, 10, 30, 60, 100, 150, 200, 300],
            randomizations: 30,
            n_lr: 0,
            ..RBScenario::fixture(0.0, chip::rates_q1())
        };
        let gates = CliffordGateSet::single_qubit().with_depolarizing(p);
        let c = monte_carlo_rb(&s, &gates, RngStream::new(3, 0)).unwrap();
        // ρ → (1−p)ρ + p·I/2 gives P_g(n) = 1/2 + (1−p)ⁿ/2 for every sequence
        for (n, pg) in c.lengths.iter().zip(&c.p_g_mean) {
            assert!((pg - 0.5 - 0.5 * (1.0 - p).powi(*n as i32)).abs() < 1e-12);
        }
        let fit = fit_rb(&c, RBModel::NoLeakage).unwrap();
        assert!((fit.lambda0 - (1.0 - p)).abs() < 1e-8, "{fit:?}");
    }

    #[test]
    fn lr_fit_without_resolvable_transient() {
        let s = RBScenario { randomizations: 30, ..RBScenario::fixture(0.02, chip::rates_q1()) };
        let c = monte_carlo_rb(&s, &CliffordGateSet::single_qubit(), RngStream::new(11, 0)).unwrap();
        let fit = fit_rb(&c, RBModel::WithLeakage).unwrap();
        assert!(!fit.leakage_resolved);
        assert_eq!(fit.lambda2, 1.0);
        assert!((fit.epsilon - error_models(&s).eps_lr).abs() < 0.003);
    }

    #[test]
    fn shot_noise_fit_within_3_sigma() {
        let truth = rb_parameters(0.45, 0.5, 0.985, 0.2, -0.2, 0.96);
        let lengths: Vec<usize> = (0..20).map(|k| 1 + k * 25).collect();
        let mut misses = 0;
        for seed in 0..10 {
            let curves = synthetic_curves(&truth, &lengths, 10_000, RngStream::new(seed, 0));
            let fit = fit_rb(&curves, RBModel::WithLeakage).unwrap();
            let pairs = [(fit.a0, truth.a0), (fit.b0, truth.b0), (fit.lambda0, truth.lambda0), (fit.a2, truth.a2), (fit.b2, truth.b2), (fit.lambda2, truth.lambda2)];
            for (k, (a, b)) in pairs.iter().enumerate() {
                if (a - b).abs() > 3.0 * fit.std_err(k) {
                    misses += 1;
                }
            }
        }
        // 60 parameter checks; at 3σ a single miss is already unlikely
        assert!(misses <= 2, "{misses}");
    }
}
