//! Static circuit model: element parameters, the flux-tunable coupler and the
//! truncated system Hamiltonian.
//!
//! H/ħ = Σ_i [ω_i a_i†a_i + (α_i/2) a_i†a_i†a_i a_i] + Σ_{i<j} g_ij (a_i† − a_i)(a_j† − a_j),
//! with the single-excitation matrix element between elements i and j equal to −g_ij.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::numerics::linalg::{identity, kron_all, lowering, ComplexMatrix};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CircuitError {
    #[error("invalid coupler: {0}")]
    Coupler(String),
    #[error("invalid element `{name}`: {reason}")]
    Element { name: String, reason: String },
    #[error("invalid coupling {a}-{b}: {reason}")]
    Coupling { a: String, b: String, reason: String },
    #[error("unknown element `{0}`")]
    UnknownElement(String),
    #[error("invalid rate `{field}`: {value}")]
    Rate { field: String, value: f64 },
}

/// SQUID coupler junction parameters (energies as E/h in Hz).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplerSpec {
    pub e_sigma: f64,
    pub d: f64,
    pub e_c: f64,
}

impl CouplerSpec {
    pub fn validate(&self) -> Result<(), CircuitError> {
        if !(self.e_sigma > 0.0) || !self.e_sigma.is_finite() {
            return Err(CircuitError::Coupler(format!("e_sigma must be positive, got {}", self.e_sigma)));
        }
        if !(self.e_c > 0.0) || !self.e_c.is_finite() {
            return Err(CircuitError::Coupler(format!("e_c must be positive, got {}", self.e_c)));
        }
        if !(0.0..=1.0).contains(&self.d) {
            return Err(CircuitError::Coupler(format!("asymmetry d must lie in [0, 1], got {}", self.d)));
        }
        Ok(())
    }

    /// Solves ω_C(0) = f_max and ω_C(π/2) = f_min for (E_Σ, d) at fixed E_C.
    pub fn from_tuning_range(f_min: f64, f_max: f64, e_c: f64) -> Result<Self, CircuitError> {
        if !(f_min > 0.0 && f_max >= f_min && e_c > 0.0) {
            return Err(CircuitError::Coupler("need 0 < f_min <= f_max and e_c > 0".into()));
        }
        let e_sigma = (f_max + e_c).powi(2) / (8.0 * e_c);
        let d = (f_min + e_c).powi(2) / (8.0 * e_c * e_sigma);
        let spec = Self { e_sigma, d, e_c };
        spec.validate()?;
        Ok(spec)
    }
}

/// E_J(φ) = E_Σ √(cos²φ + d² sin²φ), the singularity-free form of E_Σ|cos φ|√(1 + d² tan²φ).
pub fn josephson_energy(phi_ext: f64, spec: &CouplerSpec) -> f64 {
    let (s, c) = phi_ext.sin_cos();
    spec.e_sigma * (c * c + spec.d * spec.d * s * s).sqrt()
}

/// ω_C/2π = √(8 E_J E_C) − E_C.
pub fn coupler_frequency(phi_ext: f64, spec: &CouplerSpec) -> f64 {
    (8.0 * josephson_energy(phi_ext, spec) * spec.e_c).sqrt() - spec.e_c
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Transmon,
    Coupler,
    Resonator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub name: String,
    pub kind: ElementKind,
    /// ω/2π in Hz.
    pub frequency: f64,
    /// α/2π in Hz; zero for the resonator.
    #[serde(default)]
    pub anharmonicity: f64,
    pub levels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub a: String,
    pub b: String,
    /// g/2π in Hz (signed).
    pub g: f64,
}

/// Elements in tensor order plus symmetric static couplings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub elements: Vec<Element>,
    #[serde(default)]
    pub couplings: Vec<Coupling>,
    pub coupler: CouplerSpec,
}

impl CircuitSpec {
    pub fn validate(&self) -> Result<(), CircuitError> {
        self.coupler.validate()?;
        for (k, el) in self.elements.iter().enumerate() {
            let bad = |reason: &str| CircuitError::Element { name: el.name.clone(), reason: reason.to_string() };
            if el.levels < 2 {
                return Err(bad("truncation must keep at least 2 levels"));
            }
            if !el.frequency.is_finite() || el.frequency <= 0.0 {
                return Err(bad("frequency must be positive"));
            }
            if !el.anharmonicity.is_finite() {
                return Err(bad("anharmonicity must be finite"));
            }
            if el.kind == ElementKind::Resonator && el.anharmonicity != 0.0 {
                return Err(bad("resonator is harmonic; anharmonicity must be 0"));
            }
            if self.elements[..k].iter().any(|o| o.name == el.name) {
                return Err(bad("duplicate element name"));
            }
        }
        let mut seen = Vec::new();
        for cp in &self.couplings {
            let bad = |reason: &str| CircuitError::Coupling { a: cp.a.clone(), b: cp.b.clone(), reason: reason.to_string() };
            let ia = self.index_of(&cp.a)?;
            let ib = self.index_of(&cp.b)?;
            if ia == ib {
                return Err(bad("self-coupling is not allowed"));
            }
            if !cp.g.is_finite() {
                return Err(bad("coupling must be finite"));
            }
            let key = (ia.min(ib), ia.max(ib));
            if seen.contains(&key) {
                return Err(bad("pair listed twice"));
            }
            seen.push(key);
        }
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Result<usize, CircuitError> {
        self.elements.iter().position(|e| e.name == name).ok_or_else(|| CircuitError::UnknownElement(name.to_string()))
    }

    pub fn element(&self, name: &str) -> Result<&Element, CircuitError> {
        Ok(&self.elements[self.index_of(name)?])
    }

    /// Symmetric coupling g_ij/2π (0 if absent).
    pub fn coupling(&self, a: &str, b: &str) -> f64 {
        self.couplings
            .iter()
            .find(|cp| (cp.a == a && cp.b == b) || (cp.a == b && cp.b == a))
            .map(|cp| cp.g)
            .unwrap_or(0.0)
    }

    pub fn dims(&self) -> Vec<usize> {
        self.elements.iter().map(|e| e.levels).collect()
    }

    pub fn dimension(&self) -> usize {
        self.dims().iter().product()
    }

    /// Copy with every coupler element tuned to ω_C(φ_ext).
    pub fn at_flux(&self, phi_ext: f64) -> CircuitSpec {
        let mut out = self.clone();
        let f = coupler_frequency(phi_ext, &self.coupler);
        for el in out.elements.iter_mut().filter(|e| e.kind == ElementKind::Coupler) {
            el.frequency = f;
        }
        out
    }

    /// Flat basis index of the product state with the given occupation per element.
    pub fn basis_index(&self, occupation: &[usize]) -> usize {
        let dims = self.dims();
        assert_eq!(occupation.len(), dims.len(), "one occupation per element");
        occupation.iter().zip(dims.iter()).fold(0, |acc, (n, d)| {
            assert!(n < d, "occupation beyond truncation");
            acc * d + n
        })
    }
}

/// Operator acting as `op` on element `index` and identity elsewhere.
pub fn embed(dims: &[usize], index: usize, op: &ComplexMatrix) -> ComplexMatrix {
    let factors: Vec<ComplexMatrix> = dims
        .iter()
        .enumerate()
        .map(|(k, &d)| if k == index { op.clone() } else { identity(d) })
        .collect();
    kron_all(&factors)
}

/// Truncated Hamiltonian in angular units (s⁻¹), tensor order as in `spec.elements`.
pub fn build_hamiltonian(spec: &CircuitSpec) -> Result<ComplexMatrix, CircuitError> {
    spec.validate()?;
    let dims = spec.dims();
    let n = spec.dimension();
    let mut h = ComplexMatrix::zeros(n, n);
    let lowers: Vec<ComplexMatrix> = dims.iter().enumerate().map(|(k, &d)| embed(&dims, k, &lowering(d))).collect();
    for (k, el) in spec.elements.iter().enumerate() {
        let a = &lowers[k];
        let ad = a.adjoint();
        let num = &ad * a;
        h += num.scale(2.0 * PI * el.frequency);
        if el.anharmonicity != 0.0 {
            h += (&ad * &ad * a * a).scale(PI * el.anharmonicity);
        }
    }
    for cp in &spec.couplings {
        let ia = spec.index_of(&cp.a)?;
        let ib = spec.index_of(&cp.b)?;
        let xa = lowers[ia].adjoint() - &lowers[ia];
        let xb = lowers[ib].adjoint() - &lowers[ib];
        h += (xa * xb).scale(2.0 * PI * cp.g);
    }
    Ok(h)
}

/// Number operator of the element named `name`, embedded in the full space.
pub fn number_operator(spec: &CircuitSpec, name: &str) -> Result<ComplexMatrix, CircuitError> {
    let k = spec.index_of(name)?;
    let dims = spec.dims();
    let a = embed(&dims, k, &lowering(dims[k]));
    Ok(a.adjoint() * a)
}

/// Decoherence rates of one transmon and its readout resonator (all /2π, Hz).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayRates {
    pub gamma1: f64,
    pub gamma_phi: f64,
    pub kappa_r: f64,
    pub gamma_fe: f64,
}

impl DecayRates {
    /// Γ_Σ = Γ₁ + Γ_φ.
    pub fn gamma_sigma(&self) -> f64 {
        self.gamma1 + self.gamma_phi
    }

    pub fn validate(&self) -> Result<(), CircuitError> {
        for (field, value) in [
            ("gamma1", self.gamma1),
            ("gamma_phi", self.gamma_phi),
            ("kappa_r", self.kappa_r),
            ("gamma_fe", self.gamma_fe),
        ] {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(CircuitError::Rate { field: field.to_string(), value });
            }
        }
        Ok(())
    }
}

/// Device parameters of the reference chip.
pub mod fixtures {
    use super::*;

    pub const OMEGA_Q1: f64 = 3.83e9;
    pub const OMEGA_Q2: f64 = 3.11e9;
    pub const OMEGA_R: f64 = 5.85e9;
    pub const COUPLER_MIN: f64 = 3.13e9;
    pub const COUPLER_MAX: f64 = 5.45e9;
    pub const ALPHA_Q1: f64 = -205e6;
    pub const ALPHA_Q2: f64 = -216e6;
    pub const ALPHA_C: f64 = -161e6;

    pub const G_Q1_Q2: f64 = 15e6;
    pub const G_Q1_C: f64 = 115e6;
    pub const G_Q1_R: f64 = 9e6;
    pub const G_Q2_C: f64 = 110e6;
    pub const G_Q2_R: f64 = 5e6;
    pub const G_C_R: f64 = -75e6;

    pub const GAMMA1_Q1: f64 = 6.8e3;
    pub const GAMMA_PHI_Q1: f64 = 4.4e3;
    pub const GAMMA1_Q2: f64 = 4.7e3;
    pub const GAMMA_PHI_Q2: f64 = 11.3e3;
    pub const GAMMA1_C: f64 = 20e3;
    pub const GAMMA_PHI_C: f64 = 143e3;
    pub const KAPPA_R: f64 = 770e3;
    /// |f⟩ → |e⟩ decay of Q1 used by the leakage models.
    pub const GAMMA_FE_Q1: f64 = 6.3e3;

    /// Coupler junctions fitted to the 3.13–5.45 GHz range with E_C = |α_C|.
    pub fn coupler() -> CouplerSpec {
        CouplerSpec::from_tuning_range(COUPLER_MIN, COUPLER_MAX, -ALPHA_C).expect("fixture range is valid")
    }

    /// Q1, Q2, C, R with the given truncations, coupler at zero flux.
    pub fn circuit(levels_q: usize, levels_c: usize, levels_r: usize) -> CircuitSpec {
        let coupler = coupler();
        let el = |name: &str, kind, frequency, anharmonicity, levels| Element {
            name: name.to_string(),
            kind,
            frequency,
            anharmonicity,
            levels,
        };
        let cp = |a: &str, b: &str, g| Coupling { a: a.to_string(), b: b.to_string(), g };
        CircuitSpec {
            elements: vec![
                el("Q1", ElementKind::Transmon, OMEGA_Q1, ALPHA_Q1, levels_q),
                el("Q2", ElementKind::Transmon, OMEGA_Q2, ALPHA_Q2, levels_q),
                el("C", ElementKind::Coupler, coupler_frequency(0.0, &coupler), ALPHA_C, levels_c),
                el("R", ElementKind::Resonator, OMEGA_R, 0.0, levels_r),
            ],
            couplings: vec![
                cp("Q1", "Q2", G_Q1_Q2),
                cp("Q1", "C", G_Q1_C),
                cp("Q1", "R", G_Q1_R),
                cp("Q2", "C", G_Q2_C),
                cp("Q2", "R", G_Q2_R),
                cp("C", "R", G_C_R),
            ],
            coupler,
        }
    }

    pub fn rates_q1() -> DecayRates {
        DecayRates { gamma1: GAMMA1_Q1, gamma_phi: GAMMA_PHI_Q1, kappa_r: KAPPA_R, gamma_fe: GAMMA_FE_Q1 }
    }
}
