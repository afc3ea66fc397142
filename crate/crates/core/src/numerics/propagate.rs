//! Time propagation of kets and density matrices.
//!
//! Both use an adaptive Dormand–Prince 5(4) integrator whose step never exceeds the
//! caller's `step`. Each stage of the Lindblad right-hand side is traceless, so the
//! trace is conserved to rounding error regardless of the accepted step sizes.

use std::f64::consts::PI;

use super::linalg::{hermiticity_defect, hermitian_eigenvalues, spectral_spread_bound, trace, ComplexMatrix, ComplexVector, I};
use super::NumericsError;

/// Collapse operator `L` with rate γ (s⁻¹), entering as γ(LρL† − ½{L†L, ρ}).
#[derive(Clone, Debug)]
pub struct Collapse {
    pub operator: ComplexMatrix,
    pub rate: f64,
}

impl Collapse {
    pub fn new(operator: ComplexMatrix, rate: f64) -> Self {
        Self { operator, rate }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-12, max_steps: 20_000_000 }
    }
}

/// Evolves a density matrix to `duration` under H(t) (angular units) and the given collapses.
pub fn propagate<H>(
    hamiltonian: H,
    collapses: &[Collapse],
    initial_state: &ComplexMatrix,
    duration: f64,
    step: f64,
) -> Result<ComplexMatrix, NumericsError>
where
    H: Fn(f64) -> ComplexMatrix,
{
    let mut out = propagate_sampled(hamiltonian, collapses, initial_state, &[duration], step, Tolerances::default())?;
    Ok(out.pop().expect("one sample"))
}

/// Density matrices at each of the (non-decreasing) `times`.
pub fn propagate_sampled<H>(
    hamiltonian: H,
    collapses: &[Collapse],
    initial_state: &ComplexMatrix,
    times: &[f64],
    step: f64,
    tol: Tolerances,
) -> Result<Vec<ComplexMatrix>, NumericsError>
where
    H: Fn(f64) -> ComplexMatrix,
{
    check_density(initial_state)?;
    check_times(times, step)?;
    let dim = initial_state.nrows();
    for (k, col) in collapses.iter().enumerate() {
        if !(col.rate >= 0.0) || !col.rate.is_finite() {
            return Err(NumericsError::InvalidInput(format!("collapse {k} has invalid rate {}", col.rate)));
        }
        if col.operator.nrows() != dim || col.operator.ncols() != dim {
            return Err(NumericsError::InvalidInput(format!("collapse {k} has wrong dimension")));
        }
    }
    let end = times.last().copied().unwrap_or(0.0);
    let dissipative: f64 = collapses
        .iter()
        .map(|col| col.rate * col.operator.iter().map(|z| z.norm_sqr()).sum::<f64>())
        .sum();
    check_step(&hamiltonian, dim, end, step, dissipative)?;

    let terms: Vec<(ComplexMatrix, ComplexMatrix, ComplexMatrix)> = collapses
        .iter()
        .filter(|col| col.rate > 0.0)
        .map(|col| {
            let l = col.operator.scale(col.rate.sqrt());
            let ld = l.adjoint();
            let half_ldl = (&ld * &l).scale(0.5);
            (l, ld, half_ldl)
        })
        .collect();

    let rhs = |t: f64, rho: &ComplexMatrix| -> ComplexMatrix {
        let h = hamiltonian(t);
        let mut out = (&h * rho - rho * &h) * (-I);
        for (l, ld, half_ldl) in &terms {
            out += l * rho * ld - half_ldl * rho - rho * half_ldl;
        }
        out
    };
    let mut states = integrate(rhs, initial_state.clone(), times, step, tol, true)?;
    for s in states.iter_mut() {
        let tr = trace(s);
        if !(tr.re.is_finite()) {
            return Err(NumericsError::NonFinite("density matrix".into()));
        }
    }
    Ok(states)
}

/// Schrödinger evolution of a ket to `duration`.
pub fn propagate_ket<H>(hamiltonian: H, initial: &ComplexVector, duration: f64, step: f64) -> Result<ComplexVector, NumericsError>
where
    H: Fn(f64) -> ComplexMatrix,
{
    let mut out = propagate_ket_sampled(hamiltonian, initial, &[duration], step, Tolerances::default())?;
    Ok(out.pop().expect("one sample"))
}

pub fn propagate_ket_sampled<H>(
    hamiltonian: H,
    initial: &ComplexVector,
    times: &[f64],
    step: f64,
    tol: Tolerances,
) -> Result<Vec<ComplexVector>, NumericsError>
where
    H: Fn(f64) -> ComplexMatrix,
{
    check_times(times, step)?;
    let norm = initial.norm();
    if !((norm - 1.0).abs() < 1e-9) {
        return Err(NumericsError::InvalidInput(format!("initial ket not normalised (norm {norm})")));
    }
    let dim = initial.len();
    let end = times.last().copied().unwrap_or(0.0);
    check_step(&hamiltonian, dim, end, step, 0.0)?;
    let rhs = |t: f64, psi: &ComplexMatrix| -> ComplexMatrix { (hamiltonian(t) * psi) * (-I) };
    let psi0 = ComplexMatrix::from_column_slice(dim, 1, initial.as_slice());
    let states = integrate(rhs, psi0, times, step, tol, false)?;
    Ok(states.into_iter().map(|m| ComplexVector::from_column_slice(m.as_slice())).collect())
}

fn check_density(rho: &ComplexMatrix) -> Result<(), NumericsError> {
    if rho.nrows() != rho.ncols() || rho.nrows() == 0 {
        return Err(NumericsError::InvalidInput("density matrix must be square".into()));
    }
    if !rho.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(NumericsError::NonFinite("initial state".into()));
    }
    if hermiticity_defect(rho) > 1e-10 {
        return Err(NumericsError::NonHermitian);
    }
    let tr = trace(rho);
    if (tr.re - 1.0).abs() > 1e-9 || tr.im.abs() > 1e-9 {
        return Err(NumericsError::InvalidInput(format!("initial state trace {} ≠ 1", tr.re)));
    }
    let min_eig = hermitian_eigenvalues(rho).first().copied().unwrap_or(0.0);
    if min_eig < -1e-9 {
        return Err(NumericsError::InvalidInput(format!("initial state not positive (eigenvalue {min_eig})")));
    }
    Ok(())
}

fn check_times(times: &[f64], step: f64) -> Result<(), NumericsError> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(NumericsError::InvalidInput(format!("step must be positive, got {step}")));
    }
    let mut prev = 0.0;
    for &t in times {
        if !t.is_finite() || t < prev {
            return Err(NumericsError::InvalidInput("sample times must be finite, non-negative and sorted".into()));
        }
        prev = t;
    }
    Ok(())
}

/// Requires step ≤ 2π/(20 ω_max), ω_max estimated from the Hamiltonian spectrum spread
/// at a few sample times plus the dissipative rate scale.
fn check_step<H>(hamiltonian: &H, dim: usize, end: f64, step: f64, dissipative: f64) -> Result<(), NumericsError>
where
    H: Fn(f64) -> ComplexMatrix,
{
    let samples = 9;
    let mut omega_max = dissipative;
    for k in 0..samples {
        let t = end * k as f64 / (samples - 1) as f64;
        let h = hamiltonian(t);
        if h.nrows() != dim || h.ncols() != dim {
            return Err(NumericsError::InvalidInput("hamiltonian dimension mismatch".into()));
        }
        if !h.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(NumericsError::NonFinite(format!("hamiltonian at t = {t}")));
        }
        omega_max = omega_max.max(spectral_spread_bound(&h) + dissipative);
    }
    let limit = 2.0 * PI / (20.0 * omega_max);
    if omega_max > 0.0 && step > limit * (1.0 + 1e-12) {
        return Err(NumericsError::StepTooCoarse { step, limit });
    }
    Ok(())
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn integrate<F>(
    rhs: F,
    mut y: ComplexMatrix,
    times: &[f64],
    max_step: f64,
    tol: Tolerances,
    hermitize: bool,
) -> Result<Vec<ComplexMatrix>, NumericsError>
where
    F: Fn(f64, &ComplexMatrix) -> ComplexMatrix,
{
    let mut out = Vec::with_capacity(times.len());
    let mut t = 0.0_f64;
    let mut h_next = max_step;
    let mut k1 = rhs(t, &y);
    let mut steps = 0usize;
    for &target in times {
        while t < target {
            if steps >= tol.max_steps {
                return Err(NumericsError::NoConvergence(format!("integrator exceeded {} steps", tol.max_steps)));
            }
            let remaining = target - t;
            let last = h_next >= remaining;
            let h = if last { remaining } else { h_next };
            let k2 = rhs(t + C2 * h, &(&y + &k1 * cx(h * A21)));
            let k3 = rhs(t + C3 * h, &(&y + &k1 * cx(h * A31) + &k2 * cx(h * A32)));
            let k4 = rhs(t + C4 * h, &(&y + &k1 * cx(h * A41) + &k2 * cx(h * A42) + &k3 * cx(h * A43)));
            let k5 = rhs(
                t + C5 * h,
                &(&y + &k1 * cx(h * A51) + &k2 * cx(h * A52) + &k3 * cx(h * A53) + &k4 * cx(h * A54)),
            );
            let k6 = rhs(
                t + h,
                &(&y + &k1 * cx(h * A61) + &k2 * cx(h * A62) + &k3 * cx(h * A63) + &k4 * cx(h * A64) + &k5 * cx(h * A65)),
            );
            let y_new = &y + &k1 * cx(h * B1) + &k3 * cx(h * B3) + &k4 * cx(h * B4) + &k5 * cx(h * B5) + &k6 * cx(h * B6);
            let t_new = if last { target } else { t + h };
            let k7 = rhs(t_new, &y_new);
            let err_vec = &k1 * cx(h * E1) + &k3 * cx(h * E3) + &k4 * cx(h * E4) + &k5 * cx(h * E5) + &k6 * cx(h * E6) + &k7 * cx(h * E7);
            let mut err = 0.0_f64;
            for ((e, a), b) in err_vec.iter().zip(y.iter()).zip(y_new.iter()) {
                let scale = tol.atol + tol.rtol * a.norm().max(b.norm());
                err = err.max(e.norm() / scale);
            }
            if !err.is_finite() {
                return Err(NumericsError::NonFinite("integrator error estimate".into()));
            }
            steps += 1;
            if err <= 1.0 {
                t = t_new;
                y = y_new;
                if hermitize {
                    y = (&y + y.adjoint()) * cx(0.5);
                    k1 = rhs(t, &y);
                } else {
                    k1 = k7;
                }
                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if !last {
                    h_next = (h * factor).min(max_step);
                }
            } else {
                h_next = h * (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
                if h_next < 1e-300 {
                    return Err(NumericsError::NoConvergence("step size underflow".into()));
                }
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

fn cx(v: f64) -> num_complex::Complex64 {
    num_complex::Complex64::new(v, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::linalg::{c, outer, purity, zeros};

    #[test]
    fn pure_decay() {
        let gamma = 2.0e5;
        let rho0 = outer(2, 1, 1);
        let lower = outer(2, 0, 1);
        let t = 7.0e-6;
        let rho = propagate(|_| zeros(2), &[Collapse::new(lower, gamma)], &rho0, t, 1e-7).unwrap();
        assert!((rho[(1, 1)].re - (-gamma * t).exp()).abs() < 1e-6);
        assert!((trace(&rho).re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unitary_purity() {
        let omega = 2.0 * PI * 5.0e6;
        let mut h = zeros(2);
        h[(0, 1)] = c(omega, 0.0);
        h[(1, 0)] = c(omega, 0.0);
        h[(1, 1)] = c(0.3 * omega, 0.0);
        let rho0 = outer(2, 0, 0);
        let rho = propagate(|_| h.clone(), &[], &rho0, 1e-6, 1e-9).unwrap();
        assert!((purity(&rho) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_coarse_step() {
        let mut h = zeros(2);
        h[(1, 1)] = c(2.0 * PI * 1e9, 0.0);
        let rho0 = outer(2, 0, 0);
        let r = propagate(|_| h.clone(), &[], &rho0, 1e-8, 1e-9);
        assert!(matches!(r, Err(NumericsError::StepTooCoarse { .. })));
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut rho0 = outer(2, 0, 0);
        rho0[(0, 1)] = c(0.1, 0.0);
        let r = propagate(|_| zeros(2), &[], &rho0, 1e-8, 1e-9);
        assert!(matches!(r, Err(NumericsError::NonHermitian)));
    }

    #[test]
    fn ket_rabi() {
        let g = 2.0 * PI * 1.0e6;
        let mut h = zeros(2);
        h[(0, 1)] = c(g, 0.0);
        h[(1, 0)] = c(g, 0.0);
        let psi0 = crate::numerics::linalg::basis_ket(2, 0);
        let t = 0.37e-6;
        let psi = propagate_ket(|_| h.clone(), &psi0, t, 1e-8).unwrap();
        assert!((psi[1].norm_sqr() - (g * t).sin().powi(2)).abs() < 1e-9);
    }
}
