//! Levenberg–Marquardt weighted least squares with finite-difference Jacobians.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use super::NumericsError;

/// Independent variable of an observation. Observations are sorted by this key before
/// fitting so that the optimum does not depend on input order.
pub trait Abscissa: Copy {
    fn cmp_key(&self, other: &Self) -> Ordering;
}

impl Abscissa for f64 {
    fn cmp_key(&self, other: &Self) -> Ordering {
        self.total_cmp(other)
    }
}

impl Abscissa for [f64; 2] {
    fn cmp_key(&self, other: &Self) -> Ordering {
        self[0].total_cmp(&other[0]).then(self[1].total_cmp(&other[1]))
    }
}

/// (series index, x) for joint fits of several curves.
impl Abscissa for (usize, f64) {
    fn cmp_key(&self, other: &Self) -> Ordering {
        self.0.cmp(&other.0).then(self.1.total_cmp(&other.1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation<X> {
    pub x: X,
    pub y: f64,
    pub sigma: f64,
}

impl<X> Observation<X> {
    pub fn new(x: X, y: f64, sigma: f64) -> Self {
        Self { x, y, sigma }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub ftol: f64,
    pub xtol: f64,
    pub gtol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iterations: 1000, ftol: 1e-15, xtol: 1e-14, gtol: 1e-14 }
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub params: Vec<f64>,
    /// (JᵀWJ)⁻¹ at the optimum, W = diag(1/σ²).
    pub covariance: DMatrix<f64>,
    /// √χ² with χ² = Σ ((model − y)/σ)².
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn chi2(&self) -> f64 {
        self.residual_norm * self.residual_norm
    }

    pub fn std_err(&self, k: usize) -> f64 {
        self.covariance[(k, k)].max(0.0).sqrt()
    }
}

pub fn fit_least_squares<X, F>(model: F, data: &[Observation<X>], initial_guess: &[f64]) -> Result<FitResult, NumericsError>
where
    X: Abscissa,
    F: Fn(&X, &[f64]) -> f64,
{
    fit_least_squares_with(model, data, initial_guess, FitOptions::default())
}

pub fn fit_least_squares_with<X, F>(
    model: F,
    data: &[Observation<X>],
    initial_guess: &[f64],
    opts: FitOptions,
) -> Result<FitResult, NumericsError>
where
    X: Abscissa,
    F: Fn(&X, &[f64]) -> f64,
{
    let n_par = initial_guess.len();
    if n_par == 0 {
        return Err(NumericsError::InvalidInput("no parameters to fit".into()));
    }
    if data.len() < n_par {
        return Err(NumericsError::InvalidInput(format!("{} points for {} parameters", data.len(), n_par)));
    }
    for obs in data {
        if !obs.y.is_finite() || !(obs.sigma > 0.0) || !obs.sigma.is_finite() {
            return Err(NumericsError::InvalidInput("data must be finite with positive sigma".into()));
        }
    }
    if !initial_guess.iter().all(|p| p.is_finite()) {
        return Err(NumericsError::InvalidInput("initial guess not finite".into()));
    }
    let mut sorted: Vec<Observation<X>> = data.to_vec();
    sorted.sort_by(|a, b| a.x.cmp_key(&b.x).then(a.y.total_cmp(&b.y)).then(a.sigma.total_cmp(&b.sigma)));

    let residuals = |p: &[f64]| -> DVector<f64> {
        DVector::from_iterator(sorted.len(), sorted.iter().map(|o| (model(&o.x, p) - o.y) / o.sigma))
    };
    let jacobian = |p: &[f64]| -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(sorted.len(), n_par);
        let mut probe = p.to_vec();
        for j in 0..n_par {
            let h = 6.0e-6 * p[j].abs().max(1e-3);
            probe[j] = p[j] + h;
            let up = residuals(&probe);
            probe[j] = p[j] - h;
            let down = residuals(&probe);
            probe[j] = p[j];
            jac.set_column(j, &((up - down) / (2.0 * h)));
        }
        jac
    };

    let mut p = initial_guess.to_vec();
    let mut r = residuals(&p);
    let mut chi2 = r.norm_squared();
    if !chi2.is_finite() {
        return Err(NumericsError::NonFinite("model at initial guess".into()));
    }
    let mut lambda = -1.0_f64;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        if chi2 == 0.0 {
            converged = true;
            break;
        }
        let jac = jacobian(&p);
        let a = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        if g.amax() <= opts.gtol * chi2 {
            converged = true;
            break;
        }
        let diag: Vec<f64> = (0..n_par).map(|k| a[(k, k)].max(1e-300)).collect();
        if lambda < 0.0 {
            lambda = 1e-3 * diag.iter().cloned().fold(0.0, f64::max);
        }
        let mut improved = false;
        while lambda < 1e300 {
            let mut damped = a.clone();
            for k in 0..n_par {
                damped[(k, k)] += lambda * diag[k];
            }
            let delta = match damped.clone().cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => match damped.lu().solve(&(-&g)) {
                    Some(d) => d,
                    None => {
                        lambda *= 10.0;
                        continue;
                    }
                },
            };
            let trial: Vec<f64> = p.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            let r_trial = residuals(&trial);
            let chi2_trial = r_trial.norm_squared();
            if chi2_trial.is_finite() && chi2_trial <= chi2 {
                let small_step = delta.iter().zip(p.iter()).all(|(d, q)| d.abs() <= opts.xtol * (q.abs() + opts.xtol));
                let small_gain = chi2 - chi2_trial <= opts.ftol * chi2;
                p = trial;
                r = r_trial;
                chi2 = chi2_trial;
                lambda = (lambda / 5.0).max(1e-300);
                improved = true;
                if small_step || small_gain {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if converged {
            break;
        }
        if !improved {
            // no descent possible at any damping: stationary to machine precision
            converged = true;
            break;
        }
    }

    let jac = jacobian(&p);
    let covariance = pseudo_inverse_sym(&(jac.transpose() * &jac));
    Ok(FitResult { params: p, covariance, residual_norm: chi2.sqrt(), converged, iterations })
}

fn pseudo_inverse_sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = smax * 1e-14;
    let n = a.nrows();
    let u = svd.u.as_ref().expect("u");
    let vt = svd.v_t.as_ref().expect("v_t");
    let mut out = DMatrix::zeros(n, n);
    for k in 0..svd.singular_values.len() {
        let s = svd.singular_values[k];
        if s > cutoff {
            out += (vt.row(k).transpose() * u.column(k).transpose()) / s;
        }
    }
    (&out + out.transpose()) * 0.5
}
