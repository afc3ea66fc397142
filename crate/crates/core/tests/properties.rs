use std::f64::consts::PI;

use proptest::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};

use paracoupler::circuit::{build_hamiltonian, coupler_frequency, fixtures as chip, josephson_energy, CircuitSpec, DecayRates};
use paracoupler::dynamics::{
    damped_swap_population, envelope_weighted_swap, lr_subspace_ptm, lr_three_level_populations, swap_lindblad_populations, EnvelopeSpec, LrModel,
    PopulationVector,
};
use paracoupler::floquet::{chi_shift, effective_coupling, fourier_decompose, DriveSpec, DriveSpectrum, ReadoutOperatingPoint};
use paracoupler::numerics::linalg::{c, hermiticity_defect, trace, zeros, ComplexMatrix};
use paracoupler::numerics::{bessel_j, fit_least_squares, propagate, Collapse, Observation, RngStream};
use paracoupler::protocols::*;
use paracoupler::rbsim::*;

fn random_hermitian(dim: usize, entries: &[f64], scale: f64) -> ComplexMatrix {
    let mut h = zeros(dim);
    let mut k = 0;
    for i in 0..dim {
        h[(i, i)] = c(scale * entries[k], 0.0);
        k += 1;
        for j in i + 1..dim {
            let z = c(scale * entries[k], scale * entries[k + 1]);
            k += 2;
            h[(i, j)] = z;
            h[(j, i)] = z.conj();
        }
    }
    h
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn propagate_preserves_trace(
        dim in 2usize..=6,
        entries in prop::collection::vec(-1.0f64..1.0, 36),
        ops in prop::collection::vec(-1.0f64..1.0, 72),
        rates in prop::collection::vec(0.0f64..2e6, 2),
    ) {
        let h = random_hermitian(dim, &entries, 2.0 * PI * 5e6);
        let mut collapses = vec![];
        for (n, rate) in rates.iter().enumerate() {
            let mut op = zeros(dim);
            for i in 0..dim {
                for j in 0..dim {
                    op[(i, j)] = c(ops[n * 36 + i * 6 + j], ops[(n * 36 + j * 6 + i + 7) % 72]);
                }
            }
            collapses.push(Collapse::new(op, 2.0 * PI * rate));
        }
        let mut rho0 = zeros(dim);
        rho0[(0, 0)] = c(0.5, 0.0);
        rho0[(dim - 1, dim - 1)] = c(0.5, 0.0);
        let rho = propagate(|_| h.clone(), &collapses, &rho0, 0.2e-6, 0.2e-6 / 4000.0).unwrap();
        prop_assert!((trace(&rho).re - 1.0).abs() < 1e-9);
        prop_assert!(trace(&rho).im.abs() < 1e-9);
    }

    #[test]
    fn fit_is_ordering_invariant(seed in 0u64..1000, amp in 0.5f64..2.0, rate in 0.1f64..3.0) {
        let mut data: Vec<Observation<f64>> = (0..30)
            .map(|i| {
                let x = i as f64 * 0.1;
                Observation::new(x, amp * (-rate * x).exp() + 0.01 * ((i * 7919) % 13) as f64 / 13.0, 0.01)
            })
            .collect();
        let model = |x: &f64, p: &[f64]| p[0] * (-p[1] * x).exp();
        let a = fit_least_squares(model, &data, &[1.0, 1.0]).unwrap();
        // deterministic shuffle
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        for i in (1..data.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            data.swap(i, (s >> 33) as usize % (i + 1));
        }
        let b = fit_least_squares(model, &data, &[1.0, 1.0]).unwrap();
        prop_assert_eq!(a.params, b.params);
    }

    #[test]
    fn josephson_symmetries(phi in -10.0f64..10.0, d in 0.0f64..1.0) {
        let spec = paracoupler::circuit::CouplerSpec { d, ..chip::coupler() };
        let e = josephson_energy(phi, &spec);
        prop_assert_eq!(e, josephson_energy(-phi, &spec));
        prop_assert!((e - josephson_energy(phi + PI, &spec)).abs() <= 1e-12 * spec.e_sigma);
    }

    #[test]
    fn hamiltonian_is_hermitian(
        lq in 2usize..=3, lc in 2usize..=3, lr in 2usize..=3,
        f in prop::collection::vec(0.8f64..1.2, 4),
        g in prop::collection::vec(-1.5f64..1.5, 6),
        phi in 0.0f64..1.5,
    ) {
        let mut spec: CircuitSpec = chip::circuit(lq, lc, lr).at_flux(phi);
        for (el, s) in spec.elements.iter_mut().zip(&f) {
            el.frequency *= s;
        }
        for (cp, s) in spec.couplings.iter_mut().zip(&g) {
            cp.g *= s;
        }
        let h = build_hamiltonian(&spec).unwrap();
        prop_assert!(hermiticity_defect(&h) <= 1e-12 * h.iter().map(|z| z.norm()).fold(0.0, f64::max));
    }

    #[test]
    fn effective_coupling_symmetric(g1 in -200e6f64..200e6, g2 in -200e6f64..200e6, k in 1u32..=2, a in 0.0f64..0.3, phi in 0.2f64..1.2) {
        let omega_d = 1e9 / k as f64;
        let d = DriveSpec { phi_dc: phi, a_d: a, omega_d, k, envelope: None };
        let s = fourier_decompose(&d, &chip::coupler(), 4).unwrap().numerical;
        prop_assert_eq!(effective_coupling(g1, g2, k, omega_d, &s).unwrap().value, effective_coupling(g2, g1, k, omega_d, &s).unwrap().value);
    }

    #[test]
    fn chi_shift_even_and_monotone(g in 0.1e6f64..5e6, delta in 0.0f64..50e6, step in 0.0f64..5e6) {
        let at = |d: f64| chi_shift(&ReadoutOperatingPoint { g_tilde_qr: g, delta: d, chi: 0.0, delta_p: 0.0 });
        prop_assert_eq!(at(delta), at(-delta));
        prop_assert!(at(delta) <= 0.0);
        prop_assert!(at(delta).abs() <= g);
        prop_assert!(at(delta + step).abs() <= at(delta).abs());
    }

    #[test]
    fn swap_branches_are_continuous(gamma1 in 1e3f64..50e3, kappa in 0.2e6f64..5e6, frac in 0.0f64..1.0) {
        let threshold = (kappa - gamma1) / 4.0;
        let t_max = 4.0 / (kappa + gamma1);
        for eps in [1e-7, 1e-9] {
            for i in 0..=40 {
                let t = t_max * i as f64 / 40.0 * (0.1 + 0.9 * frac);
                let below = damped_swap_population(t, threshold * (1.0 - eps), gamma1, kappa);
                let at = damped_swap_population(t, threshold, gamma1, kappa);
                let above = damped_swap_population(t, threshold * (1.0 + eps), gamma1, kappa);
                prop_assert!((below - at).abs() < 1e-6 && (above - at).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn lr_populations_physical(g in 0.05e6f64..3e6, gamma1 in 1e3f64..50e3, gamma_fe in 1e3f64..50e3, kappa in 0.2e6f64..5e6) {
        let rates = DecayRates { gamma1, gamma_phi: 0.0, kappa_r: kappa, gamma_fe };
        // P_g is monotone until the first full swap, where the LR pulse ends
        let t_end = paracoupler::dynamics::lr_swap_time(g, &rates).unwrap_or(2e-6);
        let mut last_g = 0.0;
        for i in 0..=200 {
            let p = lr_three_level_populations(t_end * i as f64 / 200.0, g, &rates);
            prop_assert!(p.p_g >= 0.0 && p.p_e >= 0.0 && p.p_f >= 0.0 && p.p_r >= 0.0);
            prop_assert!(p.is_valid());
            prop_assert!((p.p_g + p.p_e + p.p_f + p.p_r - 1.0).abs() < 1e-12);
            prop_assert!(p.p_g >= last_g - 1e-12);
            last_g = p.p_g;
        }
    }

    #[test]
    fn reset_fidelity_monotone(p_id in 0.0f64..1.0, p_pi in 0.01f64..1.0, a in 0.0f64..0.5, b in 0.0f64..0.5, da in 0.0f64..0.5, db in 0.0f64..0.5) {
        let base = reset_metrics(p_id, p_pi, a, b).unwrap();
        prop_assert!(reset_metrics(p_id, p_pi, a + da, b).unwrap().f_r <= base.f_r);
        prop_assert!(reset_metrics(p_id, p_pi, a, b + db).unwrap().f_r <= base.f_r);
    }

    #[test]
    fn temperature_roundtrip(log_p in (1e-6f64).ln()..(0.49f64).ln(), omega in 1e9f64..10e9) {
        let p = log_p.exp();
        let t = population_to_temperature(p, omega).unwrap();
        let back = temperature_to_population(t, omega).unwrap();
        prop_assert!((back - p).abs() <= 1e-10 * p);
    }

    #[test]
    fn simplex_projection_is_a_projection(v in prop::collection::vec(-0.5f64..1.5, 3)) {
        let p = project_to_simplex(&v);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|x| *x >= 0.0));
        let again = project_to_simplex(&p);
        for (a, b) in p.iter().zip(&again) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rate_step_is_linear(
        l in 0.0f64..0.2, f_lr in 0.0f64..1.0, w in 0.0f64..1.0, with_lr in any::<bool>(),
        a in prop::collection::vec(0.0f64..1.0, 3), b in prop::collection::vec(0.0f64..1.0, 3),
    ) {
        let s = RBScenario { f_lr, ..RBScenario::fixture(l, chip::rates_q1()) };
        let norm = |v: &[f64]| { let t: f64 = v.iter().sum::<f64>().max(1e-12); [v[0] / t, v[1] / t, v[2] / t] };
        let (pa, pb) = (norm(&a), norm(&b));
        // P_g only, so the subspace split is identical for both inputs
        let va = PopulationVector { p_g: pa[0], p_e: 0.0, p_f: pa[1], p_r: pa[2] };
        let vb = PopulationVector { p_g: pb[0], p_e: 0.0, p_f: pb[1], p_r: pb[2] };
        let mix = PopulationVector { p_g: w * pa[0] + (1.0 - w) * pb[0], p_e: 0.0, p_f: w * pa[1] + (1.0 - w) * pb[1], p_r: w * pa[2] + (1.0 - w) * pb[2] };
        let (sa, sb, sm) = (rate_step(&va, &s, with_lr), rate_step(&vb, &s, with_lr), rate_step(&mix, &s, with_lr));
        prop_assert!((sm.p_g - (w * sa.p_g + (1.0 - w) * sb.p_g)).abs() < 1e-14);
        prop_assert!((sm.p_f - (w * sa.p_f + (1.0 - w) * sb.p_f)).abs() < 1e-14);
        prop_assert!((sm.p_r - (w * sa.p_r + (1.0 - w) * sb.p_r)).abs() < 1e-14);
    }

    #[test]
    fn closed_forms_match_iteration(
        l in 1e-4f64..0.1, f_lr in 0.5f64..1.0, tau in 20e-9f64..500e-9,
        gamma_fe in 0.5e3f64..30e3, kappa in 0.1e6f64..3e6,
    ) {
        let rates = DecayRates { gamma_fe, kappa_r: kappa, ..chip::rates_q1() };
        let s = RBScenario { f_lr, tau_cl: tau, ..RBScenario::fixture(l, rates) };
        let cf = a2_closed_forms(&s);
        prop_assert!((cf.a2_leak - steady_state_iterated(&s, false)[1]).abs() < 1e-9);
        prop_assert!((cf.a2_lr_full - steady_state_iterated(&s, true)[1]).abs() < 1e-9);
        prop_assert!(cf.a2_leak <= 1.0 / 3.0 + 1e-12);
    }

    #[test]
    fn error_model_slopes(l in 0.0f64..0.2) {
        let at = |x: f64| error_models(&RBScenario::fixture(x, chip::rates_q1()));
        prop_assert!((at(l).eps_lr - at(0.0).eps_lr - l / 6.0).abs() < 1e-15);
        prop_assert!((at(l).eps_leak - at(0.0).eps_leak - l / 2.0).abs() < 1e-15);
    }

    #[test]
    fn fit_epsilon_consistent(l0 in 0.95f64..0.999, l2 in 0.9f64..0.99, a2 in 0.05f64..0.3) {
        let truth = rb_parameters(0.45, 0.5, l0, a2, -a2, l2);
        let lengths: Vec<usize> = (0..20).map(|k| 1 + k * 25).collect();
        let fit = fit_rb(&synthetic_curves(&truth, &lengths, 2000, RngStream::new(4, 0)), RBModel::WithLeakage).unwrap();
        prop_assert_eq!(fit.epsilon, RBFitResult::error_per_clifford(fit.lambda0, fit.a2, fit.lambda2));
        prop_assert_eq!(fit.l2, RBFitResult::leakage_rate(fit.a2, fit.lambda2));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn monte_carlo_reproducible(seed in any::<u64>(), l in 0.0f64..0.05) {
        let s = RBScenario { lengths: vec![1, 10, 40], randomizations: 6, ..RBScenario::fixture(l, chip::rates_q1()) };
        let gates = CliffordGateSet::single_qubit();
        let a = monte_carlo_rb(&s, &gates, RngStream::new(seed, 1)).unwrap();
        let b = monte_carlo_rb(&s, &gates, RngStream::new(seed, 1)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn assignment_fidelity_rotation_invariant(angle in 0.0f64..(2.0 * PI), seed in 0u64..100) {
        let truth = ShotModel::fixture();
        let n = 4000;
        let gen = |p: PopulationVector, k: u64| generate_shots(&p, &truth, n, RngStream::new(seed, k)).unwrap();
        let g = gen(PopulationVector::new(1.0, 0.0, 0.0), 0);
        let e = gen(PopulationVector::new(0.0, 1.0, 0.0), 1);
        let f = gen(PopulationVector::new(0.0, 0.0, 1.0), 2);
        let cls = calibrate_classifier(&g, &e, &f).unwrap();
        let base = assignment_fidelity(&g, &e, &cls, None).unwrap();
        let (s, co) = angle.sin_cos();
        let rot = |x: &[f64; 2]| [co * x[0] - s * x[1], s * x[0] + co * x[1]];
        let rotate_set = |set: &ShotSet| ShotSet { shots: set.shots.iter().map(rot).collect(), ..set.clone() };
        let mut rcls = cls.clone();
        for k in 0..3 {
            rcls.centers[k] = rot(&cls.centers[k]);
        }
        let turned = assignment_fidelity(&rotate_set(&g), &rotate_set(&e), &rcls, None).unwrap();
        // a shot lying on the decision boundary to rounding may switch side
        prop_assert!((turned.f_meas - base.f_meas).abs() <= 2.0 / n as f64);
        prop_assert!((turned.f_overlap - base.f_overlap).abs() < 1e-12);
    }
}

#[test]
fn bessel_recurrence() {
    for n in 1..=8 {
        for i in 0..=199 {
            let x = 0.1 + (20.0 - 0.1) * i as f64 / 199.0;
            let lhs = bessel_j(n - 1, x).unwrap() + bessel_j(n + 1, x).unwrap();
            let rhs = 2.0 * n as f64 / x * bessel_j(n, x).unwrap();
            assert!((lhs - rhs).abs() < 1e-10, "n={n} x={x}");
        }
    }
}

fn fft_spectrum(phi_dc: f64, a: f64, m_max: usize) -> DriveSpectrum {
    let n = 4096;
    let cp = chip::coupler();
    let mut buf: Vec<Complex<f64>> =
        (0..n).map(|j| Complex::new(coupler_frequency(phi_dc + a * (2.0 * PI * j as f64 / n as f64).cos(), &cp), 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    DriveSpectrum { omega_bar_c: buf[0].re / n as f64, d: (1..=m_max).map(|m| 2.0 * buf[m].re / n as f64).collect() }
}

#[test]
fn fourier_coefficients_against_fft() {
    let cp = chip::coupler();
    for phi in [0.0, 0.4, 0.8, 1.0, 1.2] {
        for (a, tol) in [(0.02, 0.01), (0.05, 0.01), (0.1, 0.01), (0.2, 0.1), (0.3, 0.1)] {
            let dec = fourier_decompose(&DriveSpec { phi_dc: phi, a_d: a, omega_d: 1e9, k: 2, envelope: None }, &cp, 4).unwrap();
            let fft = fft_spectrum(phi, a, 4);
            let scale = fft.d.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
            for m in 1..=4 {
                assert!((dec.numerical.d_m(m) - fft.d_m(m)).abs() <= 1e-9 * scale, "numerical phi={phi} a={a} m={m}");
                assert!((dec.analytic.d_m(m) - fft.d_m(m)).abs() <= tol * scale, "analytic phi={phi} a={a} m={m}");
            }
            assert!((dec.numerical.omega_bar_c - fft.omega_bar_c).abs() < 1e-3);
        }
    }
}

#[test]
fn small_amplitude_power_law() {
    let cp = chip::coupler();
    for k in [1u32, 2] {
        let omega_d = 1.01e9 / k as f64;
        let g_at = |a: f64| {
            let d = DriveSpec { phi_dc: 1.0, a_d: a, omega_d, k, envelope: None };
            effective_coupling(115e6, -75e6, k, omega_d, &fourier_decompose(&d, &cp, 4).unwrap().numerical).unwrap().value.abs()
        };
        // least-squares slope of log|g̃| against log a_D on [0.001, 0.01]
        let pts: Vec<(f64, f64)> = (0..10).map(|i| 0.001 * 10f64.powf(i as f64 / 9.0)).map(|a| (a.ln(), g_at(a).ln())).collect();
        let n = pts.len() as f64;
        let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope - k as f64).abs() <= 0.05, "k={k} slope={slope}");
    }
}

#[test]
fn envelope_substitution_tracks_pulsed_lindblad() {
    let rates = chip::rates_q1();
    let env = EnvelopeSpec::flat_top(150e-9, 10e-9);
    let times: Vec<f64> = (0..=150).map(|i| i as f64 * 1e-9).collect();
    let sim = swap_lindblad_populations(&times, 2.07e6, rates.gamma1, rates.kappa_r, Some(&env)).unwrap();
    for (t, p) in times.iter().zip(sim) {
        assert!((envelope_weighted_swap(*t, 2.07e6, rates.gamma1, rates.kappa_r, &env) - p).abs() <= 0.02);
    }
}

#[test]
fn ptm_top_row_is_trace_preserving() {
    for g in [0.3e6, 0.91e6, 2.0e6] {
        for duration in [100e-9, 310e-9, 600e-9] {
            let model = LrModel { g_tilde: g, alpha: chip::ALPHA_Q1, rates: chip::rates_q1() };
            let ptm = lr_subspace_ptm(&model, duration).unwrap();
            assert!((ptm.matrix[0][0] - 1.0).abs() < 1e-9);
            for j in 1..4 {
                assert!(ptm.matrix[0][j].abs() < 1e-9);
            }
        }
    }
}

#[test]
fn population_estimates_unbiased() {
    let truth = ShotModel::fixture();
    let gen = |p: PopulationVector, n: usize, s: u64| generate_shots(&p, &truth, n, RngStream::new(77, s)).unwrap();
    let cls = calibrate_classifier(
        &gen(PopulationVector::new(1.0, 0.0, 0.0), 20_000, 0),
        &gen(PopulationVector::new(0.0, 1.0, 0.0), 20_000, 1),
        &gen(PopulationVector::new(0.0, 0.0, 1.0), 20_000, 2),
    )
    .unwrap();
    let target = [0.45, 0.35, 0.2];
    let runs: Vec<[f64; 3]> = (0..200)
        .map(|k| {
            let est = estimate_populations(&cls, &gen(PopulationVector::new(target[0], target[1], target[2]), 2000, 100 + k)).unwrap();
            [est.populations.p_g, est.populations.p_e, est.populations.p_f]
        })
        .collect();
    for i in 0..3 {
        let mean = runs.iter().map(|r| r[i]).sum::<f64>() / 200.0;
        let spread = (runs.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / 199.0).sqrt();
        assert!((mean - target[i]).abs() < spread, "state {i}: mean {mean} spread {spread}");
    }
}

#[test]
fn hamiltonian_fixture_finite() {
    let h = build_hamiltonian(&chip::circuit(3, 3, 3)).unwrap();
    assert!(h.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
}

#[test]
fn cz_generalized_rabi() {
    let circ = fixtures::cz_circuit();
    let drive = fixtures::cz_drive(&circ).unwrap();
    let omega = |w: f64| cz_oscillation(&circ, &DriveSpec { omega_d: w, ..drive.clone() }, fixtures::CZ_G_TILDE, CzOptions::default()).unwrap().1;
    let two_pi = 2.0 * PI;
    // resonance and on-resonance rate from a symmetric pair and the midpoint
    let (w0, dl) = (519.2e6, 0.6e6);
    let (lo, hi, mid) = (omega(w0 - dl), omega(w0 + dl), omega(w0));
    let center = w0 - (hi * hi - lo * lo) / (two_pi * two_pi * 4.0 * dl);
    let rate_sq = mid * mid - (two_pi * (w0 - center)).powi(2);
    // √(4g̃² + δ²) at detunings outside the calibration points
    for w in [w0 - 2.0 * dl, w0 + 2.0 * dl, w0 + 3.0 * dl] {
        let predicted = (rate_sq + (two_pi * (w - center)).powi(2)).sqrt();
        let got = omega(w);
        assert!((got - predicted).abs() <= 0.02 * predicted, "{w}: {got} vs {predicted}");
    }
}
