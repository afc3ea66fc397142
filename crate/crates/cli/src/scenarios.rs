//! Scenario catalogue and execution.

use paracoupler::circuit::{coupler_frequency, CircuitSpec};
use paracoupler::dynamics::{
    damped_swap_population, envelope_weighted_swap, lr_subspace_ptm, lr_swap_time, lr_three_level_populations, swap_lindblad_populations, swap_time, LrModel,
    PopulationVector,
};
use paracoupler::floquet::{
    drive_frame_detuning, effective_coupling, fourier_decompose, k2_closed_forms, manifold, predicted_resonance, schrieffer_wolff_correction, time_domain_coupling,
    DriveSpec, ReadoutOperatingPoint, Transition,
};
use paracoupler::numerics::rng::RngStream;
use paracoupler::protocols::{
    assignment_fidelity, calibrate_classifier, cz_chevron, cz_conditional_phase, estimate_populations, generate_shots, population_to_temperature, reset_metrics,
    resonator_response, thermal_budget, CzOptions, QubitState, ReadoutClassifier, ShotModel, ShotSet, ThermalInputs,
};
use paracoupler::rbsim::{a2_closed_forms, error_models, fit_rb, monte_carlo_rb, periodic_lr_bound, periodic_lr_trace, steady_state_iterated, CliffordGateSet, RBScenario};
use rayon::prelude::*;
use serde_json::json;

use crate::config::*;
use crate::error::CliError;
use crate::output::{fmt_f64, OutputDir};

pub struct CatalogEntry {
    pub scenario: Scenario,
    pub figure: &'static str,
    pub required: &'static str,
    pub optional: &'static str,
}

pub const CATALOG: [CatalogEntry; 9] = [
    CatalogEntry { scenario: Scenario::ResetDynamics, figure: "Fig. 2(a)", required: "-", optional: "amplitudes, duration, points, lindblad" },
    CatalogEntry {
        scenario: Scenario::ResetMetrics,
        figure: "Fig. 2(b)",
        required: "-",
        optional: "p_id, p_pi, p_id_r, p_pi_r, tau_r, tau_m, t_resonator, shots",
    },
    CatalogEntry { scenario: Scenario::LrDynamics, figure: "Fig. 6(a)", required: "-", optional: "g_tilde, duration, points, ptm, ptm_duration" },
    CatalogEntry {
        scenario: Scenario::LeakageRb,
        figure: "Fig. 3(b,c)",
        required: "l_cl",
        optional: "tau_cl, tau_leak, tau_lr, f_lr, n_lr, lengths, randomizations, shots, depolarizing, model",
    },
    CatalogEntry { scenario: Scenario::PeriodicLr, figure: "Fig. 7", required: "l_cl", optional: "n_lr, n_max, tau_cl, tau_leak, tau_lr, f_lr" },
    CatalogEntry {
        scenario: Scenario::ChiMap,
        figure: "Fig. 4(c)",
        required: "-",
        optional: "g_tilde, lab_detuning_min, lab_detuning_max, points, k, operating_g_tilde, operating_lab_detuning, probe_span, probe_points",
    },
    CatalogEntry { scenario: Scenario::ReadoutShots, figure: "Fig. 2(b)", required: "-", optional: "shots, populations, model" },
    CatalogEntry {
        scenario: Scenario::CzChevron,
        figure: "Fig. 8(a)",
        required: "-",
        optional: "center, span, frequencies, t_max, times, phase, phase_center, phase_span, phase_frequencies",
    },
    CatalogEntry { scenario: Scenario::FloquetReport, figure: "-", required: "-", optional: "transition, m_max, time_domain" },
];

pub fn listing() -> String {
    let mut s = format!("{:<16}{:<13}{:<10}{}\n", "SCENARIO", "FIGURE", "REQUIRED", "OPTIONAL");
    for e in &CATALOG {
        s.push_str(&format!("{:<16}{:<13}{:<10}{}\n", e.scenario.name(), e.figure, e.required, e.optional));
    }
    s
}

/// Warnings and flagged numerical failures produced while running.
#[derive(Debug, Default)]
pub struct Report {
    pub warnings: Vec<String>,
    pub flags: Vec<String>,
}

impl Report {
    fn warn(&mut self, w: impl Into<String>) {
        let w = w.into();
        if !self.warnings.contains(&w) {
            self.warnings.push(w);
        }
    }
}

pub fn run(config: &ScenarioConfig, seed: u64, out: &mut OutputDir) -> Result<Report, CliError> {
    let mut report = Report::default();
    let drive = || config.drive.clone().ok_or_else(|| CliError::schema("drive: scenario needs a drive"));
    match &config.params {
        Params::ResetDynamics(p) => reset_dynamics(config, &drive()?, p, out, &mut report)?,
        Params::ResetMetrics(p) => reset_metrics_run(config, p, seed, out, &mut report)?,
        Params::LrDynamics(p) => lr_dynamics(config, p, out, &mut report)?,
        Params::LeakageRb(p) => leakage_rb(config, p, seed, out, &mut report)?,
        Params::PeriodicLr(p) => periodic_lr(config, p, out)?,
        Params::ChiMap(p) => chi_map(config, p, out, &mut report)?,
        Params::ReadoutShots(p) => readout_shots(p, seed, out, &mut report)?,
        Params::CzChevron(p) => cz(config, &drive()?, p, out, &mut report)?,
        Params::FloquetReport(p) => floquet_report(config, &drive()?, p, out, &mut report)?,
    }
    Ok(report)
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (a + b)];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn frequency(circuit: &CircuitSpec, name: &str) -> Result<f64, CliError> {
    Ok(circuit.element(name)?.frequency)
}

/// |g̃| from the k = 2 closed forms with the Schrieffer-Wolff correction, or the
/// single-Bessel estimate for k = 1.
fn parametric_coupling(circuit: &CircuitSpec, drive: &DriveSpec, transition: Transition, report: &mut Report) -> Result<f64, CliError> {
    if drive.a_d == 0.0 {
        return Ok(0.0);
    }
    if drive.k == 2 {
        let mut frame = k2_closed_forms(circuit, drive, transition)?;
        let g = schrieffer_wolff_correction(&mut frame)?;
        frame.warnings.into_iter().for_each(|w| report.warn(format!("a_D = {}: {w}", drive.a_d)));
        return Ok(g.abs());
    }
    let m = manifold(circuit, transition, coupler_frequency(drive.phi_dc, &circuit.coupler))?;
    let spectrum = fourier_decompose(drive, &circuit.coupler, drive.k as usize)?.numerical;
    let est = effective_coupling(m.g_ac, m.g_bc, drive.k, drive.omega_d, &spectrum)?;
    if let Some(w) = est.warning {
        report.warn(format!("a_D = {}: {w}", drive.a_d));
    }
    Ok(est.value.abs())
}

const WEAK_A_D: f64 = 0.07;

fn reset_dynamics(c: &ScenarioConfig, drive: &DriveSpec, p: &ResetDynamicsParams, out: &mut OutputDir, report: &mut Report) -> Result<(), CliError> {
    let amplitudes = p.amplitudes.clone().unwrap_or_else(|| vec![0.0, WEAK_A_D.min(drive.a_d), drive.a_d]);
    let r = &c.rates;
    let times = linspace(0.0, p.duration, p.points);
    let threshold = (r.kappa_r - r.gamma1).abs() / 4.0;
    let mut columns = Vec::new();
    let mut summary = Vec::new();
    for &a in &amplitudes {
        let d = DriveSpec { a_d: a, ..drive.clone() };
        let g = parametric_coupling(&c.circuit, &d, Transition::Reset, report)?;
        let closed: Vec<f64> = times
            .iter()
            .map(|&t| match &d.envelope {
                Some(env) => envelope_weighted_swap(t, g, r.gamma1, r.kappa_r, env),
                None => damped_swap_population(t, g, r.gamma1, r.kappa_r),
            })
            .collect();
        let lindblad = if p.lindblad { Some(swap_lindblad_populations(&times, g, r.gamma1, r.kappa_r, d.envelope.as_ref())?) } else { None };
        if let (Some(l), None) = (&lindblad, &d.envelope) {
            let worst = l.iter().zip(&closed).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            if worst > 1e-4 {
                report.flags.push(format!("a_D = {a}: closed-form and Lindblad P_e differ by {worst:.3e}"));
            }
        }
        let regime = if g > threshold * (1.0 + 1e-9) {
            "underdamped"
        } else if g < threshold * (1.0 - 1e-9) {
            "overdamped"
        } else {
            "critical"
        };
        summary.push(json!({
            "a_d": a,
            "g_tilde": g,
            "regime": regime,
            "swap_time": swap_time(g, r.gamma1, r.kappa_r),
            "p_e_final": closed.last().copied(),
        }));
        columns.push((closed, lindblad));
    }
    let mut header = vec!["t".to_string()];
    for i in 0..columns.len() {
        header.push(format!("P_e_{i}"));
        if p.lindblad {
            header.push(format!("P_e_{i}_lindblad"));
        }
    }
    let rows = times.iter().enumerate().map(|(k, &t)| {
        let mut row = vec![fmt_f64(t)];
        for (closed, lindblad) in &columns {
            row.push(fmt_f64(closed[k]));
            if let Some(l) = lindblad {
                row.push(fmt_f64(l[k]));
            }
        }
        row
    });
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.csv("reset_dynamics.csv", &header, rows)?;
    out.json(
        "summary.json",
        &json!({
            "drive": drive,
            "rates": r,
            "critical_coupling": threshold,
            "curves": summary,
        }),
    )
}

fn reset_metrics_run(c: &ScenarioConfig, p: &ResetMetricsParams, seed: u64, out: &mut OutputDir, report: &mut Report) -> Result<(), CliError> {
    let omega_q = frequency(&c.circuit, "Q1")?;
    let omega_r = frequency(&c.circuit, "R")?;
    let metrics = reset_metrics(p.p_id, p.p_pi, p.p_id_r, p.p_pi_r)?;
    let temperature = |pe: f64| if pe > 0.0 { population_to_temperature(pe, omega_q).map(Some) } else { Ok(None) };
    let inputs = ThermalInputs { p_id: p.p_id, gamma1: c.rates.gamma1, omega_q, omega_r, tau_r: p.tau_r, tau_m: p.tau_m, t_resonator: p.t_resonator };
    let budget = thermal_budget(&inputs)?;
    let mut doc = json!({
        "inputs": {"p_id": p.p_id, "p_pi": p.p_pi, "p_id_r": p.p_id_r, "p_pi_r": p.p_pi_r},
        "metrics": metrics,
        "temperature_idle": temperature(p.p_id)?,
        "temperature_reset": temperature(p.p_id_r)?,
        "thermal_budget": budget,
    });

    if p.shots > 0 {
        let model = ShotModel::fixture();
        let (cls, _) = calibrate(&model, p.shots, seed)?;
        let experiments = [("measure", p.p_id), ("reset", p.p_id_r), ("pi", p.p_pi), ("pi_reset", p.p_pi_r)];
        let sets: Vec<ShotSet> = experiments
            .iter()
            .enumerate()
            .map(|(i, &(_, pe))| generate_shots(&PopulationVector::new(1.0 - pe, pe, 0.0), &model, p.shots, RngStream::new(seed, 3 + i as u64)))
            .collect::<Result<_, _>>()?;
        let mut estimated = Vec::new();
        let mut pe = [0.0; 4];
        for (i, set) in sets.iter().enumerate() {
            let est = estimate_populations(&cls, set)?;
            if est.clamp_correction > 1e-2 {
                report.warn(format!("{}: population estimate clamped onto the simplex by {:.3e}", experiments[i].0, est.clamp_correction));
            }
            pe[i] = est.populations.p_e;
            estimated.push(json!({"experiment": experiments[i].0, "prepared_p_e": experiments[i].1, "estimate": est}));
        }
        let from_shots = reset_metrics(pe[0], pe[2], pe[1], pe[3])?;
        doc["shots"] = json!({"per_experiment": p.shots, "classifier": cls, "estimates": estimated, "metrics": from_shots});

        // histogram of the projection onto the g→e axis
        let g = cls.centers[0];
        let e = cls.centers[1];
        let d = ((e[0] - g[0]).powi(2) + (e[1] - g[1]).powi(2)).sqrt();
        let u = [(e[0] - g[0]) / d, (e[1] - g[1]) / d];
        let (lo, hi, bins) = (-4.0 * cls.sigma, d + 4.0 * cls.sigma, 80usize);
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![[0u64; 4]; bins];
        for (i, set) in sets.iter().enumerate() {
            for s in &set.shots {
                let x = (s[0] - g[0]) * u[0] + (s[1] - g[1]) * u[1];
                let b = ((x - lo) / width).floor();
                if b >= 0.0 && (b as usize) < bins {
                    counts[b as usize][i] += 1;
                }
            }
        }
        let rows = counts.iter().enumerate().map(|(b, c)| {
            let mut row = vec![fmt_f64(lo + (b as f64 + 0.5) * width)];
            row.extend(c.iter().map(|n| n.to_string()));
            row
        });
        out.csv("histogram.csv", &["x", "measure", "reset", "pi", "pi_reset"], rows)?;
    }
    out.json("metrics.json", &doc)
}

/// Calibration sets for |g⟩, |e⟩, |f⟩ on streams 0..3 and the fitted classifier.
fn calibrate(model: &ShotModel, shots: usize, seed: u64) -> Result<(ReadoutClassifier, [ShotSet; 3]), CliError> {
    let pure = [PopulationVector::new(1.0, 0.0, 0.0), PopulationVector::new(0.0, 1.0, 0.0), PopulationVector::new(0.0, 0.0, 1.0)];
    let sets: Vec<ShotSet> = pure.iter().enumerate().map(|(i, p)| generate_shots(p, model, shots, RngStream::new(seed, i as u64))).collect::<Result<_, _>>()?;
    let [g, e, f]: [ShotSet; 3] = sets.try_into().expect("three sets");
    let cls = calibrate_classifier(&g, &e, &f)?;
    Ok((cls, [g, e, f]))
}

fn lr_dynamics(c: &ScenarioConfig, p: &LrDynamicsParams, out: &mut OutputDir, report: &mut Report) -> Result<(), CliError> {
    let alpha = c.circuit.element("Q1")?.anharmonicity;
    let rates = c.rates;
    let times = linspace(0.0, p.duration, p.points);
    let model = LrModel { g_tilde: p.g_tilde, alpha, rates };
    let sim = model.populations(&times)?;
    let rows = times.iter().zip(&sim).map(|(&t, s)| {
        let cf = lr_three_level_populations(t, p.g_tilde, &rates);
        [t, cf.p_g, cf.p_e, cf.p_f, cf.p_r, s.p_g, s.p_e, s.p_f, s.p_r].iter().map(|&v| fmt_f64(v)).collect()
    });
    out.csv(
        "lr_dynamics.csv",
        &["t", "P_g", "P_e", "P_f", "P_R", "P_g_lindblad", "P_e_lindblad", "P_f_lindblad", "P_R_lindblad"],
        rows,
    )?;
    let closed_swap = lr_swap_time(p.g_tilde, &rates);
    let first_min = (1..sim.len().saturating_sub(1)).find(|&i| sim[i].p_f <= sim[i - 1].p_f && sim[i].p_f < sim[i + 1].p_f).map(|i| times[i]);
    let mut doc = json!({
        "g_tilde": p.g_tilde,
        "alpha": alpha,
        "rates": rates,
        "swap_time_closed_form": closed_swap,
        "swap_time_lindblad": first_min,
    });
    if p.ptm {
        let Some(duration) = p.ptm_duration.or(closed_swap) else {
            return Err(CliError::Numerical("no swap time for this coupling; set params.ptm_duration".into()));
        };
        let lr = lr_subspace_ptm(&model, duration)?;
        let delay = lr_subspace_ptm(&LrModel { g_tilde: 0.0, ..model }, duration)?;
        for (name, ptm) in [("LR", &lr), ("delay", &delay)] {
            if !ptm.physical {
                report.flags.push(format!("{name} PTM is not a physical channel (min Choi eigenvalue {:.3e})", ptm.min_choi_eigenvalue));
            }
        }
        doc["ptm"] = json!({
            "duration": duration,
            "lr": lr,
            "lr_fidelity": lr.average_gate_fidelity(),
            "delay": delay,
            "delay_fidelity": delay.average_gate_fidelity(),
        });
    }
    out.json("summary.json", &doc)
}

fn rb_scenario(c: &ScenarioConfig, l_cl: f64, timing: (f64, f64, f64, f64), n_lr: usize) -> RBScenario {
    let (tau_cl, tau_leak, tau_lr, f_lr) = timing;
    RBScenario { l_cl, tau_cl, tau_leak, tau_lr, f_lr, n_lr, ..RBScenario::fixture(l_cl, c.rates) }
}

fn leakage_rb(c: &ScenarioConfig, p: &LeakageRbParams, seed: u64, out: &mut OutputDir, report: &mut Report) -> Result<(), CliError> {
    let l_cl = p.l_cl.ok_or_else(|| CliError::schema("params.l_cl: required"))?;
    let mut s = rb_scenario(c, l_cl, (p.tau_cl, p.tau_leak, p.tau_lr, p.f_lr), p.n_lr);
    s.lengths = p.lengths.clone();
    s.randomizations = p.randomizations;
    s.shots = p.shots;
    let gates = CliffordGateSet::single_qubit().with_depolarizing(p.depolarizing);
    let curves = monte_carlo_rb(&s, &gates, RngStream::new(seed, 0))?;
    let fit = fit_rb(&curves, p.model)?;
    if !fit.converged {
        report.flags.push("RB fit did not converge".into());
    }
    if fit.degenerate {
        report.warn("RB fit: λ₀ and λ₂ within 1 %, leakage amplitude poorly identified");
    }
    if !fit.leakage_resolved {
        report.warn("RB fit: P_f transient below the noise floor, fitted with λ₂ = 1");
    }
    let rows = (0..curves.lengths.len()).map(|i| {
        vec![
            curves.lengths[i].to_string(),
            fmt_f64(curves.p_g_mean[i]),
            fmt_f64(curves.p_g_std[i]),
            fmt_f64(curves.p_f_mean[i]),
            fmt_f64(curves.p_f_std[i]),
        ]
    });
    out.csv("curves.csv", &["n_Cl", "P_g_mean", "P_g_std", "P_f_mean", "P_f_std"], rows)?;
    let with_lr = s.n_lr > 0;
    out.json(
        "fit.json",
        &json!({
            "fit": fit,
            "scenario": s,
            "closed_forms": a2_closed_forms(&s),
            "steady_state_iterated": steady_state_iterated(&s, with_lr).as_slice(),
            "error_models": error_models(&s),
            "samples": curves.samples,
        }),
    )
}

fn periodic_lr(c: &ScenarioConfig, p: &PeriodicLrParams, out: &mut OutputDir) -> Result<(), CliError> {
    let l_cl = p.l_cl.ok_or_else(|| CliError::schema("params.l_cl: required"))?;
    let timing = (p.tau_cl, p.tau_leak, p.tau_lr, p.f_lr);
    let scenarios: Vec<RBScenario> = p.n_lr.iter().map(|&n| rb_scenario(c, l_cl, timing, n)).collect();
    let traces: Vec<Vec<f64>> = scenarios.iter().map(|s| periodic_lr_trace(s, p.n_max)).collect();
    let header: Vec<String> = std::iter::once("n_Cl".to_string()).chain(p.n_lr.iter().map(|n| format!("P_f_N{n}"))).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = (0..=p.n_max).map(|n| std::iter::once(n.to_string()).chain(traces.iter().map(|t| fmt_f64(t[n]))).collect());
    out.csv("periodic_lr.csv", &header, rows)?;
    let summary: Vec<_> = scenarios
        .iter()
        .zip(&traces)
        .map(|(s, t)| {
            // maximum over the last LR period (or the tail for N = 0)
            let window = s.n_lr.max(1).min(t.len());
            let tail_max = t[t.len() - window..].iter().fold(0.0_f64, |m, &v| m.max(v));
            let bound = (s.n_lr > 0).then(|| periodic_lr_bound(s));
            json!({
                "n_lr": s.n_lr,
                "p_f_final": t.last().copied(),
                "p_f_tail_max": tail_max,
                "bound": bound,
                "within_bound": bound.map(|b| tail_max <= b),
            })
        })
        .collect();
    out.json("summary.json", &json!({"l_cl": l_cl, "rates": c.rates, "periods": summary}))
}

fn chi_map(c: &ScenarioConfig, p: &ChiMapParams, out: &mut OutputDir, report: &mut Report) -> Result<(), CliError> {
    let labs = linspace(p.lab_detuning_min, p.lab_detuning_max, p.points);
    let mut rows = Vec::with_capacity(p.g_tilde.len() * labs.len());
    for &g in &p.g_tilde {
        for &lab in &labs {
            let op = ReadoutOperatingPoint::from_lab_detuning(g, lab, p.k, 0.0);
            rows.push(vec![fmt_f64(g), fmt_f64(lab), fmt_f64(op.delta), fmt_f64(op.chi)]);
        }
    }
    out.csv("chi_map.csv", &["g_tilde", "lab_detuning", "delta", "chi"], rows)?;

    let op = ReadoutOperatingPoint::from_lab_detuning(p.operating_g_tilde, p.operating_lab_detuning, p.k, 0.0);
    if let Some(w) = op.dispersive_warning() {
        report.warn(format!("operating point: {w}"));
    }
    let kappa = c.rates.kappa_r;
    let probes = linspace(op.chi - p.probe_span / 2.0, op.chi + p.probe_span / 2.0, p.probe_points);
    let mut resp = Vec::with_capacity(probes.len());
    for &dp in &probes {
        let sg = resonator_response(op.chi, kappa, dp, QubitState::G)?;
        let se = resonator_response(op.chi, kappa, dp, QubitState::E)?;
        resp.push([dp, sg.norm(), se.norm(), sg.re, sg.im, se.re, se.im].iter().map(|&v| fmt_f64(v)).collect());
    }
    out.csv("response.csv", &["delta_p", "abs_S21_g", "abs_S21_e", "re_S21_g", "im_S21_g", "re_S21_e", "im_S21_e"], resp)?;
    out.json(
        "summary.json",
        &json!({
            "k": p.k,
            "kappa_r": kappa,
            "operating_point": op,
            "separation_over_kappa": (op.chi / kappa).abs(),
        }),
    )
}

fn readout_shots(p: &ReadoutShotsParams, seed: u64, out: &mut OutputDir, report: &mut Report) -> Result<(), CliError> {
    let model = p.model.unwrap_or_else(ShotModel::fixture);
    let (cls, [g, e, f]) = calibrate(&model, p.shots, seed)?;
    for (name, set) in [("shots_g.csv", &g), ("shots_e.csv", &e), ("shots_f.csv", &f)] {
        let mut buf = Vec::new();
        set.write_csv(&mut buf)?;
        out.write(name, &buf)?;
    }
    let fidelity = assignment_fidelity(&g, &e, &cls, model.decay)?;
    let mut estimates = Vec::new();
    for (i, pop) in p.populations.iter().enumerate() {
        let set = generate_shots(&PopulationVector::new(pop[0], pop[1], pop[2]), &model, p.shots, RngStream::new(seed, 3 + i as u64))?;
        let mut buf = Vec::new();
        set.write_csv(&mut buf)?;
        out.write(&format!("shots_measured_{i}.csv"), &buf)?;
        let est = estimate_populations(&cls, &set)?;
        if est.clamp_correction > 1e-2 {
            report.warn(format!("populations[{i}]: estimate clamped onto the simplex by {:.3e}", est.clamp_correction));
        }
        estimates.push(json!({"prepared": pop, "estimate": est}));
    }
    out.json("classifier.json", &cls)?;
    out.json("summary.json", &json!({"truth": model, "fidelity": fidelity, "estimates": estimates}))
}

fn cz(c: &ScenarioConfig, drive: &DriveSpec, p: &CzChevronParams, out: &mut OutputDir, report: &mut Report) -> Result<(), CliError> {
    let center = p.center.unwrap_or(drive.omega_d);
    let freqs = linspace(center - p.span / 2.0, center + p.span / 2.0, p.frequencies);
    let times = linspace(0.0, p.t_max, p.times);
    let chevron: Vec<Vec<f64>> = freqs
        .par_iter()
        .map(|&w| cz_chevron(&c.circuit, drive, &[w], &times).map(|mut v| v.remove(0)))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::with_capacity(freqs.len() * times.len());
    for (w, line) in freqs.iter().zip(&chevron) {
        for (t, pee) in times.iter().zip(line) {
            rows.push(vec![fmt_f64(*w), fmt_f64(*t), fmt_f64(*pee)]);
        }
    }
    out.csv("chevron.csv", &["omega_d", "t", "P_ee"], rows)?;
    let g_guess = parametric_coupling(&c.circuit, drive, Transition::ControlledZ, report)?;
    let mut doc = json!({"drive": drive, "g_tilde_estimate": g_guess});
    if p.phase {
        let pc = p.phase_center.unwrap_or(drive.omega_d);
        let ws = linspace(pc - p.phase_span / 2.0, pc + p.phase_span / 2.0, p.phase_frequencies);
        let cal = cz_conditional_phase(&c.circuit, drive, &ws, g_guess, CzOptions::default())?;
        if cal.operating_point.is_none() {
            report.warn("conditional phase does not cross π inside the phase sweep");
        }
        let rows = cal.points.iter().map(|pt| {
            let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
            vec![fmt_f64(pt.omega_d), opt(pt.duration), opt(pt.phase), fmt_f64(pt.amplitude), opt(pt.p_ee_return)]
        });
        out.csv("conditional_phase.csv", &["omega_d", "duration", "phase", "amplitude", "P_ee_return"], rows)?;
        doc["calibration"] = json!({
            "operating_point": cal.operating_point.map(|(w, t)| json!({"omega_d": w, "duration": t})),
            "predicted_resonance": cal.predicted_resonance,
        });
    }
    out.json("summary.json", &doc)
}

fn floquet_report(c: &ScenarioConfig, drive: &DriveSpec, p: &FloquetReportParams, out: &mut OutputDir, report: &mut Report) -> Result<(), CliError> {
    let coupler = &c.circuit.coupler;
    let omega_c = coupler_frequency(drive.phi_dc, coupler);
    let fourier = fourier_decompose(drive, coupler, p.m_max)?;
    let m = manifold(&c.circuit, p.transition, omega_c)?;
    let eq = effective_coupling(m.g_ac, m.g_bc, drive.k, drive.omega_d, &fourier.numerical)?;
    if let Some(w) = &eq.warning {
        report.warn(w.clone());
    }
    let mut doc = json!({
        "drive": drive,
        "transition": p.transition,
        "coupler_frequency_static": omega_c,
        "fourier": fourier,
        "fourier_mismatch": fourier.relative_mismatch(p.m_max),
        "manifold": m,
        "effective_coupling": eq,
    });
    if drive.k == 2 {
        let mut frame = k2_closed_forms(&c.circuit, drive, p.transition)?;
        let g_prime = schrieffer_wolff_correction(&mut frame)?;
        frame.warnings.iter().for_each(|w| report.warn(w.clone()));
        let resonance = predicted_resonance(&frame, &m, 2);
        doc["k2_frame"] = json!(frame);
        doc["g_tilde_prime"] = json!(g_prime);
        doc["predicted_resonance"] = json!(resonance);
        doc["drive_frame_detuning"] = json!(drive_frame_detuning(2, drive.omega_d, &m, &frame));
        if p.time_domain {
            let fit = time_domain_coupling(&m, drive, coupler, resonance, g_prime.abs())?;
            doc["time_domain"] = json!(fit);
        }
    } else if p.time_domain {
        let fit = time_domain_coupling(&m, drive, coupler, drive.omega_d, eq.value.abs())?;
        doc["time_domain"] = json!(fit);
    }
    out.json("report.json", &doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_covers_every_scenario_once() {
        for s in Scenario::ALL {
            assert_eq!(CATALOG.iter().filter(|e| e.scenario == s).count(), 1, "{}", s.name());
        }
    }

    #[test]
    fn listing_lines() {
        let l = listing();
        assert_eq!(l.lines().count(), 10);
        assert!(l.lines().any(|x| x.starts_with("chi-map") && x.contains("Fig. 4(c)")));
        assert!(l.lines().any(|x| x.starts_with("periodic-lr") && x.contains("Fig. 7")));
    }

    #[test]
    fn linspace_endpoints() {
        let v = linspace(1.0, 2.0, 5);
        assert_eq!(v.first(), Some(&1.0));
        assert_eq!(v.last(), Some(&2.0));
        assert_eq!(linspace(1.0, 3.0, 1), vec![2.0]);
    }
}
