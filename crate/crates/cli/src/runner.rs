//! The `run` verb: execute the requested solvers on one window, then write
//! the report, the CSV traces, and the plots. Newton-type solvers are seeded
//! by the contraction phase — plain fixed-point iteration until the residual
//! passes below 1/sigma — and take over from there.

use std::path::{Path, PathBuf};

use tdks_core::neumann::approx_sigma;
use tdks_core::{
    approx_newton_solve, build_constants, charge_drift, convergence_order,
    energy_identity_residuals, initial_iterate, newton_solve, picard_solve, prepare_neumann,
    prepare_newton, ConstantsBundle, Error, IterationTrace, NeumannPolicy, Propagator, Trajectory,
    TruncationMode,
};

use crate::config::{Lowered, RunConfig};
use crate::plot;
use crate::report::{
    approx_newton_csv, ledger_section, mode_tag, newton_csv, num, picard_csv, solver_section,
    Report, SolverSummary, Tag,
};

pub struct Provenance {
    pub config_file: String,
    pub config_sha256: String,
    pub seed: u64,
    pub threads: usize,
}

pub struct RunOutcome {
    pub report_path: PathBuf,
    /// Human-readable descriptions of everything that went wrong; empty on a
    /// clean run.
    pub failures: Vec<String>,
}

struct SolverResult {
    name: &'static str,
    trace: IterationTrace,
    handoff: Option<IterationTrace>,
    trajectory: Option<Trajectory>,
    half_h_sigma: Option<f64>,
    error: Option<String>,
}

/// Pull the partial trace out of a non-convergence error so reports can show
/// what the solver did before giving up.
fn split_error(err: Error) -> (Option<IterationTrace>, String) {
    match err {
        Error::NonConvergence {
            solver,
            residual,
            iterations,
            trace,
        } => (
            Some(*trace),
            format!("{solver} did not converge: residual {residual:.3e} after {iterations} iterations"),
        ),
        other => (None, other.to_string()),
    }
}

pub fn run(
    cfg: &RunConfig,
    low: &Lowered,
    prov: &Provenance,
    out_dir: &Path,
) -> Result<RunOutcome, String> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| format!("cannot create output directory {}: {e}", out_dir.display()))?;

    let mut prop = Propagator::new(low.potential.clone());
    prop.lin_tol = cfg.solver.lin_tol;
    prop.lin_max_iters = cfg.solver.lin_max_sweeps;
    let window = low.window;
    let span = window.span();

    let mut failures: Vec<String> = Vec::new();

    let base_bundle = build_constants(&low.potential, &low.psi0, low.mode, prov.seed)
        .map_err(|e| format!("constants assembly failed: {e}"))?;

    // Enrich the bundle with the correction-solver certificates where they
    // are requested and attainable; failures are recorded, not fatal.
    let base = initial_iterate(&prop, &low.psi0, &window)
        .map_err(|e| format!("reference propagation failed: {e}"))?;
    let mut bundle = base_bundle;
    let mut newton_gate_error: Option<String> = None;
    let mut neumann_gate_error: Option<String> = None;
    if cfg.solver.which.wants_newton() {
        match prepare_newton(&prop, &low.psi0, &base, &window, &bundle, &low.opts, prov.seed) {
            Ok(b) => bundle = b,
            Err(e) => newton_gate_error = Some(e.to_string()),
        }
    }
    if cfg.solver.which.wants_approx_newton() {
        match prepare_neumann(&prop, &low.psi0, &base, &window, &bundle, &low.opts, prov.seed) {
            Ok(b) => bundle = b,
            Err(e) => neumann_gate_error = Some(e.to_string()),
        }
    }

    let mut results: Vec<SolverResult> = Vec::new();

    if cfg.solver.which.wants_picard() {
        let gamma = bundle.gamma_for(span);
        let certified = if gamma < 1.0 { Some(&bundle) } else { None };
        let r = match picard_solve(
            &prop,
            &low.psi0,
            &window,
            certified,
            cfg.solver.picard_tol,
            cfg.solver.picard_max_iters,
        ) {
            Ok((traj, trace)) => SolverResult {
                name: "picard",
                trace,
                handoff: None,
                trajectory: Some(traj),
                half_h_sigma: None,
                error: None,
            },
            Err(e) => {
                let (trace, msg) = split_error(e);
                SolverResult {
                    name: "picard",
                    trace: trace.unwrap_or_else(|| IterationTrace::new("picard", 0.0)),
                    handoff: None,
                    trajectory: None,
                    half_h_sigma: None,
                    error: Some(msg),
                }
            }
        };
        results.push(r);
    }

    if cfg.solver.which.wants_newton() {
        let r = match (&newton_gate_error, bundle.newton) {
            (Some(msg), _) => SolverResult {
                name: "newton",
                trace: IterationTrace::new("newton", 0.0),
                handoff: None,
                trajectory: None,
                half_h_sigma: None,
                error: Some(format!("certification unavailable: {msg}")),
            },
            (None, Some(nc)) => {
                run_corrected(&prop, low, cfg, &bundle, nc.sigma, 0.5 * nc.h * nc.sigma, |u0| {
                    newton_solve(&prop, &low.psi0, u0, &bundle, &low.opts)
                }, "newton")
            }
            (None, None) => SolverResult {
                name: "newton",
                trace: IterationTrace::new("newton", 0.0),
                handoff: None,
                trajectory: None,
                half_h_sigma: None,
                error: Some("certification unavailable: constants were not measured".into()),
            },
        };
        results.push(r);
    }

    if cfg.solver.which.wants_approx_newton() {
        let policy = NeumannPolicy {
            n_max: cfg.solver.truncation_cap,
            mode: TruncationMode::Adaptive,
        };
        let r = match (&neumann_gate_error, bundle.neumann) {
            (Some(msg), _) => SolverResult {
                name: "approx_newton",
                trace: IterationTrace::new("approx-newton", 0.0),
                handoff: None,
                trajectory: None,
                half_h_sigma: None,
                error: Some(format!("certification unavailable: {msg}")),
            },
            (None, Some(nb)) => {
                let sigma = approx_sigma(nb.m_const, low.opts.h, low.opts.alpha, bundle.r);
                run_corrected(&prop, low, cfg, &bundle, sigma, 0.5 * low.opts.h * sigma, |u0| {
                    approx_newton_solve(&prop, &low.psi0, u0, &bundle, &policy, &low.opts, prov.seed)
                }, "approx_newton")
            }
            (None, None) => SolverResult {
                name: "approx_newton",
                trace: IterationTrace::new("approx-newton", 0.0),
                handoff: None,
                trajectory: None,
                half_h_sigma: None,
                error: Some("certification unavailable: constants were not measured".into()),
            },
        };
        results.push(r);
    }

    // Report assembly.
    let mut report = Report::new("tdks run report");
    report.line("binary_version", env!("CARGO_PKG_VERSION"));
    report.line("config_file", &prov.config_file);
    report.line("config_sha256", &prov.config_sha256);
    report.line("seed", prov.seed.to_string());
    report.line("threads", prov.threads.to_string());
    report.line("constants_mode", bundle.mode.label());
    report.line("solvers", cfg.solver.which.label());
    report.line(
        "grid",
        format!(
            "dim={} points_per_axis={} spacing={}",
            low.grid.dim(),
            low.grid.points_per_axis(),
            num(low.grid.spacing())
        ),
    );
    report.line(
        "window",
        format!(
            "t0={} dt={} knots={} span={}",
            num(window.t0),
            num(window.dt),
            window.knots,
            num(span)
        ),
    );
    report.line("orbitals", low.psi0.n_orbitals().to_string());

    ledger_section(&mut report, &bundle, span);
    if let Some(msg) = &newton_gate_error {
        report.line("newton_gate", format!("failed: {msg}"));
    }
    if let Some(msg) = &neumann_gate_error {
        report.line("truncated_inverse_gate", format!("failed: {msg}"));
    }

    for r in &results {
        let (csv_name, csv_text) = match (r.name, r.half_h_sigma) {
            ("picard", _) => ("picard.csv".to_string(), picard_csv(&r.trace)),
            ("newton", Some(hhs)) => ("newton.csv".to_string(), newton_csv(&r.trace, hhs)),
            ("approx_newton", Some(hhs)) => (
                "approx_newton.csv".to_string(),
                approx_newton_csv(
                    &r.trace,
                    hhs,
                    bundle.neumann.map(|nb| nb.m_const).unwrap_or(f64::NAN),
                ),
            ),
            (name, _) => (format!("{name}.csv"), picard_csv(&r.trace)),
        };

        let mut csv_path = None;
        let mut plot_path = None;
        if !r.trace.residual_norms.is_empty() {
            std::fs::write(out_dir.join(&csv_name), &csv_text)
                .map_err(|e| format!("cannot write {csv_name}: {e}"))?;
            csv_path = Some(csv_name.clone());
            if cfg.run.plots {
                let svg_name = format!("residual_{}.svg", r.name);
                let svg = plot::residual_plot(r.name, &r.trace.residual_norms);
                std::fs::write(out_dir.join(&svg_name), svg)
                    .map_err(|e| format!("cannot write {svg_name}: {e}"))?;
                plot_path = Some(svg_name);
            }
        }

        let (drift, energy_max) = match &r.trajectory {
            Some(traj) => {
                let d = charge_drift(traj);
                let e = energy_identity_residuals(&low.potential, traj)
                    .ok()
                    .map(|v| v.iter().fold(0.0f64, |m, x| m.max(x.abs())));
                (Some(d), e)
            }
            None => (None, None),
        };

        let summary = SolverSummary {
            name: r.name,
            trace: &r.trace,
            handoff: r.handoff.as_ref(),
            charge_drift: drift,
            energy_identity_max: energy_max,
            order: convergence_order(&r.trace).ok(),
            csv: csv_path,
            plot: plot_path,
        };
        solver_section(&mut report, &summary);
        if let Some(msg) = &r.error {
            report.line("failed", msg);
            failures.push(format!("{}: {msg}", r.name));
        }
    }

    // Cross-solver agreement: certified envelope when the window contracts.
    let solved: Vec<(&str, &Trajectory, f64)> = results
        .iter()
        .filter_map(|r| {
            r.trajectory
                .as_ref()
                .map(|t| (r.name, t, r.trace.final_residual().unwrap_or(f64::NAN)))
        })
        .collect();
    if solved.len() >= 2 {
        report.section("solver agreement");
        let gamma = bundle.gamma_for(span);
        for i in 0..solved.len() {
            for j in (i + 1)..solved.len() {
                let (na, ta, ra) = solved[i];
                let (nb_, tb, rb) = solved[j];
                let diff = ta
                    .sub(tb)
                    .map(|d| d.sup_norm())
                    .map_err(|e| e.to_string())?;
                report.value(&format!("{na}_vs_{nb_}"), diff, Tag::Measured);
                if gamma < 1.0 {
                    let envelope = (ra + rb) / (1.0 - gamma);
                    report.value(
                        &format!("{na}_vs_{nb_}_envelope"),
                        envelope,
                        mode_tag(bundle.mode),
                    );
                    if diff > 10.0 * envelope {
                        failures.push(format!(
                            "{na} and {nb_} disagree: {} above the residual envelope {}",
                            num(diff),
                            num(envelope)
                        ));
                    }
                }
            }
        }
    }

    // Energy trace plot from the first solved trajectory.
    if cfg.run.plots {
        if let Some((_, traj, _)) = solved.first() {
            let rho = traj.density_path();
            let mut times = Vec::with_capacity(traj.len());
            let mut script = Vec::with_capacity(traj.len());
            let mut physical = Vec::with_capacity(traj.len());
            for k in 0..traj.len() {
                let e = low
                    .potential
                    .energy(traj.state(k), traj.time(k), &rho)
                    .map_err(|e| e.to_string())?;
                times.push(traj.time(k));
                script.push(e.script);
                physical.push(e.physical);
            }
            let svg = plot::energy_plot(&times, &script, &physical);
            std::fs::write(out_dir.join("energy.svg"), svg)
                .map_err(|e| format!("cannot write energy.svg: {e}"))?;
            report.section("plots");
            report.line("energy_plot", "energy.svg");
        }
    }

    if !failures.is_empty() {
        report.section("failures");
        for f in &failures {
            report.line("error", f);
        }
    }

    let report_path = out_dir.join("report.txt");
    std::fs::write(&report_path, report.text())
        .map_err(|e| format!("cannot write report: {e}"))?;

    Ok(RunOutcome {
        report_path,
        failures,
    })
}

/// Contraction handoff plus corrected iteration: plain fixed-point steps
/// until the residual reaches 1/sigma, then the supplied corrected solver.
fn run_corrected<F>(
    prop: &Propagator,
    low: &Lowered,
    cfg: &RunConfig,
    _bundle: &ConstantsBundle,
    sigma: f64,
    half_h_sigma: f64,
    solve: F,
    name: &'static str,
) -> SolverResult
where
    F: FnOnce(&Trajectory) -> tdks_core::Result<(Trajectory, IterationTrace)>,
{
    let hand_target = 1.0 / sigma;
    let handoff = picard_solve(
        prop,
        &low.psi0,
        &low.window,
        None,
        hand_target,
        cfg.solver.picard_max_iters,
    );
    match handoff {
        Ok((u0, hand_trace)) => match solve(&u0) {
            Ok((traj, trace)) => SolverResult {
                name,
                trace,
                handoff: Some(hand_trace),
                trajectory: Some(traj),
                half_h_sigma: Some(half_h_sigma),
                error: None,
            },
            Err(e) => {
                let (trace, msg) = split_error(e);
                SolverResult {
                    name,
                    trace: trace.unwrap_or_else(|| IterationTrace::new(name, 0.0)),
                    handoff: Some(hand_trace),
                    trajectory: None,
                    half_h_sigma: Some(half_h_sigma),
                    error: Some(msg),
                }
            }
        },
        Err(e) => {
            let (trace, msg) = split_error(e);
            SolverResult {
                name,
                trace: IterationTrace::new(name, 0.0),
                handoff: trace,
                trajectory: None,
                half_h_sigma: Some(half_h_sigma),
                error: Some(format!("contraction handoff failed: {msg}")),
            }
        }
    }
}
