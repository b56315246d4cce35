//! Run report and trace serialization. The report is plain text with a fixed
//! key order; every number carries a provenance tag so a reader can tell a
//! certified bound from a measurement at a glance. Wall-clock data never
//! enters these files: two runs of the same config and seed must agree byte
//! for byte.

use std::fmt::Write as _;

use tdks_core::{ConstantsBundle, ConstantsMode, IterationTrace};

/// Provenance tag attached to every reported number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    /// Closed-form bound assembled from the model data.
    Analytic,
    /// Sampled operator norm, inflated by a safety margin.
    Empirical,
    /// Direct measurement on the computed objects.
    Measured,
    /// Protocol knob chosen by the configuration, not derived.
    Parameter,
}

impl Tag {
    fn label(self) -> &'static str {
        match self {
            Tag::Analytic => "analytic",
            Tag::Empirical => "empirical",
            Tag::Measured => "measured",
            Tag::Parameter => "parameter",
        }
    }
}

pub fn mode_tag(mode: ConstantsMode) -> Tag {
    match mode {
        ConstantsMode::Analytic => Tag::Analytic,
        ConstantsMode::Empirical => Tag::Empirical,
    }
}

/// Deterministic scientific rendering used for every number in the report
/// and the CSV traces.
pub fn num(x: f64) -> String {
    if x == 0.0 {
        "0.0".into()
    } else {
        format!("{x:.12e}")
    }
}

/// Text report under construction. Lines are appended in a fixed order, so
/// identical runs serialize identically.
pub struct Report {
    buf: String,
}

impl Report {
    pub fn new(title: &str) -> Self {
        let mut buf = String::new();
        let _ = writeln!(buf, "{title}");
        let _ = writeln!(buf, "{}", "=".repeat(title.len()));
        Report { buf }
    }

    pub fn section(&mut self, name: &str) {
        let _ = writeln!(self.buf, "\n{name}");
        let _ = writeln!(self.buf, "{}", "-".repeat(name.len()));
    }

    pub fn line(&mut self, key: &str, value: impl AsRef<str>) {
        let _ = writeln!(self.buf, "{key}: {}", value.as_ref());
    }

    pub fn value(&mut self, key: &str, x: f64, tag: Tag) {
        let _ = writeln!(self.buf, "{key}: {} [{}]", num(x), tag.label());
    }

    pub fn text(&self) -> &str {
        &self.buf
    }
}

/// Constants ledger in a fixed key order. `span` is the window length the
/// contraction factors refer to.
pub fn ledger_section(report: &mut Report, b: &ConstantsBundle, span: f64) {
    let m = mode_tag(b.mode);
    report.section("constants ledger");
    report.line("mode", b.mode.label());
    report.value("charge", b.charge, Tag::Measured);
    report.value("initial_energy_norm", b.psi0_h10, Tag::Measured);
    report.value("initial_energy", b.energy0, Tag::Measured);
    report.value("embedding_l6", b.embeddings.e1, Tag::Analytic);
    report.value("embedding_l2", b.embeddings.e2, Tag::Analytic);
    report.value("embedding_l4", b.embeddings.e3, Tag::Analytic);
    report.value("interaction_density", b.c0, m);
    report.value("interaction_density_kernel", b.c0_hartree, m);
    report.value("interaction_density_history", b.c0_xc, m);
    report.value("potential_lipschitz", b.c_lipschitz, m);
    report.value("evolution_bound", b.u_bound, m);
    report.value("energy_radius", b.r0, m);
    report.value("ball_radius", b.r, m);
    report.value("drive_rate_sup", b.sup_dv_dt, m);
    report.value("confinement_gradient_l3", b.grad_v_l3, m);
    report.value("window_span", span, Tag::Parameter);
    report.value("contraction_factor", b.gamma_for(span), m);
    report.value("contraction_factor_continuation", b.gamma_continuation(span), m);
    report.line(
        "contraction_certified",
        if b.gamma_for(span) < 1.0 { "yes" } else { "no" },
    );

    match &b.newton {
        Some(nc) => {
            report.value("newton_tau", nc.tau, Tag::Parameter);
            report.value("newton_alpha", nc.alpha, Tag::Parameter);
            report.value("newton_ratio", nc.h, Tag::Parameter);
            report.value("newton_kappa", nc.kappa, m);
            report.value("newton_sigma", nc.sigma, m);
            report.value("newton_inverse_norm", nc.inverse_norm, m);
            report.value("newton_derivative_lipschitz", nc.c_lip, m);
            // Consistency gate of the correction protocol, recomputed here so
            // the ledger shows both sides.
            let lhs = nc.inverse_norm * nc.c_lip * b.r;
            report.value("newton_consistency_lhs", lhs, m);
            report.value("newton_consistency_tau", nc.tau, Tag::Parameter);
            report.line(
                "newton_consistency",
                if lhs <= nc.tau { "satisfied" } else { "violated" },
            );
        }
        None => report.line("newton_constants", "not certified"),
    }
    match &b.neumann {
        Some(nb) => {
            report.value("truncated_inverse_bound", nb.m_const, m);
            report.value("linearization_bound", nb.k0, m);
        }
        None => report.line("truncated_inverse_constants", "not certified"),
    }
}

/// One solver's outcome in the report. `handoff` carries the contraction
/// phase that produced the Newton start, when there was one.
pub struct SolverSummary<'a> {
    pub name: &'a str,
    pub trace: &'a IterationTrace,
    pub handoff: Option<&'a IterationTrace>,
    pub charge_drift: Option<f64>,
    pub energy_identity_max: Option<f64>,
    pub order: Option<(f64, f64)>,
    pub csv: Option<String>,
    pub plot: Option<String>,
}

pub fn solver_section(report: &mut Report, s: &SolverSummary) {
    report.section(&format!("solver {}", s.name));
    if let Some(h) = s.handoff {
        report.line("handoff_map_applications", h.residual_norms.len().to_string());
        if let Some(r) = h.final_residual() {
            report.value("handoff_residual", r, Tag::Measured);
        }
    }
    report.line(
        "map_applications",
        s.trace.residual_norms.len().to_string(),
    );
    report.line("update_steps", s.trace.iterations().to_string());
    report.line("converged", if s.trace.converged { "yes" } else { "no" });
    if let Some(r) = s.trace.final_residual() {
        report.value("final_residual", r, Tag::Measured);
    }
    report.value("residual_floor", s.trace.residual_floor, Tag::Parameter);
    if let Some(q) = s.trace.q_bound {
        report.value("contraction_factor", q, Tag::Measured);
    }
    if let Some(n) = s.trace.predicted_iterations {
        report.line("predicted_iterations", n.to_string());
    }
    match s.order {
        Some((order, r2)) => {
            report.value("fitted_order", order, Tag::Measured);
            report.value("fitted_order_r2", r2, Tag::Measured);
        }
        None => report.line(
            "fitted_order",
            "n/a (fewer than 3 residuals above the floor)",
        ),
    }
    if s.trace.truncation_capped {
        report.line("truncation_capped", "yes");
    }
    if let Some(d) = s.charge_drift {
        report.value("charge_drift", d, Tag::Measured);
    }
    if let Some(e) = s.energy_identity_max {
        report.value("energy_identity_max", e, Tag::Measured);
    }
    if let Some(csv) = &s.csv {
        report.line("trace_csv", csv);
    }
    if let Some(plot) = &s.plot {
        report.line("residual_plot", plot);
    }
}

/// CSV trace files. Columns depend on the solver family; wall times are
/// deliberately absent. The Kantorovich column pair spells out the quadratic
/// step inequality r_k <= (ratio sigma / 2) r_{k-1}^2; the truncation columns
/// pair each measured defect with its certified ceiling M r_{k-1}.
pub fn picard_csv(trace: &IterationTrace) -> String {
    let mut out = String::from("iter,residual,step_norm,contraction_ratio\n");
    let r = &trace.residual_norms;
    for k in 0..r.len() {
        let ratio = if k == 0 || r[k - 1] == 0.0 {
            String::new()
        } else {
            num(r[k] / r[k - 1])
        };
        let _ = writeln!(out, "{k},{},{},{ratio}", num(r[k]), num(trace.step_norms[k]));
    }
    out
}

pub fn newton_csv(trace: &IterationTrace, half_h_sigma: f64) -> String {
    let mut out = String::from("iter,residual,step_norm,quadratic_lhs,quadratic_rhs\n");
    let r = &trace.residual_norms;
    for k in 0..r.len() {
        let (lhs, rhs) = if k == 0 {
            (String::new(), String::new())
        } else {
            (num(r[k]), num(half_h_sigma * r[k - 1] * r[k - 1]))
        };
        let _ = writeln!(
            out,
            "{k},{},{},{lhs},{rhs}",
            num(r[k]),
            num(trace.step_norms[k])
        );
    }
    out
}

pub fn approx_newton_csv(trace: &IterationTrace, half_h_sigma: f64, m_const: f64) -> String {
    let mut out = String::from(
        "iter,residual,step_norm,quadratic_lhs,quadratic_rhs,truncation_order,defect_measured,defect_ceiling\n",
    );
    let r = &trace.residual_norms;
    for k in 0..r.len() {
        let (lhs, rhs) = if k == 0 {
            (String::new(), String::new())
        } else {
            (num(r[k]), num(half_h_sigma * r[k - 1] * r[k - 1]))
        };
        // Orders and defects are attributed to the iterate they produced, so
        // row 0 has none.
        let (ord, defect, ceiling) = if k == 0 {
            (String::new(), String::new(), String::new())
        } else {
            let i = k - 1;
            (
                trace
                    .neumann_orders
                    .get(i)
                    .map(|n| n.to_string())
                    .unwrap_or_default(),
                trace
                    .neumann_defects
                    .get(i)
                    .map(|d| num(*d))
                    .unwrap_or_default(),
                num(m_const * r[k - 1]),
            )
        };
        let _ = writeln!(
            out,
            "{k},{},{},{lhs},{rhs},{ord},{defect},{ceiling}",
            num(r[k]),
            num(trace.step_norms[k])
        );
    }
    out
}
