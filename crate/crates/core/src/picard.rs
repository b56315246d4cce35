//! Contraction-mapping driver: successive substitution on the propagation
//! map, with certified per-window contraction factors, and continuation of a
//! long horizon through a chain of short windows.

use crate::constants::ConstantsBundle;
use crate::error::{Error, Result};
use crate::evolution::{Propagator, WindowSpec};
use crate::grid::{OrbitalSet, Trajectory};
use crate::trace::IterationTrace;
use ndarray::Array1;

/// Reference iterate: propagation of the initial state with the charge
/// frozen to zero. It needs no self-consistency information and lies in the
/// invariant ball by construction.
pub fn initial_iterate(
    prop: &Propagator,
    psi0: &OrbitalSet,
    window: &WindowSpec,
) -> Result<Trajectory> {
    let rho = window.zero_density(*prop.grid())?;
    prop.propagate(psi0, &rho)
}

/// Iteration count predicted by the geometric a-priori estimate: smallest n
/// with q^n / (1 - q) * first_step <= target.
fn predicted_count(q: f64, first_step: f64, target: f64) -> usize {
    if first_step <= target {
        return 0;
    }
    if q <= 0.0 {
        return 1;
    }
    let n = ((target * (1.0 - q) / first_step).ln() / q.ln()).ceil();
    n.max(1.0) as usize
}

/// Successive substitution u <- K(u) from the zero-charge reference until
/// the fixed-point residual sup-norm reaches the target. When a constants
/// bundle is supplied, the window is refused unless its certified
/// contraction factor is below one, and the factor plus the a-priori
/// iteration count are recorded in the trace.
pub fn picard_solve(
    prop: &Propagator,
    psi0: &OrbitalSet,
    window: &WindowSpec,
    bundle: Option<&ConstantsBundle>,
    target_residual: f64,
    max_iters: usize,
) -> Result<(Trajectory, IterationTrace)> {
    if !(target_residual > 0.0 && target_residual.is_finite()) {
        return Err(Error::Config(format!(
            "target residual {target_residual} must be positive"
        )));
    }
    let mut trace = IterationTrace::new("picard", target_residual);
    let q = match bundle {
        Some(b) => {
            let q = b.gamma_for(window.span());
            if q >= 1.0 {
                return Err(Error::WindowTooLong { bound: q });
            }
            trace.q_bound = Some(q);
            Some(q)
        }
        None => None,
    };

    let mut current = initial_iterate(prop, psi0, window)?;
    for iter in 0..max_iters.max(1) {
        let tick = std::time::Instant::now();
        let image = prop.fixed_point_map(psi0, &current)?;
        let residual = image.sub(&current)?.sup_norm();
        let step = if iter == 0 {
            0.0
        } else {
            trace.residual_norms[iter - 1]
        };
        trace.push(residual, step);
        trace.wall_times.push(tick.elapsed().as_secs_f64());
        if iter == 0 {
            if let Some(q) = q {
                trace.predicted_iterations = Some(predicted_count(q, residual, target_residual));
            }
        }
        if residual <= target_residual {
            trace.converged = true;
            return Ok((current, trace));
        }
        current = image;
    }
    Err(Error::NonConvergence {
        solver: "picard",
        residual: trace.final_residual().unwrap_or(f64::INFINITY),
        iterations: trace.iterations(),
        trace: Box::new(trace),
    })
}

/// Solve across a long window by chaining sub-windows whose certified
/// contraction factor stays below `cap`. The chain uses the fewest uniform
/// sub-windows that respect the cap while landing boundaries on knots (the
/// count is rounded up to a divisor of the step count). Every sub-window is
/// handed to `solve_window` with its own propagator: the terminal state of
/// one window is the initial state of the next, and when the model carries a
/// history term, the accumulated history is threaded through as the next
/// window's carry field.
pub fn continue_in_time<F>(
    prop: &Propagator,
    psi0: &OrbitalSet,
    window: &WindowSpec,
    bundle: &ConstantsBundle,
    cap: f64,
    mut solve_window: F,
) -> Result<(Trajectory, Vec<IterationTrace>)>
where
    F: FnMut(&Propagator, &OrbitalSet, &WindowSpec, &ConstantsBundle) -> Result<(Trajectory, IterationTrace)>,
{
    if !(cap > 0.0 && cap < 1.0) {
        return Err(Error::Config(format!("contraction cap {cap} must lie in (0, 1)")));
    }
    let total_steps = window.steps();
    let gamma_total = bundle.gamma_continuation(window.span());
    let mut count = if gamma_total > 0.0 {
        ((gamma_total / cap).ceil() as usize).max(1)
    } else {
        1
    };
    if count > total_steps {
        // Even single-step windows are not certifiably contractive.
        return Err(Error::WindowTooLong {
            bound: bundle.gamma_continuation(window.dt),
        });
    }
    while total_steps % count != 0 {
        count += 1;
    }
    let steps_per = total_steps / count;

    let mut states: Vec<OrbitalSet> = Vec::with_capacity(window.knots);
    let mut traces = Vec::with_capacity(count);
    let mut start_state = psi0.clone();
    let mut carry: Option<Array1<f64>> = None;
    for w in 0..count {
        let t0 = window.t0 + (w * steps_per) as f64 * window.dt;
        let spec = WindowSpec::new(t0, window.dt, steps_per + 1)?;
        let mut pot_w = prop.pot().clone();
        if let Some(c) = carry.take() {
            pot_w = pot_w.with_phi_carry(c)?;
        }
        let mut prop_w = Propagator::new(pot_w);
        prop_w.lin_tol = prop.lin_tol;
        prop_w.lin_max_iters = prop.lin_max_iters;

        let (traj, trace) = solve_window(&prop_w, &start_state, &spec, bundle)?;
        if w + 1 < count && prop.pot().has_xc() {
            // Next window's carry: total accumulated history at the boundary
            // minus the base term the next window will rebuild from its own
            // initial density.
            let rho_w = traj.density_path();
            let phi_end = prop_w.pot().xc_phi(&rho_w, spec.t_end())?;
            let base_next = prop_w.pot().xc_rate_of(rho_w.field(rho_w.len() - 1))?;
            carry = Some(phi_end - base_next);
        }
        if w == 0 {
            states.extend(traj.states().iter().cloned());
        } else {
            states.extend(traj.states()[1..].iter().cloned());
        }
        start_state = traj.last().clone();
        traces.push(trace);
    }
    Ok((Trajectory::new(window.t0, window.dt, states)?, traces))
}

/// Continuation with plain contraction iteration in every sub-window.
pub fn picard_continuation(
    prop: &Propagator,
    psi0: &OrbitalSet,
    window: &WindowSpec,
    bundle: &ConstantsBundle,
    cap: f64,
    target_residual: f64,
    max_iters: usize,
) -> Result<(Trajectory, Vec<IterationTrace>)> {
    continue_in_time(prop, psi0, window, bundle, cap, |p, s, w, b| {
        picard_solve(p, s, w, Some(b), target_residual, max_iters)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{build_constants, ConstantsMode};
    use crate::grid::{Grid, NormKind};
    use crate::potential::{ExternalPotential, HartreeSpec, Potential, PotentialModel, XcSpec};
    use crate::sampling::{rng, random_state};

    fn grid() -> Grid {
        Grid::new_1d(40, 2.0).unwrap()
    }

    fn state(g: &Grid) -> OrbitalSet {
        let mut psi0 = random_state(g, 1, &mut rng(21), None);
        let l2 = psi0.norm(NormKind::L2);
        psi0 = psi0.scaled(num_complex::Complex64::new(1.0 / l2, 0.0));
        psi0
    }

    fn weak_model() -> PotentialModel {
        PotentialModel {
            external: ExternalPotential::Harmonic { strength: 1.0 },
            hartree: Some(HartreeSpec {
                coupling: 0.05,
                radius: None,
            }),
            xc: None,
            hbar: 1.0,
            mass: 1.0,
        }
    }

    #[test]
    fn decoupled_map_converges_in_one_evaluation() {
        let g = grid();
        let psi0 = state(&g);
        let model = PotentialModel {
            external: ExternalPotential::Harmonic { strength: 1.0 },
            hartree: None,
            xc: None,
            hbar: 1.0,
            mass: 1.0,
        };
        let pot = Potential::bind(model, g, 0.2).unwrap();
        let prop = Propagator::new(pot);
        let window = WindowSpec::new(0.0, 0.05, 5).unwrap();
        let (traj, trace) = picard_solve(&prop, &psi0, &window, None, 1e-12, 10).unwrap();
        assert!(trace.converged);
        // The map ignores its input, so the reference iterate is already the
        // fixed point and the very first residual vanishes.
        assert_eq!(trace.residual_norms.len(), 1);
        assert_eq!(trace.residual_norms[0], 0.0);
        assert_eq!(traj.len(), 5);
    }

    #[test]
    fn residual_ratios_stay_below_certified_gamma() {
        let g = grid();
        let psi0 = state(&g);
        let pot = Potential::bind(weak_model(), g, 0.04).unwrap();
        let bundle = build_constants(&pot, &psi0, ConstantsMode::Analytic, 3).unwrap();
        let prop = Propagator::new(pot);
        let window = WindowSpec::new(0.0, 0.005, 9).unwrap();
        let q = bundle.gamma_for(window.span());
        assert!(q < 1.0, "test config must be certifiable, got gamma = {q}");
        let (traj, trace) =
            picard_solve(&prop, &psi0, &window, Some(&bundle), 1e-11, 50).unwrap();
        assert!(trace.converged);
        assert_eq!(trace.q_bound, Some(q));
        // Every iterate stays in the invariant ball.
        assert!(traj.sup_norm() <= bundle.r);
        // Measured decay never beats the certificate in the wrong direction:
        // ratios above the noise floor stay below gamma.
        let resid = trace.residuals_above_floor();
        for pair in resid.windows(2) {
            assert!(
                pair[1] <= q * pair[0] * (1.0 + 1e-9),
                "ratio {} exceeds certified {q}",
                pair[1] / pair[0]
            );
        }
        if let Some(n) = trace.predicted_iterations {
            assert!(trace.iterations() <= n + 1);
        }
    }

    #[test]
    fn geometric_tail_bound_dominates_true_error() {
        let g = grid();
        let psi0 = state(&g);
        let pot = Potential::bind(weak_model(), g, 0.04).unwrap();
        let bundle = build_constants(&pot, &psi0, ConstantsMode::Analytic, 3).unwrap();
        let prop = Propagator::new(pot);
        let window = WindowSpec::new(0.0, 0.005, 9).unwrap();
        let q = bundle.gamma_for(window.span());
        let (fixed, _) = picard_solve(&prop, &psi0, &window, Some(&bundle), 1e-13, 60).unwrap();

        let mut u = initial_iterate(&prop, &psi0, &window).unwrap();
        let u1 = prop.fixed_point_map(&psi0, &u).unwrap();
        let first_step = u1.sub(&u).unwrap().sup_norm();
        let mut qn = 1.0;
        for _ in 0..8 {
            let err = u.sub(&fixed).unwrap().sup_norm();
            let bound = qn / (1.0 - q) * first_step;
            assert!(
                err <= bound * (1.0 + 1e-9) + 1e-12,
                "error {err} exceeds tail bound {bound}"
            );
            u = prop.fixed_point_map(&psi0, &u).unwrap();
            qn *= q;
        }
    }

    #[test]
    fn uncertifiable_window_is_refused() {
        let g = grid();
        let psi0 = state(&g);
        let pot = Potential::bind(weak_model(), g, 0.04).unwrap();
        let bundle = build_constants(&pot, &psi0, ConstantsMode::Analytic, 3).unwrap();
        let prop = Propagator::new(pot);
        // Stretch the window until the linear-in-time certificate passes 1.
        let rate = bundle.gamma_for(1.0);
        let t_long = 1.5 / rate;
        let window = WindowSpec::new(0.0, t_long / 4.0, 5).unwrap();
        let err = picard_solve(&prop, &psi0, &window, Some(&bundle), 1e-10, 10).unwrap_err();
        assert!(matches!(err, Error::WindowTooLong { .. }), "got {err}");
    }

    #[test]
    fn continuation_matches_single_window_solve() {
        let g = grid();
        let psi0 = state(&g);
        let pot = Potential::bind(weak_model(), g, 0.04).unwrap();
        let bundle = build_constants(&pot, &psi0, ConstantsMode::Analytic, 3).unwrap();
        let prop = Propagator::new(pot);
        let window = WindowSpec::new(0.0, 0.005, 9).unwrap();
        let tol = 1e-12;
        let (single, _) = picard_solve(&prop, &psi0, &window, Some(&bundle), tol, 60).unwrap();

        // Cap chosen so the certificate demands exactly two sub-windows.
        let cap = 0.6 * bundle.gamma_continuation(window.span());
        let (chained, traces) =
            picard_continuation(&prop, &psi0, &window, &bundle, cap, tol, 60).unwrap();
        assert_eq!(traces.len(), 2);
        assert_eq!(chained.len(), window.knots);
        let diff = chained.sub(&single).unwrap().sup_norm();
        assert!(diff <= 10.0 * tol, "windows disagree by {diff}");
    }

    #[test]
    fn continuation_threads_history_across_windows() {
        let g = grid();
        let psi0 = state(&g);
        let model = PotentialModel {
            external: ExternalPotential::Harmonic { strength: 1.0 },
            hartree: None,
            xc: Some(XcSpec {
                coupling: 0.3,
                width: 0.25,
            }),
            hbar: 1.0,
            mass: 1.0,
        };
        let pot = Potential::bind(model, g, 0.04).unwrap();
        let bundle = build_constants(&pot, &psi0, ConstantsMode::Analytic, 3).unwrap();
        let prop = Propagator::new(pot);
        let window = WindowSpec::new(0.0, 0.005, 9).unwrap();
        let tol = 1e-12;
        let (single, _) = picard_solve(&prop, &psi0, &window, Some(&bundle), tol, 60).unwrap();
        let cap = 0.6 * bundle.gamma_continuation(window.span());
        let (chained, traces) =
            picard_continuation(&prop, &psi0, &window, &bundle, cap, tol, 60).unwrap();
        assert!(traces.len() >= 2, "cap must force a genuine chain");
        let diff = chained.sub(&single).unwrap().sup_norm();
        assert!(diff <= 10.0 * tol, "history thread broke: {diff}");
    }
}
