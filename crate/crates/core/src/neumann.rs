//! Newton iteration with a truncated geometric-series inverse. When the
//! derivative norm is certifiably below one, the inverse of (I - K') can be
//! replaced by the partial sum I + K' + ... + K'^n; the truncation order is
//! chosen from the current residual so that the extra defect never degrades
//! the quadratic convergence of the outer iteration.

use crate::constants::{ConstantsBundle, NeumannConstants, SAMPLE_MARGIN};
use crate::error::{Error, Result};
use crate::evolution::{Propagator, WindowSpec};
use crate::grid::{OrbitalSet, Trajectory};
use crate::newton::{
    estimate_derivative_lipschitz, kprime_norm_bound, Linearization, NewtonOptions,
    LIPSCHITZ_MARGIN,
};
use crate::sampling::{random_trajectory, rng};
use crate::trace::IterationTrace;
use num_complex::Complex64;

/// How the expansion order is picked at each outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruncationMode {
    /// Residual-driven rule: smallest n with k0^n at or below the residual.
    Adaptive,
    /// Constant order regardless of the residual (0 reproduces plain
    /// contraction iteration).
    Fixed(usize),
}

/// Driver knobs that are not certified constants: the order cap and the
/// truncation mode.
#[derive(Debug, Clone, Copy)]
pub struct NeumannPolicy {
    pub n_max: usize,
    pub mode: TruncationMode,
}

impl Default for NeumannPolicy {
    fn default() -> Self {
        NeumannPolicy {
            n_max: 64,
            mode: TruncationMode::Adaptive,
        }
    }
}

/// Partial geometric sum [I + K' + ... + K'^n] f with exactly n derivative
/// applications.
pub fn neumann_apply(lin: &Linearization, f: &Trajectory, n: usize) -> Result<Trajectory> {
    let mut sum = f.clone();
    let mut term = f.clone();
    for _ in 0..n {
        term = lin.apply(&term)?;
        sum.axpy(Complex64::new(1.0, 0.0), &term)?;
    }
    Ok(sum)
}

/// Smallest order n >= 1 with k0^n <= residual, clipped at `n_max` (the flag
/// reports the clip). A residual at or above k0 needs only the first-order
/// sum; a zero residual admits no finite order at all and is refused — the
/// exact inverse is the right tool there.
pub fn choose_truncation(k0: f64, residual: f64, n_max: usize) -> Result<(usize, bool)> {
    if !(k0 >= 0.0) || k0 >= 1.0 {
        return Err(Error::WindowTooLong { bound: k0 });
    }
    if !(residual >= 0.0 && residual.is_finite()) {
        return Err(Error::InvalidData(format!(
            "residual {residual} is not a finite nonnegative number"
        )));
    }
    if residual == 0.0 {
        return Err(Error::InvalidData(
            "zero residual leaves nothing to truncate; the exact inverse applies".into(),
        ));
    }
    if k0 == 0.0 || residual >= k0 {
        return Ok((1.min(n_max).max(1), n_max == 0));
    }
    let mut n = ((residual.ln() / k0.ln()).ceil() as usize).max(1);
    while n > 1 && k0.powi(n as i32 - 1) <= residual {
        n -= 1;
    }
    while k0.powi(n as i32) > residual && n < n_max.max(1) {
        n += 1;
    }
    if n >= n_max && k0.powi(n as i32) > residual {
        Ok((n_max, true))
    } else {
        Ok((n.min(n_max.max(1)), n > n_max))
    }
}

/// Empirical norm of (K')^{n+1} — the exact algebraic defect of the order-n
/// partial sum as an inverse — by repeated application on random unit
/// trajectories.
pub fn approx_inverse_defect(
    lin: &Linearization,
    n: usize,
    probes: usize,
    seed: u64,
) -> Result<f64> {
    let grid = *lin.base().grid();
    let n_orb = lin.base().n_orbitals();
    let mut r = rng(seed ^ 0xDEF3);
    let mut best = 0.0f64;
    for _ in 0..probes.max(1) {
        let mut w = random_trajectory(
            &grid,
            n_orb,
            lin.base().t0(),
            lin.base().dt(),
            lin.base().len(),
            &mut r,
            Some(1.0),
        );
        for _ in 0..=n {
            w = lin.apply(&w)?;
        }
        best = best.max(w.sup_norm());
    }
    Ok(best)
}

/// Raw sampled operator norm of the derivative at the base point.
pub fn estimate_kprime_norm(lin: &Linearization, samples: usize, seed: u64) -> Result<f64> {
    let grid = *lin.base().grid();
    let n_orb = lin.base().n_orbitals();
    let mut r = rng(seed ^ 0x0D0F);
    let mut best = 0.0f64;
    for _ in 0..samples.max(1) {
        let w = random_trajectory(
            &grid,
            n_orb,
            lin.base().t0(),
            lin.base().dt(),
            lin.base().len(),
            &mut r,
            Some(1.0),
        );
        best = best.max(lin.apply(&w)?.sup_norm());
    }
    Ok(best)
}

/// Measure the truncated-inverse constants at a base trajectory: the
/// derivative-norm bound k0 (the smaller of the certified bound and the
/// margined probe estimate) and M = max(1/(1-k0), c_lip/2). Returns a copy
/// of the bundle carrying them.
pub fn prepare_neumann(
    prop: &Propagator,
    psi0: &OrbitalSet,
    base: &Trajectory,
    window: &WindowSpec,
    bundle: &ConstantsBundle,
    opts: &NewtonOptions,
    seed: u64,
) -> Result<ConstantsBundle> {
    let analytic = kprime_norm_bound(bundle, window.span());
    let lin = Linearization::new(prop, psi0, base)?;
    let probed = SAMPLE_MARGIN * estimate_kprime_norm(&lin, opts.samples, seed)?;
    let k0 = analytic.min(probed);
    if k0 >= 1.0 {
        return Err(Error::WindowTooLong { bound: k0 });
    }
    let c_lip = match bundle.newton {
        Some(nc) => nc.c_lip,
        None => {
            if opts.analytic_lipschitz {
                crate::newton::lipschitz_of_derivative(bundle, window.span())
            } else {
                LIPSCHITZ_MARGIN
                    * estimate_derivative_lipschitz(
                        prop,
                        psi0,
                        window,
                        bundle.r,
                        opts.samples,
                        seed,
                    )?
            }
        }
    };
    let m_const = (1.0 / (1.0 - k0)).max(0.5 * c_lip);
    let mut out = *bundle;
    out.neumann = Some(NeumannConstants { m_const, k0 });
    Ok(out)
}

/// Scale constant of the truncated-inverse iteration, with the working-ball
/// radius standing in for the neighborhood size.
pub fn approx_sigma(m: f64, h: f64, alpha: f64, radius: f64) -> f64 {
    2.0 * (m + m * m * m) / h * (1.0f64).max(1.0 / ((1.0 - alpha) * radius))
}

/// Newton iteration whose inverse is the truncated geometric sum. Per
/// iteration the trace records the order used and the measured defect of
/// the truncated inverse (both attributed to the iterate they produced,
/// mirroring the step-norm convention).
pub fn approx_newton_solve(
    prop: &Propagator,
    psi0: &OrbitalSet,
    u0: &Trajectory,
    bundle: &ConstantsBundle,
    policy: &NeumannPolicy,
    opts: &NewtonOptions,
    seed: u64,
) -> Result<(Trajectory, IterationTrace)> {
    let nb = bundle.neumann.ok_or_else(|| {
        Error::Config("bundle carries no truncated-inverse constants; measure them first".into())
    })?;
    if !(nb.k0 >= 0.0) || nb.k0 >= 1.0 {
        return Err(Error::WindowTooLong { bound: nb.k0 });
    }
    let sigma = approx_sigma(nb.m_const, opts.h, opts.alpha, bundle.r);
    let ball_limit = opts.alpha * bundle.r * (1.0 + 1e-12);
    if u0.sup_norm() > ball_limit {
        return Err(Error::StartInconsistent {
            residual: u0.sup_norm(),
            limit: ball_limit,
        });
    }
    let floor = 10.0 * opts.lin_tol;
    let mut trace = IterationTrace::new("approx-newton", floor);

    let mut u = u0.clone();
    let mut tick = std::time::Instant::now();
    let mut lin = Linearization::new(prop, psi0, &u)?;
    let mut s_u = u.sub(lin.image())?;
    let mut r_k = s_u.sup_norm();
    let limit = 1.0 / sigma;
    if r_k > limit {
        return Err(Error::StartInconsistent { residual: r_k, limit });
    }
    let mut prev_step = 0.0;
    let mut prev_order = 0usize;
    let mut prev_defect = 0.0f64;
    let mut iteration = 0u64;
    loop {
        trace.push(r_k, prev_step);
        trace.neumann_orders.push(prev_order);
        trace.neumann_defects.push(prev_defect);
        trace.wall_times.push(tick.elapsed().as_secs_f64());
        if r_k <= floor {
            trace.converged = true;
            return Ok((u, trace));
        }
        let len = trace.residual_norms.len();
        if len >= 2 && r_k > 10.0 * trace.residual_norms[len - 2] {
            return Err(Error::NonConvergence {
                solver: "approx-newton",
                residual: r_k,
                iterations: trace.iterations(),
                trace: Box::new(trace),
            });
        }
        if trace.iterations() >= opts.max_iters {
            return Ok((u, trace));
        }
        tick = std::time::Instant::now();
        let n = match policy.mode {
            TruncationMode::Adaptive => {
                let (n, capped) = choose_truncation(nb.k0, r_k, policy.n_max)?;
                if capped {
                    trace.truncation_capped = true;
                }
                n
            }
            TruncationMode::Fixed(n) => n,
        };
        prev_defect = approx_inverse_defect(&lin, n, 3, seed.wrapping_add(iteration))?;
        let delta = neumann_apply(&lin, &s_u, n)?;
        prev_step = delta.sup_norm();
        prev_order = n;
        u = u.sub(&delta)?;
        lin = Linearization::new(prop, psi0, &u)?;
        s_u = u.sub(lin.image())?;
        r_k = s_u.sup_norm();
        iteration += 1;
    }
}
