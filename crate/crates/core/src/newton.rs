//! Exact Newton iteration on the self-consistency residual. The module
//! provides the derivative of the propagation map (differentiating the
//! midpoint stepping exactly), a matrix-free linearized solve, the
//! kappa/sigma bookkeeping that certifies quadratic convergence, and the
//! driver that combines them.

use crate::constants::{ConstantsBundle, NewtonConstants, SAMPLE_MARGIN};
use crate::error::{Error, Result};
use crate::evolution::{Propagator, WindowSpec};
use crate::grid::{FieldPath, OrbitalSet, Trajectory};
use crate::picard::picard_solve;
use crate::sampling::{random_trajectory, rng};
use crate::trace::IterationTrace;
use ndarray::Array1;
use num_complex::Complex64;
use rand::Rng;

/// Inflation applied to sampled derivative-Lipschitz maxima before they are
/// trusted as constants.
pub const LIPSCHITZ_MARGIN: f64 = 1.5;

/// Derivative of the propagation map at a base trajectory. The output
/// perturbation runs the same midpoint stepping at zero initial value,
/// driven by the first-order change of the effective potential applied to
/// the base image. Because the stepping itself is differentiated (not the
/// continuum limit), the finite-difference defect of `apply` is second
/// order in the perturbation down to round-off.
pub struct Linearization<'a> {
    prop: &'a Propagator,
    base: Trajectory,
    rho: FieldPath,
    image: Trajectory,
}

impl<'a> Linearization<'a> {
    pub fn new(prop: &'a Propagator, psi0: &OrbitalSet, base: &Trajectory) -> Result<Self> {
        let rho = base.density_path();
        let image = prop.propagate(psi0, &rho)?;
        Ok(Linearization {
            prop,
            base: base.clone(),
            rho,
            image,
        })
    }

    /// Value of the map at the base point (computed once at construction, so
    /// the Newton driver gets the residual for free).
    pub fn image(&self) -> &Trajectory {
        &self.image
    }

    pub fn base(&self) -> &Trajectory {
        &self.base
    }

    /// First-order density change along `omega`: 2 Re(conj(base) omega)
    /// summed over orbitals, at every knot.
    fn density_pairing(&self, omega: &Trajectory) -> Result<FieldPath> {
        self.base.compatible(omega)?;
        let grid = *self.base.grid();
        let n = grid.n_points();
        let fields = (0..self.base.len())
            .map(|k| {
                let b = self.base.state(k).values();
                let o = omega.state(k).values();
                let mut p = Array1::zeros(n);
                for orb in 0..b.nrows() {
                    for i in 0..n {
                        p[i] += 2.0 * (b[[orb, i]].conj() * o[[orb, i]]).re;
                    }
                }
                p
            })
            .collect();
        FieldPath::new(grid, self.base.t0(), self.base.dt(), fields)
    }

    /// Apply the derivative to a perturbation trajectory.
    pub fn apply(&self, omega: &Trajectory) -> Result<Trajectory> {
        let pairing = self.density_pairing(omega)?;
        let pp = self.prop.pot().path_interaction_from_increment(&pairing)?;
        let n = self.base.grid().n_points();
        let n_orb = self.image.n_orbitals();
        let steps = self.base.len() - 1;
        let mut mids = Vec::with_capacity(steps);
        for j in 0..steps {
            let mut dv = Array1::zeros(n);
            pp.add_at_midpoint(j, &mut dv);
            let mut s = self.image.state(j).scaled(Complex64::new(0.5, 0.0));
            s.axpy(Complex64::new(0.5, 0.0), self.image.state(j + 1))?;
            for orb in 0..n_orb {
                for i in 0..n {
                    s.values_mut()[[orb, i]] *= dv[i];
                }
            }
            mids.push(s);
        }
        self.prop
            .propagate_with_midpoint_sources(&self.rho, n_orb, &mids)
    }
}

/// Certified operator-norm bound for the derivative on a window of the
/// given length; inherits the integral estimate behind the contraction
/// certificate, so it is linear in the window length.
pub fn kprime_norm_bound(bundle: &ConstantsBundle, window_span: f64) -> f64 {
    bundle.derivative_norm_bound(window_span)
}

/// Solve (I - K') psi = f by the fixed-point sweep psi <- K' psi + f,
/// starting from psi = f. `bound` must be a bound below one for the
/// derivative norm; the sweep stops once the update falls to `tol`, which
/// pins the equation residual beneath the returned value
/// tol (1 + bound) / (1 - bound).
pub fn solve_linearized(
    lin: &Linearization,
    f: &Trajectory,
    bound: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<(Trajectory, f64)> {
    if !(bound >= 0.0) || bound >= 1.0 {
        return Err(Error::WindowTooLong { bound });
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::Config(format!("linear tolerance {tol} must be positive")));
    }
    let mut psi = f.clone();
    let mut trace = IterationTrace::new("linearized", tol);
    for _ in 0..max_sweeps.max(1) {
        let mut next = lin.apply(&psi)?;
        next.axpy(Complex64::new(1.0, 0.0), f)?;
        let change = next.sub(&psi)?.sup_norm();
        trace.push(change, change);
        psi = next;
        if change <= tol {
            return Ok((psi, tol * (1.0 + bound) / (1.0 - bound)));
        }
    }
    Err(Error::NonConvergence {
        solver: "linearized",
        residual: trace.final_residual().unwrap_or(f64::INFINITY),
        iterations: trace.iterations(),
        trace: Box::new(trace),
    })
}

/// Kantorovich-style constants from the measured ingredients:
/// kappa = inverse_norm / (1 - tau) and
/// sigma = max(c kappa^2 / h, c kappa^2 (1 - tau) / (h (1 - alpha) tau)).
pub fn newton_constants(
    c_lip: f64,
    tau: f64,
    alpha: f64,
    h: f64,
    inverse_norm: f64,
) -> Result<NewtonConstants> {
    let kappa = inverse_norm / (1.0 - tau);
    let sigma = (c_lip * kappa * kappa / h)
        .max(c_lip * kappa * kappa * (1.0 - tau) / (h * (1.0 - alpha) * tau));
    let nc = NewtonConstants {
        tau,
        alpha,
        h,
        kappa,
        sigma,
        inverse_norm,
        c_lip,
    };
    nc.validate()?;
    Ok(nc)
}

/// A-priori error bound after k update steps:
/// kappa / (h sigma) * (1 - sqrt(1 - 2h))^{2^k} / 2^k.
pub fn r_quadratic_bound(nc: &NewtonConstants, k: u32) -> f64 {
    let t_star = 1.0 - (1.0 - 2.0 * nc.h).max(0.0).sqrt();
    let e = 2.0f64.powi(k as i32);
    nc.kappa / (nc.h * nc.sigma) * t_star.powf(e) / e
}

/// Derivative Lipschitz constant assembled from certified quantities: the
/// three trajectory-difference contributions of the derivative formula sum
/// to (2 span / hbar) * c0 * U * (2 r gamma_span + U |psi0|).
pub fn lipschitz_of_derivative(bundle: &ConstantsBundle, span: f64) -> f64 {
    2.0 * span / bundle.hbar
        * bundle.c0
        * bundle.u_bound
        * (2.0 * bundle.r * bundle.gamma_for(span) + bundle.u_bound * bundle.psi0_h10)
}

/// Empirical operator norm of the linearization inverse: the maximum of
/// |solve(f)| over random unit right-hand sides, inflated by the sampling
/// margin.
pub fn estimate_inverse_norm(
    lin: &Linearization,
    bound: f64,
    tol: f64,
    max_sweeps: usize,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let grid = *lin.base().grid();
    let n_orb = lin.base().n_orbitals();
    let mut r = rng(seed ^ 0x11FE);
    let mut best = 0.0f64;
    for _ in 0..samples.max(1) {
        let f = random_trajectory(
            &grid,
            n_orb,
            lin.base().t0(),
            lin.base().dt(),
            lin.base().len(),
            &mut r,
            Some(1.0),
        );
        let (psi, _) = solve_linearized(lin, &f, bound, tol, max_sweeps)?;
        best = best.max(psi.sup_norm());
    }
    Ok(best * SAMPLE_MARGIN)
}

/// Raw sampled Lipschitz quotient of the derivative over the working ball:
/// max over correlated trajectory pairs of
/// |(K'(a) - K'(b)) omega| / |a - b| with unit probes omega. The caller
/// applies `LIPSCHITZ_MARGIN` before trusting the value.
pub fn estimate_derivative_lipschitz(
    prop: &Propagator,
    psi0: &OrbitalSet,
    window: &WindowSpec,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let grid = *prop.grid();
    let n_orb = psi0.n_orbitals();
    let mut r = rng(seed ^ 0xD117);
    let mut best = 0.0f64;
    for _ in 0..samples.max(1) {
        let scale = r.gen_range(0.2..1.0) * radius;
        let a = random_trajectory(&grid, n_orb, window.t0, window.dt, window.knots, &mut r, Some(scale));
        let other =
            random_trajectory(&grid, n_orb, window.t0, window.dt, window.knots, &mut r, Some(scale));
        let theta: f64 = r.gen_range(0.02..1.0);
        let mut b = a.scaled(Complex64::new(1.0 - theta, 0.0));
        b.axpy(Complex64::new(theta, 0.0), &other)?;
        let omega =
            random_trajectory(&grid, n_orb, window.t0, window.dt, window.knots, &mut r, Some(1.0));
        let dist = a.sub(&b)?.sup_norm();
        if dist <= 1e-13 {
            continue;
        }
        let la = Linearization::new(prop, psi0, &a)?;
        let lb = Linearization::new(prop, psi0, &b)?;
        let diff = la.apply(&omega)?.sub(&lb.apply(&omega)?)?.sup_norm();
        best = best.max(diff / dist);
    }
    Ok(best)
}

/// Iteration budgets and constant-estimation knobs for the Newton driver.
/// The defaults put (tau, alpha) on the curve 1 - tau = tau (1 - alpha)
/// where both sigma expressions coincide.
#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tau: f64,
    pub alpha: f64,
    pub h: f64,
    pub max_iters: usize,
    pub lin_tol: f64,
    pub lin_max_sweeps: usize,
    /// Sample count for the inverse-norm and Lipschitz estimates.
    pub samples: usize,
    /// Use the certified Lipschitz assembly instead of the sampled one.
    pub analytic_lipschitz: bool,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tau: 2.0 / 3.0,
            alpha: 0.5,
            h: 0.5,
            max_iters: 25,
            lin_tol: 1e-12,
            lin_max_sweeps: 600,
            samples: 20,
            analytic_lipschitz: false,
        }
    }
}

/// Measure the Newton constants at a base trajectory and return a copy of
/// the bundle carrying them. The sampled Lipschitz quotient is inflated by
/// `LIPSCHITZ_MARGIN`; the certified assembly is available through
/// `lipschitz_of_derivative` either way.
pub fn prepare_newton(
    prop: &Propagator,
    psi0: &OrbitalSet,
    base: &Trajectory,
    window: &WindowSpec,
    bundle: &ConstantsBundle,
    opts: &NewtonOptions,
    seed: u64,
) -> Result<ConstantsBundle> {
    let bound = kprime_norm_bound(bundle, window.span());
    if bound >= 1.0 {
        return Err(Error::WindowTooLong { bound });
    }
    let lin = Linearization::new(prop, psi0, base)?;
    let inverse_norm = estimate_inverse_norm(
        &lin,
        bound,
        opts.lin_tol,
        opts.lin_max_sweeps,
        opts.samples,
        seed,
    )?;
    let c_lip = if opts.analytic_lipschitz {
        lipschitz_of_derivative(bundle, window.span())
    } else {
        LIPSCHITZ_MARGIN
            * estimate_derivative_lipschitz(prop, psi0, window, bundle.r, opts.samples, seed)?
    };
    let nc = newton_constants(c_lip, opts.tau, opts.alpha, opts.h, inverse_norm)?;
    let mut out = *bundle;
    out.newton = Some(nc);
    Ok(out)
}

/// Produce a start iterate meeting the consistency requirement by plain
/// contraction iteration: with contraction factor q, an error target of
/// 1 / (sigma (1 + q)) keeps the start residual at or below 1 / sigma.
pub fn newton_seed(
    prop: &Propagator,
    psi0: &OrbitalSet,
    window: &WindowSpec,
    bundle: &ConstantsBundle,
    sigma: f64,
    max_iters: usize,
) -> Result<(Trajectory, IterationTrace)> {
    let q = bundle.gamma_for(window.span());
    let mut target = (1.0 - q) / (sigma * (1.0 + q));
    if !target.is_finite() || target > 1e300 {
        target = 1e300;
    }
    picard_solve(prop, psi0, window, Some(bundle), target, max_iters)
}

/// Newton iteration u <- u - delta, (I - K'(u)) delta = u - K(u), run until
/// the residual reaches the stationary floor (ten times the inner-solve
/// tolerance). Requires `bundle.newton`; refuses start iterates outside the
/// alpha-fraction of the working ball or with residual above 1 / sigma.
pub fn newton_solve(
    prop: &Propagator,
    psi0: &OrbitalSet,
    u0: &Trajectory,
    bundle: &ConstantsBundle,
    opts: &NewtonOptions,
) -> Result<(Trajectory, IterationTrace)> {
    let nc = bundle
        .newton
        .ok_or_else(|| Error::Config("bundle carries no Newton constants; measure them first".into()))?;
    nc.validate()?;
    let span = (u0.len() - 1) as f64 * u0.dt();
    let bound = kprime_norm_bound(bundle, span);
    let ball_limit = nc.alpha * bundle.r * (1.0 + 1e-12);
    if u0.sup_norm() > ball_limit {
        return Err(Error::StartInconsistent {
            residual: u0.sup_norm(),
            limit: ball_limit,
        });
    }
    let floor = 10.0 * opts.lin_tol;
    let mut trace = IterationTrace::new("newton", floor);

    let mut u = u0.clone();
    let mut tick = std::time::Instant::now();
    let mut lin = Linearization::new(prop, psi0, &u)?;
    let mut s_u = u.sub(lin.image())?;
    let mut r_k = s_u.sup_norm();
    let limit = 1.0 / nc.sigma;
    if r_k > limit {
        return Err(Error::StartInconsistent { residual: r_k, limit });
    }
    let mut prev_step = 0.0;
    loop {
        trace.push(r_k, prev_step);
        trace.neumann_orders.push(0);
        trace.wall_times.push(tick.elapsed().as_secs_f64());
        if r_k <= floor {
            trace.converged = true;
            return Ok((u, trace));
        }
        let len = trace.residual_norms.len();
        if len >= 2 && r_k > 10.0 * trace.residual_norms[len - 2] {
            return Err(Error::NonConvergence {
                solver: "newton",
                residual: r_k,
                iterations: trace.iterations(),
                trace: Box::new(trace),
            });
        }
        if trace.iterations() >= opts.max_iters {
            return Ok((u, trace));
        }
        tick = std::time::Instant::now();
        let (delta, _recorded) =
            solve_linearized(&lin, &s_u, bound, opts.lin_tol, opts.lin_max_sweeps)?;
        prev_step = delta.sup_norm();
        u = u.sub(&delta)?;
        lin = Linearization::new(prop, psi0, &u)?;
        s_u = u.sub(lin.image())?;
        r_k = s_u.sup_norm();
    }
}
