//! Crank-Nicolson time stepping for the orbital system, with the effective
//! potential frozen at each step midpoint:
//!
//! ```text
//! (I + i a H_mid) psi_{j+1} = (I - i a H_mid) psi_j ,   a = dt / (2 hbar)
//! ```
//!
//! H_mid = -(hbar^2/2m) Lap + V_e(t_mid, rho). The scheme preserves the
//! discrete L2 norm exactly for real potentials, and for time-independent
//! potentials it commutes with H, which conserves the quadratic energy forms
//! to round-off. The self-consistency map feeds a whole density path into
//! the stepping; its fixed points are the solutions of the coupled system.
//!
//! The inhomogeneous variant with zero initial value,
//!
//! ```text
//! (I + i a H_mid) eta_{j+1} = (I - i a H_mid) eta_j - (i dt/hbar) f_mid
//! ```
//!
//! discretizes eta(t) = -(i/hbar) int_0^t U(t,s) f(s) ds, the variation-of-
//! constants solution driven by a source; the map derivative machinery is
//! built on it.

use crate::error::{Error, Result};
use crate::grid::{laplacian_scalar, FieldPath, Grid, OrbitalSet, Trajectory};
use crate::linalg::{conjugate_gradient, thomas_symmetric};
use crate::potential::{PathInteraction, Potential};
use ndarray::Array1;
use num_complex::Complex64;

/// Uniform time grid of one solver window: knots at t0 + k dt for
/// k = 0 .. knots-1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    pub t0: f64,
    pub dt: f64,
    pub knots: usize,
}

impl WindowSpec {
    pub fn new(t0: f64, dt: f64, knots: usize) -> Result<Self> {
        if knots < 2 {
            return Err(Error::Config(format!(
                "a window needs at least 2 knots, got {knots}"
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) || !t0.is_finite() {
            return Err(Error::Config(format!("bad window times: t0 = {t0}, dt = {dt}")));
        }
        Ok(WindowSpec { t0, dt, knots })
    }

    pub fn steps(&self) -> usize {
        self.knots - 1
    }

    pub fn span(&self) -> f64 {
        self.dt * self.steps() as f64
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.span()
    }

    /// Zero density path with this window's layout.
    pub fn zero_density(&self, grid: Grid) -> Result<FieldPath> {
        FieldPath::zero(grid, self.t0, self.dt, self.knots)
    }
}

/// Time stepper bound to one effective-potential model. Linear-solver
/// controls only matter on 3D grids (1D steps solve exactly).
#[derive(Debug, Clone)]
pub struct Propagator {
    pot: Potential,
    /// Relative tolerance of the inner normal-equation solve (3D only).
    pub lin_tol: f64,
    pub lin_max_iters: usize,
}

impl Propagator {
    pub fn new(pot: Potential) -> Self {
        Propagator {
            pot,
            lin_tol: 1e-12,
            lin_max_iters: 10_000,
        }
    }

    pub fn pot(&self) -> &Potential {
        &self.pot
    }

    pub fn grid(&self) -> &Grid {
        self.pot.grid()
    }

    /// Apply H = -(hbar^2/2m) Lap + diag(v) to one orbital.
    fn apply_h(&self, v: &Array1<f64>, x: &[Complex64]) -> Vec<Complex64> {
        let grid = self.pot.grid();
        let kin = -self.pot.hbar() * self.pot.hbar() / (2.0 * self.pot.mass());
        let mut out = laplacian_scalar(grid, x);
        for i in 0..out.len() {
            out[i] = kin * out[i] + v[i] * x[i];
        }
        out
    }

    /// Apply B = I - i a H to one orbital.
    fn apply_b(&self, v: &Array1<f64>, alpha: f64, x: &[Complex64]) -> Vec<Complex64> {
        let hx = self.apply_h(v, x);
        x.iter()
            .zip(hx)
            .map(|(xi, hi)| xi - Complex64::new(0.0, alpha) * hi)
            .collect()
    }

    /// Solve A y = rhs with A = I + i a H. Exact tridiagonal elimination in
    /// 1D; conjugate gradients on the normal equations A^H A = I + a^2 H^2
    /// in 3D (A^H = B because H is real-symmetric).
    fn solve_a(&self, v: &Array1<f64>, alpha: f64, rhs: &[Complex64]) -> Result<Vec<Complex64>> {
        let grid = self.pot.grid();
        let hb = self.pot.hbar();
        let m = self.pot.mass();
        let h2 = grid.spacing() * grid.spacing();
        if grid.dim() == 1 {
            let kin_diag = hb * hb / (m * h2);
            let kin_off = -hb * hb / (2.0 * m * h2);
            let diag: Vec<Complex64> = v
                .iter()
                .map(|vi| Complex64::new(1.0, 0.0) + Complex64::new(0.0, alpha) * (kin_diag + vi))
                .collect();
            let off = Complex64::new(0.0, alpha) * kin_off;
            Ok(thomas_symmetric(&diag, off, rhs))
        } else {
            let normal_rhs = self.apply_b(v, alpha, rhs);
            let apply = |x: &[Complex64]| {
                let hx = self.apply_h(v, x);
                let hhx = self.apply_h(v, &hx);
                x.iter()
                    .zip(hhx)
                    .map(|(xi, hi)| xi + alpha * alpha * hi)
                    .collect::<Vec<_>>()
            };
            let (y, _iters) =
                conjugate_gradient(apply, &normal_rhs, self.lin_tol, self.lin_max_iters)?;
            Ok(y)
        }
    }

    /// One midpoint step for every orbital, with an optional per-orbital
    /// midpoint source entering as -(i dt / hbar) * source.
    fn step_with_source(
        &self,
        psi: &OrbitalSet,
        v_mid: &Array1<f64>,
        dt: f64,
        source: Option<&OrbitalSet>,
    ) -> Result<OrbitalSet> {
        let grid = *self.pot.grid();
        if dt == 0.0 {
            return Ok(psi.clone());
        }
        let alpha = dt / (2.0 * self.pot.hbar());
        let mut next = OrbitalSet::zeros(grid, psi.n_orbitals());
        for o in 0..psi.n_orbitals() {
            let row: Vec<Complex64> = psi.values().row(o).to_vec();
            let mut rhs = self.apply_b(v_mid, alpha, &row);
            if let Some(src) = source {
                let drive = Complex64::new(0.0, -dt / self.pot.hbar());
                for (r, s) in rhs.iter_mut().zip(src.values().row(o)) {
                    *r += drive * s;
                }
            }
            let y = self.solve_a(v_mid, alpha, &rhs)?;
            for (i, yi) in y.into_iter().enumerate() {
                next.values_mut()[[o, i]] = yi;
            }
        }
        Ok(next)
    }

    /// One homogeneous step under a given midpoint potential.
    pub fn step(&self, psi: &OrbitalSet, v_mid: &Array1<f64>, dt: f64) -> Result<OrbitalSet> {
        self.step_with_source(psi, v_mid, dt, None)
    }

    fn midpoint_potential(&self, rho: &FieldPath, pp: &PathInteraction, j: usize) -> Array1<f64> {
        let t_mid = rho.t0() + (j as f64 + 0.5) * rho.dt();
        let mut v = self.pot.external_field(t_mid);
        pp.add_at_midpoint(j, &mut v);
        v
    }

    /// Propagate initial orbitals along the time knots of `rho`, freezing the
    /// interaction terms to the given density path.
    pub fn propagate(&self, psi0: &OrbitalSet, rho: &FieldPath) -> Result<Trajectory> {
        if psi0.grid() != self.pot.grid() {
            return Err(Error::Grid("initial state grid does not match model".into()));
        }
        let pp = self.pot.path_interaction_from_density(rho)?;
        let mut states = Vec::with_capacity(rho.len());
        states.push(psi0.clone());
        for j in 0..rho.len() - 1 {
            let v = self.midpoint_potential(rho, &pp, j);
            let next = self.step_with_source(&states[j], &v, rho.dt(), None)?;
            states.push(next);
        }
        Trajectory::new(rho.t0(), rho.dt(), states)
    }

    /// The self-consistency map: extract the density path of the input
    /// trajectory, then propagate the fixed initial orbitals under it. The
    /// coupled problem's solutions are exactly this map's fixed points.
    pub fn fixed_point_map(&self, psi0: &OrbitalSet, input: &Trajectory) -> Result<Trajectory> {
        self.propagate(psi0, &input.density_path())
    }

    /// Zero-initial-value evolution driven by knot sources (midpoint values
    /// are knot averages). Discretizes -(i/hbar) int_0^t U(t,s) f(s) ds.
    pub fn propagate_inhomogeneous(
        &self,
        rho: &FieldPath,
        source: &Trajectory,
    ) -> Result<Trajectory> {
        if source.len() != rho.len() {
            return Err(Error::InvalidData(
                "source trajectory and density path have different knot counts".into(),
            ));
        }
        let m = rho.len() - 1;
        let mut mids = Vec::with_capacity(m);
        for j in 0..m {
            let mut s = source.state(j).scaled(Complex64::new(0.5, 0.0));
            s.axpy(Complex64::new(0.5, 0.0), source.state(j + 1))?;
            mids.push(s);
        }
        self.propagate_with_midpoint_sources(rho, source.state(0).n_orbitals(), &mids)
    }

    /// Same, but the sources are given directly at step midpoints (length =
    /// steps). The map-derivative machinery uses this to differentiate the
    /// stepping exactly.
    pub(crate) fn propagate_with_midpoint_sources(
        &self,
        rho: &FieldPath,
        n_orbitals: usize,
        mids: &[OrbitalSet],
    ) -> Result<Trajectory> {
        let m = rho.len() - 1;
        if mids.len() != m {
            return Err(Error::InvalidData(
                "need one midpoint source per time step".into(),
            ));
        }
        let pp = self.pot.path_interaction_from_density(rho)?;
        let grid = *self.pot.grid();
        let mut states = Vec::with_capacity(rho.len());
        states.push(OrbitalSet::zeros(grid, n_orbitals));
        for j in 0..m {
            let v = self.midpoint_potential(rho, &pp, j);
            let next = self.step_with_source(&states[j], &v, rho.dt(), Some(&mids[j]))?;
            states.push(next);
        }
        Trajectory::new(rho.t0(), rho.dt(), states)
    }
}
