//! Discrete function spaces on a box with homogeneous Dirichlet walls.
//!
//! The domain (0, L)^dim (dim = 1 or 3) is discretized by interior points
//! x_i = (i+1) h with h = L / (n + 1); the wall values are implicit zeros
//! ("ghost" points). All integrals use the rectangle rule h^dim * sum.
//!
//! The gradient seminorm is the discrete Dirichlet form built from
//! half-point (face) differences, including the two boundary faces:
//!
//! ```text
//! |f|_grad^2 = h^dim * sum_faces |f_right - f_left|^2 / h^2
//! ```
//!
//! Summation by parts makes this *exactly* dual to the 3-point Laplacian,
//! |f|_grad^2 = -<lap f, f>, so H1-vs-(I - lap) duality holds to round-off
//! rather than to O(h^2). That exactness is what lets a static Hamiltonian
//! conserve the discrete energy functional to round-off.

use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, thomas_symmetric};
use ndarray::{Array1, Array2};
use num_complex::Complex64;

/// Hard cap on 3D points per axis; beyond this the dense-state design of this
/// crate is the wrong tool.
pub const MAX_POINTS_PER_AXIS_3D: usize = 24;

/// Uniform interior-point grid on (0, L)^dim with Dirichlet walls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    points_per_axis: usize,
    axis_length: f64,
}

impl Grid {
    pub fn new_1d(points_per_axis: usize, axis_length: f64) -> Result<Self> {
        Self::new(1, points_per_axis, axis_length)
    }

    pub fn new_3d(points_per_axis: usize, axis_length: f64) -> Result<Self> {
        if points_per_axis > MAX_POINTS_PER_AXIS_3D {
            return Err(Error::Grid(format!(
                "3D grids are capped at {MAX_POINTS_PER_AXIS_3D} points per axis (got {points_per_axis})"
            )));
        }
        Self::new(3, points_per_axis, axis_length)
    }

    fn new(dim: usize, points_per_axis: usize, axis_length: f64) -> Result<Self> {
        if points_per_axis < 2 {
            return Err(Error::Grid(format!(
                "need at least 2 interior points per axis, got {points_per_axis}"
            )));
        }
        if !(axis_length.is_finite() && axis_length > 0.0) {
            return Err(Error::Grid(format!("bad axis length {axis_length}")));
        }
        Ok(Grid {
            dim,
            points_per_axis,
            axis_length,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    pub fn axis_length(&self) -> f64 {
        self.axis_length
    }

    /// Mesh width h = L / (n + 1).
    pub fn spacing(&self) -> f64 {
        self.axis_length / (self.points_per_axis as f64 + 1.0)
    }

    /// Total number of interior points, n^dim.
    pub fn n_points(&self) -> usize {
        self.points_per_axis.pow(self.dim as u32)
    }

    /// Quadrature weight of one cell, h^dim.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// |Omega| = L^dim.
    pub fn domain_volume(&self) -> f64 {
        self.axis_length.powi(self.dim as i32)
    }

    /// Diameter of the box, L * sqrt(dim).
    pub fn diameter(&self) -> f64 {
        self.axis_length * (self.dim as f64).sqrt()
    }

    /// Coordinates of flat point index `i`; unused axes report 0.
    pub fn coords(&self, i: usize) -> [f64; 3] {
        let h = self.spacing();
        match self.dim {
            1 => [(i as f64 + 1.0) * h, 0.0, 0.0],
            3 => {
                let n = self.points_per_axis;
                let iz = i % n;
                let iy = (i / n) % n;
                let ix = i / (n * n);
                [
                    (ix as f64 + 1.0) * h,
                    (iy as f64 + 1.0) * h,
                    (iz as f64 + 1.0) * h,
                ]
            }
            _ => unreachable!("grid dim is 1 or 3"),
        }
    }

    /// Center of the box.
    pub fn center(&self) -> [f64; 3] {
        let c = 0.5 * self.axis_length;
        match self.dim {
            1 => [c, 0.0, 0.0],
            _ => [c, c, c],
        }
    }

    pub(crate) fn flat_index_3d(&self, ix: usize, iy: usize, iz: usize) -> usize {
        let n = self.points_per_axis;
        (ix * n + iy) * n + iz
    }

    fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::Grid("mixed grids in one operation".into()))
        }
    }
}

/// Norms available on states and fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    L2,
    /// sqrt(L2^2 + gradient seminorm^2); the working norm of the solver.
    H10,
    /// Dual norm sqrt(<(I - lap)^{-1} f, f>); needs one Helmholtz solve.
    HMinus1,
}

/// A finite family of complex orbitals sampled on one grid.
/// Row j of `values` is orbital j.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitalSet {
    grid: Grid,
    values: Array2<Complex64>,
}

impl OrbitalSet {
    pub fn zeros(grid: Grid, n_orbitals: usize) -> Self {
        OrbitalSet {
            grid,
            values: Array2::zeros((n_orbitals, grid.n_points())),
        }
    }

    /// Validating constructor: shape must match the grid and all entries be finite.
    pub fn from_values(grid: Grid, values: Array2<Complex64>) -> Result<Self> {
        if values.ncols() != grid.n_points() {
            return Err(Error::InvalidData(format!(
                "state has {} columns but grid has {} points",
                values.ncols(),
                grid.n_points()
            )));
        }
        if values.nrows() == 0 {
            return Err(Error::InvalidData("state needs at least one orbital".into()));
        }
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidData("non-finite entry in state".into()));
        }
        Ok(OrbitalSet { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n_orbitals(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<Complex64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<Complex64> {
        &mut self.values
    }

    /// Particle density rho = sum_j |psi_j|^2.
    pub fn density(&self) -> DensityField {
        let mut rho = Array1::zeros(self.grid.n_points());
        for row in self.values.rows() {
            for (r, z) in rho.iter_mut().zip(row.iter()) {
                *r += z.norm_sqr();
            }
        }
        DensityField {
            grid: self.grid,
            values: rho,
        }
    }

    /// L2 pairing h^dim * sum_j sum_x f_j conj(g_j).
    pub fn l2_inner(&self, other: &OrbitalSet) -> Result<Complex64> {
        self.compatible(other)?;
        let dot: Complex64 = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| a * b.conj())
            .sum();
        Ok(dot * self.grid.cell_volume())
    }

    pub fn norm(&self, kind: NormKind) -> f64 {
        match kind {
            NormKind::L2 => {
                let s: f64 = self.values.iter().map(|z| z.norm_sqr()).sum();
                (s * self.grid.cell_volume()).sqrt()
            }
            NormKind::H10 => {
                let l2sq: f64 =
                    self.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.cell_volume();
                (l2sq + self.gradient_energy()).sqrt()
            }
            NormKind::HMinus1 => self.h_minus_1_norm(),
        }
    }

    /// Discrete Dirichlet form sum_j |grad psi_j|^2 integrated by the
    /// rectangle rule; exactly equals -<lap psi, psi>.
    pub fn gradient_energy(&self) -> f64 {
        let mut total = 0.0;
        for row in self.values.rows() {
            total += gradient_energy_scalar(&self.grid, row.as_slice().expect("contiguous row"));
        }
        total * self.grid.cell_volume()
    }

    fn h_minus_1_norm(&self) -> f64 {
        let mut acc = 0.0;
        for row in self.values.rows() {
            let f = row.as_slice().expect("contiguous row").to_vec();
            let u = helmholtz_solve(&self.grid, &f).expect("Helmholtz solve");
            let pair: Complex64 = u.iter().zip(f.iter()).map(|(a, b)| a * b.conj()).sum();
            acc += pair.re;
        }
        (acc.max(0.0) * self.grid.cell_volume()).sqrt()
    }

    /// self += c * other.
    pub fn axpy(&mut self, c: Complex64, other: &OrbitalSet) -> Result<()> {
        self.compatible(other)?;
        self.values.zip_mut_with(&other.values, |a, b| *a += c * b);
        Ok(())
    }

    pub fn scaled(&self, c: Complex64) -> OrbitalSet {
        OrbitalSet {
            grid: self.grid,
            values: self.values.mapv(|z| c * z),
        }
    }

    pub fn sub(&self, other: &OrbitalSet) -> Result<OrbitalSet> {
        self.compatible(other)?;
        Ok(OrbitalSet {
            grid: self.grid,
            values: &self.values - &other.values,
        })
    }

    pub fn add(&self, other: &OrbitalSet) -> Result<OrbitalSet> {
        self.compatible(other)?;
        Ok(OrbitalSet {
            grid: self.grid,
            values: &self.values + &other.values,
        })
    }

    fn compatible(&self, other: &OrbitalSet) -> Result<()> {
        self.grid.check_same(&other.grid)?;
        if self.n_orbitals() != other.n_orbitals() {
            return Err(Error::InvalidData(format!(
                "orbital count mismatch: {} vs {}",
                self.n_orbitals(),
                other.n_orbitals()
            )));
        }
        Ok(())
    }
}

/// Free-function spelling of the norm, matching the operation vocabulary.
pub fn norm(state: &OrbitalSet, kind: NormKind) -> f64 {
    state.norm(kind)
}

/// 3-point (1D) / 7-point (3D) Dirichlet Laplacian with ghost zeros.
pub fn laplacian(state: &OrbitalSet) -> OrbitalSet {
    let grid = state.grid;
    let mut out = OrbitalSet::zeros(grid, state.n_orbitals());
    for (orb, row) in state.values.rows().into_iter().enumerate() {
        let src = row.as_slice().expect("contiguous row");
        let dst = laplacian_scalar(&grid, src);
        out.values.row_mut(orb).assign(&Array1::from(dst));
    }
    out
}

pub(crate) fn laplacian_scalar(grid: &Grid, f: &[Complex64]) -> Vec<Complex64> {
    let h2 = grid.spacing() * grid.spacing();
    let n = grid.points_per_axis;
    let zero = Complex64::new(0.0, 0.0);
    match grid.dim {
        1 => (0..n)
            .map(|i| {
                let left = if i > 0 { f[i - 1] } else { zero };
                let right = if i + 1 < n { f[i + 1] } else { zero };
                (left - 2.0 * f[i] + right) / h2
            })
            .collect(),
        3 => {
            let mut out = vec![zero; grid.n_points()];
            for ix in 0..n {
                for iy in 0..n {
                    for iz in 0..n {
                        let idx = grid.flat_index_3d(ix, iy, iz);
                        let mut acc = -6.0 * f[idx];
                        if ix > 0 {
                            acc += f[grid.flat_index_3d(ix - 1, iy, iz)];
                        }
                        if ix + 1 < n {
                            acc += f[grid.flat_index_3d(ix + 1, iy, iz)];
                        }
                        if iy > 0 {
                            acc += f[grid.flat_index_3d(ix, iy - 1, iz)];
                        }
                        if iy + 1 < n {
                            acc += f[grid.flat_index_3d(ix, iy + 1, iz)];
                        }
                        if iz > 0 {
                            acc += f[grid.flat_index_3d(ix, iy, iz - 1)];
                        }
                        if iz + 1 < n {
                            acc += f[grid.flat_index_3d(ix, iy, iz + 1)];
                        }
                        out[idx] = acc / h2;
                    }
                }
            }
            out
        }
        _ => unreachable!(),
    }
}

/// Face-difference gradient energy of a single scalar field, *without* the
/// h^dim quadrature weight (the caller applies it).
pub(crate) fn gradient_energy_scalar(grid: &Grid, f: &[Complex64]) -> f64 {
    let h2 = grid.spacing() * grid.spacing();
    let n = grid.points_per_axis;
    match grid.dim {
        1 => {
            let mut acc = f[0].norm_sqr(); // face to the left wall
            for i in 0..n - 1 {
                acc += (f[i + 1] - f[i]).norm_sqr();
            }
            acc += f[n - 1].norm_sqr(); // face to the right wall
            acc / h2
        }
        3 => {
            let mut acc = 0.0;
            // For each axis walk every line: wall faces contribute |f|^2 at
            // the two ends, interior faces |f_{i+1} - f_i|^2.
            for axis in 0..3 {
                for a in 0..n {
                    for b in 0..n {
                        let at = |k: usize| -> Complex64 {
                            let idx = match axis {
                                0 => grid.flat_index_3d(k, a, b),
                                1 => grid.flat_index_3d(a, k, b),
                                _ => grid.flat_index_3d(a, b, k),
                            };
                            f[idx]
                        };
                        acc += at(0).norm_sqr();
                        for k in 0..n - 1 {
                            acc += (at(k + 1) - at(k)).norm_sqr();
                        }
                        acc += at(n - 1).norm_sqr();
                    }
                }
            }
            acc / h2
        }
        _ => unreachable!(),
    }
}

/// L^p norm of a scalar complex field under the rectangle rule.
pub fn lp_norm_scalar(grid: &Grid, f: &[Complex64], p: f64) -> f64 {
    let s: f64 = f.iter().map(|z| z.norm().powf(p)).sum();
    (s * grid.cell_volume()).powf(1.0 / p)
}

/// H10 norm of a scalar complex field.
pub fn h10_norm_scalar(grid: &Grid, f: &[Complex64]) -> f64 {
    let l2sq: f64 = f.iter().map(|z| z.norm_sqr()).sum::<f64>() * grid.cell_volume();
    (l2sq + gradient_energy_scalar(grid, f) * grid.cell_volume()).sqrt()
}

/// Solve (I - lap) u = f with Dirichlet walls. 1D: direct tridiagonal solve;
/// 3D: conjugate gradients on the (SPD) operator.
pub fn helmholtz_solve(grid: &Grid, f: &[Complex64]) -> Result<Vec<Complex64>> {
    let h2 = grid.spacing() * grid.spacing();
    match grid.dim {
        1 => {
            let n = grid.points_per_axis;
            let diag = vec![Complex64::new(1.0 + 2.0 / h2, 0.0); n];
            let off = Complex64::new(-1.0 / h2, 0.0);
            Ok(thomas_symmetric(&diag, off, f))
        }
        _ => {
            let apply = |v: &[Complex64]| -> Vec<Complex64> {
                let lap = laplacian_scalar(grid, v);
                v.iter().zip(lap).map(|(x, l)| x - l).collect()
            };
            let (u, _) = conjugate_gradient(apply, f, 1e-12, 10_000)?;
            Ok(u)
        }
    }
}

/// Nonnegative real scalar field (a particle density or similar).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    grid: Grid,
    values: Array1<f64>,
}

impl DensityField {
    pub fn zeros(grid: Grid) -> Self {
        DensityField {
            grid,
            values: Array1::zeros(grid.n_points()),
        }
    }

    pub fn from_values(grid: Grid, values: Array1<f64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::InvalidData("density length does not match grid".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidData(
                "density must be finite and nonnegative".into(),
            ));
        }
        Ok(DensityField { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    /// Total charge, h^dim * sum rho.
    pub fn mass(&self) -> f64 {
        self.values.sum() * self.grid.cell_volume()
    }
}

/// A real scalar field known at uniformly spaced time knots t0 + k dt.
/// Used for density paths and for density-increment paths.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPath {
    grid: Grid,
    t0: f64,
    dt: f64,
    fields: Vec<Array1<f64>>,
}

impl FieldPath {
    pub fn new(grid: Grid, t0: f64, dt: f64, fields: Vec<Array1<f64>>) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::InvalidData("empty field path".into()));
        }
        if fields.len() > 1 && !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidData(format!("bad path step {dt}")));
        }
        if fields.iter().any(|f| f.len() != grid.n_points()) {
            return Err(Error::InvalidData("field length does not match grid".into()));
        }
        Ok(FieldPath {
            grid,
            t0,
            dt,
            fields,
        })
    }

    /// Path that is identically zero on the given knots.
    pub fn zero(grid: Grid, t0: f64, dt: f64, knots: usize) -> Result<Self> {
        Self::new(
            grid,
            t0,
            dt,
            (0..knots.max(1)).map(|_| Array1::zeros(grid.n_points())).collect(),
        )
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + self.dt * k as f64
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.len() - 1)
    }

    pub fn field(&self, k: usize) -> &Array1<f64> {
        &self.fields[k]
    }

    pub fn fields(&self) -> &[Array1<f64>] {
        &self.fields
    }

    /// Index of the knot at time `t`, requiring alignment to 1e-12 relative.
    pub fn knot_at(&self, t: f64) -> Result<usize> {
        let span = (self.len() - 1) as f64 * self.dt;
        let scale = self.dt.abs().max(span.abs()).max(1.0);
        if t < self.t0 - 1e-12 * scale || t > self.t_end() + 1e-12 * scale {
            return Err(Error::OutOfSpan {
                t,
                lo: self.t0,
                hi: self.t_end(),
            });
        }
        if self.len() == 1 {
            return Ok(0);
        }
        let k = ((t - self.t0) / self.dt).round();
        let idx = k as usize;
        if (self.time(idx) - t).abs() > 1e-12 * scale {
            return Err(Error::InvalidData(format!(
                "time {t} does not align with path knots (t0 {} dt {})",
                self.t0, self.dt
            )));
        }
        Ok(idx.min(self.len() - 1))
    }
}

/// Orbital-set path on uniform time knots; the central trajectory object.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    t0: f64,
    dt: f64,
    states: Vec<OrbitalSet>,
}

impl Trajectory {
    pub fn new(t0: f64, dt: f64, states: Vec<OrbitalSet>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidData("empty trajectory".into()));
        }
        if states.len() > 1 && !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidData(format!("bad trajectory step {dt}")));
        }
        let grid = *states[0].grid();
        let n_orb = states[0].n_orbitals();
        for s in &states {
            grid.check_same(s.grid())?;
            if s.n_orbitals() != n_orb {
                return Err(Error::InvalidData("orbital count varies along trajectory".into()));
            }
        }
        Ok(Trajectory { t0, dt, states })
    }

    pub fn constant(state: OrbitalSet, t0: f64, dt: f64, knots: usize) -> Result<Self> {
        Self::new(t0, dt, vec![state; knots.max(1)])
    }

    pub fn grid(&self) -> &Grid {
        self.states[0].grid()
    }

    pub fn n_orbitals(&self) -> usize {
        self.states[0].n_orbitals()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + self.dt * k as f64
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.len() - 1)
    }

    pub fn state(&self, k: usize) -> &OrbitalSet {
        &self.states[k]
    }

    pub fn states(&self) -> &[OrbitalSet] {
        &self.states
    }

    pub fn last(&self) -> &OrbitalSet {
        self.states.last().expect("non-empty trajectory")
    }

    /// sup over knots of the H10 norm; the C(J; H10) norm of the solver.
    pub fn sup_norm(&self) -> f64 {
        self.states
            .iter()
            .map(|s| s.norm(NormKind::H10))
            .fold(0.0, f64::max)
    }

    pub fn density_path(&self) -> FieldPath {
        FieldPath {
            grid: *self.grid(),
            t0: self.t0,
            dt: self.dt,
            fields: self.states.iter().map(|s| s.density().values.clone()).collect(),
        }
    }

    pub fn sub(&self, other: &Trajectory) -> Result<Trajectory> {
        self.compatible(other)?;
        let states = self
            .states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| a.sub(b))
            .collect::<Result<Vec<_>>>()?;
        Trajectory::new(self.t0, self.dt, states)
    }

    pub fn add(&self, other: &Trajectory) -> Result<Trajectory> {
        self.compatible(other)?;
        let states = self
            .states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| a.add(b))
            .collect::<Result<Vec<_>>>()?;
        Trajectory::new(self.t0, self.dt, states)
    }

    pub fn scaled(&self, c: Complex64) -> Trajectory {
        Trajectory {
            t0: self.t0,
            dt: self.dt,
            states: self.states.iter().map(|s| s.scaled(c)).collect(),
        }
    }

    /// self += c * other.
    pub fn axpy(&mut self, c: Complex64, other: &Trajectory) -> Result<()> {
        self.compatible(other)?;
        for (a, b) in self.states.iter_mut().zip(&other.states) {
            a.axpy(c, b)?;
        }
        Ok(())
    }

    pub fn compatible(&self, other: &Trajectory) -> Result<()> {
        self.grid().check_same(other.grid())?;
        if self.len() != other.len()
            || self.n_orbitals() != other.n_orbitals()
            || (self.t0 - other.t0).abs() > 1e-12 * (1.0 + self.t0.abs())
            || (self.dt - other.dt).abs() > 1e-12 * (1.0 + self.dt.abs())
        {
            return Err(Error::InvalidData("trajectory layout mismatch".into()));
        }
        Ok(())
    }
}

/// sup-over-knots H10 norm as a free function.
pub fn sup_norm(traj: &Trajectory) -> f64 {
    traj.sup_norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use num_complex::Complex64;
    use std::f64::consts::PI;

    fn sine_state(grid: Grid, k: usize) -> OrbitalSet {
        let mut st = OrbitalSet::zeros(grid, 1);
        let l = grid.axis_length();
        for i in 0..grid.n_points() {
            let x = grid.coords(i)[0];
            st.values_mut()[[0, i]] = Complex64::new((k as f64 * PI * x / l).sin(), 0.0);
        }
        st
    }

    #[test]
    fn sine_l2_norm_matches_closed_form() {
        // The lattice sum of sin^2(k pi x / L) over interior points is exactly
        // (n+1)/2, so the discrete L2 norm equals sqrt(L/2) to round-off.
        let grid = Grid::new_1d(128, 8.0).unwrap();
        let st = sine_state(grid, 1);
        assert_relative_eq!(st.norm(NormKind::L2), (8.0f64 / 2.0).sqrt(), max_relative = 1e-13);
        let st3 = sine_state(grid, 3);
        assert_relative_eq!(st3.norm(NormKind::L2), 2.0, max_relative = 1e-13);
    }

    #[test]
    fn sine_h10_norm_matches_discrete_dispersion() {
        // Gradient energy of the k-th sine mode equals mu_k * L/2 where
        // mu_k = (4/h^2) sin^2(k pi h / 2L) is the (positive) eigenvalue of
        // -lap; this is exact, and it converges to (k pi/L)^2 L/2 at O(h^2).
        let grid = Grid::new_1d(128, 8.0).unwrap();
        let h = grid.spacing();
        let l = grid.axis_length();
        for k in [1usize, 2, 5] {
            let st = sine_state(grid, k);
            let mu = (4.0 / (h * h)) * ((k as f64 * PI * h) / (2.0 * l)).sin().powi(2);
            let expected = (l / 2.0 * (1.0 + mu)).sqrt();
            assert_relative_eq!(st.norm(NormKind::H10), expected, max_relative = 1e-12);
            // Continuum value within O(h^2).
            let continuum = (l / 2.0 * (1.0 + (k as f64 * PI / l).powi(2))).sqrt();
            let rel = (st.norm(NormKind::H10) - continuum).abs() / continuum;
            assert!(rel < h * h, "k={k}: rel err {rel} not O(h^2)");
        }
    }

    #[test]
    fn sine_modes_are_laplacian_eigenvectors() {
        let grid = Grid::new_1d(64, 5.0).unwrap();
        let h = grid.spacing();
        let l = grid.axis_length();
        for k in [1usize, 4, 9] {
            let st = sine_state(grid, k);
            let lap = laplacian(&st);
            let lambda = 2.0 / (h * h) * ((k as f64 * PI * h / l).cos() - 1.0);
            let mut err: f64 = 0.0;
            for i in 0..grid.n_points() {
                let diff = lap.values()[[0, i]] - lambda * st.values()[[0, i]];
                err = err.max(diff.norm());
            }
            assert!(err < 1e-9 / (h * h) * 1e-3, "mode {k} eigen defect {err}");
            assert!(lambda <= 0.0);
        }
    }

    #[test]
    fn laplacian_of_linear_profile_is_boundary_closure_only() {
        // f_i = c (i+1) extends linearly through zero at the left wall, so the
        // stencil vanishes everywhere except the right wall face, where the
        // ghost zero breaks linearity: output = -c (n+1) / h^2 at i = n-1.
        let grid = Grid::new_1d(4, 1.0).unwrap();
        let c = 0.7;
        let mut st = OrbitalSet::zeros(grid, 1);
        for i in 0..4 {
            st.values_mut()[[0, i]] = Complex64::new(c * (i as f64 + 1.0), 0.0);
        }
        let lap = laplacian(&st);
        let h2 = grid.spacing() * grid.spacing();
        for i in 0..3 {
            assert!(lap.values()[[0, i]].norm() < 1e-12, "interior {i} not zero");
        }
        assert_relative_eq!(
            lap.values()[[0, 3]].re,
            -c * 5.0 / h2,
            max_relative = 1e-12
        );
    }

    #[test]
    fn gradient_energy_is_exactly_dual_to_laplacian() {
        // <-lap f, f> == gradient energy, by summation by parts.
        let grid = Grid::new_1d(50, 3.0).unwrap();
        let mut st = OrbitalSet::zeros(grid, 2);
        for i in 0..50 {
            let x = grid.coords(i)[0];
            st.values_mut()[[0, i]] = Complex64::new((1.3 * x).sin(), (0.4 * x).cos() * x);
            st.values_mut()[[1, i]] = Complex64::new(x * (3.0 - x), (2.0 * x).sin());
        }
        let lap = laplacian(&st);
        let pair = st.l2_inner(&lap).unwrap();
        assert_relative_eq!(-pair.re, st.gradient_energy(), max_relative = 1e-12);
        assert!(pair.im.abs() < 1e-10 * st.gradient_energy());
    }

    #[test]
    fn gradient_duality_holds_in_3d() {
        let grid = Grid::new_3d(8, 2.0).unwrap();
        let mut st = OrbitalSet::zeros(grid, 1);
        for i in 0..grid.n_points() {
            let [x, y, z] = grid.coords(i);
            st.values_mut()[[0, i]] = Complex64::new((x * y).sin() + z, (x - y * z).cos());
        }
        let lap = laplacian(&st);
        let pair = st.l2_inner(&lap).unwrap();
        assert_relative_eq!(-pair.re, st.gradient_energy(), max_relative = 1e-12);
    }

    #[test]
    fn laplacian_is_self_adjoint_and_negative() {
        let grid = Grid::new_1d(40, 2.0).unwrap();
        let mut f = OrbitalSet::zeros(grid, 1);
        let mut g = OrbitalSet::zeros(grid, 1);
        for i in 0..40 {
            let x = grid.coords(i)[0];
            f.values_mut()[[0, i]] = Complex64::new((2.0 * x).sin(), x);
            g.values_mut()[[0, i]] = Complex64::new(x * x, (-x).exp());
        }
        let lf = laplacian(&f);
        let lg = laplacian(&g);
        let a = lf.l2_inner(&g).unwrap();
        let b = f.l2_inner(&lg).unwrap();
        assert!((a - b).norm() <= 1e-10 * a.norm().max(1.0), "self-adjointness");
        let ff = f.l2_inner(&lf).unwrap();
        assert!(ff.re <= 0.0, "negative semidefinite");
    }

    #[test]
    fn norm_axioms_hold() {
        let grid = Grid::new_1d(32, 1.0).unwrap();
        let mut f = OrbitalSet::zeros(grid, 1);
        let mut g = OrbitalSet::zeros(grid, 1);
        for i in 0..32 {
            let x = grid.coords(i)[0];
            f.values_mut()[[0, i]] = Complex64::new((5.0 * x).sin(), x * x);
            g.values_mut()[[0, i]] = Complex64::new(x, (3.0 * x).cos());
        }
        for kind in [NormKind::L2, NormKind::H10, NormKind::HMinus1] {
            let s = f.scaled(Complex64::new(-2.5, 1.0));
            let scale = Complex64::new(-2.5, 1.0).norm();
            assert_relative_eq!(s.norm(kind), scale * f.norm(kind), max_relative = 1e-12);
            let sum = f.add(&g).unwrap();
            assert!(sum.norm(kind) <= f.norm(kind) + g.norm(kind) + 1e-12);
            let zero = OrbitalSet::zeros(grid, 1);
            assert_eq!(zero.norm(kind), 0.0);
        }
    }

    #[test]
    fn h_minus_1_is_dual_quadratic_form() {
        // ||f||_{H-1}^2 = <u, f> with (I - lap) u = f; verify against an
        // independent evaluation through the solve.
        let grid = Grid::new_1d(48, 2.0).unwrap();
        let mut f = OrbitalSet::zeros(grid, 1);
        for i in 0..48 {
            let x = grid.coords(i)[0];
            f.values_mut()[[0, i]] = Complex64::new((4.0 * x).sin(), 0.3 * x);
        }
        let fv: Vec<Complex64> = f.values().row(0).to_vec();
        let u = helmholtz_solve(&grid, &fv).unwrap();
        // (I - lap) u should reproduce f.
        let lap_u = laplacian_scalar(&grid, &u);
        let mut err: f64 = 0.0;
        for i in 0..48 {
            err = err.max((u[i] - lap_u[i] - fv[i]).norm());
        }
        assert!(err < 1e-10, "helmholtz defect {err}");
        // And H-1 <= L2 <= H10 ordering (I - lap >= I).
        assert!(f.norm(NormKind::HMinus1) <= f.norm(NormKind::L2) + 1e-12);
        assert!(f.norm(NormKind::L2) <= f.norm(NormKind::H10) + 1e-12);
    }

    #[test]
    fn trajectory_layout_is_validated() {
        let grid = Grid::new_1d(8, 1.0).unwrap();
        let st = OrbitalSet::zeros(grid, 1);
        assert!(Trajectory::new(0.0, 0.1, vec![]).is_err());
        let tr = Trajectory::constant(st.clone(), 0.0, 0.1, 5).unwrap();
        assert_eq!(tr.len(), 5);
        assert_relative_eq!(tr.t_end(), 0.4);
        let other_grid = Grid::new_1d(9, 1.0).unwrap();
        let bad = Trajectory::new(
            0.0,
            0.1,
            vec![st, OrbitalSet::zeros(other_grid, 1)],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn density_is_nonnegative_and_mass_adds_up() {
        let grid = Grid::new_1d(16, 2.0).unwrap();
        let mut st = OrbitalSet::zeros(grid, 2);
        for i in 0..16 {
            st.values_mut()[[0, i]] = Complex64::new(1.0, -1.0);
            st.values_mut()[[1, i]] = Complex64::new(0.5, 0.0);
        }
        let rho = st.density();
        assert!(rho.values().iter().all(|v| *v >= 0.0));
        // |1 - i|^2 + |0.5|^2 = 2.25 per point; mass = 2.25 * 16 * h.
        assert_relative_eq!(rho.mass(), 2.25 * 16.0 * grid.spacing(), max_relative = 1e-13);
        assert!(DensityField::from_values(grid, Array1::from_elem(16, -1.0)).is_err());
    }
}
