//! Zero-padded fast convolution against a radial kernel table.
//!
//! Interaction potentials are lattice convolutions
//! (W * f)(x_i) = h^dim * sum_j W(x_i - x_j) f(x_j); with zero padding to at
//! least twice the grid this is exactly a circular convolution, evaluated by
//! forward/inverse FFTs. The kernel spectrum is planned once per binding and
//! reused for every application.

use crate::grid::Grid;
use ndarray::Array1;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

#[derive(Clone)]
pub struct ConvKernel {
    grid: Grid,
    pad: usize,
    spectrum: Vec<Complex64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for ConvKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConvKernel")
            .field("grid", &self.grid)
            .field("pad", &self.pad)
            .finish()
    }
}

impl ConvKernel {
    /// Build the padded spectrum of a radial kernel W(|xi|) sampled on all
    /// lattice offsets that the grid can realize.
    pub fn new<W: Fn(f64) -> f64>(grid: Grid, kernel: W) -> Self {
        let n = grid.points_per_axis();
        let h = grid.spacing();
        let pad = (2 * n).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(pad);
        let inv = planner.plan_fft_inverse(pad);

        let total = pad.pow(grid.dim() as u32);
        let mut table = vec![Complex64::new(0.0, 0.0); total];
        let offset = |j: usize| -> i64 {
            let j = j as i64;
            let p = pad as i64;
            if j <= p / 2 {
                j
            } else {
                j - p
            }
        };
        match grid.dim() {
            1 => {
                for (j, slot) in table.iter_mut().enumerate() {
                    let o = offset(j);
                    if o.unsigned_abs() as usize <= n - 1 {
                        *slot = Complex64::new(kernel((o as f64 * h).abs()), 0.0);
                    }
                }
            }
            3 => {
                for jx in 0..pad {
                    let ox = offset(jx);
                    if ox.unsigned_abs() as usize > n - 1 {
                        continue;
                    }
                    for jy in 0..pad {
                        let oy = offset(jy);
                        if oy.unsigned_abs() as usize > n - 1 {
                            continue;
                        }
                        for jz in 0..pad {
                            let oz = offset(jz);
                            if oz.unsigned_abs() as usize > n - 1 {
                                continue;
                            }
                            let r = h * (((ox * ox + oy * oy + oz * oz) as f64).sqrt());
                            table[(jx * pad + jy) * pad + jz] = Complex64::new(kernel(r), 0.0);
                        }
                    }
                }
            }
            _ => unreachable!("grid dim is 1 or 3"),
        }
        fft_nd(&mut table, pad, grid.dim(), fwd.as_ref());
        ConvKernel {
            grid,
            pad,
            spectrum: table,
            fwd,
            inv,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// (W * f) for a real field; result is real up to round-off.
    pub fn apply(&self, field: &Array1<f64>) -> Array1<f64> {
        let as_complex: Vec<Complex64> =
            field.iter().map(|v| Complex64::new(*v, 0.0)).collect();
        let out = self.apply_complex(&as_complex);
        Array1::from_iter(out.into_iter().map(|z| z.re))
    }

    /// (W * f) for a complex field.
    pub fn apply_complex(&self, field: &[Complex64]) -> Vec<Complex64> {
        let n = self.grid.points_per_axis();
        let pad = self.pad;
        let dim = self.grid.dim();
        let total = pad.pow(dim as u32);
        assert_eq!(field.len(), self.grid.n_points(), "field/grid mismatch");

        let mut buf = vec![Complex64::new(0.0, 0.0); total];
        match dim {
            1 => buf[..n].copy_from_slice(field),
            _ => {
                for ix in 0..n {
                    for iy in 0..n {
                        let src = (ix * n + iy) * n;
                        let dst = (ix * pad + iy) * pad;
                        buf[dst..dst + n].copy_from_slice(&field[src..src + n]);
                    }
                }
            }
        }
        fft_nd(&mut buf, pad, dim, self.fwd.as_ref());
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= s;
        }
        fft_nd(&mut buf, pad, dim, self.inv.as_ref());
        let scale = self.grid.cell_volume() / total as f64;
        match dim {
            1 => buf[..n].iter().map(|z| z * scale).collect(),
            _ => {
                let mut out = vec![Complex64::new(0.0, 0.0); self.grid.n_points()];
                for ix in 0..n {
                    for iy in 0..n {
                        let src = (ix * pad + iy) * pad;
                        let dst = (ix * n + iy) * n;
                        for iz in 0..n {
                            out[dst + iz] = buf[src + iz] * scale;
                        }
                    }
                }
                out
            }
        }
    }
}

/// In-place FFT over each axis of a flat dim-dimensional cube of side `pad`.
fn fft_nd(buf: &mut [Complex64], pad: usize, dim: usize, fft: &dyn Fft<f64>) {
    match dim {
        1 => fft.process(buf),
        3 => {
            let mut scratch = vec![Complex64::new(0.0, 0.0); pad];
            // z lines are contiguous
            for line in buf.chunks_exact_mut(pad) {
                fft.process(line);
            }
            // y lines: stride pad
            for ix in 0..pad {
                for iz in 0..pad {
                    for iy in 0..pad {
                        scratch[iy] = buf[(ix * pad + iy) * pad + iz];
                    }
                    fft.process(&mut scratch);
                    for iy in 0..pad {
                        buf[(ix * pad + iy) * pad + iz] = scratch[iy];
                    }
                }
            }
            // x lines: stride pad^2
            for iy in 0..pad {
                for iz in 0..pad {
                    for ix in 0..pad {
                        scratch[ix] = buf[(ix * pad + iy) * pad + iz];
                    }
                    fft.process(&mut scratch);
                    for ix in 0..pad {
                        buf[(ix * pad + iy) * pad + iz] = scratch[ix];
                    }
                }
            }
        }
        _ => unreachable!(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn direct_conv_1d(grid: &Grid, kernel: impl Fn(f64) -> f64, f: &Array1<f64>) -> Vec<f64> {
        let n = grid.n_points();
        let h = grid.spacing();
        (0..n)
            .map(|i| {
                let xi = grid.coords(i)[0];
                (0..n)
                    .map(|j| kernel((xi - grid.coords(j)[0]).abs()) * f[j])
                    .sum::<f64>()
                    * h
            })
            .collect()
    }

    #[test]
    fn delta_mass_reproduces_kernel_row() {
        // A unit point mass at x0 turns convolution into a kernel readout:
        // (W * rho)(x) = q * W(x - x0) when the lattice mass is q.
        let grid = Grid::new_1d(64, 4.0).unwrap();
        let h = grid.spacing();
        let a = 2.0 * h;
        let w = move |r: f64| 1.0 / (r * r + a * a).sqrt();
        let kern = ConvKernel::new(grid, w);
        let i0 = 20;
        let q = 0.37;
        let mut rho = Array1::zeros(grid.n_points());
        rho[i0] = q / h; // lattice mass h * (q/h) = q
        let out = kern.apply(&rho);
        for i in 0..grid.n_points() {
            let expected = q * w((grid.coords(i)[0] - grid.coords(i0)[0]).abs());
            assert_relative_eq!(out[i], expected, max_relative = 1e-11, epsilon = 1e-13);
        }
    }

    #[test]
    fn matches_direct_summation_1d() {
        let grid = Grid::new_1d(48, 3.0).unwrap();
        let a = 0.1;
        let w = move |r: f64| 1.0 / (r * r + a * a).sqrt();
        let kern = ConvKernel::new(grid, w);
        let f = Array1::from_iter((0..48).map(|i| ((i * 7 % 13) as f64 - 6.0) * 0.21));
        let fast = kern.apply(&f);
        let slow = direct_conv_1d(&grid, w, &f);
        for i in 0..48 {
            assert_relative_eq!(fast[i], slow[i], max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn matches_direct_summation_3d() {
        let grid = Grid::new_3d(6, 2.0).unwrap();
        let a = 0.3;
        let w = move |r: f64| if r > a { 1.0 / r } else { (3.0 - (r / a).powi(2)) / (2.0 * a) };
        let kern = ConvKernel::new(grid, w);
        let npts = grid.n_points();
        let f = Array1::from_iter((0..npts).map(|i| ((i * 11 % 17) as f64 - 8.0) * 0.05));
        let fast = kern.apply(&f);
        let h3 = grid.cell_volume();
        for i in (0..npts).step_by(37) {
            let xi = grid.coords(i);
            let mut slow = 0.0;
            for j in 0..npts {
                let xj = grid.coords(j);
                let r = ((xi[0] - xj[0]).powi(2) + (xi[1] - xj[1]).powi(2) + (xi[2] - xj[2]).powi(2))
                    .sqrt();
                slow += w(r) * f[j];
            }
            slow *= h3;
            assert_relative_eq!(fast[i], slow, max_relative = 1e-9, epsilon = 1e-12);
        }
    }

    #[test]
    fn convolution_is_linear() {
        let grid = Grid::new_1d(32, 1.0).unwrap();
        let kern = ConvKernel::new(grid, |r| (-r).exp());
        let f = Array1::from_iter((0..32).map(|i| (i as f64 * 0.3).sin()));
        let g = Array1::from_iter((0..32).map(|i| (i as f64 * 0.11).cos()));
        let lhs = kern.apply(&(&f * 2.0 + &g * -0.5));
        let rhs = &kern.apply(&f) * 2.0 + &kern.apply(&g) * -0.5;
        for i in 0..32 {
            assert_relative_eq!(lhs[i], rhs[i], max_relative = 1e-11, epsilon = 1e-13);
        }
    }
}
