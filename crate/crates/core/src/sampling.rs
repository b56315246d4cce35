//! Deterministic random states, fields, and trajectories for empirical
//! constant estimation and for the audit suites. Everything is driven by an
//! explicit seed so that runs and reports are reproducible bit for bit.

use crate::grid::{Grid, OrbitalSet, Trajectory};
use crate::grid::{h10_norm_scalar, NormKind};
use ndarray::Array1;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// Default seed of the audit suites.
pub const AUDIT_SEED: u64 = 0x5EED;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal via Box-Muller (keeps the dependency surface small and
/// the stream layout obvious).
fn randn(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn randn_c(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(randn(rng), randn(rng))
}

/// Random smooth complex field: a sine-mode expansion with spectrally
/// decaying random coefficients, so samples look like admissible states
/// rather than lattice noise.
pub fn random_scalar_field(grid: &Grid, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    let n = grid.points_per_axis();
    let l = grid.axis_length();
    let npts = grid.n_points();
    let mut out = vec![Complex64::new(0.0, 0.0); npts];
    match grid.dim() {
        1 => {
            let kmax = n.min(12);
            for k in 1..=kmax {
                let a = randn_c(rng) / (k as f64).powf(1.5);
                for (i, slot) in out.iter_mut().enumerate() {
                    let x = grid.coords(i)[0];
                    *slot += a * (k as f64 * PI * x / l).sin();
                }
            }
        }
        _ => {
            let kmax = n.min(4);
            for _ in 0..10 {
                let kx = rng.gen_range(1..=kmax) as f64;
                let ky = rng.gen_range(1..=kmax) as f64;
                let kz = rng.gen_range(1..=kmax) as f64;
                let a = randn_c(rng) / (kx * kx + ky * ky + kz * kz).powf(0.75);
                for (i, slot) in out.iter_mut().enumerate() {
                    let [x, y, z] = grid.coords(i);
                    *slot += a
                        * (kx * PI * x / l).sin()
                        * (ky * PI * y / l).sin()
                        * (kz * PI * z / l).sin();
                }
            }
        }
    }
    out
}

/// Random real scalar field (same construction, real coefficients).
pub fn random_real_field(grid: &Grid, rng: &mut ChaCha8Rng) -> Array1<f64> {
    let f = random_scalar_field(grid, rng);
    Array1::from_iter(f.into_iter().map(|z| z.re))
}

/// Random smooth complex scalar field scaled to unit H10 norm.
pub fn random_unit_scalar(grid: &Grid, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    let mut f = random_scalar_field(grid, rng);
    let nrm = h10_norm_scalar(grid, &f);
    if nrm > 0.0 {
        for z in &mut f {
            *z /= nrm;
        }
    }
    f
}

/// Random orbital set, optionally rescaled to a target H10 norm.
pub fn random_state(
    grid: &Grid,
    n_orbitals: usize,
    rng: &mut ChaCha8Rng,
    target_h10: Option<f64>,
) -> OrbitalSet {
    let mut st = OrbitalSet::zeros(*grid, n_orbitals);
    for orb in 0..n_orbitals {
        let f = random_scalar_field(grid, rng);
        for (i, z) in f.into_iter().enumerate() {
            st.values_mut()[[orb, i]] = z;
        }
    }
    if let Some(target) = target_h10 {
        let nrm = st.norm(NormKind::H10);
        if nrm > 0.0 {
            st = st.scaled(Complex64::new(target / nrm, 0.0));
        }
    }
    st
}

/// Random trajectory that is smooth in time: a two-state rotation
/// psi(t) = A cos(theta(t)) + B sin(theta(t)), rescaled so the sup-over-knots
/// H10 norm hits the target (when given).
pub fn random_trajectory(
    grid: &Grid,
    n_orbitals: usize,
    t0: f64,
    dt: f64,
    knots: usize,
    rng: &mut ChaCha8Rng,
    target_sup: Option<f64>,
) -> Trajectory {
    let a = random_state(grid, n_orbitals, rng, None);
    let b = random_state(grid, n_orbitals, rng, None);
    let phase: f64 = rng.gen_range(0.0..PI);
    let span = dt * (knots.max(2) - 1) as f64;
    let mut states = Vec::with_capacity(knots);
    for k in 0..knots.max(1) {
        let theta = phase * (k as f64 * dt) / span.max(dt);
        let mut s = a.scaled(Complex64::new(theta.cos(), 0.0));
        s.axpy(Complex64::new(theta.sin(), 0.0), &b).expect("same layout");
        states.push(s);
    }
    let mut traj = Trajectory::new(t0, dt, states).expect("valid trajectory");
    if let Some(target) = target_sup {
        let nrm = traj.sup_norm();
        if nrm > 0.0 {
            traj = traj.scaled(Complex64::new(target / nrm, 0.0));
        }
    }
    traj
}
