//! Small dense/sparse kernels used by the propagator and the norm machinery:
//! a Thomas solve for symmetric tridiagonal systems with constant
//! off-diagonal, and a matrix-free conjugate-gradient loop for the
//! Hermitian positive-definite systems that show up in 3D.

use crate::error::{Error, Result};
use num_complex::Complex64;

/// Solve (diag, off) x = rhs where the matrix is tridiagonal, symmetric,
/// and has the same scalar `off` on both off-diagonals. The variable
/// diagonal is what the one-body potential contributes.
pub fn thomas_symmetric(diag: &[Complex64], off: Complex64, rhs: &[Complex64]) -> Vec<Complex64> {
    let n = diag.len();
    assert_eq!(n, rhs.len(), "tridiagonal solve shape mismatch");
    if n == 0 {
        return Vec::new();
    }
    let mut c_prime = vec![Complex64::new(0.0, 0.0); n];
    let mut d_prime = vec![Complex64::new(0.0, 0.0); n];
    c_prime[0] = off / diag[0];
    d_prime[0] = rhs[0] / diag[0];
    for i in 1..n {
        let denom = diag[i] - off * c_prime[i - 1];
        c_prime[i] = off / denom;
        d_prime[i] = (rhs[i] - off * d_prime[i - 1]) / denom;
    }
    let mut x = d_prime;
    for i in (0..n - 1).rev() {
        let next = x[i + 1];
        x[i] -= c_prime[i] * next;
    }
    x
}

/// Conjugate gradients for a Hermitian positive-definite operator given as a
/// closure. Returns the solution and the iteration count; errors if the
/// relative residual does not reach `tol` within `max_iters`.
pub fn conjugate_gradient<F>(
    apply: F,
    rhs: &[Complex64],
    tol: f64,
    max_iters: usize,
) -> Result<(Vec<Complex64>, usize)>
where
    F: Fn(&[Complex64]) -> Vec<Complex64>,
{
    let n = rhs.len();
    let norm_b = l2(rhs);
    if norm_b == 0.0 {
        return Ok((vec![Complex64::new(0.0, 0.0); n], 0));
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rs_old = dot(&r, &r);
    for it in 0..max_iters {
        if l2(&r) <= tol * norm_b {
            return Ok((x, it));
        }
        let ap = apply(&p);
        let alpha = rs_old / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new = dot(&r, &r);
        let beta = rs_new / rs_old;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs_old = rs_new;
    }
    if l2(&r) <= tol * norm_b {
        return Ok((x, max_iters));
    }
    Err(Error::LinearSolve {
        residual: l2(&r) / norm_b,
        iterations: max_iters,
    })
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn l2(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}
