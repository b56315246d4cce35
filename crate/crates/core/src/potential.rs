//! The effective one-body potential: a confining external family, a softened
//! Coulomb interaction applied through lattice convolution, and an optional
//! history-type exchange-correlation term
//!
//! ```text
//! Phi(x, t, rho) = phi0(rho(0)) + int_0^t phi(x, s, rho(s)) ds
//! ```
//!
//! with phi = c_xc * (g_sigma * rho) for the built-in model. Everything a
//! certification formula needs about the kernels (L1/L2 norms, gradient
//! norms, sup bounds) is computed at bind time by fine radial quadrature and
//! carried alongside the convolution tables.

use crate::conv::ConvKernel;
use crate::error::{Error, Result};
use crate::grid::{DensityField, FieldPath, Grid, OrbitalSet};
use ndarray::Array1;
use num_complex::Complex64;
use std::f64::consts::PI;

/// Confining external potentials. All families are radial around the box
/// center so V >= 0 and grad V = k(t) (x - c) with an analytic k(t).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExternalPotential {
    Zero,
    /// V = (strength/2) |x - c|^2.
    Harmonic { strength: f64 },
    /// V = (strength/2) |x - c|^2 (1 + amplitude sin(frequency t)).
    /// |amplitude| <= 1 keeps V nonnegative.
    DrivenHarmonic {
        strength: f64,
        amplitude: f64,
        frequency: f64,
    },
}

impl ExternalPotential {
    fn stiffness(&self, t: f64) -> f64 {
        match self {
            ExternalPotential::Zero => 0.0,
            ExternalPotential::Harmonic { strength } => *strength,
            ExternalPotential::DrivenHarmonic {
                strength,
                amplitude,
                frequency,
            } => strength * (1.0 + amplitude * (frequency * t).sin()),
        }
    }

    fn stiffness_dt(&self, t: f64) -> f64 {
        match self {
            ExternalPotential::DrivenHarmonic {
                strength,
                amplitude,
                frequency,
            } => strength * amplitude * frequency * (frequency * t).cos(),
            _ => 0.0,
        }
    }

    pub fn value(&self, r_sq: f64, t: f64) -> f64 {
        0.5 * self.stiffness(t) * r_sq
    }

    /// Analytic time derivative dV/dt.
    pub fn dt_value(&self, r_sq: f64, t: f64) -> f64 {
        0.5 * self.stiffness_dt(t) * r_sq
    }

    fn validate(&self) -> Result<()> {
        match self {
            ExternalPotential::Zero => Ok(()),
            ExternalPotential::Harmonic { strength } => {
                if *strength >= 0.0 && strength.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Config(format!("harmonic strength {strength} must be >= 0")))
                }
            }
            ExternalPotential::DrivenHarmonic {
                strength,
                amplitude,
                frequency,
            } => {
                if !(*strength >= 0.0 && strength.is_finite()) {
                    return Err(Error::Config(format!("harmonic strength {strength} must be >= 0")));
                }
                if amplitude.abs() > 1.0 {
                    return Err(Error::Config(
                        "drive amplitude must satisfy |a| <= 1 to keep V >= 0".into(),
                    ));
                }
                if !frequency.is_finite() {
                    return Err(Error::Config("drive frequency must be finite".into()));
                }
                Ok(())
            }
        }
    }
}

/// Softened Coulomb interaction block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HartreeSpec {
    /// Overall interaction strength; scales the kernel (and so every kernel
    /// norm the estimates consume).
    pub coupling: f64,
    /// Softening radius a; `None` defaults to two mesh widths at bind time.
    pub radius: Option<f64>,
}

/// Built-in history-type exchange-correlation block:
/// phi = coupling * (gaussian_width * rho), phi0 likewise on the initial density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XcSpec {
    pub coupling: f64,
    /// Standard deviation of the (mass-normalized) Gaussian kernel.
    pub width: f64,
}

/// Declarative model: what terms exist and with which parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialModel {
    pub external: ExternalPotential,
    pub hartree: Option<HartreeSpec>,
    pub xc: Option<XcSpec>,
    pub hbar: f64,
    pub mass: f64,
}

impl Default for PotentialModel {
    fn default() -> Self {
        PotentialModel {
            external: ExternalPotential::Zero,
            hartree: None,
            xc: None,
            hbar: 1.0,
            mass: 1.0,
        }
    }
}

/// Norms of the sampled kernel, taken as lattice sums over the same offset
/// table the discrete convolution uses. Lattice (not continuum) norms are
/// what the discrete Young/Hoelder chains need, so every certified
/// inequality downstream is stated for the operator actually applied.
/// Gradient norms use face differences of the kernel (one face beyond the
/// sampled range on each side, since the kernel profile is evaluable
/// anywhere), which is exactly the gradient the convolution identity
/// D(W * u) = (D W) * u produces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelNorms {
    pub l1: f64,
    pub l2: f64,
    /// Sum over axes of the l1 norms of the per-axis face differences;
    /// dominates any mixed-norm gradient bound the estimates need.
    pub grad_l1: f64,
    pub grad_l3: f64,
    pub sup: f64,
    pub grad_sup: f64,
}

fn lattice_norms(grid: &Grid, w: impl Fn(f64) -> f64) -> KernelNorms {
    let h = grid.spacing();
    let n = grid.points_per_axis() as i64;
    let cell = grid.cell_volume();
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    let mut g1 = 0.0;
    let mut g3 = 0.0;
    let mut sup: f64 = 0.0;
    let mut gsup: f64 = 0.0;
    match grid.dim() {
        1 => {
            for o in -(n - 1)..=(n - 1) {
                let v = w((o as f64 * h).abs()).abs();
                l1 += v * cell;
                l2 += v * v * cell;
                sup = sup.max(v);
            }
            // faces between offsets o and o+1, one beyond the range each side
            for o in -n..=(n - 1) {
                let a = w((o as f64 * h).abs());
                let b = w(((o + 1) as f64 * h).abs());
                let d = ((b - a) / h).abs();
                g1 += d * cell;
                g3 += d.powi(3) * cell;
                gsup = gsup.max(d);
            }
        }
        _ => {
            let rad = |ox: i64, oy: i64, oz: i64| {
                ((ox * ox + oy * oy + oz * oz) as f64).sqrt() * h
            };
            for ox in -(n - 1)..=(n - 1) {
                for oy in -(n - 1)..=(n - 1) {
                    for oz in -(n - 1)..=(n - 1) {
                        let v = w(rad(ox, oy, oz)).abs();
                        l1 += v * cell;
                        l2 += v * v * cell;
                        sup = sup.max(v);
                    }
                }
            }
            // axis faces; by radial symmetry each axis contributes equally
            for ox in -n..=(n - 1) {
                for oy in -(n - 1)..=(n - 1) {
                    for oz in -(n - 1)..=(n - 1) {
                        let a = w(rad(ox, oy, oz));
                        let b = w(rad(ox + 1, oy, oz));
                        let d = ((b - a) / h).abs();
                        g1 += 3.0 * d * cell;
                        g3 += 3.0 * d.powi(3) * cell;
                        gsup = gsup.max(d);
                    }
                }
            }
            // vector-magnitude corrections: |grad W|^3 <= sqrt(3) sum_d |D_d W|^3
            // and |grad W| <= sqrt(3) max_d |D_d W|.
            g3 *= 3f64.sqrt();
            gsup *= 3f64.sqrt();
        }
    }
    KernelNorms {
        l1,
        l2: l2.sqrt(),
        grad_l1: g1,
        grad_l3: g3.powf(1.0 / 3.0),
        sup,
        grad_sup: gsup,
    }
}

#[derive(Debug, Clone)]
struct HartreeBlock {
    kernel: ConvKernel,
    norms: KernelNorms,
    radius: f64,
}

#[derive(Debug, Clone)]
struct XcBlock {
    kernel: ConvKernel,
    norms: KernelNorms,
    width: f64,
}

/// A `PotentialModel` bound to a grid and a time horizon: convolution tables
/// planned, kernel norms measured, ready to evaluate fields.
#[derive(Debug, Clone)]
pub struct Potential {
    grid: Grid,
    model: PotentialModel,
    horizon: f64,
    hartree: Option<HartreeBlock>,
    xc: Option<XcBlock>,
    /// Exchange-correlation history accumulated before this potential's time
    /// origin; lets a continuation window reproduce the full-horizon history.
    phi_carry: Option<Array1<f64>>,
}

impl Potential {
    pub fn bind(model: PotentialModel, grid: Grid, horizon: f64) -> Result<Self> {
        model.external.validate()?;
        if !(model.hbar > 0.0 && model.hbar.is_finite()) {
            return Err(Error::Config(format!("hbar {} must be positive", model.hbar)));
        }
        if !(model.mass > 0.0 && model.mass.is_finite()) {
            return Err(Error::Config(format!("mass {} must be positive", model.mass)));
        }
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!("horizon {horizon} must be >= 0")));
        }

        let hartree = match &model.hartree {
            None => None,
            Some(spec) => {
                if !(spec.coupling >= 0.0 && spec.coupling.is_finite()) {
                    return Err(Error::Config("interaction coupling must be >= 0".into()));
                }
                let a = spec.radius.unwrap_or(2.0 * grid.spacing());
                if grid.dim() == 1 && a <= 0.0 {
                    return Err(Error::Config(
                        "softening radius must be positive on a 1D grid".into(),
                    ));
                }
                if a < 0.0 {
                    return Err(Error::Config("softening radius must be >= 0".into()));
                }
                let lam = spec.coupling;
                let w: Box<dyn Fn(f64) -> f64> = match grid.dim() {
                    // 1D: softened Coulomb lam / sqrt(r^2 + a^2).
                    1 => Box::new(move |r: f64| lam / (r * r + a * a).sqrt()),
                    // 3D: lam / max(r, a) with a C1 interior blend
                    // (the classic uniformly-charged-sphere profile).
                    _ => {
                        if a > 0.0 {
                            Box::new(move |r: f64| {
                                if r > a {
                                    lam / r
                                } else {
                                    lam * (3.0 - (r / a).powi(2)) / (2.0 * a)
                                }
                            })
                        } else {
                            // Unsoftened 3D kernel; the self-cell sample is
                            // dropped (W(0) := 0), the standard lattice-sum
                            // convention.
                            Box::new(move |r: f64| if r > 0.0 { lam / r } else { 0.0 })
                        }
                    }
                };
                let norms = lattice_norms(&grid, &w);
                Some(HartreeBlock {
                    kernel: ConvKernel::new(grid, &w),
                    norms,
                    radius: a,
                })
            }
        };

        let xc = match &model.xc {
            None => None,
            Some(spec) => {
                if !(spec.coupling >= 0.0 && spec.coupling.is_finite()) {
                    return Err(Error::Config("xc coupling must be >= 0".into()));
                }
                if !(spec.width > 0.0 && spec.width.is_finite()) {
                    return Err(Error::Config("xc kernel width must be positive".into()));
                }
                let c = spec.coupling;
                let s = spec.width;
                let norm_const = match grid.dim() {
                    1 => 1.0 / (s * (2.0 * PI).sqrt()),
                    _ => (2.0 * PI * s * s).powf(-1.5),
                };
                let g = move |r: f64| c * norm_const * (-r * r / (2.0 * s * s)).exp();
                let norms = lattice_norms(&grid, g);
                Some(XcBlock {
                    kernel: ConvKernel::new(grid, g),
                    norms,
                    width: spec.width,
                })
            }
        };

        Ok(Potential {
            grid,
            model,
            horizon,
            hartree,
            xc,
            phi_carry: None,
        })
    }

    /// Attach exchange-correlation history accumulated before this
    /// potential's time origin (used when chaining windows).
    pub fn with_phi_carry(mut self, carry: Array1<f64>) -> Result<Self> {
        if carry.len() != self.grid.n_points() {
            return Err(Error::InvalidData("phi carry length does not match grid".into()));
        }
        self.phi_carry = Some(carry);
        Ok(self)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn model(&self) -> &PotentialModel {
        &self.model
    }

    pub fn hbar(&self) -> f64 {
        self.model.hbar
    }

    pub fn mass(&self) -> f64 {
        self.model.mass
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn has_hartree(&self) -> bool {
        self.hartree.is_some()
    }

    pub fn has_xc(&self) -> bool {
        self.xc.is_some()
    }

    pub fn hartree_norms(&self) -> Option<&KernelNorms> {
        self.hartree.as_ref().map(|b| &b.norms)
    }

    pub fn xc_norms(&self) -> Option<&KernelNorms> {
        self.xc.as_ref().map(|b| &b.norms)
    }

    pub fn hartree_radius(&self) -> Option<f64> {
        self.hartree.as_ref().map(|b| b.radius)
    }

    /// External potential sampled on the grid at time t.
    pub fn external_field(&self, t: f64) -> Array1<f64> {
        let c = self.grid.center();
        Array1::from_iter((0..self.grid.n_points()).map(|i| {
            let x = self.grid.coords(i);
            let r_sq = (0..self.grid.dim()).map(|d| (x[d] - c[d]).powi(2)).sum();
            self.model.external.value(r_sq, t)
        }))
    }

    /// Analytic dV/dt sampled on the grid.
    pub fn external_dt_field(&self, t: f64) -> Array1<f64> {
        let c = self.grid.center();
        Array1::from_iter((0..self.grid.n_points()).map(|i| {
            let x = self.grid.coords(i);
            let r_sq = (0..self.grid.dim()).map(|d| (x[d] - c[d]).powi(2)).sum();
            self.model.external.dt_value(r_sq, t)
        }))
    }

    /// Discrete L3 norm of |grad V| at time t (grad V = k(t)(x - c)).
    pub fn external_grad_l3(&self, t: f64) -> f64 {
        let k = self.model.external.stiffness(t).abs();
        let c = self.grid.center();
        let s: f64 = (0..self.grid.n_points())
            .map(|i| {
                let x = self.grid.coords(i);
                let r = (0..self.grid.dim())
                    .map(|d| (x[d] - c[d]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                (k * r).powi(3)
            })
            .sum();
        (s * self.grid.cell_volume()).powf(1.0 / 3.0)
    }

    /// Softened-interaction potential of a density.
    pub fn hartree(&self, rho: &DensityField) -> Result<Array1<f64>> {
        let block = self.hartree.as_ref().ok_or_else(|| {
            Error::Config("interaction term is disabled in this model".into())
        })?;
        if rho.grid() != &self.grid {
            return Err(Error::Grid("density grid does not match potential grid".into()));
        }
        Ok(block.kernel.apply(rho.values()))
    }

    /// Interaction convolution of an arbitrary real field (density
    /// increments, pair products, ...).
    pub fn hartree_of_field(&self, f: &Array1<f64>) -> Result<Array1<f64>> {
        let block = self.hartree.as_ref().ok_or_else(|| {
            Error::Config("interaction term is disabled in this model".into())
        })?;
        Ok(block.kernel.apply(f))
    }

    /// Interaction convolution of a complex field.
    pub fn hartree_of_complex(&self, f: &[Complex64]) -> Result<Vec<Complex64>> {
        let block = self.hartree.as_ref().ok_or_else(|| {
            Error::Config("interaction term is disabled in this model".into())
        })?;
        Ok(block.kernel.apply_complex(f))
    }

    fn xc_block(&self) -> Result<&XcBlock> {
        self.xc
            .as_ref()
            .ok_or_else(|| Error::Config("exchange-correlation block is disabled".into()))
    }

    /// Rate field phi(x, t_k, rho(t_k)) = c (g * rho_k) at every knot.
    fn xc_rates(&self, rho: &FieldPath) -> Result<Vec<Array1<f64>>> {
        let block = self.xc_block()?;
        Ok(rho.fields().iter().map(|f| block.kernel.apply(f)).collect())
    }

    /// History potential Phi(x, t, rho) at a knot time t of the path.
    pub fn xc_phi(&self, rho: &FieldPath, t: f64) -> Result<Array1<f64>> {
        let _ = self.xc_block()?;
        let k = rho.knot_at(t)?;
        let pp = self.path_interaction_from_density(rho)?;
        let mut out = Array1::zeros(self.grid.n_points());
        pp.add_history_at_knot(k, &mut out);
        Ok(out)
    }

    /// Directional derivative of the xc functional along a density-increment
    /// path p: z(t_k) = dphi0[p(0)] + int_0^{t_k} c (g * p(s)) ds. For the
    /// built-in (linear) functional dphi0 = phi0 and the rate kernel is g.
    pub fn xc_derivative_apply(&self, pair: &FieldPath) -> Result<FieldPath> {
        let _ = self.xc_block()?;
        let pp = self.path_interaction_from_increment(pair)?;
        let fields = (0..pair.len())
            .map(|k| {
                let mut out = Array1::zeros(self.grid.n_points());
                pp.add_history_at_knot(k, &mut out);
                out
            })
            .collect();
        FieldPath::new(self.grid, pair.t0(), pair.dt(), fields)
    }

    /// Full effective potential V + (W * rho) + Phi at a knot time of the path.
    pub fn effective(&self, t: f64, rho: &FieldPath) -> Result<Array1<f64>> {
        let k = rho.knot_at(t)?;
        let mut v = self.external_field(t);
        let pp = self.path_interaction_from_density(rho)?;
        pp.add_at_knot(k, &mut v);
        Ok(v)
    }

    /// Interaction (Hartree + xc) part of the potential along a density path,
    /// with convolutions and history prefix sums precomputed. Shared by the
    /// propagator, the energy functional, and the derivative machinery.
    pub(crate) fn path_interaction_from_density(&self, rho: &FieldPath) -> Result<PathInteraction> {
        if rho.grid() != &self.grid {
            return Err(Error::Grid("path grid does not match potential grid".into()));
        }
        let conv = match &self.hartree {
            None => None,
            Some(b) => Some(rho.fields().iter().map(|f| b.kernel.apply(f)).collect()),
        };
        let (rate, base0) = if self.xc.is_some() {
            let rates = self.xc_rates(rho)?;
            // phi0 is the rate kernel applied to the path's initial density;
            // any pre-window history arrives through phi_carry.
            let mut base = self.xc_block()?.kernel.apply(rho.field(0));
            if let Some(carry) = &self.phi_carry {
                base += carry;
            }
            (Some(rates), Some(base))
        } else {
            (None, None)
        };
        Ok(PathInteraction::assemble(self.grid, rho.dt(), conv, rate, base0))
    }

    /// Same assembly, but for a density-*increment* path: used to evaluate
    /// the derivative of the effective potential along a perturbation.
    /// No phi_carry enters (the carry is a constant under perturbation).
    pub(crate) fn path_interaction_from_increment(&self, p: &FieldPath) -> Result<PathInteraction> {
        if p.grid() != &self.grid {
            return Err(Error::Grid("path grid does not match potential grid".into()));
        }
        let conv = match &self.hartree {
            None => None,
            Some(b) => Some(p.fields().iter().map(|f| b.kernel.apply(f)).collect()),
        };
        let (rate, base0) = if let Some(b) = &self.xc {
            let rates: Vec<Array1<f64>> = p.fields().iter().map(|f| b.kernel.apply(f)).collect();
            let base = b.kernel.apply(p.field(0));
            (Some(rates), Some(base))
        } else {
            (None, None)
        };
        Ok(PathInteraction::assemble(self.grid, p.dt(), conv, rate, base0))
    }

    /// Energy functionals of a state at knot time t of the density path.
    pub fn energy(&self, state: &OrbitalSet, t: f64, rho: &FieldPath) -> Result<EnergyBreakdown> {
        if state.grid() != &self.grid {
            return Err(Error::Grid("state grid does not match potential grid".into()));
        }
        let k = rho.knot_at(t)?;
        let hb = self.model.hbar;
        let m = self.model.mass;
        let w = self.grid.cell_volume();
        let rho_state = state.density();

        let kinetic_form = state.gradient_energy(); // integral of |grad Psi|^2
        let v_ext = self.external_field(t);

        let hartree_field = match &self.hartree {
            Some(b) => Some(b.kernel.apply(rho_state.values())),
            None => None,
        };
        let hartree_pair = match &hartree_field {
            Some(f) => f
                .iter()
                .zip(rho_state.values())
                .map(|(a, b)| a * b)
                .sum::<f64>()
                * w,
            None => 0.0,
        };

        let mut phi = Array1::zeros(self.grid.n_points());
        if self.xc.is_some() {
            let pp = self.path_interaction_from_density(rho)?;
            pp.add_history_at_knot(k, &mut phi);
        }

        let v_plus_phi_pair: f64 = v_ext
            .iter()
            .zip(phi.iter())
            .zip(rho_state.values())
            .map(|((v, p), r)| (v + p) * r)
            .sum::<f64>()
            * w;

        let script = hb * hb / (4.0 * m) * kinetic_form + 0.25 * hartree_pair + 0.5 * v_plus_phi_pair;
        let physical = hb * hb / (2.0 * m) * kinetic_form + hartree_pair + v_plus_phi_pair;
        Ok(EnergyBreakdown {
            script,
            physical,
            hartree_pair,
        })
    }

    /// Multiplier bound of the built-in xc functional per unit L1 mass of the
    /// density argument: a field v accumulated over the horizon obeys
    /// ||v psi||_{H10} <= (sup|v| + e2 sup|grad v|) ||psi||_{H10}, where e2
    /// is the grid's H10 -> L2 embedding constant. Both the base term and the
    /// time integral of rates act through the same kernel, hence (1 + T).
    pub fn xc_multiplier_bound(&self, e2: f64) -> Option<f64> {
        // The kernel (and so its norms) already carries the coupling.
        self.xc
            .as_ref()
            .map(|b| (1.0 + self.horizon) * (b.norms.sup + e2 * b.norms.grad_sup))
    }

    /// Uniform bound on ||grad Phi||_{L3} along the evolution; the L2 charge
    /// of the initial state is conserved, so ||rho||_{L1} = l2_psi0_sq.
    pub fn xc_grad_l3_increment(&self, l2_psi0_sq: f64) -> Option<f64> {
        self.xc
            .as_ref()
            .map(|b| (1.0 + self.horizon) * b.norms.grad_l3 * l2_psi0_sq)
    }

    pub fn xc_width(&self) -> Option<f64> {
        self.xc.as_ref().map(|b| b.width)
    }

    /// Rate field phi(x, t, rho) = c (g * rho) for a single density snapshot.
    pub fn xc_rate_of(&self, rho: &Array1<f64>) -> Result<Array1<f64>> {
        Ok(self.xc_block()?.kernel.apply(rho))
    }

    /// Interaction part (W * rho)(t_k) + Phi(t_k, rho) of the potential at
    /// every knot of a density path; the external part is excluded, so the
    /// difference of two of these is the difference of effective potentials.
    pub fn interaction_fields(&self, rho: &FieldPath) -> Result<FieldPath> {
        let pp = self.path_interaction_from_density(rho)?;
        let fields = (0..rho.len())
            .map(|k| {
                let mut out = Array1::zeros(self.grid.n_points());
                pp.add_at_knot(k, &mut out);
                out
            })
            .collect();
        FieldPath::new(self.grid, rho.t0(), rho.dt(), fields)
    }
}

/// Energy functionals evaluated together: the conserved-form functional, the
/// bracket of the Hamiltonian with the state, and the interaction pairing
/// that relates them (script = (physical - hartree_pair / 2) / 2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown {
    pub script: f64,
    pub physical: f64,
    pub hartree_pair: f64,
}

/// Precomputed interaction data along one path: per-knot convolutions,
/// per-knot xc rates with their trapezoid prefix sums, and the t-independent
/// base field (phi0 + carry for densities, dphi0 for increments).
#[derive(Debug, Clone)]
pub(crate) struct PathInteraction {
    conv: Option<Vec<Array1<f64>>>,
    rate: Option<Vec<Array1<f64>>>,
    /// prefix[k] = trapezoid integral of the rate over knots 0..k.
    prefix: Option<Vec<Array1<f64>>>,
    base0: Option<Array1<f64>>,
    dt: f64,
}

impl PathInteraction {
    fn assemble(
        grid: Grid,
        dt: f64,
        conv: Option<Vec<Array1<f64>>>,
        rate: Option<Vec<Array1<f64>>>,
        base0: Option<Array1<f64>>,
    ) -> Self {
        let prefix = rate.as_ref().map(|rates| {
            let mut acc = Array1::<f64>::zeros(grid.n_points());
            let mut out = Vec::with_capacity(rates.len());
            out.push(acc.clone());
            for k in 1..rates.len() {
                acc = acc + (&rates[k - 1] + &rates[k]) * (0.5 * dt);
                out.push(acc.clone());
            }
            out
        });
        PathInteraction {
            conv,
            rate,
            prefix,
            base0,
            dt,
        }
    }

    /// Add the xc history potential at knot k into `out`.
    pub(crate) fn add_history_at_knot(&self, k: usize, out: &mut Array1<f64>) {
        if let Some(base) = &self.base0 {
            *out += base;
        }
        if let Some(prefix) = &self.prefix {
            *out += &prefix[k];
        }
    }

    /// Add the full interaction (convolution + history) at knot k into `out`.
    pub(crate) fn add_at_knot(&self, k: usize, out: &mut Array1<f64>) {
        if let Some(conv) = &self.conv {
            *out += &conv[k];
        }
        self.add_history_at_knot(k, out);
    }

    /// Add the full interaction at the midpoint of step j (knots j, j+1).
    /// The convolution enters through the averaged knot values (which equals
    /// the convolution of the averaged density, by linearity); the history
    /// integral gets its half-step tail from the same averaged rate, keeping
    /// the rule exactly linear in the path.
    pub(crate) fn add_at_midpoint(&self, j: usize, out: &mut Array1<f64>) {
        if let Some(conv) = &self.conv {
            out.zip_mut_with(&conv[j], |o, c| *o += 0.5 * c);
            out.zip_mut_with(&conv[j + 1], |o, c| *o += 0.5 * c);
        }
        if let Some(base) = &self.base0 {
            *out += base;
        }
        if let (Some(prefix), Some(rate)) = (&self.prefix, &self.rate) {
            *out += &prefix[j];
            // tail over [t_j, t_j + dt/2] by trapezoid with the midpoint rate
            // interpolated as the knot average: (dt/8)(3 r_j + r_{j+1}).
            out.zip_mut_with(&rate[j], |o, r| *o += 3.0 * self.dt / 8.0 * r);
            out.zip_mut_with(&rate[j + 1], |o, r| *o += self.dt / 8.0 * r);
        }
    }
}
