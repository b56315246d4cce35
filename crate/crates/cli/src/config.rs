//! Declarative run configuration. A TOML file with a fixed schema is parsed,
//! cross-checked, and lowered into the solver objects. Parse and type errors
//! surface with the offending line; semantic violations name the section and
//! key they anchor to.

use clap::ValueEnum;
use num_complex::Complex64;
use serde::Deserialize;
use std::path::Path;

use tdks_core::sampling::{random_state, rng};
use tdks_core::{
    ConstantsMode, ExternalPotential, Grid, HartreeSpec, NewtonOptions, NormKind, OrbitalSet,
    Potential, PotentialModel, WindowSpec, XcSpec,
};

/// Which nonlinear solvers a run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SolverChoice {
    Picard,
    Newton,
    ApproxNewton,
    All,
}

impl SolverChoice {
    pub fn wants_picard(self) -> bool {
        matches!(self, SolverChoice::Picard | SolverChoice::All)
    }

    pub fn wants_newton(self) -> bool {
        matches!(self, SolverChoice::Newton | SolverChoice::All)
    }

    pub fn wants_approx_newton(self) -> bool {
        matches!(self, SolverChoice::ApproxNewton | SolverChoice::All)
    }

    pub fn label(self) -> &'static str {
        match self {
            SolverChoice::Picard => "picard",
            SolverChoice::Newton => "newton",
            SolverChoice::ApproxNewton => "approx_newton",
            SolverChoice::All => "all",
        }
    }
}

/// How the certified constants are assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ModeChoice {
    Analytic,
    Empirical,
}

impl ModeChoice {
    pub fn to_core(self) -> ConstantsMode {
        match self {
            ModeChoice::Analytic => ConstantsMode::Analytic,
            ModeChoice::Empirical => ConstantsMode::Empirical,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub points_per_axis: usize,
    pub axis_length: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSection {
    #[serde(default = "one")]
    pub hbar: f64,
    #[serde(default = "one")]
    pub mass: f64,
}

impl Default for PhysicsSection {
    fn default() -> Self {
        PhysicsSection { hbar: 1.0, mass: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateProfile {
    /// Low sine modes with a gentle phase; energy-norm size stays bounded
    /// under mesh refinement.
    Smooth,
    /// Seeded rough noise, normalized to unit charge.
    Random,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStateSection {
    pub orbitals: usize,
    pub profile: StateProfile,
}

/// External confinement families. Internally tagged so an unknown family
/// name is rejected by the parser with its line.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PotentialSection {
    Zero,
    Harmonic {
        strength: f64,
    },
    DrivenHarmonic {
        strength: f64,
        amplitude: f64,
        frequency: f64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HartreeSection {
    pub coupling: f64,
    #[serde(default)]
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XcSection {
    pub coupling: f64,
    pub width: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    /// Model horizon; the run covers [0, horizon].
    pub horizon: f64,
    /// Knot spacing; must divide the horizon.
    pub dt: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub which: SolverChoice,
    pub mode: ModeChoice,
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    pub newton_max_iters: usize,
    pub lin_tol: f64,
    pub lin_max_sweeps: usize,
    pub samples: usize,
    pub truncation_cap: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            which: SolverChoice::All,
            mode: ModeChoice::Empirical,
            picard_tol: 1e-10,
            picard_max_iters: 200,
            newton_max_iters: 25,
            lin_tol: 1e-12,
            lin_max_sweeps: 600,
            samples: 20,
            truncation_cap: 64,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub output_dir: String,
    pub plots: bool,
    pub audit_trials: usize,
    /// Absolute tolerance on the time-integrated power balance residual.
    pub identity_tol: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0x5EED,
            output_dir: "tdks-out".into(),
            plots: true,
            audit_trials: 120,
            identity_tol: 1e-8,
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    #[serde(default)]
    pub physics: PhysicsSection,
    pub initial_state: InitialStateSection,
    pub potential: PotentialSection,
    #[serde(default)]
    pub hartree: Option<HartreeSection>,
    #[serde(default)]
    pub xc: Option<XcSection>,
    pub time: TimeSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub run: RunSection,
}

impl RunConfig {
    /// Parse and cross-check a config file. Parse errors carry the line and
    /// column from the TOML reader; semantic errors list every violated
    /// invariant with its section anchor.
    pub fn load(path: &Path) -> Result<RunConfig, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| format!("invalid config {}: {e}", path.display()))?;
        let problems = cfg.validate();
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(format!(
                "invalid config {}:\n  {}",
                path.display(),
                problems.join("\n  ")
            ))
        }
    }

    fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                bad.push(msg);
            }
        };

        check(
            self.grid.dim == 1 || self.grid.dim == 3,
            format!("[grid].dim = {} must be 1 or 3", self.grid.dim),
        );
        check(
            self.grid.points_per_axis >= 2,
            format!(
                "[grid].points_per_axis = {} must be at least 2",
                self.grid.points_per_axis
            ),
        );
        check(
            self.grid.axis_length > 0.0 && self.grid.axis_length.is_finite(),
            format!(
                "[grid].axis_length = {} must be a positive finite number",
                self.grid.axis_length
            ),
        );
        check(
            self.physics.hbar > 0.0,
            format!("[physics].hbar = {} must be positive", self.physics.hbar),
        );
        check(
            self.physics.mass > 0.0,
            format!("[physics].mass = {} must be positive", self.physics.mass),
        );
        check(
            self.initial_state.orbitals >= 1,
            format!(
                "[initial_state].orbitals = {} must be at least 1",
                self.initial_state.orbitals
            ),
        );

        match &self.potential {
            PotentialSection::Zero => {}
            PotentialSection::Harmonic { strength } => check(
                *strength >= 0.0 && strength.is_finite(),
                format!("[potential].strength = {strength} must be a finite nonnegative number"),
            ),
            PotentialSection::DrivenHarmonic {
                strength,
                amplitude,
                ..
            } => {
                check(
                    *strength >= 0.0 && strength.is_finite(),
                    format!(
                        "[potential].strength = {strength} must be a finite nonnegative number"
                    ),
                );
                check(
                    amplitude.abs() <= 1.0,
                    format!(
                        "[potential].amplitude = {amplitude} must lie in [-1, 1] to keep the confinement nonnegative"
                    ),
                );
            }
        }

        if let Some(h) = &self.hartree {
            check(
                h.coupling >= 0.0 && h.coupling.is_finite(),
                format!(
                    "[hartree].coupling = {} must be a finite nonnegative number",
                    h.coupling
                ),
            );
            if let Some(r) = h.radius {
                check(
                    r > 0.0 && r.is_finite(),
                    format!("[hartree].radius = {r} must be positive when given"),
                );
            }
        }
        if let Some(x) = &self.xc {
            check(
                x.coupling >= 0.0 && x.coupling.is_finite(),
                format!(
                    "[xc].coupling = {} must be a finite nonnegative number",
                    x.coupling
                ),
            );
            check(
                x.width > 0.0 && x.width.is_finite(),
                format!("[xc].width = {} must be positive", x.width),
            );
        }

        check(
            self.time.horizon > 0.0 && self.time.horizon.is_finite(),
            format!("[time].horizon = {} must be positive", self.time.horizon),
        );
        check(
            self.time.dt > 0.0 && self.time.dt.is_finite(),
            format!("[time].dt = {} must be positive", self.time.dt),
        );
        if self.time.dt > 0.0 && self.time.horizon > 0.0 {
            check(
                self.time.dt < self.time.horizon,
                format!(
                    "[time].dt = {} must be strictly smaller than [time].horizon = {}",
                    self.time.dt, self.time.horizon
                ),
            );
            let steps = (self.time.horizon / self.time.dt).round();
            check(
                steps >= 1.0
                    && (steps * self.time.dt - self.time.horizon).abs()
                        <= 1e-9 * self.time.horizon,
                format!(
                    "[time].dt = {} must divide [time].horizon = {} into whole steps",
                    self.time.dt, self.time.horizon
                ),
            );
        }

        for (name, v) in [
            ("picard_tol", self.solver.picard_tol),
            ("lin_tol", self.solver.lin_tol),
        ] {
            check(
                v > 0.0 && v.is_finite(),
                format!("[solver].{name} = {v} must be positive"),
            );
        }
        for (name, v) in [
            ("picard_max_iters", self.solver.picard_max_iters),
            ("newton_max_iters", self.solver.newton_max_iters),
            ("lin_max_sweeps", self.solver.lin_max_sweeps),
            ("samples", self.solver.samples),
            ("truncation_cap", self.solver.truncation_cap),
        ] {
            check(v >= 1, format!("[solver].{name} = {v} must be at least 1"));
        }
        check(
            self.run.audit_trials >= 1,
            format!(
                "[run].audit_trials = {} must be at least 1",
                self.run.audit_trials
            ),
        );
        check(
            self.run.identity_tol > 0.0 && self.run.identity_tol.is_finite(),
            format!(
                "[run].identity_tol = {} must be positive",
                self.run.identity_tol
            ),
        );

        bad
    }

    pub fn has_interactions(&self) -> bool {
        self.hartree.is_some() || self.xc.is_some()
    }

    /// Number of propagation steps in the window (knots minus one).
    pub fn steps(&self) -> usize {
        (self.time.horizon / self.time.dt).round() as usize
    }
}

/// Everything the solver verbs consume, lowered from a validated config.
pub struct Lowered {
    pub grid: Grid,
    pub psi0: OrbitalSet,
    pub potential: Potential,
    pub window: WindowSpec,
    pub opts: NewtonOptions,
    pub mode: ConstantsMode,
}

pub fn lower(cfg: &RunConfig) -> Result<Lowered, String> {
    let grid = match cfg.grid.dim {
        1 => Grid::new_1d(cfg.grid.points_per_axis, cfg.grid.axis_length),
        3 => Grid::new_3d(cfg.grid.points_per_axis, cfg.grid.axis_length),
        d => return Err(format!("[grid].dim = {d} must be 1 or 3")),
    }
    .map_err(|e| e.to_string())?;

    let external = match &cfg.potential {
        PotentialSection::Zero => ExternalPotential::Zero,
        PotentialSection::Harmonic { strength } => ExternalPotential::Harmonic {
            strength: *strength,
        },
        PotentialSection::DrivenHarmonic {
            strength,
            amplitude,
            frequency,
        } => ExternalPotential::DrivenHarmonic {
            strength: *strength,
            amplitude: *amplitude,
            frequency: *frequency,
        },
    };
    let model = PotentialModel {
        external,
        hartree: cfg.hartree.as_ref().map(|h| HartreeSpec {
            coupling: h.coupling,
            radius: h.radius,
        }),
        xc: cfg.xc.as_ref().map(|x| XcSpec {
            coupling: x.coupling,
            width: x.width,
        }),
        hbar: cfg.physics.hbar,
        mass: cfg.physics.mass,
    };
    let potential = Potential::bind(model, grid, cfg.time.horizon).map_err(|e| e.to_string())?;

    let window =
        WindowSpec::new(0.0, cfg.time.dt, cfg.steps() + 1).map_err(|e| e.to_string())?;

    let psi0 = match cfg.initial_state.profile {
        StateProfile::Smooth => smooth_state(&grid, cfg.initial_state.orbitals),
        StateProfile::Random => {
            let st = random_state(
                &grid,
                cfg.initial_state.orbitals,
                &mut rng(cfg.run.seed),
                None,
            );
            let l2 = st.norm(NormKind::L2);
            st.scaled(Complex64::new(1.0 / l2, 0.0))
        }
    };

    let opts = NewtonOptions {
        max_iters: cfg.solver.newton_max_iters,
        lin_tol: cfg.solver.lin_tol,
        lin_max_sweeps: cfg.solver.lin_max_sweeps,
        samples: cfg.solver.samples,
        ..NewtonOptions::default()
    };

    Ok(Lowered {
        grid,
        psi0,
        potential,
        window,
        opts,
        mode: cfg.solver.mode.to_core(),
    })
}

/// Deterministic low-mode initial state: orbital j carries the (j+1)-th sine
/// mode per axis with a gentle position-dependent phase, normalized to unit
/// total charge. Its energy norm is mesh-independent, so certification
/// windows keep realistic lengths under refinement.
pub fn smooth_state(grid: &Grid, n_orbitals: usize) -> OrbitalSet {
    let length = grid.spacing() * (grid.points_per_axis() + 1) as f64;
    let mut st = OrbitalSet::zeros(*grid, n_orbitals);
    for j in 0..n_orbitals {
        for i in 0..grid.n_points() {
            let xyz = grid.coords(i);
            let mut mode = 1.0;
            for axis in 0..grid.dim() {
                mode *= ((j + 1) as f64 * std::f64::consts::PI * xyz[axis] / length).sin();
            }
            let phase = 0.3 * (j + 1) as f64 * (std::f64::consts::PI * xyz[0] / length).sin();
            st.values_mut()[[j, i]] = Complex64::from_polar(mode, phase);
        }
    }
    let l2 = st.norm(NormKind::L2);
    st.scaled(Complex64::new(1.0 / l2, 0.0))
}
