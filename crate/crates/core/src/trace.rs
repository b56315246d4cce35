//! Per-iteration records emitted by the nonlinear solvers. One trace holds
//! everything a convergence audit needs: residual history, step sizes, and
//! (for the truncated-inverse solver) the expansion orders and measured
//! truncation defects.

/// Convention: `residual_norms[k]` is the residual at iterate k (so entry 0
/// is the residual of the starting guess), `step_norms[k]` is the update
/// size that produced iterate k (`step_norms[0] == 0`).
#[derive(Debug, Clone, Default)]
pub struct IterationTrace {
    pub solver: &'static str,
    pub residual_norms: Vec<f64>,
    pub step_norms: Vec<f64>,
    /// Expansion order chosen at each iteration (truncated-inverse solver only).
    pub neumann_orders: Vec<usize>,
    /// Measured truncation defect at each iteration (same solver).
    pub neumann_defects: Vec<f64>,
    /// Wall-clock seconds spent producing each recorded iterate. Excluded
    /// from deterministic exports; kept for profiling honesty.
    pub wall_times: Vec<f64>,
    /// Set when an adaptive truncation order was clipped at its cap, so the
    /// recorded order is smaller than the residual rule asked for.
    pub truncation_capped: bool,
    /// Stationary accuracy floor: residuals at or below this level are
    /// dominated by inner-solver noise and excluded from order fits.
    pub residual_floor: f64,
    pub converged: bool,
    /// Certified contraction factor of the window, when one was available.
    pub q_bound: Option<f64>,
    /// Iteration count predicted from the geometric a-priori estimate with
    /// q = `q_bound`, recorded after the first residual is known.
    pub predicted_iterations: Option<usize>,
}

impl IterationTrace {
    pub fn new(solver: &'static str, residual_floor: f64) -> Self {
        IterationTrace {
            solver,
            residual_floor,
            ..Default::default()
        }
    }

    pub fn push(&mut self, residual: f64, step: f64) {
        self.residual_norms.push(residual);
        self.step_norms.push(step);
    }

    /// Number of completed update steps.
    pub fn iterations(&self) -> usize {
        self.residual_norms.len().saturating_sub(1)
    }

    pub fn final_residual(&self) -> Option<f64> {
        self.residual_norms.last().copied()
    }

    /// Residuals strictly above the stationary floor, in order. Order-of-
    /// convergence fits must only consume these.
    pub fn residuals_above_floor(&self) -> Vec<f64> {
        self.residual_norms
            .iter()
            .copied()
            .take_while(|r| *r > self.residual_floor)
            .collect()
    }

    /// Successive residual ratios r_{k+1} / r_k (skipping zero denominators).
    pub fn contraction_ratios(&self) -> Vec<f64> {
        self.residual_norms
            .windows(2)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_filtering_and_ratios() {
        let mut tr = IterationTrace::new("test", 1e-10);
        for r in [1.0, 0.1, 0.01, 1e-11, 1e-12] {
            tr.push(r, 0.0);
        }
        assert_eq!(tr.residuals_above_floor(), vec![1.0, 0.1, 0.01]);
        assert_eq!(tr.iterations(), 4);
        let ratios = tr.contraction_ratios();
        assert!((ratios[0] - 0.1).abs() < 1e-12);
        assert!((ratios[1] - 0.1).abs() < 1e-12);
    }
}
