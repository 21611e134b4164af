use serde::{Deserialize, Serialize};

use crate::measure::GridMeasure;
use crate::transport::{DualPotentials, TransportMethod, TransportPlan};

use super::SolverError;
use super::stationarity::OptimalityReport;

/// Step-size rule along the segment to the candidate measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineSearch {
    /// Golden-section search on `[0, 1]` plus an explicit check of `t = 1`.
    GoldenSection,
    /// `t_k = 2 / (k + 2)`, halved until the objective does not increase.
    FixedSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_outer_iter: usize,
    pub fw_tol: f64,
    /// Scale `fw_tol` by the magnitude of the current objective.
    pub fw_tol_relative: bool,
    pub line_search: LineSearch,
    pub line_search_probes: usize,
    pub transport: TransportMethod,
    pub barrier_delta: Option<f64>,
    pub prox_weight: Option<f64>,
    pub seed: u64,
    /// Support cutoff relative to the largest weight.
    pub support_threshold: f64,
    /// Sweep budget of the plan-space inner loop per outer iteration.
    pub inner_max_sweeps: usize,
    /// Inner loop stops once its gap bound is below this fraction of the
    /// outer threshold.
    pub inner_tol_ratio: f64,
    /// Outer iterations granted to each block solve inside the joint loop.
    pub block_max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_outer_iter: 500,
            fw_tol: 1e-5,
            fw_tol_relative: true,
            line_search: LineSearch::GoldenSection,
            line_search_probes: 20,
            transport: TransportMethod::Exact,
            barrier_delta: None,
            prox_weight: None,
            seed: 0,
            support_threshold: 1e-6,
            inner_max_sweeps: 2000,
            inner_tol_ratio: 1e-3,
            block_max_iter: 50,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |msg: String| Err(SolverError::InvalidConfig(msg));
        if !(self.fw_tol > 0.0 && self.fw_tol.is_finite()) {
            return bad(format!("fw_tol must be positive, got {}", self.fw_tol));
        }
        if self.max_outer_iter == 0 || self.block_max_iter == 0 {
            return bad("iteration limits must be at least 1".into());
        }
        if self.line_search_probes == 0 {
            return bad("line_search_probes must be at least 1".into());
        }
        if !(self.support_threshold >= 0.0 && self.support_threshold < 1.0) {
            return bad(format!("support_threshold must lie in [0, 1), got {}", self.support_threshold));
        }
        if !(self.inner_tol_ratio > 0.0 && self.inner_tol_ratio <= 1.0) {
            return bad(format!("inner_tol_ratio must lie in (0, 1], got {}", self.inner_tol_ratio));
        }
        for (name, v) in [("barrier_delta", self.barrier_delta), ("prox_weight", self.prox_weight)] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return bad(format!("{name} must be nonnegative, got {v}"));
                }
            }
        }
        if let TransportMethod::Entropic { epsilon, max_iter, tol } = self.transport {
            if !(epsilon > 0.0) || max_iter == 0 || !(tol > 0.0) {
                return bad("entropic transport needs epsilon > 0, max_iter >= 1 and tol > 0".into());
            }
        }
        Ok(())
    }

    /// Absolute stationarity threshold at objective value `objective`.
    pub fn threshold(&self, objective: f64) -> f64 {
        if self.fw_tol_relative {
            self.fw_tol * objective.abs().max(1e-12)
        } else {
            self.fw_tol
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    IterationLimit,
    /// The line search returned a vanishing step three times in a row while
    /// the gap was still above threshold.
    Stalled,
}

/// Observed maximal density against `2^d M (1 + C2)^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinfBoundCheck {
    pub observed: f64,
    pub bound: f64,
    pub passed: bool,
}

impl LinfBoundCheck {
    pub fn new(observed: f64, fixed_max_density: f64, c2: f64, dim: usize) -> Self {
        let d = dim as i32;
        let bound = 2f64.powi(d) * fixed_max_density * (1.0 + c2).powi(d);
        Self {
            observed,
            bound,
            passed: observed <= bound,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierDiagnostics {
    pub delta: f64,
    pub prox_weight: f64,
    /// `W2(nu, reference)` at the final iterate.
    pub w2_to_reference: f64,
    /// `delta * A(nu)` at the final iterate.
    pub weighted_barrier: f64,
    pub min_density: f64,
}

/// Least-squares fit of `T(x) - bar(nu) = ratio * (x - bar(mu))` for the
/// barycentric map `T` of the optimal plan from `mu` to `nu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomothetyFit {
    pub ratio: f64,
    /// Root mean square misfit weighted by `mu`.
    pub residual: f64,
    /// Ratio of standard deviations, a map-free cross-check.
    pub spread_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct SolverReport {
    pub objective_trace: Vec<f64>,
    pub gap_trace: Vec<f64>,
    pub max_density_trace: Vec<f64>,
    pub barycenter_trace: Vec<Vec<f64>>,
    pub final_nu: GridMeasure,
    pub final_mu: Option<GridMeasure>,
    pub optimality: OptimalityReport,
    pub mu_optimality: Option<OptimalityReport>,
    pub linf_bound_check: Option<LinfBoundCheck>,
    pub termination: Termination,
    pub iterations: usize,
    pub barrier: Option<BarrierDiagnostics>,
    pub barycenter_distance: Option<f64>,
    pub homothety: Option<HomothetyFit>,
    /// Potentials of the final transport solve, source side on the measure
    /// the report certifies.
    pub potentials: DualPotentials,
    pub plan: Option<TransportPlan>,
}

impl SolverReport {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }

    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}
