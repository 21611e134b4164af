use serde::{Deserialize, Serialize};

use crate::functionals::{interaction_potential, InteractionKernel};
use crate::measure::GridMeasure;
use crate::transport::{c_transform, solve_exact, CostMatrix, Direction, DualPotentials, TransportPlan};

use super::SolverError;

/// Which Kantorovich potential entered the residuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialSource {
    /// c-transform pair built from the first variation.
    Certified,
    /// Returned by the transport solver.
    Solver,
}

/// First-order residuals of `psi + g >= m` with equality on the support, `g`
/// the first variation of the non-transport terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    /// Mean of `psi + g` over the support, weighted by the measure.
    pub m_constant: f64,
    /// `max |psi + g - m|` over support nodes.
    pub support_violation: f64,
    /// `max(0, m - min (psi + g))` over all nodes.
    pub global_violation: f64,
    pub support_threshold: f64,
    /// `sum (psi + g) w - min (psi + g)`.
    pub gap: f64,
    /// `sum (psi + g) w - m`; `gap = global_violation + support_mismatch`.
    pub support_mismatch: f64,
    pub potential_source: PotentialSource,
    /// Primal minus dual value of the potential pair used, clamped at zero.
    pub dual_residual: f64,
    /// Smallest `gap + dual residual` over the candidate potentials; the
    /// quantity compared against the tolerance.
    pub certificate: f64,
    #[serde(skip)]
    pub potential: Vec<f64>,
}

impl OptimalityReport {
    pub fn residual_sum(&self) -> f64 {
        self.support_violation + self.global_violation
    }
}

fn linear_gap(free: &GridMeasure, psi: &[f64], first_variation: &[f64]) -> f64 {
    let score = psi.iter().zip(first_variation).map(|(p, g)| p + g);
    let mean: f64 = score.clone().zip(free.weights()).map(|(s, w)| s * w).sum();
    mean - score.fold(f64::INFINITY, f64::min)
}

/// Kantorovich potential on the free side of a plan, and the stopping
/// certificate.
///
/// The c-transform pair built from the first variation is exact at a
/// stationary point even where the transport duals are not unique, so it is
/// preferred whenever it is dual optimal; otherwise the solver's potential
/// is used. Any dual-feasible potential bounds the first-order decrease
/// available from the iterate by `gap + (primal - dual)`; the certificate is
/// the smaller of that bound over both candidates.
pub(crate) fn select_potential(
    free: &GridMeasure,
    fixed: &GridMeasure,
    cost: &CostMatrix,
    plan: &TransportPlan,
    duals: &DualPotentials,
    first_variation: &[f64],
) -> SelectedPotential {
    let support: Vec<usize> = (0..fixed.len()).filter(|&j| fixed.weights()[j] > 0.0).collect();
    let mut column_min = vec![0.0; fixed.len()];
    for &j in &support {
        column_min[j] = (0..free.len())
            .map(|i| cost.get(i, j) + first_variation[i])
            .fold(f64::INFINITY, f64::min);
    }
    let psi_cert: Vec<f64> = (0..free.len())
        .map(|i| {
            support
                .iter()
                .map(|&j| cost.get(i, j) - column_min[j])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let psi_c = c_transform(&psi_cert, cost, Direction::SourceToTarget);
    let primal = plan.cost_value();
    let dual_of = |psi: &[f64], psi_c: &[f64]| {
        let a: f64 = psi.iter().zip(free.weights()).map(|(p, w)| p * w).sum();
        let b: f64 = psi_c.iter().zip(fixed.weights()).map(|(p, w)| p * w).sum();
        a + b
    };
    let cert_residual = (primal - dual_of(&psi_cert, &psi_c)).max(0.0);
    let solver_residual = (primal - dual_of(&duals.psi, &duals.psi_c)).max(0.0);
    let certificate = (linear_gap(free, &psi_cert, first_variation) + cert_residual)
        .min(linear_gap(free, &duals.psi, first_variation) + solver_residual);
    if cert_residual <= 1e-9 * (1.0 + primal.abs()) {
        SelectedPotential {
            psi: psi_cert,
            source: PotentialSource::Certified,
            dual_residual: cert_residual,
            certificate,
        }
    } else {
        SelectedPotential {
            psi: duals.psi.clone(),
            source: PotentialSource::Solver,
            dual_residual: solver_residual,
            certificate,
        }
    }
}

pub(crate) struct SelectedPotential {
    pub psi: Vec<f64>,
    pub source: PotentialSource,
    pub dual_residual: f64,
    pub certificate: f64,
}

/// Residual statistics of `psi + g` against the measure `free`.
pub(crate) fn residuals(
    free: &GridMeasure,
    selected: SelectedPotential,
    first_variation: &[f64],
    support_threshold: f64,
) -> OptimalityReport {
    let w = free.weights();
    let psi = selected.psi;
    let score: Vec<f64> = psi.iter().zip(first_variation).map(|(p, g)| p + g).collect();
    let support = free.support(support_threshold);
    let support_mass: f64 = support.iter().map(|&i| w[i]).sum();
    let m = support.iter().map(|&i| w[i] * score[i]).sum::<f64>() / support_mass;
    let support_violation = support.iter().map(|&i| (score[i] - m).abs()).fold(0.0, f64::max);
    let min = score.iter().copied().fold(f64::INFINITY, f64::min);
    let mean: f64 = score.iter().zip(w).map(|(s, w)| s * w).sum();
    OptimalityReport {
        m_constant: m,
        support_violation,
        global_violation: (m - min).max(0.0),
        support_threshold,
        gap: mean - min,
        support_mismatch: mean - m,
        potential_source: selected.source,
        dual_residual: selected.dual_residual,
        certificate: selected.certificate,
        potential: psi,
    }
}

/// Fresh exact transport from `free` to `fixed`, then residuals of the
/// stationarity condition for first variation `first_variation`.
pub fn stationarity_report(
    free: &GridMeasure,
    fixed: &GridMeasure,
    first_variation: &[f64],
    support_threshold: f64,
) -> Result<(OptimalityReport, TransportPlan, DualPotentials), SolverError> {
    let cost = CostMatrix::half_squared(free.spec(), fixed.spec())?;
    let (plan, duals) = solve_exact(free, fixed, &cost)?;
    let selected = select_potential(free, fixed, &cost, &plan, &duals, first_variation);
    let report = residuals(free, selected, first_variation, support_threshold);
    Ok((report, plan, duals))
}

/// Residuals of `psi + T_nu >= m`, equality on the support of `nu`, with
/// `psi` from the transport of `nu` to `mu`.
pub fn optimality_report(
    nu: &GridMeasure,
    mu: &GridMeasure,
    kernel: &InteractionKernel,
    support_threshold: f64,
) -> Result<OptimalityReport, SolverError> {
    let t = interaction_potential(nu, kernel);
    Ok(stationarity_report(nu, mu, &t, support_threshold)?.0)
}

/// Conditional-gradient vertex and gap: the atom at the lowest-index
/// minimizer of `psi + t`, and `sum (psi + t) nu - min (psi + t)`.
pub fn fw_direction(nu: &GridMeasure, psi: &[f64], t: &[f64]) -> (GridMeasure, f64) {
    let score: Vec<f64> = psi.iter().zip(t).map(|(p, t)| p + t).collect();
    let mut best = 0;
    for (i, &s) in score.iter().enumerate() {
        if s < score[best] {
            best = i;
        }
    }
    let mean: f64 = score.iter().zip(nu.weights()).map(|(s, w)| s * w).sum();
    let vertex = GridMeasure::point_mass(nu.spec(), best).expect("index from the same grid");
    (vertex, (mean - score[best]).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::GridSpec;

    #[test]
    fn constant_score_gives_zero_gap_at_first_node() {
        let g = GridSpec::interval(0.0, 1.0, 5).unwrap();
        let nu = GridMeasure::build_from_density(&g, |x| 1.0 + x[0]).unwrap();
        let (vertex, gap) = fw_direction(&nu, &[1.0; 5], &[0.5; 5]);
        assert_eq!(gap, 0.0);
        assert_eq!(vertex.weights()[0], 1.0);
    }

    #[test]
    fn direction_points_at_the_target_atom() {
        // Uniform nu on 5 nodes, mu an atom at node k and no interaction:
        // the potential is brute-forced from the dual of the transport.
        let g = GridSpec::from_nodes_1d(0.0, 1.0, 5).unwrap();
        let nu = GridMeasure::uniform(&g);
        for k in 0..5 {
            let mu = GridMeasure::point_mass(&g, k).unwrap();
            let zero = vec![0.0; 5];
            let (report, _, _) = stationarity_report(&nu, &mu, &zero, 1e-6).unwrap();
            // With a single target atom, psi(x) = c(x, y_k) + const.
            for i in 0..5 {
                let expected = 0.5 * (i as f64 - k as f64).powi(2);
                assert!((report.potential[i] - report.potential[0] - expected + 0.5 * (k as f64).powi(2)).abs() < 1e-12);
            }
            let (vertex, gap) = fw_direction(&nu, &report.potential, &zero);
            assert_eq!(vertex.weights()[k], 1.0);
            assert!(gap > 0.0);
        }
    }

    #[test]
    fn atom_onto_itself_is_stationary() {
        let g = GridSpec::interval(-1.0, 1.0, 7).unwrap();
        let atom = GridMeasure::point_mass(&g, 3).unwrap();
        let k = InteractionKernel::quadratic(1.0, &g).unwrap();
        let report = optimality_report(&atom, &atom, &k, 1e-6).unwrap();
        assert!(report.support_violation.abs() < 1e-12);
    }

    #[test]
    fn gap_splits_into_residual_terms() {
        let g = GridSpec::interval(-1.0, 1.0, 9).unwrap();
        let nu = GridMeasure::build_from_density(&g, |x| 1.0 + x[0] * x[0]).unwrap();
        let mu = GridMeasure::build_from_density(&g, |x| 2.0 - x[0]).unwrap();
        let k = InteractionKernel::quadratic(0.5, &g).unwrap();
        let report = optimality_report(&nu, &mu, &k, 1e-6).unwrap();
        let t = interaction_potential(&nu, &k);
        let (_, gap) = fw_direction(&nu, &report.potential, &t);
        assert!(gap > 0.0);
        assert!((gap - report.gap).abs() < 1e-12);
        assert!((report.gap - report.global_violation - report.support_mismatch).abs() < 1e-10);
    }
}
