//! Discrete optimal transport between grid measures: exact and entropic
//! solvers, Kantorovich potentials, c-transforms and displacement maps.

mod cost;
mod entropic;
mod exact;
mod map;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measure::{GridMeasure, GridSpec};
use crate::numfmt::g17;

pub use cost::{CostKind, CostMatrix};
pub use entropic::solve_entropic;
pub use exact::{solve_exact, transport_cost, MAX_EXACT_ENTRIES};
pub use map::{displacement_map, DisplacementMap};

/// Marginal mismatch tolerated by the solvers.
pub const MARGINAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("marginals carry different mass: {source_mass} vs {target_mass}")]
    InfeasibleMarginals { source_mass: f64, target_mass: f64 },
    #[error("exact solver limited to {limit} cost entries, got {entries}")]
    SizeGuardExceeded { entries: usize, limit: usize },
    #[error("no convergence after {iterations} iterations (marginal error {marginal_error:e})")]
    NoConvergence { iterations: usize, marginal_error: f64 },
    #[error("entropic scalings left the representable range; increase epsilon")]
    NumericalUnderflow,
    #[error("network simplex exceeded {pivots} pivots")]
    PivotLimit { pivots: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Coupling between two grid measures, stored as sparse `(i, j, mass)`
/// triplets in row-major order.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    entries: Vec<(usize, usize, f64)>,
    rows: usize,
    cols: usize,
    cost_value: f64,
    source_spec: GridSpec,
    target_spec: GridSpec,
}

impl TransportPlan {
    pub(crate) fn new(
        mut entries: Vec<(usize, usize, f64)>,
        cost: &CostMatrix,
        source_spec: &GridSpec,
        target_spec: &GridSpec,
    ) -> Self {
        entries.retain(|e| e.2 > 0.0);
        entries.sort_by_key(|a| (a.0, a.1));
        let cost_value = entries.iter().map(|&(i, j, m)| m * cost.get(i, j)).sum();
        Self {
            entries,
            rows: cost.rows(),
            cols: cost.cols(),
            cost_value,
            source_spec: source_spec.clone(),
            target_spec: target_spec.clone(),
        }
    }

    /// Positive entries `(i, j, mass)`.
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// `sum_ij coupling[i, j] * cost[i, j]`.
    pub fn cost_value(&self) -> f64 {
        self.cost_value
    }

    pub fn source_spec(&self) -> &GridSpec {
        &self.source_spec
    }

    pub fn target_spec(&self) -> &GridSpec {
        &self.target_spec
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.rows];
        for &(i, _, m) in &self.entries {
            s[i] += m;
        }
        s
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for &(_, j, m) in &self.entries {
            s[j] += m;
        }
        s
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.rows * self.cols];
        for &(i, j, m) in &self.entries {
            d[i * self.cols + j] += m;
        }
        d
    }

    /// Largest absolute marginal violation against the given weights.
    pub fn marginal_error(&self, source: &[f64], target: &[f64]) -> f64 {
        let r = self.row_sums();
        let c = self.col_sums();
        let er = r.iter().zip(source).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let ec = c.iter().zip(target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        er.max(ec)
    }

    /// Sparse `i,j,mass` export.
    pub fn write_csv<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["i", "j", "mass"])?;
        for &(i, j, m) in &self.entries {
            w.write_record([i.to_string(), j.to_string(), g17(m)])?;
        }
        w.flush()
    }
}

/// Kantorovich potential pair: `psi` on source nodes, `psi_c` on target
/// nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPotentials {
    pub psi: Vec<f64>,
    pub psi_c: Vec<f64>,
    pub is_c_concave: bool,
}

impl DualPotentials {
    /// `sum psi * source + sum psi_c * target`.
    pub fn dual_value(&self, source: &[f64], target: &[f64]) -> f64 {
        dot(&self.psi, source) + dot(&self.psi_c, target)
    }

    /// Largest violation of `psi[i] + psi_c[j] <= cost[i, j]`.
    pub fn feasibility_violation(&self, cost: &CostMatrix) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, &p) in self.psi.iter().enumerate() {
            let row = cost.row(i);
            for (j, &q) in self.psi_c.iter().enumerate() {
                worst = worst.max(p + q - row[j]);
            }
        }
        worst
    }

    /// `index,psi` export of the source-side potential.
    pub fn write_csv<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["index", "psi"])?;
        for (i, &p) in self.psi.iter().enumerate() {
            w.write_record([i.to_string(), g17(p)])?;
        }
        w.flush()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Direction of a c-transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `out[j] = min_i cost[i, j] - values[i]`.
    SourceToTarget,
    /// `out[i] = min_j cost[i, j] - values[j]`.
    TargetToSource,
}

/// Exact discrete c-transform; ties resolve to the lowest index.
pub fn c_transform(values: &[f64], cost: &CostMatrix, direction: Direction) -> Vec<f64> {
    c_transform_over(values, cost, direction, None)
}

/// c-transform whose infimum only ranges over `allowed` indices of the input
/// side (all indices when `None`).
pub(crate) fn c_transform_over(
    values: &[f64],
    cost: &CostMatrix,
    direction: Direction,
    allowed: Option<&[usize]>,
) -> Vec<f64> {
    match direction {
        Direction::SourceToTarget => {
            debug_assert_eq!(values.len(), cost.rows());
            let mut out = vec![f64::INFINITY; cost.cols()];
            let mut scan = |i: usize| {
                let row = cost.row(i);
                let vi = values[i];
                for (o, &c) in out.iter_mut().zip(row) {
                    let cand = c - vi;
                    if cand < *o {
                        *o = cand;
                    }
                }
            };
            match allowed {
                Some(idx) => idx.iter().for_each(|&i| scan(i)),
                None => (0..cost.rows()).for_each(&mut scan),
            }
            out
        }
        Direction::TargetToSource => {
            debug_assert_eq!(values.len(), cost.cols());
            (0..cost.rows())
                .map(|i| {
                    let row = cost.row(i);
                    let mut best = f64::INFINITY;
                    let mut consider = |j: usize| {
                        let cand = row[j] - values[j];
                        if cand < best {
                            best = cand;
                        }
                    };
                    match allowed {
                        Some(idx) => idx.iter().for_each(|&j| consider(j)),
                        None => (0..cost.cols()).for_each(&mut consider),
                    }
                    best
                })
                .collect()
        }
    }
}

/// Turns target-side potentials that are optimal on the target support into
/// a c-concave pair. The source potential is the largest one compatible with
/// the pinned target values, the target potential is its exact c-transform,
/// and the gauge sets `psi = 0` at the first source node with positive mass.
pub(crate) fn tighten_duals(
    target_values: &[f64],
    source: &[f64],
    target: &[f64],
    cost: &CostMatrix,
) -> DualPotentials {
    let target_support: Vec<usize> = (0..target.len()).filter(|&j| target[j] > 0.0).collect();
    let mut psi = c_transform_over(target_values, cost, Direction::TargetToSource, Some(&target_support));
    let mut psi_c = c_transform(&psi, cost, Direction::SourceToTarget);
    if let Some(i0) = source.iter().position(|&w| w > 0.0) {
        let shift = psi[i0];
        psi.iter_mut().for_each(|p| *p -= shift);
        psi_c.iter_mut().for_each(|q| *q += shift);
    }
    DualPotentials {
        psi,
        psi_c,
        is_c_concave: true,
    }
}

/// How transport subproblems are solved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransportMethod {
    Exact,
    Entropic {
        epsilon: f64,
        max_iter: usize,
        tol: f64,
    },
}

/// Solves with the chosen method.
pub fn solve(
    mu: &GridMeasure,
    nu: &GridMeasure,
    cost: &CostMatrix,
    method: TransportMethod,
) -> Result<(TransportPlan, DualPotentials), TransportError> {
    match method {
        TransportMethod::Exact => solve_exact(mu, nu, cost),
        TransportMethod::Entropic {
            epsilon,
            max_iter,
            tol,
        } => solve_entropic(mu, nu, cost, epsilon, max_iter, tol),
    }
}

/// `W_p(mu, nu)`: the `p`-th root of the optimal cost for `|x - y|^p`.
pub fn wasserstein(
    mu: &GridMeasure,
    nu: &GridMeasure,
    p: f64,
    method: TransportMethod,
) -> Result<f64, TransportError> {
    let cost = CostMatrix::power(mu.spec(), nu.spec(), p)?;
    let value = match method {
        TransportMethod::Exact => transport_cost(mu, nu, &cost)?,
        _ => solve(mu, nu, &cost, method)?.0.cost_value(),
    };
    Ok(value.max(0.0).powf(1.0 / p))
}

pub(crate) fn check_marginals(
    mu: &GridMeasure,
    nu: &GridMeasure,
    cost: &CostMatrix,
) -> Result<(), TransportError> {
    if cost.rows() != mu.len() || cost.cols() != nu.len() {
        return Err(TransportError::DimensionMismatch(format!(
            "cost is {}x{}, measures have {} and {} nodes",
            cost.rows(),
            cost.cols(),
            mu.len(),
            nu.len()
        )));
    }
    let (a, b) = (mu.total_mass(), nu.total_mass());
    if (a - b).abs() > MARGINAL_TOLERANCE {
        return Err(TransportError::InfeasibleMarginals {
            source_mass: a,
            target_mass: b,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> GridSpec {
        GridSpec::from_nodes_1d(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn c_transform_of_zero_on_shared_grid() {
        let g = line(5);
        let cost = CostMatrix::half_squared(&g, &g).unwrap();
        let out = c_transform(&[0.0; 5], &cost, Direction::SourceToTarget);
        assert!(out.iter().all(|&v| v == 0.0));
        let k = 1.75;
        let out = c_transform(&[k; 5], &cost, Direction::TargetToSource);
        assert!(out.iter().all(|&v| v == -k));
    }

    #[test]
    fn double_transform_dominates_and_third_is_idempotent() {
        let g = line(6);
        let cost = CostMatrix::half_squared(&g, &g).unwrap();
        let chi = [0.3, -1.0, 2.0, 0.0, 0.5, -0.25];
        let c1 = c_transform(&chi, &cost, Direction::SourceToTarget);
        let c2 = c_transform(&c1, &cost, Direction::TargetToSource);
        for (a, b) in c2.iter().zip(&chi) {
            assert!(a >= b);
        }
        let c3 = c_transform(&c2, &cost, Direction::SourceToTarget);
        for (a, b) in c3.iter().zip(&c1) {
            assert!((a - b).abs() <= 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn wasserstein_point_masses() {
        let g = line(7);
        let a = GridMeasure::point_mass(&g, 1).unwrap();
        let b = GridMeasure::point_mass(&g, 5).unwrap();
        for p in [1.0, 2.0, 3.5] {
            let w = wasserstein(&a, &b, p, TransportMethod::Exact).unwrap();
            assert!((w - 4.0).abs() < 1e-12, "p={p}: {w}");
            assert_eq!(wasserstein(&a, &a, p, TransportMethod::Exact).unwrap(), 0.0);
        }
    }
}
