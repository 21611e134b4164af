//! Log-domain Sinkhorn iterations with epsilon scaling.

use crate::measure::GridMeasure;

use super::{c_transform, check_marginals, CostMatrix, Direction, DualPotentials, TransportError, TransportPlan};

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropic transport at regularization `epsilon`, iterated until the L1
/// row-marginal error is at most `tol`. The regularization is annealed
/// from the cost scale down to `epsilon`; `max_iter` bounds the total number
/// of sweeps. The returned plan is rounded onto the exact marginals and the
/// potentials are replaced by a feasible c-concave pair.
pub fn solve_entropic(
    mu: &GridMeasure,
    nu: &GridMeasure,
    cost: &CostMatrix,
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<(TransportPlan, DualPotentials), TransportError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(TransportError::InvalidParameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    check_marginals(mu, nu, cost)?;
    let rows: Vec<usize> = (0..mu.len()).filter(|&i| mu.weights()[i] > 0.0).collect();
    let cols: Vec<usize> = (0..nu.len()).filter(|&j| nu.weights()[j] > 0.0).collect();
    let a: Vec<f64> = rows.iter().map(|&i| mu.weights()[i]).collect();
    let b: Vec<f64> = cols.iter().map(|&j| nu.weights()[j]).collect();
    let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let c = |r: usize, k: usize| cost.get(rows[r], cols[k]);

    let mut f = vec![0.0; rows.len()];
    let mut g = vec![0.0; cols.len()];
    let mut eps = cost.max_entry().max(epsilon);
    let mut iterations = 0;
    let mut error;
    loop {
        let last_stage = eps <= epsilon;
        let stage_tol = if last_stage { tol } else { tol.max(1e-3) };
        loop {
            for (r, fr) in f.iter_mut().enumerate() {
                *fr = -eps * log_sum_exp((0..cols.len()).map(|k| log_b[k] + (g[k] - c(r, k)) / eps));
            }
            for (k, gk) in g.iter_mut().enumerate() {
                *gk = -eps * log_sum_exp((0..rows.len()).map(|r| log_a[r] + (f[r] - c(r, k)) / eps));
            }
            iterations += 1;
            if f.iter().chain(&g).any(|x| !x.is_finite()) {
                return Err(TransportError::NumericalUnderflow);
            }
            error = (0..rows.len())
                .map(|r| {
                    let lse = log_sum_exp((0..cols.len()).map(|k| log_b[k] + (f[r] + g[k] - c(r, k)) / eps));
                    (a[r] * lse.exp() - a[r]).abs()
                })
                .sum::<f64>();
            if error <= stage_tol || iterations >= max_iter {
                break;
            }
        }
        if last_stage {
            break;
        }
        if iterations >= max_iter {
            return Err(TransportError::NoConvergence {
                iterations,
                marginal_error: error,
            });
        }
        eps = (0.5 * eps).max(epsilon);
    }
    if error > tol {
        return Err(TransportError::NoConvergence {
            iterations,
            marginal_error: error,
        });
    }

    let (n, m) = (rows.len(), cols.len());
    let mut plan = vec![0.0; n * m];
    for r in 0..n {
        for k in 0..m {
            plan[r * m + k] = a[r] * b[k] * ((f[r] + g[k] - c(r, k)) / eps).exp();
        }
    }
    if (0..n).any(|r| plan[r * m..(r + 1) * m].iter().all(|&x| x == 0.0)) {
        return Err(TransportError::NumericalUnderflow);
    }
    round_to_marginals(&mut plan, &a, &b);
    let entries = (0..n * m)
        .filter(|&k| plan[k] > 0.0)
        .map(|k| (rows[k / m], cols[k % m], plan[k]))
        .collect();
    let plan = TransportPlan::new(entries, cost, mu.spec(), nu.spec());

    // Soft c-transform of the column potential extends psi to every source
    // node, then one exact transform restores feasibility.
    let mut psi: Vec<f64> = (0..mu.len())
        .map(|i| -eps * log_sum_exp((0..m).map(|k| log_b[k] + (g[k] - cost.get(i, cols[k])) / eps)))
        .collect();
    if let Some(i0) = mu.weights().iter().position(|&w| w > 0.0) {
        let shift = psi[i0];
        psi.iter_mut().for_each(|p| *p -= shift);
    }
    let psi_c = c_transform(&psi, cost, Direction::SourceToTarget);
    Ok((
        plan,
        DualPotentials {
            psi,
            psi_c,
            is_c_concave: true,
        },
    ))
}

/// Scales rows and columns down onto the marginals, then spreads the
/// missing mass as a rank-one correction.
fn round_to_marginals(plan: &mut [f64], a: &[f64], b: &[f64]) {
    let (n, m) = (a.len(), b.len());
    for r in 0..n {
        let s: f64 = plan[r * m..(r + 1) * m].iter().sum();
        if s > a[r] {
            let t = a[r] / s;
            plan[r * m..(r + 1) * m].iter_mut().for_each(|x| *x *= t);
        }
    }
    for k in 0..m {
        let s: f64 = (0..n).map(|r| plan[r * m + k]).sum();
        if s > b[k] {
            let t = b[k] / s;
            (0..n).for_each(|r| plan[r * m + k] *= t);
        }
    }
    let err_a: Vec<f64> = (0..n)
        .map(|r| (a[r] - plan[r * m..(r + 1) * m].iter().sum::<f64>()).max(0.0))
        .collect();
    let err_b: Vec<f64> = (0..m)
        .map(|k| (b[k] - (0..n).map(|r| plan[r * m + k]).sum::<f64>()).max(0.0))
        .collect();
    let total: f64 = err_a.iter().sum();
    if total > 0.0 {
        for r in 0..n {
            for k in 0..m {
                plan[r * m + k] += err_a[r] * err_b[k] / total;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::GridSpec;
    use crate::transport::solve_exact;

    #[test]
    fn two_by_two_instance() {
        let g = GridSpec::from_nodes_1d(0.0, 1.0, 4).unwrap();
        let mu = GridMeasure::from_weights(g.clone(), vec![0.5, 0.0, 0.5, 0.0]).unwrap();
        let nu = GridMeasure::from_weights(g.clone(), vec![0.0, 0.5, 0.0, 0.5]).unwrap();
        let cost = CostMatrix::half_squared(&g, &g).unwrap();
        let (plan, duals) = solve_entropic(&mu, &nu, &cost, 1e-3, 10_000, 1e-9).unwrap();
        assert!((plan.cost_value() - 0.5).abs() < 1e-2);
        assert!(plan.marginal_error(mu.weights(), nu.weights()) <= 1e-9);
        assert!(duals.feasibility_violation(&cost) <= 1e-12);
    }

    #[test]
    fn uniform_to_itself_is_nearly_diagonal() {
        let g = GridSpec::interval(0.0, 1.0, 16).unwrap();
        let mu = GridMeasure::uniform(&g);
        let cost = CostMatrix::half_squared(&g, &g).unwrap();
        let eps = 1e-3;
        let (plan, _) = solve_entropic(&mu, &mu, &cost, eps, 10_000, 1e-10).unwrap();
        assert!(plan.cost_value() <= eps * (16f64).ln());
        let dense = plan.to_dense();
        for i in 0..16 {
            let row = &dense[i * 16..(i + 1) * 16];
            assert!(row.iter().all(|&x| x <= row[i]));
        }
    }

    #[test]
    fn close_to_exact_cost() {
        let g = GridSpec::interval(-1.0, 1.0, 32).unwrap();
        let mu = GridMeasure::build_from_density(&g, |x| 1.0 + x[0]).unwrap();
        let nu = GridMeasure::build_from_density(&g, |x| (-4.0 * x[0] * x[0]).exp()).unwrap();
        let cost = CostMatrix::half_squared(&g, &g).unwrap();
        let exact = solve_exact(&mu, &nu, &cost).unwrap().0.cost_value();
        let (plan, _) = solve_entropic(&mu, &nu, &cost, 1e-3 * 4.0, 20_000, 1e-9).unwrap();
        assert!((plan.cost_value() - exact).abs() < 1e-2);
    }

    #[test]
    fn reports_non_convergence() {
        let g = GridSpec::interval(0.0, 1.0, 8).unwrap();
        let mu = GridMeasure::build_from_density(&g, |x| 1.0 + x[0]).unwrap();
        let nu = GridMeasure::uniform(&g);
        let cost = CostMatrix::half_squared(&g, &g).unwrap();
        let err = solve_entropic(&mu, &nu, &cost, 1e-4, 2, 1e-14).unwrap_err();
        assert!(matches!(err, TransportError::NoConvergence { iterations: 2, .. }));
        assert!(solve_entropic(&mu, &nu, &cost, 0.0, 10, 1e-9).is_err());
    }
}
