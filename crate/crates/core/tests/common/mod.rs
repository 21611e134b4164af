//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use otconc::measure::{GridMeasure, GridSpec};
use otconc::transport::CostMatrix;
use rand::Rng;

/// Minimum of `<cost, plan>` over every vertex of the transportation
/// polytope, found by trying each set of `m + n - 1` cells as a basis.
/// Only the atoms of `a` and `b` (positive entries) take part.
pub fn brute_force_cost(a: &[f64], b: &[f64], cost: &CostMatrix) -> f64 {
    let rows: Vec<usize> = (0..a.len()).filter(|&i| a[i] > 0.0).collect();
    let cols: Vec<usize> = (0..b.len()).filter(|&j| b[j] > 0.0).collect();
    let (m, n) = (rows.len(), cols.len());
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|r| (0..n).map(move |c| (r, c))).collect();
    let k = m + n - 1;
    let mut best = f64::INFINITY;
    let mut chosen = Vec::with_capacity(k);
    subsets(&cells, k, 0, &mut chosen, &mut |basis| {
        if let Some(flow) = basis_flow(basis, &rows.iter().map(|&i| a[i]).collect::<Vec<_>>(), &cols.iter().map(|&j| b[j]).collect::<Vec<_>>()) {
            let value: f64 = basis
                .iter()
                .zip(&flow)
                .map(|(&(r, c), &x)| x * cost.get(rows[r], cols[c]))
                .sum();
            best = best.min(value);
        }
    });
    best
}

fn subsets<F: FnMut(&[(usize, usize)])>(
    cells: &[(usize, usize)],
    k: usize,
    start: usize,
    chosen: &mut Vec<(usize, usize)>,
    visit: &mut F,
) {
    if chosen.len() == k {
        visit(chosen);
        return;
    }
    for i in start..cells.len() {
        if cells.len() - i < k - chosen.len() {
            break;
        }
        chosen.push(cells[i]);
        subsets(cells, k, i + 1, chosen, visit);
        chosen.pop();
    }
}

/// Flow on a candidate basis by peeling leaves: a row or column with a
/// single remaining cell fixes that cell. `None` if the cells do not form a
/// spanning tree or the flow is negative.
fn basis_flow(basis: &[(usize, usize)], a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let mut row_left = a.to_vec();
    let mut col_left = b.to_vec();
    let mut flow = vec![f64::NAN; basis.len()];
    let mut open: Vec<bool> = vec![true; basis.len()];
    for _ in 0..basis.len() {
        let mut progressed = false;
        for e in 0..basis.len() {
            if !open[e] {
                continue;
            }
            let (r, c) = basis[e];
            let row_deg = (0..basis.len()).filter(|&f| open[f] && basis[f].0 == r).count();
            let col_deg = (0..basis.len()).filter(|&f| open[f] && basis[f].1 == c).count();
            let x = if row_deg == 1 {
                row_left[r]
            } else if col_deg == 1 {
                col_left[c]
            } else {
                continue;
            };
            flow[e] = x;
            row_left[r] -= x;
            col_left[c] -= x;
            open[e] = false;
            progressed = true;
            break;
        }
        if !progressed {
            return None;
        }
    }
    let tol = 1e-12;
    let balanced = row_left.iter().chain(&col_left).all(|x| x.abs() <= tol);
    (balanced && flow.iter().all(|&x| x >= -tol)).then_some(flow)
}

/// Random measure on `spec` with roughly `keep` of the nodes carrying mass.
pub fn random_measure<R: Rng>(rng: &mut R, spec: &GridSpec, keep: f64) -> GridMeasure {
    loop {
        let w: Vec<f64> = (0..spec.len())
            .map(|_| if rng.gen::<f64>() < keep { rng.gen_range(0.05..1.0) } else { 0.0 })
            .collect();
        if w.iter().any(|&x| x > 0.0) {
            return GridMeasure::from_weights(spec.clone(), w).expect("nonnegative weights");
        }
    }
}
