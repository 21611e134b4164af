//! Exact discrete transport: a monotone staircase for one-dimensional convex
//! costs and a transportation simplex otherwise.

use std::collections::VecDeque;

use crate::measure::GridMeasure;

use super::{check_marginals, tighten_duals, CostMatrix, DualPotentials, TransportError, TransportPlan};

/// Largest dense problem the exact solver accepts.
pub const MAX_EXACT_ENTRIES: usize = 1_000_000;

/// Reduced problem on positive-mass nodes only.
struct Reduced {
    rows: Vec<usize>,
    cols: Vec<usize>,
    supply: Vec<f64>,
    demand: Vec<f64>,
}

impl Reduced {
    fn new(mu: &GridMeasure, nu: &GridMeasure) -> Self {
        let rows: Vec<usize> = (0..mu.len()).filter(|&i| mu.weights()[i] > 0.0).collect();
        let cols: Vec<usize> = (0..nu.len()).filter(|&j| nu.weights()[j] > 0.0).collect();
        let supply: Vec<f64> = rows.iter().map(|&i| mu.weights()[i]).collect();
        let mut demand: Vec<f64> = cols.iter().map(|&j| nu.weights()[j]).collect();
        let scale = supply.iter().sum::<f64>() / demand.iter().sum::<f64>();
        demand.iter_mut().for_each(|d| *d *= scale);
        Self {
            rows,
            cols,
            supply,
            demand,
        }
    }

    fn cost(&self, cost: &CostMatrix, r: usize, c: usize) -> f64 {
        cost.get(self.rows[r], self.cols[c])
    }
}

fn guard(cost: &CostMatrix) -> Result<(), TransportError> {
    let entries = cost.rows() * cost.cols();
    if entries > MAX_EXACT_ENTRIES {
        return Err(TransportError::SizeGuardExceeded {
            entries,
            limit: MAX_EXACT_ENTRIES,
        });
    }
    Ok(())
}

/// Optimal plan and c-concave Kantorovich potentials, with `psi` on the
/// source grid gauged to vanish at the first source node carrying mass.
pub fn solve_exact(
    mu: &GridMeasure,
    nu: &GridMeasure,
    cost: &CostMatrix,
) -> Result<(TransportPlan, DualPotentials), TransportError> {
    check_marginals(mu, nu, cost)?;
    guard(cost)?;
    let red = Reduced::new(mu, nu);
    let basis = if cost.is_monotone_1d() {
        staircase(&red)
    } else {
        simplex(&red, cost)?
    };
    let (_, v) = tree_duals(&red, cost, &basis);
    let mut target_values = vec![0.0; nu.len()];
    for (c, &j) in red.cols.iter().enumerate() {
        target_values[j] = v[c];
    }
    let entries = basis
        .iter()
        .map(|&(r, c, m)| (red.rows[r], red.cols[c], m))
        .collect();
    let plan = TransportPlan::new(entries, cost, mu.spec(), nu.spec());
    let duals = tighten_duals(&target_values, mu.weights(), nu.weights(), cost);
    Ok((plan, duals))
}

/// Optimal cost only; skips plan and potential construction on the
/// one-dimensional path.
pub fn transport_cost(mu: &GridMeasure, nu: &GridMeasure, cost: &CostMatrix) -> Result<f64, TransportError> {
    check_marginals(mu, nu, cost)?;
    guard(cost)?;
    if cost.is_monotone_1d() {
        let red = Reduced::new(mu, nu);
        Ok(staircase(&red)
            .iter()
            .map(|&(r, c, m)| m * red.cost(cost, r, c))
            .sum())
    } else {
        Ok(solve_exact(mu, nu, cost)?.0.cost_value())
    }
}

/// North-west corner rule: `rows + cols - 1` basic cells, degenerate ones
/// included, forming a spanning tree of the bipartite graph. For sorted 1-d
/// supports and a convex cost of `x - y` this is the monotone coupling.
fn staircase(red: &Reduced) -> Vec<(usize, usize, f64)> {
    let (n, m) = (red.supply.len(), red.demand.len());
    let mut cells = Vec::with_capacity(n + m - 1);
    let (mut ra, mut rb) = (red.supply[0], red.demand[0]);
    let (mut i, mut j) = (0, 0);
    loop {
        let take = ra.min(rb);
        let row_done = ra <= rb;
        cells.push((i, j, take));
        ra -= take;
        rb -= take;
        if i == n - 1 && j == m - 1 {
            break;
        }
        if j == m - 1 || (i < n - 1 && row_done) {
            i += 1;
            ra = red.supply[i];
        } else {
            j += 1;
            rb = red.demand[j];
        }
    }
    cells
}

/// Least-cost rule: cells in increasing cost order, each allocation
/// exhausting and crossing out exactly one line, so the `rows + cols - 1`
/// cells form a spanning tree as in the north-west corner rule.
fn least_cost(red: &Reduced, cost: &CostMatrix) -> Vec<(usize, usize, f64)> {
    let (n, m) = (red.supply.len(), red.demand.len());
    let mut order: Vec<(usize, usize)> = (0..n).flat_map(|r| (0..m).map(move |c| (r, c))).collect();
    order.sort_by(|a, b| red.cost(cost, a.0, a.1).total_cmp(&red.cost(cost, b.0, b.1)));
    let mut supply = red.supply.clone();
    let mut demand = red.demand.clone();
    let mut row_open = vec![true; n];
    let mut col_open = vec![true; m];
    let (mut rows_left, mut cols_left) = (n, m);
    let mut cells = Vec::with_capacity(n + m - 1);
    for (r, c) in order {
        if !(row_open[r] && col_open[c]) {
            continue;
        }
        let take = supply[r].min(demand[c]);
        cells.push((r, c, take));
        if rows_left == 1 && cols_left == 1 {
            break;
        }
        if (supply[r] <= demand[c] && rows_left > 1) || cols_left == 1 {
            row_open[r] = false;
            rows_left -= 1;
            supply[r] = 0.0;
            demand[c] = (demand[c] - take).max(0.0);
        } else {
            col_open[c] = false;
            cols_left -= 1;
            demand[c] = 0.0;
            supply[r] = (supply[r] - take).max(0.0);
        }
    }
    cells
}

/// Tree duals `u[r] + v[c] = cost` on every basic cell, `u[0] = 0`.
fn tree_duals(red: &Reduced, cost: &CostMatrix, basis: &[(usize, usize, f64)]) -> (Vec<f64>, Vec<f64>) {
    let tree = Tree::build(red.supply.len(), red.demand.len(), basis);
    duals_on(&tree, red, cost, basis)
}

fn duals_on(tree: &Tree, red: &Reduced, cost: &CostMatrix, basis: &[(usize, usize, f64)]) -> (Vec<f64>, Vec<f64>) {
    let n = red.supply.len();
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; red.demand.len()];
    for &node in &tree.order[1..] {
        let (r, c, _) = basis[tree.parent_edge[node]];
        if node < n {
            u[r] = red.cost(cost, r, c) - v[c];
        } else {
            v[c] = red.cost(cost, r, c) - u[r];
        }
    }
    (u, v)
}

/// Rooted spanning tree over rows `0..n` and columns `n..n+m`.
struct Tree {
    n: usize,
    order: Vec<usize>,
    adj: Vec<Vec<(usize, usize)>>,
    parent: Vec<usize>,
    parent_edge: Vec<usize>,
    depth: Vec<usize>,
}

impl Tree {
    fn build(n: usize, m: usize, basis: &[(usize, usize, f64)]) -> Self {
        let total = n + m;
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); total];
        for (e, &(r, c, _)) in basis.iter().enumerate() {
            adj[r].push((n + c, e));
            adj[n + c].push((r, e));
        }
        let mut parent = vec![usize::MAX; total];
        let mut parent_edge = vec![usize::MAX; total];
        let mut depth = vec![0; total];
        let mut order = Vec::with_capacity(total);
        let mut seen = vec![false; total];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(a) = queue.pop_front() {
            order.push(a);
            for &(b, e) in &adj[a] {
                if !seen[b] {
                    seen[b] = true;
                    parent[b] = a;
                    parent_edge[b] = e;
                    depth[b] = depth[a] + 1;
                    queue.push_back(b);
                }
            }
        }
        debug_assert_eq!(order.len(), total, "basis is not a spanning tree");
        Self {
            n,
            order,
            adj,
            parent,
            parent_edge,
            depth,
        }
    }

    /// Edges on the tree path from node `a` to node `b`, in walking order.
    fn path(&self, mut a: usize, mut b: usize) -> Vec<usize> {
        let mut from_a = Vec::new();
        let mut from_b = Vec::new();
        while self.depth[a] > self.depth[b] {
            from_a.push(self.parent_edge[a]);
            a = self.parent[a];
        }
        while self.depth[b] > self.depth[a] {
            from_b.push(self.parent_edge[b]);
            b = self.parent[b];
        }
        while a != b {
            from_a.push(self.parent_edge[a]);
            a = self.parent[a];
            from_b.push(self.parent_edge[b]);
            b = self.parent[b];
        }
        from_a.extend(from_b.into_iter().rev());
        from_a
    }

    /// Replaces edge `e`, whose endpoints are `old`, by the basis cell now
    /// stored at `e`. Only the subtree cut off by the old edge is re-hung,
    /// and `potential` (rows then columns) is updated on it.
    fn exchange(
        &mut self,
        e: usize,
        old: (usize, usize),
        cell: (usize, usize),
        cell_cost: f64,
        potential: &mut [f64],
        cost_of: impl Fn(usize, usize) -> f64,
    ) {
        let n = self.n;
        let (a, b) = (old.0, n + old.1);
        let child = if self.parent_edge[a] == e { a } else { b };
        self.adj[a].retain(|&(_, f)| f != e);
        self.adj[b].retain(|&(_, f)| f != e);
        // Nodes of the detached subtree, found through parent links.
        let mut inside = vec![false; self.adj.len()];
        let mut stack = vec![child];
        inside[child] = true;
        while let Some(x) = stack.pop() {
            for &(y, _) in &self.adj[x] {
                if !inside[y] && self.parent[y] == x {
                    inside[y] = true;
                    stack.push(y);
                }
            }
        }
        let (p, q) = (cell.0, n + cell.1);
        self.adj[p].push((q, e));
        self.adj[q].push((p, e));
        let (s, o) = if inside[p] { (p, q) } else { (q, p) };
        self.parent[s] = o;
        self.parent_edge[s] = e;
        self.depth[s] = self.depth[o] + 1;
        potential[s] = cell_cost - potential[o];
        let mut stack = vec![s];
        while let Some(x) = stack.pop() {
            for k in 0..self.adj[x].len() {
                let (y, f) = self.adj[x][k];
                if y == self.parent[x] && f == self.parent_edge[x] {
                    continue;
                }
                self.parent[y] = x;
                self.parent_edge[y] = f;
                self.depth[y] = self.depth[x] + 1;
                let (r, c) = if x < n { (x, y - n) } else { (y, x - n) };
                potential[y] = cost_of(r, c) - potential[x];
                stack.push(y);
            }
        }
    }
}

/// Primal transportation simplex from a least-cost basis. Pricing
/// scans blocks of cells cyclically and takes the most negative reduced cost
/// in the first block that has one; after a long run of degenerate pivots it
/// switches to Bland's rule until a pivot moves mass again.
fn simplex(red: &Reduced, cost: &CostMatrix) -> Result<Vec<(usize, usize, f64)>, TransportError> {
    let (n, m) = (red.supply.len(), red.demand.len());
    let mut basis = least_cost(red, cost);
    if n == 1 || m == 1 {
        return Ok(basis);
    }
    let scale = (0..n)
        .flat_map(|r| (0..m).map(move |c| (r, c)))
        .fold(0.0_f64, |s, (r, c)| s.max(red.cost(cost, r, c)));
    let eps = 1e-12 * (1.0 + scale);
    let cells = n * m;
    let block = ((cells as f64).sqrt() as usize).max(16).min(cells);
    let pivot_limit = 50 * cells + 10_000;
    let degenerate_limit = 2 * (n + m);
    let mut in_basis = vec![false; cells];
    for &(r, c, _) in &basis {
        in_basis[r * m + c] = true;
    }
    let mut cursor = 0;
    let mut degenerate_run = 0;
    let mut tree = Tree::build(n, m, &basis);
    let (u, v) = duals_on(&tree, red, cost, &basis);
    let mut potential: Vec<f64> = u.into_iter().chain(v).collect();
    for _ in 0..pivot_limit {
        let reduced = |k: usize| {
            let (r, c) = (k / m, k % m);
            red.cost(cost, r, c) - potential[r] - potential[n + c]
        };
        let bland = degenerate_run > degenerate_limit;
        let entering = if bland {
            (0..cells).find(|&k| !in_basis[k] && reduced(k) < -eps)
        } else {
            let mut found = None;
            let mut scanned = 0;
            while scanned < cells && found.is_none() {
                let mut best = -eps;
                for _ in 0..block.min(cells - scanned) {
                    let k = cursor;
                    cursor = (cursor + 1) % cells;
                    if !in_basis[k] {
                        let rc = reduced(k);
                        if rc < best {
                            best = rc;
                            found = Some(k);
                        }
                    }
                }
                scanned += block;
            }
            found
        };
        let Some(k) = entering else {
            return Ok(basis);
        };
        let (p, q) = (k / m, k % m);
        // Cycle: entering cell gains, then path from column q to row p
        // alternates losing and gaining edges.
        let path = tree.path(n + q, p);
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for (step, &e) in path.iter().enumerate() {
            if step % 2 == 0 {
                let (r, c, x) = basis[e];
                let better = x < theta
                    || (x == theta && bland && r * m + c < basis[leave].0 * m + basis[leave].1);
                if better {
                    theta = x;
                    leave = e;
                }
            }
        }
        for (step, &e) in path.iter().enumerate() {
            let x = &mut basis[e].2;
            if step % 2 == 0 {
                *x = (*x - theta).max(0.0);
            } else {
                *x += theta;
            }
        }
        degenerate_run = if theta > 0.0 { 0 } else { degenerate_run + 1 };
        let (lr, lc, _) = basis[leave];
        in_basis[lr * m + lc] = false;
        in_basis[k] = true;
        basis[leave] = (p, q, theta);
        tree.exchange(leave, (lr, lc), (p, q), red.cost(cost, p, q), &mut potential, |r, c| red.cost(cost, r, c));
    }
    Err(TransportError::PivotLimit { pivots: pivot_limit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::GridSpec;
    use crate::transport::{Direction, c_transform};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(n: usize) -> GridSpec {
        GridSpec::from_nodes_1d(0.0, 1.0, n).unwrap()
    }

    fn check_certificate(mu: &GridMeasure, nu: &GridMeasure, cost: &CostMatrix) -> f64 {
        let (plan, duals) = solve_exact(mu, nu, cost).unwrap();
        let primal = plan.cost_value();
        assert!(plan.marginal_error(mu.weights(), nu.weights()) <= 1e-9);
        assert!(duals.feasibility_violation(cost) <= 1e-9);
        let dual = duals.dual_value(mu.weights(), nu.weights());
        assert!((primal - dual).abs() <= 1e-8 * (1.0 + primal.abs()), "{primal} vs {dual}");
        for &(i, j, _) in plan.entries() {
            assert!((duals.psi[i] + duals.psi_c[j] - cost.get(i, j)).abs() <= 1e-8);
        }
        let expected = c_transform(&duals.psi, cost, Direction::SourceToTarget);
        assert_eq!(expected, duals.psi_c);
        let i0 = mu.weights().iter().position(|&w| w > 0.0).unwrap();
        assert_eq!(duals.psi[i0], 0.0);
        primal
    }

    #[test]
    fn two_by_two_instance() {
        let g = line(4);
        let mu = GridMeasure::from_weights(g.clone(), vec![0.5, 0.0, 0.5, 0.0]).unwrap();
        let nu = GridMeasure::from_weights(g.clone(), vec![0.0, 0.5, 0.0, 0.5]).unwrap();
        let cost = CostMatrix::half_squared(&g, &g).unwrap();
        let (plan, _) = solve_exact(&mu, &nu, &cost).unwrap();
        assert!((plan.cost_value() - 0.5).abs() < 1e-15);
        assert_eq!(plan.entries(), &[(0, 1, 0.5), (2, 3, 0.5)]);
        check_certificate(&mu, &nu, &cost);
    }

    #[test]
    fn identical_measures_cost_nothing() {
        let g = GridSpec::rectangle([0.0, 0.0], [1.0, 1.0], [3, 3]).unwrap();
        let mu = GridMeasure::from_weights(g.clone(), (1..=9).map(|k| k as f64).collect()).unwrap();
        let cost = CostMatrix::half_squared(&g, &g).unwrap();
        let (plan, _) = solve_exact(&mu, &mu, &cost).unwrap();
        assert_eq!(plan.cost_value(), 0.0);
        assert!(plan.entries().iter().all(|&(i, j, _)| i == j));
    }

    #[test]
    fn point_mass_pair() {
        let g = line(9);
        let a = GridMeasure::point_mass(&g, 2).unwrap();
        let b = GridMeasure::point_mass(&g, 7).unwrap();
        let cost = CostMatrix::half_squared(&g, &g).unwrap();
        assert_eq!(solve_exact(&a, &b, &cost).unwrap().0.cost_value(), 12.5);
    }

    #[test]
    fn size_guard() {
        let big = line(1001);
        let cost = CostMatrix::half_squared(&big, &big).unwrap();
        let m = GridMeasure::uniform(&big);
        assert!(matches!(
            solve_exact(&m, &m, &cost),
            Err(TransportError::SizeGuardExceeded { .. })
        ));
    }

    #[test]
    fn simplex_matches_staircase_in_one_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = line(12);
        let monotone = CostMatrix::half_squared(&g, &g).unwrap();
        let general = CostMatrix::from_entries(12, 12, (0..144).map(|k| monotone.get(k / 12, k % 12)).collect())
            .unwrap();
        for _ in 0..30 {
            let w1: Vec<f64> = (0..12).map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen() }).collect();
            let w2: Vec<f64> = (0..12).map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen() }).collect();
            let (Ok(a), Ok(b)) = (GridMeasure::from_weights(g.clone(), w1), GridMeasure::from_weights(g.clone(), w2)) else {
                continue;
            };
            let c1 = check_certificate(&a, &b, &monotone);
            let c2 = check_certificate(&a, &b, &general);
            assert!((c1 - c2).abs() <= 1e-12 * (1.0 + c1));
            assert!((transport_cost(&a, &b, &monotone).unwrap() - c1).abs() <= 1e-15);
        }
    }

    #[test]
    fn two_dimensional_certificates() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = GridSpec::rectangle([0.0, 0.0], [1.0, 2.0], [5, 6]).unwrap();
        let cost = CostMatrix::half_squared(&g, &g).unwrap();
        for _ in 0..10 {
            let a = GridMeasure::from_weights(g.clone(), (0..30).map(|_| rng.gen::<f64>()).collect()).unwrap();
            let b = GridMeasure::from_weights(g.clone(), (0..30).map(|_| rng.gen::<f64>().powi(4)).collect()).unwrap();
            check_certificate(&a, &b, &cost);
        }
    }
}
