//! Descent on `J(rho) = OT(rho, sigma) + E(rho)` over the free marginal
//! `rho` of a plan whose other marginal `sigma` is held fixed.
//!
//! Each outer iteration solves the transport problem, measures the
//! stationarity certificate and builds a candidate measure; a line search on
//! the true `J` along the segment to the candidate picks the step.
//!
//! The first candidate linearizes everything except a strictly convex
//! node-wise part of `E`, which is minimized exactly; without such a part
//! every fixed node sends its mass to its best free node. Both ignore that
//! `OT(., sigma)` is polyhedral on a grid, so at a kink they can fail to
//! descend. The fallback works on the lifted objective
//! `<c, gamma> + E(first marginal of gamma)`, which is smooth in the plan:
//! mass moves inside each plan column, starting from the optimal plan. The
//! lifted objective dominates `J` and equals it at an optimal plan, so the
//! lifted candidate never raises `J`.

use crate::functionals::{barrier_derivative, barrier_integrand, InteractionKernel, LocalFunctional};
use crate::measure::GridMeasure;
use crate::transport::{self, CostMatrix, TransportMethod, TransportPlan};

use super::config::{LineSearch, SolverConfig, Termination};
use super::stationarity::{residuals, select_potential};
use super::SolverError;

/// Density below which a barrier iterate counts as having lost positivity.
pub(crate) const POSITIVITY_FLOOR: f64 = 1e-300;

const STALL_STEP: f64 = 1e-14;
const STALL_COUNT: usize = 3;

/// Sum of the non-transport terms, as a function of the free weights.
#[derive(Clone)]
pub(crate) struct Energy<'a> {
    pub kernel: Option<&'a InteractionKernel>,
    pub local: Option<LocalFunctional>,
    pub barrier_weight: f64,
    pub linear: Option<Vec<f64>>,
    pub cell_volume: f64,
}

impl<'a> Energy<'a> {
    pub fn interaction(kernel: &'a InteractionKernel) -> Self {
        Self {
            kernel: Some(kernel),
            local: None,
            barrier_weight: 0.0,
            linear: None,
            cell_volume: kernel.spec().cell_volume(),
        }
    }

    pub fn local(local: LocalFunctional, cell_volume: f64) -> Self {
        Self {
            kernel: None,
            local: Some(local),
            barrier_weight: 0.0,
            linear: None,
            cell_volume,
        }
    }

    /// The strictly convex node-wise part of the energy, when a local
    /// functional supplies one. A barrier alone is too weak at small weights:
    /// its minimizer crowds onto a near vertex, and the per-column vertices
    /// descend faster.
    fn convex_part(&self) -> Option<ConvexPart> {
        let local = self.local.filter(|f| f.is_strictly_convex())?;
        Some(ConvexPart {
            local: Some(local),
            barrier_weight: self.barrier_weight,
        })
    }

    /// The local integrand when it is the only nonlinear term, so each plan
    /// column has a closed-form level solve.
    fn separable(&self) -> Option<LocalFunctional> {
        match self.local {
            Some(f) if self.kernel.is_none() && self.barrier_weight == 0.0 && f.is_strictly_convex() => Some(f),
            _ => None,
        }
    }

    /// Every term convex: the pair objective is then convex in the step.
    fn is_convex(&self) -> bool {
        self.kernel.is_none()
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let h = self.cell_volume;
        let mut g = match self.kernel {
            Some(k) => k.apply(w).into_iter().map(|v| 2.0 * v).collect(),
            None => vec![0.0; w.len()],
        };
        if let Some(f) = &self.local {
            g.iter_mut().zip(w).for_each(|(g, x)| *g += f.derivative(x / h));
        }
        if self.barrier_weight > 0.0 {
            g.iter_mut()
                .zip(w)
                .for_each(|(g, x)| *g += self.barrier_weight * barrier_derivative(x / h));
        }
        if let Some(l) = &self.linear {
            g.iter_mut().zip(l).for_each(|(g, a)| *g += a);
        }
        g
    }

    /// Refreshes `grad` after `delta` moved from `from` to `to`; `w` already
    /// holds the new weights.
    fn update_gradient(&self, grad: &mut [f64], w: &[f64], from: usize, to: usize, delta: f64) {
        let h = self.cell_volume;
        if let Some(k) = self.kernel {
            k.add_scaled_column(grad, to, 2.0 * delta);
            k.add_scaled_column(grad, from, -2.0 * delta);
        }
        for &i in &[from, to] {
            let old = if i == from { w[i] + delta } else { w[i] - delta };
            if let Some(f) = &self.local {
                grad[i] += f.derivative(w[i] / h) - f.derivative(old / h);
            }
            if self.barrier_weight > 0.0 {
                grad[i] += self.barrier_weight * (barrier_derivative(w[i] / h) - barrier_derivative(old / h));
            }
        }
    }

    /// Energy change when `delta` moves from `from` to `to`.
    fn pair_change(&self, w: &[f64], grad: &[f64], from: usize, to: usize, delta: f64) -> f64 {
        let h = self.cell_volume;
        let (wf, wt) = (w[from], w[to]);
        let mut change = 0.0;
        if let Some(k) = self.kernel {
            let curvature = k.entry(from, from) + k.entry(to, to) - 2.0 * k.entry(from, to);
            let t_from = grad_part_interaction(grad, self, w, from);
            let t_to = grad_part_interaction(grad, self, w, to);
            change += delta * (t_to - t_from) + delta * delta * curvature;
        }
        if let Some(f) = &self.local {
            change += h * (f.value((wf - delta) / h) - f.value(wf / h) + f.value((wt + delta) / h) - f.value(wt / h));
        }
        if self.barrier_weight > 0.0 {
            if wf - delta <= 0.0 {
                return f64::INFINITY;
            }
            let a = barrier_integrand;
            change += self.barrier_weight * h * (a((wf - delta) / h) - a(wf / h) + a((wt + delta) / h) - a(wt / h));
        }
        if let Some(l) = &self.linear {
            change += delta * (l[to] - l[from]);
        }
        change
    }

    /// Derivative of [`Self::pair_change`] in `delta`; used only when every
    /// term is convex, hence without an interaction part.
    fn pair_slope(&self, w: &[f64], from: usize, to: usize, delta: f64) -> f64 {
        let h = self.cell_volume;
        let (wf, wt) = (w[from] - delta, w[to] + delta);
        let mut slope = 0.0;
        if let Some(f) = &self.local {
            slope += f.derivative(wt / h) - f.derivative(wf / h);
        }
        if self.barrier_weight > 0.0 {
            if wf <= 0.0 {
                return f64::INFINITY;
            }
            slope += self.barrier_weight * (barrier_derivative(wt / h) - barrier_derivative(wf / h));
        }
        if let Some(l) = &self.linear {
            slope += l[to] - l[from];
        }
        slope
    }
}

/// Interaction part `T_i = 2 (K w)_i` of the full gradient entry.
fn grad_part_interaction(grad: &[f64], energy: &Energy, w: &[f64], i: usize) -> f64 {
    let h = energy.cell_volume;
    let mut other = 0.0;
    if let Some(f) = &energy.local {
        other += f.derivative(w[i] / h);
    }
    if energy.barrier_weight > 0.0 {
        other += energy.barrier_weight * barrier_derivative(w[i] / h);
    }
    if let Some(l) = &energy.linear {
        other += l[i];
    }
    grad[i] - other
}

/// One block solve: the fixed marginal, the cost with free nodes as rows,
/// and whether iterates must stay strictly positive.
pub(crate) struct Descent<'a> {
    pub fixed: &'a GridMeasure,
    pub cost: &'a CostMatrix,
    pub method: TransportMethod,
    pub keep_positive: bool,
}

pub(crate) struct DescentOutcome {
    pub free: GridMeasure,
    pub objective_trace: Vec<f64>,
    pub gap_trace: Vec<f64>,
    pub max_density_trace: Vec<f64>,
    pub barycenter_trace: Vec<Vec<f64>>,
    pub termination: Termination,
    pub iterations: usize,
}

impl<'a> Descent<'a> {
    fn transport_cost(&self, free: &GridMeasure) -> Result<f64, SolverError> {
        Ok(match self.method {
            TransportMethod::Exact => transport::transport_cost(free, self.fixed, self.cost)?,
            m => transport::solve(free, self.fixed, self.cost, m)?.0.cost_value(),
        })
    }

    /// Runs the outer loop. `build` produces the energy at the current iterate
    /// (it may linearize terms there); `terms` evaluates the exact
    /// non-transport part of the objective at any probe.
    pub fn run<B, X>(&self, init: GridMeasure, cfg: &SolverConfig, build: B, terms: X) -> Result<DescentOutcome, SolverError>
    where
        B: Fn(&GridMeasure) -> Result<Energy<'a>, SolverError>,
        X: Fn(&GridMeasure) -> Result<f64, SolverError>,
    {
        let mut free = init;
        let mut objective = self.transport_cost(&free)? + terms(&free)?;
        let mut objective_trace = Vec::new();
        let mut gap_trace = Vec::new();
        let mut max_density_trace = Vec::new();
        let mut barycenter_trace = Vec::new();
        let mut stalls = 0;
        let mut steps = 0;
        loop {
            let energy = build(&free)?;
            let (plan, duals) = transport::solve(&free, self.fixed, self.cost, self.method)?;
            let grad = energy.gradient(free.weights());
            let selected = select_potential(&free, self.fixed, self.cost, &plan, &duals, &grad);
            let report = residuals(&free, selected, &grad, cfg.support_threshold);
            objective_trace.push(objective);
            gap_trace.push(report.certificate);
            max_density_trace.push(free.linf_density());
            barycenter_trace.push(free.barycenter());
            let threshold = cfg.threshold(objective);
            let termination = if report.certificate <= threshold {
                Some(Termination::Converged)
            } else if stalls >= STALL_COUNT {
                Some(Termination::Stalled)
            } else if steps >= cfg.max_outer_iter {
                Some(Termination::IterationLimit)
            } else {
                None
            };
            if let Some(termination) = termination {
                return Ok(DescentOutcome {
                    free,
                    objective_trace,
                    gap_trace,
                    max_density_trace,
                    barycenter_trace,
                    termination,
                    iterations: steps,
                });
            }
            let lifted = |free: &GridMeasure| {
                self.lifted_sweeps(free, &plan, &energy, cfg.inner_tol_ratio * threshold, cfg.inner_max_sweeps)
            };
            // The first candidate is cheap and order independent but can fail
            // at a kink of the transport term; the lifted sweeps then take
            // over.
            let first = match energy.convex_part() {
                Some(part) => linearized_minimizer(&free, &duals.psi, &grad, energy.cell_volume, part),
                None => self.column_vertices(&free, &grad),
            };
            let (mut step, mut value, mut next) = self.line_search(&free, &first, objective, steps, cfg, &terms)?;
            if step < ratio_power(cfg.line_search_probes) {
                let candidate = lifted(&free);
                let retry = self.line_search(&free, &candidate, objective, steps, cfg, &terms)?;
                if retry.2.is_some() && (next.is_none() || retry.1 < value) {
                    (step, value, next) = retry;
                }
            }
            // A step that would need a thousand repeats to close the
            // tolerance counts as vanishing too: at a kink of a transport
            // term the line search keeps finding such crumbs.
            let vanishing = step < STALL_STEP || objective - value < cfg.inner_tol_ratio * threshold;
            stalls = if vanishing { stalls + 1 } else { 0 };
            if let Some(next) = next {
                if self.keep_positive {
                    let vol = next.spec().cell_volume();
                    if let Some(index) = next.weights().iter().position(|&w| w / vol < POSITIVITY_FLOOR) {
                        return Err(SolverError::BarrierBreach {
                            index,
                            density: next.weights()[index] / vol,
                        });
                    }
                }
                free = next;
                objective = value;
            }
            steps += 1;
        }
    }

    /// Every fixed node sends its mass to the free nodes minimizing
    /// `c_ij + grad_i`, split evenly over ties.
    fn column_vertices(&self, free: &GridMeasure, grad: &[f64]) -> GridMeasure {
        let n = free.len();
        let mut w = vec![0.0; n];
        let mut ties = Vec::new();
        for (j, &mass) in self.fixed.weights().iter().enumerate() {
            if mass <= 0.0 {
                continue;
            }
            let best = (0..n).map(|i| self.cost.get(i, j) + grad[i]).fold(f64::INFINITY, f64::min);
            let slack = 1e-12 * (1.0 + best.abs());
            ties.clear();
            ties.extend((0..n).filter(|&i| self.cost.get(i, j) + grad[i] <= best + slack));
            let share = mass / ties.len() as f64;
            for &i in &ties {
                w[i] += share;
            }
        }
        GridMeasure::from_combination(free.spec().clone(), w)
    }

    /// Pairwise moves inside each plan column, starting from `plan`. Returns
    /// the first marginal of the improved plan.
    fn lifted_sweeps(
        &self,
        free: &GridMeasure,
        plan: &TransportPlan,
        energy: &Energy,
        tol: f64,
        max_sweeps: usize,
    ) -> GridMeasure {
        let n = free.len();
        let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.fixed.len()];
        for &(i, j, m) in plan.entries() {
            columns[j].push((i, m));
        }
        let mut w = free.weights().to_vec();
        // Plan row sums can differ from the weights by rounding; the plan
        // defines the lifted state.
        let rows = plan.row_sums();
        w.iter_mut().zip(&rows).for_each(|(w, r)| *w = r.max(0.0));
        let mut grad = energy.gradient(&w);
        let convex = energy.is_convex();
        let separable = energy.separable();
        for _ in 0..max_sweeps {
            let mut bound = 0.0;
            for (j, col) in columns.iter_mut().enumerate() {
                if col.is_empty() {
                    continue;
                }
                let mut fw = 0;
                let mut best = f64::INFINITY;
                for i in 0..n {
                    let s = self.cost.get(i, j) + grad[i];
                    if s < best {
                        best = s;
                        fw = i;
                    }
                }
                let mut slot = 0;
                let mut worst = f64::NEG_INFINITY;
                let mut col_mass = 0.0;
                for (s, &(i, m)) in col.iter().enumerate() {
                    col_mass += m;
                    let v = self.cost.get(i, j) + grad[i];
                    if v > worst {
                        worst = v;
                        slot = s;
                    }
                }
                let d = worst - best;
                bound += col_mass * d.max(0.0);
                if let Some(f) = separable {
                    if d > 0.0 {
                        self.solve_column(j, col, &mut w, &mut grad, energy, f);
                    }
                    continue;
                }
                let (aw, mass) = col[slot];
                if !(d > 0.0) || aw == fw {
                    continue;
                }
                let mut cap = mass;
                if self.keep_positive {
                    cap = cap.min(w[aw] * (1.0 - 1e-9));
                }
                if !(cap > 0.0) {
                    continue;
                }
                let dc = self.cost.get(fw, j) - self.cost.get(aw, j);
                let phi = |delta: f64| delta * dc + energy.pair_change(&w, &grad, aw, fw, delta);
                let delta = if convex {
                    let slope = |delta: f64| dc + energy.pair_slope(&w, aw, fw, delta);
                    convex_step(slope, cap)
                } else {
                    golden_step(&phi, cap)
                };
                if !(delta > 0.0) || !(phi(delta) < 0.0) {
                    continue;
                }
                let delta = if delta >= mass { mass } else { delta };
                w[aw] -= delta;
                w[fw] += delta;
                if w[aw] < 0.0 {
                    w[aw] = 0.0;
                }
                energy.update_gradient(&mut grad, &w, aw, fw, delta);
                if delta >= mass {
                    col.swap_remove(slot);
                } else {
                    col[slot].1 -= delta;
                }
                match col.iter_mut().find(|e| e.0 == fw) {
                    Some(e) => e.1 += delta,
                    None => col.push((fw, delta)),
                }
            }
            if bound < tol {
                break;
            }
        }
        GridMeasure::from_combination(free.spec().clone(), w)
    }

    /// Exact minimization over column `j` with the other columns frozen:
    /// `x_i = max(0, h (f')^{-1}(tau - c_ij - l_i) - r_i)`, `tau` set by the
    /// column mass.
    fn solve_column(
        &self,
        j: usize,
        col: &mut Vec<(usize, f64)>,
        w: &mut [f64],
        grad: &mut [f64],
        energy: &Energy,
        f: LocalFunctional,
    ) {
        let h = energy.cell_volume;
        let n = w.len();
        let mass: f64 = col.iter().map(|e| e.1).sum();
        let mut rest = w.to_vec();
        for &(i, m) in col.iter() {
            rest[i] = (rest[i] - m).max(0.0);
        }
        let offset: Vec<f64> = (0..n)
            .map(|i| self.cost.get(i, j) + energy.linear.as_ref().map_or(0.0, |l| l[i]))
            .collect();
        let key: Vec<f64> = (0..n).map(|i| offset[i] + f.derivative(rest[i] / h)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| key[a].total_cmp(&key[b]));
        // Only nodes whose level lies below tau receive mass.
        let fill = |tau: f64| -> f64 {
            let mut total = 0.0;
            for &i in &order {
                if key[i] >= tau {
                    break;
                }
                total += (h * f.derivative_inverse(tau - offset[i]) - rest[i]).max(0.0);
            }
            total
        };
        let mut lo = key[order[0]];
        let mut step = 1e-3 * (1.0 + lo.abs());
        let mut hi = lo + step;
        while fill(hi) < mass {
            lo = hi;
            step *= 2.0;
            hi += step;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if fill(mid) < mass {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let x: Vec<f64> = (0..n)
            .map(|i| if key[i] < hi { (h * f.derivative_inverse(hi - offset[i]) - rest[i]).max(0.0) } else { 0.0 })
            .collect();
        let total: f64 = x.iter().sum();
        let scale = mass / total;
        col.clear();
        for i in 0..n {
            let xi = x[i] * scale;
            if xi > 0.0 {
                col.push((i, xi));
            }
            w[i] = rest[i] + xi;
            grad[i] = f.derivative(w[i] / h) + energy.linear.as_ref().map_or(0.0, |l| l[i]);
        }
    }

    fn line_search<X>(
        &self,
        free: &GridMeasure,
        candidate: &GridMeasure,
        current: f64,
        k: usize,
        cfg: &SolverConfig,
        terms: &X,
    ) -> Result<(f64, f64, Option<GridMeasure>), SolverError>
    where
        X: Fn(&GridMeasure) -> Result<f64, SolverError>,
    {
        let eval = |t: f64| -> Result<(f64, GridMeasure), SolverError> {
            let m = free.mix(candidate, t);
            let v = self.transport_cost(&m)? + terms(&m)?;
            Ok((v, m))
        };
        let mut best: Option<(f64, f64, GridMeasure)> = None;
        let mut consider = |t: f64, v: f64, m: GridMeasure| {
            if v <= current && best.as_ref().is_none_or(|b| v < b.1) {
                best = Some((t, v, m));
            }
        };
        match cfg.line_search {
            LineSearch::GoldenSection => {
                let (v1, m1) = eval(1.0)?;
                consider(1.0, v1, m1);
                let ratio = 0.5 * (5f64.sqrt() - 1.0);
                let (mut a, mut b) = (0.0, 1.0);
                let mut x1 = b - ratio * (b - a);
                let mut x2 = a + ratio * (b - a);
                let (mut f1, m) = eval(x1)?;
                consider(x1, f1, m);
                let (mut f2, m) = eval(x2)?;
                consider(x2, f2, m);
                for _ in 2..cfg.line_search_probes {
                    if f1 <= f2 {
                        b = x2;
                        x2 = x1;
                        f2 = f1;
                        x1 = b - ratio * (b - a);
                        let (v, m) = eval(x1)?;
                        f1 = v;
                        consider(x1, v, m);
                    } else {
                        a = x1;
                        x1 = x2;
                        f1 = f2;
                        x2 = a + ratio * (b - a);
                        let (v, m) = eval(x2)?;
                        f2 = v;
                        consider(x2, v, m);
                    }
                }
            }
            LineSearch::FixedSchedule => {
                let mut t = 2.0 / (k as f64 + 2.0);
                for _ in 0..60 {
                    let (v, m) = eval(t)?;
                    if v <= current {
                        consider(t, v, m);
                        break;
                    }
                    t *= 0.5;
                }
            }
        }
        if best.is_none() {
            // The improving steps can lie below the smallest probe when the
            // objective curves sharply, as near the barrier's pole.
            let mut t = match cfg.line_search {
                LineSearch::GoldenSection => 0.5 * ratio_power(cfg.line_search_probes),
                LineSearch::FixedSchedule => 0.0,
            };
            while t > STALL_STEP {
                let (v, m) = eval(t)?;
                if v < current {
                    best = Some((t, v, m));
                    break;
                }
                t *= 0.5;
            }
        }
        Ok(match best {
            Some((t, v, m)) => (t, v, Some(m)),
            None => (0.0, current, None),
        })
    }
}

/// Strictly convex node-wise part `f(t) + delta a(t)` of an energy.
#[derive(Clone, Copy)]
struct ConvexPart {
    local: Option<LocalFunctional>,
    barrier_weight: f64,
}

impl ConvexPart {
    fn derivative(&self, t: f64) -> f64 {
        let mut d = self.local.map_or(0.0, |f| f.derivative(t));
        if self.barrier_weight > 0.0 {
            d += self.barrier_weight * barrier_derivative(t);
        }
        d
    }

    /// Density at which the derivative equals `s`; zero below the slope at
    /// the origin.
    fn inverse(&self, s: f64) -> f64 {
        if self.barrier_weight == 0.0 {
            return self.local.map_or(f64::INFINITY, |f| f.derivative_inverse(s));
        }
        // The barrier derivative sweeps all of R, so a bracket always exists.
        let (mut lo, mut hi) = (1.0, 1.0);
        while self.derivative(lo) > s {
            lo *= 0.5;
        }
        while self.derivative(hi) < s {
            hi *= 2.0;
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.derivative(mid) < s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Minimizer over probability measures of the energy with every term but
/// the convex node-wise part linearized at `free`:
/// `rho_i = h inverse(tau - psi_i - rest_i)` with `tau` fixed by unit mass,
/// `rest` the gradient minus the convex part's own derivative.
fn linearized_minimizer(free: &GridMeasure, psi: &[f64], grad: &[f64], h: f64, part: ConvexPart) -> GridMeasure {
    let offset: Vec<f64> = free
        .weights()
        .iter()
        .enumerate()
        .map(|(i, &w)| psi[i] + grad[i] - if w > 0.0 { part.derivative(w / h) } else { part.derivative(0.0) })
        .collect();
    let mass = |tau: f64| offset.iter().map(|o| h * part.inverse(tau - o)).sum::<f64>();
    let base = offset.iter().copied().fold(f64::INFINITY, f64::min);
    let mut step = 1e-3 * (1.0 + base.abs());
    let (mut lo, mut hi) = (base, base);
    while mass(lo) > 1.0 {
        lo -= step;
        step *= 2.0;
    }
    step = 1e-3 * (1.0 + base.abs());
    while mass(hi) < 1.0 {
        lo = lo.max(hi);
        hi += step;
        step *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let weights: Vec<f64> = offset.iter().map(|o| h * part.inverse(hi - o)).collect();
    let total: f64 = weights.iter().sum();
    GridMeasure::from_combination(free.spec().clone(), weights.into_iter().map(|w| w / total).collect())
}

/// Width of the golden-section bracket after `probes` evaluations.
fn ratio_power(probes: usize) -> f64 {
    (0.5 * (5f64.sqrt() - 1.0)).powi(probes.saturating_sub(1) as i32)
}

/// Largest step in `[0, cap]` up to the root of a nondecreasing slope that
/// starts negative.
fn convex_step<S: Fn(f64) -> f64>(slope: S, cap: f64) -> f64 {
    if slope(cap) <= 0.0 {
        return cap;
    }
    let (mut lo, mut hi) = (0.0, cap);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Best of the right endpoint and a golden-section minimizer on `[0, cap]`.
fn golden_step<P: Fn(f64) -> f64>(phi: &P, cap: f64) -> f64 {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (0.0, cap);
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let mut f1 = phi(x1);
    let mut f2 = phi(x2);
    for _ in 0..60 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = phi(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = phi(x2);
        }
        if b - a <= 1e-15 * cap {
            break;
        }
    }
    let (x, fx) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    let end = phi(cap);
    if end <= fx {
        cap
    } else {
        x
    }
}
