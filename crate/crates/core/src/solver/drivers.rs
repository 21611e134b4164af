use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analytic::fit_homothety;
use crate::functionals::{eval_a, eval_f, eval_g, interaction_potential, local_potential, InteractionKernel, LocalFunctional};
use crate::measure::GridMeasure;
use crate::transport::{self, CostMatrix, TransportMethod};

use super::config::{BarrierDiagnostics, LinfBoundCheck, SolverConfig, SolverReport, Termination};
use super::engine::{Descent, DescentOutcome, Energy};
use super::stationarity::stationarity_report;
use super::SolverError;

fn same_grid(a: &GridMeasure, kernel: &InteractionKernel, what: &str) -> Result<(), SolverError> {
    if a.spec() != kernel.spec() {
        return Err(SolverError::GridMismatch(format!("{what} does not live on the kernel grid")));
    }
    Ok(())
}

fn exact_half_cost(a: &GridMeasure, b: &GridMeasure) -> Result<f64, SolverError> {
    let cost = CostMatrix::half_squared(a.spec(), b.spec())?;
    Ok(transport::transport_cost(a, b, &cost)?)
}

/// Assembles a report from a finished block solve, certifying the final
/// iterate with a fresh exact transport solve.
fn finish(
    outcome: DescentOutcome,
    fixed: &GridMeasure,
    first_variation: Vec<f64>,
    cfg: &SolverConfig,
    exact_plan: bool,
) -> Result<SolverReport, SolverError> {
    let (optimality, plan, potentials) =
        stationarity_report(&outcome.free, fixed, &first_variation, cfg.support_threshold)?;
    Ok(SolverReport {
        objective_trace: outcome.objective_trace,
        gap_trace: outcome.gap_trace,
        max_density_trace: outcome.max_density_trace,
        barycenter_trace: outcome.barycenter_trace,
        final_nu: outcome.free,
        final_mu: None,
        optimality,
        mu_optimality: None,
        linf_bound_check: None,
        termination: outcome.termination,
        iterations: outcome.iterations,
        barrier: None,
        barycenter_distance: None,
        homothety: None,
        potentials,
        plan: exact_plan.then_some(plan),
    })
}

/// Minimizes `OT(nu, mu) + G(nu)` over `nu` on the kernel grid, starting
/// from `init`.
pub fn solve_nu(
    mu: &GridMeasure,
    kernel: &InteractionKernel,
    cfg: &SolverConfig,
    init: &GridMeasure,
) -> Result<SolverReport, SolverError> {
    cfg.validate()?;
    same_grid(init, kernel, "initial nu")?;
    let cost = CostMatrix::half_squared(init.spec(), mu.spec())?;
    let descent = Descent {
        fixed: mu,
        cost: &cost,
        method: cfg.transport,
        keep_positive: false,
    };
    let outcome = descent.run(
        init.clone(),
        cfg,
        |_| Ok(Energy::interaction(kernel)),
        |nu| Ok(eval_g(nu, kernel)),
    )?;
    let t = interaction_potential(&outcome.free, kernel);
    let mut report = finish(outcome, mu, t, cfg, cfg.transport == TransportMethod::Exact)?;
    report.linf_bound_check = Some(LinfBoundCheck::new(
        report.final_nu.linf_density(),
        mu.linf_density(),
        kernel.c2_norm(),
        kernel.spec().dim(),
    ));
    Ok(report)
}

/// Runs [`solve_nu`] from the uniform measure, an atom at the domain
/// center and a seeded random measure; returns the lowest final objective.
pub fn multistart_nu(
    mu: &GridMeasure,
    kernel: &InteractionKernel,
    cfg: &SolverConfig,
) -> Result<SolverReport, SolverError> {
    let spec = kernel.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let random: Vec<f64> = (0..spec.len()).map(|_| rng.gen::<f64>()).collect();
    let starts = [
        GridMeasure::uniform(spec),
        GridMeasure::point_mass_at(spec, &spec.center()),
        GridMeasure::from_weights(spec.clone(), random)?,
    ];
    let mut best: Option<SolverReport> = None;
    for init in &starts {
        let report = solve_nu(mu, kernel, cfg, init)?;
        if best.as_ref().is_none_or(|b| report.final_objective() < b.final_objective()) {
            best = Some(report);
        }
    }
    Ok(best.expect("at least one start"))
}

/// Minimizes `OT(mu, nu) + F(mu)` over `mu` on the grid of `init`.
pub fn solve_mu(
    nu: &GridMeasure,
    local: &LocalFunctional,
    cfg: &SolverConfig,
    init: &GridMeasure,
) -> Result<SolverReport, SolverError> {
    cfg.validate()?;
    let local = local.validated()?;
    if !local.is_strictly_convex() {
        return Err(SolverError::InvalidConfig(
            "the local functional must be strictly convex".into(),
        ));
    }
    let cost = CostMatrix::half_squared(init.spec(), nu.spec())?;
    let vol = init.spec().cell_volume();
    let descent = Descent {
        fixed: nu,
        cost: &cost,
        method: cfg.transport,
        keep_positive: false,
    };
    let outcome = descent.run(
        init.clone(),
        cfg,
        |_| Ok(Energy::local(local, vol)),
        |mu| Ok(eval_f(mu, &local)),
    )?;
    let g = local_potential(&outcome.free, &local);
    let mut report = finish(outcome, nu, g, cfg, cfg.transport == TransportMethod::Exact)?;
    let mu = std::mem::replace(&mut report.final_nu, nu.clone());
    report.final_mu = Some(mu);
    report.mu_optimality = Some(report.optimality.clone());
    Ok(report)
}

/// `OT(mu, nu) + F(mu) + G(nu)`.
pub fn joint_objective(
    mu: &GridMeasure,
    nu: &GridMeasure,
    kernel: &InteractionKernel,
    local: &LocalFunctional,
) -> Result<f64, SolverError> {
    Ok(exact_half_cost(mu, nu)? + eval_f(mu, local) + eval_g(nu, kernel))
}

/// Block-coordinate descent on `OT(mu, nu) + F(mu) + G(nu)`, `mu` first.
/// Stops once a full sweep lowers the objective by less than the threshold
/// and both block gaps are below it.
pub fn solve_joint(
    kernel: &InteractionKernel,
    local: &LocalFunctional,
    cfg: &SolverConfig,
    init_mu: &GridMeasure,
    init_nu: &GridMeasure,
) -> Result<SolverReport, SolverError> {
    cfg.validate()?;
    same_grid(init_nu, kernel, "initial nu")?;
    let block = SolverConfig {
        max_outer_iter: cfg.block_max_iter,
        ..cfg.clone()
    };
    let mut mu = init_mu.clone();
    let mut nu = init_nu.clone();
    let mut objective = joint_objective(&mu, &nu, kernel, local)?;
    let mut objective_trace = vec![objective];
    let mut gap_trace = vec![f64::NAN];
    let mut max_density_trace = vec![nu.linf_density()];
    let mut barycenter_trace = vec![nu.barycenter()];
    let mut termination = Termination::IterationLimit;
    let mut sweeps = 0;
    while sweeps < cfg.max_outer_iter {
        let mu_report = solve_mu(&nu, local, &block, &mu)?;
        mu = mu_report.final_mu.expect("mu block reports its measure");
        let nu_report = solve_nu(&mu, kernel, &block, &nu)?;
        nu = nu_report.final_nu.clone();
        sweeps += 1;
        let next = joint_objective(&mu, &nu, kernel, local)?;
        let (mu_check, _, _) = stationarity_report(&mu, &nu, &local_potential(&mu, local), cfg.support_threshold)?;
        let gap = mu_check.certificate.max(nu_report.optimality.certificate);
        let threshold = cfg.threshold(next);
        let decrease = objective - next;
        objective = next.min(objective);
        objective_trace.push(objective);
        gap_trace.push(gap);
        max_density_trace.push(nu.linf_density());
        barycenter_trace.push(nu.barycenter());
        if decrease < threshold && gap <= threshold {
            termination = Termination::Converged;
            break;
        }
    }
    gap_trace[0] = gap_trace.get(1).copied().unwrap_or(f64::NAN);
    let (nu_opt, plan, potentials) =
        stationarity_report(&nu, &mu, &interaction_potential(&nu, kernel), cfg.support_threshold)?;
    let (mu_opt, _, _) = stationarity_report(&mu, &nu, &local_potential(&mu, local), cfg.support_threshold)?;
    let bar_mu = mu.barycenter();
    let bar_nu = nu.barycenter();
    let distance = bar_mu
        .iter()
        .zip(&bar_nu)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let homothety = if kernel.is_quadratic() {
        Some(fit_homothety(&mu, &nu)?)
    } else {
        None
    };
    let linf = LinfBoundCheck::new(nu.linf_density(), mu.linf_density(), kernel.c2_norm(), kernel.spec().dim());
    Ok(SolverReport {
        objective_trace,
        gap_trace,
        max_density_trace,
        barycenter_trace,
        final_nu: nu,
        final_mu: Some(mu),
        optimality: nu_opt,
        mu_optimality: Some(mu_opt),
        linf_bound_check: Some(linf),
        termination,
        iterations: sweeps,
        barrier: None,
        barycenter_distance: Some(distance),
        homothety,
        potentials,
        plan: (cfg.transport == TransportMethod::Exact).then_some(plan),
    })
}

/// Minimizes `OT(nu, mu) + G(nu) + delta A(nu) + eps W2^2(nu, reference)`
/// starting from `reference`, which must be strictly positive. With both
/// weights zero this is [`solve_nu`] from `reference`.
pub fn solve_nu_barrier(
    mu: &GridMeasure,
    kernel: &InteractionKernel,
    reference: &GridMeasure,
    cfg: &SolverConfig,
) -> Result<SolverReport, SolverError> {
    cfg.validate()?;
    let (Some(delta), Some(eps)) = (cfg.barrier_delta, cfg.prox_weight) else {
        return Err(SolverError::InvalidConfig(
            "barrier mode needs both barrier_delta and prox_weight".into(),
        ));
    };
    same_grid(reference, kernel, "reference measure")?;
    if delta == 0.0 && eps == 0.0 {
        let mut report = solve_nu(mu, kernel, cfg, reference)?;
        report.barrier = Some(BarrierDiagnostics {
            delta,
            prox_weight: eps,
            w2_to_reference: (2.0 * exact_half_cost(&report.final_nu, reference)?).max(0.0).sqrt(),
            weighted_barrier: 0.0,
            min_density: report.final_nu.min_density(),
        });
        return Ok(report);
    }
    if let Some(index) = reference.weights().iter().position(|&w| !(w > 0.0)) {
        return Err(SolverError::NotStrictlyPositive { index });
    }
    let cost = CostMatrix::half_squared(reference.spec(), mu.spec())?;
    let prox_cost = CostMatrix::half_squared(reference.spec(), reference.spec())?;
    let descent = Descent {
        fixed: mu,
        cost: &cost,
        method: cfg.transport,
        keep_positive: true,
    };
    // First variation of eps W2^2 = 2 eps OT_half is 2 eps times the
    // potential of the half-squared problem on the free side.
    let build = |nu: &GridMeasure| -> Result<Energy, SolverError> {
        let mut energy = Energy::interaction(kernel);
        energy.barrier_weight = delta;
        if eps > 0.0 {
            let (_, duals) = transport::solve_exact(nu, reference, &prox_cost)?;
            energy.linear = Some(duals.psi.iter().map(|p| 2.0 * eps * p).collect());
        }
        Ok(energy)
    };
    let terms = |nu: &GridMeasure| -> Result<f64, SolverError> {
        let mut total = eval_g(nu, kernel);
        if delta > 0.0 {
            total += delta * eval_a(nu).to_f64();
        }
        if eps > 0.0 {
            total += 2.0 * eps * transport::transport_cost(nu, reference, &prox_cost)?;
        }
        Ok(total)
    };
    let outcome = descent.run(reference.clone(), cfg, build, terms)?;
    let final_energy = build(&outcome.free)?;
    let g = final_energy.gradient(outcome.free.weights());
    let mut report = finish(outcome, mu, g, cfg, cfg.transport == TransportMethod::Exact)?;
    let nu = &report.final_nu;
    report.linf_bound_check = Some(LinfBoundCheck::new(
        nu.linf_density(),
        mu.linf_density(),
        kernel.c2_norm(),
        kernel.spec().dim(),
    ));
    report.barrier = Some(BarrierDiagnostics {
        delta,
        prox_weight: eps,
        w2_to_reference: (2.0 * transport::transport_cost(nu, reference, &prox_cost)?).max(0.0).sqrt(),
        weighted_barrier: delta * eval_a(nu).to_f64(),
        min_density: nu.min_density(),
    });
    Ok(report)
}
