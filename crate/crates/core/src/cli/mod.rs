//! Batch front end: a JSON run configuration in, CSV and JSON artifacts out.

mod config;
mod output;

use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use thiserror::Error;

use crate::analytic::{density_l1, fit_parabola, AnalyticError, QuadraticInstance};
use crate::functionals::{InteractionKernel, LocalFunctional};
use crate::measure::{GridMeasure, GridSpec, MeasureError};
use crate::solver::{
    multistart_nu, solve_joint, solve_mu, solve_nu, solve_nu_barrier, SolverError, SolverReport, Termination,
};
use crate::transport::{TransportError, TransportMethod};

pub use config::{load, Command, KernelConfig, LocalConfig, RunConfig, SourceConfig, CONFIG_KEYS};
pub use output::to_json;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_VAR: &str = "OTCONC_OUTPUT_DIR";

pub const EXIT_CODES: &str = "\
EXIT STATUS
  0  converged (validate: every check passed)
  1  configuration error; the message names the offending key
  2  iteration limit reached before convergence
  3  stalled: the line search found no further decrease
  4  file I/O error
  5  invalid input measure
  6  transport solver failure
  7  solver failure (barrier breach, grid mismatch, functional error)
  8  analytic instance refused (support ball leaves the domain)
  9  validate: a check against the closed form failed";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid measure ({what}): {source}")]
    Measure {
        what: String,
        #[source]
        source: MeasureError,
    },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Solver(SolverError),
    #[error(transparent)]
    Analytic(AnalyticError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } => 1,
            Self::Io { .. } => 4,
            Self::Measure { .. } => 5,
            Self::Transport(_) => 6,
            Self::Solver(_) => 7,
            Self::Analytic(_) => 8,
        }
    }

    fn config(key: &str, message: impl ToString) -> Self {
        Self::Config {
            key: key.into(),
            message: message.to_string(),
        }
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Transport(t) => Self::Transport(t),
            SolverError::InvalidConfig(m) => Self::config("solver", m),
            SolverError::Measure(m) => Self::Measure {
                what: "solver input".into(),
                source: m,
            },
            other => Self::Solver(other),
        }
    }
}

impl From<AnalyticError> for CliError {
    fn from(e: AnalyticError) -> Self {
        match e {
            AnalyticError::InvalidParameter(m) => Self::config("kernel.lambda", m),
            other => Self::Analytic(other),
        }
    }
}

/// Result of a successful run.
#[derive(Debug)]
pub struct Outcome {
    pub status: i32,
    pub output_dir: PathBuf,
    pub summary: String,
}

/// Output directory: flag, then config, then the environment, then
/// `./otconc-out`.
pub fn resolve_output_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    flag.or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUTPUT_DIR_VAR).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("otconc-out"))
}

/// Loads the configuration file (if any), applies overrides and runs.
pub fn run(
    command: Command,
    config_path: Option<&Path>,
    overrides: &[String],
    output_dir: Option<PathBuf>,
) -> Result<Outcome, CliError> {
    let text = config_path
        .map(|p| {
            std::fs::read_to_string(p).map_err(|e| CliError::Io {
                path: p.to_path_buf(),
                source: e,
            })
        })
        .transpose()?;
    let mut cfg = load(text.as_deref(), overrides)?;
    match cfg.command {
        Some(c) if c != command => {
            return Err(CliError::config(
                "command",
                format!("config says {} but the subcommand is {}", c.name(), command.name()),
            ))
        }
        _ => cfg.command = Some(command),
    }
    let dir = resolve_output_dir(output_dir, &cfg);
    run_config(&cfg, &dir)
}

/// Runs a fully resolved configuration, writing artifacts into `dir`.
pub fn run_config(cfg: &RunConfig, dir: &Path) -> Result<Outcome, CliError> {
    let command = cfg
        .command
        .ok_or_else(|| CliError::config("command", "no command given"))?;
    cfg.solver.validate().map_err(CliError::from)?;
    let spec = GridSpec::new(cfg.domain.lower.clone(), cfg.domain.upper.clone(), cfg.domain.points.clone())
        .map_err(|e| CliError::config("domain", e))?;
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    if command == Command::Analytic {
        return run_analytic(cfg, &spec, dir);
    }
    let kernel = build_kernel(&cfg.kernel, &spec)?;
    let local = build_local(cfg.local_functional)?;
    let setup = Setup { cfg, spec: &spec };
    let (mu_default, nu_default) = match command {
        Command::SolveNu | Command::SolveBarrier => (SourceConfig::Analytic, SourceConfig::Uniform),
        Command::SolveMu => (SourceConfig::Uniform, SourceConfig::Analytic),
        _ => (SourceConfig::Uniform, SourceConfig::Uniform),
    };
    let mu = setup.measure("mu_source", cfg.mu_source.as_ref().unwrap_or(&mu_default), Side::Mu)?;
    let nu = setup.measure("nu_source", cfg.nu_source.as_ref().unwrap_or(&nu_default), Side::Nu)?;
    let report = match command {
        Command::SolveNu if cfg.multistart => multistart_nu(&mu, &kernel, &cfg.solver)?,
        Command::SolveNu => solve_nu(&mu, &kernel, &cfg.solver, &nu)?,
        Command::SolveMu => solve_mu(&nu, &local, &cfg.solver, &mu)?,
        Command::SolveJoint | Command::Validate => solve_joint(&kernel, &local, &cfg.solver, &mu, &nu)?,
        Command::SolveBarrier => {
            for key in ["barrier_delta", "prox_weight"] {
                let set = if key == "barrier_delta" { cfg.solver.barrier_delta } else { cfg.solver.prox_weight };
                if set.is_none() {
                    return Err(CliError::config(&format!("solver.{key}"), "required by solve-barrier"));
                }
            }
            solve_nu_barrier(&mu, &kernel, &nu, &cfg.solver)?
        }
        Command::Analytic => unreachable!("handled above"),
    };
    let (final_mu, final_nu) = match command {
        Command::SolveNu | Command::SolveBarrier => (mu.clone(), report.final_nu.clone()),
        Command::SolveMu => (report.final_nu.clone(), nu.clone()),
        _ => (
            report.final_mu.clone().expect("joint reports carry mu"),
            report.final_nu.clone(),
        ),
    };
    let mut body = report_json(cfg, &report, &final_mu, &final_nu);
    let mut status = match report.termination {
        Termination::Converged => 0,
        Termination::IterationLimit => 2,
        Termination::Stalled => 3,
    };
    if command == Command::Validate {
        let (checks, passed) = validation(cfg, &report, &final_mu, &final_nu, &spec)?;
        body["homothety_ratio_observed"] = checks["homothety_ratio_observed"].clone();
        body["validation"] = checks;
        if status == 0 && !passed {
            status = 9;
        }
    }
    write_artifacts(dir, &body, &report, &final_mu, &final_nu, cfg.solver.transport)?;
    let summary = format!(
        "{}: {:?} after {} iterations, objective {}, certificate {}",
        command.name(),
        report.termination,
        report.iterations,
        crate::numfmt::g17(report.final_objective()),
        crate::numfmt::g17(report.optimality.certificate),
    );
    Ok(Outcome {
        status,
        output_dir: dir.to_path_buf(),
        summary,
    })
}

fn build_kernel(k: &KernelConfig, spec: &GridSpec) -> Result<InteractionKernel, CliError> {
    let built = match k {
        KernelConfig::Quadratic { lambda } => InteractionKernel::quadratic(*lambda, spec),
        KernelConfig::Power { lambda, q } => InteractionKernel::power(*lambda, *q, spec),
        KernelConfig::Tabulated { points } => {
            let pts: Vec<(f64, f64)> = points.iter().map(|p| (p[0], p[1])).collect();
            InteractionKernel::tabulated(&pts, spec)
        }
    };
    built.map_err(|e| CliError::config("kernel", e))
}

fn build_local(l: LocalConfig) -> Result<LocalFunctional, CliError> {
    let f = match l {
        LocalConfig::Zero => LocalFunctional::Zero,
        LocalConfig::Quadratic { kappa } => LocalFunctional::Quadratic { kappa },
        LocalConfig::Power { exponent } => LocalFunctional::Power { exponent },
    };
    f.validated().map_err(|e| CliError::config("local_functional", e))
}

#[derive(Clone, Copy)]
enum Side {
    Mu,
    Nu,
}

struct Setup<'a> {
    cfg: &'a RunConfig,
    spec: &'a GridSpec,
}

impl Setup<'_> {
    fn instance(&self, key: &str) -> Result<QuadraticInstance, CliError> {
        let KernelConfig::Quadratic { lambda } = self.cfg.kernel else {
            return Err(CliError::config(key, "the analytic source needs a quadratic kernel"));
        };
        Ok(QuadraticInstance::centered(lambda, self.spec)?)
    }

    fn point(&self, key: &str, p: &Option<Vec<f64>>) -> Result<Vec<f64>, CliError> {
        let p = p.clone().unwrap_or_else(|| self.spec.center());
        if p.len() != self.spec.dim() {
            return Err(CliError::config(key, format!("expected {} coordinates", self.spec.dim())));
        }
        Ok(p)
    }

    fn measure(&self, key: &str, source: &SourceConfig, side: Side) -> Result<GridMeasure, CliError> {
        let invalid = |source: MeasureError| CliError::Measure {
            what: key.into(),
            source,
        };
        match source {
            SourceConfig::Uniform => Ok(GridMeasure::uniform(self.spec)),
            SourceConfig::Gaussian { center, width } => {
                if !(*width > 0.0 && width.is_finite()) {
                    return Err(CliError::config(&format!("{key}.width"), "must be positive"));
                }
                let c = self.point(&format!("{key}.center"), center)?;
                GridMeasure::build_from_density(self.spec, |x| {
                    let s: f64 = x.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum();
                    (-s / (width * width)).exp()
                })
                .map_err(invalid)
            }
            SourceConfig::Atom { at } => {
                let p = self.point(&format!("{key}.at"), at)?;
                Ok(GridMeasure::point_mass_at(self.spec, &p))
            }
            SourceConfig::Analytic => {
                let inst = self.instance(key)?;
                Ok(match side {
                    Side::Mu => inst.sample_mu(self.spec)?,
                    Side::Nu => inst.sample_nu(self.spec)?,
                })
            }
            SourceConfig::Csv { path } => {
                let m = GridMeasure::load_csv(path).map_err(|e| match e {
                    MeasureError::Io(source) => CliError::Io {
                        path: path.clone(),
                        source,
                    },
                    other => invalid(other),
                })?;
                if m.spec() != self.spec {
                    return Err(invalid(MeasureError::InvalidGrid(format!(
                        "{} does not live on the configured domain",
                        path.display()
                    ))));
                }
                Ok(m)
            }
        }
    }
}

fn measure_summary(m: &GridMeasure) -> Value {
    json!({
        "total_mass": output::num(m.total_mass()),
        "barycenter": output::nums(&m.barycenter()),
        "max_density": output::num(m.linf_density()),
        "min_density": output::num(m.min_density()),
        "second_moment": output::num(m.second_moment()),
    })
}

fn report_json(cfg: &RunConfig, report: &SolverReport, mu: &GridMeasure, nu: &GridMeasure) -> Value {
    let ser = |v: Result<Value, serde_json::Error>| v.expect("report fields serialize");
    json!({
        "command": cfg.command.map(Command::name),
        "termination": ser(serde_json::to_value(report.termination)),
        "converged": report.converged(),
        "iterations": report.iterations,
        "final_objective": output::num(report.final_objective()),
        "optimality": ser(serde_json::to_value(&report.optimality)),
        "mu_optimality": ser(serde_json::to_value(&report.mu_optimality)),
        "linf_bound_check": ser(serde_json::to_value(report.linf_bound_check)),
        "barrier": ser(serde_json::to_value(report.barrier)),
        "barycenter_distance": report.barycenter_distance.map(output::num),
        "homothety": ser(serde_json::to_value(report.homothety)),
        "mu": measure_summary(mu),
        "nu": measure_summary(nu),
        "config": ser(serde_json::to_value(cfg)),
    })
}

/// Checks of a joint solve against the closed-form quadratic instance.
fn validation(
    cfg: &RunConfig,
    report: &SolverReport,
    mu: &GridMeasure,
    nu: &GridMeasure,
    spec: &GridSpec,
) -> Result<(Value, bool), CliError> {
    let KernelConfig::Quadratic { lambda } = cfg.kernel else {
        return Err(CliError::config("kernel.name", "validate needs the quadratic kernel"));
    };
    if cfg.local_functional != (LocalConfig::Quadratic { kappa: 1.0 }) {
        return Err(CliError::config("local_functional", "validate needs f(t) = t^2 / 2"));
    }
    let expected = QuadraticInstance::centered(lambda, spec)?;
    let h = spec.max_spacing();
    let observed_ratio = report.homothety.map_or(f64::NAN, |f| f.ratio);
    let ratio_error = (observed_ratio - expected.ratio()).abs() / expected.ratio();
    // The closed form is unique up to translation, so compare after moving
    // its centre to the recovered barycentre.
    let aligned = QuadraticInstance::new(lambda, spec, &mu.barycenter())?;
    let l1 = density_l1(mu, |x| aligned.mu_density(x));
    let bar_distance = report.barycenter_distance.unwrap_or(f64::NAN);
    let mut passed = ratio_error <= 0.05 && l1 <= 4.0 * h && bar_distance <= 2.0 * h;
    let mut checks = json!({
        "lambda": output::num(lambda),
        "homothety_ratio_observed": output::num(observed_ratio),
        "homothety_ratio_expected": output::num(expected.ratio()),
        "homothety_ratio_relative_error": output::num(ratio_error),
        "l1_to_closed_form": output::num(l1),
        "l1_tolerance": output::num(4.0 * h),
        "barycenter_distance": output::num(bar_distance),
        "barycenter_tolerance": output::num(2.0 * h),
        "nu_max_density": output::num(nu.linf_density()),
    });
    if let Some(fit) = fit_parabola(mu, 0.1) {
        let curvature_error = (fit.curvature - expected.coefficient()).abs() / expected.coefficient();
        passed &= curvature_error <= 0.1;
        checks["curvature_observed"] = output::num(fit.curvature);
        checks["curvature_expected"] = output::num(expected.coefficient());
        checks["curvature_relative_error"] = output::num(curvature_error);
    }
    checks["passed"] = Value::Bool(passed);
    Ok((checks, passed))
}

fn node_header(spec: &GridSpec) -> Vec<String> {
    let mut h = vec!["index".to_string(), "x".to_string()];
    if spec.dim() == 2 {
        h.push("y".into());
    }
    h
}

fn node_row(spec: &GridSpec, i: usize) -> Vec<f64> {
    let p = spec.node(i);
    let mut row = vec![i as f64, p[0]];
    if spec.dim() == 2 {
        row.push(p[1]);
    }
    row
}

fn write_artifacts(
    dir: &Path,
    body: &Value,
    report: &SolverReport,
    mu: &GridMeasure,
    nu: &GridMeasure,
    transport: TransportMethod,
) -> Result<(), CliError> {
    output::write_text(&dir.join("report.json"), &to_json(body))?;
    let dim = nu.spec().dim();
    let mut header: Vec<String> = ["iteration", "objective", "certificate", "max_density"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(["barycenter_x", "barycenter_y"].iter().take(dim).map(|s| s.to_string()));
    let rows = (0..report.objective_trace.len()).map(|k| {
        let mut row = vec![
            k as f64,
            report.objective_trace[k],
            report.gap_trace[k],
            report.max_density_trace[k],
        ];
        row.extend(&report.barycenter_trace[k]);
        row
    });
    output::write_table(&dir.join("trace.csv"), &header, rows)?;
    output::write_measure(&dir.join("mu.csv"), mu)?;
    output::write_measure(&dir.join("nu.csv"), nu)?;
    output::write_with(&dir.join("potentials.csv"), |w| report.potentials.write_csv(w))?;
    if transport == TransportMethod::Exact {
        if let Some(plan) = &report.plan {
            output::write_with(&dir.join("plan.csv"), |w| plan.write_csv(w))?;
        }
    }
    Ok(())
}

fn run_analytic(cfg: &RunConfig, spec: &GridSpec, dir: &Path) -> Result<Outcome, CliError> {
    let KernelConfig::Quadratic { lambda } = cfg.kernel else {
        return Err(CliError::config("kernel.name", "the analytic instance needs the quadratic kernel"));
    };
    let inst = QuadraticInstance::centered(lambda, spec)?;
    let u = inst.sample_mu(spec)?;
    let v = inst.sample_nu(spec)?;
    output::write_measure(&dir.join("u.csv"), &u)?;
    output::write_measure(&dir.join("v.csv"), &v)?;
    let d = spec.dim();
    for (name, map) in [("s.csv", true), ("t.csv", false)] {
        let mut header = node_header(spec);
        header.extend(["image_x", "image_y"].iter().take(d).map(|s| s.to_string()));
        let rows = (0..spec.len()).map(|i| {
            let x = &spec.node(i)[..d];
            let mut row = node_row(spec, i);
            row.extend(if map { inst.to_nu(x) } else { inst.from_nu(x) });
            row
        });
        output::write_table(&dir.join(name), &header, rows)?;
    }
    let lipschitz = inst.lipschitz_bound_check()?;
    let body = json!({
        "command": "analytic",
        "lambda": output::num(lambda),
        "dim": d,
        "center": output::nums(&inst.center),
        "mu_radius": output::num(inst.radius),
        "nu_radius": output::num(inst.nu_radius()),
        "homothety_ratio": output::num(inst.ratio()),
        "mu_coefficient": output::num(inst.coefficient()),
        "mu_peak": output::num(inst.normalization),
        "lipschitz": {
            "lip_constant": output::num(lipschitz.lip_constant),
            "bound": output::num(lipschitz.bound),
            "global_bound": output::num(lipschitz.global_bound),
            "inf_u": output::num(lipschitz.inf_u),
            "remark_inequality": lipschitz.remark_inequality,
            "discontinuity_flag": lipschitz.discontinuity_flag,
        },
        "u": measure_summary(&u),
        "v": measure_summary(&v),
        "config": serde_json::to_value(cfg).expect("config serializes"),
    });
    output::write_text(&dir.join("report.json"), &to_json(&body))?;
    Ok(Outcome {
        status: 0,
        output_dir: dir.to_path_buf(),
        summary: format!("analytic: lambda {}, ratio {}", crate::numfmt::g17(lambda), crate::numfmt::g17(inst.ratio())),
    })
}
