use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::solver::SolverConfig;

use super::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SolveNu,
    SolveMu,
    SolveJoint,
    SolveBarrier,
    Analytic,
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::SolveNu => "solve-nu",
            Self::SolveMu => "solve-mu",
            Self::SolveJoint => "solve-joint",
            Self::SolveBarrier => "solve-barrier",
            Self::Analytic => "analytic",
            Self::Validate => "validate",
        }
    }
}

/// Box grid: `points` nodes per axis, cell centred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub points: Vec<usize>,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            lower: vec![-2.0],
            upper: vec![2.0],
            points: vec![400],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    Quadratic { lambda: f64 },
    Power { lambda: f64, q: f64 },
    /// `[s, V(s)]` samples in increasing `s`.
    Tabulated { points: Vec<[f64; 2]> },
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self::Quadratic { lambda: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum LocalConfig {
    Zero,
    Quadratic { kappa: f64 },
    Power { exponent: f64 },
}

impl Default for LocalConfig {
    fn default() -> Self {
        Self::Quadratic { kappa: 1.0 }
    }
}

/// Where an input measure comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    Uniform,
    /// Normalized `exp(-|x - center|^2 / width^2)`; `center` defaults to the
    /// domain centre.
    Gaussian {
        #[serde(default)]
        center: Option<Vec<f64>>,
        width: f64,
    },
    /// Unit mass at the node nearest to `at` (default: domain centre).
    Atom {
        #[serde(default)]
        at: Option<Vec<f64>>,
    },
    /// The closed-form quadratic-interaction pair, centred in the domain.
    Analytic,
    /// A measure CSV as written by this tool.
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub domain: DomainConfig,
    pub kernel: KernelConfig,
    pub local_functional: LocalConfig,
    pub solver: SolverConfig,
    pub output_dir: Option<PathBuf>,
    pub mu_source: Option<SourceConfig>,
    pub nu_source: Option<SourceConfig>,
    /// Multi-start for `solve-nu` (uniform, centre atom, seeded random).
    pub multistart: bool,
}


pub const CONFIG_KEYS: &str = "\
CONFIG KEYS (JSON; every key optional)
  command                      solve-nu | solve-mu | solve-joint | solve-barrier | analytic | validate
                               (must match the subcommand when given)
  domain.lower, domain.upper   box corners, one entry per axis (1 or 2 axes)   [-2] [2]
  domain.points                nodes per axis                                  [400]
  kernel.name                  quadratic | power | tabulated                   quadratic
  kernel.lambda                interaction strength, > 0                       0.5
  kernel.q                     power exponent, >= 1 (power only)
  kernel.points                [[s, V(s)], ...] increasing samples (tabulated only)
  local_functional.name        zero | quadratic | power                        quadratic
  local_functional.kappa       f(t) = kappa t^2 / 2, > 0                       1
  local_functional.exponent    f(t) = t^m / m, m > 1
  mu_source, nu_source         {\"kind\": uniform | gaussian | atom | analytic | csv, ...}
                               gaussian: width > 0, center (optional)
                               atom: at (optional)   csv: path
                               defaults: solve-nu, solve-barrier, analytic use the analytic mu
                               and a uniform nu; the other commands start both from uniform.
                               In solve-barrier nu_source is the reference measure.
  multistart                   solve-nu only: best of three starts              false
  output_dir                   artifact directory (flag > config > $OTCONC_OUTPUT_DIR > ./otconc-out)
  solver.max_outer_iter        outer iterations                                500
  solver.fw_tol                stationarity tolerance                          1e-5
  solver.fw_tol_relative       scale fw_tol by |objective|                     true
  solver.line_search           golden_section | fixed_schedule                 golden_section
  solver.line_search_probes    objective evaluations per line search           20
  solver.transport.kind        exact | entropic                                exact
  solver.transport.epsilon, .max_iter, .tol   entropic parameters
  solver.barrier_delta         barrier weight (solve-barrier)                  null
  solver.prox_weight           proximal weight (solve-barrier)                 null
  solver.seed                  seed of the random start                        0
  solver.support_threshold     support cutoff relative to the largest weight   1e-6
  solver.inner_max_sweeps      plan-space sweeps per outer iteration           2000
  solver.inner_tol_ratio       inner tolerance as a fraction of the outer one  1e-3
  solver.block_max_iter        iterations per block in solve-joint             50";

/// Parses `text` (empty for defaults), applies `key=value` overrides and
/// deserializes. Errors name the offending key.
pub fn load(text: Option<&str>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut root = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    if let Some(t) = text {
        let file = serde_json::from_str::<Value>(t).map_err(|e| CliError::Config {
            key: "<file>".into(),
            message: e.to_string(),
        })?;
        if !file.is_object() {
            return Err(CliError::Config {
                key: "<root>".into(),
                message: "top level must be an object".into(),
            });
        }
        merge(&mut root, file);
    }
    for item in overrides {
        apply_override(&mut root, item)?;
    }
    let mut track = serde_path_to_error::Track::new();
    let de = serde_path_to_error::Deserializer::new(&root, &mut track);
    RunConfig::deserialize(de).map_err(|e| CliError::Config {
        key: track.path().to_string(),
        message: e.to_string(),
    })
}

const TAGS: [&str; 2] = ["name", "kind"];

fn tag_changes(base: &serde_json::Map<String, Value>, patch: &serde_json::Map<String, Value>) -> bool {
    TAGS.iter().any(|t| patch.get(*t).is_some_and(|v| base.get(*t) != Some(v)))
}

/// Deep merge; an object whose variant tag changes is replaced whole.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) if !tag_changes(b, &p) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, p) => *slot = p,
    }
}

fn apply_override(root: &mut Value, item: &str) -> Result<(), CliError> {
    let (path, raw) = item.split_once('=').ok_or_else(|| CliError::Config {
        key: item.into(),
        message: "override must read path.to.key=value".into(),
    })?;
    let value = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.into()));
    if value.is_object() || value.is_array() {
        return Err(CliError::Config {
            key: path.into(),
            message: "overrides set scalar keys only".into(),
        });
    }
    let parts: Vec<&str> = path.split('.').collect();
    let mut node = root;
    for (k, part) in parts.iter().enumerate() {
        let last = k + 1 == parts.len();
        let bad = |message: &str| CliError::Config {
            key: path.into(),
            message: message.into(),
        };
        node = match node {
            Value::Object(map) => {
                // Switching variants drops the old variant's parameters.
                if last && TAGS.contains(part) && map.get(*part) != Some(&value) {
                    map.clear();
                }
                let slot = map.entry(part.to_string()).or_insert(Value::Null);
                if !last && slot.is_null() {
                    *slot = Value::Object(Default::default());
                }
                slot
            }
            Value::Array(items) => {
                let index: usize = part.parse().map_err(|_| bad("array segments must be indices"))?;
                items.get_mut(index).ok_or_else(|| bad("array index out of range"))?
            }
            _ => return Err(bad("path descends into a scalar")),
        };
    }
    *node = value;
    Ok(())
}
