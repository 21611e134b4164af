use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use otconc::cli::{self, Command, CONFIG_KEYS, EXIT_CODES};

const AFTER_HELP: &str = concat!(
    "Artifacts: report.json, trace.csv, mu.csv, nu.csv, potentials.csv and, with exact transport, plan.csv\n",
    "(analytic writes report.json, u.csv, v.csv, s.csv, t.csv). Numbers are printed as %.17g.\n",
    "The output directory defaults to $OTCONC_OUTPUT_DIR, then ./otconc-out.\n\n",
);

#[derive(Parser)]
#[command(name = "otconc", version, about = "Minimize transport plus concentration functionals on a grid")]
#[command(after_long_help = format!("{AFTER_HELP}{CONFIG_KEYS}\n\n{EXIT_CODES}"))]
#[command(after_help = format!("{AFTER_HELP}{EXIT_CODES}\n\nRun with --help for every config key."))]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Minimize OT(nu, mu) + G(nu) over nu for fixed mu.
    SolveNu(RunArgs),
    /// Minimize OT(mu, nu) + F(mu) over mu for fixed nu.
    SolveMu(RunArgs),
    /// Minimize OT(mu, nu) + F(mu) + G(nu) over both measures.
    SolveJoint(RunArgs),
    /// The nu problem with a barrier and a proximal term around nu_source.
    SolveBarrier(RunArgs),
    /// Sample the closed-form quadratic instance: u, v and the maps s, t.
    Analytic(RunArgs),
    /// Joint solve checked against the closed form (default lambda 1/2, 400 nodes).
    Validate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a scalar key, e.g. --set solver.fw_tol=1e-7 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Artifact directory, overriding the config and the environment.
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let parsed = Cli::parse();
    let (command, args) = match parsed.command {
        Sub::SolveNu(a) => (Command::SolveNu, a),
        Sub::SolveMu(a) => (Command::SolveMu, a),
        Sub::SolveJoint(a) => (Command::SolveJoint, a),
        Sub::SolveBarrier(a) => (Command::SolveBarrier, a),
        Sub::Analytic(a) => (Command::Analytic, a),
        Sub::Validate(a) => (Command::Validate, a),
    };
    match cli::run(command, args.config.as_deref(), &args.overrides, args.output_dir) {
        Ok(outcome) => {
            println!("{} -> {}", outcome.summary, outcome.output_dir.display());
            ExitCode::from(outcome.status as u8)
        }
        Err(e) => {
            eprintln!("otconc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
