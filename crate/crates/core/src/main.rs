//! Command-line front end: runs a registered example or a user-supplied
//! driver through the adaptive log-ODE solver and writes the run artifacts.

use clap::Parser;
use logode::adaptive::{AdaptiveSettings, Algorithm, DEGREE_CAP};
use logode::path::path_from_csv;
use logode::problems::{build_custom_problem, build_example_problem, Problem, ProblemOptions};
use logode::report::{execute_run, write_artifacts, RunSpec};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(
    name = "logode",
    about = "Adaptive log-ODE solver for rough differential equations with a computable a-posteriori error estimate",
    after_help = "Exit codes: 0 converged, 2 unconverged, 1 error."
)]
struct Cli {
    /// Registered example problem: spike-path | spike-field |
    /// changing-roughness | langevin
    #[arg(long, conflicts_with_all = ["path", "field"])]
    example: Option<String>,

    /// Driving-path CSV file (header `t,x1,…,xd`)
    #[arg(long, requires = "field")]
    path: Option<PathBuf>,

    /// Vector field name for --path runs (spike-path | spike-field |
    /// changing-roughness | langevin | scalar-linear)
    #[arg(long)]
    field: Option<String>,

    /// Initial value for --path runs, comma-separated (defaults to zeros)
    #[arg(long)]
    y0: Option<String>,

    /// Algorithm variant
    #[arg(long, default_value = "er-predicting")]
    algorithm: String,

    /// Absolute error tolerance (example defaults are used when omitted)
    #[arg(long)]
    tol_abs: Option<f64>,

    /// Relative error tolerance
    #[arg(long)]
    tol_rel: Option<f64>,

    /// Degree cap for the log-ODE scheme
    #[arg(long, default_value_t = DEGREE_CAP)]
    max_degree: usize,

    /// Roughness parameter p of the driver (example defaults when omitted)
    #[arg(long)]
    p: Option<f64>,

    /// Fixed inner ODE tolerance (default: 0.01 × tol / n, re-derived each
    /// round)
    #[arg(long)]
    ode_tol: Option<f64>,

    /// Local-error subdivision factor
    #[arg(long, default_value_t = 8)]
    subdivisions: usize,

    /// RNG seed for the stochastic drivers
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Langevin time horizon (desk-scale default 10)
    #[arg(long)]
    horizon: Option<f64>,

    /// Estimate the error of the full (tensor-valued) solution instead of
    /// the first level; requires --max-degree ≤ 2
    #[arg(long)]
    full_error: bool,

    /// Output directory for artifacts
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Use the large-scale discretizations (2^20 samples, horizon 1000)
    #[arg(long)]
    full_scale: bool,

    /// Number of intervals in the initial uniform grid
    #[arg(long, default_value_t = 8)]
    initial_intervals: usize,

    /// Cap on adaptive rounds
    #[arg(long, default_value_t = 30)]
    max_rounds: usize,

    /// Skip the reference solve (no true-error columns in the report)
    #[arg(long)]
    no_reference: bool,
}

fn build_problem(cli: &Cli) -> Result<Problem, String> {
    if let Some(name) = &cli.example {
        let opts = ProblemOptions {
            seed: cli.seed,
            horizon: cli.horizon.unwrap_or(10.0),
            full_scale: cli.full_scale,
        };
        return build_example_problem(name, &opts).map_err(|e| e.to_string());
    }
    let Some(file) = &cli.path else {
        return Err("either --example NAME or --path FILE --field NAME is required".into());
    };
    let text = std::fs::read_to_string(file)
        .map_err(|e| format!("cannot read {}: {e}", file.display()))?;
    let path = path_from_csv(&text).map_err(|e| e.to_string())?;
    let y0 = match &cli.y0 {
        Some(s) => Some(
            s.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| format!("--y0: {e}")))
                .collect::<Result<Vec<f64>, String>>()?,
        ),
        None => None,
    };
    build_custom_problem(path, cli.field.as_deref().unwrap(), y0).map_err(|e| e.to_string())
}

fn run(cli: &Cli) -> Result<bool, String> {
    let algorithm = Algorithm::parse(&cli.algorithm)
        .ok_or_else(|| format!("unknown algorithm '{}'", cli.algorithm))?;
    let problem = build_problem(cli)?;
    let settings = AdaptiveSettings {
        algorithm,
        tol_abs: cli.tol_abs.unwrap_or(problem.tol_abs),
        tol_rel: cli.tol_rel.unwrap_or(problem.tol_rel),
        p: cli.p.unwrap_or(problem.p),
        max_degree: cli.max_degree.min(DEGREE_CAP),
        subdivisions: cli.subdivisions,
        initial_intervals: cli.initial_intervals,
        max_rounds: cli.max_rounds,
        ode_tol_scale: 0.01,
        ode_tol_override: cli.ode_tol,
    };
    let spec = RunSpec {
        settings,
        full_error: cli.full_error,
        want_reference: !cli.no_reference,
        seed: cli.seed,
        horizon: cli.horizon.or_else(|| {
            (cli.example.as_deref() == Some("langevin")).then_some(if cli.full_scale {
                1000.0
            } else {
                10.0
            })
        }),
    };
    let refcache = cli.out.join("refcache");
    let (report, result) =
        execute_run(&problem, &spec, Some(refcache.as_path())).map_err(|e| e.to_string())?;
    write_artifacts(&cli.out, &report, &result).map_err(|e| e.to_string())?;

    println!(
        "{} on {}: {} after {} rounds, {} intervals {:?}",
        report.algorithm,
        report.example,
        if report.converged {
            "converged"
        } else {
            "UNCONVERGED"
        },
        report.rounds,
        report.n_intervals,
        report.intervals_by_degree,
    );
    if let Some(est) = report.estimated_error_norm {
        println!("estimated error: {est:.3e}");
    }
    if let Some(err) = report.true_error {
        println!("true error:      {err:.3e}");
    }
    if let Some(err) = report.corrected_error {
        println!("after correction:{err:.3e}");
    }
    println!("artifacts: {}", cli.out.display());
    Ok(report.converged)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
