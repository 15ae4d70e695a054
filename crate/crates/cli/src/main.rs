use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hjb_cli::commands::{self, BoxBounds, Direction, OracleSettings, Output};
use hjb_cli::load_problem;
use hjb_core::patch::MarchOptions;
use hjb_core::{Error, Result};
use log::info;

/// Local power-series solutions of optimal control problems.
///
/// Log verbosity is read from HJB_LOG (error, warn, info, debug, trace).
#[derive(Debug, Parser)]
#[command(name = "hjb", version)]
struct Cli {
    /// Directory for CSV/JSON outputs and the run log; nothing is written
    /// when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Tolerances {
    /// Sets both eps1 and eps2.
    #[arg(long, default_value_t = 0.015625)]
    eps: f64,
    /// Stability band, overrides --eps.
    #[arg(long)]
    eps1: Option<f64>,
    /// Optimality band, overrides --eps.
    #[arg(long)]
    eps2: Option<f64>,
}

impl Tolerances {
    fn resolve(&self) -> (f64, f64) {
        (self.eps1.unwrap_or(self.eps), self.eps2.unwrap_or(self.eps))
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DirectionArg {
    Pos,
    Neg,
    Both,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Power-series solution: coefficient tables and samples.
    Series {
        problem: PathBuf,
        #[arg(long, default_value_t = 4)]
        degree: usize,
        /// Sample box, `lo,hi` or `lo1,hi1,...`.
        #[arg(long = "box", default_value = "-0.5,0.5")]
        bounds: String,
        #[arg(long, default_value_t = 64)]
        mesh: usize,
    },
    /// Taylor-patch a 1-D control-affine problem across its domain.
    Patch1d {
        problem: PathBuf,
        #[arg(long, default_value_t = 3)]
        degree: usize,
        #[arg(long, default_value_t = 256)]
        mesh: usize,
        #[command(flatten)]
        tol: Tolerances,
        #[arg(long, value_enum, default_value_t = DirectionArg::Both)]
        direction: DirectionArg,
        #[arg(long, default_value_t = 8)]
        max_patches: usize,
    },
    /// Largest Lyapunov-validated sublevel set of the series solution.
    Lyap {
        problem: PathBuf,
        #[arg(long, default_value_t = 4)]
        degree: usize,
        #[arg(long = "box", default_value = "-0.5,0.5")]
        bounds: String,
        #[arg(long, default_value_t = 256)]
        mesh: usize,
        #[command(flatten)]
        tol: Tolerances,
    },
    /// Eigenvalues of the symplectic pencil of the quadratic level.
    Pencil { problem: PathBuf },
    /// Compare the series cost with value iteration or closed-loop rollouts.
    OracleCompare {
        problem: PathBuf,
        #[arg(long, default_value_t = 4)]
        degree: usize,
        #[arg(long = "box", default_value = "-0.2,0.2")]
        bounds: String,
        #[arg(long, default_value_t = 100)]
        mesh: usize,
        /// Control box for value iteration.
        #[arg(long = "u-box", default_value = "-1,1")]
        u_bounds: String,
        #[arg(long, default_value_t = 40)]
        u_mesh: usize,
        #[arg(long, default_value_t = 1e-12)]
        vi_tol: f64,
        #[arg(long, default_value_t = 5000)]
        max_sweeps: usize,
        /// Rollout horizon.
        #[arg(long, default_value_t = 40.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
    },
}

fn run(cli: &Cli) -> Result<Output> {
    match &cli.command {
        Command::Series {
            problem,
            degree,
            bounds,
            mesh,
        } => {
            let lp = load_problem(problem)?;
            let b = BoxBounds::parse(bounds, lp.series.n)?;
            commands::series(&lp, *degree, &b, *mesh)
        }
        Command::Patch1d {
            problem,
            degree,
            mesh,
            tol,
            direction,
            max_patches,
        } => {
            let lp = load_problem(problem)?;
            let (eps1, eps2) = tol.resolve();
            let opts = MarchOptions {
                degree: *degree,
                eps1,
                eps2,
                mesh: *mesh,
                direction: 1,
                max_patches: *max_patches,
            };
            let dir = match direction {
                DirectionArg::Pos => Direction::Positive,
                DirectionArg::Neg => Direction::Negative,
                DirectionArg::Both => Direction::Both,
            };
            commands::patch1d(&lp, &opts, dir).map(|(o, _)| o)
        }
        Command::Lyap {
            problem,
            degree,
            bounds,
            mesh,
            tol,
        } => {
            let lp = load_problem(problem)?;
            let b = BoxBounds::parse(bounds, lp.series.n)?;
            let (eps1, eps2) = tol.resolve();
            commands::lyap(&lp, *degree, eps1, eps2, &b, *mesh)
        }
        Command::Pencil { problem } => commands::pencil(&load_problem(problem)?),
        Command::OracleCompare {
            problem,
            degree,
            bounds,
            mesh,
            u_bounds,
            u_mesh,
            vi_tol,
            max_sweeps,
            horizon,
            dt,
        } => {
            let lp = load_problem(problem)?;
            let b = BoxBounds::parse(bounds, lp.series.n)?;
            let settings = OracleSettings {
                u_bounds: BoxBounds::parse(u_bounds, lp.series.m)?,
                u_mesh: *u_mesh,
                tol: *vi_tol,
                max_sweeps: *max_sweeps,
                horizon: *horizon,
                dt: *dt,
            };
            commands::oracle_compare(&lp, *degree, &b, *mesh, &settings)
        }
    }
}

fn write_outputs(dir: &Path, o: &Output, args: &[String]) -> Result<()> {
    let io = |e: std::io::Error| Error::Io(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    for (name, contents) in &o.files {
        std::fs::write(dir.join(name), contents).map_err(io)?;
    }
    let mut log = format!("command: {}\nseed: none (all computations deterministic)\n", args.join(" "));
    for line in &o.log {
        log.push_str(line);
        log.push('\n');
    }
    std::fs::write(dir.join("run.log"), log).map_err(io)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("HJB_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // usage errors get their own code, away from the error classes
            return ExitCode::from(if e.use_stderr() { 64 } else { 0 });
        }
    };
    let args: Vec<String> = std::env::args().collect();
    let result = run(&cli).and_then(|o| {
        if let Some(dir) = &cli.out {
            write_outputs(dir, &o, &args)?;
            info!("wrote {} files to {}", o.files.len() + 1, dir.display());
        }
        Ok(o)
    });
    match result {
        Ok(o) => {
            print!("{}", o.stdout);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
