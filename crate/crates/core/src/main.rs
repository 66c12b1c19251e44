use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::LevelFilter;

use lasalt::config::RunConfig;
use lasalt::run::{self, Setup};
use lasalt::verify::verify;
use lasalt::Error;

/// Solvers and verification harness for the stochastic Euler-Boussinesq
/// system with Lagrangian-averaged transport noise.
#[derive(Parser)]
#[command(name = "lasalt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (wall time only; results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to `<output.directory>/<verb>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Clone)]
struct Downstream {
    #[command(flatten)]
    common: Common,
    /// Expectation trajectory directory (defaults to `<output.directory>/expectation`).
    #[arg(long)]
    trajectory: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the expectation system and store the trajectory.
    Expectation(Common),
    /// Integrate one stochastic member along a stored trajectory.
    Spde {
        #[command(flatten)]
        args: Downstream,
        #[arg(long, default_value_t = 0)]
        member: u64,
    },
    /// Integrate the closed moment equations.
    Moments(Downstream),
    /// Run an ensemble and compare it with the moment equations.
    Ensemble(Downstream),
    /// Reconstruct one member along characteristics and compare.
    Characteristics {
        #[command(flatten)]
        args: Downstream,
        #[arg(long, default_value_t = 0)]
        member: u64,
    },
    /// Run the acceptance ladder.
    Verify {
        /// Run configuration; the built-in desk configuration when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for `verify_report.json`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_VERIFY: u8 = 4;

fn exit_for(e: &Error) -> u8 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

fn out_dir(cfg: &RunConfig, out: &Option<PathBuf>, verb: &str) -> PathBuf {
    out.clone().unwrap_or_else(|| cfg.output.directory.join(verb))
}

fn trajectory(setup: &Setup, args: &Downstream) -> lasalt::Result<lasalt::expectation::ExpectationTrajectory> {
    let dir = args.trajectory.clone().unwrap_or_else(|| setup.cfg.output.directory.join("expectation"));
    run::load_trajectory(setup, &dir)
}

fn load(path: &Path) -> lasalt::Result<Setup> {
    Setup::new(&RunConfig::load(path)?)
}

fn execute(cli: &Cli) -> lasalt::Result<u8> {
    match &cli.command {
        Command::Expectation(c) => {
            let setup = load(&c.config)?;
            let out = out_dir(&setup.cfg, &c.out, "expectation");
            let traj = run::cmd_expectation(&setup, &out, c.force)?;
            println!("expectation: {} snapshots to t = {} in {}", traj.len(), traj.t_end(), out.display());
            Ok(0)
        }
        Command::Spde { args, member } => {
            let setup = load(&args.common.config)?;
            let traj = trajectory(&setup, args)?;
            let out = out_dir(&setup.cfg, &args.common.out, "spde");
            let s = run::cmd_spde(&setup, &traj, *member, &out, args.common.force)?;
            println!("spde: member {member} reached t = {} in {}", s.t, out.display());
            Ok(0)
        }
        Command::Moments(args) => {
            let setup = load(&args.common.config)?;
            let traj = trajectory(&setup, args)?;
            let out = out_dir(&setup.cfg, &args.common.out, "moments");
            let m = run::cmd_moments(&setup, &traj, &out, args.common.force)?;
            println!("moments: {} states to t = {} in {}", m.states.len(), m.last().t, out.display());
            Ok(0)
        }
        Command::Ensemble(args) => {
            let setup = load(&args.common.config)?;
            let traj = trajectory(&setup, args)?;
            let out = out_dir(&setup.cfg, &args.common.out, "ensemble");
            let o = run::cmd_ensemble(&setup, &traj, &out, args.common.force)?;
            for e in &o.report.entries {
                println!(
                    "{:<8} t={:<8} err={:.4e} threshold={:.4e} {}",
                    e.quantity,
                    e.t,
                    e.rel_l2_error,
                    e.threshold,
                    if e.pass { "PASS" } else { "FAIL" }
                );
            }
            Ok(if o.report.pass { 0 } else { EXIT_VERIFY })
        }
        Command::Characteristics { args, member } => {
            let setup = load(&args.common.config)?;
            let traj = trajectory(&setup, args)?;
            let out = out_dir(&setup.cfg, &args.common.out, "characteristics");
            let r = run::cmd_characteristics(&setup, &traj, *member, &out, args.common.force)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            Ok(0)
        }
        Command::Verify { config, out, force } => {
            let cfg = match config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::desk_default(),
            };
            let report = verify(&cfg)?;
            let out = out_dir(&cfg, out, "verify");
            run::prepare_output(&out, *force)?;
            std::fs::write(out.join("verify_report.json"), report.to_json())?;
            for c in &report.criteria {
                let detail = c.detail.as_deref().map(|d| format!(" ({d})")).unwrap_or_default();
                println!("{:<5} {} {}{}", c.id, if c.pass { "PASS" } else { "FAIL" }, c.title, detail);
            }
            if report.pass {
                Ok(0)
            } else {
                eprintln!("failing criteria: {}", report.failed.join(", "));
                Ok(EXIT_VERIFY)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build_global() {
            eprintln!("error: cannot configure {k} threads: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
