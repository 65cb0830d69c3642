use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fbopt::config::{ExperimentConfig, SweepAxis};
use fbopt::experiment::{cmd_certify, cmd_reproduce, cmd_simulate, cmd_sweep, cmd_train, cmd_validate};
use fbopt::{recipes, CliError};

/// Feedback optimization experiments: train perception networks, simulate, certify and sweep.
#[derive(Parser)]
#[command(name = "fbopt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train the perception or cost-surrogate network.
    Train(Common),
    /// Run the closed loop and write the trajectory and summary.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write SVG plots.
        #[arg(long)]
        plot: bool,
    },
    /// Emit the stability certificate, or refuse the gain.
    Certify(Common),
    /// Simulate once per axis value.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Defaults to the config's [sweep] section.
        #[arg(long, value_enum)]
        axis: Option<SweepAxis>,
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Check the certificate envelope over the config's [validation] grid.
    Validate(Common),
    /// Run a checked-in recipe end to end.
    Reproduce {
        /// Recipe name; `list` prints the available ones.
        recipe: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        plot: bool,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "n/a".into())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(common) => {
            let cfg = load(&common)?;
            for r in cmd_train(&cfg, &common.out)? {
                println!("{}: {} samples, sup training error {:.6e} -> {}", r.target, r.samples, r.sup_training_error, r.weights);
            }
        }
        Command::Simulate { common, plot } => {
            let cfg = load(&common)?;
            let s = cmd_simulate(&cfg, &common.out, plot)?;
            println!("steady-state error {}", fmt_opt(s.steady_state_error));
            if let Some(b) = &s.bound {
                println!("envelope holds: {} (max violation {:.3e})", b.holds, b.max_violation);
            }
        }
        Command::Certify(common) => {
            let cfg = load(&common)?;
            let r = cmd_certify(&cfg, &common.out)?;
            let c = &r.certificate;
            println!(
                "eta = {:.6e} < eta* = {:.6e}; kappa1 = {:.4}, kappa2 = {:.4}, kappa3 = {:.4}, alpha = {:.4e}",
                c.eta, c.eta_star, c.constants.kappa1, c.constants.kappa2, c.constants.kappa3, c.constants.alpha
            );
        }
        Command::Sweep { common, axis, values } => {
            let cfg = load(&common)?;
            let (axis, values) = match (axis, cfg.sweep.as_ref()) {
                (Some(a), _) => (a, values),
                (None, Some(s)) if values.is_empty() => (s.axis, s.values.clone()),
                (None, Some(s)) => (s.axis, values),
                (None, None) => return Err(CliError::Config("give --axis or a [sweep] section".into())),
            };
            let s = cmd_sweep(&cfg, axis, &values, &common.out)?;
            for c in &s.cells {
                println!("{:>12.4e}  {}  {}", c.value, fmt_opt(c.steady_state_error), c.status);
            }
        }
        Command::Validate(common) => {
            let cfg = load(&common)?;
            let s = cmd_validate(&cfg, &common.out)?;
            let held = s.runs.iter().filter(|r| r.holds).count();
            println!("envelope held on {held}/{} runs", s.runs.len());
        }
        Command::Reproduce { recipe, seed, out, plot } => {
            if recipe == "list" {
                for n in recipes::names() {
                    println!("{n}");
                }
                return Ok(());
            }
            let s = cmd_reproduce(&recipe, seed, &out, plot)?;
            println!("{} reproduced into {}", s.recipe, out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
