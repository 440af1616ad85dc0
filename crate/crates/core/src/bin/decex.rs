//! Command-line front end of the experiment harness.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use deceptive_bandits::agent::{run_episode_with, TraceWriter};
use deceptive_bandits::experiments::{
    run_experiment, write_output, ExperimentConfig, ExperimentKind, ExperimentOutput, Preset,
};
use deceptive_bandits::{Budget, Error, Result};

#[derive(Parser)]
#[command(name = "decex", version, about = "Deceptive exploration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Budget sweeps and asymmetry runs of the top-two agent (fig2, fig3).
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write per-step traces of the first instance and budget.
        #[arg(long, value_name = "PATH")]
        trace: Option<PathBuf>,
    },
    /// Pull rate under round-robin boosting (fig1), or the decaying-success process.
    Rate {
        #[command(flatten)]
        common: Common,
        /// Simulate the decaying-success process instead of the agent.
        #[arg(long)]
        decay: bool,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long, default_value_t = 1.0)]
        m0: f64,
    },
    /// Convergence of the empirical boosting allocation (fig4).
    Gamma {
        #[command(flatten)]
        common: Common,
    },
    /// Optimal boosting allocation of each configured instance.
    Allocate {
        #[command(flatten)]
        common: Common,
    },
    /// Exact and approximate boosted probability against the reference probability.
    BoostCurve {
        #[command(flatten)]
        common: Common,
        /// KL budget; repeatable, `unconstrained` allowed.
        #[arg(long = "epsilon", value_name = "EPS")]
        epsilons: Vec<Budget>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "NAME")]
    preset: Option<Preset>,
    #[arg(long, value_name = "N")]
    seeds: Option<u64>,
    #[arg(long, value_name = "T")]
    horizon: Option<u64>,
    /// Output CSV; standard output when absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

impl Common {
    fn load(&self, fallback: Preset) -> Result<ExperimentConfig> {
        let mut config = match (&self.config, self.preset) {
            (Some(path), _) => ExperimentConfig::from_path(path)?,
            (None, Some(p)) => p.config(),
            (None, None) => fallback.config(),
        };
        if let Some(n) = self.seeds {
            config.seeds = n;
        }
        if let Some(t) = self.horizon {
            config.horizon = t;
        }
        if let Some(n) = self.threads {
            config.threads = Some(n);
        }
        if self.out.is_some() {
            config.output_path = self.out.clone();
        }
        Ok(config)
    }
}

fn expect_kind(config: &ExperimentConfig, allowed: &[ExperimentKind], command: &str) -> Result<()> {
    if allowed.contains(&config.kind) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{command} cannot run a {:?} experiment",
            config.kind
        )))
    }
}

fn execute(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let output = run_experiment(config)?;
    if config.output_path.is_none() {
        let stdout = io::stdout();
        write_output(&output, stdout.lock())?;
    }
    for warning in output.warnings() {
        eprintln!("warning: {warning}");
    }
    for audit in output.audits() {
        eprintln!(
            "kl audit {}: {} steps, max excess {:e}, zero-budget mismatches {}",
            if audit.run.is_empty() { "run" } else { &audit.run },
            audit.steps,
            audit.max_excess,
            audit.zero_budget_mismatches
        );
    }
    Ok(output)
}

fn write_traces(config: &ExperimentConfig, path: &PathBuf) -> Result<()> {
    let named = &config.instances[0];
    let agent = config.agent_config(config.epsilons[0]);
    let file = File::create(path)
        .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut writer = TraceWriter::new(BufWriter::new(file), named.instance.num_arms())?;
    for i in 0..config.seeds {
        let seed = config.base_seed + i;
        let mut failure = None;
        run_episode_with(&named.instance, &agent, seed, |state, record| {
            if failure.is_none() {
                if let Err(e) = writer.write(seed, state, record) {
                    failure = Some(e);
                }
            }
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
    }
    writer.finish()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, trace } => {
            let config = common.load(Preset::Fig2)?;
            expect_kind(
                &config,
                &[ExperimentKind::EpsSweep, ExperimentKind::Asymmetry],
                "simulate",
            )?;
            execute(&config)?;
            if let Some(path) = trace {
                write_traces(&config, &path)?;
            }
        }
        Command::Rate {
            common,
            decay,
            c,
            m0,
        } => {
            let mut config = common.load(Preset::Fig1)?;
            if decay {
                config.kind = ExperimentKind::Decay;
                config.decay.c = c;
                config.decay.m0 = m0;
            }
            expect_kind(&config, &[ExperimentKind::Rate, ExperimentKind::Decay], "rate")?;
            execute(&config)?;
        }
        Command::Gamma { common } => {
            let config = common.load(Preset::Fig4)?;
            expect_kind(&config, &[ExperimentKind::GammaConvergence], "gamma")?;
            execute(&config)?;
        }
        Command::Allocate { common } => {
            let mut config = common.load(Preset::Fig4)?;
            config.kind = ExperimentKind::Allocate;
            execute(&config)?;
        }
        Command::BoostCurve { common, epsilons } => {
            let mut config = common.load(Preset::Fig1)?;
            config.kind = ExperimentKind::BoostCurve;
            if !epsilons.is_empty() {
                config.epsilons = epsilons;
            }
            execute(&config)?;
        }
    }
    io::stdout().flush()?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
