use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use mpmab::adversary::AdversarySpec;
use mpmab::harness::replicate::replicate_with_seeds;
use mpmab::harness::{figure1_spec, parse_spec, run_replications, write_outputs, ExperimentSpec, Scale};
use mpmab::matching::SyncSnapshot;
use mpmab::metrics::optimal_matching;
use mpmab::oracle::{fixture_means, oracle_check, OracleCheckConfig};

#[derive(Parser)]
#[command(name = "mpmab", version, about = "Multi-player bandits under adversarial attacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Snapshot {
    PreUpdate,
    PostUpdate,
}

impl From<Snapshot> for SyncSnapshot {
    fn from(s: Snapshot) -> Self {
        match s {
            Snapshot::PreUpdate => SyncSnapshot::PreUpdate,
            Snapshot::PostUpdate => SyncSnapshot::PostUpdate,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one replication of a spec.
    Run {
        spec: PathBuf,
        /// Defaults to `base_seed + 1`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Stop after this many steps.
        #[arg(long)]
        horizon: Option<u64>,
    },
    /// Run all replications of a spec in parallel.
    Replicate {
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        horizon: Option<u64>,
    },
    /// Reproduce the three-player regret experiment.
    Figure1 {
        #[arg(long, value_enum, default_value = "reduced")]
        scale: Scale,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Disable the adversary.
        #[arg(long)]
        no_adversary: bool,
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Exact-chain checks on a tiny instance (the two-player fixture by default).
    OracleCheck {
        /// Take means, kappa, beta, snapshot and adversary from this spec.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum)]
        snapshot: Option<Snapshot>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a spec.
    Validate { spec: PathBuf },
}

fn out_dir(cli: Option<PathBuf>, spec: &ExperimentSpec) -> PathBuf {
    cli.or_else(|| spec.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

fn load(path: &Path) -> Result<ExperimentSpec> {
    parse_spec(path).with_context(|| format!("loading {}", path.display()))
}

fn report(dir: &Path, summary: &mpmab::harness::Summary) {
    eprintln!(
        "{} replication(s), final regret {:.3} ± {:.3}; wrote {}",
        summary.replications,
        summary.final_regret_mean,
        summary.final_regret_std,
        dir.display()
    );
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { spec, seed, out, horizon } => {
            let mut spec = load(&spec)?;
            spec.horizon = horizon.or(spec.horizon);
            let seed = seed.unwrap_or(spec.system.base_seed.wrapping_add(1));
            let outcome = replicate_with_seeds(&spec, &[seed])?;
            let dir = out_dir(out, &spec);
            write_outputs(&dir, &outcome)?;
            report(&dir, &outcome.summary);
        }
        Command::Replicate { spec, out, replications, workers, horizon } => {
            let mut spec = load(&spec)?;
            spec.replications = replications.unwrap_or(spec.replications);
            spec.workers = workers.or(spec.workers);
            spec.horizon = horizon.or(spec.horizon);
            let spec = spec.validate()?;
            let outcome = run_replications(&spec)?;
            let dir = out_dir(out, &spec);
            write_outputs(&dir, &outcome)?;
            report(&dir, &outcome.summary);
        }
        Command::Figure1 { scale, out, no_adversary, replications } => {
            let mut spec = figure1_spec(scale);
            if no_adversary {
                spec.adversary = AdversarySpec::None;
            }
            spec.replications = replications.unwrap_or(spec.replications);
            let spec = spec.validate()?;
            let outcome = run_replications(&spec)?;
            let dir = out.unwrap_or_else(|| PathBuf::from(format!("out/figure1_{scale:?}").to_lowercase()));
            write_outputs(&dir, &outcome)?;
            report(&dir, &outcome.summary);
        }
        Command::OracleCheck { spec, snapshot, out } => {
            let mut config = OracleCheckConfig::default();
            if let Some(path) = spec {
                let s = load(&path)?;
                config.means = s.system.means;
                config.kappa = s.system.kappa;
                config.beta = s.system.beta;
                config.sync_snapshot = s.sync_snapshot;
                if !matches!(s.adversary, AdversarySpec::None) {
                    config.adversary = s.adversary;
                }
            } else {
                config.means = fixture_means();
            }
            if let Some(s) = snapshot {
                config.sync_snapshot = s.into();
            }
            let report = oracle_check(&config)?;
            let json = serde_json::to_string_pretty(&report)? + "\n";
            match out {
                Some(path) => std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{json}"),
            }
        }
        Command::Validate { spec } => {
            let s = load(&spec)?;
            let m = optimal_matching(&s.system.means)?;
            println!(
                "valid: K = {}, M = {}, {} epochs, {} replication(s), a* = {:?}, Delta = {}",
                s.system.players,
                s.system.arms,
                s.system.epochs,
                s.replications,
                m.a_star.one_based(),
                m.delta
            );
        }
    }
    Ok(())
}
