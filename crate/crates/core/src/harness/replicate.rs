//! Parallel replications, aggregation and output files.

use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use rayon::prelude::*;
use serde::Serialize;

use super::run::{run_single, RunError, RunResult};
use super::spec::ExperimentSpec;
use crate::adversary::attack_marginal;
use crate::metrics::PhaseTotals;
use crate::oracle::{oracle_check, OracleCheckConfig, OracleCheckReport};

/// Overrides the worker count of every replicated experiment.
pub const WORKERS_ENV: &str = "MPMAB_WORKERS";

/// Mean and sample standard deviation of cumulative regret at each sampled
/// step, truncated to the shortest run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretSeries {
    pub t: Vec<u64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochSummary {
    pub epoch: u32,
    /// Replications that reached this epoch.
    pub runs: usize,
    pub exploration_success_rate: f64,
    pub matching_success_rate: f64,
    pub mean_steps: PhaseTotals<f64>,
    pub mean_regret: PhaseTotals<f64>,
    /// Mean per-step regret of the exploitation phase.
    pub exploitation_step_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommSummary {
    /// `[run][player]` total bits sent.
    pub per_run: Vec<Vec<u64>>,
    /// `sum_l (M + tau_l)` per run.
    pub expected_per_run: Vec<u64>,
    pub all_match: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sublinearity {
    /// Mean epoch-1 regret over mean epoch-1 steps.
    pub first_epoch_rate: f64,
    pub mean_total_steps: f64,
    pub extrapolated_final: f64,
    pub final_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    #[serde(rename = "J1")]
    pub j1: f64,
    #[serde(rename = "J2")]
    pub j2: f64,
    #[serde(rename = "Delta")]
    pub delta: f64,
    pub a_star: Vec<usize>,
    pub replications: usize,
    pub seeds: Vec<u64>,
    pub total_steps: Vec<u64>,
    pub final_cumulative_regret: Vec<f64>,
    pub final_regret_mean: f64,
    pub final_regret_std: f64,
    pub epochs: Vec<EpochSummary>,
    /// Mean steps with at least one attacked arm, per phase.
    #[serde(rename = "W_mean")]
    pub w_mean: PhaseTotals<f64>,
    #[serde(rename = "W_per_run")]
    pub w_per_run: Vec<PhaseTotals<u64>>,
    pub comm_bits: CommSummary,
    pub sublinearity: Sublinearity,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<Result<OracleCheckReport, String>>,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ReplicationOutcome {
    pub runs: Vec<RunResult>,
    pub series: RegretSeries,
    pub summary: Summary,
}

fn mean_std(xs: impl ExactSizeIterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

pub fn aggregate_series(runs: &[RunResult]) -> RegretSeries {
    let len = runs.iter().map(|r| r.ledger.series.len()).min().unwrap_or(0);
    let mut out = RegretSeries {
        t: Vec::with_capacity(len),
        mean: Vec::with_capacity(len),
        std: Vec::with_capacity(len),
    };
    for i in 0..len {
        let (m, s) = mean_std(runs.iter().map(|r| r.ledger.series[i].1).collect::<Vec<_>>().into_iter());
        out.t.push(runs[0].ledger.series[i].0);
        out.mean.push(m);
        out.std.push(s);
    }
    out
}

fn worker_count(spec: &ExperimentSpec) -> Option<usize> {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
        .or(spec.workers)
}

/// Seeds `base_seed + 1 ..= base_seed + R`.
pub fn replication_seeds(spec: &ExperimentSpec) -> Vec<u64> {
    (1..=spec.replications as u64).map(|i| spec.system.base_seed.wrapping_add(i)).collect()
}

/// Runs the given seeds in parallel; results come back in seed order.
pub fn run_seeds(spec: &ExperimentSpec, seeds: &[u64]) -> Result<Vec<RunResult>, RunError> {
    let work = || seeds.par_iter().map(|&s| run_single(spec, s)).collect::<Result<Vec<_>, _>>();
    match worker_count(spec) {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(work))
            .unwrap_or_else(|_| work()),
        None => work(),
    }
}

pub fn run_replications(spec: &ExperimentSpec) -> Result<ReplicationOutcome, RunError> {
    let seeds = replication_seeds(spec);
    replicate_with_seeds(spec, &seeds)
}

pub fn replicate_with_seeds(spec: &ExperimentSpec, seeds: &[u64]) -> Result<ReplicationOutcome, RunError> {
    let started = Instant::now();
    let runs = run_seeds(spec, seeds)?;
    let series = aggregate_series(&runs);
    let mut summary = summarize(spec, &runs);
    summary.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok(ReplicationOutcome { runs, series, summary })
}

pub fn summarize(spec: &ExperimentSpec, runs: &[RunResult]) -> Summary {
    let optimal = &runs[0].optimal;
    let finals: Vec<f64> = runs.iter().map(|r| r.ledger.cumulative_regret).collect();
    let (final_mean, final_std) = mean_std(finals.iter().copied());

    let epochs = (1..=spec.system.epochs)
        .filter_map(|epoch| {
            let records: Vec<_> = runs.iter().filter_map(|r| r.epochs.iter().find(|e| e.epoch == epoch)).collect();
            if records.is_empty() {
                return None;
            }
            let n = records.len() as f64;
            let rate = |f: &dyn Fn(&super::run::EpochRecord) -> bool| records.iter().filter(|e| f(e)).count() as f64 / n;
            let mut steps = PhaseTotals::<f64>::default();
            let mut regret = PhaseTotals::<f64>::default();
            for e in &records {
                for phase in crate::adversary::Phase::ALL {
                    *steps.get_mut(phase) += e.stats.steps.get(phase) as f64 / n;
                    *regret.get_mut(phase) += e.stats.regret.get(phase) / n;
                }
            }
            Some(EpochSummary {
                epoch,
                runs: records.len(),
                exploration_success_rate: rate(&|e| e.flags.exploration_success),
                matching_success_rate: rate(&|e| e.flags.matching_success),
                exploitation_step_regret: if steps.exploitation > 0.0 {
                    regret.exploitation / steps.exploitation
                } else {
                    0.0
                },
                mean_steps: steps,
                mean_regret: regret,
            })
        })
        .collect::<Vec<_>>();

    let w_per_run: Vec<PhaseTotals<u64>> = runs.iter().map(|r| r.ledger.attacked_steps).collect();
    let n = runs.len() as f64;
    let w_mean = PhaseTotals {
        exploration: w_per_run.iter().map(|w| w.exploration as f64).sum::<f64>() / n,
        matching: w_per_run.iter().map(|w| w.matching as f64).sum::<f64>() / n,
        exploitation: w_per_run.iter().map(|w| w.exploitation as f64).sum::<f64>() / n,
    };

    let per_run: Vec<Vec<u64>> = runs.iter().map(|r| r.comm.per_player.iter().map(|p| p.total).collect()).collect();
    let expected_per_run: Vec<u64> = runs.iter().map(|r| r.expected_bits_per_player(&spec.system)).collect();
    let all_match = runs
        .iter()
        .zip(&per_run)
        .zip(&expected_per_run)
        .filter(|((r, _), _)| r.epochs.iter().all(|e| e.complete))
        .all(|((_, bits), &want)| bits.iter().all(|&b| b == want));

    let mean_total_steps = runs.iter().map(|r| r.total_steps() as f64).sum::<f64>() / n;
    let first = epochs.first();
    let first_epoch_rate = first.map_or(0.0, |e| {
        let steps = e.mean_steps.total();
        if steps > 0.0 {
            e.mean_regret.total() / steps
        } else {
            0.0
        }
    });

    let oracle = spec.oracle_check.then(|| {
        attack_marginal(&spec.adversary, spec.system.arms)
            .map_err(|e| e.to_string())
            .and_then(|_| {
                oracle_check(&OracleCheckConfig {
                    means: spec.system.means.clone(),
                    kappa: spec.system.kappa,
                    beta: spec.system.beta,
                    sync_snapshot: spec.sync_snapshot,
                    adversary: spec.adversary.clone(),
                    ..OracleCheckConfig::default()
                })
                .map_err(|e| e.to_string())
            })
    });

    Summary {
        j1: optimal.j1,
        j2: optimal.j2,
        delta: optimal.delta,
        a_star: optimal.a_star.one_based(),
        replications: runs.len(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        total_steps: runs.iter().map(RunResult::total_steps).collect(),
        final_cumulative_regret: finals,
        final_regret_mean: final_mean,
        final_regret_std: final_std,
        epochs,
        w_mean,
        w_per_run,
        comm_bits: CommSummary {
            per_run,
            expected_per_run,
            all_match,
        },
        sublinearity: Sublinearity {
            first_epoch_rate,
            mean_total_steps,
            extrapolated_final: first_epoch_rate * mean_total_steps,
            final_mean,
        },
        oracle,
        wall_clock_seconds: 0.0,
    }
}

/// Writes `regret.csv`, `summary.json` and, when traced, `trace.csv`.
pub fn write_outputs(out_dir: &Path, outcome: &ReplicationOutcome) -> anyhow::Result<()> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let mut w = csv::Writer::from_path(out_dir.join("regret.csv"))?;
    w.write_record(["t", "mean_cum_regret", "std_cum_regret"])?;
    let s = &outcome.series;
    for i in 0..s.t.len() {
        w.write_record([s.t[i].to_string(), s.mean[i].to_string(), s.std[i].to_string()])?;
    }
    w.flush()?;

    let json = serde_json::to_string_pretty(&outcome.summary)?;
    fs::write(out_dir.join("summary.json"), json + "\n")?;

    if let Some(rows) = outcome.runs.first().and_then(|r| r.trace.as_ref()) {
        let mut w = csv::Writer::from_path(out_dir.join("trace.csv"))?;
        w.write_record(["epoch", "t", "player", "action", "utility", "mood", "baseline_action"])?;
        for r in rows {
            w.write_record([
                r.epoch.to_string(),
                r.t.to_string(),
                r.player.to_string(),
                r.action.to_string(),
                r.utility.to_string(),
                r.mood.to_string(),
                r.baseline_action.to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}
