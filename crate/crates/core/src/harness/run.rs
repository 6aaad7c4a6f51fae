//! One replication of the epoch policy.

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use super::spec::ExperimentSpec;
use crate::adversary::{Phase, PhaseTag};
use crate::comms::{BitBus, CommBudget, CommsError};
use crate::env::{Environment, StepObserver};
use crate::exploration::{finalize_estimates, run_exploration_phase, Estimates, ExplorationError, ExplorationReport, ExplorationState};
use crate::matching::{exploit_action, run_matching_phase, ContentCounters, MatchParams, TraceRow};
use crate::metrics::{optimal_matching, step_regret, EpochFlags, MetricsError, OptimalMatching, PhaseTotals, RegretLedger};
use crate::model::{ActionProfile, StepOutcome, SystemConfig};
use crate::rng::player_streams;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Exploration(#[from] ExplorationError),
    #[error(transparent)]
    Comms(#[from] CommsError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Steps and regret of each phase within one epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochPhaseStats {
    pub epoch: u32,
    pub steps: PhaseTotals<u64>,
    pub regret: PhaseTotals<f64>,
    pub attacked_steps: PhaseTotals<u64>,
}

impl EpochPhaseStats {
    fn new(epoch: u32) -> Self {
        EpochPhaseStats {
            epoch,
            steps: PhaseTotals::default(),
            regret: PhaseTotals::default(),
            attacked_steps: PhaseTotals::default(),
        }
    }

    pub fn total_steps(&self) -> u64 {
        self.steps.total()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub exploration: ExplorationReport,
    pub estimates: Estimates,
    pub matching_rounds: u64,
    /// 1-based arms.
    pub exploit_profile: Vec<usize>,
    pub flags: EpochFlags,
    pub stats: EpochPhaseStats,
    /// True when all three phases ran to their full length.
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub seed: u64,
    pub optimal: OptimalMatching,
    pub ledger: RegretLedger,
    pub epochs: Vec<EpochRecord>,
    pub comm: CommBudget,
    #[serde(skip)]
    pub trace: Option<Vec<TraceRow>>,
    #[serde(skip)]
    pub counters: Vec<ContentCounters>,
    pub wall_clock_seconds: f64,
}

impl RunResult {
    pub fn total_steps(&self) -> u64 {
        self.ledger.steps
    }

    /// Epochs whose three phases all ran in full.
    pub fn completed_epochs(&self) -> impl Iterator<Item = &EpochRecord> {
        self.epochs.iter().filter(|e| e.complete)
    }

    /// `sum_l (M + tau_l)` over completed epochs: the bits each player sends.
    pub fn expected_bits_per_player(&self, config: &SystemConfig) -> u64 {
        self.completed_epochs()
            .map(|e| config.arms as u64 + config.matching_length(e.epoch))
            .sum()
    }
}

struct Recorder<'a> {
    config: &'a SystemConfig,
    optimal: &'a OptimalMatching,
    ledger: RegretLedger,
    current: EpochPhaseStats,
}

impl StepObserver for Recorder<'_> {
    fn on_step(&mut self, _t: u64, tag: PhaseTag, profile: &ActionProfile, outcome: &StepOutcome) {
        let r = step_regret(self.config, self.optimal, profile, &outcome.attack);
        self.ledger.record_step(tag, r, outcome.attacked_any);
        *self.current.steps.get_mut(tag.phase) += 1;
        *self.current.regret.get_mut(tag.phase) += r;
        *self.current.attacked_steps.get_mut(tag.phase) += u64::from(outcome.attacked_any);
    }
}

/// Runs every epoch of `spec` with randomness derived from `seed`.
pub fn run_single(spec: &ExperimentSpec, seed: u64) -> Result<RunResult, RunError> {
    let started = Instant::now();
    let config = &spec.system;
    let players = config.players;
    let optimal = optimal_matching(&config.means)?;

    let mut env = Environment::new(config, spec.adversary.clone(), seed, spec.horizon);
    let mut bus = BitBus::new(players);
    let mut rngs = player_streams(seed, players);
    let mut explore = ExplorationState::new(players, config.arms, spec.count_while_waiting);
    let mut recorder = Recorder {
        config,
        optimal: &optimal,
        ledger: RegretLedger::new(spec.stride),
        current: EpochPhaseStats::new(1),
    };
    let mut trace = spec.trace.then(Vec::new);
    let mut counters: Vec<ContentCounters> = Vec::new();
    let mut epochs = Vec::new();

    for epoch in 1..=config.epochs {
        if env.exhausted() {
            break;
        }
        recorder.current = EpochPhaseStats::new(epoch);
        let exploration = run_exploration_phase(&mut explore, epoch, config.required_samples(epoch), &mut env, &mut bus, &mut recorder)?;
        let estimates = finalize_estimates(&explore);

        let params = MatchParams::for_epoch(config, epoch, spec.sync_snapshot);
        let matching_rounds = if exploration.completed {
            let out = run_matching_phase(&estimates, &params, epoch, &mut env, &mut bus, &mut rngs, &mut recorder, trace.as_mut())?;
            counters.push(out.counters);
            out.rounds
        } else {
            0
        };

        let profile = ActionProfile((0..players).map(|k| exploit_action(&counters, k, epoch, &estimates)).collect());
        let exploit_len = config.exploitation_length(epoch);
        let tag = PhaseTag::new(Phase::Exploitation, epoch);
        let mut exploited = 0;
        if matching_rounds == params.tau {
            while exploited < exploit_len && !env.exhausted() {
                env.step(&profile, tag, &mut recorder);
                exploited += 1;
            }
        }

        let flags = recorder
            .ledger
            .epoch_flags(epoch, &estimates, &config.means, optimal.delta, &profile, &optimal.a_star)
            .clone();
        epochs.push(EpochRecord {
            epoch,
            exploration: exploration.clone(),
            estimates,
            matching_rounds,
            exploit_profile: profile.one_based(),
            flags,
            stats: recorder.current.clone(),
            complete: exploration.completed && matching_rounds == params.tau && exploited == exploit_len,
        });
    }

    Ok(RunResult {
        seed,
        optimal: optimal.clone(),
        ledger: recorder.ledger,
        epochs,
        comm: bus.budget_report(),
        trace,
        counters,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}
