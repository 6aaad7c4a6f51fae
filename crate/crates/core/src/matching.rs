//! Matching-phase dynamics: payoff-based action selection, attack-robust
//! state updates and one-bit mood synchronization.
//!
//! Each player carries `Z = [baseline action, baseline utility, mood]`. One
//! round is:
//!
//! 1. action: a content player repeats its baseline with probability
//!    `1 - eps^kappa` and otherwise picks one of the other `M - 1` arms
//!    uniformly; a discontent player picks uniformly from all `M` arms;
//! 2. utility: `mu_hat_k(a_k)` if the realized reward is positive, else 0;
//! 3. state update: a content player that played its baseline keeps its
//!    state whatever the utility was; otherwise the new state is
//!    `[a_k, u_k, C]` with probability `eps^(1 - u_k)` and `[a_k, u_k, D]`
//!    otherwise;
//! 4. mood sync: every player broadcasts its mood bit; a player whose new
//!    mood is content stays content if all bits are content and otherwise
//!    stays content only with probability `eps^beta`. Discontent stays
//!    discontent.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{Phase, PhaseTag};
use crate::comms::{BitBus, CommPhase, CommsError};
use crate::env::{Environment, StepObserver};
use crate::exploration::Estimates;
use crate::model::{ActionProfile, SystemConfig};
use crate::rng::SimRng;

/// Utilities are capped here so that `eps^(1 - u)` stays below one.
pub const UTILITY_CAP: f64 = 1.0 - 1e-6;

#[inline]
pub fn clamp_utility(x: f64) -> f64 {
    x.clamp(0.0, UTILITY_CAP)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mood {
    Content,
    Discontent,
}

impl Mood {
    pub fn is_content(self) -> bool {
        self == Mood::Content
    }

    /// The broadcast bit: 1 for content.
    pub fn bit(self) -> bool {
        self.is_content()
    }
}

impl fmt::Display for Mood {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mood::Content => "C",
            Mood::Discontent => "D",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlayerMatchState {
    pub baseline_action: usize,
    pub baseline_utility: f64,
    pub mood: Mood,
}

impl PlayerMatchState {
    pub fn new(baseline_action: usize, baseline_utility: f64, mood: Mood) -> Self {
        PlayerMatchState {
            baseline_action,
            baseline_utility,
            mood,
        }
    }

    /// Uniform baseline, zero utility, discontent.
    pub fn initial<R: Rng + ?Sized>(arms: usize, rng: &mut R) -> Self {
        PlayerMatchState::new(rng.random_range(0..arms), 0.0, Mood::Discontent)
    }
}

/// Which moods the synchronization round broadcasts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncSnapshot {
    /// Moods in force before this round's state update.
    PreUpdate,
    /// Moods produced by this round's state update.
    #[default]
    PostUpdate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchParams {
    pub arms: usize,
    pub epsilon: f64,
    pub kappa: f64,
    pub beta: f64,
    /// Rounds in the phase.
    pub tau: u64,
    pub sync_snapshot: SyncSnapshot,
}

impl MatchParams {
    pub fn for_epoch(config: &SystemConfig, epoch: u32, sync_snapshot: SyncSnapshot) -> Self {
        MatchParams {
            arms: config.arms,
            epsilon: config.epsilon,
            kappa: config.kappa,
            beta: config.beta,
            tau: config.matching_length(epoch),
            sync_snapshot,
        }
    }

    /// Probability that a content player deviates from its baseline.
    pub fn explore_probability(&self) -> f64 {
        if self.arms == 1 {
            0.0
        } else {
            self.epsilon.powf(self.kappa)
        }
    }

    /// Probability of turning content after receiving utility `u`.
    pub fn content_probability(&self, u: f64) -> f64 {
        self.epsilon.powf(1.0 - u)
    }

    /// Probability that a content player survives a sync with a discontent bit.
    pub fn sync_survival_probability(&self) -> f64 {
        self.epsilon.powf(self.beta)
    }
}

pub fn choose_action<R: Rng + ?Sized>(state: &PlayerMatchState, params: &MatchParams, rng: &mut R) -> usize {
    match state.mood {
        Mood::Discontent => rng.random_range(0..params.arms),
        Mood::Content => {
            if rng.random::<f64>() >= params.explore_probability() {
                state.baseline_action
            } else {
                let other = rng.random_range(0..params.arms - 1);
                if other >= state.baseline_action {
                    other + 1
                } else {
                    other
                }
            }
        }
    }
}

/// Utility from the observed reward alone.
#[inline]
pub fn utility(reward: f64, estimates: &Estimates, player: usize, arm: usize) -> f64 {
    if reward > 0.0 {
        clamp_utility(estimates.get(player, arm))
    } else {
        0.0
    }
}

pub fn update_state<R: Rng + ?Sized>(
    state: &PlayerMatchState,
    action: usize,
    u: f64,
    params: &MatchParams,
    rng: &mut R,
) -> PlayerMatchState {
    if state.mood.is_content() && action == state.baseline_action {
        return *state;
    }
    let mood = if rng.random::<f64>() < params.content_probability(u) {
        Mood::Content
    } else {
        Mood::Discontent
    };
    PlayerMatchState::new(action, u, mood)
}

/// Applies the mood-sync rule given the broadcast bits (1 = content).
pub fn synchronize_mood<R: Rng + ?Sized>(
    next: PlayerMatchState,
    observed: &[bool],
    params: &MatchParams,
    rng: &mut R,
) -> PlayerMatchState {
    if next.mood == Mood::Discontent || observed.iter().all(|&b| b) {
        return next;
    }
    let mood = if rng.random::<f64>() < params.sync_survival_probability() {
        Mood::Content
    } else {
        Mood::Discontent
    };
    PlayerMatchState { mood, ..next }
}

/// `W^l(k, m)`: rounds in which player `k` played `m` while content.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContentCounters {
    pub epoch: u32,
    pub arms: usize,
    counts: Vec<u64>,
}

impl ContentCounters {
    pub fn new(epoch: u32, players: usize, arms: usize) -> Self {
        ContentCounters {
            epoch,
            arms,
            counts: vec![0; players * arms],
        }
    }

    #[inline]
    pub fn get(&self, player: usize, arm: usize) -> u64 {
        self.counts[player * self.arms + arm]
    }

    fn bump(&mut self, player: usize, arm: usize) {
        self.counts[player * self.arms + arm] += 1;
    }

    pub fn player_total(&self, player: usize) -> u64 {
        self.counts[player * self.arms..(player + 1) * self.arms].iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub epoch: u32,
    pub t: u64,
    /// 1-based.
    pub player: usize,
    /// 1-based.
    pub action: usize,
    pub utility: f64,
    pub mood: Mood,
    /// 1-based.
    pub baseline_action: usize,
}

/// A matching phase in progress; one [`MatchingSession::round`] per step.
pub struct MatchingSession<'a> {
    params: MatchParams,
    estimates: &'a Estimates,
    epoch: u32,
    states: Vec<PlayerMatchState>,
    counters: ContentCounters,
    rounds: u64,
}

impl<'a> MatchingSession<'a> {
    /// Initializes every player uniformly at random, discontent.
    pub fn new(params: MatchParams, estimates: &'a Estimates, epoch: u32, rngs: &mut [SimRng]) -> Self {
        let states = rngs
            .iter_mut()
            .map(|r| PlayerMatchState::initial(params.arms, r))
            .collect();
        Self::with_states(params, estimates, epoch, states)
    }

    pub fn with_states(
        params: MatchParams,
        estimates: &'a Estimates,
        epoch: u32,
        states: Vec<PlayerMatchState>,
    ) -> Self {
        let players = states.len();
        MatchingSession {
            params,
            estimates,
            epoch,
            states,
            counters: ContentCounters::new(epoch, players, params.arms),
            rounds: 0,
        }
    }

    pub fn states(&self) -> &[PlayerMatchState] {
        &self.states
    }

    pub fn counters(&self) -> &ContentCounters {
        &self.counters
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    /// Plays one round and returns the joint profile that was played.
    pub fn round(
        &mut self,
        env: &mut Environment,
        bus: &mut BitBus,
        rngs: &mut [SimRng],
        observer: &mut dyn StepObserver,
        trace: Option<&mut Vec<TraceRow>>,
    ) -> Result<ActionProfile, CommsError> {
        let p = &self.params;
        let actions: Vec<usize> = self
            .states
            .iter()
            .zip(rngs.iter_mut())
            .map(|(s, r)| choose_action(s, p, r))
            .collect();
        for (k, (s, &a)) in self.states.iter().zip(&actions).enumerate() {
            if s.mood.is_content() {
                self.counters.bump(k, a);
            }
        }
        let profile = ActionProfile(actions);
        let outcome = env.step(&profile, PhaseTag::new(Phase::Matching, self.epoch), observer);

        let utilities: Vec<f64> = profile
            .0
            .iter()
            .enumerate()
            .map(|(k, &a)| utility(outcome.rewards[k], self.estimates, k, a))
            .collect();
        let updated: Vec<PlayerMatchState> = self
            .states
            .iter()
            .zip(rngs.iter_mut())
            .enumerate()
            .map(|(k, (s, r))| update_state(s, profile.0[k], utilities[k], p, r))
            .collect();

        let snapshot = match p.sync_snapshot {
            SyncSnapshot::PreUpdate => &self.states,
            SyncSnapshot::PostUpdate => &updated,
        };
        for (k, s) in snapshot.iter().enumerate() {
            bus.broadcast_bit(k, s.mood.bit(), CommPhase::Matching)?;
        }
        let bits = bus.collect_round()?;

        self.states = updated
            .into_iter()
            .zip(rngs.iter_mut())
            .map(|(s, r)| synchronize_mood(s, &bits, p, r))
            .collect();
        self.rounds += 1;

        if let Some(rows) = trace {
            rows.extend(self.states.iter().enumerate().map(|(k, s)| TraceRow {
                epoch: self.epoch,
                t: env.time(),
                player: k + 1,
                action: profile.0[k] + 1,
                utility: utilities[k],
                mood: s.mood,
                baseline_action: s.baseline_action + 1,
            }));
        }
        Ok(profile)
    }

    pub fn into_counters(self) -> ContentCounters {
        self.counters
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchingOutcome {
    pub counters: ContentCounters,
    pub rounds: u64,
    pub final_states: Vec<PlayerMatchState>,
}

/// Runs `params.tau` rounds (fewer if the horizon is reached).
pub fn run_matching_phase(
    estimates: &Estimates,
    params: &MatchParams,
    epoch: u32,
    env: &mut Environment,
    bus: &mut BitBus,
    rngs: &mut [SimRng],
    observer: &mut dyn StepObserver,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<MatchingOutcome, CommsError> {
    let mut session = MatchingSession::new(*params, estimates, epoch, rngs);
    while session.rounds() < params.tau && !env.exhausted() {
        session.round(env, bus, rngs, observer, trace.as_deref_mut())?;
    }
    let final_states = session.states().to_vec();
    let rounds = session.rounds();
    Ok(MatchingOutcome {
        counters: session.into_counters(),
        rounds,
        final_states,
    })
}

/// The arm player `k` plays while exploiting in `epoch`: the most frequent
/// content play over epochs `ceil(epoch/2)..=epoch` (smallest arm on ties),
/// or the best estimated arm if it was never content.
///
/// `history[i]` holds the counters of epoch `i + 1`.
pub fn exploit_action(history: &[ContentCounters], player: usize, epoch: u32, estimates: &Estimates) -> usize {
    let arms = estimates.arms();
    let first = epoch.div_ceil(2).max(1);
    let totals: Vec<u64> = (0..arms)
        .map(|m| {
            history
                .iter()
                .filter(|c| (first..=epoch).contains(&c.epoch))
                .map(|c| c.get(player, m))
                .sum()
        })
        .collect();
    if totals.iter().all(|&w| w == 0) {
        return argmax_first(&estimates.rows()[player]);
    }
    let best = *totals.iter().max().unwrap();
    totals.iter().position(|&w| w == best).unwrap()
}

fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
