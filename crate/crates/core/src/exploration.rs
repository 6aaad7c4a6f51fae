//! Round-robin exploration with attack-filtered sample counting and one-bit
//! done synchronization.
//!
//! In slot `s` player `k` pulls arm `(k + s) mod M` (0-based; with 1-based
//! labels this is `((k + s - 2) mod M) + 1`). Since the offsets are distinct,
//! players never collide during exploration and a zero reward can only come
//! from an attack, so zeros are discarded. A player that has collected the
//! epoch's quota on its arm broadcasts a single `1` bit and keeps pulling the
//! same arm until every player's bit has arrived; then all players move to
//! the next slot together.
//!
//! Sample counts and sums persist across epochs, so the estimate after epoch
//! `i` averages every nonzero sample gathered in epochs `1..=i`.

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::adversary::{Phase, PhaseTag};
use crate::comms::{BitBus, CommPhase, CommsError};
use crate::env::{Environment, StepObserver};
use crate::model::ActionProfile;

/// A single slot aborts after this many steps.
pub const SLOT_STEP_LIMIT: u64 = 1_000_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExplorationError {
    #[error("exploration slot {slot} of epoch {epoch} exceeded {SLOT_STEP_LIMIT} steps")]
    SlotTimeout { epoch: u32, slot: usize },
    #[error(transparent)]
    Comms(#[from] CommsError),
}

/// `K x M` matrix of estimated means `mu_hat_k(m, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimates {
    rows: Vec<Vec<f64>>,
}

impl Serialize for Estimates {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.rows.serialize(s)
    }
}

impl Estimates {
    pub fn zeros(players: usize, arms: usize) -> Self {
        Estimates {
            rows: vec![vec![0.0; arms]; players],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        Estimates { rows }
    }

    #[inline]
    pub fn get(&self, player: usize, arm: usize) -> f64 {
        self.rows[player][arm]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn players(&self) -> usize {
        self.rows.len()
    }

    pub fn arms(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// `max_{k,m} |mu_hat_k(m) - mu_k(m)|`.
    pub fn max_abs_error(&self, means: &[Vec<f64>]) -> f64 {
        self.rows
            .iter()
            .zip(means)
            .flat_map(|(est, mu)| est.iter().zip(mu).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    }
}

/// Arm pulled by `player` in exploration slot `slot` (all 0-based).
#[inline]
pub fn exploration_arm(player: usize, slot: usize, arms: usize) -> usize {
    (player + slot) % arms
}

/// One player's exploration bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Explorer {
    pub player: usize,
    pub slot: usize,
    /// Nonzero samples per arm, over all epochs.
    pub counts: Vec<u64>,
    pub sums: Vec<f64>,
    /// Nonzero samples recorded in the current slot.
    pub slot_count: u64,
    pub done_sent: bool,
    pub done_bits_seen: Vec<bool>,
}

impl Explorer {
    pub fn new(player: usize, players: usize, arms: usize) -> Self {
        Explorer {
            player,
            slot: 0,
            counts: vec![0; arms],
            sums: vec![0.0; arms],
            slot_count: 0,
            done_sent: false,
            done_bits_seen: vec![false; players],
        }
    }

    pub fn current_arm(&self) -> usize {
        exploration_arm(self.player, self.slot, self.counts.len())
    }

    fn reset_slot(&mut self, slot: usize) {
        self.slot = slot;
        self.slot_count = 0;
        self.done_sent = false;
        self.done_bits_seen.iter_mut().for_each(|b| *b = false);
    }
}

/// Records one observation on the explorer's current arm and reports
/// whether the done bit should be sent now.
///
/// Zero rewards are discarded. Samples arriving after the done bit are kept
/// when `count_while_waiting` is set and dropped otherwise.
pub fn exploration_step(
    explorer: &mut Explorer,
    reward: f64,
    required: u64,
    count_while_waiting: bool,
) -> bool {
    if reward <= 0.0 || (explorer.done_sent && !count_while_waiting) {
        return false;
    }
    let arm = explorer.current_arm();
    explorer.counts[arm] += 1;
    explorer.sums[arm] += reward;
    explorer.slot_count += 1;
    if !explorer.done_sent && explorer.slot_count >= required {
        explorer.done_sent = true;
        return true;
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotAdvance {
    /// Some done bit is still missing.
    NotReady,
    Advanced { slot: usize },
    PhaseComplete,
}

/// All players' exploration state for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationState {
    pub explorers: Vec<Explorer>,
    pub arms: usize,
    pub count_while_waiting: bool,
    pub complete: bool,
}

impl ExplorationState {
    pub fn new(players: usize, arms: usize, count_while_waiting: bool) -> Self {
        ExplorationState {
            explorers: (0..players).map(|k| Explorer::new(k, players, arms)).collect(),
            arms,
            count_while_waiting,
            complete: false,
        }
    }

    /// Rewinds to slot 0 for a new epoch; accumulated samples are kept.
    pub fn begin_epoch(&mut self) {
        self.complete = false;
        self.explorers.iter_mut().for_each(|e| e.reset_slot(0));
    }

    pub fn profile(&self) -> ActionProfile {
        ActionProfile(self.explorers.iter().map(Explorer::current_arm).collect())
    }

    pub fn slot(&self) -> usize {
        self.explorers.first().map_or(0, |e| e.slot)
    }

    /// Delivers player `sender`'s done bit to everyone.
    pub fn deliver_done(&mut self, sender: usize) {
        for e in &mut self.explorers {
            e.done_bits_seen[sender] = true;
        }
    }
}

/// Moves every player to the next slot once all done bits are in.
pub fn advance_slot(state: &mut ExplorationState) -> SlotAdvance {
    if state.complete {
        return SlotAdvance::PhaseComplete;
    }
    if !state
        .explorers
        .iter()
        .all(|e| e.done_bits_seen.iter().all(|&b| b))
    {
        return SlotAdvance::NotReady;
    }
    let next = state.slot() + 1;
    if next == state.arms {
        state.complete = true;
        return SlotAdvance::PhaseComplete;
    }
    state.explorers.iter_mut().for_each(|e| e.reset_slot(next));
    SlotAdvance::Advanced { slot: next }
}

/// `mu_hat_k(m, 1) = sum / count` over every nonzero sample so far.
pub fn finalize_estimates(state: &ExplorationState) -> Estimates {
    Estimates::from_rows(
        state
            .explorers
            .iter()
            .map(|e| {
                e.sums
                    .iter()
                    .zip(&e.counts)
                    .map(|(&s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
                    .collect()
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplorationReport {
    pub epoch: u32,
    pub required: u64,
    pub steps: u64,
    pub slot_lengths: Vec<u64>,
    /// False when the horizon cut the phase short.
    pub completed: bool,
}

/// Runs the exploration phase of `epoch` to completion (or to the horizon).
pub fn run_exploration_phase(
    state: &mut ExplorationState,
    epoch: u32,
    required: u64,
    env: &mut Environment,
    bus: &mut BitBus,
    observer: &mut dyn StepObserver,
) -> Result<ExplorationReport, ExplorationError> {
    state.begin_epoch();
    let tag = PhaseTag::new(Phase::Exploration, epoch);
    let mut report = ExplorationReport {
        epoch,
        required,
        steps: 0,
        slot_lengths: Vec::with_capacity(state.arms),
        completed: false,
    };
    let mut slot_steps = 0u64;
    while !env.exhausted() {
        slot_steps += 1;
        if slot_steps > SLOT_STEP_LIMIT {
            return Err(ExplorationError::SlotTimeout {
                epoch,
                slot: state.slot() + 1,
            });
        }
        let profile = state.profile();
        let outcome = env.step(&profile, tag, observer);
        report.steps += 1;
        for k in 0..state.explorers.len() {
            let cww = state.count_while_waiting;
            if exploration_step(&mut state.explorers[k], outcome.rewards[k], required, cww) {
                bus.broadcast_bit(k, true, CommPhase::Exploration)?;
                state.deliver_done(k);
            }
        }
        if bus.round_complete() {
            bus.collect_round()?;
            report.slot_lengths.push(slot_steps);
            slot_steps = 0;
            match advance_slot(state) {
                SlotAdvance::PhaseComplete => {
                    report.completed = true;
                    return Ok(report);
                }
                SlotAdvance::Advanced { .. } => {}
                SlotAdvance::NotReady => unreachable!("every done bit was delivered"),
            }
        }
    }
    Ok(report)
}

/// Upper bound on the probability that some epoch in `ceil(l/2)..=l` leaves
/// a given (player, arm) estimate at least `margin` away from its mean:
///
/// `exp(-(T0 m^2 / 2) (l/4)^delta l) / (1 - exp(-T0 m^2 (l/4)^delta))`.
///
/// The bound exceeds one for small `T0 m^2`.
pub fn exploration_tail_bound(t0: u64, margin: f64, delta_exp: f64, epoch: u32) -> f64 {
    let l = f64::from(epoch);
    let rate = t0 as f64 * margin * margin * (l / 4.0).powf(delta_exp);
    (-(rate / 2.0) * l).exp() / (1.0 - (-rate).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::AdversarySpec;
    use crate::model::{RewardModel, SystemConfig};

    #[test]
    fn arm_mapping_examples() {
        // 1-based (k=1, slot=1) -> 1 and (k=1, slot=3) -> 3 with M = 3.
        assert_eq!(exploration_arm(0, 0, 3) + 1, 1);
        assert_eq!(exploration_arm(0, 2, 3) + 1, 3);
        let slot2: Vec<usize> = (0..3).map(|k| exploration_arm(k, 1, 3) + 1).collect();
        assert_eq!(slot2, vec![2, 3, 1]);
    }

    #[test]
    fn arms_are_distinct_for_every_slot() {
        for arms in 1..=8 {
            for players in 1..=arms {
                for slot in 0..arms {
                    let mut seen = vec![false; arms];
                    for k in 0..players {
                        let a = exploration_arm(k, slot, arms);
                        assert!(!seen[a]);
                        seen[a] = true;
                    }
                }
            }
        }
    }

    fn explorer_with_count(count: u64) -> Explorer {
        let mut e = Explorer::new(0, 3, 3);
        e.counts[0] = count;
        e.sums[0] = 0.7 * count as f64;
        e.slot_count = count;
        e
    }

    #[test]
    fn quota_reached_emits_once() {
        let mut e = explorer_with_count(4);
        assert!(exploration_step(&mut e, 0.7, 5, true));
        assert_eq!(e.counts[0], 5);
        assert!(!exploration_step(&mut e, 0.7, 5, true));
        // still accumulating while waiting
        assert_eq!(e.counts[0], 6);
    }

    #[test]
    fn zero_reward_is_discarded() {
        let mut e = explorer_with_count(4);
        assert!(!exploration_step(&mut e, 0.0, 5, true));
        assert_eq!(e.counts[0], 4);
        assert_eq!(e.slot_count, 4);
    }

    #[test]
    fn discard_variant_ignores_waiting_samples() {
        let mut e = explorer_with_count(4);
        assert!(exploration_step(&mut e, 0.7, 5, false));
        assert!(!exploration_step(&mut e, 0.7, 5, false));
        assert_eq!(e.counts[0], 5);
    }

    #[test]
    fn slot_advance_needs_every_bit() {
        let mut s = ExplorationState::new(3, 3, true);
        s.deliver_done(0);
        s.deliver_done(2);
        assert_eq!(advance_slot(&mut s), SlotAdvance::NotReady);
        s.deliver_done(1);
        assert_eq!(advance_slot(&mut s), SlotAdvance::Advanced { slot: 1 });
        assert!(s.explorers.iter().all(|e| e.slot == 1 && !e.done_sent));
        for slot in 1..3 {
            (0..3).for_each(|k| s.deliver_done(k));
            let r = advance_slot(&mut s);
            if slot == 2 {
                assert_eq!(r, SlotAdvance::PhaseComplete);
            }
        }
        assert!(s.complete);
    }

    #[test]
    fn estimates_average_nonzero_samples() {
        let mut s = ExplorationState::new(1, 1, true);
        for r in [0.5, 0.0, 0.7] {
            exploration_step(&mut s.explorers[0], r, 10, true);
        }
        assert!((finalize_estimates(&s).get(0, 0) - 0.6).abs() < 1e-15);
    }

    fn deterministic_config() -> SystemConfig {
        SystemConfig {
            reward_model: RewardModel::Deterministic,
            t0: 25,
            ..SystemConfig::reference()
        }
    }

    #[test]
    fn attack_free_phase_takes_exactly_m_times_quota() {
        let c = deterministic_config();
        let mut env = Environment::new(&c, AdversarySpec::None, 1, None);
        let mut bus = BitBus::new(3);
        let mut s = ExplorationState::new(3, 3, true);
        let report = run_exploration_phase(&mut s, 1, 25, &mut env, &mut bus, &mut ()).unwrap();
        assert!(report.completed);
        assert_eq!(report.steps, 75);
        assert_eq!(report.slot_lengths, vec![25, 25, 25]);
        assert!(finalize_estimates(&s).max_abs_error(&c.means) < 1e-12);
        assert!(bus.budget_report().per_player.iter().all(|p| p.exploration == 3));
    }

    #[test]
    fn attacked_phase_length_is_bounded_by_attacks_and_waiting() {
        let c = deterministic_config();
        let mut env = Environment::new(&c, AdversarySpec::iid_single_arm_all_phases(0.4), 9, None);
        let mut bus = BitBus::new(3);
        let mut s = ExplorationState::new(3, 3, true);
        let mut attacked_steps = 0u64;
        let mut obs = |_: u64, _: PhaseTag, _: &ActionProfile, o: &crate::model::StepOutcome| {
            attacked_steps += o.attacked_any as u64;
        };
        let report = run_exploration_phase(&mut s, 1, 25, &mut env, &mut bus, &mut obs).unwrap();
        assert!(report.steps >= 75);
        // A single-arm attack delays at most one player per step.
        assert!(report.steps <= 75 + attacked_steps, "{} > 75 + {attacked_steps}", report.steps);
        // Deterministic rewards: estimates exact despite attacks.
        assert!(finalize_estimates(&s).max_abs_error(&c.means) < 1e-12);
        // Every arm has at least the quota.
        assert!(s.explorers.iter().all(|e| e.counts.iter().all(|&n| n >= 25)));
    }

    #[test]
    fn samples_persist_across_epochs() {
        let c = deterministic_config();
        let mut env = Environment::new(&c, AdversarySpec::None, 1, None);
        let mut bus = BitBus::new(3);
        let mut s = ExplorationState::new(3, 3, true);
        run_exploration_phase(&mut s, 1, 25, &mut env, &mut bus, &mut ()).unwrap();
        run_exploration_phase(&mut s, 2, 25, &mut env, &mut bus, &mut ()).unwrap();
        assert!(s.explorers.iter().all(|e| e.counts.iter().all(|&n| n == 50)));
    }

    #[test]
    fn horizon_cuts_phase() {
        let c = deterministic_config();
        let mut env = Environment::new(&c, AdversarySpec::None, 1, Some(30));
        let mut bus = BitBus::new(3);
        let mut s = ExplorationState::new(3, 3, true);
        let report = run_exploration_phase(&mut s, 1, 25, &mut env, &mut bus, &mut ()).unwrap();
        assert!(!report.completed);
        assert_eq!(report.steps, 30);
    }

    #[test]
    fn tail_bound_values() {
        // delta = 0, l = 1: exp(-T0 m^2 / 2) / (1 - exp(-T0 m^2)).
        let b = exploration_tail_bound(200, 1.0 / 30.0, 0.0, 1);
        let r: f64 = 200.0 / 900.0;
        assert!((b - (-r / 2.0).exp() / (1.0 - (-r).exp())).abs() < 1e-12);
        assert!(b > 1.0);
        assert!(exploration_tail_bound(200_000, 1.0 / 30.0, 0.0, 4) < 1e-10);
    }
}
