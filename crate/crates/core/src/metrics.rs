//! Optimal matching, regret accounting and per-epoch success events.

use serde::Serialize;
use thiserror::Error;

use crate::adversary::{Phase, PhaseTag};
use crate::exploration::Estimates;
use crate::model::{collision_counts, mean_reward, ActionProfile, AttackVector, SystemConfig, MAX_ARMS};

/// Totals closer than this are treated as ties.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("optimal matching is not unique (two assignments tie at total mean {total})")]
    NonUniqueOptimalMatching { total: f64 },
    #[error("{arms} arms exceeds the enumeration limit {limit}")]
    TooLarge { arms: usize, limit: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalMatching {
    #[serde(serialize_with = "serialize_one_based")]
    pub a_star: ActionProfile,
    pub j1: f64,
    /// Best total strictly below `j1`; zero when only one assignment exists.
    pub j2: f64,
    /// `(j1 - j2) / (2M)`.
    pub delta: f64,
}

fn serialize_one_based<S: serde::Serializer>(p: &ActionProfile, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(p.one_based())
}

impl OptimalMatching {
    /// Builds the result from the best assignment and the set of all totals.
    pub(crate) fn from_totals(
        best: Vec<usize>,
        totals: &[f64],
        arms: usize,
    ) -> Result<Self, MetricsError> {
        let j1 = totals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let at_top = totals.iter().filter(|&&t| j1 - t <= TIE_TOLERANCE).count();
        if at_top > 1 {
            return Err(MetricsError::NonUniqueOptimalMatching { total: j1 });
        }
        let j2 = totals
            .iter()
            .copied()
            .filter(|&t| j1 - t > TIE_TOLERANCE)
            .fold(f64::NEG_INFINITY, f64::max);
        let j2 = if j2.is_finite() { j2 } else { 0.0 };
        Ok(OptimalMatching {
            a_star: ActionProfile(best),
            j1,
            j2,
            delta: (j1 - j2) / (2.0 * arms as f64),
        })
    }
}

/// Exact maximizer of `sum_k mu_k(a_k, 1)` over injective player-to-arm
/// assignments, by depth-first enumeration.
pub fn optimal_matching(means: &[Vec<f64>]) -> Result<OptimalMatching, MetricsError> {
    let players = means.len();
    let arms = means.first().map_or(0, Vec::len);
    if arms > MAX_ARMS {
        return Err(MetricsError::TooLarge { arms, limit: MAX_ARMS });
    }

    struct Search<'a> {
        means: &'a [Vec<f64>],
        used: Vec<bool>,
        current: Vec<usize>,
        totals: Vec<f64>,
        best: Vec<usize>,
        best_total: f64,
    }

    impl Search<'_> {
        fn descend(&mut self, player: usize, partial: f64) {
            if player == self.means.len() {
                self.totals.push(partial);
                if partial > self.best_total {
                    self.best_total = partial;
                    self.best.clone_from(&self.current);
                }
                return;
            }
            for arm in 0..self.used.len() {
                if self.used[arm] {
                    continue;
                }
                self.used[arm] = true;
                self.current.push(arm);
                self.descend(player + 1, partial + self.means[player][arm]);
                self.current.pop();
                self.used[arm] = false;
            }
        }
    }

    let mut search = Search {
        means,
        used: vec![false; arms],
        current: Vec::with_capacity(players),
        totals: Vec::new(),
        best: Vec::new(),
        best_total: f64::NEG_INFINITY,
    };
    search.descend(0, 0.0);
    OptimalMatching::from_totals(search.best, &search.totals, arms)
}

/// Expected loss of one step: `J1 - sum_k mu_k(a_k, n(a_k), w)`.
pub fn step_regret(
    config: &SystemConfig,
    matching: &OptimalMatching,
    profile: &ActionProfile,
    attack: &AttackVector,
) -> f64 {
    let n = collision_counts(profile, config.arms);
    let earned: f64 = profile
        .0
        .iter()
        .enumerate()
        .map(|(k, &a)| mean_reward(config, k, a, n[a], attack.is_attacked(a)))
        .sum();
    (matching.j1 - earned).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochFlags {
    pub epoch: u32,
    /// All estimates within `Delta` of the true means.
    pub exploration_success: bool,
    /// The exploitation profile equals `a*`.
    pub matching_success: bool,
    pub max_estimate_error: f64,
}

/// Per-phase totals, indexed exploration / matching / exploitation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PhaseTotals<T> {
    pub exploration: T,
    pub matching: T,
    pub exploitation: T,
}

impl<T: Copy + std::ops::Add<Output = T>> PhaseTotals<T> {
    pub fn get(&self, phase: Phase) -> T {
        match phase {
            Phase::Exploration => self.exploration,
            Phase::Matching => self.matching,
            Phase::Exploitation => self.exploitation,
        }
    }

    pub fn get_mut(&mut self, phase: Phase) -> &mut T {
        match phase {
            Phase::Exploration => &mut self.exploration,
            Phase::Matching => &mut self.matching,
            Phase::Exploitation => &mut self.exploitation,
        }
    }

    pub fn total(&self) -> T {
        self.exploration + self.matching + self.exploitation
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretLedger {
    pub stride: u64,
    pub steps: u64,
    pub cumulative_regret: f64,
    pub regret_by_phase: PhaseTotals<f64>,
    pub steps_by_phase: PhaseTotals<u64>,
    /// Steps with at least one attacked arm (`W`), per phase.
    pub attacked_steps: PhaseTotals<u64>,
    /// `(t, cumulative regret at t)` for every `t` divisible by `stride`.
    #[serde(skip)]
    pub series: Vec<(u64, f64)>,
    pub epochs: Vec<EpochFlags>,
}

impl RegretLedger {
    pub fn new(stride: u64) -> Self {
        assert!(stride >= 1, "stride must be positive");
        RegretLedger {
            stride,
            steps: 0,
            cumulative_regret: 0.0,
            regret_by_phase: PhaseTotals::default(),
            steps_by_phase: PhaseTotals::default(),
            attacked_steps: PhaseTotals::default(),
            series: Vec::new(),
            epochs: Vec::new(),
        }
    }

    pub fn record_step(&mut self, phase: PhaseTag, regret: f64, attacked_any: bool) {
        self.steps += 1;
        self.cumulative_regret += regret;
        *self.regret_by_phase.get_mut(phase.phase) += regret;
        *self.steps_by_phase.get_mut(phase.phase) += 1;
        *self.attacked_steps.get_mut(phase.phase) += u64::from(attacked_any);
        if self.steps % self.stride == 0 {
            self.series.push((self.steps, self.cumulative_regret));
        }
    }

    /// Total `W` over all phases.
    pub fn attacked_total(&self) -> u64 {
        self.attacked_steps.total()
    }

    pub fn epoch_flags(
        &mut self,
        epoch: u32,
        estimates: &Estimates,
        means: &[Vec<f64>],
        delta: f64,
        exploit_profile: &ActionProfile,
        a_star: &ActionProfile,
    ) -> &EpochFlags {
        let max_err = estimates.max_abs_error(means);
        self.epochs.push(EpochFlags {
            epoch,
            exploration_success: max_err < delta,
            matching_success: exploit_profile == a_star,
            max_estimate_error: max_err,
        });
        self.epochs.last().unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SystemConfig;

    #[test]
    fn reference_instance() {
        let m = optimal_matching(&SystemConfig::reference_means()).unwrap();
        assert_eq!(m.a_star.one_based(), vec![1, 2, 3]);
        assert!((m.j1 - 2.0).abs() < 1e-12);
        assert!((m.j2 - 1.8).abs() < 1e-12);
        assert!((m.delta - 1.0 / 30.0).abs() < 1e-12);
    }

    #[test]
    fn single_player() {
        let m = optimal_matching(&[vec![0.2, 0.9, 0.4]]).unwrap();
        assert_eq!(m.a_star.0, vec![1]);
        assert_eq!(m.j1, 0.9);
        assert_eq!(m.j2, 0.4);
    }

    #[test]
    fn ties_are_rejected() {
        assert!(matches!(
            optimal_matching(&[vec![0.5, 0.5], vec![0.5, 0.5]]),
            Err(MetricsError::NonUniqueOptimalMatching { .. })
        ));
    }

    #[test]
    fn step_regret_examples() {
        let c = SystemConfig::reference();
        let m = optimal_matching(&c.means).unwrap();
        let none = AttackVector::none(3);
        assert_eq!(step_regret(&c, &m, &m.a_star, &none), 0.0);
        let r = step_regret(&c, &m, &m.a_star, &AttackVector::single(3, 0));
        assert!((r - 0.8).abs() < 1e-12);
        assert_eq!(step_regret(&c, &m, &ActionProfile(vec![0, 0, 0]), &none), m.j1);
    }

    #[test]
    fn ledger_accumulates() {
        let mut ledger = RegretLedger::new(10);
        let tag = PhaseTag::new(Phase::Exploration, 1);
        ledger.record_step(tag, 0.8, true);
        assert_eq!(ledger.attacked_steps.exploration, 1);
        assert!((ledger.cumulative_regret - 0.8).abs() < 1e-15);
        ledger.record_step(tag, 0.0, false);
        assert_eq!(ledger.attacked_steps.exploration, 1);
        assert_eq!(ledger.steps, 2);
        for _ in 0..98 {
            ledger.record_step(tag, 0.0, true);
        }
        assert_eq!(ledger.attacked_steps.exploration, 99);
        assert_eq!(ledger.series.len(), 10);
    }

    #[test]
    fn hundred_attacked_exploration_steps() {
        let mut ledger = RegretLedger::new(1);
        for _ in 0..100 {
            ledger.record_step(PhaseTag::new(Phase::Exploration, 1), 0.1, true);
        }
        assert_eq!(ledger.attacked_steps.exploration, 100);
        assert_eq!(ledger.attacked_steps.matching, 0);
    }

    #[test]
    fn epoch_flag_examples() {
        let means = SystemConfig::reference_means();
        let m = optimal_matching(&means).unwrap();
        let mut ledger = RegretLedger::new(1);
        let exact = Estimates::from_rows(means.clone());
        let f = ledger.epoch_flags(1, &exact, &means, m.delta, &m.a_star, &m.a_star).clone();
        assert!(f.exploration_success && f.matching_success);

        let mut off = means.clone();
        off[1][2] += 2.0 * m.delta;
        let f = ledger
            .epoch_flags(2, &Estimates::from_rows(off), &means, m.delta, &ActionProfile(vec![0, 1, 1]), &m.a_star)
            .clone();
        assert!(!f.exploration_success && !f.matching_success);
    }
}
