//! Bandit instance: configuration, collision/attack reward semantics and
//! reward sampling.
//!
//! Players and arms are 0-based inside the crate. The formulas below are
//! written with 1-based labels (player `k ∈ [1..K]`, arm `m ∈ [1..M]`) and
//! every external interface (config JSON, CSV, summaries) uses 1-based labels.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{optimal_matching, MetricsError};

/// Largest arm count accepted; optimal matchings are found by enumeration.
pub const MAX_ARMS: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{field}: {reason}")]
    ParameterViolation { field: String, reason: String },
    #[error("optimal matching is not unique (two assignments tie at total mean {total})")]
    NonUniqueOptimalMatching { total: f64 },
}

impl ModelError {
    pub(crate) fn violation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ModelError::ParameterViolation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Reward distribution family used for uncollided, unattacked pulls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardModel {
    /// `Beta(nu * mu, nu * (1 - mu))`, which has mean `mu`.
    #[serde(rename = "beta")]
    BetaWithMean {
        #[serde(default = "default_nu")]
        nu: f64,
    },
    /// The reward equals the mean exactly.
    Deterministic,
}

fn default_nu() -> f64 {
    2.0
}

impl Default for RewardModel {
    fn default() -> Self {
        RewardModel::BetaWithMean { nu: default_nu() }
    }
}

/// All bandit and algorithm parameters of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(rename = "K")]
    pub players: usize,
    #[serde(rename = "M")]
    pub arms: usize,
    /// Row-major `K x M` matrix of `mu_k(m, 1)`.
    pub means: Vec<Vec<f64>>,
    pub reward_model: RewardModel,
    /// Growth exponent of the exploration and matching phase lengths.
    pub delta_exp: f64,
    pub epsilon: f64,
    pub kappa: f64,
    pub beta: f64,
    #[serde(rename = "T0")]
    pub t0: u64,
    pub c2: u64,
    pub c3: u64,
    pub epochs: u32,
    pub base_seed: u64,
}

impl SystemConfig {
    /// Means used in the published three-player experiment.
    pub fn reference_means() -> Vec<Vec<f64>> {
        vec![
            vec![0.8, 0.6, 0.4],
            vec![0.2, 0.7, 0.3],
            vec![0.1, 0.7, 0.5],
        ]
    }

    /// Three players, three arms, Beta rewards, `eps = 1e-4`, `kappa = 3`,
    /// `beta = 2`, `T0 = c2 = 2000`, `c3 = 10000`, ten epochs.
    pub fn reference() -> Self {
        SystemConfig {
            players: 3,
            arms: 3,
            means: Self::reference_means(),
            reward_model: RewardModel::default(),
            delta_exp: 0.0,
            epsilon: 1e-4,
            kappa: 3.0,
            beta: 2.0,
            t0: 2000,
            c2: 2000,
            c3: 10_000,
            epochs: 10,
            base_seed: 0,
        }
    }

    #[inline]
    pub fn mean(&self, player: usize, arm: usize) -> f64 {
        self.means[player][arm]
    }

    /// Exploration samples required per arm in `epoch`: `ceil(T0 * epoch^delta)`.
    pub fn required_samples(&self, epoch: u32) -> u64 {
        scaled_length(self.t0, epoch, self.delta_exp)
    }

    /// Matching phase length `tau_l = ceil(c2 * epoch^delta)`.
    pub fn matching_length(&self, epoch: u32) -> u64 {
        scaled_length(self.c2, epoch, self.delta_exp)
    }

    /// Exploitation phase length `c3 * 2^epoch`.
    pub fn exploitation_length(&self, epoch: u32) -> u64 {
        self.c3.saturating_mul(1u64 << epoch.min(63))
    }
}

pub(crate) fn scaled_length(base: u64, epoch: u32, delta_exp: f64) -> u64 {
    let len = (base as f64 * f64::from(epoch).powf(delta_exp)).ceil();
    (len as u64).max(1)
}

/// Checks every structural assumption on a configuration and returns it
/// unchanged when they hold.
///
/// Besides the range checks this requires a unique optimal matching over
/// `means` and strictly positive means (an arm with mean zero never yields a
/// nonzero sample, so exploration on it would never finish).
pub fn validate_config(config: SystemConfig) -> Result<SystemConfig, ModelError> {
    let c = &config;
    if c.players == 0 {
        return Err(ModelError::violation("K", "must be at least 1"));
    }
    if c.players > c.arms {
        return Err(ModelError::violation(
            "K",
            format!("K = {} exceeds M = {}", c.players, c.arms),
        ));
    }
    if c.arms > MAX_ARMS {
        return Err(ModelError::violation(
            "M",
            format!("M = {} exceeds the enumeration limit {MAX_ARMS}", c.arms),
        ));
    }
    if c.means.len() != c.players {
        return Err(ModelError::violation(
            "means",
            format!("expected {} rows, found {}", c.players, c.means.len()),
        ));
    }
    for (k, row) in c.means.iter().enumerate() {
        if row.len() != c.arms {
            return Err(ModelError::violation(
                format!("means[{k}]"),
                format!("expected {} entries, found {}", c.arms, row.len()),
            ));
        }
        for (m, &mu) in row.iter().enumerate() {
            if !(mu > 0.0 && mu <= 1.0) {
                return Err(ModelError::violation(
                    format!("means[{k}][{m}]"),
                    format!("{mu} is outside (0, 1]"),
                ));
            }
        }
    }
    if let RewardModel::BetaWithMean { nu } = c.reward_model {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(ModelError::violation("reward_model.nu", "must be positive"));
        }
    }
    if !(c.delta_exp >= 0.0 && c.delta_exp.is_finite()) {
        return Err(ModelError::violation("delta_exp", "must be finite and >= 0"));
    }
    if !(c.epsilon > 0.0 && c.epsilon < 1.0) {
        return Err(ModelError::violation(
            "epsilon",
            format!("{} is outside (0, 1)", c.epsilon),
        ));
    }
    // kappa = M is admitted: the published experiment runs kappa = M = 3.
    if !(c.kappa >= c.arms as f64 && c.kappa.is_finite()) {
        return Err(ModelError::violation(
            "kappa",
            format!("kappa = {} must be at least M = {}", c.kappa, c.arms),
        ));
    }
    if !(c.beta > 0.0 && c.beta < c.kappa) {
        return Err(ModelError::violation(
            "beta",
            format!("beta = {} must lie in (0, kappa)", c.beta),
        ));
    }
    for (name, v) in [("T0", c.t0), ("c2", c.c2), ("c3", c.c3)] {
        if v == 0 {
            return Err(ModelError::violation(name, "must be a positive integer"));
        }
    }
    if c.epochs == 0 {
        return Err(ModelError::violation("epochs", "must be at least 1"));
    }
    match optimal_matching(&c.means) {
        Ok(_) => Ok(config),
        Err(MetricsError::NonUniqueOptimalMatching { total }) => {
            Err(ModelError::NonUniqueOptimalMatching { total })
        }
        Err(MetricsError::TooLarge { .. }) => Err(ModelError::violation("M", "too many arms")),
    }
}

/// Arm chosen by each player (0-based arms).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionProfile(pub Vec<usize>);

impl ActionProfile {
    pub fn players(&self) -> usize {
        self.0.len()
    }

    pub fn arm(&self, player: usize) -> usize {
        self.0[player]
    }

    /// 1-based arm labels.
    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|a| a + 1).collect()
    }
}

/// Per-arm attack bits `w_t`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttackVector(pub Vec<bool>);

impl AttackVector {
    pub fn none(arms: usize) -> Self {
        AttackVector(vec![false; arms])
    }

    pub fn single(arms: usize, arm: usize) -> Self {
        let mut w = vec![false; arms];
        w[arm] = true;
        AttackVector(w)
    }

    #[inline]
    pub fn is_attacked(&self, arm: usize) -> bool {
        self.0[arm]
    }

    pub fn any(&self) -> bool {
        self.0.iter().any(|&b| b)
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

/// Realized result of one joint pull.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub rewards: Vec<f64>,
    /// Occupancy `n(m)` per arm.
    pub collisions: Vec<usize>,
    pub attacked_any: bool,
    pub attack: AttackVector,
}

/// Occupancy `n(m)` of every arm under `profile`.
pub fn collision_counts(profile: &ActionProfile, arms: usize) -> Vec<usize> {
    let mut n = vec![0usize; arms];
    for &a in &profile.0 {
        n[a] += 1;
    }
    n
}

/// `mu_k(m, n, w)`: the mean when alone and unattacked, zero otherwise.
#[inline]
pub fn mean_reward(
    config: &SystemConfig,
    player: usize,
    arm: usize,
    occupancy: usize,
    attacked: bool,
) -> f64 {
    if occupancy == 1 && !attacked {
        config.mean(player, arm)
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
enum ArmSampler {
    Beta(Beta<f64>),
    Constant(f64),
}

/// Precomputed per-(player, arm) reward distributions.
#[derive(Debug, Clone)]
pub struct RewardSampler {
    arms: usize,
    samplers: Vec<ArmSampler>,
}

impl RewardSampler {
    pub fn new(config: &SystemConfig) -> Self {
        let samplers = config
            .means
            .iter()
            .flat_map(|row| row.iter())
            .map(|&mu| match config.reward_model {
                RewardModel::Deterministic => ArmSampler::Constant(mu),
                RewardModel::BetaWithMean { nu } => {
                    if mu <= 0.0 || mu >= 1.0 {
                        ArmSampler::Constant(mu.clamp(0.0, 1.0))
                    } else {
                        ArmSampler::Beta(
                            Beta::new(nu * mu, nu * (1.0 - mu))
                                .expect("beta parameters are positive for mu in (0, 1)"),
                        )
                    }
                }
            })
            .collect();
        RewardSampler {
            arms: config.arms,
            samplers,
        }
    }

    /// One reward draw for an uncollided, unattacked pull.
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, player: usize, arm: usize, rng: &mut R) -> f64 {
        match &self.samplers[player * self.arms + arm] {
            ArmSampler::Beta(b) => b.sample(rng),
            ArmSampler::Constant(c) => *c,
        }
    }

    /// Samples the joint outcome of `profile` under `attack`.
    ///
    /// Rewards are drawn in player order and only for players whose arm is
    /// uncollided and unattacked, so the stream consumption is a function of
    /// `(profile, attack)` alone.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        profile: &ActionProfile,
        attack: &AttackVector,
        rng: &mut R,
    ) -> StepOutcome {
        let collisions = collision_counts(profile, self.arms);
        let rewards = profile
            .0
            .iter()
            .enumerate()
            .map(|(k, &a)| {
                if collisions[a] == 1 && !attack.is_attacked(a) {
                    self.draw(k, a, rng)
                } else {
                    0.0
                }
            })
            .collect();
        StepOutcome {
            rewards,
            collisions,
            attacked_any: attack.any(),
            attack: attack.clone(),
        }
    }
}

/// Samples one step without a cached [`RewardSampler`].
pub fn sample_step<R: Rng + ?Sized>(
    config: &SystemConfig,
    profile: &ActionProfile,
    attack: &AttackVector,
    rng: &mut R,
) -> StepOutcome {
    RewardSampler::new(config).sample(profile, attack, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn reference_config() -> SystemConfig {
        SystemConfig {
            epsilon: 1e-4,
            ..SystemConfig::reference()
        }
    }

    #[test]
    fn reference_config_is_accepted() {
        let c = reference_config();
        assert_eq!(validate_config(c.clone()), Ok(c));
    }

    #[test]
    fn more_players_than_arms_is_rejected() {
        let mut c = reference_config();
        c.players = 4;
        c.means.push(vec![0.3, 0.3, 0.3]);
        assert!(matches!(
            validate_config(c),
            Err(ModelError::ParameterViolation { field, .. }) if field == "K"
        ));
    }

    #[test]
    fn tied_matchings_are_rejected() {
        let mut c = reference_config();
        c.means = vec![vec![0.5; 3]; 3];
        assert!(matches!(
            validate_config(c),
            Err(ModelError::NonUniqueOptimalMatching { .. })
        ));
    }

    #[test]
    fn parameter_ranges() {
        let base = reference_config();
        let bad = [
            SystemConfig { epsilon: 1.5, ..base.clone() },
            SystemConfig { epsilon: 0.0, ..base.clone() },
            SystemConfig { kappa: 2.5, ..base.clone() },
            SystemConfig { beta: 3.0, ..base.clone() },
            SystemConfig { epochs: 0, ..base.clone() },
            SystemConfig { t0: 0, ..base.clone() },
        ];
        for c in bad {
            assert!(
                matches!(validate_config(c.clone()), Err(ModelError::ParameterViolation { .. })),
                "{c:?}"
            );
        }
    }

    #[test]
    fn collision_count_examples() {
        assert_eq!(collision_counts(&ActionProfile(vec![0, 1, 2]), 3), vec![1, 1, 1]);
        assert_eq!(collision_counts(&ActionProfile(vec![1, 1, 1]), 3), vec![0, 3, 0]);
        assert_eq!(collision_counts(&ActionProfile(vec![0, 0, 2]), 3), vec![2, 0, 1]);
    }

    #[test]
    fn mean_reward_examples() {
        let c = reference_config();
        assert_eq!(mean_reward(&c, 0, 0, 1, false), 0.8);
        assert_eq!(mean_reward(&c, 0, 0, 2, false), 0.0);
        assert_eq!(mean_reward(&c, 0, 0, 1, true), 0.0);
    }

    #[test]
    fn collided_players_get_nothing() {
        let c = reference_config();
        let mut rng = stream(3, 0);
        for _ in 0..100 {
            let out = sample_step(&c, &ActionProfile(vec![0, 0, 2]), &AttackVector::none(3), &mut rng);
            assert_eq!(out.rewards[0], 0.0);
            assert_eq!(out.rewards[1], 0.0);
            assert!(out.rewards[2] > 0.0);
        }
    }

    #[test]
    fn attacked_player_gets_nothing() {
        let c = reference_config();
        let mut rng = stream(4, 0);
        let attack = AttackVector(vec![false, true, false]);
        for _ in 0..100 {
            let out = sample_step(&c, &ActionProfile(vec![0, 1, 2]), &attack, &mut rng);
            assert_eq!(out.rewards[1], 0.0);
            assert!(out.rewards[0] > 0.0 && out.rewards[2] > 0.0);
            assert!(out.attacked_any);
        }
    }

    #[test]
    fn deterministic_rewards_equal_means() {
        let c = SystemConfig {
            reward_model: RewardModel::Deterministic,
            ..reference_config()
        };
        let out = sample_step(&c, &ActionProfile(vec![0, 1, 2]), &AttackVector::none(3), &mut stream(1, 0));
        assert_eq!(out.rewards, vec![0.8, 0.7, 0.5]);
        assert_eq!(out.collisions, vec![1, 1, 1]);
        assert!(!out.attacked_any);
    }

    #[test]
    fn beta_sample_mean_within_four_standard_errors() {
        let c = reference_config();
        let sampler = RewardSampler::new(&c);
        let mut rng = stream(11, 0);
        let nu = 2.0;
        for (k, m) in [(0, 0), (1, 2), (2, 0)] {
            let mu = c.mean(k, m);
            let n = 100_000;
            let mean = (0..n).map(|_| sampler.draw(k, m, &mut rng)).sum::<f64>() / n as f64;
            let se = (mu * (1.0 - mu) / (nu + 1.0) / n as f64).sqrt();
            assert!((mean - mu).abs() < 4.0 * se, "({k},{m}) {mean} vs {mu}");
        }
    }

    #[test]
    fn identical_seed_identical_outcome() {
        let c = reference_config();
        let p = ActionProfile(vec![0, 1, 2]);
        let w = AttackVector::none(3);
        let a = sample_step(&c, &p, &w, &mut stream(99, 2));
        let b = sample_step(&c, &p, &w, &mut stream(99, 2));
        assert_eq!(a, b);
    }

    #[test]
    fn config_json_keys() {
        let json = r#"{"K":3,"M":3,"means":[[0.8,0.6,0.4],[0.2,0.7,0.3],[0.1,0.7,0.5]],
            "reward_model":{"type":"beta","nu":2.0},"delta_exp":0.0,"epsilon":0.0001,
            "kappa":3,"beta":2,"T0":2000,"c2":2000,"c3":10000,"epochs":10,"base_seed":0}"#;
        let c: SystemConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c, SystemConfig::reference());
        let det: RewardModel = serde_json::from_str(r#"{"type":"deterministic"}"#).unwrap();
        assert_eq!(det, RewardModel::Deterministic);
    }

    #[test]
    fn phase_lengths() {
        let c = SystemConfig { delta_exp: 0.5, t0: 10, ..reference_config() };
        assert_eq!(c.required_samples(1), 10);
        assert_eq!(c.required_samples(2), 15); // ceil(14.142)
        assert_eq!(c.exploitation_length(3), 80_000);
    }
}
