//! Exact verification of the matching dynamics on tiny instances.
//!
//! [`chain::build_chain`] writes down the full joint transition matrix of one
//! matching round; the rest of the module analyses it: stationary
//! distributions, recurrence classes at `eps = 0` and one-step resistances.

pub mod chain;
pub mod classify;
pub mod stationary;

use serde::Serialize;
use thiserror::Error;

use crate::adversary::{attack_marginal, AdversaryError, AdversarySpec};
use crate::exploration::Estimates;
use crate::matching::{Mood, PlayerMatchState, SyncSnapshot, UTILITY_CAP};
use crate::metrics::{optimal_matching, MetricsError, OptimalMatching};

pub use chain::{build_chain, ChainModel, ChainParams};
pub use classify::{classify_p0, ClassificationReport};
pub use stationary::{power_iteration, stationary_distribution, DEFAULT_TOLERANCE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("instance with K = {players}, M = {arms} is too large for exact analysis (K <= 2, M <= 3, K <= M)")]
    InstanceTooLarge { players: usize, arms: usize },
    #[error("stationary solve failed after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: u64, residual: f64 },
    #[error("chain has {closed_classes} closed classes; a unique stationary distribution needs exactly one")]
    NotErgodic { closed_classes: usize },
    #[error("transition probability is zero at eps = {epsilon}")]
    ZeroTransition { epsilon: f64 },
    #[error("invalid oracle input: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
}

/// Two players, two arms; the optimal matching is player 1 on arm 1 and
/// player 2 on arm 2.
pub fn fixture_means() -> Vec<Vec<f64>> {
    vec![vec![0.9, 0.2], vec![0.3, 0.8]]
}

pub const BRUTE_FORCE_MAX_ARMS: usize = 8;

/// Optimal matching by scanning all `M^K` profiles with a base-`M` counter
/// and discarding the non-injective ones.
pub fn brute_force_matching(means: &[Vec<f64>]) -> Result<OptimalMatching, OracleError> {
    let players = means.len();
    let arms = means.first().map_or(0, Vec::len);
    if players == 0 || players > arms || arms > BRUTE_FORCE_MAX_ARMS {
        return Err(OracleError::InstanceTooLarge { players, arms });
    }
    let mut digits = vec![0usize; players];
    let mut totals = Vec::new();
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        let mut used = 0u32;
        let injective = digits.iter().all(|&a| {
            let fresh = used & (1 << a) == 0;
            used |= 1 << a;
            fresh
        });
        if injective {
            let total: f64 = digits.iter().enumerate().map(|(k, &a)| means[k][a]).sum();
            totals.push(total);
            if best.as_ref().is_none_or(|(b, _)| total > *b) {
                best = Some((total, digits.clone()));
            }
        }
        // increment, least significant digit last
        let mut k = players;
        loop {
            if k == 0 {
                let (_, profile) = best.expect("K <= M admits an injective profile");
                return Ok(OptimalMatching::from_totals(profile, &totals, arms)?);
            }
            k -= 1;
            digits[k] += 1;
            if digits[k] < arms {
                break;
            }
            digits[k] = 0;
        }
    }
}

pub const RESISTANCE_GRID: [f64; 4] = [0.1, 0.05, 0.02, 0.01];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResistanceFit {
    /// Least-squares slope of `ln P` against `ln eps`.
    pub slope: f64,
    pub intercept: f64,
    /// `(eps, P[source][target])`.
    pub points: Vec<(f64, f64)>,
}

/// Fits the one-step resistance of `source -> target` across a family of
/// chains that differ only in `eps`.
pub fn resistance_probe(family: &[ChainModel], source: usize, target: usize) -> Result<ResistanceFit, OracleError> {
    if family.len() < 2 {
        return Err(OracleError::InvalidParameter("a resistance fit needs at least two chains".into()));
    }
    let mut points = Vec::with_capacity(family.len());
    for chain in family {
        let p = chain.prob(source, target);
        if p <= 0.0 {
            return Err(OracleError::ZeroTransition {
                epsilon: chain.params.epsilon,
            });
        }
        points.push((chain.params.epsilon, p));
    }
    let xs: Vec<f64> = points.iter().map(|(e, _)| e.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, p)| p.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Ok(ResistanceFit {
        slope,
        intercept: my - slope * mx,
        points,
    })
}

/// The all-content state aligned with `matching`, each player holding the
/// clamped estimate of its optimal arm.
pub fn optimal_content_state(estimates: &Estimates, matching: &OptimalMatching) -> Vec<PlayerMatchState> {
    matching
        .a_star
        .0
        .iter()
        .enumerate()
        .map(|(k, &a)| PlayerMatchState::new(a, estimates.get(k, a).clamp(0.0, UTILITY_CAP), Mood::Content))
        .collect()
}

/// Every player discontent on its optimal arm with zero utility.
pub fn discontent_state(matching: &OptimalMatching) -> Vec<PlayerMatchState> {
    matching
        .a_star
        .0
        .iter()
        .map(|&a| PlayerMatchState::new(a, 0.0, Mood::Discontent))
        .collect()
}

/// Where the optimal content state lands after player 1 deviates onto
/// player 2's arm and the collision makes everyone discontent.
pub fn collapse_state(estimates: &Estimates, matching: &OptimalMatching) -> Option<Vec<PlayerMatchState>> {
    let a = &matching.a_star.0;
    if a.len() < 2 {
        return None;
    }
    Some(
        a.iter()
            .enumerate()
            .map(|(k, &arm)| {
                if k == 0 {
                    PlayerMatchState::new(a[1], 0.0, Mood::Discontent)
                } else {
                    PlayerMatchState::new(arm, estimates.get(k, arm).clamp(0.0, UTILITY_CAP), Mood::Discontent)
                }
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheckConfig {
    pub means: Vec<Vec<f64>>,
    pub kappa: f64,
    pub beta: f64,
    pub sync_snapshot: SyncSnapshot,
    /// Attack model for the second stationary sweep.
    pub adversary: AdversarySpec,
    pub stationary_grid: Vec<f64>,
    pub tolerance: f64,
}

impl Default for OracleCheckConfig {
    fn default() -> Self {
        OracleCheckConfig {
            means: fixture_means(),
            kappa: 3.0,
            beta: 2.0,
            sync_snapshot: SyncSnapshot::default(),
            adversary: AdversarySpec::iid_single_arm_all_phases(0.3),
            stationary_grid: vec![0.1, 0.03, 0.01],
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryPoint {
    pub epsilon: f64,
    pub optimal_mass: f64,
    /// Label of the state with the largest mass.
    pub argmax_state: String,
    pub argmax_is_optimal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheckReport {
    pub players: usize,
    pub arms: usize,
    pub states: usize,
    pub sync_snapshot: SyncSnapshot,
    pub optimal_state: String,
    pub classification: ClassificationSummary,
    pub stationary_no_adversary: Vec<StationaryPoint>,
    pub stationary_with_adversary: Vec<StationaryPoint>,
    pub optimal_mass_monotone: bool,
    pub resistance_discontent_to_optimal: ResistanceFit,
    pub expected_discontent_to_optimal: f64,
    pub resistance_optimal_to_discontent: Option<ResistanceFit>,
    pub resistance_optimal_self_loop: ResistanceFit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationSummary {
    pub absorbing: usize,
    pub closed_classes: usize,
    pub transient: usize,
    pub all_content_absorbing: bool,
    pub all_discontent_closed: bool,
    pub mixed_transient: bool,
}

fn stationary_sweep(
    estimates: &Estimates,
    config: &OracleCheckConfig,
    attacks: &[(crate::model::AttackVector, f64)],
    optimal: &[PlayerMatchState],
) -> Result<Vec<StationaryPoint>, OracleError> {
    config
        .stationary_grid
        .iter()
        .map(|&epsilon| {
            let params = ChainParams {
                epsilon,
                kappa: config.kappa,
                beta: config.beta,
                sync_snapshot: config.sync_snapshot,
            };
            let chain = build_chain(estimates, params, attacks)?;
            let pi = stationary_distribution(&chain.transitions, config.tolerance)?;
            let opt = chain.index_of(optimal).expect("optimal state is in the chain");
            let argmax = (0..pi.len()).max_by(|&a, &b| pi[a].total_cmp(&pi[b])).unwrap_or(0);
            Ok(StationaryPoint {
                epsilon,
                optimal_mass: pi[opt],
                argmax_state: chain.describe(argmax).to_string(),
                argmax_is_optimal: argmax == opt,
            })
        })
        .collect()
}

/// Classification at `eps = 0`, stationary concentration on the optimal
/// state with and without attacks, and one-step resistance fits.
pub fn oracle_check(config: &OracleCheckConfig) -> Result<OracleCheckReport, OracleError> {
    let estimates = Estimates::from_rows(config.means.clone());
    let arms = estimates.arms();
    let matching = optimal_matching(&config.means)?;
    let optimal = optimal_content_state(&estimates, &matching);
    let quiet = attack_marginal(&AdversarySpec::None, arms)?;
    let attacks = attack_marginal(&config.adversary, arms)?;
    let chain_at = |epsilon: f64| {
        build_chain(
            &estimates,
            ChainParams {
                epsilon,
                kappa: config.kappa,
                beta: config.beta,
                sync_snapshot: config.sync_snapshot,
            },
            &quiet,
        )
    };

    let p0 = chain_at(0.0)?;
    let report = classify_p0(&p0);
    let opt_idx = p0.index_of(&optimal).expect("optimal state is in the chain");

    let stationary_no_adversary = stationary_sweep(&estimates, config, &quiet, &optimal)?;
    let stationary_with_adversary = stationary_sweep(&estimates, config, &attacks, &optimal)?;
    let optimal_mass_monotone = stationary_no_adversary
        .windows(2)
        .all(|w| (w[1].epsilon < w[0].epsilon) == (w[1].optimal_mass > w[0].optimal_mass));

    let family: Vec<ChainModel> = RESISTANCE_GRID.iter().map(|&e| chain_at(e)).collect::<Result<_, _>>()?;
    let d_idx = p0.index_of(&discontent_state(&matching)).expect("state exists");
    let expected: f64 = optimal.iter().map(|s| 1.0 - s.baseline_utility).sum();
    let collapse = match collapse_state(&estimates, &matching) {
        Some(target) => Some(resistance_probe(&family, opt_idx, p0.index_of(&target).expect("state exists"))?),
        None => None,
    };

    Ok(OracleCheckReport {
        players: p0.players,
        arms,
        states: p0.len(),
        sync_snapshot: config.sync_snapshot,
        optimal_state: p0.describe(opt_idx).to_string(),
        classification: ClassificationSummary {
            absorbing: report.absorbing_states.len(),
            closed_classes: report.closed_classes.len(),
            transient: report.transient_states.len(),
            all_content_absorbing: report.all_content_absorbing,
            all_discontent_closed: report.all_discontent_closed,
            mixed_transient: report.mixed_transient,
        },
        stationary_no_adversary,
        stationary_with_adversary,
        optimal_mass_monotone,
        resistance_discontent_to_optimal: resistance_probe(&family, d_idx, opt_idx)?,
        expected_discontent_to_optimal: expected,
        resistance_optimal_to_discontent: collapse,
        resistance_optimal_self_loop: resistance_probe(&family, opt_idx, opt_idx)?,
    })
}
