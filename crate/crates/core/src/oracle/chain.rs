//! Exact joint transition matrix of one matching round.
//!
//! Written directly from the round's branch probabilities, without calling
//! into the simulator, so the two can be checked against each other.

use std::fmt;

use itertools::Itertools;
use serde::Serialize;

use super::OracleError;
use crate::exploration::Estimates;
use crate::matching::{Mood, PlayerMatchState, SyncSnapshot, UTILITY_CAP};
use crate::model::AttackVector;

pub const MAX_ORACLE_PLAYERS: usize = 2;
pub const MAX_ORACLE_ARMS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainParams {
    pub epsilon: f64,
    pub kappa: f64,
    pub beta: f64,
    pub sync_snapshot: SyncSnapshot,
}

/// One player's component of a joint state; `utility` indexes the player's
/// utility alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LocalState {
    pub baseline: usize,
    pub utility: usize,
    pub mood: Mood,
}

#[derive(Debug, Clone)]
pub struct ChainModel {
    pub players: usize,
    pub arms: usize,
    pub params: ChainParams,
    /// Per player: `{0} ∪ {clamped estimate of each arm}`, sorted, deduplicated.
    pub alphabets: Vec<Vec<f64>>,
    pub adversary: Vec<(AttackVector, f64)>,
    /// Row-stochastic, dense.
    pub transitions: Vec<Vec<f64>>,
    local_sizes: Vec<usize>,
}

struct PlayerTables {
    /// Alphabet index of the utility earned on each arm.
    arm_utility: Vec<usize>,
    zero: usize,
}

fn clamp(x: f64) -> f64 {
    x.clamp(0.0, UTILITY_CAP)
}

fn alphabet(row: &[f64]) -> Vec<f64> {
    let mut values: Vec<f64> = std::iter::once(0.0).chain(row.iter().map(|&x| clamp(x))).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    values
}

fn position(alphabet: &[f64], value: f64) -> usize {
    alphabet.iter().position(|&v| v == value).expect("value in alphabet")
}

impl ChainModel {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.transitions[from][to]
    }

    fn local_index(&self, player: usize, s: LocalState) -> usize {
        let n_u = self.alphabets[player].len();
        (s.baseline * n_u + s.utility) * 2 + usize::from(s.mood == Mood::Discontent)
    }

    fn local_state(&self, player: usize, idx: usize) -> LocalState {
        let n_u = self.alphabets[player].len();
        LocalState {
            baseline: idx / 2 / n_u,
            utility: (idx / 2) % n_u,
            mood: if idx % 2 == 0 { Mood::Content } else { Mood::Discontent },
        }
    }

    pub fn encode(&self, locals: &[LocalState]) -> usize {
        locals
            .iter()
            .enumerate()
            .fold(0, |acc, (k, &s)| acc * self.local_sizes[k] + self.local_index(k, s))
    }

    pub fn decode(&self, mut idx: usize) -> Vec<LocalState> {
        let mut out = vec![
            LocalState {
                baseline: 0,
                utility: 0,
                mood: Mood::Content
            };
            self.players
        ];
        for k in (0..self.players).rev() {
            out[k] = self.local_state(k, idx % self.local_sizes[k]);
            idx /= self.local_sizes[k];
        }
        out
    }

    /// Index of a joint state given as simulator states, if its utilities
    /// belong to the alphabets.
    pub fn index_of(&self, states: &[PlayerMatchState]) -> Option<usize> {
        if states.len() != self.players {
            return None;
        }
        let locals: Option<Vec<LocalState>> = states
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let u = self.alphabets[k].iter().position(|&v| v == s.baseline_utility)?;
                (s.baseline_action < self.arms).then_some(LocalState {
                    baseline: s.baseline_action,
                    utility: u,
                    mood: s.mood,
                })
            })
            .collect();
        locals.map(|l| self.encode(&l))
    }

    pub fn player_states(&self, idx: usize) -> Vec<PlayerMatchState> {
        self.decode(idx)
            .into_iter()
            .enumerate()
            .map(|(k, s)| PlayerMatchState::new(s.baseline, self.alphabets[k][s.utility], s.mood))
            .collect()
    }

    pub fn moods(&self, idx: usize) -> Vec<Mood> {
        self.decode(idx).into_iter().map(|s| s.mood).collect()
    }

    pub fn all_content(&self, idx: usize) -> bool {
        self.moods(idx).iter().all(|m| m.is_content())
    }

    pub fn all_discontent(&self, idx: usize) -> bool {
        self.moods(idx).iter().all(|&m| m == Mood::Discontent)
    }

    /// `max_i |sum_j P[i][j] - 1|`.
    pub fn row_sum_error(&self) -> f64 {
        self.transitions
            .iter()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn describe(&self, idx: usize) -> StateLabel {
        StateLabel(self.player_states(idx))
    }
}

/// Human-readable joint state, e.g. `(1,0.9,C)|(2,0.8,C)` with 1-based arms.
#[derive(Debug, Clone, PartialEq)]
pub struct StateLabel(pub Vec<PlayerMatchState>);

impl fmt::Display for StateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|s| format!("({},{},{})", s.baseline_action + 1, s.baseline_utility, s.mood))
            .collect();
        f.write_str(&parts.join("|"))
    }
}

/// Builds the exact transition matrix of one matching round, marginalized
/// over both players' randomization and the i.i.d. attack distribution.
pub fn build_chain(
    estimates: &Estimates,
    params: ChainParams,
    adversary: &[(AttackVector, f64)],
) -> Result<ChainModel, OracleError> {
    let players = estimates.players();
    let arms = estimates.arms();
    if players == 0 || players > MAX_ORACLE_PLAYERS || arms > MAX_ORACLE_ARMS || players > arms {
        return Err(OracleError::InstanceTooLarge { players, arms });
    }
    let eps = params.epsilon;
    if !(0.0..1.0).contains(&eps) {
        return Err(OracleError::InvalidParameter(format!("epsilon {eps} outside [0, 1)")));
    }
    let q_total: f64 = adversary.iter().map(|(_, q)| q).sum();
    if (q_total - 1.0).abs() > 1e-12 || adversary.iter().any(|(w, _)| w.0.len() != arms) {
        return Err(OracleError::InvalidParameter("attack distribution must sum to 1 over M-bit vectors".into()));
    }

    let alphabets: Vec<Vec<f64>> = estimates.rows().iter().map(|r| alphabet(r)).collect();
    let tables: Vec<PlayerTables> = estimates
        .rows()
        .iter()
        .zip(&alphabets)
        .map(|(row, alpha)| PlayerTables {
            arm_utility: row.iter().map(|&x| position(alpha, clamp(x))).collect(),
            zero: position(alpha, 0.0),
        })
        .collect();
    let local_sizes: Vec<usize> = alphabets.iter().map(|a| arms * a.len() * 2).collect();
    let n: usize = local_sizes.iter().product();

    let mut chain = ChainModel {
        players,
        arms,
        params,
        alphabets,
        adversary: adversary.to_vec(),
        transitions: Vec::new(),
        local_sizes,
    };

    let deviate = if arms > 1 { eps.powf(params.kappa) } else { 0.0 };
    let survive_sync = eps.powf(params.beta);

    let mut transitions = vec![vec![0.0; n]; n];
    for (from, row) in transitions.iter_mut().enumerate() {
        let z = chain.decode(from);

        // Each player's action distribution.
        let action_dists: Vec<Vec<(usize, f64)>> = z
            .iter()
            .map(|s| {
                (0..arms)
                    .map(|a| {
                        let p = match s.mood {
                            Mood::Discontent => 1.0 / arms as f64,
                            Mood::Content if a == s.baseline => 1.0 - deviate,
                            Mood::Content => deviate / (arms - 1) as f64,
                        };
                        (a, p)
                    })
                    .filter(|&(_, p)| p > 0.0)
                    .collect()
            })
            .collect();

        for profile in action_dists.iter().map(|d| d.iter().copied()).multi_cartesian_product() {
            let p_act: f64 = profile.iter().map(|&(_, p)| p).product();
            let actions: Vec<usize> = profile.iter().map(|&(a, _)| a).collect();

            for (attack, q) in adversary {
                // Reward is positive iff the arm is neither shared nor attacked.
                let utilities: Vec<usize> = actions
                    .iter()
                    .enumerate()
                    .map(|(k, &a)| {
                        let alone = actions.iter().filter(|&&b| b == a).count() == 1;
                        if alone && !attack.is_attacked(a) {
                            tables[k].arm_utility[a]
                        } else {
                            tables[k].zero
                        }
                    })
                    .collect();

                let update_dists: Vec<Vec<(LocalState, f64)>> = (0..players)
                    .map(|k| {
                        let s = z[k];
                        if s.mood == Mood::Content && actions[k] == s.baseline {
                            return vec![(s, 1.0)];
                        }
                        let u_value = chain.alphabets[k][utilities[k]];
                        let to_content = eps.powf(1.0 - u_value);
                        let next = |mood| LocalState {
                            baseline: actions[k],
                            utility: utilities[k],
                            mood,
                        };
                        [(next(Mood::Content), to_content), (next(Mood::Discontent), 1.0 - to_content)]
                            .into_iter()
                            .filter(|&(_, p)| p > 0.0)
                            .collect()
                    })
                    .collect();

                for updated in update_dists.iter().map(|d| d.iter().copied()).multi_cartesian_product() {
                    let p_upd: f64 = updated.iter().map(|&(_, p)| p).product();
                    let all_bits_content = match params.sync_snapshot {
                        SyncSnapshot::PreUpdate => z.iter().all(|s| s.mood == Mood::Content),
                        SyncSnapshot::PostUpdate => updated.iter().all(|(s, _)| s.mood == Mood::Content),
                    };
                    let sync_dists: Vec<Vec<(LocalState, f64)>> = updated
                        .iter()
                        .map(|&(s, _)| {
                            if s.mood == Mood::Discontent || all_bits_content {
                                return vec![(s, 1.0)];
                            }
                            let drop = LocalState {
                                mood: Mood::Discontent,
                                ..s
                            };
                            [(s, survive_sync), (drop, 1.0 - survive_sync)]
                                .into_iter()
                                .filter(|&(_, p)| p > 0.0)
                                .collect()
                        })
                        .collect();
                    for fin in sync_dists.iter().map(|d| d.iter().copied()).multi_cartesian_product() {
                        let p_sync: f64 = fin.iter().map(|&(_, p)| p).product();
                        let locals: Vec<LocalState> = fin.iter().map(|&(s, _)| s).collect();
                        row[chain.encode(&locals)] += p_act * q * p_upd * p_sync;
                    }
                }
            }
        }
    }
    chain.transitions = transitions;
    Ok(chain)
}
