//! One-bit broadcast rounds and their accounting.
//!
//! The channel is reliable and synchronous: every bit sent in a round is seen
//! by all players when the round is collected.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CommsError {
    #[error("player {player} already sent a bit this round")]
    DuplicateSend { player: usize },
    #[error("round incomplete: {received} of {expected} bits")]
    IncompleteRound { received: usize, expected: usize },
    #[error("player {player} out of range")]
    UnknownPlayer { player: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CommPhase {
    Exploration,
    Matching,
}

#[derive(Debug, Clone)]
pub struct BitBus {
    round: Vec<Option<bool>>,
    /// `[exploration, matching]` bits sent per player.
    sent: Vec<[u64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PlayerBits {
    pub exploration: u64,
    pub matching: u64,
    pub total: u64,
}

/// Per-player bit totals, serialized under `comm_bits`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CommBudget {
    pub per_player: Vec<PlayerBits>,
}

impl CommBudget {
    pub fn max_total(&self) -> u64 {
        self.per_player.iter().map(|p| p.total).max().unwrap_or(0)
    }
}

impl BitBus {
    pub fn new(players: usize) -> Self {
        BitBus {
            round: vec![None; players],
            sent: vec![[0, 0]; players],
        }
    }

    pub fn players(&self) -> usize {
        self.round.len()
    }

    pub fn broadcast_bit(&mut self, sender: usize, bit: bool, phase: CommPhase) -> Result<(), CommsError> {
        let slot = self
            .round
            .get_mut(sender)
            .ok_or(CommsError::UnknownPlayer { player: sender })?;
        if slot.is_some() {
            return Err(CommsError::DuplicateSend { player: sender });
        }
        *slot = Some(bit);
        let idx = match phase {
            CommPhase::Exploration => 0,
            CommPhase::Matching => 1,
        };
        self.sent[sender][idx] += 1;
        Ok(())
    }

    /// Bits received so far in the current round.
    pub fn received(&self) -> usize {
        self.round.iter().filter(|b| b.is_some()).count()
    }

    pub fn round_complete(&self) -> bool {
        self.received() == self.players()
    }

    /// Returns the round's bits indexed by sender and opens a new round.
    pub fn collect_round(&mut self) -> Result<Vec<bool>, CommsError> {
        let received = self.received();
        if received != self.players() {
            return Err(CommsError::IncompleteRound {
                received,
                expected: self.players(),
            });
        }
        Ok(self.round.iter_mut().map(|b| b.take().unwrap()).collect())
    }

    pub fn budget_report(&self) -> CommBudget {
        CommBudget {
            per_player: self
                .sent
                .iter()
                .map(|&[e, m]| PlayerBits {
                    exploration: e,
                    matching: m,
                    total: e + m,
                })
                .collect(),
        }
    }
}
