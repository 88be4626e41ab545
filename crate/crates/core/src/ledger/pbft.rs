//! PBFT-style commit over simulated miners.
//!
//! The protocol is modeled as counted votes in three phases:
//!
//! 1. pre-prepare: the proposer assembles the candidate block;
//! 2. prepare: each honest miner validates the candidate and votes for its
//!    digest; a miner is *prepared* once it sees `2f + 1` matching votes;
//! 3. commit: prepared honest miners vote to commit; the block is appended iff
//!    `2f + 1` commit votes match.
//!
//! Faulty miners either abstain or vote for a wrong digest. The proposer never
//! equivocates, and there are no view changes or message losses between
//! miners.

use serde::{Deserialize, Serialize};

use crate::ids::MinerId;

use super::Digest;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MinerBehavior {
    Honest,
    /// Sends no prepare or commit messages.
    Abstain,
    /// Votes for a digest other than the proposed block's.
    VoteInvalid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Miner {
    pub id: MinerId,
    pub behavior: MinerBehavior,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinerSet {
    miners: Vec<Miner>,
}

impl MinerSet {
    pub fn new(miners: Vec<Miner>) -> Self {
        Self { miners }
    }

    /// `n` miners, the last `faulty` of which abstain.
    pub fn with_faulty(n: usize, faulty: usize) -> Self {
        let miners = (0..n)
            .map(|i| Miner {
                id: MinerId(i as u32),
                behavior: if i + faulty >= n {
                    MinerBehavior::Abstain
                } else {
                    MinerBehavior::Honest
                },
            })
            .collect();
        Self { miners }
    }

    pub fn honest(n: usize) -> Self {
        Self::with_faulty(n, 0)
    }

    pub fn miners(&self) -> &[Miner] {
        &self.miners
    }

    pub fn len(&self) -> usize {
        self.miners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.miners.is_empty()
    }

    /// Tolerated faults, `floor((n - 1) / 3)`.
    pub fn fault_tolerance(&self) -> usize {
        self.miners.len().saturating_sub(1) / 3
    }

    pub fn quorum(&self) -> usize {
        2 * self.fault_tolerance() + 1
    }

    pub fn contains(&self, id: MinerId) -> bool {
        self.miners.iter().any(|m| m.id == id)
    }

    pub fn honest_count(&self) -> usize {
        self.miners
            .iter()
            .filter(|m| m.behavior == MinerBehavior::Honest)
            .count()
    }
}

/// Vote tallies from one commit attempt.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VoteTally {
    pub prepares: usize,
    pub commits: usize,
    pub quorum: usize,
}

impl VoteTally {
    pub fn committed(&self) -> bool {
        self.commits >= self.quorum
    }
}

/// Runs the prepare and commit phases for a candidate digest. `block_valid`
/// is the outcome of an honest miner's validation of the candidate.
pub(crate) fn run_rounds(miners: &MinerSet, digest: &Digest, block_valid: bool) -> VoteTally {
    let quorum = miners.quorum();
    let mut wrong = *digest;
    wrong[0] ^= 0xff;

    let prepare_votes: Vec<Option<Digest>> = miners
        .miners
        .iter()
        .map(|m| match m.behavior {
            MinerBehavior::Honest if block_valid => Some(*digest),
            MinerBehavior::Honest | MinerBehavior::Abstain => None,
            MinerBehavior::VoteInvalid => Some(wrong),
        })
        .collect();
    let prepares = prepare_votes
        .iter()
        .filter(|v| v.as_ref() == Some(digest))
        .count();

    // All honest miners observe the same broadcast votes, so they are
    // prepared together or not at all.
    let prepared = prepares >= quorum;
    let commits = miners
        .miners
        .iter()
        .filter(|m| m.behavior == MinerBehavior::Honest && prepared)
        .count();

    VoteTally {
        prepares,
        commits,
        quorum,
    }
}
