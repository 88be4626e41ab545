//! In-process consortium ledger for reputation opinions.
//!
//! Publishers sign [`OpinionTx`]s with a keyed hash; miners commit them in
//! hash-chained [`Block`]s through a PBFT-style vote (see [`pbft`]). A
//! [`Ledger`] is a single-writer state machine: [`Ledger::commit`] takes
//! `&mut self`, queries borrow it shared.

mod codec;
pub mod export;
pub mod pbft;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{MinerId, PublisherId, TaskIndex, WorkerId};
use crate::opinion::Opinion;

pub use pbft::{Miner, MinerBehavior, MinerSet, VoteTally};

/// 32-byte SHA-256 or HMAC-SHA256 output.
pub type Digest = [u8; 32];

pub const ZERO_DIGEST: Digest = [0; 32];

/// Proposer recorded on the genesis block.
pub const GENESIS_PROPOSER: MinerId = MinerId(u32::MAX);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LedgerError {
    #[error("publisher {0} has no registered key")]
    UnknownPublisher(PublisherId),
    #[error("proposer {0} is not a member of the miner set")]
    UnknownProposer(MinerId),
    #[error("nothing to commit")]
    EmptyProposal,
    #[error("transaction {index} failed signature or opinion validation")]
    InvalidTx { index: usize },
    #[error("commit quorum not reached: {commits} of {quorum} commit votes")]
    CommitFailure { commits: usize, quorum: usize },
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SigningKey(pub [u8; 32]);

impl std::fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SigningKey(..)")
    }
}

/// Evidence counts behind an opinion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionSummary {
    pub alpha_eff: f64,
    pub beta_eff: f64,
    pub task_index: TaskIndex,
}

/// The signed part of an opinion transaction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TxContent {
    pub publisher_id: PublisherId,
    pub worker_id: WorkerId,
    pub opinion: Opinion,
    pub summary: InteractionSummary,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpinionTx {
    pub content: TxContent,
    pub signature: Digest,
}

impl OpinionTx {
    pub fn publisher_id(&self) -> PublisherId {
        self.content.publisher_id
    }

    pub fn worker_id(&self) -> WorkerId {
        self.content.worker_id
    }

    pub fn task_index(&self) -> TaskIndex {
        self.content.summary.task_index
    }
}

/// Signs with an explicit key.
pub fn sign_with_key(content: TxContent, key: &SigningKey) -> OpinionTx {
    OpinionTx {
        signature: codec::sign(&content, key),
        content,
    }
}

/// Publisher keys known to the ledger.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyRegistry {
    keys: BTreeMap<PublisherId, SigningKey>,
}

impl KeyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, publisher: PublisherId, key: SigningKey) {
        self.keys.insert(publisher, key);
    }

    pub fn get(&self, publisher: PublisherId) -> Option<&SigningKey> {
        self.keys.get(&publisher)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PublisherId, &SigningKey)> {
        self.keys.iter()
    }

    pub fn sign_tx(&self, content: TxContent) -> Result<OpinionTx, LedgerError> {
        let key = self
            .get(content.publisher_id)
            .ok_or(LedgerError::UnknownPublisher(content.publisher_id))?;
        Ok(sign_with_key(content, key))
    }

    /// True iff the signature matches the publisher's registered key and the
    /// opinion lies on the simplex.
    pub fn verify_tx(&self, tx: &OpinionTx) -> bool {
        let Some(key) = self.get(tx.content.publisher_id) else {
            return false;
        };
        let o = tx.content.opinion;
        Opinion::new(o.belief(), o.distrust(), o.uncertainty()).is_ok()
            && codec::verify(&tx.content, key, &tx.signature)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub txs: Vec<OpinionTx>,
    pub proposer: MinerId,
    pub block_hash: Digest,
}

impl Block {
    pub fn genesis() -> Self {
        Self::seal(0, ZERO_DIGEST, Vec::new(), GENESIS_PROPOSER)
    }

    fn seal(height: u64, prev_hash: Digest, txs: Vec<OpinionTx>, proposer: MinerId) -> Self {
        let mut b = Self {
            height,
            prev_hash,
            txs,
            proposer,
            block_hash: ZERO_DIGEST,
        };
        b.block_hash = codec::block_digest(&b);
        b
    }

    pub fn recompute_hash(&self) -> Digest {
        codec::block_digest(self)
    }
}

/// First inconsistency found while verifying a chain.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("block {height}: {reason}")]
pub struct ChainFault {
    /// Position in the chain (equals the expected height).
    pub height: u64,
    pub reason: String,
}

/// Full structural and cryptographic check, reporting the first bad block.
pub fn check_chain(chain: &[Block], keys: &KeyRegistry) -> Result<(), ChainFault> {
    let fault = |height: usize, reason: String| ChainFault {
        height: height as u64,
        reason,
    };
    if chain.is_empty() {
        return Err(fault(0, "chain has no genesis block".into()));
    }
    for (i, b) in chain.iter().enumerate() {
        if b.height != i as u64 {
            return Err(fault(i, format!("height {} out of sequence", b.height)));
        }
        let expected_prev = if i == 0 {
            ZERO_DIGEST
        } else {
            chain[i - 1].block_hash
        };
        if b.prev_hash != expected_prev {
            return Err(fault(
                i,
                "prev_hash does not link to the previous block".into(),
            ));
        }
        if b.recompute_hash() != b.block_hash {
            return Err(fault(i, "block_hash does not match contents".into()));
        }
        if let Some(j) = b.txs.iter().position(|tx| !keys.verify_tx(tx)) {
            return Err(fault(i, format!("transaction {j} fails verification")));
        }
    }
    Ok(())
}

pub fn verify_chain(chain: &[Block], keys: &KeyRegistry) -> bool {
    check_chain(chain, keys).is_ok()
}

/// Latest opinion per publisher about `worker`: highest task index wins, ties
/// go to the later block, then the later position within the block.
pub fn latest_opinions(
    chain: &[Block],
    worker: WorkerId,
) -> BTreeMap<PublisherId, (Opinion, TaskIndex)> {
    let mut out: BTreeMap<PublisherId, (Opinion, TaskIndex)> = BTreeMap::new();
    for tx in chain.iter().flat_map(|b| &b.txs) {
        if tx.worker_id() != worker {
            continue;
        }
        let entry = (tx.content.opinion, tx.task_index());
        match out.get(&tx.publisher_id()) {
            Some((_, t)) if *t > tx.task_index() => {}
            _ => {
                out.insert(tx.publisher_id(), entry);
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ledger {
    chain: Vec<Block>,
    keys: KeyRegistry,
}

impl Ledger {
    pub fn new(keys: KeyRegistry) -> Self {
        Self {
            chain: vec![Block::genesis()],
            keys,
        }
    }

    /// Wraps an existing chain, e.g. one read back from an export file.
    pub fn from_parts(chain: Vec<Block>, keys: KeyRegistry) -> Result<Self, ChainFault> {
        check_chain(&chain, &keys)?;
        Ok(Self { chain, keys })
    }

    pub fn chain(&self) -> &[Block] {
        &self.chain
    }

    pub fn keys(&self) -> &KeyRegistry {
        &self.keys
    }

    pub fn register_publisher(&mut self, publisher: PublisherId, key: SigningKey) {
        self.keys.register(publisher, key);
    }

    pub fn sign_tx(&self, content: TxContent) -> Result<OpinionTx, LedgerError> {
        self.keys.sign_tx(content)
    }

    pub fn tip(&self) -> &Block {
        self.chain.last().expect("ledger always holds genesis")
    }

    pub fn verify(&self) -> bool {
        verify_chain(&self.chain, &self.keys)
    }

    pub fn latest_opinions(&self, worker: WorkerId) -> BTreeMap<PublisherId, (Opinion, TaskIndex)> {
        latest_opinions(&self.chain, worker)
    }

    /// Proposes `pending` as the next block and appends it iff a commit quorum
    /// forms. The chain is untouched on any error.
    pub fn commit(
        &mut self,
        pending: Vec<OpinionTx>,
        miners: &MinerSet,
        proposer: MinerId,
    ) -> Result<&Block, LedgerError> {
        if !miners.contains(proposer) {
            return Err(LedgerError::UnknownProposer(proposer));
        }
        if pending.is_empty() {
            return Err(LedgerError::EmptyProposal);
        }
        if let Some(index) = pending.iter().position(|tx| !self.keys.verify_tx(tx)) {
            return Err(LedgerError::InvalidTx { index });
        }
        let tip = self.tip();
        let candidate = Block::seal(tip.height + 1, tip.block_hash, pending, proposer);

        let valid = candidate.recompute_hash() == candidate.block_hash
            && candidate.txs.iter().all(|tx| self.keys.verify_tx(tx));
        let tally = pbft::run_rounds(miners, &candidate.block_hash, valid);
        if !tally.committed() {
            log::debug!(
                "commit of height {} failed: {}/{} votes",
                candidate.height,
                tally.commits,
                tally.quorum
            );
            return Err(LedgerError::CommitFailure {
                commits: tally.commits,
                quorum: tally.quorum,
            });
        }
        self.chain.push(candidate);
        Ok(self.tip())
    }
}

/// Convenience wrapper matching the free-function form of the commit.
pub fn pbft_commit<'a>(
    ledger: &'a mut Ledger,
    pending: Vec<OpinionTx>,
    miners: &MinerSet,
    proposer: MinerId,
) -> Result<&'a Block, LedgerError> {
    ledger.commit(pending, miners, proposer)
}
