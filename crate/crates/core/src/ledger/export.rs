//! Line-delimited chain files.
//!
//! Line 1 is a header carrying the format tag and the publisher key registry;
//! every following line holds one block, in height order, as a JSON object with
//! hex-encoded digests. Floats are written in shortest round-trip form, so an
//! import reproduces every stored bit.
//!
//! ```text
//! {"format":"fedtrust-chain","version":1,"keys":{"0":"<64 hex>",...}}
//! {"height":0,"prev_hash":"00..","proposer":4294967295,"txs":[],"block_hash":".."}
//! {"height":1,"prev_hash":"..","proposer":0,"txs":[{"publisher":0,"worker":3,...}],"block_hash":".."}
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{MinerId, PublisherId, TaskIndex, WorkerId};
use crate::opinion::Opinion;

use super::{Block, Digest, InteractionSummary, KeyRegistry, OpinionTx, SigningKey, TxContent};

pub const FORMAT_TAG: &str = "fedtrust-chain";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ImportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line 1: bad header: {0}")]
    Header(String),
    /// A block line that does not parse. `height` is the position the line
    /// would occupy in the chain.
    #[error("line {line} (block {height}): {message}")]
    Block {
        line: usize,
        height: u64,
        message: String,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    keys: BTreeMap<u32, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TxLine {
    publisher: u32,
    worker: u32,
    opinion: [f64; 3],
    alpha_eff: f64,
    beta_eff: f64,
    task_index: TaskIndex,
    signature: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockLine {
    height: u64,
    prev_hash: String,
    proposer: u32,
    txs: Vec<TxLine>,
    block_hash: String,
}

fn digest_from_hex(s: &str) -> Result<Digest, String> {
    let bytes = hex::decode(s).map_err(|e| format!("bad hex digest: {e}"))?;
    bytes
        .try_into()
        .map_err(|v: Vec<u8>| format!("digest has {} bytes, expected 32", v.len()))
}

impl From<&Block> for BlockLine {
    fn from(b: &Block) -> Self {
        Self {
            height: b.height,
            prev_hash: hex::encode(b.prev_hash),
            proposer: b.proposer.0,
            txs: b
                .txs
                .iter()
                .map(|tx| {
                    let c = &tx.content;
                    TxLine {
                        publisher: c.publisher_id.0,
                        worker: c.worker_id.0,
                        opinion: [
                            c.opinion.belief(),
                            c.opinion.distrust(),
                            c.opinion.uncertainty(),
                        ],
                        alpha_eff: c.summary.alpha_eff,
                        beta_eff: c.summary.beta_eff,
                        task_index: c.summary.task_index,
                        signature: hex::encode(tx.signature),
                    }
                })
                .collect(),
            block_hash: hex::encode(b.block_hash),
        }
    }
}

impl TryFrom<BlockLine> for Block {
    type Error = String;

    fn try_from(l: BlockLine) -> Result<Self, String> {
        let txs = l
            .txs
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                let [b, d, u] = t.opinion;
                let opinion = Opinion::new(b, d, u).map_err(|e| format!("transaction {i}: {e}"))?;
                Ok(OpinionTx {
                    content: TxContent {
                        publisher_id: PublisherId(t.publisher),
                        worker_id: WorkerId(t.worker),
                        opinion,
                        summary: InteractionSummary {
                            alpha_eff: t.alpha_eff,
                            beta_eff: t.beta_eff,
                            task_index: t.task_index,
                        },
                    },
                    signature: digest_from_hex(&t.signature)
                        .map_err(|e| format!("transaction {i}: {e}"))?,
                })
            })
            .collect::<Result<Vec<_>, String>>()?;
        Ok(Block {
            height: l.height,
            prev_hash: digest_from_hex(&l.prev_hash)?,
            txs,
            proposer: MinerId(l.proposer),
            block_hash: digest_from_hex(&l.block_hash)?,
        })
    }
}

pub fn write_chain<W: Write>(
    mut out: W,
    chain: &[Block],
    keys: &KeyRegistry,
) -> std::io::Result<()> {
    let header = Header {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        keys: keys.iter().map(|(p, k)| (p.0, hex::encode(k.0))).collect(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for b in chain {
        serde_json::to_writer(&mut out, &BlockLine::from(b))?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Parses a chain file without verifying it.
pub fn read_chain<R: BufRead>(input: R) -> Result<(Vec<Block>, KeyRegistry), ImportError> {
    let mut lines = input.lines();
    let first = lines
        .next()
        .ok_or_else(|| ImportError::Header("empty file".into()))??;
    let header: Header =
        serde_json::from_str(&first).map_err(|e| ImportError::Header(e.to_string()))?;
    if header.format != FORMAT_TAG || header.version != FORMAT_VERSION {
        return Err(ImportError::Header(format!(
            "unsupported format {} v{}",
            header.format, header.version
        )));
    }
    let mut keys = KeyRegistry::new();
    for (p, k) in header.keys {
        let key = digest_from_hex(&k).map_err(|e| ImportError::Header(format!("key {p}: {e}")))?;
        keys.register(PublisherId(p), SigningKey(key));
    }

    let mut chain = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let height = i as u64;
        let err = |message: String| ImportError::Block {
            line: i + 2,
            height,
            message,
        };
        let parsed: BlockLine = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        chain.push(Block::try_from(parsed).map_err(err)?);
    }
    Ok((chain, keys))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{Ledger, MinerSet};

    #[test]
    fn round_trip_preserves_every_bit() {
        let mut keys = KeyRegistry::new();
        keys.register(PublisherId(0), SigningKey([9; 32]));
        let mut l = Ledger::new(keys);
        let content = TxContent {
            publisher_id: PublisherId(0),
            worker_id: WorkerId(4),
            opinion: Opinion::new(0.1 + 0.2, 0.35, 1.0 - (0.1 + 0.2) - 0.35).unwrap(),
            summary: InteractionSummary {
                alpha_eff: 1.0 / 3.0,
                beta_eff: 2.0f64.sqrt(),
                task_index: 8,
            },
        };
        let tx = l.sign_tx(content).unwrap();
        l.commit(vec![tx], &MinerSet::honest(4), MinerId(1))
            .unwrap();

        let mut buf = Vec::new();
        write_chain(&mut buf, l.chain(), l.keys()).unwrap();
        let (chain, keys) = read_chain(buf.as_slice()).unwrap();
        assert_eq!(chain, l.chain());
        assert_eq!(&keys, l.keys());
        assert!(super::super::verify_chain(&chain, &keys));
    }

    #[test]
    fn malformed_lines_name_the_block() {
        let l = Ledger::new(KeyRegistry::new());
        let mut buf = Vec::new();
        write_chain(&mut buf, l.chain(), l.keys()).unwrap();
        buf.extend_from_slice(b"{\"height\":1,\n");
        match read_chain(buf.as_slice()) {
            Err(ImportError::Block { line, height, .. }) => {
                assert_eq!((line, height), (3, 1));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            read_chain(&b"not json\n"[..]),
            Err(ImportError::Header(_))
        ));
    }
}
