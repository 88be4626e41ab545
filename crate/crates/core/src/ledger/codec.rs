//! Canonical binary encoding, block digests and transaction signatures.
//!
//! Every integer is big-endian and every float is its IEEE-754 bit pattern, so
//! the encoding (and therefore every digest) is bit-reproducible. Blocks are
//! hashed with SHA-256; transactions are signed with HMAC-SHA256 under the
//! publisher's registered key.

use hmac::{Hmac, Mac};
use sha2::{Digest as _, Sha256};

use super::{Block, Digest, OpinionTx, SigningKey, TxContent};

const TX_DOMAIN: &[u8; 4] = b"FTX1";
const BLOCK_DOMAIN: &[u8; 4] = b"FBK1";

pub(crate) fn encode_content(c: &TxContent, out: &mut Vec<u8>) {
    out.extend_from_slice(TX_DOMAIN);
    out.extend_from_slice(&c.publisher_id.0.to_be_bytes());
    out.extend_from_slice(&c.worker_id.0.to_be_bytes());
    for v in [
        c.opinion.belief(),
        c.opinion.distrust(),
        c.opinion.uncertainty(),
        c.summary.alpha_eff,
        c.summary.beta_eff,
    ] {
        out.extend_from_slice(&v.to_bits().to_be_bytes());
    }
    out.extend_from_slice(&c.summary.task_index.to_be_bytes());
}

pub(crate) fn encode_tx(tx: &OpinionTx, out: &mut Vec<u8>) {
    encode_content(&tx.content, out);
    out.extend_from_slice(&tx.signature);
}

pub(crate) fn sign(content: &TxContent, key: &SigningKey) -> Digest {
    let mut buf = Vec::with_capacity(64);
    encode_content(content, &mut buf);
    let mut mac = Hmac::<Sha256>::new_from_slice(&key.0).expect("hmac accepts any key length");
    mac.update(&buf);
    mac.finalize().into_bytes().into()
}

pub(crate) fn verify(content: &TxContent, key: &SigningKey, signature: &Digest) -> bool {
    let mut buf = Vec::with_capacity(64);
    encode_content(content, &mut buf);
    let mut mac = Hmac::<Sha256>::new_from_slice(&key.0).expect("hmac accepts any key length");
    mac.update(&buf);
    mac.verify_slice(signature).is_ok()
}

/// Digest of `(height, prev_hash, proposer, tx_list)`.
pub(crate) fn block_digest(b: &Block) -> Digest {
    let mut buf = Vec::with_capacity(48 + b.txs.len() * 96);
    buf.extend_from_slice(BLOCK_DOMAIN);
    buf.extend_from_slice(&b.height.to_be_bytes());
    buf.extend_from_slice(&b.prev_hash);
    buf.extend_from_slice(&b.proposer.0.to_be_bytes());
    buf.extend_from_slice(&(b.txs.len() as u32).to_be_bytes());
    for tx in &b.txs {
        encode_tx(tx, &mut buf);
    }
    Sha256::digest(&buf).into()
}
