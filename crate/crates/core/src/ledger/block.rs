use serde::{Deserialize, Serialize};

use super::{ActorId, Credential, Description, Digest, LedgerError, Signature, Timestamp, Transaction, TxKind};

const BLOCK_MAGIC: &[u8; 8] = b"PHT-BLK\x01";
const COMMIT_MAGIC: &[u8; 11] = b"PHT-COMMIT\x01";

/// SHA-256 over `"PHT-BLK" 0x01 ‖ height (u64 BE) ‖ prev_hash ‖ tx_id`.
pub fn compute_block_hash(height: u64, prev_hash: &Digest, tx_id: &Digest) -> Digest {
    Digest::of_parts(&[BLOCK_MAGIC, &height.to_be_bytes(), prev_hash.as_bytes(), tx_id.as_bytes()])
}

/// Bytes a validator signs to endorse a block.
pub fn commit_message(block_hash: &Digest) -> Vec<u8> {
    let mut out = Vec::with_capacity(COMMIT_MAGIC.len() + 32);
    out.extend_from_slice(COMMIT_MAGIC);
    out.extend_from_slice(block_hash.as_bytes());
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitSignature {
    pub validator: ActorId,
    pub signature: Signature,
}

/// A height-ordered, hash-linked container of exactly one transaction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub tx: Transaction,
    pub block_hash: Digest,
    #[serde(default)]
    pub commit_signatures: Vec<CommitSignature>,
}

impl Block {
    /// Unsigned block linking `tx` after `prev_hash`.
    pub fn new(height: u64, prev_hash: Digest, tx: Transaction) -> Self {
        let block_hash = compute_block_hash(height, &prev_hash, &tx.tx_id);
        Block {
            height,
            prev_hash,
            tx,
            block_hash,
            commit_signatures: Vec::new(),
        }
    }

    pub fn expected_hash(&self) -> Digest {
        compute_block_hash(self.height, &self.prev_hash, &self.tx.tx_id)
    }

    pub fn endorse(&self, validator: &Credential) -> CommitSignature {
        CommitSignature {
            validator: validator.actor_id().clone(),
            signature: validator.sign(&commit_message(&self.block_hash)),
        }
    }

    /// Adds `sig` unless that validator already signed.
    pub fn add_commit_signature(&mut self, sig: CommitSignature) -> bool {
        if self.commit_signatures.iter().any(|s| s.validator == sig.validator) {
            return false;
        }
        self.commit_signatures.push(sig);
        self.commit_signatures.sort_by(|a, b| a.validator.cmp(&b.validator));
        true
    }

    /// Genesis block: height 0, zero `prev_hash`, a REGISTER transaction
    /// naming the chain and its subject (a patient id, or `"main"`).
    pub fn genesis(
        chain_id: &str,
        subject: &str,
        creator: &Credential,
        created_at: Timestamp,
    ) -> Result<Self, LedgerError> {
        let desc = Description::new()
            .with(GENESIS_CHAIN_ID, chain_id)
            .with(GENESIS_SUBJECT, subject);
        let tx = Transaction::signed(TxKind::Register, desc, creator, created_at)?;
        Ok(Block::new(0, Digest::ZERO, tx))
    }

    /// Subject named by a genesis block.
    pub fn genesis_subject(&self) -> Option<&str> {
        (self.height == 0).then(|| self.tx.description.get(GENESIS_SUBJECT)).flatten()
    }
}

pub const GENESIS_CHAIN_ID: &str = "chain_id";
pub const GENESIS_SUBJECT: &str = "subject";
