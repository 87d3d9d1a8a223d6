//! Hash-chained ledger shared by patient chains and the main chain.
//!
//! Every block carries exactly one signed [`Transaction`]. Blocks link through
//! `prev_hash`, and committed non-genesis blocks hold endorsements from a
//! quorum of the chain's validators.

mod block;
mod chain;
mod digest;
mod identity;
mod tx;

pub use block::{commit_message, compute_block_hash, Block, CommitSignature, GENESIS_CHAIN_ID, GENESIS_SUBJECT};
pub use chain::{dump_blocks, parse_dump, quorum, validate_chain, Authority, Chain, ChainKind, ValidationReport, Violation};
pub use digest::{Digest, DIGEST_LEN};
pub use identity::{ActorId, Credential, CredentialFile, Identity, PublicKey, Role, Signature};
pub use tx::{canonical_bytes, sign_transaction, verify_transaction, Description, Timestamp, Transaction, TxKind};

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("encoding error: {0}")]
    Encoding(String),
    #[error("key error: {0}")]
    Key(String),
    #[error("transaction is not signed")]
    Unsigned,
    #[error("signature does not verify")]
    BadSignature,
    #[error("invalid block at height {height}: {violation}")]
    InvalidBlock { height: u64, violation: Violation },
    #[error("malformed dump line {line}: {reason}")]
    Dump { line: usize, reason: String },
}
