//! Transactions and their canonical byte encoding.
//!
//! Canonical layout (all integers big-endian):
//!
//! ```text
//! magic        7 bytes   "PHT-TX" 0x01
//! kind         u8        ADD=1 MODIFY=2 DELETE=3 REGISTER=4 RELOCATE=5
//! creator      u32 len ‖ UTF-8 bytes
//! created_at   i64       milliseconds since the Unix epoch (UTC)
//! description  u32 count ‖ count × (u32 len ‖ key ‖ u32 len ‖ value)
//! ```
//!
//! Description entries are emitted in lexicographic key order. `tx_id` and
//! `signature` are not part of the encoding: `tx_id` is the SHA-256 of it and
//! the creator signs it.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicI64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{ActorId, Credential, Digest, LedgerError, PublicKey, Signature};

const TX_MAGIC: &[u8; 7] = b"PHT-TX\x01";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TxKind {
    Add,
    Modify,
    Delete,
    Register,
    Relocate,
}

impl TxKind {
    pub fn code(self) -> u8 {
        match self {
            TxKind::Add => 1,
            TxKind::Modify => 2,
            TxKind::Delete => 3,
            TxKind::Register => 4,
            TxKind::Relocate => 5,
        }
    }

    /// Change kinds recorded on patient chains.
    pub fn is_change(self) -> bool {
        matches!(self, TxKind::Add | TxKind::Modify | TxKind::Delete)
    }

    /// Routing kinds recorded on the main chain.
    pub fn is_routing(self) -> bool {
        matches!(self, TxKind::Register | TxKind::Relocate)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TxKind::Add => "ADD",
            TxKind::Modify => "MODIFY",
            TxKind::Delete => "DELETE",
            TxKind::Register => "REGISTER",
            TxKind::Relocate => "RELOCATE",
        }
    }
}

impl fmt::Display for TxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TxKind {
    type Err = LedgerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ADD" => Ok(TxKind::Add),
            "MODIFY" => Ok(TxKind::Modify),
            "DELETE" => Ok(TxKind::Delete),
            "REGISTER" => Ok(TxKind::Register),
            "RELOCATE" => Ok(TxKind::Relocate),
            other => Err(LedgerError::Encoding(format!("unknown transaction kind {other:?}"))),
        }
    }
}

/// Millisecond-precision UTC timestamp.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    /// Wall-clock time, strictly increasing within the process so that two
    /// otherwise identical transactions never share a tx_id.
    pub fn now() -> Self {
        static LAST: AtomicI64 = AtomicI64::new(i64::MIN);
        let wall = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as i64)
            .unwrap_or_default();
        let prev = LAST.fetch_max(wall, Ordering::SeqCst);
        if wall > prev {
            return Timestamp(wall);
        }
        Timestamp(LAST.fetch_add(1, Ordering::SeqCst) + 1)
    }

    pub fn millis(self) -> i64 {
        self.0
    }
}

/// Key-value document attached to a transaction. Keys iterate sorted.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Description(BTreeMap<String, String>);

impl Description {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.insert(key, value);
        self
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.0.insert(key.into(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for Description {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        Description(iter.into_iter().map(|(k, v)| (k.into(), v.into())).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_id: Digest,
    pub kind: TxKind,
    pub description: Description,
    pub creator: ActorId,
    pub created_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<Signature>,
}

impl Transaction {
    /// Builds an unsigned transaction with its `tx_id` filled in.
    pub fn new(
        kind: TxKind,
        description: Description,
        creator: ActorId,
        created_at: Timestamp,
    ) -> Result<Self, LedgerError> {
        let mut tx = Transaction {
            tx_id: Digest::ZERO,
            kind,
            description,
            creator,
            created_at,
            signature: None,
        };
        tx.tx_id = tx.compute_id()?;
        Ok(tx)
    }

    pub fn canonical_bytes(&self) -> Result<Vec<u8>, LedgerError> {
        canonical_bytes(self)
    }

    pub fn compute_id(&self) -> Result<Digest, LedgerError> {
        Ok(Digest::of(&canonical_bytes(self)?))
    }

    /// Builds and signs in one step.
    pub fn signed(
        kind: TxKind,
        description: Description,
        credential: &Credential,
        created_at: Timestamp,
    ) -> Result<Self, LedgerError> {
        let tx = Transaction::new(kind, description, credential.actor_id().clone(), created_at)?;
        let bytes = tx.canonical_bytes()?;
        Ok(Transaction {
            signature: Some(credential.sign(&bytes)),
            ..tx
        })
    }
}

fn put_len(out: &mut Vec<u8>, len: usize) -> Result<(), LedgerError> {
    let len = u32::try_from(len).map_err(|_| LedgerError::Encoding("field longer than u32::MAX".into()))?;
    out.extend_from_slice(&len.to_be_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<(), LedgerError> {
    put_len(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

/// Deterministic encoding of every transaction field except `tx_id` and
/// `signature`. See the module docs for the layout.
pub fn canonical_bytes(tx: &Transaction) -> Result<Vec<u8>, LedgerError> {
    let mut out = Vec::with_capacity(64 + tx.description.len() * 32);
    out.extend_from_slice(TX_MAGIC);
    out.push(tx.kind.code());
    put_str(&mut out, tx.creator.as_str())?;
    out.extend_from_slice(&tx.created_at.0.to_be_bytes());
    put_len(&mut out, tx.description.len())?;
    for (key, value) in tx.description.iter() {
        if key.is_empty() {
            return Err(LedgerError::Encoding("description keys must be non-empty".into()));
        }
        put_str(&mut out, key)?;
        put_str(&mut out, value)?;
    }
    Ok(out)
}

/// Signs `tx` with a raw 32-byte ed25519 secret. The creator field is kept as is.
pub fn sign_transaction(tx: Transaction, secret_key: &[u8]) -> Result<Transaction, LedgerError> {
    let credential = Credential::from_secret(tx.creator.clone(), super::Role::Service, secret_key)?;
    let bytes = tx.canonical_bytes()?;
    Ok(Transaction {
        signature: Some(credential.sign(&bytes)),
        ..tx
    })
}

/// Checks the creator signature over the canonical bytes.
pub fn verify_transaction(tx: &Transaction, public_key: &PublicKey) -> Result<(), LedgerError> {
    let sig = tx.signature.as_ref().ok_or(LedgerError::Unsigned)?;
    let bytes = tx.canonical_bytes()?;
    if public_key.verify(&bytes, sig) {
        Ok(())
    } else {
        Err(LedgerError::BadSignature)
    }
}
