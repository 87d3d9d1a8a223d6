use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::block::{commit_message, GENESIS_CHAIN_ID, GENESIS_SUBJECT};
use super::{verify_transaction, ActorId, Block, Digest, Identity, LedgerError, PublicKey, Transaction, TxKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainKind {
    /// The shared routing chain.
    Main,
    /// One patient's change log.
    Patient,
}

impl ChainKind {
    pub fn allows(self, kind: TxKind) -> bool {
        match self {
            ChainKind::Main => kind.is_routing(),
            ChainKind::Patient => kind.is_change(),
        }
    }
}

impl fmt::Display for ChainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChainKind::Main => "main",
            ChainKind::Patient => "patient",
        })
    }
}

/// Commit signatures needed out of `validators`: ⌊2N/3⌋ + 1.
pub fn quorum(validators: usize) -> usize {
    2 * validators / 3 + 1
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum Violation {
    #[error("chain has no genesis block")]
    MissingGenesis,
    #[error("validator set is empty")]
    EmptyValidatorSet,
    #[error("expected height {expected}, found {found}")]
    HeightMismatch { expected: u64, found: u64 },
    #[error("prev_hash does not match the previous block hash")]
    BrokenLink,
    #[error("tx_id does not match the transaction contents")]
    TxIdMismatch,
    #[error("block_hash does not match the block header")]
    BlockHashMismatch,
    #[error("transaction cannot be encoded: {0}")]
    Malformed(String),
    #[error("genesis must be a REGISTER naming this chain and its subject")]
    BadGenesis,
    #[error("{kind} transactions are not allowed on a {chain} chain")]
    KindNotAllowed { kind: TxKind, chain: ChainKind },
    #[error("creator {0} is not authorized on this chain")]
    UnauthorizedCreator(ActorId),
    #[error("transaction signature is missing or invalid")]
    BadTxSignature,
    #[error("transaction {0} is already recorded")]
    DuplicateTx(Digest),
    #[error("commit signer {0} is not a validator")]
    UnknownValidator(ActorId),
    #[error("validator {0} endorsed the block twice")]
    DuplicateCommitSigner(ActorId),
    #[error("commit signature by {0} does not verify")]
    BadCommitSignature(ActorId),
    #[error("{have} commit signatures, quorum is {need}")]
    InsufficientQuorum { have: usize, need: usize },
}

impl Violation {
    /// Recomputed digests disagree with the stored ones.
    pub fn is_hash_mismatch(&self) -> bool {
        matches!(self, Violation::TxIdMismatch | Violation::BlockHashMismatch | Violation::BrokenLink)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ValidationReport {
    Ok,
    Invalid { height: u64, violation: Violation },
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        matches!(self, ValidationReport::Ok)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationReport::Ok => f.write_str("ok"),
            ValidationReport::Invalid { height, violation } => write!(f, "invalid at height {height}: {violation}"),
        }
    }
}

/// Who may write to and who must endorse a chain.
#[derive(Clone, Debug)]
pub struct Authority {
    chain_id: String,
    kind: ChainKind,
    validators: HashMap<ActorId, Identity>,
    writers: HashMap<ActorId, Identity>,
}

impl Authority {
    pub fn new(chain_id: &str, kind: ChainKind, validators: &[Identity], writers: &[Identity]) -> Self {
        let index = |ids: &[Identity]| ids.iter().map(|i| (i.actor_id.clone(), i.clone())).collect();
        Authority {
            chain_id: chain_id.to_string(),
            kind,
            validators: index(validators),
            writers: index(writers),
        }
    }

    pub fn kind(&self) -> ChainKind {
        self.kind
    }

    pub fn quorum(&self) -> usize {
        quorum(self.validators.len())
    }

    pub fn is_validator(&self, actor: &ActorId) -> bool {
        self.validators.contains_key(actor)
    }

    pub fn validator_count(&self) -> usize {
        self.validators.len()
    }

    /// Identity of an actor allowed to author transactions here.
    pub fn writer(&self, actor: &ActorId) -> Option<&Identity> {
        self.validators.get(actor).or_else(|| self.writers.get(actor))
    }

    pub fn validator_key(&self, actor: &ActorId) -> Option<&PublicKey> {
        self.validators.get(actor).map(|i| &i.public_key)
    }

    /// Admission checks on a transaction proposed for `height`.
    pub fn check_tx(&self, tx: &Transaction, height: u64) -> Result<(), Violation> {
        let id = tx.compute_id().map_err(|e| Violation::Malformed(e.to_string()))?;
        if id != tx.tx_id {
            return Err(Violation::TxIdMismatch);
        }
        if height == 0 {
            let names_chain = tx.description.get(GENESIS_CHAIN_ID) == Some(self.chain_id.as_str());
            let has_subject = tx.description.get(GENESIS_SUBJECT).is_some_and(|s| !s.is_empty());
            if tx.kind != TxKind::Register || !names_chain || !has_subject {
                return Err(Violation::BadGenesis);
            }
        } else if !self.kind.allows(tx.kind) {
            return Err(Violation::KindNotAllowed {
                kind: tx.kind,
                chain: self.kind,
            });
        }
        let creator = self
            .writer(&tx.creator)
            .ok_or_else(|| Violation::UnauthorizedCreator(tx.creator.clone()))?;
        verify_transaction(tx, &creator.public_key).map_err(|_| Violation::BadTxSignature)
    }

    /// Every listed endorsement must come from a distinct validator and verify.
    pub fn check_endorsements(&self, block: &Block) -> Result<usize, Violation> {
        let message = commit_message(&block.block_hash);
        let mut signers = HashSet::new();
        for sig in &block.commit_signatures {
            let key = self
                .validator_key(&sig.validator)
                .ok_or_else(|| Violation::UnknownValidator(sig.validator.clone()))?;
            if !signers.insert(&sig.validator) {
                return Err(Violation::DuplicateCommitSigner(sig.validator.clone()));
            }
            if !key.verify(&message, &sig.signature) {
                return Err(Violation::BadCommitSignature(sig.validator.clone()));
            }
        }
        Ok(signers.len())
    }

    /// Structural checks of `block` as the successor of `prev`, excluding
    /// endorsements. Used both for committed blocks and for proposals.
    pub fn check_header(&self, prev: Option<&Block>, block: &Block) -> Result<(), Violation> {
        let expected_height = prev.map_or(0, |p| p.height + 1);
        if block.height != expected_height {
            return Err(Violation::HeightMismatch {
                expected: expected_height,
                found: block.height,
            });
        }
        let expected_prev = prev.map_or(Digest::ZERO, |p| p.block_hash);
        if block.prev_hash != expected_prev {
            return Err(Violation::BrokenLink);
        }
        self.check_tx(&block.tx, block.height)?;
        if block.block_hash != block.expected_hash() {
            return Err(Violation::BlockHashMismatch);
        }
        Ok(())
    }

    /// Full check of a committed block, quorum included (genesis is exempt
    /// from the quorum requirement).
    pub fn check_committed(&self, prev: Option<&Block>, block: &Block) -> Result<(), Violation> {
        self.check_header(prev, block)?;
        let have = self.check_endorsements(block)?;
        let need = self.quorum();
        if block.height > 0 && have < need {
            return Err(Violation::InsufficientQuorum { have, need });
        }
        Ok(())
    }
}

/// A height-ordered chain together with its permission context.
#[derive(Clone, Debug)]
pub struct Chain {
    pub chain_id: String,
    pub kind: ChainKind,
    pub validator_set: Vec<Identity>,
    /// Non-validator identities granted write permission at creation.
    pub writers: Vec<Identity>,
    pub blocks: Vec<Block>,
}

impl Chain {
    /// Starts a chain from its genesis block, validating it.
    pub fn new(
        chain_id: impl Into<String>,
        kind: ChainKind,
        validator_set: Vec<Identity>,
        writers: Vec<Identity>,
        genesis: Block,
    ) -> Result<Self, LedgerError> {
        let chain = Chain {
            chain_id: chain_id.into(),
            kind,
            validator_set,
            writers,
            blocks: vec![genesis],
        };
        match validate_chain(&chain) {
            ValidationReport::Ok => Ok(chain),
            ValidationReport::Invalid { height, violation } => Err(LedgerError::InvalidBlock { height, violation }),
        }
    }

    pub fn authority(&self) -> Authority {
        Authority::new(&self.chain_id, self.kind, &self.validator_set, &self.writers)
    }

    /// Height of the last block.
    pub fn height(&self) -> u64 {
        self.blocks.len().saturating_sub(1) as u64
    }

    pub fn tip(&self) -> Option<&Block> {
        self.blocks.last()
    }

    pub fn contains_tx(&self, tx_id: &Digest) -> bool {
        self.blocks.iter().any(|b| &b.tx.tx_id == tx_id)
    }

    /// Validates `block` as the next committed block and appends it.
    pub fn append(&mut self, block: Block) -> Result<(), LedgerError> {
        let invalid = |violation| LedgerError::InvalidBlock {
            height: block.height,
            violation,
        };
        self.authority()
            .check_committed(self.tip(), &block)
            .map_err(invalid)?;
        if self.contains_tx(&block.tx.tx_id) {
            return Err(invalid(Violation::DuplicateTx(block.tx.tx_id)));
        }
        self.blocks.push(block);
        Ok(())
    }

    /// Subject named in the genesis block.
    pub fn subject(&self) -> Option<&str> {
        self.blocks.first().and_then(Block::genesis_subject)
    }

    pub fn dump(&self) -> String {
        dump_blocks(&self.blocks)
    }
}

/// Scans the whole chain; reports the lowest height that breaks a rule.
pub fn validate_chain(chain: &Chain) -> ValidationReport {
    if chain.validator_set.is_empty() {
        return ValidationReport::Invalid {
            height: 0,
            violation: Violation::EmptyValidatorSet,
        };
    }
    if chain.blocks.is_empty() {
        return ValidationReport::Invalid {
            height: 0,
            violation: Violation::MissingGenesis,
        };
    }
    let authority = chain.authority();
    let mut seen = HashSet::with_capacity(chain.blocks.len());
    let mut prev: Option<&Block> = None;
    for (index, block) in chain.blocks.iter().enumerate() {
        let mut result = authority.check_committed(prev, block);
        if result.is_ok() && !seen.insert(block.tx.tx_id) {
            result = Err(Violation::DuplicateTx(block.tx.tx_id));
        }
        if let Err(violation) = result {
            return ValidationReport::Invalid {
                height: index as u64,
                violation,
            };
        }
        prev = Some(block);
    }
    ValidationReport::Ok
}

/// Portable dump: one JSON block record per line.
pub fn dump_blocks(blocks: &[Block]) -> String {
    let mut out = String::new();
    for block in blocks {
        // Block fields are plain strings and integers; serialization cannot fail.
        out.push_str(&serde_json::to_string(block).expect("block serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_dump(text: &str) -> Result<Vec<Block>, LedgerError> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(n, line)| {
            serde_json::from_str(line).map_err(|e| LedgerError::Dump {
                line: n + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{Credential, Description, Role, Timestamp};

    struct Fixture {
        validators: Vec<Credential>,
        writer: Credential,
        chain: Chain,
    }

    fn fixture(n_validators: usize) -> Fixture {
        let validators: Vec<_> = (0..n_validators)
            .map(|i| Credential::generate(ActorId::new(format!("v{i}")).unwrap(), Role::Institution))
            .collect();
        let writer = Credential::generate(ActorId::new("ES").unwrap(), Role::Institution);
        let genesis = Block::genesis("patient/paula", "paula", &writer, Timestamp(1)).unwrap();
        let chain = Chain::new(
            "patient/paula",
            ChainKind::Patient,
            validators.iter().map(|c| c.identity().clone()).collect(),
            vec![writer.identity().clone()],
            genesis,
        )
        .unwrap();
        Fixture {
            validators,
            writer,
            chain,
        }
    }

    impl Fixture {
        fn next_block(&self, n: i64) -> Block {
            let tx = Transaction::signed(
                TxKind::Add,
                Description::new().with("n", n.to_string()),
                &self.writer,
                Timestamp(100 + n),
            )
            .unwrap();
            let tip = self.chain.tip().unwrap();
            let mut block = Block::new(tip.height + 1, tip.block_hash, tx);
            for v in &self.validators {
                block.add_commit_signature(block.endorse(v));
            }
            block
        }

        fn grow(&mut self, n: usize) {
            for i in 0..n {
                let b = self.next_block(i as i64);
                self.chain.append(b).unwrap();
            }
        }
    }

    #[test]
    fn quorum_values() {
        let got: Vec<_> = (1..=7).map(quorum).collect();
        assert_eq!(got, vec![1, 2, 3, 3, 4, 5, 5]);
    }

    #[test]
    fn genesis_only_chain_is_ok() {
        assert_eq!(validate_chain(&fixture(1).chain), ValidationReport::Ok);
    }

    #[test]
    fn ten_appended_blocks_validate() {
        let mut f = fixture(4);
        f.grow(10);
        assert_eq!(f.chain.height(), 10);
        assert_eq!(validate_chain(&f.chain), ValidationReport::Ok);
        for h in 1..=10 {
            assert_eq!(f.chain.blocks[h].prev_hash, f.chain.blocks[h - 1].block_hash);
        }
    }

    #[test]
    fn mutated_description_reported_at_its_height() {
        let mut f = fixture(1);
        f.grow(10);
        f.chain.blocks[4].tx.description.insert("n", "forged");
        match validate_chain(&f.chain) {
            ValidationReport::Invalid { height, violation } => {
                assert_eq!(height, 4);
                assert!(violation.is_hash_mismatch(), "{violation}");
            }
            ValidationReport::Ok => panic!("tamper not detected"),
        }
    }

    #[test]
    fn append_rejects_short_quorum() {
        let mut f = fixture(4);
        let mut b = f.next_block(0);
        b.commit_signatures.truncate(2);
        let err = f.chain.append(b).unwrap_err();
        assert!(matches!(
            err,
            LedgerError::InvalidBlock {
                violation: Violation::InsufficientQuorum { have: 2, need: 3 },
                ..
            }
        ));
    }

    #[test]
    fn append_rejects_wrong_kind_and_unknown_creator() {
        let mut f = fixture(1);
        let tip = f.chain.tip().unwrap().clone();
        let tx = Transaction::signed(TxKind::Relocate, Description::new(), &f.writer, Timestamp(9)).unwrap();
        let mut b = Block::new(1, tip.block_hash, tx);
        b.add_commit_signature(b.endorse(&f.validators[0]));
        assert!(matches!(
            f.chain.append(b),
            Err(LedgerError::InvalidBlock {
                violation: Violation::KindNotAllowed { .. },
                ..
            })
        ));

        let stranger = Credential::generate(ActorId::new("XX").unwrap(), Role::Institution);
        let tx = Transaction::signed(TxKind::Add, Description::new(), &stranger, Timestamp(9)).unwrap();
        let mut b = Block::new(1, tip.block_hash, tx);
        b.add_commit_signature(b.endorse(&f.validators[0]));
        assert!(matches!(
            f.chain.append(b),
            Err(LedgerError::InvalidBlock {
                violation: Violation::UnauthorizedCreator(_),
                ..
            })
        ));
    }

    #[test]
    fn duplicate_tx_rejected() {
        let mut f = fixture(1);
        let b1 = f.next_block(0);
        let tx = b1.tx.clone();
        f.chain.append(b1).unwrap();
        let tip = f.chain.tip().unwrap();
        let mut b2 = Block::new(2, tip.block_hash, tx);
        b2.add_commit_signature(b2.endorse(&f.validators[0]));
        assert!(matches!(
            f.chain.append(b2),
            Err(LedgerError::InvalidBlock {
                violation: Violation::DuplicateTx(_),
                ..
            })
        ));
    }

    #[test]
    fn empty_validator_set_invalid() {
        let mut f = fixture(1);
        f.chain.validator_set.clear();
        assert!(matches!(
            validate_chain(&f.chain),
            ValidationReport::Invalid {
                violation: Violation::EmptyValidatorSet,
                ..
            }
        ));
    }

    #[test]
    fn genesis_for_another_chain_rejected() {
        let writer = Credential::generate(ActorId::new("ES").unwrap(), Role::Institution);
        let g = Block::genesis("patient/other", "other", &writer, Timestamp(1)).unwrap();
        let err = Chain::new(
            "patient/paula",
            ChainKind::Patient,
            vec![writer.identity().clone()],
            vec![],
            g,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            LedgerError::InvalidBlock {
                violation: Violation::BadGenesis,
                ..
            }
        ));
    }

    #[test]
    fn dump_parses_back() {
        let mut f = fixture(2);
        f.grow(3);
        let text = f.chain.dump();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(parse_dump(&text).unwrap(), f.chain.blocks);
        assert!(matches!(parse_dump("{nope"), Err(LedgerError::Dump { line: 1, .. })));
    }
}
