//! Works, revisions and revision transactions.
//!
//! A transaction proposes revision `k + 1` of a work after observing head
//! revision `k` (its read version). Transactions are endorsed, ordered, and
//! only then validated: a transaction whose read version no longer matches
//! the work's head when its block is applied is flagged stale and has no
//! effect. Within a block the first transaction wins.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::content_store::{BlobStore, ContentHash, Payload, StoreError};
use crate::digest::Digest;
use crate::ledger::encoding::{
    CanonicalEncode, EncodeError, Encoder, MAX_AUTHOR_ID_LEN, MAX_WORK_ID_LEN, TAG_REVISION_RECORD,
    TAG_TRANSACTION,
};
use crate::ledger::Block;
use crate::{NodeId, Tick, TxId};

#[derive(Debug, thiserror::Error)]
pub enum RevisionError {
    #[error("malformed: {0}")]
    Malformed(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

fn check_identifier(kind: &str, s: &str, max: usize) -> Result<(), RevisionError> {
    if s.is_empty() {
        return Err(RevisionError::Malformed(format!("{kind} must not be empty")));
    }
    if s.len() > max {
        return Err(RevisionError::Malformed(format!("{kind} is {} bytes, limit is {max}", s.len())));
    }
    if s.contains('\0') {
        return Err(RevisionError::Malformed(format!("{kind} contains a NUL byte")));
    }
    Ok(())
}

macro_rules! identifier {
    ($(#[$meta:meta])* $name:ident, $kind:literal, $max:expr) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Result<$name, RevisionError> {
                let s = s.into();
                check_identifier($kind, &s, $max)?;
                Ok($name(s))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl TryFrom<String> for $name {
            type Error = RevisionError;

            fn try_from(s: String) -> Result<$name, RevisionError> {
                $name::new(s)
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> String {
                id.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

identifier!(
    /// Identifier of a novel or cartoon: non-empty UTF-8, at most 256 bytes, no NUL.
    WorkId,
    "work id",
    MAX_WORK_ID_LEN
);
identifier!(
    /// Non-empty, at most 128 bytes, no NUL.
    AuthorId,
    "author id",
    MAX_AUTHOR_ID_LEN
);

/// The registered fact: revision `revision_number` of `work_id` has content `content_hash`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevisionRecord {
    pub work_id: WorkId,
    pub revision_number: u64,
    pub content_hash: ContentHash,
    pub author_id: AuthorId,
    pub submit_tick: Tick,
}

impl CanonicalEncode for RevisionRecord {
    fn canonical_encode(&self) -> Result<Vec<u8>, EncodeError> {
        let mut enc = Encoder::new(TAG_REVISION_RECORD);
        enc.bytes("work_id", self.work_id.as_str().as_bytes(), MAX_WORK_ID_LEN)?
            .u64(self.revision_number)
            .digest(&self.content_hash)
            .bytes("author_id", self.author_id.as_str().as_bytes(), MAX_AUTHOR_ID_LEN)?
            .u64(self.submit_tick);
        Ok(enc.finish())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endorsement {
    pub node: NodeId,
    pub token: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transaction {
    pub tx_id: TxId,
    pub record: RevisionRecord,
    /// Head revision the proposer observed; 0 means the work did not exist yet.
    pub read_version: u64,
    pub endorsements: Vec<Endorsement>,
}

/// Encodes the record and read version. The id itself and the endorsement
/// list are excluded, so the id is stable while endorsements accumulate.
impl CanonicalEncode for Transaction {
    fn canonical_encode(&self) -> Result<Vec<u8>, EncodeError> {
        let record = self.record.canonical_encode()?;
        let mut enc = Encoder::new(TAG_TRANSACTION);
        enc.nested(&record).u64(self.read_version);
        Ok(enc.finish())
    }
}

impl Transaction {
    pub fn new(record: RevisionRecord, read_version: u64) -> Result<Transaction, EncodeError> {
        let mut tx = Transaction { tx_id: Digest::ZERO, record, read_version, endorsements: Vec::new() };
        tx.tx_id = tx.canonical_digest()?;
        Ok(tx)
    }

    pub fn work_id(&self) -> &WorkId {
        &self.record.work_id
    }

    /// Numbering rule plus id recomputation.
    pub fn is_well_formed(&self) -> bool {
        self.record.revision_number >= 1
            && self.read_version.checked_add(1) == Some(self.record.revision_number)
            && self.canonical_digest().map(|d| d == self.tx_id).unwrap_or(false)
    }
}

/// Simulation-local endorsement key. Tokens are keyed hashes, not signatures.
#[derive(Clone, PartialEq, Eq)]
pub struct NodeSecret(pub [u8; 32]);

impl fmt::Debug for NodeSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("NodeSecret(..)")
    }
}

impl NodeSecret {
    pub fn token_for(&self, tx_id: &TxId) -> Digest {
        Digest::of_parts(&[&self.0, tx_id.as_bytes()])
    }
}

/// Endorsement secrets of every node in a network, derived from the network seed.
#[derive(Debug, Clone, Default)]
pub struct KeyRing {
    secrets: BTreeMap<NodeId, NodeSecret>,
}

impl KeyRing {
    /// secret(i) = SHA-256("revledger/endorsement-secret" || seed_be || i_be)
    pub fn derive(seed: u64, n: usize) -> KeyRing {
        let secrets = (0..n)
            .map(|i| {
                let d = Digest::of_parts(&[
                    b"revledger/endorsement-secret",
                    &seed.to_be_bytes(),
                    &(i as u64).to_be_bytes(),
                ]);
                (NodeId::from(i), NodeSecret(d.0))
            })
            .collect();
        KeyRing { secrets }
    }

    pub fn secret(&self, node: NodeId) -> Option<&NodeSecret> {
        self.secrets.get(&node)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.secrets.keys().copied()
    }
}

/// Add `node`'s endorsement to `tx`. A node already present is left as is.
pub fn endorse(tx: &mut Transaction, node: NodeId, secret: &NodeSecret) -> Endorsement {
    if let Some(existing) = tx.endorsements.iter().find(|e| e.node == node) {
        return existing.clone();
    }
    let endorsement = Endorsement { node, token: secret.token_for(&tx.tx_id) };
    tx.endorsements.push(endorsement.clone());
    endorsement
}

pub fn verify_endorsement(tx_id: &TxId, endorsement: &Endorsement, keys: &KeyRing) -> bool {
    keys.secret(endorsement.node)
        .map(|s| s.token_for(tx_id) == endorsement.token)
        .unwrap_or(false)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndorsementPolicy {
    pub required: usize,
    pub eligible: BTreeSet<NodeId>,
}

impl EndorsementPolicy {
    /// `required` endorsements from any of nodes `0..n`.
    pub fn any_of(n: usize, required: usize) -> EndorsementPolicy {
        EndorsementPolicy { required, eligible: (0..n).map(NodeId::from).collect() }
    }
}

/// True iff at least `policy.required` distinct eligible nodes hold a valid token.
pub fn check_endorsement_policy(tx: &Transaction, policy: &EndorsementPolicy, keys: &KeyRing) -> bool {
    let valid: BTreeSet<NodeId> = tx
        .endorsements
        .iter()
        .filter(|e| policy.eligible.contains(&e.node) && verify_endorsement(&tx.tx_id, e, keys))
        .map(|e| e.node)
        .collect();
    policy.required >= 1 && valid.len() >= policy.required
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Head {
    pub revision_number: u64,
    pub content_hash: ContentHash,
}

/// Latest valid revision of every work.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HeadState {
    heads: BTreeMap<WorkId, Head>,
}

impl HeadState {
    pub fn new() -> HeadState {
        HeadState::default()
    }

    /// Current head revision, 0 for an unknown work.
    pub fn version(&self, work: &WorkId) -> u64 {
        self.heads.get(work).map(|h| h.revision_number).unwrap_or(0)
    }

    pub fn get(&self, work: &WorkId) -> Option<&Head> {
        self.heads.get(work)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&WorkId, &Head)> {
        self.heads.iter()
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    fn advance(&mut self, record: &RevisionRecord) {
        self.heads.insert(
            record.work_id.clone(),
            Head { revision_number: record.revision_number, content_hash: record.content_hash },
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ValidityFlag {
    Valid,
    InvalidStaleRead,
    InvalidMissingContent,
    InvalidMalformed,
}

impl ValidityFlag {
    pub fn is_valid(self) -> bool {
        self == ValidityFlag::Valid
    }
}

impl fmt::Display for ValidityFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Build an unendorsed transaction for the next revision of `work_id`,
/// storing the payload first.
pub fn propose_revision(
    work_id: &str,
    author_id: &str,
    payload: &Payload,
    heads: &HeadState,
    store: &dyn BlobStore,
    submit_tick: Tick,
) -> Result<Transaction, RevisionError> {
    let work_id = WorkId::new(work_id)?;
    let author_id = AuthorId::new(author_id)?;
    let content_hash = store.put(payload)?;
    let read_version = heads.version(&work_id);
    let record = RevisionRecord {
        work_id,
        revision_number: read_version + 1,
        content_hash,
        author_id,
        submit_tick,
    };
    Ok(Transaction::new(record, read_version)?)
}

/// Validity of `tx` against `heads`. Does not mutate anything.
pub fn validate_transaction(tx: &Transaction, heads: &HeadState, store: &dyn BlobStore) -> ValidityFlag {
    if !tx.is_well_formed() {
        ValidityFlag::InvalidMalformed
    } else if tx.read_version != heads.version(tx.work_id()) {
        ValidityFlag::InvalidStaleRead
    } else if !store.contains(&tx.record.content_hash) {
        ValidityFlag::InvalidMissingContent
    } else {
        ValidityFlag::Valid
    }
}

/// Validate a block's transactions in order, advancing heads after each valid one.
pub fn apply_block(heads: &HeadState, block: &Block, store: &dyn BlobStore) -> (HeadState, Vec<ValidityFlag>) {
    let mut next = heads.clone();
    let flags = apply_transactions(&mut next, &block.transactions, store);
    (next, flags)
}

pub(crate) fn apply_transactions(
    heads: &mut HeadState,
    txs: &[Transaction],
    store: &dyn BlobStore,
) -> Vec<ValidityFlag> {
    txs.iter()
        .map(|tx| {
            let flag = validate_transaction(tx, heads, store);
            if flag.is_valid() {
                heads.advance(&tx.record);
            }
            flag
        })
        .collect()
}

/// Head state and per-block validity bitmaps derived by replaying a chain.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Replay {
    pub heads: HeadState,
    /// Indexed by block height; genesis has an empty bitmap.
    pub bitmaps: Vec<Vec<ValidityFlag>>,
}

impl Replay {
    pub fn new() -> Replay {
        Replay { heads: HeadState::new(), bitmaps: vec![Vec::new()] }
    }

    pub fn push(&mut self, block: &Block, store: &dyn BlobStore) -> &[ValidityFlag] {
        let flags = apply_transactions(&mut self.heads, &block.transactions, store);
        self.bitmaps.push(flags);
        self.bitmaps.last().unwrap()
    }

    pub fn of_chain(blocks: &[Block], store: &dyn BlobStore) -> Replay {
        let mut replay = Replay::new();
        for block in blocks.iter().skip(1) {
            replay.push(block, store);
        }
        replay
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub revision_number: u64,
    pub content_hash: ContentHash,
    pub author_id: AuthorId,
    pub block_height: u64,
    pub submit_tick: Tick,
}

/// Valid revisions of `work_id` in revision order. Unknown works give an empty list.
pub fn history(blocks: &[Block], bitmaps: &[Vec<ValidityFlag>], work_id: &WorkId) -> Vec<HistoryEntry> {
    let mut entries: Vec<HistoryEntry> = blocks
        .iter()
        .zip(bitmaps)
        .flat_map(|(block, flags)| {
            block
                .transactions
                .iter()
                .zip(flags)
                .filter(move |(tx, flag)| flag.is_valid() && tx.work_id() == work_id)
                .map(move |(tx, _)| HistoryEntry {
                    revision_number: tx.record.revision_number,
                    content_hash: tx.record.content_hash,
                    author_id: tx.record.author_id.clone(),
                    block_height: block.header.height,
                    submit_tick: tx.record.submit_tick,
                })
        })
        .collect();
    entries.sort_by_key(|e| e.revision_number);
    entries
}
