//! Blocks, hash chaining and whole-chain verification.

use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::revision::Transaction;
use crate::{BlockHash, Tick};

pub mod chain_file;
pub mod encoding;
pub mod merkle;
mod verify;

use encoding::{CanonicalEncode, EncodeError, Encoder, MAX_PROPOSER_ID_LEN, TAG_BLOCK_HEADER};
pub use verify::{verify_chain, ChainDefect, DefectKind, VerifyReport};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockHeader {
    pub height: u64,
    pub prev_hash: BlockHash,
    pub merkle_root: Digest,
    pub proposer_id: String,
    pub view: u64,
    pub tick: Tick,
    pub tx_count: u64,
}

impl CanonicalEncode for BlockHeader {
    fn canonical_encode(&self) -> Result<Vec<u8>, EncodeError> {
        let mut enc = Encoder::new(TAG_BLOCK_HEADER);
        enc.u64(self.height)
            .digest(&self.prev_hash)
            .digest(&self.merkle_root)
            .bytes("proposer_id", self.proposer_id.as_bytes(), MAX_PROPOSER_ID_LEN)?
            .u64(self.view)
            .u64(self.tick)
            .u64(self.tx_count);
        Ok(enc.finish())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub header: BlockHeader,
    pub transactions: Vec<Transaction>,
    pub block_hash: BlockHash,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BlockError {
    #[error("a non-genesis block needs at least one transaction")]
    Empty,
    #[error("height 0 is reserved for genesis")]
    GenesisHeight,
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

pub const GENESIS_PROPOSER: &str = "genesis";

impl Block {
    /// The fixed first block shared by every node.
    pub fn genesis() -> Block {
        let header = BlockHeader {
            height: 0,
            prev_hash: Digest::ZERO,
            merkle_root: Digest::ZERO,
            proposer_id: GENESIS_PROPOSER.to_string(),
            view: 0,
            tick: 0,
            tx_count: 0,
        };
        let block_hash = header.canonical_digest().expect("genesis header encodes");
        Block { header, transactions: Vec::new(), block_hash }
    }

    pub fn height(&self) -> u64 {
        self.header.height
    }

    /// Merkle root over the recomputed ids of the block's transactions.
    pub fn recompute_merkle_root(&self) -> Digest {
        let ids: Vec<Digest> = self
            .transactions
            .iter()
            .map(|tx| tx.canonical_digest().unwrap_or(tx.tx_id))
            .collect();
        merkle::merkle_root_of(&ids)
    }

    pub fn recompute_hash(&self) -> Option<BlockHash> {
        self.header.canonical_digest().ok()
    }

    /// Everything checkable from the block alone, in field order.
    pub fn integrity_defects(&self) -> Vec<(DefectKind, String)> {
        let mut out = Vec::new();
        if self.header.height == 0 {
            if *self != Block::genesis() {
                out.push((DefectKind::GenesisMismatch, "genesis block differs from the constant".into()));
            }
            return out;
        }
        match self.recompute_hash() {
            Some(h) if h == self.block_hash => {}
            Some(h) => out.push((DefectKind::BlockHashMismatch, format!("stored {} recomputed {}", self.block_hash, h))),
            None => out.push((DefectKind::MalformedRecord, "header does not encode".into())),
        }
        if self.transactions.is_empty() {
            out.push((DefectKind::EmptyBlock, "no transactions".into()));
        }
        if self.header.tx_count != self.transactions.len() as u64 {
            out.push((
                DefectKind::TxCountMismatch,
                format!("header says {} body has {}", self.header.tx_count, self.transactions.len()),
            ));
        }
        for (i, tx) in self.transactions.iter().enumerate() {
            match tx.canonical_digest() {
                Ok(id) if id == tx.tx_id => {}
                Ok(_) => out.push((DefectKind::TxIdMismatch, format!("transaction {i}"))),
                Err(e) => out.push((DefectKind::MalformedRecord, format!("transaction {i}: {e}"))),
            }
            let r = &tx.record;
            if r.revision_number == 0 || tx.read_version.checked_add(1) != Some(r.revision_number) {
                out.push((
                    DefectKind::MalformedRecord,
                    format!("transaction {i}: revision {} after read version {}", r.revision_number, tx.read_version),
                ));
            }
        }
        if self.recompute_merkle_root() != self.header.merkle_root {
            out.push((DefectKind::MerkleRootMismatch, format!("stored {}", self.header.merkle_root)));
        }
        out
    }

    pub fn is_intact(&self) -> bool {
        self.integrity_defects().is_empty()
    }
}

pub fn merkle_root(txs: &[Transaction]) -> Digest {
    let ids: Vec<Digest> = txs.iter().map(|tx| tx.tx_id).collect();
    merkle::merkle_root_of(&ids)
}

pub fn merkle_proof(txs: &[Transaction], index: usize) -> Result<merkle::MerkleProof, merkle::IndexOutOfRange> {
    let ids: Vec<Digest> = txs.iter().map(|tx| tx.tx_id).collect();
    merkle::merkle_proof_of(&ids, index)
}

pub fn build_block(
    height: u64,
    prev_hash: BlockHash,
    transactions: Vec<Transaction>,
    proposer_id: &str,
    view: u64,
    tick: Tick,
) -> Result<Block, BlockError> {
    if height == 0 {
        return Err(BlockError::GenesisHeight);
    }
    if transactions.is_empty() {
        return Err(BlockError::Empty);
    }
    let header = BlockHeader {
        height,
        prev_hash,
        merkle_root: merkle_root(&transactions),
        proposer_id: proposer_id.to_string(),
        view,
        tick,
        tx_count: transactions.len() as u64,
    };
    let block_hash = header.canonical_digest()?;
    Ok(Block { header, transactions, block_hash })
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChainError {
    #[error("expected height {expected}, block has {got}")]
    Height { expected: u64, got: u64 },
    #[error("block {height} does not link to the current tip")]
    Link { height: u64 },
    #[error("block {height} fails integrity checks: {detail}")]
    Integrity { height: u64, detail: String },
    #[error("first block is not the genesis block")]
    Genesis,
}

/// Append-only sequence of blocks starting at genesis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    blocks: Vec<Block>,
}

impl Default for Chain {
    fn default() -> Self {
        Chain::new()
    }
}

impl Chain {
    pub fn new() -> Chain {
        Chain { blocks: vec![Block::genesis()] }
    }

    /// Rebuild a chain, checking every block on the way.
    pub fn from_blocks(blocks: Vec<Block>) -> Result<Chain, ChainError> {
        let mut iter = blocks.into_iter();
        match iter.next() {
            Some(first) if first == Block::genesis() => {}
            _ => return Err(ChainError::Genesis),
        }
        let mut chain = Chain::new();
        for block in iter {
            chain.append(block)?;
        }
        Ok(chain)
    }

    pub fn append(&mut self, block: Block) -> Result<(), ChainError> {
        let expected = self.blocks.len() as u64;
        if block.header.height != expected {
            return Err(ChainError::Height { expected, got: block.header.height });
        }
        if block.header.prev_hash != self.tip().block_hash {
            return Err(ChainError::Link { height: expected });
        }
        if let Some((kind, detail)) = block.integrity_defects().into_iter().next() {
            return Err(ChainError::Integrity { height: expected, detail: format!("{kind}: {detail}") });
        }
        self.blocks.push(block);
        Ok(())
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("chain always holds genesis")
    }

    pub fn height(&self) -> u64 {
        self.tip().header.height
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn get(&self, height: u64) -> Option<&Block> {
        self.blocks.get(height as usize)
    }
}
