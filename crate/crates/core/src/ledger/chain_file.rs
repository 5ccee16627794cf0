//! Chain file: one JSON object per line, one line per block, line `i` is
//! height `i`. Hashes are lowercase hex; payload bytes are not embedded.
//!
//! Only the canonical encoding is ever hashed. The text form is checked
//! separately: a line must re-serialize to exactly its own bytes, so edits
//! that decode to the same values (whitespace, escapes) are still reported.

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::Path;

use super::verify::{verify_slots, DefectKind, VerifyReport};
use super::{Block, Chain, ChainError};
use crate::content_store::BlobStore;

pub const CHAIN_FILE: &str = "chain.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum ChainFileError {
    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {detail}")]
    Record { line: usize, detail: String },
    #[error(transparent)]
    Chain(#[from] ChainError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ChainFileError + '_ {
    move |source| ChainFileError::Io { path: path.display().to_string(), source }
}

pub fn encode_line(block: &Block) -> String {
    serde_json::to_string(block).expect("blocks always serialize")
}

pub fn write_chain(path: &Path, blocks: &[Block]) -> Result<(), ChainFileError> {
    let mut text = String::new();
    for block in blocks {
        text.push_str(&encode_line(block));
        text.push('\n');
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(text.as_bytes()).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| ChainFileError::Io { path: path.display().to_string(), source: e.error })?;
    Ok(())
}

/// Append blocks at the end of an existing file. Earlier bytes are never touched.
pub fn append_blocks(path: &Path, blocks: &[Block]) -> Result<(), ChainFileError> {
    let mut file = OpenOptions::new().append(true).open(path).map_err(io_err(path))?;
    let mut text = String::new();
    for block in blocks {
        text.push_str(&encode_line(block));
        text.push('\n');
    }
    file.write_all(text.as_bytes()).map_err(io_err(path))?;
    file.sync_all().map_err(io_err(path))
}

/// Outcome of decoding one line.
#[derive(Debug, Clone)]
pub enum Slot {
    Parsed(Block),
    Unreadable { kind: DefectKind, detail: String },
}

fn lines(bytes: &[u8]) -> Vec<&[u8]> {
    let mut lines: Vec<&[u8]> = bytes.split(|b| *b == b'\n').collect();
    if lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines
}

pub fn decode_line(line: &[u8]) -> Slot {
    match serde_json::from_slice::<Block>(line) {
        Ok(block) if encode_line(&block).as_bytes() == line => Slot::Parsed(block),
        Ok(_) => Slot::Unreadable {
            kind: DefectKind::NonCanonicalRecord,
            detail: "record does not match its canonical text form".into(),
        },
        Err(e) => Slot::Unreadable { kind: DefectKind::UnparseableRecord, detail: e.to_string() },
    }
}

pub fn read_slots(path: &Path) -> Result<Vec<Slot>, ChainFileError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(lines(&bytes).into_iter().map(decode_line).collect())
}

/// Strict load: any undecodable line or broken link is an error.
pub fn read_chain(path: &Path) -> Result<Chain, ChainFileError> {
    let mut blocks = Vec::new();
    for (line, slot) in read_slots(path)?.into_iter().enumerate() {
        match slot {
            Slot::Parsed(block) => blocks.push(block),
            Slot::Unreadable { kind, detail } => {
                return Err(ChainFileError::Record { line, detail: format!("{kind}: {detail}") })
            }
        }
    }
    Ok(Chain::from_blocks(blocks)?)
}

/// Decode leniently and verify. Undecodable lines become defects at their
/// line's height; everything else goes through [`super::verify_chain`].
pub fn verify_chain_file(path: &Path, store: &dyn BlobStore) -> Result<(VerifyReport, Vec<Option<Block>>), ChainFileError> {
    let slots = read_slots(path)?;
    let mut unreadable = VerifyReport::default();
    let blocks: Vec<Option<Block>> = slots
        .into_iter()
        .enumerate()
        .map(|(i, slot)| match slot {
            Slot::Parsed(b) => Some(b),
            Slot::Unreadable { kind, detail } => {
                unreadable.push(i as u64, kind, detail);
                None
            }
        })
        .collect();
    let refs: Vec<Option<&Block>> = blocks.iter().map(Option::as_ref).collect();
    let mut report = verify_slots(&refs, store);
    report.merge(unreadable);
    Ok((report, blocks))
}
