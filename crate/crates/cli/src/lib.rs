//! `revledger`: a workspace of N simulated ledger nodes on disk.
//!
//! Every invocation loads the node directories, runs whatever consensus
//! it needs in-process, and writes the results back. See [`Cli`] for the
//! command set.

use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use revledger_core::Digest;

pub mod commands;
pub mod scenarios;
pub mod workspace;

pub use commands::Outcome;

#[derive(Debug, Parser)]
#[command(name = "revledger", version, about = "Tamper-evident revision ledger for creative works")]
pub struct Cli {
    /// Workspace directory.
    #[arg(long, global = true, default_value = ".")]
    pub dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a workspace with one directory per node.
    Init {
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        faulty: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        timeout: u64,
        #[arg(long, default_value_t = 100)]
        max_batch: usize,
        /// Endorsements required per transaction.
        #[arg(long, default_value_t = 1)]
        endorsements: usize,
    },
    /// Register the next revision of a work.
    Commit {
        #[arg(long)]
        work: String,
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        author: String,
        /// A second payload for the same work, submitted in the same tick.
        #[arg(long)]
        also_file: Option<PathBuf>,
    },
    /// List the valid revisions of a work.
    History {
        #[arg(long)]
        work: String,
        #[arg(long, default_value_t = 0)]
        node: usize,
    },
    /// Write one revision's bytes to a file after rehashing them.
    Show {
        #[arg(long)]
        work: String,
        #[arg(long)]
        revision: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        node: usize,
    },
    /// Check every node's chain and blob store.
    Verify,
    /// Corrupt one stored byte (demonstration only).
    Tamper(TamperArgs),
    /// Run a simulation scenario (a file, or a bundled name).
    Simulate {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        report: PathBuf,
        /// Also write each node's chain file under this directory.
        #[arg(long)]
        chain_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct TamperArgs {
    #[arg(long)]
    pub node: usize,
    /// Height of the block record to modify.
    #[arg(long, required_unless_present = "blob", conflicts_with = "blob")]
    pub block: Option<u64>,
    /// Content hash of the blob to modify.
    #[arg(long)]
    pub blob: Option<Digest>,
    /// Byte offset within the record line or blob.
    #[arg(long)]
    pub offset: usize,
    /// Value to xor into the byte: decimal or 0x-prefixed hex.
    #[arg(long, value_parser = parse_byte)]
    pub xor: u8,
}

fn parse_byte(s: &str) -> Result<u8, String> {
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u8::from_str_radix(hex, 16),
        None => s.parse(),
    };
    parsed.map_err(|e| format!("{s}: {e}"))
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<Outcome> {
    let root = cli.dir.as_path();
    match cli.command {
        Command::Init { nodes, faulty, seed, timeout, max_batch, endorsements } => {
            let config = workspace::CliConfig { n: nodes, f: faulty, seed, timeout_ticks: timeout, max_batch, endorsements };
            commands::init(root, config, out)
        }
        Command::Commit { work, file, author, also_file } => {
            commands::commit(root, &commands::CommitArgs { work, author, file, also_file }, out)
        }
        Command::History { work, node } => commands::history(root, &work, node, out),
        Command::Show { work, revision, out: path, node } => commands::show(root, &work, revision, &path, node, out),
        Command::Verify => commands::verify(root, out),
        Command::Tamper(t) => {
            let target = match (t.block, t.blob) {
                (Some(h), _) => commands::TamperTarget::Block(h),
                (None, Some(hash)) => commands::TamperTarget::Blob(hash),
                (None, None) => unreachable!("clap requires one target"),
            };
            commands::tamper(root, t.node, &target, t.offset, t.xor, out)
        }
        Command::Simulate { scenario, report, chain_dir } => {
            commands::simulate(&scenario, &report, chain_dir.as_deref(), out)
        }
    }
}
