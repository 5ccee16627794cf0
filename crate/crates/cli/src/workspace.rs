//! On-disk layout of a ledger workspace:
//!
//! ```text
//! config.json
//! .lock                 present while a command runs
//! node-<i>/chain.jsonl
//! node-<i>/blobs/<2 hex>/<64 hex>
//! node-<i>/heads.json   cache, rebuilt from the chain, never read back
//! ```

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use revledger_core::consensus::{quorum_size, NodeConfig};
use revledger_core::ledger::chain_file::{read_chain, write_chain, CHAIN_FILE};
use revledger_core::pipeline::{NodeParams, NodeRuntime};
use revledger_core::{Block, FsStore, NodeId};
use serde::{Deserialize, Serialize};

pub const CONFIG_FILE: &str = "config.json";
pub const LOCK_FILE: &str = ".lock";
pub const HEADS_FILE: &str = "heads.json";

/// Fixed at init; changing n or f would orphan the existing chains.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub n: usize,
    pub f: usize,
    pub seed: u64,
    pub timeout_ticks: u64,
    pub max_batch: usize,
    pub endorsements: usize,
}

impl CliConfig {
    pub fn validate(&self) -> Result<()> {
        quorum_size(self.n, self.f)?;
        if self.timeout_ticks == 0 || self.max_batch == 0 {
            bail!("timeout and max batch must be positive");
        }
        if self.endorsements == 0 || self.endorsements > self.n {
            bail!("endorsements must be between 1 and {}", self.n);
        }
        Ok(())
    }

    pub fn params(&self, node: usize) -> Result<NodeParams> {
        let config = NodeConfig::new(NodeId::from(node), self.n, self.f, self.timeout_ticks)?;
        Ok(NodeParams::new(config, self.max_batch, self.endorsements, self.seed))
    }
}

/// Exclusive hold on a workspace, released on drop.
#[derive(Debug)]
struct Lock(PathBuf);

impl Lock {
    fn acquire(root: &Path) -> Result<Lock> {
        let path = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Lock(path))
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                bail!("workspace is locked by another invocation ({})", path.display())
            }
            Err(e) => Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

#[derive(Debug)]
pub struct Workspace {
    root: PathBuf,
    config: CliConfig,
    _lock: Lock,
}

pub fn node_dir_name(i: usize) -> String {
    format!("node-{i}")
}

impl Workspace {
    /// Create a workspace in an empty or absent directory.
    pub fn init(root: &Path, config: CliConfig) -> Result<Workspace> {
        config.validate()?;
        if root.exists() {
            let mut entries = fs::read_dir(root).with_context(|| format!("reading {}", root.display()))?;
            if entries.next().is_some() {
                bail!("{} is not empty; refusing to initialise over it", root.display());
            }
        }
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let lock = Lock::acquire(root)?;
        for i in 0..config.n {
            let dir = root.join(node_dir_name(i));
            FsStore::open(&dir)?;
            write_chain(&dir.join(CHAIN_FILE), &[Block::genesis()])?;
        }
        let text = serde_json::to_string_pretty(&config)? + "\n";
        fs::write(root.join(CONFIG_FILE), text)?;
        Ok(Workspace { root: root.to_path_buf(), config, _lock: lock })
    }

    pub fn open(root: &Path) -> Result<Workspace> {
        let path = root.join(CONFIG_FILE);
        if !path.is_file() {
            bail!("{} is not a ledger workspace (no {CONFIG_FILE})", root.display());
        }
        let lock = Lock::acquire(root)?;
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let config: CliConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        config.validate()?;
        Ok(Workspace { root: root.to_path_buf(), config, _lock: lock })
    }

    pub fn config(&self) -> &CliConfig {
        &self.config
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn node_dir(&self, i: usize) -> PathBuf {
        self.root.join(node_dir_name(i))
    }

    pub fn chain_path(&self, i: usize) -> PathBuf {
        self.node_dir(i).join(CHAIN_FILE)
    }

    pub fn check_node(&self, i: usize) -> Result<usize> {
        if i >= self.config.n {
            bail!("node {i} does not exist (workspace has {} nodes)", self.config.n);
        }
        Ok(i)
    }

    pub fn store(&self, i: usize) -> Result<FsStore> {
        let dir = self.node_dir(i);
        if !dir.is_dir() {
            bail!("{} is missing", dir.display());
        }
        Ok(FsStore::open(dir)?)
    }

    /// Strict load of one node: the chain must decode and link.
    pub fn load_node(&self, i: usize) -> Result<NodeRuntime> {
        let store = self.store(i)?;
        let path = self.chain_path(i);
        let chain = read_chain(&path).with_context(|| format!("{} chain", node_dir_name(i)))?;
        Ok(NodeRuntime::resume(self.config.params(i)?, Arc::new(store), chain))
    }

    pub fn write_heads(&self, node: &NodeRuntime) -> Result<()> {
        let path = self.node_dir(node.id().index()).join(HEADS_FILE);
        let text = serde_json::to_string_pretty(node.heads())? + "\n";
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
