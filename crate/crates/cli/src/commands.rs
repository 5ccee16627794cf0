use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use revledger_core::ledger::chain_file::{append_blocks, write_chain, CHAIN_FILE};
use revledger_core::pipeline::{verify_stored, NodeVerify, ReceiptStatus};
use revledger_core::sim::{PayloadSpec, Scenario, SimConfig, Simulation, Submission, Workload};
use revledger_core::{Digest, FsStore, NodeId};

use crate::scenarios;
use crate::workspace::{node_dir_name, CliConfig, Workspace};

/// How a command ended when it ran to completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// The command's success condition does not hold; the reason is printed as an error line.
    Failure(String),
}

pub fn init(root: &Path, config: CliConfig, out: &mut dyn Write) -> Result<Outcome> {
    let ws = Workspace::init(root, config)?;
    let c = ws.config();
    writeln!(out, "initialised {} nodes={} faulty={} seed={}", root.display(), c.n, c.f, c.seed)?;
    for i in 0..c.n {
        writeln!(out, "{} height=0", node_dir_name(i))?;
    }
    Ok(Outcome::Success)
}

fn status_text(status: ReceiptStatus) -> String {
    match status {
        ReceiptStatus::Pending => "Pending".into(),
        ReceiptStatus::CommittedValid => "Valid".into(),
        ReceiptStatus::CommittedInvalid(flag) => flag.to_string(),
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_else(|| "-".into())
}

pub struct CommitArgs {
    pub work: String,
    pub author: String,
    pub file: PathBuf,
    pub also_file: Option<PathBuf>,
}

/// Run one fault-free consensus round over every node of the workspace.
pub fn commit(root: &Path, args: &CommitArgs, out: &mut dyn Write) -> Result<Outcome> {
    let mut files = vec![&args.file];
    files.extend(args.also_file.as_ref());
    let payloads = files
        .iter()
        .map(|f| fs::read(f).with_context(|| format!("reading {}", f.display())))
        .collect::<Result<Vec<_>>>()?;

    let ws = Workspace::open(root)?;
    let cfg = ws.config().clone();
    let nodes = (0..cfg.n).map(|i| ws.load_node(i)).collect::<Result<Vec<_>>>()?;
    let heights: Vec<u64> = nodes.iter().map(|n| n.chain().height()).collect();
    if heights.iter().any(|h| *h != heights[0]) {
        bail!("nodes disagree on chain height {heights:?}; run verify");
    }
    let start = nodes.iter().map(|n| n.chain().tip().header.tick).max().unwrap_or(0) + 1;

    let config = SimConfig {
        delay_min: 1,
        delay_max: 1,
        max_ticks: 100 * cfg.timeout_ticks,
        timeout_ticks: cfg.timeout_ticks,
        max_batch: cfg.max_batch,
        endorsements: cfg.endorsements,
        ..SimConfig::honest(cfg.n, cfg.f, cfg.seed)
    };
    let workload = Workload {
        items: payloads
            .into_iter()
            .map(|bytes| Submission {
                tick: start,
                node: NodeId(0),
                work_id: args.work.clone(),
                author_id: args.author.clone(),
                payload: PayloadSpec::Bytes(bytes),
            })
            .collect(),
    };
    let mut sim = Simulation::with_nodes(config, nodes, start)?;
    let report = sim.run(&workload)?;

    for node in sim.nodes() {
        let i = node.id().index();
        let new = &node.chain().blocks()[heights[i] as usize + 1..];
        if !new.is_empty() {
            append_blocks(&ws.chain_path(i), new)?;
        }
        ws.write_heads(node)?;
    }

    if let Some(r) = report.rejected.first() {
        return Ok(Outcome::Failure(format!("submission rejected: {}", r.reason)));
    }
    for r in &report.receipts {
        writeln!(
            out,
            "tx={} work={} revision={} status={} height={} tick={}",
            r.tx_id,
            r.work_id.as_str(),
            r.revision_number,
            status_text(r.status),
            opt(r.block_height),
            opt(r.commit_tick)
        )?;
    }
    if report.stalled {
        return Ok(Outcome::Failure(format!("consensus stalled after {} ticks", report.total_ticks)));
    }
    match report.receipts.first().map(|r| r.status) {
        Some(ReceiptStatus::CommittedValid) => Ok(Outcome::Success),
        Some(status) => Ok(Outcome::Failure(format!("revision committed as {}", status_text(status)))),
        None => Ok(Outcome::Failure("no receipt".into())),
    }
}

pub fn history(root: &Path, work: &str, node: usize, out: &mut dyn Write) -> Result<Outcome> {
    let ws = Workspace::open(root)?;
    let node = ws.load_node(ws.check_node(node)?)?;
    for e in node.history(work) {
        writeln!(
            out,
            "revision={} hash={} author={} height={} tick={}",
            e.revision_number,
            e.content_hash,
            e.author_id.as_str(),
            e.block_height,
            e.submit_tick
        )?;
    }
    Ok(Outcome::Success)
}

pub fn show(root: &Path, work: &str, revision: u64, out_path: &Path, node: usize, out: &mut dyn Write) -> Result<Outcome> {
    let ws = Workspace::open(root)?;
    let node = ws.load_node(ws.check_node(node)?)?;
    let payload = node.show(work, revision)?;
    fs::write(out_path, &payload.bytes).with_context(|| format!("writing {}", out_path.display()))?;
    writeln!(
        out,
        "revision={} hash={} bytes={} kind={:?} out={}",
        revision,
        payload.hash(),
        payload.bytes.len(),
        payload.media_kind,
        out_path.display()
    )?;
    Ok(Outcome::Success)
}

fn print_node(out: &mut dyn Write, name: &str, v: &NodeVerify, blocks: usize) -> Result<()> {
    if v.is_ok() {
        writeln!(out, "{name} ok blocks={blocks}")?;
        return Ok(());
    }
    let count = v.report.defects.len() + v.audit.len();
    writeln!(out, "{name} defects={count} earliest={}", opt(v.report.earliest_height()))?;
    for d in &v.report.defects {
        writeln!(out, "{name} height={} kind={} {}", d.height, d.kind, d.detail)?;
    }
    for a in &v.audit {
        writeln!(out, "{name} audit kind={} key={}", a.kind, a.key)?;
    }
    Ok(())
}

/// Chain and store checks on every node directory.
pub fn verify(root: &Path, out: &mut dyn Write) -> Result<Outcome> {
    let ws = Workspace::open(root)?;
    let cfg = ws.config().clone();
    let mut failing = Vec::new();
    for i in 0..cfg.n {
        let name = node_dir_name(i);
        let chain_path = ws.chain_path(i);
        if !ws.node_dir(i).is_dir() || !chain_path.is_file() {
            writeln!(out, "{name} defects=1 earliest=-")?;
            writeln!(out, "{name} kind=missing-replica {} is missing", chain_path.display())?;
            failing.push(name);
            continue;
        }
        let store = FsStore::open(ws.node_dir(i))?;
        let params = cfg.params(i)?;
        let v = verify_stored(&chain_path, &store, &params.policy, &params.keys)?;
        let blocks = fs::read(&chain_path)?.iter().filter(|b| **b == b'\n').count();
        print_node(out, &name, &v, blocks)?;
        if !v.is_ok() {
            failing.push(name);
        }
    }
    if failing.is_empty() {
        Ok(Outcome::Success)
    } else {
        Ok(Outcome::Failure(format!("integrity defects on {}", failing.join(","))))
    }
}

pub enum TamperTarget {
    Block(u64),
    Blob(Digest),
}

/// Flip bits of one stored byte in place. Exists only to demonstrate detection.
pub fn tamper(root: &Path, node: usize, target: &TamperTarget, offset: usize, xor: u8, out: &mut dyn Write) -> Result<Outcome> {
    let ws = Workspace::open(root)?;
    let node = ws.check_node(node)?;
    if xor == 0 {
        writeln!(out, "warning: xor with 0 leaves the byte unchanged; nothing written")?;
        return Ok(Outcome::Failure("--xor must be nonzero".into()));
    }
    let (path, start, len, what) = match target {
        TamperTarget::Block(height) => {
            let path = ws.chain_path(node);
            let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            let mut start = 0;
            let mut found = None;
            for (h, line) in bytes.split(|b| *b == b'\n').enumerate() {
                if h as u64 == *height && start < bytes.len() {
                    found = Some((start, line.len()));
                    break;
                }
                start += line.len() + 1;
            }
            let Some((start, len)) = found else { bail!("block {height} is not in {}", path.display()) };
            (path, start, len, format!("block={height}"))
        }
        TamperTarget::Blob(hash) => {
            let path = FsStore::open(ws.node_dir(node))?.blob_path(hash);
            let len = fs::metadata(&path).with_context(|| format!("blob {hash}"))?.len() as usize;
            (path, 0, len, format!("blob={hash}"))
        }
    };
    if offset >= len {
        bail!("offset {offset} out of range: target has {len} bytes");
    }
    let mut bytes = fs::read(&path)?;
    let before = bytes[start + offset];
    bytes[start + offset] ^= xor;
    fs::write(&path, &bytes).with_context(|| format!("writing {}", path.display()))?;
    writeln!(
        out,
        "tampered {} {what} offset={offset} byte {before:#04x}->{:#04x}",
        node_dir_name(node),
        bytes[start + offset]
    )?;
    Ok(Outcome::Success)
}

fn load_scenario(name: &str) -> Result<Scenario> {
    let path = Path::new(name);
    let (label, text) = if path.is_file() {
        (path.display().to_string(), fs::read_to_string(path).with_context(|| format!("reading {name}"))?)
    } else if let Some(text) = scenarios::bundled(name) {
        (format!("bundled:{name}"), text.to_string())
    } else {
        bail!("{name} is neither a file nor a bundled scenario ({})", scenarios::names().join(", "));
    };
    serde_json::from_str(&text)
        .map_err(|e| anyhow::anyhow!("{label}: line {} column {}: {e}", e.line(), e.column()))
}

pub fn simulate(scenario: &str, report_path: &Path, chain_dir: Option<&Path>, out: &mut dyn Write) -> Result<Outcome> {
    let scenario = load_scenario(scenario)?;
    let mut sim = Simulation::new(scenario.config)?;
    let report = sim.run(&scenario.workload)?;
    fs::write(report_path, report.to_json()).with_context(|| format!("writing {}", report_path.display()))?;
    if let Some(dir) = chain_dir {
        for node in sim.nodes() {
            let node_dir = dir.join(node_dir_name(node.id().index()));
            fs::create_dir_all(&node_dir)?;
            write_chain(&node_dir.join(CHAIN_FILE), node.chain().blocks())?;
        }
    }
    let m = &report.metrics;
    writeln!(
        out,
        "seed={} ticks={} stalled={} safety={} view={} valid={} throughput={} latency_p50={} latency_p99={} evidence={}",
        report.seed,
        report.total_ticks,
        report.stalled,
        if report.safety_ok { "ok" } else { "violated" },
        report.final_view(),
        report.throughput.committed_valid,
        report.throughput.per_tick,
        opt(m.latency_p50),
        opt(m.latency_p99),
        report.evidence.len()
    )?;
    if report.safety_ok {
        Ok(Outcome::Success)
    } else {
        Ok(Outcome::Failure("honest nodes committed different blocks".into()))
    }
}
