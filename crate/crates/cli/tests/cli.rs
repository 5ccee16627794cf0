use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_revledger");

fn revledger(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).arg("--dir").arg(dir).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn init(dir: &Path) {
    let o = revledger(dir, &["init", "--nodes", "4", "--faulty", "1", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn commit(ws: &Path, work: &str, file: &Path) -> Output {
    revledger(ws, &["commit", "--work", work, "--author", "ann", "--file", file.to_str().unwrap()])
}

fn field<'a>(line: &'a str, key: &str) -> &'a str {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {key} in {line}"))
}

/// Every file under `root` except the lock and the heads cache.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if !path.ends_with(".lock") && !path.ends_with("heads.json") {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Chain files may only grow at the end; every other file is immutable.
fn assert_append_only(before: &BTreeMap<PathBuf, Vec<u8>>, after: &BTreeMap<PathBuf, Vec<u8>>, what: &str) {
    for (path, old) in before {
        let new = after.get(path).unwrap_or_else(|| panic!("{what} removed {}", path.display()));
        if path.ends_with("chain.jsonl") {
            assert!(new.starts_with(old), "{what} rewrote {}", path.display());
        } else {
            assert_eq!(new, old, "{what} modified {}", path.display());
        }
    }
}

#[test]
fn init_rules() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = tmp.path().join("ws");
    let o = revledger(&ws, &["init", "--nodes", "3", "--faulty", "1"]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error: ") && stderr(&o).contains("3f+1"));
    assert!(!ws.exists());

    init(&ws);
    for i in 0..4 {
        let chain = fs::read_to_string(ws.join(format!("node-{i}/chain.jsonl"))).unwrap();
        assert_eq!(chain.lines().count(), 1);
        assert!(ws.join(format!("node-{i}/blobs")).is_dir());
    }
    let before = snapshot(&ws);
    let o = revledger(&ws, &["init", "--nodes", "4", "--faulty", "1"]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error: "));
    assert_eq!(snapshot(&ws), before);
}

#[test]
fn commit_history_show_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = tmp.path().join("ws");
    init(&ws);
    let mut hashes = Vec::new();
    for k in 1..=3 {
        let f = write(tmp.path(), "chapter.txt", &format!("chapter {k} text"));
        let before = snapshot(&ws);
        let o = commit(&ws, "novel-1", &f);
        assert!(o.status.success(), "{}", stderr(&o));
        let line = stdout(&o);
        assert_eq!(field(&line, "revision"), k.to_string());
        assert_eq!(field(&line, "status"), "Valid");
        assert_eq!(field(&line, "height"), k.to_string());
        assert_append_only(&before, &snapshot(&ws), "commit");
        hashes.push(field(&line, "tx").to_string());
    }
    let before = snapshot(&ws);
    let o = revledger(&ws, &["history", "--work", "novel-1"]);
    assert!(o.status.success());
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), 3);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(field(l, "revision"), (i + 1).to_string());
    }
    let o = revledger(&ws, &["history", "--work", "unknown"]);
    assert!(o.status.success() && stdout(&o).is_empty());

    let out = tmp.path().join("rev2.bin");
    let o = revledger(&ws, &["show", "--work", "novel-1", "--revision", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&out).unwrap(), "chapter 2 text");
    let printed = field(&lines[1], "hash");
    assert_eq!(revledger_core::Digest::of(&fs::read(&out).unwrap()).to_hex(), printed);
    let o = revledger(&ws, &["show", "--work", "novel-1", "--revision", "99", "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error: "));

    let o = revledger(&ws, &["verify"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.contains(" ok ")).count(), 4);
    let report = tmp.path().join("r.json");
    let o = revledger(&ws, &["simulate", "--scenario", "fault-free", "--report", report.to_str().unwrap()]);
    assert!(o.status.success());
    assert_append_only(&before, &snapshot(&ws), "queries");
    assert_eq!(snapshot(&ws), before);
}

#[test]
fn double_submit_in_one_command() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = tmp.path().join("ws");
    init(&ws);
    let a = write(tmp.path(), "a.txt", "version a");
    let b = write(tmp.path(), "b.txt", "version b");
    let o = revledger(
        &ws,
        &["commit", "--work", "w", "--author", "ann", "--file", a.to_str().unwrap(), "--also-file", b.to_str().unwrap()],
    );
    let out = stdout(&o);
    let mut statuses: Vec<&str> = out.lines().map(|l| field(l, "status")).collect();
    statuses.sort();
    assert_eq!(statuses, ["InvalidStaleRead", "Valid"]);
    let heights: Vec<&str> = out.lines().map(|l| field(l, "height")).collect();
    assert_eq!(heights[0], heights[1]);
    // Exit status follows the --file transaction alone.
    let file_line = out.lines().next().unwrap();
    assert_eq!(o.status.success(), field(file_line, "status") == "Valid");
    assert_eq!(stdout(&revledger(&ws, &["history", "--work", "w"])).lines().count(), 1);
}

#[test]
fn tamper_block_and_blob() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = tmp.path().join("ws");
    init(&ws);
    for k in 1..=3 {
        let f = write(tmp.path(), "p.txt", &format!("page {k}"));
        assert!(commit(&ws, "comic", &f).status.success());
    }
    let o = revledger(&ws, &["tamper", "--node", "1", "--block", "2", "--offset", "40", "--xor", "0x01"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("tampered node-1 block=2 offset=40"));
    let o = revledger(&ws, &["verify"]);
    assert!(!o.status.success());
    let out = stdout(&o);
    assert!(stderr(&o).starts_with("error: "));
    let node1 = out.lines().find(|l| l.starts_with("node-1 defects=")).unwrap();
    assert_eq!(field(node1, "earliest"), "2");
    for n in [0, 2, 3] {
        assert!(out.contains(&format!("node-{n} ok")), "{out}");
    }
    // Same xor again restores the byte.
    assert!(revledger(&ws, &["tamper", "--node", "1", "--block", "2", "--offset", "40", "--xor", "1"]).status.success());
    assert!(revledger(&ws, &["verify"]).status.success());

    let hist = stdout(&revledger(&ws, &["history", "--work", "comic"]));
    let hash = field(hist.lines().nth(1).unwrap(), "hash").to_string();
    let o = revledger(&ws, &["tamper", "--node", "2", "--blob", &hash, "--offset", "0", "--xor", "4"]);
    assert!(o.status.success());
    let out_file = tmp.path().join("x");
    let o = revledger(&ws, &["show", "--node", "2", "--work", "comic", "--revision", "2", "--out", out_file.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("integrity"));
    let o = revledger(&ws, &["show", "--node", "0", "--work", "comic", "--revision", "2", "--out", out_file.to_str().unwrap()]);
    assert!(o.status.success());
    let out = stdout(&revledger(&ws, &["verify"]));
    let node2 = out.lines().find(|l| l.starts_with("node-2 defects=")).unwrap();
    assert_eq!(field(node2, "earliest"), "2");
    assert!(out.contains("node-2 audit kind=key-mismatch"));

    let before = snapshot(&ws);
    let o = revledger(&ws, &["tamper", "--node", "0", "--block", "1", "--offset", "3", "--xor", "0"]);
    assert!(!o.status.success());
    assert!(stdout(&o).starts_with("warning:"));
    let o = revledger(&ws, &["tamper", "--node", "0", "--block", "1", "--offset", "100000", "--xor", "1"]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error: offset"));
    assert_eq!(snapshot(&ws), before);
}

#[test]
fn missing_replica_and_lock() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = tmp.path().join("ws");
    init(&ws);
    fs::write(ws.join(".lock"), "1").unwrap();
    let o = revledger(&ws, &["verify"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("locked"));
    fs::remove_file(ws.join(".lock")).unwrap();

    fs::remove_dir_all(ws.join("node-3")).unwrap();
    let o = revledger(&ws, &["verify"]);
    assert!(!o.status.success());
    let out = stdout(&o);
    assert!(out.contains("node-3 kind=missing-replica"));
    assert!(out.contains("node-0 ok") && out.contains("node-2 ok"));
    assert!(!ws.join(".lock").exists());
}

#[test]
fn commit_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let ws = tmp.path().join("ws");
    init(&ws);
    let o = commit(&ws, "w", &tmp.path().join("absent.txt"));
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error: reading"));
    let f = write(tmp.path(), "a.txt", "x");
    let o = commit(&ws, "", &f);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error: "));
}

#[test]
fn simulate_bundled_scenarios() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str, tag: &str| {
        let report = tmp.path().join(format!("{name}-{tag}.json"));
        let chains = tmp.path().join(format!("{name}-{tag}"));
        let o = Command::new(BIN)
            .args(["simulate", "--scenario", name, "--report"])
            .arg(&report)
            .arg("--chain-dir")
            .arg(&chains)
            .output()
            .unwrap();
        (o, fs::read(&report).unwrap(), snapshot(&chains))
    };
    for name in ["crash-primary", "equivocate", "fault-free"] {
        let (o1, r1, c1) = run(name, "a");
        let (_, r2, c2) = run(name, "b");
        assert!(o1.status.success(), "{name}: {}", stderr(&o1));
        assert_eq!(r1, r2, "{name} report");
        assert_eq!(c1, c2, "{name} chains");
        let report: serde_json::Value = serde_json::from_slice(&r1).unwrap();
        match name {
            "crash-primary" => {
                assert!(field(&stdout(&o1), "view").parse::<u64>().unwrap() >= 1);
                assert!(report["receipts"].as_array().unwrap().iter().all(|r| r["status"] == "CommittedValid"));
                assert_eq!(report["receipts"].as_array().unwrap().len(), 10);
            }
            "equivocate" => assert!(!report["evidence"].as_array().unwrap().is_empty()),
            _ => assert_eq!(report["metrics"]["phase_bound"]["holds"], true),
        }
    }
    let bad = write(tmp.path(), "bad.json", "{\n  \"config\": ,\n}");
    let o = Command::new(BIN).args(["simulate", "--scenario"]).arg(&bad).args(["--report", "/dev/null"]).output().unwrap();
    assert!(!o.status.success());
    assert!(stderr(&o).contains("line 2 column"), "{}", stderr(&o));
}
