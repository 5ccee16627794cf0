//! Content-addressed blob storage for revision payloads.
//!
//! Blobs are keyed by the SHA-256 of their raw bytes. The filesystem store
//! lays them out as `blobs/<first 2 hex>/<64 hex>` with no envelope, so any
//! external `sha256sum` can check a blob against its file name. Every read
//! rehashes; a blob whose bytes no longer match its key is reported as an
//! integrity error, never returned.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::digest::Digest;

/// SHA-256 of a payload's bytes.
pub type ContentHash = Digest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaKind {
    Text,
    Image,
    Other,
}

impl MediaKind {
    /// Best-effort classification of raw bytes. Stored blobs carry no media
    /// tag, so this is how a payload read back from a store gets one.
    pub fn sniff(bytes: &[u8]) -> MediaKind {
        const IMAGE_MAGIC: &[&[u8]] = &[
            b"\x89PNG\r\n\x1a\n",
            b"\xff\xd8\xff",
            b"GIF87a",
            b"GIF89a",
            b"RIFF",
            b"BM",
        ];
        if IMAGE_MAGIC.iter().any(|m| bytes.starts_with(m)) {
            MediaKind::Image
        } else if std::str::from_utf8(bytes).is_ok() {
            MediaKind::Text
        } else {
            MediaKind::Other
        }
    }
}

/// Revision content: novel text, a cartoon page, or anything else.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payload {
    #[serde(with = "hex_bytes")]
    pub bytes: Vec<u8>,
    pub media_kind: MediaKind,
}

impl Payload {
    pub fn new(bytes: impl Into<Vec<u8>>, media_kind: MediaKind) -> Payload {
        Payload { bytes: bytes.into(), media_kind }
    }

    pub fn text(text: impl Into<String>) -> Payload {
        Payload::new(text.into().into_bytes(), MediaKind::Text)
    }

    pub fn sniffed(bytes: Vec<u8>) -> Payload {
        let media_kind = MediaKind::sniff(&bytes);
        Payload { bytes, media_kind }
    }

    pub fn hash(&self) -> ContentHash {
        hash_content(self)
    }
}

impl fmt::Debug for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Payload")
            .field("len", &self.bytes.len())
            .field("media_kind", &self.media_kind)
            .finish()
    }
}

/// The media tag is not hashed.
pub fn hash_content(payload: &Payload) -> ContentHash {
    Digest::of(&payload.bytes)
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("blob {0} not found")]
    NotFound(ContentHash),
    #[error("blob {expected} failed integrity check: stored bytes hash to {actual}")]
    Integrity { expected: ContentHash, actual: ContentHash },
    #[error("storage i/o failure at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl StoreError {
    fn io(path: &Path, source: io::Error) -> StoreError {
        StoreError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditDefectKind {
    /// Bytes hash to something other than the key they are stored under.
    KeyMismatch,
    /// Entry whose name or location does not follow the fan-out layout.
    Misplaced,
    Unreadable,
}

impl fmt::Display for AuditDefectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AuditDefectKind::KeyMismatch => "key-mismatch",
            AuditDefectKind::Misplaced => "misplaced",
            AuditDefectKind::Unreadable => "unreadable",
        })
    }
}

/// One problem found by [`BlobStore::audit`]. `key` is the name the blob is
/// stored under (a hex digest for well-formed entries).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AuditDefect {
    pub key: String,
    pub kind: AuditDefectKind,
}

impl AuditDefect {
    pub fn hash(&self) -> Option<ContentHash> {
        Digest::from_hex(&self.key).ok()
    }
}

pub trait BlobStore: Send + Sync {
    /// Store a payload under its hash. Idempotent: existing blobs are never rewritten.
    fn put(&self, payload: &Payload) -> Result<ContentHash, StoreError>;

    /// Fetch and rehash a blob.
    fn get(&self, hash: &ContentHash) -> Result<Payload, StoreError>;

    /// Presence only; does not rehash.
    fn contains(&self, hash: &ContentHash) -> bool;

    /// Rehash every blob. Empty iff every blob matches its key.
    fn audit(&self) -> Vec<AuditDefect>;
}

fn check_bytes(expected: &ContentHash, bytes: Vec<u8>) -> Result<Payload, StoreError> {
    let actual = Digest::of(&bytes);
    if actual != *expected {
        return Err(StoreError::Integrity { expected: *expected, actual });
    }
    Ok(Payload::sniffed(bytes))
}

/// Filesystem-backed store rooted at a node directory.
#[derive(Debug, Clone)]
pub struct FsStore {
    blobs: PathBuf,
}

impl FsStore {
    pub const DIR: &'static str = "blobs";

    /// Open (creating if needed) the `blobs/` directory under `root`.
    pub fn open(root: impl AsRef<Path>) -> Result<FsStore, StoreError> {
        let blobs = root.as_ref().join(Self::DIR);
        fs::create_dir_all(&blobs).map_err(|e| StoreError::io(&blobs, e))?;
        Ok(FsStore { blobs })
    }

    pub fn blob_path(&self, hash: &ContentHash) -> PathBuf {
        let hex = hash.to_hex();
        self.blobs.join(&hex[..2]).join(hex)
    }

    pub fn blobs_dir(&self) -> &Path {
        &self.blobs
    }

    /// Every stored key in ascending order.
    pub fn keys(&self) -> Vec<ContentHash> {
        let mut keys: Vec<_> = self
            .walk()
            .into_iter()
            .filter_map(|(_, name, _)| Digest::from_hex(&name).ok())
            .collect();
        keys.sort();
        keys
    }

    /// (fan-out dir name, file name, path) for every file under blobs/, sorted.
    fn walk(&self) -> Vec<(String, String, PathBuf)> {
        let mut out = Vec::new();
        let Ok(dirs) = fs::read_dir(&self.blobs) else {
            return out;
        };
        for dir in dirs.flatten() {
            let dir_name = dir.file_name().to_string_lossy().into_owned();
            let path = dir.path();
            if path.is_dir() {
                if let Ok(files) = fs::read_dir(&path) {
                    for file in files.flatten() {
                        let name = file.file_name().to_string_lossy().into_owned();
                        out.push((dir_name.clone(), name, file.path()));
                    }
                }
            } else {
                out.push((String::new(), dir_name, path));
            }
        }
        out.sort();
        out
    }
}

impl BlobStore for FsStore {
    fn put(&self, payload: &Payload) -> Result<ContentHash, StoreError> {
        let hash = hash_content(payload);
        let path = self.blob_path(&hash);
        if path.exists() {
            return Ok(hash);
        }
        let dir = path.parent().expect("blob path has a fan-out parent");
        fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;
        let mut tmp = tempfile::Builder::new()
            .prefix(".tmp-")
            .tempfile_in(&self.blobs)
            .map_err(|e| StoreError::io(&self.blobs, e))?;
        tmp.write_all(&payload.bytes)
            .and_then(|_| tmp.as_file().sync_all())
            .map_err(|e| StoreError::io(tmp.path(), e))?;
        match tmp.persist_noclobber(&path) {
            Ok(_) => Ok(hash),
            // A concurrent writer published the same content first.
            Err(e) if e.error.kind() == io::ErrorKind::AlreadyExists => Ok(hash),
            Err(e) => Err(StoreError::io(&path, e.error)),
        }
    }

    fn get(&self, hash: &ContentHash) -> Result<Payload, StoreError> {
        let path = self.blob_path(hash);
        match fs::read(&path) {
            Ok(bytes) => check_bytes(hash, bytes),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::NotFound(*hash)),
            Err(e) => Err(StoreError::io(&path, e)),
        }
    }

    fn contains(&self, hash: &ContentHash) -> bool {
        self.blob_path(hash).is_file()
    }

    fn audit(&self) -> Vec<AuditDefect> {
        let mut defects = Vec::new();
        for (dir, name, path) in self.walk() {
            if name.starts_with(".tmp-") && dir.is_empty() {
                continue;
            }
            let key = match Digest::from_hex(&name) {
                Ok(key) if name[..2] == dir => key,
                _ => {
                    defects.push(AuditDefect { key: name, kind: AuditDefectKind::Misplaced });
                    continue;
                }
            };
            match fs::read(&path) {
                Ok(bytes) if Digest::of(&bytes) == key => {}
                Ok(_) => defects.push(AuditDefect { key: name, kind: AuditDefectKind::KeyMismatch }),
                Err(_) => defects.push(AuditDefect { key: name, kind: AuditDefectKind::Unreadable }),
            }
        }
        defects
    }
}

/// In-memory store used by simulated nodes.
#[derive(Debug, Default)]
pub struct MemStore {
    blobs: Mutex<BTreeMap<ContentHash, Vec<u8>>>,
}

impl MemStore {
    pub fn new() -> MemStore {
        MemStore::default()
    }

    pub fn len(&self) -> usize {
        self.blobs.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Overwrite the raw bytes stored under `hash` without rehashing.
    /// Fault injection only; bypasses every integrity guarantee.
    pub fn overwrite_raw(&self, hash: ContentHash, bytes: Vec<u8>) {
        self.blobs.lock().unwrap().insert(hash, bytes);
    }

    pub fn remove(&self, hash: &ContentHash) -> bool {
        self.blobs.lock().unwrap().remove(hash).is_some()
    }
}

impl BlobStore for MemStore {
    fn put(&self, payload: &Payload) -> Result<ContentHash, StoreError> {
        let hash = hash_content(payload);
        self.blobs
            .lock()
            .unwrap()
            .entry(hash)
            .or_insert_with(|| payload.bytes.clone());
        Ok(hash)
    }

    fn get(&self, hash: &ContentHash) -> Result<Payload, StoreError> {
        let bytes = self.blobs.lock().unwrap().get(hash).cloned();
        match bytes {
            Some(bytes) => check_bytes(hash, bytes),
            None => Err(StoreError::NotFound(*hash)),
        }
    }

    fn contains(&self, hash: &ContentHash) -> bool {
        self.blobs.lock().unwrap().contains_key(hash)
    }

    fn audit(&self) -> Vec<AuditDefect> {
        self.blobs
            .lock()
            .unwrap()
            .iter()
            .filter(|(key, bytes)| Digest::of(bytes) != **key)
            .map(|(key, _)| AuditDefect { key: key.to_hex(), kind: AuditDefectKind::KeyMismatch })
            .collect()
    }
}

pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fs_store() -> (tempfile::TempDir, FsStore) {
        let dir = tempfile::tempdir().unwrap();
        let store = FsStore::open(dir.path()).unwrap();
        (dir, store)
    }

    fn flip_byte(path: &Path, offset: usize) {
        let mut bytes = fs::read(path).unwrap();
        bytes[offset] ^= 0x01;
        fs::write(path, bytes).unwrap();
    }

    #[test]
    fn media_kind_does_not_change_hash() {
        let a = Payload::new(b"chapter one".to_vec(), MediaKind::Text);
        let b = Payload::new(b"chapter one".to_vec(), MediaKind::Other);
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn hashing_large_payload_is_deterministic() {
        let bytes: Vec<u8> = (0..1 << 20).map(|i: u32| (i.wrapping_mul(2654435761) >> 13) as u8).collect();
        let p = Payload::new(bytes, MediaKind::Image);
        assert_eq!(hash_content(&p), hash_content(&p.clone()));
    }

    #[test]
    fn put_is_idempotent_and_dedups() {
        let (_dir, store) = fs_store();
        let p1 = Payload::text("draft");
        let p2 = Payload::text("draft, revised");
        let h1 = store.put(&p1).unwrap();
        assert_eq!(store.put(&p1).unwrap(), h1);
        assert_eq!(store.keys(), vec![h1]);
        let h2 = store.put(&p2).unwrap();
        assert_ne!(h1, h2);
        assert_eq!(store.keys().len(), 2);
        assert!(store.audit().is_empty());
    }

    #[test]
    fn layout_is_fanned_out_raw_bytes() {
        let (dir, store) = fs_store();
        let h = store.put(&Payload::text("abc")).unwrap();
        let hex = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad";
        assert_eq!(h.to_hex(), hex);
        let path = dir.path().join("blobs").join("ba").join(hex);
        assert_eq!(fs::read(path).unwrap(), b"abc");
    }

    #[test]
    fn empty_payload_round_trips() {
        let (_dir, store) = fs_store();
        let h = store.put(&Payload::new(Vec::new(), MediaKind::Text)).unwrap();
        assert_eq!(h.to_hex(), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
        assert!(store.get(&h).unwrap().bytes.is_empty());
    }

    #[test]
    fn unknown_hash_is_not_found() {
        let (_dir, store) = fs_store();
        assert!(matches!(store.get(&Digest::of(b"nope")), Err(StoreError::NotFound(_))));
        assert!(matches!(MemStore::new().get(&Digest::of(b"nope")), Err(StoreError::NotFound(_))));
    }

    #[test]
    fn corrupted_blob_is_integrity_error_and_audit_defect() {
        let (_dir, store) = fs_store();
        let h = store.put(&Payload::text("the hero leaves the village")).unwrap();
        let other = store.put(&Payload::text("untouched")).unwrap();
        flip_byte(&store.blob_path(&h), 3);
        match store.get(&h) {
            Err(StoreError::Integrity { expected, .. }) => assert_eq!(expected, h),
            other => panic!("expected integrity error, got {other:?}"),
        }
        assert!(store.get(&other).is_ok());
        let defects = store.audit();
        assert_eq!(defects.len(), 1);
        assert_eq!(defects[0].hash(), Some(h));
    }

    #[test]
    fn renamed_blob_is_key_mismatch() {
        let (_dir, store) = fs_store();
        let h = store.put(&Payload::text("page 12")).unwrap();
        let wrong = Digest::of(b"some other content");
        let target = store.blob_path(&wrong);
        fs::create_dir_all(target.parent().unwrap()).unwrap();
        fs::rename(store.blob_path(&h), &target).unwrap();
        let defects = store.audit();
        assert_eq!(defects, vec![AuditDefect { key: wrong.to_hex(), kind: AuditDefectKind::KeyMismatch }]);
    }

    #[test]
    fn misplaced_entry_is_reported() {
        let (_dir, store) = fs_store();
        let h = store.put(&Payload::text("x")).unwrap();
        let hex = h.to_hex();
        let wrong_dir = store.blobs_dir().join("zz");
        fs::create_dir_all(&wrong_dir).unwrap();
        fs::rename(store.blob_path(&h), wrong_dir.join(&hex)).unwrap();
        assert_eq!(store.audit()[0].kind, AuditDefectKind::Misplaced);
    }

    #[test]
    fn every_single_byte_mutation_is_audited() {
        let (_dir, store) = fs_store();
        let hashes: Vec<_> = ["a", "bc", "def"].iter().map(|s| store.put(&Payload::text(*s)).unwrap()).collect();
        for h in &hashes {
            let path = store.blob_path(h);
            let len = fs::read(&path).unwrap().len();
            for offset in 0..len {
                for xor in 1..=255u8 {
                    let mut bytes = fs::read(&path).unwrap();
                    bytes[offset] ^= xor;
                    fs::write(&path, &bytes).unwrap();
                    assert_eq!(store.audit().len(), 1);
                    bytes[offset] ^= xor;
                    fs::write(&path, &bytes).unwrap();
                }
            }
        }
        assert!(store.audit().is_empty());
    }

    #[test]
    fn concurrent_puts_converge() {
        let (_dir, store) = fs_store();
        let store = std::sync::Arc::new(store);
        let payload = Payload::text("same bytes from eight writers");
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let store = store.clone();
                let payload = payload.clone();
                std::thread::spawn(move || store.put(&payload).unwrap())
            })
            .collect();
        let hashes: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert!(hashes.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(store.keys().len(), 1);
        assert!(store.audit().is_empty());
    }

    #[test]
    fn sniffing() {
        assert_eq!(MediaKind::sniff(b"\x89PNG\r\n\x1a\n...."), MediaKind::Image);
        assert_eq!(MediaKind::sniff("第一章".as_bytes()), MediaKind::Text);
        assert_eq!(MediaKind::sniff(&[0xff, 0x00, 0xfe]), MediaKind::Other);
    }

    proptest! {
        #[test]
        fn mem_store_round_trip(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let store = MemStore::new();
            let p = Payload::sniffed(bytes.clone());
            let h = store.put(&p).unwrap();
            prop_assert_eq!(store.get(&h).unwrap().bytes, bytes);
            prop_assert!(store.audit().is_empty());
        }

        #[test]
        fn distinct_payloads_distinct_hashes(a in proptest::collection::vec(any::<u8>(), 0..64),
                                             b in proptest::collection::vec(any::<u8>(), 0..64)) {
            prop_assume!(a != b);
            prop_assert_ne!(Digest::of(&a), Digest::of(&b));
        }
    }
}
