//! Content-addressed on-disk cache of function results.
//!
//! Layout under the cache root:
//!
//! ```text
//! <root>/<function>/<key hex>.bin   one record per entry
//! <root>/<function>/index.tsv       key, tag, created_at (ms), one line per put
//! ```
//!
//! Record layout (little endian):
//!
//! | offset | size | field                                            |
//! |--------|------|--------------------------------------------------|
//! | 0      | 4    | magic `SLCE`                                     |
//! | 4      | 1    | format version (1)                               |
//! | 5      | 1    | tag: 0 missing, 1 number, 2 bool, 3 text, 4 datetime, 5 file |
//! | 6      | 2    | reserved, zero                                   |
//! | 8      | 8    | created_at, i64 epoch milliseconds               |
//! | 16     | 4    | payload length n, u32                            |
//! | 20     | n    | payload                                          |
//! | 20+n   | 8    | first 8 bytes of SHA-256 over bytes 0..20+n      |
//!
//! Payloads: number and datetime are f64 (datetime in epoch seconds), bool is one
//! byte, text and file are UTF-8. A record that fails any check is deleted and
//! reported as a miss.

use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

use super::value::Value;

const MAGIC: &[u8; 4] = b"SLCE";
const RECORD_VERSION: u8 = 1;
const HEADER_LEN: usize = 20;
const CHECKSUM_LEN: usize = 8;

/// Inputs hashed into a cache key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyParts<'a> {
    pub function: &'a str,
    pub version: &'a str,
    pub kind: &'a str,
    pub model: Option<&'a str>,
    pub transform: Option<&'a str>,
    /// Instance id, or a slice fingerprint for metrics.
    pub subject: &'a str,
    pub options_fingerprint: &'a str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheKey([u8; 32]);

impl CacheKey {
    pub fn new(parts: &KeyParts<'_>) -> Self {
        let mut h = Sha256::new();
        let mut field = |tag: u8, s: Option<&str>| {
            h.update([tag]);
            match s {
                None => h.update([0u8]),
                Some(s) => {
                    h.update([1u8]);
                    h.update((s.len() as u64).to_le_bytes());
                    h.update(s.as_bytes());
                }
            }
        };
        field(b'f', Some(parts.function));
        field(b'v', Some(parts.version));
        field(b'k', Some(parts.kind));
        field(b'm', parts.model);
        field(b't', parts.transform);
        field(b's', Some(parts.subject));
        field(b'o', Some(parts.options_fingerprint));
        CacheKey(h.finalize().into())
    }

    pub fn hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.hex())
    }
}

/// A cached cell value or transform output file reference.
#[derive(Debug, Clone, PartialEq)]
pub enum CachedValue {
    Value(Value),
    File(String),
}

impl CachedValue {
    fn encode(&self) -> (u8, Vec<u8>) {
        match self {
            CachedValue::Value(Value::Missing) => (0, Vec::new()),
            CachedValue::Value(Value::Number(x)) => (1, x.to_le_bytes().to_vec()),
            CachedValue::Value(Value::Bool(b)) => (2, vec![u8::from(*b)]),
            CachedValue::Value(Value::Text(s)) => (3, s.as_bytes().to_vec()),
            CachedValue::Value(Value::Datetime(x)) => (4, x.to_le_bytes().to_vec()),
            CachedValue::File(p) => (5, p.as_bytes().to_vec()),
        }
    }

    fn decode(tag: u8, payload: &[u8]) -> Option<Self> {
        let f64_of = |p: &[u8]| p.try_into().ok().map(f64::from_le_bytes);
        let text = |p: &[u8]| String::from_utf8(p.to_vec()).ok();
        Some(match tag {
            0 if payload.is_empty() => CachedValue::Value(Value::Missing),
            1 => CachedValue::Value(Value::Number(f64_of(payload)?)),
            2 => match payload {
                [0] => CachedValue::Value(Value::Bool(false)),
                [1] => CachedValue::Value(Value::Bool(true)),
                _ => return None,
            },
            3 => CachedValue::Value(Value::Text(text(payload)?)),
            4 => CachedValue::Value(Value::Datetime(f64_of(payload)?)),
            5 => CachedValue::File(text(payload)?),
            _ => return None,
        })
    }
}

fn checksum(bytes: &[u8]) -> [u8; CHECKSUM_LEN] {
    let digest = Sha256::digest(bytes);
    let mut out = [0u8; CHECKSUM_LEN];
    out.copy_from_slice(&digest[..CHECKSUM_LEN]);
    out
}

pub fn encode_record(value: &CachedValue, created_at_ms: i64) -> Vec<u8> {
    let (tag, payload) = value.encode();
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + CHECKSUM_LEN);
    out.extend_from_slice(MAGIC);
    out.push(RECORD_VERSION);
    out.push(tag);
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&created_at_ms.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    let sum = checksum(&out);
    out.extend_from_slice(&sum);
    out
}

/// Returns the value and creation time, or `None` for any malformed record.
pub fn decode_record(bytes: &[u8]) -> Option<(CachedValue, i64)> {
    if bytes.len() < HEADER_LEN + CHECKSUM_LEN || &bytes[..4] != MAGIC || bytes[4] != RECORD_VERSION {
        return None;
    }
    let len = u32::from_le_bytes(bytes[16..20].try_into().ok()?) as usize;
    if bytes.len() != HEADER_LEN + len + CHECKSUM_LEN {
        return None;
    }
    let body = &bytes[..HEADER_LEN + len];
    if checksum(body) != bytes[HEADER_LEN + len..] {
        return None;
    }
    let created = i64::from_le_bytes(bytes[8..16].try_into().ok()?);
    Some((CachedValue::decode(bytes[5], &body[HEADER_LEN..])?, created))
}

/// Directory name for a function id: ASCII alphanumerics, `-`, `_` and `.` are kept,
/// anything else becomes `_`.
pub fn sanitize(function: &str) -> String {
    let s: String = function
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    if s.is_empty() || s.chars().all(|c| c == '.') {
        format!("_{s}")
    } else {
        s
    }
}

/// Concurrent-safe on-disk cache. Identical keys always carry identical values,
/// so racing writers are harmless (last rename wins).
#[derive(Debug)]
pub struct DiskCache {
    root: PathBuf,
    hits: AtomicU64,
    misses: AtomicU64,
    tmp_counter: AtomicU64,
}

impl DiskCache {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(DiskCache { root, hits: AtomicU64::new(0), misses: AtomicU64::new(0), tmp_counter: AtomicU64::new(0) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_path(&self, function: &str, key: &CacheKey) -> PathBuf {
        self.root.join(sanitize(function)).join(format!("{}.bin", key.hex()))
    }

    pub fn get(&self, function: &str, key: &CacheKey) -> Option<CachedValue> {
        let path = self.entry_path(function, key);
        let found = match fs::read(&path) {
            Ok(bytes) => match decode_record(&bytes) {
                Some((value, _)) => Some(value),
                None => {
                    tracing::warn!(path = %path.display(), "corrupted cache entry evicted");
                    let _ = fs::remove_file(&path);
                    None
                }
            },
            Err(_) => None,
        };
        let counter = if found.is_some() { &self.hits } else { &self.misses };
        counter.fetch_add(1, Ordering::Relaxed);
        found
    }

    pub fn put(&self, function: &str, key: &CacheKey, value: &CachedValue) -> io::Result<()> {
        let dir = self.root.join(sanitize(function));
        fs::create_dir_all(&dir)?;
        let created = chrono::Utc::now().timestamp_millis();
        let record = encode_record(value, created);
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = dir.join(format!(".{}.{}.{n}.tmp", key.hex(), std::process::id()));
        fs::write(&tmp, &record)?;
        fs::rename(&tmp, dir.join(format!("{}.bin", key.hex())))?;
        let line = format!("{}\t{}\t{}\n", key.hex(), record[5], created);
        OpenOptions::new().create(true).append(true).open(dir.join("index.tsv"))?.write_all(line.as_bytes())
    }

    /// (hits, misses) since the cache was opened.
    pub fn stats(&self) -> (u64, u64) {
        (self.hits.load(Ordering::Relaxed), self.misses.load(Ordering::Relaxed))
    }

    /// Removes every entry.
    pub fn clear(&self) -> io::Result<()> {
        if self.root.exists() {
            fs::remove_dir_all(&self.root)?;
        }
        fs::create_dir_all(&self.root)
    }
}
