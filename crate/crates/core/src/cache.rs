//! On-disk cache: one file per key, a JSON header line naming every parameter
//! and the format version, followed by a payload.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Environment variable overriding the cache directory.
pub const CACHE_ENV: &str = "MACROBELL_CACHE_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub params: Value,
    pub records: u64,
}

/// Hex SHA-256 of the canonical JSON of `(kind, params)`.
pub fn cache_key(kind: &str, params: &Value) -> String {
    let mut h = Sha256::new();
    h.update(kind.as_bytes());
    h.update([0u8]);
    h.update(serde_json::to_vec(params).expect("json value serializes"));
    hex::encode(h.finalize())
}

#[derive(Clone, Debug)]
pub struct CacheDir {
    pub root: PathBuf,
}

impl CacheDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        CacheDir { root: root.into() }
    }

    /// `$MACROBELL_CACHE_DIR` if set, otherwise `fallback`.
    pub fn from_env_or(fallback: impl Into<PathBuf>) -> Self {
        match std::env::var_os(CACHE_ENV) {
            Some(p) if !p.is_empty() => CacheDir::new(p),
            _ => CacheDir::new(fallback),
        }
    }

    pub fn path_for(&self, kind: &str, params: &Value) -> PathBuf {
        self.root.join(format!("{kind}-{}.cache", &cache_key(kind, params)[..24]))
    }

    pub fn store(&self, kind: &str, params: &Value, records: u64, payload: &[u8]) -> Result<PathBuf> {
        fs::create_dir_all(&self.root)?;
        let path = self.path_for(kind, params);
        let header = Header {
            format: "macrobell-cache".into(),
            version: FORMAT_VERSION,
            kind: kind.into(),
            params: params.clone(),
            records,
        };
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            serde_json::to_writer(&mut f, &header).map_err(|e| Error::Cache(e.to_string()))?;
            f.write_all(b"\n")?;
            f.write_all(payload)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        Ok(path)
    }

    /// Payload for `(kind, params)` if a file exists; a header that does not
    /// match the request is an error rather than a miss.
    pub fn load(&self, kind: &str, params: &Value) -> Result<Option<(Header, Vec<u8>)>> {
        let path = self.path_for(kind, params);
        if !path.exists() {
            return Ok(None);
        }
        read_file(&path, kind, params).map(Some)
    }
}

fn read_file(path: &Path, kind: &str, params: &Value) -> Result<(Header, Vec<u8>)> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: Header = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::Cache(format!("{}: bad header: {e}", path.display())))?;
    if header.version != FORMAT_VERSION || header.kind != kind || &header.params != params {
        return Err(Error::Cache(format!("{}: header does not match the requested parameters", path.display())));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    Ok((header, payload))
}
