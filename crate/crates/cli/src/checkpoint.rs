//! Append-only JSONL checkpoint for sweeps. The first line names the run
//! parameters and their hash; each later line is one finished point.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use macrobell::belltest::{BellReport, MixtureReport};
use macrobell::measure::ObservableKind;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Failure, Outcome};

const MAGIC: &str = "macrobell-sweep-v1";

pub type Key = (u64, u64, ObservableKind);

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    checkpoint: String,
    params_hash: String,
    params: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointResult {
    Report(BellReport),
    Mixture(MixtureReport),
    Failed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub kth: u64,
    pub nsigma: u64,
    pub kind: ObservableKind,
    pub result: PointResult,
}

impl Record {
    pub fn key(&self) -> Key {
        (self.kth, self.nsigma, self.kind)
    }
}

pub fn params_hash(params: &Value) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(params).expect("json value serializes")))
}

pub struct Checkpoint {
    path: Option<PathBuf>,
    file: Option<File>,
    done: BTreeMap<Key, Record>,
}

impl Checkpoint {
    /// In-memory only.
    pub fn none() -> Self {
        Checkpoint { path: None, file: None, done: BTreeMap::new() }
    }

    /// Open or create. An existing file whose parameter hash differs is refused.
    pub fn open(path: &Path, params: &Value) -> Outcome<Self> {
        let hash = params_hash(params);
        let mut done = BTreeMap::new();
        if path.exists() {
            let mut text = fs::read_to_string(path)?;
            // an interrupted write leaves a partial last line; drop it
            if !text.is_empty() && !text.ends_with('\n') {
                let keep = text.rfind('\n').map_or(0, |i| i + 1);
                text.truncate(keep);
                fs::write(path, &text)?;
            }
            let mut lines = text.lines();
            if let Some(first) = lines.next() {
                let h: Header = serde_json::from_str(first).map_err(|e| {
                    Failure::usage(format!("{} is not a sweep checkpoint: {e}", path.display()))
                })?;
                if h.checkpoint != MAGIC {
                    return Err(Failure::usage(format!(
                        "{}: checkpoint format '{}' is not '{MAGIC}'",
                        path.display(),
                        h.checkpoint
                    )));
                }
                if h.params_hash != hash {
                    return Err(Failure::usage(format!(
                        "checkpoint {} was written with different parameters (hash {} vs {}); \
                         refusing to mix runs. Stored parameters: {}. Current: {}. \
                         Use another checkpoint path or remove the file.",
                        path.display(),
                        &h.params_hash[..12],
                        &hash[..12],
                        h.params,
                        params
                    )));
                }
                for (no, line) in lines.enumerate() {
                    let r: Record = serde_json::from_str(line).map_err(|e| {
                        Failure::usage(format!("{} line {}: {e}", path.display(), no + 2))
                    })?;
                    done.insert(r.key(), r);
                }
            }
        }
        let fresh = !path.exists() || fs::metadata(path)?.len() == 0;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            let h = Header { checkpoint: MAGIC.into(), params_hash: hash, params: params.clone() };
            writeln!(file, "{}", serde_json::to_string(&h)?)?;
            file.flush()?;
        }
        Ok(Checkpoint { path: Some(path.to_path_buf()), file: Some(file), done })
    }

    pub fn get(&self, key: &Key) -> Option<&Record> {
        self.done.get(key)
    }

    pub fn len(&self) -> usize {
        self.done.len()
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn record(&mut self, r: Record) -> Outcome<()> {
        if let Some(f) = self.file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&r)?)?;
            f.flush()?;
        }
        self.done.insert(r.key(), r);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn rec(k: u64) -> Record {
        Record { kth: k, nsigma: 2, kind: ObservableKind::Binary, result: PointResult::Failed("x".into()) }
    }

    #[test]
    fn resume_and_refuse() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let params = json!({"mean": 2.0});
        let mut c = Checkpoint::open(&p, &params).unwrap();
        c.record(rec(1)).unwrap();
        c.record(rec(2)).unwrap();
        drop(c);
        let c = Checkpoint::open(&p, &params).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.get(&(2, 2, ObservableKind::Binary)), Some(&rec(2)));
        let e = Checkpoint::open(&p, &json!({"mean": 3.0})).err().unwrap();
        assert!(e.msg.contains("refusing"));
    }

    #[test]
    fn partial_line_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let params = json!({"r": 0.1});
        let mut c = Checkpoint::open(&p, &params).unwrap();
        c.record(rec(7)).unwrap();
        drop(c);
        let mut f = OpenOptions::new().append(true).open(&p).unwrap();
        write!(f, "{{\"kth\": 8, \"nsig").unwrap();
        drop(f);
        let mut c = Checkpoint::open(&p, &params).unwrap();
        assert_eq!(c.len(), 1);
        c.record(rec(8)).unwrap();
        drop(c);
        assert_eq!(Checkpoint::open(&p, &params).unwrap().len(), 2);
    }
}
