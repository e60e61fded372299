use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LlmError, Stage};

/// One line of the append-only JSONL cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub stage_tag: Stage,
    pub model: String,
    pub prompt_sha256: String,
    pub response: String,
    /// Unix seconds.
    #[serde(default)]
    pub recorded_at: u64,
}

impl CacheRecord {
    pub fn new(key: String, stage: Stage, model: &str, prompt: &str, response: &str) -> Self {
        CacheRecord {
            key,
            stage_tag: stage,
            model: model.to_string(),
            prompt_sha256: hex::encode(Sha256::digest(prompt.as_bytes())),
            response: response.to_string(),
            recorded_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

struct Inner {
    entries: HashMap<String, String>,
    file: Option<File>,
}

/// Content-addressed response store. Reads are served from memory; writes
/// append one JSON line each under a lock.
pub struct ResponseCache {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache {
            path: None,
            inner: Mutex::new(Inner {
                entries: HashMap::new(),
                file: None,
            }),
        }
    }

    /// Opens (creating if needed) a JSONL cache. A torn final line from an
    /// interrupted write is skipped with a warning.
    pub fn open(path: &Path) -> Result<Self, LlmError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (lineno, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(rec) => {
                        entries.insert(rec.key, rec.response);
                    }
                    Err(e) => log::warn!("{}:{}: skipping cache line: {e}", path.display(), lineno + 1),
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        let bytes = fs::read(path)?;
        if bytes.last().is_some_and(|b| *b != b'\n') {
            file.write_all(b"\n")?;
        }
        Ok(ResponseCache {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(Inner {
                entries,
                file: Some(file),
            }),
        })
    }

    /// Loads a cache for replay without opening it for writing.
    pub fn open_read_only(path: &Path) -> Result<Self, LlmError> {
        let cache = Self::open_existing(path)?;
        cache.inner.lock().expect("cache lock").file = None;
        Ok(cache)
    }

    fn open_existing(path: &Path) -> Result<Self, LlmError> {
        if !path.exists() {
            return Err(LlmError::Config(format!("cache file {} does not exist", path.display())));
        }
        Self::open(path)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.inner.lock().expect("cache lock").entries.get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn put(&self, record: CacheRecord) -> Result<(), LlmError> {
        let mut inner = self.inner.lock().expect("cache lock");
        if let Some(file) = inner.file.as_mut() {
            let mut line = serde_json::to_string(&record).expect("record serializes");
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        inner.entries.insert(record.key, record.response);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let cache = ResponseCache::open(&path).unwrap();
            cache
                .put(CacheRecord::new("k1".into(), Stage::Scoring, "m", "p", "7, 9, 8"))
                .unwrap();
        }
        let text = fs::read_to_string(&path).unwrap();
        let rec: CacheRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(rec.stage_tag, Stage::Scoring);
        assert_eq!(rec.prompt_sha256, hex::encode(Sha256::digest(b"p")));

        let reopened = ResponseCache::open_read_only(&path).unwrap();
        assert_eq!(reopened.get("k1").as_deref(), Some("7, 9, 8"));
    }

    #[test]
    fn torn_line_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let good = serde_json::to_string(&CacheRecord::new("k".into(), Stage::Inference, "m", "p", "r")).unwrap();
        fs::write(&path, format!("{good}\n{{\"key\": \"k2\", \"sta")).unwrap();
        let cache = ResponseCache::open(&path).unwrap();
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn read_only_requires_existing_file() {
        let dir = tempfile::tempdir().unwrap();
        assert!(ResponseCache::open_read_only(&dir.path().join("nope.jsonl")).is_err());
    }
}
