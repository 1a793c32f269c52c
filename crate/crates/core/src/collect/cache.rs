use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::provider::ProviderReply;

/// Identity of one provider draw. Model, prompt text and temperature identify the
/// request; slot and attempt tell repeated draws of the same prompt apart.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub model: String,
    /// Temperature as its shortest round-trip decimal form.
    pub temperature: String,
    pub prompt: String,
    pub slot: usize,
    pub attempt: u32,
}

impl CacheKey {
    pub fn new(model: &str, temperature: f64, prompt: &str, slot: usize, attempt: u32) -> Self {
        Self {
            model: model.to_string(),
            temperature: format!("{temperature:?}"),
            prompt: prompt.to_string(),
            slot,
            attempt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CacheLine {
    #[serde(flatten)]
    key: CacheKey,
    reply: ProviderReply,
}

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("cache file {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cache file {} line {line}: {message}", path.display())]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

struct Inner {
    entries: HashMap<CacheKey, ProviderReply>,
    file: Option<(PathBuf, File)>,
}

/// Response cache backed by an append-only JSON-lines log. Safe for concurrent use.
pub struct ResponseCache {
    inner: Mutex<Inner>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self {
            inner: Mutex::new(Inner {
                entries: HashMap::new(),
                file: None,
            }),
        }
    }

    /// Opens (creating if needed) a log file and loads its entries. Later lines win
    /// over earlier ones with the same key.
    pub fn open(path: &Path) -> Result<Self, CacheError> {
        let io_err = |source| CacheError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(io_err)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(io_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheLine =
                    serde_json::from_str(&line).map_err(|e| CacheError::Corrupt {
                        path: path.to_path_buf(),
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                entries.insert(rec.key, rec.reply);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err)?;
        Ok(Self {
            inner: Mutex::new(Inner {
                entries,
                file: Some((path.to_path_buf(), file)),
            }),
        })
    }

    pub fn get(&self, key: &CacheKey) -> Option<ProviderReply> {
        self.inner.lock().unwrap().entries.get(key).cloned()
    }

    pub fn insert(&self, key: CacheKey, reply: ProviderReply) -> Result<(), CacheError> {
        let mut inner = self.inner.lock().unwrap();
        if let Some((path, file)) = inner.file.as_mut() {
            let line = serde_json::to_string(&CacheLine {
                key: key.clone(),
                reply: reply.clone(),
            })
            .expect("cache line serializes");
            writeln!(file, "{line}").map_err(|source| CacheError::Io {
                path: path.clone(),
                source,
            })?;
        }
        inner.entries.insert(key, reply);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/cache.jsonl");
        let key = CacheKey::new("m", 0.0, "prompt\nwith \"quotes\"", 2, 0);
        {
            let c = ResponseCache::open(&path).unwrap();
            c.insert(
                key.clone(),
                ProviderReply {
                    text: "4".into(),
                    metadata: Default::default(),
                },
            )
            .unwrap();
        }
        let c = ResponseCache::open(&path).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.get(&key).unwrap().text, "4");
        assert!(c.get(&CacheKey::new("m", 0.5, "prompt\nwith \"quotes\"", 2, 0)).is_none());
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
    }

    #[test]
    fn corrupt_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        std::fs::write(&path, "{not json}\n").unwrap();
        assert!(matches!(
            ResponseCache::open(&path),
            Err(CacheError::Corrupt { line: 1, .. })
        ));
    }
}
