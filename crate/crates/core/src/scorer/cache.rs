//! Persistent score cache keyed by `(scorer id, source text, target text)`.
//!
//! On disk it is an append-only JSON-lines file; the last record for a key
//! wins when the file is reopened.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("CACHE_IO: {0}")]
    Io(#[from] std::io::Error),
    #[error("CACHE_IO: {0}")]
    Encode(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub scorer: String,
    pub src: String,
    pub tgt: String,
}

impl CacheKey {
    pub fn new(scorer: impl Into<String>, src: impl Into<String>, tgt: impl Into<String>) -> Self {
        Self {
            scorer: scorer.into(),
            src: src.into(),
            tgt: tgt.into(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Record<'a> {
    scorer: std::borrow::Cow<'a, str>,
    src: std::borrow::Cow<'a, str>,
    tgt: std::borrow::Cow<'a, str>,
    score: f64,
}

#[derive(Debug, Default)]
pub struct ScoreCache {
    entries: RwLock<HashMap<CacheKey, f64>>,
    file: Option<Mutex<File>>,
    path: Option<PathBuf>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ScoreCache {
    /// A cache that lives only as long as the process.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a persistent cache file and loads its records.
    /// Unparseable lines, such as a torn final write, are skipped.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CacheError> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
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
                match serde_json::from_str::<Record>(&line) {
                    Ok(r) => {
                        entries.insert(
                            CacheKey::new(r.scorer.into_owned(), r.src.into_owned(), r.tgt.into_owned()),
                            r.score,
                        );
                    }
                    Err(e) => log::warn!("{}:{}: skipping cache record: {e}", path.display(), lineno + 1),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            entries: RwLock::new(entries),
            file: Some(Mutex::new(file)),
            path: Some(path.to_path_buf()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn lookup(&self, key: &CacheKey) -> Option<f64> {
        let found = self.entries.read().expect("cache lock poisoned").get(key).copied();
        match found {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        found
    }

    /// Stores a value in memory and, for persistent caches, appends it to
    /// the file. The in-memory entry is kept even if the write fails.
    pub fn store(&self, key: CacheKey, score: f64) -> Result<(), CacheError> {
        let line = match &self.file {
            Some(_) => {
                let mut s = serde_json::to_string(&Record {
                    scorer: (&*key.scorer).into(),
                    src: (&*key.src).into(),
                    tgt: (&*key.tgt).into(),
                    score,
                })?;
                s.push('\n');
                Some(s)
            }
            None => None,
        };
        self.entries
            .write()
            .expect("cache lock poisoned")
            .insert(key, score);
        if let (Some(file), Some(line)) = (&self.file, line) {
            let mut f = file.lock().expect("cache file lock poisoned");
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn hit_rate(&self) -> f64 {
        let (h, m) = (self.hits(), self.misses());
        if h + m == 0 {
            0.0
        } else {
            h as f64 / (h + m) as f64
        }
    }
}
