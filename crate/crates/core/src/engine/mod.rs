//! Collections, upserts, vector queries and metadata-filtered queries.
//!
//! A [`Database`] owns named collections. Each persistent collection lives
//! in its own subdirectory holding one append-only log; the in-memory
//! variant keeps the same structure on a volatile store.

mod collection;
mod filter;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

pub use collection::{AuditReport, CollectionInfo, ItemError, ItemOutcome, ItemStatus, UpsertReport, RERANK_FACTOR};
pub use filter::{eval_filter, Filter, Predicate};

use collection::Collection;
use crate::error::{Error, Result};
use crate::index::SearchResult;
use crate::storage::{KvEngine, LogEngine, MemoryKv};
use crate::types::{CollectionConfig, Entity, Metadata};

const LOG_FILE: &str = "data.log";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineOptions {
    /// Seeds HNSW level draws, codebook training and training samples.
    pub seed: u64,
    /// Live count at which a quantized collection first trains its codebook.
    pub training_threshold: usize,
    /// Largest filtered subset ranked by exact scan; above it, filtered
    /// queries use the graph.
    pub exact_filter_limit: usize,
    /// Fsync after every upsert or delete batch.
    pub durable_writes: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            seed: 42,
            training_threshold: 1_000,
            exact_filter_limit: 10_000,
            durable_writes: true,
        }
    }
}

type Handle = Arc<RwLock<Collection>>;

pub struct Database {
    root: Option<PathBuf>,
    options: EngineOptions,
    collections: RwLock<BTreeMap<String, Handle>>,
}

impl std::fmt::Debug for Database {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Database")
            .field("root", &self.root)
            .field("collections", &self.collection_names())
            .finish()
    }
}

impl Database {
    /// A database whose contents vanish on drop.
    pub fn in_memory(options: EngineOptions) -> Self {
        Database {
            root: None,
            options,
            collections: RwLock::new(BTreeMap::new()),
        }
    }

    /// Opens (creating if needed) the database rooted at `root`, loading
    /// every collection subdirectory.
    pub fn open(root: impl AsRef<Path>, options: EngineOptions) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let mut collections = BTreeMap::new();
        let mut dirs: Vec<PathBuf> = fs::read_dir(&root)
            .map_err(|e| Error::io(&root, e))?
            .filter_map(|d| d.ok().map(|d| d.path()))
            .filter(|p| p.join(LOG_FILE).is_file())
            .collect();
        dirs.sort();
        for dir in dirs {
            let log = LogEngine::open(dir.join(LOG_FILE))?;
            if log.garbage_bytes() > log.size() / 2 {
                log.compact()?;
            }
            let c = Collection::load(Arc::new(log), options, true)?;
            let name = c.config().name.clone();
            if dir.file_name().and_then(|n| n.to_str()) != Some(name.as_str()) {
                tracing::warn!(dir = %dir.display(), %name, "collection directory name disagrees with its config; skipped");
                continue;
            }
            collections.insert(name, Arc::new(RwLock::new(c)));
        }
        Ok(Database {
            root: Some(root),
            options,
            collections: RwLock::new(collections),
        })
    }

    pub fn options(&self) -> EngineOptions {
        self.options
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    fn handle(&self, name: &str) -> Result<Handle> {
        self.collections
            .read()
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownCollection(name.to_string()))
    }

    pub fn collection_names(&self) -> Vec<String> {
        self.collections.read().keys().cloned().collect()
    }

    pub fn create_collection(&self, config: CollectionConfig) -> Result<CollectionInfo> {
        config.validate()?;
        let mut map = self.collections.write();
        if map.contains_key(&config.name) {
            return Err(Error::NameConflict(config.name));
        }
        let (kv, persistent): (Arc<dyn KvEngine>, bool) = match &self.root {
            Some(root) => {
                let dir = root.join(&config.name);
                if dir.exists() {
                    fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                }
                fs::create_dir(&dir).map_err(|e| Error::io(&dir, e))?;
                (Arc::new(LogEngine::open(dir.join(LOG_FILE))?), true)
            }
            None => (Arc::new(MemoryKv::new()), false),
        };
        let c = Collection::create(config, kv, self.options, persistent)?;
        let info = c.info();
        map.insert(info.config.name.clone(), Arc::new(RwLock::new(c)));
        Ok(info)
    }

    pub fn drop_collection(&self, name: &str) -> Result<()> {
        self.collections
            .write()
            .remove(name)
            .ok_or_else(|| Error::UnknownCollection(name.to_string()))?;
        if let Some(root) = &self.root {
            let dir = root.join(name);
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(())
    }

    pub fn describe(&self, name: &str) -> Result<CollectionInfo> {
        Ok(self.handle(name)?.read().info())
    }

    pub fn upsert(&self, name: &str, entities: Vec<Entity>) -> Result<UpsertReport> {
        self.handle(name)?.write().upsert(entities)
    }

    /// Removes `ids`; returns how many existed.
    pub fn delete(&self, name: &str, ids: &[u64]) -> Result<usize> {
        self.handle(name)?.write().delete(ids)
    }

    /// The entity as stored (original, unnormalized vector).
    pub fn get(&self, name: &str, id: u64) -> Result<Option<Entity>> {
        self.handle(name)?.read().get(id)
    }

    pub fn metadata(&self, name: &str, ids: &[u64]) -> Result<Vec<Option<Metadata>>> {
        let h = self.handle(name)?;
        let c = h.read();
        Ok(ids.iter().map(|id| c.metadata(*id).cloned()).collect())
    }

    /// k nearest entities to `query`. `ef` defaults to `max(k, 64)` and is
    /// raised to `k` when smaller.
    pub fn vector_query(&self, name: &str, query: &[f32], k: usize, ef: Option<usize>) -> Result<SearchResult> {
        self.handle(name)?.read().vector_query(query, k, ef)
    }

    /// k nearest entities among those matching `filter`.
    pub fn mevs_query(&self, name: &str, filter: &Filter, query: &[f32], k: usize, ef: Option<usize>) -> Result<SearchResult> {
        self.handle(name)?.read().mevs_query(filter, query, k, ef)
    }

    /// Ids matching `filter`, ascending.
    pub fn filter_ids(&self, name: &str, filter: &Filter) -> Result<Vec<u64>> {
        self.handle(name)?.read().filter_ids(filter)
    }

    /// Trains the collection's quantizer now instead of waiting for the
    /// threshold. Returns false for unquantized or empty collections.
    pub fn train_quantizer(&self, name: &str) -> Result<bool> {
        self.handle(name)?.write().train()
    }

    pub fn audit(&self, name: &str) -> Result<AuditReport> {
        self.handle(name)?.read().audit()
    }

    /// Snapshots changed indexes and syncs every collection's log.
    pub fn flush(&self) -> Result<()> {
        let handles: Vec<Handle> = self.collections.read().values().cloned().collect();
        for h in handles {
            h.write().flush()?;
        }
        Ok(())
    }

    /// Flushes and closes. Dropping the database does the same but can
    /// only log failures.
    pub fn close(self) -> Result<()> {
        self.flush()
    }
}

impl Drop for Database {
    fn drop(&mut self) {
        if let Err(e) = self.flush() {
            tracing::error!(error = %e, "flush on close failed");
        }
    }
}
