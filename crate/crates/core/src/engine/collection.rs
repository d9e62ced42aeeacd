use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::filter::{check_field_types, eval_filter, Filter};
use super::EngineOptions;
use crate::distance::DistanceKernel;
use crate::error::{Error, Result};
use crate::index::{prepare_vector, FlatIndex, Hit, HnswIndex, HnswParams, Index, SearchResult, SearchStats, TopK};
use crate::quantization::{Code, Quantizer, MAX_TRAINING_SAMPLE};
use crate::storage::{decode_entity, encode_entity, load_snapshot, snapshot_index, BatchOp, KvEngine};
use crate::types::{validate_entity, CollectionConfig, Entity, IndexChoice, Metadata, QuantizationMode};

/// Quantized candidates fetched per requested hit before exact re-ranking.
pub const RERANK_FACTOR: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemOutcome {
    Inserted,
    Replaced,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemError {
    pub code: String,
    pub message: String,
}

impl From<&Error> for ItemError {
    fn from(e: &Error) -> Self {
        ItemError {
            code: e.code().into(),
            message: e.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemStatus {
    pub id: u64,
    pub status: ItemOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ItemError>,
}

/// Per-batch upsert outcome; `items` follows input order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpsertReport {
    pub inserted: usize,
    pub replaced: usize,
    pub failed: usize,
    pub items: Vec<ItemStatus>,
}

/// Ids present in one place but not another. Empty lists mean consistent.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub missing_from_index: Vec<u64>,
    pub missing_from_metadata: Vec<u64>,
    pub missing_from_storage: Vec<u64>,
    pub missing_codes: Vec<u64>,
}

impl AuditReport {
    pub fn is_consistent(&self) -> bool {
        self.missing_from_index.is_empty()
            && self.missing_from_metadata.is_empty()
            && self.missing_from_storage.is_empty()
            && self.missing_codes.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectionInfo {
    pub config: CollectionConfig,
    pub count: usize,
    pub quantizer_trained: bool,
}

fn meta_key(name: &str) -> Vec<u8> {
    format!("c/{name}/meta").into_bytes()
}

fn gen_key(name: &str) -> Vec<u8> {
    format!("c/{name}/gen").into_bytes()
}

fn snapshot_key(name: &str) -> Vec<u8> {
    format!("i/{name}/snapshot").into_bytes()
}

fn entity_prefix(name: &str) -> Vec<u8> {
    format!("e/{name}/").into_bytes()
}

fn entity_key(name: &str, id: u64) -> Vec<u8> {
    let mut k = entity_prefix(name);
    k.extend_from_slice(&id.to_be_bytes());
    k
}

fn empty_index(config: &CollectionConfig, seed: u64) -> Result<Index> {
    Ok(match config.index {
        IndexChoice::Flat => Index::Flat(FlatIndex::new(config.metric, config.dim)),
        IndexChoice::Hnsw { m, ef_construction } => Index::Hnsw(HnswIndex::new(
            config.metric,
            config.dim,
            HnswParams {
                m,
                ef_construction,
                seed,
            },
        )?),
    })
}

/// Quantized codes: by entity id for flat indexes, by graph node for HNSW
/// (tombstoned nodes are still traversed, so they keep their codes).
enum Codes {
    ById(HashMap<u64, Code>),
    ByNode(Vec<Code>),
}

impl Codes {
    fn empty(index: &Index) -> Self {
        match index {
            Index::Flat(_) => Codes::ById(HashMap::new()),
            Index::Hnsw(_) => Codes::ByNode(Vec::new()),
        }
    }

    fn encode_all(q: &Quantizer, index: &Index) -> Result<Self> {
        Ok(match index {
            Index::Flat(f) => Codes::ById(
                f.ids()
                    .iter()
                    .map(|&id| Ok((id, q.encode(f.vector(id).expect("listed id"))?)))
                    .collect::<Result<_>>()?,
            ),
            Index::Hnsw(h) => Codes::ByNode(
                (0..h.node_count() as u32)
                    .map(|n| q.encode(h.node_vec(n)))
                    .collect::<Result<_>>()?,
            ),
        })
    }

    /// Records the code of a just-inserted entity.
    fn added(&mut self, q: &Quantizer, index: &Index, id: u64) -> Result<()> {
        let code = q.encode(index.vector(id).expect("just inserted"))?;
        match self {
            Codes::ById(m) => {
                m.insert(id, code);
            }
            Codes::ByNode(v) => v.push(code),
        }
        Ok(())
    }

    fn removed(&mut self, id: u64) {
        if let Codes::ById(m) = self {
            m.remove(&id);
        }
    }

    fn missing(&self, index: &Index) -> Vec<u64> {
        match (self, index) {
            (Codes::ById(m), _) => {
                let mut v: Vec<u64> = index.live_ids().into_iter().filter(|id| !m.contains_key(id)).collect();
                v.sort_unstable();
                v
            }
            (Codes::ByNode(v), Index::Hnsw(h)) => h.ids[v.len().min(h.node_count())..].to_vec(),
            (Codes::ByNode(_), Index::Flat(f)) => f.ids().to_vec(),
        }
    }
}

pub(crate) struct Collection {
    config: CollectionConfig,
    kernel: DistanceKernel,
    index: Index,
    metadata: HashMap<u64, Metadata>,
    quantizer: Option<Quantizer>,
    codes: Codes,
    /// Live count at which the quantizer is next (re)trained.
    next_training: usize,
    generation: u64,
    snapshot_generation: Option<u64>,
    kv: Arc<dyn KvEngine>,
    options: EngineOptions,
    persistent: bool,
}

impl Collection {
    pub fn create(config: CollectionConfig, kv: Arc<dyn KvEngine>, options: EngineOptions, persistent: bool) -> Result<Self> {
        config.validate()?;
        let meta = serde_json::to_vec(&config).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        kv.write_batch(&[
            BatchOp::Put(meta_key(&config.name), meta),
            BatchOp::Put(gen_key(&config.name), 0u64.to_le_bytes().to_vec()),
        ])?;
        kv.flush()?;
        let index = empty_index(&config, options.seed)?;
        Ok(Collection {
            kernel: DistanceKernel::new(config.metric, config.dim),
            codes: Codes::empty(&index),
            index,
            metadata: HashMap::new(),
            quantizer: None,
            next_training: options.training_threshold,
            generation: 0,
            snapshot_generation: None,
            kv,
            options,
            persistent,
            config,
        })
    }

    /// Rebuilds a collection from its store: the snapshot when it matches
    /// the stored generation, otherwise by replaying every entity.
    pub fn load(kv: Arc<dyn KvEngine>, options: EngineOptions, persistent: bool) -> Result<Self> {
        let metas = kv.iterate(b"c/")?;
        let (_, meta) = metas
            .iter()
            .find(|(k, _)| k.ends_with(b"/meta"))
            .ok_or_else(|| Error::malformed(0, "store holds no collection config"))?;
        let config: CollectionConfig =
            serde_json::from_slice(meta).map_err(|e| Error::malformed(e.column(), format!("collection config: {e}")))?;
        config.validate()?;
        let name = config.name.clone();
        let generation = match kv.get(&gen_key(&name))? {
            Some(b) if b.len() == 8 => u64::from_le_bytes(b.try_into().unwrap()),
            _ => return Err(Error::malformed(0, "missing or bad generation counter")),
        };
        let entities = kv
            .iterate(&entity_prefix(&name))?
            .into_iter()
            .map(|(_, v)| decode_entity(&v))
            .collect::<Result<Vec<_>>>()?;

        let index = empty_index(&config, options.seed)?;
        let mut c = Collection {
            codes: Codes::empty(&index),
            index,
            kernel: DistanceKernel::new(config.metric, config.dim),
            metadata: HashMap::with_capacity(entities.len()),
            quantizer: None,
            next_training: options.training_threshold,
            generation,
            snapshot_generation: None,
            kv,
            options,
            persistent,
            config,
        };

        let snapshot = match c.kv.get(&snapshot_key(&name))? {
            Some(bytes) => match load_snapshot(&bytes) {
                Ok(s) => Some(s),
                Err(e) => {
                    tracing::warn!(collection = %name, error = %e, "unreadable snapshot, rebuilding");
                    None
                }
            },
            None => None,
        };
        let usable = snapshot.filter(|s| {
            s.generation == generation
                && s.index.metric() == c.config.metric
                && s.index.dim() == c.config.dim
                && s.index.len() == entities.len()
                && entities.iter().all(|e| s.index.contains(e.id))
        });
        match usable {
            Some(s) => {
                c.index = s.index;
                c.codes = Codes::empty(&c.index);
                c.quantizer = s.quantizer;
                c.snapshot_generation = Some(generation);
                if let Some(q) = &c.quantizer {
                    c.codes = Codes::encode_all(q, &c.index)?;
                    c.next_training = 2 * entities.len();
                }
                for e in entities {
                    c.metadata.insert(e.id, e.metadata);
                }
                c.maybe_train()?;
            }
            None => {
                tracing::info!(collection = %name, entities = entities.len(), "replaying entities into a fresh index");
                for e in entities {
                    c.index.insert(e.id, &e.vector)?;
                    c.metadata.insert(e.id, e.metadata);
                }
                c.maybe_train()?;
            }
        }
        Ok(c)
    }

    pub fn config(&self) -> &CollectionConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn info(&self) -> CollectionInfo {
        CollectionInfo {
            config: self.config.clone(),
            count: self.len(),
            quantizer_trained: self.quantizer.is_some(),
        }
    }

    pub fn metadata(&self, id: u64) -> Option<&Metadata> {
        self.metadata.get(&id)
    }

    pub fn get(&self, id: u64) -> Result<Option<Entity>> {
        if !self.index.contains(id) {
            return Ok(None);
        }
        match self.kv.get(&entity_key(&self.config.name, id))? {
            Some(bytes) => decode_entity(&bytes).map(Some),
            None => Ok(None),
        }
    }

    fn check_entity(&self, e: &Entity) -> Result<()> {
        validate_entity(e, &self.config)?;
        prepare_vector(self.kernel, &e.vector)?;
        Ok(())
    }

    fn commit(&mut self, mut ops: Vec<BatchOp>) -> Result<()> {
        self.generation += 1;
        ops.push(BatchOp::Put(gen_key(&self.config.name), self.generation.to_le_bytes().to_vec()));
        self.kv.write_batch(&ops)?;
        if self.options.durable_writes {
            self.kv.flush()?;
        }
        Ok(())
    }

    pub fn upsert(&mut self, entities: Vec<Entity>) -> Result<UpsertReport> {
        let mut report = UpsertReport::default();
        let mut ops = Vec::new();
        let mut accepted = Vec::new();
        let mut items: Vec<Option<ItemStatus>> = Vec::with_capacity(entities.len());
        for e in entities {
            match self.check_entity(&e).and_then(|_| encode_entity(&e)) {
                Ok(bytes) => {
                    ops.push(BatchOp::Put(entity_key(&self.config.name, e.id), bytes));
                    items.push(None);
                    accepted.push(e);
                }
                Err(err) => items.push(Some(ItemStatus {
                    id: e.id,
                    status: ItemOutcome::Failed,
                    error: Some((&err).into()),
                })),
            }
        }
        if accepted.is_empty() {
            report.failed = items.len();
            report.items = items.into_iter().flatten().collect();
            return Ok(report);
        }
        self.commit(ops)?;

        let mut accepted = accepted.into_iter();
        let mut late = Vec::new();
        let statuses: Vec<ItemStatus> = items
            .into_iter()
            .map(|slot| {
                slot.unwrap_or_else(|| {
                    let e = accepted.next().expect("one accepted entity per open slot");
                    let status = self.apply(e);
                    if status.status == ItemOutcome::Failed {
                        late.push(BatchOp::Delete(entity_key(&self.config.name, status.id)));
                    }
                    status
                })
            })
            .collect();
        if !late.is_empty() {
            self.commit(late)?;
        }
        for s in &statuses {
            match s.status {
                ItemOutcome::Inserted => report.inserted += 1,
                ItemOutcome::Replaced => report.replaced += 1,
                ItemOutcome::Failed => report.failed += 1,
            }
        }
        report.items = statuses;
        self.maybe_train()?;
        Ok(report)
    }

    /// Replaces or inserts one already-persisted entity in memory.
    fn apply(&mut self, e: Entity) -> ItemStatus {
        let replaced = self.index.remove(e.id);
        if replaced {
            self.codes.removed(e.id);
            self.metadata.remove(&e.id);
        }
        let outcome = self.index.insert(e.id, &e.vector).and_then(|_| match &self.quantizer {
            Some(q) => self.codes.added(q, &self.index, e.id),
            None => Ok(()),
        });
        match outcome {
            Ok(()) => {
                self.metadata.insert(e.id, e.metadata);
                ItemStatus {
                    id: e.id,
                    status: if replaced { ItemOutcome::Replaced } else { ItemOutcome::Inserted },
                    error: None,
                }
            }
            Err(err) => {
                self.index.remove(e.id);
                ItemStatus {
                    id: e.id,
                    status: ItemOutcome::Failed,
                    error: Some((&err).into()),
                }
            }
        }
    }

    pub fn delete(&mut self, ids: &[u64]) -> Result<usize> {
        let present: BTreeSet<u64> = ids.iter().copied().filter(|&id| self.index.contains(id)).collect();
        if present.is_empty() {
            return Ok(0);
        }
        let ops = present
            .iter()
            .map(|&id| BatchOp::Delete(entity_key(&self.config.name, id)))
            .collect();
        self.commit(ops)?;
        for &id in &present {
            self.index.remove(id);
            self.metadata.remove(&id);
            self.codes.removed(id);
        }
        Ok(present.len())
    }

    fn maybe_train(&mut self) -> Result<()> {
        let floor = match self.config.quantization {
            QuantizationMode::None => return Ok(()),
            QuantizationMode::Pq { k, .. } => k,
            QuantizationMode::Bq { .. } => 1,
        };
        let n = self.len();
        if n < self.next_training.max(floor).max(self.options.training_threshold) {
            return Ok(());
        }
        self.train()?;
        Ok(())
    }

    /// Trains (or retrains) the quantizer on the live vectors and re-encodes
    /// every entity. Returns false when there is nothing to train.
    pub fn train(&mut self) -> Result<bool> {
        if self.config.quantization == QuantizationMode::None || self.index.is_empty() {
            return Ok(false);
        }
        let mut ids = self.index.live_ids();
        ids.sort_unstable();
        let n = ids.len();
        let sample: Vec<u64> = if ids.len() > MAX_TRAINING_SAMPLE {
            let mut rng = ChaCha8Rng::seed_from_u64(self.options.seed);
            let mut picked = rand::seq::index::sample(&mut rng, ids.len(), MAX_TRAINING_SAMPLE).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| ids[i]).collect()
        } else {
            ids.clone()
        };
        let mut block = Vec::with_capacity(sample.len() * self.config.dim);
        for id in &sample {
            block.extend_from_slice(self.index.vector(*id).expect("live id"));
        }
        let Some(q) = Quantizer::train(self.config.quantization, &block, self.config.dim, self.options.seed)? else {
            return Ok(false);
        };
        self.codes = Codes::encode_all(&q, &self.index)?;
        self.quantizer = Some(q);
        self.next_training = if n >= MAX_TRAINING_SAMPLE { usize::MAX } else { 2 * n };
        Ok(true)
    }

    pub fn vector_query(&self, query: &[f32], k: usize, ef: Option<usize>) -> Result<SearchResult> {
        if k == 0 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        let prepared = prepare_vector(self.kernel, query)?;
        if self.index.is_empty() {
            return Ok(SearchResult::default());
        }
        let ef = ef.unwrap_or(k.max(64)).max(k);
        if let Some(q) = &self.quantizer {
            return self.quantized_query(q, &prepared, k, ef);
        }
        match &self.index {
            Index::Flat(f) => f.search(query, k, None),
            Index::Hnsw(h) => h.search(query, k, ef),
        }
    }

    /// Scores codes for `RERANK_FACTOR * k` candidates, then re-ranks them
    /// by exact distance.
    fn quantized_query(&self, q: &Quantizer, prepared: &[f32], k: usize, ef: usize) -> Result<SearchResult> {
        let scorer = q.scorer(prepared, self.config.metric)?;
        let wanted = (RERANK_FACTOR * k).min(self.len());
        let (candidates, mut stats) = match (&self.index, &self.codes) {
            (Index::Flat(_), Codes::ById(codes)) => {
                let mut top = TopK::new(wanted);
                for (&id, code) in codes {
                    top.push(scorer.score(code), id);
                }
                let stats = SearchStats {
                    distance_evaluations: codes.len() as u64,
                    visited_nodes: codes.len() as u64,
                };
                (top.into_sorted().into_iter().map(|s| s.key).collect::<Vec<_>>(), stats)
            }
            (Index::Hnsw(h), Codes::ByNode(codes)) => {
                let res = h.search_by_node(wanted, ef.max(wanted), |n| scorer.score(&codes[n as usize]))?;
                (res.ids(), res.stats)
            }
            _ => unreachable!("code layout follows the index kind"),
        };
        let mut top = TopK::new(k);
        for id in candidates {
            let v = self.index.vector(id).expect("candidate is live");
            top.push(self.kernel.pair(prepared, v), id);
        }
        stats.distance_evaluations += wanted as u64;
        Ok(self.finish(top, stats))
    }

    fn finish(&self, top: TopK<u64>, stats: SearchStats) -> SearchResult {
        let hits = top
            .into_sorted()
            .into_iter()
            .map(|s| Hit {
                id: s.key,
                distance: self.kernel.report(s.dist),
            })
            .collect();
        SearchResult { hits, stats }
    }

    /// Ids whose metadata satisfies `filter`, ascending.
    pub fn filter_ids(&self, filter: &Filter) -> Result<Vec<u64>> {
        filter.validate()?;
        check_field_types(filter, self.metadata.values())?;
        let mut ids: Vec<u64> = self
            .metadata
            .iter()
            .filter(|(_, md)| eval_filter(filter, md))
            .map(|(&id, _)| id)
            .collect();
        ids.sort_unstable();
        Ok(ids)
    }

    /// Filter first, then rank: an exact scan when at most
    /// `exact_filter_limit` entities match, otherwise a graph search that
    /// only admits matching nodes to the results.
    pub fn mevs_query(&self, filter: &Filter, query: &[f32], k: usize, ef: Option<usize>) -> Result<SearchResult> {
        if k == 0 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        let prepared = prepare_vector(self.kernel, query)?;
        let allowed = self.filter_ids(filter)?;
        let n = self.len();
        if allowed.is_empty() {
            return Ok(SearchResult::default());
        }
        if allowed.len() == n {
            return self.vector_query(query, k, ef);
        }
        if allowed.len() <= self.options.exact_filter_limit {
            let mut top = TopK::new(k);
            for &id in &allowed {
                let v = self.index.vector(id).expect("metadata and index agree");
                top.push(self.kernel.pair(&prepared, v), id);
            }
            let stats = SearchStats {
                distance_evaluations: allowed.len() as u64,
                visited_nodes: allowed.len() as u64,
            };
            return Ok(self.finish(top, stats));
        }
        let set: HashSet<u64> = allowed.iter().copied().collect();
        match &self.index {
            Index::Flat(f) => f.search(query, k, Some(&set)),
            Index::Hnsw(h) => {
                let ef = ef.unwrap_or(k.max(64)).max(k);
                let inflated = (ef as f64 * n as f64 / set.len() as f64).ceil() as usize;
                h.search_filtered(query, k, inflated.min(n).max(k), |id| set.contains(&id))
            }
        }
    }

    pub fn audit(&self) -> Result<AuditReport> {
        let index: HashSet<u64> = self.index.live_ids().into_iter().collect();
        let metadata: HashSet<u64> = self.metadata.keys().copied().collect();
        let prefix = entity_prefix(&self.config.name);
        let stored: HashSet<u64> = self
            .kv
            .iterate(&prefix)?
            .into_iter()
            .filter_map(|(k, _)| k[prefix.len()..].try_into().ok().map(u64::from_be_bytes))
            .collect();
        let all: BTreeSet<u64> = index.iter().chain(&metadata).chain(&stored).copied().collect();
        let missing = |set: &HashSet<u64>| all.iter().copied().filter(|id| !set.contains(id)).collect();
        Ok(AuditReport {
            missing_from_index: missing(&index),
            missing_from_metadata: missing(&metadata),
            missing_from_storage: missing(&stored),
            missing_codes: if self.quantizer.is_some() { self.codes.missing(&self.index) } else { Vec::new() },
        })
    }

    /// Writes an index snapshot if anything changed since the last one,
    /// then makes the store durable.
    pub fn flush(&mut self) -> Result<()> {
        if self.persistent && self.snapshot_generation != Some(self.generation) {
            let bytes = snapshot_index(&self.index, self.quantizer.as_ref(), self.generation);
            self.kv.put(&snapshot_key(&self.config.name), &bytes)?;
            self.snapshot_generation = Some(self.generation);
        }
        self.kv.flush()
    }
}
