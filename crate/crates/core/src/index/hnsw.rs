//! Hierarchical Navigable Small World graph.
//!
//! Nodes get a level `floor(-ln(U) * mL)` with `mL = 1 / ln(M)`, so each
//! layer holds roughly `1/M` of the nodes of the layer below. A query
//! descends greedily through the upper layers (one best node per layer) and
//! finishes with a best-first search on layer 0 whose result list is capped
//! at `ef`. Inserts run the same descent with `ef_construction`, pick `M`
//! neighbours per layer with the diversity heuristic and link both ways,
//! pruning any list that grows past `M` (layers >= 1) or `2M` (layer 0).
//!
//! Deleted nodes become tombstones: they keep routing queries but never
//! appear in results.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distance::DistanceKernel;
use crate::error::{Error, Result};
use crate::index::prepare_vector;
use crate::index::result::{Hit, Scored, SearchResult, SearchStats};
use crate::types::{DistanceMetric, DEFAULT_EF_CONSTRUCTION, DEFAULT_M};

const MAX_LEVEL: usize = 48;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HnswParams {
    pub m: usize,
    pub ef_construction: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams {
            m: DEFAULT_M,
            ef_construction: DEFAULT_EF_CONSTRUCTION,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct HnswIndex {
    pub(crate) kernel: DistanceKernel,
    pub(crate) params: HnswParams,
    /// Internal node number to entity id.
    pub(crate) ids: Vec<u64>,
    /// Live entity id to internal node number.
    pub(crate) lookup: HashMap<u64, u32>,
    pub(crate) vectors: Vec<f32>,
    /// `links[node][layer]`; a node of level `l` has `l + 1` lists.
    pub(crate) links: Vec<Vec<Vec<u32>>>,
    pub(crate) deleted: Vec<bool>,
    pub(crate) entry: Option<u32>,
    /// Insert counter; selects the level generator stream.
    pub(crate) inserted: u64,
    scratch: Marks,
}

trait VisitSet {
    /// Marks `i`; true if it was not marked before.
    fn visit(&mut self, i: u32) -> bool;
}

struct BitSet(Vec<u64>);

impl BitSet {
    fn new(n: usize) -> Self {
        BitSet(vec![0; n.div_ceil(64)])
    }
}

impl VisitSet for BitSet {
    #[inline]
    fn visit(&mut self, i: u32) -> bool {
        let (w, b) = (i as usize / 64, i % 64);
        let fresh = self.0[w] & (1 << b) == 0;
        self.0[w] |= 1 << b;
        fresh
    }
}

/// Generation-stamped marks, reused across inserts.
#[derive(Clone, Debug, Default)]
struct Marks {
    stamp: Vec<u32>,
    gen: u32,
}

impl Marks {
    fn reset(&mut self, n: usize) {
        if self.stamp.len() < n {
            self.stamp.resize(n.next_power_of_two(), 0);
        }
        self.gen = self.gen.wrapping_add(1);
        if self.gen == 0 {
            self.stamp.fill(0);
            self.gen = 1;
        }
    }
}

impl VisitSet for Marks {
    #[inline]
    fn visit(&mut self, i: u32) -> bool {
        let s = &mut self.stamp[i as usize];
        let fresh = *s != self.gen;
        *s = self.gen;
        fresh
    }
}

/// Diversity-based neighbour selection.
///
/// `candidates` must be sorted by ascending distance to the base node. A
/// candidate is kept if it is closer to the base node than to every
/// neighbour kept so far; if fewer than `m` pass, the list is topped up
/// with the rejected candidates in distance order.
pub fn select_neighbors_heuristic<T, F>(candidates: &[(T, f32)], m: usize, mut dist: F) -> Vec<T>
where
    T: Copy,
    F: FnMut(T, T) -> f32,
{
    let mut kept: Vec<T> = Vec::with_capacity(m);
    let mut rejected: Vec<T> = Vec::new();
    for &(c, d) in candidates {
        if kept.len() >= m {
            break;
        }
        if kept.iter().all(|&r| d < dist(c, r)) {
            kept.push(c);
        } else {
            rejected.push(c);
        }
    }
    for c in rejected {
        if kept.len() >= m {
            break;
        }
        kept.push(c);
    }
    kept
}

impl HnswIndex {
    pub fn new(metric: DistanceMetric, dim: usize, params: HnswParams) -> Result<Self> {
        if params.m < 2 || params.ef_construction < params.m {
            return Err(Error::InvalidConfig(format!(
                "hnsw needs m >= 2 and ef_construction >= m (got m={}, ef_construction={})",
                params.m, params.ef_construction
            )));
        }
        if dim == 0 {
            return Err(Error::InvalidConfig("dim must be positive".into()));
        }
        Ok(HnswIndex {
            kernel: DistanceKernel::new(metric, dim),
            params,
            ids: Vec::new(),
            lookup: HashMap::new(),
            vectors: Vec::new(),
            links: Vec::new(),
            deleted: Vec::new(),
            entry: None,
            inserted: 0,
            scratch: Marks::default(),
        })
    }

    pub fn params(&self) -> HnswParams {
        self.params
    }

    pub fn metric(&self) -> DistanceMetric {
        self.kernel.metric
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim
    }

    /// Live (non-deleted) node count.
    pub fn len(&self) -> usize {
        self.lookup.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lookup.is_empty()
    }

    /// All nodes, tombstones included.
    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.lookup.contains_key(&id)
    }

    pub fn live_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.ids
            .iter()
            .zip(&self.deleted)
            .filter(|(_, &d)| !d)
            .map(|(&id, _)| id)
    }

    pub fn vector(&self, id: u64) -> Option<&[f32]> {
        self.lookup.get(&id).map(|&n| self.node_vec(n))
    }

    pub fn top_level(&self) -> Option<usize> {
        self.entry.map(|e| self.level(e))
    }

    /// Number of nodes per layer, layer 0 first.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.top_level().map_or(0, |l| l + 1)];
        for l in &self.links {
            for s in sizes.iter_mut().take(l.len()) {
                *s += 1;
            }
        }
        sizes
    }

    /// Neighbours of live node `id` on `layer`, as entity ids.
    pub fn neighbors(&self, id: u64, layer: usize) -> Option<Vec<u64>> {
        let n = *self.lookup.get(&id)?;
        self.links[n as usize]
            .get(layer)
            .map(|l| l.iter().map(|&x| self.ids[x as usize]).collect())
    }

    #[inline]
    pub(crate) fn node_vec(&self, n: u32) -> &[f32] {
        let dim = self.kernel.dim;
        &self.vectors[n as usize * dim..(n as usize + 1) * dim]
    }

    #[inline]
    fn level(&self, n: u32) -> usize {
        self.links[n as usize].len() - 1
    }

    fn cap(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.params.m
        } else {
            self.params.m
        }
    }

    fn sample_level(&self) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(self.params.seed);
        rng.set_stream(self.inserted);
        let u: f64 = rng.sample(rand::distr::Open01);
        let ml = 1.0 / (self.params.m as f64).ln();
        ((-u.ln() * ml).floor() as usize).min(MAX_LEVEL)
    }

    pub fn insert(&mut self, id: u64, vector: &[f32]) -> Result<()> {
        if self.lookup.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        let q = prepare_vector(self.kernel, vector)?;
        let level = self.sample_level();
        let node = u32::try_from(self.ids.len())
            .map_err(|_| Error::InvalidParameter("graph is full".into()))?;
        self.inserted += 1;
        self.ids.push(id);
        self.lookup.insert(id, node);
        self.vectors.extend_from_slice(&q);
        self.links.push(vec![Vec::new(); level + 1]);
        self.deleted.push(false);

        let Some(entry) = self.entry else {
            self.entry = Some(node);
            return Ok(());
        };
        let top = self.level(entry);
        let mut scratch = std::mem::take(&mut self.scratch);
        let mut stats = SearchStats::default();

        let mut eps = vec![Scored {
            dist: self.kernel.pair(&q, self.node_vec(entry)),
            key: entry,
        }];
        {
            let dist = |n: u32| self.kernel.pair(&q, self.node_vec(n));
            for layer in (level + 1..=top).rev() {
                eps = vec![self.greedy_closest(eps[0], layer, &dist, &mut stats)];
            }
        }
        for layer in (0..=level.min(top)).rev() {
            scratch.reset(self.ids.len());
            let found = {
                let dist = |n: u32| self.kernel.pair(&q, self.node_vec(n));
                self.search_layer(&eps, self.params.ef_construction, layer, &dist, &|_| true, &mut scratch, &mut stats)
            };
            // `found` never contains the new node: it has no in-links yet.
            let candidates: Vec<(u32, f32)> = found.iter().map(|s| (s.key, s.dist)).collect();
            let chosen = select_neighbors_heuristic(&candidates, self.params.m, |a, b| {
                self.kernel.pair(self.node_vec(a), self.node_vec(b))
            });
            for &e in &chosen {
                self.links[e as usize][layer].push(node);
                if self.links[e as usize][layer].len() > self.cap(layer) {
                    self.prune(e, layer);
                }
            }
            self.links[node as usize][layer] = chosen;
            eps = found;
        }
        self.scratch = scratch;

        if level >= top {
            self.entry = Some(node);
        }
        #[cfg(debug_assertions)]
        self.debug_check_caps(node);
        Ok(())
    }

    fn prune(&mut self, e: u32, layer: usize) {
        let base = self.node_vec(e);
        let mut candidates: Vec<(u32, f32)> = self.links[e as usize][layer]
            .iter()
            .map(|&n| (n, self.kernel.pair(base, self.node_vec(n))))
            .collect();
        candidates.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let kept = select_neighbors_heuristic(&candidates, self.cap(layer), |a, b| {
            self.kernel.pair(self.node_vec(a), self.node_vec(b))
        });
        self.links[e as usize][layer] = kept;
    }

    #[cfg(debug_assertions)]
    fn debug_check_caps(&self, node: u32) {
        for (layer, list) in self.links[node as usize].iter().enumerate() {
            debug_assert!(list.len() <= self.cap(layer));
            for &n in list {
                debug_assert!(self.links[n as usize][layer].len() <= self.cap(layer));
            }
        }
    }

    /// Marks `id` deleted. The node stays in the graph for routing.
    pub fn remove(&mut self, id: u64) -> bool {
        match self.lookup.remove(&id) {
            Some(n) => {
                self.deleted[n as usize] = true;
                true
            }
            None => false,
        }
    }

    fn greedy_closest<D: Fn(u32) -> f32>(&self, start: Scored<u32>, layer: usize, dist: &D, stats: &mut SearchStats) -> Scored<u32> {
        let mut cur = start;
        loop {
            let mut moved = false;
            for &n in &self.links[cur.key as usize][layer] {
                let d = dist(n);
                stats.distance_evaluations += 1;
                stats.visited_nodes += 1;
                let cand = Scored { dist: d, key: n };
                if cand < cur {
                    cur = cand;
                    moved = true;
                }
            }
            if !moved {
                return cur;
            }
        }
    }

    /// Best-first search of one layer. Every reached node is expanded, but
    /// only nodes passing `accept` enter the result list.
    #[allow(clippy::too_many_arguments)]
    fn search_layer<D, A, V>(
        &self,
        entry: &[Scored<u32>],
        ef: usize,
        layer: usize,
        dist: &D,
        accept: &A,
        visited: &mut V,
        stats: &mut SearchStats,
    ) -> Vec<Scored<u32>>
    where
        D: Fn(u32) -> f32,
        A: Fn(u32) -> bool,
        V: VisitSet,
    {
        let mut candidates: BinaryHeap<Reverse<Scored<u32>>> = BinaryHeap::new();
        let mut results: BinaryHeap<Scored<u32>> = BinaryHeap::with_capacity(ef + 1);
        for &e in entry {
            if visited.visit(e.key) {
                candidates.push(Reverse(e));
                if accept(e.key) {
                    results.push(e);
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        while let Some(Reverse(c)) = candidates.pop() {
            if results.len() >= ef && results.peek().is_some_and(|w| c.dist > w.dist) {
                break;
            }
            for &n in &self.links[c.key as usize][layer] {
                if !visited.visit(n) {
                    continue;
                }
                stats.visited_nodes += 1;
                let d = dist(n);
                stats.distance_evaluations += 1;
                let item = Scored { dist: d, key: n };
                if results.len() < ef || results.peek().is_some_and(|w| item < *w) {
                    candidates.push(Reverse(item));
                    if accept(n) {
                        results.push(item);
                        if results.len() > ef {
                            results.pop();
                        }
                    }
                }
            }
        }
        results.into_sorted_vec()
    }

    fn search_nodes<D, A>(&self, k: usize, ef: usize, dist: D, accept: A) -> Result<(Vec<Scored<u32>>, SearchStats)>
    where
        D: Fn(u32) -> f32,
        A: Fn(u32) -> bool,
    {
        if k == 0 || ef < k {
            return Err(Error::InvalidParameter(format!("need ef >= k >= 1 (k={k}, ef={ef})")));
        }
        let entry = self.entry.ok_or(Error::EmptyGraph)?;
        let mut stats = SearchStats::default();
        let mut ep = Scored {
            dist: dist(entry),
            key: entry,
        };
        stats.distance_evaluations += 1;
        for layer in (1..=self.level(entry)).rev() {
            ep = self.greedy_closest(ep, layer, &dist, &mut stats);
        }
        let mut visited = BitSet::new(self.ids.len());
        let accept = |n: u32| !self.deleted[n as usize] && accept(n);
        let mut found = self.search_layer(&[ep], ef, 0, &dist, &accept, &mut visited, &mut stats);
        found.truncate(k);
        Ok((found, stats))
    }

    /// Approximate k nearest live neighbours of `query`.
    pub fn search(&self, query: &[f32], k: usize, ef: usize) -> Result<SearchResult> {
        self.search_filtered(query, k, ef, |_| true)
    }

    /// As [`search`](Self::search), returning only ids accepted by `filter`.
    /// Rejected nodes are still traversed.
    pub fn search_filtered<F: Fn(u64) -> bool>(&self, query: &[f32], k: usize, ef: usize, filter: F) -> Result<SearchResult> {
        let q = prepare_vector(self.kernel, query)?;
        let (found, stats) = self.search_nodes(
            k,
            ef,
            |n| self.kernel.pair(&q, self.node_vec(n)),
            |n| filter(self.ids[n as usize]),
        )?;
        Ok(self.to_result(found, stats, true))
    }

    /// Graph search scored by a caller-supplied distance keyed by entity id
    /// (used for quantized traversal). Distances are returned unconverted.
    pub fn search_by<D, F>(&self, k: usize, ef: usize, dist: D, filter: F) -> Result<SearchResult>
    where
        D: Fn(u64) -> f32,
        F: Fn(u64) -> bool,
    {
        let (found, stats) = self.search_nodes(
            k,
            ef,
            |n| dist(self.ids[n as usize]),
            |n| filter(self.ids[n as usize]),
        )?;
        Ok(self.to_result(found, stats, false))
    }

    /// As [`search_by`](Self::search_by) with the distance keyed by graph
    /// node, tombstones included.
    pub(crate) fn search_by_node<D: Fn(u32) -> f32>(&self, k: usize, ef: usize, dist: D) -> Result<SearchResult> {
        let (found, stats) = self.search_nodes(k, ef, dist, |_| true)?;
        Ok(self.to_result(found, stats, false))
    }

    fn to_result(&self, found: Vec<Scored<u32>>, stats: SearchStats, report: bool) -> SearchResult {
        let mut hits: Vec<Hit> = found
            .into_iter()
            .map(|s| Hit {
                id: self.ids[s.key as usize],
                distance: s.dist,
            })
            .collect();
        // order by (distance, entity id) rather than internal node number
        hits.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)));
        if report {
            for h in &mut hits {
                h.distance = self.kernel.report(h.distance);
            }
        }
        SearchResult { hits, stats }
    }

    /// Structural checks: layer containment, neighbour caps, dangling
    /// references, entry point on the top layer, and layer-0 reachability
    /// from the entry point.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let n = self.ids.len();
        for (node, layers) in self.links.iter().enumerate() {
            if layers.is_empty() {
                return Err(format!("node {node} has no layer 0"));
            }
            for (layer, list) in layers.iter().enumerate() {
                if list.len() > self.cap(layer) {
                    return Err(format!("node {node} layer {layer}: {} > cap {}", list.len(), self.cap(layer)));
                }
                for &nb in list {
                    if nb as usize >= n || self.links[nb as usize].len() <= layer {
                        return Err(format!("node {node} layer {layer}: dangling neighbour {nb}"));
                    }
                }
            }
        }
        let Some(entry) = self.entry else {
            return if n == 0 { Ok(()) } else { Err("no entry point".into()) };
        };
        if entry as usize >= n {
            return Err(format!("entry point {entry} out of range"));
        }
        if self.links.iter().any(|l| l.len() > self.links[entry as usize].len()) {
            return Err("entry point is not on the top layer".into());
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([entry]);
        seen[entry as usize] = true;
        while let Some(x) = queue.pop_front() {
            for &nb in &self.links[x as usize][0] {
                if !seen[nb as usize] {
                    seen[nb as usize] = true;
                    queue.push_back(nb);
                }
            }
        }
        match seen.iter().position(|&s| !s) {
            Some(missing) => Err(format!("node {missing} unreachable on layer 0")),
            None => Ok(()),
        }
    }

    pub(crate) fn from_raw_parts(
        kernel: DistanceKernel,
        params: HnswParams,
        ids: Vec<u64>,
        vectors: Vec<f32>,
        links: Vec<Vec<Vec<u32>>>,
        deleted: Vec<bool>,
        entry: Option<u32>,
        inserted: u64,
    ) -> Result<Self> {
        let lookup = ids
            .iter()
            .zip(&deleted)
            .enumerate()
            .filter(|(_, (_, &d))| !d)
            .map(|(n, (&id, _))| (id, n as u32))
            .collect();
        let index = HnswIndex {
            kernel,
            params,
            ids,
            lookup,
            vectors,
            links,
            deleted,
            entry,
            inserted,
            scratch: Marks::default(),
        };
        let n = index.ids.len();
        if index.vectors.len() != n * kernel.dim || index.links.len() != n || index.deleted.len() != n {
            return Err(Error::malformed(0, "hnsw snapshot arrays disagree in length"));
        }
        if index.lookup.len() != index.deleted.iter().filter(|&&d| !d).count() {
            return Err(Error::malformed(0, "duplicate live id in hnsw snapshot"));
        }
        index
            .check_invariants()
            .map_err(|e| Error::malformed(0, format!("hnsw snapshot: {e}")))?;
        Ok(index)
    }
}
