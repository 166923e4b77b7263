//! Index-routed retrieval, the flat-scan baseline, and similarity-operation
//! accounting.
//!
//! Routed retrieval walks the hierarchy top-down: it scores every layer-1
//! node, keeps the top `k`, then at each deeper level scores only the
//! children of the previous level's survivors. The episode layer keeps the
//! top `n`. The flat baseline scores every stored episode. Both paths count
//! one similarity operation per vector comparison, exactly, so the two can
//! be compared analytically.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::collections::HashSet;
use std::sync::atomic::Ordering as AtomicOrdering;
use std::time::{Duration, Instant, SystemTime};

use serde::Serialize;

use crate::error::{SimilarityError, StoreError};
use crate::node::NodeId;
use crate::store::MemoryStore;

/// Dot product with a fixed lane-wise accumulation order: bit-stable across
/// runs and wide enough for the compiler to vectorize.
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    const LANES: usize = 8;
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / LANES;
    let mut acc = [0.0f32; LANES];
    for c in 0..chunks {
        let off = c * LANES;
        for l in 0..LANES {
            acc[l] += a[off + l] * b[off + l];
        }
    }
    let mut total = 0.0f32;
    for i in chunks * LANES..a.len() {
        total += a[i] * b[i];
    }
    for v in acc {
        total += v;
    }
    total
}

/// Cosine similarity of two arbitrary vectors, computed in f64.
///
/// The store's scoring paths work on unit vectors and use the plain dot
/// product; this is the general-purpose form for callers holding raw
/// vectors.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64, SimilarityError> {
    if a.len() != b.len() {
        return Err(SimilarityError::DimensionMismatch(a.len(), b.len()));
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        dot += x as f64 * y as f64;
        na += x as f64 * x as f64;
        nb += y as f64 * y as f64;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(SimilarityError::ZeroNorm);
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// A query vector, unit-normalized at construction.
#[derive(Debug, Clone)]
pub struct Query {
    vector: Vec<f32>,
}

impl Query {
    /// Build a query from any non-zero vector, normalizing it.
    pub fn new(vector: Vec<f32>) -> Result<Self, SimilarityError> {
        let norm = vector.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(SimilarityError::ZeroNorm);
        }
        let vector = if (norm - 1.0).abs() <= 1e-6 {
            vector
        } else {
            vector
                .iter()
                .map(|&x| (x as f64 / norm) as f32)
                .collect()
        };
        Ok(Self { vector })
    }

    pub fn vector(&self) -> &[f32] {
        &self.vector
    }
}

/// One retrieved episode with its score, confidence weight, and the chain of
/// index nodes it was reached through (layer 1 down to the episode).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hit {
    pub episode: NodeId,
    pub similarity: f32,
    /// The episode's memory weight at retrieval time, attached as a
    /// confidence reference; it does not participate in ranking unless
    /// `blend_gamma` is configured.
    pub weight: f64,
    pub path: Vec<NodeId>,
}

/// Outcome of one retrieval: ranked hits plus exact operation accounting.
#[derive(Debug, Clone, Serialize)]
pub struct RetrievalResult {
    /// Hits sorted by similarity descending, ties broken by lowest row.
    pub hits: Vec<Hit>,
    /// Exact number of vector similarity computations this call performed.
    pub sim_ops: u64,
    /// Wall-clock duration of the call.
    pub elapsed: Duration,
}

/// Snapshot of the store's retrieval accumulators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CounterSnapshot {
    pub sim_ops: u64,
    pub elapsed: Duration,
}

/// A candidate with its ranking key. Orders by score descending, then row
/// ascending, via `Ord`, with f32 total ordering (no NaNs reach this point).
#[derive(Debug, Clone, Copy)]
struct Scored {
    rank: f32,
    sim: f32,
    id: NodeId,
}

impl PartialEq for Scored {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Scored {}
impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank
            .total_cmp(&other.rank)
            .then_with(|| other.id.row.cmp(&self.id.row))
    }
}

/// Bounded selection: keeps the best `m` of a stream using a small heap with
/// the current worst on top. Returns best-first.
struct TopM {
    m: usize,
    heap: BinaryHeap<std::cmp::Reverse<Scored>>,
}

impl TopM {
    fn new(m: usize) -> Self {
        Self {
            m,
            heap: BinaryHeap::with_capacity(m + 1),
        }
    }

    fn offer(&mut self, s: Scored) {
        if self.m == 0 {
            return;
        }
        if self.heap.len() < self.m {
            self.heap.push(std::cmp::Reverse(s));
        } else if let Some(&std::cmp::Reverse(worst)) = self.heap.peek() {
            if s > worst {
                self.heap.pop();
                self.heap.push(std::cmp::Reverse(s));
            }
        }
    }

    fn into_sorted(self) -> Vec<Scored> {
        let mut v: Vec<Scored> = self.heap.into_iter().map(|r| r.0).collect();
        v.sort_unstable_by(|a, b| b.cmp(a));
        v
    }
}

fn now_epoch_seconds() -> i64 {
    SystemTime::now()
        .duration_since(SystemTime::UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}

impl MemoryStore {
    /// Routed top-k retrieval, reinforcing the retention of returned
    /// episodes with the current wall-clock time.
    pub fn retrieve(
        &mut self,
        query: &Query,
        k: usize,
        n: usize,
    ) -> Result<RetrievalResult, StoreError> {
        self.retrieve_at(query, k, n, now_epoch_seconds())
    }

    /// Routed top-k retrieval with an explicit access timestamp.
    pub fn retrieve_at(
        &mut self,
        query: &Query,
        k: usize,
        n: usize,
        now: i64,
    ) -> Result<RetrievalResult, StoreError> {
        let result = self.score_query(query, k, n)?;
        let ids: Vec<NodeId> = result.hits.iter().map(|h| h.episode).collect();
        self.reinforce_access(&ids, now);
        Ok(result)
    }

    /// The scoring half of routed retrieval: read-only, safe to run
    /// concurrently with other readers. Callers that want the access
    /// reinforcement apply [`MemoryStore::reinforce_access`] afterwards
    /// under the writer contract (or use [`MemoryStore::retrieve`]).
    pub fn score_query(
        &self,
        query: &Query,
        k: usize,
        n: usize,
    ) -> Result<RetrievalResult, StoreError> {
        let dim = self.config.dimension;
        if query.vector().len() != dim {
            return Err(StoreError::DimensionMismatch {
                expected: dim,
                got: query.vector().len(),
            });
        }
        let start = Instant::now();
        let q = query.vector();
        let mut ops: u64 = 0;
        let levels = self.config.levels;

        // Layer 1: score every live root.
        let mut top = TopM::new(k);
        for node in self.live_nodes(1) {
            let sim = dot(q, &node.vector);
            ops += 1;
            top.offer(Scored {
                rank: sim,
                sim,
                id: node.id,
            });
        }
        let mut survivors = top.into_sorted();

        // Interior layers: score only children of survivors, each child once.
        for _layer in 2..levels {
            let mut top = TopM::new(k);
            let mut seen: HashSet<NodeId> = HashSet::new();
            for s in &survivors {
                let parent = self.node_raw(s.id).expect("survivor exists");
                for &child in &parent.children {
                    if !seen.insert(child) {
                        continue;
                    }
                    let node = match self.node_raw(child) {
                        Some(n) if !n.tombstone => n,
                        _ => continue,
                    };
                    let sim = dot(q, &node.vector);
                    ops += 1;
                    top.offer(Scored {
                        rank: sim,
                        sim,
                        id: child,
                    });
                }
            }
            survivors = top.into_sorted();
        }

        // Episode layer: top n, optionally weight-blended.
        let gamma = self.config.blend_gamma;
        let mut top = TopM::new(n);
        let mut seen: HashSet<NodeId> = HashSet::new();
        if levels >= 2 {
            for s in &survivors {
                let parent = self.node_raw(s.id).expect("survivor exists");
                for &child in &parent.children {
                    if !seen.insert(child) {
                        continue;
                    }
                    let node = match self.node_raw(child) {
                        Some(n) if !n.tombstone => n,
                        _ => continue,
                    };
                    let sim = dot(q, &node.vector);
                    ops += 1;
                    let rank = match gamma {
                        Some(g) => sim * (node.retention.weight.powf(g) as f32),
                        None => sim,
                    };
                    top.offer(Scored {
                        rank,
                        sim,
                        id: child,
                    });
                }
            }
        }

        let hits = self.build_hits(top.into_sorted());
        let elapsed = start.elapsed();
        self.sim_ops.fetch_add(ops, AtomicOrdering::Relaxed);
        self.retrieval_nanos
            .fetch_add(elapsed.as_nanos() as u64, AtomicOrdering::Relaxed);
        Ok(RetrievalResult {
            hits,
            sim_ops: ops,
            elapsed,
        })
    }

    /// Baseline retrieval: score every live episode against the query and
    /// keep the top `n`. Read-only — the baseline never reinforces
    /// retention, so benchmark comparisons stay fair.
    pub fn flat_retrieve(&self, query: &Query, n: usize) -> Result<RetrievalResult, StoreError> {
        let dim = self.config.dimension;
        if query.vector().len() != dim {
            return Err(StoreError::DimensionMismatch {
                expected: dim,
                got: query.vector().len(),
            });
        }
        let start = Instant::now();
        let q = query.vector();
        let gamma = self.config.blend_gamma;
        let mut ops: u64 = 0;
        let mut top = TopM::new(n);
        for node in self.live_nodes(self.config.levels) {
            let sim = dot(q, &node.vector);
            ops += 1;
            let rank = match gamma {
                Some(g) => sim * (node.retention.weight.powf(g) as f32),
                None => sim,
            };
            top.offer(Scored {
                rank,
                sim,
                id: node.id,
            });
        }
        let hits = self.build_hits(top.into_sorted());
        let elapsed = start.elapsed();
        self.sim_ops.fetch_add(ops, AtomicOrdering::Relaxed);
        self.retrieval_nanos
            .fetch_add(elapsed.as_nanos() as u64, AtomicOrdering::Relaxed);
        Ok(RetrievalResult {
            hits,
            sim_ops: ops,
            elapsed,
        })
    }

    fn build_hits(&self, scored: Vec<Scored>) -> Vec<Hit> {
        scored
            .into_iter()
            .map(|s| {
                let node = self.node_raw(s.id).expect("hit exists");
                let mut path = Vec::with_capacity(self.config.levels as usize);
                path.push(s.id);
                let mut cursor = node.parent;
                while let Some(p) = cursor {
                    path.push(p);
                    cursor = self.node_raw(p).expect("chain exists").parent;
                }
                path.reverse();
                Hit {
                    episode: s.id,
                    similarity: s.sim,
                    weight: node.retention.weight,
                    path,
                }
            })
            .collect()
    }

    /// Record an access on each given episode: bumps `last_access` and
    /// `access_count`. Unknown or tombstoned ids are skipped (the store may
    /// have changed between scoring and reinforcement).
    pub fn reinforce_access(&mut self, episodes: &[NodeId], now: i64) {
        for &id in episodes {
            if let Some(node) = self.node_raw_mut(id) {
                if !node.tombstone && node.content.is_some() {
                    node.retention.last_access = now;
                    node.retention.access_count += 1;
                }
            }
        }
    }

    /// Current similarity-op and timing accumulators.
    pub fn counters(&self) -> CounterSnapshot {
        CounterSnapshot {
            sim_ops: self.sim_ops.load(AtomicOrdering::Relaxed),
            elapsed: Duration::from_nanos(self.retrieval_nanos.load(AtomicOrdering::Relaxed)),
        }
    }

    /// Zero the accumulators, returning the prior values.
    pub fn reset_counters(&self) -> CounterSnapshot {
        CounterSnapshot {
            sim_ops: self.sim_ops.swap(0, AtomicOrdering::Relaxed),
            elapsed: Duration::from_nanos(self.retrieval_nanos.swap(0, AtomicOrdering::Relaxed)),
        }
    }
}
