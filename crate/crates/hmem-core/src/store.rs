//! The hierarchical memory store: layered node tables, merge-or-create
//! insertion, integrity checking, depth adjustment, and compaction.

use std::fmt;
use std::sync::atomic::AtomicU64;

use crate::config::HierarchyConfig;
use crate::error::{ConfigError, StoreError};
use crate::ingest::ExtractionRecord;
use crate::node::{Episode, EpisodeContent, MemoryNode, NodeId, RetentionState};
use crate::retrieval::dot;

/// Tolerance on the L2 norm of vectors accepted by the store.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Hierarchical memory store.
///
/// Layer `l` (1-based) is `layers[l - 1]`; rows are appended and never
/// reused, so a row index is stable for the node's lifetime. The final
/// layer holds episodes, the layers above it form the routing index.
///
/// Writes (`insert`, dynamics, `compact`) take `&mut self`; retrieval
/// scoring takes `&self` and may run concurrently, with the retention
/// reinforcement applied separately under the writer contract.
#[derive(Debug)]
pub struct MemoryStore {
    pub(crate) config: HierarchyConfig,
    pub(crate) layers: Vec<Vec<MemoryNode>>,
    pub(crate) live: Vec<usize>,
    pub(crate) episodes_inserted: u64,
    pub(crate) episodes_pruned: u64,
    pub(crate) sim_ops: AtomicU64,
    pub(crate) retrieval_nanos: AtomicU64,
}

/// Per-layer and lifetime counters, for diagnostics and the service's
/// `/stats` endpoint.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct StoreStats {
    pub levels: u8,
    pub dimension: usize,
    /// Live node count per layer, layer 1 first.
    pub live_per_layer: Vec<usize>,
    /// Total rows per layer including tombstones.
    pub rows_per_layer: Vec<usize>,
    pub episodes_inserted: u64,
    pub episodes_pruned: u64,
}

/// One integrity violation found by [`MemoryStore::verify_integrity`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// A child id points outside its layer's row range.
    DanglingChild { parent: NodeId, child: NodeId },
    /// A live node lists a tombstoned child.
    TombstonedChild { parent: NodeId, child: NodeId },
    /// A child id does not sit exactly one layer below its parent.
    LayerSkew { parent: NodeId, child: NodeId },
    /// A child does not point back at the parent that lists it.
    MissingBacklink { parent: NodeId, child: NodeId },
    /// A non-root node's parent is missing, tombstoned, or does not list it.
    BrokenParent { node: NodeId, parent: NodeId },
    /// A layer-1 node has a parent pointer.
    RootWithParent { node: NodeId },
    /// A non-root node has no parent pointer.
    MissingParent { node: NodeId },
    /// An episode-layer node has children.
    EpisodeWithChildren { node: NodeId },
    /// An episode-layer node has no content, or an interior node has some.
    ContentMismatch { node: NodeId },
    /// A stored vector is not unit-norm within tolerance.
    NotUnitNorm { node: NodeId, norm: f64 },
    /// A weight is outside the configured clamp range.
    WeightOutOfBounds { node: NodeId, weight: f64 },
    /// A strength fell below the configured floor.
    StrengthBelowFloor { node: NodeId, strength: f64 },
    /// A node's stored id disagrees with its position.
    IdMismatch { at: NodeId, stored: NodeId },
    /// A stored vector has the wrong dimension.
    WrongDimension { node: NodeId, len: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DanglingChild { parent, child } => {
                write!(f, "edge {parent} -> {child}: child row does not exist")
            }
            Violation::TombstonedChild { parent, child } => {
                write!(f, "edge {parent} -> {child}: child is tombstoned")
            }
            Violation::LayerSkew { parent, child } => {
                write!(f, "edge {parent} -> {child}: child is not one layer below")
            }
            Violation::MissingBacklink { parent, child } => {
                write!(f, "edge {parent} -> {child}: child does not point back")
            }
            Violation::BrokenParent { node, parent } => {
                write!(f, "node {node}: parent {parent} missing, dead, or disowning")
            }
            Violation::RootWithParent { node } => write!(f, "root {node} has a parent"),
            Violation::MissingParent { node } => write!(f, "node {node} has no parent"),
            Violation::EpisodeWithChildren { node } => write!(f, "episode {node} has children"),
            Violation::ContentMismatch { node } => {
                write!(f, "node {node}: content present/absent on the wrong layer")
            }
            Violation::NotUnitNorm { node, norm } => {
                write!(f, "node {node}: vector norm {norm} is not 1")
            }
            Violation::WeightOutOfBounds { node, weight } => {
                write!(f, "node {node}: weight {weight} outside clamp range")
            }
            Violation::StrengthBelowFloor { node, strength } => {
                write!(f, "node {node}: strength {strength} below floor")
            }
            Violation::IdMismatch { at, stored } => {
                write!(f, "row {at} stores id {stored}")
            }
            Violation::WrongDimension { node, len } => {
                write!(f, "node {node}: vector has {len} dimensions")
            }
        }
    }
}

pub(crate) fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

impl MemoryStore {
    /// Create an empty store with the given configuration.
    pub fn new(config: HierarchyConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let levels = config.levels as usize;
        Ok(Self {
            config,
            layers: vec![Vec::new(); levels],
            live: vec![0; levels],
            episodes_inserted: 0,
            episodes_pruned: 0,
            sim_ops: AtomicU64::new(0),
            retrieval_nanos: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &HierarchyConfig {
        &self.config
    }

    /// Number of layers, episode layer included.
    pub fn levels(&self) -> u8 {
        self.config.levels
    }

    /// Total rows in a layer, tombstones included. Layers are 1-based.
    pub fn rows(&self, layer: u8) -> usize {
        self.layer_slice(layer).map_or(0, |l| l.len())
    }

    /// Live (non-tombstoned) node count in a layer.
    pub fn live_count(&self, layer: u8) -> usize {
        if layer == 0 || layer > self.config.levels {
            return 0;
        }
        self.live[layer as usize - 1]
    }

    /// Live episode count.
    pub fn episode_count(&self) -> usize {
        self.live_count(self.config.levels)
    }

    /// True when no node, live or tombstoned, exists at any layer.
    pub fn is_empty(&self) -> bool {
        self.layers.iter().all(|l| l.is_empty())
    }

    /// Iterate the live nodes of a layer in row order.
    pub fn live_nodes(&self, layer: u8) -> impl Iterator<Item = &MemoryNode> {
        self.layer_slice(layer)
            .into_iter()
            .flatten()
            .filter(|n| !n.tombstone)
    }

    pub fn stats(&self) -> StoreStats {
        StoreStats {
            levels: self.config.levels,
            dimension: self.config.dimension,
            live_per_layer: self.live.clone(),
            rows_per_layer: self.layers.iter().map(|l| l.len()).collect(),
            episodes_inserted: self.episodes_inserted,
            episodes_pruned: self.episodes_pruned,
        }
    }

    fn layer_slice(&self, layer: u8) -> Option<&[MemoryNode]> {
        if layer == 0 || layer > self.config.levels {
            None
        } else {
            Some(&self.layers[layer as usize - 1])
        }
    }

    /// Node at `id` regardless of tombstone state.
    pub(crate) fn node_raw(&self, id: NodeId) -> Option<&MemoryNode> {
        self.layer_slice(id.layer)?.get(id.row as usize)
    }

    pub(crate) fn node_raw_mut(&mut self, id: NodeId) -> Option<&mut MemoryNode> {
        if id.layer == 0 || id.layer > self.config.levels {
            return None;
        }
        self.layers[id.layer as usize - 1].get_mut(id.row as usize)
    }

    /// Look up a live node. Unknown and tombstoned ids both report not-found.
    pub fn node(&self, id: NodeId) -> Result<&MemoryNode, StoreError> {
        match self.node_raw(id) {
            Some(n) if !n.tombstone => Ok(n),
            _ => Err(StoreError::NotFound(id)),
        }
    }

    /// Look up a live episode, unpacking its content.
    pub fn episode(&self, id: NodeId) -> Result<Episode<'_>, StoreError> {
        let node = self.node(id)?;
        match &node.content {
            Some(c) => Ok(Episode {
                node,
                text: &c.text,
                timestamp: c.timestamp,
                profile: &c.profile,
            }),
            None => Err(StoreError::NotAnEpisode(id, self.config.levels)),
        }
    }

    /// Insert one extracted interaction.
    ///
    /// `vectors` supplies one unit vector per level, most abstract first;
    /// the last one embeds the episode text. Levels `1..levels` are matched
    /// against existing siblings under the already-chosen parent: a sibling
    /// with cosine similarity at or above the merge threshold absorbs the
    /// entry (ties broken by lowest row), otherwise a new node is appended.
    /// The episode itself is always appended. Validation runs up front, so a
    /// failed insert leaves the store untouched.
    pub fn insert(
        &mut self,
        record: &ExtractionRecord,
        vectors: Vec<Vec<f32>>,
    ) -> Result<NodeId, StoreError> {
        let levels = self.config.levels;
        if record.levels() != levels {
            return Err(StoreError::LevelMismatch {
                expected: levels,
                got: record.levels(),
            });
        }
        if vectors.len() != levels as usize {
            return Err(StoreError::LevelMismatch {
                expected: levels,
                got: vectors.len().min(u8::MAX as usize) as u8,
            });
        }
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != self.config.dimension {
                return Err(StoreError::DimensionMismatch {
                    expected: self.config.dimension,
                    got: v.len(),
                });
            }
            let norm = l2_norm(v);
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(StoreError::NotUnitNorm {
                    level: (i + 1) as u8,
                    norm,
                });
            }
        }
        if record.episode_text.is_empty() {
            return Err(StoreError::EmptyEpisodeText);
        }
        if record.timestamp <= 0 {
            return Err(StoreError::NonPositiveTimestamp(record.timestamp));
        }

        // All inputs validated; no failure paths below.
        let labels = record.labels();
        let mut vectors = vectors;
        let episode_vector = vectors.pop().expect("validated length");
        let mut parent: Option<NodeId> = None;

        for (li, vector) in vectors.into_iter().enumerate() {
            let layer = (li + 1) as u8;
            let chosen = self.merge_target(parent, layer, &vector);
            parent = Some(match chosen {
                Some(row) => {
                    let node = &mut self.layers[li][row as usize];
                    for (s, x) in node.vector_sum.iter_mut().zip(&vector) {
                        *s += *x as f64;
                    }
                    node.contributions += 1;
                    let norm = node.vector_sum.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm > 1e-9 {
                        for (out, s) in node.vector.iter_mut().zip(&node.vector_sum) {
                            *out = (s / norm) as f32;
                        }
                    }
                    node.id
                }
                None => self.append_node(
                    layer,
                    vector,
                    labels[li].clone(),
                    parent,
                    record.timestamp,
                    None,
                ),
            });
        }

        let id = self.append_node(
            levels,
            episode_vector,
            String::new(),
            parent,
            record.timestamp,
            Some(EpisodeContent {
                text: record.episode_text.clone(),
                timestamp: record.timestamp,
                profile: record.profile.clone(),
            }),
        );
        self.episodes_inserted += 1;
        Ok(id)
    }

    /// Pick the sibling to merge into: the highest-similarity live sibling
    /// under `parent` (all roots when `parent` is `None`), provided it meets
    /// the merge threshold. Ties go to the lowest row.
    fn merge_target(&self, parent: Option<NodeId>, layer: u8, vector: &[f32]) -> Option<u32> {
        // Ties go to the lowest row, independent of child-list order.
        fn consider(best: &mut Option<(u32, f32)>, row: u32, sim: f32) {
            let better = match best {
                Some((r, b)) => sim > *b || (sim == *b && row < *r),
                None => true,
            };
            if better {
                *best = Some((row, sim));
            }
        }
        let li = layer as usize - 1;
        let mut best: Option<(u32, f32)> = None;
        match parent {
            None => {
                for (row, node) in self.layers[li].iter().enumerate() {
                    if !node.tombstone {
                        consider(&mut best, row as u32, dot(vector, &node.vector));
                    }
                }
            }
            Some(p) => {
                for &child in &self.node_raw(p).expect("parent exists").children {
                    let node = self.node_raw(child).expect("child exists");
                    consider(&mut best, child.row, dot(vector, &node.vector));
                }
            }
        }
        match best {
            Some((row, sim)) if sim as f64 >= self.config.merge_threshold => Some(row),
            _ => None,
        }
    }

    fn append_node(
        &mut self,
        layer: u8,
        vector: Vec<f32>,
        label: String,
        parent: Option<NodeId>,
        timestamp: i64,
        content: Option<EpisodeContent>,
    ) -> NodeId {
        let li = layer as usize - 1;
        let id = NodeId::new(layer, self.layers[li].len() as u32);
        let vector_sum = if content.is_none() {
            vector.iter().map(|&x| x as f64).collect()
        } else {
            Vec::new()
        };
        self.layers[li].push(MemoryNode {
            id,
            vector,
            label,
            children: Vec::new(),
            parent,
            retention: RetentionState::fresh(self.config.strength_min, timestamp),
            tombstone: false,
            content,
            vector_sum,
            contributions: 1,
        });
        self.live[li] += 1;
        if let Some(p) = parent {
            self.node_raw_mut(p)
                .expect("parent exists")
                .children
                .push(id);
        }
        id
    }

    /// Check every structural and value invariant without mutating anything.
    /// An empty report means the store is healthy.
    pub fn verify_integrity(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let levels = self.config.levels;
        for (li, layer_nodes) in self.layers.iter().enumerate() {
            let layer = (li + 1) as u8;
            for (row, node) in layer_nodes.iter().enumerate() {
                let at = NodeId::new(layer, row as u32);
                if node.id != at {
                    out.push(Violation::IdMismatch {
                        at,
                        stored: node.id,
                    });
                }
                if node.tombstone {
                    continue;
                }
                if node.vector.len() != self.config.dimension {
                    out.push(Violation::WrongDimension {
                        node: at,
                        len: node.vector.len(),
                    });
                } else {
                    let norm = l2_norm(&node.vector);
                    if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                        out.push(Violation::NotUnitNorm { node: at, norm });
                    }
                }
                let r = &node.retention;
                if r.weight < self.config.weight_min || r.weight > self.config.weight_max {
                    out.push(Violation::WeightOutOfBounds {
                        node: at,
                        weight: r.weight,
                    });
                }
                if r.strength < self.config.strength_min {
                    out.push(Violation::StrengthBelowFloor {
                        node: at,
                        strength: r.strength,
                    });
                }
                if layer == levels {
                    if !node.children.is_empty() {
                        out.push(Violation::EpisodeWithChildren { node: at });
                    }
                    if node.content.is_none() {
                        out.push(Violation::ContentMismatch { node: at });
                    }
                } else if node.content.is_some() {
                    out.push(Violation::ContentMismatch { node: at });
                }
                for &child in &node.children {
                    if child.layer != layer + 1 {
                        out.push(Violation::LayerSkew {
                            parent: at,
                            child,
                        });
                        continue;
                    }
                    match self.node_raw(child) {
                        None => out.push(Violation::DanglingChild {
                            parent: at,
                            child,
                        }),
                        Some(c) if c.tombstone => out.push(Violation::TombstonedChild {
                            parent: at,
                            child,
                        }),
                        Some(c) if c.parent != Some(at) => out.push(Violation::MissingBacklink {
                            parent: at,
                            child,
                        }),
                        Some(_) => {}
                    }
                }
                match node.parent {
                    Some(p) if layer == 1 => {
                        let _ = p;
                        out.push(Violation::RootWithParent { node: at });
                    }
                    None if layer > 1 => out.push(Violation::MissingParent { node: at }),
                    Some(p) => {
                        let ok = p.layer + 1 == layer
                            && self
                                .node_raw(p)
                                .map(|pn| !pn.tombstone && pn.children.contains(&at))
                                .unwrap_or(false);
                        if !ok {
                            out.push(Violation::BrokenParent {
                                node: at,
                                parent: p,
                            });
                        }
                    }
                    None => {}
                }
            }
        }
        out
    }

    /// Change the hierarchy depth. Only allowed while the store is empty;
    /// setting the current depth is a no-op even on a populated store.
    pub fn adjust_depth(&mut self, new_levels: u8) -> Result<(), StoreError> {
        if new_levels == self.config.levels {
            return Ok(());
        }
        if !self.is_empty() {
            return Err(StoreError::DepthChangeOnPopulatedStore);
        }
        let mut candidate = self.config.clone();
        candidate.levels = new_levels;
        candidate.validate()?;
        self.config = candidate;
        self.layers = vec![Vec::new(); new_levels as usize];
        self.live = vec![0; new_levels as usize];
        Ok(())
    }

    /// Tombstone episodes whose weight sits at the configured floor (within
    /// `prune_epsilon`) and cascade upward through interior nodes left with
    /// no children. Returns the number of nodes tombstoned.
    pub fn compact(&mut self) -> usize {
        let levels = self.config.levels as usize;
        let threshold = self.config.weight_min + self.config.prune_epsilon;
        let mut pruned = 0;

        let mut doomed: Vec<NodeId> = Vec::new();
        for node in &self.layers[levels - 1] {
            if !node.tombstone && node.retention.weight <= threshold {
                doomed.push(node.id);
            }
        }
        for id in doomed {
            self.tombstone_node(id);
            self.episodes_pruned += 1;
            pruned += 1;
        }

        // Bottom-up cascade: an interior node whose children were all
        // removed is itself removed.
        for li in (0..levels - 1).rev() {
            let mut doomed: Vec<NodeId> = Vec::new();
            for node in &self.layers[li] {
                if !node.tombstone && node.children.is_empty() {
                    doomed.push(node.id);
                }
            }
            for id in doomed {
                self.tombstone_node(id);
                pruned += 1;
            }
        }
        pruned
    }

    fn tombstone_node(&mut self, id: NodeId) {
        let parent = {
            let node = self.node_raw_mut(id).expect("node exists");
            debug_assert!(!node.tombstone);
            node.tombstone = true;
            node.parent
        };
        self.live[id.layer as usize - 1] -= 1;
        if let Some(p) = parent {
            let pn = self.node_raw_mut(p).expect("parent exists");
            pn.children.retain(|&c| c != id);
        }
    }

    /// Administrative override of an episode's retention state, bounds-checked
    /// against the configuration.
    pub fn set_retention(&mut self, id: NodeId, retention: RetentionState) -> Result<(), StoreError> {
        let cfg = self.config.clone();
        let node = match self.node_raw_mut(id) {
            Some(n) if !n.tombstone => n,
            _ => return Err(StoreError::NotFound(id)),
        };
        if node.content.is_none() {
            return Err(StoreError::NotAnEpisode(id, cfg.levels));
        }
        if retention.weight < cfg.weight_min || retention.weight > cfg.weight_max {
            return Err(StoreError::RetentionOutOfBounds(format!(
                "weight {} outside [{}, {}]",
                retention.weight, cfg.weight_min, cfg.weight_max
            )));
        }
        if retention.strength < cfg.strength_min {
            return Err(StoreError::RetentionOutOfBounds(format!(
                "strength {} below {}",
                retention.strength, cfg.strength_min
            )));
        }
        node.retention = retention;
        Ok(())
    }
}
