//! Node types: identifiers, retention state, and the memory node itself.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Position of a node in the hierarchy: which layer it lives in and which
/// row of that layer's node list it occupies.
///
/// Rows are stable for the node's lifetime: deletion tombstones the row and
/// rows are never reused, so a `NodeId` held outside the store stays valid
/// until the next snapshot-time compaction (which publishes a remap table).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    /// Layer number, 1-based; layer 1 is the most abstract.
    pub layer: u8,
    /// Row within the layer's node list, 0-based.
    pub row: u32,
}

impl NodeId {
    pub fn new(layer: u8, row: u32) -> Self {
        Self { layer, row }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.layer, self.row)
    }
}

/// Parse error for the `layer:row` textual form of a [`NodeId`].
#[derive(Debug, Clone, thiserror::Error)]
#[error("invalid node id `{0}`: expected `layer:row`, e.g. `4:17`")]
pub struct ParseNodeIdError(String);

impl FromStr for NodeId {
    type Err = ParseNodeIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (layer, row) = s.split_once(':').ok_or_else(|| ParseNodeIdError(s.into()))?;
        let layer = layer.parse().map_err(|_| ParseNodeIdError(s.into()))?;
        let row = row.parse().map_err(|_| ParseNodeIdError(s.into()))?;
        Ok(NodeId { layer, row })
    }
}

/// Per-memory retention state: the confidence weight and the forgetting-curve
/// time constant.
///
/// `weight` decays as `exp(-dt / strength)` between accesses and is clamped
/// to the configured `[weight_min, weight_max]` range. `decay_anchor` is the
/// timestamp the last decay was applied up to; keeping it separate from
/// `last_access` makes decay idempotent and composable (two decay passes
/// multiply to the same factor as one).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetentionState {
    /// Confidence weight, clamped to `[weight_min, weight_max]`.
    pub weight: f64,
    /// Forgetting-curve time constant, in seconds. Never decreases.
    pub strength: f64,
    /// Timestamp of the last access (retrieval, touch, or feedback).
    pub last_access: i64,
    /// Timestamp decay has been applied up to.
    pub decay_anchor: i64,
    /// Number of accesses recorded for this memory.
    pub access_count: u64,
}

impl RetentionState {
    /// Fresh retention for a newly stored episode.
    pub fn fresh(strength_min: f64, timestamp: i64) -> Self {
        Self {
            weight: 1.0,
            strength: strength_min,
            last_access: timestamp,
            decay_anchor: timestamp,
            access_count: 0,
        }
    }
}

/// Free text preserved for episode-layer nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeContent {
    /// Full interaction content.
    pub text: String,
    /// Seconds since the epoch; always positive.
    pub timestamp: i64,
    /// User-profile snippet inferred from the interaction.
    pub profile: String,
}

/// One entry at any layer of the hierarchy.
///
/// Interior nodes (layers `1..levels`) carry a label summarising their
/// subtree and a list of child rows in the next layer. Episode nodes
/// (layer == `levels`) carry the full interaction content and no children.
/// The child list and parent pointer are the positional index encoding:
/// they live next to the semantic vector but are ignored by similarity,
/// which only ever compares the vectors themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryNode {
    pub id: NodeId,
    /// Unit-norm semantic vector of the store's dimension.
    pub vector: Vec<f32>,
    /// Short text summary of this node's content. Empty for episodes.
    pub label: String,
    /// Children, all at `id.layer + 1`, ordered by creation.
    pub children: Vec<NodeId>,
    /// Parent at `id.layer - 1`; `None` only for layer-1 nodes.
    pub parent: Option<NodeId>,
    /// Retention state. Dynamics only evolve it for episodes; interior nodes
    /// keep their initial state.
    pub retention: RetentionState,
    /// Logical deletion marker. Tombstoned nodes keep their row.
    pub tombstone: bool,
    /// Episode payload; `Some` exactly when this node is on the episode layer.
    pub content: Option<EpisodeContent>,
    /// Running sum of merged unit vectors, kept so `vector` can stay the
    /// unit-normalized mean of all contributions. Empty for episodes.
    pub vector_sum: Vec<f64>,
    /// Number of contributions merged into this node.
    pub contributions: u32,
}

impl MemoryNode {
    /// True when this node sits on the episode layer.
    pub fn is_episode(&self) -> bool {
        self.content.is_some()
    }
}

/// Borrowed view of an episode: the node plus its unpacked content.
#[derive(Debug, Clone, Copy)]
pub struct Episode<'a> {
    pub node: &'a MemoryNode,
    pub text: &'a str,
    pub timestamp: i64,
    pub profile: &'a str,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_id_round_trips_through_display() {
        let id = NodeId::new(4, 17);
        assert_eq!(id.to_string(), "4:17");
        assert_eq!("4:17".parse::<NodeId>().unwrap(), id);
    }

    #[test]
    fn node_id_parse_rejects_garbage() {
        assert!("".parse::<NodeId>().is_err());
        assert!("4".parse::<NodeId>().is_err());
        assert!("4:x".parse::<NodeId>().is_err());
        assert!("-1:2".parse::<NodeId>().is_err());
    }

    #[test]
    fn fresh_retention_starts_at_full_weight() {
        let r = RetentionState::fresh(3600.0, 1_700_000_000);
        assert_eq!(r.weight, 1.0);
        assert_eq!(r.strength, 3600.0);
        assert_eq!(r.last_access, 1_700_000_000);
        assert_eq!(r.decay_anchor, 1_700_000_000);
        assert_eq!(r.access_count, 0);
    }
}
