//! Hierarchical semantic memory for long-lived agents.
//!
//! Interaction memories are stored in a layered hierarchy — by default
//! domain, category, trace, and episode — where the upper layers act as a
//! progressively refined index over the episodes below them. Retrieval
//! routes a query down that index, scoring only the children of each
//! level's top-k survivors instead of scanning every stored episode, and
//! every similarity computation is counted so the routed and flat costs can
//! be compared exactly. Episode confidence weights follow an exponential
//! forgetting curve and respond to user feedback.
//!
//! The crate is organized around one type, [`MemoryStore`]:
//!
//! - [`store`] owns the hierarchy: insertion with merge-or-create
//!   semantics, integrity checking, depth adjustment, and compaction.
//! - [`retrieval`] implements routed and flat retrieval with exact
//!   similarity-operation accounting.
//! - [`dynamics`] evolves memory weights: decay, feedback, reinforcement.
//! - [`encoder`] is the embedding boundary: a deterministic offline
//!   hash embedder and a remote-endpoint client.
//! - [`ingest`] turns dialogue turns into extraction records and feeds
//!   them through an embedder into the store.
//! - [`snapshot`] persists stores as a manifest plus per-layer metadata
//!   and raw vector blocks.
//! - [`mod@bench`] is an instrumented harness comparing routed retrieval
//!   against the flat baseline on a growing store.
//!
//! ```
//! use hmem_core::{HierarchyConfig, MemoryStore, Query};
//! use hmem_core::encoder::{Embedder, HashEmbedder};
//! use hmem_core::ingest::{extract_stub, ingest_turn, DialogueTurn, StubExtractor};
//!
//! let config = HierarchyConfig { dimension: 64, ..HierarchyConfig::default() };
//! let mut store = MemoryStore::new(config)?;
//! let embedder = HashEmbedder::new(64);
//!
//! let turn = DialogueTurn {
//!     session_id: "s1".into(),
//!     turn_id: 0,
//!     speaker: "user".into(),
//!     text: "Can you recommend an action movie?".into(),
//!     timestamp: 1_700_000_000,
//! };
//! ingest_turn(&mut store, &embedder, &StubExtractor, &turn)?;
//!
//! let query = Query::new(embedder.embed("a movie with car chases")?)?;
//! let result = store.retrieve(&query, 10, 10)?;
//! assert_eq!(result.hits.len(), 1);
//! # Ok::<(), hmem_core::Error>(())
//! ```

pub mod bench;
pub mod config;
pub mod dynamics;
pub mod encoder;
pub mod error;
pub mod ingest;
pub mod node;
pub mod retrieval;
pub mod snapshot;
pub mod store;

pub use config::HierarchyConfig;
pub use dynamics::{Feedback, FeedbackKind, FeedbackOutcome};
pub use error::{ConfigError, EncoderError, Error, IngestError, SimilarityError, SnapshotError, StoreError};
pub use node::{Episode, EpisodeContent, MemoryNode, NodeId, RetentionState};
pub use retrieval::{cosine, CounterSnapshot, Hit, Query, RetrievalResult};
pub use store::{MemoryStore, StoreStats, Violation};
