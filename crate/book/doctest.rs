//! Compiles every code block in the guide as a doc-test, one module per
//! chapter so a failure names its chapter. `cargo test -p hmem-book --doc`
//! (or a plain workspace test run) keeps the book and the library in sync;
//! `mdbook build book/` renders the same sources.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("src/hierarchy.md")]
pub mod hierarchy {}

#[doc = include_str!("src/retrieval.md")]
pub mod retrieval {}

#[doc = include_str!("src/dynamics.md")]
pub mod dynamics {}

#[doc = include_str!("src/embeddings.md")]
pub mod embeddings {}

#[doc = include_str!("src/ingestion.md")]
pub mod ingestion {}

#[doc = include_str!("src/persistence.md")]
pub mod persistence {}

#[doc = include_str!("src/serving.md")]
pub mod serving {}

#[doc = include_str!("src/benchmarking.md")]
pub mod benchmarking {}
