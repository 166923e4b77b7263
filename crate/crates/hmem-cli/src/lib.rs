//! Library half of the `hmem` binary: store loading, hit presentation, and
//! the HTTP service. Kept as a library so integration tests can drive the
//! service in-process.

pub mod present;
pub mod service;
pub mod storeio;

/// Environment variable naming the default snapshot directory.
pub const STORE_DIR_VAR: &str = "HMEM_STORE_DIR";
