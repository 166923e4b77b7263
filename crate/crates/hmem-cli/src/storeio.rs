//! Opening and persisting store snapshots for the CLI and service.

use std::path::Path;

use hmem_core::encoder::{Embedder, HashEmbedder, RemoteEmbedder, EMBED_URL_VAR};
use hmem_core::{snapshot, Error, HierarchyConfig, MemoryStore};

/// Open the snapshot at `dir`, or a fresh default-config store when no
/// snapshot exists there yet. Commands that only read an absent store see
/// an empty one instead of an error.
pub fn open_or_default(dir: &Path) -> Result<MemoryStore, Error> {
    if dir.join("manifest.json").exists() {
        Ok(snapshot::load(dir)?)
    } else {
        Ok(MemoryStore::new(HierarchyConfig::default())?)
    }
}

/// Persist the store back to `dir`.
pub fn save(store: &MemoryStore, dir: &Path) -> Result<(), Error> {
    snapshot::save(store, dir)?;
    Ok(())
}

/// The embedder the store's queries and ingests should use: the remote
/// endpoint when `HMEM_EMBED_URL` is configured, the deterministic hash
/// embedder otherwise.
pub fn embedder_for(store: &MemoryStore) -> Result<Box<dyn Embedder>, Error> {
    let dimension = store.config().dimension;
    if std::env::var(EMBED_URL_VAR).is_ok() {
        Ok(Box::new(RemoteEmbedder::from_env(dimension)?))
    } else {
        Ok(Box::new(HashEmbedder::new(dimension)))
    }
}
