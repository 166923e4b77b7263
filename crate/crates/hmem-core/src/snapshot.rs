//! Snapshot persistence: a manifest plus per-layer metadata tables and raw
//! vector blocks.
//!
//! On disk a snapshot is a directory:
//!
//! ```text
//! <dir>/manifest.json      format version, config, counts, checksums, remap
//! <dir>/layer<i>.meta.jsonl one JSON object per live node, in row order
//! <dir>/layer<i>.vec       raw little-endian f32, row-major, D per row
//! ```
//!
//! Tombstoned nodes are physically dropped at save time; the manifest's
//! remap table lists every `[old_row, new_row]` pair that moved so external
//! `NodeId`s can be migrated. Vector blocks round-trip bit-exactly and are
//! covered by per-layer CRC32 checksums verified before a load is used.
//! Writes go to a temporary sibling directory first and are renamed into
//! place.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicU64;

use serde::{Deserialize, Serialize};

use crate::config::HierarchyConfig;
use crate::error::SnapshotError;
use crate::node::{EpisodeContent, MemoryNode, NodeId, RetentionState};
use crate::store::MemoryStore;

/// Snapshot format version this build writes and reads.
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: HierarchyConfig,
    layers: Vec<LayerEntry>,
    episodes_inserted: u64,
    episodes_pruned: u64,
    /// Per layer: `[old_row, new_row]` for every live node whose row moved.
    remap: Vec<Vec<(u32, u32)>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerEntry {
    count: usize,
    vec_checksum: u32,
}

#[derive(Serialize, Deserialize)]
struct NodeRow {
    label: String,
    parent_row: Option<u32>,
    children_rows: Vec<u32>,
    retention: RetentionState,
    contributions: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    vector_sum: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    content: Option<EpisodeContent>,
}

/// What a save produced, for logging and tests.
#[derive(Debug, Clone, Serialize)]
pub struct SnapshotSummary {
    pub path: PathBuf,
    pub format_version: u32,
    pub live_per_layer: Vec<usize>,
    /// Nodes whose row index changed because tombstones were dropped.
    pub remapped: usize,
    pub vector_bytes: u64,
}

fn io_err(path: &Path, source: std::io::Error) -> SnapshotError {
    SnapshotError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn meta_name(layer: u8) -> String {
    format!("layer{layer}.meta.jsonl")
}

fn vec_name(layer: u8) -> String {
    format!("layer{layer}.vec")
}

/// Serialize the store into a snapshot directory at `path`, replacing any
/// snapshot already there. Integrity is checked first and an inconsistent
/// store is refused. Returns a summary of what was written.
pub fn save(store: &MemoryStore, path: impl AsRef<Path>) -> Result<SnapshotSummary, SnapshotError> {
    let path = path.as_ref();
    let violations = store.verify_integrity();
    if !violations.is_empty() {
        return Err(SnapshotError::IntegrityFailed(
            violations.len(),
            violations[0].to_string(),
        ));
    }

    // Remap: live nodes keep their relative order, tombstones are dropped.
    let levels = store.levels();
    let mut remap: Vec<Vec<(u32, u32)>> = Vec::with_capacity(levels as usize);
    let mut row_of: Vec<std::collections::HashMap<u32, u32>> = Vec::with_capacity(levels as usize);
    for layer in 1..=levels {
        let mut moved = Vec::new();
        let mut map = std::collections::HashMap::new();
        for (next, node) in store.live_nodes(layer).enumerate() {
            let next = next as u32;
            map.insert(node.id.row, next);
            if node.id.row != next {
                moved.push((node.id.row, next));
            }
        }
        remap.push(moved);
        row_of.push(map);
    }

    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    let tmp = parent.join(format!(
        ".{}.tmp-{}",
        path.file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| "snapshot".to_string()),
        std::process::id(),
    ));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| io_err(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| io_err(&tmp, e))?;

    let dim = store.config().dimension;
    let mut layer_entries = Vec::with_capacity(levels as usize);
    let mut vector_bytes = 0u64;
    for layer in 1..=levels {
        let li = layer as usize - 1;
        let meta_path = tmp.join(meta_name(layer));
        let vec_path = tmp.join(vec_name(layer));
        let mut meta = BufWriter::new(fs::File::create(&meta_path).map_err(|e| io_err(&meta_path, e))?);
        let mut vecs = BufWriter::new(fs::File::create(&vec_path).map_err(|e| io_err(&vec_path, e))?);
        let mut hasher = crc32fast::Hasher::new();
        let mut count = 0usize;
        for node in store.live_nodes(layer) {
            let row = NodeRow {
                label: node.label.clone(),
                parent_row: node
                    .parent
                    .map(|p| row_of[li - 1][&p.row]),
                children_rows: node
                    .children
                    .iter()
                    .map(|c| row_of[li + 1][&c.row])
                    .collect(),
                retention: node.retention,
                contributions: node.contributions,
                vector_sum: node.vector_sum.clone(),
                content: node.content.clone(),
            };
            let line = serde_json::to_string(&row)
                .map_err(|e| SnapshotError::ManifestInvalid(e.to_string()))?;
            meta.write_all(line.as_bytes())
                .and_then(|_| meta.write_all(b"\n"))
                .map_err(|e| io_err(&meta_path, e))?;
            debug_assert_eq!(node.vector.len(), dim);
            for &x in &node.vector {
                let bytes = x.to_le_bytes();
                hasher.update(&bytes);
                vecs.write_all(&bytes).map_err(|e| io_err(&vec_path, e))?;
            }
            vector_bytes += 4 * dim as u64;
            count += 1;
        }
        meta.flush().map_err(|e| io_err(&meta_path, e))?;
        vecs.flush().map_err(|e| io_err(&vec_path, e))?;
        layer_entries.push(LayerEntry {
            count,
            vec_checksum: hasher.finalize(),
        });
    }

    let manifest = Manifest {
        format_version: SNAPSHOT_VERSION,
        config: store.config().clone(),
        layers: layer_entries,
        episodes_inserted: store.stats().episodes_inserted,
        episodes_pruned: store.stats().episodes_pruned,
        remap: remap.clone(),
    };
    let manifest_path = tmp.join("manifest.json");
    fs::write(
        &manifest_path,
        serde_json::to_vec_pretty(&manifest)
            .map_err(|e| SnapshotError::ManifestInvalid(e.to_string()))?,
    )
    .map_err(|e| io_err(&manifest_path, e))?;

    // Swap into place: back up an existing snapshot, rename, drop the backup.
    if path.exists() {
        let backup = parent.join(format!(
            ".{}.old-{}",
            path.file_name()
                .map(|n| n.to_string_lossy().to_string())
                .unwrap_or_else(|| "snapshot".to_string()),
            std::process::id(),
        ));
        if backup.exists() {
            fs::remove_dir_all(&backup).map_err(|e| io_err(&backup, e))?;
        }
        fs::rename(path, &backup).map_err(|e| io_err(path, e))?;
        fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
        fs::remove_dir_all(&backup).map_err(|e| io_err(&backup, e))?;
    } else {
        fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
    }

    Ok(SnapshotSummary {
        path: path.to_path_buf(),
        format_version: SNAPSHOT_VERSION,
        live_per_layer: manifest.layers.iter().map(|l| l.count).collect(),
        remapped: remap.iter().map(|r| r.len()).sum(),
        vector_bytes,
    })
}

/// Load a snapshot directory back into a store. Checksums are verified
/// before the store is handed out, and the rebuilt store must pass the full
/// integrity check.
pub fn load(path: impl AsRef<Path>) -> Result<MemoryStore, SnapshotError> {
    let path = path.as_ref();
    let manifest_path = path.join("manifest.json");
    let manifest_text =
        fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&manifest_text)
        .map_err(|e| SnapshotError::ManifestInvalid(e.to_string()))?;
    if manifest.format_version != SNAPSHOT_VERSION {
        return Err(SnapshotError::VersionMismatch {
            found: manifest.format_version,
            supported: SNAPSHOT_VERSION,
        });
    }
    manifest.config.validate()?;
    let levels = manifest.config.levels;
    if manifest.layers.len() != levels as usize {
        return Err(SnapshotError::ManifestInvalid(format!(
            "manifest lists {} layers for a {}-level config",
            manifest.layers.len(),
            levels
        )));
    }

    let dim = manifest.config.dimension;
    let mut layers: Vec<Vec<MemoryNode>> = Vec::with_capacity(levels as usize);
    for layer in 1..=levels {
        let li = layer as usize - 1;
        let entry = &manifest.layers[li];
        let vec_path = path.join(vec_name(layer));
        let expected_bytes = (entry.count * dim * 4) as u64;
        let mut vec_file = fs::File::open(&vec_path).map_err(|e| io_err(&vec_path, e))?;
        let actual_bytes = vec_file
            .metadata()
            .map_err(|e| io_err(&vec_path, e))?
            .len();
        if actual_bytes != expected_bytes {
            return Err(SnapshotError::Truncated {
                layer,
                expected: expected_bytes,
                actual: actual_bytes,
            });
        }
        let mut raw = Vec::with_capacity(expected_bytes as usize);
        vec_file
            .read_to_end(&mut raw)
            .map_err(|e| io_err(&vec_path, e))?;
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(&raw);
        let actual_crc = hasher.finalize();
        if actual_crc != entry.vec_checksum {
            return Err(SnapshotError::ChecksumMismatch {
                layer,
                expected: entry.vec_checksum,
                actual: actual_crc,
            });
        }

        let meta_path = path.join(meta_name(layer));
        let meta = BufReader::new(fs::File::open(&meta_path).map_err(|e| io_err(&meta_path, e))?);
        let mut nodes = Vec::with_capacity(entry.count);
        for (row, line) in meta.lines().enumerate() {
            let line = line.map_err(|e| io_err(&meta_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let node_row: NodeRow = serde_json::from_str(&line).map_err(|e| {
                SnapshotError::ManifestInvalid(format!(
                    "{}: row {}: {}",
                    meta_name(layer),
                    row,
                    e
                ))
            })?;
            let offset = row * dim * 4;
            let vector: Vec<f32> = raw[offset..offset + dim * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            nodes.push(MemoryNode {
                id: NodeId::new(layer, row as u32),
                vector,
                label: node_row.label,
                children: node_row
                    .children_rows
                    .iter()
                    .map(|&r| NodeId::new(layer + 1, r))
                    .collect(),
                parent: node_row.parent_row.map(|r| NodeId::new(layer - 1, r)),
                retention: node_row.retention,
                tombstone: false,
                content: node_row.content,
                vector_sum: node_row.vector_sum,
                contributions: node_row.contributions,
            });
        }
        if nodes.len() != entry.count {
            return Err(SnapshotError::ManifestInvalid(format!(
                "{} holds {} rows, manifest says {}",
                meta_name(layer),
                nodes.len(),
                entry.count
            )));
        }
        layers.push(nodes);
    }

    let live = layers.iter().map(|l| l.len()).collect();
    let store = MemoryStore {
        config: manifest.config,
        layers,
        live,
        episodes_inserted: manifest.episodes_inserted,
        episodes_pruned: manifest.episodes_pruned,
        sim_ops: AtomicU64::new(0),
        retrieval_nanos: AtomicU64::new(0),
    };
    let violations = store.verify_integrity();
    if !violations.is_empty() {
        return Err(SnapshotError::ManifestInvalid(format!(
            "snapshot reconstructs an inconsistent store ({} violations, first: {})",
            violations.len(),
            violations[0]
        )));
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Feedback;
    use crate::encoder::HashEmbedder;
    use crate::ingest::{ingest_turn, StubExtractor};
    use crate::retrieval::Query;
    use crate::test_util::splitmix_unit_vector;

    fn populated_store(turns: usize) -> MemoryStore {
        let config = HierarchyConfig {
            dimension: 32,
            ..HierarchyConfig::default()
        };
        let mut store = MemoryStore::new(config).unwrap();
        let embedder = HashEmbedder::new(32);
        for turn in crate::bench::synth::corpus(turns, 17) {
            ingest_turn(&mut store, &embedder, &StubExtractor, &turn).unwrap();
        }
        store
    }

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap");
        let mut store = populated_store(60);
        // Touch retention so non-default values round-trip too.
        let ep = NodeId::new(4, 3);
        store.apply_feedback(ep, Feedback::approve(), 1_600_100_000).unwrap();
        store.decay(1_600_200_000);

        let summary = save(&store, &path).unwrap();
        assert_eq!(summary.remapped, 0);
        let loaded = load(&path).unwrap();

        assert!(loaded.verify_integrity().is_empty());
        assert_eq!(loaded.config(), store.config());
        for layer in 1..=4u8 {
            let a: Vec<&MemoryNode> = store.live_nodes(layer).collect();
            let b: Vec<&MemoryNode> = loaded.live_nodes(layer).collect();
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x, y, "node mismatch at layer {layer}");
            }
        }
        // Identical retrieval behavior.
        let q = Query::new(splitmix_unit_vector(32, 5)).unwrap();
        let ra = store.flat_retrieve(&q, 10).unwrap();
        let rb = loaded.flat_retrieve(&q, 10).unwrap();
        assert_eq!(ra.hits, rb.hits);
    }

    #[test]
    fn tombstones_are_dropped_with_a_remap_table() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap");
        let mut store = populated_store(30);
        // Push two episodes to the floor and compact them away.
        for row in [0u32, 5] {
            let id = NodeId::new(4, row);
            let mut r = store.node(id).unwrap().retention;
            r.weight = store.config().weight_min;
            store.set_retention(id, r).unwrap();
        }
        let pruned = store.compact();
        assert!(pruned >= 2);
        let live_before = store.episode_count();

        let summary = save(&store, &path).unwrap();
        assert!(summary.remapped > 0, "dropping rows must remap");
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.episode_count(), live_before);
        assert_eq!(loaded.rows(4), live_before, "tombstones physically gone");
        assert!(loaded.verify_integrity().is_empty());
        assert_eq!(loaded.stats().episodes_pruned, store.stats().episodes_pruned);
    }

    #[test]
    fn corrupt_vector_block_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap");
        let store = populated_store(10);
        save(&store, &path).unwrap();

        let vec_path = path.join("layer4.vec");
        let mut bytes = fs::read(&vec_path).unwrap();
        bytes[7] ^= 0xFF;
        fs::write(&vec_path, bytes).unwrap();
        assert!(matches!(
            load(&path),
            Err(SnapshotError::ChecksumMismatch { layer: 4, .. })
        ));
    }

    #[test]
    fn truncated_vector_block_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap");
        let store = populated_store(10);
        save(&store, &path).unwrap();

        let vec_path = path.join("layer4.vec");
        let bytes = fs::read(&vec_path).unwrap();
        fs::write(&vec_path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            load(&path),
            Err(SnapshotError::Truncated { layer: 4, .. })
        ));
    }

    #[test]
    fn future_version_is_rejected_naming_both() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap");
        let store = populated_store(5);
        save(&store, &path).unwrap();

        let manifest_path = path.join("manifest.json");
        let text = fs::read_to_string(&manifest_path)
            .unwrap()
            .replace("\"format_version\": 1", "\"format_version\": 9");
        fs::write(&manifest_path, text).unwrap();
        match load(&path) {
            Err(SnapshotError::VersionMismatch { found, supported }) => {
                assert_eq!(found, 9);
                assert_eq!(supported, SNAPSHOT_VERSION);
            }
            other => panic!("expected version mismatch, got {other:?}"),
        }
    }

    #[test]
    fn save_refuses_inconsistent_stores() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap");
        let mut store = populated_store(5);
        store.layers[0][0].children.push(NodeId::new(2, 99));
        match save(&store, &path) {
            Err(SnapshotError::IntegrityFailed(n, first)) => {
                assert_eq!(n, 1);
                assert!(first.contains("2:99"));
            }
            other => panic!("expected integrity failure, got {other:?}"),
        }
        assert!(!path.exists(), "no partial snapshot on failure");
    }

    #[test]
    fn save_to_unwritable_path_leaves_nothing() {
        let store = populated_store(3);
        let err = save(&store, "/proc/definitely/not/writable/snap").unwrap_err();
        assert!(matches!(err, SnapshotError::Io { .. }));
    }

    #[test]
    fn save_replaces_an_existing_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap");
        let small = populated_store(5);
        save(&small, &path).unwrap();
        let bigger = populated_store(20);
        save(&bigger, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.episode_count(), 20);
    }
}
