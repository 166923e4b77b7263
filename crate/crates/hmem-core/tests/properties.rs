//! Property tests over the crate's core invariants.

use proptest::prelude::*;

use hmem_core::bench::synth;
use hmem_core::encoder::{Embedder, HashEmbedder};
use hmem_core::ingest::ExtractionRecord;
use hmem_core::{cosine, HierarchyConfig, MemoryStore, NodeId, Query};

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// The engine's scoring function, restated here so the argsort oracle ranks
/// by bitwise-identical similarities: eight accumulator lanes in fixed
/// order, then a fixed-order reduction.
fn lane_dot(a: &[f32], b: &[f32]) -> f32 {
    const LANES: usize = 8;
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

proptest! {
    /// Every embedding is unit-norm and a pure function of its input.
    #[test]
    fn hash_embed_unit_and_pure(text in ".{0,200}", dim in 1usize..256) {
        let embedder = HashEmbedder::new(dim);
        let a = embedder.embed(&text).unwrap();
        let b = embedder.embed(&text).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), dim);
        prop_assert!((norm(&a) - 1.0).abs() < 1e-6);
    }

    /// Cosine is symmetric and bounded on arbitrary non-zero vectors.
    #[test]
    fn cosine_symmetric_and_bounded(
        a in prop::collection::vec(-100.0f32..100.0, 1..64),
        b in prop::collection::vec(-100.0f32..100.0, 1..64),
    ) {
        let n = a.len().min(b.len());
        let (a, b) = (&a[..n], &b[..n]);
        prop_assume!(norm(a) > 1e-3 && norm(b) > 1e-3);
        let ab = cosine(a, b).unwrap();
        let ba = cosine(b, a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&ab));
    }

    /// Queries normalize any non-degenerate vector.
    #[test]
    fn query_normalizes(v in prop::collection::vec(-10.0f32..10.0, 2..64)) {
        prop_assume!(norm(&v) > 1e-3);
        let q = Query::new(v).unwrap();
        prop_assert!((norm(q.vector()) - 1.0).abs() < 1e-6);
    }

    /// Any record accepted by validation (with insertable episode content)
    /// ingests without error, and the store stays consistent.
    #[test]
    fn accepted_records_insert_cleanly(
        domain in "[a-z]{1,20}",
        category in "[a-z]{1,20}",
        trace in "[a-z ]{0,40}",
        text in ".{1,100}",
        seed in 0u64..1000,
    ) {
        let record = ExtractionRecord::four_level(domain, category, trace, text, "p", 1_000)
            .expect("labels are non-empty");
        let mut store = MemoryStore::new(HierarchyConfig {
            dimension: 16,
            ..HierarchyConfig::default()
        }).unwrap();
        let vectors = (0..4).map(|i| synth::unit_vector(16, seed * 7 + i)).collect();
        let id = store.insert(&record, vectors).unwrap();
        prop_assert_eq!(id.layer, 4);
        prop_assert!(store.verify_integrity().is_empty());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Flat retrieval equals an independently computed argsort of every
    /// episode's similarity, for random store sizes and queries.
    #[test]
    fn flat_matches_argsort_oracle(episodes in 1usize..120, qseed in 0u64..500) {
        let dim = 16;
        let mut store = MemoryStore::new(HierarchyConfig {
            dimension: dim,
            merge_threshold: 0.9999,
            ..HierarchyConfig::default()
        }).unwrap();
        let d = synth::unit_vector(dim, 1);
        let c = synth::unit_vector(dim, 2);
        let t = synth::unit_vector(dim, 3);
        let record = ExtractionRecord::four_level("d", "c", "t", "x", "", 5).unwrap();
        for e in 0..episodes {
            let ev = synth::unit_vector(dim, 0x5000 + e as u64);
            store.insert(&record, vec![d.clone(), c.clone(), t.clone(), ev]).unwrap();
        }
        let query = Query::new(synth::unit_vector(dim, 0x9000 + qseed)).unwrap();

        // Oracle: re-score everything and argsort, independently of the
        // engine's bounded-heap selection.
        let mut expected: Vec<(f32, NodeId)> = store
            .live_nodes(4)
            .map(|n| (lane_dot(query.vector(), &n.vector), n.id))
            .collect();
        expected.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.row.cmp(&b.1.row)));
        expected.truncate(10);

        let got = store.flat_retrieve(&query, 10).unwrap();
        prop_assert_eq!(got.sim_ops as usize, episodes);
        prop_assert_eq!(got.hits.len(), expected.len());
        for (hit, (sim, id)) in got.hits.iter().zip(&expected) {
            prop_assert_eq!(hit.episode, *id);
            prop_assert_eq!(hit.similarity, *sim, "scores must match bitwise");
            // Sanity: the f32 dot agrees with the f64 cosine on unit vectors.
            let reference = cosine(query.vector(), &store.node(*id).unwrap().vector).unwrap();
            prop_assert!((hit.similarity as f64 - reference).abs() < 1e-5);
        }
    }
}
