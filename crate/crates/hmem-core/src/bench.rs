//! Instrumented benchmark harness and deterministic synthetic fixtures.
//!
//! The harness replays a dialogue corpus through the stub extraction
//! pipeline and, after every ingested turn, issues the turn text as a query
//! through both routed retrieval and the flat baseline, recording exact
//! similarity-operation counts and wall-clock time. Checkpoints land every
//! `checkpoint_every` tasks and at each segment boundary, and a per-segment
//! summary table is produced at the end.
//!
//! Operation counts are reported as vector comparisons; multiply by the
//! configured dimension for a multiply-add reading. The sim-op columns are
//! fully deterministic; wall-clock columns depend on the machine.



use serde::Serialize;

use crate::config::HierarchyConfig;
use crate::encoder::{Embedder, HashEmbedder};
use crate::error::Error;
use crate::ingest::{ingest_turn, DialogueTurn, StubExtractor};
use crate::retrieval::Query;
use crate::store::MemoryStore;

/// Deterministic synthetic fixtures: seeded unit vectors, uniform trees,
/// and a multi-segment dialogue corpus.
pub mod synth {
    use super::*;
    use crate::ingest::ExtractionRecord;

    fn splitmix(state: &mut u64) -> u64 {
        *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// A unit vector whose entries are a pure function of `(dim, seed)`,
    /// stable across runs, platforms, and dependency versions.
    pub fn unit_vector(dim: usize, seed: u64) -> Vec<f32> {
        let mut state = seed ^ 0xD1B5_4A32_D192_ED03;
        let mut v: Vec<f32> = (0..dim)
            .map(|_| {
                let u = splitmix(&mut state);
                ((u >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0) as f32
            })
            .collect();
        let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
        if norm < 1e-12 {
            v.iter_mut().for_each(|x| *x = 0.0);
            v[0] = 1.0;
            return v;
        }
        for x in &mut v {
            *x = (*x as f64 / norm) as f32;
        }
        v
    }

    /// An 8-letter pseudo-word, a pure function of its seed.
    pub fn word(seed: u64) -> String {
        let mut state = seed ^ 0x9E6D_52F1_A273_44C1;
        (0..8)
            .map(|_| (b'a' + (splitmix(&mut state) % 26) as u8) as char)
            .collect()
    }

    fn path_seed(level: u8, path: &[usize]) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64 ^ level as u64;
        for &c in path {
            h ^= c as u64 + 1;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
            h ^= h >> 29;
        }
        h
    }

    /// Build a full uniform tree: `domains` roots, and `fanout` children per
    /// node on every layer below, through the store's normal insertion path.
    /// Node vectors are deterministic pseudo-random unit vectors, reused
    /// exactly along shared path prefixes so the intended shape is realized
    /// with a near-1.0 merge threshold.
    pub fn uniform_tree(
        domains: usize,
        fanout: usize,
        mut config: HierarchyConfig,
    ) -> Result<MemoryStore, Error> {
        config.merge_threshold = 0.9999;
        let levels = config.levels as usize;
        let dim = config.dimension;
        let mut store = MemoryStore::new(config)?;

        let mut path = vec![0usize; levels];
        let total: usize = domains * fanout.pow(levels as u32 - 1);
        for episode in 0..total {
            // Decompose the episode index into a path: domain digit first,
            // then one fanout digit per deeper level.
            let mut rest = episode;
            for li in (1..levels).rev() {
                path[li] = rest % fanout;
                rest /= fanout;
            }
            path[0] = rest;

            let mut vectors = Vec::with_capacity(levels);
            for (li, _) in path.iter().enumerate().take(levels) {
                vectors.push(unit_vector(dim, path_seed(li as u8 + 1, &path[..=li])));
            }
            let record = ExtractionRecord::new(
                (0..levels - 1)
                    .map(|li| format!("n{}", path_seed(li as u8 + 1, &path[..=li]) % 100_000))
                    .collect(),
                format!("episode {episode}"),
                String::new(),
                1 + episode as i64,
            )
            .expect("labels are non-empty");
            store.insert(&record, vectors)?;
        }
        Ok(store)
    }

    /// The five task segments the synthetic corpus cycles through, prefixed
    /// so lexicographic order matches generation order.
    pub const SEGMENTS: [&str; 5] = [
        "1-single_hop",
        "2-multi_hop",
        "3-temporal",
        "4-open_domain",
        "5-adversarial",
    ];

    const DOMAIN_HINTS: [(&str, [&str; 3]); 10] = [
        ("ski", ["ski", "football", "basketball"]),
        ("movie", ["action", "comedy", "horror"]),
        ("doctor", ["gym", "diet", "anxiety"]),
        ("office", ["milestone", "resume", "agenda"]),
        ("travel", ["airline", "hostel", "museum"]),
        ("dinner", ["bake", "menu", "pasta"]),
        ("music", ["metal", "symphony", "jazz"]),
        ("money", ["portfolio", "expense", "refund"]),
        ("software", ["compiler", "tablet", "neural"]),
        ("school", ["seminar", "quiz", "grammar"]),
    ];

    /// Distinct trace triples generated per (domain, category) cell.
    const TRACES_PER_CELL: usize = 60;

    /// Generate a deterministic five-segment corpus of `turns` dialogue
    /// turns. Texts cycle domain and category keywords from the stub table
    /// and rotate through a bounded per-cell vocabulary of trace words, so
    /// the ingested hierarchy keeps a bounded fan-out while every episode
    /// stays unique.
    pub fn corpus(turns: usize, seed: u64) -> Vec<DialogueTurn> {
        let base_time = 1_600_000_000i64;
        let per_segment = turns.div_ceil(SEGMENTS.len());
        (0..turns)
            .map(|i| {
                let (domain_kw, categories) = DOMAIN_HINTS[i % DOMAIN_HINTS.len()];
                let cat = (i / DOMAIN_HINTS.len()) % 3;
                let cat_kw = categories[cat];
                let cell = (i % DOMAIN_HINTS.len()) * 3 + cat;
                let triple = (i / (DOMAIN_HINTS.len() * 3)) % TRACES_PER_CELL;
                let w: Vec<String> = (0..3)
                    .map(|j| {
                        word(seed ^ path_seed(0, &[cell, triple * 3 + j]))
                    })
                    .collect();
                let segment = SEGMENTS[(i / per_segment).min(SEGMENTS.len() - 1)];
                DialogueTurn {
                    session_id: segment.to_string(),
                    turn_id: (i % per_segment) as u32,
                    speaker: if i % 2 == 0 { "user" } else { "assistant" }.to_string(),
                    text: format!(
                        "{} {} {} {} {} {} {domain_kw} {cat_kw} note{i}",
                        w[0], w[1], w[2], w[0], w[1], w[2]
                    ),
                    timestamp: base_time + 60 * i as i64,
                }
            })
            .collect()
    }
}

/// Harness options.
#[derive(Debug, Clone, Serialize)]
pub struct BenchOptions {
    /// Per-level beam width for routed retrieval.
    pub k: usize,
    /// Episodes returned per query.
    pub n: usize,
    /// Checkpoint cadence in tasks.
    pub checkpoint_every: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            k: 10,
            n: 10,
            checkpoint_every: 10,
        }
    }
}

/// Instantaneous measurements taken after a specific task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Checkpoint {
    /// Tasks completed when this checkpoint was taken.
    pub tasks: usize,
    /// Segment (session) the task belonged to.
    pub segment: String,
    /// Live episodes in the store at this point.
    pub episodes: usize,
    /// Similarity ops of the routed query issued after this task.
    pub routed_sim_ops: u64,
    /// Similarity ops of the flat query issued after this task.
    pub flat_sim_ops: u64,
    pub routed_nanos: u64,
    pub flat_nanos: u64,
}

/// Totals and means over one corpus segment.
#[derive(Debug, Clone, Serialize)]
pub struct SegmentSummary {
    pub segment: String,
    pub tasks: usize,
    pub mean_routed_sim_ops: f64,
    pub mean_flat_sim_ops: f64,
    /// Mean ops multiplied by the vector dimension: the multiply-add view.
    pub mean_routed_ops_times_dim: f64,
    pub mean_flat_ops_times_dim: f64,
    pub mean_routed_micros: f64,
    pub mean_flat_micros: f64,
    pub total_routed_sim_ops: u64,
    pub total_flat_sim_ops: u64,
}

/// Full harness output: checkpoint rows plus the per-segment table.
#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub config: HierarchyConfig,
    pub options: BenchOptions,
    pub tasks: usize,
    pub final_episodes: usize,
    pub checkpoints: Vec<Checkpoint>,
    pub segments: Vec<SegmentSummary>,
    pub total_routed_sim_ops: u64,
    pub total_flat_sim_ops: u64,
    pub total_routed_nanos: u64,
    pub total_flat_nanos: u64,
}

impl BenchReport {
    /// Wall-clock speedup of routed retrieval over the flat baseline.
    pub fn wall_clock_speedup(&self) -> f64 {
        if self.total_routed_nanos == 0 {
            return f64::INFINITY;
        }
        self.total_flat_nanos as f64 / self.total_routed_nanos as f64
    }

    /// Column-aligned per-segment summary, one row per segment.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {:>8} {:>16} {:>16} {:>14} {:>14}\n",
            "segment", "tasks", "routed ops/q", "flat ops/q", "routed us/q", "flat us/q"
        ));
        for s in &self.segments {
            out.push_str(&format!(
                "{:<16} {:>8} {:>16.1} {:>16.1} {:>14.1} {:>14.1}\n",
                s.segment,
                s.tasks,
                s.mean_routed_sim_ops,
                s.mean_flat_sim_ops,
                s.mean_routed_micros,
                s.mean_flat_micros
            ));
        }
        out.push_str(&format!(
            "total: {} tasks, {} episodes, routed {} ops / flat {} ops, wall-clock speedup {:.1}x (dimension {})\n",
            self.tasks,
            self.final_episodes,
            self.total_routed_sim_ops,
            self.total_flat_sim_ops,
            self.wall_clock_speedup(),
            self.config.dimension,
        ));
        out
    }
}

struct SegmentAccumulator {
    segment: String,
    tasks: usize,
    routed_ops: u64,
    flat_ops: u64,
    routed_nanos: u64,
    flat_nanos: u64,
}

/// Replay `turns` through the deterministic stub pipeline, querying after
/// every ingest with the turn text through both retrieval paths.
pub fn run(
    config: HierarchyConfig,
    turns: &[DialogueTurn],
    options: BenchOptions,
) -> Result<BenchReport, Error> {
    let embedder = HashEmbedder::new(config.dimension);
    let mut store = MemoryStore::new(config.clone())?;
    let mut checkpoints = Vec::new();
    let mut segments: Vec<SegmentAccumulator> = Vec::new();
    let mut total_routed = (0u64, 0u64);
    let mut total_flat = (0u64, 0u64);

    for (idx, turn) in turns.iter().enumerate() {
        ingest_turn(&mut store, &embedder, &StubExtractor, turn)?;
        let query = Query::new(embedder.embed(&turn.text)?)?;

        store.reset_counters();
        let routed = store.retrieve_at(&query, options.k, options.n, turn.timestamp)?;
        let routed_counter = store.reset_counters();
        debug_assert_eq!(routed_counter.sim_ops, routed.sim_ops);

        let flat = store.flat_retrieve(&query, options.n)?;
        let flat_counter = store.reset_counters();
        debug_assert_eq!(flat_counter.sim_ops, flat.sim_ops);

        let routed_nanos = routed.elapsed.as_nanos() as u64;
        let flat_nanos = flat.elapsed.as_nanos() as u64;
        total_routed = (total_routed.0 + routed.sim_ops, total_routed.1 + routed_nanos);
        total_flat = (total_flat.0 + flat.sim_ops, total_flat.1 + flat_nanos);

        if segments.last().map(|s| s.segment.as_str()) != Some(turn.session_id.as_str()) {
            segments.push(SegmentAccumulator {
                segment: turn.session_id.clone(),
                tasks: 0,
                routed_ops: 0,
                flat_ops: 0,
                routed_nanos: 0,
                flat_nanos: 0,
            });
        }
        let acc = segments.last_mut().expect("just pushed");
        acc.tasks += 1;
        acc.routed_ops += routed.sim_ops;
        acc.flat_ops += flat.sim_ops;
        acc.routed_nanos += routed_nanos;
        acc.flat_nanos += flat_nanos;

        let task = idx + 1;
        let segment_boundary = turns
            .get(idx + 1)
            .is_none_or(|next| next.session_id != turn.session_id);
        if task % options.checkpoint_every == 0 || segment_boundary {
            checkpoints.push(Checkpoint {
                tasks: task,
                segment: turn.session_id.clone(),
                episodes: store.episode_count(),
                routed_sim_ops: routed.sim_ops,
                flat_sim_ops: flat.sim_ops,
                routed_nanos,
                flat_nanos,
            });
        }
    }

    let dim = store.config().dimension as f64;
    let segments = segments
        .into_iter()
        .map(|s| {
            let tasks = s.tasks.max(1) as f64;
            SegmentSummary {
                mean_routed_sim_ops: s.routed_ops as f64 / tasks,
                mean_flat_sim_ops: s.flat_ops as f64 / tasks,
                mean_routed_ops_times_dim: s.routed_ops as f64 * dim / tasks,
                mean_flat_ops_times_dim: s.flat_ops as f64 * dim / tasks,
                mean_routed_micros: s.routed_nanos as f64 / tasks / 1_000.0,
                mean_flat_micros: s.flat_nanos as f64 / tasks / 1_000.0,
                total_routed_sim_ops: s.routed_ops,
                total_flat_sim_ops: s.flat_ops,
                segment: s.segment,
                tasks: s.tasks,
            }
        })
        .collect();

    Ok(BenchReport {
        config: store.config().clone(),
        options,
        tasks: turns.len(),
        final_episodes: store.episode_count(),
        checkpoints,
        segments,
        total_routed_sim_ops: total_routed.0,
        total_flat_sim_ops: total_flat.0,
        total_routed_nanos: total_routed.1,
        total_flat_nanos: total_flat.1,
    })
}

/// The elapsed-time fields make reports non-identical across runs; this
/// projection keeps only the deterministic columns, for equality checks.
pub fn sim_op_columns(report: &BenchReport) -> Vec<(usize, u64, u64)> {
    report
        .checkpoints
        .iter()
        .map(|c| (c.tasks, c.routed_sim_ops, c.flat_sim_ops))
        .collect()
}
