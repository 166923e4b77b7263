//! `hmem` — command line for the hierarchical memory engine.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 transport error.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use hmem_cli::service::{self, AppState};
use hmem_cli::{present, storeio};
use hmem_core::bench::{self, BenchOptions};
use hmem_core::ingest::{self, Extractor, LlmExtractor, StubExtractor, LLM_URL_VAR};
use hmem_core::{Error, Feedback, FeedbackKind, HierarchyConfig, MemoryStore, NodeId, Query};

#[derive(Parser)]
#[command(name = "hmem", version, about = "Hierarchical memory engine: ingest, query, evolve, serve, bench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a dialogue corpus into a store snapshot.
    Ingest {
        /// Corpus JSON file (sessions of turns).
        corpus: PathBuf,
        #[arg(long, env = "HMEM_STORE_DIR")]
        store: PathBuf,
        /// Use the deterministic rule-based extractor (default).
        #[arg(long, conflicts_with = "llm")]
        stub: bool,
        /// Use the chat-endpoint extractor (HMEM_LLM_URL).
        #[arg(long)]
        llm: bool,
    },
    /// Query a store and print ranked hits.
    Query {
        text: String,
        #[arg(long, env = "HMEM_STORE_DIR")]
        store: PathBuf,
        /// Per-level beam width (default: store config).
        #[arg(short)]
        k: Option<usize>,
        /// Result count (default: store config).
        #[arg(short)]
        n: Option<usize>,
        /// Scan every episode instead of routing through the index.
        #[arg(long)]
        flat: bool,
        /// Emit one JSON object per hit instead of text lines.
        #[arg(long)]
        json: bool,
    },
    /// Apply user feedback to an episode's memory weight.
    Feedback {
        /// Episode id as printed by `query`, e.g. `4:17`.
        episode: String,
        kind: KindArg,
        /// Externally generated multiplier, clipped to [0.5, 1.5].
        #[arg(long)]
        factor: Option<f64>,
        #[arg(long, env = "HMEM_STORE_DIR")]
        store: PathBuf,
    },
    /// Apply forgetting-curve decay to every episode.
    Decay {
        /// Decay up to this timestamp (seconds since epoch; default: now).
        #[arg(long)]
        now: Option<i64>,
        #[arg(long, env = "HMEM_STORE_DIR")]
        store: PathBuf,
    },
    /// Tombstone floor-weight episodes and empty index nodes.
    Compact {
        #[arg(long, env = "HMEM_STORE_DIR")]
        store: PathBuf,
    },
    /// Replay a corpus, comparing routed and flat retrieval costs.
    Bench {
        corpus: PathBuf,
        /// Where to write the JSON report.
        #[arg(long)]
        out: PathBuf,
        /// Vector dimension for the bench store.
        #[arg(long, default_value_t = 64)]
        dimension: usize,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        checkpoint_every: usize,
    },
    /// Serve the store over HTTP.
    Serve {
        /// host:port to bind.
        #[arg(long)]
        addr: String,
        #[arg(long, env = "HMEM_STORE_DIR")]
        store: PathBuf,
    },
    /// Check the store's structural invariants.
    Verify {
        #[arg(long, env = "HMEM_STORE_DIR")]
        store: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Approve,
    Neutral,
    Rebut,
}

impl From<KindArg> for FeedbackKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Approve => FeedbackKind::Approve,
            KindArg::Neutral => FeedbackKind::Neutral,
            KindArg::Rebut => FeedbackKind::Rebut,
        }
    }
}

enum CmdError {
    Data(String),
    Transport(String),
}

impl From<Error> for CmdError {
    fn from(e: Error) -> Self {
        if e.is_transport() {
            CmdError::Transport(e.to_string())
        } else {
            CmdError::Data(e.to_string())
        }
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::Data(e.to_string())
    }
}

fn now_epoch() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::SystemTime::UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}

fn extractor_from_flags(llm: bool) -> Result<Box<dyn Extractor>, CmdError> {
    if llm {
        Ok(Box::new(LlmExtractor::from_env().map_err(Error::Ingest)?))
    } else {
        Ok(Box::new(StubExtractor))
    }
}

fn run(cli: Cli) -> Result<(), CmdError> {
    match cli.command {
        Command::Ingest {
            corpus,
            store: dir,
            stub: _,
            llm,
        } => {
            let turns = ingest::load_corpus(&corpus).map_err(Error::Ingest)?;
            let mut store = storeio::open_or_default(&dir)?;
            let embedder = storeio::embedder_for(&store)?;
            let extractor = extractor_from_flags(llm)?;
            for turn in &turns {
                ingest::ingest_turn(&mut store, embedder.as_ref(), extractor.as_ref(), turn)?;
            }
            storeio::save(&store, &dir)?;
            let stats = store.stats();
            println!(
                "ingested {} turns into {} (live per layer: {:?})",
                turns.len(),
                dir.display(),
                stats.live_per_layer
            );
            Ok(())
        }
        Command::Query {
            text,
            store: dir,
            k,
            n,
            flat,
            json,
        } => {
            let mut store = storeio::open_or_default(&dir)?;
            let embedder = storeio::embedder_for(&store)?;
            let query = Query::new(embedder.embed(&text).map_err(Error::Encoder)?)
                .map_err(Error::Similarity)?;
            let k = k.unwrap_or(store.config().k_per_level);
            let n = n.unwrap_or(store.config().final_n);
            let result = if flat {
                store.flat_retrieve(&query, n).map_err(Error::Store)?
            } else {
                store.retrieve(&query, k, n).map_err(Error::Store)?
            };
            let rows = present::hit_rows(&store, &result);
            let rendered = if json {
                present::render_json(&rows)
            } else {
                present::render_text(&rows)
            };
            if !rendered.is_empty() {
                println!("{rendered}");
            }
            eprintln!(
                "# {} hits, {} sim ops, {} us",
                rows.len(),
                result.sim_ops,
                result.elapsed.as_micros()
            );
            Ok(())
        }
        Command::Feedback {
            episode,
            kind,
            factor,
            store: dir,
        } => {
            let id: NodeId = episode
                .parse()
                .map_err(|_| CmdError::Data(format!("invalid episode id `{episode}`")))?;
            let mut store = storeio::open_or_default(&dir)?;
            let outcome = store
                .apply_feedback(id, Feedback::new(kind.into(), factor), now_epoch())
                .map_err(Error::Store)?;
            storeio::save(&store, &dir)?;
            println!(
                "episode {episode}: weight {:.4} (multiplier {:.2}), strength {:.0}s",
                outcome.weight, outcome.multiplier, outcome.strength
            );
            Ok(())
        }
        Command::Decay { now, store: dir } => {
            let mut store = storeio::open_or_default(&dir)?;
            let at = now.unwrap_or_else(now_epoch);
            let updated = store.decay(at);
            storeio::save(&store, &dir)?;
            println!("decayed {updated} episodes (now = {at})");
            Ok(())
        }
        Command::Compact { store: dir } => {
            let mut store = storeio::open_or_default(&dir)?;
            let pruned = store.compact();
            storeio::save(&store, &dir)?;
            println!("pruned {pruned} nodes");
            Ok(())
        }
        Command::Bench {
            corpus,
            out,
            dimension,
            k,
            n,
            checkpoint_every,
        } => {
            let turns = ingest::load_corpus(&corpus).map_err(Error::Ingest)?;
            let config = HierarchyConfig {
                dimension,
                ..HierarchyConfig::default()
            };
            let options = BenchOptions {
                k,
                n,
                checkpoint_every,
            };
            let report = bench::run(config, &turns, options)?;
            std::fs::write(
                &out,
                serde_json::to_vec_pretty(&report)
                    .map_err(|e| CmdError::Data(e.to_string()))?,
            )?;
            print!("{}", report.table());
            println!("report written to {}", out.display());
            Ok(())
        }
        Command::Serve { addr, store: dir } => {
            let store = storeio::open_or_default(&dir)?;
            let embedder = storeio::embedder_for(&store)?;
            let extractor = extractor_from_flags(std::env::var(LLM_URL_VAR).is_ok())?;
            let state = Arc::new(AppState::new(
                store,
                embedder,
                extractor,
                Some(dir.clone()),
            ));
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&addr).await?;
                eprintln!("listening on {}", listener.local_addr()?);
                service::serve(state, listener).await
            })?;
            Ok(())
        }
        Command::Verify { store: dir } => {
            let store: MemoryStore = storeio::open_or_default(&dir)?;
            let violations = store.verify_integrity();
            if violations.is_empty() {
                println!(
                    "ok: {} live nodes across {} layers",
                    store.stats().live_per_layer.iter().sum::<usize>(),
                    store.levels()
                );
                Ok(())
            } else {
                for v in &violations {
                    eprintln!("violation: {v}");
                }
                Err(CmdError::Data(format!(
                    "{} integrity violations",
                    violations.len()
                )))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let usage_ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if usage_ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CmdError::Transport(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
