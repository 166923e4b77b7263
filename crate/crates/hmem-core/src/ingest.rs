//! Turning raw dialogue into extraction records: an LLM-backed extractor, a
//! deterministic rule-based stub, a corpus loader, and the glue that embeds
//! an extracted record and inserts it into the store.

use std::path::Path;
use std::sync::OnceLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::encoder::Embedder;
use crate::error::{Error, IngestError, StoreError};
use crate::node::NodeId;
use crate::store::MemoryStore;

/// Environment variable naming the chat-completion endpoint URL.
pub const LLM_URL_VAR: &str = "HMEM_LLM_URL";
/// Environment variable naming the extraction model.
pub const LLM_MODEL_VAR: &str = "HMEM_LLM_MODEL";

/// The extraction prompt sent to the chat endpoint, shipped as data so it
/// can be diffed and pinned.
pub const EXTRACTION_PROMPT: &str = include_str!("../data/extraction_prompt.txt");
/// Version tag for the shipped prompt; bump when the prompt text changes.
pub const EXTRACTION_PROMPT_VERSION: &str = "1";

/// Maximum label length after normalization, ellipsis marker included.
pub const MAX_LABEL_CHARS: usize = 128;

/// Structured output of the extraction step: one label per index level plus
/// the episode payload.
///
/// Labels run from most abstract to most specific. For the default
/// four-level hierarchy they are domain, category, and trace-keyword
/// summary. Labels are trimmed and truncated to [`MAX_LABEL_CHARS`] at
/// construction; every label except the final keyword summary must be
/// non-empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    labels: Vec<String>,
    pub episode_text: String,
    pub profile: String,
    pub timestamp: i64,
}

/// An extraction record failed its construction rules.
#[derive(Debug, Clone, thiserror::Error)]
#[error("invalid extraction record: {0}")]
pub struct RecordError(pub String);

fn normalize_label(raw: &str) -> String {
    let trimmed = raw.trim();
    if trimmed.chars().count() <= MAX_LABEL_CHARS {
        return trimmed.to_string();
    }
    let mut out: String = trimmed.chars().take(MAX_LABEL_CHARS - 1).collect();
    out.push('\u{2026}');
    out
}

impl ExtractionRecord {
    /// Build a record with one label per index level (most abstract first).
    pub fn new(
        labels: Vec<String>,
        episode_text: impl Into<String>,
        profile: impl Into<String>,
        timestamp: i64,
    ) -> Result<Self, RecordError> {
        if labels.is_empty() {
            return Err(RecordError("at least one label level is required".into()));
        }
        let labels: Vec<String> = labels.iter().map(|l| normalize_label(l)).collect();
        for (i, label) in labels.iter().enumerate() {
            // The final level is a keyword summary and may legitimately be
            // empty for degenerate inputs; everything above it must name
            // something.
            if label.is_empty() && i + 1 < labels.len() {
                return Err(RecordError(format!("label at level {} is empty", i + 1)));
            }
        }
        Ok(Self {
            labels,
            episode_text: episode_text.into(),
            profile: profile.into(),
            timestamp,
        })
    }

    /// Convenience constructor for the default four-level hierarchy.
    pub fn four_level(
        domain: impl Into<String>,
        category: impl Into<String>,
        trace: impl Into<String>,
        episode_text: impl Into<String>,
        profile: impl Into<String>,
        timestamp: i64,
    ) -> Result<Self, RecordError> {
        Self::new(
            vec![domain.into(), category.into(), trace.into()],
            episode_text,
            profile,
            timestamp,
        )
    }

    /// Number of levels this record supplies (labels plus the episode).
    pub fn levels(&self) -> u8 {
        (self.labels.len() + 1).min(u8::MAX as usize) as u8
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn domain(&self) -> &str {
        &self.labels[0]
    }

    pub fn category(&self) -> Option<&str> {
        self.labels.get(1).map(String::as_str)
    }

    pub fn trace(&self) -> Option<&str> {
        self.labels.get(2).map(String::as_str)
    }

    /// Adapt this record to a store with fewer levels by dropping the most
    /// specific labels. Fails when the record cannot supply enough levels.
    pub fn truncated_to(&self, levels: u8) -> Result<ExtractionRecord, StoreError> {
        if levels == self.levels() {
            return Ok(self.clone());
        }
        let wanted = levels as usize - 1;
        if wanted > self.labels.len() || wanted == 0 {
            return Err(StoreError::LevelMismatch {
                expected: levels,
                got: self.levels(),
            });
        }
        Ok(ExtractionRecord {
            labels: self.labels[..wanted].to_vec(),
            episode_text: self.episode_text.clone(),
            profile: self.profile.clone(),
            timestamp: self.timestamp,
        })
    }
}

/// One turn of a multi-session dialogue corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub session_id: String,
    pub turn_id: u32,
    pub speaker: String,
    pub text: String,
    pub timestamp: i64,
}

/// Anything that turns a dialogue turn into an extraction record.
pub trait Extractor: Send + Sync {
    fn extract(&self, turn: &DialogueTurn) -> Result<ExtractionRecord, IngestError>;
}

// ---------------------------------------------------------------------------
// Corpus loading
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct CorpusFile {
    sessions: Vec<CorpusSession>,
}

#[derive(Deserialize)]
struct CorpusSession {
    id: String,
    /// Session start time in seconds since the epoch. Turns without their
    /// own timestamp get `start + 60 * index`.
    start: i64,
    turns: Vec<CorpusTurn>,
}

#[derive(Deserialize)]
struct CorpusTurn {
    speaker: String,
    text: String,
    #[serde(default)]
    timestamp: Option<i64>,
}

/// Load a JSON corpus of sessions and turns.
///
/// Missing per-turn timestamps are synthesized as `session.start + 60 *
/// turn_index`. Turns are returned sorted by `(session_id, turn_id)`.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<DialogueTurn>, IngestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::CorpusIo {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&text)
}

/// Parse corpus JSON from a string. See [`load_corpus`].
pub fn parse_corpus(text: &str) -> Result<Vec<DialogueTurn>, IngestError> {
    let file: CorpusFile =
        serde_json::from_str(text).map_err(|e| IngestError::CorpusParse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
    let mut seen = std::collections::HashSet::new();
    let mut turns = Vec::new();
    for session in &file.sessions {
        if !seen.insert(session.id.as_str()) {
            return Err(IngestError::CorpusInvalid(format!(
                "duplicate session id `{}`",
                session.id
            )));
        }
        for (i, turn) in session.turns.iter().enumerate() {
            turns.push(DialogueTurn {
                session_id: session.id.clone(),
                turn_id: i as u32,
                speaker: turn.speaker.clone(),
                text: turn.text.clone(),
                timestamp: turn.timestamp.unwrap_or(session.start + 60 * i as i64),
            });
        }
    }
    turns.sort_by(|a, b| {
        a.session_id
            .cmp(&b.session_id)
            .then(a.turn_id.cmp(&b.turn_id))
    });
    Ok(turns)
}

// ---------------------------------------------------------------------------
// Rule-based stub extractor
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct DomainTable {
    domains: Vec<DomainEntry>,
}

#[derive(Deserialize)]
struct DomainEntry {
    name: String,
    keywords: Vec<String>,
    categories: Vec<CategoryEntry>,
}

#[derive(Deserialize)]
struct CategoryEntry {
    name: String,
    keywords: Vec<String>,
}

/// The keyword table driving the stub extractor, shipped as a data file so
/// tests and documentation can reference it.
pub const STUB_DOMAIN_TABLE: &str = include_str!("../data/stub_domains.json");

fn domain_table() -> &'static DomainTable {
    static TABLE: OnceLock<DomainTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        serde_json::from_str(STUB_DOMAIN_TABLE).expect("bundled domain table parses")
    })
}

const STOPWORDS: &[&str] = &[
    "the", "and", "for", "you", "your", "that", "this", "with", "was", "are", "but", "have",
    "has", "had", "not", "can", "could", "would", "should", "about", "what", "when", "where",
    "which", "who", "how", "did", "does", "all", "any", "get", "got", "just", "really", "some",
    "there", "then", "than", "too", "very", "into", "out", "our", "their", "them", "they",
    "were", "been", "being", "from", "will", "going", "want", "like", "its", "it's", "i'm",
    "don't", "doesn't", "yes", "also", "she", "him", "her", "his", "hers", "recommend", "tell",
    "know", "think", "say", "said", "one", "two", "last", "next", "today", "yesterday",
    "tomorrow", "maybe", "please",
];

const SENTIMENT_WORDS: &[&str] = &[
    "love", "loves", "loved", "like", "likes", "liked", "enjoy", "enjoys", "enjoyed", "hate",
    "hates", "hated", "dislike", "dislikes", "excited", "happy", "sad", "angry", "bored",
    "curious", "frustrated", "worried", "proud", "nervous", "thrilled",
];

fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric() && c != '-' && c != '\'')
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

/// Deterministic rule-based extraction: keyword-table domain and category,
/// term-frequency trace keywords, and a speaker(+sentiment) profile.
///
/// Never fails; text that matches nothing lands in the `other` domain with a
/// `general` category.
pub fn extract_stub(turn: &DialogueTurn) -> ExtractionRecord {
    let tokens = tokenize(&turn.text);
    let table = domain_table();

    // Domain: most keyword hits wins; ties go to table order.
    let mut best_domain: Option<(usize, usize)> = None; // (index, score)
    for (i, domain) in table.domains.iter().enumerate() {
        let score = tokens
            .iter()
            .filter(|t| domain.keywords.iter().any(|k| k == *t))
            .count();
        if score > 0 && best_domain.is_none_or(|(_, s)| score > s) {
            best_domain = Some((i, score));
        }
    }
    let (domain_name, categories) = match best_domain {
        Some((i, _)) => (
            table.domains[i].name.as_str(),
            table.domains[i].categories.as_slice(),
        ),
        None => ("other", &[][..]),
    };

    // Category: best-scoring sub-table entry, `general` when nothing hits.
    let mut best_category: Option<(usize, usize)> = None;
    for (i, category) in categories.iter().enumerate() {
        let score = tokens
            .iter()
            .filter(|t| category.keywords.iter().any(|k| k == *t))
            .count();
        if score > 0 && best_category.is_none_or(|(_, s)| score > s) {
            best_category = Some((i, score));
        }
    }
    let category_name = match best_category {
        Some((i, _)) => categories[i].name.as_str(),
        None => "general",
    };

    // Trace: top-3 content words by term frequency, first occurrence breaks
    // ties, joined with commas.
    let mut counts: Vec<(String, usize, usize)> = Vec::new(); // (token, count, first_pos)
    for (pos, token) in tokens.iter().enumerate() {
        if token.len() < 3 || STOPWORDS.contains(&token.as_str()) {
            continue;
        }
        match counts.iter_mut().find(|(t, _, _)| t == token) {
            Some(entry) => entry.1 += 1,
            None => counts.push((token.clone(), 1, pos)),
        }
    }
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let trace = counts
        .iter()
        .take(3)
        .map(|(t, _, _)| t.as_str())
        .collect::<Vec<_>>()
        .join(", ");

    // Profile: speaker plus the first sentiment word, if any.
    let profile = match tokens.iter().find(|t| SENTIMENT_WORDS.contains(&t.as_str())) {
        Some(word) => format!("{} ({})", turn.speaker, word),
        None => turn.speaker.clone(),
    };

    ExtractionRecord::four_level(
        domain_name,
        category_name,
        trace,
        turn.text.clone(),
        profile,
        turn.timestamp,
    )
    .expect("stub output always satisfies record rules")
}

/// Zero-configuration [`Extractor`] backed by [`extract_stub`].
#[derive(Debug, Clone, Copy, Default)]
pub struct StubExtractor;

impl Extractor for StubExtractor {
    fn extract(&self, turn: &DialogueTurn) -> Result<ExtractionRecord, IngestError> {
        Ok(extract_stub(turn))
    }
}

// ---------------------------------------------------------------------------
// LLM-backed extractor
// ---------------------------------------------------------------------------

/// Client for a chat-completion endpoint that runs the extraction prompt
/// and validates the JSON reply, with one repair retry on invalid replies.
pub struct LlmExtractor {
    url: String,
    model: String,
    agent: ureq::Agent,
    max_attempts: u32,
    backoff: Duration,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

impl LlmExtractor {
    pub fn new(url: impl Into<String>, model: impl Into<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build();
        Self {
            url: url.into(),
            model: model.into(),
            agent: ureq::Agent::new_with_config(config),
            max_attempts: 3,
            backoff: Duration::from_millis(250),
        }
    }

    /// Configure the endpoint from `HMEM_LLM_URL` and `HMEM_LLM_MODEL`.
    pub fn from_env() -> Result<Self, IngestError> {
        let url = std::env::var(LLM_URL_VAR)
            .map_err(|_| IngestError::NotConfigured(format!("{LLM_URL_VAR} is not set")))?;
        let model = std::env::var(LLM_MODEL_VAR).unwrap_or_else(|_| "default".to_string());
        Ok(Self::new(url, model, Duration::from_secs(60)))
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn chat(&self, messages: &serde_json::Value) -> Result<String, IngestError> {
        let body = json!({ "model": self.model, "messages": messages, "temperature": 0 });
        let mut last_error = String::new();
        for attempt in 1..=self.max_attempts {
            if attempt > 1 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 2));
            }
            match self.agent.post(&self.url).send_json(&body) {
                Ok(mut response) => {
                    let parsed: ChatResponse =
                        response.body_mut().read_json().map_err(|e| {
                            IngestError::Transport {
                                attempts: attempt,
                                message: format!("unreadable chat response: {e}"),
                            }
                        })?;
                    return parsed
                        .choices
                        .into_iter()
                        .next()
                        .map(|c| c.message.content)
                        .ok_or_else(|| IngestError::Transport {
                            attempts: attempt,
                            message: "chat response had no choices".to_string(),
                        });
                }
                Err(ureq::Error::StatusCode(code)) if code < 500 => {
                    return Err(IngestError::Transport {
                        attempts: attempt,
                        message: format!("endpoint returned status {code}"),
                    });
                }
                Err(e) => last_error = e.to_string(),
            }
        }
        Err(IngestError::Transport {
            attempts: self.max_attempts,
            message: last_error,
        })
    }
}

/// Pull the JSON object out of a chat reply, tolerating markdown fences and
/// prose around it.
fn extract_json_object(reply: &str) -> Option<&str> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    (end > start).then(|| &reply[start..=end])
}

/// Validate a parsed reply against the extraction schema. Returns the
/// field-level failure so the repair prompt can quote it.
fn validate_reply(reply: &str, turn: &DialogueTurn) -> Result<ExtractionRecord, String> {
    let object = extract_json_object(reply).ok_or("reply contains no JSON object")?;
    let value: serde_json::Value =
        serde_json::from_str(object).map_err(|e| format!("reply is not valid JSON: {e}"))?;
    let field = |name: &str| -> Result<&serde_json::Value, String> {
        value.get(name).ok_or(format!("missing field \"{name}\""))
    };
    let text_field = |name: &str| -> Result<String, String> {
        let v = field(name)?;
        let s = v
            .as_str()
            .ok_or(format!("field \"{name}\" must be a string"))?;
        if s.trim().is_empty() {
            return Err(format!("field \"{name}\" is empty"));
        }
        Ok(s.trim().to_string())
    };

    let domain = text_field("domain")?;
    let category = text_field("category")?;
    let keywords = match field("keywords")? {
        serde_json::Value::String(s) => s.trim().to_string(),
        serde_json::Value::Array(items) => items
            .iter()
            .filter_map(|v| v.as_str())
            .collect::<Vec<_>>()
            .join(", "),
        _ => return Err("field \"keywords\" must be a string or array of strings".into()),
    };
    let profile = match value.get("profile") {
        Some(serde_json::Value::String(s)) => s.trim().to_string(),
        Some(_) => return Err("field \"profile\" must be a string".into()),
        None => return Err("missing field \"profile\"".into()),
    };

    // The episode keeps the turn's full text; the reply's "events" summary
    // may exist but the store preserves the complete interaction.
    ExtractionRecord::four_level(
        domain,
        category,
        keywords,
        turn.text.clone(),
        profile,
        turn.timestamp,
    )
    .map_err(|e| e.to_string())
}

impl Extractor for LlmExtractor {
    fn extract(&self, turn: &DialogueTurn) -> Result<ExtractionRecord, IngestError> {
        let system = json!({ "role": "system", "content": EXTRACTION_PROMPT });
        let user = json!({ "role": "user", "content": turn.text });
        let first = self.chat(&json!([system, user]))?;
        let first_failure = match validate_reply(&first, turn) {
            Ok(record) => return Ok(record),
            Err(reason) => reason,
        };

        // One repair retry: show the model its reply and the validation error.
        let repair = json!([
            system,
            user,
            { "role": "assistant", "content": first },
            { "role": "user", "content": format!(
                "The JSON was invalid: {first_failure}. Reply again with only the corrected JSON object."
            ) },
        ]);
        let second = self.chat(&repair)?;
        validate_reply(&second, turn).map_err(|reason| IngestError::Extraction {
            reason,
            raw: second,
        })
    }
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

/// Extract, embed, and insert one turn, returning the new episode's id.
///
/// The record's labels and the episode text are embedded in one batch. All
/// fallible steps run before the store is touched, so a failure anywhere
/// leaves the store unchanged.
pub fn ingest_turn(
    store: &mut MemoryStore,
    embedder: &dyn Embedder,
    extractor: &dyn Extractor,
    turn: &DialogueTurn,
) -> Result<NodeId, Error> {
    if embedder.dimension() != store.config().dimension {
        return Err(Error::Store(StoreError::DimensionMismatch {
            expected: store.config().dimension,
            got: embedder.dimension(),
        }));
    }
    let record = extractor.extract(turn)?;
    let record = record.truncated_to(store.levels()).map_err(Error::Store)?;
    let mut texts: Vec<&str> = record.labels().iter().map(String::as_str).collect();
    texts.push(&record.episode_text);
    let vectors = embedder.batch_embed(&texts)?;
    store.insert(&record, vectors).map_err(Error::Store)
}
