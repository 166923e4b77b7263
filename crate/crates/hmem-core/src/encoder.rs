//! The embedding boundary: a deterministic offline embedder for tests and
//! benchmarks, and a client for a remote embedding endpoint. Both emit unit
//! vectors of the store's dimension, so everything behind this boundary can
//! assume unit norm.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use crate::error::EncoderError;

/// Environment variable naming the embedding endpoint URL.
pub const EMBED_URL_VAR: &str = "HMEM_EMBED_URL";
/// Environment variable naming the embedding model.
pub const EMBED_MODEL_VAR: &str = "HMEM_EMBED_MODEL";
/// Environment variable for the request timeout in milliseconds.
pub const EMBED_TIMEOUT_VAR: &str = "HMEM_EMBED_TIMEOUT_MS";

/// Anything that can turn text into unit vectors of a fixed dimension.
///
/// Implementations must be deterministic per input within a process;
/// [`HashEmbedder`] is deterministic across processes and platforms too.
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Vec<f32>, EncoderError>;

    /// Embed a batch, preserving input order. The default delegates to
    /// [`Embedder::embed`] element-wise; remote implementations override it
    /// with one wire request.
    fn batch_embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EncoderError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Deterministic signed trigram-hashing embedder.
///
/// The UTF-8 byte stream is padded with two zero bytes on each side and
/// sliced into overlapping 3-byte windows. Each window is hashed with
/// 64-bit FNV-1a; the hash picks a bucket (`h mod dimension`) and its low
/// bit picks the sign (even adds, odd subtracts). The bucket accumulator is
/// then L2-normalized. Empty text, and the degenerate case of a fully
/// cancelled accumulator, map to the fixed unit vector `(1, 0, ..., 0)`.
///
/// Shared trigrams give near-duplicate phrases overlapping mass, which is
/// what the store's merge threshold needs to behave meaningfully without a
/// neural encoder.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedder dimension must be positive");
        Self { dimension }
    }

    fn basis_vector(&self) -> Vec<f32> {
        let mut v = vec![0.0; self.dimension];
        v[0] = 1.0;
        v
    }
}

impl Embedder for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, EncoderError> {
        if text.is_empty() {
            return Ok(self.basis_vector());
        }
        let bytes = text.as_bytes();
        let mut padded = Vec::with_capacity(bytes.len() + 4);
        padded.extend_from_slice(&[0, 0]);
        padded.extend_from_slice(bytes);
        padded.extend_from_slice(&[0, 0]);

        let mut acc = vec![0.0f32; self.dimension];
        for window in padded.windows(3) {
            let h = fnv1a64(window);
            let bucket = (h % self.dimension as u64) as usize;
            if h & 1 == 0 {
                acc[bucket] += 1.0;
            } else {
                acc[bucket] -= 1.0;
            }
        }
        let norm = acc.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Ok(self.basis_vector());
        }
        for x in &mut acc {
            *x = (*x as f64 / norm) as f32;
        }
        Ok(acc)
    }
}

/// Client for a remote embeddings endpoint speaking the common JSON shape
/// `{"input": [texts], "model": name}` -> `{"data": [{"embedding": [..]}]}`.
///
/// Results are L2-normalized and returned in input order. Transient
/// failures (transport errors and 5xx statuses) are retried with
/// exponential backoff before surfacing a transport error carrying the
/// attempt count.
pub struct RemoteEmbedder {
    url: String,
    model: String,
    dimension: usize,
    agent: ureq::Agent,
    max_attempts: u32,
    backoff: Duration,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingRow>,
}

#[derive(Deserialize)]
struct EmbeddingRow {
    embedding: Vec<f64>,
}

impl RemoteEmbedder {
    pub fn new(
        url: impl Into<String>,
        model: impl Into<String>,
        dimension: usize,
        timeout: Duration,
    ) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build();
        Self {
            url: url.into(),
            model: model.into(),
            dimension,
            agent: ureq::Agent::new_with_config(config),
            max_attempts: 3,
            backoff: Duration::from_millis(250),
        }
    }

    /// Configure the endpoint from `HMEM_EMBED_URL`, `HMEM_EMBED_MODEL`, and
    /// `HMEM_EMBED_TIMEOUT_MS` (default 30000).
    pub fn from_env(dimension: usize) -> Result<Self, EncoderError> {
        let url = std::env::var(EMBED_URL_VAR)
            .map_err(|_| EncoderError::NotConfigured(format!("{EMBED_URL_VAR} is not set")))?;
        let model = std::env::var(EMBED_MODEL_VAR).unwrap_or_else(|_| "default".to_string());
        let timeout_ms: u64 = std::env::var(EMBED_TIMEOUT_VAR)
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(30_000);
        Ok(Self::new(url, model, dimension, Duration::from_millis(timeout_ms)))
    }

    /// Override the retry backoff base (mainly for tests).
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn post_with_retries(&self, body: &serde_json::Value) -> Result<EmbeddingResponse, EncoderError> {
        let mut last_error = String::new();
        for attempt in 1..=self.max_attempts {
            if attempt > 1 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 2));
            }
            match self.agent.post(&self.url).send_json(body) {
                Ok(mut response) => {
                    return response
                        .body_mut()
                        .read_json::<EmbeddingResponse>()
                        .map_err(|e| EncoderError::MalformedResponse(e.to_string()));
                }
                Err(ureq::Error::StatusCode(code)) if code < 500 => {
                    // Client errors are not transient; fail immediately.
                    return Err(EncoderError::Transport {
                        attempts: attempt,
                        message: format!("endpoint returned status {code}"),
                    });
                }
                Err(e) => last_error = e.to_string(),
            }
        }
        Err(EncoderError::Transport {
            attempts: self.max_attempts,
            message: last_error,
        })
    }
}

impl Embedder for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, EncoderError> {
        Ok(self.batch_embed(&[text])?.remove(0))
    }

    fn batch_embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EncoderError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let body = json!({ "input": texts, "model": self.model });
        let response = self.post_with_retries(&body)?;
        if response.data.len() != texts.len() {
            return Err(EncoderError::MalformedResponse(format!(
                "sent {} inputs, received {} embeddings",
                texts.len(),
                response.data.len()
            )));
        }
        response
            .data
            .into_iter()
            .map(|row| {
                if row.embedding.len() != self.dimension {
                    return Err(EncoderError::DimensionMismatch {
                        expected: self.dimension,
                        got: row.embedding.len(),
                    });
                }
                let norm = row.embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(EncoderError::MalformedResponse(
                        "endpoint returned a zero vector".to_string(),
                    ));
                }
                Ok(row.embedding.iter().map(|x| (x / norm) as f32).collect())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::cosine;
    use crate::store::l2_norm;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    #[test]
    fn hash_embed_is_deterministic() {
        let embedder = HashEmbedder::new(64);
        let a = embedder.embed("skiing").unwrap();
        let b = embedder.embed("skiing").unwrap();
        assert_eq!(a, b, "bitwise identical across calls");
    }

    #[test]
    fn empty_text_maps_to_first_basis_vector() {
        let embedder = HashEmbedder::new(8);
        let v = embedder.embed("").unwrap();
        assert_eq!(v, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn every_vector_is_unit_norm() {
        let embedder = HashEmbedder::new(48);
        for text in ["a", "hello world", "xx", "Ünïcødé ≠ bytes", "  ", "\n"] {
            let v = embedder.embed(text).unwrap();
            assert_eq!(v.len(), 48);
            assert!(
                (l2_norm(&v) - 1.0).abs() < 1e-6,
                "norm violated for {text:?}"
            );
        }
    }

    #[test]
    fn shared_trigrams_pull_phrases_together() {
        // Oracle: compute both cosines directly; "ski" trigrams guarantee
        // overlap for the related pair.
        let embedder = HashEmbedder::new(384);
        let skiing = embedder.embed("skiing").unwrap();
        let racing = embedder.embed("ski racing").unwrap();
        let tax = embedder.embed("tax law").unwrap();
        let related = cosine(&skiing, &racing).unwrap();
        let unrelated = cosine(&skiing, &tax).unwrap();
        assert!(
            related > unrelated,
            "expected cos(skiing, ski racing)={related} > cos(skiing, tax law)={unrelated}"
        );
    }

    #[test]
    fn batch_equals_elementwise() {
        let embedder = HashEmbedder::new(32);
        let texts = ["one", "two", "three"];
        let batch = embedder.batch_embed(&texts).unwrap();
        for (t, v) in texts.iter().zip(&batch) {
            assert_eq!(v, &embedder.embed(t).unwrap());
        }
    }

    /// Minimal single-use HTTP responder for exercising the remote client.
    fn serve_responses(responses: Vec<String>) -> (String, std::thread::JoinHandle<usize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut served = 0;
            for body in responses {
                let (mut stream, _) = match listener.accept() {
                    Ok(s) => s,
                    Err(_) => break,
                };
                // Drain the request: headers, then content-length bytes.
                let mut buf = Vec::new();
                let mut byte = [0u8; 1];
                while !buf.ends_with(b"\r\n\r\n") {
                    if stream.read(&mut byte).unwrap_or(0) == 0 {
                        break;
                    }
                    buf.push(byte[0]);
                }
                let header = String::from_utf8_lossy(&buf).to_lowercase();
                let content_length: usize = header
                    .lines()
                    .find_map(|l| l.strip_prefix("content-length:"))
                    .and_then(|v| v.trim().parse().ok())
                    .unwrap_or(0);
                let mut body_buf = vec![0u8; content_length];
                let _ = stream.read_exact(&mut body_buf);
                let _ = stream.write_all(body.as_bytes());
                served += 1;
            }
            served
        });
        (format!("http://{addr}"), handle)
    }

    fn http_response(status: &str, body: &str) -> String {
        format!(
            "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
            body.len()
        )
    }

    #[test]
    fn remote_embed_preserves_order_and_normalizes() {
        let body = serde_json::json!({
            "data": [
                { "embedding": [3.0, 0.0, 0.0, 0.0] },
                { "embedding": [0.0, 2.0, 0.0, 0.0] },
                { "embedding": [0.0, 0.0, 0.5, 0.0] },
            ]
        })
        .to_string();
        let (url, handle) = serve_responses(vec![http_response("200 OK", &body)]);
        let embedder = RemoteEmbedder::new(url, "m", 4, Duration::from_secs(2));
        let got = embedder.batch_embed(&["a", "b", "c"]).unwrap();
        assert_eq!(got[0], vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(got[1], vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(got[2], vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(handle.join().unwrap(), 1);
    }

    #[test]
    fn remote_embed_retries_then_reports_attempts() {
        let err = http_response("500 Internal Server Error", "{}");
        let (url, handle) = serve_responses(vec![err.clone(), err.clone(), err]);
        let embedder = RemoteEmbedder::new(url, "m", 4, Duration::from_secs(2))
            .with_backoff(Duration::from_millis(1));
        let got = embedder.batch_embed(&["a"]).unwrap_err();
        match got {
            EncoderError::Transport { attempts, .. } => assert_eq!(attempts, 3),
            other => panic!("expected transport error, got {other:?}"),
        }
        assert_eq!(handle.join().unwrap(), 3);
    }

    #[test]
    fn remote_embed_rejects_wrong_dimension() {
        let body = serde_json::json!({
            "data": [ { "embedding": [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0] } ]
        })
        .to_string();
        let (url, _handle) = serve_responses(vec![http_response("200 OK", &body)]);
        let embedder = RemoteEmbedder::new(url, "m", 4, Duration::from_secs(2));
        assert!(matches!(
            embedder.embed("a"),
            Err(EncoderError::DimensionMismatch { expected: 4, got: 8 })
        ));
    }

    #[test]
    fn from_env_requires_url() {
        std::env::remove_var(EMBED_URL_VAR);
        assert!(matches!(
            RemoteEmbedder::from_env(4),
            Err(EncoderError::NotConfigured(_))
        ));
    }
}
