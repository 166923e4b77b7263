//! Rendering retrieval hits for humans and machines. The CLI text output
//! and the service's JSON rows are built from the same view so the two
//! surfaces cannot drift apart.

use serde::Serialize;

use hmem_core::{MemoryStore, RetrievalResult};

const EXCERPT_CHARS: usize = 60;

/// One presentable hit row.
#[derive(Debug, Clone, Serialize)]
pub struct HitRow {
    pub rank: usize,
    pub similarity: f32,
    pub weight: f64,
    pub episode: String,
    /// Labels of the index nodes on the hit's path, root first.
    pub labels: Vec<String>,
    pub excerpt: String,
}

fn excerpt(text: &str) -> String {
    let flat: String = text
        .chars()
        .map(|c| if c == '\n' || c == '\r' { ' ' } else { c })
        .collect();
    if flat.chars().count() <= EXCERPT_CHARS {
        return flat;
    }
    let mut out: String = flat.chars().take(EXCERPT_CHARS - 1).collect();
    out.push('\u{2026}');
    out
}

/// Project a retrieval result onto presentable rows.
pub fn hit_rows(store: &MemoryStore, result: &RetrievalResult) -> Vec<HitRow> {
    result
        .hits
        .iter()
        .enumerate()
        .map(|(i, hit)| {
            let labels = hit
                .path
                .iter()
                .filter_map(|id| {
                    store
                        .node(*id)
                        .ok()
                        .filter(|n| !n.label.is_empty())
                        .map(|n| n.label.clone())
                })
                .collect();
            let text = store
                .episode(hit.episode)
                .map(|e| e.text.to_string())
                .unwrap_or_default();
            HitRow {
                rank: i + 1,
                similarity: hit.similarity,
                weight: hit.weight,
                episode: hit.episode.to_string(),
                labels,
                excerpt: excerpt(&text),
            }
        })
        .collect()
}

/// One human-readable line per hit: rank, similarity, weight, episode id,
/// path labels, excerpt.
pub fn render_text(rows: &[HitRow]) -> String {
    rows.iter()
        .map(|r| {
            format!(
                "{:>2} {:.4} {:.4} {} {} {}",
                r.rank,
                r.similarity,
                r.weight,
                r.episode,
                r.labels.join(" / "),
                r.excerpt
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// One JSON object per line, machine-readable.
pub fn render_json(rows: &[HitRow]) -> String {
    rows.iter()
        .map(|r| serde_json::to_string(r).expect("rows serialize"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn excerpt_flattens_and_truncates() {
        assert_eq!(excerpt("short\ntext"), "short text");
        let long = "x".repeat(100);
        let e = excerpt(&long);
        assert_eq!(e.chars().count(), EXCERPT_CHARS);
        assert!(e.ends_with('\u{2026}'));
    }
}
