//! Entity-catalog parsing, normalization, and the containment test used
//! everywhere downstream.
//!
//! The catalog is a stream of JSON-lines records, one interaction per line:
//! `{"query": str, "response": str, "entities": [{"text": str, "type": str}],
//! "satisfied": bool}`. Annotated reformulation pairs use
//! `{"query": str, "reformulation": str, "entities": [...]}`.

use std::collections::HashSet;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{QeewError, Result};

/// Lowercase, strip punctuation to spaces, collapse whitespace.
///
/// Simple case folding only; diacritics are preserved so the result is
/// locale-independent.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars() {
        if c.is_alphanumeric() {
            let mut wrote = false;
            for lc in c.to_lowercase() {
                // Lowercasing can expand to combining marks (e.g. U+0130);
                // keep only alphanumeric output so the mapping is idempotent.
                if lc.is_alphanumeric() {
                    if pending_space && !out.is_empty() {
                        out.push(' ');
                        pending_space = false;
                    }
                    out.push(lc);
                    wrote = true;
                }
            }
            if wrote {
                pending_space = false;
            }
        } else {
            pending_space = true;
        }
    }
    out
}

/// Whitespace tokens of the normalized form of `text`.
pub fn norm_tokens(text: &str) -> Vec<String> {
    normalize(text)
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// A named entity with its raw surface form, normalized form, and type label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Entity {
    pub surface: String,
    pub norm: String,
    pub etype: String,
}

impl Entity {
    /// Build an entity from its surface form; `norm` is derived.
    /// Returns `None` when normalization leaves nothing (e.g. pure punctuation).
    pub fn new(surface: &str, etype: &str) -> Option<Self> {
        let norm = normalize(surface);
        if norm.is_empty() {
            return None;
        }
        Some(Entity {
            surface: surface.to_string(),
            norm,
            etype: etype.to_string(),
        })
    }
}

/// True iff the token sequence of `entity.norm` occurs contiguously among the
/// tokens of `normalize(haystack)`. Token-level matching, so "art" never
/// matches inside "heart" and split tokens never match ("sheenaeaston" does
/// not contain "sheena easton").
pub fn contains_entity(haystack: &str, entity: &Entity) -> bool {
    contains_phrase(haystack, &entity.norm)
}

/// Token-subsequence test on a pre-normalized phrase.
pub fn contains_phrase(haystack: &str, phrase_norm: &str) -> bool {
    let needle: Vec<&str> = phrase_norm.split_whitespace().collect();
    if needle.is_empty() {
        return false;
    }
    let hay = norm_tokens(haystack);
    if hay.len() < needle.len() {
        return false;
    }
    hay.windows(needle.len())
        .any(|w| w.iter().zip(&needle).all(|(a, b)| a == *b))
}

/// One validated (query, response, entities) interaction of the catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub query: String,
    pub response: String,
    pub entities: Vec<Entity>,
    pub satisfied: bool,
}

/// One annotated query → reformulation pair with the query's entities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReformulationPair {
    pub query: String,
    pub reformulation: String,
    pub query_entities: Vec<Entity>,
}

#[derive(Debug, Deserialize)]
struct RawEntity {
    text: String,
    #[serde(rename = "type")]
    etype: String,
}

#[derive(Debug, Deserialize)]
struct RawCatalogLine {
    query: String,
    response: String,
    #[serde(default)]
    entities: Vec<RawEntity>,
    #[serde(default = "default_true")]
    satisfied: bool,
}

#[derive(Debug, Deserialize)]
struct RawPairLine {
    query: String,
    reformulation: String,
    #[serde(default)]
    entities: Vec<RawEntity>,
}

fn default_true() -> bool {
    true
}

/// Outcome of parsing a catalog stream: accepted entries in input order plus
/// per-line diagnostics.
#[derive(Debug, Default)]
pub struct CatalogParse {
    pub entries: Vec<CatalogEntry>,
    /// (line number, message) for each malformed line.
    pub errors: Vec<(usize, String)>,
    /// Records excluded by the `satisfied=false` flag.
    pub dropped_unsatisfied: usize,
    /// Entities dropped because they appear in neither query nor response,
    /// or normalize to nothing, or duplicate an earlier (norm, type).
    pub dropped_entities: usize,
}

/// Parse and validate a catalog stream.
///
/// Unsatisfied records are dropped (the catalog must contain only successful
/// interactions). Entities absent from both query and response are dropped
/// from their entry, counted in `dropped_entities`. Fails only when more than
/// `max_bad_frac` of non-empty lines are malformed.
pub fn parse_catalog<R: BufRead>(reader: R, max_bad_frac: f64) -> Result<CatalogParse> {
    let mut out = CatalogParse::default();
    let mut total = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        let lineno = idx + 1;
        match serde_json::from_str::<RawCatalogLine>(&line) {
            Ok(raw) => {
                if !raw.satisfied {
                    out.dropped_unsatisfied += 1;
                    continue;
                }
                if raw.query.trim().is_empty() {
                    out.errors.push((lineno, "empty query".to_string()));
                    continue;
                }
                let mut entities = Vec::new();
                let mut seen: HashSet<(String, String)> = HashSet::new();
                for raw_e in raw.entities {
                    let Some(entity) = Entity::new(&raw_e.text, &raw_e.etype) else {
                        out.dropped_entities += 1;
                        continue;
                    };
                    if !seen.insert((entity.norm.clone(), entity.etype.clone())) {
                        out.dropped_entities += 1;
                        continue;
                    }
                    if contains_entity(&raw.query, &entity) || contains_entity(&raw.response, &entity)
                    {
                        entities.push(entity);
                    } else {
                        out.dropped_entities += 1;
                    }
                }
                out.entries.push(CatalogEntry {
                    query: raw.query,
                    response: raw.response,
                    entities,
                    satisfied: true,
                });
            }
            Err(e) => out.errors.push((lineno, e.to_string())),
        }
    }
    if total > 0 && (out.errors.len() as f64) > max_bad_frac * (total as f64) {
        return Err(QeewError::TooManyMalformed {
            bad: out.errors.len(),
            total,
            max_frac: max_bad_frac,
        });
    }
    Ok(out)
}

/// Outcome of parsing a reformulation-pairs stream.
#[derive(Debug, Default)]
pub struct PairsParse {
    pub pairs: Vec<ReformulationPair>,
    pub errors: Vec<(usize, String)>,
    pub dropped_entities: usize,
}

/// Parse annotated query → reformulation pairs. Same malformed-line threshold
/// contract as [`parse_catalog`].
pub fn parse_pairs<R: BufRead>(reader: R, max_bad_frac: f64) -> Result<PairsParse> {
    let mut out = PairsParse::default();
    let mut total = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        let lineno = idx + 1;
        match serde_json::from_str::<RawPairLine>(&line) {
            Ok(raw) => {
                if raw.query.trim().is_empty() || raw.reformulation.trim().is_empty() {
                    out.errors
                        .push((lineno, "empty query or reformulation".to_string()));
                    continue;
                }
                let mut entities = Vec::new();
                let mut seen: HashSet<(String, String)> = HashSet::new();
                for raw_e in raw.entities {
                    let Some(entity) = Entity::new(&raw_e.text, &raw_e.etype) else {
                        out.dropped_entities += 1;
                        continue;
                    };
                    if seen.insert((entity.norm.clone(), entity.etype.clone())) {
                        entities.push(entity);
                    } else {
                        out.dropped_entities += 1;
                    }
                }
                out.pairs.push(ReformulationPair {
                    query: raw.query,
                    reformulation: raw.reformulation,
                    query_entities: entities,
                });
            }
            Err(e) => out.errors.push((lineno, e.to_string())),
        }
    }
    if total > 0 && (out.errors.len() as f64) > max_bad_frac * (total as f64) {
        return Err(QeewError::TooManyMalformed {
            bad: out.errors.len(),
            total,
            max_frac: max_bad_frac,
        });
    }
    Ok(out)
}

/// Serialize a catalog entry to the JSON-lines record format.
pub fn catalog_entry_to_json(entry: &CatalogEntry) -> String {
    let entities: Vec<serde_json::Value> = entry
        .entities
        .iter()
        .map(|e| serde_json::json!({"text": e.surface, "type": e.etype}))
        .collect();
    serde_json::json!({
        "query": entry.query,
        "response": entry.response,
        "entities": entities,
        "satisfied": entry.satisfied,
    })
    .to_string()
}

/// Serialize a reformulation pair to the JSON-lines record format.
pub fn pair_to_json(pair: &ReformulationPair) -> String {
    let entities: Vec<serde_json::Value> = pair
        .query_entities
        .iter()
        .map(|e| serde_json::json!({"text": e.surface, "type": e.etype}))
        .collect();
    serde_json::json!({
        "query": pair.query,
        "reformulation": pair.reformulation,
        "entities": entities,
    })
    .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    #[test]
    fn normalize_strips_punctuation_and_case() {
        assert_eq!(normalize("Sheena  Easton!"), "sheena easton");
        assert_eq!(normalize(""), "");
        assert_eq!(normalize("Long-Distance LOVE"), "long distance love");
    }

    #[test]
    fn normalize_trims_edges() {
        assert_eq!(normalize("  play it  "), "play it");
        assert_eq!(normalize("!!!"), "");
    }

    #[test]
    fn contains_entity_matches_token_sequences() {
        let e = Entity::new("Sheena Easton", "ArtistName").unwrap();
        assert!(contains_entity("play telefone by sheena easton", &e));
        let rev = Entity::new("Easton Sheena", "ArtistName").unwrap();
        assert!(!contains_entity("play telefone by sheena easton", &rev));
        assert!(!contains_entity("sheenaeaston live", &e));
    }

    #[test]
    fn contains_entity_no_partial_token_match() {
        let e = Entity::new("art", "Word").unwrap();
        assert!(!contains_entity("have a heart", &e));
        assert!(contains_entity("modern art museum", &e));
    }

    #[test]
    fn parse_catalog_accepts_well_formed_line() {
        let line = r#"{"query":"play telefone by sheena easton","response":"playing telefone by sheena easton","entities":[{"text":"telefone","type":"SongName"},{"text":"Sheena Easton","type":"ArtistName"},{"text":"play","type":"Action"}]}"#;
        let parsed = parse_catalog(Cursor::new(line), 0.1).unwrap();
        assert_eq!(parsed.entries.len(), 1);
        assert_eq!(parsed.entries[0].entities.len(), 3);
        assert!(parsed.entries[0].satisfied);
    }

    #[test]
    fn parse_catalog_drops_unsatisfied() {
        let line = r#"{"query":"q one","response":"r","entities":[],"satisfied":false}"#;
        let parsed = parse_catalog(Cursor::new(line), 0.1).unwrap();
        assert!(parsed.entries.is_empty());
        assert_eq!(parsed.dropped_unsatisfied, 1);
    }

    #[test]
    fn parse_catalog_drops_uncontained_entity() {
        let line = r#"{"query":"play love song","response":"playing love song","entities":[{"text":"telefone","type":"SongName"},{"text":"love song","type":"SongName"}]}"#;
        let parsed = parse_catalog(Cursor::new(line), 0.1).unwrap();
        assert_eq!(parsed.entries.len(), 1);
        assert_eq!(parsed.entries[0].entities.len(), 1);
        assert_eq!(parsed.entries[0].entities[0].norm, "love song");
        assert_eq!(parsed.dropped_entities, 1);
    }

    #[test]
    fn parse_catalog_threshold() {
        let data = "not json\n{\"query\":\"q\",\"response\":\"r\",\"entities\":[]}\n";
        // 1 of 2 lines malformed: above a 10% threshold.
        assert!(parse_catalog(Cursor::new(data), 0.1).is_err());
        // Configurable: a 50% threshold admits it.
        let parsed = parse_catalog(Cursor::new(data), 0.5).unwrap();
        assert_eq!(parsed.entries.len(), 1);
        assert_eq!(parsed.errors.len(), 1);
        assert_eq!(parsed.errors[0].0, 1);
    }

    #[test]
    fn parse_catalog_preserves_input_order() {
        let data = (0..20)
            .map(|i| format!(r#"{{"query":"query {i}","response":"r {i}","entities":[]}}"#))
            .collect::<Vec<_>>()
            .join("\n");
        let parsed = parse_catalog(Cursor::new(data), 0.1).unwrap();
        let queries: Vec<&str> = parsed.entries.iter().map(|e| e.query.as_str()).collect();
        let expected: Vec<String> = (0..20).map(|i| format!("query {i}")).collect();
        assert_eq!(queries, expected);
    }

    #[test]
    fn parse_pairs_basic() {
        let line = r#"{"query":"play long distance love","reformulation":"play telefone","entities":[{"text":"long distance love","type":"SongName"}]}"#;
        let parsed = parse_pairs(Cursor::new(line), 0.1).unwrap();
        assert_eq!(parsed.pairs.len(), 1);
        assert_eq!(parsed.pairs[0].query_entities.len(), 1);
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,60}") {
            let once = normalize(&s);
            prop_assert_eq!(normalize(&once), once);
        }

        #[test]
        fn containment_survives_suffix(h in "[a-z ]{0,40}", tail in "[a-z ]{0,20}") {
            let e = Entity::new("sheena easton", "ArtistName").unwrap();
            let hay = format!("{h} sheena easton");
            let extended = format!("{hay} {tail}");
            prop_assert!(contains_entity(&hay, &e));
            prop_assert!(contains_entity(&extended, &e));
        }

        #[test]
        fn normalized_output_is_clean(s in "\\PC{0,60}") {
            let n = normalize(&s);
            prop_assert!(!n.starts_with(' ') && !n.ends_with(' '));
            prop_assert!(!n.contains("  "));
            prop_assert!(n.chars().all(|c| c == ' ' || c.is_alphanumeric()));
        }
    }
}
