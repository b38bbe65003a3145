//! Reformulation candidate retrieval: BM25 over an inverted index for the
//! lexical path, exact nearest-neighbor over encoder embeddings for the
//! embedding path, and the weight-based score adjustment on both.
//!
//! A candidate containing at least one entity predicted at weight level 2
//! has its lexical score multiplied by `lexical_alpha` (once per candidate),
//! or its embedding distance divided by `embedding_alpha`.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::catalog::{norm_tokens, Entity};
use crate::embedder::{euclidean, TextEncoder};
use crate::error::{QeewError, Result};
use crate::expansion::{ExpandedQuery, Origin};
use crate::weight::WeightLabel;

/// One reformulation candidate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub id: u64,
    pub text: String,
    pub norm_tokens: Vec<String>,
}

impl Candidate {
    pub fn new(id: u64, text: &str) -> Self {
        Candidate {
            id,
            text: text.to_string(),
            norm_tokens: norm_tokens(text),
        }
    }
}

/// Scoring constants for the weight adjustment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjustConfig {
    pub lexical_alpha: f64,
    pub embedding_alpha: f64,
}

impl Default for AdjustConfig {
    fn default() -> Self {
        AdjustConfig {
            lexical_alpha: 1.5,
            embedding_alpha: 1.2,
        }
    }
}

/// Ranked retrieval output: (candidate id, score). Descending score for the
/// lexical path, ascending distance for the embedding path; ties always
/// break by ascending id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedList {
    pub entries: Vec<(u64, f64)>,
}

impl RankedList {
    pub fn ids(&self) -> Vec<u64> {
        self.entries.iter().map(|(id, _)| *id).collect()
    }

    pub fn rank_of(&self, id: u64) -> Option<usize> {
        self.entries.iter().position(|(e, _)| *e == id).map(|p| p + 1)
    }
}

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

/// Inverted index with BM25 statistics over a fixed candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    postings: BTreeMap<String, Vec<(u64, u32)>>,
    doc_lengths: BTreeMap<u64, usize>,
    avg_doc_length: f64,
    candidates: BTreeMap<u64, Candidate>,
    pub bm25_k1: f64,
    pub bm25_b: f64,
}

/// Build the inverted index. Duplicate ids and empty-token candidates are
/// rejected.
pub fn build_index(candidates: &[Candidate]) -> Result<RetrievalIndex> {
    let mut postings: BTreeMap<String, Vec<(u64, u32)>> = BTreeMap::new();
    let mut doc_lengths = BTreeMap::new();
    let mut store = BTreeMap::new();
    let mut total_len = 0usize;
    for cand in candidates {
        if cand.norm_tokens.is_empty() {
            return Err(QeewError::InvalidRecord(format!(
                "candidate {} has no tokens",
                cand.id
            )));
        }
        if store.insert(cand.id, cand.clone()).is_some() {
            return Err(QeewError::DuplicateCandidate(cand.id));
        }
        doc_lengths.insert(cand.id, cand.norm_tokens.len());
        total_len += cand.norm_tokens.len();
        let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
        for t in &cand.norm_tokens {
            *tf.entry(t.as_str()).or_insert(0) += 1;
        }
        for (token, count) in tf {
            postings
                .entry(token.to_string())
                .or_default()
                .push((cand.id, count));
        }
    }
    let avg_doc_length = if store.is_empty() {
        0.0
    } else {
        total_len as f64 / store.len() as f64
    };
    Ok(RetrievalIndex {
        postings,
        doc_lengths,
        avg_doc_length,
        candidates: store,
        bm25_k1: BM25_K1,
        bm25_b: BM25_B,
    })
}

impl RetrievalIndex {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn candidate(&self, id: u64) -> Option<&Candidate> {
        self.candidates.get(&id)
    }

    pub fn candidates(&self) -> impl Iterator<Item = &Candidate> {
        self.candidates.values()
    }

    pub fn postings(&self, token: &str) -> Option<&[(u64, u32)]> {
        self.postings.get(token).map(Vec::as_slice)
    }

    fn idf(&self, token: &str) -> f64 {
        let n = self.postings.get(token).map_or(0, Vec::len) as f64;
        let big_n = self.candidates.len() as f64;
        (1.0 + (big_n - n + 0.5) / (n + 0.5)).ln()
    }

    fn tf_norm(&self, tf: f64, doc_len: usize) -> f64 {
        let len_ratio = doc_len as f64 / self.avg_doc_length;
        tf * (self.bm25_k1 + 1.0)
            / (tf + self.bm25_k1 * (1.0 - self.bm25_b + self.bm25_b * len_ratio))
    }

    /// BM25 score of one candidate against the unique tokens of the query.
    /// Tokens absent from the candidate contribute zero.
    pub fn bm25_score(&self, query_tokens: &[String], candidate_id: u64) -> f64 {
        let Some(doc_len) = self.doc_lengths.get(&candidate_id).copied() else {
            return 0.0;
        };
        let unique: std::collections::BTreeSet<&str> =
            query_tokens.iter().map(String::as_str).collect();
        let mut score = 0.0;
        for token in unique {
            let Some(postings) = self.postings.get(token) else {
                continue;
            };
            let Ok(pos) = postings.binary_search_by_key(&candidate_id, |(id, _)| *id) else {
                continue;
            };
            let tf = postings[pos].1 as f64;
            score += self.idf(token) * self.tf_norm(tf, doc_len);
        }
        score
    }

    /// Every candidate matching at least one query token, scored by BM25.
    /// Accumulation runs in sorted unique-token order, so sums are identical
    /// to per-candidate [`RetrievalIndex::bm25_score`] calls.
    fn score_all(&self, query_tokens: &[String]) -> BTreeMap<u64, f64> {
        let unique: std::collections::BTreeSet<&str> =
            query_tokens.iter().map(String::as_str).collect();
        let mut scores: BTreeMap<u64, f64> = BTreeMap::new();
        for token in unique {
            let Some(postings) = self.postings.get(token) else {
                continue;
            };
            let idf = self.idf(token);
            for (id, tf) in postings {
                let doc_len = self.doc_lengths[id];
                *scores.entry(*id).or_insert(0.0) += idf * self.tf_norm(*tf as f64, doc_len);
            }
        }
        scores
    }
}

/// True iff `phrase_norm`'s tokens appear contiguously in `hay_tokens`.
pub fn tokens_contain(hay_tokens: &[String], phrase_norm: &str) -> bool {
    let needle: Vec<&str> = phrase_norm.split_whitespace().collect();
    if needle.is_empty() || hay_tokens.len() < needle.len() {
        return false;
    }
    hay_tokens
        .windows(needle.len())
        .any(|w| w.iter().zip(&needle).all(|(a, b)| a == *b))
}

/// Entities of non-PAD slots predicted at the most important weight level.
pub fn level2_entities<'a>(
    xq: &'a ExpandedQuery,
    weights: &[Option<WeightLabel>],
) -> Vec<&'a Entity> {
    xq.slots()
        .enumerate()
        .filter(|(i, slot)| {
            !slot.is_pad() && weights.get(*i).copied().flatten() == Some(WeightLabel::IN_REFORMULATION)
        })
        .map(|(_, slot)| &slot.entity)
        .collect()
}

/// Query tokens for the lexical path: the original query's tokens followed by
/// every non-PAD expansion entity's tokens, un-deduplicated.
pub fn expanded_query_tokens(xq: &ExpandedQuery) -> Vec<String> {
    let mut tokens = norm_tokens(&xq.query);
    for slot in xq.slots() {
        if slot.origin == Origin::Expanded && !slot.is_pad() {
            tokens.extend(slot.entity.norm.split_whitespace().map(str::to_string));
        }
    }
    tokens
}

/// "query + expansion" text for the embedding path.
pub fn expanded_query_text(xq: &ExpandedQuery) -> String {
    let mut text = xq.query.clone();
    for slot in xq.slots() {
        if slot.origin == Origin::Expanded && !slot.is_pad() {
            text.push(' ');
            text.push_str(&slot.entity.norm);
        }
    }
    text
}

/// BM25 retrieval of the expanded query with the ×alpha level-2 boost,
/// applied at most once per candidate. Returns the top `n` by descending
/// adjusted score, ties by ascending id.
pub fn retrieve_lexical(
    index: &RetrievalIndex,
    xq: &ExpandedQuery,
    weights: &[Option<WeightLabel>],
    cfg: &AdjustConfig,
    n: usize,
) -> RankedList {
    let tokens = expanded_query_tokens(xq);
    retrieve_lexical_tokens(index, &tokens, &level2_entities(xq, weights), cfg, n)
}

/// Lexical retrieval from explicit tokens and boost entities; the building
/// block behind [`retrieve_lexical`] and the ablation configurations.
pub fn retrieve_lexical_tokens(
    index: &RetrievalIndex,
    query_tokens: &[String],
    boost_entities: &[&Entity],
    cfg: &AdjustConfig,
    n: usize,
) -> RankedList {
    if query_tokens.is_empty() {
        return RankedList::default();
    }
    let mut scores = index.score_all(query_tokens);
    if !boost_entities.is_empty() {
        for (id, score) in scores.iter_mut() {
            let cand = &index.candidates[id];
            if boost_entities
                .iter()
                .any(|e| tokens_contain(&cand.norm_tokens, &e.norm))
            {
                *score *= cfg.lexical_alpha;
            }
        }
    }
    let mut entries: Vec<(u64, f64)> = scores.into_iter().collect();
    entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    entries.truncate(n);
    RankedList { entries }
}

/// Encode every candidate once for the embedding path.
pub fn embed_candidates(encoder: &TextEncoder, candidates: &[Candidate]) -> Vec<(u64, Vec<f64>)> {
    candidates
        .iter()
        .map(|c| (c.id, encoder.encode_text(&c.text)))
        .collect()
}

/// Exact nearest-neighbor retrieval by Euclidean distance, dividing the
/// distance by alpha for candidates containing a level-2 entity. Returns the
/// top `n` by ascending adjusted distance, ties by ascending id.
pub fn retrieve_embedding(
    encoder: &TextEncoder,
    candidates: &[Candidate],
    candidate_vectors: &[(u64, Vec<f64>)],
    query_text: &str,
    boost_entities: &[&Entity],
    cfg: &AdjustConfig,
    n: usize,
) -> RankedList {
    let by_id: BTreeMap<u64, &Candidate> = candidates.iter().map(|c| (c.id, c)).collect();
    let qv = encoder.encode_text(query_text);
    let mut entries: Vec<(u64, f64)> = candidate_vectors
        .iter()
        .map(|(id, vec)| {
            let mut d = euclidean(&qv, vec);
            if let Some(cand) = by_id.get(id) {
                if boost_entities
                    .iter()
                    .any(|e| tokens_contain(&cand.norm_tokens, &e.norm))
                {
                    d /= cfg.embedding_alpha;
                }
            }
            (*id, d)
        })
        .collect();
    entries.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    entries.truncate(n);
    RankedList { entries }
}

#[derive(Debug, Deserialize)]
struct RawCandidateLine {
    id: u64,
    text: String,
}

/// Parse the JSON-lines candidates file: `{"id": int, "text": str}`.
pub fn parse_candidates<R: BufRead>(reader: R) -> Result<Vec<Candidate>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawCandidateLine =
            serde_json::from_str(&line).map_err(|e| QeewError::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
        out.push(Candidate::new(raw.id, &raw.text));
    }
    Ok(out)
}

/// One JSON-lines record of the ranked output format.
pub fn ranked_to_json(query: &str, ranked: &RankedList) -> String {
    let results: Vec<serde_json::Value> = ranked
        .entries
        .iter()
        .map(|(id, score)| serde_json::json!({"id": id, "score": score}))
        .collect();
    serde_json::json!({"query": query, "results": results}).to_string()
}
