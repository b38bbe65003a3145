//! Entity Expansion Knowledge Base: a weighted undirected entity
//! co-occurrence graph built from the catalog.
//!
//! Each entity in an entry gets a relevance level (1 query-only, 2
//! response-only, 3 both), and every unordered entity pair in the same entry
//! accumulates the product of the two levels onto its edge. Neighbor queries
//! rank by accumulated score, ties broken by key.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::catalog::{contains_entity, CatalogEntry, Entity};
use crate::error::{QeewError, Result};

/// Per-entry relevance level of an entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RelevanceLevel {
    QueryOnly = 1,
    ResponseOnly = 2,
    Both = 3,
}

impl RelevanceLevel {
    pub fn value(self) -> u64 {
        self as u64
    }
}

/// A node of the EEKB: one normalized entity with its majority type and
/// total occurrence count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EekbNode {
    pub key: String,
    pub etype: String,
    pub occurrence_count: u64,
}

/// One ranked neighbor of a node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighbor {
    pub key: String,
    pub etype: String,
    pub score: u64,
}

/// The co-occurrence graph. Edges are stored once under the
/// lexicographically ordered key pair; scores are exact integers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Eekb {
    nodes: BTreeMap<String, EekbNode>,
    edges: BTreeMap<(String, String), u64>,
    adjacency: HashMap<String, Vec<(String, u64)>>,
}

/// Classify an entity's relevance level within one entry.
///
/// Errors when the entity appears in neither text; catalog validation is
/// expected to prevent that.
pub fn classify_level(entity: &Entity, entry: &CatalogEntry) -> Result<RelevanceLevel> {
    let in_query = contains_entity(&entry.query, entity);
    let in_response = contains_entity(&entry.response, entity);
    match (in_query, in_response) {
        (true, true) => Ok(RelevanceLevel::Both),
        (false, true) => Ok(RelevanceLevel::ResponseOnly),
        (true, false) => Ok(RelevanceLevel::QueryOnly),
        (false, false) => Err(QeewError::InvalidRecord(format!(
            "entity `{}` appears in neither query nor response",
            entity.norm
        ))),
    }
}

/// Build the EEKB from a validated catalog.
///
/// The result is independent of entry order: all updates are integer
/// additions keyed by sorted node pairs.
pub fn build_eekb(catalog: &[CatalogEntry]) -> Result<Eekb> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut type_votes: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    let mut edges: BTreeMap<(String, String), u64> = BTreeMap::new();

    for entry in catalog {
        let mut leveled: Vec<(&Entity, u64)> = Vec::with_capacity(entry.entities.len());
        for entity in &entry.entities {
            let level = classify_level(entity, entry)?;
            leveled.push((entity, level.value()));
            *counts.entry(entity.norm.clone()).or_insert(0) += 1;
            *type_votes
                .entry(entity.norm.clone())
                .or_default()
                .entry(entity.etype.clone())
                .or_insert(0) += 1;
        }
        for i in 0..leveled.len() {
            for j in (i + 1)..leveled.len() {
                let (ea, la) = leveled[i];
                let (eb, lb) = leveled[j];
                if ea.norm == eb.norm {
                    // Same node under two types: Algorithm keys by entity, so
                    // this is a self-pair and is skipped.
                    continue;
                }
                let key = ordered_pair(&ea.norm, &eb.norm);
                *edges.entry(key).or_insert(0) += la * lb;
            }
        }
    }

    let nodes: BTreeMap<String, EekbNode> = counts
        .into_iter()
        .map(|(key, occurrence_count)| {
            let votes = &type_votes[&key];
            // Majority type; ties broken by lexicographically smallest label.
            let etype = votes
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(t, _)| t.clone())
                .unwrap_or_default();
            (
                key.clone(),
                EekbNode {
                    key,
                    etype,
                    occurrence_count,
                },
            )
        })
        .collect();

    Ok(Eekb::from_parts(nodes, edges))
}

fn ordered_pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl Eekb {
    fn from_parts(nodes: BTreeMap<String, EekbNode>, edges: BTreeMap<(String, String), u64>) -> Self {
        let mut adjacency: HashMap<String, Vec<(String, u64)>> = HashMap::new();
        for ((a, b), score) in &edges {
            adjacency
                .entry(a.clone())
                .or_default()
                .push((b.clone(), *score));
            adjacency
                .entry(b.clone())
                .or_default()
                .push((a.clone(), *score));
        }
        for list in adjacency.values_mut() {
            // Descending score, then ascending key.
            list.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
        }
        Eekb {
            nodes,
            edges,
            adjacency,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node(&self, key: &str) -> Option<&EekbNode> {
        self.nodes.get(key)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &EekbNode> {
        self.nodes.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, u64)> {
        self.edges
            .iter()
            .map(|((a, b), s)| (a.as_str(), b.as_str(), *s))
    }

    /// Symmetric edge lookup; 0 when no edge is stored.
    pub fn edge_score(&self, a: &str, b: &str) -> u64 {
        if a == b {
            return 0;
        }
        let key = ordered_pair(a, b);
        self.edges.get(&key).copied().unwrap_or(0)
    }

    /// At most `k` neighbors of `entity_key`, ranked by descending score then
    /// ascending key. Unknown keys yield an empty list.
    pub fn top_k_neighbors(&self, entity_key: &str, k: usize) -> Vec<Neighbor> {
        let Some(list) = self.adjacency.get(entity_key) else {
            return Vec::new();
        };
        list.iter()
            .take(k)
            .map(|(key, score)| Neighbor {
                key: key.clone(),
                etype: self
                    .nodes
                    .get(key)
                    .map(|n| n.etype.clone())
                    .unwrap_or_default(),
                score: *score,
            })
            .collect()
    }

    /// Serialize to the sorted JSON format. Byte-deterministic: nodes sorted
    /// by key, edges by (a, b) with a < b.
    pub fn save<W: Write>(&self, mut sink: W) -> Result<()> {
        let file = EekbFile {
            nodes: self
                .nodes
                .values()
                .map(|n| EekbFileNode {
                    key: n.key.clone(),
                    etype: n.etype.clone(),
                    count: n.occurrence_count,
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|((a, b), score)| EekbFileEdge {
                    a: a.clone(),
                    b: b.clone(),
                    score: *score,
                })
                .collect(),
        };
        let json = serde_json::to_string_pretty(&file)
            .map_err(|e| QeewError::InvalidRecord(e.to_string()))?;
        sink.write_all(json.as_bytes())?;
        sink.write_all(b"\n")?;
        Ok(())
    }

    /// Load a graph saved by [`Eekb::save`], validating ordering and
    /// symmetry invariants.
    pub fn load<R: BufRead>(mut source: R) -> Result<Eekb> {
        let mut raw = String::new();
        source.read_to_string(&mut raw)?;
        let file: EekbFile = serde_json::from_str(&raw).map_err(|e| QeewError::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        let mut nodes = BTreeMap::new();
        for n in file.nodes {
            if n.key.is_empty() {
                return Err(QeewError::InvalidRecord("empty node key".to_string()));
            }
            if nodes
                .insert(
                    n.key.clone(),
                    EekbNode {
                        key: n.key.clone(),
                        etype: n.etype,
                        occurrence_count: n.count,
                    },
                )
                .is_some()
            {
                return Err(QeewError::InvalidRecord(format!(
                    "duplicate node `{}`",
                    n.key
                )));
            }
        }
        let mut edges = BTreeMap::new();
        for e in file.edges {
            if e.a >= e.b {
                return Err(QeewError::InvalidRecord(format!(
                    "edge ({}, {}) violates a < b ordering",
                    e.a, e.b
                )));
            }
            if !nodes.contains_key(&e.a) || !nodes.contains_key(&e.b) {
                return Err(QeewError::InvalidRecord(format!(
                    "edge ({}, {}) references a missing node",
                    e.a, e.b
                )));
            }
            if edges.insert((e.a.clone(), e.b.clone()), e.score).is_some() {
                return Err(QeewError::InvalidRecord(format!(
                    "duplicate edge ({}, {})",
                    e.a, e.b
                )));
            }
        }
        Ok(Eekb::from_parts(nodes, edges))
    }
}

#[derive(Serialize, Deserialize)]
struct EekbFile {
    nodes: Vec<EekbFileNode>,
    edges: Vec<EekbFileEdge>,
}

#[derive(Serialize, Deserialize)]
struct EekbFileNode {
    key: String,
    #[serde(rename = "type")]
    etype: String,
    count: u64,
}

#[derive(Serialize, Deserialize)]
struct EekbFileEdge {
    a: String,
    b: String,
    score: u64,
}
