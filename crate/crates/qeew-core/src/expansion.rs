//! Query expansion against the EEKB: each original entity pulls its top-k
//! neighbors, giving the rectangular m(k+1)-slot structure the weight model
//! consumes. Groups are padded with PAD slots so the shape is always exact.

use serde::{Deserialize, Serialize};

use crate::catalog::Entity;
use crate::eekb::Eekb;
use crate::error::{QeewError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Original,
    Expanded,
}

/// One slot of an expanded query: an original entity or one of its
/// expansions. PAD slots carry an empty entity and score 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpansionSlot {
    pub entity: Entity,
    pub origin: Origin,
    /// Index of the original entity this slot belongs to.
    pub parent_index: usize,
    /// EEKB edge score to the parent; 0 for originals and PADs.
    pub relevance_score: u64,
}

impl ExpansionSlot {
    pub fn pad(parent_index: usize) -> Self {
        ExpansionSlot {
            entity: Entity {
                surface: String::new(),
                norm: String::new(),
                etype: String::new(),
            },
            origin: Origin::Expanded,
            parent_index,
            relevance_score: 0,
        }
    }

    pub fn is_pad(&self) -> bool {
        self.entity.norm.is_empty()
    }
}

/// A query with its m entity groups of exactly (k+1) slots each.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedQuery {
    pub query: String,
    pub groups: Vec<Vec<ExpansionSlot>>,
    pub m: usize,
    pub k: usize,
}

impl ExpandedQuery {
    /// Total slot count m(k+1).
    pub fn slot_count(&self) -> usize {
        self.m * (self.k + 1)
    }

    /// Flat iteration over all slots in group-major order.
    pub fn slots(&self) -> impl Iterator<Item = &ExpansionSlot> {
        self.groups.iter().flatten()
    }

    /// Non-PAD entities, originals first within each group.
    pub fn active_entities(&self) -> impl Iterator<Item = &Entity> {
        self.slots().filter(|s| !s.is_pad()).map(|s| &s.entity)
    }
}

/// Expand each query entity with its top-k EEKB neighbors.
///
/// Neighbors whose key duplicates one of the query's original entities are
/// skipped in favor of the next-best neighbor. Groups short of k neighbors
/// are padded.
pub fn expand_query(
    query: &str,
    query_entities: &[Entity],
    eekb: &Eekb,
    k: usize,
) -> Result<ExpandedQuery> {
    if query_entities.is_empty() {
        return Err(QeewError::NoEntities);
    }
    let original_norms: Vec<&str> = query_entities.iter().map(|e| e.norm.as_str()).collect();
    let m = query_entities.len();
    let mut groups = Vec::with_capacity(m);
    for (idx, entity) in query_entities.iter().enumerate() {
        let mut group = Vec::with_capacity(k + 1);
        group.push(ExpansionSlot {
            entity: entity.clone(),
            origin: Origin::Original,
            parent_index: idx,
            relevance_score: 0,
        });
        // Over-fetch so that skipped duplicates still leave k usable neighbors.
        let neighbors = eekb.top_k_neighbors(&entity.norm, k + m);
        for n in neighbors {
            if group.len() == k + 1 {
                break;
            }
            if original_norms.contains(&n.key.as_str()) {
                continue;
            }
            group.push(ExpansionSlot {
                entity: Entity {
                    surface: n.key.clone(),
                    norm: n.key,
                    etype: n.etype,
                },
                origin: Origin::Expanded,
                parent_index: idx,
                relevance_score: n.score,
            });
        }
        while group.len() < k + 1 {
            group.push(ExpansionSlot::pad(idx));
        }
        groups.push(group);
    }
    Ok(ExpandedQuery {
        query: query.to_string(),
        groups,
        m,
        k,
    })
}

#[derive(Serialize, Deserialize)]
struct DumpSlot {
    text: String,
    #[serde(rename = "type")]
    etype: String,
    origin: Origin,
    score: u64,
}

/// One JSON-lines record of the expansion dump format.
pub fn expansion_to_json(xq: &ExpandedQuery) -> String {
    let groups: Vec<Vec<DumpSlot>> = xq
        .groups
        .iter()
        .map(|g| {
            g.iter()
                .map(|s| DumpSlot {
                    text: s.entity.norm.clone(),
                    etype: s.entity.etype.clone(),
                    origin: s.origin,
                    score: s.relevance_score,
                })
                .collect()
        })
        .collect();
    serde_json::json!({
        "query": xq.query,
        "groups": serde_json::to_value(groups).expect("dump slots serialize"),
    })
    .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::parse_catalog;
    use crate::eekb::build_eekb;
    use std::io::Cursor;

    fn worked_eekb() -> Eekb {
        let line = r#"{"query":"play long distance love by sheena easton","response":"playing telefone by sheena easton","entities":[{"text":"long distance love","type":"SongName"},{"text":"Sheena Easton","type":"ArtistName"},{"text":"telefone","type":"SongName"}]}"#;
        let entries = parse_catalog(Cursor::new(line), 0.0).unwrap().entries;
        build_eekb(&entries).unwrap()
    }

    fn worked_entities() -> Vec<Entity> {
        vec![
            Entity::new("long distance love", "SongName").unwrap(),
            Entity::new("Sheena Easton", "ArtistName").unwrap(),
        ]
    }

    #[test]
    fn expands_with_top_neighbors_skipping_originals() {
        let eekb = worked_eekb();
        let xq = expand_query(
            "play long distance love by sheena easton",
            &worked_entities(),
            &eekb,
            1,
        )
        .unwrap();
        assert_eq!(xq.m, 2);
        assert_eq!(xq.slot_count(), 4);
        // long distance love's best neighbor is sheena easton (3) but that is
        // an original entity, so telefone (2) takes the slot.
        assert_eq!(xq.groups[0][1].entity.norm, "telefone");
        assert_eq!(xq.groups[0][1].relevance_score, 2);
        // sheena easton's best neighbor is telefone (6).
        assert_eq!(xq.groups[1][1].entity.norm, "telefone");
        assert_eq!(xq.groups[1][1].relevance_score, 6);
    }

    #[test]
    fn unknown_entity_pads_group() {
        let eekb = worked_eekb();
        let entities = vec![Entity::new("morning train", "SongName").unwrap()];
        let xq = expand_query("play morning train", &entities, &eekb, 2).unwrap();
        assert_eq!(xq.groups[0].len(), 3);
        assert!(!xq.groups[0][0].is_pad());
        assert!(xq.groups[0][1].is_pad());
        assert!(xq.groups[0][2].is_pad());
    }

    #[test]
    fn k_zero_passes_entities_through() {
        let eekb = worked_eekb();
        let xq = expand_query("q", &worked_entities(), &eekb, 0).unwrap();
        assert_eq!(xq.slot_count(), 2);
        assert!(xq.groups.iter().all(|g| g.len() == 1));
        assert!(xq.slots().all(|s| s.origin == Origin::Original));
    }

    #[test]
    fn empty_entities_is_an_error() {
        let eekb = worked_eekb();
        assert!(matches!(
            expand_query("q", &[], &eekb, 3),
            Err(QeewError::NoEntities)
        ));
    }

    #[test]
    fn shape_and_content_invariants() {
        let eekb = worked_eekb();
        for k in 0..4 {
            let xq = expand_query("q", &worked_entities(), &eekb, k).unwrap();
            assert_eq!(xq.slots().count(), xq.m * (k + 1));
            for group in &xq.groups {
                assert_eq!(group[0].origin, Origin::Original);
                assert_eq!(group[0].relevance_score, 0);
                // Expanded slots sorted by descending score.
                let scores: Vec<u64> = group[1..]
                    .iter()
                    .filter(|s| !s.is_pad())
                    .map(|s| s.relevance_score)
                    .collect();
                assert!(scores.windows(2).all(|w| w[0] >= w[1]));
                // Every non-PAD expansion is a positive-score EEKB neighbor
                // of its parent and never duplicates an original.
                for slot in &group[1..] {
                    if slot.is_pad() {
                        continue;
                    }
                    assert!(slot.relevance_score > 0);
                    assert_eq!(
                        eekb.edge_score(&group[0].entity.norm, &slot.entity.norm),
                        slot.relevance_score
                    );
                    assert!(worked_entities()
                        .iter()
                        .all(|orig| orig.norm != slot.entity.norm));
                }
            }
            // Determinism.
            let again = expand_query("q", &worked_entities(), &eekb, k).unwrap();
            assert_eq!(again, xq);
        }
    }

    #[test]
    fn dump_format_is_json_lines() {
        let eekb = worked_eekb();
        let xq = expand_query("play x", &worked_entities(), &eekb, 1).unwrap();
        let json = expansion_to_json(&xq);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["query"], "play x");
        assert_eq!(v["groups"].as_array().unwrap().len(), 2);
        assert_eq!(v["groups"][1][1]["origin"], "expanded");
    }
}
