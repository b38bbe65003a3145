//! Precision@K evaluation and the four-configuration ablation grid:
//! baseline, expansion-only, weight-only, and the full pipeline.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::catalog::{normalize, ReformulationPair};
use crate::eekb::Eekb;
use crate::embedder::TextEncoder;
use crate::error::{QeewError, Result};
use crate::expansion::{expand_query, ExpandedQuery};
use crate::retrieval::{
    embed_candidates, expanded_query_text, expanded_query_tokens, level2_entities,
    retrieve_embedding, retrieve_lexical_tokens, AdjustConfig, Candidate, RankedList,
    RetrievalIndex,
};
use crate::weight::{assign_labels, prune_expansions, WeightLabel, WeightModel};

/// 1 iff `gold_id` appears among the first min(k, len) entries.
pub fn precision_at_k(ranked: &RankedList, gold_id: u64, k: usize) -> u8 {
    ranked
        .entries
        .iter()
        .take(k)
        .any(|(id, _)| *id == gold_id) as u8
}

/// The four ablation configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AblationConfig {
    /// Plain retrieval: no expansion tokens, no weight adjustment.
    Baseline,
    /// Expansion tokens appended, no weight adjustment.
    ExpansionOnly,
    /// Weights on the original entities only, no expansion tokens.
    WeightOnly,
    /// Expansion plus weight prediction with level-0 expansions pruned.
    Full,
}

impl AblationConfig {
    pub const ALL: [AblationConfig; 4] = [
        AblationConfig::Baseline,
        AblationConfig::ExpansionOnly,
        AblationConfig::WeightOnly,
        AblationConfig::Full,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AblationConfig::Baseline => "baseline",
            AblationConfig::ExpansionOnly => "expansion",
            AblationConfig::WeightOnly => "weight",
            AblationConfig::Full => "full",
        }
    }

    pub fn parse(name: &str) -> Option<AblationConfig> {
        match name {
            "baseline" => Some(AblationConfig::Baseline),
            "expansion" => Some(AblationConfig::ExpansionOnly),
            "weight" => Some(AblationConfig::WeightOnly),
            "full" => Some(AblationConfig::Full),
            _ => None,
        }
    }

    fn uses_expansion(&self) -> bool {
        matches!(self, AblationConfig::ExpansionOnly | AblationConfig::Full)
    }

    fn uses_weights(&self) -> bool {
        matches!(self, AblationConfig::WeightOnly | AblationConfig::Full)
    }
}

/// Where per-slot weights come from during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightSource {
    /// Predictions of the trained model.
    Trained,
    /// Gold labels derived from the annotated reformulation; the upper-bound
    /// harness of the ablation.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrievalMode {
    Lexical,
    Embedding,
}

/// Everything a configuration may need. Optional parts are only required by
/// the configurations that use them.
pub struct EvalComponents<'a> {
    pub eekb: &'a Eekb,
    pub index: &'a RetrievalIndex,
    pub candidates: &'a [Candidate],
    pub weight_model: Option<&'a WeightModel>,
    pub encoder: Option<&'a TextEncoder>,
    pub expansion_k: usize,
    pub adjust: AdjustConfig,
}

/// Per-configuration outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigReport {
    /// P@K keyed by K.
    pub p_at: BTreeMap<usize, f64>,
    /// Number of evaluated queries.
    pub n: usize,
    /// 1-based rank of the gold candidate per query, None when unretrieved.
    pub hit_ranks: Vec<Option<usize>>,
}

/// The ablation grid: one [`ConfigReport`] per configuration name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub configs: BTreeMap<String, ConfigReport>,
}

impl EvalReport {
    pub fn p_at(&self, config: &str, k: usize) -> Option<f64> {
        self.configs.get(config).and_then(|c| c.p_at.get(&k)).copied()
    }

    /// The JSON report object of the external interface.
    pub fn to_json(&self) -> String {
        let configs: BTreeMap<&String, serde_json::Value> = self
            .configs
            .iter()
            .map(|(name, report)| {
                let p_at: BTreeMap<String, f64> = report
                    .p_at
                    .iter()
                    .map(|(k, v)| (k.to_string(), *v))
                    .collect();
                (
                    name,
                    serde_json::json!({"p_at": p_at, "n": report.n}),
                )
            })
            .collect();
        serde_json::json!({ "configs": configs }).to_string()
    }

    /// Aligned plain-text table for standard output.
    pub fn to_table(&self) -> String {
        let mut ks: Vec<usize> = self
            .configs
            .values()
            .flat_map(|c| c.p_at.keys().copied())
            .collect();
        ks.sort_unstable();
        ks.dedup();
        let mut out = String::new();
        let _ = write!(out, "{:<12} {:>6}", "config", "n");
        for k in &ks {
            let _ = write!(out, " {:>8}", format!("P@{k}"));
        }
        out.push('\n');
        for (name, report) in &self.configs {
            let _ = write!(out, "{:<12} {:>6}", name, report.n);
            for k in &ks {
                match report.p_at.get(k) {
                    Some(v) => {
                        let _ = write!(out, " {:>8.4}", v);
                    }
                    None => {
                        let _ = write!(out, " {:>8}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

fn weights_for(
    xq: &ExpandedQuery,
    pair: &ReformulationPair,
    source: WeightSource,
    model: Option<&WeightModel>,
) -> Result<Vec<Option<WeightLabel>>> {
    match source {
        WeightSource::Oracle => Ok(assign_labels(pair, xq)),
        WeightSource::Trained => {
            let model = model.ok_or_else(|| QeewError::MissingComponent("weight model".into()))?;
            model.predict_weights(xq)
        }
    }
}

/// Evaluate one configuration over the test pairs. Queries without entities
/// or without a gold candidate in the index are skipped consistently across
/// configurations (gold matching is normalized-text equality).
pub fn run_config(
    pairs: &[ReformulationPair],
    components: &EvalComponents,
    config: AblationConfig,
    source: WeightSource,
    mode: RetrievalMode,
    k_set: &[usize],
) -> Result<ConfigReport> {
    if config.uses_weights() && source == WeightSource::Trained && components.weight_model.is_none()
    {
        return Err(QeewError::MissingComponent(format!(
            "weight model for configuration `{}`",
            config.name()
        )));
    }
    let (encoder, vectors) = match mode {
        RetrievalMode::Lexical => (None, Vec::new()),
        RetrievalMode::Embedding => {
            let encoder = components
                .encoder
                .ok_or_else(|| QeewError::MissingComponent("text encoder".into()))?;
            (
                Some(encoder),
                embed_candidates(encoder, components.candidates),
            )
        }
    };

    let gold_by_norm: BTreeMap<String, u64> = components
        .candidates
        .iter()
        .map(|c| (normalize(&c.text), c.id))
        .collect();
    let depth = k_set.iter().copied().max().unwrap_or(1);

    let mut hit_ranks = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let Some(&gold_id) = gold_by_norm.get(&normalize(&pair.reformulation)) else {
            continue;
        };
        if pair.query_entities.is_empty() {
            continue;
        }
        let xq_k = if config.uses_expansion() {
            components.expansion_k
        } else {
            0
        };
        let xq = expand_query(&pair.query, &pair.query_entities, components.eekb, xq_k)?;
        let (tokens_xq, boost_entities) = if config.uses_weights() {
            let weights = weights_for(&xq, pair, source, components.weight_model)?;
            let boosts: Vec<crate::catalog::Entity> = level2_entities(&xq, &weights)
                .into_iter()
                .cloned()
                .collect();
            let pruned = if config.uses_expansion() {
                prune_expansions(&xq, &weights)
            } else {
                xq
            };
            (pruned, boosts)
        } else {
            (xq, Vec::new())
        };
        let boost_refs: Vec<&crate::catalog::Entity> = boost_entities.iter().collect();

        let ranked = match mode {
            RetrievalMode::Lexical => {
                let tokens = expanded_query_tokens(&tokens_xq);
                retrieve_lexical_tokens(
                    components.index,
                    &tokens,
                    &boost_refs,
                    &components.adjust,
                    depth,
                )
            }
            RetrievalMode::Embedding => retrieve_embedding(
                encoder.expect("embedding mode encoder"),
                components.candidates,
                &vectors,
                &expanded_query_text(&tokens_xq),
                &boost_refs,
                &components.adjust,
                depth,
            ),
        };
        hit_ranks.push(ranked.rank_of(gold_id));
    }

    let n = hit_ranks.len();
    let mut p_at = BTreeMap::new();
    for &k in k_set {
        let hits = hit_ranks
            .iter()
            .filter(|r| matches!(r, Some(rank) if *rank <= k))
            .count();
        p_at.insert(k, if n == 0 { 0.0 } else { hits as f64 / n as f64 });
    }
    Ok(ConfigReport { p_at, n, hit_ranks })
}

/// Run the requested configurations over the same pairs and index.
pub fn run_ablation(
    pairs: &[ReformulationPair],
    components: &EvalComponents,
    configs: &[AblationConfig],
    source: WeightSource,
    mode: RetrievalMode,
    k_set: &[usize],
) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for config in configs {
        let config_report = run_config(pairs, components, *config, source, mode, k_set)?;
        report
            .configs
            .insert(config.name().to_string(), config_report);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Entity;
    use crate::eekb::build_eekb;
    use crate::retrieval::build_index;
    use crate::synth::{generate_synthetic, SynthSizes};

    #[test]
    fn precision_at_k_is_a_hit_indicator() {
        let ranked = RankedList {
            entries: vec![(3, 9.0), (1, 5.0), (2, 1.0)],
        };
        assert_eq!(precision_at_k(&ranked, 3, 1), 1);
        assert_eq!(precision_at_k(&ranked, 2, 2), 0);
        assert_eq!(precision_at_k(&ranked, 2, 3), 1);
        assert_eq!(precision_at_k(&ranked, 99, 10), 0);
    }

    #[test]
    fn aggregate_precision_over_constructed_ranks() {
        // Gold ranks 1..=10; P@5 must be exactly 0.5.
        let hits = (1..=10)
            .map(|rank| {
                let entries: Vec<(u64, f64)> =
                    (0..10).map(|i| (i as u64, 10.0 - i as f64)).collect();
                let ranked = RankedList { entries };
                precision_at_k(&ranked, (rank - 1) as u64, 5) as usize
            })
            .sum::<usize>();
        assert_eq!(hits as f64 / 10.0, 0.5);
    }

    #[test]
    fn p_at_k_is_monotone_in_k() {
        let sizes = SynthSizes {
            catalog_entries: 250,
            test_queries: 30,
            candidates: 250,
            train_pairs: 40,
            val_pairs: 10,
        };
        let corpus = generate_synthetic(5, &sizes).unwrap();
        let eekb = build_eekb(&corpus.catalog).unwrap();
        let index = build_index(&corpus.candidates).unwrap();
        let components = EvalComponents {
            eekb: &eekb,
            index: &index,
            candidates: &corpus.candidates,
            weight_model: None,
            encoder: None,
            expansion_k: 3,
            adjust: AdjustConfig::default(),
        };
        let report = run_config(
            &corpus.test,
            &components,
            AblationConfig::Full,
            WeightSource::Oracle,
            RetrievalMode::Lexical,
            &[1, 10, 50],
        )
        .unwrap();
        assert!(report.p_at[&1] <= report.p_at[&10]);
        assert!(report.p_at[&10] <= report.p_at[&50]);
    }

    #[test]
    fn baseline_equals_full_when_nothing_fires() {
        // k = 0 and reformulations containing no entity: no expansion tokens
        // exist and oracle labels never reach level 2, so both adjustments
        // are no-ops.
        let catalog_line = r#"{"query":"play alpha","response":"playing beta","entities":[{"text":"alpha","type":"T"},{"text":"beta","type":"T"}]}"#;
        let entries = crate::catalog::parse_catalog(std::io::Cursor::new(catalog_line), 0.0)
            .unwrap()
            .entries;
        let eekb = build_eekb(&entries).unwrap();
        let candidates = vec![
            Candidate::new(0, "gamma delta"),
            Candidate::new(1, "alpha gamma"),
        ];
        let index = build_index(&candidates).unwrap();
        let pairs = vec![ReformulationPair {
            query: "play alpha".into(),
            reformulation: "gamma delta".into(),
            query_entities: vec![Entity::new("alpha", "T").unwrap()],
        }];
        let components = EvalComponents {
            eekb: &eekb,
            index: &index,
            candidates: &candidates,
            weight_model: None,
            encoder: None,
            expansion_k: 0,
            adjust: AdjustConfig::default(),
        };
        let k_set = [1, 2];
        let baseline = run_config(
            &pairs,
            &components,
            AblationConfig::Baseline,
            WeightSource::Oracle,
            RetrievalMode::Lexical,
            &k_set,
        )
        .unwrap();
        let full = run_config(
            &pairs,
            &components,
            AblationConfig::Full,
            WeightSource::Oracle,
            RetrievalMode::Lexical,
            &k_set,
        )
        .unwrap();
        assert_eq!(baseline, full);
    }

    #[test]
    fn ablation_rows_share_query_counts_and_order_holds() {
        let sizes = SynthSizes {
            catalog_entries: 250,
            test_queries: 40,
            candidates: 250,
            train_pairs: 50,
            val_pairs: 12,
        };
        let corpus = generate_synthetic(11, &sizes).unwrap();
        let eekb = build_eekb(&corpus.catalog).unwrap();
        let index = build_index(&corpus.candidates).unwrap();
        let components = EvalComponents {
            eekb: &eekb,
            index: &index,
            candidates: &corpus.candidates,
            weight_model: None,
            encoder: None,
            expansion_k: 3,
            adjust: AdjustConfig::default(),
        };
        let report = run_ablation(
            &corpus.test,
            &components,
            &AblationConfig::ALL,
            WeightSource::Oracle,
            RetrievalMode::Lexical,
            &[1, 10, 50],
        )
        .unwrap();
        let n: Vec<usize> = report.configs.values().map(|c| c.n).collect();
        assert!(n.iter().all(|&x| x == n[0] && x == sizes.test_queries));

        let p10 = |name: &str| report.p_at(name, 10).unwrap();
        assert!(p10("full") >= p10("weight"));
        assert!(p10("weight") >= p10("baseline"));
        assert!(p10("full") >= p10("expansion"));
        assert!(p10("expansion") >= p10("baseline"));
        assert!(p10("full") > p10("baseline"));
    }

    #[test]
    fn trained_source_requires_model() {
        let sizes = SynthSizes {
            catalog_entries: 250,
            test_queries: 30,
            candidates: 250,
            train_pairs: 40,
            val_pairs: 10,
        };
        let corpus = generate_synthetic(5, &sizes).unwrap();
        let eekb = build_eekb(&corpus.catalog).unwrap();
        let index = build_index(&corpus.candidates).unwrap();
        let components = EvalComponents {
            eekb: &eekb,
            index: &index,
            candidates: &corpus.candidates,
            weight_model: None,
            encoder: None,
            expansion_k: 3,
            adjust: AdjustConfig::default(),
        };
        let err = run_config(
            &corpus.test,
            &components,
            AblationConfig::Full,
            WeightSource::Trained,
            RetrievalMode::Lexical,
            &[10],
        );
        assert!(matches!(err, Err(QeewError::MissingComponent(_))));
        // Embedding mode without an encoder is likewise an error.
        let err = run_config(
            &corpus.test,
            &components,
            AblationConfig::Baseline,
            WeightSource::Oracle,
            RetrievalMode::Embedding,
            &[10],
        );
        assert!(matches!(err, Err(QeewError::MissingComponent(_))));
    }

    #[test]
    fn report_json_schema_and_table() {
        let mut report = EvalReport::default();
        report.configs.insert(
            "baseline".into(),
            ConfigReport {
                p_at: BTreeMap::from([(1, 0.25), (10, 0.5)]),
                n: 4,
                hit_ranks: vec![Some(1), None, Some(7), None],
            },
        );
        let v: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(v["configs"]["baseline"]["n"], 4);
        assert_eq!(v["configs"]["baseline"]["p_at"]["10"], 0.5);
        let table = report.to_table();
        assert!(table.contains("P@10"));
        assert!(table.contains("baseline"));
    }
}
