//! Python bindings: the knowledge base, query expansion, the entity weight
//! model, the contrastive encoder, and weighted retrieval, driven in-process.
//!
//! Entities cross the boundary as `(text, type)` tuples; annotated pairs as
//! `(query, reformulation, [(text, type), ...])`.

use std::fs::File;
use std::io::BufReader;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use qeew_core::catalog::{self, CatalogEntry, Entity, ReformulationPair};
use qeew_core::eekb;
use qeew_core::embedder::{self, ContrastiveConfig, TextEncoderConfig};
use qeew_core::eval;
use qeew_core::expansion::{self, ExpandedQuery};
use qeew_core::retrieval::{self, AdjustConfig, Candidate, RankedList};
use qeew_core::weight::{self, EncoderConfig, TrainConfig};

fn to_py_err(e: qeew_core::QeewError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn make_entities(raw: Vec<(String, String)>) -> PyResult<Vec<Entity>> {
    raw.into_iter()
        .map(|(text, etype)| {
            Entity::new(&text, &etype)
                .ok_or_else(|| PyValueError::new_err(format!("entity `{text}` normalizes to nothing")))
        })
        .collect()
}

type RawPair = (String, String, Vec<(String, String)>);

fn make_pairs(raw: Vec<RawPair>) -> PyResult<Vec<ReformulationPair>> {
    raw.into_iter()
        .map(|(query, reformulation, entities)| {
            Ok(ReformulationPair {
                query,
                reformulation,
                query_entities: make_entities(entities)?,
            })
        })
        .collect()
}

/// Lowercase, strip punctuation, collapse whitespace.
#[pyfunction]
fn normalize(text: &str) -> String {
    catalog::normalize(text)
}

/// Token-level containment test: does `haystack` contain the entity phrase?
#[pyfunction]
fn contains_entity(haystack: &str, entity_text: &str) -> bool {
    catalog::contains_phrase(haystack, &catalog::normalize(entity_text))
}

/// The entity expansion knowledge base.
#[pyclass]
struct Eekb {
    inner: eekb::Eekb,
}

#[pymethods]
impl Eekb {
    /// Build from in-memory (query, response, entities) records.
    #[staticmethod]
    fn from_records(records: Vec<RawPairLikeEntry>) -> PyResult<Self> {
        let entries: Vec<CatalogEntry> = records
            .into_iter()
            .map(|(query, response, entities)| {
                Ok(CatalogEntry {
                    query,
                    response,
                    entities: make_entities(entities)?,
                    satisfied: true,
                })
            })
            .collect::<PyResult<_>>()?;
        // Entities absent from both texts are rejected, as in catalog parsing.
        let entries: Vec<CatalogEntry> = entries
            .into_iter()
            .map(|mut e| {
                e.entities.retain(|ent| {
                    catalog::contains_entity(&e.query, ent)
                        || catalog::contains_entity(&e.response, ent)
                });
                e
            })
            .collect();
        Ok(Eekb {
            inner: eekb::build_eekb(&entries).map_err(to_py_err)?,
        })
    }

    /// Build from a catalog JSON-lines file.
    #[staticmethod]
    #[pyo3(signature = (path, max_bad_frac=0.1))]
    fn build_from_catalog(path: &str, max_bad_frac: f64) -> PyResult<Self> {
        let reader = BufReader::new(File::open(path).map_err(|e| {
            PyValueError::new_err(format!("{path}: {e}"))
        })?);
        let parsed = catalog::parse_catalog(reader, max_bad_frac).map_err(to_py_err)?;
        Ok(Eekb {
            inner: eekb::build_eekb(&parsed.entries).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let reader = BufReader::new(File::open(path).map_err(|e| {
            PyValueError::new_err(format!("{path}: {e}"))
        })?);
        Ok(Eekb {
            inner: eekb::Eekb::load(reader).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let file = File::create(path)
            .map_err(|e| PyValueError::new_err(format!("{path}: {e}")))?;
        self.inner.save(file).map_err(to_py_err)
    }

    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    /// Accumulated co-occurrence score between two entity keys (0 if absent).
    fn edge_score(&self, a: &str, b: &str) -> u64 {
        self.inner.edge_score(&catalog::normalize(a), &catalog::normalize(b))
    }

    /// Top-k neighbors as (key, type, score), score-descending.
    fn top_k_neighbors(&self, entity_key: &str, k: usize) -> Vec<(String, String, u64)> {
        self.inner
            .top_k_neighbors(&catalog::normalize(entity_key), k)
            .into_iter()
            .map(|n| (n.key, n.etype, n.score))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Eekb(nodes={}, edges={})",
            self.inner.node_count(),
            self.inner.edge_count()
        )
    }
}

type RawPairLikeEntry = (String, String, Vec<(String, String)>);

fn expand(
    eekb: &Eekb,
    query: &str,
    entities: Vec<(String, String)>,
    k: usize,
) -> PyResult<ExpandedQuery> {
    let entities = make_entities(entities)?;
    expansion::expand_query(query, &entities, &eekb.inner, k).map_err(to_py_err)
}

/// Expand a query's entities with their top-k EEKB neighbors. Returns one
/// list per entity group of (text, type, origin, score) tuples; PAD slots
/// have empty text.
#[pyfunction]
#[pyo3(name = "expand_query", signature = (eekb, query, entities, k=3))]
fn expand_query_py(
    eekb: &Eekb,
    query: &str,
    entities: Vec<(String, String)>,
    k: usize,
) -> PyResult<Vec<Vec<(String, String, String, u64)>>> {
    let xq = expand(eekb, query, entities, k)?;
    Ok(xq
        .groups
        .iter()
        .map(|group| {
            group
                .iter()
                .map(|slot| {
                    let origin = match slot.origin {
                        expansion::Origin::Original => "original",
                        expansion::Origin::Expanded => "expanded",
                    };
                    (
                        slot.entity.norm.clone(),
                        slot.entity.etype.clone(),
                        origin.to_string(),
                        slot.relevance_score,
                    )
                })
                .collect()
        })
        .collect())
}

/// The hierarchical entity weight prediction model.
#[pyclass]
struct WeightModel {
    inner: weight::WeightModel,
}

#[pymethods]
impl WeightModel {
    /// Train on annotated pairs; early stopping on the validation split.
    #[staticmethod]
    #[pyo3(signature = (
        eekb, train_pairs, val_pairs, k=3, embed_dim=64, vocab_buckets=4096,
        heads=4, attn_dropout=0.3, clf_dropout=0.5, learning_rate=1e-3,
        epochs=20, patience=3, batch_size=16, seed=42
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        eekb: &Eekb,
        train_pairs: Vec<RawPair>,
        val_pairs: Vec<RawPair>,
        k: usize,
        embed_dim: usize,
        vocab_buckets: usize,
        heads: usize,
        attn_dropout: f64,
        clf_dropout: f64,
        learning_rate: f64,
        epochs: usize,
        patience: usize,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let enc_cfg = EncoderConfig {
            embed_dim,
            vocab_buckets,
            attention_heads: heads,
            attn_dropout,
            clf_dropout,
            seed,
        };
        let train_cfg = TrainConfig {
            learning_rate,
            epochs,
            patience,
            batch_size,
            seed,
            ..TrainConfig::default()
        };
        let outcome = weight::train(
            &make_pairs(train_pairs)?,
            &make_pairs(val_pairs)?,
            &eekb.inner,
            k,
            &enc_cfg,
            &train_cfg,
        )
        .map_err(to_py_err)?;
        Ok(WeightModel {
            inner: outcome.model,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let reader = BufReader::new(File::open(path).map_err(|e| {
            PyValueError::new_err(format!("{path}: {e}"))
        })?);
        Ok(WeightModel {
            inner: weight::WeightModel::load(reader).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let file = File::create(path)
            .map_err(|e| PyValueError::new_err(format!("{path}: {e}")))?;
        self.inner.save(file).map_err(to_py_err)
    }

    /// Predicted weight level per slot, grouped like `expand_query` output:
    /// (entity text, level) with level None for PAD slots.
    #[pyo3(signature = (eekb, query, entities, k=3))]
    fn predict(
        &self,
        eekb: &Eekb,
        query: &str,
        entities: Vec<(String, String)>,
        k: usize,
    ) -> PyResult<Vec<Vec<(String, Option<u8>)>>> {
        let xq = expand(eekb, query, entities, k)?;
        let weights = self.inner.predict_weights(&xq).map_err(to_py_err)?;
        let mut flat = weights.into_iter();
        Ok(xq
            .groups
            .iter()
            .map(|group| {
                group
                    .iter()
                    .map(|slot| {
                        let level = flat.next().flatten().map(|w| w.0);
                        (slot.entity.norm.clone(), level)
                    })
                    .collect()
            })
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "WeightModel(embed_dim={}, heads={})",
            self.inner.config.embed_dim, self.inner.config.attention_heads
        )
    }
}

/// The contrastive text encoder.
#[pyclass]
struct TextEncoder {
    inner: embedder::TextEncoder,
}

#[pymethods]
impl TextEncoder {
    #[staticmethod]
    #[pyo3(signature = (pairs, dim=64, vocab_buckets=4096, margin=1.0,
                        learning_rate=1e-3, epochs=20, batch_size=32, seed=42))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        pairs: Vec<RawPair>,
        dim: usize,
        vocab_buckets: usize,
        margin: f64,
        learning_rate: f64,
        epochs: usize,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let outcome = embedder::train_contrastive(
            &make_pairs(pairs)?,
            &TextEncoderConfig {
                dim,
                vocab_buckets,
                seed,
            },
            &ContrastiveConfig {
                margin,
                learning_rate,
                epochs,
                batch_size,
                seed,
            },
        )
        .map_err(to_py_err)?;
        Ok(TextEncoder {
            inner: outcome.encoder,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let reader = BufReader::new(File::open(path).map_err(|e| {
            PyValueError::new_err(format!("{path}: {e}"))
        })?);
        Ok(TextEncoder {
            inner: embedder::TextEncoder::load(reader).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let file = File::create(path)
            .map_err(|e| PyValueError::new_err(format!("{path}: {e}")))?;
        self.inner.save(file).map_err(to_py_err)
    }

    fn encode(&self, text: &str) -> Vec<f64> {
        self.inner.encode_text(text)
    }

    fn distance(&self, a: &str, b: &str) -> f64 {
        embedder::euclidean(&self.inner.encode_text(a), &self.inner.encode_text(b))
    }
}

/// BM25 inverted index plus the weighted retrieval entry points.
#[pyclass]
struct RetrievalIndex {
    inner: retrieval::RetrievalIndex,
    candidates: Vec<Candidate>,
}

fn ranked_tuples(ranked: RankedList) -> Vec<(u64, f64)> {
    ranked.entries
}

#[pymethods]
impl RetrievalIndex {
    /// Build from (id, text) candidates.
    #[staticmethod]
    fn build(candidates: Vec<(u64, String)>) -> PyResult<Self> {
        let candidates: Vec<Candidate> = candidates
            .into_iter()
            .map(|(id, text)| Candidate::new(id, &text))
            .collect();
        Ok(RetrievalIndex {
            inner: retrieval::build_index(&candidates).map_err(to_py_err)?,
            candidates,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn avg_doc_length(&self) -> f64 {
        self.inner.avg_doc_length()
    }

    fn bm25_score(&self, query: &str, candidate_id: u64) -> f64 {
        self.inner
            .bm25_score(&catalog::norm_tokens(query), candidate_id)
    }

    /// Plain BM25 search over the query text.
    #[pyo3(signature = (query, n=10))]
    fn search(&self, query: &str, n: usize) -> Vec<(u64, f64)> {
        let tokens = catalog::norm_tokens(query);
        ranked_tuples(retrieval::retrieve_lexical_tokens(
            &self.inner,
            &tokens,
            &[],
            &AdjustConfig::default(),
            n,
        ))
    }

    /// Full weighted lexical retrieval: expansion tokens from the EEKB,
    /// level-0 expansions pruned, level-2 entities boosting matching
    /// candidates by `lexical_alpha`.
    #[pyo3(signature = (eekb, model, query, entities, k=3, n=10, lexical_alpha=1.5))]
    #[allow(clippy::too_many_arguments)]
    fn retrieve_lexical(
        &self,
        eekb: &Eekb,
        model: &WeightModel,
        query: &str,
        entities: Vec<(String, String)>,
        k: usize,
        n: usize,
        lexical_alpha: f64,
    ) -> PyResult<Vec<(u64, f64)>> {
        let xq = expand(eekb, query, entities, k)?;
        let weights = model.inner.predict_weights(&xq).map_err(to_py_err)?;
        let boosts: Vec<Entity> = retrieval::level2_entities(&xq, &weights)
            .into_iter()
            .cloned()
            .collect();
        let boost_refs: Vec<&Entity> = boosts.iter().collect();
        let pruned = weight::prune_expansions(&xq, &weights);
        let tokens = retrieval::expanded_query_tokens(&pruned);
        let cfg = AdjustConfig {
            lexical_alpha,
            ..AdjustConfig::default()
        };
        Ok(ranked_tuples(retrieval::retrieve_lexical_tokens(
            &self.inner,
            &tokens,
            &boost_refs,
            &cfg,
            n,
        )))
    }

    /// Exact nearest-neighbor retrieval over encoder embeddings, dividing
    /// distances by `embedding_alpha` for candidates that contain one of the
    /// boosted entity phrases.
    #[pyo3(signature = (encoder, query, boost_entities=vec![], n=10, embedding_alpha=1.2))]
    fn retrieve_embedding(
        &self,
        encoder: &TextEncoder,
        query: &str,
        boost_entities: Vec<String>,
        n: usize,
        embedding_alpha: f64,
    ) -> PyResult<Vec<(u64, f64)>> {
        let boosts = make_entities(
            boost_entities
                .into_iter()
                .map(|t| (t, "Unknown".to_string()))
                .collect(),
        )?;
        let boost_refs: Vec<&Entity> = boosts.iter().collect();
        let vectors = retrieval::embed_candidates(&encoder.inner, &self.candidates);
        let cfg = AdjustConfig {
            embedding_alpha,
            ..AdjustConfig::default()
        };
        Ok(ranked_tuples(retrieval::retrieve_embedding(
            &encoder.inner,
            &self.candidates,
            &vectors,
            query,
            &boost_refs,
            &cfg,
            n,
        )))
    }

    fn __repr__(&self) -> String {
        format!("RetrievalIndex(candidates={})", self.inner.len())
    }
}

/// 1 if `gold_id` ranks within the top k of `ranked`, else 0.
#[pyfunction]
fn precision_at_k(ranked: Vec<(u64, f64)>, gold_id: u64, k: usize) -> u8 {
    eval::precision_at_k(&RankedList { entries: ranked }, gold_id, k)
}

#[pymodule]
fn qeew_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(contains_entity, m)?)?;
    m.add_function(wrap_pyfunction!(expand_query_py, m)?)?;
    m.add_function(wrap_pyfunction!(precision_at_k, m)?)?;
    m.add_class::<Eekb>()?;
    m.add_class::<WeightModel>()?;
    m.add_class::<TextEncoder>()?;
    m.add_class::<RetrievalIndex>()?;
    Ok(())
}
