//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured evidence once its assertions hold.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qeew_core::catalog::{contains_entity, parse_catalog, CatalogEntry, Entity, ReformulationPair};
use qeew_core::eekb::{build_eekb, classify_level, Eekb};
use qeew_core::eval::{
    run_ablation, AblationConfig, EvalComponents, EvalReport, RetrievalMode, WeightSource,
};
use qeew_core::expansion::{ExpandedQuery, ExpansionSlot, Origin};
use qeew_core::nn::Matrix;
use qeew_core::retrieval::{
    build_index, retrieve_embedding, retrieve_lexical_tokens, AdjustConfig,
    Candidate,
};
use qeew_core::synth::{generate_synthetic, SynthSizes};
use qeew_core::weight::{
    assign_labels, loss, train, EncoderConfig, TrainConfig, WeightLabel, WeightModel,
};
use qeew_core::embedder::{TextEncoder, TextEncoderConfig};

// ---------------------------------------------------------------------------
// Criterion 1: EEKB oracle equivalence on 1,000 random catalogs
// ---------------------------------------------------------------------------

/// Independent re-implementation of the knowledge-base construction: a naive
/// directed double loop over entity pairs, symmetric updates stored once.
fn naive_eekb(
    catalog: &[CatalogEntry],
) -> (BTreeMap<String, u64>, BTreeMap<(String, String), u64>) {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut edges: BTreeMap<(String, String), u64> = BTreeMap::new();
    for entry in catalog {
        let mut leveled: Vec<(String, u64)> = Vec::new();
        for e in &entry.entities {
            let in_q = contains_entity(&entry.query, e);
            let in_r = contains_entity(&entry.response, e);
            let level = if in_q && in_r {
                3
            } else if in_r {
                2
            } else {
                1
            };
            leveled.push((e.norm.clone(), level));
            *counts.entry(e.norm.clone()).or_insert(0) += 1;
        }
        for m in 0..leveled.len() {
            for n in 0..leveled.len() {
                if m == n || leveled[m].0 == leveled[n].0 {
                    continue;
                }
                if leveled[m].0 < leveled[n].0 {
                    *edges
                        .entry((leveled[m].0.clone(), leveled[n].0.clone()))
                        .or_insert(0) += leveled[m].1 * leveled[n].1;
                }
            }
        }
    }
    (counts, edges)
}

fn random_catalog(rng: &mut ChaCha8Rng) -> Vec<CatalogEntry> {
    let universe: Vec<String> = (0..14).map(|i| format!("ent{i}")).collect();
    let types = ["SongName", "ArtistName", "AppName", "PlaceName"];
    let n_entries = rng.random_range(0..=20usize);
    let mut catalog = Vec::new();
    for _ in 0..n_entries {
        let n_ents = rng.random_range(1..=6usize);
        let mut picks: Vec<&String> = universe.iter().collect();
        picks.shuffle(rng);
        let mut q = vec!["do".to_string()];
        let mut r = vec!["done".to_string()];
        let mut entities = Vec::new();
        for name in picks.into_iter().take(n_ents) {
            let etype = types[rng.random_range(0..types.len())];
            match rng.random_range(0..3u8) {
                0 => q.push(name.clone()),
                1 => r.push(name.clone()),
                _ => {
                    q.push(name.clone());
                    r.push(name.clone());
                }
            }
            entities.push(Entity::new(name, etype).unwrap());
        }
        catalog.push(CatalogEntry {
            query: q.join(" "),
            response: r.join(" "),
            entities,
            satisfied: true,
        });
    }
    catalog
}

#[test]
fn c1_eekb_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..1000 {
        let catalog = random_catalog(&mut rng);
        let eekb = build_eekb(&catalog).unwrap();
        let (counts, edges) = naive_eekb(&catalog);
        assert_eq!(eekb.node_count(), counts.len(), "case {case}: node count");
        for (key, count) in &counts {
            assert_eq!(
                eekb.node(key).unwrap().occurrence_count,
                *count,
                "case {case}: count of {key}"
            );
        }
        let built: BTreeMap<(String, String), u64> = eekb
            .edges()
            .map(|(a, b, s)| ((a.to_string(), b.to_string()), s))
            .collect();
        assert_eq!(built, edges, "case {case}: edge map");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!("criterion 1 PASS: 1000 random catalogs match the naive oracle exactly in {elapsed:?}");
}

// ---------------------------------------------------------------------------
// Criterion 2: worked-example reconstruction
// ---------------------------------------------------------------------------

fn worked_example() -> (Eekb, CatalogEntry) {
    let line = r#"{"query":"play long distance love by sheena easton","response":"playing telefone by sheena easton","entities":[{"text":"long distance love","type":"SongName"},{"text":"Sheena Easton","type":"ArtistName"},{"text":"telefone","type":"SongName"}]}"#;
    let entries = parse_catalog(Cursor::new(line), 0.0).unwrap().entries;
    let eekb = build_eekb(&entries).unwrap();
    (eekb, entries.into_iter().next().unwrap())
}

#[test]
fn c2_worked_example_reconstruction() {
    let (eekb, entry) = worked_example();
    let level_of = |norm: &str| {
        let entity = entry.entities.iter().find(|e| e.norm == norm).unwrap();
        classify_level(entity, &entry).unwrap().value()
    };
    assert_eq!(level_of("long distance love"), 1);
    assert_eq!(level_of("telefone"), 2);
    assert_eq!(level_of("sheena easton"), 3);
    assert_eq!(eekb.edge_score("long distance love", "sheena easton"), 3);
    assert_eq!(eekb.edge_score("long distance love", "telefone"), 2);
    assert_eq!(eekb.edge_score("sheena easton", "telefone"), 6);
    println!(
        "criterion 2 PASS: levels (1, 2, 3) and edge scores (3, 2, 6) reproduced exactly"
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: label precedence over 10,000 generated triples
// ---------------------------------------------------------------------------

#[test]
fn c3_label_precedence_property() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    // Entity words and filler words are disjoint, so placement alone
    // determines the expected label.
    let entity_vocab: Vec<String> = (0..40).map(|i| format!("ent{i}")).collect();
    let filler_vocab: Vec<String> = (0..40).map(|i| format!("fill{i}")).collect();
    let mut violations = 0usize;
    for _ in 0..10_000 {
        let ent_len = rng.random_range(1..=3usize);
        let mut picks: Vec<&String> = entity_vocab.iter().collect();
        picks.shuffle(&mut rng);
        let phrase = picks
            .into_iter()
            .take(ent_len)
            .map(String::as_str)
            .collect::<Vec<_>>()
            .join(" ");
        let entity = Entity::new(&phrase, "AnyType").unwrap();

        fn make_text(
            rng: &mut ChaCha8Rng,
            filler_vocab: &[String],
            phrase: &str,
            include: bool,
        ) -> String {
            let mut words: Vec<String> = (0..rng.random_range(1..=5usize))
                .map(|_| filler_vocab[rng.random_range(0..filler_vocab.len())].clone())
                .collect();
            if include {
                let pos = rng.random_range(0..=words.len());
                words.insert(pos, phrase.to_string());
            }
            words.join(" ")
        }
        let in_query = rng.random_bool(0.5);
        let in_reform = rng.random_bool(0.5);
        let pair = ReformulationPair {
            query: make_text(&mut rng, &filler_vocab, &phrase, in_query),
            reformulation: make_text(&mut rng, &filler_vocab, &phrase, in_reform),
            query_entities: vec![],
        };
        let xq = ExpandedQuery {
            query: pair.query.clone(),
            groups: vec![vec![ExpansionSlot {
                entity: entity.clone(),
                origin: if rng.random_bool(0.5) {
                    Origin::Original
                } else {
                    Origin::Expanded
                },
                parent_index: 0,
                relevance_score: 0,
            }]],
            m: 1,
            k: 0,
        };
        let got = assign_labels(&pair, &xq)[0];
        let expected = if in_reform {
            Some(WeightLabel(2))
        } else if in_query {
            Some(WeightLabel(1))
        } else {
            Some(WeightLabel(0))
        };
        if got != expected {
            violations += 1;
        }
    }
    assert_eq!(violations, 0);
    println!("criterion 3 PASS: 10000 triples, 0 precedence violations");
}

// ---------------------------------------------------------------------------
// Criterion 4: loss anchors
// ---------------------------------------------------------------------------

#[test]
fn c4_loss_anchors() {
    let logits = Matrix::zeros(5, 3);
    let labels: Vec<Option<WeightLabel>> = vec![
        Some(WeightLabel(0)),
        Some(WeightLabel(1)),
        Some(WeightLabel(2)),
        Some(WeightLabel(0)),
        None,
    ];
    let uniform = loss(&logits, &labels).unwrap();
    let err = (uniform - 3.0f64.ln()).abs();
    assert!(err < 1e-12, "uniform loss error {err}");

    let logits = Matrix::from_vec(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let labels = vec![Some(WeightLabel(0)), Some(WeightLabel(2))];
    let two_slot = loss(&logits, &labels).unwrap();
    assert!((two_slot - 1.0514).abs() < 1e-3, "two-slot loss {two_slot}");
    println!(
        "criterion 4 PASS: uniform loss = ln 3 within {err:.1e}, two-slot loss {two_slot:.4} within 1e-3 of 1.0514"
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: gradient check on 20 random small configurations
// ---------------------------------------------------------------------------

fn random_small_xq(rng: &mut ChaCha8Rng) -> (ExpandedQuery, Vec<Option<WeightLabel>>) {
    let m = rng.random_range(1..=3usize);
    let k = rng.random_range(0..=2usize);
    let words = ["red", "lake", "stone", "wind", "gold", "fern"];
    let mut groups = Vec::new();
    let mut labels = Vec::new();
    for g in 0..m {
        let mut group = Vec::new();
        let original = Entity::new(words[rng.random_range(0..words.len())], "TypeO").unwrap();
        group.push(ExpansionSlot {
            entity: original,
            origin: Origin::Original,
            parent_index: g,
            relevance_score: 0,
        });
        labels.push(Some(WeightLabel(rng.random_range(0..3u8))));
        for _ in 0..k {
            if rng.random_bool(0.3) {
                group.push(ExpansionSlot::pad(g));
                labels.push(None);
            } else {
                let entity =
                    Entity::new(words[rng.random_range(0..words.len())], "TypeX").unwrap();
                group.push(ExpansionSlot {
                    entity,
                    origin: Origin::Expanded,
                    parent_index: g,
                    relevance_score: rng.random_range(1..10u64),
                });
                labels.push(Some(WeightLabel(rng.random_range(0..3u8))));
            }
        }
        groups.push(group);
    }
    (
        ExpandedQuery {
            query: "check the gradients now".into(),
            groups,
            m,
            k,
        },
        labels,
    )
}

#[test]
fn c5_gradient_check() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let cfg = EncoderConfig {
            embed_dim: 8,
            vocab_buckets: 32,
            attention_heads: 2,
            attn_dropout: 0.3,
            clf_dropout: 0.5,
            seed: rng.random(),
        };
        let (xq, labels) = random_small_xq(&mut rng);
        let mut model = WeightModel::init(cfg).unwrap();
        let (_, grads) = model.loss_and_grads(&xq, &labels, None).unwrap();

        let h = 1e-5;
        let tensor_count = model.tensors().len();
        for ti in 0..tensor_count {
            let len = model.tensors()[ti].1.data.len();
            for i in 0..len {
                let orig = model.tensors_mut()[ti].1.data[i];
                model.tensors_mut()[ti].1.data[i] = orig + h;
                let up = loss(&model.forward(&xq, None).unwrap(), &labels).unwrap();
                model.tensors_mut()[ti].1.data[i] = orig - h;
                let down = loss(&model.forward(&xq, None).unwrap(), &labels).unwrap();
                model.tensors_mut()[ti].1.data[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let analytic = grads.tensors()[ti].1.data[i];
                let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6);
                assert!(
                    rel < 1e-4,
                    "case {case} tensor {} [{i}]: fd={fd:.6e} analytic={analytic:.6e} rel={rel:.3e}",
                    model.tensors()[ti].0
                );
                worst = worst.max(rel);
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!(
        "criterion 5 PASS: 20 configurations, max relative error {worst:.3e} < 1e-4 in {elapsed:?}"
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: BM25 brute-force oracle on 100 random corpora
// ---------------------------------------------------------------------------

#[test]
fn c6_bm25_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let vocab: Vec<String> = (0..40).map(|i| format!("tok{i}")).collect();
    let cfg = AdjustConfig::default();
    for case in 0..100 {
        let n_cands = rng.random_range(1..=50usize);
        let candidates: Vec<Candidate> = (0..n_cands)
            .map(|i| {
                let len = rng.random_range(1..=12usize);
                let words: Vec<&str> = (0..len)
                    .map(|_| vocab[rng.random_range(0..vocab.len())].as_str())
                    .collect();
                Candidate::new(i as u64, &words.join(" "))
            })
            .collect();
        let index = build_index(&candidates).unwrap();
        let tokens: Vec<String> = (0..rng.random_range(1..=6usize))
            .map(|_| vocab[rng.random_range(0..vocab.len())].clone())
            .collect();

        // Weights below level 2 never fire the boost.
        let ranked = retrieve_lexical_tokens(&index, &tokens, &[], &cfg, n_cands);

        let mut expected: Vec<(u64, f64)> = candidates
            .iter()
            .map(|c| (c.id, index.bm25_score(&tokens, c.id)))
            .filter(|(_, s)| *s > 0.0)
            .collect();
        expected.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));

        assert_eq!(
            ranked.ids(),
            expected.iter().map(|e| e.0).collect::<Vec<_>>(),
            "case {case}: ranking"
        );
        for ((_, got), (_, want)) in ranked.entries.iter().zip(&expected) {
            assert!((got - want).abs() < 1e-9, "case {case}: score {got} vs {want}");
        }
    }
    println!("criterion 6 PASS: 100 random corpora match brute-force BM25 scoring");
}

// ---------------------------------------------------------------------------
// Criterion 7: adjustment semantics
// ---------------------------------------------------------------------------

#[test]
fn c7_adjustment_semantics() {
    let cfg = AdjustConfig::default();

    // Lexical: equal raw scores, the boosted candidate must flip ahead.
    let candidates = vec![
        Candidate::new(0, "shared telefone"),
        Candidate::new(1, "shared morning"),
    ];
    let index = build_index(&candidates).unwrap();
    let tokens = vec!["shared".to_string()];
    let plain = retrieve_lexical_tokens(&index, &tokens, &[], &cfg, 10);
    assert_eq!(plain.entries[0].1.to_bits(), plain.entries[1].1.to_bits());
    assert_eq!(plain.ids(), vec![0, 1]);
    let morning = Entity::new("morning", "SongName").unwrap();
    let boosted = retrieve_lexical_tokens(&index, &tokens, &[&morning], &cfg, 10);
    assert_eq!(boosted.ids(), vec![1, 0], "boost must flip the tie");
    let raw = plain.entries[1].1;
    let adj = boosted.entries.iter().find(|(id, _)| *id == 1).unwrap().1;
    assert_eq!(adj.to_bits(), (raw * 1.5).to_bits(), "x1.5 applied exactly");

    // No-boost run is bit-identical to the unadjusted run.
    let unboosted_again = retrieve_lexical_tokens(&index, &tokens, &[], &cfg, 10);
    assert_eq!(
        plain.entries.iter().map(|(i, s)| (*i, s.to_bits())).collect::<Vec<_>>(),
        unboosted_again
            .entries
            .iter()
            .map(|(i, s)| (*i, s.to_bits()))
            .collect::<Vec<_>>()
    );

    // Embedding: candidate at distance 1.2 with the boost lands at 1.0 and
    // overtakes a candidate at distance 1.05.
    let enc = TextEncoder::init(TextEncoderConfig {
        dim: 8,
        vocab_buckets: 64,
        seed: 1,
    })
    .unwrap();
    let query = "play something";
    let qv = enc.encode_text(query);
    let mut v_far = qv.clone();
    v_far[0] += 1.2;
    let mut v_near = qv.clone();
    v_near[0] += 1.05;
    let cands = vec![
        Candidate::new(0, "contains telefone"),
        Candidate::new(1, "other words"),
    ];
    let vectors = vec![(0u64, v_far), (1u64, v_near)];
    let plain = retrieve_embedding(&enc, &cands, &vectors, query, &[], &cfg, 10);
    assert_eq!(plain.ids(), vec![1, 0]);
    let telefone = Entity::new("telefone", "SongName").unwrap();
    let adjusted = retrieve_embedding(&enc, &cands, &vectors, query, &[&telefone], &cfg, 10);
    assert_eq!(adjusted.ids(), vec![0, 1], "division must flip the order");
    let d0 = adjusted.entries.iter().find(|(id, _)| *id == 0).unwrap().1;
    assert!((d0 - 1.0).abs() < 1e-12, "1.2 / 1.2 = {d0}");
    // Untouched distances are bit-identical to the plain run.
    let d1_plain = plain.entries.iter().find(|(id, _)| *id == 1).unwrap().1;
    let d1_adj = adjusted.entries.iter().find(|(id, _)| *id == 1).unwrap().1;
    assert_eq!(d1_plain.to_bits(), d1_adj.to_bits());

    println!("criterion 7 PASS: x1.5 and /1.2 adjustments flip constructed ties exactly; no-boost runs bit-identical");
}

// ---------------------------------------------------------------------------
// Criteria 8 and 9: synthetic ablation ordering and determinism
// ---------------------------------------------------------------------------

const ABLATION_SEED: u64 = 7;

fn run_full_pipeline() -> (EvalReport, EvalReport) {
    let sizes = SynthSizes::default();
    let corpus = generate_synthetic(ABLATION_SEED, &sizes).unwrap();
    assert_eq!(corpus.catalog.len(), 2000);
    assert_eq!(corpus.test.len(), 500);
    assert_eq!(corpus.candidates.len(), 2000);

    let eekb = build_eekb(&corpus.catalog).unwrap();
    let index = build_index(&corpus.candidates).unwrap();
    let outcome = train(
        &corpus.train,
        &corpus.val,
        &eekb,
        3,
        &EncoderConfig::default(),
        &TrainConfig::default(),
    )
    .unwrap();

    let components = EvalComponents {
        eekb: &eekb,
        index: &index,
        candidates: &corpus.candidates,
        weight_model: Some(&outcome.model),
        encoder: None,
        expansion_k: 3,
        adjust: AdjustConfig::default(),
    };
    let k_set = [1, 10, 50];
    let oracle = run_ablation(
        &corpus.test,
        &components,
        &AblationConfig::ALL,
        WeightSource::Oracle,
        RetrievalMode::Lexical,
        &k_set,
    )
    .unwrap();
    let trained = run_ablation(
        &corpus.test,
        &components,
        &AblationConfig::ALL,
        WeightSource::Trained,
        RetrievalMode::Lexical,
        &k_set,
    )
    .unwrap();
    (oracle, trained)
}

fn check_ordering(report: &EvalReport, label: &str, min_gap: f64) {
    let p10 = |name: &str| report.p_at(name, 10).unwrap();
    assert!(
        p10("full") >= p10("weight") && p10("weight") >= p10("baseline"),
        "{label}: full {} >= weight {} >= baseline {}",
        p10("full"),
        p10("weight"),
        p10("baseline")
    );
    assert!(
        p10("full") >= p10("expansion") && p10("expansion") >= p10("baseline"),
        "{label}: full {} >= expansion {} >= baseline {}",
        p10("full"),
        p10("expansion"),
        p10("baseline")
    );
    let gap = p10("full") - p10("baseline");
    assert!(
        gap >= min_gap,
        "{label}: full - baseline = {gap:.4}, need >= {min_gap}"
    );
}

#[test]
fn c8_synthetic_ablation_ordering() {
    let start = Instant::now();
    let (oracle, trained) = run_full_pipeline();
    let elapsed = start.elapsed();

    println!("oracle weights:\n{}", oracle.to_table());
    println!("trained weights:\n{}", trained.to_table());

    check_ordering(&oracle, "oracle", 0.10);
    check_ordering(&trained, "trained", 0.05);
    assert!(elapsed.as_secs_f64() < 300.0, "pipeline took {elapsed:?}");
    println!(
        "criterion 8 PASS: oracle gap {:.3}, trained gap {:.3}, orderings hold, runtime {elapsed:?}",
        oracle.p_at("full", 10).unwrap() - oracle.p_at("baseline", 10).unwrap(),
        trained.p_at("full", 10).unwrap() - trained.p_at("baseline", 10).unwrap(),
    );
}

#[test]
fn c9_ablation_is_bit_deterministic() {
    let (oracle_a, trained_a) = run_full_pipeline();
    let (oracle_b, trained_b) = run_full_pipeline();
    for (a, b) in [(&oracle_a, &oracle_b), (&trained_a, &trained_b)] {
        assert_eq!(
            a.configs.keys().collect::<Vec<_>>(),
            b.configs.keys().collect::<Vec<_>>()
        );
        for (name, ca) in &a.configs {
            let cb = &b.configs[name];
            assert_eq!(ca.n, cb.n);
            assert_eq!(ca.hit_ranks, cb.hit_ranks, "{name}: hit ranks");
            for (k, va) in &ca.p_at {
                let vb = cb.p_at[k];
                assert_eq!(va.to_bits(), vb.to_bits(), "{name} P@{k} bits");
            }
        }
    }
    println!("criterion 9 PASS: repeated runs reproduce every metric bit-identically");
}
