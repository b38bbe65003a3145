//! Deterministic synthetic corpus with planted lyric→title alias relations.
//!
//! The world is a music catalog. Every song has a title, an artist, and a
//! lyric alias users say instead of the title. Hard test queries use a lyric
//! whose three-token stem also appears in the titles of a block of distractor
//! songs by other artists, so plain lexical retrieval ranks the distractors
//! above the gold reformulation. The catalog plants the lyric→title edge in
//! the EEKB and the artist survives into every reformulation, which is what
//! expansion and weighting exploit.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::catalog::{CatalogEntry, Entity, ReformulationPair};
use crate::error::{QeewError, Result};
use crate::retrieval::Candidate;

/// Corpus sizing. Defaults match the full evaluation scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSizes {
    pub catalog_entries: usize,
    pub test_queries: usize,
    pub candidates: usize,
    pub train_pairs: usize,
    pub val_pairs: usize,
}

impl Default for SynthSizes {
    fn default() -> Self {
        SynthSizes {
            catalog_entries: 2000,
            test_queries: 500,
            candidates: 2000,
            train_pairs: 800,
            val_pairs: 200,
        }
    }
}

/// Generated corpus: catalog for the EEKB, annotated pair splits, and the
/// reformulation candidate set.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub catalog: Vec<CatalogEntry>,
    pub train: Vec<ReformulationPair>,
    pub val: Vec<ReformulationPair>,
    pub test: Vec<ReformulationPair>,
    pub candidates: Vec<Candidate>,
}

/// Fraction of test queries that are stem-collision "hard" queries.
const HARD_QUERY_FRACTION: f64 = 0.36;
/// Hard songs sharing one lyric stem.
const HARD_PER_GROUP: usize = 4;
/// Distractor songs per stem whose titles reuse the stem tokens.
const DISTRACTORS_PER_GROUP: usize = 11;
/// Filler songs per hard-query artist, so artist tokens are never unique.
const FILLERS_PER_ARTIST: usize = 7;

#[derive(Debug, Clone)]
struct Song {
    title: String,
    artist: String,
    /// Lyric alias spoken instead of the title; None for title-query songs.
    lyric: Option<String>,
}

impl Song {
    fn candidate_text(&self) -> String {
        format!("play {} by {}", self.title, self.artist)
    }

    fn pair(&self) -> ReformulationPair {
        let lyric = self.lyric.as_deref().expect("lyric-query song");
        ReformulationPair {
            query: format!("play {} by {}", lyric, self.artist),
            reformulation: self.candidate_text(),
            query_entities: vec![
                Entity::new(lyric, "LyricPhrase").expect("lyric entity"),
                Entity::new(&self.artist, "ArtistName").expect("artist entity"),
            ],
        }
    }

    fn catalog_entry(&self) -> CatalogEntry {
        match &self.lyric {
            Some(lyric) => CatalogEntry {
                query: format!("play {} by {}", lyric, self.artist),
                response: format!("playing {} by {}", self.title, self.artist),
                entities: vec![
                    Entity::new(lyric, "LyricPhrase").expect("lyric entity"),
                    Entity::new(&self.title, "SongName").expect("title entity"),
                    Entity::new(&self.artist, "ArtistName").expect("artist entity"),
                ],
                satisfied: true,
            },
            None => CatalogEntry {
                query: format!("play {} by {}", self.title, self.artist),
                response: format!("playing {} by {}", self.title, self.artist),
                entities: vec![
                    Entity::new(&self.title, "SongName").expect("title entity"),
                    Entity::new(&self.artist, "ArtistName").expect("artist entity"),
                ],
                satisfied: true,
            },
        }
    }
}

/// Generate the corpus. Fully deterministic per seed: identical seeds and
/// sizes reproduce every record byte for byte.
pub fn generate_synthetic(seed: u64, sizes: &SynthSizes) -> Result<SynthCorpus> {
    if sizes.catalog_entries == 0
        || sizes.test_queries == 0
        || sizes.candidates == 0
        || sizes.train_pairs == 0
        || sizes.val_pairs == 0
    {
        return Err(QeewError::InvalidConfig("all sizes must be positive".into()));
    }

    let hard_count = ((sizes.test_queries as f64 * HARD_QUERY_FRACTION) as usize).max(1);
    let easy_count = sizes.test_queries - hard_count;
    let groups = hard_count.div_ceil(HARD_PER_GROUP);

    // Song inventory: hard songs (with sibling fillers per artist) plus the
    // stem-sharing distractors, then background songs up to the budget.
    let mut hard_songs = Vec::new();
    let mut filler_songs = Vec::new();
    let mut distractor_songs = Vec::new();

    for g in 0..groups {
        let stem = format!("st{g}a st{g}b st{g}c");
        for r in 0..HARD_PER_GROUP {
            let h = g * HARD_PER_GROUP + r;
            let artist = format!("ar{h}a ar{h}b");
            hard_songs.push(Song {
                title: format!("ti{h}a ti{h}b"),
                artist: artist.clone(),
                lyric: Some(format!("{stem} hq{h}")),
            });
            for f in 0..FILLERS_PER_ARTIST {
                let id = h * FILLERS_PER_ARTIST + f;
                filler_songs.push(Song {
                    title: format!("fi{id}a fi{id}b"),
                    artist: artist.clone(),
                    lyric: Some(format!("ly{id}a ly{id}b ly{id}c ly{id}d")),
                });
            }
        }
        for d in 0..DISTRACTORS_PER_GROUP {
            let id = g * DISTRACTORS_PER_GROUP + d;
            distractor_songs.push(Song {
                title: format!("st{g}a st{g}b st{g}c dx{id}"),
                artist: format!("br{id}a br{id}b"),
                lyric: None,
            });
        }
    }

    let essential = hard_songs.len() + filler_songs.len() + distractor_songs.len();
    if sizes.candidates < essential {
        return Err(QeewError::InvalidConfig(format!(
            "candidates size {} below the {essential} songs required for {} test queries",
            sizes.candidates, sizes.test_queries
        )));
    }
    let background_count = sizes.candidates - essential;
    let background_songs: Vec<Song> = (0..background_count)
        .map(|i| Song {
            title: format!("bg{i}a bg{i}b"),
            artist: format!("bz{i}a bz{i}b"),
            lyric: Some(format!("bl{i}a bl{i}b bl{i}c bl{i}d")),
        })
        .collect();

    if easy_count > filler_songs.len() {
        return Err(QeewError::InvalidConfig(format!(
            "test_queries {} needs {easy_count} easy queries but only {} filler songs exist",
            sizes.test_queries,
            filler_songs.len()
        )));
    }
    let pair_pool = filler_songs.len() - easy_count + background_songs.len();
    if sizes.train_pairs + sizes.val_pairs > pair_pool {
        return Err(QeewError::InvalidConfig(format!(
            "train_pairs + val_pairs = {} exceeds the {pair_pool} songs left for annotation",
            sizes.train_pairs + sizes.val_pairs
        )));
    }
    if sizes.catalog_entries < sizes.candidates {
        return Err(QeewError::InvalidConfig(
            "catalog_entries must be at least the candidate count".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Candidate ids: a seeded permutation so ids carry no structure.
    let mut all_songs: Vec<&Song> = hard_songs
        .iter()
        .chain(&filler_songs)
        .chain(&distractor_songs)
        .chain(&background_songs)
        .collect();
    all_songs.shuffle(&mut rng);
    let candidates: Vec<Candidate> = all_songs
        .iter()
        .enumerate()
        .map(|(i, song)| Candidate::new(i as u64, &song.candidate_text()))
        .collect();

    // One catalog entry per song; extra budget cycles through lyric-query
    // songs, which only rescales the planted edge scores.
    let mut catalog: Vec<CatalogEntry> = all_songs.iter().map(|s| s.catalog_entry()).collect();
    let lyric_songs: Vec<&&Song> = all_songs.iter().filter(|s| s.lyric.is_some()).collect();
    let mut extra = 0usize;
    while catalog.len() < sizes.catalog_entries {
        catalog.push(lyric_songs[extra % lyric_songs.len()].catalog_entry());
        extra += 1;
    }

    // Test pairs: every hard song (up to hard_count) plus the first
    // easy_count fillers; remaining fillers and backgrounds feed train/val.
    let mut test: Vec<ReformulationPair> =
        hard_songs.iter().take(hard_count).map(Song::pair).collect();
    test.extend(filler_songs.iter().take(easy_count).map(Song::pair));

    let mut annotation_pool: Vec<&Song> = filler_songs
        .iter()
        .skip(easy_count)
        .chain(&background_songs)
        .collect();
    annotation_pool.shuffle(&mut rng);
    let train: Vec<ReformulationPair> = annotation_pool
        .iter()
        .take(sizes.train_pairs)
        .map(|s| s.pair())
        .collect();
    let val: Vec<ReformulationPair> = annotation_pool
        .iter()
        .skip(sizes.train_pairs)
        .take(sizes.val_pairs)
        .map(|s| s.pair())
        .collect();

    Ok(SynthCorpus {
        catalog,
        train,
        val,
        test,
        candidates,
    })
}
