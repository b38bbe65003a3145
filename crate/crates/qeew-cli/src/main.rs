//! Pipeline command line: ingest, build-eekb, expand, train-weights,
//! train-embedder, index, retrieve, eval, synth.
//!
//! Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error. Every
//! subcommand is deterministic given its inputs and `--seed`; repeated runs
//! produce byte-identical outputs.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use qeew_core::catalog::{
    catalog_entry_to_json, pair_to_json, parse_catalog, parse_pairs, ReformulationPair,
};
use qeew_core::eekb::Eekb;
use qeew_core::embedder::{train_contrastive, ContrastiveConfig, TextEncoder, TextEncoderConfig};
use qeew_core::eval::{
    run_ablation, AblationConfig, EvalComponents, RetrievalMode, WeightSource,
};
use qeew_core::expansion::{expand_query, expansion_to_json};
use qeew_core::retrieval::{
    build_index, embed_candidates, expanded_query_text, expanded_query_tokens, level2_entities,
    parse_candidates, ranked_to_json, retrieve_embedding, retrieve_lexical_tokens, AdjustConfig,
    Candidate, RetrievalIndex,
};
use qeew_core::synth::{generate_synthetic, SynthSizes};
use qeew_core::weight::{
    assign_labels, prune_expansions, train, EncoderConfig, TrainConfig, WeightModel,
};
use qeew_core::QeewError;

#[derive(Debug)]
enum CliError {
    Core(QeewError),
    Io { path: PathBuf, source: std::io::Error },
    Params(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Params(msg) => write!(f, "params: {msg}"),
        }
    }
}

impl From<QeewError> for CliError {
    fn from(e: QeewError) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn open_reader(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn create_writer(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn write_all(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Optional parameter file: flat JSON object consulted for any run parameter
// not given as a flag. Flags win over the file; the file wins over defaults.
// ---------------------------------------------------------------------------

#[derive(Default)]
struct ParamFile(serde_json::Map<String, serde_json::Value>);

impl ParamFile {
    fn load(path: Option<&PathBuf>) -> CliResult<ParamFile> {
        let Some(path) = path else {
            return Ok(ParamFile::default());
        };
        let raw = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        let value: serde_json::Value = serde_json::from_str(&raw)
            .map_err(|e| CliError::Params(format!("{}: {e}", path.display())))?;
        match value {
            serde_json::Value::Object(map) => Ok(ParamFile(map)),
            _ => Err(CliError::Params(format!(
                "{}: expected a JSON object",
                path.display()
            ))),
        }
    }

    fn f64(&self, flag: Option<f64>, key: &str, default: f64) -> CliResult<f64> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_f64()
                .ok_or_else(|| CliError::Params(format!("`{key}` must be a number"))),
        }
    }

    fn usize(&self, flag: Option<usize>, key: &str, default: usize) -> CliResult<usize> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| CliError::Params(format!("`{key}` must be a non-negative integer"))),
        }
    }

    fn u64(&self, flag: Option<u64>, key: &str, default: u64) -> CliResult<u64> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .ok_or_else(|| CliError::Params(format!("`{key}` must be a non-negative integer"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Index file: canonical candidate set plus BM25 constants; postings are
// derived data and rebuilt on load.
// ---------------------------------------------------------------------------

fn save_index(index: &RetrievalIndex, path: &Path) -> CliResult<()> {
    let candidates: Vec<serde_json::Value> = index
        .candidates()
        .map(|c| serde_json::json!({"id": c.id, "text": c.text}))
        .collect();
    let file = serde_json::json!({
        "format_version": 1,
        "kind": "retrieval-index",
        "bm25_k1": index.bm25_k1,
        "bm25_b": index.bm25_b,
        "candidates": candidates,
    });
    let mut out = serde_json::to_string(&file).expect("index json").into_bytes();
    out.push(b'\n');
    write_all(path, &out)
}

fn load_index(path: &Path) -> CliResult<(RetrievalIndex, Vec<Candidate>)> {
    let raw = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let value: serde_json::Value = serde_json::from_str(&raw).map_err(|e| {
        CliError::Core(QeewError::Parse {
            line: e.line(),
            message: format!("{}: {e}", path.display()),
        })
    })?;
    if value["kind"] != "retrieval-index" || value["format_version"] != 1 {
        return Err(CliError::Core(QeewError::VersionMismatch {
            expected: "retrieval-index format_version 1".into(),
            found: format!("{} {}", value["kind"], value["format_version"]),
        }));
    }
    let raw_candidates = value["candidates"]
        .as_array()
        .ok_or_else(|| CliError::Core(QeewError::InvalidRecord("missing candidates".into())))?;
    let mut candidates = Vec::with_capacity(raw_candidates.len());
    for c in raw_candidates {
        let id = c["id"]
            .as_u64()
            .ok_or_else(|| CliError::Core(QeewError::InvalidRecord("candidate id".into())))?;
        let text = c["text"]
            .as_str()
            .ok_or_else(|| CliError::Core(QeewError::InvalidRecord("candidate text".into())))?;
        candidates.push(Candidate::new(id, text));
    }
    let index = build_index(&candidates)?;
    Ok((index, candidates))
}

// ---------------------------------------------------------------------------
// Command definitions
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "qeew",
    version,
    about = "Entity-expansion and entity-weighting pipeline for reformulation retrieval"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate catalog and pair files, reporting parse statistics.
    Ingest(IngestArgs),
    /// Build the entity expansion knowledge base from a catalog.
    BuildEekb(BuildEekbArgs),
    /// Expand query entities with their top EEKB neighbors.
    Expand(ExpandArgs),
    /// Train the entity weight prediction model.
    TrainWeights(TrainWeightsArgs),
    /// Train the contrastive text encoder.
    TrainEmbedder(TrainEmbedderArgs),
    /// Build the retrieval index from a candidates file.
    Index(IndexArgs),
    /// Retrieve ranked reformulation candidates for annotated queries.
    Retrieve(RetrieveArgs),
    /// Evaluate P@K over the ablation configurations.
    Eval(EvalArgs),
    /// Generate the deterministic synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Lexical,
    Embedding,
}

#[derive(Args)]
struct IngestArgs {
    /// Catalog JSON-lines file.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Reformulation pairs JSON-lines file.
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Fail when more than this fraction of lines is malformed.
    #[arg(long, default_value_t = 0.1)]
    max_bad_frac: f64,
    /// Write the validated catalog back out in canonical form.
    #[arg(long)]
    out_catalog: Option<PathBuf>,
    /// Write the validated pairs back out in canonical form.
    #[arg(long)]
    out_pairs: Option<PathBuf>,
}

#[derive(Args)]
struct BuildEekbArgs {
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    max_bad_frac: f64,
}

#[derive(Args)]
struct ExpandArgs {
    #[arg(long)]
    eekb: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Expansions per entity.
    #[arg(long)]
    k: Option<usize>,
    /// JSON file of default overrides.
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Args)]
struct TrainWeightsArgs {
    #[arg(long)]
    eekb: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    vocab_buckets: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    attn_dropout: Option<f64>,
    #[arg(long)]
    clf_dropout: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    adam_eps: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_bad_frac: Option<f64>,
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Args)]
struct TrainEmbedderArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    vocab_buckets: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    eekb: PathBuf,
    /// Annotated pairs supplying the queries and their entities.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Lexical)]
    mode: Mode,
    /// Trained weight model; omit for unweighted retrieval.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Trained text encoder (embedding mode).
    #[arg(long)]
    encoder: Option<PathBuf>,
    /// Use gold labels as weights instead of model predictions.
    #[arg(long)]
    oracle_weights: bool,
    #[arg(long)]
    k: Option<usize>,
    /// Result list depth.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    lexical_alpha: Option<f64>,
    #[arg(long)]
    embedding_alpha: Option<f64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    eekb: PathBuf,
    #[arg(long)]
    index: PathBuf,
    /// Annotated test pairs.
    #[arg(long)]
    test: PathBuf,
    /// Configuration to evaluate: baseline, expansion, weight, full, or all.
    #[arg(long, default_value = "all")]
    config: String,
    #[arg(long, value_enum, default_value_t = Mode::Lexical)]
    mode: Mode,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    encoder: Option<PathBuf>,
    #[arg(long)]
    oracle_weights: bool,
    #[arg(long)]
    k: Option<usize>,
    /// Comma-separated K values for P@K.
    #[arg(long)]
    k_set: Option<String>,
    #[arg(long)]
    lexical_alpha: Option<f64>,
    #[arg(long)]
    embedding_alpha: Option<f64>,
    /// Report JSON file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for catalog.jsonl, train.jsonl, val.jsonl, test.jsonl,
    /// candidates.jsonl.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    catalog_entries: Option<usize>,
    #[arg(long)]
    test_queries: Option<usize>,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    train_pairs: Option<usize>,
    #[arg(long)]
    val_pairs: Option<usize>,
    #[arg(long)]
    params: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// Subcommand implementations
// ---------------------------------------------------------------------------

fn load_pairs(path: &Path, max_bad_frac: f64) -> CliResult<Vec<ReformulationPair>> {
    let parsed = parse_pairs(open_reader(path)?, max_bad_frac)?;
    for (line, msg) in &parsed.errors {
        eprintln!("warning: {}:{line}: {msg}", path.display());
    }
    Ok(parsed.pairs)
}

fn load_eekb(path: &Path) -> CliResult<Eekb> {
    Ok(Eekb::load(open_reader(path)?)?)
}

fn cmd_ingest(args: IngestArgs) -> CliResult<()> {
    if args.catalog.is_none() && args.pairs.is_none() {
        return Err(CliError::Core(QeewError::InvalidConfig(
            "ingest needs --catalog and/or --pairs".into(),
        )));
    }
    let mut summary = serde_json::Map::new();
    if let Some(path) = &args.catalog {
        let parsed = parse_catalog(open_reader(path)?, args.max_bad_frac)?;
        if let Some(out) = &args.out_catalog {
            let mut w = create_writer(out)?;
            for entry in &parsed.entries {
                writeln!(w, "{}", catalog_entry_to_json(entry)).map_err(|source| CliError::Io {
                    path: out.clone(),
                    source,
                })?;
            }
        }
        summary.insert(
            "catalog".into(),
            serde_json::json!({
                "entries": parsed.entries.len(),
                "dropped_unsatisfied": parsed.dropped_unsatisfied,
                "dropped_entities": parsed.dropped_entities,
                "parse_errors": parsed.errors.len(),
            }),
        );
    }
    if let Some(path) = &args.pairs {
        let parsed = parse_pairs(open_reader(path)?, args.max_bad_frac)?;
        if let Some(out) = &args.out_pairs {
            let mut w = create_writer(out)?;
            for pair in &parsed.pairs {
                writeln!(w, "{}", pair_to_json(pair)).map_err(|source| CliError::Io {
                    path: out.clone(),
                    source,
                })?;
            }
        }
        summary.insert(
            "pairs".into(),
            serde_json::json!({
                "pairs": parsed.pairs.len(),
                "dropped_entities": parsed.dropped_entities,
                "parse_errors": parsed.errors.len(),
            }),
        );
    }
    println!("{}", serde_json::Value::Object(summary));
    Ok(())
}

fn cmd_build_eekb(args: BuildEekbArgs) -> CliResult<()> {
    let parsed = parse_catalog(open_reader(&args.catalog)?, args.max_bad_frac)?;
    for (line, msg) in &parsed.errors {
        eprintln!("warning: {}:{line}: {msg}", args.catalog.display());
    }
    let eekb = qeew_core::eekb::build_eekb(&parsed.entries)?;
    let mut buf = Vec::new();
    eekb.save(&mut buf)?;
    write_all(&args.out, &buf)?;
    println!(
        "{}",
        serde_json::json!({
            "entries": parsed.entries.len(),
            "nodes": eekb.node_count(),
            "edges": eekb.edge_count(),
            "out": args.out.display().to_string(),
        })
    );
    Ok(())
}

fn cmd_expand(args: ExpandArgs) -> CliResult<()> {
    let params = ParamFile::load(args.params.as_ref())?;
    let k = params.usize(args.k, "k", 3)?;
    let eekb = load_eekb(&args.eekb)?;
    let pairs = load_pairs(&args.pairs, 0.1)?;
    let mut w = create_writer(&args.out)?;
    let mut skipped = 0usize;
    let mut written = 0usize;
    for pair in &pairs {
        if pair.query_entities.is_empty() {
            skipped += 1;
            continue;
        }
        let xq = expand_query(&pair.query, &pair.query_entities, &eekb, k)?;
        writeln!(w, "{}", expansion_to_json(&xq)).map_err(|source| CliError::Io {
            path: args.out.clone(),
            source,
        })?;
        written += 1;
    }
    println!(
        "{}",
        serde_json::json!({"expanded": written, "skipped_no_entities": skipped, "k": k})
    );
    Ok(())
}

fn cmd_train_weights(args: TrainWeightsArgs) -> CliResult<()> {
    let params = ParamFile::load(args.params.as_ref())?;
    let seed = params.u64(args.seed, "seed", 42)?;
    let enc_cfg = EncoderConfig {
        embed_dim: params.usize(args.embed_dim, "embed_dim", 64)?,
        vocab_buckets: params.usize(args.vocab_buckets, "vocab_buckets", 4096)?,
        attention_heads: params.usize(args.heads, "heads", 4)?,
        attn_dropout: params.f64(args.attn_dropout, "attn_dropout", 0.3)?,
        clf_dropout: params.f64(args.clf_dropout, "clf_dropout", 0.5)?,
        seed,
    };
    let train_cfg = TrainConfig {
        learning_rate: params.f64(args.learning_rate, "learning_rate", 1e-3)?,
        adam_eps: params.f64(args.adam_eps, "adam_eps", 1e-8)?,
        weight_decay: params.f64(args.weight_decay, "weight_decay", 0.01)?,
        epochs: params.usize(args.epochs, "epochs", 20)?,
        patience: params.usize(args.patience, "patience", 3)?,
        batch_size: params.usize(args.batch_size, "batch_size", 16)?,
        seed,
    };
    let k = params.usize(args.k, "k", 3)?;
    let max_bad_frac = params.f64(args.max_bad_frac, "max_bad_frac", 0.1)?;

    let eekb = load_eekb(&args.eekb)?;
    let train_pairs = load_pairs(&args.train, max_bad_frac)?;
    let val_pairs = load_pairs(&args.val, max_bad_frac)?;
    let outcome = train(&train_pairs, &val_pairs, &eekb, k, &enc_cfg, &train_cfg)?;
    let mut buf = Vec::new();
    outcome.model.save(&mut buf)?;
    write_all(&args.out, &buf)?;
    println!(
        "{}",
        serde_json::json!({
            "epochs_run": outcome.epochs_run,
            "best_epoch": outcome.best_epoch,
            "best_val_loss": outcome.best_val_loss,
            "out": args.out.display().to_string(),
        })
    );
    Ok(())
}

fn cmd_train_embedder(args: TrainEmbedderArgs) -> CliResult<()> {
    let params = ParamFile::load(args.params.as_ref())?;
    let seed = params.u64(args.seed, "seed", 42)?;
    let enc_cfg = TextEncoderConfig {
        dim: params.usize(args.dim, "dim", 64)?,
        vocab_buckets: params.usize(args.vocab_buckets, "vocab_buckets", 4096)?,
        seed,
    };
    let cfg = ContrastiveConfig {
        margin: params.f64(args.margin, "margin", 1.0)?,
        learning_rate: params.f64(args.learning_rate, "learning_rate", 1e-3)?,
        epochs: params.usize(args.epochs, "epochs", 20)?,
        batch_size: params.usize(args.batch_size, "batch_size", 32)?,
        seed,
    };
    let pairs = load_pairs(&args.pairs, 0.1)?;
    let outcome = train_contrastive(&pairs, &enc_cfg, &cfg)?;
    let mut buf = Vec::new();
    outcome.encoder.save(&mut buf)?;
    write_all(&args.out, &buf)?;
    println!(
        "{}",
        serde_json::json!({
            "epochs": outcome.epoch_losses.len(),
            "final_loss": outcome.epoch_losses.last().copied().unwrap_or(0.0),
            "out": args.out.display().to_string(),
        })
    );
    Ok(())
}

fn cmd_index(args: IndexArgs) -> CliResult<()> {
    let candidates = parse_candidates(open_reader(&args.candidates)?)?;
    let index = build_index(&candidates)?;
    save_index(&index, &args.out)?;
    println!(
        "{}",
        serde_json::json!({
            "candidates": index.len(),
            "avg_doc_length": index.avg_doc_length(),
            "out": args.out.display().to_string(),
        })
    );
    Ok(())
}

fn cmd_retrieve(args: RetrieveArgs) -> CliResult<()> {
    let params = ParamFile::load(args.params.as_ref())?;
    let k = params.usize(args.k, "k", 3)?;
    let n = params.usize(args.n, "n", 50)?;
    let adjust = AdjustConfig {
        lexical_alpha: params.f64(args.lexical_alpha, "lexical_alpha", 1.5)?,
        embedding_alpha: params.f64(args.embedding_alpha, "embedding_alpha", 1.2)?,
    };
    let eekb = load_eekb(&args.eekb)?;
    let (index, candidates) = load_index(&args.index)?;
    let pairs = load_pairs(&args.pairs, 0.1)?;
    let model = match &args.model {
        Some(path) => Some(WeightModel::load(open_reader(path)?)?),
        None => None,
    };
    let encoder = match &args.encoder {
        Some(path) => Some(TextEncoder::load(open_reader(path)?)?),
        None => None,
    };
    if args.mode == Mode::Embedding && encoder.is_none() {
        return Err(CliError::Core(QeewError::MissingComponent(
            "--encoder for embedding mode".into(),
        )));
    }
    let vectors = match (&args.mode, &encoder) {
        (Mode::Embedding, Some(enc)) => embed_candidates(enc, &candidates),
        _ => Vec::new(),
    };

    let mut lines = Vec::new();
    for pair in &pairs {
        if pair.query_entities.is_empty() {
            continue;
        }
        let xq = expand_query(&pair.query, &pair.query_entities, &eekb, k)?;
        let (xq, boosts) = if args.oracle_weights || model.is_some() {
            let weights = if args.oracle_weights {
                assign_labels(pair, &xq)
            } else {
                model.as_ref().expect("model checked").predict_weights(&xq)?
            };
            let boosts: Vec<qeew_core::catalog::Entity> = level2_entities(&xq, &weights)
                .into_iter()
                .cloned()
                .collect();
            (prune_expansions(&xq, &weights), boosts)
        } else {
            (xq, Vec::new())
        };
        let boost_refs: Vec<&qeew_core::catalog::Entity> = boosts.iter().collect();
        let ranked = match args.mode {
            Mode::Lexical => {
                let tokens = expanded_query_tokens(&xq);
                retrieve_lexical_tokens(&index, &tokens, &boost_refs, &adjust, n)
            }
            Mode::Embedding => retrieve_embedding(
                encoder.as_ref().expect("encoder checked"),
                &candidates,
                &vectors,
                &expanded_query_text(&xq),
                &boost_refs,
                &adjust,
                n,
            ),
        };
        lines.push(ranked_to_json(&pair.query, &ranked));
    }

    let body = lines.join("\n") + "\n";
    match &args.out {
        Some(path) => write_all(path, body.as_bytes())?,
        None => print!("{body}"),
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let params = ParamFile::load(args.params.as_ref())?;
    let k = params.usize(args.k, "k", 3)?;
    let adjust = AdjustConfig {
        lexical_alpha: params.f64(args.lexical_alpha, "lexical_alpha", 1.5)?,
        embedding_alpha: params.f64(args.embedding_alpha, "embedding_alpha", 1.2)?,
    };
    let k_set_raw = match &args.k_set {
        Some(s) => s.clone(),
        None => match params.0.get("k_set") {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Array(a)) => a
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(","),
            _ => "1,10,50".to_string(),
        },
    };
    let k_set: Vec<usize> = k_set_raw
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Params(format!("bad k_set entry `{s}`")))
        })
        .collect::<Result<_, _>>()?;

    let configs: Vec<AblationConfig> = if args.config == "all" {
        AblationConfig::ALL.to_vec()
    } else {
        vec![AblationConfig::parse(&args.config).ok_or_else(|| {
            CliError::Core(QeewError::InvalidConfig(format!(
                "unknown configuration `{}` (expected baseline|expansion|weight|full|all)",
                args.config
            )))
        })?]
    };

    let eekb = load_eekb(&args.eekb)?;
    let (index, candidates) = load_index(&args.index)?;
    let pairs = load_pairs(&args.test, 0.1)?;
    let model = match &args.model {
        Some(path) => Some(WeightModel::load(open_reader(path)?)?),
        None => None,
    };
    let encoder = match &args.encoder {
        Some(path) => Some(TextEncoder::load(open_reader(path)?)?),
        None => None,
    };
    let components = EvalComponents {
        eekb: &eekb,
        index: &index,
        candidates: &candidates,
        weight_model: model.as_ref(),
        encoder: encoder.as_ref(),
        expansion_k: k,
        adjust,
    };
    let source = if args.oracle_weights {
        WeightSource::Oracle
    } else {
        WeightSource::Trained
    };
    let mode = match args.mode {
        Mode::Lexical => RetrievalMode::Lexical,
        Mode::Embedding => RetrievalMode::Embedding,
    };
    let report = run_ablation(&pairs, &components, &configs, source, mode, &k_set)?;
    print!("{}", report.to_table());
    let json = report.to_json() + "\n";
    match &args.out {
        Some(path) => write_all(path, json.as_bytes())?,
        None => print!("{json}"),
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> CliResult<()> {
    let params = ParamFile::load(args.params.as_ref())?;
    let seed = params.u64(args.seed, "seed", 42)?;
    let defaults = SynthSizes::default();
    let sizes = SynthSizes {
        catalog_entries: params.usize(
            args.catalog_entries,
            "catalog_entries",
            defaults.catalog_entries,
        )?,
        test_queries: params.usize(args.test_queries, "test_queries", defaults.test_queries)?,
        candidates: params.usize(args.candidates, "candidates", defaults.candidates)?,
        train_pairs: params.usize(args.train_pairs, "train_pairs", defaults.train_pairs)?,
        val_pairs: params.usize(args.val_pairs, "val_pairs", defaults.val_pairs)?,
    };
    let corpus = generate_synthetic(seed, &sizes)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|source| CliError::Io {
        path: args.out_dir.clone(),
        source,
    })?;

    let write_lines = |name: &str, lines: Vec<String>| -> CliResult<String> {
        let path = args.out_dir.join(name);
        let body = lines.join("\n") + "\n";
        write_all(&path, body.as_bytes())?;
        Ok(path.display().to_string())
    };
    let catalog_path = write_lines(
        "catalog.jsonl",
        corpus.catalog.iter().map(catalog_entry_to_json).collect(),
    )?;
    let train_path = write_lines("train.jsonl", corpus.train.iter().map(pair_to_json).collect())?;
    let val_path = write_lines("val.jsonl", corpus.val.iter().map(pair_to_json).collect())?;
    let test_path = write_lines("test.jsonl", corpus.test.iter().map(pair_to_json).collect())?;
    let candidates_path = write_lines(
        "candidates.jsonl",
        corpus
            .candidates
            .iter()
            .map(|c| serde_json::json!({"id": c.id, "text": c.text}).to_string())
            .collect(),
    )?;
    println!(
        "{}",
        serde_json::json!({
            "seed": seed,
            "catalog": catalog_path,
            "train": train_path,
            "val": val_path,
            "test": test_path,
            "candidates": candidates_path,
        })
    );
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::BuildEekb(args) => cmd_build_eekb(args),
        Command::Expand(args) => cmd_expand(args),
        Command::TrainWeights(args) => cmd_train_weights(args),
        Command::TrainEmbedder(args) => cmd_train_embedder(args),
        Command::Index(args) => cmd_index(args),
        Command::Retrieve(args) => cmd_retrieve(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Synth(args) => cmd_synth(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
