//! Contrastive text encoder for embedding retrieval: hashed mean-pooled
//! token embeddings with a linear projection, trained so positive
//! query-reformulation pairs are close in Euclidean distance and in-batch
//! negatives are pushed past a margin.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{norm_tokens, ReformulationPair};
use crate::error::{QeewError, Result};
use crate::nn::{token_bucket, AdamW, Matrix};
use crate::weight::{ModelFile, MODEL_FORMAT_VERSION};

const TEXT_ENCODER_KIND: &str = "text-encoder";

/// Structural hyperparameters of the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEncoderConfig {
    pub dim: usize,
    pub vocab_buckets: usize,
    pub seed: u64,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        TextEncoderConfig {
            dim: 64,
            vocab_buckets: 4096,
            seed: 42,
        }
    }
}

/// Contrastive training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            margin: 1.0,
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 32,
            seed: 42,
        }
    }
}

/// The encoder parameters: a hashed token embedding table and a square
/// projection (no bias, so empty text encodes to the exact zero vector).
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder {
    pub config: TextEncoderConfig,
    pub embed: Matrix,
    pub proj: Matrix,
}

impl TextEncoder {
    pub fn init(config: TextEncoderConfig) -> Result<TextEncoder> {
        if config.dim == 0 || config.vocab_buckets == 0 {
            return Err(QeewError::InvalidConfig(
                "dim and vocab_buckets must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(TextEncoder {
            embed: crate::nn::embedding_init(&mut rng, config.vocab_buckets, config.dim, 0.1),
            proj: crate::nn::xavier_init(&mut rng, config.dim, config.dim),
            config,
        })
    }

    fn buckets(&self, text: &str) -> Vec<usize> {
        norm_tokens(text)
            .iter()
            .map(|t| token_bucket(t, self.config.vocab_buckets))
            .collect()
    }

    /// Mean of hashed token embeddings pushed through the projection.
    /// Deterministic; empty text yields the zero vector.
    pub fn encode_text(&self, text: &str) -> Vec<f64> {
        let buckets = self.buckets(text);
        let dim = self.config.dim;
        if buckets.is_empty() {
            return vec![0.0; dim];
        }
        let mut pooled = vec![0.0; dim];
        let inv = 1.0 / buckets.len() as f64;
        for &b in &buckets {
            for (p, e) in pooled.iter_mut().zip(self.embed.row(b)) {
                *p += e * inv;
            }
        }
        let mut out = vec![0.0; dim];
        for (i, p) in pooled.iter().enumerate() {
            if *p == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.proj.row(i)) {
                *o += p * w;
            }
        }
        out
    }

    pub fn save<W: Write>(&self, mut sink: W) -> Result<()> {
        let mut tensors = std::collections::BTreeMap::new();
        tensors.insert("embed".to_string(), self.embed.clone());
        tensors.insert("proj".to_string(), self.proj.clone());
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            kind: TEXT_ENCODER_KIND.to_string(),
            config: serde_json::to_value(&self.config)
                .map_err(|e| QeewError::InvalidRecord(e.to_string()))?,
            tensors,
        };
        let json =
            serde_json::to_string(&file).map_err(|e| QeewError::InvalidRecord(e.to_string()))?;
        sink.write_all(json.as_bytes())?;
        sink.write_all(b"\n")?;
        Ok(())
    }

    pub fn load<R: BufRead>(mut source: R) -> Result<TextEncoder> {
        let mut raw = String::new();
        source.read_to_string(&mut raw)?;
        let file: ModelFile = serde_json::from_str(&raw).map_err(|e| QeewError::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        file.check(TEXT_ENCODER_KIND)?;
        let config: TextEncoderConfig = serde_json::from_value(file.config.clone())
            .map_err(|e| QeewError::InvalidRecord(e.to_string()))?;
        let mut enc = TextEncoder::init(config)?;
        for (name, slot) in [("embed", &mut enc.embed), ("proj", &mut enc.proj)] {
            let stored = file
                .tensors
                .get(name)
                .ok_or_else(|| QeewError::InvalidRecord(format!("missing tensor `{name}`")))?;
            if stored.rows != slot.rows || stored.cols != slot.cols {
                return Err(QeewError::ShapeMismatch(format!(
                    "tensor `{name}`: stored {}x{}, expected {}x{}",
                    stored.rows, stored.cols, slot.rows, slot.cols
                )));
            }
            *slot = stored.clone();
        }
        Ok(enc)
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Margin contrastive batch loss over encoded pairs. For each anchor i the
/// positive term is the squared distance to its reformulation, and the
/// negative term averages the squared hinge max(0, margin − d⁻) over the
/// other reformulations in the batch. Returns the loss and gradients with
/// respect to the query and reformulation embeddings.
pub fn batch_loss_and_grads(
    queries: &[Vec<f64>],
    reforms: &[Vec<f64>],
    margin: f64,
) -> (f64, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = queries.len();
    assert_eq!(n, reforms.len());
    let dim = queries.first().map_or(0, Vec::len);
    let mut dq = vec![vec![0.0; dim]; n];
    let mut dr = vec![vec![0.0; dim]; n];
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;

    for i in 0..n {
        // Positive term: squared distance, differentiable everywhere.
        let mut pos = 0.0;
        for c in 0..dim {
            let diff = queries[i][c] - reforms[i][c];
            pos += diff * diff;
            dq[i][c] += 2.0 * diff * inv_n;
            dr[i][c] -= 2.0 * diff * inv_n;
        }
        total += pos * inv_n;

        if n < 2 {
            continue;
        }
        let inv_neg = 1.0 / (n - 1) as f64;
        for j in 0..n {
            if j == i {
                continue;
            }
            let d = euclidean(&queries[i], &reforms[j]);
            if d >= margin {
                continue;
            }
            let gap = margin - d;
            total += gap * gap * inv_n * inv_neg;
            if d > 0.0 {
                let coef = -2.0 * gap / d * inv_n * inv_neg;
                for c in 0..dim {
                    let diff = queries[i][c] - reforms[j][c];
                    dq[i][c] += coef * diff;
                    dr[j][c] -= coef * diff;
                }
            }
        }
    }
    (total, dq, dr)
}

/// Gradients of the encoder parameters given gradients of one encoded text.
fn backprop_text(
    enc: &TextEncoder,
    text: &str,
    d_out: &[f64],
    d_embed: &mut Matrix,
    d_proj: &mut Matrix,
) {
    let buckets = enc.buckets(text);
    if buckets.is_empty() {
        return;
    }
    let dim = enc.config.dim;
    let inv = 1.0 / buckets.len() as f64;
    // Recompute pooled mean for the projection gradient.
    let mut pooled = vec![0.0; dim];
    for &b in &buckets {
        for (p, e) in pooled.iter_mut().zip(enc.embed.row(b)) {
            *p += e * inv;
        }
    }
    // out = pooled · proj, so dproj = pooledᵀ·dout and dpooled = dout·projᵀ.
    let mut d_pooled = vec![0.0; dim];
    for i in 0..dim {
        let prow = enc.proj.row(i);
        let g = d_proj.row_mut(i);
        for c in 0..dim {
            g[c] += pooled[i] * d_out[c];
            d_pooled[i] += d_out[c] * prow[c];
        }
    }
    for &b in &buckets {
        for (g, dp) in d_embed.row_mut(b).iter_mut().zip(&d_pooled) {
            *g += dp * inv;
        }
    }
}

/// Outcome of a contrastive training run.
#[derive(Debug)]
pub struct ContrastiveOutcome {
    pub encoder: TextEncoder,
    pub epoch_losses: Vec<f64>,
}

/// Train the encoder on query-reformulation pairs with in-batch negatives.
/// Deterministic per seed; aborts on non-finite loss.
pub fn train_contrastive(
    pairs: &[ReformulationPair],
    enc_cfg: &TextEncoderConfig,
    cfg: &ContrastiveConfig,
) -> Result<ContrastiveOutcome> {
    if pairs.len() < 2 {
        return Err(QeewError::InvalidConfig(
            "contrastive training needs at least 2 pairs for in-batch negatives".into(),
        ));
    }
    if cfg.margin <= 0.0 || cfg.learning_rate <= 0.0 || cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(QeewError::InvalidConfig(
            "margin, learning_rate, epochs, and batch_size must be positive".into(),
        ));
    }
    let mut enc = TextEncoder::init(enc_cfg.clone())?;
    let mut opt = AdamW::new(cfg.learning_rate, 1e-8, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let queries: Vec<Vec<f64>> = chunk
                .iter()
                .map(|&i| enc.encode_text(&pairs[i].query))
                .collect();
            let reforms: Vec<Vec<f64>> = chunk
                .iter()
                .map(|&i| enc.encode_text(&pairs[i].reformulation))
                .collect();
            let (loss, dq, dr) = batch_loss_and_grads(&queries, &reforms, cfg.margin);
            if !loss.is_finite() {
                return Err(QeewError::Divergence(format!(
                    "non-finite contrastive loss at epoch {epoch}"
                )));
            }
            let mut d_embed = Matrix::zeros_like(&enc.embed);
            let mut d_proj = Matrix::zeros_like(&enc.proj);
            for (pos, &i) in chunk.iter().enumerate() {
                backprop_text(&enc, &pairs[i].query, &dq[pos], &mut d_embed, &mut d_proj);
                backprop_text(
                    &enc,
                    &pairs[i].reformulation,
                    &dr[pos],
                    &mut d_embed,
                    &mut d_proj,
                );
            }
            opt.step(
                &mut [&mut enc.embed, &mut enc.proj],
                &[&d_embed, &d_proj],
            );
            epoch_loss += loss;
            batches += 1;
        }
        epoch_losses.push(epoch_loss / batches as f64);
    }

    Ok(ContrastiveOutcome {
        encoder: enc,
        epoch_losses,
    })
}
