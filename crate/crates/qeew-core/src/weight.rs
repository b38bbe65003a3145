//! Entity weight prediction: label assignment, slot encoding, the
//! hierarchical two-layer cross-attention network, cross-entropy training
//! with early stopping, and inference.
//!
//! Each slot is encoded from the text "query [SEP] entity [SEP] type" via a
//! hashed-vocabulary mean-pooled embedding. A first attention layer (shared
//! parameters) runs within each entity group over its expansions; a second
//! runs jointly over all m(k+1) slot representations; a linear classifier
//! produces three weight-level logits per slot. PAD slots are masked in
//! attention and excluded from the loss.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{contains_entity, normalize, ReformulationPair};
use crate::eekb::Eekb;
use crate::error::{QeewError, Result};
use crate::expansion::{expand_query, ExpandedQuery, ExpansionSlot, Origin};
use crate::nn::{
    dropout_mask, softmax_rows, token_bucket, AdamW, Attention, AttentionCache, AttentionGrads,
    LayerNorm, LayerNormCache, LayerNormGrads, Matrix,
};

/// Predicted or assigned importance level of a slot. Level 2 is the most
/// important weight and triggers retrieval boosting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WeightLabel(pub u8);

impl WeightLabel {
    pub const ABSENT: WeightLabel = WeightLabel(0);
    pub const IN_QUERY: WeightLabel = WeightLabel(1);
    pub const IN_REFORMULATION: WeightLabel = WeightLabel(2);
}

pub const WEIGHT_CLASSES: usize = 3;

/// Encoder and attention hyperparameters. Desk-scale defaults; the
/// full-size head count is available through [`EncoderConfig::full_scale`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub vocab_buckets: usize,
    pub attention_heads: usize,
    pub attn_dropout: f64,
    pub clf_dropout: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            embed_dim: 64,
            vocab_buckets: 4096,
            attention_heads: 4,
            attn_dropout: 0.3,
            clf_dropout: 0.5,
            seed: 42,
        }
    }
}

impl EncoderConfig {
    /// Hyperparameters sized for a full pre-trained encoder.
    pub fn full_scale() -> Self {
        EncoderConfig {
            attention_heads: 6,
            embed_dim: 768,
            ..EncoderConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.vocab_buckets == 0 || self.attention_heads == 0 {
            return Err(QeewError::InvalidConfig(
                "embed_dim, vocab_buckets, and attention_heads must be positive".into(),
            ));
        }
        if self.embed_dim % self.attention_heads != 0 {
            return Err(QeewError::InvalidConfig(format!(
                "embed_dim {} not divisible by attention_heads {}",
                self.embed_dim, self.attention_heads
            )));
        }
        if !(0.0..1.0).contains(&self.attn_dropout) || !(0.0..1.0).contains(&self.clf_dropout) {
            return Err(QeewError::InvalidConfig("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Training hyperparameters. The desk-scale learning rate is 1e-3; the
/// full-scale value 3e-5 suits a pre-trained encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            epochs: 20,
            patience: 3,
            batch_size: 16,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn full_scale() -> Self {
        TrainConfig {
            learning_rate: 3e-5,
            ..TrainConfig::default()
        }
    }
}

/// The full parameter set: hashed token embeddings, two attention blocks
/// with layer norms, and the weight-level classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightModel {
    pub config: EncoderConfig,
    pub embed: Matrix,
    pub attn1: Attention,
    pub ln1: LayerNorm,
    pub attn2: Attention,
    pub ln2: LayerNorm,
    pub clf_w: Matrix,
    pub clf_b: Matrix,
}

/// Gradients mirroring [`WeightModel`] tensors.
#[derive(Debug, Clone)]
pub struct WeightGrads {
    pub embed: Matrix,
    pub attn1: AttentionGrads,
    pub ln1: LayerNormGrads,
    pub attn2: AttentionGrads,
    pub ln2: LayerNormGrads,
    pub clf_w: Matrix,
    pub clf_b: Matrix,
}

impl WeightGrads {
    pub fn scale(&mut self, s: f64) {
        for (_, t) in self.tensors_mut() {
            t.scale(s);
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        vec![
            ("embed", &self.embed),
            ("attn1.wq", &self.attn1.wq),
            ("attn1.wk", &self.attn1.wk),
            ("attn1.wv", &self.attn1.wv),
            ("attn1.wo", &self.attn1.wo),
            ("attn1.bq", &self.attn1.bq),
            ("attn1.bk", &self.attn1.bk),
            ("attn1.bv", &self.attn1.bv),
            ("attn1.bo", &self.attn1.bo),
            ("ln1.gain", &self.ln1.gain),
            ("ln1.bias", &self.ln1.bias),
            ("attn2.wq", &self.attn2.wq),
            ("attn2.wk", &self.attn2.wk),
            ("attn2.wv", &self.attn2.wv),
            ("attn2.wo", &self.attn2.wo),
            ("attn2.bq", &self.attn2.bq),
            ("attn2.bk", &self.attn2.bk),
            ("attn2.bv", &self.attn2.bv),
            ("attn2.bo", &self.attn2.bo),
            ("ln2.gain", &self.ln2.gain),
            ("ln2.bias", &self.ln2.bias),
            ("clf.w", &self.clf_w),
            ("clf.b", &self.clf_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        vec![
            ("embed", &mut self.embed),
            ("attn1.wq", &mut self.attn1.wq),
            ("attn1.wk", &mut self.attn1.wk),
            ("attn1.wv", &mut self.attn1.wv),
            ("attn1.wo", &mut self.attn1.wo),
            ("attn1.bq", &mut self.attn1.bq),
            ("attn1.bk", &mut self.attn1.bk),
            ("attn1.bv", &mut self.attn1.bv),
            ("attn1.bo", &mut self.attn1.bo),
            ("ln1.gain", &mut self.ln1.gain),
            ("ln1.bias", &mut self.ln1.bias),
            ("attn2.wq", &mut self.attn2.wq),
            ("attn2.wk", &mut self.attn2.wk),
            ("attn2.wv", &mut self.attn2.wv),
            ("attn2.wo", &mut self.attn2.wo),
            ("attn2.bq", &mut self.attn2.bq),
            ("attn2.bk", &mut self.attn2.bk),
            ("attn2.bv", &mut self.attn2.bv),
            ("attn2.bo", &mut self.attn2.bo),
            ("ln2.gain", &mut self.ln2.gain),
            ("ln2.bias", &mut self.ln2.bias),
            ("clf.w", &mut self.clf_w),
            ("clf.b", &mut self.clf_b),
        ]
    }
}

pub struct ForwardCache {
    x: Matrix,
    pad: Vec<bool>,
    slot_tokens: Vec<Vec<usize>>,
    group_attn: Vec<AttentionCache>,
    group_ln: Vec<LayerNormCache>,
    attn2: AttentionCache,
    ln2: LayerNormCache,
    clf_mask: Option<Matrix>,
    zd: Matrix,
    pub logits: Matrix,
}

impl WeightModel {
    /// Fresh model with seeded initialization.
    pub fn init(config: EncoderConfig) -> Result<WeightModel> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.embed_dim;
        Ok(WeightModel {
            embed: crate::nn::embedding_init(&mut rng, config.vocab_buckets, d, 0.1),
            attn1: Attention::new(&mut rng, d, config.attention_heads),
            ln1: LayerNorm::new(d),
            attn2: Attention::new(&mut rng, d, config.attention_heads),
            ln2: LayerNorm::new(d),
            clf_w: crate::nn::xavier_init(&mut rng, d, WEIGHT_CLASSES),
            clf_b: Matrix::zeros(1, WEIGHT_CLASSES),
            config,
        })
    }

    pub fn zero_grads(&self) -> WeightGrads {
        WeightGrads {
            embed: Matrix::zeros_like(&self.embed),
            attn1: self.attn1.zero_grads(),
            ln1: self.ln1.zero_grads(),
            attn2: self.attn2.zero_grads(),
            ln2: self.ln2.zero_grads(),
            clf_w: Matrix::zeros_like(&self.clf_w),
            clf_b: Matrix::zeros_like(&self.clf_b),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        vec![
            ("embed", &self.embed),
            ("attn1.wq", &self.attn1.wq),
            ("attn1.wk", &self.attn1.wk),
            ("attn1.wv", &self.attn1.wv),
            ("attn1.wo", &self.attn1.wo),
            ("attn1.bq", &self.attn1.bq),
            ("attn1.bk", &self.attn1.bk),
            ("attn1.bv", &self.attn1.bv),
            ("attn1.bo", &self.attn1.bo),
            ("ln1.gain", &self.ln1.gain),
            ("ln1.bias", &self.ln1.bias),
            ("attn2.wq", &self.attn2.wq),
            ("attn2.wk", &self.attn2.wk),
            ("attn2.wv", &self.attn2.wv),
            ("attn2.wo", &self.attn2.wo),
            ("attn2.bq", &self.attn2.bq),
            ("attn2.bk", &self.attn2.bk),
            ("attn2.bv", &self.attn2.bv),
            ("attn2.bo", &self.attn2.bo),
            ("ln2.gain", &self.ln2.gain),
            ("ln2.bias", &self.ln2.bias),
            ("clf.w", &self.clf_w),
            ("clf.b", &self.clf_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        vec![
            ("embed", &mut self.embed),
            ("attn1.wq", &mut self.attn1.wq),
            ("attn1.wk", &mut self.attn1.wk),
            ("attn1.wv", &mut self.attn1.wv),
            ("attn1.wo", &mut self.attn1.wo),
            ("attn1.bq", &mut self.attn1.bq),
            ("attn1.bk", &mut self.attn1.bk),
            ("attn1.bv", &mut self.attn1.bv),
            ("attn1.bo", &mut self.attn1.bo),
            ("ln1.gain", &mut self.ln1.gain),
            ("ln1.bias", &mut self.ln1.bias),
            ("attn2.wq", &mut self.attn2.wq),
            ("attn2.wk", &mut self.attn2.wk),
            ("attn2.wv", &mut self.attn2.wv),
            ("attn2.wo", &mut self.attn2.wo),
            ("attn2.bq", &mut self.attn2.bq),
            ("attn2.bk", &mut self.attn2.bk),
            ("attn2.bv", &mut self.attn2.bv),
            ("attn2.bo", &mut self.attn2.bo),
            ("ln2.gain", &mut self.ln2.gain),
            ("ln2.bias", &mut self.ln2.bias),
            ("clf.w", &mut self.clf_w),
            ("clf.b", &mut self.clf_b),
        ]
    }

    /// Token buckets of the "query [SEP] entity [SEP] type" slot text.
    fn slot_buckets(&self, query: &str, slot: &ExpansionSlot) -> Vec<usize> {
        if slot.is_pad() {
            return Vec::new();
        }
        let text = format!(
            "{} [SEP] {} [SEP] {}",
            normalize(query),
            slot.entity.norm,
            slot.entity.etype
        );
        text.split_whitespace()
            .map(|t| token_bucket(t, self.config.vocab_buckets))
            .collect()
    }

    /// Mean-pooled hashed embedding of one slot; PAD encodes to zeros.
    pub fn encode_slot(&self, query: &str, slot: &ExpansionSlot) -> Vec<f64> {
        let buckets = self.slot_buckets(query, slot);
        let mut v = vec![0.0; self.config.embed_dim];
        if buckets.is_empty() {
            return v;
        }
        for &b in &buckets {
            for (acc, e) in v.iter_mut().zip(self.embed.row(b)) {
                *acc += e;
            }
        }
        let inv = 1.0 / buckets.len() as f64;
        for acc in &mut v {
            *acc *= inv;
        }
        v
    }

    fn encode_query(&self, xq: &ExpandedQuery) -> (Matrix, Vec<bool>, Vec<Vec<usize>>) {
        let n = xq.slot_count();
        let mut x = Matrix::zeros(n, self.config.embed_dim);
        let mut pad = vec![false; n];
        let mut slot_tokens = Vec::with_capacity(n);
        for (i, slot) in xq.slots().enumerate() {
            let buckets = self.slot_buckets(&xq.query, slot);
            if buckets.is_empty() {
                pad[i] = true;
            } else {
                let inv = 1.0 / buckets.len() as f64;
                for &b in &buckets {
                    for (acc, e) in x.row_mut(i).iter_mut().zip(self.embed.row(b)) {
                        *acc += e * inv;
                    }
                }
            }
            slot_tokens.push(buckets);
        }
        (x, pad, slot_tokens)
    }

    fn check_shape(&self, xq: &ExpandedQuery) -> Result<()> {
        if xq.m == 0 || xq.groups.len() != xq.m {
            return Err(QeewError::ShapeMismatch(format!(
                "expected {} groups, found {}",
                xq.m,
                xq.groups.len()
            )));
        }
        for g in &xq.groups {
            if g.len() != xq.k + 1 {
                return Err(QeewError::ShapeMismatch(format!(
                    "group of {} slots, expected {}",
                    g.len(),
                    xq.k + 1
                )));
            }
        }
        Ok(())
    }

    /// Full forward pass producing m(k+1)×3 logits. `dropout_rng` enables
    /// training-mode dropout; `None` is the deterministic inference path.
    pub fn forward(
        &self,
        xq: &ExpandedQuery,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Matrix> {
        Ok(self.forward_cached(xq, dropout_rng)?.logits)
    }

    pub fn forward_cached(
        &self,
        xq: &ExpandedQuery,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardCache> {
        self.check_shape(xq)?;
        let (x, pad, slot_tokens) = self.encode_query(xq);
        self.forward_encoded(x, pad, slot_tokens, xq.m, xq.k, dropout_rng)
    }

    /// Forward from pre-encoded slot rows. Exposed so masking can be
    /// exercised with arbitrary PAD-row contents.
    pub fn forward_encoded(
        &self,
        x: Matrix,
        pad: Vec<bool>,
        slot_tokens: Vec<Vec<usize>>,
        m: usize,
        k: usize,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardCache> {
        let n = m * (k + 1);
        if x.rows != n || pad.len() != n {
            return Err(QeewError::ShapeMismatch(format!(
                "encoded {} rows for {} slots",
                x.rows, n
            )));
        }
        if x.cols != self.config.embed_dim {
            return Err(QeewError::ShapeMismatch(format!(
                "encoded dim {} vs model dim {}",
                x.cols, self.config.embed_dim
            )));
        }
        let group = k + 1;
        let d = self.config.embed_dim;

        // First layer: per-group attention with shared parameters.
        let mut y = Matrix::zeros(n, d);
        let mut group_attn = Vec::with_capacity(m);
        let mut group_ln = Vec::with_capacity(m);
        for g in 0..m {
            let lo = g * group;
            let mut xg = Matrix::zeros(group, d);
            for r in 0..group {
                xg.row_mut(r).copy_from_slice(x.row(lo + r));
            }
            let mask = &pad[lo..lo + group];
            let (hg, a_cache) = self.attn1.forward(
                &xg,
                mask,
                dropout_rng
                    .as_deref_mut()
                    .map(|r| (r, self.config.attn_dropout)),
            );
            let mut sum = xg;
            sum.add_assign(&hg);
            let (yg, l_cache) = self.ln1.forward(&sum);
            for r in 0..group {
                y.row_mut(lo + r).copy_from_slice(yg.row(r));
            }
            group_attn.push(a_cache);
            group_ln.push(l_cache);
        }

        // Second layer: joint attention over all slots.
        let (h2, attn2_cache) = self.attn2.forward(
            &y,
            &pad,
            dropout_rng
                .as_deref_mut()
                .map(|r| (r, self.config.attn_dropout)),
        );
        let mut sum2 = y.clone();
        sum2.add_assign(&h2);
        let (z, ln2_cache) = self.ln2.forward(&sum2);

        // Classifier with optional dropout on its input.
        let (zd, clf_mask) = if let Some(rng) = dropout_rng.as_deref_mut() {
            let mask = dropout_mask(rng, n, d, self.config.clf_dropout);
            let mut zd = z.clone();
            for (v, mk) in zd.data.iter_mut().zip(&mask.data) {
                *v *= mk;
            }
            (zd, Some(mask))
        } else {
            (z.clone(), None)
        };
        let mut logits = zd.matmul(&self.clf_w);
        for r in 0..n {
            for (l, b) in logits.row_mut(r).iter_mut().zip(&self.clf_b.data) {
                *l += b;
            }
        }

        Ok(ForwardCache {
            x,
            pad,
            slot_tokens,
            group_attn,
            group_ln,
            attn2: attn2_cache,
            ln2: ln2_cache,
            clf_mask,
            zd,
            logits,
        })
    }

    /// Mean cross-entropy loss and full analytic gradients for one expanded
    /// query. `dropout_rng: None` gives the exact gradients used by the
    /// finite-difference oracle; `Some` replays training-mode dropout masks
    /// consistently between forward and backward.
    pub fn loss_and_grads(
        &self,
        xq: &ExpandedQuery,
        labels: &[Option<WeightLabel>],
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, WeightGrads)> {
        let mut grads = self.zero_grads();
        let loss = self.accumulate_grads(xq, labels, dropout_rng, &mut grads)?;
        Ok((loss, grads))
    }

    /// As [`WeightModel::loss_and_grads`], accumulating into existing grads.
    pub fn accumulate_grads(
        &self,
        xq: &ExpandedQuery,
        labels: &[Option<WeightLabel>],
        dropout_rng: Option<&mut ChaCha8Rng>,
        grads: &mut WeightGrads,
    ) -> Result<f64> {
        let cache = self.forward_cached(xq, dropout_rng)?;
        let (loss_value, dlogits) = loss_with_grad(&cache.logits, labels)?;
        self.backward(&cache, &dlogits, grads);
        Ok(loss_value)
    }

    fn backward(&self, cache: &ForwardCache, dlogits: &Matrix, grads: &mut WeightGrads) {
        let n = cache.x.rows;
        let group = cache.x.rows / cache.group_attn.len();
        let d = self.config.embed_dim;

        // Classifier.
        grads.clf_w.add_assign(&cache.zd.transpose_matmul(dlogits));
        for r in 0..n {
            for (g, dl) in grads.clf_b.data.iter_mut().zip(dlogits.row(r)) {
                *g += dl;
            }
        }
        let mut dz = dlogits.matmul_transpose(&self.clf_w);
        if let Some(mask) = &cache.clf_mask {
            for (v, mk) in dz.data.iter_mut().zip(&mask.data) {
                *v *= mk;
            }
        }

        // Second block: z = ln2(y + attn2(y)).
        let dsum2 = self.ln2.backward(&cache.ln2, &dz, &mut grads.ln2);
        let mut dy = dsum2.clone();
        dy.add_assign(&self.attn2.backward(&cache.attn2, &dsum2, &mut grads.attn2));

        // First blocks per group, shared parameters accumulate.
        let mut dx = Matrix::zeros(n, d);
        for (g, (a_cache, l_cache)) in cache
            .group_attn
            .iter()
            .zip(&cache.group_ln)
            .enumerate()
        {
            let lo = g * group;
            let mut dyg = Matrix::zeros(group, d);
            for r in 0..group {
                dyg.row_mut(r).copy_from_slice(dy.row(lo + r));
            }
            let dsum = self.ln1.backward(l_cache, &dyg, &mut grads.ln1);
            let mut dxg = dsum.clone();
            dxg.add_assign(&self.attn1.backward(a_cache, &dsum, &mut grads.attn1));
            for r in 0..group {
                dx.row_mut(lo + r).copy_from_slice(dxg.row(r));
            }
        }

        // Mean-pooled embedding rows.
        for (i, buckets) in cache.slot_tokens.iter().enumerate() {
            if buckets.is_empty() {
                continue;
            }
            let inv = 1.0 / buckets.len() as f64;
            for &b in buckets {
                for (g, dv) in grads.embed.row_mut(b).iter_mut().zip(dx.row(i)) {
                    *g += dv * inv;
                }
            }
        }
    }

    /// Argmax weight level per slot; ties resolve toward the lower level.
    /// PAD slots yield `None`.
    pub fn predict_weights(&self, xq: &ExpandedQuery) -> Result<Vec<Option<WeightLabel>>> {
        let cache = self.forward_cached(xq, None)?;
        let mut out = Vec::with_capacity(xq.slot_count());
        for (i, _) in xq.slots().enumerate() {
            if cache.pad[i] {
                out.push(None);
                continue;
            }
            out.push(Some(argmax_level(cache.logits.row(i))));
        }
        Ok(out)
    }

    pub fn save<W: Write>(&self, mut sink: W) -> Result<()> {
        let tensors: BTreeMap<String, Matrix> = self
            .tensors()
            .into_iter()
            .map(|(name, t)| (name.to_string(), t.clone()))
            .collect();
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            kind: WEIGHT_MODEL_KIND.to_string(),
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

    pub fn load<R: BufRead>(mut source: R) -> Result<WeightModel> {
        let mut raw = String::new();
        source.read_to_string(&mut raw)?;
        let file: ModelFile = serde_json::from_str(&raw).map_err(|e| QeewError::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        file.check(WEIGHT_MODEL_KIND)?;
        let config: EncoderConfig = serde_json::from_value(file.config.clone())
            .map_err(|e| QeewError::InvalidRecord(e.to_string()))?;
        let mut model = WeightModel::init(config)?;
        for (name, tensor) in model.tensors_mut() {
            let stored = file
                .tensors
                .get(name)
                .ok_or_else(|| QeewError::InvalidRecord(format!("missing tensor `{name}`")))?;
            if stored.rows != tensor.rows || stored.cols != tensor.cols {
                return Err(QeewError::ShapeMismatch(format!(
                    "tensor `{name}`: stored {}x{}, expected {}x{}",
                    stored.rows, stored.cols, tensor.rows, tensor.cols
                )));
            }
            *tensor = stored.clone();
        }
        Ok(model)
    }
}

pub(crate) const MODEL_FORMAT_VERSION: u32 = 1;
pub(crate) const WEIGHT_MODEL_KIND: &str = "weight-model";

#[derive(Serialize, Deserialize)]
pub(crate) struct ModelFile {
    pub format_version: u32,
    pub kind: String,
    pub config: serde_json::Value,
    pub tensors: BTreeMap<String, Matrix>,
}

impl ModelFile {
    pub fn check(&self, kind: &str) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(QeewError::VersionMismatch {
                expected: format!("format_version {MODEL_FORMAT_VERSION}"),
                found: format!("format_version {}", self.format_version),
            });
        }
        if self.kind != kind {
            return Err(QeewError::VersionMismatch {
                expected: format!("kind `{kind}`"),
                found: format!("kind `{}`", self.kind),
            });
        }
        Ok(())
    }
}

/// Highest-logit weight level, ties broken toward the lower level so a tie
/// never promotes an entity.
pub fn argmax_level(logits_row: &[f64]) -> WeightLabel {
    let mut best = 0usize;
    for c in 1..logits_row.len().min(WEIGHT_CLASSES) {
        if logits_row[c] > logits_row[best] {
            best = c;
        }
    }
    WeightLabel(best as u8)
}

/// Per-slot training labels: entity in the reformulation → 2, else in the
/// original query → 1, else 0. PAD slots are `None` and ignored by the loss.
pub fn assign_labels(pair: &ReformulationPair, xq: &ExpandedQuery) -> Vec<Option<WeightLabel>> {
    xq.slots()
        .map(|slot| {
            if slot.is_pad() {
                None
            } else if contains_entity(&pair.reformulation, &slot.entity) {
                Some(WeightLabel::IN_REFORMULATION)
            } else if contains_entity(&pair.query, &slot.entity) {
                Some(WeightLabel::IN_QUERY)
            } else {
                Some(WeightLabel::ABSENT)
            }
        })
        .collect()
}

/// Mean cross-entropy over non-ignored slots.
pub fn loss(logits: &Matrix, labels: &[Option<WeightLabel>]) -> Result<f64> {
    loss_with_grad(logits, labels).map(|(l, _)| l)
}

fn loss_with_grad(logits: &Matrix, labels: &[Option<WeightLabel>]) -> Result<(f64, Matrix)> {
    if logits.rows != labels.len() {
        return Err(QeewError::ShapeMismatch(format!(
            "{} logit rows vs {} labels",
            logits.rows,
            labels.len()
        )));
    }
    let active = labels.iter().filter(|l| l.is_some()).count();
    if active == 0 {
        return Err(QeewError::AllSlotsIgnored);
    }
    let inv = 1.0 / active as f64;
    let mut total = 0.0;
    let mut dlogits = Matrix::zeros_like(logits);
    for (r, label) in labels.iter().enumerate() {
        let Some(WeightLabel(level)) = label else {
            continue;
        };
        let mut probs = Matrix::from_vec(1, logits.cols, logits.row(r).to_vec());
        probs = softmax_rows(probs);
        let p = probs.data[*level as usize];
        total -= p.ln() * inv;
        for c in 0..logits.cols {
            let indicator = if c == *level as usize { 1.0 } else { 0.0 };
            *dlogits.at_mut(r, c) = (probs.data[c] - indicator) * inv;
        }
    }
    Ok((total, dlogits))
}

/// Expanded slots predicted level 0 become PAD; originals are never removed.
/// Surviving expansions keep their order, so descending-score order holds.
pub fn prune_expansions(xq: &ExpandedQuery, weights: &[Option<WeightLabel>]) -> ExpandedQuery {
    let mut out_groups = Vec::with_capacity(xq.m);
    let mut flat = 0usize;
    for (g, group) in xq.groups.iter().enumerate() {
        let mut kept = Vec::with_capacity(group.len());
        for slot in group {
            let w = weights.get(flat).copied().flatten();
            flat += 1;
            if slot.origin == Origin::Expanded
                && !slot.is_pad()
                && w == Some(WeightLabel::ABSENT)
            {
                continue;
            }
            if !slot.is_pad() {
                kept.push(slot.clone());
            }
        }
        while kept.len() < xq.k + 1 {
            kept.push(ExpansionSlot::pad(g));
        }
        out_groups.push(kept);
    }
    ExpandedQuery {
        query: xq.query.clone(),
        groups: out_groups,
        m: xq.m,
        k: xq.k,
    }
}

/// Outcome of a training run: the best-validation model with diagnostics.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: WeightModel,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
}

/// Train the weight model with AdamW minibatches and validation early
/// stopping; returns the parameters of the best validation epoch. Fully
/// deterministic given the config seeds.
pub fn train(
    train_pairs: &[ReformulationPair],
    val_pairs: &[ReformulationPair],
    eekb: &Eekb,
    k: usize,
    enc_cfg: &EncoderConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let prepare = |pairs: &[ReformulationPair]| -> Result<Vec<(ExpandedQuery, Vec<Option<WeightLabel>>)>> {
        let mut out = Vec::new();
        for pair in pairs {
            if pair.query_entities.is_empty() {
                continue;
            }
            let xq = expand_query(&pair.query, &pair.query_entities, eekb, k)?;
            let labels = assign_labels(pair, &xq);
            out.push((xq, labels));
        }
        Ok(out)
    };
    let train_set = prepare(train_pairs)?;
    let val_set = prepare(val_pairs)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(QeewError::InvalidConfig(
            "training and validation sets must both contain pairs with entities".into(),
        ));
    }
    if train_cfg.learning_rate <= 0.0 || train_cfg.epochs == 0 || train_cfg.batch_size == 0 {
        return Err(QeewError::InvalidConfig(
            "learning_rate, epochs, and batch_size must be positive".into(),
        ));
    }

    let mut model = WeightModel::init(enc_cfg.clone())?;
    let mut opt = AdamW::new(
        train_cfg.learning_rate,
        train_cfg.adam_eps,
        train_cfg.weight_decay,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);

    let val_loss_of = |model: &WeightModel| -> Result<f64> {
        let mut total = 0.0;
        for (xq, labels) in &val_set {
            let logits = model.forward(xq, None)?;
            total += loss(&logits, labels)?;
        }
        Ok(total / val_set.len() as f64)
    };

    let mut best = f64::INFINITY;
    let mut best_model = model.clone();
    let mut best_epoch = 0usize;
    let mut bad_epochs = 0usize;
    let mut train_losses = Vec::new();
    let mut val_losses = Vec::new();
    let mut epochs_run = 0usize;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=train_cfg.epochs {
        epochs_run = epoch;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(train_cfg.batch_size) {
            let mut grads = model.zero_grads();
            let mut batch_loss = 0.0;
            for &idx in chunk {
                let (xq, labels) = &train_set[idx];
                batch_loss += model.accumulate_grads(xq, labels, Some(&mut rng), &mut grads)?;
            }
            let inv = 1.0 / chunk.len() as f64;
            batch_loss *= inv;
            if !batch_loss.is_finite() {
                return Err(QeewError::Divergence(format!(
                    "non-finite training loss at epoch {epoch}"
                )));
            }
            grads.scale(inv);
            let mut params = model.tensors_mut();
            let mut param_refs: Vec<&mut Matrix> =
                params.iter_mut().map(|(_, t)| &mut **t).collect();
            let grad_tensors = grads.tensors();
            let grad_refs: Vec<&Matrix> = grad_tensors.iter().map(|(_, t)| *t).collect();
            opt.step(&mut param_refs, &grad_refs);
            epoch_loss += batch_loss;
            batches += 1;
        }
        train_losses.push(epoch_loss / batches as f64);

        let val = val_loss_of(&model)?;
        if !val.is_finite() {
            return Err(QeewError::Divergence(format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }
        val_losses.push(val);
        if val < best {
            best = val;
            best_model = model.clone();
            best_epoch = epoch;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= train_cfg.patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        model: best_model,
        epochs_run,
        best_epoch,
        best_val_loss: best,
        train_losses,
        val_losses,
    })
}
