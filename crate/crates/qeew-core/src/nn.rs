//! Small dense-matrix neural network machinery: multi-head attention, layer
//! normalization, and a decoupled-weight-decay Adam optimizer, all in 64-bit
//! floats with hand-derived analytic backward passes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Score assigned to masked attention keys. Large enough to underflow to an
/// exact zero after softmax, finite so no NaN arithmetic can occur.
const MASK_SCORE: f64 = -1.0e30;

/// Row-major dense matrix of f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    pub fn zeros_like(other: &Matrix) -> Self {
        Matrix::zeros(other.rows, other.cols)
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// self (m×k) · other (k×n).
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = out.row_mut(i);
                for (d, o) in dst.iter_mut().zip(orow) {
                    *d += a * o;
                }
            }
        }
        out
    }

    /// selfᵀ (k×m becomes m rows) · other: (self: k×m, other: k×n) → m×n.
    pub fn transpose_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "transpose_matmul shape mismatch");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let srow = self.row(k);
            let orow = other.row(k);
            for (i, a) in srow.iter().enumerate() {
                if *a == 0.0 {
                    continue;
                }
                let dst = out.row_mut(i);
                for (d, o) in dst.iter_mut().zip(orow) {
                    *d += a * o;
                }
            }
        }
        out
    }

    /// self (m×k) · otherᵀ (other: n×k) → m×n.
    pub fn matmul_transpose(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_transpose shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let srow = self.row(i);
            for j in 0..other.rows {
                let orow = other.row(j);
                let mut acc = 0.0;
                for (a, b) in srow.iter().zip(orow) {
                    acc += a * b;
                }
                *out.at_mut(i, j) = acc;
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.data.len(), other.data.len());
        for (d, o) in self.data.iter_mut().zip(&other.data) {
            *d += o;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for d in &mut self.data {
            *d *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// FNV-1a 64-bit hash; the stable token-to-bucket map for hashed vocabularies.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn token_bucket(token: &str, buckets: usize) -> usize {
    (fnv1a64(token.as_bytes()) % buckets as u64) as usize
}

/// Xavier-uniform initialization.
pub fn xavier_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let mut m = Matrix::zeros(rows, cols);
    for v in &mut m.data {
        *v = rng.random_range(-bound..bound);
    }
    m
}

/// Small uniform initialization for embedding tables.
pub fn embedding_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for v in &mut m.data {
        *v = rng.random_range(-scale..scale);
    }
    m
}

/// Inverted-dropout mask: entries are 0 with probability p, else 1/(1-p).
pub fn dropout_mask(rng: &mut ChaCha8Rng, rows: usize, cols: usize, p: f64) -> Matrix {
    let keep = 1.0 / (1.0 - p);
    let mut m = Matrix::zeros(rows, cols);
    for v in &mut m.data {
        *v = if rng.random::<f64>() < p { 0.0 } else { keep };
    }
    m
}

fn softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Softmax over each row of `scores`.
pub fn softmax_rows(mut scores: Matrix) -> Matrix {
    for r in 0..scores.rows {
        softmax_row(scores.row_mut(r));
    }
    scores
}

/// Row-wise softmax Jacobian product: ds = a ⊙ (da − ⟨da, a⟩).
fn softmax_backward_row(a: &[f64], da: &[f64], ds: &mut [f64]) {
    let dot: f64 = a.iter().zip(da).map(|(x, y)| x * y).sum();
    for i in 0..a.len() {
        ds[i] = a[i] * (da[i] - dot);
    }
}

// ---------------------------------------------------------------------------
// Layer normalization
// ---------------------------------------------------------------------------

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Matrix,
    pub bias: Matrix,
}

pub struct LayerNormCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerNormGrads {
    pub gain: Matrix,
    pub bias: Matrix,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        let mut gain = Matrix::zeros(1, dim);
        gain.data.fill(1.0);
        LayerNorm {
            gain,
            bias: Matrix::zeros(1, dim),
        }
    }

    pub fn zero_grads(&self) -> LayerNormGrads {
        LayerNormGrads {
            gain: Matrix::zeros_like(&self.gain),
            bias: Matrix::zeros_like(&self.bias),
        }
    }

    pub fn forward(&self, x: &Matrix) -> (Matrix, LayerNormCache) {
        let d = x.cols as f64;
        let mut xhat = Matrix::zeros_like(x);
        let mut inv_std = vec![0.0; x.rows];
        let mut out = Matrix::zeros_like(x);
        for r in 0..x.rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let istd = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = istd;
            for c in 0..x.cols {
                let xh = (row[c] - mean) * istd;
                *xhat.at_mut(r, c) = xh;
                *out.at_mut(r, c) = self.gain.data[c] * xh + self.bias.data[c];
            }
        }
        (out, LayerNormCache { xhat, inv_std })
    }

    /// dx = (g⊙dy − mean(g⊙dy) − xhat·mean(g⊙dy⊙xhat)) · inv_std, per row.
    pub fn backward(&self, cache: &LayerNormCache, dy: &Matrix, grads: &mut LayerNormGrads) -> Matrix {
        let d = dy.cols as f64;
        let mut dx = Matrix::zeros_like(dy);
        for r in 0..dy.rows {
            let dyr = dy.row(r);
            let xh = cache.xhat.row(r);
            let mut mean_gdy = 0.0;
            let mut mean_gdy_xh = 0.0;
            for c in 0..dy.cols {
                let gdy = self.gain.data[c] * dyr[c];
                mean_gdy += gdy;
                mean_gdy_xh += gdy * xh[c];
                grads.gain.data[c] += dyr[c] * xh[c];
                grads.bias.data[c] += dyr[c];
            }
            mean_gdy /= d;
            mean_gdy_xh /= d;
            let istd = cache.inv_std[r];
            for c in 0..dy.cols {
                let gdy = self.gain.data[c] * dyr[c];
                *dx.at_mut(r, c) = (gdy - mean_gdy - xh[c] * mean_gdy_xh) * istd;
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Multi-head attention
// ---------------------------------------------------------------------------

/// Multi-head self-attention with optional key masking and attention dropout.
/// Parameters are the four d×d projections plus their biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub bq: Matrix,
    pub bk: Matrix,
    pub bv: Matrix,
    pub bo: Matrix,
    pub heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub bq: Matrix,
    pub bk: Matrix,
    pub bv: Matrix,
    pub bo: Matrix,
}

pub struct AttentionCache {
    x: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Pre-dropout attention probabilities, one n×n matrix per head.
    attn: Vec<Matrix>,
    /// Post-dropout probabilities actually applied to values.
    attn_dropped: Vec<Matrix>,
    drop_masks: Option<Vec<Matrix>>,
    ctx: Matrix,
}

impl Attention {
    pub fn new(rng: &mut ChaCha8Rng, dim: usize, heads: usize) -> Self {
        assert!(dim % heads == 0, "embed_dim must be divisible by heads");
        Attention {
            wq: xavier_init(rng, dim, dim),
            wk: xavier_init(rng, dim, dim),
            wv: xavier_init(rng, dim, dim),
            wo: xavier_init(rng, dim, dim),
            bq: Matrix::zeros(1, dim),
            bk: Matrix::zeros(1, dim),
            bv: Matrix::zeros(1, dim),
            bo: Matrix::zeros(1, dim),
            heads,
        }
    }

    pub fn zero_grads(&self) -> AttentionGrads {
        AttentionGrads {
            wq: Matrix::zeros_like(&self.wq),
            wk: Matrix::zeros_like(&self.wk),
            wv: Matrix::zeros_like(&self.wv),
            wo: Matrix::zeros_like(&self.wo),
            bq: Matrix::zeros_like(&self.bq),
            bk: Matrix::zeros_like(&self.bk),
            bv: Matrix::zeros_like(&self.bv),
            bo: Matrix::zeros_like(&self.bo),
        }
    }

    fn project(x: &Matrix, w: &Matrix, b: &Matrix) -> Matrix {
        let mut out = x.matmul(w);
        for r in 0..out.rows {
            let row = out.row_mut(r);
            for (o, bias) in row.iter_mut().zip(&b.data) {
                *o += bias;
            }
        }
        out
    }

    /// `key_mask[j] == true` hides slot j from every query; each row must
    /// have at least one unmasked key.
    pub fn forward(
        &self,
        x: &Matrix,
        key_mask: &[bool],
        mut dropout: Option<(&mut ChaCha8Rng, f64)>,
    ) -> (Matrix, AttentionCache) {
        let n = x.rows;
        let d = x.cols;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let q = Self::project(x, &self.wq, &self.bq);
        let k = Self::project(x, &self.wk, &self.bk);
        let v = Self::project(x, &self.wv, &self.bv);

        let mut attn = Vec::with_capacity(self.heads);
        let mut attn_dropped = Vec::with_capacity(self.heads);
        let mut drop_masks: Option<Vec<Matrix>> = dropout.is_some().then(Vec::new);
        let mut ctx = Matrix::zeros(n, d);

        for h in 0..self.heads {
            let off = h * dh;
            let mut scores = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    if key_mask[j] {
                        *scores.at_mut(i, j) = MASK_SCORE;
                        continue;
                    }
                    let qi = &q.row(i)[off..off + dh];
                    let kj = &k.row(j)[off..off + dh];
                    let dot: f64 = qi.iter().zip(kj).map(|(a, b)| a * b).sum();
                    *scores.at_mut(i, j) = dot * scale;
                }
            }
            let probs = softmax_rows(scores);
            let dropped = if let Some((rng, p)) = dropout.as_mut() {
                let mask = dropout_mask(rng, n, n, *p);
                let mut pd = probs.clone();
                for (v, m) in pd.data.iter_mut().zip(&mask.data) {
                    *v *= m;
                }
                drop_masks.as_mut().expect("mask store").push(mask);
                pd
            } else {
                probs.clone()
            };
            for i in 0..n {
                for j in 0..n {
                    let w = dropped.at(i, j);
                    if w == 0.0 {
                        continue;
                    }
                    let vj = &v.row(j)[off..off + dh];
                    let dst = &mut ctx.row_mut(i)[off..off + dh];
                    for (dv, vv) in dst.iter_mut().zip(vj) {
                        *dv += w * vv;
                    }
                }
            }
            attn.push(probs);
            attn_dropped.push(dropped);
        }

        let out = Self::project(&ctx, &self.wo, &self.bo);
        (
            out,
            AttentionCache {
                x: x.clone(),
                q,
                k,
                v,
                attn,
                attn_dropped,
                drop_masks,
                ctx,
            },
        )
    }

    /// Accumulates parameter gradients into `grads` and returns dL/dx.
    pub fn backward(&self, cache: &AttentionCache, dout: &Matrix, grads: &mut AttentionGrads) -> Matrix {
        let n = cache.x.rows;
        let d = cache.x.cols;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();

        // Output projection.
        grads.wo.add_assign(&cache.ctx.transpose_matmul(dout));
        for r in 0..n {
            for (g, dy) in grads.bo.data.iter_mut().zip(dout.row(r)) {
                *g += dy;
            }
        }
        let dctx = dout.matmul_transpose(&self.wo);

        let mut dq = Matrix::zeros(n, d);
        let mut dk = Matrix::zeros(n, d);
        let mut dv = Matrix::zeros(n, d);

        for h in 0..self.heads {
            let off = h * dh;
            let probs = &cache.attn[h];
            let dropped = &cache.attn_dropped[h];

            // dL/d(dropped attn) and dL/dv.
            let mut d_dropped = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    let dci = &dctx.row(i)[off..off + dh];
                    let vj = &cache.v.row(j)[off..off + dh];
                    let dot: f64 = dci.iter().zip(vj).map(|(a, b)| a * b).sum();
                    *d_dropped.at_mut(i, j) = dot;

                    let w = dropped.at(i, j);
                    if w != 0.0 {
                        let dst = &mut dv.row_mut(j)[off..off + dh];
                        for (g, dc) in dst.iter_mut().zip(dci) {
                            *g += w * dc;
                        }
                    }
                }
            }

            // Undo dropout scaling, then softmax Jacobian.
            if let Some(masks) = &cache.drop_masks {
                for (v, m) in d_dropped.data.iter_mut().zip(&masks[h].data) {
                    *v *= m;
                }
            }
            let mut dscores = Matrix::zeros(n, n);
            for i in 0..n {
                softmax_backward_row(probs.row(i), d_dropped.row(i), dscores.row_mut(i));
            }

            // dq_h = ds·k_h·scale; dk_h = dsᵀ·q_h·scale.
            for i in 0..n {
                for j in 0..n {
                    let ds = dscores.at(i, j) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = &cache.k.row(j)[off..off + dh];
                    let qi = &cache.q.row(i)[off..off + dh];
                    {
                        let dst = &mut dq.row_mut(i)[off..off + dh];
                        for (g, kv) in dst.iter_mut().zip(kj) {
                            *g += ds * kv;
                        }
                    }
                    let dst = &mut dk.row_mut(j)[off..off + dh];
                    for (g, qv) in dst.iter_mut().zip(qi) {
                        *g += ds * qv;
                    }
                }
            }
        }

        // Input projections.
        grads.wq.add_assign(&cache.x.transpose_matmul(&dq));
        grads.wk.add_assign(&cache.x.transpose_matmul(&dk));
        grads.wv.add_assign(&cache.x.transpose_matmul(&dv));
        for r in 0..n {
            for (g, dy) in grads.bq.data.iter_mut().zip(dq.row(r)) {
                *g += dy;
            }
            for (g, dy) in grads.bk.data.iter_mut().zip(dk.row(r)) {
                *g += dy;
            }
            for (g, dy) in grads.bv.data.iter_mut().zip(dv.row(r)) {
                *g += dy;
            }
        }

        let mut dx = dq.matmul_transpose(&self.wq);
        dx.add_assign(&dk.matmul_transpose(&self.wk));
        dx.add_assign(&dv.matmul_transpose(&self.wv));
        dx
    }
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adam with decoupled weight decay. State is positional: callers must pass
/// parameter/gradient slices in the same order every step.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step_count: u64,
    state: Vec<(Matrix, Matrix)>,
}

impl AdamW {
    pub fn new(learning_rate: f64, eps: f64, weight_decay: f64) -> Self {
        AdamW {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps,
            weight_decay,
            step_count: 0,
            state: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[&Matrix]) {
        assert_eq!(params.len(), grads.len());
        if self.state.is_empty() {
            self.state = params
                .iter()
                .map(|p| (Matrix::zeros_like(p), Matrix::zeros_like(p)))
                .collect();
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for ((param, grad), (m, v)) in params.iter_mut().zip(grads).zip(&mut self.state) {
            for i in 0..param.data.len() {
                let g = grad.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * g;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * g * g;
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                param.data[i] -= self.learning_rate
                    * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * param.data[i]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let m = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]);
        let s = softmax_rows(m);
        for r in 0..2 {
            let sum: f64 = s.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_keys_get_exactly_zero_probability() {
        let mut r = rng();
        let attn = Attention::new(&mut r, 8, 2);
        let x = xavier_init(&mut r, 4, 8);
        let mask = [false, true, false, true];
        let (_, cache) = attn.forward(&x, &mask, None);
        for probs in &cache.attn {
            for i in 0..4 {
                assert_eq!(probs.at(i, 1), 0.0);
                assert_eq!(probs.at(i, 3), 0.0);
            }
        }
    }

    #[test]
    fn masked_slot_content_does_not_change_output() {
        let mut r = rng();
        let attn = Attention::new(&mut r, 8, 2);
        let mut x = xavier_init(&mut r, 4, 8);
        let mask = [false, true, false, false];
        let (out1, _) = attn.forward(&x, &mask, None);
        for v in x.row_mut(1) {
            *v += 17.0;
        }
        let (out2, _) = attn.forward(&x, &mask, None);
        // Masked slot 1 is hidden as a key, so every other row is untouched.
        for i in [0usize, 2, 3] {
            assert_eq!(out1.row(i), out2.row(i));
        }
    }

    #[test]
    fn layernorm_matches_finite_differences() {
        let mut r = rng();
        let ln = LayerNorm::new(6);
        let x = xavier_init(&mut r, 3, 6);
        let target = xavier_init(&mut r, 3, 6);
        let loss_of = |ln: &LayerNorm, x: &Matrix| -> f64 {
            let (y, _) = ln.forward(x);
            y.data
                .iter()
                .zip(&target.data)
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        };
        let (y, cache) = ln.forward(&x);
        let mut dy = Matrix::zeros_like(&y);
        for i in 0..y.data.len() {
            dy.data[i] = 2.0 * (y.data[i] - target.data[i]);
        }
        let mut grads = ln.zero_grads();
        let dx = ln.backward(&cache, &dy, &mut grads);

        let h = 1e-6;
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fd = (loss_of(&ln, &xp) - loss_of(&ln, &xm)) / (2.0 * h);
            assert!(
                (fd - dx.data[i]).abs() < 1e-5 * fd.abs().max(1.0),
                "dx[{i}]: fd={fd}, analytic={}",
                dx.data[i]
            );
        }
        let mut lnp = ln.clone();
        for i in 0..lnp.gain.data.len() {
            let orig = lnp.gain.data[i];
            lnp.gain.data[i] = orig + h;
            let up = loss_of(&lnp, &x);
            lnp.gain.data[i] = orig - h;
            let down = loss_of(&lnp, &x);
            lnp.gain.data[i] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grads.gain.data[i]).abs() < 1e-5 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn attention_input_gradient_matches_finite_differences() {
        let mut r = rng();
        let attn = Attention::new(&mut r, 8, 2);
        let x = xavier_init(&mut r, 4, 8);
        let target = xavier_init(&mut r, 4, 8);
        let mask = [false, false, true, false];
        let loss_of = |x: &Matrix| -> f64 {
            let (y, _) = attn.forward(x, &mask, None);
            y.data
                .iter()
                .zip(&target.data)
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        };
        let (y, cache) = attn.forward(&x, &mask, None);
        let mut dy = Matrix::zeros_like(&y);
        for i in 0..y.data.len() {
            dy.data[i] = 2.0 * (y.data[i] - target.data[i]);
        }
        let mut grads = attn.zero_grads();
        let dx = attn.backward(&cache, &dy, &mut grads);

        let h = 1e-6;
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fd = (loss_of(&xp) - loss_of(&xm)) / (2.0 * h);
            assert!(
                (fd - dx.data[i]).abs() < 1e-4 * fd.abs().max(1.0),
                "dx[{i}]: fd={fd} analytic={}",
                dx.data[i]
            );
        }
    }

    #[test]
    fn adamw_decays_toward_zero_without_gradient() {
        let mut p = Matrix::from_vec(1, 2, vec![1.0, -1.0]);
        let g = Matrix::zeros(1, 2);
        let mut opt = AdamW::new(0.1, 1e-8, 0.5);
        let before = p.data.clone();
        opt.step(&mut [&mut p], &[&g]);
        assert!(p.data[0] < before[0]);
        assert!(p.data[1] > before[1]);
    }

    #[test]
    fn fnv_is_stable() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(token_bucket("telefone", 64), token_bucket("telefone", 64));
        assert_ne!(
            fnv1a64(b"sheena easton"),
            fnv1a64(b"long distance love")
        );
    }
}
