//! Document and query encoders.
//!
//! Documents: `w_j = IDF_j * g_k(max_i logit[i, j])` over a pluggable
//! [`TokenScorer`]. The activation is monotone, so pooling raw logits first
//! and activating once gives the same result as activating every position.
//!
//! Queries: inference-free bag of words, weight `IDF_j` for every distinct
//! token present.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::activation::{activate_with_grad, ActivationSpec};
use crate::error::{Error, Result};
use crate::types::{IdfTable, SparseVector, TokenizedText};

/// Dense `positions x vocab` logit matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLogits {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TokenLogits {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Column-wise max with the lowest row index winning ties.
    pub fn max_pool(&self) -> PooledLogits {
        let mut pooled = PooledLogits::new(self.cols);
        for i in 0..self.rows {
            pooled.absorb(i as u32, self.row(i));
        }
        pooled
    }
}

/// Max-pooled logits with the winning position per vocabulary column.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledLogits {
    pub max: Vec<f64>,
    pub argmax: Vec<u32>,
}

impl PooledLogits {
    pub fn new(cols: usize) -> Self {
        Self {
            max: vec![f64::NEG_INFINITY; cols],
            argmax: vec![0; cols],
        }
    }

    /// Positions must be absorbed in ascending order so that ties keep the
    /// lowest one.
    pub fn absorb(&mut self, position: u32, row: &[f64]) {
        for ((m, a), &v) in self.max.iter_mut().zip(self.argmax.iter_mut()).zip(row) {
            if v > *m {
                *m = v;
                *a = position;
            }
        }
    }
}

/// Produces per-position vocabulary logits from token ids.
///
/// Parameters are exposed as one flat slice so optimizers and gradient
/// checks can treat every scorer alike.
pub trait TokenScorer {
    fn vocab_size(&self) -> usize;

    fn forward(&self, tokens: &[u32]) -> TokenLogits;

    fn max_pool(&self, tokens: &[u32]) -> PooledLogits {
        self.forward(tokens).max_pool()
    }

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    /// Adds `upstream * d logit[position, column] / d params` into `grad`.
    fn backprop_logit(
        &self,
        tokens: &[u32],
        position: usize,
        column: usize,
        upstream: f64,
        grad: &mut [f64],
    );
}

/// Bilinear toy scorer: `logits[i, :] = E[t_i] . U + b`.
///
/// Parameter layout: `E` (`vocab x dim`), then `U` (`dim x vocab`), then `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyScorer {
    vocab: usize,
    dim: usize,
    params: Vec<f64>,
}

impl ToyScorer {
    pub const DEFAULT_BIAS: f64 = -1.0;

    pub fn zeros(vocab: usize, dim: usize) -> Self {
        Self {
            vocab,
            dim,
            params: vec![0.0; 2 * vocab * dim + vocab],
        }
    }

    /// `E ~ U(-1, 1)`, `U ~ U(-1, 1) / sqrt(dim)`, bias `-1`.
    pub fn init<R: Rng>(vocab: usize, dim: usize, rng: &mut R) -> Result<Self> {
        Self::init_scaled(vocab, dim, 1.0, rng)
    }

    /// As [`ToyScorer::init`] with `U ~ U(-scale, scale) / sqrt(dim)`; the
    /// initial logit spread around the bias is `scale / 3`.
    pub fn init_scaled<R: Rng>(vocab: usize, dim: usize, scale: f64, rng: &mut R) -> Result<Self> {
        if vocab == 0 || dim == 0 {
            return Err(Error::InvalidParameter(
                "scorer vocabulary and dimension must be positive".into(),
            ));
        }
        let mut s = Self::zeros(vocab, dim);
        let scale = scale / (dim as f64).sqrt();
        let (e, rest) = s.params.split_at_mut(vocab * dim);
        let (u, b) = rest.split_at_mut(vocab * dim);
        e.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        u.iter_mut()
            .for_each(|x| *x = rng.gen_range(-1.0..1.0) * scale);
        b.iter_mut().for_each(|x| *x = Self::DEFAULT_BIAS);
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn u_offset(&self) -> usize {
        self.vocab * self.dim
    }

    fn b_offset(&self) -> usize {
        2 * self.vocab * self.dim
    }

    fn embedding(&self, token: u32) -> &[f64] {
        let start = token as usize * self.dim;
        &self.params[start..start + self.dim]
    }

    fn row_into(&self, token: u32, out: &mut [f64]) {
        let v = self.vocab;
        out.copy_from_slice(&self.params[self.b_offset()..self.b_offset() + v]);
        let u = &self.params[self.u_offset()..self.b_offset()];
        for (k, &e) in self.embedding(token).iter().enumerate() {
            for (o, &w) in out.iter_mut().zip(&u[k * v..(k + 1) * v]) {
                *o += e * w;
            }
        }
    }
}

impl TokenScorer for ToyScorer {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn forward(&self, tokens: &[u32]) -> TokenLogits {
        let mut data = vec![0.0; tokens.len() * self.vocab];
        for (row, &t) in data.chunks_mut(self.vocab).zip(tokens) {
            self.row_into(t, row);
        }
        TokenLogits {
            rows: tokens.len(),
            cols: self.vocab,
            data,
        }
    }

    /// Rows only depend on the token id, so each distinct token is scored
    /// once at its first position.
    fn max_pool(&self, tokens: &[u32]) -> PooledLogits {
        let mut pooled = PooledLogits::new(self.vocab);
        let mut seen = std::collections::HashSet::with_capacity(tokens.len());
        let mut row = vec![0.0; self.vocab];
        for (i, &t) in tokens.iter().enumerate() {
            if seen.insert(t) {
                self.row_into(t, &mut row);
                pooled.absorb(i as u32, &row);
            }
        }
        pooled
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn backprop_logit(
        &self,
        tokens: &[u32],
        position: usize,
        column: usize,
        upstream: f64,
        grad: &mut [f64],
    ) {
        let (v, d) = (self.vocab, self.dim);
        let t = tokens[position] as usize;
        let (u_off, b_off) = (self.u_offset(), self.b_offset());
        for k in 0..d {
            let e = self.params[t * d + k];
            let u = self.params[u_off + k * v + column];
            grad[t * d + k] += upstream * u;
            grad[u_off + k * v + column] += upstream * e;
        }
        grad[b_off + column] += upstream;
    }
}

/// Wraps a scorer and counts forward invocations.
#[derive(Debug)]
pub struct CountingScorer<S> {
    inner: S,
    calls: AtomicUsize,
}

impl<S: TokenScorer> CountingScorer<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn into_inner(self) -> S {
        self.inner
    }
}

impl<S: TokenScorer> TokenScorer for CountingScorer<S> {
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn forward(&self, tokens: &[u32]) -> TokenLogits {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.forward(tokens)
    }

    fn max_pool(&self, tokens: &[u32]) -> PooledLogits {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.max_pool(tokens)
    }

    fn params(&self) -> &[f64] {
        self.inner.params()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.inner.params_mut()
    }

    fn backprop_logit(
        &self,
        tokens: &[u32],
        position: usize,
        column: usize,
        upstream: f64,
        grad: &mut [f64],
    ) {
        self.inner
            .backprop_logit(tokens, position, column, upstream, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub k_rank: u32,
    pub k_reg: u32,
    pub max_input_length: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            k_rank: 1,
            k_reg: 1,
            max_input_length: 64,
        }
    }
}

impl EncoderConfig {
    pub fn coupled(k: u32) -> Self {
        Self {
            k_rank: k,
            k_reg: k,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_rank == 0 || self.k_reg == 0 {
            return Err(Error::InvalidParameter(format!(
                "fold counts must be >= 1 (k_rank={}, k_reg={})",
                self.k_rank, self.k_reg
            )));
        }
        if self.max_input_length == 0 {
            return Err(Error::InvalidParameter(
                "max_input_length must be positive".into(),
            ));
        }
        Ok(())
    }

    fn specs(&self) -> Result<(ActivationSpec, ActivationSpec)> {
        Ok((
            ActivationSpec::new(self.k_rank)?,
            ActivationSpec::new(self.k_reg)?,
        ))
    }
}

/// Output of [`encode_document`]; keeps what the backward pass needs.
#[derive(Debug, Clone)]
pub struct DocumentEncoding {
    /// IDF-scaled ranking representation (`k_rank` folds).
    pub rank: SparseVector,
    /// IDF-scaled regularization representation (`k_reg` folds); same
    /// support as `rank`.
    pub reg: SparseVector,
    /// Pooled logit of each support entry.
    pub pooled: Vec<f64>,
    /// Winning position of each support entry.
    pub argmax: Vec<u32>,
    /// The tokens after truncation.
    pub tokens: Vec<u32>,
}

impl DocumentEncoding {
    /// Backpropagates gradients on the `rank` and `reg` entries (aligned with
    /// their support) into the scorer parameters.
    pub fn backward<S: TokenScorer + ?Sized>(
        &self,
        scorer: &S,
        cfg: &EncoderConfig,
        idf: &IdfTable,
        upstream_rank: &[f64],
        upstream_reg: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        let n = self.rank.l0_norm();
        for (len, what) in [(upstream_rank.len(), "rank"), (upstream_reg.len(), "reg")] {
            if len != n {
                log::debug!("{what} upstream length {len} != support {n}");
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: len,
                });
            }
        }
        if grad.len() != scorer.params().len() {
            return Err(Error::DimensionMismatch {
                expected: scorer.params().len(),
                found: grad.len(),
            });
        }
        let (rank_spec, reg_spec) = cfg.specs()?;
        for (e, &j) in self.rank.ids().iter().enumerate() {
            let (ur, ug) = (upstream_rank[e], upstream_reg[e]);
            if ur == 0.0 && ug == 0.0 {
                continue;
            }
            let z = self.pooled[e];
            let (_, gr) = activate_with_grad(z, rank_spec);
            let (_, gg) = activate_with_grad(z, reg_spec);
            let dz = idf.get(j) * (ur * gr + ug * gg);
            scorer.backprop_logit(&self.tokens, self.argmax[e] as usize, j as usize, dz, grad);
        }
        Ok(())
    }
}

pub fn encode_document<S: TokenScorer + ?Sized>(
    doc: &TokenizedText,
    scorer: &S,
    cfg: &EncoderConfig,
    idf: &IdfTable,
) -> Result<DocumentEncoding> {
    cfg.validate()?;
    let dim = scorer.vocab_size();
    if idf.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: idf.len(),
        });
    }
    let tokens = doc.truncated(cfg.max_input_length).to_vec();
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad as usize + 1,
        });
    }
    if tokens.is_empty() {
        log::debug!("empty document encodes to empty representations");
        return Ok(DocumentEncoding {
            rank: SparseVector::empty(dim),
            reg: SparseVector::empty(dim),
            pooled: Vec::new(),
            argmax: Vec::new(),
            tokens,
        });
    }
    let (rank_spec, reg_spec) = cfg.specs()?;
    let pooled_all = scorer.max_pool(&tokens);
    let mut ids = Vec::new();
    let mut rank_w = Vec::new();
    let mut reg_w = Vec::new();
    let mut pooled = Vec::new();
    let mut argmax = Vec::new();
    for (j, (&z, &pos)) in pooled_all.max.iter().zip(&pooled_all.argmax).enumerate() {
        if z > 0.0 {
            let idf_j = idf.get(j as u32);
            ids.push(j as u32);
            rank_w.push(idf_j * crate::activation::activate(z, rank_spec));
            reg_w.push(idf_j * crate::activation::activate(z, reg_spec));
            pooled.push(z);
            argmax.push(pos);
        }
    }
    Ok(DocumentEncoding {
        rank: SparseVector::from_sorted_unchecked(dim, ids.clone(), rank_w),
        reg: SparseVector::from_sorted_unchecked(dim, ids, reg_w),
        pooled,
        argmax,
        tokens,
    })
}

/// Parameter gradient of `sum_e upstream_rank[e] * rank[e] + upstream_reg[e] * reg[e]`.
pub fn encode_document_with_grad<S: TokenScorer + ?Sized>(
    doc: &TokenizedText,
    scorer: &S,
    cfg: &EncoderConfig,
    idf: &IdfTable,
    upstream_rank: &[f64],
    upstream_reg: &[f64],
) -> Result<Vec<f64>> {
    let enc = encode_document(doc, scorer, cfg, idf)?;
    let mut grad = vec![0.0; scorer.params().len()];
    enc.backward(scorer, cfg, idf, upstream_rank, upstream_reg, &mut grad)?;
    Ok(grad)
}

/// Inference-free query encoding: `IDF_j` for each distinct token.
pub fn encode_query(query: &TokenizedText, idf: &IdfTable) -> Result<SparseVector> {
    let dim = idf.len();
    let mut ids: Vec<u32> = query.ids().to_vec();
    ids.sort_unstable();
    ids.dedup();
    if let Some(&bad) = ids.last().filter(|&&t| t as usize >= dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad as usize + 1,
        });
    }
    let weights = ids.iter().map(|&j| idf.get(j)).collect();
    Ok(SparseVector::from_sorted_unchecked(dim, ids, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Scorer returning fixed logits per position regardless of token.
    struct FixedScorer {
        logits: TokenLogits,
        params: Vec<f64>,
    }

    impl TokenScorer for FixedScorer {
        fn vocab_size(&self) -> usize {
            self.logits.cols()
        }
        fn forward(&self, tokens: &[u32]) -> TokenLogits {
            let cols = self.logits.cols();
            TokenLogits::new(
                tokens.len(),
                cols,
                self.logits.data[..tokens.len() * cols].to_vec(),
            )
            .unwrap()
        }
        fn params(&self) -> &[f64] {
            &self.params
        }
        fn params_mut(&mut self) -> &mut [f64] {
            &mut self.params
        }
        fn backprop_logit(
            &self,
            _: &[u32],
            position: usize,
            column: usize,
            up: f64,
            g: &mut [f64],
        ) {
            g[position * self.logits.cols() + column] += up;
        }
    }

    fn fixed(rows: usize, cols: usize, data: Vec<f64>) -> FixedScorer {
        FixedScorer {
            params: vec![0.0; rows * cols],
            logits: TokenLogits::new(rows, cols, data).unwrap(),
        }
    }

    #[test]
    fn single_position_example() {
        let s = fixed(1, 3, vec![1.0, -2.0, 0.0]);
        let idf = IdfTable::new(vec![2.0, 1.0, 1.0]).unwrap();
        let enc = encode_document(
            &TokenizedText::new(vec![0]),
            &s,
            &EncoderConfig::coupled(1),
            &idf,
        )
        .unwrap();
        assert_eq!(enc.rank.ids(), &[0]);
        let expected = 2.0 * 2f64.ln();
        assert!((enc.rank.weights()[0] - expected).abs() < 1e-15);
        assert!((enc.rank.weights()[0] - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn max_pooling_picks_the_larger_logit() {
        let s = fixed(2, 1, vec![1.0, 3.0]);
        let idf = IdfTable::new(vec![1.0]).unwrap();
        let enc = encode_document(
            &TokenizedText::new(vec![0, 0]),
            &s,
            &EncoderConfig::coupled(1),
            &idf,
        )
        .unwrap();
        assert!((enc.rank.weights()[0] - 4f64.ln()).abs() < 1e-15);
        assert_eq!(enc.argmax, vec![1]);
    }

    #[test]
    fn all_nonpositive_logits_give_empty_representations() {
        let s = fixed(2, 3, vec![-1.0, 0.0, -0.5, -3.0, -0.1, 0.0]);
        let idf = IdfTable::uniform(3, 1.0).unwrap();
        let cfg = EncoderConfig {
            k_rank: 1,
            k_reg: 2,
            max_input_length: 8,
        };
        let enc = encode_document(&TokenizedText::new(vec![0, 1]), &s, &cfg, &idf).unwrap();
        assert!(enc.rank.is_empty() && enc.reg.is_empty());
    }

    #[test]
    fn empty_document_is_valid() {
        let s = fixed(1, 3, vec![1.0, 1.0, 1.0]);
        let idf = IdfTable::uniform(3, 1.0).unwrap();
        let enc = encode_document(
            &TokenizedText::default(),
            &s,
            &EncoderConfig::default(),
            &idf,
        )
        .unwrap();
        assert!(enc.rank.is_empty());
    }

    #[test]
    fn tie_goes_to_lowest_position() {
        let s = fixed(2, 1, vec![2.0, 2.0]);
        let idf = IdfTable::new(vec![1.0]).unwrap();
        let cfg = EncoderConfig::coupled(1);
        let doc = TokenizedText::new(vec![0, 0]);
        let g = encode_document_with_grad(&doc, &s, &cfg, &idf, &[1.0], &[0.0]).unwrap();
        assert!(g[0] != 0.0);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = ToyScorer::init(6, 3, &mut rng).unwrap();
        let idf = IdfTable::uniform(6, 1.3).unwrap();
        let cfg = EncoderConfig::coupled(2);
        let doc = TokenizedText::new(vec![0, 2, 5, 2]);
        let enc = encode_document(&doc, &s, &cfg, &idf).unwrap();
        let zeros = vec![0.0; enc.rank.l0_norm()];
        let g = encode_document_with_grad(&doc, &s, &cfg, &idf, &zeros, &zeros).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn upstream_shape_mismatch_is_an_error() {
        let s = fixed(1, 2, vec![1.0, 1.0]);
        let idf = IdfTable::uniform(2, 1.0).unwrap();
        let doc = TokenizedText::new(vec![0]);
        let r = encode_document_with_grad(
            &doc,
            &s,
            &EncoderConfig::default(),
            &idf,
            &[1.0],
            &[1.0, 1.0],
        );
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn toy_scorer_pooling_matches_dense_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = ToyScorer::init(40, 4, &mut rng).unwrap();
        let tokens = vec![3, 7, 3, 39, 0, 7, 12];
        assert_eq!(s.max_pool(&tokens), s.forward(&tokens).max_pool());
    }

    /// Loss `sum_e a_e * rank_e + c_e * reg_e` with fixed coefficients, so its
    /// gradient is exactly `encode_document_with_grad(a, c)`.
    fn linear_probe(
        s: &ToyScorer,
        doc: &TokenizedText,
        cfg: &EncoderConfig,
        idf: &IdfTable,
        a: &[f64],
        c: &[f64],
    ) -> f64 {
        let enc = encode_document(doc, s, cfg, idf).unwrap();
        let rank = enc.rank.to_dense();
        let reg = enc.reg.to_dense();
        (0..rank.len())
            .map(|j| a[j] * rank[j] + c[j] * reg[j])
            .sum()
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn toy_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = ToyScorer::init(3, 2, &mut rng).unwrap();
        // lift the bias so every column is active
        for b in &mut s.params_mut()[12..15] {
            *b = 2.0;
        }
        let idf = IdfTable::new(vec![1.2, 0.8, 2.0]).unwrap();
        let doc = TokenizedText::new(vec![1, 0, 2, 1]);
        for cfg in [
            EncoderConfig {
                k_rank: 1,
                k_reg: 1,
                max_input_length: 8,
            },
            EncoderConfig {
                k_rank: 1,
                k_reg: 2,
                max_input_length: 8,
            },
            EncoderConfig {
                k_rank: 3,
                k_reg: 2,
                max_input_length: 8,
            },
        ] {
            let a = [0.3, -1.1, 0.6];
            let c = [0.9, 0.25, -0.4];
            let enc = encode_document(&doc, &s, &cfg, &idf).unwrap();
            assert_eq!(enc.rank.l0_norm(), 3);
            let ua: Vec<f64> = enc.rank.ids().iter().map(|&j| a[j as usize]).collect();
            let uc: Vec<f64> = enc.rank.ids().iter().map(|&j| c[j as usize]).collect();
            let analytic = encode_document_with_grad(&doc, &s, &cfg, &idf, &ua, &uc).unwrap();
            let h = 1e-5;
            for p in 0..s.params().len() {
                let orig = s.params()[p];
                s.params_mut()[p] = orig + h;
                let fp = linear_probe(&s, &doc, &cfg, &idf, &a, &c);
                s.params_mut()[p] = orig - h;
                let fm = linear_probe(&s, &doc, &cfg, &idf, &a, &c);
                s.params_mut()[p] = orig;
                let fd = (fp - fm) / (2.0 * h);
                let rel = (analytic[p] - fd).abs() / analytic[p].abs().max(fd.abs()).max(1e-6);
                assert!(rel <= 1e-6, "{cfg:?} param {p}: {} vs {fd}", analytic[p]);
            }
        }
    }

    #[test]
    fn rank_and_reg_share_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = ToyScorer::init(200, 8, &mut rng).unwrap();
        let idf = IdfTable::uniform(200, 2.0).unwrap();
        let cfg = EncoderConfig {
            k_rank: 1,
            k_reg: 3,
            max_input_length: 64,
        };
        let doc = TokenizedText::new((0..40).map(|i| (i * 7 % 200) as u32).collect());
        let enc = encode_document(&doc, &s, &cfg, &idf).unwrap();
        assert!(!enc.rank.is_empty());
        assert_eq!(enc.rank.ids(), enc.reg.ids());
    }

    #[test]
    fn truncation_matches_prefix() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = ToyScorer::init(50, 4, &mut rng).unwrap();
        let idf = IdfTable::uniform(50, 1.0).unwrap();
        let cfg = EncoderConfig {
            k_rank: 2,
            k_reg: 2,
            max_input_length: 5,
        };
        let long = TokenizedText::new(vec![1, 2, 3, 4, 5, 6, 7, 8, 9]);
        let prefix = TokenizedText::new(vec![1, 2, 3, 4, 5]);
        let a = encode_document(&long, &s, &cfg, &idf).unwrap();
        let b = encode_document(&prefix, &s, &cfg, &idf).unwrap();
        assert_eq!(a.rank, b.rank);
        assert_eq!(a.reg, b.reg);
    }

    #[test]
    fn query_encoding_examples() {
        let idf = IdfTable::new(vec![1.5, 0.5, 3.0]).unwrap();
        let q = encode_query(&TokenizedText::new(vec![0, 1, 0]), &idf).unwrap();
        assert_eq!(
            q,
            SparseVector::from_pairs(3, [(0, 1.5), (1, 0.5)]).unwrap()
        );
        assert!(encode_query(&TokenizedText::default(), &idf)
            .unwrap()
            .is_empty());
        assert!(encode_query(&TokenizedText::new(vec![3]), &idf).is_err());
    }

    #[test]
    fn query_encoding_matches_set_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let idf = IdfTable::new((0..30).map(|j| 0.5 + j as f64 * 0.1).collect()).unwrap();
        let ids: Vec<u32> = (0..20).map(|_| rng.gen_range(0..30)).collect();
        let set: std::collections::BTreeSet<u32> = ids.iter().copied().collect();
        let oracle = SparseVector::from_pairs(30, set.iter().map(|&j| (j, idf.get(j)))).unwrap();
        assert_eq!(
            encode_query(&TokenizedText::new(ids), &idf).unwrap(),
            oracle
        );
    }

    #[test]
    fn counting_scorer_counts_forward_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = CountingScorer::new(ToyScorer::init(10, 2, &mut rng).unwrap());
        let idf = IdfTable::uniform(10, 1.0).unwrap();
        encode_document(
            &TokenizedText::new(vec![1, 2]),
            &s,
            &EncoderConfig::default(),
            &idf,
        )
        .unwrap();
        assert_eq!(s.calls(), 1);
        encode_query(&TokenizedText::new(vec![1, 2]), &idf).unwrap();
        assert_eq!(s.calls(), 1);
    }
}
