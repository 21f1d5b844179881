//! Sparse vectors, vocabularies and IDF tables.
//!
//! A [`SparseVector`] stores only strictly positive weights, sorted by token
//! id, so its stored-entry count is its l0 norm.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed token vocabulary with dense ids in `[0, len)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    #[serde(skip)]
    token_to_id: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("vocabulary"));
        }
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if token_to_id.insert(tok.clone(), id as u32).is_some() {
                return Err(Error::DuplicateId(tok.clone()));
            }
        }
        Ok(Self {
            id_to_token: tokens,
            token_to_id,
        })
    }

    /// Builds a vocabulary from every token the tokenizer finds in `texts`,
    /// sorted lexicographically.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for text in texts {
            for tok in split_tokens(text) {
                seen.insert(tok);
            }
        }
        Self::new(seen.into_iter().collect())
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Lowercases, splits on anything that is not alphanumeric and drops
    /// out-of-vocabulary tokens.
    pub fn tokenize(&self, text: &str) -> TokenizedText {
        TokenizedText::new(split_tokens(text).filter_map(|t| self.id(&t)).collect())
    }

    /// Inverse of [`Vocabulary::tokenize`] for in-vocabulary ids.
    pub fn detokenize(&self, text: &TokenizedText) -> String {
        text.ids()
            .iter()
            .filter_map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn split_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
}

/// A token-id sequence.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenizedText(Vec<u32>);

impl TokenizedText {
    pub fn new(ids: Vec<u32>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn truncated(&self, max_len: usize) -> &[u32] {
        &self.0[..self.0.len().min(max_len)]
    }
}

/// Sparse nonnegative vector over a fixed vocabulary.
///
/// Invariants: ids strictly increasing, every id `< dim`, every weight
/// finite and `> 0`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    dim: usize,
    ids: Vec<u32>,
    weights: Vec<f64>,
}

impl SparseVector {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            weights: Vec::new(),
        }
    }

    /// Values `<= 0` are treated as absent.
    pub fn from_dense(dense: &[f64]) -> Self {
        let mut ids = Vec::new();
        let mut weights = Vec::new();
        for (j, &w) in dense.iter().enumerate() {
            if w > 0.0 {
                ids.push(j as u32);
                weights.push(w);
            }
        }
        Self {
            dim: dense.len(),
            ids,
            weights,
        }
    }

    /// Builds a vector from unordered `(id, weight)` pairs. Zero weights are
    /// dropped; negative or non-finite weights, out-of-range and repeated ids
    /// are rejected.
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (u32, f64)>) -> Result<Self> {
        let mut pairs: Vec<(u32, f64)> = pairs.into_iter().collect();
        pairs.sort_by_key(|&(id, _)| id);
        let mut ids = Vec::with_capacity(pairs.len());
        let mut weights = Vec::with_capacity(pairs.len());
        let mut prev: Option<u32> = None;
        for (id, w) in pairs {
            if id as usize >= dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: id as usize + 1,
                });
            }
            if prev == Some(id) {
                return Err(Error::DuplicateId(format!("token {id}")));
            }
            prev = Some(id);
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "weight {w} for token {id} must be finite and nonnegative"
                )));
            }
            if w > 0.0 {
                ids.push(id);
                weights.push(w);
            }
        }
        Ok(Self { dim, ids, weights })
    }

    /// Caller guarantees the invariants.
    pub(crate) fn from_sorted_unchecked(dim: usize, ids: Vec<u32>, weights: Vec<f64>) -> Self {
        debug_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(weights.iter().all(|&w| w > 0.0));
        Self { dim, ids, weights }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.ids.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn l0_norm(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: u32) -> f64 {
        match self.ids.binary_search(&id) {
            Ok(pos) => self.weights[pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.dim];
        for (id, w) in self.iter() {
            dense[id as usize] = w;
        }
        dense
    }

    /// Merge-join inner product.
    pub fn dot(&self, other: &SparseVector) -> Result<f64> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        let (mut i, mut j) = (0, 0);
        let mut acc = 0.0;
        while i < self.ids.len() && j < other.ids.len() {
            match self.ids[i].cmp(&other.ids[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.weights[i] * other.weights[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        Ok(acc)
    }

    pub fn scale_by_idf(&self, idf: &IdfTable) -> Result<SparseVector> {
        if idf.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: idf.len(),
            });
        }
        let weights = self.iter().map(|(id, w)| w * idf.get(id)).collect();
        Ok(Self::from_sorted_unchecked(
            self.dim,
            self.ids.clone(),
            weights,
        ))
    }

    /// Space-separated `token_id:weight` pairs, ids ascending. Weights use
    /// the shortest representation that parses back to the same `f64`.
    pub fn to_line(&self) -> String {
        let mut out = String::with_capacity(self.ids.len() * 12);
        for (n, (id, w)) in self.iter().enumerate() {
            if n > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{id}:{w}");
        }
        out
    }

    pub fn parse_line(dim: usize, line: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for item in line.split_whitespace() {
            let (id, w) = item.split_once(':').ok_or_else(|| {
                Error::InvalidParameter(format!("expected token_id:weight, got {item:?}"))
            })?;
            let id: u32 = id
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad token id {id:?}")))?;
            let w: f64 = w
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad weight {w:?}")))?;
            if w <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "stored weights must be positive, got {w}"
                )));
            }
            pairs.push((id, w));
        }
        if pairs.windows(2).any(|p| p[0].0 >= p[1].0) {
            return Err(Error::InvalidParameter("token ids must ascend".into()));
        }
        Self::from_pairs(dim, pairs)
    }
}

/// Strictly positive per-token IDF values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfTable {
    values: Vec<f64>,
}

impl IdfTable {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("idf table"));
        }
        if let Some((j, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::InvalidParameter(format!(
                "idf[{j}] = {v} must be finite and strictly positive"
            )));
        }
        Ok(Self { values })
    }

    pub fn uniform(dim: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; dim])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, id: u32) -> f64 {
        self.values[id as usize]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Writes `token<TAB>idf` lines in id order; the file doubles as the
    /// vocabulary.
    pub fn write_tsv<W: Write>(&self, vocab: &Vocabulary, mut out: W) -> Result<()> {
        if vocab.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: vocab.len(),
                found: self.len(),
            });
        }
        for (tok, v) in vocab.tokens().iter().zip(&self.values) {
            writeln!(out, "{tok}\t{v}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(input: R, path: &str) -> Result<(Vocabulary, IdfTable)> {
        let mut tokens = Vec::new();
        let mut values = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_string(),
                line: n + 1,
                message,
            };
            let (tok, v) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected token<TAB>idf".into()))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("bad idf value {v:?}")))?;
            tokens.push(tok.to_string());
            values.push(v);
        }
        Ok((Vocabulary::new(tokens)?, IdfTable::new(values)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sv(dim: usize, pairs: &[(u32, f64)]) -> SparseVector {
        SparseVector::from_pairs(dim, pairs.iter().copied()).unwrap()
    }

    #[test]
    fn dot_examples() {
        let a = sv(4, &[]);
        let b = sv(4, &[(1, 2.0)]);
        assert_eq!(a.dot(&b).unwrap(), 0.0);

        let a = sv(3, &[(0, 1.5), (2, 0.5)]);
        let b = sv(3, &[(0, 2.0), (1, 1.0)]);
        assert_eq!(a.dot(&b).unwrap(), 3.0);
    }

    #[test]
    fn dot_rejects_dimension_mismatch() {
        let a = sv(3, &[(0, 1.0)]);
        let b = sv(4, &[(0, 1.0)]);
        assert!(matches!(
            a.dot(&b),
            Err(Error::DimensionMismatch {
                expected: 3,
                found: 4
            })
        ));
    }

    #[test]
    fn l0_examples() {
        assert_eq!(sv(10, &[]).l0_norm(), 0);
        assert_eq!(sv(10, &[(3, 0.1), (7, 2.0)]).l0_norm(), 2);
        let mut dense = vec![0.0; 100];
        for (n, j) in [1usize, 4, 9, 16, 25, 36, 49, 64, 81, 90, 95, 97, 99]
            .iter()
            .enumerate()
        {
            dense[*j] = 0.5 + n as f64;
        }
        dense[3] = -1.0;
        let expected = dense.iter().filter(|&&x| x > 0.0).count();
        assert_eq!(expected, 13);
        assert_eq!(SparseVector::from_dense(&dense).l0_norm(), expected);
    }

    #[test]
    fn scale_by_idf_examples() {
        let idf = IdfTable::new(vec![2.0]).unwrap();
        assert_eq!(
            sv(1, &[(0, 1.0)]).scale_by_idf(&idf).unwrap(),
            sv(1, &[(0, 2.0)])
        );
        assert!(sv(1, &[]).scale_by_idf(&idf).unwrap().is_empty());

        let idf = IdfTable::new(vec![1.0, 3.0, 1.0, 1.0, 0.5]).unwrap();
        let v = sv(5, &[(1, 0.5), (4, 2.0)]);
        let dense: Vec<f64> = v
            .to_dense()
            .iter()
            .zip(idf.values())
            .map(|(a, b)| a * b)
            .collect();
        assert_eq!(
            v.scale_by_idf(&idf).unwrap(),
            SparseVector::from_dense(&dense)
        );
        assert_eq!(v.scale_by_idf(&idf).unwrap(), sv(5, &[(1, 1.5), (4, 1.0)]));
    }

    #[test]
    fn from_pairs_validation() {
        assert!(SparseVector::from_pairs(3, [(3, 1.0)]).is_err());
        assert!(SparseVector::from_pairs(3, [(1, 1.0), (1, 2.0)]).is_err());
        assert!(SparseVector::from_pairs(3, [(1, -1.0)]).is_err());
        assert!(SparseVector::from_pairs(3, [(1, f64::NAN)]).is_err());
        assert_eq!(
            SparseVector::from_pairs(3, [(2, 1.0), (1, 0.0)])
                .unwrap()
                .l0_norm(),
            1
        );
    }

    #[test]
    fn idf_rejects_nonpositive() {
        assert!(IdfTable::new(vec![1.0, 0.0]).is_err());
        assert!(IdfTable::new(vec![]).is_err());
    }

    #[test]
    fn line_format() {
        let v = sv(10, &[(7, 0.1), (2, 1.25)]);
        assert_eq!(v.to_line(), "2:1.25 7:0.1");
        assert_eq!(SparseVector::parse_line(10, &v.to_line()).unwrap(), v);
        assert_eq!(
            SparseVector::parse_line(10, "").unwrap(),
            SparseVector::empty(10)
        );
        assert!(SparseVector::parse_line(10, "7:1 2:1").is_err());
        assert!(SparseVector::parse_line(10, "2-1").is_err());
        assert!(SparseVector::parse_line(10, "2:0").is_err());
    }

    #[test]
    fn tokenizer_lowercases_and_drops_oov() {
        let vocab = Vocabulary::new(vec!["hello".into(), "world".into()]).unwrap();
        let t = vocab.tokenize("Hello, WORLD! unknown hello");
        assert_eq!(t.ids(), &[0, 1, 0]);
        assert_eq!(vocab.detokenize(&t), "hello world hello");
    }

    #[test]
    fn vocabulary_mappings_are_inverse() {
        let vocab = Vocabulary::from_texts(["b a c", "a d"]).unwrap();
        assert_eq!(vocab.len(), 4);
        for id in 0..vocab.len() as u32 {
            assert_eq!(vocab.id(vocab.token(id).unwrap()), Some(id));
        }
        assert!(Vocabulary::new(vec!["x".into(), "x".into()]).is_err());
    }

    #[test]
    fn idf_tsv_round_trip() {
        let vocab = Vocabulary::new(vec!["a".into(), "b".into()]).unwrap();
        let idf = IdfTable::new(vec![1.0, 1.6931471805599454]).unwrap();
        let mut buf = Vec::new();
        idf.write_tsv(&vocab, &mut buf).unwrap();
        let (v2, i2) = IdfTable::read_tsv(buf.as_slice(), "mem").unwrap();
        assert_eq!(v2, vocab);
        assert_eq!(i2, idf);
    }

    fn dense_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(prop_oneof![Just(0.0), Just(-1.0), 0.001f64..10.0], dim)
    }

    proptest! {
        #[test]
        fn dot_matches_dense(a in dense_strategy(50), b in dense_strategy(50)) {
            let sa = SparseVector::from_dense(&a);
            let sb = SparseVector::from_dense(&b);
            let oracle: f64 = a.iter().zip(&b).map(|(x, y)| x.max(0.0) * y.max(0.0)).sum();
            let got = sa.dot(&sb).unwrap();
            prop_assert!((got - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
            prop_assert_eq!(got, sb.dot(&sa).unwrap());
            prop_assert!(sa.dot(&sa).unwrap() >= 0.0);
        }

        #[test]
        fn idf_scaling_preserves_support(
            a in dense_strategy(30),
            idf in prop::collection::vec(0.01f64..20.0, 30),
        ) {
            let v = SparseVector::from_dense(&a);
            let idf = IdfTable::new(idf).unwrap();
            let scaled = v.scale_by_idf(&idf).unwrap();
            prop_assert_eq!(scaled.l0_norm(), v.l0_norm());
            prop_assert_eq!(scaled.ids(), v.ids());
        }

        #[test]
        fn dense_round_trip(a in prop::collection::vec(prop_oneof![Just(0.0), 0.001f64..10.0], 40)) {
            prop_assert_eq!(SparseVector::from_dense(&a).to_dense(), a);
        }

        #[test]
        fn line_round_trip(a in dense_strategy(40)) {
            let v = SparseVector::from_dense(&a);
            prop_assert_eq!(SparseVector::parse_line(40, &v.to_line()).unwrap(), v);
        }
    }
}
