//! Training objective: KL distillation ranking loss plus a FLOPS regularizer
//! on the document side, optionally restricted to documents whose l0 norm
//! exceeds a threshold.
//!
//! All gradients are returned aligned with the entries of the input vectors
//! (`grads[i][e]` is the derivative w.r.t. the `e`-th stored weight of
//! document `i`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{IdfTable, SparseVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_d: f64,
    pub threshold_t: usize,
    pub mask_enabled: bool,
    pub temperature: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_d: 0.0,
            threshold_t: 0,
            mask_enabled: false,
            temperature: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_d.is_finite() && self.lambda_d >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda_d must be finite and >= 0, got {}",
                self.lambda_d
            )));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerOutput {
    pub value: f64,
    pub grads: Vec<Vec<f64>>,
    /// `mask[i]` is true when document `i` is penalized.
    pub mask: Vec<bool>,
}

impl RegularizerOutput {
    pub fn masked_fraction(&self) -> f64 {
        if self.mask.is_empty() {
            return 0.0;
        }
        self.mask.iter().filter(|m| !**m).count() as f64 / self.mask.len() as f64
    }
}

/// `M_i = 1[l0(doc_i) > t]`.
pub fn l0_mask(docs: &[SparseVector], threshold_t: usize) -> Vec<bool> {
    docs.iter().map(|d| d.l0_norm() > threshold_t).collect()
}

/// `sum_j ((1/N) sum_i w_ij / IDF_j)^2`.
pub fn flops_loss(docs: &[SparseVector], idf: &IdfTable) -> Result<RegularizerOutput> {
    let mask = vec![true; docs.len()];
    masked_flops(docs, idf, mask)
}

/// FLOPS restricted to documents with `l0 > t`. The denominator stays the
/// full batch size and the mask carries no gradient.
pub fn l0_mask_flops_loss(
    docs: &[SparseVector],
    idf: &IdfTable,
    threshold_t: usize,
) -> Result<RegularizerOutput> {
    masked_flops(docs, idf, l0_mask(docs, threshold_t))
}

fn masked_flops(
    docs: &[SparseVector],
    idf: &IdfTable,
    mask: Vec<bool>,
) -> Result<RegularizerOutput> {
    if docs.is_empty() {
        return Err(Error::EmptyInput("regularizer batch"));
    }
    let dim = idf.len();
    if let Some(d) = docs.iter().find(|d| d.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: d.dim(),
        });
    }
    let n = docs.len() as f64;
    let mut mean = vec![0.0; dim];
    for (doc, _) in docs.iter().zip(&mask).filter(|(_, m)| **m) {
        for (j, w) in doc.iter() {
            mean[j as usize] += w / idf.get(j);
        }
    }
    mean.iter_mut().for_each(|a| *a /= n);
    let value = mean.iter().map(|a| a * a).sum();
    let grads = docs
        .iter()
        .zip(&mask)
        .map(|(doc, &m)| {
            if m {
                doc.ids()
                    .iter()
                    .map(|&j| 2.0 * mean[j as usize] / (n * idf.get(j)))
                    .collect()
            } else {
                vec![0.0; doc.l0_norm()]
            }
        })
        .collect();
    Ok(RegularizerOutput { value, grads, mask })
}

/// Dispatches on `cfg.mask_enabled`.
pub fn regularizer(
    docs: &[SparseVector],
    idf: &IdfTable,
    cfg: &LossConfig,
) -> Result<RegularizerOutput> {
    if cfg.mask_enabled {
        l0_mask_flops_loss(docs, idf, cfg.threshold_t)
    } else {
        flops_loss(docs, idf)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingOutput {
    pub value: f64,
    /// Gradient w.r.t. the student scores, same shape.
    pub grads: Vec<Vec<f64>>,
}

fn log_softmax(row: &[f64], temperature: f64) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max) / temperature;
    let lse = row
        .iter()
        .map(|x| (x / temperature - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    row.iter().map(|x| x / temperature - lse).collect()
}

/// Mean over rows of `KL(softmax(teacher / T) || softmax(student / T))`.
pub fn ranking_loss_kd(
    student: &[Vec<f64>],
    teacher: &[Vec<f64>],
    temperature: f64,
) -> Result<RankingOutput> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if student.is_empty() {
        return Err(Error::EmptyInput("score matrix"));
    }
    if student.len() != teacher.len() {
        return Err(Error::DimensionMismatch {
            expected: student.len(),
            found: teacher.len(),
        });
    }
    let rows = student.len() as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(student.len());
    for (s, t) in student.iter().zip(teacher) {
        if s.len() != t.len() || s.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: t.len(),
                found: s.len(),
            });
        }
        if s.iter().chain(t).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("ranking scores".into()));
        }
        let ls = log_softmax(s, temperature);
        let lt = log_softmax(t, temperature);
        let mut kl = 0.0;
        let mut g = Vec::with_capacity(s.len());
        for (a, b) in ls.iter().zip(&lt) {
            let pt = b.exp();
            if pt > 0.0 {
                kl += pt * (b - a);
            }
            g.push((a.exp() - pt) / (temperature * rows));
        }
        value += kl;
        grads.push(g);
    }
    Ok(RankingOutput {
        value: value / rows,
        grads,
    })
}

/// `rank + ramp * lambda_d * reg`.
pub fn total_loss(rank_value: f64, reg_value: f64, cfg: &LossConfig, ramp_factor: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&ramp_factor));
    rank_value + ramp_factor * cfg.lambda_d * reg_value
}
