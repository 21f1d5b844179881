//! SGD training loop, held-out evaluation and end-to-end gradient checks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{
    encode_document, encode_query, DocumentEncoding, EncoderConfig, TokenScorer, ToyScorer,
};
use crate::error::{Error, Result};
use crate::evalkit::{doc_len, flops_metric, ndcg_at_10, RunFile};
use crate::index::InvertedIndex;
use crate::losses::{ranking_loss_kd, regularizer, total_loss, LossConfig};
use crate::task::{teacher_scores, SyntheticTask};
use crate::types::{IdfTable, SparseVector};

pub const COLLAPSE_DOC_LEN: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub seed: u64,
    pub embedding_dim: usize,
    /// Spread of the initial output projection, see [`ToyScorer::init_scaled`].
    pub init_scale: f64,
    /// Collapse probe cadence in steps.
    pub probe_every: usize,
    pub probe_docs: usize,
    pub loss: LossConfig,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 600,
            batch_size: 32,
            learning_rate: 0.05,
            warmup_steps: 60,
            seed: 0,
            embedding_dim: 16,
            init_scale: 1.5,
            probe_every: 50,
            probe_docs: 64,
            loss: LossConfig::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidParameter("steps must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidParameter(format!(
                "batch_size must be >= 2 for in-batch negatives, got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.embedding_dim == 0 || self.probe_every == 0 || self.probe_docs == 0 {
            return Err(Error::InvalidParameter(
                "embedding_dim, probe_every and probe_docs must be positive".into(),
            ));
        }
        self.loss.validate()?;
        self.encoder.validate()
    }

    /// Quadratic warmup of the regularizer weight.
    pub fn ramp(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            return 1.0;
        }
        let r = ((step + 1) as f64 / self.warmup_steps as f64).min(1.0);
        r * r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub total: f64,
    pub rank: f64,
    pub reg: f64,
    pub doc_len: f64,
    pub masked_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub step: usize,
    pub doc_len: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<StepRecord>,
    pub probes: Vec<ProbeRecord>,
    pub collapsed: bool,
    pub scorer: ToyScorer,
}

impl TrainReport {
    pub fn final_probe_doc_len(&self) -> f64 {
        self.probes.last().map_or(f64::NAN, |p| p.doc_len)
    }
}

/// One training batch: query `i` has its positive at candidate `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub queries: Vec<usize>,
    pub docs: Vec<usize>,
}

pub fn sample_batch<R: Rng>(task: &SyntheticTask, size: usize, rng: &mut R) -> Result<Batch> {
    if task.train_queries.is_empty() {
        return Err(Error::EmptyInput("training queries"));
    }
    let mut queries = Vec::with_capacity(size);
    let mut docs = Vec::with_capacity(size);
    for _ in 0..size {
        let q = *task.train_queries.choose(rng).expect("nonempty");
        let d = *task.relevance[q]
            .choose(rng)
            .ok_or(Error::EmptyInput("relevant documents"))?;
        queries.push(q);
        docs.push(d);
    }
    Ok(Batch { queries, docs })
}

#[derive(Debug, Clone)]
pub struct BatchObjective {
    pub total: f64,
    pub rank: f64,
    pub reg: f64,
    pub doc_len: f64,
    pub masked_fraction: f64,
    pub encodings: Vec<DocumentEncoding>,
    pub mask: Vec<bool>,
}

/// Loss of one batch; adds its parameter gradient into `grad` when given.
#[allow(clippy::too_many_arguments)]
pub fn batch_objective<S: TokenScorer + ?Sized>(
    task: &SyntheticTask,
    idf: &IdfTable,
    scorer: &S,
    cfg: &TrainConfig,
    batch: &Batch,
    ramp: f64,
    grad: Option<&mut [f64]>,
) -> Result<BatchObjective> {
    let encodings = batch
        .docs
        .iter()
        .map(|&d| encode_document(&task.corpus[d], scorer, &cfg.encoder, idf))
        .collect::<Result<Vec<_>>>()?;
    let qvecs = batch
        .queries
        .iter()
        .map(|&q| encode_query(&task.queries[q], idf))
        .collect::<Result<Vec<_>>>()?;
    let candidates: Vec<_> = batch.docs.iter().map(|&d| &task.corpus[d]).collect();

    let mut student = Vec::with_capacity(qvecs.len());
    let mut teacher = Vec::with_capacity(qvecs.len());
    for (qv, &q) in qvecs.iter().zip(&batch.queries) {
        student.push(
            encodings
                .iter()
                .map(|e| qv.dot(&e.rank))
                .collect::<Result<Vec<_>>>()?,
        );
        teacher.push(teacher_scores(idf, &task.queries[q], &candidates)?);
    }
    let ranking = ranking_loss_kd(&student, &teacher, cfg.loss.temperature)?;

    let reg_reprs: Vec<SparseVector> = encodings.iter().map(|e| e.reg.clone()).collect();
    let reg = regularizer(&reg_reprs, idf, &cfg.loss)?;
    let total = total_loss(ranking.value, reg.value, &cfg.loss, ramp);

    if let Some(grad) = grad {
        let reg_scale = ramp * cfg.loss.lambda_d;
        for (c, enc) in encodings.iter().enumerate() {
            let up_rank: Vec<f64> = enc
                .rank
                .ids()
                .iter()
                .map(|&j| {
                    qvecs
                        .iter()
                        .zip(&ranking.grads)
                        .map(|(qv, g)| g[c] * qv.get(j))
                        .sum()
                })
                .collect();
            let up_reg: Vec<f64> = reg.grads[c].iter().map(|g| reg_scale * g).collect();
            enc.backward(scorer, &cfg.encoder, idf, &up_rank, &up_reg, grad)?;
        }
    }

    Ok(BatchObjective {
        total,
        rank: ranking.value,
        reg: reg.value,
        doc_len: doc_len(&reg_reprs)?,
        masked_fraction: reg.masked_fraction(),
        encodings,
        mask: reg.mask,
    })
}

pub fn init_scorer(task: &SyntheticTask, cfg: &TrainConfig) -> Result<ToyScorer> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    ToyScorer::init_scaled(
        task.vocab.len(),
        cfg.embedding_dim,
        cfg.init_scale,
        &mut rng,
    )
}

/// Mean l0 over the first `n` corpus documents.
pub fn probe_doc_len<S: TokenScorer + ?Sized>(
    task: &SyntheticTask,
    scorer: &S,
    cfg: &EncoderConfig,
    idf: &IdfTable,
    n: usize,
) -> Result<f64> {
    let reprs = task
        .corpus
        .iter()
        .take(n)
        .map(|d| encode_document(d, scorer, cfg, idf).map(|e| e.rank))
        .collect::<Result<Vec<_>>>()?;
    doc_len(&reprs)
}

pub fn train(task: &SyntheticTask, cfg: &TrainConfig) -> Result<TrainReport> {
    let scorer = init_scorer(task, cfg)?;
    train_from(task, cfg, scorer)
}

pub fn train_from(
    task: &SyntheticTask,
    cfg: &TrainConfig,
    mut scorer: ToyScorer,
) -> Result<TrainReport> {
    cfg.validate()?;
    let idf = task.idf()?;
    // batches use their own stream so initialization and sampling stay independent
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut grad = vec![0.0; scorer.params().len()];
    let mut records = Vec::with_capacity(cfg.steps);
    let mut probes = Vec::new();
    let mut collapsed = false;
    for step in 0..cfg.steps {
        let batch = sample_batch(task, cfg.batch_size, &mut rng)?;
        let ramp = cfg.ramp(step);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let obj = match batch_objective(task, &idf, &scorer, cfg, &batch, ramp, Some(&mut grad)) {
            Err(Error::NonFinite(_)) => {
                return Err(Error::Diverged {
                    step,
                    value: f64::NAN,
                })
            }
            other => other?,
        };
        if !obj.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                step,
                value: obj.total,
            });
        }
        for (p, g) in scorer.params_mut().iter_mut().zip(&grad) {
            *p -= cfg.learning_rate * g;
        }
        records.push(StepRecord {
            step,
            total: obj.total,
            rank: obj.rank,
            reg: obj.reg,
            doc_len: obj.doc_len,
            masked_fraction: obj.masked_fraction,
        });
        if (step + 1) % cfg.probe_every == 0 || step + 1 == cfg.steps {
            let len = probe_doc_len(task, &scorer, &cfg.encoder, &idf, cfg.probe_docs)?;
            log::debug!("step {step}: probe doc_len {len:.2}, loss {:.4}", obj.total);
            collapsed |= len < COLLAPSE_DOC_LEN;
            probes.push(ProbeRecord { step, doc_len: len });
        }
    }
    Ok(TrainReport {
        records,
        probes,
        collapsed,
        scorer,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub ndcg10: f64,
    pub flops: f64,
    pub doc_len: f64,
    pub queries: usize,
}

/// Encodes the corpus, builds the index and retrieves the top 10 for every
/// held-out query.
pub fn evaluate<S: TokenScorer + ?Sized>(
    task: &SyntheticTask,
    scorer: &S,
    cfg: &EncoderConfig,
    idf: &IdfTable,
) -> Result<(EvalSummary, RunFile)> {
    let docs = task
        .corpus
        .iter()
        .map(|d| encode_document(d, scorer, cfg, idf).map(|e| e.rank))
        .collect::<Result<Vec<_>>>()?;
    let index = InvertedIndex::build(
        task.vocab.len(),
        task.doc_ids
            .iter()
            .cloned()
            .zip(docs.iter().cloned())
            .collect(),
    )?;
    let mut run = RunFile::default();
    let mut qvecs = Vec::with_capacity(task.test_queries.len());
    for &q in &task.test_queries {
        let qv = encode_query(&task.queries[q], idf)?;
        let res = index.search(&qv, 10)?;
        run.0.insert(
            task.query_ids[q].clone(),
            res.hits
                .iter()
                .map(|h| (index.external_id(h.doc).to_string(), h.score))
                .collect(),
        );
        qvecs.push(qv);
    }
    let summary = EvalSummary {
        ndcg10: ndcg_at_10(&run, &task.test_qrels())?,
        flops: flops_metric(&qvecs, &docs)?,
        doc_len: doc_len(&docs)?,
        queries: qvecs.len(),
    };
    Ok((summary, run))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub probes: usize,
    /// Probes discarded because the perturbation crossed a kink (support,
    /// argmax or mask change).
    pub skipped: usize,
    pub masked_docs: usize,
    pub batch_docs: usize,
}

/// Denominator floor of the relative error, so gradients near zero are
/// compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;
pub const GRAD_CHECK_STEP: f64 = 1e-5;

fn kink_signature(obj: &BatchObjective) -> Vec<u64> {
    let mut sig = Vec::new();
    for e in &obj.encodings {
        sig.push(u64::MAX);
        sig.extend(e.rank.ids().iter().map(|&j| j as u64));
        sig.extend(e.argmax.iter().map(|&p| p as u64 | 1 << 40));
    }
    sig.extend(obj.mask.iter().map(|&m| m as u64));
    sig
}

/// Compares the analytic end-to-end gradient with central finite
/// differences on `n_probes` parameters drawn from those the batch touches.
pub fn grad_check(
    task: &SyntheticTask,
    cfg: &TrainConfig,
    n_probes: usize,
) -> Result<GradCheckReport> {
    let scorer = init_scorer(task, cfg)?;
    grad_check_with(task, cfg, scorer, n_probes)
}

pub fn grad_check_with(
    task: &SyntheticTask,
    cfg: &TrainConfig,
    mut scorer: ToyScorer,
    n_probes: usize,
) -> Result<GradCheckReport> {
    cfg.validate()?;
    let idf = task.idf()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let batch = sample_batch(task, cfg.batch_size, &mut rng)?;
    let mut grad = vec![0.0; scorer.params().len()];
    let base = batch_objective(task, &idf, &scorer, cfg, &batch, 1.0, Some(&mut grad))?;
    let base_sig = kink_signature(&base);

    let mut candidates: Vec<usize> = (0..grad.len()).filter(|&p| grad[p] != 0.0).collect();
    candidates.shuffle(&mut rng);
    let mut probes = 0;
    let mut skipped = 0;
    let mut max_rel: f64 = 0.0;
    let h = GRAD_CHECK_STEP;
    for p in candidates {
        if probes == n_probes {
            break;
        }
        let orig = scorer.params()[p];
        scorer.params_mut()[p] = orig + h;
        let plus = batch_objective(task, &idf, &scorer, cfg, &batch, 1.0, None)?;
        scorer.params_mut()[p] = orig - h;
        let minus = batch_objective(task, &idf, &scorer, cfg, &batch, 1.0, None)?;
        scorer.params_mut()[p] = orig;
        if kink_signature(&plus) != base_sig || kink_signature(&minus) != base_sig {
            skipped += 1;
            continue;
        }
        let fd = (plus.total - minus.total) / (2.0 * h);
        let rel = (grad[p] - fd).abs() / grad[p].abs().max(fd.abs()).max(GRAD_CHECK_FLOOR);
        max_rel = max_rel.max(rel);
        probes += 1;
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        probes,
        skipped,
        masked_docs: base.mask.iter().filter(|m| !**m).count(),
        batch_docs: batch.docs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::make_synthetic_task;

    fn small_task() -> SyntheticTask {
        make_synthetic_task(3, 60, 30, 3, 90).unwrap()
    }

    #[test]
    fn ramp_is_quadratic() {
        let cfg = TrainConfig {
            warmup_steps: 10,
            ..TrainConfig::default()
        };
        assert!((cfg.ramp(4) - 0.25).abs() < 1e-15);
        assert_eq!(cfg.ramp(9), 1.0);
        assert_eq!(cfg.ramp(100), 1.0);
        let cfg = TrainConfig {
            warmup_steps: 0,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.ramp(0), 1.0);
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let mut bad = TrainConfig::default();
        bad.encoder.k_rank = 0;
        assert!(bad.validate().is_err());
        let mut bad = TrainConfig::default();
        bad.loss.lambda_d = -1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let task = small_task();
        let cfg = TrainConfig {
            steps: 20,
            batch_size: 4,
            embedding_dim: 4,
            probe_every: 5,
            loss: LossConfig {
                lambda_d: 0.1,
                ..LossConfig::default()
            },
            ..TrainConfig::default()
        };
        let a = train(&task, &cfg).unwrap();
        let b = train(&task, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 20);
        assert_eq!(a.probes.len(), 4);
    }

    #[test]
    fn divergence_reports_the_step() {
        let task = small_task();
        let cfg = TrainConfig {
            steps: 50,
            batch_size: 4,
            embedding_dim: 4,
            learning_rate: 1e300,
            ..TrainConfig::default()
        };
        match train(&task, &cfg) {
            Err(Error::Diverged { step, .. }) => assert!(step < 50),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn masked_fraction_grows_with_threshold() {
        let task = small_task();
        let idf = task.idf().unwrap();
        let cfg = TrainConfig {
            batch_size: 8,
            embedding_dim: 4,
            ..TrainConfig::default()
        };
        let scorer = init_scorer(&task, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = sample_batch(&task, 8, &mut rng).unwrap();
        let mut prev = -1.0;
        for t in 0..40 {
            let mut c = cfg.clone();
            c.loss = LossConfig {
                lambda_d: 1.0,
                threshold_t: t,
                mask_enabled: true,
                temperature: 1.0,
            };
            let obj = batch_objective(&task, &idf, &scorer, &c, &batch, 1.0, None).unwrap();
            assert!(obj.masked_fraction >= prev);
            prev = obj.masked_fraction;
        }
    }

    #[test]
    fn zero_lambda_has_no_regularizer_gradient() {
        let task = small_task();
        let idf = task.idf().unwrap();
        let mut cfg = TrainConfig {
            batch_size: 6,
            embedding_dim: 4,
            ..TrainConfig::default()
        };
        let scorer = init_scorer(&task, &cfg).unwrap();
        let batch = sample_batch(&task, 6, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut g0 = vec![0.0; scorer.params().len()];
        cfg.loss.lambda_d = 0.0;
        batch_objective(&task, &idf, &scorer, &cfg, &batch, 1.0, Some(&mut g0)).unwrap();
        let mut g1 = vec![0.0; scorer.params().len()];
        cfg.loss.lambda_d = 1.0;
        batch_objective(&task, &idf, &scorer, &cfg, &batch, 0.0, Some(&mut g1)).unwrap();
        assert_eq!(g0, g1);
    }

    #[test]
    fn grad_check_small() {
        let task = small_task();
        let cfg = TrainConfig {
            batch_size: 5,
            embedding_dim: 4,
            encoder: EncoderConfig {
                k_rank: 1,
                k_reg: 2,
                max_input_length: 64,
            },
            loss: LossConfig {
                lambda_d: 0.5,
                ..LossConfig::default()
            },
            ..TrainConfig::default()
        };
        let r = grad_check(&task, &cfg, 30).unwrap();
        assert!(r.probes >= 20, "{r:?}");
        assert!(r.max_rel_error <= 1e-5, "{r:?}");
    }
}
