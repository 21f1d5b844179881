//! Inference-free learned sparse retrieval with l0-aware sparsification.
//!
//! Documents are encoded as `IDF_j * g_k(max_i logit[i, j])` by a trainable
//! token scorer; queries are IDF-weighted bags of words. Training combines a
//! KL distillation ranking loss with a FLOPS regularizer that can skip
//! documents already at or below a target l0 length.

pub mod activation;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod index;
pub mod losses;
pub mod sweep;
pub mod task;
pub mod trainer;
pub mod types;

pub use activation::{activate, activate_grad, ActivationSpec};
pub use encoder::{
    encode_document, encode_document_with_grad, encode_query, CountingScorer, DocumentEncoding,
    EncoderConfig, TokenLogits, TokenScorer, ToyScorer,
};
pub use error::{Error, Result};
pub use evalkit::{build_idf, doc_len, flops_metric, load_beir, ndcg_at_10, Qrels, RunFile};
pub use index::{InvertedIndex, SearchResult};
pub use losses::{flops_loss, l0_mask_flops_loss, ranking_loss_kd, total_loss, LossConfig};
pub use sweep::{run_sweep, SweepAxis, SweepSpec};
pub use task::{make_synthetic_task, teacher_scores, SyntheticTask};
pub use trainer::{evaluate, grad_check, train, TrainConfig, TrainReport};
pub use types::{IdfTable, SparseVector, TokenizedText, Vocabulary};
