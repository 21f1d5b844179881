//! Retrieval tasks: a tokenized corpus, queries with relevance lists and a
//! train / held-out query split. [`make_synthetic_task`] draws one from a
//! topic-mixture model.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::evalkit::{build_idf, BeirDataset, BeirDoc, BeirQuery, Qrels};
use crate::types::{IdfTable, TokenizedText, Vocabulary};

pub const DOC_MIN_TOKENS: usize = 20;
pub const DOC_MAX_TOKENS: usize = 60;
pub const QUERY_MIN_TOKENS: usize = 3;
pub const QUERY_MAX_TOKENS: usize = 6;
/// Share of the vocabulary partitioned into topics; the rest is background.
pub const TOPIC_VOCAB_SHARE: f64 = 0.6;
/// Probability that a document token is drawn from the document's topic.
pub const IN_TOPIC_PROB: f64 = 0.75;
pub const HELDOUT_SHARE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub vocab: Vocabulary,
    pub doc_ids: Vec<String>,
    pub corpus: Vec<TokenizedText>,
    pub query_ids: Vec<String>,
    pub queries: Vec<TokenizedText>,
    /// Relevant document indices per query, ascending.
    pub relevance: Vec<Vec<usize>>,
    pub train_queries: Vec<usize>,
    pub test_queries: Vec<usize>,
    /// Token ids of each topic; empty for tasks loaded from files.
    pub topics: Vec<Vec<u32>>,
    pub doc_topics: Vec<usize>,
    pub query_topics: Vec<usize>,
}

pub fn make_synthetic_task(
    seed: u64,
    n_docs: usize,
    n_queries: usize,
    n_topics: usize,
    vocab_size: usize,
) -> Result<SyntheticTask> {
    if n_topics < 2 {
        return Err(Error::InvalidParameter(format!(
            "n_topics must be >= 2, got {n_topics}"
        )));
    }
    if vocab_size < 10 * n_topics {
        return Err(Error::InvalidParameter(format!(
            "vocab_size must be >= 10 * n_topics = {}, got {vocab_size}",
            10 * n_topics
        )));
    }
    if n_docs < n_topics {
        return Err(Error::InvalidParameter(format!(
            "n_docs ({n_docs}) must be >= n_topics ({n_topics})"
        )));
    }
    if n_queries < 2 {
        return Err(Error::InvalidParameter("n_queries must be >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = (vocab_size - 1).to_string().len();
    let vocab = Vocabulary::new((0..vocab_size).map(|j| format!("w{j:0width$}")).collect())?;

    let topic_size =
        ((vocab_size as f64 * TOPIC_VOCAB_SHARE) as usize / n_topics).max(QUERY_MAX_TOKENS);
    let topics: Vec<Vec<u32>> = (0..n_topics)
        .map(|t| ((t * topic_size) as u32..((t + 1) * topic_size) as u32).collect())
        .collect();
    let background: Vec<u32> = ((n_topics * topic_size) as u32..vocab_size as u32).collect();

    let mut corpus = Vec::with_capacity(n_docs);
    let mut doc_topics = Vec::with_capacity(n_docs);
    for i in 0..n_docs {
        let topic = i % n_topics;
        let len = rng.gen_range(DOC_MIN_TOKENS..=DOC_MAX_TOKENS);
        let ids = (0..len)
            .map(|_| {
                if background.is_empty() || rng.gen_bool(IN_TOPIC_PROB) {
                    *topics[topic].choose(&mut rng).expect("nonempty topic")
                } else {
                    *background.choose(&mut rng).expect("nonempty background")
                }
            })
            .collect();
        corpus.push(TokenizedText::new(ids));
        doc_topics.push(topic);
    }

    let mut by_topic: Vec<Vec<usize>> = vec![Vec::new(); n_topics];
    for (i, &t) in doc_topics.iter().enumerate() {
        by_topic[t].push(i);
    }

    let mut queries = Vec::with_capacity(n_queries);
    let mut query_topics = Vec::with_capacity(n_queries);
    let mut relevance = Vec::with_capacity(n_queries);
    for _ in 0..n_queries {
        let topic = rng.gen_range(0..n_topics);
        let len = rng.gen_range(QUERY_MIN_TOKENS..=QUERY_MAX_TOKENS);
        let ids: Vec<u32> = topics[topic]
            .choose_multiple(&mut rng, len)
            .copied()
            .collect();
        queries.push(TokenizedText::new(ids));
        query_topics.push(topic);
        relevance.push(by_topic[topic].clone());
    }

    let n_test = ((n_queries as f64 * HELDOUT_SHARE).round() as usize).clamp(1, n_queries - 1);
    let n_train = n_queries - n_test;
    Ok(SyntheticTask {
        vocab,
        doc_ids: (0..n_docs).map(|i| format!("d{i}")).collect(),
        corpus,
        query_ids: (0..n_queries).map(|i| format!("q{i}")).collect(),
        queries,
        relevance,
        train_queries: (0..n_train).collect(),
        test_queries: (n_train..n_queries).collect(),
        topics,
        doc_topics,
        query_topics,
    })
}

impl SyntheticTask {
    pub fn idf(&self) -> Result<IdfTable> {
        build_idf(&self.corpus, self.vocab.len())
    }

    fn qrels_for(&self, queries: &[usize]) -> Qrels {
        let mut qrels = Qrels::default();
        for &q in queries {
            for &d in &self.relevance[q] {
                qrels.insert(&self.query_ids[q], &self.doc_ids[d], 1);
            }
        }
        qrels
    }

    pub fn train_qrels(&self) -> Qrels {
        self.qrels_for(&self.train_queries)
    }

    pub fn test_qrels(&self) -> Qrels {
        self.qrels_for(&self.test_queries)
    }

    /// BEIR view with every query and judgment.
    pub fn to_beir(&self) -> BeirDataset {
        let all: Vec<usize> = (0..self.queries.len()).collect();
        BeirDataset {
            corpus: self
                .doc_ids
                .iter()
                .zip(&self.corpus)
                .map(|(id, t)| BeirDoc {
                    id: id.clone(),
                    title: String::new(),
                    text: self.vocab.detokenize(t),
                })
                .collect(),
            queries: self
                .query_ids
                .iter()
                .zip(&self.queries)
                .map(|(id, t)| BeirQuery {
                    id: id.clone(),
                    text: self.vocab.detokenize(t),
                })
                .collect(),
            qrels: self.qrels_for(&all),
            warnings: Vec::new(),
        }
    }

    /// Rebuilds a task from BEIR data. Queries judged in `train` form the
    /// training split, queries judged in `test` the held-out split; grades
    /// `> 0` count as relevant.
    pub fn from_beir(
        vocab: Vocabulary,
        data: &BeirDataset,
        train: &Qrels,
        test: &Qrels,
    ) -> Result<Self> {
        let doc_index: HashMap<&str, usize> = data
            .corpus
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.as_str(), i))
            .collect();
        let corpus: Vec<TokenizedText> = data
            .corpus
            .iter()
            .map(|d| vocab.tokenize(&d.full_text()))
            .collect();
        let queries: Vec<TokenizedText> = data
            .queries
            .iter()
            .map(|q| vocab.tokenize(&q.text))
            .collect();
        let mut relevance = vec![Vec::new(); queries.len()];
        let mut train_queries = Vec::new();
        let mut test_queries = Vec::new();
        for (qi, q) in data.queries.iter().enumerate() {
            for (qrels, split) in [(train, &mut train_queries), (test, &mut test_queries)] {
                if let Some(judged) = qrels.0.get(&q.id) {
                    let mut any = false;
                    for (d, &g) in judged {
                        if g > 0 {
                            if let Some(&di) = doc_index.get(d.as_str()) {
                                relevance[qi].push(di);
                                any = true;
                            }
                        }
                    }
                    if any {
                        split.push(qi);
                    }
                }
            }
            relevance[qi].sort_unstable();
            relevance[qi].dedup();
        }
        Ok(Self {
            vocab,
            doc_ids: data.corpus.iter().map(|d| d.id.clone()).collect(),
            corpus,
            query_ids: data.queries.iter().map(|q| q.id.clone()).collect(),
            queries,
            relevance,
            train_queries,
            test_queries,
            topics: Vec::new(),
            doc_topics: Vec::new(),
            query_topics: Vec::new(),
        })
    }
}

/// IDF-weighted lexical overlap `sum_{j in q and d} IDF_j` over distinct
/// shared tokens.
pub fn teacher_scores(
    idf: &IdfTable,
    query: &TokenizedText,
    candidates: &[&TokenizedText],
) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("teacher candidates"));
    }
    let mut q: Vec<u32> = query.ids().to_vec();
    q.sort_unstable();
    q.dedup();
    Ok(candidates
        .iter()
        .map(|doc| {
            let mut d: Vec<u32> = doc.ids().to_vec();
            d.sort_unstable();
            d.dedup();
            q.iter()
                .filter(|j| d.binary_search(j).is_ok())
                .map(|&j| idf.get(j))
                .sum()
        })
        .collect())
}
