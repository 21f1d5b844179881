//! Retrieval metrics (NDCG@10, FLOPS, Doc_Len), IDF estimation and BEIR /
//! TREC file formats.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{IdfTable, SparseVector, TokenizedText};

/// Graded judgments, query id -> doc id -> grade. Absent pairs are grade 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels(pub BTreeMap<String, BTreeMap<String, u32>>);

impl Qrels {
    pub fn insert(&mut self, query: &str, doc: &str, grade: u32) {
        self.0
            .entry(query.to_string())
            .or_default()
            .insert(doc.to_string(), grade);
    }

    pub fn grade(&self, query: &str, doc: &str) -> u32 {
        self.0
            .get(query)
            .and_then(|m| m.get(doc))
            .copied()
            .unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.0.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "query-id\tcorpus-id\tscore")?;
        for (q, docs) in &self.0 {
            for (d, g) in docs {
                writeln!(out, "{q}\t{d}\t{g}")?;
            }
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(input: R, path: &str) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => line?,
            None => {
                return Err(Error::MissingColumns {
                    path: path.into(),
                    message: "empty file, expected header".into(),
                })
            }
        };
        let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
        let find = |name: &str| cols.iter().position(|c| *c == name);
        let (qi, di, si) = match (find("query-id"), find("corpus-id"), find("score")) {
            (Some(q), Some(d), Some(s)) => (q, d, s),
            _ => {
                return Err(Error::MissingColumns {
                    path: path.into(),
                    message: format!("header {header:?} must contain query-id, corpus-id, score"),
                })
            }
        };
        let width = qi.max(di).max(si) + 1;
        let mut qrels = Qrels::default();
        for (n, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let parse_err = |message: String| Error::Parse {
                path: path.into(),
                line: n + 1,
                message,
            };
            if fields.len() < width {
                return Err(parse_err(format!(
                    "expected {width} columns, found {}",
                    fields.len()
                )));
            }
            let score: i64 = fields[si]
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("bad score {:?}", fields[si])))?;
            let grade = u32::try_from(score.max(0)).unwrap_or(u32::MAX);
            qrels.insert(fields[qi].trim(), fields[di].trim(), grade);
        }
        Ok(qrels)
    }
}

/// Ranked results per query, best first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFile(pub BTreeMap<String, Vec<(String, f64)>>);

impl RunFile {
    /// TSV `query_id  doc_id  rank  score`, ranks starting at 1.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        for (q, hits) in &self.0 {
            for (rank, (d, score)) in hits.iter().enumerate() {
                writeln!(out, "{q}\t{d}\t{}\t{score}", rank + 1)?;
            }
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(input: R, path: &str) -> Result<Self> {
        let mut raw: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.into(),
                line: n + 1,
                message,
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(parse_err(format!("expected 4 columns, found {}", f.len())));
            }
            let rank: usize = f[2]
                .parse()
                .map_err(|_| parse_err(format!("bad rank {:?}", f[2])))?;
            let score: f64 = f[3]
                .parse()
                .map_err(|_| parse_err(format!("bad score {:?}", f[3])))?;
            raw.entry(f[0].to_string())
                .or_default()
                .push((rank, f[1].to_string(), score));
        }
        let mut run = RunFile::default();
        for (q, mut hits) in raw {
            hits.sort_by_key(|h| h.0);
            if hits.iter().enumerate().any(|(i, h)| h.0 != i + 1) {
                return Err(Error::Parse {
                    path: path.into(),
                    line: 0,
                    message: format!("ranks for query {q} are not 1..n without gaps"),
                });
            }
            run.0
                .insert(q, hits.into_iter().map(|(_, d, s)| (d, s)).collect());
        }
        Ok(run)
    }
}

fn dcg(grades: impl Iterator<Item = u32>, k: usize) -> f64 {
    grades
        .take(k)
        .enumerate()
        .map(|(i, g)| (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@k for every judged query with at least one relevant document. A
/// query missing from the run scores 0; run queries without judgments are
/// ignored.
pub fn ndcg_per_query(run: &RunFile, qrels: &Qrels, k: usize) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for (q, judged) in &qrels.0 {
        let mut ideal: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
        if ideal.is_empty() {
            continue;
        }
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let idcg = dcg(ideal.into_iter(), k);
        let hits = run.0.get(q).map_or(&[][..], Vec::as_slice);
        let got = dcg(
            hits.iter()
                .map(|(d, _)| judged.get(d).copied().unwrap_or(0)),
            k,
        );
        out.insert(q.clone(), got / idcg);
    }
    out
}

/// Mean NDCG@10 over judged queries with at least one relevant document.
/// Ranking order is the order stored in the run.
pub fn ndcg_at_10(run: &RunFile, qrels: &Qrels) -> Result<f64> {
    let per = ndcg_per_query(run, qrels, 10);
    if per.is_empty() {
        return Err(Error::UndefinedMetric(
            "no judged query has a relevant document".into(),
        ));
    }
    Ok(per.values().sum::<f64>() / per.len() as f64)
}

/// Expected multiplications per query-document pair:
/// `sum_j P(q_j != 0) * P(d_j != 0)`.
pub fn flops_metric(queries: &[SparseVector], docs: &[SparseVector]) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::EmptyInput("query representations"));
    }
    if docs.is_empty() {
        return Err(Error::EmptyInput("document representations"));
    }
    let dim = queries
        .iter()
        .chain(docs)
        .map(SparseVector::dim)
        .max()
        .unwrap_or(0);
    let activation = |set: &[SparseVector]| {
        let mut p = vec![0.0; dim];
        for v in set {
            for &j in v.ids() {
                p[j as usize] += 1.0;
            }
        }
        let n = set.len() as f64;
        p.iter_mut().for_each(|x| *x /= n);
        p
    };
    let (pq, pd) = (activation(queries), activation(docs));
    Ok(pq.iter().zip(&pd).map(|(a, b)| a * b).sum())
}

/// Mean l0 norm.
pub fn doc_len(docs: &[SparseVector]) -> Result<f64> {
    if docs.is_empty() {
        return Err(Error::EmptyInput("document representations"));
    }
    Ok(docs.iter().map(|d| d.l0_norm() as f64).sum::<f64>() / docs.len() as f64)
}

/// Smoothed IDF: `ln((N + 1) / (df + 1)) + 1`.
pub fn build_idf(corpus: &[TokenizedText], vocab_size: usize) -> Result<IdfTable> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("corpus"));
    }
    let mut df = vec![0usize; vocab_size];
    let mut seen = HashSet::new();
    for doc in corpus {
        seen.clear();
        for &t in doc.ids() {
            if t as usize >= vocab_size {
                return Err(Error::DimensionMismatch {
                    expected: vocab_size,
                    found: t as usize + 1,
                });
            }
            if seen.insert(t) {
                df[t as usize] += 1;
            }
        }
    }
    let n = corpus.len() as f64;
    IdfTable::new(
        df.iter()
            .map(|&d| ((n + 1.0) / (d as f64 + 1.0)).ln() + 1.0)
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeirDoc {
    #[serde(rename = "_id")]
    pub id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub title: String,
    pub text: String,
}

impl BeirDoc {
    /// Title and body joined for tokenization.
    pub fn full_text(&self) -> String {
        if self.title.is_empty() {
            self.text.clone()
        } else {
            format!("{} {}", self.title, self.text)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeirQuery {
    #[serde(rename = "_id")]
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BeirDataset {
    pub corpus: Vec<BeirDoc>,
    pub queries: Vec<BeirQuery>,
    pub qrels: Qrels,
    /// Non-fatal problems such as qrels rows naming unknown ids.
    pub warnings: Vec<String>,
}

pub fn read_jsonl<T: serde::de::DeserializeOwned, R: BufRead>(
    input: R,
    path: &str,
) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.into(),
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], mut out: W) -> Result<()> {
    for item in items {
        let line =
            serde_json::to_string(item).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

/// Loads a BEIR-layout dataset: corpus and queries JSONL (`_id`, `text`,
/// extra fields ignored) and a qrels TSV with a `query-id corpus-id score`
/// header.
pub fn load_beir(
    corpus_path: &Path,
    queries_path: &Path,
    qrels_path: &Path,
) -> Result<BeirDataset> {
    let corpus: Vec<BeirDoc> = read_jsonl(open(corpus_path)?, &corpus_path.display().to_string())?;
    let queries: Vec<BeirQuery> =
        read_jsonl(open(queries_path)?, &queries_path.display().to_string())?;
    let qrels = Qrels::read_tsv(open(qrels_path)?, &qrels_path.display().to_string())?;
    let doc_ids: HashSet<&str> = corpus.iter().map(|d| d.id.as_str()).collect();
    let query_ids: HashSet<&str> = queries.iter().map(|q| q.id.as_str()).collect();
    let mut warnings = Vec::new();
    for (q, docs) in &qrels.0 {
        if !query_ids.contains(q.as_str()) {
            warnings.push(format!("qrels query {q:?} not found in queries"));
        }
        for d in docs.keys() {
            if !doc_ids.contains(d.as_str()) {
                warnings.push(format!(
                    "qrels row ({q:?}, {d:?}) references unknown document"
                ));
            }
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(BeirDataset {
        corpus,
        queries,
        qrels,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn run_of(q: &str, docs: &[&str]) -> RunFile {
        let mut run = RunFile::default();
        run.0.insert(
            q.into(),
            docs.iter()
                .enumerate()
                .map(|(i, d)| (d.to_string(), -(i as f64)))
                .collect(),
        );
        run
    }

    #[test]
    fn ndcg_hand_cases() {
        let mut qrels = Qrels::default();
        qrels.insert("q", "d1", 1);
        assert_eq!(
            ndcg_at_10(&run_of("q", &["d1", "d2"]), &qrels).unwrap(),
            1.0
        );
        let v = ndcg_at_10(&run_of("q", &["d2", "d1"]), &qrels).unwrap();
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((v - 0.630930).abs() < 1e-6);
    }

    #[test]
    fn ndcg_skips_queries_without_relevant_docs() {
        let mut qrels = Qrels::default();
        qrels.insert("q", "d1", 1);
        qrels.insert("z", "d1", 0);
        let mut run = run_of("q", &["d1"]);
        run.0.insert("z".into(), vec![("d1".into(), 1.0)]);
        run.0.insert("unjudged".into(), vec![("d1".into(), 1.0)]);
        assert_eq!(ndcg_at_10(&run, &qrels).unwrap(), 1.0);
        let mut unjudged = Qrels::default();
        unjudged.insert("z", "d1", 0);
        assert!(matches!(
            ndcg_at_10(&run, &unjudged),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn query_missing_from_run_scores_zero() {
        let mut qrels = Qrels::default();
        qrels.insert("q", "d1", 1);
        qrels.insert("p", "d2", 2);
        assert_eq!(ndcg_at_10(&run_of("q", &["d1"]), &qrels).unwrap(), 0.5);
        assert_eq!(ndcg_at_10(&RunFile::default(), &qrels).unwrap(), 0.0);
    }

    /// Straight from the definition: all relevant grades, ideal = all
    /// permutations' best is the descending sort; compute both sums
    /// position by position.
    #[allow(clippy::needless_range_loop)]
    fn brute_ndcg(ranked: &[String], grades: &BTreeMap<String, u32>) -> Option<f64> {
        let mut g: Vec<u32> = grades.values().copied().collect();
        g.sort();
        g.reverse();
        let mut idcg = 0.0;
        for i in 0..10.min(g.len()) {
            idcg += (2f64.powf(g[i] as f64) - 1.0) / (1.0 + (i + 1) as f64).log2();
        }
        if idcg == 0.0 {
            return None;
        }
        let mut dcg = 0.0;
        for i in 0..10.min(ranked.len()) {
            let rel = *grades.get(&ranked[i]).unwrap_or(&0) as f64;
            dcg += (2f64.powf(rel) - 1.0) / (1.0 + (i + 1) as f64).log2();
        }
        Some(dcg / idcg)
    }

    #[test]
    fn ndcg_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let mut qrels = Qrels::default();
            let mut run = RunFile::default();
            let mut expected = Vec::new();
            for q in 0..5 {
                let qid = format!("q{q}");
                for d in 0..30 {
                    if rng.gen_bool(0.4) {
                        qrels.insert(&qid, &format!("d{d}"), rng.gen_range(0..=2));
                    }
                }
                let mut docs: Vec<String> = (0..30).map(|d| format!("d{d}")).collect();
                for i in (1..docs.len()).rev() {
                    docs.swap(i, rng.gen_range(0..=i));
                }
                docs.truncate(rng.gen_range(0..15));
                let empty = BTreeMap::new();
                if let Some(v) = brute_ndcg(&docs, qrels.0.get(&qid).unwrap_or(&empty)) {
                    expected.push(v);
                }
                run.0
                    .insert(qid, docs.into_iter().map(|d| (d, 0.0)).collect());
            }
            match ndcg_at_10(&run, &qrels) {
                Ok(v) => {
                    let oracle = expected.iter().sum::<f64>() / expected.len() as f64;
                    assert!((v - oracle).abs() <= 1e-12);
                    assert!((0.0..=1.0).contains(&v));
                }
                Err(_) => assert!(expected.is_empty()),
            }
        }
    }

    fn sv(dim: usize, ids: &[u32]) -> SparseVector {
        SparseVector::from_pairs(dim, ids.iter().map(|&j| (j, 1.0))).unwrap()
    }

    #[test]
    fn flops_metric_hand_case() {
        let queries = [sv(2, &[0]), sv(2, &[0, 1])];
        let docs = [sv(2, &[0]), sv(2, &[1])];
        assert_eq!(flops_metric(&queries, &docs).unwrap(), 0.75);
        let empty = [SparseVector::empty(2), SparseVector::empty(2)];
        assert_eq!(flops_metric(&queries, &empty).unwrap(), 0.0);
        assert!(flops_metric(&[], &docs).is_err());
        assert!(flops_metric(&queries, &[]).is_err());
    }

    #[test]
    fn flops_metric_pairwise_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dim = 40;
        let random_set = |rng: &mut ChaCha8Rng, n: usize, p: f64| -> Vec<SparseVector> {
            (0..n)
                .map(|_| {
                    let ids: Vec<u32> = (0..dim as u32).filter(|_| rng.gen_bool(p)).collect();
                    sv(dim, &ids)
                })
                .collect()
        };
        for _ in 0..20 {
            let qs = random_set(&mut rng, 7, 0.1);
            let ds = random_set(&mut rng, 13, 0.3);
            let mut pairs = 0usize;
            for q in &qs {
                for d in &ds {
                    pairs += q.ids().iter().filter(|j| d.ids().contains(j)).count();
                }
            }
            let oracle = pairs as f64 / (qs.len() * ds.len()) as f64;
            assert!((flops_metric(&qs, &ds).unwrap() - oracle).abs() <= 1e-12);
        }
    }

    #[test]
    fn doc_len_cases() {
        let docs = [sv(10, &[0, 1, 2]), sv(10, &[1, 2, 3, 4, 5])];
        assert_eq!(doc_len(&docs).unwrap(), 4.0);
        assert_eq!(doc_len(&[SparseVector::empty(3)]).unwrap(), 0.0);
        assert!(doc_len(&[]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let docs: Vec<_> = (0..100)
            .map(|_| {
                let ids: Vec<u32> = (0..50).filter(|_| rng.gen_bool(0.2)).collect();
                sv(50, &ids)
            })
            .collect();
        let recount: usize = docs
            .iter()
            .map(|d| d.to_dense().iter().filter(|&&w| w > 0.0).count())
            .sum();
        assert!((doc_len(&docs).unwrap() - recount as f64 / 100.0).abs() < 1e-12);
        let idf = IdfTable::new((0..50).map(|j| 0.5 + j as f64).collect()).unwrap();
        let scaled: Vec<_> = docs.iter().map(|d| d.scale_by_idf(&idf).unwrap()).collect();
        assert_eq!(doc_len(&scaled).unwrap(), doc_len(&docs).unwrap());
    }

    #[test]
    fn idf_formula_cases() {
        let t = |ids: &[u32]| TokenizedText::new(ids.to_vec());
        let corpus = [t(&[0, 1, 1]), t(&[0]), t(&[0, 2])];
        let idf = build_idf(&corpus, 4).unwrap();
        assert_eq!(idf.get(0), 1.0);
        assert!((idf.get(1) - (2f64.ln() + 1.0)).abs() < 1e-15);
        assert!((idf.get(1) - 1.693147).abs() < 1e-6);
        assert!((idf.get(3) - (4f64.ln() + 1.0)).abs() < 1e-15);
        assert!(build_idf(&[], 4).is_err());
    }

    #[test]
    fn qrels_parsing() {
        let data = "query-id\tcorpus-id\tscore\nq1\td1\t1\nq1\td2\t2\n";
        let q = Qrels::read_tsv(data.as_bytes(), "mem").unwrap();
        assert_eq!(q.len(), 2);
        assert_eq!(q.grade("q1", "d2"), 2);
        assert_eq!(q.grade("q1", "zz"), 0);
        assert!(matches!(
            Qrels::read_tsv("query-id\tscore\nq1\t1\n".as_bytes(), "mem"),
            Err(Error::MissingColumns { .. })
        ));
        assert!(matches!(
            Qrels::read_tsv("query-id\tcorpus-id\tscore\nq1\td1\n".as_bytes(), "mem"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn run_file_round_trip_and_validation() {
        let run = run_of("q", &["a", "b", "c"]);
        let mut buf = Vec::new();
        run.write_tsv(&mut buf).unwrap();
        assert_eq!(RunFile::read_tsv(buf.as_slice(), "mem").unwrap(), run);
        assert!(RunFile::read_tsv("q\ta\t2\t1.0\n".as_bytes(), "mem").is_err());
    }

    #[test]
    fn malformed_jsonl_reports_line() {
        let data = "{\"_id\":\"a\",\"text\":\"x\"}\n{oops\n";
        let r: Result<Vec<BeirDoc>> = read_jsonl(data.as_bytes(), "c.jsonl");
        assert!(matches!(r, Err(Error::Parse { line: 2, .. })));
    }
}
