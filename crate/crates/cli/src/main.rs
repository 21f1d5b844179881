use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use l0sparse::evalkit::{
    doc_len, flops_metric, load_beir, ndcg_at_10, write_jsonl, Qrels, RunFile,
};
use l0sparse::sweep::{run_sweep, write_csv, SweepAxis, SweepSpec};
use l0sparse::trainer::{grad_check, init_scorer, train_from};
use l0sparse::{
    encode_document, encode_query, make_synthetic_task, EncoderConfig, IdfTable, InvertedIndex,
    SparseVector, SyntheticTask, ToyScorer, Vocabulary,
};

mod config;
use config::TrainOpts;

const MODEL_FORMAT: &str = "l0sparse-model-v1";

#[derive(Parser)]
#[command(
    name = "l0sparse",
    version,
    about = "Inference-free sparse retrieval with l0-aware training"
)]
struct Cli {
    /// seed for every randomized step
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// log progress to stderr
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic topic-mixture retrieval task
    GenTask {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 400)]
        docs: usize,
        #[arg(long, default_value_t = 200)]
        queries: usize,
        #[arg(long, default_value_t = 8)]
        topics: usize,
        #[arg(long, default_value_t = 400)]
        vocab: usize,
    },
    /// Compute smoothed IDF over a task corpus
    BuildIdf {
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a document encoder
    Train {
        #[arg(long)]
        task: PathBuf,
        /// trained model (JSON)
        #[arg(long)]
        out: PathBuf,
        /// per-step records plus a final summary, as JSON lines
        #[arg(long)]
        log: Option<PathBuf>,
        /// also write the untrained initialization
        #[arg(long)]
        save_init: Option<PathBuf>,
        #[command(flatten)]
        opts: TrainOpts,
    },
    /// Encode the corpus into sparse vectors
    Encode {
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        idf: Option<PathBuf>,
    },
    /// Build an inverted index from encoded documents
    Index {
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        encoded: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrieve the top-k documents for task queries
    Search {
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        idf: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Score a run file; prints metrics as JSON
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        /// with --encoded, also report flops and doc_len
        #[arg(long, requires = "encoded")]
        task: Option<PathBuf>,
        #[arg(long, requires = "task")]
        encoded: Option<PathBuf>,
        #[arg(long)]
        idf: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
    },
    /// Compare analytic gradients with finite differences
    GradCheck {
        #[arg(long)]
        task: PathBuf,
        #[arg(long, default_value_t = 100)]
        probes: usize,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
        #[command(flatten)]
        opts: TrainOpts,
    },
    /// Train and evaluate one run per grid value; writes CSV
    Sweep {
        #[arg(long)]
        task: PathBuf,
        /// lambda_d, threshold_t or fold_count
        #[arg(long)]
        axis: SweepAxis,
        /// comma-separated values
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: TrainOpts,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
    All,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    encoder: EncoderConfig,
    scorer: ToyScorer,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogLine<'a> {
    Step(&'a l0sparse::trainer::StepRecord),
    Summary(&'a TrainSummary),
}

#[derive(Serialize)]
struct TrainSummary {
    steps: usize,
    collapsed: bool,
    final_probe_doc_len: f64,
    final_total: f64,
    config: l0sparse::trainer::TrainConfig,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| {
        format!("cannot create {}", path.display())
    })?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| {
        format!("cannot open {}", path.display())
    })?))
}

fn read_vocab(dir: &Path) -> Result<Vocabulary> {
    let path = dir.join("vocab.txt");
    let tokens = open(&path)?
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .with_context(|| format!("cannot read {}", path.display()))?;
    Ok(Vocabulary::new(
        tokens.into_iter().filter(|t| !t.is_empty()).collect(),
    )?)
}

fn read_qrels(path: &Path) -> Result<Qrels> {
    Ok(Qrels::read_tsv(open(path)?, &path.display().to_string())?)
}

fn load_task(dir: &Path) -> Result<SyntheticTask> {
    let vocab = read_vocab(dir)?;
    let data = load_beir(
        &dir.join("corpus.jsonl"),
        &dir.join("queries.jsonl"),
        &dir.join("qrels-train.tsv"),
    )
    .with_context(|| format!("cannot load task from {}", dir.display()))?;
    for w in &data.warnings {
        log::warn!("{w}");
    }
    let test = read_qrels(&dir.join("qrels-test.tsv"))?;
    Ok(SyntheticTask::from_beir(vocab, &data, &data.qrels, &test)?)
}

fn load_idf(task: &SyntheticTask, path: Option<&Path>) -> Result<IdfTable> {
    let Some(path) = path else {
        return Ok(task.idf()?);
    };
    let (vocab, idf) = IdfTable::read_tsv(open(path)?, &path.display().to_string())?;
    if vocab != task.vocab {
        bail!(
            "IDF file {} does not match the task vocabulary",
            path.display()
        );
    }
    Ok(idf)
}

fn load_model(path: &Path) -> Result<ModelFile> {
    let model: ModelFile = serde_json::from_reader(open(path)?)
        .with_context(|| format!("{} is not a model file", path.display()))?;
    if model.format != MODEL_FORMAT {
        bail!(
            "{}: unsupported model format {:?}",
            path.display(),
            model.format
        );
    }
    model.encoder.validate()?;
    Ok(model)
}

fn save_model(path: &Path, encoder: EncoderConfig, scorer: &ToyScorer) -> Result<()> {
    let model = ModelFile {
        format: MODEL_FORMAT.into(),
        encoder,
        scorer: scorer.clone(),
    };
    let mut out = create(path)?;
    serde_json::to_writer(&mut out, &model)?;
    out.flush()?;
    Ok(())
}

fn read_encoded(path: &Path, dim: usize) -> Result<Vec<(String, SparseVector)>> {
    let mut docs = Vec::new();
    for (n, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (id, vec) = line
            .split_once('\t')
            .with_context(|| format!("{}:{}: expected doc_id<TAB>vector", path.display(), n + 1))?;
        let v = SparseVector::parse_line(dim, vec)
            .with_context(|| format!("{}:{}", path.display(), n + 1))?;
        docs.push((id.to_string(), v));
    }
    Ok(docs)
}

fn split_queries(task: &SyntheticTask, split: Split) -> Vec<usize> {
    match split {
        Split::Train => task.train_queries.clone(),
        Split::Test => task.test_queries.clone(),
        Split::All => (0..task.queries.len()).collect(),
    }
}

fn gen_task(
    out: &Path,
    seed: u64,
    docs: usize,
    queries: usize,
    topics: usize,
    vocab: usize,
) -> Result<()> {
    let task = make_synthetic_task(seed, docs, queries, topics, vocab)?;
    let beir = task.to_beir();
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut f = create(&out.join("corpus.jsonl"))?;
    write_jsonl(&beir.corpus, &mut f)?;
    f.flush()?;
    let mut f = create(&out.join("queries.jsonl"))?;
    write_jsonl(&beir.queries, &mut f)?;
    f.flush()?;
    for (name, qrels) in [
        ("qrels-train.tsv", task.train_qrels()),
        ("qrels-test.tsv", task.test_qrels()),
    ] {
        let mut f = create(&out.join(name))?;
        qrels.write_tsv(&mut f)?;
        f.flush()?;
    }
    let mut f = create(&out.join("vocab.txt"))?;
    for t in task.vocab.tokens() {
        writeln!(f, "{t}")?;
    }
    f.flush()?;
    println!(
        "{}",
        serde_json::json!({
            "docs": task.corpus.len(),
            "queries": task.queries.len(),
            "train_queries": task.train_queries.len(),
            "test_queries": task.test_queries.len(),
            "vocab": task.vocab.len(),
        })
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenTask {
            out,
            docs,
            queries,
            topics,
            vocab,
        } => gen_task(&out, cli.seed.unwrap_or(0), docs, queries, topics, vocab),
        Command::BuildIdf { task, out } => {
            let task = load_task(&task)?;
            let mut f = create(&out)?;
            task.idf()?.write_tsv(&task.vocab, &mut f)?;
            f.flush()?;
            Ok(())
        }
        Command::Train {
            task,
            out,
            log,
            save_init,
            opts,
        } => {
            let cfg = opts.resolve(cli.seed)?;
            let task = load_task(&task)?;
            let scorer = init_scorer(&task, &cfg)?;
            if let Some(path) = &save_init {
                save_model(path, cfg.encoder, &scorer)?;
            }
            let report = train_from(&task, &cfg, scorer).context("training failed")?;
            save_model(&out, cfg.encoder, &report.scorer)?;
            let summary = TrainSummary {
                steps: report.records.len(),
                collapsed: report.collapsed,
                final_probe_doc_len: report.final_probe_doc_len(),
                final_total: report.records.last().map_or(f64::NAN, |r| r.total),
                config: cfg,
            };
            if let Some(path) = &log {
                let mut f = create(path)?;
                for r in &report.records {
                    serde_json::to_writer(&mut f, &LogLine::Step(r))?;
                    writeln!(f)?;
                }
                serde_json::to_writer(&mut f, &LogLine::Summary(&summary))?;
                writeln!(f)?;
                f.flush()?;
            }
            println!("{}", serde_json::to_string(&LogLine::Summary(&summary))?);
            Ok(())
        }
        Command::Encode {
            task,
            model,
            out,
            idf,
        } => {
            let task = load_task(&task)?;
            let model = load_model(&model)?;
            let idf = load_idf(&task, idf.as_deref())?;
            let mut f = create(&out)?;
            for (id, doc) in task.doc_ids.iter().zip(&task.corpus) {
                let enc = encode_document(doc, &model.scorer, &model.encoder, &idf)?;
                writeln!(f, "{id}\t{}", enc.rank.to_line())?;
            }
            f.flush()?;
            Ok(())
        }
        Command::Index { task, encoded, out } => {
            let vocab = read_vocab(&task)?;
            let docs = read_encoded(&encoded, vocab.len())?;
            let index = InvertedIndex::build(vocab.len(), docs)?;
            index.save(&out)?;
            log::info!(
                "indexed {} docs, {} postings",
                index.doc_count(),
                index.total_postings()
            );
            Ok(())
        }
        Command::Search {
            task,
            index,
            out,
            idf,
            split,
            k,
        } => {
            if k == 0 {
                bail!("--k must be positive");
            }
            let task = load_task(&task)?;
            let idf = load_idf(&task, idf.as_deref())?;
            let index = InvertedIndex::load(&index)
                .with_context(|| format!("cannot load index {}", index.display()))?;
            let mut run = RunFile::default();
            for q in split_queries(&task, split) {
                let hits = index.search(&encode_query(&task.queries[q], &idf)?, k)?;
                run.0.insert(
                    task.query_ids[q].clone(),
                    hits.hits
                        .iter()
                        .map(|h| (index.external_id(h.doc).to_string(), h.score))
                        .collect(),
                );
            }
            let mut f = create(&out)?;
            run.write_tsv(&mut f)?;
            f.flush()?;
            Ok(())
        }
        Command::Eval {
            run,
            qrels,
            task,
            encoded,
            idf,
            split,
        } => {
            let run = RunFile::read_tsv(open(&run)?, &run.display().to_string())?;
            let qrels = read_qrels(&qrels)?;
            let mut report = serde_json::Map::new();
            report.insert("ndcg10".into(), ndcg_at_10(&run, &qrels)?.into());
            report.insert("queries".into(), run.0.len().into());
            if let (Some(task), Some(encoded)) = (task, encoded) {
                let task = load_task(&task)?;
                let idf = load_idf(&task, idf.as_deref())?;
                let docs: Vec<SparseVector> = read_encoded(&encoded, task.vocab.len())?
                    .into_iter()
                    .map(|(_, v)| v)
                    .collect();
                let queries = split_queries(&task, split)
                    .into_iter()
                    .map(|q| encode_query(&task.queries[q], &idf))
                    .collect::<l0sparse::Result<Vec<_>>>()?;
                report.insert("flops".into(), flops_metric(&queries, &docs)?.into());
                report.insert("doc_len".into(), doc_len(&docs)?.into());
            }
            println!("{}", serde_json::Value::Object(report));
            Ok(())
        }
        Command::GradCheck {
            task,
            probes,
            tolerance,
            opts,
        } => {
            let cfg = opts.resolve(cli.seed)?;
            let task = load_task(&task)?;
            let report = grad_check(&task, &cfg, probes)?;
            println!("{}", serde_json::to_string(&report)?);
            if report.probes < probes {
                bail!("only {} of {probes} probes were usable", report.probes);
            }
            if report.max_rel_error > tolerance {
                bail!(
                    "gradient check failed: max relative error {:e} exceeds {tolerance:e}",
                    report.max_rel_error
                );
            }
            Ok(())
        }
        Command::Sweep {
            task,
            axis,
            grid,
            out,
            opts,
        } => {
            let fixed = opts.resolve(cli.seed)?;
            let task = load_task(&task)?;
            let spec = SweepSpec { axis, grid, fixed };
            let rows = run_sweep(&task, &spec)?;
            let mut f = create(&out)?;
            write_csv(&rows, &mut f)?;
            f.flush()?;
            let failed = rows.iter().filter(|r| r.outcome.is_none()).count();
            if failed > 0 {
                log::warn!("{failed} of {} sweep points failed", rows.len());
            }
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let level = if cli.verbose {
        log::LevelFilter::Info
    } else {
        log::LevelFilter::Warn
    };
    env_logger::Builder::new().filter_level(level).init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
