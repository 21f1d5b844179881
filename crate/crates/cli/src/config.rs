//! Training options: flags override the `--config` file, which overrides
//! built-in defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use l0sparse::trainer::TrainConfig;

#[derive(Debug, Clone, Default, Args)]
pub struct TrainOpts {
    /// key=value file with any of the options below (flag names without `--`)
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// defaults to steps / 10
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub init_scale: Option<f64>,
    #[arg(long)]
    pub probe_every: Option<usize>,
    #[arg(long)]
    pub probe_docs: Option<usize>,
    #[arg(long)]
    pub lambda_d: Option<f64>,
    #[arg(long)]
    pub threshold_t: Option<usize>,
    /// enable the l0 mask on the regularizer
    #[arg(long)]
    pub mask: Option<bool>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// sets both k_rank and k_reg
    #[arg(long)]
    pub k: Option<u32>,
    #[arg(long)]
    pub k_rank: Option<u32>,
    #[arg(long)]
    pub k_reg: Option<u32>,
    #[arg(long)]
    pub max_input_length: Option<usize>,
}

fn parse_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!(
                "{}:{}: expected key=value, got {line:?}",
                path.display(),
                n + 1
            );
        };
        out.insert(k.trim().replace('_', "-"), v.trim().to_string());
    }
    Ok(out)
}

fn value<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| anyhow::anyhow!("config key {key}: cannot parse {raw:?}"))
}

impl TrainOpts {
    /// Merges defaults, the config file and flags, then validates.
    pub fn resolve(&self, seed: Option<u64>) -> Result<TrainConfig> {
        let mut merged = TrainOpts::default();
        let mut file_seed = None;
        if let Some(path) = &self.config {
            for (key, raw) in parse_file(path)? {
                match key.as_str() {
                    "seed" => file_seed = Some(value(&key, &raw)?),
                    "steps" => merged.steps = Some(value(&key, &raw)?),
                    "batch-size" => merged.batch_size = Some(value(&key, &raw)?),
                    "learning-rate" => merged.learning_rate = Some(value(&key, &raw)?),
                    "warmup-steps" => merged.warmup_steps = Some(value(&key, &raw)?),
                    "embedding-dim" => merged.embedding_dim = Some(value(&key, &raw)?),
                    "init-scale" => merged.init_scale = Some(value(&key, &raw)?),
                    "probe-every" => merged.probe_every = Some(value(&key, &raw)?),
                    "probe-docs" => merged.probe_docs = Some(value(&key, &raw)?),
                    "lambda-d" => merged.lambda_d = Some(value(&key, &raw)?),
                    "threshold-t" => merged.threshold_t = Some(value(&key, &raw)?),
                    "mask" => merged.mask = Some(value(&key, &raw)?),
                    "temperature" => merged.temperature = Some(value(&key, &raw)?),
                    "k" => merged.k = Some(value(&key, &raw)?),
                    "k-rank" => merged.k_rank = Some(value(&key, &raw)?),
                    "k-reg" => merged.k_reg = Some(value(&key, &raw)?),
                    "max-input-length" => merged.max_input_length = Some(value(&key, &raw)?),
                    other => bail!("{}: unknown config key {other:?}", path.display()),
                }
            }
        }
        merged.overlay(self);

        let mut cfg = TrainConfig::default();
        let m = merged;
        if let Some(s) = seed.or(file_seed) {
            cfg.seed = s;
        }
        if let Some(v) = m.steps {
            cfg.steps = v;
            cfg.warmup_steps = v / 10;
        }
        macro_rules! set {
            ($($opt:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = m.$opt { cfg.$($field).+ = v; })*
            };
        }
        set!(
            batch_size => batch_size,
            learning_rate => learning_rate,
            warmup_steps => warmup_steps,
            embedding_dim => embedding_dim,
            init_scale => init_scale,
            probe_every => probe_every,
            probe_docs => probe_docs,
            lambda_d => loss.lambda_d,
            threshold_t => loss.threshold_t,
            mask => loss.mask_enabled,
            temperature => loss.temperature,
            k => encoder.k_rank,
            k => encoder.k_reg,
            k_rank => encoder.k_rank,
            k_reg => encoder.k_reg,
            max_input_length => encoder.max_input_length,
        );
        cfg.validate().context("invalid training configuration")?;
        Ok(cfg)
    }

    fn overlay(&mut self, flags: &TrainOpts) {
        macro_rules! take {
            ($($f:ident),*) => { $(if flags.$f.is_some() { self.$f = flags.$f; })* };
        }
        take!(
            steps,
            batch_size,
            learning_rate,
            warmup_steps,
            embedding_dim,
            init_scale,
            probe_every,
            probe_docs,
            lambda_d,
            threshold_t,
            mask,
            temperature,
            k,
            k_rank,
            k_reg,
            max_input_length
        );
    }
}
