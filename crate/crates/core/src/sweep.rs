//! Hyper-parameter sweeps over `lambda_d`, the mask threshold or the
//! activation fold count, reported as CSV.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::SyntheticTask;
use crate::trainer::{evaluate, train, TrainConfig};

pub const CSV_VERSION_LINE: &str = "# sweep-v1";
pub const CSV_HEADER: &str = "axis_value,ndcg10,flops,doc_len,collapsed";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    LambdaD,
    ThresholdT,
    FoldCount,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda_d" | "lambda-d" => Ok(Self::LambdaD),
            "threshold_t" | "threshold-t" | "t" => Ok(Self::ThresholdT),
            "fold_count" | "fold-count" | "k" => Ok(Self::FoldCount),
            other => Err(Error::InvalidParameter(format!(
                "unknown sweep axis {other:?} (lambda_d, threshold_t, fold_count)"
            ))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LambdaD => "lambda_d",
            Self::ThresholdT => "threshold_t",
            Self::FoldCount => "fold_count",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
    pub fixed: TrainConfig,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidParameter("sweep grid is empty".into()));
        }
        for &v in &self.grid {
            let ok = match self.axis {
                SweepAxis::LambdaD => v.is_finite() && v >= 0.0,
                SweepAxis::ThresholdT => v >= 0.0 && v.fract() == 0.0,
                SweepAxis::FoldCount => v >= 1.0 && v.fract() == 0.0,
            };
            if !ok {
                return Err(Error::InvalidParameter(format!(
                    "grid value {v} is invalid for axis {}",
                    self.axis
                )));
            }
        }
        self.fixed.validate()
    }

    /// Config of grid point `i`, seeded with `base seed + i`.
    pub fn config_at(&self, i: usize) -> TrainConfig {
        let mut cfg = self.fixed.clone();
        let v = self.grid[i];
        match self.axis {
            SweepAxis::LambdaD => cfg.loss.lambda_d = v,
            SweepAxis::ThresholdT => cfg.loss.threshold_t = v as usize,
            SweepAxis::FoldCount => {
                cfg.encoder.k_rank = v as u32;
                cfg.encoder.k_reg = v as u32;
            }
        }
        cfg.seed = self.fixed.seed.wrapping_add(i as u64);
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: f64,
    /// `None` when the run failed.
    pub outcome: Option<SweepOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub ndcg10: f64,
    pub flops: f64,
    pub doc_len: f64,
    pub collapsed: bool,
}

pub fn run_point(task: &SyntheticTask, cfg: &TrainConfig) -> Result<SweepOutcome> {
    let report = train(task, cfg)?;
    let idf = task.idf()?;
    let (summary, _) = evaluate(task, &report.scorer, &cfg.encoder, &idf)?;
    Ok(SweepOutcome {
        ndcg10: summary.ndcg10,
        flops: summary.flops,
        doc_len: summary.doc_len,
        collapsed: report.collapsed,
    })
}

/// Runs every grid point independently; a failing point yields a row
/// without outcome and the sweep continues. Rows come back in grid order.
pub fn run_sweep(task: &SyntheticTask, spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let rows = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..spec.grid.len())
            .map(|i| {
                let cfg = spec.config_at(i);
                scope.spawn(move || run_point(task, &cfg))
            })
            .collect();
        handles
            .into_iter()
            .zip(&spec.grid)
            .map(|(h, &axis_value)| {
                let outcome = match h.join() {
                    Ok(Ok(o)) => Some(o),
                    Ok(Err(e)) => {
                        log::warn!("sweep point {axis_value} failed: {e}");
                        None
                    }
                    Err(_) => {
                        log::warn!("sweep point {axis_value} panicked");
                        None
                    }
                };
                SweepRow {
                    axis_value,
                    outcome,
                }
            })
            .collect()
    });
    Ok(rows)
}

pub fn write_csv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "{CSV_VERSION_LINE}")?;
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        match &row.outcome {
            Some(o) => writeln!(
                out,
                "{},{},{},{},{}",
                row.axis_value, o.ndcg10, o.flops, o.doc_len, o.collapsed
            )?,
            None => writeln!(out, "{},nan,nan,nan,failed", row.axis_value)?,
        }
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(input: R) -> Result<Vec<SweepRow>> {
    let mut lines = input.lines();
    let bad = |message: String| Error::Parse {
        path: "sweep csv".into(),
        line: 0,
        message,
    };
    match lines.next().transpose()? {
        Some(l) if l.trim() == CSV_VERSION_LINE => {}
        other => return Err(bad(format!("expected {CSV_VERSION_LINE:?}, got {other:?}"))),
    }
    match lines.next().transpose()? {
        Some(l) if l.trim() == CSV_HEADER => {}
        other => {
            return Err(bad(format!(
                "expected header {CSV_HEADER:?}, got {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(format!("expected 5 fields in {line:?}")));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| bad(format!("bad number {s:?}")))
        };
        let axis_value = num(f[0])?;
        let outcome = match f[4] {
            "failed" => None,
            flag => Some(SweepOutcome {
                ndcg10: num(f[1])?,
                flops: num(f[2])?,
                doc_len: num(f[3])?,
                collapsed: flag
                    .parse()
                    .map_err(|_| bad(format!("bad collapsed flag {flag:?}")))?,
            }),
        };
        rows.push(SweepRow {
            axis_value,
            outcome,
        });
    }
    Ok(rows)
}
