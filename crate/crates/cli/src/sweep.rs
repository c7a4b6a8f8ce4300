//! One-axis parameter sweeps over (value, seed) cells.

use std::path::Path;

use cane_core::seeds::budget_schedule;
use cane_core::{Mode, RunReport};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    #[value(name = "budget_frac")]
    BudgetFrac,
    #[value(name = "rho")]
    Rho,
    #[value(name = "k_mult")]
    KMult,
    #[value(name = "mode")]
    Mode,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::BudgetFrac => "budget_frac",
            Axis::Rho => "rho",
            Axis::KMult => "k_mult",
            Axis::Mode => "mode",
        }
    }

    /// Sets this axis on `cfg`, rejecting values outside its domain.
    pub fn apply(self, cfg: &mut RunConfig, value: &str) -> CliResult<()> {
        let bad = |why: &str| CliError::Config(format!("{} value `{value}`: {why}", self.as_str()));
        let number = || value.trim().parse::<f64>().map_err(|_| bad("not a number"));
        match self {
            Axis::BudgetFrac => {
                let f = number()?;
                budget_schedule(1, f).map_err(|_| bad("must be one of 0.25, 0.5, 0.75, 1.0"))?;
                cfg.budget = None;
                cfg.budget_frac = Some(f);
            }
            Axis::Rho => {
                let r = number()?;
                if !(r > 0.0 && r <= 1.0) {
                    return Err(bad("must lie in (0, 1]"));
                }
                cfg.rho = r;
            }
            Axis::KMult => {
                let k = number()?;
                if !(k > 0.0 && k.is_finite()) {
                    return Err(bad("must be positive"));
                }
                cfg.k_mult = k;
            }
            Axis::Mode => cfg.mode = value.trim().parse::<Mode>().map_err(|e| bad(&e.to_string()))?,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub value: String,
    pub seed: u64,
    pub accuracy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    /// Runs that produced an accuracy.
    pub runs: usize,
    pub failures: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation; 0 for a single run.
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: Axis,
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
    pub cells: Vec<SweepCell>,
}

pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

/// Runs `runner` on every (value, seed) cell on at most `jobs` threads. A
/// failing cell is recorded and the sweep carries on. When `out` is set,
/// each cell's report goes to `out/<axis>=<value>/seed-<s>/`.
pub fn run_sweep<F>(
    base: &RunConfig,
    axis: Axis,
    values: &[String],
    seeds: &[u64],
    jobs: usize,
    out: Option<&Path>,
    runner: F,
) -> CliResult<SweepReport>
where
    F: Fn(&RunConfig, u64, Option<&Path>) -> CliResult<RunReport> + Sync,
{
    if values.is_empty() || seeds.is_empty() {
        return Err(CliError::Config("a sweep needs at least one value and one seed".into()));
    }
    let mut configs = Vec::with_capacity(values.len());
    for v in values {
        let mut cfg = base.clone();
        axis.apply(&mut cfg, v)?;
        configs.push(cfg);
    }
    let cells: Vec<(usize, u64)> = (0..values.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    let results: Vec<SweepCell> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(i, seed)| {
                let dir = out.map(|o| {
                    o.join(format!("{}={}", axis.as_str(), values[i]))
                        .join(format!("seed-{seed}"))
                });
                let outcome = runner(&configs[i], seed, dir.as_deref());
                SweepCell {
                    value: values[i].clone(),
                    seed,
                    accuracy: outcome.as_ref().ok().and_then(|r| r.accuracy),
                    error: outcome.err().map(|e| e.to_string()),
                }
            })
            .collect()
    });

    let rows = values
        .iter()
        .map(|v| {
            let mine: Vec<&SweepCell> = results.iter().filter(|c| &c.value == v).collect();
            let accs: Vec<f64> = mine.iter().filter_map(|c| c.accuracy).collect();
            let stats = mean_std(&accs);
            SweepRow {
                value: v.clone(),
                runs: accs.len(),
                failures: mine.iter().filter(|c| c.error.is_some()).count(),
                mean: stats.map(|s| s.0),
                std: stats.map(|s| s.1),
            }
        })
        .collect();
    Ok(SweepReport {
        axis,
        seeds: seeds.to_vec(),
        rows,
        cells: results,
    })
}
