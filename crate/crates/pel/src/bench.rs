//! Noise-robustness benchmark: a grid of corruption rates x strategies,
//! with several seed replicates per cell. Every cell trains on identical
//! data and seeds across strategies, so cells pair up for comparison, and
//! each cell is fully independent — safe to run in parallel worker slots.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::{generate, inject_label_noise, NoiseMode, SyntheticSpec};
use crate::trainer::{evaluate, train, Strategy, TrainConfig};

/// Environment variable controlling benchmark worker slots.
pub const WORKERS_ENV: &str = "PEL_WORKERS";

const BENCH_NOISE_SALT: u64 = 0xb01d_face_0000_0000;

/// Corruption style for the benchmark grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionKind {
    /// Mislabels drawn uniformly over the wrong classes.
    Uniform,
    /// Mislabels drawn from the true class's group siblings — the
    /// confusions that actually happen between near-identical classes.
    GroupSibling,
}

impl CorruptionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CorruptionKind::Uniform => "uniform",
            CorruptionKind::GroupSibling => "group_sibling",
        }
    }

    fn to_noise_mode(self, spec: &SyntheticSpec) -> NoiseMode {
        match self {
            CorruptionKind::Uniform => NoiseMode::Uniform,
            CorruptionKind::GroupSibling => NoiseMode::GroupSibling {
                classes_per_group: spec.classes_per_group(),
            },
        }
    }
}

impl FromStr for CorruptionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(CorruptionKind::Uniform),
            "group_sibling" => Ok(CorruptionKind::GroupSibling),
            other => Err(format!("unknown corruption kind '{other}'")),
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Grid shape and replicate count for `bench-noise`, plus the beta list for
/// `sweep-beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchSettings {
    pub noise_rates: Vec<f64>,
    pub n_replicates: usize,
    pub noise_mode: CorruptionKind,
    pub sweep_betas: Vec<f64>,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            noise_rates: vec![0.0, 0.1, 0.2, 0.3],
            n_replicates: 5,
            noise_mode: CorruptionKind::Uniform,
            sweep_betas: vec![4.0, 6.0, 8.0],
        }
    }
}

/// One (rate, strategy) cell: test accuracies over replicates, or the first
/// error the cell hit.
#[derive(Debug, Clone)]
pub struct NoiseCell {
    pub rate: f64,
    pub strategy: Strategy,
    pub accuracies: Vec<f64>,
    pub error: Option<String>,
}

impl NoiseCell {
    pub fn mean(&self) -> f64 {
        if self.accuracies.is_empty() {
            return f64::NAN;
        }
        self.accuracies.iter().sum::<f64>() / self.accuracies.len() as f64
    }

    /// Sample standard deviation over replicates.
    pub fn stddev(&self) -> f64 {
        let n = self.accuracies.len();
        if n < 2 {
            return 0.0;
        }
        let mean = self.mean();
        let var = self
            .accuracies
            .iter()
            .map(|a| (a - mean) * (a - mean))
            .sum::<f64>()
            / (n - 1) as f64;
        var.sqrt()
    }
}

/// Completed benchmark grid, rate-major then strategy in `Strategy::ALL`
/// order.
#[derive(Debug, Clone)]
pub struct NoiseGrid {
    pub cells: Vec<NoiseCell>,
    pub n_replicates: usize,
    pub mode: CorruptionKind,
}

impl NoiseGrid {
    pub fn cell(&self, rate: f64, strategy: Strategy) -> Option<&NoiseCell> {
        self.cells
            .iter()
            .find(|c| c.rate == rate && c.strategy == strategy)
    }

    /// True when every cell succeeded with the full replicate count.
    pub fn is_complete(&self) -> bool {
        self.cells
            .iter()
            .all(|c| c.error.is_none() && c.accuracies.len() == self.n_replicates)
    }

    /// Mean accuracy per rate for one strategy, in rate order.
    pub fn means_for(&self, strategy: Strategy) -> Vec<(f64, f64)> {
        self.cells
            .iter()
            .filter(|c| c.strategy == strategy)
            .map(|c| (c.rate, c.mean()))
            .collect()
    }

    pub fn to_csv_string(&self) -> String {
        let mut header = String::from("noise_rate,strategy,n_replicates,mean_accuracy,stddev_accuracy");
        for r in 0..self.n_replicates {
            header.push_str(&format!(",acc{r}"));
        }
        header.push_str(",status\n");
        let mut out = header;
        for c in &self.cells {
            let mut row = format!("{},{},{}", c.rate, c.strategy, c.accuracies.len());
            if c.accuracies.is_empty() {
                row.push_str(",,");
            } else {
                row.push_str(&format!(",{:.16e},{:.16e}", c.mean(), c.stddev()));
            }
            for r in 0..self.n_replicates {
                match c.accuracies.get(r) {
                    Some(a) => row.push_str(&format!(",{a:.16e}")),
                    None => row.push(','),
                }
            }
            match &c.error {
                None => row.push_str(",ok"),
                Some(e) => row.push_str(&format!(",error: {}", e.replace(',', ";"))),
            }
            out.push_str(&row);
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.to_csv_string())
    }
}

/// Worker-slot count from `PEL_WORKERS` (default 1, i.e. sequential).
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

fn run_cell(
    base_cfg: &TrainConfig,
    spec: &SyntheticSpec,
    settings: &BenchSettings,
    rate_idx: usize,
    rate: f64,
    strategy: Strategy,
) -> NoiseCell {
    let mut accuracies = Vec::with_capacity(settings.n_replicates);
    for rep in 0..settings.n_replicates {
        // Identical data and seeds across strategies: nothing below depends
        // on `strategy` except the training config itself.
        let mut dspec = spec.clone();
        dspec.mislabel_rate = 0.0;
        dspec.seed = spec.seed.wrapping_add(rep as u64);
        let result = (|| {
            let (clean_train, test_set) = generate(&dspec)?;
            let train_set = if rate > 0.0 {
                let noise_seed = dspec
                    .seed
                    .wrapping_add(BENCH_NOISE_SALT)
                    .wrapping_add((rate_idx as u64) << 32);
                inject_label_noise(
                    &clean_train,
                    rate,
                    noise_seed,
                    settings.noise_mode.to_noise_mode(&dspec),
                )?
            } else {
                clean_train
            };
            let mut cfg = base_cfg.clone();
            cfg.strategy = strategy;
            cfg.seed = base_cfg.seed.wrapping_add(rep as u64);
            let out = train(&cfg, &train_set, &test_set)?;
            Ok::<f64, Box<dyn std::error::Error>>(evaluate(&out.model, &test_set)?)
        })();
        match result {
            Ok(acc) => accuracies.push(acc),
            Err(e) => {
                return NoiseCell {
                    rate,
                    strategy,
                    accuracies,
                    error: Some(format!("replicate {rep}: {e}")),
                }
            }
        }
    }
    NoiseCell { rate, strategy, accuracies, error: None }
}

/// Run the full grid. Cell order in the result is deterministic (rate-major,
/// strategies in `Strategy::ALL` order) regardless of worker count.
pub fn run_noise_benchmark(
    base_cfg: &TrainConfig,
    spec: &SyntheticSpec,
    settings: &BenchSettings,
) -> NoiseGrid {
    let tasks: Vec<(usize, f64, Strategy)> = settings
        .noise_rates
        .iter()
        .enumerate()
        .flat_map(|(i, &rate)| Strategy::ALL.into_iter().map(move |s| (i, rate, s)))
        .collect();

    let workers = worker_count();
    let cells: Vec<NoiseCell> = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("worker pool");
        pool.install(|| {
            tasks
                .par_iter()
                .map(|&(i, rate, s)| run_cell(base_cfg, spec, settings, i, rate, s))
                .collect()
        })
    } else {
        tasks
            .iter()
            .map(|&(i, rate, s)| run_cell(base_cfg, spec, settings, i, rate, s))
            .collect()
    };

    NoiseGrid {
        cells,
        n_replicates: settings.n_replicates,
        mode: settings.noise_mode,
    }
}
