//! Result bundles: one cell per variant x repeat, plus rendered outputs.
//! A bundle is self-describing (config echo, hashes, per-cell seeds and
//! fingerprints) so every number in a table can be traced to its run.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use qdm_core::data::{config_hash, dataset_fingerprint};
use qdm_core::loss::QuadrupletLossConfig;
use qdm_core::metrics::{evaluate, EvalReport, RunMeta};
use qdm_core::pairing::WindowedDataset;
use qdm_core::train::{train_full, Method, TrainConfig};
use qdm_core::{Error, Result};

use crate::config::ExperimentConfig;
use crate::data_build::{self, BuiltData};
use crate::table;

/// One column of the grid: a method plus the loss it trains with.
#[derive(Debug, Clone)]
pub struct Variant {
    pub label: String,
    pub method: Method,
    pub loss: QuadrupletLossConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

/// Outcome of one trained-and-evaluated cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cell {
    pub variant: String,
    pub repeat: usize,
    pub seed: u64,
    pub train_fingerprint: String,
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<EvalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
}

/// Everything a grid run emits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bundle {
    pub config_hash: String,
    pub config: ExperimentConfig,
    /// Column labels in declaration order.
    pub variants: Vec<String>,
    pub train_fingerprint: String,
    pub test_fingerprint: String,
    pub imbalanced_classes: Vec<usize>,
    /// Cells ordered by (variant, repeat), independent of completion order.
    pub cells: Vec<Cell>,
}

/// Train and evaluate every variant x repeat. Repeats share their
/// imbalanced split across variants, so columns differ only in the method.
/// A failing cell is recorded and the grid continues.
pub fn run_grid(cfg: &ExperimentConfig, variants: &[Variant]) -> Result<Bundle> {
    let built = data_build::build(&cfg.dataset)?;
    let repeats = cfg.experiment.repeats;
    let splits: Vec<(u64, WindowedDataset, String)> = (0..repeats)
        .map(|r| {
            let seed = cfg.experiment.seed_base + r as u64;
            let ds = data_build::imbalanced_train(&built.train_full, cfg.imbalance.as_ref(), seed)?;
            let fp = dataset_fingerprint(&ds);
            Ok((seed, ds, fp))
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..variants.len())
        .flat_map(|v| (0..repeats).map(move |r| (v, r)))
        .collect();
    let cells: Vec<Cell> = jobs
        .par_iter()
        .map(|&(v, r)| run_cell(cfg, &variants[v], r, &splits[r], &built))
        .collect();

    // The imbalance scenario must never shrink the held-out split.
    if dataset_fingerprint(&built.test) != built.test_fingerprint {
        return Err(Error::Contract("test split changed during the run".into()));
    }

    Ok(Bundle {
        config_hash: config_hash(cfg)?,
        config: cfg.clone(),
        variants: variants.iter().map(|v| v.label.clone()).collect(),
        train_fingerprint: built.train_fingerprint,
        test_fingerprint: built.test_fingerprint,
        imbalanced_classes: cfg
            .imbalance
            .as_ref()
            .map(|i| {
                let mut c = i.classes.clone();
                c.sort_unstable();
                c
            })
            .unwrap_or_default(),
        cells,
    })
}

fn run_cell(
    cfg: &ExperimentConfig,
    variant: &Variant,
    repeat: usize,
    split: &(u64, WindowedDataset, String),
    built: &BuiltData,
) -> Cell {
    let (seed, ds, fingerprint) = split;
    let mut train_cfg = cfg
        .train
        .to_config(variant.method, *seed, ds.features(), built.class_count());
    train_cfg.loss = variant.loss;
    let mut cell = Cell {
        variant: variant.label.clone(),
        repeat,
        seed: *seed,
        train_fingerprint: fingerprint.clone(),
        status: CellStatus::Failed,
        error: None,
        report: None,
        final_loss: None,
    };
    match run_cell_inner(&train_cfg, ds, &built.test, &variant.label) {
        Ok((report, final_loss)) => {
            cell.status = CellStatus::Ok;
            cell.report = Some(report);
            cell.final_loss = final_loss;
        }
        Err(e) => cell.error = Some(e.to_string()),
    }
    cell
}

fn run_cell_inner(
    train_cfg: &TrainConfig,
    ds: &WindowedDataset,
    test: &WindowedDataset,
    label: &str,
) -> Result<(EvalReport, Option<f64>)> {
    let outcome = train_full(ds, None, train_cfg, None)?;
    let meta = RunMeta {
        seed: train_cfg.seed,
        config_hash: config_hash(train_cfg)?,
        dataset_fingerprint: dataset_fingerprint(test),
        method: label.to_string(),
    };
    let report = evaluate(&outcome.params, test, meta)?;
    Ok((report, outcome.history.last().map(|r| r.total)))
}

/// Write bundle.json, table.txt and cells.csv under `out_dir`.
pub fn write_outputs(bundle: &Bundle, out_dir: &Path) -> Result<()> {
    let io = |e| Error::Io {
        path: out_dir.display().to_string(),
        source: e,
    };
    fs::create_dir_all(out_dir).map_err(io)?;
    let json = serde_json::to_vec_pretty(bundle).map_err(|e| Error::Format {
        path: out_dir.join("bundle.json").display().to_string(),
        message: e.to_string(),
    })?;
    fs::write(out_dir.join("bundle.json"), json).map_err(io)?;
    fs::write(out_dir.join("table.txt"), table::render(bundle)?).map_err(io)?;
    fs::write(out_dir.join("cells.csv"), table::cells_csv(bundle)).map_err(io)?;
    Ok(())
}
