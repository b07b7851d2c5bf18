//! The ingest subcommands: turn raw inputs into dataset containers.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand, ValueEnum};
use rayon::prelude::*;

use qdm_core::data::{
    self, cwru_label_map, ContainerMeta, LabelMap, NormalRows, RawRun, Standardizer, TeSplit,
    CWRU_STEP, CWRU_WINDOW,
};
use qdm_core::pairing::WindowedDataset;
use qdm_core::{Error, Result};

use crate::config::{self, DatasetConfig};

#[derive(Subcommand)]
pub enum IngestCmd {
    /// Per-fault CSV runs named dNN.csv (train) / dNN_te.csv (test).
    Te(TeArgs),
    /// One-channel signal files whose stems name bearing classes
    /// (normal, ball_007, ..., outer_022).
    Signals(SignalArgs),
    /// Generated synthetic dataset described by an experiment config.
    Synthetic(SyntheticArgs),
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for TeSplit {
    fn from(s: SplitArg) -> TeSplit {
        match s {
            SplitArg::Train => TeSplit::Train,
            SplitArg::Test => TeSplit::Test,
        }
    }
}

#[derive(Args)]
pub struct TeArgs {
    /// Directory holding the per-fault run files.
    #[arg(long)]
    dir: PathBuf,
    /// Fault ids to select (1..=20), comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    faults: Vec<u32>,
    /// Which file family to read; also fixes the pre-fault prefix length.
    #[arg(long, value_enum)]
    split: SplitArg,
    /// Keep pre-fault rows as class 0 instead of dropping them.
    #[arg(long)]
    keep_normal: bool,
    #[arg(long, default_value_t = 100)]
    window: usize,
    #[arg(long, default_value_t = 1)]
    step: usize,
    /// Standardize features with statistics fitted on these runs.
    #[arg(long, conflicts_with = "stats_from")]
    standardize: bool,
    /// Standardize with statistics stored in another container, so a test
    /// split can reuse its training split's statistics.
    #[arg(long)]
    stats_from: Option<PathBuf>,
    /// Output container path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct SignalArgs {
    /// Directory of signal files (one numeric per line, or QDS1 binary).
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, default_value_t = CWRU_WINDOW)]
    window: usize,
    #[arg(long, default_value_t = CWRU_STEP)]
    step: usize,
    /// Output container path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct SyntheticArgs {
    /// Experiment config TOML with a synthetic dataset section.
    #[arg(long)]
    config: PathBuf,
    /// Which of the two generated splits to window and store.
    #[arg(long, value_enum)]
    split: SplitArg,
    /// Output container path.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(cmd: IngestCmd) -> anyhow::Result<()> {
    match cmd {
        IngestCmd::Te(args) => te(args),
        IngestCmd::Signals(args) => signals(args),
        IngestCmd::Synthetic(args) => synthetic(args),
    }
}

/// Pull the standardizer out of a previously written container.
fn stats_from_container(path: &Path) -> Result<Standardizer> {
    let (_, meta) = data::load_container(path)?;
    meta.standardizer.ok_or_else(|| Error::Contract(format!(
        "container {} carries no feature statistics",
        path.display()
    )))
}

fn standardized(
    runs: Vec<RawRun>,
    fit_here: bool,
    stats_from: Option<&Path>,
) -> Result<(Vec<RawRun>, Option<Standardizer>)> {
    if let Some(source) = stats_from {
        let stats = stats_from_container(source)?;
        let runs = stats.apply_all(&runs)?;
        return Ok((runs, Some(stats)));
    }
    if fit_here {
        let stats = Standardizer::fit(&runs)?;
        let runs = stats.apply_all(&runs)?;
        return Ok((runs, Some(stats)));
    }
    Ok((runs, None))
}

fn write_summary(out: &Path, ds: &WindowedDataset, label_map: Option<&LabelMap>) {
    let per_class: BTreeMap<String, usize> = ds
        .class_index()
        .iter()
        .map(|(&c, windows)| {
            let name = label_map
                .and_then(|m| m.name(c))
                .map_or_else(|| c.to_string(), |n| format!("{c}:{n}"));
            (name, windows.len())
        })
        .collect();
    let summary = serde_json::json!({
        "out": out.display().to_string(),
        "windows": ds.len(),
        "window": ds.window(),
        "classes": ds.present_classes().len(),
        "features": ds.features(),
        "per_class": per_class,
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("plain json"));
}

fn te(args: TeArgs) -> anyhow::Result<()> {
    let normal = if args.keep_normal {
        NormalRows::KeepAsClass
    } else {
        NormalRows::Drop
    };
    let te = data::load_te_csv(&args.dir, &args.faults, args.split.into(), normal)?;
    let (runs, stats) = standardized(te.runs, args.standardize, args.stats_from.as_deref())?;
    let ds = data::windows_from_runs(&runs, args.window, args.step)?;
    let meta = ContainerMeta {
        label_map: Some(te.label_map.clone()),
        standardizer: stats,
    };
    data::save_container(&ds, &meta, &args.out)?;
    write_summary(&args.out, &ds, Some(&te.label_map));
    Ok(())
}

fn signals(args: SignalArgs) -> anyhow::Result<()> {
    let full_map = cwru_label_map();
    let shown = args.dir.display().to_string();
    let io = |e| Error::Io {
        path: shown.clone(),
        source: e,
    };
    let mut files: BTreeMap<usize, (String, PathBuf)> = BTreeMap::new();
    for entry in fs::read_dir(&args.dir).map_err(io)? {
        let entry = entry.map_err(io)?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_ascii_lowercase();
        let Some(class) = full_map.id(&stem) else {
            return Err(Error::Contract(format!(
                "{} does not name a bearing class; expected stems like normal or ball_007",
                path.display()
            ))
            .into());
        };
        if let Some((_, first)) = files.get(&class) {
            return Err(Error::Contract(format!(
                "class {stem} appears twice: {} and {}",
                first.display(),
                path.display()
            ))
            .into());
        }
        files.insert(class, (stem, path));
    }
    if files.is_empty() {
        return Err(Error::Contract(format!("no signal files in {shown}")).into());
    }
    // Class ids must stay contiguous from 0 for the windowing contract.
    for (want, (&got, _)) in files.iter().enumerate() {
        if want != got {
            return Err(Error::Contract(format!(
                "class ids are not contiguous: missing class {want} ({})",
                full_map.name(want).unwrap_or("?")
            ))
            .into());
        }
    }
    let jobs: Vec<(usize, &PathBuf)> = files.iter().map(|(&c, (_, p))| (c, p)).collect();
    let parts: Vec<WindowedDataset> = jobs
        .par_iter()
        .map(|&(class, path)| data::load_signal(path, args.window, args.step, class))
        .collect::<Result<_>>()?;
    let ds = WindowedDataset::merge(parts)?;
    let label_map = LabelMap::new(
        files
            .iter()
            .map(|(&class, (stem, _))| (stem.clone(), class)),
    )?;
    let meta = ContainerMeta {
        label_map: Some(label_map.clone()),
        standardizer: None,
    };
    data::save_container(&ds, &meta, &args.out)?;
    write_summary(&args.out, &ds, Some(&label_map));
    Ok(())
}

fn synthetic(args: SyntheticArgs) -> anyhow::Result<()> {
    let cfg = config::load_config(&args.config)?;
    let DatasetConfig::Synthetic(syn) = &cfg.dataset else {
        return Err(Error::Config("config dataset is not synthetic".into()).into());
    };
    let train_runs = data::generate_synthetic(&syn.spec)?;
    let (runs, stats) = match args.split {
        SplitArg::Train => {
            if syn.standardize {
                let stats = Standardizer::fit(&train_runs)?;
                (stats.apply_all(&train_runs)?, Some(stats))
            } else {
                (train_runs, None)
            }
        }
        SplitArg::Test => {
            let test_runs = data::generate_synthetic(&syn.test_spec())?;
            if syn.standardize {
                // Statistics always come from the training split.
                let stats = Standardizer::fit(&train_runs)?;
                (stats.apply_all(&test_runs)?, Some(stats))
            } else {
                (test_runs, None)
            }
        }
    };
    let ds = data::windows_from_runs(&runs, syn.window, syn.step)?;
    let meta = ContainerMeta {
        label_map: None,
        standardizer: stats,
    };
    data::save_container(&ds, &meta, &args.out)?;
    write_summary(&args.out, &ds, None);
    Ok(())
}
