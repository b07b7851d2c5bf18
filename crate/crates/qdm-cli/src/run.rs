//! The train / evaluate / scenario / ablate / report subcommands.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;

use qdm_core::data::{self, config_hash, dataset_fingerprint};
use qdm_core::metrics::{self, RunMeta};
use qdm_core::network::ModelParams;
use qdm_core::train::{
    load_checkpoint, resume_training, save_checkpoint, train_full, Method, TrainOutcome,
};
use qdm_core::{Error, Result};

use crate::bundle::{self, Bundle, Variant};
use crate::config::{self, apply_preset, ExperimentConfig};
use crate::table;

#[derive(Args)]
pub struct TrainArgs {
    /// Training container (.qdc).
    #[arg(long)]
    data: PathBuf,
    /// Experiment config TOML; its [train] section drives the run. On
    /// --resume the configuration comes from the checkpoint instead.
    #[arg(long, required_unless_present = "resume")]
    config: Option<PathBuf>,
    /// Method to train.
    #[arg(long, default_value = "qdm")]
    method: String,
    /// Run seed; defaults to the config's experiment.seed_base.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Weight of the metric term, overriding the config's loss.beta.
    #[arg(long)]
    beta: Option<f64>,
    /// Force the class dimension of the head (defaults to the classes
    /// present in the training container).
    #[arg(long)]
    class_count: Option<usize>,
    /// Validation container for early stopping and best-model selection.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Where to store the trained weights.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Where to store the final checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Resume from this checkpoint instead of initializing fresh.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Line-delimited JSON step log.
    #[arg(long)]
    log: Option<PathBuf>,
}

fn hex_to_hash(hex: &str) -> Result<[u8; 32]> {
    if hex.len() != 64 {
        return Err(Error::Contract(format!(
            "config hash must be 64 hex chars, got {}",
            hex.len()
        )));
    }
    let mut out = [0u8; 32];
    for (i, byte) in out.iter_mut().enumerate() {
        *byte = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16)
            .map_err(|_| Error::Contract(format!("config hash is not hex: {hex:?}")))?;
    }
    Ok(out)
}

fn persist_outcome(outcome: &TrainOutcome, args: &TrainArgs) -> Result<()> {
    if let Some(path) = &args.checkpoint {
        save_checkpoint(&outcome.checkpoint, path)?;
    }
    if let Some(path) = &args.weights {
        let hash = hex_to_hash(&outcome.checkpoint.config_hash)?;
        outcome.params.save_weights(path, &hash)?;
    }
    Ok(())
}

pub fn train(args: TrainArgs) -> anyhow::Result<()> {
    let (ds, _) = data::load_container(&args.data)?;
    let val = match &args.val {
        Some(path) => Some(data::load_container(path)?.0),
        None => None,
    };
    let mut log_file = match &args.log {
        Some(path) => Some(BufWriter::new(fs::File::create(path).map_err(|e| {
            Error::Io {
                path: path.display().to_string(),
                source: e,
            }
        })?)),
        None => None,
    };
    let sink: Option<&mut dyn Write> = log_file.as_mut().map(|f| f as &mut dyn Write);

    let outcome = if let Some(ck_path) = &args.resume {
        let ck = load_checkpoint(ck_path)?;
        let epochs = args.epochs.unwrap_or(ck.config.epochs);
        resume_training(ck, epochs, &ds, val.as_ref(), sink)?
    } else {
        let cfg_path = args.config.as_ref().expect("clap requires config without resume");
        let cfg = config::load_config(cfg_path)?;
        let method: Method = args.method.parse()?;
        let seed = args.seed.unwrap_or(cfg.experiment.seed_base);
        let classes = args.class_count.unwrap_or_else(|| ds.num_classes());
        let mut tc = cfg.train.to_config(method, seed, ds.features(), classes);
        if let Some(v) = args.epochs {
            tc.epochs = v;
        }
        if let Some(v) = args.batch_size {
            tc.batch_size = v;
        }
        if let Some(v) = args.learning_rate {
            tc.learning_rate = v;
        }
        if let Some(v) = args.beta {
            tc.loss.beta = v;
        }
        train_full(&ds, val.as_ref(), &tc, sink)?
    };
    if let Some(f) = log_file.as_mut() {
        f.flush()
            .map_err(|e| Error::Io { path: "step log".into(), source: e })?;
    }
    persist_outcome(&outcome, &args)?;
    let summary = serde_json::json!({
        "method": outcome.checkpoint.config.method.name(),
        "epochs_run": outcome.epochs_run,
        "global_step": outcome.checkpoint.global_step,
        "stopped_early": outcome.stopped_early,
        "final_loss": outcome.history.last().map(|r| r.total),
        "best_val_macro_f1": outcome.best_val_macro_f1,
        "config_hash": outcome.checkpoint.config_hash,
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("plain json"));
    Ok(())
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Weight file written by `qdm train`.
    #[arg(long)]
    weights: PathBuf,
    /// Container to evaluate on.
    #[arg(long)]
    data: PathBuf,
    /// Also write the full report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Seed recorded in the report metadata.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Method label recorded in the report metadata.
    #[arg(long, default_value = "")]
    method: String,
}

pub fn evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let (params, hash) = ModelParams::load_weights(&args.weights)?;
    let (ds, meta) = data::load_container(&args.data)?;
    let run_meta = RunMeta {
        seed: args.seed,
        config_hash: hash.iter().map(|b| format!("{b:02x}")).collect(),
        dataset_fingerprint: dataset_fingerprint(&ds),
        method: args.method.clone(),
    };
    let report = metrics::evaluate(&params, &ds, run_meta)?;
    if let Some(map) = &meta.label_map {
        let mut names: Vec<(usize, &str)> = map.entries().map(|(n, i)| (i, n)).collect();
        names.sort_unstable();
        let listed: Vec<String> = names.iter().map(|(i, n)| format!("{i}={n}")).collect();
        println!("classes: {}", listed.join(", "));
    }
    print!("{}", report.to_table_string());
    if let Some(path) = &args.json {
        let bytes = serde_json::to_vec_pretty(&report).map_err(|e| Error::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        fs::write(path, bytes).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
    }
    Ok(())
}

#[derive(Args)]
pub struct ScenarioArgs {
    /// Experiment config TOML.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for bundle.json, table.txt and cells.csv.
    #[arg(long)]
    out: PathBuf,
}

pub fn scenario(args: ScenarioArgs) -> anyhow::Result<()> {
    let cfg = config::load_config(&args.config)?;
    let variants: Vec<Variant> = cfg
        .experiment
        .methods()
        .into_iter()
        .map(|m| Variant {
            label: m.name().to_string(),
            method: m,
            loss: cfg.train.loss,
        })
        .collect();
    finish_grid(&cfg, &variants, &args.out)
}

#[derive(Args)]
pub struct AblateArgs {
    /// Experiment config TOML with an [ablation] section.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for bundle.json, table.txt and cells.csv.
    #[arg(long)]
    out: PathBuf,
}

pub fn ablate(args: AblateArgs) -> anyhow::Result<()> {
    let cfg = config::load_config(&args.config)?;
    let ablation = cfg
        .ablation
        .as_ref()
        .ok_or_else(|| Error::Config("config has no [ablation] section".into()))?;
    let mut variants = Vec::new();
    for preset in &ablation.presets {
        variants.push(Variant {
            label: format!("preset_{}", preset.to_ascii_uppercase()),
            method: Method::Qdm,
            loss: apply_preset(&cfg.train.loss, preset)?,
        });
    }
    for &beta in &ablation.betas {
        let mut loss = cfg.train.loss;
        loss.beta = beta;
        variants.push(Variant {
            label: format!("beta_{beta:e}"),
            method: Method::Qdm,
            loss,
        });
    }
    finish_grid(&cfg, &variants, &args.out)
}

fn finish_grid(cfg: &ExperimentConfig, variants: &[Variant], out: &Path) -> anyhow::Result<()> {
    let bundle = bundle::run_grid(cfg, variants)?;
    bundle::write_outputs(&bundle, out)?;
    print!("{}", table::render(&bundle)?);
    let failed = bundle
        .cells
        .iter()
        .filter(|c| c.status == crate::bundle::CellStatus::Failed)
        .count();
    if failed > 0 {
        println!("{failed} of {} cells failed; see bundle.json", bundle.cells.len());
    }
    Ok(())
}

#[derive(Args)]
pub struct ReportArgs {
    /// bundle.json written by scenario or ablate.
    #[arg(long)]
    bundle: PathBuf,
    /// Re-write table.txt and cells.csv into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn report(args: ReportArgs) -> anyhow::Result<()> {
    let shown = args.bundle.display().to_string();
    let bytes = fs::read(&args.bundle).map_err(|e| Error::Io {
        path: shown.clone(),
        source: e,
    })?;
    let bundle: Bundle = serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        path: shown.clone(),
        message: e.to_string(),
    })?;
    let expect = config_hash(&bundle.config)?;
    if expect != bundle.config_hash {
        return Err(Error::Format {
            path: shown,
            message: "bundle config does not match its recorded hash".into(),
        }
        .into());
    }
    print!("{}", table::render(&bundle)?);
    if let Some(dir) = &args.out {
        let io = |e| Error::Io {
            path: dir.display().to_string(),
            source: e,
        };
        fs::create_dir_all(dir).map_err(io)?;
        fs::write(dir.join("table.txt"), table::render(&bundle)?).map_err(io)?;
        fs::write(dir.join("cells.csv"), table::cells_csv(&bundle)).map_err(io)?;
    }
    Ok(())
}
