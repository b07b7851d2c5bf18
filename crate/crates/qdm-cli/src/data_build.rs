//! From config to concrete train/test window sets.

use qdm_core::data::{self, Standardizer};
use qdm_core::pairing::WindowedDataset;
use qdm_core::rng::{branch_rng, Stream};
use qdm_core::{Error, Result};

use crate::config::{DatasetConfig, ImbalanceConfig, SyntheticDataset};

/// Materialized splits plus their content hashes. `train_full` is the
/// untouched training pool; imbalance is applied per repeat on top of it.
pub struct BuiltData {
    pub train_full: WindowedDataset,
    pub test: WindowedDataset,
    pub train_fingerprint: String,
    pub test_fingerprint: String,
}

impl BuiltData {
    /// Class dimension the model head needs to cover both splits.
    pub fn class_count(&self) -> usize {
        self.train_full.num_classes().max(self.test.num_classes())
    }
}

pub fn build(dataset: &DatasetConfig) -> Result<BuiltData> {
    let (train_full, test) = match dataset {
        DatasetConfig::Synthetic(s) => build_synthetic(s)?,
        DatasetConfig::Container(c) => {
            let (train, _) = data::load_container(&c.train)?;
            let (test, _) = data::load_container(&c.test)?;
            if train.features() != test.features() || train.window() != test.window() {
                return Err(Error::Contract(format!(
                    "train ({}x{}) and test ({}x{}) containers disagree on window geometry",
                    train.window(),
                    train.features(),
                    test.window(),
                    test.features(),
                )));
            }
            (train, test)
        }
    };
    let train_fingerprint = data::dataset_fingerprint(&train_full);
    let test_fingerprint = data::dataset_fingerprint(&test);
    Ok(BuiltData {
        train_full,
        test,
        train_fingerprint,
        test_fingerprint,
    })
}

fn build_synthetic(cfg: &SyntheticDataset) -> Result<(WindowedDataset, WindowedDataset)> {
    let train_runs = data::generate_synthetic(&cfg.spec)?;
    let test_runs = data::generate_synthetic(&cfg.test_spec())?;
    let (train_runs, test_runs) = if cfg.standardize {
        let stats = Standardizer::fit(&train_runs)?;
        (stats.apply_all(&train_runs)?, stats.apply_all(&test_runs)?)
    } else {
        (train_runs, test_runs)
    };
    Ok((
        data::windows_from_runs(&train_runs, cfg.window, cfg.step)?,
        data::windows_from_runs(&test_runs, cfg.window, cfg.step)?,
    ))
}

/// Per-repeat subsample of the training pool. Every method within a repeat
/// shares this split; the test set is never subsampled.
pub fn imbalanced_train(
    full: &WindowedDataset,
    imbalance: Option<&ImbalanceConfig>,
    repeat_seed: u64,
) -> Result<WindowedDataset> {
    let Some(imb) = imbalance else {
        return Ok(full.clone());
    };
    let present = full.present_classes();
    for &c in &imb.classes {
        if !present.contains(&c) {
            return Err(Error::Contract(format!(
                "imbalance targets class {c} but the training pool only has classes {present:?}"
            )));
        }
    }
    let mut rng = branch_rng(repeat_seed, Stream::Data, 0, 1);
    full.apply_imbalance(&imb.targets(), &mut rng)
}
