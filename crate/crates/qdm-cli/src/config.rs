//! TOML experiment schema. The file fixes everything an experiment needs;
//! command-line flags override individual keys. See configs/README.md for
//! a worked example.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qdm_core::data::SyntheticSpec;
use qdm_core::loss::QuadrupletLossConfig;
use qdm_core::network::ModelConfig;
use qdm_core::optim::OptimizerKind;
use qdm_core::pairing::{AnchorSampling, Keep};
use qdm_core::train::{Method, TrainConfig};
use qdm_core::{Error, Result};

/// Top-level experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    /// Training-split subsampling; absent means train on the full set.
    #[serde(default)]
    pub imbalance: Option<ImbalanceConfig>,
    pub experiment: ExperimentSection,
    pub train: TrainSection,
    /// Grid for `qdm ablate`; ignored by `qdm scenario`.
    #[serde(default)]
    pub ablation: Option<AblationSection>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        if let Some(imb) = &self.imbalance {
            imb.validate()?;
        }
        self.experiment.validate()?;
        // Dummy data-derived dims; everything else is the real config.
        self.train
            .to_config(Method::Plain, 0, 1, 2)
            .validate()?;
        if let Some(ab) = &self.ablation {
            ab.validate(&self.train.loss)?;
        }
        Ok(())
    }
}

/// Where the train and test windows come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetConfig {
    Synthetic(SyntheticDataset),
    Container(ContainerDataset),
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            DatasetConfig::Synthetic(s) => s.validate(),
            DatasetConfig::Container(_) => Ok(()),
        }
    }
}

/// Generated train/test pair. The test split draws from its own seed so
/// the two sets never share a sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub window: usize,
    pub step: usize,
    pub test_sequences_per_class: usize,
    pub test_seed: u64,
    /// Standardize features with statistics fitted on the training runs.
    #[serde(default)]
    pub standardize: bool,
}

impl SyntheticDataset {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.window == 0 || self.step == 0 {
            return Err(Error::Config("window and step must be positive".into()));
        }
        if self.window > self.spec.sequence_length {
            return Err(Error::Config(format!(
                "window {} exceeds sequence_length {}",
                self.window, self.spec.sequence_length
            )));
        }
        if self.test_sequences_per_class == 0 {
            return Err(Error::Config("test_sequences_per_class must be positive".into()));
        }
        if self.test_seed == self.spec.seed {
            return Err(Error::Config(
                "test_seed equals the training seed, the splits would be identical".into(),
            ));
        }
        Ok(())
    }

    /// The generation recipe for the held-out split.
    pub fn test_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            sequences_per_class: self.test_sequences_per_class,
            seed: self.test_seed,
            ..self.spec.clone()
        }
    }
}

/// Pre-ingested containers, see `qdm ingest`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContainerDataset {
    pub train: PathBuf,
    pub test: PathBuf,
}

/// Per-repeat training-split subsampling. Exactly one of `count` (windows
/// kept per listed class) or `fraction` must be given.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImbalanceConfig {
    pub classes: Vec<usize>,
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub fraction: Option<f64>,
}

impl ImbalanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Config("imbalance.classes must not be empty".into()));
        }
        let unique: BTreeSet<usize> = self.classes.iter().copied().collect();
        if unique.len() != self.classes.len() {
            return Err(Error::Config(format!(
                "imbalance.classes has duplicates: {:?}",
                self.classes
            )));
        }
        match (self.count, self.fraction) {
            (Some(_), Some(_)) => Err(Error::Config(
                "give imbalance.count or imbalance.fraction, not both".into(),
            )),
            (None, None) => Err(Error::Config(
                "imbalance needs a count or a fraction".into(),
            )),
            (Some(0), None) => Err(Error::Config(
                "imbalance.count must keep at least one window".into(),
            )),
            (None, Some(f)) if !(f > 0.0 && f < 1.0) => Err(Error::Config(format!(
                "imbalance.fraction must lie in (0, 1), got {f}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn targets(&self) -> BTreeMap<usize, Keep> {
        let keep = match (self.count, self.fraction) {
            (Some(c), _) => Keep::Count(c),
            (_, Some(f)) => Keep::Fraction(f),
            (None, None) => unreachable!("rejected by validate"),
        };
        self.classes.iter().map(|&c| (c, keep)).collect()
    }
}

/// Which methods to compare and how often.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub methods: Vec<String>,
    pub repeats: usize,
    pub seed_base: u64,
}

impl ExperimentSection {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("experiment.repeats must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("experiment.methods must not be empty".into()));
        }
        let mut seen = BTreeSet::new();
        for name in &self.methods {
            let method: Method = name.parse()?;
            if !seen.insert(method.name()) {
                return Err(Error::Config(format!(
                    "method {} listed twice",
                    method.name()
                )));
            }
        }
        Ok(())
    }

    pub fn methods(&self) -> Vec<Method> {
        self.methods
            .iter()
            .map(|m| m.parse().expect("checked by validate"))
            .collect()
    }
}

/// Model shape minus the data-derived dimensions.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_size: usize,
    pub layer_count: usize,
    pub embed_dim: usize,
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default)]
    pub literal_sigmoid_logits: bool,
}

impl ModelSection {
    pub fn to_model(&self, input_size: usize, class_count: usize) -> ModelConfig {
        ModelConfig {
            input_size,
            hidden_size: self.hidden_size,
            layer_count: self.layer_count,
            embed_dim: self.embed_dim,
            class_count,
            dropout_rate: self.dropout_rate,
            literal_sigmoid_logits: self.literal_sigmoid_logits,
        }
    }
}

/// Method-independent training hyperparameters. `scenario` stamps the
/// method and the per-repeat seed on top; input size and class count come
/// from the data.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub model: ModelSection,
    pub loss: QuadrupletLossConfig,
    #[serde(default = "OptimizerKind::adam_default")]
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub anchor_sampling: AnchorSampling,
    #[serde(default)]
    pub patience: Option<usize>,
}

impl TrainSection {
    pub fn to_config(
        &self,
        method: Method,
        seed: u64,
        input_size: usize,
        class_count: usize,
    ) -> TrainConfig {
        TrainConfig {
            method,
            model: self.model.to_model(input_size, class_count),
            loss: self.loss,
            optimizer: self.optimizer,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            anchor_sampling: self.anchor_sampling,
            patience: self.patience,
        }
    }
}

/// Grid for `qdm ablate`: named loss presets plus a beta sweep. Presets
/// modify the base loss, beta cells keep it and change only the weight of
/// the metric term.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSection {
    #[serde(default)]
    pub presets: Vec<String>,
    #[serde(default)]
    pub betas: Vec<f64>,
}

impl AblationSection {
    pub fn validate(&self, base: &QuadrupletLossConfig) -> Result<()> {
        if self.presets.is_empty() && self.betas.is_empty() {
            return Err(Error::Config("ablation grid is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for p in &self.presets {
            apply_preset(base, p)?;
            if !seen.insert(p.to_ascii_uppercase()) {
                return Err(Error::Config(format!("preset {p:?} listed twice")));
            }
        }
        let mut labels = BTreeSet::new();
        for &b in &self.betas {
            if !(b.is_finite() && b >= 0.0) {
                return Err(Error::Config(format!(
                    "ablation beta must be finite and non-negative, got {b}"
                )));
            }
            if !labels.insert(b.to_bits()) {
                return Err(Error::Config(format!("beta {b} listed twice")));
            }
        }
        Ok(())
    }
}

/// Loss presets relative to the configured base: A drops both the wide
/// minority margin and the lambda weights, B restores the weights, C
/// restores the margin, D is the base itself.
pub fn apply_preset(base: &QuadrupletLossConfig, preset: &str) -> Result<QuadrupletLossConfig> {
    let mut out = *base;
    match preset.to_ascii_uppercase().as_str() {
        "A" => {
            out.m2 = base.m;
            out.lambda_pos = 1.0;
            out.lambda_minor = 1.0;
        }
        "B" => out.m2 = base.m,
        "C" => {
            out.lambda_pos = 1.0;
            out.lambda_minor = 1.0;
        }
        "D" => {}
        other => {
            return Err(Error::Config(format!(
                "unknown ablation preset {other:?}: expected A, B, C or D"
            )))
        }
    }
    Ok(out)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: shown.clone(),
        source: e,
    })?;
    let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| Error::Format {
        path: shown,
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}
