//! Offline training: batch assembly, shared-weight forward over the
//! sampled tuples, combined objective, optimizer step, early stopping,
//! and checkpoint/resume.
//!
//! Every random draw comes from a stream keyed by (seed, stream, step),
//! never from carried generator state, so a resumed run replays the
//! exact trajectory of an uninterrupted one.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{config_hash, dataset_fingerprint};
use crate::error::{Error, Result};
use crate::loss::{
    combined_loss, contrastive_loss, quadruplet_loss, softmax_batch_loss, triplet_loss,
    QuadrupletLossConfig, QuadrupletTuple,
};
use crate::metrics::{evaluate, RunMeta};
use crate::network::{classify_logits, embed, forward_quadruplet, lstm_forward, ModelParams, ModelVars};
use crate::optim::{Optimizer, OptimizerKind};
use crate::pairing::{
    complete_triplet, sample_anchors, sample_quadruplets, AnchorSampling, WindowedDataset,
};
use crate::rng::{branch_rng, step_rng, stream_rng, Stream};

/// Training strategy. All methods share the backbone and the softmax
/// term; they differ in the metric term and in how batches are built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Qdm,
    Plain,
    Siamese,
    Triplet,
    Oversample,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Qdm => "qdm",
            Method::Plain => "plain",
            Method::Siamese => "siamese",
            Method::Triplet => "triplet",
            Method::Oversample => "oversample",
        }
    }

    pub const ALL: [Method; 5] =
        [Method::Qdm, Method::Plain, Method::Siamese, Method::Triplet, Method::Oversample];
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qdm" => Ok(Method::Qdm),
            "plain" => Ok(Method::Plain),
            "siamese" => Ok(Method::Siamese),
            "triplet" => Ok(Method::Triplet),
            "oversample" => Ok(Method::Oversample),
            other => Err(Error::config(format!(
                "unknown method {other:?}: expected qdm, plain, siamese, triplet or oversample"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub model: crate::network::ModelConfig,
    /// `m` doubles as the margin for the siamese and triplet baselines;
    /// `beta` weights whichever metric term the method uses.
    pub loss: QuadrupletLossConfig,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub anchor_sampling: AnchorSampling,
    /// Epochs without validation macro-F1 improvement before stopping.
    /// Ignored when no validation set is supplied.
    #[serde(default)]
    pub patience: Option<usize>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.check_finite()?;
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub softmax: f64,
    pub l_pos: f64,
    pub l_neg: f64,
    pub l_minor: f64,
    pub total: f64,
}

/// Everything needed to continue training bitwise-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub config_hash: String,
    /// Epochs fully completed.
    pub epoch: usize,
    pub global_step: u64,
    /// Parameters as of the last step, not the best-so-far snapshot.
    pub params: ModelParams,
    pub optimizer: Optimizer,
    pub best: Option<BestState>,
}

/// Early-stopping tracker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestState {
    pub macro_f1: f64,
    pub epoch: usize,
    pub epochs_since: usize,
    pub params: ModelParams,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation parameters when a validation set was used,
    /// otherwise the final-step parameters.
    pub params: ModelParams,
    pub checkpoint: Checkpoint,
    pub history: Vec<StepRecord>,
    pub val_history: Vec<f64>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub best_val_macro_f1: Option<f64>,
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let shown = path.display().to_string();
    let json = serde_json::to_vec_pretty(ck)
        .map_err(|e| Error::Format { path: shown.clone(), message: e.to_string() })?;
    std::fs::write(path, json).map_err(|e| Error::io(shown, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let shown = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| Error::io(shown.clone(), e))?;
    let ck: Checkpoint = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Format { path: shown.clone(), message: e.to_string() })?;
    let expect = config_hash(&ck.config)?;
    if ck.config_hash != expect {
        return Err(Error::Format {
            path: shown,
            message: "checkpoint config does not match its recorded hash".into(),
        });
    }
    Ok(ck)
}

/// Single-branch forward: window -> last hidden state -> embedding ->
/// logits.
fn forward_classify(
    tape: &mut Tape,
    vars: &ModelVars,
    params: &ModelParams,
    window: &Tensor,
    training: bool,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(Var, Var)> {
    let h = lstm_forward(
        tape,
        &vars.lstm,
        window,
        params.config.dropout_rate,
        training,
        Some(rng),
    )?;
    let e = embed(tape, vars.w_fe, h)?;
    let logits = classify_logits(tape, vars.w_fc, e, params.config.literal_sigmoid_logits)?;
    Ok((e, logits))
}

/// One optimizer update on one sampled batch. Public so a single step is
/// testable; `train` drives it.
pub fn train_step(
    params: &mut ModelParams,
    opt: &mut Optimizer,
    ds: &WindowedDataset,
    cfg: &TrainConfig,
    epoch: usize,
    global_step: u64,
) -> Result<StepRecord> {
    let mut anchor_rng = step_rng(cfg.seed, Stream::Batch, global_step);
    let mut pair_rng = step_rng(cfg.seed, Stream::Pairs, global_step);
    // Branch b of tuple i draws dropout from branch id 4i+b; the plain
    // path uses 4i+0, so at beta=0 it sees the exact masks the anchor
    // branch would.
    let drop_rng = |i: usize, role: usize| {
        branch_rng(cfg.seed, Stream::Dropout, global_step, (4 * i + role) as u64)
    };

    let mut tape = Tape::new();
    let vars = params.register(&mut tape, true);

    let softmax_term;
    let total;
    let mut breakdown = (0.0, 0.0, 0.0);
    match cfg.method {
        Method::Qdm => {
            let quads = sample_quadruplets(
                ds,
                cfg.batch_size,
                cfg.anchor_sampling,
                &mut anchor_rng,
                &mut pair_rng,
            )?;
            let mut tuples = Vec::with_capacity(quads.len());
            let mut logits = Vec::with_capacity(quads.len());
            for (i, q) in quads.iter().enumerate() {
                let windows = [
                    ds.window_tensor(q.anchor),
                    ds.window_tensor(q.positive),
                    ds.window_tensor(q.negative),
                    ds.window_tensor(q.minor),
                ];
                let mut rngs = [drop_rng(i, 0), drop_rng(i, 1), drop_rng(i, 2), drop_rng(i, 3)];
                let [r0, r1, r2, r3] = &mut rngs;
                let fwd = forward_quadruplet(
                    &mut tape,
                    &vars,
                    &params.config,
                    [&windows[0], &windows[1], &windows[2], &windows[3]],
                    true,
                    Some([r0, r1, r2, r3]),
                )?;
                tuples.push(QuadrupletTuple {
                    anchor: fwd.anchor,
                    positive: fwd.positive,
                    negative: fwd.negative,
                    minor: fwd.minor,
                    gamma: q.gamma,
                });
                logits.push((fwd.logits, ds.label(q.anchor)));
            }
            let quad = quadruplet_loss(&mut tape, &tuples, &cfg.loss)?;
            breakdown = (quad.mean_pos, quad.mean_neg, quad.mean_minor);
            let soft = softmax_batch_loss(&mut tape, &logits)?;
            softmax_term = soft;
            total = combined_loss(&mut tape, soft, quad.loss, cfg.loss.beta)?;
        }
        Method::Plain | Method::Oversample => {
            let anchors = sample_anchors(ds, cfg.batch_size, cfg.anchor_sampling, &mut anchor_rng)?;
            let mut logits = Vec::with_capacity(anchors.len());
            for (i, &a) in anchors.iter().enumerate() {
                let window = ds.window_tensor(a);
                let mut rng = drop_rng(i, 0);
                let (_, lg) = forward_classify(&mut tape, &vars, params, &window, true, &mut rng)?;
                logits.push((lg, ds.label(a)));
            }
            let soft = softmax_batch_loss(&mut tape, &logits)?;
            softmax_term = soft;
            total = soft;
        }
        Method::Siamese | Method::Triplet => {
            let anchors = sample_anchors(ds, cfg.batch_size, cfg.anchor_sampling, &mut anchor_rng)?;
            let mut logits = Vec::with_capacity(anchors.len());
            let mut metric_terms = Vec::new();
            let mut metric_sum = 0.0;
            for (i, &a) in anchors.iter().enumerate() {
                let (p, n) = complete_triplet(ds, a, &mut pair_rng)?;
                let wins = [ds.window_tensor(a), ds.window_tensor(p), ds.window_tensor(n)];
                let mut embs = Vec::with_capacity(3);
                for (role, w) in wins.iter().enumerate() {
                    let mut rng = drop_rng(i, role);
                    let h = lstm_forward(
                        &mut tape,
                        &vars.lstm,
                        w,
                        params.config.dropout_rate,
                        true,
                        Some(&mut rng),
                    )?;
                    embs.push(embed(&mut tape, vars.w_fe, h)?);
                }
                logits.push((
                    classify_logits(
                        &mut tape,
                        vars.w_fc,
                        embs[0],
                        params.config.literal_sigmoid_logits,
                    )?,
                    ds.label(a),
                ));
                if cfg.method == Method::Siamese {
                    let same = contrastive_loss(&mut tape, embs[0], embs[1], true, cfg.loss.m)?;
                    let diff = contrastive_loss(&mut tape, embs[0], embs[2], false, cfg.loss.m)?;
                    metric_sum += tape.value(same).item() + tape.value(diff).item();
                    metric_terms.push(same);
                    metric_terms.push(diff);
                } else {
                    let tl = triplet_loss(&mut tape, embs[0], embs[1], embs[2], cfg.loss.m)?;
                    metric_sum += tape.value(tl).item();
                    metric_terms.push(tl);
                }
            }
            let sum = tape.add_n(&metric_terms)?;
            let metric = tape.affine(sum, 1.0 / metric_terms.len() as f64, 0.0);
            breakdown.0 = metric_sum / metric_terms.len() as f64;
            let soft = softmax_batch_loss(&mut tape, &logits)?;
            softmax_term = soft;
            total = combined_loss(&mut tape, soft, metric, cfg.loss.beta)?;
        }
    }

    let softmax_val = tape.value(softmax_term).item();
    let total_val = tape.value(total).item();
    if !total_val.is_finite() {
        return Err(Error::NanLoss {
            step: global_step as usize,
            softmax: softmax_val,
            l_pos: breakdown.0,
            l_neg: breakdown.1,
            l_minor: breakdown.2,
        });
    }

    let grads = tape.backward(total)?;
    let flat = vars.flat();
    let grad_slices: Vec<&[f64]> = flat.iter().map(|&v| grads.wrt(v)).collect();
    let mut tensors = params.tensors_mut();
    opt.apply(&mut tensors, &grad_slices)?;

    Ok(StepRecord {
        step: global_step,
        epoch,
        softmax: softmax_val,
        l_pos: breakdown.0,
        l_neg: breakdown.1,
        l_minor: breakdown.2,
        total: total_val,
    })
}

fn check_dataset(ds: &WindowedDataset, cfg: &TrainConfig) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::contract("cannot train on an empty dataset"));
    }
    let classes = ds.num_classes();
    if classes > cfg.model.class_count {
        return Err(Error::contract(format!(
            "dataset labels need {classes} classes but the model has {}",
            cfg.model.class_count
        )));
    }
    if ds.window() == 0 || ds.features() != cfg.model.input_size {
        return Err(Error::contract(format!(
            "dataset features {} do not match model input size {}",
            ds.features(),
            cfg.model.input_size
        )));
    }
    Ok(())
}

struct Driver<'a> {
    cfg: TrainConfig,
    ds: WindowedDataset,
    val: Option<&'a WindowedDataset>,
    params: ModelParams,
    opt: Optimizer,
    epoch: usize,
    global_step: u64,
    best: Option<BestState>,
}

impl<'a> Driver<'a> {
    fn run(mut self, mut sink: Option<&mut dyn Write>) -> Result<TrainOutcome> {
        let steps_per_epoch = (self.ds.len() / self.cfg.batch_size).max(1);
        let hash = config_hash(&self.cfg)?;
        let val_meta = self.val.map(|v| RunMeta {
            seed: self.cfg.seed,
            config_hash: hash.clone(),
            dataset_fingerprint: dataset_fingerprint(v),
            method: self.cfg.method.name().to_string(),
        });

        let mut history = Vec::new();
        let mut val_history = Vec::new();
        let mut stopped_early = false;
        while self.epoch < self.cfg.epochs {
            for _ in 0..steps_per_epoch {
                let record = train_step(
                    &mut self.params,
                    &mut self.opt,
                    &self.ds,
                    &self.cfg,
                    self.epoch,
                    self.global_step,
                )?;
                if let Some(out) = sink.as_mut() {
                    let line = serde_json::to_string(&record)
                        .map_err(|e| Error::config(format!("unloggable record: {e}")))?;
                    writeln!(out, "{line}").map_err(|e| Error::io("training log", e))?;
                }
                history.push(record);
                self.global_step += 1;
            }
            self.epoch += 1;

            if let (Some(val), Some(meta)) = (self.val, &val_meta) {
                let report = evaluate(&self.params, val, meta.clone())?;
                val_history.push(report.macro_f1);
                let improved = self
                    .best
                    .as_ref()
                    .is_none_or(|b| report.macro_f1 > b.macro_f1);
                if improved {
                    self.best = Some(BestState {
                        macro_f1: report.macro_f1,
                        epoch: self.epoch,
                        epochs_since: 0,
                        params: self.params.clone(),
                    });
                } else if let Some(best) = self.best.as_mut() {
                    best.epochs_since += 1;
                    if let Some(patience) = self.cfg.patience {
                        if best.epochs_since >= patience {
                            stopped_early = true;
                            break;
                        }
                    }
                }
            }
        }

        let checkpoint = Checkpoint {
            config_hash: hash,
            config: self.cfg,
            epoch: self.epoch,
            global_step: self.global_step,
            params: self.params.clone(),
            optimizer: self.opt,
            best: self.best.clone(),
        };
        let best_val_macro_f1 = self.best.as_ref().map(|b| b.macro_f1);
        let params = match self.best {
            Some(best) => best.params,
            None => self.params,
        };
        Ok(TrainOutcome {
            params,
            epochs_run: checkpoint.epoch,
            checkpoint,
            history,
            val_history,
            stopped_early,
            best_val_macro_f1,
        })
    }
}

/// The dataset a method actually trains on: OVERSAMPLE balances classes
/// up front, everything else trains on the data as given.
fn effective_dataset(ds: &WindowedDataset, cfg: &TrainConfig) -> WindowedDataset {
    match cfg.method {
        Method::Oversample => {
            let mut rng = stream_rng(cfg.seed, Stream::Data);
            ds.oversample_to_parity(&mut rng)
        }
        _ => ds.clone(),
    }
}

/// Train from scratch with optional validation-based early stopping and
/// an optional line-delimited JSON step log.
pub fn train_full(
    ds: &WindowedDataset,
    val: Option<&WindowedDataset>,
    cfg: &TrainConfig,
    sink: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dataset(ds, cfg)?;
    if let Some(v) = val {
        check_dataset(v, cfg)?;
    }
    let params = ModelParams::init(cfg.model.clone(), cfg.seed)?;
    let opt = Optimizer::for_params(cfg.optimizer, cfg.learning_rate, &params.tensors())?;
    let driver = Driver {
        ds: effective_dataset(ds, cfg),
        cfg: cfg.clone(),
        val,
        params,
        opt,
        epoch: 0,
        global_step: 0,
        best: None,
    };
    driver.run(sink)
}

pub fn train(ds: &WindowedDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_full(ds, None, cfg, None)
}

/// Continue a checkpointed run until `epochs`. Feeding the original
/// dataset and seed reproduces the uninterrupted trajectory bitwise.
pub fn resume_training(
    ck: Checkpoint,
    epochs: usize,
    ds: &WindowedDataset,
    val: Option<&WindowedDataset>,
    sink: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    if epochs < ck.epoch {
        return Err(Error::config(format!(
            "cannot resume to epoch {epochs}, checkpoint is already at {}",
            ck.epoch
        )));
    }
    let mut cfg = ck.config;
    cfg.epochs = epochs;
    cfg.validate()?;
    check_dataset(ds, &cfg)?;
    if let Some(v) = val {
        check_dataset(v, &cfg)?;
    }
    let driver = Driver {
        ds: effective_dataset(ds, &cfg),
        cfg,
        val,
        params: ck.params,
        opt: ck.optimizer,
        epoch: ck.epoch,
        global_step: ck.global_step,
        best: ck.best,
    };
    driver.run(sink)
}
