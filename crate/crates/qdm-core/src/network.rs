//! LSTM stack, embedding head, and classifier head with one shared
//! parameter set across all quadruplet branches.
//!
//! Gate equations follow the recurrence
//!   f_t = sigma(W_fh h_{t-1} + W_fx x_t)
//!   r_t = sigma(W_rh h_{t-1} + W_rx x_t)
//!   o_t = sigma(W_oh h_{t-1} + W_ox x_t)
//!   c'_t = tanh(W_ch h_{t-1} + W_cx x_t)
//!   c_t = f_t . c_{t-1} + r_t . c'_t
//!   h_t = o_t . tanh(c_t)
//! with no bias terms. That is a real divergence from common LSTM
//! practice, kept deliberately.

use std::fs;
use std::io::{Read as _, Write as _};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Hyperparameters that fix every tensor shape in the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_size: usize,
    pub hidden_size: usize,
    pub layer_count: usize,
    pub embed_dim: usize,
    pub class_count: usize,
    pub dropout_rate: f64,
    /// Squash logits with sigma before softmax. Atypical; off by default,
    /// available to reproduce the literal head equation.
    #[serde(default)]
    pub literal_sigmoid_logits: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.hidden_size == 0 || self.layer_count == 0 {
            return Err(Error::config("model dimensions must be positive"));
        }
        if self.embed_dim == 0 || self.embed_dim >= self.hidden_size {
            return Err(Error::config(format!(
                "embed_dim must be in 1..hidden_size, got {} with hidden {}",
                self.embed_dim, self.hidden_size
            )));
        }
        if self.class_count < 2 {
            return Err(Error::config("class_count must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout_rate must lie in [0,1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Gate weights for one LSTM layer: `*h` act on the previous hidden
/// state, `*x` on the layer input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerParams {
    pub w_fh: Tensor,
    pub w_fx: Tensor,
    pub w_rh: Tensor,
    pub w_rx: Tensor,
    pub w_oh: Tensor,
    pub w_ox: Tensor,
    pub w_ch: Tensor,
    pub w_cx: Tensor,
}

impl LstmLayerParams {
    fn tensors(&self) -> [&Tensor; 8] {
        [
            &self.w_fh, &self.w_fx, &self.w_rh, &self.w_rx, &self.w_oh, &self.w_ox, &self.w_ch,
            &self.w_cx,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 8] {
        [
            &mut self.w_fh,
            &mut self.w_fx,
            &mut self.w_rh,
            &mut self.w_rx,
            &mut self.w_oh,
            &mut self.w_ox,
            &mut self.w_ch,
            &mut self.w_cx,
        ]
    }
}

/// Tape handles for one layer, in the same roles as [`LstmLayerParams`].
#[derive(Debug, Clone, Copy)]
pub struct LstmLayerVars {
    pub w_fh: Var,
    pub w_fx: Var,
    pub w_rh: Var,
    pub w_rx: Var,
    pub w_oh: Var,
    pub w_ox: Var,
    pub w_ch: Var,
    pub w_cx: Var,
}

/// The single parameter instance backing every branch evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub lstm: Vec<LstmLayerParams>,
    /// Embedding head, `[embed_dim, hidden_size]`.
    pub w_fe: Tensor,
    /// Classifier head, `[class_count, embed_dim]`.
    pub w_fc: Tensor,
}

/// Tape handles for the whole model. Registering the model once and
/// evaluating all branches against these same handles is what makes the
/// branches weight-sharing.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub lstm: Vec<LstmLayerVars>,
    pub w_fe: Var,
    pub w_fc: Var,
}

impl ModelVars {
    /// Flat parameter order: per layer fh, fx, rh, rx, oh, ox, ch, cx;
    /// then the embedding head; the classifier head is last.
    pub fn flat(&self) -> Vec<Var> {
        let mut out = Vec::with_capacity(self.lstm.len() * 8 + 2);
        for l in &self.lstm {
            out.extend_from_slice(&[
                l.w_fh, l.w_fx, l.w_rh, l.w_rx, l.w_oh, l.w_ox, l.w_ch, l.w_cx,
            ]);
        }
        out.push(self.w_fe);
        out.push(self.w_fc);
        out
    }
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = 1.0 / (cols as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::matrix(rows, cols, data)
}

impl ModelParams {
    /// Fresh parameters, every matrix uniform in
    /// `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`, deterministic per seed.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, Stream::Init);
        let h = config.hidden_size;
        let mut lstm = Vec::with_capacity(config.layer_count);
        for layer in 0..config.layer_count {
            let input = if layer == 0 { config.input_size } else { h };
            lstm.push(LstmLayerParams {
                w_fh: uniform_matrix(&mut rng, h, h),
                w_fx: uniform_matrix(&mut rng, h, input),
                w_rh: uniform_matrix(&mut rng, h, h),
                w_rx: uniform_matrix(&mut rng, h, input),
                w_oh: uniform_matrix(&mut rng, h, h),
                w_ox: uniform_matrix(&mut rng, h, input),
                w_ch: uniform_matrix(&mut rng, h, h),
                w_cx: uniform_matrix(&mut rng, h, input),
            });
        }
        let w_fe = uniform_matrix(&mut rng, config.embed_dim, h);
        let w_fc = uniform_matrix(&mut rng, config.class_count, config.embed_dim);
        Ok(ModelParams { config, lstm, w_fe, w_fc })
    }

    /// All parameter tensors in the flat order of [`ModelVars::flat`].
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::with_capacity(self.lstm.len() * 8 + 2);
        for l in &self.lstm {
            out.extend_from_slice(&l.tensors());
        }
        out.push(&self.w_fe);
        out.push(&self.w_fc);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::with_capacity(self.lstm.len() * 8 + 2);
        for l in &mut self.lstm {
            out.extend(l.tensors_mut());
        }
        out.push(&mut self.w_fe);
        out.push(&mut self.w_fc);
        out
    }

    /// Put every parameter on `tape` exactly once, as gradient targets when
    /// `trainable`. All forward branches must go through the returned
    /// handles; that is the weight-sharing invariant.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> ModelVars {
        let mut reg = |t: &Tensor| {
            if trainable {
                tape.leaf(t.clone().with_grad())
            } else {
                tape.constant(t.clone())
            }
        };
        let lstm = self
            .lstm
            .iter()
            .map(|l| LstmLayerVars {
                w_fh: reg(&l.w_fh),
                w_fx: reg(&l.w_fx),
                w_rh: reg(&l.w_rh),
                w_rx: reg(&l.w_rx),
                w_oh: reg(&l.w_oh),
                w_ox: reg(&l.w_ox),
                w_ch: reg(&l.w_ch),
                w_cx: reg(&l.w_cx),
            })
            .collect();
        ModelVars { lstm, w_fe: reg(&self.w_fe), w_fc: reg(&self.w_fc) }
    }

    /// Embedding of one window, dropout off. Builds a throwaway tape.
    pub fn embed_window(&self, window: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let h = lstm_forward(&mut tape, &vars.lstm, window, 0.0, false, None)?;
        let p = embed(&mut tape, vars.w_fe, h)?;
        Ok(tape.value(p).data().to_vec())
    }

    /// Predicted class index for one window (argmax of logits, dropout off).
    pub fn predict(&self, window: &Tensor) -> Result<usize> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let h = lstm_forward(&mut tape, &vars.lstm, window, 0.0, false, None)?;
        let p = embed(&mut tape, vars.w_fe, h)?;
        let logits = classify_logits(
            &mut tape,
            vars.w_fc,
            p,
            self.config.literal_sigmoid_logits,
        )?;
        let z = tape.value(logits).data();
        let mut best = 0;
        for (i, &v) in z.iter().enumerate() {
            if v > z[best] {
                best = i;
            }
        }
        Ok(best)
    }
}

/// Inverted dropout: zero each element with probability `rate`, scale
/// survivors by `1/(1-rate)` so eval needs no rescaling.
pub fn apply_dropout(tape: &mut Tape, x: Var, rate: f64, rng: &mut ChaCha8Rng) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::contract(format!("dropout rate {rate} outside [0,1)")));
    }
    let n = tape.value(x).numel();
    let scale = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { scale })
        .collect();
    let shape = tape.value(x).shape().to_vec();
    let m = tape.constant(Tensor::new(shape, mask));
    tape.mul(x, m)
}

/// Run the LSTM stack over `sequence` (shape `[T, input_size]`) and return
/// the last top-layer hidden state. Dropout is applied to inter-layer
/// hidden states only, and only when `training`.
pub fn lstm_forward(
    tape: &mut Tape,
    layers: &[LstmLayerVars],
    sequence: &Tensor,
    dropout_rate: f64,
    training: bool,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    if sequence.shape().len() != 2 {
        return Err(Error::contract(format!(
            "lstm_forward expects a [T, input] sequence, got shape {:?}",
            sequence.shape()
        )));
    }
    let t_len = sequence.shape()[0];
    if t_len == 0 {
        return Err(Error::contract("lstm_forward on an empty sequence"));
    }
    if layers.is_empty() {
        return Err(Error::contract("lstm_forward with no layers"));
    }
    let dropping = training && dropout_rate > 0.0;
    if dropping && dropout_rng.is_none() {
        return Err(Error::contract(
            "training-mode dropout requires a dropout generator",
        ));
    }

    let mut inputs: Vec<Var> =
        (0..t_len).map(|t| tape.constant(sequence.row(t))).collect();

    let last = layers.len() - 1;
    for (li, layer) in layers.iter().enumerate() {
        let hidden = tape.value(layer.w_fh).shape()[0];
        let mut h = tape.constant(Tensor::zeros(vec![hidden]));
        let mut c = tape.constant(Tensor::zeros(vec![hidden]));
        let mut outs = Vec::with_capacity(t_len);
        for &x in &inputs {
            let fh = tape.matmul(layer.w_fh, h)?;
            let fx = tape.matmul(layer.w_fx, x)?;
            let fsum = tape.add(fh, fx)?;
            let f = tape.sigmoid(fsum);

            let rh = tape.matmul(layer.w_rh, h)?;
            let rx = tape.matmul(layer.w_rx, x)?;
            let rsum = tape.add(rh, rx)?;
            let r = tape.sigmoid(rsum);

            let oh = tape.matmul(layer.w_oh, h)?;
            let ox = tape.matmul(layer.w_ox, x)?;
            let osum = tape.add(oh, ox)?;
            let o = tape.sigmoid(osum);

            let ch = tape.matmul(layer.w_ch, h)?;
            let cx = tape.matmul(layer.w_cx, x)?;
            let csum = tape.add(ch, cx)?;
            let chat = tape.tanh(csum);

            let keep = tape.mul(f, c)?;
            let write = tape.mul(r, chat)?;
            c = tape.add(keep, write)?;
            let tc = tape.tanh(c);
            h = tape.mul(o, tc)?;
            outs.push(h);
        }
        if li < last && dropping {
            let rng = dropout_rng.as_deref_mut().expect("checked above");
            for out in outs.iter_mut() {
                *out = apply_dropout(tape, *out, dropout_rate, rng)?;
            }
        }
        inputs = outs;
    }
    Ok(*inputs.last().expect("t_len >= 1"))
}

/// Embedding head: sigma(W_fe . feature).
pub fn embed(tape: &mut Tape, w_fe: Var, feature: Var) -> Result<Var> {
    let z = tape.matmul(w_fe, feature)?;
    Ok(tape.sigmoid(z))
}

/// Classifier head: linear logits by default, sigma-squashed when the
/// literal head equation is requested.
pub fn classify_logits(
    tape: &mut Tape,
    w_fc: Var,
    embedding: Var,
    literal_sigmoid: bool,
) -> Result<Var> {
    let z = tape.matmul(w_fc, embedding)?;
    Ok(if literal_sigmoid { tape.sigmoid(z) } else { z })
}

/// Result of one quadruplet forward: embeddings in anchor, positive,
/// negative, minor order, plus anchor logits.
pub struct QuadrupletForward {
    pub anchor: Var,
    pub positive: Var,
    pub negative: Var,
    pub minor: Var,
    pub logits: Var,
}

/// Evaluate all four branches against one shared parameter set. Each
/// branch gets its own dropout generator so branch masks are independent
/// yet reproducible.
#[allow(clippy::too_many_arguments)]
pub fn forward_quadruplet(
    tape: &mut Tape,
    vars: &ModelVars,
    config: &ModelConfig,
    sequences: [&Tensor; 4],
    training: bool,
    mut dropout_rngs: Option<[&mut ChaCha8Rng; 4]>,
) -> Result<QuadrupletForward> {
    let shape = sequences[0].shape();
    for s in &sequences[1..] {
        if s.shape() != shape {
            return Err(Error::contract(format!(
                "quadruplet branches must share one shape, got {:?} and {:?}",
                shape,
                s.shape()
            )));
        }
    }
    let mut branch = |tape: &mut Tape, i: usize| -> Result<Var> {
        let rng = match dropout_rngs.as_mut() {
            Some(rngs) => Some(&mut *rngs[i]),
            None => None,
        };
        let h = lstm_forward(
            tape,
            &vars.lstm,
            sequences[i],
            config.dropout_rate,
            training,
            rng,
        )?;
        embed(tape, vars.w_fe, h)
    };
    let anchor = branch(tape, 0)?;
    let positive = branch(tape, 1)?;
    let negative = branch(tape, 2)?;
    let minor = branch(tape, 3)?;
    let logits = classify_logits(tape, vars.w_fc, anchor, config.literal_sigmoid_logits)?;
    Ok(QuadrupletForward { anchor, positive, negative, minor, logits })
}

// ---- checkpoint I/O --------------------------------------------------------

const WEIGHTS_MAGIC: &[u8; 4] = b"QDMW";
const WEIGHTS_VERSION: u32 = 1;

fn fmt_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format { path: path.display().to_string(), message: message.into() }
}

fn write_tensor(buf: &mut Vec<u8>, t: &Tensor) {
    buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(fmt_err(self.path, "truncated weight file"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let ndim = self.u32()? as usize;
        if ndim == 0 || ndim > 2 {
            return Err(fmt_err(self.path, format!("bad tensor rank {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        if numel == 0 || numel > (1 << 28) {
            return Err(fmt_err(self.path, format!("bad tensor shape {shape:?}")));
        }
        let raw = self.take(numel * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Tensor::new(shape, data))
    }
}

impl ModelParams {
    /// Serialize config, config hash, and every weight buffer. The f64
    /// payload is raw little-endian bits, so round-trips are bit-exact.
    pub fn save_weights(&self, path: &Path, config_hash: &[u8; 32]) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(WEIGHTS_MAGIC);
        buf.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        buf.extend_from_slice(config_hash);
        let cfg = serde_json::to_vec(&self.config)
            .map_err(|e| fmt_err(path, format!("config serialization: {e}")))?;
        buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        buf.extend_from_slice(&cfg);
        buf.extend_from_slice(&(self.tensors().len() as u32).to_le_bytes());
        for t in self.tensors() {
            write_tensor(&mut buf, t);
        }
        let mut f = fs::File::create(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        f.write_all(&buf).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    }

    /// Inverse of [`save_weights`](Self::save_weights); returns the stored
    /// config hash alongside the parameters.
    pub fn load_weights(path: &Path) -> Result<(Self, [u8; 32])> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut r = Reader { bytes: &bytes, pos: 0, path };
        if r.take(4)? != WEIGHTS_MAGIC {
            return Err(fmt_err(path, "not a model weight file (bad magic)"));
        }
        let version = r.u32()?;
        if version != WEIGHTS_VERSION {
            return Err(fmt_err(path, format!("unsupported weight file version {version}")));
        }
        let mut hash = [0u8; 32];
        hash.copy_from_slice(r.take(32)?);
        let cfg_len = r.u32()? as usize;
        let config: ModelConfig = serde_json::from_slice(r.take(cfg_len)?)
            .map_err(|e| fmt_err(path, format!("config payload: {e}")))?;
        config.validate()?;

        let count = r.u32()? as usize;
        let expected = config.layer_count * 8 + 2;
        if count != expected {
            return Err(fmt_err(
                path,
                format!("expected {expected} tensors, file holds {count}"),
            ));
        }
        let mut template = ModelParams::init(config.clone(), 0)?;
        for t in template.tensors_mut() {
            let loaded = r.tensor()?;
            if loaded.shape() != t.shape() {
                return Err(fmt_err(
                    path,
                    format!(
                        "tensor shape {:?} does not match config shape {:?}",
                        loaded.shape(),
                        t.shape()
                    ),
                ));
            }
            *t = loaded;
        }
        if r.pos != bytes.len() {
            return Err(fmt_err(path, "trailing bytes after last tensor"));
        }
        Ok((template, hash))
    }
}
