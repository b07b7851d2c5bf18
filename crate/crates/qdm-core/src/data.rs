//! Dataset ingestion and generation: TE-style multivariate CSV runs,
//! single-channel bearing signal files, a synthetic regime generator for
//! tests, and the self-describing on-disk dataset container.
//!
//! All ingestion ends in [`RawRun`]s (per-row labels over a contiguous
//! series); windowing into a [`WindowedDataset`] happens afterwards so
//! every loader shares one labeling rule.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pairing::{RawWindowSource, WindowedDataset};
use crate::rng::{step_rng, Stream};

/// Sliding-window geometry for the bearing vibration files.
pub const CWRU_WINDOW: usize = 400;
pub const CWRU_STEP: usize = 32;

/// One recorded run: `rows` observations of `features` channels with a
/// class label per row. No missing values; labels are already remapped
/// to contiguous ids.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRun {
    pub source: String,
    features: usize,
    data: Vec<f64>,
    labels: Vec<usize>,
}

impl RawRun {
    pub fn new(
        source: impl Into<String>,
        features: usize,
        data: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if features == 0 {
            return Err(Error::contract("run needs at least one feature"));
        }
        if data.len() % features != 0 {
            return Err(Error::contract(format!(
                "run buffer length {} is not a multiple of feature count {}",
                data.len(),
                features
            )));
        }
        let rows = data.len() / features;
        if labels.len() != rows {
            return Err(Error::contract(format!(
                "run has {rows} rows but {} labels",
                labels.len()
            )));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::contract("run contains non-finite values"));
        }
        Ok(RawRun { source: source.into(), features, data, labels })
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Recorded bijection between class names and contiguous class ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    entries: BTreeMap<String, usize>,
}

impl LabelMap {
    /// Ids must be exactly 0..C-1 with no name or id used twice.
    pub fn new(pairs: impl IntoIterator<Item = (String, usize)>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut ids = Vec::new();
        for (name, id) in pairs {
            if entries.insert(name.clone(), id).is_some() {
                return Err(Error::config(format!("label name {name:?} mapped twice")));
            }
            ids.push(id);
        }
        if entries.is_empty() {
            return Err(Error::config("label map is empty"));
        }
        ids.sort_unstable();
        for (want, &got) in ids.iter().enumerate() {
            if got != want {
                return Err(Error::config(format!(
                    "label ids must cover 0..{} exactly, found {ids:?}",
                    ids.len() - 1
                )));
            }
        }
        Ok(LabelMap { entries })
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.entries.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.entries
            .iter()
            .find(|(_, &v)| v == id)
            .map(|(k, _)| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, usize)> {
        self.entries.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

// ---------------------------------------------------------------------------
// TE-style CSV runs
// ---------------------------------------------------------------------------

/// Which split a TE run file belongs to. Training runs carry a 20-row
/// pre-fault prefix, test runs a 160-row one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TeSplit {
    Train,
    Test,
}

impl TeSplit {
    pub fn normal_prefix(self) -> usize {
        match self {
            TeSplit::Train => 20,
            TeSplit::Test => 160,
        }
    }

    fn file_name(self, fault: u32) -> String {
        match self {
            TeSplit::Train => format!("d{fault:02}.csv"),
            TeSplit::Test => format!("d{fault:02}_te.csv"),
        }
    }
}

/// What to do with the pre-fault rows at the head of each run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NormalRows {
    /// Drop them; classes are the selected faults only.
    #[default]
    Drop,
    /// Keep them as class 0; faults shift up by one.
    KeepAsClass,
}

/// Loaded TE runs plus the fault-id remapping they were built with.
#[derive(Debug, Clone)]
pub struct TeDataset {
    pub runs: Vec<RawRun>,
    pub label_map: LabelMap,
}

fn te_label_map(fault_ids: &[u32], normal: NormalRows) -> Result<(LabelMap, BTreeMap<u32, usize>)> {
    if fault_ids.is_empty() {
        return Err(Error::config("no fault ids selected"));
    }
    let mut sorted = fault_ids.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != fault_ids.len() {
        return Err(Error::config(format!("duplicate fault ids in {fault_ids:?}")));
    }
    if let Some(bad) = sorted.iter().find(|&&f| f == 0 || f > 20) {
        return Err(Error::config(format!(
            "unknown fault id {bad}: TE process faults are 1..=20"
        )));
    }
    let base = match normal {
        NormalRows::Drop => 0,
        NormalRows::KeepAsClass => 1,
    };
    let mut by_fault = BTreeMap::new();
    let mut pairs = Vec::new();
    if normal == NormalRows::KeepAsClass {
        pairs.push(("normal".to_string(), 0));
    }
    for (i, &fault) in sorted.iter().enumerate() {
        by_fault.insert(fault, base + i);
        pairs.push((format!("fault_{fault:02}"), base + i));
    }
    Ok((LabelMap::new(pairs)?, by_fault))
}

fn parse_numeric_csv(path: &Path) -> Result<(usize, Vec<f64>)> {
    let shown = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(shown.clone(), e))?;
    let mut features = 0usize;
    let mut data = Vec::new();
    let mut rows = 0usize;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let mut count = 0usize;
        for token in line.split(',') {
            let token = token.trim();
            let value: f64 = token.parse().map_err(|_| Error::Parse {
                path: shown.clone(),
                line: lineno,
                message: format!("expected a number, found {token:?}"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    path: shown.clone(),
                    line: lineno,
                    message: format!("non-finite value {value}"),
                });
            }
            data.push(value);
            count += 1;
        }
        if rows == 0 {
            features = count;
        } else if count != features {
            return Err(Error::Parse {
                path: shown.clone(),
                line: lineno,
                message: format!("row has {count} columns, expected {features}"),
            });
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Parse {
            path: shown,
            line: 1,
            message: "file is empty".into(),
        });
    }
    Ok((features, data))
}

fn load_te_run(
    dir: &Path,
    fault: u32,
    class: usize,
    split: TeSplit,
    normal: NormalRows,
) -> Result<RawRun> {
    let path = dir.join(split.file_name(fault));
    let shown = path.display().to_string();
    let (features, data) = parse_numeric_csv(&path)?;
    let rows = data.len() / features;
    let prefix = split.normal_prefix();
    if rows <= prefix {
        return Err(Error::Format {
            path: shown,
            message: format!("run of {rows} rows ends inside the {prefix}-row normal prefix"),
        });
    }
    match normal {
        NormalRows::Drop => {
            let data = data[prefix * features..].to_vec();
            let labels = vec![class; rows - prefix];
            RawRun::new(shown, features, data, labels)
        }
        NormalRows::KeepAsClass => {
            let mut labels = vec![0usize; rows];
            labels[prefix..].fill(class);
            RawRun::new(shown, features, data, labels)
        }
    }
}

/// Load the selected fault runs from `dir`, one CSV per fault, named
/// `dNN.csv` (train) or `dNN_te.csv` (test). Rows before the fault onset
/// are dropped or kept as class 0 per `normal`; fault ids are remapped to
/// contiguous classes in ascending order.
pub fn load_te_csv(
    dir: &Path,
    fault_ids: &[u32],
    split: TeSplit,
    normal: NormalRows,
) -> Result<TeDataset> {
    let (label_map, by_fault) = te_label_map(fault_ids, normal)?;
    let runs = by_fault
        .par_iter()
        .map(|(&fault, &class)| load_te_run(dir, fault, class, split, normal))
        .collect::<Result<Vec<_>>>()?;
    Ok(TeDataset { runs, label_map })
}

// ---------------------------------------------------------------------------
// Single-channel signal files
// ---------------------------------------------------------------------------

const SIGNAL_MAGIC: &[u8; 4] = b"QDS1";

/// Where on the bearing the defect sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultLocation {
    Normal,
    Ball,
    InnerRace,
    OuterRace,
}

/// Class ids for the ten-class drive-end bearing setup. `diameter_mils`
/// is the defect diameter in thousandths of an inch (0 for normal).
pub fn cwru_class(location: FaultLocation, diameter_mils: u32) -> Result<usize> {
    let size = |expected_base: usize| match diameter_mils {
        7 => Ok(expected_base),
        14 => Ok(expected_base + 1),
        22 => Ok(expected_base + 2),
        other => Err(Error::config(format!(
            "unknown defect diameter {other} mils: expected 7, 14 or 22"
        ))),
    };
    match location {
        FaultLocation::Normal => {
            if diameter_mils != 0 {
                return Err(Error::config(format!(
                    "normal bearing cannot have a {diameter_mils} mil defect"
                )));
            }
            Ok(0)
        }
        FaultLocation::Ball => size(1),
        FaultLocation::InnerRace => size(4),
        FaultLocation::OuterRace => size(7),
    }
}

/// Name-to-id bijection for the ten-class bearing setup.
pub fn cwru_label_map() -> LabelMap {
    let mut pairs = vec![("normal".to_string(), 0)];
    for (prefix, base) in [("ball", 1), ("inner", 4), ("outer", 7)] {
        for (k, mils) in [7u32, 14, 22].iter().enumerate() {
            pairs.push((format!("{prefix}_{mils:03}"), base + k));
        }
    }
    LabelMap::new(pairs).expect("fixed bearing label map is bijective")
}

fn parse_signal_text(path: &Path, bytes: &[u8]) -> Result<Vec<f64>> {
    let shown = path.display().to_string();
    let text = std::str::from_utf8(bytes).map_err(|_| Error::Format {
        path: shown.clone(),
        message: "signal file is neither text nor QDS1 binary".into(),
    })?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let token = line.trim();
        let value: f64 = token.parse().map_err(|_| Error::Parse {
            path: shown.clone(),
            line: i + 1,
            message: format!("expected a number, found {token:?}"),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse {
                path: shown.clone(),
                line: i + 1,
                message: format!("non-finite value {value}"),
            });
        }
        samples.push(value);
    }
    Ok(samples)
}

fn parse_signal_binary(path: &Path, bytes: &[u8]) -> Result<Vec<f64>> {
    let fail = |message: String| Error::Format {
        path: path.display().to_string(),
        message,
    };
    let body = &bytes[SIGNAL_MAGIC.len()..];
    if body.len() < 8 {
        return Err(fail("binary signal header is truncated".into()));
    }
    let count = u64::from_le_bytes(body[..8].try_into().unwrap()) as usize;
    let payload = &body[8..];
    if payload.len() != count * 8 {
        return Err(fail(format!(
            "binary signal declares {count} samples but carries {} bytes",
            payload.len()
        )));
    }
    Ok(payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Write a signal in the binary form `load_signal` accepts: magic,
/// little-endian sample count, then raw f64 samples.
pub fn write_signal_binary(path: &Path, samples: &[f64]) -> Result<()> {
    let shown = path.display().to_string();
    let file = fs::File::create(path).map_err(|e| Error::io(shown.clone(), e))?;
    let mut out = BufWriter::new(file);
    let io_err = |e| Error::io(shown.clone(), e);
    out.write_all(SIGNAL_MAGIC).map_err(io_err)?;
    out.write_all(&(samples.len() as u64).to_le_bytes())
        .map_err(io_err)?;
    for s in samples {
        out.write_all(&s.to_le_bytes()).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Load a one-channel signal (one numeric per line, or the QDS1 binary
/// form) and window it; every window carries `label`.
pub fn load_signal(path: &Path, window: usize, step: usize, label: usize) -> Result<WindowedDataset> {
    let shown = path.display().to_string();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(shown.clone(), e))?;
    let samples = if bytes.starts_with(SIGNAL_MAGIC) {
        parse_signal_binary(path, &bytes)?
    } else {
        parse_signal_text(path, &bytes)?
    };
    if samples.len() < window {
        return Err(Error::contract(format!(
            "signal {shown} has {} samples, shorter than window {window}",
            samples.len()
        )));
    }
    let labels = vec![label; samples.len()];
    let source = RawWindowSource::new(1, samples)?;
    WindowedDataset::make_windows(source, &labels, window, step)
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

/// Per-class sequence regime: linear drift plus a sinusoid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRegime {
    pub drift: f64,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

/// Recipe for a labeled synthetic dataset. Class k draws sequences
/// x_t = drift_k * u + amplitude_k * sin(2 pi frequency_k * u + phase)
/// with u = t / length, plus N(0, sigma^2) noise; feature j is the same
/// pattern shifted in phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub regimes: Vec<ClassRegime>,
    pub sequences_per_class: usize,
    pub sequence_length: usize,
    pub features: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

const FEATURE_PHASE_SHIFT: f64 = 0.35;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.regimes.len() < 2 {
            return Err(Error::config("synthetic spec needs at least two classes"));
        }
        for (i, a) in self.regimes.iter().enumerate() {
            for b in &self.regimes[i + 1..] {
                if a == b {
                    return Err(Error::config(format!(
                        "classes must have distinct regimes, found duplicate {a:?}"
                    )));
                }
            }
            for v in [a.drift, a.amplitude, a.frequency, a.phase] {
                if !v.is_finite() {
                    return Err(Error::config("regime parameters must be finite"));
                }
            }
        }
        if self.sequences_per_class == 0 {
            return Err(Error::config("sequences_per_class must be positive"));
        }
        if self.sequence_length < 2 {
            return Err(Error::config("sequence_length must be at least 2"));
        }
        if self.features == 0 {
            return Err(Error::config("features must be positive"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config("noise_sigma must be finite and non-negative"));
        }
        Ok(())
    }

    /// Four classes, two of them (2 and 3) deliberately close in regime.
    pub fn four_class(seed: u64) -> Self {
        SyntheticSpec {
            regimes: vec![
                ClassRegime { drift: 0.0, amplitude: 1.0, frequency: 3.0, phase: 0.0 },
                ClassRegime { drift: 1.4, amplitude: 0.7, frequency: 1.5, phase: 0.9 },
                ClassRegime { drift: -0.9, amplitude: 1.0, frequency: 5.0, phase: 0.0 },
                ClassRegime { drift: -0.9, amplitude: 1.0, frequency: 6.0, phase: 0.5 },
            ],
            sequences_per_class: 500,
            sequence_length: 48,
            features: 3,
            noise_sigma: 0.3,
            seed,
        }
    }
}

/// Generate one labeled run per sequence, grouped by class. Deterministic
/// in `spec.seed`; each sequence has its own derived stream, so the
/// output does not depend on generation order.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<RawRun>> {
    spec.validate()?;
    let noise = if spec.noise_sigma > 0.0 {
        Some(Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::config(format!("noise sigma: {e}")))?)
    } else {
        None
    };
    let length = spec.sequence_length;
    let mut runs = Vec::with_capacity(spec.regimes.len() * spec.sequences_per_class);
    for (class, regime) in spec.regimes.iter().enumerate() {
        for s in 0..spec.sequences_per_class {
            let global = class * spec.sequences_per_class + s;
            let mut rng = step_rng(spec.seed, Stream::Data, global as u64);
            let mut data = Vec::with_capacity(length * spec.features);
            for t in 0..length {
                let u = t as f64 / length as f64;
                for j in 0..spec.features {
                    let phase = regime.phase + FEATURE_PHASE_SHIFT * j as f64;
                    let clean = regime.drift * u
                        + regime.amplitude
                            * (2.0 * std::f64::consts::PI * regime.frequency * u + phase).sin();
                    let eps = noise.as_ref().map_or(0.0, |n| n.sample(&mut rng));
                    data.push(clean + eps);
                }
            }
            runs.push(RawRun::new(
                format!("synthetic/class{class}/seq{s}"),
                spec.features,
                data,
                vec![class; length],
            )?);
        }
    }
    Ok(runs)
}

// ---------------------------------------------------------------------------
// Windowing glue and label invariants
// ---------------------------------------------------------------------------

/// Class count if the labels across `runs` form a contiguous 0..C-1 range.
pub fn validate_contiguous_labels(runs: &[RawRun]) -> Result<usize> {
    let mut seen = Vec::new();
    for run in runs {
        for &label in run.labels() {
            if label >= seen.len() {
                seen.resize(label + 1, false);
            }
            seen[label] = true;
        }
    }
    if seen.is_empty() {
        return Err(Error::contract("no labeled rows"));
    }
    if let Some(gap) = seen.iter().position(|&s| !s) {
        return Err(Error::contract(format!(
            "label ids are not contiguous: class {gap} is missing below max {}",
            seen.len() - 1
        )));
    }
    Ok(seen.len())
}

/// Window every run and merge. Labels must already be contiguous.
pub fn windows_from_runs(runs: &[RawRun], window: usize, step: usize) -> Result<WindowedDataset> {
    validate_contiguous_labels(runs)?;
    let parts = runs
        .iter()
        .map(|run| {
            let source = RawWindowSource::new(run.features(), run.data().to_vec())?;
            WindowedDataset::make_windows(source, run.labels(), window, step)
        })
        .collect::<Result<Vec<_>>>()?;
    WindowedDataset::merge(parts)
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

/// Per-feature z-score transform, fitted on one split and applied
/// everywhere. `provenance` is the fingerprint of the runs it was fitted
/// on, so leakage is checkable after the fact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
    provenance: String,
}

impl Standardizer {
    /// Population mean and standard deviation per feature.
    pub fn fit(runs: &[RawRun]) -> Result<Self> {
        let features = match runs.first() {
            Some(run) => run.features(),
            None => return Err(Error::contract("cannot fit standardizer on zero runs")),
        };
        if let Some(bad) = runs.iter().find(|r| r.features() != features) {
            return Err(Error::contract(format!(
                "run {} has {} features, expected {features}",
                bad.source,
                bad.features()
            )));
        }
        let total_rows: usize = runs.iter().map(|r| r.rows()).sum();
        if total_rows == 0 {
            return Err(Error::contract("cannot fit standardizer on zero rows"));
        }
        let n = total_rows as f64;
        let mut mean = vec![0.0; features];
        for run in runs {
            for row in run.data().chunks_exact(features) {
                for (m, &x) in mean.iter_mut().zip(row) {
                    *m += x;
                }
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; features];
        for run in runs {
            for row in run.data().chunks_exact(features) {
                for (j, &x) in row.iter().enumerate() {
                    let d = x - mean[j];
                    var[j] += d * d;
                }
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt()).collect();
        Ok(Standardizer { mean, std, provenance: runs_fingerprint(runs) })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Errors unless `runs` are exactly the runs this was fitted on.
    pub fn verify_fitted_on(&self, runs: &[RawRun]) -> Result<()> {
        let fp = runs_fingerprint(runs);
        if fp != self.provenance {
            return Err(Error::config(format!(
                "standardizer was fitted on split {} but got split {fp}",
                self.provenance
            )));
        }
        Ok(())
    }

    /// Constant features map to 0 rather than dividing by zero.
    pub fn apply(&self, run: &RawRun) -> Result<RawRun> {
        if run.features() != self.mean.len() {
            return Err(Error::contract(format!(
                "run {} has {} features, standardizer expects {}",
                run.source,
                run.features(),
                self.mean.len()
            )));
        }
        let features = run.features();
        let data = run
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let j = i % features;
                let s = if self.std[j] > 0.0 { self.std[j] } else { 1.0 };
                (x - self.mean[j]) / s
            })
            .collect();
        RawRun::new(run.source.clone(), features, data, run.labels().to_vec())
    }

    pub fn apply_all(&self, runs: &[RawRun]) -> Result<Vec<RawRun>> {
        runs.iter().map(|r| self.apply(r)).collect()
    }
}

// ---------------------------------------------------------------------------
// Fingerprints
// ---------------------------------------------------------------------------

fn feed_usize(hasher: &mut Sha256, v: usize) {
    hasher.update((v as u64).to_le_bytes());
}

/// Content hash of a set of runs: geometry, values and labels, not
/// source names.
pub fn runs_fingerprint(runs: &[RawRun]) -> String {
    let mut hasher = Sha256::new();
    feed_usize(&mut hasher, runs.len());
    for run in runs {
        feed_usize(&mut hasher, run.rows());
        feed_usize(&mut hasher, run.features());
        for &x in run.data() {
            hasher.update(x.to_le_bytes());
        }
        for &l in run.labels() {
            feed_usize(&mut hasher, l);
        }
    }
    hex(&hasher.finalize())
}

/// Content hash of a windowed dataset as seen by training: window
/// geometry, every window's values, labels, and the imbalance set.
pub fn dataset_fingerprint(ds: &WindowedDataset) -> String {
    let mut hasher = Sha256::new();
    feed_usize(&mut hasher, ds.window());
    feed_usize(&mut hasher, ds.features());
    feed_usize(&mut hasher, ds.len());
    for i in 0..ds.len() {
        feed_usize(&mut hasher, ds.label(i));
        for &x in ds.window_tensor(i).data() {
            hasher.update(x.to_le_bytes());
        }
    }
    for &c in ds.imbalance_set() {
        feed_usize(&mut hasher, c);
    }
    hex(&hasher.finalize())
}

/// Hash of any serializable config, for run metadata.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)
        .map_err(|e| Error::config(format!("config not hashable: {e}")))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex(&hasher.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

// ---------------------------------------------------------------------------
// On-disk container
// ---------------------------------------------------------------------------

const CONTAINER_MAGIC: &[u8; 4] = b"QDC1";
const CONTAINER_VERSION: u32 = 1;

/// Sidecar metadata carried with a serialized dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContainerMeta {
    pub label_map: Option<LabelMap>,
    pub standardizer: Option<Standardizer>,
}

#[derive(Serialize, Deserialize)]
struct ContainerHeader {
    dtype: String,
    window: usize,
    features: usize,
    labels: Vec<usize>,
    imbalance: Vec<usize>,
    refs: Vec<(usize, usize)>,
    source_rows: Vec<usize>,
    meta: ContainerMeta,
}

/// Serialize the dataset view structure plus raw buffers. Reloading via
/// [`load_container`] reproduces every window tensor bit-exactly.
pub fn save_container(ds: &WindowedDataset, meta: &ContainerMeta, path: &Path) -> Result<()> {
    let shown = path.display().to_string();
    let (sources, refs, labels) = ds.container_parts();
    let header = ContainerHeader {
        dtype: "f64le".into(),
        window: ds.window(),
        features: ds.features(),
        labels: labels.to_vec(),
        imbalance: ds.imbalance_set().iter().copied().collect(),
        refs,
        source_rows: sources.iter().map(|s| s.rows).collect(),
        meta: meta.clone(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::Format { path: shown.clone(), message: e.to_string() })?;
    let file = fs::File::create(path).map_err(|e| Error::io(shown.clone(), e))?;
    let mut out = BufWriter::new(file);
    let io_err = |e| Error::io(shown.clone(), e);
    out.write_all(CONTAINER_MAGIC).map_err(io_err)?;
    out.write_all(&CONTAINER_VERSION.to_le_bytes()).map_err(io_err)?;
    out.write_all(&(header_bytes.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    out.write_all(&header_bytes).map_err(io_err)?;
    for source in sources {
        for &x in &source.data {
            out.write_all(&x.to_le_bytes()).map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)
}

pub fn load_container(path: &Path) -> Result<(WindowedDataset, ContainerMeta)> {
    let shown = path.display().to_string();
    let fail = |message: String| Error::Format { path: shown.clone(), message };
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(shown.clone(), e))?;
    if bytes.len() < 12 || &bytes[..4] != CONTAINER_MAGIC {
        return Err(fail("not a dataset container".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CONTAINER_VERSION {
        return Err(fail(format!("unsupported container version {version}")));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body_start = 12 + header_len;
    if bytes.len() < body_start {
        return Err(fail("container header is truncated".into()));
    }
    let header: ContainerHeader = serde_json::from_slice(&bytes[12..body_start])
        .map_err(|e| fail(format!("bad container header: {e}")))?;
    if header.dtype != "f64le" {
        return Err(fail(format!("unsupported dtype {:?}", header.dtype)));
    }
    let mut cursor = body_start;
    let mut sources = Vec::with_capacity(header.source_rows.len());
    for &rows in &header.source_rows {
        let len = rows * header.features * 8;
        let end = cursor + len;
        if bytes.len() < end {
            return Err(fail("container buffers are truncated".into()));
        }
        let data: Vec<f64> = bytes[cursor..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        sources.push(std::sync::Arc::new(RawWindowSource::new(header.features, data)?));
        cursor = end;
    }
    if cursor != bytes.len() {
        return Err(fail(format!(
            "container carries {} trailing bytes",
            bytes.len() - cursor
        )));
    }
    let ds = WindowedDataset::from_container_parts(
        sources,
        header.refs,
        header.labels,
        header.window,
        header.imbalance.into_iter().collect(),
    )?;
    Ok((ds, header.meta))
}
