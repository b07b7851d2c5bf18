//! Sliding-window dataset construction and quadruplet sampling under
//! class imbalance.
//!
//! Windows are stored as (run, start) offsets over shared raw series, so
//! memory stays linear in the raw data however dense the window overlap
//! is. `materialize` switches to owned per-window copies.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::index::sample as index_sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// One contiguous multivariate series: `rows` observations of `features`
/// channels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RawWindowSource {
    pub features: usize,
    pub rows: usize,
    pub data: Vec<f64>,
}

impl RawWindowSource {
    pub fn new(features: usize, data: Vec<f64>) -> Result<Self> {
        if features == 0 {
            return Err(Error::contract("raw series needs at least one feature"));
        }
        if data.len() % features != 0 {
            return Err(Error::contract(format!(
                "raw buffer length {} is not a multiple of feature count {}",
                data.len(),
                features
            )));
        }
        let rows = data.len() / features;
        Ok(RawWindowSource { features, rows, data })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct WindowRef {
    run: usize,
    start: usize,
}

/// Windowed view over one or more raw runs, with a per-window class label,
/// a class index, and the set of artificially scarce classes.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    sources: Vec<Arc<RawWindowSource>>,
    owned: Option<Vec<Tensor>>,
    refs: Vec<WindowRef>,
    labels: Vec<usize>,
    window: usize,
    features: usize,
    class_index: BTreeMap<usize, Vec<usize>>,
    imbalance_set: BTreeSet<usize>,
}

/// How anchors are drawn for a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorSampling {
    /// Every window equally likely; class frequency follows the data.
    #[default]
    UniformOverSamples,
    /// Draw a class first, then a window inside it.
    UniformOverClasses,
}

/// Index tuple of one sampled quadruplet, plus its gamma flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadrupletIndices {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub minor: usize,
    /// True iff the anchor's class is outside the imbalance set.
    pub gamma: bool,
}

/// Per-class retention for [`WindowedDataset::apply_imbalance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Keep {
    Fraction(f64),
    Count(usize),
}

fn build_class_index(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut index: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        index.entry(c).or_default().push(i);
    }
    index
}

impl WindowedDataset {
    /// Slice `source` into windows of `window` rows every `step` rows. The
    /// window starting at row t is labeled by raw row t+window-1.
    pub fn make_windows(
        source: RawWindowSource,
        raw_labels: &[usize],
        window: usize,
        step: usize,
    ) -> Result<Self> {
        if window == 0 {
            return Err(Error::contract("window size must be positive"));
        }
        if step == 0 {
            return Err(Error::contract("window step must be positive"));
        }
        if raw_labels.len() != source.rows {
            return Err(Error::contract(format!(
                "label count {} does not match row count {}",
                raw_labels.len(),
                source.rows
            )));
        }
        if source.rows < window {
            return Err(Error::contract(format!(
                "series of {} rows is shorter than window {}",
                source.rows, window
            )));
        }
        let count = (source.rows - window) / step + 1;
        let mut refs = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for k in 0..count {
            let start = k * step;
            refs.push(WindowRef { run: 0, start });
            labels.push(raw_labels[start + window - 1]);
        }
        let class_index = build_class_index(&labels);
        Ok(WindowedDataset {
            features: source.features,
            sources: vec![Arc::new(source)],
            owned: None,
            refs,
            labels,
            window,
            class_index,
            imbalance_set: BTreeSet::new(),
        })
    }

    /// Concatenate datasets with identical window and feature geometry.
    pub fn merge(parts: Vec<WindowedDataset>) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("merge of zero datasets"))?;
        let (window, features) = (first.window, first.features);
        let mut sources = Vec::new();
        let mut refs = Vec::new();
        let mut labels = Vec::new();
        for part in parts {
            if part.window != window || part.features != features {
                return Err(Error::contract(format!(
                    "merge geometry mismatch: ({}, {}) vs ({}, {})",
                    part.window, part.features, window, features
                )));
            }
            let run_base = sources.len();
            sources.extend(part.sources);
            refs.extend(
                part.refs
                    .iter()
                    .map(|r| WindowRef { run: r.run + run_base, start: r.start }),
            );
            labels.extend(part.labels);
        }
        let class_index = build_class_index(&labels);
        Ok(WindowedDataset {
            sources,
            owned: None,
            refs,
            labels,
            window,
            features,
            class_index,
            imbalance_set: BTreeSet::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn label(&self, idx: usize) -> usize {
        self.labels[idx]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_index(&self) -> &BTreeMap<usize, Vec<usize>> {
        &self.class_index
    }

    pub fn present_classes(&self) -> Vec<usize> {
        self.class_index.keys().copied().collect()
    }

    /// Highest class id plus one; logits need this many rows.
    pub fn num_classes(&self) -> usize {
        self.class_index.keys().next_back().map_or(0, |c| c + 1)
    }

    pub fn imbalance_set(&self) -> &BTreeSet<usize> {
        &self.imbalance_set
    }

    /// Declare which classes are scarce. Must leave at least one present
    /// class outside the set.
    pub fn set_imbalance_set(&mut self, set: BTreeSet<usize>) -> Result<()> {
        let present: BTreeSet<usize> = self.class_index.keys().copied().collect();
        if !set.is_subset(&present) || set == present {
            return Err(Error::contract(format!(
                "imbalance set {set:?} must be a strict subset of present classes {present:?}"
            )));
        }
        self.imbalance_set = set;
        Ok(())
    }

    /// The window as a `[window, features]` tensor.
    pub fn window_tensor(&self, idx: usize) -> Tensor {
        if let Some(owned) = &self.owned {
            return owned[idx].clone();
        }
        let r = self.refs[idx];
        let src = &self.sources[r.run];
        let lo = r.start * src.features;
        let hi = (r.start + self.window) * src.features;
        Tensor::matrix(self.window, self.features, src.data[lo..hi].to_vec())
    }

    /// Switch to owned per-window copies. Output of `window_tensor` is
    /// unchanged; only the storage strategy differs.
    pub fn materialize(&mut self) {
        if self.owned.is_none() {
            self.owned = Some((0..self.len()).map(|i| self.window_tensor(i)).collect());
        }
    }

    /// View structure for the on-disk container: shared sources plus
    /// (run, start) offsets. Materialized copies are derived state and
    /// are not part of the picture.
    pub(crate) fn container_parts(
        &self,
    ) -> (&[Arc<RawWindowSource>], Vec<(usize, usize)>, &[usize]) {
        let refs = self.refs.iter().map(|r| (r.run, r.start)).collect();
        (&self.sources, refs, &self.labels)
    }

    pub(crate) fn from_container_parts(
        sources: Vec<Arc<RawWindowSource>>,
        refs: Vec<(usize, usize)>,
        labels: Vec<usize>,
        window: usize,
        imbalance: BTreeSet<usize>,
    ) -> Result<Self> {
        if window == 0 {
            return Err(Error::contract("window size must be positive"));
        }
        let features = sources
            .first()
            .ok_or_else(|| Error::contract("dataset without raw sources"))?
            .features;
        if let Some(bad) = sources.iter().find(|s| s.features != features) {
            return Err(Error::contract(format!(
                "source feature count {} does not match dataset feature count {}",
                bad.features, features
            )));
        }
        if labels.len() != refs.len() {
            return Err(Error::contract(format!(
                "label count {} does not match window count {}",
                labels.len(),
                refs.len()
            )));
        }
        for &(run, start) in &refs {
            let rows = sources
                .get(run)
                .ok_or_else(|| {
                    Error::contract(format!("window references missing run {run}"))
                })?
                .rows;
            if start + window > rows {
                return Err(Error::contract(format!(
                    "window at row {start} overruns run {run} of {rows} rows"
                )));
            }
        }
        let refs = refs
            .into_iter()
            .map(|(run, start)| WindowRef { run, start })
            .collect();
        let class_index = build_class_index(&labels);
        let mut ds = WindowedDataset {
            sources,
            owned: None,
            refs,
            labels,
            window,
            features,
            class_index,
            imbalance_set: BTreeSet::new(),
        };
        if !imbalance.is_empty() {
            ds.set_imbalance_set(imbalance)?;
        }
        Ok(ds)
    }

    fn retain_indices(&self, keep: &[usize]) -> Self {
        let refs = keep.iter().map(|&i| self.refs[i]).collect();
        let labels: Vec<usize> = keep.iter().map(|&i| self.labels[i]).collect();
        let owned = self
            .owned
            .as_ref()
            .map(|o| keep.iter().map(|&i| o[i].clone()).collect());
        let class_index = build_class_index(&labels);
        WindowedDataset {
            sources: self.sources.clone(),
            owned,
            refs,
            labels,
            window: self.window,
            features: self.features,
            class_index,
            imbalance_set: self.imbalance_set.clone(),
        }
    }

    /// Uniform per-class subsample without replacement. Classes actually
    /// reduced join the imbalance set.
    pub fn apply_imbalance(
        &self,
        targets: &BTreeMap<usize, Keep>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut keep: Vec<usize> = Vec::new();
        let mut reduced: BTreeSet<usize> = BTreeSet::new();
        for (&class, indices) in &self.class_index {
            let available = indices.len();
            let target = match targets.get(&class) {
                None => available,
                Some(Keep::Fraction(f)) => {
                    if !(0.0..=1.0).contains(f) {
                        return Err(Error::contract(format!(
                            "keep fraction {f} for class {class} outside [0,1]"
                        )));
                    }
                    ((available as f64) * f).round() as usize
                }
                Some(Keep::Count(c)) => *c,
            };
            if target > available {
                return Err(Error::contract(format!(
                    "class {class} has {available} windows, cannot keep {target}"
                )));
            }
            if target == available {
                keep.extend_from_slice(indices);
            } else {
                reduced.insert(class);
                let mut picked: Vec<usize> = index_sample(rng, available, target)
                    .into_iter()
                    .map(|j| indices[j])
                    .collect();
                picked.sort_unstable();
                keep.extend(picked);
            }
        }
        keep.sort_unstable();
        let mut out = self.retain_indices(&keep);
        let mut set = out.imbalance_set.clone();
        set.extend(reduced);
        if !set.is_empty() {
            out.set_imbalance_set(set)?;
        }
        Ok(out)
    }

    /// Duplicate scarce-class windows (sampled with replacement) until
    /// every class matches the largest one, then clear the imbalance set.
    /// Duplicates are extra references to the same underlying rows.
    pub fn oversample_to_parity(&self, rng: &mut ChaCha8Rng) -> Self {
        let largest = self.class_index.values().map(Vec::len).max().unwrap_or(0);
        let mut out = self.clone();
        for indices in self.class_index.values() {
            for _ in indices.len()..largest {
                let pick = indices[rng.random_range(0..indices.len())];
                out.refs.push(out.refs[pick]);
                out.labels.push(out.labels[pick]);
                if let Some(owned) = &mut out.owned {
                    let t = owned[pick].clone();
                    owned.push(t);
                }
            }
        }
        out.class_index = build_class_index(&out.labels);
        out.imbalance_set.clear();
        out
    }

    /// Deterministic stratified split; the second part receives
    /// `ceil(fraction * class size)` windows of each class.
    pub fn split_stratified(&self, fraction: f64, rng: &mut ChaCha8Rng) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::contract(format!(
                "split fraction {fraction} outside [0,1)"
            )));
        }
        let mut held: Vec<usize> = Vec::new();
        let mut kept: Vec<usize> = Vec::new();
        for indices in self.class_index.values() {
            let take = ((indices.len() as f64) * fraction).ceil() as usize;
            let take = take.min(indices.len().saturating_sub(1));
            let chosen: BTreeSet<usize> = index_sample(rng, indices.len(), take)
                .into_iter()
                .map(|j| indices[j])
                .collect();
            for &i in indices {
                if chosen.contains(&i) {
                    held.push(i);
                } else {
                    kept.push(i);
                }
            }
        }
        held.sort_unstable();
        kept.sort_unstable();
        Ok((self.retain_indices(&kept), self.retain_indices(&held)))
    }
}

fn pick(rng: &mut ChaCha8Rng, items: &[usize]) -> usize {
    items[rng.random_range(0..items.len())]
}

/// Uniform pick from `items` with `exclude` removed, assuming `exclude`
/// occurs in `items`. O(1) via the swap-with-last trick.
fn pick_excluding(rng: &mut ChaCha8Rng, items: &[usize], exclude: usize) -> usize {
    debug_assert!(items.len() >= 2);
    let r = rng.random_range(0..items.len() - 1);
    if items[r] == exclude {
        items[items.len() - 1]
    } else {
        items[r]
    }
}

/// Anchor draw for one batch.
pub fn sample_anchors(
    ds: &WindowedDataset,
    batch_size: usize,
    mode: AnchorSampling,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if ds.is_empty() {
        return Err(Error::contract("cannot sample from an empty dataset"));
    }
    if batch_size == 0 {
        return Err(Error::contract("batch size must be positive"));
    }
    let classes = ds.present_classes();
    let out = (0..batch_size)
        .map(|_| match mode {
            AnchorSampling::UniformOverSamples => rng.random_range(0..ds.len()),
            AnchorSampling::UniformOverClasses => {
                let class = classes[rng.random_range(0..classes.len())];
                pick(rng, &ds.class_index[&class])
            }
        })
        .collect();
    Ok(out)
}

/// Complete one anchor into a quadruplet per the pair-membership rule:
/// positive from the anchor's class (anchor itself excluded when the class
/// has a second window); negative from a class that is neither the
/// anchor's nor scarce; minor from the scarce classes other than the
/// anchor's, falling back to any other class when that set is empty.
pub fn complete_quadruplet(
    ds: &WindowedDataset,
    anchor: usize,
    rng: &mut ChaCha8Rng,
) -> Result<QuadrupletIndices> {
    let anchor_class = ds.label(anchor);
    let own = &ds.class_index[&anchor_class];
    let positive =
        if own.len() >= 2 { pick_excluding(rng, own, anchor) } else { anchor };

    let neg_classes: Vec<usize> = ds
        .present_classes()
        .into_iter()
        .filter(|c| *c != anchor_class && !ds.imbalance_set().contains(c))
        .collect();
    if neg_classes.is_empty() {
        return Err(Error::Sampling {
            anchor_class,
            reason: "no class outside the imbalance set differs from the anchor's".into(),
        });
    }
    let neg_class = neg_classes[rng.random_range(0..neg_classes.len())];
    let negative = pick(rng, &ds.class_index[&neg_class]);

    let minor_classes: Vec<usize> = if ds.imbalance_set().len() >= 2 {
        ds.imbalance_set()
            .iter()
            .copied()
            .filter(|c| *c != anchor_class)
            .collect()
    } else {
        Vec::new()
    };
    let minor_classes: Vec<usize> = if minor_classes.is_empty() {
        // Single-imbalance rule (also the fallback): any class but the
        // anchor's.
        ds.present_classes().into_iter().filter(|c| *c != anchor_class).collect()
    } else {
        minor_classes
    };
    if minor_classes.is_empty() {
        return Err(Error::Sampling {
            anchor_class,
            reason: "no class differs from the anchor's".into(),
        });
    }
    let minor_class = minor_classes[rng.random_range(0..minor_classes.len())];
    let minor = pick(rng, &ds.class_index[&minor_class]);

    Ok(QuadrupletIndices {
        anchor,
        positive,
        negative,
        minor,
        gamma: !ds.imbalance_set().contains(&anchor_class),
    })
}

/// Positive and negative partners for the siamese and triplet baselines.
/// The negative may come from any other class; these baselines predate
/// the imbalance-aware rule.
pub fn complete_triplet(
    ds: &WindowedDataset,
    anchor: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(usize, usize)> {
    let anchor_class = ds.label(anchor);
    let own = &ds.class_index[&anchor_class];
    let positive =
        if own.len() >= 2 { pick_excluding(rng, own, anchor) } else { anchor };
    let other: Vec<usize> = ds
        .present_classes()
        .into_iter()
        .filter(|c| *c != anchor_class)
        .collect();
    if other.is_empty() {
        return Err(Error::Sampling {
            anchor_class,
            reason: "no class differs from the anchor's".into(),
        });
    }
    let neg_class = other[rng.random_range(0..other.len())];
    Ok((positive, pick(rng, &ds.class_index[&neg_class])))
}

/// Batch quadruplet draw: `anchor_rng` fixes which windows anchor the
/// batch, `pair_rng` fixes how each is completed. The split keeps anchor
/// batches reusable by samplers that never draw pairs.
pub fn sample_quadruplets(
    ds: &WindowedDataset,
    batch_size: usize,
    mode: AnchorSampling,
    anchor_rng: &mut ChaCha8Rng,
    pair_rng: &mut ChaCha8Rng,
) -> Result<Vec<QuadrupletIndices>> {
    let anchors = sample_anchors(ds, batch_size, mode, anchor_rng)?;
    anchors
        .into_iter()
        .map(|a| complete_quadruplet(ds, a, pair_rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{step_rng, stream_rng, Stream};
    use proptest::prelude::*;

    /// One window per row (window=1, step=1): class structure only.
    fn dataset_from_labels(labels: &[usize]) -> WindowedDataset {
        let data: Vec<f64> = (0..labels.len()).map(|i| i as f64).collect();
        let src = RawWindowSource::new(1, data).unwrap();
        WindowedDataset::make_windows(src, labels, 1, 1).unwrap()
    }

    fn labels_with_counts(counts: &[usize]) -> Vec<usize> {
        counts
            .iter()
            .enumerate()
            .flat_map(|(class, &n)| std::iter::repeat(class).take(n))
            .collect()
    }

    #[test]
    fn window_count_and_starts() {
        let raw: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let labels: Vec<usize> = (0..10).collect();
        let src = RawWindowSource::new(1, raw).unwrap();
        let ds = WindowedDataset::make_windows(src, &labels, 4, 2).unwrap();
        assert_eq!(ds.len(), 4);
        // Starts 0,2,4,6; each label comes from the window's last raw row.
        assert_eq!(ds.labels(), &[3, 5, 7, 9]);
        assert_eq!(ds.window_tensor(1).data(), &[2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn single_window_when_length_equals_window() {
        let raw = vec![1.0, 2.0, 3.0];
        let src = RawWindowSource::new(1, raw).unwrap();
        let ds = WindowedDataset::make_windows(src, &[7, 7, 9], 3, 1).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.label(0), 9);
    }

    #[test]
    fn per_run_window_count_matches_formula() {
        let raw = vec![0.0; 500];
        let labels = vec![3usize; 500];
        let src = RawWindowSource::new(1, raw).unwrap();
        let ds = WindowedDataset::make_windows(src, &labels, 100, 1).unwrap();
        assert_eq!(ds.len(), 401);
    }

    #[test]
    fn windowing_contract_errors() {
        let src = RawWindowSource::new(1, vec![0.0; 3]).unwrap();
        assert!(WindowedDataset::make_windows(src.clone(), &[0, 0, 0], 4, 1).is_err());
        assert!(WindowedDataset::make_windows(src.clone(), &[0, 0, 0], 2, 0).is_err());
        assert!(WindowedDataset::make_windows(src, &[0, 0], 2, 1).is_err());
        assert!(RawWindowSource::new(2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn windows_reconstruct_raw_rows_exactly() {
        let raw: Vec<f64> = (0..24).map(|i| (i as f64) * 0.37 - 2.0).collect();
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let src = RawWindowSource::new(2, raw.clone()).unwrap();
        let mut ds = WindowedDataset::make_windows(src, &labels, 5, 3).unwrap();
        for (k, start) in [(0usize, 0usize), (1, 3), (2, 6)] {
            let w = ds.window_tensor(k);
            assert_eq!(w.shape(), &[5, 2]);
            assert_eq!(w.data(), &raw[start * 2..(start + 5) * 2]);
        }
        let before: Vec<Tensor> = (0..ds.len()).map(|i| ds.window_tensor(i)).collect();
        ds.materialize();
        for (i, b) in before.iter().enumerate() {
            assert_eq!(&ds.window_tensor(i), b);
        }
    }

    #[test]
    fn merge_concatenates_runs() {
        let mk = |offset: f64, label: usize| {
            let raw: Vec<f64> = (0..6).map(|i| offset + i as f64).collect();
            let src = RawWindowSource::new(1, raw).unwrap();
            WindowedDataset::make_windows(src, &[label; 6], 3, 1).unwrap()
        };
        let merged = WindowedDataset::merge(vec![mk(0.0, 0), mk(100.0, 1)]).unwrap();
        assert_eq!(merged.len(), 8);
        assert_eq!(merged.label(0), 0);
        assert_eq!(merged.label(4), 1);
        assert_eq!(merged.window_tensor(4).data(), &[100.0, 101.0, 102.0]);
        assert_eq!(merged.class_index()[&1], vec![4, 5, 6, 7]);

        let bad = mk(0.0, 0);
        let other_geometry = {
            let src = RawWindowSource::new(1, vec![0.0; 6]).unwrap();
            WindowedDataset::make_windows(src, &[0; 6], 2, 1).unwrap()
        };
        assert!(WindowedDataset::merge(vec![bad, other_geometry]).is_err());
    }

    #[test]
    fn imbalance_set_must_be_strict_subset() {
        let mut ds = dataset_from_labels(&labels_with_counts(&[3, 3]));
        assert!(ds.set_imbalance_set(BTreeSet::from([0, 1])).is_err());
        assert!(ds.set_imbalance_set(BTreeSet::from([5])).is_err());
        assert!(ds.set_imbalance_set(BTreeSet::from([1])).is_ok());
    }

    #[test]
    fn quadruplet_membership_three_classes() {
        let mut ds = dataset_from_labels(&labels_with_counts(&[4, 4, 2]));
        ds.set_imbalance_set(BTreeSet::from([2])).unwrap();
        let mut rng = stream_rng(1, Stream::Pairs);
        let anchor = ds.class_index()[&0][0];
        for _ in 0..10_000 {
            let q = complete_quadruplet(&ds, anchor, &mut rng).unwrap();
            assert_eq!(ds.label(q.positive), 0);
            assert_ne!(q.positive, q.anchor);
            assert_eq!(ds.label(q.negative), 1);
            assert!(matches!(ds.label(q.minor), 1 | 2));
            assert!(q.gamma);
        }
    }

    #[test]
    fn quadruplet_membership_multi_imbalance() {
        let mut ds = dataset_from_labels(&labels_with_counts(&[6, 2, 2]));
        ds.set_imbalance_set(BTreeSet::from([1, 2])).unwrap();
        let mut rng = stream_rng(2, Stream::Pairs);
        let anchor = ds.class_index()[&1][0];
        for _ in 0..1000 {
            let q = complete_quadruplet(&ds, anchor, &mut rng).unwrap();
            assert!(!q.gamma);
            assert_eq!(ds.label(q.negative), 0);
            assert_eq!(ds.label(q.minor), 2);
        }
    }

    #[test]
    fn quadruplet_membership_two_classes() {
        let mut ds = dataset_from_labels(&labels_with_counts(&[5, 2]));
        ds.set_imbalance_set(BTreeSet::from([1])).unwrap();
        let mut rng = stream_rng(3, Stream::Pairs);
        let anchor = ds.class_index()[&1][0];
        for _ in 0..1000 {
            let q = complete_quadruplet(&ds, anchor, &mut rng).unwrap();
            assert_eq!(ds.label(q.positive), 1);
            assert_eq!(ds.label(q.negative), 0);
            assert_eq!(ds.label(q.minor), 0);
            assert!(!q.gamma);
        }
    }

    #[test]
    fn empty_negative_candidates_name_the_anchor_class() {
        let mut ds = dataset_from_labels(&labels_with_counts(&[5, 2]));
        ds.set_imbalance_set(BTreeSet::from([1])).unwrap();
        let mut rng = stream_rng(4, Stream::Pairs);
        // Anchor in class 0: the only other class is scarce, so no
        // negative exists.
        let anchor = ds.class_index()[&0][0];
        match complete_quadruplet(&ds, anchor, &mut rng) {
            Err(Error::Sampling { anchor_class, .. }) => assert_eq!(anchor_class, 0),
            other => panic!("expected sampling error, got {other:?}"),
        }
    }

    #[test]
    fn negative_class_frequencies_are_uniform() {
        let ds = dataset_from_labels(&labels_with_counts(&[4, 12, 12, 12]));
        let mut rng = stream_rng(5, Stream::Pairs);
        let anchor = ds.class_index()[&0][0];
        let mut counts = [0usize; 4];
        let draws = 50_000;
        for _ in 0..draws {
            let q = complete_quadruplet(&ds, anchor, &mut rng).unwrap();
            counts[ds.label(q.negative)] += 1;
        }
        assert_eq!(counts[0], 0);
        for &c in &counts[1..] {
            let freq = c as f64 / draws as f64;
            assert!(
                (freq - 1.0 / 3.0).abs() < 0.02,
                "negative class frequency {freq} strays from 1/3"
            );
        }
    }

    #[test]
    fn anchor_modes_differ_in_class_frequency() {
        let ds = dataset_from_labels(&labels_with_counts(&[90, 10]));
        let mut rng = step_rng(6, Stream::Batch, 0);
        let anchors =
            sample_anchors(&ds, 20_000, AnchorSampling::UniformOverSamples, &mut rng).unwrap();
        let minority =
            anchors.iter().filter(|&&a| ds.label(a) == 1).count() as f64 / 20_000.0;
        assert!((minority - 0.1).abs() < 0.02);

        let mut rng = step_rng(6, Stream::Batch, 1);
        let anchors =
            sample_anchors(&ds, 20_000, AnchorSampling::UniformOverClasses, &mut rng).unwrap();
        let minority =
            anchors.iter().filter(|&&a| ds.label(a) == 1).count() as f64 / 20_000.0;
        assert!((minority - 0.5).abs() < 0.02);
    }

    #[test]
    fn imbalance_subsampling_hits_exact_targets() {
        let ds = dataset_from_labels(&labels_with_counts(&[4800, 480]));
        let mut rng = stream_rng(7, Stream::Data);
        let targets = BTreeMap::from([(0usize, Keep::Count(480))]);
        let reduced = ds.apply_imbalance(&targets, &mut rng).unwrap();
        assert_eq!(reduced.class_index()[&0].len(), 480);
        assert_eq!(reduced.class_index()[&1].len(), 480);
        assert_eq!(reduced.imbalance_set(), &BTreeSet::from([0]));

        let mut rng = stream_rng(7, Stream::Data);
        let fractional = BTreeMap::from([(0usize, Keep::Fraction(0.1))]);
        let reduced2 = ds.apply_imbalance(&fractional, &mut rng).unwrap();
        assert_eq!(reduced2.class_index()[&0].len(), 480);
    }

    #[test]
    fn keeping_everything_changes_nothing() {
        let ds = dataset_from_labels(&labels_with_counts(&[10, 5]));
        let mut rng = stream_rng(8, Stream::Data);
        let targets = BTreeMap::from([(0usize, Keep::Count(10)), (1, Keep::Count(5))]);
        let same = ds.apply_imbalance(&targets, &mut rng).unwrap();
        assert_eq!(same.labels(), ds.labels());
        assert!(same.imbalance_set().is_empty());
        for i in 0..ds.len() {
            assert_eq!(same.window_tensor(i), ds.window_tensor(i));
        }
    }

    #[test]
    fn subsampling_is_seeded_and_size_stable() {
        let ds = dataset_from_labels(&labels_with_counts(&[100, 20]));
        let targets = BTreeMap::from([(0usize, Keep::Count(10))]);
        let run = |seed: u64| {
            let mut rng = stream_rng(seed, Stream::Data);
            let out = ds.apply_imbalance(&targets, &mut rng).unwrap();
            (0..out.len()).map(|i| out.window_tensor(i).data()[0]).collect::<Vec<_>>()
        };
        let (a, b, c) = (run(1), run(1), run(2));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), c.len());
    }

    #[test]
    fn oversampling_excess_target_is_an_error() {
        let ds = dataset_from_labels(&labels_with_counts(&[10, 5]));
        let mut rng = stream_rng(9, Stream::Data);
        let targets = BTreeMap::from([(1usize, Keep::Count(6))]);
        assert!(ds.apply_imbalance(&targets, &mut rng).is_err());
    }

    #[test]
    fn oversample_reaches_parity_and_clears_imbalance() {
        let mut ds = dataset_from_labels(&labels_with_counts(&[12, 3, 4]));
        ds.set_imbalance_set(BTreeSet::from([1, 2])).unwrap();
        let mut rng = stream_rng(10, Stream::Data);
        let balanced = ds.oversample_to_parity(&mut rng);
        for indices in balanced.class_index().values() {
            assert_eq!(indices.len(), 12);
        }
        assert!(balanced.imbalance_set().is_empty());
        // Duplicates reference real windows of the same class.
        for i in ds.len()..balanced.len() {
            let v = balanced.window_tensor(i).data()[0];
            let original = v as usize;
            assert_eq!(ds.label(original), balanced.label(i));
        }
    }

    #[test]
    fn stratified_split_is_deterministic_and_disjoint() {
        let ds = dataset_from_labels(&labels_with_counts(&[20, 10]));
        let mut rng = stream_rng(11, Stream::Data);
        let (train, val) = ds.split_stratified(0.2, &mut rng).unwrap();
        assert_eq!(train.len() + val.len(), ds.len());
        assert_eq!(val.class_index()[&0].len(), 4);
        assert_eq!(val.class_index()[&1].len(), 2);
        let mut rng2 = stream_rng(11, Stream::Data);
        let (train2, _) = ds.split_stratified(0.2, &mut rng2).unwrap();
        assert_eq!(train.labels(), train2.labels());
    }

    proptest! {
        #[test]
        fn quadruplet_predicates_hold_everywhere(
            counts in proptest::collection::vec(1usize..6, 2..6),
            imbalance_mask in proptest::collection::vec(proptest::bool::ANY, 6),
            seed in 0u64..1000,
        ) {
            let labels = labels_with_counts(&counts);
            let mut ds = dataset_from_labels(&labels);
            let present = ds.present_classes();
            let imbalance: BTreeSet<usize> = present
                .iter()
                .copied()
                .filter(|&c| imbalance_mask[c])
                .collect();
            prop_assume!(imbalance.len() < present.len());
            if !imbalance.is_empty() {
                ds.set_imbalance_set(imbalance.clone()).unwrap();
            }
            let mut anchor_rng = step_rng(seed, Stream::Batch, 0);
            let mut pair_rng = step_rng(seed, Stream::Pairs, 0);
            match sample_quadruplets(
                &ds, 20, AnchorSampling::UniformOverSamples,
                &mut anchor_rng, &mut pair_rng,
            ) {
                Ok(batch) => {
                    for q in batch {
                        let ac = ds.label(q.anchor);
                        prop_assert_eq!(ds.label(q.positive), ac);
                        if ds.class_index()[&ac].len() >= 2 {
                            prop_assert_ne!(q.positive, q.anchor);
                        }
                        let nc = ds.label(q.negative);
                        prop_assert_ne!(nc, ac);
                        prop_assert!(!imbalance.contains(&nc));
                        let mc = ds.label(q.minor);
                        let strict: Vec<usize> = imbalance
                            .iter().copied().filter(|&c| c != ac).collect();
                        if imbalance.len() >= 2 && !strict.is_empty() {
                            prop_assert!(strict.contains(&mc));
                        } else {
                            prop_assert_ne!(mc, ac);
                        }
                        prop_assert_eq!(q.gamma, !imbalance.contains(&ac));
                    }
                }
                Err(Error::Sampling { anchor_class, .. }) => {
                    // Legal only when every other class is scarce.
                    let eligible = present.iter().any(|&c| {
                        c != anchor_class && !imbalance.contains(&c)
                    });
                    prop_assert!(!eligible);
                }
                Err(e) => return Err(TestCaseError::fail(format!("unexpected error {e}"))),
            }
        }
    }
}
