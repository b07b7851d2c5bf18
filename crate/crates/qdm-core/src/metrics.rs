//! One-vs-rest recall and F1, confusion matrices, macro averages, and
//! multi-run aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::ModelParams;
use crate::pairing::WindowedDataset;

/// Row = true class, column = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn record(&mut self, true_class: usize, predicted: usize) {
        assert!(true_class < self.classes && predicted < self.classes);
        self.counts[true_class * self.classes + predicted] += 1;
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Self {
        let classes = rows.len();
        let mut cm = ConfusionMatrix::new(classes);
        for (t, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), classes);
            for (p, &n) in row.iter().enumerate() {
                cm.counts[t * classes + p] = n;
            }
        }
        cm
    }

    pub fn count(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn true_positives(&self, class: usize) -> u64 {
        self.count(class, class)
    }

    pub fn false_negatives(&self, class: usize) -> u64 {
        (0..self.classes).filter(|&p| p != class).map(|p| self.count(class, p)).sum()
    }

    pub fn false_positives(&self, class: usize) -> u64 {
        (0..self.classes).filter(|&t| t != class).map(|t| self.count(t, class)).sum()
    }

    /// TP / (TP + FN); 0 when the class has no true samples.
    pub fn recall(&self, class: usize) -> f64 {
        let tp = self.true_positives(class);
        let denom = tp + self.false_negatives(class);
        if denom == 0 {
            0.0
        } else {
            tp as f64 / denom as f64
        }
    }

    /// 2TP / (2TP + FN + FP); 0 when that denominator is empty.
    pub fn f1(&self, class: usize) -> f64 {
        let tp = self.true_positives(class);
        let denom = 2 * tp + self.false_negatives(class) + self.false_positives(class);
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    }
}

/// Per-class counts and rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub fn_count: u64,
    pub fp_count: u64,
    /// True iff the class had no true samples; its rates are defined 0.
    pub zero_support: bool,
}

/// Provenance attached to a report.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub config_hash: String,
    pub dataset_fingerprint: String,
    pub method: String,
}

/// Evaluation of one model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: BTreeMap<usize, ClassMetrics>,
    /// Unweighted means over classes present in the dataset.
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
    pub meta: RunMeta,
}

impl EvalReport {
    /// Metrics for every class that actually occurs as a true label.
    pub fn from_confusion(confusion: ConfusionMatrix, meta: RunMeta) -> Self {
        let present: Vec<usize> = (0..confusion.classes())
            .filter(|&c| confusion.true_positives(c) + confusion.false_negatives(c) > 0)
            .collect();
        let mut per_class = BTreeMap::new();
        for c in 0..confusion.classes() {
            let tp = confusion.true_positives(c);
            let fn_count = confusion.false_negatives(c);
            let fp_count = confusion.false_positives(c);
            if tp + fn_count + fp_count == 0 {
                continue;
            }
            per_class.insert(
                c,
                ClassMetrics {
                    recall: confusion.recall(c),
                    f1: confusion.f1(c),
                    tp,
                    fn_count,
                    fp_count,
                    zero_support: tp + fn_count == 0,
                },
            );
        }
        let n = present.len().max(1) as f64;
        let macro_recall = present.iter().map(|&c| confusion.recall(c)).sum::<f64>() / n;
        let macro_f1 = present.iter().map(|&c| confusion.f1(c)).sum::<f64>() / n;
        EvalReport { per_class, macro_recall, macro_f1, confusion, meta }
    }

    /// Macro averages leaving out one class (e.g. the normal condition,
    /// when only fault rows are of interest).
    pub fn macro_excluding(&self, class: usize) -> (f64, f64) {
        let rest: Vec<&ClassMetrics> = self
            .per_class
            .iter()
            .filter(|(&c, m)| c != class && !m.zero_support)
            .map(|(_, m)| m)
            .collect();
        if rest.is_empty() {
            return (0.0, 0.0);
        }
        let n = rest.len() as f64;
        (
            rest.iter().map(|m| m.recall).sum::<f64>() / n,
            rest.iter().map(|m| m.f1).sum::<f64>() / n,
        )
    }

    /// Fixed-width per-class table.
    pub fn to_table_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8} {:>8} {:>8} {:>6} {:>6} {:>6}", "class", "recall", "f1", "TP", "FN", "FP");
        for (c, m) in &self.per_class {
            let _ = writeln!(
                out,
                "{:<8} {:>8.4} {:>8.4} {:>6} {:>6} {:>6}{}",
                c,
                m.recall,
                m.f1,
                m.tp,
                m.fn_count,
                m.fp_count,
                if m.zero_support { "  (no true samples)" } else { "" }
            );
        }
        let _ = writeln!(out, "{:<8} {:>8.4} {:>8.4}", "average", self.macro_recall, self.macro_f1);
        out
    }
}

/// Argmax predictions over `ds`, reduced to an [`EvalReport`].
pub fn evaluate(model: &ModelParams, ds: &WindowedDataset, meta: RunMeta) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::contract("evaluation over an empty dataset"));
    }
    let max_label = *ds.labels().iter().max().expect("non-empty");
    if max_label >= model.config.class_count {
        return Err(Error::contract(format!(
            "dataset labels reach class {max_label} but the model only has {} classes",
            model.config.class_count
        )));
    }
    let predictions: Vec<usize> = (0..ds.len())
        .into_par_iter()
        .map(|i| model.predict(&ds.window_tensor(i)))
        .collect::<Result<Vec<usize>>>()?;
    let mut confusion = ConfusionMatrix::new(model.config.class_count);
    for (i, &p) in predictions.iter().enumerate() {
        confusion.record(ds.label(i), p);
    }
    Ok(EvalReport::from_confusion(confusion, meta))
}

/// Mean and sample standard deviation of one metric across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64]) -> MeanStd {
    // Identical runs must aggregate to themselves with zero spread exactly,
    // so do not let summation round-off manufacture a variance.
    if values.iter().all(|v| *v == values[0]) {
        return MeanStd { mean: values[0], std: 0.0 };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    MeanStd { mean, std }
}

/// Per-class spread across repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateClass {
    pub recall: MeanStd,
    pub f1: MeanStd,
}

/// Elementwise aggregation of repeated evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs: usize,
    pub per_class: BTreeMap<usize, AggregateClass>,
    pub macro_recall: MeanStd,
    pub macro_f1: MeanStd,
}

impl AggregateReport {
    pub fn to_table_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:>8} {:>8} {:>8} {:>8}   ({} runs)",
            "class", "recall", "+/-", "f1", "+/-", self.runs
        );
        for (c, m) in &self.per_class {
            let _ = writeln!(
                out,
                "{:<8} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                c, m.recall.mean, m.recall.std, m.f1.mean, m.f1.std
            );
        }
        let _ = writeln!(
            out,
            "{:<8} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            "average", self.macro_recall.mean, self.macro_recall.std,
            self.macro_f1.mean, self.macro_f1.std
        );
        out
    }
}

/// Aggregate repeated runs; every report must cover the same class set.
pub fn aggregate(reports: &[EvalReport]) -> Result<AggregateReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::contract("aggregation over zero reports"))?;
    let classes: Vec<usize> = first.per_class.keys().copied().collect();
    for r in reports {
        let theirs: Vec<usize> = r.per_class.keys().copied().collect();
        if theirs != classes {
            return Err(Error::contract(format!(
                "aggregation over mismatched class sets {classes:?} vs {theirs:?}"
            )));
        }
    }
    let mut per_class = BTreeMap::new();
    for &c in &classes {
        let recalls: Vec<f64> = reports.iter().map(|r| r.per_class[&c].recall).collect();
        let f1s: Vec<f64> = reports.iter().map(|r| r.per_class[&c].f1).collect();
        per_class.insert(c, AggregateClass { recall: mean_std(&recalls), f1: mean_std(&f1s) });
    }
    let macro_recalls: Vec<f64> = reports.iter().map(|r| r.macro_recall).collect();
    let macro_f1s: Vec<f64> = reports.iter().map(|r| r.macro_f1).collect();
    Ok(AggregateReport {
        runs: reports.len(),
        per_class,
        macro_recall: mean_std(&macro_recalls),
        macro_f1: mean_std(&macro_f1s),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn report(cm: ConfusionMatrix) -> EvalReport {
        EvalReport::from_confusion(cm, RunMeta::default())
    }

    #[test]
    fn perfect_predictor_scores_one() {
        let cm = ConfusionMatrix::from_rows(&[
            vec![10, 0, 0],
            vec![0, 7, 0],
            vec![0, 0, 3],
        ]);
        let r = report(cm);
        for m in r.per_class.values() {
            assert_eq!(m.recall, 1.0);
            assert_eq!(m.f1, 1.0);
        }
        assert_eq!(r.macro_recall, 1.0);
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn balanced_errors_give_half() {
        // TP=5, FN=5, FP=5 for class 0.
        let cm = ConfusionMatrix::from_rows(&[vec![5, 5], vec![5, 5]]);
        let r = report(cm);
        assert_eq!(r.per_class[&0].recall, 0.5);
        assert_eq!(r.per_class[&0].f1, 0.5);
    }

    #[test]
    fn fixed_three_class_confusion_oracle() {
        let cm = ConfusionMatrix::from_rows(&[
            vec![8, 1, 1],
            vec![2, 6, 2],
            vec![0, 0, 10],
        ]);
        let r = report(cm);
        assert_eq!(r.per_class[&0].recall, 0.8);
        assert_eq!(r.per_class[&1].recall, 0.6);
        assert_eq!(r.per_class[&2].recall, 1.0);
        // 2*8 / (16 + 2 + 2)
        assert_eq!(r.per_class[&0].f1, 0.8);
        assert!((r.macro_recall - 0.8).abs() < 1e-12);
        assert!((r.per_class[&1].f1 - 12.0 / 17.0).abs() < 1e-15);
        assert!((r.per_class[&2].f1 - 20.0 / 23.0).abs() < 1e-15);
    }

    #[test]
    fn zero_support_is_flagged_not_nan() {
        let cm = ConfusionMatrix::from_rows(&[
            vec![3, 0, 1],
            vec![0, 0, 0],
            vec![0, 2, 5],
        ]);
        let r = report(cm);
        let m = &r.per_class[&1];
        assert!(m.zero_support);
        assert_eq!(m.recall, 0.0);
        assert!(m.recall.is_finite() && m.f1.is_finite());
        // Macro averages run over classes with support only.
        assert!((r.macro_recall - (0.75 + 5.0 / 7.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn macro_excluding_drops_one_class() {
        let cm = ConfusionMatrix::from_rows(&[
            vec![10, 0],
            vec![5, 5],
        ]);
        let r = report(cm);
        let (rec, _f1) = r.macro_excluding(0);
        assert_eq!(rec, 0.5);
    }

    #[test]
    fn aggregate_of_single_report_has_zero_std() {
        let cm = ConfusionMatrix::from_rows(&[vec![8, 2], vec![3, 7]]);
        let r = report(cm);
        let agg = aggregate(std::slice::from_ref(&r)).unwrap();
        assert_eq!(agg.runs, 1);
        assert_eq!(agg.macro_recall.mean, r.macro_recall);
        assert_eq!(agg.macro_recall.std, 0.0);
    }

    #[test]
    fn aggregate_means_and_identical_runs() {
        let a = report(ConfusionMatrix::from_rows(&[vec![4, 6], vec![0, 10]]));
        let b = report(ConfusionMatrix::from_rows(&[vec![6, 4], vec![0, 10]]));
        assert_eq!(a.per_class[&0].recall, 0.4);
        assert_eq!(b.per_class[&0].recall, 0.6);
        let agg = aggregate(&[a.clone(), b]).unwrap();
        assert!((agg.per_class[&0].recall.mean - 0.5).abs() < 1e-15);

        let same = vec![a; 10];
        let agg_same = aggregate(&same).unwrap();
        assert_eq!(agg_same.per_class[&0].recall.std, 0.0);
        assert_eq!(agg_same.macro_f1.std, 0.0);
    }

    #[test]
    fn aggregate_rejects_mismatched_class_sets() {
        let two = report(ConfusionMatrix::from_rows(&[vec![1, 0], vec![0, 1]]));
        let three = report(ConfusionMatrix::from_rows(&[
            vec![1, 0, 0],
            vec![0, 1, 0],
            vec![0, 0, 1],
        ]));
        assert!(aggregate(&[two, three]).is_err());
    }

    #[test]
    fn relabeling_permutes_metrics() {
        let cm = ConfusionMatrix::from_rows(&[
            vec![8, 1, 1],
            vec![2, 6, 2],
            vec![0, 0, 10],
        ]);
        // Swap classes 0 and 2 in both axes.
        let perm = [2usize, 1, 0];
        let mut swapped = ConfusionMatrix::new(3);
        for t in 0..3 {
            for p in 0..3 {
                for _ in 0..cm.count(t, p) {
                    swapped.record(perm[t], perm[p]);
                }
            }
        }
        let base = report(cm);
        let permuted = report(swapped);
        for c in 0..3 {
            assert_eq!(base.per_class[&c].recall, permuted.per_class[&perm[c]].recall);
            assert_eq!(base.per_class[&c].f1, permuted.per_class[&perm[c]].f1);
        }
        assert!((base.macro_f1 - permuted.macro_f1).abs() < 1e-15);
    }

    #[test]
    fn evaluate_runs_argmax_over_dataset() {
        use crate::network::{ModelConfig, ModelParams};
        use crate::pairing::{RawWindowSource, WindowedDataset};

        let config = ModelConfig {
            input_size: 1,
            hidden_size: 3,
            layer_count: 1,
            embed_dim: 2,
            class_count: 2,
            dropout_rate: 0.0,
            literal_sigmoid_logits: false,
        };
        let mut params = ModelParams::init(config, 3).unwrap();
        // All-zero weights force zero logits, so argmax always says 0.
        for t in params.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let src = RawWindowSource::new(1, vec![0.5; 8]).unwrap();
        let ds =
            WindowedDataset::make_windows(src, &[0, 0, 0, 0, 1, 1, 1, 1], 1, 1).unwrap();
        let r = evaluate(&params, &ds, RunMeta::default()).unwrap();
        assert_eq!(r.per_class[&0].recall, 1.0);
        assert_eq!(r.per_class[&1].recall, 0.0);
        assert_eq!(r.confusion.total(), 8);

        let empty_check = {
            let src = RawWindowSource::new(1, vec![0.0; 2]).unwrap();
            let tiny = WindowedDataset::make_windows(src, &[3, 3], 1, 1).unwrap();
            evaluate(&params, &tiny, RunMeta::default())
        };
        assert!(empty_check.is_err(), "labels beyond class_count must be rejected");
    }

    proptest! {
        #[test]
        fn matrix_metrics_match_per_sample_recount(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..200)
        ) {
            let mut cm = ConfusionMatrix::new(4);
            for &(t, p) in &pairs {
                cm.record(t, p);
            }
            prop_assert_eq!(cm.total() as usize, pairs.len());
            for c in 0..4 {
                let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count() as f64;
                let fn_ = pairs.iter().filter(|&&(t, p)| t == c && p != c).count() as f64;
                let fp = pairs.iter().filter(|&&(t, p)| t != c && p == c).count() as f64;
                let recall = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
                let f1 = if 2.0 * tp + fn_ + fp == 0.0 {
                    0.0
                } else {
                    2.0 * tp / (2.0 * tp + fn_ + fp)
                };
                prop_assert_eq!(cm.recall(c), recall);
                prop_assert_eq!(cm.f1(c), f1);
                prop_assert!((0.0..=1.0).contains(&cm.recall(c)));
                prop_assert!((0.0..=1.0).contains(&cm.f1(c)));
                if tp > 0.0 {
                    prop_assert_eq!(cm.f1(c) == 1.0, fn_ == 0.0 && fp == 0.0);
                }
            }
        }
    }
}
