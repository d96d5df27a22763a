//! Classification metrics: confusion matrix, per-class accuracy/F1, and the
//! support-weighted aggregates W-Acc and W-F1.

use crate::error::{Error, Result};

/// Metrics of one evaluation pass.
///
/// Per-class accuracy is the recall of that class (diagonal over row sum).
/// Per-class F1 uses `2PR/(P+R)` with the 0/0 convention `F1 = 0`. W-Acc is
/// total correct over total count; W-F1 weights each class F1 by its share
/// of the true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub classes: usize,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub support: Vec<usize>,
    pub per_class_accuracy: Vec<f64>,
    pub per_class_f1: Vec<f64>,
    pub weighted_accuracy: f64,
    pub weighted_f1: f64,
    pub total: usize,
    /// Learnable scalar count of the evaluated model (0 when not attached).
    pub param_count: usize,
    /// Wall-clock spent in the evaluation pass.
    pub wall_seconds: f64,
}

impl MetricsReport {
    /// Tallies predictions against labels.
    pub fn compute(predictions: &[usize], labels: &[usize], classes: usize) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                what: "metric inputs",
                expected: format!("{}", labels.len()),
                got: format!("{}", predictions.len()),
            });
        }
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if classes < 2 {
            return Err(Error::InvalidParameter("need at least two classes".into()));
        }
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&p, &l) in predictions.iter().zip(labels.iter()) {
            if p >= classes || l >= classes {
                return Err(Error::InvalidParameter(format!(
                    "prediction {p} / label {l} out of range for {classes} classes"
                )));
            }
            confusion[l][p] += 1;
        }
        let total = labels.len();
        let support: Vec<usize> = confusion.iter().map(|row| row.iter().sum()).collect();
        let predicted_count: Vec<usize> = (0..classes)
            .map(|c| confusion.iter().map(|row| row[c]).sum())
            .collect();
        let mut per_class_accuracy = vec![0.0; classes];
        let mut per_class_f1 = vec![0.0; classes];
        let mut correct = 0;
        let mut weighted_f1 = 0.0;
        for c in 0..classes {
            let hits = confusion[c][c];
            correct += hits;
            let recall = if support[c] > 0 {
                hits as f64 / support[c] as f64
            } else {
                0.0
            };
            let precision = if predicted_count[c] > 0 {
                hits as f64 / predicted_count[c] as f64
            } else {
                0.0
            };
            per_class_accuracy[c] = recall;
            per_class_f1[c] = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            weighted_f1 += support[c] as f64 / total as f64 * per_class_f1[c];
        }
        Ok(Self {
            classes,
            confusion,
            support,
            per_class_accuracy,
            per_class_f1,
            weighted_accuracy: correct as f64 / total as f64,
            weighted_f1,
            total,
            param_count: 0,
            wall_seconds: 0.0,
        })
    }

    /// Aligned human-readable table (per class plus the weighted summary).
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:>6} {:>8} {:>10} {:>10}\n",
            "class", "support", "accuracy", "f1"
        ));
        for c in 0..self.classes {
            out.push_str(&format!(
                "{:>6} {:>8} {:>10.4} {:>10.4}\n",
                c, self.support[c], self.per_class_accuracy[c], self.per_class_f1[c]
            ));
        }
        out.push_str(&format!(
            "{:>6} {:>8} {:>10.4} {:>10.4}\n",
            "w-avg", self.total, self.weighted_accuracy, self.weighted_f1
        ));
        out
    }

    /// Per-class CSV (header plus one row per class and a weighted row).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,support,accuracy,f1\n");
        for c in 0..self.classes {
            out.push_str(&format!(
                "{},{},{},{}\n",
                c, self.support[c], self.per_class_accuracy[c], self.per_class_f1[c]
            ));
        }
        out.push_str(&format!(
            "weighted,{},{},{}\n",
            self.total, self.weighted_accuracy, self.weighted_f1
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_predictions() {
        let labels = vec![0, 1, 2, 0, 1, 2];
        let report = MetricsReport::compute(&labels, &labels, 3).unwrap();
        assert_eq!(report.weighted_accuracy, 1.0);
        assert_eq!(report.weighted_f1, 1.0);
        for c in 0..3 {
            assert_eq!(report.confusion[c][c], 2);
            for p in 0..3 {
                if p != c {
                    assert_eq!(report.confusion[c][p], 0);
                }
            }
        }
    }

    #[test]
    fn all_one_class_predictor_on_balanced_binary() {
        // hand-computed: W-Acc 1/2; F1 of the predicted class 2/3, other 0;
        // W-F1 = 1/3
        let labels = vec![0, 0, 0, 1, 1, 1];
        let predictions = vec![0; 6];
        let report = MetricsReport::compute(&predictions, &labels, 2).unwrap();
        assert!((report.weighted_accuracy - 0.5).abs() < 1e-12);
        assert!((report.per_class_f1[0] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.per_class_f1[1], 0.0);
        assert!((report.weighted_f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn matches_independent_tally() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let classes = 5;
        let labels: Vec<usize> = (0..400).map(|_| rng.gen_range(0..classes)).collect();
        let predictions: Vec<usize> = (0..400).map(|_| rng.gen_range(0..classes)).collect();
        let report = MetricsReport::compute(&predictions, &labels, classes).unwrap();

        // independent tally with separate counters
        let mut tp = vec![0usize; classes];
        let mut fp = vec![0usize; classes];
        let mut fn_ = vec![0usize; classes];
        let mut correct = 0usize;
        for (&p, &l) in predictions.iter().zip(labels.iter()) {
            if p == l {
                correct += 1;
                tp[l] += 1;
            } else {
                fp[p] += 1;
                fn_[l] += 1;
            }
        }
        assert!(
            (report.weighted_accuracy - correct as f64 / 400.0).abs() < 1e-12
        );
        let mut wf1 = 0.0;
        for c in 0..classes {
            let precision = if tp[c] + fp[c] > 0 {
                tp[c] as f64 / (tp[c] + fp[c]) as f64
            } else {
                0.0
            };
            let recall = if tp[c] + fn_[c] > 0 {
                tp[c] as f64 / (tp[c] + fn_[c]) as f64
            } else {
                0.0
            };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            assert!(
                (report.per_class_f1[c] - f1).abs() < 1e-12,
                "class {c} f1 mismatch"
            );
            wf1 += (tp[c] + fn_[c]) as f64 / 400.0 * f1;
        }
        assert!((report.weighted_f1 - wf1).abs() < 1e-12);
    }

    #[test]
    fn confusion_rows_sum_to_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let labels: Vec<usize> = (0..100).map(|_| rng.gen_range(0..3)).collect();
        let predictions: Vec<usize> = (0..100).map(|_| rng.gen_range(0..3)).collect();
        let report = MetricsReport::compute(&predictions, &labels, 3).unwrap();
        for c in 0..3 {
            let row_sum: usize = report.confusion[c].iter().sum();
            assert_eq!(row_sum, report.support[c]);
            let true_count = labels.iter().filter(|&&l| l == c).count();
            assert_eq!(report.support[c], true_count);
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            MetricsReport::compute(&[], &[], 2),
            Err(Error::EmptyDataset)
        ));
    }
}
