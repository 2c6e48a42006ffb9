//! Classification metrics: confusion matrix, per-class precision / recall /
//! F1, accuracy, macro and support-weighted averages, plus the text-table
//! and CSV renderings the pipeline writes into run directories.

use crate::error::{Error, Result};
use crate::losses::{ClassLabel, CLASS_NAMES, NUM_CLASSES};
use crate::num::Real;

/// How per-class metrics are folded into a single number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Averaging {
    /// Unweighted mean over classes.
    Macro,
    /// Mean weighted by class support (the "avg / total" table row).
    Weighted,
}

/// Evaluation summary over one test set.
///
/// The confusion matrix is indexed `[truth][prediction]`; every derived
/// quantity is computed once at construction. A class nobody predicted has
/// precision 0, a class without support has recall 0, and F1 is 0 whenever
/// precision + recall is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    precision: [f64; NUM_CLASSES],
    recall: [f64; NUM_CLASSES],
    f1: [f64; NUM_CLASSES],
    support: [usize; NUM_CLASSES],
    accuracy: f64,
    total: usize,
}

/// Argmax prediction with deterministic tie-breaking: the lowest class
/// index wins.
pub fn argmax_class<T: Real>(probs: &[T]) -> Result<ClassLabel> {
    if probs.len() != NUM_CLASSES {
        return Err(Error::dim(
            "argmax_class",
            format!("expected {} probabilities, got {}", NUM_CLASSES, probs.len()),
        ));
    }
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    ClassLabel::new(best)
}

impl MetricsReport {
    /// Build from raw `(truth, prediction)` pairs.
    pub fn from_pairs(pairs: &[(ClassLabel, ClassLabel)]) -> Result<MetricsReport> {
        if pairs.is_empty() {
            return Err(Error::contract("evaluate", "empty test set"));
        }
        let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
        for &(truth, pred) in pairs {
            confusion[truth.index()][pred.index()] += 1;
        }
        Self::from_confusion(confusion)
    }

    /// Build from a pre-counted confusion matrix (rows = truth).
    pub fn from_confusion(confusion: [[usize; NUM_CLASSES]; NUM_CLASSES]) -> Result<MetricsReport> {
        let total: usize = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::contract("evaluate", "empty confusion matrix"));
        }
        let mut precision = [0.0; NUM_CLASSES];
        let mut recall = [0.0; NUM_CLASSES];
        let mut f1 = [0.0; NUM_CLASSES];
        let mut support = [0usize; NUM_CLASSES];
        let mut trace = 0usize;
        for c in 0..NUM_CLASSES {
            let tp = confusion[c][c];
            trace += tp;
            support[c] = confusion[c].iter().sum();
            let predicted: usize = (0..NUM_CLASSES).map(|r| confusion[r][c]).sum();
            precision[c] = if predicted == 0 {
                0.0
            } else {
                tp as f64 / predicted as f64
            };
            recall[c] = if support[c] == 0 {
                0.0
            } else {
                tp as f64 / support[c] as f64
            };
            let pr = precision[c] + recall[c];
            f1[c] = if pr == 0.0 {
                0.0
            } else {
                2.0 * precision[c] * recall[c] / pr
            };
        }
        Ok(MetricsReport {
            confusion,
            precision,
            recall,
            f1,
            support,
            accuracy: trace as f64 / total as f64,
            total,
        })
    }

    pub fn confusion(&self) -> &[[usize; NUM_CLASSES]; NUM_CLASSES] {
        &self.confusion
    }

    pub fn precision(&self, class: usize) -> f64 {
        self.precision[class]
    }

    pub fn recall(&self, class: usize) -> f64 {
        self.recall[class]
    }

    pub fn f1(&self, class: usize) -> f64 {
        self.f1[class]
    }

    pub fn support(&self, class: usize) -> usize {
        self.support[class]
    }

    pub fn accuracy(&self) -> f64 {
        self.accuracy
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// `(precision, recall, f1)` folded over classes.
    pub fn averaged(&self, mode: Averaging) -> (f64, f64, f64) {
        match mode {
            Averaging::Macro => {
                let n = NUM_CLASSES as f64;
                (
                    self.precision.iter().sum::<f64>() / n,
                    self.recall.iter().sum::<f64>() / n,
                    self.f1.iter().sum::<f64>() / n,
                )
            }
            Averaging::Weighted => {
                let mut acc = (0.0, 0.0, 0.0);
                for c in 0..NUM_CLASSES {
                    let w = self.support[c] as f64 / self.total as f64;
                    acc.0 += w * self.precision[c];
                    acc.1 += w * self.recall[c];
                    acc.2 += w * self.f1[c];
                }
                acc
            }
        }
    }

    /// Render the classic classification-report layout: one row per class,
    /// a support-weighted "avg / total" row, and the accuracy underneath.
    pub fn render_table(&self, title: &str) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{title}\n{:<14}{:>10}{:>10}{:>10}{:>10}\n",
            "", "precision", "recall", "f1-score", "support"
        ));
        for c in 0..NUM_CLASSES {
            out.push_str(&format!(
                "{:<14}{:>10.3}{:>10.3}{:>10.3}{:>10}\n",
                CLASS_NAMES[c], self.precision[c], self.recall[c], self.f1[c], self.support[c]
            ));
        }
        let (p, r, f) = self.averaged(Averaging::Weighted);
        out.push_str(&format!(
            "{:<14}{:>10.3}{:>10.3}{:>10.3}{:>10}\n",
            "avg / total", p, r, f, self.total
        ));
        out.push_str(&format!("accuracy {:.3}\n", self.accuracy));
        out
    }

    /// CSV rows `model,class,precision,recall,f1,support` — one per class
    /// plus the weighted `avg/total` row. No header; the caller owns it.
    pub fn csv_rows(&self, model: &str) -> Vec<String> {
        let mut rows: Vec<String> = (0..NUM_CLASSES)
            .map(|c| {
                format!(
                    "{model},{},{:.6},{:.6},{:.6},{}",
                    CLASS_NAMES[c], self.precision[c], self.recall[c], self.f1[c], self.support[c]
                )
            })
            .collect();
        let (p, r, f) = self.averaged(Averaging::Weighted);
        rows.push(format!(
            "{model},avg/total,{p:.6},{r:.6},{f:.6},{}",
            self.total
        ));
        rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::seeding;

    const HAND: [[usize; 3]; 3] = [[8, 2, 0], [1, 9, 0], [0, 0, 10]];

    #[test]
    fn hand_case_matches_the_definitions() {
        let m = MetricsReport::from_confusion(HAND).unwrap();
        assert_eq!(m.precision(0), 8.0 / 9.0);
        assert_eq!(m.recall(0), 0.8);
        assert!((m.f1(0) - 16.0 / 19.0).abs() < 1e-15);
        assert_eq!(m.accuracy(), 0.9);
        assert_eq!(m.support(0), 10);
        assert_eq!(m.total(), 30);
        assert_eq!(m.precision(1), 9.0 / 11.0);
        assert_eq!(m.recall(2), 1.0);
    }

    #[test]
    fn perfect_predictions_score_one_everywhere() {
        let m = MetricsReport::from_confusion([[7, 0, 0], [0, 5, 0], [0, 0, 9]]).unwrap();
        for c in 0..3 {
            assert_eq!(m.precision(c), 1.0);
            assert_eq!(m.recall(c), 1.0);
            assert_eq!(m.f1(c), 1.0);
        }
        assert_eq!(m.accuracy(), 1.0);
        let (p, r, f) = m.averaged(Averaging::Macro);
        assert_eq!((p, r, f), (1.0, 1.0, 1.0));
    }

    #[test]
    fn degenerate_classes_report_zero_not_nan() {
        // nobody predicts class 2; class 2 has support
        let m = MetricsReport::from_confusion([[5, 0, 0], [0, 5, 0], [5, 0, 0]]).unwrap();
        assert_eq!(m.precision(2), 0.0);
        assert_eq!(m.recall(2), 0.0);
        assert_eq!(m.f1(2), 0.0);
        // class 2 has no support at all
        let m = MetricsReport::from_confusion([[3, 0, 1], [0, 3, 0], [0, 0, 0]]).unwrap();
        assert_eq!(m.recall(2), 0.0);
        assert_eq!(m.precision(2), 0.0); // 0 of 1 prediction correct
        assert!(m.accuracy().is_finite());
    }

    #[test]
    fn pairs_and_confusion_agree_with_a_brute_force_recount() {
        let mut rng = seeding::stream(99, "metrics-test", 0);
        let pairs: Vec<(ClassLabel, ClassLabel)> = (0..200)
            .map(|_| {
                (
                    ClassLabel::new(rng.random_range(0..3)).unwrap(),
                    ClassLabel::new(rng.random_range(0..3)).unwrap(),
                )
            })
            .collect();
        let m = MetricsReport::from_pairs(&pairs).unwrap();
        // independent recount straight from the definitions
        for c in 0..3 {
            let tp = pairs.iter().filter(|(t, p)| t.index() == c && p.index() == c).count();
            let pred = pairs.iter().filter(|(_, p)| p.index() == c).count();
            let truth = pairs.iter().filter(|(t, _)| t.index() == c).count();
            let want_p = if pred == 0 { 0.0 } else { tp as f64 / pred as f64 };
            let want_r = if truth == 0 { 0.0 } else { tp as f64 / truth as f64 };
            assert_eq!(m.precision(c), want_p);
            assert_eq!(m.recall(c), want_r);
            assert_eq!(m.support(c), truth);
        }
        let correct = pairs.iter().filter(|(t, p)| t == p).count();
        assert_eq!(m.accuracy(), correct as f64 / 200.0);
        // confusion rows sum to true counts
        for c in 0..3 {
            assert_eq!(m.confusion()[c].iter().sum::<usize>(), m.support(c));
        }
    }

    #[test]
    fn weighted_average_differs_from_macro_on_skewed_support() {
        let m = MetricsReport::from_confusion([[90, 10, 0], [0, 5, 0], [0, 0, 5]]).unwrap();
        let (mp, ..) = m.averaged(Averaging::Macro);
        let (wp, ..) = m.averaged(Averaging::Weighted);
        // macro: (1 + 1/3 + 1)/3; weighted leans to the majority class
        assert!((mp - (1.0 + 5.0 / 15.0 + 1.0) / 3.0).abs() < 1e-15);
        assert!(wp > mp);
    }

    #[test]
    fn table_and_csv_layouts() {
        let m = MetricsReport::from_confusion(HAND).unwrap();
        let table = m.render_table("cnn-stn");
        assert!(table.contains("cnn-stn"));
        for name in CLASS_NAMES {
            assert!(table.contains(name), "missing {name} in\n{table}");
        }
        assert!(table.contains("avg / total"));
        assert!(table.contains("accuracy 0.900"));

        let rows = m.csv_rows("baseline");
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0], "baseline,granulocyte,0.888889,0.800000,0.842105,10");
        assert!(rows[3].starts_with("baseline,avg/total,"));
        assert!(rows[3].ends_with(",30"));
    }

    #[test]
    fn argmax_breaks_ties_toward_the_lowest_index() {
        assert_eq!(argmax_class(&[0.2, 0.6, 0.2]).unwrap().index(), 1);
        assert_eq!(argmax_class(&[0.4, 0.4, 0.2]).unwrap().index(), 0);
        assert_eq!(argmax_class(&[1.0 / 3.0; 3]).unwrap().index(), 0);
        assert!(argmax_class(&[0.5, 0.5]).is_err());
    }

    #[test]
    fn empty_inputs_are_contract_errors() {
        assert!(MetricsReport::from_pairs(&[]).is_err());
        assert!(MetricsReport::from_confusion([[0; 3]; 3]).is_err());
    }
}
