//! Confusion matrix and the accuracy / precision / recall / F1 report.
//!
//! The positive class is [`Label::Depressed`].

use crate::dataset::Label;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{predictions} predictions for {truths} ground-truth labels")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("no samples to evaluate")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "                    predicted")?;
        writeln!(f, "                    depressed  non-depressed")?;
        writeln!(f, "actual depressed     {:>8}  {:>13}", self.tp, self.fn_)?;
        write!(f, "actual non-depr.     {:>8}  {:>13}", self.fp, self.tn)
    }
}

pub fn confusion(predictions: &[Label], truths: &[Label]) -> Result<ConfusionMatrix, MetricsError> {
    if predictions.len() != truths.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in predictions.iter().zip(truths) {
        match (p, t) {
            (Label::Depressed, Label::Depressed) => cm.tp += 1,
            (Label::Depressed, Label::NonDepressed) => cm.fp += 1,
            (Label::NonDepressed, Label::Depressed) => cm.fn_ += 1,
            (Label::NonDepressed, Label::NonDepressed) => cm.tn += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    /// Absent when nothing was predicted positive.
    pub precision: Option<f64>,
    /// Absent when there are no positive samples.
    pub recall: Option<f64>,
    pub f1: f64,
}

pub fn report(cm: &ConfusionMatrix) -> Result<MetricReport, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p > 0.0 && r > 0.0 => 2.0 * p * r / (p + r),
        _ => 0.0,
    };
    Ok(MetricReport {
        accuracy: (cm.tp + cm.tn) as f64 / total as f64,
        precision,
        recall,
        f1,
    })
}

impl MetricReport {
    /// Aligned text table: accuracy as a whole percent, the rest to 4 decimals,
    /// undefined values as `-`.
    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        format!(
            "{:<10} {:>8}\n{:<10} {:>8}\n{:<10} {:>8}\n{:<10} {:>8}",
            "accuracy",
            format!("{:.0}%", self.accuracy * 100.0),
            "f1",
            format!("{:.4}", self.f1),
            "precision",
            opt(self.precision),
            "recall",
            opt(self.recall),
        )
    }

    /// One JSON object on a single line.
    pub fn to_json_line(&self, cm: &ConfusionMatrix) -> String {
        serde_json::json!({
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": cm.tp,
            "fp": cm.fp,
            "fn": cm.fn_,
            "tn": cm.tn,
        })
        .to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Label::{Depressed as D, NonDepressed as N};

    #[test]
    fn perfect_classifier() {
        let truth = [D, D, D, N, N, N, N, N];
        assert_eq!(confusion(&truth, &truth).unwrap(), ConfusionMatrix::new(3, 0, 0, 5));
    }

    #[test]
    fn all_negative_predictions() {
        let mut truth = vec![D; 6];
        truth.extend(vec![N; 21]);
        let pred = vec![N; 27];
        assert_eq!(confusion(&pred, &truth).unwrap(), ConfusionMatrix::new(0, 0, 6, 21));
    }

    #[test]
    fn confusion_errors() {
        assert_eq!(confusion(&[D], &[D, N]), Err(MetricsError::LengthMismatch { predictions: 1, truths: 2 }));
        assert_eq!(confusion(&[], &[]), Err(MetricsError::Empty));
        assert_eq!(report(&ConfusionMatrix::default()), Err(MetricsError::Empty));
    }

    #[test]
    fn mixed_report() {
        let r = report(&ConfusionMatrix::new(4, 3, 2, 18)).unwrap();
        assert!((r.accuracy - 22.0 / 27.0).abs() < 1e-12);
        assert!((r.precision.unwrap() - 4.0 / 7.0).abs() < 1e-12);
        assert!((r.recall.unwrap() - 4.0 / 6.0).abs() < 1e-12);
        assert!((r.f1 - 8.0 / 13.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_report() {
        let r = report(&ConfusionMatrix::new(0, 0, 6, 21)).unwrap();
        assert!((r.accuracy - 21.0 / 27.0).abs() < 1e-12);
        assert_eq!(r.precision, None);
        assert_eq!(r.recall, Some(0.0));
        assert_eq!(r.f1, 0.0);
        let table = r.to_table();
        assert!(table.contains("78%"));
        assert!(table.contains("precision         -"));
        assert!(table.contains("0.0000"));
    }

    #[test]
    fn two_sample_perfect() {
        let r = report(&ConfusionMatrix::new(1, 0, 0, 1)).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (1.0, Some(1.0), Some(1.0), 1.0));
    }

    #[test]
    fn json_line_has_all_fields() {
        let cm = ConfusionMatrix::new(0, 0, 6, 21);
        let line = report(&cm).unwrap().to_json_line(&cm);
        assert!(!line.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert!(v["precision"].is_null());
        assert_eq!(v["fn"], 6);
    }

    fn label() -> impl Strategy<Value = Label> {
        prop_oneof![Just(D), Just(N)]
    }

    proptest! {
        #[test]
        fn label_swap_symmetry(pairs in proptest::collection::vec((label(), label()), 1..50)) {
            let (p, t): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let flip = |v: &[Label]| v.iter().map(|l| l.flipped()).collect::<Vec<_>>();
            let a = confusion(&p, &t).unwrap();
            let b = confusion(&flip(&p), &flip(&t)).unwrap();
            prop_assert_eq!(a.tp, b.tn);
            prop_assert_eq!(a.fp, b.fn_);
            prop_assert_eq!(a.total(), p.len() as u64);
        }

        #[test]
        fn scale_free(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50, tn in 0u64..50, k in 1u64..20) {
            let cm = ConfusionMatrix::new(tp, fp, fn_, tn);
            prop_assume!(cm.total() > 0);
            let a = report(&cm).unwrap();
            let b = report(&ConfusionMatrix::new(tp * k, fp * k, fn_ * k, tn * k)).unwrap();
            prop_assert!((a.accuracy - b.accuracy).abs() < 1e-12);
            prop_assert!((a.f1 - b.f1).abs() < 1e-12);
            prop_assert_eq!(a.precision.is_some(), b.precision.is_some());
            prop_assert_eq!(a.recall.is_some(), b.recall.is_some());
        }

        #[test]
        fn f1_is_a_harmonic_mean(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50, tn in 0u64..50) {
            let cm = ConfusionMatrix::new(tp, fp, fn_, tn);
            prop_assume!(cm.total() > 0);
            let r = report(&cm).unwrap();
            for v in [Some(r.accuracy), r.precision, r.recall, Some(r.f1)].into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if let (Some(p), Some(rc)) = (r.precision, r.recall) {
                prop_assert!(r.f1 >= p.min(rc) - 1e-12);
                prop_assert!(r.f1 <= (p + rc) / 2.0 + 1e-12);
            }
        }
    }
}
