//! Classification metrics and the two evaluation protocols: random
//! half-half and leave-one-subject-out.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imu::Dataset;
use crate::seed;

/// Rows are ground truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }
}

/// Builds the confusion matrix from parallel prediction/truth lists.
pub fn confusion(preds: &[usize], truths: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != truths.len() {
        return Err(Error::ShapeMismatch {
            context: "confusion".into(),
            expected: format!("{} predictions", truths.len()),
            got: format!("{}", preds.len()),
        });
    }
    let mut counts = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &t) in preds.iter().zip(truths) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::InvalidParameter(format!(
                "label out of range: pred {p}, truth {t}, C={num_classes}"
            )));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when precision or recall hit a 0/0 and were defined as 0.
    pub zero_division: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Per-fold reports for multi-fold protocols.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub folds: Vec<MetricReport>,
}

/// Accuracy, per-class precision/recall/F1 (0/0 defined as 0 and flagged),
/// and their unweighted macro averages.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidParameter("empty confusion matrix".into()));
    }
    let c = cm.num_classes();
    let mut per_class = Vec::with_capacity(c);
    for k in 0..c {
        let tp = cm.counts[k][k];
        let col_sum: usize = (0..c).map(|t| cm.counts[t][k]).sum();
        let row_sum: usize = cm.counts[k].iter().sum();
        let mut zero_division = false;
        let precision = if col_sum == 0 {
            zero_division = true;
            0.0
        } else {
            tp as f64 / col_sum as f64
        };
        let recall = if row_sum == 0 {
            zero_division = true;
            0.0
        } else {
            tp as f64 / row_sum as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
            zero_division,
        });
    }
    let mean =
        |f: fn(&ClassMetrics) -> f64| -> f64 { per_class.iter().map(f).sum::<f64>() / c as f64 };
    Ok(MetricReport {
        accuracy: cm.trace() as f64 / total as f64,
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        per_class,
        folds: Vec::new(),
    })
}

/// Index split of a dataset into train and test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub name: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle, first ceil(N/2) train, rest test.
pub fn split_half_half(ds: &Dataset, seed_val: u64) -> Result<Split> {
    let n = ds.windows.len();
    if n < 2 {
        return Err(Error::InvalidParameter(
            "half-half split needs at least 2 windows".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng(seed::derive(seed_val, "half-half"));
    order.shuffle(&mut rng);
    let cut = n.div_ceil(2);
    Ok(Split {
        name: "hh".into(),
        train: order[..cut].to_vec(),
        test: order[cut..].to_vec(),
    })
}

/// One fold per subject; the fold's test set is that subject's windows.
pub fn split_leave_one_out(ds: &Dataset) -> Result<Vec<Split>> {
    if ds.subjects.len() < 2 {
        return Err(Error::InvalidParameter(
            "leave-one-out needs at least 2 subjects".into(),
        ));
    }
    let mut folds = Vec::with_capacity(ds.subjects.len());
    for subject in &ds.subjects {
        let (test, train): (Vec<usize>, Vec<usize>) =
            (0..ds.windows.len()).partition(|&i| &ds.windows[i].subject == subject);
        folds.push(Split {
            name: format!("loo-{subject}"),
            train,
            test,
        });
    }
    Ok(folds)
}

/// Renders an aligned text block of one report.
pub fn format_report(name: &str, report: &MetricReport, class_names: &[String]) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{name}: accuracy {:.4}  macro P {:.4}  R {:.4}  F1 {:.4}",
        report.accuracy, report.macro_precision, report.macro_recall, report.macro_f1
    );
    for (k, m) in report.per_class.iter().enumerate() {
        let label = class_names.get(k).map(String::as_str).unwrap_or("?");
        let _ = writeln!(
            out,
            "  {label:>6}: P {:.4}  R {:.4}  F1 {:.4}{}",
            m.precision,
            m.recall,
            m.f1,
            if m.zero_division { "  [0/0]" } else { "" }
        );
    }
    out
}
