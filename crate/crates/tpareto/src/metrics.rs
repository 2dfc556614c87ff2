//! Binary classification metrics, macro-averaged over the two classes.
//! All values are fractions in `[0, 1]`; the CSV emitter prints them with
//! four decimals.

use serde::{Deserialize, Serialize};

use crate::model::FusionLevel;

/// `counts[truth][prediction]` for binary labels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 2]; 2],
}

impl ConfusionMatrix {
    pub fn from_predictions(truth: &[usize], pred: &[usize]) -> Self {
        assert_eq!(truth.len(), pred.len());
        let mut counts = [[0usize; 2]; 2];
        for (&t, &p) in truth.iter().zip(pred) {
            counts[t.min(1)][p.min(1)] += 1;
        }
        Self { counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let n = self.total();
        if n == 0 {
            return 0.0;
        }
        (self.counts[0][0] + self.counts[1][1]) as f64 / n as f64
    }

    /// tp / (tp + fp); 0 when the class is never predicted.
    pub fn precision_of(&self, class: usize) -> f64 {
        let tp = self.counts[class][class];
        let predicted = self.counts[0][class] + self.counts[1][class];
        if predicted == 0 {
            0.0
        } else {
            tp as f64 / predicted as f64
        }
    }

    /// tp / (tp + fn); 0 when the class never occurs.
    pub fn recall_of(&self, class: usize) -> f64 {
        let tp = self.counts[class][class];
        let actual = self.counts[class][0] + self.counts[class][1];
        if actual == 0 {
            0.0
        } else {
            tp as f64 / actual as f64
        }
    }

    pub fn f1_of(&self, class: usize) -> f64 {
        let p = self.precision_of(class);
        let r = self.recall_of(class);
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn macro_precision(&self) -> f64 {
        (self.precision_of(0) + self.precision_of(1)) / 2.0
    }

    pub fn macro_recall(&self) -> f64 {
        (self.recall_of(0) + self.recall_of(1)) / 2.0
    }

    pub fn macro_f1(&self) -> f64 {
        (self.f1_of(0) + self.f1_of(1)) / 2.0
    }
}

/// One evaluation row: a (seed, method, fusion level) cell with its
/// macro-averaged metrics. The confusion matrix travels with the row so
/// the metrics can always be recomputed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRow {
    pub seed: u64,
    pub method: String,
    pub level: FusionLevel,
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
    pub acc: f64,
    pub confusion: ConfusionMatrix,
}

impl MetricsRow {
    pub fn from_confusion(
        seed: u64,
        method: impl Into<String>,
        level: FusionLevel,
        cm: ConfusionMatrix,
    ) -> Self {
        Self {
            seed,
            method: method.into(),
            level,
            f1: cm.macro_f1(),
            recall: cm.macro_recall(),
            precision: cm.macro_precision(),
            acc: cm.accuracy(),
            confusion: cm,
        }
    }

    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{:.4},{:.4},{:.4},{:.4}",
            self.seed, self.method, self.level, self.f1, self.recall, self.precision, self.acc
        )
    }
}

pub const CSV_HEADER: &str = "seed,method,level,f1,recall,precision,acc";

/// Rows sorted by (seed, method, level) and formatted with four decimals;
/// byte-identical for identical inputs.
pub fn to_csv(rows: &[MetricsRow]) -> String {
    let mut sorted: Vec<&MetricsRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (a.seed, &a.method, a.level).cmp(&(b.seed, &b.method, b.level))
    });
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in sorted {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// JSON-lines variant, same ordering as [`to_csv`].
pub fn to_jsonl(rows: &[MetricsRow]) -> String {
    let mut sorted: Vec<&MetricsRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (a.seed, &a.method, a.level).cmp(&(b.seed, &b.method, b.level))
    });
    let mut out = String::new();
    for r in sorted {
        out.push_str(&serde_json::to_string(r).expect("row serializes"));
        out.push('\n');
    }
    out
}
