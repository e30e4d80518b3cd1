//! Confusion matrices and the per-class classification report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// `counts[i][j]`: samples of true class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
    class_names: Vec<String>,
}

fn default_names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("class-{i}")).collect()
}

impl ConfusionMatrix {
    pub fn from_predictions(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(Error::Shape(format!(
                "{} true labels but {} predictions",
                y_true.len(),
                y_pred.len()
            )));
        }
        if k == 0 {
            return Err(Error::Data("a confusion matrix needs at least one class".into()));
        }
        let mut counts = vec![vec![0u64; k]; k];
        for (i, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
            if t >= k || p >= k {
                return Err(Error::Data(format!(
                    "sample {i}: label pair ({t}, {p}) out of range for {k} classes"
                )));
            }
            counts[t][p] += 1;
        }
        Ok(Self {
            counts,
            class_names: default_names(k),
        })
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if k == 0 || counts.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("confusion counts must be a non-empty square matrix".into()));
        }
        Ok(Self {
            counts,
            class_names: default_names(k),
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.k() {
            return Err(Error::Shape(format!("{} names for {} classes", names.len(), self.k())));
        }
        self.class_names = names;
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Row sum `r(k)`: number of samples whose true class is `k`.
    pub fn support(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    pub fn predicted(&self, k: usize) -> u64 {
        self.counts.iter().map(|r| r[k]).sum()
    }

    fn check_class(&self, k: usize) -> Result<()> {
        if k >= self.k() {
            return Err(Error::Data(format!("class {k} out of range for {} classes", self.k())));
        }
        Ok(())
    }

    /// `class,<names...>` header, then one row per true class.
    pub fn to_csv(&self) -> String {
        let mut out = format!("true\\pred,{}\n", self.class_names.join(","));
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            let _ = writeln!(out, "{name},{}", cells.join(","));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Text table with predicted classes as columns.
    pub fn render(&self) -> String {
        let w = self
            .class_names
            .iter()
            .map(String::len)
            .chain(self.counts.iter().flatten().map(|c| c.to_string().len()))
            .max()
            .unwrap_or(1)
            .max(6);
        let mut out = format!("{:>w$}", "");
        for n in &self.class_names {
            let _ = write!(out, "  {n:>w$}");
        }
        out.push('\n');
        for (n, row) in self.class_names.iter().zip(&self.counts) {
            let _ = write!(out, "{n:>w$}");
            for c in row {
                let _ = write!(out, "  {c:>w$}");
            }
            out.push('\n');
        }
        out
    }
}

/// `Σ C_ii / Σ C_ij`.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Data("accuracy of an empty confusion matrix".into()));
    }
    let trace: u64 = (0..cm.k()).map(|i| cm.counts[i][i]).sum();
    Ok(trace as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewCheck {
    pub accuracy: f64,
    /// Share of the most common true class.
    pub prior: f64,
    pub epsilon: f64,
    /// `accuracy − (prior + epsilon)`; the check passes when this is ≥ 0.
    pub margin: f64,
    pub pass: bool,
}

/// Whether accuracy beats always guessing the most common class by at
/// least `epsilon`.
pub fn skew_check(cm: &ConfusionMatrix, epsilon: f64) -> Result<SkewCheck> {
    let acc = accuracy(cm)?;
    let total = cm.total() as f64;
    let prior = (0..cm.k()).map(|k| cm.support(k)).max().unwrap_or(0) as f64 / total;
    let margin = acc - (prior + epsilon);
    Ok(SkewCheck {
        accuracy: acc,
        prior,
        epsilon,
        margin,
        pass: acc >= prior + epsilon,
    })
}

/// A row-normalized rate; undefined when the class has no samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rate {
    Defined(f64),
    Undefined,
}

impl Rate {
    pub fn value(&self) -> Option<f64> {
        match *self {
            Rate::Defined(v) => Some(v),
            Rate::Undefined => None,
        }
    }
}

/// `C_kk / r(k)`.
pub fn sensitivity(cm: &ConfusionMatrix, k: usize) -> Result<Rate> {
    class_confusion(cm, k, k)
}

/// Fraction of true-`k1` samples predicted as `k2`: `C[k1][k2] / r(k1)`.
pub fn class_confusion(cm: &ConfusionMatrix, k1: usize, k2: usize) -> Result<Rate> {
    cm.check_class(k1)?;
    cm.check_class(k2)?;
    let r = cm.support(k1);
    Ok(if r == 0 {
        Rate::Undefined
    } else {
        Rate::Defined(cm.counts[k1][k2] as f64 / r as f64)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Nothing was predicted as this class; precision reported as 0.
    pub empty_prediction: bool,
    /// The class has no samples; recall reported as 0.
    pub empty_support: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub classes: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub total: u64,
}

pub fn classification_report(cm: &ConfusionMatrix) -> Result<ClassReport> {
    let acc = accuracy(cm)?;
    let total = cm.total();
    let classes: Vec<ClassMetrics> = (0..cm.k())
        .map(|k| {
            let tp = cm.counts[k][k] as f64;
            let predicted = cm.predicted(k);
            let support = cm.support(k);
            let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            let recall = if support == 0 { 0.0 } else { tp / support as f64 };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                name: cm.class_names[k].clone(),
                precision,
                recall,
                f1,
                support,
                empty_prediction: predicted == 0,
                empty_support: support == 0,
            }
        })
        .collect();
    let k = classes.len() as f64;
    let n = total as f64;
    let avg = |w: &dyn Fn(&ClassMetrics) -> f64, f: &dyn Fn(&ClassMetrics) -> f64| -> f64 {
        classes.iter().map(|c| w(c) * f(c)).sum()
    };
    let macro_w = |_: &ClassMetrics| 1.0 / k;
    let weight = |c: &ClassMetrics| c.support as f64 / n;
    Ok(ClassReport {
        macro_avg: Averages {
            precision: avg(&macro_w, &|c| c.precision),
            recall: avg(&macro_w, &|c| c.recall),
            f1: avg(&macro_w, &|c| c.f1),
        },
        weighted_avg: Averages {
            precision: avg(&weight, &|c| c.precision),
            recall: avg(&weight, &|c| c.recall),
            f1: avg(&weight, &|c| c.f1),
        },
        classes,
        accuracy: acc,
        total,
    })
}

impl ClassReport {
    /// Precision / recall / f1-score / support table with two decimals.
    pub fn render(&self) -> String {
        let w = self
            .classes
            .iter()
            .map(|c| c.name.len())
            .chain(["avg / total".len()])
            .max()
            .unwrap_or(0);
        let mut out = format!(
            "{:>w$}  {:>9}  {:>6}  {:>8}  {:>7}\n",
            "", "precision", "recall", "f1-score", "support"
        );
        let line = |out: &mut String, name: &str, p: f64, r: f64, f: f64, s: u64, mark: &str| {
            let _ = writeln!(out, "{name:>w$}  {p:>9.2}  {r:>6.2}  {f:>8.2}  {s:>7}{mark}");
        };
        for c in &self.classes {
            let mark = match (c.empty_prediction, c.empty_support) {
                (true, true) => "  (no samples, never predicted)",
                (true, false) => "  (never predicted)",
                (false, true) => "  (no samples)",
                _ => "",
            };
            line(&mut out, &c.name, c.precision, c.recall, c.f1, c.support, mark);
        }
        out.push('\n');
        let _ = writeln!(out, "{:>w$}  {:>9}  {:>6}  {:>8.2}  {:>7}", "accuracy", "", "", self.accuracy, self.total);
        let m = self.macro_avg;
        line(&mut out, "macro avg", m.precision, m.recall, m.f1, self.total, "");
        let a = self.weighted_avg;
        line(&mut out, "avg / total", a.precision, a.recall, a.f1, self.total, "");
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,precision,recall,f1,support\n");
        let mut row = |name: &str, p: f64, r: f64, f: f64, s: u64| {
            let _ = writeln!(out, "{name},{p:?},{r:?},{f:?},{s}");
        };
        for c in &self.classes {
            row(&c.name, c.precision, c.recall, c.f1, c.support);
        }
        row("macro avg", self.macro_avg.precision, self.macro_avg.recall, self.macro_avg.f1, self.total);
        row(
            "weighted avg",
            self.weighted_avg.precision,
            self.weighted_avg.recall,
            self.weighted_avg.f1,
            self.total,
        );
        out
    }
}
