use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    /// F1 of class 1 against everything else.
    F1Binary,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::F1Binary => "f1_binary",
        }
    }
}

/// Prediction tallies that both metrics can be read from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub correct: usize,
    pub total: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn add(&mut self, predicted: usize, target: usize) {
        self.total += 1;
        self.correct += usize::from(predicted == target);
        match (predicted == 1, target == 1) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => {}
        }
    }

    pub fn merge(&mut self, other: &Counts) {
        self.correct += other.correct;
        self.total += other.total;
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    /// `2·TP / (2·TP + FP + FN)`; zero when there is nothing positive on
    /// either side.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::Accuracy => self.accuracy(),
            Metric::F1Binary => self.f1(),
        }
    }
}

/// Tallies argmax predictions of the listed rows.
pub fn count<S: crate::Scalar>(scores: &Tensor<S>, targets: &[u32], rows: &[u32]) -> Result<Counts> {
    if rows.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let pred = scores.argmax_rows();
    let mut c = Counts::default();
    for &r in rows {
        let r = r as usize;
        if r >= pred.len() || r >= targets.len() {
            return Err(Error::IndexOutOfRange {
                what: "evaluation row",
                index: r,
                len: pred.len(),
            });
        }
        c.add(pred[r], targets[r] as usize);
    }
    Ok(c)
}

pub fn accuracy(predicted: &[usize], targets: &[u32]) -> Result<f64> {
    let mut c = Counts::default();
    if predicted.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    for (&p, &t) in predicted.iter().zip(targets) {
        c.add(p, t as usize);
    }
    Ok(c.accuracy())
}

pub fn f1_binary(predicted: &[usize], targets: &[u32]) -> Result<f64> {
    let mut c = Counts::default();
    if predicted.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    for (&p, &t) in predicted.iter().zip(targets) {
        c.add(p, t as usize);
    }
    Ok(c.f1())
}

/// Summed negative log-likelihood of the listed rows, in `f64`.
pub fn cross_entropy_sum<S: crate::Scalar>(scores: &Tensor<S>, targets: &[u32], rows: &[u32]) -> f64 {
    rows.iter()
        .map(|&r| {
            let row: Vec<f64> = scores.row(r as usize).iter().map(|v| v.to_f64_lossy()).collect();
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[targets[r as usize] as usize]
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

/// Per-epoch record of one trial. The accuracy columns hold F1 for edge
/// tasks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<EpochRow>,
}

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,val_acc,test_acc,lr,wall_ms";

impl MetricsLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{:e},{}",
                r.epoch, r.train_loss, r.train_acc, r.val_acc, r.test_acc, r.lr, r.wall_ms
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Same rows with the wall-clock column zeroed.
    pub fn without_timing(&self) -> MetricsLog {
        MetricsLog {
            rows: self
                .rows
                .iter()
                .map(|r| EpochRow { wall_ms: 0, ..r.clone() })
                .collect(),
        }
    }
}

/// Mean and sample standard deviation; the deviation of one value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub dataset: String,
    pub model: String,
    pub values: Vec<f64>,
}

pub const SUMMARY_HEADER: &str = "dataset,model,trials,mean,std";

impl Summary {
    pub fn to_csv(&self) -> String {
        let (mean, std) = mean_std(&self.values);
        format!(
            "{SUMMARY_HEADER}\n{},{},{},{:.6},{:.6}\n",
            self.dataset,
            self.model,
            self.values.len(),
            mean,
            std
        )
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
