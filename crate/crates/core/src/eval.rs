//! Classification metrics, confusion matrices and the accuracy/duration
//! report.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{predict_batch, MlpModel, NnError, Samples, TrainHistory};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no examples to evaluate")]
    Empty,
    #[error("{0}")]
    Mismatch(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    /// True instances.
    pub support: usize,
    pub predicted: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// No predictions of this class; precision reported as 0.
    pub precision_undefined: bool,
    /// No instances of this class; recall reported as 0.
    pub recall_undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_examples: usize,
    pub accuracy: f64,
    pub train_accuracy: Option<f64>,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub train_duration_s: Option<f64>,
    pub inference_duration_s: f64,
}

impl EvalReport {
    pub fn n_classes(&self) -> usize {
        self.confusion.len()
    }

    /// Attach training accuracy (last epoch) and duration.
    pub fn with_training(mut self, hist: &TrainHistory) -> Self {
        self.train_accuracy = hist.train_accuracy.last().copied();
        self.train_duration_s = Some(hist.train_duration_s);
        self
    }

    /// Sum over classes of true positives divided by total support.
    pub fn micro_recall(&self) -> f64 {
        let tp: usize = (0..self.n_classes()).map(|c| self.confusion[c][c]).sum();
        tp as f64 / self.n_examples as f64
    }
}

/// Metrics from predicted and true class indices.
pub fn metrics(predicted: &[usize], truth: &[usize], labels: &[String]) -> Result<EvalReport> {
    if truth.is_empty() {
        return Err(EvalError::Empty);
    }
    if predicted.len() != truth.len() {
        return Err(EvalError::Mismatch(format!(
            "{} predictions for {} examples",
            predicted.len(),
            truth.len()
        )));
    }
    let c = labels.len();
    let mut confusion = vec![vec![0usize; c]; c];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p >= c || t >= c {
            return Err(EvalError::Mismatch(format!("class index out of range for {c} classes")));
        }
        confusion[t][p] += 1;
    }
    let n = truth.len();
    let correct: usize = (0..c).map(|k| confusion[k][k]).sum();
    let per_class = (0..c)
        .map(|k| {
            let tp = confusion[k][k] as f64;
            let support: usize = confusion[k].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[k]).sum();
            let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
            let recall = if support > 0 { tp / support as f64 } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                label: labels[k].clone(),
                support,
                predicted,
                precision,
                recall,
                f1,
                precision_undefined: predicted == 0,
                recall_undefined: support == 0,
            }
        })
        .collect();
    Ok(EvalReport {
        n_examples: n,
        accuracy: correct as f64 / n as f64,
        train_accuracy: None,
        per_class,
        confusion,
        train_duration_s: None,
        inference_duration_s: 0.0,
    })
}

/// Timed eval-mode inference over `data` followed by [`metrics`].
pub fn evaluate(model: &MlpModel, data: &Samples, labels: &[String]) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(EvalError::Empty);
    }
    if labels.len() != model.n_classes() {
        return Err(EvalError::Mismatch(format!(
            "{} labels for a {}-class model",
            labels.len(),
            model.n_classes()
        )));
    }
    let start = Instant::now();
    let predicted: Vec<usize> = predict_batch(model, &data.x)?.into_iter().map(|(c, _)| c).collect();
    let elapsed = start.elapsed().as_secs_f64();
    let mut report = metrics(&predicted, &data.y, labels)?;
    report.inference_duration_s = elapsed;
    Ok(report)
}

pub fn confusion_csv(report: &EvalReport) -> String {
    let mut out = String::from("true\\predicted");
    for m in &report.per_class {
        out.push(',');
        out.push_str(&m.label);
    }
    out.push('\n');
    for (m, row) in report.per_class.iter().zip(&report.confusion) {
        out.push_str(&m.label);
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Writes `<prefix>.json` and `<prefix>_confusion.csv`.
pub fn report_emit(report: &EvalReport, path_prefix: &Path) -> Result<Vec<PathBuf>> {
    let stem = path_prefix.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let json = path_prefix.with_file_name(format!("{stem}.json"));
    let csv = path_prefix.with_file_name(format!("{stem}_confusion.csv"));
    std::fs::write(&json, serde_json::to_string_pretty(report)? + "\n")?;
    std::fs::write(&csv, confusion_csv(report))?;
    Ok(vec![json, csv])
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// One line in the style of an accuracy/duration results table.
pub fn summary_row(model_name: &str, report: &EvalReport) -> String {
    let pct = |v: Option<f64>| v.map_or("-".to_string(), |a| format!("{:.1}%", 100.0 * a));
    let secs = |v: Option<f64>| v.map_or("-".to_string(), |s| format!("{s:.2} s"));
    format!(
        "{model_name} | {} | {} | {} | {}",
        pct(report.train_accuracy),
        pct(Some(report.accuracy)),
        secs(report.train_duration_s),
        secs(Some(report.inference_duration_s))
    )
}
