//! Per-task classification metrics and the cross-task mean-F1 fitness.
//!
//! Conventions: labels of `-1` are skipped; a prediction outside the class
//! range counts as a miss for its true class; any 0/0 ratio is 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textfmt::{self, Record};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    /// `counts[label * K + pred]`
    pub counts: Vec<u64>,
    /// Per true class: predictions outside `0..K`.
    pub invalid: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self { num_classes, counts: vec![0; num_classes * num_classes], invalid: vec![0; num_classes] }
    }

    pub fn from_pairs(num_classes: usize, preds: &[i64], labels: &[i64]) -> Self {
        let mut m = Self::new(num_classes);
        for (&p, &y) in preds.iter().zip(labels) {
            m.add(p, y);
        }
        m
    }

    pub fn add(&mut self, pred: i64, label: i64) {
        let k = self.num_classes as i64;
        if label < 0 || label >= k {
            return;
        }
        if pred < 0 || pred >= k {
            self.invalid[label as usize] += 1;
        } else {
            self.counts[(label * k + pred) as usize] += 1;
        }
    }

    /// Elementwise sum; used to combine shards evaluated in parallel.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::dim(format!("merging {}-class and {}-class matrices", self.num_classes, other.num_classes)));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        self.invalid.iter_mut().zip(&other.invalid).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn support(&self, class: usize) -> u64 {
        let k = self.num_classes;
        self.counts[class * k..(class + 1) * k].iter().sum::<u64>() + self.invalid[class]
    }

    pub fn total(&self) -> u64 {
        (0..self.num_classes).map(|c| self.support(c)).sum()
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: String,
    pub samples: u64,
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub support: Vec<u64>,
    pub weighted_f1: f64,
    /// No labelled samples: left out of the global mean.
    pub excluded: bool,
}

impl TaskMetrics {
    pub fn from_confusion(task: impl Into<String>, m: &ConfusionMatrix) -> Self {
        let k = m.num_classes;
        let samples = m.total();
        let tp: Vec<u64> = (0..k).map(|c| m.counts[c * k + c]).collect();
        let predicted: Vec<u64> = (0..k).map(|c| (0..k).map(|y| m.counts[y * k + c]).sum()).collect();
        let support: Vec<u64> = (0..k).map(|c| m.support(c)).collect();
        let precision: Vec<f64> = (0..k).map(|c| ratio(tp[c], predicted[c])).collect();
        let recall: Vec<f64> = (0..k).map(|c| ratio(tp[c], support[c])).collect();
        let f1: Vec<f64> = precision.iter().zip(&recall).map(|(&p, &r)| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) }).collect();
        let weighted_f1 = if samples == 0 { 0.0 } else { f1.iter().zip(&support).map(|(f, &s)| f * s as f64).sum::<f64>() / samples as f64 };
        Self { task: task.into(), samples, accuracy: ratio(tp.iter().sum(), samples), precision, recall, f1, support, weighted_f1, excluded: samples == 0 }
    }
}

/// Metrics for one task from predictions and labels (`-1` skipped).
pub fn task_metrics(task: &str, num_classes: usize, preds: &[i64], labels: &[i64]) -> TaskMetrics {
    TaskMetrics::from_confusion(task, &ConfusionMatrix::from_pairs(num_classes, preds, labels))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tasks: Vec<TaskMetrics>,
}

impl MetricsReport {
    /// Unweighted mean of per-task weighted F1 over included tasks.
    pub fn mean_f1(&self) -> Result<f64> {
        let included: Vec<f64> = self.tasks.iter().filter(|t| !t.excluded).map(|t| t.weighted_f1).collect();
        if included.is_empty() {
            return Err(Error::Evaluation("no task has labelled samples".into()));
        }
        Ok(included.iter().sum::<f64>() / included.len() as f64)
    }

    pub fn task(&self, name: &str) -> Option<&TaskMetrics> {
        self.tasks.iter().find(|t| t.task == name)
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(",");
        let mut recs: Vec<Record> = self
            .tasks
            .iter()
            .map(|t| {
                Record::new("task")
                    .with("name", &t.task)
                    .with("samples", t.samples)
                    .with("excluded", t.excluded)
                    .with("accuracy", format!("{:.6}", t.accuracy))
                    .with("weighted_f1", format!("{:.6}", t.weighted_f1))
                    .with("precision", join(&t.precision))
                    .with("recall", join(&t.recall))
                    .with("f1", join(&t.f1))
                    .with("support", t.support.iter().map(u64::to_string).collect::<Vec<_>>().join(","))
            })
            .collect();
        let mean = self.mean_f1().map(|m| format!("{m:.6}")).unwrap_or_else(|_| "nan".into());
        let included = self.tasks.iter().filter(|t| !t.excluded).count();
        recs.push(Record::new("global").with("mean_f1", mean).with("tasks_included", included));
        textfmt::write("metrics", &recs)
    }

    /// Parses [`MetricsReport::to_text`] output (values at 6 decimals).
    pub fn from_text(text: &str) -> Result<Self> {
        let list = |r: &Record, k: &str| -> Result<Vec<f64>> {
            let raw = r.require(k)?;
            if raw.is_empty() {
                return Ok(Vec::new());
            }
            raw.split(',').map(|x| x.parse().map_err(|_| Error::Parse { line: r.line, msg: format!("bad number `{x}` in `{k}`") })).collect()
        };
        let mut tasks = Vec::new();
        for r in textfmt::parse("metrics", text)? {
            if r.tag != "task" {
                continue;
            }
            tasks.push(TaskMetrics {
                task: r.require("name")?.to_string(),
                samples: r.parse("samples")?,
                accuracy: r.parse("accuracy")?,
                precision: list(&r, "precision")?,
                recall: list(&r, "recall")?,
                f1: list(&r, "f1")?,
                support: list(&r, "support")?.into_iter().map(|v| v as u64).collect(),
                weighted_f1: r.parse("weighted_f1")?,
                excluded: r.parse("excluded")?,
            });
        }
        Ok(Self { tasks })
    }
}

/// Unweighted mean of per-fold fitness values.
pub fn fold_mean(fitness: &[f64]) -> Result<f64> {
    if fitness.is_empty() {
        return Err(Error::Evaluation("no folds to aggregate".into()));
    }
    Ok(fitness.iter().sum::<f64>() / fitness.len() as f64)
}
