//! Argmax classification and dataset-level evaluation reports.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, Dataset};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::Tensor;
use crate::training::{mse_loss, one_hot_target};
use crate::NUM_CLASSES;

/// Anything that maps a preprocessed image to twelve class scores.
pub trait Scorer {
    fn scores(&self, image: &Tensor) -> Result<Vec<f64>>;
}

impl Scorer for Network {
    fn scores(&self, image: &Tensor) -> Result<Vec<f64>> {
        Network::scores(self, image)
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: ClassLabel,
    pub scores: Vec<f64>,
}

pub fn predict(model: &impl Scorer, image: &Tensor) -> Result<Prediction> {
    let scores = model.scores(image)?;
    if scores.len() != NUM_CLASSES {
        return Err(Error::dimension("predict", NUM_CLASSES, scores.len()));
    }
    Ok(Prediction {
        label: ClassLabel::from_index(argmax(&scores))?,
        scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    /// `None` when nothing was predicted as this class.
    pub precision: Option<f64>,
    /// `None` when the class has no samples.
    pub recall: Option<f64>,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: u64,
    pub mse: f64,
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<u64>>,
    /// Keyed by class slug, in class-index order.
    pub per_class: IndexMap<String, ClassMetrics>,
}

impl EvalReport {
    /// Builds the derived fields from a confusion matrix and summed per-sample MSE.
    pub fn from_confusion(confusion: [[u64; NUM_CLASSES]; NUM_CLASSES], mse_sum: f64) -> Self {
        let samples: u64 = confusion.iter().flatten().sum();
        let trace: u64 = (0..NUM_CLASSES).map(|i| confusion[i][i]).sum();
        let per_class = ClassLabel::ALL
            .iter()
            .map(|&label| {
                let c = label.index();
                let tp = confusion[c][c];
                let support: u64 = confusion[c].iter().sum();
                let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
                let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
                (
                    label.slug().to_string(),
                    ClassMetrics {
                        precision: ratio(tp, predicted),
                        recall: ratio(tp, support),
                        support,
                    },
                )
            })
            .collect();
        let (mse, accuracy) = if samples == 0 {
            (0.0, 0.0)
        } else {
            (mse_sum / samples as f64, trace as f64 / samples as f64)
        };
        EvalReport {
            samples,
            mse,
            accuracy,
            confusion: confusion.iter().map(|r| r.to_vec()).collect(),
            per_class,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Data(format!("invalid report: {e}")))
    }
}

/// MSE against one-hot targets, accuracy, and the confusion matrix.
pub fn evaluate(model: &impl Scorer, dataset: &Dataset) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    let mut confusion = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    let mut mse_sum = 0.0;
    for item in dataset {
        let p = predict(model, &item.tensor)?;
        mse_sum += mse_loss(&p.scores, &one_hot_target(item.label.index())?)?;
        confusion[item.label.index()][p.label.index()] += 1;
    }
    Ok(EvalReport::from_confusion(confusion, mse_sum))
}
