//! Nearest-neighbour classification in code space.
//!
//! A test image `v` is encoded against a trained basis `W` (binary code via
//! the QUBO solver for NBMF models, multiplicative-update code for NMF
//! models) and labelled by majority vote of its nearest training codes.
//! Distance ties go to the lower column index; vote ties go to the tied
//! label whose member is nearest.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Codes, FactorModel, LabeledDataset};
use crate::error::{Error, Result};
use crate::linalg::{BinaryMatrix, Matrix};
use crate::nmf::nmf_encode;
use crate::qubo::build_from_column;
use crate::solver::{solve, AnnealConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub column_index: usize,
    pub distance: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyConfig {
    pub neighbors: usize,
    pub anneal: AnnealConfig,
    /// Stopping threshold for NMF test-image codes.
    pub nmf_code_tol: f64,
    pub nmf_code_max_iters: usize,
    pub epsilon_div: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            neighbors: 3,
            anneal: AnnealConfig::default(),
            nmf_code_tol: 1e-8,
            nmf_code_max_iters: 5000,
            epsilon_div: 1e-12,
        }
    }
}

pub fn euclidean_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dim(
            "euclidean_distance",
            format!("lengths {} and {}", x.len(), y.len()),
        ));
    }
    Ok(x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Binary code `h` minimising `||v - W h||`.
pub fn encode(w: &Matrix, v: &[f64], anneal: &AnnealConfig) -> Result<Vec<u8>> {
    if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::InvalidParameter("test image values must lie in [0, 1]".into()));
    }
    let problem = build_from_column(w, v)?;
    Ok(solve(&problem, anneal)?.q)
}

/// The `count` training columns nearest to `code`, nearest first.
pub fn nearest_neighbors(
    code: &[f64],
    train: &Codes,
    labels: &[String],
    count: usize,
) -> Result<Vec<Neighbor>> {
    if labels.len() != train.cols() {
        return Err(Error::dim(
            "nearest_neighbors",
            format!("{} labels for {} training codes", labels.len(), train.cols()),
        ));
    }
    if count == 0 || train.cols() < count {
        return Err(Error::InvalidParameter(format!(
            "need between 1 and {} neighbours, asked for {count}",
            train.cols()
        )));
    }
    let mut scored = (0..train.cols())
        .map(|c| euclidean_distance(code, &train.column(c)).map(|d| (d, c)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(scored
        .into_iter()
        .take(count)
        .map(|(distance, column_index)| Neighbor {
            column_index,
            distance,
            label: labels[column_index].clone(),
        })
        .collect())
}

/// Majority label of `neighbors` (ordered nearest first).
pub fn vote(neighbors: &[Neighbor]) -> Option<String> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for n in neighbors {
        *counts.entry(n.label.as_str()).or_default() += 1;
    }
    let top = counts.values().copied().max()?;
    neighbors
        .iter()
        .find(|n| counts[n.label.as_str()] == top)
        .map(|n| n.label.clone())
}

/// k-NN prediction for a binary code against the columns of `h`.
pub fn knn_predict(code: &[u8], h: &BinaryMatrix, labels: &[String], neighbors: usize) -> Result<String> {
    if code.len() != h.rows() {
        return Err(Error::dim(
            "knn_predict",
            format!("code of length {} for {} features", code.len(), h.rows()),
        ));
    }
    let code: Vec<f64> = code.iter().map(|&b| b as f64).collect();
    let nearest = nearest_neighbors(&code, &Codes::Binary(h.clone()), labels, neighbors)?;
    Ok(vote(&nearest).expect("at least one neighbour"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub test_index: usize,
    pub true_label: String,
    pub predicted_label: String,
    pub code: Vec<f64>,
    pub neighbors: Vec<Neighbor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub predictions: Vec<Prediction>,
    pub correct: usize,
    pub total: usize,
}

impl AccuracyReport {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    /// `correct/total (percent%)`.
    pub fn summary(&self) -> String {
        format!(
            "{}/{} ({:.2}%)",
            self.correct,
            self.total,
            100.0 * self.accuracy()
        )
    }

    /// `test_index,true_label,predicted_label,neighbor1_index,neighbor1_distance,...`
    pub fn to_csv(&self) -> String {
        let width = self.predictions.iter().map(|p| p.neighbors.len()).max().unwrap_or(0);
        let mut out = String::from("test_index,true_label,predicted_label");
        for i in 1..=width {
            out.push_str(&format!(",neighbor{i}_index,neighbor{i}_distance"));
        }
        out.push('\n');
        for p in &self.predictions {
            out.push_str(&format!("{},{},{}", p.test_index, p.true_label, p.predicted_label));
            for n in &p.neighbors {
                out.push_str(&format!(",{},{}", n.column_index, n.distance));
            }
            out.push('\n');
        }
        out
    }
}

/// Encodes and classifies every test image. Image `i` is annealed with seed
/// `cfg.anneal.seed ^ i`, so results do not depend on thread count.
pub fn evaluate_accuracy(
    model: &FactorModel,
    test: &LabeledDataset,
    cfg: &ClassifyConfig,
) -> Result<AccuracyReport> {
    model.validate()?;
    if test.is_empty() {
        return Err(Error::InvalidParameter("empty test set".into()));
    }
    if model.labels.is_empty() {
        return Err(Error::InvalidParameter("model has no training labels".into()));
    }
    if test.pixels() != model.w.rows() {
        return Err(Error::dim(
            "evaluate_accuracy",
            format!("test images have {} pixels, model expects {}", test.pixels(), model.w.rows()),
        ));
    }
    let known: HashSet<&str> = model.labels.iter().map(String::as_str).collect();
    if let Some(bad) = test.labels().iter().find(|l| !known.contains(l.as_str())) {
        return Err(Error::InvalidParameter(format!(
            "test label {bad:?} does not occur in the training labels"
        )));
    }
    cfg.anneal.validate()?;

    let predictions = (0..test.len())
        .into_par_iter()
        .map(|i| {
            let v = test.matrix().column(i);
            let code: Vec<f64> = match &model.h {
                Codes::Binary(_) => {
                    let anneal = cfg.anneal.reseeded(cfg.anneal.seed ^ i as u64);
                    encode(&model.w, &v, &anneal)?
                        .into_iter()
                        .map(f64::from)
                        .collect()
                }
                Codes::Real(_) => nmf_encode(
                    &v,
                    &model.w,
                    cfg.nmf_code_tol,
                    cfg.nmf_code_max_iters,
                    cfg.epsilon_div,
                )?,
            };
            let neighbors = nearest_neighbors(&code, &model.h, &model.labels, cfg.neighbors)?;
            Ok(Prediction {
                test_index: i,
                true_label: test.labels()[i].clone(),
                predicted_label: vote(&neighbors).expect("at least one neighbour"),
                code,
                neighbors,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let correct = predictions
        .iter()
        .filter(|p| p.true_label == p.predicted_label)
        .count();
    Ok(AccuracyReport {
        total: predictions.len(),
        correct,
        predictions,
    })
}
