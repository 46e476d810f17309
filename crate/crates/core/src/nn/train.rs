use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::ClassWeights;
use super::mlp::{batch_loss_grad, mlp_init, predict_batch, MlpModel, Mode};
use super::{NnError, Result};
use crate::represent::Example;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeightMode {
    #[default]
    InverseFrequency,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Drop probability after hidden layer 2.
    pub dropout_p: f64,
    pub seed: u64,
    pub class_weight_mode: ClassWeightMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 25,
            dropout_p: 0.66,
            seed: 0,
            class_weight_mode: ClassWeightMode::InverseFrequency,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(NnError::InvalidConfig(format!("dropout_p {} not in [0, 1)", self.dropout_p)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::InvalidConfig(format!("learning_rate {} must be > 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(NnError::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub val_accuracy: Vec<Option<f64>>,
    pub train_duration_s: f64,
    /// Eval-mode pass over the validation set (training set if none).
    pub inference_duration_s: f64,
}

/// Feature columns with their classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    /// `D × N`
    pub x: DMatrix<f64>,
    pub y: Vec<usize>,
}

impl Samples {
    pub fn new(x: DMatrix<f64>, y: Vec<usize>) -> Self {
        assert_eq!(x.ncols(), y.len());
        Self { x, y }
    }

    pub fn from_examples<'a, I: IntoIterator<Item = &'a Example>>(examples: I) -> Self {
        let mut cols = Vec::new();
        let mut y = Vec::new();
        for e in examples {
            cols.push(e.features.to_vector());
            y.push(e.class_index);
        }
        let d = cols.first().map_or(0, |c| c.len());
        let mut x = DMatrix::zeros(d, cols.len());
        for (j, c) in cols.iter().enumerate() {
            x.column_mut(j).copy_from_slice(c);
        }
        Self { x, y }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn gather(&self, idx: &[usize]) -> (DMatrix<f64>, Vec<usize>) {
        (self.x.select_columns(idx), idx.iter().map(|&i| self.y[i]).collect())
    }

    pub fn class_counts(&self, n_classes: usize) -> Vec<usize> {
        let mut c = vec![0; n_classes];
        for &y in &self.y {
            c[y] += 1;
        }
        c
    }
}

const EVAL_CHUNK: usize = 64;

/// Eval-mode predictions over all samples.
pub(crate) fn predict_all(model: &MlpModel, s: &Samples) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(s.len());
    let idx: Vec<usize> = (0..s.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, _) = s.gather(chunk);
        out.extend(predict_batch(model, &x)?.into_iter().map(|(c, _)| c));
    }
    Ok(out)
}

fn accuracy(model: &MlpModel, s: &Samples) -> Result<f64> {
    let pred = predict_all(model, s)?;
    let hits = pred.iter().zip(&s.y).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / s.len() as f64)
}

/// Plain mini-batch SGD on the mean weighted cross-entropy. The number of
/// classes is `w.len()`; classes without training examples are deactivated
/// in the returned model.
pub fn mlp_train(
    train: &Samples,
    val: Option<&Samples>,
    cfg: &TrainConfig,
    w: &ClassWeights,
) -> Result<(MlpModel, TrainHistory)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(NnError::EmptyTrainSet);
    }
    let c = w.len();
    if let Some(&bad) = train.y.iter().find(|&&y| y >= c) {
        return Err(NnError::BadTarget { class: bad, n_classes: c });
    }
    if let Some(v) = val {
        if v.dim() != train.dim() {
            return Err(NnError::DimensionMismatch {
                expected: train.dim(),
                found: v.dim(),
            });
        }
    }
    let start = Instant::now();
    let mut model = mlp_init(train.dim(), c, cfg.seed);
    model.active = train.class_counts(c).iter().map(|&n| n > 0).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut hist = TrainHistory {
        train_loss: Vec::with_capacity(cfg.epochs),
        train_accuracy: Vec::with_capacity(cfg.epochs),
        val_accuracy: Vec::with_capacity(cfg.epochs),
        train_duration_s: 0.0,
        inference_duration_s: 0.0,
    };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = train.gather(batch);
            let mode = Mode::Train {
                p: cfg.dropout_p,
                rng: &mut rng,
            };
            let (loss, grads, _) = batch_loss_grad(&model, &x, &y, w, mode)?;
            let grads_finite = grads.weights.iter().all(|g| g.iter().all(|v| v.is_finite()))
                && grads.biases.iter().all(|g| g.iter().all(|v| v.is_finite()));
            if !loss.is_finite() || !grads_finite {
                return Err(NnError::NonFiniteLoss { epoch: epoch + 1, batch: b + 1 });
            }
            for l in 0..model.weights.len() {
                model.weights[l].zip_apply(&grads.weights[l], |p, g| *p -= cfg.learning_rate * g);
                model.biases[l].zip_apply(&grads.biases[l], |p, g| *p -= cfg.learning_rate * g);
            }
            loss_sum += loss;
            n_batches += 1;
        }
        hist.train_loss.push(loss_sum / n_batches as f64);
        hist.train_accuracy.push(accuracy(&model, train)?);
        hist.val_accuracy.push(match val {
            Some(v) if !v.is_empty() => Some(accuracy(&model, v)?),
            _ => None,
        });
    }
    hist.train_duration_s = start.elapsed().as_secs_f64();
    let t = Instant::now();
    predict_all(&model, val.filter(|v| !v.is_empty()).unwrap_or(train))?;
    hist.inference_duration_s = t.elapsed().as_secs_f64();
    Ok((model, hist))
}
