use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{LstmModel, LstmParams, Normalization, SequenceDataset, Window, FEATURE_COUNT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub histogram_bins: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_size: super::DEFAULT_HIDDEN_SIZE,
            learning_rate: 0.1,
            epochs: 200,
            batch_size: 16,
            seed: 0,
            clip_norm: Some(5.0),
            histogram_bins: 21,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Symmetric bins around zero covering every value.
    pub fn symmetric(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let span = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        let width = 2.0 * span / bins as f64;
        let edges = (0..=bins).map(|i| -span + width * i as f64).collect();
        let mut counts = vec![0; bins];
        for v in values {
            let i = (((v + span) / width) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Self { edges, counts }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean squared error in normalized units; entry 0 is before any update.
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub best_epoch: usize,
    /// Prediction minus target on the validation split, strain units.
    pub error_histogram: Histogram,
    pub error_mean: f64,
    pub error_std: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn fit_normalization(train: &[Window]) -> Normalization {
    let floor = |s: f64| if s > 1e-12 { s } else { 1.0 };
    let mut input_mean = Vec::with_capacity(FEATURE_COUNT);
    let mut input_scale = Vec::with_capacity(FEATURE_COUNT);
    for d in 0..FEATURE_COUNT {
        let (m, s) = mean_std(train.iter().flat_map(|w| w.inputs.column(d).iter().copied().collect::<Vec<_>>()));
        input_mean.push(m);
        input_scale.push(floor(s));
    }
    let (target_mean, s) = mean_std(train.iter().map(|w| w.target));
    Normalization {
        input_mean,
        input_scale,
        target_mean,
        target_scale: floor(s),
    }
}

fn evaluate(model: &LstmModel, windows: &[Window]) -> Result<f64> {
    let mut total = 0.0;
    for w in windows {
        let pred = model.forward_sequence(&w.inputs)?;
        total += ((pred - w.target) / model.norm.target_scale).powi(2);
    }
    Ok(total / windows.len() as f64)
}

/// Mini-batch gradient descent on the training split, keeping the parameters
/// with the lowest validation loss. Deterministic for a given seed.
pub fn train(data: &SequenceDataset, cfg: &TrainConfig) -> Result<(LstmModel, TrainReport)> {
    if data.train.is_empty() || data.validation.is_empty() {
        return Err(Error::Empty("training and validation splits must be non-empty"));
    }
    if cfg.hidden_size == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("hidden size and batch size must be positive".into()));
    }
    if !(cfg.learning_rate >= 0.0) {
        return Err(Error::Config("learning rate must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let norm = fit_normalization(&data.train);
    let params = LstmParams::random(FEATURE_COUNT, cfg.hidden_size, &mut rng);
    let mut model = LstmModel::new(data.window, params, norm)?;

    let diverged = |epoch| move |_| Error::Diverged { epoch };
    let check = |loss: f64, epoch| {
        if loss.is_finite() {
            Ok(loss)
        } else {
            Err(Error::Diverged { epoch })
        }
    };
    let mut train_loss = vec![check(evaluate(&model, &data.train).map_err(diverged(0))?, 0)?];
    let mut validation_loss =
        vec![check(evaluate(&model, &data.validation).map_err(diverged(0))?, 0)?];
    let mut best = (validation_loss[0], 0, model.params.clone());

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (_, mut grad) = model
                .batch_gradient(batch.iter().map(|&i| (&data.train[i].inputs, data.train[i].target)))
                .map_err(diverged(epoch))?;
            if let Some(clip) = cfg.clip_norm {
                let n = grad.norm();
                if n > clip {
                    grad.scale(clip / n);
                }
            }
            model.params.add_scaled(&grad, -cfg.learning_rate);
        }
        let tl = check(evaluate(&model, &data.train).map_err(diverged(epoch))?, epoch)?;
        let vl = check(evaluate(&model, &data.validation).map_err(diverged(epoch))?, epoch)?;
        log::debug!("epoch {epoch}: train {tl:.6} validation {vl:.6}");
        train_loss.push(tl);
        validation_loss.push(vl);
        if vl < best.0 {
            best = (vl, epoch, model.params.clone());
        }
    }

    model.params = best.2;
    let errors: Vec<f64> = data
        .validation
        .iter()
        .map(|w| model.forward_sequence(&w.inputs).map(|p| p - w.target))
        .collect::<Result<_>>()?;
    let (error_mean, error_std) = mean_std(errors.iter().copied());
    let report = TrainReport {
        train_loss,
        validation_loss,
        best_epoch: best.1,
        error_histogram: Histogram::symmetric(&errors, cfg.histogram_bins),
        error_mean,
        error_std,
    };
    Ok((model, report))
}

/// Final validation loss of a fresh model per learning rate. Diverged runs
/// report `+inf`.
pub fn learning_rate_sweep(
    data: &SequenceDataset,
    rates: &[f64],
    cfg: &TrainConfig,
) -> Result<Vec<(f64, f64)>> {
    if rates.len() < 2 {
        return Err(Error::Config("learning-rate sweep needs at least two rates".into()));
    }
    rates
        .iter()
        .map(|&rate| {
            let run = TrainConfig {
                learning_rate: rate,
                ..cfg.clone()
            };
            match train(data, &run) {
                Ok((_, report)) => Ok((rate, *report.validation_loss.last().unwrap())),
                Err(Error::Diverged { epoch }) => {
                    log::warn!("learning rate {rate} diverged at epoch {epoch}");
                    Ok((rate, f64::INFINITY))
                }
                Err(e) => Err(e),
            }
        })
        .collect()
}
