use std::ops::Range;

use chrono::NaiveDate;
use ndarray::{s, Array1, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{mse_with_grad, time_major, Architecture, ForecastModel, Mode, Network};
use crate::corpus::{make_windows, FeatureFrame, WindowSample};
use crate::error::{Error, Result};
use crate::index::MeanStd;
use crate::rng::{substream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dropout: f64,
    pub batch: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub layers: usize,
    pub highway: bool,
    /// Chronologically last share of the training samples held out for
    /// early stopping.
    pub validation_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dropout: 0.2,
            batch: 32,
            hidden: 128,
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            max_epochs: 1000,
            patience: 20,
            seed: 0,
            layers: 2,
            highway: true,
            validation_fraction: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn architecture(&self, input: usize) -> Architecture {
        Architecture {
            input,
            hidden: self.hidden,
            layers: self.layers,
            highway: self.highway,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(0.0..1.0).contains(&self.dropout) {
            bad.push("dropout");
        }
        if self.batch == 0 {
            bad.push("batch");
        }
        if self.hidden == 0 {
            bad.push("hidden");
        }
        if self.layers == 0 {
            bad.push("layers");
        }
        if !(self.learning_rate > 0.0) {
            bad.push("learning_rate");
        }
        if !(self.weight_decay >= 0.0) {
            bad.push("weight_decay");
        }
        if self.max_epochs == 0 {
            bad.push("max_epochs");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            bad.push("validation_fraction");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid training settings: {}", bad.join(", "))))
        }
    }
}

/// Adaptive-moment optimizer with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl AdamW {
    pub fn new(params: usize, config: &TrainConfig) -> Self {
        Self {
            m: vec![0.0; params],
            v: vec![0.0; params],
            t: 0,
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.epsilon,
            weight_decay: config.weight_decay,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *p *= 1.0 - self.lr * self.weight_decay;
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean of the mini-batch losses in training mode.
    pub train: f64,
    /// Validation loss in evaluation mode, when a validation split exists.
    pub validation: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ForecastModel,
    pub history: Vec<EpochLoss>,
    pub best_epoch: usize,
}

fn eval_mse(net: &Network, samples: &[&WindowSample]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in samples.chunks(256) {
        let views: Vec<ArrayView2<'_, f64>> = chunk.iter().map(|s| s.features.view()).collect();
        let tape = net.forward(&time_major(&views)?, Mode::Eval)?;
        let target = Array1::from_iter(chunk.iter().map(|s| s.target));
        total += (&tape.predictions - &target).mapv(|d| d * d).sum();
    }
    Ok(total / samples.len() as f64)
}

/// Mini-batch AdamW on the mean squared error with early stopping on the
/// validation split. The best-validation parameters are restored.
pub fn train(model: ForecastModel, samples: &[WindowSample], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "training needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let width = model.input_width();
    if let Some(bad) = samples.iter().find(|s| s.features.ncols() != width) {
        return Err(Error::Shape(format!(
            "sample for {} has {} features, model expects {width}",
            bad.target_date,
            bad.features.ncols()
        )));
    }

    let n = samples.len();
    let n_val = if config.validation_fraction > 0.0 {
        ((config.validation_fraction * n as f64).floor() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let (train_set, val_set) = samples.split_at(n - n_val);
    let val_refs: Vec<&WindowSample> = val_set.iter().collect();

    let mut model = model;
    let mut net = model.network.clone();
    let mut flat = net.to_flat();
    let mut opt = AdamW::new(flat.len(), config);
    let mut shuffle_rng = substream(config.seed, Stream::Shuffle);
    let mut dropout_rng = substream(config.seed, Stream::Dropout);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    let mut best_net = net.clone();
    let mut best_epoch = 0;
    let mut waited = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch) {
            let views: Vec<ArrayView2<'_, f64>> =
                chunk.iter().map(|&i| train_set[i].features.view()).collect();
            let target = Array1::from_iter(chunk.iter().map(|&i| train_set[i].target));
            let tape = net.forward(
                &time_major(&views)?,
                Mode::Train {
                    dropout: config.dropout,
                    rng: &mut dropout_rng,
                },
            )?;
            let (loss, d_pred) = mse_with_grad(&tape.predictions, &target);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            let grad = net.backward(&tape, &d_pred).to_flat();
            opt.step(&mut flat, &grad);
            net.set_flat(&flat);
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let validation = if val_refs.is_empty() {
            None
        } else {
            Some(eval_mse(&net, &val_refs)?)
        };
        let monitored = validation.unwrap_or(train_loss);
        if !monitored.is_finite() || !net.all_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.push(EpochLoss {
            epoch,
            train: train_loss,
            validation,
        });
        if monitored < best {
            best = monitored;
            best_net = net.clone();
            best_epoch = epoch;
            waited = 0;
        } else {
            waited += 1;
            if waited > config.patience {
                break;
            }
        }
    }
    model.network = best_net;
    model.config = config.clone();
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}

/// Per-feature and target standardization fitted on the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub features: Vec<MeanStd>,
    pub target: MeanStd,
}

impl Normalization {
    pub fn fit(frame: &FeatureFrame, rows: Range<usize>) -> Result<Self> {
        if rows.is_empty() || rows.end > frame.len() {
            return Err(Error::InsufficientData("no rows to fit normalization".into()));
        }
        let block = frame.rows.slice(s![rows.clone(), ..]);
        let features = block
            .columns()
            .into_iter()
            .map(|c| MeanStd::fit(&c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            features,
            target: MeanStd::fit(&frame.target[rows])?,
        })
    }

    pub fn normalize_target(&self, y: f64) -> f64 {
        self.target.apply(y)
    }

    pub fn denormalize_target(&self, z: f64) -> f64 {
        if self.target.std > 0.0 {
            z * self.target.std + self.target.mean
        } else {
            self.target.mean
        }
    }

    pub fn apply(&self, frame: &FeatureFrame) -> Result<FeatureFrame> {
        if frame.width() != self.features.len() {
            return Err(Error::Shape(format!(
                "frame has {} features, normalization fitted on {}",
                frame.width(),
                self.features.len()
            )));
        }
        let mut rows = frame.rows.clone();
        for (mut col, st) in rows.columns_mut().into_iter().zip(&self.features) {
            col.mapv_inplace(|v| st.apply(v));
        }
        Ok(FeatureFrame {
            dates: frame.dates.clone(),
            names: frame.names.clone(),
            rows,
            target: frame.target.iter().map(|&y| self.normalize_target(y)).collect(),
        })
    }
}

/// Normalized windows for every target row in `target_rows`.
pub fn build_samples(
    frame: &FeatureFrame,
    norm: &Normalization,
    window: usize,
    target_rows: Range<usize>,
) -> Result<Vec<WindowSample>> {
    let normalized = norm.apply(frame)?;
    Ok(make_windows(&normalized, window)?
        .into_iter()
        .filter(|s| target_rows.contains(&s.target_row))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictedPoint {
    pub date: NaiveDate,
    pub actual: f64,
    pub predicted: f64,
}

/// Price forecasts for each row in `target_rows` of a raw (unnormalized)
/// frame, each from the `model.window` rows before it.
pub fn predict_series(
    model: &ForecastModel,
    frame: &FeatureFrame,
    target_rows: Range<usize>,
) -> Result<Vec<PredictedPoint>> {
    let norm = model
        .normalization
        .as_ref()
        .ok_or_else(|| Error::Validation("model has no normalization statistics".into()))?;
    let window = model.window;
    if window == 0 {
        return Err(Error::Validation("model window is not set".into()));
    }
    if target_rows.end > frame.len() {
        return Err(Error::InsufficientData("target rows exceed the feature frame".into()));
    }
    let short: Vec<String> = target_rows
        .clone()
        .filter(|&t| t < window)
        .map(|t| frame.dates[t].to_string())
        .collect();
    if !short.is_empty() {
        return Err(Error::InsufficientData(format!(
            "fewer than {window} history rows before {}",
            short.join(", ")
        )));
    }
    let normalized = norm.apply(frame)?;
    let rows: Vec<usize> = target_rows.collect();
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(256) {
        let views: Vec<ArrayView2<'_, f64>> = chunk
            .iter()
            .map(|&t| normalized.rows.slice(s![t - window..t, ..]))
            .collect();
        let tape = model.network.forward(&time_major(&views)?, Mode::Eval)?;
        for (&t, &z) in chunk.iter().zip(tape.predictions.iter()) {
            out.push(PredictedPoint {
                date: frame.dates[t],
                actual: frame.target[t],
                predicted: norm.denormalize_target(z),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_match_published_settings() {
        let c = TrainConfig::default();
        assert_eq!(c.dropout, 0.2);
        assert_eq!(c.batch, 32);
        assert_eq!(c.hidden, 128);
        assert_eq!(c.learning_rate, 1e-3);
        assert_eq!(c.weight_decay, 1e-2);
        assert_eq!(c.max_epochs, 1000);
        assert_eq!(c.patience, 20);
        assert_eq!(c.validation_fraction, 0.1);
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let c = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut opt = AdamW::new(2, &c);
        let mut p = vec![1.0, -1.0];
        opt.step(&mut p, &[0.5, -2.0]);
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p[1] - (-1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn decay_is_decoupled() {
        let c = TrainConfig::default();
        let mut opt = AdamW::new(1, &c);
        let mut p = vec![2.0];
        opt.step(&mut p, &[0.0]);
        assert!((p[0] - 2.0 * (1.0 - 1e-5)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn target_round_trip(mean in -1e3f64..1e3, std in 1e-3f64..1e3, y in -1e4f64..1e4) {
            let n = Normalization { features: vec![], target: MeanStd { mean, std } };
            let back = n.denormalize_target(n.normalize_target(y));
            prop_assert!((back - y).abs() <= 1e-10 * y.abs().max(1.0));
        }
    }
}
