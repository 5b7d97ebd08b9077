//! Forecast metrics and the experiment and ablation harness.
//!
//! An experiment builds a feature frame from a market series (close plus the
//! nine indicators) and optional daily sentiment columns, splits its rows
//! 8:2 in time order, fits normalization on the training rows, trains a
//! forecaster on the training windows and scores the next-day close on every
//! test row. Test windows may reach back into training rows for history.

use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{split_point, FeatureFrame, MarketSeries};
use crate::error::{Error, Result};
use crate::index::SentimentTable;
use crate::net::{
    build_samples, predict_series, train, EpochLoss, ForecastModel, Normalization,
    PredictedPoint, TrainConfig,
};
use crate::report::{fmt6, CsvTable};

/// Default share of feature rows used for training.
pub const TRAIN_RATIO: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegressionMetrics {
    pub rmse: f64,
    /// Percent.
    pub mape: f64,
    pub r2: f64,
}

fn check_pair(actual: &[f64], predicted: &[f64]) -> Result<()> {
    if actual.len() != predicted.len() {
        return Err(Error::Shape(format!(
            "{} actual values against {} predictions",
            actual.len(),
            predicted.len()
        )));
    }
    Ok(())
}

/// RMSE, MAPE (percent) and the coefficient of determination
/// `1 - SSE / Σ(y - ȳ)²`.
pub fn regression_metrics(actual: &[f64], predicted: &[f64]) -> Result<RegressionMetrics> {
    check_pair(actual, predicted)?;
    let n = actual.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "regression metrics need at least 2 points, got {n}"
        )));
    }
    if let Some(i) = actual.iter().position(|&y| y == 0.0) {
        return Err(Error::Validation(format!(
            "MAPE is undefined: actual value {i} is zero"
        )));
    }
    let nf = n as f64;
    let mean = actual.iter().sum::<f64>() / nf;
    let mut sse = 0.0;
    let mut sst = 0.0;
    let mut ape = 0.0;
    for (&y, &p) in actual.iter().zip(predicted) {
        sse += (y - p).powi(2);
        sst += (y - mean).powi(2);
        ape += ((y - p) / y).abs();
    }
    if sst == 0.0 {
        return Err(Error::Validation(
            "R2 is undefined for a constant actual series".into(),
        ));
    }
    Ok(RegressionMetrics {
        rmse: (sse / nf).sqrt(),
        mape: 100.0 * ape / nf,
        r2: 1.0 - sse / sst,
    })
}

/// Signed relative percentage error `100 (ŷ - y) / y` per point.
pub fn rpe_series(actual: &[f64], predicted: &[f64]) -> Result<Vec<f64>> {
    check_pair(actual, predicted)?;
    if let Some(i) = actual.iter().position(|&y| !(y > 0.0)) {
        return Err(Error::Validation(format!(
            "relative error needs positive actual values; point {i} is {}",
            actual[i]
        )));
    }
    Ok(actual
        .iter()
        .zip(predicted)
        .map(|(&y, &p)| 100.0 * (p - y) / y)
        .collect())
}

/// Mean over-prediction and mean under-prediction magnitudes, each over the
/// points on its side only (0 when there are none).
pub fn aose(actual: &[f64], predicted: &[f64]) -> Result<(f64, f64)> {
    check_pair(actual, predicted)?;
    let (mut over, mut n_over, mut under, mut n_under) = (0.0, 0usize, 0.0, 0usize);
    for (&y, &p) in actual.iter().zip(predicted) {
        if p > y {
            over += p - y;
            n_over += 1;
        } else if p < y {
            under += y - p;
            n_under += 1;
        }
    }
    let mean = |s: f64, k: usize| if k == 0 { 0.0 } else { s / k as f64 };
    Ok((mean(over, n_over), mean(under, n_under)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionReport {
    pub rmse: f64,
    pub mape: f64,
    pub r2: f64,
    pub rpe: Vec<f64>,
    pub aose_over: f64,
    pub aose_under: f64,
}

pub fn regression_report(actual: &[f64], predicted: &[f64]) -> Result<RegressionReport> {
    let m = regression_metrics(actual, predicted)?;
    let (aose_over, aose_under) = aose(actual, predicted)?;
    Ok(RegressionReport {
        rmse: m.rmse,
        mape: m.mape,
        r2: m.r2,
        rpe: rpe_series(actual, predicted)?,
        aose_over,
        aose_under,
    })
}

/// Names of the market columns every frame starts with: `close` followed by
/// the market's indicator names.
pub fn market_feature_names(market: &MarketSeries) -> Vec<String> {
    std::iter::once("close".to_string())
        .chain(market.indicator_names.iter().cloned())
        .collect()
}

/// Feature frame over the market's dates: close, the nine indicators, then
/// the requested sentiment columns. The target on each row is that day's
/// close, forecast from the rows before it.
pub fn build_feature_frame(
    market: &MarketSeries,
    sentiment: Option<&SentimentTable>,
    features: &[String],
) -> Result<FeatureFrame> {
    market.validate()?;
    let mut names = market_feature_names(market);
    let mut columns: Vec<Vec<f64>> = std::iter::once(market.close.clone())
        .chain(market.indicators.iter().cloned())
        .collect();
    if !features.is_empty() {
        let table = sentiment.ok_or_else(|| {
            Error::Validation(format!(
                "sentiment features {} requested without a sentiment table",
                features.join(",")
            ))
        })?;
        let missing_dates: Vec<String> = market
            .dates
            .iter()
            .filter(|d| table.dates.binary_search(d).is_err())
            .map(|d| d.to_string())
            .collect();
        if !missing_dates.is_empty() {
            return Err(Error::InsufficientData(format!(
                "sentiment table lacks {} market dates, first {}",
                missing_dates.len(),
                missing_dates[0]
            )));
        }
        for name in features {
            let col = table.column(name).ok_or_else(|| {
                Error::Validation(format!(
                    "unknown sentiment feature {name}; table has {}",
                    table.names.join(",")
                ))
            })?;
            columns.push(
                market
                    .dates
                    .iter()
                    .map(|d| col[table.dates.binary_search(d).expect("checked above")])
                    .collect(),
            );
            names.push(name.clone());
        }
    }
    let n = market.len();
    let rows = Array2::from_shape_fn((n, columns.len()), |(i, j)| columns[j][i]);
    Ok(FeatureFrame {
        dates: market.dates.clone(),
        names,
        rows,
        target: market.close.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub window: usize,
    pub train_ratio: f64,
}

impl ExperimentConfig {
    pub fn new(train: TrainConfig, window: usize) -> Self {
        Self {
            train,
            window,
            train_ratio: TRAIN_RATIO,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub model: ForecastModel,
    pub history: Vec<EpochLoss>,
    pub best_epoch: usize,
    pub train_rows: usize,
    pub predictions: Vec<PredictedPoint>,
    pub report: RegressionReport,
}

/// Trains on the leading rows of `frame` and evaluates on the rest, with
/// metrics in price units.
pub fn run_experiment(frame: &FeatureFrame, config: &ExperimentConfig) -> Result<ExperimentResult> {
    if !(config.train_ratio > 0.0 && config.train_ratio < 1.0) {
        return Err(Error::Validation(format!(
            "train ratio {} outside (0, 1)",
            config.train_ratio
        )));
    }
    let n = frame.len();
    let cut = split_point(n, config.train_ratio);
    if cut == 0 || cut == n {
        return Err(Error::InsufficientData(format!(
            "a {} split of {n} rows leaves an empty part",
            config.train_ratio
        )));
    }
    let train_frame = frame.head(cut);
    let norm = Normalization::fit(frame, 0..cut)?;
    let samples = build_samples(&train_frame, &norm, config.window, 0..cut)?;

    let mut model = ForecastModel::new(frame.width(), &config.train)?;
    model.feature_names = frame.names.clone();
    model.window = config.window;
    model.normalization = Some(norm);
    let outcome = train(model, &samples, &config.train)?;

    let predictions = predict_series(&outcome.model, frame, cut..n)?;
    let actual: Vec<f64> = predictions.iter().map(|p| p.actual).collect();
    let predicted: Vec<f64> = predictions.iter().map(|p| p.predicted).collect();
    let report = regression_report(&actual, &predicted)?;
    Ok(ExperimentResult {
        model: outcome.model,
        history: outcome.history,
        best_epoch: outcome.best_epoch,
        train_rows: cut,
        predictions,
        report,
    })
}

/// CSV `date,actual,predicted,rpe` at 6 decimals.
pub fn prediction_table(points: &[PredictedPoint]) -> Result<CsvTable> {
    let mut table = CsvTable::new(&["date", "actual", "predicted", "rpe"]);
    for p in points {
        let rpe = rpe_series(&[p.actual], &[p.predicted])?[0];
        table.push(vec![
            p.date.to_string(),
            fmt6(p.actual),
            fmt6(p.predicted),
            fmt6(rpe),
        ]);
    }
    Ok(table)
}

pub fn write_predictions_csv(path: &Path, points: &[PredictedPoint]) -> Result<()> {
    prediction_table(points)?.write(path)
}

/// The four model configurations of the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum AblationVariant {
    /// Market features only, carry gates disabled.
    Baseline,
    /// Market and sentiment features, carry gates disabled.
    Sentiment,
    /// Market features only, carry gates enabled.
    Highway,
    /// Market and sentiment features, carry gates enabled.
    Full,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [
        AblationVariant::Baseline,
        AblationVariant::Sentiment,
        AblationVariant::Highway,
        AblationVariant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Baseline => "BiLSTM",
            AblationVariant::Sentiment => "BiLSTM-SI",
            AblationVariant::Highway => "BiLSTM-highway",
            AblationVariant::Full => "BiLSTM-SI-highway",
        }
    }

    pub fn uses_sentiment(self) -> bool {
        matches!(self, AblationVariant::Sentiment | AblationVariant::Full)
    }

    pub fn uses_highway(self) -> bool {
        matches!(self, AblationVariant::Highway | AblationVariant::Full)
    }
}

#[derive(Debug, Clone)]
pub struct AblationConfig {
    pub train: TrainConfig,
    pub windows: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Sentiment columns given to the variants that use sentiment.
    pub features: Vec<String>,
    pub variants: Vec<AblationVariant>,
    pub train_ratio: f64,
}

impl AblationConfig {
    pub fn new(train: TrainConfig, features: Vec<String>) -> Self {
        Self {
            train,
            windows: vec![7, 15, 30],
            seeds: vec![0],
            features,
            variants: AblationVariant::ALL.to_vec(),
            train_ratio: TRAIN_RATIO,
        }
    }
}

/// Improvement ratios against the baseline, oriented so that values above 1
/// mean the variant is better: baseline/variant for RMSE and MAPE,
/// variant/baseline for R2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricRatios {
    pub rmse: f64,
    pub mape: f64,
    pub r2: f64,
}

impl MetricRatios {
    pub fn between(baseline: &RegressionMetrics, variant: &RegressionMetrics) -> Self {
        Self {
            rmse: baseline.rmse / variant.rmse,
            mape: baseline.mape / variant.mape,
            r2: variant.r2 / baseline.r2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationCell {
    pub variant: AblationVariant,
    pub window: usize,
    /// Per seed, in the order of `AblationConfig::seeds`.
    pub metrics: Vec<RegressionMetrics>,
    pub ratios: Vec<MetricRatios>,
    pub mean_metrics: RegressionMetrics,
    pub mean_ratios: MetricRatios,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub variants: Vec<AblationVariant>,
    pub windows: Vec<usize>,
    pub seeds: Vec<u64>,
    pub cells: Vec<AblationCell>,
}

impl AblationTable {
    pub fn cell(&self, variant: AblationVariant, window: usize) -> Option<&AblationCell> {
        self.cells
            .iter()
            .find(|c| c.variant == variant && c.window == window)
    }

    /// One row per variant; per window the mean RMSE, MAPE and R2 followed
    /// by the mean improvement ratios.
    pub fn to_csv(&self) -> CsvTable {
        let mut header = vec!["model".to_string()];
        for w in &self.windows {
            for col in ["rmse", "mape", "r2", "rmse_ratio", "mape_ratio", "r2_ratio"] {
                header.push(format!("w{w}_{col}"));
            }
        }
        let mut table = CsvTable::with_header(header);
        for &v in &self.variants {
            let mut row = vec![v.name().to_string()];
            for &w in &self.windows {
                let c = self.cell(v, w).expect("every variant has every window");
                for x in [
                    c.mean_metrics.rmse,
                    c.mean_metrics.mape,
                    c.mean_metrics.r2,
                    c.mean_ratios.rmse,
                    c.mean_ratios.mape,
                    c.mean_ratios.r2,
                ] {
                    row.push(fmt6(x));
                }
            }
            table.push(row);
        }
        table
    }
}

fn mean_of(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    values.sum::<f64>() / n
}

/// Trains every variant for every window and seed and tabulates mean metrics
/// and mean per-seed improvement ratios against the baseline.
pub fn run_ablation(
    market: &MarketSeries,
    sentiment: Option<&SentimentTable>,
    config: &AblationConfig,
) -> Result<AblationTable> {
    if config.seeds.is_empty() || config.windows.is_empty() {
        return Err(Error::Validation("ablation needs at least one seed and one window".into()));
    }
    let mut variants = config.variants.clone();
    variants.sort();
    variants.dedup();
    if !variants.contains(&AblationVariant::Baseline) {
        variants.insert(0, AblationVariant::Baseline);
    }
    if variants.iter().any(|v| v.uses_sentiment()) && config.features.is_empty() {
        return Err(Error::Validation(
            "sentiment variants need at least one sentiment feature".into(),
        ));
    }
    let plain = build_feature_frame(market, None, &[])?;
    let with_sentiment = if variants.iter().any(|v| v.uses_sentiment()) {
        Some(build_feature_frame(market, sentiment, &config.features)?)
    } else {
        None
    };

    let jobs: Vec<(AblationVariant, usize, u64)> = variants
        .iter()
        .flat_map(|&v| {
            config
                .windows
                .iter()
                .flat_map(move |&w| config.seeds.iter().map(move |&s| (v, w, s)))
        })
        .collect();
    let results: Vec<RegressionMetrics> = jobs
        .par_iter()
        .map(|&(variant, window, seed)| {
            let frame = if variant.uses_sentiment() {
                with_sentiment.as_ref().expect("built above")
            } else {
                &plain
            };
            let train = TrainConfig {
                seed,
                highway: variant.uses_highway(),
                ..config.train.clone()
            };
            let exp = ExperimentConfig {
                train,
                window,
                train_ratio: config.train_ratio,
            };
            let r = run_experiment(frame, &exp)?.report;
            Ok(RegressionMetrics {
                rmse: r.rmse,
                mape: r.mape,
                r2: r.r2,
            })
        })
        .collect::<Result<_>>()?;

    let per_cell = config.seeds.len();
    let per_variant = per_cell * config.windows.len();
    let baseline_at = |wi: usize, si: usize| results[wi * per_cell + si];
    let mut cells = Vec::new();
    for (vi, &variant) in variants.iter().enumerate() {
        for (wi, &window) in config.windows.iter().enumerate() {
            let start = vi * per_variant + wi * per_cell;
            let metrics = results[start..start + per_cell].to_vec();
            let ratios: Vec<MetricRatios> = metrics
                .iter()
                .enumerate()
                .map(|(si, m)| MetricRatios::between(&baseline_at(wi, si), m))
                .collect();
            cells.push(AblationCell {
                variant,
                window,
                mean_metrics: RegressionMetrics {
                    rmse: mean_of(metrics.iter().map(|m| m.rmse)),
                    mape: mean_of(metrics.iter().map(|m| m.mape)),
                    r2: mean_of(metrics.iter().map(|m| m.r2)),
                },
                mean_ratios: MetricRatios {
                    rmse: mean_of(ratios.iter().map(|r| r.rmse)),
                    mape: mean_of(ratios.iter().map(|r| r.mape)),
                    r2: mean_of(ratios.iter().map(|r| r.r2)),
                },
                metrics,
                ratios,
            });
        }
    }
    Ok(AblationTable {
        variants,
        windows: config.windows.clone(),
        seeds: config.seeds.clone(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn identity_metrics() {
        let y = [3.0, 4.0, 8.0];
        let m = regression_metrics(&y, &y).unwrap();
        assert_eq!((m.rmse, m.mape, m.r2), (0.0, 0.0, 1.0));
        assert_eq!(rpe_series(&y, &y).unwrap(), vec![0.0; 3]);
        assert_eq!(aose(&y, &y).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn hand_computed_triple() {
        let m = regression_metrics(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap();
        assert!(close(m.rmse, (2.0f64 / 3.0).sqrt(), 1e-12));
        assert!(close(m.mape, 100.0 * (1.0 + 0.0 + 1.0 / 3.0) / 3.0, 1e-12));
        assert!(m.r2.abs() < 1e-12);
    }

    #[test]
    fn mean_predictor_scores_zero() {
        let y = [5.0, 7.0, 6.5, 9.0];
        let mean = y.iter().sum::<f64>() / 4.0;
        assert!(regression_metrics(&y, &[mean; 4]).unwrap().r2.abs() < 1e-12);
    }

    #[test]
    fn metric_errors() {
        assert!(matches!(
            regression_metrics(&[1.0, 2.0], &[1.0]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            regression_metrics(&[0.0, 2.0], &[1.0, 2.0]),
            Err(Error::Validation(_))
        ));
        assert!(regression_metrics(&[1.0], &[1.0]).is_err());
        assert!(rpe_series(&[-1.0], &[1.0]).is_err());
    }

    #[test]
    fn rpe_and_aose_examples() {
        assert_eq!(rpe_series(&[100.0], &[95.0]).unwrap(), vec![-5.0]);
        let y = [10.0, 20.0, 40.0];
        let p: Vec<f64> = y.iter().map(|v| v * 1.1).collect();
        for r in rpe_series(&y, &p).unwrap() {
            assert!((r - 10.0).abs() < 1e-9);
        }
        assert_eq!(aose(&[5.0, 5.0], &[7.0, 3.0]).unwrap(), (2.0, 2.0));
        assert_eq!(aose(&[1.0, 2.0], &[2.0, 3.0]).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn baseline_ratios_are_one() {
        let m = RegressionMetrics {
            rmse: 0.37,
            mape: 2.9,
            r2: 0.61,
        };
        let r = MetricRatios::between(&m, &m);
        assert_eq!((r.rmse, r.mape, r.r2), (1.0, 1.0, 1.0));
    }

    /// Straight textbook sums, accumulated back to front.
    fn reverse_oracle(y: &[f64], p: &[f64]) -> (f64, f64, f64) {
        let n = y.len() as f64;
        let mut mean = 0.0;
        for i in (0..y.len()).rev() {
            mean += y[i];
        }
        mean /= n;
        let (mut sse, mut sst, mut ape) = (0.0, 0.0, 0.0);
        for i in (0..y.len()).rev() {
            let e = y[i] - p[i];
            sse += e * e;
            sst += (y[i] - mean) * (y[i] - mean);
            ape += (e / y[i]).abs();
        }
        ((sse / n).sqrt(), 100.0 * ape / n, 1.0 - sse / sst)
    }

    proptest! {
        #[test]
        fn agrees_with_reverse_oracle(
            pairs in proptest::collection::vec((1.0f64..100.0, 1.0f64..100.0), 2..60)
        ) {
            let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let p: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            prop_assume!(y.iter().any(|v| (v - y[0]).abs() > 1e-6));
            let m = regression_metrics(&y, &p).unwrap();
            let (rmse, mape, r2) = reverse_oracle(&y, &p);
            prop_assert!(close(m.rmse, rmse, 1e-10));
            prop_assert!(close(m.mape, mape, 1e-10));
            prop_assert!(close(m.r2, r2, 1e-10));
            prop_assert!(m.rmse >= 0.0 && m.r2 <= 1.0);
        }

        #[test]
        fn mape_is_scale_invariant(
            pairs in proptest::collection::vec((1.0f64..100.0, 1.0f64..100.0), 2..30),
            k in 0.01f64..100.0,
        ) {
            let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let p: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            prop_assume!(y.iter().any(|v| (v - y[0]).abs() > 1e-6));
            let a = regression_metrics(&y, &p).unwrap().mape;
            let ys: Vec<f64> = y.iter().map(|v| v * k).collect();
            let ps: Vec<f64> = p.iter().map(|v| v * k).collect();
            let b = regression_metrics(&ys, &ps).unwrap().mape;
            prop_assert!(close(a, b, 1e-10));
        }

        #[test]
        fn aose_sides_are_nonnegative(
            pairs in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 0..40)
        ) {
            let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let p: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let (o, u) = aose(&y, &p).unwrap();
            prop_assert!(o >= 0.0 && u >= 0.0);
        }
    }
}
