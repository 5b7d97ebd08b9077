//! Trains the bidirectional LSTM with highway carry gates on market
//! indicators plus sentiment, evaluates it on the last fifth of the days,
//! writes a prediction table and chart, and round-trips the checkpoint.
//!
//! cargo run --release --example forecast_training -- [out_dir] [window]

use std::path::PathBuf;

use sentiforecast::corpus::{align_to_trading_days, AlignConfig};
use sentiforecast::eval::{build_feature_frame, run_experiment, ExperimentConfig};
use sentiforecast::index::{build_all_series, PopularityStats, SentimentTable, DEFAULT_FLOOR};
use sentiforecast::net::{load_checkpoint, save_checkpoint, TrainConfig};
use sentiforecast::report::emit_prediction_report;
use sentiforecast::scorer::{score_posts, train_classifier, ClassifierHyper};
use sentiforecast::synth::{synth_generate, SynthParams};

fn main() -> sentiforecast::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "forecast_out".into()));
    let window = args.next().map(|s| s.parse().expect("window must be an integer")).unwrap_or(7);

    let data = synth_generate(&SynthParams::default())?;
    let model = train_classifier(&data.labeled, &ClassifierHyper::default())?.model;
    let scores = score_posts(&model, &data.posts);
    let aligned = align_to_trading_days(&data.posts, &data.market, &AlignConfig::default())?;
    let stats = PopularityStats::fit(&data.posts)?;
    let table = SentimentTable::from_series(&build_all_series(&aligned.days, &scores, &stats, DEFAULT_FLOOR)?)?;

    let features = vec!["title_pop".to_string(), "body_pop".to_string()];
    let frame = build_feature_frame(&data.market, Some(&table), &features)?;
    let train = TrainConfig {
        hidden: 32,
        ..TrainConfig::default()
    };
    let result = run_experiment(&frame, &ExperimentConfig::new(train, window))?;
    let r = &result.report;
    println!(
        "{} features, window {window}, trained on {} days, best epoch {} of {}",
        frame.width(),
        result.train_rows,
        result.best_epoch,
        result.history.len()
    );
    println!(
        "test RMSE {:.4}  MAPE {:.3}%  R2 {:.4}  mean over/under {:.4}/{:.4}",
        r.rmse, r.mape, r.r2, r.aose_over, r.aose_under
    );

    std::fs::create_dir_all(&out).map_err(|e| sentiforecast::Error::io(&out, e))?;
    let report = emit_prediction_report(&out, "predictions", &result.predictions)?;
    println!("wrote {}", report.csv.display());

    let path = out.join("model.json");
    save_checkpoint(&result.model, &path)?;
    let restored = load_checkpoint(&path)?;
    println!("checkpoint {} restores identically: {}", path.display(), restored.network == result.model.network);
    Ok(())
}
