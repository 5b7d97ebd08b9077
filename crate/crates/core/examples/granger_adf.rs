//! Stationarity and Granger causality between a daily sentiment index and
//! the price rate of change, in both directions and at lags 1 to 3.
//!
//! cargo run --example granger_adf -- [beta]

use sentiforecast::corpus::{align_to_trading_days, AlignConfig};
use sentiforecast::index::{build_all_series, PopularityStats, DEFAULT_FLOOR};
use sentiforecast::scorer::{score_posts, train_classifier, ClassifierHyper};
use sentiforecast::stats::{adf_test, granger_bidirectional, roc};
use sentiforecast::synth::{synth_generate, SynthParams};

fn main() -> sentiforecast::Result<()> {
    let beta = std::env::args().nth(1).map(|s| s.parse().expect("beta must be a number")).unwrap_or(0.8);
    let data = synth_generate(&SynthParams {
        beta,
        ..SynthParams::default()
    })?;
    let model = train_classifier(&data.labeled, &ClassifierHyper::default())?.model;
    let scores = score_posts(&model, &data.posts);
    let aligned = align_to_trading_days(&data.posts, &data.market, &AlignConfig::default())?;
    let stats = PopularityStats::fit(&data.posts)?;
    let series = build_all_series(&aligned.days, &scores, &stats, DEFAULT_FLOOR)?;

    let rate = roc(&data.market.close)?;
    let adf = adf_test(&rate, None)?;
    println!("ADF roc: t = {:.3} (lag {}) {}", adf.t_statistic, adf.lag_used, adf.stars());

    println!("\n{:<12} {:<14} {:>3} {:>9} {:>9}", "series", "direction", "lag", "F", "p");
    for s in &series {
        let index = &s.values[1..];
        let adf = adf_test(index, None)?;
        println!("{:<12} ADF t = {:.3} {}", s.name(), adf.t_statistic, adf.stars());
        for row in granger_bidirectional(&data.market.stock_id, &s.name(), index, &rate, &[1, 2, 3])? {
            println!(
                "{:<12} {:<14} {:>3} {:>9.3} {:>9.4} {}",
                row.variable,
                row.direction.name(),
                row.result.lag,
                row.result.f,
                row.result.p_value,
                sentiforecast::stats::stars(row.result.p_value)
            );
        }
    }
    Ok(())
}
