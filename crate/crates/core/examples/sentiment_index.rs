//! Aligns scored posts to trading days and builds the six daily
//! bullishness series (count, score and popularity weighted, for titles and
//! bodies).
//!
//! cargo run --example sentiment_index

use sentiforecast::corpus::{align_to_trading_days, AlignConfig};
use sentiforecast::index::{build_all_series, PopularityStats, SentimentTable, DEFAULT_FLOOR};
use sentiforecast::scorer::{score_posts, train_classifier, ClassifierHyper};
use sentiforecast::synth::{synth_generate, SynthParams};

fn main() -> sentiforecast::Result<()> {
    let data = synth_generate(&SynthParams::default())?;
    let model = train_classifier(&data.labeled, &ClassifierHyper::default())?.model;
    let scores = score_posts(&model, &data.posts);

    let aligned = align_to_trading_days(&data.posts, &data.market, &AlignConfig::default())?;
    println!("{} trading days, {} posts dropped outside the market calendar", aligned.days.len(), aligned.dropped());

    let stats = PopularityStats::fit(&data.posts)?;
    let series = build_all_series(&aligned.days, &scores, &stats, DEFAULT_FLOOR)?;
    for s in &series {
        let mean = s.values.iter().sum::<f64>() / s.len() as f64;
        println!("{:<12} mean {mean:+.4}  floor hits {}", s.name(), s.floor_hits);
    }

    let table = SentimentTable::from_series(&series)?;
    println!("\ndate        {}", table.names.join("  "));
    for row in 0..5 {
        let values: Vec<String> = table.columns.iter().map(|c| format!("{:+.3}", c[row])).collect();
        println!("{}  {}", table.dates[row], values.join("  "));
    }
    Ok(())
}
