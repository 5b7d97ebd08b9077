//! Compares the plain BiLSTM with the sentiment-input, highway and full
//! variants across window lengths and prints the ablation table.
//!
//! cargo run --release --example ablation -- [hidden] [seeds]

use sentiforecast::corpus::{align_to_trading_days, AlignConfig};
use sentiforecast::eval::{run_ablation, AblationConfig};
use sentiforecast::index::{build_all_series, PopularityStats, SentimentTable, DEFAULT_FLOOR};
use sentiforecast::net::TrainConfig;
use sentiforecast::scorer::{score_posts, train_classifier, ClassifierHyper};
use sentiforecast::synth::{synth_generate, SynthParams};

fn main() -> sentiforecast::Result<()> {
    let mut args = std::env::args().skip(1);
    let hidden = args.next().map(|s| s.parse().expect("hidden must be an integer")).unwrap_or(16);
    let seeds: u64 = args.next().map(|s| s.parse().expect("seeds must be an integer")).unwrap_or(2);

    let data = synth_generate(&SynthParams::default())?;
    let model = train_classifier(&data.labeled, &ClassifierHyper::default())?.model;
    let scores = score_posts(&model, &data.posts);
    let aligned = align_to_trading_days(&data.posts, &data.market, &AlignConfig::default())?;
    let stats = PopularityStats::fit(&data.posts)?;
    let table = SentimentTable::from_series(&build_all_series(&aligned.days, &scores, &stats, DEFAULT_FLOOR)?)?;

    let train = TrainConfig {
        hidden,
        ..TrainConfig::default()
    };
    let config = AblationConfig {
        seeds: (0..seeds).collect(),
        ..AblationConfig::new(train, vec!["title_pop".into(), "body_pop".into()])
    };
    let result = run_ablation(&data.market, Some(&table), &config)?;

    print!("{:<20}", "model");
    for w in &result.windows {
        print!("  w{w:<2} RMSE   ratio");
    }
    println!();
    for &v in &result.variants {
        print!("{:<20}", v.name());
        for &w in &result.windows {
            let c = result.cell(v, w).expect("every cell is filled");
            print!("  {:>8.4} {:>6.3}x", c.mean_metrics.rmse, c.mean_ratios.rmse);
        }
        println!();
    }
    Ok(())
}
