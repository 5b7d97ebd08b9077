//! Trains the bag-of-words sentiment classifier on a labeled corpus, reports
//! held-out precision, recall and F1, and scores a few forum posts.
//!
//! cargo run --example sentiment_scoring

use sentiforecast::corpus::split_chronological;
use sentiforecast::scorer::{classification_report, score_posts, train_classifier, ClassifierHyper, TextField};
use sentiforecast::synth::{synth_generate, SynthParams};

fn main() -> sentiforecast::Result<()> {
    let data = synth_generate(&SynthParams::default())?;
    let (train, test) = split_chronological(&data.labeled, 0.8)?;

    let trained = train_classifier(train, &ClassifierHyper::default())?;
    let first = trained.loss_history[0];
    let last = *trained.loss_history.last().unwrap();
    println!("cross-entropy {first:.4} -> {last:.4} over {} epochs", trained.loss_history.len() - 1);

    let predicted: Vec<_> = test.iter().map(|t| trained.model.score_text(&t.text).1).collect();
    let actual: Vec<_> = test.iter().map(|t| t.label).collect();
    let report = classification_report(&predicted, &actual)?;
    println!(
        "held-out accuracy {:.3} precision {:.3} recall {:.3} F1 {:.3}",
        report.accuracy, report.precision, report.recall, report.f1
    );
    println!("confusion (rows actual bear/neutral/bull): {:?}", report.confusion);

    let scores = score_posts(&trained.model, &data.posts[..5]);
    for post in &data.posts[..5] {
        let s = &scores[&post.id];
        let (score, class) = s.get(TextField::Title);
        println!("{} {:>24} {score:+.3} {class:?}", post.id, post.title);
    }
    Ok(())
}
