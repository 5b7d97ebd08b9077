#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rand_distr::{Distribution, StandardNormal};

use sentiforecast::corpus::{align_to_trading_days, AlignConfig, FeatureFrame, Sentiment};
use sentiforecast::index::{build_all_series, DayEntry, PopularityStats, SentimentTable, DEFAULT_FLOOR};
use sentiforecast::net::{mse_with_grad, Architecture, Mode, Network};
use sentiforecast::scorer::{score_posts, train_classifier, ClassifierHyper, ClassifierModel};
use sentiforecast::synth::{synth_generate, SynthData, SynthParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Synthetic forum and market plus the six daily sentiment series built
/// from them with `scorer` (or a scorer trained on the generated corpus).
pub fn synth_with_index(params: &SynthParams, scorer: Option<&ClassifierModel>) -> (SynthData, SentimentTable) {
    let data = synth_generate(params).expect("synth");
    let trained;
    let model = match scorer {
        Some(m) => m,
        None => {
            trained = train_classifier(&data.labeled, &ClassifierHyper::default())
                .expect("scorer")
                .model;
            &trained
        }
    };
    let scores = score_posts(model, &data.posts);
    let aligned = align_to_trading_days(&data.posts, &data.market, &AlignConfig::default()).expect("align");
    let stats = PopularityStats::fit(&data.posts).expect("popularity");
    let series = build_all_series(&aligned.days, &scores, &stats, DEFAULT_FLOOR).expect("series");
    let table = SentimentTable::from_series(&series).expect("table");
    (data, table)
}

pub fn default_scorer() -> ClassifierModel {
    let data = synth_generate(&SynthParams::default()).expect("synth");
    train_classifier(&data.labeled, &ClassifierHyper::default())
        .expect("scorer")
        .model
}

fn gaussian_inputs(t: usize, batch: usize, width: usize, rng: &mut ChaCha8Rng) -> Vec<Array2<f64>> {
    (0..t)
        .map(|_| Array2::from_shape_fn((batch, width), |_| rng.random_range(-1.0..1.0)))
        .collect()
}

fn loss(net: &Network, inputs: &[Array2<f64>], target: &Array1<f64>, dropout: f64, mask_rng: &ChaCha8Rng) -> f64 {
    let mut r = mask_rng.clone();
    let mode = if dropout > 0.0 {
        Mode::Train { dropout, rng: &mut r }
    } else {
        Mode::Eval
    };
    let tape = net.forward(inputs, mode).expect("forward");
    mse_with_grad(&tape.predictions, target).0
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub params: usize,
    pub max_rel_err: f64,
}

/// Compares the analytic gradient of the mean squared error with central
/// differences over every parameter. Dropout masks are replayed from a
/// cloned generator so both passes see the same mask.
pub fn gradient_check(arch: &Architecture, t: usize, batch: usize, dropout: f64, seed: u64) -> GradCheck {
    let mut r = rng(seed);
    let mut net = Network::init(arch, &mut r).expect("init");
    let mut flat = net.to_flat();
    for v in flat.iter_mut() {
        *v += r.random_range(-0.3..0.3);
    }
    net.set_flat(&flat);
    let inputs = gaussian_inputs(t, batch, arch.input, &mut r);
    let target = Array1::from_shape_fn(batch, |_| r.random_range(-1.0..1.0));
    let mask_rng = rng(seed ^ 0x5eed);

    let analytic = {
        let mut m = mask_rng.clone();
        let mode = if dropout > 0.0 {
            Mode::Train { dropout, rng: &mut m }
        } else {
            Mode::Eval
        };
        let tape = net.forward(&inputs, mode).expect("forward");
        let (_, d_pred) = mse_with_grad(&tape.predictions, &target);
        net.backward(&tape, &d_pred).to_flat()
    };

    let h = 1e-5;
    let mut probe = net.clone();
    let mut max_rel_err: f64 = 0.0;
    for i in 0..flat.len() {
        let mut p = flat.clone();
        p[i] = flat[i] + h;
        probe.set_flat(&p);
        let up = loss(&probe, &inputs, &target, dropout, &mask_rng);
        p[i] = flat[i] - h;
        probe.set_flat(&p);
        let down = loss(&probe, &inputs, &target, dropout, &mask_rng);
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        max_rel_err = max_rel_err.max(rel);
    }
    GradCheck {
        params: flat.len(),
        max_rel_err,
    }
}

/// Random day of index entries; `positive_weights` keeps popularity weights
/// above zero so the weighted sums never cross the floor.
pub fn random_day(rng: &mut ChaCha8Rng, positive_weights: bool) -> Vec<DayEntry> {
    let n = rng.random_range(0..12);
    (0..n)
        .map(|_| {
            let class = Sentiment::ALL[rng.random_range(0..3)];
            let magnitude: f64 = rng.random_range(0.0..1.0);
            let score = match class {
                Sentiment::Bull => magnitude,
                Sentiment::Bear => -magnitude,
                Sentiment::Neutral => rng.random_range(-1.0..1.0),
            };
            let weight = if positive_weights {
                rng.random_range(0.0..3.0)
            } else {
                rng.random_range(-3.0..3.0)
            };
            DayEntry { score, class, weight }
        })
        .collect()
}

/// Index values computed directly from the definitions: counts, score sums
/// and popularity-weighted score sums of the bullish and bearish posts.
pub fn index_oracle(day: &[DayEntry], floor: f64) -> (f64, f64, f64) {
    let bull: Vec<&DayEntry> = day
        .iter()
        .filter(|e| e.class == Sentiment::Bull && e.score > 0.0)
        .collect();
    let bear: Vec<&DayEntry> = day
        .iter()
        .filter(|e| e.class == Sentiment::Bear && e.score < 0.0)
        .collect();
    let count = ((1.0 + bull.len() as f64) / (1.0 + bear.len() as f64)).ln();
    let s_bull: f64 = bull.iter().map(|e| e.score).sum();
    let s_bear: f64 = bear.iter().map(|e| e.score.abs()).sum();
    let score = ((1.0 + s_bull) / (1.0 + s_bear)).ln();
    let p_bull: f64 = bull.iter().map(|e| e.score * e.weight).sum();
    let p_bear: f64 = bear.iter().map(|e| e.score.abs() * e.weight).sum();
    let pop = ((1.0 + p_bull).max(floor) / (1.0 + p_bear).max(floor)).ln();
    (count, score, pop)
}

/// Confusion matrix, accuracy and macro scores counted label by label.
pub struct ClassificationOracle {
    pub confusion: [[usize; 3]; 3],
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn classification_oracle(predicted: &[Sentiment], actual: &[Sentiment]) -> ClassificationOracle {
    let mut confusion = [[0usize; 3]; 3];
    for (p, a) in predicted.iter().zip(actual) {
        confusion[a.index()][p.index()] += 1;
    }
    let n = actual.len() as f64;
    let hits = predicted.iter().zip(actual).filter(|(p, a)| p == a).count() as f64;
    let mut precisions = Vec::new();
    let mut recalls = Vec::new();
    for class in Sentiment::ALL {
        let in_pred = predicted.contains(&class);
        let in_actual = actual.contains(&class);
        if !in_pred && !in_actual {
            continue;
        }
        let tp = predicted.iter().zip(actual).filter(|(p, a)| **p == class && **a == class).count() as f64;
        let pred_n = predicted.iter().filter(|p| **p == class).count() as f64;
        let act_n = actual.iter().filter(|a| **a == class).count() as f64;
        precisions.push(if pred_n > 0.0 { tp / pred_n } else { 0.0 });
        recalls.push(if act_n > 0.0 { tp / act_n } else { 0.0 });
    }
    let precision = precisions.iter().sum::<f64>() / precisions.len() as f64;
    let recall = recalls.iter().sum::<f64>() / recalls.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    ClassificationOracle {
        confusion,
        accuracy: hits / n,
        precision,
        recall,
        f1,
    }
}

/// Every label sequence of exactly `len` entries.
pub fn label_sequences(len: usize) -> Vec<Vec<Sentiment>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                Sentiment::ALL.iter().map(move |&c| {
                    let mut next = prefix.clone();
                    next.push(c);
                    next
                })
            })
            .collect();
    }
    out
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_sentiforecast")
}

pub fn cli(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn cli")
}

pub fn cli_ok(args: &[&str]) {
    let out = cli(args);
    assert!(
        out.status.success(),
        "{:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

/// A small configuration so the whole pipeline runs in seconds.
pub fn write_quick_config(dir: &Path) -> PathBuf {
    let path = dir.join("quick.json");
    let config = serde_json::json!({
        "windows": [5, 7, 10],
        "lags": [1, 2],
        "synth": { "days": 120, "posts_per_day": 10.0, "labeled_per_class": 60 },
        "classifier": { "epochs": 60 },
        "train": { "hidden": 6, "max_epochs": 15, "patience": 5 }
    });
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

/// Runs synth through ablate into `out` and returns the paths of every CSV
/// written, sorted.
pub fn run_pipeline(out: &Path, config: &Path, seed: u64) -> Vec<PathBuf> {
    let o = out.to_str().unwrap();
    let c = config.to_str().unwrap();
    let s = seed.to_string();
    let p = |name: &str| out.join(name).to_str().unwrap().to_string();
    let base = ["--config", c, "--out", o, "--seed", s.as_str()];
    let with = |cmd: &str, extra: &[String]| {
        let mut args: Vec<&str> = vec![cmd];
        args.extend_from_slice(&base);
        args.extend(extra.iter().map(String::as_str));
        cli_ok(&args);
    };
    with("synth", &[]);
    with("train-scorer", &["--labeled".into(), p("labeled.csv")]);
    with(
        "score",
        &["--posts".into(), p("posts.jsonl"), "--scorer-model".into(), p("scorer.json")],
    );
    with(
        "index",
        &[
            "--posts".into(),
            p("posts.jsonl"),
            "--market".into(),
            p("SYN.csv"),
            "--scores".into(),
            p("scores.csv"),
        ],
    );
    let market_sentiment = [
        "--market".to_string(),
        p("SYN.csv"),
        "--sentiment".into(),
        p("sentiment_index.csv"),
    ];
    with("gct", &market_sentiment);
    with("train", &market_sentiment);
    let mut with_model = market_sentiment.to_vec();
    with_model.extend(["--model".into(), p("model.json")]);
    with("evaluate", &with_model);
    with("predict", &with_model);
    with("ablate", &market_sentiment);

    let mut csvs: Vec<PathBuf> = std::fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv" || e == "jsonl" || e == "svg"))
        .collect();
    csvs.sort();
    csvs
}

/// Windows of three standard-normal features with target `w . x_last` plus
/// small noise.
pub fn linear_task(seed: u64, samples: usize, window: usize) -> FeatureFrame {
    let weights = [0.5, -0.3, 0.2];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = samples + window;
    let rows = Array2::from_shape_fn((n, 3), |_| StandardNormal.sample(&mut rng));
    let mut target = vec![0.0; n];
    for t in 1..n {
        let noise: f64 = StandardNormal.sample(&mut rng);
        target[t] = (0..3).map(|j| weights[j] * rows[[t - 1, j]]).sum::<f64>() + 0.01 * noise;
    }
    let start = chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    FeatureFrame {
        dates: (0..n).map(|i| start + chrono::Days::new(i as u64)).collect(),
        names: vec!["a".into(), "b".into(), "c".into()],
        rows,
        target,
    }
}

