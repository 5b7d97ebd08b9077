//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero when any
//! criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sentiforecast::corpus::{make_windows, Sentiment};
use sentiforecast::eval::{
    regression_metrics, run_ablation, AblationConfig, AblationVariant,
};
use sentiforecast::index::{bi_count, bi_popularity, bi_score, DayEntry, DEFAULT_FLOOR};
use sentiforecast::net::{train, Architecture, ForecastModel, Mode, Network, TrainConfig};
use sentiforecast::scorer::{classification_report, train_classifier, ClassifierHyper};
use sentiforecast::stats::{adf_test, granger_test, roc};
use sentiforecast::synth::{synth_generate, SynthParams};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_correctness() -> Outcome {
    let arch = Architecture {
        input: 3,
        hidden: 4,
        layers: 2,
        highway: true,
    };
    let mut worst = 0.0f64;
    let mut params = 0;
    for (seed, dropout) in [(1, 0.0), (2, 0.2)] {
        let g = common::gradient_check(&arch, 5, 3, dropout, seed);
        worst = worst.max(g.max_rel_err);
        params = g.params;
    }
    check(
        worst < 1e-4,
        format!("{params} parameters, max relative error {worst:.2e} (limit 1e-4), with and without dropout"),
    )
}

fn highway_reduction() -> Outcome {
    let arch = Architecture {
        input: 3,
        hidden: 5,
        layers: 2,
        highway: true,
    };
    let mut rng = common::rng(11);
    let mut gated = Network::init(&arch, &mut rng).map_err(|e| e.to_string())?;
    for layer in gated.layers.iter_mut().skip(1) {
        for dir in [&mut layer.forward, &mut layer.backward] {
            let carry = dir.carry.as_mut().ok_or("layer 2 has no carry gate")?;
            carry.b.fill(-1e4);
        }
    }
    let mut plain = gated.clone();
    for layer in plain.layers.iter_mut() {
        layer.forward.carry = None;
        layer.backward.carry = None;
    }
    let inputs: Vec<Array2<f64>> = (0..6)
        .map(|_| Array2::from_shape_fn((4, 3), |_| rng.random_range(-2.0..2.0)))
        .collect();
    let a = gated.forward(&inputs, Mode::Eval).map_err(|e| e.to_string())?;
    let b = plain.forward(&inputs, Mode::Eval).map_err(|e| e.to_string())?;
    let diff = (&a.predictions - &b.predictions)
        .iter()
        .fold(0.0f64, |m, d| m.max(d.abs()));
    check(diff <= 1e-12, format!("max output difference {diff:.2e} (limit 1e-12)"))
}

fn metric_oracles() -> Outcome {
    let m = regression_metrics(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).map_err(|e| e.to_string())?;
    let rel = |x: f64, want: f64| (x - want).abs() / want.abs();
    let triple_ok = rel(m.rmse, 0.8165) < 1e-3 && rel(m.mape, 44.44) < 1e-3 && m.r2.abs() < 1e-12;

    let mut pairs = 0;
    let mut mismatches = 0;
    for len in 1..=4 {
        let seqs = common::label_sequences(len);
        for p in &seqs {
            for a in &seqs {
                pairs += 1;
                let got = classification_report(p, a).map_err(|e| e.to_string())?;
                let want = common::classification_oracle(p, a);
                let same = got.confusion == want.confusion
                    && (got.accuracy - want.accuracy).abs() < 1e-12
                    && (got.precision - want.precision).abs() < 1e-12
                    && (got.recall - want.recall).abs() < 1e-12
                    && (got.f1 - want.f1).abs() < 1e-12;
                if !same {
                    mismatches += 1;
                }
            }
        }
    }
    check(
        triple_ok && mismatches == 0,
        format!(
            "triple ({:.4}, {:.2}%, {:.1}); {mismatches} mismatches over {pairs} label-sequence pairs",
            m.rmse, m.mape, m.r2
        ),
    )
}

fn flipped(day: &[DayEntry]) -> Vec<DayEntry> {
    day.iter()
        .map(|e| DayEntry {
            score: -e.score,
            class: match e.class {
                Sentiment::Bull => Sentiment::Bear,
                Sentiment::Bear => Sentiment::Bull,
                Sentiment::Neutral => Sentiment::Neutral,
            },
            weight: e.weight,
        })
        .collect()
}

fn index_oracle() -> Outcome {
    let mut rng = common::rng(4);
    let mut worst = 0.0f64;
    let mut property_failures = 0;
    let mut checked = 0;
    for day_no in 0..1000 {
        let day = common::random_day(&mut rng, day_no % 2 == 0);
        let (count, score, pop) = common::index_oracle(&day, DEFAULT_FLOOR);
        let p = bi_popularity(&day, DEFAULT_FLOOR);
        for (got, want) in [(bi_count(&day), count), (bi_score(&day), score), (p.value, pop)] {
            worst = worst.max((got - want).abs());
        }
        let mirror = flipped(&day);
        let pm = bi_popularity(&mirror, DEFAULT_FLOOR);
        if p.floor_hit || pm.floor_hit {
            continue;
        }
        checked += 1;
        let anti = (bi_count(&mirror) + bi_count(&day)).abs() < 1e-12
            && (bi_score(&mirror) + bi_score(&day)).abs() < 1e-12
            && (pm.value + p.value).abs() < 1e-12;
        let extra = DayEntry {
            score: rng.random_range(0.01..1.0),
            class: Sentiment::Bull,
            weight: rng.random_range(0.0..3.0),
        };
        let mut more = day.clone();
        more.push(extra);
        let mp = bi_popularity(&more, DEFAULT_FLOOR);
        let mono = bi_count(&more) > bi_count(&day)
            && bi_score(&more) > bi_score(&day)
            && (mp.floor_hit || mp.value >= p.value);
        if !(anti && mono) {
            property_failures += 1;
        }
    }
    check(
        worst <= 1e-12 && property_failures == 0,
        format!(
            "1000 days, max deviation {worst:.2e} (limit 1e-12); antisymmetry and monotonicity failures {property_failures} of {checked} floor-free days"
        ),
    )
}

fn gct_power_and_size() -> Outcome {
    let scorer = common::default_scorer();
    let title_pop_rejections = |beta: f64, seeds: u64, level: f64| -> Result<usize, String> {
        let mut hits = 0;
        for seed in 0..seeds {
            let params = SynthParams {
                seed,
                beta,
                ..SynthParams::default()
            };
            let (data, table) = common::synth_with_index(&params, Some(&scorer));
            let r = roc(&data.market.close).map_err(|e| e.to_string())?;
            let index = table.column("title_pop").ok_or("no title_pop column")?;
            let g = granger_test(&r, &index[1..], 1).map_err(|e| e.to_string())?;
            if g.p_value < level {
                hits += 1;
            }
        }
        Ok(hits)
    };
    let power = title_pop_rejections(0.8, 50, 0.01)?;
    let size = title_pop_rejections(0.0, 100, 0.05)?;
    let size_rate = size as f64 / 100.0;
    check(
        power >= 45 && (0.01..=0.12).contains(&size_rate),
        format!("power at 1%: {power}/50 (need 45); size at 5%: {size_rate:.2} (need [0.01, 0.12])"),
    )
}

fn adf_discrimination() -> Outcome {
    let mut noise_rejected = 0;
    let mut walk_kept = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise: Vec<f64> = (0..250).map(|_| StandardNormal.sample(&mut rng)).collect();
        let walk: Vec<f64> = noise
            .iter()
            .scan(0.0, |acc, e| {
                *acc += e;
                Some(*acc)
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let fresh: Vec<f64> = (0..250).map(|_| StandardNormal.sample(&mut rng)).collect();
        if adf_test(&fresh, None).map_err(|e| e.to_string())?.reject[1] {
            noise_rejected += 1;
        }
        if !adf_test(&walk, None).map_err(|e| e.to_string())?.reject[1] {
            walk_kept += 1;
        }
    }
    check(
        noise_rejected >= 95 && walk_kept >= 90,
        format!("white noise rejected {noise_rejected}/100 (need 95); random walk kept {walk_kept}/100 (need 90)"),
    )
}

fn train_rmse(model: &ForecastModel, samples: &[sentiforecast::corpus::WindowSample]) -> Result<f64, String> {
    let mut sse = 0.0;
    for s in samples {
        let p = model.forward_one(s.features.view(), Mode::Eval).map_err(|e| e.to_string())?;
        sse += (p - s.target).powi(2);
    }
    Ok((sse / samples.len() as f64).sqrt())
}

fn learnability() -> Outcome {
    let frame = common::linear_task(7, 300, 5);
    let samples = make_windows(&frame, 5).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        hidden: 8,
        max_epochs: 200,
        seed: 7,
        ..TrainConfig::default()
    };
    let run = || -> Result<(f64, Vec<f64>, usize), String> {
        let model = ForecastModel::new(3, &config).map_err(|e| e.to_string())?;
        let out = train(model, &samples, &config).map_err(|e| e.to_string())?;
        let rmse = train_rmse(&out.model, &samples)?;
        Ok((rmse, out.history.iter().map(|h| h.train).collect(), out.history.len()))
    };
    let (rmse, history, epochs) = run()?;
    let (rmse2, history2, _) = run()?;
    let same = rmse.to_bits() == rmse2.to_bits() && history == history2;
    check(
        rmse < 0.05 && same,
        format!("train RMSE {rmse:.4} after {epochs} epochs (limit 0.05); repeat run bit-identical: {same}"),
    )
}

fn ablation_pattern() -> Outcome {
    let scorer = common::default_scorer();
    let mut wins = 0;
    let seeds = 20;
    for seed in 0..seeds {
        let params = SynthParams {
            seed,
            beta: 0.8,
            ..SynthParams::default()
        };
        let (data, table) = common::synth_with_index(&params, Some(&scorer));
        let train = TrainConfig {
            hidden: 16,
            seed,
            ..TrainConfig::default()
        };
        let config = AblationConfig {
            windows: vec![7],
            seeds: vec![seed],
            variants: vec![AblationVariant::Baseline, AblationVariant::Full],
            ..AblationConfig::new(train, vec!["title_pop".into(), "body_pop".into()])
        };
        let t = run_ablation(&data.market, Some(&table), &config).map_err(|e| e.to_string())?;
        let cell = t.cell(AblationVariant::Full, 7).ok_or("no full cell")?;
        if cell.mean_ratios.rmse > 1.0 {
            wins += 1;
        }
    }

    let started = Instant::now();
    let (data, table) = common::synth_with_index(&SynthParams::default(), None);
    let full = run_ablation(
        &data.market,
        Some(&table),
        &AblationConfig::new(TrainConfig::default(), vec!["title_pop".into(), "body_pop".into()]),
    )
    .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let shape_ok = full.variants.len() == 4 && full.windows == vec![7, 15, 30];
    check(
        wins * 10 >= seeds * 7 && shape_ok && elapsed < Duration::from_secs(30 * 60),
        format!(
            "full beats baseline RMSE in {wins}/{seeds} seeds (need 14); default ablation {} variants x {:?} in {:.0} s (limit 1800 s)",
            full.variants.len(),
            full.windows,
            elapsed.as_secs_f64()
        ),
    )
}

fn cli_determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = common::write_quick_config(root.path());
    let a = root.path().join("a");
    let b = root.path().join("b");
    let files_a = common::run_pipeline(&a, &config, 5);
    let files_b = common::run_pipeline(&b, &config, 5);
    let names = |v: &[std::path::PathBuf]| -> Vec<String> {
        v.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect()
    };
    if names(&files_a) != names(&files_b) {
        return Err("the two runs wrote different artifact sets".into());
    }
    let mut differing = Vec::new();
    for (x, y) in files_a.iter().zip(&files_b) {
        if std::fs::read(x).map_err(|e| e.to_string())? != std::fs::read(y).map_err(|e| e.to_string())? {
            differing.push(x.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    check(
        differing.is_empty(),
        format!(
            "{} artifacts compared across two seeded pipeline runs; differing: {:?}",
            files_a.len(),
            differing
        ),
    )
}

fn scorer_sanity() -> Outcome {
    let train_set = synth_generate(&SynthParams::default()).map_err(|e| e.to_string())?.labeled;
    let held_out = synth_generate(&SynthParams {
        seed: 99,
        ..SynthParams::default()
    })
    .map_err(|e| e.to_string())?
    .labeled;
    let model = train_classifier(&train_set, &ClassifierHyper::default())
        .map_err(|e| e.to_string())?
        .model;
    let predicted: Vec<Sentiment> = held_out.iter().map(|t| model.score_text(&t.text).1).collect();
    let actual: Vec<Sentiment> = held_out.iter().map(|t| t.label).collect();
    let report = classification_report(&predicted, &actual).map_err(|e| e.to_string())?;

    let full_batch = ClassifierHyper {
        batch: train_set.len(),
        ..ClassifierHyper::default()
    };
    let history = train_classifier(&train_set, &full_batch)
        .map_err(|e| e.to_string())?
        .loss_history;
    let worst_rise = history
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    check(
        report.f1 >= 0.95 && worst_rise <= 1e-6,
        format!(
            "held-out macro F1 {:.4} (need 0.95); largest full-batch loss rise {worst_rise:.2e} over {} epochs (limit 1e-6)",
            report.f1,
            history.len() - 1
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient correctness", gradient_correctness),
        ("highway reduction", highway_reduction),
        ("metric oracles", metric_oracles),
        ("index formula oracle", index_oracle),
        ("granger power and size", gct_power_and_size),
        ("adf discrimination", adf_discrimination),
        ("learnability", learnability),
        ("ablation pattern", ablation_pattern),
        ("cli determinism", cli_determinism),
        ("scorer sanity", scorer_sanity),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1} s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.1} s]", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
