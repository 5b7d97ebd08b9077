//! Synthetic forum and market data with a known sentiment-to-price coupling.
//!
//! A latent daily mood follows `s_t = φ s_{t-1} + η_t`. Each trading day's
//! log-return is `r_t = scale · (β s_{t-1} + ν_t) - κ ln(p_{t-1} / p_0)`, so
//! yesterday's mood moves today's price while a weak pull `κ` keeps the price
//! level near its base. Posts are drawn per day from a Poisson count; the share of
//! bullish versus bearish posts tilts with `s_t`, text is sampled from
//! disjoint bull/bear/neutral token pools, and popularity counters are larger
//! for posts that agree with the day's mood. The latent series is written to
//! a `GROUND_TRUTH_` file that model-facing loaders refuse to read.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{Datelike, Duration, NaiveDate, NaiveTime, TimeZone, Utc, Weekday};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    write_labeled, write_market, write_posts, LabeledText, MarketSeries, Post, PostFormat,
    Sentiment, GROUND_TRUTH_PREFIX,
};
use crate::error::{Error, Result};
use crate::report::fmt6;
use crate::rng::{substream, Stream};

/// Indicator columns emitted next to `close`.
pub const INDICATOR_NAMES: [&str; 9] = [
    "open",
    "high",
    "low",
    "close_lag1",
    "volume",
    "turnover_rate",
    "ma5",
    "ma10",
    "rsi14",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub seed: u64,
    pub stock_id: String,
    pub start: NaiveDate,
    /// Trading days (weekdays) to generate.
    pub days: usize,
    /// Autoregressive coefficient of the latent mood.
    pub phi: f64,
    /// Standard deviation of the mood innovations.
    pub latent_noise: f64,
    /// Response of the next day's return to the mood.
    pub beta: f64,
    /// Standard deviation of the return innovations, in mood units.
    pub return_noise: f64,
    /// Converts mood units into log-return units.
    pub return_scale: f64,
    /// Pull of the log price back toward `ln(base_price)` per day; 0 gives a
    /// pure random walk.
    pub mean_reversion: f64,
    pub base_price: f64,
    /// Poisson mean of posts per trading day.
    pub posts_per_day: f64,
    /// Share of posts that are neutral regardless of mood.
    pub neutral_share: f64,
    /// Logistic slope of the bull share in the mood.
    pub class_tilt: f64,
    pub bull_vocab: usize,
    pub bear_vocab: usize,
    pub neutral_vocab: usize,
    /// Share of tokens in an opinionated text drawn from its class pool.
    pub signal_share: f64,
    /// Popularity means are multiplied by `exp(alignment · class · s_t)`.
    pub popularity_alignment: f64,
    pub mean_reads: f64,
    pub mean_comments: f64,
    pub mean_likes: f64,
    /// Labeled training texts per class.
    pub labeled_per_class: usize,
    /// Exchange local time offset from UTC, in hours.
    pub utc_offset_hours: i32,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            seed: 0,
            stock_id: "SYN".into(),
            start: NaiveDate::from_ymd_opt(2023, 1, 2).unwrap(),
            days: 240,
            phi: 0.6,
            latent_noise: 0.8,
            beta: 0.8,
            return_noise: 0.5,
            return_scale: 0.01,
            mean_reversion: 0.1,
            base_price: 20.0,
            posts_per_day: 20.0,
            neutral_share: 0.2,
            class_tilt: 2.0,
            bull_vocab: 40,
            bear_vocab: 40,
            neutral_vocab: 80,
            signal_share: 0.6,
            popularity_alignment: 0.5,
            mean_reads: 300.0,
            mean_comments: 8.0,
            mean_likes: 15.0,
            labeled_per_class: 200,
            utc_offset_hours: 8,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.days < 2 {
            bad.push("days");
        }
        if !(self.phi.abs() < 1.0) {
            bad.push("phi");
        }
        if !self.beta.is_finite() {
            bad.push("beta");
        }
        for (name, v) in [
            ("latent_noise", self.latent_noise),
            ("return_noise", self.return_noise),
            ("return_scale", self.return_scale),
            ("base_price", self.base_price),
            ("posts_per_day", self.posts_per_day),
            ("class_tilt", self.class_tilt),
            ("mean_reads", self.mean_reads),
            ("mean_comments", self.mean_comments),
            ("mean_likes", self.mean_likes),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                bad.push(name);
            }
        }
        if !(0.0..1.0).contains(&self.mean_reversion) {
            bad.push("mean_reversion");
        }
        if !(0.0..1.0).contains(&self.neutral_share) {
            bad.push("neutral_share");
        }
        if !(self.signal_share > 0.0 && self.signal_share <= 1.0) {
            bad.push("signal_share");
        }
        if !(self.popularity_alignment >= 0.0) {
            bad.push("popularity_alignment");
        }
        for (name, v) in [
            ("bull_vocab", self.bull_vocab),
            ("bear_vocab", self.bear_vocab),
            ("neutral_vocab", self.neutral_vocab),
        ] {
            if v == 0 || v > 256 {
                bad.push(name);
            }
        }
        if self.labeled_per_class == 0 {
            bad.push("labeled_per_class");
        }
        if !(-12..=14).contains(&self.utc_offset_hours) {
            bad.push("utc_offset_hours");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid synth parameters: {}", bad.join(", "))))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub posts: Vec<Post>,
    pub market: MarketSeries,
    pub labeled: Vec<LabeledText>,
    /// Latent mood per trading day.
    pub latent: Vec<f64>,
    /// Log-return per trading day (0 on the first day).
    pub log_returns: Vec<f64>,
    /// Generating class per post, parallel to `posts`.
    pub post_classes: Vec<Sentiment>,
}

fn pool_base(class: Sentiment) -> u32 {
    match class {
        Sentiment::Bull => 0x4E00,
        Sentiment::Bear => 0x5E00,
        Sentiment::Neutral => 0x6E00,
    }
}

/// The `i`-th token of a class pool; pools are disjoint CJK blocks.
pub fn pool_token(class: Sentiment, i: usize) -> char {
    char::from_u32(pool_base(class) + i as u32).expect("pool stays inside the CJK block")
}

struct TextSampler<'a> {
    params: &'a SynthParams,
}

impl TextSampler<'_> {
    fn vocab(&self, class: Sentiment) -> usize {
        match class {
            Sentiment::Bull => self.params.bull_vocab,
            Sentiment::Bear => self.params.bear_vocab,
            Sentiment::Neutral => self.params.neutral_vocab,
        }
    }

    fn token(&self, class: Sentiment, rng: &mut ChaCha8Rng) -> char {
        let pool = if class != Sentiment::Neutral && rng.random::<f64>() < self.params.signal_share {
            class
        } else {
            Sentiment::Neutral
        };
        pool_token(pool, rng.random_range(0..self.vocab(pool)))
    }

    fn text(&self, class: Sentiment, len: std::ops::RangeInclusive<usize>, rng: &mut ChaCha8Rng) -> String {
        let n = rng.random_range(len);
        (0..n).map(|_| self.token(class, rng)).collect()
    }
}

fn weekdays(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

fn poisson(mean: f64, rng: &mut ChaCha8Rng) -> u64 {
    Poisson::new(mean).expect("positive mean").sample(rng) as u64
}

fn rsi(closes: &[f64], period: usize) -> f64 {
    let start = closes.len().saturating_sub(period + 1);
    let (mut up, mut down) = (0.0, 0.0);
    for w in closes[start..].windows(2) {
        let d = w[1] - w[0];
        if d > 0.0 {
            up += d;
        } else {
            down -= d;
        }
    }
    if up + down == 0.0 {
        50.0
    } else {
        100.0 * up / (up + down)
    }
}

fn trailing_mean(closes: &[f64], k: usize) -> f64 {
    let tail = &closes[closes.len().saturating_sub(k)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// Generates one coupled forum/market dataset. Identical parameters give
/// identical data.
pub fn synth_generate(params: &SynthParams) -> Result<SynthData> {
    params.validate()?;
    let mut rng = substream(params.seed, Stream::Synth);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n = params.days;
    let dates = weekdays(params.start, n);

    let stationary_sd = params.latent_noise / (1.0 - params.phi * params.phi).sqrt();
    let mut latent = Vec::with_capacity(n);
    latent.push(stationary_sd * std_normal.sample(&mut rng));
    for t in 1..n {
        let eta = params.latent_noise * std_normal.sample(&mut rng);
        latent.push(params.phi * latent[t - 1] + eta);
    }

    let mut log_returns = vec![0.0; n];
    let mut close = Vec::with_capacity(n);
    close.push(params.base_price);
    for t in 1..n {
        let nu = params.return_noise * std_normal.sample(&mut rng);
        let gap = (close[t - 1] / params.base_price).ln();
        log_returns[t] = params.return_scale * (params.beta * latent[t - 1] + nu) - params.mean_reversion * gap;
        close.push(close[t - 1] * log_returns[t].exp());
    }

    let wiggle = 0.3 * params.return_scale;
    let mut indicators = vec![Vec::with_capacity(n); INDICATOR_NAMES.len()];
    for t in 0..n {
        let prev = if t == 0 { params.base_price } else { close[t - 1] };
        let open = prev * (wiggle * std_normal.sample(&mut rng)).exp();
        let high = open.max(close[t]) * (wiggle * std_normal.sample(&mut rng).abs()).exp();
        let low = open.min(close[t]) * (-wiggle * std_normal.sample(&mut rng).abs()).exp();
        let volume = 1.0e6 * (0.3 * std_normal.sample(&mut rng) + 20.0 * log_returns[t].abs()).exp();
        let history = &close[..=t];
        let row = [
            open,
            high,
            low,
            prev,
            volume,
            100.0 * volume / 1.0e8,
            trailing_mean(history, 5),
            trailing_mean(history, 10),
            rsi(history, 14),
        ];
        for (col, v) in indicators.iter_mut().zip(row) {
            col.push(v);
        }
    }
    let market = MarketSeries {
        stock_id: params.stock_id.clone(),
        dates: dates.clone(),
        close,
        indicator_names: INDICATOR_NAMES.iter().map(|s| s.to_string()).collect(),
        indicators,
    };

    let sampler = TextSampler { params };
    let session_open = NaiveTime::from_hms_opt(9, 0, 0).unwrap();
    let session_secs = 6 * 3600;
    let offset = Duration::hours(params.utc_offset_hours as i64);
    let mut posts = Vec::new();
    let mut post_classes = Vec::new();
    for (t, &date) in dates.iter().enumerate() {
        let s = latent[t];
        let p_bull = (1.0 - params.neutral_share) / (1.0 + (-params.class_tilt * s).exp());
        let count = poisson(params.posts_per_day, &mut rng);
        let mut stamps: Vec<i64> = (0..count)
            .map(|_| rng.random_range(0..session_secs))
            .collect();
        stamps.sort_unstable();
        for secs in stamps {
            let u: f64 = rng.random();
            let class = if u < p_bull {
                Sentiment::Bull
            } else if u < 1.0 - params.neutral_share {
                Sentiment::Bear
            } else {
                Sentiment::Neutral
            };
            let amp = (params.popularity_alignment * class.label() as f64 * s).exp();
            let local = date.and_time(session_open) + Duration::seconds(secs);
            posts.push(Post {
                id: format!("p{:06}", posts.len()),
                stock_id: params.stock_id.clone(),
                timestamp: Utc.from_utc_datetime(&(local - offset)),
                title: sampler.text(class, 2..=5, &mut rng),
                body: sampler.text(class, 6..=14, &mut rng),
                reads: poisson(params.mean_reads * amp, &mut rng),
                comments: poisson(params.mean_comments * amp, &mut rng),
                likes: poisson(params.mean_likes * amp, &mut rng),
            });
            post_classes.push(class);
        }
    }

    let mut labeled = Vec::with_capacity(3 * params.labeled_per_class);
    for _ in 0..params.labeled_per_class {
        for class in Sentiment::ALL {
            labeled.push(LabeledText {
                text: sampler.text(class, 6..=14, &mut rng),
                label: class,
            });
        }
    }

    Ok(SynthData {
        posts,
        market,
        labeled,
        latent,
        log_returns,
        post_classes,
    })
}

/// Paths written by [`write_synth`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthFiles {
    pub posts: PathBuf,
    pub market: PathBuf,
    pub labeled: PathBuf,
    pub ground_truth: PathBuf,
}

impl SynthFiles {
    /// The market file is named after the stock so loaders pick up its id.
    pub fn in_dir(dir: &Path, stock_id: &str) -> Self {
        Self {
            posts: dir.join("posts.jsonl"),
            market: dir.join(format!("{stock_id}.csv")),
            labeled: dir.join("labeled.csv"),
            ground_truth: dir.join(format!("{GROUND_TRUTH_PREFIX}latent.csv")),
        }
    }
}

/// Writes posts (JSONL), market and labeled CSVs and the ground-truth latent
/// series (`date,latent,log_return`) into `dir`.
pub fn write_synth(dir: &Path, data: &SynthData) -> Result<SynthFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = SynthFiles::in_dir(dir, &data.market.stock_id);
    write_posts(&files.posts, &data.posts, PostFormat::Jsonl)?;
    write_market(&files.market, &data.market)?;
    write_labeled(&files.labeled, &data.labeled)?;
    let path = &files.ground_truth;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "date,latent,log_return").map_err(io)?;
    for ((d, s), r) in data.market.dates.iter().zip(&data.latent).zip(&data.log_returns) {
        writeln!(out, "{d},{},{}", fmt6(*s), fmt6(*r)).map_err(io)?;
    }
    out.flush().map_err(io)?;
    Ok(files)
}
