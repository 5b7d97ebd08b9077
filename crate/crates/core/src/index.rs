//! Daily group sentiment indices.
//!
//! Three variants are provided, all log-ratios of bullish to bearish mass:
//!
//! * [`IndexVariant::Count`]: `ln((1 + M_bull) / (1 + M_bear))` over post counts.
//! * [`IndexVariant::Score`]: `ln((1 + Σ s_bull) / (1 - Σ s_bear))` over scores,
//!   with bear scores negative.
//! * [`IndexVariant::Popularity`]: the score form with every score multiplied
//!   by the post's popularity weight `R_std + C_std + L_std` (z-scored reads,
//!   comments and likes).
//!
//! Standardized popularity is negative for roughly half the posts, so the
//! weighted log arguments can drop to or below zero. Each argument is floored
//! at `floor` (default `1e-6`) and the days where that happens are counted.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::{AlignedDay, Post, Sentiment};
use crate::error::{Error, Result};
use crate::scorer::{membership, ScoreTable, TextField};

pub const DEFAULT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ZScored {
    pub values: Vec<f64>,
    /// Set when the reference standard deviation was zero; values are then 0.
    pub sigma_zero: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InsufficientData("cannot standardize an empty series".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            mean,
            std: var.sqrt(),
        })
    }

    pub fn apply(&self, x: f64) -> f64 {
        if self.std > 0.0 {
            (x - self.mean) / self.std
        } else {
            0.0
        }
    }
}

/// `(x - mean) / std` with population std, fitted on `series` unless
/// `stats` is given.
pub fn zscore(series: &[f64], stats: Option<MeanStd>) -> Result<ZScored> {
    if series.is_empty() {
        return Err(Error::InsufficientData("cannot standardize an empty series".into()));
    }
    let stats = match stats {
        Some(s) => s,
        None => MeanStd::fit(series)?,
    };
    Ok(ZScored {
        values: series.iter().map(|&x| stats.apply(x)).collect(),
        sigma_zero: stats.std == 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopularityStats {
    pub reads: MeanStd,
    pub comments: MeanStd,
    pub likes: MeanStd,
    /// Population the statistics were fitted on.
    pub stock_id: String,
    pub first: DateTime<Utc>,
    pub last: DateTime<Utc>,
    pub posts: usize,
}

impl PopularityStats {
    /// Fits each metric separately over the whole post collection.
    pub fn fit(posts: &[Post]) -> Result<Self> {
        if posts.is_empty() {
            return Err(Error::InsufficientData("no posts to fit popularity statistics".into()));
        }
        let metric = |f: fn(&Post) -> u64| {
            MeanStd::fit(&posts.iter().map(|p| f(p) as f64).collect::<Vec<_>>())
        };
        let stock_id = if posts.iter().all(|p| p.stock_id == posts[0].stock_id) {
            posts[0].stock_id.clone()
        } else {
            "*".to_string()
        };
        Ok(Self {
            reads: metric(|p| p.reads)?,
            comments: metric(|p| p.comments)?,
            likes: metric(|p| p.likes)?,
            stock_id,
            first: posts.iter().map(|p| p.timestamp).min().unwrap(),
            last: posts.iter().map(|p| p.timestamp).max().unwrap(),
            posts: posts.len(),
        })
    }

    pub fn weight(&self, post: &Post) -> f64 {
        self.reads.apply(post.reads as f64)
            + self.comments.apply(post.comments as f64)
            + self.likes.apply(post.likes as f64)
    }

    pub fn scope(&self) -> String {
        format!(
            "stock {} posts {} from {} to {}",
            self.stock_id,
            self.posts,
            self.first.to_rfc3339(),
            self.last.to_rfc3339()
        )
    }
}

/// One post's contribution on a day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DayEntry {
    pub score: f64,
    pub class: Sentiment,
    /// Popularity weight; ignored by the count and score variants.
    pub weight: f64,
}

impl DayEntry {
    fn side(&self) -> Option<Sentiment> {
        membership(self.score, self.class)
    }
}

pub fn bi_count(day: &[DayEntry]) -> f64 {
    let bull = day.iter().filter(|e| e.side() == Some(Sentiment::Bull)).count();
    let bear = day.iter().filter(|e| e.side() == Some(Sentiment::Bear)).count();
    ((1.0 + bull as f64) / (1.0 + bear as f64)).ln()
}

fn sums(day: &[DayEntry], weighted: bool) -> (f64, f64) {
    let mut bull = 0.0;
    let mut bear = 0.0;
    for e in day {
        let w = if weighted { e.weight } else { 1.0 };
        match e.side() {
            Some(Sentiment::Bull) => bull += e.score * w,
            Some(Sentiment::Bear) => bear += e.score * w,
            _ => {}
        }
    }
    (bull, bear)
}

pub fn bi_score(day: &[DayEntry]) -> f64 {
    let (bull, bear) = sums(day, false);
    ((1.0 + bull) / (1.0 - bear)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlooredValue {
    pub value: f64,
    pub floor_hit: bool,
}

pub fn bi_popularity(day: &[DayEntry], floor: f64) -> FlooredValue {
    let (bull, bear) = sums(day, true);
    let num = 1.0 + bull;
    let den = 1.0 - bear;
    FlooredValue {
        value: (num.max(floor) / den.max(floor)).ln(),
        floor_hit: num < floor || den < floor,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexVariant {
    #[serde(rename = "bi")]
    Count,
    Score,
    #[serde(rename = "pop")]
    Popularity,
}

impl IndexVariant {
    pub fn name(self) -> &'static str {
        match self {
            IndexVariant::Count => "bi",
            IndexVariant::Score => "score",
            IndexVariant::Popularity => "pop",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bi" => Some(IndexVariant::Count),
            "score" => Some(IndexVariant::Score),
            "pop" => Some(IndexVariant::Popularity),
            _ => None,
        }
    }
}

/// Feature/column name of a series, e.g. `title_pop`.
pub fn series_name(field: TextField, variant: IndexVariant) -> String {
    format!("{}_{}", field.name(), variant.name())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DailySentimentSeries {
    pub stock_id: String,
    pub variant: IndexVariant,
    pub field: TextField,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
    pub floor_hit: Vec<bool>,
    pub floor_hits: usize,
    pub stats_scope: String,
}

impl DailySentimentSeries {
    pub fn name(&self) -> String {
        series_name(self.field, self.variant)
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// CSV `date,value,floor_hit`, values at 6 decimals.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "date,value,floor_hit").map_err(io)?;
        for ((d, v), hit) in self.dates.iter().zip(&self.values).zip(&self.floor_hit) {
            writeln!(out, "{d},{v:.6},{}", u8::from(*hit)).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// One index value per aligned trading day.
pub fn build_index_series(
    aligned: &[AlignedDay],
    scores: &ScoreTable,
    variant: IndexVariant,
    field: TextField,
    stats: &PopularityStats,
    floor: f64,
) -> Result<DailySentimentSeries> {
    let mut values = Vec::with_capacity(aligned.len());
    let mut floor_hit = Vec::with_capacity(aligned.len());
    let mut unscored = Vec::new();
    for day in aligned {
        let mut entries = Vec::with_capacity(day.posts.len());
        for post in &day.posts {
            match scores.get(&post.id) {
                Some(s) => {
                    let (score, class) = s.get(field);
                    entries.push(DayEntry {
                        score,
                        class,
                        weight: stats.weight(post),
                    });
                }
                None => unscored.push(post.id.clone()),
            }
        }
        let (v, hit) = match variant {
            IndexVariant::Count => (bi_count(&entries), false),
            IndexVariant::Score => (bi_score(&entries), false),
            IndexVariant::Popularity => {
                let f = bi_popularity(&entries, floor);
                (f.value, f.floor_hit)
            }
        };
        values.push(v);
        floor_hit.push(hit);
    }
    if !unscored.is_empty() {
        return Err(Error::Validation(format!(
            "{} posts have no score, e.g. {:?}",
            unscored.len(),
            &unscored[..unscored.len().min(5)]
        )));
    }
    Ok(DailySentimentSeries {
        stock_id: stats.stock_id.clone(),
        variant,
        field,
        dates: aligned.iter().map(|d| d.date).collect(),
        floor_hits: floor_hit.iter().filter(|h| **h).count(),
        values,
        floor_hit,
        stats_scope: stats.scope(),
    })
}

/// All six field/variant combinations, title first, in `bi`, `score`, `pop`
/// order.
pub fn build_all_series(
    aligned: &[AlignedDay],
    scores: &ScoreTable,
    stats: &PopularityStats,
    floor: f64,
) -> Result<Vec<DailySentimentSeries>> {
    let mut out = Vec::with_capacity(6);
    for field in [TextField::Title, TextField::Body] {
        for variant in [IndexVariant::Count, IndexVariant::Score, IndexVariant::Popularity] {
            out.push(build_index_series(aligned, scores, variant, field, stats, floor)?);
        }
    }
    Ok(out)
}

/// Several daily series sharing one date axis, as stored in a wide CSV
/// `date,<name>,<name>,...`.
#[derive(Debug, Clone, PartialEq)]
pub struct SentimentTable {
    pub dates: Vec<NaiveDate>,
    pub names: Vec<String>,
    /// One column per name, each as long as `dates`.
    pub columns: Vec<Vec<f64>>,
}

impl SentimentTable {
    pub fn from_series(series: &[DailySentimentSeries]) -> Result<Self> {
        let first = series
            .first()
            .ok_or_else(|| Error::InsufficientData("no sentiment series".into()))?;
        if let Some(bad) = series.iter().find(|s| s.dates != first.dates) {
            return Err(Error::Validation(format!(
                "series {} is not on the same dates as {}",
                bad.name(),
                first.name()
            )));
        }
        Ok(Self {
            dates: first.dates.clone(),
            names: series.iter().map(|s| s.name()).collect(),
            columns: series.iter().map(|s| s.values.clone()).collect(),
        })
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "date,{}", self.names.join(",")).map_err(io)?;
        for (i, d) in self.dates.iter().enumerate() {
            write!(out, "{d}").map_err(io)?;
            for col in &self.columns {
                write!(out, ",{:.6}", col[i]).map_err(io)?;
            }
            writeln!(out).map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        crate::corpus::refuse_ground_truth(path)?;
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
        if header.get(0) != Some("date") || header.len() < 2 {
            return Err(Error::Schema(format!(
                "{}: expected header date,<series>...",
                path.display()
            )));
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut dates = Vec::new();
        let mut columns = vec![Vec::new(); names.len()];
        for (row, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let bad = || Error::Schema(format!("{}: malformed row {}", path.display(), row + 1));
            if rec.len() != names.len() + 1 {
                return Err(bad());
            }
            dates.push(rec[0].parse::<NaiveDate>().map_err(|_| bad())?);
            for (col, field) in columns.iter_mut().zip(rec.iter().skip(1)) {
                col.push(field.trim().parse::<f64>().map_err(|_| bad())?);
            }
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation(format!(
                "{}: dates are not strictly increasing",
                path.display()
            )));
        }
        Ok(Self {
            dates,
            names,
            columns,
        })
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema(format!("{}: {other:?}", path.display())),
    }
}
