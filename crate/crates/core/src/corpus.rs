//! Posts, labeled texts and market data: loading, cleaning, trading-day
//! alignment, chronological splits and sliding windows.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Duration, FixedOffset, NaiveDate, NaiveTime, Utc};
use log::{info, warn};
use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of technical indicator columns a market file carries.
pub const INDICATOR_COUNT: usize = 9;

/// File names starting with this prefix hold synthetic ground truth and are
/// refused by every loader that feeds training or evaluation.
pub const GROUND_TRUTH_PREFIX: &str = "GROUND_TRUTH_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub stock_id: String,
    pub timestamp: DateTime<Utc>,
    pub title: String,
    pub body: String,
    pub reads: u64,
    pub comments: u64,
    pub likes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PostFormat {
    Jsonl,
    Csv,
}

impl PostFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => PostFormat::Csv,
            _ => PostFormat::Jsonl,
        }
    }
}

/// On-disk row. Counters are signed so that negative values can be detected
/// and the row skipped instead of failing the whole file.
#[derive(Debug, Serialize, Deserialize)]
struct PostRow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    stock: String,
    ts: String,
    title: String,
    #[serde(default)]
    body: String,
    reads: i64,
    comments: i64,
    likes: i64,
}

#[derive(Debug, Clone, Default)]
pub struct PostLoad {
    pub posts: Vec<Post>,
    pub skipped: usize,
}

pub(crate) fn refuse_ground_truth(path: &Path) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    if name.starts_with(GROUND_TRUTH_PREFIX) {
        return Err(Error::Validation(format!(
            "{} holds synthetic ground truth and cannot be used as model input",
            path.display()
        )));
    }
    Ok(())
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Strips emoji, `#topic#` hashtag spans and redundant whitespace.
pub fn clean_text(text: &str) -> String {
    let mut without_tags = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find('#') {
        match rest[start + 1..].find('#') {
            Some(len) => {
                without_tags.push_str(&rest[..start]);
                without_tags.push(' ');
                rest = &rest[start + 1 + len + 1..];
            }
            None => break,
        }
    }
    without_tags.push_str(rest);

    without_tags
        .chars()
        .filter(|c| !is_emoji(*c))
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn is_emoji(c: char) -> bool {
    matches!(c as u32,
        0x1F000..=0x1FAFF
        | 0x2600..=0x27BF
        | 0x2B00..=0x2BFF
        | 0xFE00..=0xFE0F
        | 0x200D
        | 0xE0020..=0xE007F)
}

fn parse_timestamp(ts: &str) -> Option<DateTime<Utc>> {
    // Only timestamps carrying an explicit offset are unambiguous.
    DateTime::parse_from_rfc3339(ts.trim())
        .ok()
        .map(|t| t.with_timezone(&Utc))
}

fn validate_row(row: PostRow, line: usize) -> std::result::Result<Post, String> {
    if row.reads < 0 || row.comments < 0 || row.likes < 0 {
        return Err(format!("row {line}: negative popularity counter"));
    }
    let timestamp =
        parse_timestamp(&row.ts).ok_or_else(|| format!("row {line}: bad timestamp {:?}", row.ts))?;
    let title = clean_text(&row.title);
    if title.is_empty() {
        return Err(format!("row {line}: empty title"));
    }
    Ok(Post {
        id: row.id.unwrap_or_else(|| (line - 1).to_string()),
        stock_id: row.stock,
        timestamp,
        title,
        body: clean_text(&row.body),
        reads: row.reads as u64,
        comments: row.comments as u64,
        likes: row.likes as u64,
    })
}

/// Loads posts from JSONL or CSV. Rows violating the post invariants are
/// skipped and counted; posts come back sorted by timestamp. Posts without
/// an explicit `id` are identified by their 0-based row index.
pub fn load_posts(path: &Path, format: PostFormat) -> Result<PostLoad> {
    refuse_ground_truth(path)?;
    let file = open(path)?;
    let mut rows: Vec<std::result::Result<PostRow, String>> = Vec::new();
    match format {
        PostFormat::Jsonl => {
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                rows.push(
                    serde_json::from_str::<PostRow>(&line)
                        .map_err(|e| format!("row {}: {e}", i + 1)),
                );
            }
        }
        PostFormat::Csv => {
            let mut reader = csv::Reader::from_reader(file);
            for (i, rec) in reader.deserialize::<PostRow>().enumerate() {
                rows.push(rec.map_err(|e| format!("row {}: {e}", i + 1)));
            }
        }
    }

    if rows.is_empty() {
        warn!("{}: no posts found", path.display());
        return Ok(PostLoad::default());
    }

    let total = rows.len();
    let mut posts = Vec::with_capacity(total);
    let mut first_bad: Option<String> = None;
    for (i, row) in rows.into_iter().enumerate() {
        match row.and_then(|r| validate_row(r, i + 1)) {
            Ok(p) => posts.push(p),
            Err(msg) => {
                first_bad.get_or_insert(msg);
            }
        }
    }
    let skipped = total - posts.len();
    if skipped * 2 > total {
        return Err(Error::Schema(format!(
            "{}: {skipped} of {total} rows invalid; first: {}",
            path.display(),
            first_bad.unwrap_or_default()
        )));
    }
    if skipped > 0 {
        warn!("{}: skipped {skipped} invalid rows", path.display());
    }

    let mut seen = HashSet::new();
    if let Some(dup) = posts.iter().find(|p| !seen.insert(p.id.as_str())) {
        return Err(Error::Validation(format!("duplicate post id {}", dup.id)));
    }

    posts.sort_by(|a, b| a.timestamp.cmp(&b.timestamp));
    Ok(PostLoad { posts, skipped })
}

fn to_row(p: &Post) -> PostRow {
    PostRow {
        id: Some(p.id.clone()),
        stock: p.stock_id.clone(),
        ts: p.timestamp.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true),
        title: p.title.clone(),
        body: p.body.clone(),
        reads: p.reads as i64,
        comments: p.comments as i64,
        likes: p.likes as i64,
    }
}

pub fn write_posts(path: &Path, posts: &[Post], format: PostFormat) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    match format {
        PostFormat::Jsonl => {
            for p in posts {
                let line = serde_json::to_string(&to_row(p)).expect("post row serializes");
                writeln!(out, "{line}").map_err(io)?;
            }
        }
        PostFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut out);
            for p in posts {
                w.serialize(to_row(p))
                    .map_err(|e| Error::Schema(e.to_string()))?;
            }
            w.flush().map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

/// Sentiment label of a training text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sentiment {
    Bear,
    Neutral,
    Bull,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Sentiment::Bear, Sentiment::Neutral, Sentiment::Bull];

    pub fn from_label(label: i64) -> Option<Self> {
        match label {
            -1 => Some(Sentiment::Bear),
            0 => Some(Sentiment::Neutral),
            1 => Some(Sentiment::Bull),
            _ => None,
        }
    }

    pub fn label(self) -> i64 {
        match self {
            Sentiment::Bear => -1,
            Sentiment::Neutral => 0,
            Sentiment::Bull => 1,
        }
    }

    /// Position in the fixed (bear, neutral, bull) class order.
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledText {
    pub text: String,
    pub label: Sentiment,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabeledRow {
    text: String,
    label: i64,
}

pub fn load_labeled(path: &Path) -> Result<Vec<LabeledText>> {
    refuse_ground_truth(path)?;
    let mut reader = csv::Reader::from_reader(open(path)?);
    let mut out = Vec::new();
    for (i, rec) in reader.deserialize::<LabeledRow>().enumerate() {
        let row = rec.map_err(|e| Error::Schema(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        let label = Sentiment::from_label(row.label).ok_or_else(|| {
            Error::Validation(format!("row {}: label {} not in {{-1,0,1}}", i + 1, row.label))
        })?;
        let text = clean_text(&row.text);
        if text.is_empty() {
            return Err(Error::Validation(format!("row {}: empty text", i + 1)));
        }
        out.push(LabeledText { text, label });
    }
    Ok(out)
}

pub fn write_labeled(path: &Path, corpus: &[LabeledText]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for t in corpus {
        w.serialize(LabeledRow {
            text: t.text.clone(),
            label: t.label.label(),
        })
        .map_err(|e| Error::Schema(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketSeries {
    pub stock_id: String,
    pub dates: Vec<NaiveDate>,
    pub close: Vec<f64>,
    pub indicator_names: Vec<String>,
    /// One series per indicator, each as long as `dates`.
    pub indicators: Vec<Vec<f64>>,
}

impl MarketSeries {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dates.len();
        if self.close.len() != n {
            return Err(Error::Validation("close length differs from dates".into()));
        }
        if self.indicators.len() != INDICATOR_COUNT || self.indicator_names.len() != INDICATOR_COUNT {
            return Err(Error::Schema(format!(
                "expected {INDICATOR_COUNT} indicator series, found {}",
                self.indicators.len()
            )));
        }
        if let Some(bad) = self.indicators.iter().position(|s| s.len() != n) {
            return Err(Error::Validation(format!(
                "indicator {} has wrong length",
                self.indicator_names[bad]
            )));
        }
        if let Some(w) = self.dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Validation(format!("dates not strictly increasing at {}", w[1])));
        }
        let all_finite = self.close.iter().chain(self.indicators.iter().flatten()).all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Validation("non-finite market value".into()));
        }
        Ok(())
    }

    pub fn position(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }
}

/// Loads a market CSV with header `date,close,<9 indicator names>`. Rows out
/// of date order are re-sorted.
pub fn load_market(path: &Path) -> Result<MarketSeries> {
    refuse_ground_truth(path)?;
    let mut reader = csv::Reader::from_reader(open(path)?);
    let headers = reader
        .headers()
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?
        .clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    if names.first() != Some(&"date") || names.get(1) != Some(&"close") {
        return Err(Error::Schema(format!(
            "{}: header must start with date,close",
            path.display()
        )));
    }
    if names.len() != 2 + INDICATOR_COUNT {
        return Err(Error::Schema(format!(
            "{}: expected {INDICATOR_COUNT} indicator columns, found {}",
            path.display(),
            names.len().saturating_sub(2)
        )));
    }

    let mut rows: Vec<(NaiveDate, Vec<f64>)> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Schema(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        let date = NaiveDate::parse_from_str(rec.get(0).unwrap_or("").trim(), "%Y-%m-%d")
            .map_err(|e| Error::Schema(format!("row {}: bad date: {e}", i + 1)))?;
        let values = rec
            .iter()
            .skip(1)
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Schema(format!("row {}: {e}", i + 1)))?;
        if values.len() != 1 + INDICATOR_COUNT {
            return Err(Error::Schema(format!("row {}: wrong field count", i + 1)));
        }
        rows.push((date, values));
    }

    if rows.windows(2).any(|w| w[0].0 > w[1].0) {
        info!("{}: rows re-sorted into ascending date order", path.display());
        rows.sort_by_key(|r| r.0);
    }
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Validation(format!("duplicate date {}", w[0].0)));
    }

    let stock_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("market")
        .to_string();
    let mut indicators = vec![Vec::with_capacity(rows.len()); INDICATOR_COUNT];
    let mut close = Vec::with_capacity(rows.len());
    let mut dates = Vec::with_capacity(rows.len());
    for (date, values) in rows {
        dates.push(date);
        close.push(values[0]);
        for (series, v) in indicators.iter_mut().zip(&values[1..]) {
            series.push(*v);
        }
    }
    let market = MarketSeries {
        stock_id,
        dates,
        close,
        indicator_names: names[2..].iter().map(|s| s.to_string()).collect(),
        indicators,
    };
    market.validate()?;
    Ok(market)
}

pub fn write_market(path: &Path, market: &MarketSeries) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    write!(out, "date,close").map_err(io)?;
    for name in &market.indicator_names {
        write!(out, ",{name}").map_err(io)?;
    }
    writeln!(out).map_err(io)?;
    for (i, date) in market.dates.iter().enumerate() {
        // Shortest round-trip float formatting keeps reloads exact.
        write!(out, "{date},{}", market.close[i]).map_err(io)?;
        for series in &market.indicators {
            write!(out, ",{}", series[i]).map_err(io)?;
        }
        writeln!(out).map_err(io)?;
    }
    out.flush().map_err(io)
}

#[derive(Debug, Clone, Copy)]
pub struct AlignConfig {
    /// Posts at or after this local time count toward the next calendar day.
    pub cutoff: NaiveTime,
    /// Exchange local time offset from UTC, in seconds.
    pub utc_offset_secs: i32,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            cutoff: NaiveTime::from_hms_opt(15, 0, 0).unwrap(),
            utc_offset_secs: 8 * 3600,
        }
    }
}

impl AlignConfig {
    pub fn utc(cutoff: NaiveTime) -> Self {
        Self {
            cutoff,
            utc_offset_secs: 0,
        }
    }

    fn effective_date(&self, ts: DateTime<Utc>) -> NaiveDate {
        let offset = FixedOffset::east_opt(self.utc_offset_secs).expect("valid utc offset");
        let local = ts.with_timezone(&offset).naive_local();
        if local.time() >= self.cutoff {
            local.date() + Duration::days(1)
        } else {
            local.date()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedDay {
    pub date: NaiveDate,
    pub posts: Vec<Post>,
}

#[derive(Debug, Clone)]
pub struct Alignment {
    /// One entry per market trading day, in date order.
    pub days: Vec<AlignedDay>,
    /// Posts whose effective date precedes the first trading day.
    pub dropped_before: usize,
    /// Posts whose effective date falls after the last trading day.
    pub dropped_after: usize,
}

impl Alignment {
    pub fn dropped(&self) -> usize {
        self.dropped_before + self.dropped_after
    }
}

/// Assigns each post to the first trading day at or after its effective date.
pub fn align_to_trading_days(
    posts: &[Post],
    market: &MarketSeries,
    config: &AlignConfig,
) -> Result<Alignment> {
    if market.is_empty() {
        return Err(Error::InsufficientData("market series is empty".into()));
    }
    let mut days: Vec<AlignedDay> = market
        .dates
        .iter()
        .map(|&date| AlignedDay {
            date,
            posts: Vec::new(),
        })
        .collect();
    let (mut dropped_before, mut dropped_after) = (0, 0);
    for post in posts {
        let eff = config.effective_date(post.timestamp);
        if eff < market.dates[0] {
            dropped_before += 1;
            continue;
        }
        let slot = market.dates.partition_point(|d| *d < eff);
        match days.get_mut(slot) {
            Some(day) => day.posts.push(post.clone()),
            None => dropped_after += 1,
        }
    }
    if dropped_before + dropped_after > 0 {
        info!("dropped {dropped_before} posts before the first and {dropped_after} after the last trading day");
    }
    Ok(Alignment {
        days,
        dropped_before,
        dropped_after,
    })
}

/// Leading `floor(ratio * n)` items form the training part; no shuffling.
pub fn split_chronological<T>(items: &[T], ratio: f64) -> Result<(&[T], &[T])> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Validation(format!("split ratio {ratio} outside (0, 1)")));
    }
    let n = items.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("cannot split {n} items")));
    }
    let cut = split_point(n, ratio);
    if cut == 0 || cut == n {
        return Err(Error::InsufficientData(format!(
            "ratio {ratio} leaves an empty part for n = {n}"
        )));
    }
    Ok(items.split_at(cut))
}

pub(crate) fn split_point(n: usize, ratio: f64) -> usize {
    // The epsilon keeps products such as 0.29 * 100 from flooring one short.
    ((ratio * n as f64) + 1e-9).floor() as usize
}

/// Date-indexed feature rows together with the value to forecast on each day.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    pub dates: Vec<NaiveDate>,
    pub names: Vec<String>,
    /// `[n_days x n_features]`
    pub rows: Array2<f64>,
    pub target: Vec<f64>,
}

impl FeatureFrame {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn width(&self) -> usize {
        self.rows.ncols()
    }

    /// The first `rows` rows.
    pub fn head(&self, rows: usize) -> FeatureFrame {
        let rows = rows.min(self.len());
        FeatureFrame {
            dates: self.dates[..rows].to_vec(),
            names: self.names.clone(),
            rows: self.rows.slice(s![..rows, ..]).to_owned(),
            target: self.target[..rows].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// `[window x n_features]`, oldest row first.
    pub features: Array2<f64>,
    pub target: f64,
    pub target_date: NaiveDate,
    /// Row of `target_date` in the source frame.
    pub target_row: usize,
}

/// One sample per target row `t >= window`, using rows `t - window .. t`.
pub fn make_windows(frame: &FeatureFrame, window: usize) -> Result<Vec<WindowSample>> {
    let n = frame.len();
    if window == 0 {
        return Err(Error::Validation("window must be positive".into()));
    }
    if n < window + 1 {
        return Err(Error::InsufficientData(format!(
            "{n} feature rows cannot form a window of {window} plus a target"
        )));
    }
    Ok((window..n)
        .map(|t| WindowSample {
            features: frame.rows.slice(s![t - window..t, ..]).to_owned(),
            target: frame.target[t],
            target_date: frame.dates[t],
            target_row: t,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn post(id: &str, ts: DateTime<Utc>) -> Post {
        Post {
            id: id.into(),
            stock_id: "S".into(),
            timestamp: ts,
            title: "t".into(),
            body: String::new(),
            reads: 0,
            comments: 0,
            likes: 0,
        }
    }

    fn market(dates: &[NaiveDate]) -> MarketSeries {
        MarketSeries {
            stock_id: "S".into(),
            dates: dates.to_vec(),
            close: vec![1.0; dates.len()],
            indicator_names: (0..9).map(|i| format!("x{i}")).collect(),
            indicators: vec![vec![0.0; dates.len()]; 9],
        }
    }

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn cleaning_strips_tags_emoji_and_spaces() {
        assert_eq!(clean_text("  大涨 #茅台# 了😀  \n 呀 "), "大涨 了 呀");
        assert_eq!(clean_text("a # b"), "a # b");
    }

    #[test]
    fn jsonl_load_sorts_and_skips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        let mut f = File::create(&path).unwrap();
        writeln!(f, r#"{{"stock":"S","ts":"2023-01-03T10:00:00Z","title":"b","body":"","reads":1,"comments":0,"likes":0}}"#).unwrap();
        writeln!(f, r#"{{"stock":"S","ts":"2023-01-02T10:00:00Z","title":"a","body":"x","reads":1,"comments":2,"likes":3}}"#).unwrap();
        writeln!(f, r#"{{"stock":"S","ts":"2023-01-04T10:00:00Z","title":"c","body":"","reads":1,"comments":0,"likes":-1}}"#).unwrap();
        drop(f);
        let load = load_posts(&path, PostFormat::Jsonl).unwrap();
        assert_eq!(load.skipped, 1);
        assert_eq!(load.posts.len(), 2);
        assert_eq!(load.posts[0].title, "a");
        assert_eq!(load.posts[0].id, "1");
    }

    #[test]
    fn mostly_invalid_file_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        std::fs::write(&path, "{\"oops\":1}\n{\"oops\":2}\n").unwrap();
        let err = load_posts(&path, PostFormat::Jsonl).unwrap_err();
        assert!(matches!(err, Error::Schema(ref m) if m.contains("row 1")), "{err}");
    }

    #[test]
    fn empty_file_yields_no_posts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load_posts(&path, PostFormat::Jsonl).unwrap().posts.is_empty());
    }

    #[test]
    fn ground_truth_files_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(format!("{GROUND_TRUTH_PREFIX}latent.csv"));
        std::fs::write(&path, "date,close\n").unwrap();
        assert!(matches!(load_market(&path), Err(Error::Validation(_))));
    }

    #[test]
    fn market_resorts_and_rejects_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let header = "date,close,a,b,c,d,e,f,g,h,i\n";
        std::fs::write(
            &path,
            format!("{header}2023-01-03,2,0,0,0,0,0,0,0,0,0\n2023-01-02,1,0,0,0,0,0,0,0,0,0\n"),
        )
        .unwrap();
        let m = load_market(&path).unwrap();
        assert_eq!(m.close, vec![1.0, 2.0]);

        std::fs::write(
            &path,
            format!("{header}2023-01-02,2,0,0,0,0,0,0,0,0,0\n2023-01-02,1,0,0,0,0,0,0,0,0,0\n"),
        )
        .unwrap();
        let err = load_market(&path).unwrap_err();
        assert!(err.to_string().contains("2023-01-02"));

        std::fs::write(&path, "date,close,a,b\n2023-01-02,1,0,0\n").unwrap();
        assert!(matches!(load_market(&path), Err(Error::Schema(_))));
    }

    #[test]
    fn weekend_post_rolls_to_monday() {
        // 2023-01-07 is a Saturday.
        let m = market(&[d(2023, 1, 6), d(2023, 1, 9)]);
        let p = post("a", Utc.with_ymd_and_hms(2023, 1, 7, 10, 0, 0).unwrap());
        let cfg = AlignConfig::utc(NaiveTime::from_hms_opt(15, 0, 0).unwrap());
        let a = align_to_trading_days(&[p], &m, &cfg).unwrap();
        assert_eq!(a.days[1].posts.len(), 1);
        assert_eq!(a.days[0].posts.len(), 0);
    }

    #[test]
    fn after_cutoff_rolls_to_next_session() {
        let m = market(&[d(2023, 1, 3), d(2023, 1, 4)]);
        let p = post("a", Utc.with_ymd_and_hms(2023, 1, 3, 16, 30, 0).unwrap());
        let cfg = AlignConfig::utc(NaiveTime::from_hms_opt(15, 0, 0).unwrap());
        let a = align_to_trading_days(&[p], &m, &cfg).unwrap();
        assert_eq!(a.days[1].date, d(2023, 1, 4));
        assert_eq!(a.days[1].posts.len(), 1);
    }

    #[test]
    fn post_after_last_day_is_dropped() {
        let m = market(&[d(2023, 1, 3)]);
        let p = post("a", Utc.with_ymd_and_hms(2023, 1, 5, 9, 0, 0).unwrap());
        let a = align_to_trading_days(&[p], &m, &AlignConfig::default()).unwrap();
        assert_eq!(a.dropped_after, 1);
        assert!(a.days[0].posts.is_empty());
    }

    #[test]
    fn split_sizes() {
        let v: Vec<usize> = (0..247).collect();
        let (a, b) = split_chronological(&v, 0.8).unwrap();
        assert_eq!((a.len(), b.len()), (197, 50));
        let v: Vec<usize> = (0..10).collect();
        let (a, b) = split_chronological(&v, 0.8).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        assert!(split_chronological(&v, 1.0).is_err());
        assert!(split_chronological(&v[..1], 0.5).is_err());
    }

    fn frame(n: usize) -> FeatureFrame {
        FeatureFrame {
            dates: (0..n).map(|i| d(2023, 1, 1) + Duration::days(i as i64)).collect(),
            names: vec!["x".into()],
            rows: Array2::from_shape_fn((n, 1), |(i, _)| i as f64),
            target: (0..n).map(|i| i as f64 * 10.0).collect(),
        }
    }

    #[test]
    fn window_counts_and_boundaries() {
        assert_eq!(make_windows(&frame(10), 7).unwrap().len(), 3);
        let one = make_windows(&frame(8), 7).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].target_row, 7);
        assert_eq!(one[0].target, 70.0);
        assert_eq!(one[0].features[[6, 0]], 6.0);
        assert!(make_windows(&frame(7), 7).is_err());
    }
}
