//! Command-line front end.
//!
//! Every subcommand reads a JSON run configuration (`--config`), applies flag
//! overrides on top (flags win), checks that every input it needs exists,
//! writes its artifacts under `--out`, and finishes with a `manifest.json`
//! recording the command line, the resolved configuration, input file sizes
//! and the produced files. Failures print one line to stderr,
//! `error kind=<kind> code=<exit code> message=<json string>`, and exit with
//! 2 (validation), 3 (runtime/divergence) or 4 (I/O).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{NaiveTime, SecondsFormat, Utc};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    align_to_trading_days, load_labeled, load_market, load_posts, split_chronological,
    split_point, AlignConfig, FeatureFrame, PostFormat,
};
use crate::error::{Error, Result};
use crate::eval::{
    build_feature_frame, regression_report, run_ablation, AblationConfig, AblationVariant,
    TRAIN_RATIO,
};
use crate::index::{build_all_series, IndexVariant, PopularityStats, SentimentTable, DEFAULT_FLOOR};
use crate::net::{
    build_samples, load_checkpoint, predict_series, save_checkpoint, train, ForecastModel,
    Normalization, TrainConfig,
};
use crate::report::{emit_prediction_report, fmt6, CsvTable};
use crate::scorer::{
    classification_report, join_scores, load_external_scores, score_posts, train_classifier,
    write_scores, ClassifierHyper, ClassifierModel, TextField,
};
use crate::stats::{adf_test, granger_bidirectional, inner_join, roc, write_adf_csv, write_gct_csv};
use crate::synth::{synth_generate, write_synth, SynthParams};

/// File names used between pipeline stages.
pub mod files {
    pub const MANIFEST: &str = "manifest.json";
    pub const SCORER: &str = "scorer.json";
    pub const SCORER_LOSS: &str = "scorer_loss.csv";
    pub const SCORER_REPORT: &str = "scorer_report.csv";
    pub const SCORES: &str = "scores.csv";
    pub const SENTIMENT: &str = "sentiment_index.csv";
    pub const FLOOR_HITS: &str = "floor_hits.csv";
    pub const GCT: &str = "gct.csv";
    pub const ADF: &str = "adf.csv";
    pub const MODEL: &str = "model.json";
    pub const TRAIN_LOSS: &str = "train_loss.csv";
    pub const PREDICTIONS: &str = "predictions";
    pub const METRICS: &str = "metrics.csv";
    pub const ABLATION: &str = "ablation.csv";
    pub const ABLATION_SEEDS: &str = "ablation_seeds.csv";
}

/// Structured run configuration, loadable from JSON. Missing fields take
/// their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub posts: Option<PathBuf>,
    pub market: Option<PathBuf>,
    pub labeled: Option<PathBuf>,
    /// Externally produced scores; when set, `score` imports these instead
    /// of running the built-in classifier.
    pub scores: Option<PathBuf>,
    pub scorer_model: Option<PathBuf>,
    pub sentiment: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub index_variant: Option<String>,
    pub field: Option<String>,
    /// Sentiment columns fed to the forecaster.
    pub features: Vec<String>,
    pub window: usize,
    pub windows: Vec<usize>,
    /// Training seeds for `ablate`, offset from the root seed.
    pub ablation_seeds: usize,
    pub lags: Vec<usize>,
    pub seed: u64,
    pub out: PathBuf,
    /// Local session cutoff `HH:MM`.
    pub cutoff: String,
    pub utc_offset_hours: i32,
    pub floor: f64,
    pub train: TrainConfig,
    pub classifier: ClassifierHyper,
    pub synth: SynthParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            posts: None,
            market: None,
            labeled: None,
            scores: None,
            scorer_model: None,
            sentiment: None,
            model: None,
            index_variant: None,
            field: None,
            features: vec!["title_pop".into(), "body_pop".into()],
            window: 7,
            windows: vec![7, 15, 30],
            ablation_seeds: 1,
            lags: vec![1, 2, 3],
            seed: 0,
            out: PathBuf::from("out"),
            cutoff: "15:00".into(),
            utc_offset_hours: 8,
            floor: DEFAULT_FLOOR,
            train: TrainConfig::default(),
            classifier: ClassifierHyper::default(),
            synth: SynthParams::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }

    fn align(&self) -> Result<AlignConfig> {
        let cutoff = NaiveTime::parse_from_str(&self.cutoff, "%H:%M")
            .map_err(|_| Error::Validation(format!("cutoff {:?} is not HH:MM", self.cutoff)))?;
        Ok(AlignConfig {
            cutoff,
            utc_offset_secs: self.utc_offset_hours * 3600,
        })
    }

    /// `(variant, field)` selections; `None` means all.
    fn selection(&self) -> Result<(Option<IndexVariant>, Option<TextField>)> {
        let variant = match &self.index_variant {
            Some(v) => Some(IndexVariant::parse(v).ok_or_else(|| {
                Error::Validation(format!("index variant {v:?} is not one of bi, score, pop"))
            })?),
            None => None,
        };
        let field = match self.field.as_deref() {
            Some("title") => Some(TextField::Title),
            Some("body") => Some(TextField::Body),
            Some(f) => {
                return Err(Error::Validation(format!("field {f:?} is not one of title, body")))
            }
            None => None,
        };
        Ok((variant, field))
    }

    fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.window == 0 {
            bad.push("window".to_string());
        }
        if self.windows.is_empty() || self.windows.contains(&0) {
            bad.push("windows".into());
        }
        if self.lags.is_empty() || self.lags.contains(&0) {
            bad.push("lags".into());
        }
        if self.ablation_seeds == 0 {
            bad.push("ablation_seeds".into());
        }
        if !(self.floor > 0.0) {
            bad.push("floor".into());
        }
        if self.classifier.epochs == 0 || self.classifier.batch == 0 || !(self.classifier.lr > 0.0) {
            bad.push("classifier".into());
        }
        if let Err(e) = self.train.validate() {
            bad.push(e.to_string());
        }
        if let Err(e) = self.align() {
            bad.push(e.to_string());
        }
        if let Err(e) = self.selection() {
            bad.push(e.to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid configuration: {}", bad.join("; "))))
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Window length in trading days (7, 15 or 30 by convention).
    #[arg(long, global = true)]
    pub window: Option<usize>,
    /// Comma-separated sentiment feature columns, e.g. `title_pop,body_pop`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
    /// Sentiment index variant: bi, score or pop.
    #[arg(long = "index-variant", global = true)]
    pub index_variant: Option<String>,
    /// Text field: title or body.
    #[arg(long, global = true)]
    pub field: Option<String>,
    #[arg(long, global = true)]
    pub posts: Option<PathBuf>,
    #[arg(long, global = true)]
    pub market: Option<PathBuf>,
    #[arg(long, global = true)]
    pub labeled: Option<PathBuf>,
    /// Externally produced per-post scores.
    #[arg(long, global = true)]
    pub scores: Option<PathBuf>,
    #[arg(long = "scorer-model", global = true)]
    pub scorer_model: Option<PathBuf>,
    /// Daily sentiment index table written by `index`.
    #[arg(long, global = true)]
    pub sentiment: Option<PathBuf>,
    /// Forecaster checkpoint written by `train`.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a coupled synthetic forum, market and labeled corpus.
    Synth,
    /// Train the bag-of-words sentiment classifier on a labeled corpus.
    TrainScorer,
    /// Score posts with a trained classifier or import external scores.
    Score,
    /// Build daily sentiment indices on the market's trading days.
    Index,
    /// ADF and bidirectional Granger tests between indices and price ROC.
    Gct,
    /// Train the forecaster on the leading 80% of trading days.
    Train,
    /// Predict the close for every day with a full window of history.
    Predict,
    /// Evaluate a trained forecaster on the trailing 20% of trading days.
    Evaluate,
    /// Train the four ablation configurations across windows and seeds.
    Ablate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::TrainScorer => "train-scorer",
            Command::Score => "score",
            Command::Index => "index",
            Command::Gct => "gct",
            Command::Train => "train",
            Command::Predict => "predict",
            Command::Evaluate => "evaluate",
            Command::Ablate => "ablate",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sentiforecast", version, about = "Forum sentiment indices and BiLSTM close forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Configuration file (if any) with flag overrides applied.
pub fn resolve_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut c = match &common.config {
        Some(path) => {
            if !path.exists() {
                return Err(Error::Validation(format!(
                    "config file {} does not exist",
                    path.display()
                )));
            }
            RunConfig::load(path)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        c.seed = seed;
    }
    if let Some(out) = &common.out {
        c.out = out.clone();
    }
    if let Some(w) = common.window {
        c.window = w;
    }
    if let Some(f) = &common.features {
        c.features = f.iter().filter(|s| !s.is_empty()).cloned().collect();
    }
    macro_rules! take {
        ($($field:ident),*) => {$(
            if let Some(v) = &common.$field {
                c.$field = Some(v.clone());
            }
        )*};
    }
    take!(index_variant, field, posts, market, labeled, scores, scorer_model, sentiment, model);
    c.train.seed = c.seed;
    c.classifier.seed = c.seed;
    c.synth.seed = c.seed;
    Ok(c)
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str, missing: &mut Vec<String>) -> Option<&'a Path> {
    match value {
        Some(p) if p.exists() => Some(p.as_path()),
        Some(p) => {
            missing.push(format!("--{flag} {} does not exist", p.display()));
            None
        }
        None => {
            missing.push(format!("--{flag} is required"));
            None
        }
    }
}

/// Input paths of a command, checked for existence up front.
#[derive(Debug, Default)]
struct Inputs {
    posts: Option<PathBuf>,
    market: Option<PathBuf>,
    labeled: Option<PathBuf>,
    scores: Option<PathBuf>,
    scorer_model: Option<PathBuf>,
    sentiment: Option<PathBuf>,
    model: Option<PathBuf>,
}

impl Inputs {
    fn check(command: Command, c: &RunConfig) -> Result<Self> {
        let mut missing = Vec::new();
        let mut inputs = Inputs::default();
        let needs_sentiment = !c.features.is_empty();
        {
            let mut need = |value: &Option<PathBuf>, flag: &str| {
                required(value, flag, &mut missing).map(Path::to_path_buf)
            };
            match command {
                Command::Synth => {}
                Command::TrainScorer => inputs.labeled = need(&c.labeled, "labeled"),
                Command::Score => {
                    inputs.posts = need(&c.posts, "posts");
                    if c.scores.is_some() {
                        inputs.scores = need(&c.scores, "scores");
                    } else {
                        inputs.scorer_model = need(&c.scorer_model, "scorer-model");
                    }
                }
                Command::Index => {
                    inputs.posts = need(&c.posts, "posts");
                    inputs.market = need(&c.market, "market");
                    inputs.scores = need(&c.scores, "scores");
                }
                Command::Gct => {
                    inputs.market = need(&c.market, "market");
                    inputs.sentiment = need(&c.sentiment, "sentiment");
                }
                Command::Train | Command::Ablate => {
                    inputs.market = need(&c.market, "market");
                    if needs_sentiment {
                        inputs.sentiment = need(&c.sentiment, "sentiment");
                    }
                }
                Command::Predict | Command::Evaluate => {
                    inputs.market = need(&c.market, "market");
                    inputs.model = need(&c.model, "model");
                    if c.sentiment.is_some() {
                        inputs.sentiment = need(&c.sentiment, "sentiment");
                    }
                }
            }
        }
        if missing.is_empty() {
            Ok(inputs)
        } else {
            Err(Error::Validation(missing.join("; ")))
        }
    }

    fn all(&self) -> Vec<&Path> {
        [
            &self.posts,
            &self.market,
            &self.labeled,
            &self.scores,
            &self.scorer_model,
            &self.sentiment,
            &self.model,
        ]
        .into_iter()
        .flatten()
        .map(PathBuf::as_path)
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestInput {
    pub path: PathBuf,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<ManifestInput>,
    pub outputs: Vec<PathBuf>,
    pub started_at: String,
    pub finished_at: String,
    /// Command-specific notes, e.g. skipped rows or floor hits.
    pub notes: Vec<String>,
}

#[derive(Debug, Default)]
struct Outcome {
    outputs: Vec<PathBuf>,
    notes: Vec<String>,
}

impl Outcome {
    fn file(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    fn note(&mut self, note: String) {
        info!("{note}");
        self.notes.push(note);
    }
}

fn sentiment_table(inputs: &Inputs) -> Result<Option<SentimentTable>> {
    inputs.sentiment.as_deref().map(SentimentTable::load_csv).transpose()
}

fn loss_table(history: &[crate::net::EpochLoss]) -> CsvTable {
    let mut t = CsvTable::new(&["epoch", "train", "validation"]);
    for h in history {
        t.push(vec![
            h.epoch.to_string(),
            fmt6(h.train),
            h.validation.map(fmt6).unwrap_or_default(),
        ]);
    }
    t
}

fn cmd_synth(c: &RunConfig, out: &mut Outcome) -> Result<()> {
    let data = synth_generate(&c.synth)?;
    let files = write_synth(&c.out, &data)?;
    out.note(format!(
        "{} trading days, {} posts, {} labeled texts",
        data.market.len(),
        data.posts.len(),
        data.labeled.len()
    ));
    out.file(files.posts);
    out.file(files.market);
    out.file(files.labeled);
    out.file(files.ground_truth);
    Ok(())
}

fn cmd_train_scorer(c: &RunConfig, inputs: &Inputs, out: &mut Outcome) -> Result<()> {
    let corpus = load_labeled(inputs.labeled.as_deref().expect("checked"))?;
    let (fit, held_out) = split_chronological(&corpus, TRAIN_RATIO)?;
    let trained = train_classifier(fit, &c.classifier)?;
    let path = c.out.join(files::SCORER);
    trained.model.save(&path)?;
    out.file(path);

    let mut loss = CsvTable::new(&["epoch", "cross_entropy"]);
    for (i, l) in trained.loss_history.iter().enumerate() {
        loss.push(vec![i.to_string(), fmt6(*l)]);
    }
    let path = c.out.join(files::SCORER_LOSS);
    loss.write(&path)?;
    out.file(path);

    let predicted: Vec<_> = held_out.iter().map(|t| trained.model.score_text(&t.text).1).collect();
    let actual: Vec<_> = held_out.iter().map(|t| t.label).collect();
    let r = classification_report(&predicted, &actual)?;
    let mut table = CsvTable::new(&["split", "n", "accuracy", "precision", "recall", "f1"]);
    table.push(vec![
        "held_out".into(),
        held_out.len().to_string(),
        fmt6(r.accuracy),
        fmt6(r.precision),
        fmt6(r.recall),
        fmt6(r.f1),
    ]);
    let path = c.out.join(files::SCORER_REPORT);
    table.write(&path)?;
    out.file(path);
    out.note(format!(
        "trained on {} texts; held-out macro F1 {:.4} on {}",
        fit.len(),
        r.f1,
        held_out.len()
    ));
    Ok(())
}

fn cmd_score(c: &RunConfig, inputs: &Inputs, out: &mut Outcome) -> Result<()> {
    let posts_path = inputs.posts.as_deref().expect("checked");
    let load = load_posts(posts_path, PostFormat::from_path(posts_path))?;
    if load.skipped > 0 {
        out.note(format!("skipped {} invalid post rows", load.skipped));
    }
    let scores = match &inputs.scores {
        Some(path) => {
            let ext = load_external_scores(path)?;
            if ext.rejected > 0 {
                out.note(format!("rejected {} external score rows", ext.rejected));
            }
            join_scores(&load.posts, &ext.scores)?;
            ext.scores
        }
        None => {
            let model = ClassifierModel::load(inputs.scorer_model.as_deref().expect("checked"))?;
            score_posts(&model, &load.posts)
        }
    };
    let path = c.out.join(files::SCORES);
    write_scores(&path, &scores)?;
    out.file(path);
    out.note(format!("scored {} posts", scores.len()));
    Ok(())
}

fn cmd_index(c: &RunConfig, inputs: &Inputs, out: &mut Outcome) -> Result<()> {
    let posts_path = inputs.posts.as_deref().expect("checked");
    let load = load_posts(posts_path, PostFormat::from_path(posts_path))?;
    let market = load_market(inputs.market.as_deref().expect("checked"))?;
    let scores = load_external_scores(inputs.scores.as_deref().expect("checked"))?.scores;
    join_scores(&load.posts, &scores)?;
    let aligned = align_to_trading_days(&load.posts, &market, &c.align()?)?;
    if aligned.dropped() > 0 {
        out.note(format!(
            "dropped {} posts before and {} after the trading calendar",
            aligned.dropped_before, aligned.dropped_after
        ));
    }
    let stats = PopularityStats::fit(&load.posts)?;
    let (variant, field) = c.selection()?;
    let series: Vec<_> = build_all_series(&aligned.days, &scores, &stats, c.floor)?
        .into_iter()
        .filter(|s| variant.is_none_or(|v| v == s.variant) && field.is_none_or(|f| f == s.field))
        .collect();
    let table = SentimentTable::from_series(&series)?;
    let path = c.out.join(files::SENTIMENT);
    table.write_csv(&path)?;
    out.file(path);

    let mut hits = CsvTable::new(&["series", "days", "floor_hits"]);
    for s in &series {
        hits.push(vec![s.name(), s.len().to_string(), s.floor_hits.to_string()]);
        if s.floor_hits > 0 {
            out.note(format!("{}: log argument floored on {} of {} days", s.name(), s.floor_hits, s.len()));
        }
    }
    let path = c.out.join(files::FLOOR_HITS);
    hits.write(&path)?;
    out.file(path);
    out.note(format!("popularity statistics fitted on {}", stats.scope()));
    Ok(())
}

fn cmd_gct(c: &RunConfig, inputs: &Inputs, out: &mut Outcome) -> Result<()> {
    let market = load_market(inputs.market.as_deref().expect("checked"))?;
    let table = SentimentTable::load_csv(inputs.sentiment.as_deref().expect("checked"))?;
    let (variant, field) = c.selection()?;
    let roc_values = roc(&market.close)?;
    let roc_dates = &market.dates[1..];

    let mut adf_rows = vec![(
        market.stock_id.clone(),
        "roc".to_string(),
        adf_test(&roc_values, None)?,
    )];
    let mut gct_rows = Vec::new();
    for (name, values) in table.names.iter().zip(&table.columns) {
        let keep = variant.is_none_or(|v| name.ends_with(&format!("_{}", v.name())))
            && field.is_none_or(|f| name.starts_with(&format!("{}_", f.name())));
        if !keep {
            continue;
        }
        let (_, index, roc_joined) = inner_join(&table.dates, values, roc_dates, &roc_values);
        adf_rows.push((market.stock_id.clone(), name.clone(), adf_test(&index, None)?));
        gct_rows.extend(granger_bidirectional(&market.stock_id, name, &index, &roc_joined, &c.lags)?);
    }
    if gct_rows.is_empty() {
        return Err(Error::Validation("no sentiment series match the selection".into()));
    }
    let path = c.out.join(files::ADF);
    write_adf_csv(&path, &adf_rows)?;
    out.file(path);
    let path = c.out.join(files::GCT);
    write_gct_csv(&path, &gct_rows)?;
    out.file(path);
    Ok(())
}

fn cmd_train(c: &RunConfig, inputs: &Inputs, out: &mut Outcome) -> Result<()> {
    let market = load_market(inputs.market.as_deref().expect("checked"))?;
    let sentiment = sentiment_table(inputs)?;
    let frame = build_feature_frame(&market, sentiment.as_ref(), &c.features)?;
    let cut = split_point(frame.len(), TRAIN_RATIO);
    let norm = Normalization::fit(&frame, 0..cut)?;
    let samples = build_samples(&frame.head(cut), &norm, c.window, 0..cut)?;
    let mut model = ForecastModel::new(frame.width(), &c.train)?;
    model.feature_names = frame.names.clone();
    model.window = c.window;
    model.normalization = Some(norm);
    let outcome = train(model, &samples, &c.train)?;
    let path = c.out.join(files::MODEL);
    save_checkpoint(&outcome.model, &path)?;
    out.file(path);
    let path = c.out.join(files::TRAIN_LOSS);
    loss_table(&outcome.history).write(&path)?;
    out.file(path);
    out.note(format!(
        "trained on {} samples over {} epochs; best epoch {}",
        samples.len(),
        outcome.history.len(),
        outcome.best_epoch
    ));
    Ok(())
}

fn model_frame(inputs: &Inputs) -> Result<(ForecastModel, FeatureFrame)> {
    let model = load_checkpoint(inputs.model.as_deref().expect("checked"))?;
    let market = load_market(inputs.market.as_deref().expect("checked"))?;
    let sentiment = sentiment_table(inputs)?;
    let n_market = 1 + market.indicator_names.len();
    let features: Vec<String> = model.feature_names.iter().skip(n_market).cloned().collect();
    let frame = build_feature_frame(&market, sentiment.as_ref(), &features)?;
    if frame.names != model.feature_names {
        return Err(Error::Validation(format!(
            "market columns {:?} differ from the model's {:?}",
            frame.names, model.feature_names
        )));
    }
    Ok((model, frame))
}

fn cmd_predict(c: &RunConfig, inputs: &Inputs, out: &mut Outcome) -> Result<()> {
    let (model, frame) = model_frame(inputs)?;
    let points = predict_series(&model, &frame, model.window.min(frame.len())..frame.len())?;
    let report = emit_prediction_report(&c.out, files::PREDICTIONS, &points)?;
    out.file(report.csv);
    out.outputs.extend(report.svg);
    out.note(format!("{} predictions", points.len()));
    Ok(())
}

fn cmd_evaluate(c: &RunConfig, inputs: &Inputs, out: &mut Outcome) -> Result<()> {
    let (model, frame) = model_frame(inputs)?;
    let cut = split_point(frame.len(), TRAIN_RATIO);
    let points = predict_series(&model, &frame, cut..frame.len())?;
    let report = emit_prediction_report(&c.out, files::PREDICTIONS, &points)?;
    out.file(report.csv);
    out.outputs.extend(report.svg);
    let actual: Vec<f64> = points.iter().map(|p| p.actual).collect();
    let predicted: Vec<f64> = points.iter().map(|p| p.predicted).collect();
    let r = regression_report(&actual, &predicted)?;
    let mut metrics = CsvTable::new(&["n", "rmse", "mape", "r2", "aose_over", "aose_under"]);
    metrics.push(vec![
        points.len().to_string(),
        fmt6(r.rmse),
        fmt6(r.mape),
        fmt6(r.r2),
        fmt6(r.aose_over),
        fmt6(r.aose_under),
    ]);
    let path = c.out.join(files::METRICS);
    metrics.write(&path)?;
    out.file(path);
    out.note(format!(
        "test rows {}: RMSE {:.4}, MAPE {:.3}%, R2 {:.4}",
        points.len(),
        r.rmse,
        r.mape,
        r.r2
    ));
    Ok(())
}

fn cmd_ablate(c: &RunConfig, inputs: &Inputs, out: &mut Outcome) -> Result<()> {
    let market = load_market(inputs.market.as_deref().expect("checked"))?;
    let sentiment = sentiment_table(inputs)?;
    let config = AblationConfig {
        windows: c.windows.clone(),
        seeds: (0..c.ablation_seeds as u64).map(|k| c.seed + k).collect(),
        ..AblationConfig::new(c.train.clone(), c.features.clone())
    };
    let table = run_ablation(&market, sentiment.as_ref(), &config)?;
    let path = c.out.join(files::ABLATION);
    table.to_csv().write(&path)?;
    out.file(path);

    let mut per_seed = CsvTable::new(&[
        "model", "window", "seed", "rmse", "mape", "r2", "rmse_ratio", "mape_ratio", "r2_ratio",
    ]);
    for cell in &table.cells {
        for ((seed, m), r) in table.seeds.iter().zip(&cell.metrics).zip(&cell.ratios) {
            per_seed.push(vec![
                cell.variant.name().to_string(),
                cell.window.to_string(),
                seed.to_string(),
                fmt6(m.rmse),
                fmt6(m.mape),
                fmt6(m.r2),
                fmt6(r.rmse),
                fmt6(r.mape),
                fmt6(r.r2),
            ]);
        }
    }
    let path = c.out.join(files::ABLATION_SEEDS);
    per_seed.write(&path)?;
    out.file(path);
    for w in &table.windows {
        if let Some(cell) = table.cell(AblationVariant::Full, *w) {
            out.note(format!("window {w}: full model RMSE ratio {:.4}", cell.mean_ratios.rmse));
        }
    }
    Ok(())
}

/// Runs one subcommand with a resolved configuration and writes its
/// manifest.
pub fn dispatch(command: Command, config: &RunConfig, argv: &[String]) -> Result<Manifest> {
    let started_at = Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true);
    config.validate()?;
    let inputs = Inputs::check(command, config)?;
    fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;
    let mut out = Outcome::default();
    match command {
        Command::Synth => cmd_synth(config, &mut out)?,
        Command::TrainScorer => cmd_train_scorer(config, &inputs, &mut out)?,
        Command::Score => cmd_score(config, &inputs, &mut out)?,
        Command::Index => cmd_index(config, &inputs, &mut out)?,
        Command::Gct => cmd_gct(config, &inputs, &mut out)?,
        Command::Train => cmd_train(config, &inputs, &mut out)?,
        Command::Predict => cmd_predict(config, &inputs, &mut out)?,
        Command::Evaluate => cmd_evaluate(config, &inputs, &mut out)?,
        Command::Ablate => cmd_ablate(config, &inputs, &mut out)?,
    }
    let manifest = Manifest {
        command: command.name().to_string(),
        argv: argv.to_vec(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        config: config.clone(),
        inputs: inputs
            .all()
            .into_iter()
            .map(|p| ManifestInput {
                path: p.to_path_buf(),
                bytes: fs::metadata(p).map(|m| m.len()).unwrap_or(0),
            })
            .collect(),
        outputs: out.outputs,
        started_at,
        finished_at: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
        notes: out.notes,
    };
    let path = config.out.join(files::MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Schema(e.to_string()))?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Io { .. } => "io",
        Error::Schema(_) => "schema",
        Error::Validation(_) => "validation",
        Error::InsufficientData(_) => "insufficient_data",
        Error::Shape(_) => "shape",
        Error::SingularDesign { .. } => "singular_design",
        Error::Divergence { .. } => "divergence",
        Error::UnknownPosts(_) => "unknown_posts",
    }
}

/// The one-line error report printed on failure.
pub fn error_line(e: &Error) -> String {
    format!(
        "error kind={} code={} message={}",
        error_kind(e),
        e.exit_code(),
        serde_json::Value::String(e.to_string())
    )
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let argv: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let result = resolve_config(&cli.common).and_then(|c| dispatch(cli.command, &c, &argv));
    match result {
        Ok(manifest) => {
            if manifest.outputs.is_empty() {
                warn!("{} produced no artifacts", manifest.command);
            }
            0
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn common() -> CommonArgs {
        CommonArgs::default()
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(&path, r#"{"seed": 5, "window": 15, "features": ["title_score"], "train": {"hidden": 8}}"#).unwrap();
        let c = resolve_config(&CommonArgs {
            config: Some(path.clone()),
            ..common()
        })
        .unwrap();
        assert_eq!((c.seed, c.window, c.train.hidden, c.train.seed), (5, 15, 8, 5));
        assert_eq!(c.features, vec!["title_score".to_string()]);
        let c = resolve_config(&CommonArgs {
            config: Some(path),
            seed: Some(9),
            window: Some(30),
            features: Some(vec!["body_pop".into()]),
            ..common()
        })
        .unwrap();
        assert_eq!((c.seed, c.window, c.train.seed, c.synth.seed), (9, 30, 9, 9));
        assert_eq!(c.features, vec!["body_pop".to_string()]);
        assert_eq!(c.train.hidden, 8);
    }

    #[test]
    fn missing_inputs_are_named() {
        let c = RunConfig {
            market: Some(PathBuf::from("/nonexistent/market.csv")),
            ..RunConfig::default()
        };
        let err = Inputs::check(Command::Train, &c).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("/nonexistent/market.csv"), "{msg}");
        assert!(msg.contains("--sentiment is required"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn invalid_config_lists_fields() {
        let c = RunConfig {
            window: 0,
            lags: vec![],
            index_variant: Some("nope".into()),
            ..RunConfig::default()
        };
        let msg = c.validate().unwrap_err().to_string();
        for field in ["window", "lags", "nope"] {
            assert!(msg.contains(field), "{msg}");
        }
    }

    #[test]
    fn error_line_is_single_line_and_tagged() {
        let e = Error::Validation("bad\nthing".into());
        let line = error_line(&e);
        assert!(!line.contains('\n'));
        assert!(line.starts_with("error kind=validation code=2 message=\""));
    }

    #[test]
    fn unknown_subcommand_is_a_usage_error() {
        assert_eq!(run(["sentiforecast", "frobnicate"]), 2);
    }
}
