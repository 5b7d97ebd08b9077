//! Post sentiment scoring.
//!
//! The built-in scorer is a multinomial logistic regression over
//! bag-of-words term frequencies, trained with mini-batch gradient descent on
//! the mean cross-entropy. Scores from an external model can be imported
//! instead through a `post_id,title_score,body_score` CSV.
//!
//! A score is `p_bull - p_bear` and always lies in `[-1, 1]`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{refuse_ground_truth, LabeledText, Post, Sentiment};
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF
        | 0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xAC00..=0xD7AF
        | 0xF900..=0xFAFF
        | 0x20000..=0x2FA1F)
}

/// Splits CJK text into single characters and keeps contiguous runs of
/// other letters/digits together, lowercased. Everything else separates.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut run = String::new();
    for c in text.chars() {
        if is_cjk(c) {
            if !run.is_empty() {
                tokens.push(std::mem::take(&mut run));
            }
            tokens.push(c.to_string());
        } else if c.is_alphanumeric() {
            run.extend(c.to_lowercase());
        } else if !run.is_empty() {
            tokens.push(std::mem::take(&mut run));
        }
    }
    if !run.is_empty() {
        tokens.push(run);
    }
    tokens
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenVocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TokenVocabulary {
    /// Sorted, deduplicated tokens of `texts`.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<String> = texts.into_iter().flat_map(tokenize).collect();
        Self::from_tokens(set.into_iter().collect())
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Sparse term-frequency vector; out-of-vocabulary tokens are ignored
    /// but still count toward the normalizing length.
    pub fn featurize(&self, text: &str) -> Vec<(usize, f64)> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Vec::new();
        }
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in &tokens {
            if let Some(i) = self.get(t) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let len = tokens.len() as f64;
        counts.into_iter().map(|(i, c)| (i, c / len)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierHyper {
    pub lr: f64,
    pub epochs: usize,
    /// Mini-batch size; `>= corpus size` means full-batch gradient descent.
    pub batch: usize,
    pub seed: u64,
}

impl Default for ClassifierHyper {
    fn default() -> Self {
        Self {
            lr: 2.0,
            epochs: 200,
            batch: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub vocab: TokenVocabulary,
    /// Row-major `[3 x vocab]`, rows in (bear, neutral, bull) order.
    pub weights: Vec<f64>,
    pub bias: [f64; 3],
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub model: ClassifierModel,
    /// Mean cross-entropy on the whole corpus: initial value, then one entry
    /// after each epoch.
    pub loss_history: Vec<f64>,
}

type Example = (Vec<(usize, f64)>, usize);

impl ClassifierModel {
    pub fn zeros(vocab: TokenVocabulary, seed: u64) -> Self {
        let n = vocab.len();
        Self {
            vocab,
            weights: vec![0.0; 3 * n],
            bias: [0.0; 3],
            seed,
        }
    }

    pub fn logits(&self, features: &[(usize, f64)]) -> [f64; 3] {
        let v = self.vocab.len();
        let mut z = self.bias;
        for (k, zk) in z.iter_mut().enumerate() {
            let row = &self.weights[k * v..(k + 1) * v];
            *zk += features.iter().map(|&(j, x)| row[j] * x).sum::<f64>();
        }
        z
    }

    pub fn score_text(&self, text: &str) -> (f64, Sentiment) {
        let (score, class, _) = score_logits(self.logits(&self.vocab.featurize(text)));
        (score, class)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ClassifierFile {
            classes: ["bear", "neutral", "bull"].map(String::from).to_vec(),
            vocabulary: self.vocab.tokens.clone(),
            weights: self.weights.clone(),
            bias: self.bias.to_vec(),
            seed: self.seed,
        };
        let out = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(out), &file)
            .map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        let file: ClassifierFile =
            serde_json::from_reader(reader).map_err(|e| Error::Schema(e.to_string()))?;
        if file.classes != ["bear", "neutral", "bull"] {
            return Err(Error::Schema(format!("unexpected class order {:?}", file.classes)));
        }
        let vocab = TokenVocabulary::from_tokens(file.vocabulary);
        if file.weights.len() != 3 * vocab.len() || file.bias.len() != 3 {
            return Err(Error::Schema("classifier weight shape mismatch".into()));
        }
        if !file.weights.iter().chain(&file.bias).all(|w| w.is_finite()) {
            return Err(Error::Validation("non-finite classifier parameter".into()));
        }
        Ok(Self {
            vocab,
            weights: file.weights,
            bias: [file.bias[0], file.bias[1], file.bias[2]],
            seed: file.seed,
        })
    }

    /// Mean cross-entropy and its gradient `(d weights, d bias)` over `batch`.
    pub(crate) fn loss_and_gradient(&self, batch: &[&Example]) -> (f64, Vec<f64>, [f64; 3]) {
        let v = self.vocab.len();
        let mut gw = vec![0.0; 3 * v];
        let mut gb = [0.0; 3];
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for (x, y) in batch {
            let p = softmax(self.logits(x));
            loss -= p[*y].ln();
            for k in 0..3 {
                let d = (p[k] - if k == *y { 1.0 } else { 0.0 }) * scale;
                gb[k] += d;
                for &(j, xj) in x {
                    gw[k * v + j] += d * xj;
                }
            }
        }
        (loss * scale, gw, gb)
    }
}

#[derive(Serialize, Deserialize)]
struct ClassifierFile {
    classes: Vec<String>,
    vocabulary: Vec<String>,
    /// Row-major `[3 x vocabulary]`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    seed: u64,
}

pub fn softmax(z: [f64; 3]) -> [f64; 3] {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = z.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

/// Probabilities, score `p_bull - p_bear`, and the argmax class with ties
/// resolved toward neutral.
pub fn score_logits(z: [f64; 3]) -> (f64, Sentiment, [f64; 3]) {
    let p = softmax(z);
    let [bear, neutral, bull] = p;
    let class = if neutral >= bear && neutral >= bull || bear == bull {
        Sentiment::Neutral
    } else if bull > bear {
        Sentiment::Bull
    } else {
        Sentiment::Bear
    };
    ((bull - bear).clamp(-1.0, 1.0), class, p)
}

/// Trains the bag-of-words classifier on the mean cross-entropy loss.
pub fn train_classifier(corpus: &[LabeledText], hyper: &ClassifierHyper) -> Result<TrainedClassifier> {
    let present: HashSet<Sentiment> = corpus.iter().map(|t| t.label).collect();
    if let Some(missing) = Sentiment::ALL.iter().find(|c| !present.contains(c)) {
        return Err(Error::Validation(format!(
            "labeled corpus has no examples of class {}",
            missing.label()
        )));
    }
    if hyper.batch == 0 || !(hyper.lr > 0.0) {
        return Err(Error::Validation("batch and lr must be positive".into()));
    }

    let vocab = TokenVocabulary::build(corpus.iter().map(|t| t.text.as_str()));
    let examples: Vec<Example> = corpus
        .iter()
        .map(|t| (vocab.featurize(&t.text), t.label.index()))
        .collect();
    let all: Vec<&Example> = examples.iter().collect();
    let mut model = ClassifierModel::zeros(vocab, hyper.seed);
    let mut rng = substream(hyper.seed, Stream::Scorer);
    let mut order: Vec<usize> = (0..examples.len()).collect();

    let mut history = vec![model.loss_and_gradient(&all).0];
    for epoch in 1..=hyper.epochs {
        if hyper.batch < examples.len() {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(hyper.batch) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let (_, gw, gb) = model.loss_and_gradient(&batch);
            for (w, g) in model.weights.iter_mut().zip(&gw) {
                *w -= hyper.lr * g;
            }
            for (b, g) in model.bias.iter_mut().zip(&gb) {
                *b -= hyper.lr * g;
            }
        }
        let loss = model.loss_and_gradient(&all).0;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.push(loss);
    }
    Ok(TrainedClassifier {
        model,
        loss_history: history,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPost {
    pub post_id: String,
    pub title_score: f64,
    pub body_score: f64,
    pub title_class: Sentiment,
    pub body_class: Sentiment,
}

/// Which text of a post an index is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextField {
    Title,
    Body,
}

impl TextField {
    pub fn name(self) -> &'static str {
        match self {
            TextField::Title => "title",
            TextField::Body => "body",
        }
    }
}

impl ScoredPost {
    pub fn get(&self, field: TextField) -> (f64, Sentiment) {
        match field {
            TextField::Title => (self.title_score, self.title_class),
            TextField::Body => (self.body_score, self.body_class),
        }
    }
}

/// Bull/bear membership used by the sentiment indices: the class decides,
/// and a score whose sign disagrees with its class demotes the post to
/// neutral (`None`).
pub fn membership(score: f64, class: Sentiment) -> Option<Sentiment> {
    match class {
        Sentiment::Bull if score > 0.0 => Some(Sentiment::Bull),
        Sentiment::Bear if score < 0.0 => Some(Sentiment::Bear),
        _ => None,
    }
}

/// Class implied by the sign of an externally supplied score.
pub fn class_of_score(score: f64) -> Sentiment {
    if score > 0.0 {
        Sentiment::Bull
    } else if score < 0.0 {
        Sentiment::Bear
    } else {
        Sentiment::Neutral
    }
}

pub type ScoreTable = BTreeMap<String, ScoredPost>;

pub fn score_posts(model: &ClassifierModel, posts: &[Post]) -> ScoreTable {
    use rayon::prelude::*;
    posts
        .par_iter()
        .map(|p| {
            let (title_score, title_class) = model.score_text(&p.title);
            let (body_score, body_class) = model.score_text(&p.body);
            (
                p.id.clone(),
                ScoredPost {
                    post_id: p.id.clone(),
                    title_score,
                    body_score,
                    title_class,
                    body_class,
                },
            )
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    post_id: String,
    title_score: f64,
    body_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    title_class: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    body_class: Option<i64>,
}

#[derive(Debug, Clone, Default)]
pub struct ExternalScores {
    pub scores: ScoreTable,
    pub rejected: usize,
}

/// Reads `post_id,title_score,body_score[,title_class,body_class]`. Rows
/// with a score outside `[-1, 1]` are rejected and counted. Without class
/// columns the class follows the sign of the score.
pub fn load_external_scores(path: &Path) -> Result<ExternalScores> {
    refuse_ground_truth(path)?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut out = ExternalScores::default();
    for (i, rec) in reader.deserialize::<ScoreRow>().enumerate() {
        let row = rec.map_err(|e| Error::Schema(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        let in_range = |s: f64| (-1.0..=1.0).contains(&s);
        if !in_range(row.title_score) || !in_range(row.body_score) {
            out.rejected += 1;
            continue;
        }
        let class = |c: Option<i64>, s: f64| -> Result<Sentiment> {
            match c {
                None => Ok(class_of_score(s)),
                Some(l) => Sentiment::from_label(l)
                    .ok_or_else(|| Error::Validation(format!("row {}: bad class {l}", i + 1))),
            }
        };
        let scored = ScoredPost {
            title_class: class(row.title_class, row.title_score)?,
            body_class: class(row.body_class, row.body_score)?,
            post_id: row.post_id.clone(),
            title_score: row.title_score,
            body_score: row.body_score,
        };
        if out.scores.insert(row.post_id.clone(), scored).is_some() {
            return Err(Error::Validation(format!("duplicate post_id {}", row.post_id)));
        }
    }
    Ok(out)
}

/// Writes scores with their classes; the file is readable by
/// [`load_external_scores`].
pub fn write_scores(path: &Path, scores: &ScoreTable) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for s in scores.values() {
        w.serialize(ScoreRow {
            post_id: s.post_id.clone(),
            title_score: s.title_score,
            body_score: s.body_score,
            title_class: Some(s.title_class.label()),
            body_class: Some(s.body_class.label()),
        })
        .map_err(|e| Error::Schema(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Checks that every score refers to a known post.
pub fn join_scores(posts: &[Post], scores: &ScoreTable) -> Result<()> {
    let known: HashSet<&str> = posts.iter().map(|p| p.id.as_str()).collect();
    let unknown: Vec<String> = scores
        .keys()
        .filter(|id| !known.contains(id.as_str()))
        .cloned()
        .collect();
    if unknown.is_empty() {
        Ok(())
    } else {
        Err(Error::UnknownPosts(unknown))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `confusion[actual][predicted]` in (bear, neutral, bull) order.
    pub confusion: [[usize; 3]; 3],
}

/// Counts for one class treated as the positive label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinaryCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl BinaryCounts {
    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.tp + self.fp + self.fn_ + self.tn)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        harmonic(self.precision(), self.recall())
    }
}

/// Accuracy plus macro-averaged precision and recall over the classes that
/// occur in either sequence; F1 is the harmonic mean of the two macro
/// averages. Undefined per-class ratios count as 0.
pub fn classification_report(
    predicted: &[Sentiment],
    actual: &[Sentiment],
) -> Result<ClassificationReport> {
    if predicted.len() != actual.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::InsufficientData("no labels to evaluate".into()));
    }
    let mut confusion = [[0usize; 3]; 3];
    for (p, a) in predicted.iter().zip(actual) {
        confusion[a.index()][p.index()] += 1;
    }
    let correct: usize = (0..3).map(|k| confusion[k][k]).sum();

    let (mut p_sum, mut r_sum, mut classes) = (0.0, 0.0, 0);
    for k in 0..3 {
        let support: usize = confusion[k].iter().sum();
        let predicted_k: usize = (0..3).map(|a| confusion[a][k]).sum();
        if support + predicted_k == 0 {
            continue;
        }
        classes += 1;
        p_sum += ratio(confusion[k][k], predicted_k);
        r_sum += ratio(confusion[k][k], support);
    }
    let precision = p_sum / classes as f64;
    let recall = r_sum / classes as f64;
    Ok(ClassificationReport {
        accuracy: ratio(correct, actual.len()),
        precision,
        recall,
        f1: harmonic(precision, recall),
        confusion,
    })
}
