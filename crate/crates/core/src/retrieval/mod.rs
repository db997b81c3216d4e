//! First-pass chunk retrieval: bag-of-n-grams logistic regression with
//! optional TF-IDF weighting and an F2-tuned decision threshold.

mod features;
mod grid;
mod metrics;

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Chunk;
use crate::error::{Error, Result};
use crate::optim::{minimize, MinimizeOptions};

pub use features::{apply_tfidf, smoothed_idf, IdfTable, NgramVocabulary, SparseVector, MAX_NGRAM_ORDER};
pub use grid::{grid_search_retrieval, write_grid_csv, GridCell, GridSearch};
pub use metrics::{average_precision, f_beta, f_beta_from_pr, tune_threshold_f2, ThresholdChoice};

pub const GRID_CHUNK_SIZES: [usize; 4] = [25, 50, 75, 100];
pub const GRID_NGRAM_ORDERS: [usize; 3] = [1, 2, 3];

/// Share of each class held out for threshold tuning inside `train_retrieval`.
const HELDOUT_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalConfig {
    pub chunk_size: usize,
    pub ngram_order: usize,
    pub use_tfidf: bool,
    #[serde(default = "default_l2")]
    pub l2_lambda: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// N-grams seen in fewer training chunks than this are not features.
    #[serde(default = "default_min_df")]
    pub min_df: usize,
}

fn default_l2() -> f64 {
    1e-4
}

fn default_beta() -> f64 {
    2.0
}

fn default_min_df() -> usize {
    2
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            chunk_size: 100,
            ngram_order: 2,
            use_tfidf: true,
            l2_lambda: default_l2(),
            beta: default_beta(),
            min_df: default_min_df(),
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 {
            return Err(Error::InvalidParams("chunk_size must be positive".into()));
        }
        if !(1..=MAX_NGRAM_ORDER).contains(&self.ngram_order) {
            return Err(Error::InvalidParams(format!(
                "ngram_order must be between 1 and {MAX_NGRAM_ORDER}, got {}",
                self.ngram_order
            )));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(Error::InvalidParams("l2_lambda must be a nonnegative number".into()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParams("beta must be positive".into()));
        }
        Ok(())
    }

    /// Whether the config lies on the standard search grid.
    pub fn is_grid_legal(&self) -> bool {
        GRID_CHUNK_SIZES.contains(&self.chunk_size) && GRID_NGRAM_ORDERS.contains(&self.ngram_order)
    }

    /// The full grid: every chunk size × n-gram order × TF-IDF on/off, with
    /// default regularization.
    pub fn standard_grid() -> Vec<RetrievalConfig> {
        let mut grid = Vec::with_capacity(24);
        for &chunk_size in &GRID_CHUNK_SIZES {
            for &ngram_order in &GRID_NGRAM_ORDERS {
                for use_tfidf in [false, true] {
                    grid.push(RetrievalConfig {
                        chunk_size,
                        ngram_order,
                        use_tfidf,
                        ..Default::default()
                    });
                }
            }
        }
        grid
    }
}

/// Turns chunk tokens into model inputs for a fixed vocabulary.
pub fn featurize(
    tokens: &[String],
    config: &RetrievalConfig,
    idf: Option<&IdfTable>,
    vocabulary: &NgramVocabulary,
) -> SparseVector {
    let mut v = vocabulary.counts(tokens, config.ngram_order);
    if config.use_tfidf {
        if let Some(idf) = idf {
            apply_tfidf(&mut v, &idf.weights());
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalModel {
    pub config: RetrievalConfig,
    pub vocabulary: NgramVocabulary,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub idf: Option<IdfTable>,
    pub threshold: f64,
    /// Precision of `score >= threshold` over the full training set.
    pub train_set_precision: f64,
    /// Average precision on the held-out part of the inner split.
    pub average_precision: f64,
    /// `F_beta` at the tuned threshold on the held-out part of the inner split.
    pub heldout_f_beta: f64,
    pub optimizer_iterations: usize,
    #[serde(skip)]
    idf_weights: Vec<f64>,
}

impl RetrievalModel {
    fn features(&self, tokens: &[String]) -> SparseVector {
        let mut v = self.vocabulary.counts(tokens, self.config.ngram_order);
        if self.config.use_tfidf {
            if self.idf_weights.len() != self.vocabulary.len() {
                if let Some(idf) = &self.idf {
                    apply_tfidf(&mut v, &idf.weights());
                }
            } else {
                apply_tfidf(&mut v, &self.idf_weights);
            }
        }
        v
    }

    /// Probability that the token sequence contains a start.
    pub fn score(&self, tokens: &[String]) -> f64 {
        sigmoid(self.margin(&self.features(tokens)))
    }

    pub fn score_chunks(&self, chunks: &[Chunk]) -> Vec<f64> {
        chunks.iter().map(|c| self.score(&c.tokens)).collect()
    }

    pub fn retrieves(&self, score: f64) -> bool {
        score >= self.threshold
    }

    fn margin(&self, x: &SparseVector) -> f64 {
        self.bias + x.iter().map(|&(i, v)| self.weights[i as usize] * v).sum::<f64>()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut model: RetrievalModel = serde_json::from_str(&body)?;
        if model.weights.len() != model.vocabulary.len() {
            return Err(Error::InvalidParams(format!(
                "{}: {} weights for {} features",
                path.display(),
                model.weights.len(),
                model.vocabulary.len()
            )));
        }
        model.idf_weights = model.idf.as_ref().map(IdfTable::weights).unwrap_or_default();
        Ok(model)
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean negative log-likelihood of a logistic model plus `lambda * |w|²`.
/// Parameters are the weights followed by an unregularized bias.
#[derive(Debug, Clone)]
pub struct LogisticObjective<'a> {
    pub rows: &'a [SparseVector],
    pub labels: &'a [bool],
    pub l2_lambda: f64,
}

impl LogisticObjective<'_> {
    pub fn evaluate(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        let (weights, bias) = params.split_at(params.len() - 1);
        let bias = bias[0];
        let n = self.rows.len() as f64;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        let mut bias_grad = 0.0;
        for (row, &label) in self.rows.iter().zip(self.labels) {
            let z = bias + row.iter().map(|&(i, v)| weights[i as usize] * v).sum::<f64>();
            let y = if label { 1.0 } else { 0.0 };
            loss += softplus(z) - y * z;
            let r = sigmoid(z) - y;
            for &(i, v) in row {
                grad[i as usize] += r * v;
            }
            bias_grad += r;
        }
        let k = weights.len();
        let mut reg = 0.0;
        for (g, w) in grad[..k].iter_mut().zip(weights) {
            *g = *g / n + 2.0 * self.l2_lambda * w;
            reg += w * w;
        }
        grad[k] = bias_grad / n;
        loss / n + self.l2_lambda * reg
    }
}

pub(crate) fn retrieval_optimizer_options() -> MinimizeOptions {
    MinimizeOptions {
        max_iter: 1000,
        ftol: 1e-8,
        gtol: 1e-6,
        memory: 10,
    }
}

struct Fit {
    vocabulary: NgramVocabulary,
    idf: IdfTable,
    idf_weights: Vec<f64>,
    weights: Vec<f64>,
    bias: f64,
    iterations: usize,
}

impl Fit {
    fn score(&self, config: &RetrievalConfig, tokens: &[String]) -> f64 {
        let mut v = self.vocabulary.counts(tokens, config.ngram_order);
        if config.use_tfidf {
            apply_tfidf(&mut v, &self.idf_weights);
        }
        sigmoid(self.bias + v.iter().map(|&(i, x)| self.weights[i as usize] * x).sum::<f64>())
    }
}

fn fit(chunks: &[&Chunk], config: &RetrievalConfig) -> Result<Fit> {
    let build = NgramVocabulary::build(chunks.iter().map(|c| c.tokens.as_slice()), config.ngram_order, config.min_df);
    let idf_weights = build.idf.weights();
    let rows: Vec<SparseVector> = chunks
        .iter()
        .map(|c| {
            let mut v = build.vocabulary.counts(&c.tokens, config.ngram_order);
            if config.use_tfidf {
                apply_tfidf(&mut v, &idf_weights);
            }
            v
        })
        .collect();
    let labels: Vec<bool> = chunks.iter().map(|c| c.is_positive).collect();
    let objective = LogisticObjective {
        rows: &rows,
        labels: &labels,
        l2_lambda: config.l2_lambda,
    };
    let min = minimize(
        |p, g| objective.evaluate(p, g),
        vec![0.0; build.vocabulary.len() + 1],
        &retrieval_optimizer_options(),
    );
    if !min.value.is_finite() {
        return Err(Error::Internal("logistic regression diverged".into()));
    }
    let mut weights = min.x;
    let bias = weights.pop().expect("bias parameter");
    Ok(Fit {
        vocabulary: build.vocabulary,
        idf: build.idf,
        idf_weights,
        weights,
        bias,
        iterations: min.iterations,
    })
}

/// Splits chunk indices into (train, held-out), holding out a fifth of each
/// class. A class with a single member cannot be split, in which case both
/// parts are the full set.
fn inner_split(labels: &[bool], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.len() < 2 || neg.len() < 2 {
        let all: Vec<usize> = (0..labels.len()).collect();
        return (all.clone(), all);
    }
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut train = Vec::new();
    let mut heldout = Vec::new();
    for class in [pos, neg] {
        let n_held = ((class.len() as f64 * HELDOUT_FRACTION).round() as usize).clamp(1, class.len() - 1);
        heldout.extend_from_slice(&class[..n_held]);
        train.extend_from_slice(&class[n_held..]);
    }
    train.sort_unstable();
    heldout.sort_unstable();
    (train, heldout)
}

/// Trains a retrieval model on labeled chunks.
///
/// The threshold, average precision, and held-out `F_beta` come from a model
/// fit on a stratified 80% of the chunks and evaluated on the other 20%; the
/// returned weights are then refit on all chunks.
pub fn train_retrieval(train_chunks: &[Chunk], config: &RetrievalConfig, seed: u64) -> Result<RetrievalModel> {
    config.validate()?;
    let labels: Vec<bool> = train_chunks.iter().map(|c| c.is_positive).collect();
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == labels.len() {
        let which = if n_pos == 0 { "no positive chunks" } else { "no negative chunks" };
        return Err(Error::SingleClass(format!("{which} among {} training chunks", labels.len())));
    }

    let (train_idx, heldout_idx) = inner_split(&labels, seed);
    let inner_chunks: Vec<&Chunk> = train_idx.iter().map(|&i| &train_chunks[i]).collect();
    let inner = fit(&inner_chunks, config)?;
    let heldout_scores: Vec<f64> = heldout_idx.iter().map(|&i| inner.score(config, &train_chunks[i].tokens)).collect();
    let heldout_labels: Vec<bool> = heldout_idx.iter().map(|&i| labels[i]).collect();
    let choice = tune_threshold_f2(&heldout_scores, &heldout_labels, config.beta)?;
    let ap = average_precision(&heldout_scores, &heldout_labels)?;

    let all: Vec<&Chunk> = train_chunks.iter().collect();
    let full = fit(&all, config)?;
    let mut model = RetrievalModel {
        config: *config,
        vocabulary: full.vocabulary,
        weights: full.weights,
        bias: full.bias,
        idf: config.use_tfidf.then_some(full.idf),
        threshold: choice.threshold,
        train_set_precision: 0.0,
        average_precision: ap,
        heldout_f_beta: choice.f_beta,
        optimizer_iterations: full.iterations,
        idf_weights: if config.use_tfidf { full.idf_weights } else { Vec::new() },
    };
    let (mut tp, mut retrieved) = (0usize, 0usize);
    for chunk in train_chunks {
        if model.retrieves(model.score(&chunk.tokens)) {
            retrieved += 1;
            tp += usize::from(chunk.is_positive);
        }
    }
    model.train_set_precision = if retrieved == 0 { 0.0 } else { tp as f64 / retrieved as f64 };
    Ok(model)
}
