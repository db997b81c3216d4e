//! Linear-chain CRF over the labels `O` and `START`.

mod features;
mod inference;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use features::{ChunkFeatures, CrfFeatureSet};
pub use inference::{forward_backward, forward_backward_log, viterbi, Marginals, Potentials, NUM_LABELS, O, START};

use crate::corpus::Chunk;
use crate::error::{Error, Result};
use crate::optim::{minimize, MinimizeOptions, Termination};

/// Gradient blocks are summed in a fixed order, so the result does not
/// depend on how many threads rayon runs.
const GRADIENT_BLOCKS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    O,
    Start,
}

impl Label {
    fn index(self) -> usize {
        match self {
            Label::O => O,
            Label::Start => START,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrfConfig {
    pub window: usize,
    pub l2_lambda: f64,
    pub max_iter: usize,
    pub ftol: f64,
    pub gtol: f64,
}

impl Default for CrfConfig {
    fn default() -> Self {
        CrfConfig {
            window: 5,
            l2_lambda: 1e-3,
            max_iter: 500,
            ftol: 1e-8,
            gtol: 1e-5,
        }
    }
}

impl CrfConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(format!("crf: {m}")));
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad("l2_lambda must be finite and non-negative");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive");
        }
        if !(self.ftol >= 0.0 && self.gtol >= 0.0) {
            return bad("tolerances must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfModel {
    pub features: CrfFeatureSet,
    /// One `[O, START]` weight pair per feature.
    pub emission: Vec<[f64; 2]>,
    /// `transition[from][to]`.
    pub transition: [[f64; 2]; 2],
    pub start: [f64; 2],
    pub end: [f64; 2],
    pub config: CrfConfig,
    pub training: TrainingSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub chunks: usize,
    pub positions: usize,
    pub iterations: usize,
    pub termination: Termination,
    pub objective: f64,
    pub gradient_max_norm: f64,
}

/// Decoded chunk. `starts` are document-level token indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Tagging {
    pub labels: Vec<Label>,
    pub score: f64,
    pub starts: Vec<usize>,
}

struct Example {
    features: ChunkFeatures,
    gold: Vec<usize>,
}

/// Negative conditional log-likelihood of the training chunks plus
/// `lambda * ||theta||^2`, over the flat layout of [`Potentials::from_flat`].
pub struct CrfObjective {
    examples: Vec<Example>,
    n_features: usize,
    l2_lambda: f64,
}

impl CrfObjective {
    pub fn new(features: &CrfFeatureSet, chunks: &[Chunk], l2_lambda: f64) -> Self {
        let examples = chunks
            .par_iter()
            .map(|c| {
                let mut gold = vec![O; c.tokens.len()];
                for &s in &c.gold_starts {
                    gold[s] = START;
                }
                Example {
                    features: features.extract(&c.tokens),
                    gold,
                }
            })
            .collect();
        CrfObjective {
            examples,
            n_features: features.len(),
            l2_lambda,
        }
    }

    pub fn dimension(&self) -> usize {
        2 * self.n_features + 8
    }

    fn accumulate(&self, theta: &[f64], examples: &[Example], grad: &mut [f64]) -> f64 {
        let pot = Potentials::from_flat(theta);
        let f2 = 2 * self.n_features;
        let mut nll = 0.0;
        for ex in examples {
            let n = ex.gold.len();
            if n == 0 {
                continue;
            }
            let emissions = pot.emission_scores(&ex.features);
            let marg = forward_backward(&pot, &emissions);
            nll += marg.log_partition - pot.sequence_score(&emissions, &ex.gold);
            for t in 0..n {
                let mut d = marg.node[t];
                d[ex.gold[t]] -= 1.0;
                for &(f, v) in ex.features.position(t) {
                    let base = 2 * f as usize;
                    grad[base] += v * d[0];
                    grad[base + 1] += v * d[1];
                }
            }
            for (t, e) in marg.edge.iter().enumerate() {
                for a in 0..2 {
                    for b in 0..2 {
                        grad[f2 + 2 * a + b] += e[a][b];
                    }
                }
                grad[f2 + 2 * ex.gold[t] + ex.gold[t + 1]] -= 1.0;
            }
            for y in 0..2 {
                grad[f2 + 4 + y] += marg.node[0][y];
                grad[f2 + 6 + y] += marg.node[n - 1][y];
            }
            grad[f2 + 4 + ex.gold[0]] -= 1.0;
            grad[f2 + 6 + ex.gold[n - 1]] -= 1.0;
        }
        nll
    }

    pub fn evaluate(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let block = self.examples.len().div_ceil(GRADIENT_BLOCKS).max(1);
        let dim = self.dimension();
        let parts: Vec<(f64, Vec<f64>)> = self
            .examples
            .par_chunks(block)
            .map(|examples| {
                let mut g = vec![0.0; dim];
                let v = self.accumulate(theta, examples, &mut g);
                (v, g)
            })
            .collect();
        let mut value = 0.0;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (v, g) in parts {
            value += v;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        for (g, w) in grad.iter_mut().zip(theta) {
            value += self.l2_lambda * w * w;
            *g += 2.0 * self.l2_lambda * w;
        }
        value
    }
}

/// Fits a CRF on `chunks`. Training starts from zero weights and visits
/// data in a fixed order, so the result is fully deterministic.
pub fn train_crf(chunks: &[Chunk], config: &CrfConfig) -> Result<CrfModel> {
    config.validate()?;
    if chunks.iter().all(|c| c.tokens.is_empty()) {
        return Err(Error::EmptyInput("crf training set has no tokens".into()));
    }
    let features = CrfFeatureSet::build(chunks.iter().map(|c| c.tokens.as_slice()), config.window);
    let objective = CrfObjective::new(&features, chunks, config.l2_lambda);
    let opts = MinimizeOptions {
        max_iter: config.max_iter,
        ftol: config.ftol,
        gtol: config.gtol,
        ..Default::default()
    };
    let min = minimize(|x, g| objective.evaluate(x, g), vec![0.0; objective.dimension()], &opts);
    if !min.value.is_finite() {
        return Err(Error::Internal("crf objective diverged".into()));
    }
    let training = TrainingSummary {
        chunks: chunks.len(),
        positions: chunks.iter().map(|c| c.tokens.len()).sum(),
        iterations: min.iterations,
        termination: min.termination,
        objective: min.value,
        gradient_max_norm: min.gradient_max_norm(),
    };
    Ok(CrfModel::from_flat(features, &min.x, *config, training))
}

impl CrfModel {
    fn from_flat(features: CrfFeatureSet, theta: &[f64], config: CrfConfig, training: TrainingSummary) -> Self {
        let pot = Potentials::from_flat(theta);
        CrfModel {
            emission: pot.emission.chunks_exact(2).map(|w| [w[0], w[1]]).collect(),
            transition: pot.transition,
            start: pot.start,
            end: pot.end,
            features,
            config,
            training,
        }
    }

    pub fn potentials(&self) -> Potentials<'_> {
        Potentials {
            emission: self.emission.as_flattened(),
            transition: self.transition,
            start: self.start,
            end: self.end,
        }
    }

    /// Viterbi decoding of a token sequence; starts are relative to `tokens`.
    pub fn tag_tokens(&self, tokens: &[String]) -> (Vec<Label>, f64) {
        let pot = self.potentials();
        let emissions = pot.emission_scores(&self.features.extract(tokens));
        let (labels, score) = viterbi(&pot, &emissions);
        let labels = labels
            .into_iter()
            .map(|y| if y == START { Label::Start } else { Label::O })
            .collect();
        (labels, score)
    }

    pub fn tag_chunk(&self, chunk: &Chunk) -> Tagging {
        let (labels, score) = self.tag_tokens(&chunk.tokens);
        let starts = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == Label::Start)
            .map(|(t, _)| chunk.token_offset + t)
            .collect();
        Tagging { labels, score, starts }
    }

    /// Conditional log-probability of a labeling.
    pub fn log_probability(&self, tokens: &[String], labels: &[Label]) -> f64 {
        let pot = self.potentials();
        let emissions = pot.emission_scores(&self.features.extract(tokens));
        let idx: Vec<usize> = labels.iter().map(|l| l.index()).collect();
        pot.sequence_score(&emissions, &idx) - forward_backward(&pot, &emissions).log_partition
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: CrfModel = serde_json::from_str(&text)?;
        if model.emission.len() != model.features.len() {
            return Err(Error::InvalidParams(format!(
                "{}: {} emission rows for {} features",
                path.display(),
                model.emission.len(),
                model.features.len()
            )));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{chunk_document, Document};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_chunks(seed: u64, n_docs: usize) -> Vec<Chunk> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chunks = Vec::new();
        for d in 0..n_docs {
            let len = rng.gen_range(8..20);
            let mut tokens: Vec<String> = (0..len).map(|_| format!("w{}", rng.gen_range(0..6))).collect();
            let mut starts = Vec::new();
            if rng.gen_bool(0.6) {
                let s = rng.gen_range(1..len - 1);
                tokens[s - 1] = "cue".into();
                tokens[s] = "evt".into();
                starts.push(s);
            }
            let doc = Document::new(format!("d{d}"), tokens, starts).unwrap();
            chunks.extend(chunk_document(&doc, 10));
        }
        chunks
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let chunks = toy_chunks(5, 6);
        let config = CrfConfig { window: 2, ..Default::default() };
        let features = CrfFeatureSet::build(chunks.iter().map(|c| c.tokens.as_slice()), config.window);
        let obj = CrfObjective::new(&features, &chunks, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let theta: Vec<f64> = (0..obj.dimension()).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let mut grad = vec![0.0; theta.len()];
        obj.evaluate(&theta, &mut grad);
        let h = 1e-5;
        let mut scratch = vec![0.0; theta.len()];
        for i in 0..theta.len() {
            let mut plus = theta.clone();
            plus[i] += h;
            let mut minus = theta.clone();
            minus[i] -= h;
            let fd = (obj.evaluate(&plus, &mut scratch) - obj.evaluate(&minus, &mut scratch)) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(rel <= 1e-4 || (fd - grad[i]).abs() < 1e-8, "coordinate {i}: fd {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn training_converges_and_learns_cue() {
        let chunks = toy_chunks(1, 40);
        let config = CrfConfig {
            ftol: 0.0,
            max_iter: 5000,
            ..Default::default()
        };
        let model = train_crf(&chunks, &config).unwrap();
        assert_eq!(model.training.termination, Termination::GradientTolerance);
        assert!(model.training.gradient_max_norm <= 1e-5, "{:?}", model.training);
        let tokens: Vec<String> = ["w1", "w2", "cue", "evt", "w0", "w3"].iter().map(|s| s.to_string()).collect();
        let (labels, _) = model.tag_tokens(&tokens);
        assert_eq!(labels[3], Label::Start);
        assert_eq!(labels.iter().filter(|&&l| l == Label::Start).count(), 1);
    }

    #[test]
    fn objective_trace_is_monotone() {
        let chunks = toy_chunks(2, 20);
        let features = CrfFeatureSet::build(chunks.iter().map(|c| c.tokens.as_slice()), 5);
        let obj = CrfObjective::new(&features, &chunks, 1e-3);
        let min = minimize(|x, g| obj.evaluate(x, g), vec![0.0; obj.dimension()], &MinimizeOptions::default());
        assert!(min.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn training_is_deterministic_across_pool_sizes() {
        let chunks = toy_chunks(3, 30);
        let config = CrfConfig::default();
        let a = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| train_crf(&chunks, &config).unwrap());
        let b = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(|| train_crf(&chunks, &config).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn predicted_starts_are_document_offsets() {
        let chunks = toy_chunks(4, 40);
        let model = train_crf(&chunks, &CrfConfig::default()).unwrap();
        for chunk in &chunks {
            let tagging = model.tag_chunk(chunk);
            assert_eq!(tagging.labels.len(), chunk.tokens.len());
            for &s in &tagging.starts {
                assert!(s >= chunk.token_offset && s < chunk.token_offset + chunk.tokens.len());
            }
        }
    }

    #[test]
    fn log_probabilities_sum_to_one() {
        let chunks = toy_chunks(6, 20);
        let model = train_crf(&chunks, &CrfConfig { max_iter: 20, ..Default::default() }).unwrap();
        let tokens: Vec<String> = ["w1", "cue", "w2", "w5"].iter().map(|s| s.to_string()).collect();
        let total: f64 = (0..16u32)
            .map(|bits| {
                let labels: Vec<Label> = (0..4)
                    .map(|t| if (bits >> t) & 1 == 1 { Label::Start } else { Label::O })
                    .collect();
                model.log_probability(&tokens, &labels).exp()
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_training_set_is_rejected() {
        assert!(matches!(train_crf(&[], &CrfConfig::default()), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn model_file_round_trips() {
        let chunks = toy_chunks(7, 10);
        let model = train_crf(&chunks, &CrfConfig { max_iter: 30, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("crf.json");
        model.save(&path).unwrap();
        assert_eq!(CrfModel::load(&path).unwrap(), model);
    }
}
