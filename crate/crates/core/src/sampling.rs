//! Training-set construction for the tagger.

use std::fmt;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{chunk_corpus, Chunk, Document};
use crate::error::{Error, Result};
use crate::retrieval::{train_retrieval, RetrievalConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum SamplingStrategy {
    PositiveOnly,
    RandomNegative {
        /// Positive fraction of the sampled set. `None` asks the experiment
        /// driver to match the retrieval-filtered set of the same fold.
        #[serde(default)]
        target_precision: Option<f64>,
    },
    RetrievalFiltered {
        /// `None` uses the experiment's retrieval config.
        #[serde(default)]
        retrieval_config: Option<RetrievalConfig>,
        #[serde(default)]
        include_missed_positives: bool,
    },
    All,
}

impl SamplingStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            SamplingStrategy::PositiveOnly => "PositiveOnly",
            SamplingStrategy::RandomNegative { .. } => "RandomNegative",
            SamplingStrategy::RetrievalFiltered { .. } => "RetrievalFiltered",
            SamplingStrategy::All => "All",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SamplingStrategy::RandomNegative {
                target_precision: Some(p),
            } if !(*p > 0.0 && *p <= 1.0) => Err(Error::InvalidParams(format!(
                "target_precision must lie in (0, 1], got {p}"
            ))),
            SamplingStrategy::RetrievalFiltered {
                retrieval_config: Some(c),
                ..
            } => c.validate(),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Retrieval decision for one chunk of the cross-split filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkDecision {
    pub doc_id: String,
    pub chunk_index: usize,
    /// Half the chunk belongs to; it was scored by the other half's model.
    pub half: char,
    pub score: f64,
    pub threshold: f64,
    pub retrieved: bool,
    pub is_positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSplitProvenance {
    pub retrieval_config: RetrievalConfig,
    pub half_a_docs: usize,
    pub half_b_docs: usize,
    /// Threshold of the model trained on half A (applied to half B).
    pub threshold_a: f64,
    /// Threshold of the model trained on half B (applied to half A).
    pub threshold_b: f64,
    pub retrieved_positives: usize,
    pub retrieved_negatives: usize,
    pub missed_positives: usize,
    pub decisions: Vec<ChunkDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub strategy: String,
    pub seed: u64,
    pub input_chunks: usize,
    pub input_positives: usize,
    pub positives: usize,
    pub negatives: usize,
    pub realized_precision: f64,
    pub target_precision: Option<f64>,
    pub capped: bool,
    pub warnings: Vec<String>,
    pub retrieval: Option<CrossSplitProvenance>,
}

#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub chunks: Vec<Chunk>,
    pub provenance: Provenance,
}

fn precision(positives: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        positives as f64 / total as f64
    }
}

impl TrainingSet {
    fn new(strategy: &SamplingStrategy, seed: u64, input: &[Chunk], chunks: Vec<Chunk>) -> Self {
        let positives = chunks.iter().filter(|c| c.is_positive).count();
        let provenance = Provenance {
            strategy: strategy.name().to_string(),
            seed,
            input_chunks: input.len(),
            input_positives: input.iter().filter(|c| c.is_positive).count(),
            positives,
            negatives: chunks.len() - positives,
            realized_precision: precision(positives, chunks.len()),
            target_precision: None,
            capped: false,
            warnings: Vec::new(),
            retrieval: None,
        };
        TrainingSet { chunks, provenance }
    }
}

/// Number of negatives that brings `n_pos` positives to precision `p`.
pub fn negatives_for_precision(n_pos: usize, p: f64) -> usize {
    (n_pos as f64 * (1.0 - p) / p).round() as usize
}

/// Builds the tagger's training set from the training documents, chunked at
/// `chunk_size`. Output chunks keep corpus order.
pub fn build_training_set(
    strategy: &SamplingStrategy,
    train_docs: &[Document],
    chunk_size: usize,
    seed: u64,
) -> Result<TrainingSet> {
    strategy.validate()?;
    let chunks = chunk_corpus(train_docs, chunk_size);
    if chunks.is_empty() {
        return Err(Error::EmptyInput("training documents have no chunks".into()));
    }
    let has_positive = chunks.iter().any(|c| c.is_positive);
    match strategy {
        SamplingStrategy::All => Ok(TrainingSet::new(strategy, seed, &chunks, chunks.clone())),
        SamplingStrategy::PositiveOnly => {
            if !has_positive {
                return Err(Error::NoPositives);
            }
            let positives = chunks.iter().filter(|c| c.is_positive).cloned().collect();
            Ok(TrainingSet::new(strategy, seed, &chunks, positives))
        }
        SamplingStrategy::RandomNegative { target_precision } => {
            let p = target_precision.ok_or_else(|| {
                Error::InvalidParams("RandomNegative needs a target precision at this point".into())
            })?;
            if !has_positive {
                return Err(Error::NoPositives);
            }
            Ok(random_negative(strategy, &chunks, p, seed))
        }
        SamplingStrategy::RetrievalFiltered {
            retrieval_config,
            include_missed_positives,
        } => {
            let retrieval_config = retrieval_config.as_ref().ok_or_else(|| {
                Error::InvalidParams("RetrievalFiltered needs a retrieval config at this point".into())
            })?;
            if retrieval_config.chunk_size != chunk_size {
                return Err(Error::InvalidParams(format!(
                    "retrieval chunk size {} differs from tagging chunk size {chunk_size}",
                    retrieval_config.chunk_size
                )));
            }
            let (kept, provenance) = cross_split_retrieval_filter(train_docs, retrieval_config, *include_missed_positives, seed)?;
            let mut set = TrainingSet::new(strategy, seed, &chunks, kept);
            set.provenance.retrieval = Some(provenance);
            Ok(set)
        }
    }
}

fn random_negative(strategy: &SamplingStrategy, chunks: &[Chunk], p: f64, seed: u64) -> TrainingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let negatives: Vec<usize> = (0..chunks.len()).filter(|&i| !chunks[i].is_positive).collect();
    let n_pos = chunks.len() - negatives.len();
    let wanted = negatives_for_precision(n_pos, p);
    let n_neg = wanted.min(negatives.len());
    let mut keep: Vec<bool> = chunks.iter().map(|c| c.is_positive).collect();
    for j in index::sample(&mut rng, negatives.len(), n_neg) {
        keep[negatives[j]] = true;
    }
    let selected = chunks.iter().zip(&keep).filter(|(_, &k)| k).map(|(c, _)| c.clone()).collect();
    let mut set = TrainingSet::new(strategy, seed, chunks, selected);
    set.provenance.target_precision = Some(p);
    if wanted > negatives.len() {
        set.provenance.capped = true;
        set.provenance.warnings.push(format!(
            "precision {p} needs {wanted} negatives but only {} exist; using all of them",
            negatives.len()
        ));
    }
    set
}

/// Halves the documents at random, trains a retrieval model on each half,
/// and keeps the chunks of the other half that it retrieves. Positives
/// missed by both models are dropped unless `include_missed_positives`.
pub fn cross_split_retrieval_filter(
    train_docs: &[Document],
    config: &RetrievalConfig,
    include_missed_positives: bool,
    seed: u64,
) -> Result<(Vec<Chunk>, CrossSplitProvenance)> {
    config.validate()?;
    let mut order: Vec<usize> = (0..train_docs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_a = train_docs.len().div_ceil(2);
    let mut in_a = vec![false; train_docs.len()];
    for &i in &order[..n_a] {
        in_a[i] = true;
    }
    let half = |a: bool| -> Vec<Document> {
        train_docs
            .iter()
            .zip(&in_a)
            .filter(|(_, &x)| x == a)
            .map(|(d, _)| d.clone())
            .collect()
    };
    let (docs_a, docs_b) = (half(true), half(false));
    let chunks_a = chunk_corpus(&docs_a, config.chunk_size);
    let chunks_b = chunk_corpus(&docs_b, config.chunk_size);
    for (name, chunks) in [("A", &chunks_a), ("B", &chunks_b)] {
        let pos = chunks.iter().filter(|c| c.is_positive).count();
        if pos == 0 || pos == chunks.len() {
            return Err(Error::SingleClass(format!(
                "cross-split half {name} has {pos} positive of {} chunks; use a different seed or a larger corpus",
                chunks.len()
            )));
        }
    }

    let (model_a, model_b) = rayon::join(
        || train_retrieval(&chunks_a, config, seed),
        || train_retrieval(&chunks_b, config, seed),
    );
    let model_a = model_a.map_err(|e| e.context("cross-split model for half A"))?;
    let model_b = model_b.map_err(|e| e.context("cross-split model for half B"))?;

    // Chunks of A are judged by B's model and vice versa.
    let mut decisions = Vec::with_capacity(chunks_a.len() + chunks_b.len());
    let mut judged: Vec<(Chunk, bool)> = Vec::with_capacity(decisions.capacity());
    for (half, chunks, model) in [('A', chunks_a, &model_b), ('B', chunks_b, &model_a)] {
        let scores = model.score_chunks(&chunks);
        for (chunk, score) in chunks.into_iter().zip(scores) {
            let retrieved = model.retrieves(score);
            decisions.push(ChunkDecision {
                doc_id: chunk.doc_id.clone(),
                chunk_index: chunk.chunk_index,
                half,
                score,
                threshold: model.threshold,
                retrieved,
                is_positive: chunk.is_positive,
            });
            judged.push((chunk, retrieved));
        }
    }

    // Restore corpus order: documents as given, chunks by index.
    let position: std::collections::HashMap<&str, usize> =
        train_docs.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();
    let rank = |doc_id: &str, chunk_index: usize| (position[doc_id], chunk_index);
    judged.sort_by_key(|(c, _)| rank(&c.doc_id, c.chunk_index));
    decisions.sort_by_key(|d| rank(&d.doc_id, d.chunk_index));

    let count = |pred: &dyn Fn(&(Chunk, bool)) -> bool| judged.iter().filter(|x| pred(x)).count();
    let retrieved_positives = count(&|(c, r)| *r && c.is_positive);
    let retrieved_negatives = count(&|(c, r)| *r && !c.is_positive);
    let missed_positives = count(&|(c, r)| !*r && c.is_positive);
    let kept = judged
        .into_iter()
        .filter(|(c, r)| *r || (include_missed_positives && c.is_positive))
        .map(|(c, _)| c)
        .collect();
    let provenance = CrossSplitProvenance {
        retrieval_config: *config,
        half_a_docs: docs_a.len(),
        half_b_docs: docs_b.len(),
        threshold_a: model_a.threshold,
        threshold_b: model_b.threshold,
        retrieved_positives,
        retrieved_negatives,
        missed_positives,
        decisions,
    };
    Ok((kept, provenance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn doc(id: usize, len: usize, starts: Vec<usize>) -> Document {
        let tokens = (0..len).map(|i| format!("w{}", (i * 7 + id) % 13)).collect();
        Document::new(format!("d{id}"), tokens, starts).unwrap()
    }

    /// 100 positive one-chunk documents and 400 negative ones.
    fn balanced_corpus() -> Vec<Document> {
        (0..500).map(|i| doc(i, 10, if i % 5 == 0 { vec![2] } else { vec![] })).collect()
    }

    #[test]
    fn random_negative_matches_target_precision() {
        let docs = balanced_corpus();
        let strategy = SamplingStrategy::RandomNegative {
            target_precision: Some(0.79),
        };
        let set = build_training_set(&strategy, &docs, 10, 4).unwrap();
        assert_eq!(set.provenance.positives, 100);
        assert_eq!(set.provenance.negatives, 27);
        assert!((set.provenance.realized_precision - 0.79).abs() <= 1.0 / 127.0);
        assert!(!set.provenance.capped);
        let keys: HashSet<_> = set.chunks.iter().map(Chunk::key).collect();
        assert_eq!(keys.len(), set.chunks.len());
    }

    #[test]
    fn random_negative_at_precision_one_is_positive_only() {
        let docs = balanced_corpus();
        let a = build_training_set(&SamplingStrategy::RandomNegative { target_precision: Some(1.0) }, &docs, 10, 1).unwrap();
        let b = build_training_set(&SamplingStrategy::PositiveOnly, &docs, 10, 1).unwrap();
        assert_eq!(a.chunks, b.chunks);
    }

    #[test]
    fn random_negative_caps_at_available_negatives() {
        let docs = balanced_corpus();
        let set = build_training_set(&SamplingStrategy::RandomNegative { target_precision: Some(0.05) }, &docs, 10, 1).unwrap();
        assert!(set.provenance.capped);
        assert_eq!(set.provenance.negatives, 400);
        assert_eq!(set.provenance.warnings.len(), 1);
    }

    #[test]
    fn random_negative_is_seeded() {
        let docs = balanced_corpus();
        let s = SamplingStrategy::RandomNegative { target_precision: Some(0.5) };
        let a = build_training_set(&s, &docs, 10, 9).unwrap();
        let b = build_training_set(&s, &docs, 10, 9).unwrap();
        let c = build_training_set(&s, &docs, 10, 10).unwrap();
        assert_eq!(a.chunks, b.chunks);
        assert_ne!(a.chunks, c.chunks);
    }

    #[test]
    fn all_and_positive_only() {
        let docs = balanced_corpus();
        let all = build_training_set(&SamplingStrategy::All, &docs, 10, 0).unwrap();
        assert_eq!(all.chunks, chunk_corpus(&docs, 10));
        assert!((all.provenance.realized_precision - 0.2).abs() < 1e-12);
        let pos = build_training_set(&SamplingStrategy::PositiveOnly, &docs, 10, 0).unwrap();
        assert!(pos.chunks.iter().all(|c| c.is_positive));
        assert_eq!(pos.chunks.len(), 100);
    }

    #[test]
    fn positive_only_without_positives_fails() {
        let docs: Vec<Document> = (0..4).map(|i| doc(i, 10, vec![])).collect();
        assert!(matches!(
            build_training_set(&SamplingStrategy::PositiveOnly, &docs, 10, 0),
            Err(Error::NoPositives)
        ));
    }

    #[test]
    fn target_precision_out_of_range_is_rejected() {
        let docs = balanced_corpus();
        for p in [0.0, 1.5, f64::NAN] {
            let s = SamplingStrategy::RandomNegative { target_precision: Some(p) };
            assert!(matches!(build_training_set(&s, &docs, 10, 0), Err(Error::InvalidParams(_))));
        }
    }

    fn cue_corpus(n: usize) -> Vec<Document> {
        (0..n)
            .map(|i| {
                let positive = i % 4 == 0;
                let mut tokens: Vec<String> = (0..20).map(|j| format!("w{}", (i + j * 3) % 17)).collect();
                let starts = if positive {
                    tokens[5] = "died".into();
                    tokens[6] = "yesterday".into();
                    vec![5]
                } else {
                    vec![]
                };
                Document::new(format!("d{i}"), tokens, starts).unwrap()
            })
            .collect()
    }

    #[test]
    fn separable_filter_keeps_exactly_the_positives() {
        let docs = cue_corpus(80);
        let config = RetrievalConfig {
            chunk_size: 25,
            ngram_order: 1,
            use_tfidf: false,
            min_df: 1,
            ..Default::default()
        };
        let (kept, prov) = cross_split_retrieval_filter(&docs, &config, false, 3).unwrap();
        assert!(kept.iter().all(|c| c.is_positive));
        assert_eq!(kept.len(), 20);
        assert_eq!(prov.missed_positives, 0);
        assert_eq!(prov.half_a_docs, 40);
        for d in &prov.decisions {
            assert_eq!(d.retrieved, d.score >= d.threshold);
        }
    }

    #[test]
    fn retrieval_filtered_provenance_is_consistent() {
        let docs = cue_corpus(80);
        let config = RetrievalConfig {
            chunk_size: 10,
            ngram_order: 2,
            use_tfidf: true,
            ..Default::default()
        };
        let strategy = SamplingStrategy::RetrievalFiltered {
            retrieval_config: Some(config),
            include_missed_positives: false,
        };
        let set = build_training_set(&strategy, &docs, 10, 5).unwrap();
        let prov = set.provenance.retrieval.as_ref().unwrap();
        let retrieved: HashSet<_> = prov
            .decisions
            .iter()
            .filter(|d| d.retrieved)
            .map(|d| (d.doc_id.clone(), d.chunk_index))
            .collect();
        assert_eq!(retrieved.len(), set.chunks.len());
        for c in &set.chunks {
            assert!(retrieved.contains(&(c.doc_id.clone(), c.chunk_index)));
        }
        assert_eq!(prov.retrieved_positives, set.provenance.positives);
        let again = build_training_set(&strategy, &docs, 10, 5).unwrap();
        assert_eq!(again.chunks, set.chunks);
    }

    #[test]
    fn single_class_half_is_reported() {
        let mut docs: Vec<Document> = (0..10).map(|i| doc(i, 10, vec![])).collect();
        docs.push(doc(10, 10, vec![1]));
        let config = RetrievalConfig {
            chunk_size: 10,
            ..Default::default()
        };
        let err = cross_split_retrieval_filter(&docs, &config, false, 0).unwrap_err();
        assert!(matches!(err, Error::SingleClass(ref m) if m.contains("different seed")));
    }

    #[test]
    fn strategies_serialize_with_kind_tag() {
        let s: SamplingStrategy = serde_json::from_str(r#"{"kind":"RandomNegative"}"#).unwrap();
        assert_eq!(s, SamplingStrategy::RandomNegative { target_precision: None });
        let json = serde_json::to_string(&SamplingStrategy::All).unwrap();
        assert_eq!(json, r#"{"kind":"All"}"#);
    }
}
