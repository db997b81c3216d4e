use std::collections::{BTreeSet, HashSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, macro_average, score_document, stratified_folds, DocScore, TestMode, MACRO_AVERAGE_CONVENTION};
use crate::corpus::{chunk_document, Chunk, Document};
use crate::error::{Error, Result};
use crate::retrieval::{train_retrieval, RetrievalConfig};
use crate::sampling::{build_training_set, Provenance, SamplingStrategy, TrainingSet};
use crate::tagger::{train_crf, CrfConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSettings {
    /// Chunking and test-time retrieval config; also the default for
    /// retrieval-filtered sampling.
    pub retrieval: RetrievalConfig,
    pub crf: CrfConfig,
    pub k: usize,
    pub strategies: Vec<SamplingStrategy>,
    pub modes: Vec<TestMode>,
    pub seed: u64,
}

impl ExperimentSettings {
    pub fn validate(&self) -> Result<()> {
        self.retrieval.validate()?;
        self.crf.validate()?;
        if self.strategies.is_empty() || self.modes.is_empty() {
            return Err(Error::InvalidParams("at least one strategy and one mode are required".into()));
        }
        let mut names = HashSet::new();
        for s in &self.strategies {
            s.validate()?;
            if !names.insert(s.name()) {
                return Err(Error::InvalidParams(format!("strategy {} listed twice", s.name())));
            }
        }
        if self.modes.iter().collect::<HashSet<_>>().len() != self.modes.len() {
            return Err(Error::InvalidParams("test mode listed twice".into()));
        }
        Ok(())
    }
}

/// Metric values of one cell. Counts are stored as floats so aggregate rows,
/// which average them over folds, share the type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub docs_scored: f64,
    pub docs_excluded: f64,
    pub train_chunks: f64,
    pub train_positive_chunks: f64,
    pub test_chunks: f64,
    pub tagged_chunks: f64,
    pub predicted_starts: f64,
    pub gold_starts: f64,
}

/// Wall-clock seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    /// Building the training set, including any retrieval models it needs.
    pub sampling_seconds: f64,
    pub crf_train_seconds: f64,
    /// Test-time retrieval model (TagRetrieved only).
    pub retrieval_train_seconds: f64,
    /// Tagging, plus retrieval scoring of the test chunks for TagRetrieved.
    pub inference_seconds: f64,
}

impl Timings {
    /// Sampling plus CRF training.
    pub fn training_seconds(&self) -> f64 {
        self.sampling_seconds + self.crf_train_seconds
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRow {
    pub strategy: String,
    pub mode: TestMode,
    /// `None` for the mean over folds.
    pub fold: Option<usize>,
    pub metrics: CellMetrics,
    pub timings: Timings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRetrieval {
    pub doc_id: String,
    pub chunk_index: usize,
    pub score: f64,
    pub retrieved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkPrediction {
    pub doc_id: String,
    pub chunk_index: usize,
    pub tagged: bool,
    pub predicted_starts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTrace {
    pub strategy: String,
    pub mode: TestMode,
    pub documents: Vec<DocScore>,
    pub chunks: Vec<ChunkPrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub seed: u64,
    pub train_docs: usize,
    pub test_docs: Vec<String>,
    pub retrieval_threshold: Option<f64>,
    pub retrieval: Vec<ChunkRetrieval>,
    pub provenance: Vec<Provenance>,
    pub cells: Vec<CellTrace>,
    pub rows: Vec<FoldRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub settings: ExperimentSettings,
    pub convention: String,
    pub documents: usize,
    pub base_rate: f64,
    pub rows: Vec<FoldRow>,
    pub aggregates: Vec<FoldRow>,
    pub folds: Vec<FoldOutcome>,
}

impl ExperimentReport {
    pub fn aggregate(&self, strategy: &str, mode: TestMode) -> Option<&FoldRow> {
        self.aggregates.iter().find(|r| r.strategy == strategy && r.mode == mode)
    }
}

fn strategy_tag(s: &SamplingStrategy) -> u64 {
    match s {
        SamplingStrategy::PositiveOnly => 1,
        SamplingStrategy::RandomNegative { .. } => 2,
        SamplingStrategy::RetrievalFiltered { .. } => 3,
        SamplingStrategy::All => 4,
    }
}

fn retrieval_filtered(retrieval: &RetrievalConfig) -> SamplingStrategy {
    SamplingStrategy::RetrievalFiltered {
        retrieval_config: Some(*retrieval),
        include_missed_positives: false,
    }
}

/// Builds every strategy's training set. A RandomNegative strategy without a
/// target precision gets the realized precision of the retrieval-filtered
/// set; when that strategy is not requested, its cost is charged to
/// RandomNegative's sampling time.
fn build_sets(settings: &ExperimentSettings, train_docs: &[Document], seed: u64) -> Result<Vec<(TrainingSet, f64)>> {
    let chunk_size = settings.retrieval.chunk_size;
    let resolve = |s: &SamplingStrategy| match s {
        SamplingStrategy::RetrievalFiltered {
            retrieval_config: None,
            include_missed_positives,
        } => SamplingStrategy::RetrievalFiltered {
            retrieval_config: Some(settings.retrieval),
            include_missed_positives: *include_missed_positives,
        },
        other => other.clone(),
    };
    let build = |s: &SamplingStrategy| -> Result<(TrainingSet, f64)> {
        let t = Instant::now();
        let set = build_training_set(s, train_docs, chunk_size, derive_seed(seed, strategy_tag(s)))
            .map_err(|e| e.context(format!("sampling {}", s.name())))?;
        Ok((set, t.elapsed().as_secs_f64()))
    };

    let strategies: Vec<SamplingStrategy> = settings.strategies.iter().map(resolve).collect();
    let filtered_idx = strategies
        .iter()
        .position(|s| matches!(s, SamplingStrategy::RetrievalFiltered { .. }));
    let mut filtered = filtered_idx.map(|i| build(&strategies[i])).transpose()?;

    let mut sets = Vec::with_capacity(strategies.len());
    for (i, s) in strategies.iter().enumerate() {
        if Some(i) == filtered_idx {
            sets.push(filtered.clone().expect("built above"));
            continue;
        }
        match s {
            SamplingStrategy::RandomNegative { target_precision: None } => {
                let mut extra = 0.0;
                if filtered.is_none() {
                    let (set, secs) = build(&retrieval_filtered(&settings.retrieval))?;
                    filtered = Some((set, 0.0));
                    extra = secs;
                }
                let p = filtered.as_ref().unwrap().0.provenance.realized_precision;
                if p <= 0.0 {
                    return Err(Error::NoPositives.context("retrieval-filtered set to match for RandomNegative"));
                }
                let (set, secs) = build(&SamplingStrategy::RandomNegative { target_precision: Some(p) })?;
                sets.push((set, secs + extra));
            }
            other => sets.push(build(other)?),
        }
    }
    Ok(sets)
}

struct TestChunk {
    doc: usize,
    chunk: Chunk,
}

/// Trains and evaluates every (strategy, mode) cell on one train/test split.
pub fn run_fold(
    train_docs: &[Document],
    test_docs: &[Document],
    settings: &ExperimentSettings,
    fold: usize,
    seed: u64,
) -> Result<FoldOutcome> {
    let train_ids: HashSet<&str> = train_docs.iter().map(|d| d.id.as_str()).collect();
    if let Some(d) = test_docs.iter().find(|d| train_ids.contains(d.id.as_str())) {
        return Err(Error::InvalidParams(format!("document {} is in both train and test", d.id)));
    }
    let chunk_size = settings.retrieval.chunk_size;
    let test_chunks: Vec<TestChunk> = test_docs
        .iter()
        .enumerate()
        .flat_map(|(doc, d)| chunk_document(d, chunk_size).into_iter().map(move |chunk| TestChunk { doc, chunk }))
        .collect();

    // Test-time retrieval, shared by every TagRetrieved cell.
    let mut retrieval_seconds = (0.0, 0.0);
    let mut retrieved: Option<Vec<bool>> = None;
    let mut retrieval_trace = Vec::new();
    let mut retrieval_threshold = None;
    if settings.modes.contains(&TestMode::TagRetrieved) {
        let t = Instant::now();
        let train_chunks = crate::corpus::chunk_corpus(train_docs, chunk_size);
        let model = train_retrieval(&train_chunks, &settings.retrieval, derive_seed(seed, 0))
            .map_err(|e| e.context("test-time retrieval model"))?;
        retrieval_seconds.0 = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let scores: Vec<f64> = test_chunks.par_iter().map(|c| model.score(&c.chunk.tokens)).collect();
        let flags: Vec<bool> = scores.iter().map(|&s| model.retrieves(s)).collect();
        retrieval_seconds.1 = t.elapsed().as_secs_f64();
        retrieval_trace = test_chunks
            .iter()
            .zip(scores.iter().zip(&flags))
            .map(|(c, (&score, &retrieved))| ChunkRetrieval {
                doc_id: c.chunk.doc_id.clone(),
                chunk_index: c.chunk.chunk_index,
                score,
                retrieved,
            })
            .collect();
        retrieval_threshold = Some(model.threshold);
        retrieved = Some(flags);
    }

    let sets = build_sets(settings, train_docs, seed)?;
    let gold: Vec<BTreeSet<usize>> = test_docs.iter().map(|d| d.gold_starts.iter().copied().collect()).collect();
    let gold_total: usize = gold.iter().map(BTreeSet::len).sum();

    let mut rows = Vec::new();
    let mut cells = Vec::new();
    let mut provenance = Vec::new();
    for (strategy, (set, sampling_seconds)) in settings.strategies.iter().zip(sets) {
        let t = Instant::now();
        let model = train_crf(&set.chunks, &settings.crf).map_err(|e| e.context(format!("training CRF for {strategy}")))?;
        let crf_train_seconds = t.elapsed().as_secs_f64();

        for &mode in &settings.modes {
            let t = Instant::now();
            let tag: Vec<bool> = match (mode, &retrieved) {
                (TestMode::TagRetrieved, Some(flags)) => flags.clone(),
                _ => vec![true; test_chunks.len()],
            };
            let predictions: Vec<Vec<usize>> = test_chunks
                .par_iter()
                .zip(&tag)
                .map(|(c, &on)| if on { model.tag_chunk(&c.chunk).starts } else { Vec::new() })
                .collect();
            let mut inference_seconds = t.elapsed().as_secs_f64();
            let mut retrieval_train_seconds = 0.0;
            if mode == TestMode::TagRetrieved {
                retrieval_train_seconds = retrieval_seconds.0;
                inference_seconds += retrieval_seconds.1;
            }

            let mut predicted = vec![BTreeSet::new(); test_docs.len()];
            for (c, starts) in test_chunks.iter().zip(&predictions) {
                predicted[c.doc].extend(starts.iter().copied());
            }
            let documents: Vec<DocScore> = test_docs
                .iter()
                .zip(predicted.iter().zip(&gold))
                .map(|(d, (p, g))| score_document(&d.id, p, g))
                .collect();
            let (precision, recall, f1, scored) = macro_average(&documents);
            let metrics = CellMetrics {
                precision,
                recall,
                f1,
                docs_scored: scored as f64,
                docs_excluded: (documents.len() - scored) as f64,
                train_chunks: set.chunks.len() as f64,
                train_positive_chunks: set.provenance.positives as f64,
                test_chunks: test_chunks.len() as f64,
                tagged_chunks: tag.iter().filter(|&&x| x).count() as f64,
                predicted_starts: predictions.iter().map(Vec::len).sum::<usize>() as f64,
                gold_starts: gold_total as f64,
            };
            rows.push(FoldRow {
                strategy: strategy.name().to_string(),
                mode,
                fold: Some(fold),
                metrics,
                timings: Timings {
                    sampling_seconds,
                    crf_train_seconds,
                    retrieval_train_seconds,
                    inference_seconds,
                },
            });
            cells.push(CellTrace {
                strategy: strategy.name().to_string(),
                mode,
                documents,
                chunks: test_chunks
                    .iter()
                    .zip(tag.iter().zip(predictions))
                    .map(|(c, (&tagged, predicted_starts))| ChunkPrediction {
                        doc_id: c.chunk.doc_id.clone(),
                        chunk_index: c.chunk.chunk_index,
                        tagged,
                        predicted_starts,
                    })
                    .collect(),
            });
        }
        provenance.push(set.provenance);
    }

    Ok(FoldOutcome {
        fold,
        seed,
        train_docs: train_docs.len(),
        test_docs: test_docs.iter().map(|d| d.id.clone()).collect(),
        retrieval_threshold,
        retrieval: retrieval_trace,
        provenance,
        cells,
        rows,
    })
}

fn mean_row(rows: &[&FoldRow]) -> FoldRow {
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&FoldRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
    let m = |f: fn(&CellMetrics) -> f64| mean(&|r: &FoldRow| f(&r.metrics));
    let t = |f: fn(&Timings) -> f64| mean(&|r: &FoldRow| f(&r.timings));
    FoldRow {
        strategy: rows[0].strategy.clone(),
        mode: rows[0].mode,
        fold: None,
        metrics: CellMetrics {
            precision: m(|x| x.precision),
            recall: m(|x| x.recall),
            f1: m(|x| x.f1),
            docs_scored: m(|x| x.docs_scored),
            docs_excluded: m(|x| x.docs_excluded),
            train_chunks: m(|x| x.train_chunks),
            train_positive_chunks: m(|x| x.train_positive_chunks),
            test_chunks: m(|x| x.test_chunks),
            tagged_chunks: m(|x| x.tagged_chunks),
            predicted_starts: m(|x| x.predicted_starts),
            gold_starts: m(|x| x.gold_starts),
        },
        timings: Timings {
            sampling_seconds: t(|x| x.sampling_seconds),
            crf_train_seconds: t(|x| x.crf_train_seconds),
            retrieval_train_seconds: t(|x| x.retrieval_train_seconds),
            inference_seconds: t(|x| x.inference_seconds),
        },
    }
}

/// Stratified k-fold cross-validation of every (strategy, mode) cell. All
/// cells share the same fold split; rows come out in fold, strategy, mode
/// order regardless of scheduling.
pub fn cross_validate(corpus: &[Document], settings: &ExperimentSettings) -> Result<ExperimentReport> {
    settings.validate()?;
    let mut ids = HashSet::new();
    for d in corpus {
        d.validate()?;
        if !ids.insert(d.id.as_str()) {
            return Err(Error::InvalidDocument {
                id: d.id.clone(),
                reason: "duplicate document id".into(),
            });
        }
    }
    let fold_of = stratified_folds(corpus, settings.k, settings.seed)?;
    let folds: Vec<FoldOutcome> = (0..settings.k)
        .into_par_iter()
        .map(|f| {
            let pick = |in_test: bool| -> Vec<Document> {
                corpus
                    .iter()
                    .zip(&fold_of)
                    .filter(|(_, &g)| (g == f) == in_test)
                    .map(|(d, _)| d.clone())
                    .collect()
            };
            let (test, train) = (pick(true), pick(false));
            run_fold(&train, &test, settings, f, derive_seed(settings.seed, 1000 + f as u64))
                .map_err(|e| e.context(format!("fold {f}")))
        })
        .collect::<Result<_>>()?;

    let rows: Vec<FoldRow> = folds.iter().flat_map(|f| f.rows.iter().cloned()).collect();
    let mut aggregates = Vec::new();
    for s in &settings.strategies {
        for &mode in &settings.modes {
            let cell: Vec<&FoldRow> = rows.iter().filter(|r| r.strategy == s.name() && r.mode == mode).collect();
            aggregates.push(mean_row(&cell));
        }
    }
    Ok(ExperimentReport {
        settings: settings.clone(),
        convention: MACRO_AVERAGE_CONVENTION.to_string(),
        documents: corpus.len(),
        base_rate: crate::corpus::positive_chunk_rate(corpus, settings.retrieval.chunk_size),
        rows,
        aggregates,
        folds,
    })
}
