//! Cross-validated comparison of sampling strategies and test modes.

mod experiment;
mod report;
mod sweep;

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};

pub use experiment::{
    cross_validate, run_fold, CellMetrics, CellTrace, ChunkPrediction, ChunkRetrieval, ExperimentReport,
    ExperimentSettings, FoldOutcome, FoldRow, Timings,
};
pub use report::{read_report_csv, write_experiment, write_report_csv, write_sweep, write_timings_csv, ReportRow};
pub use sweep::{base_rate_sweep, downsample_sweep, gap, SweepBlock, SweepMethod, SweepReport};

/// Stated in every report: how degenerate documents enter the macro average.
pub const MACRO_AVERAGE_CONVENTION: &str = "documents with no gold and no predicted starts are excluded from macro averages; \
     documents with predictions but no gold score P=0 F1=0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TestMode {
    TagAll,
    TagRetrieved,
}

impl TestMode {
    pub fn name(self) -> &'static str {
        match self {
            TestMode::TagAll => "TagAll",
            TestMode::TagRetrieved => "TagRetrieved",
        }
    }
}

impl fmt::Display for TestMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocScore {
    pub doc_id: String,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// No gold and no predictions; left out of macro averages.
    pub excluded: bool,
}

/// Exact-match scoring of predicted against gold start indices. An empty
/// denominator gives a vacuous precision or recall of 1.
pub fn score_document(doc_id: &str, predicted: &BTreeSet<usize>, gold: &BTreeSet<usize>) -> DocScore {
    let tp = predicted.intersection(gold).count();
    let fp = predicted.len() - tp;
    let fn_ = gold.len() - tp;
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 1.0 };
    let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 1.0 };
    let f1 = if tp == 0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    DocScore {
        doc_id: doc_id.to_string(),
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        precision,
        recall,
        f1,
        excluded: predicted.is_empty() && gold.is_empty(),
    }
}

/// Unweighted mean precision, recall and F1 over included documents, with
/// the number included. All zero when nothing is included.
pub fn macro_average(scores: &[DocScore]) -> (f64, f64, f64, usize) {
    let included: Vec<&DocScore> = scores.iter().filter(|s| !s.excluded).collect();
    if included.is_empty() {
        return (0.0, 0.0, 0.0, 0);
    }
    let n = included.len() as f64;
    let mean = |f: fn(&DocScore) -> f64| included.iter().map(|s| f(s)).sum::<f64>() / n;
    (mean(|s| s.precision), mean(|s| s.recall), mean(|s| s.f1), included.len())
}

/// Assigns each document to one of `k` folds. Positive documents are shuffled
/// and dealt round-robin, then negatives continue the deal, so per-fold
/// positive counts differ by at most one.
pub fn stratified_folds(docs: &[Document], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidParams(format!("k must be at least 2, got {k}")));
    }
    let mut positives: Vec<usize> = (0..docs.len()).filter(|&i| docs[i].has_starts()).collect();
    let mut negatives: Vec<usize> = (0..docs.len()).filter(|&i| !docs[i].has_starts()).collect();
    if positives.len() < k {
        return Err(Error::TooFewPositiveDocuments {
            folds: k,
            needed: k,
            found: positives.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    positives.shuffle(&mut rng);
    negatives.shuffle(&mut rng);
    let mut fold_of = vec![0; docs.len()];
    for (slot, &i) in positives.iter().chain(&negatives).enumerate() {
        fold_of[i] = slot % k;
    }
    Ok(fold_of)
}

/// Derives an independent stream seed from a base seed and a tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(seed ^ splitmix(tag))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(xs: &[usize]) -> BTreeSet<usize> {
        xs.iter().copied().collect()
    }

    #[test]
    fn exact_match_counts() {
        let s = score_document("d", &set(&[10, 70]), &set(&[10, 50]));
        assert_eq!((s.true_positives, s.false_positives, s.false_negatives), (1, 1, 1));
        assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));
        assert!(!s.excluded);
    }

    #[test]
    fn degenerate_documents() {
        let silent = score_document("d", &set(&[]), &set(&[]));
        assert!(silent.excluded);
        let hallucinated = score_document("d", &set(&[3]), &set(&[]));
        assert_eq!((hallucinated.precision, hallucinated.recall, hallucinated.f1), (0.0, 1.0, 0.0));
        assert!(!hallucinated.excluded);
        let missed = score_document("d", &set(&[]), &set(&[4]));
        assert_eq!((missed.precision, missed.recall, missed.f1), (1.0, 0.0, 0.0));
    }

    #[test]
    fn macro_average_skips_excluded() {
        let scores = vec![
            score_document("a", &set(&[1]), &set(&[1])),
            score_document("b", &set(&[]), &set(&[])),
            score_document("c", &set(&[2]), &set(&[])),
        ];
        let (p, r, f, n) = macro_average(&scores);
        assert_eq!(n, 2);
        assert_eq!((p, r, f), (0.5, 1.0, 0.5));
        assert_eq!(macro_average(&[]), (0.0, 0.0, 0.0, 0));
    }

    fn docs(n: usize, positive: usize) -> Vec<Document> {
        (0..n)
            .map(|i| {
                let starts = if i < positive { vec![0] } else { vec![] };
                Document::new(format!("d{i}"), vec!["x".into(); 5], starts).unwrap()
            })
            .collect()
    }

    #[test]
    fn folds_are_stratified() {
        let corpus = docs(100, 30);
        let folds = stratified_folds(&corpus, 10, 7).unwrap();
        for f in 0..10 {
            let members: Vec<usize> = (0..100).filter(|&i| folds[i] == f).collect();
            assert_eq!(members.len(), 10);
            assert_eq!(members.iter().filter(|&&i| i < 30).count(), 3);
        }
        let uneven = stratified_folds(&docs(53, 17), 10, 1).unwrap();
        let counts: Vec<usize> = (0..10).map(|f| (0..17).filter(|&i| uneven[i] == f).count()).collect();
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }

    #[test]
    fn too_few_positive_documents() {
        let err = stratified_folds(&docs(50, 4), 10, 0).unwrap_err();
        assert!(matches!(err, Error::TooFewPositiveDocuments { needed: 10, found: 4, .. }));
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(5, 3), derive_seed(5, 3));
    }
}
