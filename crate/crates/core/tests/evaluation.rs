use std::collections::{BTreeSet, HashSet};

use rarespan::corpus::{generate_synthetic_corpus, Document, LengthDist, SyntheticParams};
use rarespan::evaluation::{
    cross_validate, downsample_sweep, macro_average, write_report_csv, ExperimentSettings, TestMode,
};
use rarespan::retrieval::RetrievalConfig;
use rarespan::sampling::SamplingStrategy;
use rarespan::tagger::CrfConfig;

/// Small corpus with clean, always-cued events and no decoys.
fn separable(seed: u64) -> Vec<Document> {
    generate_synthetic_corpus(&SyntheticParams {
        n_docs: 120,
        doc_length: LengthDist { mean: 100.0, spread: 10.0 },
        event_rate: 0.2,
        background_vocab_size: 300,
        cue_vocab_size: 3,
        cue_strength: 1.0,
        event_length: 10,
        reference_chunk_size: 50,
        seed,
        decoy_rate: 0.0,
        near_miss_rate: 0.0,
        ..Default::default()
    })
    .unwrap()
}

fn all_strategies() -> Vec<SamplingStrategy> {
    vec![
        SamplingStrategy::PositiveOnly,
        SamplingStrategy::RandomNegative { target_precision: None },
        SamplingStrategy::RetrievalFiltered {
            retrieval_config: None,
            include_missed_positives: false,
        },
        SamplingStrategy::All,
    ]
}

fn settings(strategies: Vec<SamplingStrategy>, k: usize, seed: u64) -> ExperimentSettings {
    ExperimentSettings {
        retrieval: RetrievalConfig {
            chunk_size: 50,
            ngram_order: 1,
            use_tfidf: false,
            ..Default::default()
        },
        crf: CrfConfig {
            max_iter: 100,
            ..Default::default()
        },
        k,
        strategies,
        modes: vec![TestMode::TagAll, TestMode::TagRetrieved],
        seed,
    }
}

#[test]
fn all_data_tags_separable_corpus() {
    let report = cross_validate(&separable(3), &settings(vec![SamplingStrategy::All], 5, 3)).unwrap();
    let row = report.aggregate("All", TestMode::TagAll).unwrap();
    assert!(row.metrics.f1 >= 0.95, "F1 {}", row.metrics.f1);
}

#[test]
fn full_grid_report_is_consistent() {
    let corpus = separable(5);
    let report = cross_validate(&corpus, &settings(all_strategies(), 5, 11)).unwrap();
    assert_eq!(report.aggregates.len(), 8);
    assert_eq!(report.rows.len(), 8 * 5);

    // Every document is tested exactly once.
    let mut seen = HashSet::new();
    for fold in &report.folds {
        for id in &fold.test_docs {
            assert!(seen.insert(id.clone()), "{id} tested twice");
        }
    }
    assert_eq!(seen.len(), corpus.len());

    for agg in &report.aggregates {
        let folds: Vec<_> = report
            .rows
            .iter()
            .filter(|r| r.strategy == agg.strategy && r.mode == agg.mode)
            .collect();
        assert_eq!(folds.len(), 5);
        let mean = |f: fn(&rarespan::evaluation::FoldRow) -> f64| folds.iter().map(|r| f(r)).sum::<f64>() / 5.0;
        assert!((agg.metrics.precision - mean(|r| r.metrics.precision)).abs() <= 1e-12);
        assert!((agg.metrics.recall - mean(|r| r.metrics.recall)).abs() <= 1e-12);
        assert!((agg.metrics.f1 - mean(|r| r.metrics.f1)).abs() <= 1e-12);
        assert!((agg.timings.inference_seconds - mean(|r| r.timings.inference_seconds)).abs() <= 1e-12);
    }

    for row in report.rows.iter().chain(&report.aggregates) {
        let m = &row.metrics;
        for x in [m.precision, m.recall, m.f1] {
            assert!((0.0..=1.0).contains(&x));
        }
        assert!(m.f1 <= m.precision.max(m.recall) + 1e-12);
    }

    // Fold rows can be recomputed from the per-document trace.
    for fold in &report.folds {
        for (cell, row) in fold.cells.iter().zip(&fold.rows) {
            assert_eq!((cell.strategy.as_str(), cell.mode), (row.strategy.as_str(), row.mode));
            let (p, r, f, n) = macro_average(&cell.documents);
            assert_eq!((p, r, f), (row.metrics.precision, row.metrics.recall, row.metrics.f1));
            assert_eq!(n as f64, row.metrics.docs_scored);
        }
    }
}

#[test]
fn tag_retrieved_leaves_unretrieved_chunks_empty() {
    let report = cross_validate(&separable(8), &settings(vec![SamplingStrategy::PositiveOnly], 5, 2)).unwrap();
    let mut skipped = 0;
    for fold in &report.folds {
        let cell = fold.cells.iter().find(|c| c.mode == TestMode::TagRetrieved).unwrap();
        assert_eq!(cell.chunks.len(), fold.retrieval.len());
        for (chunk, decision) in cell.chunks.iter().zip(&fold.retrieval) {
            assert_eq!((&chunk.doc_id, chunk.chunk_index), (&decision.doc_id, decision.chunk_index));
            assert_eq!(chunk.tagged, decision.retrieved);
            if !decision.retrieved {
                skipped += 1;
                assert!(chunk.predicted_starts.is_empty());
            }
        }
    }
    assert!(skipped > 0);
}

#[test]
fn reports_are_deterministic() {
    let corpus = separable(4);
    let s = settings(all_strategies(), 5, 9);
    let a = cross_validate(&corpus, &s).unwrap();
    let b = cross_validate(&corpus, &s).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_report_csv(&pa, &[(a.base_rate, &a)]).unwrap();
    write_report_csv(&pb, &[(b.base_rate, &b)]).unwrap();
    assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
    let metrics = |r: &rarespan::evaluation::ExperimentReport| r.aggregates.iter().map(|x| x.metrics).collect::<Vec<_>>();
    assert_eq!(metrics(&a), metrics(&b));
}

#[test]
fn too_few_positive_documents_for_k() {
    let corpus = separable(1);
    let positives = corpus.iter().filter(|d| d.has_starts()).count();
    let err = cross_validate(&corpus, &settings(vec![SamplingStrategy::All], positives + 1, 1)).unwrap_err();
    assert!(err.is_validation());
    assert!(err.to_string().contains(&(positives + 1).to_string()));
}

fn low_rate_corpus() -> Vec<Document> {
    generate_synthetic_corpus(&SyntheticParams {
        n_docs: 300,
        doc_length: LengthDist { mean: 100.0, spread: 10.0 },
        event_rate: 0.03,
        background_vocab_size: 300,
        cue_strength: 1.0,
        event_length: 10,
        reference_chunk_size: 50,
        seed: 6,
        decoy_rate: 0.0,
        near_miss_rate: 0.0,
        ..Default::default()
    })
    .unwrap()
}

fn tested_ids(report: &rarespan::evaluation::ExperimentReport) -> BTreeSet<String> {
    report.folds.iter().flat_map(|f| f.test_docs.iter().cloned()).collect()
}

#[test]
fn sweep_blocks_are_nested_and_carry_gaps() {
    let corpus = low_rate_corpus();
    let s = settings(vec![SamplingStrategy::All], 5, 4);
    let sweep = downsample_sweep(&corpus, &[0.2, 0.01, 0.1], &s).unwrap();
    assert_eq!(sweep.blocks.len(), 3);
    let rates: Vec<f64> = sweep.blocks.iter().map(|b| b.target_rate).collect();
    assert_eq!(rates, vec![0.2, 0.01, 0.1]);

    let ids: Vec<BTreeSet<String>> = sweep.blocks.iter().map(|b| tested_ids(&b.report)).collect();
    // A target below the corpus rate leaves the corpus as it is.
    assert_eq!(ids[1].len(), corpus.len());
    assert!(sweep.blocks[1].realized_rate > 0.01);
    assert!((sweep.blocks[0].realized_rate - 0.2).abs() < 0.04);
    assert!((sweep.blocks[2].realized_rate - 0.1).abs() < 0.02);
    assert!(ids[2].is_subset(&ids[1]));
    assert!(ids[0].is_subset(&ids[2]));
    assert!(ids[0].len() < ids[2].len());
    for b in &sweep.blocks {
        assert_eq!(b.documents, b.report.documents);
        let all = b.report.aggregate("All", TestMode::TagAll).unwrap().metrics.f1;
        let retrieved = b.report.aggregate("All", TestMode::TagRetrieved).unwrap().metrics.f1;
        assert_eq!(b.delta, Some(retrieved - all));
    }
    // Every positive document survives downsampling.
    let positives: BTreeSet<String> = corpus.iter().filter(|d| d.has_starts()).map(|d| d.id.clone()).collect();
    assert!(positives.is_subset(&ids[0]));
}

#[test]
fn singleton_sweep() {
    let s = settings(vec![SamplingStrategy::All], 5, 4);
    let sweep = downsample_sweep(&low_rate_corpus(), &[0.1], &s).unwrap();
    assert_eq!(sweep.blocks.len(), 1);
    assert!(sweep.blocks[0].delta.is_some());
    assert!(downsample_sweep(&low_rate_corpus(), &[], &s).is_err());
    assert!(downsample_sweep(&low_rate_corpus(), &[1.5], &s).unwrap_err().is_validation());
}
