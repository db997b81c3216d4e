use serde::{Deserialize, Serialize};

use super::{cross_validate, derive_seed, ExperimentReport, ExperimentSettings, TestMode};
use crate::corpus::{downsample_negatives, generate_synthetic_corpus, positive_chunk_rate, Document, SyntheticParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMethod {
    /// A fresh corpus per rate, generated at that rate.
    Generate,
    /// One corpus generated at the base parameters' rate, then negative
    /// documents removed until each target rate is reached.
    Downsample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepBlock {
    pub target_rate: f64,
    pub realized_rate: f64,
    pub documents: usize,
    /// F1[All, TagRetrieved] - F1[All, TagAll], when both cells were run.
    pub delta: Option<f64>,
    pub report: ExperimentReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub method: SweepMethod,
    /// Generator parameters, when the corpora were synthetic.
    pub generator: Option<SyntheticParams>,
    pub blocks: Vec<SweepBlock>,
}

pub fn gap(report: &ExperimentReport) -> Option<f64> {
    let retrieved = report.aggregate("All", TestMode::TagRetrieved)?;
    let all = report.aggregate("All", TestMode::TagAll)?;
    Some(retrieved.metrics.f1 - all.metrics.f1)
}

fn check_rates(rates: &[f64]) -> Result<()> {
    if rates.is_empty() {
        return Err(Error::EmptyInput("base rate list".into()));
    }
    if let Some(r) = rates.iter().find(|&&r| !(r > 0.0 && r < 1.0)) {
        return Err(Error::InvalidParams(format!("base rates must lie in (0, 1), got {r}")));
    }
    Ok(())
}

fn block(corpus: &[Document], rate: f64, settings: &ExperimentSettings) -> Result<SweepBlock> {
    let report = cross_validate(corpus, settings).map_err(|e| e.context(format!("base rate {rate}")))?;
    Ok(SweepBlock {
        target_rate: rate,
        realized_rate: positive_chunk_rate(corpus, settings.retrieval.chunk_size),
        documents: corpus.len(),
        delta: gap(&report),
        report,
    })
}

/// Cross-validates the same experiment at several chunk-level base rates.
pub fn base_rate_sweep(
    generator: &SyntheticParams,
    rates: &[f64],
    method: SweepMethod,
    settings: &ExperimentSettings,
) -> Result<SweepReport> {
    check_rates(rates)?;
    let mut report = match method {
        SweepMethod::Generate => {
            let blocks = rates
                .iter()
                .map(|&rate| {
                    let corpus = generate_synthetic_corpus(&SyntheticParams {
                        event_rate: rate,
                        ..generator.clone()
                    })?;
                    block(&corpus, rate, settings)
                })
                .collect::<Result<Vec<_>>>()?;
            SweepReport {
                method,
                generator: None,
                blocks,
            }
        }
        SweepMethod::Downsample => downsample_sweep(&generate_synthetic_corpus(generator)?, rates, settings)?,
    };
    report.generator = Some(generator.clone());
    Ok(report)
}

/// Sweeps an existing corpus by removing negative documents. Rates are
/// visited in increasing order and each corpus is cut down from the previous
/// one, so every higher-rate corpus is a subset of the lower-rate ones.
/// Targets at or below the corpus's own rate use it unchanged.
pub fn downsample_sweep(corpus: &[Document], rates: &[f64], settings: &ExperimentSettings) -> Result<SweepReport> {
    check_rates(rates)?;
    let chunk_size = settings.retrieval.chunk_size;
    let mut order: Vec<usize> = (0..rates.len()).collect();
    order.sort_by(|&a, &b| rates[a].total_cmp(&rates[b]));
    let mut current = corpus.to_vec();
    let mut blocks: Vec<Option<SweepBlock>> = vec![None; rates.len()];
    for (step, &i) in order.iter().enumerate() {
        let rate = rates[i];
        if rate > positive_chunk_rate(&current, chunk_size) {
            current = downsample_negatives(&current, rate, chunk_size, derive_seed(settings.seed, 500 + step as u64))?;
        }
        blocks[i] = Some(block(&current, rate, settings)?);
    }
    Ok(SweepReport {
        method: SweepMethod::Downsample,
        generator: None,
        blocks: blocks.into_iter().map(|b| b.expect("every rate visited")).collect(),
    })
}
