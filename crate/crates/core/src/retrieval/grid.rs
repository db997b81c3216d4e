use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_retrieval, RetrievalConfig, RetrievalModel};
use crate::corpus::{chunk_corpus, Document};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub config: RetrievalConfig,
    pub threshold: Option<f64>,
    pub f_beta: Option<f64>,
    pub average_precision: Option<f64>,
    /// Why the cell was not evaluated, e.g. a single-class chunking.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridSearch {
    pub cells: Vec<GridCell>,
    pub best: usize,
    pub model: RetrievalModel,
}

impl GridSearch {
    pub fn best_config(&self) -> &RetrievalConfig {
        &self.cells[self.best].config
    }
}

/// Higher `F_beta` wins; ties go to the smaller chunk size, then the lower
/// n-gram order, then TF-IDF off.
fn rank(a: (&RetrievalConfig, f64), b: (&RetrievalConfig, f64)) -> Ordering {
    b.1.total_cmp(&a.1)
        .then(a.0.chunk_size.cmp(&b.0.chunk_size))
        .then(a.0.ngram_order.cmp(&b.0.ngram_order))
        .then(a.0.use_tfidf.cmp(&b.0.use_tfidf))
}

/// Trains one retrieval model per grid config, re-chunking the corpus at
/// each config's chunk size, and returns every cell's held-out `F_beta`
/// together with the winning model. Cells whose chunks hold a single class
/// are skipped and flagged.
pub fn grid_search_retrieval(corpus: &[Document], grid: &[RetrievalConfig], seed: u64) -> Result<GridSearch> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("retrieval grid".into()));
    }
    let outcomes: Vec<Result<Option<RetrievalModel>>> = grid
        .par_iter()
        .map(|config| {
            let chunks = chunk_corpus(corpus, config.chunk_size);
            match train_retrieval(&chunks, config, seed) {
                Ok(model) => Ok(Some(model)),
                Err(Error::SingleClass(_)) => Ok(None),
                Err(e) => Err(e.context(format!(
                    "grid cell chunk_size={} order={} tfidf={}",
                    config.chunk_size, config.ngram_order, config.use_tfidf
                ))),
            }
        })
        .collect();

    let mut cells = Vec::with_capacity(grid.len());
    let mut models = Vec::with_capacity(grid.len());
    for (config, outcome) in grid.iter().zip(outcomes) {
        let model = outcome?;
        cells.push(match &model {
            Some(m) => GridCell {
                config: *config,
                threshold: Some(m.threshold),
                f_beta: Some(m.heldout_f_beta),
                average_precision: Some(m.average_precision),
                skipped: None,
            },
            None => GridCell {
                config: *config,
                threshold: None,
                f_beta: None,
                average_precision: None,
                skipped: Some("chunks contain a single class".into()),
            },
        });
        models.push(model);
    }

    let best = cells
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.f_beta.map(|f| (i, &c.config, f)))
        .min_by(|a, b| rank((a.1, a.2), (b.1, b.2)))
        .map(|(i, _, _)| i)
        .ok_or_else(|| Error::SingleClass("every grid cell has single-class chunks".into()))?;
    let model = models[best].take().expect("best cell has a model");
    Ok(GridSearch { cells, best, model })
}

/// One row per cell: `chunk_size,order,tfidf,threshold,f2,ap,status`.
pub fn write_grid_csv(path: impl AsRef<Path>, cells: &[GridCell]) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(out, "chunk_size,order,tfidf,threshold,f2,ap,status").map_err(io)?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for cell in cells {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            cell.config.chunk_size,
            cell.config.ngram_order,
            cell.config.use_tfidf,
            fmt(cell.threshold),
            fmt(cell.f_beta),
            fmt(cell.average_precision),
            if cell.skipped.is_some() { "skipped" } else { "ok" },
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}
