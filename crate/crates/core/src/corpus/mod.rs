//! Documents, chunks, and corpus-level utilities.
//!
//! A [`Document`] is a token sequence with the sorted token indices where a
//! target span begins. Documents are cut into fixed-size [`Chunk`]s, which are
//! the unit of both retrieval and tagging.

mod io;
mod synth;
mod tokenize;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_raw_dir, read_jsonl, write_jsonl};
pub use synth::{downsample_negatives, generate_synthetic_corpus, LengthDist, SyntheticParams};
pub use tokenize::{tokenize, Normalizer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
    #[serde(rename = "starts")]
    pub gold_starts: Vec<usize>,
}

impl Document {
    /// Builds a document, checking that every start is a valid token index
    /// and that starts are strictly increasing.
    pub fn new(id: impl Into<String>, tokens: Vec<String>, gold_starts: Vec<usize>) -> Result<Self> {
        let doc = Document {
            id: id.into(),
            tokens,
            gold_starts,
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidDocument {
            id: self.id.clone(),
            reason,
        };
        if let Some(&bad) = self.gold_starts.iter().find(|&&s| s >= self.tokens.len()) {
            return Err(invalid(format!(
                "start {bad} is outside the document ({} tokens)",
                self.tokens.len()
            )));
        }
        if self.gold_starts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("starts must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn has_starts(&self) -> bool {
        !self.gold_starts.is_empty()
    }

    /// Number of chunks this document yields at `chunk_size`.
    pub fn chunk_count(&self, chunk_size: usize) -> usize {
        self.tokens.len().div_ceil(chunk_size)
    }

    /// Number of chunks at `chunk_size` containing at least one start.
    pub fn positive_chunk_count(&self, chunk_size: usize) -> usize {
        let mut count = 0;
        let mut last = None;
        for &s in &self.gold_starts {
            let c = s / chunk_size;
            if last != Some(c) {
                count += 1;
                last = Some(c);
            }
        }
        count
    }
}

/// Identifies a chunk within a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChunkKey {
    pub doc_id: String,
    pub chunk_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub chunk_index: usize,
    pub token_offset: usize,
    pub tokens: Vec<String>,
    /// Start indices relative to the first token of the chunk.
    pub gold_starts: Vec<usize>,
    pub is_positive: bool,
}

impl Chunk {
    pub fn key(&self) -> ChunkKey {
        ChunkKey {
            doc_id: self.doc_id.clone(),
            chunk_index: self.chunk_index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Splits a document into contiguous chunks of `chunk_size` tokens; the last
/// chunk holds the remainder. An empty document yields no chunks.
///
/// # Panics
///
/// Panics if `chunk_size` is zero.
pub fn chunk_document(doc: &Document, chunk_size: usize) -> Vec<Chunk> {
    assert!(chunk_size >= 1, "chunk size must be positive");
    let mut starts = doc.gold_starts.iter().peekable();
    doc.tokens
        .chunks(chunk_size)
        .enumerate()
        .map(|(chunk_index, tokens)| {
            let token_offset = chunk_index * chunk_size;
            let end = token_offset + tokens.len();
            let mut gold_starts = Vec::new();
            while let Some(&&s) = starts.peek() {
                if s >= end {
                    break;
                }
                gold_starts.push(s - token_offset);
                starts.next();
            }
            Chunk {
                doc_id: doc.id.clone(),
                chunk_index,
                token_offset,
                tokens: tokens.to_vec(),
                is_positive: !gold_starts.is_empty(),
                gold_starts,
            }
        })
        .collect()
}

/// Chunks every document in order.
pub fn chunk_corpus(docs: &[Document], chunk_size: usize) -> Vec<Chunk> {
    docs.iter()
        .flat_map(|d| chunk_document(d, chunk_size))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub positive_documents: usize,
    pub tokens: usize,
    pub starts: usize,
    pub chunks: usize,
    pub positive_chunks: usize,
}

impl CorpusStats {
    pub fn compute(docs: &[Document], chunk_size: usize) -> Self {
        let mut stats = CorpusStats {
            documents: docs.len(),
            positive_documents: 0,
            tokens: 0,
            starts: 0,
            chunks: 0,
            positive_chunks: 0,
        };
        for doc in docs {
            stats.positive_documents += usize::from(doc.has_starts());
            stats.tokens += doc.len();
            stats.starts += doc.gold_starts.len();
            stats.chunks += doc.chunk_count(chunk_size);
            stats.positive_chunks += doc.positive_chunk_count(chunk_size);
        }
        stats
    }

    /// Fraction of chunks containing at least one start; zero for an empty corpus.
    pub fn base_rate(&self) -> f64 {
        if self.chunks == 0 {
            0.0
        } else {
            self.positive_chunks as f64 / self.chunks as f64
        }
    }
}

/// Chunk-level base rate of a corpus.
pub fn positive_chunk_rate(docs: &[Document], chunk_size: usize) -> f64 {
    CorpusStats::compute(docs, chunk_size).base_rate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(n: usize, starts: &[usize]) -> Document {
        let tokens = (0..n).map(|i| format!("t{i}")).collect();
        Document::new("d", tokens, starts.to_vec()).unwrap()
    }

    #[test]
    fn chunk_lengths_use_ceiling_division() {
        let chunks = chunk_document(&doc(250, &[]), 100);
        let lens: Vec<_> = chunks.iter().map(Chunk::len).collect();
        assert_eq!(lens, vec![100, 100, 50]);
        assert_eq!(chunks[2].token_offset, 200);
    }

    #[test]
    fn gold_start_rebased_into_its_chunk() {
        let chunks = chunk_document(&doc(250, &[120]), 100);
        assert_eq!(chunks[1].gold_starts, vec![20]);
        assert!(chunks[1].is_positive);
        assert!(!chunks[0].is_positive);
        assert!(!chunks[2].is_positive);
    }

    #[test]
    fn empty_document_has_no_chunks() {
        assert!(chunk_document(&doc(0, &[]), 10).is_empty());
    }

    #[test]
    fn document_rejects_bad_starts() {
        let tokens = vec!["a".to_string(), "b".to_string()];
        assert!(Document::new("x", tokens.clone(), vec![2]).is_err());
        assert!(Document::new("x", tokens.clone(), vec![1, 1]).is_err());
        assert!(Document::new("x", tokens.clone(), vec![1, 0]).is_err());
        assert!(Document::new("x", tokens, vec![0, 1]).is_ok());
    }

    #[test]
    fn stats_count_positive_chunks_once() {
        let d = doc(250, &[5, 7, 120]);
        let stats = CorpusStats::compute(&[d], 100);
        assert_eq!(stats.chunks, 3);
        assert_eq!(stats.positive_chunks, 2);
        assert_eq!(stats.starts, 3);
    }

    fn arb_doc() -> impl Strategy<Value = Document> {
        (0usize..300).prop_flat_map(|n| {
            let starts = proptest::collection::btree_set(0..n.max(1), 0..=n.min(12));
            (Just(n), starts).prop_map(|(n, starts)| {
                let starts = if n == 0 { vec![] } else { starts.into_iter().collect() };
                doc(n, &starts)
            })
        })
    }

    proptest! {
        #[test]
        fn chunks_round_trip(d in arb_doc(), size in 1usize..120) {
            let chunks = chunk_document(&d, size);
            let tokens: Vec<String> = chunks.iter().flat_map(|c| c.tokens.clone()).collect();
            prop_assert_eq!(&tokens, &d.tokens);
            let starts: Vec<usize> = chunks
                .iter()
                .flat_map(|c| c.gold_starts.iter().map(move |s| s + c.token_offset))
                .collect();
            prop_assert_eq!(&starts, &d.gold_starts);
            for (i, c) in chunks.iter().enumerate() {
                prop_assert_eq!(c.is_positive, !c.gold_starts.is_empty());
                prop_assert_eq!(c.token_offset, i * size);
                if i + 1 < chunks.len() {
                    prop_assert_eq!(c.len(), size);
                } else {
                    prop_assert!(c.len() >= 1);
                }
            }
            let stats = CorpusStats::compute(std::slice::from_ref(&d), size);
            prop_assert_eq!(stats.chunks, chunks.len());
            prop_assert_eq!(stats.positive_chunks, chunks.iter().filter(|c| c.is_positive).count());
        }
    }
}
