//! Synthetic corpora with a controllable chunk-level base rate.
//!
//! Background text is a Zipf-distributed stream over `w0, w1, ...`. An event
//! opens with a run of `cue_span` tokens, each drawn with probability
//! `cue_strength` from the cue vocabulary `c0, c1, ...` as consecutive ids
//! (`c3 c4`). The remaining event tokens come from the body vocabulary
//! `b0, b1, ...` with probability `cue_strength * body_strength`, otherwise
//! from the background.
//!
//! Decoys are event openings cut short, with no gold start. A fraction
//! `decoy_doc_fraction` of documents is on a related topic; inside those, a
//! decoy begins at each background position with probability `decoy_rate`
//! and consists of the first `m` tokens of a fresh event, `m` uniform on
//! `1..=decoy_length`. Anywhere in the corpus, a near-miss of
//! `near_miss_length` event tokens begins with probability `near_miss_rate`.
//! Near-misses long enough to cover a tagger's context window look exactly
//! like events locally, but carry much less body text than a real event.

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Zipf};
use serde::{Deserialize, Serialize};

use super::{CorpusStats, Document};
use crate::error::{Error, Result};

/// Maximum relative deviation of the realized base rate from the target.
const RATE_TOLERANCE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthDist {
    pub mean: f64,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticParams {
    pub n_docs: usize,
    /// Document length in tokens, normally distributed and clamped to at least one token.
    pub doc_length: LengthDist,
    /// Target fraction of chunks at `reference_chunk_size` that contain a start.
    pub event_rate: f64,
    pub background_vocab_size: usize,
    pub cue_vocab_size: usize,
    pub cue_strength: f64,
    /// Mean event length in tokens; lengths are uniform on `[L - L/2, L + L/2]`.
    pub event_length: usize,
    pub reference_chunk_size: usize,
    pub seed: u64,
    /// Number of leading event tokens eligible to be cue tokens.
    #[serde(default = "default_cue_span")]
    pub cue_span: usize,
    #[serde(default = "default_body_vocab_size")]
    pub body_vocab_size: usize,
    /// Probability, relative to `cue_strength`, that an event token after the
    /// cue run is a body token.
    #[serde(default = "default_body_strength")]
    pub body_strength: f64,
    /// Fraction of chunks that carry a start inside documents selected to hold
    /// events. Low values spread events over many documents.
    #[serde(default = "default_event_doc_density")]
    pub event_doc_density: f64,
    /// Per-token probability that a decoy begins in background text.
    #[serde(default)]
    pub decoy_rate: f64,
    /// Maximum decoy length in tokens.
    #[serde(default = "default_decoy_length")]
    pub decoy_length: usize,
    /// Share of documents in which decoys occur.
    #[serde(default = "default_decoy_doc_fraction")]
    pub decoy_doc_fraction: f64,
    /// Per-token probability that a near-miss begins in background text.
    #[serde(default)]
    pub near_miss_rate: f64,
    #[serde(default = "default_near_miss_length")]
    pub near_miss_length: usize,
    #[serde(default = "default_zipf_exponent")]
    pub zipf_exponent: f64,
}

fn default_cue_span() -> usize {
    2
}

fn default_body_vocab_size() -> usize {
    8
}

fn default_body_strength() -> f64 {
    1.0
}

fn default_event_doc_density() -> f64 {
    0.4
}

fn default_decoy_length() -> usize {
    4
}

fn default_decoy_doc_fraction() -> f64 {
    1.0
}

fn default_near_miss_length() -> usize {
    7
}

fn default_zipf_exponent() -> f64 {
    1.0
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            n_docs: 2000,
            doc_length: LengthDist {
                mean: 150.0,
                spread: 30.0,
            },
            event_rate: 0.01,
            background_vocab_size: 2000,
            cue_vocab_size: 3,
            cue_strength: 0.95,
            event_length: 12,
            reference_chunk_size: 100,
            seed: 0,
            cue_span: default_cue_span(),
            body_vocab_size: default_body_vocab_size(),
            body_strength: default_body_strength(),
            event_doc_density: default_event_doc_density(),
            decoy_rate: 0.03,
            decoy_length: default_decoy_length(),
            decoy_doc_fraction: 0.1,
            near_miss_rate: 5e-5,
            near_miss_length: default_near_miss_length(),
            zipf_exponent: default_zipf_exponent(),
        }
    }
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidParams(msg));
        if self.n_docs == 0 {
            return fail("n_docs must be positive".into());
        }
        if !(self.doc_length.mean.is_finite() && self.doc_length.mean >= 1.0) {
            return fail(format!("doc_length.mean must be >= 1, got {}", self.doc_length.mean));
        }
        if !(self.doc_length.spread.is_finite() && self.doc_length.spread >= 0.0) {
            return fail(format!("doc_length.spread must be >= 0, got {}", self.doc_length.spread));
        }
        if !(self.event_rate > 0.0 && self.event_rate < 1.0) {
            return fail(format!("event_rate must be in (0, 1), got {}", self.event_rate));
        }
        if !(0.0..=1.0).contains(&self.cue_strength) {
            return fail(format!("cue_strength must be in [0, 1], got {}", self.cue_strength));
        }
        if self.event_length == 0 {
            return fail("event_length must be positive".into());
        }
        if self.event_length as f64 >= self.doc_length.mean {
            return fail(format!(
                "event_length ({}) must be shorter than the mean document length ({})",
                self.event_length, self.doc_length.mean
            ));
        }
        if self.background_vocab_size == 0 || self.cue_vocab_size == 0 || self.body_vocab_size == 0 {
            return fail("vocabulary sizes must be positive".into());
        }
        if self.reference_chunk_size == 0 {
            return fail("reference_chunk_size must be positive".into());
        }
        if self.cue_span == 0 || self.decoy_length == 0 || self.near_miss_length == 0 {
            return fail("cue_span, decoy_length and near_miss_length must be positive".into());
        }
        if !(self.event_doc_density > 0.0 && self.event_doc_density <= 1.0) {
            return fail(format!(
                "event_doc_density must be in (0, 1], got {}",
                self.event_doc_density
            ));
        }
        if !(0.0..=1.0).contains(&self.body_strength) {
            return fail(format!("body_strength must be in [0, 1], got {}", self.body_strength));
        }
        if !(0.0..1.0).contains(&self.decoy_rate) {
            return fail(format!("decoy_rate must be in [0, 1), got {}", self.decoy_rate));
        }
        if !(0.0..1.0).contains(&self.near_miss_rate) {
            return fail(format!("near_miss_rate must be in [0, 1), got {}", self.near_miss_rate));
        }
        if !(0.0..=1.0).contains(&self.decoy_doc_fraction) {
            return fail(format!(
                "decoy_doc_fraction must be in [0, 1], got {}",
                self.decoy_doc_fraction
            ));
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0) {
            return fail(format!("zipf_exponent must be >= 0, got {}", self.zipf_exponent));
        }
        Ok(())
    }

    fn event_length_range(&self) -> (usize, usize) {
        let half = self.event_length / 2;
        (self.event_length - half, self.event_length + half)
    }
}

#[derive(Debug, Clone, Copy)]
struct Event {
    start: usize,
    len: usize,
}

/// Generates a corpus whose realized positive-chunk rate at
/// `reference_chunk_size` is within 20% (relative) of `event_rate`.
/// Output is a pure function of `params`.
pub fn generate_synthetic_corpus(params: &SyntheticParams) -> Result<Vec<Document>> {
    params.validate()?;
    let mut layout_rng = ChaCha8Rng::seed_from_u64(params.seed);

    let length_dist = Normal::new(params.doc_length.mean, params.doc_length.spread)
        .map_err(|e| Error::InvalidParams(e.to_string()))?;
    let lengths: Vec<usize> = (0..params.n_docs)
        .map(|_| length_dist.sample(&mut layout_rng).round().max(1.0) as usize)
        .collect();

    let events = place_events(params, &lengths, &mut layout_rng);

    let background = Zipf::new(params.background_vocab_size as u64, params.zipf_exponent)
        .map_err(|e| Error::InvalidParams(e.to_string()))?;
    let docs: Vec<Document> = lengths
        .iter()
        .zip(&events)
        .enumerate()
        .map(|(i, (&len, doc_events))| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(i as u64 + 1);
            fill_document(params, i, len, doc_events, &background, &mut rng)
        })
        .collect();

    let rate = CorpusStats::compute(&docs, params.reference_chunk_size).base_rate();
    if (rate - params.event_rate).abs() > RATE_TOLERANCE * params.event_rate {
        return Err(Error::InvalidParams(format!(
            "realized base rate {rate:.4} misses the target {} by more than {:.0}%; \
             documents are too short or too few to hold the requested events",
            params.event_rate,
            RATE_TOLERANCE * 100.0
        )));
    }
    Ok(docs)
}

/// Chooses event positions so the number of positive reference chunks hits
/// `round(event_rate * total_chunks)`, walking documents in random order and
/// giving each selected document `event_doc_density` of its chunks.
fn place_events(params: &SyntheticParams, lengths: &[usize], rng: &mut ChaCha8Rng) -> Vec<Vec<Event>> {
    let chunk = params.reference_chunk_size;
    let total_chunks: usize = lengths.iter().map(|l| l.div_ceil(chunk)).sum();
    let target = (params.event_rate * total_chunks as f64).round() as usize;
    let density = params.event_doc_density.max(params.event_rate);
    let (min_len, max_len) = params.event_length_range();

    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);

    let mut events = vec![Vec::new(); lengths.len()];
    let mut placed = 0;
    for doc in order {
        if placed >= target {
            break;
        }
        let len = lengths[doc];
        let n_chunks = len.div_ceil(chunk);
        let wanted = ((density * n_chunks as f64).round() as usize)
            .clamp(1, n_chunks)
            .min(target - placed);
        let mut slots = index::sample(rng, n_chunks, wanted).into_vec();
        slots.sort_unstable();

        let mut prev_end = 0;
        for slot in slots {
            let ev_len = rng.gen_range(min_len..=max_len);
            if ev_len > len {
                continue;
            }
            let lo = (slot * chunk).max(prev_end);
            let hi = ((slot + 1) * chunk - 1).min(len - ev_len);
            if lo > hi {
                continue;
            }
            let start = rng.gen_range(lo..=hi);
            events[doc].push(Event { start, len: ev_len });
            prev_end = start + ev_len;
            placed += 1;
        }
    }
    events
}

/// Pushes the first `len` tokens of a fresh event onto `tokens`.
fn event_tokens(
    params: &SyntheticParams,
    len: usize,
    tokens: &mut Vec<String>,
    background: &Zipf<f64>,
    rng: &mut ChaCha8Rng,
) {
    let phrase = rng.gen_range(0..params.cue_vocab_size);
    let body_p = params.cue_strength * params.body_strength;
    for i in 0..len {
        let tok = if i < params.cue_span {
            if rng.gen_bool(params.cue_strength) {
                format!("c{}", (phrase + i) % params.cue_vocab_size)
            } else {
                background_token(background, rng)
            }
        } else if rng.gen_bool(body_p) {
            format!("b{}", rng.gen_range(0..params.body_vocab_size))
        } else {
            background_token(background, rng)
        };
        tokens.push(tok);
    }
}

fn background_token(background: &Zipf<f64>, rng: &mut ChaCha8Rng) -> String {
    format!("w{}", background.sample(rng) as u64 - 1)
}

fn fill_document(
    params: &SyntheticParams,
    index: usize,
    len: usize,
    events: &[Event],
    background: &Zipf<f64>,
    rng: &mut ChaCha8Rng,
) -> Document {
    let mut tokens = Vec::with_capacity(len);
    let mut next_event = events.iter().peekable();
    let decoy_rate = if rng.gen_bool(params.decoy_doc_fraction) {
        params.decoy_rate
    } else {
        0.0
    };
    while tokens.len() < len {
        let t = tokens.len();
        if let Some(ev) = next_event.peek().copied() {
            if t == ev.start {
                event_tokens(params, ev.len, &mut tokens, background, rng);
                next_event.next();
                continue;
            }
        }
        let limit = next_event.peek().map_or(len, |ev| ev.start);
        if decoy_rate > 0.0 && rng.gen_bool(decoy_rate) {
            let m = rng.gen_range(1..=params.decoy_length).min(limit - t);
            event_tokens(params, m, &mut tokens, background, rng);
        } else if params.near_miss_rate > 0.0 && rng.gen_bool(params.near_miss_rate) {
            let m = params.near_miss_length.min(limit - t);
            event_tokens(params, m, &mut tokens, background, rng);
        } else {
            tokens.push(background_token(background, rng));
        }
    }

    Document {
        id: format!("doc{index:05}"),
        tokens,
        gold_starts: events.iter().map(|e| e.start).collect(),
    }
}

/// Removes uniformly sampled documents without starts until the
/// positive-chunk rate at `chunk_size` reaches `target_base_rate`.
///
/// Documents are removed one at a time and removal stops at the first point
/// where the rate reaches the target, so the overshoot is bounded by one
/// document's chunks. Retained documents keep their original order.
pub fn downsample_negatives(
    corpus: &[Document],
    target_base_rate: f64,
    chunk_size: usize,
    seed: u64,
) -> Result<Vec<Document>> {
    if chunk_size == 0 {
        return Err(Error::InvalidParams("chunk_size must be positive".into()));
    }
    if !(target_base_rate > 0.0 && target_base_rate < 1.0) {
        return Err(Error::InvalidParams(format!(
            "target base rate must be in (0, 1), got {target_base_rate}"
        )));
    }
    let stats = CorpusStats::compute(corpus, chunk_size);
    let current = stats.base_rate();
    const EPS: f64 = 1e-12;
    if target_base_rate <= current + EPS {
        if target_base_rate < current - EPS {
            return Err(Error::InvalidParams(format!(
                "target base rate {target_base_rate} is below the current rate {current}; \
                 removing negative documents can only raise it"
            )));
        }
        return Ok(corpus.to_vec());
    }

    let mut negatives: Vec<usize> = corpus
        .iter()
        .enumerate()
        .filter(|(_, d)| !d.has_starts() && d.chunk_count(chunk_size) > 0)
        .map(|(i, _)| i)
        .collect();
    let negative_chunks: usize = negatives.iter().map(|&i| corpus[i].chunk_count(chunk_size)).sum();
    let remaining = stats.chunks - negative_chunks;
    let max_achievable = if remaining == 0 {
        0.0
    } else {
        stats.positive_chunks as f64 / remaining as f64
    };
    if max_achievable + EPS < target_base_rate {
        return Err(Error::UnreachableBaseRate {
            target: target_base_rate,
            max_achievable,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    negatives.shuffle(&mut rng);
    let mut removed = vec![false; corpus.len()];
    let mut chunks = stats.chunks;
    for i in negatives {
        if stats.positive_chunks as f64 / chunks as f64 >= target_base_rate - EPS {
            break;
        }
        removed[i] = true;
        chunks -= corpus[i].chunk_count(chunk_size);
    }
    Ok(corpus
        .iter()
        .zip(removed)
        .filter(|(_, r)| !r)
        .map(|(d, _)| d.clone())
        .collect())
}
