use std::collections::{BTreeMap, HashMap, HashSet};

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

/// N-gram key over interned token ids; unused slots hold `EMPTY`.
type NgramKey = [u32; 3];
const EMPTY: u32 = u32::MAX;

pub const MAX_NGRAM_ORDER: usize = 3;

/// Sparse vector as `(feature index, value)` pairs sorted by index.
pub type SparseVector = Vec<(u32, f64)>;

/// N-grams of orders `1..=order` kept for featurization, indexed in
/// lexicographic order of their space-joined text.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramVocabulary {
    order: usize,
    terms: Vec<String>,
    token_ids: FxHashMap<String, u32>,
    index: FxHashMap<NgramKey, u32>,
    /// Unigram feature index per token id (`EMPTY` if the unigram was pruned).
    unigrams: Vec<u32>,
}

/// Result of scanning a training set: the vocabulary and the chunk frequency
/// of each of its n-grams.
#[derive(Debug, Clone)]
pub struct VocabularyBuild {
    pub vocabulary: NgramVocabulary,
    pub idf: IdfTable,
}

fn for_each_ngram(ids: &[Option<u32>], orders: std::ops::RangeInclusive<usize>, mut f: impl FnMut(NgramKey)) {
    for n in orders {
        if ids.len() < n {
            break;
        }
        'outer: for window in ids.windows(n) {
            let mut key = [EMPTY; 3];
            for (slot, id) in key.iter_mut().zip(window) {
                match id {
                    Some(id) => *slot = *id,
                    None => continue 'outer,
                }
            }
            f(key);
        }
    }
}

impl NgramVocabulary {
    /// Collects every n-gram of orders `1..=order` that occurs in at least
    /// `min_df` of the given token sequences.
    pub fn build<'a, I>(chunks: I, order: usize, min_df: usize) -> VocabularyBuild
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        assert!((1..=MAX_NGRAM_ORDER).contains(&order), "n-gram order must be 1..=3");
        let mut all_tokens: HashMap<String, u32> = HashMap::new();
        let mut df: HashMap<NgramKey, u32> = HashMap::new();
        let mut seen = HashSet::new();
        let mut n_chunks = 0;
        for tokens in chunks {
            n_chunks += 1;
            let ids: Vec<Option<u32>> = tokens
                .iter()
                .map(|t| match all_tokens.get(t.as_str()) {
                    Some(&id) => Some(id),
                    None => {
                        let id = all_tokens.len() as u32;
                        all_tokens.insert(t.clone(), id);
                        Some(id)
                    }
                })
                .collect();
            seen.clear();
            for_each_ngram(&ids, 1..=order, |key| {
                seen.insert(key);
            });
            for key in &seen {
                *df.entry(*key).or_insert(0) += 1;
            }
        }

        let mut names: Vec<&str> = vec![""; all_tokens.len()];
        for (tok, &id) in &all_tokens {
            names[id as usize] = tok;
        }
        let mut kept: Vec<(String, u32)> = df
            .into_iter()
            .filter(|&(_, count)| count as usize >= min_df.max(1))
            .map(|(key, count)| {
                let text = key
                    .iter()
                    .take_while(|&&id| id != EMPTY)
                    .map(|&id| names[id as usize])
                    .collect::<Vec<_>>()
                    .join(" ");
                (text, count)
            })
            .collect();
        kept.sort_unstable();

        let (terms, df): (Vec<String>, Vec<u32>) = kept.into_iter().unzip();
        VocabularyBuild {
            vocabulary: NgramVocabulary::from_terms(order, terms),
            idf: IdfTable { n_chunks, df },
        }
    }

    /// Rebuilds the lookup tables from terms listed in index order.
    pub fn from_terms(order: usize, terms: Vec<String>) -> Self {
        let mut token_ids = FxHashMap::default();
        let mut index = FxHashMap::with_capacity_and_hasher(terms.len(), Default::default());
        for (i, term) in terms.iter().enumerate() {
            let mut key = [EMPTY; 3];
            for (slot, tok) in key.iter_mut().zip(term.split(' ')) {
                let next = token_ids.len() as u32;
                *slot = *token_ids.entry(tok.to_string()).or_insert(next);
            }
            index.insert(key, i as u32);
        }
        let mut unigrams = vec![EMPTY; token_ids.len()];
        for (key, &i) in &index {
            if key[1] == EMPTY {
                unigrams[key[0] as usize] = i;
            }
        }
        NgramVocabulary {
            order,
            terms,
            token_ids,
            index,
            unigrams,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn get(&self, ngram: &str) -> Option<usize> {
        let mut key = [EMPTY; 3];
        let mut parts = ngram.split(' ');
        for slot in key.iter_mut() {
            match parts.next() {
                Some(tok) => *slot = *self.token_ids.get(tok)?,
                None => break,
            }
        }
        if parts.next().is_some() {
            return None;
        }
        self.index.get(&key).map(|&i| i as usize)
    }

    /// Raw n-gram counts of orders `1..=order` (capped at the vocabulary's
    /// order); n-grams outside the vocabulary are dropped.
    pub fn counts(&self, tokens: &[String], order: usize) -> SparseVector {
        let ids: Vec<Option<u32>> = tokens.iter().map(|t| self.token_ids.get(t.as_str()).copied()).collect();
        let mut hits: Vec<u32> = ids
            .iter()
            .flatten()
            .map(|&id| self.unigrams[id as usize])
            .filter(|&i| i != EMPTY)
            .collect();
        for_each_ngram(&ids, 2..=order.min(self.order), |key| {
            if let Some(&i) = self.index.get(&key) {
                hits.push(i);
            }
        });
        hits.sort_unstable();
        let mut out: SparseVector = Vec::with_capacity(hits.len());
        for i in hits {
            match out.last_mut() {
                Some((last, count)) if *last == i => *count += 1.0,
                _ => out.push((i, 1.0)),
            }
        }
        out
    }
}

impl Serialize for NgramVocabulary {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            order: usize,
            terms: BTreeMap<&'a str, usize>,
        }
        Repr {
            order: self.order,
            terms: self.terms.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for NgramVocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            order: usize,
            terms: BTreeMap<String, usize>,
        }
        let repr = Repr::deserialize(deserializer)?;
        let mut terms = vec![None; repr.terms.len()];
        for (term, i) in repr.terms {
            let slot = terms
                .get_mut(i)
                .ok_or_else(|| serde::de::Error::custom(format!("feature index {i} out of range")))?;
            if slot.replace(term).is_some() {
                return Err(serde::de::Error::custom(format!("duplicate feature index {i}")));
            }
        }
        let terms = terms.into_iter().map(Option::unwrap).collect();
        Ok(NgramVocabulary::from_terms(repr.order, terms))
    }
}

/// Chunk frequencies of vocabulary n-grams, aligned with the vocabulary's
/// feature indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfTable {
    pub n_chunks: usize,
    pub df: Vec<u32>,
}

impl IdfTable {
    /// Smoothed inverse document frequency `ln((1 + N) / (1 + df)) + 1`.
    pub fn idf(&self, feature: usize) -> f64 {
        smoothed_idf(self.n_chunks, self.df[feature] as usize)
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.df.len()).map(|i| self.idf(i)).collect()
    }
}

pub fn smoothed_idf(n_chunks: usize, df: usize) -> f64 {
    ((1.0 + n_chunks as f64) / (1.0 + df as f64)).ln() + 1.0
}

/// Multiplies counts by their idf weight and scales the result to unit L2
/// norm. A vector with no entries stays empty.
pub fn apply_tfidf(counts: &mut SparseVector, idf_weights: &[f64]) {
    for (i, v) in counts.iter_mut() {
        *v *= idf_weights[*i as usize];
    }
    let norm = counts.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        counts.iter_mut().for_each(|(_, v)| *v /= norm);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(tokens: &[&str]) -> Vec<String> {
        tokens.iter().map(|t| t.to_string()).collect()
    }

    fn named(vocab: &NgramVocabulary, v: &SparseVector) -> BTreeMap<String, f64> {
        v.iter().map(|&(i, x)| (vocab.terms()[i as usize].clone(), x)).collect()
    }

    #[test]
    fn counts_unigrams_and_bigrams() {
        let chunk = s(&["a", "b", "a"]);
        let build = NgramVocabulary::build([chunk.as_slice()], 2, 1);
        let v = build.vocabulary.counts(&chunk, 2);
        let expected: BTreeMap<String, f64> =
            [("a", 2.0), ("b", 1.0), ("a b", 1.0), ("b a", 1.0)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect();
        assert_eq!(named(&build.vocabulary, &v), expected);
    }

    #[test]
    fn out_of_vocabulary_ngrams_are_dropped() {
        let vocab = NgramVocabulary::from_terms(2, s(&["a", "a b", "b"]));
        let v = vocab.counts(&s(&["a", "b", "a"]), 2);
        assert!(vocab.get("b a").is_none());
        assert_eq!(v.len(), 3);
        assert!(named(&vocab, &v).get("b a").is_none());
        // Unknown tokens break n-grams rather than being skipped over.
        let v = vocab.counts(&s(&["a", "zzz", "b"]), 2);
        assert_eq!(named(&vocab, &v).len(), 2);
    }

    #[test]
    fn min_df_prunes_rare_ngrams() {
        let c1 = s(&["x", "y"]);
        let c2 = s(&["x", "z"]);
        let build = NgramVocabulary::build([c1.as_slice(), c2.as_slice()], 2, 2);
        assert_eq!(build.vocabulary.terms(), ["x"]);
        assert_eq!(build.idf.df, vec![2]);
        assert_eq!(build.idf.n_chunks, 2);
    }

    #[test]
    fn idf_of_ubiquitous_term_is_one() {
        assert_eq!(smoothed_idf(10, 10), 1.0);
        let table = IdfTable { n_chunks: 10, df: vec![10, 1] };
        let mut v: SparseVector = vec![(0, 2.0)];
        let weights = table.weights();
        assert_eq!(v[0].1 * weights[0], 2.0);
        apply_tfidf(&mut v, &weights);
        assert!((v[0].1 - 1.0).abs() < 1e-12);
        assert!(weights[1] > 1.0);
    }

    #[test]
    fn tfidf_vectors_have_unit_norm() {
        let chunk = s(&["a", "b", "c", "a", "b", "d"]);
        let build = NgramVocabulary::build([chunk.as_slice(), &chunk[..3]], 3, 1);
        let mut v = build.vocabulary.counts(&chunk, 3);
        apply_tfidf(&mut v, &build.idf.weights());
        let norm: f64 = v.iter().map(|(_, x)| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-9);
        let mut empty = build.vocabulary.counts(&s(&["q"]), 3);
        apply_tfidf(&mut empty, &build.idf.weights());
        assert!(empty.is_empty());
    }

    #[test]
    fn vocabulary_serializes_as_term_index_map() {
        let c = s(&["b", "a", "b"]);
        let build = NgramVocabulary::build([c.as_slice()], 2, 1);
        let json = serde_json::to_string(&build.vocabulary).unwrap();
        assert_eq!(json, r#"{"order":2,"terms":{"a":0,"a b":1,"b":2,"b a":3}}"#);
        let back: NgramVocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back.counts(&c, 2), build.vocabulary.counts(&c, 2));
    }
}
