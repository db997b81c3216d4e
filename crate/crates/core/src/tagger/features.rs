use std::collections::{BTreeMap, HashMap};

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

const ABSENT: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum FeatureKind {
    Token,
    Before,
    After,
}

impl FeatureKind {
    fn name(self, word: &str) -> String {
        match self {
            FeatureKind::Token => format!("tok={word}"),
            FeatureKind::Before => format!("{word}_before"),
            FeatureKind::After => format!("{word}_after"),
        }
    }

    fn parse(name: &str) -> Option<(FeatureKind, &str)> {
        if let Some(word) = name.strip_prefix("tok=") {
            Some((FeatureKind::Token, word))
        } else if let Some(word) = name.strip_suffix("_before") {
            Some((FeatureKind::Before, word))
        } else {
            name.strip_suffix("_after").map(|w| (FeatureKind::After, w))
        }
    }
}

/// Windowed count features: `tok=<w>` for the tagged token, `<w>_before`
/// and `<w>_after` with the number of times `w` occurs within `window`
/// tokens on that side. Only features seen in training are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfFeatureSet {
    window: usize,
    names: Vec<String>,
    /// Per word: feature ids for token, before and after (`ABSENT` if unseen).
    lookup: FxHashMap<String, [u32; 3]>,
}

/// Sparse per-position features of one chunk in CSR layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChunkFeatures {
    offsets: Vec<u32>,
    entries: Vec<(u32, f64)>,
}

impl ChunkFeatures {
    pub fn len(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn position(&self, t: usize) -> &[(u32, f64)] {
        &self.entries[self.offsets[t] as usize..self.offsets[t + 1] as usize]
    }

    pub fn from_positions(positions: Vec<Vec<(u32, f64)>>) -> Self {
        let mut offsets = Vec::with_capacity(positions.len() + 1);
        let mut entries = Vec::new();
        offsets.push(0);
        for p in positions {
            entries.extend(p);
            offsets.push(entries.len() as u32);
        }
        ChunkFeatures { offsets, entries }
    }
}

impl CrfFeatureSet {
    /// Collects every feature that fires somewhere in `chunks`.
    pub fn build<'a, I>(chunks: I, window: usize) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut seen: HashMap<&'a str, [bool; 3]> = HashMap::new();
        for tokens in chunks {
            let n = tokens.len();
            for (t, tok) in tokens.iter().enumerate() {
                let flags = seen.entry(tok.as_str()).or_default();
                flags[0] = true;
                // `tok` is inside the before-window of positions t+1..=t+window
                // and the after-window of positions t-window..t.
                if window > 0 && t + 1 < n {
                    flags[1] = true;
                }
                if window > 0 && t > 0 {
                    flags[2] = true;
                }
            }
        }
        let kinds = [FeatureKind::Token, FeatureKind::Before, FeatureKind::After];
        let mut features: Vec<(String, FeatureKind, &str)> = seen
            .iter()
            .flat_map(|(word, flags)| {
                kinds
                    .iter()
                    .zip(flags)
                    .filter(|(_, &on)| on)
                    .map(|(&kind, _)| (kind.name(word), kind, *word))
            })
            .collect();
        features.sort();

        let mut lookup: FxHashMap<String, [u32; 3]> = FxHashMap::with_capacity_and_hasher(seen.len(), Default::default());
        let mut names = Vec::with_capacity(features.len());
        for (i, (name, kind, word)) in features.into_iter().enumerate() {
            lookup.entry(word.to_string()).or_insert([ABSENT; 3])[kind as usize] = i as u32;
            names.push(name);
        }
        CrfFeatureSet { window, names, lookup }
    }

    fn from_names(window: usize, names: Vec<String>) -> Result<Self, String> {
        let mut lookup: FxHashMap<String, [u32; 3]> = FxHashMap::with_capacity_and_hasher(names.len(), Default::default());
        for (i, name) in names.iter().enumerate() {
            let (kind, word) = FeatureKind::parse(name).ok_or_else(|| format!("unrecognized feature name {name:?}"))?;
            let slot = &mut lookup.entry(word.to_string()).or_insert([ABSENT; 3])[kind as usize];
            if *slot != ABSENT {
                return Err(format!("duplicate feature {name:?}"));
            }
            *slot = i as u32;
        }
        Ok(CrfFeatureSet { window, names, lookup })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        let (kind, word) = FeatureKind::parse(name)?;
        let id = self.lookup.get(word)?[kind as usize];
        (id != ABSENT).then_some(id as usize)
    }

    /// Extracts features for every position of `tokens`. Windows are cut at
    /// the chunk boundaries and unknown features are dropped.
    pub fn extract(&self, tokens: &[String]) -> ChunkFeatures {
        let ids: Vec<[u32; 3]> = tokens
            .iter()
            .map(|t| self.lookup.get(t.as_str()).copied().unwrap_or([ABSENT; 3]))
            .collect();
        let n = ids.len();
        let k = self.window;
        let mut offsets = Vec::with_capacity(n + 1);
        let mut entries = Vec::with_capacity(n * (2 * k + 1));
        let mut scratch: Vec<u32> = Vec::with_capacity(2 * k + 1);
        offsets.push(0);
        for t in 0..n {
            scratch.clear();
            if ids[t][0] != ABSENT {
                scratch.push(ids[t][0]);
            }
            for w in &ids[t.saturating_sub(k)..t] {
                if w[1] != ABSENT {
                    scratch.push(w[1]);
                }
            }
            for w in &ids[(t + 1).min(n)..(t + 1 + k).min(n)] {
                if w[2] != ABSENT {
                    scratch.push(w[2]);
                }
            }
            scratch.sort_unstable();
            let begin = offsets[t] as usize;
            for &id in &scratch {
                match entries[begin..].last_mut() {
                    Some((last, count)) if *last == id => *count += 1.0,
                    _ => entries.push((id, 1.0)),
                }
            }
            offsets.push(entries.len() as u32);
        }
        ChunkFeatures { offsets, entries }
    }

    /// Named view of the features at one position, for inspection and tests.
    pub fn describe(&self, features: &ChunkFeatures, t: usize) -> BTreeMap<String, f64> {
        features
            .position(t)
            .iter()
            .map(|&(id, v)| (self.names[id as usize].clone(), v))
            .collect()
    }
}

impl Serialize for CrfFeatureSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            window: usize,
            vocabulary: BTreeMap<&'a str, usize>,
        }
        Repr {
            window: self.window,
            vocabulary: self.names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CrfFeatureSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            window: usize,
            vocabulary: BTreeMap<String, usize>,
        }
        let repr = Repr::deserialize(deserializer)?;
        let mut names = vec![None; repr.vocabulary.len()];
        for (name, i) in repr.vocabulary {
            match names.get_mut(i) {
                Some(slot @ None) => *slot = Some(name),
                _ => return Err(serde::de::Error::custom(format!("bad feature index {i}"))),
            }
        }
        let names = names.into_iter().map(Option::unwrap).collect();
        CrfFeatureSet::from_names(repr.window, names).map_err(serde::de::Error::custom)
    }
}
