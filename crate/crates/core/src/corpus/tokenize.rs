use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};

type NormalizeFn = dyn Fn(&str) -> String + Send + Sync;

/// Per-token normalization applied after case folding.
///
/// The named variants can be selected from configuration files; `Custom`
/// wraps an arbitrary function for library users.
#[derive(Clone, Default)]
pub enum Normalizer {
    #[default]
    Identity,
    /// Removes nonspacing combining marks (Unicode category Mn), e.g. Arabic
    /// short-vowel diacritics or decomposed accents.
    StripMarks,
    Custom(Arc<NormalizeFn>),
}

impl Normalizer {
    pub fn custom(f: impl Fn(&str) -> String + Send + Sync + 'static) -> Self {
        Normalizer::Custom(Arc::new(f))
    }

    pub fn apply(&self, token: &str) -> String {
        match self {
            Normalizer::Identity => token.to_string(),
            Normalizer::StripMarks => token
                .chars()
                .filter(|&c| get_general_category(c) != GeneralCategory::NonspacingMark)
                .collect(),
            Normalizer::Custom(f) => f(token),
        }
    }
}

impl fmt::Debug for Normalizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Normalizer::Identity => f.write_str("Identity"),
            Normalizer::StripMarks => f.write_str("StripMarks"),
            Normalizer::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Serialize for Normalizer {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Normalizer::Identity => serializer.serialize_str("identity"),
            Normalizer::StripMarks => serializer.serialize_str("strip_marks"),
            Normalizer::Custom(_) => Err(serde::ser::Error::custom(
                "custom normalizers cannot be serialized",
            )),
        }
    }
}

impl<'de> Deserialize<'de> for Normalizer {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        match name.as_str() {
            "identity" => Ok(Normalizer::Identity),
            "strip_marks" => Ok(Normalizer::StripMarks),
            other => Err(serde::de::Error::unknown_variant(
                other,
                &["identity", "strip_marks"],
            )),
        }
    }
}

fn is_split_char(c: char) -> bool {
    use GeneralCategory::*;
    matches!(
        get_general_category(c),
        ConnectorPunctuation
            | DashPunctuation
            | OpenPunctuation
            | ClosePunctuation
            | InitialPunctuation
            | FinalPunctuation
            | OtherPunctuation
            | MathSymbol
            | CurrencySymbol
            | ModifierSymbol
            | OtherSymbol
    )
}

/// Case-folds `raw_text`, splits on whitespace, and emits every punctuation
/// or symbol character as its own token. The normalizer runs on each token
/// afterwards; tokens it maps to the empty string are dropped.
pub fn tokenize(raw_text: &str, normalizer: &Normalizer) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let push = |tok: &str, tokens: &mut Vec<String>| {
        let normalized = normalizer.apply(tok);
        if !normalized.is_empty() {
            tokens.push(normalized);
        }
    };
    for c in raw_text.chars() {
        if c.is_whitespace() {
            if !current.is_empty() {
                push(&current, &mut tokens);
                current.clear();
            }
        } else if is_split_char(c) {
            if !current.is_empty() {
                push(&current, &mut tokens);
                current.clear();
            }
            let folded: String = c.to_lowercase().collect();
            push(&folded, &mut tokens);
        } else {
            current.extend(c.to_lowercase());
        }
    }
    if !current.is_empty() {
        push(&current, &mut tokens);
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s, &Normalizer::Identity)
    }

    #[test]
    fn folds_case_and_splits_punctuation() {
        assert_eq!(toks("A man died."), ["a", "man", "died", "."]);
        assert_eq!(toks("U.S.A."), ["u", ".", "s", ".", "a", "."]);
        assert!(toks("").is_empty());
        assert!(toks("  \n\t ").is_empty());
    }

    #[test]
    fn symbols_are_split_too() {
        assert_eq!(toks("$5+x"), ["$", "5", "+", "x"]);
        assert_eq!(toks("«Hé»"), ["«", "hé", "»"]);
    }

    #[test]
    fn normalizer_runs_after_folding() {
        let n = Normalizer::custom(|t| t.replace('a', "4"));
        assert_eq!(tokenize("BAnana", &n), ["b4n4n4"]);
        let strip = Normalizer::StripMarks;
        // "e" followed by a combining acute accent.
        assert_eq!(tokenize("Cafe\u{301}", &strip), ["cafe"]);
        let drop_all = Normalizer::custom(|_| String::new());
        assert!(tokenize("a b", &drop_all).is_empty());
    }

    #[test]
    fn normalizer_names_round_trip() {
        let n: Normalizer = serde_json::from_str("\"strip_marks\"").unwrap();
        assert!(matches!(n, Normalizer::StripMarks));
        assert_eq!(serde_json::to_string(&Normalizer::Identity).unwrap(), "\"identity\"");
        assert!(serde_json::from_str::<Normalizer>("\"stem\"").is_err());
    }

    proptest! {
        #[test]
        fn tokenizing_joined_tokens_is_idempotent(text in "\\PC{0,60}") {
            let first = toks(&text);
            let second = toks(&first.join(" "));
            prop_assert_eq!(first, second);
        }
    }
}
