//! Prompt difficulty metrics: word and syllable statistics, Flesch-Kincaid
//! grade level, Yngve depth and language-model perplexity.
//!
//! Words are whitespace-separated tokens with leading and trailing
//! punctuation removed; tokens that are pure punctuation are not words.

mod parser;
mod tree;

pub use parser::ExternalParser;
pub use tree::{fallback_tree, parse_bracketed_tree, yngve_score, ConstituencyTree, FALLBACK_LABEL};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError};

/// Conditioning context for perplexity; bare prompts score implausibly high.
pub const PERPLEXITY_PREFIX: &str = "There's an image of a";

#[derive(Debug, Error)]
pub enum LingError {
    #[error("malformed tree: {0}")]
    MalformedTree(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("external parser: {0}")]
    Parser(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

fn strip_word(token: &str) -> &str {
    token.trim_matches(|c: char| !c.is_alphanumeric())
}

/// Words of `text` after punctuation stripping.
pub fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(strip_word).filter(|w| !w.is_empty()).map(str::to_string).collect()
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y')
}

/// Syllable count and whether the word fell outside the heuristic.
///
/// Vowel groups over `aeiouy`; a final silent `e` after a consonant is
/// dropped unless the word ends in consonant + `le` or it would leave no
/// syllable; a final `ea` that follows another vowel group counts twice
/// (`idea`, `area`). Apostrophes are ignored. Anything else non-alphabetic
/// counts as one syllable and is flagged.
pub fn syllables_checked(word: &str) -> (usize, bool) {
    let w: String = strip_word(word).chars().filter(|c| *c != '\'' && *c != '\u{2019}').flat_map(char::to_lowercase).collect();
    if w.is_empty() || !w.chars().all(|c| c.is_ascii_alphabetic()) {
        return (1, true);
    }
    let chars: Vec<char> = w.chars().collect();
    let mut groups = 0;
    let mut prev_vowel = false;
    for &c in &chars {
        let v = is_vowel(c);
        if v && !prev_vowel {
            groups += 1;
        }
        prev_vowel = v;
    }
    let n = chars.len();
    let mut count = groups;
    if n >= 2 && chars[n - 1] == 'e' && !is_vowel(chars[n - 2]) && count > 1 {
        let consonant_le = chars[n - 2] == 'l' && n >= 3 && !is_vowel(chars[n - 3]);
        if !consonant_le {
            count -= 1;
        }
    }
    if w.ends_with("ea") && groups >= 2 {
        count += 1;
    }
    (count.max(1), false)
}

pub fn count_syllables(word: &str) -> usize {
    let (n, flagged) = syllables_checked(word);
    if flagged {
        log::warn!("{word:?} is not alphabetic, counted as one syllable");
    }
    n
}

/// Sentences end at tokens whose last non-closing character is `.`, `!` or
/// `?`; unterminated trailing text is one more sentence. At least one.
pub fn sentence_count(text: &str) -> usize {
    let mut count = 0;
    let mut open = false;
    for tok in text.split_whitespace() {
        if tok.chars().any(char::is_alphanumeric) {
            open = true;
        }
        let end = tok.trim_end_matches(['"', '\'', ')', ']', '\u{201d}']);
        if open && end.ends_with(['.', '!', '?']) {
            count += 1;
            open = false;
        }
    }
    (count + open as usize).max(1)
}

pub fn flesch_kincaid_parts(words: usize, sentences: usize, syllables: usize) -> f64 {
    0.39 * (words as f64 / sentences as f64) + 11.8 * (syllables as f64 / words as f64) - 15.59
}

pub fn flesch_kincaid(text: &str) -> Result<f64, LingError> {
    let ws = words(text);
    if ws.is_empty() {
        return Err(LingError::InvalidArgument("text has no words".into()));
    }
    let syl: usize = ws.iter().map(|w| count_syllables(w)).sum();
    Ok(flesch_kincaid_parts(ws.len(), sentence_count(text), syl))
}

/// exp(−mean token log-probability) of `text` after [`PERPLEXITY_PREFIX`].
pub fn perplexity(gateway: &Gateway, text: &str) -> Result<f64, LingError> {
    if text.trim().is_empty() {
        return Err(LingError::InvalidArgument("text is empty".into()));
    }
    Ok(gateway.token_logprobs_sum(PERPLEXITY_PREFIX, &format!(" {}", text.trim()))?.perplexity())
}

/// Where a profile's Yngve score came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YngveSource {
    Parser,
    /// Right-branching placeholder tree; only an approximation.
    Fallback,
}

/// Syntax input for [`difficulty_profile`].
#[derive(Debug, Clone, Copy)]
pub enum Syntax<'a> {
    None,
    Parsed(&'a ConstituencyTree),
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyProfile {
    pub word_count: usize,
    pub syllable_count: usize,
    pub char_count: usize,
    pub avg_syllables_per_word: f64,
    pub avg_word_length: f64,
    pub flesch_kincaid: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yngve: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yngve_source: Option<YngveSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perplexity: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Numeric columns of a profile, for correlation tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    WordCount,
    SyllableCount,
    AvgSyllablesPerWord,
    AvgWordLength,
    FleschKincaid,
    Yngve,
    Perplexity,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::WordCount,
        Metric::SyllableCount,
        Metric::AvgSyllablesPerWord,
        Metric::AvgWordLength,
        Metric::FleschKincaid,
        Metric::Yngve,
        Metric::Perplexity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::WordCount => "word-count",
            Metric::SyllableCount => "syllable-count",
            Metric::AvgSyllablesPerWord => "avg-syllables-per-word",
            Metric::AvgWordLength => "avg-word-length",
            Metric::FleschKincaid => "flesch-kincaid",
            Metric::Yngve => "yngve",
            Metric::Perplexity => "perplexity",
        }
    }
}

impl DifficultyProfile {
    pub fn metric(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::WordCount => Some(self.word_count as f64),
            Metric::SyllableCount => Some(self.syllable_count as f64),
            Metric::AvgSyllablesPerWord => Some(self.avg_syllables_per_word),
            Metric::AvgWordLength => Some(self.avg_word_length),
            Metric::FleschKincaid => Some(self.flesch_kincaid),
            Metric::Yngve => self.yngve,
            Metric::Perplexity => self.perplexity,
        }
    }
}

/// All metrics available for `text`. Perplexity failures leave the field
/// empty and add a warning instead of failing the profile.
pub fn difficulty_profile(text: &str, syntax: Syntax<'_>, lm: Option<&Gateway>) -> Result<DifficultyProfile, LingError> {
    let ws = words(text);
    if ws.is_empty() {
        return Err(LingError::InvalidArgument("text has no words".into()));
    }
    let mut warnings = Vec::new();
    let mut syllable_count = 0;
    for w in &ws {
        let (n, flagged) = syllables_checked(w);
        if flagged {
            warnings.push(format!("non-alphabetic word {w:?} counted as one syllable"));
        }
        syllable_count += n;
    }
    let char_count: usize = ws.iter().map(|w| w.chars().count()).sum();
    let word_count = ws.len();
    let (yngve, yngve_source) = match syntax {
        Syntax::None => (None, None),
        Syntax::Parsed(t) => (Some(yngve_score(t)), Some(YngveSource::Parser)),
        Syntax::Fallback => (Some(yngve_score(&fallback_tree(&ws)?)), Some(YngveSource::Fallback)),
    };
    let perplexity = match lm {
        None => None,
        Some(gw) => match perplexity(gw, text) {
            Ok(p) => Some(p),
            Err(e) => {
                warnings.push(format!("perplexity unavailable: {e}"));
                None
            }
        },
    };
    Ok(DifficultyProfile {
        word_count,
        syllable_count,
        char_count,
        avg_syllables_per_word: syllable_count as f64 / word_count as f64,
        avg_word_length: char_count as f64 / word_count as f64,
        flesch_kincaid: flesch_kincaid_parts(word_count, sentence_count(text), syllable_count),
        yngve,
        yngve_source,
        perplexity,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn syllable_examples() {
        assert_eq!(count_syllables("cat"), 1);
        assert_eq!(count_syllables("table"), 2);
        assert_eq!(count_syllables("idea"), 3);
        assert_eq!(count_syllables("sea"), 1);
        assert_eq!(count_syllables("the"), 1);
        assert_eq!(count_syllables("make"), 1);
        assert_eq!(count_syllables("Apple,"), 2);
        assert_eq!(syllables_checked("3d"), (1, true));
    }

    #[test]
    fn fk_examples() {
        assert!((flesch_kincaid("cat").unwrap() - (-3.4)).abs() < 1e-9);
        assert!((flesch_kincaid("The dog ran. The cat sat.").unwrap() - (-2.62)).abs() < 1e-9);
        assert_eq!(sentence_count("no delimiter here"), 1);
        assert_eq!(sentence_count("One. Two! Three? four"), 4);
        assert_eq!(sentence_count("..."), 1);
        assert!(flesch_kincaid("  ,, ").is_err());
    }

    #[test]
    fn profile_examples() {
        let p = difficulty_profile("a red cat", Syntax::Fallback, None).unwrap();
        assert_eq!(p.word_count, 3);
        assert!((p.yngve.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(p.yngve_source, Some(YngveSource::Fallback));
        let p = difficulty_profile("a red cat", Syntax::None, None).unwrap();
        assert!(p.yngve.is_none() && p.perplexity.is_none());
        assert_eq!(p.avg_syllables_per_word, p.syllable_count as f64 / p.word_count as f64);
    }
}
