//! Caption-side preparation for positional and counting alignment.
//!
//! Matching works on lowercase alphanumeric tokens. At every token position
//! the longest configured phrase wins and its tokens are consumed, so "on"
//! never fires inside "on top of".

use std::borrow::Borrow;
use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::artifact_io::CaptionRecord;
use crate::error::{EvalError, Result};

/// The fifteen positional words, in their canonical order.
pub const DEFAULT_POSITIONAL_WORDS: [&str; 15] = [
    "above",
    "right",
    "far",
    "outside",
    "between",
    "below",
    "on top of",
    "bottom",
    "left",
    "inside",
    "in front of",
    "behind",
    "on",
    "near",
    "under",
];

const DEFAULT_ANTONYMS: [(&str, &str); 16] = [
    ("above", "below"),
    ("below", "above"),
    ("left", "right"),
    ("right", "left"),
    ("in front of", "behind"),
    ("behind", "in front of"),
    ("inside", "outside"),
    ("outside", "inside"),
    ("near", "far"),
    ("far", "near"),
    ("on top of", "under"),
    ("under", "on top of"),
    ("top", "bottom"),
    ("bottom", "top"),
    ("on", "under"),
    ("over", "under"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordSetConfig {
    pub words: Vec<String>,
    #[serde(default)]
    pub antonym_map: IndexMap<String, String>,
    #[serde(default)]
    pub class_keywords: IndexMap<String, Vec<String>>,
}

impl Default for WordSetConfig {
    fn default() -> Self {
        WordSetConfig {
            words: DEFAULT_POSITIONAL_WORDS
                .iter()
                .map(|w| w.to_string())
                .collect(),
            antonym_map: DEFAULT_ANTONYMS
                .iter()
                .map(|&(w, a)| (w.to_string(), a.to_string()))
                .collect(),
            class_keywords: IndexMap::new(),
        }
    }
}

impl WordSetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.words.is_empty() {
            return Err(EvalError::Validation("word set is empty".into()));
        }
        let phrases: Vec<Vec<String>> = self.words.iter().map(|w| tokens_of(w)).collect();
        for (i, phrase) in phrases.iter().enumerate() {
            if phrase.is_empty() {
                return Err(EvalError::Validation(format!(
                    "word {:?} has no tokens",
                    self.words[i]
                )));
            }
            // A phrase must come before every phrase it contains.
            for (j, later) in phrases.iter().enumerate().skip(i + 1) {
                if later.len() > phrase.len() && contains_run(later, phrase) {
                    return Err(EvalError::Validation(format!(
                        "{:?} must be listed before its sub-phrase {:?}",
                        self.words[j], self.words[i]
                    )));
                }
            }
        }
        for (word, antonym) in &self.antonym_map {
            if tokens_of(antonym).is_empty() {
                return Err(EvalError::Validation(format!(
                    "antonym of {word:?} is empty"
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 over the newline-joined word list, for report provenance.
    pub fn word_set_hash(&self) -> String {
        hex::encode(Sha256::digest(self.words.join("\n").as_bytes()))
    }
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    haystack.windows(needle.len()).any(|w| w == needle)
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Token {
    text: String,
    start: usize,
    end: usize,
}

fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                tokens.push(Token {
                    text: text[s..i].to_lowercase(),
                    start: s,
                    end: i,
                });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        tokens.push(Token {
            text: text[s..].to_lowercase(),
            start: s,
            end: text.len(),
        });
    }
    tokens
}

fn tokens_of(phrase: &str) -> Vec<String> {
    tokenize(phrase).into_iter().map(|t| t.text).collect()
}

/// A matched phrase occupying bytes `start..end` of the caption.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Span {
    phrase: usize,
    start: usize,
    end: usize,
}

/// Greedy left-to-right scan, longest phrase first at each position.
fn scan(caption: &str, phrases: &[String]) -> Vec<Span> {
    let tokens = tokenize(caption);
    let mut order: Vec<(usize, Vec<String>)> = phrases
        .iter()
        .map(|p| tokens_of(p))
        .enumerate()
        .filter(|(_, t)| !t.is_empty())
        .collect();
    order.sort_by_key(|(_, phrase)| std::cmp::Reverse(phrase.len()));

    let mut spans = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let hit = order.iter().find(|(_, phrase)| {
            tokens.len() - i >= phrase.len()
                && phrase.iter().zip(&tokens[i..]).all(|(p, t)| p == &t.text)
        });
        match hit {
            Some((index, phrase)) => {
                let last = i + phrase.len() - 1;
                spans.push(Span {
                    phrase: *index,
                    start: tokens[i].start,
                    end: tokens[last].end,
                });
                i = last + 1;
            }
            None => i += 1,
        }
    }
    spans
}

/// Distinct positional words of the caption, in order of first appearance.
pub fn match_positional_words(caption: &str, config: &WordSetConfig) -> Vec<String> {
    let mut found: Vec<String> = Vec::new();
    for span in scan(caption, &config.words) {
        let word = &config.words[span.phrase];
        if !found.contains(word) {
            found.push(word.clone());
        }
    }
    found
}

/// Replaces the first occurrence of `word` with its antonym, leaving every
/// other byte of the caption untouched.
pub fn make_mismatched_caption(
    caption: &str,
    word: &str,
    config: &WordSetConfig,
) -> Result<String> {
    let antonym = config
        .antonym_map
        .get(word)
        .ok_or_else(|| EvalError::UnmappedWord(word.to_string()))?;
    let mut phrases = config.words.clone();
    let index = match phrases.iter().position(|w| w == word) {
        Some(i) => i,
        None => {
            phrases.push(word.to_string());
            phrases.len() - 1
        }
    };
    let span = scan(caption, &phrases)
        .into_iter()
        .find(|s| s.phrase == index)
        .ok_or_else(|| {
            EvalError::Validation(format!("caption does not contain {word:?}: {caption:?}"))
        })?;
    Ok(format!(
        "{}{}{}",
        &caption[..span.start],
        antonym,
        &caption[span.end..]
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaCaptionPair {
    pub word: String,
    pub caption_id: String,
    pub matched: String,
    pub mismatched: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaCaptionSets {
    pub sets: BTreeMap<String, Vec<PaCaptionPair>>,
    pub warnings: Vec<String>,
}

impl PaCaptionSets {
    /// Number of pairs per word.
    pub fn counts(&self) -> BTreeMap<String, usize> {
        self.sets
            .iter()
            .map(|(w, v)| (w.clone(), v.len()))
            .collect()
    }

    pub fn total_pairs(&self) -> usize {
        self.sets.values().map(Vec::len).sum()
    }
}

/// Groups captions by positional word and builds their mismatched variants.
pub fn build_pa_caption_sets<I>(captions: I, config: &WordSetConfig) -> PaCaptionSets
where
    I: IntoIterator,
    I::Item: Borrow<CaptionRecord>,
{
    let mut out = PaCaptionSets::default();
    for caption in captions {
        let caption = caption.borrow();
        for word in match_positional_words(&caption.text, config) {
            match make_mismatched_caption(&caption.text, &word, config) {
                Ok(mismatched) => out
                    .sets
                    .entry(word.clone())
                    .or_default()
                    .push(PaCaptionPair {
                        word,
                        caption_id: caption.id.clone(),
                        matched: caption.text.clone(),
                        mismatched,
                    }),
                Err(e) => out.warnings.push(format!("caption {}: {e}", caption.id)),
            }
        }
    }
    out
}

/// Number words and digits mapped to their values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumberLexicon(pub IndexMap<String, u32>);

impl Default for NumberLexicon {
    fn default() -> Self {
        let words = [
            "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
        ];
        let mut map = IndexMap::new();
        map.insert("a".to_string(), 1);
        map.insert("an".to_string(), 1);
        for (i, w) in words.iter().enumerate() {
            map.insert(w.to_string(), i as u32 + 1);
        }
        for n in 1..=10u32 {
            map.insert(n.to_string(), n);
        }
        NumberLexicon(map)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumberHit {
    pub word: String,
    pub value: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountCandidate {
    pub id: String,
    pub text: String,
    pub hits: Vec<NumberHit>,
}

/// Number-word hits of one caption, in caption order.
pub fn number_hits(text: &str, lexicon: &NumberLexicon) -> Vec<NumberHit> {
    tokenize(text)
        .into_iter()
        .filter_map(|t| {
            lexicon.0.get(&t.text).map(|&value| NumberHit {
                word: t.text,
                value,
            })
        })
        .collect()
}

/// Keeps captions that mention at least one lexicon number.
pub fn filter_counting_captions<'a, I>(
    captions: I,
    lexicon: &'a NumberLexicon,
) -> impl Iterator<Item = CountCandidate> + 'a
where
    I: IntoIterator + 'a,
    I::Item: Borrow<CaptionRecord>,
{
    captions.into_iter().filter_map(move |caption| {
        let caption = caption.borrow();
        let hits = number_hits(&caption.text, lexicon);
        (!hits.is_empty()).then(|| CountCandidate {
            id: caption.id.clone(),
            text: caption.text.clone(),
            hits,
        })
    })
}

fn fold_plural(token: &str) -> &str {
    if token.len() >= 3 && token.ends_with('s') {
        &token[..token.len() - 1]
    } else {
        token
    }
}

/// Classes whose keywords appear in the caption, ordered by first appearance.
pub fn map_caption_to_classes(caption: &str, config: &WordSetConfig) -> Vec<String> {
    let tokens: Vec<String> = tokenize(caption)
        .iter()
        .map(|t| fold_plural(&t.text).to_string())
        .collect();
    let mut hits: Vec<(usize, &String)> = config
        .class_keywords
        .iter()
        .filter_map(|(class, keywords)| {
            keywords
                .iter()
                .filter_map(|k| {
                    let phrase: Vec<String> = tokens_of(k)
                        .iter()
                        .map(|t| fold_plural(t).to_string())
                        .collect();
                    if phrase.is_empty() {
                        return None;
                    }
                    tokens
                        .windows(phrase.len())
                        .position(|w| w == phrase.as_slice())
                })
                .min()
                .map(|pos| (pos, class))
        })
        .collect();
    hits.sort_by_key(|&(pos, _)| pos);
    hits.into_iter().map(|(_, class)| class.clone()).collect()
}
