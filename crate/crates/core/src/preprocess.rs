//! Text normalization applied to questions and answers before scoring.

use std::collections::BTreeMap;
use std::fs;
use std::ops::Deref;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

/// Abbreviations that end in a period without ending a sentence.
pub const DEFAULT_GUARDS: &[&str] = &[
    "Dr.", "Mr.", "Mrs.", "Ms.", "Prof.", "Sr.", "Jr.", "St.", "vs.", "etc.", "e.g.", "i.e.",
    "approx.", "Fig.", "No.", "U.S.", "Inc.", "Ltd.", "Co.", "cf.", "al.", "mg.", "Jan.", "Feb.",
    "Mar.", "Apr.", "Aug.", "Sep.", "Sept.", "Oct.", "Nov.", "Dec.",
];

/// Ordered, non-empty sentences of one text.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceList(Vec<String>);

impl SentenceList {
    pub fn new(sentences: Vec<String>) -> Self {
        Self(
            sentences
                .into_iter()
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
        )
    }

    pub fn join(&self) -> String {
        self.0.join(" ")
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }
}

impl Deref for SentenceList {
    type Target = [String];

    fn deref(&self) -> &[String] {
        &self.0
    }
}

impl<S: Into<String>> FromIterator<S> for SentenceList {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self::new(iter.into_iter().map(Into::into).collect())
    }
}

/// Rule-based sentence splitter.
///
/// A run of `.`, `?` or `!` ends a sentence when it is followed by whitespace
/// and an uppercase letter, or by the end of the text, unless the word it
/// closes is on the guard list.
#[derive(Debug, Clone)]
pub struct SentenceSplitter {
    guards: Vec<String>,
}

impl Default for SentenceSplitter {
    fn default() -> Self {
        Self::with_guards(DEFAULT_GUARDS.iter().map(|s| s.to_string()).collect())
    }
}

impl SentenceSplitter {
    pub fn with_guards(guards: Vec<String>) -> Self {
        Self { guards }
    }

    /// Guard file: one abbreviation per line; blank lines and `#` comments skipped.
    pub fn from_guard_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Ok(Self::with_guards(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from)
                .collect(),
        ))
    }

    fn is_guarded(&self, text: &str, end: usize) -> bool {
        let start = text[..end]
            .rfind(char::is_whitespace)
            .map_or(0, |i| i + text[i..].chars().next().map_or(1, char::len_utf8));
        let word = &text[start..end];
        self.guards.iter().any(|g| g == word)
    }

    pub fn split(&self, text: &str) -> SentenceList {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut sentences = Vec::new();
        let mut start = 0;
        let mut i = 0;
        while i < chars.len() {
            if !matches!(chars[i].1, '.' | '?' | '!') {
                i += 1;
                continue;
            }
            let mut j = i;
            while j < chars.len() && matches!(chars[j].1, '.' | '?' | '!') {
                j += 1;
            }
            let end = chars.get(j).map_or(text.len(), |c| c.0);
            let mut k = j;
            while k < chars.len() && chars[k].1.is_whitespace() {
                k += 1;
            }
            let boundary = if k == chars.len() {
                true
            } else {
                k > j && chars[k].1.is_uppercase()
            };
            if boundary && !self.is_guarded(text, end) {
                sentences.push(normalize_ws(&text[start..end]));
                start = chars.get(k).map_or(text.len(), |c| c.0);
            }
            i = j;
        }
        if start < text.len() {
            sentences.push(normalize_ws(&text[start..]));
        }
        SentenceList::new(sentences)
    }
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Splits with the default guard list.
pub fn split_sentences(text: &str) -> SentenceList {
    SentenceSplitter::default().split(text)
}

/// Drops the trailing run of sentences that mention "updated by:" (any case).
/// Matches earlier in the answer are kept.
pub fn strip_trailing_updated_by(sentences: &SentenceList) -> SentenceList {
    let keep = sentences
        .iter()
        .rposition(|s| !s.to_lowercase().contains("updated by:"))
        .map_or(0, |i| i + 1);
    SentenceList(sentences[..keep].to_vec())
}

/// Case-sensitive abbreviation → expansion map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AbbreviationDict {
    entries: BTreeMap<String, String>,
    /// Keys sorted longest first, for overlap resolution.
    by_length: Vec<String>,
}

impl AbbreviationDict {
    pub fn new(entries: BTreeMap<String, String>) -> Result<Self> {
        if entries.keys().any(|k| k.is_empty()) {
            return Err(Error::InvalidRecord("abbreviation key is empty".into()));
        }
        let mut by_length: Vec<String> = entries.keys().cloned().collect();
        by_length.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        Ok(Self { entries, by_length })
    }

    /// Two-column TSV: abbreviation, tab, expansion. Blank lines and `#` comments skipped.
    pub fn from_tsv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut entries = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (abbr, expansion) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: "expected `abbreviation<TAB>expansion`".into(),
            })?;
            if abbr.is_empty() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    message: "empty abbreviation".into(),
                });
            }
            entries.insert(abbr.to_string(), expansion.trim_end_matches('\r').to_string());
        }
        Self::new(entries)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Whole-token replacement in one left-to-right pass. Token boundaries are
/// non-alphanumeric characters; when several keys match at a position the
/// longest wins. Expanded text is never rescanned.
pub fn expand_abbreviations(text: &str, dict: &AbbreviationDict) -> String {
    if dict.is_empty() {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    let mut pos = 0;
    let mut prev: Option<char> = None;
    while pos < text.len() {
        let at_boundary = prev.is_none_or(|c| !c.is_alphanumeric());
        if at_boundary {
            let rest = &text[pos..];
            let hit = dict.by_length.iter().find(|k| {
                rest.starts_with(k.as_str())
                    && rest[k.len()..]
                        .chars()
                        .next()
                        .is_none_or(|c| !c.is_alphanumeric())
            });
            if let Some(key) = hit {
                out.push_str(&dict.entries[key]);
                prev = key.chars().last();
                pos += key.len();
                continue;
            }
        }
        let c = text[pos..].chars().next().expect("pos is on a char boundary");
        out.push(c);
        prev = Some(c);
        pos += c.len_utf8();
    }
    out
}

/// Hook for an external coreference resolver.
pub trait CorefResolver: Send + Sync {
    fn resolve(&self, text: &str) -> String;
}

impl<F> CorefResolver for F
where
    F: Fn(&str) -> String + Send + Sync,
{
    fn resolve(&self, text: &str) -> String {
        self(text)
    }
}

/// Identity unless a resolver is supplied.
pub fn coref_resolve(text: &str, resolver: Option<&dyn CorefResolver>) -> String {
    match resolver {
        Some(r) => r.resolve(text),
        None => text.to_string(),
    }
}

/// The full normalization pipeline for questions and answers.
#[derive(Clone, Default)]
pub struct Preprocessor {
    pub splitter: SentenceSplitter,
    pub abbreviations: AbbreviationDict,
    pub coref: Option<Arc<dyn CorefResolver>>,
    pub expand_questions: bool,
    pub expand_answers: bool,
}

impl std::fmt::Debug for Preprocessor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Preprocessor")
            .field("abbreviations", &self.abbreviations.len())
            .field("coref", &self.coref.is_some())
            .field("expand_questions", &self.expand_questions)
            .field("expand_answers", &self.expand_answers)
            .finish()
    }
}

impl Preprocessor {
    pub fn new(abbreviations: AbbreviationDict) -> Self {
        Self {
            abbreviations,
            expand_questions: true,
            expand_answers: true,
            ..Self::default()
        }
    }

    pub fn question(&self, text: &str) -> String {
        let text = normalize_ws(text);
        if self.expand_questions {
            expand_abbreviations(&text, &self.abbreviations)
        } else {
            text
        }
    }

    /// Split, drop "Updated by:" trailers, resolve coreference, expand abbreviations.
    pub fn answer(&self, text: &str) -> SentenceList {
        let trimmed = strip_trailing_updated_by(&self.splitter.split(text)).join();
        let resolved = coref_resolve(&trimmed, self.coref.as_deref());
        let expanded = if self.expand_answers {
            expand_abbreviations(&resolved, &self.abbreviations)
        } else {
            resolved
        };
        self.splitter.split(&expanded)
    }
}
