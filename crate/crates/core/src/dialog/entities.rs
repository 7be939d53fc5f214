use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// A recognised entity span in a user utterance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub entity_type: String,
    /// Exact substring of the utterance.
    pub surface: String,
    /// Byte offset of `surface` in the utterance.
    pub start: usize,
    pub resolved: Option<String>,
}

#[derive(Clone, Debug)]
struct Entry {
    entity_type: String,
    canonical: String,
}

/// Deterministic surface-form matcher: longest match, left to right,
/// case-insensitive, on whole words.
#[derive(Clone, Debug, Default)]
pub struct Gazetteer {
    phrases: HashMap<String, Entry>,
    max_words: usize,
}

/// Byte spans of the words in `text`. A word is a run of alphanumerics,
/// apostrophes and hyphens.
fn word_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        let is_word = ch.is_alphanumeric() || ch == '\'' || ch == '-';
        match (is_word, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

fn normalise(words: &[&str]) -> String {
    words
        .iter()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

impl Gazetteer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `surface` (any casing, one or more words). Later insertions
    /// of the same surface replace earlier ones.
    pub fn insert(&mut self, surface: &str, entity_type: &str, canonical: &str) {
        let words: Vec<&str> = word_spans(surface)
            .iter()
            .map(|&(s, e)| &surface[s..e])
            .collect();
        if words.is_empty() {
            return;
        }
        self.max_words = self.max_words.max(words.len());
        self.phrases.insert(
            normalise(&words),
            Entry {
                entity_type: entity_type.to_string(),
                canonical: canonical.to_string(),
            },
        );
    }

    /// Exact lookup of a whole phrase; returns (entity type, canonical value).
    pub fn lookup(&self, surface: &str) -> Option<(&str, &str)> {
        let words: Vec<&str> = word_spans(surface)
            .iter()
            .map(|&(s, e)| &surface[s..e])
            .collect();
        self.phrases
            .get(&normalise(&words))
            .map(|e| (e.entity_type.as_str(), e.canonical.as_str()))
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn extract(&self, text: &str) -> Vec<EntityMention> {
        let spans = word_spans(text);
        let lowered: Vec<String> = spans
            .iter()
            .map(|&(s, e)| text[s..e].to_lowercase())
            .collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < spans.len() {
            let longest = self.max_words.min(spans.len() - i);
            let hit = (1..=longest).rev().find_map(|k| {
                let key = lowered[i..i + k].join(" ");
                self.phrases.get(&key).map(|e| (k, e))
            });
            match hit {
                Some((k, entry)) => {
                    let (start, end) = (spans[i].0, spans[i + k - 1].1);
                    out.push(EntityMention {
                        entity_type: entry.entity_type.clone(),
                        surface: text[start..end].to_string(),
                        start,
                        resolved: Some(entry.canonical.clone()),
                    });
                    i += k;
                }
                None => i += 1,
            }
        }
        out
    }
}

/// Free-function form of [`Gazetteer::extract`].
pub fn extract_entities(text: &str, gazetteer: &Gazetteer) -> Vec<EntityMention> {
    gazetteer.extract(text)
}
