//! Token normalization rules.
//!
//! Each whitespace-separated chunk of a document passes through, in order:
//!
//! 1. emoji removal: every char in [`is_emoji`] is deleted (when enabled);
//! 2. edge trimming: leading and trailing non-alphanumeric chars are removed
//!    (when punctuation stripping is enabled);
//! 3. URL filter: chunks starting with `http://`, `https://` or `www.`
//!    (ASCII case-insensitive) are dropped (when enabled);
//! 4. lowercasing;
//! 5. stopword filter;
//! 6. lemmatization to a fixed point (dictionary first, then [`suffix_lemma`]);
//! 7. stopword filter again, then the minimum-length filter.
//!
//! Every step maps its own output to itself, so running the pipeline over the
//! space-joined output tokens reproduces them.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// Settings for [`super::preprocess`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub stopwords: BTreeSet<String>,
    pub strip_punctuation: bool,
    pub strip_emoji: bool,
    pub strip_urls: bool,
    pub lowercase: bool,
    pub lemmatize: bool,
    pub min_token_len: usize,
    /// Optional surface form -> lemma overrides, consulted before the suffix rules.
    pub lemma_dictionary: BTreeMap<String, String>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            stopwords: BTreeSet::new(),
            strip_punctuation: true,
            strip_emoji: true,
            strip_urls: true,
            lowercase: true,
            lemmatize: true,
            min_token_len: 1,
            lemma_dictionary: BTreeMap::new(),
        }
    }
}

impl PreprocessConfig {
    /// Replaces the stopword list, lowercasing entries when the lowercase flag is set.
    pub fn with_stopwords<I, S>(mut self, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        self.stopwords = words
            .into_iter()
            .map(|w| self.fold_case(w.as_ref().trim()))
            .filter(|w| !w.is_empty())
            .collect();
        self
    }

    pub fn with_lemma_dictionary<I, S, T>(mut self, entries: I) -> Self
    where
        I: IntoIterator<Item = (S, T)>,
        S: AsRef<str>,
        T: AsRef<str>,
    {
        self.lemma_dictionary = entries
            .into_iter()
            .map(|(k, v)| (self.fold_case(k.as_ref()), self.fold_case(v.as_ref())))
            .collect();
        self
    }

    /// Parses a stopword file: one entry per line, blank lines and `#` comments ignored.
    pub fn parse_stopwords(text: &str) -> Vec<String> {
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect()
    }

    /// Parses a lemma dictionary file: `form<TAB>lemma` (or whitespace separated) per line.
    pub fn parse_lemma_dictionary(text: &str) -> Vec<(String, String)> {
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .filter_map(|l| {
                let mut parts = l.split_whitespace();
                Some((parts.next()?.to_string(), parts.next()?.to_string()))
            })
            .collect()
    }

    fn fold_case(&self, s: &str) -> String {
        if self.lowercase {
            s.to_lowercase()
        } else {
            s.to_string()
        }
    }

    /// Runs the full normalization pipeline over `text`.
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace()
            .filter_map(|chunk| self.normalize(chunk))
            .collect()
    }

    fn normalize(&self, chunk: &str) -> Option<String> {
        let mut tok: String = if self.strip_emoji {
            chunk.chars().filter(|c| !is_emoji(*c)).collect()
        } else {
            chunk.to_string()
        };
        if self.strip_punctuation {
            tok = tok.trim_matches(|c: char| !c.is_alphanumeric()).to_string();
        }
        if tok.is_empty() {
            return None;
        }
        if self.strip_urls && is_url(&tok) {
            return None;
        }
        if self.lowercase {
            tok = tok.to_lowercase();
        }
        if self.stopwords.contains(&tok) {
            return None;
        }
        if self.lemmatize {
            tok = self.lemma(&tok);
        }
        if self.stopwords.contains(&tok) || tok.chars().count() < self.min_token_len.max(1) {
            return None;
        }
        Some(tok)
    }

    fn lemma(&self, word: &str) -> String {
        let mut cur = word.to_string();
        // Suffix rules strictly shorten; the bound only guards dictionary cycles.
        for _ in 0..64 {
            let next = match self.lemma_dictionary.get(&cur) {
                Some(l) => l.clone(),
                None => suffix_lemma(&cur),
            };
            if next == cur || next.is_empty() {
                break;
            }
            cur = next;
        }
        cur
    }
}

/// Emoji and pictograph ranges removed by the emoji filter.
pub fn is_emoji(c: char) -> bool {
    matches!(c as u32,
        0x1F000..=0x1FAFF   // mahjong .. symbols & pictographs extended-A (incl. flags)
        | 0x2600..=0x27BF   // misc symbols, dingbats
        | 0x2B00..=0x2BFF   // misc symbols and arrows
        | 0xFE00..=0xFE0F   // variation selectors
        | 0x200D            // zero width joiner
        | 0x20E3            // combining enclosing keycap
        | 0xE0020..=0xE007F // tag characters
    )
}

fn is_url(tok: &str) -> bool {
    let lower = tok.get(..8).unwrap_or(tok).to_ascii_lowercase();
    lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.")
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

fn has_vowel(s: &str) -> bool {
    s.chars().any(|c| is_vowel(c) || c == 'y')
}

fn ends_alnum(s: &str) -> bool {
    s.chars().last().is_some_and(char::is_alphanumeric)
}

/// Undoubles a trailing consonant pair ("runn" -> "run"), except l, s and z.
fn undouble(stem: &str) -> String {
    let chars: Vec<char> = stem.chars().collect();
    let n = chars.len();
    if n >= 2 {
        let (a, b) = (chars[n - 2], chars[n - 1]);
        if a == b && a.is_alphabetic() && !is_vowel(a) && !matches!(a, 'l' | 's' | 'z') {
            return chars[..n - 1].iter().collect();
        }
    }
    stem.to_string()
}

/// One application of the English suffix table.
///
/// | suffix | condition                          | result               |
/// |--------|------------------------------------|----------------------|
/// | -ies   | stem length >= 2                   | stem + "y"           |
/// | -ied   | stem length >= 2                   | stem + "y"           |
/// | -sses  | always                             | stem + "ss"          |
/// | -xes, -ches, -shes, -zes | stem length >= 2 | drop "es"            |
/// | -s     | not -ss/-us/-is, stem length >= 3  | drop "s"             |
/// | -ing   | stem length >= 3 with a vowel      | drop, undouble       |
/// | -ed    | stem length >= 3 with a vowel      | drop, undouble       |
///
/// Stems must end in an alphanumeric char; otherwise the word is kept.
pub fn suffix_lemma(word: &str) -> String {
    if !word.is_ascii() {
        return word.to_string();
    }
    let keep = |stem: &str, out: String| if ends_alnum(stem) { out } else { word.to_string() };
    let len = word.len();
    if let Some(stem) = word.strip_suffix("ies").filter(|s| s.len() >= 2) {
        return keep(stem, format!("{stem}y"));
    }
    if let Some(stem) = word.strip_suffix("ied").filter(|s| s.len() >= 2) {
        return keep(stem, format!("{stem}y"));
    }
    if let Some(stem) = word.strip_suffix("sses") {
        return format!("{stem}ss");
    }
    for suf in ["xes", "ches", "shes", "zes"] {
        if word.ends_with(suf) && len - 2 >= 2 {
            let stem = &word[..len - 2];
            return keep(stem, stem.to_string());
        }
    }
    if word.ends_with('s') && !word.ends_with("ss") && !word.ends_with("us") && !word.ends_with("is") {
        let stem = &word[..len - 1];
        if stem.len() >= 3 {
            return keep(stem, stem.to_string());
        }
        return word.to_string();
    }
    for suf in ["ing", "ed"] {
        if let Some(stem) = word.strip_suffix(suf) {
            if stem.len() >= 3 && has_vowel(stem) {
                return keep(stem, undouble(stem));
            }
        }
    }
    word.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_on() -> PreprocessConfig {
        PreprocessConfig::default()
    }

    #[test]
    fn strips_urls_emoji_punctuation() {
        let cfg = PreprocessConfig { lemmatize: false, ..all_on() }.with_stopwords(["see"]);
        assert_eq!(cfg.tokenize("Thanks!! see http://x.y 😀"), vec!["thanks"]);
    }

    #[test]
    fn stopwords_after_lowercasing() {
        let cfg = all_on().with_stopwords(["the"]);
        assert!(cfg.tokenize("The THE the").is_empty());
    }

    #[test]
    fn suffix_rules() {
        let cfg = all_on();
        assert_eq!(cfg.tokenize("classes booked"), vec!["class", "book"]);
        assert_eq!(suffix_lemma("running"), "run");
        assert_eq!(suffix_lemma("stopped"), "stop");
        assert_eq!(suffix_lemma("studies"), "study");
        assert_eq!(suffix_lemma("boxes"), "box");
        assert_eq!(suffix_lemma("watches"), "watch");
        assert_eq!(suffix_lemma("bus"), "bus");
        assert_eq!(suffix_lemma("class"), "class");
        assert_eq!(suffix_lemma("need"), "need");
        assert_eq!(suffix_lemma("calling"), "call");
        assert_eq!(suffix_lemma("things"), "thing");
        assert_eq!(suffix_lemma("thing"), "thing");
    }

    #[test]
    fn dictionary_wins_over_rules() {
        let cfg = all_on().with_lemma_dictionary([("children", "child"), ("went", "go")]);
        assert_eq!(cfg.tokenize("Children went"), vec!["child", "go"]);
    }

    #[test]
    fn flags_disable_rules() {
        let cfg = PreprocessConfig {
            strip_punctuation: false,
            strip_emoji: false,
            strip_urls: false,
            lowercase: false,
            lemmatize: false,
            ..PreprocessConfig::default()
        };
        assert_eq!(cfg.tokenize("Hi! www.x.com 😀"), vec!["Hi!", "www.x.com", "😀"]);
    }

    #[test]
    fn url_inside_brackets_is_dropped() {
        assert!(all_on().tokenize("(https://example.com/a)").is_empty());
        assert!(all_on().tokenize("WWW.Example.com").is_empty());
    }

    #[test]
    fn keeps_inner_punctuation() {
        assert_eq!(all_on().tokenize("covid-19, don't"), vec!["covid-19", "don't"]);
    }

    #[test]
    fn parses_files() {
        assert_eq!(PreprocessConfig::parse_stopwords("a\n\n# c\n b \n"), vec!["a", "b"]);
        assert_eq!(
            PreprocessConfig::parse_lemma_dictionary("went\tgo\nbad\n"),
            vec![("went".to_string(), "go".to_string())]
        );
    }
}
