//! Rule-based sentence boundary detection.
//!
//! Every run of terminal punctuation (`.`, `!`, `?`, `…`, so `...` and `?!`
//! count once) is a candidate boundary. Closing quotes and brackets directly
//! after the run attach to the sentence they close. Each candidate is then
//! decided by the first matching rule, in this order:
//!
//! | rule                 | decision | fires when                                                   |
//! |----------------------|----------|--------------------------------------------------------------|
//! | `end_of_text`        | split    | only whitespace follows                                      |
//! | `decimal_number`     | suppress | a lone `.` between two digits (`3.50`)                       |
//! | `url`                | suppress | inside a URL, email address or bare domain token             |
//! | `abbreviation`       | suppress | a lone `.` after a word from the abbreviation list (`Dr.`)   |
//! | `initial`            | suppress | a lone `.` after single capitals (`J.`, `J.K.`, `U.S.`)      |
//! | `no_following_space` | suppress | the next character is not whitespace                         |
//! | `not_sentence_start` | suppress | the next word does not start with an uppercase letter/digit  |
//! | `terminal`           | split    | otherwise                                                    |
//!
//! Opening quotes and brackets are skipped when looking for the next word.
//! Spans are byte ranges into the original text and never include the
//! whitespace between sentences.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

const DEFAULT_ABBREVIATIONS: &str = include_str!("../data/abbreviations.txt");

const TLDS: &[&str] = &[
    "com", "org", "net", "edu", "gov", "mil", "int", "io", "co", "uk", "us", "ca", "de", "fr",
    "info", "biz", "ly", "me", "ai", "app", "dev", "tv",
];

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("text is empty or whitespace-only")]
    EmptyText,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A sentence as a byte range of the passage it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Decision {
    Split,
    Suppress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    EndOfText,
    DecimalNumber,
    Url,
    Abbreviation,
    Initial,
    NoFollowingSpace,
    NotSentenceStart,
    Terminal,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::EndOfText => "end_of_text",
            Rule::DecimalNumber => "decimal_number",
            Rule::Url => "url",
            Rule::Abbreviation => "abbreviation",
            Rule::Initial => "initial",
            Rule::NoFollowingSpace => "no_following_space",
            Rule::NotSentenceStart => "not_sentence_start",
            Rule::Terminal => "terminal",
        }
    }

    pub fn decision(self) -> Decision {
        match self {
            Rule::EndOfText | Rule::Terminal => Decision::Split,
            _ => Decision::Suppress,
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One candidate boundary and how it was decided.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Byte offset of the first terminal character.
    pub start: usize,
    /// Byte offset just past the terminal run and any closing quotes; the
    /// sentence would end here.
    pub end: usize,
    pub terminal: String,
    pub decision: Decision,
    pub rule: Rule,
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '…')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | '”' | '’' | ')' | ']' | '}' | '»')
}

fn is_opener(c: char) -> bool {
    matches!(c, '"' | '\'' | '“' | '‘' | '(' | '[' | '{' | '«')
}

/// Sentence splitter. Immutable after construction and cheap to share
/// between threads.
#[derive(Debug, Clone)]
pub struct Segmenter {
    abbreviations: HashSet<String>,
}

impl Default for Segmenter {
    fn default() -> Self {
        Self::from_abbreviation_list(DEFAULT_ABBREVIATIONS)
    }
}

impl Segmenter {
    /// Parses a list with one abbreviation per line; blank lines and `#`
    /// comments are ignored, entries are lowercased and a trailing period
    /// is dropped.
    pub fn from_abbreviation_list(list: &str) -> Self {
        Self::with_abbreviations(list.lines().filter_map(|line| {
            let line = line.trim();
            (!line.is_empty() && !line.starts_with('#')).then_some(line)
        }))
    }

    pub fn with_abbreviations<I, S>(abbreviations: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let abbreviations = abbreviations
            .into_iter()
            .map(|a| a.as_ref().trim().trim_end_matches('.').to_lowercase())
            .filter(|a| !a.is_empty())
            .collect();
        Self { abbreviations }
    }

    pub fn from_abbreviation_file(path: &Path) -> Result<Self, SegmentError> {
        let list = std::fs::read_to_string(path).map_err(|source| SegmentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_abbreviation_list(&list))
    }

    pub fn is_abbreviation(&self, word: &str) -> bool {
        self.abbreviations.contains(&word.to_lowercase())
    }

    /// Splits `text` into sentences.
    pub fn segment(&self, text: &str) -> Result<Vec<Span>, SegmentError> {
        let trace = self.rule_trace(text)?;
        let trimmed_end = text.trim_end().len();
        let next_start = |from: usize| {
            text[from..]
                .char_indices()
                .find(|(_, c)| !c.is_whitespace())
                .map_or(text.len(), |(i, _)| from + i)
        };
        let mut spans = Vec::new();
        let mut start = next_start(0);
        for entry in trace.iter().filter(|e| e.decision == Decision::Split) {
            if entry.end >= trimmed_end {
                break;
            }
            spans.push(span(text, start, entry.end));
            start = next_start(entry.end);
        }
        if start < trimmed_end {
            spans.push(span(text, start, trimmed_end));
        }
        Ok(spans)
    }

    /// Lists every candidate boundary with the rule that decided it.
    pub fn rule_trace(&self, text: &str) -> Result<Vec<TraceEntry>, SegmentError> {
        if text.trim().is_empty() {
            return Err(SegmentError::EmptyText);
        }
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let byte_at = |i: usize| chars.get(i).map_or(text.len(), |&(b, _)| b);
        let mut trace = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            if !is_terminal(chars[i].1) {
                i += 1;
                continue;
            }
            let run_start = i;
            let mut run_end = i;
            while run_end < chars.len() && is_terminal(chars[run_end].1) {
                run_end += 1;
            }
            let mut after = run_end;
            while after < chars.len() && is_closer(chars[after].1) {
                after += 1;
            }
            let start = byte_at(run_start);
            let end = byte_at(after);
            let rule = self.decide(text, &chars, run_start, run_end, after);
            trace.push(TraceEntry {
                start,
                end,
                terminal: text[start..end].to_string(),
                decision: rule.decision(),
                rule,
            });
            i = after;
        }
        Ok(trace)
    }

    fn decide(
        &self,
        text: &str,
        chars: &[(usize, char)],
        run_start: usize,
        run_end: usize,
        after: usize,
    ) -> Rule {
        let rest = chars.get(after).map_or("", |&(b, _)| &text[b..]);
        if rest.trim().is_empty() {
            return Rule::EndOfText;
        }
        let lone_period = run_end - run_start == 1 && chars[run_start].1 == '.';
        let prev = run_start.checked_sub(1).map(|i| chars[i].1);
        let next = chars[after].1;

        if lone_period
            && after == run_end
            && prev.is_some_and(|c| c.is_ascii_digit())
            && next.is_ascii_digit()
        {
            return Rule::DecimalNumber;
        }
        if !next.is_whitespace() && looks_like_url(token_around(text, chars, run_start)) {
            return Rule::Url;
        }
        if lone_period {
            let word = word_before(text, chars, run_start);
            if word.chars().any(char::is_alphabetic) && self.is_abbreviation(word) {
                return Rule::Abbreviation;
            }
            if is_initials(word) {
                return Rule::Initial;
            }
        }
        if !next.is_whitespace() {
            return Rule::NoFollowingSpace;
        }
        match rest.chars().find(|c| !c.is_whitespace() && !is_opener(*c)) {
            Some(c) if c.is_uppercase() || c.is_ascii_digit() => Rule::Terminal,
            _ => Rule::NotSentenceStart,
        }
    }
}

fn span(text: &str, start: usize, end: usize) -> Span {
    Span {
        start,
        end,
        text: text[start..end].to_string(),
    }
}

/// The letters, digits and inner periods directly before `chars[idx]`.
fn word_before<'a>(text: &'a str, chars: &[(usize, char)], idx: usize) -> &'a str {
    let mut j = idx;
    while j > 0 && (chars[j - 1].1.is_alphanumeric() || chars[j - 1].1 == '.') {
        j -= 1;
    }
    let word = &text[chars.get(j).map_or(text.len(), |c| c.0)..chars[idx].0];
    word.trim_start_matches('.')
}

/// `J`, `J.K`, `U.S.A`: single uppercase letters joined by periods.
fn is_initials(word: &str) -> bool {
    !word.is_empty()
        && word.split('.').all(|part| {
            let mut cs = part.chars();
            matches!((cs.next(), cs.next()), (Some(c), None) if c.is_uppercase())
        })
}

/// The whitespace-delimited token containing `chars[idx]`, without
/// surrounding quotes, brackets and trailing terminals.
fn token_around<'a>(text: &'a str, chars: &[(usize, char)], idx: usize) -> &'a str {
    let mut lo = idx;
    while lo > 0 && !chars[lo - 1].1.is_whitespace() {
        lo -= 1;
    }
    let mut hi = idx;
    while hi < chars.len() && !chars[hi].1.is_whitespace() {
        hi += 1;
    }
    let start = chars[lo].0;
    let end = chars.get(hi).map_or(text.len(), |c| c.0);
    text[start..end]
        .trim_start_matches(is_opener)
        .trim_end_matches(|c: char| is_closer(c) || is_terminal(c) || c == ',' || c == ';')
}

fn looks_like_url(token: &str) -> bool {
    let lower = token.to_ascii_lowercase();
    if lower.contains("://") || lower.starts_with("www.") {
        return true;
    }
    if let Some((user, domain)) = lower.split_once('@') {
        return !user.is_empty() && is_domain(domain);
    }
    let host = lower.split('/').next().unwrap_or("");
    is_domain(host)
}

fn is_domain(host: &str) -> bool {
    let labels: Vec<&str> = host.split('.').collect();
    labels.len() >= 2
        && labels
            .iter()
            .all(|l| !l.is_empty() && l.chars().all(|c| c.is_ascii_alphanumeric() || c == '-'))
        && labels.last().is_some_and(|tld| TLDS.contains(tld))
}
