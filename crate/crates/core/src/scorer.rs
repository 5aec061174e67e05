//! Per-constituent sentiment scores and the score-matrix wire format.
//!
//! A [`ScoreMatrix`] is the N×3 stack of constituent distributions for one
//! passage. Matrices are either computed here (segmenter spans scored by a
//! [`ConstituentScorer`]) or loaded from score-matrix JSONL written by an
//! external model runner, one object per line:
//!
//! ```text
//! {"passage_id": "p1", "source": "aspect", "constituents": [{"text": "cable", "scores": [0.1, 0.2, 0.7]}]}
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::LabeledPassage;
use crate::segmenter::{SegmentError, Segmenter};
use crate::sentiment::SentimentDistribution;

/// Rows within this distance of sum 1 are renormalized silently.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

/// Rows within this distance of sum 1 are accepted as truncated model output
/// and renormalized with a warning; anything further off is corrupt.
pub const TRUNCATED_ROW_SUM_TOLERANCE: f64 = 0.1;

const POSITIVE_WORDS: &str = include_str!("../data/positive_words.txt");
const NEGATIVE_WORDS: &str = include_str!("../data/negative_words.txt");

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error("passage {passage_id:?}, constituent {index} ({text:?}): {message}")]
    Constituent {
        passage_id: String,
        index: usize,
        text: String,
        message: String,
    },
    #[error("no score matrix for passage {0:?}")]
    MissingPassage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("score matrix has no rows")]
    EmptyMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSource {
    Sentence,
    Aspect,
    External,
}

impl ScoreSource {
    pub fn name(self) -> &'static str {
        match self {
            ScoreSource::Sentence => "sentence",
            ScoreSource::Aspect => "aspect",
            ScoreSource::External => "external",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowPolicy {
    /// Reject rows off by more than [`ROW_SUM_TOLERANCE`].
    Strict,
    /// Also accept rows off by up to [`TRUNCATED_ROW_SUM_TOLERANCE`].
    AcceptTruncated,
}

/// Checks a raw score row and rescales it to sum 1.
///
/// Returns the distribution and whether the row needed more than the silent
/// renormalization.
pub fn normalize_row(scores: &[f64], policy: RowPolicy) -> Result<(SentimentDistribution, bool), String> {
    let row: [f64; 3] = scores
        .try_into()
        .map_err(|_| format!("expected 3 scores, got {}", scores.len()))?;
    if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(format!("score {v} is negative or not finite"));
    }
    let deviation = (row.iter().sum::<f64>() - 1.0).abs();
    let limit = match policy {
        RowPolicy::Strict => ROW_SUM_TOLERANCE,
        RowPolicy::AcceptTruncated => TRUNCATED_ROW_SUM_TOLERANCE,
    };
    if deviation > limit + 1e-12 {
        return Err(format!(
            "scores {row:?} sum to {}, more than {limit} away from 1",
            row.iter().sum::<f64>()
        ));
    }
    if deviation <= 1e-12 {
        if let Ok(dist) = SentimentDistribution::new(row) {
            return Ok((dist, false));
        }
    }
    let dist = SentimentDistribution::from_weights(row).map_err(|e| e.to_string())?;
    Ok((dist, deviation > ROW_SUM_TOLERANCE + 1e-12))
}

/// One row of a score matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConstituent")]
pub struct ConstituentScore {
    pub text: String,
    /// Byte range in the passage, for sentence constituents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<(usize, usize)>,
    pub scores: SentimentDistribution,
}

#[derive(Deserialize)]
struct RawConstituent {
    text: String,
    #[serde(default)]
    span: Option<(usize, usize)>,
    scores: Vec<f64>,
}

impl TryFrom<RawConstituent> for ConstituentScore {
    type Error = String;

    fn try_from(raw: RawConstituent) -> Result<Self, String> {
        if raw.text.trim().is_empty() {
            return Err("constituent text is empty".into());
        }
        let (scores, _) = normalize_row(&raw.scores, RowPolicy::AcceptTruncated)?;
        Ok(Self {
            text: raw.text,
            span: raw.span,
            scores,
        })
    }
}

/// Constituent distributions for one passage (N ≥ 1 rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub passage_id: String,
    pub source: ScoreSource,
    #[serde(rename = "constituents")]
    rows: Vec<ConstituentScore>,
}

impl ScoreMatrix {
    pub fn new(
        passage_id: impl Into<String>,
        source: ScoreSource,
        rows: Vec<ConstituentScore>,
    ) -> Result<Self, ScorerError> {
        if rows.is_empty() {
            return Err(ScorerError::EmptyMatrix);
        }
        Ok(Self {
            passage_id: passage_id.into(),
            source,
            rows,
        })
    }

    /// Builds a matrix from bare distributions, labelling rows by index.
    pub fn from_distributions(
        passage_id: impl Into<String>,
        source: ScoreSource,
        rows: impl IntoIterator<Item = SentimentDistribution>,
    ) -> Result<Self, ScorerError> {
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(i, scores)| ConstituentScore {
                text: format!("#{i}"),
                span: None,
                scores,
            })
            .collect();
        Self::new(passage_id, source, rows)
    }

    pub fn rows(&self) -> &[ConstituentScore] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn distributions(&self) -> impl Iterator<Item = &[f64; 3]> + '_ {
        self.rows.iter().map(|r| r.scores.as_array())
    }
}

/// Produces a distribution for one constituent of a passage.
pub trait ConstituentScorer: Send + Sync {
    fn score(&self, passage_id: &str, index: usize, text: &str) -> Result<SentimentDistribution, String>;
}

/// Deterministic word-list scorer.
///
/// With `pos` and `neg` list hits among `n` tokens, the weights are
/// `(neg + 0.5, 0.25·(n − pos − neg) + 0.5, pos + 0.5)`, normalized to sum 1.
/// Tokens are lowercased runs of letters, digits and apostrophes.
#[derive(Debug, Clone)]
pub struct LexiconScorer {
    positive: HashSet<String>,
    negative: HashSet<String>,
}

impl LexiconScorer {
    pub const SMOOTHING: f64 = 0.5;
    pub const NEUTRAL_DAMPING: f64 = 0.25;

    pub fn new<P, N, S>(positive: P, negative: N) -> Self
    where
        P: IntoIterator<Item = S>,
        N: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let norm = |w: S| w.as_ref().trim().to_lowercase();
        Self {
            positive: positive.into_iter().map(norm).filter(|w| !w.is_empty()).collect(),
            negative: negative.into_iter().map(norm).filter(|w| !w.is_empty()).collect(),
        }
    }

    /// Counts (negative hits, neutral tokens, positive hits).
    pub fn counts(&self, text: &str) -> (usize, usize, usize) {
        let (mut neg, mut pos, mut n) = (0, 0, 0);
        for token in tokens(text) {
            n += 1;
            if self.positive.contains(&token) {
                pos += 1;
            } else if self.negative.contains(&token) {
                neg += 1;
            }
        }
        (neg, n - pos - neg, pos)
    }

    pub fn lexicon_score(&self, text: &str) -> SentimentDistribution {
        let (neg, neutral, pos) = self.counts(text);
        let a = Self::SMOOTHING;
        let weights = [
            neg as f64 + a,
            Self::NEUTRAL_DAMPING * neutral as f64 + a,
            pos as f64 + a,
        ];
        SentimentDistribution::from_weights(weights).expect("smoothed weights are positive")
    }
}

impl Default for LexiconScorer {
    fn default() -> Self {
        let list = |s: &'static str| s.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        Self::new(list(POSITIVE_WORDS), list(NEGATIVE_WORDS))
    }
}

impl ConstituentScorer for LexiconScorer {
    fn score(&self, _passage_id: &str, _index: usize, text: &str) -> Result<SentimentDistribution, String> {
        Ok(self.lexicon_score(text))
    }
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '’'))
        .map(|t| t.trim_matches(|c| c == '\'' || c == '’'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Looks rows up in precomputed matrices by passage id and constituent index.
#[derive(Debug, Clone, Default)]
pub struct FileScorer {
    matrices: BTreeMap<String, ScoreMatrix>,
}

impl FileScorer {
    pub fn new(matrices: BTreeMap<String, ScoreMatrix>) -> Self {
        Self { matrices }
    }

    pub fn from_file(path: &Path) -> Result<Self, ScorerError> {
        Ok(Self::new(load_score_matrices(path)?))
    }
}

impl ConstituentScorer for FileScorer {
    fn score(&self, passage_id: &str, index: usize, text: &str) -> Result<SentimentDistribution, String> {
        let matrix = self
            .matrices
            .get(passage_id)
            .ok_or_else(|| format!("no precomputed scores for passage {passage_id:?}"))?;
        let row = matrix
            .rows()
            .get(index)
            .ok_or_else(|| format!("precomputed matrix has only {} rows", matrix.len()))?;
        if row.text != text {
            return Err(format!("precomputed row text {:?} does not match", row.text));
        }
        Ok(row.scores)
    }
}

/// Segments a passage and scores each sentence, keeping span order.
pub fn score_passage(
    passage: &LabeledPassage,
    segmenter: &Segmenter,
    scorer: &dyn ConstituentScorer,
) -> Result<ScoreMatrix, ScorerError> {
    score_text(&passage.id, &passage.text, segmenter, scorer)
}

pub fn score_text(
    passage_id: &str,
    text: &str,
    segmenter: &Segmenter,
    scorer: &dyn ConstituentScorer,
) -> Result<ScoreMatrix, ScorerError> {
    let spans = segmenter.segment(text)?;
    let rows = spans
        .into_iter()
        .enumerate()
        .map(|(index, span)| {
            let scores = scorer.score(passage_id, index, &span.text).map_err(|message| {
                ScorerError::Constituent {
                    passage_id: passage_id.to_string(),
                    index,
                    text: span.text.clone(),
                    message,
                }
            })?;
            Ok(ConstituentScore {
                text: span.text,
                span: Some((span.start, span.end)),
                scores,
            })
        })
        .collect::<Result<Vec<_>, ScorerError>>()?;
    ScoreMatrix::new(passage_id, ScoreSource::Sentence, rows)
}

/// Anything that can hand out the score matrix for a passage.
pub trait MatrixSource: Sync {
    fn matrix_for(&self, passage: &LabeledPassage) -> Result<ScoreMatrix, ScorerError>;
}

impl MatrixSource for BTreeMap<String, ScoreMatrix> {
    fn matrix_for(&self, passage: &LabeledPassage) -> Result<ScoreMatrix, ScorerError> {
        self.get(&passage.id)
            .cloned()
            .ok_or_else(|| ScorerError::MissingPassage(passage.id.clone()))
    }
}

/// Uses rows carried on the passage when present, otherwise segments and
/// scores the text.
pub struct SegmentingSource<'a> {
    pub segmenter: &'a Segmenter,
    pub scorer: &'a dyn ConstituentScorer,
}

impl MatrixSource for SegmentingSource<'_> {
    fn matrix_for(&self, passage: &LabeledPassage) -> Result<ScoreMatrix, ScorerError> {
        match &passage.constituents {
            Some(rows) => ScoreMatrix::new(&passage.id, ScoreSource::External, rows.clone()),
            None => score_passage(passage, self.segmenter, self.scorer),
        }
    }
}

#[derive(Deserialize)]
struct RawMatrix {
    passage_id: String,
    source: ScoreSource,
    constituents: Vec<RawRow>,
}

#[derive(Deserialize)]
struct RawRow {
    text: String,
    #[serde(default)]
    span: Option<(usize, usize)>,
    scores: Vec<f64>,
}

/// Counters from a score-matrix load.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub matrices: usize,
    pub rows: usize,
    /// Rows whose sum was off by more than [`ROW_SUM_TOLERANCE`].
    pub truncated_rows: usize,
}

/// Loads score-matrix JSONL accepting truncated rows (see [`RowPolicy`]).
pub fn load_score_matrices(path: &Path) -> Result<BTreeMap<String, ScoreMatrix>, ScorerError> {
    load_score_matrices_with(path, RowPolicy::AcceptTruncated).map(|(m, _)| m)
}

pub fn load_score_matrices_with(
    path: &Path,
    policy: RowPolicy,
) -> Result<(BTreeMap<String, ScoreMatrix>, LoadReport), ScorerError> {
    let io_err = |source| ScorerError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = BTreeMap::new();
    let mut report = LoadReport::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| ScorerError::Malformed {
            line: line_no,
            message,
        };
        let raw: RawMatrix = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if raw.constituents.is_empty() {
            return Err(malformed(format!("passage {:?} has no constituents", raw.passage_id)));
        }
        let mut rows = Vec::with_capacity(raw.constituents.len());
        for (i, r) in raw.constituents.into_iter().enumerate() {
            if r.text.trim().is_empty() {
                return Err(malformed(format!("constituent {i}: text is empty")));
            }
            let (scores, truncated) = normalize_row(&r.scores, policy)
                .map_err(|m| malformed(format!("constituent {i}: {m}")))?;
            if truncated {
                report.truncated_rows += 1;
            }
            rows.push(ConstituentScore {
                text: r.text,
                span: r.span,
                scores,
            });
        }
        report.rows += rows.len();
        let matrix = ScoreMatrix::new(raw.passage_id, raw.source, rows)?;
        if out.contains_key(&matrix.passage_id) {
            return Err(malformed(format!("duplicate passage_id {:?}", matrix.passage_id)));
        }
        out.insert(matrix.passage_id.clone(), matrix);
    }
    report.matrices = out.len();
    if report.truncated_rows > 0 {
        log::warn!(
            "{}: renormalized {} of {} rows whose scores did not sum to 1",
            path.display(),
            report.truncated_rows,
            report.rows
        );
    }
    Ok((out, report))
}

pub fn write_score_matrices<'a>(
    path: &Path,
    matrices: impl IntoIterator<Item = &'a ScoreMatrix>,
) -> Result<(), ScorerError> {
    let io_err = |source| ScorerError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for m in matrices {
        serde_json::to_writer(&mut w, m).map_err(|e| io_err(e.into()))?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}
