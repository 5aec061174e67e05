//! Collapsing a score matrix to one passage-level prediction.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{featurize, sorted_column};
use crate::mlp::{MlpError, MlpModel};
use crate::scorer::ScoreMatrix;
use crate::sentiment::{argmax3, Sentiment, SentimentDistribution};

pub const DEFAULT_NEUTRAL_THRESHOLD: f64 = 0.9;

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("neutral threshold {0} must be in (0, 1]")]
    BadThreshold(f64),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error("unknown strategy {0:?} (expected average, awon or mlp)")]
    UnknownStrategy(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Clone)]
pub enum AggregationStrategy {
    /// Per-class column mean.
    Average,
    /// Column mean over rows whose neutral score is not above the threshold.
    Awon { neutral_threshold: f64 },
    Mlp(Arc<MlpModel>),
}

impl AggregationStrategy {
    pub fn awon(neutral_threshold: f64) -> Result<Self, AggregateError> {
        if !(neutral_threshold > 0.0 && neutral_threshold <= 1.0) {
            return Err(AggregateError::BadThreshold(neutral_threshold));
        }
        Ok(Self::Awon { neutral_threshold })
    }

    pub fn mlp(model: MlpModel) -> Self {
        Self::Mlp(Arc::new(model))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Average => "average",
            Self::Awon { .. } => "awon",
            Self::Mlp(_) => "mlp",
        }
    }

    pub fn apply(&self, matrix: &ScoreMatrix) -> Result<Aggregation, AggregateError> {
        match self {
            Self::Average => Ok(Aggregation::new(average(matrix), matrix.len(), false)),
            Self::Awon { neutral_threshold } => Ok(awon(matrix, *neutral_threshold)),
            Self::Mlp(model) => Ok(Aggregation::new(mlp_aggregate(matrix, model)?, matrix.len(), false)),
        }
    }
}

/// Result of aggregating one matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregation {
    pub distribution: SentimentDistribution,
    pub label: Sentiment,
    /// Rows that contributed to the mean (all rows except for AWON).
    pub rows_used: usize,
    /// Set when AWON excluded every row and fell back to the plain mean.
    pub fallback: bool,
}

impl Aggregation {
    fn new(distribution: SentimentDistribution, rows_used: usize, fallback: bool) -> Self {
        Self {
            label: predict_label(&distribution),
            distribution,
            rows_used,
            fallback,
        }
    }
}

fn column_means<'a>(rows: impl Iterator<Item = &'a [f64; 3]>) -> SentimentDistribution {
    let rows: Vec<&[f64; 3]> = rows.collect();
    let means = [0, 1, 2].map(|c| {
        let column = sorted_column(rows.iter().copied(), c);
        column.iter().sum::<f64>() / column.len() as f64
    });
    // Means of normalized rows already sum to 1 up to rounding; only rescale
    // when the input rows were themselves off.
    let sum: f64 = means.iter().sum();
    if (sum - 1.0).abs() <= 1e-12 {
        if let Ok(d) = SentimentDistribution::new(means) {
            return d;
        }
    }
    SentimentDistribution::from_weights(means).expect("means of valid rows are non-negative")
}

/// Per-class mean, renormalized to sum 1.
pub fn average(matrix: &ScoreMatrix) -> SentimentDistribution {
    column_means(matrix.distributions())
}

/// Average without rows whose neutral score is strictly above `threshold`.
/// Falls back to [`average`] when every row is excluded.
pub fn awon(matrix: &ScoreMatrix, threshold: f64) -> Aggregation {
    let kept = || matrix.distributions().filter(move |r| r[1] <= threshold);
    let retained = kept().count();
    if retained == 0 {
        Aggregation::new(average(matrix), matrix.len(), true)
    } else {
        Aggregation::new(column_means(kept()), retained, false)
    }
}

pub fn mlp_aggregate(matrix: &ScoreMatrix, model: &MlpModel) -> Result<SentimentDistribution, MlpError> {
    model.forward(&featurize(matrix))
}

/// Argmax, ties to the lowest class id.
pub fn predict_label(dist: &SentimentDistribution) -> Sentiment {
    Sentiment::ALL[argmax3(dist.as_array())]
}

/// One line of the prediction JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub passage_id: String,
    pub strategy: String,
    pub scores: [f64; 3],
    pub label: Sentiment,
    pub fallback: bool,
}

impl Prediction {
    pub fn new(passage_id: impl Into<String>, strategy: &str, agg: &Aggregation) -> Self {
        Self {
            passage_id: passage_id.into(),
            strategy: strategy.to_string(),
            scores: *agg.distribution.as_array(),
            label: agg.label,
            fallback: agg.fallback,
        }
    }
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<(), AggregateError> {
    let io_err = |source| AggregateError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for p in predictions {
        serde_json::to_writer(&mut w, p).map_err(|e| io_err(e.into()))?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, AggregateError> {
    let io_err = |source| AggregateError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(&line).map_err(|e| AggregateError::Malformed {
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::ScoreSource;

    fn matrix(rows: &[[f64; 3]]) -> ScoreMatrix {
        ScoreMatrix::from_distributions(
            "m",
            ScoreSource::External,
            rows.iter().map(|r| SentimentDistribution::new(*r).unwrap()),
        )
        .unwrap()
    }

    #[test]
    fn average_of_one_is_identity() {
        let m = matrix(&[[0.1, 0.2, 0.7]]);
        assert_eq!(average(&m).as_array(), &[0.1, 0.2, 0.7]);
    }

    #[test]
    fn average_of_opposites() {
        let m = matrix(&[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        assert_eq!(average(&m).as_array(), &[0.5, 0.0, 0.5]);
    }

    #[test]
    fn awon_all_neutral_falls_back() {
        let m = matrix(&[[0.02, 0.95, 0.03], [0.0, 0.99, 0.01]]);
        let a = awon(&m, 0.9);
        assert!(a.fallback);
        assert_eq!(a.rows_used, 2);
        assert_eq!(a.distribution, average(&m));
    }

    #[test]
    fn awon_without_neutral_rows_is_average() {
        let m = matrix(&[[0.2, 0.3, 0.5], [0.6, 0.3, 0.1]]);
        let a = awon(&m, 0.9);
        assert!(!a.fallback);
        assert_eq!(a.distribution, average(&m));
    }

    #[test]
    fn awon_threshold_is_strict() {
        let m = matrix(&[[0.05, 0.9, 0.05], [0.0, 0.95, 0.05], [0.7, 0.2, 0.1]]);
        let a = awon(&m, 0.9);
        assert_eq!(a.rows_used, 2);
    }

    #[test]
    fn predict_label_examples() {
        let d = |p| SentimentDistribution::new(p).unwrap();
        assert_eq!(predict_label(&d([0.2, 0.3, 0.5])), Sentiment::Positive);
        assert_eq!(predict_label(&d([0.4, 0.4, 0.2])), Sentiment::Negative);
    }

    #[test]
    fn threshold_validation() {
        assert!(AggregationStrategy::awon(0.0).is_err());
        assert!(AggregationStrategy::awon(1.5).is_err());
        assert!(AggregationStrategy::awon(f64::NAN).is_err());
        assert!(AggregationStrategy::awon(1.0).is_ok());
    }

    #[test]
    fn predictions_round_trip() {
        let m = matrix(&[[0.2, 0.3, 0.5]]);
        let agg = AggregationStrategy::Average.apply(&m).unwrap();
        let preds = vec![Prediction::new("p1", "average", &agg)];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_predictions(f.path(), &preds).unwrap();
        assert_eq!(read_predictions(f.path()).unwrap(), preds);
    }
}
