//! Class labels and 3-class probability distributions.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the sum of a [`SentimentDistribution`].
pub const SUM_TOLERANCE: f64 = 1e-6;

/// Sentiment class. The discriminant is the class id used in every file
/// format and in every matrix column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Sentiment {
    Negative = 0,
    Neutral = 1,
    Positive = 2,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Sentiment::Negative, Sentiment::Neutral, Sentiment::Positive];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Sentiment::Negative => "negative",
            Sentiment::Neutral => "neutral",
            Sentiment::Positive => "positive",
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl TryFrom<u8> for Sentiment {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Sentiment::from_index(value as usize)
            .ok_or_else(|| format!("label {value} is not a class id (expected 0, 1 or 2)"))
    }
}

impl From<Sentiment> for u8 {
    fn from(s: Sentiment) -> u8 {
        s as u8
    }
}

/// Index of the largest component; ties go to the lowest index.
pub fn argmax3(values: &[f64; 3]) -> usize {
    let mut best = 0;
    for i in 1..3 {
        if values[i] > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("component {index} = {value} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("components sum to {sum}, expected 1")]
    BadSum { sum: f64 },
    #[error("weights must be finite and non-negative with a positive sum")]
    BadWeights,
}

/// Probabilities for (negative, neutral, positive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SentimentDistribution([f64; 3]);

impl SentimentDistribution {
    /// Validates each component is in `[0, 1]` and the sum is within
    /// [`SUM_TOLERANCE`] of 1. The values are stored as given.
    pub fn new(p: [f64; 3]) -> Result<Self, DistributionError> {
        for (index, &value) in p.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(DistributionError::OutOfRange { index, value });
            }
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(DistributionError::BadSum { sum });
        }
        Ok(Self(p))
    }

    /// Divides non-negative weights by their sum.
    pub fn from_weights(w: [f64; 3]) -> Result<Self, DistributionError> {
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(DistributionError::BadWeights);
        }
        let sum: f64 = w.iter().sum();
        if sum <= 0.0 {
            return Err(DistributionError::BadWeights);
        }
        Ok(Self([w[0] / sum, w[1] / sum, w[2] / sum]))
    }

    pub fn uniform() -> Self {
        Self([1.0 / 3.0; 3])
    }

    pub fn as_array(&self) -> &[f64; 3] {
        &self.0
    }

    pub fn get(&self, class: Sentiment) -> f64 {
        self.0[class.index()]
    }

    pub fn negative(&self) -> f64 {
        self.0[0]
    }

    pub fn neutral(&self) -> f64 {
        self.0[1]
    }

    pub fn positive(&self) -> f64 {
        self.0[2]
    }

    /// Most probable class, lowest class id on ties.
    pub fn label(&self) -> Sentiment {
        Sentiment::ALL[argmax3(&self.0)]
    }
}

impl<'de> Deserialize<'de> for SentimentDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let p = <[f64; 3]>::deserialize(deserializer)?;
        SentimentDistribution::new(p).map_err(serde::de::Error::custom)
    }
}
