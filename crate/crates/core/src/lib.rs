//! Divide-and-conquer passage sentiment.
//!
//! A passage is split into constituents (sentences from the rule-based
//! [`segmenter`], or aspects produced by an external tool and loaded through
//! [`scorer::load_score_matrices`]). Each constituent gets a 3-class
//! distribution, the rows are stacked into a [`ScoreMatrix`], and the matrix is
//! collapsed to a single passage-level prediction by one of the strategies in
//! [`aggregate`]: a plain column mean, the mean without neutral-dominant rows,
//! or a small MLP ([`mlp`]) over the summary statistics from [`features`].
//!
//! Class order is fixed everywhere as (negative, neutral, positive).
//!
//! ```
//! use dcsent::{aggregate, scorer::LexiconScorer, segmenter::Segmenter};
//! use dcsent::scorer::score_text;
//!
//! let segmenter = Segmenter::default();
//! let lexicon = LexiconScorer::default();
//! let matrix = score_text("p1", "The food was great. The room was awful and dirty.", &segmenter, &lexicon)
//!     .unwrap();
//! assert_eq!(matrix.len(), 2);
//! let dist = aggregate::average(&matrix);
//! assert!((dist.as_array().iter().sum::<f64>() - 1.0).abs() < 1e-12);
//! ```

pub mod aggregate;
pub mod eval;
pub mod features;
pub mod ingest;
mod jsonfmt;
pub mod mlp;
pub mod scorer;
pub mod segmenter;
pub mod sentiment;

pub use aggregate::{AggregationStrategy, Aggregation};
pub use features::FeatureVector;
pub use ingest::{DatasetSplit, LabeledPassage};
pub use mlp::{MlpHyperparams, MlpModel};
pub use scorer::{ConstituentScore, ScoreMatrix, ScoreSource};
pub use segmenter::{Segmenter, Span};
pub use sentiment::{Sentiment, SentimentDistribution};
