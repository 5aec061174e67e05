//! Summary-statistic features of a score matrix.
//!
//! For each class `c` (negative, neutral, positive) positions `6c..6c+6` hold
//! the column mean, min, max, population standard deviation, range and the
//! number of rows where `c` is the argmax (ties to the lower class). Position
//! 18 is the number of rows.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::scorer::ScoreMatrix;
use crate::sentiment::{argmax3, Sentiment};

pub const FEATURE_COUNT: usize = 19;

/// Bumped whenever the position or meaning of a feature changes.
pub const FEATURE_LAYOUT_VERSION: u32 = 1;

pub const STATS_PER_CLASS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stat {
    Mean = 0,
    Min = 1,
    Max = 2,
    Std = 3,
    Range = 4,
    ArgmaxCount = 5,
}

/// Position of a per-class statistic in the vector.
pub const fn position(class: Sentiment, stat: Stat) -> usize {
    class as usize * STATS_PER_CLASS + stat as usize
}

pub const COUNT_POSITION: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, class: Sentiment, stat: Stat) -> f64 {
        self.0[position(class, stat)]
    }

    pub fn constituent_count(&self) -> f64 {
        self.0[COUNT_POSITION]
    }
}

pub fn featurize(matrix: &ScoreMatrix) -> FeatureVector {
    let n = matrix.len();
    let mut v = [0.0; FEATURE_COUNT];
    let mut argmax_counts = [0usize; 3];
    for row in matrix.distributions() {
        argmax_counts[argmax3(row)] += 1;
    }
    for class in Sentiment::ALL {
        let c = class.index();
        let column = sorted_column(matrix.distributions(), c);
        let min = column[0];
        let max = column[n - 1];
        let mean = column.iter().sum::<f64>() / n as f64;
        let std = if min == max {
            0.0
        } else {
            (column.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64).sqrt()
        };
        v[position(class, Stat::Mean)] = mean.clamp(min, max);
        v[position(class, Stat::Min)] = min;
        v[position(class, Stat::Max)] = max;
        v[position(class, Stat::Std)] = std;
        v[position(class, Stat::Range)] = max - min;
        v[position(class, Stat::ArgmaxCount)] = argmax_counts[c] as f64;
    }
    v[COUNT_POSITION] = n as f64;
    FeatureVector(v)
}

/// Column `c` in ascending order. Summing in sorted order makes every
/// statistic independent of row order, bit for bit.
pub(crate) fn sorted_column<'a>(rows: impl IntoIterator<Item = &'a [f64; 3]>, c: usize) -> Vec<f64> {
    let mut column: Vec<f64> = rows.into_iter().map(|r| r[c]).collect();
    column.sort_by(f64::total_cmp);
    column
}

/// Writes the feature dump CSV: `passage_id,f0..f18,label`.
pub fn write_feature_csv<'a>(
    path: &Path,
    rows: impl IntoIterator<Item = (&'a str, &'a FeatureVector, Sentiment)>,
) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut wtr = csv::Writer::from_writer(&mut w);
    let mut header = vec!["passage_id".to_string()];
    header.extend((0..FEATURE_COUNT).map(|i| format!("f{i}")));
    header.push("label".into());
    wtr.write_record(&header)?;
    for (id, fv, label) in rows {
        let mut record = Vec::with_capacity(FEATURE_COUNT + 2);
        record.push(id.to_string());
        record.extend(fv.0.iter().map(|x| format!("{x:.16e}")));
        record.push(label.index().to_string());
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    drop(wtr);
    w.flush()
}

/// Reads a feature dump CSV back into `(passage_id, features, label)`.
pub fn read_feature_csv(path: &Path) -> Result<Vec<(String, FeatureVector, Sentiment)>, String> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    let expected: Vec<String> = std::iter::once("passage_id".to_string())
        .chain((0..FEATURE_COUNT).map(|i| format!("f{i}")))
        .chain(std::iter::once("label".to_string()))
        .collect();
    if headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(format!("{}: not a feature dump (header mismatch)", path.display()));
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| e.to_string())?;
        let line = record.position().map_or(0, |p| p.line());
        let mut v = [0.0; FEATURE_COUNT];
        for (i, slot) in v.iter_mut().enumerate() {
            *slot = record[i + 1]
                .parse()
                .map_err(|_| format!("line {line}: field f{i}: not a number"))?;
        }
        let label = record[FEATURE_COUNT + 1]
            .parse::<u8>()
            .ok()
            .and_then(|l| Sentiment::try_from(l).ok())
            .ok_or_else(|| format!("line {line}: field label: not a class id"))?;
        out.push((record[0].to_string(), FeatureVector(v), label));
    }
    Ok(out)
}

pub fn is_feature_csv(path: &Path) -> bool {
    std::fs::read_to_string(path)
        .map(|s| s.starts_with("passage_id,f0,"))
        .unwrap_or(false)
}
