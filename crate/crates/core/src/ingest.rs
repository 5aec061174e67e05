//! Dataset loading, validation and seeded train/validation/test splits.
//!
//! Two on-disk formats are accepted:
//!
//! * JSONL: one object per line with `id` (string), `text` (string),
//!   `label` (0, 1 or 2) and optionally `token_count` and `constituents`.
//! * CSV: header `id,text,label[,token_count]`, RFC 4180 quoting.
//!
//! Splits shuffle with ChaCha8 seeded from a `u64` (rand_chacha's
//! `seed_from_u64`), so they reproduce across platforms.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::scorer::ConstituentScore;
use crate::sentiment::Sentiment;

/// 70/10/20 train/validation/test.
pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.7, 0.1, 0.2);

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: field `{field}`: {message}")]
    Field {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?} (first seen on line {first_line})")]
    DuplicateId {
        id: String,
        line: usize,
        first_line: usize,
    },
    #[error("cannot infer dataset format from {0:?}; use .csv or .jsonl")]
    UnknownFormat(PathBuf),
    #[error("cannot split an empty dataset")]
    Empty,
    #[error("split ratios {0:?} must be positive and sum to 1")]
    BadRatios((f64, f64, f64)),
    #[error("{part} split is empty for {n} passages; use a larger dataset")]
    EmptyPart { part: &'static str, n: usize },
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Csv,
    Jsonl,
}

impl DatasetFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
            Some(ext) if ext == "csv" => Ok(DatasetFormat::Csv),
            Some(ext) if ext == "jsonl" || ext == "ndjson" => Ok(DatasetFormat::Jsonl),
            _ => Err(IngestError::UnknownFormat(path.to_path_buf())),
        }
    }
}

impl std::str::FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(DatasetFormat::Csv),
            "jsonl" => Ok(DatasetFormat::Jsonl),
            other => Err(format!("unknown format {other:?} (expected csv or jsonl)")),
        }
    }
}

/// One passage with its gold label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPassage {
    pub id: String,
    pub text: String,
    pub label: Sentiment,
    /// Externally supplied tokenizer length; takes precedence over any
    /// local token count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_count: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constituents: Option<Vec<ConstituentScore>>,
}

impl LabeledPassage {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: Sentiment) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label,
            token_count: None,
            constituents: None,
        }
    }
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Vec<LabeledPassage>> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let records = match format {
        DatasetFormat::Jsonl => read_jsonl(reader, path)?,
        DatasetFormat::Csv => read_csv(reader)?,
    };
    check_unique(&records)?;
    Ok(records.into_iter().map(|(_, p)| p).collect())
}

/// Loads a dataset, inferring the format from the file extension.
pub fn load_dataset_auto(path: &Path) -> Result<Vec<LabeledPassage>> {
    load_dataset(path, DatasetFormat::from_path(path)?)
}

fn field_err(line: usize, field: &str, message: impl Into<String>) -> IngestError {
    IngestError::Field {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn check_text(line: usize, text: String) -> Result<String> {
    if text.trim().is_empty() {
        return Err(field_err(line, "text", "text is empty"));
    }
    Ok(text)
}

fn parse_label_int(line: usize, value: i64) -> Result<Sentiment> {
    usize::try_from(value)
        .ok()
        .and_then(Sentiment::from_index)
        .ok_or_else(|| field_err(line, "label", format!("label {value} is not in {{0, 1, 2}}")))
}

fn read_jsonl<R: BufRead>(reader: R, path: &Path) -> Result<Vec<(usize, LabeledPassage)>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| IngestError::Malformed {
            line: line_no,
            message: format!("invalid JSON: {e}"),
        })?;
        let Value::Object(mut obj) = value else {
            return Err(IngestError::Malformed {
                line: line_no,
                message: "expected a JSON object".into(),
            });
        };
        let id = match obj.remove("id") {
            Some(Value::String(s)) if !s.is_empty() => s,
            Some(Value::String(_)) => return Err(field_err(line_no, "id", "id is empty")),
            Some(_) => return Err(field_err(line_no, "id", "expected a string")),
            None => return Err(field_err(line_no, "id", "missing")),
        };
        let text = match obj.remove("text") {
            Some(Value::String(s)) => check_text(line_no, s)?,
            Some(_) => return Err(field_err(line_no, "text", "expected a string")),
            None => return Err(field_err(line_no, "text", "missing")),
        };
        let label = match obj.remove("label") {
            Some(Value::Number(n)) => match n.as_i64() {
                Some(v) => parse_label_int(line_no, v)?,
                None => return Err(field_err(line_no, "label", format!("{n} is not an integer"))),
            },
            Some(_) => return Err(field_err(line_no, "label", "expected an integer")),
            None => return Err(field_err(line_no, "label", "missing")),
        };
        let token_count = match obj.remove("token_count") {
            None | Some(Value::Null) => None,
            Some(Value::Number(n)) => match n.as_u64().and_then(|v| u32::try_from(v).ok()) {
                Some(v) => Some(v),
                None => {
                    return Err(field_err(line_no, "token_count", "expected a non-negative integer"))
                }
            },
            Some(_) => return Err(field_err(line_no, "token_count", "expected an integer")),
        };
        let constituents = match obj.remove("constituents") {
            None | Some(Value::Null) => None,
            Some(v) => {
                let rows: Vec<ConstituentScore> = serde_json::from_value(v)
                    .map_err(|e| field_err(line_no, "constituents", e.to_string()))?;
                if rows.is_empty() {
                    return Err(field_err(line_no, "constituents", "list is empty"));
                }
                Some(rows)
            }
        };
        out.push((
            line_no,
            LabeledPassage {
                id,
                text,
                label,
                token_count,
                constituents,
            },
        ));
    }
    Ok(out)
}

fn read_csv<R: std::io::Read>(reader: R) -> Result<Vec<(usize, LabeledPassage)>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| IngestError::Malformed {
            line: 1,
            message: format!("unreadable header: {e}"),
        })?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let missing = |name: &str| field_err(1, name, "column missing from header");
    let id_col = column("id").ok_or_else(|| missing("id"))?;
    let text_col = column("text").ok_or_else(|| missing("text"))?;
    let label_col = column("label").ok_or_else(|| missing("label"))?;
    let count_col = column("token_count");

    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| IngestError::Malformed {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line_no = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let get = |col: usize| record.get(col).unwrap_or("");
        let id = get(id_col).to_string();
        if id.is_empty() {
            return Err(field_err(line_no, "id", "id is empty"));
        }
        let text = check_text(line_no, get(text_col).to_string())?;
        let raw_label = get(label_col).trim();
        let label = match raw_label.parse::<i64>() {
            Ok(v) => parse_label_int(line_no, v)?,
            Err(_) => {
                return Err(field_err(line_no, "label", format!("{raw_label:?} is not an integer")))
            }
        };
        let token_count = match count_col.map(|c| get(c).trim()) {
            None | Some("") => None,
            Some(raw) => Some(raw.parse::<u32>().map_err(|_| {
                field_err(line_no, "token_count", format!("{raw:?} is not a non-negative integer"))
            })?),
        };
        out.push((
            line_no,
            LabeledPassage {
                id,
                text,
                label,
                token_count,
                constituents: None,
            },
        ));
    }
    Ok(out)
}

fn check_unique(records: &[(usize, LabeledPassage)]) -> Result<()> {
    let mut seen: HashMap<&str, usize> = HashMap::with_capacity(records.len());
    for (line, p) in records {
        if let Some(&first_line) = seen.get(p.id.as_str()) {
            return Err(IngestError::DuplicateId {
                id: p.id.clone(),
                line: *line,
                first_line,
            });
        }
        seen.insert(&p.id, *line);
    }
    Ok(())
}

pub fn save_dataset(path: &Path, passages: &[LabeledPassage], format: DatasetFormat) -> Result<()> {
    let io_err = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    match format {
        DatasetFormat::Jsonl => {
            for p in passages {
                serde_json::to_writer(&mut w, p).map_err(|e| io_err(e.into()))?;
                w.write_all(b"\n").map_err(io_err)?;
            }
        }
        DatasetFormat::Csv => {
            let mut cw = csv::Writer::from_writer(&mut w);
            let to_io = |e: csv::Error| io_err(e.into());
            cw.write_record(["id", "text", "label", "token_count"]).map_err(to_io)?;
            for p in passages {
                let count = p.token_count.map(|c| c.to_string()).unwrap_or_default();
                cw.write_record([
                    p.id.as_str(),
                    p.text.as_str(),
                    &p.label.index().to_string(),
                    &count,
                ])
                .map_err(to_io)?;
            }
            cw.flush().map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// Train/validation/test partition of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<LabeledPassage>,
    pub validation: Vec<LabeledPassage>,
    pub test: Vec<LabeledPassage>,
    pub seed: u64,
    pub ratios: (f64, f64, f64),
}

impl DatasetSplit {
    /// Wraps a split that already exists on disk (e.g. a hub-provided one).
    pub fn from_parts(
        train: Vec<LabeledPassage>,
        validation: Vec<LabeledPassage>,
        test: Vec<LabeledPassage>,
    ) -> Self {
        let n = (train.len() + validation.len() + test.len()).max(1) as f64;
        let ratios = (
            train.len() as f64 / n,
            validation.len() as f64 / n,
            test.len() as f64 / n,
        );
        Self {
            train,
            validation,
            test,
            seed: 0,
            ratios,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn parts(&self) -> [(&'static str, &[LabeledPassage]); 3] {
        [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ]
    }
}

/// Loads three pre-split files as-is.
pub fn load_presplit(train: &Path, validation: &Path, test: &Path) -> Result<DatasetSplit> {
    Ok(DatasetSplit::from_parts(
        load_dataset_auto(train)?,
        load_dataset_auto(validation)?,
        load_dataset_auto(test)?,
    ))
}

/// Part sizes: train and validation are rounded, test takes the remainder.
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (a, b, c) = ratios;
    let finite = [a, b, c].iter().all(|r| r.is_finite() && *r > 0.0);
    if !finite || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(IngestError::BadRatios(ratios));
    }
    if n == 0 {
        return Err(IngestError::Empty);
    }
    let n_train = ((a * n as f64).round() as usize).min(n);
    let n_val = ((b * n as f64).round() as usize).min(n - n_train);
    let n_test = n - n_train - n_val;
    for (part, size) in [("train", n_train), ("validation", n_val), ("test", n_test)] {
        if size == 0 {
            return Err(IngestError::EmptyPart { part, n });
        }
    }
    Ok((n_train, n_val, n_test))
}

/// Shuffles with a seeded ChaCha8 stream and cuts at the rounded boundaries.
/// Not stratified.
pub fn split_dataset(
    passages: &[LabeledPassage],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit> {
    let (n_train, n_val, _) = split_sizes(passages.len(), ratios)?;
    let mut order: Vec<usize> = (0..passages.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let take = |range: std::ops::Range<usize>| -> Vec<LabeledPassage> {
        order[range].iter().map(|&i| passages[i].clone()).collect()
    };
    Ok(DatasetSplit {
        train: take(0..n_train),
        validation: take(n_train..n_train + n_val),
        test: take(n_train + n_val..passages.len()),
        seed,
        ratios,
    })
}
