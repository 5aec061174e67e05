//! Accuracy, macro-F1 and the report files built on them.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::AggregationStrategy;
use crate::ingest::LabeledPassage;
use crate::scorer::MatrixSource;
use crate::sentiment::Sentiment;

pub const DEFAULT_BIN_EDGES: [u32; 6] = [0, 16, 32, 64, 128, 256];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no examples to evaluate")]
    Empty,
    #[error("bin edges must be strictly ascending: {0:?}")]
    BadEdges(Vec<u32>),
    #[error("invalid bin edge {0:?}")]
    BadEdge(String),
    #[error("gold and predicted lists differ in length ({gold} vs {predicted})")]
    LengthMismatch { gold: usize, predicted: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

type Result<T> = std::result::Result<T, EvalError>;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// `counts[gold][predicted]`
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Sentiment, Sentiment)>) -> Self {
        let mut cm = Self::new();
        for (gold, pred) in pairs {
            cm.add(gold, pred);
        }
        cm
    }

    pub fn from_lists(gold: &[Sentiment], predicted: &[Sentiment]) -> Result<Self> {
        if gold.len() != predicted.len() {
            return Err(EvalError::LengthMismatch {
                gold: gold.len(),
                predicted: predicted.len(),
            });
        }
        Ok(Self::from_pairs(gold.iter().copied().zip(predicted.iter().copied())))
    }

    pub fn add(&mut self, gold: Sentiment, predicted: Sentiment) {
        self.counts[gold.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..3).map(|c| self.counts[c][c]).sum()
    }

    /// Per-class F1, with undefined precision or recall taken as 0.
    pub fn f1(&self, class: Sentiment) -> f64 {
        let c = class.index();
        let tp = self.counts[c][c] as f64;
        let predicted: u64 = (0..3).map(|g| self.counts[g][c]).sum();
        let actual: u64 = self.counts[c].iter().sum();
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = if actual == 0 { 0.0 } else { tp / actual as f64 };
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    match cm.total() {
        0 => Err(EvalError::Empty),
        total => Ok(cm.correct() as f64 / total as f64),
    }
}

/// Unweighted mean of the three per-class F1 scores.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.total() == 0 {
        return Err(EvalError::Empty);
    }
    Ok(Sentiment::ALL.iter().map(|&c| cm.f1(c)).sum::<f64>() / 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
}

impl Metrics {
    pub fn of(cm: &ConfusionMatrix) -> Result<Self> {
        Ok(Self {
            n: cm.total() as usize,
            accuracy: accuracy(cm)?,
            macro_f1: macro_f1(cm)?,
        })
    }
}

/// Whitespace-delimited token count.
pub fn whitespace_tokens(text: &str) -> u32 {
    text.split_whitespace().count() as u32
}

/// Stored count when present, otherwise `counter` on the text.
pub fn token_count(passage: &LabeledPassage, counter: impl Fn(&str) -> u32) -> u32 {
    passage.token_count.unwrap_or_else(|| counter(&passage.text))
}

/// Validates edges, prepending 0 when the first edge is above it.
pub fn normalize_edges(edges: &[u32]) -> Result<Vec<u32>> {
    if edges.is_empty() || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::BadEdges(edges.to_vec()));
    }
    let mut out = edges.to_vec();
    if out[0] > 0 {
        out.insert(0, 0);
    }
    Ok(out)
}

/// Parses `0,16,32`.
pub fn parse_edges(spec: &str) -> Result<Vec<u32>> {
    let edges = spec
        .split(',')
        .map(|s| s.trim().parse::<u32>().map_err(|_| EvalError::BadEdge(s.trim().to_string())))
        .collect::<Result<Vec<_>>>()?;
    normalize_edges(&edges)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub low: u32,
    /// `None` for the open-ended last bin.
    pub high: Option<u32>,
    pub n: usize,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedReport {
    pub bin_edges: Vec<u32>,
    pub bins: Vec<Bin>,
    pub overall: Metrics,
}

/// Groups `(gold, predicted, tokens)` triples into `[e_i, e_{i+1})` bins,
/// the last one unbounded.
pub fn binned_report(
    examples: impl IntoIterator<Item = (Sentiment, Sentiment, u32)>,
    bin_edges: &[u32],
) -> Result<BinnedReport> {
    let edges = normalize_edges(bin_edges)?;
    let mut matrices = vec![ConfusionMatrix::new(); edges.len()];
    let mut overall = ConfusionMatrix::new();
    for (gold, pred, tokens) in examples {
        let bin = edges.partition_point(|&e| e <= tokens) - 1;
        matrices[bin].add(gold, pred);
        overall.add(gold, pred);
    }
    let overall = Metrics::of(&overall)?;
    let bins = matrices
        .into_iter()
        .enumerate()
        .map(|(i, cm)| Bin {
            low: edges[i],
            high: edges.get(i + 1).copied(),
            n: cm.total() as usize,
            accuracy: accuracy(&cm).ok(),
            macro_f1: macro_f1(&cm).ok(),
            confusion: cm,
        })
        .collect();
    Ok(BinnedReport {
        bin_edges: edges,
        bins,
        overall,
    })
}

/// Bins passages paired with predicted labels.
pub fn binned_passages<'a>(
    examples: impl IntoIterator<Item = (&'a LabeledPassage, Sentiment)>,
    bin_edges: &[u32],
    counter: impl Fn(&str) -> u32,
) -> Result<BinnedReport> {
    binned_report(
        examples
            .into_iter()
            .map(|(p, pred)| (p.label, pred, token_count(p, &counter))),
        bin_edges,
    )
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

pub fn write_binned_csv(path: &Path, report: &BinnedReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let mut out = String::from("bin_low,bin_high,n,accuracy,macro_f1\n");
    for b in &report.bins {
        let high = b.high.map(|h| h.to_string()).unwrap_or_else(|| "inf".into());
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            b.low,
            high,
            b.n,
            fmt_opt(b.accuracy),
            fmt_opt(b.macro_f1)
        );
    }
    w.write_all(out.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn write_binned_json(path: &Path, report: &BinnedReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    serde_json::to_writer_pretty(&mut w, report).map_err(|e| io_err(path)(e.into()))?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Bar chart of accuracy per bin.
pub fn binned_svg(report: &BinnedReport, title: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 360.0;
    const LEFT: f64 = 50.0;
    const BOTTOM: f64 = 50.0;
    const TOP: f64 = 40.0;
    let plot_w = W - LEFT - 20.0;
    let plot_h = H - TOP - BOTTOM;
    let slot = plot_w / report.bins.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        xml_escape(title)
    );
    let base = TOP + plot_h;
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
        LEFT + plot_w
    );
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{base}" stroke="black"/>"#);
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = base - tick * plot_h;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{tick:.2}</text>"#,
            LEFT - 5.0,
            y + 4.0
        );
    }
    for (i, b) in report.bins.iter().enumerate() {
        let x = LEFT + i as f64 * slot;
        if let Some(acc) = b.accuracy {
            let h = acc * plot_h;
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="steelblue"><title>n={} accuracy={acc:.4}</title></rect>"#,
                x + slot * 0.1,
                base - h,
                slot * 0.8,
                h,
                b.n
            );
        }
        let label = match b.high {
            Some(h) => format!("{}-{}", b.low, h),
            None => format!("{}+", b.low),
        };
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{label}</text>"#,
            x + slot / 2.0,
            base + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">passage length (tokens)</text>"#,
        LEFT + plot_w / 2.0,
        H - 10.0
    );
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Passages of one dataset split to evaluate on.
#[derive(Debug, Clone, Copy)]
pub struct EvalSet<'a> {
    pub dataset: &'a str,
    pub split: &'a str,
    pub passages: &'a [LabeledPassage],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub strategy: String,
    pub dataset: String,
    pub split: String,
    /// `Err` holds the failure message for a strategy that could not run.
    pub metrics: std::result::Result<Metrics, String>,
}

/// Runs every strategy over every set. Rows come out strategy-major in input
/// order regardless of how the work is scheduled.
pub fn compare_strategies(
    sets: &[EvalSet<'_>],
    strategies: &[AggregationStrategy],
    source: &dyn MatrixSource,
) -> Vec<ResultRow> {
    let jobs: Vec<(&AggregationStrategy, &EvalSet<'_>)> =
        strategies.iter().flat_map(|s| sets.iter().map(move |set| (s, set))).collect();
    jobs.par_iter()
        .map(|(strategy, set)| ResultRow {
            strategy: strategy.name().to_string(),
            dataset: set.dataset.to_string(),
            split: set.split.to_string(),
            metrics: evaluate(strategy, set.passages, source),
        })
        .collect()
}

fn evaluate(
    strategy: &AggregationStrategy,
    passages: &[LabeledPassage],
    source: &dyn MatrixSource,
) -> std::result::Result<Metrics, String> {
    let mut cm = ConfusionMatrix::new();
    for p in passages {
        let matrix = source.matrix_for(p).map_err(|e| e.to_string())?;
        let agg = strategy.apply(&matrix).map_err(|e| e.to_string())?;
        cm.add(p.label, agg.label);
    }
    Metrics::of(&cm).map_err(|e| e.to_string())
}

/// Writes `strategy,dataset,split,n,accuracy,macro_f1`; failed rows keep
/// empty metric fields.
pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let mut out = String::from("strategy,dataset,split,n,accuracy,macro_f1\n");
    for r in rows {
        match &r.metrics {
            Ok(m) => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{:.6},{:.6}",
                    r.strategy, r.dataset, r.split, m.n, m.accuracy, m.macro_f1
                );
            }
            Err(_) => {
                let _ = writeln!(out, "{},{},{},0,,", r.strategy, r.dataset, r.split);
            }
        }
    }
    w.write_all(out.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use Sentiment::*;

    fn cm(gold: &[u8], pred: &[u8]) -> ConfusionMatrix {
        let g: Vec<_> = gold.iter().map(|&x| Sentiment::try_from(x).unwrap()).collect();
        let p: Vec<_> = pred.iter().map(|&x| Sentiment::try_from(x).unwrap()).collect();
        ConfusionMatrix::from_lists(&g, &p).unwrap()
    }

    #[test]
    fn worked_example() {
        let m = cm(&[0, 1, 1, 2], &[0, 1, 2, 2]);
        assert_eq!(accuracy(&m).unwrap(), 0.75);
        assert!((macro_f1(&m).unwrap() - 7.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn extremes() {
        let m = cm(&[0, 1, 2], &[0, 1, 2]);
        assert_eq!(accuracy(&m).unwrap(), 1.0);
        assert_eq!(macro_f1(&m).unwrap(), 1.0);
        let m = cm(&[0, 0, 0], &[1, 1, 1]);
        assert_eq!(accuracy(&m).unwrap(), 0.0);
        assert_eq!(macro_f1(&m).unwrap(), 0.0);
    }

    #[test]
    fn absent_class_counts_as_zero() {
        let m = cm(&[0, 2], &[0, 2]);
        assert!((macro_f1(&m).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_is_error() {
        assert!(matches!(accuracy(&ConfusionMatrix::new()), Err(EvalError::Empty)));
        assert!(matches!(macro_f1(&ConfusionMatrix::new()), Err(EvalError::Empty)));
    }

    #[test]
    fn length_mismatch() {
        assert!(ConfusionMatrix::from_lists(&[Negative], &[]).is_err());
    }

    #[test]
    fn edges() {
        assert_eq!(parse_edges("0,50,100").unwrap(), vec![0, 50, 100]);
        assert_eq!(parse_edges("10,20").unwrap(), vec![0, 10, 20]);
        assert!(parse_edges("0,50,50").is_err());
        assert!(parse_edges("0,x").is_err());
    }

    #[test]
    fn bins_are_half_open() {
        let ex = [(Negative, Negative, 0), (Negative, Neutral, 49), (Neutral, Neutral, 50), (Positive, Positive, 1000)];
        let r = binned_report(ex, &[0, 50, 100]).unwrap();
        assert_eq!(r.bins.iter().map(|b| b.n).collect::<Vec<_>>(), vec![2, 1, 1]);
        assert_eq!(r.bins[0].accuracy, Some(0.5));
        assert_eq!(r.bins[2].high, None);
        assert_eq!(r.overall.n, 4);
    }

    #[test]
    fn empty_bins_have_no_metrics() {
        let r = binned_report([(Negative, Negative, 3)], &DEFAULT_BIN_EDGES).unwrap();
        assert_eq!(r.bins.len(), 6);
        assert_eq!(r.bins[1].n, 0);
        assert_eq!(r.bins[1].accuracy, None);
    }

    #[test]
    fn stored_token_count_wins() {
        let mut p = LabeledPassage::new("a", "one two three", Neutral);
        assert_eq!(token_count(&p, whitespace_tokens), 3);
        p.token_count = Some(40);
        assert_eq!(token_count(&p, whitespace_tokens), 40);
    }

    #[test]
    fn svg_has_one_bar_per_nonempty_bin() {
        let r = binned_report([(Negative, Negative, 3), (Neutral, Negative, 300)], &[0, 16, 32]).unwrap();
        let svg = binned_svg(&r, "a < b");
        assert_eq!(svg.matches("<rect").count(), 2);
        assert!(svg.contains("a &lt; b"));
    }
}
