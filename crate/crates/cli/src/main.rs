use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dcsent::aggregate::{self, AggregationStrategy, Prediction, DEFAULT_NEUTRAL_THRESHOLD};
use dcsent::eval::{self, ConfusionMatrix, Metrics, ResultRow};
use dcsent::features::{self, featurize};
use dcsent::ingest::{self, DatasetFormat};
use dcsent::mlp::{self, HyperparamGrid, MlpHyperparams};
use dcsent::scorer::{self, LexiconScorer, MatrixSource, SegmentingSource};
use dcsent::{FeatureVector, LabeledPassage, ScoreMatrix, Segmenter, Sentiment};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "dcsent", version, about = "Divide-and-conquer passage sentiment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split passages into sentences.
    Segment(SegmentArgs),
    /// Score every sentence with the lexicon scorer.
    Score(ScoreArgs),
    /// Write the 19-feature dump for a dataset.
    Featurize(FeaturizeArgs),
    /// Seeded train/validation/test split.
    Split(SplitArgs),
    /// Train one MLP aggregator.
    Train(TrainArgs),
    /// Exhaustive hyperparameter search for the MLP aggregator.
    Grid(GridArgs),
    /// Aggregate score matrices into passage predictions.
    Run(RunArgs),
    /// Accuracy, macro-F1 and length-binned reports for predictions.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

impl From<Format> for DatasetFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => DatasetFormat::Csv,
            Format::Jsonl => DatasetFormat::Jsonl,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyName {
    Average,
    Awon,
    Mlp,
}

#[derive(Args)]
struct DatasetArgs {
    /// Dataset file (.jsonl or .csv).
    #[arg(long)]
    input: PathBuf,
    /// Dataset format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args)]
struct SegmenterArgs {
    /// Replacement abbreviation list, one word per line.
    #[arg(long)]
    abbrev_file: Option<PathBuf>,
}

#[derive(Args)]
struct SegmentArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    #[command(flatten)]
    segmenter: SegmenterArgs,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    #[command(flatten)]
    segmenter: SegmenterArgs,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct FeaturizeArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    #[command(flatten)]
    segmenter: SegmenterArgs,
    /// Precomputed score matrices; otherwise sentences are lexicon-scored.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Directory for train/validation/test files.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Train, validation and test shares.
    #[arg(long, default_value = "0.7,0.1,0.2")]
    ratios: String,
}

#[derive(Args)]
struct TrainingInputs {
    /// Training features: a feature dump CSV or a dataset.
    #[arg(long)]
    train: PathBuf,
    /// Validation features: a feature dump CSV or a dataset.
    #[arg(long)]
    val: PathBuf,
    /// Score matrices for dataset inputs.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[command(flatten)]
    segmenter: SegmenterArgs,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 200)]
    batch_size: usize,
    #[arg(long, default_value_t = 200)]
    max_epochs: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    inputs: TrainingInputs,
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 50)]
    patience: usize,
    /// Model file to write.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    inputs: TrainingInputs,
    /// Grid, e.g. "h=16,32,64,128,256;tol=1e-2..1e-6;patience=10..50".
    #[arg(long)]
    grid: Option<String>,
    /// Worker threads for grid cells.
    #[arg(long)]
    jobs: Option<usize>,
    /// Best model file to write.
    #[arg(long)]
    output: PathBuf,
    /// Per-cell CSV report.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    #[command(flatten)]
    segmenter: SegmenterArgs,
    /// Precomputed score matrices; otherwise sentences are lexicon-scored.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "average")]
    strategy: StrategyName,
    /// AWON neutral threshold.
    #[arg(long, default_value_t = DEFAULT_NEUTRAL_THRESHOLD)]
    threshold: f64,
    /// Model file for --strategy mlp.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Prediction JSONL from `run`.
    #[arg(long)]
    predictions: PathBuf,
    /// Report directory.
    #[arg(long)]
    output: PathBuf,
    /// Length bin edges in tokens.
    #[arg(long, default_value = "0,16,32,64,128,256")]
    bins: String,
    /// Also draw accuracy per bin as SVG.
    #[arg(long)]
    svg: bool,
    /// Dataset name for the results table; defaults to the file stem.
    #[arg(long)]
    dataset_name: Option<String>,
    #[arg(long, default_value = "test")]
    split: String,
}

enum CliError {
    Usage(String),
    Internal(String),
}

impl CliError {
    fn usage(e: impl std::fmt::Display) -> Self {
        Self::Usage(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Segment(a) => cmd_segment(a),
        Command::Score(a) => cmd_score(a),
        Command::Featurize(a) => cmd_featurize(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            for line in msg.lines() {
                eprintln!("error: {line}");
            }
            ExitCode::from(2)
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("error: internal: {msg}");
            ExitCode::from(1)
        }
    }
}

fn require_file(path: &Path) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{}: no such file", path.display())))
    }
}

fn load_passages(args: &DatasetArgs) -> CliResult<Vec<LabeledPassage>> {
    require_file(&args.input)?;
    let loaded = match args.format {
        Some(f) => ingest::load_dataset(&args.input, f.into()),
        None => ingest::load_dataset_auto(&args.input),
    };
    loaded.map_err(|e| CliError::Usage(format!("{}: {e}", args.input.display())))
}

fn build_segmenter(args: &SegmenterArgs) -> CliResult<Segmenter> {
    match &args.abbrev_file {
        Some(path) => {
            require_file(path)?;
            Segmenter::from_abbreviation_file(path).map_err(CliError::usage)
        }
        None => Ok(Segmenter::default()),
    }
}

fn load_scores(path: &Option<PathBuf>) -> CliResult<Option<BTreeMap<String, ScoreMatrix>>> {
    match path {
        Some(p) => {
            require_file(p)?;
            scorer::load_score_matrices(p)
                .map(Some)
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
        }
        None => Ok(None),
    }
}

fn matrices_for(
    passages: &[LabeledPassage],
    scores: Option<&BTreeMap<String, ScoreMatrix>>,
    segmenter: &Segmenter,
) -> CliResult<Vec<ScoreMatrix>> {
    let lexicon = LexiconScorer::default();
    let segmenting = SegmentingSource {
        segmenter,
        scorer: &lexicon,
    };
    let source: &dyn MatrixSource = match scores {
        Some(s) => s,
        None => &segmenting,
    };
    passages
        .iter()
        .map(|p| source.matrix_for(p).map_err(CliError::usage))
        .collect()
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> CliResult {
    let io = |e: std::io::Error| CliError::Usage(format!("{}: {e}", path.display()));
    let mut w = create(path)?;
    for r in records {
        serde_json::to_writer(&mut w, &r).map_err(|e| CliError::Internal(e.to_string()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Serialize)]
struct SegmentRecord<'a> {
    passage_id: &'a str,
    spans: Vec<[usize; 2]>,
    texts: Vec<String>,
}

fn cmd_segment(args: SegmentArgs) -> CliResult {
    let passages = load_passages(&args.dataset)?;
    let segmenter = build_segmenter(&args.segmenter)?;
    let mut records = Vec::with_capacity(passages.len());
    for p in &passages {
        let spans = segmenter
            .segment(&p.text)
            .map_err(|e| CliError::Usage(format!("passage {:?}: {e}", p.id)))?;
        records.push(SegmentRecord {
            passage_id: &p.id,
            spans: spans.iter().map(|s| [s.start, s.end]).collect(),
            texts: spans.into_iter().map(|s| s.text).collect(),
        });
    }
    write_jsonl(&args.output, records)?;
    log::info!("segmented {} passages", passages.len());
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> CliResult {
    let passages = load_passages(&args.dataset)?;
    let segmenter = build_segmenter(&args.segmenter)?;
    let matrices = matrices_for(&passages, None, &segmenter)?;
    scorer::write_score_matrices(&args.output, &matrices).map_err(CliError::usage)
}

fn labeled_features(
    passages: &[LabeledPassage],
    matrices: &[ScoreMatrix],
) -> Vec<(FeatureVector, Sentiment)> {
    passages
        .iter()
        .zip(matrices)
        .map(|(p, m)| (featurize(m), p.label))
        .collect()
}

fn cmd_featurize(args: FeaturizeArgs) -> CliResult {
    let passages = load_passages(&args.dataset)?;
    let segmenter = build_segmenter(&args.segmenter)?;
    let scores = load_scores(&args.scores)?;
    let matrices = matrices_for(&passages, scores.as_ref(), &segmenter)?;
    let rows = labeled_features(&passages, &matrices);
    features::write_feature_csv(
        &args.output,
        passages.iter().zip(&rows).map(|(p, (f, y))| (p.id.as_str(), f, *y)),
    )
    .map_err(|e| CliError::Usage(format!("{}: {e}", args.output.display())))
}

fn parse_ratios(spec: &str) -> CliResult<(f64, f64, f64)> {
    let parts: Vec<f64> = spec
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("--ratios {spec:?}: expected three numbers")))?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(CliError::Usage(format!("--ratios {spec:?}: expected three numbers"))),
    }
}

fn cmd_split(args: SplitArgs) -> CliResult {
    let ratios = parse_ratios(&args.ratios)?;
    let passages = load_passages(&args.dataset)?;
    let split = ingest::split_dataset(&passages, ratios, args.seed).map_err(CliError::usage)?;
    std::fs::create_dir_all(&args.output)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.output.display())))?;
    let format = match args.dataset.format {
        Some(f) => f.into(),
        None => DatasetFormat::from_path(&args.dataset.input).map_err(CliError::usage)?,
    };
    let ext = match format {
        DatasetFormat::Csv => "csv",
        DatasetFormat::Jsonl => "jsonl",
    };
    for (name, part) in split.parts() {
        let path = args.output.join(format!("{name}.{ext}"));
        ingest::save_dataset(&path, part, format).map_err(CliError::usage)?;
    }
    println!(
        "train {} / validation {} / test {} (seed {})",
        split.train.len(),
        split.validation.len(),
        split.test.len(),
        args.seed
    );
    Ok(())
}

fn training_set(path: &Path, inputs: &TrainingInputs) -> CliResult<Vec<(FeatureVector, Sentiment)>> {
    require_file(path)?;
    if features::is_feature_csv(path) {
        let rows = features::read_feature_csv(path).map_err(CliError::Usage)?;
        return Ok(rows.into_iter().map(|(_, f, y)| (f, y)).collect());
    }
    let passages = ingest::load_dataset_auto(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let segmenter = build_segmenter(&inputs.segmenter)?;
    let scores = load_scores(&inputs.scores)?;
    let matrices = matrices_for(&passages, scores.as_ref(), &segmenter)?;
    Ok(labeled_features(&passages, &matrices))
}

fn base_hyperparams(inputs: &TrainingInputs) -> MlpHyperparams {
    MlpHyperparams {
        learning_rate: inputs.learning_rate,
        batch_size: inputs.batch_size,
        max_epochs: inputs.max_epochs,
        seed: inputs.seed,
        ..MlpHyperparams::default()
    }
}

fn cmd_train(args: TrainArgs) -> CliResult {
    let train = training_set(&args.inputs.train, &args.inputs)?;
    let val = training_set(&args.inputs.val, &args.inputs)?;
    let hp = MlpHyperparams {
        hidden_size: args.hidden,
        early_stop_tolerance: args.tol,
        patience_epochs: args.patience,
        ..base_hyperparams(&args.inputs)
    };
    let model = mlp::train(&train, &val, &hp).map_err(CliError::usage)?;
    mlp::save_model(&model, &args.output).map_err(CliError::usage)?;
    println!(
        "best val accuracy {:.4} at epoch {} of {}",
        model.best_val_accuracy().unwrap_or(0.0),
        model.best_epoch.unwrap_or(0),
        model.epochs_run()
    );
    Ok(())
}

fn cmd_grid(args: GridArgs) -> CliResult {
    let grid = match &args.grid {
        Some(spec) => HyperparamGrid::parse(spec).map_err(CliError::usage)?,
        None => HyperparamGrid::standard(),
    };
    if args.jobs == Some(0) {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let train = training_set(&args.inputs.train, &args.inputs)?;
    let val = training_set(&args.inputs.val, &args.inputs)?;
    let base = base_hyperparams(&args.inputs);
    let result = mlp::grid_search(&train, &val, &grid, &base, args.jobs).map_err(CliError::usage)?;
    if let Some(report) = &args.report {
        mlp::write_grid_report(report, &result.table).map_err(CliError::usage)?;
    }
    mlp::save_model(&result.model, &args.output).map_err(CliError::usage)?;
    let failed = result.table.iter().filter(|c| c.error.is_some()).count();
    println!(
        "best: hidden={} tol={:e} patience={} val_accuracy={:.4} ({} cells, {} failed)",
        result.best.hidden_size,
        result.best.early_stop_tolerance,
        result.best.patience_epochs,
        result.model.best_val_accuracy().unwrap_or(0.0),
        result.table.len(),
        failed
    );
    Ok(())
}

fn cmd_run(args: RunArgs) -> CliResult {
    let strategy = match args.strategy {
        StrategyName::Average => AggregationStrategy::Average,
        StrategyName::Awon => AggregationStrategy::awon(args.threshold).map_err(CliError::usage)?,
        StrategyName::Mlp => {
            let path = args
                .model
                .as_ref()
                .ok_or_else(|| CliError::Usage("--strategy mlp requires --model".into()))?;
            require_file(path)?;
            AggregationStrategy::mlp(mlp::load_model(path).map_err(CliError::usage)?)
        }
    };
    let passages = load_passages(&args.dataset)?;
    let segmenter = build_segmenter(&args.segmenter)?;
    let scores = load_scores(&args.scores)?;
    let matrices = matrices_for(&passages, scores.as_ref(), &segmenter)?;
    let mut predictions = Vec::with_capacity(passages.len());
    for m in &matrices {
        let agg = strategy.apply(m).map_err(CliError::usage)?;
        predictions.push(Prediction::new(&m.passage_id, strategy.name(), &agg));
    }
    aggregate::write_predictions(&args.output, &predictions).map_err(CliError::usage)
}

fn id_mismatch(strategy: &str, dataset: &BTreeSet<&str>, predicted: &BTreeSet<&str>) -> Option<String> {
    let missing: Vec<&str> = dataset.difference(predicted).copied().collect();
    let extra: Vec<&str> = predicted.difference(dataset).copied().collect();
    if missing.is_empty() && extra.is_empty() {
        return None;
    }
    let offenders: Vec<String> = missing
        .iter()
        .map(|id| format!("missing prediction: {id}"))
        .chain(extra.iter().map(|id| format!("unknown passage: {id}")))
        .take(10)
        .collect();
    Some(format!(
        "{strategy}: {} missing and {} unknown ids\n{}",
        missing.len(),
        extra.len(),
        offenders.join("\n")
    ))
}

fn cmd_eval(args: EvalArgs) -> CliResult {
    let edges = eval::parse_edges(&args.bins).map_err(|e| CliError::Usage(format!("--bins: {e}")))?;
    let passages = load_passages(&args.dataset)?;
    require_file(&args.predictions)?;
    let predictions = aggregate::read_predictions(&args.predictions)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.predictions.display())))?;
    if predictions.is_empty() {
        return Err(CliError::Usage(format!("{}: no predictions", args.predictions.display())));
    }

    let mut by_strategy: BTreeMap<&str, BTreeMap<&str, Sentiment>> = BTreeMap::new();
    for p in &predictions {
        let prev = by_strategy
            .entry(p.strategy.as_str())
            .or_default()
            .insert(p.passage_id.as_str(), p.label);
        if prev.is_some() {
            return Err(CliError::Usage(format!(
                "{}: duplicate prediction for {:?} ({})",
                args.predictions.display(),
                p.passage_id,
                p.strategy
            )));
        }
    }
    let dataset_ids: BTreeSet<&str> = passages.iter().map(|p| p.id.as_str()).collect();
    for (strategy, preds) in &by_strategy {
        let predicted: BTreeSet<&str> = preds.keys().copied().collect();
        if let Some(msg) = id_mismatch(strategy, &dataset_ids, &predicted) {
            return Err(CliError::Usage(msg));
        }
    }

    std::fs::create_dir_all(&args.output)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.output.display())))?;
    let dataset_name = args.dataset_name.clone().unwrap_or_else(|| {
        args.dataset
            .input
            .file_stem()
            .map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned())
    });
    let mut rows = Vec::new();
    for (strategy, preds) in &by_strategy {
        let examples: Vec<(&LabeledPassage, Sentiment)> = passages.iter().map(|p| (p, preds[p.id.as_str()])).collect();
        let cm = ConfusionMatrix::from_pairs(examples.iter().map(|(p, y)| (p.label, *y)));
        let metrics = Metrics::of(&cm).map_err(CliError::usage)?;
        rows.push(ResultRow {
            strategy: strategy.to_string(),
            dataset: dataset_name.clone(),
            split: args.split.clone(),
            metrics: Ok(metrics),
        });
        let report = eval::binned_passages(examples, &edges, eval::whitespace_tokens).map_err(CliError::usage)?;
        let stem = args.output.join(format!("binned_{strategy}"));
        eval::write_binned_csv(&stem.with_extension("csv"), &report).map_err(CliError::usage)?;
        eval::write_binned_json(&stem.with_extension("json"), &report).map_err(CliError::usage)?;
        if args.svg {
            let svg = eval::binned_svg(&report, &format!("{strategy}: accuracy by passage length"));
            std::fs::write(stem.with_extension("svg"), svg)
                .map_err(|e| CliError::Usage(format!("{}: {e}", stem.display())))?;
        }
        println!(
            "{strategy}: n={} accuracy={:.4} macro_f1={:.4}",
            metrics.n, metrics.accuracy, metrics.macro_f1
        );
    }
    eval::write_results_csv(&args.output.join("results.csv"), &rows).map_err(CliError::usage)
}
