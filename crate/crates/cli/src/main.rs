mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rayon::prelude::*;

use matchbench::dataset::{
    generate_synthetic_sequence, load_dataset, textured_image, Dataset, DatasetError, ExclusionList,
};
use matchbench::eval::{
    check_invariants, evaluate, feature_file_name, run_sweep, sweep_values_from_spec, EvalError,
    ExtractorFeatures, FeatureDir, MatchDir, Source, SweepResult,
};
use matchbench::extractor::{ExtractError, Extractor};
use matchbench::feature_io::{
    load_features, load_scored_matches, save_features, save_scored_matches, FeatureIoError, Metric,
    ScoredMatch, ScoredMatchFile,
};
use matchbench::matching::{match_with_mode, MatchError, MethodKind, RatioMode};
use matchbench::report::{emit_report, from_csv, from_json, table, ReportError, ReportFormat};

use config::{DatasetArgs, RunArgs, SourceMode, DEFAULT_SWEEP};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Missing(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Internal(_) => 1,
            CliError::Config(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        let msg = e.to_string();
        match e {
            DatasetError::MissingFile(_) | DatasetError::EmptyDataset(_) => CliError::Missing(msg),
            DatasetError::Io { ref source, .. } if source.kind() == std::io::ErrorKind::NotFound => CliError::Missing(msg),
            DatasetError::Io { .. } | DatasetError::Decode(_) | DatasetError::ParseError { .. } => CliError::Io(msg),
            DatasetError::InvalidArgument(_) => CliError::Config(msg),
            _ => CliError::Internal(msg),
        }
    }
}

impl From<FeatureIoError> for CliError {
    fn from(e: FeatureIoError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ExtractError> for CliError {
    fn from(e: ExtractError) -> Self {
        match e {
            ExtractError::InvalidConfig(_) => CliError::Config(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<MatchError> for CliError {
    fn from(e: MatchError) -> Self {
        match e {
            MatchError::Descriptor(d) => d.into(),
            MatchError::OutOfRange(_) | MatchError::InvalidRatio(_) => CliError::Config(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let msg = e.to_string();
        match e {
            EvalError::MissingFeatures { .. } => CliError::Missing(msg),
            EvalError::Load { .. } => CliError::Io(msg),
            EvalError::Dataset(d) => d.into(),
            EvalError::Extract(x) => x.into(),
            EvalError::Match(m) => m.into(),
            EvalError::InvalidGrid(_) | EvalError::InvalidConfig(_) => CliError::Config(msg),
            EvalError::EmptyResults | EvalError::InvariantViolation(_) => CliError::Internal(msg),
        }
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

/// Benchmark harness for local-feature matchers on homography datasets.
#[derive(Parser, Debug)]
#[command(name = "matchbench", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the built-in extractor on every dataset image.
    Extract(ExtractArgs),
    /// Match two feature files and write a scored match file.
    Match(MatchArgs),
    /// Evaluate a single sweep value.
    Evaluate(RunArgs),
    /// Evaluate every value of a sweep and write all report formats.
    Sweep(RunArgs),
    /// Re-render a saved JSON or CSV sweep result.
    Report(ReportArgs),
    /// Convert feature or match files between JSON and binary.
    Convert(ConvertArgs),
    /// Write a synthetic viewpoint dataset.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Output directory for `<seq>_<k>.feat` files.
    #[arg(long)]
    out: PathBuf,
    /// Write the JSON mirror (`.json`) instead of binary.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct MatchArgs {
    /// Reference image features.
    #[arg(long)]
    a: PathBuf,
    /// Target image features.
    #[arg(long)]
    b: PathBuf,
    /// Ratio-test threshold in (0, 1].
    #[arg(long, default_value_t = 0.8)]
    ratio: f64,
    #[arg(long, value_enum, default_value = "bidirectional")]
    ratio_mode: config::RatioModeArg,
    /// Output match file (`.mtch`, or `.json` for the JSON mirror).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Table,
    Csv,
    Json,
    Plotdata,
    All,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Sweep result as `.json` or `.csv`.
    #[arg(long)]
    input: PathBuf,
    /// Output directory; without it the table goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Formats to write, comma separated.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "all")]
    format: Vec<FormatArg>,
    /// File stem for written reports.
    #[arg(long, default_value = "report")]
    stem: String,
}

#[derive(Args, Debug)]
struct ConvertArgs {
    #[arg(long)]
    input: PathBuf,
    /// Output path; a `.json` extension selects the JSON mirror.
    #[arg(long)]
    output: PathBuf,
    /// Treat the files as scored matches rather than features.
    #[arg(long)]
    matches: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output dataset root.
    #[arg(long)]
    out: PathBuf,
    /// Number of sequences.
    #[arg(long, default_value_t = 2)]
    sequences: u64,
    /// Seed of the first sequence; later ones count up.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Corner displacement bound in px.
    #[arg(long, default_value_t = 20.0)]
    warp: f64,
    #[arg(long, default_value_t = 256)]
    width: u32,
    #[arg(long, default_value_t = 256)]
    height: u32,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Extract(a) => with_jobs(a.data.jobs, || cmd_extract(&a)),
        Command::Match(a) => cmd_match(&a),
        Command::Evaluate(a) => {
            let a = a.merged()?;
            with_jobs(a.data.jobs, || cmd_run(&a, false))
        }
        Command::Sweep(a) => {
            let a = a.merged()?;
            with_jobs(a.data.jobs, || cmd_run(&a, true))
        }
        Command::Report(a) => cmd_report(&a),
        Command::Convert(a) => cmd_convert(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn with_jobs<T>(jobs: Option<usize>, f: impl FnOnce() -> Result<T, CliError> + Send) -> Result<T, CliError>
where
    T: Send,
{
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(|e| CliError::Internal(e.to_string()))?;
    pool.install(f)
}

fn open_dataset(data: &DatasetArgs) -> Result<Dataset, CliError> {
    let root = data.dataset_root()?;
    let exclusions = if data.no_exclusions.unwrap_or(false) {
        ExclusionList::none()
    } else if let Some(p) = &data.exclusions {
        ExclusionList::from_file(p)?
    } else {
        ExclusionList::default()
    };
    let d = load_dataset(root, &exclusions)?;
    info!("{}: {} sequences, {} pairs", root.display(), d.sequences.len(), d.pair_count());
    Ok(d)
}

fn cmd_extract(a: &ExtractArgs) -> Result<(), CliError> {
    let d = open_dataset(&a.data)?;
    let ex = Extractor::new(a.data.fast_config(), a.data.pattern_seed.unwrap_or(matchbench::extractor::DEFAULT_PATTERN_SEED))?;
    std::fs::create_dir_all(&a.out).map_err(io_error(&a.out))?;
    let jobs: Vec<_> = d
        .sequences
        .iter()
        .flat_map(|s| (1..=s.images.len()).map(move |i| (s, i)))
        .collect();
    jobs.par_iter().try_for_each(|&(seq, i)| {
        let src = &seq.images[i - 1];
        // an image that cannot be decoded is a bad input, not an I/O failure
        let img = src
            .load()
            .map_err(|e| CliError::Config(format!("cannot read image {}: {e}", src.describe())))?;
        let id = seq.image_id(i);
        let f = ex.extract(&img, &id)?;
        let name = if a.json { format!("{id}.json") } else { feature_file_name(&id) };
        save_features(&f, &a.out.join(name))?;
        Ok::<_, CliError>(())
    })?;
    for s in &d.sequences {
        info!("extracted {}", s.name);
    }
    println!("wrote {} feature files to {}", jobs.len(), a.out.display());
    Ok(())
}

fn cmd_match(a: &MatchArgs) -> Result<(), CliError> {
    let fa = load_features(&a.a)?;
    let fb = load_features(&a.b)?;
    let kind = fa.descriptors.kind();
    if kind != fb.descriptors.kind() {
        return Err(CliError::Config(format!(
            "{} and {} hold different descriptor kinds",
            a.a.display(),
            a.b.display()
        )));
    }
    let mode = match a.ratio_mode {
        config::RatioModeArg::Bidirectional => RatioMode::Bidirectional,
        config::RatioModeArg::Unidirectional => RatioMode::Unidirectional,
    };
    let m = match_with_mode(&fa, &fb, a.ratio, Metric::for_kind(kind), mode)?;
    let entries = m
        .matches
        .iter()
        .map(|x| {
            let (p, q) = (&fa.keypoints[x.index_a], &fb.keypoints[x.index_b]);
            ScoredMatch {
                x1: p.x,
                y1: p.y,
                x2: q.x,
                y2: q.y,
                confidence: (1.0 - x.ratio_a.max(x.ratio_b)).clamp(0.0, 1.0) as f32,
            }
        })
        .collect();
    let file = ScoredMatchFile {
        image_id_a: fa.image_id.clone(),
        image_id_b: fb.image_id.clone(),
        entries,
    };
    save_scored_matches(&file, &a.out)?;
    println!("{} matches", m.len());
    Ok(())
}

fn cmd_run(a: &RunArgs, sweep: bool) -> Result<(), CliError> {
    let values = if sweep {
        if a.threshold.is_some() {
            return Err(CliError::Config("sweep takes --sweep, not --threshold".into()));
        }
        sweep_values_from_spec(a.sweep.as_deref().unwrap_or(DEFAULT_SWEEP))
            .map_err(|e| CliError::Config(format!("bad --sweep: {e}")))?
    } else {
        if a.sweep.is_some() {
            return Err(CliError::Config("evaluate takes --threshold, not --sweep".into()));
        }
        vec![a.threshold.ok_or_else(|| CliError::Config("--threshold is required".into()))?]
    };
    let resolved = a.with_defaults();
    let mode = resolved.source_mode()?;
    let opts = resolved.sweep_options()?;
    let kind = MethodKind::from(resolved.method.expect("defaulted"));
    let name = resolved.name.clone().expect("defaulted");
    let output = resolved
        .output
        .clone()
        .ok_or_else(|| CliError::Config("--output is required".into()))?;
    let d = open_dataset(&resolved.data)?;

    let extractor;
    let feature_dir;
    let match_dir;
    let source = match &mode {
        SourceMode::Builtin => {
            extractor = ExtractorFeatures {
                extractor: Extractor::new(
                    resolved.data.fast_config(),
                    resolved.data.pattern_seed.expect("defaulted"),
                )?,
            };
            Source::Features(&extractor)
        }
        SourceMode::Features(p) => {
            feature_dir = FeatureDir::new(p);
            Source::Features(&feature_dir)
        }
        SourceMode::Matches(p) => {
            match_dir = MatchDir::new(p);
            Source::Matches(&match_dir)
        }
    };
    let result = if sweep {
        run_sweep(&d, source, kind, &name, &values, &opts)?
    } else {
        evaluate(&d, source, kind, &name, values[0], &opts)?
    };
    check_invariants(&result, kind).map_err(CliError::Internal)?;
    write_outputs(&result, &resolved, &output)?;
    print!("{}", table(&result));
    Ok(())
}

fn write_outputs(result: &SweepResult, resolved: &RunArgs, output: &Path) -> Result<(), CliError> {
    let written = emit_report(result, &ReportFormat::ALL, output, "sweep")?;
    let cfg_path = output.join("config.json");
    let mut text = serde_json::to_string_pretty(resolved).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    std::fs::write(&cfg_path, text).map_err(io_error(&cfg_path))?;
    for p in written.iter().chain([&cfg_path]) {
        info!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.input).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::Missing(format!("{}: {e}", a.input.display())),
        _ => CliError::Io(format!("{}: {e}", a.input.display())),
    })?;
    let is_csv = a.input.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let result = if is_csv { from_csv(&text) } else { from_json(&text) }
        .map_err(|e| CliError::Io(format!("{}: {e}", a.input.display())))?;
    let Some(out) = &a.out else {
        print!("{}", table(&result));
        return Ok(());
    };
    let mut formats = Vec::new();
    for f in &a.format {
        let add: &[ReportFormat] = match f {
            FormatArg::All => &ReportFormat::ALL,
            FormatArg::Table => &[ReportFormat::Table],
            FormatArg::Csv => &[ReportFormat::Csv],
            FormatArg::Json => &[ReportFormat::Json],
            FormatArg::Plotdata => &[ReportFormat::Plotdata],
        };
        for r in add {
            if !formats.contains(r) {
                formats.push(*r);
            }
        }
    }
    for p in emit_report(&result, &formats, out, &a.stem)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn cmd_convert(a: &ConvertArgs) -> Result<(), CliError> {
    if a.matches {
        save_scored_matches(&load_scored_matches(&a.input)?, &a.output)?;
    } else {
        save_features(&load_features(&a.input)?, &a.output)?;
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<(), CliError> {
    if a.sequences == 0 {
        return Err(CliError::Config("--sequences must be at least 1".into()));
    }
    let seqs = (a.seed..a.seed + a.sequences)
        .map(|s| generate_synthetic_sequence(&textured_image(a.width, a.height, s), s, 5, a.warp))
        .collect::<Result<Vec<_>, _>>()?;
    let d = Dataset::from_sequences(seqs);
    d.write_layout(&a.out)?;
    println!("wrote {} sequences to {}", d.sequences.len(), a.out.display());
    Ok(())
}
