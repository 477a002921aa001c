//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 I/O error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::encoder::{EncodeError, IrisCode};
use crate::evaluation::{
    collect_scores, emit_report, evaluate, read_scores_csv, validate_far_target, write_scores_csv, CollectConfig,
    EvalConfig, EvalError, MislabelConfig, ScoreMode, ScoreSet,
};
use crate::iso_image::{load_image, save_image, save_polar, ImageError};
use crate::matcher::{cross_match, Aggregation, DigitalIdentity, MatchConfig, MatchError};
use crate::pipeline::{Pipeline, PipelineConfig, PipelineError};
use crate::sigset::{parse_sigset, SigSetError};
use crate::synth::{generate_dataset, Defect, SynthConfig, SynthError, SIGSET_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "crossiris", version, about = "Cross-sensor iris recognition and evaluation")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, value_parser = parse_threads)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode eye images (PGM) into iris code files (.ic).
    Encode(EncodeArgs),
    /// Match probe codes against a gallery of identities.
    Match(MatchArgs),
    /// Score every comparison of a sigset and write a full report.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic two-sensor dataset.
    Synth(SynthArgs),
    /// Rebuild a report from a scores CSV written by `evaluate`.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct MatchFlags {
    /// Largest column rotation tried in either direction.
    #[arg(long, default_value_t = 0)]
    max_shift: usize,
    /// Compare only bits valid in both codes.
    #[arg(long)]
    use_masks: bool,
    /// Fusion of scores within a digital identity: max, mean or owa.
    #[arg(long, default_value = "max")]
    aggregation: Aggregation,
}

impl MatchFlags {
    fn config(&self) -> MatchConfig {
        MatchConfig {
            max_shift: self.max_shift,
            use_masks: self.use_masks,
        }
    }
}

#[derive(Debug, Args)]
struct ReportFlags {
    /// Comma-separated FAR targets for the operating-point table.
    #[arg(long, default_value = "1e-3,1e-4,1e-5,1e-6", value_parser = parse_far_targets)]
    far_targets: FarTargets,
    /// Outlier distance, in standard deviations, for mislabel detection.
    #[arg(long, default_value_t = 6.0, value_parser = parse_positive)]
    mislabel_k: f64,
}

impl ReportFlags {
    fn config(&self) -> EvalConfig {
        EvalConfig {
            far_targets: self.far_targets.0.clone(),
            mislabel: MislabelConfig {
                k: self.mislabel_k,
                ..MislabelConfig::default()
            },
            ..EvalConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct EncodeArgs {
    /// Eye images to encode.
    #[arg(required = true)]
    images: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also write the ROI, polar image, band and mask as PGM files.
    #[arg(long)]
    debug_images: bool,
}

#[derive(Debug, Args)]
struct MatchArgs {
    /// Probe codes: .ic files or directories of them.
    #[arg(long, required = true, num_args = 1..)]
    probes: Vec<PathBuf>,
    /// Gallery directory; each subdirectory is one identity, loose .ic
    /// files are identities of their own.
    #[arg(long)]
    gallery: PathBuf,
    /// Output CSV (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    matching: MatchFlags,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    sigset: PathBuf,
    /// Directory image paths are relative to (default: the sigset's).
    #[arg(long)]
    base_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Score per template pair, or per probe and declared identity.
    #[arg(long, default_value = "pairwise", value_parser = ["pairwise", "identity"])]
    mode: String,
    #[command(flatten)]
    matching: MatchFlags,
    #[command(flatten)]
    report: ReportFlags,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    identities: u64,
    /// Samples per identity and sensor.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    samples: u64,
    #[arg(long, default_value_t = 0.0, value_parser = parse_probability)]
    mislabel_rate: f64,
    /// Defect probability as KIND=P, e.g. dilated_pupil=0.1 (repeatable).
    #[arg(long = "defect", value_parser = parse_defect_rate)]
    defects: Vec<(Defect, f64)>,
    /// Declare only this many randomly chosen imposter pairs.
    #[arg(long)]
    imposter_sample: Option<usize>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Scores CSV (probe,enrolled,label,score).
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    report: ReportFlags,
}

#[derive(Clone, Debug)]
struct FarTargets(Vec<f64>);

fn parse_far_targets(s: &str) -> Result<FarTargets, String> {
    let targets = s
        .split(',')
        .map(|t| {
            let v: f64 = t.trim().parse().map_err(|_| format!("invalid FAR target '{t}'"))?;
            validate_far_target(v).map_err(|e| e.to_string())?;
            Ok(v)
        })
        .collect::<Result<Vec<_>, String>>()?;
    Ok(FarTargets(targets))
}

fn parse_positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(format!("'{s}' is not a positive number")),
    }
}

fn parse_probability(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if (0.0..=1.0).contains(&v) => Ok(v),
        _ => Err(format!("'{s}' is not a probability in [0, 1]")),
    }
}

fn parse_threads(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(format!("'{s}' is not a positive thread count")),
    }
}

fn parse_defect_rate(s: &str) -> Result<(Defect, f64), String> {
    let (kind, p) = s.split_once('=').ok_or_else(|| format!("expected KIND=P, got '{s}'"))?;
    Ok((kind.parse()?, parse_probability(p)?))
}

/// Failure of a command, classified by exit code.
#[derive(Debug)]
enum Failure {
    Data(String),
    Io(String),
}

impl Failure {
    fn exit_code(&self) -> i32 {
        match self {
            Failure::Data(_) => EXIT_DATA,
            Failure::Io(_) => EXIT_IO,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Data(m) | Failure::Io(m) => m,
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<ImageError> for Failure {
    fn from(e: ImageError) -> Self {
        match e {
            ImageError::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<EncodeError> for Failure {
    fn from(e: EncodeError) -> Self {
        match e {
            EncodeError::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Image(i) => i.into(),
            PipelineError::Encode(c) => c.into(),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<MatchError> for Failure {
    fn from(e: MatchError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<SigSetError> for Failure {
    fn from(e: SigSetError) -> Self {
        match e {
            SigSetError::Io(_) | SigSetError::FileNotFound(_) => Failure::Io(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Io(_) | SynthError::Image(ImageError::Io(_)) | SynthError::SigSet(SigSetError::Io(_)) => {
                Failure::Io(e.to_string())
            }
            _ => Failure::Data(e.to_string()),
        }
    }
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code. Diagnostics go to standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return EXIT_IO;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Encode(a) => run_encode(a),
        Command::Match(a) => run_match(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Synth(a) => run_synth(a),
        Command::Report(a) => run_report(a),
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

fn run_encode(args: EncodeArgs) -> Result<(), Failure> {
    let pipeline = Pipeline::new(PipelineConfig::default())?;
    fs::create_dir_all(&args.out_dir)?;
    let mut failed = Vec::new();
    for path in &args.images {
        let stem = file_stem(path);
        let image = load_image(path)?;
        let trace = match pipeline.trace(&image, &stem) {
            Ok(t) => t,
            Err(e) if e.is_segmentation_failure() => {
                eprintln!("{}: {e}", path.display());
                failed.push(stem);
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        trace.code.save(args.out_dir.join(format!("{stem}.ic")))?;
        if args.debug_images {
            save_image(args.out_dir.join(format!("{stem}_roi.pgm")), &trace.roi)?;
            save_polar(args.out_dir.join(format!("{stem}_polar.pgm")), &trace.polar)?;
            save_image(args.out_dir.join(format!("{stem}_band.pgm")), &trace.band.to_image())?;
            save_image(args.out_dir.join(format!("{stem}_mask.pgm")), &trace.band.mask_image())?;
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Data(format!("could not encode: {}", failed.join(", "))))
    }
}

fn code_files(path: &Path) -> Result<Vec<PathBuf>, Failure> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "ic"))
        .collect();
    files.sort();
    Ok(files)
}

fn load_codes(paths: &[PathBuf]) -> Result<Vec<IrisCode>, Failure> {
    paths.iter().map(|p| Ok(IrisCode::load(p)?)).collect()
}

fn run_match(args: MatchArgs) -> Result<(), Failure> {
    let mut probe_paths = Vec::new();
    for p in &args.probes {
        probe_paths.extend(code_files(p)?);
    }
    let probes = load_codes(&probe_paths)?;
    let mut groups: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(&args.gallery)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for entry in entries {
        if entry.is_dir() {
            let files = code_files(&entry)?;
            if !files.is_empty() {
                groups.insert(file_stem(&entry), files);
            }
        } else if entry.extension().is_some_and(|x| x == "ic") {
            groups.insert(file_stem(&entry), vec![entry]);
        }
    }
    let gallery = groups
        .into_iter()
        .map(|(id, files)| Ok(DigitalIdentity::new(id, load_codes(&files)?, args.matching.aggregation)?))
        .collect::<Result<Vec<_>, Failure>>()?;
    let matrix = cross_match(&probes, &gallery, args.matching.config())?;
    match &args.out {
        Some(path) => fs::write(path, matrix.to_csv())?,
        None => io::stdout().write_all(matrix.to_csv().as_bytes())?,
    }
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let sigset = parse_sigset(&args.sigset)?;
    let base_dir = args
        .base_dir
        .clone()
        .unwrap_or_else(|| args.sigset.parent().map(Path::to_path_buf).unwrap_or_default());
    let mode = match args.mode.as_str() {
        "identity" => ScoreMode::Identity(args.matching.aggregation),
        _ => ScoreMode::Pairwise,
    };
    let config = CollectConfig {
        pipeline: PipelineConfig::default(),
        matching: args.matching.config(),
        mode,
    };
    let collected = collect_scores(&sigset, &base_dir, &config)?;
    for t in &collected.excluded_templates {
        eprintln!("excluded {}: {}", t.template_id, t.reason);
    }
    let mut report = evaluate(&collected.scores, &args.report.config())?;
    report.excluded_templates = collected
        .excluded_templates
        .iter()
        .map(|t| (t.template_id.clone(), t.reason.clone()))
        .collect();
    report.skipped_comparisons = collected.skipped_comparisons;
    emit_report(&report, &args.out_dir)?;
    write_scores_csv(&collected.scores, &args.out_dir.join("scores.csv"))?;
    Ok(())
}

fn run_synth(args: SynthArgs) -> Result<(), Failure> {
    let config = SynthConfig {
        n_identities: args.identities as usize,
        samples_per_identity_per_sensor: args.samples as usize,
        seed: args.seed,
        defect_rates: args.defects.into_iter().collect(),
        mislabel_rate: args.mislabel_rate,
        imposter_sample: args.imposter_sample,
        ..SynthConfig::default()
    };
    let plan = generate_dataset(&config, &args.out_dir)?;
    eprintln!(
        "wrote {} images, {} comparisons and {} swaps to {} ({})",
        plan.samples.len(),
        plan.sigset.comparisons.len(),
        plan.swaps.len(),
        args.out_dir.display(),
        SIGSET_FILE
    );
    Ok(())
}

fn run_report(args: ReportArgs) -> Result<(), Failure> {
    let scores: ScoreSet = read_scores_csv(&args.scores)?;
    let report = evaluate(&scores, &args.report.config())?;
    emit_report(&report, &args.out_dir)?;
    Ok(())
}
