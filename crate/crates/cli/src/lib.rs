//! The `fcap` command line: argument definitions and one function per
//! subcommand.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use fcap_core::docs::{compare, evaluate, read_prediction, AnnotationDoc, ResultsDoc};
use fcap_core::phantom::{generate_with, preset, presets, PhantomSpec};
use fcap_core::pipeline::{analyze_pullback, median_duration, FrameInputs, LipidSource, StageTimings};
use fcap_core::preprocess::LumenBoundary;
use fcap_core::render::{render_thickness_map, write_png_rgb};
use fcap_core::store::{read_json, read_pullback, to_canonical_json, write_atomic, write_json, write_pullback, FrameFormat};
use fcap_core::{AnalysisConfig, PixelMask};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RESULTS_FILE: &str = "results.json";
pub const TRUTH_FILE: &str = "truth.json";
pub const PHANTOM_SPEC_FILE: &str = "phantom.json";
pub const DATA_ROOT_ENV: &str = "FCAP_DATA_ROOT";

/// Share of frames allowed to fail lumen detection before `analyze` gives up.
pub const MAX_FAILED_FRACTION: f64 = 0.5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] fcap_core::Error),

    #[error("{0}")]
    Failed(String),

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "fcap", version, about = "Fibrous-cap analysis of intravascular OCT pullbacks")]
pub struct Cli {
    /// More log output (repeat for debug and trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analyze a pullback directory and write its results document.
    Analyze(AnalyzeArgs),
    /// Render a synthetic pullback with ground truth.
    Phantom(PhantomArgs),
    /// Score a results or annotation document against a truth annotation.
    Eval(EvalArgs),
    /// Agreement between two results documents (differences are A minus B).
    Compare(CompareArgs),
    /// Render the pullback thickness map of a results document as PNG.
    ExportMap(ExportMapArgs),
    /// Serve the review API over a data root.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["masks", "baseline"]))]
pub struct AnalyzeArgs {
    /// Pullback directory holding `manifest.json` and the frames.
    pub pullback: PathBuf,

    /// Annotation document supplying lipid arcs or masks per frame.
    #[arg(long, value_name = "FILE")]
    pub masks: Option<PathBuf>,

    /// Use the built-in attenuation classifier for lipid A-lines.
    #[arg(long)]
    pub baseline: bool,

    /// Configuration file (`.toml` or `.json`, same keys as the analysis config).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Override one config key, e.g. `--set dp.smooth_max=3` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,

    /// Results document path [default: <PULLBACK>/results.json].
    #[arg(short, long, value_name = "FILE")]
    pub output: Option<PathBuf>,

    /// Also write the timing report as JSON.
    #[arg(long, value_name = "FILE")]
    pub timing: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Png,
    Raw,
}

impl From<FormatArg> for FrameFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Png => FrameFormat::Png,
            FormatArg::Raw => FrameFormat::Raw,
        }
    }
}

#[derive(Debug, Clone, Args)]
#[command(group = clap::ArgGroup::new("kind").required(true).args(["preset", "spec"]))]
pub struct PhantomArgs {
    /// Built-in preset: tcfa_short, tcfa_long, stable_short, stable_long, no_lipid or noisefree_step.
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<String>,

    /// Phantom specification as JSON.
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,

    /// Speckle seed.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Log-normal speckle σ (0 renders noise-free).
    #[arg(long)]
    pub speckle: Option<f64>,

    /// Number of frames; lesions are clipped to fit.
    #[arg(long)]
    pub frames: Option<usize>,

    /// Frame file format.
    #[arg(long, value_enum, default_value_t = FormatArg::Png)]
    pub format: FormatArg,

    /// Output pullback directory.
    #[arg(short, long, value_name = "DIR")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Prediction: a results or annotation document.
    #[arg(long, value_name = "FILE")]
    pub pred: PathBuf,

    /// Truth annotation document.
    #[arg(long, value_name = "FILE")]
    pub truth: PathBuf,

    /// Mask pixels needed to call an A-line lipid [default: lipid.min_pixels of the config].
    #[arg(long)]
    pub min_pixels: Option<usize>,

    /// Metrics document path [default: stdout].
    #[arg(short, long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Results document A.
    pub a: PathBuf,

    /// Results document B.
    pub b: PathBuf,

    /// Agreement document path [default: stdout].
    #[arg(short, long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ExportMapArgs {
    /// Results document.
    pub results: PathBuf,

    /// Colour range in µm as LO:HI.
    #[arg(long, default_value = "0:300", value_parser = parse_range)]
    pub range: (f64, f64),

    /// Output PNG.
    #[arg(short, long, value_name = "FILE")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// Data root holding `pullbacks/` and `sessions/`.
    #[arg(long, env = DATA_ROOT_ENV, value_name = "DIR")]
    pub data_root: PathBuf,

    /// Bind address.
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,

    /// Port; 0 picks a free one.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,

    /// Built front-end bundle to host at `/`.
    #[arg(long, value_name = "DIR")]
    pub ui: Option<PathBuf>,
}

fn parse_preset(s: &str) -> Result<String, String> {
    match preset(s) {
        Some(p) => Ok(p.name),
        None => {
            let names: Vec<String> = presets().into_iter().map(|p| p.name).collect();
            Err(format!("unknown preset {s:?}; choose one of {}", names.join(", ")))
        }
    }
}

/// Parses `LO:HI` with `LO < HI`.
pub fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected LO:HI, got {s:?}"))?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{lo:?}: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{hi:?}: {e}"))?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(format!("range {s:?} must satisfy LO < HI"));
    }
    Ok((lo, hi))
}

/// Per-stage medians of an `analyze` run, in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub frames: usize,
    pub threads: usize,
    pub total_ms: f64,
    pub frame_median_ms: f64,
    pub preprocess_median_ms: f64,
    pub lipid_median_ms: f64,
    pub cap_median_ms: f64,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

impl TimingReport {
    pub fn from_stages(stages: &[StageTimings], threads: usize, total: Duration) -> Self {
        Self {
            frames: stages.len(),
            threads,
            total_ms: ms(total),
            frame_median_ms: ms(median_duration(stages.iter().map(StageTimings::total))),
            preprocess_median_ms: ms(median_duration(stages.iter().map(|t| t.preprocess))),
            lipid_median_ms: ms(median_duration(stages.iter().map(|t| t.lipid))),
            cap_median_ms: ms(median_duration(stages.iter().map(|t| t.cap))),
        }
    }

    /// The human-readable report printed to stderr.
    pub fn lines(&self) -> Vec<String> {
        vec![
            format!("frames: {} on {} thread(s), total {:.1} s", self.frames, self.threads, self.total_ms / 1e3),
            format!("median per frame: {:.1} ms", self.frame_median_ms),
            format!("median preprocess: {:.1} ms", self.preprocess_median_ms),
            format!("median lipid: {:.1} ms", self.lipid_median_ms),
            format!("median cap: {:.1} ms", self.cap_median_ms),
        ]
    }
}

/// Configuration from an optional file plus `key=value` overrides.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> CliResult<AnalysisConfig> {
    let mut cfg = match path {
        Some(p) => AnalysisConfig::from_file(p)?,
        None => AnalysisConfig::default(),
    };
    for o in overrides {
        cfg.set(o)?;
    }
    Ok(cfg)
}

/// What `analyze` produced.
#[derive(Debug, Clone)]
pub struct AnalyzeOutcome {
    pub results: ResultsDoc,
    pub output: PathBuf,
    pub timing: TimingReport,
}

/// Analyzes a pullback and writes its results document. More than half of
/// the frames failing lumen detection is an error and nothing is written.
pub fn cmd_analyze(args: &AnalyzeArgs) -> CliResult<AnalyzeOutcome> {
    if args.masks.is_some() == args.baseline {
        return Err(CliError::Usage("give exactly one of --masks and --baseline".into()));
    }
    let started = Instant::now();
    let config = load_config(args.config.as_deref(), &args.overrides)?;
    let pullback = read_pullback(&args.pullback)?;
    let n = pullback.calib.n_alines;

    let annotation = args.masks.as_deref().map(AnnotationDoc::read).transpose()?;
    let mut masks: Vec<Option<PixelMask>> = vec![None; pullback.frames.len()];
    let mut lumens: Vec<Option<LumenBoundary>> = vec![None; pullback.frames.len()];
    if let Some(doc) = &annotation {
        if doc.n_alines != n {
            return Err(fcap_core::Error::DimensionMismatch {
                what: "annotation n_alines".into(),
                expected: n.to_string(),
                found: doc.n_alines.to_string(),
            }
            .into());
        }
        for f in &doc.frames {
            if f.frame_index >= pullback.frames.len() {
                return Err(CliError::Failed(format!(
                    "annotation frame {} is outside the {}-frame pullback",
                    f.frame_index,
                    pullback.frames.len()
                )));
            }
            if let Some(m) = &f.mask {
                masks[f.frame_index] = Some(m.decode()?);
            }
            lumens[f.frame_index] = f.lumen_px.clone().map(LumenBoundary::external);
        }
    }
    let no_arcs: &[fcap_core::LipidArc] = &[];
    let analysis = analyze_pullback(&pullback, &config, args.threads, |k| {
        let source = match &annotation {
            None => LipidSource::Baseline,
            Some(doc) => match (&masks[k], doc.frame(k).and_then(|f| f.arcs.as_deref())) {
                (Some(mask), _) => LipidSource::Mask(mask),
                (None, Some(arcs)) => LipidSource::Arcs(arcs),
                (None, None) => LipidSource::Arcs(no_arcs),
            },
        };
        FrameInputs {
            source,
            lumen: lumens[k].as_ref(),
        }
    })?;

    let failed = analysis.failed_frames();
    let total = analysis.frames.len();
    if failed.len() as f64 > MAX_FAILED_FRACTION * total as f64 {
        return Err(CliError::Failed(format!(
            "lumen detection failed on {} of {total} frames (first: {:?})",
            failed.len(),
            &failed[..failed.len().min(10)]
        )));
    }
    if !failed.is_empty() {
        log::warn!("lumen detection failed on frames {failed:?}; they are flagged and carry no measurements");
    }
    let lipid_source = if annotation.is_some() { "annotation" } else { "baseline" };
    let results = ResultsDoc::from_analysis(&pullback.id, &pullback.calib, &config, lipid_source, &analysis.frames)?;
    let output = args.output.clone().unwrap_or_else(|| args.pullback.join(RESULTS_FILE));
    results.write(&output)?;
    let threads = if args.threads == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        args.threads
    };
    let timing = TimingReport::from_stages(&analysis.timings, threads, started.elapsed());
    if let Some(path) = &args.timing {
        write_json(path, &timing)?;
    }
    Ok(AnalyzeOutcome { results, output, timing })
}

/// The phantom `args` describe, with seed, speckle and frame overrides applied.
pub fn phantom_spec(args: &PhantomArgs) -> CliResult<PhantomSpec> {
    let mut spec = match (&args.preset, &args.spec) {
        (Some(name), None) => preset(name).ok_or_else(|| CliError::Usage(format!("unknown preset {name:?}")))?,
        (None, Some(path)) => read_json(path)?,
        _ => return Err(CliError::Usage("give exactly one of --preset and --spec".into())),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(s) = args.speckle {
        spec.speckle = s;
    }
    if let Some(n) = args.frames {
        spec.n_frames = n;
        spec.lesions.retain(|l| l.frames[0] < n);
        for l in &mut spec.lesions {
            l.frames[1] = l.frames[1].min(n);
        }
    }
    spec.validate()?;
    Ok(spec)
}

/// Writes the phantom pullback, its spec and its truth annotation into the
/// output directory.
pub fn cmd_phantom(args: &PhantomArgs) -> CliResult<PhantomSpec> {
    let spec = phantom_spec(args)?;
    let config = AnalysisConfig::default();
    let (pullback, truth) = generate_with(&spec, &config)?;
    write_pullback(&args.output, &pullback, args.format.into())?;
    let annotation = AnnotationDoc::from_truth(&pullback.id, spec.n_alines, config.crop_depth_px, &truth, "phantom")?;
    annotation.write(&args.output.join(TRUTH_FILE))?;
    write_json(&args.output.join(PHANTOM_SPEC_FILE), &spec)?;
    Ok(spec)
}

fn emit(bytes: &[u8], output: Option<&Path>) -> CliResult<()> {
    match output {
        Some(p) => write_atomic(p, bytes)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Failed(format!("stdout: {e}")))?;
        }
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<fcap_core::MetricsDoc> {
    let pred = read_prediction(&args.pred)?;
    let truth = AnnotationDoc::read(&args.truth)?;
    let min_pixels = args.min_pixels.unwrap_or(AnalysisConfig::default().lipid.min_pixels);
    let metrics = evaluate(pred.as_prediction(), &truth, min_pixels)?;
    emit(&to_canonical_json(&metrics)?, args.output.as_deref())?;
    Ok(metrics)
}

pub fn cmd_compare(args: &CompareArgs) -> CliResult<fcap_core::AgreementDoc> {
    let a = ResultsDoc::read(&args.a)?;
    let b = ResultsDoc::read(&args.b)?;
    let doc = compare(&a, &b)?;
    emit(&to_canonical_json(&doc)?, args.output.as_deref())?;
    Ok(doc)
}

pub fn cmd_export_map(args: &ExportMapArgs) -> CliResult<()> {
    let results = ResultsDoc::read(&args.results)?;
    let img = render_thickness_map(&results.thickness_map(), args.range)?;
    write_png_rgb(&args.output, &img)?;
    Ok(())
}

/// Binds, prints the bound address on stdout and serves until interrupted.
pub fn cmd_serve(args: &ServeArgs) -> CliResult<()> {
    if !args.data_root.is_dir() {
        return Err(CliError::Failed(format!("data root {} is not a directory", args.data_root.display())));
    }
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Failed(format!("runtime: {e}")))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port))
            .await
            .map_err(|e| CliError::Failed(format!("bind {}:{}: {e}", args.host, args.port)))?;
        let addr = listener.local_addr().map_err(|e| CliError::Failed(e.to_string()))?;
        println!("listening on http://{addr}");
        std::io::stdout().flush().ok();
        let config = fcap_service::ServiceConfig {
            data_root: args.data_root.clone(),
            ui_dir: args.ui.clone(),
        };
        fcap_service::serve(listener, config)
            .await
            .map_err(|e| CliError::Failed(format!("server: {e}")))
    })
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Analyze(a) => {
            let out = cmd_analyze(a)?;
            for line in out.timing.lines() {
                eprintln!("{line}");
            }
            let s = &out.results.summary;
            eprintln!(
                "wrote {}: {} lesion(s), {} TCFA frame(s), {} failed frame(s)",
                out.output.display(),
                s.lesions.len(),
                s.tcfa_frames.len(),
                s.failed_frames.len()
            );
        }
        Command::Phantom(a) => {
            let spec = cmd_phantom(a)?;
            eprintln!("wrote {} ({} frames, seed {})", a.output.display(), spec.n_frames, spec.seed);
        }
        Command::Eval(a) => {
            cmd_eval(a)?;
        }
        Command::Compare(a) => {
            cmd_compare(a)?;
        }
        Command::ExportMap(a) => cmd_export_map(a)?,
        Command::Serve(a) => cmd_serve(a)?,
    }
    Ok(())
}
