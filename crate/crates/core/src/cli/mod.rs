//! Command-line front end. Every run writes `<subcommand>.config.json`
//! next to its outputs with the fully resolved arguments.

mod commands;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::corpus::Dialect;
use crate::dedup::DEFAULT_PROBE_SEED;
use crate::image::Resolution;
use crate::metrics::{DEFAULT_JPEG_QUALITY, DEFAULT_SAMPLES, DEFAULT_SELF_SIM_IMAGES};
use crate::mix::{MixMode, DEFAULT_ALPHA, DEFAULT_N};
use crate::render::DEFAULT_FRAME_RATE;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "shadercorpus", version, about = "Corpus engine for procedural fragment-shader image programs")]
pub struct Cli {
    /// Root seed for every random choice in the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Render worker count [default: available cores, at most 4].
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Per-frame wall-clock cap in milliseconds; 0 disables it.
    #[arg(long, global = true, default_value_t = 2000)]
    pub frame_timeout_ms: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Add a directory of snippet files to a manifest.
    Ingest(IngestArgs),
    /// Normalize and compile records, setting their status.
    Validate(ValidateArgs),
    /// Mark static and duplicate programs.
    Dedup(DedupArgs),
    /// Render frames of programs to a raw dump and/or JPEG files.
    Render(RenderArgs),
    /// Build an offline dataset of mixed images with provenance.
    Mix(MixArgs),
    /// Compute per-program statistics into a stats file.
    Stats(StatsArgs),
    /// Summarize statistics into a table file.
    Summarize(SummarizeArgs),
    /// Pick the top-k programs from a score file.
    Select(SelectArgs),
    /// Serve image batches over TCP.
    Serve(ServeArgs),
    /// Render a grid of random samples to a PNG.
    Preview(PreviewArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Validate(_) => "validate",
            Command::Dedup(_) => "dedup",
            Command::Render(_) => "render",
            Command::Mix(_) => "mix",
            Command::Stats(_) => "stats",
            Command::Summarize(_) => "summarize",
            Command::Select(_) => "select",
            Command::Serve(_) => "serve",
            Command::Preview(_) => "preview",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Dialect for every file; otherwise chosen by extension.
    #[arg(long)]
    pub dialect: Option<Dialect>,
    /// Directory of snippet files. Ids are file stems.
    pub input: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ValidateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Revalidate records that already have a verdict.
    #[arg(long)]
    pub all: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct DedupArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "384")]
    pub resolution: Resolution,
    /// Timestep at which duplicate fingerprints are taken.
    #[arg(long, default_value_t = 0.0)]
    pub t0: f64,
    #[arg(long, default_value_t = 4)]
    pub probes: usize,
    /// Largest per-channel change still treated as static.
    #[arg(long, default_value_t = 0)]
    pub threshold: u8,
    /// Use the cross-driver tolerant static threshold.
    #[arg(long, conflicts_with = "threshold")]
    pub tolerant: bool,
    #[arg(long, default_value_t = DEFAULT_PROBE_SEED)]
    pub probe_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameFormat {
    Raw,
    Jpeg,
    Both,
}

#[derive(Debug, Args, Serialize)]
pub struct RenderArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Programs to render; all unique programs when omitted.
    #[arg(long = "id")]
    pub ids: Vec<String>,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[arg(long, default_value = "384")]
    pub resolution: Resolution,
    /// Frames per second of the timestep schedule.
    #[arg(long, default_value_t = DEFAULT_FRAME_RATE)]
    pub rate: f64,
    #[arg(long, value_enum, default_value_t = FrameFormat::Raw)]
    pub format: FrameFormat,
    #[arg(long, default_value_t = DEFAULT_JPEG_QUALITY)]
    pub quality: u8,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct MixArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value = "mixup")]
    pub mode: MixMode,
    #[arg(long, default_value_t = DEFAULT_N)]
    pub n: usize,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value = "384")]
    pub resolution: Resolution,
    #[arg(long, default_value_t = DEFAULT_JPEG_QUALITY)]
    pub quality: u8,
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value = "384")]
    pub resolution: Resolution,
    #[arg(long, default_value_t = DEFAULT_JPEG_QUALITY)]
    pub quality: u8,
    /// Frames per program scored for self-similarity.
    #[arg(long, default_value_t = DEFAULT_SELF_SIM_IMAGES)]
    pub self_sim_images: usize,
    #[arg(long, default_value_t = crate::metrics::similarity::DEFAULT_PAIRS)]
    pub self_sim_pairs: usize,
    /// Stats file; `stats.jsonl` beside the manifest by default.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Stats file; `stats.jsonl` beside the manifest by default.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Subsets to tabulate: `all` or a dialect name. Defaults to `all`
    /// plus every dialect present.
    #[arg(long = "subset")]
    pub subsets: Vec<String>,
    /// Externally computed FID for a subset, as `SUBSET=VALUE`.
    #[arg(long = "fid")]
    pub fids: Vec<String>,
    /// Table file; `summary.txt` beside the manifest by default.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also export per-program statistics as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SelectArgs {
    /// Scores as a JSON object `{id: score}` or CSV lines `id,score`.
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub k: usize,
    /// Output id list; `selected.txt` beside the score file by default.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub bind: String,
    #[arg(long, default_value_t = 2)]
    pub max_in_flight: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct PreviewArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub rows: u32,
    #[arg(long, default_value_t = 4)]
    pub cols: u32,
    /// Size of one grid cell.
    #[arg(long, default_value = "128")]
    pub resolution: Resolution,
    #[arg(long, default_value = "none")]
    pub mode: MixMode,
    /// Sources per cell; 1 for mode none.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Resolved configuration echoed beside the outputs of every run.
#[derive(Debug, Serialize)]
pub struct RunConfig<'a> {
    pub subcommand: &'static str,
    pub tool_version: &'static str,
    pub seed: u64,
    pub workers: usize,
    pub frame_timeout_ms: u64,
    pub device: String,
    pub args: serde_json::Value,
    /// Results that depend on the machine, listed so they are not mistaken
    /// for reproducible outputs.
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    pub measurements: &'a [&'a str],
}

#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let one_line = self.message.replace('\n', " ");
        write!(f, "error: {}: {}", self.kind, one_line)
    }
}

macro_rules! cli_error_from {
    ($($ty:ty => $kind:literal),* $(,)?) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::new($kind, e.to_string())
            }
        }
    )*};
}

cli_error_from! {
    crate::corpus::CorpusError => "corpus",
    crate::render::RenderError => "render",
    crate::dedup::DedupError => "dedup",
    crate::mix::MixError => "mix",
    crate::metrics::MetricsError => "metrics",
    crate::stream::StreamError => "stream",
    std::io::Error => "io",
    image::ImageError => "image",
    serde_json::Error => "json",
}

/// Directory holding a file's siblings.
pub(crate) fn dir_of(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            1
        }
    }
}
