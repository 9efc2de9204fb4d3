//! `hedkit` command line: one subcommand per pipeline stage plus `serve`.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod fsio;
pub mod service;

pub use config::Settings;
pub use fsio::parse_text;

/// Failure classes, mapped onto exit codes by [`run`].
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<hedkit::Error> for CliError {
    fn from(e: hedkit::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "hedkit", version, about = "Hierarchical emotion distribution toolkit")]
pub struct Cli {
    /// TOML file with per-subcommand defaults; flags win
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Seed for every random choice
    #[arg(long, global = true, env = "HEDKIT_SEED")]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with rule-driven prosody
    GenCorpus(GenCorpusArgs),
    /// Train one ranking function per emotion
    TrainRanker(TrainRankerArgs),
    /// Score utterances, words and phones with trained rankers
    ExtractHed(ExtractHedArgs),
    /// Train the text-to-ED predictor
    TrainPredictor(TrainPredictorArgs),
    /// Predict an ED from text
    Predict(PredictArgs),
    /// Train the prosody renderer
    TrainRenderer(TrainRendererArgs),
    /// Render per-phone pitch, energy and duration
    Render(RenderArgs),
    /// Apply an edit log to an ED
    Edit(EditArgs),
    /// Sweep one emotion's intensity and write contour statistics as CSV
    Sweep(SweepArgs),
    /// Write evaluation reports
    Eval(EvalArgs),
    /// Start the HTTP service
    Serve(ServeArgs),
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub momentum: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    /// Number of utterances
    #[arg(long)]
    pub n: Option<usize>,
    /// Also synthesize audio for every item
    #[arg(long)]
    pub audio: bool,
    /// JSON generator spec; unset fields keep their defaults
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainRankerArgs {
    /// Corpus directory to take utterance features from
    #[arg(long, conflicts_with = "features")]
    pub corpus: Option<PathBuf>,
    /// CSV of externally computed features (first column is the segment id)
    #[arg(long, requires = "labels")]
    pub features: Option<PathBuf>,
    /// CSV `id,label` for `--features`
    #[arg(long, requires = "features")]
    pub labels: Option<PathBuf>,
    /// Comma-separated emotion labels
    #[arg(long, value_delimiter = ',')]
    pub emotions: Option<Vec<String>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractHedArgs {
    #[arg(long)]
    pub rankers: PathBuf,
    /// Extract for every corpus item; `--out` is then a directory
    #[arg(long, conflicts_with_all = ["wav", "alignment"])]
    pub corpus: Option<PathBuf>,
    #[arg(long, requires = "alignment")]
    pub wav: Option<PathBuf>,
    /// Alignment JSON or TextGrid
    #[arg(long, requires = "wav")]
    pub alignment: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    MultiStep,
    SingleStep,
}

#[derive(Debug, Args)]
pub struct TrainPredictorArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Extracted EDs to train on instead of the corpus EDs
    #[arg(long)]
    pub eds: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Reuse the text encoder of a trained renderer
    #[arg(long, value_name = "RENDERER")]
    pub encoder_from: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Per-epoch loss history as JSON
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[group(id = "text_source", required = true, multiple = false)]
pub struct TextSource {
    /// Phones separated by spaces, words by `|`
    #[arg(long, group = "text_source")]
    pub text: Option<String>,
    #[arg(long, group = "text_source")]
    pub text_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub predictor: PathBuf,
    #[command(flatten)]
    pub text: TextSource,
    /// Defaults to stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RenderModeArg {
    External,
    Va,
}

#[derive(Debug, Args)]
pub struct TrainRendererArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub eds: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<RenderModeArg>,
    /// Weight of the embedded ED loss in va mode
    #[arg(long)]
    pub va_loss_weight: Option<f64>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub renderer: PathBuf,
    #[arg(long, conflicts_with = "alignment")]
    pub text: Option<String>,
    /// Timed alignment; its phones are the text
    #[arg(long)]
    pub alignment: Option<PathBuf>,
    /// ED to render; otherwise predicted
    #[arg(long)]
    pub ed: Option<PathBuf>,
    #[arg(long, conflicts_with = "ed")]
    pub predictor: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub speaker: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    /// JSON-lines edit log
    #[arg(long)]
    pub log: PathBuf,
    /// Continue a saved session
    #[arg(long, conflicts_with_all = ["ed", "text", "alignment"])]
    pub session: Option<PathBuf>,
    #[arg(long)]
    pub ed: Option<PathBuf>,
    #[arg(long, conflicts_with = "alignment")]
    pub text: Option<String>,
    #[arg(long)]
    pub alignment: Option<PathBuf>,
    /// Needed for `repredict` edits and for sessions started from text
    #[arg(long)]
    pub predictor: Option<PathBuf>,
    /// Session snapshot
    #[arg(long)]
    pub out: PathBuf,
    /// Final ED only
    #[arg(long)]
    pub ed_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LevelArg {
    Utterance,
    Word,
    Phoneme,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Hold,
    Repredict,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub emotion: String,
    #[arg(long, value_enum, required_unless_present = "target")]
    pub level: Option<LevelArg>,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Extra `level:index` targets swept together, e.g. `phoneme:3`
    #[arg(long)]
    pub target: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    pub values: Vec<f64>,
    #[arg(long, value_enum, default_value = "hold")]
    pub policy: PolicyArg,
    /// `utterance`, `word:I` or `phone:I`; defaults to the first target
    #[arg(long)]
    pub scope: Option<String>,
    /// Trained renderer; the rule renderer is used otherwise
    #[arg(long)]
    pub renderer: Option<PathBuf>,
    /// Corpus whose generator rules drive the rule renderer
    #[arg(long, conflicts_with = "renderer")]
    pub corpus: Option<PathBuf>,
    #[arg(long, conflicts_with = "alignment")]
    pub text: Option<String>,
    #[arg(long)]
    pub alignment: Option<PathBuf>,
    /// Starting ED; otherwise predicted, or all zeros without a predictor
    #[arg(long)]
    pub ed: Option<PathBuf>,
    #[arg(long)]
    pub predictor: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub speaker: usize,
    /// Defaults to stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted ED file or ED directory
    #[arg(long, requires = "gt", conflicts_with = "corpus")]
    pub pred: Option<PathBuf>,
    /// Reference ED file or ED directory
    #[arg(long, requires = "pred")]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Reference EDs replacing the corpus EDs
    #[arg(long, requires = "corpus")]
    pub eds: Option<PathBuf>,
    /// Predictor under test (ED report), or ED source for `--renderer`
    #[arg(long, requires = "corpus")]
    pub predictor: Option<PathBuf>,
    /// Renderer under test (prosody report)
    #[arg(long, requires = "corpus")]
    pub renderer: Option<PathBuf>,
    /// Defaults to csv for `.csv` outputs, json otherwise
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
    #[arg(long)]
    pub predictor: Option<PathBuf>,
    #[arg(long, conflicts_with = "rule_renderer")]
    pub renderer: Option<PathBuf>,
    /// Render with the synthetic corpus rules
    #[arg(long)]
    pub rule_renderer: bool,
    /// Corpus whose rules drive `--rule-renderer`
    #[arg(long, requires = "rule_renderer")]
    pub corpus: Option<PathBuf>,
    /// Idle seconds before a session is dropped
    #[arg(long, default_value_t = 1800)]
    pub ttl_secs: u64,
    /// Where `POST /sessions/{id}/save` writes snapshots
    #[arg(long)]
    pub snapshot_dir: Option<PathBuf>,
}

/// Parse `argv` (program name first), run the subcommand, return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
