mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use glyphfield::Error;

/// Train, render and evaluate multi-channel neural distance fields of glyphs.
#[derive(Debug, Parser)]
#[command(name = "glyphfield", version)]
pub struct Cli {
    /// JSON run configuration; every key optional.
    #[arg(long, global = true, env = "GLYPHFIELD_CONFIG")]
    pub config: Option<PathBuf>,

    /// Overrides `paths.output_dir`.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,

    /// Overrides `train.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Overrides `train.threads`; 1 gives bit-reproducible runs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rasterize targets and build corner templates for every manifest glyph.
    Prepare(PrepareArgs),
    /// Train the auto-decoder and write a checkpoint and CSV log.
    Train(TrainArgs),
    /// Render one glyph of one family from a checkpoint.
    Render(RenderArgs),
    /// Render frames between the latent codes of two families.
    Interpolate(InterpolateArgs),
    /// Fit a latent code to a target image and render every label with it.
    Fit(FitArgs),
    /// Compare renders against the analytic rasters as a CSV table.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Overrides `dataset.manifest`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Three channels composed by the median.
    N3,
    /// Single-channel baseline.
    N1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SupervisionArg {
    Sdf,
    Pixel,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long, value_enum)]
    pub supervision: Option<SupervisionArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Stop once this many epochs are complete, keeping the schedule of the
    /// full run so a later `--resume` continues it exactly.
    #[arg(long)]
    pub stop_at: Option<usize>,
    #[arg(long)]
    pub no_warmup: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Implicit,
    Bilateral,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Implicit => "implicit",
            Method::Bilateral => "bilateral",
        }
    }
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub family: String,
    #[arg(long)]
    pub label: String,
    /// Output widths.
    #[arg(long, value_delimiter = ',', default_values_t = [128, 256, 512, 1024])]
    pub res: Vec<usize>,
    #[arg(long, value_enum, default_value_t = Method::Implicit)]
    pub method: Method,
    /// Also write each channel as an image and the raw channel grid.
    #[arg(long)]
    pub channels: bool,
    /// Also write the zero-level contours of the median field as JSON.
    #[arg(long)]
    pub contours: bool,
}

#[derive(Debug, Args)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub family_a: String,
    #[arg(long)]
    pub family_b: String,
    #[arg(long)]
    pub label: String,
    /// Frame count, endpoints included.
    #[arg(long)]
    pub steps: usize,
    #[arg(long, default_value_t = 256)]
    pub res: usize,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Target image (binary PGM, square).
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub label: String,
    /// Pixels at or above one half are ignored.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Width of the completed renders; defaults to the target's.
    #[arg(long)]
    pub res: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "compare")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Compare two images directly instead of a checkpoint.
    #[arg(long, num_args = 2, value_names = ["A", "B"], conflicts_with = "checkpoint")]
    pub compare: Option<Vec<PathBuf>>,
}

/// Exit status for a library error: 1 usage or configuration, 2 numerical,
/// 3 I/O.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical(_) => 2,
        Error::Io { .. } | Error::Format(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
