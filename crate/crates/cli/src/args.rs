use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use evs_core::{PositionMode, Selector, ThresholdMode};

#[derive(Debug, Parser)]
#[command(
    name = "evs",
    version,
    about = "Prune temporally redundant video tokens"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a retention mask from a clip or an embedding grid.
    Mask(MaskArgs),
    /// Gather retained embeddings into a token stream.
    Prune(PruneArgs),
    /// Run EVS and baselines at a matched budget and summarise their overlap.
    Compare(CompareArgs),
    /// Attention memory and TTFT speedup reports.
    Cost(CostArgs),
    /// Draw stochastic pruning rates.
    SampleRate(SampleRateArgs),
    /// Render overlays with pruned patches darkened.
    Viz(VizArgs),
    /// Print statistics for a mask or token file.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SelectorArg {
    Rgb,
    Embedding,
}

impl From<SelectorArg> for Selector {
    fn from(s: SelectorArg) -> Self {
        match s {
            SelectorArg::Rgb => Selector::Rgb,
            SelectorArg::Embedding => Selector::Embedding,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Threshold,
    ExactBudget,
}

impl From<ModeArg> for ThresholdMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Threshold => ThresholdMode::Threshold,
            ModeArg::ExactBudget => ThresholdMode::ExactBudget,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PositionsArg {
    #[value(alias = "preserving")]
    Preserve,
    Sequential,
}

impl From<PositionsArg> for PositionMode {
    fn from(p: PositionsArg) -> Self {
        match p {
            PositionsArg::Preserve => PositionMode::Preserving,
            PositionsArg::Sequential => PositionMode::Sequential,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum MethodArg {
    Evs,
    Random,
    Subsample,
    Merge,
}

impl MethodArg {
    pub fn name(self) -> &'static str {
        match self {
            MethodArg::Evs => "evs",
            MethodArg::Random => "random",
            MethodArg::Subsample => "subsample",
            MethodArg::Merge => "merge",
        }
    }
}

#[derive(Debug, Args)]
pub struct GeometryArgs {
    /// Encoder patch size in pixels.
    #[arg(long, default_value_t = 14)]
    pub patch_size: usize,
    /// Projector spatial downsampling factor.
    #[arg(long, default_value_t = 2)]
    pub downsample: usize,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    /// Clip (`.tbin` or a directory of PPM/PGM frames) for `rgb`, embeddings for `embedding`.
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub selector: SelectorArg,
    /// Pruning rate in [0, 1).
    #[arg(long)]
    pub q: f64,
    #[arg(long, value_enum, default_value = "exact-budget")]
    pub mode: ModeArg,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    /// Output mask (`.evsm`).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long, value_enum)]
    pub positions: PositionsArg,
    /// Output token stream (`.evst`).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Methods to run; repeat or comma-separate. Defaults to all four.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub method: Vec<MethodArg>,
    #[arg(long)]
    pub q: f64,
    /// Clip input; EVS uses the rgb selector when present.
    #[arg(long)]
    pub clip: Option<PathBuf>,
    /// Embedding input; required by `merge`, and by `evs` when no clip is given.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[arg(long, value_enum, default_value = "preserve")]
    pub positions: PositionsArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    /// Calibrated model for the speedup report.
    #[arg(long, default_value = "7B")]
    pub model: String,
    /// Pruning rates to report; comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.75,0.9")]
    pub q: Vec<f64>,
    /// Calibration file replacing the bundled measurements.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Also write the speedup series as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub kv: KvArgs,
}

/// Memory report inputs. The report is printed only when `--kv-dim` is given.
#[derive(Debug, Args)]
pub struct KvArgs {
    /// KV scalars stored per token across all layers.
    #[arg(long)]
    pub kv_dim: Option<u64>,
    /// Vision tokens before pruning; pruned at each `--q`.
    #[arg(long, default_value_t = 0)]
    pub vision_tokens: usize,
    /// Text tokens, never pruned.
    #[arg(long, default_value_t = 0)]
    pub text_tokens: usize,
    #[arg(long, default_value_t = 1)]
    pub batch: u64,
    #[arg(long, default_value_t = 0)]
    pub prefill_queue: u64,
    #[arg(long, default_value_t = 2)]
    pub kv_bytes: u8,
    #[arg(long, default_value_t = 2)]
    pub weight_bytes: u8,
    #[arg(long, default_value_t = 0)]
    pub model_dim: u64,
    #[arg(long, default_value_t = 0)]
    pub attn_params: u64,
    /// Count an `S x d_model` query buffer during prefill.
    #[arg(long)]
    pub query_prefill: bool,
}

#[derive(Debug, Args)]
pub struct SampleRateArgs {
    #[arg(long)]
    pub mode_target: f64,
    #[arg(long, default_value_t = evs_core::rate::DEFAULT_CONCENTRATION)]
    pub concentration: f64,
    /// Number of draws; scientific notation such as `1e6` is accepted.
    #[arg(long, value_parser = parse_count, default_value = "1")]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub bins: usize,
    /// Write the draws here, one per line. Without it the draws go to stdout after the summary.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    /// Clip (`.tbin` or a directory of PPM/PGM frames).
    pub clip: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    /// Brightness factor for pruned patches.
    #[arg(long, default_value_t = evs_core::viz::DEFAULT_DARKEN)]
    pub darken: f32,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// A mask (`.evsm`) or token stream (`.evst`).
    pub input: PathBuf,
}

fn parse_count(s: &str) -> Result<usize, String> {
    if let Ok(n) = s.parse::<usize>() {
        return Ok(n);
    }
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if !(v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v <= 9_007_199_254_740_992.0) {
        return Err(format!("'{s}' is not a non-negative whole number"));
    }
    Ok(v as usize)
}
