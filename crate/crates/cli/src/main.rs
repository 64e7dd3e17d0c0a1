//! `boostiqa`: command-line pipeline for boosted triplet-comparison studies.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

// `!(x > 0.0)` is deliberate: it rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod analyze;
mod pipeline;
mod simulate;
mod util;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use boostiqa_core::distortions::DistortionType;
use boostiqa_core::ModelKind;
use util::Paths;

#[derive(Debug, Parser)]
#[command(name = "boostiqa", version, about = "Boosted triplet comparisons for subjective image quality assessment")]
struct Cli {
    /// Root for relative input and output paths.
    #[arg(long, global = true, env = "BOOSTIQA_DATA")]
    data_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a distorted image sequence and its manifest.
    Generate(GenerateArgs),
    /// Render boosted presentations, or whole HITs for the study service.
    Boost(BoostArgs),
    /// Simulated-observer studies.
    #[command(subcommand)]
    Simulate(SimulateCommand),
    /// Reconstruct impairment scales (JND) per sequence from triplet records.
    Reconstruct(ReconstructArgs),
    /// Validate assignments and remove outliers.
    Clean(CleanArgs),
    /// Detection rates, curve fits and comparisons.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Map boosted scales onto plain-comparison ranges.
    Recalibrate(RecalibrateArgs),
    /// Run the response-collection HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Source PNG.
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    source_id: String,
    /// color_diffusion, high_sharpen, jitter, lens_blur, motion_blur or multiplicative_noise.
    #[arg(long)]
    distortion: DistortionType,
    /// Explicit parameters per level, starting with the undistorted level.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["probes", "impairments"])]
    lambdas: Option<Vec<f64>>,
    /// Probe parameters of a pilot study.
    #[arg(long, value_delimiter = ',', requires = "impairments")]
    probes: Option<Vec<f64>>,
    /// Measured probe impairments in JND.
    #[arg(long, value_delimiter = ',', requires = "probes")]
    impairments: Option<Vec<f64>>,
    /// Number of distorted levels to place on the fitted line.
    #[arg(long, requires = "probes")]
    levels: Option<usize>,
    /// Impairment step between levels in JND.
    #[arg(long, requires = "probes")]
    spacing_jnd: Option<f64>,
    /// Crop rectangle `x,y,width,height` stored for zooming.
    #[arg(long)]
    crop: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BoostArgs {
    /// Sequence manifest written by `generate`.
    #[arg(long)]
    manifest: PathBuf,
    /// `plain` or any combination of A (amplify), Z (zoom), F (flicker).
    #[arg(long, default_value = "plain")]
    boost: String,
    /// Amplification factor used with A.
    #[arg(long)]
    alpha: Option<f64>,
    /// Crop rectangle `x,y,width,height` for Z; defaults to the manifest's.
    #[arg(long)]
    crop: Option<String>,
    /// Render one presentation for triplet `i,j,k`.
    #[arg(long, conflicts_with = "hits_out")]
    triplet: Option<String>,
    /// Write HITs covering all ordered triplets up to `--span` to this JSONL file.
    #[arg(long)]
    hits_out: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    span: usize,
    /// Assignments to collect per HIT.
    #[arg(long, default_value_t = 1)]
    target: usize,
    #[arg(long, default_value = "hit")]
    hit_prefix: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for frames (`<id>.png`) and presentation specs.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum SimulateCommand {
    /// Expected RMSE of pair-comparison scale reconstruction (binomial model).
    Rmse {
        #[arg(long, value_delimiter = ',', default_value = "5,10,20,40")]
        n: Vec<usize>,
        #[arg(long, default_value_t = 5.0)]
        max_jnd: f64,
        #[arg(long, default_value_t = 0.1)]
        step: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scale recovery of the triplet model against calibrated MLDS and STE.
    Table4 {
        #[arg(long, default_value_t = 31)]
        stimuli: usize,
        #[arg(long, default_value_t = 3.0)]
        range: f64,
        #[arg(long, default_value_t = 20_000)]
        responses: usize,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        #[arg(long, default_value_t = 8)]
        restarts: usize,
        /// MLDS noise parameter.
        #[arg(long, default_value_t = 1.6594)]
        sigma: f64,
        /// STE degrees of freedom.
        #[arg(long, default_value_t = 0.5316)]
        alpha: f64,
        /// Print mean, std and median per method and statistic instead of per-repeat rows.
        #[arg(long)]
        summary: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bootstrap convergence of a statistic over response budgets.
    Convergence {
        /// Triplet records of a single sequence.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        budgets: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        resamples: usize,
        /// ci_length, srocc or inversions.
        #[arg(long, default_value = "srocc")]
        statistic: String,
        #[arg(long, default_value = "thurstone")]
        model: ModelKind,
        /// JSON array of ground-truth values; the index order is used when absent.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        restarts: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Find σ (MLDS) or α (STE) whose reconstructed range matches a target.
    Calibrate {
        /// mlds or ste.
        #[arg(long)]
        family: String,
        #[arg(long, default_value_t = 3.0)]
        target: f64,
        #[arg(long, default_value_t = 31)]
        stimuli: usize,
        #[arg(long, default_value_t = 20_000)]
        responses: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulated observer answers written as triplet records.
    Observer {
        #[arg(long, default_value_t = 31)]
        stimuli: usize,
        #[arg(long, default_value_t = 3.0)]
        range: f64,
        /// Total responses for uniform samplers; per triplet for span/graph plans.
        #[arg(long, default_value_t = 20_000)]
        responses: usize,
        /// uniform, uniform_baseline, general:S, baseline:S or sparse:DEGREE.
        #[arg(long, default_value = "uniform")]
        plan: String,
        /// Answer not sure when |Z| falls below this threshold.
        #[arg(long)]
        not_sure: Option<f64>,
        #[arg(long, default_value = "sim")]
        source_id: String,
        #[arg(long, default_value = "synthetic")]
        distortion_type: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Records file (.csv or .jsonl).
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth means (JND) as a JSON array.
        #[arg(long)]
        truth_out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    /// Triplet records (.csv or .jsonl).
    #[arg(long = "in")]
    input: PathBuf,
    /// thurstone, pair, mlds[:sigma] or ste[:alpha].
    #[arg(long, default_value = "thurstone")]
    model: ModelKind,
    #[arg(long, default_value_t = 8)]
    restarts: usize,
    #[arg(long, default_value_t = 1e-8)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    anchor: usize,
    /// Whether impairments may fall on either side of the anchor. `auto`
    /// keeps them above it when every triplet is anchored at the reference.
    #[arg(long, value_enum, default_value = "auto")]
    orientation: OrientationArg,
    /// Seed of the random restarts.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also use hidden test questions.
    #[arg(long)]
    include_tests: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OrientationArg {
    Auto,
    Free,
    AboveAnchor,
}

#[derive(Debug, Args)]
struct CleanArgs {
    /// Assignment records, one JSON object per line.
    #[arg(long = "in")]
    input: PathBuf,
    /// triplet, dcr or pilot.
    #[arg(long, default_value = "triplet")]
    mode: String,
    #[arg(long, default_value_t = 0.95)]
    keep: f64,
    #[arg(long, default_value_t = 20)]
    max_rounds: usize,
    #[arg(long, default_value_t = 3)]
    max_skips: usize,
    #[arg(long, default_value_t = 4)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Kept assignments (JSONL).
    #[arg(long)]
    out: PathBuf,
    /// Rejection and outlier report (CSV).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum AnalyzeCommand {
    /// True positive and detection rates on baseline triplets per sequence.
    Tpr {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a 5-parameter logistic to a CSV with columns x,y.
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        /// Allow decreasing fits.
        #[arg(long)]
        unconstrained: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ratio of fitted curve slopes on a grid.
    Gain {
        /// Fit JSON of the boosted method.
        #[arg(long)]
        boosted: PathBuf,
        /// Fit JSON of the plain method.
        #[arg(long)]
        plain: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 3, default_value = "0,30,1")]
        grid: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank and error metrics between two reconstruction files.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Distortion levels per dB PSNR from a CSV with columns sequence,psnr.
    Resolution {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        step: f64,
        #[arg(long, default_value_t = 2.0)]
        width: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct RecalibrateArgs {
    /// Boosted triplet records.
    #[arg(long)]
    boosted: PathBuf,
    /// Plain triplet records.
    #[arg(long)]
    plain: PathBuf,
    #[arg(long, default_value_t = 400)]
    budget: usize,
    /// Share of the budget spent on plain comparisons.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 101)]
    repeats: usize,
    #[arg(long, default_value = "thurstone")]
    model: ModelKind,
    #[arg(long, default_value_t = 4)]
    restarts: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Report CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Recalibrated scales as JSON.
    #[arg(long)]
    scales_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Append-only event log; replayed on start.
    #[arg(long)]
    log: PathBuf,
    /// HITs to add (JSONL); ones already in the log are skipped.
    #[arg(long)]
    hits: Option<PathBuf>,
    /// Directory holding `<frame id>.png`.
    #[arg(long)]
    stimuli: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, default_value_t = 3)]
    max_rounds: usize,
    #[arg(long, default_value_t = 3)]
    max_skips: usize,
}

fn run(cli: Cli) -> util::Result<()> {
    let paths = Paths { root: cli.data_root };
    match cli.command {
        Command::Generate(a) => pipeline::generate(&paths, a),
        Command::Boost(a) => pipeline::boost(&paths, a),
        Command::Simulate(c) => simulate::run(&paths, c),
        Command::Reconstruct(a) => analyze::reconstruct_cmd(&paths, a),
        Command::Clean(a) => analyze::clean(&paths, a),
        Command::Analyze(c) => analyze::run(&paths, c),
        Command::Recalibrate(a) => analyze::recalibrate(&paths, a),
        Command::Serve(a) => pipeline::serve(&paths, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("boostiqa: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
