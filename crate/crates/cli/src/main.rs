//! `shdfseg` command-line tool.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "shdfseg", version, about = "Shape-diameter-function mesh segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalOpts,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Seed for every stochastic stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `key = value` file of defaults; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Validate inputs and print the resolved configuration without computing.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// More log output (repeatable); SEG_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Args, Default)]
pub struct ShdfOpts {
    /// Rays per face.
    #[arg(long)]
    pub rays: Option<usize>,
    /// Cone half-angle in degrees.
    #[arg(long, value_name = "DEG")]
    pub cone_angle: Option<f64>,
    /// Log-normalization strength.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_name = "N")]
    pub smoothing_iterations: Option<usize>,
    #[arg(long)]
    pub smoothing_sigma: Option<f64>,
    #[arg(long, value_enum)]
    pub aggregator: Option<AggregatorArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AggregatorArg {
    WeightedMean,
    Median,
}

#[derive(Debug, Args, Default)]
pub struct PartitionOpts {
    /// Mixture components.
    #[arg(long)]
    pub k: Option<usize>,
    /// Boundary-cost weight.
    #[arg(long = "lambda", value_name = "LAMBDA")]
    pub lambda_smooth: Option<f64>,
    #[arg(long)]
    pub concavity_bias: Option<f64>,
    #[arg(long)]
    pub min_part_faces: Option<usize>,
    #[arg(long)]
    pub max_cycles: Option<usize>,
    /// Smooth part boundaries after the cut.
    #[arg(long)]
    pub smooth: bool,
}

#[derive(Debug, Args, Default)]
pub struct SourceOpts {
    /// Use a trained model instead of ray casting.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Sampling radius for the model (default: 5% of the bounding-box diagonal).
    #[arg(long)]
    pub radius: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ray-cast ShDF per face.
    Shdf {
        mesh: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Also write a PLY with the field as a face scalar.
        #[arg(long, value_name = "FILE")]
        ply: Option<PathBuf>,
        /// Skip normalization and smoothing.
        #[arg(long)]
        raw: bool,
        #[command(flatten)]
        shdf: ShdfOpts,
    },
    /// Poisson-disk samples with neighbourhoods and densities.
    Sample {
        mesh: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        radius: Option<f64>,
    },
    /// Train a model on a dataset directory.
    Train {
        dataset: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        /// Step where the learning-rate decay starts (default: 60% of steps).
        #[arg(long)]
        decay_start: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        lr_final: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long, value_name = "FILE")]
        history: Option<PathBuf>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Predict a per-face field with a trained model.
    Infer {
        mesh: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        radius: Option<f64>,
    },
    /// Segment a mesh.
    Segment {
        mesh: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Also write a PLY coloured by part.
        #[arg(long, value_name = "FILE")]
        ply: Option<PathBuf>,
        /// Write a JSON run manifest with timings.
        #[arg(long, value_name = "FILE")]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        source: SourceOpts,
        #[command(flatten)]
        shdf: ShdfOpts,
        #[command(flatten)]
        partition: PartitionOpts,
    },
    /// Split one part of an existing segmentation.
    Refine {
        mesh: PathBuf,
        #[arg(long, value_name = "FILE")]
        segmentation: PathBuf,
        #[arg(long)]
        part: u32,
        /// Restrict the parent field instead of recomputing it on the part.
        #[arg(long)]
        reuse_field: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        ply: Option<PathBuf>,
        #[command(flatten)]
        source: SourceOpts,
        #[command(flatten)]
        shdf: ShdfOpts,
        #[command(flatten)]
        partition: PartitionOpts,
    },
    /// Rank partitions over a (k, lambda) grid with one field computation.
    GridSearch {
        mesh: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        ks: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
        #[arg(long, value_enum, default_value = "energy")]
        metric: MetricArg,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Write the best segmentation here.
        #[arg(long, value_name = "FILE")]
        best: Option<PathBuf>,
        #[command(flatten)]
        source: SourceOpts,
        #[command(flatten)]
        shdf: ShdfOpts,
        #[command(flatten)]
        partition: PartitionOpts,
    },
    /// Build a training dataset from deformed variants of a base mesh.
    GenData {
        base: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 8)]
        variants: usize,
        /// Midpoint subdivision levels applied to each variant.
        #[arg(long, default_value_t = 0)]
        tessellate: u32,
        /// Tangential jitter as a fraction of the local edge length.
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        #[arg(long, default_value_t = 0.0)]
        flip_fraction: f64,
        #[arg(long)]
        radius: Option<f64>,
        #[command(flatten)]
        shdf: ShdfOpts,
    },
    /// Oracle versus model timing per mesh.
    Bench {
        #[arg(required = true)]
        meshes: Vec<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        radius: Option<f64>,
        /// Machine-readable output.
        #[arg(long)]
        json: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        shdf: ShdfOpts,
        #[command(flatten)]
        partition: PartitionOpts,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MetricArg {
    Energy,
    Silhouette,
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SEG_LOG", default))
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.global.verbose);
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
