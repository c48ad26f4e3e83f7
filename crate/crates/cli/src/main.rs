use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use patchsvd::clustering::Init;
use patchsvd::commands::{self, RunConfig, DEFAULT_CF_THRESHOLD};
use patchsvd::report::Method;

/// Cluster-based low-rank image compression with a global SVD baseline.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compress a grayscale PGM/PNG image into an archive.
    Compress {
        /// Input image (8-bit grayscale PGM or PNG).
        input: PathBuf,
        /// Archive to write.
        #[arg(long)]
        out: PathBuf,
        /// Global truncation rank (global method).
        #[arg(long)]
        rank: Option<usize>,
        /// Target compression factor; overrides --alpha or --rank.
        #[arg(long)]
        cf: Option<f64>,
        #[command(flatten)]
        opts: PipelineOpts,
        /// Write a JSON run report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Rebuild an image from an archive and write it as PNG.
    Decompress {
        archive: PathBuf,
        /// Image to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a reconstruction against its original.
    Evaluate {
        original: PathBuf,
        reconstructed: PathBuf,
        #[command(flatten)]
        metrics: MetricOpts,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare cluster-based and global SVD at matched compression factors.
    Compare {
        input: PathBuf,
        /// Comma-separated compression factor targets.
        #[arg(long, value_delimiter = ',', required = true)]
        cf_targets: Vec<f64>,
        /// Maximum relative CF difference for a matched pair.
        #[arg(long, default_value_t = DEFAULT_CF_THRESHOLD)]
        cf_threshold: f64,
        #[command(flatten)]
        opts: PipelineOpts,
        #[command(flatten)]
        metrics: MetricOpts,
        /// CSV table of per-region metrics.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Full JSON report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct PipelineOpts {
    #[arg(long, value_enum, default_value_t = MethodArg::Cluster)]
    method: MethodArg,
    #[arg(long, default_value_t = 8)]
    patch_size: usize,
    /// Patch stride; half the patch size when omitted.
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long, default_value_t = 8)]
    clusters: usize,
    /// Fraction of singular value energy kept per cluster.
    #[arg(long, default_value_t = 0.95)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = patchsvd::clustering::DEFAULT_MAX_ITER)]
    max_iter: usize,
    #[arg(long, value_enum, default_value_t = InitArg::Random)]
    init: InitArg,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct MetricOpts {
    /// ROI mask image; nonzero pixels belong to the ROI.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// IoU foreground threshold; Otsu's threshold of the original when omitted.
    #[arg(long)]
    iou_threshold: Option<f64>,
    /// Mean SSIM over sliding windows of this size instead of one window.
    #[arg(long)]
    ssim_window: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum MethodArg {
    Cluster,
    Global,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum InitArg {
    Random,
    PlusPlus,
}

impl PipelineOpts {
    fn apply(&self, config: &mut RunConfig) {
        config.method = match self.method {
            MethodArg::Cluster => Method::Cluster,
            MethodArg::Global => Method::Global,
        };
        config.patch_size = self.patch_size;
        config.stride = self.stride;
        config.clusters = self.clusters;
        config.alpha = self.alpha;
        config.seed = self.seed;
        config.max_iter = self.max_iter;
        config.init = match self.init {
            InitArg::Random => Init::Random,
            InitArg::PlusPlus => Init::PlusPlus,
        };
        config.threads = self.threads;
    }
}

impl MetricOpts {
    fn apply(&self, config: &mut RunConfig) {
        config.mask.clone_from(&self.mask);
        config.iou_threshold = self.iou_threshold;
        config.ssim_window = self.ssim_window;
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Compress {
            input,
            out,
            rank,
            cf,
            opts,
            report,
        } => {
            let mut config = RunConfig::new(&input);
            opts.apply(&mut config);
            config.rank = rank;
            config.cf = cf;
            config.out = Some(out.clone());
            config.report = report;
            let run = commands::cmd_compress(&config).with_context(|| format!("compressing {}", input.display()))?;
            println!(
                "{}: {} method, CF {:.3} (effective {:.3}), ranks {:?}, {} bytes",
                out.display(),
                run.compression.method.as_str(),
                run.compression.cf_nominal,
                run.compression.cf_effective,
                run.compression.ranks,
                run.archive_bytes
            );
        }
        Command::Decompress { archive, out } => {
            commands::cmd_decompress(&archive, &out).with_context(|| format!("decompressing {}", archive.display()))?;
            println!("{}", out.display());
        }
        Command::Evaluate {
            original,
            reconstructed,
            metrics,
            report,
        } => {
            let mut config = RunConfig::new(&original);
            metrics.apply(&mut config);
            config.report.clone_from(&report);
            let result = commands::cmd_evaluate(&config, &reconstructed)?;
            if report.is_none() {
                println!("{}", serde_json::to_string_pretty(&result)?);
            }
        }
        Command::Compare {
            input,
            cf_targets,
            cf_threshold,
            opts,
            metrics,
            out,
            report,
        } => {
            let mut config = RunConfig::new(&input);
            opts.apply(&mut config);
            metrics.apply(&mut config);
            config.cf_targets = cf_targets;
            config.cf_threshold = cf_threshold;
            config.out = out.clone();
            config.report = report;
            let result = commands::cmd_compare(&config).with_context(|| format!("comparing on {}", input.display()))?;
            if out.is_none() {
                patchsvd::report::write_compare_csv(std::io::stdout().lock(), &result.rows)?;
            }
        }
    }
    Ok(())
}
