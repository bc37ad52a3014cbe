use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use tracing_subscriber::EnvFilter;

use skyblendr::config::PipelineConfig;
use skyblendr::pipeline::run;

// Every stage allocates frame-sized buffers; the system allocator hands
// them back to the OS and pays page faults on each frame.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Replace the sky in a numbered image sequence.
#[derive(Debug, Parser)]
#[command(name = "skyblendr", version)]
struct Cli {
    /// Config file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of numbered input frames.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Sky template image.
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Guided filter radius.
    #[arg(long)]
    radius: Option<usize>,
    /// Guided filter regularization.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Density threshold for match filtering.
    #[arg(long)]
    eta: Option<f64>,
    /// KDE bandwidth in pixels.
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    crop_factor: Option<f64>,
    /// Read coarse mattes from this directory instead of estimating them.
    #[arg(long)]
    matte_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Write a JSON run report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

impl Cli {
    fn into_config(self) -> skyblendr::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::from_file(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.input {
            cfg.input = v;
        }
        if let Some(v) = self.output {
            cfg.output = v;
        }
        if let Some(v) = self.template {
            cfg.template = v;
        }
        if let Some(v) = self.alpha {
            cfg.harmonization.alpha = v;
        }
        if let Some(v) = self.beta {
            cfg.harmonization.beta = v;
        }
        if let Some(v) = self.radius {
            cfg.guided.radius = v;
        }
        if let Some(v) = self.epsilon {
            cfg.guided.epsilon = v;
        }
        if let Some(v) = self.eta {
            cfg.motion.eta = v;
        }
        if let Some(v) = self.bandwidth {
            cfg.motion.kde_bandwidth = v;
        }
        if let Some(v) = self.crop_factor {
            cfg.crop_factor = v;
        }
        if let Some(v) = self.matte_dir {
            cfg.matte_dir = Some(v);
        }
        if let Some(v) = self.seed {
            cfg.motion.rng_seed = v;
        }
        if let Some(v) = self.threads {
            cfg.threads = v;
        }
        if let Some(v) = self.report {
            cfg.report = Some(v);
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();

    let result = Cli::parse().into_config().and_then(|cfg| run(&cfg));
    match result {
        Ok(summary) => {
            println!(
                "{} frames, {:.2} fps (matting {:.1} ms, motion {:.1} ms, render {:.1} ms, blend {:.1} ms), {} motion fallbacks",
                summary.frames,
                summary.fps,
                summary.matting.mean_seconds * 1e3,
                summary.motion.mean_seconds * 1e3,
                summary.render.mean_seconds * 1e3,
                summary.blend.mean_seconds * 1e3,
                summary.fallbacks,
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
