//! `topolevel`: vectorize rasters, reconstruct 3D shapes from views, run the
//! derivative self-checks and the demos.
//!
//! Exit codes: 0 success, 1 input error, 2 no convergence (or failed checks).

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "topolevel", version, about = "Level-set shape optimization with topological derivatives")]
struct Cli {
    /// Worker threads for the numeric kernels (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// TOML configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for randomized scenes (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a two-phase level set to a PNG and export it as SVG.
    Vectorize(VectorizeArgs),
    /// Reconstruct a closed surface from calibrated views.
    Recon3d(ReconArgs),
    /// Compare analytic derivatives with brute-force oracles.
    Check(CheckArgs),
    /// Reproduce one of the qualitative demos with its failure control.
    Demo(DemoArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InitShape {
    /// Centered disk, radius 35% of the short side.
    Disk,
    /// Centered square inset by a quarter of each side.
    Box,
    /// Lattice of small disks.
    Grid,
    /// Nothing: all background, relies on nucleation.
    Empty,
}

#[derive(Args, Debug)]
pub struct VectorizeArgs {
    #[arg(long)]
    input: PathBuf,
    /// SVG to write; history.csv and manifest.json go next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = InitShape::Disk)]
    init: InitShape,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    dt_cfl: Option<f64>,
    /// Mollifier half-width in pixels.
    #[arg(long)]
    eps: Option<f64>,
    /// Band-masked shape derivative only (no nucleation).
    #[arg(long)]
    no_td: bool,
    /// Refit the two colors every N iterations (0 = keep the initial fit).
    #[arg(long)]
    refit_every: Option<usize>,
    /// Polyline simplification tolerance in pixels.
    #[arg(long)]
    tol: Option<f64>,
    /// Directory for numbered composite frames.
    #[arg(long)]
    frames: Option<PathBuf>,
    #[arg(long)]
    frame_every: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SyntheticShape {
    Sphere,
    Torus,
    Holeball,
    Box,
}

#[derive(Args, Debug)]
pub struct ReconArgs {
    /// Generate the target and its views in-process.
    #[arg(long, value_enum, conflicts_with_all = ["cameras", "refs"])]
    synthetic: Option<SyntheticShape>,
    /// Camera file, one camera per line.
    #[arg(long, requires = "refs")]
    cameras: Option<PathBuf>,
    /// Reference PNGs in camera order.
    #[arg(long, num_args = 1.., requires = "cameras")]
    refs: Vec<PathBuf>,
    /// Number of synthetic views.
    #[arg(long)]
    views: Option<usize>,
    /// Grid nodes per axis.
    #[arg(long)]
    grid: Option<usize>,
    /// Synthetic image resolution.
    #[arg(long)]
    res: Option<usize>,
    #[arg(long)]
    lambda_td: Option<f64>,
    #[arg(long)]
    lambda_sd: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    snapshot_every: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    /// Run a single suite.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(topolevel::checks::SUITES))]
    only: Option<String>,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DemoName {
    /// Small disk far from a square target: needs phase nucleation.
    #[value(name = "teaser2d-a")]
    TeaserA,
    /// Disk inside an annulus target: needs a hole.
    #[value(name = "teaser2d-b")]
    TeaserB,
    /// Occluder above a plane, fitted to its shadow.
    Shadow,
}

#[derive(Args, Debug)]
pub struct DemoArgs {
    #[arg(value_enum)]
    name: DemoName,
    #[arg(long)]
    out: PathBuf,
    /// Image size (2D demos) or grid size (shadow).
    #[arg(long)]
    size: Option<usize>,
}

/// Result of a command that ran to completion.
pub enum Outcome {
    Success,
    /// Ran out of iterations, or a check or demo claim did not hold.
    NotConverged,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let mut cfg = config::RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let threads = if cli.threads > 0 { cli.threads } else { rayon::current_num_threads() };
    let mut manifest = manifest::ManifestBuilder::new(command_name(&cli.command), threads);
    if let Some(p) = &cli.config {
        manifest.input(p);
    }
    match cli.command {
        Command::Vectorize(a) => commands::vectorize(&a, cfg, manifest),
        Command::Recon3d(a) => commands::recon3d(&a, cfg, manifest),
        Command::Check(a) => commands::check(&a, &cfg),
        Command::Demo(a) => commands::demo(&a, cfg, manifest),
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Vectorize(_) => "vectorize",
        Command::Recon3d(_) => "recon3d",
        Command::Check(_) => "check",
        Command::Demo(_) => "demo",
    }
}
