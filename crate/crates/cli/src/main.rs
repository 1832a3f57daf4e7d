use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use curlcurl_lod::harness::{self, Example, ExperimentConfig};

#[derive(Parser)]
#[command(name = "curlcurl-lod", version, about = "Multiscale curl-curl experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the discrete complex, the projection identities and corrector constraints.
    Validate,
    /// Run a convergence study and write the results as CSV.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// key=value file mirroring these flags; flags given here win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    example: Option<u8>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(2..=3))]
    dim: Option<u8>,
    /// Coarse levels as `j0:j1` (inclusive).
    #[arg(long)]
    levels: Option<String>,
    /// Comma-separated layer counts, one per level.
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    ref_level: Option<u32>,
    /// none | boundary | patch-boundary | all
    #[arg(long)]
    source_correction: Option<String>,
    /// standard | zeroed
    #[arg(long)]
    pi_variant: Option<String>,
    /// checkerboard (mu and kappa) | unit-kappa (checkerboard mu only)
    #[arg(long)]
    medium: Option<String>,
    /// Use the whole domain as corrector patch.
    #[arg(long)]
    ideal: bool,
    /// Leave the seconds column empty so repeated runs produce identical files.
    #[arg(long)]
    no_timing: bool,
    /// Allow 3D reference levels above 3 (hours of compute).
    #[arg(long)]
    long_run: bool,
    /// Directory for cached correctors.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Write a matplotlib script next to the CSV.
    #[arg(long)]
    plot: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let text = match &args.config {
        Some(p) => Some(fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    // Example and dimension select the defaults, so resolve them before the remaining keys.
    let mut base = ExperimentConfig::new(Example::One, 2);
    if let Some(t) = &text {
        base.apply_text(t)?;
    }
    let example = match args.example {
        Some(n) => Example::from_number(n)?,
        None => base.example,
    };
    let dim = args.dim.map_or(base.dim, usize::from);
    let mut cfg = ExperimentConfig::new(example, dim);
    if let Some(t) = &text {
        cfg.apply_text(t)?;
        cfg.example = example;
        cfg.dim = dim;
    }
    let mut set = |k: &str, v: Option<String>| -> Result<()> {
        if let Some(v) = v {
            cfg.apply(k, &v)?;
        }
        Ok(())
    };
    set("levels", args.levels.clone())?;
    set("m", args.m.clone())?;
    set("ref-level", args.ref_level.map(|r| r.to_string()))?;
    set("source-correction", args.source_correction.clone())?;
    set("pi-variant", args.pi_variant.clone())?;
    set("medium", args.medium.clone())?;
    set("out", args.out.as_ref().map(|p| p.display().to_string()))?;
    set("cache-dir", args.cache_dir.as_ref().map(|p| p.display().to_string()))?;
    if args.ideal {
        cfg.ideal = true;
    }
    if args.no_timing {
        cfg.timing = false;
    }
    if cfg.dim == 3 && cfg.ref_level > 3 && !args.long_run {
        bail!("3D reference level {} needs --long-run", cfg.ref_level);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = build_config(&args)?;
    let report = harness::run_example(&cfg)?;
    match &cfg.out {
        Some(path) => {
            let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            report.write_csv(io::BufWriter::new(file))?;
            if args.plot {
                let rate = if matches!(cfg.example, Example::Two | Example::Four) { 0.5 } else { 1.0 };
                let script = path.with_extension("py");
                fs::write(&script, harness::plot_script(&path.display().to_string(), rate))?;
            }
        }
        None => report.write_csv(io::stdout().lock())?,
    }
    let mut err = io::stderr().lock();
    if let Some(s) = report.lod_slope {
        writeln!(err, "LOD slope {s:.3}")?;
    }
    if let Some(s) = report.fem_slope {
        writeln!(err, "FEM slope {s:.3}")?;
    }
    writeln!(err, "max corrector kernel residual {:.2e}", report.kernel_residual)?;
    Ok(())
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate => {
            let checks = harness::validate()?;
            let mut out = io::stdout().lock();
            for c in &checks {
                writeln!(out, "{c}")?;
            }
            let failed = checks.iter().filter(|c| !c.passed()).count();
            writeln!(out, "{} checks, {failed} failed", checks.len())?;
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Run(args) => {
            run(args)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
