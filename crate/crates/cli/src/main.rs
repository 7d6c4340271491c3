//! `wavefield`: ingest gridded wave-height replicates, fit the deformed
//! Matérn model and evaluate route risk.
//!
//! Every subcommand writes plot-ready CSV/JSON tables into `--out` together
//! with `<subcommand>.manifest.json`. Exit status is 0 on success, 2 for
//! invalid input and 3 for numerical failures.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::manifest::{sha256_file, Manifest};

#[derive(Debug, Parser)]
#[command(name = "wavefield", version, about = "Non-stationary wave-height random fields and route risk")]
pub struct Cli {
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "WAVEFIELD_THREADS")]
    pub threads: Option<usize>,
    /// Random seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a CSV-grid file and summarise it.
    Ingest(IngestArgs),
    /// Sample a CSV-grid dataset from a parameter file.
    Synthesize(SynthesizeArgs),
    /// Build the extended mesh and report its quality.
    Mesh(MeshArgs),
    /// Maximum-likelihood fit of the model to a CSV-grid file.
    Fit(FitArgs),
    /// Likelihood-ratio test between a stationary and a non-stationary fit.
    Lrt(LrtArgs),
    /// Simulate replicates on the grid of a dataset.
    Simulate(SimulateArgs),
    /// Correlations of every mesh node with one node.
    Correlate(CorrelateArgs),
    /// Exceedance bound of the maximum wave height along a route.
    Exceed(ExceedArgs),
    /// Fatigue damage distribution along a route.
    Fatigue(FatigueArgs),
    /// Reconstruct the deformation space and report folds.
    Deform(DeformArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    /// Generating parameters; defaults to the identity deformation with α = 2.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Copy grid and land mask from this CSV-grid file.
    #[arg(long, conflicts_with_all = ["nx", "ny"])]
    pub grid_from: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub nx: usize,
    #[arg(long, default_value_t = 20)]
    pub ny: usize,
    #[arg(long, default_value_t = 0.0)]
    pub x0: f64,
    #[arg(long, default_value_t = 0.0)]
    pub y0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub dx: f64,
    #[arg(long, default_value_t = 1.0)]
    pub dy: f64,
    /// Number of replicates.
    #[arg(long, short, default_value_t = 182)]
    pub n: usize,
    #[command(flatten)]
    pub model: ModelArgs,
}

/// Mesh construction shared by the model-based subcommands.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Mesh extension width in multiples of the largest practical range.
    #[arg(long, default_value_t = 2.0)]
    pub extension: f64,
}

#[derive(Debug, Args)]
pub struct MeshArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Parameters setting the local edge lengths; defaults to the local estimates.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Basis order used when starting from the local estimates.
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Cosine basis order.
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// Fixed smoothness α; by default it is chosen from the local estimates.
    #[arg(long)]
    pub alpha: Option<u32>,
    /// Fit only the constant basis terms.
    #[arg(long)]
    pub stationary: bool,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub grad_tol: f64,
    /// Starting nugget standard deviation.
    #[arg(long)]
    pub nugget_init: Option<f64>,
    /// Starting parameters instead of the local estimates.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Prefix of the output files.
    #[arg(long, default_value = "fit")]
    pub name: String,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct LrtArgs {
    /// Fit report of the stationary (null) model.
    #[arg(long)]
    pub stationary: PathBuf,
    /// Fit report of the non-stationary model.
    #[arg(long)]
    pub nonstationary: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    pub significance: f64,
    /// Degrees of freedom; defaults to the difference in parameter counts.
    #[arg(long)]
    pub df: Option<u32>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub params: PathBuf,
    /// CSV-grid file providing the grid and land mask.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, short, default_value_t = 100)]
    pub n: usize,
    /// Write `H_s` using the per-location log mean and sd of the input.
    #[arg(long)]
    pub back_transform: bool,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Reference mesh node.
    #[arg(long, conflicts_with = "at")]
    pub node: Option<usize>,
    /// Reference point `x,y`; the nearest mesh node is used.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    pub at: Option<(f64, f64)>,
    #[command(flatten)]
    pub model: ModelArgs,
}

/// Route inputs shared by `exceed` and `fatigue`.
#[derive(Debug, Args)]
pub struct RouteArgs {
    #[arg(long)]
    pub params: PathBuf,
    /// Raw CSV-grid file; its log mean and sd give the route marginals.
    #[arg(long)]
    pub input: PathBuf,
    /// Route CSV with columns x, y and optional speed, heading, wave_direction, seg_len.
    #[arg(long)]
    pub route: PathBuf,
    /// Metres per coordinate unit for segment lengths.
    #[arg(long, default_value_t = 1.0)]
    pub metres_per_unit: f64,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct ExceedArgs {
    #[command(flatten)]
    pub route: RouteArgs,
    /// Smallest threshold in metres.
    #[arg(long, default_value_t = 2.0)]
    pub u_min: f64,
    #[arg(long, default_value_t = 12.0)]
    pub u_max: f64,
    #[arg(long, default_value_t = 0.5)]
    pub u_step: f64,
    /// Simulations for an empirical exceedance column (0 skips it).
    #[arg(long, default_value_t = 0)]
    pub n_sim: usize,
}

#[derive(Debug, Args)]
pub struct FatigueArgs {
    #[command(flatten)]
    pub route: RouteArgs,
    /// Simulations under the dependent and the independent model.
    #[arg(long, default_value_t = 200)]
    pub n_sim: usize,
    /// Fatigue constant C.
    #[arg(long, default_value_t = 20.0)]
    pub c: f64,
    /// S-N exponent β.
    #[arg(long, default_value_t = 3.0)]
    pub beta: f64,
    /// log10 of the S-N constant γ.
    #[arg(long, default_value_t = 12.73)]
    pub log10_gamma: f64,
}

#[derive(Debug, Args)]
pub struct DeformArgs {
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Node mapped to the origin; defaults to the node nearest the domain centroid.
    #[arg(long)]
    pub base_node: Option<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

fn parse_point(s: &str) -> Result<(f64, f64), String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| e.to_string());
    Ok((p(x)?, p(y)?))
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Synthesize(_) => "synthesize",
            Command::Mesh(_) => "mesh",
            Command::Fit(_) => "fit",
            Command::Lrt(_) => "lrt",
            Command::Simulate(_) => "simulate",
            Command::Correlate(_) => "correlate",
            Command::Exceed(_) => "exceed",
            Command::Fatigue(_) => "fatigue",
            Command::Deform(_) => "deform",
            Command::Replay(_) => "replay",
        }
    }

    fn inputs(&self) -> Vec<PathBuf> {
        let route = |r: &RouteArgs| vec![r.params.clone(), r.input.clone(), r.route.clone()];
        match self {
            Command::Ingest(a) => vec![a.input.clone()],
            Command::Synthesize(a) => a.params.iter().chain(&a.grid_from).cloned().collect(),
            Command::Mesh(a) => std::iter::once(&a.input).chain(&a.params).cloned().collect(),
            Command::Fit(a) => std::iter::once(&a.input).chain(&a.init).cloned().collect(),
            Command::Lrt(a) => vec![a.stationary.clone(), a.nonstationary.clone()],
            Command::Simulate(a) => vec![a.params.clone(), a.input.clone()],
            Command::Correlate(a) => vec![a.params.clone(), a.input.clone()],
            Command::Exceed(a) => route(&a.route),
            Command::Fatigue(a) => route(&a.route),
            Command::Deform(a) => vec![a.params.clone(), a.input.clone()],
            Command::Replay(a) => vec![a.manifest.clone()],
        }
    }
}

fn execute(cli: Cli, args: Vec<String>) -> Result<()> {
    if let Command::Replay(r) = &cli.command {
        let m = manifest::Manifest::load(&r.manifest)?;
        std::env::set_current_dir(&m.cwd).with_context(|| format!("entering {}", m.cwd.display()))?;
        let argv = std::iter::once("wavefield".to_string()).chain(m.args.iter().cloned());
        let inner = Cli::try_parse_from(argv).context("manifest arguments")?;
        if matches!(inner.command, Command::Replay(_)) {
            bail!("a manifest cannot replay another manifest");
        }
        return execute(inner, m.args);
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!(wavefield::Error::InvalidInput("--threads must be positive".into()));
        }
        // a second call (replay) keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let inputs = cli.command.inputs();
    for p in &inputs {
        if !p.is_file() {
            bail!(wavefield::Error::InvalidInput(format!("input file {} not found", p.display())));
        }
    }
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let start = Instant::now();
    let ctx = commands::Ctx {
        out: cli.out.clone(),
        seed: cli.seed,
    };
    let outputs = commands::run(&cli.command, &ctx)?;
    let manifest = Manifest {
        tool: "wavefield".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: cli.command.name().into(),
        args,
        cwd: std::env::current_dir()?,
        seed: cli.seed,
        threads: cli.threads,
        inputs: inputs
            .iter()
            .map(|p| {
                Ok(manifest::InputFile {
                    path: p.clone(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<_>>()?,
        outputs,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    manifest.save(&cli.out.join(Manifest::file_name(cli.command.name())))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<wavefield::Error>() {
        Some(e) if e.is_numerical() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    match execute(cli, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numerical_failures_map_to_three() {
        let num = anyhow::Error::from(wavefield::Error::NotPositiveDefinite { column: 3, pivot: -1.0 });
        assert_eq!(exit_code(&num), 3);
        assert_eq!(exit_code(&num.context("fitting")), 3);
        let bad = anyhow::Error::from(wavefield::Error::InvalidInput("x".into()));
        assert_eq!(exit_code(&bad), 2);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), 2);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn point_parser() {
        assert_eq!(parse_point("1.5,-2").unwrap(), (1.5, -2.0));
        assert!(parse_point("1.5").is_err());
    }
}
