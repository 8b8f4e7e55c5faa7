use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  I/O error
  2  input parse error
  3  invalid parameter
  4  numerical failure (eigensolver, ill-conditioned extension)
  5  disconnected graph with --fail-on-disconnected";

#[derive(Debug, Parser, Serialize)]
#[command(name = "sca", version, about = "Spectral connectivity analysis with diffusion maps", after_help = EXIT_CODES)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Sample a synthetic point cloud.
    Generate(GenerateArgs),
    /// Fit a diffusion map and export the embedding.
    Embed(EmbedArgs),
    /// Nyström extension of the embedding to query points.
    Extend(ExtendArgs),
    /// Diffusion distances for index pairs.
    Distance(DistanceArgs),
    /// Bandwidth selection.
    SelectBandwidth(SelectArgs),
    /// Nodal domains sign(psi_l).
    Nodal(NodalArgs),
    /// Geodesic versus diffusion distance on the noisy spiral.
    SpiralExperiment(SpiralArgs),
    /// k-means in diffusion coordinates and the quantized chain.
    CoarseGrain(CoarseArgs),
    /// Quadrature ground truth for one-dimensional densities.
    Oracle(OracleArgs),
    /// Eigenvector error against the oracle over a bandwidth grid.
    ConvergenceStudy(ConvergenceArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct Common {
    /// Output directory; created at the end of a successful run.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Treat a disconnected graph as an error (exit code 5).
    #[arg(long)]
    pub fail_on_disconnected: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct InputArgs {
    /// Headerless numeric CSV, one point per row.
    #[arg(long, short)]
    pub input: PathBuf,
    /// The last column holds integer labels.
    #[arg(long)]
    pub labels: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    Snr,
    SnrNodal,
    Neighborhood,
    Mst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    Auto,
    Dense,
    Lanczos,
}

/// Options of the bandwidth selection rules.
#[derive(Debug, Args, Serialize)]
pub struct RuleOptions {
    /// Candidate bandwidths: `a,b,c` or `geom:lo:hi:count`.
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<Grid>,
    /// Target median neighbour count of the neighbourhood rule.
    #[arg(long, default_value_t = 100)]
    pub neighbors: usize,
    /// Eigenvector index monitored by the SNR rules.
    #[arg(long, default_value_t = 1)]
    pub ell: usize,
    /// Bootstrap replicates.
    #[arg(long, default_value_t = 50)]
    pub replicates: usize,
    /// SNR threshold K_n.
    #[arg(long, default_value_t = sca::bandwidth::DEFAULT_SNR_THRESHOLD)]
    pub threshold: f64,
    /// Use K_n = C n^(2/(d+8)) with this C instead of --threshold.
    #[arg(long)]
    pub threshold_scale: Option<f64>,
}

/// Exactly one of `--epsilon` and `--select`.
#[derive(Debug, Args, Serialize)]
pub struct Bandwidth {
    #[arg(long, short, conflicts_with = "select")]
    pub epsilon: Option<f64>,
    /// Select the bandwidth with this rule.
    #[arg(long, value_enum)]
    pub select: Option<Rule>,
    #[command(flatten)]
    pub rule: RuleOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dist {
    TwoGaussians,
    ThreeGaussians,
    Spiral,
    ParallelLines,
    TwoPointMasses,
    RingBlobNoise,
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, short)]
    pub n: usize,
    /// Built-in distribution.
    #[arg(long, value_enum, required_unless_present = "spec", conflicts_with = "spec")]
    pub dist: Option<Dist>,
    /// TOML generator spec (a `distribution` table with a `kind` key).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Spiral noise mean.
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub bandwidth: Bandwidth,
    /// Diffusion steps.
    #[arg(long, default_value_t = 1)]
    pub m: u64,
    /// Number of nontrivial eigenvectors.
    #[arg(long, default_value_t = 4)]
    pub q: usize,
    #[arg(long, value_enum, default_value_t = Solver::Auto)]
    pub solver: Solver,
}

#[derive(Debug, Args, Serialize)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ExtendArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Query points, same dimension as the input.
    #[arg(long)]
    pub query: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceMethod {
    /// Truncated spectral sum over q eigenpairs.
    Spectral,
    /// Rows of A^m, exact.
    Direct,
}

#[derive(Debug, Args, Serialize)]
pub struct DistanceArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub fit: FitArgs,
    /// CSV of zero-based index pairs `i,j`.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, value_enum, default_value_t = DistanceMethod::Direct)]
    pub method: DistanceMethod,
}

#[derive(Debug, Args, Serialize)]
pub struct SelectArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum)]
    pub rule: Rule,
    #[command(flatten)]
    pub options: RuleOptions,
}

#[derive(Debug, Args, Serialize)]
pub struct NodalArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub bandwidth: Bandwidth,
    /// Eigenvector indices.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub ells: Vec<usize>,
    /// Reference signs, one column per index in `--ells`.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpiralMode {
    Sensitivity,
    Consistency,
}

#[derive(Debug, Args, Serialize)]
pub struct SpiralArgs {
    #[arg(value_enum)]
    pub mode: SpiralMode,
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 0.8)]
    pub a: f64,
    #[arg(long, default_value_t = 10.0)]
    pub b: f64,
    /// Noise mean of the perturbed realizations.
    #[arg(long, default_value_t = 0.09)]
    pub beta: f64,
    /// Graph radius; defaults to 0.15 (sensitivity) or 0.1 (consistency).
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Sensitivity: sample size.
    #[arg(long, default_value_t = 800)]
    pub n: usize,
    /// Sensitivity: noiseless baseline realizations.
    #[arg(long, default_value_t = 100)]
    pub baseline_reps: usize,
    /// Sensitivity: diffusion steps.
    #[arg(long, default_value_t = 50)]
    pub m: u64,
    /// Consistency: sample sizes.
    #[arg(long, value_delimiter = ',', default_value = "600,2000,4000")]
    pub sizes: Vec<usize>,
    #[arg(long)]
    pub t_min: Option<f64>,
    #[arg(long)]
    pub t_max: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Words,
}

#[derive(Debug, Args, Serialize)]
pub struct CoarseArgs {
    #[command(flatten)]
    pub common: Common,
    /// Point CSV.
    #[arg(long, short, required_unless_present = "counts", conflicts_with = "counts")]
    pub input: Option<PathBuf>,
    /// Document-by-word count CSV; words become points via mutual information.
    #[arg(long)]
    pub counts: Option<PathBuf>,
    #[arg(long, short, conflicts_with_all = ["preset", "preset_file"])]
    pub epsilon: Option<f64>,
    /// Named parameter preset (bandwidth, m, q, k).
    #[arg(long, value_enum, conflicts_with = "preset_file")]
    pub preset: Option<Preset>,
    /// TOML preset with keys epsilon, snr_cutoff, m, q, k.
    #[arg(long)]
    pub preset_file: Option<PathBuf>,
    #[arg(long)]
    pub m: Option<u64>,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = sca::coarsegrain::DEFAULT_RESTARTS)]
    pub restarts: usize,
    /// Eigenvalues compared by the spectral fidelity check.
    #[arg(long, default_value_t = 1)]
    pub fidelity: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityName {
    TwoGaussians,
    ThreeGaussians,
    Uniform,
}

#[derive(Debug, Args, Serialize)]
pub struct DensityArgs {
    #[arg(long, value_enum, conflicts_with = "density_file")]
    pub density: Option<DensityName>,
    /// TOML density with a `kind` key.
    #[arg(long)]
    pub density_file: Option<PathBuf>,
    /// Quadrature grid size.
    #[arg(long, default_value_t = 1000)]
    pub grid_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMode {
    /// Reference eigenfunctions on the grid.
    Eigen,
    /// Rows of the t-step operator started at one grid point.
    Evolve,
    /// Dictionary lower bound on the operator loss of sample fits.
    Loss,
}

#[derive(Debug, Args, Serialize)]
pub struct OracleArgs {
    #[arg(value_enum)]
    pub mode: OracleMode,
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub density: DensityArgs,
    /// Operator bandwidth (eigen, evolve) or reference bandwidth (loss).
    #[arg(long, short)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 4)]
    pub q: usize,
    /// Evolve: start coordinate, mapped to the nearest grid point.
    #[arg(long, default_value_t = 0.0)]
    pub x0: f64,
    /// Evolve: diffusion times.
    #[arg(long, value_delimiter = ',', default_value = "0.1,1,10,1000")]
    pub times: Vec<f64>,
    /// Loss: sample CSV (one-dimensional).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Loss: bandwidths of the sample fits.
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<Grid>,
    /// Loss: diffusion time.
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct ConvergenceArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub density: DensityArgs,
    #[arg(long, short, default_value_t = 1000)]
    pub n: usize,
    /// Bandwidth grid.
    #[arg(long, value_parser = parse_grid)]
    pub grid: Grid,
    /// Number of seeds `seed, seed + 1, ...`.
    #[arg(long, default_value_t = 50)]
    pub seeds: usize,
    #[arg(long, default_value_t = 1)]
    pub ell: usize,
    /// Bandwidth of the oracle.
    #[arg(long, default_value_t = sca::oracle::REFERENCE_EPSILON)]
    pub reference_epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid(pub Vec<f64>);

pub fn parse_grid(raw: &str) -> Result<Grid, String> {
    if let Some(rest) = raw.strip_prefix("geom:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err("expected geom:lo:hi:count".into());
        }
        let lo: f64 = parts[0].parse().map_err(|e| format!("{e}"))?;
        let hi: f64 = parts[1].parse().map_err(|e| format!("{e}"))?;
        let count: usize = parts[2].parse().map_err(|e| format!("{e}"))?;
        if !(lo > 0.0 && hi > lo) || count < 2 {
            return Err("need 0 < lo < hi and count >= 2".into());
        }
        let ratio = (hi / lo).ln() / (count - 1) as f64;
        return Ok(Grid((0..count).map(|i| lo * (ratio * i as f64).exp()).collect()));
    }
    raw.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| format!("{s:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()
        .map(Grid)
}
