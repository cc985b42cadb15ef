use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use strucmp_core::mixture_model::{Init, MixtureOptions};
use strucmp_core::Method;

/// Environment variable that, when set, replaces `--seed`.
pub const SEED_ENV: &str = "CLARITY_SEED";

#[derive(Debug, Parser)]
#[command(name = "strucmp", version, about = "Structural comparison of dissimilarity matrices")]
pub struct Cli {
    /// Worker threads for replicate farms and per-k predictions (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Predict a target from the structure of a reference and report residuals.
    Compare(CompareArgs),
    /// Resampling p-values for persistence cells and the complexity curve p(k).
    Significance(SignificanceArgs),
    /// Generate reference, same-structure and different-structure tables.
    Simulate(SimulateArgs),
    /// Check the structure perturbation bounds on random or given matrices.
    VerifyBounds(BoundsArgs),
    /// Draw a persistence chart as SVG.
    Chart(ChartArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FeatureArgs {
    /// Drop features with a larger fraction of missing values.
    #[arg(long, default_value_t = 0.40)]
    pub max_missing: f64,
    /// Clip standardised values to +-cap.
    #[arg(long, default_value_t = 10.0)]
    pub cap: f64,
    /// Skip per-feature standardisation.
    #[arg(long)]
    pub no_standardize: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MixtureArgs {
    /// Maximum mixture iterations.
    #[arg(long, default_value_t = 2000)]
    pub t_max: usize,
    /// Mixture convergence threshold on the change in A.
    #[arg(long, default_value_t = 1e-6)]
    pub delta: f64,
    /// Mixture start: svd_seeded or random_dirichlet.
    #[arg(long, default_value = "svd_seeded")]
    pub init: Init,
}

impl MixtureArgs {
    pub fn options(&self, seed: u64) -> MixtureOptions {
        MixtureOptions { t_max: self.t_max, delta: self.delta, init: self.init, seed }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CompareArgs {
    /// Reference dissimilarity matrix (CSV).
    #[arg(long)]
    pub y1: Option<PathBuf>,
    /// Target dissimilarity matrix (CSV).
    #[arg(long)]
    pub y2: Option<PathBuf>,
    /// Reference feature table (CSV), used instead of --y1.
    #[arg(long)]
    pub d1: Option<PathBuf>,
    /// Target feature table (CSV), used instead of --y2.
    #[arg(long)]
    pub d2: Option<PathBuf>,
    #[command(flatten)]
    pub features: FeatureArgs,
    /// Largest complexity scanned (default: min(d, 30)).
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Structure model: svd or mixture.
    #[arg(long, default_value = "svd")]
    pub method: Method,
    #[command(flatten)]
    pub mixture: MixtureArgs,
    /// Random seed; the CLARITY_SEED environment variable overrides it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Complexities whose residual matrices are written (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub residual_k: Vec<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SignificanceArgs {
    /// Reference feature table (CSV).
    #[arg(long)]
    pub d1: Option<PathBuf>,
    /// Target feature table (CSV).
    #[arg(long)]
    pub d2: Option<PathBuf>,
    /// Directory of precomputed replicate matrices with manifest.csv.
    #[arg(long)]
    pub bootstrap_dir: Option<PathBuf>,
    #[command(flatten)]
    pub features: FeatureArgs,
    /// Largest complexity scanned (default: min(d, 30)).
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Structure model: svd or mixture.
    #[arg(long, default_value = "svd")]
    pub method: Method,
    #[command(flatten)]
    pub mixture: MixtureArgs,
    /// Number of resamples.
    #[arg(long, default_value_t = 100)]
    pub nbs: usize,
    /// Random seed; the CLARITY_SEED environment variable overrides it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Level used to mark cells as significant.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Complexities at which squared-residual p-values are written.
    #[arg(long, value_delimiter = ',')]
    pub residual_k: Vec<usize>,
    /// Also write the internally resampled matrices in bootstrap-directory layout.
    #[arg(long)]
    pub export_bootstrap: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    /// Subjects.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Features.
    #[arg(long, default_value_t = 2000)]
    pub l: usize,
    /// Clusters (tree tips).
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Subject noise standard deviation.
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f64,
    /// Mixture weight of the donor.
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    /// Fraction of the recipient cluster that is mixed.
    #[arg(long, default_value_t = 0.5)]
    pub r: f64,
    /// Brownian rate.
    #[arg(long, default_value_t = 1.0)]
    pub rate: f64,
    /// Random seed; the CLARITY_SEED environment variable overrides it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BoundsArgs {
    /// Reference matrix; without it, random well-gapped pairs are drawn.
    #[arg(long)]
    pub y1: Option<PathBuf>,
    /// Target matrix, required with --y1.
    #[arg(long)]
    pub y2: Option<PathBuf>,
    /// Dimension of random pairs.
    #[arg(long, default_value_t = 12)]
    pub d: usize,
    /// Complexity at which the bounds are checked.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Frobenius norm of the perturbations.
    #[arg(long, default_value_t = 0.01)]
    pub eps: f64,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    /// Random seed; the CLARITY_SEED environment variable overrides it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ChartArgs {
    /// persistence.csv written by `compare`.
    #[arg(long)]
    pub persistence: PathBuf,
    /// pvalues.csv written by `significance`.
    #[arg(long)]
    pub pvalues: Option<PathBuf>,
    /// p_of_k.csv written by `significance`.
    #[arg(long)]
    pub p_of_k: Option<PathBuf>,
    /// Cells failing significance at this level are drawn smaller.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// structure.csv written by `compare`; rows are ordered by average linkage on it.
    #[arg(long)]
    pub structure: Option<PathBuf>,
    /// Two-column CSV (subject,cluster); rows are summed per cluster.
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}
