use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pipehess::pipeline::{LayerMix, RandomPipelineConfig};

use crate::CliError;

#[derive(Debug, Clone, Parser)]
#[command(
    name = "pipehess",
    version,
    about = "Hessian and Hessian-inverse products for layered pipelines"
)]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Run the derivative, structure and solver checks on random pipelines.
    Verify(VerifyArgs),
    /// Solve (H + eps I) x = b for a loaded or generated pipeline.
    Solve(SolveArgs),
    /// Sweep depth (and optionally width and parameter count) and record cost.
    Bench(BenchArgs),
    /// Write a random pipeline specification.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mix {
    Projected,
    Dense,
    Mixed,
}

impl From<Mix> for LayerMix {
    fn from(m: Mix) -> Self {
        match m {
            Mix::Projected => LayerMix::Projected,
            Mix::Dense => LayerMix::Dense,
            Mix::Mixed => LayerMix::Mixed,
        }
    }
}

/// Shape of a generated pipeline.
#[derive(Debug, Clone, Args)]
pub struct ShapeArgs {
    /// Number of layers, the final loss included.
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    /// Features per hidden layer.
    #[arg(long, default_value_t = 3)]
    pub width: usize,
    /// Parameters per hidden layer (projected layers).
    #[arg(long, default_value_t = 3)]
    pub params: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Mix::Projected)]
    pub mix: Mix,
}

impl ShapeArgs {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.layers == 0 || self.width == 0 || self.params == 0 {
            return Err(CliError::Usage(
                "--layers, --width and --params must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn random_config(&self) -> RandomPipelineConfig {
        RandomPipelineConfig {
            mix: self.mix.into(),
            ..RandomPipelineConfig::projected(self.layers, self.width, self.params)
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub shape: ShapeArgs,
    /// Random instances per check; seeds run from --seed upwards.
    #[arg(long, default_value_t = 3)]
    pub cases: usize,
    #[arg(long, default_value_t = 1e-3, allow_hyphen_values = true)]
    pub eps: f64,
    /// Override every check's tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Perturb every analytic Jacobian (negative control for the checks).
    #[arg(long, hide = true)]
    pub corrupt_derivatives: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolveMethodArg {
    Hivp,
    Cg,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub shape: ShapeArgs,
    /// Pipeline specification file; without it a random pipeline is generated.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Right-hand side vector file; defaults to the loss gradient.
    #[arg(long)]
    pub rhs: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-3, allow_hyphen_values = true)]
    pub eps: f64,
    #[arg(long, value_enum, default_value_t = SolveMethodArg::Hivp)]
    pub method: SolveMethodArg,
    /// CG stopping tolerance relative to the right-hand side norm.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
    /// One correction step through the existing factorization.
    #[arg(long)]
    pub refine: bool,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMethod {
    Hivp,
    Cg,
    Dense,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// `L=8..256x2` (geometric), `L=8..32+8` (arithmetic) or `L=8,16,32`;
    /// keys `L`, `a` (width) and `p` (params). Repeatable.
    #[arg(long = "sweep", default_value = "L=8..64x2")]
    pub sweeps: Vec<String>,
    #[arg(long, default_value_t = 4)]
    pub width: usize,
    #[arg(long, default_value_t = 4)]
    pub params: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3, allow_hyphen_values = true)]
    pub eps: f64,
    /// CG stopping tolerance.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "hivp,cg,dense"
    )]
    pub methods: Vec<BenchMethod>,
    /// Worker threads; cells are independent.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub shape: ShapeArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn check_eps(eps: f64) -> Result<(), CliError> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(CliError::Usage(format!(
            "--eps must be finite and non-negative, got {eps}"
        )));
    }
    Ok(())
}

/// One axis of a sweep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sweep {
    pub key: SweepKey,
    pub values: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKey {
    Layers,
    Width,
    Params,
}

impl std::str::FromStr for Sweep {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let bad = || CliError::Usage(format!("cannot parse sweep `{s}`"));
        let (key, range) = s.split_once('=').ok_or_else(bad)?;
        let key = match key.trim() {
            "L" | "layers" => SweepKey::Layers,
            "a" | "width" => SweepKey::Width,
            "p" | "params" => SweepKey::Params,
            _ => return Err(bad()),
        };
        let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
        let values = if let Some((lo, rest)) = range.split_once("..") {
            let lo = num(lo)?;
            let (hi, step, geometric) = if let Some((hi, f)) = rest.split_once('x') {
                (num(hi)?, num(f)?, true)
            } else if let Some((hi, d)) = rest.split_once('+') {
                (num(hi)?, num(d)?, false)
            } else {
                (num(rest)?, 1, false)
            };
            if lo == 0 || hi < lo || step == 0 || (geometric && step < 2) {
                return Err(bad());
            }
            let mut v = Vec::new();
            let mut cur = lo;
            while cur <= hi {
                v.push(cur);
                cur = if geometric { cur * step } else { cur + step };
            }
            v
        } else {
            range.split(',').map(num).collect::<Result<Vec<_>, _>>()?
        };
        if values.is_empty() || values.contains(&0) {
            return Err(bad());
        }
        Ok(Sweep { key, values })
    }
}
