use std::sync::Arc;

use pipehess::blockmat::{
    norm2, pivot_to_tridiagonal, BlockSparse, CommutationPermutation, DenseBlock, LuFactor,
};
use pipehess::hessian::{dense_hessian, finite_diff_hessian, hvp_pearlmutter, HessianOperator};
use pipehess::pipeline::{
    finite_diff_gradient, gradient, random_spec, EvaluationPoint, Layer, LayerDerivatives, Pipeline,
};
use pipehess::solver::{hivp_solve, lift, GROUP_PARAMS};
use serde::{Deserialize, Serialize};

use crate::config::{check_eps, Format, VerifyArgs};
use crate::io::{emit, to_csv};
use crate::CliError;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    /// Worst measured error over all cases.
    pub error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub version: u32,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

/// Adds a fixed offset to every analytic Jacobian entry of the wrapped layer.
#[derive(Debug)]
struct Corrupted(Arc<dyn Layer>);

impl Layer for Corrupted {
    fn input_dim(&self) -> usize {
        self.0.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.0.output_dim()
    }
    fn param_dim(&self) -> usize {
        self.0.param_dim()
    }
    fn eval(&self, z: &[f64], x: &[f64]) -> Vec<f64> {
        self.0.eval(z, x)
    }
    fn derivatives(&self, z: &[f64], x: &[f64]) -> LayerDerivatives {
        let mut d = self.0.derivatives(z, x);
        d.jac_x.as_mut_slice().iter_mut().for_each(|v| *v += 1e-3);
        d
    }
    fn kind(&self) -> &'static str {
        self.0.kind()
    }
}

fn probe(n: usize, salt: u64) -> Vec<f64> {
    (0..n)
        .map(|i| ((i as f64 + 1.0) * 0.618 + salt as f64 * 1.37).sin())
        .collect()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm2(&d) / norm2(b).max(1e-12)
}

fn max_abs_diff(a: &DenseBlock, b: &DenseBlock) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

struct Case {
    pipeline: Pipeline,
    pt: EvaluationPoint,
    op: HessianOperator,
    hessian: DenseBlock,
}

fn build_case(args: &VerifyArgs, seed: u64) -> Result<Case, CliError> {
    let inst = random_spec(&args.shape.random_config(), seed).build()?;
    let pipeline = if args.corrupt_derivatives {
        let layers = inst
            .pipeline
            .layers()
            .iter()
            .map(|l| Arc::new(Corrupted(l.clone())) as Arc<dyn Layer>)
            .collect();
        Pipeline::new(layers)?
    } else {
        inst.pipeline
    };
    let pt = pipeline.forward(&inst.z0, &inst.params)?;
    let op = HessianOperator::assemble(&pipeline, &pt)?;
    let hessian = dense_hessian(&op)?;
    Ok(Case {
        pipeline,
        pt,
        op,
        hessian,
    })
}

fn gradient_error(c: &Case) -> Result<f64, CliError> {
    let g = gradient(&c.pipeline, &c.pt)?;
    let fd = finite_diff_gradient(&c.pipeline, &c.pt.z0, &c.pt.flat_params(), 1e-6)?;
    Ok(rel(&g, &fd))
}

fn hessian_fd_error(c: &Case) -> Result<f64, CliError> {
    let fd = finite_diff_hessian(&c.pipeline, &c.pt, 1e-5)?;
    let n = c.op.dim();
    let floor = 1e-6 * fd.max_abs().max(1e-12);
    let mut worst: f64 = 0.0;
    for j in 0..n {
        let d: Vec<f64> = c
            .hessian
            .column(j)
            .iter()
            .zip(fd.column(j))
            .map(|(a, b)| a - b)
            .collect();
        worst = worst.max(norm2(&d) / norm2(fd.column(j)).max(floor));
    }
    Ok(worst)
}

fn pearlmutter_error(c: &Case, salt: u64) -> Result<f64, CliError> {
    let v = probe(c.op.dim(), salt);
    let a = c.op.apply(&v)?;
    let b = hvp_pearlmutter(&c.pipeline, &c.pt, &v)?;
    Ok(rel(&a, &b))
}

fn symmetry_error(c: &Case) -> f64 {
    max_abs_diff(&c.hessian, &c.hessian.transpose()) / c.hessian.max_abs().max(1e-300)
}

/// Eliminates everything but the parameter block from the dense lifted system.
fn schur_error(c: &Case, eps: f64) -> Result<f64, CliError> {
    let sys = lift(&c.op, eps, &vec![0.0; c.op.dim()])?;
    let k = sys.to_dense();
    let n = sys.group_dims()[GROUP_PARAMS];
    let m = sys.dim() - n;
    let krr = k.sub_block(n, n, m, m);
    let kr1 = k.sub_block(n, 0, m, n);
    let solved = LuFactor::factor(&krr, 0.0)
        .map_err(|f| pipehess::Error::SingularMatrix(f.column))?
        .solve_block(&kr1)?;
    let mut schur = k.sub_block(0, 0, n, n);
    schur.add_scaled(-1.0, &k.sub_block(0, n, n, m).matmul(&solved)?)?;
    let mut target = c.hessian.clone();
    target.shift_diagonal(eps);
    Ok(max_abs_diff(&schur, &target) / target.max_abs().max(1e-300))
}

/// Largest entry of `Π K Πᵀ` outside the block-tridiagonal envelope, plus
/// any disagreement with the structured gather.
fn bandwidth_error(c: &Case, eps: f64) -> Result<f64, CliError> {
    let sys = lift(&c.op, eps, &vec![0.0; c.op.dim()])?;
    let k = sys.to_dense();
    let pi = sys.permutation();
    let map = pi.index_map();
    let layer_of: Vec<usize> = pi
        .layer_dims()
        .iter()
        .enumerate()
        .flat_map(|(l, &d)| std::iter::repeat(l).take(d))
        .collect();
    let gathered = sys.pivot()?.to_dense();
    let mut worst: f64 = 0.0;
    for r in 0..sys.dim() {
        for col in 0..sys.dim() {
            let v = k[(map[r], map[col])];
            if layer_of[r].abs_diff(layer_of[col]) > 1 {
                worst = worst.max(v.abs());
            }
            worst = worst.max((v - gathered[(r, col)]).abs());
        }
    }
    Ok(worst)
}

/// `Π⁻¹ Π v = v` on heterogeneous dims and `Π Π v = v` on a square grouping.
fn involution_error(salt: u64) -> Result<f64, CliError> {
    let mut worst: f64 = 0.0;
    let general = CommutationPermutation::new(vec![vec![3, 1, 2], vec![2, 2, 1], vec![1, 4, 2]])?;
    let v = probe(general.len(), salt);
    let back = general.apply_inverse(&general.apply(&v)?)?;
    worst = worst.max(
        back.iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max),
    );
    let square = CommutationPermutation::new(vec![vec![2, 3, 1], vec![3, 1, 4], vec![1, 4, 2]])?;
    let v = probe(square.len(), salt + 1);
    let twice = square.apply(&square.apply(&v)?)?;
    worst = worst.max(
        twice
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max),
    );
    Ok(worst)
}

/// Two-group, two-layer scalar grids with and without upper entries.
fn golden_error() -> Result<f64, CliError> {
    let (a, b, c, d, e, f, g, h) = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0);
    let upper = [11.0, 12.0, 13.0, 14.0];
    let pi = CommutationPermutation::new(vec![vec![1, 1], vec![1, 1]])?;
    let mut worst: f64 = 0.0;
    for with_upper in [false, true] {
        let mut grid = vec![vec![BlockSparse::zeros(vec![1, 1], vec![1, 1]); 2]; 2];
        for (k, diag) in [[a, b], [c, d], [e, f], [g, h]].iter().enumerate() {
            let block = &mut grid[k / 2][k % 2];
            block.insert(0, 0, DenseBlock::diagonal(&[diag[0]]))?;
            block.insert(1, 1, DenseBlock::diagonal(&[diag[1]]))?;
            if with_upper {
                block.insert(0, 1, DenseBlock::diagonal(&[upper[k]]))?;
            }
        }
        let (al, be, de, ga) = if with_upper {
            (upper[0], upper[1], upper[2], upper[3])
        } else {
            (0.0, 0.0, 0.0, 0.0)
        };
        let expect = DenseBlock::from_rows(&[
            vec![a, c, al, be],
            vec![e, g, de, ga],
            vec![0.0, 0.0, b, d],
            vec![0.0, 0.0, f, h],
        ])?;
        let got = pivot_to_tridiagonal(&grid, &pi)?.to_dense();
        worst = worst.max(max_abs_diff(&got, &expect));
    }
    Ok(worst)
}

fn solve_error(c: &Case, eps: f64) -> f64 {
    let b = probe(c.op.dim(), 7);
    match hivp_solve(&c.pipeline, &c.pt, &b, eps) {
        Ok(r) => r.relative_residual,
        Err(_) => f64::INFINITY,
    }
}

pub fn run_checks(args: &VerifyArgs) -> Result<VerifyReport, CliError> {
    args.shape.validate()?;
    check_eps(args.eps)?;
    if args.cases == 0 {
        return Err(CliError::Usage("--cases must be at least 1".into()));
    }
    let mut worst = [0.0f64; 9];
    for k in 0..args.cases as u64 {
        let c = build_case(args, args.shape.seed + k)?;
        let errors = [
            gradient_error(&c)?,
            hessian_fd_error(&c)?,
            pearlmutter_error(&c, k)?,
            symmetry_error(&c),
            involution_error(k)?,
            schur_error(&c, args.eps)?,
            golden_error()?,
            bandwidth_error(&c, args.eps)?,
            solve_error(&c, args.eps),
        ];
        for (w, e) in worst.iter_mut().zip(errors) {
            // NaN must count as a failure.
            *w = if e.is_nan() { f64::INFINITY } else { w.max(e) };
        }
    }
    let names = [
        ("gradient_fd", 1e-5),
        ("hessian_fd", 1e-4),
        ("pearlmutter", 1e-10),
        ("symmetry", 1e-8),
        ("involution", 0.0),
        ("schur_complement", 1e-10),
        ("pivot_goldens", 0.0),
        ("bandwidth", 0.0),
        ("solve_residual", 1e-6),
    ];
    let checks: Vec<CheckResult> = names
        .iter()
        .zip(worst)
        .map(|(&(name, tol), error)| {
            let tolerance = args.tol.unwrap_or(tol);
            CheckResult {
                name: name.into(),
                error,
                tolerance,
                passed: error <= tolerance,
            }
        })
        .collect();
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport {
        version: REPORT_VERSION,
        checks,
        passed,
    })
}

/// Runs the checks, writes the report and prints one line per check to stderr.
pub fn cmd_verify(args: &VerifyArgs) -> Result<VerifyReport, CliError> {
    let report = run_checks(args)?;
    for c in &report.checks {
        eprintln!(
            "{} {:<18} error {:.3e}  tolerance {:.1e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.error,
            c.tolerance
        );
    }
    let text = match args.format {
        Format::Json => serde_json::to_string_pretty(&report).expect("report serializes"),
        Format::Csv => to_csv(&report.checks)?,
    };
    emit(args.out.as_ref(), &text)?;
    Ok(report)
}
