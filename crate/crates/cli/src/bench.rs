use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use pipehess::blockmat::{dense_solve, norm2};
use pipehess::counters::{self, loglog_slope};
use pipehess::hessian::{dense_hessian, HessianOperator};
use pipehess::pipeline::{gradient, random_spec, RandomPipelineConfig};
use pipehess::solver::{cg_solve, damped_residual, hivp_solve_operator, SolveOptions};
use serde::{Deserialize, Serialize};

use crate::config::{check_eps, BenchArgs, BenchMethod, Format, Sweep, SweepKey};
use crate::io::{emit, to_csv};
use crate::CliError;

pub const BENCH_VERSION: u32 = 1;

/// Depth used when no `L` sweep is given.
const DEFAULT_LAYERS: usize = 8;

/// One (configuration, method) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub layers: usize,
    pub width: usize,
    pub params: usize,
    /// Total parameter count, the side of `H`.
    pub dim: usize,
    pub method: BenchMethod,
    /// `ok`, or why the cell produced no solution.
    pub status: String,
    pub wall_time_secs: f64,
    /// Flops of the solve itself.
    pub flops: u64,
    /// Flops spent before the solve: derivative assembly, plus forming the
    /// dense Hessian for the dense method.
    pub setup_flops: u64,
    pub peak_bytes: u64,
    /// `‖(H + εI) x - b‖` via the matrix-free product.
    pub residual: Option<f64>,
    /// Relative distance to the direct solution, when both exist.
    pub agreement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub method: BenchMethod,
    pub width: usize,
    pub params: usize,
    pub points: usize,
    pub flops_slope: f64,
    pub peak_slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub version: u32,
    pub eps: f64,
    pub seed: u64,
    pub records: Vec<BenchRecord>,
    pub slopes: Vec<SlopeFit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub layers: usize,
    pub width: usize,
    pub params: usize,
}

pub fn cells(args: &BenchArgs) -> Result<Vec<Cell>, CliError> {
    let mut layers = vec![DEFAULT_LAYERS];
    let mut widths = vec![args.width];
    let mut params = vec![args.params];
    for s in &args.sweeps {
        let sweep: Sweep = s.parse()?;
        match sweep.key {
            SweepKey::Layers => layers = sweep.values,
            SweepKey::Width => widths = sweep.values,
            SweepKey::Params => params = sweep.values,
        }
    }
    if args.width == 0 || args.params == 0 {
        return Err(CliError::Usage(
            "--width and --params must be at least 1".into(),
        ));
    }
    let mut out = Vec::new();
    for &width in &widths {
        for &params in &params {
            for &layers in &layers {
                out.push(Cell {
                    layers,
                    width,
                    params,
                });
            }
        }
    }
    Ok(out)
}

fn relative_distance(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm2(&d) / norm2(b).max(1e-300)
}

fn record(cell: Cell, dim: usize, method: BenchMethod) -> BenchRecord {
    BenchRecord {
        layers: cell.layers,
        width: cell.width,
        params: cell.params,
        dim,
        method,
        status: "ok".into(),
        wall_time_secs: 0.0,
        flops: 0,
        setup_flops: 0,
        peak_bytes: 0,
        residual: None,
        agreement: None,
    }
}

/// Runs every requested method on one cell. Failures are recorded, not raised.
pub fn run_cell(cell: Cell, args: &BenchArgs) -> Result<Vec<BenchRecord>, CliError> {
    let cfg = RandomPipelineConfig::projected(cell.layers, cell.width, cell.params);
    let inst = random_spec(&cfg, args.seed).build()?;
    let pt = inst.evaluate()?;
    let b = gradient(&inst.pipeline, &pt)?;
    let dim = b.len();
    let eps = args.eps;
    let mut direct: Option<Vec<f64>> = None;
    let mut out = Vec::new();

    for &method in &args.methods {
        let mut rec = record(cell, dim, method);
        let start = Instant::now();
        let (result, usage) = counters::measure(
            || -> Result<(HessianOperator, Vec<f64>, u64, u64), pipehess::Error> {
                let (op, setup) =
                    counters::measure(|| HessianOperator::assemble(&inst.pipeline, &pt));
                let op = op?;
                let mut setup_flops = setup.flops;
                let before = counters::flops();
                let x = match method {
                    BenchMethod::Hivp => {
                        hivp_solve_operator(&op, &b, eps, &SolveOptions::default())?.solution
                    }
                    BenchMethod::Cg => cg_solve(&op, &b, eps, args.tol, 20 * dim.max(1))?.solution,
                    BenchMethod::Dense => {
                        let formed = counters::flops();
                        let mut h = dense_hessian(&op)?;
                        h.shift_diagonal(eps);
                        setup_flops += counters::flops() - formed;
                        let solve_start = counters::flops();
                        let x = dense_solve(&h, &b)?;
                        return Ok((op, x, setup_flops, counters::flops() - solve_start));
                    }
                };
                Ok((op, x, setup_flops, counters::flops() - before))
            },
        );
        rec.wall_time_secs = start.elapsed().as_secs_f64();
        rec.peak_bytes = usage.peak_bytes;
        match result {
            Ok((op, x, setup_flops, flops)) => {
                rec.setup_flops = setup_flops;
                rec.flops = flops;
                rec.residual = Some(damped_residual(&op, &x, &b, eps)?);
                match method {
                    BenchMethod::Hivp => direct = Some(x),
                    _ => rec.agreement = direct.as_ref().map(|d| relative_distance(&x, d)),
                }
            }
            Err(pipehess::Error::SizeGuard { size, limit }) => {
                rec.status = format!("skipped: dimension {size} exceeds guard {limit}");
            }
            Err(e) => rec.status = format!("failed: {e}"),
        }
        out.push(rec);
    }
    Ok(out)
}

/// Log-log slopes of flops and peak storage against depth, per method and
/// (width, params) group with at least two depths.
pub fn fit_slopes(records: &[BenchRecord]) -> Vec<SlopeFit> {
    let mut groups: Vec<(BenchMethod, usize, usize)> = Vec::new();
    for r in records.iter().filter(|r| r.status == "ok") {
        if !groups.contains(&(r.method, r.width, r.params)) {
            groups.push((r.method, r.width, r.params));
        }
    }
    groups
        .into_iter()
        .filter_map(|(method, width, params)| {
            let cells: Vec<&BenchRecord> = records
                .iter()
                .filter(|r| {
                    r.status == "ok" && r.method == method && r.width == width && r.params == params
                })
                .collect();
            let flops: Vec<(f64, f64)> = cells
                .iter()
                .map(|r| (r.layers as f64, r.flops as f64))
                .collect();
            let peak: Vec<(f64, f64)> = cells
                .iter()
                .map(|r| (r.layers as f64, r.peak_bytes as f64))
                .collect();
            Some(SlopeFit {
                method,
                width,
                params,
                points: cells.len(),
                flops_slope: loglog_slope(&flops)?,
                peak_slope: loglog_slope(&peak).unwrap_or(f64::NAN),
            })
        })
        .collect()
}

pub fn run_bench(args: &BenchArgs) -> Result<BenchReport, CliError> {
    check_eps(args.eps)?;
    if args.methods.is_empty() {
        return Err(CliError::Usage(
            "--methods must name at least one method".into(),
        ));
    }
    let cells = cells(args)?;
    let results: Mutex<Vec<Option<Result<Vec<BenchRecord>, CliError>>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..args.jobs.clamp(1, cells.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let r = run_cell(cells[i], args);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    let mut records = Vec::new();
    for r in results.into_inner().unwrap() {
        records.extend(r.expect("every cell ran")?);
    }
    let slopes = fit_slopes(&records);
    Ok(BenchReport {
        version: BENCH_VERSION,
        eps: args.eps,
        seed: args.seed,
        records,
        slopes,
    })
}

pub fn cmd_bench(args: &BenchArgs) -> Result<BenchReport, CliError> {
    let report = run_bench(args)?;
    for r in report.records.iter().filter(|r| r.status != "ok") {
        eprintln!(
            "L={} a={} p={} {:?}: {}",
            r.layers, r.width, r.params, r.method, r.status
        );
    }
    for f in &report.slopes {
        eprintln!(
            "slope {:?} (a={}, p={}, {} depths): flops {:.3}, peak bytes {:.3}",
            f.method, f.width, f.params, f.points, f.flops_slope, f.peak_slope
        );
    }
    let text = match args.format {
        Format::Json => serde_json::to_string_pretty(&report).expect("report serializes"),
        Format::Csv => to_csv(&report.records)?,
    };
    emit(args.out.as_ref(), &text)?;
    Ok(report)
}
