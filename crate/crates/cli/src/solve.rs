use pipehess::hessian::HessianOperator;
use pipehess::pipeline::{random_spec, PipelineInstance};
use pipehess::solver::{cg_solve, hivp_solve_with, SolveOptions, SolveReport};

use crate::config::{check_eps, Format, SolveArgs, SolveMethodArg};
use crate::io::{emit, read_spec, read_vector, to_csv};
use crate::CliError;

pub fn load_instance(args: &SolveArgs) -> Result<PipelineInstance, CliError> {
    let spec = match &args.spec {
        Some(path) => read_spec(path)?,
        None => {
            args.shape.validate()?;
            random_spec(&args.shape.random_config(), args.shape.seed)
        }
    };
    Ok(spec.build()?)
}

/// Runs the solve without writing anything.
pub fn run_solve(args: &SolveArgs) -> Result<SolveReport, CliError> {
    check_eps(args.eps)?;
    let inst = load_instance(args)?;
    let pt = inst.evaluate()?;
    let b = match &args.rhs {
        Some(path) => {
            let b = read_vector(path)?;
            let n = inst.pipeline.total_params();
            if b.len() != n {
                return Err(CliError::Parse {
                    path: path.clone(),
                    message: format!(
                        "right-hand side has {} entries, the pipeline has {n} parameters",
                        b.len()
                    ),
                });
            }
            b
        }
        None => pipehess::pipeline::gradient(&inst.pipeline, &pt)?,
    };
    let report = match args.method {
        SolveMethodArg::Hivp => {
            let opts = SolveOptions {
                refine: args.refine,
                ..SolveOptions::default()
            };
            hivp_solve_with(&inst.pipeline, &pt, &b, args.eps, &opts)?
        }
        SolveMethodArg::Cg => {
            let op = HessianOperator::assemble(&inst.pipeline, &pt)?;
            cg_solve(&op, &b, args.eps, args.tol, args.max_iter)?
        }
    };
    Ok(report)
}

#[derive(serde::Serialize)]
struct Field {
    field: String,
    value: f64,
}

/// `field,value` rows: the scalar diagnostics followed by `x[i]`.
fn report_csv(r: &SolveReport) -> Result<String, CliError> {
    let mut rows = vec![
        ("residual", r.residual),
        ("relative_residual", r.relative_residual),
        ("eps", r.eps),
        ("iterations", r.iterations as f64),
        ("flops", r.flops as f64),
        ("peak_bytes", r.peak_bytes as f64),
        ("wall_time_secs", r.wall_time_secs),
    ]
    .into_iter()
    .map(|(f, v)| Field {
        field: f.into(),
        value: v,
    })
    .collect::<Vec<_>>();
    rows.extend(r.solution.iter().enumerate().map(|(i, &v)| Field {
        field: format!("x[{i}]"),
        value: v,
    }));
    to_csv(&rows)
}

pub fn cmd_solve(args: &SolveArgs) -> Result<SolveReport, CliError> {
    let report = run_solve(args)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!(
        "solved {} unknowns: residual {:.3e} (relative {:.3e}), {} flops",
        report.solution.len(),
        report.residual,
        report.relative_residual,
        report.flops
    );
    let text = match args.format {
        Format::Json => report.to_json(),
        Format::Csv => report_csv(&report)?,
    };
    emit(args.out.as_ref(), &text)?;
    Ok(report)
}
