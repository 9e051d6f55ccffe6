use std::fs;
use std::path::{Path, PathBuf};

use pipehess::solver::SolveReport;
use pipehess_cli::bench::{run_bench, BenchRecord, BenchReport};
use pipehess_cli::config::{BenchArgs, BenchMethod, Command, RunConfig};
use pipehess_cli::io::to_csv;
use pipehess_cli::main_with_args;
use pipehess_cli::verify::VerifyReport;

use clap::Parser;

fn specs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("specs")
}

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("pipehess").chain(args.iter().copied()))
}

fn read_report(path: &Path) -> SolveReport {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn bench_args(args: &[&str]) -> BenchArgs {
    let cfg = RunConfig::try_parse_from(
        std::iter::once("pipehess")
            .chain(std::iter::once("bench"))
            .chain(args.iter().copied()),
    )
    .unwrap();
    match cfg.command {
        Command::Bench(b) => b,
        _ => unreachable!(),
    }
}

#[test]
fn verify_default_config_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("verify.json");
    assert_eq!(run(&["verify", "--out", out.to_str().unwrap()]), 0);
    let report: VerifyReport = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(report.passed);
    assert_eq!(report.checks.len(), 9);
}

#[test]
fn verify_single_layer_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("verify.csv");
    assert_eq!(
        run(&[
            "verify",
            "--layers",
            "1",
            "--format",
            "csv",
            "--out",
            out.to_str().unwrap()
        ]),
        0
    );
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("name,error,tolerance,passed"));
    assert!(text.lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn corrupted_derivatives_fail_the_finite_difference_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("verify.json");
    assert_eq!(
        run(&[
            "verify",
            "--corrupt-derivatives",
            "--out",
            out.to_str().unwrap()
        ]),
        1
    );
    let report: VerifyReport = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(!report.passed);
    let failed: Vec<&str> = report
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    assert!(failed.contains(&"gradient_fd"), "{failed:?}");
}

#[test]
fn zero_rhs_gives_zero_solution() {
    let dir = tempfile::tempdir().unwrap();
    let rhs = dir.path().join("zero.json");
    // Default random pipeline: 4 layers, width 3, 3 parameters, one label.
    let n = {
        let spec = dir.path().join("spec.json");
        assert_eq!(run(&["generate", "--out", spec.to_str().unwrap()]), 0);
        let inst = pipehess::pipeline::PipelineSpec::from_json(&fs::read_to_string(&spec).unwrap())
            .unwrap()
            .build()
            .unwrap();
        inst.pipeline.total_params()
    };
    fs::write(
        &rhs,
        serde_json::json!({"version": 1, "values": vec![0.0; n]}).to_string(),
    )
    .unwrap();
    let out = dir.path().join("x.json");
    assert_eq!(
        run(&[
            "solve",
            "--rhs",
            rhs.to_str().unwrap(),
            "--out",
            out.to_str().unwrap()
        ]),
        0
    );
    let report = read_report(&out);
    assert_eq!(report.solution, vec![0.0; n]);
    assert_eq!(report.residual, 0.0);
}

#[test]
fn shipped_quadratic_spec_solves_analytically() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.json");
    let code = run(&[
        "solve",
        "--spec",
        specs().join("quadratic.json").to_str().unwrap(),
        "--rhs",
        specs().join("quadratic_rhs.json").to_str().unwrap(),
        "--eps",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    // Symmetric part [[4,1,0],[1,3,0.5],[0,0.5,2]] applied to x gives (1, -2, 0.5).
    let expect = [10.0 / 21.0, -19.0 / 21.0, 10.0 / 21.0];
    let report = read_report(&out);
    for (x, e) in report.solution.iter().zip(expect) {
        assert!((x - e).abs() < 1e-8);
    }
}

#[test]
fn seeded_solves_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for name in ["a.json", "b.json"] {
        let out = dir.path().join(name);
        let args = [
            "solve",
            "--seed",
            "7",
            "--layers",
            "5",
            "--mix",
            "mixed",
            "--out",
            out.to_str().unwrap(),
        ];
        assert_eq!(run(&args), 0);
        let mut r = read_report(&out);
        r.wall_time_secs = 0.0;
        reports.push(r);
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn generated_spec_round_trips_through_solve() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    assert_eq!(
        run(&["generate", "--seed", "3", "--out", spec.to_str().unwrap()]),
        0
    );
    let from_file = dir.path().join("file.json");
    let from_seed = dir.path().join("seed.json");
    assert_eq!(
        run(&[
            "solve",
            "--spec",
            spec.to_str().unwrap(),
            "--out",
            from_file.to_str().unwrap()
        ]),
        0
    );
    assert_eq!(
        run(&["solve", "--seed", "3", "--out", from_seed.to_str().unwrap()]),
        0
    );
    assert_eq!(
        read_report(&from_file).solution,
        read_report(&from_seed).solution
    );
}

#[test]
fn cg_method_matches_direct_solve() {
    let dir = tempfile::tempdir().unwrap();
    let direct = dir.path().join("d.json");
    let cg = dir.path().join("c.json");
    let common = ["--seed", "2", "--eps", "1"];
    let mut a = vec!["solve", "--out", direct.to_str().unwrap()];
    a.extend(common);
    let mut b = vec![
        "solve",
        "--method",
        "cg",
        "--tol",
        "1e-12",
        "--out",
        cg.to_str().unwrap(),
    ];
    b.extend(common);
    assert_eq!(run(&a), 0);
    assert_eq!(run(&b), 0);
    let (x, y) = (read_report(&direct).solution, read_report(&cg).solution);
    let diff: f64 = x
        .iter()
        .zip(&y)
        .map(|(p, q)| (p - q).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = x.iter().map(|p| p * p).sum::<f64>().sqrt();
    assert!(diff <= 1e-5 * norm);
}

#[test]
fn singular_system_exits_with_failure() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("singular.json");
    fs::write(
        &spec,
        r#"{"version":1,"input":[0.0],"layers":[{"kind":"quadratic","input_dim":1,
            "hessian":[[1.0,0.0],[0.0,0.0]],"center":[0.0,0.0],"params":[1.0,1.0]}]}"#,
    )
    .unwrap();
    assert_eq!(
        run(&["solve", "--spec", spec.to_str().unwrap(), "--eps", "0"]),
        1
    );
}

#[test]
fn input_problems_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(run(&["solve", "--spec", missing.to_str().unwrap()]), 2);
    let short = dir.path().join("short.json");
    fs::write(&short, r#"{"version":1,"values":[1.0]}"#).unwrap();
    assert_eq!(run(&["solve", "--rhs", short.to_str().unwrap()]), 2);
    let garbage = dir.path().join("garbage.json");
    fs::write(&garbage, "not json").unwrap();
    assert_eq!(run(&["solve", "--spec", garbage.to_str().unwrap()]), 2);
    assert_eq!(run(&["bench", "--sweep", "L=8..4"]), 2);
    assert_eq!(run(&["solve", "--eps", "-1"]), 2);
    assert_eq!(run(&["solve", "--layers", "0"]), 2);
    assert_eq!(run(&["frobnicate"]), 2);
}

#[test]
fn bench_slopes_follow_depth_scaling() {
    let report = run_bench(&bench_args(&[
        "--sweep",
        "L=8..32x2",
        "--methods",
        "hivp,dense",
    ]))
    .unwrap();
    assert_eq!(report.records.len(), 6);
    let slope = |m: BenchMethod| {
        report
            .slopes
            .iter()
            .find(|s| s.method == m)
            .unwrap()
            .flops_slope
    };
    assert!(
        (0.85..=1.15).contains(&slope(BenchMethod::Hivp)),
        "{}",
        slope(BenchMethod::Hivp)
    );
    assert!(
        (2.5..=3.5).contains(&slope(BenchMethod::Dense)),
        "{}",
        slope(BenchMethod::Dense)
    );
}

#[test]
fn single_cell_sweep_gives_one_record_per_method() {
    let report = run_bench(&bench_args(&["--sweep", "L=4", "--methods", "hivp"])).unwrap();
    assert_eq!(report.records.len(), 1);
    assert!(report.slopes.is_empty());
}

#[test]
fn cg_cell_records_residual_and_agreement() {
    let args = bench_args(&[
        "--sweep",
        "L=6",
        "--eps",
        "1",
        "--tol",
        "1e-10",
        "--methods",
        "hivp,cg",
    ]);
    let report = run_bench(&args).unwrap();
    let cg = report
        .records
        .iter()
        .find(|r| r.method == BenchMethod::Cg)
        .unwrap();
    assert_eq!(cg.status, "ok");
    let b_norm = {
        let inst = pipehess::pipeline::random_spec(
            &pipehess::pipeline::RandomPipelineConfig::projected(6, 4, 4),
            0,
        )
        .build()
        .unwrap();
        let pt = inst.evaluate().unwrap();
        pipehess::blockmat::norm2(&pipehess::pipeline::gradient(&inst.pipeline, &pt).unwrap())
    };
    assert!(cg.residual.unwrap() <= 1e-10 * b_norm * 10.0);
    assert!(cg.agreement.unwrap() < 1e-6);
}

#[test]
fn dense_cells_above_the_guard_are_skipped() {
    let report = run_bench(&bench_args(&[
        "--sweep",
        "L=2",
        "--params",
        "2100",
        "--methods",
        "hivp,dense",
    ]))
    .unwrap();
    let dense = report
        .records
        .iter()
        .find(|r| r.method == BenchMethod::Dense)
        .unwrap();
    assert!(dense.status.starts_with("skipped"), "{}", dense.status);
    assert_eq!(report.records[0].status, "ok");
}

#[test]
fn csv_and_json_carry_identical_numbers() {
    let report = run_bench(&bench_args(&[
        "--sweep",
        "L=4,8",
        "--methods",
        "hivp,cg,dense",
    ]))
    .unwrap();
    let json: BenchReport = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    let csv_text = to_csv(&report.records).unwrap();
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    let from_csv: Vec<BenchRecord> = rdr.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(from_csv, json.records);
    assert_eq!(json.records, report.records);
}

#[test]
fn parallel_bench_matches_serial_counts() {
    let serial = run_bench(&bench_args(&["--sweep", "L=4..16x2", "--methods", "hivp"])).unwrap();
    let parallel = run_bench(&bench_args(&[
        "--sweep",
        "L=4..16x2",
        "--methods",
        "hivp",
        "--jobs",
        "3",
    ]))
    .unwrap();
    let key = |r: &BenchReport| {
        r.records
            .iter()
            .map(|x| (x.layers, x.flops, x.peak_bytes))
            .collect::<Vec<_>>()
    };
    assert_eq!(key(&serial), key(&parallel));
}
