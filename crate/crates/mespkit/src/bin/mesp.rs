//! Command-line driver: exact solves, relaxation bounds, variable
//! fixing, branch-and-bound, problem transformations, and instance
//! generation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use mespkit::bnb::{solve_bnb, BnbConfig, BoundChoice, NodeOrder, ScalingChoice};
use mespkit::bqp::{bqp_admm, BqpOptions};
use mespkit::exact::{brute_force, detect_tridiagonal_permutation, solve_tridiagonal};
use mespkit::fact::{ddfact_bound, dual_certificate, solve_fw, variable_fix, FactOptions};
use mespkit::io::{read_matrix, write_matrix, write_report, InstanceSidecar, MatrixFormat, Report};
use mespkit::linx::{linx_admm, linx_bound_direct, LinxOptions};
use mespkit::model::{factor_or_default, validate, BoundResult, Instance};
use mespkit::reduce::{dopt_to_mesp, mesp_to_ddf, mesp_to_dopt, to_complementary, DoptInstance};
use mespkit::scaling::{apply_mask, optimize_gamma, optimize_upsilon, BoundKind, ScalingOptions};
use mespkit::MespError;

#[derive(Parser)]
#[command(name = "mesp", about = "Subset selection by maximum log-determinant", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Linx,
    Ddfact,
    Bqp,
    BestOf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScalingArg {
    None,
    Gamma,
    Upsilon,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OrderArg {
    BestFirst,
    Dfs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FamilyArg {
    Randpd,
    Tridiag,
    Lowrank,
    Dopt,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DirectionArg {
    Complementary,
    DoptToMesp,
    MespToDopt,
    MespToDdf,
}

#[derive(Subcommand)]
enum Command {
    /// Exact solve: tridiagonal dynamic program when applicable,
    /// otherwise capped enumeration
    Exact {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Upper bound from a relaxation
    Bound {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_enum, default_value_t = KindArg::Linx)]
        kind: KindArg,
        #[arg(long, value_enum, default_value_t = ScalingArg::None)]
        scaling: ScalingArg,
        /// correlation-matrix mask applied to the covariance first
        #[arg(long)]
        mask: Option<PathBuf>,
        /// known feasible value for gap reporting
        #[arg(long)]
        incumbent: Option<f64>,
        /// use the two-block splitting method instead of projected gradient (linx)
        #[arg(long)]
        admm: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Variable fixing from the factorization dual certificate
    Fix {
        #[arg(long)]
        instance: PathBuf,
        /// feasible value to fix against; defaults to the greedy heuristic
        #[arg(long)]
        incumbent: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact solve by branch-and-bound
    Solve {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_enum, default_value_t = KindArg::Ddfact)]
        kind: KindArg,
        #[arg(long, value_enum, default_value_t = ScalingArg::None)]
        scaling: ScalingArg,
        #[arg(long)]
        fixing: bool,
        #[arg(long, value_enum, default_value_t = OrderArg::BestFirst)]
        node_order: OrderArg,
        #[arg(long)]
        max_nodes: Option<usize>,
        #[arg(long)]
        max_seconds: Option<f64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Problem transformations
    Reduce {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_enum)]
        direction: DirectionArg,
        /// output path prefix; writes <prefix>.mtx or .csv plus <prefix>.json
        #[arg(long)]
        out: PathBuf,
    },
    /// Seeded instance generation
    Gen {
        #[arg(long, value_enum)]
        family: FamilyArg,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        s: usize,
        /// rank for lowrank, column count for dopt
        #[arg(long)]
        r: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// output path prefix; writes <prefix>.mtx plus <prefix>.json
        #[arg(long)]
        out: PathBuf,
    },
}

fn log_enabled() -> bool {
    std::env::var("MESPKIT_LOG").map(|v| !v.is_empty()).unwrap_or(false)
}

fn logln(msg: &str) {
    if log_enabled() {
        eprintln!("[mesp] {msg}");
    }
}

fn sidecar_path(matrix: &Path) -> PathBuf {
    matrix.with_extension("json")
}

fn load_instance(path: &Path) -> Result<Instance, MespError> {
    let c = read_matrix(path, MatrixFormat::from_path(path))?;
    let sidecar_file = sidecar_path(path);
    let text = std::fs::read_to_string(&sidecar_file).map_err(|e| MespError::MalformedFile {
        path: sidecar_file.display().to_string(),
        reason: format!("missing sidecar: {e}"),
    })?;
    let sidecar: InstanceSidecar = serde_json::from_str(&text)?;
    let mut inst = Instance::new(c, sidecar.s).with_label(if sidecar.label.is_empty() {
        path.display().to_string()
    } else {
        sidecar.label
    });
    inst.offset = sidecar.offset;
    Ok(inst)
}

fn write_sidecar(prefix: &Path, s: usize, offset: f64, label: &str) -> Result<(), MespError> {
    let sidecar = InstanceSidecar {
        s,
        offset,
        label: label.to_string(),
    };
    let path = prefix.with_extension("json");
    std::fs::write(&path, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

fn write_rectangular_csv(m: &DMatrix<f64>, path: &Path) -> Result<(), MespError> {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.17e}", m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn read_rectangular_csv(path: &Path) -> Result<DMatrix<f64>, MespError> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| MespError::MalformedFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?);
    }
    if rows.is_empty() {
        return Err(MespError::MalformedFile {
            path: path.display().to_string(),
            reason: "empty matrix".into(),
        });
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(MespError::MalformedFile {
            path: path.display().to_string(),
            reason: "ragged rows".into(),
        });
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn validated(inst: &Instance) -> Result<(), MespError> {
    let report = validate(inst);
    for w in &report.warnings {
        logln(&format!("warning: {w}"));
    }
    if !report.is_ok() {
        return Err(MespError::InvalidInstance(report.violations.join("; ")));
    }
    Ok(())
}

fn emit(report: &Report, out: Option<&Path>) -> Result<(), MespError> {
    println!(
        "{}: {} value {:.9}{}{}",
        report.problem,
        report.bound,
        report.value,
        report
            .subset
            .as_ref()
            .map(|s| format!(" subset {s:?}"))
            .unwrap_or_default(),
        if report.flags.is_empty() {
            String::new()
        } else {
            format!(" flags {:?}", report.flags)
        }
    );
    match out {
        Some(path) => write_report(report, path)?,
        None => println!("{}", serde_json::to_string_pretty(report)?),
    }
    Ok(())
}

fn scaled_bound(
    inst: &Instance,
    kind: KindArg,
    scaling: ScalingArg,
    admm: bool,
) -> Result<BoundResult, MespError> {
    let run_one = |kind: KindArg| -> Result<BoundResult, MespError> {
        match (kind, scaling) {
            (KindArg::Linx, ScalingArg::None) => {
                if admm {
                    linx_admm(inst, 1.0, &LinxOptions::default())
                } else {
                    linx_bound_direct(inst, 1.0, &LinxOptions::default())
                }
            }
            (KindArg::Linx, ScalingArg::Gamma) => {
                let (gamma, _) = optimize_gamma(BoundKind::Linx, inst, &ScalingOptions::default())?;
                let mut r = if admm {
                    linx_admm(inst, gamma, &LinxOptions::default())?
                } else {
                    linx_bound_direct(inst, gamma, &LinxOptions::default())?
                };
                r.duals.insert("gamma".into(), vec![gamma]);
                Ok(r)
            }
            (KindArg::Linx, ScalingArg::Upsilon) => {
                let (scale, value) = optimize_upsilon(BoundKind::Linx, inst, &ScalingOptions::default())?;
                let mut r = BoundResult::new("linx-g", value, Vec::new());
                r.duals
                    .insert("upsilon".into(), scale.upsilon.iter().cloned().collect());
                Ok(r)
            }
            (KindArg::Ddfact, ScalingArg::None) => ddfact_bound(inst, &FactOptions::default()),
            (KindArg::Ddfact, ScalingArg::Gamma) => Err(MespError::InvalidInstance(
                "the factorization bound is scale invariant; use --scaling none or upsilon".into(),
            )),
            (KindArg::Ddfact, ScalingArg::Upsilon) => {
                let (scale, value) =
                    optimize_upsilon(BoundKind::DdFact, inst, &ScalingOptions::default())?;
                let mut r = BoundResult::new("ddfact-g", value, Vec::new());
                r.duals
                    .insert("upsilon".into(), scale.upsilon.iter().cloned().collect());
                Ok(r)
            }
            (KindArg::Bqp, ScalingArg::None) => bqp_admm(inst, 1.0, None, &BqpOptions::default()),
            (KindArg::Bqp, ScalingArg::Gamma) => {
                let (gamma, _) = optimize_gamma(BoundKind::Bqp, inst, &ScalingOptions::default())?;
                let mut r = bqp_admm(inst, gamma, None, &BqpOptions::default())?;
                r.duals.insert("gamma".into(), vec![gamma]);
                Ok(r)
            }
            (KindArg::Bqp, ScalingArg::Upsilon) => {
                let (scale, value) = optimize_upsilon(BoundKind::Bqp, inst, &ScalingOptions::default())?;
                let mut r = BoundResult::new("bqp-g", value, Vec::new());
                r.duals
                    .insert("upsilon".into(), scale.upsilon.iter().cloned().collect());
                Ok(r)
            }
            (KindArg::BestOf, _) => unreachable!(),
        }
    };
    if kind == KindArg::BestOf {
        let mut best: Option<BoundResult> = None;
        for k in [KindArg::Linx, KindArg::Ddfact, KindArg::Bqp] {
            match run_one(k) {
                Ok(r) => {
                    if best.as_ref().map(|b| r.value < b.value).unwrap_or(true) {
                        best = Some(r);
                    }
                }
                Err(e) => logln(&format!("bound candidate failed: {e}")),
            }
        }
        best.ok_or_else(|| MespError::Numerical("all bound candidates failed".into()))
    } else {
        run_one(kind)
    }
}

fn run(cli: Cli) -> Result<u8, MespError> {
    match cli.command {
        Command::Exact { instance, out } => {
            let inst = load_instance(&instance)?;
            validated(&inst)?;
            let started = Instant::now();
            let (value, subset, method) =
                if detect_tridiagonal_permutation(&inst.c).is_some() {
                    let (v, s) = solve_tridiagonal(&inst)?;
                    (v, s, "tridiagonal-dp")
                } else {
                    let (v, s) = brute_force(&inst)?;
                    (v, s, "enumeration")
                };
            let mut report = Report {
                problem: inst.label.clone(),
                bound: method.to_string(),
                value,
                x: Vec::new(),
                duals: Default::default(),
                iterations: 0,
                wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
                flags: Vec::new(),
                subset: Some(subset.one_based()),
            };
            report.x = Vec::new();
            emit(&report, out.as_deref())?;
            Ok(0)
        }
        Command::Bound {
            instance,
            kind,
            scaling,
            mask,
            incumbent,
            admm,
            out,
        } => {
            let mut inst = load_instance(&instance)?;
            validated(&inst)?;
            if let Some(mask_path) = mask {
                let m = read_matrix(&mask_path, MatrixFormat::from_path(&mask_path))?;
                inst = apply_mask(&inst, &m)?;
            }
            let started = Instant::now();
            let result = scaled_bound(&inst, kind, scaling, admm)?;
            let mut report = Report::from_bound(
                inst.label.clone(),
                &result,
                started.elapsed().as_secs_f64() * 1e3,
            );
            if let Some(lb) = incumbent {
                report
                    .duals
                    .insert("incumbentGap".into(), vec![result.value - lb]);
            }
            emit(&report, out.as_deref())?;
            Ok(0)
        }
        Command::Fix {
            instance,
            incumbent,
            out,
        } => {
            let inst = load_instance(&instance)?;
            validated(&inst)?;
            let started = Instant::now();
            let lb = match incumbent {
                Some(v) => v,
                None => mespkit::bnb::greedy_local_search(&inst)?.value,
            };
            let f = factor_or_default(&inst)?;
            let opts = FactOptions::default();
            let solve = solve_fw(&f, inst.s, 0.0, None, &opts)?;
            let cert = dual_certificate(&solve.x, &f, inst.s, &opts)?;
            let zeta = cert.objective + inst.offset;
            let fix = variable_fix(zeta, lb, &cert, opts.fix_safety)?;
            let mut result = BoundResult::new("ddfact-fix", zeta, solve.x.iter().cloned().collect());
            result.duals.insert(
                "fixZero".into(),
                fix.fix_zero.iter().map(|&i| (i + 1) as f64).collect(),
            );
            result.duals.insert(
                "fixOne".into(),
                fix.fix_one.iter().map(|&i| (i + 1) as f64).collect(),
            );
            result.duals.insert("incumbent".into(), vec![lb]);
            let report = Report::from_bound(
                inst.label.clone(),
                &result,
                started.elapsed().as_secs_f64() * 1e3,
            );
            emit(&report, out.as_deref())?;
            Ok(0)
        }
        Command::Solve {
            instance,
            kind,
            scaling,
            fixing,
            node_order,
            max_nodes,
            max_seconds,
            workers,
            out,
        } => {
            let inst = load_instance(&instance)?;
            validated(&inst)?;
            let config = BnbConfig {
                bound: match kind {
                    KindArg::Linx => BoundChoice::Linx,
                    KindArg::Ddfact => BoundChoice::DdFact,
                    KindArg::Bqp => BoundChoice::Bqp,
                    KindArg::BestOf => BoundChoice::BestOf,
                },
                scaling: match scaling {
                    ScalingArg::None => ScalingChoice::None,
                    ScalingArg::Gamma => ScalingChoice::Gamma,
                    ScalingArg::Upsilon => ScalingChoice::Upsilon,
                },
                fixing,
                node_order: match node_order {
                    OrderArg::BestFirst => NodeOrder::BestFirst,
                    OrderArg::Dfs => NodeOrder::Dfs,
                },
                max_nodes,
                max_seconds,
                workers,
            };
            let started = Instant::now();
            let outcome = solve_bnb(&inst, &config)?;
            let mut duals = std::collections::BTreeMap::new();
            duals.insert("nodes".to_string(), vec![outcome.stats.nodes as f64]);
            duals.insert("fixings".to_string(), vec![outcome.stats.fixings as f64]);
            duals.insert(
                "boundEvals".to_string(),
                vec![outcome.stats.bound_evals as f64],
            );
            let report = Report {
                problem: inst.label.clone(),
                bound: "branch-and-bound".into(),
                value: outcome.value,
                x: Vec::new(),
                duals,
                iterations: outcome.stats.nodes,
                wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
                flags: outcome.flags.clone(),
                subset: Some(outcome.subset.one_based()),
            };
            emit(&report, out.as_deref())?;
            if outcome.optimal {
                Ok(0)
            } else {
                Ok(3)
            }
        }
        Command::Reduce {
            instance,
            direction,
            out,
        } => {
            match direction {
                DirectionArg::Complementary => {
                    let inst = load_instance(&instance)?;
                    validated(&inst)?;
                    let comp = to_complementary(&inst)?;
                    let path = out.with_extension("mtx");
                    write_matrix(&comp.c, &path, MatrixFormat::MatrixMarket)?;
                    write_sidecar(&out, comp.s, comp.offset, &comp.label)?;
                    println!("complementary instance written to {}", path.display());
                }
                DirectionArg::DoptToMesp => {
                    let a = read_rectangular_csv(&instance)?;
                    let sidecar_file = sidecar_path(&instance);
                    let text = std::fs::read_to_string(&sidecar_file)?;
                    let sidecar: InstanceSidecar = serde_json::from_str(&text)?;
                    let d = DoptInstance {
                        a,
                        s: sidecar.s,
                        offset: sidecar.offset,
                    };
                    let inst = dopt_to_mesp(&d)?;
                    let path = out.with_extension("mtx");
                    write_matrix(&inst.c, &path, MatrixFormat::MatrixMarket)?;
                    write_sidecar(&out, inst.s, inst.offset, &inst.label)?;
                    println!("selection instance written to {}", path.display());
                }
                DirectionArg::MespToDopt => {
                    let inst = load_instance(&instance)?;
                    validated(&inst)?;
                    let d = mesp_to_dopt(&inst)?;
                    let path = out.with_extension("csv");
                    write_rectangular_csv(&d.a, &path)?;
                    write_sidecar(&out, d.s, d.offset, "design-from-selection")?;
                    println!("design instance written to {}", path.display());
                }
                DirectionArg::MespToDdf => {
                    let inst = load_instance(&instance)?;
                    validated(&inst)?;
                    let d = mesp_to_ddf(&inst)?;
                    let path = out.with_extension("csv");
                    write_rectangular_csv(&d.a, &path)?;
                    write_sidecar(&out, d.s, d.offset, "data-fusion-from-selection")?;
                    println!("data-fusion instance written to {}", path.display());
                }
            }
            Ok(0)
        }
        Command::Gen {
            family,
            n,
            s,
            r,
            seed,
            out,
        } => {
            let inst = match family {
                FamilyArg::Randpd => mespkit::gen::randpd_instance(n, s, seed),
                FamilyArg::Tridiag => mespkit::gen::tridiag_instance(n, s, seed),
                FamilyArg::Lowrank => {
                    let rank = r.ok_or_else(|| {
                        MespError::InvalidInstance("lowrank requires --r".into())
                    })?;
                    mespkit::gen::lowrank_instance(n, s, rank, seed)?
                }
                FamilyArg::Dopt => {
                    let m = r.ok_or_else(|| {
                        MespError::InvalidInstance("dopt requires --r (column count)".into())
                    })?;
                    let a = mespkit::gen::dopt_matrix(n, m, seed);
                    let d = DoptInstance { a: a.clone(), s, offset: 0.0 };
                    let mut design_path = out.as_os_str().to_owned();
                    design_path.push("-design");
                    let design_path = PathBuf::from(design_path).with_extension("csv");
                    write_rectangular_csv(&a, &design_path)?;
                    dopt_to_mesp(&d)?
                }
            };
            validated(&inst)?;
            let path = out.with_extension("mtx");
            write_matrix(&inst.c, &path, MatrixFormat::MatrixMarket)?;
            write_sidecar(&out, inst.s, inst.offset, &inst.label)?;
            println!("instance written to {}", path.display());
            Ok(0)
        }
    }
}

fn exit_code_for(err: &MespError) -> u8 {
    match err {
        MespError::InvalidInstance(_)
        | MespError::IndexOutOfRange { .. }
        | MespError::MalformedFile { .. }
        | MespError::NotTridiagonal
        | MespError::Json(_)
        | MespError::Io(_) => 2,
        MespError::CapExceeded { .. } => 3,
        MespError::Numerical(_) | MespError::Inconsistent(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
