//! End-to-end runs of the `mesp` binary against library oracles.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mespkit::exact::brute_force;
use mespkit::io::{read_matrix, InstanceSidecar, MatrixFormat, Report};
use mespkit::model::Instance;

fn mesp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mesp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn load(prefix: &Path) -> Instance {
    let c = read_matrix(&prefix.with_extension("mtx"), MatrixFormat::MatrixMarket).unwrap();
    let sidecar: InstanceSidecar =
        serde_json::from_str(&std::fs::read_to_string(prefix.with_extension("json")).unwrap())
            .unwrap();
    let mut inst = Instance::new(c, sidecar.s);
    inst.offset = sidecar.offset;
    inst
}

fn read_report(path: &Path) -> Report {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn gen_instance(dir: &Path, family: &str, n: usize, s: usize, seed: u64) -> PathBuf {
    let prefix = dir.join(format!("{family}-{seed}"));
    let out = mesp(&[
        "gen",
        "--family",
        family,
        "--n",
        &n.to_string(),
        "--s",
        &s.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        prefix.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "gen failed: {out:?}");
    prefix
}

#[test]
fn exact_matches_brute_force() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = gen_instance(dir.path(), "randpd", 8, 3, 4);
    let report_path = dir.path().join("exact.json");
    let out = mesp(&[
        "exact",
        "--instance",
        prefix.with_extension("mtx").to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "exact failed: {out:?}");

    let report = read_report(&report_path);
    let inst = load(&prefix);
    let (z, subset) = brute_force(&inst).unwrap();
    assert!((report.value - z).abs() < 1e-9);
    assert_eq!(report.subset.unwrap(), subset.one_based());
}

#[test]
fn exact_takes_tridiagonal_path() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = gen_instance(dir.path(), "tridiag", 20, 8, 5);
    let report_path = dir.path().join("exact.json");
    let out = mesp(&[
        "exact",
        "--instance",
        prefix.with_extension("mtx").to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let report = read_report(&report_path);
    assert_eq!(report.bound, "tridiagonal-dp");
}

#[test]
fn generation_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let sub_a = dir.path().join("a");
    let sub_b = dir.path().join("b");
    std::fs::create_dir_all(&sub_a).unwrap();
    std::fs::create_dir_all(&sub_b).unwrap();
    let a = gen_instance(&sub_a, "randpd", 9, 4, 17);
    let b = gen_instance(&sub_b, "randpd", 9, 4, 17);
    let bytes_a = std::fs::read(a.with_extension("mtx")).unwrap();
    let bytes_b = std::fs::read(b.with_extension("mtx")).unwrap();
    assert_eq!(bytes_a, bytes_b);
}

#[test]
fn bounds_dominate_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = gen_instance(dir.path(), "randpd", 8, 3, 11);
    let inst = load(&prefix);
    let (z, _) = brute_force(&inst).unwrap();
    for kind in ["linx", "ddfact", "bqp", "best-of"] {
        let report_path = dir.path().join(format!("bound-{kind}.json"));
        let out = mesp(&[
            "bound",
            "--instance",
            prefix.with_extension("mtx").to_str().unwrap(),
            "--kind",
            kind,
            "--out",
            report_path.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "bound {kind} failed: {out:?}");
        let report = read_report(&report_path);
        assert!(
            report.value >= z - 1e-7,
            "{kind} bound {} below optimum {z}",
            report.value
        );
    }

    // scaled variant stays valid and records the chosen factor
    let report_path = dir.path().join("bound-gamma.json");
    let out = mesp(&[
        "bound",
        "--instance",
        prefix.with_extension("mtx").to_str().unwrap(),
        "--kind",
        "linx",
        "--scaling",
        "gamma",
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let report = read_report(&report_path);
    assert!(report.value >= z - 1e-7);
    assert!(report.duals.contains_key("gamma"));
}

#[test]
fn scale_invariant_bound_rejects_gamma_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = gen_instance(dir.path(), "randpd", 7, 3, 2);
    let out = mesp(&[
        "bound",
        "--instance",
        prefix.with_extension("mtx").to_str().unwrap(),
        "--kind",
        "ddfact",
        "--scaling",
        "gamma",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fix_reports_one_based_indices() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = gen_instance(dir.path(), "randpd", 9, 3, 8);
    let report_path = dir.path().join("fix.json");
    let out = mesp(&[
        "fix",
        "--instance",
        prefix.with_extension("mtx").to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "fix failed: {out:?}");
    let report = read_report(&report_path);
    let n = 9.0;
    for key in ["fixZero", "fixOne"] {
        for &i in &report.duals[key] {
            assert!(i >= 1.0 && i <= n);
        }
    }
}

#[test]
fn solve_matches_exact() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = gen_instance(dir.path(), "randpd", 9, 4, 21);
    let inst = load(&prefix);
    let (z, _) = brute_force(&inst).unwrap();
    let report_path = dir.path().join("solve.json");
    let out = mesp(&[
        "solve",
        "--instance",
        prefix.with_extension("mtx").to_str().unwrap(),
        "--fixing",
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "solve failed: {out:?}");
    let report = read_report(&report_path);
    assert!((report.value - z).abs() < 1e-7);
}

#[test]
fn node_cap_yields_resource_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = gen_instance(dir.path(), "randpd", 10, 5, 3);
    let report_path = dir.path().join("capped.json");
    let out = mesp(&[
        "solve",
        "--instance",
        prefix.with_extension("mtx").to_str().unwrap(),
        "--max-nodes",
        "0",
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let report = read_report(&report_path);
    assert!(report.flags.iter().any(|f| f == "node-cap"));
}

#[test]
fn complementary_reduction_preserves_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = gen_instance(dir.path(), "randpd", 8, 3, 6);
    let comp_prefix = dir.path().join("comp");
    let out = mesp(&[
        "reduce",
        "--instance",
        prefix.with_extension("mtx").to_str().unwrap(),
        "--direction",
        "complementary",
        "--out",
        comp_prefix.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "reduce failed: {out:?}");

    let orig = load(&prefix);
    let comp = load(&comp_prefix);
    let (z, _) = brute_force(&orig).unwrap();
    let (zc, _) = brute_force(&comp).unwrap();
    assert!((z - zc).abs() < 1e-9);
}

#[test]
fn design_generation_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("design-7");
    let out = mesp(&[
        "gen", "--family", "dopt", "--n", "7", "--s", "3", "--r", "2", "--seed", "1", "--out",
        prefix.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "gen dopt failed: {out:?}");
    assert!(dir.path().join("design-7-design.csv").exists());

    // re-import the design matrix; optimum must agree with the
    // generated selection instance
    let mut design_sidecar = prefix.clone();
    design_sidecar.set_file_name("design-7-design.json");
    std::fs::write(
        &design_sidecar,
        serde_json::to_string(&InstanceSidecar { s: 3, offset: 0.0, label: String::new() })
            .unwrap(),
    )
    .unwrap();
    let re_prefix = dir.path().join("reimport");
    let out = mesp(&[
        "reduce",
        "--instance",
        dir.path().join("design-7-design.csv").to_str().unwrap(),
        "--direction",
        "dopt-to-mesp",
        "--out",
        re_prefix.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "dopt-to-mesp failed: {out:?}");
    let (z1, _) = brute_force(&load(&prefix)).unwrap();
    let (z2, _) = brute_force(&load(&re_prefix)).unwrap();
    assert!((z1 - z2).abs() < 1e-9);
}

#[test]
fn missing_sidecar_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = gen_instance(dir.path(), "randpd", 6, 2, 0);
    std::fs::remove_file(prefix.with_extension("json")).unwrap();
    let out = mesp(&[
        "exact",
        "--instance",
        prefix.with_extension("mtx").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
