//! Acceptance gate: one test per criterion, each printing a single
//! pass/fail line. Tolerances are pinned here; failures carry the
//! offending instance and values.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use mespkit::bnb::{solve_bnb, BnbConfig, BoundChoice};
use mespkit::bqp::{bqp_admm, BqpOptions};
use mespkit::exact::{brute_force, solve_tridiagonal};
use mespkit::fact::{
    augmented_fact_bound, ddfact_bound, dual_certificate, dual_theta, solve_fw, FactOptions,
};
use mespkit::gamma::{gamma_value, supergradient, weighted_gram, EPS_RANK};
use mespkit::gen::{random_correlation, randpd_instance, tridiag_instance};
use mespkit::linx::{linx_admm, linx_bound_direct, linx_value_grad_scaled, LinxOptions};
use mespkit::model::{factor_or_default, ldet_submatrix, Instance, Subset};
use mespkit::reduce::{complement_subset, dopt_to_mesp, to_complementary, DoptInstance};
use mespkit::scaling::{
    apply_mask, optimize_gamma, optimize_upsilon, BoundKind, ScalingOptions,
};
use mespkit::simplex::project_capped_simplex;

fn report(criterion: &str, failures: Vec<String>) {
    if failures.is_empty() {
        println!("ACCEPTANCE {criterion}: PASS");
    } else {
        println!("ACCEPTANCE {criterion}: FAIL");
        for f in &failures {
            println!("  - {f}");
        }
        panic!("{criterion} failed with {} violations", failures.len());
    }
}

/// The 30 shared oracle instances for bound and solver criteria.
fn oracle_instances() -> Vec<Instance> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for seed in 0..30u64 {
        let n = rng.gen_range(6..=10usize);
        let s = rng.gen_range(2..=(n - 2));
        out.push(randpd_instance(n, s, seed));
    }
    out
}

#[test]
fn criterion_1_oracle_equivalence() {
    let started = Instant::now();
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for seed in 0..50u64 {
        let n = rng.gen_range(4..=14usize);
        let base = tridiag_instance(n, 1, seed);
        for s in 1..n {
            let mut inst = base.clone();
            inst.s = s;
            let (dp, dp_set) = solve_tridiagonal(&inst).unwrap();
            let (bf, bf_set) = brute_force(&inst).unwrap();
            if (dp - bf).abs() > 1e-9 {
                failures.push(format!("seed {seed} n {n} s {s}: dp {dp} vs brute {bf}"));
            }
            if dp_set.indices() != bf_set.indices() {
                failures.push(format!(
                    "seed {seed} n {n} s {s}: argmax {:?} vs {:?}",
                    dp_set.indices(),
                    bf_set.indices()
                ));
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    if elapsed >= 10.0 {
        failures.push(format!("runtime {elapsed:.1}s exceeds 10s"));
    }
    report("1 (exact-solver oracle equivalence)", failures);
}

#[test]
fn criterion_2_bound_validity() {
    let started = Instant::now();
    let mut failures = Vec::new();
    let scale_opts = ScalingOptions {
        max_outer_iter: 8,
        ..ScalingOptions::default()
    };
    for (k, inst) in oracle_instances().iter().enumerate() {
        let (z, _) = brute_force(inst).unwrap();
        let floor = z - 1e-7;
        let mut check = |name: &str, value: f64| {
            if value < floor {
                failures.push(format!(
                    "instance {k} ({}): {name} bound {value} below optimum {z}",
                    inst.label
                ));
            }
        };

        check(
            "linx-direct",
            linx_bound_direct(inst, 1.0, &LinxOptions::default()).unwrap().value,
        );
        check(
            "linx-admm",
            linx_admm(inst, 1.0, &LinxOptions::default()).unwrap().value,
        );
        check("ddfact", ddfact_bound(inst, &FactOptions::default()).unwrap().value);
        check(
            "bqp-admm",
            bqp_admm(inst, 1.0, None, &BqpOptions::default()).unwrap().value,
        );
        check(
            "augmented",
            augmented_fact_bound(inst, &FactOptions::default()).unwrap().value,
        );

        let mask = random_correlation(inst.n(), 900 + k as u64);
        let masked = apply_mask(inst, &mask).unwrap();
        check(
            "masked-linx",
            linx_bound_direct(&masked, 1.0, &LinxOptions::default()).unwrap().value,
        );
        check(
            "masked-ddfact",
            ddfact_bound(&masked, &FactOptions::default()).unwrap().value,
        );

        let (gamma, gval) = optimize_gamma(BoundKind::Linx, inst, &scale_opts).unwrap();
        check("gamma-linx", gval);
        // any positive scale factor yields a valid lifted bound
        check(
            "gamma-bqp",
            bqp_admm(inst, gamma, None, &BqpOptions::default()).unwrap().value,
        );
        let (_, uval) = optimize_upsilon(BoundKind::Linx, inst, &scale_opts).unwrap();
        check("upsilon-linx", uval);
        let (_, fval) = optimize_upsilon(BoundKind::DdFact, inst, &scale_opts).unwrap();
        check("upsilon-ddfact", fval);
    }
    let elapsed = started.elapsed().as_secs_f64();
    if elapsed >= 120.0 {
        failures.push(format!("runtime {elapsed:.1}s exceeds 2min"));
    }
    report("2 (bound validity)", failures);
}

#[test]
fn criterion_3_identities() {
    let mut failures = Vec::new();

    for seed in 0..6u64 {
        let inst = randpd_instance(8, 3, seed);
        let (z, _) = brute_force(&inst).unwrap();

        let comp = to_complementary(&inst).unwrap();
        let (zc, _) = brute_force(&comp).unwrap();
        if (z - zc).abs() > 1e-9 {
            failures.push(format!("seed {seed}: complementary {zc} vs {z}"));
        }

        let gamma: f64 = 1.9;
        let scaled = Instance::new(gamma * inst.c.clone(), inst.s);
        let (zs, _) = brute_force(&scaled).unwrap();
        if (zs - inst.s as f64 * gamma.ln() - z).abs() > 1e-9 {
            failures.push(format!("seed {seed}: scaling identity {zs} vs {z}"));
        }

        // scale invariance of the factorization bound
        let b1 = ddfact_bound(&inst, &FactOptions::default()).unwrap().value;
        let b2 = ddfact_bound(&scaled, &FactOptions::default()).unwrap().value
            - inst.s as f64 * gamma.ln();
        if (b1 - b2).abs() > 1e-6 {
            failures.push(format!("seed {seed}: factorization scale variance {b1} vs {b2}"));
        }

        // factorization independence: full eigen factor vs square-root factor
        let wide = mespkit::model::factorize(&inst, inst.n()).unwrap();
        let b3 = ddfact_bound(&wide, &FactOptions::default()).unwrap().value;
        if (b1 - b3).abs() > 1e-6 {
            failures.push(format!("seed {seed}: factorization dependence {b1} vs {b3}"));
        }
    }

    // design-selection subset identity, exhaustive at n <= 7
    use itertools::Itertools;
    for seed in 0..3u64 {
        let a = mespkit::gen::dopt_matrix(7, 2, seed);
        let d = DoptInstance { a, s: 3, offset: 0.0 };
        let inst = dopt_to_mesp(&d).unwrap();
        for combo in (0..7).combinations(3) {
            let dv = d.value(&combo);
            let comp = complement_subset(7, &combo);
            let mv = ldet_submatrix(&inst, &Subset::new(comp).unwrap()).unwrap() + inst.offset;
            if (dv - mv).abs() > 1e-9 {
                failures.push(format!("seed {seed} subset {combo:?}: {dv} vs {mv}"));
            }
        }
    }
    report("3 (exact-value identities)", failures);
}

#[test]
fn criterion_4_duality() {
    let mut failures = Vec::new();
    let opts = FactOptions {
        fw_tol: 1e-8,
        max_iter: 20_000,
        ..FactOptions::default()
    };
    for seed in 100..120u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(6..=10usize);
        let s = rng.gen_range(2..=(n - 2));
        let inst = randpd_instance(n, s, seed);
        let f = factor_or_default(&inst).unwrap();
        let solve = solve_fw(&f, s, 0.0, None, &opts).unwrap();
        let cert = dual_certificate(&solve.x, &f, s, &opts).unwrap();

        if cert.gap > 1e-5 {
            failures.push(format!("seed {seed}: certificate gap {}", cert.gap));
        }
        let mut d: Vec<f64> = cert.d.iter().cloned().collect();
        d.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let top: f64 = d.iter().take(s).sum();
        if (top - s as f64).abs() > 1e-5 {
            failures.push(format!("seed {seed}: top-s supergradient mass {top} vs {s}"));
        }

        // monotone coupling between relaxation solution and supergradient
        for i in 0..n {
            for j in 0..n {
                if solve.x[i] > solve.x[j] + 1e-6 && cert.d[i] < cert.d[j] - 1e-6 {
                    failures.push(format!(
                        "seed {seed}: ordering violated at ({i},{j}): x {} {} d {} {}",
                        solve.x[i], solve.x[j], cert.d[i], cert.d[j]
                    ));
                }
                let fi = solve.x[i] > 1e-6 && solve.x[i] < 1.0 - 1e-6;
                let fj = solve.x[j] > 1e-6 && solve.x[j] < 1.0 - 1e-6;
                if fi && fj && (cert.d[i] - cert.d[j]).abs() > 1e-6 {
                    failures.push(format!(
                        "seed {seed}: fractional coordinates {i},{j} with unequal d"
                    ));
                }
            }
        }
    }
    report("4 (factorization duality)", failures);
}

#[test]
fn criterion_5_fixing_soundness() {
    let mut failures = Vec::new();
    use itertools::Itertools;
    for seed in 200..220u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(7..=10usize);
        let s = rng.gen_range(2..=(n - 2));
        let inst = randpd_instance(n, s, seed);
        let (z, _) = brute_force(&inst).unwrap();

        let f = factor_or_default(&inst).unwrap();
        let opts = FactOptions::default();
        let solve = solve_fw(&f, s, 0.0, None, &opts).unwrap();
        let cert = dual_certificate(&solve.x, &f, s, &opts).unwrap();
        let lb = mespkit::bnb::greedy_local_search(&inst).unwrap().value;
        let fix = mespkit::fact::variable_fix(
            cert.objective + inst.offset,
            lb,
            &cert,
            opts.fix_safety,
        )
        .unwrap();

        // fixings must be respected by at least one optimal subset
        let mut any_optimal_respects = false;
        for combo in (0..n).combinations(s) {
            let v = ldet_submatrix(&inst, &Subset::new(combo.clone()).unwrap()).unwrap()
                + inst.offset;
            if (v - z).abs() <= 1e-9 {
                let ok_zero = fix.fix_zero.iter().all(|j| !combo.contains(j));
                let ok_one = fix.fix_one.iter().all(|j| combo.contains(j));
                if ok_zero && ok_one {
                    any_optimal_respects = true;
                    break;
                }
            }
        }
        if !any_optimal_respects {
            failures.push(format!(
                "seed {seed}: fixings zero {:?} one {:?} exclude every optimum",
                fix.fix_zero, fix.fix_one
            ));
        }

        // paired branch-and-bound runs
        let on = solve_bnb(&inst, &BnbConfig { fixing: true, ..BnbConfig::default() }).unwrap();
        let off = solve_bnb(&inst, &BnbConfig { fixing: false, ..BnbConfig::default() }).unwrap();
        if (on.value - off.value).abs() > 1e-9 || on.subset.indices() != off.subset.indices() {
            failures.push(format!("seed {seed}: fixing changed the optimum"));
        }
        if on.stats.nodes > off.stats.nodes {
            failures.push(format!(
                "seed {seed}: fixing increased nodes {} > {}",
                on.stats.nodes, off.stats.nodes
            ));
        }
    }
    report("5 (variable-fixing soundness)", failures);
}

#[test]
fn criterion_6_admm_agreement() {
    let mut failures = Vec::new();

    for seed in 300..320u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(6..=10usize);
        let s = rng.gen_range(2..=(n - 2));
        let inst = randpd_instance(n, s, seed);
        let direct = linx_bound_direct(&inst, 1.0, &LinxOptions::default()).unwrap().value;
        let admm = linx_admm(&inst, 1.0, &LinxOptions::default()).unwrap().value;
        if (direct - admm).abs() > 1e-4 {
            failures.push(format!("seed {seed}: linx admm {admm} vs direct {direct}"));
        }
    }

    // per-eigenvalue prox stationarity: -1/z + rho (z - mu) = 0
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10 {
        let n = 6;
        let m0: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let m = (&m0 + m0.transpose()) / 2.0;
        for rho in [0.3, 1.0, 4.0] {
            let z = mespkit::linx::logdet_prox(&m, rho);
            let spec = mespkit::model::SpectralCache::new(&m);
            let zspec = spec.eigenvectors.transpose() * &z * &spec.eigenvectors;
            for i in 0..n {
                let zi = zspec[(i, i)];
                let resid = (-1.0 / zi + rho * (zi - spec.eigenvalues[i])).abs();
                if resid > 1e-10 {
                    failures.push(format!("prox stationarity residual {resid} at rho {rho}"));
                }
            }
        }
    }

    let mut converged = 0usize;
    for seed in 400..420u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(5..=8usize);
        let s = rng.gen_range(2..=(n - 2).max(2));
        let inst = randpd_instance(n, s, seed);
        let opts = BqpOptions { admm_tol: 1e-5, ..BqpOptions::default() };
        let res = bqp_admm(&inst, 1.0, None, &opts).unwrap();
        if res.converged {
            converged += 1;
        } else if res.flags.is_empty() {
            failures.push(format!("seed {seed}: non-converged run carries no flag"));
        }
    }
    if converged < 18 {
        failures.push(format!("lifted ADMM converged on only {converged}/20"));
    }
    report("6 (splitting-method agreement)", failures);
}

#[test]
fn criterion_7_scaling_structure() {
    let mut failures = Vec::new();
    let opts = ScalingOptions::default();

    for seed in [0u64, 4] {
        let inst = randpd_instance(7, 3, seed);

        // convexity in log gamma (three-point midpoint probe)
        let f = |t: f64| {
            linx_bound_direct(&inst, t.exp(), &LinxOptions::default()).unwrap().value
        };
        for (a, b) in [(-1.2, 0.8), (-0.3, 1.5)] {
            let mid = (a + b) / 2.0;
            if f(mid) > 0.5 * (f(a) + f(b)) + 1e-6 {
                failures.push(format!("seed {seed}: log-gamma convexity fails on [{a},{b}]"));
            }
        }

        // convexity along a random line in log-upsilon space
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 55);
        let t0 = DVector::from_fn(7, |_, _| rng.gen_range(-0.4..0.4));
        let dir = DVector::from_fn(7, |_, _| rng.gen_range(-0.5..0.5));
        let g = |alpha: f64| {
            let u = (&t0 + alpha * &dir).map(f64::exp);
            mespkit::linx::linx_bound_scaled(&inst, &u, &LinxOptions::default())
                .unwrap()
                .value
        };
        if g(0.0) > 0.5 * (g(-1.0) + g(1.0)) + 1e-6 {
            failures.push(format!("seed {seed}: log-upsilon convexity fails"));
        }

        // containment chain
        let unscaled = f(0.0);
        let (_, o_val) = optimize_gamma(BoundKind::Linx, &inst, &opts).unwrap();
        let (_, g_val) = optimize_upsilon(BoundKind::Linx, &inst, &opts).unwrap();
        if o_val > unscaled + 1e-9 {
            failures.push(format!("seed {seed}: o-scaled {o_val} above unscaled {unscaled}"));
        }
        if g_val > o_val + 1e-9 {
            failures.push(format!("seed {seed}: g-scaled {g_val} above o-scaled {o_val}"));
        }

        // vanishing g-scaling gradient for the factorization bound
        let tight = ScalingOptions {
            fact: FactOptions { fw_tol: 1e-10, max_iter: 50_000, ..FactOptions::default() },
            ..ScalingOptions::default()
        };
        let eval = |t: &DVector<f64>| {
            let u = t.map(f64::exp);
            let fm = factor_or_default(&inst).unwrap();
            let root = u.map(f64::sqrt);
            let fs = DMatrix::from_fn(fm.nrows(), fm.ncols(), |i, j| root[i] * fm[(i, j)]);
            let linear = -u.map(f64::ln);
            solve_fw(&fs, inst.s, 0.0, Some(&linear), &tight.fact).unwrap().value
        };
        let h = 1e-5;
        let mut norm2 = 0.0f64;
        for i in 0..7 {
            let mut tp = DVector::zeros(7);
            tp[i] = h;
            let gi = (eval(&tp) - eval(&(-tp.clone()))) / (2.0 * h);
            norm2 += gi * gi;
        }
        if norm2.sqrt() > 1e-3 {
            failures.push(format!(
                "seed {seed}: factorization g-gradient norm {} at unit scaling",
                norm2.sqrt()
            ));
        }
    }
    report("7 (scaling structure)", failures);
}

#[test]
fn criterion_8_gradient_checks() {
    let mut failures = Vec::new();
    for seed in [11u64, 23, 31] {
        let inst = randpd_instance(8, 3, seed);
        let ones = DVector::from_element(8, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        for point in 0..10 {
            let x = project_capped_simplex(
                &DVector::from_fn(8, |_, _| rng.gen_range(0.25..0.75)),
                3,
            );
            let (_, grad) = linx_value_grad_scaled(&inst.c, &x, &ones).unwrap();
            for i in 0..8 {
                let h = 1e-6;
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                let (vp, _) = linx_value_grad_scaled(&inst.c, &xp, &ones).unwrap();
                let (vm, _) = linx_value_grad_scaled(&inst.c, &xm, &ones).unwrap();
                let fd = (vp - vm) / (2.0 * h);
                let rel = (grad[i] - fd).abs() / grad[i].abs().max(1.0);
                if rel > 1e-6 {
                    failures.push(format!(
                        "seed {seed} point {point} coord {i}: rel err {rel:.3e}"
                    ));
                }
            }
        }

        // directional derivative of the spectral objective
        let f = factor_or_default(&inst).unwrap();
        for probe in 0..5 {
            let x = project_capped_simplex(
                &DVector::from_fn(8, |_, _| rng.gen_range(0.2..0.8)),
                3,
            );
            let y = project_capped_simplex(
                &DVector::from_fn(8, |_, _| rng.gen_range(0.2..0.8)),
                3,
            );
            let dir = &y - &x;
            let theta = dual_theta(&x, &f, 3, EPS_RANK).unwrap();
            let grad = supergradient(&f, &theta);
            let h = 1e-6;
            let up = gamma_value(&weighted_gram(&f, &(&x + &dir * h)), 3).unwrap();
            let dn = gamma_value(&weighted_gram(&f, &(&x - &dir * h)), 3).unwrap();
            let fd = (up.value - dn.value) / (2.0 * h);
            // skip probes straddling a water-filling breakpoint
            if up.iota != dn.iota {
                continue;
            }
            if (grad.dot(&dir) - fd).abs() > 1e-5 * fd.abs().max(1.0) {
                failures.push(format!(
                    "seed {seed} probe {probe}: directional derivative {} vs fd {fd}",
                    grad.dot(&dir)
                ));
            }
        }
    }
    report("8 (gradient checks)", failures);
}

#[test]
fn criterion_9_end_to_end_bnb() {
    let mut failures = Vec::new();
    let instances = oracle_instances();
    for kind in [
        BoundChoice::Linx,
        BoundChoice::DdFact,
        BoundChoice::Bqp,
        BoundChoice::BestOf,
    ] {
        for (k, inst) in instances.iter().enumerate() {
            let (z, _) = brute_force(inst).unwrap();
            let out = solve_bnb(inst, &BnbConfig { bound: kind, ..BnbConfig::default() })
                .unwrap();
            if !out.optimal || (out.value - z).abs() > 1e-7 {
                failures.push(format!(
                    "instance {k} with {kind:?}: solver {} vs oracle {z} (optimal {})",
                    out.value, out.optimal
                ));
            }
        }
    }

    let inst = tridiag_instance(20, 8, 5);
    let started = Instant::now();
    let (dp, _) = solve_tridiagonal(&inst).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    if elapsed >= 1.0 {
        failures.push(format!("tridiagonal n=20 took {elapsed:.2}s"));
    }
    let (bf, _) = brute_force(&inst).unwrap();
    if (dp - bf).abs() > 1e-9 {
        failures.push(format!("tridiagonal n=20: dp {dp} vs brute {bf}"));
    }
    report("9 (end-to-end branch-and-bound)", failures);
}
