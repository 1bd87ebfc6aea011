//! Acceptance gate: one verdict line per criterion, non-zero exit if any fails.
//!
//! Run with `cargo test --test acceptance`.

mod common;

use std::time::Instant;

use common::*;
use dsvm::dynamics::{
    assemble_system_matrix, consensus_mean, step, DynamicsConfig, Integrator, SystemState,
    TrackingMode,
};
use dsvm::experiment::{run_experiment, ExperimentConfig};
use dsvm::loss::{local_cost, local_gradient, local_hessian, LossConfig};
use dsvm::spectral::{
    alpha_bar, eigenvalues, empirical_alpha_frontier, first_order_zero_drift, gamma, lambda_min,
    matching_distance_bound, measured_zero_drift, optimal_matching_distance, sum_diagonal_blocks,
    verify_theorem1, Tolerances,
};
use nalgebra::{DMatrix, DVector};

type Criterion = (&'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Network reproduction at the reference parameters.
fn c1_reproduction() -> Verdict {
    let r = reference(1);
    let start = Instant::now();
    let traj = run_reference(&r, &DynamicsConfig::default());
    let secs = start.elapsed().as_secs_f64();
    let last = traj.last();
    let xbar = consensus_mean(&last.x, 4);
    let rel_dis = last.monitors.disagreement / xbar.norm();
    let gsum = last.monitors.grad_sum_norm;
    let rel_f = (last.monitors.cost - r.baseline.f_star).abs() / r.baseline.f_star;
    let pass = rel_dis <= 1e-3 && gsum <= 1e-2 && rel_f <= 1e-2 && secs <= 60.0;
    verdict(
        pass,
        format!(
            "t=2: disagreement/|xbar| = {rel_dis:.3e} (<= 1e-3), |sum grad| = {gsum:.3e} (<= 1e-2), \
             |F - F*|/F* = {rel_f:.3e} (<= 1e-2), runtime {secs:.2}s"
        ),
    )
}

fn instances() -> Vec<Instance> {
    let mut out = Vec::new();
    for (k, (n, m)) in [(3, 2), (3, 4), (5, 2), (5, 4)].into_iter().enumerate() {
        for s in 0..6u64 {
            out.push(random_instance(n, m, 1000 * k as u64 + s));
        }
    }
    out
}

/// Zero structure at half the certified step-size bound.
fn c2_zero_structure() -> Verdict {
    let mut failures = 0;
    let mut worst = String::new();
    let insts = instances();
    for inst in &insts {
        let lm = lambda_min(&inst.wbar, &inst.abar).unwrap();
        let ab = alpha_bar(gamma(&inst.h), lm, inst.n, inst.m).unwrap();
        let alpha = ab.value / 2.0;
        let sys = assemble_system_matrix(&inst.wbar, &inst.abar, &inst.h, alpha, inst.m).unwrap();
        let v = verify_theorem1(&sys.m, inst.m, Tolerances::default()).unwrap();
        if !v.passes {
            failures += 1;
            if worst.is_empty() {
                let frontier = empirical_alpha_frontier(
                    &inst.wbar,
                    &inst.abar,
                    &inst.h,
                    inst.m,
                    &[1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0],
                    Tolerances::default(),
                )
                .unwrap();
                worst = format!(
                    "; e.g. n={} m={}: alpha_bar/2 = {alpha:.3e}, {} eigenvalues in the zero cluster (want {}), \
                     structure holds empirically up to alpha = {:?}",
                    inst.n, inst.m, v.zero_count, inst.m, frontier
                );
            }
        }
    }
    verdict(
        failures == 0,
        format!(
            "{failures}/{} instances violate the zero structure{worst}",
            insts.len()
        ),
    )
}

/// Matching-distance bound against brute-force matching, `2nm <= 8`.
fn c3_matching_bound() -> Verdict {
    let mut violations = 0;
    let mut solver_mismatch = 0;
    let mut count = 0;
    let mut tightest = f64::INFINITY;
    for (n, m) in [(2, 1), (2, 2), (3, 1), (4, 1)] {
        for s in 0..13u64 {
            let inst = random_instance(n, m, 7000 + 100 * (n * m) as u64 + s);
            let alpha = 10f64.powf(-3.0 + 4.0 * (s as f64) / 12.0);
            let sys = assemble_system_matrix(&inst.wbar, &inst.abar, &inst.h, alpha, m).unwrap();
            let e = eigenvalues(&sys.m).unwrap();
            let e0 = eigenvalues(&sys.m0).unwrap();
            let d = brute_force_matching(&e, &e0);
            let bound = matching_distance_bound(&sys.m0, &sys.m, &sys.m1, alpha);
            if d > bound {
                violations += 1;
            }
            if (optimal_matching_distance(&e, &e0).unwrap() - d).abs() > 1e-12 * (1.0 + d) {
                solver_mismatch += 1;
            }
            tightest = tightest.min(bound / d.max(f64::MIN_POSITIVE));
            count += 1;
        }
    }
    verdict(
        violations == 0 && solver_mismatch == 0,
        format!(
            "{violations}/{count} bound violations, {solver_mismatch} bottleneck/brute-force mismatches, \
             smallest bound/distance ratio {tightest:.3}"
        ),
    )
}

/// Independent evaluation of the step-size objective.
fn objective_oracle(alpha: f64, g: f64, k: f64) -> f64 {
    if g < 1.0 {
        let inner = f64::max(4.0 + 4.0 * g + alpha * g, 4.0 + 2.0 * g + alpha);
        4.0 * inner.powf(1.0 - 1.0 / k) * alpha.powf(1.0 / k)
    } else {
        4.0 * (4.0 + 4.0 * g + alpha * g).powf(1.0 - 1.0 / k) * (alpha * g).powf(1.0 / k)
    }
}

/// Root of the step-size condition and its monotonicity in `lambda_min`.
fn c4_alpha_bar_root() -> Verdict {
    let mut worst = 0.0f64;
    let insts = instances();
    for inst in &insts {
        let lm = lambda_min(&inst.wbar, &inst.abar).unwrap();
        let g = gamma(&inst.h);
        let ab = alpha_bar(g, lm, inst.n, inst.m).unwrap();
        let obj = objective_oracle(ab.value, g, (inst.n * inst.m) as f64);
        worst = worst.max((obj - lm).abs() / lm);
    }
    let mut prev = 0.0;
    let mut monotone = true;
    for (g, n, m) in [(0.5, 3, 2), (3.0, 5, 4)] {
        prev = 0.0;
        for k in 0..10 {
            let lm = 0.01 * 1.6f64.powi(k);
            let a = alpha_bar(g, lm, n, m).unwrap().value;
            monotone &= a > prev;
            prev = a;
        }
    }
    let _ = prev;
    verdict(
        worst <= 1e-8 && monotone,
        format!(
            "max |objective(alpha_bar) - lambda_min|/lambda_min = {worst:.2e} over {} instances, \
             monotone scan: {monotone}",
            insts.len()
        ),
    )
}

/// First-order drift of the outgoing zero eigenvalues against `eig(-sum Hess f_i)`.
fn c5_perturbation_derivative() -> Verdict {
    let mut worst = 0.0f64;
    let mut worst_scaled = 0.0f64;
    let mut count = 0;
    for (k, (n, m)) in [(3, 2), (5, 2), (3, 4), (5, 4), (3, 2)]
        .into_iter()
        .enumerate()
    {
        for s in 0..2u64 {
            let inst = random_instance(n, m, 9000 + 10 * k as u64 + s);
            let measured = measured_zero_drift(&inst.wbar, &inst.abar, &inst.h, m, 1e-6).unwrap();
            let sum = sum_diagonal_blocks(&inst.h, n, m).unwrap();
            let mut predicted: Vec<f64> = sum
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .map(|v| -v)
                .collect();
            predicted.sort_by(f64::total_cmp);
            let scaled = first_order_zero_drift(&inst.h, n, m).unwrap();
            for ((meas, pred), sc) in measured.iter().zip(&predicted).zip(&scaled) {
                worst = worst.max((meas - pred).abs() / pred.abs());
                worst_scaled = worst_scaled.max((meas - sc).abs() / sc.abs());
            }
            count += 1;
        }
    }
    verdict(
        worst <= 1e-3,
        format!(
            "max relative error vs eig(-sum Hess f_i) = {worst:.3e} over {count} instances; \
             vs eig(-(1/n) sum Hess f_i) = {worst_scaled:.3e}"
        ),
    )
}

/// Conservation of `sum y - sum grad f` in both tracking modes.
fn c6_conservation() -> Verdict {
    let r = reference(1);
    let run = |integrator, tracking, h: f64| {
        let cfg = DynamicsConfig {
            h,
            integrator,
            tracking,
            record_every: 1,
            ..Default::default()
        };
        run_reference(&r, &cfg).max_conservation_drift()
    };
    let gd = run(Integrator::Rk4, TrackingMode::GradientDifference, 1e-3);
    let e1 = run(Integrator::Euler, TrackingMode::HessianFlow, 1e-3);
    let e2 = run(Integrator::Euler, TrackingMode::HessianFlow, 5e-4);
    let r1 = run(Integrator::Rk4, TrackingMode::HessianFlow, 1e-3);
    let r2 = run(Integrator::Rk4, TrackingMode::HessianFlow, 5e-4);
    let (euler_ratio, rk4_ratio) = (e1 / e2, r1 / r2);
    verdict(
        gd <= 1e-10 && euler_ratio >= 1.9 && rk4_ratio >= 15.0,
        format!(
            "gradient_difference drift {gd:.2e} (<= 1e-10); euler h-halving ratio {euler_ratio:.2} (>= 1.9); \
             rk4 h-halving ratio {rk4_ratio:.2} (>= 15)"
        ),
    )
}

/// Starting at the optimum with zero trackers, nothing moves.
fn c7_equilibrium() -> Verdict {
    let r = reference(2);
    let n = r.problem.n();
    let x_star =
        DVector::from_iterator(4 * n, (0..n).flat_map(|_| r.baseline.x_bar.iter().copied()));
    let start = SystemState::initial(x_star.clone());
    let cfg = DynamicsConfig::default();
    let mut worst = 0.0f64;
    for tracking in [TrackingMode::HessianFlow, TrackingMode::GradientDifference] {
        let cfg = DynamicsConfig {
            tracking,
            ..cfg.clone()
        };
        let mut s = start.clone();
        for k in 0..1000u64 {
            let graphs = r.schedule.topology_at(k / 50).unwrap();
            s = step(&s, &graphs, &r.problem, &cfg).unwrap();
        }
        worst = worst.max((&s.x - &x_star).amax().max(s.y.amax()));
    }
    verdict(
        worst <= 1e-9,
        format!("max state drift after 1000 steps {worst:.2e} (<= 1e-9)"),
    )
}

/// Analytic derivatives against central differences.
fn c8_derivatives() -> Verdict {
    let problem = random_problem(5, 4, 3);
    let loss = LossConfig::new(1.5, 3.0).unwrap();
    let eps = 1e-5;
    let (mut wg, mut wh) = (0.0f64, 0.0f64);
    for s in 0..100u64 {
        let shard = &problem.shards()[(s % 5) as usize];
        let x = random_state(4, 1.5, 500 + s);
        let g = local_gradient(x.as_slice(), shard, &loss).unwrap();
        let h = local_hessian(x.as_slice(), shard, &loss).unwrap();
        let mut gfd = DVector::zeros(4);
        let mut hfd = DMatrix::zeros(4, 4);
        for k in 0..4 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += eps;
            xm[k] -= eps;
            gfd[k] = (local_cost(xp.as_slice(), shard, &loss).unwrap()
                - local_cost(xm.as_slice(), shard, &loss).unwrap())
                / (2.0 * eps);
            let col = (local_gradient(xp.as_slice(), shard, &loss).unwrap()
                - local_gradient(xm.as_slice(), shard, &loss).unwrap())
                / (2.0 * eps);
            hfd.set_column(k, &col);
        }
        wg = wg.max((&gfd - &g).norm() / g.norm().max(1.0));
        wh = wh.max((&hfd - &h).norm() / h.norm().max(1.0));
    }
    verdict(
        wg <= 1e-6 && wh <= 1e-5,
        format!("max relative error: gradient {wg:.2e} (<= 1e-6), Hessian {wh:.2e} (<= 1e-5), 100 states"),
    )
}

/// `V(delta)` against the optimum never increases between samples.
fn c9_lyapunov() -> Verdict {
    let mut total = 0;
    let mut worst = 0.0f64;
    let mut per_seed = Vec::new();
    for seed in 1..=5u64 {
        let r = reference(seed);
        let traj = run_reference(
            &r,
            &DynamicsConfig {
                record_every: 5,
                ..Default::default()
            },
        );
        let v0 = traj.samples[0].monitors.lyapunov;
        let mut bad = 0;
        for w in traj.samples.windows(2) {
            let inc = w[1].monitors.lyapunov - w[0].monitors.lyapunov;
            if inc > 1e-9 * v0 {
                bad += 1;
                worst = worst.max(inc / v0);
            }
        }
        per_seed.push(bad);
        total += bad;
    }
    verdict(
        total == 0,
        format!("increases per seed {per_seed:?}; largest increase {worst:.2e} * V(0)"),
    )
}

/// Two identical runs write identical files.
fn c10_determinism() -> Verdict {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let cfg = ExperimentConfig {
            out_dir: d.path().to_path_buf(),
            dump_graphs: true,
            ..Default::default()
        };
        run_experiment(&cfg).unwrap();
    }
    let mut files: Vec<_> = walk(dirs[0].path());
    files.sort();
    let mut differing = Vec::new();
    for f in &files {
        let rel = f.strip_prefix(dirs[0].path()).unwrap();
        let a = std::fs::read(f).unwrap();
        let b = std::fs::read(dirs[1].path().join(rel)).unwrap_or_default();
        if a != b {
            differing.push(rel.display().to_string());
        }
    }
    verdict(
        differing.is_empty() && !files.is_empty(),
        format!("{} files compared, differing: {differing:?}", files.len()),
    )
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("reproduction at alpha = 10", c1_reproduction),
        (
            "zero-eigenvalue structure at alpha_bar / 2",
            c2_zero_structure,
        ),
        ("matching-distance bound", c3_matching_bound),
        ("step-size bound root", c4_alpha_bar_root),
        ("perturbation derivatives", c5_perturbation_derivative),
        ("conservation", c6_conservation),
        ("equilibrium invariance", c7_equilibrium),
        ("gradient / Hessian correctness", c8_derivatives),
        ("Lyapunov decay", c9_lyapunov),
        ("determinism", c10_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let v = f();
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<45} {}  {}",
            i + 1,
            name,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
