//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use dnsgd_core::analysis::{rho_guard, stationarity_summary, verify_descent, DescentMode};
use dnsgd_core::gossip::{acc_gossip, contraction_rho};
use dnsgd_core::harness::config::RunConfig;
use dnsgd_core::harness::experiment::{check_trajectory, run_experiment, run_seeds, sweep_speedup};
use dnsgd_core::harness::streams::{derive_stream, RngStreamKey, StreamPurpose};
use dnsgd_core::optimizers::{Algorithm, Trajectory};
use dnsgd_core::problems::{
    check_pair, check_relaxed_smooth, check_relaxed_smooth_with_witnesses, make_exp_pair,
    make_poly_even, make_quadratic, prop4, ProblemInstance,
};
use dnsgd_core::scalar::norm;
use dnsgd_core::topology::{build_topology, metropolis_mixing, validate_mixing, TopologyTag};
use dnsgd_core::AgentMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

fn config(name: &str) -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

/// DNSGD and D-SGT trajectories produced by the suite, for the cross-cutting
/// criteria.
#[derive(Default)]
struct Shared {
    lemma2_checked: usize,
    lemma2_violations: usize,
    lemma2_runs: usize,
    tracker_worst: f64,
    tracker_runs: usize,
}

impl Shared {
    fn absorb(&mut self, trajs: &[Trajectory<f64>]) {
        for t in trajs {
            if t.algorithm == Algorithm::Dnsgd {
                let r = check_trajectory(t, 0, 0).lemma2;
                assert!(r.applicable, "rho >= 1 in a suite run");
                self.lemma2_checked += r.checked;
                self.lemma2_violations += r.violations;
                self.lemma2_runs += 1;
            }
            if matches!(t.algorithm, Algorithm::Dnsgd | Algorithm::Dsgt) {
                self.tracker_worst = self.tracker_worst.max(t.max_tracker_drift);
                self.tracker_runs += 1;
            }
        }
    }
}

fn criterion1() -> Outcome {
    let m = 16;
    let w = metropolis_mixing::<f64>(&build_topology(TopologyTag::Ring, m, None, 0).unwrap()).unwrap();
    let mut trials = 0;
    let mut failures = 0;
    let mut worst_ratio: f64 = 0.0;
    let mut worst_mean: f64 = 0.0;
    for trial in 0..20u64 {
        let mut rng = derive_stream(RngStreamKey::new(101, StreamPurpose::Oracle, trial, 0));
        let y0 = AgentMatrix::from_fn(m, 4, |_, _| rng.sample::<f64, _>(StandardNormal) * 3.0);
        let e0 = y0.consensus_error();
        let mean0 = y0.column_mean();
        for k in 1..=20 {
            let y = acc_gossip(&y0, &w, k).unwrap();
            let bound = contraction_rho(w.lambda2(), k).unwrap() * e0;
            trials += 1;
            let e = y.consensus_error();
            if e > bound {
                failures += 1;
            }
            worst_ratio = worst_ratio.max(e / bound);
            let drift: Vec<f64> = y.column_mean().iter().zip(&mean0).map(|(a, b)| a - b).collect();
            worst_mean = worst_mean.max(norm(&drift) / norm(&mean0).max(1.0));
        }
    }
    outcome(
        failures == 0 && worst_mean <= 1e-10,
        format!("{trials} trials, {failures} over bound, max measured/bound {worst_ratio:.3e}, max mean drift {worst_mean:.1e}"),
    )
}

fn criterion2() -> Outcome {
    let mut checked = 0;
    let mut failed = Vec::new();
    for (tag, p) in [
        (TopologyTag::Ring, None),
        (TopologyTag::Path, None),
        (TopologyTag::Complete, None),
        (TopologyTag::ErdosRenyi, Some(0.6)),
    ] {
        for m in [2, 4, 8, 16, 32] {
            for seed in 0..20 {
                let g = build_topology(tag, m, p, seed).unwrap();
                let report = validate_mixing(&metropolis_mixing::<f64>(&g).unwrap());
                checked += 1;
                if !report.all_passed() {
                    failed.push(format!("{tag} m={m} seed={seed}"));
                }
            }
        }
    }
    outcome(failed.is_empty(), format!("{checked} matrices validated, failures: {failed:?}"))
}

fn criterion3(shared: &mut Shared) -> Outcome {
    let cfg = config("exp_pair_stationarity.toml");
    let prep = cfg.prepare().unwrap();
    let trajs: Vec<Trajectory<f64>> = run_seeds(&cfg, &prep, 1).unwrap().into_iter().map(|(_, t)| t).collect();
    shared.absorb(&trajs);
    let eps = prep.hp.epsilon;
    let summaries: Vec<_> = trajs.iter().map(stationarity_summary).collect();
    let mean = summaries.iter().map(|s| s.mean_grad_norm).sum::<f64>() / summaries.len() as f64;
    let worst_min = summaries.iter().map(|s| s.min_grad_norm_mean).fold(0.0, f64::max);
    outcome(
        summaries.len() == 10 && mean <= eps && worst_min <= eps / 2.0,
        format!(
            "T = {}, seed-mean of time-averaged |grad f| = {mean:.4e} (<= {eps}), worst per-seed min = {worst_min:.4e} (<= {})",
            prep.hp.big_t,
            eps / 2.0
        ),
    )
}

fn criterion4(shared: &mut Shared) -> Outcome {
    let cfg = config("quadratic_descent.toml");
    let prep = cfg.prepare().unwrap();
    let tp = prep.theory.clone().unwrap();
    let guard = rho_guard(&dnsgd_core::harness::config::theory_inputs(
        &prep.problem, &prep.mixing, &prep.x0, prep.hp.epsilon, 2.0, None,
    )
    .unwrap()
    .guard_inputs(), prep.hp.eta, prep.hp.b, prep.hp.k_inner)
    .unwrap();
    let trajs: Vec<Trajectory<f64>> = run_seeds(&cfg, &prep, 1).unwrap().into_iter().map(|(_, t)| t).collect();
    shared.absorb(&trajs);
    let report = verify_descent(&trajs, prep.hp.eta, prep.problem.l_f(), prep.problem.f_star(), DescentMode::Deterministic);
    outcome(
        guard.passed && tp.guard.passed && report.passed && report.checked == prep.hp.big_t,
        format!(
            "K = {}, rho = {:.4e} <= {:.4e}; {} per-step checks, {} violations, worst slack {:.3e}",
            prep.hp.k_inner, guard.rho, guard.rho_required, report.checked, report.violations, report.worst_slack
        ),
    )
}

fn criterion5(shared: &mut Shared) -> Outcome {
    let cfg = config("speedup_sweep.toml");
    let sweep = cfg.sweep.clone().unwrap();
    let rows = sweep_speedup(&cfg, &sweep.m_list, sweep.target_epsilon, sweep.max_iters, 1).unwrap();
    for r in &rows {
        shared.lemma2_checked += r.consensus_checked;
        shared.lemma2_violations += r.consensus_violations;
        shared.lemma2_runs += r.seeds;
        shared.tracker_worst = shared.tracker_worst.max(r.max_tracker_drift);
        shared.tracker_runs += r.seeds;
    }
    let samples: Vec<Option<f64>> = rows.iter().map(|r| r.mean_samples).collect();
    let all_reached = rows.iter().all(|r| r.reached == r.seeds);
    let monotone = samples.windows(2).all(|w| matches!(w, [Some(a), Some(b)] if b <= a));
    let ratio = match (samples.first(), samples.last()) {
        (Some(Some(a)), Some(Some(b))) => a / b,
        _ => f64::NAN,
    };
    let table: Vec<String> = rows
        .iter()
        .map(|r| format!("m={}: {:.0}", r.m, r.mean_samples.unwrap_or(f64::NAN)))
        .collect();
    outcome(
        all_reached && monotone && ratio >= 4.0,
        format!("samples/agent {}; ratio m=2/m=16 = {ratio:.3}", table.join(", ")),
    )
}

fn criterion6(shared: &Shared) -> Outcome {
    outcome(
        shared.lemma2_runs > 0 && shared.lemma2_checked > 0 && shared.lemma2_violations == 0,
        format!(
            "{} DNSGD runs, {} iterates checked, {} violations",
            shared.lemma2_runs, shared.lemma2_checked, shared.lemma2_violations
        ),
    )
}

fn criterion7() -> Outcome {
    let mut ok = true;
    let mut details = Vec::new();
    for l in [1.0, 2.5] {
        let l1 = prop4::l1_for(l);
        let region = 5.0 / l;
        let r1 = check_relaxed_smooth(&prop4::growing::<f64>(l), 0.0, l1, region, 10_000, 1).unwrap();
        let r2 = check_relaxed_smooth(&prop4::decaying::<f64>(l), 0.0, l1, region, 10_000, 2).unwrap();
        let witness = (vec![0.0], vec![std::f64::consts::LN_2 / l]);
        let avg = prop4::average::<f64>(l);
        let ra = check_relaxed_smooth_with_witnesses(&avg, 0.0, l1, region, 10_000, 3, &[witness.clone()]).unwrap();
        let pair = check_pair(&avg, &witness.0, &witness.1, 0.0, l1).unwrap();
        let gap_err = (pair.grad_gap - 0.75 * l).abs() / (0.75 * l);
        ok &= r1.passed && r1.violations == 0 && r2.passed && r2.violations == 0;
        ok &= !ra.passed && pair.violated() && gap_err <= 1e-9;
        details.push(format!(
            "L={l}: f1 {} / f2 {} violations, average {} violations, witness gap {:.12} (rel err {gap_err:.1e})",
            r1.violations, r2.violations, ra.violations, pair.grad_gap
        ));
    }
    outcome(ok, details.join("; "))
}

fn fd_check(p: &ProblemInstance<f64>, seed: u64) -> f64 {
    let mut rng = derive_stream(RngStreamKey::new(seed, StreamPurpose::Certification, 7, 0));
    let mut worst: f64 = 0.0;
    for n in 0..100 {
        let x: Vec<f64> = (0..p.d()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let agent = n % p.m();
        let g = p.grad_local(agent, &x).unwrap();
        let mut fd = vec![0.0; p.d()];
        for j in 0..p.d() {
            let h = 1e-5 * x[j].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            fd[j] = (p.value_local(agent, &xp).unwrap() - p.value_local(agent, &xm).unwrap()) / (2.0 * h);
        }
        let diff: Vec<f64> = fd.iter().zip(&g).map(|(a, b)| a - b).collect();
        worst = worst.max(norm(&diff) / norm(&g).max(1.0));
    }
    worst
}

fn criterion8() -> Outcome {
    let problems = [
        ("exp_pair", make_exp_pair::<f64>(4, 1.0, 3, 0.3, 0.7, 1).unwrap()),
        ("poly_even", make_poly_even::<f64>(4, 4, 0.5, 3, 0.3, 0.7, 2).unwrap()),
        ("quadratic", make_quadratic::<f64>(4, 1.5, 3, 0.3, 0.7, 3).unwrap()),
    ];
    let mut ok = true;
    let mut details = Vec::new();
    for (name, p) in &problems {
        let fd = fd_check(p, 5);
        // Monte-Carlo unbiasedness and variance of the minibatch oracle.
        let x = vec![0.4, -0.3, 0.2, 0.1];
        let b = 4;
        let n = 100_000;
        let exact = p.grad_local(1, &x).unwrap();
        let mut mean = vec![0.0; p.d()];
        let mut sq = 0.0;
        for k in 0..n {
            let mut s = derive_stream(RngStreamKey::new(9, StreamPurpose::Oracle, 1, k));
            let g = p.sample_grad(1, &x, b, &mut s).unwrap().grad;
            let noise: Vec<f64> = g.iter().zip(&exact).map(|(a, e)| a - e).collect();
            sq += norm(&noise).powi(2);
            for (m, v) in mean.iter_mut().zip(&noise) {
                *m += v;
            }
        }
        let sigma = p.sigma();
        let tol = 4.0 * sigma / ((n as f64) * b as f64).sqrt();
        let mean_err = mean.iter().map(|v| (v / n as f64).abs()).fold(0.0, f64::max);
        let var_ratio = sq / n as f64 / (sigma * sigma / b as f64);
        ok &= fd <= 1e-6 && mean_err <= tol && (0.95..=1.05).contains(&var_ratio);
        details.push(format!("{name}: fd {fd:.1e}, mean err {mean_err:.1e} (<= {tol:.1e}), var ratio {var_ratio:.4}"));
    }
    outcome(ok, details.join("; "))
}

fn criterion9(shared: &mut Shared) -> Outcome {
    // D-SGT on the stationarity configuration, to cover the baseline tracker too.
    let mut cfg = config("exp_pair_stationarity.toml");
    cfg.algorithm = Algorithm::Dsgt;
    cfg.num_seeds = 3;
    let mut prep = cfg.prepare().unwrap();
    prep.hp.big_t = 2000;
    let trajs: Vec<Trajectory<f64>> = run_seeds(&cfg, &prep, 1).unwrap().into_iter().map(|(_, t)| t).collect();
    shared.absorb(&trajs);
    outcome(
        shared.tracker_runs > 0 && shared.tracker_worst <= 1e-8,
        format!(
            "{} DNSGD/D-SGT runs, worst relative |mean(V) - mean(G)| = {:.3e}",
            shared.tracker_runs, shared.tracker_worst
        ),
    )
}

fn criterion10() -> Outcome {
    let mut cfg = config("exp_pair_stationarity.toml");
    cfg.num_seeds = 4;
    cfg.hyper = dnsgd_core::harness::HyperConfig::Auto {
        epsilon: 0.2,
        c_k: 2.0,
        k_rule: Default::default(),
        max_iters: Some(300),
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_experiment(&cfg, a.path(), 1).unwrap();
    let rb = run_experiment(&cfg, b.path(), 4).unwrap();
    let mut identical = ra.csv_paths.len() == 4 && ra.csv_paths.len() == rb.csv_paths.len();
    for (pa, pb) in ra.csv_paths.iter().zip(&rb.csv_paths) {
        identical &= std::fs::read(pa).unwrap() == std::fs::read(pb).unwrap();
    }
    outcome(identical, format!("{} CSV files compared across 1 and 4 threads", ra.csv_paths.len()))
}

fn main() {
    let mut shared = Shared::default();
    let mut results: Vec<(u32, &str, Outcome, Duration, Option<Duration>)> = Vec::new();
    let mut timed = |id: u32, name: &'static str, limit: Option<u64>, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let out = f();
        let elapsed = start.elapsed();
        results.push((id, name, out, elapsed, limit.map(Duration::from_secs)));
    };
    timed(1, "gossip contraction", Some(5), &mut criterion1);
    timed(2, "mixing matrix validation", Some(10), &mut criterion2);
    timed(3, "DNSGD stationarity", Some(120), &mut || criterion3(&mut shared));
    timed(4, "deterministic descent", Some(10), &mut || criterion4(&mut shared));
    timed(5, "linear speedup", Some(300), &mut || criterion5(&mut shared));
    timed(7, "relaxed smoothness counterexample", Some(5), &mut criterion7);
    timed(8, "oracle correctness", Some(30), &mut criterion8);
    timed(9, "tracker identity", None, &mut || criterion9(&mut shared));
    timed(6, "consensus bound", None, &mut || criterion6(&shared));
    timed(10, "determinism across threads", None, &mut criterion10);
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    for (id, name, out, elapsed, limit) in &results {
        let in_time = limit.is_none_or(|l| *elapsed <= l);
        let pass = out.passed && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} [{}] {name} ({:.2}s{}): {}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.map_or(String::new(), |l| format!(" of {}s", l.as_secs())),
            out.detail
        );
    }
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
