//! Multi-seed runs, verification, CSV output and the linear-speedup sweep.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::analysis::{
    stationarity_summary, verify_descent, verify_lemma2, DescentMode, DescentReport, MetricsRow,
    StationaritySummary, VerificationReport,
};
use crate::error::{Error, Result};
use crate::harness::config::{Prepared, RunConfig};
use crate::harness::streams::fanout_seed;
use crate::optimizers::{run, Algorithm, Trajectory};

/// Relative tolerance on the tracker-mean identity.
pub const TRACKER_TOLERANCE: f64 = 1e-8;
/// Tolerance on the mean-iterate update identity.
pub const MEAN_UPDATE_TOLERANCE: f64 = 1e-10;

/// CSV header of the per-seed metrics files.
pub fn csv_header() -> Vec<&'static str> {
    let mut h = vec!["algorithm", "seed_index"];
    h.extend(MetricsRow::<f64>::COLUMNS);
    h
}

pub fn write_metrics_csv<W: std::io::Write>(out: W, algorithm: Algorithm, seed_index: usize, rows: &[MetricsRow<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header())?;
    for r in rows {
        w.write_record([
            algorithm.name().to_string(),
            seed_index.to_string(),
            r.t.to_string(),
            r.f_mean.to_string(),
            r.grad_norm_mean.to_string(),
            r.grad_norm_agent_max.to_string(),
            r.cons_x.to_string(),
            r.cons_v.to_string(),
            r.phi.to_string(),
            r.samples_per_agent.to_string(),
            r.comm_rounds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Checks on one trajectory. `passed` only covers assertion-class checks.
#[derive(Clone, Debug)]
pub struct SeedReport {
    pub seed_index: usize,
    pub child_seed: u64,
    pub stationarity: StationaritySummary,
    pub lemma2: VerificationReport,
    pub tracker_drift: f64,
    pub tracker_ok: bool,
    pub mean_update_drift: f64,
    pub mean_update_ok: bool,
    pub step_bound_ok: bool,
}

impl SeedReport {
    pub fn passed(&self) -> bool {
        self.lemma2.passed() && self.tracker_ok && self.mean_update_ok && self.step_bound_ok
    }
}

pub fn check_trajectory(traj: &Trajectory<f64>, seed_index: usize, child_seed: u64) -> SeedReport {
    let lemma2 = match (traj.algorithm, traj.rho) {
        (Algorithm::Dnsgd, Some(rho)) => verify_lemma2(traj, rho, traj.m, traj.eta),
        _ => VerificationReport {
            name: "consensus_bound",
            checked: 0,
            violations: 0,
            worst_slack: f64::INFINITY,
            worst_t: None,
            bound: f64::INFINITY,
            applicable: false,
        },
    };
    let is_dnsgd = traj.algorithm == Algorithm::Dnsgd;
    SeedReport {
        seed_index,
        child_seed,
        stationarity: stationarity_summary(traj),
        lemma2,
        tracker_drift: traj.max_tracker_drift,
        tracker_ok: traj.max_tracker_drift <= TRACKER_TOLERANCE,
        mean_update_drift: traj.max_mean_update_drift,
        mean_update_ok: !is_dnsgd || traj.max_mean_update_drift <= MEAN_UPDATE_TOLERANCE,
        step_bound_ok: !is_dnsgd || traj.max_mean_step <= traj.eta * (1.0 + 1e-12),
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub out_dir: PathBuf,
    pub csv_paths: Vec<PathBuf>,
    pub summary: String,
    pub seed_reports: Vec<SeedReport>,
    pub descent: Option<DescentReport>,
    pub trajectories: Vec<Trajectory<f64>>,
    pub passed: bool,
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Run every seed of `cfg` on `prep`, in parallel, returning trajectories in
/// seed order.
pub fn run_seeds(cfg: &RunConfig, prep: &Prepared, threads: usize) -> Result<Vec<(u64, Trajectory<f64>)>> {
    let opts = cfg.run_options();
    let pool = thread_pool(threads)?;
    pool.install(|| {
        (0..cfg.num_seeds)
            .into_par_iter()
            .map(|s| {
                let child = fanout_seed(cfg.master_seed, s as u64);
                run(cfg.algorithm, &prep.problem, &prep.hp, &prep.mixing, &prep.x0, child, &opts)
                    .map(|t| (child, t))
            })
            .collect()
    })
}

/// Run a configured experiment and write its artifacts into `out_dir`:
/// `config.toml`, `metrics_seed_NNN.csv`, `verification.csv` and
/// `summary.txt`.
pub fn run_experiment(cfg: &RunConfig, out_dir: &Path, threads: usize) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let prep = cfg.prepare()?;
    let runs = run_seeds(cfg, &prep, threads)?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("config.toml"), cfg.to_toml_string()?)?;

    let mut csv_paths = Vec::new();
    let mut seed_reports = Vec::new();
    for (idx, (child, traj)) in runs.iter().enumerate() {
        let path = out_dir.join(format!("metrics_seed_{idx:03}.csv"));
        write_metrics_csv(fs::File::create(&path)?, cfg.algorithm, idx, &traj.rows)?;
        csv_paths.push(path);
        seed_reports.push(check_trajectory(traj, idx, *child));
    }
    let trajectories: Vec<Trajectory<f64>> = runs.into_iter().map(|(_, t)| t).collect();

    let descent = (cfg.algorithm == Algorithm::Dnsgd).then(|| {
        let mode = if prep.problem.sigma() == 0.0 {
            DescentMode::Deterministic
        } else {
            DescentMode::Stochastic
        };
        verify_descent(&trajectories, prep.hp.eta, prep.problem.l_f(), prep.problem.f_star(), mode)
    });

    write_verification_csv(&out_dir.join("verification.csv"), &seed_reports, descent.as_ref())?;
    let passed = seed_reports.iter().all(SeedReport::passed);
    let summary = render_summary(cfg, &prep, &seed_reports, descent.as_ref(), passed);
    fs::write(out_dir.join("summary.txt"), &summary)?;
    Ok(ExperimentOutcome {
        out_dir: out_dir.to_path_buf(),
        csv_paths,
        summary,
        seed_reports,
        descent,
        trajectories,
        passed,
    })
}

fn write_verification_csv(path: &Path, seeds: &[SeedReport], descent: Option<&DescentReport>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["seed_index", "check", "applicable", "passed", "checked", "violations", "measured", "bound"])?;
    for s in seeds {
        let idx = s.seed_index.to_string();
        let l = &s.lemma2;
        w.write_record([
            idx.clone(),
            "consensus_bound".into(),
            l.applicable.to_string(),
            l.passed().to_string(),
            l.checked.to_string(),
            l.violations.to_string(),
            (l.bound - l.worst_slack).to_string(),
            l.bound.to_string(),
        ])?;
        for (name, measured, bound, ok) in [
            ("tracker_mean", s.tracker_drift, TRACKER_TOLERANCE, s.tracker_ok),
            ("mean_update", s.mean_update_drift, MEAN_UPDATE_TOLERANCE, s.mean_update_ok),
        ] {
            w.write_record([
                idx.clone(),
                name.into(),
                "true".into(),
                ok.to_string(),
                String::new(),
                String::new(),
                measured.to_string(),
                bound.to_string(),
            ])?;
        }
    }
    if let Some(d) = descent {
        w.write_record([
            "all".into(),
            format!("descent_{}", if d.mode == DescentMode::Deterministic { "deterministic" } else { "stochastic" }),
            "true".into(),
            d.passed.to_string(),
            d.checked.to_string(),
            d.violations.to_string(),
            d.measured.to_string(),
            d.averaged_bound.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn render_summary(
    cfg: &RunConfig,
    prep: &Prepared,
    seeds: &[SeedReport],
    descent: Option<&DescentReport>,
    passed: bool,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "algorithm      = {}", cfg.algorithm);
    let _ = writeln!(s, "problem        = {} (d = {}, m = {})", cfg.problem.family, prep.problem.d(), prep.problem.m());
    let _ = writeln!(
        s,
        "constants      = l0 {} l1 {} zeta {} sigma {} L_f {}",
        prep.problem.l0(),
        prep.problem.l1(),
        prep.problem.zeta(),
        prep.problem.sigma(),
        prep.problem.l_f()
    );
    let _ = writeln!(
        s,
        "topology       = {} (lambda2 {}, gamma {})",
        cfg.topology.kind,
        prep.mixing.lambda2(),
        prep.mixing.gamma()
    );
    let _ = writeln!(
        s,
        "hyperparams    = eta {} b {} T {} K {} K_init {}",
        prep.hp.eta, prep.hp.b, prep.hp.big_t, prep.hp.k_inner, prep.hp.k_init
    );
    if let Some(tp) = &prep.theory {
        let _ = writeln!(s, "\n[theoretical parameters]\n{tp}");
    }
    let _ = writeln!(s, "[seeds]");
    for r in seeds {
        let _ = writeln!(s, "seed {} (child seed {}):", r.seed_index, r.child_seed);
        let _ = writeln!(s, "  {}", r.stationarity);
        let _ = writeln!(s, "  {}", r.lemma2);
        let _ = writeln!(
            s,
            "  tracker mean drift {:.3e} ({}), mean update drift {:.3e} ({}), step bound {}",
            r.tracker_drift,
            ok(r.tracker_ok),
            r.mean_update_drift,
            ok(r.mean_update_ok),
            ok(r.step_bound_ok)
        );
    }
    if let Some(d) = descent {
        let _ = writeln!(s, "\n{d}");
        if d.mode == DescentMode::Deterministic {
            let guard = prep.theory.as_ref().map(|t| t.guard.passed);
            let _ = writeln!(
                s,
                "(per-step descent is guaranteed only when the rho guard passes; guard: {})",
                match guard {
                    Some(true) => "PASS",
                    Some(false) => "FAIL",
                    None => "not evaluated",
                }
            );
        }
    }
    let _ = writeln!(s, "\noverall: {}", if passed { "PASS" } else { "FAIL" });
    s
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAIL"
    }
}

/// One row of the speedup table.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedupRow {
    pub m: usize,
    pub seeds: usize,
    pub reached: usize,
    /// Means over the seeds that reached the target; `None` if none did.
    pub mean_samples: Option<f64>,
    pub mean_comm: Option<f64>,
    pub mean_iterations: Option<f64>,
    pub b: usize,
    pub k_inner: usize,
    /// Consensus-bound checks and violations summed over seeds (DNSGD).
    pub consensus_checked: usize,
    pub consensus_violations: usize,
    pub max_tracker_drift: f64,
}

/// For each `m`, run `cfg` (with `problem.m = m`) until `‖∇f(x̄ᵗ)‖ ≤ target`
/// and average the per-agent sample and communication counts at that point.
pub fn sweep_speedup(cfg: &RunConfig, m_list: &[usize], target: f64, max_iters: usize, threads: usize) -> Result<Vec<SpeedupRow>> {
    let pool = thread_pool(threads)?;
    let mut prepared = Vec::new();
    for &m in m_list {
        let mut c = cfg.clone();
        c.problem.m = m;
        c.stop_at_grad_norm = Some(target);
        c.snapshot_every = 0;
        if let crate::harness::config::HyperConfig::Auto { max_iters: cap, .. } = &mut c.hyper {
            *cap = Some(max_iters);
        }
        let mut prep = c.prepare()?;
        prep.hp.big_t = max_iters;
        prepared.push((c, prep));
    }
    let jobs: Vec<(usize, usize)> = (0..prepared.len())
        .flat_map(|k| (0..cfg.num_seeds).map(move |s| (k, s)))
        .collect();
    type Hit = Option<(usize, usize, usize)>;
    let results: Vec<Result<(usize, Hit, SeedReport)>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(k, s)| {
                let (c, prep) = &prepared[k];
                let child = fanout_seed(c.master_seed, s as u64);
                let traj = run(c.algorithm, &prep.problem, &prep.hp, &prep.mixing, &prep.x0, child, &c.run_options())?;
                let hit = traj
                    .rows
                    .iter()
                    .find(|r| r.grad_norm_mean <= target)
                    .map(|r| (r.samples_per_agent, r.comm_rounds, r.t));
                Ok((k, hit, check_trajectory(&traj, s, child)))
            })
            .collect()
    });
    let mut rows: Vec<SpeedupRow> = prepared
        .iter()
        .map(|(c, prep)| SpeedupRow {
            m: c.problem.m,
            seeds: cfg.num_seeds,
            reached: 0,
            mean_samples: None,
            mean_comm: None,
            mean_iterations: None,
            b: prep.hp.b,
            k_inner: prep.hp.k_inner,
            consensus_checked: 0,
            consensus_violations: 0,
            max_tracker_drift: 0.0,
        })
        .collect();
    let mut sums = vec![(0.0, 0.0, 0.0); rows.len()];
    for r in results {
        let (k, hit, report) = r?;
        rows[k].consensus_checked += report.lemma2.checked;
        rows[k].consensus_violations += report.lemma2.violations;
        rows[k].max_tracker_drift = rows[k].max_tracker_drift.max(report.tracker_drift);
        if let Some((samples, comm, t)) = hit {
            rows[k].reached += 1;
            sums[k].0 += samples as f64;
            sums[k].1 += comm as f64;
            sums[k].2 += t as f64;
        }
    }
    for (row, (s, c, t)) in rows.iter_mut().zip(sums) {
        if row.reached > 0 {
            let n = row.reached as f64;
            row.mean_samples = Some(s / n);
            row.mean_comm = Some(c / n);
            row.mean_iterations = Some(t / n);
        }
    }
    Ok(rows)
}

pub fn write_speedup_csv(path: &Path, rows: &[SpeedupRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["m", "seeds", "reached", "mean_samples_per_agent", "mean_comm_rounds", "mean_iterations", "b", "k_inner", "status"])?;
    let fmt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for r in rows {
        w.write_record([
            r.m.to_string(),
            r.seeds.to_string(),
            r.reached.to_string(),
            fmt(r.mean_samples),
            fmt(r.mean_comm),
            fmt(r.mean_iterations),
            r.b.to_string(),
            r.k_inner.to_string(),
            if r.reached == 0 { "target not reached".into() } else { "ok".to_string() },
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_pinned() {
        assert_eq!(
            csv_header().join(","),
            "algorithm,seed_index,t,f_mean,grad_norm_mean,grad_norm_agent_max,cons_x,cons_v,phi,samples_per_agent,comm_rounds"
        );
    }
}
