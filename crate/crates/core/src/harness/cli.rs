//! Command-line front end. Exit codes: 0 success, 1 a check failed, 2 usage
//! or configuration error.

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::analysis::theorem1_params;
use crate::error::{Error, Result};
use crate::harness::config::{theory_inputs, HyperConfig, RunConfig};
use crate::harness::experiment::{run_experiment, sweep_speedup, write_speedup_csv};
use crate::problems::{
    check_relaxed_smooth, check_relaxed_smooth_with_witnesses, prop4, GlobalGradient, GradientField,
    LocalGradient, SmoothnessReport,
};
use crate::topology::validate_mixing;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dnsgd", version, about = "Decentralized normalized SGD simulator")]
struct Cli {
    /// Override the master seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config's `output_dir`).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads for multi-seed runs.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment and write metrics CSVs and a summary.
    Run { config: PathBuf },
    /// Samples-per-agent to reach the target accuracy across agent counts.
    Sweep { config: PathBuf },
    /// Build the topology, validate the mixing matrix and print its spectrum.
    ValidateTopology { config: PathBuf },
    /// Sampled relaxed-smoothness certification. Without a config, runs the
    /// built-in exp(Lx) / exp(-Lx) demo.
    CheckSmoothness {
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = DemoFunction::Average)]
        function: DemoFunction,
        #[arg(long, default_value_t = 1.0)]
        l: f64,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
    },
    /// Print the theoretical hyperparameters for a config.
    Params { config: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DemoFunction {
    /// exp(Lx)
    F1,
    /// exp(-Lx)
    F2,
    /// (exp(Lx) + exp(-Lx)) / 2
    Average,
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run(argv: &[String]) -> i32 {
    let mut out = std::io::stdout();
    let mut err = std::io::stderr();
    run_with(argv, &mut out, &mut err)
}

pub fn run_with(argv: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    match dispatch(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                Error::Diverged { .. } => EXIT_CHECK_FAILED,
                _ => EXIT_USAGE,
            }
        }
    }
}

fn load(cli: &Cli, path: &PathBuf) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    cli.out_dir
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("dnsgd-out"))
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    match &cli.command {
        Command::Run { config } => {
            let cfg = load(cli, config)?;
            let dir = out_dir(cli, &cfg);
            let outcome = run_experiment(&cfg, &dir, cli.threads)?;
            write!(out, "{}", outcome.summary)?;
            writeln!(out, "wrote {} metrics file(s) to {}", outcome.csv_paths.len(), dir.display())?;
            Ok(if outcome.passed { EXIT_OK } else { EXIT_CHECK_FAILED })
        }
        Command::Sweep { config } => {
            let cfg = load(cli, config)?;
            let sweep = cfg
                .sweep
                .clone()
                .ok_or_else(|| Error::Config("sweep section missing".into()))?;
            let rows = sweep_speedup(&cfg, &sweep.m_list, sweep.target_epsilon, sweep.max_iters, cli.threads)?;
            let dir = out_dir(cli, &cfg);
            std::fs::create_dir_all(&dir)?;
            write_speedup_csv(&dir.join("speedup.csv"), &rows)?;
            writeln!(out, "{:>4} {:>8} {:>16} {:>14}", "m", "reached", "samples/agent", "comm rounds")?;
            for r in &rows {
                match (r.mean_samples, r.mean_comm) {
                    (Some(s), Some(c)) => writeln!(out, "{:>4} {:>5}/{:<2} {:>16.1} {:>14.1}", r.m, r.reached, r.seeds, s, c)?,
                    _ => writeln!(out, "{:>4} {:>5}/{:<2} target not reached", r.m, r.reached, r.seeds)?,
                }
            }
            Ok(EXIT_OK)
        }
        Command::ValidateTopology { config } => {
            let cfg = load(cli, config)?;
            let (g, w) = cfg.topology.build(cfg.problem.m, cfg.master_seed)?;
            let report = validate_mixing(&w);
            writeln!(out, "topology {} with m = {}, {} edges", cfg.topology.kind, g.m(), g.edges().len())?;
            write!(out, "{report}")?;
            writeln!(out, "lambda2 = {}", w.lambda2())?;
            writeln!(out, "gamma   = {}", w.gamma())?;
            let eig: Vec<String> = w.eigenvalues().iter().map(|e| format!("{e:.6}")).collect();
            writeln!(out, "eigenvalues = [{}]", eig.join(", "))?;
            Ok(if report.all_passed() { EXIT_OK } else { EXIT_CHECK_FAILED })
        }
        Command::CheckSmoothness {
            config,
            function,
            l,
            trials,
        } => match config {
            Some(path) => check_config_smoothness(cli, path, *trials, out),
            None => check_demo(*function, *l, *trials, cli.seed.unwrap_or(0), out),
        },
        Command::Params { config } => {
            let cfg = load(cli, config)?;
            let (epsilon, c_k, max_iters) = match cfg.hyper {
                HyperConfig::Auto {
                    epsilon,
                    c_k,
                    max_iters,
                    ..
                } => (epsilon, c_k, max_iters),
                HyperConfig::Manual { epsilon, .. } => (epsilon, crate::analysis::DEFAULT_C_K, None),
            };
            let p = cfg.problem.build(cfg.master_seed)?;
            let (_, w) = cfg.topology.build(cfg.problem.m, cfg.master_seed)?;
            let inp = theory_inputs(&p, &w, &cfg.x0(), epsilon, c_k, max_iters)?;
            let tp = theorem1_params::<f64>(&inp)?;
            if p.l1() == 0.0 {
                writeln!(out, "l1 = 0: single-branch settings")?;
            }
            write!(out, "{tp}")?;
            if let Some(prep) = cfg.prepare().ok().filter(|p| p.hp != tp.hp) {
                writeln!(
                    out,
                    "config resolves to: eta {} b {} T {} K {} K_init {}",
                    prep.hp.eta, prep.hp.b, prep.hp.big_t, prep.hp.k_inner, prep.hp.k_init
                )?;
            }
            Ok(EXIT_OK)
        }
    }
}

fn print_report(out: &mut dyn Write, label: &str, r: &SmoothnessReport<f64>) -> Result<()> {
    writeln!(
        out,
        "{label}: {} ({} pairs, {} violations, worst ratio {:.9})",
        if r.passed { "PASS" } else { "FAIL" },
        r.trials,
        r.violations,
        r.worst_ratio
    )?;
    if let Some(w) = &r.witness {
        writeln!(
            out,
            "  witness x = {:?}, y = {:?}, gradient gap = {:.12}, bound = {:.12}",
            w.x, w.y, w.grad_gap, w.bound
        )?;
    }
    Ok(())
}

fn check_demo(function: DemoFunction, l: f64, trials: usize, seed: u64, out: &mut dyn Write) -> Result<i32> {
    if !(l > 0.0) {
        return Err(Error::InvalidArgument(format!("L = {l} must be > 0")));
    }
    let l1 = prop4::l1_for(l);
    let region = 5.0 / l;
    let witness = vec![(vec![0.0], vec![std::f64::consts::LN_2 / l])];
    let f1 = prop4::growing::<f64>(l);
    let f2 = prop4::decaying::<f64>(l);
    let avg = prop4::average::<f64>(l);
    let (label, field): (&str, &dyn GradientField<f64>) = match function {
        DemoFunction::F1 => ("f1 = exp(Lx)", &f1),
        DemoFunction::F2 => ("f2 = exp(-Lx)", &f2),
        DemoFunction::Average => ("(f1 + f2)/2", &avg),
    };
    writeln!(out, "checking (0, {l1})-smoothness with L = {l}")?;
    let report = check_relaxed_smooth_with_witnesses(field, 0.0, l1, region, trials, seed, &witness)?;
    print_report(out, label, &report)?;
    if function == DemoFunction::Average {
        writeln!(out, "  expected gap at (0, ln2/L): 3L/4 = {}", 0.75 * l)?;
    }
    Ok(if report.passed { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn check_config_smoothness(cli: &Cli, path: &PathBuf, trials: usize, out: &mut dyn Write) -> Result<i32> {
    let cfg = load(cli, path)?;
    let p = cfg.problem.build(cfg.master_seed)?;
    let region = p.box_radius();
    let mut all = true;
    writeln!(out, "local functions: (l0, l1) = ({}, {})", p.l0(), p.l1())?;
    for i in 0..p.m() {
        let f = LocalGradient { problem: &p, agent: i };
        let r = check_relaxed_smooth(&f, p.l0(), p.l1(), region, trials, cfg.master_seed)?;
        all &= r.passed;
        print_report(out, &format!("agent {i}"), &r)?;
    }
    writeln!(out, "global function: (L_f, l1) = ({}, {})", p.l_f(), p.l1())?;
    let r = check_relaxed_smooth(&GlobalGradient(&p), p.l_f(), p.l1(), region, trials, cfg.master_seed)?;
    all &= r.passed;
    print_report(out, "global", &r)?;
    Ok(if all { EXIT_OK } else { EXIT_CHECK_FAILED })
}
