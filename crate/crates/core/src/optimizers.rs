//! DNSGD and the decentralized baselines (D-SGD, D-SGT, D-NASA).
//!
//! All optimizers keep the row-stacked local state `X` (iterates), `V`
//! (direction / tracker) and `G` (last oracle batch). Oracle noise for agent
//! `i` at iteration `t` always comes from the stream keyed by
//! `(master_seed, oracle, i, t)`, so a trajectory is a pure function of its
//! inputs.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{metrics_row, MetricsRow};
use crate::error::{Error, Result};
use crate::gossip::{acc_gossip, contraction_rho, plain_gossip};
use crate::harness::streams::{derive_stream, RngStreamKey, Stream, StreamPurpose};
use crate::linalg::AgentMatrix;
use crate::problems::ProblemInstance;
use crate::scalar::{norm, Scalar};
use crate::topology::MixingMatrix;

pub const DEFAULT_EPS_NORM: f64 = 1e-12;
pub const DEFAULT_SNAPSHOT_EVERY: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Dnsgd,
    Dsgd,
    Dsgt,
    Dnasa,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Dnsgd => "dnsgd",
            Algorithm::Dsgd => "dsgd",
            Algorithm::Dsgt => "dsgt",
            Algorithm::Dnasa => "dnasa",
        }
    }

    /// Whether `V` is a gradient tracker whose row mean must equal that of `G`.
    pub fn tracks_gradients(self) -> bool {
        !matches!(self, Algorithm::Dsgd)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dnsgd" => Ok(Algorithm::Dnsgd),
            "dsgd" => Ok(Algorithm::Dsgd),
            "dsgt" => Ok(Algorithm::Dsgt),
            "dnasa" => Ok(Algorithm::Dnasa),
            other => Err(Error::InvalidArgument(format!("unknown algorithm {other:?}"))),
        }
    }
}

/// Step-size schedule for D-NASA. The published experiment setup reads
/// `η_t = m^{1/4} t^{3/4}`, which grows with `t`; the default reads it as a
/// decaying `m^{1/4} / t^{3/4}`. Both are capped at `η`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NasaSchedule {
    #[default]
    Decaying,
    Literal,
}

impl NasaSchedule {
    pub const LITERAL_STRING: &'static str = "eta_t = m^{1/4} t^{3/4}";

    /// Step size at (1-based) iteration `t`.
    pub fn step_size<T: Scalar>(self, eta_max: T, m: usize, t: usize) -> T {
        let m4 = T::of_usize(m).powf(T::of(0.25));
        let t34 = T::of_usize(t.max(1)).powf(T::of(0.75));
        let raw = match self {
            NasaSchedule::Decaying => m4 / t34,
            NasaSchedule::Literal => m4 * t34,
        };
        raw.min(eta_max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperParams<T> {
    pub eta: T,
    pub b: usize,
    pub big_t: usize,
    pub k_inner: usize,
    pub k_init: usize,
    pub epsilon: T,
}

impl<T: Scalar> HyperParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > T::zero()) {
            return Err(Error::InvalidArgument(format!("eta = {} must be > 0", self.eta)));
        }
        if !(self.epsilon.is_finite() && self.epsilon > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon = {} must be > 0",
                self.epsilon
            )));
        }
        for (name, v) in [("b", self.b), ("k_inner", self.k_inner), ("k_init", self.k_init)] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub x: AgentMatrix<T>,
    pub v: AgentMatrix<T>,
    pub g_prev: AgentMatrix<T>,
    pub t: usize,
    pub samples_per_agent: usize,
    pub comm_rounds: usize,
}

impl<T: Scalar> OptimizerState<T> {
    /// `‖mean(V) − mean(G)‖ / max(1, ‖mean(G)‖)`.
    pub fn tracker_drift(&self) -> T {
        let mv = self.v.column_mean();
        let mg = self.g_prev.column_mean();
        let diff: Vec<T> = mv.iter().zip(&mg).map(|(a, b)| *a - *b).collect();
        norm(&diff) / norm(&mg).max(T::one())
    }
}

/// Oracle stream factory for one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Streams {
    pub master_seed: u64,
}

impl Streams {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn oracle(&self, agent: usize, iteration: usize) -> Stream {
        derive_stream(RngStreamKey::new(
            self.master_seed,
            StreamPurpose::Oracle,
            agent as u64,
            iteration as u64,
        ))
    }

    pub fn output_draw(&self, agent: usize) -> Stream {
        derive_stream(RngStreamKey::new(
            self.master_seed,
            StreamPurpose::OutputDraw,
            agent as u64,
            0,
        ))
    }
}

/// Row `i` becomes `v_i / ‖v_i‖`, or zero when `‖v_i‖ ≤ eps_norm`.
pub fn normalize_rows<T: Scalar>(v: &AgentMatrix<T>, eps_norm: T) -> Result<AgentMatrix<T>> {
    v.ensure_finite("normalize_rows input")?;
    let mut out = v.clone();
    for i in 0..v.rows() {
        let n = norm(v.row(i));
        let row = out.row_mut(i);
        if n > eps_norm {
            row.iter_mut().for_each(|a| *a = *a / n);
        } else {
            row.iter_mut().for_each(|a| *a = T::zero());
        }
    }
    Ok(out)
}

/// One minibatch per agent, agent `i` evaluated at row `i` of `x`.
fn sample_batch<T: Scalar>(
    p: &ProblemInstance<T>,
    x: &AgentMatrix<T>,
    b: usize,
    streams: &Streams,
    iteration: usize,
) -> Result<AgentMatrix<T>> {
    let mut g = AgentMatrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let mut s = streams.oracle(i, iteration);
        let sample = p
            .sample_grad(i, x.row(i), b, &mut s)
            .map_err(|e| Error::Diverged {
                iteration,
                agent: i,
                what: e.to_string(),
            })?;
        g.row_mut(i).copy_from_slice(&sample.grad);
    }
    Ok(g)
}

fn check_dims<T: Scalar>(
    p: &ProblemInstance<T>,
    x0: &[T],
    w: &MixingMatrix<T>,
) -> Result<()> {
    if w.m() != p.m() {
        return Err(Error::DimensionMismatch {
            expected: format!("mixing matrix for {} agents", p.m()),
            got: format!("{} agents", w.m()),
        });
    }
    if x0.len() != p.d() {
        return Err(Error::DimensionMismatch {
            expected: format!("x0 of dimension {}", p.d()),
            got: format!("dimension {}", x0.len()),
        });
    }
    Ok(())
}

fn ensure_state_finite<T: Scalar>(s: &OptimizerState<T>) -> Result<()> {
    for (name, mat) in [("x", &s.x), ("v", &s.v), ("g", &s.g_prev)] {
        if let Some((agent, _)) = mat.first_non_finite() {
            return Err(Error::Diverged {
                iteration: s.t,
                agent,
                what: format!("non-finite entry in {name}"),
            });
        }
    }
    Ok(())
}

/// Lines 2–4: consensus start, one minibatch per agent at `x̄⁰`, and
/// `V⁰ = AccGossip(G⁰, W, K̂)`.
pub fn dnsgd_init<T: Scalar>(
    p: &ProblemInstance<T>,
    x0: &[T],
    hp: &HyperParams<T>,
    w: &MixingMatrix<T>,
    streams: &Streams,
) -> Result<OptimizerState<T>> {
    hp.validate()?;
    check_dims(p, x0, w)?;
    let x = AgentMatrix::broadcast(p.m(), x0);
    let g = sample_batch(p, &x, hp.b, streams, 0)?;
    let v = acc_gossip(&g, w, hp.k_init)?;
    Ok(OptimizerState {
        x,
        v,
        g_prev: g,
        t: 0,
        samples_per_agent: hp.b,
        comm_rounds: hp.k_init,
    })
}

/// Lines 6–10: normalize, gossip the step, resample at the new local
/// iterates, and gossip the tracker update.
pub fn dnsgd_step<T: Scalar>(
    s: &OptimizerState<T>,
    p: &ProblemInstance<T>,
    hp: &HyperParams<T>,
    w: &MixingMatrix<T>,
    streams: &Streams,
) -> Result<OptimizerState<T>> {
    let u = normalize_rows(&s.v, T::of(DEFAULT_EPS_NORM))?;
    let x = acc_gossip(&s.x.add_scaled(-hp.eta, &u), w, hp.k_inner)?;
    let g = sample_batch(p, &x, hp.b, streams, s.t + 1)?;
    let tracked = s.v.add_scaled(T::one(), &g).add_scaled(-T::one(), &s.g_prev);
    let v = acc_gossip(&tracked, w, hp.k_inner)?;
    let next = OptimizerState {
        x,
        v,
        g_prev: g,
        t: s.t + 1,
        samples_per_agent: s.samples_per_agent + hp.b,
        comm_rounds: s.comm_rounds + 2 * hp.k_inner,
    };
    ensure_state_finite(&next)?;
    Ok(next)
}

/// Shared initialization for the baselines: consensus start, `V⁰ = G⁰`, no
/// communication.
pub fn baseline_init<T: Scalar>(
    p: &ProblemInstance<T>,
    x0: &[T],
    hp: &HyperParams<T>,
    w: &MixingMatrix<T>,
    streams: &Streams,
) -> Result<OptimizerState<T>> {
    hp.validate()?;
    check_dims(p, x0, w)?;
    let x = AgentMatrix::broadcast(p.m(), x0);
    let g = sample_batch(p, &x, hp.b, streams, 0)?;
    Ok(OptimizerState {
        x,
        v: g.clone(),
        g_prev: g,
        t: 0,
        samples_per_agent: hp.b,
        comm_rounds: 0,
    })
}

/// D-SGD: `X⁺ = W(X − η G)`.
pub fn dsgd_step<T: Scalar>(
    s: &OptimizerState<T>,
    p: &ProblemInstance<T>,
    hp: &HyperParams<T>,
    w: &MixingMatrix<T>,
    streams: &Streams,
) -> Result<OptimizerState<T>> {
    let x = plain_gossip(&s.x.add_scaled(-hp.eta, &s.g_prev), w, 1)?;
    let g = sample_batch(p, &x, hp.b, streams, s.t + 1)?;
    let next = OptimizerState {
        x,
        v: g.clone(),
        g_prev: g,
        t: s.t + 1,
        samples_per_agent: s.samples_per_agent + hp.b,
        comm_rounds: s.comm_rounds + 1,
    };
    ensure_state_finite(&next)?;
    Ok(next)
}

fn tracking_step<T: Scalar>(
    s: &OptimizerState<T>,
    direction: &AgentMatrix<T>,
    step: T,
    p: &ProblemInstance<T>,
    hp: &HyperParams<T>,
    w: &MixingMatrix<T>,
    streams: &Streams,
) -> Result<OptimizerState<T>> {
    let x = plain_gossip(&s.x.add_scaled(-step, direction), w, 1)?;
    let g = sample_batch(p, &x, hp.b, streams, s.t + 1)?;
    let v = plain_gossip(&s.v, w, 1)?
        .add_scaled(T::one(), &g)
        .add_scaled(-T::one(), &s.g_prev);
    let next = OptimizerState {
        x,
        v,
        g_prev: g,
        t: s.t + 1,
        samples_per_agent: s.samples_per_agent + hp.b,
        comm_rounds: s.comm_rounds + 2,
    };
    ensure_state_finite(&next)?;
    Ok(next)
}

/// D-SGT: `X⁺ = W(X − η V)`, `V⁺ = W V + G⁺ − G`.
pub fn dsgt_step<T: Scalar>(
    s: &OptimizerState<T>,
    p: &ProblemInstance<T>,
    hp: &HyperParams<T>,
    w: &MixingMatrix<T>,
    streams: &Streams,
) -> Result<OptimizerState<T>> {
    tracking_step(s, &s.v, hp.eta, p, hp, w, streams)
}

/// D-NASA: the D-SGT skeleton moving along the normalized tracker with a
/// scheduled step size.
pub fn dnasa_step<T: Scalar>(
    s: &OptimizerState<T>,
    p: &ProblemInstance<T>,
    hp: &HyperParams<T>,
    w: &MixingMatrix<T>,
    streams: &Streams,
    schedule: NasaSchedule,
) -> Result<OptimizerState<T>> {
    let u = normalize_rows(&s.v, T::of(DEFAULT_EPS_NORM))?;
    let step = schedule.step_size(hp.eta, p.m(), s.t + 1);
    tracking_step(s, &u, step, p, hp, w, streams)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOptions<T> {
    /// Keep a full copy of `X` every this many iterations (0 disables).
    pub snapshot_every: usize,
    /// Stop at the first recorded `t` with `‖∇f(x̄ᵗ)‖ ≤ target`.
    pub stop_at_grad_norm: Option<T>,
    pub nasa_schedule: NasaSchedule,
}

impl<T> Default for RunOptions<T> {
    fn default() -> Self {
        Self {
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
            stop_at_grad_norm: None,
            nasa_schedule: NasaSchedule::Decaying,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    pub algorithm: Algorithm,
    pub m: usize,
    pub d: usize,
    pub eta: T,
    /// Contraction factor of one inner AccGossip call (DNSGD only).
    pub rho: Option<T>,
    /// One row per recorded iterate, `t = 0..=iterations_run`.
    pub rows: Vec<MetricsRow<T>>,
    pub snapshots: Vec<(usize, AgentMatrix<T>)>,
    /// Per-agent output index drawn uniformly from `0..T`.
    pub output_indices: Vec<Option<usize>>,
    /// `‖∇f(x_i^{t̂_i})‖` at each agent's sampled output, if reached.
    pub output_grad_norms: Vec<Option<T>>,
    /// Per-agent average of `‖∇f(x_iᵗ)‖` over the executed `t < T`.
    pub agent_grad_norm_means: Vec<T>,
    pub max_tracker_drift: T,
    /// Max over steps of `‖x̄ᵗ⁺¹ − x̄ᵗ + η mean(Uᵗ)‖` (DNSGD only).
    pub max_mean_update_drift: T,
    /// Max over steps of `‖x̄ᵗ⁺¹ − x̄ᵗ‖`.
    pub max_mean_step: T,
    /// Iterations at which some agent's iterate left the certification box.
    pub box_exits: usize,
    pub iterations_run: usize,
    pub stopped_early: bool,
    pub final_state: OptimizerState<T>,
}

pub fn init<T: Scalar>(
    algorithm: Algorithm,
    p: &ProblemInstance<T>,
    x0: &[T],
    hp: &HyperParams<T>,
    w: &MixingMatrix<T>,
    streams: &Streams,
) -> Result<OptimizerState<T>> {
    match algorithm {
        Algorithm::Dnsgd => dnsgd_init(p, x0, hp, w, streams),
        _ => baseline_init(p, x0, hp, w, streams),
    }
}

pub fn step<T: Scalar>(
    algorithm: Algorithm,
    s: &OptimizerState<T>,
    p: &ProblemInstance<T>,
    hp: &HyperParams<T>,
    w: &MixingMatrix<T>,
    streams: &Streams,
    schedule: NasaSchedule,
) -> Result<OptimizerState<T>> {
    match algorithm {
        Algorithm::Dnsgd => dnsgd_step(s, p, hp, w, streams),
        Algorithm::Dsgd => dsgd_step(s, p, hp, w, streams),
        Algorithm::Dsgt => dsgt_step(s, p, hp, w, streams),
        Algorithm::Dnasa => dnasa_step(s, p, hp, w, streams, schedule),
    }
}

/// Run `hp.big_t` iterations, recording a [`MetricsRow`] for every iterate.
pub fn run<T: Scalar>(
    algorithm: Algorithm,
    p: &ProblemInstance<T>,
    hp: &HyperParams<T>,
    w: &MixingMatrix<T>,
    x0: &[T],
    master_seed: u64,
    opts: &RunOptions<T>,
) -> Result<Trajectory<T>> {
    let streams = Streams::new(master_seed);
    let m = p.m();
    let big_t = hp.big_t;
    let output_indices: Vec<Option<usize>> = (0..m)
        .map(|i| (big_t > 0).then(|| streams.output_draw(i).random_range(0..big_t)))
        .collect();
    let mut output_grad_norms = vec![None; m];
    let mut agent_sums = vec![T::zero(); m];

    let mut state = init(algorithm, p, x0, hp, w, &streams)?;
    let rho = match algorithm {
        Algorithm::Dnsgd if w.lambda2() < T::one() => Some(contraction_rho(w.lambda2(), hp.k_inner)?),
        _ => None,
    };

    let mut traj = Trajectory {
        algorithm,
        m,
        d: p.d(),
        eta: hp.eta,
        rho,
        rows: Vec::with_capacity(big_t + 1),
        snapshots: Vec::new(),
        output_indices: output_indices.clone(),
        output_grad_norms: Vec::new(),
        agent_grad_norm_means: Vec::new(),
        max_tracker_drift: T::zero(),
        max_mean_update_drift: T::zero(),
        max_mean_step: T::zero(),
        box_exits: 0,
        iterations_run: 0,
        stopped_early: false,
        final_state: state.clone(),
    };

    loop {
        let t = state.t;
        let (row, agent_norms) = metrics_row(&state, p, hp.eta)?;
        if algorithm.tracks_gradients() {
            traj.max_tracker_drift = traj.max_tracker_drift.max(state.tracker_drift());
        }
        if (0..m).any(|i| p.outside_box(state.x.row(i))) {
            traj.box_exits += 1;
        }
        if opts.snapshot_every > 0 && t % opts.snapshot_every == 0 {
            traj.snapshots.push((t, state.x.clone()));
        }
        if t < big_t {
            for i in 0..m {
                agent_sums[i] = agent_sums[i] + agent_norms[i];
                if output_indices[i] == Some(t) {
                    output_grad_norms[i] = Some(agent_norms[i]);
                }
            }
        }
        let reached = opts
            .stop_at_grad_norm
            .is_some_and(|target| row.grad_norm_mean <= target);
        traj.rows.push(row);
        if t >= big_t || reached {
            traj.stopped_early = reached && t < big_t;
            break;
        }

        let x_mean = state.x.column_mean();
        let u_mean = match algorithm {
            Algorithm::Dnsgd => Some(normalize_rows(&state.v, T::of(DEFAULT_EPS_NORM))?.column_mean()),
            _ => None,
        };
        state = step(algorithm, &state, p, hp, w, &streams, opts.nasa_schedule)?;
        let new_mean = state.x.column_mean();
        let moved: Vec<T> = new_mean.iter().zip(&x_mean).map(|(a, b)| *a - *b).collect();
        traj.max_mean_step = traj.max_mean_step.max(norm(&moved));
        if let Some(u_mean) = u_mean {
            let drift: Vec<T> = moved
                .iter()
                .zip(&u_mean)
                .map(|(dx, u)| *dx + hp.eta * *u)
                .collect();
            traj.max_mean_update_drift = traj.max_mean_update_drift.max(norm(&drift));
        }
    }

    let executed = state.t.min(big_t);
    traj.agent_grad_norm_means = agent_sums
        .into_iter()
        .map(|s| if executed > 0 { s / T::of_usize(executed) } else { T::zero() })
        .collect();
    traj.output_grad_norms = output_grad_norms;
    traj.iterations_run = state.t;
    traj.final_state = state;
    Ok(traj)
}
