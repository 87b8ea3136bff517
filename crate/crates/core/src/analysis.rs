//! Diagnostics: the Lyapunov function, per-iteration metrics, the theoretical
//! hyperparameter settings and the consensus / descent verifications.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gossip::{contraction_c1, contraction_c2, contraction_rho};
use crate::optimizers::{HyperParams, OptimizerState, Trajectory};
use crate::problems::{lf_effective, ProblemInstance};
use crate::scalar::{norm, Scalar};

/// Default constant in `K = ⌈C_K log(max(m, 2)) / √γ⌉`.
pub const DEFAULT_C_K: f64 = 2.0;
/// Additive tolerance for the deterministic descent inequality.
pub const DESCENT_TOLERANCE: f64 = 1e-9;
/// Relative tolerance for the consensus bound (rounding only).
pub const LEMMA2_TOLERANCE: f64 = 1e-12;
/// Upper bound on the number of gossip rounds the guard search will consider.
pub const MAX_GUARD_K: usize = 100_000;

/// One recorded iterate. Column order here is the CSV column order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricsRow<T> {
    pub t: usize,
    pub f_mean: T,
    pub grad_norm_mean: T,
    pub grad_norm_agent_max: T,
    pub cons_x: T,
    pub cons_v: T,
    pub phi: T,
    pub samples_per_agent: usize,
    pub comm_rounds: usize,
}

impl<T> MetricsRow<T> {
    pub const COLUMNS: [&'static str; 9] = [
        "t",
        "f_mean",
        "grad_norm_mean",
        "grad_norm_agent_max",
        "cons_x",
        "cons_v",
        "phi",
        "samples_per_agent",
        "comm_rounds",
    ];
}

/// `(M0, M1) = (√(2(l0² + l1²ζ²)), √2·l1)`.
pub fn lyapunov_constants<T: Scalar>(l0: T, l1: T, zeta: T) -> (T, T) {
    let two = T::of(2.0);
    let m0 = (two * (l0 * l0 + l1 * l1 * zeta * zeta)).sqrt();
    (m0, two.sqrt() * l1)
}

/// Lemma 3 constants `M2 = (ρ+1)L_f + ρL_fL1η` and `M3 = ρL1(L1η+1) + L1`.
pub fn lemma3_constants<T: Scalar>(rho: T, l_f: T, l1: T, eta: T) -> (T, T) {
    let m2 = (rho + T::one()) * l_f + rho * l_f * l1 * eta;
    let m3 = rho * l1 * (l1 * eta + T::one()) + l1;
    (m2, m3)
}

fn check_state_dims<T: Scalar>(
    x: &crate::linalg::AgentMatrix<T>,
    v: &crate::linalg::AgentMatrix<T>,
    p: &ProblemInstance<T>,
) -> Result<()> {
    for mat in [x, v] {
        if mat.rows() != p.m() || mat.cols() != p.d() {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", p.m(), p.d()),
                got: format!("{}x{}", mat.rows(), mat.cols()),
            });
        }
    }
    Ok(())
}

/// `Φ = f(x̄) + (3η/√m)(M0 + M1‖∇f(x̄)‖)‖X − 1x̄‖ + (2η/√m)‖V − 1v̄‖`.
pub fn lyapunov_phi<T: Scalar>(
    x: &crate::linalg::AgentMatrix<T>,
    v: &crate::linalg::AgentMatrix<T>,
    p: &ProblemInstance<T>,
    eta: T,
) -> Result<T> {
    check_state_dims(x, v, p)?;
    let x_bar = x.column_mean();
    let f = p.value(&x_bar)?;
    let g = norm(&p.grad(&x_bar)?);
    Ok(phi_from_parts(f, g, x.consensus_error(), v.consensus_error(), p, eta))
}

fn phi_from_parts<T: Scalar>(f: T, g: T, cons_x: T, cons_v: T, p: &ProblemInstance<T>, eta: T) -> T {
    let (m0, m1) = lyapunov_constants(p.l0(), p.l1(), p.zeta());
    let sqrt_m = T::of_usize(p.m()).sqrt();
    f + T::of(3.0) * eta / sqrt_m * (m0 + m1 * g) * cons_x + T::of(2.0) * eta / sqrt_m * cons_v
}

/// Metrics for one state, plus `‖∇f(x_iᵗ)‖` for every agent.
pub fn metrics_row<T: Scalar>(
    s: &OptimizerState<T>,
    p: &ProblemInstance<T>,
    eta: T,
) -> Result<(MetricsRow<T>, Vec<T>)> {
    check_state_dims(&s.x, &s.v, p)?;
    let x_bar = s.x.column_mean();
    let f_mean = p.value(&x_bar)?;
    let grad_norm_mean = norm(&p.grad(&x_bar)?);
    let agent_norms = (0..p.m())
        .map(|i| p.grad(s.x.row(i)).map(|g| norm(&g)))
        .collect::<Result<Vec<T>>>()?;
    let grad_norm_agent_max = agent_norms.iter().fold(T::zero(), |a, &b| a.max(b));
    let cons_x = s.x.consensus_error();
    let cons_v = s.v.consensus_error();
    let phi = phi_from_parts(f_mean, grad_norm_mean, cons_x, cons_v, p, eta);
    Ok((
        MetricsRow {
            t: s.t,
            f_mean,
            grad_norm_mean,
            grad_norm_agent_max,
            cons_x,
            cons_v,
            phi,
            samples_per_agent: s.samples_per_agent,
            comm_rounds: s.comm_rounds,
        },
        agent_norms,
    ))
}

/// One condition of the ρ-smallness requirement.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GuardTerm {
    pub name: &'static str,
    /// Largest admissible ρ; `+∞` when the condition is vacuous.
    pub threshold: f64,
}

/// Smallness conditions on `ρ` under which the one-step descent inequality
/// holds, evaluated at a concrete `ρ`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RhoGuard {
    pub rho: f64,
    pub terms: Vec<GuardTerm>,
    pub rho_required: f64,
    /// `b ≥ 256σ²/(mη²L_f²)`.
    pub batch_ok: bool,
    /// `K ≥ log(1 + mηL1)/√γ`, used when bounding the tracker error.
    pub rounds_ok: bool,
    pub passed: bool,
}

impl fmt::Display for RhoGuard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "rho guard: rho = {:.6e}, required <= {:.6e}, batch_ok = {}, rounds_ok = {} -> {}",
            self.rho,
            self.rho_required,
            self.batch_ok,
            self.rounds_ok,
            if self.passed { "PASS" } else { "FAIL" }
        )?;
        for t in &self.terms {
            writeln!(f, "  {:<24} {:.6e}", t.name, t.threshold)?;
        }
        Ok(())
    }
}

/// Problem-side constants the guard needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuardInputs {
    pub l0: f64,
    pub l1: f64,
    pub zeta: f64,
    pub sigma: f64,
    pub m: usize,
    pub gamma: f64,
}

/// `a / b`, treating `0/0` as a vacuous condition.
fn ratio(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

pub fn rho_guard(g: &GuardInputs, eta: f64, b: usize, k: usize) -> Result<RhoGuard> {
    let lambda2 = 1.0 - g.gamma;
    let rho = contraction_rho(lambda2, k)?;
    Ok(rho_guard_at(g, eta, b, k, rho))
}

fn rho_guard_at(g: &GuardInputs, eta: f64, b: usize, k: usize, rho: f64) -> RhoGuard {
    let l_f = lf_effective(g.l0, g.l1, g.zeta);
    let (m0, m1) = lyapunov_constants(g.l0, g.l1, g.zeta);
    let (m2, m3) = lemma3_constants(rho, l_f, g.l1, eta);
    let sm = (g.m as f64).sqrt();
    let c = 3.0 - 2.0 * 2f64.sqrt();
    let terms = vec![
        GuardTerm {
            name: "consensus_step",
            threshold: 1.0 / (1.0 + g.m as f64 * eta * g.l1),
        },
        GuardTerm {
            name: "x_error_weight",
            threshold: if m0 == 0.0 {
                f64::INFINITY
            } else {
                ratio(c * m0, 3.0 * (m0 + m1 * l_f * eta) + 2.0 * m2)
            },
        },
        GuardTerm {
            name: "x_error_grad_weight",
            threshold: if m1 == 0.0 {
                f64::INFINITY
            } else {
                ratio(c * m1, 3.0 * m1 * (1.0 + g.l1 * eta) + 2.0 * m3)
            },
        },
        GuardTerm {
            name: "v_error_weight",
            threshold: 0.5,
        },
        GuardTerm {
            name: "grad_coefficient",
            threshold: ratio(
                1.0,
                8.0 * (3.0 * sm * eta * m1 * (1.0 + g.l1 * eta) + 2.0 * sm * eta * m3),
            ),
        },
        GuardTerm {
            name: "constant_term",
            threshold: ratio(
                eta * l_f,
                8.0 * (3.0 * sm * eta * (m0 + m1 * l_f * eta) + 2.0 * sm * eta * m2),
            ),
        },
    ];
    let rho_required = terms.iter().map(|t| t.threshold).fold(f64::INFINITY, f64::min);
    let batch_ok = g.sigma == 0.0
        || (b as f64) >= 256.0 * g.sigma * g.sigma / (g.m as f64 * eta * eta * l_f * l_f);
    let rounds_ok = (k as f64) >= (1.0 + g.m as f64 * eta * g.l1).ln() / g.gamma.sqrt();
    RhoGuard {
        rho,
        terms,
        rho_required,
        batch_ok,
        rounds_ok,
        passed: rho <= rho_required && batch_ok && rounds_ok,
    }
}

/// Smallest `K` for which [`rho_guard`] passes, if any below [`MAX_GUARD_K`].
pub fn min_k_for_guard(g: &GuardInputs, eta: f64, b: usize) -> Result<Option<usize>> {
    check_gamma(g.gamma)?;
    for k in 1..=MAX_GUARD_K {
        if rho_guard(g, eta, b, k)?.passed {
            return Ok(Some(k));
        }
    }
    Ok(None)
}

/// Smallest `K` with `ρ(K) ≤ target`.
pub fn min_k_for_rho(gamma: f64, target: f64) -> Result<Option<usize>> {
    check_gamma(gamma)?;
    for k in 0..=MAX_GUARD_K {
        if contraction_rho(1.0 - gamma, k)? <= target {
            return Ok(Some(k));
        }
    }
    Ok(None)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidArgument(format!("gamma = {gamma} outside (0, 1]")));
    }
    Ok(())
}

/// Inputs to [`theorem1_params`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoryInputs {
    pub epsilon: f64,
    pub l0: f64,
    pub l1: f64,
    pub zeta: f64,
    pub sigma: f64,
    pub m: usize,
    pub gamma: f64,
    /// `f(x̄⁰) − f*`.
    pub delta_f: f64,
    /// `Σᵢ ‖∇fᵢ(x⁰)‖²`, which sets the initial gossip rounds `K̂`.
    pub init_grad_sq_sum: f64,
    pub c_k: f64,
    /// Optional cap on `T`.
    pub max_iters: Option<usize>,
}

impl TheoryInputs {
    pub fn new(epsilon: f64, l0: f64, l1: f64, zeta: f64, sigma: f64, m: usize, gamma: f64, delta_f: f64) -> Self {
        Self {
            epsilon,
            l0,
            l1,
            zeta,
            sigma,
            m,
            gamma,
            delta_f,
            init_grad_sq_sum: 0.0,
            c_k: DEFAULT_C_K,
            max_iters: None,
        }
    }

    pub fn guard_inputs(&self) -> GuardInputs {
        GuardInputs {
            l0: self.l0,
            l1: self.l1,
            zeta: self.zeta,
            sigma: self.sigma,
            m: self.m,
            gamma: self.gamma,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TheoreticalParams<T> {
    pub hp: HyperParams<T>,
    pub m0: T,
    pub m1: T,
    pub m2: T,
    pub m3: T,
    pub l_f: T,
    pub delta_f: T,
    pub delta_phi: T,
    pub rho: T,
    pub rho_required: T,
    pub guard: RhoGuard,
    /// `T` before the optional cap.
    pub t_uncapped: usize,
    /// `ε/(2mηL_f + (mηL1 + 1)ε)`, the per-agent output condition on `ρ`.
    pub rho_per_agent: T,
}

impl<T: Scalar> fmt::Display for TheoreticalParams<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let h = &self.hp;
        writeln!(f, "epsilon        = {}", h.epsilon)?;
        writeln!(f, "eta            = {}", h.eta)?;
        writeln!(f, "b              = {}", h.b)?;
        writeln!(f, "T              = {} (uncapped {})", h.big_t, self.t_uncapped)?;
        writeln!(f, "K              = {}", h.k_inner)?;
        writeln!(f, "K_init         = {}", h.k_init)?;
        writeln!(f, "L_f            = {}", self.l_f)?;
        writeln!(f, "M0             = {}", self.m0)?;
        writeln!(f, "M1             = {}", self.m1)?;
        writeln!(f, "M2             = {}", self.m2)?;
        writeln!(f, "M3             = {}", self.m3)?;
        writeln!(f, "delta_f        = {}", self.delta_f)?;
        writeln!(f, "delta_phi      = {}", self.delta_phi)?;
        writeln!(f, "rho            = {}", self.rho)?;
        writeln!(f, "rho_required   = {}", self.rho_required)?;
        writeln!(f, "rho_per_agent  = {}", self.rho_per_agent)?;
        write!(f, "{}", self.guard)
    }
}

/// Hyperparameters of the main convergence theorem.
///
/// `η = min{ε/(4L_f+1), 1/(2L1)}`, `b` and `T` from their lower bounds with
/// `Δ_Φ = 2Δ_f`, `K = ⌈C_K log(max(m,2))/√γ⌉` raised if needed so that
/// `ρ ≤ 1/2`, and `K̂` from the initial tracker-error requirement.
pub fn theorem1_params<T: Scalar>(inp: &TheoryInputs) -> Result<TheoreticalParams<T>> {
    let TheoryInputs {
        epsilon,
        l0,
        l1,
        zeta,
        sigma,
        m,
        gamma,
        delta_f,
        init_grad_sq_sum,
        c_k,
        max_iters,
    } = *inp;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon = {epsilon} must be > 0")));
    }
    check_gamma(gamma)?;
    if m == 0 {
        return Err(Error::InvalidArgument("m must be >= 1".into()));
    }
    for (name, v) in [("l1", l1), ("zeta", zeta), ("sigma", sigma), ("init_grad_sq_sum", init_grad_sq_sum)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!("{name} = {v} must be >= 0")));
        }
    }
    for (name, v) in [("l0", l0), ("delta_f", delta_f), ("c_k", c_k)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!("{name} = {v} must be > 0")));
        }
    }
    let l_f = lf_effective(l0, l1, zeta);
    let mf = m as f64;
    let a = 4.0 * l_f + 1.0;

    let eta = if l1 > 0.0 {
        (epsilon / a).min(1.0 / (2.0 * l1))
    } else {
        epsilon / a
    };

    let s2 = sigma * sigma;
    let b1 = 256.0 * a * a * s2 / (mf * l_f * l_f * epsilon * epsilon);
    let b2 = 1024.0 * l1 * l1 * s2 / (mf * l_f * l_f);
    let b = to_count(b1.max(b2).ceil().max(1.0), "b")?;

    let delta_phi = 2.0 * delta_f;
    let t1 = 8.0 * a * delta_phi / (epsilon * epsilon);
    let t2 = 16.0 * l1 * delta_phi / epsilon;
    let t_uncapped = to_count(t1.max(t2).ceil().max(1.0), "T")?;
    let big_t = max_iters.map_or(t_uncapped, |cap| t_uncapped.min(cap));

    let sqrt_gamma = gamma.sqrt();
    let k_formula = to_count((c_k * mf.max(2.0).ln() / sqrt_gamma).ceil().max(1.0), "K")?;
    let k_floor = min_k_for_rho(gamma, 0.5)?.unwrap_or(1);
    let k_inner = k_formula.max(k_floor).max(1);

    let term = 2.0 * 2f64.sqrt() * eta * (mf * s2 / b as f64 + init_grad_sq_sum).sqrt()
        / (mf.sqrt() * delta_f);
    let c1: f64 = contraction_c1();
    let c2: f64 = contraction_c2();
    let k_init = if c1 * term > 1.0 {
        to_count(((c1 * term).ln() / (c2 * sqrt_gamma)).ceil().max(1.0), "K_init")?
    } else {
        1
    };

    let hp = HyperParams {
        eta: T::of(eta),
        b,
        big_t,
        k_inner,
        k_init,
        epsilon: T::of(epsilon),
    };
    let guard = rho_guard(&inp.guard_inputs(), eta, b, k_inner)?;
    let (m0, m1) = lyapunov_constants(l0, l1, zeta);
    let (m2, m3) = lemma3_constants(guard.rho, l_f, l1, eta);
    let rho_per_agent = epsilon / (2.0 * mf * eta * l_f + (mf * eta * l1 + 1.0) * epsilon);
    Ok(TheoreticalParams {
        hp,
        m0: T::of(m0),
        m1: T::of(m1),
        m2: T::of(m2),
        m3: T::of(m3),
        l_f: T::of(l_f),
        delta_f: T::of(delta_f),
        delta_phi: T::of(delta_phi),
        rho: T::of(guard.rho),
        rho_required: T::of(guard.rho_required),
        guard,
        t_uncapped,
        rho_per_agent: T::of(rho_per_agent),
    })
}

fn to_count(v: f64, name: &str) -> Result<usize> {
    if v.is_finite() && v < usize::MAX as f64 / 2.0 {
        Ok(v as usize)
    } else {
        Err(Error::InvalidArgument(format!("{name} = {v} is not representable")))
    }
}

/// Outcome of a bound checked at every recorded iterate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    pub name: &'static str,
    pub checked: usize,
    pub violations: usize,
    /// Smallest `bound − measured` over all checked iterates.
    pub worst_slack: f64,
    pub worst_t: Option<usize>,
    pub bound: f64,
    pub applicable: bool,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        !self.applicable || self.violations == 0
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.applicable {
            return write!(f, "{}: not applicable", self.name);
        }
        write!(
            f,
            "{}: {} ({} checked, {} violations, bound {:.6e}, worst slack {:.6e}",
            self.name,
            if self.passed() { "PASS" } else { "FAIL" },
            self.checked,
            self.violations,
            self.bound,
            self.worst_slack,
        )?;
        match self.worst_t {
            Some(t) => write!(f, " at t = {t})"),
            None => write!(f, ")"),
        }
    }
}

/// `‖Xᵗ − 1x̄ᵗ‖ ≤ ρmη/(1−ρ)` for every recorded `t ≥ 1`. Not applicable when
/// `ρ ≥ 1`.
pub fn verify_lemma2<T: Scalar>(traj: &Trajectory<T>, rho: T, m: usize, eta: T) -> VerificationReport {
    let rho = rho.to_f64_lossy();
    let eta = eta.to_f64_lossy();
    let mut report = VerificationReport {
        name: "consensus_bound",
        checked: 0,
        violations: 0,
        worst_slack: f64::INFINITY,
        worst_t: None,
        bound: f64::INFINITY,
        applicable: rho < 1.0,
    };
    if !report.applicable {
        return report;
    }
    let bound = rho * m as f64 * eta / (1.0 - rho);
    report.bound = bound;
    for row in traj.rows.iter().filter(|r| r.t >= 1) {
        let c = row.cons_x.to_f64_lossy();
        let slack = bound - c;
        report.checked += 1;
        if c > bound * (1.0 + LEMMA2_TOLERANCE) + LEMMA2_TOLERANCE {
            report.violations += 1;
        }
        if slack < report.worst_slack {
            report.worst_slack = slack;
            report.worst_t = Some(row.t);
        }
    }
    report
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DescentMode {
    /// Per-iteration inequality on a noiseless run.
    Deterministic,
    /// Seed-averaged telescoped bound.
    Stochastic,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DescentReport {
    pub mode: DescentMode,
    pub seeds: usize,
    /// Per-iteration checks (deterministic mode; summed over seeds).
    pub checked: usize,
    pub violations: usize,
    pub worst_slack: f64,
    pub worst_t: Option<usize>,
    /// Deterministic: `min_t ‖∇f(x̄ᵗ)‖`; stochastic: seed-mean of the time average.
    pub measured: f64,
    /// `8Δ_Φ/(5ηT) + (6/5)ηL_f`.
    pub averaged_bound: f64,
    pub passed: bool,
}

impl fmt::Display for DescentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "descent ({:?}): {} (seeds {}, per-step checks {}, violations {}, worst slack {:.3e}; measured {:.6e} <= bound {:.6e})",
            self.mode,
            if self.passed { "PASS" } else { "FAIL" },
            self.seeds,
            self.checked,
            self.violations,
            self.worst_slack,
            self.measured,
            self.averaged_bound,
        )
    }
}

/// Checks the one-step descent inequality on the Lyapunov function.
///
/// Deterministic mode checks `Φᵗ⁺¹ ≤ Φᵗ − (5η/8)‖∇f(x̄ᵗ)‖ + (3/4)η²L_f` at
/// every step of every trajectory (tolerance [`DESCENT_TOLERANCE`]) and the
/// telescoped `min_t ‖∇f(x̄ᵗ)‖ ≤ 8Δ_Φ/(5ηT) + (6/5)ηL_f`. Stochastic mode
/// compares the seed mean of `(1/T)Σ_{t<T}‖∇f(x̄ᵗ)‖` against the same bound
/// with `Δ_Φ` the seed mean of `Φ⁰ − f*`.
pub fn verify_descent<T: Scalar>(
    trajs: &[Trajectory<T>],
    eta: T,
    l_f: T,
    f_star: T,
    mode: DescentMode,
) -> DescentReport {
    let eta = eta.to_f64_lossy();
    let l_f = l_f.to_f64_lossy();
    let f_star = f_star.to_f64_lossy();
    let mut report = DescentReport {
        mode,
        seeds: trajs.len(),
        checked: 0,
        violations: 0,
        worst_slack: f64::INFINITY,
        worst_t: None,
        measured: f64::NAN,
        averaged_bound: f64::NAN,
        passed: false,
    };
    let usable: Vec<&Trajectory<T>> = trajs.iter().filter(|t| t.rows.len() >= 2).collect();
    if usable.is_empty() {
        return report;
    }
    let big_t = usable.iter().map(|t| t.rows.len() - 1).min().unwrap_or(0);
    let delta_phi = usable
        .iter()
        .map(|t| t.rows[0].phi.to_f64_lossy() - f_star)
        .sum::<f64>()
        / usable.len() as f64;
    report.averaged_bound = 8.0 * delta_phi / (5.0 * eta * big_t as f64) + 1.2 * eta * l_f;
    match mode {
        DescentMode::Deterministic => {
            let mut min_grad = f64::INFINITY;
            let mut telescoped_ok = true;
            for traj in &usable {
                let rows = &traj.rows;
                let mut traj_min = f64::INFINITY;
                for w in rows.windows(2) {
                    let g = w[0].grad_norm_mean.to_f64_lossy();
                    traj_min = traj_min.min(g);
                    let rhs = w[0].phi.to_f64_lossy() - 0.625 * eta * g + 0.75 * eta * eta * l_f;
                    let slack = rhs - w[1].phi.to_f64_lossy();
                    report.checked += 1;
                    if slack < -DESCENT_TOLERANCE {
                        report.violations += 1;
                    }
                    if slack < report.worst_slack {
                        report.worst_slack = slack;
                        report.worst_t = Some(w[0].t);
                    }
                }
                let t_len = (rows.len() - 1) as f64;
                let own_bound = 8.0 * (rows[0].phi.to_f64_lossy() - f_star) / (5.0 * eta * t_len)
                    + 1.2 * eta * l_f;
                telescoped_ok &= traj_min <= own_bound + DESCENT_TOLERANCE;
                min_grad = min_grad.min(traj_min);
            }
            report.measured = min_grad;
            report.passed = report.violations == 0 && telescoped_ok;
        }
        DescentMode::Stochastic => {
            let mean = usable
                .iter()
                .map(|t| {
                    t.rows[..big_t]
                        .iter()
                        .map(|r| r.grad_norm_mean.to_f64_lossy())
                        .sum::<f64>()
                        / big_t as f64
                })
                .sum::<f64>()
                / usable.len() as f64;
            report.measured = mean;
            report.passed = mean <= report.averaged_bound;
        }
    }
    report
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StationaritySummary {
    pub min_grad_norm_mean: f64,
    pub argmin_t: usize,
    /// `(1/T)Σ_{t<T}‖∇f(x̄ᵗ)‖`; equals `E‖∇f(x̂)‖` for a uniform output index.
    pub mean_grad_norm: f64,
    /// Largest `‖∇f(x_i^{t̂_i})‖` over agents at their sampled output index.
    pub output_grad_norm_max: Option<f64>,
    /// Largest per-agent time average `(1/T)Σ_{t<T}‖∇f(x_iᵗ)‖`.
    pub agent_mean_grad_norm_max: f64,
    pub iterations: usize,
}

impl fmt::Display for StationaritySummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "stationarity: min_t |grad f(x_bar)| = {:.6e} at t = {}, time average = {:.6e}, per-agent average max = {:.6e}",
            self.min_grad_norm_mean, self.argmin_t, self.mean_grad_norm, self.agent_mean_grad_norm_max
        )?;
        if let Some(v) = self.output_grad_norm_max {
            write!(f, ", sampled-output max = {v:.6e}")?;
        }
        write!(f, " over {} iterations", self.iterations)
    }
}

pub fn stationarity_summary<T: Scalar>(traj: &Trajectory<T>) -> StationaritySummary {
    let (argmin_t, min_grad) = traj
        .rows
        .iter()
        .map(|r| (r.t, r.grad_norm_mean.to_f64_lossy()))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    let n = traj.iterations_run;
    let averaged: Vec<f64> = if n == 0 {
        traj.rows.iter().map(|r| r.grad_norm_mean.to_f64_lossy()).collect()
    } else {
        traj.rows[..n].iter().map(|r| r.grad_norm_mean.to_f64_lossy()).collect()
    };
    let mean = averaged.iter().sum::<f64>() / averaged.len().max(1) as f64;
    let outputs: Vec<f64> = traj
        .output_grad_norms
        .iter()
        .flatten()
        .map(|v| v.to_f64_lossy())
        .collect();
    StationaritySummary {
        min_grad_norm_mean: min_grad,
        argmin_t,
        mean_grad_norm: mean,
        output_grad_norm_max: (outputs.len() == traj.m && !outputs.is_empty())
            .then(|| outputs.iter().copied().fold(0.0, f64::max)),
        agent_mean_grad_norm_max: traj
            .agent_grad_norm_means
            .iter()
            .map(|v| v.to_f64_lossy())
            .fold(0.0, f64::max),
        iterations: n,
    }
}
