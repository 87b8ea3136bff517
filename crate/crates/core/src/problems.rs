//! Synthetic relaxed-smooth objectives with exact gradients, heterogeneity
//! offsets, and a Gaussian stochastic first-order oracle.
//!
//! Every local function is `f_i(x) = f_base(x) + ⟨b_i, x⟩` with `Σ_i b_i = 0`,
//! so the global objective `f = (1/m) Σ f_i` equals `f_base` and the gradient
//! dissimilarity `‖∇f_i − ∇f‖ = ‖b_i‖` is constant in `x`.

use std::f64::consts::LN_2;
use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::streams::{derive_stream, RngStreamKey, Stream, StreamPurpose};
use crate::linalg::AgentMatrix;
use crate::scalar::{dist, dot, norm, Scalar};

/// Largest `|L x_j|` the exponential family evaluates.
pub const EXP_SAFE_LIMIT: f64 = 700.0;
pub const DEFAULT_BOX_RADIUS: f64 = 5.0;
pub const DEFAULT_CERTIFY_TRIALS: usize = 2000;
/// Relative slack allowed on the smoothness inequality before a sampled pair
/// counts as a violation (absorbs rounding at the `‖x − y‖ = 1/L1` boundary).
pub const SMOOTHNESS_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyTag {
    ExpPair,
    PolyEven,
    Quadratic,
}

impl fmt::Display for FamilyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FamilyTag::ExpPair => "exp_pair",
            FamilyTag::PolyEven => "poly_even",
            FamilyTag::Quadratic => "quadratic",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Family<T> {
    /// `(1/d) Σ_j cosh(L x_j)`.
    ExpPair { l: T },
    /// `(a / 2q) Σ_j x_j^{2q}` with `power = 2q`.
    PolyEven { power: u32, scale: T },
    /// `(c/2) ‖x‖²`.
    Quadratic { curvature: T },
}

impl<T> Family<T> {
    pub fn tag(&self) -> FamilyTag {
        match self {
            Family::ExpPair { .. } => FamilyTag::ExpPair,
            Family::PolyEven { .. } => FamilyTag::PolyEven,
            Family::Quadratic { .. } => FamilyTag::Quadratic,
        }
    }
}

/// Knobs shared by all family constructors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProblemOptions {
    /// Certification box `‖x‖∞ ≤ box_radius`.
    pub box_radius: f64,
    pub certify_trials: usize,
}

impl Default for ProblemOptions {
    fn default() -> Self {
        Self {
            box_radius: DEFAULT_BOX_RADIUS,
            certify_trials: DEFAULT_CERTIFY_TRIALS,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProblemInstance<T> {
    family: Family<T>,
    d: usize,
    m: usize,
    l0: T,
    l1: T,
    zeta: T,
    sigma: T,
    offsets: AgentMatrix<T>,
    f_star: T,
    box_radius: T,
    certified_worst_ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleSample<T> {
    pub grad: Vec<T>,
    pub samples_used: usize,
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} = {v} must be finite and >= 0")))
    }
}

fn check_pos(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} = {v} must be finite and > 0")))
    }
}

fn check_shape(d: usize, m: usize) -> Result<()> {
    if d == 0 || m == 0 {
        return Err(Error::InvalidArgument(format!(
            "dimension d = {d} and agent count m = {m} must be >= 1"
        )));
    }
    Ok(())
}

/// Heterogeneity offsets: centered Gaussian rows rescaled so the largest row
/// norm is exactly `zeta`. Zero when `m = 1` or `zeta = 0`.
fn make_offsets<T: Scalar>(d: usize, m: usize, zeta: f64, seed: u64) -> AgentMatrix<T> {
    if m < 2 || zeta == 0.0 {
        return AgentMatrix::zeros(m, d);
    }
    let mut rng = derive_stream(RngStreamKey::new(seed, StreamPurpose::Offsets, 0, 0));
    let raw: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let mut mean = vec![0.0; d];
    for row in &raw {
        for (acc, v) in mean.iter_mut().zip(row) {
            *acc += v / m as f64;
        }
    }
    let centered: Vec<Vec<f64>> = raw
        .iter()
        .map(|row| row.iter().zip(&mean).map(|(v, mu)| v - mu).collect())
        .collect();
    let max_norm = centered.iter().map(|r| norm(r)).fold(0.0, f64::max);
    let scale = if max_norm > 0.0 { zeta / max_norm } else { 0.0 };
    let mut out = AgentMatrix::from_fn(m, d, |i, j| T::of(centered[i][j] * scale));
    // Force the column sums to vanish in the working precision: the last row
    // absorbs the rounding residue of the others.
    for j in 0..d {
        let partial: T = (0..m - 1).map(|i| out[(i, j)]).sum();
        out[(m - 1, j)] = -partial;
    }
    out
}

/// `l0` for `(a/2q) Σ x_j^{2q}` given `l1`: the per-coordinate gradient
/// `a s^p` (p = 2q − 1) changes by at most `a p (|s| + δ)^{p−1}` per unit step
/// inside `δ = 1/l1`, so `l0 = sup_{s ≥ 0} a p (s + δ)^{p−1} − l1 a s^p`.
/// The objective is unimodal in `s`; golden-section search finds the peak.
fn poly_l0(power: u32, scale: f64, l1: f64) -> f64 {
    let p = f64::from(power - 1);
    let delta = 1.0 / l1;
    let g = |s: f64| scale * p * (s + delta).powf(p - 1.0) - l1 * scale * s.powf(p);
    let dg = |s: f64| (p - 1.0) * (s + delta).powf(p - 2.0) - l1 * s.powf(p - 1.0);
    let mut hi = 1.0;
    while dg(hi) >= 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        if g(a) < g(b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    let peak = g(0.5 * (lo + hi)).max(g(0.0));
    peak * (1.0 + 1e-9)
}

impl<T: Scalar> ProblemInstance<T> {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        family: Family<T>,
        d: usize,
        m: usize,
        base_l0: f64,
        l1: f64,
        zeta: f64,
        sigma: f64,
        seed: u64,
        f_star: f64,
        opts: ProblemOptions,
    ) -> Result<Self> {
        check_shape(d, m)?;
        check_nonneg("zeta", zeta)?;
        check_nonneg("sigma", sigma)?;
        check_pos("box_radius", opts.box_radius)?;
        let offsets = make_offsets::<T>(d, m, zeta, seed);
        let max_offset = (0..m)
            .map(|i| norm(offsets.row(i)).to_f64_lossy())
            .fold(0.0, f64::max);
        // Linear offsets keep L1; the gradient-norm shift costs l1 · ‖b_i‖ in l0.
        let l0 = base_l0 + l1 * max_offset;
        let mut instance = Self {
            family,
            d,
            m,
            l0: T::of(l0),
            l1: T::of(l1),
            // The realized heterogeneity: `zeta` itself unless `m = 1`, where the
            // offsets must vanish.
            zeta: T::of(max_offset),
            sigma: T::of(sigma),
            offsets,
            f_star: T::of(f_star),
            box_radius: T::of(opts.box_radius),
            certified_worst_ratio: 0.0,
        };
        instance.certify(seed, opts)?;
        Ok(instance)
    }

    fn certify(&mut self, seed: u64, opts: ProblemOptions) -> Result<()> {
        if opts.certify_trials == 0 {
            return Ok(());
        }
        let mut region = opts.box_radius;
        if let Family::ExpPair { l } = self.family {
            let l = l.to_f64_lossy();
            let reach = 1.0 / self.l1.to_f64_lossy();
            region = region.min(EXP_SAFE_LIMIT / l - reach).max(0.0);
        }
        let mut worst = 0.0f64;
        for i in 0..self.m {
            let field = LocalGradient {
                problem: self,
                agent: i,
            };
            let report = check_relaxed_smooth(
                &field,
                self.l0,
                self.l1,
                T::of(region),
                opts.certify_trials,
                seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            )?;
            if !report.passed {
                return Err(Error::InvalidArgument(format!(
                    "agent {i} failed (l0, l1) = ({}, {}) certification: worst ratio {:.6}",
                    self.l0, self.l1, report.worst_ratio
                )));
            }
            worst = worst.max(report.worst_ratio);
        }
        self.certified_worst_ratio = worst;
        Ok(())
    }

    pub fn family(&self) -> Family<T> {
        self.family
    }
    pub fn d(&self) -> usize {
        self.d
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn l0(&self) -> T {
        self.l0
    }
    pub fn l1(&self) -> T {
        self.l1
    }
    pub fn zeta(&self) -> T {
        self.zeta
    }
    pub fn sigma(&self) -> T {
        self.sigma
    }
    pub fn offsets(&self) -> &AgentMatrix<T> {
        &self.offsets
    }
    /// Infimum of the global objective.
    pub fn f_star(&self) -> T {
        self.f_star
    }
    pub fn box_radius(&self) -> T {
        self.box_radius
    }
    /// Worst ratio seen while certifying `(l0, l1)` at construction.
    pub fn certified_worst_ratio(&self) -> f64 {
        self.certified_worst_ratio
    }

    /// `L_f = l0 + l1 ζ`.
    pub fn l_f(&self) -> T {
        lf_effective(self.l0, self.l1, self.zeta)
    }

    /// Largest offset norm, i.e. the exact dissimilarity constant.
    pub fn max_offset_norm(&self) -> T {
        (0..self.m)
            .map(|i| norm(self.offsets.row(i)))
            .fold(T::zero(), T::max)
    }

    pub fn outside_box(&self, x: &[T]) -> bool {
        x.iter().any(|v| v.abs() > self.box_radius)
    }

    fn check_point(&self, x: &[T]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: format!("point of dimension {}", self.d),
                got: format!("dimension {}", x.len()),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "objective argument".into(),
            });
        }
        if let Family::ExpPair { l } = self.family {
            if let Some(v) = x.iter().map(|&v| (l * v).abs()).find(|a| a.to_f64_lossy() > EXP_SAFE_LIMIT) {
                return Err(Error::OutOfSafeRange {
                    value: v.to_f64_lossy(),
                    limit: EXP_SAFE_LIMIT,
                });
            }
        }
        Ok(())
    }

    fn check_agent(&self, i: usize) -> Result<()> {
        if i < self.m {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "agent index {i} out of range for m = {}",
                self.m
            )))
        }
    }

    /// Global objective `f(x) = f_base(x)`.
    pub fn value(&self, x: &[T]) -> Result<T> {
        self.check_point(x)?;
        let d = T::of_usize(self.d);
        Ok(match self.family {
            Family::ExpPair { l } => x.iter().map(|&v| (l * v).cosh()).sum::<T>() / d,
            Family::PolyEven { power, scale } => {
                scale / T::of(f64::from(power))
                    * x.iter().map(|&v| v.powi(power as i32)).sum::<T>()
            }
            Family::Quadratic { curvature } => curvature * T::of(0.5) * dot(x, x),
        })
    }

    /// Exact gradient of the global objective.
    pub fn grad(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_point(x)?;
        let d = T::of_usize(self.d);
        Ok(match self.family {
            Family::ExpPair { l } => x.iter().map(|&v| l * (l * v).sinh() / d).collect(),
            Family::PolyEven { power, scale } => {
                x.iter().map(|&v| scale * v.powi(power as i32 - 1)).collect()
            }
            Family::Quadratic { curvature } => x.iter().map(|&v| curvature * v).collect(),
        })
    }

    pub fn value_local(&self, i: usize, x: &[T]) -> Result<T> {
        self.check_agent(i)?;
        Ok(self.value(x)? + dot(self.offsets.row(i), x))
    }

    /// Exact gradient of `f_i`.
    pub fn grad_local(&self, i: usize, x: &[T]) -> Result<Vec<T>> {
        self.check_agent(i)?;
        let mut g = self.grad(x)?;
        for (gj, &bj) in g.iter_mut().zip(self.offsets.row(i)) {
            *gj = *gj + bj;
        }
        Ok(g)
    }

    /// Infimum of the local function `f_i`, where it has a closed form.
    pub fn local_infimum(&self, i: usize) -> Option<T> {
        let b = self.offsets.row(i);
        match self.family {
            Family::Quadratic { curvature } => {
                Some(-dot(b, b) / (T::of(2.0) * curvature))
            }
            _ if norm(b) == T::zero() => Some(self.f_star),
            _ => None,
        }
    }

    /// Minibatch stochastic gradient at agent `i`.
    ///
    /// The noise is the average of `b` spherical Gaussians of total variance
    /// `σ²`; that average is itself Gaussian with per-coordinate variance
    /// `σ² / (d b)` and is drawn directly in that form.
    pub fn sample_grad(
        &self,
        i: usize,
        x: &[T],
        b: usize,
        stream: &mut Stream,
    ) -> Result<OracleSample<T>> {
        if b == 0 {
            return Err(Error::InvalidArgument("batch size b must be >= 1".into()));
        }
        let mut grad = self.grad_local(i, x)?;
        if self.sigma > T::zero() {
            let sd = self.sigma / (T::of_usize(self.d) * T::of_usize(b)).sqrt();
            for gj in grad.iter_mut() {
                let z: f64 = stream.sample(StandardNormal);
                *gj = *gj + sd * T::of(z);
            }
        }
        Ok(OracleSample {
            grad,
            samples_used: b,
        })
    }
}

pub fn make_exp_pair<T: Scalar>(
    d: usize,
    l: f64,
    m: usize,
    zeta: f64,
    sigma: f64,
    seed: u64,
) -> Result<ProblemInstance<T>> {
    make_exp_pair_with(d, l, m, zeta, sigma, seed, ProblemOptions::default())
}

/// Exponential pair family. `l1 = L / ln 2`; each coordinate of the gradient
/// obeys `|Δg_j| ≤ l1 (L/d) cosh(L x_j) |Δx_j| ≤ (l1 L/d + l1 |g_j|) |Δx_j|`,
/// which gives the closed-form `l0 = L² / (d ln 2)` before the offset shift.
pub fn make_exp_pair_with<T: Scalar>(
    d: usize,
    l: f64,
    m: usize,
    zeta: f64,
    sigma: f64,
    seed: u64,
    opts: ProblemOptions,
) -> Result<ProblemInstance<T>> {
    check_shape(d, m)?;
    check_pos("L", l)?;
    let l1 = l / LN_2;
    let base_l0 = l * l1 / d as f64;
    ProblemInstance::assemble(
        Family::ExpPair { l: T::of(l) },
        d,
        m,
        base_l0,
        l1,
        zeta,
        sigma,
        seed,
        1.0,
        opts,
    )
}

/// Relaxed-smoothness `l1` used for the even-polynomial family.
pub const POLY_L1: f64 = 1.0;

#[allow(clippy::too_many_arguments)]
pub fn make_poly_even<T: Scalar>(
    d: usize,
    power: u32,
    scale: f64,
    m: usize,
    zeta: f64,
    sigma: f64,
    seed: u64,
) -> Result<ProblemInstance<T>> {
    make_poly_even_with(d, power, scale, m, zeta, sigma, seed, ProblemOptions::default())
}

#[allow(clippy::too_many_arguments)]
pub fn make_poly_even_with<T: Scalar>(
    d: usize,
    power: u32,
    scale: f64,
    m: usize,
    zeta: f64,
    sigma: f64,
    seed: u64,
    opts: ProblemOptions,
) -> Result<ProblemInstance<T>> {
    check_shape(d, m)?;
    if power < 4 || power % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "power = {power} must be even and >= 4"
        )));
    }
    check_pos("scale", scale)?;
    let base_l0 = poly_l0(power, scale, POLY_L1);
    ProblemInstance::assemble(
        Family::PolyEven {
            power,
            scale: T::of(scale),
        },
        d,
        m,
        base_l0,
        POLY_L1,
        zeta,
        sigma,
        seed,
        0.0,
        opts,
    )
}

pub fn make_quadratic<T: Scalar>(
    d: usize,
    curvature: f64,
    m: usize,
    zeta: f64,
    sigma: f64,
    seed: u64,
) -> Result<ProblemInstance<T>> {
    make_quadratic_with(d, curvature, m, zeta, sigma, seed, ProblemOptions::default())
}

pub fn make_quadratic_with<T: Scalar>(
    d: usize,
    curvature: f64,
    m: usize,
    zeta: f64,
    sigma: f64,
    seed: u64,
    opts: ProblemOptions,
) -> Result<ProblemInstance<T>> {
    check_shape(d, m)?;
    check_pos("curvature", curvature)?;
    ProblemInstance::assemble(
        Family::Quadratic {
            curvature: T::of(curvature),
        },
        d,
        m,
        curvature,
        0.0,
        zeta,
        sigma,
        seed,
        0.0,
        opts,
    )
}

/// `L_f = L0 + L1 ζ`.
pub fn lf_effective<T: Scalar>(l0: T, l1: T, zeta: T) -> T {
    l0 + l1 * zeta
}

/// Something with a gradient that can be tested for relaxed smoothness.
pub trait GradientField<T> {
    fn dim(&self) -> usize;
    fn gradient(&self, x: &[T]) -> Result<Vec<T>>;
}

/// Gradient of one agent's local function.
pub struct LocalGradient<'a, T> {
    pub problem: &'a ProblemInstance<T>,
    pub agent: usize,
}

impl<T: Scalar> GradientField<T> for LocalGradient<'_, T> {
    fn dim(&self) -> usize {
        self.problem.d()
    }
    fn gradient(&self, x: &[T]) -> Result<Vec<T>> {
        self.problem.grad_local(self.agent, x)
    }
}

/// Gradient of the global objective.
pub struct GlobalGradient<'a, T>(pub &'a ProblemInstance<T>);

impl<T: Scalar> GradientField<T> for GlobalGradient<'_, T> {
    fn dim(&self) -> usize {
        self.0.d()
    }
    fn gradient(&self, x: &[T]) -> Result<Vec<T>> {
        self.0.grad(x)
    }
}

/// A gradient given by a closure.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<T, F> GradientField<T> for FnField<F>
where
    F: Fn(&[T]) -> Vec<T>,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn gradient(&self, x: &[T]) -> Result<Vec<T>> {
        Ok((self.f)(x))
    }
}

/// The one-dimensional functions `exp(Lx)`, `exp(−Lx)`, and their average.
pub mod prop4 {
    use super::FnField;
    use crate::scalar::Scalar;

    pub fn l1_for(l: f64) -> f64 {
        l / std::f64::consts::LN_2
    }

    pub fn growing<T: Scalar>(l: f64) -> FnField<impl Fn(&[T]) -> Vec<T>> {
        let l = T::of(l);
        FnField::new(1, move |x: &[T]| vec![l * (l * x[0]).exp()])
    }

    pub fn decaying<T: Scalar>(l: f64) -> FnField<impl Fn(&[T]) -> Vec<T>> {
        let l = T::of(l);
        FnField::new(1, move |x: &[T]| vec![-l * (-l * x[0]).exp()])
    }

    pub fn average<T: Scalar>(l: f64) -> FnField<impl Fn(&[T]) -> Vec<T>> {
        let l = T::of(l);
        FnField::new(1, move |x: &[T]| {
            vec![l * ((l * x[0]).exp() - (-l * x[0]).exp()) * T::of(0.5)]
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairCheck<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
    /// `‖∇f(x) − ∇f(y)‖`.
    pub grad_gap: T,
    /// `(l0 + l1 ‖∇f(x)‖) ‖x − y‖`.
    pub bound: T,
    /// `grad_gap / bound`, `+∞` when the bound is zero but the gap is not.
    pub ratio: f64,
}

impl<T: Scalar> PairCheck<T> {
    pub fn violated(&self) -> bool {
        self.ratio > 1.0 + SMOOTHNESS_SLACK.max(1e3 * T::epsilon().to_f64_lossy())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmoothnessReport<T> {
    pub passed: bool,
    pub trials: usize,
    pub violations: usize,
    pub worst_ratio: f64,
    /// Pair attaining the worst ratio.
    pub witness: Option<PairCheck<T>>,
}

pub fn check_pair<T: Scalar>(
    f: &dyn GradientField<T>,
    x: &[T],
    y: &[T],
    l0: T,
    l1: T,
) -> Result<PairCheck<T>> {
    let gx = f.gradient(x)?;
    let gy = f.gradient(y)?;
    let grad_gap = dist(&gx, &gy);
    let bound = (l0 + l1 * norm(&gx)) * dist(x, y);
    let ratio = if bound > T::zero() {
        (grad_gap / bound).to_f64_lossy()
    } else if grad_gap > T::zero() {
        f64::INFINITY
    } else {
        0.0
    };
    Ok(PairCheck {
        x: x.to_vec(),
        y: y.to_vec(),
        grad_gap,
        bound,
        ratio,
    })
}

/// Sample pairs `x` in the box `‖x‖∞ ≤ region`, `y` at distance at most
/// `1/l1` (anywhere in the box when `l1 = 0`), and test
/// `‖∇f(x) − ∇f(y)‖ ≤ (l0 + l1 ‖∇f(x)‖) ‖x − y‖`.
pub fn check_relaxed_smooth<T: Scalar>(
    f: &dyn GradientField<T>,
    l0: T,
    l1: T,
    region: T,
    trials: usize,
    seed: u64,
) -> Result<SmoothnessReport<T>> {
    check_relaxed_smooth_with_witnesses(f, l0, l1, region, trials, seed, &[])
}

/// As [`check_relaxed_smooth`], additionally evaluating the given pairs.
pub fn check_relaxed_smooth_with_witnesses<T: Scalar>(
    f: &dyn GradientField<T>,
    l0: T,
    l1: T,
    region: T,
    trials: usize,
    seed: u64,
    forced: &[(Vec<T>, Vec<T>)],
) -> Result<SmoothnessReport<T>> {
    if trials == 0 && forced.is_empty() {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    let d = f.dim();
    let r = region.to_f64_lossy();
    let reach = if l1 > T::zero() {
        1.0 / l1.to_f64_lossy()
    } else {
        2.0 * r * (d as f64).sqrt()
    };
    let mut rng = derive_stream(RngStreamKey::new(seed, StreamPurpose::Certification, 0, 0));
    let mut violations = 0;
    let mut worst: Option<PairCheck<T>> = None;
    let mut consider = |check: PairCheck<T>, violations: &mut usize| {
        if check.violated() {
            *violations += 1;
        }
        if worst.as_ref().is_none_or(|w| check.ratio > w.ratio) {
            worst = Some(check);
        }
    };
    for (x, y) in forced {
        let check = check_pair(f, x, y, l0, l1)?;
        consider(check, &mut violations);
    }
    for _ in 0..trials {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-r..=r)).collect();
        let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let dn = norm(&dir).max(f64::MIN_POSITIVE);
        let step = reach * (1.0 - rng.random::<f64>());
        let y: Vec<f64> = x
            .iter()
            .zip(&dir)
            .map(|(xi, di)| (xi + step * di / dn).clamp(-r, r))
            .collect();
        let xt: Vec<T> = x.iter().map(|&v| T::of(v)).collect();
        let yt: Vec<T> = y.iter().map(|&v| T::of(v)).collect();
        let check = check_pair(f, &xt, &yt, l0, l1)?;
        consider(check, &mut violations);
    }
    let worst_ratio = worst.as_ref().map_or(0.0, |w| w.ratio);
    Ok(SmoothnessReport {
        passed: violations == 0,
        trials: trials + forced.len(),
        violations,
        worst_ratio,
        witness: worst,
    })
}

/// Largest observed `‖∇f_i(x) − ∇f(x)‖` over sampled points in the box and
/// all agents, with `∇f` formed as the average of the local gradients.
pub fn dissimilarity_measured<T: Scalar>(
    p: &ProblemInstance<T>,
    trials: usize,
    seed: u64,
) -> Result<T> {
    let mut rng = derive_stream(RngStreamKey::new(seed, StreamPurpose::Certification, 1, 0));
    let r = p.box_radius().to_f64_lossy();
    let mut worst = T::zero();
    for _ in 0..trials.max(1) {
        let x: Vec<T> = (0..p.d()).map(|_| T::of(rng.random_range(-r..=r))).collect();
        let locals: Vec<Vec<T>> = (0..p.m())
            .map(|i| p.grad_local(i, &x))
            .collect::<Result<_>>()?;
        let mean = AgentMatrix::from_rows(&locals)?.column_mean();
        for g in &locals {
            worst = worst.max(dist(g, &mean));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_pair_symmetry_at_origin() {
        let p = make_exp_pair::<f64>(1, 1.0, 1, 0.0, 0.0, 0).unwrap();
        assert_eq!(p.value(&[0.0]).unwrap(), 1.0);
        assert_eq!(p.grad_local(0, &[0.0]).unwrap(), vec![0.0]);
        assert_eq!(p.f_star(), 1.0);
    }

    #[test]
    fn exp_pair_gradient_at_log_two() {
        let p = make_exp_pair::<f64>(1, 1.0, 1, 0.0, 0.0, 0).unwrap();
        let g = p.grad(&[LN_2]).unwrap()[0];
        assert!((g - 0.75).abs() < 1e-15);
        assert!((p.l1() - 1.0 / LN_2).abs() < 1e-15);
    }

    #[test]
    fn exp_pair_offsets_set_dissimilarity() {
        let p = make_exp_pair::<f64>(3, 1.0, 4, 0.5, 0.0, 9).unwrap();
        assert!((p.max_offset_norm() - 0.5).abs() < 1e-12);
        let x = [0.3, -1.2, 2.0];
        let g = p.grad(&x).unwrap();
        let worst = (0..4)
            .map(|i| dist(&p.grad_local(i, &x).unwrap(), &g))
            .fold(0.0, f64::max);
        assert!((worst - 0.5).abs() < 1e-12);
    }

    #[test]
    fn offsets_sum_to_zero() {
        let p = make_quadratic::<f64>(5, 1.0, 7, 2.0, 0.0, 3).unwrap();
        for (j, s) in p.offsets().column_mean().iter().enumerate() {
            assert!(s.abs() < 1e-15, "column {j}: {s}");
        }
        for i in 0..7 {
            assert!(norm(p.offsets().row(i)) <= 2.0 + 1e-12);
        }
    }

    #[test]
    fn single_agent_has_no_offsets() {
        let p = make_exp_pair::<f64>(2, 1.0, 1, 0.7, 0.0, 1).unwrap();
        assert_eq!(p.max_offset_norm(), 0.0);
    }

    #[test]
    fn poly_monomial_gradient() {
        let p = make_poly_even::<f64>(1, 4, 1.0, 1, 0.0, 0.0, 0).unwrap();
        assert_eq!(p.grad(&[2.0]).unwrap(), vec![8.0]);
        assert_eq!(p.f_star(), 0.0);
        assert_eq!(p.value(&[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn poly_l0_for_cubic_gradient() {
        // sup_s 3(s+1)^2 - s^3 is attained at s = 1 + √3.
        let s = 1.0 + 3f64.sqrt();
        let expected = 3.0 * (s + 1.0).powi(2) - s.powi(3);
        assert!((poly_l0(4, 1.0, 1.0) / expected - 1.0).abs() < 1e-8);
    }

    #[test]
    fn poly_rejects_odd_or_small_power() {
        assert!(make_poly_even::<f64>(1, 3, 1.0, 1, 0.0, 0.0, 0).is_err());
        assert!(make_poly_even::<f64>(1, 2, 1.0, 1, 0.0, 0.0, 0).is_err());
    }

    #[test]
    fn quadratic_constants() {
        let p = make_quadratic::<f64>(2, 2.0, 1, 0.0, 0.0, 0).unwrap();
        assert_eq!(p.grad_local(0, &[1.0, -1.0]).unwrap(), vec![2.0, -2.0]);
        assert_eq!(p.l0(), 2.0);
        assert_eq!(p.l1(), 0.0);
    }

    #[test]
    fn exp_guard_rejects_large_arguments() {
        let p = make_exp_pair::<f64>(1, 2.0, 1, 0.0, 0.0, 0).unwrap();
        assert!(matches!(
            p.grad(&[400.0]),
            Err(Error::OutOfSafeRange { .. })
        ));
    }

    #[test]
    fn zero_sigma_oracle_is_exact() {
        let p = make_exp_pair::<f64>(3, 1.0, 2, 0.3, 0.0, 4).unwrap();
        let x = [0.1, 0.2, -0.3];
        let mut s = derive_stream(RngStreamKey::new(0, StreamPurpose::Oracle, 0, 0));
        for b in [1, 10, 1000] {
            let o = p.sample_grad(1, &x, b, &mut s).unwrap();
            assert_eq!(o.grad, p.grad_local(1, &x).unwrap());
            assert_eq!(o.samples_used, b);
        }
        assert!(p.sample_grad(1, &x, 0, &mut s).is_err());
    }

    #[test]
    fn bad_agent_or_dimension() {
        let p = make_quadratic::<f64>(2, 1.0, 3, 0.0, 0.0, 0).unwrap();
        assert!(p.grad_local(3, &[0.0, 0.0]).is_err());
        assert!(p.grad_local(0, &[0.0]).is_err());
        assert!(p.grad_local(0, &[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn lf_examples() {
        assert_eq!(lf_effective(1.0, 0.0, 5.0), 1.0);
        assert_eq!(lf_effective(0.0, 2.0, 0.5), 1.0);
        assert_eq!(lf_effective(3.0, 1.0, 2.0), 5.0);
    }

    #[test]
    fn quadratic_is_exactly_smooth() {
        let p = make_quadratic::<f64>(3, 2.5, 1, 0.0, 0.0, 0).unwrap();
        let r = check_relaxed_smooth(&GlobalGradient(&p), 2.5, 0.0, 5.0, 500, 1).unwrap();
        assert!(r.passed);
        assert!(r.worst_ratio <= 1.0 + 1e-12);
    }

    #[test]
    fn average_of_exponentials_violates_at_witness() {
        for l in [0.5, 1.0, 3.0] {
            let l1 = prop4::l1_for(l);
            let f = prop4::average::<f64>(l);
            let check = check_pair(&f, &[0.0], &[LN_2 / l], 0.0, l1).unwrap();
            assert!((check.grad_gap / (0.75 * l) - 1.0).abs() < 1e-12);
            assert_eq!(check.bound, 0.0);
            assert!(check.violated());
        }
    }

    #[test]
    fn single_exponentials_certify() {
        let l = 1.0;
        let l1 = prop4::l1_for(l);
        let r = check_relaxed_smooth(&prop4::growing::<f64>(l), 0.0, l1, 5.0, 2000, 3).unwrap();
        assert!(r.passed, "worst {}", r.worst_ratio);
        let r = check_relaxed_smooth(&prop4::decaying::<f64>(l), 0.0, l1, 5.0, 2000, 4).unwrap();
        assert!(r.passed, "worst {}", r.worst_ratio);
    }

    #[test]
    fn dissimilarity_matches_offsets() {
        let p = make_poly_even::<f64>(4, 4, 0.5, 5, 0.8, 0.0, 2).unwrap();
        let measured = dissimilarity_measured(&p, 50, 1).unwrap();
        assert!((measured - p.max_offset_norm()).abs() < 1e-9);
        assert!(measured <= p.zeta() + 1e-12);
        let p = make_poly_even::<f64>(4, 4, 0.5, 5, 0.0, 0.0, 2).unwrap();
        assert!(dissimilarity_measured(&p, 10, 1).unwrap() < 1e-12);
    }

    #[test]
    fn quadratic_local_infimum_closed_form() {
        let p = make_quadratic::<f64>(2, 2.0, 3, 1.0, 0.0, 5).unwrap();
        for i in 0..3 {
            let b = p.offsets().row(i).to_vec();
            let xstar: Vec<f64> = b.iter().map(|v| -v / 2.0).collect();
            let v = p.value_local(i, &xstar).unwrap();
            assert!((v - p.local_infimum(i).unwrap()).abs() < 1e-14);
        }
    }
}
