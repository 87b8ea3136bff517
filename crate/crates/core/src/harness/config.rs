//! TOML run configuration and its resolution into concrete objects.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{min_k_for_guard, theorem1_params, TheoreticalParams, TheoryInputs, DEFAULT_C_K};
use crate::error::{Error, Result};
use crate::optimizers::{Algorithm, HyperParams, NasaSchedule, RunOptions, DEFAULT_SNAPSHOT_EVERY};
use crate::problems::{
    make_exp_pair_with, make_poly_even_with, make_quadratic_with, FamilyTag, ProblemInstance,
    ProblemOptions, DEFAULT_BOX_RADIUS, DEFAULT_CERTIFY_TRIALS,
};
use crate::scalar::norm;
use crate::topology::{build_topology, metropolis_mixing, Graph, MixingMatrix, TopologyTag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub family: FamilyTag,
    pub d: usize,
    pub m: usize,
    #[serde(default)]
    pub zeta: f64,
    #[serde(default)]
    pub sigma: f64,
    /// `L` of the exponential family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curvature: Option<f64>,
    /// Seed for the heterogeneity offsets; defaults to the master seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_box_radius")]
    pub box_radius: f64,
    #[serde(default = "default_certify_trials")]
    pub certify_trials: usize,
}

fn default_box_radius() -> f64 {
    DEFAULT_BOX_RADIUS
}

fn default_certify_trials() -> usize {
    DEFAULT_CERTIFY_TRIALS
}

impl ProblemConfig {
    pub fn build(&self, master_seed: u64) -> Result<ProblemInstance<f64>> {
        let seed = self.seed.unwrap_or(master_seed);
        let opts = ProblemOptions {
            box_radius: self.box_radius,
            certify_trials: self.certify_trials,
        };
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::Config(format!("problem.{name} is required for family {}", self.family)))
        };
        match self.family {
            FamilyTag::ExpPair => make_exp_pair_with(
                self.d,
                need(self.l, "l")?,
                self.m,
                self.zeta,
                self.sigma,
                seed,
                opts,
            ),
            FamilyTag::PolyEven => make_poly_even_with(
                self.d,
                self.power
                    .ok_or_else(|| Error::Config("problem.power is required for family poly_even".into()))?,
                need(self.scale, "scale")?,
                self.m,
                self.zeta,
                self.sigma,
                seed,
                opts,
            ),
            FamilyTag::Quadratic => make_quadratic_with(
                self.d,
                need(self.curvature, "curvature")?,
                self.m,
                self.zeta,
                self.sigma,
                seed,
                opts,
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub kind: TopologyTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl TopologyConfig {
    pub fn build(&self, m: usize, master_seed: u64) -> Result<(Graph, MixingMatrix<f64>)> {
        let g = build_topology(self.kind, m, self.p, self.seed.unwrap_or(master_seed))?;
        let w = metropolis_mixing(&g)?;
        Ok((g, w))
    }
}

/// How `K` is picked when hyperparameters are derived automatically.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KRule {
    /// `⌈C_K log(max(m,2))/√γ⌉`.
    #[default]
    Formula,
    /// Smallest `K` passing the ρ-guard (never below the formula value).
    Guard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum HyperConfig {
    Auto {
        epsilon: f64,
        #[serde(default = "default_c_k")]
        c_k: f64,
        #[serde(default)]
        k_rule: KRule,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_iters: Option<usize>,
    },
    Manual {
        eta: f64,
        b: usize,
        big_t: usize,
        k_inner: usize,
        k_init: usize,
        epsilon: f64,
    },
}

fn default_c_k() -> f64 {
    DEFAULT_C_K
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub m_list: Vec<usize>,
    pub target_epsilon: f64,
    /// Iteration cap per run.
    pub max_iters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub topology: TopologyConfig,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    pub hyper: HyperConfig,
    /// Starting point; defaults to `x0_fill` in every coordinate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default = "default_x0_fill")]
    pub x0_fill: f64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_num_seeds")]
    pub num_seeds: usize,
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: usize,
    #[serde(default)]
    pub nasa_schedule: NasaSchedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_at_grad_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

fn default_algorithm() -> Algorithm {
    Algorithm::Dnsgd
}
fn default_x0_fill() -> f64 {
    1.0
}
fn default_num_seeds() -> usize {
    1
}
fn default_snapshot_every() -> usize {
    DEFAULT_SNAPSHOT_EVERY
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_seeds == 0 {
            return Err(Error::Config("num_seeds must be >= 1".into()));
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != self.problem.d {
                return Err(Error::Config(format!(
                    "x0 has {} entries but problem.d = {}",
                    x0.len(),
                    self.problem.d
                )));
            }
        }
        match &self.hyper {
            HyperConfig::Auto { epsilon, c_k, .. } => {
                if !(*epsilon > 0.0) {
                    return Err(Error::Config("hyper.epsilon must be > 0".into()));
                }
                if !(*c_k > 0.0) {
                    return Err(Error::Config("hyper.c_k must be > 0".into()));
                }
            }
            HyperConfig::Manual { eta, b, big_t: _, k_inner, k_init, epsilon } => {
                HyperParams {
                    eta: *eta,
                    b: *b,
                    big_t: 0,
                    k_inner: *k_inner,
                    k_init: *k_init,
                    epsilon: *epsilon,
                }
                .validate()
                .map_err(|e| Error::Config(format!("hyper: {e}")))?;
            }
        }
        if let Some(s) = &self.sweep {
            if s.m_list.is_empty() || s.m_list.contains(&0) {
                return Err(Error::Config("sweep.m_list must be non-empty with m >= 1".into()));
            }
            if !(s.target_epsilon > 0.0) {
                return Err(Error::Config("sweep.target_epsilon must be > 0".into()));
            }
        }
        Ok(())
    }

    pub fn x0(&self) -> Vec<f64> {
        self.x0
            .clone()
            .unwrap_or_else(|| vec![self.x0_fill; self.problem.d])
    }

    pub fn run_options(&self) -> RunOptions<f64> {
        RunOptions {
            snapshot_every: self.snapshot_every,
            stop_at_grad_norm: self.stop_at_grad_norm,
            nasa_schedule: self.nasa_schedule,
        }
    }

    /// Build problem, topology and hyperparameters.
    pub fn prepare(&self) -> Result<Prepared> {
        let problem = self.problem.build(self.master_seed)?;
        let (graph, mixing) = self.topology.build(self.problem.m, self.master_seed)?;
        let x0 = self.x0();
        let (hp, theory) = resolve_hyper(&self.hyper, &problem, &mixing, &x0)?;
        Ok(Prepared {
            problem,
            graph,
            mixing,
            hp,
            theory,
            x0,
        })
    }
}

/// A configuration resolved into concrete objects.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub problem: ProblemInstance<f64>,
    pub graph: Graph,
    pub mixing: MixingMatrix<f64>,
    pub hp: HyperParams<f64>,
    pub theory: Option<TheoreticalParams<f64>>,
    pub x0: Vec<f64>,
}

/// Inputs to the theoretical settings for a concrete problem and start point.
pub fn theory_inputs(
    p: &ProblemInstance<f64>,
    w: &MixingMatrix<f64>,
    x0: &[f64],
    epsilon: f64,
    c_k: f64,
    max_iters: Option<usize>,
) -> Result<TheoryInputs> {
    let delta_f = p.value(x0)? - p.f_star();
    let mut init_grad_sq_sum = 0.0;
    for i in 0..p.m() {
        let g = norm(&p.grad_local(i, x0)?);
        init_grad_sq_sum += g * g;
    }
    let mut inp = TheoryInputs::new(epsilon, p.l0(), p.l1(), p.zeta(), p.sigma(), p.m(), w.gamma(), delta_f);
    inp.init_grad_sq_sum = init_grad_sq_sum;
    inp.c_k = c_k;
    inp.max_iters = max_iters;
    Ok(inp)
}

pub fn resolve_hyper(
    hyper: &HyperConfig,
    p: &ProblemInstance<f64>,
    w: &MixingMatrix<f64>,
    x0: &[f64],
) -> Result<(HyperParams<f64>, Option<TheoreticalParams<f64>>)> {
    match *hyper {
        HyperConfig::Manual {
            eta,
            b,
            big_t,
            k_inner,
            k_init,
            epsilon,
        } => {
            let hp = HyperParams {
                eta,
                b,
                big_t,
                k_inner,
                k_init,
                epsilon,
            };
            hp.validate()?;
            Ok((hp, None))
        }
        HyperConfig::Auto {
            epsilon,
            c_k,
            k_rule,
            max_iters,
        } => {
            let inp = theory_inputs(p, w, x0, epsilon, c_k, max_iters)?;
            let mut tp = theorem1_params::<f64>(&inp)?;
            if k_rule == KRule::Guard {
                if let Some(k) = min_k_for_guard(&inp.guard_inputs(), tp.hp.eta, tp.hp.b)? {
                    if k > tp.hp.k_inner {
                        tp = with_k(&inp, k)?;
                    }
                }
            }
            Ok((tp.hp, Some(tp)))
        }
    }
}

/// Theoretical parameters with `K` forced to `k`.
fn with_k(inp: &TheoryInputs, k: usize) -> Result<TheoreticalParams<f64>> {
    let base = theorem1_params::<f64>(inp)?;
    let guard = crate::analysis::rho_guard(&inp.guard_inputs(), base.hp.eta, base.hp.b, k)?;
    let (m2, m3) = crate::analysis::lemma3_constants(guard.rho, base.l_f, inp.l1, base.hp.eta);
    Ok(TheoreticalParams {
        hp: HyperParams { k_inner: k, ..base.hp },
        m2,
        m3,
        rho: guard.rho,
        rho_required: guard.rho_required,
        guard,
        ..base
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
master_seed = 3
num_seeds = 2
x0_fill = 1.5

[problem]
family = "quadratic"
d = 3
m = 4
zeta = 0.5
curvature = 1.0

[topology]
kind = "ring"

[hyper]
mode = "auto"
epsilon = 0.5
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = RunConfig::from_toml_str(SAMPLE).unwrap();
        assert_eq!(cfg.problem.m, 4);
        assert_eq!(cfg.x0(), vec![1.5; 3]);
        let again = RunConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn unknown_field_is_reported() {
        let bad = SAMPLE.replace("curvature = 1.0", "curvature = 1.0\ncurvatur = 2.0");
        let err = RunConfig::from_toml_str(&bad).unwrap_err().to_string();
        assert!(err.contains("curvatur"), "{err}");
    }

    #[test]
    fn zero_seeds_rejected() {
        let bad = SAMPLE.replace("num_seeds = 2", "num_seeds = 0");
        assert!(RunConfig::from_toml_str(&bad).is_err());
    }

    #[test]
    fn guard_rule_raises_k() {
        let cfg = RunConfig::from_toml_str(&SAMPLE.replace("epsilon = 0.5", "epsilon = 0.5\nk_rule = \"guard\"")).unwrap();
        let prep = cfg.prepare().unwrap();
        let tp = prep.theory.unwrap();
        assert!(tp.guard.passed);
        assert_eq!(tp.hp.k_inner, prep.hp.k_inner);
    }
}
