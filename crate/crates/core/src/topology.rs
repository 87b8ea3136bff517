//! Network graphs and mixing matrices.
//!
//! Mixing matrices use lazy Metropolis weights, `W = (I + W_metropolis) / 2`.
//! Plain Metropolis weights are doubly stochastic but may have negative
//! eigenvalues; the lazy transform maps the spectrum into `[0, 1]`.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::streams::{derive_stream, RngStreamKey, StreamPurpose};
use crate::linalg::{symmetric_eigenvalues, AgentMatrix};
use crate::scalar::Scalar;

pub const DEFAULT_RETRY_BUDGET: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyTag {
    Ring,
    ErdosRenyi,
    Complete,
    Path,
}

impl fmt::Display for TopologyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TopologyTag::Ring => "ring",
            TopologyTag::ErdosRenyi => "erdos_renyi",
            TopologyTag::Complete => "complete",
            TopologyTag::Path => "path",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TopologyKind {
    Ring,
    ErdosRenyi { p: f64 },
    Complete,
    Path,
}

/// Undirected graph on agents `0..m`. Edges are stored as `(i, j)` with `i < j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    m: usize,
    edges: BTreeSet<(usize, usize)>,
    kind: TopologyKind,
}

impl Graph {
    /// Build from an explicit edge list. Self-loops are rejected; duplicate
    /// and reversed pairs collapse.
    pub fn from_edges(m: usize, edges: &[(usize, usize)], kind: TopologyKind) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("agent count m must be >= 1".into()));
        }
        let mut set = BTreeSet::new();
        for &(i, j) in edges {
            if i == j {
                return Err(Error::InvalidArgument(format!("self-loop at agent {i}")));
            }
            if i >= m || j >= m {
                return Err(Error::InvalidArgument(format!(
                    "edge ({i}, {j}) out of range for m = {m}"
                )));
            }
            set.insert((i.min(j), i.max(j)));
        }
        Ok(Self {
            m,
            edges: set,
            kind,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.m];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.m];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        let adj = self.neighbors();
        let mut seen = vec![false; self.m];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.m
    }
}

pub fn build_topology(tag: TopologyTag, m: usize, p: Option<f64>, seed: u64) -> Result<Graph> {
    build_topology_with_budget(tag, m, p, seed, DEFAULT_RETRY_BUDGET)
}

pub fn build_topology_with_budget(
    tag: TopologyTag,
    m: usize,
    p: Option<f64>,
    seed: u64,
    retry_budget: usize,
) -> Result<Graph> {
    if m == 0 {
        return Err(Error::InvalidArgument("agent count m must be >= 1".into()));
    }
    match (tag, p) {
        (TopologyTag::ErdosRenyi, None) => {
            return Err(Error::InvalidArgument(
                "erdos_renyi requires a connectivity probability p".into(),
            ))
        }
        (TopologyTag::ErdosRenyi, Some(p)) if !(p > 0.0 && p <= 1.0) => {
            return Err(Error::InvalidArgument(format!("p = {p} not in (0, 1]")))
        }
        (TopologyTag::ErdosRenyi, _) => {}
        (other, Some(_)) => {
            return Err(Error::InvalidArgument(format!(
                "p is only meaningful for erdos_renyi, not {other}"
            )))
        }
        _ => {}
    }

    let graph = match tag {
        TopologyTag::Ring => {
            let edges: Vec<_> = if m < 2 {
                Vec::new()
            } else {
                (0..m).map(|i| (i, (i + 1) % m)).collect()
            };
            Graph::from_edges(m, &edges, TopologyKind::Ring)?
        }
        TopologyTag::Path => {
            let edges: Vec<_> = (1..m).map(|i| (i - 1, i)).collect();
            Graph::from_edges(m, &edges, TopologyKind::Path)?
        }
        TopologyTag::Complete => {
            let edges: Vec<_> = (0..m)
                .flat_map(|i| ((i + 1)..m).map(move |j| (i, j)))
                .collect();
            Graph::from_edges(m, &edges, TopologyKind::Complete)?
        }
        TopologyTag::ErdosRenyi => {
            let p = p.expect("checked above");
            let kind = TopologyKind::ErdosRenyi { p };
            let mut found = None;
            for attempt in 0..retry_budget.max(1) {
                let mut rng = derive_stream(RngStreamKey::new(
                    seed,
                    StreamPurpose::Topology,
                    attempt as u64,
                    0,
                ));
                let mut edges = Vec::new();
                for i in 0..m {
                    for j in (i + 1)..m {
                        if rng.random::<f64>() < p {
                            edges.push((i, j));
                        }
                    }
                }
                let g = Graph::from_edges(m, &edges, kind)?;
                if g.is_connected() {
                    found = Some(g);
                    break;
                }
            }
            found.ok_or(Error::DisconnectedTopology {
                attempts: retry_budget.max(1),
            })?
        }
    };
    if !graph.is_connected() {
        return Err(Error::DisconnectedTopology { attempts: 1 });
    }
    Ok(graph)
}

/// Symmetric doubly-stochastic mixing matrix with its cached spectrum.
#[derive(Clone, Debug)]
pub struct MixingMatrix<T> {
    w: AgentMatrix<T>,
    support: BTreeSet<(usize, usize)>,
    eigenvalues: Vec<T>,
    lambda2: T,
    gamma: T,
}

impl<T: Scalar> MixingMatrix<T> {
    /// Wrap an arbitrary square matrix together with the graph it is meant
    /// to respect. No Assumption-5 properties are enforced here; use
    /// [`validate_mixing`] to check them.
    pub fn from_dense(w: AgentMatrix<T>, graph: &Graph) -> Result<Self> {
        if w.rows() != graph.m() || w.cols() != graph.m() {
            return Err(Error::DimensionMismatch {
                expected: format!("{0}x{0}", graph.m()),
                got: format!("{}x{}", w.rows(), w.cols()),
            });
        }
        let eigenvalues = symmetric_eigenvalues(&w)?;
        // A single agent has no second eigenvalue; treat its gap as full.
        let lambda2 = eigenvalues.get(1).copied().unwrap_or(T::zero());
        Ok(Self {
            w,
            support: graph.edges().clone(),
            eigenvalues,
            lambda2,
            gamma: T::one() - lambda2,
        })
    }

    pub fn m(&self) -> usize {
        self.w.rows()
    }

    pub fn matrix(&self) -> &AgentMatrix<T> {
        &self.w
    }

    pub fn support(&self) -> &BTreeSet<(usize, usize)> {
        &self.support
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> &[T] {
        &self.eigenvalues
    }

    pub fn lambda2(&self) -> T {
        self.lambda2
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    /// `W · y`.
    pub fn apply(&self, y: &AgentMatrix<T>) -> Result<AgentMatrix<T>> {
        self.w.matmul(y)
    }
}

pub fn metropolis_mixing<T: Scalar>(g: &Graph) -> Result<MixingMatrix<T>> {
    if !g.is_connected() {
        return Err(Error::InvalidArgument(
            "metropolis_mixing requires a connected graph".into(),
        ));
    }
    let m = g.m();
    let deg = g.degrees();
    let half = T::of(0.5);
    let mut w = AgentMatrix::zeros(m, m);
    for &(i, j) in g.edges() {
        let weight = T::one() / T::of_usize(1 + deg[i].max(deg[j]));
        w[(i, j)] = weight * half;
        w[(j, i)] = weight * half;
    }
    for i in 0..m {
        let off: T = (0..m).filter(|&j| j != i).map(|j| w[(i, j)] * T::of(2.0)).sum();
        let metropolis_diag = T::one() - off;
        w[(i, i)] = (T::one() + metropolis_diag) * half;
    }
    MixingMatrix::from_dense(w, g)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClauseCheck {
    pub clause: &'static str,
    pub passed: bool,
    /// Measured violation (0 when the clause holds exactly).
    pub violation: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub clauses: Vec<ClauseCheck>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.clauses.iter().all(|c| c.passed)
    }

    pub fn clause(&self, name: &str) -> Option<&ClauseCheck> {
        self.clauses.iter().find(|c| c.clause == name)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.clauses {
            writeln!(
                f,
                "{:<28} {:<4} violation={:.3e} {}",
                c.clause,
                if c.passed { "ok" } else { "FAIL" },
                c.violation,
                c.detail
            )?;
        }
        Ok(())
    }
}

pub const CLAUSE_SYMMETRIC: &str = "symmetric";
pub const CLAUSE_NONNEGATIVE: &str = "nonnegative";
pub const CLAUSE_SPARSITY: &str = "sparsity_pattern";
pub const CLAUSE_DOUBLY_STOCHASTIC: &str = "doubly_stochastic";
pub const CLAUSE_SPECTRUM: &str = "eigenvalues_in_unit_interval";
pub const CLAUSE_NULL_SPACE: &str = "null_space_is_span_of_ones";

fn tolerance<T: Scalar>(base: f64) -> f64 {
    base.max(100.0 * T::epsilon().to_f64_lossy())
}

/// Check every clause of the mixing-matrix assumption and report the
/// measured violations.
pub fn validate_mixing<T: Scalar>(mix: &MixingMatrix<T>) -> ValidationReport {
    let w = mix.matrix();
    let m = mix.m();
    let stoch_tol = tolerance::<T>(1e-12);
    let eig_tol = tolerance::<T>(1e-10);
    let null_tol = tolerance::<T>(1e-9).max(1e3 * stoch_tol);
    let mut clauses = Vec::new();

    let asym = (0..m)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| (w[(i, j)] - w[(j, i)]).abs().to_f64_lossy())
        .fold(0.0, f64::max);
    clauses.push(ClauseCheck {
        clause: CLAUSE_SYMMETRIC,
        passed: asym == 0.0,
        violation: asym,
        detail: "max |w_ij - w_ji|".into(),
    });

    let min_entry = w.as_slice().iter().fold(f64::INFINITY, |acc, v| acc.min(v.to_f64_lossy()));
    clauses.push(ClauseCheck {
        clause: CLAUSE_NONNEGATIVE,
        passed: min_entry >= 0.0,
        violation: (-min_entry).max(0.0),
        detail: format!("min entry {min_entry:.3e}"),
    });

    let mut pattern_errors = 0usize;
    for i in 0..m {
        for j in 0..m {
            let nonzero = w[(i, j)] != T::zero();
            let allowed = i == j || mix.support().contains(&(i.min(j), i.max(j)));
            if nonzero != allowed {
                pattern_errors += 1;
            }
        }
    }
    clauses.push(ClauseCheck {
        clause: CLAUSE_SPARSITY,
        passed: pattern_errors == 0,
        violation: pattern_errors as f64,
        detail: "entries whose zero/nonzero status disagrees with the graph".into(),
    });

    let mut stoch = 0.0f64;
    for i in 0..m {
        let row: T = (0..m).map(|j| w[(i, j)]).sum();
        let col: T = (0..m).map(|j| w[(j, i)]).sum();
        stoch = stoch
            .max((row - T::one()).abs().to_f64_lossy())
            .max((col - T::one()).abs().to_f64_lossy());
    }
    clauses.push(ClauseCheck {
        clause: CLAUSE_DOUBLY_STOCHASTIC,
        passed: stoch <= stoch_tol,
        violation: stoch,
        detail: "max |row or column sum - 1|".into(),
    });

    let eig = mix.eigenvalues();
    let lo = eig.last().map_or(0.0, |v| v.to_f64_lossy());
    let hi = eig.first().map_or(0.0, |v| v.to_f64_lossy());
    let spec_violation = (-lo).max(hi - 1.0).max(0.0);
    clauses.push(ClauseCheck {
        clause: CLAUSE_SPECTRUM,
        passed: lo >= -eig_tol && hi <= 1.0 + eig_tol,
        violation: spec_violation,
        detail: format!("eigenvalue range [{lo:.6}, {hi:.6}]"),
    });

    let unit = eig
        .iter()
        .filter(|v| (T::one() - **v).abs().to_f64_lossy() <= null_tol)
        .count();
    let ones_fixed = (0..m).all(|i| {
        let row: T = (0..m).map(|j| w[(i, j)]).sum();
        (row - T::one()).abs().to_f64_lossy() <= null_tol
    });
    clauses.push(ClauseCheck {
        clause: CLAUSE_NULL_SPACE,
        passed: unit == 1 && ones_fixed,
        violation: (unit as f64 - 1.0).abs(),
        detail: format!("dim null(I - W) = {unit}"),
    });

    ValidationReport { clauses }
}
