//! Weighted digraphs, their Laplacians, and switching topology schedules.
//!
//! Convention: `weights[(i, j)]` is the weight of the link from node `j` to
//! node `i`, so row `i` holds the incoming weights of node `i`. The
//! Laplacian keeps the adjacency weights off the diagonal and puts the
//! negative row sum on it, which makes every row sum to zero and (for a
//! weight-balanced digraph) every column as well.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};

/// Tolerance used for the weight-balance and zero-row-sum checks.
pub const BALANCE_TOL: f64 = 1e-12;

/// A weighted directed graph stored as a dense adjacency matrix.
///
/// Construction through [`Digraph::from_weights`] only checks the structural
/// requirements (square, finite, non-negative, empty diagonal). The network
/// requirements of the simulator (row sums below one, weight balance, strong
/// connectivity) are checked by [`Digraph::validate`], which [`Digraph::new`]
/// runs eagerly.
#[derive(Debug, Clone, PartialEq)]
pub struct Digraph {
    weights: DMatrix<f64>,
}

impl Digraph {
    /// Builds a digraph and checks every network invariant.
    pub fn new(weights: DMatrix<f64>) -> Result<Self> {
        let g = Self::from_weights(weights)?;
        g.validate()?;
        Ok(g)
    }

    /// Builds a digraph checking only structural well-formedness.
    pub fn from_weights(weights: DMatrix<f64>) -> Result<Self> {
        if weights.nrows() != weights.ncols() {
            return Err(Error::InvariantViolation {
                check: "square",
                detail: format!("{}x{} adjacency", weights.nrows(), weights.ncols()),
            });
        }
        if weights.nrows() == 0 {
            return Err(Error::InvariantViolation {
                check: "non-empty",
                detail: "graph has no nodes".into(),
            });
        }
        for i in 0..weights.nrows() {
            for j in 0..weights.ncols() {
                let w = weights[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::InvariantViolation {
                        check: "non-negative weights",
                        detail: format!("w[{i}][{j}] = {w}"),
                    });
                }
            }
            if weights[(i, i)] != 0.0 {
                return Err(Error::InvariantViolation {
                    check: "zero diagonal",
                    detail: format!("w[{i}][{i}] = {}", weights[(i, i)]),
                });
            }
        }
        Ok(Self { weights })
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Total incoming weight of each node (row sums).
    pub fn in_sums(&self) -> Vec<f64> {
        self.weights.row_iter().map(|r| r.sum()).collect()
    }

    /// Total outgoing weight of each node (column sums).
    pub fn out_sums(&self) -> Vec<f64> {
        self.weights.column_iter().map(|c| c.sum()).collect()
    }

    /// Checks row sums, weight balance and strong connectivity.
    pub fn validate(&self) -> Result<()> {
        self.validate_with(true)
    }

    /// Same as [`validate`](Self::validate), optionally skipping the
    /// connectivity search.
    pub fn validate_with(&self, check_connectivity: bool) -> Result<()> {
        for (i, s) in self.in_sums().into_iter().enumerate() {
            if s >= 1.0 {
                return Err(Error::InvariantViolation {
                    check: "row sum < 1",
                    detail: format!("row {i} sums to {s}"),
                });
            }
        }
        let balance = check_weight_balanced(self);
        if !balance.balanced {
            return Err(Error::InvariantViolation {
                check: "weight balance",
                detail: format!("max |in - out| = {:e}", balance.max_imbalance),
            });
        }
        if check_connectivity && !check_strongly_connected(self) {
            return Err(Error::InvariantViolation {
                check: "strong connectivity",
                detail: "some node pair is not mutually reachable".into(),
            });
        }
        Ok(())
    }

    /// Relabels nodes: node `i` of `self` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n();
        let mut seen = vec![false; n];
        if perm.len() != n
            || perm
                .iter()
                .any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
        {
            return Err(invalid("perm", format!("not a permutation of 0..{n}")));
        }
        let mut w = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                w[(perm[i], perm[j])] = self.weights[(i, j)];
            }
        }
        Ok(Self { weights: w })
    }

    /// Dense CSV dump, one row per node holding its incoming weights.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.weights.row_iter() {
            let cells: Vec<String> = row.iter().map(|w| format!("{w}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|c| {
                    c.trim().parse::<f64>().map_err(|e| Error::Parse {
                        line: lineno + 1,
                        reason: e.to_string(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Parse {
                line: 0,
                reason: "adjacency CSV is not square".into(),
            });
        }
        Self::from_weights(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }
}

/// Result of [`check_weight_balanced`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceCheck {
    pub balanced: bool,
    pub max_imbalance: f64,
}

/// Compares incoming and outgoing weight sums at every node.
pub fn check_weight_balanced(g: &Digraph) -> BalanceCheck {
    let max_imbalance = g
        .in_sums()
        .iter()
        .zip(g.out_sums())
        .map(|(i, o)| (i - o).abs())
        .fold(0.0, f64::max);
    BalanceCheck {
        balanced: max_imbalance <= BALANCE_TOL,
        max_imbalance,
    }
}

/// True iff every node reaches every other node over nonzero links.
///
/// One forward and one backward breadth-first search from node 0.
pub fn check_strongly_connected(g: &Digraph) -> bool {
    let n = g.n();
    let w = g.weights();
    // link j -> i exists iff w[(i, j)] > 0
    let forward = reach(n, |u, v| w[(v, u)] > 0.0);
    let backward = reach(n, |u, v| w[(u, v)] > 0.0);
    forward && backward
}

fn reach(n: usize, edge: impl Fn(usize, usize) -> bool) -> bool {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for (v, s) in seen.iter_mut().enumerate() {
            if !*s && edge(u, v) {
                *s = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == n
}

/// Graph Laplacian: adjacency weights off the diagonal, minus the row sum on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    matrix: DMatrix<f64>,
}

impl Laplacian {
    /// Laplacian of any structurally valid digraph, without the network checks.
    /// Test fixtures use this to build deliberately unbalanced systems.
    pub fn unchecked(g: &Digraph) -> Self {
        let mut matrix = g.weights().clone();
        for (i, s) in g.in_sums().into_iter().enumerate() {
            matrix[(i, i)] = -s;
        }
        Self { matrix }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// Max absolute row sum and max absolute column sum.
    pub fn zero_sum_residuals(&self) -> (f64, f64) {
        let rows = self
            .matrix
            .row_iter()
            .map(|r| r.sum().abs())
            .fold(0.0, f64::max);
        let cols = self
            .matrix
            .column_iter()
            .map(|c| c.sum().abs())
            .fold(0.0, f64::max);
        (rows, cols)
    }
}

/// Validates `g` and returns its Laplacian.
pub fn build_laplacian(g: &Digraph) -> Result<Laplacian> {
    g.validate()?;
    Ok(Laplacian::unchecked(g))
}

/// Whether the directed cycle and the k-hop ring draw one common weight or two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSharing {
    #[default]
    Independent,
    Shared,
}

/// Union of the directed cycle `i <- i-1` (weight `w_cycle`) and the k-hop
/// ring `i <- i-k` (weight `w_hop`), indices mod `n`.
///
/// Uniform weights per ring give every node one incoming and one outgoing
/// link of each weight, hence weight balance.
pub fn cycle_plus_khop(n: usize, k: usize, w_cycle: f64, w_hop: f64) -> Result<Digraph> {
    if n < 3 {
        return Err(invalid("n", format!("need n >= 3, got {n}")));
    }
    if k <= 1 || k >= n {
        return Err(invalid(
            "k",
            format!("need 1 < k < n, got k = {k}, n = {n}"),
        ));
    }
    if !(w_cycle > 0.0 && w_hop > 0.0) {
        return Err(invalid("weights", "link weights must be positive"));
    }
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        w[(i, (i + n - 1) % n)] = w_cycle;
        w[(i, (i + n - k) % n)] = w_hop;
    }
    Digraph::new(w)
}

/// Cycle plus k-hop digraph with ring weights drawn uniformly from `weight_range`.
pub fn make_cycle_plus_khop(
    n: usize,
    k: usize,
    weight_range: (f64, f64),
    sharing: WeightSharing,
    seed: u64,
) -> Result<Digraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w_cycle, w_hop) = sample_ring_weights(&mut rng, weight_range, sharing)?;
    cycle_plus_khop(n, k, w_cycle, w_hop)
}

fn sample_ring_weights<R: Rng>(
    rng: &mut R,
    (lo, hi): (f64, f64),
    sharing: WeightSharing,
) -> Result<(f64, f64)> {
    if !(lo >= 0.0 && lo < hi && hi.is_finite()) {
        return Err(invalid(
            "weight_range",
            format!("need 0 <= lo < hi, got ({lo}, {hi})"),
        ));
    }
    let mut draw = || loop {
        let w = rng.gen_range(lo..hi);
        if w > lo {
            break w;
        }
    };
    let a = draw();
    let b = match sharing {
        WeightSharing::Independent => draw(),
        WeightSharing::Shared => a,
    };
    Ok((a, b))
}

/// Parameters of the randomized cycle plus k-hop construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleHopParams {
    pub n: usize,
    pub k: usize,
    pub weight_range: (f64, f64),
    pub sharing: WeightSharing,
}

/// Rule that produces the (W, A) graph pair for each switching interval.
#[derive(Debug, Clone, PartialEq)]
pub enum Topology {
    /// The same pair for all time.
    Static { w: Digraph, a: Digraph },
    /// A fresh node permutation and fresh ring weights every interval.
    CycleHop(CycleHopParams),
}

/// The two graphs active during one switching interval, with their Laplacians.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphPair {
    pub index: u64,
    pub w: Digraph,
    pub a: Digraph,
    pub w_lap: Laplacian,
    pub a_lap: Laplacian,
}

impl GraphPair {
    pub fn new(index: u64, w: Digraph, a: Digraph) -> Result<Self> {
        if w.n() != a.n() {
            return Err(invalid("graphs", "W and A must have the same node count"));
        }
        let w_lap = Laplacian::unchecked(&w);
        let a_lap = Laplacian::unchecked(&a);
        Ok(Self {
            index,
            w,
            a,
            w_lap,
            a_lap,
        })
    }

    pub fn n(&self) -> usize {
        self.w.n()
    }
}

/// Piecewise-constant topology: interval `k` covers `[k * period, (k + 1) * period)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingSchedule {
    pub period: f64,
    pub topology: Topology,
    pub seed: u64,
}

impl SwitchingSchedule {
    pub fn new(period: f64, topology: Topology, seed: u64) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(invalid("period", format!("must be positive, got {period}")));
        }
        if let Topology::Static { w, a } = &topology {
            w.validate()?;
            a.validate()?;
            if w.n() != a.n() {
                return Err(invalid("graphs", "W and A must have the same node count"));
            }
        }
        Ok(Self {
            period,
            topology,
            seed,
        })
    }

    /// Schedule with a single fixed pair of graphs.
    pub fn fixed(w: Digraph, a: Digraph) -> Result<Self> {
        Self::new(f64::MAX, Topology::Static { w, a }, 0)
    }

    pub fn n(&self) -> usize {
        match &self.topology {
            Topology::Static { w, .. } => w.n(),
            Topology::CycleHop(p) => p.n,
        }
    }

    /// Index of the switching interval containing `t`.
    pub fn interval_index(&self, t: f64) -> u64 {
        if !matches!(self.topology, Topology::CycleHop(_)) {
            return 0;
        }
        // absorbs the rounding of t = k * period computed in floating point
        let r = t / self.period;
        (r + 1e-9 * r.abs().max(1.0)).floor().max(0.0) as u64
    }

    /// Graphs active at time `t`.
    pub fn next_topology(&self, t: f64) -> Result<GraphPair> {
        if !(t >= 0.0) {
            return Err(invalid("t", format!("must be non-negative, got {t}")));
        }
        self.topology_at(self.interval_index(t))
    }

    /// Graphs for a given interval index; a pure function of `(seed, index)`.
    pub fn topology_at(&self, index: u64) -> Result<GraphPair> {
        match &self.topology {
            Topology::Static { w, a } => GraphPair::new(0, w.clone(), a.clone()),
            Topology::CycleHop(p) => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(index);
                let mut perm: Vec<usize> = (0..p.n).collect();
                perm.shuffle(&mut rng);
                let (wc, wh) = sample_ring_weights(&mut rng, p.weight_range, p.sharing)?;
                let (ac, ah) = sample_ring_weights(&mut rng, p.weight_range, p.sharing)?;
                let w = cycle_plus_khop(p.n, p.k, wc, wh)?.permuted(&perm)?;
                let a = cycle_plus_khop(p.n, p.k, ac, ah)?.permuted(&perm)?;
                // relabeling preserves connectivity; the search only runs in debug builds
                let deep = cfg!(debug_assertions);
                w.validate_with(deep)?;
                a.validate_with(deep)?;
                GraphPair::new(index, w, a)
            }
        }
    }
}
