//! Centralized reference solver, the synthetic ellipse dataset, sharding,
//! and prediction.
//!
//! The solver minimizes `g(xbar) = sum_i f_i(xbar)` by gradient descent
//! with Armijo backtracking. It deliberately uses no Hessian so that it can
//! serve as an independent check of the Hessian-driven flow.

use std::fmt::Write as _;

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{ensure_dim, invalid, Error, Result};
use crate::loss::{Classifier, FeatureMap, Problem, Shard};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 200_000;

const ARMIJO: f64 = 1e-4;

/// Minimizer of the consensus cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralSolution {
    pub x_bar: DVector<f64>,
    pub f_star: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

#[derive(Serialize)]
struct SolutionJson<'a> {
    omega: &'a [f64],
    nu: f64,
    #[serde(rename = "F_star")]
    f_star: f64,
    grad_norm: f64,
    iterations: usize,
}

impl CentralSolution {
    pub fn classifier(&self) -> Classifier {
        let k = self.x_bar.len() - 1;
        Classifier {
            omega: self.x_bar.rows(0, k).into_owned(),
            nu: self.x_bar[k],
        }
    }

    /// `{omega, nu, F_star, grad_norm, iterations}`
    pub fn to_json(&self) -> String {
        let k = self.x_bar.len() - 1;
        let j = SolutionJson {
            omega: &self.x_bar.as_slice()[..k],
            nu: self.x_bar[k],
            f_star: self.f_star,
            grad_norm: self.grad_norm,
            iterations: self.iterations,
        };
        serde_json::to_string_pretty(&j).expect("plain numeric struct serializes")
    }
}

/// Gradient descent from the origin until `||grad g|| <= tol`.
pub fn solve_centralized(problem: &Problem, tol: f64, max_iter: usize) -> Result<CentralSolution> {
    solve_centralized_from(problem, DVector::zeros(problem.m()), tol, max_iter)
}

/// Gradient descent from `start`. Each trial step is the Barzilai-Borwein
/// step of the last iteration, halved until the Armijo condition holds.
pub fn solve_centralized_from(
    problem: &Problem,
    start: DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<CentralSolution> {
    ensure_dim("starting point", problem.m(), start.len())?;
    if !(tol > 0.0) {
        return Err(invalid("tol", format!("must be positive, got {tol}")));
    }
    let mut x = start;
    let mut fx = problem.consensus_cost(x.as_slice())?;
    let mut g = problem.consensus_gradient(x.as_slice())?;
    let mut trial = 1.0;
    for it in 0..max_iter {
        let gn2 = g.norm_squared();
        if gn2.sqrt() <= tol {
            return Ok(CentralSolution {
                x_bar: x,
                f_star: fx,
                grad_norm: gn2.sqrt(),
                iterations: it,
            });
        }
        let mut step = trial;
        let x_next = loop {
            let cand = &x - &g * step;
            let fc = problem.consensus_cost(cand.as_slice())?;
            // the slack keeps the test meaningful once the predicted decrease drops below round-off in f
            if fc <= fx - ARMIJO * step * gn2 + 4.0 * f64::EPSILON * fx.abs() {
                fx = fc;
                break cand;
            }
            step *= 0.5;
            if step < 1e-20 {
                return Err(Error::NoConvergence {
                    iterations: it,
                    grad_norm: gn2.sqrt(),
                    last_iterate: x.as_slice().to_vec(),
                });
            }
        };
        let g_next = problem.consensus_gradient(x_next.as_slice())?;
        let s = &x_next - &x;
        let yv = &g_next - &g;
        let sy = s.dot(&yv);
        trial = if sy > 0.0 {
            (s.norm_squared() / sy).clamp(1e-10, 1e10)
        } else {
            step * 2.0
        };
        x = x_next;
        g = g_next;
    }
    let grad_norm = g.norm();
    if grad_norm <= tol {
        return Ok(CentralSolution {
            x_bar: x,
            f_star: fx,
            grad_norm,
            iterations: max_iter,
        });
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        grad_norm,
        last_iterate: x.as_slice().to_vec(),
    })
}

/// Raw labelled 2-D points.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<f64>,
}

/// Semi-axes of the labelling ellipse and the half-width of the excluded band.
pub const ELLIPSE_A: f64 = 1.3;
pub const ELLIPSE_B: f64 = 1.1;
pub const MARGIN: f64 = 0.05;
pub const BOX_HALF_WIDTH: f64 = 1.5;

/// `(chi1 / a)^2 + (chi2 / b)^2`; below 1 inside the labelling ellipse.
pub fn ellipse_level(p: [f64; 2]) -> f64 {
    (p[0] / ELLIPSE_A).powi(2) + (p[1] / ELLIPSE_B).powi(2)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("chi1,chi2,label\n");
        for (p, l) in self.points.iter().zip(&self.labels) {
            let _ = writeln!(out, "{},{},{}", p[0], p[1], l);
        }
        out
    }

    /// Rows `chi1,chi2,label`; a leading header row is optional.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("chi1")) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: i + 1,
                    reason: format!("expected 3 fields, got {}", fields.len()),
                });
            }
            let num = |s: &str| {
                s.parse::<f64>().map_err(|e| Error::Parse {
                    line: i + 1,
                    reason: format!("`{s}`: {e}"),
                })
            };
            let (a, b, l) = (num(fields[0])?, num(fields[1])?, num(fields[2])?);
            if l != 1.0 && l != -1.0 {
                return Err(Error::Parse {
                    line: i + 1,
                    reason: format!("label must be -1 or 1, got {l}"),
                });
            }
            points.push([a, b]);
            labels.push(l);
        }
        Ok(Self { points, labels })
    }
}

/// `n_points` uniform points in the box, labelled `+1` inside the ellipse
/// and `-1` outside, with the band `|level - 1| < MARGIN` left empty. Both
/// labels are always present.
pub fn generate_ellipse_dataset(n_points: usize, seed: u64) -> Result<Dataset> {
    if n_points < 4 {
        return Err(invalid(
            "N",
            format!("need at least 4 points, got {n_points}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n_points);
    let mut labels: Vec<f64> = Vec::with_capacity(n_points);
    while points.len() < n_points {
        let p = [
            rng.gen_range(-BOX_HALF_WIDTH..=BOX_HALF_WIDTH),
            rng.gen_range(-BOX_HALF_WIDTH..=BOX_HALF_WIDTH),
        ];
        let q = ellipse_level(p);
        if (q - 1.0).abs() < MARGIN {
            continue;
        }
        let l = if q < 1.0 { 1.0 } else { -1.0 };
        // the last slot is reserved for the missing class, if any
        if points.len() == n_points - 1 && labels.iter().all(|&x| x == l) {
            continue;
        }
        points.push(p);
        labels.push(l);
    }
    Ok(Dataset { points, labels })
}

/// Per-agent index sets: `ceil(fraction * N)` indices drawn without
/// replacement for each agent independently, sorted.
pub fn shard_indices(
    n_points: usize,
    n_agents: usize,
    fraction: f64,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(invalid(
            "fraction",
            format!("must lie in (0, 1], got {fraction}"),
        ));
    }
    if n_agents == 0 {
        return Err(invalid("n", "need at least one agent"));
    }
    if fraction * (n_points as f64) < 1.0 {
        return Err(Error::EmptyShard(format!(
            "fraction {fraction} of {n_points} points leaves agents without data"
        )));
    }
    let k = ((fraction * n_points as f64).ceil() as usize).min(n_points);
    Ok((0..n_agents)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut idx = sample(&mut rng, n_points, k).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect())
}

/// Mapped shards, one per agent.
pub fn shard_dataset(
    data: &Dataset,
    n_agents: usize,
    fraction: f64,
    seed: u64,
    map: FeatureMap,
) -> Result<Vec<Shard>> {
    let mapped: Vec<DVector<f64>> = data
        .points
        .iter()
        .map(|p| map.apply(p))
        .collect::<Result<_>>()?;
    let dim = map.output_dim(2);
    shard_indices(data.len(), n_agents, fraction, seed)?
        .into_iter()
        .map(|idx| {
            Shard::new(
                dim,
                idx.iter().map(|&j| mapped[j].clone()).collect(),
                idx.iter().map(|&j| data.labels[j]).collect(),
            )
        })
        .collect()
}

/// Points that appear in no shard.
pub fn uncovered_count(n_points: usize, shards: &[Vec<usize>]) -> usize {
    let mut seen = vec![false; n_points];
    for &j in shards.iter().flatten() {
        seen[j] = true;
    }
    seen.iter().filter(|s| !**s).count()
}

/// `+1` when `omega . phi(chi) + nu >= 0`, else `-1`.
pub fn predict(classifier: &Classifier, chi: &[f64], map: FeatureMap) -> Result<f64> {
    let phi = map.apply(chi)?;
    ensure_dim(
        "classifier vs mapped point",
        classifier.omega.len(),
        phi.len(),
    )?;
    Ok(if classifier.score(&phi) >= 0.0 {
        1.0
    } else {
        -1.0
    })
}

/// Fraction of `data` classified correctly.
pub fn accuracy(classifier: &Classifier, data: &Dataset, map: FeatureMap) -> Result<f64> {
    if data.is_empty() {
        return Ok(1.0);
    }
    let mut hits = 0usize;
    for (p, l) in data.points.iter().zip(&data.labels) {
        if predict(classifier, p, map)? == *l {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// The quadratic-map hyperplane pulled back to the plane:
/// `w1 z1^2 + w2 z2^2 + sqrt(2) w3 z1 z2 + nu = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EllipseClassifier {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub nu: f64,
}

impl EllipseClassifier {
    /// From a packed `[omega (3); nu]`.
    pub fn from_solution(x_bar: &[f64]) -> Result<Self> {
        ensure_dim("quadratic classifier", 4, x_bar.len())?;
        Ok(Self {
            w1: x_bar[0],
            w2: x_bar[1],
            w3: x_bar[2],
            nu: x_bar[3],
        })
    }

    pub fn evaluate(&self, z: [f64; 2]) -> f64 {
        self.w1 * z[0] * z[0]
            + self.w2 * z[1] * z[1]
            + std::f64::consts::SQRT_2 * self.w3 * z[0] * z[1]
            + self.nu
    }

    pub fn predict(&self, z: [f64; 2]) -> f64 {
        if self.evaluate(z) >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn coefficients(&self) -> [f64; 4] {
        [self.w1, self.w2, self.w3, self.nu]
    }
}
