//! The hybrid gradient-tracking system: a continuous flow in `(x, y)`
//! punctuated by topology switches at fixed instants.

mod init;
mod system;
mod trajectory;

use log::warn;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, invalid, Error, Result};
use crate::graph::{GraphPair, SwitchingSchedule};
use crate::loss::Problem;

pub use init::{local_minimizers, random_heterogeneous};
pub use system::{assemble_system_matrix, kron_apply, kron_identity, SystemMatrix};
pub use trajectory::{Sample, Trajectory};

/// Norm above which a state is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e9;

/// Stacked agent states and trackers at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub t: f64,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

impl SystemState {
    /// State at `t = 0` with the trackers zeroed.
    pub fn initial(x: DVector<f64>) -> Self {
        let y = DVector::zeros(x.len());
        Self { t: 0.0, x, y }
    }

    fn norm(&self) -> f64 {
        (self.x.norm_squared() + self.y.norm_squared()).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Euler,
    #[default]
    Rk4,
}

/// How the tracker absorbs the change in local gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackingMode {
    /// `dy/dt` carries `Hess f_i(x_i) dx_i/dt`.
    #[default]
    HessianFlow,
    /// Integrates `z = y - grad f(x)` instead; `sum_i z_i` is conserved to
    /// round-off because `Abar` has zero column sums.
    GradientDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    pub alpha: f64,
    pub h: f64,
    pub t_end: f64,
    pub integrator: Integrator,
    pub tracking: TrackingMode,
    /// Record a sample every this many steps (the final state is always kept).
    pub record_every: usize,
    /// Keep the state at the start of every switching interval.
    pub record_switches: bool,
    /// Turn invariant warnings into errors.
    pub strict: bool,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            h: 1e-3,
            t_end: 2.0,
            integrator: Integrator::Rk4,
            tracking: TrackingMode::HessianFlow,
            record_every: 10,
            record_switches: false,
            strict: false,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid(
                "alpha",
                format!("must be positive, got {}", self.alpha),
            ));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(invalid("h", format!("must be positive, got {}", self.h)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(invalid(
                "t_end",
                format!("must be non-negative, got {}", self.t_end),
            ));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every", "must be at least 1"));
        }
        self.step_count()?;
        Ok(())
    }

    /// Number of steps covering `[0, t_end]`; `t_end` must be a multiple of `h`.
    pub fn step_count(&self) -> Result<usize> {
        steps_in(self.t_end, self.h, "t_end")
    }
}

fn steps_in(span: f64, h: f64, name: &'static str) -> Result<usize> {
    let k = (span / h).round();
    if (k * h - span).abs() > 1e-9 * span.max(h) {
        return Err(invalid(
            name,
            format!("{span} is not an integer multiple of h = {h}"),
        ));
    }
    Ok(k as usize)
}

/// Time derivative `(dx/dt, dy/dt)` under the graphs in `graphs`.
pub fn rhs(
    state: &SystemState,
    graphs: &GraphPair,
    problem: &Problem,
    alpha: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (n, m) = (problem.n(), problem.m());
    ensure_dim("graph size", n, graphs.n())?;
    ensure_dim("state x", n * m, state.x.len())?;
    ensure_dim("state y", n * m, state.y.len())?;
    let xdot = kron_apply(graphs.w_lap.matrix(), &state.x, m) - &state.y * alpha;
    let mut ydot = kron_apply(graphs.a_lap.matrix(), &state.y, m);
    let hess = problem.hessian_blocks(state.x.as_slice())?;
    for (i, hi) in hess.iter().enumerate() {
        let feed = hi * xdot.rows(i * m, m);
        let mut yi = ydot.rows_mut(i * m, m);
        yi += feed;
    }
    Ok((xdot, ydot))
}

/// Time derivative of `(x, z)` with `z = y - grad f(x)`.
fn rhs_gradient_difference(
    x: &DVector<f64>,
    z: &DVector<f64>,
    graphs: &GraphPair,
    problem: &Problem,
    alpha: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let m = problem.m();
    let y = z + problem.stacked_gradient(x.as_slice())?;
    let xdot = kron_apply(graphs.w_lap.matrix(), x, m) - &y * alpha;
    let zdot = kron_apply(graphs.a_lap.matrix(), &y, m);
    Ok((xdot, zdot))
}

fn advance<F>(
    u: &DVector<f64>,
    v: &DVector<f64>,
    h: f64,
    integrator: Integrator,
    f: F,
) -> Result<(DVector<f64>, DVector<f64>)>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)>,
{
    match integrator {
        Integrator::Euler => {
            let (du, dv) = f(u, v)?;
            Ok((u + du * h, v + dv * h))
        }
        Integrator::Rk4 => {
            let (k1u, k1v) = f(u, v)?;
            let (k2u, k2v) = f(&(u + &k1u * (h / 2.0)), &(v + &k1v * (h / 2.0)))?;
            let (k3u, k3v) = f(&(u + &k2u * (h / 2.0)), &(v + &k2v * (h / 2.0)))?;
            let (k4u, k4v) = f(&(u + &k3u * h), &(v + &k3v * h))?;
            let u1 = u + (k1u + k2u * 2.0 + k3u * 2.0 + k4u) * (h / 6.0);
            let v1 = v + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
            Ok((u1, v1))
        }
    }
}

/// One integration step of length `cfg.h` under fixed graphs.
pub fn step(
    state: &SystemState,
    graphs: &GraphPair,
    problem: &Problem,
    cfg: &DynamicsConfig,
) -> Result<SystemState> {
    let alpha = cfg.alpha;
    let (x, y) = match cfg.tracking {
        TrackingMode::HessianFlow => advance(&state.x, &state.y, cfg.h, cfg.integrator, |x, y| {
            let s = SystemState {
                t: state.t,
                x: x.clone(),
                y: y.clone(),
            };
            rhs(&s, graphs, problem, alpha)
        })?,
        TrackingMode::GradientDifference => {
            ensure_dim("graph size", problem.n(), graphs.n())?;
            let z = &state.y - problem.stacked_gradient(state.x.as_slice())?;
            let (x, z) = advance(&state.x, &z, cfg.h, cfg.integrator, |x, z| {
                rhs_gradient_difference(x, z, graphs, problem, alpha)
            })?;
            let y = z + problem.stacked_gradient(x.as_slice())?;
            (x, y)
        }
    };
    let next = SystemState {
        t: state.t + cfg.h,
        x,
        y,
    };
    let norm = next.norm();
    if !norm.is_finite() {
        return Err(Error::Diverged {
            t: next.t,
            reason: "non-finite state".into(),
        });
    }
    if norm > DIVERGENCE_NORM {
        return Err(Error::Diverged {
            t: next.t,
            reason: format!("state norm {norm:e} exceeds {DIVERGENCE_NORM:e}"),
        });
    }
    Ok(next)
}

/// Scalar summaries of one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Monitors {
    /// `F(x) = sum_i f_i(x_i)`.
    pub cost: f64,
    /// `||sum_i grad f_i(x_i)||`.
    pub grad_sum_norm: f64,
    /// `max_i ||x_i - mean(x)||`.
    pub disagreement: f64,
    /// `0.5 (||x - 1 (x) x_ref||^2 + ||y||^2)`.
    pub lyapunov: f64,
    /// `||sum_i (y_i - grad f_i(x_i))||`; zero along exact trajectories
    /// started from `y = 0` at a point with `sum_i grad f_i = 0`.
    pub tracking_gap: f64,
}

/// Mean of the `n` agent blocks.
pub fn consensus_mean(x: &DVector<f64>, m: usize) -> DVector<f64> {
    let n = x.len() / m;
    let mut mean = DVector::zeros(m);
    for i in 0..n {
        mean += x.rows(i * m, m);
    }
    mean / n as f64
}

pub fn disagreement(x: &DVector<f64>, m: usize) -> f64 {
    let mean = consensus_mean(x, m);
    (0..x.len() / m)
        .map(|i| (x.rows(i * m, m) - &mean).norm())
        .fold(0.0, f64::max)
}

/// Monitors of `state`. Without a reference the Lyapunov value is taken
/// against the current consensus mean.
pub fn monitors(
    state: &SystemState,
    problem: &Problem,
    reference: Option<&DVector<f64>>,
) -> Result<Monitors> {
    let m = problem.m();
    let xs = state.x.as_slice();
    let grads = problem.stacked_gradient(xs)?;
    let gsum = problem.sum_blocks(grads.as_slice());
    let ysum = problem.sum_blocks(state.y.as_slice());
    let mean;
    let xref = match reference {
        Some(r) => {
            ensure_dim("reference point", m, r.len())?;
            r
        }
        None => {
            mean = consensus_mean(&state.x, m);
            &mean
        }
    };
    let mut dx2 = 0.0;
    for i in 0..problem.n() {
        dx2 += (state.x.rows(i * m, m) - xref).norm_squared();
    }
    Ok(Monitors {
        cost: problem.cost(xs)?,
        grad_sum_norm: gsum.norm(),
        disagreement: disagreement(&state.x, m),
        lyapunov: 0.5 * (dx2 + state.y.norm_squared()),
        tracking_gap: (ysum - gsum).norm(),
    })
}

/// `||sum_i (y_i - grad f_i(x_i)) + sum_i grad f_i(x_i(0))||`: how far the
/// conserved quantity has moved from its value at `t = 0` (where `y = 0`).
pub fn conservation_drift(
    state: &SystemState,
    problem: &Problem,
    grad_sum0: &DVector<f64>,
) -> Result<f64> {
    let ysum = problem.sum_blocks(state.y.as_slice());
    let gsum = problem.gradient_sum(state.x.as_slice())?;
    Ok((ysum - gsum + grad_sum0).norm())
}

/// Conservation tolerance used by strict mode.
fn strict_conservation_tol(cfg: &DynamicsConfig) -> f64 {
    match cfg.tracking {
        TrackingMode::GradientDifference => 1e-10,
        TrackingMode::HessianFlow => cfg.h,
    }
}

/// Integrates from `x0` (with `y(0) = 0`) over `[0, cfg.t_end]`.
///
/// The schedule's period must be an integer multiple of `cfg.h`; graphs
/// change only between steps. `reference` is the optimum the Lyapunov
/// monitor is measured against.
pub fn simulate(
    problem: &Problem,
    schedule: &SwitchingSchedule,
    cfg: &DynamicsConfig,
    x0: DVector<f64>,
    reference: Option<&DVector<f64>>,
) -> Result<Trajectory> {
    cfg.validate()?;
    let (n, m) = (problem.n(), problem.m());
    ensure_dim("schedule size", n, schedule.n())?;
    ensure_dim("initial state", n * m, x0.len())?;
    let n_steps = cfg.step_count()?;
    let steps_per_switch = if schedule.period >= f64::MAX {
        usize::MAX
    } else {
        steps_in(schedule.period, cfg.h, "switch_period")?.max(1)
    };

    let mut state = SystemState::initial(x0);
    let tol = strict_conservation_tol(cfg);
    if n > 1 && disagreement(&state.x, m) == 0.0 {
        let msg = "x(0) is already in consensus; the flow starts at an equilibrium candidate";
        if cfg.strict {
            return Err(Error::InvariantViolation {
                check: "heterogeneous x(0)",
                detail: msg.into(),
            });
        }
        warn!("{msg}");
    }
    let g0 = problem.gradient_sum(state.x.as_slice())?;
    let gap0 = g0.norm();
    if gap0 > tol {
        let msg = format!("sum of local gradients at x(0) is {gap0:e}; with y(0) = 0 the limit is not the optimum");
        if cfg.strict {
            return Err(Error::InvariantViolation {
                check: "tracker initialization",
                detail: msg,
            });
        }
        warn!("{msg}");
    }

    let mut traj = Trajectory::new(n, m);
    let mut graphs = schedule.topology_at(0)?;
    if cfg.strict {
        graphs.w.validate()?;
        graphs.a.validate()?;
    }
    let mut gamma_max = 0.0f64;
    let record = |state: &SystemState, interval: u64, traj: &mut Trajectory| -> Result<()> {
        let mon = monitors(state, problem, reference)?;
        let drift = conservation_drift(state, problem, &g0)?;
        if cfg.strict && drift > tol {
            return Err(Error::InvariantViolation {
                check: "tracker conservation",
                detail: format!(
                    "sum(y) - sum(grad f) drifted by {drift:e} at t = {}",
                    state.t
                ),
            });
        }
        traj.samples.push(Sample {
            t: state.t,
            interval,
            x: state.x.clone(),
            y: state.y.clone(),
            monitors: mon,
            conservation: drift,
        });
        Ok(())
    };

    record(&state, 0, &mut traj)?;
    if cfg.record_switches {
        traj.switch_states.push((0, state.clone()));
    }
    for k in 0..n_steps {
        let interval = (k / steps_per_switch) as u64;
        if interval != graphs.index {
            graphs = schedule.topology_at(interval)?;
            if cfg.strict {
                graphs.w.validate()?;
                graphs.a.validate()?;
            }
            if cfg.record_switches {
                traj.switch_states.push((interval, state.clone()));
            }
        }
        if cfg.record_switches {
            let g = crate::spectral::gamma(&problem.block_hessian(state.x.as_slice())?);
            gamma_max = gamma_max.max(g);
        }
        let mut next = step(&state, &graphs, problem, cfg)?;
        // integer step count keeps switch instants exact
        next.t = (k + 1) as f64 * cfg.h;
        state = next;
        if (k + 1) % cfg.record_every == 0 || k + 1 == n_steps {
            record(&state, interval, &mut traj)?;
        }
    }
    traj.gamma_max = if cfg.record_switches {
        Some(gamma_max)
    } else {
        None
    };
    traj.final_state = state;
    Ok(traj)
}
