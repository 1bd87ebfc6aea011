//! Experiment configuration and the end-to-end pipeline behind the CLI.
//!
//! All outputs are pure functions of the configuration: the dataset, the
//! shards and the switching graphs draw from separate streams derived from
//! one seed, and every number is written with a fixed format.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::baseline::{
    accuracy, generate_ellipse_dataset, shard_dataset, solve_centralized, CentralSolution, Dataset,
    EllipseClassifier,
};
use crate::dynamics::{
    assemble_system_matrix, local_minimizers, simulate, DynamicsConfig, Integrator, Monitors,
    TrackingMode, Trajectory,
};
use crate::error::{Error, Result};
use crate::graph::{CycleHopParams, SwitchingSchedule, Topology, WeightSharing};
use crate::loss::{FeatureMap, LossConfig, LossKind, Problem};
use crate::spectral::{SpectralReport, Tolerances};

/// Every knob of a run. Missing keys take the values of the reference
/// experiment; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub hop: usize,
    pub weight_lo: f64,
    pub weight_hi: f64,
    pub weight_sharing: WeightSharing,
    pub alpha: f64,
    pub h: f64,
    pub t_end: f64,
    pub switch_period: f64,
    pub seed: u64,
    pub c: f64,
    pub mu: f64,
    pub loss: LossKind,
    pub n_points: usize,
    pub fraction: f64,
    pub feature_map: FeatureMap,
    pub integrator: Integrator,
    pub tracking: TrackingMode,
    pub record_every: usize,
    /// Emit a spectral report at every `spectral_stride`-th switch instant.
    pub spectral_stride: usize,
    pub sweep_alphas: Vec<f64>,
    pub baseline_tol: f64,
    pub baseline_max_iter: usize,
    pub out_dir: PathBuf,
    pub dump_graphs: bool,
    pub strict: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 5,
            hop: 2,
            weight_lo: 0.0,
            weight_hi: 0.5,
            weight_sharing: WeightSharing::Independent,
            alpha: 10.0,
            h: 1e-3,
            t_end: 2.0,
            switch_period: 0.05,
            seed: 1,
            c: 1.5,
            mu: 3.0,
            loss: LossKind::SmoothHinge,
            n_points: 60,
            fraction: 0.5,
            feature_map: FeatureMap::Quadratic,
            integrator: Integrator::Rk4,
            tracking: TrackingMode::HessianFlow,
            record_every: 10,
            spectral_stride: 1,
            sweep_alphas: vec![0.1, 1.0, 10.0],
            baseline_tol: crate::baseline::DEFAULT_TOL,
            baseline_max_iter: crate::baseline::DEFAULT_MAX_ITER,
            out_dir: PathBuf::from("out"),
            dump_graphs: false,
            strict: false,
        }
    }
}

fn field_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field_err(field, format!("must be positive, got {v}")))
    }
}

fn multiple_of(field: &str, span: f64, h: f64) -> Result<()> {
    let k = (span / h).round();
    if (k * h - span).abs() > 1e-9 * span.max(h) {
        return Err(field_err(
            field,
            format!("{span} is not an integer multiple of h = {h}"),
        ));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)
            .map_err(|e| field_err(&toml_field(&e), e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config fields are all TOML-representable")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(field_err(
                "n",
                format!("the cycle plus hop ring needs n >= 3, got {}", self.n),
            ));
        }
        if !(self.hop > 1 && self.hop < self.n) {
            return Err(field_err(
                "hop",
                format!("need 1 < hop < n, got {}", self.hop),
            ));
        }
        if !(self.weight_lo >= 0.0 && self.weight_lo < self.weight_hi && self.weight_hi <= 0.5) {
            return Err(field_err(
                "weight_hi",
                format!(
                    "need 0 <= weight_lo < weight_hi <= 0.5, got ({}, {})",
                    self.weight_lo, self.weight_hi
                ),
            ));
        }
        positive("alpha", self.alpha)?;
        positive("h", self.h)?;
        positive("t_end", self.t_end)?;
        positive("switch_period", self.switch_period)?;
        positive("c", self.c)?;
        positive("mu", self.mu)?;
        positive("baseline_tol", self.baseline_tol)?;
        multiple_of("t_end", self.t_end, self.h)?;
        multiple_of("switch_period", self.switch_period, self.h)?;
        if self.n_points < 4 {
            return Err(field_err(
                "n_points",
                format!("need at least 4 points, got {}", self.n_points),
            ));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(field_err(
                "fraction",
                format!("must lie in (0, 1], got {}", self.fraction),
            ));
        }
        if self.fraction * (self.n_points as f64) < 1.0 {
            return Err(field_err(
                "fraction",
                "every shard must receive at least one point",
            ));
        }
        if self.record_every == 0 {
            return Err(field_err("record_every", "must be at least 1"));
        }
        if self.spectral_stride == 0 {
            return Err(field_err("spectral_stride", "must be at least 1"));
        }
        if self.baseline_max_iter == 0 {
            return Err(field_err("baseline_max_iter", "must be at least 1"));
        }
        for a in &self.sweep_alphas {
            positive("sweep_alphas", *a)?;
        }
        Ok(())
    }

    pub fn loss_config(&self) -> Result<LossConfig> {
        LossConfig::with_kind(self.c, self.mu, self.loss)
    }

    pub fn dynamics(&self) -> DynamicsConfig {
        DynamicsConfig {
            alpha: self.alpha,
            h: self.h,
            t_end: self.t_end,
            integrator: self.integrator,
            tracking: self.tracking,
            record_every: self.record_every,
            record_switches: true,
            strict: self.strict,
        }
    }

    pub fn schedule(&self) -> Result<SwitchingSchedule> {
        SwitchingSchedule::new(
            self.switch_period,
            Topology::CycleHop(CycleHopParams {
                n: self.n,
                k: self.hop,
                weight_range: (self.weight_lo, self.weight_hi),
                sharing: self.weight_sharing,
            }),
            self.graph_seed(),
        )
    }

    pub fn data_seed(&self) -> u64 {
        self.seed
    }

    pub fn shard_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    pub fn graph_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }
}

fn toml_field(e: &toml::de::Error) -> String {
    let msg = e.message();
    // serde reports unknown and missing keys with the key in backticks
    msg.split('`').nth(1).unwrap_or("config").to_string()
}

/// Dataset, problem and reference optimum for a configuration.
#[derive(Debug, Clone)]
pub struct Setup {
    pub dataset: Dataset,
    pub problem: Problem,
    pub baseline: CentralSolution,
    pub feature_map: FeatureMap,
}

pub fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    cfg.validate()?;
    let dataset = generate_ellipse_dataset(cfg.n_points, cfg.data_seed())?;
    let shards = shard_dataset(
        &dataset,
        cfg.n,
        cfg.fraction,
        cfg.shard_seed(),
        cfg.feature_map,
    )?;
    let problem = Problem::new(shards, cfg.loss_config()?)?;
    let baseline = solve_centralized(&problem, cfg.baseline_tol, cfg.baseline_max_iter)?;
    Ok(Setup {
        dataset,
        problem,
        baseline,
        feature_map: cfg.feature_map,
    })
}

/// Headline numbers of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub alpha: f64,
    pub t_end: f64,
    pub f_star: f64,
    pub final_monitors: Monitors,
    pub relative_disagreement: f64,
    pub relative_cost_gap: f64,
    pub max_conservation_drift: f64,
    pub train_accuracy: f64,
    /// Least-squares slope of `ln(disagreement)` over the first quarter of the run.
    pub initial_decay_slope: f64,
    /// Largest real part outside the zero cluster of `M` at `t = 0`.
    pub slowest_mode_re: Option<f64>,
}

/// Fits `ln(disagreement)` against `t` over the first quarter of the samples.
pub fn initial_decay_slope(traj: &Trajectory) -> f64 {
    let k = (traj.samples.len() / 4).max(2).min(traj.samples.len());
    let pts: Vec<(f64, f64)> = traj.samples[..k]
        .iter()
        .filter(|s| s.monitors.disagreement > 0.0)
        .map(|s| (s.t, s.monitors.disagreement.ln()))
        .collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

fn summarize(
    cfg: &DynamicsConfig,
    s: &Setup,
    traj: &Trajectory,
    slowest: Option<f64>,
) -> Result<RunSummary> {
    let last = traj.last();
    let m = s.problem.m();
    let xbar = crate::dynamics::consensus_mean(&last.x, m);
    let classifier = crate::loss::Classifier::unpack(xbar.as_slice())?;
    Ok(RunSummary {
        alpha: cfg.alpha,
        t_end: cfg.t_end,
        f_star: s.baseline.f_star,
        final_monitors: last.monitors,
        relative_disagreement: last.monitors.disagreement / xbar.norm(),
        relative_cost_gap: (last.monitors.cost - s.baseline.f_star).abs() / s.baseline.f_star.abs(),
        max_conservation_drift: traj.max_conservation_drift(),
        train_accuracy: accuracy(&classifier, &s.dataset, s.feature_map)?,
        initial_decay_slope: initial_decay_slope(traj),
        slowest_mode_re: slowest,
    })
}

/// Spectral report at a given state and switching interval.
pub fn spectral_report_at(
    problem: &Problem,
    schedule: &SwitchingSchedule,
    interval: u64,
    x: &DVector<f64>,
    alpha: f64,
) -> Result<SpectralReport> {
    let graphs = schedule.topology_at(interval)?;
    let h = problem.block_hessian(x.as_slice())?;
    let sys = assemble_system_matrix(
        graphs.w_lap.matrix(),
        graphs.a_lap.matrix(),
        &h,
        alpha,
        problem.m(),
    )?;
    SpectralReport::compute(
        &sys,
        graphs.w_lap.matrix(),
        graphs.a_lap.matrix(),
        Tolerances::default(),
    )
}

#[derive(Serialize)]
struct SwitchReport {
    interval: u64,
    t: f64,
    report: SpectralReport,
}

fn ellipses_csv(traj: &Trajectory) -> Result<String> {
    let mut out = String::from("t,agent,w1,w2,w3,nu\n");
    for s in &traj.samples {
        for i in 0..traj.n {
            let e =
                EllipseClassifier::from_solution(&s.x.as_slice()[i * traj.m..(i + 1) * traj.m])?;
            let [a, b, c, d] = e.coefficients();
            let _ = writeln!(out, "{:e},{i},{a:e},{b:e},{c:e},{d:e}", s.t);
        }
    }
    Ok(out)
}

fn gnuplot_script(n: usize, m: usize) -> String {
    let mut s =
        String::from("set datafile separator ','\nset key autotitle columnhead\nset xlabel 't'\n");
    let _ = writeln!(s, "set multiplot layout 2,2");
    let xs: Vec<String> = (0..n * m)
        .map(|k| format!("'trajectory.csv' using 1:{} with lines notitle", k + 2))
        .collect();
    let _ = writeln!(s, "set title 'agent states'\nplot {}", xs.join(", "));
    let base = n * m + 2;
    let _ = writeln!(
        s,
        "set title 'F(x)'\nplot 'trajectory.csv' using 1:{base} with lines"
    );
    let _ = writeln!(
        s,
        "set logscale y\nset title 'sum of gradients'\nplot 'trajectory.csv' using 1:{} with lines",
        base + 1
    );
    let _ = writeln!(
        s,
        "set title 'disagreement'\nplot 'trajectory.csv' using 1:{} with lines",
        base + 2
    );
    s.push_str("unset multiplot\n");
    s
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::write(dir.join(name), contents)?;
    Ok(())
}

/// Runs the full pipeline and writes every artifact under `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir)?;
    let s = setup(cfg)?;
    write(dir, "dataset.csv", &s.dataset.to_csv())?;
    write(dir, "baseline.json", &s.baseline.to_json())?;

    let schedule = cfg.schedule()?;
    let dyn_cfg = cfg.dynamics();
    let x0 = local_minimizers(&s.problem)?;
    let traj = simulate(&s.problem, &schedule, &dyn_cfg, x0, Some(&s.baseline.x_bar))?;
    write(dir, "trajectory.csv", &traj.to_csv())?;
    write(dir, "ellipses.csv", &ellipses_csv(&traj)?)?;
    write(
        dir,
        "plot.gp",
        &gnuplot_script(s.problem.n(), s.problem.m()),
    )?;

    let mut reports = Vec::new();
    for (k, (interval, state)) in traj.switch_states.iter().enumerate() {
        if k % cfg.spectral_stride != 0 {
            continue;
        }
        reports.push(SwitchReport {
            interval: *interval,
            t: state.t,
            report: spectral_report_at(&s.problem, &schedule, *interval, &state.x, cfg.alpha)?,
        });
    }
    let slowest = reports.first().and_then(|r| r.report.verdict.slowest_re);
    write(dir, "spectral.json", &to_json(&reports))?;

    if cfg.dump_graphs {
        let gdir = dir.join("graphs");
        fs::create_dir_all(&gdir)?;
        for (interval, _) in &traj.switch_states {
            let g = schedule.topology_at(*interval)?;
            write(&gdir, &format!("w_{interval:05}.csv"), &g.w.to_csv())?;
            write(&gdir, &format!("a_{interval:05}.csv"), &g.a.to_csv())?;
        }
    }

    let summary = summarize(&dyn_cfg, &s, &traj, slowest)?;
    write(dir, "summary.json", &to_json(&summary))?;
    info!("run finished: {}", to_json(&summary));
    Ok(summary)
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report types serialize")
}

/// Spectral report at `t = 0` only; no simulation.
pub fn spectral_report(cfg: &ExperimentConfig) -> Result<SpectralReport> {
    let s = setup(cfg)?;
    let x0 = local_minimizers(&s.problem)?;
    spectral_report_at(&s.problem, &cfg.schedule()?, 0, &x0, cfg.alpha)
}

pub fn spectral_report_json(report: &SpectralReport) -> String {
    to_json(report)
}

/// Runs one simulation per entry of `sweep_alphas` concurrently and writes
/// `trajectory_alpha_<alpha>.csv` plus `sweep.json`.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<RunSummary>> {
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir)?;
    let s = setup(cfg)?;
    let schedule = cfg.schedule()?;
    let x0 = local_minimizers(&s.problem)?;
    let results: Vec<Result<(Trajectory, RunSummary)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .sweep_alphas
            .iter()
            .map(|&alpha| {
                let (s, schedule, x0) = (&s, &schedule, x0.clone());
                scope.spawn(move || -> Result<(Trajectory, RunSummary)> {
                    let dc = DynamicsConfig {
                        alpha,
                        record_switches: false,
                        ..cfg.dynamics()
                    };
                    let slowest = spectral_report_at(&s.problem, schedule, 0, &x0, alpha)?
                        .verdict
                        .slowest_re;
                    let traj = simulate(&s.problem, schedule, &dc, x0, Some(&s.baseline.x_bar))?;
                    let summary = summarize(&dc, s, &traj, slowest)?;
                    Ok((traj, summary))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    let mut summaries = Vec::new();
    for (alpha, r) in cfg.sweep_alphas.iter().zip(results) {
        let (traj, summary) = r?;
        write(
            dir,
            &format!("trajectory_alpha_{alpha}.csv"),
            &traj.to_csv(),
        )?;
        summaries.push(summary);
    }
    write(dir, "sweep.json", &to_json(&summaries))?;
    Ok(summaries)
}

/// Solves the centralized problem and writes `baseline.json`.
pub fn run_baseline(cfg: &ExperimentConfig) -> Result<CentralSolution> {
    fs::create_dir_all(&cfg.out_dir)?;
    let s = setup(cfg)?;
    write(&cfg.out_dir, "baseline.json", &s.baseline.to_json())?;
    Ok(s.baseline)
}

/// Writes `dataset.csv` only.
pub fn run_gen_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let d = generate_ellipse_dataset(cfg.n_points, cfg.data_seed())?;
    write(&cfg.out_dir, "dataset.csv", &d.to_csv())?;
    Ok(d)
}

/// Process exit code for an error: 2 configuration, 3 divergence,
/// 4 solver non-convergence, 5 invariant violation, 1 anything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::InvalidParameter { .. } | Error::EmptyShard(_) => 2,
        Error::Diverged { .. } => 3,
        Error::NoConvergence { .. } | Error::EigenNoConvergence { .. } => 4,
        Error::InvariantViolation { .. } => 5,
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), cfg);
    }

    #[test]
    fn validation_names_the_field() {
        let cases = [
            ("alpha = -1.0", "alpha"),
            ("t_end = 2.0005", "t_end"),
            ("switch_period = 0.0505", "switch_period"),
            ("fraction = 1.5", "fraction"),
            ("n = 2", "n"),
            ("hop = 5", "hop"),
            ("weight_hi = 0.7", "weight_hi"),
            ("bogus = 1", "bogus"),
        ];
        for (text, field) in cases {
            match ExperimentConfig::from_toml(text) {
                Err(Error::Config { field: f, .. }) => assert_eq!(f, field, "{text}"),
                other => panic!("{text}: expected config error, got {other:?}"),
            }
        }
    }

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            exit_code(&field_err("x", "y")),
            exit_code(&Error::Diverged {
                t: 0.0,
                reason: String::new(),
            }),
            exit_code(&Error::NoConvergence {
                iterations: 0,
                grad_norm: 0.0,
                last_iterate: vec![],
            }),
            exit_code(&Error::InvariantViolation {
                check: "c",
                detail: String::new(),
            }),
        ];
        let mut sorted = codes.to_vec();
        sorted.dedup();
        assert_eq!(sorted.len(), codes.len());
        assert!(codes.iter().all(|c| *c != 0));
    }

    #[test]
    fn decay_slope_of_exponential() {
        use crate::dynamics::{Sample, SystemState};
        let mut traj = Trajectory {
            n: 1,
            m: 1,
            samples: vec![],
            switch_states: vec![],
            gamma_max: None,
            final_state: SystemState::initial(DVector::zeros(1)),
        };
        for k in 0..40 {
            let t = k as f64 * 0.1;
            traj.samples.push(Sample {
                t,
                interval: 0,
                x: DVector::zeros(1),
                y: DVector::zeros(1),
                monitors: Monitors {
                    cost: 0.0,
                    grad_sum_norm: 0.0,
                    disagreement: (-0.7 * t).exp(),
                    lyapunov: 0.0,
                    tracking_gap: 0.0,
                },
                conservation: 0.0,
            });
        }
        assert!((initial_decay_slope(&traj) + 0.7).abs() < 1e-12);
    }
}
