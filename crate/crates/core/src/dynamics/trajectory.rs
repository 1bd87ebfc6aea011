use std::fmt::Write as _;

use nalgebra::DVector;

use super::{Monitors, SystemState};

/// One recorded point of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    /// Switching interval active during the step that produced this sample.
    pub interval: u64,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub monitors: Monitors,
    /// Drift of `sum_i (y_i - grad f_i(x_i))` from its initial value.
    pub conservation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub n: usize,
    pub m: usize,
    pub samples: Vec<Sample>,
    /// `(interval, state at its first instant)`, when requested.
    pub switch_states: Vec<(u64, SystemState)>,
    /// Largest `||H||_inf` seen along the run, when switch states are kept.
    pub gamma_max: Option<f64>,
    pub final_state: SystemState,
}

impl Trajectory {
    pub(crate) fn new(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            samples: Vec::new(),
            switch_states: Vec::new(),
            gamma_max: None,
            final_state: SystemState::initial(DVector::zeros(n * m)),
        }
    }

    pub fn last(&self) -> &Sample {
        self.samples
            .last()
            .expect("a trajectory always holds its initial sample")
    }

    /// Largest conservation drift over all samples.
    pub fn max_conservation_drift(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.conservation)
            .fold(0.0, f64::max)
    }

    /// Header `t,x_0,...,F,grad_sum_norm,disagreement,lyapunov`, then one row per sample.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for k in 0..self.n * self.m {
            let _ = write!(out, ",x_{k}");
        }
        out.push_str(",F,grad_sum_norm,disagreement,lyapunov\n");
        for s in &self.samples {
            let _ = write!(out, "{:e}", s.t);
            for v in s.x.iter() {
                let _ = write!(out, ",{v:e}");
            }
            let mo = &s.monitors;
            let _ = writeln!(
                out,
                ",{:e},{:e},{:e},{:e}",
                mo.cost, mo.grad_sum_norm, mo.disagreement, mo.lyapunov
            );
        }
        out
    }
}
