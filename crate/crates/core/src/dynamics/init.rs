use log::warn;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::loss::{local_cost, local_gradient, local_hessian, LossConfig, Problem, Shard};

const NEWTON_TOL: f64 = 1e-13;
const NEWTON_MAX_ITERS: usize = 100;

/// Each agent's minimizer of its own `f_i`, stacked.
///
/// Starting here makes `sum_i grad f_i(x_i(0)) = 0`, which together with
/// `y(0) = 0` places the conserved tracker sum at the value the optimum
/// requires. The agents generically disagree, so `x(0)` is not a
/// consensus point.
pub fn local_minimizers(problem: &Problem) -> Result<DVector<f64>> {
    let m = problem.m();
    let mut x = DVector::zeros(problem.n() * m);
    for (i, shard) in problem.shards().iter().enumerate() {
        let xi = local_minimizer(shard, problem.loss(), m)?;
        x.rows_mut(i * m, m).copy_from(&xi);
    }
    Ok(x)
}

/// Damped Newton with backtracking on `f_i`.
fn local_minimizer(shard: &Shard, loss: &LossConfig, m: usize) -> Result<DVector<f64>> {
    let mut x = DVector::zeros(m);
    if shard.is_empty() {
        return Ok(x);
    }
    let mut fx = local_cost(x.as_slice(), shard, loss)?;
    for _ in 0..NEWTON_MAX_ITERS {
        let g = local_gradient(x.as_slice(), shard, loss)?;
        if g.norm() <= NEWTON_TOL {
            return Ok(x);
        }
        let h = local_hessian(x.as_slice(), shard, loss)?;
        let dir = match h.cholesky() {
            Some(ch) => -ch.solve(&g),
            None => -g.clone(),
        };
        let slope = g.dot(&dir);
        let mut t = 1.0;
        loop {
            let cand = &x + &dir * t;
            let fc = local_cost(cand.as_slice(), shard, loss)?;
            if fc <= fx + 1e-4 * t * slope || t < 1e-12 {
                x = cand;
                fx = fc;
                break;
            }
            t *= 0.5;
        }
    }
    let g = local_gradient(x.as_slice(), shard, loss)?;
    if g.norm() > 1e-9 {
        warn!("local minimizer stopped with gradient norm {:e}", g.norm());
    }
    Ok(x)
}

/// Independent uniform draws on `[-scale, scale]` per entry.
pub fn random_heterogeneous(n: usize, m: usize, scale: f64, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(n * m, |_, _| rng.gen_range(-scale..=scale))
}
