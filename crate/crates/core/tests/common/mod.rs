#![allow(dead_code)]

use dsvm::baseline::{
    generate_ellipse_dataset, shard_dataset, solve_centralized, CentralSolution, Dataset,
};
use dsvm::dynamics::{local_minimizers, simulate, DynamicsConfig, Trajectory};
use dsvm::graph::{CycleHopParams, SwitchingSchedule, Topology, WeightSharing};
use dsvm::loss::{FeatureMap, LossConfig, Problem, Shard};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The reference networked experiment for one seed.
pub struct Reference {
    pub data: Dataset,
    pub problem: Problem,
    pub baseline: CentralSolution,
    pub schedule: SwitchingSchedule,
}

pub fn reference(seed: u64) -> Reference {
    let data = generate_ellipse_dataset(60, seed).unwrap();
    let shards = shard_dataset(&data, 5, 0.5, seed.wrapping_add(1), FeatureMap::Quadratic).unwrap();
    let problem = Problem::new(shards, LossConfig::new(1.5, 3.0).unwrap()).unwrap();
    let baseline = solve_centralized(&problem, 1e-10, 200_000).unwrap();
    let schedule = cycle_hop_schedule(5, 0.05, seed.wrapping_add(2));
    Reference {
        data,
        problem,
        baseline,
        schedule,
    }
}

pub fn cycle_hop_schedule(n: usize, period: f64, seed: u64) -> SwitchingSchedule {
    SwitchingSchedule::new(
        period,
        Topology::CycleHop(CycleHopParams {
            n,
            k: 2,
            weight_range: (0.0, 0.5),
            sharing: WeightSharing::Independent,
        }),
        seed,
    )
    .unwrap()
}

pub fn run_reference(r: &Reference, cfg: &DynamicsConfig) -> Trajectory {
    let x0 = local_minimizers(&r.problem).unwrap();
    simulate(&r.problem, &r.schedule, cfg, x0, Some(&r.baseline.x_bar)).unwrap()
}

/// A problem with `n` agents and state dimension `m` (`m = 4` uses the
/// quadratic map on ellipse data, other `m` use random raw features).
pub fn random_problem(n: usize, m: usize, seed: u64) -> Problem {
    let loss = LossConfig::new(1.5, 3.0).unwrap();
    if m == 4 {
        let data = generate_ellipse_dataset(40, seed).unwrap();
        return Problem::new(
            shard_dataset(&data, n, 0.5, seed, FeatureMap::Quadratic).unwrap(),
            loss,
        )
        .unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shards = (0..n)
        .map(|_| {
            let k = rng.gen_range(3..8);
            let pts: Vec<DVector<f64>> = (0..k)
                .map(|_| DVector::from_fn(m - 1, |_, _| rng.gen_range(-1.5..1.5)))
                .collect();
            let labels = (0..k)
                .map(|j| if j % 2 == 0 { 1.0 } else { -1.0 })
                .collect();
            Shard::new(m - 1, pts, labels).unwrap()
        })
        .collect();
    Problem::new(shards, loss).unwrap()
}

pub fn random_state(len: usize, scale: f64, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(len, |_, _| rng.gen_range(-scale..scale))
}

/// Laplacians of a random weight-balanced pair plus a random state's Hessian.
pub struct Instance {
    pub n: usize,
    pub m: usize,
    pub wbar: DMatrix<f64>,
    pub abar: DMatrix<f64>,
    pub h: DMatrix<f64>,
}

pub fn random_instance(n: usize, m: usize, seed: u64) -> Instance {
    let problem = random_problem(n, m, seed);
    let x = random_state(n * m, 1.0, seed ^ 0x9e37);
    let pair = if n >= 3 {
        cycle_hop_schedule(n, 0.05, seed)
            .topology_at(seed % 97)
            .unwrap()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mk = |w: f64| {
            dsvm::graph::Digraph::new(DMatrix::from_row_slice(2, 2, &[0.0, w, w, 0.0])).unwrap()
        };
        let (w, a) = (mk(rng.gen_range(0.05..0.95)), mk(rng.gen_range(0.05..0.95)));
        dsvm::graph::GraphPair::new(0, w, a).unwrap()
    };
    Instance {
        n,
        m,
        wbar: pair.w_lap.matrix().clone(),
        abar: pair.a_lap.matrix().clone(),
        h: problem.block_hessian(x.as_slice()).unwrap(),
    }
}

/// Minimum over all bijections of the largest paired distance, by enumeration.
pub fn brute_force_matching(a: &[Complex64], b: &[Complex64]) -> f64 {
    fn rec(
        i: usize,
        a: &[Complex64],
        b: &[Complex64],
        used: &mut [bool],
        cur: f64,
        best: &mut f64,
    ) {
        if cur >= *best {
            return;
        }
        if i == a.len() {
            *best = cur;
            return;
        }
        for j in 0..b.len() {
            if !used[j] {
                used[j] = true;
                rec(i + 1, a, b, used, cur.max((a[i] - b[j]).norm()), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(0, a, b, &mut vec![false; b.len()], 0.0, &mut best);
    best
}

/// Smallest singular value of `A - lambda I`, from the SVD of its real
/// embedding `[[Re, -Im], [Im, Re]]`, which repeats each singular value twice.
pub fn min_singular_shifted(a: &DMatrix<f64>, lambda: Complex64) -> f64 {
    let n = a.nrows();
    let mut re = a.clone();
    for i in 0..n {
        re[(i, i)] -= lambda.re;
    }
    let im = DMatrix::<f64>::identity(n, n) * (-lambda.im);
    let mut big = DMatrix::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(&re);
    big.view_mut((0, n), (n, n)).copy_from(&(-&im));
    big.view_mut((n, 0), (n, n)).copy_from(&im);
    big.view_mut((n, n), (n, n)).copy_from(&re);
    big.singular_values().min()
}
