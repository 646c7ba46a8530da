//! Finite-difference checks of the pool training gradients on random toy
//! pools.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use shapool::nn::Matrix;
use shapool::pool::{check_batch_gradients, Pathway, PoolArchitecture, ShadowPool};
use shapool::rng::RandomSource;

use crate::error::CliResult;

/// Loss weightings checked by default: plain cross-entropy, each
/// regularizer on its own with a weight large enough to dominate, and the
/// composite.
pub const LOSS_CASES: [(&str, f64, f64); 4] = [
    ("ce", 0.0, 0.0),
    ("ce+similarity", 5.0, 0.0),
    ("ce+orthogonality", 0.0, 5.0),
    ("composite", 0.5, 0.3),
];

/// Central-difference step. Round-off error grows like `1/step`; at 1e-6
/// it already reaches 1e-4 relative on some toy pools.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCase {
    pub pool: u64,
    pub loss: String,
    pub parameters: usize,
    pub max_rel_error: f64,
}

/// A small pool with randomly drawn shape.
pub fn toy_pool(seed: u64) -> CliResult<ShadowPool> {
    let mut rng = RandomSource::new(seed).stream("toy-shape");
    let arch = PoolArchitecture {
        input_dim: rng.random_range(2..=5),
        stem: (0..rng.random_range(0..=1)).map(|_| rng.random_range(3..=6)).collect(),
        expert: (0..rng.random_range(1..=2)).map(|_| rng.random_range(3..=5)).collect(),
        layers: rng.random_range(1..=3),
        experts: rng.random_range(2..=3),
        head: (0..rng.random_range(0..=1)).map(|_| rng.random_range(3..=5)).collect(),
        classes: rng.random_range(2..=4),
    };
    Ok(ShadowPool::new(arch, &mut RandomSource::new(seed).stream("toy-init"))?)
}

/// Checks every loss case on `pools` toy pools, with a random batch and a
/// random pathway pair per pool.
pub fn gradient_suite(pools: u64, step: f64, tolerance: f64) -> CliResult<Vec<GradCase>> {
    let mut out = Vec::new();
    for seed in 0..pools {
        let pool = toy_pool(seed)?;
        let mut rng = RandomSource::new(seed).stream("toy-batch");
        let arch = &pool.arch;
        let rows = 5;
        let x = Matrix::from_vec(
            rows,
            arch.input_dim,
            (0..rows * arch.input_dim).map(|_| rng.sample(StandardNormal)).collect(),
        )?;
        let y: Vec<usize> = (0..rows).map(|_| rng.random_range(0..arch.classes)).collect();
        let k = pool.n_pathways();
        let w1 = rng.random_range(0..k);
        let w2 = (w1 + rng.random_range(1..k)) % k;
        let (p1, p2): (Pathway, Pathway) = (pool.pathway(w1)?, pool.pathway(w2)?);
        for (name, alpha, beta) in LOSS_CASES {
            let report = check_batch_gradients(&pool, &p1, Some(&p2), &x, &y, alpha, beta, step, tolerance)?;
            out.push(GradCase {
                pool: seed,
                loss: name.into(),
                parameters: report.checked,
                max_rel_error: report.max_rel_error,
            });
        }
    }
    Ok(out)
}
