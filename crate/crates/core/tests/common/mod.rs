#![allow(dead_code)]

use causalsig::modal::{FeatureSource, ModalFeatures, C64};
use causalsig::simgen::{rng_for, sample_system, SimConfig};
use causalsig::ModelParams;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    rng_for(seed, 0xbeef)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| normal(rng))
}

/// Stable random system with the given evolution-form spectral radius.
pub fn random_system(m: usize, n: usize, radius: f64, seed: u64) -> ModelParams {
    let mut cfg = SimConfig::new(m, n, 2, seed);
    cfg.spectral_radius_target = radius;
    sample_system(&cfg).unwrap()
}

pub fn complex_vector(dim: usize, rng: &mut ChaCha8Rng) -> DVector<C64> {
    DVector::from_fn(dim, |_, _| C64::new(normal(rng), normal(rng)))
}

pub fn random_features(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> ModalFeatures {
    ModalFeatures::new(
        (0..count).map(|_| complex_vector(dim, rng)).collect(),
        vec![C64::new(0.5, 0.0); count],
        FeatureSource::SlowOnly,
    )
    .unwrap()
}

/// Exhaustive minimum of `sum_i cost[i][perm[i]]` over all permutations.
pub fn brute_force_assignment(cost: &DMatrix<f64>) -> f64 {
    fn recurse(cost: &DMatrix<f64>, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        let n = cost.nrows();
        if row == n {
            *best = best.min(acc);
            return;
        }
        for c in 0..n {
            if !used[c] {
                used[c] = true;
                recurse(cost, row + 1, used, acc + cost[(row, c)], best);
                used[c] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    if cost.nrows() == 0 {
        return 0.0;
    }
    recurse(cost, 0, &mut vec![false; cost.nrows()], 0.0, &mut best);
    best
}

/// `|x^H y| / (|x| |y|)` computed with explicit loops.
pub fn loop_similarity(x: &DVector<C64>, y: &DVector<C64>) -> f64 {
    let mut dot = C64::new(0.0, 0.0);
    let (mut nx, mut ny) = (0.0, 0.0);
    for k in 0..x.len() {
        dot += x[k].conj() * y[k];
        nx += x[k].norm_sqr();
        ny += y[k].norm_sqr();
    }
    dot.norm() / (nx.sqrt() * ny.sqrt())
}

/// Steps the implicit model by fixed-point iteration on `x = Q x + rhs`.
pub fn fixed_point_trajectory(params: &ModelParams, inputs: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, t) = (params.states(), inputs.ncols());
    let mut states = DMatrix::zeros(m, t);
    for k in 1..t {
        let rhs = params.a() * states.column(k - 1)
            + params.b1() * inputs.column(k)
            + params.b2() * inputs.column(k - 1);
        let mut x = rhs.clone();
        for _ in 0..500 {
            let next = params.q() * &x + &rhs;
            let change = (&next - &x).amax();
            x = next;
            if change <= 1e-16 * x.amax().max(1.0) {
                break;
            }
        }
        states.set_column(k, &x);
    }
    states
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

fn final_state(params: &ModelParams, stacked: &DVector<f64>, horizon: usize) -> DVector<f64> {
    let n = params.inputs();
    let mut inputs = DMatrix::zeros(n, horizon + 1);
    for j in 0..horizon {
        inputs.set_column(j, &stacked.rows(j * n, n));
    }
    fixed_point_trajectory(params, &inputs).column(horizon).into_owned()
}

/// Maximum of `x_region(horizon)` over stacked inputs in the unit ball, by
/// projected gradient ascent. The objective is evaluated by simulating the
/// implicit model and its gradient from unit-impulse simulations.
pub fn ascent_maximum(params: &ModelParams, region: usize, horizon: usize) -> f64 {
    let dim = params.inputs() * horizon;
    let objective = |u: &DVector<f64>| final_state(params, u, horizon)[region];
    let grad = DVector::from_fn(dim, |k, _| {
        let mut e = DVector::zeros(dim);
        e[k] = 1.0;
        objective(&e)
    });
    let mut u = DVector::from_element(dim, 0.0);
    u[0] = -1.0;
    for _ in 0..200 {
        u += &grad * 0.1;
        let norm = u.norm();
        if norm > 1.0 {
            u /= norm;
        }
    }
    objective(&u)
}
