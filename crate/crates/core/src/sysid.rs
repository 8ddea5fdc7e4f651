//! Identification of `[Q A B1 B2]` from state and input trajectories.
//!
//! Every row `i` is an independent regression of `x_i(k)` on the regressors
//! `x_j(k)` (`j != i`), `x(k-1)`, `u(k)` and `u(k-1)` for `k = 1..T-1`.
//! The stacked regressor pool `W = [X(1:) X(:-1) U(1:) U(:-1)]` is reduced
//! once by a thin QR factorization; since each target column is itself a
//! column of `W`, every row problem collapses to a small least-squares solve
//! on the triangular factor, handled by SVD.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ImplicitSolver, ModelParams, ModelStructure};

/// Relative singular-value threshold for rank deficiency.
pub const RANK_RTOL: f64 = 1e-10;

/// Objective used by [`fit_with`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Penalty {
    /// Squared residual plus `lambda` times the squared coefficient norm,
    /// solved in closed form per row.
    Ridge,
    /// Unsquared Frobenius residual plus `lambda` times the sum of the
    /// unsquared block norms `|Q| + |A| + |B1| + |B2|`, solved by proximal
    /// gradient descent started from the ridge solution.
    GroupFrobenius { max_iter: usize, tol: f64 },
}

impl Penalty {
    pub fn group_frobenius() -> Self {
        Penalty::GroupFrobenius {
            max_iter: 5000,
            tol: 1e-12,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub lambda: f64,
    pub structure: ModelStructure,
    pub penalty: Penalty,
    /// Sampling interval stored in the fitted parameters.
    pub dt: f64,
}

impl FitOptions {
    pub fn ridge(lambda: f64) -> Self {
        Self {
            lambda,
            structure: ModelStructure::TwoTimescale,
            penalty: Penalty::Ridge,
            dt: 1.0,
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_structure(mut self, structure: ModelStructure) -> Self {
        self.structure = structure;
        self
    }

    pub fn with_penalty(mut self, penalty: Penalty) -> Self {
        self.penalty = penalty;
        self
    }
}

/// Default regularization weight for a recording with `samples` columns.
pub fn default_lambda(samples: usize) -> f64 {
    1e-3 * samples as f64
}

#[derive(Clone, Debug)]
pub struct FitReport {
    pub params: ModelParams,
    /// Frobenius norm of the one-step residual matrix.
    pub residual_fro: f64,
    pub per_row_residuals: Vec<f64>,
    /// Rows whose regressor matrix is numerically rank deficient.
    pub condition_warnings: Vec<usize>,
    /// Proximal iterations used; zero for ridge fits.
    pub iterations: usize,
}

/// Ridge fit of the two-timescale model with the stored `dt` set to 1.
pub fn fit(x: &DMatrix<f64>, u: &DMatrix<f64>, lambda: f64) -> Result<FitReport> {
    fit_with(x, u, &FitOptions::ridge(lambda))
}

pub fn fit_with(x: &DMatrix<f64>, u: &DMatrix<f64>, opts: &FitOptions) -> Result<FitReport> {
    check_data(x, u)?;
    if !(opts.lambda >= 0.0 && opts.lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", opts.lambda)));
    }
    let (m, n) = (x.nrows(), u.nrows());
    let pool = regressor_pool(x, u);
    let d = pool.ncols();
    let qr = pool.clone().qr();
    let r = qr.r();

    let rows: Vec<(DVector<f64>, bool)> = (0..m)
        .into_par_iter()
        .map(|i| {
            let cols = regressor_columns(i, m, n, opts.structure);
            let design = r.select_columns(cols.iter());
            let target = r.column(i).into_owned();
            let (beta, deficient) = ridge_solve(&design, &target, opts.lambda);
            let mut full = DVector::zeros(d);
            for (k, &c) in cols.iter().enumerate() {
                full[c] = beta[k];
            }
            (full, deficient)
        })
        .collect();

    let mut coeffs = DMatrix::zeros(m, d);
    let mut warnings = Vec::new();
    for (i, (row, deficient)) in rows.into_iter().enumerate() {
        coeffs.set_row(i, &row.transpose());
        if deficient {
            warnings.push(i);
        }
    }
    if !warnings.is_empty() {
        log::warn!("rank-deficient regressors for rows {warnings:?}; using pseudo-inverse");
    }

    let mut iterations = 0;
    if let Penalty::GroupFrobenius { max_iter, tol } = opts.penalty {
        let mask = coefficient_mask(m, n, opts.structure);
        let (refined, its) = group_frobenius_descent(&pool, x, coeffs, &mask, m, n, opts.lambda, max_iter, tol);
        coeffs = refined;
        iterations = its;
    }

    let params = params_from_coefficients(&coeffs, m, n, opts.lambda, opts.dt, opts.structure)?;
    let per_row_residuals = residual_rows(&params, x, u)?;
    let residual_fro = per_row_residuals.iter().map(|r| r * r).sum::<f64>().sqrt();
    Ok(FitReport {
        params,
        residual_fro,
        per_row_residuals,
        condition_warnings: warnings,
        iterations,
    })
}

fn check_data(x: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<()> {
    if x.nrows() == 0 || u.nrows() == 0 {
        return Err(Error::Shape("need at least one state and one input row".into()));
    }
    if x.ncols() != u.ncols() {
        return Err(Error::Shape(format!(
            "X has {} samples, U has {}",
            x.ncols(),
            u.ncols()
        )));
    }
    if x.ncols() < 2 {
        return Err(Error::Shape(format!("need T >= 2 samples, got {}", x.ncols())));
    }
    if x.iter().chain(u.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("trajectory data"));
    }
    Ok(())
}

/// `(T-1) x (2m+2n)` matrix whose rows are `[x(k); x(k-1); u(k); u(k-1)]`.
fn regressor_pool(x: &DMatrix<f64>, u: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n, t) = (x.nrows(), u.nrows(), x.ncols());
    let mut w = DMatrix::zeros(t - 1, 2 * m + 2 * n);
    w.view_mut((0, 0), (t - 1, m)).copy_from(&x.columns(1, t - 1).transpose());
    w.view_mut((0, m), (t - 1, m)).copy_from(&x.columns(0, t - 1).transpose());
    w.view_mut((0, 2 * m), (t - 1, n)).copy_from(&u.columns(1, t - 1).transpose());
    w.view_mut((0, 2 * m + n), (t - 1, n)).copy_from(&u.columns(0, t - 1).transpose());
    w
}

fn regressor_columns(i: usize, m: usize, n: usize, structure: ModelStructure) -> Vec<usize> {
    let d = 2 * m + 2 * n;
    match structure {
        ModelStructure::TwoTimescale => (0..d).filter(|&c| c != i).collect(),
        ModelStructure::SingleTimescale => (m..2 * m).chain(2 * m + n..d).collect(),
    }
}

fn coefficient_mask(m: usize, n: usize, structure: ModelStructure) -> DMatrix<f64> {
    DMatrix::from_fn(m, 2 * m + 2 * n, |i, c| {
        if regressor_columns(i, m, n, structure).contains(&c) {
            1.0
        } else {
            0.0
        }
    })
}

/// Minimizes `|b - M beta|^2 + lambda |beta|^2` through the SVD of `M`.
/// Singular values below `RANK_RTOL * s_max` are dropped when `lambda = 0`.
fn ridge_solve(design: &DMatrix<f64>, target: &DVector<f64>, lambda: f64) -> (DVector<f64>, bool) {
    let cols = design.ncols();
    let svd = design.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let sv = &svd.singular_values;
    let smax = sv.max();
    let cutoff = RANK_RTOL * smax;
    let deficient = sv.len() < cols || sv.iter().any(|&s| s <= cutoff);
    let projected = u.transpose() * target;
    let mut scaled = DVector::zeros(sv.len());
    for k in 0..sv.len() {
        let s = sv[k];
        let gain = if lambda > 0.0 {
            s / (s * s + lambda)
        } else if s > cutoff {
            1.0 / s
        } else {
            0.0
        };
        scaled[k] = gain * projected[k];
    }
    (v_t.transpose() * scaled, deficient)
}

fn params_from_coefficients(
    c: &DMatrix<f64>,
    m: usize,
    n: usize,
    lambda: f64,
    dt: f64,
    structure: ModelStructure,
) -> Result<ModelParams> {
    let mut q = c.columns(0, m).into_owned();
    q.fill_diagonal(0.0);
    ModelParams::with_structure(
        q,
        c.columns(m, m).into_owned(),
        c.columns(2 * m, n).into_owned(),
        c.columns(2 * m + n, n).into_owned(),
        lambda,
        dt,
        structure,
    )
}

#[allow(clippy::too_many_arguments)]
fn group_frobenius_descent(
    pool: &DMatrix<f64>,
    x: &DMatrix<f64>,
    start: DMatrix<f64>,
    mask: &DMatrix<f64>,
    m: usize,
    n: usize,
    lambda: f64,
    max_iter: usize,
    tol: f64,
) -> (DMatrix<f64>, usize) {
    let target = x.columns(1, x.ncols() - 1).transpose();
    let blocks = [(0, m), (m, m), (2 * m, n), (2 * m + n, n)];
    let objective = |c: &DMatrix<f64>| -> f64 {
        let res = &target - pool * c.transpose();
        let penalty: f64 = blocks.iter().map(|&(s, w)| c.columns(s, w).norm()).sum();
        res.norm() + lambda * penalty
    };
    let prox = |c: &DMatrix<f64>, t: f64| -> DMatrix<f64> {
        let mut out = c.clone();
        for &(s, w) in &blocks {
            let norm = out.columns(s, w).norm();
            let shrink = if norm > 0.0 { (1.0 - t * lambda / norm).max(0.0) } else { 0.0 };
            out.columns_mut(s, w).scale_mut(shrink);
        }
        out
    };

    let mut c = start;
    let mut value = objective(&c);
    let mut step = 1.0 / pool.norm_squared().max(f64::MIN_POSITIVE);
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        let res = &target - pool * c.transpose();
        let res_norm = res.norm();
        if res_norm == 0.0 {
            break;
        }
        let grad = -(res.transpose() * pool).component_mul(mask) / res_norm;
        let smooth = res_norm;
        let mut accepted = None;
        for _ in 0..60 {
            let candidate = prox(&(&c - &grad * step), step);
            let diff = &candidate - &c;
            let cand_res = (&target - pool * candidate.transpose()).norm();
            let model = smooth + grad.dot(&diff) + diff.norm_squared() / (2.0 * step);
            if cand_res <= model + 1e-15 * smooth.max(1.0) {
                accepted = Some(candidate);
                break;
            }
            step *= 0.5;
        }
        let Some(next) = accepted else { break };
        let next_value = objective(&next);
        if next_value > value {
            break;
        }
        let improvement = value - next_value;
        c = next;
        value = next_value;
        step *= 1.5;
        if improvement <= tol * value.max(1e-300) {
            break;
        }
    }
    (c, iterations)
}

/// Frobenius norm of `(Q - I) X(1:) + A X(:-1) + B1 U(1:) + B2 U(:-1)`.
pub fn residual_fro(params: &ModelParams, x: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<f64> {
    Ok(residual_matrix(params, x, u)?.norm())
}

/// Per-row 2-norms of the one-step residual.
pub fn residual_rows(params: &ModelParams, x: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(residual_matrix(params, x, u)?
        .row_iter()
        .map(|r| r.norm())
        .collect())
}

fn residual_matrix(params: &ModelParams, x: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != params.states() || u.nrows() != params.inputs() || x.ncols() != u.ncols() {
        return Err(Error::Shape(format!(
            "data {}x{} / {}x{} does not match model with m = {}, n = {}",
            x.nrows(),
            x.ncols(),
            u.nrows(),
            u.ncols(),
            params.states(),
            params.inputs()
        )));
    }
    if x.ncols() < 2 {
        return Err(Error::Shape("need T >= 2 samples".into()));
    }
    let t = x.ncols();
    let now = x.columns(1, t - 1);
    let prev = x.columns(0, t - 1);
    let u_now = u.columns(1, t - 1);
    let u_prev = u.columns(0, t - 1);
    Ok(params.q() * now - now + params.a() * prev + params.b1() * u_now + params.b2() * u_prev)
}

/// Solves the implicit model for `x(k)`:
/// `(I - Q)^{-1} (A x(k-1) + B1 u(k) + B2 u(k-1))`.
pub fn predict_next(
    params: &ModelParams,
    x_prev: &DVector<f64>,
    u_prev: &DVector<f64>,
    u_now: &DVector<f64>,
) -> Result<DVector<f64>> {
    if x_prev.len() != params.states() || u_prev.len() != params.inputs() || u_now.len() != params.inputs() {
        return Err(Error::Shape("state or input vector has wrong length".into()));
    }
    let solver = ImplicitSolver::new(params.q())?;
    Ok(step_implicit(params, &solver, x_prev, u_prev, u_now))
}

pub(crate) fn step_implicit(
    params: &ModelParams,
    solver: &ImplicitSolver,
    x_prev: &DVector<f64>,
    u_prev: &DVector<f64>,
    u_now: &DVector<f64>,
) -> DVector<f64> {
    let rhs = params.a() * x_prev + params.b1() * u_now + params.b2() * u_prev;
    solver.solve(&rhs)
}
