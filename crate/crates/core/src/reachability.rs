//! Evolution form and reachability landscapes.
//!
//! The implicit model is rewritten as the explicit recursion
//! `x(k) = Â x(k-1) + B̂1 u(k) + B̂2 u(k-1)` with `Â = (I - Q)^{-1} A` and
//! `B̂i = (I - Q)^{-1} Bi`. From `x(0) = 0` the terminal state is linear in
//! the stacked inputs, `x(T_M) = G vec(u(0), ..., u(T_M - 1))`, so the
//! largest reachable value of region `i` under a unit bound on the stacked
//! input is the dual norm of row `i` of `G`: the 2-norm for an energy
//! bound, the 1-norm for a per-sample box bound.

use std::fmt;
use std::str::FromStr;

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ImplicitSolver, ModelParams};

pub const GRID_SIDE: usize = 12;

#[derive(Clone, Debug)]
pub struct EvolutionForm {
    pub a_hat: DMatrix<f64>,
    pub b1_hat: DMatrix<f64>,
    pub b2_hat: DMatrix<f64>,
    pub spectral_radius: f64,
}

pub fn to_evolution_form(params: &ModelParams) -> Result<EvolutionForm> {
    let solver = ImplicitSolver::new(params.q())?;
    let a_hat = solver.solve_matrix(params.a());
    let spectral_radius = spectral_radius(&a_hat);
    Ok(EvolutionForm {
        b1_hat: solver.solve_matrix(params.b1()),
        b2_hat: solver.solve_matrix(params.b2()),
        a_hat,
        spectral_radius,
    })
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

impl EvolutionForm {
    pub fn states(&self) -> usize {
        self.a_hat.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b1_hat.ncols()
    }

    pub fn step(&self, x_prev: &DVector<f64>, u_prev: &DVector<f64>, u_now: &DVector<f64>) -> DVector<f64> {
        &self.a_hat * x_prev + &self.b1_hat * u_now + &self.b2_hat * u_prev
    }

    /// States `x(0..T)` driven by the columns of `inputs`, from `x(0) = 0`.
    pub fn simulate(&self, inputs: &DMatrix<f64>) -> DMatrix<f64> {
        let t = inputs.ncols();
        let mut states = DMatrix::zeros(self.states(), t);
        for k in 1..t {
            let next = self.step(
                &states.column(k - 1).into_owned(),
                &inputs.column(k - 1).into_owned(),
                &inputs.column(k).into_owned(),
            );
            states.set_column(k, &next);
        }
        states
    }
}

/// Input norm bounding the stacked input sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Euclidean norm of the stacked input vector at most 1.
    #[default]
    Energy2,
    /// Every input sample bounded by 1 in absolute value.
    BoxInf,
}

impl fmt::Display for NormMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormMode::Energy2 => "energy2",
            NormMode::BoxInf => "boxinf",
        })
    }
}

impl FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "energy2" => Ok(NormMode::Energy2),
            "boxinf" => Ok(NormMode::BoxInf),
            other => Err(Error::InvalidArgument(format!("unknown norm mode '{other}'"))),
        }
    }
}

/// Treatment of `u(T_M)`, which enters `x(T_M)` through `B̂1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalInput {
    /// `u(T_M) = 0`; only `u(0..T_M-1)` are free.
    #[default]
    Zero,
    /// `u(T_M)` is free and counted in the bound.
    Bounded,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReachOptions {
    pub horizon: usize,
    pub mode: NormMode,
    pub terminal_input: TerminalInput,
}

impl Default for ReachOptions {
    fn default() -> Self {
        Self {
            horizon: 20,
            mode: NormMode::Energy2,
            terminal_input: TerminalInput::Zero,
        }
    }
}

impl ReachOptions {
    pub fn new(horizon: usize, mode: NormMode) -> Self {
        Self {
            horizon,
            mode,
            ..Self::default()
        }
    }

    /// Number of input samples that are free variables.
    pub fn free_steps(&self) -> usize {
        match self.terminal_input {
            TerminalInput::Zero => self.horizon,
            TerminalInput::Bounded => self.horizon + 1,
        }
    }
}

/// The map `G` from stacked inputs to `x(T_M)`. Column block `j` (width
/// `n`) multiplies `u(j)`:
/// `G_j = Â^{T_M-1-j} B̂2 + [j >= 1] Â^{T_M-j} B̂1`, plus `G_{T_M} = B̂1`
/// when the terminal input is free.
pub fn input_to_state_map(ev: &EvolutionForm, opts: &ReachOptions) -> Result<DMatrix<f64>> {
    let horizon = opts.horizon;
    if horizon == 0 {
        return Err(Error::InvalidArgument("reachability horizon must be >= 1".into()));
    }
    let (m, n) = (ev.states(), ev.inputs());
    let mut powers = Vec::with_capacity(horizon + 1);
    powers.push(DMatrix::identity(m, m));
    for k in 1..=horizon {
        let next = &ev.a_hat * &powers[k - 1];
        powers.push(next);
    }
    let steps = opts.free_steps();
    let mut g = DMatrix::zeros(m, n * steps);
    for j in 0..steps {
        let mut block = DMatrix::zeros(m, n);
        if j < horizon {
            block += &powers[horizon - 1 - j] * &ev.b2_hat;
        }
        if j >= 1 {
            block += &powers[horizon - j] * &ev.b1_hat;
        }
        g.view_mut((0, j * n), (m, n)).copy_from(&block);
    }
    Ok(g)
}

/// Cell grid of normalized values; `None` marks an unused cell.
pub type Grid = [[Option<f64>; GRID_SIDE]; GRID_SIDE];

#[derive(Clone, Debug)]
pub struct ReachabilityLandscape {
    /// Maximum of `x_i(T_M)` for each region.
    pub values: Vec<f64>,
    pub horizon: usize,
    pub norm_mode: NormMode,
    /// Default row-major layout; `None` when there are more than 144 regions.
    pub grid: Option<Grid>,
}

pub fn reachability_landscape(params: &ModelParams, horizon: usize, mode: NormMode) -> Result<ReachabilityLandscape> {
    reachability_landscape_with(params, &ReachOptions::new(horizon, mode))
}

pub fn reachability_landscape_with(params: &ModelParams, opts: &ReachOptions) -> Result<ReachabilityLandscape> {
    let ev = to_evolution_form(params)?;
    let g = input_to_state_map(&ev, opts)?;
    let values = match opts.mode {
        NormMode::Energy2 => g.row_iter().map(|r| r.norm()).collect(),
        NormMode::BoxInf => {
            let mut values = Vec::with_capacity(g.nrows());
            for (i, row) in g.row_iter().enumerate() {
                let lp = box_lp_max(&row.transpose())?;
                let closed = row.lp_norm(1);
                if (lp - closed).abs() > 1e-9 * closed.max(1.0) {
                    return Err(Error::LinearProgram(format!(
                        "region {i}: LP optimum {lp} disagrees with closed form {closed}"
                    )));
                }
                values.push(lp);
            }
            values
        }
    };
    let m = values.len();
    let grid = if m <= GRID_SIDE * GRID_SIDE {
        Some(grid_layout(&values, &GridLayout::row_major(m)?)?)
    } else {
        None
    };
    Ok(ReachabilityLandscape {
        values,
        horizon: opts.horizon,
        norm_mode: opts.mode,
        grid,
    })
}

/// `max g^T u` subject to `-1 <= u_j <= 1`, solved as a linear program.
pub fn box_lp_max(g: &DVector<f64>) -> Result<f64> {
    let mut problem = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = g.iter().map(|&c| problem.add_var(c, (-1.0, 1.0))).collect();
    // A redundant row keeps the constraint matrix non-empty.
    let row: Vec<_> = vars.iter().map(|&v| (v, 1.0)).collect();
    problem.add_constraint(row.as_slice(), ComparisonOp::Le, g.len() as f64);
    let solution = problem.solve().map_err(|e| Error::LinearProgram(e.to_string()))?;
    Ok(g.iter().zip(&vars).map(|(c, v)| c * solution[*v]).sum())
}

/// Input sequence attaining the landscape value of `region`, as an
/// `n x (T_M + 1)` matrix whose column `k` is `u(k)`.
pub fn maximizing_input(params: &ModelParams, region: usize, opts: &ReachOptions) -> Result<DMatrix<f64>> {
    let ev = to_evolution_form(params)?;
    let g = input_to_state_map(&ev, opts)?;
    if region >= g.nrows() {
        return Err(Error::IndexOutOfRange {
            index: region,
            len: g.nrows(),
        });
    }
    let row = g.row(region).transpose();
    let stacked: DVector<f64> = match opts.mode {
        NormMode::Energy2 => {
            let norm = row.norm();
            if norm > 0.0 {
                row / norm
            } else {
                DVector::zeros(row.len())
            }
        }
        NormMode::BoxInf => row.map(|v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 }),
    };
    let n = ev.inputs();
    let mut seq = DMatrix::zeros(n, opts.horizon + 1);
    for j in 0..opts.free_steps() {
        seq.set_column(j, &stacked.rows(j * n, n));
    }
    Ok(seq)
}

/// Region-to-cell assignment on the 12x12 grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GridLayout {
    /// `(row, col)` of each region, indexed by region.
    pub cells: Vec<(usize, usize)>,
}

impl GridLayout {
    pub fn row_major(m: usize) -> Result<Self> {
        if m > GRID_SIDE * GRID_SIDE {
            return Err(Error::Layout(format!("{m} regions do not fit a {GRID_SIDE}x{GRID_SIDE} grid")));
        }
        Ok(Self {
            cells: (0..m).map(|r| (r / GRID_SIDE, r % GRID_SIDE)).collect(),
        })
    }
}

/// Places max-normalized values on the grid.
pub fn grid_layout(values: &[f64], layout: &GridLayout) -> Result<Grid> {
    if layout.cells.len() < values.len() {
        return Err(Error::Layout(format!(
            "region {} has no cell",
            layout.cells.len()
        )));
    }
    if layout.cells.len() > values.len() {
        return Err(Error::Layout(format!(
            "layout has {} cells for {} regions",
            layout.cells.len(),
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("landscape values"));
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    let mut grid: Grid = [[None; GRID_SIDE]; GRID_SIDE];
    for (region, (&value, &(r, c))) in values.iter().zip(&layout.cells).enumerate() {
        if r >= GRID_SIDE || c >= GRID_SIDE {
            return Err(Error::Layout(format!("cell ({r}, {c}) of region {region} is off the grid")));
        }
        if grid[r][c].is_some() {
            return Err(Error::Layout(format!("cell ({r}, {c}) assigned twice")));
        }
        grid[r][c] = Some(if max > 0.0 { value / max } else { 0.0 });
    }
    Ok(grid)
}
