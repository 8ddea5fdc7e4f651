//! Data model: recordings, region partitions, the continuous two-timescale
//! system and its implicit-explicit discretization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `p x T` matrix of region activities sampled every `dt` seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    data: DMatrix<f64>,
    dt: f64,
    subject_id: String,
    task_id: String,
    scan_id: String,
}

impl Recording {
    pub fn new(
        data: DMatrix<f64>,
        dt: f64,
        subject_id: impl Into<String>,
        task_id: impl Into<String>,
        scan_id: impl Into<String>,
    ) -> Result<Self> {
        if data.nrows() < 2 || data.ncols() < 2 {
            return Err(Error::Shape(format!(
                "recording must have at least 2 regions and 2 samples, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("recording data"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        Ok(Self {
            data,
            dt,
            subject_id: subject_id.into(),
            task_id: task_id.into(),
            scan_id: scan_id.into(),
        })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn scan_id(&self) -> &str {
        &self.scan_id
    }

    /// Number of regions.
    pub fn regions(&self) -> usize {
        self.data.nrows()
    }

    /// Number of samples.
    pub fn samples(&self) -> usize {
        self.data.ncols()
    }

    /// Same data under different labels.
    pub fn with_labels(
        self,
        subject_id: impl Into<String>,
        task_id: impl Into<String>,
        scan_id: impl Into<String>,
    ) -> Recording {
        Recording {
            subject_id: subject_id.into(),
            task_id: task_id.into(),
            scan_id: scan_id.into(),
            ..self
        }
    }

    /// Per-row z-scoring. Constant rows are centred but left unscaled.
    pub fn zscored(&self) -> Recording {
        let mut data = self.data.clone();
        let t = data.ncols() as f64;
        for mut row in data.row_iter_mut() {
            let mean = row.sum() / t;
            row.add_scalar_mut(-mean);
            let sd = (row.norm_squared() / t).sqrt();
            if sd > 0.0 {
                row /= sd;
            }
        }
        Recording { data, ..self.clone() }
    }

    /// Keeps columns `0, factor, 2 factor, ...` and scales `dt` accordingly.
    pub fn downsample(&self, factor: usize) -> Result<Recording> {
        if factor == 0 {
            return Err(Error::InvalidArgument("downsample factor must be >= 1".into()));
        }
        let kept: Vec<usize> = (0..self.samples()).step_by(factor).collect();
        if kept.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "downsampling {} samples by {factor} leaves fewer than 2",
                self.samples()
            )));
        }
        Ok(Recording {
            data: self.data.select_columns(kept.iter()),
            dt: self.dt * factor as f64,
            ..self.clone()
        })
    }
}

/// Assignment of regions to system states and exogenous inputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionPartition {
    state_indices: Vec<usize>,
    input_indices: Vec<usize>,
}

impl RegionPartition {
    /// Builds a partition of `p` regions; the two index lists must be
    /// disjoint and together cover `0..p`.
    pub fn new(state_indices: Vec<usize>, input_indices: Vec<usize>, p: usize) -> Result<Self> {
        if state_indices.is_empty() {
            return Err(Error::InvalidPartition("at least one state region is required".into()));
        }
        if input_indices.is_empty() {
            return Err(Error::InvalidPartition("at least one input region is required".into()));
        }
        let mut seen = vec![false; p];
        for &index in state_indices.iter().chain(&input_indices) {
            if index >= p {
                return Err(Error::IndexOutOfRange { index, len: p });
            }
            if seen[index] {
                return Err(Error::OverlappingPartition(index));
            }
            seen[index] = true;
        }
        if state_indices.len() + input_indices.len() != p {
            return Err(Error::InvalidPartition(format!(
                "{} states + {} inputs do not cover {p} regions",
                state_indices.len(),
                input_indices.len()
            )));
        }
        Ok(Self {
            state_indices,
            input_indices,
        })
    }

    /// Inputs as given; states are the remaining regions in ascending order.
    pub fn from_inputs(p: usize, input_indices: Vec<usize>) -> Result<Self> {
        let states = (0..p).filter(|i| !input_indices.contains(i)).collect();
        Self::new(states, input_indices, p)
    }

    pub fn state_indices(&self) -> &[usize] {
        &self.state_indices
    }

    pub fn input_indices(&self) -> &[usize] {
        &self.input_indices
    }

    pub fn states(&self) -> usize {
        self.state_indices.len()
    }

    pub fn inputs(&self) -> usize {
        self.input_indices.len()
    }

    pub fn regions(&self) -> usize {
        self.states() + self.inputs()
    }

    /// Row selection: `X` holds the state rows, `U` the input rows, in
    /// partition order.
    pub fn split(&self, rec: &Recording) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if rec.regions() != self.regions() {
            let bad = self
                .state_indices
                .iter()
                .chain(&self.input_indices)
                .copied()
                .find(|&i| i >= rec.regions());
            return match bad {
                Some(index) => Err(Error::IndexOutOfRange {
                    index,
                    len: rec.regions(),
                }),
                None => Err(Error::Shape(format!(
                    "partition covers {} regions, recording has {}",
                    self.regions(),
                    rec.regions()
                ))),
            };
        }
        let x = rec.data.select_rows(self.state_indices.iter());
        let u = rec.data.select_rows(self.input_indices.iter());
        Ok((x, u))
    }

    /// Inverse of [`split`](Self::split): interleaves state and input rows
    /// back into a `p x T` matrix.
    pub fn merge(&self, x: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.states() || u.nrows() != self.inputs() || x.ncols() != u.ncols() {
            return Err(Error::Shape(format!(
                "cannot merge {}x{} states and {}x{} inputs into partition of {}+{}",
                x.nrows(),
                x.ncols(),
                u.nrows(),
                u.ncols(),
                self.states(),
                self.inputs()
            )));
        }
        let mut out = DMatrix::zeros(self.regions(), x.ncols());
        for (j, &row) in self.state_indices.iter().enumerate() {
            out.set_row(row, &x.row(j));
        }
        for (j, &row) in self.input_indices.iter().enumerate() {
            out.set_row(row, &u.row(j));
        }
        Ok(out)
    }
}

/// Which regressors a fitted model carries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelStructure {
    /// Full model with concurrent (`Q`, `B1`) and lagged (`A`, `B2`) terms.
    #[default]
    TwoTimescale,
    /// Classical one-step model `x(k) = A x(k-1) + B2 u(k-1)`; `Q = 0`, `B1 = 0`.
    SingleTimescale,
}

/// The causal signature `R = [Q A B1 B2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    q: DMatrix<f64>,
    a: DMatrix<f64>,
    b1: DMatrix<f64>,
    b2: DMatrix<f64>,
    lambda: f64,
    dt: f64,
    structure: ModelStructure,
}

impl ModelParams {
    pub fn new(
        q: DMatrix<f64>,
        a: DMatrix<f64>,
        b1: DMatrix<f64>,
        b2: DMatrix<f64>,
        lambda: f64,
        dt: f64,
    ) -> Result<Self> {
        Self::with_structure(q, a, b1, b2, lambda, dt, ModelStructure::TwoTimescale)
    }

    pub fn with_structure(
        q: DMatrix<f64>,
        a: DMatrix<f64>,
        b1: DMatrix<f64>,
        b2: DMatrix<f64>,
        lambda: f64,
        dt: f64,
        structure: ModelStructure,
    ) -> Result<Self> {
        let m = q.nrows();
        let n = b1.ncols();
        if m == 0 || n == 0 {
            return Err(Error::Shape("model needs m >= 1 states and n >= 1 inputs".into()));
        }
        if q.shape() != (m, m) || a.shape() != (m, m) || b1.shape() != (m, n) || b2.shape() != (m, n) {
            return Err(Error::Shape(format!(
                "inconsistent blocks: Q {:?}, A {:?}, B1 {:?}, B2 {:?}",
                q.shape(),
                a.shape(),
                b1.shape(),
                b2.shape()
            )));
        }
        if [&q, &a, &b1, &b2].iter().any(|mat| mat.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("model parameters"));
        }
        if let Some(i) = (0..m).find(|&i| q[(i, i)] != 0.0) {
            return Err(Error::InvalidArgument(format!(
                "Q must have a zero diagonal, Q[{i},{i}] = {}",
                q[(i, i)]
            )));
        }
        if structure == ModelStructure::SingleTimescale
            && (q.iter().any(|&v| v != 0.0) || b1.iter().any(|&v| v != 0.0))
        {
            return Err(Error::InvalidArgument(
                "single-timescale models must have Q = 0 and B1 = 0".into(),
            ));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        Ok(Self {
            q,
            a,
            b1,
            b2,
            lambda,
            dt,
            structure,
        })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b1(&self) -> &DMatrix<f64> {
        &self.b1
    }

    pub fn b2(&self) -> &DMatrix<f64> {
        &self.b2
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn structure(&self) -> ModelStructure {
        self.structure
    }

    pub fn states(&self) -> usize {
        self.q.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b1.ncols()
    }

    /// `R = [Q A B1 B2]`, an `m x (2m + 2n)` matrix.
    pub fn signature(&self) -> DMatrix<f64> {
        let (m, n) = (self.states(), self.inputs());
        let mut r = DMatrix::zeros(m, 2 * m + 2 * n);
        r.view_mut((0, 0), (m, m)).copy_from(&self.q);
        r.view_mut((0, m), (m, m)).copy_from(&self.a);
        r.view_mut((0, 2 * m), (m, n)).copy_from(&self.b1);
        r.view_mut((0, 2 * m + n), (m, n)).copy_from(&self.b2);
        r
    }

    /// Same dynamics with both input matrices multiplied by `c`.
    pub fn with_scaled_inputs(&self, c: f64) -> Result<Self> {
        Self::with_structure(
            self.q.clone(),
            self.a.clone(),
            &self.b1 * c,
            &self.b2 * c,
            self.lambda,
            self.dt,
            self.structure,
        )
    }
}

/// LU factorization of `I - Q`, checked for singularity once so the implicit
/// step can be solved repeatedly.
#[derive(Clone, Debug)]
pub struct ImplicitSolver {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

/// Relative threshold below which `I - Q` is treated as singular.
pub const SINGULAR_RTOL: f64 = 1e-12;

impl ImplicitSolver {
    pub fn new(q: &DMatrix<f64>) -> Result<Self> {
        let m = q.nrows();
        let i_minus_q = DMatrix::identity(m, m) - q;
        let sv = i_minus_q.singular_values();
        let smax = sv.max();
        let smin = sv.min();
        if smin.is_nan() || smin <= SINGULAR_RTOL * smax.max(1.0) {
            return Err(Error::Singular {
                min_singular_value: smin,
            });
        }
        Ok(Self { lu: i_minus_q.lu() })
    }

    /// Solves `(I - Q) x = rhs`.
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.lu.solve(rhs).expect("I - Q checked non-singular")
    }

    /// Solves `(I - Q) X = rhs` column-wise.
    pub fn solve_matrix(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.lu.solve(rhs).expect("I - Q checked non-singular")
    }
}

/// Continuous-time system with slow (`F_s`, `G_s`) and fast (`F_f`, `G_f`)
/// parts, to be sampled every `dt` with a fast sub-interval `tau`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousModel {
    pub f_s: DMatrix<f64>,
    pub f_f: DMatrix<f64>,
    pub g_s: DMatrix<f64>,
    pub g_f: DMatrix<f64>,
    pub tau: f64,
    pub dt: f64,
}

impl ContinuousModel {
    pub fn new(
        f_s: DMatrix<f64>,
        f_f: DMatrix<f64>,
        g_s: DMatrix<f64>,
        g_f: DMatrix<f64>,
        tau: f64,
        dt: f64,
    ) -> Result<Self> {
        let cm = Self {
            f_s,
            f_f,
            g_s,
            g_f,
            tau,
            dt,
        };
        cm.validate()?;
        Ok(cm)
    }

    fn validate(&self) -> Result<()> {
        let m = self.f_s.nrows();
        let n = self.g_s.ncols();
        if self.f_s.shape() != (m, m)
            || self.f_f.shape() != (m, m)
            || self.g_s.shape() != (m, n)
            || self.g_f.shape() != (m, n)
        {
            return Err(Error::Shape("continuous model blocks have inconsistent shapes".into()));
        }
        let all = [&self.f_s, &self.f_f, &self.g_s, &self.g_f];
        if all.iter().any(|mat| mat.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("continuous model"));
        }
        if !(self.tau > 0.0 && self.tau < self.dt && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < tau < dt, got tau = {}, dt = {}",
                self.tau, self.dt
            )));
        }
        Ok(())
    }

    /// Ratio of slow to fast sub-interval length, `(dt - tau) / tau`.
    pub fn timescale_ratio(&self) -> f64 {
        (self.dt - self.tau) / self.tau
    }

    /// Implicit-explicit discretization: explicit Euler over `dt - tau`,
    /// implicit Euler over `tau`.
    ///
    /// `Q = tau F_f`, `A = I + (dt - tau) F_s`, `B1 = tau G_f`,
    /// `B2 = (dt - tau) G_s`. `F_f` must have a zero diagonal.
    pub fn discretize(&self) -> Result<ModelParams> {
        self.validate()?;
        let m = self.f_s.nrows();
        if let Some(i) = (0..m).find(|&i| self.f_f[(i, i)] != 0.0) {
            return Err(Error::InvalidArgument(format!(
                "F_f must have a zero diagonal (Q_ii = 0), F_f[{i},{i}] = {}",
                self.f_f[(i, i)]
            )));
        }
        let slow = self.dt - self.tau;
        ModelParams::new(
            &self.f_f * self.tau,
            DMatrix::identity(m, m) + &self.f_s * slow,
            &self.g_f * self.tau,
            &self.g_s * slow,
            0.0,
            self.dt,
        )
    }

    /// Recovers the continuous matrices from discretized parameters given `tau`.
    pub fn from_params(params: &ModelParams, tau: f64) -> Result<Self> {
        let dt = params.dt();
        let slow = dt - tau;
        let m = params.states();
        Self::new(
            (params.a() - DMatrix::identity(m, m)) / slow,
            params.q() / tau,
            params.b2() / slow,
            params.b1() / tau,
            tau,
            dt,
        )
    }
}
