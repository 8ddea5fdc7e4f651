//! Synthetic ground-truth systems and recordings.
//!
//! # Random numbers
//!
//! All draws come from ChaCha8 (`rand_chacha::ChaCha8Rng`). A generator is
//! created with `ChaCha8Rng::seed_from_u64(seed)` and then switched to a
//! ChaCha stream with `set_stream(stream)`, so independent quantities use
//! disjoint keystreams of one seed:
//!
//! | quantity                         | stream                      |
//! |----------------------------------|-----------------------------|
//! | system of [`sample_system`]      | `1`                         |
//! | inputs/noise of [`simulate`]     | `2`                         |
//! | cohort population template       | `3`                         |
//! | cohort subject `s` system        | `(s + 1) << 16`             |
//! | cohort subject `s`, scan `r`     | `((s + 1) << 16) + r + 1`   |
//!
//! Gaussian variates use `rand_distr::StandardNormal` (ziggurat) and
//! uniforms use `Rng::random_range`. Both are pure integer/IEEE arithmetic,
//! so results are reproducible across platforms for a fixed crate version.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ImplicitSolver, ModelParams, Recording, RegionPartition};
use crate::reachability::spectral_radius;
use crate::sysid::step_implicit;

const STREAM_SYSTEM: u64 = 1;
const STREAM_SIMULATE: u64 = 2;
const STREAM_TEMPLATE: u64 = 3;

/// Any state magnitude above this aborts a simulation.
pub const BLOW_UP: f64 = 1e12;

/// Seeded generator on a given ChaCha stream.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputPolicy {
    /// Independent standard normal samples.
    #[default]
    GaussianIid,
    /// Sum of three unit sinusoids per channel with random frequency and phase.
    Sinusoidal,
    /// Sparse unit pulses of random sign.
    Pulse,
}

impl FromStr for InputPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_iid" | "gaussian" => Ok(InputPolicy::GaussianIid),
            "sinusoidal" => Ok(InputPolicy::Sinusoidal),
            "pulse" => Ok(InputPolicy::Pulse),
            other => Err(Error::InvalidArgument(format!("unknown input policy '{other}'"))),
        }
    }
}

/// Where Gaussian noise enters a simulation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Added to emitted samples; the latent state propagates noiselessly.
    #[default]
    Observation,
    /// Added to the latent state at every step.
    Process,
}

/// Unit of `noise_sigma`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScale {
    #[default]
    Absolute,
    /// Multiple of each emitted row's standard deviation. Observation noise only.
    RelativeToSignal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub m: usize,
    pub n: usize,
    pub spectral_radius_target: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub noise_kind: NoiseKind,
    #[serde(default)]
    pub noise_scale: NoiseScale,
    #[serde(default)]
    pub input_policy: InputPolicy,
    #[serde(rename = "T")]
    pub t: usize,
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    /// Spectral radius given to the sampled `Q`.
    #[serde(default = "default_fast_radius")]
    pub fast_radius: f64,
    /// Rows of the emitted recording holding the inputs; defaults to the
    /// last `n` rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_indices: Option<Vec<usize>>,
}

fn default_fast_radius() -> f64 {
    0.3
}

impl SimConfig {
    pub fn new(m: usize, n: usize, t: usize, seed: u64) -> Self {
        Self {
            m,
            n,
            spectral_radius_target: 0.9,
            noise_sigma: 0.0,
            noise_kind: NoiseKind::Observation,
            noise_scale: NoiseScale::Absolute,
            input_policy: InputPolicy::GaussianIid,
            t,
            dt: 0.72,
            seed,
            fast_radius: default_fast_radius(),
            input_indices: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::InvalidArgument("m and n must be >= 1".into()));
        }
        if !(self.spectral_radius_target > 0.0 && self.spectral_radius_target < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "spectral_radius_target must lie in (0, 1), got {}",
                self.spectral_radius_target
            )));
        }
        if !(self.fast_radius >= 0.0 && self.fast_radius < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "fast_radius must lie in [0, 1), got {}",
                self.fast_radius
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument("noise_sigma must be >= 0".into()));
        }
        if self.noise_kind == NoiseKind::Process && self.noise_scale == NoiseScale::RelativeToSignal {
            return Err(Error::InvalidArgument("relative noise scale applies to observation noise only".into()));
        }
        if self.t < 2 {
            return Err(Error::InvalidArgument("T must be >= 2".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument("dt must be positive".into()));
        }
        self.partition().map(|_| ())
    }

    pub fn partition(&self) -> Result<RegionPartition> {
        let p = self.m + self.n;
        match &self.input_indices {
            Some(inputs) => {
                if inputs.len() != self.n {
                    return Err(Error::InvalidPartition(format!(
                        "{} input indices for n = {}",
                        inputs.len(),
                        self.n
                    )));
                }
                RegionPartition::from_inputs(p, inputs.clone())
            }
            None => RegionPartition::new((0..self.m).collect(), (self.m..p).collect(), p),
        }
    }
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Scales `Q` to `fast_radius` and `A` so that `(I - Q)^{-1} A` has the
/// target spectral radius. Returns `None` for degenerate draws.
fn normalize_system(
    mut q: DMatrix<f64>,
    mut a: DMatrix<f64>,
    b1: DMatrix<f64>,
    b2: DMatrix<f64>,
    cfg: &SimConfig,
) -> Option<ModelParams> {
    q.fill_diagonal(0.0);
    let rho_q = spectral_radius(&q);
    if rho_q > 1e-12 {
        q *= cfg.fast_radius / rho_q;
    } else {
        q.fill(0.0);
    }
    let solver = ImplicitSolver::new(&q).ok()?;
    let rho = spectral_radius(&solver.solve_matrix(&a));
    if !(rho > 1e-8 && rho.is_finite()) {
        return None;
    }
    a *= cfg.spectral_radius_target / rho;
    ModelParams::new(q, a, b1, b2, 0.0, cfg.dt).ok()
}

fn draw_system(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<ModelParams> {
    let (m, n) = (cfg.m, cfg.n);
    for _ in 0..100 {
        let q = normal_matrix(m, m, rng);
        let a = normal_matrix(m, m, rng) / (m as f64).sqrt();
        let b1 = normal_matrix(m, n, rng) / (n as f64).sqrt();
        let b2 = normal_matrix(m, n, rng) / (n as f64).sqrt();
        if let Some(p) = normalize_system(q, a, b1, b2, cfg) {
            return Ok(p);
        }
    }
    Err(Error::InvalidArgument("could not draw a non-degenerate system in 100 attempts".into()))
}

/// Random stable system: `Q` with zero diagonal and spectral radius
/// `fast_radius` (0.3 by default), `A` scaled so the evolution-form matrix
/// `(I - Q)^{-1} A` has spectral radius `spectral_radius_target`.
pub fn sample_system(cfg: &SimConfig) -> Result<ModelParams> {
    cfg.validate()?;
    draw_system(cfg, &mut rng_for(cfg.seed, STREAM_SYSTEM))
}

fn draw_inputs(policy: InputPolicy, n: usize, t: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    match policy {
        InputPolicy::GaussianIid => normal_matrix(n, t, rng),
        InputPolicy::Sinusoidal => {
            let mut u = DMatrix::zeros(n, t);
            for j in 0..n {
                for _ in 0..3 {
                    let freq: f64 = rng.random_range(0.01..0.25);
                    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    for k in 0..t {
                        u[(j, k)] += (std::f64::consts::TAU * freq * k as f64 + phase).sin();
                    }
                }
            }
            u
        }
        InputPolicy::Pulse => DMatrix::from_fn(n, t, |_, _| {
            if rng.random_bool(0.1) {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                }
            } else {
                0.0
            }
        }),
    }
}

/// Noiseless states `x(0..T)` driven by `inputs` (`n x T`) from `x(0) = 0`,
/// stepping the implicit model.
pub fn simulate_inputs(params: &ModelParams, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    run(params, inputs, None)
}

fn run(
    params: &ModelParams,
    inputs: &DMatrix<f64>,
    mut process: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<DMatrix<f64>> {
    if inputs.nrows() != params.inputs() {
        return Err(Error::Shape(format!(
            "{} input rows for a model with n = {}",
            inputs.nrows(),
            params.inputs()
        )));
    }
    let solver = ImplicitSolver::new(params.q())?;
    let (m, t) = (params.states(), inputs.ncols());
    let mut states = DMatrix::zeros(m, t);
    for k in 1..t {
        let mut next = step_implicit(
            params,
            &solver,
            &states.column(k - 1).into_owned(),
            &inputs.column(k - 1).into_owned(),
            &inputs.column(k).into_owned(),
        );
        if let Some((sigma, rng)) = process.as_mut() {
            next += DVector::from_fn(m, |_, _| *sigma * rng.sample::<f64, _>(StandardNormal));
        }
        if next.iter().any(|v| v.is_nan() || v.abs() > BLOW_UP) {
            return Err(Error::Unstable { step: k });
        }
        states.set_column(k, &next);
    }
    Ok(states)
}

fn simulate_with_rng(params: &ModelParams, cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<Recording> {
    cfg.validate()?;
    if params.states() != cfg.m || params.inputs() != cfg.n {
        return Err(Error::Shape(format!(
            "config is {}x{}, params are {}x{}",
            cfg.m,
            cfg.n,
            params.states(),
            params.inputs()
        )));
    }
    let inputs = draw_inputs(cfg.input_policy, cfg.n, cfg.t, rng);
    let process = (cfg.noise_kind == NoiseKind::Process && cfg.noise_sigma > 0.0).then_some(cfg.noise_sigma);
    let states = run(params, &inputs, process.map(|s| (s, &mut *rng)))?;
    let mut data = cfg.partition()?.merge(&states, &inputs)?;
    if cfg.noise_kind == NoiseKind::Observation && cfg.noise_sigma > 0.0 {
        let t = data.ncols() as f64;
        for mut row in data.row_iter_mut() {
            let sigma = match cfg.noise_scale {
                NoiseScale::Absolute => cfg.noise_sigma,
                NoiseScale::RelativeToSignal => {
                    let mean = row.sum() / t;
                    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t;
                    cfg.noise_sigma * var.sqrt()
                }
            };
            for v in row.iter_mut() {
                *v += sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    Recording::new(data, cfg.dt, "sim", "sim", "0")
}

/// Simulates the implicit model from `x(0) = 0` with inputs drawn per
/// `cfg.input_policy` and noise per `cfg.noise_kind`.
pub fn simulate(params: &ModelParams, cfg: &SimConfig) -> Result<Recording> {
    simulate_with_rng(params, cfg, &mut rng_for(cfg.seed, STREAM_SIMULATE))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub subjects: usize,
    pub scans: usize,
    pub sim: SimConfig,
    #[serde(default = "default_task")]
    pub task_id: String,
    /// `None`: every subject is an independent draw. `Some(v)`: subjects are
    /// a shared population template plus a random perturbation of relative
    /// Frobenius size `v` in each block.
    #[serde(default)]
    pub subject_variation: Option<f64>,
}

fn default_task() -> String {
    "rest".to_string()
}

#[derive(Clone, Debug)]
pub struct CohortSubject {
    pub subject_id: String,
    pub truth: ModelParams,
    pub recordings: Vec<Recording>,
}

pub fn subject_id(index: usize) -> String {
    format!("sub-{:03}", index + 1)
}

pub fn scan_id(index: usize) -> String {
    format!("scan{}", index + 1)
}

fn perturb(template: &DMatrix<f64>, variation: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let noise = normal_matrix(template.nrows(), template.ncols(), rng);
    let scale = variation * template.norm() / noise.norm().max(f64::MIN_POSITIVE);
    template + noise * scale
}

/// Same subject: same system, fresh inputs and noise. Different subject:
/// fresh system.
pub fn make_cohort(cfg: &CohortConfig) -> Result<Vec<CohortSubject>> {
    cfg.sim.validate()?;
    if cfg.subjects == 0 || cfg.scans == 0 {
        return Err(Error::InvalidArgument("cohort needs >= 1 subject and >= 1 scan".into()));
    }
    let template = match cfg.subject_variation {
        Some(v) if !(v >= 0.0 && v.is_finite()) => {
            return Err(Error::InvalidArgument("subject_variation must be >= 0".into()))
        }
        Some(_) => Some(draw_system(&cfg.sim, &mut rng_for(cfg.sim.seed, STREAM_TEMPLATE))?),
        None => None,
    };
    (0..cfg.subjects)
        .into_par_iter()
        .map(|s| {
            let base = ((s as u64) + 1) << 16;
            let mut rng = rng_for(cfg.sim.seed, base);
            let truth = match (&template, cfg.subject_variation) {
                (Some(t), Some(v)) => {
                    let mut attempt = 0;
                    loop {
                        let q = perturb(t.q(), v, &mut rng);
                        let a = perturb(t.a(), v, &mut rng);
                        let b1 = perturb(t.b1(), v, &mut rng);
                        let b2 = perturb(t.b2(), v, &mut rng);
                        if let Some(p) = normalize_system(q, a, b1, b2, &cfg.sim) {
                            break p;
                        }
                        attempt += 1;
                        if attempt == 100 {
                            return Err(Error::InvalidArgument("could not perturb template".into()));
                        }
                    }
                }
                _ => draw_system(&cfg.sim, &mut rng)?,
            };
            let id = subject_id(s);
            let recordings = (0..cfg.scans)
                .map(|r| {
                    let mut scan_rng = rng_for(cfg.sim.seed, base + r as u64 + 1);
                    Ok(simulate_with_rng(&truth, &cfg.sim, &mut scan_rng)?.with_labels(
                        id.clone(),
                        cfg.task_id.clone(),
                        scan_id(r),
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(CohortSubject {
                subject_id: id,
                truth,
                recordings,
            })
        })
        .collect()
}

impl fmt::Display for InputPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputPolicy::GaussianIid => "gaussian_iid",
            InputPolicy::Sinusoidal => "sinusoidal",
            InputPolicy::Pulse => "pulse",
        })
    }
}
