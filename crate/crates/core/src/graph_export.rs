//! Thresholded directed edge lists from `Q` and `A`.
//!
//! Entry `(i, j)` of either matrix is the edge `j -> i`: region `j` drives
//! region `i` (concurrently for `Q`, one step later for `A`). Each matrix
//! is divided by its own largest absolute entry before thresholding, which
//! maps both into `[-1, 1]` while keeping signs and within-matrix order.

use std::cmp::Ordering;
use std::fmt;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::model::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Timescale {
    Fast,
    Slow,
}

impl fmt::Display for Timescale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Timescale::Fast => "fast",
            Timescale::Slow => "slow",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub weight: f64,
    pub timescale: Timescale,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EdgeList {
    pub edges: Vec<Edge>,
    pub threshold: f64,
}

impl EdgeList {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("source,target,weight,timescale\n");
        for e in &self.edges {
            out.push_str(&format!("{},{},{:.16e},{}\n", e.source, e.target, e.weight, e.timescale));
        }
        out
    }
}

/// `m / max|m|`, or `m` unchanged when it is all zero.
pub fn rescale_max_abs(m: &DMatrix<f64>) -> DMatrix<f64> {
    let max = m.amax();
    if max > 0.0 {
        m / max
    } else {
        m.clone()
    }
}

/// Edges with rescaled `|weight| >= threshold`, strongest first. Exact
/// zeros are never edges. `top_k` keeps the `k` strongest.
pub fn export_edges(params: &ModelParams, threshold: f64, top_k: Option<usize>) -> EdgeList {
    let mut edges = Vec::new();
    for (matrix, timescale) in [(params.q(), Timescale::Fast), (params.a(), Timescale::Slow)] {
        let scaled = rescale_max_abs(matrix);
        for j in 0..scaled.ncols() {
            for i in 0..scaled.nrows() {
                let w = scaled[(i, j)];
                if timescale == Timescale::Fast && i == j {
                    continue;
                }
                if w != 0.0 && w.abs() >= threshold {
                    edges.push(Edge {
                        source: j,
                        target: i,
                        weight: w,
                        timescale,
                    });
                }
            }
        }
    }
    edges.sort_by(|a, b| {
        b.weight
            .abs()
            .partial_cmp(&a.weight.abs())
            .unwrap_or(Ordering::Equal)
            .then(a.timescale.cmp(&b.timescale))
            .then(a.source.cmp(&b.source))
            .then(a.target.cmp(&b.target))
    });
    if let Some(k) = top_k {
        edges.truncate(k);
    }
    EdgeList { edges, threshold }
}
