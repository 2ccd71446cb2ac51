//! Trapezoidal discretization of the large-jump integral
//! `∫_{|y|>ε} [w(x+y) − w(x)] k(y) dy`.
//!
//! Nodes are dense near the origin, where the density is largest, and
//! coarser in the tails:
//!
//! ```text
//! y_j = 0.01·j               1 ≤ j < 50
//!       0.05·(j − 50) + 0.5  50 ≤ j < 60
//!       0.2·(j − 60) + 1     60 ≤ j < 75
//! y_{-j} = −y_j
//! ```
//!
//! Each side is an ordinary trapezoid rule on `[0.01, 3.8]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vg_model::{LevyKernel, VgParams};

/// Which node set to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    #[default]
    Standard,
    /// Every gap of the standard grid halved, same support.
    Fine,
}

/// Quadrature nodes `y_j` with their trapezoid weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    eps: f64,
}

fn positive_nodes() -> Vec<f64> {
    (1..75)
        .map(|j| match j {
            1..=49 => 0.01 * j as f64,
            50..=59 => 0.05 * (j - 50) as f64 + 0.5,
            _ => 0.2 * (j - 60) as f64 + 1.0,
        })
        .collect()
}

impl QuadGrid {
    /// The standard 148-node grid.
    pub fn build() -> Self {
        Self::from_positive(positive_nodes())
    }

    /// The standard grid with each gap split in two (294 nodes).
    pub fn build_fine() -> Self {
        let coarse = positive_nodes();
        let mut fine = Vec::with_capacity(2 * coarse.len() - 1);
        for pair in coarse.windows(2) {
            fine.push(pair[0]);
            fine.push(0.5 * (pair[0] + pair[1]));
        }
        fine.push(*coarse.last().unwrap());
        Self::from_positive(fine)
    }

    pub fn of_kind(kind: GridKind) -> Self {
        match kind {
            GridKind::Standard => Self::build(),
            GridKind::Fine => Self::build_fine(),
        }
    }

    fn from_positive(pos: Vec<f64>) -> Self {
        let m = pos.len();
        let mut pos_w = vec![0.0; m];
        pos_w[0] = (pos[1] - pos[0]) / 2.0;
        for j in 1..m - 1 {
            pos_w[j] = (pos[j + 1] - pos[j - 1]) / 2.0;
        }
        pos_w[m - 1] = (pos[m - 1] - pos[m - 2]) / 2.0;

        let mut nodes = Vec::with_capacity(2 * m);
        let mut weights = Vec::with_capacity(2 * m);
        for j in (0..m).rev() {
            nodes.push(-pos[j]);
            weights.push(pos_w[j]);
        }
        nodes.extend_from_slice(&pos);
        weights.extend_from_slice(&pos_w);
        Self {
            nodes,
            weights,
            eps: pos[0],
        }
    }

    /// Offsets in increasing order, negative side first.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Smallest `|y_j|`; the inner/outer split radius the grid respects.
    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `k(y_j)·weight_j` for every node, i.e. the coefficient of
    /// `w(x + y_j)` in the trapezoid sum.
    pub fn kernel_weights(&self, kernel: &LevyKernel) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.kernel_weights_into(kernel, &mut out);
        out
    }

    pub fn kernel_weights_into(&self, kernel: &LevyKernel, out: &mut [f64]) {
        for ((o, &y), &wt) in out.iter_mut().zip(&self.nodes).zip(&self.weights) {
            *o = kernel.density(y) * wt;
        }
    }

    /// Trapezoid approximation of `∫_{|y|>ε} [w(x+y) − w(x)] k(y) dy` from
    /// the solution values at the shifted points.
    pub fn outer_integral(&self, w_at_shifts: &[f64], w_at_x: f64, p: &VgParams) -> Result<f64> {
        if w_at_shifts.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: w_at_shifts.len(),
            });
        }
        let kernel = p.kernel()?;
        Ok(w_at_shifts
            .iter()
            .zip(&self.nodes)
            .zip(&self.weights)
            .map(|((&w, &y), &wt)| (w - w_at_x) * kernel.density(y) * wt)
            .sum())
    }
}
