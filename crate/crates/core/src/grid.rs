//! Quadrature grids on `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nodes on `[0, 1]` with composite trapezoid weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid {
    /// Uniform grid with `cells` cells (`cells + 1` nodes).
    pub fn uniform(cells: usize) -> Result<Self> {
        if cells == 0 {
            return Err(Error::InvalidGrid("a grid needs at least one cell".into()));
        }
        let h = 1.0 / cells as f64;
        let nodes = (0..=cells).map(|i| if i == cells { 1.0 } else { i as f64 * h }).collect();
        Self::from_nodes(nodes)
    }

    /// Grid through arbitrary increasing nodes; the first must be 0 and the last 1.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidGrid("a grid needs at least two nodes".into()));
        }
        if nodes[0] != 0.0 || *nodes.last().unwrap() != 1.0 {
            return Err(Error::InvalidGrid("grid must start at 0 and end at 1".into()));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0] || !w[1].is_finite()) {
            return Err(Error::InvalidGrid("grid nodes must strictly increase".into()));
        }
        let mut weights = vec![0.0; nodes.len()];
        for (k, w) in nodes.windows(2).enumerate() {
            let half = 0.5 * (w[1] - w[0]);
            weights[k] += half;
            weights[k + 1] += half;
        }
        Ok(Self { nodes, weights })
    }

    /// Uniform grid refined so that every breakpoint is a node.
    ///
    /// Each interval between consecutive breakpoints gets at least one cell and
    /// cells of width at most `1 / min_cells`.
    pub fn through_breakpoints(min_cells: usize, breakpoints: &[f64]) -> Result<Self> {
        let min_cells = min_cells.max(1);
        let mut nodes = vec![0.0];
        let mut pts: Vec<f64> = breakpoints.iter().copied().filter(|b| *b > 0.0 && *b < 1.0).collect();
        pts.push(1.0);
        let mut left = 0.0;
        for b in pts {
            if b <= left {
                continue;
            }
            let n = ((b - left) * min_cells as f64).ceil().max(1.0) as usize;
            let h = (b - left) / n as f64;
            for i in 1..n {
                nodes.push(left + i as f64 * h);
            }
            nodes.push(b);
            left = b;
        }
        Self::from_nodes(nodes)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn cells(&self) -> usize {
        self.nodes.len() - 1
    }

    /// The common step if the grid is uniform (to a relative 1e-9).
    pub fn uniform_step(&self) -> Option<f64> {
        let h = 1.0 / self.cells() as f64;
        self.nodes
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h)
            .then_some(h)
    }

    /// Trapezoid weights for the sub-interval `[nodes[from], nodes[to]]`.
    pub fn partial_weight(&self, k: usize, from: usize, to: usize) -> f64 {
        if k < from || k > to || from == to {
            return 0.0;
        }
        let left = if k > from { self.nodes[k] - self.nodes[k - 1] } else { 0.0 };
        let right = if k < to { self.nodes[k + 1] - self.nodes[k] } else { 0.0 };
        0.5 * (left + right)
    }

    /// Composite trapezoid rule for samples at the nodes.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}
