//! Uniform space-time lattices and boundary bookkeeping.

use serde::{Deserialize, Serialize};

use crate::geometry::{Domain, Metric};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeGrid {
    pub dim: usize,
    /// Nodes per spatial axis (including boundary nodes).
    pub n: Vec<usize>,
    pub dx: Vec<f64>,
    pub nt: usize,
    pub dt: f64,
    pub lo: Vec<f64>,
    pub t_max: f64,
}

impl SpaceTimeGrid {
    /// Builds a grid with the given resolution and CFL number against the
    /// metric's maximal wave speed.
    pub fn new(metric: &Metric, n_per_axis: usize, t_max: f64, cfl: f64) -> Self {
        let d = metric.dim;
        let n = vec![n_per_axis; d];
        let dx: Vec<f64> = (0..d)
            .map(|k| (metric.domain.hi[k] - metric.domain.lo[k]) / (n_per_axis - 1) as f64)
            .collect();
        let vmax = metric.max_wave_speed(9);
        let dx_min = dx.iter().cloned().fold(f64::INFINITY, f64::min);
        let dt_raw = cfl * dx_min / vmax;
        let nt = (t_max / dt_raw).ceil() as usize;
        let dt = t_max / nt as f64;
        SpaceTimeGrid {
            dim: d,
            n,
            dx,
            nt,
            dt,
            lo: metric.domain.lo.clone(),
            t_max,
        }
    }

    pub fn nn(&self) -> usize {
        self.n.iter().product()
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1usize; self.dim];
        for k in 1..self.dim {
            s[k] = s[k - 1] * self.n[k - 1];
        }
        s
    }

    pub fn node_coords(&self, flat: usize) -> Vec<f64> {
        let mut rem = flat;
        (0..self.dim)
            .map(|k| {
                let i = rem % self.n[k];
                rem /= self.n[k];
                self.lo[k] + i as f64 * self.dx[k]
            })
            .collect()
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let mut rem = flat;
        (0..self.dim)
            .map(|k| {
                let i = rem % self.n[k];
                rem /= self.n[k];
                i
            })
            .collect()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        let strides = self.strides();
        idx.iter().zip(&strides).map(|(i, s)| i * s).sum()
    }

    pub fn is_boundary(&self, flat: usize) -> bool {
        let idx = self.multi_index(flat);
        idx.iter()
            .zip(&self.n)
            .any(|(i, nk)| *i == 0 || *i + 1 == *nk)
    }

    /// Unique boundary node indices, in flat-index order.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.nn()).filter(|&i| self.is_boundary(i)).collect()
    }

    /// Trapezoid surface weight of a boundary node on its face(s): product of
    /// per-axis weights over the tangential axes, summed over the faces the
    /// node belongs to. Integrates over the whole boundary.
    pub fn boundary_weight(&self, flat: usize) -> f64 {
        let idx = self.multi_index(flat);
        let mut total = 0.0;
        for k in 0..self.dim {
            if idx[k] == 0 || idx[k] + 1 == self.n[k] {
                // face with normal along axis k
                let mut w = 1.0;
                for j in 0..self.dim {
                    if j == k {
                        continue;
                    }
                    w *= crate::util::trapezoid_weight(idx[j], self.n[j]) * self.dx[j];
                }
                total += w;
            }
        }
        total
    }

    /// Trapezoid volume weight of a node.
    pub fn volume_weight(&self, flat: usize) -> f64 {
        let idx = self.multi_index(flat);
        let mut w = 1.0;
        for k in 0..self.dim {
            w *= crate::util::trapezoid_weight(idx[k], self.n[k]) * self.dx[k];
        }
        w
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.nt).map(move |i| i as f64 * self.dt)
    }

    pub fn domain(&self) -> Domain {
        let hi: Vec<f64> = self
            .lo
            .iter()
            .zip(self.n.iter().zip(&self.dx))
            .map(|(lo, (n, dx))| lo + (n - 1) as f64 * dx)
            .collect();
        Domain::new(self.lo.clone(), hi)
    }

    pub fn same_layout(&self, other: &SpaceTimeGrid) -> bool {
        self.n == other.n && self.nt == other.nt && (self.dt - other.dt).abs() < 1e-14
    }
}
