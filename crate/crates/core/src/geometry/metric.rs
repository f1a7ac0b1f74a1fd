//! Spatial metrics and the effective (characteristic) metric of the wave
//! operator.
//!
//! A `Metric` carries the spatial tensor g and the wave-speed-squared field
//! a. Rays, charts and beams all live in the effective metric G = g / a,
//! whose unit-speed geodesics lift to characteristic (null) curves
//! (t0 + t, gamma(t)) of the operator  d_tt - a * Laplace_g.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::GeometryError;
use crate::fields::FieldSpec;
use crate::Result;

/// Axis-aligned box domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Domain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        Domain { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn diameter(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (h - l) * (h - l))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(xi, (l, h))| *xi >= *l && *xi <= *h)
    }

    /// Signed distance-like exit indicator: max over axes of how far x sits
    /// outside the box (negative inside).
    pub fn excess(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(xi, (l, h))| (l - xi).max(xi - h))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Diagonal metric data sampled on a uniform lattice, loaded from CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMetricData {
    pub shape: Vec<usize>,
    pub origin: Vec<f64>,
    pub spacing: Vec<f64>,
    /// Row-major diagonal entries g11..gdd per node, then a.
    pub g_diag: Vec<Vec<f64>>,
    pub a: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricKind {
    /// g = identity, a = 1.
    Flat,
    /// g = identity, a given by a closed-form field.
    Conformal { a: FieldSpec },
    /// Diagonal g and a sampled on a lattice (multilinear interpolation).
    Grid { data: GridMetricData },
}

/// JSON descriptor for a metric: `{"dim": d, "domain": [[lo...],[hi...]], "kind": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDescriptor {
    pub dim: usize,
    pub domain: [Vec<f64>; 2],
    #[serde(flatten)]
    pub kind: MetricKindDescriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricKindDescriptor {
    Flat,
    Conformal { a: FieldSpec },
    Grid { path: String },
}

#[derive(Debug, Clone)]
pub struct Metric {
    pub dim: usize,
    pub domain: Domain,
    pub kind: MetricKind,
}

impl Metric {
    pub fn flat(dim: usize, domain: Domain) -> Self {
        Metric {
            dim,
            domain,
            kind: MetricKind::Flat,
        }
    }

    pub fn conformal(dim: usize, domain: Domain, a: FieldSpec) -> Self {
        Metric {
            dim,
            domain,
            kind: MetricKind::Conformal { a },
        }
    }

    pub fn from_descriptor(desc: &MetricDescriptor, base_dir: &Path) -> Result<Self> {
        let domain = Domain::new(desc.domain[0].clone(), desc.domain[1].clone());
        let kind = match &desc.kind {
            MetricKindDescriptor::Flat => MetricKind::Flat,
            MetricKindDescriptor::Conformal { a } => MetricKind::Conformal { a: a.clone() },
            MetricKindDescriptor::Grid { path } => MetricKind::Grid {
                data: load_grid_csv(&base_dir.join(path), desc.dim)?,
            },
        };
        Ok(Metric {
            dim: desc.dim,
            domain,
            kind,
        })
    }

    pub fn is_flat(&self) -> bool {
        matches!(self.kind, MetricKind::Flat)
    }

    /// Spatial metric tensor g(x).
    pub fn g(&self, x: &[f64]) -> DMatrix<f64> {
        match &self.kind {
            MetricKind::Flat | MetricKind::Conformal { .. } => DMatrix::identity(self.dim, self.dim),
            MetricKind::Grid { data } => {
                let mut m = DMatrix::zeros(self.dim, self.dim);
                for i in 0..self.dim {
                    m[(i, i)] = grid_interp(data, x, i);
                }
                m
            }
        }
    }

    /// Wave speed squared a(x) > 0.
    pub fn a(&self, x: &[f64]) -> f64 {
        match &self.kind {
            MetricKind::Flat => 1.0,
            MetricKind::Conformal { a } => a.eval(x),
            MetricKind::Grid { data } => grid_interp(data, x, self.dim),
        }
    }

    pub fn sqrt_det_g(&self, x: &[f64]) -> f64 {
        match &self.kind {
            MetricKind::Flat | MetricKind::Conformal { .. } => 1.0,
            MetricKind::Grid { data } => {
                let mut det = 1.0;
                for i in 0..self.dim {
                    det *= grid_interp(data, x, i);
                }
                det.abs().sqrt()
            }
        }
    }

    /// Inverse of g.
    pub fn g_inv(&self, x: &[f64]) -> DMatrix<f64> {
        match &self.kind {
            MetricKind::Flat | MetricKind::Conformal { .. } => DMatrix::identity(self.dim, self.dim),
            MetricKind::Grid { .. } => self
                .g(x)
                .try_inverse()
                .expect("grid metric not invertible"),
        }
    }

    /// Effective spatial metric G = g / a; its unit-speed geodesics are the
    /// spatial projections of characteristic curves.
    pub fn effective_g(&self, x: &[f64]) -> DMatrix<f64> {
        self.g(x) / self.a(x)
    }

    /// Inverse effective metric G^{-1} = a * g^{-1}.
    pub fn effective_g_inv(&self, x: &[f64]) -> DMatrix<f64> {
        self.g_inv(x) * self.a(x)
    }

    /// |v|_G for the effective metric.
    pub fn effective_norm(&self, x: &[f64], v: &[f64]) -> f64 {
        let g = self.effective_g(x);
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += g[(i, j)] * v[i] * v[j];
            }
        }
        s.sqrt()
    }

    /// Normalize v to unit effective length.
    pub fn to_unit(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let n = self.effective_norm(x, v);
        v.iter().map(|vi| vi / n).collect()
    }

    /// Checks the unit-tangent precondition to 1e-8.
    pub fn check_unit(&self, x: &[f64], v: &[f64]) -> Result<()> {
        let n = self.effective_norm(x, v);
        if (n - 1.0).abs() > 1e-8 {
            return Err(GeometryError::NonUnitTangent { norm: n }.into());
        }
        Ok(())
    }

    /// Max characteristic speed sup sqrt(a * lambda_max(g^{-1})) over sample
    /// points; used for CFL limits.
    pub fn max_wave_speed(&self, samples_per_axis: usize) -> f64 {
        let mut vmax: f64 = 0.0;
        let n = samples_per_axis.max(2);
        let mut idx = vec![0usize; self.dim];
        loop {
            let x: Vec<f64> = (0..self.dim)
                .map(|k| {
                    self.domain.lo[k]
                        + (self.domain.hi[k] - self.domain.lo[k]) * idx[k] as f64
                            / (n - 1) as f64
                })
                .collect();
            let ginv = self.g_inv(&x);
            let lam = ginv.symmetric_eigenvalues().iter().fold(0.0f64, |m, &l| m.max(l));
            vmax = vmax.max((self.a(&x) * lam).sqrt());
            // advance multi-index
            let mut k = 0;
            loop {
                idx[k] += 1;
                if idx[k] < n {
                    break;
                }
                idx[k] = 0;
                k += 1;
                if k == self.dim {
                    return vmax;
                }
            }
        }
    }
}

fn grid_interp(data: &GridMetricData, x: &[f64], component: usize) -> f64 {
    let d = data.shape.len();
    // clamped multilinear interpolation
    let mut base = vec![0usize; d];
    let mut frac = vec![0.0f64; d];
    for k in 0..d {
        let u = ((x[k] - data.origin[k]) / data.spacing[k]).clamp(0.0, (data.shape[k] - 1) as f64);
        let i = (u.floor() as usize).min(data.shape[k] - 2.max(1) - 0);
        let i = i.min(data.shape[k].saturating_sub(2));
        base[k] = i;
        frac[k] = u - i as f64;
    }
    let mut acc = 0.0;
    let corners = 1usize << d;
    for c in 0..corners {
        let mut w = 1.0;
        let mut idx = 0usize;
        let mut stride = 1usize;
        for k in 0..d {
            let bit = (c >> k) & 1;
            w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
            idx += (base[k] + bit) * stride;
            stride *= data.shape[k];
        }
        let val = if component < d {
            data.g_diag[component][idx]
        } else {
            data.a[idx]
        };
        acc += w * val;
    }
    acc
}

/// Reads a grid metric from CSV with header `x1,...,xd,g11,...,gdd,a`.
pub fn load_grid_csv(path: &Path, dim: usize) -> Result<GridMetricData> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| crate::Error::Format(format!("{}: {e}", path.display())))?;
    let mut coords: Vec<Vec<f64>> = Vec::new();
    let mut g_rows: Vec<Vec<f64>> = vec![Vec::new(); dim];
    let mut a_vals: Vec<f64> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| crate::Error::Format(e.to_string()))?;
        if rec.len() != 2 * dim + 1 {
            return Err(crate::Error::Format(format!(
                "grid metric row has {} fields, expected {}",
                rec.len(),
                2 * dim + 1
            )));
        }
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| crate::Error::Format(e.to_string()))?;
        coords.push(vals[0..dim].to_vec());
        for k in 0..dim {
            g_rows[k].push(vals[dim + k]);
        }
        a_vals.push(vals[2 * dim]);
    }
    if coords.is_empty() {
        return Err(crate::Error::Format("empty grid metric file".into()));
    }
    // infer lattice: sorted unique coordinates per axis
    let mut axes: Vec<Vec<f64>> = Vec::new();
    for k in 0..dim {
        let mut vs: Vec<f64> = coords.iter().map(|c| c[k]).collect();
        vs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vs.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        axes.push(vs);
    }
    let shape: Vec<usize> = axes.iter().map(|a| a.len()).collect();
    let total: usize = shape.iter().product();
    if total != coords.len() {
        return Err(crate::Error::Format(format!(
            "grid metric rows ({}) do not fill the inferred lattice ({total})",
            coords.len()
        )));
    }
    let origin: Vec<f64> = axes.iter().map(|a| a[0]).collect();
    let spacing: Vec<f64> = axes
        .iter()
        .map(|a| if a.len() > 1 { a[1] - a[0] } else { 1.0 })
        .collect();
    // re-sort rows into row-major lattice order
    let mut g_diag = vec![vec![0.0; total]; dim];
    let mut a_sorted = vec![0.0; total];
    for (r, c) in coords.iter().enumerate() {
        let mut idx = 0usize;
        let mut stride = 1usize;
        for k in 0..dim {
            let i = ((c[k] - origin[k]) / spacing[k]).round() as usize;
            idx += i * stride;
            stride *= shape[k];
        }
        for k in 0..dim {
            g_diag[k][idx] = g_rows[k][r];
        }
        a_sorted[idx] = a_vals[r];
    }
    Ok(GridMetricData {
        shape,
        origin,
        spacing,
        g_diag,
        a: a_sorted,
    })
}
