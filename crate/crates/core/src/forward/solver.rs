//! Leapfrog finite-difference solver for the quasilinear system
//!   d_tt u = a(x) Lap_g (u + F(x,u)) + G(x,u) + forcing,
//! its first and second linearizations, the backward auxiliary solve, and
//! conormal (DtN) trace extraction.
//!
//! Conventions: F(x,y) = b_n(x) y^n / n!, G(x,y) = sum_k c_k(x) y^k / k!.
//! All metric kinds carry diagonal g, so the divergence-form Laplacian has
//! no cross terms.

use serde::{Deserialize, Serialize};

use crate::error::ForwardError;
use crate::fields::FieldSpec;
use crate::forward::grid::SpaceTimeGrid;
use crate::geometry::Metric;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    /// Wave speed squared (also carried by the metric; kept here for the
    /// admissibility report).
    pub a: FieldSpec,
    /// Monomial degree of F (>= 2).
    pub n_monomial: u32,
    pub b_n: FieldSpec,
    /// c_1 .. c_K.
    pub c: Vec<FieldSpec>,
    /// Declared support of c_1 (center, radius), if any.
    pub c1_support: Option<(Vec<f64>, f64)>,
    /// Admissibility bound C.
    pub bound: f64,
}

impl Coefficients {
    pub fn linear(a: FieldSpec) -> Self {
        Coefficients {
            a,
            n_monomial: 2,
            b_n: FieldSpec::zero(),
            c: vec![FieldSpec::zero()],
            c1_support: None,
            bound: 1.0,
        }
    }

    pub fn c_k(&self, k: usize) -> FieldSpec {
        self.c.get(k - 1).cloned().unwrap_or_else(FieldSpec::zero)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProducedBy {
    Nonlinear,
    Linearized1,
    Linearized2,
    Backward,
}

#[derive(Debug, Clone)]
pub struct WaveField {
    pub grid: SpaceTimeGrid,
    /// (nt+1) time slices of nn values each.
    pub u: Vec<f64>,
    pub meta: ProducedBy,
}

impl WaveField {
    pub fn slice(&self, it: usize) -> &[f64] {
        let nn = self.grid.nn();
        &self.u[it * nn..(it + 1) * nn]
    }

    pub fn max_abs(&self) -> f64 {
        self.u.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn l2(&self) -> f64 {
        let mut acc = 0.0;
        let nn = self.grid.nn();
        for it in 0..=self.grid.nt {
            let wt = crate::util::trapezoid_weight(it, self.grid.nt + 1) * self.grid.dt;
            for i in 0..nn {
                let v = self.u[it * nn + i];
                acc += wt * self.grid.volume_weight(i) * v * v;
            }
        }
        acc.sqrt()
    }

    /// Pointwise linear combination alpha*self + beta*other.
    pub fn combine(&self, alpha: f64, other: &WaveField, beta: f64) -> Result<WaveField> {
        if !self.grid.same_layout(&other.grid) {
            return Err(ForwardError::GridMismatch("wave field combine".into()).into());
        }
        let u = self
            .u
            .iter()
            .zip(&other.u)
            .map(|(x, y)| alpha * x + beta * y)
            .collect();
        Ok(WaveField {
            grid: self.grid.clone(),
            u,
            meta: self.meta,
        })
    }

    /// Time reflection t -> T - t.
    pub fn reflect_time(&self) -> WaveField {
        let nn = self.grid.nn();
        let nt = self.grid.nt;
        let mut u = vec![0.0; self.u.len()];
        for it in 0..=nt {
            u[(nt - it) * nn..(nt - it + 1) * nn].copy_from_slice(self.slice(it));
        }
        WaveField {
            grid: self.grid.clone(),
            u,
            meta: self.meta,
        }
    }
}

/// Dirichlet data on the lateral boundary lattice: (nt+1) x boundary nodes.
#[derive(Debug, Clone)]
pub struct BoundarySignal {
    pub grid: SpaceTimeGrid,
    pub nodes: Vec<usize>,
    pub values: Vec<f64>,
}

impl BoundarySignal {
    pub fn zero(grid: &SpaceTimeGrid) -> Self {
        let nodes = grid.boundary_nodes();
        BoundarySignal {
            grid: grid.clone(),
            values: vec![0.0; (grid.nt + 1) * nodes.len()],
            nodes,
        }
    }

    pub fn from_fn(grid: &SpaceTimeGrid, f: impl Fn(f64, &[f64]) -> f64) -> Self {
        let nodes = grid.boundary_nodes();
        let mut values = vec![0.0; (grid.nt + 1) * nodes.len()];
        for it in 0..=grid.nt {
            let t = it as f64 * grid.dt;
            for (j, &b) in nodes.iter().enumerate() {
                values[it * nodes.len() + j] = f(t, &grid.node_coords(b));
            }
        }
        BoundarySignal {
            grid: grid.clone(),
            nodes,
            values,
        }
    }

    pub fn at(&self, it: usize, j: usize) -> f64 {
        self.values[it * self.nodes.len() + j]
    }

    pub fn scale(&self, s: f64) -> BoundarySignal {
        BoundarySignal {
            grid: self.grid.clone(),
            nodes: self.nodes.clone(),
            values: self.values.iter().map(|v| s * v).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Multiplies by a·(x) sampled on the boundary nodes.
    pub fn mul_field(&self, f: &FieldSpec) -> BoundarySignal {
        let mut out = self.clone();
        for it in 0..=self.grid.nt {
            for (j, &b) in self.nodes.iter().enumerate() {
                out.values[it * self.nodes.len() + j] *= f.eval(&self.grid.node_coords(b));
            }
        }
        out
    }

    pub fn reflect_time(&self) -> BoundarySignal {
        let nb = self.nodes.len();
        let nt = self.grid.nt;
        let mut values = vec![0.0; self.values.len()];
        for it in 0..=nt {
            values[(nt - it) * nb..(nt - it + 1) * nb]
                .copy_from_slice(&self.values[it * nb..(it + 1) * nb]);
        }
        BoundarySignal {
            grid: self.grid.clone(),
            nodes: self.nodes.clone(),
            values,
        }
    }
}

/// Conormal derivative of (u + F(x,u)) on the boundary lattice.
#[derive(Debug, Clone)]
pub struct DtnTrace {
    pub grid: SpaceTimeGrid,
    pub nodes: Vec<usize>,
    pub values: Vec<f64>,
}

impl DtnTrace {
    pub fn at(&self, it: usize, j: usize) -> f64 {
        self.values[it * self.nodes.len() + j]
    }

    pub fn combine(&self, alpha: f64, other: &DtnTrace, beta: f64) -> Result<DtnTrace> {
        if !self.grid.same_layout(&other.grid) {
            return Err(ForwardError::GridMismatch("dtn combine".into()).into());
        }
        Ok(DtnTrace {
            grid: self.grid.clone(),
            nodes: self.nodes.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| alpha * x + beta * y)
                .collect(),
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// L2 norm over the boundary cylinder.
    pub fn l2(&self) -> f64 {
        let mut acc = 0.0;
        for it in 0..=self.grid.nt {
            let wt = crate::util::trapezoid_weight(it, self.grid.nt + 1) * self.grid.dt;
            for (j, &b) in self.nodes.iter().enumerate() {
                let v = self.at(it, j);
                acc += wt * self.grid.boundary_weight(b) * v * v;
            }
        }
        acc.sqrt()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    pub violations: Vec<String>,
    /// Truncation tail bound sum_{k>K} C A^k / k! for the given amplitude.
    pub tail_bound: f64,
    pub amplitude_budget: f64,
    pub truncation: usize,
}

/// Verifies positivity of a, the sup bounds, and n >= 2; reports the G-series
/// truncation tail for the amplitude budget.
pub fn check_admissible(
    coeffs: &Coefficients,
    metric: &Metric,
    amplitude_budget: f64,
) -> AdmissibilityReport {
    let mut violations = Vec::new();
    // sample positivity / sup bounds on a lattice
    let samples = 17usize;
    let d = metric.dim;
    let mut idx = vec![0usize; d];
    let mut a_min = f64::INFINITY;
    let mut b_max: f64 = 0.0;
    let mut c_max: f64 = 0.0;
    loop {
        let x: Vec<f64> = (0..d)
            .map(|k| {
                metric.domain.lo[k]
                    + (metric.domain.hi[k] - metric.domain.lo[k]) * idx[k] as f64
                        / (samples - 1) as f64
            })
            .collect();
        a_min = a_min.min(coeffs.a.eval(&x));
        b_max = b_max.max(coeffs.b_n.eval(&x).abs());
        for ck in &coeffs.c {
            c_max = c_max.max(ck.eval(&x).abs());
        }
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < samples {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == d {
                break;
            }
        }
        if k == d {
            break;
        }
    }
    if a_min <= 0.0 {
        violations.push(format!("a not strictly positive: min = {a_min:.3e}"));
    }
    if coeffs.n_monomial < 2 {
        violations.push(format!("monomial degree n = {} < 2", coeffs.n_monomial));
    }
    if b_max > coeffs.bound + 1e-12 {
        violations.push(format!(
            "sup |b_n| = {b_max:.3e} exceeds bound {:.3e}",
            coeffs.bound
        ));
    }
    if c_max > coeffs.bound + 1e-12 {
        violations.push(format!(
            "sup |c_k| = {c_max:.3e} exceeds bound {:.3e}",
            coeffs.bound
        ));
    }
    // tail sum_{k>K} C A^k / k!
    let big_k = coeffs.c.len();
    let mut term = 1.0;
    for k in 1..=big_k {
        term *= amplitude_budget / k as f64;
    }
    let mut tail = 0.0;
    let mut t = term;
    for k in big_k + 1..big_k + 200 {
        t *= amplitude_budget / k as f64;
        tail += t;
        if t < 1e-300 {
            break;
        }
    }
    AdmissibilityReport {
        admissible: violations.is_empty(),
        violations,
        tail_bound: coeffs.bound * tail,
        amplitude_budget,
        truncation: big_k,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompatibilityReport {
    pub compatible: bool,
    pub checked_order: u32,
    pub requested_order: u32,
    /// (clause, max residual, offending node index if violated)
    pub clauses: Vec<(String, f64, Option<usize>)>,
}

/// Verifies the corner compatibility of (h, phi, psi) up to second order.
pub fn check_compatibility(
    h: &BoundarySignal,
    phi: &[f64],
    psi: &[f64],
    coeffs: &Coefficients,
    metric: &Metric,
    order: u32,
    tol: f64,
) -> CompatibilityReport {
    let grid = &h.grid;
    let nb = h.nodes.len();
    let mut clauses = Vec::new();
    let mut compatible = true;
    let mut check_clause = |name: &str, residuals: Vec<f64>| {
        let mut worst = 0.0;
        let mut node = None;
        for (j, r) in residuals.iter().enumerate() {
            if r.abs() > worst {
                worst = r.abs();
                node = Some(j);
            }
        }
        let ok = worst <= tol;
        clauses.push((
            name.to_string(),
            worst,
            if ok { None } else { node.map(|j| h.nodes[j]) },
        ));
        ok
    };

    // order 0: h(0,.) = phi on the boundary
    let r0: Vec<f64> = (0..nb).map(|j| h.at(0, j) - phi[h.nodes[j]]).collect();
    compatible &= check_clause("h(0,.) = phi", r0);

    // The time derivatives of h are only available through finite
    // differences whose truncation scales with the signal's own higher
    // derivatives; each clause subtracts its estimated truncation allowance
    // so smooth onset windows certify cleanly at any resolution.
    let dt = grid.dt;
    if order >= 1 {
        let r1: Vec<f64> = (0..nb)
            .map(|j| {
                let dh = (-3.0 * h.at(0, j) + 4.0 * h.at(1, j) - h.at(2, j)) / (2.0 * dt);
                let d3 = (-h.at(0, j) + 3.0 * h.at(1, j) - 3.0 * h.at(2, j) + h.at(3, j))
                    / (dt * dt * dt);
                let allowance = dt * dt * d3.abs();
                let r = (dh - psi[h.nodes[j]]).abs() - allowance;
                r.max(0.0)
            })
            .collect();
        compatible &= check_clause("dt h(0,.) = psi", r1);
    }
    if order >= 2 {
        // d_tt h(0,.) = a Lap_g(phi + F(phi)) + G(phi) on the boundary
        let stencil = Stencil::new(metric, grid);
        let w: Vec<f64> = (0..grid.nn())
            .map(|i| {
                let u = phi[i];
                u + stencil.f_of(i, u, coeffs)
            })
            .collect();
        let r2: Vec<f64> = (0..nb)
            .map(|j| {
                let b = h.nodes[j];
                let ddh = (2.0 * h.at(0, j) - 5.0 * h.at(1, j) + 4.0 * h.at(2, j) - h.at(3, j))
                    / (dt * dt);
                let d4 = (h.at(0, j) - 4.0 * h.at(1, j) + 6.0 * h.at(2, j) - 4.0 * h.at(3, j)
                    + h.at(4, j))
                    / (dt * dt * dt * dt);
                let allowance = 1.5 * dt * dt * d4.abs();
                // Laplacian needs interior neighbors; skip genuine corners
                if stencil.has_full_stencil(b) {
                    let rhs = stencil.a[b] * stencil.laplacian_boundary(&w, metric, b)
                        + stencil.g_of(b, phi[b], coeffs);
                    ((ddh - rhs).abs() - allowance).max(0.0)
                } else {
                    0.0
                }
            })
            .collect();
        compatible &= check_clause("dtt h(0,.) = a Lap(phi + F) + G", r2);
    }
    CompatibilityReport {
        compatible,
        checked_order: order.min(2),
        requested_order: order,
        clauses,
    }
}

/// Precomputed metric/coefficient arrays for the divergence-form stencil.
pub(crate) struct Stencil {
    grid: SpaceTimeGrid,
    pub a: Vec<f64>,
    sqrt_g: Vec<f64>,
    /// m_half[k][i] = sqrt|g| g^{kk} at the half node i + e_k/2 (diagonal g).
    m_half: Vec<Vec<f64>>,
    pub b_n: Vec<f64>,
    pub c: Vec<Vec<f64>>,
}

impl Stencil {
    pub fn new(metric: &Metric, grid: &SpaceTimeGrid) -> Self {
        let nn = grid.nn();
        let d = grid.dim;
        let coords: Vec<Vec<f64>> = (0..nn).map(|i| grid.node_coords(i)).collect();
        let a: Vec<f64> = coords.iter().map(|x| metric.a(x)).collect();
        let sqrt_g: Vec<f64> = coords.iter().map(|x| metric.sqrt_det_g(x)).collect();
        let strides = grid.strides();
        let mut m_half = vec![vec![0.0; nn]; d];
        for k in 0..d {
            for i in 0..nn {
                let idx = grid.multi_index(i);
                if idx[k] + 1 >= grid.n[k] {
                    continue;
                }
                let mut xh = coords[i].clone();
                xh[k] += 0.5 * grid.dx[k];
                m_half[k][i] = metric.sqrt_det_g(&xh) * metric.g_inv(&xh)[(k, k)];
                let _ = strides;
            }
        }
        Stencil {
            grid: grid.clone(),
            a,
            sqrt_g,
            m_half,
            b_n: Vec::new(),
            c: Vec::new(),
        }
    }

    pub fn with_coeffs(metric: &Metric, grid: &SpaceTimeGrid, coeffs: &Coefficients) -> Self {
        let mut s = Self::new(metric, grid);
        let coords: Vec<Vec<f64>> = (0..grid.nn()).map(|i| grid.node_coords(i)).collect();
        s.b_n = coords.iter().map(|x| coeffs.b_n.eval(x)).collect();
        s.c = coeffs
            .c
            .iter()
            .map(|ck| coords.iter().map(|x| ck.eval(x)).collect())
            .collect();
        s
    }

    /// True for boundary nodes on the relative interior of exactly one face
    /// (corners are excluded from the order-2 compatibility clause).
    pub fn has_full_stencil(&self, flat: usize) -> bool {
        let idx = self.grid.multi_index(flat);
        let faces = idx
            .iter()
            .zip(&self.grid.n)
            .filter(|(i, nk)| **i == 0 || **i + 1 == **nk)
            .count();
        faces == 1 && self.grid.n.iter().all(|nk| *nk >= 4)
    }

    /// Laplace-Beltrami at a face node with one-sided second-order stencils
    /// along the normal axis (diagonal metrics).
    pub fn laplacian_boundary(&self, w: &[f64], metric: &Metric, flat: usize) -> f64 {
        let d = self.grid.dim;
        let strides = self.grid.strides();
        let idx = self.grid.multi_index(flat);
        let x = self.grid.node_coords(flat);
        let ginv = metric.g_inv(&x);
        let rho = metric.sqrt_det_g(&x);
        let h = 1e-5 * (1.0 + self.grid.dx[0]);
        let mut acc = 0.0;
        for k in 0..d {
            let dx = self.grid.dx[k];
            let (d2, d1) = if idx[k] == 0 || idx[k] + 1 == self.grid.n[k] {
                let inward: i64 = if idx[k] == 0 {
                    strides[k] as i64
                } else {
                    -(strides[k] as i64)
                };
                let sgn = if idx[k] == 0 { 1.0 } else { -1.0 };
                let b0 = flat as i64;
                let w0 = w[b0 as usize];
                let w1 = w[(b0 + inward) as usize];
                let w2 = w[(b0 + 2 * inward) as usize];
                let w3 = w[(b0 + 3 * inward) as usize];
                (
                    (2.0 * w0 - 5.0 * w1 + 4.0 * w2 - w3) / (dx * dx),
                    sgn * (-3.0 * w0 + 4.0 * w1 - w2) / (2.0 * dx),
                )
            } else {
                let s = strides[k];
                (
                    (w[flat + s] - 2.0 * w[flat] + w[flat - s]) / (dx * dx),
                    (w[flat + s] - w[flat - s]) / (2.0 * dx),
                )
            };
            // first-order coefficient (1/rho) d_k (rho g^kk) by central FD
            let mut xp = x.clone();
            xp[k] = x[k] + h;
            let fp = metric.sqrt_det_g(&xp) * metric.g_inv(&xp)[(k, k)];
            xp[k] = x[k] - h;
            let fm = metric.sqrt_det_g(&xp) * metric.g_inv(&xp)[(k, k)];
            acc += ginv[(k, k)] * d2 + (fp - fm) / (2.0 * h) / rho * d1;
        }
        acc
    }

    /// Divergence-form Laplace-Beltrami at an interior node.
    #[inline]
    pub fn laplacian_at(&self, w: &[f64], i: usize) -> f64 {
        let d = self.grid.dim;
        let strides = self.grid.strides();
        let idx = self.grid.multi_index(i);
        let mut acc = 0.0;
        for k in 0..d {
            if idx[k] == 0 || idx[k] + 1 == self.grid.n[k] {
                continue;
            }
            let s = strides[k];
            let mp = self.m_half[k][i];
            let mm = self.m_half[k][i - s];
            acc += (mp * (w[i + s] - w[i]) - mm * (w[i] - w[i - s]))
                / (self.grid.dx[k] * self.grid.dx[k]);
        }
        acc / self.sqrt_g[i]
    }

    /// F(x, u) = b_n u^n / n!.
    #[inline]
    pub fn f_of(&self, i: usize, u: f64, coeffs: &Coefficients) -> f64 {
        if self.b_n.is_empty() || self.b_n[i] == 0.0 {
            return 0.0;
        }
        let n = coeffs.n_monomial;
        let mut p = 1.0;
        let mut fact = 1.0;
        for k in 1..=n {
            p *= u;
            fact *= k as f64;
        }
        self.b_n[i] * p / fact
    }

    /// G(x, u) = sum_k c_k u^k / k!.
    #[inline]
    pub fn g_of(&self, i: usize, u: f64, _coeffs: &Coefficients) -> f64 {
        let mut acc = 0.0;
        let mut p = 1.0;
        let mut fact = 1.0;
        for (k, ck) in self.c.iter().enumerate() {
            p *= u;
            fact *= (k + 1) as f64;
            if !ck.is_empty() {
                acc += ck[i] * p / fact;
            }
        }
        acc
    }
}

pub struct SolveOptions<'a> {
    /// Manufactured-solution forcing, for verification only.
    pub forcing: Option<&'a (dyn Fn(f64, &[f64]) -> f64 + Sync)>,
    /// Amplitude budget for the blow-up guard; inferred from data if None.
    pub amplitude_budget: Option<f64>,
    /// Maximal CFL number dt * vmax / dx.
    pub cfl_limit: f64,
}

impl<'a> Default for SolveOptions<'a> {
    fn default() -> Self {
        SolveOptions {
            forcing: None,
            amplitude_budget: None,
            cfl_limit: 0.72,
        }
    }
}

fn cfl_check(metric: &Metric, grid: &SpaceTimeGrid, limit: f64) -> Result<()> {
    let vmax = metric.max_wave_speed(9);
    let dx_min = grid.dx.iter().cloned().fold(f64::INFINITY, f64::min);
    let dt_limit = limit * dx_min / vmax;
    if grid.dt > dt_limit {
        return Err(ForwardError::CflViolation {
            dt: grid.dt,
            limit: dt_limit,
        }
        .into());
    }
    Ok(())
}

enum Mode<'a> {
    /// Full quasilinear equation.
    Nonlinear,
    /// d_tt v = a Lap v + c1 v.
    Linear,
    /// d_tt w = a Lap (w + src_lap) + c1 w + src, with per-slice sources.
    LinearWithSource {
        src_lap: &'a [f64],
        src: &'a [f64],
    },
    /// d_tt w = Lap(a w) + c1 w.
    DivForm,
}

fn leapfrog(
    metric: &Metric,
    coeffs: &Coefficients,
    grid: &SpaceTimeGrid,
    h: &BoundarySignal,
    phi: &[f64],
    psi: &[f64],
    mode: Mode<'_>,
    opts: &SolveOptions<'_>,
    meta: ProducedBy,
) -> Result<WaveField> {
    cfl_check(metric, grid, opts.cfl_limit)?;
    if !h.grid.same_layout(grid) {
        return Err(ForwardError::GridMismatch("boundary signal grid".into()).into());
    }
    let nn = grid.nn();
    let nt = grid.nt;
    let dt = grid.dt;
    let stencil = Stencil::with_coeffs(metric, grid, coeffs);
    let budget = opts.amplitude_budget.unwrap_or_else(|| {
        let data_scale = h.max_abs()
            + phi.iter().fold(0.0f64, |m, v| m.max(v.abs()))
            + grid.t_max * psi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        data_scale.max(1e-9)
    });

    let nonlinear = matches!(mode, Mode::Nonlinear);
    let coords: Vec<Vec<f64>> = (0..nn).map(|i| grid.node_coords(i)).collect();
    let interior: Vec<usize> = (0..nn).filter(|&i| !grid.is_boundary(i)).collect();
    let bmap: Vec<(usize, usize)> = h.nodes.iter().cloned().enumerate().map(|(j, b)| (b, j)).collect();

    let mut u = vec![0.0; (nt + 1) * nn];
    // slice 0
    u[..nn].copy_from_slice(phi);
    for &(b, j) in &bmap {
        u[b] = h.at(0, j);
    }
    // slice 1 via Taylor start
    {
        let u0: Vec<f64> = u[..nn].to_vec();
        let w: Vec<f64> = match &mode {
            Mode::Nonlinear => (0..nn)
                .map(|i| u0[i] + stencil.f_of(i, u0[i], coeffs))
                .collect(),
            Mode::Linear => u0.clone(),
            Mode::LinearWithSource { src_lap, .. } => {
                (0..nn).map(|i| u0[i] + src_lap[i]).collect()
            }
            Mode::DivForm => (0..nn).map(|i| stencil.a[i] * u0[i]).collect(),
        };
        let (next, cur) = u.split_at_mut(nn);
        let cur = &mut cur[..nn];
        for &i in &interior {
            let lap = stencil.laplacian_at(&w, i);
            let lin = match &mode {
                Mode::DivForm => lap,
                _ => stencil.a[i] * lap,
            };
            let mut acc = lin;
            match &mode {
                Mode::Nonlinear => acc += stencil.g_of(i, u0[i], coeffs),
                Mode::Linear | Mode::DivForm => {
                    if !stencil.c.is_empty() && !stencil.c[0].is_empty() {
                        acc += stencil.c[0][i] * u0[i];
                    }
                }
                Mode::LinearWithSource { src, .. } => {
                    if !stencil.c.is_empty() && !stencil.c[0].is_empty() {
                        acc += stencil.c[0][i] * u0[i];
                    }
                    acc += src[i];
                }
            }
            if let Some(f) = opts.forcing {
                acc += f(0.0, &coords[i]);
            }
            cur[i] = next[i] + dt * psi[i] + 0.5 * dt * dt * acc;
        }
        for &(b, j) in &bmap {
            cur[b] = h.at(1, j);
        }
    }

    let mut w = vec![0.0; nn];
    for it in 1..nt {
        let t = it as f64 * dt;
        // build w = argument of the Laplacian from the current slice
        {
            let cur = &u[it * nn..(it + 1) * nn];
            match &mode {
                Mode::Nonlinear => {
                    for i in 0..nn {
                        w[i] = cur[i] + stencil.f_of(i, cur[i], coeffs);
                    }
                }
                Mode::Linear => w.copy_from_slice(cur),
                Mode::LinearWithSource { src_lap, .. } => {
                    let sl = &src_lap[it * nn..(it + 1) * nn];
                    for i in 0..nn {
                        w[i] = cur[i] + sl[i];
                    }
                }
                Mode::DivForm => {
                    for i in 0..nn {
                        w[i] = stencil.a[i] * cur[i];
                    }
                }
            }
        }
        let (lo, hi) = u.split_at_mut((it + 1) * nn);
        let prev = &lo[(it - 1) * nn..it * nn];
        let cur = &lo[it * nn..(it + 1) * nn];
        let next = &mut hi[..nn];
        let mut max_abs: f64 = 0.0;
        for &i in &interior {
            let lap = stencil.laplacian_at(&w, i);
            let lin = match &mode {
                Mode::DivForm => lap,
                _ => stencil.a[i] * lap,
            };
            let mut acc = lin;
            match &mode {
                Mode::Nonlinear => acc += stencil.g_of(i, cur[i], coeffs),
                Mode::Linear | Mode::DivForm => {
                    if !stencil.c.is_empty() && !stencil.c[0].is_empty() {
                        acc += stencil.c[0][i] * cur[i];
                    }
                }
                Mode::LinearWithSource { src, .. } => {
                    if !stencil.c.is_empty() && !stencil.c[0].is_empty() {
                        acc += stencil.c[0][i] * cur[i];
                    }
                    acc += src[it * nn + i];
                }
            }
            if let Some(f) = opts.forcing {
                acc += f(t, &coords[i]);
            }
            let v = 2.0 * cur[i] - prev[i] + dt * dt * acc;
            next[i] = v;
            max_abs = max_abs.max(v.abs());
        }
        for &(b, j) in &bmap {
            next[b] = h.at(it + 1, j);
        }
        if nonlinear && max_abs > 10.0 * budget {
            return Err(ForwardError::BlowUp {
                step: it + 1,
                max_abs,
                budget,
            }
            .into());
        }
    }

    Ok(WaveField {
        grid: grid.clone(),
        u,
        meta,
    })
}

/// Solves the full quasilinear system with Dirichlet data h and initial data
/// (phi, psi).
pub fn solve_forward(
    metric: &Metric,
    coeffs: &Coefficients,
    grid: &SpaceTimeGrid,
    h: &BoundarySignal,
    phi: &[f64],
    psi: &[f64],
    opts: &SolveOptions<'_>,
) -> Result<WaveField> {
    leapfrog(
        metric,
        coeffs,
        grid,
        h,
        phi,
        psi,
        Mode::Nonlinear,
        opts,
        ProducedBy::Nonlinear,
    )
}

/// First linearization: d_tt v = a Lap v + c1 v, zero initial data.
pub fn solve_linearized_first(
    metric: &Metric,
    coeffs: &Coefficients,
    grid: &SpaceTimeGrid,
    h: &BoundarySignal,
) -> Result<WaveField> {
    let nn = grid.nn();
    let mut f = leapfrog(
        metric,
        coeffs,
        grid,
        h,
        &vec![0.0; nn],
        &vec![0.0; nn],
        Mode::Linear,
        &SolveOptions::default(),
        ProducedBy::Linearized1,
    )?;
    f.meta = ProducedBy::Linearized1;
    Ok(f)
}

/// Second linearization driven by two first-linearized fields:
/// d_tt w = a Lap (w + b2 v1 v2) + c1 w + c2 v1 v2, zero data.
pub fn solve_linearized_second(
    metric: &Metric,
    coeffs: &Coefficients,
    grid: &SpaceTimeGrid,
    v1: &WaveField,
    v2: &WaveField,
) -> Result<WaveField> {
    if !v1.grid.same_layout(grid) || !v2.grid.same_layout(grid) {
        return Err(ForwardError::GridMismatch("second linearization inputs".into()).into());
    }
    let nn = grid.nn();
    let nt = grid.nt;
    let coords: Vec<Vec<f64>> = (0..nn).map(|i| grid.node_coords(i)).collect();
    let b2: Vec<f64> = coords.iter().map(|x| coeffs.b_n.eval(x)).collect();
    let c2 = coeffs.c_k(2);
    let c2v: Vec<f64> = coords.iter().map(|x| c2.eval(x)).collect();
    let mut src_lap = vec![0.0; (nt + 1) * nn];
    let mut src = vec![0.0; (nt + 1) * nn];
    for it in 0..=nt {
        for i in 0..nn {
            let prod = v1.u[it * nn + i] * v2.u[it * nn + i];
            src_lap[it * nn + i] = b2[i] * prod;
            src[it * nn + i] = c2v[i] * prod;
        }
    }
    let h0 = BoundarySignal::zero(grid);
    leapfrog(
        metric,
        coeffs,
        grid,
        &h0,
        &vec![0.0; nn],
        &vec![0.0; nn],
        Mode::LinearWithSource {
            src_lap: &src_lap,
            src: &src,
        },
        &SolveOptions::default(),
        ProducedBy::Linearized2,
    )
}

/// Backward auxiliary solve: d_tt w = Lap_g(a w) + c1 w with terminal
/// conditions w(T) = dt w(T) = 0 and boundary data g0, realized by a time
/// reflection of the transformed field wtilde = a w, which satisfies the
/// forward equation with boundary data a * g0.
pub fn solve_backward(
    metric: &Metric,
    coeffs: &Coefficients,
    grid: &SpaceTimeGrid,
    g0: &BoundarySignal,
) -> Result<WaveField> {
    let nn = grid.nn();
    let h = g0.mul_field(&coeffs.a).reflect_time();
    let wtilde = leapfrog(
        metric,
        coeffs,
        grid,
        &h,
        &vec![0.0; nn],
        &vec![0.0; nn],
        Mode::Linear,
        &SolveOptions::default(),
        ProducedBy::Backward,
    )?;
    let mut w = wtilde.reflect_time();
    // divide by a
    let a: Vec<f64> = (0..nn)
        .map(|i| coeffs.a.eval(&grid.node_coords(i)))
        .collect();
    for it in 0..=grid.nt {
        for i in 0..nn {
            w.u[it * nn + i] /= a[i];
        }
    }
    w.meta = ProducedBy::Backward;
    Ok(w)
}

/// Direct discretization of d_tt w = Lap_g(a w) + c1 w backwards in time
/// (time-reflected); used to cross-check the transformed formulation.
pub fn solve_backward_divform(
    metric: &Metric,
    coeffs: &Coefficients,
    grid: &SpaceTimeGrid,
    g0: &BoundarySignal,
) -> Result<WaveField> {
    let nn = grid.nn();
    let h = g0.reflect_time();
    let w = leapfrog(
        metric,
        coeffs,
        grid,
        &h,
        &vec![0.0; nn],
        &vec![0.0; nn],
        Mode::DivForm,
        &SolveOptions::default(),
        ProducedBy::Backward,
    )?;
    Ok(w.reflect_time())
}

/// Conormal derivative of (u + F(x,u)) on the boundary cylinder, second-order
/// one-sided differences contracted with the unit conormal.
pub fn dtn(metric: &Metric, coeffs: &Coefficients, field: &WaveField) -> Result<DtnTrace> {
    let grid = &field.grid;
    let nn = grid.nn();
    let d = grid.dim;
    let strides = grid.strides();
    let stencil = Stencil::with_coeffs(metric, grid, coeffs);
    let include_f = field.meta == ProducedBy::Nonlinear;
    let nodes = grid.boundary_nodes();
    let mut values = vec![0.0; (grid.nt + 1) * nodes.len()];
    let mut w = vec![0.0; nn];
    for it in 0..=grid.nt {
        let cur = field.slice(it);
        if include_f {
            for i in 0..nn {
                w[i] = cur[i] + stencil.f_of(i, cur[i], coeffs);
            }
        } else {
            w.copy_from_slice(cur);
        }
        for (j, &b) in nodes.iter().enumerate() {
            let idx = grid.multi_index(b);
            let x = grid.node_coords(b);
            let ginv = metric.g_inv(&x);
            // Outward conormal with inward one-sided differences: the face
            // sign cancels, leaving sqrt(g^kk) (3 w0 - 4 w1 + w2) / (2 dx).
            // Corner nodes average their faces.
            let mut total = 0.0;
            let mut count = 0u32;
            for k in 0..d {
                let inward: i64 = if idx[k] == 0 {
                    strides[k] as i64
                } else if idx[k] + 1 == grid.n[k] {
                    -(strides[k] as i64)
                } else {
                    continue;
                };
                let b0 = b as i64;
                let w0 = w[b0 as usize];
                let w1 = w[(b0 + inward) as usize];
                let w2 = w[(b0 + 2 * inward) as usize];
                total += ginv[(k, k)].sqrt() * (3.0 * w0 - 4.0 * w1 + w2) / (2.0 * grid.dx[k]);
                count += 1;
            }
            values[it * nodes.len() + j] = total / count.max(1) as f64;
        }
    }
    Ok(DtnTrace {
        grid: grid.clone(),
        nodes,
        values,
    })
}
