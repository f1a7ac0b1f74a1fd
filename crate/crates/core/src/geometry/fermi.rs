//! Fermi charts along characteristic (null) lifts of effective geodesics.
//!
//! The chart sends (s, z1, .., zd) to the ambient point
//!   t = t0 + s - z1/2,   x = exp_{gamma(s)}( (z1/2) gamma'(s) + sum_i z_i e_i(s) )
//! where {gamma', e_2, .., e_d} is a parallel orthonormal frame of the
//! effective metric along gamma. On the axis the space-time metric
//! -dt^2 + G takes the normal form 2 ds dz1 + sum dz_i^2 with vanishing
//! first derivatives; its transverse jets drive the beam ODEs.

use nalgebra::DMatrix;

use crate::error::GeometryError;
use crate::geometry::geodesic::{geodesic_rhs, NullGeodesic};
use crate::geometry::Metric;
use crate::util::rk4_integrate;
use crate::Result;

#[derive(Debug, Clone)]
struct AxisNode {
    x: Vec<f64>,
    v: Vec<f64>,
    /// Transverse frame e_2..e_d (each a d-vector), parallel along the axis.
    frame: Vec<Vec<f64>>,
}

/// Affine fast path for flat metrics.
#[derive(Debug, Clone)]
struct FlatChart {
    x0: Vec<f64>,
    omega: Vec<f64>,
    frame: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct FermiChart {
    pub metric: Metric,
    /// Time on the axis at s = 0.
    pub t0: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub ds: f64,
    pub delta_prime: f64,
    /// Parameter of the first axis node (two ghost nodes before s_min keep
    /// the cubic interpolation stencil full at the chart ends).
    axis_s0: f64,
    axis: Vec<AxisNode>,
    flat: Option<FlatChart>,
    exp_steps: usize,
}

/// Second and third transverse jets of the inverse chart metric on the axis,
/// plus the Hessian of the volume density. All tensors are w.r.t. the chart
/// coordinates z1..zd.
#[derive(Debug, Clone)]
pub struct AxisJets {
    pub dim: usize,
    /// q[alpha][beta] = Hessian_z of Ghat^{alpha beta} (alpha, beta in 0..=d).
    pub q: Vec<Vec<DMatrix<f64>>>,
    /// Third jets of Ghat^{11}, fully symmetric, flattened [i][j][k].
    pub t11: Vec<f64>,
    /// Hessian_z of sqrt|det chart metric|.
    pub w_rho: DMatrix<f64>,
}

impl AxisJets {
    pub fn zero(dim: usize) -> Self {
        let n = dim + 1;
        AxisJets {
            dim,
            q: (0..n)
                .map(|_| (0..n).map(|_| DMatrix::zeros(dim, dim)).collect())
                .collect(),
            t11: vec![0.0; dim * dim * dim],
            w_rho: DMatrix::zeros(dim, dim),
        }
    }

    pub fn t11_at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.t11[(i * self.dim + j) * self.dim + k]
    }
}

/// Builds the Fermi chart of a null lift, valid for |z| < dprime.
pub fn build_fermi_chart(metric: &Metric, geo: &NullGeodesic, dprime: f64) -> Result<FermiChart> {
    let d = metric.dim;
    let base = &geo.base;
    let first = base.samples.first().expect("empty geodesic");
    let ds = if base.samples.len() > 1 {
        base.samples[1].t - base.samples[0].t
    } else {
        1e-3 * metric.domain.diameter()
    };
    let s_lo = first.t - dprime;
    let s_hi = base.samples.last().unwrap().t + dprime;

    // Self-intersection guard: distant parameters, close positions.
    for (i, a) in base.samples.iter().enumerate() {
        for b in base.samples.iter().skip(i + 1) {
            if (b.t - a.t).abs() > 4.0 * dprime {
                let dist: f64 = a
                    .x
                    .iter()
                    .zip(&b.x)
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum::<f64>()
                    .sqrt();
                if dist < 2.0 * dprime {
                    return Err(GeometryError::TubeTooWide {
                        radius: dprime,
                        reason: format!(
                            "axis self-approach: |gamma({:.3}) - gamma({:.3})| = {dist:.3e}",
                            a.t, b.t
                        ),
                    }
                    .into());
                }
            }
        }
    }

    let flat = if metric.is_flat() {
        let omega = first.v.clone();
        let frame = gram_schmidt_frame(metric, &first.x, &omega);
        Some(FlatChart {
            x0: first.x.clone(),
            omega,
            frame,
        })
    } else {
        None
    };

    // Integrate axis + parallel frame over [s_lo, s_hi] on a uniform grid,
    // with two ghost nodes beyond each end for full interpolation stencils.
    let n_core = ((s_hi - s_lo) / ds).round() as usize + 1;
    let ds = (s_hi - s_lo) / (n_core - 1) as f64;
    let ghosts = 2usize;
    let axis_s0 = s_lo - ghosts as f64 * ds;
    let n_nodes = n_core + 2 * ghosts;
    let frame0 = gram_schmidt_frame(metric, &first.x, &first.v);

    let s_lo_ax = axis_s0;

    // state: x (d), p (d), then each frame vector (d each)
    let state_len = 2 * d + (d - 1) * d;
    let pack = |x: &[f64], p: &[f64], frame: &[Vec<f64>]| {
        let mut st = vec![0.0; state_len];
        st[..d].copy_from_slice(x);
        st[d..2 * d].copy_from_slice(p);
        for (i, e) in frame.iter().enumerate() {
            st[2 * d + i * d..2 * d + (i + 1) * d].copy_from_slice(e);
        }
        st
    };
    let unpack = |st: &[f64]| -> AxisNode {
        let x = st[..d].to_vec();
        let ginv = metric.effective_g_inv(&x);
        let v: Vec<f64> = (0..d)
            .map(|i| (0..d).map(|j| ginv[(i, j)] * st[d + j]).sum())
            .collect();
        let frame: Vec<Vec<f64>> = (0..d - 1)
            .map(|i| st[2 * d + i * d..2 * d + (i + 1) * d].to_vec())
            .collect();
        AxisNode { x, v, frame }
    };
    let rhs = |t: f64, st: &[f64], out: &mut [f64]| {
        geodesic_rhs(metric, t, &st[..2 * d], &mut out[..2 * d]);
        let x = &st[..2 * d - d];
        let gamma = christoffels(metric, &x[..d]);
        let ginv = metric.effective_g_inv(&x[..d]);
        let v: Vec<f64> = (0..d)
            .map(|i| (0..d).map(|j| ginv[(i, j)] * st[d + j]).sum())
            .collect();
        for e_idx in 0..d - 1 {
            let e = &st[2 * d + e_idx * d..2 * d + (e_idx + 1) * d];
            for i in 0..d {
                let mut s = 0.0;
                for j in 0..d {
                    for k in 0..d {
                        s += gamma[(i * d + j) * d + k] * v[j] * e[k];
                    }
                }
                out[2 * d + e_idx * d + i] = -s;
            }
        }
    };

    let g0 = metric.effective_g(&first.x);
    let p0: Vec<f64> = (0..d)
        .map(|i| (0..d).map(|j| g0[(i, j)] * first.v[j]).sum())
        .collect();
    let st0 = pack(&first.x, &p0, &frame0);

    let mut axis: Vec<AxisNode> = vec![AxisNode {
        x: vec![],
        v: vec![],
        frame: vec![],
    }; n_nodes];
    // march forward from s = first.t
    let i0 = ((first.t - s_lo_ax) / ds).round() as usize;
    {
        let mut st = st0.clone();
        axis[i0] = unpack(&st);
        let mut scratch = vec![0.0; 5 * state_len];
        for i in i0 + 1..n_nodes {
            crate::util::rk4_step(&rhs, s_lo_ax + (i - 1) as f64 * ds, &mut st, ds, &mut scratch);
            axis[i] = unpack(&st);
        }
        let mut st = st0;
        for i in (0..i0).rev() {
            crate::util::rk4_step(&rhs, s_lo_ax + (i + 1) as f64 * ds, &mut st, -ds, &mut scratch);
            axis[i] = unpack(&st);
        }
    }

    let chart = FermiChart {
        metric: metric.clone(),
        t0: geo.t0 - first.t,
        s_min: s_lo,
        s_max: s_hi,
        ds,
        delta_prime: dprime,
        axis_s0,
        axis,
        flat,
        exp_steps: 16,
    };

    // Jacobian degeneracy at the tube edge.
    let probes = 7usize;
    for k in 0..probes {
        let s = s_lo + (s_hi - s_lo) * k as f64 / (probes - 1) as f64;
        let mut z = vec![0.0; d];
        z[0] = dprime * 0.95;
        if d > 1 {
            z[1] = dprime * 0.3;
        }
        let j = chart.jacobian(s, &z);
        let det = j.determinant().abs();
        if det < 0.05 {
            return Err(GeometryError::TubeTooWide {
                radius: dprime,
                reason: format!("chart Jacobian degenerates: |det J| = {det:.3e} at s = {s:.3}"),
            }
            .into());
        }
    }
    Ok(chart)
}

/// Christoffel symbols of the effective metric, flattened [(i*d+j)*d+k],
/// computed by central differences.
fn christoffels(metric: &Metric, x: &[f64]) -> Vec<f64> {
    let d = metric.dim;
    let h = 1e-5 * (1.0 + metric.domain.diameter());
    let ginv = metric.effective_g_inv(x);
    let mut dg = vec![DMatrix::zeros(d, d); d];
    let mut xp = x.to_vec();
    for k in 0..d {
        xp[k] = x[k] + h;
        let gp = metric.effective_g(&xp);
        xp[k] = x[k] - h;
        let gm = metric.effective_g(&xp);
        xp[k] = x[k];
        dg[k] = (gp - gm) / (2.0 * h);
    }
    let mut gamma = vec![0.0; d * d * d];
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                let mut s = 0.0;
                for l in 0..d {
                    s += ginv[(i, l)] * (dg[j][(l, k)] + dg[k][(l, j)] - dg[l][(j, k)]);
                }
                gamma[(i * d + j) * d + k] = 0.5 * s;
            }
        }
    }
    gamma
}

/// Completes v to a G-orthonormal basis; returns e_2..e_d.
fn gram_schmidt_frame(metric: &Metric, x: &[f64], v: &[f64]) -> Vec<Vec<f64>> {
    let d = metric.dim;
    let g = metric.effective_g(x);
    let inner = |a: &[f64], b: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                s += g[(i, j)] * a[i] * b[j];
            }
        }
        s
    };
    let mut basis: Vec<Vec<f64>> = vec![v.to_vec()];
    for k in 0..d {
        if basis.len() == d {
            break;
        }
        let mut cand = vec![0.0; d];
        cand[k] = 1.0;
        for b in &basis {
            let c = inner(&cand, b) / inner(b, b);
            for i in 0..d {
                cand[i] -= c * b[i];
            }
        }
        let n = inner(&cand, &cand).sqrt();
        if n > 1e-8 {
            for c in &mut cand {
                *c /= n;
            }
            basis.push(cand);
        }
    }
    basis.remove(0);
    basis
}

impl FermiChart {
    pub fn dim(&self) -> usize {
        self.metric.dim
    }

    pub fn s_range(&self) -> (f64, f64) {
        (self.s_min, self.s_max)
    }

    pub fn check_s(&self, s: f64) -> Result<()> {
        if s < self.s_min - 1e-12 || s > self.s_max + 1e-12 {
            return Err(GeometryError::OutOfRange {
                s,
                lo: self.s_min,
                hi: self.s_max,
            }
            .into());
        }
        Ok(())
    }

    fn node_interp(&self, s: f64) -> AxisNode {
        let d = self.dim();
        // index clamped, weight not: smooth extrapolation just past the ends
        let u = (s - self.axis_s0) / self.ds;
        let n = self.axis.len();
        let i1 = (u.floor() as isize).clamp(1, n as isize - 3) as usize;
        let w = u - i1 as f64;
        let i0 = i1.saturating_sub(1);
        let i2 = i1 + 1;
        let i3 = (i1 + 2).min(n - 1);
        let cat = |f0: f64, f1: f64, f2: f64, f3: f64| -> f64 {
            // uniform Catmull-Rom
            0.5 * (2.0 * f1
                + (-f0 + f2) * w
                + (2.0 * f0 - 5.0 * f1 + 4.0 * f2 - f3) * w * w
                + (-f0 + 3.0 * f1 - 3.0 * f2 + f3) * w * w * w)
        };
        let nodes = [&self.axis[i0], &self.axis[i1], &self.axis[i2], &self.axis[i3]];
        let x: Vec<f64> = (0..d)
            .map(|i| cat(nodes[0].x[i], nodes[1].x[i], nodes[2].x[i], nodes[3].x[i]))
            .collect();
        let v: Vec<f64> = (0..d)
            .map(|i| cat(nodes[0].v[i], nodes[1].v[i], nodes[2].v[i], nodes[3].v[i]))
            .collect();
        let frame: Vec<Vec<f64>> = (0..d - 1)
            .map(|e| {
                (0..d)
                    .map(|i| {
                        cat(
                            nodes[0].frame[e][i],
                            nodes[1].frame[e][i],
                            nodes[2].frame[e][i],
                            nodes[3].frame[e][i],
                        )
                    })
                    .collect()
            })
            .collect();
        AxisNode { x, v, frame }
    }

    pub fn axis_point(&self, s: f64) -> Vec<f64> {
        if let Some(f) = &self.flat {
            return f
                .x0
                .iter()
                .zip(&f.omega)
                .map(|(x0, w)| x0 + s * w)
                .collect();
        }
        self.node_interp(s).x
    }

    pub fn axis_velocity(&self, s: f64) -> Vec<f64> {
        if let Some(f) = &self.flat {
            return f.omega.clone();
        }
        self.node_interp(s).v
    }

    pub fn axis_frame(&self, s: f64) -> Vec<Vec<f64>> {
        if let Some(f) = &self.flat {
            return f.frame.clone();
        }
        self.node_interp(s).frame
    }

    /// Chart-to-ambient map.
    pub fn to_ambient(&self, s: f64, z: &[f64]) -> (f64, Vec<f64>) {
        let d = self.dim();
        let t = self.t0 + s - 0.5 * z[0];
        if let Some(f) = &self.flat {
            let x: Vec<f64> = (0..d)
                .map(|i| {
                    let mut xi = f.x0[i] + (s + 0.5 * z[0]) * f.omega[i];
                    for (k, e) in f.frame.iter().enumerate() {
                        xi += z[k + 1] * e[i];
                    }
                    xi
                })
                .collect();
            return (t, x);
        }
        let node = self.node_interp(s);
        // initial velocity of the transverse spray
        let w: Vec<f64> = (0..d)
            .map(|i| {
                let mut wi = 0.5 * z[0] * node.v[i];
                for (k, e) in node.frame.iter().enumerate() {
                    wi += z[k + 1] * e[i];
                }
                wi
            })
            .collect();
        let wnorm: f64 = w.iter().map(|c| c * c).sum::<f64>().sqrt();
        if wnorm < 1e-14 {
            return (t, node.x);
        }
        let g = self.metric.effective_g(&node.x);
        let mut state = vec![0.0; 2 * d];
        state[..d].copy_from_slice(&node.x);
        for i in 0..d {
            let mut s_acc = 0.0;
            for j in 0..d {
                s_acc += g[(i, j)] * w[j];
            }
            state[d + i] = s_acc;
        }
        let rhs = |tt: f64, st: &[f64], o: &mut [f64]| geodesic_rhs(&self.metric, tt, st, o);
        rk4_integrate(&rhs, 0.0, 1.0, &mut state, self.exp_steps);
        (t, state[..d].to_vec())
    }

    /// Ambient-to-chart inversion; None outside the tube or chart range.
    pub fn from_ambient(&self, t: f64, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let d = self.dim();
        if let Some(f) = &self.flat {
            let dx: Vec<f64> = x.iter().zip(&f.x0).map(|(a, b)| a - b).collect();
            let xpar: f64 = dx.iter().zip(&f.omega).map(|(a, b)| a * b).sum();
            let dt = t - self.t0;
            let s = 0.5 * (xpar + dt);
            let mut z = vec![0.0; d];
            z[0] = xpar - dt;
            for (k, e) in f.frame.iter().enumerate() {
                z[k + 1] = dx.iter().zip(e).map(|(a, b)| a * b).sum();
            }
            if s < self.s_min || s > self.s_max {
                return None;
            }
            return Some((s, z));
        }
        // Newton with FD Jacobian; s init from the time coordinate.
        let mut s = (t - self.t0).clamp(self.s_min, self.s_max);
        let mut z = vec![0.0; d];
        for _ in 0..40 {
            let (tc, xc) = self.to_ambient(s, &z);
            let mut r = vec![tc - t];
            r.extend(xc.iter().zip(x).map(|(a, b)| a - b));
            let rn: f64 = r.iter().map(|c| c * c).sum::<f64>().sqrt();
            if rn < 1e-12 {
                break;
            }
            let jac = self.jacobian(s, &z);
            let jinv = jac.clone().try_inverse()?;
            let mut delta = vec![0.0; d + 1];
            for i in 0..d + 1 {
                for j in 0..d + 1 {
                    delta[i] += jinv[(i, j)] * r[j];
                }
            }
            s -= delta[0];
            for k in 0..d {
                z[k] -= delta[k + 1];
            }
            if s < self.s_min - 0.5 || s > self.s_max + 0.5 {
                return None;
            }
            let zn: f64 = z.iter().map(|c| c * c).sum::<f64>().sqrt();
            if zn > 3.0 * self.delta_prime {
                return None;
            }
        }
        if s < self.s_min || s > self.s_max {
            return None;
        }
        Some((s, z))
    }

    /// Jacobian of the chart map, rows (t, x1..xd), columns (s, z1..zd).
    pub fn jacobian(&self, s: f64, z: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let mut j = DMatrix::zeros(d + 1, d + 1);
        j[(0, 0)] = 1.0;
        j[(0, 1)] = -0.5;
        if let Some(f) = &self.flat {
            for i in 0..d {
                j[(i + 1, 0)] = f.omega[i];
                j[(i + 1, 1)] = 0.5 * f.omega[i];
                for (k, e) in f.frame.iter().enumerate() {
                    j[(i + 1, k + 2)] = e[i];
                }
            }
            return j;
        }
        let h = 1e-4 * self.delta_prime.max(1e-3);
        // s column
        let (_, xp) = self.to_ambient(s + h, z);
        let (_, xm) = self.to_ambient(s - h, z);
        for i in 0..d {
            j[(i + 1, 0)] = (xp[i] - xm[i]) / (2.0 * h);
        }
        let mut zz = z.to_vec();
        for k in 0..d {
            zz[k] = z[k] + h;
            let (_, xp) = self.to_ambient(s, &zz);
            zz[k] = z[k] - h;
            let (_, xm) = self.to_ambient(s, &zz);
            zz[k] = z[k];
            for i in 0..d {
                j[(i + 1, k + 1)] = (xp[i] - xm[i]) / (2.0 * h);
            }
        }
        j
    }

    /// Second derivatives of the chart map: hess[mu] = Hessian of ambient
    /// coordinate mu w.r.t. (s, z). Zero for flat charts.
    pub fn second_derivatives(&self, s: f64, z: &[f64]) -> Vec<DMatrix<f64>> {
        let d = self.dim();
        let n = d + 1;
        if self.flat.is_some() {
            return vec![DMatrix::zeros(n, n); n];
        }
        let h = 8e-3 * self.delta_prime.max(1e-3);
        let eval = |ss: f64, zz: &[f64]| -> Vec<f64> {
            let (t, x) = self.to_ambient(ss, zz);
            let mut out = vec![t];
            out.extend(x);
            out
        };
        let center = eval(s, z);
        let mut hess = vec![DMatrix::zeros(n, n); n];
        let shift = |a: usize, da: f64, b: usize, db: f64| -> Vec<f64> {
            let mut ss = s;
            let mut zz = z.to_vec();
            if a == 0 {
                ss += da;
            } else {
                zz[a - 1] += da;
            }
            if b == 0 {
                ss += db;
            } else {
                zz[b - 1] += db;
            }
            eval(ss, zz.as_slice())
        };
        for a in 0..n {
            let fp = shift(a, h, a, 0.0);
            let fm = shift(a, -h, a, 0.0);
            for mu in 0..n {
                hess[mu][(a, a)] = (fp[mu] - 2.0 * center[mu] + fm[mu]) / (h * h);
            }
            for b in a + 1..n {
                let fpp = shift(a, h, b, h);
                let fpm = shift(a, h, b, -h);
                let fmp = shift(a, -h, b, h);
                let fmm = shift(a, -h, b, -h);
                for mu in 0..n {
                    let v = (fpp[mu] - fpm[mu] - fmp[mu] + fmm[mu]) / (4.0 * h * h);
                    hess[mu][(a, b)] = v;
                    hess[mu][(b, a)] = v;
                }
            }
        }
        hess
    }

    /// Chart metric components at (s, z): J^T diag(-1, G) J.
    pub fn chart_metric(&self, s: f64, z: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let j = self.jacobian(s, z);
        let (_, x) = self.to_ambient(s, z);
        let g = self.metric.effective_g(&x);
        let mut amb = DMatrix::zeros(d + 1, d + 1);
        amb[(0, 0)] = -1.0;
        for i in 0..d {
            for k in 0..d {
                amb[(i + 1, k + 1)] = g[(i, k)];
            }
        }
        j.transpose() * amb * j
    }

    /// Inverse chart metric.
    pub fn inv_chart_metric(&self, s: f64, z: &[f64]) -> DMatrix<f64> {
        self.chart_metric(s, z)
            .try_inverse()
            .expect("chart metric invertible inside the tube")
    }

    /// Normal form of the axis metric: 2 ds dz1 + sum dz_i^2.
    pub fn normal_form(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d + 1, d + 1);
        m[(0, 1)] = 1.0;
        m[(1, 0)] = 1.0;
        for i in 2..=d {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// C matrix: diag(0, 2, .., 2).
    pub fn c_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut c = DMatrix::zeros(d, d);
        for i in 1..d {
            c[(i, i)] = 2.0;
        }
        c
    }

    /// Second transverse derivatives of Ghat^{11} on the axis, stencil width
    /// delta'/8 with one Richardson extrapolation. Exactly zero for flat
    /// charts.
    pub fn d2_g11(&self, s: f64) -> DMatrix<f64> {
        let d = self.dim();
        if self.flat.is_some() {
            return DMatrix::zeros(d, d);
        }
        let h = self.delta_prime / 8.0;
        let f = |z: &[f64]| -> f64 { self.inv_chart_metric(s, z)[(1, 1)] };
        let f0 = f(&vec![0.0; d]);
        let mut out = DMatrix::zeros(d, d);
        let at = |i: usize, c: f64, j: usize, cc: f64| -> f64 {
            let mut z = vec![0.0; d];
            z[i] += c;
            z[j] += cc;
            f(&z)
        };
        for i in 0..d {
            let fine = (at(i, h, i, 0.0) - 2.0 * f0 + at(i, -h, i, 0.0)) / (h * h);
            let coarse =
                (at(i, 2.0 * h, i, 0.0) - 2.0 * f0 + at(i, -2.0 * h, i, 0.0)) / (4.0 * h * h);
            out[(i, i)] = (4.0 * fine - coarse) / 3.0;
            for j in i + 1..d {
                let fine = (at(i, h, j, h) - at(i, h, j, -h) - at(i, -h, j, h)
                    + at(i, -h, j, -h))
                    / (4.0 * h * h);
                let coarse = (at(i, 2.0 * h, j, 2.0 * h) - at(i, 2.0 * h, j, -2.0 * h)
                    - at(i, -2.0 * h, j, 2.0 * h)
                    + at(i, -2.0 * h, j, -2.0 * h))
                    / (16.0 * h * h);
                let v = (4.0 * fine - coarse) / 3.0;
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }

    /// The (D, C) pair of the phase Hessian ODE at parameter s.
    pub fn d_matrix(&self, s: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_s(s)?;
        let d2 = self.d2_g11(s);
        Ok((d2 * 0.25, self.c_matrix()))
    }

    /// Transverse block of D (rows/cols 2..d in chart labels).
    pub fn d_transverse(&self, s: f64) -> DMatrix<f64> {
        let d = self.dim();
        let full = self.d2_g11(s) * 0.25;
        let mut out = DMatrix::zeros(d - 1, d - 1);
        for i in 1..d {
            for j in 1..d {
                out[(i - 1, j - 1)] = full[(i, j)];
            }
        }
        out
    }

    /// Full set of on-axis jets needed by the beam correctors.
    pub fn axis_jets(&self, s: f64) -> AxisJets {
        let d = self.dim();
        if self.flat.is_some() {
            return AxisJets::zero(d);
        }
        let n = d + 1;
        let h = self.delta_prime / 8.0;
        // evaluate inverse metric and density on the 5^d stencil
        let mut npts = 1usize;
        for _ in 0..d {
            npts *= 5;
        }
        let mut ghat = vec![DMatrix::zeros(n, n); npts];
        let mut rho = vec![0.0; npts];
        let offsets: Vec<Vec<i32>> = (0..npts)
            .map(|mut c| {
                (0..d)
                    .map(|_| {
                        let o = (c % 5) as i32 - 2;
                        c /= 5;
                        o
                    })
                    .collect()
            })
            .collect();
        for (pt, off) in offsets.iter().enumerate() {
            let z: Vec<f64> = off.iter().map(|o| *o as f64 * h).collect();
            let gm = self.chart_metric(s, &z);
            let det = gm.determinant().abs();
            ghat[pt] = gm.try_inverse().expect("chart metric invertible");
            rho[pt] = det.sqrt();
        }
        let idx = |off: &[i32]| -> usize {
            let mut acc = 0usize;
            let mut stride = 1usize;
            for k in 0..d {
                acc += (off[k] + 2) as usize * stride;
                stride *= 5;
            }
            acc
        };
        let val = |off: &[i32], a: usize, b: usize| ghat[idx(off)][(a, b)];
        let rho_val = |off: &[i32]| rho[idx(off)];
        let zero_off = vec![0i32; d];

        let hess = |get: &dyn Fn(&[i32]) -> f64| -> DMatrix<f64> {
            let f0 = get(&zero_off);
            let mut out = DMatrix::zeros(d, d);
            for i in 0..d {
                let mut o = zero_off.clone();
                o[i] = 1;
                let fp = get(&o);
                o[i] = -1;
                let fm = get(&o);
                o[i] = 2;
                let fp2 = get(&o);
                o[i] = -2;
                let fm2 = get(&o);
                let fine = (fp - 2.0 * f0 + fm) / (h * h);
                let coarse = (fp2 - 2.0 * f0 + fm2) / (4.0 * h * h);
                out[(i, i)] = (4.0 * fine - coarse) / 3.0;
                for j in i + 1..d {
                    let mut o = zero_off.clone();
                    let mut stencil = |oi: i32, oj: i32| {
                        o[i] = oi;
                        o[j] = oj;
                        get(&o)
                    };
                    let fine = (stencil(1, 1) - stencil(1, -1) - stencil(-1, 1)
                        + stencil(-1, -1))
                        / (4.0 * h * h);
                    let coarse = (stencil(2, 2) - stencil(2, -2) - stencil(-2, 2)
                        + stencil(-2, -2))
                        / (16.0 * h * h);
                    let v = (4.0 * fine - coarse) / 3.0;
                    out[(i, j)] = v;
                    out[(j, i)] = v;
                }
            }
            out
        };

        let mut q: Vec<Vec<DMatrix<f64>>> = (0..n)
            .map(|_| (0..n).map(|_| DMatrix::zeros(d, d)).collect())
            .collect();
        for a in 0..n {
            for b in a..n {
                let get = |off: &[i32]| val(off, a, b);
                let m = hess(&get);
                q[a][b] = m.clone();
                if a != b {
                    q[b][a] = m;
                }
            }
        }
        let w_rho = hess(&|off: &[i32]| rho_val(off));

        // third jets of Ghat^{11}
        let g11 = |off: &[i32]| val(off, 1, 1);
        let mut t11 = vec![0.0; d * d * d];
        {
            let mut set = |i: usize, j: usize, k: usize, v: f64| {
                // fully symmetric fill
                let perms = [
                    (i, j, k),
                    (i, k, j),
                    (j, i, k),
                    (j, k, i),
                    (k, i, j),
                    (k, j, i),
                ];
                for (a, b, c) in perms {
                    t11[(a * d + b) * d + c] = v;
                }
            };
            for i in 0..d {
                // d^3/dzi^3
                let mut o = zero_off.clone();
                let mut g = |oi: i32| {
                    o[i] = oi;
                    g11(&o)
                };
                let v = (g(2) - 2.0 * g(1) + 2.0 * g(-1) - g(-2)) / (2.0 * h * h * h);
                set(i, i, i, v);
                for j in 0..d {
                    if j == i {
                        continue;
                    }
                    // d^3/dzi^2 dzj
                    let mut o = zero_off.clone();
                    let mut g = |oi: i32, oj: i32| {
                        o[i] = oi;
                        o[j] = oj;
                        g11(&o)
                    };
                    let v = ((g(1, 1) - 2.0 * g(0, 1) + g(-1, 1))
                        - (g(1, -1) - 2.0 * g(0, -1) + g(-1, -1)))
                        / (2.0 * h * h * h);
                    set(i, i, j, v);
                }
            }
            if d == 3 {
                let mut o = zero_off.clone();
                let mut g = |a: i32, b: i32, c: i32| {
                    o[0] = a;
                    o[1] = b;
                    o[2] = c;
                    g11(&o)
                };
                let v = (g(1, 1, 1) - g(1, 1, -1) - g(1, -1, 1) + g(1, -1, -1)
                    - g(-1, 1, 1)
                    + g(-1, 1, -1)
                    + g(-1, -1, 1)
                    - g(-1, -1, -1))
                    / (8.0 * h * h * h);
                let perms = [
                    (0, 1, 2),
                    (0, 2, 1),
                    (1, 0, 2),
                    (1, 2, 0),
                    (2, 0, 1),
                    (2, 1, 0),
                ];
                for (a, b, c) in perms {
                    t11[(a * d + b) * d + c] = v;
                }
            }
        }
        AxisJets { dim: d, q, t11, w_rho }
    }

    /// Zero crossings of det X1 for the transverse Jacobi system
    /// Ytilde'' = -2 Dtilde Ytilde, X1(0) = 0, X1'(0) = I, integrated from the
    /// domain-entry parameter s = 0 forward. An empty list certifies the
    /// absence of conjugate points along the traced range.
    pub fn detect_conjugate_points(&self) -> Vec<f64> {
        let d = self.dim();
        if d < 2 {
            return Vec::new();
        }
        let m = d - 1;
        // Precompute Dtilde on a coarse grid, cubic interpolation in between.
        let coarse = 4.0 * self.ds;
        let n_nodes = ((self.s_max - 0.0) / coarse).ceil() as usize + 1;
        let dt_nodes: Vec<DMatrix<f64>> = (0..n_nodes)
            .map(|i| self.d_transverse((i as f64 * coarse).min(self.s_max)))
            .collect();
        let d_at = |s: f64| -> DMatrix<f64> {
            let u = (s / coarse).clamp(0.0, (n_nodes - 1) as f64);
            let i1 = (u.floor() as usize).min(n_nodes.saturating_sub(2));
            let w = u - i1 as f64;
            &dt_nodes[i1] * (1.0 - w) + &dt_nodes[(i1 + 1).min(n_nodes - 1)] * w
        };
        // state: Y (m*m), Ydot (m*m); Y' = Ydot, Ydot' = -2 Dtilde Y
        let rhs = |s: f64, st: &[f64], out: &mut [f64]| {
            let dm = d_at(s);
            for i in 0..m * m {
                out[i] = st[m * m + i];
            }
            for r in 0..m {
                for c in 0..m {
                    let mut acc = 0.0;
                    for k in 0..m {
                        acc += dm[(r, k)] * st[k * m + c];
                    }
                    out[m * m + r * m + c] = -2.0 * acc;
                }
            }
        };
        let det_of = |st: &[f64]| -> f64 {
            let y = DMatrix::from_fn(m, m, |r, c| st[r * m + c]);
            y.determinant()
        };
        let mut state = vec![0.0; 2 * m * m];
        for i in 0..m {
            state[m * m + i * m + i] = 1.0;
        }
        let h = self.ds;
        let mut scratch = vec![0.0; 10 * m * m];
        let mut s = 0.0;
        let mut crossings = Vec::new();
        let mut prev_det = det_of(&state);
        let mut prev_state = state.clone();
        while s < self.s_max - 1e-12 {
            let step = h.min(self.s_max - s);
            prev_state.copy_from_slice(&state);
            crate::util::rk4_step(&rhs, s, &mut state, step, &mut scratch);
            s += step;
            let det = det_of(&state);
            if prev_det != 0.0 && det.signum() != prev_det.signum() && s > 2.0 * h {
                // bisect inside [s - step, s]
                let mut lo = 0.0;
                let mut hi = step;
                let mut mid_state = prev_state.clone();
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    mid_state.copy_from_slice(&prev_state);
                    crate::util::rk4_step(&rhs, s - step, &mut mid_state, mid, &mut scratch);
                    if det_of(&mid_state).signum() == prev_det.signum() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo < 1e-9 {
                        break;
                    }
                }
                crossings.push(s - step + 0.5 * (lo + hi));
            }
            prev_det = det;
        }
        crossings
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::FieldSpec;
    use crate::geometry::geodesic::{trace_geodesic, NullGeodesic};
    use crate::geometry::Domain;

    fn flat_chart() -> FermiChart {
        let m = Metric::flat(2, Domain::new(vec![0.0, 0.0], vec![1.0, 1.0]));
        let g = trace_geodesic(&m, &[0.0, 0.5], &[1.0, 0.0], 2e-3).unwrap();
        build_fermi_chart(&m, &NullGeodesic { base: g, t0: 0.2 }, 0.2).unwrap()
    }

    #[test]
    fn flat_chart_is_affine_with_normal_form() {
        let c = flat_chart();
        let g = c.chart_metric(0.3, &[0.05, -0.03]);
        let nf = c.normal_form();
        assert!((g - nf).norm() < 1e-12);
        assert_eq!(c.d2_g11(0.4), DMatrix::zeros(2, 2));
    }

    #[test]
    fn flat_round_trip() {
        let c = flat_chart();
        let (t, x) = c.to_ambient(0.4, &[0.07, -0.05]);
        let (s, z) = c.from_ambient(t, &x).unwrap();
        assert!((s - 0.4).abs() < 1e-12);
        assert!((z[0] - 0.07).abs() < 1e-12);
        assert!((z[1] + 0.05).abs() < 1e-12);
    }

    fn conformal_metric() -> Metric {
        Metric::conformal(
            2,
            Domain::new(vec![-1.0, -1.0], vec![1.0, 1.0]),
            FieldSpec::Affine {
                base: 1.0,
                grad: vec![0.2, 0.1],
            },
        )
    }

    fn conformal_chart() -> FermiChart {
        let m = conformal_metric();
        let v = m.to_unit(&[-1.0, 0.1], &[1.0, 0.15]);
        let g = trace_geodesic(&m, &[-1.0, 0.1], &v, 2e-3).unwrap();
        build_fermi_chart(&m, &NullGeodesic { base: g, t0: 0.5 }, 0.25).unwrap()
    }

    #[test]
    fn curved_chart_normal_form_on_axis() {
        let c = conformal_chart();
        let nf = c.normal_form();
        for s in [0.1, 0.6, 1.2] {
            let g = c.chart_metric(s, &[0.0, 0.0]);
            assert!((g - &nf).norm() < 1e-6, "normal form violated at s = {s}");
        }
    }

    #[test]
    fn curved_chart_first_derivatives_vanish_on_axis() {
        let c = conformal_chart();
        let h = 5e-3;
        for s in [0.3, 0.9] {
            for k in 0..2 {
                let mut zp = vec![0.0, 0.0];
                zp[k] = h;
                let mut zm = vec![0.0, 0.0];
                zm[k] = -h;
                // Richardson on the first difference
                let d1 = (c.chart_metric(s, &zp) - c.chart_metric(s, &zm)) / (2.0 * h);
                let mut zp2 = vec![0.0, 0.0];
                zp2[k] = 0.5 * h;
                let mut zm2 = vec![0.0, 0.0];
                zm2[k] = -0.5 * h;
                let d2 = (c.chart_metric(s, &zp2) - c.chart_metric(s, &zm2)) / h;
                let extrap = (d2 * 4.0 - d1) / 3.0;
                assert!(
                    extrap.norm() < 1e-6,
                    "first derivative {k} at s = {s}: {}",
                    extrap.norm()
                );
            }
            // s-derivative: normal form is constant along the axis
            let da = (c.chart_metric(s + h, &[0.0, 0.0]) - c.chart_metric(s - h, &[0.0, 0.0]))
                / (2.0 * h);
            assert!(da.norm() < 1e-6);
        }
    }

    #[test]
    fn curved_round_trip() {
        let c = conformal_chart();
        let (t, x) = c.to_ambient(0.8, &[0.06, -0.04]);
        let (s, z) = c.from_ambient(t, &x).unwrap();
        assert!((s - 0.8).abs() < 1e-9);
        assert!((z[0] - 0.06).abs() < 1e-9);
        assert!((z[1] + 0.04).abs() < 1e-9);
    }

    #[test]
    fn d_matrix_symmetric_and_c_display() {
        let c = conformal_chart();
        let (dmat, cmat) = c.d_matrix(0.5).unwrap();
        assert!((dmat.clone() - dmat.transpose()).norm() == 0.0);
        assert_eq!(cmat[(0, 0)], 0.0);
        assert_eq!(cmat[(1, 1)], 2.0);
    }

    #[test]
    fn flat_no_conjugate_points() {
        let c = flat_chart();
        assert!(c.detect_conjugate_points().is_empty());
    }

    #[test]
    fn constant_curvature_conjugate_point_matches_closed_form() {
        // Wave-speed field a = (1 + (k/4)|x|^2)^2 makes the effective metric
        // the constant-curvature-k conformal model. First conjugate point of
        // the boundary entry lies at arclength pi/sqrt(k).
        let kappa = 4.0;
        let m = Metric::conformal(
            2,
            Domain::new(vec![-2.0, -2.0], vec![2.0, 2.0]),
            FieldSpec::ConstantCurvature {
                base: 1.0,
                curvature: kappa,
            },
        );
        let x0 = [-2.0, 0.0];
        let v = m.to_unit(&x0, &[1.0, 0.0]);
        let g = trace_geodesic(&m, &x0, &v, 1e-3).unwrap();
        let chart = build_fermi_chart(&m, &NullGeodesic { base: g, t0: 1.0 }, 0.15).unwrap();
        let crossings = chart.detect_conjugate_points();
        assert!(!crossings.is_empty(), "expected a conjugate point");
        let expected = std::f64::consts::PI / kappa.sqrt();
        assert!(
            (crossings[0] - expected).abs() < 1e-3,
            "got {} expected {expected}",
            crossings[0]
        );
    }

    #[test]
    fn d2_g11_matches_curvature_oracle_on_symmetry_axis() {
        // On the symmetry line of the constant-curvature model the second
        // transverse derivative of Ghat^{11} equals 2k.
        let kappa = 1.5;
        let m = Metric::conformal(
            2,
            Domain::new(vec![-2.0, -2.0], vec![2.0, 2.0]),
            FieldSpec::ConstantCurvature {
                base: 1.0,
                curvature: kappa,
            },
        );
        let x0 = [-2.0, 0.0];
        let v = m.to_unit(&x0, &[1.0, 0.0]);
        let g = trace_geodesic(&m, &x0, &v, 1e-3).unwrap();
        let chart = build_fermi_chart(&m, &NullGeodesic { base: g, t0: 1.0 }, 0.15).unwrap();
        for s in [0.4, 0.8] {
            let d2 = chart.d2_g11(s);
            assert!(
                (d2[(1, 1)] - 2.0 * kappa).abs() < 1e-4 * (1.0 + 2.0 * kappa),
                "d2_g11[transverse] = {} expected {}",
                d2[(1, 1)],
                2.0 * kappa
            );
        }
    }
}
