//! Complex Riccati solutions for the beam phase Hessian, obtained from the
//! linear system Y' = C Z, Z' = -D Y with H = Z Y^{-1}. The Riccati equation
//! itself is never integrated directly.

use nalgebra::DMatrix;
use num_complex::Complex64;
use std::sync::Arc;

use crate::error::BeamError;
use crate::geometry::FermiChart;
use crate::util::angle_diff;
use crate::Result;

/// Cubic (Catmull-Rom) interpolation weights for a uniform grid; weights
/// extrapolate smoothly just past the ends.
pub(crate) fn catmull(n: usize, s0: f64, ds: f64, s: f64) -> ([usize; 4], [f64; 4]) {
    let u = (s - s0) / ds;
    let i1 = (u.floor().max(0.0) as usize).min(n.saturating_sub(2));
    let w = u - i1 as f64;
    let i0 = i1.saturating_sub(1);
    let i2 = (i1 + 1).min(n - 1);
    let i3 = (i1 + 2).min(n - 1);
    let w2 = w * w;
    let w3 = w2 * w;
    (
        [i0, i1, i2, i3],
        [
            0.5 * (-w + 2.0 * w2 - w3),
            0.5 * (2.0 - 5.0 * w2 + 3.0 * w3),
            0.5 * (w + 4.0 * w2 - 3.0 * w3),
            0.5 * (-w2 + w3),
        ],
    )
}

/// Derivative weights of the Catmull-Rom interpolant.
pub(crate) fn catmull_deriv(n: usize, s0: f64, ds: f64, s: f64) -> ([usize; 4], [f64; 4]) {
    let u = (s - s0) / ds;
    let i1 = (u.floor().max(0.0) as usize).min(n.saturating_sub(2));
    let w = u - i1 as f64;
    let i0 = i1.saturating_sub(1);
    let i2 = (i1 + 1).min(n - 1);
    let i3 = (i1 + 2).min(n - 1);
    let w2 = w * w;
    (
        [i0, i1, i2, i3],
        [
            0.5 * (-1.0 + 4.0 * w - 3.0 * w2) / ds,
            0.5 * (-10.0 * w + 9.0 * w2) / ds,
            0.5 * (1.0 + 8.0 * w - 9.0 * w2) / ds,
            0.5 * (-2.0 * w + 3.0 * w2) / ds,
        ],
    )
}

/// D(s) sampled at half-step resolution along the chart axis.
#[derive(Debug, Clone)]
pub struct DCurve {
    pub s0: f64,
    pub half: f64,
    pub nodes: Vec<DMatrix<f64>>,
}

impl DCurve {
    pub fn sample(chart: &FermiChart, s_step: f64) -> Self {
        let (lo, hi) = chart.s_range();
        let half = s_step / 2.0;
        let n = ((hi - lo) / half).ceil() as usize + 1;
        let nodes: Vec<DMatrix<f64>> = (0..n)
            .map(|i| {
                let s = (lo + i as f64 * half).min(hi);
                chart.d2_g11(s) * 0.25
            })
            .collect();
        DCurve {
            s0: lo,
            half,
            nodes,
        }
    }

    pub fn at(&self, s: f64) -> DMatrix<f64> {
        let (idx, w) = catmull(self.nodes.len(), self.s0, self.half, s);
        &self.nodes[idx[0]] * w[0]
            + &self.nodes[idx[1]] * w[1]
            + &self.nodes[idx[2]] * w[2]
            + &self.nodes[idx[3]] * w[3]
    }

    pub fn deriv_at(&self, s: f64) -> DMatrix<f64> {
        let (idx, w) = catmull_deriv(self.nodes.len(), self.s0, self.half, s);
        &self.nodes[idx[0]] * w[0]
            + &self.nodes[idx[1]] * w[1]
            + &self.nodes[idx[2]] * w[2]
            + &self.nodes[idx[3]] * w[3]
    }
}

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub dim: usize,
    pub s0: f64,
    pub ds: f64,
    pub s_grid: Vec<f64>,
    pub y: Vec<DMatrix<Complex64>>,
    pub z: Vec<DMatrix<Complex64>>,
    pub h: Vec<DMatrix<Complex64>>,
    /// Analytic H' = -(H C H + D) at the nodes.
    pub h_dot: Vec<DMatrix<Complex64>>,
    pub h0: DMatrix<Complex64>,
    pub det_y: Vec<Complex64>,
    /// Unwrapped argument of det Y, starting at 0.
    pub arg_det_y: Vec<f64>,
    /// Leading amplitude det(Y)^{-1/2}, continuous branch.
    pub a0: Vec<Complex64>,
    pub d_curve: Arc<DCurve>,
    pub c: DMatrix<f64>,
}

/// Scalar-family initial matrix H0 = i sigma / (1 - 2 i sigma dist) * I,
/// which places the beam waist (maximal transverse concentration, width
/// ~ 1/sqrt(tau sigma)) a parameter distance `dist` ahead of the chart
/// start. Im H0 > 0 for any sigma > 0.
pub fn waist_h0(dim: usize, dist: f64, sigma: f64) -> DMatrix<Complex64> {
    let h = Complex64::new(0.0, sigma) / (Complex64::new(1.0, 0.0) - Complex64::new(0.0, 2.0 * sigma * dist));
    DMatrix::from_fn(dim, dim, |i, j| {
        if i == j {
            h
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

fn sym_min_eig_im(h: &DMatrix<Complex64>) -> f64 {
    let d = h.nrows();
    let im = DMatrix::from_fn(d, d, |i, j| 0.5 * (h[(i, j)].im + h[(j, i)].im));
    im.symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |m, &l| m.min(l))
}

/// Integrates Y' = C Z, Z' = -D Y from the chart's lower end with Y = I,
/// Z = H0, and forms H = Z Y^{-1} on a uniform grid of spacing `s_step`.
pub fn solve_riccati(
    chart: &FermiChart,
    h0: &DMatrix<Complex64>,
    s_step: f64,
) -> Result<RiccatiSolution> {
    let d = chart.dim();
    if h0.nrows() != d || h0.ncols() != d {
        return Err(BeamError::NotPositiveImaginary { min_eig: f64::NAN }.into());
    }
    let asym = (h0 - h0.transpose()).norm();
    if asym > 1e-10 {
        return Err(BeamError::NotPositiveImaginary { min_eig: f64::NAN }.into());
    }
    let min_eig = sym_min_eig_im(h0);
    if min_eig <= 0.0 {
        return Err(BeamError::NotPositiveImaginary { min_eig }.into());
    }

    let (lo, hi) = chart.s_range();
    let n = ((hi - lo) / s_step).ceil() as usize + 1;
    let ds = (hi - lo) / (n - 1) as f64;
    let d_curve = Arc::new(DCurve::sample(chart, ds));
    let c_mat = chart.c_matrix();

    // state packing: [Re Y, Im Y, Re Z, Im Z]
    let m = d * d;
    let mut state = vec![0.0; 4 * m];
    for i in 0..d {
        state[i * d + i] = 1.0;
    }
    for i in 0..d {
        for j in 0..d {
            state[2 * m + i * d + j] = h0[(i, j)].re;
            state[3 * m + i * d + j] = h0[(i, j)].im;
        }
    }
    let rhs = |s: f64, st: &[f64], out: &mut [f64]| {
        let dm = d_curve.at(s);
        // Y' = C Z
        for i in 0..d {
            for j in 0..d {
                let mut re = 0.0;
                let mut im = 0.0;
                for k in 0..d {
                    let c = c_mat[(i, k)];
                    re += c * st[2 * m + k * d + j];
                    im += c * st[3 * m + k * d + j];
                }
                out[i * d + j] = re;
                out[m + i * d + j] = im;
            }
        }
        // Z' = -D Y
        for i in 0..d {
            for j in 0..d {
                let mut re = 0.0;
                let mut im = 0.0;
                for k in 0..d {
                    let dk = dm[(i, k)];
                    re += dk * st[k * d + j];
                    im += dk * st[m + k * d + j];
                }
                out[2 * m + i * d + j] = -re;
                out[3 * m + i * d + j] = -im;
            }
        }
    };

    let unpack = |st: &[f64]| -> (DMatrix<Complex64>, DMatrix<Complex64>) {
        let y = DMatrix::from_fn(d, d, |i, j| Complex64::new(st[i * d + j], st[m + i * d + j]));
        let z = DMatrix::from_fn(d, d, |i, j| {
            Complex64::new(st[2 * m + i * d + j], st[3 * m + i * d + j])
        });
        (y, z)
    };

    let mut s_grid = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let mut zs = Vec::with_capacity(n);
    let mut hs = Vec::with_capacity(n);
    let mut h_dots = Vec::with_capacity(n);
    let mut det_y: Vec<Complex64> = Vec::with_capacity(n);
    let mut arg_det = Vec::with_capacity(n);
    let mut a0 = Vec::with_capacity(n);

    let mut scratch = vec![0.0; 20 * m];
    let mut theta = 0.0;
    for i in 0..n {
        let s = lo + i as f64 * ds;
        let (y, z) = unpack(&state);
        let det = y.determinant();
        if det.norm() < 1e-14 {
            return Err(BeamError::SingularY { s }.into());
        }
        let yinv = y.clone().try_inverse().ok_or(BeamError::SingularY { s })?;
        let mut h = &z * &yinv;
        // symmetrize (symmetric by theory, up to rounding)
        h = (h.clone() + h.transpose()) * Complex64::new(0.5, 0.0);
        let hdot = {
            let dm = d_curve.at(s);
            let dmc = DMatrix::from_fn(d, d, |r, c| Complex64::new(dm[(r, c)], 0.0));
            let cc = DMatrix::from_fn(d, d, |r, c| Complex64::new(c_mat[(r, c)], 0.0));
            -(&h * &cc * &h) - dmc
        };
        if i > 0 {
            let jump = angle_diff(det.arg(), det_y[i - 1].arg());
            if jump.abs() > std::f64::consts::FRAC_PI_2 {
                return Err(BeamError::BranchAmbiguity { s, jump: jump.abs() }.into());
            }
            theta += jump;
        }
        s_grid.push(s);
        det_y.push(det);
        arg_det.push(theta);
        a0.push(Complex64::from_polar(
            det.norm().powf(-0.5),
            -0.5 * theta,
        ));
        ys.push(y);
        zs.push(z);
        hs.push(h);
        h_dots.push(hdot);
        if i + 1 < n {
            crate::util::rk4_step(&rhs, s, &mut state, ds, &mut scratch);
        }
    }

    Ok(RiccatiSolution {
        dim: d,
        s0: lo,
        ds,
        s_grid,
        y: ys,
        z: zs,
        h: hs,
        h_dot: h_dots,
        h0: h0.clone(),
        det_y,
        arg_det_y: arg_det,
        a0,
        d_curve,
        c: c_mat,
    })
}

impl RiccatiSolution {
    fn interp_mat(&self, series: &[DMatrix<Complex64>], s: f64) -> DMatrix<Complex64> {
        let (idx, w) = catmull(series.len(), self.s0, self.ds, s);
        let mut out = series[idx[0]].clone() * Complex64::new(w[0], 0.0);
        out += series[idx[1]].clone() * Complex64::new(w[1], 0.0);
        out += series[idx[2]].clone() * Complex64::new(w[2], 0.0);
        out += series[idx[3]].clone() * Complex64::new(w[3], 0.0);
        out
    }

    fn interp_mat_deriv(&self, series: &[DMatrix<Complex64>], s: f64) -> DMatrix<Complex64> {
        let (idx, w) = catmull_deriv(series.len(), self.s0, self.ds, s);
        let mut out = series[idx[0]].clone() * Complex64::new(w[0], 0.0);
        out += series[idx[1]].clone() * Complex64::new(w[1], 0.0);
        out += series[idx[2]].clone() * Complex64::new(w[2], 0.0);
        out += series[idx[3]].clone() * Complex64::new(w[3], 0.0);
        out
    }

    pub fn h_at(&self, s: f64) -> DMatrix<Complex64> {
        self.interp_mat(&self.h, s)
    }

    pub fn h_dot_at(&self, s: f64) -> DMatrix<Complex64> {
        self.interp_mat(&self.h_dot, s)
    }

    pub fn h_ddot_at(&self, s: f64) -> DMatrix<Complex64> {
        self.interp_mat_deriv(&self.h_dot, s)
    }

    pub fn y_at(&self, s: f64) -> DMatrix<Complex64> {
        self.interp_mat(&self.y, s)
    }

    /// Leading amplitude A0(s) = det(Y)^{-1/2}, continuous branch.
    pub fn a0_at(&self, s: f64) -> Complex64 {
        let (idx, w) = catmull(self.a0.len(), self.s0, self.ds, s);
        self.a0[idx[0]] * w[0] + self.a0[idx[1]] * w[1] + self.a0[idx[2]] * w[2]
            + self.a0[idx[3]] * w[3]
    }

    /// A0'(s) = -1/2 Tr(C H) A0(s), the transport relation.
    pub fn a0_dot_at(&self, s: f64) -> Complex64 {
        let h = self.h_at(s);
        let mut tr = Complex64::new(0.0, 0.0);
        for i in 0..self.dim {
            for k in 0..self.dim {
                tr += Complex64::new(self.c[(i, k)], 0.0) * h[(k, i)];
            }
        }
        -0.5 * tr * self.a0_at(s)
    }

    pub fn a0_ddot_at(&self, s: f64) -> Complex64 {
        // differentiate A0' = -1/2 Tr(C H) A0
        let h = self.h_at(s);
        let hdot = self.h_dot_at(s);
        let tr = |m: &DMatrix<Complex64>| -> Complex64 {
            let mut t = Complex64::new(0.0, 0.0);
            for i in 0..self.dim {
                for k in 0..self.dim {
                    t += Complex64::new(self.c[(i, k)], 0.0) * m[(k, i)];
                }
            }
            t
        };
        let a0 = self.a0_at(s);
        let a0d = self.a0_dot_at(s);
        -0.5 * (tr(&hdot) * a0 + tr(&h) * a0d)
    }

    /// Smallest eigenvalue of Im H over the grid.
    pub fn min_eig_im_h(&self) -> f64 {
        self.h
            .iter()
            .map(|h| sym_min_eig_im(h))
            .fold(f64::INFINITY, f64::min)
    }

    /// Max relative deviation of det(Im H) |det Y|^2 from det(Im H0).
    pub fn det_identity_residual(&self) -> f64 {
        let d = self.dim;
        let target = DMatrix::from_fn(d, d, |i, j| self.h0[(i, j)].im).determinant();
        let mut worst: f64 = 0.0;
        for (h, det_y) in self.h.iter().zip(&self.det_y) {
            let im = DMatrix::from_fn(d, d, |i, j| 0.5 * (h[(i, j)].im + h[(j, i)].im));
            let v = im.determinant() * det_y.norm_sqr();
            worst = worst.max((v - target).abs() / target.abs());
        }
        worst
    }

    /// Max residual of H Y - Z over the grid.
    pub fn factorization_residual(&self) -> f64 {
        self.h
            .iter()
            .zip(self.y.iter().zip(&self.z))
            .map(|(h, (y, z))| (h * y - z).norm())
            .fold(0.0f64, f64::max)
    }

    /// Transverse block Ytilde (rows/cols 2..d in chart labels) on the grid.
    pub fn transverse_y(&self) -> Vec<DMatrix<Complex64>> {
        let d = self.dim;
        self.y
            .iter()
            .map(|y| DMatrix::from_fn(d - 1, d - 1, |i, j| y[(i + 1, j + 1)]))
            .collect()
    }
}

/// Leading-amplitude series with an independent transport-equation check:
/// the residual 2 dA0/ds + Tr(C H) A0 is measured with finite differences of
/// the branch-tracked A0 (not the analytic relation), so branch jumps and
/// interpolation faults surface here.
pub struct AmplitudeSeries<'a> {
    pub riccati: &'a RiccatiSolution,
    pub transport_residual_max: f64,
}

pub fn amplitude_leading(riccati: &RiccatiSolution) -> AmplitudeSeries<'_> {
    let n = riccati.a0.len();
    let ds = riccati.ds;
    let mut worst: f64 = 0.0;
    for i in 1..n - 1 {
        let da = (riccati.a0[i + 1] - riccati.a0[i - 1]) / (2.0 * ds);
        let h = &riccati.h[i];
        let mut tr = Complex64::new(0.0, 0.0);
        for r in 0..riccati.dim {
            for k in 0..riccati.dim {
                tr += Complex64::new(riccati.c[(r, k)], 0.0) * h[(k, r)];
            }
        }
        let res = 2.0 * da + tr * riccati.a0[i];
        worst = worst.max(res.norm());
    }
    AmplitudeSeries {
        riccati,
        transport_residual_max: worst,
    }
}

impl<'a> AmplitudeSeries<'a> {
    pub fn at(&self, s: f64) -> Complex64 {
        self.riccati.a0_at(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_fermi_chart, trace_geodesic, Domain, Metric, NullGeodesic};

    fn flat_chart() -> FermiChart {
        let m = Metric::flat(2, Domain::new(vec![0.0, 0.0], vec![2.0, 1.0]));
        let g = trace_geodesic(&m, &[0.0, 0.5], &[1.0, 0.0], 2e-3).unwrap();
        build_fermi_chart(&m, &NullGeodesic { base: g, t0: 0.3 }, 0.3).unwrap()
    }

    fn identity_h0(d: usize) -> DMatrix<Complex64> {
        DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                Complex64::new(0.0, 1.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    #[test]
    fn flat_closed_form_h22() {
        let chart = flat_chart();
        let sol = solve_riccati(&chart, &identity_h0(2), 5e-3).unwrap();
        let lo = chart.s_range().0;
        for (i, s) in sol.s_grid.iter().enumerate() {
            let delta = s - lo;
            let denom = 1.0 + 4.0 * delta * delta;
            let expected = Complex64::new(2.0 * delta / denom, 1.0 / denom);
            assert!(
                (sol.h[i][(1, 1)] - expected).norm() < 1e-8,
                "H22 mismatch at delta = {delta}"
            );
            assert!((sol.h[i][(0, 0)] - Complex64::new(0.0, 1.0)).norm() < 1e-8);
            assert!(sol.h[i][(0, 1)].norm() < 1e-10);
        }
    }

    #[test]
    fn flat_closed_form_a0() {
        let chart = flat_chart();
        let sol = solve_riccati(&chart, &identity_h0(2), 5e-3).unwrap();
        let lo = chart.s_range().0;
        for (i, s) in sol.s_grid.iter().enumerate() {
            let delta = s - lo;
            let expected = Complex64::new(1.0, 2.0 * delta).powf(-0.5);
            assert!(
                (sol.a0[i] - expected).norm() < 1e-8,
                "A0 mismatch at delta = {delta}: {} vs {expected}",
                sol.a0[i]
            );
        }
    }

    #[test]
    fn det_identity_flat() {
        let chart = flat_chart();
        let sol = solve_riccati(&chart, &identity_h0(2), 5e-3).unwrap();
        assert!(sol.det_identity_residual() < 1e-8);
        assert!(sol.min_eig_im_h() > 0.0);
        assert!(sol.factorization_residual() < 1e-8);
    }

    #[test]
    fn transport_residual_small() {
        // |A0'''| ~ 15 near the waist: ds = 1e-3 keeps the FD check under 1e-5
        let chart = flat_chart();
        let sol = solve_riccati(&chart, &identity_h0(2), 1e-3).unwrap();
        let amp = amplitude_leading(&sol);
        assert!(
            amp.transport_residual_max < 1e-5,
            "transport residual {}",
            amp.transport_residual_max
        );
    }

    #[test]
    fn asymmetric_h0_rejected() {
        let chart = flat_chart();
        let mut h0 = identity_h0(2);
        h0[(0, 1)] = Complex64::new(0.3, 0.0);
        assert!(solve_riccati(&chart, &h0, 5e-3).is_err());
    }

    #[test]
    fn non_positive_imaginary_rejected() {
        let chart = flat_chart();
        let mut h0 = identity_h0(2);
        h0[(1, 1)] = Complex64::new(0.5, -0.1);
        let err = solve_riccati(&chart, &h0, 5e-3).unwrap_err();
        assert!(matches!(
            err,
            crate::Error::Beam(BeamError::NotPositiveImaginary { .. })
        ));
    }

    #[test]
    fn y_identity_gives_unit_a0() {
        // At the initial node Y = I: A0 = 1 exactly.
        let chart = flat_chart();
        let sol = solve_riccati(&chart, &identity_h0(2), 5e-3).unwrap();
        assert!((sol.a0[0] - Complex64::new(1.0, 0.0)).norm() < 1e-14);
    }
}
