//! Light-ray transforms: unweighted integrals along null lifts and
//! determinant-weighted integrals along spatial geodesics.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::beams::RiccatiSolution;
use crate::error::TransformError;
use crate::forward::WaveField;
use crate::geometry::{Geodesic, NullGeodesic};
use crate::util::angle_diff;
use crate::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RayTransformRecord {
    pub geodesic_id: usize,
    /// Weight power m (0 for the unweighted null transform).
    pub weight_m: i32,
    pub value_re: f64,
    pub value_im: f64,
}

/// Unweighted transform of a space-time function along a null lift:
///   J f = int f(t0 + t, gamma(t)) dt over the traced range.
pub fn ray_transform_null(
    f: impl Fn(f64, &[f64]) -> Complex64,
    ng: &NullGeodesic,
) -> Complex64 {
    let samples = &ng.base.samples;
    let mut acc = Complex64::new(0.0, 0.0);
    for win in samples.windows(2) {
        let (a, b) = (&win[0], &win[1]);
        let fa = f(ng.t0 + a.t, &a.x);
        let fb = f(ng.t0 + b.t, &b.x);
        acc += 0.5 * (fa + fb) * (b.t - a.t);
    }
    acc
}

/// Samples a solver field along the null lift (multilinear in space, linear
/// in time); errors if the path leaves the field's lattice.
pub fn ray_transform_null_field(field: &WaveField, ng: &NullGeodesic) -> Result<Complex64> {
    let grid = &field.grid;
    let dom = grid.domain();
    for s in &ng.base.samples {
        let t = ng.t0 + s.t;
        if !dom.contains(&s.x) || t < 0.0 || t > grid.t_max {
            return Err(TransformError::PathOutsideField.into());
        }
    }
    let nn = grid.nn();
    let sample = |t: f64, x: &[f64]| -> Complex64 {
        let it = ((t / grid.dt).floor() as usize).min(grid.nt - 1);
        let wt = t / grid.dt - it as f64;
        let interp_slice = |slice: &[f64]| -> f64 {
            // multilinear in space
            let d = grid.dim;
            let mut base = vec![0usize; d];
            let mut frac = vec![0.0f64; d];
            for k in 0..d {
                let u = ((x[k] - grid.lo[k]) / grid.dx[k]).clamp(0.0, (grid.n[k] - 1) as f64);
                let i = (u.floor() as usize).min(grid.n[k] - 2);
                base[k] = i;
                frac[k] = u - i as f64;
            }
            let mut acc = 0.0;
            for c in 0..(1usize << d) {
                let mut w = 1.0;
                let mut idx = vec![0usize; d];
                for k in 0..d {
                    let bit = (c >> k) & 1;
                    w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                    idx[k] = base[k] + bit;
                }
                acc += w * slice[grid.flat_index(&idx)];
            }
            acc
        };
        let lo = interp_slice(&field.u[it * nn..(it + 1) * nn]);
        let hi = interp_slice(&field.u[(it + 1) * nn..(it + 2) * nn]);
        Complex64::new(lo * (1.0 - wt) + hi * wt, 0.0)
    };
    Ok(ray_transform_null(sample, ng))
}

/// Complex weight series |det Ytilde|^{-1} (det Ytilde)^{-m/2} with a
/// continuous branch of the argument along the parameter grid.
pub(crate) fn branch_weights(
    det: &[Complex64],
    m: f64,
) -> std::result::Result<Vec<Complex64>, (usize, f64)> {
    let mut theta = det[0].arg();
    let mut out = Vec::with_capacity(det.len());
    let mut prev = det[0].arg();
    for (i, dv) in det.iter().enumerate() {
        let a = dv.arg();
        if i > 0 {
            theta += angle_diff(a, prev);
        }
        prev = a;
        let r = dv.norm();
        if r < 1e-12 {
            return Err((i, r));
        }
        // |det|^{-1} * det^{-m/2} = r^{-1 - m/2} exp(-i m theta / 2)
        out.push(Complex64::from_polar(
            r.powf(-1.0 - m / 2.0),
            -0.5 * m * theta,
        ));
    }
    Ok(out)
}

/// Weighted spatial ray transform
///   J^m f = int f(gamma(t)) |det Ytilde(t)|^{-1} (det Ytilde(t))^{-m/2} dt
/// over the in-domain parameter range of the geodesic, with Ytilde the
/// transverse block of the Riccati solution.
pub fn ray_transform_weighted(
    f: impl Fn(&[f64]) -> f64,
    geo: &Geodesic,
    riccati: &RiccatiSolution,
    m: i32,
) -> Result<Complex64> {
    assert!(m >= 1, "weight power must be >= 1");
    let ty = riccati.transverse_y();
    let nu = ty[0].nrows();
    let t_lo = geo.samples.first().unwrap().t;
    let t_hi = geo.samples.last().unwrap().t;
    // dedicated uniform quadrature grid over the clipped range, with the
    // transverse block interpolated onto it (endpoints included exactly)
    let n_q = (riccati.s_grid.len() * 4).max(1601);
    let dq = (t_hi - t_lo) / (n_q - 1) as f64;
    let det: Vec<Complex64> = (0..n_q)
        .map(|i| {
            let s = t_lo + i as f64 * dq;
            let (idx, w) = crate::beams::riccati::catmull(
                riccati.s_grid.len(),
                riccati.s0,
                riccati.ds,
                s,
            );
            let mut y = DMatrix::zeros(nu, nu);
            for (k, wk) in idx.iter().zip(&w) {
                y += &ty[*k] * Complex64::new(*wk, 0.0);
            }
            y.determinant()
        })
        .collect();
    let weights = branch_weights(&det, m as f64).map_err(|(i, r)| {
        TransformError::DegenerateWeight {
            t: t_lo + i as f64 * dq,
            det_abs: r,
        }
    })?;
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n_q {
        let s = t_lo + i as f64 * dq;
        let val = f(&geo.point_at(s)) * weights[i];
        acc += crate::util::trapezoid_weight(i, n_q) * dq * val;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beams::solve_riccati;
    use crate::geometry::{build_fermi_chart, trace_geodesic, Domain, Metric};
    use std::sync::Arc;

    fn flat_line() -> (Metric, Geodesic) {
        let m = Metric::flat(2, Domain::new(vec![0.0, 0.0], vec![1.0, 1.0]));
        let g = trace_geodesic(&m, &[0.0, 0.5], &[1.0, 0.0], 1e-3).unwrap();
        (m, g)
    }

    #[test]
    fn null_transform_of_one_is_the_length() {
        let (_, g) = flat_line();
        let ng = NullGeodesic { base: g, t0: 0.0 };
        let v = ray_transform_null(|_, _| Complex64::new(1.0, 0.0), &ng);
        assert!((v.re - 1.0).abs() < 1e-9);
        assert!(v.im == 0.0);
    }

    #[test]
    fn null_transform_gaussian_matches_fine_quadrature() {
        let (_, g) = flat_line();
        let ng = NullGeodesic { base: g, t0: 0.0 };
        let f = |_t: f64, x: &[f64]| {
            Complex64::new((-40.0 * (x[0] - 0.5) * (x[0] - 0.5)).exp(), 0.0)
        };
        let v = ray_transform_null(f, &ng);
        // dense reference
        let n = 400_001;
        let mut acc = 0.0;
        for i in 0..n {
            let t = i as f64 / (n - 1) as f64;
            let w = crate::util::trapezoid_weight(i, n) / (n - 1) as f64;
            acc += w * (-40.0 * (t - 0.5) * (t - 0.5)).exp();
        }
        assert!((v.re - acc).abs() < 1e-8, "{} vs {acc}", v.re);
    }

    #[test]
    fn null_transform_linearity() {
        let (_, g) = flat_line();
        let ng = NullGeodesic { base: g, t0: 0.0 };
        let f1 = |_: f64, x: &[f64]| Complex64::new(x[0], 0.0);
        let f2 = |_: f64, x: &[f64]| Complex64::new((3.0 * x[0]).cos(), 0.0);
        let lhs = ray_transform_null(
            |t, x: &[f64]| 2.0 * f1(t, x) - 0.7 * f2(t, x),
            &ng,
        );
        let rhs = 2.0 * ray_transform_null(f1, &ng) - 0.7 * ray_transform_null(f2, &ng);
        assert!((lhs - rhs).norm() < 1e-13);
    }

    fn flat_riccati(geo: &Geodesic, m: &Metric) -> RiccatiSolution {
        let chart = Arc::new(
            build_fermi_chart(
                m,
                &NullGeodesic {
                    base: geo.clone(),
                    t0: 0.0,
                },
                0.2,
            )
            .unwrap(),
        );
        let h0 = DMatrix::from_fn(2, 2, |i, j| {
            if i == j {
                Complex64::new(0.0, 1.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        solve_riccati(&chart, &h0, 1e-3).unwrap()
    }

    #[test]
    fn weighted_transform_closed_form_m2() {
        let (m, g) = flat_line();
        let riccati = flat_riccati(&g, &m);
        // Ytilde = 1 + 2i Delta with Delta = t + delta'; antiderivative of
        // the m=2 weight is (2 Delta + i) / (2 sqrt(1 + 4 Delta^2))
        let dp = 0.2;
        let v = ray_transform_weighted(|_| 1.0, &g, &riccati, 2).unwrap();
        let anti = |delta: f64| {
            Complex64::new(2.0 * delta, 1.0) / (2.0 * (1.0 + 4.0 * delta * delta).sqrt())
        };
        let expected = anti(1.0 + dp) - anti(dp);
        assert!(
            (v - expected).norm() < 1e-8,
            "weighted transform {v} vs {expected}"
        );
    }

    #[test]
    fn weighted_transform_zero_field() {
        let (m, g) = flat_line();
        let riccati = flat_riccati(&g, &m);
        for mm in [1, 2, 3, 5] {
            let v = ray_transform_weighted(|_| 0.0, &g, &riccati, mm).unwrap();
            assert_eq!(v, Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn weighted_transform_branch_stable_under_refinement() {
        let (m, g) = flat_line();
        let chart = Arc::new(
            build_fermi_chart(
                &m,
                &NullGeodesic {
                    base: g.clone(),
                    t0: 0.0,
                },
                0.2,
            )
            .unwrap(),
        );
        let h0 = DMatrix::from_fn(2, 2, |i, j| {
            if i == j {
                Complex64::new(0.0, 1.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let coarse = solve_riccati(&chart, &h0, 4e-3).unwrap();
        let fine = solve_riccati(&chart, &h0, 1e-3).unwrap();
        let f = |x: &[f64]| 1.0 + 0.5 * (3.0 * x[0]).sin();
        let v1 = ray_transform_weighted(f, &g, &coarse, 3).unwrap();
        let v2 = ray_transform_weighted(f, &g, &fine, 3).unwrap();
        assert!((v1 - v2).norm() < 1e-8, "branch drift {}", (v1 - v2).norm());
    }
}
