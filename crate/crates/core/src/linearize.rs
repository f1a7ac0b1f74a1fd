//! Successive linearization of simulated DtN data by epsilon-differencing,
//! and the integral identities coupling coefficient differences to probe and
//! auxiliary fields.

use num_complex::Complex64;

use crate::error::{ForwardError, LinearizeError};
use crate::fields::FieldSpec;
use crate::forward::{
    dtn, solve_forward, BoundarySignal, Coefficients, DtnTrace, SolveOptions, SpaceTimeGrid,
    WaveField,
};
use crate::geometry::Metric;
use crate::Result;

#[derive(Debug, Clone)]
pub struct DtnDerivative {
    pub order: usize,
    /// Epsilon ladder, coarsest first.
    pub eps_ladder: Vec<f64>,
    /// Richardson-extrapolated k-th mixed derivative of the DtN map.
    pub trace: DtnTrace,
    /// Disagreement of consecutive extrapolants (L2 of the boundary cylinder).
    pub richardson_error: f64,
}

/// Central tensor-product mixed difference of the DtN map at one epsilon.
fn mixed_difference(
    metric: &Metric,
    coeffs: &Coefficients,
    grid: &SpaceTimeGrid,
    h_list: &[&BoundarySignal],
    eps: f64,
) -> Result<DtnTrace> {
    let k = h_list.len();
    let nn = grid.nn();
    let mut acc: Option<DtnTrace> = None;
    for mask in 0..(1usize << k) {
        let mut sign = 1.0;
        let mut h = BoundarySignal::zero(grid);
        for (i, hi) in h_list.iter().enumerate() {
            let s = if (mask >> i) & 1 == 1 { 1.0 } else { -1.0 };
            sign *= s;
            for (v, w) in h.values.iter_mut().zip(&hi.values) {
                *v += s * eps * w;
            }
        }
        let u = solve_forward(
            metric,
            coeffs,
            grid,
            &h,
            &vec![0.0; nn],
            &vec![0.0; nn],
            &SolveOptions::default(),
        )?;
        let tr = dtn(metric, coeffs, &u)?;
        let factor = sign / (2.0 * eps).powi(k as i32);
        acc = Some(match acc {
            None => tr.combine(0.0, &tr, factor)?,
            Some(a) => a.combine(1.0, &tr, factor)?,
        });
    }
    Ok(acc.expect("at least one stencil point"))
}

/// k-th mixed derivative of the DtN map in the input amplitudes, by central
/// tensor-product differences with one Richardson step over the ladder
/// {eps0, eps0/2, eps0/4}. The boundary inputs must stay inside the
/// smallness neighborhood of the well-posedness guard.
pub fn dtn_derivative(
    metric: &Metric,
    coeffs: &Coefficients,
    grid: &SpaceTimeGrid,
    h_list: &[&BoundarySignal],
    eps0: f64,
) -> Result<DtnDerivative> {
    let k = h_list.len();
    assert!(k >= 1 && k <= 4, "derivative order limited to 1..=4");
    let ladder = [eps0, eps0 / 2.0, eps0 / 4.0];
    let t: Vec<DtnTrace> = ladder
        .iter()
        .map(|&e| mixed_difference(metric, coeffs, grid, h_list, e))
        .collect::<Result<_>>()?;
    // Richardson for O(eps^2) central errors
    let r1 = t[1].combine(4.0 / 3.0, &t[0], -1.0 / 3.0)?;
    let r2 = t[2].combine(4.0 / 3.0, &t[1], -1.0 / 3.0)?;
    let disagreement = r1.combine(1.0, &r2, -1.0)?.l2();
    let predicted = t[1].combine(1.0, &t[2], -1.0)?.l2() / 3.0;
    if disagreement > 10.0 * predicted.max(1e-14) {
        return Err(LinearizeError::LadderInconsistent {
            disagreement,
            predicted,
        }
        .into());
    }
    Ok(DtnDerivative {
        order: k,
        eps_ladder: ladder.to_vec(),
        trace: r2,
        richardson_error: disagreement,
    })
}

/// Centered divergence-form Laplacian of one time slice (zero on the
/// boundary ring).
fn slice_laplacian(grid: &SpaceTimeGrid, metric: &Metric, slice: &[f64]) -> Vec<f64> {
    let nn = grid.nn();
    let d = grid.dim;
    let strides = grid.strides();
    let mut out = vec![0.0; nn];
    for i in 0..nn {
        if grid.is_boundary(i) {
            continue;
        }
        let x = grid.node_coords(i);
        let rho = metric.sqrt_det_g(&x);
        let mut acc = 0.0;
        for k in 0..d {
            let s = strides[k];
            let dx = grid.dx[k];
            let mut xp = x.clone();
            xp[k] += 0.5 * dx;
            let mp = metric.sqrt_det_g(&xp) * metric.g_inv(&xp)[(k, k)];
            xp[k] = x[k] - 0.5 * dx;
            let mm = metric.sqrt_det_g(&xp) * metric.g_inv(&xp)[(k, k)];
            acc += (mp * (slice[i + s] - slice[i]) - mm * (slice[i] - slice[i - s])) / (dx * dx);
        }
        out[i] = acc / rho;
    }
    out
}

/// First-order integral identity between two models:
///   L1 = int_M [(a2 - a1) w Lap_g v1 + (c1_2 - c1_1) w v1] dV.
/// Vanishes identically when the models coincide (zero integrand, no
/// cancellation involved).
pub fn integral_identity_l1(
    metric: &Metric,
    model1: &Coefficients,
    model2: &Coefficients,
    v1: &WaveField,
    w: &WaveField,
) -> Result<Complex64> {
    if !v1.grid.same_layout(&w.grid) {
        return Err(ForwardError::GridMismatch("L1 identity inputs".into()).into());
    }
    let grid = &v1.grid;
    let nn = grid.nn();
    let da: Vec<f64> = (0..nn)
        .map(|i| {
            let x = grid.node_coords(i);
            model2.a.eval(&x) - model1.a.eval(&x)
        })
        .collect();
    let dc: Vec<f64> = (0..nn)
        .map(|i| {
            let x = grid.node_coords(i);
            model2.c_k(1).eval(&x) - model1.c_k(1).eval(&x)
        })
        .collect();
    if da.iter().all(|v| *v == 0.0) && dc.iter().all(|v| *v == 0.0) {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let mut total = 0.0;
    for it in 0..=grid.nt {
        let wt = crate::util::trapezoid_weight(it, grid.nt + 1) * grid.dt;
        let lap = slice_laplacian(grid, metric, v1.slice(it));
        let ws = w.slice(it);
        let vs = v1.slice(it);
        for i in 0..nn {
            let val = da[i] * ws[i] * lap[i] + dc[i] * ws[i] * vs[i];
            if val != 0.0 {
                total +=
                    wt * grid.volume_weight(i) * metric.sqrt_det_g(&grid.node_coords(i)) * val;
            }
        }
    }
    Ok(Complex64::new(total, 0.0))
}

/// Data-side second-order functional: I2 = -int_Sigma a g0 Lambda^(12).
pub fn compute_i2_from_boundary(
    a: &FieldSpec,
    g0: &BoundarySignal,
    lambda12: &DtnTrace,
) -> Result<Complex64> {
    if !g0.grid.same_layout(&lambda12.grid) {
        return Err(ForwardError::GridMismatch("I2 boundary inputs".into()).into());
    }
    let grid = &g0.grid;
    let mut acc = 0.0;
    for it in 0..=grid.nt {
        let wt = crate::util::trapezoid_weight(it, grid.nt + 1) * grid.dt;
        for (j, &b) in g0.nodes.iter().enumerate() {
            let x = grid.node_coords(b);
            acc += wt * grid.boundary_weight(b) * a.eval(&x) * g0.at(it, j) * lambda12.at(it, j);
        }
    }
    Ok(Complex64::new(-acc, 0.0))
}

/// Volume-side of the same functional:
///   I2 = int [ <grad wtilde, grad(b2 v1 v2)>_g + c2 v1 v2 w ] dV_g dt,
/// with wtilde = a w. Serves as the duality oracle for the boundary route.
pub fn i2_volume_side(
    metric: &Metric,
    coeffs: &Coefficients,
    w: &WaveField,
    v1: &WaveField,
    v2: &WaveField,
) -> Result<Complex64> {
    let grid = &w.grid;
    if !v1.grid.same_layout(grid) || !v2.grid.same_layout(grid) {
        return Err(ForwardError::GridMismatch("I2 volume inputs".into()).into());
    }
    let nn = grid.nn();
    let d = grid.dim;
    let strides = grid.strides();
    let coords: Vec<Vec<f64>> = (0..nn).map(|i| grid.node_coords(i)).collect();
    let a_vals: Vec<f64> = coords.iter().map(|x| coeffs.a.eval(x)).collect();
    let b2: Vec<f64> = coords.iter().map(|x| coeffs.b_n.eval(x)).collect();
    let c2f = coeffs.c_k(2);
    let c2: Vec<f64> = coords.iter().map(|x| c2f.eval(x)).collect();

    let mut total = 0.0;
    let mut wtilde = vec![0.0; nn];
    let mut q = vec![0.0; nn];
    for it in 0..=grid.nt {
        let wt = crate::util::trapezoid_weight(it, grid.nt + 1) * grid.dt;
        let ws = w.slice(it);
        let v1s = v1.slice(it);
        let v2s = v2.slice(it);
        for i in 0..nn {
            wtilde[i] = a_vals[i] * ws[i];
            q[i] = b2[i] * v1s[i] * v2s[i];
        }
        for i in 0..nn {
            let x = &coords[i];
            let ginv = metric.g_inv(x);
            let rho = metric.sqrt_det_g(x);
            let idx = grid.multi_index(i);
            let mut grad_dot = 0.0;
            for k in 0..d {
                let s = strides[k];
                let dx = grid.dx[k];
                let (dwk, dqk) = if idx[k] == 0 {
                    (
                        (-3.0 * wtilde[i] + 4.0 * wtilde[i + s] - wtilde[i + 2 * s]) / (2.0 * dx),
                        (-3.0 * q[i] + 4.0 * q[i + s] - q[i + 2 * s]) / (2.0 * dx),
                    )
                } else if idx[k] + 1 == grid.n[k] {
                    (
                        (3.0 * wtilde[i] - 4.0 * wtilde[i - s] + wtilde[i - 2 * s]) / (2.0 * dx),
                        (3.0 * q[i] - 4.0 * q[i - s] + q[i - 2 * s]) / (2.0 * dx),
                    )
                } else {
                    (
                        (wtilde[i + s] - wtilde[i - s]) / (2.0 * dx),
                        (q[i + s] - q[i - s]) / (2.0 * dx),
                    )
                };
                grad_dot += ginv[(k, k)] * dwk * dqk;
            }
            let val = grad_dot + c2[i] * v1s[i] * v2s[i] * ws[i];
            total += wt * grid.volume_weight(i) * rho * val;
        }
    }
    Ok(Complex64::new(total, 0.0))
}

/// k-th order integral identity: int w (c2_k - c1_k) u1 ... uk dV.
pub fn integral_identity_lk(
    metric: &Metric,
    model1: &Coefficients,
    model2: &Coefficients,
    k: usize,
    factors: &[&WaveField],
    w: &WaveField,
) -> Result<Complex64> {
    assert!(k >= 3, "use the L1/L2 identities below third order");
    assert_eq!(factors.len(), k);
    let grid = &w.grid;
    for f in factors {
        if !f.grid.same_layout(grid) {
            return Err(ForwardError::GridMismatch("Lk identity inputs".into()).into());
        }
    }
    let nn = grid.nn();
    let dc: Vec<f64> = (0..nn)
        .map(|i| {
            let x = grid.node_coords(i);
            model2.c_k(k).eval(&x) - model1.c_k(k).eval(&x)
        })
        .collect();
    if dc.iter().all(|v| *v == 0.0) {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let sqrt_g: Vec<f64> = (0..nn)
        .map(|i| metric.sqrt_det_g(&grid.node_coords(i)))
        .collect();
    let mut total = 0.0;
    for it in 0..=grid.nt {
        let wt = crate::util::trapezoid_weight(it, grid.nt + 1) * grid.dt;
        for i in 0..nn {
            if dc[i] == 0.0 {
                continue;
            }
            let mut prod = w.slice(it)[i] * dc[i];
            for f in factors {
                prod *= f.slice(it)[i];
            }
            total += wt * grid.volume_weight(i) * sqrt_g[i] * prod;
        }
    }
    Ok(Complex64::new(total, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{solve_linearized_first, ProducedBy};
    use crate::geometry::Domain;
    use crate::util::smoothstep;

    fn setup(n: usize, t_max: f64) -> (Metric, SpaceTimeGrid) {
        let m = Metric::flat(2, Domain::new(vec![0.0, 0.0], vec![1.0, 1.0]));
        let g = SpaceTimeGrid::new(&m, n, t_max, 0.5);
        (m, g)
    }

    fn window_input(g: &SpaceTimeGrid) -> BoundarySignal {
        BoundarySignal::from_fn(g, |t, x| {
            smoothstep(t / 0.25)
                * smoothstep((0.9 - t) / 0.3)
                * (std::f64::consts::PI * x[1]).sin()
                * if x[0] < 1e-12 { 1.0 } else { 0.0 }
        })
    }

    fn model() -> Coefficients {
        Coefficients {
            a: FieldSpec::constant(1.0),
            n_monomial: 2,
            b_n: FieldSpec::constant(0.4),
            c: vec![
                FieldSpec::Bump {
                    base: 0.0,
                    amplitude: 0.3,
                    center: vec![0.5, 0.5],
                    radius: 0.3,
                },
                FieldSpec::constant(0.25),
            ],
            c1_support: Some((vec![0.5, 0.5], 0.3)),
            bound: 1.0,
        }
    }

    fn analytic_field(
        g: &SpaceTimeGrid,
        f: &dyn Fn(f64, &[f64]) -> f64,
        meta: ProducedBy,
    ) -> WaveField {
        let nn = g.nn();
        let mut u = vec![0.0; (g.nt + 1) * nn];
        for it in 0..=g.nt {
            let t = it as f64 * g.dt;
            for i in 0..nn {
                u[it * nn + i] = f(t, &g.node_coords(i));
            }
        }
        WaveField {
            grid: g.clone(),
            u,
            meta,
        }
    }

    #[test]
    fn order2_derivative_of_linear_model_vanishes() {
        let (m, g) = setup(25, 0.7);
        let coeffs = Coefficients::linear(FieldSpec::constant(1.0));
        let h1 = window_input(&g);
        let h2 = BoundarySignal::from_fn(&g, |t, x| {
            smoothstep(t / 0.25) * (std::f64::consts::PI * x[0]).sin()
                * if x[1] < 1e-12 { 1.0 } else { 0.0 }
        });
        let d = dtn_derivative(&m, &coeffs, &g, &[&h1, &h2], 1e-2).unwrap();
        assert!(
            d.trace.max_abs() < 1e-10,
            "second derivative of a linear map: {}",
            d.trace.max_abs()
        );
    }

    #[test]
    fn order1_derivative_matches_direct_linearized_dtn() {
        let (m, g) = setup(33, 0.8);
        let coeffs = model();
        let h1 = window_input(&g);
        let d = dtn_derivative(&m, &coeffs, &g, &[&h1], 1e-2).unwrap();
        let v1 = solve_linearized_first(&m, &coeffs, &g, &h1).unwrap();
        let direct = dtn(&m, &coeffs, &v1).unwrap();
        let rel = d.trace.combine(1.0, &direct, -1.0).unwrap().l2() / direct.l2();
        assert!(rel < 1e-4, "relative mismatch {rel}");
    }

    #[test]
    fn order2_permutation_invariance() {
        let (m, g) = setup(21, 0.6);
        let coeffs = model();
        let h1 = window_input(&g);
        let h2 = BoundarySignal::from_fn(&g, |t, x| {
            smoothstep(t / 0.3) * (std::f64::consts::PI * x[0]).sin()
                * if x[1] > 1.0 - 1e-12 { 1.0 } else { 0.0 }
        });
        let d12 = dtn_derivative(&m, &coeffs, &g, &[&h1, &h2], 1e-2).unwrap();
        let d21 = dtn_derivative(&m, &coeffs, &g, &[&h2, &h1], 1e-2).unwrap();
        let rel = d12.trace.combine(1.0, &d21.trace, -1.0).unwrap().l2()
            / d12.trace.l2().max(1e-300);
        assert!(rel < 1e-12, "permutation asymmetry {rel}");
    }

    #[test]
    fn l1_identity_zero_for_identical_models() {
        let (m, g) = setup(21, 0.5);
        let coeffs = model();
        let h1 = window_input(&g);
        let v1 = solve_linearized_first(&m, &coeffs, &g, &h1).unwrap();
        let l1 = integral_identity_l1(&m, &coeffs, &coeffs, &v1, &v1).unwrap();
        assert_eq!(l1, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn l1_identity_refinement_and_linearity() {
        let (m, _) = setup(9, 0.5);
        let model1 = model();
        let bump = |amp: f64| FieldSpec::Bump {
            base: 1.0,
            amplitude: amp,
            center: vec![0.5, 0.5],
            radius: 0.35,
        };
        let pi = std::f64::consts::PI;
        let v_fn = move |t: f64, x: &[f64]| (1.0 + t) * (pi * x[0]).sin() * (pi * x[1]).sin();
        let w_fn = |t: f64, x: &[f64]| t * x[0] * (1.0 - x[1]);
        let run = |n: usize, amp: f64| -> f64 {
            let g = SpaceTimeGrid::new(&m, n, 0.5, 0.5);
            let v1 = analytic_field(&g, &v_fn, ProducedBy::Linearized1);
            let w = analytic_field(&g, &w_fn, ProducedBy::Backward);
            let mut model2 = model();
            model2.a = bump(amp);
            integral_identity_l1(&m, &model1, &model2, &v1, &w)
                .unwrap()
                .re
        };
        let coarse = run(81, 0.05);
        let fine = run(161, 0.05);
        assert!(
            ((coarse - fine) / fine).abs() < 1e-3,
            "refinement drift: {coarse} vs {fine}"
        );
        // linearity in (a2 - a1)
        let doubled = run(81, 0.10);
        assert!(
            (doubled - 2.0 * coarse).abs() < 1e-12 * coarse.abs().max(1.0),
            "linearity violated: {doubled} vs 2*{coarse}"
        );
    }

    #[test]
    fn lk_identity_zero_and_multilinear() {
        let (m, g) = setup(17, 0.4);
        let coeffs = model();
        let h1 = window_input(&g);
        let v1 = solve_linearized_first(&m, &coeffs, &g, &h1).unwrap();
        let mut model_eq = model();
        model_eq.c = coeffs.c.clone();
        let l3 = integral_identity_lk(&m, &coeffs, &model_eq, 3, &[&v1, &v1, &v1], &v1).unwrap();
        assert_eq!(l3, Complex64::new(0.0, 0.0));

        let mut model2 = model();
        model2.c = vec![
            coeffs.c[0].clone(),
            coeffs.c[1].clone(),
            FieldSpec::constant(0.2),
        ];
        let mut model1_ext = model();
        model1_ext.c = vec![coeffs.c[0].clone(), coeffs.c[1].clone(), FieldSpec::zero()];
        let base =
            integral_identity_lk(&m, &model1_ext, &model2, 3, &[&v1, &v1, &v1], &v1).unwrap();
        let scaled = analytic_scale(&v1, 2.0);
        let doubled =
            integral_identity_lk(&m, &model1_ext, &model2, 3, &[&scaled, &v1, &v1], &v1).unwrap();
        assert!(
            (doubled - 2.0 * base).norm() < 1e-12 * base.norm().max(1.0),
            "multilinearity violated"
        );
    }

    fn analytic_scale(f: &WaveField, s: f64) -> WaveField {
        WaveField {
            grid: f.grid.clone(),
            u: f.u.iter().map(|v| s * v).collect(),
            meta: f.meta,
        }
    }

    #[test]
    fn i2_boundary_linear_in_g0_and_zero_for_linear_model() {
        let (m, g) = setup(25, 0.7);
        let lin = Coefficients::linear(FieldSpec::constant(1.0));
        let h1 = window_input(&g);
        let h2 = BoundarySignal::from_fn(&g, |t, x| {
            smoothstep(t / 0.3) * (std::f64::consts::PI * x[0]).sin()
                * if x[1] < 1e-12 { 1.0 } else { 0.0 }
        });
        let lam = dtn_derivative(&m, &lin, &g, &[&h1, &h2], 1e-2).unwrap();
        let g0 = BoundarySignal::from_fn(&g, |t, x| {
            smoothstep((g.t_max - t) / 0.3) * (std::f64::consts::PI * x[1]).sin()
        });
        let i2 = compute_i2_from_boundary(&lin.a, &g0, &lam.trace).unwrap();
        assert!(i2.norm() < 1e-9, "I2 of a linear model: {}", i2.norm());

        // sign flip of g0 flips I2 (on a nonlinear model's Lambda)
        let coeffs = model();
        let lam = dtn_derivative(&m, &coeffs, &g, &[&h1, &h2], 1e-2).unwrap();
        let i2p = compute_i2_from_boundary(&coeffs.a, &g0, &lam.trace).unwrap();
        let i2m = compute_i2_from_boundary(&coeffs.a, &g0.scale(-1.0), &lam.trace).unwrap();
        assert!((i2p + i2m).norm() < 1e-14 * i2p.norm().max(1.0));
    }
}
