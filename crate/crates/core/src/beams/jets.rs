//! Order-2 beam correctors: the cubic phase term and the linear amplitude
//! term along the axis. Together with the quadratic phase Hessian they kill
//! the eikonal jets through order 3 and the transport jets through order 1,
//! which is what produces the tau^{-1/2} residual decay of a second-order
//! beam. Higher correctors (quartic phase, first-order amplitude corrections)
//! are intentionally left as extension hooks.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::beams::riccati::{catmull, catmull_deriv, RiccatiSolution};
use crate::geometry::FermiChart;

/// Per-node source data extracted from the chart's axis jets.
#[derive(Debug, Clone)]
struct JetSourceNode {
    /// q1[b] = Hessian_z of Ghat^{1, b+1}, b = 0..d-1 (chart labels 1..=d).
    q1: Vec<DMatrix<f64>>,
    /// Third jets of Ghat^{11}, flattened symmetric [i][j][k].
    t11: Vec<f64>,
    /// qc[i] = sum_j Hess(Ghat^{j,1})[i, j-1] over spatial labels j.
    qc: Vec<f64>,
}

#[derive(Debug, Clone)]
struct JetSources {
    s0: f64,
    half: f64,
    nodes: Vec<JetSourceNode>,
    zero: bool,
    dim: usize,
}

impl JetSources {
    fn sample(chart: &FermiChart, s_step: f64) -> Self {
        let d = chart.dim();
        if chart.metric.is_flat() {
            return JetSources {
                s0: chart.s_range().0,
                half: s_step,
                nodes: Vec::new(),
                zero: true,
                dim: d,
            };
        }
        let (lo, hi) = chart.s_range();
        let half = s_step / 2.0;
        let n = ((hi - lo) / half).ceil() as usize + 1;
        let nodes: Vec<JetSourceNode> = (0..n)
            .map(|i| {
                let s = (lo + i as f64 * half).min(hi);
                let jets = chart.axis_jets(s);
                let q1: Vec<DMatrix<f64>> = (1..=d).map(|b| jets.q[1][b].clone()).collect();
                let qc: Vec<f64> = (0..d)
                    .map(|i| (1..=d).map(|j| jets.q[j][1][(i, j - 1)]).sum())
                    .collect();
                JetSourceNode {
                    q1,
                    t11: jets.t11.clone(),
                    qc,
                }
            })
            .collect();
        JetSources {
            s0: lo,
            half,
            nodes,
            zero: false,
            dim: d,
        }
    }

    fn at(&self, s: f64) -> JetSourceNode {
        let d = self.dim;
        if self.zero {
            return JetSourceNode {
                q1: vec![DMatrix::zeros(d, d); d],
                t11: vec![0.0; d * d * d],
                qc: vec![0.0; d],
            };
        }
        let (idx, w) = catmull(self.nodes.len(), self.s0, self.half, s);
        let mut q1 = vec![DMatrix::zeros(d, d); d];
        let mut t11 = vec![0.0; d * d * d];
        let mut qc = vec![0.0; d];
        for (k, wk) in idx.iter().zip(&w) {
            let node = &self.nodes[*k];
            for b in 0..d {
                q1[b] += &node.q1[b] * *wk;
            }
            for (t, v) in t11.iter_mut().zip(&node.t11) {
                *t += wk * v;
            }
            for (t, v) in qc.iter_mut().zip(&node.qc) {
                *t += wk * v;
            }
        }
        JetSourceNode { q1, t11, qc }
    }
}

/// Cubic phase and linear amplitude correctors sampled on the Riccati grid.
#[derive(Debug, Clone)]
pub struct Correctors {
    pub dim: usize,
    pub s0: f64,
    pub ds: f64,
    /// Fully symmetric cubic tensors, flattened [i][j][k], per node.
    pub c3: Vec<Vec<Complex64>>,
    pub c3_dot: Vec<Vec<Complex64>>,
    /// Linear amplitude coefficients per node.
    pub a1: Vec<Vec<Complex64>>,
    pub a1_dot: Vec<Vec<Complex64>>,
}

fn symmetrize3(d: usize, r: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); d * d * d];
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                let perms = [
                    (i, j, k),
                    (i, k, j),
                    (j, i, k),
                    (j, k, i),
                    (k, i, j),
                    (k, j, i),
                ];
                let mut acc = Complex64::new(0.0, 0.0);
                for (a, b, c) in perms {
                    acc += r[(a * d + b) * d + c];
                }
                out[(i * d + j) * d + k] = acc / 6.0;
            }
        }
    }
    out
}

/// Right-hand side of the cubic corrector ODE:
///   c3' = -1/2 Sym[ 4 H'[z,z](Hz)_1 + 12 sum_{k>=2}(Hz)_k c3[z,z,e_k]
///                  + 2 sum_b Q^{1b}[z,z](Hz)_b + (1/6) T^{11}[z,z,z] ].
fn c3_rhs(
    d: usize,
    h: &DMatrix<Complex64>,
    hdot: &DMatrix<Complex64>,
    c3: &[Complex64],
    src: &JetSourceNode,
) -> Vec<Complex64> {
    let mut r = vec![Complex64::new(0.0, 0.0); d * d * d];
    // 4 Hdot_{ij} (H e_1-row)_k : H row for z1 is index 0
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                r[(i * d + j) * d + k] += 4.0 * hdot[(i, j)] * h[(0, k)];
            }
        }
    }
    // 12 sum_{l transverse} H_{l m} c3_{i j l} -> monomial z_i z_j z_m
    for l in 1..d {
        for m in 0..d {
            let hlm = h[(l, m)];
            for i in 0..d {
                for j in 0..d {
                    r[(i * d + j) * d + m] += 12.0 * hlm * c3[(i * d + j) * d + l];
                }
            }
        }
    }
    // 2 sum_{b=1..d} Q^{1b}_{ij} (H z)_b -> z_i z_j z_k with H_{b-1, k}
    for b in 0..d {
        for i in 0..d {
            for j in 0..d {
                let q = src.q1[b][(i, j)];
                if q == 0.0 {
                    continue;
                }
                for k in 0..d {
                    r[(i * d + j) * d + k] += 2.0 * q * h[(b, k)];
                }
            }
        }
    }
    // (1/6) T^{11}
    for (ri, ti) in r.iter_mut().zip(&src.t11) {
        *ri += *ti / 6.0;
    }
    let sym = symmetrize3(d, &r);
    sym.into_iter().map(|v| -0.5 * v).collect()
}

/// Right-hand side of the linear amplitude corrector ODE:
///   a_i' = -1/2 [ 4 H_{1i} A0' + 4 sum_{k>=2} H_{ki} a_k + a_i Tr(C H)
///                + A0 (4 H'_{1i} + 6 sum_{k>=2} c3_{ikk} + qc_i) ].
fn a1_rhs(
    d: usize,
    h: &DMatrix<Complex64>,
    hdot: &DMatrix<Complex64>,
    a0: Complex64,
    a0dot: Complex64,
    c3: &[Complex64],
    a1: &[Complex64],
    src: &JetSourceNode,
    c_mat: &DMatrix<f64>,
) -> Vec<Complex64> {
    let mut tr = Complex64::new(0.0, 0.0);
    for i in 0..d {
        for k in 0..d {
            tr += Complex64::new(c_mat[(i, k)], 0.0) * h[(k, i)];
        }
    }
    (0..d)
        .map(|i| {
            let mut acc = 4.0 * h[(0, i)] * a0dot;
            for k in 1..d {
                acc += 4.0 * h[(k, i)] * a1[k];
            }
            acc += a1[i] * tr;
            let mut jet = 4.0 * hdot[(0, i)];
            for k in 1..d {
                jet += 6.0 * c3[(i * d + k) * d + k];
            }
            jet += Complex64::new(src.qc[i], 0.0);
            acc += a0 * jet;
            -0.5 * acc
        })
        .collect()
}

/// Integrates the correctors along the Riccati grid with zero initial data.
pub fn solve_correctors(chart: &FermiChart, riccati: &RiccatiSolution) -> Correctors {
    let d = riccati.dim;
    let n = riccati.s_grid.len();
    let ds = riccati.ds;
    let src = JetSources::sample(chart, ds);

    let nc = d * d * d;
    // complex state: c3 (nc), a1 (d)
    let mut c3 = vec![Complex64::new(0.0, 0.0); nc];
    let mut a1 = vec![Complex64::new(0.0, 0.0); d];
    let mut c3_series = Vec::with_capacity(n);
    let mut c3_dot_series = Vec::with_capacity(n);
    let mut a1_series = Vec::with_capacity(n);
    let mut a1_dot_series = Vec::with_capacity(n);

    let deriv = |s: f64, c3: &[Complex64], a1: &[Complex64]| -> (Vec<Complex64>, Vec<Complex64>) {
        let h = riccati.h_at(s);
        let hdot = riccati.h_dot_at(s);
        let a0 = riccati.a0_at(s);
        let a0dot = riccati.a0_dot_at(s);
        let node = src.at(s);
        let dc3 = c3_rhs(d, &h, &hdot, c3, &node);
        let da1 = a1_rhs(d, &h, &hdot, a0, a0dot, c3, a1, &node, &riccati.c);
        (dc3, da1)
    };

    for i in 0..n {
        let s = riccati.s_grid[i];
        let (dc3, da1) = deriv(s, &c3, &a1);
        c3_series.push(c3.clone());
        c3_dot_series.push(dc3.clone());
        a1_series.push(a1.clone());
        a1_dot_series.push(da1.clone());
        if i + 1 < n {
            // RK4 on the combined complex state
            let step = ds;
            let combine = |c: &[Complex64], a: &[Complex64], kc: &[Complex64], ka: &[Complex64], f: f64| {
                (
                    c.iter().zip(kc).map(|(x, k)| x + f * k).collect::<Vec<_>>(),
                    a.iter().zip(ka).map(|(x, k)| x + f * k).collect::<Vec<_>>(),
                )
            };
            let (k1c, k1a) = (dc3, da1);
            let (c2, a2) = combine(&c3, &a1, &k1c, &k1a, 0.5 * step);
            let (k2c, k2a) = deriv(s + 0.5 * step, &c2, &a2);
            let (c3m, a3m) = combine(&c3, &a1, &k2c, &k2a, 0.5 * step);
            let (k3c, k3a) = deriv(s + 0.5 * step, &c3m, &a3m);
            let (c4, a4) = combine(&c3, &a1, &k3c, &k3a, step);
            let (k4c, k4a) = deriv(s + step, &c4, &a4);
            for (idx, x) in c3.iter_mut().enumerate() {
                *x += step / 6.0 * (k1c[idx] + 2.0 * k2c[idx] + 2.0 * k3c[idx] + k4c[idx]);
            }
            for (idx, x) in a1.iter_mut().enumerate() {
                *x += step / 6.0 * (k1a[idx] + 2.0 * k2a[idx] + 2.0 * k3a[idx] + k4a[idx]);
            }
        }
    }

    Correctors {
        dim: d,
        s0: riccati.s0,
        ds,
        c3: c3_series,
        c3_dot: c3_dot_series,
        a1: a1_series,
        a1_dot: a1_dot_series,
    }
}

impl Correctors {
    fn interp(&self, series: &[Vec<Complex64>], s: f64) -> Vec<Complex64> {
        let (idx, w) = catmull(series.len(), self.s0, self.ds, s);
        let mut out = vec![Complex64::new(0.0, 0.0); series[0].len()];
        for (k, wk) in idx.iter().zip(&w) {
            for (o, v) in out.iter_mut().zip(&series[*k]) {
                *o += wk * v;
            }
        }
        out
    }

    fn interp_deriv(&self, series: &[Vec<Complex64>], s: f64) -> Vec<Complex64> {
        let (idx, w) = catmull_deriv(series.len(), self.s0, self.ds, s);
        let mut out = vec![Complex64::new(0.0, 0.0); series[0].len()];
        for (k, wk) in idx.iter().zip(&w) {
            for (o, v) in out.iter_mut().zip(&series[*k]) {
                *o += wk * v;
            }
        }
        out
    }

    pub fn c3_at(&self, s: f64) -> Vec<Complex64> {
        self.interp(&self.c3, s)
    }
    pub fn c3_dot_at(&self, s: f64) -> Vec<Complex64> {
        self.interp(&self.c3_dot, s)
    }
    pub fn c3_ddot_at(&self, s: f64) -> Vec<Complex64> {
        self.interp_deriv(&self.c3_dot, s)
    }
    pub fn a1_at(&self, s: f64) -> Vec<Complex64> {
        self.interp(&self.a1, s)
    }
    pub fn a1_dot_at(&self, s: f64) -> Vec<Complex64> {
        self.interp(&self.a1_dot, s)
    }
    pub fn a1_ddot_at(&self, s: f64) -> Vec<Complex64> {
        self.interp_deriv(&self.a1_dot, s)
    }
}
