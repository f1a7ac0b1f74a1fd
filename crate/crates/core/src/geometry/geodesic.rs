//! Geodesic tracing in the effective metric via the Hamiltonian flow on
//! (x, p), fourth-order explicit stepping, boundary exit by bisection.

use crate::error::GeometryError;
use crate::geometry::Metric;
use crate::util::rk4_step;
use crate::Result;

#[derive(Debug, Clone)]
pub struct GeodesicSample {
    /// Arclength parameter.
    pub t: f64,
    pub x: Vec<f64>,
    /// Unit tangent (effective metric).
    pub v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Geodesic {
    pub samples: Vec<GeodesicSample>,
    /// Arclength at boundary exit (last sample time for capped paths).
    pub exit_time: f64,
    /// Whether the path actually reached the boundary.
    pub exited: bool,
    pub start: (Vec<f64>, Vec<f64>),
}

impl Geodesic {
    pub fn dim(&self) -> usize {
        self.start.0.len()
    }

    /// Linear interpolation of the path position at arclength t.
    pub fn point_at(&self, t: f64) -> Vec<f64> {
        let s0 = self.samples.first().unwrap();
        let s1 = self.samples.last().unwrap();
        if t <= s0.t {
            return s0.x.clone();
        }
        if t >= s1.t {
            return s1.x.clone();
        }
        let idx = self
            .samples
            .partition_point(|s| s.t <= t)
            .min(self.samples.len() - 1);
        let a = &self.samples[idx - 1];
        let b = &self.samples[idx];
        let w = (t - a.t) / (b.t - a.t);
        a.x.iter().zip(&b.x).map(|(p, q)| p + w * (q - p)).collect()
    }

    /// Shifts the arclength origin so that the sample closest to `t0`
    /// becomes t = 0.
    pub fn recentred(&self, t0: f64) -> Geodesic {
        let mut g = self.clone();
        for s in &mut g.samples {
            s.t -= t0;
        }
        g.exit_time -= t0;
        g
    }
}

/// Null lift of a unit-speed effective geodesic: path(t) = (t0 + t, gamma(t)).
#[derive(Debug, Clone)]
pub struct NullGeodesic {
    pub base: Geodesic,
    pub t0: f64,
}

impl NullGeodesic {
    pub fn path_at(&self, t: f64) -> (f64, Vec<f64>) {
        (self.t0 + t, self.base.point_at(t))
    }
}

/// Hamiltonian right-hand side for the geodesic flow of the effective metric:
/// state = (x, p), H = 1/2 G^{ij} p_i p_j with G^{ij} = a * g^{ij}.
/// Flat and conformal kinds take allocation-free fast paths.
pub(crate) fn geodesic_rhs(metric: &Metric, _t: f64, state: &[f64], out: &mut [f64]) {
    let d = metric.dim;
    let (x, p) = state.split_at(d);
    match &metric.kind {
        crate::geometry::MetricKind::Flat => {
            out[..d].copy_from_slice(p);
            for o in out[d..2 * d].iter_mut() {
                *o = 0.0;
            }
        }
        crate::geometry::MetricKind::Conformal { a } => {
            // G^{-1} = a I: xdot = a p, pdot_k = -1/2 |p|^2 d_k a
            let av = a.eval(x);
            for i in 0..d {
                out[i] = av * p[i];
            }
            let p2: f64 = p.iter().map(|c| c * c).sum();
            let h = 1e-6 * (1.0 + metric.domain.diameter());
            let mut xb = [0.0f64; 3];
            xb[..d].copy_from_slice(x);
            for k in 0..d {
                xb[k] = x[k] + h;
                let ap = a.eval(&xb[..d]);
                xb[k] = x[k] - h;
                let am = a.eval(&xb[..d]);
                xb[k] = x[k];
                out[d + k] = -0.5 * p2 * (ap - am) / (2.0 * h);
            }
        }
        crate::geometry::MetricKind::Grid { .. } => {
            let ginv = metric.effective_g_inv(x);
            for i in 0..d {
                let mut s = 0.0;
                for j in 0..d {
                    s += ginv[(i, j)] * p[j];
                }
                out[i] = s;
            }
            let h = 1e-6 * (1.0 + metric.domain.diameter());
            let mut xp = x.to_vec();
            for k in 0..d {
                xp[k] = x[k] + h;
                let gp = metric.effective_g_inv(&xp);
                xp[k] = x[k] - h;
                let gm = metric.effective_g_inv(&xp);
                xp[k] = x[k];
                let mut s = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        s += (gp[(i, j)] - gm[(i, j)]) / (2.0 * h) * p[i] * p[j];
                    }
                }
                out[d + k] = -0.5 * s;
            }
        }
    }
}

fn hamiltonian(metric: &Metric, state: &[f64]) -> f64 {
    let d = metric.dim;
    let (x, p) = state.split_at(d);
    let ginv = metric.effective_g_inv(x);
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += ginv[(i, j)] * p[i] * p[j];
        }
    }
    0.5 * s
}

fn velocity(metric: &Metric, state: &[f64]) -> Vec<f64> {
    let d = metric.dim;
    let (x, p) = state.split_at(d);
    let ginv = metric.effective_g_inv(x);
    (0..d)
        .map(|i| (0..d).map(|j| ginv[(i, j)] * p[j]).sum())
        .collect()
}

/// Traces the maximal unit-speed geodesic of the effective metric from
/// (y, v). The path is capped at 32 domain diameters for trapped geodesics
/// (`exited` = false in that case).
pub fn trace_geodesic(metric: &Metric, y: &[f64], v: &[f64], step: f64) -> Result<Geodesic> {
    assert!(step > 0.0, "step must be positive");
    metric.check_unit(y, v)?;
    let d = metric.dim;
    let g = metric.effective_g(y);
    let mut state = vec![0.0; 2 * d];
    state[..d].copy_from_slice(y);
    for i in 0..d {
        let mut s = 0.0;
        for j in 0..d {
            s += g[(i, j)] * v[j];
        }
        state[d + i] = s;
    }
    let rhs = |t: f64, s: &[f64], o: &mut [f64]| geodesic_rhs(metric, t, s, o);
    let mut scratch = vec![0.0; 10 * d];

    let cap = 32.0 * metric.domain.diameter();
    let mut samples = vec![GeodesicSample {
        t: 0.0,
        x: y.to_vec(),
        v: v.to_vec(),
    }];
    let mut t = 0.0;
    let mut max_drift: f64 = 0.0;
    let mut exited = false;
    // nudge off the boundary: the start may sit on it
    loop {
        let prev = state.clone();
        rk4_step(&rhs, t, &mut state, step, &mut scratch);
        t += step;
        max_drift = max_drift.max((2.0 * hamiltonian(metric, &state) - 1.0).abs());
        if metric.domain.excess(&state[..d]) > 0.0 && t > step * 1.5 {
            // bisect the crossing inside [t - step, t]
            let mut lo = 0.0;
            let mut hi = step;
            let mut mid_state = prev.clone();
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                mid_state.copy_from_slice(&prev);
                rk4_step(&rhs, t - step, &mut mid_state, mid, &mut scratch);
                if metric.domain.excess(&mid_state[..d]) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if hi - lo < 1e-10 {
                    break;
                }
            }
            let t_exit = t - step + hi;
            mid_state.copy_from_slice(&prev);
            rk4_step(&rhs, t - step, &mut mid_state, hi, &mut scratch);
            samples.push(GeodesicSample {
                t: t_exit,
                x: mid_state[..d].to_vec(),
                v: velocity(metric, &mid_state),
            });
            t = t_exit;
            exited = true;
            break;
        }
        samples.push(GeodesicSample {
            t,
            x: state[..d].to_vec(),
            v: velocity(metric, &state),
        });
        if t >= cap {
            break;
        }
    }
    let length = t.max(step);
    if max_drift / length > 1e-6 {
        return Err(GeometryError::StepTooLarge {
            drift: max_drift / length,
        }
        .into());
    }
    Ok(Geodesic {
        samples,
        exit_time: t,
        exited,
        start: (y.to_vec(), v.to_vec()),
    })
}

/// Traces the maximal geodesic through an interior point: backward and
/// forward half-paths concatenated, with arclength 0 at `x`.
pub fn trace_through(metric: &Metric, x: &[f64], v: &[f64], step: f64) -> Result<Geodesic> {
    let back = trace_geodesic(metric, x, &v.iter().map(|c| -c).collect::<Vec<_>>(), step)?;
    let fwd = trace_geodesic(metric, x, v, step)?;
    let mut samples: Vec<GeodesicSample> = back
        .samples
        .iter()
        .rev()
        .map(|s| GeodesicSample {
            t: -s.t,
            x: s.x.clone(),
            v: s.v.iter().map(|c| -c).collect(),
        })
        .collect();
    samples.extend(fwd.samples.iter().skip(1).cloned());
    Ok(Geodesic {
        samples,
        exit_time: fwd.exit_time,
        exited: fwd.exited && back.exited,
        start: (x.to_vec(), v.to_vec()),
    })
}
