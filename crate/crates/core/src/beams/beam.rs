//! Gaussian beam quasi-solutions: phase z1 + z^T H(s) z (+ cubic corrector),
//! leading amplitude det(Y)^{-1/2} (+ linear corrector), quintic cutoff.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::beams::jets::{solve_correctors, Correctors};
use crate::beams::riccati::RiccatiSolution;
use crate::error::BeamError;
use crate::geometry::FermiChart;
use crate::util::{cutoff, smoothstep};
use crate::Result;

/// Serializable beam descriptor (chart identified externally).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamDescriptor {
    pub chart_id: String,
    pub h0_re: Vec<f64>,
    pub h0_im: Vec<f64>,
    pub tau: f64,
    pub kappa: f64,
    pub delta_prime: f64,
    pub order: u8,
}

#[derive(Debug, Clone)]
pub struct GaussianBeam {
    pub chart: Arc<FermiChart>,
    pub riccati: Arc<RiccatiSolution>,
    pub order: u8,
    pub tau: f64,
    /// Phase scaling weight: the oscillation is exp(i tau kappa phi).
    pub kappa: f64,
    pub delta_prime: f64,
    correctors: Option<Arc<Correctors>>,
    /// Evaluate the complex conjugate of the base beam.
    pub conjugated: bool,
}

/// Value and chart-coordinate derivatives of the beam at one point.
#[derive(Debug, Clone)]
pub struct BeamJet {
    pub value: Complex64,
    /// d(value)/d(s, z1..zd).
    pub grad: Vec<Complex64>,
    /// Hessian w.r.t. (s, z1..zd).
    pub hess: DMatrix<Complex64>,
}

pub fn build_beam(
    chart: &Arc<FermiChart>,
    riccati: &Arc<RiccatiSolution>,
    tau: f64,
    kappa: f64,
    delta_prime: f64,
    order: u8,
) -> Result<GaussianBeam> {
    assert!(tau > 0.0, "tau must be positive");
    assert!(kappa != 0.0, "kappa must be nonzero");
    if delta_prime > chart.delta_prime + 1e-12 {
        return Err(BeamError::ChartRangeExceeded.into());
    }
    let correctors = if order >= 2 {
        Some(Arc::new(solve_correctors(chart, riccati)))
    } else {
        None
    };
    Ok(GaussianBeam {
        chart: chart.clone(),
        riccati: riccati.clone(),
        order,
        tau,
        kappa,
        delta_prime,
        correctors,
        conjugated: false,
    })
}

impl GaussianBeam {
    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    /// Formal conjugate: evaluates to the complex conjugate of the base beam
    /// (phase -> -conj(phase), amplitude -> conj(amplitude)).
    pub fn conjugate(&self) -> GaussianBeam {
        let mut b = self.clone();
        b.conjugated = !b.conjugated;
        b
    }

    /// Phase phi(s, z) = z1 + z^T H(s) z (+ c3[z,z,z] at order 2).
    pub fn phase(&self, s: f64, z: &[f64]) -> Complex64 {
        let d = self.dim();
        let h = self.riccati.h_at(s);
        let mut phi = Complex64::new(z[0], 0.0);
        for i in 0..d {
            for j in 0..d {
                phi += h[(i, j)] * z[i] * z[j];
            }
        }
        if let Some(c) = &self.correctors {
            let c3 = c.c3_at(s);
            for i in 0..d {
                for j in 0..d {
                    for k in 0..d {
                        phi += c3[(i * d + j) * d + k] * z[i] * z[j] * z[k];
                    }
                }
            }
        }
        if self.conjugated {
            phi.conj()
        } else {
            phi
        }
    }

    /// Pre-cutoff amplitude A(s, z) = A0(s) (+ a(s).z at order 2).
    pub fn amplitude(&self, s: f64, z: &[f64]) -> Complex64 {
        let mut a = self.riccati.a0_at(s);
        if let Some(c) = &self.correctors {
            let a1 = c.a1_at(s);
            for (ai, zi) in a1.iter().zip(z) {
                a += ai * *zi;
            }
        }
        if self.conjugated {
            a.conj()
        } else {
            a
        }
    }

    /// On-axis leading amplitude A0(s).
    pub fn a0(&self, s: f64) -> Complex64 {
        let a = self.riccati.a0_at(s);
        if self.conjugated {
            a.conj()
        } else {
            a
        }
    }

    fn chi(&self, z: &[f64]) -> f64 {
        let r: f64 = z.iter().map(|c| c * c).sum::<f64>().sqrt() / self.delta_prime;
        cutoff(r)
    }

    /// Beam value in chart coordinates at the beam's own tau.
    pub fn value_chart(&self, s: f64, z: &[f64]) -> Complex64 {
        self.value_chart_tau(self.tau, s, z)
    }

    pub fn value_chart_tau(&self, tau: f64, s: f64, z: &[f64]) -> Complex64 {
        let chi = self.chi(z);
        if chi == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let base = {
            let mut b = self.clone();
            b.conjugated = false;
            let phi = b.phase(s, z);
            let amp = b.amplitude(s, z);
            (Complex64::i() * tau * self.kappa * phi).exp() * chi * amp
        };
        if self.conjugated {
            base.conj()
        } else {
            base
        }
    }

    /// Ambient evaluation; zero outside the tube.
    pub fn value(&self, t: f64, x: &[f64]) -> Complex64 {
        match self.chart.from_ambient(t, x) {
            Some((s, z)) => {
                if s < self.chart.s_min || s > self.chart.s_max {
                    Complex64::new(0.0, 0.0)
                } else {
                    self.value_chart(s, &z)
                }
            }
            None => Complex64::new(0.0, 0.0),
        }
    }

    /// Value, gradient and Hessian in chart coordinates (order (s, z1..zd)).
    /// The cutoff is treated exactly (its derivatives are included).
    pub fn jet_chart(&self, tau: f64, s: f64, z: &[f64]) -> BeamJet {
        let d = self.dim();
        let n = d + 1;
        let zero = Complex64::new(0.0, 0.0);
        let chi_r: f64 = z.iter().map(|c| c * c).sum::<f64>().sqrt() / self.delta_prime;
        if chi_r >= 0.5 {
            return BeamJet {
                value: zero,
                grad: vec![zero; n],
                hess: DMatrix::zeros(n, n),
            };
        }

        // Work with the un-conjugated beam, conjugate at the end.
        let h = self.riccati.h_at(s);
        let hdot = self.riccati.h_dot_at(s);
        let hddot = self.riccati.h_ddot_at(s);
        let a0 = self.riccati.a0_at(s);
        let a0dot = self.riccati.a0_dot_at(s);
        let a0ddot = self.riccati.a0_ddot_at(s);
        let (c3, c3dot, c3ddot, a1, a1dot, a1ddot) = match &self.correctors {
            Some(c) => (
                c.c3_at(s),
                c.c3_dot_at(s),
                c.c3_ddot_at(s),
                c.a1_at(s),
                c.a1_dot_at(s),
                c.a1_ddot_at(s),
            ),
            None => (
                vec![zero; d * d * d],
                vec![zero; d * d * d],
                vec![zero; d * d * d],
                vec![zero; d],
                vec![zero; d],
                vec![zero; d],
            ),
        };

        let cub = |t: &[Complex64]| -> Complex64 {
            let mut acc = zero;
            for i in 0..d {
                for j in 0..d {
                    for k in 0..d {
                        acc += t[(i * d + j) * d + k] * z[i] * z[j] * z[k];
                    }
                }
            }
            acc
        };
        let cub_grad = |t: &[Complex64], l: usize| -> Complex64 {
            let mut acc = zero;
            for i in 0..d {
                for j in 0..d {
                    acc += 3.0 * t[(i * d + j) * d + l] * z[i] * z[j];
                }
            }
            acc
        };
        let cub_hess = |t: &[Complex64], l: usize, m: usize| -> Complex64 {
            let mut acc = zero;
            for i in 0..d {
                acc += 6.0 * t[(i * d + l) * d + m] * z[i];
            }
            acc
        };
        let quad = |m: &DMatrix<Complex64>| -> Complex64 {
            let mut acc = zero;
            for i in 0..d {
                for j in 0..d {
                    acc += m[(i, j)] * z[i] * z[j];
                }
            }
            acc
        };
        let mat_z = |m: &DMatrix<Complex64>, l: usize| -> Complex64 {
            let mut acc = zero;
            for j in 0..d {
                acc += m[(l, j)] * z[j];
            }
            acc
        };

        // phase phi and its chart derivatives
        let phi = Complex64::new(z[0], 0.0) + quad(&h) + cub(&c3);
        let mut phi_grad = vec![zero; n];
        phi_grad[0] = quad(&hdot) + cub(&c3dot);
        for l in 0..d {
            phi_grad[l + 1] =
                if l == 0 { Complex64::new(1.0, 0.0) } else { zero } + 2.0 * mat_z(&h, l)
                    + cub_grad(&c3, l);
        }
        let mut phi_hess = DMatrix::zeros(n, n);
        phi_hess[(0, 0)] = quad(&hddot) + cub(&c3ddot);
        for l in 0..d {
            let v = 2.0 * mat_z(&hdot, l) + cub_grad(&c3dot, l);
            phi_hess[(0, l + 1)] = v;
            phi_hess[(l + 1, 0)] = v;
            for m in l..d {
                let v = 2.0 * h[(l, m)] + cub_hess(&c3, l, m);
                phi_hess[(l + 1, m + 1)] = v;
                phi_hess[(m + 1, l + 1)] = v;
            }
        }

        // amplitude A and derivatives
        let a1z: Complex64 = a1.iter().zip(z).map(|(a, zz)| a * *zz).sum();
        let amp = a0 + a1z;
        let mut amp_grad = vec![zero; n];
        amp_grad[0] = a0dot + a1dot.iter().zip(z).map(|(a, zz)| a * *zz).sum::<Complex64>();
        for l in 0..d {
            amp_grad[l + 1] = a1[l];
        }
        let mut amp_hess = DMatrix::zeros(n, n);
        amp_hess[(0, 0)] =
            a0ddot + a1ddot.iter().zip(z).map(|(a, zz)| a * *zz).sum::<Complex64>();
        for l in 0..d {
            amp_hess[(0, l + 1)] = a1dot[l];
            amp_hess[(l + 1, 0)] = a1dot[l];
        }

        // cutoff chi(|z|/delta') and derivatives (z only)
        let znorm: f64 = z.iter().map(|c| c * c).sum::<f64>().sqrt();
        let (chi, chi_grad, chi_hess) = if chi_r <= 0.25 || znorm < 1e-14 {
            (1.0, vec![0.0; n], DMatrix::zeros(n, n))
        } else {
            let dp = self.delta_prime;
            let x = (chi_r - 0.25) * 4.0;
            // cutoff(r) = 1 - smoothstep(4(r - 1/4))
            let sp = 30.0 * x * x * (1.0 - x) * (1.0 - x);
            let spp = 60.0 * x * (1.0 - x) * (1.0 - 2.0 * x);
            let c_r = -4.0 * sp; // d cutoff / dr
            let c_rr = -16.0 * spp;
            let chi = 1.0 - smoothstep(x);
            let mut grad = vec![0.0; n];
            let mut hess = DMatrix::zeros(n, n);
            for l in 0..d {
                grad[l + 1] = c_r * z[l] / (znorm * dp);
            }
            for l in 0..d {
                for m in 0..d {
                    let mut v = c_rr * z[l] * z[m] / (znorm * znorm * dp * dp);
                    v += c_r
                        * (if l == m { 1.0 } else { 0.0 } / (znorm * dp)
                            - z[l] * z[m] / (znorm * znorm * znorm * dp));
                    hess[(l + 1, m + 1)] = v;
                }
            }
            (chi, grad, hess)
        };

        // assemble u = exp(i tau kappa phi) * chi * A
        let itk = Complex64::i() * tau * self.kappa;
        let e = (itk * phi).exp();
        let w_val = Complex64::new(chi, 0.0) * amp;
        let mut w_grad = vec![zero; n];
        for a in 0..n {
            w_grad[a] = Complex64::new(chi_grad[a], 0.0) * amp + Complex64::new(chi, 0.0) * amp_grad[a];
        }
        let value = e * w_val;
        let mut grad = vec![zero; n];
        for a in 0..n {
            grad[a] = e * (itk * phi_grad[a] * w_val + w_grad[a]);
        }
        let mut hess = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                let w_hess_ab = Complex64::new(chi_hess[(a, b)], 0.0) * amp
                    + Complex64::new(chi_grad[a], 0.0) * amp_grad[b]
                    + Complex64::new(chi_grad[b], 0.0) * amp_grad[a]
                    + Complex64::new(chi, 0.0) * amp_hess[(a, b)];
                hess[(a, b)] = e
                    * ((itk * phi_hess[(a, b)] + itk * itk * phi_grad[a] * phi_grad[b]) * w_val
                        + itk * (phi_grad[a] * w_grad[b] + phi_grad[b] * w_grad[a])
                        + w_hess_ab);
            }
        }

        if self.conjugated {
            BeamJet {
                value: value.conj(),
                grad: grad.iter().map(|g| g.conj()).collect(),
                hess: hess.map(|h| h.conj()),
            }
        } else {
            BeamJet {
                value,
                grad,
                hess,
            }
        }
    }

    /// Fitted lower bound C for Im(phase) >= C |z|^2 over the half-tube grid.
    pub fn phase_positivity_constant(&self) -> f64 {
        let d = self.dim();
        let (lo, hi) = self.chart.s_range();
        let mut worst = f64::INFINITY;
        let ns = 24;
        let nz = 9;
        let mut z = vec![0.0; d];
        for i in 0..=ns {
            let s = lo + (hi - lo) * i as f64 / ns as f64;
            // sample directions and radii in the half-tube
            for dir in 0..(2 * d) {
                for r_i in 1..=nz {
                    let r = 0.5 * self.delta_prime * r_i as f64 / nz as f64;
                    for c in z.iter_mut() {
                        *c = 0.0;
                    }
                    let axis = dir / 2;
                    z[axis] = if dir % 2 == 0 { r } else { -r };
                    // include a diagonal probe as well
                    let phi = self.phase(s, &z);
                    let im = if self.conjugated { -phi.im } else { phi.im };
                    worst = worst.min(im / (r * r));
                }
            }
        }
        worst
    }
}

/// Ambient evaluation helper mirroring the chart composition.
pub fn evaluate_beam(beam: &GaussianBeam, t: f64, x: &[f64]) -> Complex64 {
    beam.value(t, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beams::riccati::solve_riccati;
    use crate::geometry::{build_fermi_chart, trace_geodesic, Domain, Metric, NullGeodesic};

    fn setup() -> (Arc<FermiChart>, Arc<RiccatiSolution>) {
        let m = Metric::flat(2, Domain::new(vec![0.0, 0.0], vec![2.0, 1.0]));
        let g = trace_geodesic(&m, &[0.0, 0.5], &[1.0, 0.0], 2e-3).unwrap();
        let chart =
            Arc::new(build_fermi_chart(&m, &NullGeodesic { base: g, t0: 0.3 }, 0.3).unwrap());
        let h0 = DMatrix::from_fn(2, 2, |i, j| {
            if i == j {
                Complex64::new(0.0, 1.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let riccati = Arc::new(solve_riccati(&chart, &h0, 4e-3).unwrap());
        (chart, riccati)
    }

    #[test]
    fn axis_value_is_a0() {
        let (chart, riccati) = setup();
        let beam = build_beam(&chart, &riccati, 32.0, 1.0, 0.3, 2).unwrap();
        for s in [0.1, 0.5, 1.2] {
            let v = beam.value_chart(s, &[0.0, 0.0]);
            assert!((v - riccati.a0_at(s)).norm() < 1e-12);
            // ambient round trip hits the same value
            let (t, x) = chart.to_ambient(s, &[0.0, 0.0]);
            assert!((beam.value(t, &x) - v).norm() < 1e-10);
        }
    }

    #[test]
    fn cutoff_support() {
        let (chart, riccati) = setup();
        let beam = build_beam(&chart, &riccati, 32.0, 1.0, 0.3, 1).unwrap();
        let z = [0.6 * 0.3, 0.0];
        assert_eq!(beam.value_chart(0.5, &z), Complex64::new(0.0, 0.0));
        // outside tube in ambient coordinates
        let v = beam.value(0.8, &[0.5, 0.95]);
        assert_eq!(v, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn conjugate_evaluation_identity() {
        let (chart, riccati) = setup();
        let beam = build_beam(&chart, &riccati, 48.0, 1.3, 0.3, 2).unwrap();
        let conj = beam.conjugate();
        for (s, z) in [(0.4, [0.05, -0.02]), (0.9, [-0.03, 0.06])] {
            let v = beam.value_chart(s, &z);
            let w = conj.value_chart(s, &z);
            assert!((w - v.conj()).norm() < 1e-14);
        }
    }

    #[test]
    fn phase_positivity_on_half_tube() {
        let (chart, riccati) = setup();
        let beam = build_beam(&chart, &riccati, 32.0, 1.0, 0.3, 2).unwrap();
        let c = beam.phase_positivity_constant();
        assert!(c > 0.0, "phase positivity constant {c}");
    }

    #[test]
    fn jet_matches_finite_differences() {
        let (chart, riccati) = setup();
        let beam = build_beam(&chart, &riccati, 24.0, 1.0, 0.3, 2).unwrap();
        let tau = 24.0;
        let (s, z) = (0.7, [0.04, -0.03]);
        let jet = beam.jet_chart(tau, s, &z);
        let h = 1e-5;
        // gradient check
        let f = |ss: f64, zz: &[f64]| beam.value_chart_tau(tau, ss, zz);
        let g0 = (f(s + h, &z) - f(s - h, &z)) / (2.0 * h);
        assert!((g0 - jet.grad[0]).norm() < 1e-6 * (1.0 + jet.grad[0].norm()));
        for l in 0..2 {
            let mut zp = z;
            zp[l] += h;
            let mut zm = z;
            zm[l] -= h;
            let g = (f(s, &zp) - f(s, &zm)) / (2.0 * h);
            assert!(
                (g - jet.grad[l + 1]).norm() < 1e-5 * (1.0 + jet.grad[l + 1].norm()),
                "grad z{l}"
            );
        }
        // a couple of Hessian entries
        let h2 = 1e-4;
        let fpp = f(s + h2, &[z[0] + h2, z[1]]);
        let fpm = f(s + h2, &[z[0] - h2, z[1]]);
        let fmp = f(s - h2, &[z[0] + h2, z[1]]);
        let fmm = f(s - h2, &[z[0] - h2, z[1]]);
        let mixed = (fpp - fpm - fmp + fmm) / (4.0 * h2 * h2);
        assert!(
            (mixed - jet.hess[(0, 1)]).norm() < 1e-3 * (1.0 + jet.hess[(0, 1)].norm()),
            "mixed hessian: fd {mixed} vs {}",
            jet.hess[(0, 1)]
        );
    }
}
