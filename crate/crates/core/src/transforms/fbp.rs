//! Flat-case parallel-beam inversion: Ram-Lak filter apodized by a cosine
//! window, then back-projection onto the reconstruction grid.

use rustfft::{num_complex::Complex as FftComplex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::TransformError;
use crate::Result;

/// Parallel-beam line family: angles uniform over [0, pi), offsets uniform
/// over [-radius, radius]; the line at (theta, s) is
///   x(t) = s (cos th, sin th) + t (-sin th, cos th).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineFamily {
    pub n_angles: usize,
    pub n_offsets: usize,
    pub radius: f64,
    /// Center of the family (reconstruction origin).
    pub center: Vec<f64>,
}

impl LineFamily {
    pub fn angle(&self, i: usize) -> f64 {
        std::f64::consts::PI * i as f64 / self.n_angles as f64
    }

    pub fn offset(&self, j: usize) -> f64 {
        -self.radius + 2.0 * self.radius * j as f64 / (self.n_offsets - 1) as f64
    }

    /// Direction and anchor point of line (i, j).
    pub fn line(&self, i: usize, j: usize) -> (Vec<f64>, Vec<f64>) {
        let th = self.angle(i);
        let s = self.offset(j);
        let anchor = vec![
            self.center[0] + s * th.cos(),
            self.center[1] + s * th.sin(),
        ];
        let dir = vec![-th.sin(), th.cos()];
        (anchor, dir)
    }
}

/// Reconstruction lattice for the inverted field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconGrid {
    pub n: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ReconGrid {
    pub fn coords(&self, i: usize, j: usize) -> Vec<f64> {
        vec![
            self.lo[0] + (self.hi[0] - self.lo[0]) * i as f64 / (self.n - 1) as f64,
            self.lo[1] + (self.hi[1] - self.lo[1]) * j as f64 / (self.n - 1) as f64,
        ]
    }
}

/// Filtered back-projection of parallel-beam data `sinogram[angle][offset]`.
pub fn invert_line_transform(
    family: &LineFamily,
    sinogram: &[Vec<f64>],
    grid: &ReconGrid,
) -> Result<Vec<f64>> {
    if family.n_angles < 32 {
        return Err(TransformError::InsufficientAngles {
            got: family.n_angles,
            required: 32,
        }
        .into());
    }
    assert_eq!(sinogram.len(), family.n_angles);
    let n_s = family.n_offsets;
    let ds = 2.0 * family.radius / (n_s - 1) as f64;
    let n_fft = (4 * n_s).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n_fft);
    let ifft = planner.plan_fft_inverse(n_fft);

    // Band-limited Ram-Lak built from the discrete spatial kernel (correct
    // DC behavior), apodized by a cosine window in the frequency domain.
    let mut kernel: Vec<FftComplex<f64>> = vec![FftComplex::new(0.0, 0.0); n_fft];
    kernel[0] = FftComplex::new(1.0 / (4.0 * ds * ds), 0.0);
    for n in (1..n_fft / 2).step_by(2) {
        let v = -1.0 / (std::f64::consts::PI * std::f64::consts::PI * n as f64 * n as f64 * ds * ds);
        kernel[n] = FftComplex::new(v, 0.0);
        kernel[n_fft - n] = FftComplex::new(v, 0.0);
    }
    fft.process(&mut kernel);
    let filter: Vec<f64> = (0..n_fft)
        .map(|k| {
            let kk = if k <= n_fft / 2 { k } else { n_fft - k };
            let window = (0.5 * std::f64::consts::PI * kk as f64 / (n_fft / 2) as f64).cos();
            kernel[k].re * window
        })
        .collect();

    let filtered: Vec<Vec<f64>> = sinogram
        .iter()
        .map(|row| {
            assert_eq!(row.len(), n_s);
            let mut buf: Vec<FftComplex<f64>> = (0..n_fft)
                .map(|k| {
                    if k < n_s {
                        FftComplex::new(row[k], 0.0)
                    } else {
                        FftComplex::new(0.0, 0.0)
                    }
                })
                .collect();
            fft.process(&mut buf);
            for (b, f) in buf.iter_mut().zip(&filter) {
                *b *= f;
            }
            ifft.process(&mut buf);
            // convolution carries the offset measure
            buf[..n_s].iter().map(|c| c.re * ds / n_fft as f64).collect()
        })
        .collect();

    // back-projection with linear interpolation in offset
    let mut out = vec![0.0; grid.n * grid.n];
    let dtheta = std::f64::consts::PI / family.n_angles as f64;
    for i in 0..grid.n {
        for j in 0..grid.n {
            let x = grid.coords(i, j);
            let mut acc = 0.0;
            for ai in 0..family.n_angles {
                let th = family.angle(ai);
                let s = (x[0] - family.center[0]) * th.cos()
                    + (x[1] - family.center[1]) * th.sin();
                let u = (s + family.radius) / ds;
                if u < 0.0 || u > (n_s - 1) as f64 {
                    continue;
                }
                let k = (u.floor() as usize).min(n_s - 2);
                let w = u - k as f64;
                acc += filtered[ai][k] * (1.0 - w) + filtered[ai][k + 1] * w;
            }
            out[j * grid.n + i] = acc * dtheta;
        }
    }
    Ok(out)
}
