//! Shared numerics: fixed-step RK4 on flat state slices, cutoff profiles,
//! quadrature helpers, argument unwrapping and deterministic RNG.

use num_complex::Complex64;

/// One classical RK4 step of y' = f(t, y) on a flat state slice.
/// `scratch` must hold 5 * y.len() values.
pub fn rk4_step<F>(f: &F, t: f64, y: &mut [f64], h: f64, scratch: &mut [f64])
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let (k1, rest) = scratch.split_at_mut(n);
    let (k2, rest) = rest.split_at_mut(n);
    let (k3, rest) = rest.split_at_mut(n);
    let (k4, tmp) = rest.split_at_mut(n);
    let tmp = &mut tmp[..n];

    f(t, y, k1);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    f(t + 0.5 * h, tmp, k2);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    f(t + 0.5 * h, tmp, k3);
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    f(t + h, tmp, k4);
    for i in 0..n {
        y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Integrate y' = f(t, y) from t0 to t1 with a fixed number of RK4 steps.
pub fn rk4_integrate<F>(f: &F, t0: f64, t1: f64, y: &mut [f64], steps: usize)
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let mut scratch = vec![0.0; 5 * y.len()];
    let h = (t1 - t0) / steps as f64;
    let mut t = t0;
    for _ in 0..steps {
        rk4_step(f, t, y, h, &mut scratch);
        t += h;
    }
}

/// Quintic smoothstep: 0 for x <= 0, 1 for x >= 1, C^2-matched at both ends.
pub fn smoothstep(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        x * x * x * (10.0 + x * (-15.0 + 6.0 * x))
    }
}

/// Beam cutoff profile: 1 on [0, 1/4], 0 on [1/2, inf), quintic in between.
pub fn cutoff(r: f64) -> f64 {
    1.0 - smoothstep((r.abs() - 0.25) * 4.0)
}

/// Smooth onset window vanishing to second order at t = 0 and equal to 1
/// for t >= ramp. Keeps windowed boundary inputs compatible with zero
/// initial data through two time derivatives.
pub fn onset_window(t: f64, ramp: f64) -> f64 {
    smoothstep(t / ramp)
}

/// Composite trapezoid weight for node i of n (n >= 2) uniform nodes.
pub fn trapezoid_weight(i: usize, n: usize) -> f64 {
    if i == 0 || i + 1 == n {
        0.5
    } else {
        1.0
    }
}

/// Composite trapezoid over uniformly sampled complex values.
pub fn trapezoid_complex(values: &[Complex64], h: f64) -> Complex64 {
    let n = values.len();
    if n < 2 {
        return Complex64::new(0.0, 0.0);
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for (i, v) in values.iter().enumerate() {
        acc += trapezoid_weight(i, n) * v;
    }
    acc * h
}

/// Minimal difference of two angles, in (-pi, pi].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let mut d = a - b;
    while d > std::f64::consts::PI {
        d -= 2.0 * std::f64::consts::PI;
    }
    while d <= -std::f64::consts::PI {
        d += 2.0 * std::f64::consts::PI;
    }
    d
}

/// Least-squares fit of y = b + m x; returns (b, m).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    let m = (n * sxy - sx * sy) / denom;
    let b = (sy - m * sx) / n;
    (b, m)
}

/// Fit value(tau) = limit + c / tau over a tau ladder; returns (limit, c, rms residual).
pub fn fit_tau_limit(taus: &[f64], values: &[Complex64]) -> (Complex64, Complex64, f64) {
    // Least squares in the basis {1, 1/tau}, complex-valued.
    let n = taus.len() as f64;
    let s1: f64 = taus.iter().map(|t| 1.0 / t).sum();
    let s2: f64 = taus.iter().map(|t| 1.0 / (t * t)).sum();
    let sy: Complex64 = values.iter().sum();
    let sy1: Complex64 = values
        .iter()
        .zip(taus)
        .map(|(v, t)| v / Complex64::new(*t, 0.0))
        .sum();
    let det = n * s2 - s1 * s1;
    let limit = (sy * s2 - sy1 * s1) / det;
    let c = (sy1 * n - sy * s1) / det;
    let mut res = 0.0;
    for (v, t) in values.iter().zip(taus) {
        res += (v - (limit + c / t)).norm_sqr();
    }
    (limit, c, (res / n as f64).sqrt())
}

/// Deterministic RNG seeded from a u64.
pub fn seeded_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_fourth_order_on_exponential() {
        let f = |_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = y[0];
        let run = |steps: usize| {
            let mut y = [1.0];
            rk4_integrate(&f, 0.0, 1.0, &mut y, steps);
            (y[0] - std::f64::consts::E).abs()
        };
        let e1 = run(20);
        let e2 = run(40);
        assert!(e1 / e2 > 12.0, "expected ~16x error reduction, got {}", e1 / e2);
    }

    #[test]
    fn cutoff_plateaus() {
        assert_eq!(cutoff(0.0), 1.0);
        assert_eq!(cutoff(0.24), 1.0);
        assert_eq!(cutoff(0.5), 0.0);
        assert_eq!(cutoff(0.9), 0.0);
        assert!(cutoff(0.375) > 0.0 && cutoff(0.375) < 1.0);
    }

    #[test]
    fn onset_window_vanishes_to_second_order() {
        let ramp = 0.5;
        let h = 1e-4;
        let w0 = onset_window(0.0, ramp);
        let w1 = onset_window(h, ramp);
        let w2 = onset_window(2.0 * h, ramp);
        assert_eq!(w0, 0.0);
        // first and second differences at 0 are O(h^3) scale
        assert!(w1 < 1e-10);
        assert!((w2 - 2.0 * w1).abs() < 1e-9);
        assert_eq!(onset_window(0.6, ramp), 1.0);
    }

    #[test]
    fn tau_fit_recovers_limit() {
        let taus = [32.0, 64.0, 128.0, 256.0];
        let values: Vec<Complex64> = taus
            .iter()
            .map(|t| Complex64::new(2.5, -0.5) + Complex64::new(3.0, 1.0) / t)
            .collect();
        let (limit, _, res) = fit_tau_limit(&taus, &values);
        assert!((limit - Complex64::new(2.5, -0.5)).norm() < 1e-12);
        assert!(res < 1e-12);
    }
}
