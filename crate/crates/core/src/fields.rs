//! Closed-form scalar field descriptors shared by metrics, coefficients and
//! phantoms. Every field is smooth, cheap to evaluate at arbitrary points,
//! and serializable so experiment configs round-trip exactly.

use serde::{Deserialize, Serialize};

use crate::util::smoothstep;

/// A scalar field on the spatial domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldSpec {
    Constant { value: f64 },
    /// base + grad . x
    Affine { base: f64, grad: Vec<f64> },
    /// base + amplitude * bump((|x - center|)/radius), a C^2 compactly
    /// supported bump equal to `amplitude` at the center.
    Bump {
        base: f64,
        amplitude: f64,
        center: Vec<f64>,
        radius: f64,
    },
    /// base * (1 + (k/4) |x|^2)^2 — reciprocal conformal factor of a
    /// constant-curvature-k metric when used as the wave-speed field.
    ConstantCurvature { base: f64, curvature: f64 },
    /// Product of the two: affine plus a bump.
    AffineBump {
        base: f64,
        grad: Vec<f64>,
        amplitude: f64,
        center: Vec<f64>,
        radius: f64,
    },
}

impl FieldSpec {
    pub fn zero() -> Self {
        FieldSpec::Constant { value: 0.0 }
    }

    pub fn constant(value: f64) -> Self {
        FieldSpec::Constant { value }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            FieldSpec::Constant { value } => *value,
            FieldSpec::Affine { base, grad } => {
                base + grad.iter().zip(x).map(|(g, xi)| g * xi).sum::<f64>()
            }
            FieldSpec::Bump {
                base,
                amplitude,
                center,
                radius,
            } => base + amplitude * bump_profile(dist(x, center) / radius),
            FieldSpec::ConstantCurvature { base, curvature } => {
                let r2: f64 = x.iter().map(|xi| xi * xi).sum();
                let f = 1.0 + 0.25 * curvature * r2;
                base * f * f
            }
            FieldSpec::AffineBump {
                base,
                grad,
                amplitude,
                center,
                radius,
            } => {
                base + grad.iter().zip(x).map(|(g, xi)| g * xi).sum::<f64>()
                    + amplitude * bump_profile(dist(x, center) / radius)
            }
        }
    }

    /// True if the field is identically zero.
    pub fn is_zero(&self) -> bool {
        matches!(self, FieldSpec::Constant { value } if *value == 0.0)
    }

    /// Support radius metadata for bump-like fields (None for global fields).
    pub fn support(&self) -> Option<(&[f64], f64)> {
        match self {
            FieldSpec::Bump { center, radius, .. }
            | FieldSpec::AffineBump { center, radius, .. } => Some((center, *radius)),
            _ => None,
        }
    }
}

fn dist(x: &[f64], c: &[f64]) -> f64 {
    x.iter()
        .zip(c)
        .map(|(xi, ci)| (xi - ci) * (xi - ci))
        .sum::<f64>()
        .sqrt()
}

/// C^2 bump: 1 at r = 0, 0 for r >= 1, quintic-smooth shoulder.
pub fn bump_profile(r: f64) -> f64 {
    1.0 - smoothstep(r.abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_support_and_peak() {
        let f = FieldSpec::Bump {
            base: 1.0,
            amplitude: 0.05,
            center: vec![0.5, 0.5],
            radius: 0.3,
        };
        assert!((f.eval(&[0.5, 0.5]) - 1.05).abs() < 1e-15);
        assert!((f.eval(&[0.9, 0.5]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn serde_round_trip() {
        let f = FieldSpec::Affine {
            base: 1.0,
            grad: vec![0.3, 0.0],
        };
        let s = serde_json::to_string(&f).unwrap();
        let g: FieldSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(f, g);
        assert_eq!(s, serde_json::to_string(&g).unwrap());
    }
}
