//! Light-ray transforms, pointwise localization recovery, and a flat-case
//! filtered back-projection inversion for parallel-beam line families.

mod fbp;
mod localize;
pub(crate) mod ray;

pub use fbp::{invert_line_transform, LineFamily, ReconGrid};
pub use localize::{localize_recover, LocalizationReport, LocalizationRung};
pub use ray::{
    ray_transform_null, ray_transform_null_field, ray_transform_weighted, RayTransformRecord,
};
