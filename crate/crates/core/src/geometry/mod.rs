//! Metrics, geodesics, null lifts, Fermi charts, curvature-derived data and
//! null-vector combinatorics.

mod combo;
mod fermi;
mod geodesic;
mod metric;

pub use combo::{find_null_combination, CausalType, NullCombination, SeedAngles};
pub use fermi::{build_fermi_chart, AxisJets, FermiChart};
pub use geodesic::{trace_geodesic, trace_through, Geodesic, GeodesicSample, NullGeodesic};
pub use metric::{
    load_grid_csv, Domain, GridMetricData, Metric, MetricDescriptor, MetricKind,
    MetricKindDescriptor,
};
