//! Reference Shape Diameter Function: inward cone ray casting, robust
//! aggregation, log normalization and bilateral smoothing.

mod accel;
mod field;
mod oracle;

pub use accel::{Hit, Ray, RayAccel};
pub use field::{normalize_log, smooth_anisotropic, smooth_bilateral, FieldDomain, FieldSource, ScalarField};
pub(crate) use oracle::element_rng;
pub use oracle::{
    SURFACE_OFFSET,
    aggregate, compute_shdf_field, compute_shdf_values, cone_directions, face_site, fill_unmeasured, shdf_at_point,
    Aggregator, RaySite, ShdfParams,
};
