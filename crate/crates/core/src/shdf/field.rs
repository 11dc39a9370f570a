use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Adjacency, Csr};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldDomain {
    PerFace,
    PerSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldSource {
    Oracle,
    Predicted,
}

/// Scalar values over faces or samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub version: u32,
    pub domain: FieldDomain,
    pub provenance: FieldSource,
    pub normalized: bool,
    /// Set when normalization met a field with max = min.
    #[serde(default)]
    pub constant: bool,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(domain: FieldDomain, provenance: FieldSource, values: Vec<f64>) -> ScalarField {
        ScalarField {
            version: FORMAT_VERSION,
            domain,
            provenance,
            normalized: false,
            constant: false,
            values,
        }
    }

    /// A field already scaled to [0, 1].
    pub fn normalized(domain: FieldDomain, provenance: FieldSource, values: Vec<f64>) -> Result<ScalarField> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Field(format!("normalized field contains {v}")));
        }
        Ok(ScalarField {
            normalized: true,
            ..ScalarField::new(domain, provenance, values)
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("field serializes")
    }

    pub fn from_json(s: &str) -> Result<ScalarField> {
        let f: ScalarField = serde_json::from_str(s)?;
        if f.version != FORMAT_VERSION {
            return Err(Error::Field(format!("unsupported field version {}", f.version)));
        }
        if f.normalized && f.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Field("normalized field has values outside [0, 1]".into()));
        }
        Ok(f)
    }
}

/// `v ↦ ln((v − min)/(max − min)·α + 1) / ln(α + 1)`. A constant field maps
/// to zeros and is flagged.
pub fn normalize_log(field: &ScalarField, alpha: f64) -> Result<ScalarField> {
    if !(alpha > 0.0) {
        return Err(Error::invalid("normalization_alpha", "must be positive"));
    }
    if field.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Field("cannot normalize a field with non-finite values".into()));
    }
    let (lo, hi) = field.min_max();
    let mut out = ScalarField {
        normalized: true,
        ..field.clone()
    };
    if !(hi > lo) {
        out.values.iter_mut().for_each(|v| *v = 0.0);
        out.constant = true;
        return Ok(out);
    }
    let denom = (alpha + 1.0).ln();
    for v in &mut out.values {
        let t = (*v - lo) / (hi - lo);
        *v = ((t * alpha).ln_1p() / denom).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Bilateral Jacobi smoothing over an arbitrary neighbour graph. Each value
/// becomes the mean of itself and its neighbours, neighbours weighted by
/// `exp(−Δ²/2σ²)`.
pub fn smooth_bilateral(values: &[f64], neighbors: &Csr, iterations: usize, sigma: f64) -> Vec<f64> {
    let mut cur = values.to_vec();
    if iterations == 0 {
        return cur;
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut next = cur.clone();
    for _ in 0..iterations {
        for (i, out) in next.iter_mut().enumerate() {
            let vi = cur[i];
            let (mut num, mut den) = (vi, 1.0);
            for &j in neighbors.row(i) {
                let vj = cur[j as usize];
                let w = (-(vj - vi).powi(2) * inv).exp();
                num += w * vj;
                den += w;
            }
            *out = num / den;
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// Edge-preserving smoothing of a per-face field over face adjacency.
pub fn smooth_anisotropic(field: &ScalarField, adjacency: &Adjacency, iterations: usize, sigma: f64) -> ScalarField {
    let mut out = field.clone();
    out.values = smooth_bilateral(&field.values, adjacency.face_adjacency(), iterations, sigma);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use proptest::prelude::*;

    fn raw(values: Vec<f64>) -> ScalarField {
        ScalarField::new(FieldDomain::PerFace, FieldSource::Oracle, values)
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        let f = normalize_log(&raw(vec![2.0, 3.0, 4.0]), 4.0).unwrap();
        assert_eq!(f.values()[0], 0.0);
        assert_eq!(f.values()[2], 1.0);
        assert!((f.values()[1] - 3f64.ln() / 5f64.ln()).abs() < 1e-12);
        assert!((f.values()[1] - 0.6826).abs() < 1e-4);
    }

    #[test]
    fn constant_field_flagged() {
        let f = normalize_log(&raw(vec![1.5; 4]), 4.0).unwrap();
        assert!(f.constant && f.normalized);
        assert!(f.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn json_round_trip() {
        let f = normalize_log(&raw(vec![0.5, 0.25, 1.0]), 2.0).unwrap();
        assert_eq!(ScalarField::from_json(&f.to_json()).unwrap(), f);
        assert!(ScalarField::from_json(r#"{"version":1,"domain":"per_face","provenance":"oracle","normalized":true,"values":[2.0]}"#).is_err());
    }

    fn strip() -> (crate::mesh::Mesh, Adjacency) {
        let m = shapes::grid_plane(20, 4, 5.0, 1.0);
        let adj = Adjacency::build(&m).unwrap();
        (m, adj)
    }

    fn step_field(m: &crate::mesh::Mesh) -> ScalarField {
        let g = crate::mesh::face_geometry(m);
        raw(g.centroids.iter().map(|c| if c.x < 2.5 { 0.2 } else { 0.8 }).collect())
    }

    #[test]
    fn identity_and_constant_preserved() {
        let (m, adj) = strip();
        let f = step_field(&m);
        assert_eq!(smooth_anisotropic(&f, &adj, 0, 0.05), f);
        let c = raw(vec![0.3; m.face_count()]);
        assert_eq!(smooth_anisotropic(&c, &adj, 7, 0.05), c);
    }

    #[test]
    fn step_preserved_at_small_sigma_blurred_at_large() {
        let (m, adj) = strip();
        let f = step_field(&m);
        let sharp = smooth_anisotropic(&f, &adj, 5, 0.05);
        for (a, b) in sharp.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 0.01);
        }
        let blurred = smooth_anisotropic(&f, &adj, 5, 10.0);
        let moved = blurred.values().iter().zip(f.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(moved > 0.1);
        let flat = smooth_anisotropic(&f, &adj, 5000, 10.0);
        let (lo, hi) = flat.min_max();
        let mean = f.values().iter().sum::<f64>() / f.len() as f64;
        assert!(hi - lo < 1e-3 && (lo - mean).abs() < 0.02, "{lo} {hi} {mean}");
    }

    proptest! {
        #[test]
        fn normalization_preserves_order(values in prop::collection::vec(0.0f64..100.0, 2..40), alpha in 0.01f64..100.0) {
            let f = normalize_log(&raw(values.clone()), alpha).unwrap();
            for i in 0..values.len() {
                prop_assert!((0.0..=1.0).contains(&f.values()[i]));
                for j in 0..values.len() {
                    if values[i] < values[j] {
                        prop_assert!(f.values()[i] <= f.values()[j]);
                    }
                }
            }
        }

        #[test]
        fn normalization_is_scale_invariant(values in prop::collection::vec(0.1f64..10.0, 2..40), s in 0.01f64..100.0) {
            let a = normalize_log(&raw(values.clone()), 4.0).unwrap();
            let b = normalize_log(&raw(values.iter().map(|v| v * s).collect()), 4.0).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }

        #[test]
        fn smoothing_is_convex(values in prop::collection::vec(0.0f64..1.0, 160), iters in 0usize..10, sigma in 0.01f64..5.0) {
            let (_, adj) = strip();
            let f = raw(values);
            let (lo, hi) = f.min_max();
            let s = smooth_anisotropic(&f, &adj, iters, sigma);
            prop_assert!(s.values().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
        }
    }
}
