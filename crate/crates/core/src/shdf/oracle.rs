use std::f64::consts::PI;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::accel::{Ray, RayAccel};
use super::field::{FieldDomain, FieldSource, ScalarField};
use crate::error::{Error, Result};
use crate::mesh::{face_geometry, Csr, Mesh, Vec3};

/// Surface offset applied to ray origins, as a fraction of the mesh extent.
pub const SURFACE_OFFSET: f64 = 1e-4;
/// Angle used in place of zero when weighting the central ray.
const MIN_RAY_ANGLE: f64 = 1e-6;
const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    /// Inverse-angle weighted mean of the surviving ray lengths.
    #[default]
    WeightedMean,
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShdfParams {
    /// Half opening angle of the ray cone, radians.
    pub cone_half_angle: f64,
    pub rays_per_point: usize,
    pub outlier_std_factor: f64,
    pub normalization_alpha: f64,
    pub smoothing_iterations: usize,
    /// Value-difference scale of the bilateral smoothing, in normalized units.
    pub smoothing_sigma: f64,
    pub aggregator: Aggregator,
    pub seed: u64,
}

impl Default for ShdfParams {
    fn default() -> Self {
        ShdfParams {
            cone_half_angle: PI / 3.0,
            rays_per_point: 30,
            outlier_std_factor: 1.0,
            normalization_alpha: 4.0,
            smoothing_iterations: 3,
            smoothing_sigma: 0.1,
            aggregator: Aggregator::WeightedMean,
            seed: 0,
        }
    }
}

impl ShdfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.cone_half_angle > 0.0 && self.cone_half_angle < PI / 2.0) {
            return Err(Error::invalid("cone_half_angle", "must lie in (0, pi/2)"));
        }
        if self.rays_per_point == 0 {
            return Err(Error::invalid("rays_per_point", "must be at least 1"));
        }
        if !(self.outlier_std_factor >= 0.0) {
            return Err(Error::invalid("outlier_std_factor", "must be non-negative"));
        }
        if !(self.normalization_alpha > 0.0) {
            return Err(Error::invalid("normalization_alpha", "must be positive"));
        }
        if !(self.smoothing_sigma > 0.0) {
            return Err(Error::invalid("smoothing_sigma", "must be positive"));
        }
        Ok(())
    }
}

/// A ray-casting site: an origin just inside the surface, the inward
/// direction, and a unit tangent fixing the azimuth reference of the cone.
#[derive(Debug, Clone, Copy)]
pub struct RaySite {
    pub origin: Vec3,
    pub inward: Vec3,
    pub tangent: Vec3,
}

impl RaySite {
    /// Builds a site from a surface point and its outward normal. The tangent
    /// is `reference` projected onto the tangent plane, or any perpendicular
    /// direction when that projection vanishes.
    pub fn new(point: Vec3, outward: Vec3, reference: Vec3, offset: f64) -> RaySite {
        let inward = -outward;
        let mut t = reference - inward * reference.dot(&inward);
        if t.norm() < 1e-12 {
            let axis = if inward.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
            t = axis - inward * axis.dot(&inward);
        }
        RaySite {
            origin: point + inward * offset,
            inward,
            tangent: t.normalize(),
        }
    }
}

/// Site at the centroid of `face`, azimuth anchored to the face's first edge
/// so the ray set moves rigidly with the mesh.
pub fn face_site(mesh: &Mesh, face: usize, offset: f64) -> Option<RaySite> {
    let [a, b, c] = mesh.triangle(face);
    let n = (b - a).cross(&(c - a));
    let len = n.norm();
    if !(len > 0.0) {
        return None;
    }
    Some(RaySite::new((a + b + c) / 3.0, n / len, b - a, offset))
}

/// Stratified directions filling the cone uniformly in solid angle: `cos θ`
/// takes midpoints of `n` equal strata, azimuths follow the golden angle from
/// a random starting phase. Returns `(direction, angle from the axis)`.
pub fn cone_directions(site: &RaySite, half_angle: f64, n: usize, rng: &mut impl Rng) -> Vec<(Vec3, f64)> {
    let w = site.inward;
    let u = site.tangent;
    let v = w.cross(&u);
    let phase = rng.random::<f64>() * 2.0 * PI;
    let span = 1.0 - half_angle.cos();
    (0..n)
        .map(|i| {
            let cos_t = 1.0 - (i as f64 + 0.5) / n as f64 * span;
            let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
            let phi = phase + i as f64 * GOLDEN_ANGLE;
            let d = w * cos_t + (u * phi.cos() + v * phi.sin()) * sin_t;
            (d.normalize(), sin_t.atan2(cos_t))
        })
        .collect()
}

/// Robust aggregate of `(length, angle)` pairs: lengths farther than
/// `k` standard deviations from the median are dropped (unless that would
/// drop everything), then the survivors are combined.
pub fn aggregate(samples: &[(f64, f64)], k: f64, aggregator: Aggregator) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut lengths: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let med = median(&mut lengths);
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let std = (samples.iter().map(|s| (s.0 - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut kept: Vec<(f64, f64)> = if std > 0.0 {
        samples.iter().copied().filter(|s| (s.0 - med).abs() <= k * std).collect()
    } else {
        samples.to_vec()
    };
    if kept.is_empty() {
        kept = samples.to_vec();
    }
    Some(match aggregator {
        Aggregator::WeightedMean => {
            let (mut num, mut den) = (0.0, 0.0);
            for &(l, theta) in &kept {
                let w = 1.0 / theta.max(MIN_RAY_ANGLE);
                num += w * l;
                den += w;
            }
            num / den
        }
        Aggregator::Median => {
            let mut l: Vec<f64> = kept.iter().map(|s| s.0).collect();
            median(&mut l)
        }
    })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Raw diameter at one site, or `None` when every ray misses or is rejected.
///
/// A ray counts only if the first surface it meets faces away from it (the
/// far inside wall); hitting a front face first means the ray left through
/// a nearby fold or started outside, and the ray is discarded.
pub fn shdf_at_point(accel: &RayAccel, site: &RaySite, params: &ShdfParams, rng: &mut impl Rng) -> Option<f64> {
    let dirs = cone_directions(site, params.cone_half_angle, params.rays_per_point, rng);
    let mut samples = Vec::with_capacity(dirs.len());
    for (d, theta) in dirs {
        if let Some(hit) = accel.closest_hit(&Ray::new(site.origin, d), 0.0) {
            if accel.normal(hit.face).dot(&d) > 0.0 {
                samples.push((hit.t, theta));
            }
        }
    }
    aggregate(&samples, params.outlier_std_factor, params.aggregator)
}

pub(crate) fn element_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Raw per-site values; element `i` draws from its own RNG stream so results
/// do not depend on scheduling.
pub fn compute_shdf_values(accel: &RayAccel, sites: &[Option<RaySite>], params: &ShdfParams) -> Vec<Option<f64>> {
    sites
        .par_iter()
        .enumerate()
        .map(|(i, site)| {
            let site = site.as_ref()?;
            let v = shdf_at_point(accel, site, params, &mut element_rng(params.seed, i))?;
            v.is_finite().then_some(v)
        })
        .collect()
}

/// Replaces missing values by the weighted mean of measured neighbours,
/// growing inward one ring at a time; anything unreachable gets the global
/// weighted mean. Fails when nothing was measured.
pub fn fill_unmeasured(values: &[Option<f64>], neighbors: &Csr, weights: &[f64]) -> Result<Vec<f64>> {
    let measured: Vec<(f64, f64)> = values
        .iter()
        .zip(weights)
        .filter_map(|(v, &w)| v.map(|v| (v, w)))
        .collect();
    if measured.is_empty() {
        return Err(Error::Field("no element received a diameter measurement".into()));
    }
    let mut cur: Vec<Option<f64>> = values.to_vec();
    let missing = cur.iter().filter(|v| v.is_none()).count();
    if missing > 0 {
        warn!("{missing} element(s) without a diameter measurement; filling from neighbours");
    }
    loop {
        let next: Vec<Option<f64>> = cur
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.or_else(|| {
                    let (mut num, mut den) = (0.0, 0.0);
                    for &j in neighbors.row(i) {
                        if let Some(x) = cur[j as usize] {
                            let w = weights[j as usize].max(1e-300);
                            num += w * x;
                            den += w;
                        }
                    }
                    (den > 0.0).then(|| num / den)
                })
            })
            .collect();
        let progressed = next.iter().zip(&cur).any(|(a, b)| a.is_some() && b.is_none());
        cur = next;
        if !progressed {
            break;
        }
    }
    let wsum: f64 = measured.iter().map(|m| m.1).sum();
    let global = if wsum > 0.0 {
        measured.iter().map(|m| m.0 * m.1).sum::<f64>() / wsum
    } else {
        measured.iter().map(|m| m.0).sum::<f64>() / measured.len() as f64
    };
    Ok(cur.into_iter().map(|v| v.unwrap_or(global)).collect())
}

/// Raw per-face field evaluated at face centroids pushed inward by a small
/// offset; unmeasured faces are filled from their neighbours.
pub fn compute_shdf_field(mesh: &Mesh, accel: &RayAccel, params: &ShdfParams) -> Result<ScalarField> {
    params.validate()?;
    let offset = SURFACE_OFFSET * mesh.rigid_extent();
    let geom = face_geometry(mesh);
    let sites: Vec<Option<RaySite>> = (0..mesh.face_count())
        .map(|f| {
            if geom.degenerate[f] {
                None
            } else {
                face_site(mesh, f, offset)
            }
        })
        .collect();
    let raw = compute_shdf_values(accel, &sites, params);
    let neighbors = crate::mesh::tolerant_face_neighbors(mesh);
    let values = fill_unmeasured(&raw, &neighbors, &geom.areas)?;
    Ok(ScalarField::new(FieldDomain::PerFace, FieldSource::Oracle, values))
}
