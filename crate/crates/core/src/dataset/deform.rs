use log::warn;
use nalgebra::{Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{face_geometry, Mesh, Vec3};

/// Largest vertex displacement a deformation may cause, as a fraction of the
/// bounding-box diagonal.
pub const MAX_DISPLACEMENT: f64 = 0.3;
/// Redraws allowed per variant before giving up.
pub const REDRAW_BUDGET: usize = 20;

/// Smooth radial-basis handle: vertices within `radius` of `center` move by
/// `displacement · (1 − (d/radius)²)^falloff`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfHandle {
    pub center: [f64; 3],
    pub radius: f64,
    pub displacement: [f64; 3],
    pub falloff: f64,
}

/// Rotation about `pivot` and `rotation_axis` whose angle ramps smoothly from
/// zero to `angle` as the coordinate along `axis` goes from `start` to `end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bend {
    pub axis: [f64; 3],
    pub rotation_axis: [f64; 3],
    pub pivot: [f64; 3],
    pub start: f64,
    pub end: f64,
    pub angle: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeformSpec {
    pub handles: Vec<RbfHandle>,
    pub bends: Vec<Bend>,
    pub seed: u64,
}

/// Ranges from which random deformations are drawn. Lengths are fractions
/// of the base mesh's bounding-box diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeformTemplate {
    pub handles: usize,
    pub handle_radius: (f64, f64),
    pub max_displacement: f64,
    pub falloff: f64,
    pub bends: usize,
    pub max_bend_angle: f64,
}

impl Default for DeformTemplate {
    fn default() -> Self {
        DeformTemplate {
            handles: 4,
            handle_radius: (0.15, 0.35),
            max_displacement: 0.06,
            falloff: 2.0,
            bends: 1,
            max_bend_angle: 0.4,
        }
    }
}

impl DeformTemplate {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.handle_radius;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::invalid("handle_radius", "need 0 < min <= max"));
        }
        if !(0.0..=MAX_DISPLACEMENT).contains(&self.max_displacement) {
            return Err(Error::invalid("max_displacement", format!("must lie in [0, {MAX_DISPLACEMENT}]")));
        }
        if !(self.falloff >= 1.0) {
            return Err(Error::invalid("falloff", "must be at least 1"));
        }
        if !(self.max_bend_angle >= 0.0 && self.max_bend_angle < std::f64::consts::PI) {
            return Err(Error::invalid("max_bend_angle", "must lie in [0, π)"));
        }
        Ok(())
    }
}

fn random_unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

impl DeformSpec {
    /// Draws a deformation of `base` from `template`.
    pub fn random(base: &Mesh, template: &DeformTemplate, seed: u64) -> DeformSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let diag = base.diagonal();
        let bounds = base.bounds();
        let verts = base.vertices();
        let handles = (0..template.handles)
            .map(|_| {
                let c = verts[rng.random_range(0..verts.len())];
                let radius = diag * rng.random_range(template.handle_radius.0..=template.handle_radius.1);
                let d = random_unit(&mut rng) * diag * template.max_displacement * rng.random::<f64>();
                RbfHandle {
                    center: c.into(),
                    radius,
                    displacement: d.into(),
                    falloff: template.falloff,
                }
            })
            .collect();
        let extent = bounds.extent();
        let long = extent.iamax();
        let bends = (0..template.bends)
            .map(|_| {
                let axis = Vec3::ith(long, 1.0);
                let mut perp = random_unit(&mut rng);
                perp -= axis * perp.dot(&axis);
                let perp = if perp.norm() < 1e-6 { Vec3::ith((long + 1) % 3, 1.0) } else { perp.normalize() };
                let lo = bounds.min[long];
                let t0 = lo + extent[long] * rng.random_range(0.4..0.6);
                let t1 = t0 + extent[long] * 0.3;
                let pivot = bounds.center() + axis * (t0 - bounds.center()[long]);
                Bend {
                    axis: axis.into(),
                    rotation_axis: perp.into(),
                    pivot: pivot.into(),
                    start: t0,
                    end: t1,
                    angle: rng.random_range(-template.max_bend_angle..=template.max_bend_angle),
                }
            })
            .collect();
        DeformSpec { handles, bends, seed }
    }

    pub fn displace(&self, p: &Vec3) -> Vec3 {
        let mut out = *p;
        for h in &self.handles {
            let d = (p - Vec3::from(h.center)).norm() / h.radius;
            if d < 1.0 {
                out += Vec3::from(h.displacement) * (1.0 - d * d).powf(h.falloff);
            }
        }
        for b in &self.bends {
            if b.angle == 0.0 {
                continue;
            }
            let axis = Vec3::from(b.axis);
            let t = ((out.dot(&axis) - b.start) / (b.end - b.start)).clamp(0.0, 1.0);
            if t == 0.0 {
                continue;
            }
            let ramp = t * t * (3.0 - 2.0 * t);
            let rot = Rotation3::from_axis_angle(&Unit::new_normalize(Vec3::from(b.rotation_axis)), b.angle * ramp);
            let pivot = Vec3::from(b.pivot);
            out = pivot + rot * (out - pivot);
        }
        out
    }

    /// Moves the vertices of `mesh`; connectivity is unchanged. Fails if a
    /// vertex moves further than the displacement bound or a face collapses
    /// or flips.
    pub fn apply(&self, mesh: &Mesh) -> Result<Mesh> {
        let limit = MAX_DISPLACEMENT * mesh.diagonal();
        let moved: Vec<Vec3> = mesh.vertices().iter().map(|v| self.displace(v)).collect();
        if let Some(i) = moved.iter().zip(mesh.vertices()).position(|(a, b)| (a - b).norm() > limit) {
            return Err(Error::Domain(format!("vertex {i} moved beyond {MAX_DISPLACEMENT} of the diagonal")));
        }
        let out = mesh.with_positions(moved);
        let (before, after) = (face_geometry(mesh), face_geometry(&out));
        for f in 0..mesh.face_count() {
            if before.degenerate[f] {
                continue;
            }
            if after.degenerate[f]
                || after.areas[f] < 0.05 * before.areas[f]
                || after.normals[f].dot(&before.normals[f]) < 0.0
            {
                return Err(Error::Domain(format!("face {f} collapsed or flipped")));
            }
        }
        Ok(out)
    }
}

/// `count` deformed copies of `base` with its connectivity. Rejected draws
/// are redrawn up to [`REDRAW_BUDGET`] times per variant.
pub fn generate_variants(base: &Mesh, template: &DeformTemplate, count: usize, seed: u64) -> Result<Vec<(Mesh, DeformSpec)>> {
    template.validate()?;
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for v in 0..count {
        let mut last = None;
        for _ in 0..REDRAW_BUDGET {
            let spec = DeformSpec::random(base, template, seeds.random());
            match spec.apply(base) {
                Ok(m) => {
                    out.push((m, spec));
                    last = None;
                    break;
                }
                Err(e) => {
                    warn!("variant {v}: {e}; redrawing");
                    last = Some(e);
                }
            }
        }
        if let Some(e) = last {
            return Err(Error::Domain(format!("variant {v}: no valid deformation in {REDRAW_BUDGET} draws ({e})")));
        }
    }
    Ok(out)
}
