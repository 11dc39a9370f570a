//! Procedural test and training meshes. All closed shapes are outward
//! oriented.

use std::collections::HashMap;
use std::f64::consts::PI;

use crate::mesh::{mesh_unchecked, Mesh, Vec3};

pub fn unit_cube() -> Mesh {
    let v = (0..8)
        .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
        .collect();
    let quads = [
        [0, 2, 3, 1], // z = 0
        [4, 5, 7, 6], // z = 1
        [0, 1, 5, 4], // y = 0
        [2, 6, 7, 3], // y = 1
        [0, 4, 6, 2], // x = 0
        [1, 3, 7, 5], // x = 1
    ];
    let faces = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    mesh_unchecked(v, faces)
}

/// Unit-radius icosphere; `subdivisions` 4-to-1 splits of an icosahedron
/// (20·4ⁿ faces).
pub fn icosphere(subdivisions: u32) -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut f: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, v: &mut Vec<Vec3>| {
            let k = (a.min(b), a.max(b));
            *mid.entry(k).or_insert_with(|| {
                v.push(((v[a as usize] + v[b as usize]) * 0.5).normalize());
                (v.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(f.len() * 4);
        for &[a, b, c] in &f {
            let ab = midpoint(a, b, &mut v);
            let bc = midpoint(b, c, &mut v);
            let ca = midpoint(c, a, &mut v);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = next;
    }
    mesh_unchecked(v, f)
}

/// Surface of revolution about the z axis. `profile` runs from the bottom to
/// the top as `(radius, z)` pairs; end points with zero radius become poles.
pub fn revolve(profile: &[(f64, f64)], segments: usize) -> Mesh {
    assert!(profile.len() >= 3 && segments >= 3);
    let bottom_pole = profile[0].0 == 0.0;
    let top_pole = profile[profile.len() - 1].0 == 0.0;
    let ring_range = (bottom_pole as usize)..(profile.len() - top_pole as usize);
    let mut v = Vec::new();
    let mut faces = Vec::new();
    let bottom = if bottom_pole {
        v.push(Vec3::new(0.0, 0.0, profile[0].1));
        Some(0u32)
    } else {
        None
    };
    let mut rings = Vec::new();
    for i in ring_range {
        let (r, z) = profile[i];
        let start = v.len() as u32;
        for j in 0..segments {
            let phi = 2.0 * PI * j as f64 / segments as f64;
            v.push(Vec3::new(r * phi.cos(), r * phi.sin(), z));
        }
        rings.push(start);
    }
    let top = if top_pole {
        v.push(Vec3::new(0.0, 0.0, profile[profile.len() - 1].1));
        Some((v.len() - 1) as u32)
    } else {
        None
    };
    let s = segments as u32;
    if let Some(p) = bottom {
        let r = rings[0];
        for j in 0..s {
            faces.push([p, r + (j + 1) % s, r + j]);
        }
    }
    for w in rings.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        for j in 0..s {
            let j1 = (j + 1) % s;
            faces.push([lo + j, lo + j1, hi + j1]);
            faces.push([lo + j, hi + j1, hi + j]);
        }
    }
    if let Some(p) = top {
        let r = *rings.last().unwrap();
        for j in 0..s {
            faces.push([p, r + j, r + (j + 1) % s]);
        }
    }
    mesh_unchecked(v, faces)
}

/// Resamples a polyline at roughly uniform arc-length spacing, keeping every
/// input vertex (corners stay sharp).
fn resample(points: &[(f64, f64)], spacing: f64) -> Vec<(f64, f64)> {
    let mut out = vec![points[0]];
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let n = (len / spacing).ceil().max(1.0) as usize;
        for k in 1..=n {
            let t = k as f64 / n as f64;
            out.push((a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t));
        }
    }
    out
}

/// Samples a circular arc `(r, z) = (R sin t, zc - R cos t)` for `t` in `[t0, t1]`.
fn arc(radius: f64, zc: f64, t0: f64, t1: f64, spacing: f64) -> Vec<(f64, f64)> {
    let n = ((radius * (t1 - t0).abs()) / spacing).ceil().max(1.0) as usize;
    (0..=n)
        .map(|k| {
            let t = t0 + (t1 - t0) * k as f64 / n as f64;
            let r = radius * t.sin();
            (if r.abs() < 1e-15 { 0.0 } else { r }, zc - radius * t.cos())
        })
        .collect()
}

/// A capped cylinder along z, centred at the origin.
pub fn capped_cylinder(radius: f64, length: f64, segments: usize, spacing: f64) -> Mesh {
    let h = length / 2.0;
    let corners = [(0.0, -h), (radius, -h), (radius, h), (0.0, h)];
    revolve(&resample(&corners, spacing), segments)
}

pub fn torus(major: f64, minor: f64, major_segments: usize, minor_segments: usize) -> Mesh {
    let mut v = Vec::new();
    for i in 0..major_segments {
        let u = 2.0 * PI * i as f64 / major_segments as f64;
        for j in 0..minor_segments {
            let w = 2.0 * PI * j as f64 / minor_segments as f64;
            let r = major + minor * w.cos();
            v.push(Vec3::new(r * u.cos(), r * u.sin(), minor * w.sin()));
        }
    }
    let (m, n) = (major_segments as u32, minor_segments as u32);
    let id = |i: u32, j: u32| (i % m) * n + (j % n);
    let mut f = Vec::new();
    for i in 0..m {
        for j in 0..n {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            f.push([a, b, c]);
            f.push([a, c, d]);
        }
    }
    mesh_unchecked(v, f)
}

/// Two spheres joined by a cylindrical neck, as a surface of revolution
/// about z. The sphere/neck junction rings are sharp concave creases.
#[derive(Debug, Clone, Copy)]
pub struct Dumbbell {
    pub lobe_radius: f64,
    pub neck_radius: f64,
    pub neck_length: f64,
    pub segments: usize,
    /// Target profile spacing along the generating curve.
    pub spacing: f64,
}

impl Default for Dumbbell {
    fn default() -> Self {
        Dumbbell {
            lobe_radius: 1.0,
            neck_radius: 0.25,
            neck_length: 1.0,
            segments: 32,
            spacing: 0.1,
        }
    }
}

impl Dumbbell {
    /// z of the upper lobe centre.
    pub fn lobe_center(&self) -> f64 {
        self.neck_length / 2.0 + (self.lobe_radius.powi(2) - self.neck_radius.powi(2)).sqrt()
    }

    pub fn profile(&self) -> Vec<(f64, f64)> {
        let (r, rho, h) = (self.lobe_radius, self.neck_radius, self.neck_length / 2.0);
        let c = self.lobe_center();
        let t_join = PI - (rho / r).asin();
        let mut p = arc(r, -c, 0.0, t_join, self.spacing);
        let neck = resample(&[(rho, -h), (rho, h)], self.spacing);
        p.extend_from_slice(&neck[1..]);
        let upper: Vec<(f64, f64)> = arc(r, -c, 0.0, t_join, self.spacing)
            .into_iter()
            .rev()
            .map(|(x, z)| (x, -z))
            .collect();
        p.extend_from_slice(&upper[1..]);
        p
    }

    pub fn build(&self) -> Mesh {
        revolve(&self.profile(), self.segments)
    }
}

/// Three spheres chained along z by two necks; lobe `i` has radius `radii[i]`.
pub fn tri_lobe(radii: [f64; 3], neck_radius: f64, neck_length: f64, segments: usize, spacing: f64) -> Mesh {
    let mut p: Vec<(f64, f64)> = Vec::new();
    let mut z = 0.0;
    for (i, &r) in radii.iter().enumerate() {
        let s = (r * r - neck_radius * neck_radius).sqrt();
        let t_start = if i == 0 { 0.0 } else { (neck_radius / r).asin() };
        let t_end = if i == 2 { PI } else { PI - (neck_radius / r).asin() };
        let zc = if i == 0 { 0.0 } else { z + s };
        let piece = arc(r, zc, t_start, t_end, spacing);
        let skip = usize::from(!p.is_empty());
        p.extend_from_slice(&piece[skip..]);
        z = zc + s;
        if i < 2 {
            let neck = resample(&[(neck_radius, z), (neck_radius, z + neck_length)], spacing);
            p.extend_from_slice(&neck[1..]);
            z += neck_length;
        }
    }
    let last = p.len() - 1;
    p[last].0 = 0.0;
    revolve(&p, segments)
}

/// A flat `nx × ny` grid of quads (two triangles each) spanning
/// `[0, width] × [0, height]` in the z = 0 plane, normals +z.
pub fn grid_plane(nx: usize, ny: usize, width: f64, height: f64) -> Mesh {
    let mut v = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            v.push(Vec3::new(width * i as f64 / nx as f64, height * j as f64 / ny as f64, 0.0));
        }
    }
    let id = |i: usize, j: usize| (j * (nx + 1) + i) as u32;
    let mut f = Vec::with_capacity(nx * ny * 2);
    for j in 0..ny {
        for i in 0..nx {
            f.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            f.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    mesh_unchecked(v, f)
}

/// Boundary surface of a union of axis-aligned unit voxels scaled by `size`.
/// Each exposed voxel face becomes two triangles.
pub fn voxel_surface(voxels: &[[i32; 3]], size: f64) -> Mesh {
    let filled: std::collections::HashSet<[i32; 3]> = voxels.iter().copied().collect();
    let mut index: HashMap<[i32; 3], u32> = HashMap::new();
    let mut v = Vec::new();
    let mut vid = |p: [i32; 3], v: &mut Vec<Vec3>| {
        *index.entry(p).or_insert_with(|| {
            v.push(Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64) * size);
            (v.len() - 1) as u32
        })
    };
    let mut f = Vec::new();
    let mut sorted: Vec<[i32; 3]> = filled.iter().copied().collect();
    sorted.sort_unstable();
    for c in sorted {
        for axis in 0..3 {
            for dir in [-1i32, 1] {
                let mut n = c;
                n[axis] += dir;
                if filled.contains(&n) {
                    continue;
                }
                let (u, w) = ((axis + 1) % 3, (axis + 2) % 3);
                let mut base = c;
                if dir > 0 {
                    base[axis] += 1;
                }
                let corner = |du: i32, dw: i32| {
                    let mut p = base;
                    p[u] += du;
                    p[w] += dw;
                    p
                };
                let q = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
                // (u, w, axis) is right-handed, so u→w winding faces +axis.
                let q = if dir > 0 { q } else { [q[0], q[3], q[2], q[1]] };
                let ids = q.map(|p| vid(p, &mut v));
                f.push([ids[0], ids[1], ids[2]]);
                f.push([ids[0], ids[2], ids[3]]);
            }
        }
    }
    mesh_unchecked(v, f)
}

/// Solid box of voxels `[x0, x1) × [y0, y1) × [z0, z1)`.
pub fn voxel_box(min: [i32; 3], max: [i32; 3]) -> Vec<[i32; 3]> {
    let mut out = Vec::new();
    for x in min[0]..max[0] {
        for y in min[1]..max[1] {
            for z in min[2]..max[2] {
                out.push([x, y, z]);
            }
        }
    }
    out
}
