//! Poisson-disk surface sampling with full-resolution vertex neighbourhoods
//! and relative density weights.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{face_geometry, Mesh, Vec3};
use crate::spatial::PointGrid;

/// Consecutive rejected darts after which a cell retires.
pub const REJECTION_BUDGET: usize = 30;
const MAX_CELL_LEVEL: u32 = 6;
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub radius: f64,
    pub positions: Vec<Vec3>,
    pub host_faces: Vec<u32>,
    /// Full-resolution vertex indices within `radius` of each sample, sorted.
    pub neighbors: Vec<Vec<u32>>,
    pub rho: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SampleSetJson {
    version: u32,
    radius: f64,
    positions: Vec<[f64; 3]>,
    host_faces: Vec<u32>,
    neighbors: Vec<Vec<u32>>,
    rho: Vec<f64>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                best = best.min((self.positions[i] - self.positions[j]).norm());
            }
        }
        best
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&SampleSetJson {
            version: FORMAT_VERSION,
            radius: self.radius,
            positions: self.positions.iter().map(|p| [p.x, p.y, p.z]).collect(),
            host_faces: self.host_faces.clone(),
            neighbors: self.neighbors.clone(),
            rho: self.rho.clone(),
        })
        .expect("sample set serializes")
    }

    pub fn from_json(s: &str) -> Result<SampleSet> {
        let j: SampleSetJson = serde_json::from_str(s)?;
        if j.version != FORMAT_VERSION {
            return Err(Error::Contract(format!("unsupported sample set version {}", j.version)));
        }
        Ok(SampleSet {
            radius: j.radius,
            positions: j.positions.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect(),
            host_faces: j.host_faces,
            neighbors: j.neighbors,
            rho: j.rho,
        })
    }
}

/// Default sampling radius: 5% of the bounding-box diagonal.
pub fn default_radius(mesh: &Mesh) -> f64 {
    0.05 * mesh.diagonal()
}

/// Uniform point on a triangle.
fn point_in_triangle(tri: &[Vec3; 3], rng: &mut impl Rng) -> Vec3 {
    let s = rng.random::<f64>().sqrt();
    let t = rng.random::<f64>();
    tri[0] * (1.0 - s) + tri[1] * (s * (1.0 - t)) + tri[2] * (s * t)
}

/// Fenwick tree over cell areas for area-weighted draws with removal.
struct AreaTree {
    tree: Vec<f64>,
    weight: Vec<f64>,
}

impl AreaTree {
    fn new(weights: &[f64]) -> AreaTree {
        let mut t = AreaTree {
            tree: vec![0.0; weights.len() + 1],
            weight: vec![0.0; weights.len()],
        };
        for (i, &w) in weights.iter().enumerate() {
            t.add(i, w);
        }
        t
    }

    fn add(&mut self, i: usize, w: f64) {
        self.weight[i] += w;
        let mut k = i + 1;
        while k < self.tree.len() {
            self.tree[k] += w;
            k += k & k.wrapping_neg();
        }
    }

    fn remove(&mut self, i: usize) {
        let w = self.weight[i];
        self.add(i, -w);
        self.weight[i] = 0.0;
    }

    fn total(&self) -> f64 {
        let mut k = self.weight.len();
        let mut s = 0.0;
        while k > 0 {
            s += self.tree[k];
            k &= k - 1;
        }
        s
    }

    /// Index whose cumulative range contains `x`.
    fn find(&self, mut x: f64) -> usize {
        let n = self.weight.len();
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= x {
                pos = next;
                x -= self.tree[next];
            }
            step >>= 1;
        }
        pos.min(n - 1)
    }
}

/// Splits faces by repeated midpoint subdivision until cells are at most
/// about half the radius across.
fn build_cells(mesh: &Mesh, degenerate: &[bool], radius: f64) -> Vec<([Vec3; 3], u32)> {
    let mut cells = Vec::new();
    for f in 0..mesh.face_count() {
        if degenerate[f] {
            continue;
        }
        let tri = mesh.triangle(f);
        let longest = (0..3).map(|i| (tri[(i + 1) % 3] - tri[i]).norm()).fold(0.0, f64::max);
        let mut level = 0;
        while level < MAX_CELL_LEVEL && longest / f64::from(1u32 << level) > 0.5 * radius {
            level += 1;
        }
        let mut stack = vec![(tri, level)];
        while let Some((t, l)) = stack.pop() {
            if l == 0 {
                cells.push((t, f as u32));
                continue;
            }
            let [a, b, c] = t;
            let (ab, bc, ca) = ((a + b) * 0.5, (b + c) * 0.5, (c + a) * 0.5);
            stack.extend([([a, ab, ca], l - 1), ([ab, b, bc], l - 1), ([ca, bc, c], l - 1), ([ab, bc, ca], l - 1)]);
        }
    }
    cells
}

/// Dart throwing with area-weighted cell selection. Faces are split into
/// cells about `radius / 2` across; a dart closer than `radius` to an
/// accepted sample is rejected, and a cell retires after
/// [`REJECTION_BUDGET`] consecutive rejections or once a single sample
/// covers it. Sampling ends when every cell has retired.
pub fn poisson_disk_sample(mesh: &Mesh, radius: f64, seed: u64) -> Result<SampleSet> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::invalid("radius", "must be positive and finite"));
    }
    let geom = face_geometry(mesh);
    if !geom.degenerate.iter().any(|d| !d) {
        return Err(Error::Domain("mesh has no face with positive area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::new();
    let mut host_faces = Vec::new();
    if radius >= mesh.diagonal() {
        warn!("sampling radius {radius} is not smaller than the mesh diagonal; returning one sample");
        let cells = build_cells(mesh, &geom.degenerate, f64::INFINITY);
        let areas: Vec<f64> = cells.iter().map(|(t, _)| tri_area(t)).collect();
        let tree = AreaTree::new(&areas);
        let c = tree.find(rng.random::<f64>() * tree.total());
        positions.push(point_in_triangle(&cells[c].0, &mut rng));
        host_faces.push(cells[c].1);
    } else {
        let cells = build_cells(mesh, &geom.degenerate, radius);
        let areas: Vec<f64> = cells.iter().map(|(t, _)| tri_area(t)).collect();
        let mut tree = AreaTree::new(&areas);
        let mut active: usize = areas.iter().filter(|&&a| a > 0.0).count();
        for (i, &a) in areas.iter().enumerate() {
            if !(a > 0.0) {
                tree.remove(i);
            }
        }
        let mut failures = vec![0u8; cells.len()];
        let mut grid = PointGrid::new(radius);
        while active > 0 {
            let total = tree.total();
            let mut c = tree.find(rng.random::<f64>() * total);
            if tree.weight[c] <= 0.0 {
                // Rounding in the prefix sums can land on a retired cell.
                match tree.weight.iter().position(|&w| w > 0.0) {
                    Some(k) => c = k,
                    None => break,
                }
            }
            let (tri, face) = &cells[c];
            let p = point_in_triangle(tri, &mut rng);
            match grid.any_closer_than(&p, radius) {
                true => {
                    // Coverage is judged against every blocking sample so the
                    // outcome does not depend on grid visiting order.
                    let covered = grid.within(&p, radius).into_iter().any(|q| {
                        let q = grid.points()[q as usize];
                        (q - p).norm() < radius && tri.iter().all(|v| (v - q).norm() < radius)
                    });
                    failures[c] += 1;
                    if failures[c] as usize >= REJECTION_BUDGET || covered {
                        tree.remove(c);
                        active -= 1;
                    }
                }
                false => {
                    grid.insert(p);
                    positions.push(p);
                    host_faces.push(*face);
                    failures[c] = 0;
                }
            }
        }
    }
    Ok(SampleSet {
        radius,
        positions,
        host_faces,
        neighbors: Vec::new(),
        rho: Vec::new(),
    })
}

fn tri_area(t: &[Vec3; 3]) -> f64 {
    0.5 * (t[1] - t[0]).cross(&(t[2] - t[0])).norm()
}

/// Attaches every mesh vertex within `radius` to each sample. Samples with
/// no vertex in range are removed.
pub fn build_neighborhoods(samples: SampleSet, mesh: &Mesh, radius: f64) -> SampleSet {
    let grid = PointGrid::from_points(mesh.vertices(), radius.max(1e-12));
    let lists: Vec<Vec<u32>> = samples.positions.par_iter().map(|p| grid.within(p, radius)).collect();
    let mut out = SampleSet {
        radius: samples.radius,
        positions: Vec::with_capacity(samples.len()),
        host_faces: Vec::with_capacity(samples.len()),
        neighbors: Vec::with_capacity(samples.len()),
        rho: Vec::new(),
    };
    let mut dropped = 0;
    for ((p, f), nb) in samples.positions.into_iter().zip(samples.host_faces).zip(lists) {
        if nb.is_empty() {
            dropped += 1;
            continue;
        }
        out.positions.push(p);
        out.host_faces.push(f);
        out.neighbors.push(nb);
    }
    if dropped > 0 {
        warn!("removed {dropped} sample(s) with no vertex within the sampling radius");
    }
    out
}

/// `ρ_i = |N(i)| / median_j |N(j)|`.
pub fn compute_densities(mut samples: SampleSet) -> SampleSet {
    let mut counts: Vec<f64> = samples.neighbors.iter().map(|n| n.len() as f64).collect();
    if counts.is_empty() {
        samples.rho.clear();
        return samples;
    }
    counts.sort_by(f64::total_cmp);
    let n = counts.len();
    let med = if n % 2 == 1 {
        counts[n / 2]
    } else {
        0.5 * (counts[n / 2 - 1] + counts[n / 2])
    };
    samples.rho = samples.neighbors.iter().map(|nb| nb.len() as f64 / med).collect();
    samples
}

/// Sampling, neighbourhoods and densities in one call.
pub fn sample_surface(mesh: &Mesh, radius: f64, seed: u64) -> Result<SampleSet> {
    let s = poisson_disk_sample(mesh, radius, seed)?;
    Ok(compute_densities(build_neighborhoods(s, mesh, radius)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use proptest::prelude::*;

    fn square() -> Mesh {
        shapes::grid_plane(1, 1, 1.0, 1.0)
    }

    #[test]
    fn large_radius_gives_one_sample() {
        let s = poisson_disk_sample(&square(), 2.0, 0).unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn invalid_radius() {
        assert!(poisson_disk_sample(&square(), 0.0, 0).is_err());
        assert!(poisson_disk_sample(&square(), f64::NAN, 0).is_err());
    }

    #[test]
    fn unit_square_count_range() {
        let mut lo = usize::MAX;
        let mut hi = 0;
        for seed in 0..100 {
            let s = poisson_disk_sample(&square(), 0.1, seed).unwrap();
            assert!(s.min_pairwise_distance() >= 0.1);
            lo = lo.min(s.len());
            hi = hi.max(s.len());
        }
        assert!(lo >= 60 && hi <= 100, "{lo}..{hi}");
    }

    #[test]
    fn deterministic() {
        let m = shapes::icosphere(3);
        assert_eq!(sample_surface(&m, 0.2, 9).unwrap(), sample_surface(&m, 0.2, 9).unwrap());
    }

    #[test]
    fn cube_corner_neighbourhood() {
        let m = shapes::unit_cube();
        let s = SampleSet {
            radius: 0.5,
            positions: vec![Vec3::zeros()],
            host_faces: vec![0],
            neighbors: vec![],
            rho: vec![],
        };
        let s = build_neighborhoods(s, &m, 0.5);
        let corner = m.vertices().iter().position(|v| v.norm() == 0.0).unwrap() as u32;
        assert_eq!(s.neighbors, vec![vec![corner]]);
        let s = build_neighborhoods(s, &m, m.diagonal());
        assert_eq!(s.neighbors[0].len(), 8);
    }

    #[test]
    fn neighbourhoods_match_brute_force() {
        let m = shapes::icosphere(4);
        let s = sample_surface(&m, 0.3, 4).unwrap();
        for (p, nb) in s.positions.iter().zip(&s.neighbors) {
            let brute: Vec<u32> = (0..m.vertex_count() as u32)
                .filter(|&v| (m.vertices()[v as usize] - p).norm() <= 0.3)
                .collect();
            assert_eq!(nb, &brute);
        }
    }

    #[test]
    fn empty_neighbourhoods_removed() {
        let m = shapes::grid_plane(1, 1, 10.0, 10.0);
        let s = sample_surface(&m, 1.0, 2).unwrap();
        assert!(!s.is_empty());
        assert!(s.neighbors.iter().all(|n| !n.is_empty()));
        assert_eq!(s.rho.len(), s.len());
    }

    #[test]
    fn uniform_sphere_densities_near_one() {
        let m = shapes::icosphere(5);
        let s = sample_surface(&m, 0.15, 1).unwrap();
        assert!(s.rho.iter().all(|&r| (0.8..=1.2).contains(&r)), "{:?}", s.rho);
    }

    #[test]
    fn refined_region_has_higher_density() {
        // Left half of a strip at 4x the vertex density of the right half.
        let fine = shapes::grid_plane(40, 40, 1.0, 1.0);
        let coarse = shapes::grid_plane(20, 20, 1.0, 1.0).map_vertices(|v| v + Vec3::new(1.5, 0.0, 0.0));
        let mut verts = fine.vertices().to_vec();
        let off = verts.len() as u32;
        verts.extend_from_slice(coarse.vertices());
        let mut faces = fine.faces().to_vec();
        faces.extend(coarse.faces().iter().map(|f| f.map(|i| i + off)));
        let m = Mesh::new(verts, faces).unwrap();
        let s = sample_surface(&m, 0.1, 3).unwrap();
        let interior = |p: &Vec3, x0: f64| p.x > x0 + 0.15 && p.x < x0 + 0.85 && p.y > 0.15 && p.y < 0.85;
        let mean = |x0: f64| {
            let v: Vec<f64> = s.positions.iter().zip(&s.rho).filter(|(p, _)| interior(p, x0)).map(|(_, r)| *r).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let ratio = mean(0.0) / mean(1.5);
        assert!((3.4..=4.6).contains(&ratio), "{ratio}");
    }

    #[test]
    fn single_sample_density_is_one() {
        let s = sample_surface(&square(), 5.0, 0).unwrap();
        assert_eq!(s.rho, vec![1.0]);
    }

    #[test]
    fn json_round_trip() {
        let s = sample_surface(&shapes::icosphere(2), 0.4, 0).unwrap();
        assert_eq!(SampleSet::from_json(&s.to_json()).unwrap(), s);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn poisson_property_holds(seed in any::<u64>(), r in 0.05f64..0.8) {
            let m = shapes::torus(1.0, 0.4, 24, 12);
            let s = sample_surface(&m, r, seed).unwrap();
            prop_assert!(s.min_pairwise_distance() >= r);
            for (p, nb) in s.positions.iter().zip(&s.neighbors) {
                for &v in nb {
                    prop_assert!((m.vertices()[v as usize] - p).norm() <= r);
                }
            }
            prop_assert!(s.rho.iter().all(|&x| x > 0.0));
        }
    }
}
