//! Bounding-volume hierarchy over mesh triangles (binned SAH build,
//! stack traversal).

use crate::mesh::{Aabb, Mesh, Vec3};

const LEAF_SIZE: usize = 4;
const BINS: usize = 12;

#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, dir: Vec3) -> Ray {
        Ray { origin, dir }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub face: u32,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    bounds: Aabb,
    /// Leaf: first index into `order`; interior: index of the left child
    /// (the right child follows it).
    first: u32,
    count: u32,
}

#[derive(Debug, Clone, Copy)]
struct Tri {
    v0: Vec3,
    e1: Vec3,
    e2: Vec3,
}

/// Acceleration structure for ray/mesh queries.
#[derive(Debug, Clone)]
pub struct RayAccel {
    nodes: Vec<Node>,
    order: Vec<u32>,
    tris: Vec<Tri>,
    normals: Vec<Vec3>,
}

/// Möller–Trumbore; returns `t` for hits with `t > t_min`.
#[inline]
fn intersect(tri: &Tri, ray: &Ray, t_min: f64) -> Option<f64> {
    let p = ray.dir.cross(&tri.e2);
    let det = tri.e1.dot(&p);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - tri.v0;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&tri.e1);
    let v = ray.dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = tri.e2.dot(&q) * inv;
    (t > t_min).then_some(t)
}

#[inline]
fn slab(b: &Aabb, origin: &Vec3, inv_dir: &Vec3, t_max: f64) -> Option<f64> {
    let mut t0 = 0.0f64;
    let mut t1 = t_max;
    for a in 0..3 {
        let ta = (b.min[a] - origin[a]) * inv_dir[a];
        let tb = (b.max[a] - origin[a]) * inv_dir[a];
        let (lo, hi) = if ta < tb { (ta, tb) } else { (tb, ta) };
        // NaN from 0·inf (ray in the slab plane) must not reject the box.
        if lo > t0 {
            t0 = lo;
        }
        if hi < t1 {
            t1 = hi;
        }
        if t0 > t1 {
            return None;
        }
    }
    Some(t0)
}

impl RayAccel {
    pub fn build(mesh: &Mesh) -> RayAccel {
        let tris: Vec<Tri> = (0..mesh.face_count())
            .map(|f| {
                let [a, b, c] = mesh.triangle(f);
                Tri {
                    v0: a,
                    e1: b - a,
                    e2: c - a,
                }
            })
            .collect();
        let normals = tris
            .iter()
            .map(|t| {
                let n = t.e1.cross(&t.e2);
                let len = n.norm();
                if len > 0.0 {
                    n / len
                } else {
                    Vec3::zeros()
                }
            })
            .collect();
        let bounds: Vec<Aabb> = (0..mesh.face_count())
            .map(|f| Aabb::from_points(&mesh.triangle(f)))
            .collect();
        let centroids: Vec<Vec3> = bounds.iter().map(Aabb::center).collect();
        let mut order: Vec<u32> = (0..mesh.face_count() as u32).collect();
        let mut nodes = vec![Node {
            bounds: Aabb::empty(),
            first: 0,
            count: order.len() as u32,
        }];
        if !order.is_empty() {
            let mut stack = vec![0usize];
            while let Some(ni) = stack.pop() {
                let (first, count) = (nodes[ni].first as usize, nodes[ni].count as usize);
                let slice = &mut order[first..first + count];
                let mut nb = Aabb::empty();
                let mut cb = Aabb::empty();
                for &t in slice.iter() {
                    nb.merge(&bounds[t as usize]);
                    cb.grow(&centroids[t as usize]);
                }
                nodes[ni].bounds = nb;
                if count <= LEAF_SIZE {
                    continue;
                }
                let Some(mid) = split(slice, &bounds, &centroids, &cb, &nb) else {
                    continue;
                };
                let left = nodes.len() as u32;
                nodes.push(Node {
                    bounds: Aabb::empty(),
                    first: first as u32,
                    count: mid as u32,
                });
                nodes.push(Node {
                    bounds: Aabb::empty(),
                    first: (first + mid) as u32,
                    count: (count - mid) as u32,
                });
                nodes[ni].first = left;
                nodes[ni].count = 0;
                stack.push(left as usize + 1);
                stack.push(left as usize);
            }
        }
        RayAccel {
            nodes,
            order,
            tris,
            normals,
        }
    }

    pub fn triangle_count(&self) -> usize {
        self.tris.len()
    }

    /// Outward (winding-order) unit normal of a face.
    pub fn normal(&self, face: u32) -> Vec3 {
        self.normals[face as usize]
    }

    /// Leaf triangle lists, for structural checks.
    pub fn leaves(&self) -> Vec<&[u32]> {
        if self.tris.is_empty() {
            return Vec::new();
        }
        self.nodes
            .iter()
            .filter(|n| n.count > 0)
            .map(|n| &self.order[n.first as usize..(n.first + n.count) as usize])
            .collect()
    }

    /// Nearest intersection with `t > t_min`, of either facing.
    pub fn closest_hit(&self, ray: &Ray, t_min: f64) -> Option<Hit> {
        if self.tris.is_empty() {
            return None;
        }
        let inv = ray.dir.map(|d| 1.0 / d);
        let mut best: Option<Hit> = None;
        let mut t_max = f64::INFINITY;
        let mut stack: [u32; 64] = [0; 64];
        let mut sp = 1usize;
        while sp > 0 {
            sp -= 1;
            let node = &self.nodes[stack[sp] as usize];
            if slab(&node.bounds, &ray.origin, &inv, t_max).is_none() {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.first as usize..(node.first + node.count) as usize] {
                    if let Some(th) = intersect(&self.tris[t as usize], ray, t_min) {
                        if th < t_max || (th == t_max && best.is_some_and(|b| t < b.face)) {
                            t_max = th;
                            best = Some(Hit { t: th, face: t });
                        }
                    }
                }
            } else {
                let (l, r) = (node.first, node.first + 1);
                let dl = slab(&self.nodes[l as usize].bounds, &ray.origin, &inv, t_max);
                let dr = slab(&self.nodes[r as usize].bounds, &ray.origin, &inv, t_max);
                match (dl, dr) {
                    (Some(a), Some(b)) => {
                        // Push the farther child first so the nearer is popped next.
                        let (near, far) = if a <= b { (l, r) } else { (r, l) };
                        stack[sp] = far;
                        stack[sp + 1] = near;
                        sp += 2;
                    }
                    (Some(_), None) => {
                        stack[sp] = l;
                        sp += 1;
                    }
                    (None, Some(_)) => {
                        stack[sp] = r;
                        sp += 1;
                    }
                    (None, None) => {}
                }
            }
        }
        best
    }

    /// Every intersection with `t > t_min`, sorted by `(t, face)`.
    pub fn all_hits(&self, ray: &Ray, t_min: f64) -> Vec<Hit> {
        let mut out = Vec::new();
        if self.tris.is_empty() {
            return out;
        }
        let inv = ray.dir.map(|d| 1.0 / d);
        let mut stack = vec![0u32];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if slab(&node.bounds, &ray.origin, &inv, f64::INFINITY).is_none() {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.first as usize..(node.first + node.count) as usize] {
                    if let Some(th) = intersect(&self.tris[t as usize], ray, t_min) {
                        out.push(Hit { t: th, face: t });
                    }
                }
            } else {
                stack.push(node.first);
                stack.push(node.first + 1);
            }
        }
        out.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.face.cmp(&b.face)));
        out
    }

    /// Exhaustive intersection over every triangle, sorted by `(t, face)`.
    pub fn brute_force_hits(&self, ray: &Ray, t_min: f64) -> Vec<Hit> {
        let mut out: Vec<Hit> = self
            .tris
            .iter()
            .enumerate()
            .filter_map(|(i, tri)| intersect(tri, ray, t_min).map(|t| Hit { t, face: i as u32 }))
            .collect();
        out.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.face.cmp(&b.face)));
        out
    }
}

/// Partitions `slice` by the cheapest binned-SAH plane; `None` keeps a leaf.
fn split(slice: &mut [u32], bounds: &[Aabb], centroids: &[Vec3], cb: &Aabb, nb: &Aabb) -> Option<usize> {
    let n = slice.len();
    let extent = cb.extent();
    let mut best: Option<(f64, usize, f64)> = None;
    for axis in 0..3 {
        if extent[axis] <= 0.0 {
            continue;
        }
        let mut bins = [(Aabb::empty(), 0usize); BINS];
        let scale = BINS as f64 / extent[axis];
        let bin_of = |t: u32| (((centroids[t as usize][axis] - cb.min[axis]) * scale) as usize).min(BINS - 1);
        for &t in slice.iter() {
            let b = &mut bins[bin_of(t)];
            b.0.merge(&bounds[t as usize]);
            b.1 += 1;
        }
        let mut right_area = [0.0; BINS];
        let mut right_count = [0usize; BINS];
        let mut acc = Aabb::empty();
        let mut cnt = 0;
        for i in (1..BINS).rev() {
            acc.merge(&bins[i].0);
            cnt += bins[i].1;
            right_area[i] = if cnt > 0 { acc.surface_area() } else { 0.0 };
            right_count[i] = cnt;
        }
        let mut acc = Aabb::empty();
        let mut cnt = 0;
        for i in 0..BINS - 1 {
            acc.merge(&bins[i].0);
            cnt += bins[i].1;
            if cnt == 0 || right_count[i + 1] == 0 {
                continue;
            }
            let cost = cnt as f64 * acc.surface_area() + right_count[i + 1] as f64 * right_area[i + 1];
            if best.is_none_or(|(c, _, _)| cost < c) {
                let plane = cb.min[axis] + (i + 1) as f64 / scale;
                best = Some((cost, axis, plane));
            }
        }
    }
    let leaf_cost = n as f64 * nb.surface_area();
    let Some((cost, axis, plane)) = best else {
        // All centroids coincide: split by count so leaves stay small.
        let mid = n / 2;
        return (n > 2 * LEAF_SIZE).then_some(mid);
    };
    if cost >= leaf_cost && n <= 4 * LEAF_SIZE {
        return None;
    }
    let mut i = 0;
    let mut j = n;
    while i < j {
        if centroids[slice[i] as usize][axis] < plane {
            i += 1;
        } else {
            j -= 1;
            slice.swap(i, j);
        }
    }
    (i > 0 && i < n).then_some(i).or(Some(n / 2))
}
