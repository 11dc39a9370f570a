use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::{face_geometry, mesh_unchecked, vertex_normals, Adjacency, Mesh, Vec3};

/// Midpoint 4-to-1 subdivision applied `levels` times. Original vertices
/// keep their indices; new vertices lie on the original faces.
pub fn tessellate(mesh: &Mesh, levels: u32) -> Mesh {
    let mut cur = mesh.clone();
    for _ in 0..levels {
        let mut verts = cur.vertices().to_vec();
        let mut mids: HashMap<(u32, u32), u32> = HashMap::new();
        let mut mid = |a: u32, b: u32, verts: &mut Vec<Vec3>| {
            let key = (a.min(b), a.max(b));
            *mids.entry(key).or_insert_with(|| {
                verts.push((verts[a as usize] + verts[b as usize]) * 0.5);
                (verts.len() - 1) as u32
            })
        };
        let mut faces = Vec::with_capacity(cur.face_count() * 4);
        for &[a, b, c] in cur.faces() {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            faces.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
        }
        cur = mesh_unchecked(verts, faces);
    }
    cur
}

fn face_normal(v: &[Vec3], f: [u32; 3]) -> Vec3 {
    let [a, b, c] = f.map(|i| v[i as usize]);
    (b - a).cross(&(c - a))
}

/// Tangential vertex jitter followed by random edge flips.
///
/// Each vertex moves within its tangent plane by up to `jitter` times the
/// mean length of its incident edges; a move that would flip or nearly
/// collapse an incident face is skipped. Then `flip_fraction` of the
/// interior edges are tried for a flip, which is applied only when the
/// opposite vertices are not already joined and both new triangles keep the
/// orientation of the quad they replace.
pub fn remesh_perturb(mesh: &Mesh, jitter: f64, flip_fraction: f64, seed: u64) -> Result<Mesh> {
    if !(0.0..0.5).contains(&jitter) {
        return Err(Error::invalid("jitter", "must lie in [0, 0.5)"));
    }
    if !(0.0..=1.0).contains(&flip_fraction) {
        return Err(Error::invalid("flip_fraction", "must lie in [0, 1]"));
    }
    let adjacency = Adjacency::build(mesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut verts = mesh.vertices().to_vec();
    let mut faces = mesh.faces().to_vec();

    if jitter > 0.0 {
        let normals = vertex_normals(mesh);
        let mut incident: Vec<Vec<u32>> = vec![Vec::new(); verts.len()];
        for (f, tri) in faces.iter().enumerate() {
            for &v in tri {
                incident[v as usize].push(f as u32);
            }
        }
        let base_area = face_geometry(mesh).areas;
        for v in 0..verts.len() {
            let ring = adjacency.vertex_ring(v);
            let (angle, amount): (f64, f64) = (rng.random_range(0.0..std::f64::consts::TAU), rng.random());
            if ring.is_empty() {
                continue;
            }
            let mean_edge = ring.iter().map(|&u| (verts[u as usize] - verts[v]).norm()).sum::<f64>() / ring.len() as f64;
            let n = normals[v];
            let axis = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
            let t1 = (axis - n * axis.dot(&n)).normalize();
            let t2 = n.cross(&t1);
            let step = (t1 * angle.cos() + t2 * angle.sin()) * (amount * jitter * mean_edge);
            let old = verts[v];
            let before: Vec<Vec3> = incident[v].iter().map(|&f| face_normal(&verts, faces[f as usize])).collect();
            verts[v] = old + step;
            let ok = incident[v].iter().zip(&before).all(|(&f, nb)| {
                let na = face_normal(&verts, faces[f as usize]);
                na.dot(nb) > 0.0 && 0.5 * na.norm() > 0.1 * base_area[f as usize]
            });
            if !ok {
                verts[v] = old;
            }
        }
    }

    if flip_fraction > 0.0 {
        let mut edge_faces: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
        for (f, tri) in faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                edge_faces.entry((a.min(b), a.max(b))).or_default().push(f as u32);
            }
        }
        let mut candidates: Vec<(u32, u32)> = adjacency
            .edges()
            .iter()
            .filter(|e| e.faces().len() == 2)
            .map(|e| e.vertices)
            .collect();
        candidates.shuffle(&mut rng);
        let tries = (flip_fraction * candidates.len() as f64).round() as usize;
        for &(a, b) in candidates.iter().take(tries) {
            let key = (a.min(b), a.max(b));
            let (f1, f2) = match edge_faces.get(&key).map(Vec::as_slice) {
                Some(&[f1, f2]) => (f1 as usize, f2 as usize),
                _ => continue,
            };
            // Rotate f1 so it reads [p, q, c] with p→q the shared edge.
            let t1 = faces[f1];
            let k = (0..3).find(|&k| {
                let (x, y) = (t1[k], t1[(k + 1) % 3]);
                (x.min(y), x.max(y)) == key
            });
            let Some(k) = k else { continue };
            let (p, q, c) = (t1[k], t1[(k + 1) % 3], t1[(k + 2) % 3]);
            let Some(&d) = faces[f2].iter().find(|&&x| x != p && x != q) else { continue };
            if c == d || edge_faces.contains_key(&(c.min(d), c.max(d))) {
                continue;
            }
            let old = face_normal(&verts, t1) + face_normal(&verts, faces[f2]);
            let (n1, n2) = ([p, d, c], [d, q, c]);
            let (m1, m2) = (face_normal(&verts, n1), face_normal(&verts, n2));
            let quad = old.norm();
            if !(m1.dot(&old) > 0.0 && m2.dot(&old) > 0.0 && m1.norm() > 0.05 * quad && m2.norm() > 0.05 * quad) {
                continue;
            }
            faces[f1] = n1;
            faces[f2] = n2;
            edge_faces.remove(&key);
            edge_faces.insert((c.min(d), c.max(d)), vec![f1 as u32, f2 as u32]);
            // Outer edges (p,d) and (q,c) change their face.
            for (e, from, to) in [((p, d), f2, f1), ((q, c), f1, f2)] {
                if let Some(list) = edge_faces.get_mut(&(e.0.min(e.1), e.0.max(e.1))) {
                    for f in list.iter_mut() {
                        if *f as usize == from {
                            *f = to as u32;
                        }
                    }
                }
            }
        }
    }
    Ok(mesh_unchecked(verts, faces))
}
