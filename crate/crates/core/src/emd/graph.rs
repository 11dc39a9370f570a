//! Sample-graph encoding consumed by the network.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Vec3};
use crate::sampler::SampleSet;
use crate::spatial::PointGrid;

pub const NODE_FEATURES: usize = 7;
pub const EDGE_FEATURES: usize = 4;

/// Node and edge features of a sample graph. Every feature is invariant
/// under translation, rotation and uniform scaling of the mesh.
///
/// Node features, in order: distance to the sample centroid over the RMS
/// sample distance `s`; density `ρ`; `ln(1 + |N|)`; mean and max
/// neighbour distance over `r`; mean neighbour offset along the normal over
/// `r`; offset from the centroid along the normal over `s`.
///
/// Edges join samples closer than `2r` and are stored in both directions
/// as `(sender, receiver)`. Edge features: length over `r`, the unit offset
/// from receiver to sender dotted with the receiver and sender normals, and
/// the dot product of the two normals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphInput {
    pub nodes: usize,
    pub node_features: Vec<f64>,
    pub edges: Vec<(u32, u32)>,
    pub edge_features: Vec<f64>,
    pub rho: Vec<f64>,
    pub positions: Vec<[f64; 3]>,
    pub normals: Vec<[f64; 3]>,
}

impl GraphInput {
    pub fn node(&self, i: usize) -> &[f64] {
        &self.node_features[i * NODE_FEATURES..(i + 1) * NODE_FEATURES]
    }

    pub fn position(&self, i: usize) -> Vec3 {
        Vec3::from(self.positions[i])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.nodes;
        if self.node_features.len() != n * NODE_FEATURES
            || self.rho.len() != n
            || self.positions.len() != n
            || self.normals.len() != n
            || self.edge_features.len() != self.edges.len() * EDGE_FEATURES
        {
            return Err(Error::Graph("inconsistent feature array sizes".into()));
        }
        if let Some(e) = self.edges.iter().find(|e| e.0 as usize >= n || e.1 as usize >= n) {
            return Err(Error::Graph(format!("edge {e:?} out of range for {n} nodes")));
        }
        if !self.node_features.iter().chain(&self.edge_features).chain(&self.rho).all(|v| v.is_finite()) {
            return Err(Error::Graph("non-finite feature".into()));
        }
        Ok(())
    }

    /// Reorders nodes so that new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> GraphInput {
        let mut inv = vec![0u32; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new as u32;
        }
        let mut g = self.clone();
        g.node_features = perm.iter().flat_map(|&o| self.node(o).to_vec()).collect();
        g.rho = perm.iter().map(|&o| self.rho[o]).collect();
        g.positions = perm.iter().map(|&o| self.positions[o]).collect();
        g.normals = perm.iter().map(|&o| self.normals[o]).collect();
        g.edges = self.edges.iter().map(|&(s, r)| (inv[s as usize], inv[r as usize])).collect();
        g
    }
}

fn face_normal(mesh: &Mesh, f: u32) -> Vec3 {
    let [a, b, c] = mesh.triangle(f as usize);
    let n = (b - a).cross(&(c - a));
    let len = n.norm();
    if len > 0.0 {
        n / len
    } else {
        Vec3::zeros()
    }
}

pub fn build_graph_input(samples: &SampleSet, mesh: &Mesh) -> Result<GraphInput> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Graph(format!("need at least 2 samples, got {n}")));
    }
    if samples.neighbors.len() != n || samples.rho.len() != n {
        return Err(Error::Graph("sample set lacks neighbourhoods or densities".into()));
    }
    let r = samples.radius;
    let c = samples.positions.iter().sum::<Vec3>() / n as f64;
    let s = (samples.positions.iter().map(|p| (p - c).norm_squared()).sum::<f64>() / n as f64)
        .sqrt()
        .max(1e-300);
    let normals: Vec<Vec3> = samples.host_faces.iter().map(|&f| face_normal(mesh, f)).collect();
    let mut node_features = Vec::with_capacity(n * NODE_FEATURES);
    for i in 0..n {
        let p = samples.positions[i];
        let nrm = normals[i];
        let nb = &samples.neighbors[i];
        let (mut sum_d, mut max_d, mut sum_off) = (0.0, 0.0f64, 0.0);
        for &v in nb {
            let d = mesh.vertices()[v as usize] - p;
            let len = d.norm();
            sum_d += len;
            max_d = max_d.max(len);
            sum_off += d.dot(&nrm);
        }
        let k = nb.len().max(1) as f64;
        node_features.extend_from_slice(&[
            (p - c).norm() / s,
            samples.rho[i],
            (nb.len() as f64).ln_1p(),
            sum_d / k / r,
            max_d / r,
            sum_off / k / r,
            (p - c).dot(&nrm) / s,
        ]);
    }
    let grid = PointGrid::from_points(&samples.positions, 2.0 * r);
    let mut edges = Vec::new();
    let mut edge_features = Vec::new();
    for recv in 0..n {
        for send in grid.within(&samples.positions[recv], 2.0 * r) {
            let send = send as usize;
            if send == recv || (samples.positions[send] - samples.positions[recv]).norm() >= 2.0 * r {
                continue;
            }
            let d = samples.positions[send] - samples.positions[recv];
            let len = d.norm();
            let u = if len > 0.0 { d / len } else { Vec3::zeros() };
            edges.push((send as u32, recv as u32));
            edge_features.extend_from_slice(&[len / r, u.dot(&normals[recv]), u.dot(&normals[send]), normals[recv].dot(&normals[send])]);
        }
    }
    let g = GraphInput {
        nodes: n,
        node_features,
        edges,
        edge_features,
        rho: samples.rho.clone(),
        positions: samples.positions.iter().map(|p| [p.x, p.y, p.z]).collect(),
        normals: normals.iter().map(|p| [p.x, p.y, p.z]).collect(),
    };
    g.validate()?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::sample_surface;
    use crate::shapes;

    fn close(a: &GraphInput, b: &GraphInput, tol: f64) {
        assert_eq!(a.nodes, b.nodes);
        assert_eq!(a.edges, b.edges);
        for (x, y) in a.node_features.iter().zip(&b.node_features).chain(a.edge_features.iter().zip(&b.edge_features)) {
            assert!((x - y).abs() < tol, "{x} {y}");
        }
    }

    #[test]
    fn invariant_under_similarity_transforms() {
        let m = shapes::tri_lobe([1.0, 0.8, 0.6], 0.3, 0.6, 24, 0.15);
        let r = 0.3;
        let base = build_graph_input(&sample_surface(&m, r, 1).unwrap(), &m).unwrap();
        let t = Vec3::new(3.0, -2.0, 7.5);
        let moved = m.map_vertices(|v| v + t);
        close(&base, &build_graph_input(&sample_surface(&moved, r, 1).unwrap(), &moved).unwrap(), 1e-9);
        let scaled = m.map_vertices(|v| v * 2.5);
        close(&base, &build_graph_input(&sample_surface(&scaled, r * 2.5, 1).unwrap(), &scaled).unwrap(), 1e-9);
        let rot = nalgebra::Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let rotated = m.map_vertices(|v| rot * v);
        close(&base, &build_graph_input(&sample_surface(&rotated, r, 1).unwrap(), &rotated).unwrap(), 1e-9);
    }

    #[test]
    fn two_close_samples_share_one_edge_pair() {
        let m = shapes::grid_plane(4, 4, 1.0, 1.0);
        let s = SampleSet {
            radius: 0.3,
            positions: vec![Vec3::new(0.2, 0.2, 0.0), Vec3::new(0.6, 0.2, 0.0), Vec3::new(0.95, 0.95, 0.0)],
            host_faces: vec![0, 2, 31],
            neighbors: vec![vec![0], vec![2], vec![24]],
            rho: vec![1.0; 3],
        };
        let g = build_graph_input(&s, &m).unwrap();
        assert_eq!(g.edges, vec![(1, 0), (0, 1)]);
    }

    #[test]
    fn fewer_than_two_samples_rejected() {
        let m = shapes::unit_cube();
        let s = sample_surface(&m, 10.0, 0).unwrap();
        assert!(matches!(build_graph_input(&s, &m), Err(Error::Graph(_))));
    }
}
