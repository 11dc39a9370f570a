use std::f64::consts::PI;

use super::{Adjacency, Mesh, Vec3};
use crate::error::{Error, Result};

/// Faces whose area is below this fraction of the squared box diagonal are
/// treated as degenerate.
const DEGENERATE_AREA: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct FaceGeometry {
    pub centroids: Vec<Vec3>,
    /// Unit normals following the winding order; zero for degenerate faces.
    pub normals: Vec<Vec3>,
    pub areas: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl FaceGeometry {
    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }
}

pub fn face_geometry(mesh: &Mesh) -> FaceGeometry {
    let tiny = DEGENERATE_AREA * mesh.diagonal().powi(2);
    let n = mesh.face_count();
    let mut g = FaceGeometry {
        centroids: Vec::with_capacity(n),
        normals: Vec::with_capacity(n),
        areas: Vec::with_capacity(n),
        degenerate: Vec::with_capacity(n),
    };
    for f in 0..n {
        let [a, b, c] = mesh.triangle(f);
        let cross = (b - a).cross(&(c - a));
        let len = cross.norm();
        let area = 0.5 * len;
        let degenerate = !(area > tiny);
        g.centroids.push((a + b + c) / 3.0);
        g.normals.push(if degenerate { Vec3::zeros() } else { cross / len });
        g.areas.push(area);
        g.degenerate.push(degenerate);
    }
    g
}

/// Area-weighted vertex normals.
pub fn vertex_normals(mesh: &Mesh) -> Vec<Vec3> {
    let mut acc = vec![Vec3::zeros(); mesh.vertex_count()];
    for f in mesh.faces() {
        let [a, b, c] = f.map(|i| mesh.vertices()[i as usize]);
        let n = (b - a).cross(&(c - a));
        for &i in f {
            acc[i as usize] += n;
        }
    }
    for n in &mut acc {
        let len = n.norm();
        if len > 0.0 {
            *n /= len;
        }
    }
    acc
}

/// Angle between the two face planes at an interior edge, measured through
/// the solid: `π` for flat, below `π` for convex and above `π` for concave
/// creases.
pub fn dihedral_angle(mesh: &Mesh, adjacency: &Adjacency, edge: (u32, u32)) -> Result<f64> {
    let e = adjacency
        .edge(edge.0, edge.1)
        .ok_or_else(|| Error::Domain(format!("({}, {}) is not a mesh edge", edge.0, edge.1)))?;
    let [f1, f2] = match e.faces() {
        &[a, b] => [a as usize, b as usize],
        _ => return Err(Error::Domain(format!("edge ({}, {}) is a boundary edge", edge.0, edge.1))),
    };
    Ok(dihedral_between(mesh, f1, f2, e.vertices))
}

pub(crate) fn dihedral_between(mesh: &Mesh, f1: usize, f2: usize, edge: (u32, u32)) -> f64 {
    let normal = |f: usize| {
        let [a, b, c] = mesh.triangle(f);
        (b - a).cross(&(c - a)).normalize()
    };
    let (n1, n2) = (normal(f1), normal(f2));
    let cos = n1.dot(&n2).clamp(-1.0, 1.0);
    let bend = cos.acos();
    let opposite = mesh.faces()[f2]
        .iter()
        .copied()
        .find(|&v| v != edge.0 && v != edge.1)
        .expect("triangle has a vertex off the edge");
    let p = mesh.vertices()[edge.0 as usize];
    let height = (mesh.vertices()[opposite as usize] - p).dot(&n1);
    // The opposite vertex lying above the first face's plane means a fold
    // toward the outside: a concave crease.
    let scale = (mesh.vertices()[opposite as usize] - p).norm();
    if height > 1e-12 * scale {
        PI + bend
    } else {
        PI - bend
    }
}
