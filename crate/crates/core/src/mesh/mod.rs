//! Indexed triangle meshes: storage, file I/O, adjacency and per-face
//! differential quantities.
//!
//! Faces are stored as counter-clockwise vertex triples when seen from the
//! outside, so face normals computed from the winding point outward.

mod adjacency;
mod geometry;
mod io;

pub(crate) use adjacency::tolerant_face_neighbors;
pub use adjacency::{validate_manifold, Adjacency, Csr, Edge, ManifoldReport};
pub(crate) use geometry::dihedral_between;
pub use geometry::{dihedral_angle, face_geometry, vertex_normals, FaceGeometry};
pub use io::{
    load_mesh, load_mesh_file, load_ply_with_attributes, save_mesh_file, write_obj, write_ply,
    MeshFormat, PlyAttributes, PlyEncoding, PlyExtras,
};

use log::warn;
use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut b = Aabb::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn merge(&mut self, other: &Aabb) {
        self.min = self.min.inf(&other.min);
        self.max = self.max.sup(&other.max);
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x
    }

    pub fn extent(&self) -> Vec3 {
        if self.is_empty() {
            Vec3::zeros()
        } else {
            self.max - self.min
        }
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn surface_area(&self) -> f64 {
        let e = self.extent();
        2.0 * (e.x * e.y + e.y * e.z + e.z * e.x)
    }
}

/// An indexed triangle surface.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    normals: Option<Vec<Vec3>>,
}

impl Mesh {
    /// Builds a mesh, rejecting out-of-range indices and dropping degenerate
    /// faces (repeated indices or exactly zero area) with a warning.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Mesh> {
        let n = vertices.len();
        if let Some((fi, f)) = faces
            .iter()
            .enumerate()
            .find(|(_, f)| f.iter().any(|&i| i as usize >= n))
        {
            return Err(Error::Structural(format!(
                "face {fi} references vertex {} but the mesh has {n} vertices",
                f.iter().max().unwrap()
            )));
        }
        if let Some(v) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::Structural(format!("vertex {v} has a non-finite coordinate")));
        }
        let before = faces.len();
        let faces: Vec<[u32; 3]> = faces
            .into_iter()
            .filter(|f| {
                if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                    return false;
                }
                let [a, b, c] = f.map(|i| vertices[i as usize]);
                (b - a).cross(&(c - a)).norm_squared() > 0.0
            })
            .collect();
        if faces.len() < before {
            warn!("dropped {} degenerate face(s)", before - faces.len());
        }
        Ok(Mesh {
            vertices,
            faces,
            normals: None,
        })
    }

    pub fn with_normals(mut self, normals: Vec<Vec3>) -> Result<Mesh> {
        if normals.len() != self.vertices.len() {
            return Err(Error::Structural(format!(
                "{} normals for {} vertices",
                normals.len(),
                self.vertices.len()
            )));
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        self.faces[face].map(|i| self.vertices[i as usize])
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.vertices)
    }

    /// Length of the bounding-box diagonal; the default length scale.
    pub fn diagonal(&self) -> f64 {
        self.bounds().diagonal()
    }

    /// Twice the largest vertex distance from the vertex centroid. Unlike the
    /// box diagonal this does not change under rotation.
    pub fn rigid_extent(&self) -> f64 {
        if self.vertices.is_empty() {
            return 0.0;
        }
        let c = self.vertices.iter().sum::<Vec3>() / self.vertices.len() as f64;
        2.0 * self
            .vertices
            .iter()
            .map(|v| (v - c).norm())
            .fold(0.0, f64::max)
    }

    /// Applies `f` to every vertex position; connectivity is untouched.
    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(f).collect(),
            faces: self.faces.clone(),
            normals: None,
        }
    }

    /// Replaces vertex positions, keeping connectivity. Used by deformers that
    /// have already checked the result for degeneracy.
    pub(crate) fn with_positions(&self, vertices: Vec<Vec3>) -> Mesh {
        debug_assert_eq!(vertices.len(), self.vertices.len());
        Mesh {
            vertices,
            faces: self.faces.clone(),
            normals: None,
        }
    }

    /// Extracts the given faces as a compact mesh. Returns the sub-mesh and,
    /// per sub-mesh vertex, the index of the source vertex.
    pub fn submesh(&self, faces: &[usize]) -> (Mesh, Vec<u32>) {
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut source = Vec::new();
        let mut out_faces = Vec::with_capacity(faces.len());
        for &f in faces {
            let tri = self.faces[f].map(|v| {
                let slot = &mut remap[v as usize];
                if *slot == u32::MAX {
                    *slot = source.len() as u32;
                    source.push(v);
                }
                *slot
            });
            out_faces.push(tri);
        }
        let vertices = source.iter().map(|&v| self.vertices[v as usize]).collect();
        (
            Mesh {
                vertices,
                faces: out_faces,
                normals: None,
            },
            source,
        )
    }

    /// Signed enclosed volume (positive for outward-oriented closed meshes).
    pub fn signed_volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i as usize]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }
}

/// Builds faces without the degeneracy filter; for internal constructors that
/// produce valid topology by construction.
pub(crate) fn mesh_unchecked(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Mesh {
    Mesh {
        vertices,
        faces,
        normals: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_of_range_index_is_structural() {
        let err = Mesh::new(vec![Vec3::zeros(); 2], vec![[0, 1, 2]]).unwrap_err();
        assert!(matches!(err, Error::Structural(_)), "{err}");
    }

    #[test]
    fn degenerate_faces_are_dropped() {
        let v = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
        ];
        let m = Mesh::new(v, vec![[0, 1, 2], [0, 0, 1], [0, 1, 3]]).unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn submesh_compacts_vertices() {
        let m = crate::shapes::unit_cube();
        let (sub, src) = m.submesh(&[0, 1]);
        assert_eq!(sub.face_count(), 2);
        assert_eq!(sub.vertex_count(), src.len());
        for (f, &orig) in sub.faces().iter().zip(&[0usize, 1]) {
            for k in 0..3 {
                assert_eq!(src[f[k] as usize], m.faces()[orig][k]);
            }
        }
    }
}
