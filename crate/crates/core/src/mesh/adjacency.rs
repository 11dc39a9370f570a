use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Mesh;
use crate::error::{Error, Result};

/// Compressed sparse rows: row `i` is `targets[offsets[i]..offsets[i + 1]]`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Csr {
    offsets: Vec<usize>,
    targets: Vec<u32>,
}

impl Csr {
    pub fn from_rows<I, R>(rows: I) -> Csr
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = u32>,
    {
        let mut offsets = vec![0];
        let mut targets = Vec::new();
        for row in rows {
            targets.extend(row);
            offsets.push(targets.len());
        }
        Csr { offsets, targets }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> + '_ {
        (0..self.len()).map(move |i| self.row(i))
    }

    pub fn nnz(&self) -> usize {
        self.targets.len()
    }
}

/// An undirected mesh edge with its (one or two) incident faces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    /// Endpoints, smaller index first.
    pub vertices: (u32, u32),
    faces: [u32; 2],
    face_count: u8,
}

impl Edge {
    pub fn faces(&self) -> &[u32] {
        &self.faces[..self.face_count as usize]
    }

    pub fn is_boundary(&self) -> bool {
        self.face_count == 1
    }
}

fn key(a: u32, b: u32) -> (u32, u32) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn edge_face_map(mesh: &Mesh) -> (Vec<(u32, u32)>, HashMap<(u32, u32), Vec<u32>>) {
    let mut order = Vec::new();
    let mut map: HashMap<(u32, u32), Vec<u32>> = HashMap::with_capacity(mesh.face_count() * 3 / 2 + 1);
    for (fi, f) in mesh.faces().iter().enumerate() {
        for k in 0..3 {
            let e = key(f[k], f[(k + 1) % 3]);
            map.entry(e)
                .or_insert_with(|| {
                    order.push(e);
                    Vec::new()
                })
                .push(fi as u32);
        }
    }
    (order, map)
}

/// Edge table, face adjacency and vertex one-rings of a manifold mesh.
#[derive(Debug, Clone)]
pub struct Adjacency {
    edges: Vec<Edge>,
    lookup: HashMap<(u32, u32), u32>,
    face_edges: Vec<[u32; 3]>,
    face_neighbors: Csr,
    vertex_rings: Csr,
}

impl Adjacency {
    pub fn build(mesh: &Mesh) -> Result<Adjacency> {
        let (order, map) = edge_face_map(mesh);
        let bad: Vec<(u32, u32)> = order.iter().copied().filter(|e| map[e].len() > 2).collect();
        if !bad.is_empty() {
            return Err(Error::NonManifold { edges: bad });
        }
        let mut edges = Vec::with_capacity(order.len());
        let mut lookup = HashMap::with_capacity(order.len());
        for e in order {
            let fs = &map[&e];
            let mut faces = [u32::MAX; 2];
            faces[..fs.len()].copy_from_slice(fs);
            lookup.insert(e, edges.len() as u32);
            edges.push(Edge {
                vertices: e,
                faces,
                face_count: fs.len() as u8,
            });
        }
        let face_edges: Vec<[u32; 3]> = mesh
            .faces()
            .iter()
            .map(|f| [0, 1, 2].map(|k| lookup[&key(f[k], f[(k + 1) % 3])]))
            .collect();
        let face_neighbors = Csr::from_rows(face_edges.iter().enumerate().map(|(fi, es)| {
            let mut n: Vec<u32> = es
                .iter()
                .flat_map(|&e| edges[e as usize].faces().iter().copied())
                .filter(|&g| g as usize != fi)
                .collect();
            n.sort_unstable();
            n.dedup();
            n
        }));
        let mut rings: Vec<Vec<u32>> = vec![Vec::new(); mesh.vertex_count()];
        for e in &edges {
            rings[e.vertices.0 as usize].push(e.vertices.1);
            rings[e.vertices.1 as usize].push(e.vertices.0);
        }
        let vertex_rings = Csr::from_rows(rings.into_iter().map(|mut r| {
            r.sort_unstable();
            r
        }));
        Ok(Adjacency {
            edges,
            lookup,
            face_edges,
            face_neighbors,
            vertex_rings,
        })
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_id(&self, a: u32, b: u32) -> Option<usize> {
        self.lookup.get(&key(a, b)).map(|&e| e as usize)
    }

    pub fn edge(&self, a: u32, b: u32) -> Option<&Edge> {
        self.edge_id(a, b).map(|e| &self.edges[e])
    }

    /// Edge ids of a face, in winding order (edge `k` joins corners `k` and `k+1`).
    pub fn face_edges(&self, face: usize) -> [u32; 3] {
        self.face_edges[face]
    }

    pub fn face_neighbors(&self, face: usize) -> &[u32] {
        self.face_neighbors.row(face)
    }

    pub fn face_adjacency(&self) -> &Csr {
        &self.face_neighbors
    }

    pub fn vertex_ring(&self, v: usize) -> &[u32] {
        self.vertex_rings.row(v)
    }

    /// Marks faces within `hops` dual-graph steps of any seed face.
    pub fn faces_within_hops(&self, seeds: impl IntoIterator<Item = usize>, hops: usize) -> Vec<bool> {
        let n = self.face_neighbors.len();
        let mut mark = vec![false; n];
        let mut frontier: Vec<usize> = Vec::new();
        for s in seeds {
            if !mark[s] {
                mark[s] = true;
                frontier.push(s);
            }
        }
        for _ in 0..hops {
            let mut next = Vec::new();
            for &f in &frontier {
                for &g in self.face_neighbors(f) {
                    if !mark[g as usize] {
                        mark[g as usize] = true;
                        next.push(g as usize);
                    }
                }
            }
            frontier = next;
        }
        mark
    }
}

/// Face neighbors by shared edge, tolerating non-manifold edges.
pub(crate) fn tolerant_face_neighbors(mesh: &Mesh) -> Csr {
    let (_, map) = edge_face_map(mesh);
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); mesh.face_count()];
    for fs in map.values() {
        for &a in fs {
            for &b in fs {
                if a != b {
                    rows[a as usize].push(b);
                }
            }
        }
    }
    Csr::from_rows(rows.into_iter().map(|mut r| {
        r.sort_unstable();
        r.dedup();
        r
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifoldReport {
    pub is_closed: bool,
    pub boundary_edge_count: usize,
    pub non_manifold_edge_count: usize,
    pub euler_characteristic: i64,
    /// Connected components of the face graph.
    pub component_count: usize,
}

impl ManifoldReport {
    /// Genus of a closed, connected surface.
    pub fn genus(&self) -> Option<i64> {
        (self.is_closed && self.component_count == 1 && self.euler_characteristic <= 2 && self.euler_characteristic % 2 == 0)
            .then(|| (2 - self.euler_characteristic) / 2)
    }
}

/// Counts boundary and non-manifold edges and the Euler characteristic over
/// referenced vertices. Never fails: defects are reported, not raised.
pub fn validate_manifold(mesh: &Mesh) -> ManifoldReport {
    let (_, map) = edge_face_map(mesh);
    let boundary = map.values().filter(|f| f.len() == 1).count();
    let non_manifold = map.values().filter(|f| f.len() > 2).count();
    let mut used = vec![false; mesh.vertex_count()];
    for f in mesh.faces() {
        for &v in f {
            used[v as usize] = true;
        }
    }
    let v = used.iter().filter(|&&u| u).count() as i64;
    let e = map.len() as i64;
    let f = mesh.face_count() as i64;

    let neighbors = tolerant_face_neighbors(mesh);
    let mut seen = vec![false; mesh.face_count()];
    let mut components = 0;
    for start in 0..mesh.face_count() {
        if seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(x) = stack.pop() {
            for &y in neighbors.row(x) {
                if !seen[y as usize] {
                    seen[y as usize] = true;
                    stack.push(y as usize);
                }
            }
        }
    }
    ManifoldReport {
        is_closed: boundary == 0 && non_manifold == 0 && f > 0,
        boundary_edge_count: boundary,
        non_manifold_edge_count: non_manifold,
        euler_characteristic: v - e + f,
        component_count: components,
    }
}
