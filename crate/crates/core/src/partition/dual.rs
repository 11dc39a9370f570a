use std::f64::consts::PI;

use crate::mesh::{dihedral_between, face_geometry, Adjacency, Mesh};

/// Face dual graph: one node per face, one weighted edge per interior mesh
/// edge.
#[derive(Debug, Clone, PartialEq)]
pub struct DualGraph {
    pub faces: usize,
    pub edges: Vec<(u32, u32)>,
    pub weights: Vec<f64>,
    /// Per face, `(neighbour, edge index)` pairs.
    offsets: Vec<u32>,
    incident: Vec<(u32, u32)>,
}

/// `len_ratio · f(θ)` with `f = 1` for convex or flat edges (`θ ≤ π`) and
/// `exp(−bias·(θ − π))` for concave ones.
pub fn edge_weight(len_ratio: f64, theta: f64, concavity_bias: f64) -> f64 {
    if theta <= PI {
        len_ratio
    } else {
        len_ratio * (-concavity_bias * (theta - PI)).exp()
    }
}

impl DualGraph {
    pub fn from_edges(faces: usize, edges: Vec<(u32, u32)>, weights: Vec<f64>) -> DualGraph {
        assert_eq!(edges.len(), weights.len());
        let mut counts = vec![0u32; faces + 1];
        for &(a, b) in &edges {
            counts[a as usize + 1] += 1;
            counts[b as usize + 1] += 1;
        }
        for i in 0..faces {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut incident = vec![(0, 0); 2 * edges.len()];
        for (e, &(a, b)) in edges.iter().enumerate() {
            incident[fill[a as usize] as usize] = (b, e as u32);
            fill[a as usize] += 1;
            incident[fill[b as usize] as usize] = (a, e as u32);
            fill[b as usize] += 1;
        }
        DualGraph {
            faces,
            edges,
            weights,
            offsets: counts,
            incident,
        }
    }

    /// `(neighbour, edge index)` pairs of face `f`.
    pub fn neighbors(&self, f: usize) -> &[(u32, u32)] {
        &self.incident[self.offsets[f] as usize..self.offsets[f + 1] as usize]
    }

    /// Sum of weights over edges whose faces carry different labels.
    pub fn cut_weight(&self, labels: &[usize]) -> f64 {
        self.edges
            .iter()
            .zip(&self.weights)
            .filter(|(&(a, b), _)| labels[a as usize] != labels[b as usize])
            .map(|(_, w)| w)
            .sum()
    }

    /// Connected components of the subgraph keeping only edges whose faces
    /// share a label. Components are numbered by their lowest face.
    pub fn label_components(&self, labels: &[usize]) -> (Vec<usize>, usize) {
        let mut comp = vec![usize::MAX; self.faces];
        let mut count = 0;
        let mut stack = Vec::new();
        for s in 0..self.faces {
            if comp[s] != usize::MAX {
                continue;
            }
            comp[s] = count;
            stack.push(s);
            while let Some(f) = stack.pop() {
                for &(g, _) in self.neighbors(f) {
                    let g = g as usize;
                    if comp[g] == usize::MAX && labels[g] == labels[s] {
                        comp[g] = count;
                        stack.push(g);
                    }
                }
            }
            count += 1;
        }
        (comp, count)
    }
}

/// Dual graph with dihedral-angle edge weights. Edges touching a degenerate
/// face are treated as flat.
pub fn build_dual_graph(mesh: &Mesh, adjacency: &Adjacency, concavity_bias: f64) -> DualGraph {
    let geom = face_geometry(mesh);
    let v = mesh.vertices();
    let all = adjacency.edges();
    let mean_len = if all.is_empty() {
        1.0
    } else {
        all.iter()
            .map(|e| (v[e.vertices.0 as usize] - v[e.vertices.1 as usize]).norm())
            .sum::<f64>()
            / all.len() as f64
    };
    let mut edges = Vec::new();
    let mut weights = Vec::new();
    for e in all {
        let &[f1, f2] = e.faces() else { continue };
        let (f1, f2) = (f1 as usize, f2 as usize);
        let theta = if geom.degenerate[f1] || geom.degenerate[f2] {
            PI
        } else {
            dihedral_between(mesh, f1, f2, e.vertices)
        };
        let len = (v[e.vertices.0 as usize] - v[e.vertices.1 as usize]).norm();
        edges.push((f1.min(f2) as u32, f1.max(f2) as u32));
        weights.push(edge_weight(len / mean_len, theta, concavity_bias));
    }
    DualGraph::from_edges(mesh.face_count(), edges, weights)
}
