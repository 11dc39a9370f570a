use super::graph::build_graph_input;
use super::model::EmdModel;
use crate::error::{Error, Result};
use crate::mesh::{face_geometry, Mesh};
use crate::sampler::sample_surface;
use crate::shdf::{FieldDomain, FieldSource, ScalarField};
use crate::spatial::PointGrid;

/// Interpolates per-sample values onto face centroids by inverse-distance
/// weighting over the 3 nearest samples.
pub fn samples_to_faces(mesh: &Mesh, positions: &[crate::mesh::Vec3], values: &[f64], radius: f64) -> Vec<f64> {
    let grid = PointGrid::from_points(positions, radius.max(1e-12));
    face_geometry(mesh)
        .centroids
        .iter()
        .map(|c| {
            let near = grid.nearest(c, 3);
            if let Some(&(i, _)) = near.iter().find(|(_, d)| *d == 0.0) {
                return values[i as usize];
            }
            let (mut num, mut den) = (0.0, 0.0);
            for (i, d) in near {
                let w = 1.0 / d;
                num += w * values[i as usize];
                den += w;
            }
            num / den
        })
        .collect()
}

/// Sample, encode, predict and interpolate to faces.
pub fn infer_field(model: &EmdModel, mesh: &Mesh, radius: f64, seed: u64) -> Result<ScalarField> {
    let samples = sample_surface(mesh, radius, seed)?;
    if samples.len() < 2 {
        return Err(Error::Inference(format!(
            "only {} sample(s) at radius {radius}; use a smaller radius",
            samples.len()
        )));
    }
    let graph = build_graph_input(&samples, mesh)?;
    let pred = model.forward(&graph)?;
    let values = samples_to_faces(mesh, &samples.positions, &pred, radius);
    ScalarField::normalized(FieldDomain::PerFace, FieldSource::Predicted, values)
}
