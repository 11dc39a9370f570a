//! Synthetic training data: procedural deformations of a base mesh,
//! tessellation and remeshing augmentation, and (graph, reference) pairs.

mod deform;
mod pairs;
mod remesh;

pub use deform::{generate_variants, Bend, DeformSpec, DeformTemplate, RbfHandle, MAX_DISPLACEMENT, REDRAW_BUDGET};
pub use pairs::{
    build_pair, build_training_pairs, knn_graph, read_dataset, shdf_at_samples, write_dataset, DatasetManifest,
    TrainPair, TARGET_SMOOTHING_K,
};
pub use remesh::{remesh_perturb, tessellate};
