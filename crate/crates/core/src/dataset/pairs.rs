use std::fs;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emd::{build_graph_input, GraphInput};
use crate::error::{Error, Result};
use crate::mesh::{Csr, Mesh, Vec3};
use crate::sampler::{default_radius, sample_surface};
use crate::shdf::{
    fill_unmeasured, normalize_log, shdf_at_point, smooth_bilateral, FieldDomain, FieldSource, RayAccel, RaySite,
    ScalarField, ShdfParams,
};
use crate::spatial::PointGrid;

/// Neighbours per sample in the graph used to smooth training targets.
pub const TARGET_SMOOTHING_K: usize = 8;
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPair {
    pub input: GraphInput,
    /// Reference value per node, in `[0, 1]`.
    pub reference: Vec<f64>,
    pub source: String,
}

impl TrainPair {
    pub fn validate(&self) -> Result<()> {
        self.input.validate()?;
        if self.reference.len() != self.input.nodes {
            return Err(Error::Contract(format!(
                "{} reference values for {} nodes",
                self.reference.len(),
                self.input.nodes
            )));
        }
        if !self.reference.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::Contract("reference values outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// Symmetrized `k`-nearest-neighbour graph over points, rows sorted.
pub fn knn_graph(points: &[Vec3], k: usize, cell: f64) -> Csr {
    let grid = PointGrid::from_points(points, cell);
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); points.len()];
    for (i, p) in points.iter().enumerate() {
        for (j, _) in grid.nearest(p, k + 1) {
            if j as usize != i {
                rows[i].push(j);
                rows[j as usize].push(i as u32);
            }
        }
    }
    for r in &mut rows {
        r.sort_unstable();
        r.dedup();
    }
    Csr::from_rows(rows)
}

/// Raw oracle values at sample points; unmeasured samples are filled from
/// their graph neighbours.
pub fn shdf_at_samples(
    mesh: &Mesh,
    accel: &RayAccel,
    positions: &[Vec3],
    host_faces: &[u32],
    neighbors: &Csr,
    params: &ShdfParams,
) -> Result<Vec<f64>> {
    params.validate()?;
    let offset = crate::shdf::SURFACE_OFFSET * mesh.rigid_extent();
    let raw: Vec<Option<f64>> = positions
        .par_iter()
        .zip(host_faces)
        .enumerate()
        .map(|(i, (p, &f))| {
            let [a, b, c] = mesh.triangle(f as usize);
            let n = (b - a).cross(&(c - a));
            if !(n.norm() > 0.0) {
                return None;
            }
            let site = RaySite::new(*p, n.normalize(), b - a, offset);
            shdf_at_point(accel, &site, params, &mut crate::shdf::element_rng(params.seed, i))
        })
        .collect();
    fill_unmeasured(&raw, neighbors, &vec![1.0; raw.len()])
}

/// Builds the (graph, target) pair for one mesh.
pub fn build_pair(mesh: &Mesh, radius: f64, params: &ShdfParams, seed: u64, source: &str) -> Result<TrainPair> {
    let samples = sample_surface(mesh, radius, seed)?;
    let input = build_graph_input(&samples, mesh)?;
    let knn = knn_graph(&samples.positions, TARGET_SMOOTHING_K, radius);
    let accel = RayAccel::build(mesh);
    let raw = shdf_at_samples(mesh, &accel, &samples.positions, &samples.host_faces, &knn, params)?;
    let field = ScalarField::new(FieldDomain::PerSample, FieldSource::Oracle, raw);
    let normalized = normalize_log(&field, params.normalization_alpha)?;
    let reference = smooth_bilateral(normalized.values(), &knn, params.smoothing_iterations, params.smoothing_sigma);
    let pair = TrainPair {
        input,
        reference,
        source: source.to_string(),
    };
    pair.validate()?;
    Ok(pair)
}

/// One pair per mesh, built in parallel; meshes that fail are skipped with a
/// warning. `radius = None` uses each mesh's default radius. The output
/// order is a seeded shuffle.
pub fn build_training_pairs(
    meshes: &[(Mesh, String)],
    radius: Option<f64>,
    params: &ShdfParams,
    seed: u64,
) -> Vec<TrainPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = meshes.iter().map(|_| rng.random()).collect();
    let built: Vec<Option<TrainPair>> = meshes
        .par_iter()
        .zip(&seeds)
        .map(|((mesh, source), &s)| {
            let r = radius.unwrap_or_else(|| default_radius(mesh));
            match build_pair(mesh, r, params, s, source) {
                Ok(p) => Some(p),
                Err(e) => {
                    warn!("skipping {source}: {e}");
                    None
                }
            }
        })
        .collect();
    let mut pairs: Vec<TrainPair> = built.into_iter().flatten().collect();
    pairs.shuffle(&mut rng);
    pairs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub pairs: Vec<String>,
    /// Free-form generation settings (deformations, radius, oracle params).
    pub generation: serde_json::Value,
}

/// Writes `pair_NNNN.json` files and `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, pairs: &[TrainPair], seed: u64, generation: serde_json::Value) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|source| Error::File {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut names = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let name = format!("pair_{i:04}.json");
        let path = dir.join(&name);
        fs::write(&path, serde_json::to_vec(p)?).map_err(|source| Error::File { path, source })?;
        names.push(name);
    }
    let manifest = DatasetManifest {
        version: FORMAT_VERSION,
        seed,
        pairs: names,
        generation,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|source| Error::File { path, source })?;
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<TrainPair>)> {
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read(&path).map_err(|source| Error::File { path, source })
    };
    let manifest: DatasetManifest = serde_json::from_slice(&read("manifest.json")?)?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Contract(format!("unsupported dataset version {}", manifest.version)));
    }
    let pairs = manifest
        .pairs
        .iter()
        .map(|name| {
            let p: TrainPair = serde_json::from_slice(&read(name)?)?;
            p.validate()?;
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, pairs))
}
