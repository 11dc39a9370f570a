use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ms_since, ShdfSource};
use crate::emd::{infer_field, EmdModel};
use crate::error::{Error, Result};
use crate::mesh::{Adjacency, Mesh};
use crate::partition::{build_dual_graph, partition_field, smooth_boundaries, DualGraph, PartitionParams, Segmentation};
use crate::sampler::default_radius;
use crate::shdf::{compute_shdf_field, normalize_log, smooth_anisotropic, RayAccel, ScalarField, ShdfParams};

pub(crate) fn fnv_hex(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Identifies a cached field by a hash of everything that determines it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FieldKey(pub String);

impl FieldKey {
    pub(crate) fn restricted(parent: &FieldKey, part: u32) -> FieldKey {
        FieldKey(fnv_hex(format!("{}/part/{part}", parent.0).as_bytes()))
    }
}

impl fmt::Display for FieldKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageCounters {
    pub shdf_computations: usize,
    pub field_cache_hits: usize,
    pub partitions: usize,
    pub partition_cache_hits: usize,
}

/// Result of [`MeshSession::partition`].
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionRun {
    /// Deterministic id of (field, params, smoothing).
    pub key: String,
    pub segmentation: Segmentation,
    pub cached: bool,
    pub partition_ms: f64,
    pub post_ms: f64,
}

/// One mesh with its adjacency and everything computed from it.
#[derive(Debug)]
pub struct MeshSession {
    mesh: Mesh,
    adjacency: Adjacency,
    fields: HashMap<FieldKey, Arc<ScalarField>>,
    duals: HashMap<u64, Arc<DualGraph>>,
    segmentations: HashMap<String, Segmentation>,
    counters: StageCounters,
}

/// Normalized, smoothed per-face field from the oracle or a trained model.
pub fn compute_field(
    mesh: &Mesh,
    adjacency: &Adjacency,
    source: &ShdfSource,
    params: &ShdfParams,
    radius: Option<f64>,
) -> Result<ScalarField> {
    let field = match source {
        ShdfSource::Oracle => {
            let accel = RayAccel::build(mesh);
            let raw = compute_shdf_field(mesh, &accel, params)?;
            normalize_log(&raw, params.normalization_alpha)?
        }
        ShdfSource::Model(path) => {
            let model = EmdModel::load(path)?;
            infer_field(&model, mesh, radius.unwrap_or_else(|| default_radius(mesh)), params.seed)?
        }
    };
    Ok(smooth_anisotropic(&field, adjacency, params.smoothing_iterations, params.smoothing_sigma))
}

impl MeshSession {
    pub fn new(mesh: Mesh) -> Result<MeshSession> {
        if mesh.face_count() == 0 {
            return Err(Error::Structural("mesh has no faces".into()));
        }
        let adjacency = Adjacency::build(&mesh)?;
        Ok(MeshSession {
            mesh,
            adjacency,
            fields: HashMap::new(),
            duals: HashMap::new(),
            segmentations: HashMap::new(),
            counters: StageCounters::default(),
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn counters(&self) -> StageCounters {
        self.counters
    }

    fn field_key(source: &ShdfSource, params: &ShdfParams, radius: Option<f64>) -> Result<FieldKey> {
        let model = match source {
            ShdfSource::Oracle => None,
            ShdfSource::Model(path) => {
                let bytes = std::fs::read(path).map_err(|source| Error::File {
                    path: path.clone(),
                    source,
                })?;
                Some(fnv_hex(&bytes))
            }
        };
        let radius = match source {
            ShdfSource::Oracle => None,
            ShdfSource::Model(_) => radius,
        };
        let desc = json!({ "source": source, "model": model, "params": params, "radius": radius });
        Ok(FieldKey(fnv_hex(desc.to_string().as_bytes())))
    }

    /// Key of the requested field, computing it on a cache miss. The flag is
    /// true on a hit.
    pub fn field(&mut self, source: &ShdfSource, params: &ShdfParams, radius: Option<f64>) -> Result<(FieldKey, bool)> {
        params.validate()?;
        let key = Self::field_key(source, params, radius).map_err(|e| e.in_stage("shdf"))?;
        if self.fields.contains_key(&key) {
            self.counters.field_cache_hits += 1;
            return Ok((key, true));
        }
        let field = compute_field(&self.mesh, &self.adjacency, source, params, radius).map_err(|e| e.in_stage("shdf"))?;
        self.counters.shdf_computations += 1;
        self.fields.insert(key.clone(), Arc::new(field));
        Ok((key, false))
    }

    /// Stores an externally produced per-face field.
    pub fn insert_field(&mut self, key: FieldKey, field: ScalarField) -> Result<FieldKey> {
        if field.len() != self.mesh.face_count() {
            return Err(Error::Contract(format!(
                "{} field values for {} faces",
                field.len(),
                self.mesh.face_count()
            )));
        }
        self.fields.insert(key.clone(), Arc::new(field));
        Ok(key)
    }

    pub fn get_field(&self, key: &FieldKey) -> Option<Arc<ScalarField>> {
        self.fields.get(key).cloned()
    }

    pub fn field_values(&self, key: &FieldKey) -> Option<&[f64]> {
        self.fields.get(key).map(|f| f.values())
    }

    /// Dual graph for a concavity bias, built once per bias.
    pub fn dual(&mut self, concavity_bias: f64) -> Arc<DualGraph> {
        let (mesh, adjacency) = (&self.mesh, &self.adjacency);
        self.duals
            .entry(concavity_bias.to_bits())
            .or_insert_with(|| Arc::new(build_dual_graph(mesh, adjacency, concavity_bias)))
            .clone()
    }

    pub fn segmentation_key(field: &FieldKey, params: &PartitionParams, smooth: bool) -> String {
        let desc = json!({ "field": field, "params": params, "smooth": smooth });
        fnv_hex(desc.to_string().as_bytes())
    }

    /// Partitions a cached field, reusing an earlier identical request.
    pub fn partition(&mut self, field: &FieldKey, params: &PartitionParams, smooth: bool) -> Result<PartitionRun> {
        params.validate()?;
        let key = Self::segmentation_key(field, params, smooth);
        if let Some(seg) = self.segmentations.get(&key) {
            self.counters.partition_cache_hits += 1;
            return Ok(PartitionRun {
                key,
                segmentation: seg.clone(),
                cached: true,
                partition_ms: 0.0,
                post_ms: 0.0,
            });
        }
        let values = self
            .fields
            .get(field)
            .ok_or_else(|| Error::Contract(format!("unknown field {field}")))?
            .clone();
        let t = Instant::now();
        let dual = self.dual(params.concavity_bias);
        let outcome = partition_field(&dual, values.values(), params).map_err(|e| e.in_stage("partition"))?;
        let partition_ms = ms_since(t);
        let t = Instant::now();
        let mut segmentation = outcome.report.segmentation;
        if smooth {
            segmentation =
                smooth_boundaries(&self.mesh, &self.adjacency, &segmentation, params).map_err(|e| e.in_stage("post"))?;
        }
        let post_ms = ms_since(t);
        self.counters.partitions += 1;
        self.segmentations.insert(key.clone(), segmentation.clone());
        Ok(PartitionRun {
            key,
            segmentation,
            cached: false,
            partition_ms,
            post_ms,
        })
    }

    pub fn get_segmentation(&self, key: &str) -> Option<&Segmentation> {
        self.segmentations.get(key)
    }

    pub fn insert_segmentation(&mut self, key: String, seg: Segmentation) {
        self.segmentations.insert(key, seg);
    }
}

/// Process-wide store of per-mesh entries, by default a locked
/// [`MeshSession`]. Each entry is shared behind an `Arc`, so work on one
/// mesh never blocks another.
#[derive(Debug)]
pub struct SessionCache<T = Mutex<MeshSession>> {
    entries: Mutex<HashMap<String, Arc<T>>>,
    next: AtomicU64,
}

impl<T> Default for SessionCache<T> {
    fn default() -> Self {
        SessionCache {
            entries: Mutex::new(HashMap::new()),
            next: AtomicU64::new(0),
        }
    }
}

impl<T> SessionCache<T> {
    pub fn new() -> SessionCache<T> {
        SessionCache::default()
    }

    /// Registers an entry under a fresh id, unique for the cache's lifetime.
    pub fn insert(&self, entry: T) -> String {
        self.insert_with(|_| entry)
    }

    /// Like [`insert`](Self::insert), but the entry is built from its id.
    pub fn insert_with(&self, build: impl FnOnce(&str) -> T) -> String {
        let n = self.next.fetch_add(1, Ordering::Relaxed);
        let id = format!("m{n:06}");
        let entry = Arc::new(build(&id));
        self.lock().insert(id.clone(), entry);
        id
    }

    /// Re-registers an entry under an id issued by an earlier cache, for
    /// example one reloaded from disk. Later ids continue after it.
    pub fn restore(&self, id: &str, entry: T) -> Result<()> {
        let n: u64 = id
            .strip_prefix('m')
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| Error::invalid("id", format!("`{id}` is not a session id")))?;
        let mut map = self.lock();
        if map.contains_key(id) {
            return Err(Error::invalid("id", format!("`{id}` is already registered")));
        }
        self.next.fetch_max(n + 1, Ordering::Relaxed);
        map.insert(id.to_string(), Arc::new(entry));
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<Arc<T>> {
        self.lock().get(id).cloned()
    }

    pub fn remove(&self, id: &str) -> Option<Arc<T>> {
        self.lock().remove(id)
    }

    /// Registered ids in ascending order.
    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.lock().keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<String, Arc<T>>> {
        self.entries.lock().unwrap_or_else(|p| p.into_inner())
    }
}
