//! End-to-end segmentation: field computation with caching, partitioning,
//! recursive part refinement and parameter grid search.

mod grid;
mod session;

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::partition::{ParentLink, PartitionParams, Segmentation};
use crate::shdf::{FieldDomain, ScalarField, ShdfParams};

pub use grid::{grid_search, grid_search_field, silhouette_1d, GridMetric, GridPoint, GridReport};
pub use session::{compute_field, FieldKey, MeshSession, PartitionRun, SessionCache, StageCounters};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "path")]
pub enum ShdfSource {
    Oracle,
    Model(PathBuf),
}

/// Field used when segmenting an extracted part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RefineField {
    /// Compute a fresh field on the part as an open sub-mesh.
    #[default]
    Recompute,
    /// Restrict the parent field to the part.
    Reuse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub shdf_source: ShdfSource,
    pub shdf: ShdfParams,
    /// Poisson-disk radius for the model source; `None` uses the mesh default.
    pub sampling_radius: Option<f64>,
    pub partition: PartitionParams,
    pub max_refine_depth: u32,
    pub smooth: bool,
    pub refine_field: RefineField,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            shdf_source: ShdfSource::Oracle,
            shdf: ShdfParams::default(),
            sampling_radius: None,
            partition: PartitionParams::default(),
            max_refine_depth: 4,
            smooth: false,
            refine_field: RefineField::Recompute,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.shdf.validate()?;
        self.partition.validate()?;
        if let Some(r) = self.sampling_radius {
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::invalid("sampling_radius", "must be finite and positive"));
            }
        }
        if let ShdfSource::Model(path) = &self.shdf_source {
            if !path.is_file() {
                return Err(Error::invalid("shdf_source", format!("model file {} does not exist", path.display())));
            }
        }
        Ok(())
    }
}

/// Wall-clock breakdown of one run, milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub shdf_ms: f64,
    pub partition_ms: f64,
    pub refine_ms: f64,
    pub post_ms: f64,
    pub total_ms: f64,
}

impl Timings {
    pub fn stage_sum(&self) -> f64 {
        self.shdf_ms + self.partition_ms + self.refine_ms + self.post_ms
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRun {
    /// Deterministic id of the request within its session.
    pub key: String,
    pub segmentation: Segmentation,
    pub field_key: FieldKey,
    /// Whether the field came from the cache.
    pub field_cached: bool,
    pub timings: Timings,
}

/// Field (cached or computed), mixture fit, k-way cut and optional boundary
/// smoothing.
pub fn segment(session: &mut MeshSession, config: &PipelineConfig) -> Result<SegmentRun> {
    let start = Instant::now();
    config.validate()?;
    let t = Instant::now();
    let (field_key, field_cached) = session.field(&config.shdf_source, &config.shdf, config.sampling_radius)?;
    let shdf_ms = ms_since(t);
    let run = session.partition(&field_key, &config.partition, config.smooth)?;
    Ok(SegmentRun {
        key: run.key,
        segmentation: run.segmentation,
        field_key,
        field_cached,
        timings: Timings {
            shdf_ms,
            partition_ms: run.partition_ms,
            refine_ms: 0.0,
            post_ms: run.post_ms,
            total_ms: ms_since(start),
        },
    })
}

/// Re-segments one part as its own mesh and splices the result in. Child
/// part 0 keeps the refined part's id; further children are appended, so
/// every other label is unchanged.
pub fn refine_part(session: &mut MeshSession, seg: &Segmentation, part: u32, config: &PipelineConfig) -> Result<SegmentRun> {
    let start = Instant::now();
    config.validate()?;
    seg.validate()?;
    if seg.labels.len() != session.mesh().face_count() {
        return Err(Error::Contract("segmentation does not match the mesh".into()));
    }
    if part as usize >= seg.part_count {
        return Err(Error::invalid("part", format!("part {part} does not exist ({} parts)", seg.part_count)));
    }
    if seg.depth >= config.max_refine_depth {
        return Err(Error::RefinementDeclined(format!(
            "depth limit {} reached",
            config.max_refine_depth
        )));
    }
    let faces = seg.faces_of(part);
    let needed = config.partition.min_part_faces * config.partition.k;
    if faces.len() < needed {
        return Err(Error::RefinementDeclined(format!(
            "part {part} has {} faces; at least min_part_faces × k = {needed} are needed",
            faces.len()
        )));
    }

    let t = Instant::now();
    let (sub, _) = session.mesh().submesh(&faces);
    let mut child = MeshSession::new(sub).map_err(|e| e.in_stage("refine"))?;
    let field_key = match config.refine_field {
        RefineField::Recompute => {
            let (key, _) = child.field(&config.shdf_source, &config.shdf, config.sampling_radius)?;
            key
        }
        RefineField::Reuse => {
            let (parent_key, _) = session.field(&config.shdf_source, &config.shdf, config.sampling_radius)?;
            let parent = session.get_field(&parent_key).expect("field was just cached");
            let values: Vec<f64> = faces.iter().map(|&f| parent.values()[f]).collect();
            let mut restricted = ScalarField::new(FieldDomain::PerFace, parent.provenance, values);
            restricted.normalized = parent.normalized;
            child.insert_field(FieldKey::restricted(&parent_key, part), restricted)?
        }
    };
    let shdf_ms = ms_since(t);

    let run = child.partition(&field_key, &config.partition, config.smooth).map_err(|e| e.in_stage("refine"))?;
    let cut = run.segmentation;

    if cut.part_count < 2 {
        return Err(Error::RefinementDeclined(format!("part {part} did not split")));
    }
    let mut labels = seg.labels.clone();
    for (&f, &c) in faces.iter().zip(&cut.labels) {
        labels[f] = if c == 0 { part } else { seg.part_count as u32 + c - 1 };
    }
    let segmentation = Segmentation {
        labels,
        part_count: seg.part_count + cut.part_count - 1,
        params: config.partition.clone(),
        energy: cut.energy,
        depth: seg.depth + 1,
        parent: Some(ParentLink {
            segmentation: seg.id(),
            part,
        }),
    };
    let key = session::fnv_hex(format!("{}/refine/{part}/{}", seg.id(), run.key).as_bytes());
    session.insert_segmentation(key.clone(), segmentation.clone());
    Ok(SegmentRun {
        key,
        segmentation,
        field_key,
        field_cached: false,
        timings: Timings {
            shdf_ms,
            partition_ms: 0.0,
            refine_ms: run.partition_ms,
            post_ms: run.post_ms,
            total_ms: ms_since(start),
        },
    })
}

/// JSON log of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: PipelineConfig,
    pub timings: Timings,
    pub energy: Option<f64>,
    pub part_count: Option<usize>,
    pub artifacts: Vec<PathBuf>,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Segments a mesh in a fresh session.
pub fn segment_mesh(mesh: Mesh, config: &PipelineConfig) -> Result<SegmentRun> {
    let mut session = MeshSession::new(mesh)?;
    segment(&mut session, config)
}
