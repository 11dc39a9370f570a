//! Mesh resources and their optional on-disk mirror.
//!
//! Layout under the data directory, one directory per mesh id:
//! `mesh.obj`, `meta.json`, `fields/<field_id>.json`, `segments/<seg_id>.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::json;

use shdfseg::mesh::{load_mesh_file, validate_manifold, write_obj, ManifoldReport, Mesh};
use shdfseg::partition::Segmentation;
use shdfseg::pipeline::{FieldKey, MeshSession, SessionCache, ShdfSource};
use shdfseg::shdf::{ScalarField, ShdfParams};

/// Everything that determines a field; enough to recompute it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub source: ShdfSource,
    pub params: ShdfParams,
    pub radius: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FieldEntry {
    pub spec: FieldSpec,
    pub field: Arc<ScalarField>,
}

#[derive(Debug, Clone)]
pub struct SegEntry {
    pub field_id: String,
    pub segmentation: Arc<Segmentation>,
}

/// One uploaded mesh. Geometry and finished artifacts are readable without
/// touching `session`, whose lock serializes all computation on the mesh.
#[derive(Debug)]
pub struct Resource {
    pub id: String,
    pub created_unix_ms: u64,
    pub mesh: Arc<Mesh>,
    pub manifold: ManifoldReport,
    session: Mutex<MeshSession>,
    fields: RwLock<BTreeMap<String, FieldEntry>>,
    segments: RwLock<BTreeMap<String, SegEntry>>,
    dir: Option<PathBuf>,
    deleted: AtomicBool,
}

fn read<T>(l: &RwLock<T>) -> std::sync::RwLockReadGuard<'_, T> {
    l.read().unwrap_or_else(|p| p.into_inner())
}

fn write<T>(l: &RwLock<T>) -> std::sync::RwLockWriteGuard<'_, T> {
    l.write().unwrap_or_else(|p| p.into_inner())
}

/// Write-then-rename so a crash never leaves a truncated file behind.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))
}

impl Resource {
    fn new(id: &str, session: MeshSession, created_unix_ms: u64, root: Option<&Path>) -> Resource {
        let mesh = Arc::new(session.mesh().clone());
        Resource {
            id: id.to_string(),
            created_unix_ms,
            manifold: validate_manifold(&mesh),
            mesh,
            session: Mutex::new(session),
            fields: RwLock::new(BTreeMap::new()),
            segments: RwLock::new(BTreeMap::new()),
            dir: root.map(|r| r.join(id)),
            deleted: AtomicBool::new(false),
        }
    }

    /// Exclusive access for computation. Persistence also happens under
    /// this lock, so a concurrent delete cannot race a write.
    pub fn lock(&self) -> MutexGuard<'_, MeshSession> {
        self.session.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn field(&self, id: &str) -> Option<FieldEntry> {
        read(&self.fields).get(id).cloned()
    }

    pub fn segment(&self, id: &str) -> Option<SegEntry> {
        read(&self.segments).get(id).cloned()
    }

    pub fn field_ids(&self) -> Vec<String> {
        read(&self.fields).keys().cloned().collect()
    }

    pub fn segment_ids(&self) -> Vec<String> {
        read(&self.segments).keys().cloned().collect()
    }

    /// Publishes a field held by `session` and mirrors it to disk.
    pub fn publish_field(&self, session: &MeshSession, key: &FieldKey, spec: FieldSpec) -> Result<FieldEntry> {
        let field = session.get_field(key).context("field missing from session")?;
        let entry = FieldEntry { spec, field };
        let fresh = write(&self.fields).insert(key.0.clone(), entry.clone()).is_none();
        if fresh {
            if let Some(dir) = self.live_dir() {
                let doc = json!({ "spec": entry.spec, "field": *entry.field });
                write_atomic(&dir.join("fields").join(format!("{key}.json")), doc.to_string().as_bytes())?;
            }
        }
        Ok(entry)
    }

    pub fn publish_segment(&self, seg_id: &str, field_id: &str, segmentation: Segmentation) -> Result<SegEntry> {
        let entry = SegEntry {
            field_id: field_id.to_string(),
            segmentation: Arc::new(segmentation),
        };
        let fresh = write(&self.segments).insert(seg_id.to_string(), entry.clone()).is_none();
        if fresh {
            if let Some(dir) = self.live_dir() {
                let seg: serde_json::Value = serde_json::from_str(&entry.segmentation.to_json())?;
                let doc = json!({ "field_id": field_id, "segmentation": seg });
                write_atomic(&dir.join("segments").join(format!("{seg_id}.json")), doc.to_string().as_bytes())?;
            }
        }
        Ok(entry)
    }

    fn live_dir(&self) -> Option<&Path> {
        self.dir.as_deref().filter(|_| !self.deleted.load(Ordering::SeqCst))
    }

    fn save_new(&self) -> Result<()> {
        if let Some(dir) = &self.dir {
            std::fs::create_dir_all(dir.join("fields"))?;
            std::fs::create_dir_all(dir.join("segments"))?;
            write_atomic(&dir.join("mesh.obj"), write_obj(&self.mesh).as_bytes())?;
            let meta = json!({ "created_unix_ms": self.created_unix_ms });
            write_atomic(&dir.join("meta.json"), meta.to_string().as_bytes())?;
        }
        Ok(())
    }

    fn load(root: &Path, id: &str) -> Result<Resource> {
        let dir = root.join(id);
        let mesh = load_mesh_file(&dir.join("mesh.obj"))?;
        let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("meta.json"))?)?;
        let created = meta["created_unix_ms"].as_u64().unwrap_or(0);
        let res = Resource::new(id, MeshSession::new(mesh)?, created, Some(root));
        {
            let mut session = res.lock();
            for (fid, doc) in json_files(&dir.join("fields"))? {
                let spec: FieldSpec = serde_json::from_value(doc["spec"].clone())?;
                let field = ScalarField::from_json(&doc["field"].to_string())?;
                let key = session.insert_field(FieldKey(fid.clone()), field)?;
                res.publish_field(&session, &key, spec)?;
            }
            for (sid, doc) in json_files(&dir.join("segments"))? {
                let field_id = doc["field_id"].as_str().context("segment without field_id")?.to_string();
                let seg = Segmentation::from_json(&doc["segmentation"].to_string())?;
                session.insert_segmentation(sid.clone(), seg.clone());
                res.publish_segment(&sid, &field_id, seg)?;
            }
        }
        Ok(res)
    }
}

fn json_files(dir: &Path) -> Result<Vec<(String, serde_json::Value)>> {
    let mut out = Vec::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            let stem = path.file_stem().and_then(|s| s.to_str()).context("bad file name")?.to_string();
            let doc = serde_json::from_slice(&std::fs::read(&path)?)
                .with_context(|| format!("parsing {}", path.display()))?;
            out.push((stem, doc));
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// All live resources, with ids unique for the process lifetime.
#[derive(Debug, Default)]
pub struct Store {
    cache: SessionCache<Resource>,
    root: Option<PathBuf>,
}

impl Store {
    pub fn in_memory() -> Store {
        Store::default()
    }

    /// Store mirrored to `root`; meshes already there are reloaded. Entries
    /// that fail to load are skipped with a warning.
    pub fn persistent(root: PathBuf) -> Result<Store> {
        std::fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
        let store = Store {
            cache: SessionCache::new(),
            root: Some(root.clone()),
        };
        let mut ids: Vec<String> = std::fs::read_dir(&root)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        ids.sort();
        for id in ids {
            match Resource::load(&root, &id) {
                Ok(res) => store.cache.restore(&id, res)?,
                Err(e) => warn!("skipping stored mesh {id}: {e:#}"),
            }
        }
        Ok(store)
    }

    pub fn create(&self, session: MeshSession) -> Result<Arc<Resource>> {
        let created = now_ms();
        let root = self.root.as_deref();
        let id = self.cache.insert_with(|id| Resource::new(id, session, created, root));
        let res = self.cache.get(&id).expect("just inserted");
        if let Err(e) = res.save_new() {
            self.cache.remove(&id);
            return Err(e);
        }
        Ok(res)
    }

    pub fn get(&self, id: &str) -> Option<Arc<Resource>> {
        self.cache.get(id)
    }

    /// Waits for in-flight work on the mesh, then drops it and its files.
    pub fn remove(&self, id: &str) -> Result<bool> {
        let Some(res) = self.cache.remove(id) else {
            return Ok(false);
        };
        let _guard = res.lock();
        res.deleted.store(true, Ordering::SeqCst);
        if let Some(dir) = &res.dir {
            if dir.exists() {
                std::fs::remove_dir_all(dir).with_context(|| format!("removing {}", dir.display()))?;
            }
        }
        Ok(true)
    }

    pub fn ids(&self) -> Vec<String> {
        self.cache.ids()
    }
}
