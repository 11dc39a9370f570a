//! HTTP API for interactive segmentation: upload a mesh once, compute its
//! field once, then partition and refine it as often as needed.
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/meshes` | OBJ or PLY bytes |
//! | GET | `/meshes` | |
//! | GET | `/meshes/{id}` | |
//! | DELETE | `/meshes/{id}` | |
//! | GET | `/meshes/{id}/geometry` | |
//! | POST | `/meshes/{id}/shdf` | `{source, params, radius}` |
//! | GET | `/meshes/{id}/fields/{field_id}` | |
//! | POST | `/meshes/{id}/segment` | `{field_id, smooth_boundaries, k, lambda_smooth, seed, ...}` |
//! | GET | `/meshes/{id}/segments/{seg_id}` | |
//! | GET | `/meshes/{id}/segments/{seg_id}/labels` | little-endian `u32` per face |
//! | POST | `/meshes/{id}/segments/{seg_id}/refine` | `{part, reuse_field, smooth_boundaries, k, ...}` |
//! | GET | `/healthz` | |

pub mod params;
pub mod store;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::info;
use serde_json::{json, Map, Value};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use shdfseg::mesh::{load_mesh, MeshFormat};
use shdfseg::partition::{PartitionParams, Segmentation};
use shdfseg::pipeline::{refine_part, FieldKey, MeshSession, PipelineConfig, RefineField, ShdfSource};
use shdfseg::shdf::ShdfParams;
use shdfseg::Error;

use params::FieldErrors;
use store::{FieldSpec, Resource, Store};

/// Segmentations with more faces than this omit `labels` from JSON; the
/// binary labels endpoint serves them instead.
pub const INLINE_LABEL_LIMIT: usize = 2_000_000;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Largest accepted request body, bytes.
    pub upload_limit: usize,
    /// Model used when a request asks for `"source": "model"`.
    pub model: Option<PathBuf>,
    /// Allowed CORS origin; any origin when unset.
    pub cors_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            upload_limit: 256 << 20,
            model: None,
            cors_origin: None,
        }
    }
}

#[derive(Debug)]
pub struct AppState {
    pub store: Store,
    pub config: ServiceConfig,
}

type Shared = Arc<AppState>;

pub fn router(store: Store, config: ServiceConfig) -> anyhow::Result<Router> {
    let cors = match &config.cors_origin {
        Some(o) => CorsLayer::new().allow_origin(AllowOrigin::exact(HeaderValue::from_str(o)?)),
        None => CorsLayer::new().allow_origin(Any),
    }
    .allow_methods(Any)
    .allow_headers(Any);
    let limit = config.upload_limit;
    let state = Arc::new(AppState { store, config });
    Ok(Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/meshes", post(create_mesh).get(list_meshes))
        .route("/meshes/{id}", get(mesh_info).delete(delete_mesh))
        .route("/meshes/{id}/geometry", get(geometry))
        .route("/meshes/{id}/shdf", post(compute_shdf))
        .route("/meshes/{id}/fields/{field_id}", get(get_field))
        .route("/meshes/{id}/segment", post(segment))
        .route("/meshes/{id}/segments/{seg_id}", get(get_segment))
        .route("/meshes/{id}/segments/{seg_id}/labels", get(get_labels))
        .route("/meshes/{id}/segments/{seg_id}/refine", post(refine))
        .layer(DefaultBodyLimit::max(limit))
        .layer(cors)
        .with_state(state))
}

/// JSON error response: `{"error": ...}` plus `fields` for 422s.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> ApiError {
        ApiError {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    fn not_found(what: &str) -> ApiError {
        ApiError::new(StatusCode::NOT_FOUND, format!("unknown {what}"))
    }

    fn fields(errors: FieldErrors) -> ApiError {
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body: json!({ "error": "invalid parameters", "fields": errors }),
        }
    }

    fn field(name: &str, message: impl Into<String>) -> ApiError {
        ApiError::fields(FieldErrors::from([(name.to_string(), message.into())]))
    }

    fn internal(e: impl std::fmt::Display) -> ApiError {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> ApiError {
        let message = e.to_string();
        let mut root = &e;
        while let Error::Stage { source, .. } = root {
            root = source;
        }
        match root {
            Error::InvalidParam { name, message } => ApiError::field(name, message.clone()),
            Error::RefinementDeclined(_) => ApiError::new(StatusCode::CONFLICT, message),
            Error::Parse { .. }
            | Error::Structural(_)
            | Error::NonManifold { .. }
            | Error::Contract(_)
            | Error::Domain(_)
            | Error::Field(_)
            | Error::Inference(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, message),
            _ => ApiError::internal(message),
        }
    }
}

impl From<anyhow::Error> for ApiError {
    fn from(e: anyhow::Error) -> ApiError {
        match e.downcast::<Error>() {
            Ok(e) => e.into(),
            Err(e) => ApiError::internal(format!("{e:#}")),
        }
    }
}

impl From<BytesRejection> for ApiError {
    fn from(r: BytesRejection) -> ApiError {
        ApiError::new(r.status(), r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn resource(state: &AppState, id: &str) -> ApiResult<Arc<Resource>> {
    state.store.get(id).ok_or_else(|| ApiError::not_found("mesh"))
}

fn json_body(body: Result<Bytes, BytesRejection>) -> ApiResult<Map<String, Value>> {
    params::object(&body?).map_err(|m| ApiError::new(StatusCode::BAD_REQUEST, m))
}

fn unknown_keys(obj: &Map<String, Value>, errors: &mut FieldErrors) {
    for k in obj.keys() {
        errors.insert(k.clone(), "unknown field".into());
    }
}

/// Runs CPU-bound work off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn mesh_summary(res: &Resource) -> Value {
    json!({
        "id": res.id,
        "vertex_count": res.mesh.vertex_count(),
        "face_count": res.mesh.face_count(),
        "manifold": res.manifold,
    })
}

async fn create_mesh(State(state): State<Shared>, body: Result<Bytes, BytesRejection>) -> ApiResult<Response> {
    let bytes = body?;
    let res = blocking(move || {
        let format = if bytes.starts_with(b"ply") { MeshFormat::Ply } else { MeshFormat::Obj };
        let mesh = load_mesh(&bytes, format).map_err(|e| ApiError::field("body", e.to_string()))?;
        let session = MeshSession::new(mesh).map_err(|e| ApiError::field("body", e.to_string()))?;
        Ok(state.store.create(session)?)
    })
    .await?;
    info!("mesh {} uploaded: {} faces", res.id, res.mesh.face_count());
    Ok((StatusCode::CREATED, Json(mesh_summary(&res))).into_response())
}

async fn list_meshes(State(state): State<Shared>) -> Json<Value> {
    Json(json!({ "ids": state.store.ids() }))
}

async fn mesh_info(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let res = resource(&state, &id)?;
    let counters = {
        let res = res.clone();
        blocking(move || Ok(res.lock().counters())).await?
    };
    let mut doc = mesh_summary(&res);
    doc["created_unix_ms"] = json!(res.created_unix_ms);
    doc["stats"] = json!(counters);
    doc["fields"] = json!(res.field_ids());
    doc["segments"] = json!(res.segment_ids());
    Ok(Json(doc))
}

async fn delete_mesh(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    let removed = blocking(move || Ok(state.store.remove(&id)?)).await?;
    if removed {
        Ok(StatusCode::NO_CONTENT)
    } else {
        Err(ApiError::not_found("mesh"))
    }
}

async fn geometry(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let res = resource(&state, &id)?;
    let positions: Vec<f64> = res.mesh.vertices().iter().flat_map(|v| [v.x, v.y, v.z]).collect();
    let faces: Vec<u32> = res.mesh.faces().iter().flatten().copied().collect();
    Ok(Json(json!({ "positions": positions, "faces": faces })))
}

async fn compute_shdf(
    State(state): State<Shared>,
    Path(id): Path<String>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<Json<Value>> {
    let res = resource(&state, &id)?;
    let mut obj = json_body(body)?;
    let mut errors = FieldErrors::new();
    let source = match params::take::<String>(&mut obj, "source", &mut errors).as_deref() {
        None | Some("oracle") => Some(ShdfSource::Oracle),
        Some("model") => match &state.config.model {
            Some(p) => Some(ShdfSource::Model(p.clone())),
            None => {
                errors.insert("source".into(), "no model is configured on this server".into());
                None
            }
        },
        Some(other) => {
            errors.insert("source".into(), format!("expected `oracle` or `model`, got `{other}`"));
            None
        }
    };
    let patch = params::take::<Map<String, Value>>(&mut obj, "params", &mut errors).unwrap_or_default();
    let shdf = params::overlay(&ShdfParams::default(), &patch, "params.", &mut errors);
    let radius = params::take::<f64>(&mut obj, "radius", &mut errors);
    unknown_keys(&obj, &mut errors);
    let (Some(source), Some(shdf), true) = (source, shdf, errors.is_empty()) else {
        return Err(ApiError::fields(errors));
    };
    if let Err(Error::InvalidParam { name, message }) = shdf.validate() {
        return Err(ApiError::field(&format!("params.{name}"), message));
    }
    if let Some(r) = radius.filter(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(ApiError::field("radius", format!("must be finite and > 0, got {r}")));
    }

    let start = Instant::now();
    let entry = blocking(move || {
        let mut session = res.lock();
        let (key, _) = session.field(&source, &shdf, radius)?;
        let spec = FieldSpec {
            source,
            params: shdf,
            radius,
        };
        Ok((key.clone(), res.publish_field(&session, &key, spec)?))
    })
    .await?;
    let (key, entry) = entry;
    let values = entry.field.values();
    let (min, max) = entry.field.min_max();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(Json(json!({
        "field_id": key,
        "stats": { "min": min, "max": max, "mean": mean, "count": values.len() },
        "elapsed_ms": elapsed_ms(start),
    })))
}

async fn get_field(State(state): State<Shared>, Path((id, field_id)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    let res = resource(&state, &id)?;
    let entry = res.field(&field_id).ok_or_else(|| ApiError::not_found("field"))?;
    Ok(Json(json!({
        "field_id": field_id,
        "source": entry.spec.source,
        "params": entry.spec.params,
        "radius": entry.spec.radius,
        "values": entry.field.values(),
    })))
}

fn seg_payload(mesh_id: &str, seg_id: &str, field_id: &str, seg: &Segmentation, elapsed: Option<f64>) -> Value {
    let inline = seg.labels.len() <= INLINE_LABEL_LIMIT;
    let mut doc = json!({
        "seg_id": seg_id,
        "field_id": field_id,
        "labels": if inline { json!(seg.labels) } else { Value::Null },
        "labels_url": format!("/meshes/{mesh_id}/segments/{seg_id}/labels"),
        "part_count": seg.part_count,
        "energy": seg.energy,
        "params": seg.params,
        "depth": seg.depth,
        "parent": seg.parent,
    });
    if let Some(ms) = elapsed {
        doc["elapsed_ms"] = json!(ms);
    }
    doc
}

/// Partition keys at the top level of `obj`, over the defaults.
fn partition_params(obj: &Map<String, Value>, errors: &mut FieldErrors) -> Option<PartitionParams> {
    let p = params::overlay(&PartitionParams::default(), obj, "", errors)?;
    match p.validate() {
        Ok(()) => Some(p),
        Err(Error::InvalidParam { name, message }) => {
            errors.insert(name.to_string(), message);
            None
        }
        Err(e) => {
            errors.insert("params".into(), e.to_string());
            None
        }
    }
}

async fn segment(
    State(state): State<Shared>,
    Path(id): Path<String>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<Json<Value>> {
    let res = resource(&state, &id)?;
    let mut obj = json_body(body)?;
    let mut errors = FieldErrors::new();
    let field_id: Option<String> = params::require(&mut obj, "field_id", &mut errors);
    let smooth = params::take(&mut obj, "smooth_boundaries", &mut errors).unwrap_or(false);
    let partition = partition_params(&obj, &mut errors);
    let (Some(field_id), Some(partition), true) = (field_id, partition, errors.is_empty()) else {
        return Err(ApiError::fields(errors));
    };
    if res.field(&field_id).is_none() {
        return Err(ApiError::not_found("field"));
    }

    let start = Instant::now();
    let mesh_id = id.clone();
    let (seg_id, entry) = blocking(move || {
        let mut session = res.lock();
        let run = session.partition(&FieldKey(field_id.clone()), &partition, smooth)?;
        let entry = res.publish_segment(&run.key, &field_id, run.segmentation)?;
        Ok((run.key, entry))
    })
    .await?;
    Ok(Json(seg_payload(
        &mesh_id,
        &seg_id,
        &entry.field_id,
        &entry.segmentation,
        Some(elapsed_ms(start)),
    )))
}

async fn get_segment(State(state): State<Shared>, Path((id, seg_id)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    let res = resource(&state, &id)?;
    let entry = res.segment(&seg_id).ok_or_else(|| ApiError::not_found("segmentation"))?;
    Ok(Json(seg_payload(&id, &seg_id, &entry.field_id, &entry.segmentation, None)))
}

async fn get_labels(State(state): State<Shared>, Path((id, seg_id)): Path<(String, String)>) -> ApiResult<Response> {
    let res = resource(&state, &id)?;
    let entry = res.segment(&seg_id).ok_or_else(|| ApiError::not_found("segmentation"))?;
    let bytes: Vec<u8> = entry.segmentation.labels.iter().flat_map(|l| l.to_le_bytes()).collect();
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}

async fn refine(
    State(state): State<Shared>,
    Path((id, seg_id)): Path<(String, String)>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<Json<Value>> {
    let res = resource(&state, &id)?;
    let mut obj = json_body(body)?;
    let mut errors = FieldErrors::new();
    let part: Option<u32> = params::require(&mut obj, "part", &mut errors);
    let smooth = params::take(&mut obj, "smooth_boundaries", &mut errors).unwrap_or(false);
    let reuse = params::take(&mut obj, "reuse_field", &mut errors).unwrap_or(false);
    let partition = partition_params(&obj, &mut errors);
    let (Some(part), Some(partition), true) = (part, partition, errors.is_empty()) else {
        return Err(ApiError::fields(errors));
    };
    let parent = res.segment(&seg_id).ok_or_else(|| ApiError::not_found("segmentation"))?;
    let spec = res
        .field(&parent.field_id)
        .ok_or_else(|| ApiError::internal("segmentation refers to a missing field"))?
        .spec;
    let config = PipelineConfig {
        shdf_source: spec.source,
        shdf: spec.params,
        sampling_radius: spec.radius,
        partition,
        smooth,
        refine_field: if reuse { RefineField::Reuse } else { RefineField::Recompute },
        ..PipelineConfig::default()
    };

    let start = Instant::now();
    let mesh_id = id.clone();
    let (new_id, entry) = blocking(move || {
        let mut session = res.lock();
        let run = refine_part(&mut session, &parent.segmentation, part, &config)?;
        let entry = res.publish_segment(&run.key, &parent.field_id, run.segmentation)?;
        Ok((run.key, entry))
    })
    .await?;
    Ok(Json(seg_payload(
        &mesh_id,
        &new_id,
        &entry.field_id,
        &entry.segmentation,
        Some(elapsed_ms(start)),
    )))
}
