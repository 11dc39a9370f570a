use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use shdfseg::emd::{EmdModel, ModelConfig};
use shdfseg::mesh::{write_obj, write_ply, Mesh, PlyEncoding, PlyExtras};
use shdfseg::shapes::{self, Dumbbell};
use shdfseg_service::store::Store;
use shdfseg_service::{router, ServiceConfig};

fn app() -> Router {
    router(Store::in_memory(), ServiceConfig::default()).unwrap()
}

fn dumbbell() -> Mesh {
    Dumbbell {
        segments: 16,
        spacing: 0.2,
        ..Dumbbell::default()
    }
    .build()
}

async fn send(app: &Router, method: Method, uri: &str, body: impl Into<Body>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).body(body.into()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn call(app: &Router, method: Method, uri: &str, body: Value) -> (StatusCode, Value) {
    let bytes = if body.is_null() { Vec::new() } else { body.to_string().into_bytes() };
    let (status, out) = send(app, method, uri, bytes).await;
    let doc = if out.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&out).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&out).into()))
    };
    (status, doc)
}

async fn upload(app: &Router, mesh: &Mesh) -> String {
    let (status, out) = send(app, Method::POST, "/meshes", write_obj(mesh)).await;
    assert_eq!(status, StatusCode::CREATED);
    let doc: Value = serde_json::from_slice(&out).unwrap();
    doc["id"].as_str().unwrap().to_string()
}

async fn shdf(app: &Router, id: &str, body: Value) -> String {
    let (status, doc) = call(app, Method::POST, &format!("/meshes/{id}/shdf"), body).await;
    assert_eq!(status, StatusCode::OK, "{doc}");
    doc["field_id"].as_str().unwrap().to_string()
}

fn without_elapsed(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("elapsed_ms");
    v
}

#[tokio::test]
async fn healthz_and_cors() {
    let app = app();
    let (status, body) = send(&app, Method::GET, "/healthz", Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"ok");

    let req = Request::builder()
        .method(Method::OPTIONS)
        .uri("/meshes")
        .header("origin", "http://localhost:5173")
        .header("access-control-request-method", "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");

    let strict = router(
        Store::in_memory(),
        ServiceConfig {
            cors_origin: Some("http://viewer.local".into()),
            ..ServiceConfig::default()
        },
    )
    .unwrap();
    let req = Request::builder()
        .uri("/healthz")
        .header("origin", "http://viewer.local")
        .body(Body::empty())
        .unwrap();
    let resp = strict.oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "http://viewer.local");
}

#[tokio::test]
async fn upload_geometry_round_trip() {
    let app = app();
    let mesh = dumbbell();
    let id = upload(&app, &mesh).await;
    let (status, geo) = call(&app, Method::GET, &format!("/meshes/{id}/geometry"), Value::Null).await;
    assert_eq!(status, StatusCode::OK);
    let faces: Vec<u32> = serde_json::from_value(geo["faces"].clone()).unwrap();
    let expected: Vec<u32> = mesh.faces().iter().flatten().copied().collect();
    assert_eq!(faces, expected);
    let positions: Vec<f64> = serde_json::from_value(geo["positions"].clone()).unwrap();
    assert_eq!(positions.len(), 3 * mesh.vertex_count());
    assert_eq!(positions[3], mesh.vertices()[1].x);

    let ply = write_ply(&mesh, PlyEncoding::BinaryLittleEndian, PlyExtras::default());
    let (status, out) = send(&app, Method::POST, "/meshes", ply).await;
    assert_eq!(status, StatusCode::CREATED);
    let doc: Value = serde_json::from_slice(&out).unwrap();
    assert_ne!(doc["id"].as_str().unwrap(), id);
    assert_eq!(doc["vertex_count"], mesh.vertex_count());
    assert_eq!(doc["face_count"], mesh.face_count());
    assert_eq!(doc["manifold"]["is_closed"], true);

    let (status, list) = call(&app, Method::GET, "/meshes", Value::Null).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list["ids"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn unknown_ids_are_not_found() {
    let app = app();
    for (method, uri) in [
        (Method::GET, "/meshes/m999999"),
        (Method::GET, "/meshes/m999999/geometry"),
        (Method::POST, "/meshes/m999999/shdf"),
        (Method::POST, "/meshes/m999999/segment"),
        (Method::POST, "/meshes/nope/segments/x/refine"),
        (Method::DELETE, "/meshes/m999999"),
    ] {
        let (status, doc) = call(&app, method.clone(), uri, Value::Null).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{method} {uri}");
        assert_eq!(doc, json!({ "error": "unknown mesh" }), "{method} {uri}");
    }

    let id = upload(&app, &shapes::unit_cube()).await;
    let (status, doc) = call(&app, Method::GET, &format!("/meshes/{id}/fields/abc"), Value::Null).await;
    assert_eq!((status, doc), (StatusCode::NOT_FOUND, json!({ "error": "unknown field" })));
    let (status, doc) = call(&app, Method::POST, &format!("/meshes/{id}/segment"), json!({ "field_id": "abc" })).await;
    assert_eq!((status, doc), (StatusCode::NOT_FOUND, json!({ "error": "unknown field" })));
    let (status, doc) = call(&app, Method::POST, &format!("/meshes/{id}/segments/zz/refine"), json!({ "part": 0 })).await;
    assert_eq!((status, doc), (StatusCode::NOT_FOUND, json!({ "error": "unknown segmentation" })));

    let (status, _) = call(&app, Method::DELETE, &format!("/meshes/{id}"), Value::Null).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, doc) = call(&app, Method::GET, &format!("/meshes/{id}/geometry"), Value::Null).await;
    assert_eq!((status, doc), (StatusCode::NOT_FOUND, json!({ "error": "unknown mesh" })));
}

#[tokio::test]
async fn invalid_parameters_are_reported_per_field() {
    let app = app();
    let id = upload(&app, &dumbbell()).await;
    let shdf_uri = format!("/meshes/{id}/shdf");
    let seg_uri = format!("/meshes/{id}/segment");

    let (status, doc) = call(&app, Method::POST, &shdf_uri, json!({ "params": { "rays_per_point": 0 } })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(doc["fields"]["params.rays_per_point"].is_string(), "{doc}");

    let body = json!({ "source": "model", "params": { "cone_half_angle": "wide", "typo": 1 }, "colour": 3 });
    let (status, doc) = call(&app, Method::POST, &shdf_uri, body).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let fields: Vec<&String> = doc["fields"].as_object().unwrap().keys().collect();
    assert_eq!(fields, ["colour", "params.cone_half_angle", "params.typo", "source"]);

    let (status, doc) = call(&app, Method::POST, &shdf_uri, json!({ "source": "magic" })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(doc["fields"]["source"].as_str().unwrap().contains("magic"));

    let fid = shdf(&app, &id, json!({ "params": { "rays_per_point": 12 } })).await;
    let (status, doc) = call(&app, Method::POST, &seg_uri, json!({ "k": 2 })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(doc["fields"]["field_id"], "required");

    let (status, doc) = call(&app, Method::POST, &seg_uri, json!({ "field_id": fid, "k": 0 })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(doc["fields"]["k"].is_string(), "{doc}");

    let body = json!({ "field_id": fid, "lambda_smooth": "x", "smooth_boundaries": 1, "bogus": true });
    let (status, doc) = call(&app, Method::POST, &seg_uri, body).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let fields: Vec<&String> = doc["fields"].as_object().unwrap().keys().collect();
    assert_eq!(fields, ["bogus", "lambda_smooth", "smooth_boundaries"]);

    let (status, _) = send(&app, Method::POST, &seg_uri, "{not json").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, out) = send(&app, Method::POST, "/meshes", "v 0 0 0\nf 1 2 3\n").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let doc: Value = serde_json::from_slice(&out).unwrap();
    assert!(doc["fields"]["body"].is_string(), "{doc}");
}

#[tokio::test]
async fn oversized_upload_is_rejected() {
    let app = router(
        Store::in_memory(),
        ServiceConfig {
            upload_limit: 4096,
            ..ServiceConfig::default()
        },
    )
    .unwrap();
    let (status, _) = send(&app, Method::POST, "/meshes", write_obj(&dumbbell())).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    let (status, _) = send(&app, Method::POST, "/meshes", write_obj(&shapes::unit_cube())).await;
    assert_eq!(status, StatusCode::CREATED);
}

#[tokio::test]
async fn segment_reuses_the_field() {
    let app = app();
    let mesh = dumbbell();
    let id = upload(&app, &mesh).await;
    let (status, first) = call(&app, Method::POST, &format!("/meshes/{id}/shdf"), json!({})).await;
    assert_eq!(status, StatusCode::OK);
    let fid = first["field_id"].as_str().unwrap();
    assert_eq!(first["stats"]["count"], mesh.face_count());
    let shdf_ms = first["elapsed_ms"].as_f64().unwrap();

    let seg_uri = format!("/meshes/{id}/segment");
    let (status, a) = call(&app, Method::POST, &seg_uri, json!({ "field_id": fid, "k": 3, "seed": 1 })).await;
    assert_eq!(status, StatusCode::OK, "{a}");
    let labels: Vec<u32> = serde_json::from_value(a["labels"].clone()).unwrap();
    assert_eq!(labels.len(), mesh.face_count());
    // Parts are connected, so one mixture component may yield several parts.
    let parts = a["part_count"].as_u64().unwrap() as u32;
    assert!(parts >= 3);
    assert!(labels.iter().all(|&l| l < parts));
    assert!((0..parts).all(|p| labels.contains(&p)));

    let (status, b) = call(&app, Method::POST, &seg_uri, json!({ "field_id": fid, "k": 2, "seed": 1 })).await;
    assert_eq!(status, StatusCode::OK);
    assert!(b["elapsed_ms"].as_f64().unwrap() < shdf_ms, "{} vs {shdf_ms}", b["elapsed_ms"]);
    assert_ne!(a["seg_id"], b["seg_id"]);

    let (_, info) = call(&app, Method::GET, &format!("/meshes/{id}"), Value::Null).await;
    assert_eq!(info["stats"]["shdf_computations"], 1);
    assert_eq!(info["segments"].as_array().unwrap().len(), 2);

    let (_, field) = call(&app, Method::GET, &format!("/meshes/{id}/fields/{fid}"), Value::Null).await;
    assert_eq!(field["values"].as_array().unwrap().len(), mesh.face_count());
    assert_eq!(field["source"]["kind"], "oracle");

    let seg_id = a["seg_id"].as_str().unwrap();
    let (status, bytes) = send(&app, Method::GET, &format!("/meshes/{id}/segments/{seg_id}/labels"), Body::empty()).await;
    assert_eq!(status, StatusCode::OK);
    let binary: Vec<u32> = bytes.chunks(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
    assert_eq!(binary, labels);
    let (_, stored) = call(&app, Method::GET, &format!("/meshes/{id}/segments/{seg_id}"), Value::Null).await;
    assert_eq!(stored, without_elapsed(a));
}

#[tokio::test]
async fn responses_repeat_exactly_apart_from_timing() {
    let app = app();
    let id = upload(&app, &dumbbell()).await;
    let body = json!({ "params": { "rays_per_point": 12, "seed": 4 } });
    let (_, a) = call(&app, Method::POST, &format!("/meshes/{id}/shdf"), body.clone()).await;
    let (_, b) = call(&app, Method::POST, &format!("/meshes/{id}/shdf"), body).await;
    assert_eq!(without_elapsed(a.clone()), without_elapsed(b));
    let fid = a["field_id"].clone();

    let seg = json!({ "field_id": fid, "k": 2, "lambda_smooth": 0.5, "smooth_boundaries": true, "seed": 3 });
    let uri = format!("/meshes/{id}/segment");
    let (_, a) = call(&app, Method::POST, &uri, seg.clone()).await;
    let (_, b) = call(&app, Method::POST, &uri, seg.clone()).await;
    assert_eq!(without_elapsed(a.clone()), without_elapsed(b));

    // A second server computes the same thing from scratch.
    let other = self::app();
    let id2 = upload(&other, &dumbbell()).await;
    let fid2 = shdf(&other, &id2, json!({ "params": { "rays_per_point": 12, "seed": 4 } })).await;
    assert_eq!(fid2, fid.as_str().unwrap());
    let (_, c) = call(&other, Method::POST, &format!("/meshes/{id2}/segment"), seg).await;
    let strip = |v: Value| {
        let mut v = without_elapsed(v);
        v.as_object_mut().unwrap().remove("labels_url");
        v
    };
    assert_eq!(strip(a), strip(c));
}

#[tokio::test]
async fn concurrent_requests_on_one_mesh_agree() {
    let app = app();
    let id = upload(&app, &dumbbell()).await;
    let fid = shdf(&app, &id, json!({ "params": { "rays_per_point": 12 } })).await;
    let uri = format!("/meshes/{id}/segment");
    let mut tasks = Vec::new();
    for _ in 0..4 {
        let (app, uri, fid) = (app.clone(), uri.clone(), fid.clone());
        tasks.push(tokio::spawn(async move {
            let (s, doc) = call(&app, Method::POST, &uri, json!({ "field_id": fid, "k": 2 })).await;
            assert_eq!(s, StatusCode::OK);
            without_elapsed(doc)
        }));
    }
    let geo = call(&app, Method::GET, &format!("/meshes/{id}/geometry"), Value::Null).await;
    assert_eq!(geo.0, StatusCode::OK);
    let mut results = Vec::new();
    for t in tasks {
        results.push(t.await.unwrap());
    }
    assert!(results.windows(2).all(|w| w[0] == w[1]));
    let (_, info) = call(&app, Method::GET, &format!("/meshes/{id}"), Value::Null).await;
    assert_eq!(info["stats"]["partitions"], 1);
}

#[tokio::test]
async fn refine_splits_one_part() {
    let app = app();
    let mesh = dumbbell();
    let id = upload(&app, &mesh).await;
    let fid = shdf(&app, &id, json!({ "params": { "rays_per_point": 12 } })).await;
    let (_, whole) = call(&app, Method::POST, &format!("/meshes/{id}/segment"), json!({ "field_id": fid, "k": 1 })).await;
    assert_eq!(whole["part_count"], 1);
    let seg_id = whole["seg_id"].as_str().unwrap();
    let uri = format!("/meshes/{id}/segments/{seg_id}/refine");

    for reuse in [false, true] {
        let (status, doc) = call(&app, Method::POST, &uri, json!({ "part": 0, "k": 2, "reuse_field": reuse })).await;
        assert_eq!(status, StatusCode::OK, "{doc}");
        assert!(doc["part_count"].as_u64().unwrap() >= 2);
        assert_eq!(doc["depth"], 1);
        assert_eq!(doc["parent"]["part"], 0);
        assert_eq!(doc["field_id"], fid.as_str());
        assert_eq!(doc["labels"].as_array().unwrap().len(), mesh.face_count());
    }

    let (status, doc) = call(&app, Method::POST, &uri, json!({ "part": 5 })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(doc["fields"]["part"].is_string());
    let (status, doc) = call(&app, Method::POST, &uri, json!({ "part": 0, "min_part_faces": 100000 })).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(doc["error"].as_str().unwrap().contains("declined"));
    let (status, doc) = call(&app, Method::POST, &uri, json!({})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(doc["fields"]["part"], "required");
}

#[tokio::test]
async fn model_source_uses_the_configured_model() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.bin");
    let config = ModelConfig {
        width: 8,
        rounds: 1,
        ..ModelConfig::default()
    };
    EmdModel::new(config, 1).save(&model).unwrap();
    let app = router(
        Store::in_memory(),
        ServiceConfig {
            model: Some(model),
            ..ServiceConfig::default()
        },
    )
    .unwrap();
    let mesh = dumbbell();
    let id = upload(&app, &mesh).await;
    let oracle = shdf(&app, &id, json!({ "params": { "rays_per_point": 8 } })).await;
    let learned = shdf(&app, &id, json!({ "source": "model", "radius": 0.3 })).await;
    assert_ne!(oracle, learned);
    let (_, field) = call(&app, Method::GET, &format!("/meshes/{id}/fields/{learned}"), Value::Null).await;
    assert_eq!(field["source"]["kind"], "model");
    assert_eq!(field["values"].as_array().unwrap().len(), mesh.face_count());
    let (status, doc) = call(&app, Method::POST, &format!("/meshes/{id}/shdf"), json!({ "source": "model", "radius": -1 })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(doc["fields"]["radius"].is_string());
}

#[tokio::test]
async fn persistent_store_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let mesh = dumbbell();
    let (id, fid, seg) = {
        let app = router(Store::persistent(root.clone()).unwrap(), ServiceConfig::default()).unwrap();
        let id = upload(&app, &mesh).await;
        let fid = shdf(&app, &id, json!({ "params": { "rays_per_point": 12 } })).await;
        let (_, seg) = call(&app, Method::POST, &format!("/meshes/{id}/segment"), json!({ "field_id": fid, "k": 2 })).await;
        (id, fid, without_elapsed(seg))
    };
    assert!(root.join(&id).join("mesh.obj").is_file());

    let app = router(Store::persistent(root.clone()).unwrap(), ServiceConfig::default()).unwrap();
    let (status, info) = call(&app, Method::GET, &format!("/meshes/{id}"), Value::Null).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(info["fields"], json!([fid]));
    assert_eq!(info["face_count"], mesh.face_count());
    let (_, geo) = call(&app, Method::GET, &format!("/meshes/{id}/geometry"), Value::Null).await;
    let faces: Vec<u32> = serde_json::from_value(geo["faces"].clone()).unwrap();
    assert_eq!(faces, mesh.faces().iter().flatten().copied().collect::<Vec<_>>());

    let seg_id = seg["seg_id"].as_str().unwrap();
    let (_, stored) = call(&app, Method::GET, &format!("/meshes/{id}/segments/{seg_id}"), Value::Null).await;
    assert_eq!(stored, seg);
    let again = shdf(&app, &id, json!({ "params": { "rays_per_point": 12 } })).await;
    assert_eq!(again, fid);
    let (_, info) = call(&app, Method::GET, &format!("/meshes/{id}"), Value::Null).await;
    assert_eq!(info["stats"]["shdf_computations"], 0);

    let new_id = upload(&app, &shapes::unit_cube()).await;
    assert!(new_id > id);
    let (status, _) = call(&app, Method::DELETE, &format!("/meshes/{id}"), Value::Null).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    assert!(!root.join(&id).exists());
}
