use proptest::prelude::*;

use shdfseg::mesh::face_geometry;
use shdfseg::partition::{partition_field, PartitionParams, Segmentation};
use shdfseg::pipeline::{
    grid_search, refine_part, segment, silhouette_1d, GridMetric, MeshSession, PipelineConfig, RefineField,
    SessionCache, ShdfSource,
};
use shdfseg::shapes::{self, Dumbbell};
use shdfseg::shdf::{FieldDomain, FieldSource, ScalarField};
use shdfseg::{Error, Mesh, Vec3};

fn config(k: usize) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.partition.k = k;
    c
}

fn dumbbell() -> Mesh {
    Dumbbell::default().build()
}

#[test]
fn second_call_with_new_k_reuses_the_field() {
    let mut s = MeshSession::new(dumbbell()).unwrap();
    let first = segment(&mut s, &config(2)).unwrap();
    assert!(!first.field_cached);
    let second = segment(&mut s, &config(3)).unwrap();
    assert!(second.field_cached);
    assert_eq!(second.field_key, first.field_key);
    assert_eq!(s.counters().shdf_computations, 1);
    assert!(second.timings.shdf_ms < 0.05 * first.timings.shdf_ms, "{:?} vs {:?}", second.timings, first.timings);
}

#[test]
fn cached_and_cold_paths_agree() {
    let mut warm = MeshSession::new(dumbbell()).unwrap();
    segment(&mut warm, &config(2)).unwrap();
    let mut c = config(3);
    c.partition.seed = 11;
    let hot = segment(&mut warm, &c).unwrap();
    let cold = segment(&mut MeshSession::new(dumbbell()).unwrap(), &c).unwrap();
    assert!(hot.field_cached && !cold.field_cached);
    assert_eq!(hot.segmentation, cold.segmentation);
    assert_eq!(hot.key, cold.key);
}

#[test]
fn k_one_is_a_single_part() {
    let mut s = MeshSession::new(shapes::icosphere(2)).unwrap();
    let run = segment(&mut s, &config(1)).unwrap();
    assert_eq!(run.segmentation.part_count, 1);
    assert!(run.segmentation.labels.iter().all(|&l| l == 0));
}

#[test]
fn dumbbell_lobes_separate_through_the_pipeline() {
    let shape = Dumbbell::default();
    let mesh = shape.build();
    let centroids = face_geometry(&mesh).centroids;
    let mut s = MeshSession::new(mesh).unwrap();
    let seg = segment(&mut s, &config(2)).unwrap().segmentation;
    let half = shape.neck_length / 2.0;
    let label_of = |sign: f64| {
        let mut ls: Vec<u32> = (0..centroids.len())
            .filter(|&f| sign * centroids[f].z > half + 0.2)
            .map(|f| seg.labels[f])
            .collect();
        ls.sort_unstable();
        ls.dedup();
        ls
    };
    let (top, bottom) = (label_of(1.0), label_of(-1.0));
    assert_eq!(top.len(), 1, "top lobe labels {top:?}");
    assert_eq!(bottom.len(), 1, "bottom lobe labels {bottom:?}");
    assert_ne!(top, bottom);
}

#[test]
fn stage_timings_sum_to_the_total() {
    let mut s = MeshSession::new(shapes::icosphere(3)).unwrap();
    let mut c = config(2);
    c.smooth = true;
    let t = segment(&mut s, &c).unwrap().timings;
    assert!(t.total_ms > 0.0);
    assert!((t.stage_sum() - t.total_ms).abs() <= 0.05 * t.total_ms, "{t:?}");
}

#[test]
fn stage_errors_name_the_stage() {
    let mut s = MeshSession::new(shapes::icosphere(1)).unwrap();
    let mut c = config(2);
    c.shdf_source = ShdfSource::Model("/nonexistent/model.bin".into());
    assert!(matches!(segment(&mut s, &c), Err(Error::InvalidParam { name: "shdf_source", .. })));
    let mut bad = MeshSession::new(shapes::icosphere(1)).unwrap();
    let err = bad.field(&ShdfSource::Model("/nonexistent/model.bin".into()), &Default::default(), None).unwrap_err();
    assert!(err.to_string().starts_with("shdf:"), "{err}");
}

// ---------------------------------------------------------------- refinement

fn halves(mesh: &Mesh) -> Segmentation {
    let labels: Vec<usize> = face_geometry(mesh).centroids.iter().map(|c| usize::from(c.z < 0.0)).collect();
    Segmentation::from_labels(&labels, PartitionParams::default(), 0.0)
}

#[test]
fn refinement_splices_children_and_leaves_the_rest() {
    let mesh = dumbbell();
    let seg = halves(&mesh);
    let mut s = MeshSession::new(mesh).unwrap();
    for policy in [RefineField::Recompute, RefineField::Reuse] {
        let mut c = config(2);
        c.refine_field = policy;
        let run = refine_part(&mut s, &seg, 0, &c).unwrap();
        let out = &run.segmentation;
        out.validate().unwrap();
        assert!(out.part_count > seg.part_count);
        let children: std::collections::BTreeSet<u32> =
            seg.faces_of(0).iter().map(|&f| out.labels[f]).collect();
        assert_eq!(out.part_count - seg.part_count, children.len() - 1, "{policy:?}");
        for f in seg.faces_of(1) {
            assert_eq!(out.labels[f], seg.labels[f]);
        }
        assert_eq!(out.depth, 1);
        assert_eq!(out.parent.as_ref().unwrap().segmentation, seg.id());
        assert_eq!(s.get_segmentation(&run.key), Some(out));
    }
}

#[test]
fn refinement_declines_small_parts_and_depth() {
    let mesh = shapes::icosphere(2);
    let n = mesh.face_count();
    let mut labels = vec![0usize; n];
    labels[..6].iter_mut().for_each(|l| *l = 1);
    let seg = Segmentation::from_labels(&labels, PartitionParams::default(), 0.0);
    let mut s = MeshSession::new(mesh).unwrap();
    let small = seg.labels[0];
    let err = refine_part(&mut s, &seg, small, &config(2)).unwrap_err();
    assert!(matches!(err, Error::RefinementDeclined(_)), "{err}");
    assert!(err.to_string().contains("min_part_faces"), "{err}");
    let mut deep = seg.clone();
    deep.depth = 4;
    assert!(matches!(refine_part(&mut s, &deep, 1 - small, &config(2)), Err(Error::RefinementDeclined(_))));
    assert!(matches!(refine_part(&mut s, &seg, 9, &config(2)), Err(Error::InvalidParam { name: "part", .. })));
}

/// Pushes vertices outward from `centre` near the surface point in direction
/// `dir`, forming a finger-like bump.
fn add_bump(mesh: &Mesh, centre: Vec3, dir: Vec3, height: f64, width: f64) -> Mesh {
    let dir = dir.normalize();
    mesh.map_vertices(|v| {
        let r = v - centre;
        let cos = r.normalize().dot(&dir);
        if cos <= 0.0 {
            return *v;
        }
        let ang = cos.min(1.0).acos();
        v + r.normalize() * height * (-(ang / width).powi(2)).exp()
    })
}

#[test]
fn refining_a_bumpy_lobe_separates_the_bumps() {
    let shape = Dumbbell {
        spacing: 0.04,
        segments: 96,
        ..Dumbbell::default()
    };
    let c = Vec3::new(0.0, 0.0, shape.lobe_center());
    let dirs = [Vec3::new(1.0, 0.0, 0.6), Vec3::new(-1.0, 0.0, 0.6)];
    let mut mesh = shape.build();
    for d in dirs {
        mesh = add_bump(&mesh, c, d, 0.9, 0.12);
    }
    let seg = halves(&mesh);
    let top = seg.labels[face_geometry(&mesh).centroids.iter().position(|p| p.z > 0.0).unwrap()];
    let centroids = face_geometry(&mesh).centroids;
    let mut s = MeshSession::new(mesh).unwrap();
    let out = refine_part(&mut s, &seg, top, &config(2)).unwrap().segmentation;
    let nearest = |p: Vec3| (0..centroids.len()).min_by(|&a, &b| (centroids[a] - p).norm().total_cmp(&(centroids[b] - p).norm())).unwrap();
    let body = out.labels[nearest(c + Vec3::new(0.0, 1.0, 0.0))];
    assert_eq!(out.labels[nearest(c + Vec3::new(0.0, -1.0, 0.0))], body);
    let tips: Vec<u32> = dirs.iter().map(|d| out.labels[nearest(c + d.normalize() * 1.9)]).collect();
    for &t in &tips {
        assert_ne!(t, body, "bump tip shares the body label");
    }
}

// ---------------------------------------------------------------- grid search

fn brute_silhouette(values: &[f64], labels: &[u32]) -> f64 {
    let groups: std::collections::BTreeSet<u32> = labels.iter().copied().collect();
    if groups.len() < 2 {
        return 0.0;
    }
    let n = values.len();
    let mut total = 0.0;
    for i in 0..n {
        let mean_to = |g: u32| {
            let (mut s, mut c) = (0.0, 0usize);
            for j in 0..n {
                if j != i && labels[j] == g {
                    s += (values[i] - values[j]).abs();
                    c += 1;
                }
            }
            (s, c)
        };
        let (sa, ca) = mean_to(labels[i]);
        if ca == 0 {
            continue;
        }
        let a = sa / ca as f64;
        let b = groups
            .iter()
            .filter(|&&g| g != labels[i])
            .map(|&g| {
                let (s, c) = mean_to(g);
                s / c as f64
            })
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

proptest! {
    #[test]
    fn silhouette_matches_brute_force(data in prop::collection::vec((0.0f64..1.0, 0u32..4), 1..40)) {
        let (values, labels): (Vec<f64>, Vec<u32>) = data.into_iter().unzip();
        let fast = silhouette_1d(&values, &labels);
        let slow = brute_silhouette(&values, &labels);
        prop_assert!((fast - slow).abs() <= 1e-9, "{} vs {}", fast, slow);
    }
}

#[test]
fn one_point_grid_ranks_that_point_first() {
    let mut s = MeshSession::new(dumbbell()).unwrap();
    let report = grid_search(&mut s, &config(2), &[2], &[1.0], GridMetric::Energy).unwrap();
    assert_eq!(report.points.len(), 1);
    assert_eq!(report.points[0].rank, 1);
    assert_eq!((report.points[0].k, report.points[0].lambda_smooth), (2, 1.0));
    assert!(grid_search(&mut s, &config(2), &[], &[1.0], GridMetric::Energy).is_err());
}

/// Three lobes with values in three separated bands, split at the necks.
fn three_band_session() -> (MeshSession, shdfseg::pipeline::FieldKey) {
    let mesh = shapes::tri_lobe([1.0, 1.0, 1.0], 0.3, 1.0, 32, 0.1);
    let centroids = face_geometry(&mesh).centroids;
    let b = mesh.bounds();
    let (lo, span) = (b.min.z, b.extent().z);
    let values: Vec<f64> = centroids
        .iter()
        .enumerate()
        .map(|(f, p)| {
            let band = ((p.z - lo) / span * 3.0).floor().clamp(0.0, 2.0);
            0.15 + 0.35 * band + 0.02 * ((f * 7919 % 13) as f64 / 13.0 - 0.5)
        })
        .collect();
    let mut s = MeshSession::new(mesh).unwrap();
    let field = ScalarField::normalized(FieldDomain::PerFace, FieldSource::Oracle, values).unwrap();
    let key = s.insert_field(shdfseg::pipeline::FieldKey("bands".into()), field).unwrap();
    (s, key)
}

#[test]
fn silhouette_ranks_the_true_cluster_count_first() {
    let (mut s, key) = three_band_session();
    let mut c = config(2);
    c.shdf_source = ShdfSource::Oracle;
    let values = s.field_values(&key).unwrap().to_vec();
    let dual = s.dual(2.0);
    let report = shdfseg::pipeline::grid_search_field(&mut s, &key, &c, &[2, 3, 4], &[1.0], GridMetric::Silhouette).unwrap();
    assert_eq!(report.points[0].k, 3, "{:?}", report.points.iter().map(|p| (p.k, p.silhouette)).collect::<Vec<_>>());
    let two = report.points.iter().find(|p| p.k == 2).unwrap();
    assert!(report.points[0].silhouette > two.silhouette);
    let seg3 = partition_field(&dual, &values, &PartitionParams { k: 3, ..PartitionParams::default() }).unwrap();
    assert_eq!(seg3.report.segmentation.part_count, 3);
    assert_eq!(s.counters().shdf_computations, 0);
}

#[test]
fn grid_search_is_exhaustive_and_computes_the_field_once() {
    let mut s = MeshSession::new(dumbbell()).unwrap();
    let ks = [1, 2, 3];
    let lambdas = [0.5, 1.0, 4.0];
    let c = config(2);
    for metric in [GridMetric::Energy, GridMetric::Silhouette] {
        let report = grid_search(&mut s, &c, &ks, &lambdas, metric).unwrap();
        assert_eq!(report.points.len(), 9);
        let (key, _) = s.field(&c.shdf_source, &c.shdf, None).unwrap();
        let values = s.field_values(&key).unwrap().to_vec();
        let dual = s.dual(c.partition.concavity_bias);
        let mut best: Option<(f64, usize, f64)> = None;
        for &k in &ks {
            for &lambda_smooth in &lambdas {
                let params = PartitionParams {
                    k,
                    lambda_smooth,
                    ..c.partition.clone()
                };
                let seg = partition_field(&dual, &values, &params).unwrap().report.segmentation;
                let score = match metric {
                    GridMetric::Energy => seg.energy / seg.labels.len() as f64,
                    GridMetric::Silhouette => -brute_silhouette(&values, &seg.labels),
                };
                if best.is_none_or(|b| score < b.0) {
                    best = Some((score, k, lambda_smooth));
                }
            }
        }
        let (_, k, lambda) = best.unwrap();
        let top = &report.points[0];
        assert_eq!((top.k, top.lambda_smooth), (k, lambda), "{metric:?}");
        assert!(report.points.windows(2).all(|w| w[0].rank + 1 == w[1].rank));
    }
    assert_eq!(s.counters().shdf_computations, 1);
}

#[test]
fn session_cache_ids_are_unique_and_removable() {
    let cache: SessionCache = SessionCache::new();
    let session = || std::sync::Mutex::new(MeshSession::new(shapes::unit_cube()).unwrap());
    let a = cache.insert(session());
    let b = cache.insert(session());
    assert_ne!(a, b);
    assert!(cache.get(&a).is_some());
    assert!(cache.remove(&a).is_some());
    assert!(cache.get(&a).is_none());
    assert!(cache.remove(&a).is_none());
    let c = cache.insert(session());
    assert!(c != a && c != b);
    assert_eq!(cache.len(), 2);
    assert_eq!(cache.ids(), vec![b.clone(), c.clone()]);
}

#[test]
fn restored_ids_are_never_reissued() {
    let cache: SessionCache<u32> = SessionCache::new();
    cache.restore("m000007", 7).unwrap();
    assert!(cache.restore("m000007", 8).is_err());
    assert!(cache.restore("x1", 1).is_err());
    let next = cache.insert_with(|id| id.len() as u32);
    assert_eq!(next, "m000008");
    assert_eq!(*cache.get(&next).unwrap(), 7);
    cache.restore("m000002", 2).unwrap();
    assert_eq!(cache.insert(0), "m000009");
}
