use shdfseg::dataset::{
    build_training_pairs, generate_variants, read_dataset, remesh_perturb, tessellate, write_dataset, DeformSpec,
    DeformTemplate, RbfHandle,
};
use shdfseg::mesh::{face_geometry, validate_manifold, Adjacency};
use shdfseg::shapes;
use shdfseg::shdf::ShdfParams;
use shdfseg::stats::pearson;
use shdfseg::{Mesh, Vec3};

/// Closest-point distance from `p` to triangle `abc` (Ericson's region test).
fn point_triangle_distance(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let (ab, ac, ap) = (b - a, c - a, p - a);
    let (d1, d2) = (ab.dot(&ap), ac.dot(&ap));
    if d1 <= 0.0 && d2 <= 0.0 {
        return (p - a).norm();
    }
    let bp = p - b;
    let (d3, d4) = (ab.dot(&bp), ac.dot(&bp));
    if d3 >= 0.0 && d4 <= d3 {
        return (p - b).norm();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return (p - (a + ab * (d1 / (d1 - d3)))).norm();
    }
    let cp = p - c;
    let (d5, d6) = (ab.dot(&cp), ac.dot(&cp));
    if d6 >= 0.0 && d5 <= d6 {
        return (p - c).norm();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return (p - (a + ac * (d2 / (d2 - d6)))).norm();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && d4 - d3 >= 0.0 && d5 - d6 >= 0.0 {
        return (p - (b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6))))).norm();
    }
    let denom = 1.0 / (va + vb + vc);
    (p - (a + ab * (vb * denom) + ac * (vc * denom))).norm()
}

fn distance_to_mesh(p: Vec3, m: &Mesh) -> f64 {
    (0..m.face_count())
        .map(|f| {
            let [a, b, c] = m.triangle(f);
            point_triangle_distance(p, a, b, c)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Symmetric Hausdorff estimate over vertices, edge midpoints and centroids.
fn hausdorff(a: &Mesh, b: &Mesh) -> f64 {
    let probes = |m: &Mesh| {
        let mut pts = m.vertices().to_vec();
        for f in 0..m.face_count() {
            let [x, y, z] = m.triangle(f);
            pts.extend([(x + y + z) / 3.0, (x + y) * 0.5, (y + z) * 0.5, (z + x) * 0.5]);
        }
        pts
    };
    let one = |from: &Mesh, to: &Mesh| probes(from).into_iter().map(|p| distance_to_mesh(p, to)).fold(0.0, f64::max);
    one(a, b).max(one(b, a))
}

fn mean_edge_length(m: &Mesh) -> f64 {
    let adj = Adjacency::build(m).unwrap();
    let e = adj.edges();
    e.iter()
        .map(|e| (m.vertices()[e.vertices.0 as usize] - m.vertices()[e.vertices.1 as usize]).norm())
        .sum::<f64>()
        / e.len() as f64
}

#[test]
fn zero_displacement_is_identity() {
    let base = shapes::icosphere(2);
    let spec = DeformSpec {
        handles: vec![RbfHandle {
            center: [0.0, 0.0, 1.0],
            radius: 0.5,
            displacement: [0.0; 3],
            falloff: 2.0,
        }],
        bends: vec![],
        seed: 0,
    };
    assert_eq!(spec.apply(&base).unwrap(), base);
    assert_eq!(DeformSpec::default().apply(&base).unwrap(), base);
}

#[test]
fn variants_keep_connectivity_and_differ() {
    let base = shapes::icosphere(3);
    let variants = generate_variants(&base, &DeformTemplate::default(), 10, 7).unwrap();
    assert_eq!(variants.len(), 10);
    let limit = 0.3 * base.diagonal();
    for (m, _) in &variants {
        assert_eq!(m.faces(), base.faces());
        assert_eq!(m.vertex_count(), base.vertex_count());
        assert!(m.vertices().iter().zip(base.vertices()).all(|(a, b)| (a - b).norm() <= limit));
    }
    for i in 0..variants.len() {
        for j in i + 1..variants.len() {
            let (a, b) = (&variants[i].0, &variants[j].0);
            let mean = a.vertices().iter().zip(b.vertices()).map(|(p, q)| (p - q).norm()).sum::<f64>()
                / a.vertex_count() as f64;
            assert!(mean > 0.0, "variants {i} and {j} coincide");
        }
    }
    let again = generate_variants(&base, &DeformTemplate::default(), 10, 7).unwrap();
    assert_eq!(variants, again);
}

#[test]
fn overly_large_template_is_rejected() {
    let t = DeformTemplate {
        max_displacement: 0.5,
        ..DeformTemplate::default()
    };
    assert!(generate_variants(&shapes::icosphere(1), &t, 1, 0).is_err());
}

#[test]
fn tessellation_counts() {
    let tri = Mesh::new(
        vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
        vec![[0, 1, 2]],
    )
    .unwrap();
    assert_eq!(tessellate(&tri, 1).face_count(), 4);
    let cube = shapes::unit_cube();
    assert_eq!(tessellate(&cube, 0), cube);
    assert_eq!(tessellate(&cube, 2).face_count(), 192);
}

#[test]
fn tessellation_keeps_the_surface() {
    let base = shapes::icosphere(1);
    let fine = tessellate(&base, 2);
    assert_eq!(&fine.vertices()[..base.vertex_count()], base.vertices());
    for v in fine.vertices() {
        assert!(distance_to_mesh(*v, &base) < 1e-12);
    }
    let (a, b) = (face_geometry(&base).total_area(), face_geometry(&fine).total_area());
    assert!((a - b).abs() < 1e-12 * a);
    let report = validate_manifold(&fine);
    assert!(report.is_closed && report.non_manifold_edge_count == 0);
    assert_eq!(report.euler_characteristic, 2);
}

#[test]
fn remesh_identity_without_perturbation() {
    let m = shapes::icosphere(2);
    assert_eq!(remesh_perturb(&m, 0.0, 0.0, 3).unwrap(), m);
}

#[test]
fn remesh_preserves_manifoldness() {
    let open = shapes::grid_plane(8, 8, 1.0, 1.0);
    for (m, seed) in [
        (shapes::icosphere(3), 1u64),
        (shapes::torus(2.0, 0.6, 24, 12), 2),
        (shapes::unit_cube(), 3),
        (open.clone(), 4),
    ] {
        let before = validate_manifold(&m);
        let out = remesh_perturb(&m, 0.3, 0.5, seed).unwrap();
        let after = validate_manifold(&out);
        assert_eq!(after.is_closed, before.is_closed);
        assert_eq!(after.non_manifold_edge_count, 0);
        assert_eq!(after.boundary_edge_count, before.boundary_edge_count);
        assert_eq!(after.euler_characteristic, before.euler_characteristic);
        assert!(Adjacency::build(&out).is_ok());
        assert!(face_geometry(&out).degenerate.iter().all(|d| !d));
        if before.is_closed {
            assert!(out.signed_volume() > 0.0);
        }
    }
    let flipped = remesh_perturb(&open, 0.0, 1.0, 9).unwrap();
    assert_ne!(flipped.faces(), open.faces());
}

#[test]
fn jittered_icosphere_stays_close() {
    let m = shapes::icosphere(2);
    let out = remesh_perturb(&m, 0.2, 0.0, 5).unwrap();
    let h = hausdorff(&m, &out);
    let bound = 0.25 * mean_edge_length(&m);
    assert!(h > 0.0 && h < bound, "hausdorff {h} bound {bound}");
}

#[test]
fn remesh_rejects_bad_parameters() {
    let m = shapes::icosphere(1);
    assert!(remesh_perturb(&m, 0.5, 0.0, 0).is_err());
    assert!(remesh_perturb(&m, 0.1, 1.5, 0).is_err());
}

fn fast_params() -> ShdfParams {
    ShdfParams {
        rays_per_point: 16,
        ..ShdfParams::default()
    }
}

#[test]
fn pairs_match_node_counts_and_range() {
    let base = shapes::Dumbbell::default().build();
    let meshes: Vec<(Mesh, String)> = generate_variants(&base, &DeformTemplate::default(), 3, 1)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, (m, _))| (m, format!("variant {i}")))
        .collect();
    let pairs = build_training_pairs(&meshes, None, &fast_params(), 11);
    assert_eq!(pairs.len(), 3);
    for p in &pairs {
        assert_eq!(p.input.nodes, p.reference.len());
        assert!(p.reference.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        assert!(p.input.node_features.iter().all(|v| v.is_finite()));
    }
    assert_eq!(pairs, build_training_pairs(&meshes, None, &fast_params(), 11));
    assert!(build_training_pairs(&[], None, &fast_params(), 0).is_empty());
}

#[test]
fn tessellated_copy_gives_correlated_targets() {
    let base = shapes::Dumbbell::default().build();
    let fine = tessellate(&base, 1);
    assert_eq!(fine.face_count(), 4 * base.face_count());
    let r = shdfseg::sampler::default_radius(&base);
    let pairs = build_training_pairs(&[(base, "base".into()), (fine, "fine".into())], Some(r), &fast_params(), 2);
    let (a, b) = if pairs[0].source == "base" { (&pairs[0], &pairs[1]) } else { (&pairs[1], &pairs[0]) };
    let matched: Vec<f64> = (0..a.input.nodes)
        .map(|i| {
            let p = a.input.position(i);
            let j = (0..b.input.nodes)
                .min_by(|&x, &y| (b.input.position(x) - p).norm().total_cmp(&(b.input.position(y) - p).norm()))
                .unwrap();
            b.reference[j]
        })
        .collect();
    let r = pearson(&a.reference, &matched);
    assert!(r >= 0.9, "pearson {r}");
}

#[test]
fn dataset_directory_round_trip() {
    let meshes = vec![(shapes::icosphere(2), "sphere".to_string())];
    let pairs = build_training_pairs(&meshes, Some(0.3), &fast_params(), 4);
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(dir.path(), &pairs, 4, serde_json::json!({"radius": 0.3})).unwrap();
    let (m2, back) = read_dataset(dir.path()).unwrap();
    assert_eq!(manifest, m2);
    assert_eq!(back, pairs);
}
