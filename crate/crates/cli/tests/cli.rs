use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use shdfseg::mesh::write_obj;
use shdfseg::shapes::Dumbbell;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_shdfseg"));
    c.env_remove("SEG_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn shdfseg")
}

fn ok(args: &[&str]) -> Vec<u8> {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_dumbbell(dir: &Path) -> PathBuf {
    let m = Dumbbell {
        segments: 12,
        spacing: 0.25,
        ..Dumbbell::default()
    }
    .build();
    let p = dir.join("dumbbell.obj");
    std::fs::write(&p, write_obj(&m)).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["shdf", "sample", "train", "infer", "segment", "refine", "grid-search", "gen-data", "bench"] {
        assert!(text.contains(sub), "help lacks {sub}");
    }
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["segment", "--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    let out = run(&["segment", "x.obj", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("Usage"), "{}", stderr(&out));
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["grid-search", "x.obj"]).status.code(), Some(1));
    assert_eq!(run(&["segment", "x.obj", "--k", "two"]).status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_two_and_name_the_problem() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.obj");
    let out = run(&["segment", s(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope.obj"), "{}", stderr(&out));

    let mesh = small_dumbbell(dir.path());
    let out = run(&["segment", s(&mesh), "--k", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains('k'), "{}", stderr(&out));

    let out = run(&["shdf", s(&mesh), "--rays", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("rays_per_point"), "{}", stderr(&out));

    let bad = dir.path().join("bad.obj");
    std::fs::write(&bad, "v 0 0 0\nv 1 0 0\nf 1 2 3\n").unwrap();
    let out = run(&["shdf", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bad.obj"), "{}", stderr(&out));

    let out = run(&["segment", s(&mesh), "--model", s(&dir.path().join("none.bin"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("shdf_source"), "{}", stderr(&out));
}

#[test]
fn dry_run_prints_resolved_config_and_writes_nothing() {
    let dir = TempDir::new().unwrap();
    let mesh = small_dumbbell(dir.path());
    let out_path = dir.path().join("seg.json");
    let stdout = ok(&["segment", s(&mesh), "--dry-run", "--k", "3", "--seed", "9", "-o", s(&out_path)]);
    let doc: serde_json::Value = serde_json::from_slice(&stdout).unwrap();
    assert_eq!(doc["command"], "segment");
    assert_eq!(doc["seed"], 9);
    assert_eq!(doc["config"]["partition"]["k"], 3);
    assert!(!out_path.exists());
}

#[test]
fn config_file_layers_under_flags() {
    let dir = TempDir::new().unwrap();
    let mesh = small_dumbbell(dir.path());
    let cfg = dir.path().join("seg.conf");
    std::fs::write(&cfg, "# defaults\nk = 3\nlambda = 0.25\nrays = 12\nseed = 5\n").unwrap();

    let doc: serde_json::Value =
        serde_json::from_slice(&ok(&["segment", s(&mesh), "--config", s(&cfg), "--dry-run"])).unwrap();
    assert_eq!(doc["seed"], 5);
    assert_eq!(doc["config"]["partition"]["k"], 3);
    assert_eq!(doc["config"]["partition"]["lambda_smooth"], 0.25);
    assert_eq!(doc["config"]["shdf"]["rays_per_point"], 12);

    let doc: serde_json::Value = serde_json::from_slice(&ok(&[
        "segment", s(&mesh), "--config", s(&cfg), "--dry-run", "--k", "2", "--seed", "1",
    ]))
    .unwrap();
    assert_eq!(doc["seed"], 1);
    assert_eq!(doc["config"]["partition"]["k"], 2);
    assert_eq!(doc["config"]["partition"]["lambda_smooth"], 0.25);

    let typo = dir.path().join("typo.conf");
    std::fs::write(&typo, "kk = 3\n").unwrap();
    let out = run(&["segment", s(&mesh), "--config", s(&typo), "--dry-run"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("kk"));
}

/// Runs `args` twice, each time writing to a fresh `out` path, and returns both outputs.
fn twice(dir: &Path, name: &str, args: &[&str]) -> (Vec<u8>, Vec<u8>) {
    let mut outs = Vec::new();
    for i in 0..2 {
        let p = dir.join(format!("{name}.{i}"));
        let mut a: Vec<&str> = args.to_vec();
        a.extend(["-o", s(&p)]);
        ok(&a);
        outs.push(std::fs::read(&p).unwrap());
    }
    let b = outs.pop().unwrap();
    (outs.pop().unwrap(), b)
}

#[test]
fn shdf_sample_segment_refine_grid_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let mesh = small_dumbbell(d);
    let m = s(&mesh);

    let (a, b) = twice(d, "field", &["shdf", m, "--rays", "12", "--seed", "3"]);
    assert_eq!(a, b);
    let (a, b) = twice(d, "raw", &["shdf", m, "--rays", "12", "--raw"]);
    assert_eq!(a, b);
    let (a, b) = twice(d, "samples", &["sample", m, "--radius", "0.3", "--seed", "2"]);
    assert_eq!(a, b);

    let (seg, seg2) = twice(d, "seg", &["segment", m, "--rays", "12", "--k", "2"]);
    assert_eq!(seg, seg2);
    let seg_path = d.join("seg.0");
    let doc: serde_json::Value = serde_json::from_slice(&seg).unwrap();
    let faces = shdfseg::mesh::load_mesh_file(&mesh).unwrap().face_count();
    assert_eq!(doc["labels"].as_array().unwrap().len(), faces);

    let out = run(&["refine", m, "--segmentation", s(&seg_path), "--part", "0", "--rays", "12", "--k", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("declined"), "{}", stderr(&out));

    let whole = d.join("whole.json");
    ok(&["segment", m, "--rays", "12", "--k", "1", "-o", s(&whole)]);
    let (a, b) = twice(
        d,
        "refined",
        &["refine", m, "--segmentation", s(&whole), "--part", "0", "--rays", "12", "--k", "2"],
    );
    assert_eq!(a, b);
    let doc: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert!(doc["part_count"].as_u64().unwrap() >= 2);

    let (a, b) = twice(
        d,
        "grid",
        &["grid-search", m, "--ks", "1,2", "--lambdas", "0.5,1", "--rays", "12", "--metric", "silhouette"],
    );
    assert_eq!(a, b);
    let doc: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(doc["points"].as_array().unwrap().len(), 4);
}

#[test]
fn segment_side_outputs() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let mesh = small_dumbbell(d);
    let (ply, manifest) = (d.join("seg.ply"), d.join("run.json"));
    let stdout = ok(&[
        "segment", s(&mesh), "--rays", "12", "--ply", s(&ply), "--manifest", s(&manifest),
    ]);
    let seg: serde_json::Value = serde_json::from_slice(&stdout).unwrap();
    let ply_text = std::fs::read_to_string(&ply).unwrap();
    assert!(ply_text.starts_with("ply\n"));
    assert!(ply_text.contains("property uchar red"));
    let man: serde_json::Value = serde_json::from_slice(&std::fs::read(&manifest).unwrap()).unwrap();
    assert_eq!(man["command"], "segment");
    assert_eq!(man["part_count"], seg["part_count"]);
    assert!(man["timings"]["total_ms"].as_f64().unwrap() > 0.0);
}

#[test]
fn data_train_infer_bench_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let mesh = small_dumbbell(d);
    let m = s(&mesh);

    let mut datasets = Vec::new();
    for i in 0..2 {
        let out = d.join(format!("data{i}"));
        ok(&["gen-data", m, "-o", s(&out), "--variants", "2", "--rays", "8", "--radius", "0.35", "--seed", "4"]);
        datasets.push(out);
    }
    let mut names: Vec<_> = std::fs::read_dir(&datasets[0]).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for n in &names {
        assert_eq!(
            std::fs::read(datasets[0].join(n)).unwrap(),
            std::fs::read(datasets[1].join(n)).unwrap(),
            "{n:?} differs"
        );
    }

    let mut models = Vec::new();
    for i in 0..2 {
        let out = d.join(format!("model{i}.bin"));
        let hist = d.join(format!("hist{i}.csv"));
        ok(&[
            "train", s(&datasets[0]), "-o", s(&out), "--steps", "20", "--width", "8", "--rounds", "2",
            "--history", s(&hist), "--checkpoint-every", "10",
        ]);
        assert!(out.with_extension("step10.bin").exists());
        models.push((std::fs::read(&out).unwrap(), std::fs::read(&hist).unwrap()));
    }
    assert_eq!(models[0], models[1]);
    let model = d.join("model0.bin");

    let (a, b) = twice(d, "inferred", &["infer", m, "--model", s(&model), "--radius", "0.35"]);
    assert_eq!(a, b);
    let (a, b) = twice(d, "seg-model", &["segment", m, "--model", s(&model), "--radius", "0.35"]);
    assert_eq!(a, b);

    let rows = |bytes: &[u8]| -> Vec<(String, String, u64, u64)> {
        let doc: serde_json::Value = serde_json::from_slice(bytes).unwrap();
        doc.as_array()
            .unwrap()
            .iter()
            .map(|r| {
                assert!(r["total_ms"].as_f64().unwrap() >= 0.0);
                (
                    r["mesh"].as_str().unwrap().to_string(),
                    r["source"].as_str().unwrap().to_string(),
                    r["faces"].as_u64().unwrap(),
                    r["part_count"].as_u64().unwrap(),
                )
            })
            .collect()
    };
    let args = ["bench", m, "--model", s(&model), "--radius", "0.35", "--rays", "8", "--json"];
    let (a, b) = (rows(&ok(&args)), rows(&ok(&args)));
    assert_eq!(a, b);
    assert_eq!(a.len(), 2);
    assert_eq!((a[0].1.as_str(), a[1].1.as_str()), ("oracle", "model"));

    let table = String::from_utf8(ok(&["bench", m, "--rays", "8"])).unwrap();
    assert!(table.lines().next().unwrap().starts_with("mesh"));
    assert_eq!(table.lines().filter(|l| l.contains("dumbbell.obj")).count(), 1);
}
