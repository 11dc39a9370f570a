use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use log::info;
use serde::Serialize;
use serde_json::json;

use shdfseg::dataset::{build_training_pairs, generate_variants, read_dataset, remesh_perturb, tessellate, write_dataset, DeformTemplate};
use shdfseg::emd::{history_csv, infer_field, train_with, EmdModel, ModelConfig, TrainSchedule};
use shdfseg::mesh::{load_mesh_file, write_ply, Adjacency, Mesh, PlyEncoding, PlyExtras};
use shdfseg::partition::{segmentation_ply, PartitionParams, Segmentation};
use shdfseg::pipeline::{
    compute_field, grid_search, refine_part, segment, GridMetric, MeshSession, PipelineConfig, RefineField,
    RunManifest, ShdfSource,
};
use shdfseg::sampler::{default_radius, sample_surface};
use shdfseg::shdf::{compute_shdf_field, Aggregator, RayAccel, ShdfParams};

use crate::settings::Settings;
use crate::{AggregatorArg, Cli, Command, MetricArg, PartitionOpts, ShdfOpts, SourceOpts};

/// Keys accepted in config files, shared by all subcommands.
const CONFIG_KEYS: &[&str] = &[
    "seed",
    "rays",
    "cone_angle",
    "alpha",
    "smoothing_iterations",
    "smoothing_sigma",
    "aggregator",
    "k",
    "lambda",
    "concavity_bias",
    "min_part_faces",
    "max_cycles",
    "smooth",
    "model",
    "radius",
];

impl FromStr for AggregatorArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        <AggregatorArg as ValueEnum>::from_str(s, true)
    }
}

struct Ctx {
    settings: Settings,
    seed: u64,
    dry_run: bool,
}

impl Ctx {
    fn shdf(&self, o: &ShdfOpts) -> Result<ShdfParams> {
        let s = &self.settings;
        let d = ShdfParams::default();
        let p = ShdfParams {
            cone_half_angle: s
                .pick(o.cone_angle, "cone_angle")?
                .map_or(d.cone_half_angle, f64::to_radians),
            rays_per_point: s.pick(o.rays, "rays")?.unwrap_or(d.rays_per_point),
            normalization_alpha: s.pick(o.alpha, "alpha")?.unwrap_or(d.normalization_alpha),
            smoothing_iterations: s
                .pick(o.smoothing_iterations, "smoothing_iterations")?
                .unwrap_or(d.smoothing_iterations),
            smoothing_sigma: s.pick(o.smoothing_sigma, "smoothing_sigma")?.unwrap_or(d.smoothing_sigma),
            aggregator: match s.pick(o.aggregator, "aggregator")? {
                Some(AggregatorArg::Median) => Aggregator::Median,
                Some(AggregatorArg::WeightedMean) => Aggregator::WeightedMean,
                None => d.aggregator,
            },
            seed: self.seed,
            ..d
        };
        p.validate()?;
        Ok(p)
    }

    fn partition(&self, o: &PartitionOpts) -> Result<(PartitionParams, bool)> {
        let s = &self.settings;
        let d = PartitionParams::default();
        let p = PartitionParams {
            k: s.pick(o.k, "k")?.unwrap_or(d.k),
            lambda_smooth: s.pick(o.lambda_smooth, "lambda")?.unwrap_or(d.lambda_smooth),
            concavity_bias: s.pick(o.concavity_bias, "concavity_bias")?.unwrap_or(d.concavity_bias),
            min_part_faces: s.pick(o.min_part_faces, "min_part_faces")?.unwrap_or(d.min_part_faces),
            max_expansion_cycles: s.pick(o.max_cycles, "max_cycles")?.unwrap_or(d.max_expansion_cycles),
            seed: self.seed,
            ..d
        };
        p.validate()?;
        let smooth = s.pick(o.smooth.then_some(true), "smooth")?.unwrap_or(false);
        Ok((p, smooth))
    }

    fn source(&self, o: &SourceOpts) -> Result<(ShdfSource, Option<f64>)> {
        let model: Option<PathBuf> = self.settings.pick(o.model.clone(), "model")?;
        let radius = self.settings.pick(o.radius, "radius")?;
        Ok((model.map_or(ShdfSource::Oracle, ShdfSource::Model), radius))
    }

    fn pipeline(&self, source: &SourceOpts, shdf: &ShdfOpts, partition: &PartitionOpts) -> Result<PipelineConfig> {
        let (shdf_source, sampling_radius) = self.source(source)?;
        let (partition, smooth) = self.partition(partition)?;
        let config = PipelineConfig {
            shdf_source,
            shdf: self.shdf(shdf)?,
            sampling_radius,
            partition,
            smooth,
            ..PipelineConfig::default()
        };
        config.validate()?;
        Ok(config)
    }

    /// Prints the resolved configuration; true when the command should stop.
    fn dry_run(&self, command: &str, config: serde_json::Value) -> Result<bool> {
        if self.dry_run {
            let doc = json!({ "command": command, "seed": self.seed, "config": config });
            println!("{}", serde_json::to_string_pretty(&doc)?);
        }
        Ok(self.dry_run)
    }
}

fn load_mesh(path: &Path) -> Result<Mesh> {
    load_mesh_file(path).with_context(|| format!("loading {}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Writes to `path`, or to stdout when no path is given.
fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => write_file(p, bytes),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.write_all(b"\n")?;
            Ok(())
        }
    }
}

fn read_segmentation(path: &Path) -> Result<Segmentation> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Segmentation::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn check_matches(mesh: &Mesh, seg: &Segmentation, path: &Path) -> Result<()> {
    if seg.labels.len() != mesh.face_count() {
        bail!(
            "{}: {} labels for a mesh with {} faces",
            path.display(),
            seg.labels.len(),
            mesh.face_count()
        );
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let settings = match &cli.global.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    settings.check_keys(CONFIG_KEYS)?;
    let seed = settings.pick(cli.global.seed, "seed")?.unwrap_or(0);
    let ctx = Ctx {
        settings,
        seed,
        dry_run: cli.global.dry_run,
    };
    match cli.command {
        Command::Shdf {
            mesh,
            output,
            ply,
            raw,
            shdf,
        } => {
            let params = ctx.shdf(&shdf)?;
            let m = load_mesh(&mesh)?;
            if ctx.dry_run("shdf", json!({ "shdf": params, "raw": raw }))? {
                return Ok(());
            }
            let field = if raw {
                compute_shdf_field(&m, &RayAccel::build(&m), &params)?
            } else {
                compute_field(&m, &Adjacency::build(&m)?, &ShdfSource::Oracle, &params, None)?
            };
            emit(output.as_deref(), field.to_json().as_bytes())?;
            if let Some(p) = ply {
                let extras = PlyExtras {
                    face_scalar: Some(("shdf", field.values())),
                    ..PlyExtras::default()
                };
                write_file(&p, &write_ply(&m, PlyEncoding::Ascii, extras))?;
            }
        }
        Command::Sample { mesh, output, radius } => {
            let m = load_mesh(&mesh)?;
            let r = ctx.settings.pick(radius, "radius")?.unwrap_or_else(|| default_radius(&m));
            if ctx.dry_run("sample", json!({ "radius": r }))? {
                return Ok(());
            }
            emit(output.as_deref(), sample_surface(&m, r, ctx.seed)?.to_json().as_bytes())?;
        }
        Command::Train {
            dataset,
            output,
            steps,
            decay_start,
            lr,
            lr_final,
            batch,
            width,
            rounds,
            history,
            checkpoint_every,
        } => {
            let d = TrainSchedule::default();
            let total_steps = steps.unwrap_or(d.total_steps);
            let schedule = TrainSchedule {
                total_steps,
                decay_start_step: decay_start.unwrap_or(total_steps * 3 / 5),
                lr_initial: lr.unwrap_or(d.lr_initial),
                lr_final: lr_final.unwrap_or(d.lr_final),
                batch_size: batch.unwrap_or(d.batch_size),
                checkpoint_every: checkpoint_every.unwrap_or(0),
                seed: ctx.seed,
                ..d
            };
            schedule.validate()?;
            let dm = ModelConfig::default();
            let model_config = ModelConfig {
                width: width.unwrap_or(dm.width),
                rounds: rounds.unwrap_or(dm.rounds),
                ..dm
            };
            let (_, pairs) = read_dataset(&dataset).with_context(|| format!("reading dataset {}", dataset.display()))?;
            if ctx.dry_run("train", json!({ "schedule": schedule, "model": model_config, "pairs": pairs.len() }))? {
                return Ok(());
            }
            let data: Vec<_> = pairs.into_iter().map(|p| (p.input, p.reference)).collect();
            let model = EmdModel::new(model_config, ctx.seed);
            let mut checkpoint_error = None;
            let report = train_with(model, &data, &schedule, |step, m| {
                let path = output.with_extension(format!("step{step}.bin"));
                if let Err(e) = m.save(&path) {
                    checkpoint_error.get_or_insert(e);
                }
            })?;
            if let Some(e) = checkpoint_error {
                return Err(e.into());
            }
            report.model.save(&output).with_context(|| format!("writing {}", output.display()))?;
            if let Some(h) = history {
                write_file(&h, history_csv(&report.history).as_bytes())?;
            }
            if let (Some(first), Some(last)) = (report.history.first(), report.history.last()) {
                info!("loss {:.4e} -> {:.4e} over {} steps", first.loss, last.loss, report.history.len());
            }
        }
        Command::Infer {
            mesh,
            model,
            output,
            radius,
        } => {
            let m = load_mesh(&mesh)?;
            let net = EmdModel::load(&model).with_context(|| format!("loading model {}", model.display()))?;
            let r = ctx.settings.pick(radius, "radius")?.unwrap_or_else(|| default_radius(&m));
            if ctx.dry_run("infer", json!({ "radius": r, "model": model }))? {
                return Ok(());
            }
            emit(output.as_deref(), infer_field(&net, &m, r, ctx.seed)?.to_json().as_bytes())?;
        }
        Command::Segment {
            mesh,
            output,
            ply,
            manifest,
            source,
            shdf,
            partition,
        } => {
            let config = ctx.pipeline(&source, &shdf, &partition)?;
            let m = load_mesh(&mesh)?;
            if ctx.dry_run("segment", serde_json::to_value(&config)?)? {
                return Ok(());
            }
            let mut session = MeshSession::new(m)?;
            let run = segment(&mut session, &config)?;
            emit(output.as_deref(), run.segmentation.to_json().as_bytes())?;
            let mut artifacts: Vec<PathBuf> = output.into_iter().collect();
            if let Some(p) = ply {
                write_file(&p, &segmentation_ply(session.mesh(), &run.segmentation)?)?;
                artifacts.push(p);
            }
            if let Some(p) = manifest {
                let doc = RunManifest {
                    command: "segment".into(),
                    config,
                    timings: run.timings,
                    energy: Some(run.segmentation.energy),
                    part_count: Some(run.segmentation.part_count),
                    artifacts,
                };
                write_file(&p, doc.to_json().as_bytes())?;
            }
        }
        Command::Refine {
            mesh,
            segmentation,
            part,
            reuse_field,
            output,
            ply,
            source,
            shdf,
            partition,
        } => {
            let mut config = ctx.pipeline(&source, &shdf, &partition)?;
            if reuse_field {
                config.refine_field = RefineField::Reuse;
            }
            let m = load_mesh(&mesh)?;
            let seg = read_segmentation(&segmentation)?;
            check_matches(&m, &seg, &segmentation)?;
            if ctx.dry_run("refine", json!({ "config": config, "part": part }))? {
                return Ok(());
            }
            let mut session = MeshSession::new(m)?;
            let run = refine_part(&mut session, &seg, part, &config)?;
            emit(output.as_deref(), run.segmentation.to_json().as_bytes())?;
            if let Some(p) = ply {
                write_file(&p, &segmentation_ply(session.mesh(), &run.segmentation)?)?;
            }
        }
        Command::GridSearch {
            mesh,
            ks,
            lambdas,
            metric,
            output,
            best,
            source,
            shdf,
            partition,
        } => {
            let config = ctx.pipeline(&source, &shdf, &partition)?;
            let metric = match metric {
                MetricArg::Energy => GridMetric::Energy,
                MetricArg::Silhouette => GridMetric::Silhouette,
            };
            let m = load_mesh(&mesh)?;
            if ctx.dry_run("grid-search", json!({ "config": config, "ks": ks, "lambdas": lambdas, "metric": metric }))? {
                return Ok(());
            }
            let mut session = MeshSession::new(m)?;
            let report = grid_search(&mut session, &config, &ks, &lambdas, metric)?;
            info!("field {:.1} ms", report.field_ms);
            #[derive(Serialize)]
            struct Row<'a> {
                rank: usize,
                k: usize,
                lambda_smooth: f64,
                energy_per_face: f64,
                silhouette: f64,
                part_count: usize,
                segmentation: &'a str,
            }
            let ids: Vec<String> = report.points.iter().map(|p| p.segmentation.id()).collect();
            let rows: Vec<Row> = report
                .points
                .iter()
                .zip(&ids)
                .map(|(p, id)| {
                    info!("k={} lambda={} partition {:.1} ms", p.k, p.lambda_smooth, p.partition_ms);
                    Row {
                        rank: p.rank,
                        k: p.k,
                        lambda_smooth: p.lambda_smooth,
                        energy_per_face: p.energy_per_face,
                        silhouette: p.silhouette,
                        part_count: p.part_count,
                        segmentation: id,
                    }
                })
                .collect();
            let doc = json!({ "metric": metric, "points": rows });
            emit(output.as_deref(), serde_json::to_string_pretty(&doc)?.as_bytes())?;
            if let Some(p) = best {
                write_file(&p, report.points[0].segmentation.to_json().as_bytes())?;
            }
        }
        Command::GenData {
            base,
            output,
            variants,
            tessellate: levels,
            jitter,
            flip_fraction,
            radius,
            shdf,
        } => {
            let params = ctx.shdf(&shdf)?;
            let radius = ctx.settings.pick(radius, "radius")?;
            let m = load_mesh(&base)?;
            let template = DeformTemplate::default();
            let generation = json!({
                "base": base,
                "variants": variants,
                "template": template,
                "tessellate": levels,
                "jitter": jitter,
                "flip_fraction": flip_fraction,
                "radius": radius,
                "shdf": params,
            });
            if ctx.dry_run("gen-data", generation.clone())? {
                return Ok(());
            }
            let mut meshes = Vec::with_capacity(variants);
            for (i, (v, _)) in generate_variants(&m, &template, variants, ctx.seed)?.into_iter().enumerate() {
                let v = if jitter > 0.0 || flip_fraction > 0.0 {
                    remesh_perturb(&v, jitter, flip_fraction, ctx.seed.wrapping_add(i as u64))?
                } else {
                    v
                };
                meshes.push((tessellate(&v, levels), format!("variant_{i:03}")));
            }
            let pairs = build_training_pairs(&meshes, radius, &params, ctx.seed);
            if pairs.is_empty() && !meshes.is_empty() {
                bail!("no variant produced a training pair");
            }
            write_dataset(&output, &pairs, ctx.seed, generation)?;
            info!("{} pairs written to {}", pairs.len(), output.display());
        }
        Command::Bench {
            meshes,
            model,
            radius,
            json,
            output,
            shdf,
            partition,
        } => {
            let params = ctx.shdf(&shdf)?;
            let (partition, smooth) = ctx.partition(&partition)?;
            let radius = ctx.settings.pick(radius, "radius")?;
            let model = ctx.settings.pick(model, "model")?;
            let mut sources = vec![ShdfSource::Oracle];
            sources.extend(model.map(ShdfSource::Model));
            let configs: Vec<PipelineConfig> = sources
                .into_iter()
                .map(|shdf_source| PipelineConfig {
                    shdf_source,
                    shdf: params.clone(),
                    sampling_radius: radius,
                    partition: partition.clone(),
                    smooth,
                    ..PipelineConfig::default()
                })
                .collect();
            for c in &configs {
                c.validate()?;
            }
            let loaded = meshes.iter().map(|p| load_mesh(p)).collect::<Result<Vec<_>>>()?;
            if ctx.dry_run("bench", json!({ "configs": configs, "meshes": meshes }))? {
                return Ok(());
            }
            let rows = bench(&meshes, loaded, &configs)?;
            let text = if json {
                serde_json::to_string_pretty(&rows)?
            } else {
                bench_table(&rows)
            };
            emit(output.as_deref(), text.as_bytes())?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct BenchRow {
    mesh: String,
    source: &'static str,
    faces: usize,
    part_count: usize,
    shdf_ms: f64,
    partition_ms: f64,
    total_ms: f64,
}

fn bench(paths: &[PathBuf], meshes: Vec<Mesh>, configs: &[PipelineConfig]) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for (path, mesh) in paths.iter().zip(meshes) {
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        for config in configs {
            // Fresh session per source so nothing is cached.
            let t = Instant::now();
            let mut session = MeshSession::new(mesh.clone())?;
            let run = segment(&mut session, config).with_context(|| format!("benchmarking {}", path.display()))?;
            let total_ms = t.elapsed().as_secs_f64() * 1e3;
            rows.push(BenchRow {
                mesh: name.clone(),
                source: match config.shdf_source {
                    ShdfSource::Oracle => "oracle",
                    ShdfSource::Model(_) => "model",
                },
                faces: session.mesh().face_count(),
                part_count: run.segmentation.part_count,
                shdf_ms: run.timings.shdf_ms,
                partition_ms: run.timings.partition_ms + run.timings.post_ms,
                total_ms,
            });
        }
    }
    Ok(rows)
}

fn bench_table(rows: &[BenchRow]) -> String {
    let mut s = format!(
        "{:<24} {:<7} {:>9} {:>6} {:>12} {:>14} {:>12}\n",
        "mesh", "source", "faces", "parts", "shdf_ms", "partition_ms", "total_ms"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<24} {:<7} {:>9} {:>6} {:>12.1} {:>14.1} {:>12.1}\n",
            r.mesh, r.source, r.faces, r.part_count, r.shdf_ms, r.partition_ms, r.total_ms
        ));
    }
    s
}
