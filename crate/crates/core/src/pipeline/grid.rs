use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ms_since, MeshSession, PipelineConfig};
use crate::error::{Error, Result};
use crate::partition::{partition_field, smooth_boundaries, PartitionParams, Segmentation};
use crate::pipeline::FieldKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GridMetric {
    /// Final energy over face count; lower is better.
    #[default]
    Energy,
    /// Mean silhouette of the field values under the part labels; higher is
    /// better.
    Silhouette,
}

impl GridMetric {
    fn score(self, point: &GridPoint) -> f64 {
        match self {
            GridMetric::Energy => point.energy_per_face,
            GridMetric::Silhouette => -point.silhouette,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub k: usize,
    pub lambda_smooth: f64,
    /// 1-based position under the report's metric.
    pub rank: usize,
    pub energy_per_face: f64,
    pub silhouette: f64,
    pub part_count: usize,
    pub partition_ms: f64,
    pub segmentation: Segmentation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub metric: GridMetric,
    pub field: FieldKey,
    /// Time spent obtaining the field for this search; zero on a cache hit.
    pub field_ms: f64,
    pub field_cached: bool,
    /// Best first.
    pub points: Vec<GridPoint>,
}

/// Mean silhouette of 1-D `values` grouped by `labels`, computed exactly in
/// `O(n·c·log n)` for `c` groups. Points in singleton groups score 0, as does
/// a labeling with fewer than two groups.
pub fn silhouette_1d(values: &[f64], labels: &[u32]) -> f64 {
    assert_eq!(values.len(), labels.len());
    let groups = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut sorted: Vec<Vec<f64>> = vec![Vec::new(); groups];
    for (&v, &l) in values.iter().zip(labels) {
        sorted[l as usize].push(v);
    }
    let mut index = vec![usize::MAX; groups];
    let mut next = 0;
    for (slot, g) in index.iter_mut().zip(&sorted) {
        if !g.is_empty() {
            *slot = next;
            next += 1;
        }
    }
    sorted.retain(|g| !g.is_empty());
    if sorted.len() < 2 {
        return 0.0;
    }
    let mut prefix: Vec<Vec<f64>> = Vec::with_capacity(sorted.len());
    for g in &mut sorted {
        g.sort_by(f64::total_cmp);
        let mut p = Vec::with_capacity(g.len() + 1);
        p.push(0.0);
        for &x in g.iter() {
            p.push(p.last().unwrap() + x);
        }
        prefix.push(p);
    }
    let distance_sum = |g: usize, x: f64| {
        let (s, p) = (&sorted[g], &prefix[g]);
        let below = s.partition_point(|&y| y < x);
        let n = s.len();
        (x * below as f64 - p[below]) + (p[n] - p[below] - x * (n - below) as f64)
    };
    let total: f64 = values
        .par_iter()
        .zip(labels)
        .map(|(&x, &l)| {
            let own = index[l as usize];
            let n_own = sorted[own].len();
            if n_own < 2 {
                return 0.0;
            }
            let a = distance_sum(own, x) / (n_own - 1) as f64;
            let b = (0..sorted.len())
                .filter(|&g| g != own)
                .map(|g| distance_sum(g, x) / sorted[g].len() as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .sum();
    total / values.len() as f64
}

/// Partitions the session's field at every `(k, λ)` grid point and ranks
/// the results; equal scores keep grid order. The field is obtained once through the session cache;
/// points are evaluated in parallel against it.
pub fn grid_search(
    session: &mut MeshSession,
    config: &PipelineConfig,
    ks: &[usize],
    lambdas: &[f64],
    metric: GridMetric,
) -> Result<GridReport> {
    config.validate()?;
    let t = Instant::now();
    let (field, field_cached) = session.field(&config.shdf_source, &config.shdf, config.sampling_radius)?;
    let field_ms = if field_cached { 0.0 } else { ms_since(t) };
    let mut report = grid_search_field(session, &field, config, ks, lambdas, metric)?;
    report.field_ms = field_ms;
    report.field_cached = field_cached;
    Ok(report)
}

/// [`grid_search`] over a field already held by the session. The report's
/// field timing is left at zero.
pub fn grid_search_field(
    session: &mut MeshSession,
    field: &FieldKey,
    config: &PipelineConfig,
    ks: &[usize],
    lambdas: &[f64],
    metric: GridMetric,
) -> Result<GridReport> {
    if ks.is_empty() || lambdas.is_empty() {
        return Err(Error::invalid("grid", "needs at least one k and one lambda_smooth"));
    }
    let grid: Vec<PartitionParams> = ks
        .iter()
        .flat_map(|&k| {
            lambdas.iter().map(move |&lambda_smooth| PartitionParams {
                k,
                lambda_smooth,
                ..config.partition.clone()
            })
        })
        .collect();
    for p in &grid {
        p.validate()?;
    }
    let values = session
        .get_field(field)
        .ok_or_else(|| Error::Contract(format!("unknown field {field}")))?;
    let dual = session.dual(config.partition.concavity_bias);
    let session = &*session;
    let evaluated: Vec<Result<GridPoint>> = grid
        .par_iter()
        .map(|params| {
            let t = Instant::now();
            let out = partition_field(&dual, values.values(), params)?;
            let mut seg = out.report.segmentation;
            if config.smooth {
                seg = smooth_boundaries(session.mesh(), session.adjacency(), &seg, params)?;
            }
            let partition_ms = ms_since(t);
            Ok(GridPoint {
                k: params.k,
                lambda_smooth: params.lambda_smooth,
                rank: 0,
                energy_per_face: seg.energy / seg.labels.len() as f64,
                silhouette: silhouette_1d(values.values(), &seg.labels),
                part_count: seg.part_count,
                partition_ms,
                segmentation: seg,
            })
        })
        .collect();
    let mut points = evaluated.into_iter().collect::<Result<Vec<_>>>().map_err(|e| e.in_stage("grid-search"))?;
    // Stable sort: equal scores keep grid order.
    points.sort_by(|a, b| metric.score(a).total_cmp(&metric.score(b)));
    for (i, p) in points.iter_mut().enumerate() {
        p.rank = i + 1;
    }
    Ok(GridReport {
        metric,
        field: field.clone(),
        field_ms: 0.0,
        field_cached: true,
        points,
    })
}
