use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::dual::{build_dual_graph, DualGraph};
use super::expansion::{alpha_expansion, labeling_energy};
use super::gmm::{argmax, fit_gmm, soft_assign, GmmFit};
use crate::error::{Error, Result};
use crate::mesh::{write_ply, Adjacency, Mesh, PlyEncoding, PlyExtras};

const FORMAT_VERSION: u32 = 1;
const SMOOTHING_BAND_HOPS: usize = 3;
/// Cost of relabelling one band face, relative to `λ` times the mean dual
/// edge weight.
pub const SMOOTHING_ANCHOR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartitionParams {
    pub k: usize,
    pub lambda_smooth: f64,
    pub concavity_bias: f64,
    pub max_expansion_cycles: usize,
    pub min_part_faces: usize,
    pub p_floor: f64,
    pub gmm_max_iter: usize,
    pub gmm_tol: f64,
    pub seed: u64,
}

impl Default for PartitionParams {
    fn default() -> Self {
        PartitionParams {
            k: 2,
            lambda_smooth: 1.0,
            concavity_bias: 2.0,
            max_expansion_cycles: 10,
            min_part_faces: 5,
            p_floor: 1e-6,
            gmm_max_iter: 200,
            gmm_tol: 1e-8,
            seed: 0,
        }
    }
}

impl PartitionParams {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::invalid("k", "must be at least 1"));
        }
        if !(self.lambda_smooth >= 0.0) || !self.lambda_smooth.is_finite() {
            return Err(Error::invalid("lambda_smooth", "must be finite and non-negative"));
        }
        if !(self.concavity_bias >= 0.0) || !self.concavity_bias.is_finite() {
            return Err(Error::invalid("concavity_bias", "must be finite and non-negative"));
        }
        if self.min_part_faces < 1 {
            return Err(Error::invalid("min_part_faces", "must be at least 1"));
        }
        if !(self.p_floor > 0.0 && self.p_floor < 1.0) {
            return Err(Error::invalid("p_floor", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Where a refined segmentation came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParentLink {
    /// [`Segmentation::id`] of the parent.
    pub segmentation: String,
    pub part: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    /// Part per face, dense in `0..part_count`.
    pub labels: Vec<u32>,
    pub part_count: usize,
    pub params: PartitionParams,
    /// Objective value of the stage that produced the labels: the cut energy
    /// after partitioning, the boundary cost after smoothing.
    pub energy: f64,
    #[serde(default)]
    pub depth: u32,
    #[serde(default)]
    pub parent: Option<ParentLink>,
}

#[derive(Serialize, Deserialize)]
struct SegmentationJson {
    version: u32,
    #[serde(flatten)]
    seg: Segmentation,
}

impl Segmentation {
    /// Segmentation from arbitrary per-face labels, renumbered densely in
    /// order of first appearance.
    pub fn from_labels(labels: &[usize], params: PartitionParams, energy: f64) -> Segmentation {
        let mut map: BTreeMap<usize, u32> = BTreeMap::new();
        let mut out = Vec::with_capacity(labels.len());
        for &l in labels {
            let next = map.len() as u32;
            out.push(*map.entry(l).or_insert(next));
        }
        Segmentation {
            labels: out,
            part_count: map.len(),
            params,
            energy,
            depth: 0,
            parent: None,
        }
    }

    /// Stable content hash (FNV-1a over labels and part count), hex encoded.
    pub fn id(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(&(self.part_count as u64).to_le_bytes());
        for l in &self.labels {
            eat(&l.to_le_bytes());
        }
        format!("{h:016x}")
    }

    pub fn part_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.part_count];
        for &l in &self.labels {
            s[l as usize] += 1;
        }
        s
    }

    pub fn faces_of(&self, part: u32) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, &l)| l == part).map(|(f, _)| f).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.iter().any(|&l| l as usize >= self.part_count) {
            return Err(Error::Contract("label outside 0..part_count".into()));
        }
        if self.part_sizes().contains(&0) {
            return Err(Error::Contract("labels are not dense".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&SegmentationJson {
            version: FORMAT_VERSION,
            seg: self.clone(),
        })
        .expect("segmentation serializes")
    }

    pub fn from_json(s: &str) -> Result<Segmentation> {
        let j: SegmentationJson = serde_json::from_str(s)?;
        if j.version != FORMAT_VERSION {
            return Err(Error::Contract(format!("unsupported segmentation version {}", j.version)));
        }
        j.seg.validate()?;
        Ok(j.seg)
    }
}

/// Relabels components smaller than `min_size` to the neighbouring label with
/// the lowest resulting energy (ties to the lower label) until none remain.
/// Components without neighbours are left alone.
pub fn enforce_connectivity(
    dual: &DualGraph,
    mut classes: Vec<usize>,
    min_size: usize,
    lambda: f64,
    data: &impl Fn(usize, usize) -> f64,
) -> Vec<usize> {
    loop {
        let (comp, count) = dual.label_components(&classes);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); count];
        for (f, &c) in comp.iter().enumerate() {
            members[c].push(f);
        }
        let mut small: Vec<usize> = (0..count).filter(|&c| members[c].len() < min_size).collect();
        small.sort_by_key(|&c| (members[c].len(), c));
        let mut changed = false;
        'comps: for c in small {
            let cur = classes[members[c][0]];
            let mut gain: BTreeMap<usize, f64> = BTreeMap::new();
            for &f in &members[c] {
                for &(g, e) in dual.neighbors(f) {
                    let g = g as usize;
                    if comp[g] == c {
                        continue;
                    }
                    if classes[g] == cur {
                        // A neighbour already merged into this label; the
                        // component is no longer what was measured.
                        continue 'comps;
                    }
                    *gain.entry(classes[g]).or_default() += dual.weights[e as usize];
                }
            }
            let best = gain
                .iter()
                .map(|(&l, &g)| {
                    let unary: f64 = members[c].iter().map(|&f| data(f, l) - data(f, cur)).sum();
                    (l, unary - lambda * g)
                })
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            if let Some((l, _)) = best {
                for &f in &members[c] {
                    classes[f] = l;
                }
                changed = true;
            }
        }
        if !changed {
            return classes;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutReport {
    pub segmentation: Segmentation,
    /// Mixture component per face after the connectivity pass.
    pub classes: Vec<usize>,
    /// Expansion energy before the first cycle and after each cycle.
    pub energy_history: Vec<f64>,
    pub cycles: usize,
}

/// k-way cut of the dual graph from per-face probabilities: alpha-expansion
/// from the argmax labeling, then the connectivity pass. Parts are the
/// connected components of the resulting labeling.
pub fn kway_cut(dual: &DualGraph, probs: &[Vec<f64>], params: &PartitionParams) -> Result<CutReport> {
    params.validate()?;
    if probs.len() != dual.faces {
        return Err(Error::Contract(format!("{} probability rows for {} faces", probs.len(), dual.faces)));
    }
    let k = probs.first().map_or(1, Vec::len);
    if k == 0 || probs.iter().any(|r| r.len() != k) {
        return Err(Error::Contract("probability rows must share a positive length".into()));
    }
    let floor = params.p_floor;
    let data = |f: usize, l: usize| -probs[f][l].max(floor).ln();
    let lambda = params.lambda_smooth;
    if k == 1 {
        let classes = vec![0; dual.faces];
        let energy = labeling_energy(dual, &classes, lambda, &data);
        let mut segmentation = Segmentation::from_labels(&classes, params.clone(), energy);
        segmentation.part_count = segmentation.part_count.max(1);
        return Ok(CutReport {
            segmentation,
            classes,
            energy_history: vec![energy],
            cycles: 0,
        });
    }
    let initial: Vec<usize> = probs.iter().map(|r| argmax(r)).collect();
    let outcome = if lambda == 0.0 {
        let e = labeling_energy(dual, &initial, lambda, &data);
        super::expansion::ExpansionOutcome {
            labels: initial,
            energy: e,
            history: vec![e],
            cycles: 0,
        }
    } else {
        alpha_expansion(dual, initial, k, lambda, None, params.max_expansion_cycles, &data)
    };
    let classes = enforce_connectivity(dual, outcome.labels, params.min_part_faces, lambda, &data);
    let energy = labeling_energy(dual, &classes, lambda, &data);
    let (comp, _) = dual.label_components(&classes);
    let segmentation = Segmentation::from_labels(&comp, params.clone(), energy);
    Ok(CutReport {
        segmentation,
        classes,
        energy_history: outcome.history,
        cycles: outcome.cycles,
    })
}

#[derive(Debug, Clone)]
pub struct PartitionOutcome {
    pub report: CutReport,
    pub gmm: GmmFit,
    pub probs: Vec<Vec<f64>>,
}

/// Mixture fit, soft assignment and k-way cut of per-face `values`.
pub fn partition_field(dual: &DualGraph, values: &[f64], params: &PartitionParams) -> Result<PartitionOutcome> {
    params.validate()?;
    if values.len() != dual.faces {
        return Err(Error::Contract(format!("{} field values for {} faces", values.len(), dual.faces)));
    }
    let gmm = fit_gmm(values, params.k, params.gmm_max_iter, params.gmm_tol, params.seed)?;
    let probs = soft_assign(&gmm.gmm, values);
    let report = kway_cut(dual, &probs, params)?;
    Ok(PartitionOutcome { report, gmm, probs })
}

fn within_hops(dual: &DualGraph, seeds: &[bool], hops: usize) -> Vec<bool> {
    let mut mark = seeds.to_vec();
    let mut frontier: Vec<usize> = (0..dual.faces).filter(|&f| seeds[f]).collect();
    for _ in 0..hops {
        let mut next = Vec::new();
        for &f in &frontier {
            for &(g, _) in dual.neighbors(f) {
                if !mark[g as usize] {
                    mark[g as usize] = true;
                    next.push(g as usize);
                }
            }
        }
        frontier = next;
    }
    mark
}

/// Re-runs alpha-expansion on the faces within three dual hops of a part
/// boundary. Faces outside the band keep their labels; a band face pays
/// [`SMOOTHING_ANCHOR`] `· λ · mean edge weight` for leaving its label, so
/// boundaries straighten without whole parts being swallowed. Afterwards every part keeps only its largest
/// component, the rest joins the neighbour it shares the longest weighted
/// boundary with. The result never has more parts or a higher boundary cost
/// than the input under this objective; if it would, the input is returned
/// unchanged.
pub fn smooth_boundaries(mesh: &Mesh, adjacency: &Adjacency, seg: &Segmentation, params: &PartitionParams) -> Result<Segmentation> {
    params.validate()?;
    seg.validate()?;
    if seg.labels.len() != mesh.face_count() {
        return Err(Error::Contract("segmentation does not match the mesh".into()));
    }
    if seg.part_count <= 1 {
        return Ok(seg.clone());
    }
    let dual = build_dual_graph(mesh, adjacency, params.concavity_bias);
    let labels: Vec<usize> = seg.labels.iter().map(|&l| l as usize).collect();
    let lambda = params.lambda_smooth.max(f64::MIN_POSITIVE);
    let mean_w = if dual.weights.is_empty() {
        0.0
    } else {
        dual.weights.iter().sum::<f64>() / dual.weights.len() as f64
    };
    let anchor = SMOOTHING_ANCHOR * lambda * mean_w;
    let before = lambda * dual.cut_weight(&labels);
    let boundary: Vec<bool> = (0..dual.faces)
        .map(|f| dual.neighbors(f).iter().any(|&(g, _)| labels[g as usize] != labels[f]))
        .collect();
    let band = within_hops(&dual, &boundary, SMOOTHING_BAND_HOPS);
    let data = |f: usize, l: usize| if l == labels[f] { 0.0 } else { anchor };
    let outcome = alpha_expansion(&dual, labels.clone(), seg.part_count, lambda, Some(&band), params.max_expansion_cycles, data);

    // One component per part: strays join their best-connected neighbour.
    let mut out = outcome.labels;
    loop {
        let (comp, count) = dual.label_components(&out);
        let mut size = vec![0usize; count];
        let mut label_of = vec![0usize; count];
        for (f, &c) in comp.iter().enumerate() {
            size[c] += 1;
            label_of[c] = out[f];
        }
        let mut keep: BTreeMap<usize, usize> = BTreeMap::new();
        for c in 0..count {
            let e = keep.entry(label_of[c]).or_insert(c);
            if size[c] > size[*e] {
                *e = c;
            }
        }
        let stray: Vec<usize> = (0..count).filter(|&c| keep[&label_of[c]] != c).collect();
        if stray.is_empty() {
            break;
        }
        let c = *stray.iter().min_by_key(|&&c| (size[c], c)).expect("non-empty");
        let mut shared: BTreeMap<usize, f64> = BTreeMap::new();
        for f in (0..dual.faces).filter(|&f| comp[f] == c) {
            for &(g, e) in dual.neighbors(f) {
                if comp[g as usize] != c {
                    *shared.entry(out[g as usize]).or_default() += dual.weights[e as usize];
                }
            }
        }
        let Some((target, _)) = shared.iter().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(a.0))) else {
            break;
        };
        let target = *target;
        for f in 0..dual.faces {
            if comp[f] == c {
                out[f] = target;
            }
        }
    }
    let after = labeling_energy(&dual, &out, lambda, &data);
    let mut result = Segmentation::from_labels(&out, seg.params.clone(), after);
    if after > before || result.part_count > seg.part_count {
        return Ok(seg.clone());
    }
    result.depth = seg.depth;
    result.parent = seg.parent.clone();
    Ok(result)
}

/// Distinct colours spread around the hue circle by the golden ratio.
pub fn part_colors(count: usize) -> Vec<[u8; 3]> {
    (0..count)
        .map(|i| {
            let h = (i as f64 * 0.618_033_988_749_895).fract() * 6.0;
            let (s, v) = (0.65, 0.95);
            let c = v * s;
            let x = c * (1.0 - (h % 2.0 - 1.0).abs());
            let (r, g, b) = match h as u32 {
                0 => (c, x, 0.0),
                1 => (x, c, 0.0),
                2 => (0.0, c, x),
                3 => (0.0, x, c),
                4 => (x, 0.0, c),
                _ => (c, 0.0, x),
            };
            let m = v - c;
            [r, g, b].map(|t| ((t + m) * 255.0).round() as u8)
        })
        .collect()
}

/// ASCII PLY with one colour and a `part` scalar per face.
pub fn segmentation_ply(mesh: &Mesh, seg: &Segmentation) -> Result<Vec<u8>> {
    if seg.labels.len() != mesh.face_count() {
        return Err(Error::Contract("segmentation does not match the mesh".into()));
    }
    let palette = part_colors(seg.part_count);
    let colors: Vec<[u8; 3]> = seg.labels.iter().map(|&l| palette[l as usize]).collect();
    let parts: Vec<f64> = seg.labels.iter().map(|&l| f64::from(l)).collect();
    Ok(write_ply(
        mesh,
        PlyEncoding::Ascii,
        PlyExtras {
            face_colors: Some(&colors),
            face_scalar: Some(("part", &parts)),
        },
    ))
}
