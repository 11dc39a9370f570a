use super::dual::DualGraph;
use super::maxflow::{MaxFlow, Side};

/// `Σ data(f, l_f) + λ · Σ_{cut edges} w`.
pub fn labeling_energy(dual: &DualGraph, labels: &[usize], lambda: f64, data: &impl Fn(usize, usize) -> f64) -> f64 {
    let unary: f64 = labels.iter().enumerate().map(|(f, &l)| data(f, l)).sum();
    unary + lambda * dual.cut_weight(labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionOutcome {
    pub labels: Vec<usize>,
    pub energy: f64,
    /// Energy of the starting labeling followed by the energy after each
    /// completed cycle.
    pub history: Vec<f64>,
    pub cycles: usize,
}

/// Accumulates a binary energy over the free nodes of one move and solves it
/// with a single min-cut. Label `0` keeps the current label, `1` switches to
/// the expansion label.
struct MoveEnergy {
    e0: Vec<f64>,
    e1: Vec<f64>,
    edges: Vec<(u32, u32, f64, f64)>,
}

impl MoveEnergy {
    fn new(n: usize) -> MoveEnergy {
        MoveEnergy {
            e0: vec![0.0; n],
            e1: vec![0.0; n],
            edges: Vec::new(),
        }
    }

    /// Pairwise term with table `[[a, b], [c, d]]` indexed by `(x_p, x_q)`;
    /// requires `b + c ≥ a + d`.
    fn add_pair(&mut self, p: usize, q: usize, a: f64, b: f64, c: f64, d: f64) {
        self.e0[p] += a;
        self.e1[p] += d;
        let (b, c) = (b - a, c - d);
        if b < 0.0 {
            self.e0[p] += b;
            self.e0[q] -= b;
            self.edges.push((p as u32, q as u32, 0.0, b + c));
        } else if c < 0.0 {
            self.e0[p] -= c;
            self.e0[q] += c;
            self.edges.push((p as u32, q as u32, b + c, 0.0));
        } else {
            self.edges.push((p as u32, q as u32, b, c));
        }
    }

    /// Minimizing assignment; `true` means switch.
    fn solve(self) -> Vec<bool> {
        let n = self.e0.len();
        let mut g = MaxFlow::new(n);
        for i in 0..n {
            let m = self.e0[i].min(self.e1[i]);
            g.add_tweights(i, self.e1[i] - m, self.e0[i] - m);
        }
        for (p, q, cap, rev) in self.edges {
            g.add_edge(p as usize, q as usize, cap.max(0.0), rev.max(0.0));
        }
        g.maxflow();
        (0..n).map(|i| g.side(i) == Side::Sink).collect()
    }
}

/// Optimal expansion move toward `alpha` over the faces marked free.
fn expansion_move(
    dual: &DualGraph,
    labels: &[usize],
    alpha: usize,
    free: Option<&[bool]>,
    lambda: f64,
    data: &impl Fn(usize, usize) -> f64,
) -> Option<Vec<usize>> {
    let mut node = vec![u32::MAX; dual.faces];
    let mut faces = Vec::new();
    for f in 0..dual.faces {
        if labels[f] != alpha && free.is_none_or(|m| m[f]) {
            node[f] = faces.len() as u32;
            faces.push(f);
        }
    }
    if faces.is_empty() {
        return None;
    }
    let mut energy = MoveEnergy::new(faces.len());
    for (i, &f) in faces.iter().enumerate() {
        energy.e0[i] += data(f, labels[f]);
        energy.e1[i] += data(f, alpha);
    }
    let potts = |a: usize, b: usize, c: f64| if a == b { 0.0 } else { c };
    for (&(p, q), &w) in dual.edges.iter().zip(&dual.weights) {
        let (p, q) = (p as usize, q as usize);
        let c = lambda * w;
        let (lp, lq) = (labels[p], labels[q]);
        match (node[p] != u32::MAX, node[q] != u32::MAX) {
            (true, true) => energy.add_pair(
                node[p] as usize,
                node[q] as usize,
                potts(lp, lq, c),
                potts(lp, alpha, c),
                potts(alpha, lq, c),
                0.0,
            ),
            (true, false) => {
                energy.e0[node[p] as usize] += potts(lp, lq, c);
                energy.e1[node[p] as usize] += potts(alpha, lq, c);
            }
            (false, true) => {
                energy.e0[node[q] as usize] += potts(lq, lp, c);
                energy.e1[node[q] as usize] += potts(alpha, lp, c);
            }
            (false, false) => {}
        }
    }
    let switch = energy.solve();
    if !switch.iter().any(|&s| s) {
        return None;
    }
    let mut out = labels.to_vec();
    for (i, &f) in faces.iter().enumerate() {
        if switch[i] {
            out[f] = alpha;
        }
    }
    Some(out)
}

/// Alpha-expansion over labels `0..num_labels`. A move is kept only if it
/// strictly lowers the energy, so the recorded history never increases.
/// Faces outside `free` keep their labels.
pub fn alpha_expansion(
    dual: &DualGraph,
    initial: Vec<usize>,
    num_labels: usize,
    lambda: f64,
    free: Option<&[bool]>,
    max_cycles: usize,
    data: impl Fn(usize, usize) -> f64,
) -> ExpansionOutcome {
    let mut labels = initial;
    let mut energy = labeling_energy(dual, &labels, lambda, &data);
    let mut history = vec![energy];
    let mut cycles = 0;
    while cycles < max_cycles {
        cycles += 1;
        let mut improved = false;
        for alpha in 0..num_labels {
            if let Some(candidate) = expansion_move(dual, &labels, alpha, free, lambda, &data) {
                let e = labeling_energy(dual, &candidate, lambda, &data);
                if e < energy - 1e-12 * energy.abs().max(1.0) {
                    labels = candidate;
                    energy = e;
                    improved = true;
                }
            }
        }
        assert!(
            energy <= *history.last().expect("history starts non-empty"),
            "alpha-expansion energy increased"
        );
        history.push(energy);
        if !improved {
            break;
        }
    }
    ExpansionOutcome {
        labels,
        energy,
        history,
        cycles,
    }
}
