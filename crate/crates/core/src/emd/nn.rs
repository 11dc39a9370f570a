//! Dense layers and MLPs with manual reverse-mode gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    #[default]
    Silu,
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Relu, Activation::Tanh, Activation::Silu];

    pub fn code(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Silu => 2,
        }
    }

    pub fn from_code(c: u32) -> Option<Activation> {
        Activation::ALL.into_iter().find(|a| a.code() == c)
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Silu => x * sigmoid(x),
        }
    }

    /// Value and derivative at `x`.
    #[inline]
    fn apply_with_derivative(self, x: f64) -> (f64, f64) {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    (x, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                (t, 1.0 - t * t)
            }
            Activation::Silu => {
                let s = sigmoid(x);
                (x * s, s * (1.0 + x * (1.0 - s)))
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Rounds to the nearest `f32`, the storage precision of model files.
#[inline]
pub(crate) fn to_f32_grid(x: f64) -> f64 {
    x as f32 as f64
}

/// `C = beta·C + A·B` with `A: m×k`, `B: k×n`, both given by element strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices holding the full strided extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Fully connected layer; `w` is `input × output`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Dense {
        Dense {
            input,
            output,
            w: vec![0.0; input * output],
            b: vec![0.0; output],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(input: usize, output: usize, rng: &mut impl Rng) -> Dense {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let mut d = Dense::zeros(input, output);
        for w in &mut d.w {
            *w = to_f32_grid(rng.random_range(-limit..limit));
        }
        d
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    /// `y = x·W + b` for `rows` inputs.
    pub fn forward(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let mut y = Vec::with_capacity(rows * self.output);
        for _ in 0..rows {
            y.extend_from_slice(&self.b);
        }
        gemm(
            rows,
            self.input,
            self.output,
            x,
            (self.input as isize, 1),
            &self.w,
            (self.output as isize, 1),
            1.0,
            &mut y,
        );
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], rows: usize, grad: &mut Dense, need_dx: bool) -> Vec<f64> {
        // dW += xᵀ·dy
        gemm(
            self.input,
            rows,
            self.output,
            x,
            (1, self.input as isize),
            dy,
            (self.output as isize, 1),
            1.0,
            &mut grad.w,
        );
        for r in 0..rows {
            for (g, d) in grad.b.iter_mut().zip(&dy[r * self.output..(r + 1) * self.output]) {
                *g += d;
            }
        }
        if !need_dx {
            return Vec::new();
        }
        // dx = dy·Wᵀ
        let mut dx = vec![0.0; rows * self.input];
        gemm(
            rows,
            self.output,
            self.input,
            dy,
            (self.output as isize, 1),
            &self.w,
            (1, self.output as isize),
            0.0,
            &mut dx,
        );
        dx
    }
}

/// Stack of dense layers with an activation after every layer but the last,
/// optionally followed by a parameter-free layer normalization of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub norm_output: bool,
}

/// Per-layer inputs and activation derivatives saved for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpTape {
    inputs: Vec<Vec<f64>>,
    slopes: Vec<Vec<f64>>,
    normed: Vec<f64>,
    inv_std: Vec<f64>,
    rows: usize,
}

const NORM_EPS: f64 = 1e-5;

/// Normalizes each row to zero mean and unit variance in place; returns the
/// per-row inverse standard deviations.
fn layer_norm(x: &mut [f64], cols: usize) -> Vec<f64> {
    x.chunks_exact_mut(cols)
        .map(|row| {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            // An overflowed row has no meaningful scale; poison it so the
            // caller's finiteness check sees the failure.
            let inv = if var.is_finite() { 1.0 / (var + NORM_EPS).sqrt() } else { f64::NAN };
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv
        })
        .collect()
}

fn layer_norm_backward(dy: &mut [f64], y: &[f64], inv_std: &[f64], cols: usize) {
    for ((d, yr), &inv) in dy.chunks_exact_mut(cols).zip(y.chunks_exact(cols)).zip(inv_std) {
        let md = d.iter().sum::<f64>() / cols as f64;
        let mdy = d.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
        for (di, &yi) in d.iter_mut().zip(yr) {
            *di = inv * (*di - md - yi * mdy);
        }
    }
}

impl Mlp {
    pub fn new(sizes: &[usize], norm_output: bool, rng: &mut impl Rng) -> Mlp {
        Mlp {
            layers: sizes.windows(2).map(|s| Dense::glorot(s[0], s[1], rng)).collect(),
            norm_output,
        }
    }

    pub fn zeros(sizes: &[usize], norm_output: bool) -> Mlp {
        Mlp {
            layers: sizes.windows(2).map(|s| Dense::zeros(s[0], s[1])).collect(),
            norm_output,
        }
    }

    pub fn zeroed_like(&self) -> Mlp {
        Mlp {
            layers: self.layers.iter().map(|l| Dense::zeros(l.input, l.output)).collect(),
            norm_output: self.norm_output,
        }
    }

    pub fn input(&self) -> usize {
        self.layers[0].input
    }

    pub fn output(&self) -> usize {
        self.layers.last().unwrap().output
    }

    pub fn forward(&self, x: &[f64], rows: usize, act: Activation, tape: Option<&mut MlpTape>) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut tape = tape;
        if let Some(t) = tape.as_deref_mut() {
            t.inputs.clear();
            t.slopes.clear();
            t.rows = rows;
        }
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = layer.forward(&cur, rows);
            match tape.as_deref_mut() {
                Some(t) => {
                    if i < last {
                        let mut slope = Vec::with_capacity(out.len());
                        for v in &mut out {
                            let (a, d) = act.apply_with_derivative(*v);
                            *v = a;
                            slope.push(d);
                        }
                        t.slopes.push(slope);
                    }
                    t.inputs.push(std::mem::replace(&mut cur, out));
                }
                None => {
                    if i < last {
                        out.iter_mut().for_each(|v| *v = act.apply(*v));
                    }
                    cur = out;
                }
            }
        }
        if self.norm_output {
            let inv = layer_norm(&mut cur, self.output());
            if let Some(t) = tape {
                t.normed = cur.clone();
                t.inv_std = inv;
            }
        }
        cur
    }

    pub fn backward(&self, tape: &MlpTape, dy: &[f64], grad: &mut Mlp, need_dx: bool) -> Vec<f64> {
        let mut d = dy.to_vec();
        if self.norm_output {
            layer_norm_backward(&mut d, &tape.normed, &tape.inv_std, self.output());
        }
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            if i < last {
                for (g, &s) in d.iter_mut().zip(&tape.slopes[i]) {
                    *g *= s;
                }
            }
            d = self.layers[i].backward(&tape.inputs[i], &d, tape.rows, &mut grad.layers[i], i > 0 || need_dx);
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = Dense::glorot(3, 2, &mut rng);
        let x = [1.0, 2.0, 3.0, -1.0, 0.5, 0.0];
        let y = d.forward(&x, 2);
        for r in 0..2 {
            for o in 0..2 {
                let e: f64 = (0..3).map(|i| x[r * 3 + i] * d.w[i * 2 + o]).sum::<f64>() + d.b[o];
                assert!((y[r * 2 + o] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        for (act, norm) in Activation::ALL.into_iter().flat_map(|a| [(a, false), (a, true)]) {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mlp = Mlp::new(&[3, 5, 4, 3], norm, &mut rng);
            let x: Vec<f64> = (0..6).map(|i| (i as f64 * 0.37).sin()).collect();
            let f = |m: &Mlp| m.forward(&x, 2, act, None).iter().enumerate().map(|(i, v)| v * v * (i + 1) as f64).sum::<f64>();
            let mut tape = MlpTape::default();
            let y = mlp.forward(&x, 2, act, Some(&mut tape));
            let dy: Vec<f64> = y.iter().enumerate().map(|(i, v)| 2.0 * v * (i + 1) as f64).collect();
            let mut grad = mlp.zeroed_like();
            mlp.backward(&tape, &dy, &mut grad, true);
            for l in 0..mlp.layers.len() {
                for i in 0..mlp.layers[l].w.len() {
                    let mut p = mlp.clone();
                    p.layers[l].w[i] += 1e-6;
                    let mut m = mlp.clone();
                    m.layers[l].w[i] -= 1e-6;
                    let fd = (f(&p) - f(&m)) / 2e-6;
                    assert!((fd - grad.layers[l].w[i]).abs() < 1e-6, "{act:?} {norm} {l} {i}");
                }
            }
        }
    }
}
