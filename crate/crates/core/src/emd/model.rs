//! Encode-Message-Decode network: forward pass, exact gradients and the
//! binary model format.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{GraphInput, EDGE_FEATURES, NODE_FEATURES};
use super::nn::{sigmoid, to_f32_grid, Activation, Dense, Mlp, MlpTape};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EMDN";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub width: usize,
    pub rounds: usize,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            width: 128,
            rounds: 4,
            activation: Activation::Silu,
        }
    }
}

/// Network weights. The encoder and messenger each have two hidden layers
/// and a layer-normalized output; the messenger is shared across `rounds`
/// rounds and its output is added to the node state.
#[derive(Debug, Clone, PartialEq)]
pub struct EmdModel {
    pub config: ModelConfig,
    pub encoder: Mlp,
    pub edge_encoder: Dense,
    pub messenger: Mlp,
    pub decoder: Mlp,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardTape {
    encoder: MlpTape,
    rounds: Vec<MlpTape>,
    decoder: MlpTape,
    /// Per directed edge, `ρ_sender / Σρ` over the receiver's in-edges.
    coeff: Vec<f64>,
    logits: Vec<f64>,
}

/// Round-one message sums before normalization, for a given density vector.
#[derive(Debug, Clone)]
pub struct RoundOneProbe {
    /// `Σ_e ρ_sender (H_sender + Ê_e)` per receiver, `nodes × width`.
    pub weighted_sums: Vec<f64>,
    /// `Σ_e ρ_sender` per receiver.
    pub weight_totals: Vec<f64>,
    /// First messenger layer pre-activations, `nodes × width`.
    pub pre_activations: Vec<f64>,
}

fn check_finite(v: &[f64], layer: impl Into<String>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric { layer: layer.into() })
    }
}

impl EmdModel {
    pub fn new(config: ModelConfig, seed: u64) -> EmdModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = config.width;
        EmdModel {
            config,
            encoder: Mlp::new(&[NODE_FEATURES, w, w, w], true, &mut rng),
            edge_encoder: Dense::glorot(EDGE_FEATURES, w, &mut rng),
            messenger: Mlp::new(&[2 * w, w, w, w], true, &mut rng),
            decoder: Mlp::new(&[w, w, 1], false, &mut rng),
        }
    }

    pub fn zeros(config: ModelConfig) -> EmdModel {
        let w = config.width;
        EmdModel {
            config,
            encoder: Mlp::zeros(&[NODE_FEATURES, w, w, w], true),
            edge_encoder: Dense::zeros(EDGE_FEATURES, w),
            messenger: Mlp::zeros(&[2 * w, w, w, w], true),
            decoder: Mlp::zeros(&[w, w, 1], false),
        }
    }

    pub fn zeroed_like(&self) -> EmdModel {
        EmdModel::zeros(self.config)
    }

    fn dense_layers(&self) -> impl Iterator<Item = &Dense> {
        self.encoder
            .layers
            .iter()
            .chain(std::iter::once(&self.edge_encoder))
            .chain(&self.messenger.layers)
            .chain(&self.decoder.layers)
    }

    fn dense_layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.encoder
            .layers
            .iter_mut()
            .chain(std::iter::once(&mut self.edge_encoder))
            .chain(self.messenger.layers.iter_mut())
            .chain(self.decoder.layers.iter_mut())
    }

    /// All weights and biases in a fixed order.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.dense_layers().flat_map(|d| d.w.iter().chain(&d.b))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.dense_layers_mut().flat_map(|d| d.w.iter_mut().chain(d.b.iter_mut()))
    }

    pub fn param_count(&self) -> usize {
        self.dense_layers().map(Dense::param_count).sum()
    }

    pub(crate) fn round_to_storage(&mut self) {
        for p in self.params_mut() {
            *p = to_f32_grid(*p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.config.width;
        let ok = self.encoder.input() == NODE_FEATURES
            && self.encoder.output() == w
            && self.edge_encoder.input == EDGE_FEATURES
            && self.edge_encoder.output == w
            && self.messenger.input() == 2 * w
            && self.messenger.output() == w
            && self.decoder.input() == w
            && self.decoder.output() == 1
            && self.dense_layers().all(|d| d.w.len() == d.input * d.output && d.b.len() == d.output)
            && [&self.encoder, &self.messenger, &self.decoder]
                .iter()
                .all(|m| m.layers.windows(2).all(|p| p[0].output == p[1].input));
        if !ok {
            return Err(Error::ModelFormat("inconsistent layer shapes".into()));
        }
        if !self.params().all(|p| p.is_finite()) {
            return Err(Error::ModelFormat("non-finite weight".into()));
        }
        Ok(())
    }

    fn aggregation_coefficients(input: &GraphInput) -> Vec<f64> {
        let mut totals = vec![0.0; input.nodes];
        for &(s, r) in &input.edges {
            totals[r as usize] += input.rho[s as usize];
        }
        input
            .edges
            .iter()
            .map(|&(s, r)| {
                let t = totals[r as usize];
                if t > 0.0 {
                    input.rho[s as usize] / t
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn aggregate(&self, h: &[f64], e: &[f64], coeff: &[f64], input: &GraphInput) -> Vec<f64> {
        let w = self.config.width;
        let mut a = vec![0.0; input.nodes * w];
        for (k, &(s, r)) in input.edges.iter().enumerate() {
            let c = coeff[k];
            let dst = &mut a[r as usize * w..(r as usize + 1) * w];
            let hs = &h[s as usize * w..(s as usize + 1) * w];
            let ek = &e[k * w..(k + 1) * w];
            for i in 0..w {
                dst[i] += c * (hs[i] + ek[i]);
            }
        }
        a
    }

    fn concat(h: &[f64], a: &[f64], rows: usize, w: usize) -> Vec<f64> {
        let mut z = Vec::with_capacity(rows * 2 * w);
        for i in 0..rows {
            z.extend_from_slice(&h[i * w..(i + 1) * w]);
            z.extend_from_slice(&a[i * w..(i + 1) * w]);
        }
        z
    }

    /// Per-node predictions in (0, 1).
    pub fn forward(&self, input: &GraphInput) -> Result<Vec<f64>> {
        self.forward_impl(input, None)
    }

    pub fn forward_with_tape(&self, input: &GraphInput, tape: &mut ForwardTape) -> Result<Vec<f64>> {
        self.forward_impl(input, Some(tape))
    }

    fn forward_impl(&self, input: &GraphInput, mut tape: Option<&mut ForwardTape>) -> Result<Vec<f64>> {
        input.validate()?;
        let n = input.nodes;
        let w = self.config.width;
        let act = self.config.activation;
        let mut h = self
            .encoder
            .forward(&input.node_features, n, act, tape.as_deref_mut().map(|t| &mut t.encoder));
        check_finite(&h, "encoder")?;
        let e = self.edge_encoder.forward(&input.edge_features, input.edges.len());
        check_finite(&e, "edge encoder")?;
        let coeff = Self::aggregation_coefficients(input);
        if let Some(t) = tape.as_deref_mut() {
            t.rounds.resize_with(self.config.rounds, MlpTape::default);
        }
        for k in 0..self.config.rounds {
            let a = self.aggregate(&h, &e, &coeff, input);
            let z = Self::concat(&h, &a, n, w);
            let u = self
                .messenger
                .forward(&z, n, act, tape.as_deref_mut().map(|t| &mut t.rounds[k]));
            for (hi, ui) in h.iter_mut().zip(&u) {
                *hi += ui;
            }
            check_finite(&h, format!("messenger round {}", k + 1))?;
        }
        let logits = self.decoder.forward(&h, n, act, tape.as_deref_mut().map(|t| &mut t.decoder));
        check_finite(&logits, "decoder")?;
        let out = logits.iter().map(|&x| sigmoid(x)).collect();
        if let Some(t) = tape {
            t.coeff = coeff;
            t.logits = logits;
        }
        Ok(out)
    }

    /// Exact gradients of a loss with respect to every weight, given
    /// `dL/dλ` for each node and the tape of the matching forward pass.
    pub fn backward(&self, input: &GraphInput, tape: &ForwardTape, d_out: &[f64]) -> EmdModel {
        let n = input.nodes;
        let w = self.config.width;
        let mut g = self.zeroed_like();
        let d_logit: Vec<f64> = d_out
            .iter()
            .zip(&tape.logits)
            .map(|(d, &x)| {
                let s = sigmoid(x);
                d * s * (1.0 - s)
            })
            .collect();
        let mut dh = self.decoder.backward(&tape.decoder, &d_logit, &mut g.decoder, true);
        let mut de = vec![0.0; input.edges.len() * w];
        for k in (0..self.config.rounds).rev() {
            let dz = self.messenger.backward(&tape.rounds[k], &dh, &mut g.messenger, true);
            for i in 0..n {
                for c in 0..w {
                    dh[i * w + c] += dz[i * 2 * w + c];
                }
            }
            for (e, &(s, r)) in input.edges.iter().enumerate() {
                let coeff = tape.coeff[e];
                if coeff == 0.0 {
                    continue;
                }
                let da = &dz[r as usize * 2 * w + w..(r as usize + 1) * 2 * w];
                for c in 0..w {
                    let v = coeff * da[c];
                    dh[s as usize * w + c] += v;
                    de[e * w + c] += v;
                }
            }
        }
        self.edge_encoder
            .backward(&input.edge_features, &de, input.edges.len(), &mut g.edge_encoder, false);
        self.encoder.backward(&tape.encoder, &dh, &mut g.encoder, false);
        g
    }

    /// Round-one message sums and messenger pre-activations with the node
    /// embeddings taken from `input` and message weights taken from `rho`.
    pub fn round_one_probe(&self, input: &GraphInput, rho: &[f64]) -> RoundOneProbe {
        let n = input.nodes;
        let w = self.config.width;
        let h = self.encoder.forward(&input.node_features, n, self.config.activation, None);
        let e = self.edge_encoder.forward(&input.edge_features, input.edges.len());
        let mut sums = vec![0.0; n * w];
        let mut totals = vec![0.0; n];
        for (k, &(s, r)) in input.edges.iter().enumerate() {
            let p = rho[s as usize];
            totals[r as usize] += p;
            for c in 0..w {
                sums[r as usize * w + c] += p * (h[s as usize * w + c] + e[k * w + c]);
            }
        }
        let a: Vec<f64> = (0..n * w)
            .map(|i| {
                let t = totals[i / w];
                if t > 0.0 {
                    sums[i] / t
                } else {
                    0.0
                }
            })
            .collect();
        let z = Self::concat(&h, &a, n, w);
        let pre = self.messenger.layers[0].forward(&z, n);
        RoundOneProbe {
            weighted_sums: sums,
            weight_totals: totals,
            pre_activations: pre,
        }
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        let layers: Vec<&Dense> = self.dense_layers().collect();
        let mut buf = Vec::with_capacity(32 + self.param_count() * 4);
        buf.extend_from_slice(MAGIC);
        for v in [
            FORMAT_VERSION,
            self.config.rounds as u32,
            self.config.width as u32,
            NODE_FEATURES as u32,
            EDGE_FEATURES as u32,
            self.config.activation.code(),
            layers.len() as u32,
        ] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for l in &layers {
            buf.extend_from_slice(&(l.input as u32).to_le_bytes());
            buf.extend_from_slice(&(l.output as u32).to_le_bytes());
        }
        for p in self.params() {
            buf.extend_from_slice(&(*p as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_to(&mut v).expect("writing to memory");
        v
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<EmdModel> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| Error::ModelFormat("truncated header".into()))?;
        if &magic != MAGIC {
            return Err(Error::ModelFormat("bad magic".into()));
        }
        let mut u32s = |count: usize| -> Result<Vec<u32>> {
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                let mut b = [0u8; 4];
                r.read_exact(&mut b).map_err(|_| Error::ModelFormat("truncated header".into()))?;
                out.push(u32::from_le_bytes(b));
            }
            Ok(out)
        };
        let h = u32s(7)?;
        if h[0] != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {}", h[0])));
        }
        if h[3] as usize != NODE_FEATURES || h[4] as usize != EDGE_FEATURES {
            return Err(Error::ModelFormat("feature dimensions do not match this build".into()));
        }
        let activation = Activation::from_code(h[5]).ok_or_else(|| Error::ModelFormat("unknown activation".into()))?;
        let config = ModelConfig {
            rounds: h[1] as usize,
            width: h[2] as usize,
            activation,
        };
        if config.width == 0 || config.width > 1 << 16 {
            return Err(Error::ModelFormat(format!("implausible width {}", config.width)));
        }
        let mut model = EmdModel::zeros(config);
        let shapes = u32s(2 * h[6] as usize)?;
        let expected: Vec<u32> = model
            .dense_layers()
            .flat_map(|d| [d.input as u32, d.output as u32])
            .collect();
        if shapes != expected {
            return Err(Error::ModelFormat("layer shapes do not match header".into()));
        }
        let need = model.param_count() * 4;
        if r.len() != need {
            return Err(Error::ModelFormat(format!("expected {need} weight bytes, found {}", r.len())));
        }
        for (p, chunk) in model.params_mut().zip(r.chunks_exact(4)) {
            *p = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        }
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_to(&mut f)
    }

    pub fn load(path: &Path) -> Result<EmdModel> {
        let bytes = std::fs::read(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        EmdModel::from_bytes(&bytes)
    }
}
