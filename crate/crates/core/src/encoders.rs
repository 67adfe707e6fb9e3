//! Reference MLP encoders with separate intra-modal and inter-modal heads,
//! plus the EMA-tracked momentum pair.
//!
//! An encoder is `backbone → {intra_head, inter_head}`: the backbone runs
//! once and both heads read its output. Each head is
//! `Linear → ReLU → Linear` and its output is L2-normalized. The backbone is
//! a stack of affine layers with ReLU between consecutive layers (none after
//! the last one).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, Matrix};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `out × in`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    /// Glorot-uniform weights in `[−s, s]`, `s = √(6 / (fan_in + fan_out))`, zero bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Self {
        let s = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
        let values = (0..fan_in * fan_out).map(|_| rng.uniform(-s, s)).collect();
        Self {
            weight: Matrix::from_vec(fan_out, fan_in, values).expect("shape by construction"),
            bias: vec![0.0; fan_out],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.weight.matvec(x)?;
        numerics::axpy(1.0, &self.bias, &mut y);
        Ok(y)
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: Matrix::zeros(self.out_dim(), self.in_dim()),
            bias: vec![0.0; self.out_dim()],
        }
    }

    pub fn num_params(&self) -> usize {
        self.weight.as_slice().len() + self.bias.len()
    }
}

/// Affine layers with ReLU between consecutive layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

#[derive(Debug, Clone)]
struct MlpCache {
    /// Input of each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    outputs: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn init(dims: &[usize], rng: &mut SeededRng) -> Self {
        let layers = dims.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.outputs.pop().expect("at least one layer"))
    }

    fn forward_cached(&self, x: &[f64]) -> Result<MlpCache> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                current.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            let out = layer.forward(&current)?;
            inputs.push(current);
            current = out.clone();
            outputs.push(out);
        }
        Ok(MlpCache { inputs, outputs })
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the MLP input.
    fn backward(&self, cache: &MlpCache, grad_out: &[f64], grads: &mut Mlp) -> Result<Vec<f64>> {
        let mut g = grad_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let gl = &mut grads.layers[i];
            gl.weight.add_outer(1.0, &g, &cache.inputs[i])?;
            numerics::axpy(1.0, &g, &mut gl.bias);
            let mut g_in = layer.weight.matvec_transposed(&g)?;
            if i > 0 {
                for (gi, pre) in g_in.iter_mut().zip(&cache.outputs[i - 1]) {
                    if *pre <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            g = g_in;
        }
        Ok(g)
    }

    fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(Linear::zeros_like).collect() }
    }

    fn matches_cache(&self, cache: &MlpCache) -> bool {
        cache.inputs.len() == self.layers.len()
            && self
                .layers
                .iter()
                .zip(&cache.inputs)
                .zip(&cache.outputs)
                .all(|((l, i), o)| l.in_dim() == i.len() && l.out_dim() == o.len())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Linear::num_params).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeadLayout {
    /// Two heads with disjoint parameters.
    #[default]
    Separate,
    /// One head whose output serves as both the intra and the inter feature.
    Shared,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Backbone widths, input first. At least two entries.
    pub layer_dims: Vec<usize>,
    pub intra_dim: usize,
    pub inter_dim: usize,
    pub heads: HeadLayout,
    /// Hidden width of each head; the backbone width when absent.
    pub head_hidden: Option<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { layer_dims: vec![32, 64, 64], intra_dim: 16, inter_dim: 64, heads: HeadLayout::Separate, head_hidden: None }
    }
}

impl EncoderConfig {
    pub fn new(layer_dims: Vec<usize>, intra_dim: usize, inter_dim: usize) -> Self {
        Self { layer_dims, intra_dim, inter_dim, heads: HeadLayout::Separate, head_hidden: None }
    }

    pub fn head_hidden_dim(&self) -> usize {
        self.head_hidden.unwrap_or_else(|| self.backbone_dim())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn backbone_dim(&self) -> usize {
        self.layer_dims[self.layer_dims.len() - 1]
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::InvalidDimension("backbone needs at least one layer"));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::InvalidDimension("layer widths must be positive"));
        }
        if self.head_hidden == Some(0) {
            return Err(Error::InvalidDimension("head hidden width must be positive"));
        }
        if self.intra_dim == 0 || self.inter_dim == 0 {
            return Err(Error::InvalidDimension("head output dims must be positive"));
        }
        if self.heads == HeadLayout::Shared && self.intra_dim != self.inter_dim {
            return Err(Error::InvalidDimension("shared head requires intra_dim == inter_dim"));
        }
        Ok(())
    }

    /// Single shared head with output width `intra_dim + inter_dim` and the
    /// hidden width that brings its parameter count closest to the two
    /// separate heads of `self`.
    pub fn shared_with_equal_budget(&self) -> Self {
        let b = self.backbone_dim();
        let h = self.head_hidden_dim();
        let separate = 2 * (b + 1) * h + (h + 1) * (self.intra_dim + self.inter_dim);
        let out = self.intra_dim + self.inter_dim;
        // Shared parameters: (b + 1)·h' + (h' + 1)·out.
        let hidden = ((separate - out) as f64 / (b + 1 + out) as f64).round() as usize;
        Self {
            layer_dims: self.layer_dims.clone(),
            intra_dim: out,
            inter_dim: out,
            heads: HeadLayout::Shared,
            head_hidden: Some(hidden),
        }
    }
}

/// Query or key encoder parameters. Gradients and optimizer buffers reuse
/// this type with the same shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub backbone: Mlp,
    pub intra_head: Mlp,
    /// `None` for the shared-head layout.
    pub inter_head: Option<Mlp>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePairOutput {
    pub intra: Vec<f64>,
    pub inter: Vec<f64>,
}

/// Activations recorded by [`EncoderParams::forward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    backbone: MlpCache,
    intra: MlpCache,
    inter: Option<MlpCache>,
}

impl ForwardCache {
    /// Backbone output, before any head.
    pub fn backbone_output(&self) -> &[f64] {
        self.backbone.outputs.last().expect("non-empty")
    }

    /// Smallest `|z|` over all pre-activations that feed a ReLU. Finite
    /// differences are only valid while every such `z` keeps its sign.
    pub fn min_relu_margin(&self) -> f64 {
        [Some(&self.backbone), Some(&self.intra), self.inter.as_ref()]
            .into_iter()
            .flatten()
            .flat_map(|c| {
                let hidden = c.outputs.len().saturating_sub(1);
                c.outputs[..hidden].iter().flatten()
            })
            .fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }
}

pub fn init_encoder(cfg: &EncoderConfig, rng: &mut SeededRng) -> Result<EncoderParams> {
    cfg.validate()?;
    let b = cfg.backbone_dim();
    let backbone = Mlp::init(&cfg.layer_dims, rng);
    let h = cfg.head_hidden_dim();
    let intra_head = Mlp::init(&[b, h, cfg.intra_dim], rng);
    let inter_head = match cfg.heads {
        HeadLayout::Separate => Some(Mlp::init(&[b, h, cfg.inter_dim], rng)),
        HeadLayout::Shared => None,
    };
    Ok(EncoderParams { backbone, intra_head, inter_head })
}

impl EncoderParams {
    pub fn input_dim(&self) -> usize {
        self.backbone.in_dim()
    }

    pub fn backbone_dim(&self) -> usize {
        self.backbone.out_dim()
    }

    pub fn intra_dim(&self) -> usize {
        self.intra_head.out_dim()
    }

    pub fn inter_dim(&self) -> usize {
        self.inter_head.as_ref().unwrap_or(&self.intra_head).out_dim()
    }

    pub fn forward(&self, x: &[f64]) -> Result<FeaturePairOutput> {
        self.forward_cached(x).map(|(out, _)| out)
    }

    /// Backbone output only (the frozen feature used by linear probes).
    pub fn backbone_features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        self.backbone.forward(x)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<(FeaturePairOutput, ForwardCache)> {
        self.check_input(x)?;
        let backbone = self.backbone.forward_cached(x)?;
        let feat = backbone.outputs.last().expect("non-empty");
        let intra = self.intra_head.forward_cached(feat)?;
        let inter = match &self.inter_head {
            Some(head) => Some(head.forward_cached(feat)?),
            None => None,
        };
        let intra_out = numerics::l2_normalize(intra.outputs.last().expect("non-empty"))?;
        let inter_out = match &inter {
            Some(c) => numerics::l2_normalize(c.outputs.last().expect("non-empty"))?,
            None => intra_out.clone(),
        };
        Ok((FeaturePairOutput { intra: intra_out, inter: inter_out }, ForwardCache { backbone, intra, inter }))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), found: x.len() });
        }
        Ok(())
    }

    /// Gradients of `grad_intra·intra + grad_inter·inter` with respect to
    /// every parameter, through both normalizations.
    pub fn backward(&self, cache: &ForwardCache, grad_intra: &[f64], grad_inter: &[f64]) -> Result<EncoderParams> {
        let mut grads = self.zeros_like();
        self.backward_into(cache, grad_intra, grad_inter, &mut grads)?;
        Ok(grads)
    }

    /// As [`backward`](Self::backward), accumulating into `grads`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        grad_intra: &[f64],
        grad_inter: &[f64],
        grads: &mut EncoderParams,
    ) -> Result<()> {
        let shapes_ok = self.backbone.matches_cache(&cache.backbone)
            && self.intra_head.matches_cache(&cache.intra)
            && match (&self.inter_head, &cache.inter) {
                (Some(h), Some(c)) => h.matches_cache(c),
                (None, None) => true,
                _ => false,
            };
        if !shapes_ok {
            return Err(Error::StaleCache);
        }
        if grad_intra.len() != self.intra_dim() {
            return Err(Error::DimensionMismatch { expected: self.intra_dim(), found: grad_intra.len() });
        }
        if grad_inter.len() != self.inter_dim() {
            return Err(Error::DimensionMismatch { expected: self.inter_dim(), found: grad_inter.len() });
        }
        let intra_raw = cache.intra.outputs.last().expect("non-empty");
        let mut g_feat = match (&self.inter_head, &cache.inter, &mut grads.inter_head) {
            (Some(head), Some(c), Some(gh)) => {
                let inter_raw = c.outputs.last().expect("non-empty");
                let g_raw = numerics::l2_normalize_backward(inter_raw, grad_inter)?;
                head.backward(c, &g_raw, gh)?
            }
            (None, None, None) => {
                // Shared head: both features are the same vector.
                let combined = numerics::add(grad_intra, grad_inter)?;
                let g_raw = numerics::l2_normalize_backward(intra_raw, &combined)?;
                let g = self.intra_head.backward(&cache.intra, &g_raw, &mut grads.intra_head)?;
                self.backbone.backward(&cache.backbone, &g, &mut grads.backbone)?;
                return Ok(());
            }
            _ => return Err(Error::StaleCache),
        };
        let g_raw = numerics::l2_normalize_backward(intra_raw, grad_intra)?;
        let g_intra = self.intra_head.backward(&cache.intra, &g_raw, &mut grads.intra_head)?;
        numerics::axpy(1.0, &g_intra, &mut g_feat);
        self.backbone.backward(&cache.backbone, &g_feat, &mut grads.backbone)?;
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            backbone: self.backbone.zeros_like(),
            intra_head: self.intra_head.zeros_like(),
            inter_head: self.inter_head.as_ref().map(Mlp::zeros_like),
        }
    }

    fn groups(&self) -> impl Iterator<Item = (&'static str, &Mlp)> {
        [("backbone", Some(&self.backbone)), ("intra_head", Some(&self.intra_head)), ("inter_head", self.inter_head.as_ref())]
            .into_iter()
            .filter_map(|(name, mlp)| mlp.map(|m| (name, m)))
    }

    /// Every parameter tensor with a stable name, in a fixed order:
    /// backbone, intra head, inter head; weight before bias per layer.
    pub fn named_tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (group, mlp) in self.groups() {
            for (i, layer) in mlp.layers.iter().enumerate() {
                out.push((format!("{group}.{i}.weight"), layer.weight.as_slice()));
                out.push((format!("{group}.{i}.bias"), layer.bias.as_slice()));
            }
        }
        out
    }

    /// Mutable tensors in the same order as [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        let groups = [Some(&mut self.backbone), Some(&mut self.intra_head), self.inter_head.as_mut()];
        for mlp in groups.into_iter().flatten() {
            for layer in &mut mlp.layers {
                out.push(layer.weight.as_mut_slice());
                out.push(layer.bias.as_mut_slice());
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.groups().map(|(_, m)| m.num_params()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.named_tensors().into_iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch { expected: self.num_params(), found: flat.len() });
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &EncoderParams) -> bool {
        let a = self.named_tensors();
        let b = other.named_tensors();
        a.len() == b.len() && a.iter().zip(&b).all(|((na, ta), (nb, tb))| na == nb && ta.len() == tb.len())
            && self.groups().zip(other.groups()).all(|((_, x), (_, y))| {
                x.layers.iter().zip(&y.layers).all(|(l, r)| l.in_dim() == r.in_dim() && l.out_dim() == r.out_dim())
            })
    }

    /// Euclidean distance between two parameter sets of the same shape.
    pub fn distance(&self, other: &EncoderParams) -> f64 {
        let sq: f64 = self
            .named_tensors()
            .iter()
            .zip(other.named_tensors())
            .flat_map(|((_, a), (_, b))| a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)))
            .sum();
        libm::sqrt(sq)
    }
}

/// Query encoder and its EMA shadow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentumPair {
    pub query: EncoderParams,
    pub key: EncoderParams,
    pub m: f64,
}

impl MomentumPair {
    /// Key starts as a deep copy of the query.
    pub fn new(query: EncoderParams, m: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&m) {
            return Err(Error::InvalidConfig { field: "momentum", reason: "must lie in [0, 1]" });
        }
        Ok(Self { key: query.clone(), query, m })
    }

    /// `key ← m·key + (1 − m)·query`, elementwise. The query is untouched.
    pub fn momentum_update(&mut self) {
        let m = self.m;
        let query = self.query.named_tensors();
        for (k, (_, q)) in self.key.tensors_mut().into_iter().zip(query) {
            for (kv, qv) in k.iter_mut().zip(q) {
                *kv = m * *kv + (1.0 - m) * qv;
            }
        }
    }
}
