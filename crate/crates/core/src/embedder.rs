//! Desk-scale embedding network: temporal mean/std pooling, a ReLU MLP,
//! optional adaptive multi-scale feature fusion (AMFF) over the pooled input
//! and every hidden activation, a linear head and L2 normalization. Forward
//! passes record a [`ForwardTrace`] from which [`Embedder::backward`]
//! computes exact gradients without re-running the forward pass.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::dsp::FeatureMatrix;
use crate::error::{Error, Result};
use crate::rng;

/// Normalization guard: `x / max(|x|, NORM_EPS)`.
pub const NORM_EPS: f64 = 1e-12;

/// Dense layer `y = W x + b` with `W` stored row-major as `n_out x n_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weight: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    /// Weights uniform in `+-sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot(n_in: usize, n_out: usize, rng: &mut impl RngCore) -> Self {
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        let weight = (0..n_in * n_out)
            .map(|_| rng::uniform(rng, -limit, limit))
            .collect();
        Self {
            n_in,
            n_out,
            weight,
            bias: vec![0.0; n_out],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n_in);
        self.weight
            .chunks_exact(self.n_in)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Accumulates `dW += dy x^T`, `db += dy` into `grad`; returns `W^T dy`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear) -> Vec<f64> {
        let mut dx = vec![0.0; self.n_in];
        for (o, &g) in dy.iter().enumerate() {
            grad.bias[o] += g;
            if g == 0.0 {
                continue;
            }
            let row = &self.weight[o * self.n_in..(o + 1) * self.n_in];
            let grow = &mut grad.weight[o * self.n_in..(o + 1) * self.n_in];
            for i in 0..self.n_in {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        dx
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.n_in, self.n_out)
    }

    fn add_assign(&mut self, other: &Linear) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

/// Temporal mean followed by population standard deviation, per coefficient.
pub fn pool_stats(features: &FeatureMatrix) -> Result<Vec<f64>> {
    let t = features.frames();
    if t < 2 {
        return Err(Error::contract(format!("pooling needs at least 2 frames, got {t}")));
    }
    let d = features.dims();
    let mut mean = vec![0.0; d];
    for row in 0..t {
        for (m, &v) in mean.iter_mut().zip(features.row(row)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= t as f64;
    }
    let mut var = vec![0.0; d];
    for row in 0..t {
        for ((s, &v), m) in var.iter_mut().zip(features.row(row)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let mut out = mean;
    out.extend(var.into_iter().map(|s| (s / t as f64).sqrt()));
    Ok(out)
}

/// Gradient of a loss w.r.t. the features given its gradient w.r.t.
/// [`pool_stats`]. Zero-variance coefficients pass no gradient through the
/// standard deviation.
pub fn pool_stats_backward(features: &FeatureMatrix, pooled: &[f64], grad: &[f64]) -> Result<FeatureMatrix> {
    let (t, d) = (features.frames(), features.dims());
    if pooled.len() != 2 * d || grad.len() != 2 * d {
        return Err(Error::contract("pooled gradient has the wrong length"));
    }
    let tf = t as f64;
    let mut values = Vec::with_capacity(t * d);
    for row in 0..t {
        for c in 0..d {
            let (mean, std) = (pooled[c], pooled[d + c]);
            let mut g = grad[c] / tf;
            if std > 0.0 {
                g += grad[d + c] * (features.get(row, c) - mean) / (tf * std);
            }
            values.push(g);
        }
    }
    FeatureMatrix::new(values, t, d)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Gate network over `B` branches: average pool per branch, FC, ReLU, FC,
/// sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct AmffParams {
    /// `B -> max(1, B / r)`.
    pub fc1: Linear,
    /// `max(1, B / r) -> B`.
    pub fc2: Linear,
}

impl AmffParams {
    pub fn init(n_branches: usize, reduction: usize, rng: &mut impl RngCore) -> Self {
        let reduced = (n_branches / reduction.max(1)).max(1);
        Self {
            fc1: Linear::glorot(n_branches, reduced, rng),
            fc2: Linear::glorot(reduced, n_branches, rng),
        }
    }

    pub fn n_branches(&self) -> usize {
        self.fc2.n_out
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            fc1: self.fc1.zeros_like(),
            fc2: self.fc2.zeros_like(),
        }
    }
}

/// Intermediate values of one [`amff_fuse`] call.
#[derive(Debug, Clone, PartialEq)]
pub struct AmffTrace {
    pub branches: Vec<Vec<f64>>,
    pub descriptor: Vec<f64>,
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub gates: Vec<f64>,
}

/// Weighted branch sum `sum_b gate_b * branch_b`.
pub fn fuse_weighted(branches: &[Vec<f64>], gates: &[f64]) -> Vec<f64> {
    let dim = branches.first().map_or(0, Vec::len);
    let mut fused = vec![0.0; dim];
    for (branch, &g) in branches.iter().zip(gates) {
        for (f, &v) in fused.iter_mut().zip(branch) {
            *f += g * v;
        }
    }
    fused
}

/// Returns the fused vector and the trace (which holds the gates).
pub fn amff_fuse(params: &AmffParams, branches: &[Vec<f64>]) -> Result<(Vec<f64>, AmffTrace)> {
    if branches.len() < 2 {
        return Err(Error::contract("AMFF needs at least two branches"));
    }
    if branches.len() != params.n_branches() {
        return Err(Error::contract(format!(
            "AMFF configured for {} branches, got {}",
            params.n_branches(),
            branches.len()
        )));
    }
    let dim = branches[0].len();
    if dim == 0 || branches.iter().any(|b| b.len() != dim) {
        return Err(Error::contract("AMFF branches must share a non-zero dimension"));
    }
    let descriptor: Vec<f64> = branches
        .iter()
        .map(|b| b.iter().sum::<f64>() / dim as f64)
        .collect();
    let hidden_pre = params.fc1.forward(&descriptor);
    let hidden: Vec<f64> = hidden_pre.iter().map(|&z| z.max(0.0)).collect();
    let gates: Vec<f64> = params.fc2.forward(&hidden).into_iter().map(sigmoid).collect();
    let fused = fuse_weighted(branches, &gates);
    Ok((
        fused,
        AmffTrace {
            branches: branches.to_vec(),
            descriptor,
            hidden_pre,
            hidden,
            gates,
        },
    ))
}

/// Accumulates parameter gradients into `grad` and returns the gradient
/// w.r.t. each branch.
pub fn amff_backward(
    params: &AmffParams,
    trace: &AmffTrace,
    grad_fused: &[f64],
    grad: &mut AmffParams,
) -> Vec<Vec<f64>> {
    let dim = grad_fused.len();
    let grad_gates: Vec<f64> = trace
        .branches
        .iter()
        .map(|b| b.iter().zip(grad_fused).map(|(v, g)| v * g).sum())
        .collect();
    let grad_z2: Vec<f64> = grad_gates
        .iter()
        .zip(&trace.gates)
        .map(|(dg, g)| dg * g * (1.0 - g))
        .collect();
    let grad_hidden = params.fc2.backward(&trace.hidden, &grad_z2, &mut grad.fc2);
    let grad_z1: Vec<f64> = grad_hidden
        .iter()
        .zip(&trace.hidden_pre)
        .map(|(g, &z)| if z > 0.0 { *g } else { 0.0 })
        .collect();
    let grad_desc = params.fc1.backward(&trace.descriptor, &grad_z1, &mut grad.fc1);
    trace
        .gates
        .iter()
        .zip(&grad_desc)
        .map(|(&g, &dd)| {
            let spread = dd / dim as f64;
            grad_fused.iter().map(|&gf| g * gf + spread).collect()
        })
        .collect()
}

/// Network shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    /// Pooled input width: twice the feature width.
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub amff: bool,
    pub amff_reduction: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            input_dim: 240,
            hidden: vec![128, 64],
            embed_dim: 32,
            amff: true,
            amff_reduction: 2,
        }
    }
}

/// Everything except the AMFF gate: fixed input standardization, hidden
/// layers, fixed branch projections (AMFF only) and the embedding head.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// Fixed affine standardization of the pooled input, `(x - shift) * scale`.
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub hidden: Vec<Linear>,
    /// Fixed maps of each branch (pooled input, then each hidden layer) onto
    /// the fusion width, which equals the last hidden width. Empty without AMFF.
    pub projections: Vec<Linear>,
    pub head: Linear,
}

impl MlpParams {
    pub fn input_dim(&self) -> usize {
        self.input_shift.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.head.n_out
    }

    fn validate(&self) -> Result<()> {
        let mut width = self.input_dim();
        if self.input_scale.len() != width {
            return Err(Error::contract("input scale length differs from input shift"));
        }
        for (i, layer) in self.hidden.iter().enumerate() {
            if layer.n_in != width {
                return Err(Error::contract(format!(
                    "hidden layer {i} expects {} inputs, previous width is {width}",
                    layer.n_in
                )));
            }
            width = layer.n_out;
        }
        if self.head.n_in != width {
            return Err(Error::contract("head input does not match the last hidden width"));
        }
        if !self.projections.is_empty() {
            let mut widths = vec![self.input_dim()];
            widths.extend(self.hidden.iter().map(|l| l.n_out));
            if self.projections.len() != widths.len()
                || self
                    .projections
                    .iter()
                    .zip(&widths)
                    .any(|(p, &w)| p.n_in != w || p.n_out != width)
            {
                return Err(Error::contract("branch projections do not match layer widths"));
            }
        }
        Ok(())
    }
}

/// Embedding network with an optional AMFF gate.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedder {
    pub mlp: MlpParams,
    pub amff: Option<AmffParams>,
}

/// Values recorded by [`Embedder::embed`] for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub pooled: Vec<f64>,
    /// Standardized input followed by each hidden activation.
    pub activations: Vec<Vec<f64>>,
    pub pre_activations: Vec<Vec<f64>>,
    pub amff: Option<AmffTrace>,
    /// Input of the embedding head.
    pub head_input: Vec<f64>,
    pub raw_embedding: Vec<f64>,
    /// `max(|x|, NORM_EPS)`.
    pub norm: f64,
    pub embedding: Vec<f64>,
}

/// Gradients shaped like the trainable parameters, plus the gradient
/// w.r.t. the pooled input.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderGrads {
    pub hidden: Vec<Linear>,
    pub head: Linear,
    pub amff: Option<AmffParams>,
    pub pooled: Vec<f64>,
}

impl EmbedderGrads {
    pub fn add_assign(&mut self, other: &EmbedderGrads) {
        for (a, b) in self.hidden.iter_mut().zip(&other.hidden) {
            a.add_assign(b);
        }
        self.head.add_assign(&other.head);
        if let (Some(a), Some(b)) = (self.amff.as_mut(), other.amff.as_ref()) {
            a.fc1.add_assign(&b.fc1);
            a.fc2.add_assign(&b.fc2);
        }
        for (a, b) in self.pooled.iter_mut().zip(&other.pooled) {
            *a += b;
        }
    }

    /// Trainable gradient tensors in [`Embedder::tensors_mut`] order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.hidden {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        if let Some(a) = &self.amff {
            out.extend([&a.fc1.weight[..], &a.fc1.bias, &a.fc2.weight, &a.fc2.bias]);
        }
        out
    }
}

impl Embedder {
    /// Seeded initialization; the input standardization starts as identity.
    pub fn init(config: &EmbedderConfig, seed: u64) -> Result<Self> {
        if config.input_dim == 0 || config.embed_dim == 0 || config.hidden.contains(&0) {
            return Err(Error::contract("all layer widths must be positive"));
        }
        if config.amff && config.hidden.is_empty() {
            return Err(Error::contract("AMFF needs at least one hidden layer"));
        }
        let mut rng = rng::seeded(seed);
        let mut width = config.input_dim;
        let mut hidden = Vec::new();
        for &h in &config.hidden {
            hidden.push(Linear::glorot(width, h, &mut rng));
            width = h;
        }
        let head = Linear::glorot(width, config.embed_dim, &mut rng);
        let (projections, amff) = if config.amff {
            let mut widths = vec![config.input_dim];
            widths.extend(&config.hidden);
            let projections = widths
                .iter()
                .map(|&w| Linear::glorot(w, width, &mut rng))
                .collect::<Vec<_>>();
            let amff = AmffParams::init(widths.len(), config.amff_reduction, &mut rng);
            (projections, Some(amff))
        } else {
            (Vec::new(), None)
        };
        Ok(Self {
            mlp: MlpParams {
                input_shift: vec![0.0; config.input_dim],
                input_scale: vec![1.0; config.input_dim],
                hidden,
                projections,
                head,
            },
            amff,
        })
    }

    pub fn from_parts(mlp: MlpParams, amff: Option<AmffParams>) -> Result<Self> {
        mlp.validate()?;
        match (&amff, mlp.projections.is_empty()) {
            (Some(a), false) if a.n_branches() == mlp.projections.len() => {}
            (None, true) => {}
            _ => return Err(Error::contract("AMFF gate and branch projections disagree")),
        }
        Ok(Self { mlp, amff })
    }

    pub fn config(&self) -> EmbedderConfig {
        EmbedderConfig {
            input_dim: self.mlp.input_dim(),
            hidden: self.mlp.hidden.iter().map(|l| l.n_out).collect(),
            embed_dim: self.mlp.embed_dim(),
            amff: self.amff.is_some(),
            amff_reduction: self
                .amff
                .as_ref()
                .map_or(2, |a| (a.n_branches() / a.fc1.n_out).max(1)),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.mlp.embed_dim()
    }

    /// Sets the fixed input standardization from per-dimension statistics.
    /// Dimensions with (near) zero spread keep unit scale.
    pub fn set_input_standardization(&mut self, mean: &[f64], std: &[f64]) {
        self.mlp.input_shift = mean.to_vec();
        self.mlp.input_scale = std.iter().map(|&s| if s > 1e-8 { 1.0 / s } else { 1.0 }).collect();
    }

    pub fn embed(&self, features: &FeatureMatrix) -> Result<(Vec<f64>, ForwardTrace)> {
        let pooled = pool_stats(features)?;
        self.embed_pooled(&pooled)
    }

    /// Forward pass from an already pooled input.
    pub fn embed_pooled(&self, pooled: &[f64]) -> Result<(Vec<f64>, ForwardTrace)> {
        if pooled.len() != self.mlp.input_dim() {
            return Err(Error::contract(format!(
                "embedder expects {} pooled inputs, got {}",
                self.mlp.input_dim(),
                pooled.len()
            )));
        }
        let input: Vec<f64> = pooled
            .iter()
            .zip(&self.mlp.input_shift)
            .zip(&self.mlp.input_scale)
            .map(|((x, m), s)| (x - m) * s)
            .collect();
        let mut activations = vec![input];
        let mut pre_activations = Vec::with_capacity(self.mlp.hidden.len());
        for layer in &self.mlp.hidden {
            let z = layer.forward(activations.last().unwrap());
            activations.push(z.iter().map(|&v| v.max(0.0)).collect());
            pre_activations.push(z);
        }
        let (head_input, amff) = match &self.amff {
            Some(gate) => {
                let branches: Vec<Vec<f64>> = self
                    .mlp
                    .projections
                    .iter()
                    .zip(&activations)
                    .map(|(p, a)| p.forward(a))
                    .collect();
                let (fused, trace) = amff_fuse(gate, &branches)?;
                (fused, Some(trace))
            }
            None => (activations.last().unwrap().clone(), None),
        };
        let raw = self.mlp.head.forward(&head_input);
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
        let embedding: Vec<f64> = raw.iter().map(|v| v / norm).collect();
        Ok((
            embedding.clone(),
            ForwardTrace {
                pooled: pooled.to_vec(),
                activations,
                pre_activations,
                amff,
                head_input,
                raw_embedding: raw,
                norm,
                embedding,
            },
        ))
    }

    pub fn zero_grads(&self) -> EmbedderGrads {
        EmbedderGrads {
            hidden: self.mlp.hidden.iter().map(Linear::zeros_like).collect(),
            head: self.mlp.head.zeros_like(),
            amff: self.amff.as_ref().map(AmffParams::zeros_like),
            pooled: vec![0.0; self.mlp.input_dim()],
        }
    }

    /// Exact gradients given `dL/d embedding` for the traced forward pass.
    pub fn backward(&self, trace: &ForwardTrace, grad_embedding: &[f64]) -> Result<EmbedderGrads> {
        let mut grads = self.zero_grads();
        self.backward_into(trace, grad_embedding, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Embedder::backward`] but accumulates into `grads`.
    pub fn backward_into(
        &self,
        trace: &ForwardTrace,
        grad_embedding: &[f64],
        grads: &mut EmbedderGrads,
    ) -> Result<()> {
        if grad_embedding.len() != self.embed_dim() || trace.embedding.len() != self.embed_dim() {
            return Err(Error::contract("embedding gradient does not match the network"));
        }
        if trace.activations.len() != self.mlp.hidden.len() + 1 {
            return Err(Error::contract("trace does not come from this network"));
        }
        let grad_raw: Vec<f64> = if trace.norm > NORM_EPS {
            let proj: f64 = trace.embedding.iter().zip(grad_embedding).map(|(e, g)| e * g).sum();
            grad_embedding
                .iter()
                .zip(&trace.embedding)
                .map(|(g, e)| (g - e * proj) / trace.norm)
                .collect()
        } else {
            grad_embedding.iter().map(|g| g / NORM_EPS).collect()
        };
        let grad_head_in = self.mlp.head.backward(&trace.head_input, &grad_raw, &mut grads.head);

        let n_hidden = self.mlp.hidden.len();
        // extra gradient arriving at each activation from the AMFF branches
        let mut branch_grads: Vec<Vec<f64>> = trace
            .activations
            .iter()
            .map(|a| vec![0.0; a.len()])
            .collect();
        match (&self.amff, &trace.amff, grads.amff.as_mut()) {
            (Some(gate), Some(amff_trace), Some(gate_grad)) => {
                let per_branch = amff_backward(gate, amff_trace, &grad_head_in, gate_grad);
                for (b, g) in per_branch.iter().enumerate() {
                    let proj = &self.mlp.projections[b];
                    let mut scratch = proj.zeros_like();
                    branch_grads[b] = proj.backward(&trace.activations[b], g, &mut scratch);
                }
            }
            (None, None, None) => {
                branch_grads[n_hidden] = grad_head_in;
            }
            _ => return Err(Error::contract("trace and network disagree on AMFF")),
        }

        let mut upstream = branch_grads[n_hidden].clone();
        for l in (0..n_hidden).rev() {
            let dz: Vec<f64> = upstream
                .iter()
                .zip(&trace.pre_activations[l])
                .map(|(g, &z)| if z > 0.0 { *g } else { 0.0 })
                .collect();
            let below = self.mlp.hidden[l].backward(&trace.activations[l], &dz, &mut grads.hidden[l]);
            upstream = below
                .iter()
                .zip(&branch_grads[l])
                .map(|(a, b)| a + b)
                .collect();
        }
        for ((acc, g), s) in grads.pooled.iter_mut().zip(&upstream).zip(&self.mlp.input_scale) {
            *acc += g * s;
        }
        Ok(())
    }

    /// Trainable tensors in a fixed order: hidden layers (weight, bias), head,
    /// then the AMFF gate. Fixed projections and standardization are excluded.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.mlp.hidden {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.mlp.head.weight);
        out.push(&mut self.mlp.head.bias);
        if let Some(a) = &mut self.amff {
            out.push(&mut a.fc1.weight);
            out.push(&mut a.fc1.bias);
            out.push(&mut a.fc2.weight);
            out.push(&mut a.fc2.bias);
        }
        out
    }

    /// Every stored tensor, fixed ones included, in serialization order:
    /// input shift and scale, hidden layers, head, projections, AMFF gate.
    pub fn all_tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.mlp.input_shift, &self.mlp.input_scale];
        for l in &self.mlp.hidden {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.push(&self.mlp.head.weight);
        out.push(&self.mlp.head.bias);
        for p in &self.mlp.projections {
            out.push(&p.weight);
            out.push(&p.bias);
        }
        if let Some(a) = &self.amff {
            out.extend([&a.fc1.weight[..], &a.fc1.bias, &a.fc2.weight, &a.fc2.bias]);
        }
        out
    }

    /// Mutable counterpart of [`Embedder::all_tensors`], same order.
    pub fn all_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.mlp.input_shift, &mut self.mlp.input_scale];
        for l in &mut self.mlp.hidden {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.mlp.head.weight);
        out.push(&mut self.mlp.head.bias);
        for p in &mut self.mlp.projections {
            out.push(&mut p.weight);
            out.push(&mut p.bias);
        }
        if let Some(a) = &mut self.amff {
            out.push(&mut a.fc1.weight);
            out.push(&mut a.fc1.bias);
            out.push(&mut a.fc2.weight);
            out.push(&mut a.fc2.bias);
        }
        out
    }
}

pub fn embed(
    mlp: &MlpParams,
    amff: Option<&AmffParams>,
    features: &FeatureMatrix,
) -> Result<(Vec<f64>, ForwardTrace)> {
    Embedder::from_parts(mlp.clone(), amff.cloned())?.embed(features)
}
