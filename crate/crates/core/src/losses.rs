//! Weighted softmax, OC-Softmax and SAMO losses with exact gradients, plus
//! the cosine scores used at inference.
//!
//! Both one-class losses share the per-sample form
//! `softplus(alpha * (m_y - s) * (-1)^y)` with `y = 0` for bonafide and
//! `y = 1` for spoof, averaged over the batch with optional per-class
//! multipliers (divided by the batch size, not by the weight sum).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::embedder::Linear;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub bonafide: f64,
    pub spoof: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self {
            bonafide: 0.9,
            spoof: 0.1,
        }
    }
}

impl ClassWeights {
    pub fn new(bonafide: f64, spoof: f64) -> Result<Self> {
        if !(bonafide > 0.0 && spoof > 0.0) {
            return Err(Error::contract("class weights must be positive"));
        }
        Ok(Self { bonafide, spoof })
    }

    pub fn of(&self, label: Label) -> f64 {
        match label {
            Label::Bonafide => self.bonafide,
            Label::Spoof => self.spoof,
        }
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Per-sample one-class margin loss and its derivative w.r.t. the score.
pub fn margin_loss(score: f64, label: Label, alpha: f64, m_bonafide: f64, m_spoof: f64) -> (f64, f64) {
    match label {
        Label::Bonafide => {
            let z = alpha * (m_bonafide - score);
            (softplus(z), -alpha * sigmoid(z))
        }
        Label::Spoof => {
            let z = -(alpha * (m_spoof - score));
            (softplus(z), alpha * sigmoid(z))
        }
    }
}

fn batch_weight(weights: Option<&ClassWeights>, label: Label) -> f64 {
    weights.map_or(1.0, |w| w.of(label))
}

/// Class-weighted cross-entropy over two-column logits (column 0 is
/// bonafide). Returns the mean loss and `dL/dlogits`.
pub fn weighted_softmax_loss(
    logits: &[[f64; 2]],
    labels: &[Label],
    weights: &ClassWeights,
) -> Result<(f64, Vec<[f64; 2]>)> {
    if logits.is_empty() {
        return Err(Error::contract("softmax loss over an empty batch"));
    }
    if logits.len() != labels.len() {
        return Err(Error::contract("logits and labels differ in length"));
    }
    let n = logits.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (z, &label) in logits.iter().zip(labels) {
        let w = weights.of(label);
        let y = label.index();
        let top = z[0].max(z[1]);
        let lse = top + ((z[0] - top).exp() + (z[1] - top).exp()).ln();
        total += w * (lse - z[y]);
        let mut g = [(z[0] - lse).exp(), (z[1] - lse).exp()];
        g[y] -= 1.0;
        grads.push([w * g[0] / n, w * g[1] / n]);
    }
    Ok((total / n, grads))
}

/// Two-way linear classifier on the embedding used with the softmax loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxHead {
    pub linear: Linear,
}

impl SoftmaxHead {
    pub fn init(embed_dim: usize, rng: &mut impl RngCore) -> Self {
        Self {
            linear: Linear::glorot(embed_dim, 2, rng),
        }
    }

    pub fn logits(&self, embedding: &[f64]) -> [f64; 2] {
        let z = self.linear.forward(embedding);
        [z[0], z[1]]
    }

    /// Log posterior odds of bonafide, `z_bonafide - z_spoof`.
    pub fn score(&self, embedding: &[f64]) -> f64 {
        let z = self.logits(embedding);
        z[0] - z[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcSoftmaxParams {
    /// Trainable bonafide direction (normalized at use).
    pub w: Vec<f64>,
    pub alpha: f64,
    pub m0: f64,
    pub m1: f64,
}

impl OcSoftmaxParams {
    pub fn new(w: Vec<f64>) -> Self {
        Self {
            w,
            alpha: 20.0,
            m0: 0.9,
            m1: 0.2,
        }
    }

    pub fn init(embed_dim: usize, rng: &mut impl RngCore) -> Self {
        let w = (0..embed_dim).map(|_| rng::uniform(rng, -1.0, 1.0)).collect();
        Self::new(w)
    }

    fn direction(&self) -> Result<(Vec<f64>, f64)> {
        let n = norm(&self.w);
        if !(n > 0.0) {
            return Err(Error::contract("OC-Softmax direction has zero norm"));
        }
        Ok((self.w.iter().map(|v| v / n).collect(), n))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcSoftmaxOutput {
    pub loss: f64,
    pub grad_embeddings: Vec<Vec<f64>>,
    pub grad_w: Vec<f64>,
    pub scores: Vec<f64>,
}

/// OC-Softmax with score `s = w_hat . x` for unit embeddings `x`.
pub fn oc_softmax_loss(
    params: &OcSoftmaxParams,
    embeddings: &[Vec<f64>],
    labels: &[Label],
    weights: Option<&ClassWeights>,
) -> Result<OcSoftmaxOutput> {
    if embeddings.is_empty() {
        return Err(Error::contract("OC-Softmax loss over an empty batch"));
    }
    if embeddings.len() != labels.len() {
        return Err(Error::contract("embeddings and labels differ in length"));
    }
    let (w_hat, w_norm) = params.direction()?;
    let n = embeddings.len() as f64;
    let mut total = 0.0;
    let mut grad_embeddings = Vec::with_capacity(embeddings.len());
    let mut grad_w = vec![0.0; w_hat.len()];
    let mut scores = Vec::with_capacity(embeddings.len());
    for (x, &label) in embeddings.iter().zip(labels) {
        if x.len() != w_hat.len() {
            return Err(Error::contract("embedding dimension differs from the OC direction"));
        }
        let s = dot(&w_hat, x);
        let (l, dl_ds) = margin_loss(s, label, params.alpha, params.m0, params.m1);
        let u = batch_weight(weights, label);
        total += u * l;
        let g = u * dl_ds / n;
        grad_embeddings.push(w_hat.iter().map(|w| g * w).collect());
        for ((gw, &xi), &wi) in grad_w.iter_mut().zip(x).zip(&w_hat) {
            *gw += g * (xi - s * wi) / w_norm;
        }
        scores.push(s);
    }
    Ok(OcSoftmaxOutput {
        loss: total / n,
        grad_embeddings,
        grad_w,
        scores,
    })
}

/// Cosine between an embedding and the OC-Softmax direction.
pub fn oc_score(embedding: &[f64], params: &OcSoftmaxParams) -> Result<f64> {
    let (w_hat, _) = params.direction()?;
    let n = norm(embedding);
    if n == 0.0 {
        return Ok(0.0);
    }
    Ok(dot(&w_hat, embedding) / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamoConfig {
    pub alpha: f64,
    pub m0: f64,
    pub m1: f64,
    /// Recompute attractors every this many epochs.
    pub update_interval: usize,
    /// Score every training utterance against its nearest attractor.
    pub maxscore: bool,
    /// Build inference attractors from enrollment utterances.
    pub use_enrollment: bool,
    /// Apply the class weights inside the loss (the trainer passes them).
    pub weighted: bool,
}

impl Default for SamoConfig {
    fn default() -> Self {
        Self {
            alpha: 20.0,
            m0: 0.7,
            m1: 0.0,
            update_interval: 1,
            maxscore: true,
            use_enrollment: false,
            weighted: true,
        }
    }
}

impl SamoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.m0 > self.m1) {
            return Err(Error::contract("SAMO needs m0 > m1"));
        }
        if self.update_interval == 0 {
            return Err(Error::contract("SAMO update interval must be at least 1"));
        }
        Ok(())
    }

    pub fn is_update_epoch(&self, epoch: usize) -> bool {
        epoch % self.update_interval.max(1) == 0
    }
}

/// Unit-norm attractors keyed by speaker, iterated in lexicographic order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttractorSet {
    attractors: BTreeMap<String, Vec<f64>>,
}

const ATR_MAGIC: &[u8; 4] = b"ATR1";

impl AttractorSet {
    pub fn len(&self) -> usize {
        self.attractors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attractors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.attractors.values().next().map_or(0, Vec::len)
    }

    pub fn get(&self, speaker: &str) -> Option<&[f64]> {
        self.attractors.get(speaker).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.attractors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Highest cosine to any attractor; ties go to the lexicographically
    /// smallest speaker.
    pub fn nearest(&self, x: &[f64]) -> Option<(&str, f64)> {
        let mut best: Option<(&str, f64)> = None;
        for (speaker, a) in self.iter() {
            let s = dot(a, x);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((speaker, s));
            }
        }
        best
    }

    /// FNV-1a over the serialized bytes.
    pub fn content_hash(&self) -> u64 {
        rng::fnv1a(&self.to_bytes())
    }

    /// `ATR1`, count and dimension as u32 LE, then per speaker a u32 LE byte
    /// length, the UTF-8 id and `dim` f64 LE values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(ATR_MAGIC);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for (speaker, a) in self.iter() {
            out.extend_from_slice(&(speaker.len() as u32).to_le_bytes());
            out.extend_from_slice(speaker.as_bytes());
            for v in a {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut cur = ByteCursor { bytes, pos: 0 };
        if cur.take(4)? != ATR_MAGIC {
            return Err("missing ATR1 header".into());
        }
        let count = cur.u32()? as usize;
        let dim = cur.u32()? as usize;
        let mut attractors = BTreeMap::new();
        for _ in 0..count {
            let len = cur.u32()? as usize;
            let id = std::str::from_utf8(cur.take(len)?)
                .map_err(|e| e.to_string())?
                .to_string();
            let v = (0..dim).map(|_| cur.f64()).collect::<std::result::Result<Vec<_>, _>>()?;
            if attractors.insert(id.clone(), v).is_some() {
                return Err(format!("duplicate attractor `{id}`"));
            }
        }
        if cur.pos != bytes.len() {
            return Err("trailing bytes after attractors".into());
        }
        Ok(Self { attractors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|m| Error::bad_file(path, m))
    }
}

pub(crate) struct ByteCursor<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> ByteCursor<'a> {
    pub fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated at byte {}", self.pos)),
        }
    }

    pub fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Attractor of each speaker = normalized mean of its bonafide embeddings.
pub fn samo_init_attractors(embeddings_by_speaker: &BTreeMap<String, Vec<Vec<f64>>>) -> Result<AttractorSet> {
    if embeddings_by_speaker.is_empty() {
        return Err(Error::contract("no speakers to build attractors from"));
    }
    let mut attractors = BTreeMap::new();
    let mut dim = None;
    for (speaker, list) in embeddings_by_speaker {
        let first = list
            .first()
            .ok_or_else(|| Error::contract(format!("speaker `{speaker}` has no bonafide embeddings")))?;
        let d = *dim.get_or_insert(first.len());
        if list.iter().any(|e| e.len() != d) {
            return Err(Error::contract("embeddings differ in dimension"));
        }
        let mut mean = vec![0.0; d];
        for e in list {
            for (m, v) in mean.iter_mut().zip(e) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= list.len() as f64;
        }
        let n = norm(&mean);
        if !(n > 1e-12) {
            return Err(Error::ZeroNorm(speaker.clone()));
        }
        attractors.insert(speaker.clone(), mean.into_iter().map(|m| m / n).collect());
    }
    Ok(AttractorSet { attractors })
}

/// Recomputes the attractors on update epochs (`epoch % update_interval == 0`)
/// and otherwise returns `state` unchanged.
pub fn samo_update_attractors(
    state: &AttractorSet,
    epoch: usize,
    config: &SamoConfig,
    fresh_embeddings_by_speaker: &BTreeMap<String, Vec<Vec<f64>>>,
) -> Result<AttractorSet> {
    config.validate()?;
    if config.is_update_epoch(epoch) {
        samo_init_attractors(fresh_embeddings_by_speaker)
    } else {
        Ok(state.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamoOutput {
    pub loss: f64,
    pub grad_embeddings: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
}

/// SAMO loss against fixed attractors. Spoofs are always scored against
/// their nearest attractor; bonafide utterances against their own speaker's
/// attractor unless `maxscore` is set. The gradient passes through the
/// selected attractor only.
pub fn samo_loss(
    state: &AttractorSet,
    config: &SamoConfig,
    embeddings: &[Vec<f64>],
    labels: &[Label],
    speaker_ids: &[&str],
    weights: Option<&ClassWeights>,
) -> Result<SamoOutput> {
    config.validate()?;
    if embeddings.is_empty() {
        return Err(Error::contract("SAMO loss over an empty batch"));
    }
    if embeddings.len() != labels.len() || embeddings.len() != speaker_ids.len() {
        return Err(Error::contract("embeddings, labels and speakers differ in length"));
    }
    if state.is_empty() {
        return Err(Error::contract("SAMO loss needs at least one attractor"));
    }
    let n = embeddings.len() as f64;
    let mut total = 0.0;
    let mut grad_embeddings = Vec::with_capacity(embeddings.len());
    let mut scores = Vec::with_capacity(embeddings.len());
    for ((x, &label), &speaker) in embeddings.iter().zip(labels).zip(speaker_ids) {
        if x.len() != state.dim() {
            return Err(Error::contract("embedding dimension differs from the attractors"));
        }
        let target = if config.maxscore || label == Label::Spoof {
            state.nearest(x).map(|(s, _)| s).unwrap()
        } else {
            speaker
        };
        let attractor = state
            .get(target)
            .ok_or_else(|| Error::MissingAttractor(target.to_string()))?;
        let s = dot(attractor, x);
        let (l, dl_ds) = margin_loss(s, label, config.alpha, config.m0, config.m1);
        let u = batch_weight(weights, label);
        total += u * l;
        let g = u * dl_ds / n;
        grad_embeddings.push(attractor.iter().map(|a| g * a).collect());
        scores.push(s);
    }
    Ok(SamoOutput {
        loss: total / n,
        grad_embeddings,
        scores,
    })
}

/// Highest cosine between the embedding and any attractor.
pub fn samo_score(embedding: &[f64], attractors: &AttractorSet) -> Result<f64> {
    if attractors.is_empty() {
        return Err(Error::contract("cannot score against an empty attractor set"));
    }
    if embedding.len() != attractors.dim() {
        return Err(Error::contract("embedding dimension differs from the attractors"));
    }
    let n = norm(embedding);
    if n == 0.0 {
        return Ok(0.0);
    }
    let unit: Vec<f64> = embedding.iter().map(|v| v / n).collect();
    Ok(attractors.nearest(&unit).map(|(_, s)| s).unwrap())
}
