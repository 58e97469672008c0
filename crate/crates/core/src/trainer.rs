//! Deterministic training: Adam with an epoch-level cosine learning-rate
//! schedule, SAMO attractor refresh at the start of update epochs, and
//! selection of the epoch with the lowest dev minDCF.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, Partition, ProtocolTable, UtteranceRecord};
use crate::embedder::{pool_stats, Embedder, EmbedderConfig, Linear};
use crate::error::{Error, Result};
use crate::eval::{self, DcfParams, ScoreSet};
use crate::losses::{
    self, AttractorSet, ByteCursor, ClassWeights, OcSoftmaxParams, SamoConfig, SoftmaxHead,
};
use crate::rng;
use crate::store::FeatureStore;

/// Bias-corrected Adam moments for a list of tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(shapes: &[usize]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update of every tensor. Non-finite gradients abort before any
    /// parameter changes and name the offending tensor.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::contract(format!(
                "adam tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, ((p, g), m)) in params.iter().zip(grads).zip(&self.m).enumerate() {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::contract(format!("tensor {i} changed shape")));
            }
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "gradient".into(),
                    detail: format!("tensor {i}, element {j}"),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

pub fn adam_step(state: &mut AdamState, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<()> {
    state.step(params, grads, lr)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Softmax,
    OcSoftmax,
    Samo,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Softmax => "softmax",
            LossKind::OcSoftmax => "oc-softmax",
            LossKind::Samo => "samo",
        })
    }
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "softmax" => Ok(LossKind::Softmax),
            "oc-softmax" | "oc_softmax" | "ocsoftmax" => Ok(LossKind::OcSoftmax),
            "samo" => Ok(LossKind::Samo),
            other => Err(format!("unknown loss `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcConfig {
    pub alpha: f64,
    pub m0: f64,
    pub m1: f64,
}

impl Default for OcConfig {
    fn default() -> Self {
        Self {
            alpha: 20.0,
            m0: 0.9,
            m1: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    /// Class weighting for softmax and OC-Softmax; SAMO reads `samo.weighted`.
    pub weighted: bool,
    pub class_weights: ClassWeights,
    pub oc: OcConfig,
    pub samo: SamoConfig,
    pub embedder: EmbedderConfig,
    pub dcf: DcfParams,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            epochs: 30,
            batch_size: 32,
            loss: LossKind::Samo,
            weighted: true,
            class_weights: ClassWeights::default(),
            oc: OcConfig::default(),
            samo: SamoConfig::default(),
            embedder: EmbedderConfig::default(),
            dcf: DcfParams::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::contract("at least one epoch is required"));
        }
        if self.batch_size < 2 {
            return Err(Error::contract("batch size must be at least 2"));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::contract("learning rate must be finite and non-negative"));
        }
        ClassWeights::new(self.class_weights.bonafide, self.class_weights.spoof)?;
        if !(self.oc.m0 > self.oc.m1) {
            return Err(Error::contract("OC-Softmax needs m0 > m1"));
        }
        self.samo.validate()?;
        self.dcf.validate()
    }

    /// Class weights actually passed to the loss, if any.
    pub fn loss_weights(&self) -> Option<ClassWeights> {
        let on = match self.loss {
            LossKind::Samo => self.samo.weighted,
            _ => self.weighted,
        };
        on.then_some(self.class_weights)
    }
}

/// `base_lr * (1 + cos(pi * epoch / epochs)) / 2` for `epoch < epochs`.
pub fn cosine_lr(epoch: usize, config: &TrainConfig) -> Result<f64> {
    if epoch >= config.epochs {
        return Err(Error::contract(format!(
            "epoch {epoch} outside schedule of {} epochs",
            config.epochs
        )));
    }
    let phase = std::f64::consts::PI * epoch as f64 / config.epochs as f64;
    Ok(config.base_lr * 0.5 * (1.0 + phase.cos()))
}

/// Trainable loss-side parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LossHead {
    Softmax(SoftmaxHead),
    OcSoftmax(OcSoftmaxParams),
    Samo,
}

impl LossHead {
    pub fn init(config: &TrainConfig) -> Self {
        let mut r = rng::derived(config.seed, "loss-head");
        let dim = config.embedder.embed_dim;
        match config.loss {
            LossKind::Softmax => LossHead::Softmax(SoftmaxHead::init(dim, &mut r)),
            LossKind::OcSoftmax => {
                let mut p = OcSoftmaxParams::init(dim, &mut r);
                p.alpha = config.oc.alpha;
                p.m0 = config.oc.m0;
                p.m1 = config.oc.m1;
                LossHead::OcSoftmax(p)
            }
            LossKind::Samo => LossHead::Samo,
        }
    }

    pub fn kind(&self) -> LossKind {
        match self {
            LossHead::Softmax(_) => LossKind::Softmax,
            LossHead::OcSoftmax(_) => LossKind::OcSoftmax,
            LossHead::Samo => LossKind::Samo,
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        match self {
            LossHead::Softmax(h) => vec![&h.linear.weight, &h.linear.bias],
            LossHead::OcSoftmax(p) => vec![&p.w],
            LossHead::Samo => Vec::new(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            LossHead::Softmax(h) => vec![&mut h.linear.weight, &mut h.linear.bias],
            LossHead::OcSoftmax(p) => vec![&mut p.w],
            LossHead::Samo => Vec::new(),
        }
    }
}

/// Inference scorer matching a loss head.
#[derive(Debug, Clone, PartialEq)]
pub enum Scorer<'a> {
    Softmax(&'a SoftmaxHead),
    OcSoftmax(&'a OcSoftmaxParams),
    Samo(&'a AttractorSet),
}

impl Scorer<'_> {
    pub fn score(&self, embedding: &[f64]) -> Result<f64> {
        match self {
            Scorer::Softmax(h) => Ok(h.score(embedding)),
            Scorer::OcSoftmax(p) => losses::oc_score(embedding, p),
            Scorer::Samo(a) => losses::samo_score(embedding, a),
        }
    }
}

/// Best-epoch snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub embedder: Embedder,
    pub head: LossHead,
    /// Training attractors (SAMO only).
    pub attractors: Option<AttractorSet>,
    pub epoch: usize,
    pub dev_min_dcf: f64,
    pub dev_eer: f64,
    pub config: TrainConfig,
}

pub const MODEL_FILE: &str = "model.spk";
pub const ATTRACTOR_FILE: &str = "attractors.atr";
pub const META_FILE: &str = "checkpoint.json";
const SPK_MAGIC: &[u8; 4] = b"SPK1";
const SPK_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointMeta {
    epoch: usize,
    dev_min_dcf: f64,
    dev_eer: f64,
    loss: LossKind,
    config: TrainConfig,
}

fn loss_code(kind: LossKind) -> u8 {
    match kind {
        LossKind::Softmax => 0,
        LossKind::OcSoftmax => 1,
        LossKind::Samo => 2,
    }
}

impl Checkpoint {
    /// Scorer for this checkpoint; SAMO uses `attractors` when given,
    /// otherwise the stored training attractors.
    pub fn scorer<'a>(&'a self, attractors: Option<&'a AttractorSet>) -> Result<Scorer<'a>> {
        Ok(match &self.head {
            LossHead::Softmax(h) => Scorer::Softmax(h),
            LossHead::OcSoftmax(p) => Scorer::OcSoftmax(p),
            LossHead::Samo => Scorer::Samo(
                attractors
                    .or(self.attractors.as_ref())
                    .ok_or_else(|| Error::contract("SAMO checkpoint has no attractors"))?,
            ),
        })
    }

    /// `SPK1`, version, network shape and loss kind, then every tensor as
    /// f64 LE: embedder tensors in declaration order followed by the loss head.
    pub fn model_bytes(&self) -> Vec<u8> {
        let cfg = self.embedder.config();
        let mut out = Vec::new();
        out.extend_from_slice(SPK_MAGIC);
        out.extend_from_slice(&SPK_VERSION.to_le_bytes());
        out.extend_from_slice(&(cfg.input_dim as u32).to_le_bytes());
        out.extend_from_slice(&(cfg.hidden.len() as u32).to_le_bytes());
        for h in &cfg.hidden {
            out.extend_from_slice(&(*h as u32).to_le_bytes());
        }
        out.extend_from_slice(&(cfg.embed_dim as u32).to_le_bytes());
        out.push(u8::from(cfg.amff));
        let reduced = self.embedder.amff.as_ref().map_or(0, |a| a.fc1.n_out);
        out.extend_from_slice(&(reduced as u32).to_le_bytes());
        out.push(loss_code(self.head.kind()));
        for t in self.embedder.all_tensors().into_iter().chain(self.head.tensors()) {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    fn from_model_bytes(bytes: &[u8], meta: CheckpointMeta) -> std::result::Result<Self, String> {
        let mut cur = ByteCursor { bytes, pos: 0 };
        if cur.take(4)? != SPK_MAGIC {
            return Err("missing SPK1 header".into());
        }
        let version = cur.u32()?;
        if version != SPK_VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let input_dim = cur.u32()? as usize;
        let n_hidden = cur.u32()? as usize;
        let hidden = (0..n_hidden)
            .map(|_| cur.u32().map(|v| v as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let embed_dim = cur.u32()? as usize;
        let amff = cur.u8()? != 0;
        let reduced = cur.u32()? as usize;
        let kind = cur.u8()?;
        if kind != loss_code(meta.loss) {
            return Err("loss kind differs between model file and metadata".into());
        }
        let n_branches = n_hidden + 1;
        let shape = EmbedderConfig {
            input_dim,
            hidden,
            embed_dim,
            amff,
            amff_reduction: if amff { (n_branches / reduced.max(1)).max(1) } else { 2 },
        };
        let mut embedder = Embedder::init(&shape, 0).map_err(|e| e.to_string())?;
        if let Some(a) = &mut embedder.amff {
            if a.fc1.n_out != reduced {
                a.fc1 = Linear::zeros(n_branches, reduced);
                a.fc2 = Linear::zeros(reduced, n_branches);
            }
        }
        for t in embedder.all_tensors_mut() {
            for v in t.iter_mut() {
                *v = cur.f64()?;
            }
        }
        let mut head = match meta.loss {
            LossKind::Softmax => LossHead::Softmax(SoftmaxHead {
                linear: Linear::zeros(embed_dim, 2),
            }),
            LossKind::OcSoftmax => LossHead::OcSoftmax(OcSoftmaxParams {
                w: vec![0.0; embed_dim],
                alpha: meta.config.oc.alpha,
                m0: meta.config.oc.m0,
                m1: meta.config.oc.m1,
            }),
            LossKind::Samo => LossHead::Samo,
        };
        for t in head.tensors_mut() {
            for v in t.iter_mut() {
                *v = cur.f64()?;
            }
        }
        if cur.pos != bytes.len() {
            return Err("trailing bytes after model tensors".into());
        }
        Ok(Self {
            embedder,
            head,
            attractors: None,
            epoch: meta.epoch,
            dev_min_dcf: meta.dev_min_dcf,
            dev_eer: meta.dev_eer,
            config: meta.config,
        })
    }

    fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            epoch: self.epoch,
            dev_min_dcf: self.dev_min_dcf,
            dev_eer: self.dev_eer,
            loss: self.head.kind(),
            config: self.config.clone(),
        }
    }

    /// Writes `model.spk`, `checkpoint.json` and, for SAMO, `attractors.atr`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let model = dir.join(MODEL_FILE);
        fs::write(&model, self.model_bytes()).map_err(|e| Error::io(&model, e))?;
        if let Some(a) = &self.attractors {
            a.save(&dir.join(ATTRACTOR_FILE))?;
        }
        let meta = dir.join(META_FILE);
        let json = serde_json::to_string_pretty(&self.meta())? + "\n";
        fs::write(&meta, json).map_err(|e| Error::io(&meta, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)?;
        let model_path = dir.join(MODEL_FILE);
        let bytes = fs::read(&model_path).map_err(|e| Error::io(&model_path, e))?;
        let samo = meta.loss == LossKind::Samo;
        let mut ckpt = Self::from_model_bytes(&bytes, meta).map_err(|m| Error::bad_file(&model_path, m))?;
        if samo {
            ckpt.attractors = Some(AttractorSet::load(&dir.join(ATTRACTOR_FILE))?);
        }
        Ok(ckpt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub dev_eer: f64,
    pub dev_min_dcf: f64,
    /// Whether the attractors were recomputed at the start of this epoch.
    pub attractors_refreshed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub history: Vec<EpochLog>,
}

/// Pooled statistics of a set of records, in record order.
pub fn pooled_inputs(store: &FeatureStore, records: &[&UtteranceRecord]) -> Result<Vec<Vec<f64>>> {
    let ids: Vec<&str> = records.iter().map(|r| r.utt_id.as_str()).collect();
    store.require(&ids)?.into_iter().map(pool_stats).collect()
}

/// Attractors from the current model's embeddings of bonafide records.
pub fn attractors_from(embedder: &Embedder, records: &[&UtteranceRecord], pooled: &[Vec<f64>]) -> Result<AttractorSet> {
    let mut by_speaker: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for (r, x) in records.iter().zip(pooled) {
        if r.label == Label::Bonafide {
            let (e, _) = embedder.embed_pooled(x)?;
            by_speaker.entry(r.speaker_id.clone()).or_default().push(e);
        }
    }
    losses::samo_init_attractors(&by_speaker)
}

pub fn score_pooled(embedder: &Embedder, scorer: &Scorer<'_>, pooled: &[Vec<f64>]) -> Result<Vec<f64>> {
    pooled
        .iter()
        .map(|x| {
            let (e, _) = embedder.embed_pooled(x)?;
            scorer.score(&e)
        })
        .collect()
}

/// Optional inputs for [`train_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct TrainExtras<'a> {
    /// Enrollment records (features in the dev store) used to build dev
    /// scoring attractors when `samo.use_enrollment` is set.
    pub enrollment: Option<&'a ProtocolTable>,
}

pub fn train(protocol: &ProtocolTable, train_store: &FeatureStore, dev_store: &FeatureStore, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(protocol, train_store, dev_store, config, TrainExtras::default())
}

struct Batch<'a> {
    pooled: Vec<&'a [f64]>,
    labels: Vec<Label>,
    speakers: Vec<&'a str>,
}

pub fn train_with(
    protocol: &ProtocolTable,
    train_store: &FeatureStore,
    dev_store: &FeatureStore,
    config: &TrainConfig,
    extras: TrainExtras<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    protocol.require_both_labels(Partition::Train)?;
    protocol.require_both_labels(Partition::Dev)?;
    let train_recs: Vec<&UtteranceRecord> = protocol.partition(Partition::Train).collect();
    let dev_recs: Vec<&UtteranceRecord> = protocol.partition(Partition::Dev).collect();
    let train_x = pooled_inputs(train_store, &train_recs)?;
    let dev_x = pooled_inputs(dev_store, &dev_recs)?;
    let dev_labels: Vec<Label> = dev_recs.iter().map(|r| r.label).collect();
    let enroll = match (config.loss, config.samo.use_enrollment, extras.enrollment) {
        (LossKind::Samo, true, Some(table)) => {
            let recs: Vec<&UtteranceRecord> = table.records().iter().collect();
            let x = pooled_inputs(dev_store, &recs)?;
            Some((recs, x))
        }
        _ => None,
    };
    let input_dim = train_x[0].len();
    if input_dim != config.embedder.input_dim {
        return Err(Error::contract(format!(
            "features pool to {input_dim} inputs, network expects {}",
            config.embedder.input_dim
        )));
    }

    let mut embedder = Embedder::init(&config.embedder, config.seed)?;
    let (mean, std) = column_stats(&train_x);
    embedder.set_input_standardization(&mean, &std);
    let mut head = LossHead::init(config);
    let shapes: Vec<usize> = embedder
        .tensors_mut()
        .into_iter()
        .map(|t| t.len())
        .chain(head.tensors().iter().map(|t| t.len()))
        .collect();
    let mut adam = AdamState::new(&shapes);
    let weights = config.loss_weights();
    let mut order_rng = rng::derived(config.seed, "batch-order");
    let mut order: Vec<usize> = (0..train_recs.len()).collect();
    let mut attractors: Option<AttractorSet> = None;
    let mut best: Option<Checkpoint> = None;
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = cosine_lr(epoch, config)?;
        let refresh = config.loss == LossKind::Samo && config.samo.is_update_epoch(epoch);
        if refresh {
            attractors = Some(attractors_from(&embedder, &train_recs, &train_x)?);
        }
        rng::shuffle(&mut order_rng, &mut order);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch = Batch {
                pooled: idx.iter().map(|&i| train_x[i].as_slice()).collect(),
                labels: idx.iter().map(|&i| train_recs[i].label).collect(),
                speakers: idx.iter().map(|&i| train_recs[i].speaker_id.as_str()).collect(),
            };
            let (loss, grads, head_grads) = batch_gradients(&embedder, &head, attractors.as_ref(), config, weights.as_ref(), &batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    what: "training loss".into(),
                    detail: format!("epoch {epoch}, batch {b}"),
                });
            }
            loss_sum += loss * idx.len() as f64;
            let grad_tensors: Vec<&[f64]> = grads
                .tensors()
                .into_iter()
                .chain(head_grads.iter().map(Vec::as_slice))
                .collect();
            let mut params: Vec<&mut [f64]> = embedder.tensors_mut();
            params.extend(head.tensors_mut());
            adam.step(&mut params, &grad_tensors, lr).map_err(|e| match e {
                Error::NonFinite { what, detail } => Error::NonFinite {
                    what,
                    detail: format!("{detail} (epoch {epoch}, batch {b})"),
                },
                other => other,
            })?;
        }

        let dev_attractors = match &enroll {
            Some((recs, x)) => Some(attractors_from(&embedder, recs, x)?),
            None => None,
        };
        let snapshot = Checkpoint {
            embedder: embedder.clone(),
            head: head.clone(),
            attractors: attractors.clone(),
            epoch,
            dev_min_dcf: 0.0,
            dev_eer: 0.0,
            config: config.clone(),
        };
        let dev_scores = score_pooled(&embedder, &snapshot.scorer(dev_attractors.as_ref())?, &dev_x)?;
        let m = dev_metrics(&dev_scores, &dev_labels, &config.dcf)?;
        history.push(EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / train_recs.len() as f64,
            dev_eer: m.eer,
            dev_min_dcf: m.min_dcf,
            attractors_refreshed: refresh,
        });
        if best.as_ref().is_none_or(|b| m.min_dcf < b.dev_min_dcf) {
            best = Some(Checkpoint {
                dev_min_dcf: m.min_dcf,
                dev_eer: m.eer,
                ..snapshot
            });
        }
    }
    Ok(TrainOutcome {
        best: best.expect("at least one epoch ran"),
        history,
    })
}

fn column_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    (mean, var.into_iter().map(|s| (s / n).sqrt()).collect())
}

pub fn dev_metrics(scores: &[f64], labels: &[Label], dcf: &DcfParams) -> Result<eval::Metrics> {
    let (mut bona, mut spoof) = (Vec::new(), Vec::new());
    for (&s, l) in scores.iter().zip(labels) {
        if l.is_bonafide() {
            bona.push(s);
        } else {
            spoof.push(s);
        }
    }
    eval::metrics(&bona, &spoof, dcf)
}

type BatchGrads = (f64, crate::embedder::EmbedderGrads, Vec<Vec<f64>>);

fn batch_gradients(
    embedder: &Embedder,
    head: &LossHead,
    attractors: Option<&AttractorSet>,
    config: &TrainConfig,
    weights: Option<&ClassWeights>,
    batch: &Batch<'_>,
) -> Result<BatchGrads> {
    let mut embeddings = Vec::with_capacity(batch.pooled.len());
    let mut traces = Vec::with_capacity(batch.pooled.len());
    for x in &batch.pooled {
        let (e, t) = embedder.embed_pooled(x)?;
        embeddings.push(e);
        traces.push(t);
    }
    let (loss, grad_embeddings, head_grads) = match head {
        LossHead::Softmax(h) => {
            let logits: Vec<[f64; 2]> = embeddings.iter().map(|e| h.logits(e)).collect();
            let unit = ClassWeights {
                bonafide: 1.0,
                spoof: 1.0,
            };
            let (loss, dlogits) = losses::weighted_softmax_loss(&logits, &batch.labels, weights.unwrap_or(&unit))?;
            let mut grad_head = h.linear.zeros_like();
            let grads: Vec<Vec<f64>> = embeddings
                .iter()
                .zip(&dlogits)
                .map(|(e, dz)| h.linear.backward(e, dz, &mut grad_head))
                .collect();
            (loss, grads, vec![grad_head.weight, grad_head.bias])
        }
        LossHead::OcSoftmax(p) => {
            let out = losses::oc_softmax_loss(p, &embeddings, &batch.labels, weights)?;
            (out.loss, out.grad_embeddings, vec![out.grad_w])
        }
        LossHead::Samo => {
            let state = attractors.ok_or_else(|| Error::contract("SAMO training without attractors"))?;
            let out = losses::samo_loss(state, &config.samo, &embeddings, &batch.labels, &batch.speakers, weights)?;
            (out.loss, out.grad_embeddings, Vec::new())
        }
    };
    let mut grads = embedder.zero_grads();
    for (t, g) in traces.iter().zip(&grad_embeddings) {
        embedder.backward_into(t, g, &mut grads)?;
    }
    Ok((loss, grads, head_grads))
}

/// Scores every record with a checkpoint, in record order.
pub fn score_records(
    ckpt: &Checkpoint,
    store: &FeatureStore,
    records: &[&UtteranceRecord],
    attractors: Option<&AttractorSet>,
) -> Result<ScoreSet> {
    let x = pooled_inputs(store, records)?;
    let scores = score_pooled(&ckpt.embedder, &ckpt.scorer(attractors)?, &x)?;
    ScoreSet::new(
        records
            .iter()
            .zip(scores)
            .map(|(r, s)| (r.utt_id.clone(), s))
            .collect(),
    )
}
