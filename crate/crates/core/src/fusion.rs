//! Prior-weighted logistic-regression fusion of subsystem scores.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, ProtocolTable};
use crate::error::{Error, Result};
use crate::eval::ScoreSet;
use crate::losses::softplus;

/// Fused score `bias + weights . s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub bias: f64,
    pub weights: Vec<f64>,
    #[serde(rename = "prior")]
    pub effective_prior: f64,
}

impl FusionModel {
    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::contract("fusion model needs at least one weight"));
        }
        if !self.bias.is_finite() || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite {
                what: "fusion model".into(),
                detail: format!("{self:?}"),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: FusionModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Trials x subsystems, rows in protocol order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub utt_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
}

impl ScoreMatrix {
    pub fn n_systems(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Appends the rows of `other` (pooled training).
    pub fn pooled(mut self, other: ScoreMatrix) -> Result<Self> {
        if other.n_systems() != self.n_systems() {
            return Err(Error::contract("pooled score matrices differ in subsystem count"));
        }
        self.utt_ids.extend(other.utt_ids);
        self.rows.extend(other.rows);
        self.labels.extend(other.labels);
        Ok(self)
    }

    /// Column `k` split into (bonafide, spoof) scores.
    pub fn column_by_label(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        split(self.rows.iter().map(|r| r[k]), &self.labels)
    }
}

fn split(values: impl Iterator<Item = f64>, labels: &[Label]) -> (Vec<f64>, Vec<f64>) {
    let mut bona = Vec::new();
    let mut spoof = Vec::new();
    for (v, l) in values.zip(labels) {
        match l {
            Label::Bonafide => bona.push(v),
            Label::Spoof => spoof.push(v),
        }
    }
    (bona, spoof)
}

/// Aligns K score sets on the protocol order. All sets must cover exactly
/// the same ids, and every id must be in the protocol.
pub fn align_scores(sets: &[ScoreSet], protocol: &ProtocolTable) -> Result<ScoreMatrix> {
    if sets.is_empty() {
        return Err(Error::contract("fusion needs at least one score set"));
    }
    let lookups: Vec<HashMap<&str, f64>> = sets
        .iter()
        .map(|s| s.entries().iter().map(|(id, v)| (id.as_str(), *v)).collect())
        .collect();
    let unknown: Vec<&str> = sets
        .iter()
        .flat_map(|s| s.entries().iter().map(|(id, _)| id.as_str()))
        .filter(|id| protocol.get(id).is_none())
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Coverage(format!("ids not in protocol: {}", unknown.join(", "))));
    }
    let universe: Vec<&str> = protocol
        .records()
        .iter()
        .map(|r| r.utt_id.as_str())
        .filter(|id| lookups.iter().any(|l| l.contains_key(id)))
        .collect();
    let mut problems = Vec::new();
    for (k, l) in lookups.iter().enumerate() {
        let missing: Vec<&str> = universe.iter().copied().filter(|id| !l.contains_key(id)).collect();
        if !missing.is_empty() {
            problems.push(format!("set {} missing {}", k + 1, missing.join(", ")));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Coverage(problems.join("; ")));
    }
    let rows = universe
        .iter()
        .map(|id| lookups.iter().map(|l| l[id]).collect())
        .collect();
    let labels = universe.iter().map(|id| protocol.get(id).unwrap().label).collect();
    Ok(ScoreMatrix {
        utt_ids: universe.iter().map(|s| s.to_string()).collect(),
        rows,
        labels,
    })
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Prior-weighted cross-entropy of the fused scores and its gradient
/// `(d/dbias, d/dweights)`.
pub fn fusion_objective(bias: f64, weights: &[f64], m: &ScoreMatrix, prior: f64) -> (f64, f64, Vec<f64>) {
    let theta = logit(prior);
    let n_bona = m.labels.iter().filter(|l| l.is_bonafide()).count() as f64;
    let n_spoof = m.len() as f64 - n_bona;
    let mut value = 0.0;
    let mut gb = 0.0;
    let mut gw = vec![0.0; weights.len()];
    for (row, label) in m.rows.iter().zip(&m.labels) {
        let f = bias + weights.iter().zip(row).map(|(w, s)| w * s).sum::<f64>();
        let (cost, slope) = match label {
            Label::Bonafide => {
                let c = prior / n_bona;
                (c * softplus(-(f + theta)), -c * sigmoid(-(f + theta)))
            }
            Label::Spoof => {
                let c = (1.0 - prior) / n_spoof;
                (c * softplus(f + theta), c * sigmoid(f + theta))
            }
        };
        value += cost;
        gb += slope;
        for (g, s) in gw.iter_mut().zip(row) {
            *g += slope * s;
        }
    }
    (value, gb, gw)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionOptions {
    pub max_iter: usize,
    /// Stop once the gradient infinity-norm falls below this.
    pub grad_tol: f64,
}

impl Default for FusionOptions {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            grad_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionFit {
    pub model: FusionModel,
    pub initial_objective: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Gradient descent with Armijo backtracking from `bias = 0`, `w = 1/K`.
pub fn train_fusion_with(m: &ScoreMatrix, prior: f64, opts: &FusionOptions) -> Result<FusionFit> {
    if !(prior > 0.0 && prior < 1.0) {
        return Err(Error::contract("fusion prior must lie in (0, 1)"));
    }
    let k = m.n_systems();
    if k == 0 {
        return Err(Error::contract("fusion needs at least one subsystem"));
    }
    if !m.labels.iter().any(|l| l.is_bonafide()) || !m.labels.iter().any(|l| !l.is_bonafide()) {
        return Err(Error::contract("fusion training needs both classes"));
    }
    let mut bias = 0.0;
    let mut weights = vec![1.0 / k as f64; k];
    let (mut value, mut gb, mut gw) = fusion_objective(bias, &weights, m, prior);
    let initial = value;
    let mut step: f64 = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let gnorm_inf = gw.iter().fold(gb.abs(), |a, g| a.max(g.abs()));
        if gnorm_inf < opts.grad_tol {
            converged = true;
            break;
        }
        let gsq = gb * gb + gw.iter().map(|g| g * g).sum::<f64>();
        step = (step * 2.0).min(1e8);
        loop {
            let cand_b = bias - step * gb;
            let cand_w: Vec<f64> = weights.iter().zip(&gw).map(|(w, g)| w - step * g).collect();
            let (cand_v, cb, cw) = fusion_objective(cand_b, &cand_w, m, prior);
            if cand_v <= value - 1e-4 * step * gsq {
                bias = cand_b;
                weights = cand_w;
                value = cand_v;
                gb = cb;
                gw = cw;
                break;
            }
            step *= 0.5;
            if step < 1e-30 {
                // no representable descent step left
                converged = true;
                break;
            }
        }
        iterations += 1;
        if converged {
            break;
        }
    }
    Ok(FusionFit {
        model: FusionModel {
            bias,
            weights,
            effective_prior: prior,
        },
        initial_objective: initial,
        objective: value,
        iterations,
        converged,
    })
}

pub fn train_fusion(m: &ScoreMatrix, effective_prior: f64) -> Result<FusionModel> {
    Ok(train_fusion_with(m, effective_prior, &FusionOptions::default())?.model)
}

pub fn apply_fusion(model: &FusionModel, row: &[f64]) -> Result<f64> {
    if row.len() != model.weights.len() {
        return Err(Error::contract(format!(
            "fusion model expects {} scores, got {}",
            model.weights.len(),
            row.len()
        )));
    }
    Ok(model.bias + model.weights.iter().zip(row).map(|(w, s)| w * s).sum::<f64>())
}

/// Fuses every row of an aligned matrix into a score set.
pub fn fuse_matrix(model: &FusionModel, m: &ScoreMatrix) -> Result<ScoreSet> {
    let entries = m
        .utt_ids
        .iter()
        .zip(&m.rows)
        .map(|(id, row)| Ok((id.clone(), apply_fusion(model, row)?)))
        .collect::<Result<Vec<_>>>()?;
    ScoreSet::new(entries)
}
