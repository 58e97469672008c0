//! Fusion properties against independent references: a zooming grid search
//! for K = 1 and per-subsystem minDCF for non-degradation.
#![allow(dead_code)]

use antispoof_core::eval::{self, DcfParams};
use antispoof_core::fusion::{fuse_matrix, fusion_objective, train_fusion_with, FusionOptions, ScoreMatrix};
use antispoof_core::rng::{self, ChaCha8Rng};
use antispoof_core::Label;

pub fn labelled(rows: Vec<Vec<f64>>, labels: Vec<Label>) -> ScoreMatrix {
    ScoreMatrix {
        utt_ids: (0..rows.len()).map(|i| format!("t{i:05}")).collect(),
        rows,
        labels,
    }
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1 = rng::uniform(r, f64::MIN_POSITIVE, 1.0);
    let u2 = rng::uniform(r, 0.0, 1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// `k` subsystems sharing a common noise component; subsystem `j` has its
/// own separation, scale and offset.
pub fn correlated_subsystems(r: &mut ChaCha8Rng, n: usize, k: usize) -> ScoreMatrix {
    let sep: Vec<f64> = (0..k).map(|_| rng::uniform(r, 0.5, 3.0)).collect();
    let scale: Vec<f64> = (0..k).map(|_| rng::uniform(r, 0.2, 5.0)).collect();
    let offset: Vec<f64> = (0..k).map(|_| rng::uniform(r, -2.0, 2.0)).collect();
    let rho = rng::uniform(r, 0.0, 0.9);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i % 4 == 0 { Label::Bonafide } else { Label::Spoof };
        let shared = normal(r);
        let row = (0..k)
            .map(|j| {
                let noise = rho.sqrt() * shared + (1.0 - rho).sqrt() * normal(r);
                let mean = if label.is_bonafide() { sep[j] } else { 0.0 };
                (mean + noise) * scale[j] + offset[j]
            })
            .collect();
        rows.push(row);
        labels.push(label);
    }
    labelled(rows, labels)
}

fn split(scores: &[f64], labels: &[Label]) -> (Vec<f64>, Vec<f64>) {
    let mut b = Vec::new();
    let mut s = Vec::new();
    for (&v, l) in scores.iter().zip(labels) {
        if l.is_bonafide() {
            b.push(v)
        } else {
            s.push(v)
        }
    }
    (b, s)
}

pub fn min_dcf_of(scores: &[f64], labels: &[Label]) -> f64 {
    let (b, s) = split(scores, labels);
    eval::metrics(&b, &s, &DcfParams::default()).unwrap().min_dcf
}

pub fn eer_of(scores: &[f64], labels: &[Label]) -> f64 {
    let (b, s) = split(scores, labels);
    eval::metrics(&b, &s, &DcfParams::default()).unwrap().eer
}

/// `(fused minDCF, best single minDCF)` on the training data.
pub fn non_degradation(r: &mut ChaCha8Rng, n: usize, k: usize) -> (f64, f64) {
    let m = correlated_subsystems(r, n, k);
    let fit = train_fusion_with(&m, 0.05, &FusionOptions::default()).unwrap();
    let fused = fuse_matrix(&fit.model, &m).unwrap();
    let fused_scores: Vec<f64> = fused.entries().iter().map(|(_, v)| *v).collect();
    let best_single = (0..k)
        .map(|j| min_dcf_of(&m.rows.iter().map(|row| row[j]).collect::<Vec<_>>(), &m.labels))
        .fold(f64::INFINITY, f64::min);
    (min_dcf_of(&fused_scores, &m.labels), best_single)
}

/// Minimum of the K = 1 objective by repeated 41 x 41 grid refinement.
pub fn grid_minimum(m: &ScoreMatrix, prior: f64) -> f64 {
    let (mut cb, mut cw) = (0.0, 0.0);
    let mut half = 50.0;
    let mut best = fusion_objective(cb, &[cw], m, prior).0;
    for _ in 0..60 {
        let (mut nb, mut nw) = (cb, cw);
        for i in 0..=40 {
            for j in 0..=40 {
                let b = cb + half * (i as f64 / 20.0 - 1.0);
                let w = cw + half * (j as f64 / 20.0 - 1.0);
                let v = fusion_objective(b, &[w], m, prior).0;
                if v < best {
                    best = v;
                    nb = b;
                    nw = w;
                }
            }
        }
        cb = nb;
        cw = nw;
        half *= 0.7;
    }
    best
}

/// `(fitted objective, grid objective)` for random one-system problems.
pub fn grid_gaps(r: &mut ChaCha8Rng, cases: usize) -> Vec<(f64, f64)> {
    (0..cases)
        .map(|_| {
            let n = 40 + rng::below(r, 200) as usize;
            let m = correlated_subsystems(r, n, 1);
            let prior = rng::uniform(r, 0.05, 0.95);
            let fit = train_fusion_with(&m, prior, &FusionOptions::default()).unwrap();
            (fit.objective, grid_minimum(&m, prior))
        })
        .collect()
}

/// Ranks of `v` (index order after a stable sort by value).
pub fn ranking(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    idx
}
