//! Central finite-difference checks of every hand-written backward pass.
//! Each suite draws random configurations, avoids ReLU kinks and
//! nearest-attractor ties (where the loss is not differentiable), and reports
//! the worst relative error `|a - n| / max(|a|, |n|)` over gradient vectors.
#![allow(dead_code)]

use std::collections::BTreeMap;

use antispoof_core::embedder::{amff_backward, amff_fuse, pool_stats, pool_stats_backward, AmffParams, Linear};
use antispoof_core::fusion::{fusion_objective, ScoreMatrix};
use antispoof_core::losses::{
    oc_softmax_loss, samo_init_attractors, samo_loss, weighted_softmax_loss, AttractorSet, OcSoftmaxParams,
    SamoConfig,
};
use antispoof_core::rng::{self, ChaCha8Rng};
use antispoof_core::{ClassWeights, Embedder, EmbedderConfig, FeatureMatrix, Label};

pub const STEP: f64 = 1e-5;
const KINK_GUARD: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub configs: usize,
    pub worst: f64,
}

pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let scale = l2(analytic).max(l2(numeric));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + STEP;
            let up = f(&probe);
            probe[i] = orig - STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn uniform_vec(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng::uniform(r, lo, hi)).collect()
}

fn unit_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v = uniform_vec(r, n, -1.0, 1.0);
        let len = l2(&v);
        if len > 0.1 {
            return v.iter().map(|x| x / len).collect();
        }
    }
}

fn labels(r: &mut ChaCha8Rng, n: usize) -> Vec<Label> {
    (0..n)
        .map(|_| if rng::below(r, 2) == 0 { Label::Bonafide } else { Label::Spoof })
        .collect()
}

fn class_weights(r: &mut ChaCha8Rng) -> Option<ClassWeights> {
    (rng::below(r, 2) == 0).then(|| ClassWeights {
        bonafide: rng::uniform(r, 0.05, 1.0),
        spoof: rng::uniform(r, 0.05, 1.0),
    })
}

fn flatten(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

fn unflatten(flat: &[f64], width: usize) -> Vec<Vec<f64>> {
    flat.chunks(width).map(<[f64]>::to_vec).collect()
}

pub fn softmax_suite(n_configs: usize, seed: u64) -> SuiteResult {
    let mut r = rng::derived(seed, "softmax");
    let mut worst: f64 = 0.0;
    for _ in 0..n_configs {
        let n = 2 + rng::below(&mut r, 7) as usize;
        let d = 2 + rng::below(&mut r, 9) as usize;
        let mut head = Linear::glorot(d, 2, &mut r);
        head.bias = uniform_vec(&mut r, 2, -0.5, 0.5);
        let emb = uniform_vec(&mut r, n * d, -1.0, 1.0);
        let y = labels(&mut r, n);
        let w = class_weights(&mut r).unwrap_or(ClassWeights {
            bonafide: 1.0,
            spoof: 1.0,
        });

        let loss = |e: &[f64], h: &Linear| -> f64 {
            let logits: Vec<[f64; 2]> = e
                .chunks(d)
                .map(|x| {
                    let z = h.forward(x);
                    [z[0], z[1]]
                })
                .collect();
            weighted_softmax_loss(&logits, &y, &w).unwrap().0
        };
        let logits: Vec<[f64; 2]> = emb
            .chunks(d)
            .map(|x| {
                let z = head.forward(x);
                [z[0], z[1]]
            })
            .collect();
        let (_, dz) = weighted_softmax_loss(&logits, &y, &w).unwrap();
        let mut g_head = head.zeros_like();
        let g_emb: Vec<f64> = emb
            .chunks(d)
            .zip(&dz)
            .flat_map(|(x, g)| head.backward(x, g, &mut g_head))
            .collect();

        let n_emb = numeric_grad(&emb, |e| loss(e, &head));
        let n_w = numeric_grad(&head.weight, |wt| {
            let mut h = head.clone();
            h.weight = wt.to_vec();
            loss(&emb, &h)
        });
        let n_b = numeric_grad(&head.bias, |b| {
            let mut h = head.clone();
            h.bias = b.to_vec();
            loss(&emb, &h)
        });
        worst = worst
            .max(rel_err(&g_emb, &n_emb))
            .max(rel_err(&g_head.weight, &n_w))
            .max(rel_err(&g_head.bias, &n_b));
    }
    SuiteResult {
        name: "weighted softmax",
        configs: n_configs,
        worst,
    }
}

pub fn oc_softmax_suite(n_configs: usize, seed: u64) -> SuiteResult {
    let mut r = rng::derived(seed, "oc-softmax");
    let mut worst: f64 = 0.0;
    for _ in 0..n_configs {
        let n = 2 + rng::below(&mut r, 7) as usize;
        let d = 2 + rng::below(&mut r, 9) as usize;
        let m0 = rng::uniform(&mut r, 0.3, 0.95);
        let params = OcSoftmaxParams {
            w: uniform_vec(&mut r, d, -1.0, 1.0),
            alpha: rng::uniform(&mut r, 5.0, 30.0),
            m0,
            m1: rng::uniform(&mut r, -0.5, m0 - 0.1),
        };
        let emb: Vec<Vec<f64>> = (0..n).map(|_| unit_vec(&mut r, d)).collect();
        let y = labels(&mut r, n);
        let w = class_weights(&mut r);
        let out = oc_softmax_loss(&params, &emb, &y, w.as_ref()).unwrap();

        let n_emb = numeric_grad(&flatten(&emb), |e| {
            oc_softmax_loss(&params, &unflatten(e, d), &y, w.as_ref()).unwrap().loss
        });
        let n_w = numeric_grad(&params.w, |wv| {
            let p = OcSoftmaxParams {
                w: wv.to_vec(),
                ..params.clone()
            };
            oc_softmax_loss(&p, &emb, &y, w.as_ref()).unwrap().loss
        });
        worst = worst
            .max(rel_err(&flatten(&out.grad_embeddings), &n_emb))
            .max(rel_err(&out.grad_w, &n_w));
    }
    SuiteResult {
        name: "OC-Softmax",
        configs: n_configs,
        worst,
    }
}

/// True when `x` has a unique nearest attractor by a margin that a
/// finite-difference step cannot flip.
fn clear_nearest(state: &AttractorSet, x: &[f64]) -> bool {
    let mut sims: Vec<f64> = state
        .iter()
        .map(|(_, a)| a.iter().zip(x).map(|(p, q)| p * q).sum())
        .collect();
    sims.sort_by(|a, b| b.total_cmp(a));
    sims.len() < 2 || sims[0] - sims[1] > KINK_GUARD
}

pub fn samo_suite(n_configs: usize, seed: u64, maxscore: bool) -> SuiteResult {
    let mut r = rng::derived(seed, if maxscore { "samo-max" } else { "samo" });
    let mut worst: f64 = 0.0;
    for _ in 0..n_configs {
        let d = 2 + rng::below(&mut r, 9) as usize;
        let n_spk = 1 + rng::below(&mut r, 5) as usize;
        let mut by_speaker = BTreeMap::new();
        for s in 0..n_spk {
            let members: Vec<Vec<f64>> = (0..2).map(|_| unit_vec(&mut r, d)).collect();
            by_speaker.insert(format!("spk{s}"), members);
        }
        let state = samo_init_attractors(&by_speaker).unwrap();
        let speakers: Vec<String> = by_speaker.keys().cloned().collect();
        let m0 = rng::uniform(&mut r, 0.3, 0.95);
        let config = SamoConfig {
            alpha: rng::uniform(&mut r, 5.0, 30.0),
            m0,
            m1: rng::uniform(&mut r, -0.5, m0 - 0.1),
            maxscore,
            ..SamoConfig::default()
        };
        let n = 2 + rng::below(&mut r, 7) as usize;
        let mut emb = Vec::with_capacity(n);
        while emb.len() < n {
            let x = unit_vec(&mut r, d);
            if clear_nearest(&state, &x) {
                emb.push(x);
            }
        }
        let y = labels(&mut r, n);
        let spk: Vec<&str> = (0..n)
            .map(|_| speakers[rng::below(&mut r, n_spk as u64) as usize].as_str())
            .collect();
        let w = class_weights(&mut r);
        let out = samo_loss(&state, &config, &emb, &y, &spk, w.as_ref()).unwrap();
        let numeric = numeric_grad(&flatten(&emb), |e| {
            samo_loss(&state, &config, &unflatten(e, d), &y, &spk, w.as_ref())
                .unwrap()
                .loss
        });
        worst = worst.max(rel_err(&flatten(&out.grad_embeddings), &numeric));
    }
    SuiteResult {
        name: if maxscore { "SAMO (maxscore)" } else { "SAMO (speaker-matched)" },
        configs: n_configs,
        worst,
    }
}

fn amff_value(params: &AmffParams, branches: &[Vec<f64>], c: &[f64]) -> f64 {
    let (fused, _) = amff_fuse(params, branches).unwrap();
    fused.iter().zip(c).map(|(a, b)| a * b).sum()
}

pub fn amff_suite(n_configs: usize, seed: u64) -> SuiteResult {
    let mut r = rng::derived(seed, "amff");
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < n_configs {
        let b = 2 + rng::below(&mut r, 4) as usize;
        let f = 2 + rng::below(&mut r, 7) as usize;
        let reduction = 1 + rng::below(&mut r, 3) as usize;
        let mut params = AmffParams::init(b, reduction, &mut r);
        params.fc1.bias = uniform_vec(&mut r, params.fc1.n_out, -0.5, 0.5);
        params.fc2.bias = uniform_vec(&mut r, b, -0.5, 0.5);
        let branches: Vec<Vec<f64>> = (0..b).map(|_| uniform_vec(&mut r, f, -1.0, 1.0)).collect();
        let c = uniform_vec(&mut r, f, -1.0, 1.0);
        let (_, trace) = amff_fuse(&params, &branches).unwrap();
        if trace.hidden_pre.iter().any(|z| z.abs() < KINK_GUARD) {
            continue;
        }
        done += 1;
        let mut grad = params.zeros_like();
        let g_branches = amff_backward(&params, &trace, &c, &mut grad);

        let n_branches = numeric_grad(&flatten(&branches), |x| amff_value(&params, &unflatten(x, f), &c));
        worst = worst.max(rel_err(&flatten(&g_branches), &n_branches));
        let tensors: [(&[f64], &[f64]); 4] = [
            (&params.fc1.weight, &grad.fc1.weight),
            (&params.fc1.bias, &grad.fc1.bias),
            (&params.fc2.weight, &grad.fc2.weight),
            (&params.fc2.bias, &grad.fc2.bias),
        ];
        for (k, (value, analytic)) in tensors.into_iter().enumerate() {
            let numeric = numeric_grad(value, |v| {
                let mut p = params.clone();
                match k {
                    0 => p.fc1.weight = v.to_vec(),
                    1 => p.fc1.bias = v.to_vec(),
                    2 => p.fc2.weight = v.to_vec(),
                    _ => p.fc2.bias = v.to_vec(),
                }
                amff_value(&p, &branches, &c)
            });
            worst = worst.max(rel_err(analytic, &numeric));
        }
    }
    SuiteResult {
        name: "AMFF gate",
        configs: n_configs,
        worst,
    }
}

fn random_features(r: &mut ChaCha8Rng, frames: usize, dims: usize) -> FeatureMatrix {
    FeatureMatrix::new(uniform_vec(r, frames * dims, -2.0, 2.0), frames, dims).unwrap()
}

pub fn pool_suite(n_configs: usize, seed: u64) -> SuiteResult {
    let mut r = rng::derived(seed, "pool");
    let mut worst: f64 = 0.0;
    for _ in 0..n_configs {
        let t = 2 + rng::below(&mut r, 9) as usize;
        let d = 1 + rng::below(&mut r, 8) as usize;
        let feats = random_features(&mut r, t, d);
        let c = uniform_vec(&mut r, 2 * d, -1.0, 1.0);
        let pooled = pool_stats(&feats).unwrap();
        let analytic = pool_stats_backward(&feats, &pooled, &c).unwrap();
        let numeric = numeric_grad(feats.values(), |v| {
            let m = FeatureMatrix::new(v.to_vec(), t, d).unwrap();
            pool_stats(&m).unwrap().iter().zip(&c).map(|(a, b)| a * b).sum()
        });
        worst = worst.max(rel_err(analytic.values(), &numeric));
    }
    SuiteResult {
        name: "statistics pooling",
        configs: n_configs,
        worst,
    }
}

fn embed_value(net: &Embedder, feats: &FeatureMatrix, c: &[f64]) -> f64 {
    let (e, _) = net.embed(feats).unwrap();
    e.iter().zip(c).map(|(a, b)| a * b).sum()
}

fn has_kink(net: &Embedder, feats: &FeatureMatrix) -> bool {
    let (_, trace) = net.embed(feats).unwrap();
    let hidden = trace.pre_activations.iter().flatten();
    let gate = trace.amff.iter().flat_map(|a| a.hidden_pre.iter());
    hidden.chain(gate).any(|z| z.abs() < KINK_GUARD)
}

/// Checks every trainable tensor plus the gradient w.r.t. the frame-level
/// features (through pooling). `coords` limits how many coordinates of each
/// tensor are probed (`None` = all).
pub fn check_embedder(net: &Embedder, feats: &FeatureMatrix, c: &[f64], coords: Option<(usize, &mut ChaCha8Rng)>) -> f64 {
    let (_, trace) = net.embed(feats).unwrap();
    let grads = net.backward(&trace, c).unwrap();
    let analytic_tensors: Vec<Vec<f64>> = grads.tensors().into_iter().map(<[f64]>::to_vec).collect();
    let analytic_feats = pool_stats_backward(feats, &trace.pooled, &grads.pooled).unwrap();

    let mut picks: Vec<Vec<usize>> = Vec::new();
    let mut probe = net.clone();
    let sizes: Vec<usize> = probe.tensors_mut().iter().map(|t| t.len()).collect();
    let n_feat = feats.values().len();
    match coords {
        Some((k, r)) => {
            for &len in sizes.iter().chain([&n_feat]) {
                picks.push((0..k.min(len)).map(|_| rng::below(r, len as u64) as usize).collect());
            }
        }
        None => {
            for &len in sizes.iter().chain([&n_feat]) {
                picks.push((0..len).collect());
            }
        }
    }

    let mut worst: f64 = 0.0;
    for (t, idx) in picks[..sizes.len()].iter().enumerate() {
        let mut analytic = Vec::with_capacity(idx.len());
        let mut numeric = Vec::with_capacity(idx.len());
        for &i in idx {
            let orig = probe.tensors_mut()[t][i];
            probe.tensors_mut()[t][i] = orig + STEP;
            let up = embed_value(&probe, feats, c);
            probe.tensors_mut()[t][i] = orig - STEP;
            let down = embed_value(&probe, feats, c);
            probe.tensors_mut()[t][i] = orig;
            numeric.push((up - down) / (2.0 * STEP));
            analytic.push(analytic_tensors[t][i]);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    let idx = &picks[sizes.len()];
    let (t, d) = (feats.frames(), feats.dims());
    let mut values = feats.values().to_vec();
    let mut analytic = Vec::with_capacity(idx.len());
    let mut numeric = Vec::with_capacity(idx.len());
    for &i in idx {
        let orig = values[i];
        values[i] = orig + STEP;
        let up = embed_value(net, &FeatureMatrix::new(values.clone(), t, d).unwrap(), c);
        values[i] = orig - STEP;
        let down = embed_value(net, &FeatureMatrix::new(values.clone(), t, d).unwrap(), c);
        values[i] = orig;
        numeric.push((up - down) / (2.0 * STEP));
        analytic.push(analytic_feats.values()[i]);
    }
    worst.max(rel_err(&analytic, &numeric))
}

pub fn embedder_suite(n_configs: usize, seed: u64) -> SuiteResult {
    let mut r = rng::derived(seed, "embedder");
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < n_configs {
        let dims = 2 + rng::below(&mut r, 7) as usize;
        let n_layers = 1 + rng::below(&mut r, 2) as usize;
        let config = EmbedderConfig {
            input_dim: 2 * dims,
            hidden: (0..n_layers).map(|_| 3 + rng::below(&mut r, 6) as usize).collect(),
            embed_dim: 2 + rng::below(&mut r, 5) as usize,
            amff: rng::below(&mut r, 3) != 0,
            amff_reduction: 1 + rng::below(&mut r, 2) as usize,
        };
        let mut net = Embedder::init(&config, r_u64(&mut r)).unwrap();
        let mean = uniform_vec(&mut r, 2 * dims, -0.2, 0.2);
        let std = uniform_vec(&mut r, 2 * dims, 0.5, 2.0);
        net.set_input_standardization(&mean, &std);
        for t in net.tensors_mut() {
            for v in t.iter_mut() {
                *v += rng::uniform(&mut r, -0.2, 0.2);
            }
        }
        let frames = 3 + rng::below(&mut r, 6) as usize;
        let feats = random_features(&mut r, frames, dims);
        if has_kink(&net, &feats) {
            continue;
        }
        done += 1;
        let c = uniform_vec(&mut r, config.embed_dim, -1.0, 1.0);
        worst = worst.max(check_embedder(&net, &feats, &c, None));
    }
    SuiteResult {
        name: "full embedder",
        configs: n_configs,
        worst,
    }
}

fn r_u64(r: &mut ChaCha8Rng) -> u64 {
    rng::below(r, u64::MAX)
}

/// One check at the default network shape on a 1000x120 input, probing a
/// random subset of coordinates per tensor.
pub fn default_shape_check(seed: u64, coords: usize) -> f64 {
    let mut r = rng::derived(seed, "default-shape");
    loop {
        let config = EmbedderConfig::default();
        let mut net = Embedder::init(&config, r_u64(&mut r)).unwrap();
        for t in net.tensors_mut() {
            for v in t.iter_mut() {
                *v += rng::uniform(&mut r, -0.05, 0.05);
            }
        }
        let feats = random_features(&mut r, 1000, config.input_dim / 2);
        if has_kink(&net, &feats) {
            continue;
        }
        let c = uniform_vec(&mut r, config.embed_dim, -1.0, 1.0);
        return check_embedder(&net, &feats, &c, Some((coords, &mut r)));
    }
}

pub fn fusion_suite(n_configs: usize, seed: u64) -> SuiteResult {
    let mut r = rng::derived(seed, "fusion");
    let mut worst: f64 = 0.0;
    for _ in 0..n_configs {
        let k = 1 + rng::below(&mut r, 4) as usize;
        let n = 4 + rng::below(&mut r, 40) as usize;
        let mut y = labels(&mut r, n);
        y[0] = Label::Bonafide;
        y[1] = Label::Spoof;
        let m = ScoreMatrix {
            utt_ids: (0..n).map(|i| format!("u{i}")).collect(),
            rows: (0..n).map(|_| uniform_vec(&mut r, k, -3.0, 3.0)).collect(),
            labels: y,
        };
        let prior = rng::uniform(&mut r, 0.02, 0.98);
        let params = uniform_vec(&mut r, k + 1, -1.0, 1.0);
        let (_, gb, gw) = fusion_objective(params[0], &params[1..], &m, prior);
        let mut analytic = vec![gb];
        analytic.extend(gw);
        let numeric = numeric_grad(&params, |p| fusion_objective(p[0], &p[1..], &m, prior).0);
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    SuiteResult {
        name: "fusion objective",
        configs: n_configs,
        worst,
    }
}

/// The five loss/network suites plus pooling.
pub fn full_suite(n_configs: usize, seed: u64) -> Vec<SuiteResult> {
    vec![
        softmax_suite(n_configs, seed),
        oc_softmax_suite(n_configs, seed),
        samo_suite(n_configs, seed, false),
        samo_suite(n_configs, seed, true),
        amff_suite(n_configs, seed),
        pool_suite(n_configs, seed),
        embedder_suite(n_configs, seed),
    ]
}
