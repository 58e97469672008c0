//! Brute-force detection metrics: every candidate threshold is evaluated by
//! counting trials directly, with no sorting or sweep bookkeeping.
#![allow(dead_code)]

use antispoof_core::eval::{self, DcfParams, DetCurve};
use antispoof_core::rng::{self, ChaCha8Rng};

/// `(Pmiss, Pfa)` at threshold `tau` under "accept iff score >= tau".
pub fn rates_at(bona: &[f64], spoof: &[f64], tau: f64) -> (f64, f64) {
    let miss = bona.iter().filter(|&&s| s < tau).count();
    let fa = spoof.iter().filter(|&&s| s >= tau).count();
    (miss as f64 / bona.len() as f64, fa as f64 / spoof.len() as f64)
}

/// Candidate thresholds in increasing order: `-inf`, every distinct score,
/// `+inf`.
pub fn candidates(bona: &[f64], spoof: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = Vec::new();
    for &s in bona.iter().chain(spoof) {
        if !t.contains(&s) {
            t.push(s);
        }
    }
    t.sort_by(f64::total_cmp);
    let mut out = vec![f64::NEG_INFINITY];
    out.extend(t);
    out.push(f64::INFINITY);
    out
}

/// EER by scanning thresholds upwards to the first point where the miss rate
/// reaches the false-alarm rate, interpolating linearly from the point before.
pub fn oracle_eer(bona: &[f64], spoof: &[f64]) -> f64 {
    let taus = candidates(bona, spoof);
    let mut prev: Option<(f64, f64)> = None;
    for &tau in &taus {
        let (pm, pf) = rates_at(bona, spoof, tau);
        if pm >= pf {
            return match prev {
                Some((pm0, pf0)) if pm != pf => {
                    let t = (pf0 - pm0) / ((pf0 - pm0) - (pf - pm));
                    pm0 + t * (pm - pm0)
                }
                _ => pm,
            };
        }
        prev = Some((pm, pf));
    }
    unreachable!("at +inf every bonafide trial is missed")
}

pub fn oracle_min_dcf(bona: &[f64], spoof: &[f64], p: &DcfParams) -> f64 {
    let norm = (p.c_miss * p.p_target).min(p.c_fa * (1.0 - p.p_target));
    candidates(bona, spoof)
        .into_iter()
        .map(|tau| {
            let (pm, pf) = rates_at(bona, spoof, tau);
            (p.c_miss * p.p_target * pm + p.c_fa * (1.0 - p.p_target) * pf) / norm
        })
        .fold(f64::INFINITY, f64::min)
}

/// Random trial set of at most `max_trials` trials with both classes present.
/// A third of the sets are quantized to force ties.
pub fn random_set(r: &mut ChaCha8Rng, max_trials: usize) -> (Vec<f64>, Vec<f64>) {
    let n = 2 + rng::below(r, (max_trials - 1) as u64) as usize;
    let n_bona = 1 + rng::below(r, (n - 1) as u64) as usize;
    let shift = rng::uniform(r, -1.0, 3.0);
    let quantize = rng::below(r, 3) == 0;
    let mut draw = |mu: f64| {
        let v = rng::uniform(r, -2.0, 2.0) + rng::uniform(r, -2.0, 2.0) + mu;
        if quantize {
            (v * 4.0).round() / 4.0
        } else {
            v
        }
    };
    let bona: Vec<f64> = (0..n_bona).map(|_| draw(shift)).collect();
    let spoof: Vec<f64> = (0..n - n_bona).map(|_| draw(0.0)).collect();
    (bona, spoof)
}

pub fn random_dcf(r: &mut ChaCha8Rng) -> DcfParams {
    if rng::below(r, 2) == 0 {
        DcfParams::default()
    } else {
        DcfParams {
            c_miss: rng::uniform(r, 0.1, 10.0),
            c_fa: rng::uniform(r, 0.1, 10.0),
            p_target: rng::uniform(r, 0.01, 0.99),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct OracleReport {
    pub sets: usize,
    pub max_trials_seen: usize,
    pub worst_eer_diff: f64,
    pub min_dcf_mismatches: usize,
}

pub fn run_oracle(n_sets: usize, max_trials: usize, seed: u64) -> OracleReport {
    let mut r = rng::derived(seed, "metric-oracle");
    let mut report = OracleReport::default();
    for _ in 0..n_sets {
        let (bona, spoof) = random_set(&mut r, max_trials);
        let params = random_dcf(&mut r);
        let curve = DetCurve::from_scores(&bona, &spoof).unwrap();
        let (e, _) = eval::eer(&curve);
        let (m, _) = eval::min_dcf(&curve, &params);
        report.sets += 1;
        report.max_trials_seen = report.max_trials_seen.max(bona.len() + spoof.len());
        report.worst_eer_diff = report.worst_eer_diff.max((e - oracle_eer(&bona, &spoof)).abs());
        if m != oracle_min_dcf(&bona, &spoof, &params) {
            report.min_dcf_mismatches += 1;
        }
    }
    report
}

/// A strictly increasing map drawn from a small family; all keep distinct
/// inputs in [-8, 8] distinct in f64.
pub fn random_monotone(r: &mut ChaCha8Rng) -> Box<dyn Fn(f64) -> f64> {
    let a = rng::uniform(r, 0.1, 5.0);
    let b = rng::uniform(r, -10.0, 10.0);
    match rng::below(r, 5) {
        0 => Box::new(move |x| a * x + b),
        1 => Box::new(move |x| (a * x / 4.0).exp() + b),
        2 => Box::new(move |x| x * x * x + a * x),
        3 => Box::new(move |x| (a * x).sinh() / a),
        _ => Box::new(move |x| (x / 8.0).atan() * a + b),
    }
}

#[derive(Debug, Clone, Default)]
pub struct MonotoneReport {
    pub maps: usize,
    pub worst_eer_diff: f64,
    pub min_dcf_mismatches: usize,
}

pub fn run_monotone(n_maps: usize, seed: u64) -> MonotoneReport {
    let mut r = rng::derived(seed, "monotone");
    let mut report = MonotoneReport::default();
    while report.maps < n_maps {
        let (bona, spoof) = random_set(&mut r, 400);
        let f = random_monotone(&mut r);
        let tb: Vec<f64> = bona.iter().map(|&x| f(x)).collect();
        let ts: Vec<f64> = spoof.iter().map(|&x| f(x)).collect();
        // the map must not merge distinct scores after rounding
        if candidates(&bona, &spoof).len() != candidates(&tb, &ts).len() {
            continue;
        }
        report.maps += 1;
        let params = random_dcf(&mut r);
        let before = DetCurve::from_scores(&bona, &spoof).unwrap();
        let after = DetCurve::from_scores(&tb, &ts).unwrap();
        report.worst_eer_diff = report
            .worst_eer_diff
            .max((eval::eer(&before).0 - eval::eer(&after).0).abs());
        if eval::min_dcf(&before, &params).0 != eval::min_dcf(&after, &params).0 {
            report.min_dcf_mismatches += 1;
        }
    }
    report
}
