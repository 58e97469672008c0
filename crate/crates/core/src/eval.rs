//! Detection metrics: DET sweep, EER, normalized minDCF, per-attack and
//! per-codec breakdowns and score histograms.
//!
//! Convention: a trial is accepted as bonafide iff `score >= threshold`.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, ProtocolTable};
use crate::error::{Error, Result};

/// Per-utterance scores, unique ids, finite values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet {
    entries: Vec<(String, f64)>,
}

impl ScoreSet {
    pub fn new(entries: Vec<(String, f64)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for (i, (id, s)) in entries.iter().enumerate() {
            if !s.is_finite() {
                return Err(Error::NonFinite {
                    what: "score".into(),
                    detail: format!("`{id}` = {s}"),
                });
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateKey {
                    key: id.clone(),
                    line: i + 1,
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, utt_id: &str) -> Option<f64> {
        self.entries.iter().find(|(id, _)| id == utt_id).map(|(_, s)| *s)
    }

    /// Parses `utt_id<TAB>score` lines (any whitespace accepted).
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.is_empty() {
                continue;
            }
            if cols.len() != 2 {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected `utt_id score`, found {} columns", cols.len()),
                });
            }
            let score: f64 = cols[1].parse().map_err(|e| Error::Parse {
                line: i + 1,
                msg: format!("bad score `{}`: {e}", cols[1]),
            })?;
            entries.push((cols[0].to_string(), score));
        }
        Self::new(entries)
    }

    /// One `utt_id<TAB>score` line per entry; scores print in shortest
    /// round-trip form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, s) in &self.entries {
            let _ = writeln!(out, "{id}\t{s:?}");
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Splits scores by protocol label; every id must be in the protocol.
    pub fn split_by_label(&self, protocol: &ProtocolTable) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut bona = Vec::new();
        let mut spoof = Vec::new();
        let mut missing = Vec::new();
        for (id, s) in &self.entries {
            match protocol.get(id) {
                Some(r) if r.label == Label::Bonafide => bona.push(*s),
                Some(_) => spoof.push(*s),
                None => missing.push(id.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::Coverage(format!(
                "scored ids not in protocol: {}",
                missing.join(", ")
            )));
        }
        Ok((bona, spoof))
    }
}

/// `(threshold, Pmiss, Pfa)` sweep with `-inf`/`+inf` sentinels at both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct DetCurve {
    pub thresholds: Vec<f64>,
    pub pmiss: Vec<f64>,
    pub pfa: Vec<f64>,
}

impl DetCurve {
    pub fn from_scores(bonafide: &[f64], spoof: &[f64]) -> Result<Self> {
        if bonafide.is_empty() || spoof.is_empty() {
            return Err(Error::contract("DET curve needs bonafide and spoof trials"));
        }
        if bonafide.iter().chain(spoof).any(|s| !s.is_finite()) {
            return Err(Error::NonFinite {
                what: "score".into(),
                detail: "DET input".into(),
            });
        }
        let mut bona = bonafide.to_vec();
        let mut spf = spoof.to_vec();
        bona.sort_by(f64::total_cmp);
        spf.sort_by(f64::total_cmp);
        let mut all: Vec<f64> = bona.iter().chain(&spf).copied().collect();
        all.sort_by(f64::total_cmp);
        all.dedup();

        let (nb, ns) = (bona.len() as f64, spf.len() as f64);
        let mut thresholds = Vec::with_capacity(all.len() + 2);
        let mut pmiss = Vec::with_capacity(all.len() + 2);
        let mut pfa = Vec::with_capacity(all.len() + 2);
        thresholds.push(f64::NEG_INFINITY);
        pmiss.push(0.0);
        pfa.push(1.0);
        // bona_below: bonafide scores < tau; spoof_below: spoof scores < tau
        let (mut bona_below, mut spoof_below) = (0usize, 0usize);
        for &tau in &all {
            while bona_below < bona.len() && bona[bona_below] < tau {
                bona_below += 1;
            }
            while spoof_below < spf.len() && spf[spoof_below] < tau {
                spoof_below += 1;
            }
            thresholds.push(tau);
            pmiss.push(bona_below as f64 / nb);
            pfa.push((spf.len() - spoof_below) as f64 / ns);
        }
        thresholds.push(f64::INFINITY);
        pmiss.push(1.0);
        pfa.push(0.0);
        Ok(Self {
            thresholds,
            pmiss,
            pfa,
        })
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }
}

pub fn det_curve(scores: &ScoreSet, protocol: &ProtocolTable) -> Result<DetCurve> {
    let (bona, spoof) = scores.split_by_label(protocol)?;
    DetCurve::from_scores(&bona, &spoof)
}

/// Equal error rate and its threshold. Uses the first operating point where
/// `Pmiss >= Pfa`; if the two rates differ there, both are linearly
/// interpolated from the previous point.
pub fn eer(curve: &DetCurve) -> (f64, f64) {
    let cross = (0..curve.len())
        .find(|&i| curve.pmiss[i] >= curve.pfa[i])
        .expect("the +inf sentinel always satisfies pmiss >= pfa");
    let (pm, pf, th) = (curve.pmiss[cross], curve.pfa[cross], curve.thresholds[cross]);
    if pm == pf || cross == 0 {
        return (pm, th);
    }
    let prev = cross - 1;
    let d0 = curve.pfa[prev] - curve.pmiss[prev];
    let d1 = pf - pm;
    let t = d0 / (d0 - d1);
    let rate = curve.pmiss[prev] + t * (pm - curve.pmiss[prev]);
    let (t0, t1) = (curve.thresholds[prev], th);
    let threshold = match (t0.is_finite(), t1.is_finite()) {
        (true, true) => t0 + t * (t1 - t0),
        (true, false) => t0,
        (false, _) => t1,
    };
    (rate, threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcfParams {
    pub c_miss: f64,
    pub c_fa: f64,
    pub p_target: f64,
}

impl Default for DcfParams {
    /// Challenge-plan operating point; configurable, not a modelling constant.
    fn default() -> Self {
        Self {
            c_miss: 1.0,
            c_fa: 10.0,
            p_target: 0.05,
        }
    }
}

impl DcfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_miss > 0.0 && self.c_fa > 0.0) {
            return Err(Error::contract("DCF costs must be positive"));
        }
        if !(self.p_target > 0.0 && self.p_target < 1.0) {
            return Err(Error::contract("DCF target prior must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Cost of the better trivial system, used as the normalizer.
    pub fn default_cost(&self) -> f64 {
        (self.c_miss * self.p_target).min(self.c_fa * (1.0 - self.p_target))
    }

    pub fn normalized(&self, pmiss: f64, pfa: f64) -> f64 {
        (self.c_miss * self.p_target * pmiss + self.c_fa * (1.0 - self.p_target) * pfa) / self.default_cost()
    }
}

/// Minimum normalized DCF over the curve's operating points and the first
/// threshold attaining it.
pub fn min_dcf(curve: &DetCurve, params: &DcfParams) -> (f64, f64) {
    let mut best = (f64::INFINITY, f64::NAN);
    for i in 0..curve.len() {
        let c = params.normalized(curve.pmiss[i], curve.pfa[i]);
        if c < best.0 {
            best = (c, curve.thresholds[i]);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_bonafide: usize,
    pub n_spoof: usize,
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_dcf: f64,
    pub min_dcf_threshold: f64,
}

pub fn metrics(bonafide: &[f64], spoof: &[f64], params: &DcfParams) -> Result<Metrics> {
    let curve = DetCurve::from_scores(bonafide, spoof)?;
    let (e, et) = eer(&curve);
    let (m, mt) = min_dcf(&curve, params);
    Ok(Metrics {
        n_bonafide: bonafide.len(),
        n_spoof: spoof.len(),
        eer: e,
        eer_threshold: et,
        min_dcf: m,
        min_dcf_threshold: mt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionKind {
    Pooled,
    Attack,
    Codec,
}

/// One breakdown row; metrics are `None` when a class is missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownCell {
    pub kind: ConditionKind,
    pub condition: String,
    pub n_bonafide: usize,
    pub n_spoof: usize,
    pub eer: Option<f64>,
    pub min_dcf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownReport {
    pub dcf: DcfParams,
    pub cells: Vec<BreakdownCell>,
}

impl BreakdownReport {
    pub fn cell(&self, kind: ConditionKind, condition: &str) -> Option<&BreakdownCell> {
        self.cells
            .iter()
            .find(|c| c.kind == kind && c.condition == condition)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,condition,n_bonafide,n_spoof,eer,min_dcf\n");
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:?}"));
        for c in &self.cells {
            let kind = match c.kind {
                ConditionKind::Pooled => "pooled",
                ConditionKind::Attack => "attack",
                ConditionKind::Codec => "codec",
            };
            let _ = writeln!(
                out,
                "{kind},{},{},{},{},{}",
                c.condition,
                c.n_bonafide,
                c.n_spoof,
                fmt(c.eer),
                fmt(c.min_dcf)
            );
        }
        out
    }
}

fn cell(kind: ConditionKind, condition: &str, bona: &[f64], spoof: &[f64], params: &DcfParams) -> BreakdownCell {
    let (eer_v, dcf_v) = match DetCurve::from_scores(bona, spoof) {
        Ok(curve) => (Some(eer(&curve).0), Some(min_dcf(&curve, params).0)),
        Err(_) => (None, None),
    };
    BreakdownCell {
        kind,
        condition: condition.to_string(),
        n_bonafide: bona.len(),
        n_spoof: spoof.len(),
        eer: eer_v,
        min_dcf: dcf_v,
    }
}

/// Pooled row, then one row per attack (all bonafide vs that attack's
/// spoofs), then one per codec (bonafide vs spoof of that codec). Rows are
/// sorted by condition id.
pub fn breakdown(scores: &ScoreSet, protocol: &ProtocolTable, params: &DcfParams) -> Result<BreakdownReport> {
    params.validate()?;
    scores.split_by_label(protocol)?;
    let rows: Vec<(&crate::corpus::UtteranceRecord, f64)> = scores
        .entries()
        .iter()
        .map(|(id, s)| (protocol.get(id).unwrap(), *s))
        .collect();
    let select = |pred: &dyn Fn(&crate::corpus::UtteranceRecord) -> bool, label: Label| -> Vec<f64> {
        rows.iter()
            .filter(|(r, _)| r.label == label && pred(r))
            .map(|(_, s)| *s)
            .collect()
    };

    let mut cells = Vec::new();
    let all_bona = select(&|_| true, Label::Bonafide);
    cells.push(cell(
        ConditionKind::Pooled,
        "all",
        &all_bona,
        &select(&|_| true, Label::Spoof),
        params,
    ));
    let attacks: BTreeSet<&str> = rows
        .iter()
        .filter(|(r, _)| r.label == Label::Spoof)
        .map(|(r, _)| r.attack_id.as_str())
        .collect();
    for a in attacks {
        let spoof = select(&|r| r.attack_id == a, Label::Spoof);
        cells.push(cell(ConditionKind::Attack, a, &all_bona, &spoof, params));
    }
    let codecs: BTreeSet<&str> = rows.iter().map(|(r, _)| r.codec_id.as_str()).collect();
    for c in codecs {
        let bona = select(&|r| r.codec_id == c, Label::Bonafide);
        let spoof = select(&|r| r.codec_id == c, Label::Spoof);
        cells.push(cell(ConditionKind::Codec, c, &bona, &spoof, params));
    }
    Ok(BreakdownReport {
        dcf: *params,
        cells,
    })
}

/// Shared equal-width bins over `[min, max]` of all scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub bonafide: Vec<usize>,
    pub spoof: Vec<usize>,
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,lower,upper,bonafide,spoof\n");
        for i in 0..self.bonafide.len() {
            let _ = writeln!(
                out,
                "{i},{:?},{:?},{},{}",
                self.edges[i],
                self.edges[i + 1],
                self.bonafide[i],
                self.spoof[i]
            );
        }
        out
    }
}

/// Per-class counts; all-equal scores collapse to one degenerate bin.
pub fn histogram(bonafide: &[f64], spoof: &[f64], n_bins: usize) -> Result<Histogram> {
    if n_bins == 0 {
        return Err(Error::contract("histogram needs at least one bin"));
    }
    let all = bonafide.iter().chain(spoof);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::contract("histogram needs finite, non-empty scores"));
    }
    if lo == hi {
        return Ok(Histogram {
            edges: vec![lo, hi],
            bonafide: vec![bonafide.len()],
            spoof: vec![spoof.len()],
        });
    }
    let width = (hi - lo) / n_bins as f64;
    let mut edges: Vec<f64> = (0..n_bins).map(|i| lo + width * i as f64).collect();
    edges.push(hi);
    let bin = |s: f64| (((s - lo) / width) as usize).min(n_bins - 1);
    let counts = |xs: &[f64]| {
        let mut c = vec![0usize; n_bins];
        for &s in xs {
            c[bin(s)] += 1;
        }
        c
    };
    Ok(Histogram {
        bonafide: counts(bonafide),
        spoof: counts(spoof),
        edges,
    })
}
