//! Exact loss values at the margins and the degenerate-configuration
//! equivalences, compared bit for bit.
#![allow(dead_code)]

use std::collections::BTreeMap;

use antispoof_core::losses::{margin_loss, oc_softmax_loss, samo_init_attractors, samo_loss, OcSoftmaxParams, SamoConfig};
use antispoof_core::rng;
use antispoof_core::{ClassWeights, Label};

const LN2: f64 = std::f64::consts::LN_2;

fn at_cosine(c: f64) -> Vec<f64> {
    vec![c, (1.0 - c * c).sqrt()]
}

/// `(description, holds)` for every boundary case.
pub fn checks() -> Vec<(String, bool)> {
    let mut out = Vec::new();
    for (m0, m1) in [(0.9, 0.2), (0.7, 0.0), (0.5, -0.25)] {
        let oc = OcSoftmaxParams {
            w: vec![1.0, 0.0],
            alpha: 20.0,
            m0,
            m1,
        };
        let bona = oc_softmax_loss(&oc, &[at_cosine(m0)], &[Label::Bonafide], None).unwrap();
        out.push((format!("OC-Softmax bonafide at m0={m0}: loss = ln 2"), bona.loss == LN2));
        let spoof = oc_softmax_loss(&oc, &[at_cosine(m1)], &[Label::Spoof], None).unwrap();
        out.push((format!("OC-Softmax spoof at m1={m1}: loss = ln 2"), spoof.loss == LN2));

        let attractors = samo_init_attractors(&BTreeMap::from([("s".to_string(), vec![vec![1.0, 0.0]])])).unwrap();
        let cfg = SamoConfig {
            m0,
            m1,
            ..SamoConfig::default()
        };
        let b = samo_loss(&attractors, &cfg, &[at_cosine(m0)], &[Label::Bonafide], &["s"], None).unwrap();
        out.push((format!("SAMO bonafide at m0={m0}: loss = ln 2"), b.loss == LN2));
        let s = samo_loss(&attractors, &cfg, &[at_cosine(m1)], &[Label::Spoof], &["s"], None).unwrap();
        out.push((format!("SAMO spoof at m1={m1}: loss = ln 2"), s.loss == LN2));
        out.push((
            format!("margin_loss at both margins (m0={m0}, m1={m1})"),
            margin_loss(m0, Label::Bonafide, 20.0, m0, m1).0 == LN2 && margin_loss(m1, Label::Spoof, 20.0, m0, m1).0 == LN2,
        ));
    }

    let mut r = rng::seeded(5);
    let unit = |r: &mut rng::ChaCha8Rng| {
        let v: Vec<f64> = (0..6).map(|_| rng::uniform(r, -1.0, 1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let single = samo_init_attractors(&BTreeMap::from([(
        "only".to_string(),
        (0..3).map(|_| unit(&mut r)).collect(),
    )]))
    .unwrap();
    let emb: Vec<Vec<f64>> = (0..16).map(|_| unit(&mut r)).collect();
    let labels: Vec<Label> = (0..16).map(|i| if i % 3 == 0 { Label::Bonafide } else { Label::Spoof }).collect();
    let spk = vec!["only"; 16];
    let plain = SamoConfig::default();
    let with_max = samo_loss(&single, &SamoConfig { maxscore: true, ..plain.clone() }, &emb, &labels, &spk, None).unwrap();
    let matched = samo_loss(&single, &SamoConfig { maxscore: false, ..plain.clone() }, &emb, &labels, &spk, None).unwrap();
    out.push((
        "SAMO maxscore = speaker-matched with one speaker".to_string(),
        with_max.loss == matched.loss && with_max.grad_embeddings == matched.grad_embeddings,
    ));

    let ones = ClassWeights {
        bonafide: 1.0,
        spoof: 1.0,
    };
    let weighted = samo_loss(&single, &plain, &emb, &labels, &spk, Some(&ones)).unwrap();
    let unweighted = samo_loss(&single, &plain, &emb, &labels, &spk, None).unwrap();
    out.push((
        "SAMO weights (1,1) = unweighted".to_string(),
        weighted.loss == unweighted.loss && weighted.grad_embeddings == unweighted.grad_embeddings,
    ));
    let oc = OcSoftmaxParams {
        w: unit(&mut r),
        alpha: 20.0,
        m0: 0.9,
        m1: 0.2,
    };
    let a = oc_softmax_loss(&oc, &emb, &labels, Some(&ones)).unwrap();
    let b = oc_softmax_loss(&oc, &emb, &labels, None).unwrap();
    out.push((
        "OC-Softmax weights (1,1) = unweighted".to_string(),
        a.loss == b.loss && a.grad_embeddings == b.grad_embeddings && a.grad_w == b.grad_w,
    ));
    out
}
