//! The seed-pinned desk corpus: 8 speakers x 20 trials, features extracted
//! the way the CLI does (train crops for train, first 10 s otherwise).
#![allow(dead_code)]

use antispoof_core::corpus::{synth_corpus, SynthCorpus, WAV_DIR};
use antispoof_core::dsp::Frontend;
use antispoof_core::{ChunkMode, FeatureStore, FrontendConfig, Partition, UtteranceRecord};

pub struct Desk {
    pub dir: tempfile::TempDir,
    pub corpus: SynthCorpus,
    pub train: FeatureStore,
    /// Dev trials plus every enrollment utterance.
    pub dev: FeatureStore,
    pub eval: FeatureStore,
}

pub fn build(seed: u64) -> Desk {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(8, 20, seed, dir.path()).unwrap();
    let fe = Frontend::new(FrontendConfig::default()).unwrap();
    let audio = dir.path().join(WAV_DIR);
    let part = |p: Partition| -> Vec<UtteranceRecord> { corpus.protocol.partition(p).cloned().collect() };
    let train = FeatureStore::extract(&part(Partition::Train), &audio, ChunkMode::Train { seed }, &fe).unwrap();
    let mut dev_recs = part(Partition::Dev);
    dev_recs.extend(corpus.enrollment.records().iter().cloned());
    let dev = FeatureStore::extract(&dev_recs, &audio, ChunkMode::Infer, &fe).unwrap();
    let eval = FeatureStore::extract(&part(Partition::Eval), &audio, ChunkMode::Infer, &fe).unwrap();
    Desk {
        dir,
        corpus,
        train,
        dev,
        eval,
    }
}
