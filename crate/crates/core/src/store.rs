//! Per-utterance feature storage and batch extraction.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::corpus::{self, UtteranceRecord};
use crate::dsp::{FeatureMatrix, Frontend};
use crate::error::{Error, Result};
use crate::rng;

/// How waveforms are cut to 10 s before feature extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChunkMode {
    /// Random crop / tiling; the crop of each utterance is drawn from a
    /// stream derived from `(seed, utt_id)`.
    Train { seed: u64 },
    /// First 10 s / tiling.
    Infer,
}

/// Features keyed by utterance id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureStore {
    features: BTreeMap<String, FeatureMatrix>,
}

pub const FEATURE_EXT: &str = "lfc";

pub fn feature_path(dir: &Path, utt_id: &str) -> PathBuf {
    dir.join(format!("{utt_id}.{FEATURE_EXT}"))
}

impl FeatureStore {
    pub fn insert(&mut self, utt_id: impl Into<String>, m: FeatureMatrix) {
        self.features.insert(utt_id.into(), m);
    }

    pub fn get(&self, utt_id: &str) -> Option<&FeatureMatrix> {
        self.features.get(utt_id)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &FeatureMatrix)> {
        self.features.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Features of `ids`, or an error naming every missing id.
    pub fn require<'a>(&'a self, ids: &[&str]) -> Result<Vec<&'a FeatureMatrix>> {
        let missing: Vec<&str> = ids.iter().copied().filter(|id| !self.features.contains_key(*id)).collect();
        if !missing.is_empty() {
            return Err(Error::Coverage(format!("no features for: {}", missing.join(", "))));
        }
        Ok(ids.iter().map(|id| &self.features[*id]).collect())
    }

    /// Reads `<dir>/<utt_id>.lfc` for every record; all missing files are
    /// reported together.
    pub fn load_dir(dir: &Path, records: &[UtteranceRecord]) -> Result<Self> {
        let missing: Vec<&str> = records
            .iter()
            .filter(|r| !feature_path(dir, &r.utt_id).is_file())
            .map(|r| r.utt_id.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::bad_file(dir, format!("missing feature files for: {}", missing.join(", "))));
        }
        let loaded = records
            .par_iter()
            .map(|r| Ok((r.utt_id.clone(), FeatureMatrix::load(&feature_path(dir, &r.utt_id))?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            features: loaded.into_iter().collect(),
        })
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.features
            .par_iter()
            .try_for_each(|(id, m)| m.save(&feature_path(dir, id)))
    }

    /// Chunks and extracts every record's audio from `<audio_dir>/<utt_id>.wav`
    /// in parallel. Output does not depend on the worker count.
    pub fn extract(
        records: &[UtteranceRecord],
        audio_dir: &Path,
        mode: ChunkMode,
        frontend: &Frontend,
    ) -> Result<Self> {
        let missing: Vec<&str> = records
            .iter()
            .filter(|r| !corpus::wav_path(audio_dir, &r.utt_id).is_file())
            .map(|r| r.utt_id.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::bad_file(audio_dir, format!("missing audio for: {}", missing.join(", "))));
        }
        let extracted = records
            .par_iter()
            .map(|r| {
                let wave = corpus::load_wave(&corpus::wav_path(audio_dir, &r.utt_id))?;
                let chunk = match mode {
                    ChunkMode::Train { seed } => corpus::chunk_train(&wave, &mut rng::derived(seed, &r.utt_id))?,
                    ChunkMode::Infer => corpus::chunk_infer(&wave)?,
                };
                Ok((r.utt_id.clone(), frontend.extract_features(&chunk)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            features: extracted.into_iter().collect(),
        })
    }
}
