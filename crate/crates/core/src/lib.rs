//! Speech anti-spoofing countermeasure toolkit: LFCC front-end, a small
//! embedding network with adaptive multi-scale feature fusion, one-class
//! losses (OC-Softmax, SAMO) with attractor scoring, detection metrics and
//! logistic-regression score fusion.

pub mod corpus;
pub mod dsp;
pub mod embedder;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod losses;
pub mod rng;
pub mod store;
pub mod trainer;

pub use corpus::{Label, Partition, ProtocolTable, UtteranceRecord, WaveBuffer, WaveChunk};
pub use dsp::{FeatureMatrix, FrontendConfig};
pub use error::{Error, Result};
pub use embedder::{Embedder, EmbedderConfig};
pub use eval::{DcfParams, Metrics, ScoreSet};
pub use fusion::FusionModel;
pub use losses::{AttractorSet, ClassWeights, SamoConfig};
pub use store::{ChunkMode, FeatureStore};
pub use trainer::{Checkpoint, LossKind, TrainConfig};
