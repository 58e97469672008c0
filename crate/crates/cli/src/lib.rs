//! Command implementations behind the `antispoof` binary. Each `cmd_*`
//! function writes its outputs plus a run manifest and returns a one-line
//! summary.

pub mod args;
pub mod manifest;

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use antispoof_core::corpus::{self, ProtocolTable};
use antispoof_core::dsp::Frontend;
use antispoof_core::eval::{self, ScoreSet};
use antispoof_core::fusion::{self, FusionModel};
use antispoof_core::trainer::{self, attractors_from, pooled_inputs, TrainExtras};
use antispoof_core::{
    AttractorSet, Checkpoint, ChunkMode, DcfParams, Error, FeatureStore, FrontendConfig, LossKind, Partition,
    SamoConfig, TrainConfig, UtteranceRecord,
};
use clap::Parser;
use serde::Serialize;

pub use args::*;
use manifest::{dir_manifest, file_manifest, ManifestBuilder};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] Error),
}

impl CliError {
    /// 2 for usage errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli.command) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: &Command) -> CliResult<String> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Train(a) => cmd_train(a),
        Command::Score(a) => cmd_score(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Fuse(FuseCommand::Train(a)) => cmd_fuse_train(a),
        Command::Fuse(FuseCommand::Apply(a)) => cmd_fuse_apply(a),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|source| {
        CliError::Runtime(Error::Io {
            path: dir.to_path_buf(),
            source,
        })
    })
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|source| {
        CliError::Runtime(Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })
}

#[derive(Serialize)]
struct SynthEcho {
    speakers: u64,
    utts: u64,
}

pub fn cmd_synth(a: &SynthArgs) -> CliResult<String> {
    let mut m = ManifestBuilder::new("synth");
    m.seed(a.seed).config(SynthEcho {
        speakers: a.speakers,
        utts: a.utts,
    });
    let c = corpus::synth_corpus(a.speakers as usize, a.utts as usize, a.seed, &a.out)?;
    m.output("protocol", &a.out.join(corpus::PROTOCOL_FILE))
        .output("enrollment", &a.out.join(corpus::ENROLL_FILE))
        .output("audio", &a.out.join(corpus::WAV_DIR));
    m.write(&dir_manifest(&a.out))?;
    Ok(format!(
        "wrote {} trials and {} enrollment utterances to {}",
        c.protocol.len(),
        c.enrollment.len(),
        a.out.display()
    ))
}

fn select(protocol: &ProtocolTable, partition: Option<PartitionArg>) -> Vec<UtteranceRecord> {
    match partition {
        Some(p) => protocol.partition(p.into()).cloned().collect(),
        None => protocol.records().to_vec(),
    }
}

#[derive(Serialize)]
struct ExtractEcho<'a> {
    mode: &'static str,
    partition: Option<String>,
    frontend: &'a FrontendConfig,
}

pub fn cmd_extract(a: &ExtractArgs) -> CliResult<String> {
    let config = FrontendConfig {
        win_ms: a.win_ms,
        hop_ms: a.hop_ms,
        n_fft: a.n_fft,
        n_filters: a.n_filters,
        n_ceps: a.n_ceps,
        ..FrontendConfig::default()
    };
    let frontend = Frontend::new(config.clone()).map_err(|e| usage(e.to_string()))?;
    let protocol = ProtocolTable::load(&a.protocol)?;
    let records = select(&protocol, a.partition);
    let mode = match a.mode {
        ChunkArg::Train => ChunkMode::Train { seed: a.seed },
        ChunkArg::Infer => ChunkMode::Infer,
    };
    let store = match a.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| usage(format!("cannot start {n} threads: {e}")))?
            .install(|| FeatureStore::extract(&records, &a.audio_dir, mode, &frontend))?,
        None => FeatureStore::extract(&records, &a.audio_dir, mode, &frontend)?,
    };
    store.save_dir(&a.out)?;

    let mut m = ManifestBuilder::new("extract");
    m.config(ExtractEcho {
        mode: match a.mode {
            ChunkArg::Train => "train",
            ChunkArg::Infer => "infer",
        },
        partition: a.partition.map(|p| Partition::from(p).to_string()),
        frontend: &config,
    })
    .input("protocol", &a.protocol)
    .input("audio_dir", &a.audio_dir)
    .output("features", &a.out);
    if a.mode == ChunkArg::Train {
        m.seed(a.seed);
    }
    m.write(&dir_manifest(&a.out))?;
    Ok(format!("extracted {} feature files to {}", store.len(), a.out.display()))
}

/// Maps the train flags to a config, rejecting combinations that do not
/// apply to the chosen loss.
pub fn train_config(a: &TrainArgs) -> CliResult<TrainConfig> {
    if a.loss != LossKind::Samo {
        let stray: Vec<&str> = [
            (a.samo_update_interval.is_some(), "--samo-update-interval"),
            (a.samo_maxscore, "--samo-maxscore"),
            (a.samo_enroll, "--samo-enroll"),
        ]
        .into_iter()
        .filter_map(|(set, name)| set.then_some(name))
        .collect();
        if !stray.is_empty() {
            return Err(usage(format!("{} require --loss samo", stray.join(", "))));
        }
    }
    let defaults = TrainConfig::default();
    let mut embedder = defaults.embedder.clone();
    embedder.amff = !a.no_amff;
    let config = TrainConfig {
        base_lr: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        loss: a.loss,
        weighted: a.weighted,
        samo: SamoConfig {
            update_interval: a.samo_update_interval.unwrap_or(1) as usize,
            maxscore: a.samo_maxscore,
            use_enrollment: a.samo_enroll,
            weighted: a.weighted,
            ..SamoConfig::default()
        },
        embedder,
        seed: a.seed,
        ..defaults
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

pub const HISTORY_FILE: &str = "history.json";

pub fn cmd_train(a: &TrainArgs) -> CliResult<String> {
    let config = train_config(a)?;
    let protocol = ProtocolTable::load(&a.protocol)?;
    let train_recs: Vec<UtteranceRecord> = protocol.partition(Partition::Train).cloned().collect();
    let dev_recs: Vec<UtteranceRecord> = protocol.partition(Partition::Dev).cloned().collect();
    let train_store = FeatureStore::load_dir(&a.train_features, &train_recs)?;
    let mut dev_store = FeatureStore::load_dir(&a.dev_features, &dev_recs)?;

    let mut m = ManifestBuilder::new("train");
    m.input("protocol", &a.protocol)
        .input("train_features", &a.train_features)
        .input("dev_features", &a.dev_features);
    let enrollment = match &a.enroll_protocol {
        Some(path) => {
            let table = ProtocolTable::load(path)?.subset(Partition::Dev);
            if table.is_empty() {
                return Err(usage(format!("{} has no dev enrollment utterances", path.display())));
            }
            let dir = a.enroll_features.as_deref().unwrap_or(&a.dev_features);
            for (id, f) in FeatureStore::load_dir(dir, table.records())?.iter() {
                dev_store.insert(id, f.clone());
            }
            m.input("enroll_protocol", path).input("enroll_features", dir);
            Some(table)
        }
        None => None,
    };
    let outcome = trainer::train_with(
        &protocol,
        &train_store,
        &dev_store,
        &config,
        TrainExtras {
            enrollment: enrollment.as_ref(),
        },
    )?;
    outcome.best.save(&a.out)?;
    let history = serde_json::to_string_pretty(&outcome.history).map_err(Error::from)? + "\n";
    write_file(&a.out.join(HISTORY_FILE), &history)?;

    m.seed(a.seed)
        .config(&config)
        .output("checkpoint", &a.out)
        .output("history", &a.out.join(HISTORY_FILE));
    m.write(&dir_manifest(&a.out))?;
    let best = &outcome.best;
    Ok(format!(
        "best epoch {}: dev EER {:.4}, dev minDCF {:.4}",
        best.epoch, best.dev_eer, best.dev_min_dcf
    ))
}

#[derive(Serialize)]
struct ScoreEcho {
    loss: LossKind,
    partition: String,
    attractor_source: &'static str,
    enrollment_speakers: Vec<String>,
}

pub fn cmd_score(a: &ScoreArgs) -> CliResult<String> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let loss = ckpt.head.kind();
    if a.enroll_protocol.is_some() && loss != LossKind::Samo {
        return Err(usage(format!(
            "--enroll-protocol needs a samo checkpoint, this one was trained with {loss}"
        )));
    }
    let partition = Partition::from(a.partition);
    let protocol = ProtocolTable::load(&a.protocol)?;
    let records: Vec<UtteranceRecord> = protocol.partition(partition).cloned().collect();
    if records.is_empty() {
        return Err(usage(format!("protocol has no {partition} utterances")));
    }
    let store = FeatureStore::load_dir(&a.features, &records)?;

    let mut m = ManifestBuilder::new("score");
    m.input("checkpoint", &a.checkpoint)
        .input("protocol", &a.protocol)
        .input("features", &a.features);
    let enrolled: Option<AttractorSet> = match &a.enroll_protocol {
        Some(path) => {
            let table = ProtocolTable::load(path)?.subset(partition);
            if table.is_empty() {
                return Err(usage(format!(
                    "{} has no {partition} enrollment utterances",
                    path.display()
                )));
            }
            let dir = a.enroll_features.as_deref().unwrap_or(&a.features);
            let enroll_store = FeatureStore::load_dir(dir, table.records())?;
            let recs: Vec<&UtteranceRecord> = table.records().iter().collect();
            let x = pooled_inputs(&enroll_store, &recs)?;
            m.input("enroll_protocol", path).input("enroll_features", dir);
            Some(attractors_from(&ckpt.embedder, &recs, &x)?)
        }
        None => None,
    };
    let refs: Vec<&UtteranceRecord> = records.iter().collect();
    let scores = trainer::score_records(&ckpt, &store, &refs, enrolled.as_ref())?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    scores.save(&a.out)?;

    m.config(ScoreEcho {
        loss,
        partition: partition.to_string(),
        attractor_source: match (&enrolled, loss) {
            (Some(_), _) => "enrollment",
            (None, LossKind::Samo) => "training",
            (None, _) => "none",
        },
        enrollment_speakers: enrolled
            .as_ref()
            .map(|s| s.iter().map(|(k, _)| k.to_string()).collect())
            .unwrap_or_default(),
    })
    .output("scores", &a.out);
    m.write(&file_manifest(&a.out))?;
    Ok(format!("wrote {} scores to {}", scores.len(), a.out.display()))
}

pub const METRICS_FILE: &str = "metrics.json";
pub const BREAKDOWN_FILE: &str = "breakdown.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";

#[derive(Serialize)]
struct EvalReport {
    #[serde(flatten)]
    metrics: eval::Metrics,
    dcf: DcfParams,
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<String> {
    let dcf = DcfParams {
        c_miss: a.dcf_cmiss,
        c_fa: a.dcf_cfa,
        p_target: a.dcf_ptarget,
    };
    dcf.validate().map_err(|e| usage(e.to_string()))?;
    if a.bins == 0 {
        return Err(usage("--bins must be positive"));
    }
    let protocol = ProtocolTable::load(&a.protocol)?;
    let scores = ScoreSet::load(&a.scores)?;
    let (bona, spoof) = scores.split_by_label(&protocol)?;
    let metrics = eval::metrics(&bona, &spoof, &dcf)?;
    let report = eval::breakdown(&scores, &protocol, &dcf)?;
    let hist = eval::histogram(&bona, &spoof, a.bins)?;

    create_dir(&a.out)?;
    let json = serde_json::to_string_pretty(&EvalReport {
        metrics: metrics.clone(),
        dcf,
    })
    .map_err(Error::from)?
        + "\n";
    write_file(&a.out.join(METRICS_FILE), &json)?;
    write_file(&a.out.join(BREAKDOWN_FILE), &report.to_csv())?;
    write_file(&a.out.join(HISTOGRAM_FILE), &hist.to_csv())?;

    let mut m = ManifestBuilder::new("eval");
    m.config(dcf)
        .input("scores", &a.scores)
        .input("protocol", &a.protocol)
        .output("metrics", &a.out.join(METRICS_FILE))
        .output("breakdown", &a.out.join(BREAKDOWN_FILE))
        .output("histogram", &a.out.join(HISTOGRAM_FILE));
    m.write(&dir_manifest(&a.out))?;
    Ok(format!("EER {:.4}, minDCF {:.4}", metrics.eer, metrics.min_dcf))
}

fn load_sets(paths: &[std::path::PathBuf]) -> CliResult<Vec<ScoreSet>> {
    Ok(paths.iter().map(|p| ScoreSet::load(p)).collect::<Result<_, _>>()?)
}

#[derive(Serialize)]
struct FuseEcho {
    prior: f64,
    n_systems: usize,
    pooled_sets: usize,
    iterations: usize,
    converged: bool,
    objective: f64,
}

pub fn cmd_fuse_train(a: &FuseTrainArgs) -> CliResult<String> {
    if !(a.prior > 0.0 && a.prior < 1.0) {
        return Err(usage("--prior must lie in (0, 1)"));
    }
    if !a.pool_scores.is_empty() && a.pool_scores.len() != a.scores.len() {
        return Err(usage(format!(
            "--pool-scores gives {} subsystems, --scores gives {}",
            a.pool_scores.len(),
            a.scores.len()
        )));
    }
    let protocol = ProtocolTable::load(&a.protocol)?;
    let mut matrix = fusion::align_scores(&load_sets(&a.scores)?, &protocol)?;
    if !a.pool_scores.is_empty() {
        let extra = fusion::align_scores(&load_sets(&a.pool_scores)?, &protocol)?;
        matrix = matrix.pooled(extra)?;
    }
    let fit = fusion::train_fusion_with(&matrix, a.prior, &fusion::FusionOptions::default())?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fit.model.save(&a.out)?;

    let mut m = ManifestBuilder::new("fuse-train");
    m.config(FuseEcho {
        prior: a.prior,
        n_systems: matrix.n_systems(),
        pooled_sets: 1 + usize::from(!a.pool_scores.is_empty()),
        iterations: fit.iterations,
        converged: fit.converged,
        objective: fit.objective,
    })
    .input("protocol", &a.protocol);
    for (k, p) in a.scores.iter().enumerate() {
        m.input(&format!("scores_{}", k + 1), p);
    }
    for (k, p) in a.pool_scores.iter().enumerate() {
        m.input(&format!("pool_scores_{}", k + 1), p);
    }
    m.output("model", &a.out);
    m.write(&file_manifest(&a.out))?;
    Ok(format!(
        "fused {} subsystems over {} trials, objective {:.6}",
        matrix.n_systems(),
        matrix.len(),
        fit.objective
    ))
}

pub fn cmd_fuse_apply(a: &FuseApplyArgs) -> CliResult<String> {
    let model = FusionModel::load(&a.model)?;
    if model.weights.len() != a.scores.len() {
        return Err(usage(format!(
            "model fuses {} subsystems, got {} score files",
            model.weights.len(),
            a.scores.len()
        )));
    }
    let protocol = ProtocolTable::load(&a.protocol)?;
    let matrix = fusion::align_scores(&load_sets(&a.scores)?, &protocol)?;
    let fused = fusion::fuse_matrix(&model, &matrix)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fused.save(&a.out)?;

    let mut m = ManifestBuilder::new("fuse-apply");
    m.config(&model).input("model", &a.model).input("protocol", &a.protocol);
    for (k, p) in a.scores.iter().enumerate() {
        m.input(&format!("scores_{}", k + 1), p);
    }
    m.output("scores", &a.out);
    m.write(&file_manifest(&a.out))?;
    Ok(format!("wrote {} fused scores to {}", fused.len(), a.out.display()))
}
