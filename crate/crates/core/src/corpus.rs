//! Protocol metadata, waveform ingestion, the fixed 10 s chunk policy and a
//! synthetic bonafide/spoof corpus generator.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::rng;

pub const SAMPLE_RATE: u32 = 16_000;
/// 10 s at 16 kHz.
pub const CHUNK_LEN: usize = 160_000;
pub const NOT_APPLICABLE: &str = "-";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Bonafide,
    Spoof,
}

impl Label {
    /// Class index used by the losses: 0 for bonafide, 1 for spoof.
    pub fn index(self) -> usize {
        match self {
            Label::Bonafide => 0,
            Label::Spoof => 1,
        }
    }

    pub fn is_bonafide(self) -> bool {
        self == Label::Bonafide
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Bonafide => "bonafide",
            Label::Spoof => "spoof",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "bonafide" => Ok(Label::Bonafide),
            "spoof" => Ok(Label::Spoof),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Partition {
    Train,
    Dev,
    Eval,
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::Train => "train",
            Partition::Dev => "dev",
            Partition::Eval => "eval",
        })
    }
}

impl FromStr for Partition {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Partition::Train),
            "dev" => Ok(Partition::Dev),
            "eval" => Ok(Partition::Eval),
            other => Err(format!("unknown partition `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtteranceRecord {
    pub utt_id: String,
    pub speaker_id: String,
    pub label: Label,
    /// `"-"` for bonafide.
    pub attack_id: String,
    /// `"-"` when no codec applies.
    pub codec_id: String,
    pub partition: Partition,
}

/// Ordered protocol rows with a unique-id index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProtocolTable {
    records: Vec<UtteranceRecord>,
    index: HashMap<String, usize>,
}

impl ProtocolTable {
    pub fn from_records(records: Vec<UtteranceRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        for (pos, rec) in records.iter().enumerate() {
            if rec.label.is_bonafide() && rec.attack_id != NOT_APPLICABLE {
                return Err(Error::Parse {
                    line: pos + 1,
                    msg: format!("bonafide record `{}` carries attack `{}`", rec.utt_id, rec.attack_id),
                });
            }
            if index.insert(rec.utt_id.clone(), pos).is_some() {
                return Err(Error::DuplicateKey {
                    key: rec.utt_id.clone(),
                    line: pos + 1,
                });
            }
        }
        Ok(Self { records, index })
    }

    pub fn records(&self) -> &[UtteranceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, utt_id: &str) -> Option<&UtteranceRecord> {
        self.index.get(utt_id).map(|&i| &self.records[i])
    }

    pub fn position(&self, utt_id: &str) -> Option<usize> {
        self.index.get(utt_id).copied()
    }

    pub fn partition(&self, part: Partition) -> impl Iterator<Item = &UtteranceRecord> {
        self.records.iter().filter(move |r| r.partition == part)
    }

    /// A new table holding only the rows of `part`, in order.
    pub fn subset(&self, part: Partition) -> ProtocolTable {
        let records: Vec<_> = self.partition(part).cloned().collect();
        let index = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.utt_id.clone(), i))
            .collect();
        ProtocolTable { records, index }
    }

    /// Checks that `part` holds at least one trial of each class.
    pub fn require_both_labels(&self, part: Partition) -> Result<()> {
        let (mut bona, mut spoof) = (false, false);
        for r in self.partition(part) {
            match r.label {
                Label::Bonafide => bona = true,
                Label::Spoof => spoof = true,
            }
        }
        if bona && spoof {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "partition {part} needs both bonafide and spoof records"
            )))
        }
    }

    /// Single-space separated text in protocol column order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&format!(
                "{} {} {} {} {} {}\n",
                r.utt_id, r.speaker_id, r.attack_id, r.codec_id, r.label, r.partition
            ));
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_protocol(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Parses `utt_id speaker_id attack_id codec_id label partition` rows.
/// Blank lines are skipped; line numbers in errors are 1-based.
pub fn parse_protocol(text: &str) -> Result<ProtocolTable> {
    let mut records = Vec::new();
    let mut index = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() != 6 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 6 columns, found {}", cols.len()),
            });
        }
        let bad = |msg: String| Error::Parse { line: line_no, msg };
        let label: Label = cols[4].parse().map_err(bad)?;
        let partition: Partition = cols[5].parse().map_err(bad)?;
        if label.is_bonafide() && cols[2] != NOT_APPLICABLE {
            return Err(bad(format!("bonafide record carries attack `{}`", cols[2])));
        }
        if index.insert(cols[0].to_string(), records.len()).is_some() {
            return Err(Error::DuplicateKey {
                key: cols[0].to_string(),
                line: line_no,
            });
        }
        records.push(UtteranceRecord {
            utt_id: cols[0].to_string(),
            speaker_id: cols[1].to_string(),
            attack_id: cols[2].to_string(),
            codec_id: cols[3].to_string(),
            label,
            partition,
        });
    }
    Ok(ProtocolTable { records, index })
}

/// Mono 16 kHz waveform with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveBuffer {
    samples: Vec<f64>,
}

impl WaveBuffer {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("waveform has no samples"));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }
}

/// Exactly [`CHUNK_LEN`] samples.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveChunk {
    samples: Vec<f64>,
}

impl WaveChunk {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.len() != CHUNK_LEN {
            return Err(Error::contract(format!(
                "chunk must hold {CHUNK_LEN} samples, got {}",
                samples.len()
            )));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_wave(self) -> WaveBuffer {
        WaveBuffer {
            samples: self.samples,
        }
    }
}

/// Reads a RIFF/WAVE PCM16 mono 16 kHz file; samples are scaled by 1/32768.
pub fn load_wave(path: &Path) -> Result<WaveBuffer> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format {
            field: "container",
            detail: other.to_string(),
        },
    })?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::Format {
            field: "sample_rate",
            detail: format!("{} Hz, expected {SAMPLE_RATE}", spec.sample_rate),
        });
    }
    if spec.channels != 1 {
        return Err(Error::Format {
            field: "channels",
            detail: format!("{} channels, expected mono", spec.channels),
        });
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Format {
            field: "encoding",
            detail: format!("{:?} {}-bit, expected PCM16", spec.sample_format, spec.bits_per_sample),
        });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| {
            s.map(|v| f64::from(v) / 32768.0).map_err(|e| Error::Format {
                field: "data",
                detail: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    WaveBuffer::new(samples)
}

/// Writes PCM16 mono 16 kHz; samples are clamped and rounded to `x * 32767`.
pub fn write_wave(path: &Path, samples: &[f64]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::bad_file(path, other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &x in samples {
        let v = (x.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(to_err)?;
    }
    writer.finalize().map_err(to_err)
}

fn tile(samples: &[f64]) -> Vec<f64> {
    samples.iter().copied().cycle().take(CHUNK_LEN).collect()
}

/// Training chunk: random 10 s crop of long utterances, tiling of short ones.
pub fn chunk_train(wave: &WaveBuffer, rng: &mut impl RngCore) -> Result<WaveChunk> {
    let s = wave.samples();
    if s.is_empty() {
        return Err(Error::EmptyInput("cannot chunk an empty waveform"));
    }
    let samples = if s.len() > CHUNK_LEN {
        let offset = rng::below(rng, (s.len() - CHUNK_LEN + 1) as u64) as usize;
        s[offset..offset + CHUNK_LEN].to_vec()
    } else {
        tile(s)
    };
    Ok(WaveChunk { samples })
}

/// Inference chunk: the first 10 s, or the utterance tiled up to 10 s.
pub fn chunk_infer(wave: &WaveBuffer) -> Result<WaveChunk> {
    let s = wave.samples();
    if s.is_empty() {
        return Err(Error::EmptyInput("cannot chunk an empty waveform"));
    }
    let samples = if s.len() >= CHUNK_LEN {
        s[..CHUNK_LEN].to_vec()
    } else {
        tile(s)
    };
    Ok(WaveChunk { samples })
}

/// Synthetic spoofing attacks applied to the bonafide generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attack {
    /// Harmonic phases re-drawn every block, producing phase discontinuities.
    PhaseRandomization,
    /// Coarse amplitude quantization, a broadband buzz.
    QuantizationBuzz,
    /// Unfiltered 2x upsampling residue: a mirrored copy of the spectrum
    /// above 4 kHz.
    SpectralImaging,
}

impl Attack {
    pub const ALL: [Attack; 3] = [
        Attack::PhaseRandomization,
        Attack::QuantizationBuzz,
        Attack::SpectralImaging,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Attack::PhaseRandomization => "T01",
            Attack::QuantizationBuzz => "T02",
            Attack::SpectralImaging => "T03",
        }
    }
}

pub const PROTOCOL_FILE: &str = "protocol.txt";
pub const ENROLL_FILE: &str = "enroll.txt";
pub const WAV_DIR: &str = "wav";
const ENROLL_PER_SPEAKER: usize = 2;
const N_HARMONICS: usize = 8;

/// Output of [`synth_corpus`]: trial protocol plus enrollment protocol
/// (extra bonafide utterances of every dev and eval speaker).
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub protocol: ProtocolTable,
    pub enrollment: ProtocolTable,
}

pub fn wav_path(audio_dir: &Path, utt_id: &str) -> PathBuf {
    audio_dir.join(format!("{utt_id}.wav"))
}

struct Voice {
    f0: f64,
    tilt: f64,
    seed: u64,
}

/// Writes a deterministic desk-scale corpus under `out_dir`:
/// `wav/<utt_id>.wav`, `protocol.txt` and `enroll.txt`.
///
/// Speakers are split 60/20/20 into train/dev/eval (speaker-disjoint); each
/// speaker gets `utts_per_speaker` trials, 30% bonafide (rounded up) and the
/// rest spoofed by attacks T01..T03 in rotation. Durations are 4-14 s.
pub fn synth_corpus(
    n_speakers: usize,
    utts_per_speaker: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<SynthCorpus> {
    if n_speakers < 2 {
        return Err(Error::contract("synthetic corpus needs at least 2 speakers"));
    }
    if utts_per_speaker < 4 {
        return Err(Error::contract("synthetic corpus needs at least 4 utterances per speaker"));
    }
    let wav_dir = out_dir.join(WAV_DIR);
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;

    let mut master = rng::seeded(seed);
    let voices: Vec<Voice> = (0..n_speakers)
        .map(|_| Voice {
            f0: rng::uniform(&mut master, 100.0, 300.0),
            tilt: rng::uniform(&mut master, 0.6, 1.4),
            seed: master.next_u64(),
        })
        .collect();
    let partitions = split_speakers(n_speakers);
    let n_bona = (utts_per_speaker * 3).div_ceil(10);

    let mut records = Vec::new();
    let mut enroll = Vec::new();
    for (s, voice) in voices.iter().enumerate() {
        let speaker_id = format!("S{:03}", s + 1);
        let partition = partitions[s];
        for j in 0..utts_per_speaker {
            let utt_id = format!("{speaker_id}_{j:03}");
            let (label, attack) = if j < n_bona {
                (Label::Bonafide, None)
            } else {
                (Label::Spoof, Some(Attack::ALL[(j - n_bona) % 3]))
            };
            let samples = render(voice, &utt_id, attack);
            write_wave(&wav_path(&wav_dir, &utt_id), &samples)?;
            records.push(UtteranceRecord {
                utt_id,
                speaker_id: speaker_id.clone(),
                label,
                attack_id: attack.map_or(NOT_APPLICABLE, Attack::id).to_string(),
                codec_id: NOT_APPLICABLE.to_string(),
                partition,
            });
        }
        if partition != Partition::Train {
            for e in 0..ENROLL_PER_SPEAKER {
                let utt_id = format!("{speaker_id}_E{e:02}");
                let samples = render(voice, &utt_id, None);
                write_wave(&wav_path(&wav_dir, &utt_id), &samples)?;
                enroll.push(UtteranceRecord {
                    utt_id,
                    speaker_id: speaker_id.clone(),
                    label: Label::Bonafide,
                    attack_id: NOT_APPLICABLE.to_string(),
                    codec_id: NOT_APPLICABLE.to_string(),
                    partition,
                });
            }
        }
    }
    let protocol = ProtocolTable::from_records(records)?;
    let enrollment = ProtocolTable::from_records(enroll)?;
    protocol.save(&out_dir.join(PROTOCOL_FILE))?;
    enrollment.save(&out_dir.join(ENROLL_FILE))?;
    Ok(SynthCorpus {
        protocol,
        enrollment,
    })
}

fn split_speakers(n: usize) -> Vec<Partition> {
    let n_train = ((n as f64 * 0.6).round() as usize).clamp(1, n - 1);
    let mut n_dev = ((n as f64 * 0.2).round() as usize).max(1);
    if n_train + n_dev > n {
        n_dev = n - n_train;
    }
    (0..n)
        .map(|i| {
            if i < n_train {
                Partition::Train
            } else if i < n_train + n_dev {
                Partition::Dev
            } else {
                Partition::Eval
            }
        })
        .collect()
}

/// Harmonic voice with a syllabic envelope and a small noise floor, then
/// the optional attack. Attack parameters depend only on the speaker seed
/// and the attack id.
fn render(voice: &Voice, utt_id: &str, attack: Option<Attack>) -> Vec<f64> {
    let mut rng = rng::derived(voice.seed, utt_id);
    let seconds = rng::uniform(&mut rng, 4.0, 14.0);
    let len = (seconds * f64::from(SAMPLE_RATE)).round() as usize;
    let f0 = voice.f0 * (1.0 + rng::uniform(&mut rng, -0.03, 0.03));
    let rate = rng::uniform(&mut rng, 3.0, 5.0);
    let mut phases: Vec<f64> = (0..N_HARMONICS)
        .map(|_| rng::uniform(&mut rng, 0.0, std::f64::consts::TAU))
        .collect();
    let amps: Vec<f64> = (1..=N_HARMONICS)
        .map(|h| (h as f64).powf(-voice.tilt))
        .collect();
    let norm = 0.3 / amps.iter().sum::<f64>();

    let mut attack_rng = attack.map(|a| rng::derived(voice.seed, a.id()));
    let block = match (attack, attack_rng.as_mut()) {
        (Some(Attack::PhaseRandomization), Some(r)) => 240 + rng::below(r, 241) as usize,
        _ => usize::MAX,
    };
    let levels = match (attack, attack_rng.as_mut()) {
        (Some(Attack::QuantizationBuzz), Some(r)) => 6.0 + rng::below(r, 7) as f64,
        _ => 0.0,
    };
    let image = match (attack, attack_rng.as_mut()) {
        (Some(Attack::SpectralImaging), Some(r)) => rng::uniform(r, 0.3, 0.6),
        _ => 0.0,
    };

    let dt = 1.0 / f64::from(SAMPLE_RATE);
    let steps: Vec<f64> = (1..=N_HARMONICS)
        .map(|h| std::f64::consts::TAU * f0 * h as f64 * dt)
        .collect();
    let mut out = Vec::with_capacity(len);
    let mut block_start = 0;
    for n in 0..len {
        if n - block_start == block {
            block_start = n;
            for p in phases.iter_mut() {
                *p = rng::uniform(&mut rng, 0.0, std::f64::consts::TAU);
            }
        }
        let t = n as f64 * dt;
        let env = 0.55 + 0.45 * (std::f64::consts::PI * rate * t).sin().powi(2);
        let mut x = 0.0;
        for h in 0..N_HARMONICS {
            x += amps[h] * (phases[h] + steps[h] * (n - block_start) as f64).sin();
        }
        x = x * norm * env + rng::uniform(&mut rng, -0.003, 0.003);
        if levels > 0.0 {
            x = (x * levels).round() / levels;
        }
        if image > 0.0 {
            x += if n % 2 == 0 { image * x } else { -image * x };
        }
        out.push(x.clamp(-1.0, 1.0));
    }
    out
}
