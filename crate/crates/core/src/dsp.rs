//! LFCC front-end: 20 ms Hamming frames every 10 ms, 512-point power
//! spectrum, 40 linearly spaced triangular filters, log, orthonormal DCT-II,
//! then delta and delta-delta regression coefficients.

use std::f64::consts::PI;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::corpus::{WaveChunk, CHUNK_LEN, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Frames per 10 s chunk.
pub const FRAMES_PER_CHUNK: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontendConfig {
    pub win_ms: usize,
    pub hop_ms: usize,
    pub n_fft: usize,
    pub n_filters: usize,
    pub n_ceps: usize,
    pub delta_width: usize,
    pub log_floor: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            win_ms: 20,
            hop_ms: 10,
            n_fft: 512,
            n_filters: 40,
            n_ceps: 40,
            delta_width: 2,
            log_floor: 1e-10,
        }
    }
}

impl FrontendConfig {
    pub fn win_len(&self) -> usize {
        self.win_ms * SAMPLE_RATE as usize / 1000
    }

    pub fn hop_len(&self) -> usize {
        self.hop_ms * SAMPLE_RATE as usize / 1000
    }

    /// Output feature width: static, delta and delta-delta cepstra.
    pub fn feature_dims(&self) -> usize {
        3 * self.n_ceps
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_ceps == 0 || self.n_ceps > self.n_filters {
            return Err(Error::contract(format!(
                "n_ceps ({}) must be in 1..={}",
                self.n_ceps, self.n_filters
            )));
        }
        if self.hop_len() == 0 || self.win_len() == 0 {
            return Err(Error::contract("window and hop must be non-empty"));
        }
        if self.n_fft < self.win_len() {
            return Err(Error::contract(format!(
                "n_fft ({}) shorter than the window ({})",
                self.n_fft,
                self.win_len()
            )));
        }
        if self.delta_width == 0 {
            return Err(Error::contract("delta width must be at least 1"));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::contract("log floor must be positive"));
        }
        Ok(())
    }
}

/// Triangular filters with linearly spaced edges over `[0, Nyquist]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    /// `n_filters` rows of `n_fft / 2 + 1` weights.
    pub weights: Vec<Vec<f64>>,
    /// `n_filters + 2` edge bins; filter `k` is supported on `edge_bins[k]..=edge_bins[k + 2]`.
    pub edge_bins: Vec<usize>,
    pub center_bins: Vec<usize>,
    pub center_freqs_hz: Vec<f64>,
}

impl FilterBank {
    /// `n_filters + 2` equally spaced edge frequencies; filter `k` rises
    /// from edge `k` to a peak of 1 at edge `k + 1` and falls to edge `k + 2`.
    /// Edges snap to the nearest FFT bin.
    pub fn build(config: &FrontendConfig, sample_rate: u32) -> Result<Self> {
        config.validate()?;
        if sample_rate != SAMPLE_RATE {
            return Err(Error::contract(format!(
                "filterbank expects {SAMPLE_RATE} Hz, got {sample_rate}"
            )));
        }
        let n_bins = config.n_fft / 2 + 1;
        let nyquist = f64::from(sample_rate) / 2.0;
        let n_edges = config.n_filters + 2;
        let edge_hz: Vec<f64> = (0..n_edges)
            .map(|j| nyquist * j as f64 / (n_edges - 1) as f64)
            .collect();
        let edge_bins: Vec<usize> = edge_hz
            .iter()
            .map(|&f| (f * config.n_fft as f64 / f64::from(sample_rate)).round() as usize)
            .collect();

        let mut weights = Vec::with_capacity(config.n_filters);
        for k in 0..config.n_filters {
            let (lo, mid, hi) = (edge_bins[k], edge_bins[k + 1], edge_bins[k + 2]);
            if !(lo < mid && mid < hi) {
                return Err(Error::contract(format!(
                    "filter {k} collapses onto bins {lo}/{mid}/{hi}; n_fft too small"
                )));
            }
            let mut row = vec![0.0; n_bins];
            for (b, w) in row.iter_mut().enumerate().take(hi + 1).skip(lo) {
                *w = if b <= mid {
                    (b - lo) as f64 / (mid - lo) as f64
                } else {
                    (hi - b) as f64 / (hi - mid) as f64
                };
            }
            weights.push(row);
        }
        Ok(Self {
            weights,
            center_bins: edge_bins[1..=config.n_filters].to_vec(),
            center_freqs_hz: edge_hz[1..=config.n_filters].to_vec(),
            edge_bins,
        })
    }

    pub fn n_filters(&self) -> usize {
        self.weights.len()
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|row| row.iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }
}

/// Row-major `frames x dims` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Vec<f64>,
    frames: usize,
    dims: usize,
}

const LFC_MAGIC: &[u8; 4] = b"LFC1";

impl FeatureMatrix {
    pub fn new(values: Vec<f64>, frames: usize, dims: usize) -> Result<Self> {
        if values.len() != frames * dims {
            return Err(Error::contract(format!(
                "{} values cannot fill {frames} x {dims}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "feature matrix".into(),
                detail: format!("row {}, column {}", i / dims.max(1), i % dims.max(1)),
            });
        }
        Ok(Self {
            values,
            frames,
            dims,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dims = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dims) {
            return Err(Error::contract("ragged rows"));
        }
        Self::new(rows.concat(), rows.len(), dims)
    }

    pub fn zeros(frames: usize, dims: usize) -> Self {
        Self {
            values: vec![0.0; frames * dims],
            frames,
            dims,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.values[t * self.dims + c]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dims..(t + 1) * self.dims]
    }

    /// Concatenates matrices with equal frame counts along the coefficient axis.
    pub fn hstack(parts: &[&FeatureMatrix]) -> Result<Self> {
        let frames = parts.first().map_or(0, |m| m.frames);
        if parts.iter().any(|m| m.frames != frames) {
            return Err(Error::contract("hstack needs equal frame counts"));
        }
        let dims: usize = parts.iter().map(|m| m.dims).sum();
        let mut values = Vec::with_capacity(frames * dims);
        for t in 0..frames {
            for m in parts {
                values.extend_from_slice(m.row(t));
            }
        }
        Ok(Self {
            values,
            frames,
            dims,
        })
    }

    /// `LFC1`, rows and cols as u32 LE, then row-major f32 LE values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.values.len());
        out.extend_from_slice(LFC_MAGIC);
        out.extend_from_slice(&(self.frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.dims as u32).to_le_bytes());
        for &v in &self.values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 12 || &bytes[..4] != LFC_MAGIC {
            return Err("missing LFC1 header".into());
        }
        let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        if body.len() != rows * cols * 4 {
            return Err(format!(
                "expected {} payload bytes for {rows} x {cols}, found {}",
                rows * cols * 4,
                body.len()
            ));
        }
        let values = body
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
            .collect();
        FeatureMatrix::new(values, rows, cols).map_err(|e| e.to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|msg| Error::bad_file(path, msg))
    }
}

/// Orthonormal DCT-II / DCT-III pair with a precomputed basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Dct {
    /// `basis[k][i] = s_k cos(pi k (2i + 1) / 2n)`.
    basis: Vec<Vec<f64>>,
}

impl Dct {
    pub fn new(n: usize) -> Self {
        let nf = n as f64;
        let basis = (0..n)
            .map(|k| {
                let s = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
                (0..n)
                    .map(|i| s * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * nf)).cos())
                    .collect()
            })
            .collect();
        Self { basis }
    }

    /// Rows `k >= 1` of the basis sum to zero, so the first input is
    /// subtracted before projecting onto them: identical in exact
    /// arithmetic, and a constant input then yields exact zeros beyond `c0`.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.basis.len(), "dct length mismatch");
        self.basis
            .iter()
            .enumerate()
            .map(|(k, row)| {
                if k == 0 {
                    row[0] * x.iter().sum::<f64>()
                } else {
                    row.iter().zip(x).map(|(b, &v)| b * (v - x[0])).sum()
                }
            })
            .collect()
    }

    pub fn inverse(&self, c: &[f64]) -> Vec<f64> {
        assert_eq!(c.len(), self.basis.len(), "dct length mismatch");
        (0..c.len())
            .map(|i| self.basis.iter().zip(c).map(|(row, &ck)| row[i] * ck).sum())
            .collect()
    }
}

pub fn dct_ii_ortho(x: &[f64]) -> Vec<f64> {
    Dct::new(x.len()).forward(x)
}

pub fn dct_iii_ortho(c: &[f64]) -> Vec<f64> {
    Dct::new(c.len()).inverse(c)
}

/// Regression deltas with edge frames replicated:
/// `d_t = sum_n n (c_{t+n} - c_{t-n}) / (2 sum_n n^2)`, `n = 1..=width`.
pub fn compute_deltas(m: &FeatureMatrix, width: usize) -> Result<FeatureMatrix> {
    if width == 0 {
        return Err(Error::contract("delta width must be at least 1"));
    }
    if m.frames <= 2 * width {
        return Err(Error::contract(format!(
            "deltas of width {width} need more than {} frames, got {}",
            2 * width,
            m.frames
        )));
    }
    let last = m.frames - 1;
    let denom = 2.0 * (1..=width).map(|n| (n * n) as f64).sum::<f64>();
    let mut values = Vec::with_capacity(m.values.len());
    for t in 0..m.frames {
        for c in 0..m.dims {
            let mut acc = 0.0;
            for n in 1..=width {
                let ahead = m.get((t + n).min(last), c);
                let behind = m.get(t.saturating_sub(n), c);
                acc += n as f64 * (ahead - behind);
            }
            values.push(acc / denom);
        }
    }
    Ok(FeatureMatrix {
        values,
        frames: m.frames,
        dims: m.dims,
    })
}

/// Reusable front-end: filterbank, window and FFT plan built once.
#[derive(Clone)]
pub struct Frontend {
    config: FrontendConfig,
    filterbank: FilterBank,
    window: Vec<f64>,
    dct: Dct,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Frontend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Frontend").field("config", &self.config).finish()
    }
}

impl Frontend {
    pub fn new(config: FrontendConfig) -> Result<Self> {
        let filterbank = FilterBank::build(&config, SAMPLE_RATE)?;
        let win = config.win_len();
        let window = (0..win)
            .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (win - 1) as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(config.n_fft);
        let dct = Dct::new(config.n_filters);
        Ok(Self {
            config,
            filterbank,
            window,
            dct,
            fft,
        })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &FilterBank {
        &self.filterbank
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Frame count after right-padding by one hop.
    pub fn frame_count(&self, n_samples: usize) -> usize {
        let padded = n_samples + self.config.hop_len();
        let win = self.config.win_len();
        if padded < win {
            0
        } else {
            1 + (padded - win) / self.config.hop_len()
        }
    }

    /// Power spectrum of one Hamming-windowed frame (`n_fft / 2 + 1` bins).
    pub fn power_spectrum(&self, frame: &[f64]) -> Vec<f64> {
        let mut buf = vec![Complex::new(0.0, 0.0); self.config.n_fft];
        for ((slot, &x), &w) in buf.iter_mut().zip(frame).zip(&self.window) {
            slot.re = x * w;
        }
        self.fft.process(&mut buf);
        buf[..self.config.n_fft / 2 + 1]
            .iter()
            .map(|z| z.norm_sqr())
            .collect()
    }

    /// Pre-log filterbank energies, one row per frame.
    pub fn filterbank_energies(&self, chunk: &WaveChunk) -> Vec<Vec<f64>> {
        let hop = self.config.hop_len();
        let win = self.config.win_len();
        let mut padded = chunk.samples().to_vec();
        padded.resize(CHUNK_LEN + hop, 0.0);
        (0..self.frame_count(CHUNK_LEN))
            .map(|t| {
                let frame = &padded[t * hop..t * hop + win];
                self.filterbank.apply(&self.power_spectrum(frame))
            })
            .collect()
    }

    /// Static cepstra, `1000 x n_ceps` for a chunk.
    pub fn extract_lfcc(&self, chunk: &WaveChunk) -> Result<FeatureMatrix> {
        if chunk.samples().len() != CHUNK_LEN {
            return Err(Error::contract("chunk has the wrong length"));
        }
        let n_ceps = self.config.n_ceps;
        let energies = self.filterbank_energies(chunk);
        let mut values = Vec::with_capacity(energies.len() * n_ceps);
        for e in &energies {
            let logs: Vec<f64> = e.iter().map(|&v| v.max(self.config.log_floor).ln()).collect();
            values.extend_from_slice(&self.dct.forward(&logs)[..n_ceps]);
        }
        FeatureMatrix::new(values, energies.len(), n_ceps)
    }

    /// `[static | delta | delta-delta]`, `1000 x 3 n_ceps` for a chunk.
    pub fn extract_features(&self, chunk: &WaveChunk) -> Result<FeatureMatrix> {
        let stat = self.extract_lfcc(chunk)?;
        let d1 = compute_deltas(&stat, self.config.delta_width)?;
        let d2 = compute_deltas(&d1, self.config.delta_width)?;
        FeatureMatrix::hstack(&[&stat, &d1, &d2])
    }
}

pub fn build_filterbank(config: &FrontendConfig, sample_rate: u32) -> Result<FilterBank> {
    FilterBank::build(config, sample_rate)
}

pub fn extract_lfcc(chunk: &WaveChunk, config: &FrontendConfig) -> Result<FeatureMatrix> {
    Frontend::new(config.clone())?.extract_lfcc(chunk)
}

pub fn extract_features(chunk: &WaveChunk, config: &FrontendConfig) -> Result<FeatureMatrix> {
    Frontend::new(config.clone())?.extract_features(chunk)
}
