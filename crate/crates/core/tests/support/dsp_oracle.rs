//! Slow reference front-end pieces: an O(N^2) DFT, a triangular filterbank
//! built from its edge formula, and a direct-sum DCT.
#![allow(dead_code)]

use std::f64::consts::PI;

use antispoof_core::corpus::{WaveChunk, CHUNK_LEN, SAMPLE_RATE};

pub const WIN: usize = 320;
pub const HOP: usize = 160;
pub const NFFT: usize = 512;
pub const NFILT: usize = 40;

pub fn hamming(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// One-sided power spectrum `|X_k|^2`, `k = 0..=n/2`, of `x` zero-padded to `n`.
pub fn dft_power(x: &[f64], n: usize) -> Vec<f64> {
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let ang = -2.0 * PI * (k * t % n) as f64 / n as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            re * re + im * im
        })
        .collect()
}

/// Edge bins of `n_filters` triangles spaced linearly over 0..Nyquist.
pub fn edge_bins(n_filters: usize, n_fft: usize) -> Vec<usize> {
    let top = n_fft / 2;
    (0..n_filters + 2)
        .map(|j| ((j * top) as f64 / (n_filters + 1) as f64).round() as usize)
        .collect()
}

pub fn triangle_weight(edges: &[usize], m: usize, k: usize) -> f64 {
    let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
    if k <= lo || k >= hi {
        0.0
    } else if k <= c {
        (k - lo) as f64 / (c - lo) as f64
    } else {
        (hi - k) as f64 / (hi - c) as f64
    }
}

pub fn filter_energies(power: &[f64], edges: &[usize], n_filters: usize) -> Vec<f64> {
    (0..n_filters)
        .map(|m| {
            power
                .iter()
                .enumerate()
                .map(|(k, p)| triangle_weight(edges, m, k) * p)
                .sum()
        })
        .collect()
}

/// Orthonormal DCT-II by direct summation.
pub fn dct2(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    (0..x.len())
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (PI * k as f64 * (i as f64 + 0.5) / n).cos())
                .sum();
            s * if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() }
        })
        .collect()
}

/// Frame `t` of a chunk, right-padded with zeros past the end.
pub fn frame(samples: &[f64], t: usize) -> Vec<f64> {
    (0..WIN)
        .map(|i| samples.get(t * HOP + i).copied().unwrap_or(0.0))
        .collect()
}

/// Static LFCC of one frame.
pub fn lfcc_frame(samples: &[f64], t: usize, floor: f64) -> Vec<f64> {
    let w = hamming(WIN);
    let x: Vec<f64> = frame(samples, t).iter().zip(&w).map(|(a, b)| a * b).collect();
    let e = filter_energies(&dft_power(&x, NFFT), &edge_bins(NFILT, NFFT), NFILT);
    dct2(&e.iter().map(|v| v.max(floor).ln()).collect::<Vec<_>>())
}

pub fn sine_chunk(freq_hz: f64, amp: f64) -> WaveChunk {
    let sr = f64::from(SAMPLE_RATE);
    WaveChunk::new(
        (0..CHUNK_LEN)
            .map(|n| amp * (2.0 * PI * freq_hz * n as f64 / sr).sin())
            .collect(),
    )
    .unwrap()
}
