//! Forward and inverse STFT with Hann analysis/synthesis windows and
//! weighted overlap-add normalization.

use ndarray::Array3;
use num_complex::Complex64;
use rustfft::FftPlanner;

use super::{ComplexSpectrogram, StereoWaveform, HOP, WINDOW_SIZE};
use crate::error::{Error, Result};

/// Periodic Hann window of length `n`.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect()
}

/// Reflect-pad a channel by `pad` samples on both sides (edge sample not
/// repeated, matching `np.pad(..., mode="reflect")`).
fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    assert!(n > pad, "signal too short for reflect padding");
    let mut out = Vec::with_capacity(n + 2 * pad);
    for i in 0..pad {
        out.push(x[pad - i]);
    }
    out.extend_from_slice(x);
    for i in 0..pad {
        out.push(x[n - 2 - i]);
    }
    out
}

/// Short-time Fourier transform with centered frames.
///
/// Frames are windowed with a periodic Hann window of `WINDOW_SIZE` samples
/// at hops of `HOP`; the signal is reflect-padded by half a window so frame
/// `m` is centered at sample `m * HOP`. The frame count is
/// `ceil(n_samples / HOP)` and the bin count `WINDOW_SIZE / 2 + 1`.
pub fn stft(wave: &StereoWaveform) -> Result<ComplexSpectrogram> {
    let n = wave.n_samples();
    if n < WINDOW_SIZE {
        return Err(Error::InputTooShort { got: n, need: WINDOW_SIZE });
    }
    let pad = WINDOW_SIZE / 2;
    let n_bins = WINDOW_SIZE / 2 + 1;
    let n_frames = n.div_ceil(HOP);
    let window = hann(WINDOW_SIZE);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(WINDOW_SIZE);

    let mut bins = Array3::zeros((2, n_bins, n_frames));
    let mut buf = vec![Complex64::new(0.0, 0.0); WINDOW_SIZE];
    for ch in 0..2 {
        let channel: Vec<f64> = wave.samples.row(ch).to_vec();
        let padded = reflect_pad(&channel, pad);
        for m in 0..n_frames {
            let start = m * HOP;
            for i in 0..WINDOW_SIZE {
                buf[i] = Complex64::new(padded[start + i] * window[i], 0.0);
            }
            fft.process(&mut buf);
            for k in 0..n_bins {
                bins[[ch, k, m]] = buf[k];
            }
        }
    }

    Ok(ComplexSpectrogram { bins, window_size: WINDOW_SIZE, hop: HOP })
}

/// Inverse STFT via weighted overlap-add.
///
/// Each frame is inverted, windowed again with the Hann synthesis window and
/// accumulated; the result is divided by the accumulated squared window so
/// reconstruction is exact wherever any frame coverage exists. The output is
/// trimmed to `n_samples`.
pub fn istft(spec: &ComplexSpectrogram, n_samples: usize) -> Result<StereoWaveform> {
    let w = spec.window_size;
    let hop = spec.hop;
    if w != WINDOW_SIZE || hop != HOP {
        return Err(Error::MetadataMismatch(format!(
            "spectrogram produced with window {w} / hop {hop}, expected {WINDOW_SIZE} / {HOP}"
        )));
    }
    let n_bins = w / 2 + 1;
    if spec.bins.shape()[0] != 2 || spec.n_bins() != n_bins {
        return Err(Error::MetadataMismatch(format!(
            "expected [2, {n_bins}, T] spectrogram, got {:?}",
            spec.bins.shape()
        )));
    }
    let n_frames = spec.n_frames();
    let pad = w / 2;
    let acc_len = (n_frames - 1) * hop + w;
    if pad + n_samples > acc_len {
        return Err(Error::MetadataMismatch(format!(
            "{n_frames} frames cover {} samples, {n_samples} requested",
            acc_len.saturating_sub(pad)
        )));
    }

    let window = hann(w);
    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(w);

    let mut out = StereoWaveform::zeros(n_samples, crate::dsp::SAMPLE_RATE);
    let mut buf = vec![Complex64::new(0.0, 0.0); w];
    for ch in 0..2 {
        let mut acc = vec![0.0f64; acc_len];
        let mut wsum = vec![0.0f64; acc_len];
        for m in 0..n_frames {
            // Rebuild the full conjugate-symmetric spectrum from the
            // non-negative bins.
            for k in 0..n_bins {
                buf[k] = spec.bins[[ch, k, m]];
            }
            for k in n_bins..w {
                buf[k] = spec.bins[[ch, w - k, m]].conj();
            }
            ifft.process(&mut buf);
            let start = m * hop;
            for i in 0..w {
                acc[start + i] += buf[i].re / w as f64 * window[i];
                wsum[start + i] += window[i] * window[i];
            }
        }
        for j in 0..n_samples {
            let idx = pad + j;
            if wsum[idx] > 1e-12 {
                out.samples[[ch, j]] = acc[idx] / wsum[idx];
            }
        }
    }
    Ok(out)
}
