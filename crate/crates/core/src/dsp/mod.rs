//! Deterministic signal transforms between waveforms and the diffusion
//! state space.
//!
//! The pipeline direction is:
//!
//! ```text
//! StereoWaveform --stft--> ComplexSpectrogram --compress--> ComplexSpectrogram
//!     --stack_channels--> ChannelStack --band_split--> BandSplitTensor
//! ```
//!
//! and every stage has an inverse (`istft`, `expand`, `unstack_channels`,
//! `band_merge`). All operations are pure functions on immutable inputs.

mod bands;
mod chunks;
mod stft;

pub use bands::{band_merge, band_split, stack_channels, unstack_channels};
pub use chunks::{chunk, overlap_add, ChunkPlan};
pub use stft::{istft, stft};

use ndarray::{Array2, Array3};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Pipeline sample rate. Inputs at any other rate are rejected.
pub const SAMPLE_RATE: u32 = 44100;
/// STFT analysis window length in samples.
pub const WINDOW_SIZE: usize = 2048;
/// STFT hop length in samples.
pub const HOP: usize = 1024;
/// Number of frequency bands the spectrogram is split into.
pub const N_SPLITS: usize = 4;
/// Amplitude-compression exponent.
pub const COMPRESS_ALPHA: f64 = 0.667;
/// Amplitude-compression scale.
pub const COMPRESS_BETA: f64 = 0.065;

/// Time-domain stereo audio with peak-gain bookkeeping.
///
/// `peak_gain` records the divisor applied by [`peak_normalize`] (1.0 when
/// no normalization has been applied) so the original level can be restored
/// after processing.
#[derive(Debug, Clone)]
pub struct StereoWaveform {
    /// Samples, shape `[2, n_samples]`.
    pub samples: Array2<f64>,
    pub sample_rate: u32,
    pub peak_gain: f64,
}

impl StereoWaveform {
    pub fn new(samples: Array2<f64>, sample_rate: u32) -> Self {
        assert_eq!(samples.nrows(), 2, "waveform must have 2 channels");
        Self { samples, sample_rate, peak_gain: 1.0 }
    }

    /// All-zero waveform of the given length.
    pub fn zeros(n_samples: usize, sample_rate: u32) -> Self {
        Self::new(Array2::zeros((2, n_samples)), sample_rate)
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }
}

/// Complex STFT of a stereo signal, shape `[2, F, T]`, with the analysis
/// metadata needed for inversion.
#[derive(Debug, Clone)]
pub struct ComplexSpectrogram {
    pub bins: Array3<Complex64>,
    pub window_size: usize,
    pub hop: usize,
}

impl ComplexSpectrogram {
    pub fn n_bins(&self) -> usize {
        self.bins.shape()[1]
    }

    pub fn n_frames(&self) -> usize {
        self.bins.shape()[2]
    }
}

/// Meaning of the channel axis of a [`ChannelStack`] / [`BandSplitTensor`]:
/// `[L-re, L-im, R-re, R-im]`, repeated per band (band-major) after a split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelLayout {
    /// Real/imag channels per band (4 for stereo).
    pub base_channels: usize,
    /// Number of frequency bands stacked into the channel axis.
    pub n_bands: usize,
}

impl std::fmt::Display for ChannelLayout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "band-major [L-re, L-im, R-re, R-im] x {} band(s)",
            self.n_bands
        )
    }
}

/// Real-valued channel view of a complex spectrogram, shape `[C, F, T]`.
///
/// Values are stored at model precision (f32); the cast happens here, at the
/// boundary between signal processing and the network.
#[derive(Debug, Clone)]
pub struct ChannelStack {
    pub values: Array3<f32>,
    pub layout: ChannelLayout,
    pub window_size: usize,
    pub hop: usize,
}

/// The diffusion state space: a channel stack whose frequency axis has been
/// partitioned into `n_splits` contiguous bands, each stacked as a channel
/// group. Shape `[C * n_splits, f_trunc / n_splits, T]`.
#[derive(Debug, Clone)]
pub struct BandSplitTensor {
    pub values: Array3<f32>,
    pub n_splits: usize,
    /// Bins retained before splitting (the Nyquist bin is dropped when the
    /// bin count is not divisible by `n_splits`).
    pub f_trunc: usize,
    /// Bin count of the stack this tensor was split from.
    pub f_orig: usize,
    pub layout: ChannelLayout,
    pub window_size: usize,
    pub hop: usize,
}

impl BandSplitTensor {
    pub fn shape(&self) -> (usize, usize, usize) {
        let s = self.values.shape();
        (s[0], s[1], s[2])
    }
}

/// Scale the waveform so its absolute peak is 1, recording the divisor in
/// `peak_gain`. All-zero input is returned unchanged with `peak_gain = 1`.
pub fn peak_normalize(wave: &StereoWaveform) -> StereoWaveform {
    let peak = wave.peak();
    if peak == 0.0 {
        let mut out = wave.clone();
        out.peak_gain = 1.0;
        return out;
    }
    StereoWaveform {
        samples: wave.samples.mapv(|v| v / peak),
        sample_rate: wave.sample_rate,
        peak_gain: peak,
    }
}

/// Amplitude compression: `c -> beta * |c|^alpha * e^{i angle(c)}`.
///
/// Phase is preserved exactly because the transform only rescales each bin
/// by a non-negative real factor. Zero bins stay exactly zero.
pub fn compress(spec: &ComplexSpectrogram, alpha: f64, beta: f64) -> ComplexSpectrogram {
    assert!(alpha > 0.0 && beta > 0.0, "compression parameters must be positive");
    let bins = spec.bins.mapv(|c| {
        let mag = c.norm();
        if mag == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            c * (beta * mag.powf(alpha - 1.0))
        }
    });
    ComplexSpectrogram { bins, window_size: spec.window_size, hop: spec.hop }
}

/// Inverse of [`compress`]: `c~ -> (|c~| / beta)^{1/alpha} * e^{i angle(c~)}`.
pub fn expand(spec: &ComplexSpectrogram, alpha: f64, beta: f64) -> ComplexSpectrogram {
    assert!(alpha > 0.0 && beta > 0.0, "compression parameters must be positive");
    let bins = spec.bins.mapv(|c| {
        let mag = c.norm();
        if mag == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            c * ((mag / beta).powf(1.0 / alpha) / mag)
        }
    });
    ComplexSpectrogram { bins, window_size: spec.window_size, hop: spec.hop }
}

/// Reject non-pipeline sample rates with a clear error.
pub fn check_sample_rate(rate: u32) -> Result<()> {
    if rate != SAMPLE_RATE {
        return Err(Error::SampleRate { got: rate, expected: SAMPLE_RATE });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::Array3;

    fn spec_from_values(vals: Vec<Complex64>, f: usize, t: usize) -> ComplexSpectrogram {
        let mut both = vals.clone();
        both.extend_from_slice(&vals);
        ComplexSpectrogram {
            bins: Array3::from_shape_vec((2, f, t), both).unwrap(),
            window_size: WINDOW_SIZE,
            hop: HOP,
        }
    }

    #[test]
    fn peak_normalize_scales_to_unit_peak() {
        let mut samples = Array2::zeros((2, 8));
        samples[[0, 3]] = 0.5;
        samples[[1, 5]] = -0.25;
        let out = peak_normalize(&StereoWaveform::new(samples, SAMPLE_RATE));
        assert_relative_eq!(out.peak(), 1.0, max_relative = 1e-7);
        assert_eq!(out.peak_gain, 0.5);
    }

    #[test]
    fn peak_normalize_zero_signal_is_identity() {
        let out = peak_normalize(&StereoWaveform::zeros(16, SAMPLE_RATE));
        assert_eq!(out.peak(), 0.0);
        assert_eq!(out.peak_gain, 1.0);
    }

    #[test]
    fn peak_normalize_already_normalized() {
        let mut samples = Array2::zeros((2, 4));
        samples[[0, 0]] = -1.0;
        samples[[1, 2]] = 0.3;
        let input = StereoWaveform::new(samples, SAMPLE_RATE);
        let out = peak_normalize(&input);
        assert_eq!(out.samples, input.samples);
        assert_eq!(out.peak_gain, 1.0);
    }

    #[test]
    fn compress_unit_magnitude_maps_to_beta() {
        let phase = 0.7f64;
        let c = Complex64::from_polar(1.0, phase);
        let spec = spec_from_values(vec![c], 1, 1);
        let out = compress(&spec, COMPRESS_ALPHA, COMPRESS_BETA);
        let o = out.bins[[0, 0, 0]];
        assert_relative_eq!(o.norm(), COMPRESS_BETA, max_relative = 1e-12);
        assert_relative_eq!(o.arg(), phase, max_relative = 1e-12);
    }

    #[test]
    fn compress_zero_stays_zero() {
        let spec = spec_from_values(vec![Complex64::new(0.0, 0.0)], 1, 1);
        let out = compress(&spec, COMPRESS_ALPHA, COMPRESS_BETA);
        assert_eq!(out.bins[[0, 0, 0]], Complex64::new(0.0, 0.0));
        let back = expand(&out, COMPRESS_ALPHA, COMPRESS_BETA);
        assert_eq!(back.bins[[0, 0, 0]], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn compress_small_magnitude_value() {
        // beta * 0.01^alpha with the defaults
        let c = Complex64::new(0.01, 0.0);
        let spec = spec_from_values(vec![c], 1, 1);
        let out = compress(&spec, COMPRESS_ALPHA, COMPRESS_BETA);
        let expected = COMPRESS_BETA * 0.01f64.powf(COMPRESS_ALPHA);
        assert_relative_eq!(out.bins[[0, 0, 0]].norm(), expected, max_relative = 1e-12);
        assert_relative_eq!(expected, 3.011e-3, max_relative = 1e-3);
    }

    #[test]
    fn expand_beta_point_maps_to_one() {
        let c = Complex64::from_polar(COMPRESS_BETA, -1.3);
        let spec = spec_from_values(vec![c], 1, 1);
        let out = expand(&spec, COMPRESS_ALPHA, COMPRESS_BETA);
        assert_relative_eq!(out.bins[[0, 0, 0]].norm(), 1.0, max_relative = 1e-12);
        assert_relative_eq!(out.bins[[0, 0, 0]].arg(), -1.3, max_relative = 1e-12);
    }

    #[test]
    fn expand_inverts_compress() {
        let vals: Vec<Complex64> = (0..24)
            .map(|i| Complex64::from_polar(0.001 + 0.3 * i as f64, i as f64 * 0.37 - 2.0))
            .collect();
        let spec = spec_from_values(vals, 4, 6);
        let round = expand(
            &compress(&spec, COMPRESS_ALPHA, COMPRESS_BETA),
            COMPRESS_ALPHA,
            COMPRESS_BETA,
        );
        for (a, b) in spec.bins.iter().zip(round.bins.iter()) {
            assert_relative_eq!(a.re, b.re, max_relative = 1e-5, epsilon = 1e-12);
            assert_relative_eq!(a.im, b.im, max_relative = 1e-5, epsilon = 1e-12);
        }
    }

    #[test]
    fn compress_is_monotone_in_magnitude() {
        let mags: [f64; 7] = [1e-6, 1e-4, 0.01, 0.3, 1.0, 5.0, 100.0];
        let compressed: Vec<f64> = mags
            .iter()
            .map(|&m| COMPRESS_BETA * m.powf(COMPRESS_ALPHA))
            .collect();
        for w in compressed.windows(2) {
            assert!(w[0] < w[1]);
        }
    }
}
