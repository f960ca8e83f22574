//! Real/imag channel stacking and frequency band splitting.

use ndarray::Array3;
use num_complex::Complex64;

use super::{BandSplitTensor, ChannelLayout, ChannelStack, ComplexSpectrogram};
use crate::error::{Error, Result};

/// Split the real and imaginary parts of a stereo spectrogram into separate
/// channels: `[L-re, L-im, R-re, R-im]`, shape `[4, F, T]`.
///
/// This is where values drop to model precision (f32).
pub fn stack_channels(spec: &ComplexSpectrogram) -> ChannelStack {
    let (f, t) = (spec.n_bins(), spec.n_frames());
    let mut values = Array3::zeros((4, f, t));
    for ch in 0..2 {
        for k in 0..f {
            for m in 0..t {
                let c = spec.bins[[ch, k, m]];
                values[[2 * ch, k, m]] = c.re as f32;
                values[[2 * ch + 1, k, m]] = c.im as f32;
            }
        }
    }
    ChannelStack {
        values,
        layout: ChannelLayout { base_channels: 4, n_bands: 1 },
        window_size: spec.window_size,
        hop: spec.hop,
    }
}

/// Inverse of [`stack_channels`].
pub fn unstack_channels(stack: &ChannelStack) -> Result<ComplexSpectrogram> {
    let s = stack.values.shape();
    if s[0] != 4 || stack.layout.n_bands != 1 {
        return Err(Error::MetadataMismatch(format!(
            "expected an unsplit 4-channel stack, got {} channels ({})",
            s[0], stack.layout
        )));
    }
    let (f, t) = (s[1], s[2]);
    let mut bins = Array3::zeros((2, f, t));
    for ch in 0..2 {
        for k in 0..f {
            for m in 0..t {
                bins[[ch, k, m]] = Complex64::new(
                    stack.values[[2 * ch, k, m]] as f64,
                    stack.values[[2 * ch + 1, k, m]] as f64,
                );
            }
        }
    }
    Ok(ComplexSpectrogram { bins, window_size: stack.window_size, hop: stack.hop })
}

/// Partition the frequency axis into `n_splits` contiguous equal bands and
/// stack each band as a new channel group (band-major order).
///
/// When the bin count is not divisible by `n_splits` the top (Nyquist) bin
/// is dropped first; with the 1025-bin default and 4 splits this retains
/// bins `0..1024`. Output shape `[C * n_splits, f_trunc / n_splits, T]`.
pub fn band_split(stack: &ChannelStack, n_splits: usize) -> Result<BandSplitTensor> {
    if n_splits == 0 {
        return Err(Error::InvalidParameter("n_splits must be >= 1".into()));
    }
    let s = stack.values.shape();
    let (c, f, t) = (s[0], s[1], s[2]);
    let f_trunc = if f % n_splits == 0 { f } else { f - 1 };
    if f_trunc % n_splits != 0 {
        return Err(Error::InvalidParameter(format!(
            "{n_splits} splits do not divide {f_trunc} retained bins"
        )));
    }
    let f_band = f_trunc / n_splits;
    let mut values = Array3::zeros((c * n_splits, f_band, t));
    for band in 0..n_splits {
        for cc in 0..c {
            for k in 0..f_band {
                for m in 0..t {
                    values[[band * c + cc, k, m]] = stack.values[[cc, band * f_band + k, m]];
                }
            }
        }
    }
    Ok(BandSplitTensor {
        values,
        n_splits,
        f_trunc,
        f_orig: f,
        layout: ChannelLayout {
            base_channels: stack.layout.base_channels,
            n_bands: stack.layout.n_bands * n_splits,
        },
        window_size: stack.window_size,
        hop: stack.hop,
    })
}

/// Exact inverse of [`band_split`]; dropped bins come back as zeros.
pub fn band_merge(split: &BandSplitTensor) -> Result<ChannelStack> {
    let s = split.values.shape();
    let (c_total, f_band, t) = (s[0], s[1], s[2]);
    if split.n_splits == 0 || c_total % split.n_splits != 0 {
        return Err(Error::MetadataMismatch(format!(
            "{c_total} channels not divisible by {} splits",
            split.n_splits
        )));
    }
    if f_band * split.n_splits != split.f_trunc || split.f_trunc > split.f_orig {
        return Err(Error::MetadataMismatch(format!(
            "band shape [{c_total}, {f_band}, {t}] inconsistent with f_trunc {} / f_orig {}",
            split.f_trunc, split.f_orig
        )));
    }
    let c = c_total / split.n_splits;
    let mut values = Array3::zeros((c, split.f_orig, t));
    for band in 0..split.n_splits {
        for cc in 0..c {
            for k in 0..f_band {
                for m in 0..t {
                    values[[cc, band * f_band + k, m]] = split.values[[band * c + cc, k, m]];
                }
            }
        }
    }
    Ok(ChannelStack {
        values,
        layout: ChannelLayout {
            base_channels: split.layout.base_channels,
            n_bands: split.layout.n_bands / split.n_splits,
        },
        window_size: split.window_size,
        hop: split.hop,
    })
}
