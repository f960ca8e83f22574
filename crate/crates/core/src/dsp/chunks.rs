//! Fixed-length chunking with overlap and linear cross-fade reconstruction.

use ndarray::Array2;

use super::StereoWaveform;
use crate::error::{Error, Result};

/// Placement metadata produced by [`chunk`] and consumed by [`overlap_add`].
#[derive(Debug, Clone)]
pub struct ChunkPlan {
    pub chunk_len: usize,
    pub offsets: Vec<usize>,
    pub total_samples: usize,
}

/// Cut a waveform into equal-length chunks with the given overlap fraction.
///
/// The hop is `chunk_len * (1 - overlap)`; the final chunk is zero-padded to
/// full length. A track shorter than one chunk yields a single padded chunk
/// at offset 0.
pub fn chunk(
    wave: &StereoWaveform,
    chunk_seconds: f64,
    overlap_fraction: f64,
) -> (Vec<StereoWaveform>, ChunkPlan) {
    assert!(chunk_seconds > 0.0, "chunk_seconds must be positive");
    assert!(
        (0.0..1.0).contains(&overlap_fraction),
        "overlap_fraction must be in [0, 1)"
    );
    let total = wave.n_samples();
    let chunk_len = ((chunk_seconds * wave.sample_rate as f64).round() as usize).max(1);
    let hop = ((chunk_len as f64 * (1.0 - overlap_fraction)).round() as usize).max(1);

    let mut offsets = vec![0usize];
    while offsets.last().unwrap() + chunk_len < total {
        offsets.push(offsets.last().unwrap() + hop);
    }

    let chunks = offsets
        .iter()
        .map(|&off| {
            let mut samples = Array2::zeros((2, chunk_len));
            let avail = total.saturating_sub(off).min(chunk_len);
            samples
                .slice_mut(ndarray::s![.., ..avail])
                .assign(&wave.samples.slice(ndarray::s![.., off..off + avail]));
            StereoWaveform::new(samples, wave.sample_rate)
        })
        .collect();

    (chunks, ChunkPlan { chunk_len, offsets, total_samples: total })
}

/// Reassemble chunks at their recorded offsets.
///
/// Overlapping regions are cross-faded with linear ramps whose weights sum
/// to one; where more than two chunks overlap the trapezoid weights are
/// renormalized by their sum. Samples of `[0, total)` not covered by any
/// chunk are an error.
pub fn overlap_add(chunks: &[StereoWaveform], plan: &ChunkPlan) -> Result<StereoWaveform> {
    if chunks.len() != plan.offsets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} chunks vs {} offsets",
            chunks.len(),
            plan.offsets.len()
        )));
    }
    let total = plan.total_samples;
    let len = plan.chunk_len;
    let n = chunks.len();
    for (i, c) in chunks.iter().enumerate() {
        if c.n_samples() != len {
            return Err(Error::ShapeMismatch(format!(
                "chunk {i} has {} samples, expected {len}",
                c.n_samples()
            )));
        }
    }

    let sample_rate = chunks.first().map(|c| c.sample_rate).unwrap_or(super::SAMPLE_RATE);
    let mut acc = Array2::<f64>::zeros((2, total));
    let mut wsum = vec![0.0f64; total];

    for i in 0..n {
        let off = plan.offsets[i];
        // Ramp against the previous/next chunk where spans intersect.
        let ramp_in = if i > 0 {
            (plan.offsets[i - 1] + len).saturating_sub(off)
        } else {
            0
        };
        let ramp_out = if i + 1 < n {
            (off + len).saturating_sub(plan.offsets[i + 1])
        } else {
            0
        };
        for j in 0..len {
            let pos = off + j;
            if pos >= total {
                break;
            }
            let mut w = 1.0f64;
            if ramp_in > 0 && j < ramp_in {
                w = w.min(j as f64 / ramp_in as f64);
            }
            if ramp_out > 0 && j >= len - ramp_out {
                w = w.min((len - j) as f64 / ramp_out as f64);
            }
            wsum[pos] += w;
            for ch in 0..2 {
                acc[[ch, pos]] += w * chunks[i].samples[[ch, j]];
            }
        }
    }

    for (pos, &w) in wsum.iter().enumerate() {
        if w <= 0.0 {
            return Err(Error::CoverageGap(pos));
        }
        for ch in 0..2 {
            acc[[ch, pos]] /= w;
        }
    }

    Ok(StereoWaveform::new(acc, sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::SAMPLE_RATE;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    fn noise(n: usize, seed: u64) -> StereoWaveform {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut samples = Array2::zeros((2, n));
        for v in samples.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        StereoWaveform::new(samples, SAMPLE_RATE)
    }

    #[test]
    fn twelve_second_track_offsets() {
        let wave = noise(12 * SAMPLE_RATE as usize, 1);
        let (chunks, plan) = chunk(&wave, 6.0, 0.25);
        assert_eq!(plan.offsets, vec![0, 198_450, 396_900]);
        assert_eq!(chunks.len(), 3);
        // Final chunk is zero-padded past the track end.
        let tail = &chunks[2];
        let pad_start = wave.n_samples() - 396_900;
        assert!(tail
            .samples
            .slice(ndarray::s![.., pad_start..])
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn short_track_single_padded_chunk() {
        let wave = noise(1000, 2);
        let (chunks, plan) = chunk(&wave, 6.0, 0.25);
        assert_eq!(chunks.len(), 1);
        assert_eq!(plan.offsets, vec![0]);
        assert_eq!(chunks[0].n_samples(), 264_600);
    }

    #[test]
    fn zero_overlap_tiles_disjointly() {
        let wave = noise(30_000, 3);
        let (_, plan) = chunk(&wave, 0.25, 0.0);
        let hop = plan.chunk_len;
        for (i, &off) in plan.offsets.iter().enumerate() {
            assert_eq!(off, i * hop);
        }
    }

    #[test]
    fn chunk_then_overlap_add_roundtrip() {
        for n in [30_000, 264_600, 529_200, 600_001] {
            let wave = noise(n, n as u64);
            let (chunks, plan) = chunk(&wave, 1.5, 0.25);
            let back = overlap_add(&chunks, &plan).unwrap();
            assert_eq!(back.n_samples(), n);
            let max_err = wave
                .samples
                .iter()
                .zip(back.samples.iter())
                .fold(0.0f64, |m, (&a, &b)| m.max((a - b).abs()));
            assert!(max_err < 1e-6, "n={n}: max err {max_err}");
        }
    }

    #[test]
    fn single_chunk_trims_to_total() {
        let wave = noise(5000, 9);
        let (chunks, plan) = chunk(&wave, 6.0, 0.25);
        let back = overlap_add(&chunks, &plan).unwrap();
        assert_eq!(back.n_samples(), 5000);
        assert_eq!(back.samples, wave.samples);
    }

    #[test]
    fn equal_constant_chunks_blend_to_constant() {
        let len = 1000;
        let mk = |v: f64| StereoWaveform::new(Array2::from_elem((2, len), v), SAMPLE_RATE);
        let plan = ChunkPlan { chunk_len: len, offsets: vec![0, 600], total_samples: 1600 };
        let out = overlap_add(&[mk(0.4), mk(0.4)], &plan).unwrap();
        for &v in out.samples.iter() {
            assert!((v - 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn coverage_gap_is_detected() {
        let len = 100;
        let mk = || StereoWaveform::zeros(len, SAMPLE_RATE);
        let plan = ChunkPlan { chunk_len: len, offsets: vec![0, 250], total_samples: 350 };
        let err = overlap_add(&[mk(), mk()], &plan).unwrap_err();
        assert!(matches!(err, Error::CoverageGap(_)));
    }
}
