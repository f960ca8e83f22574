//! WAV ingestion and export at the pipeline sample rate.
//!
//! Supported encodings: PCM 16/24-bit and IEEE float32. Mono files are
//! duplicated to stereo on read (lossless); other channel counts and sample
//! rates are rejected.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use ndarray::Array2;

use crate::dsp::{check_sample_rate, StereoWaveform};
use crate::error::{Error, Result};

/// Output encoding for [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavFormat {
    Pcm16,
    Pcm24,
    #[default]
    Float32,
}

/// Read a WAV file into a stereo waveform.
pub fn read_wav(path: impl AsRef<Path>) -> Result<StereoWaveform> {
    let mut reader = WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    check_sample_rate(spec.sample_rate)?;
    if spec.channels == 0 || spec.channels > 2 {
        return Err(Error::InvalidParameter(format!(
            "{} channels in {}; only mono and stereo are supported",
            spec.channels,
            path.as_ref().display()
        )));
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Int, 24) => reader
            .samples::<i32>()
            .map(|s| s.map(|v| v as f64 / 8_388_608.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::InvalidParameter(format!(
                "unsupported WAV encoding {fmt:?}/{bits} bit in {}",
                path.as_ref().display()
            )))
        }
    };

    let ch = spec.channels as usize;
    let n = interleaved.len() / ch;
    let mut samples = Array2::zeros((2, n));
    for i in 0..n {
        let l = interleaved[i * ch];
        let r = if ch == 2 { interleaved[i * ch + 1] } else { l };
        samples[[0, i]] = l;
        samples[[1, i]] = r;
    }
    Ok(StereoWaveform::new(samples, spec.sample_rate))
}

/// Write a stereo waveform to a WAV file.
pub fn write_wav(path: impl AsRef<Path>, wave: &StereoWaveform, format: WavFormat) -> Result<()> {
    let (bits, fmt) = match format {
        WavFormat::Pcm16 => (16, SampleFormat::Int),
        WavFormat::Pcm24 => (24, SampleFormat::Int),
        WavFormat::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec {
        channels: 2,
        sample_rate: wave.sample_rate,
        bits_per_sample: bits,
        sample_format: fmt,
    };
    let mut writer = WavWriter::create(path.as_ref(), spec)?;
    for i in 0..wave.n_samples() {
        for ch in 0..2 {
            let v = wave.samples[[ch, i]];
            match format {
                WavFormat::Pcm16 => {
                    writer.write_sample((v.clamp(-1.0, 1.0) * 32767.0).round() as i16)?
                }
                WavFormat::Pcm24 => {
                    writer.write_sample((v.clamp(-1.0, 1.0) * 8_388_607.0).round() as i32)?
                }
                WavFormat::Float32 => writer.write_sample(v as f32)?,
            }
        }
    }
    writer.finalize()?;
    Ok(())
}
