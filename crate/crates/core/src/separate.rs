//! End-to-end inference: mixture waveform in, separated vocals out.
//!
//! The track is peak-normalized once (whole-track scope, so overlapping
//! chunks agree on level), cut into overlapping chunks, and each chunk runs
//! through stft -> compress -> channel stack -> band split to form the
//! sampler condition. The sampler output runs the inverse chain and the
//! chunk estimates are overlap-added and rescaled by the recorded gain.

use ndarray::Array3;
use rayon::prelude::*;

use crate::diffusion::{
    euler_sampler, heun_sampler, karras_schedule, Denoiser, PrecondDenoiser, SIGMA_DATA,
    SIGMA_MAX, SIGMA_MIN,
};
use crate::dsp::{
    band_merge, band_split, chunk, compress, expand, istft, overlap_add, peak_normalize,
    stack_channels, stft, unstack_channels, BandSplitTensor, StereoWaveform, COMPRESS_ALPHA,
    COMPRESS_BETA, N_SPLITS,
};
use crate::error::{Error, Result};
use crate::model::{Model, ModelNetwork};
use crate::nn::ParamStore;
use crate::rng::{sub_rng, Stream};

/// Inference-time knobs.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SeparationParams {
    pub steps: usize,
    pub rho: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub sigma_data: f64,
    pub sampler: SamplerKind,
    pub seed: u64,
    pub chunk_seconds: f64,
    pub overlap: f64,
    pub emit_accompaniment: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Euler,
    Heun,
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SamplerKind::Euler => write!(f, "euler"),
            SamplerKind::Heun => write!(f, "heun"),
        }
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(SamplerKind::Euler),
            "heun" => Ok(SamplerKind::Heun),
            other => Err(Error::InvalidParameter(format!(
                "unknown sampler '{other}' (expected euler or heun)"
            ))),
        }
    }
}

impl Default for SeparationParams {
    fn default() -> Self {
        Self {
            steps: 7,
            rho: 2.0,
            sigma_min: SIGMA_MIN,
            sigma_max: SIGMA_MAX,
            sigma_data: SIGMA_DATA,
            sampler: SamplerKind::Euler,
            seed: 0,
            chunk_seconds: 6.0,
            overlap: 0.25,
            emit_accompaniment: false,
        }
    }
}

/// Separation output; the accompaniment is present when requested and sums
/// with the vocals to the input bit-exactly at f32.
#[derive(Debug, Clone)]
pub struct Separated {
    pub vocals: StereoWaveform,
    pub accompaniment: Option<StereoWaveform>,
}

/// Supplies the denoiser for each chunk. The production implementation
/// wraps the network; tests substitute oracles that bypass it.
pub trait DenoiserProvider: Sync {
    fn denoiser(&self, chunk_index: usize, cond: &BandSplitTensor) -> Result<Box<dyn Denoiser + '_>>;
}

/// Test seam: a denoiser that returns a fixed ground truth regardless of
/// input, bypassing the network entirely.
pub struct OracleDenoiser {
    pub truth: Array3<f32>,
}

impl Denoiser for OracleDenoiser {
    fn denoise(&self, _x: &Array3<f32>, _cond: &Array3<f32>, _sigma: f64) -> Result<Array3<f32>> {
        Ok(self.truth.clone())
    }
}

/// Build the oracle seam for a single ground-truth tensor.
pub fn oracle_denoiser_seam(ground_truth: BandSplitTensor) -> OracleDenoiser {
    OracleDenoiser { truth: ground_truth.values }
}

/// Model-backed provider.
pub struct ModelProvider<'a> {
    pub model: &'a Model,
    pub params: &'a ParamStore<f32>,
    pub sigma_data: f64,
}

impl DenoiserProvider for ModelProvider<'_> {
    fn denoiser(&self, _chunk: usize, _cond: &BandSplitTensor) -> Result<Box<dyn Denoiser + '_>> {
        Ok(Box::new(PrecondDenoiser {
            net: ModelNetwork { model: self.model, params: self.params },
            sigma_data: self.sigma_data,
        }))
    }
}

/// Oracle provider that knows the true vocals waveform and reproduces the
/// exact per-chunk pipeline tensors the model would have to predict.
pub struct TrackOracleProvider {
    truths: Vec<Array3<f32>>,
}

impl TrackOracleProvider {
    pub fn new(
        params: &SeparationParams,
        mixture: &StereoWaveform,
        vocals: &StereoWaveform,
    ) -> Result<Self> {
        let gain = peak_normalize(mixture).peak_gain;
        let mut scaled = vocals.clone();
        scaled.samples.mapv_inplace(|v| v / gain);
        let (chunks, _) = chunk(&scaled, params.chunk_seconds, params.overlap);
        let truths = chunks
            .iter()
            .map(|c| Ok(forward_chunk(c)?.values))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { truths })
    }
}

impl DenoiserProvider for TrackOracleProvider {
    fn denoiser(&self, chunk: usize, _cond: &BandSplitTensor) -> Result<Box<dyn Denoiser + '_>> {
        let truth = self.truths.get(chunk).ok_or_else(|| {
            Error::ShapeMismatch(format!("oracle has no chunk {chunk}"))
        })?;
        Ok(Box::new(OracleDenoiser { truth: truth.clone() }))
    }
}

/// Waveform chunk -> diffusion state space.
fn forward_chunk(wave: &StereoWaveform) -> Result<BandSplitTensor> {
    let spec = stft(wave)?;
    let comp = compress(&spec, COMPRESS_ALPHA, COMPRESS_BETA);
    band_split(&stack_channels(&comp), N_SPLITS)
}

/// Diffusion state space -> waveform chunk.
fn inverse_chunk(split: &BandSplitTensor, n_samples: usize) -> Result<StereoWaveform> {
    let merged = band_merge(split)?;
    let spec = unstack_channels(&merged)?;
    let expanded = expand(&spec, COMPRESS_ALPHA, COMPRESS_BETA);
    istft(&expanded, n_samples)
}

/// Separate a mixture into vocals (and optional accompaniment).
pub fn separate_track(
    params: &SeparationParams,
    provider: &dyn DenoiserProvider,
    mixture: &StereoWaveform,
) -> Result<Separated> {
    crate::dsp::check_sample_rate(mixture.sample_rate)?;
    let schedule = karras_schedule(params.steps, params.sigma_min, params.sigma_max, params.rho)?;

    let normalized = peak_normalize(mixture);
    let gain = normalized.peak_gain;
    let (chunks, plan) = chunk(&normalized, params.chunk_seconds, params.overlap);

    let estimates: Vec<StereoWaveform> = chunks
        .par_iter()
        .enumerate()
        .map(|(i, ch)| -> Result<StereoWaveform> {
            let cond = forward_chunk(ch)?;
            let den = provider.denoiser(i, &cond)?;
            let mut rng = sub_rng(params.seed, Stream::Sampler, i as u64);
            let out = match params.sampler {
                SamplerKind::Euler => euler_sampler(den.as_ref(), &cond.values, &schedule, &mut rng)?,
                SamplerKind::Heun => heun_sampler(den.as_ref(), &cond.values, &schedule, &mut rng)?,
            };
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("sampler output"));
            }
            let split = BandSplitTensor { values: out, ..cond.clone() };
            inverse_chunk(&split, plan.chunk_len)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut vocals = overlap_add(&estimates, &plan)?;
    vocals.samples.mapv_inplace(|v| v * gain);
    vocals.sample_rate = mixture.sample_rate;

    let accompaniment = if params.emit_accompaniment {
        let mut acc = StereoWaveform::zeros(mixture.n_samples(), mixture.sample_rate);
        // Quantize both outputs to f32 such that vocals + accompaniment
        // reproduces the f32 mixture bit-exactly.
        for ch in 0..2 {
            for i in 0..mixture.n_samples() {
                let m = mixture.samples[[ch, i]] as f32;
                let v = vocals.samples[[ch, i]] as f32;
                let (vq, aq) = split_exact(m, v);
                vocals.samples[[ch, i]] = vq as f64;
                acc.samples[[ch, i]] = aq as f64;
            }
        }
        Some(acc)
    } else {
        None
    };

    Ok(Separated { vocals, accompaniment })
}

/// Convenience wrapper for the model-backed provider.
pub fn separate_with_model(
    params: &SeparationParams,
    model: &Model,
    weights: &ParamStore<f32>,
    mixture: &StereoWaveform,
) -> Result<Separated> {
    let provider = ModelProvider { model, params: weights, sigma_data: params.sigma_data };
    separate_track(params, &provider, mixture)
}

/// Pick `(v, a)` near `(v_pref, m - v_pref)` such that the f32 addition
/// `v + a` reproduces `m` exactly. Rounding alone can be one ulp off, so a
/// small nudge search runs first; the fallback `(m, 0)` always satisfies
/// the identity.
fn split_exact(m: f32, v_pref: f32) -> (f32, f32) {
    let a = m - v_pref;
    if v_pref + a == m {
        return (v_pref, a);
    }
    let mut candidate = a;
    for _ in 0..4 {
        candidate = if v_pref + candidate < m {
            candidate.next_up()
        } else {
            candidate.next_down()
        };
        if v_pref + candidate == m {
            return (v_pref, candidate);
        }
    }
    let v2 = m - a;
    let a2 = m - v2;
    if v2 + a2 == m {
        return (v2, a2);
    }
    (m, 0.0)
}
