//! Chunked SDR evaluation and dataset-level aggregation.
//!
//! The SDR here is the plain energy ratio
//! `10*log10(sum(ref^2) / sum((ref - est)^2))` summed over both channels,
//! clamped to [-80, +80] dB; cSDR scores 1-second chunks, takes the median
//! per track and the median across tracks.

use crate::data::{Stem, Track};
use crate::dsp::{StereoWaveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::ParamStore;
use crate::separate::{separate_track, ModelProvider, SeparationParams, TrackOracleProvider};

/// Reporting clamp in dB.
pub const SDR_CLAMP_DB: f64 = 80.0;

/// Per-track chunk scores and their median.
#[derive(Debug, Clone)]
pub struct TrackScore {
    pub track_id: String,
    pub chunk_sdrs: Vec<f64>,
    pub csdr_db: f64,
    pub chunks_scored: usize,
}

/// Median with the even-count convention (mean of the two central values).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

fn sdr_slices(reference: &[f64], estimate: &[f64]) -> Option<f64> {
    let signal: f64 = reference.iter().map(|v| v * v).sum();
    if signal == 0.0 {
        return None;
    }
    let error: f64 = reference
        .iter()
        .zip(estimate.iter())
        .map(|(r, e)| (r - e) * (r - e))
        .sum();
    let db = if error == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (signal / error).log10()
    };
    Some(db.clamp(-SDR_CLAMP_DB, SDR_CLAMP_DB))
}

/// Signal-to-distortion ratio in dB over both channels.
///
/// Errors on length mismatch and on an all-zero reference (callers scoring
/// chunks exclude silent references instead).
pub fn sdr(reference: &StereoWaveform, estimate: &StereoWaveform) -> Result<f64> {
    if reference.n_samples() != estimate.n_samples() {
        return Err(Error::ShapeMismatch(format!(
            "reference {} vs estimate {} samples",
            reference.n_samples(),
            estimate.n_samples()
        )));
    }
    let r: Vec<f64> = reference.samples.iter().copied().collect();
    let e: Vec<f64> = estimate.samples.iter().copied().collect();
    sdr_slices(&r, &e).ok_or_else(|| Error::InvalidParameter("all-zero reference".into()))
}

/// Chunked SDR for one track: non-overlapping 1-second chunks (final
/// partial chunk dropped), silent-reference chunks excluded, median over
/// the rest.
pub fn csdr_track(
    track_id: impl Into<String>,
    reference: &StereoWaveform,
    estimate: &StereoWaveform,
) -> Result<TrackScore> {
    if reference.n_samples() != estimate.n_samples() {
        return Err(Error::ShapeMismatch(format!(
            "reference {} vs estimate {} samples",
            reference.n_samples(),
            estimate.n_samples()
        )));
    }
    let chunk = SAMPLE_RATE as usize;
    let n_chunks = reference.n_samples() / chunk;
    let mut chunk_sdrs = Vec::new();
    for i in 0..n_chunks {
        let lo = i * chunk;
        let hi = lo + chunk;
        let r: Vec<f64> = reference
            .samples
            .slice(ndarray::s![.., lo..hi])
            .iter()
            .copied()
            .collect();
        let e: Vec<f64> = estimate
            .samples
            .slice(ndarray::s![.., lo..hi])
            .iter()
            .copied()
            .collect();
        if let Some(db) = sdr_slices(&r, &e) {
            chunk_sdrs.push(db);
        }
    }
    let csdr_db = median(&chunk_sdrs)
        .ok_or_else(|| Error::InvalidParameter("no scorable chunks (reference silent)".into()))?;
    Ok(TrackScore {
        track_id: track_id.into(),
        chunks_scored: chunk_sdrs.len(),
        chunk_sdrs,
        csdr_db,
    })
}

/// Median of track cSDRs.
pub fn csdr_dataset(scores: &[TrackScore]) -> Result<f64> {
    let values: Vec<f64> = scores.iter().map(|s| s.csdr_db).collect();
    median(&values).ok_or_else(|| Error::InvalidParameter("no tracks to aggregate".into()))
}

/// cSDR of using the mixture itself as the vocals estimate; the baseline a
/// trained separator must beat.
pub fn mixture_baseline(track: &Track) -> Result<TrackScore> {
    csdr_track(format!("{}(baseline)", track.id), track.stem(Stem::Vocals), &track.mixture)
}

/// What drives the denoiser during an evaluation run.
pub enum EvalEngine<'a> {
    /// The trained network.
    Model { model: &'a Model, weights: &'a ParamStore<f32> },
    /// Per-track oracle denoisers built from the true vocals; measures the
    /// distortion of everything around the model.
    Oracle,
}

/// One evaluation run over a dataset.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<TrackScore>,
    pub dataset_csdr_db: f64,
    pub steps: usize,
    pub rho: f64,
    pub sampler: String,
    pub seed: u64,
}

impl EvalReport {
    /// Machine-readable table: `track,csdr_db,chunks_scored`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("track,csdr_db,chunks_scored\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{}\n",
                row.track_id, row.csdr_db, row.chunks_scored
            ));
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!(
            "eval: steps={} rho={} sampler={} seed={}\n",
            self.steps, self.rho, self.sampler, self.seed
        );
        for row in &self.rows {
            out.push_str(&format!(
                "  {:<24} cSDR {:>8.3} dB  ({} chunks)\n",
                row.track_id, row.csdr_db, row.chunks_scored
            ));
        }
        out.push_str(&format!("dataset cSDR: {:.3} dB\n", self.dataset_csdr_db));
        out
    }
}

/// Separate every track and aggregate cSDR. Rows are ordered by track id.
pub fn eval_run(
    engine: &EvalEngine<'_>,
    tracks: &[Track],
    params: &SeparationParams,
) -> Result<EvalReport> {
    if tracks.is_empty() {
        return Err(Error::Dataset("no tracks to evaluate".into()));
    }
    let mut rows = Vec::with_capacity(tracks.len());
    for track in tracks {
        let separated = match engine {
            EvalEngine::Model { model, weights } => {
                let provider = ModelProvider {
                    model,
                    params: weights,
                    sigma_data: params.sigma_data,
                };
                separate_track(params, &provider, &track.mixture)?
            }
            EvalEngine::Oracle => {
                let provider =
                    TrackOracleProvider::new(params, &track.mixture, track.stem(Stem::Vocals))?;
                separate_track(params, &provider, &track.mixture)?
            }
        };
        rows.push(csdr_track(&track.id, track.stem(Stem::Vocals), &separated.vocals)?);
    }
    rows.sort_by(|a, b| a.track_id.cmp(&b.track_id));
    let dataset_csdr_db = csdr_dataset(&rows)?;
    Ok(EvalReport {
        rows,
        dataset_csdr_db,
        steps: params.steps,
        rho: params.rho,
        sampler: params.sampler.to_string(),
        seed: params.seed,
    })
}
