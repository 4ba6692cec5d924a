//! Clip proposals: uniform partitioning and shot-based enumeration over
//! shots found by thresholding mean absolute descriptor differences.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{Frames, VideoRecord};
use crate::error::{Error, Result};
use crate::numeric::median;

/// Inclusive, 1-indexed frame interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClipProposal {
    pub begin: usize,
    pub end: usize,
}

impl ClipProposal {
    pub fn new(begin: usize, end: usize) -> Self {
        debug_assert!(1 <= begin && begin <= end);
        ClipProposal { begin, end }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.begin
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// A maximal run of frames without a detected shot change.
pub type Shot = ClipProposal;

/// Where a proposal came from, for the proposal dump.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalSource {
    Uniform,
    /// 1-based index of the shot the proposal was cut from.
    Shot(usize),
    Whole,
}

impl fmt::Display for ProposalSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProposalSource::Uniform => f.write_str("uniform"),
            ProposalSource::Shot(i) => write!(f, "shot:{i}"),
            ProposalSource::Whole => f.write_str("whole"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMethod {
    Uniform,
    #[default]
    ShotBased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub method: SamplingMethod,
    /// Proposals per video for uniform sampling (clamped to `T`).
    pub proposals: usize,
    /// Shot-change threshold on the mean absolute frame difference. When
    /// absent it is calibrated from the training corpus.
    pub shot_threshold: Option<f64>,
    /// Multiplier applied to the corpus median difference during calibration.
    pub threshold_factor: f64,
    /// Fixed clip length `K` for shot-based sampling.
    pub clip_length: usize,
    /// Treat every video as trimmed: one whole-video proposal each.
    pub trimmed: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            method: SamplingMethod::ShotBased,
            proposals: 20,
            shot_threshold: None,
            threshold_factor: 6.0,
            clip_length: 300,
            trimmed: false,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.proposals < 1 {
            return Err(Error::config("sampling.proposals", "must be at least 1"));
        }
        if let Some(tau) = self.shot_threshold {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::config("sampling.shot_threshold", "must be positive"));
            }
        }
        if !(self.threshold_factor > 0.0 && self.threshold_factor.is_finite()) {
            return Err(Error::config("sampling.threshold_factor", "must be positive"));
        }
        if self.clip_length < 1 {
            return Err(Error::config("sampling.clip_length", "must be at least 1"));
        }
        Ok(())
    }
}

/// `N` equal-duration clips: `b_i = ⌊(i−1)T/N⌋ + 1`, `e_i = ⌊iT/N⌋`.
pub fn sample_uniform(num_frames: usize, n: usize) -> Result<Vec<ClipProposal>> {
    if n == 0 || n > num_frames {
        return Err(Error::invalid(format!(
            "uniform sampling needs 1 <= N <= T (N = {n}, T = {num_frames})"
        )));
    }
    Ok((1..=n)
        .map(|i| ClipProposal::new((i - 1) * num_frames / n + 1, i * num_frames / n))
        .collect())
}

/// Mean absolute difference between consecutive frames, `d_t` for `t = 1..T−1`.
pub fn frame_differences(frames: &Frames) -> Vec<f64> {
    let dim = frames.dim() as f64;
    let mut rows = frames.rows();
    let Some(mut prev) = rows.next() else {
        return Vec::new();
    };
    rows.map(|cur| {
        let d = cur.iter().zip(prev).map(|(a, b)| (a - b).abs()).sum::<f64>() / dim;
        prev = cur;
        d
    })
    .collect()
}

/// Splits `[1, T]` into shots at every `t` with `d_t > τ`.
pub fn detect_shots(frames: &Frames, tau: f64) -> Result<Vec<Shot>> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("shot threshold must be positive, got {tau}")));
    }
    Ok(shots_from_differences(&frame_differences(frames), tau))
}

pub(crate) fn shots_from_differences(diffs: &[f64], tau: f64) -> Vec<Shot> {
    let t = diffs.len() + 1;
    let mut shots = Vec::new();
    let mut begin = 1;
    for (i, &d) in diffs.iter().enumerate() {
        if d > tau {
            // boundary between frame i+1 and i+2
            shots.push(Shot::new(begin, i + 1));
            begin = i + 2;
        }
    }
    shots.push(Shot::new(begin, t));
    shots
}

/// Consecutive disjoint `K`-frame clips inside each shot; a shot too short for
/// one full clip contributes itself whole. Trailing frames are dropped.
pub fn clips_in_shots(shots: &[Shot], clip_length: usize) -> Vec<(ClipProposal, ProposalSource)> {
    let k = clip_length;
    let mut out = Vec::new();
    for (idx, shot) in shots.iter().enumerate() {
        let source = ProposalSource::Shot(idx + 1);
        let before = out.len();
        let mut j = 1;
        while shot.begin + j * k - 1 <= shot.end {
            out.push((
                ClipProposal::new(shot.begin + (j - 1) * k, shot.begin + j * k - 1),
                source,
            ));
            j += 1;
        }
        if out.len() == before {
            out.push((*shot, source));
        }
    }
    out
}

pub fn sample_shot_based(frames: &Frames, tau: f64, clip_length: usize) -> Result<Vec<ClipProposal>> {
    if clip_length == 0 {
        return Err(Error::invalid("clip length must be at least 1"));
    }
    let shots = detect_shots(frames, tau)?;
    Ok(clips_in_shots(&shots, clip_length).into_iter().map(|(c, _)| c).collect())
}

/// `threshold_factor ×` the median frame difference pooled over a corpus.
/// Falls back to a tiny positive threshold when the corpus has no differences
/// or they are all zero.
pub fn calibrate_threshold<'a>(videos: impl IntoIterator<Item = &'a Frames>, factor: f64) -> f64 {
    let mut all: Vec<f64> = videos.into_iter().flat_map(frame_differences).collect();
    match median(&mut all) {
        Some(m) if m > 0.0 => factor * m,
        _ => f64::MIN_POSITIVE,
    }
}

/// Proposal generation with a resolved shot threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSampler {
    pub method: SamplingMethod,
    pub proposals: usize,
    pub shot_threshold: f64,
    pub clip_length: usize,
    pub trimmed: bool,
}

impl ProposalSampler {
    /// Resolves the configured threshold, calibrating on `reference` when unset.
    pub fn resolve<'a>(config: &SamplingConfig, reference: impl IntoIterator<Item = &'a Frames>) -> Result<Self> {
        config.validate()?;
        let shot_threshold = match config.shot_threshold {
            Some(t) => t,
            None => calibrate_threshold(reference, config.threshold_factor),
        };
        Ok(ProposalSampler {
            method: config.method,
            proposals: config.proposals,
            shot_threshold,
            clip_length: config.clip_length,
            trimmed: config.trimmed,
        })
    }

    pub fn propose(&self, frames: &Frames) -> Vec<(ClipProposal, ProposalSource)> {
        let t = frames.len();
        if self.trimmed {
            return vec![(ClipProposal::new(1, t), ProposalSource::Whole)];
        }
        match self.method {
            SamplingMethod::Uniform => sample_uniform(t, self.proposals.min(t))
                .expect("1 <= N <= T by construction")
                .into_iter()
                .map(|c| (c, ProposalSource::Uniform))
                .collect(),
            SamplingMethod::ShotBased => {
                let shots = shots_from_differences(&frame_differences(frames), self.shot_threshold);
                clips_in_shots(&shots, self.clip_length)
            }
        }
    }

    pub fn propose_video(&self, video: &VideoRecord) -> Vec<(ClipProposal, ProposalSource)> {
        self.propose(&video.frames)
    }
}
