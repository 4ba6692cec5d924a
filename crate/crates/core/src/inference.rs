//! Test-time use of a trained model: snippet tracks, recognition by pooling,
//! attention-gated detection, and the mAP evaluation protocols.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{Frames, GroundTruthInstance};
use crate::error::{Error, Result};
use crate::model::{classify_clip, feature, select_soft, ClipInput, ModelParams};
use crate::numeric::{axpy, cmp_desc};
use crate::par;
use crate::proposals::ClipProposal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    TopK,
    WeightedSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub recognition_stride: usize,
    pub aggregation: Aggregation,
    pub top_k: usize,
    pub detection_stride: usize,
    pub attention_threshold: f64,
    pub score_threshold: f64,
    pub iou_thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            recognition_stride: 30,
            aggregation: Aggregation::TopK,
            top_k: 20,
            detection_stride: 15,
            attention_threshold: 1e-4,
            score_threshold: 0.5,
            iou_thresholds: vec![0.1, 0.2, 0.3, 0.4, 0.5],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.recognition_stride < 1 {
            return Err(Error::config("eval.recognition_stride", "must be at least 1"));
        }
        if self.detection_stride < 1 {
            return Err(Error::config("eval.detection_stride", "must be at least 1"));
        }
        if self.top_k < 1 {
            return Err(Error::config("eval.top_k", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.attention_threshold) {
            return Err(Error::config("eval.attention_threshold", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(Error::config("eval.score_threshold", "must lie in [0, 1]"));
        }
        if self.iou_thresholds.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::config("eval.iou_thresholds", "every threshold must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Single-frame snippet scores on a fixed stride grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SnippetTrack {
    pub num_frames: usize,
    pub stride: usize,
    /// 1-indexed, strictly increasing.
    pub positions: Vec<usize>,
    /// Class softmax per position.
    pub class_probs: Vec<Vec<f64>>,
    /// Attention softmax across all positions of the video.
    pub attention: Vec<f64>,
}

/// Positions `stride, 2·stride, … ≤ T`, or just frame 1 when `T < stride`.
pub fn snippet_positions(num_frames: usize, stride: usize) -> Vec<usize> {
    if num_frames < stride {
        vec![1]
    } else {
        (1..=num_frames / stride).map(|i| i * stride).collect()
    }
}

pub fn snippet_track(frames: &Frames, params: &ModelParams, stride: usize) -> Result<SnippetTrack> {
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    if frames.dim() != params.descriptor_dim {
        return Err(Error::Dimension {
            what: "descriptor".into(),
            expected: params.descriptor_dim,
            found: frames.dim(),
        });
    }
    let positions = snippet_positions(frames.len(), stride);
    let features = positions
        .iter()
        .map(|&p| {
            let input = ClipInput::from_clip(frames, ClipProposal::new(p, p), params.extractor.segments)?;
            Ok(feature(params, &input))
        })
        .collect::<Result<Vec<_>>>()?;
    let class_probs = features
        .iter()
        .map(|phi| classify_clip(phi, params).map(|(_, soft)| soft))
        .collect::<Result<Vec<_>>>()?;
    let (_, attention) = select_soft(&features, params)?;
    Ok(SnippetTrack {
        num_frames: frames.len(),
        stride,
        positions,
        class_probs,
        attention,
    })
}

/// Tracks for many videos, evaluated concurrently; output follows input order.
pub fn snippet_tracks(videos: &[&Frames], params: &ModelParams, stride: usize) -> Result<Vec<SnippetTrack>> {
    par::try_map(videos, |f| snippet_track(f, params, stride))
}

/// Video-level class scores from a track.
pub fn recognize(track: &SnippetTrack, aggregation: Aggregation, k: usize) -> Vec<f64> {
    let c = track.class_probs.first().map_or(0, Vec::len);
    match aggregation {
        Aggregation::WeightedSum => {
            let mut out = vec![0.0; c];
            for (p, &a) in track.class_probs.iter().zip(&track.attention) {
                axpy(&mut out, a, p);
            }
            out
        }
        Aggregation::TopK => {
            let k = k.clamp(1, track.class_probs.len());
            (0..c)
                .map(|i| {
                    let mut col: Vec<f64> = track.class_probs.iter().map(|p| p[i]).collect();
                    col.sort_by(|a, b| b.total_cmp(a));
                    col[..k].iter().sum::<f64>() / k as f64
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionSegment {
    /// 1-based class index.
    pub class_id: usize,
    pub begin: usize,
    pub end: usize,
    pub score: f64,
}

/// Attention-gated, score-thresholded runs of snippets, each widened by
/// `stride/2` on both sides. Output is sorted by score, highest first (stable).
pub fn detect(track: &SnippetTrack, attention_threshold: f64, score_threshold: f64) -> Vec<DetectionSegment> {
    let c = track.class_probs.first().map_or(0, Vec::len);
    let half = track.stride / 2;
    let foreground: Vec<bool> = track.attention.iter().map(|&a| a >= attention_threshold).collect();
    let mut out = Vec::new();
    for class in 0..c {
        let mut run: Option<(usize, usize, f64)> = None; // (first idx, last idx, score sum)
        let close = |run: (usize, usize, f64), out: &mut Vec<DetectionSegment>| {
            let (first, last, sum) = run;
            out.push(DetectionSegment {
                class_id: class + 1,
                begin: track.positions[first].saturating_sub(half).max(1),
                end: (track.positions[last] + half).min(track.num_frames),
                score: sum / (last + 1 - first) as f64,
            });
        };
        for (i, probs) in track.class_probs.iter().enumerate() {
            let keep = foreground[i] && probs[class] >= score_threshold;
            run = match (run, keep) {
                (Some((f, _, s)), true) => Some((f, i, s + probs[class])),
                (None, true) => Some((i, i, probs[class])),
                (Some(r), false) => {
                    close(r, &mut out);
                    None
                }
                (None, false) => None,
            };
        }
        if let Some(r) = run {
            close(r, &mut out);
        }
    }
    out.sort_by(|a, b| cmp_desc(a.score, b.score));
    out
}

/// Inclusive-frame intersection over union of `(begin, end)` intervals.
pub fn temporal_iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let inter = (a.1.min(b.1) + 1).saturating_sub(a.0.max(b.0));
    let union = (a.1 + 1 - a.0) + (b.1 + 1 - b.0) - inter;
    inter as f64 / union as f64
}

/// All-point average precision. Items are ranked by score (stable, so ties
/// keep input order); the result is `Σ precision@r` over positive ranks
/// divided by `num_positives`, and 0 when there are no positives.
pub fn average_precision(ranked: &[(f64, bool)], num_positives: usize) -> f64 {
    if num_positives == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..ranked.len()).collect();
    order.sort_by(|&a, &b| cmp_desc(ranked[a].0, ranked[b].0));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if ranked[i].1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    sum / num_positives as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAp {
    /// 1-based class index.
    pub class_id: usize,
    pub ap: f64,
    pub positives: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    pub per_class: Vec<ClassAp>,
    /// Mean over classes with at least one positive; 0 when there are none.
    pub map: f64,
}

impl MapReport {
    fn from_classes(per_class: Vec<ClassAp>) -> Self {
        let map = if per_class.is_empty() {
            0.0
        } else {
            per_class.iter().map(|c| c.ap).sum::<f64>() / per_class.len() as f64
        };
        MapReport { per_class, map }
    }
}

/// Multi-label recognition mAP: per class, videos ranked by their score.
pub fn recognition_map(scores: &[Vec<f64>], labels: &[&BTreeSet<usize>], num_classes: usize) -> MapReport {
    let per_class = (1..=num_classes)
        .filter_map(|class| {
            let positives = labels.iter().filter(|l| l.contains(&class)).count();
            if positives == 0 {
                return None;
            }
            let ranked: Vec<(f64, bool)> = scores
                .iter()
                .zip(labels)
                .map(|(s, l)| (s[class - 1], l.contains(&class)))
                .collect();
            Some(ClassAp {
                class_id: class,
                ap: average_precision(&ranked, positives),
                positives,
            })
        })
        .collect();
    MapReport::from_classes(per_class)
}

/// Detection mAP at IoU threshold `alpha`. `detections[v]` and
/// `ground_truth[v]` belong to the same video `v`. Detections are matched
/// greedily in descending score order to the unmatched ground-truth instance
/// of the same class and video with the highest IoU.
pub fn detection_map(detections: &[Vec<DetectionSegment>], ground_truth: &[Vec<GroundTruthInstance>], alpha: f64) -> MapReport {
    assert_eq!(detections.len(), ground_truth.len(), "one detection list per video");
    let classes: BTreeSet<usize> = ground_truth.iter().flatten().map(|g| g.class_id).collect();
    let per_class = classes
        .into_iter()
        .map(|class| {
            let positives = ground_truth.iter().flatten().filter(|g| g.class_id == class).count();
            let mut cands: Vec<(f64, usize, (usize, usize))> = detections
                .iter()
                .enumerate()
                .flat_map(|(v, dets)| {
                    dets.iter()
                        .filter(move |d| d.class_id == class)
                        .map(move |d| (d.score, v, (d.begin, d.end)))
                })
                .collect();
            cands.sort_by(|a, b| cmp_desc(a.0, b.0));
            let mut matched: Vec<Vec<bool>> = ground_truth.iter().map(|g| vec![false; g.len()]).collect();
            let ranked: Vec<(f64, bool)> = cands
                .iter()
                .map(|&(score, v, seg)| {
                    let best = ground_truth[v]
                        .iter()
                        .enumerate()
                        .filter(|(j, g)| g.class_id == class && !matched[v][*j])
                        .map(|(j, g)| (j, temporal_iou(seg, (g.begin, g.end))))
                        .fold(None, |acc: Option<(usize, f64)>, (j, iou)| match acc {
                            Some((_, best)) if best >= iou => acc,
                            _ => Some((j, iou)),
                        });
                    match best {
                        Some((j, iou)) if iou >= alpha => {
                            matched[v][j] = true;
                            (score, true)
                        }
                        _ => (score, false),
                    }
                })
                .collect();
            ClassAp {
                class_id: class,
                ap: average_precision(&ranked, positives),
                positives,
            }
        })
        .collect();
    MapReport::from_classes(per_class)
}
