//! Forward pass: clip features, per-clip classification, hard/soft selection
//! across clips and the fused video-level prediction.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::Frames;
use crate::error::{Error, Result};
use crate::numeric::{all_finite, axpy, cmp_desc, dot, matvec, softmax};
use crate::proposals::{sample_uniform, ClipProposal};

pub const MODEL_VERSION: &str = "untrimmednet-desk/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    #[default]
    MeanPool,
    Encoder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorConfig {
    pub kind: ExtractorKind,
    /// Encoder width `H`; ignored for mean pooling.
    pub hidden: usize,
    /// Sub-segments averaged by segmental consensus.
    pub segments: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            kind: ExtractorKind::MeanPool,
            hidden: 32,
            segments: 1,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segments < 1 {
            return Err(Error::config("extractor.segments", "must be at least 1"));
        }
        if self.kind == ExtractorKind::Encoder && self.hidden < 1 {
            return Err(Error::config("extractor.hidden", "must be at least 1"));
        }
        Ok(())
    }

    pub fn feature_dim(&self, descriptor_dim: usize) -> usize {
        match self.kind {
            ExtractorKind::MeanPool => descriptor_dim,
            ExtractorKind::Encoder => self.hidden,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Hard,
    #[default]
    Soft,
}

/// The full learnable state. Matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub num_classes: usize,
    pub descriptor_dim: usize,
    pub extractor: ExtractorConfig,
    /// `C × D'`
    pub classifier: Vec<f64>,
    pub classifier_bias: Option<Vec<f64>>,
    /// `D'`
    pub selection: Vec<f64>,
    /// `H × D`; empty for mean pooling.
    pub encoder: Vec<f64>,
    /// `H`; empty for mean pooling.
    pub encoder_bias: Vec<f64>,
}

/// Scale of the initial classifier weights.
pub const INIT_SCALE: f64 = 0.01;

impl ModelParams {
    /// All-zero parameters of the right shape.
    pub fn zeros(num_classes: usize, descriptor_dim: usize, extractor: ExtractorConfig, bias: bool) -> Self {
        let fd = extractor.feature_dim(descriptor_dim);
        let (enc, enc_b) = match extractor.kind {
            ExtractorKind::MeanPool => (Vec::new(), Vec::new()),
            ExtractorKind::Encoder => (
                vec![0.0; extractor.hidden * descriptor_dim],
                vec![0.0; extractor.hidden],
            ),
        };
        ModelParams {
            num_classes,
            descriptor_dim,
            extractor,
            classifier: vec![0.0; num_classes * fd],
            classifier_bias: bias.then(|| vec![0.0; num_classes]),
            selection: vec![0.0; fd],
            encoder: enc,
            encoder_bias: enc_b,
        }
    }

    /// Random initialisation: small Gaussian classifier, zero selection
    /// weights (uniform attention), He-scaled encoder.
    pub fn init(
        num_classes: usize,
        descriptor_dim: usize,
        extractor: ExtractorConfig,
        bias: bool,
        seed: u64,
    ) -> Self {
        let mut p = Self::zeros(num_classes, descriptor_dim, extractor, bias);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(7);
        for w in &mut p.classifier {
            *w = INIT_SCALE * rng.sample::<f64, _>(StandardNormal);
        }
        let he = (2.0 / descriptor_dim as f64).sqrt();
        for w in &mut p.encoder {
            *w = he * rng.sample::<f64, _>(StandardNormal);
        }
        p.encoder_bias.iter_mut().for_each(|b| *b = 0.01);
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(
            self.num_classes,
            self.descriptor_dim,
            self.extractor,
            self.classifier_bias.is_some(),
        )
    }

    pub fn feature_dim(&self) -> usize {
        self.extractor.feature_dim(self.descriptor_dim)
    }

    /// Named parameter blocks in a fixed order.
    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = vec![("classifier", &self.classifier)];
        if let Some(b) = &self.classifier_bias {
            out.push(("classifier_bias", b));
        }
        out.push(("selection", &self.selection));
        if self.extractor.kind == ExtractorKind::Encoder {
            out.push(("encoder", &self.encoder));
            out.push(("encoder_bias", &self.encoder_bias));
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let encoder = self.extractor.kind == ExtractorKind::Encoder;
        let mut out: Vec<(&'static str, &mut [f64])> = vec![("classifier", &mut self.classifier)];
        if let Some(b) = &mut self.classifier_bias {
            out.push(("classifier_bias", b));
        }
        out.push(("selection", &mut self.selection));
        if encoder {
            out.push(("encoder", &mut self.encoder));
            out.push(("encoder_bias", &mut self.encoder_bias));
        }
        out
    }

    pub fn squared_norm(&self) -> f64 {
        self.blocks().iter().map(|(_, b)| dot(b, b)).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b)| all_finite(b))
    }

    fn check_shapes(&self) -> std::result::Result<(), String> {
        let fd = self.feature_dim();
        let c = self.num_classes;
        let mut problems = Vec::new();
        if self.classifier.len() != c * fd {
            problems.push(format!("classifier has {} values, expected {}", self.classifier.len(), c * fd));
        }
        if let Some(b) = &self.classifier_bias {
            if b.len() != c {
                problems.push(format!("classifier_bias has {} values, expected {c}", b.len()));
            }
        }
        if self.selection.len() != fd {
            problems.push(format!("selection has {} values, expected {fd}", self.selection.len()));
        }
        let (eh, ed) = match self.extractor.kind {
            ExtractorKind::MeanPool => (0, 0),
            ExtractorKind::Encoder => (self.extractor.hidden, self.descriptor_dim),
        };
        if self.encoder.len() != eh * ed || self.encoder_bias.len() != eh {
            problems.push("encoder shape mismatch".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems.join("; "))
        }
    }
}

/// Param-independent part of a clip's feature: the mean descriptor of each
/// sub-segment of the clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipInput {
    pub segment_means: Vec<Vec<f64>>,
}

impl ClipInput {
    /// Splits `clip` into `min(segments, len)` sub-segments with the uniform
    /// floor rule and averages each.
    pub fn from_clip(frames: &Frames, clip: ClipProposal, segments: usize) -> Result<Self> {
        if clip.begin < 1 || clip.begin > clip.end || clip.end > frames.len() {
            return Err(Error::invalid(format!(
                "clip ({}, {}) outside frames 1..={}",
                clip.begin,
                clip.end,
                frames.len()
            )));
        }
        let s = segments.clamp(1, clip.len());
        let segment_means = sample_uniform(clip.len(), s)?
            .into_iter()
            .map(|sub| frames.mean(clip.begin + sub.begin - 1, clip.begin + sub.end - 1))
            .collect();
        Ok(ClipInput { segment_means })
    }
}

/// Intermediate values of one clip kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct FeatureCache {
    /// Encoder pre-activations per segment (empty for mean pooling).
    pub pre: Vec<Vec<f64>>,
    pub phi: Vec<f64>,
}

pub(crate) fn feature_cached(params: &ModelParams, input: &ClipInput) -> FeatureCache {
    let d = params.descriptor_dim;
    match params.extractor.kind {
        ExtractorKind::MeanPool => FeatureCache {
            pre: Vec::new(),
            phi: crate::numeric::mean_of(input.segment_means.iter().map(Vec::as_slice), d),
        },
        ExtractorKind::Encoder => {
            let h = params.extractor.hidden;
            let pre: Vec<Vec<f64>> = input
                .segment_means
                .iter()
                .map(|m| {
                    let mut z = matvec(&params.encoder, h, d, m);
                    axpy(&mut z, 1.0, &params.encoder_bias);
                    z
                })
                .collect();
            let mut phi = vec![0.0; h];
            for z in &pre {
                for (p, &v) in phi.iter_mut().zip(z) {
                    *p += v.max(0.0);
                }
            }
            let inv = 1.0 / pre.len() as f64;
            phi.iter_mut().for_each(|v| *v *= inv);
            FeatureCache { pre, phi }
        }
    }
}

/// Clip representation `φ(c)`.
pub fn feature(params: &ModelParams, input: &ClipInput) -> Vec<f64> {
    feature_cached(params, input).phi
}

pub fn extract_feature(frames: &Frames, clip: ClipProposal, params: &ModelParams) -> Result<Vec<f64>> {
    if frames.dim() != params.descriptor_dim {
        return Err(Error::Dimension {
            what: "descriptor".into(),
            expected: params.descriptor_dim,
            found: frames.dim(),
        });
    }
    let input = ClipInput::from_clip(frames, clip, params.extractor.segments)?;
    Ok(feature(params, &input))
}

/// Raw scores `W φ (+ b)` and their softmax over classes.
pub fn classify_clip(phi: &[f64], params: &ModelParams) -> Result<(Vec<f64>, Vec<f64>)> {
    if phi.len() != params.feature_dim() {
        return Err(Error::Dimension {
            what: "clip feature".into(),
            expected: params.feature_dim(),
            found: phi.len(),
        });
    }
    if !all_finite(phi) {
        return Err(Error::Numeric { block: "feature".into() });
    }
    let raw = raw_class(phi, params);
    if !all_finite(&raw) {
        return Err(Error::Numeric {
            block: "classifier".into(),
        });
    }
    let soft = softmax(&raw);
    Ok((raw, soft))
}

pub(crate) fn raw_class(phi: &[f64], params: &ModelParams) -> Vec<f64> {
    let mut raw = matvec(&params.classifier, params.num_classes, phi.len(), phi);
    if let Some(b) = &params.classifier_bias {
        axpy(&mut raw, 1.0, b);
    }
    raw
}

/// Per class, the `k` clip indices (0-based, ascending) with the largest raw
/// score. Ties go to the smaller clip index.
pub fn select_hard(raw_scores: &[Vec<f64>], k: usize) -> Result<Vec<Vec<usize>>> {
    let n = raw_scores.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("top-k needs 1 <= k <= N (k = {k}, N = {n})")));
    }
    let classes = raw_scores[0].len();
    Ok((0..classes)
        .map(|i| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| cmp_desc(raw_scores[a][i], raw_scores[b][i]).then(a.cmp(&b)));
            let mut top = idx[..k].to_vec();
            top.sort_unstable();
            top
        })
        .collect())
}

/// Raw selection scores `w·φ_n` and their softmax across clips.
pub fn select_soft(features: &[Vec<f64>], params: &ModelParams) -> Result<(Vec<f64>, Vec<f64>)> {
    if features.is_empty() {
        return Err(Error::invalid("soft selection needs at least one clip"));
    }
    let raw: Vec<f64> = features.iter().map(|phi| dot(&params.selection, phi)).collect();
    if !all_finite(&raw) {
        return Err(Error::Numeric {
            block: "selection".into(),
        });
    }
    let soft = softmax(&raw);
    Ok((raw, soft))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipScores {
    pub raw_class: Vec<f64>,
    pub soft_class: Vec<f64>,
    pub raw_select: f64,
    pub soft_select: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoPrediction {
    pub probs: Vec<f64>,
    pub clips: Vec<ClipScores>,
    /// Selected clip indices per class (hard mode only).
    pub selected: Option<Vec<Vec<usize>>>,
}

/// Scores every clip: class scores per clip, selection softmax across clips.
pub fn score_clips(features: &[Vec<f64>], params: &ModelParams) -> Result<Vec<ClipScores>> {
    let (raw_sel, soft_sel) = select_soft(features, params)?;
    features
        .iter()
        .zip(raw_sel.into_iter().zip(soft_sel))
        .map(|(phi, (rs, ss))| {
            let (raw_class, soft_class) = classify_clip(phi, params)?;
            Ok(ClipScores {
                raw_class,
                soft_class,
                raw_select: rs,
                soft_select: ss,
            })
        })
        .collect()
}

/// Top-k pooling of raw class scores, averaged over the selected set, then softmax.
pub fn predict_video_hard(clips: Vec<ClipScores>, k: usize) -> Result<VideoPrediction> {
    let raw: Vec<Vec<f64>> = clips.iter().map(|c| c.raw_class.clone()).collect();
    let selected = select_hard(&raw, k)?;
    let pooled: Vec<f64> = selected
        .iter()
        .enumerate()
        .map(|(i, set)| set.iter().map(|&j| raw[j][i]).sum::<f64>() / k as f64)
        .collect();
    Ok(VideoPrediction {
        probs: softmax(&pooled),
        clips,
        selected: Some(selected),
    })
}

/// Attention-weighted sum of per-clip class distributions.
pub fn predict_video_soft(clips: Vec<ClipScores>) -> Result<VideoPrediction> {
    let first = clips
        .first()
        .ok_or_else(|| Error::invalid("soft fusion needs at least one clip"))?;
    let mut probs = vec![0.0; first.soft_class.len()];
    for c in &clips {
        axpy(&mut probs, c.soft_select, &c.soft_class);
    }
    Ok(VideoPrediction {
        probs,
        clips,
        selected: None,
    })
}

/// Full forward pass over one video's clip inputs.
pub fn predict(params: &ModelParams, inputs: &[ClipInput], mode: SelectionMode, k: usize) -> Result<VideoPrediction> {
    let features: Vec<Vec<f64>> = inputs.iter().map(|i| feature(params, i)).collect();
    let clips = score_clips(&features, params)?;
    match mode {
        SelectionMode::Soft => predict_video_soft(clips),
        SelectionMode::Hard => predict_video_hard(clips, k),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: String,
    num_classes: usize,
    descriptor_dim: usize,
    feature_dim: usize,
    hidden: usize,
    segments: usize,
    extractor: ExtractorKind,
    selection_mode: SelectionMode,
    bias: bool,
    classifier: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    classifier_bias: Option<Vec<f64>>,
    selection: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    encoder: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    encoder_bias: Vec<f64>,
}

pub fn model_to_string(params: &ModelParams, mode: SelectionMode) -> String {
    let file = ModelFile {
        version: MODEL_VERSION.to_string(),
        num_classes: params.num_classes,
        descriptor_dim: params.descriptor_dim,
        feature_dim: params.feature_dim(),
        hidden: match params.extractor.kind {
            ExtractorKind::MeanPool => 0,
            ExtractorKind::Encoder => params.extractor.hidden,
        },
        segments: params.extractor.segments,
        extractor: params.extractor.kind,
        selection_mode: mode,
        bias: params.classifier_bias.is_some(),
        classifier: params.classifier.clone(),
        classifier_bias: params.classifier_bias.clone(),
        selection: params.selection.clone(),
        encoder: params.encoder.clone(),
        encoder_bias: params.encoder_bias.clone(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("model serialises");
    s.push('\n');
    s
}

pub fn save_model(path: impl AsRef<Path>, params: &ModelParams, mode: SelectionMode) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_to_string(params, mode)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(ModelParams, SelectionMode)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |message: String| Error::Model {
        path: path.to_path_buf(),
        message,
    };
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if file.version != MODEL_VERSION {
        return Err(bad(format!("unsupported version `{}`", file.version)));
    }
    if file.bias != file.classifier_bias.is_some() {
        return Err(bad("bias flag disagrees with stored classifier_bias".into()));
    }
    let extractor = ExtractorConfig {
        kind: file.extractor,
        hidden: file.hidden,
        segments: file.segments,
    };
    extractor.validate().map_err(|e| bad(e.to_string()))?;
    let params = ModelParams {
        num_classes: file.num_classes,
        descriptor_dim: file.descriptor_dim,
        extractor,
        classifier: file.classifier,
        classifier_bias: file.classifier_bias,
        selection: file.selection,
        encoder: file.encoder,
        encoder_bias: file.encoder_bias,
    };
    if params.feature_dim() != file.feature_dim {
        return Err(bad(format!(
            "feature_dim {} inconsistent with extractor ({})",
            file.feature_dim,
            params.feature_dim()
        )));
    }
    params.check_shapes().map_err(bad)?;
    if !params.is_finite() {
        return Err(bad("non-finite weight".into()));
    }
    Ok((params, file.selection_mode))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(raw: &[f64]) -> ClipScores {
        ClipScores {
            raw_class: raw.to_vec(),
            soft_class: softmax(raw),
            raw_select: 0.0,
            soft_select: 0.0,
        }
    }

    fn soft_clip(soft_class: &[f64], soft_select: f64) -> ClipScores {
        ClipScores {
            raw_class: vec![0.0; soft_class.len()],
            soft_class: soft_class.to_vec(),
            raw_select: 0.0,
            soft_select,
        }
    }

    fn params_2d() -> ModelParams {
        ModelParams::zeros(3, 2, ExtractorConfig::default(), false)
    }

    #[test]
    fn feature_examples() {
        let frames = Frames::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 9.0]]).unwrap();
        let p = params_2d();
        assert_eq!(extract_feature(&frames, ClipProposal::new(2, 2), &p).unwrap(), vec![3.0, 4.0]);
        assert_eq!(extract_feature(&frames, ClipProposal::new(1, 2), &p).unwrap(), vec![2.0, 3.0]);
        assert!(extract_feature(&frames, ClipProposal::new(2, 4), &p).is_err());

        let enc = ExtractorConfig {
            kind: ExtractorKind::Encoder,
            hidden: 2,
            segments: 1,
        };
        let mut pe = ModelParams::zeros(3, 2, enc, false);
        pe.encoder = vec![1.0, 0.0, 0.0, 1.0];
        assert_eq!(extract_feature(&frames, ClipProposal::new(1, 3), &pe).unwrap(), vec![3.0, 5.0]);
        pe.encoder = vec![-1.0, 0.0, 0.0, 1.0];
        assert_eq!(extract_feature(&frames, ClipProposal::new(1, 3), &pe).unwrap(), vec![0.0, 5.0]);
    }

    #[test]
    fn segmental_consensus_on_uneven_split() {
        let frames = Frames::from_rows(&[vec![0.0], vec![0.0], vec![3.0]]).unwrap();
        let mut p = ModelParams::zeros(2, 1, ExtractorConfig::default(), false);
        p.extractor.segments = 2;
        // sub-segments (1,1) and (2,3): means 0 and 1.5 → 0.75, not the plain mean 1.0
        assert_eq!(extract_feature(&frames, ClipProposal::new(1, 3), &p).unwrap(), vec![0.75]);
        p.extractor.segments = 3;
        assert_eq!(extract_feature(&frames, ClipProposal::new(1, 3), &p).unwrap(), vec![1.0]);
        // more segments than frames collapses to one per frame
        p.extractor.segments = 10;
        assert_eq!(extract_feature(&frames, ClipProposal::new(3, 3), &p).unwrap(), vec![3.0]);
    }

    #[test]
    fn classify_rejects_non_finite() {
        let p = params_2d();
        assert!(matches!(classify_clip(&[f64::NAN, 0.0], &p), Err(Error::Numeric { .. })));
        assert!(classify_clip(&[1.0], &p).is_err());
        let (raw, soft) = classify_clip(&[1.0, 1.0], &p).unwrap();
        assert_eq!(raw, vec![0.0; 3]);
        assert!(soft.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn hard_selection_examples() {
        let scores: Vec<Vec<f64>> = [0.9, 0.1, 0.8, 0.2].iter().map(|&s| vec![s]).collect();
        assert_eq!(select_hard(&scores, 2).unwrap(), vec![vec![0, 2]]);
        assert_eq!(select_hard(&scores, 4).unwrap(), vec![vec![0, 1, 2, 3]]);
        let tie: Vec<Vec<f64>> = [0.5, 0.5, 0.1].iter().map(|&s| vec![s]).collect();
        assert_eq!(select_hard(&tie, 1).unwrap(), vec![vec![0]]);
        assert!(select_hard(&tie, 4).is_err());
        assert!(select_hard(&tie, 0).is_err());
    }

    #[test]
    fn soft_selection_examples() {
        let mut p = ModelParams::zeros(2, 1, ExtractorConfig::default(), false);
        p.selection = vec![1.0];
        let (_, s) = select_soft(&[vec![0.3]], &p).unwrap();
        assert_eq!(s, vec![1.0]);
        let (_, s) = select_soft(&[vec![2.0], vec![2.0], vec![2.0], vec![2.0]], &p).unwrap();
        assert!(s.iter().all(|v| (v - 0.25).abs() < 1e-15));
        let (_, s) = select_soft(&[vec![1f64.ln()], vec![3f64.ln()]], &p).unwrap();
        assert!((s[0] - 0.25).abs() < 1e-15 && (s[1] - 0.75).abs() < 1e-15);
        assert!(select_soft(&[], &p).is_err());
    }

    #[test]
    fn hard_fusion_examples() {
        let single = predict_video_hard(vec![clip(&[0.3, -1.0, 2.0])], 1).unwrap();
        assert_eq!(single.probs, softmax(&[0.3, -1.0, 2.0]));

        let a = predict_video_hard(vec![clip(&[0.3, 1.0]), clip(&[0.3, 1.0])], 2).unwrap();
        let b = predict_video_hard(vec![clip(&[0.3, 1.0]), clip(&[0.3, 1.0])], 1).unwrap();
        assert_eq!(a.probs, b.probs);

        // class 0 pooled: (0.9+0.8)/2 = 0.85; class 1 all zero
        let clips = [0.9, 0.1, 0.8, 0.2].iter().map(|&s| clip(&[s, 0.0])).collect();
        let pred = predict_video_hard(clips, 2).unwrap();
        let expected = softmax(&[0.85, 0.0]);
        assert!(pred.probs.iter().zip(&expected).all(|(a, b)| (a - b).abs() < 1e-15));
        assert_eq!(pred.selected, Some(vec![vec![0, 2], vec![0, 1]]));
    }

    #[test]
    fn soft_fusion_examples() {
        let one = predict_video_soft(vec![soft_clip(&[0.2, 0.8], 1.0)]).unwrap();
        assert_eq!(one.probs, vec![0.2, 0.8]);
        let sym = predict_video_soft(vec![soft_clip(&[0.9, 0.1], 0.5), soft_clip(&[0.1, 0.9], 0.5)]).unwrap();
        assert!((sym.probs[0] - 0.5).abs() < 1e-15 && (sym.probs[1] - 0.5).abs() < 1e-15);
        let cvx = predict_video_soft(vec![soft_clip(&[1.0, 0.0], 0.25), soft_clip(&[0.0, 1.0], 0.75)]).unwrap();
        assert_eq!(cvx.probs, vec![0.25, 0.75]);
    }

    #[test]
    fn model_file_round_trip() {
        let enc = ExtractorConfig {
            kind: ExtractorKind::Encoder,
            hidden: 3,
            segments: 2,
        };
        let p = ModelParams::init(4, 5, enc, true, 9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&path, &p, SelectionMode::Hard).unwrap();
        let (q, mode) = load_model(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(mode, SelectionMode::Hard);
        assert!(std::fs::read_to_string(&path).unwrap().contains(MODEL_VERSION));

        let text = std::fs::read_to_string(&path).unwrap().replace(MODEL_VERSION, "other/2");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Model { .. })));
    }
}
