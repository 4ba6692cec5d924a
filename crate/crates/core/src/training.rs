//! Weakly supervised training: ℓ1-normalised labels, cross-entropy on the
//! fused video prediction, analytic gradients, finite-difference checking and
//! a momentum SGD loop with weight decay.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::WeakVideo;
use crate::error::{Error, Result};
use crate::model::{
    feature_cached, raw_class, select_hard, ClipInput, ExtractorConfig, ExtractorKind, ModelParams,
    SelectionMode,
};
use crate::numeric::{all_finite, axpy, dot, l2_norm, matvec_t, softmax};
use crate::par;
use crate::proposals::ProposalSampler;

/// Lower clamp applied to probabilities before taking the log.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: SelectionMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    /// Steps between learning-rate decays. Absent: a single decay after two
    /// thirds of all steps.
    pub lr_decay_period: Option<usize>,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Proposals sampled per video per epoch.
    pub proposals_per_video: usize,
    /// Hard-selection `k`; absent means `⌊N/2⌋`.
    pub top_k: Option<usize>,
    pub classifier_bias: bool,
    /// Keep the selection weights at zero (uniform attention baseline).
    pub freeze_selection: bool,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: SelectionMode::Soft,
            epochs: 100,
            batch_size: 16,
            learning_rate: 0.05,
            lr_decay_factor: 0.1,
            lr_decay_period: None,
            momentum: 0.9,
            weight_decay: 0.0005,
            proposals_per_video: 7,
            top_k: None,
            classifier_bias: false,
            freeze_selection: false,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Large-scale settings used for full video benchmarks (spatial stream).
    pub fn paper_scale() -> Self {
        TrainConfig {
            batch_size: 256,
            learning_rate: 0.001,
            lr_decay_period: Some(4000),
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("train.momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("train.weight_decay", "must be non-negative"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if self.proposals_per_video < 1 {
            return Err(Error::config("train.proposals_per_video", "must be at least 1"));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite()) {
            return Err(Error::config("train.lr_decay_factor", "must be positive"));
        }
        if self.lr_decay_period == Some(0) {
            return Err(Error::config("train.lr_decay_period", "must be at least 1"));
        }
        if let Some(k) = self.top_k {
            if k < 1 || k > self.proposals_per_video {
                return Err(Error::config(
                    "train.top_k",
                    format!("must lie in [1, {}]", self.proposals_per_video),
                ));
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.top_k.unwrap_or((self.proposals_per_video / 2).max(1))
    }

    pub fn learning_rate_at(&self, step: usize, total_steps: usize) -> f64 {
        let decays = match self.lr_decay_period {
            Some(p) => step / p,
            None => usize::from(3 * step >= 2 * total_steps),
        };
        self.learning_rate * self.lr_decay_factor.powi(decays as i32)
    }
}

/// `ȳ = y / ‖y‖₁` for a 1-based label set over `C` classes.
pub fn normalize_labels(labels: &BTreeSet<usize>, num_classes: usize) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::invalid("training videos need at least one label"));
    }
    let mass = 1.0 / labels.len() as f64;
    let mut y = vec![0.0; num_classes];
    for &l in labels {
        if l == 0 || l > num_classes {
            return Err(Error::invalid(format!("label {l} outside 1..={num_classes}")));
        }
        y[l - 1] = mass;
    }
    Ok(y)
}

/// `−Σ ȳ_k ln x̄_k`; the flag reports whether any labelled probability had to
/// be clamped at [`LOG_EPS`].
pub fn video_loss(probs: &[f64], target: &[f64]) -> (f64, bool) {
    let mut clamped = false;
    let loss = probs
        .iter()
        .zip(target)
        .filter(|(_, &y)| y > 0.0)
        .map(|(&p, &y)| {
            if p < LOG_EPS {
                clamped = true;
            }
            -y * p.max(LOG_EPS).ln()
        })
        .sum();
    (loss, clamped)
}

/// One training example: the param-independent inputs of the sampled clips and
/// the normalised label vector.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoBag {
    pub inputs: Vec<ClipInput>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossSpec {
    pub mode: SelectionMode,
    pub k: usize,
}

/// Forward, loss and (optionally) accumulated gradient for one video.
fn video_objective(params: &ModelParams, bag: &VideoBag, spec: LossSpec, grad: Option<&mut ModelParams>) -> Result<(f64, bool)> {
    let c = params.num_classes;
    let fd = params.feature_dim();
    let caches: Vec<_> = bag.inputs.iter().map(|i| feature_cached(params, i)).collect();
    let raw: Vec<Vec<f64>> = caches.iter().map(|f| raw_class(&f.phi, params)).collect();
    let n = raw.len();
    if n == 0 {
        return Err(Error::invalid("video bag has no clips"));
    }

    // dL/dz per clip, dL/da per clip
    let mut dz = vec![vec![0.0; c]; n];
    let mut da = vec![0.0; n];
    let (loss, clamped) = match spec.mode {
        SelectionMode::Soft => {
            let soft: Vec<Vec<f64>> = raw.iter().map(|z| softmax(z)).collect();
            let sel_raw: Vec<f64> = caches.iter().map(|f| dot(&params.selection, &f.phi)).collect();
            let alpha = softmax(&sel_raw);
            let mut probs = vec![0.0; c];
            for (p, &a) in soft.iter().zip(&alpha) {
                axpy(&mut probs, a, p);
            }
            let (loss, clamped) = video_loss(&probs, &bag.target);
            if grad.is_some() {
                let g: Vec<f64> = probs
                    .iter()
                    .zip(&bag.target)
                    .map(|(&p, &y)| -y / p.max(LOG_EPS))
                    .collect();
                let pg: Vec<f64> = soft.iter().map(|p| dot(p, &g)).collect();
                let mean_pg = dot(&alpha, &pg);
                for j in 0..n {
                    for i in 0..c {
                        dz[j][i] = alpha[j] * soft[j][i] * (g[i] - pg[j]);
                    }
                    da[j] = alpha[j] * (pg[j] - mean_pg);
                }
            }
            (loss, clamped)
        }
        SelectionMode::Hard => {
            let selected = select_hard(&raw, spec.k)?;
            let pooled: Vec<f64> = selected
                .iter()
                .enumerate()
                .map(|(i, set)| set.iter().map(|&j| raw[j][i]).sum::<f64>() / spec.k as f64)
                .collect();
            let probs = softmax(&pooled);
            let (loss, clamped) = video_loss(&probs, &bag.target);
            if grad.is_some() {
                let g: Vec<f64> = probs
                    .iter()
                    .zip(&bag.target)
                    .map(|(&p, &y)| -y / p.max(LOG_EPS))
                    .collect();
                let pg = dot(&probs, &g);
                let inv_k = 1.0 / spec.k as f64;
                for (i, set) in selected.iter().enumerate() {
                    let ds = probs[i] * (g[i] - pg);
                    for &j in set {
                        dz[j][i] = ds * inv_k;
                    }
                }
            }
            (loss, clamped)
        }
    };

    if let Some(grad) = grad {
        let d = params.descriptor_dim;
        for j in 0..n {
            let phi = &caches[j].phi;
            for (row, &dzi) in grad.classifier.chunks_exact_mut(fd).zip(&dz[j]) {
                axpy(row, dzi, phi);
            }
            if let Some(b) = &mut grad.classifier_bias {
                axpy(b, 1.0, &dz[j]);
            }
            axpy(&mut grad.selection, da[j], phi);
            if params.extractor.kind == ExtractorKind::Encoder {
                let mut dphi = matvec_t(&params.classifier, c, fd, &dz[j]);
                axpy(&mut dphi, da[j], &params.selection);
                let inv_s = 1.0 / caches[j].pre.len() as f64;
                for (pre, mean) in caches[j].pre.iter().zip(&bag.inputs[j].segment_means) {
                    for (h, (&z, &dp)) in pre.iter().zip(&dphi).enumerate() {
                        if z > 0.0 {
                            let dpre = dp * inv_s;
                            axpy(&mut grad.encoder[h * d..(h + 1) * d], dpre, mean);
                            grad.encoder_bias[h] += dpre;
                        }
                    }
                }
            }
        }
    }
    Ok((loss, clamped))
}

/// Batch objective: mean video loss plus `(λ/2)‖θ‖²`.
pub fn batch_loss(params: &ModelParams, batch: &[VideoBag], spec: LossSpec, weight_decay: f64) -> Result<f64> {
    let losses = par::try_map(batch, |bag| video_objective(params, bag, spec, None).map(|(l, _)| l))?;
    let data = losses.iter().sum::<f64>() / batch.len() as f64;
    Ok(data + 0.5 * weight_decay * params.squared_norm())
}

#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub loss: f64,
    pub video_losses: Vec<f64>,
    pub grad: ModelParams,
    pub clamped: usize,
}

/// Analytic gradient of [`batch_loss`]. Per-video work runs in parallel and is
/// summed in batch order, so the result does not depend on the thread count.
pub fn backward(params: &ModelParams, batch: &[VideoBag], spec: LossSpec, weight_decay: f64) -> Result<BatchGradient> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let per_video = par::try_map(batch, |bag| {
        let mut g = params.zeros_like();
        let (l, clamped) = video_objective(params, bag, spec, Some(&mut g))?;
        Ok::<_, Error>((l, clamped, g))
    })?;
    let scale = 1.0 / batch.len() as f64;
    let mut grad = params.zeros_like();
    let mut video_losses = Vec::with_capacity(batch.len());
    let mut clamped = 0;
    for (l, c, g) in per_video {
        video_losses.push(l);
        clamped += usize::from(c);
        for ((_, acc), (_, part)) in grad.blocks_mut().into_iter().zip(g.blocks()) {
            axpy(acc, scale, part);
        }
    }
    for ((_, acc), (_, theta)) in grad.blocks_mut().into_iter().zip(params.blocks()) {
        axpy(acc, weight_decay, theta);
    }
    for (name, block) in grad.blocks() {
        if !all_finite(block) {
            return Err(Error::Numeric { block: name.into() });
        }
    }
    let loss = video_losses.iter().sum::<f64>() * scale + 0.5 * weight_decay * params.squared_norm();
    Ok(BatchGradient {
        loss,
        video_losses,
        grad,
        clamped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub block: &'static str,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&BlockCheck> {
        self.blocks.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Compares every analytic partial with the central difference
/// `(L(θ+h) − L(θ−h)) / 2h`; relative error `|a−n| / max(|a|, |n|, 1e-8)`.
/// `corrupt` perturbs the analytic gradient (negative control). In hard mode
/// the unused selection block is skipped.
pub fn grad_check(
    params: &ModelParams,
    batch: &[VideoBag],
    spec: LossSpec,
    weight_decay: f64,
    h: f64,
    corrupt: bool,
) -> Result<GradCheckReport> {
    let mut analytic = backward(params, batch, spec, weight_decay)?.grad;
    if corrupt {
        analytic.classifier[0] += 1e-3;
    }
    let analytic_blocks: Vec<(&'static str, Vec<f64>)> =
        analytic.blocks().into_iter().map(|(n, b)| (n, b.to_vec())).collect();
    let mut blocks = Vec::new();
    for (bi, (name, a_block)) in analytic_blocks.iter().enumerate() {
        // Hard selection never reads the attention weights; their gradient is
        // the weight-decay term alone, too small for a meaningful difference.
        if spec.mode == SelectionMode::Hard && *name == "selection" {
            continue;
        }
        let mut check = BlockCheck {
            block: name,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for (idx, &a) in a_block.iter().enumerate() {
            let mut plus = params.clone();
            plus.blocks_mut()[bi].1[idx] += h;
            let mut minus = params.clone();
            minus.blocks_mut()[bi].1[idx] -= h;
            let num = (batch_loss(&plus, batch, spec, weight_decay)? - batch_loss(&minus, batch, spec, weight_decay)?)
                / (2.0 * h);
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-8);
            if idx == 0 || rel > check.max_rel_error {
                check.max_rel_error = rel;
                check.worst_index = idx;
                check.analytic = a;
                check.numeric = num;
            }
        }
        blocks.push(check);
    }
    Ok(GradCheckReport { blocks })
}

/// Shape of the random problem used for gradient checking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckProblem {
    pub num_classes: usize,
    pub descriptor_dim: usize,
    pub clips: usize,
    pub videos: usize,
    pub extractor: ExtractorConfig,
    pub bias: bool,
    pub mode: SelectionMode,
    pub k: usize,
    pub weight_decay: f64,
}

impl Default for CheckProblem {
    fn default() -> Self {
        CheckProblem {
            num_classes: 3,
            descriptor_dim: 5,
            clips: 4,
            videos: 3,
            extractor: ExtractorConfig::default(),
            bias: false,
            mode: SelectionMode::Soft,
            k: 2,
            weight_decay: 0.0005,
        }
    }
}

/// Minimum distance from non-differentiable points (top-k ties, ReLU kinks)
/// the random check problem must keep.
pub const TIE_MARGIN: f64 = 1e-3;

/// Random model and batch for gradient checking, redrawn until no top-k tie
/// or ReLU kink lies within [`TIE_MARGIN`].
pub fn random_check_problem(problem: &CheckProblem, seed: u64) -> (ModelParams, Vec<VideoBag>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut params = ModelParams::zeros(problem.num_classes, problem.descriptor_dim, problem.extractor, problem.bias);
        for (name, block) in params.blocks_mut() {
            let scale = if name.ends_with("bias") { 0.3 } else { 0.7 };
            for w in block.iter_mut() {
                *w = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let segments = problem.extractor.segments;
        let batch: Vec<VideoBag> = (0..problem.videos)
            .map(|_| {
                let inputs = (0..problem.clips)
                    .map(|_| ClipInput {
                        segment_means: (0..segments)
                            .map(|_| (0..problem.descriptor_dim).map(|_| rng.sample(StandardNormal)).collect())
                            .collect(),
                    })
                    .collect();
                let mut labels = BTreeSet::new();
                labels.insert(rng.random_range(1..=problem.num_classes));
                if rng.random_bool(0.5) {
                    labels.insert(rng.random_range(1..=problem.num_classes));
                }
                VideoBag {
                    inputs,
                    target: normalize_labels(&labels, problem.num_classes).expect("labels in range"),
                }
            })
            .collect();
        if check_margins(&params, &batch, problem) {
            return (params, batch);
        }
    }
}

fn check_margins(params: &ModelParams, batch: &[VideoBag], problem: &CheckProblem) -> bool {
    for bag in batch {
        let caches: Vec<_> = bag.inputs.iter().map(|i| feature_cached(params, i)).collect();
        if caches
            .iter()
            .flat_map(|c| c.pre.iter().flatten())
            .any(|z| z.abs() < TIE_MARGIN)
        {
            return false;
        }
        if problem.mode == SelectionMode::Hard && problem.k < problem.clips {
            let raw: Vec<Vec<f64>> = caches.iter().map(|f| raw_class(&f.phi, params)).collect();
            for i in 0..problem.num_classes {
                let mut col: Vec<f64> = raw.iter().map(|r| r[i]).collect();
                col.sort_by(|a, b| b.total_cmp(a));
                if col[problem.k - 1] - col[problem.k] < TIE_MARGIN {
                    return false;
                }
            }
        }
    }
    true
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub epoch: usize,
    /// Mean over the epoch's steps of the batch objective.
    pub mean_loss: f64,
    /// `(video id, loss)` as seen during the epoch, in id order.
    pub video_losses: Vec<(String, f64)>,
    /// Mean gradient norm per parameter block over the epoch's steps.
    pub grad_norms: Vec<(&'static str, f64)>,
    pub grad_norm: f64,
    pub learning_rate: f64,
    /// Videos whose loss needed log clamping.
    pub clamped: usize,
    pub wall_time: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<LossReport>,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Setup(#[from] Error),
    #[error("training diverged at epoch {epoch}, step {step}: {reason}")]
    Diverged {
        epoch: usize,
        step: usize,
        reason: String,
        last_good: Box<ModelParams>,
        history: Vec<LossReport>,
    },
}

/// Precomputed proposal inputs for one training video.
struct PoolEntry {
    id: String,
    target: Vec<f64>,
    pool: Vec<ClipInput>,
}

fn sample_pool_indices(rng: &mut ChaCha8Rng, pool: usize, n: usize) -> Vec<usize> {
    if pool >= n {
        index::sample(rng, pool, n).into_vec()
    } else {
        let mut idx: Vec<usize> = (0..pool).collect();
        idx.extend((pool..n).map(|_| rng.random_range(0..pool)));
        idx
    }
}

/// Trains from weakly labelled videos. `on_epoch` sees each epoch's report
/// and the parameters after that epoch (for logging and checkpoints).
pub fn train(
    videos: &[WeakVideo<'_>],
    num_classes: usize,
    sampler: &ProposalSampler,
    extractor: ExtractorConfig,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&LossReport, &ModelParams) -> Result<()>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    extractor.validate()?;
    if videos.is_empty() {
        return Err(Error::invalid("training corpus is empty").into());
    }
    let dim = videos[0].frames.dim();
    let mut params = ModelParams::init(num_classes, dim, extractor, config.classifier_bias, config.seed);

    let entries: Vec<PoolEntry> = par::try_map(videos, |v| {
        if v.frames.dim() != dim {
            return Err(Error::Dimension {
                what: format!("descriptor of video {}", v.id),
                expected: dim,
                found: v.frames.dim(),
            });
        }
        let target = normalize_labels(v.labels, num_classes)
            .map_err(|e| Error::invalid(format!("video {}: {e}", v.id)))?;
        let pool = sampler
            .propose(v.frames)
            .into_iter()
            .map(|(clip, _)| ClipInput::from_clip(v.frames, clip, extractor.segments))
            .collect::<Result<Vec<_>>>()?;
        Ok(PoolEntry {
            id: v.id.to_string(),
            target,
            pool,
        })
    })?;

    let spec = LossSpec {
        mode: config.mode,
        k: config.k(),
    };
    let steps_per_epoch = entries.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(11);
    let mut velocity = params.zeros_like();
    let mut history = Vec::with_capacity(config.epochs);
    let start = Instant::now();
    let mut step = 0usize;

    for epoch in 1..=config.epochs {
        let draws: Vec<Vec<usize>> = entries
            .iter()
            .map(|e| sample_pool_indices(&mut rng, e.pool.len(), config.proposals_per_video))
            .collect();
        let mut order: Vec<usize> = (0..entries.len()).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut video_losses = Vec::with_capacity(entries.len());
        let mut norm_sums = vec![0.0; params.blocks().len()];
        let mut total_norm_sum = 0.0;
        let mut clamped = 0;
        let mut lr = config.learning_rate_at(step, total_steps.max(1));

        for chunk in order.chunks(config.batch_size) {
            let mut members = chunk.to_vec();
            members.sort_unstable();
            let batch: Vec<VideoBag> = members
                .iter()
                .map(|&i| VideoBag {
                    inputs: draws[i].iter().map(|&j| entries[i].pool[j].clone()).collect(),
                    target: entries[i].target.clone(),
                })
                .collect();
            let diverged = |reason: String, history: &Vec<LossReport>, params: &ModelParams| TrainError::Diverged {
                epoch,
                step,
                reason,
                last_good: Box::new(params.clone()),
                history: history.clone(),
            };
            let mut bg = match backward(&params, &batch, spec, config.weight_decay) {
                Ok(bg) => bg,
                Err(Error::Numeric { block }) => {
                    return Err(diverged(format!("non-finite gradient in `{block}`"), &history, &params))
                }
                Err(e) => return Err(e.into()),
            };
            if !bg.loss.is_finite() {
                return Err(diverged("non-finite loss".into(), &history, &params));
            }
            if config.freeze_selection {
                bg.grad.selection.iter_mut().for_each(|g| *g = 0.0);
            }
            lr = config.learning_rate_at(step, total_steps.max(1));
            let mut next = params.clone();
            for (((_, theta), (_, v)), (_, g)) in next
                .blocks_mut()
                .into_iter()
                .zip(velocity.blocks_mut())
                .zip(bg.grad.blocks())
            {
                for ((t, vi), gi) in theta.iter_mut().zip(v.iter_mut()).zip(g) {
                    *vi = config.momentum * *vi - lr * gi;
                    *t += *vi;
                }
            }
            if !next.is_finite() {
                return Err(diverged("non-finite parameters".into(), &history, &params));
            }
            params = next;

            loss_sum += bg.loss;
            clamped += bg.clamped;
            for (s, (_, g)) in norm_sums.iter_mut().zip(bg.grad.blocks()) {
                *s += l2_norm(g);
            }
            total_norm_sum += bg.grad.squared_norm().sqrt();
            video_losses.extend(members.iter().map(|&i| entries[i].id.clone()).zip(bg.video_losses));
            step += 1;
        }

        video_losses.sort_by(|a, b| a.0.cmp(&b.0));
        let n_steps = steps_per_epoch as f64;
        let report = LossReport {
            epoch,
            mean_loss: loss_sum / n_steps,
            video_losses,
            grad_norms: params
                .blocks()
                .iter()
                .zip(&norm_sums)
                .map(|((name, _), s)| (*name, s / n_steps))
                .collect(),
            grad_norm: total_norm_sum / n_steps,
            learning_rate: lr,
            clamped,
            wall_time: start.elapsed().as_secs_f64(),
        };
        on_epoch(&report, &params)?;
        history.push(report);
    }
    Ok(TrainOutcome { params, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_clip_bag(values: &[f64], labels: &[usize], c: usize) -> VideoBag {
        VideoBag {
            inputs: vec![ClipInput {
                segment_means: vec![values.to_vec()],
            }],
            target: normalize_labels(&labels.iter().copied().collect(), c).unwrap(),
        }
    }

    const SOFT: LossSpec = LossSpec {
        mode: SelectionMode::Soft,
        k: 1,
    };

    #[test]
    fn label_normalisation_examples() {
        let set = |v: &[usize]| v.iter().copied().collect::<BTreeSet<_>>();
        assert_eq!(normalize_labels(&set(&[2]), 3).unwrap(), vec![0.0, 1.0, 0.0]);
        assert_eq!(normalize_labels(&set(&[1, 2]), 3).unwrap(), vec![0.5, 0.5, 0.0]);
        assert_eq!(normalize_labels(&set(&[1, 2, 3, 4]), 4).unwrap(), vec![0.25; 4]);
        assert!(normalize_labels(&set(&[]), 3).is_err());
        assert!(normalize_labels(&set(&[4]), 3).is_err());
    }

    #[test]
    fn loss_examples() {
        let (l, clamped) = video_loss(&[0.2, 0.5, 0.3], &[0.0, 1.0, 0.0]);
        assert!((l - 0.693_147_180_559_945_3).abs() < 1e-12 && !clamped);
        let (l, _) = video_loss(&[0.25, 0.25, 0.5], &[0.5, 0.5, 0.0]);
        assert!((l - 1.386_294_361_119_890_6).abs() < 1e-12);
        let (l, _) = video_loss(&[1.0 - 1e-12, 1e-12], &[1.0, 0.0]);
        assert!(l > 0.0 && (l - 1e-12).abs() < 1e-15);
        let (l, clamped) = video_loss(&[1.0, 0.0], &[0.0, 1.0]);
        assert!(clamped && (l - 1e12f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn single_clip_soft_gradient_is_residual_outer_feature() {
        let mut p = ModelParams::zeros(3, 2, ExtractorConfig::default(), false);
        p.classifier = vec![0.2, -0.1, 0.4, 0.3, -0.5, 0.1];
        let bag = single_clip_bag(&[1.5, -0.7], &[3], 3);
        let bg = backward(&p, std::slice::from_ref(&bag), SOFT, 0.0).unwrap();
        let z = crate::numeric::matvec(&p.classifier, 3, 2, &[1.5, -0.7]);
        let probs = softmax(&z);
        for k in 0..3 {
            for d in 0..2 {
                let expected = (probs[k] - bag.target[k]) * [1.5, -0.7][d];
                assert!((bg.grad.classifier[k * 2 + d] - expected).abs() < 1e-14);
            }
        }
        // central differences, step 1e-5
        let report = grad_check(&p, &[bag], SOFT, 0.0, 1e-5, false).unwrap();
        assert!(report.max_rel_error() < 1e-5, "{report:?}");
    }

    #[test]
    fn zero_signal_when_prediction_matches_target() {
        let p = ModelParams::zeros(2, 2, ExtractorConfig::default(), false);
        // zero weights → uniform (0.5, 0.5); labels {1, 2} → ȳ = (0.5, 0.5)
        let bag = single_clip_bag(&[0.3, 0.9], &[1, 2], 2);
        let bg = backward(&p, &[bag], SOFT, 0.0).unwrap();
        assert!(bg.grad.classifier.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn selection_gradient_vanishes_for_identical_clip_distributions() {
        let mut p = ModelParams::zeros(2, 2, ExtractorConfig::default(), false);
        // classifier only looks at dimension 0; clips differ only in dimension 1
        p.classifier = vec![1.0, 0.0, -1.0, 0.0];
        p.selection = vec![0.3, 0.8];
        let bag = VideoBag {
            inputs: [[0.4, 1.0], [0.4, -2.0], [0.4, 0.5]]
                .iter()
                .map(|v| ClipInput {
                    segment_means: vec![v.to_vec()],
                })
                .collect(),
            target: vec![0.0, 1.0],
        };
        let bg = backward(&p, &[bag], SOFT, 0.0).unwrap();
        assert!(bg.grad.selection.iter().all(|g| g.abs() < 1e-15), "{:?}", bg.grad.selection);
    }

    #[test]
    fn symmetric_zero_model_gradients_agree() {
        let p = ModelParams::zeros(2, 2, ExtractorConfig::default(), false);
        let bag = VideoBag {
            inputs: [[1.0, -1.0], [-1.0, 1.0]]
                .iter()
                .map(|v| ClipInput {
                    segment_means: vec![v.to_vec()],
                })
                .collect(),
            target: vec![1.0, 0.0],
        };
        let report = grad_check(&p, &[bag.clone()], SOFT, 0.0, 1e-5, false).unwrap();
        let analytic = backward(&p, &[bag], SOFT, 0.0).unwrap().grad;
        assert!(report.max_rel_error() < 1e-5);
        // mean feature is zero, so every classifier partial vanishes
        assert!(analytic.classifier.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn grad_check_random_problems() {
        for mode in [SelectionMode::Soft, SelectionMode::Hard] {
            for (kind, bias, segments) in [
                (ExtractorKind::MeanPool, false, 1),
                (ExtractorKind::MeanPool, true, 2),
                (ExtractorKind::Encoder, true, 2),
            ] {
                let problem = CheckProblem {
                    mode,
                    bias,
                    extractor: ExtractorConfig {
                        kind,
                        hidden: 4,
                        segments,
                    },
                    ..CheckProblem::default()
                };
                for seed in 0..3 {
                    let (p, batch) = random_check_problem(&problem, seed);
                    let spec = LossSpec { mode, k: problem.k };
                    let r = grad_check(&p, &batch, spec, problem.weight_decay, 1e-5, false).unwrap();
                    assert!(r.max_rel_error() < 1e-5, "{mode:?} {kind:?} seed {seed}: {r:?}");
                }
            }
        }
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let (p, batch) = random_check_problem(&CheckProblem::default(), 4);
        let r = grad_check(&p, &batch, SOFT, 0.0005, 1e-5, true).unwrap();
        assert!(r.max_rel_error() > 1e-5);
        assert_eq!(r.worst().unwrap().block, "classifier");
    }

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate_at(0, 30), 0.05);
        assert_eq!(cfg.learning_rate_at(19, 30), 0.05);
        assert!((cfg.learning_rate_at(20, 30) - 0.005).abs() < 1e-15);
        let cfg = TrainConfig {
            lr_decay_period: Some(10),
            ..TrainConfig::default()
        };
        assert!((cfg.learning_rate_at(25, 100) - 0.0005).abs() < 1e-15);
    }

    #[test]
    fn pool_sampling_fills_with_replacement() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let idx = sample_pool_indices(&mut rng, 3, 7);
        assert_eq!(idx.len(), 7);
        assert_eq!(&idx[..3], &[0, 1, 2]);
        assert!(idx.iter().all(|&i| i < 3));
        let idx = sample_pool_indices(&mut rng, 10, 7);
        let unique: BTreeSet<_> = idx.iter().collect();
        assert_eq!(unique.len(), 7);
    }

    #[test]
    fn config_validation_names_key() {
        let bad = TrainConfig {
            momentum: 1.0,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { key, .. }) if key == "train.momentum"));
        assert_eq!(TrainConfig::default().k(), 3);
    }
}
