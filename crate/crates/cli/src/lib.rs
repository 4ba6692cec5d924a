//! Command implementations behind the `untrimmed` binary.
//!
//! Every command reads a [`RunConfig`], writes its artifacts under
//! `paths.output_dir`, and reports failures as a [`CliError`] whose
//! [`exit_code`](CliError::exit_code) follows the convention
//! 0 = success, 1 = check failure, 2 = usage or configuration error.

pub mod config;
mod report;

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use untrimmed_core::corpus::{corpus_dim, generate_corpus, load_corpus, save_corpus, weak_view, SynthSpec, VideoRecord};
use untrimmed_core::inference::{
    detect, detection_map, recognition_map, recognize, snippet_tracks, DetectionSegment, MapReport, SnippetTrack,
};
use untrimmed_core::model::{load_model, save_model, ExtractorConfig, ModelParams, SelectionMode};
use untrimmed_core::numeric::fmt9;
use untrimmed_core::proposals::ProposalSampler;
use untrimmed_core::training::{grad_check, random_check_problem, train, CheckProblem, LossSpec, TrainError};
use untrimmed_core::Error;

pub use config::RunConfig;
use report::CsvTable;

/// Failure of a command, carrying the process exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad input, configuration, or unusable files: exit 2.
    Usage(String),
    /// The command ran but its check failed (gradient check, divergence): exit 1.
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failed(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Numeric { .. } => CliError::Failed(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Usage(format!("cannot create output directory {}: {e}", dir.display())))
}

#[derive(Serialize)]
struct Manifest<'a> {
    seed: u64,
    train_videos: usize,
    test_videos: usize,
    train_corpus: &'a Path,
    test_corpus: &'a Path,
    synth: &'a SynthSpec,
}

/// Generates the synthetic train/test corpora and a manifest echoing the spec.
pub fn cmd_synth(cfg: &RunConfig) -> CliResult<()> {
    create_dir(&cfg.paths.output_dir)?;
    let (train_set, test_set) = generate_corpus(&cfg.synth)?;
    let train_path = cfg.paths.train_corpus();
    let test_path = cfg.paths.test_corpus();
    save_corpus(&train_set, &train_path)?;
    save_corpus(&test_set, &test_path)?;
    let manifest = Manifest {
        seed: cfg.synth.seed,
        train_videos: train_set.len(),
        test_videos: test_set.len(),
        train_corpus: &train_path,
        test_corpus: &test_path,
        synth: &cfg.synth,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises") + "\n";
    let manifest_path = cfg.paths.output("manifest.json");
    std::fs::write(&manifest_path, text).map_err(|e| Error::Io {
        path: manifest_path.clone(),
        source: e,
    })?;
    println!(
        "wrote {} train and {} test videos to {}",
        train_set.len(),
        test_set.len(),
        cfg.paths.output_dir.display()
    );
    Ok(())
}

/// `<stem>.last_good.json` next to the model path.
pub fn last_good_path(model: &Path) -> PathBuf {
    let stem = model.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
    model.with_file_name(format!("{stem}.last_good.json"))
}

pub fn checkpoint_path(cfg: &RunConfig, epoch: usize) -> PathBuf {
    cfg.paths.output(&format!("checkpoint_epoch_{epoch:04}.json"))
}

/// Trains on the training corpus; writes the model, a per-epoch log, and
/// checkpoints.
pub fn cmd_train(cfg: &RunConfig) -> CliResult<()> {
    let corpus_path = cfg.paths.train_corpus();
    let corpus = load_corpus(&corpus_path, Some(cfg.synth.num_classes))?;
    if corpus.is_empty() {
        return Err(CliError::Usage(format!("training corpus {} is empty", corpus_path.display())));
    }
    create_dir(&cfg.paths.output_dir)?;
    let videos = weak_view(&corpus);
    let sampler = ProposalSampler::resolve(&cfg.sampling, videos.iter().map(|v| v.frames))?;
    let mode = cfg.train.mode;
    let model_path = cfg.paths.model();

    let mut log = CsvTable::new(&["epoch", "mean_loss", "lr", "grad_norm", "wall_time"]);
    let outcome = train(
        &videos,
        cfg.synth.num_classes,
        &sampler,
        cfg.extractor,
        &cfg.train,
        |report, params| {
            println!(
                "epoch {:>4}  loss {}  lr {}  |g| {}",
                report.epoch,
                fmt9(report.mean_loss),
                fmt9(report.learning_rate),
                fmt9(report.grad_norm)
            );
            log.push(vec![
                report.epoch.to_string(),
                fmt9(report.mean_loss),
                fmt9(report.learning_rate),
                fmt9(report.grad_norm),
                format!("{:.6}", report.wall_time),
            ]);
            if cfg.train.checkpoint_every > 0 && report.epoch % cfg.train.checkpoint_every == 0 {
                save_model(checkpoint_path(cfg, report.epoch), params, mode)?;
            }
            Ok(())
        },
    );
    let log_path = cfg.paths.output("train_log.csv");
    match outcome {
        Ok(out) => {
            log.write(&log_path)?;
            save_model(&model_path, &out.params, mode)?;
            println!("model written to {}", model_path.display());
            Ok(())
        }
        Err(TrainError::Setup(e)) => Err(e.into()),
        Err(TrainError::Diverged {
            epoch,
            step,
            reason,
            last_good,
            ..
        }) => {
            log.write(&log_path)?;
            let path = last_good_path(&model_path);
            save_model(&path, &last_good, mode)?;
            Err(CliError::Failed(format!(
                "training diverged at epoch {epoch}, step {step}: {reason}; last good parameters written to {}",
                path.display()
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTask {
    Recognition,
    Detection,
}

/// Loaded model plus the evaluation corpus, with dimensions cross-checked.
struct EvalInputs {
    params: ModelParams,
    mode: SelectionMode,
    corpus: Vec<VideoRecord>,
}

fn load_eval_inputs(cfg: &RunConfig) -> CliResult<EvalInputs> {
    let (params, mode) = load_model(cfg.paths.model())?;
    let corpus_path = cfg.paths.test_corpus();
    let corpus = load_corpus(&corpus_path, Some(params.num_classes))?;
    if let Some(dim) = corpus_dim(&corpus) {
        if dim != params.descriptor_dim {
            return Err(CliError::Usage(format!(
                "dimension mismatch: model expects descriptors of dimension {}, corpus {} has dimension {dim}",
                params.descriptor_dim,
                corpus_path.display()
            )));
        }
    }
    Ok(EvalInputs { params, mode, corpus })
}

fn require_soft(mode: SelectionMode, what: &str) -> CliResult<()> {
    if mode == SelectionMode::Hard {
        return Err(CliError::Usage(format!(
            "{what} needs the attention weights of a soft-selection model; this model was trained with hard selection"
        )));
    }
    Ok(())
}

fn frames_of(corpus: &[VideoRecord]) -> Vec<&untrimmed_core::corpus::Frames> {
    corpus.iter().map(|v| &v.frames).collect()
}

/// Result of `eval`, also printed and written as CSV.
#[derive(Debug, Clone)]
pub enum EvalSummary {
    Recognition(MapReport),
    Detection(Vec<(f64, MapReport)>),
}

pub fn cmd_eval(cfg: &RunConfig, task: EvalTask) -> CliResult<EvalSummary> {
    let inputs = load_eval_inputs(cfg)?;
    create_dir(&cfg.paths.output_dir)?;
    match task {
        EvalTask::Recognition => eval_recognition(cfg, &inputs).map(EvalSummary::Recognition),
        EvalTask::Detection => {
            require_soft(inputs.mode, "detection")?;
            eval_detection(cfg, &inputs).map(EvalSummary::Detection)
        }
    }
}

fn eval_recognition(cfg: &RunConfig, inputs: &EvalInputs) -> CliResult<MapReport> {
    let e = &cfg.eval;
    let c = inputs.params.num_classes;
    let tracks = snippet_tracks(&frames_of(&inputs.corpus), &inputs.params, e.recognition_stride)?;
    let scores: Vec<Vec<f64>> = tracks.iter().map(|t| recognize(t, e.aggregation, e.top_k)).collect();
    let labels: Vec<&BTreeSet<usize>> = inputs.corpus.iter().map(|v| &v.labels).collect();
    let report = recognition_map(&scores, &labels, c);

    let mut table = CsvTable::new(&["video_id", "class", "score"]);
    for (v, s) in inputs.corpus.iter().zip(&scores) {
        for (i, x) in s.iter().enumerate() {
            table.push(vec![v.id.clone(), (i + 1).to_string(), fmt9(*x)]);
        }
    }
    table.write(&cfg.paths.output("recognition_scores.csv"))?;

    let mut ap = CsvTable::new(&["class", "ap", "positives"]);
    for class in &report.per_class {
        println!("class {:>3}  AP {}  ({} positives)", class.class_id, fmt9(class.ap), class.positives);
        ap.push(vec![class.class_id.to_string(), fmt9(class.ap), class.positives.to_string()]);
    }
    ap.push(vec!["mean".into(), fmt9(report.map), labels.len().to_string()]);
    ap.write(&cfg.paths.output("recognition_ap.csv"))?;
    println!("recognition mAP {}", fmt9(report.map));
    Ok(report)
}

fn eval_detection(cfg: &RunConfig, inputs: &EvalInputs) -> CliResult<Vec<(f64, MapReport)>> {
    let e = &cfg.eval;
    let tracks = snippet_tracks(&frames_of(&inputs.corpus), &inputs.params, e.detection_stride)?;
    let detections: Vec<Vec<DetectionSegment>> = tracks
        .iter()
        .map(|t| detect(t, e.attention_threshold, e.score_threshold))
        .collect();
    let truth: Vec<_> = inputs
        .corpus
        .iter()
        .map(|v| v.instances.clone().unwrap_or_default())
        .collect();

    let mut table = CsvTable::new(&["video_id", "class", "begin", "end", "score"]);
    for (v, dets) in inputs.corpus.iter().zip(&detections) {
        for d in dets {
            table.push(vec![
                v.id.clone(),
                d.class_id.to_string(),
                d.begin.to_string(),
                d.end.to_string(),
                fmt9(d.score),
            ]);
        }
    }
    table.write(&cfg.paths.output("detections.csv"))?;

    let mut maps = CsvTable::new(&["alpha", "map"]);
    let mut out = Vec::with_capacity(e.iou_thresholds.len());
    for &alpha in &e.iou_thresholds {
        let report = detection_map(&detections, &truth, alpha);
        println!("detection mAP@{} {}", fmt9(alpha), fmt9(report.map));
        maps.push(vec![fmt9(alpha), fmt9(report.map)]);
        out.push((alpha, report));
    }
    maps.write(&cfg.paths.output("detection_map.csv"))?;
    Ok(out)
}

/// Worst relative error of one parameter block over all check problems.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSummary {
    pub block: &'static str,
    pub max_rel_error: f64,
    pub problem_seed: u64,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Finite-difference check of the analytic gradient on random small
/// problems. Fails (exit 1) when any block exceeds the tolerance.
pub fn cmd_gradcheck(cfg: &RunConfig) -> CliResult<Vec<BlockSummary>> {
    let g = &cfg.gradcheck;
    let problem = CheckProblem {
        num_classes: g.num_classes,
        descriptor_dim: g.descriptor_dim,
        clips: g.clips,
        videos: g.videos,
        extractor: ExtractorConfig {
            hidden: g.hidden,
            ..cfg.extractor
        },
        bias: cfg.train.classifier_bias,
        mode: cfg.train.mode,
        k: g.top_k,
        weight_decay: cfg.train.weight_decay,
    };
    let spec = LossSpec {
        mode: problem.mode,
        k: problem.k,
    };
    let mut summary: Vec<BlockSummary> = Vec::new();
    for i in 0..g.problems as u64 {
        let seed = cfg.seed.wrapping_add(i);
        let (params, batch) = random_check_problem(&problem, seed);
        let report = grad_check(&params, &batch, spec, problem.weight_decay, g.step, g.corrupt)?;
        for b in report.blocks {
            match summary.iter_mut().find(|s| s.block == b.block) {
                Some(s) if s.max_rel_error >= b.max_rel_error => {}
                Some(s) => {
                    *s = BlockSummary {
                        block: b.block,
                        max_rel_error: b.max_rel_error,
                        problem_seed: seed,
                        index: b.worst_index,
                        analytic: b.analytic,
                        numeric: b.numeric,
                    }
                }
                None => summary.push(BlockSummary {
                    block: b.block,
                    max_rel_error: b.max_rel_error,
                    problem_seed: seed,
                    index: b.worst_index,
                    analytic: b.analytic,
                    numeric: b.numeric,
                }),
            }
        }
    }
    let mode = match problem.mode {
        SelectionMode::Soft => "soft",
        SelectionMode::Hard => "hard",
    };
    println!("gradient check: {} problems, {mode} selection, h = {}", g.problems, g.step);
    for s in &summary {
        println!("  {:<16} max relative error {}", s.block, fmt9(s.max_rel_error));
    }
    let worst = summary.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error));
    match worst {
        Some(w) if !(w.max_rel_error < g.tolerance) => Err(CliError::Failed(format!(
            "gradient check failed: block `{}` index {} {} (problem seed {}): analytic {} vs numeric {}, relative error {} >= {}",
            w.block,
            w.index,
            block_coordinates(w.block, w.index, &problem),
            w.problem_seed,
            fmt9(w.analytic),
            fmt9(w.numeric),
            fmt9(w.max_rel_error),
            g.tolerance
        ))),
        _ => Ok(summary),
    }
}

/// Row/column of a flat index into a row-major parameter matrix.
fn block_coordinates(block: &str, index: usize, p: &CheckProblem) -> String {
    let cols = match block {
        "classifier" => p.extractor.feature_dim(p.descriptor_dim),
        "encoder" => p.descriptor_dim,
        _ => return String::new(),
    };
    format!("(row {}, col {})", index / cols + 1, index % cols + 1)
}

/// Number of highest- and lowest-attention frames listed per video.
pub const EXTREMES: usize = 4;

/// Writes the attention track, attention extremes, and proposals of every
/// video in the test corpus.
pub fn cmd_inspect(cfg: &RunConfig) -> CliResult<()> {
    let inputs = load_eval_inputs(cfg)?;
    require_soft(inputs.mode, "inspect")?;
    create_dir(&cfg.paths.output_dir)?;
    let frames = frames_of(&inputs.corpus);
    let tracks = snippet_tracks(&frames, &inputs.params, cfg.eval.detection_stride)?;

    let mut attention = CsvTable::new(&["video_id", "frame", "attention", "top_class", "top_score"]);
    let mut extremes = CsvTable::new(&["video_id", "kind", "rank", "frame", "attention"]);
    for (v, track) in inputs.corpus.iter().zip(&tracks) {
        for (n, &pos) in track.positions.iter().enumerate() {
            let (top, score) = top_class(&track.class_probs[n]);
            attention.push(vec![
                v.id.clone(),
                pos.to_string(),
                fmt9(track.attention[n]),
                top.to_string(),
                fmt9(score),
            ]);
        }
        let (high, low) = attention_extremes(track, EXTREMES);
        for (kind, list) in [("highest", high), ("lowest", low)] {
            for (rank, (frame, a)) in list.into_iter().enumerate() {
                extremes.push(vec![v.id.clone(), kind.into(), (rank + 1).to_string(), frame.to_string(), fmt9(a)]);
            }
        }
    }
    attention.write(&cfg.paths.output("attention.csv"))?;
    extremes.write(&cfg.paths.output("attention_extremes.csv"))?;

    let sampler = ProposalSampler::resolve(&cfg.sampling, frames.iter().copied())?;
    let mut proposals = CsvTable::new(&["video_id", "begin", "end", "source"]);
    for v in &inputs.corpus {
        for (clip, source) in sampler.propose(&v.frames) {
            proposals.push(vec![v.id.clone(), clip.begin.to_string(), clip.end.to_string(), source.to_string()]);
        }
    }
    proposals.write(&cfg.paths.output("proposals.csv"))?;
    println!(
        "inspected {} videos; attention, extremes and proposals written to {}",
        inputs.corpus.len(),
        cfg.paths.output_dir.display()
    );
    Ok(())
}

/// 1-based arg-max class and its probability (first maximum on ties).
fn top_class(probs: &[f64]) -> (usize, f64) {
    probs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i + 1, p) } else { best })
}

/// The `n` highest- and `n` lowest-attention positions as `(frame, weight)`,
/// ties resolved by frame order.
pub fn attention_extremes(track: &SnippetTrack, n: usize) -> (Vec<(usize, f64)>, Vec<(usize, f64)>) {
    let mut pairs: Vec<(usize, f64)> = track.positions.iter().copied().zip(track.attention.iter().copied()).collect();
    pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let high = pairs.iter().take(n).copied().collect();
    pairs.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let low = pairs.iter().take(n).copied().collect();
    (high, low)
}

/// Runs `f` with the worker count capped at `threads` (0 = all cores).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {threads} worker threads: {e}")))?;
        Ok(pool.install(f))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        Ok(f())
    }
}
