//! Untrimmed descriptor-sequence videos: data model, synthetic generation with
//! planted action instances, and the line-oriented dataset format.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::axpy;

/// Per-frame descriptors of one video, stored row-major (`len × dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    dim: usize,
    data: Vec<f64>,
}

impl Frames {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("descriptor dimension must be at least 1"));
        }
        if data.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        if !crate::numeric::all_finite(&data) {
            return Err(Error::Numeric {
                block: "frames".into(),
            });
        }
        Ok(Frames { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(Error::Dimension {
                what: format!("frame {}", i + 1),
                expected: dim,
                found: r.len(),
            });
        }
        Frames::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of frames `T`.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Descriptor of frame `t`, 1-indexed.
    pub fn frame(&self, t: usize) -> &[f64] {
        let i = t - 1;
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Mean descriptor over the inclusive 1-indexed range `[begin, end]`.
    pub fn mean(&self, begin: usize, end: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for t in begin..=end {
            axpy(&mut acc, 1.0, self.frame(t));
        }
        let inv = 1.0 / (end + 1 - begin) as f64;
        acc.iter_mut().for_each(|v| *v *= inv);
        acc
    }
}

/// An annotated action instance; evaluation only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthInstance {
    #[serde(rename = "class")]
    pub class_id: usize,
    pub begin: usize,
    pub end: usize,
}

/// An untrimmed video with its video-level label set (1-based class indices).
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub frames: Frames,
    pub labels: BTreeSet<usize>,
    pub instances: Option<Vec<GroundTruthInstance>>,
}

impl VideoRecord {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// Checks record invariants. `num_classes` bounds label indices when known.
    pub fn validate(&self, num_classes: Option<usize>) -> std::result::Result<(), String> {
        let t = self.frames.len();
        if t == 0 {
            return Err("video has no frames".into());
        }
        for &l in &self.labels {
            if l == 0 || num_classes.is_some_and(|c| l > c) {
                return Err(format!("label {l} out of range"));
            }
        }
        for inst in self.instances.iter().flatten() {
            if inst.begin < 1 || inst.begin > inst.end || inst.end > t {
                return Err(format!(
                    "instance ({}, {}) outside frames 1..={t}",
                    inst.begin, inst.end
                ));
            }
            if !self.labels.contains(&inst.class_id) {
                return Err(format!(
                    "instance class {} is not among the video labels",
                    inst.class_id
                ));
            }
        }
        Ok(())
    }
}

/// What the training path is allowed to see of a video: frames and labels,
/// never the temporal annotations.
#[derive(Debug, Clone, Copy)]
pub struct WeakVideo<'a> {
    pub id: &'a str,
    pub frames: &'a Frames,
    pub labels: &'a BTreeSet<usize>,
}

impl<'a> From<&'a VideoRecord> for WeakVideo<'a> {
    fn from(v: &'a VideoRecord) -> Self {
        WeakVideo {
            id: &v.id,
            frames: &v.frames,
            labels: &v.labels,
        }
    }
}

pub fn weak_view(corpus: &[VideoRecord]) -> Vec<WeakVideo<'_>> {
    corpus.iter().map(WeakVideo::from).collect()
}

/// Parameters of the synthetic corpus generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub descriptor_dim: usize,
    pub train_videos: usize,
    pub test_videos: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    pub instances_min: usize,
    pub instances_max: usize,
    pub instance_len_min: usize,
    pub instance_len_max: usize,
    /// Distance between class mean vectors, in units of the descriptor scale.
    pub separation: f64,
    /// Norm (in units of σ) of a component shared by every class mean and
    /// absent from background, i.e. how much "some action" stands out.
    pub actionness: f64,
    /// Standard deviation σ of the background noise.
    pub noise_scale: f64,
    /// Lag-one autocorrelation of the noise within a shot, in `[0, 1)`.
    pub noise_correlation: f64,
    /// Probability that an additional instance in a video takes a new class.
    pub multi_label_prob: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_classes: 5,
            descriptor_dim: 16,
            train_videos: 200,
            test_videos: 100,
            frames_min: 300,
            frames_max: 600,
            instances_min: 1,
            instances_max: 2,
            instance_len_min: 60,
            instance_len_max: 120,
            separation: 6.0,
            actionness: 4.0,
            noise_scale: 1.0,
            noise_correlation: 0.99,
            multi_label_prob: 0.3,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let range = |key: &str, lo: usize, hi: usize| {
            if lo > hi {
                Err(Error::config(key, format!("empty range [{lo}, {hi}]")))
            } else {
                Ok(())
            }
        };
        if self.num_classes < 2 {
            return Err(Error::config("synth.num_classes", "need at least 2 classes"));
        }
        if self.descriptor_dim < 1 {
            return Err(Error::config("synth.descriptor_dim", "must be at least 1"));
        }
        if self.frames_min < 1 {
            return Err(Error::config("synth.frames_min", "must be at least 1"));
        }
        range("synth.frames_min", self.frames_min, self.frames_max)?;
        range("synth.instances_min", self.instances_min, self.instances_max)?;
        if self.instance_len_min < 1 {
            return Err(Error::config("synth.instance_len_min", "must be at least 1"));
        }
        range(
            "synth.instance_len_min",
            self.instance_len_min,
            self.instance_len_max,
        )?;
        if self.instance_len_max > self.frames_max {
            return Err(Error::config(
                "synth.instance_len_max",
                "instances cannot be longer than the longest video",
            ));
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::config("synth.noise_scale", "must be positive"));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::config("synth.separation", "must be non-negative"));
        }
        if !(self.actionness >= 0.0 && self.actionness.is_finite()) {
            return Err(Error::config("synth.actionness", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.noise_correlation) {
            return Err(Error::config("synth.noise_correlation", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.multi_label_prob) {
            return Err(Error::config("synth.multi_label_prob", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Class mean vectors: a shared component of norm `actionness·σ` plus a
    /// class-specific part of norm `separation·σ/√2`. When `C < D` all parts
    /// are mutually orthogonal, so every pair of classes lies exactly
    /// `separation·σ` apart.
    pub fn prototypes(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(0);
        let d = self.descriptor_dim;
        let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(self.num_classes + 1);
        while dirs.len() <= self.num_classes {
            let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            if dirs.len() < d {
                for p in &dirs {
                    let proj = crate::numeric::dot(&v, p);
                    axpy(&mut v, -proj, p);
                }
            }
            let norm = crate::numeric::l2_norm(&v);
            if norm < 1e-9 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            dirs.push(v);
        }
        let shared: Vec<f64> = dirs[0].iter().map(|x| x * self.actionness * self.noise_scale).collect();
        let radius = self.separation * self.noise_scale / std::f64::consts::SQRT_2;
        dirs[1..]
            .iter()
            .map(|u| u.iter().zip(&shared).map(|(x, s)| radius * x + s).collect())
            .collect()
    }
}

/// Descriptor values are rounded to this grid so the text format is compact
/// and round-trips exactly.
const QUANTUM: f64 = 1e-3;

fn quantize(x: f64) -> f64 {
    (x / QUANTUM).round() * QUANTUM
}

/// Generates `(train, test)` splits. Training videos without any planted
/// instance carry no label and are dropped from the train split.
pub fn generate_corpus(spec: &SynthSpec) -> Result<(Vec<VideoRecord>, Vec<VideoRecord>)> {
    spec.validate()?;
    let protos = spec.prototypes();
    let mut train_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    train_rng.set_stream(1);
    let mut test_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    test_rng.set_stream(2);

    let train = (0..spec.train_videos)
        .map(|i| synth_video(spec, &protos, format!("train_{i:05}"), &mut train_rng))
        .filter(|v| !v.labels.is_empty())
        .collect();
    let test = (0..spec.test_videos)
        .map(|i| synth_video(spec, &protos, format!("test_{i:05}"), &mut test_rng))
        .collect();
    Ok((train, test))
}

fn synth_video(spec: &SynthSpec, protos: &[Vec<f64>], id: String, rng: &mut ChaCha8Rng) -> VideoRecord {
    let t = rng.random_range(spec.frames_min..=spec.frames_max);
    let wanted = rng.random_range(spec.instances_min..=spec.instances_max);

    // Instance lengths; drop instances until they fit with a one-frame gap between neighbours.
    let mut lengths: Vec<usize> = (0..wanted)
        .map(|_| rng.random_range(spec.instance_len_min..=spec.instance_len_max).min(t))
        .collect();
    while !lengths.is_empty() && lengths.iter().sum::<usize>() + lengths.len() - 1 > t {
        lengths.pop();
    }

    let mut classes = Vec::with_capacity(lengths.len());
    let first = rng.random_range(1..=spec.num_classes);
    for j in 0..lengths.len() {
        let c = if j > 0 && rng.random_bool(spec.multi_label_prob) {
            let others: Vec<usize> = (1..=spec.num_classes).filter(|c| !classes.contains(c)).collect();
            *others.choose(rng).unwrap_or(&first)
        } else {
            first
        };
        classes.push(c);
    }
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);

    // Split the free frames into n+1 gaps; interior gaps get at least one frame.
    let n = lengths.len();
    let mut instances = Vec::with_capacity(n);
    if n > 0 {
        let free = t - lengths.iter().sum::<usize>() - (n - 1);
        let mut cuts: Vec<usize> = (0..n).map(|_| rng.random_range(0..=free)).collect();
        cuts.sort_unstable();
        let mut cursor = 1usize;
        let mut prev_cut = 0usize;
        for (j, &slot) in order.iter().enumerate() {
            cursor += cuts[j] - prev_cut + usize::from(j > 0);
            prev_cut = cuts[j];
            let begin = cursor;
            let end = begin + lengths[slot] - 1;
            instances.push(GroundTruthInstance {
                class_id: classes[slot],
                begin,
                end,
            });
            cursor = end + 1;
        }
    }

    // AR(1) noise, restarted from its stationary law at every instance boundary
    // so each boundary carries a jump in descriptor statistics.
    let d = spec.descriptor_dim;
    let sigma = spec.noise_scale;
    let rho = spec.noise_correlation;
    let innovation = sigma * (1.0 - rho * rho).sqrt();
    let mut boundaries: BTreeSet<usize> = BTreeSet::new();
    for inst in &instances {
        boundaries.insert(inst.begin);
        boundaries.insert(inst.end + 1);
    }
    let mut noise = vec![0.0; d];
    let mut data = Vec::with_capacity(t * d);
    let mut inst_iter = instances.iter().peekable();
    let mut current: Option<&GroundTruthInstance> = None;
    for frame in 1..=t {
        if frame == 1 || boundaries.contains(&frame) {
            for v in noise.iter_mut() {
                *v = sigma * rng.sample::<f64, _>(StandardNormal);
            }
        } else {
            for v in noise.iter_mut() {
                *v = rho * *v + innovation * rng.sample::<f64, _>(StandardNormal);
            }
        }
        if current.is_some_and(|c| frame > c.end) {
            current = None;
        }
        if inst_iter.peek().is_some_and(|c| c.begin == frame) {
            current = inst_iter.next();
        }
        match current {
            Some(inst) => {
                let p = &protos[inst.class_id - 1];
                data.extend(noise.iter().zip(p).map(|(n, m)| quantize(n + m)));
            }
            None => data.extend(noise.iter().map(|&n| quantize(n))),
        }
    }

    let labels = instances.iter().map(|i| i.class_id).collect();
    VideoRecord {
        id,
        frames: Frames { dim: d, data },
        labels,
        instances: Some(instances),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    labels: Vec<usize>,
    frames: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    instances: Option<Vec<GroundTruthInstance>>,
}

/// Writes one JSON object per line with keys in a fixed order.
pub fn save_corpus(corpus: &[VideoRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for v in corpus {
        let line = RecordLine {
            id: v.id.clone(),
            labels: v.labels.iter().copied().collect(),
            frames: v.frames.rows().map(<[f64]>::to_vec).collect(),
            instances: v.instances.clone(),
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| Error::io(path, e.into()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a corpus file. When `num_classes` is given, labels above it are rejected.
/// All records must share one descriptor dimension.
pub fn load_corpus(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<Vec<VideoRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut corpus = Vec::new();
    let mut dim: Option<usize> = None;
    let mut ids = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fail = |video: &str, message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            video: video.to_string(),
            message,
        };
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| fail("?", e.to_string()))?;
        let id = value
            .get("id")
            .and_then(|v| v.as_str())
            .unwrap_or("?")
            .to_string();
        let rec: RecordLine = serde_json::from_value(value).map_err(|e| fail(&id, e.to_string()))?;
        let frames = Frames::from_rows(&rec.frames).map_err(|e| fail(&id, e.to_string()))?;
        if frames.is_empty() {
            return Err(fail(&id, "video has no frames".into()));
        }
        match dim {
            None => dim = Some(frames.dim()),
            Some(d) if d != frames.dim() => {
                return Err(fail(
                    &id,
                    format!("descriptor dimension {} differs from corpus dimension {d}", frames.dim()),
                ))
            }
            Some(_) => {}
        }
        let labels: BTreeSet<usize> = rec.labels.iter().copied().collect();
        if labels.len() != rec.labels.len() {
            return Err(fail(&id, "duplicate label".into()));
        }
        if !ids.insert(rec.id.clone()) {
            return Err(fail(&id, "duplicate video id".into()));
        }
        let record = VideoRecord {
            id: rec.id,
            frames,
            labels,
            instances: rec.instances,
        };
        record.validate(num_classes).map_err(|m| fail(&id, m))?;
        corpus.push(record);
    }
    Ok(corpus)
}

/// Descriptor dimension shared by a corpus, or `None` when empty.
pub fn corpus_dim(corpus: &[VideoRecord]) -> Option<usize> {
    corpus.first().map(|v| v.frames.dim())
}
