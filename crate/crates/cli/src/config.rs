//! Run configuration: one TOML file, dotted-key overrides from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use untrimmed_core::corpus::SynthSpec;
use untrimmed_core::inference::EvalConfig;
use untrimmed_core::model::ExtractorConfig;
use untrimmed_core::proposals::SamplingConfig;
use untrimmed_core::training::TrainConfig;
use untrimmed_core::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/train.jsonl`.
    pub train_corpus: Option<PathBuf>,
    /// Defaults to `<output_dir>/test.jsonl`.
    pub test_corpus: Option<PathBuf>,
    /// Defaults to `<output_dir>/model.json`.
    pub model: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            output_dir: PathBuf::from("run"),
            train_corpus: None,
            test_corpus: None,
            model: None,
        }
    }
}

impl Paths {
    pub fn train_corpus(&self) -> PathBuf {
        self.train_corpus.clone().unwrap_or_else(|| self.output_dir.join("train.jsonl"))
    }

    pub fn test_corpus(&self) -> PathBuf {
        self.test_corpus.clone().unwrap_or_else(|| self.output_dir.join("test.jsonl"))
    }

    pub fn model(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.output_dir.join("model.json"))
    }

    pub fn output(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    /// Number of random problems, seeded `seed, seed+1, …`.
    pub problems: usize,
    pub step: f64,
    pub tolerance: f64,
    pub num_classes: usize,
    pub descriptor_dim: usize,
    pub clips: usize,
    pub videos: usize,
    /// Encoder width of the check problems (used when `extractor.kind = "encoder"`).
    pub hidden: usize,
    /// Hard-selection `k` for the check problems.
    pub top_k: usize,
    /// Test hook: perturb the analytic gradient so the check must fail.
    pub corrupt: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            problems: 20,
            step: 1e-5,
            tolerance: 1e-5,
            num_classes: 3,
            descriptor_dim: 5,
            clips: 4,
            videos: 3,
            hidden: 4,
            top_k: 2,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every available core, 1 is fully serial.
    pub threads: usize,
    pub paths: Paths,
    pub synth: SynthSpec,
    pub sampling: SamplingConfig,
    pub extractor: ExtractorConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub gradcheck: GradcheckConfig,
}

impl RunConfig {
    /// Reads `path` (if any), applies `key=value` overrides in order, and
    /// validates every section.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, Error> {
        let mut root = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                    path: p.to_path_buf(),
                    source: e,
                })?;
                text.parse::<toml::Table>()
                    .map_err(|e| config_error("config", format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| config_error(error_key(&e), e.message().to_string()))?;
        cfg.propagate_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn propagate_seed(&mut self) {
        self.synth.seed = self.seed;
        self.train.seed = self.seed;
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.synth.validate()?;
        self.sampling.validate()?;
        self.extractor.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        let g = &self.gradcheck;
        if !(g.step > 0.0) {
            return Err(config_error("gradcheck.step", "must be positive"));
        }
        if !(g.tolerance > 0.0) {
            return Err(config_error("gradcheck.tolerance", "must be positive"));
        }
        if g.num_classes < 2 || g.descriptor_dim < 1 || g.clips < 1 || g.videos < 1 || g.hidden < 1 {
            return Err(config_error("gradcheck", "problem dimensions must be positive (num_classes >= 2)"));
        }
        if g.top_k < 1 || g.top_k > g.clips {
            return Err(config_error("gradcheck.top_k", format!("must lie in [1, {}]", g.clips)));
        }
        Ok(())
    }
}

fn config_error(key: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

/// Best-effort name of the key a deserialisation error is about.
fn error_key(e: &toml::de::Error) -> String {
    let msg = e.message();
    // "unknown field `foo`, expected ..." / "invalid type: ..., for key `a.b`"
    if let Some(start) = msg.find('`') {
        if let Some(len) = msg[start + 1..].find('`') {
            return msg[start + 1..start + 1 + len].to_string();
        }
    }
    "config".to_string()
}

/// Sets `a.b.c = value`, creating intermediate tables. The value is parsed
/// as a TOML literal and taken as a bare string when that fails.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), Error> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_error(assignment, "override must look like key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(config_error(key, "malformed key"));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut table = root;
    for (i, part) in parts.iter().enumerate() {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| config_error(parts[..=i].join("."), "is not a table"))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = RunConfig::load(None, &[]).unwrap();
        assert_eq!(cfg, {
            let mut d = RunConfig::default();
            d.propagate_seed();
            d
        });
        assert_eq!(cfg.train.proposals_per_video, 7);
        assert_eq!(cfg.eval.detection_stride, 15);
        assert_eq!(cfg.sampling.clip_length, 300);
    }

    #[test]
    fn overrides_apply_in_order() {
        let cfg = RunConfig::load(
            None,
            &[
                "train.epochs=3".into(),
                "train.mode=hard".into(),
                "seed=42".into(),
                "paths.output_dir=/tmp/x".into(),
                "eval.iou_thresholds=[0.5]".into(),
                "train.epochs=4".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 4);
        assert_eq!(cfg.train.mode, untrimmed_core::model::SelectionMode::Hard);
        assert_eq!(cfg.synth.seed, 42);
        assert_eq!(cfg.train.seed, 42);
        assert_eq!(cfg.paths.output_dir, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.eval.iou_thresholds, vec![0.5]);
    }

    #[test]
    fn invalid_values_name_their_key() {
        let err = RunConfig::load(None, &["synth.frames_min=900".into()]).unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "synth.frames_min"), "{err}");
        let err = RunConfig::load(None, &["train.nonsense=1".into()]).unwrap_err();
        assert!(err.to_string().contains("nonsense"), "{err}");
        assert!(RunConfig::load(None, &["novalue".into()]).is_err());
    }

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 5\n[train]\nepochs = 9\nbatch_size = 4\n").unwrap();
        let cfg = RunConfig::load(Some(&path), &["train.batch_size=2".into()]).unwrap();
        assert_eq!((cfg.seed, cfg.train.epochs, cfg.train.batch_size), (5, 9, 2));
    }
}
