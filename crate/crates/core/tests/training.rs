use std::collections::BTreeSet;

use untrimmed_core::corpus::{generate_corpus, weak_view, Frames, SynthSpec, VideoRecord};
use untrimmed_core::model::{ExtractorConfig, ExtractorKind, ModelParams, SelectionMode};
use untrimmed_core::proposals::{ProposalSampler, SamplingConfig, SamplingMethod};
use untrimmed_core::training::{
    backward, batch_loss, random_check_problem, train, CheckProblem, LossReport, LossSpec, TrainConfig, TrainOutcome,
};

fn uniform_sampler(n: usize) -> ProposalSampler {
    ProposalSampler {
        method: SamplingMethod::Uniform,
        proposals: n,
        shot_threshold: 1.0,
        clip_length: 300,
        trimmed: false,
    }
}

fn small_corpus(seed: u64) -> Vec<VideoRecord> {
    let spec = SynthSpec {
        train_videos: 24,
        test_videos: 1,
        seed,
        ..SynthSpec::default()
    };
    generate_corpus(&spec).unwrap().0
}

fn run(corpus: &[VideoRecord], sampler: &ProposalSampler, extractor: ExtractorConfig, cfg: &TrainConfig) -> TrainOutcome {
    train(&weak_view(corpus), 5, sampler, extractor, cfg, |_, _| Ok(())).unwrap()
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let corpus = small_corpus(1);
    let cfg = TrainConfig {
        learning_rate: 0.0,
        epochs: 5,
        seed: 7,
        ..TrainConfig::default()
    };
    let extractor = ExtractorConfig {
        kind: ExtractorKind::Encoder,
        hidden: 6,
        segments: 2,
    };
    let out = run(&corpus, &uniform_sampler(5), extractor, &cfg);
    assert_eq!(out.params, ModelParams::init(5, 16, extractor, false, 7));
    assert_eq!(out.history.len(), 5);
}

#[test]
fn small_steps_decrease_the_loss_monotonically() {
    // One video whose whole proposal pool is used every epoch, so the
    // objective is the same function of the parameters at every step.
    let corpus: Vec<VideoRecord> = small_corpus(2).into_iter().take(1).collect();
    let cfg = TrainConfig {
        learning_rate: 0.01,
        lr_decay_factor: 1.0,
        epochs: 60,
        batch_size: 1,
        ..TrainConfig::default()
    };
    let out = run(&corpus, &uniform_sampler(7), ExtractorConfig::default(), &cfg);
    let losses: Vec<f64> = out.history.iter().map(|r| r.mean_loss).collect();
    for (e, w) in losses.windows(2).enumerate() {
        assert!(w[1] <= w[0] + 1e-6, "epoch {}: {} -> {}", e + 2, w[0], w[1]);
    }
    assert!(losses[59] < losses[0]);
}

fn strip_time(h: &[LossReport]) -> Vec<LossReport> {
    h.iter()
        .map(|r| LossReport {
            wall_time: 0.0,
            ..r.clone()
        })
        .collect()
}

#[test]
fn training_is_deterministic() {
    let corpus = small_corpus(3);
    let sampler = ProposalSampler::resolve(&SamplingConfig::default(), corpus.iter().map(|v| &v.frames)).unwrap();
    for mode in [SelectionMode::Soft, SelectionMode::Hard] {
        let cfg = TrainConfig {
            mode,
            epochs: 8,
            batch_size: 5,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = run(&corpus, &sampler, ExtractorConfig::default(), &cfg);
        let b = run(&corpus, &sampler, ExtractorConfig::default(), &cfg);
        assert_eq!(a.params, b.params);
        assert_eq!(strip_time(&a.history), strip_time(&b.history));
        let c = run(&corpus, &sampler, ExtractorConfig::default(), &TrainConfig { seed: 12, ..cfg });
        assert_ne!(a.params, c.params);
    }
}

#[test]
fn weight_decay_follows_the_closed_form() {
    // All-zero descriptors make every data gradient vanish, leaving
    // v ← μv − ηλθ, θ ← θ + v: a linear recurrence
    // θ_{t+1} = (1 + μ − ηλ) θ_t − μ θ_{t−1} with θ_1 = (1 − ηλ) θ_0.
    let zeros = Frames::new(16, vec![0.0; 16 * 40]).unwrap();
    let corpus: Vec<VideoRecord> = (0..3)
        .map(|i| VideoRecord {
            id: format!("v{i}"),
            frames: zeros.clone(),
            labels: BTreeSet::from([i + 1]),
            instances: None,
        })
        .collect();
    let cfg = TrainConfig {
        epochs: 25,
        batch_size: 3,
        lr_decay_factor: 1.0,
        weight_decay: 0.001,
        learning_rate: 0.5,
        seed: 4,
        ..TrainConfig::default()
    };
    let out = run(&corpus, &uniform_sampler(4), ExtractorConfig::default(), &cfg);
    let (eta, lambda, mu) = (cfg.learning_rate, cfg.weight_decay, cfg.momentum);
    let a = 1.0 + mu - eta * lambda;
    // real roots while (1 + μ − ηλ)² > 4μ
    let disc = (a * a - 4.0 * mu).sqrt();
    let (r1, r2) = ((a + disc) / 2.0, (a - disc) / 2.0);
    let t = cfg.epochs as i32;
    // θ_t = A r1^t + B r2^t with A + B = 1 and A r1 + B r2 = 1 − ηλ (per unit θ_0)
    let b = (r1 - (1.0 - eta * lambda)) / (r1 - r2);
    let factor = (1.0 - b) * r1.powi(t) + b * r2.powi(t);
    let init = ModelParams::init(5, 16, ExtractorConfig::default(), false, 4);
    for (got, start) in out.params.classifier.iter().zip(&init.classifier) {
        assert!((got - start * factor).abs() <= 1e-12 * start.abs().max(1e-300), "{got} vs {}", start * factor);
    }
    assert!(factor < 1.0 && factor > 0.0);
}

#[test]
fn a_small_enough_step_decreases_each_video_loss() {
    for seed in 0..10 {
        let problem = CheckProblem {
            videos: 1,
            weight_decay: 0.0,
            ..CheckProblem::default()
        };
        let (params, batch) = random_check_problem(&problem, seed);
        let spec = LossSpec {
            mode: SelectionMode::Soft,
            k: 2,
        };
        let before = batch_loss(&params, &batch, spec, 0.0).unwrap();
        let grad = backward(&params, &batch, spec, 0.0).unwrap().grad;
        let decreased = (1..=8).map(|p| 10f64.powi(-p)).any(|eta| {
            let mut next = params.clone();
            for ((_, theta), (_, g)) in next.blocks_mut().into_iter().zip(grad.blocks()) {
                theta.iter_mut().zip(g).for_each(|(t, g)| *t -= eta * g);
            }
            batch_loss(&next, &batch, spec, 0.0).unwrap() < before
        });
        assert!(decreased, "seed {seed}: no decreasing step found");
    }
}

#[test]
fn batch_loss_ignores_video_order() {
    let (params, mut batch) = random_check_problem(
        &CheckProblem {
            videos: 5,
            ..CheckProblem::default()
        },
        3,
    );
    let spec = LossSpec {
        mode: SelectionMode::Soft,
        k: 2,
    };
    let a = batch_loss(&params, &batch, spec, 0.0005).unwrap();
    batch.reverse();
    let b = batch_loss(&params, &batch, spec, 0.0005).unwrap();
    assert!((a - b).abs() < 1e-14);
}

#[test]
fn losses_are_finite_and_non_negative() {
    let corpus = small_corpus(5);
    let cfg = TrainConfig {
        epochs: 5,
        ..TrainConfig::default()
    };
    let out = run(&corpus, &uniform_sampler(6), ExtractorConfig::default(), &cfg);
    for r in &out.history {
        assert!(r.mean_loss.is_finite() && r.mean_loss >= 0.0);
        assert!(r.video_losses.iter().all(|(_, l)| l.is_finite() && *l >= 0.0));
        assert_eq!(r.video_losses.len(), corpus.len());
        assert!(r.grad_norms.iter().all(|(_, g)| g.is_finite()));
    }
}
