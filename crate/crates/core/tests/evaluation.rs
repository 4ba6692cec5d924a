use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use untrimmed_core::corpus::{generate_corpus, Frames, SynthSpec};
use untrimmed_core::inference::{
    detect, detection_map, recognition_map, recognize, snippet_track, snippet_tracks, Aggregation, DetectionSegment,
};
use untrimmed_core::model::{ExtractorConfig, ModelParams};

#[test]
fn random_model_scores_at_the_permutation_null() {
    let spec = SynthSpec {
        train_videos: 1,
        test_videos: 100,
        seed: 21,
        ..SynthSpec::default()
    };
    let (_, test) = generate_corpus(&spec).unwrap();
    // untrained weights from an unrelated seed carry no class information
    let params = ModelParams::init(5, 16, ExtractorConfig::default(), false, 999);
    let frames: Vec<&Frames> = test.iter().map(|v| &v.frames).collect();
    let scores: Vec<Vec<f64>> = snippet_tracks(&frames, &params, 30)
        .unwrap()
        .iter()
        .map(|t| recognize(t, Aggregation::TopK, 20))
        .collect();
    let labels: Vec<BTreeSet<usize>> = test.iter().map(|v| v.labels.clone()).collect();
    let refs: Vec<&BTreeSet<usize>> = labels.iter().collect();
    let observed = recognition_map(&scores, &refs, 5).map;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut shuffled = labels.clone();
    let null: Vec<f64> = (0..1000)
        .map(|_| {
            shuffled.shuffle(&mut rng);
            let refs: Vec<&BTreeSet<usize>> = shuffled.iter().collect();
            recognition_map(&scores, &refs, 5).map
        })
        .collect();
    let mean = null.iter().sum::<f64>() / null.len() as f64;
    let sd = (null.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (null.len() - 1) as f64).sqrt();
    assert!(
        (observed - mean).abs() <= 3.0 * sd,
        "observed {observed}, null {mean} ± {sd}"
    );
    // the null itself sits near the class prior
    let prior = (1..=5)
        .map(|c| labels.iter().filter(|l| l.contains(&c)).count() as f64 / labels.len() as f64)
        .sum::<f64>()
        / 5.0;
    assert!((mean - prior).abs() < 0.1, "null mean {mean}, prior {prior}");
}

#[test]
fn ground_truth_echo_is_perfect_at_every_threshold() {
    let (_, test) = generate_corpus(&SynthSpec {
        train_videos: 1,
        test_videos: 40,
        seed: 2,
        ..SynthSpec::default()
    })
    .unwrap();
    let truth: Vec<_> = test.iter().map(|v| v.instances.clone().unwrap()).collect();
    let echo: Vec<Vec<DetectionSegment>> = truth
        .iter()
        .map(|v| {
            v.iter()
                .map(|g| DetectionSegment {
                    class_id: g.class_id,
                    begin: g.begin,
                    end: g.end,
                    score: 0.9,
                })
                .collect()
        })
        .collect();
    for alpha in [0.1, 0.2, 0.3, 0.4, 0.5] {
        assert_eq!(detection_map(&echo, &truth, alpha).map, 1.0);
    }
}

#[test]
fn constant_video_has_uniform_attention_and_identical_snippets() {
    let frames = Frames::new(4, [0.5, -1.0, 2.0, 0.25].repeat(100)).unwrap();
    let mut params = ModelParams::init(3, 4, ExtractorConfig::default(), true, 1);
    params.selection = vec![0.3, -0.2, 0.9, 1.1];
    let track = snippet_track(&frames, &params, 15).unwrap();
    assert_eq!(track.positions.len(), 6);
    assert!(track.attention.iter().all(|&a| a == track.attention[0]));
    assert!(track.class_probs.iter().all(|p| p == &track.class_probs[0]));
    // every position is equally foreground: one run spanning the grid, or nothing
    let dets = detect(&track, 1e-4, 0.0);
    assert_eq!(dets.len(), 3);
    assert!(dets.iter().all(|d| d.begin == 8 && d.end == 97));
}
