//! Synthesise the default corpus, train a soft-selection model and a
//! uniform-attention baseline, and report recognition and detection quality.
//!
//! cargo run --release -p untrimmed-core --example end_to_end [seed]

use std::time::Instant;

use untrimmed_core::corpus::{generate_corpus, weak_view, SynthSpec};
use untrimmed_core::inference::{
    detect, detection_map, recognition_map, recognize, snippet_tracks, Aggregation, EvalConfig,
};
use untrimmed_core::model::ExtractorConfig;
use untrimmed_core::proposals::{ProposalSampler, SamplingConfig};
use untrimmed_core::training::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map_or(Ok(0), |s| s.parse())?;
    let spec = SynthSpec {
        seed,
        ..SynthSpec::default()
    };
    let t0 = Instant::now();
    let (train_set, test_set) = generate_corpus(&spec)?;
    println!("corpus: {} train / {} test in {:.2?}", train_set.len(), test_set.len(), t0.elapsed());

    let weak = weak_view(&train_set);
    let sampler = ProposalSampler::resolve(&SamplingConfig::default(), weak.iter().map(|v| v.frames))?;
    let pool: usize = weak.iter().map(|v| sampler.propose(v.frames).len()).sum();
    println!(
        "shot threshold {:.4}, mean proposals/video {:.1}",
        sampler.shot_threshold,
        pool as f64 / weak.len() as f64
    );

    let eval = EvalConfig::default();
    for (name, frozen) in [("soft", false), ("uniform", true)] {
        let cfg = TrainConfig {
            seed,
            freeze_selection: frozen,
            ..TrainConfig::default()
        };
        let t = Instant::now();
        let out = train(&weak, spec.num_classes, &sampler, ExtractorConfig::default(), &cfg, |_, _| Ok(()))?;
        let first = out.history.first().map_or(f64::NAN, |r| r.mean_loss);
        let last = out.history.last().map_or(f64::NAN, |r| r.mean_loss);
        println!("[{name}] trained in {:.2?}: loss {first:.4} -> {last:.4}", t.elapsed());

        let frames: Vec<_> = test_set.iter().map(|v| &v.frames).collect();
        let rec_tracks = snippet_tracks(&frames, &out.params, eval.recognition_stride)?;
        let scores: Vec<Vec<f64>> = rec_tracks
            .iter()
            .map(|t| recognize(t, Aggregation::WeightedSum, eval.top_k))
            .collect();
        let labels: Vec<_> = test_set.iter().map(|v| &v.labels).collect();
        let rec = recognition_map(&scores, &labels, spec.num_classes);
        let topk: Vec<Vec<f64>> = rec_tracks.iter().map(|t| recognize(t, Aggregation::TopK, eval.top_k)).collect();
        let rec_topk = recognition_map(&topk, &labels, spec.num_classes);
        println!("[{name}] recognition mAP weighted {:.4}, top-k {:.4}", rec.map, rec_topk.map);

        let det_tracks = snippet_tracks(&frames, &out.params, eval.detection_stride)?;
        let dets: Vec<_> = det_tracks
            .iter()
            .map(|t| detect(t, eval.attention_threshold, eval.score_threshold))
            .collect();
        let truth: Vec<_> = test_set.iter().map(|v| v.instances.clone().unwrap_or_default()).collect();
        for alpha in &eval.iou_thresholds {
            print!(" {alpha}:{:.3}", detection_map(&dets, &truth, *alpha).map);
        }
        println!();

        let mut better = 0;
        let mut counted = 0;
        for (track, v) in det_tracks.iter().zip(&test_set) {
            let insts = v.instances.as_deref().unwrap_or_default();
            let inside = |p: usize| insts.iter().any(|g| g.begin <= p && p <= g.end);
            let (mut fi, mut ni, mut fb, mut nb) = (0.0, 0, 0.0, 0);
            for (&p, &a) in track.positions.iter().zip(&track.attention) {
                if inside(p) {
                    fi += a;
                    ni += 1;
                } else {
                    fb += a;
                    nb += 1;
                }
            }
            if ni > 0 && nb > 0 {
                counted += 1;
                if fi / ni as f64 > fb / nb as f64 {
                    better += 1;
                }
            }
        }
        println!("[{name}] attention favours instances in {better}/{counted} videos");
    }
    Ok(())
}
