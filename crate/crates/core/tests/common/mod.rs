//! Brute-force reference implementations. Each one recomputes a quantity the
//! slow, obvious way, independent of the library code it is compared against.

#![allow(dead_code)]

use std::collections::BTreeSet;

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..n).filter(|i| m >> i & 1 == 1).collect::<Vec<_>>())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Per class, the `k`-subset of clips maximising the summed raw score;
/// among exact maximisers the lexicographically smallest index set.
pub fn brute_force_top_k(raw: &[Vec<f64>], k: usize) -> Vec<Vec<usize>> {
    let n = raw.len();
    let classes = raw[0].len();
    let all = subsets(n, k);
    (0..classes)
        .map(|i| {
            let mut best: Option<(f64, &Vec<usize>)> = None;
            for s in &all {
                let sum: f64 = s.iter().map(|&j| raw[j][i]).sum();
                if best.is_none_or(|(b, _)| sum > b) {
                    best = Some((sum, s));
                }
            }
            best.unwrap().1.clone()
        })
        .collect()
}

/// Average precision as the area under the step precision/recall curve:
/// `Σ_r P(r) · (R(r) − R(r−1))`, each precision counted from scratch.
/// `ranked` is already in rank order.
pub fn brute_force_ap(ranked: &[bool], num_positives: usize) -> f64 {
    if num_positives == 0 {
        return 0.0;
    }
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for r in 1..=ranked.len() {
        let hits = ranked[..r].iter().filter(|&&p| p).count();
        let precision = hits as f64 / r as f64;
        let recall = hits as f64 / num_positives as f64;
        area += precision * (recall - prev_recall);
        prev_recall = recall;
    }
    area
}

/// Temporal IoU by enumerating the frames of both intervals.
pub fn counted_iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let fa: BTreeSet<usize> = (a.0..=a.1).collect();
    let fb: BTreeSet<usize> = (b.0..=b.1).collect();
    let inter = fa.intersection(&fb).count();
    let union = fa.union(&fb).count();
    inter as f64 / union as f64
}

/// `exp` normalised by its sum, with no max-shift: a second, naive softmax.
pub fn naive_softmax(x: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = x.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}
