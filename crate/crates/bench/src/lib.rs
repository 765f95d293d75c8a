//! Deterministic inputs shared by the benchmarks.

use forgery_kit::challenge_eval::{GroundTruthSet, PredictionRecord};
use forgery_kit::fixtures::fixture_image;
use forgery_kit::Image;

/// `n` predictions with alternating labels and spread-out scores.
pub fn submission(n: usize) -> (Vec<PredictionRecord>, GroundTruthSet) {
    let preds = (0..n)
        .map(|i| PredictionRecord::new(format!("vid_{i:05}"), ((i * 7919) % 1000) as f64 / 1000.0))
        .collect();
    let truth = GroundTruthSet::new((0..n).map(|i| (format!("vid_{i:05}"), (i % 2) as u8))).expect("unique ids");
    (preds, truth)
}

/// `n` face-sized crops of the natural-image fixture.
pub fn faces(n: usize, size: usize) -> Vec<Image> {
    (0..n).map(|i| fixture_image(size, i as u64)).collect()
}
