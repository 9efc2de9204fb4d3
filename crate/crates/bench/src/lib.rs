//! Shared fixtures for the benchmarks.

use hedkit::corpus::{generate, utterance_features, SynthSpec};
use hedkit::ranker::train_all;
use hedkit::{CorpusItem, RankTrainConfig, RankerBundle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn corpus(n_items: usize, synth_audio: bool) -> Vec<CorpusItem> {
    generate(&SynthSpec {
        seed: 7,
        n_items,
        synth_audio,
        ..Default::default()
    })
    .expect("default spec is valid")
}

pub fn rankers(items: &[CorpusItem]) -> RankerBundle {
    let data = utterance_features(items).expect("generated items analyse");
    train_all(&data, &SynthSpec::default().emotions, &RankTrainConfig::default()).expect("training succeeds")
}

pub fn cost_matrix(rows: usize, cols: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(0.0..1.0)).collect()).collect()
}

pub fn vector(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_deterministic() {
        assert_eq!(cost_matrix(3, 4, 1), cost_matrix(3, 4, 1));
        assert_eq!(corpus(3, false), corpus(3, false));
    }
}
