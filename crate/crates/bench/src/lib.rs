//! Shared fixtures for the benchmarks.

use asncfl_core::acoustics::{generate_scenario, synth_source_signal, NodeRenderer, ScenarioParams};
use asncfl_core::features::{default_filterbank, lmbe_segments, AudioClip};
use asncfl_core::{FeatureSegment, ParamVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` random update vectors of length `len`.
pub fn random_updates(n: usize, len: usize, seed: u64) -> Vec<ParamVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| ParamVector::new((0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("finite"))
        .collect()
}

/// One 10 s utterance pair of the default scenario.
pub fn utterances(seed: u64) -> (AudioClip, AudioClip) {
    (
        synth_source_signal(0, seed, 10.0).expect("valid duration"),
        synth_source_signal(1, seed, 10.0).expect("valid duration"),
    )
}

/// Feature segments of node 0 for one utterance pair.
pub fn node_segments(seed: u64) -> Vec<FeatureSegment> {
    let scenario = generate_scenario(seed, &ScenarioParams::default()).expect("default scenario");
    let (s1, s2) = utterances(seed);
    let r = NodeRenderer::new(&scenario, s1.len()).expect("renderer");
    let clips = r.render(&s1, &s2).expect("render");
    lmbe_segments(&clips[0], &default_filterbank()).expect("10 s is long enough")
}
