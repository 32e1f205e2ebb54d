//! Per-scenario pipeline: render, extract features, cluster, score.

use asncfl_core::acoustics::{generate_scenario, mix_seed, render_node_signal, synth_source_signal, NodeRenderer, Scenario, ScenarioParams};
use asncfl_core::cfl::{run_unsupervised_cfl, CflConfig, ClientData, RoundLog};
use asncfl_core::eval::{evaluate, EvalResult, Outcome, SyntheticLabeler};
use asncfl_core::features::{lmbe_segments_with_hop, AudioClip, MelFilterbank, SAMPLE_RATE};
use asncfl_core::membership::{membership_values, threshold_mvs, MembershipReport};
use asncfl_core::{Autoencoder, FeatureSegment, Result};

use crate::config::RunConfig;

const KEY_UTTERANCE: u64 = 0x5e55_0001;
const KEY_CFL: u64 = 0x5e55_0002;
const KEY_LABELS: u64 = 0x5e55_0003;
const KEY_CORPUS: u64 = 0x5e55_0004;

pub fn scenario_params(c: &RunConfig) -> ScenarioParams {
    ScenarioParams {
        room: c.room,
        t60: c.t60,
        nodes: c.nodes,
        ..ScenarioParams::default()
    }
}

pub fn filterbank(c: &RunConfig) -> Result<MelFilterbank> {
    let n_fft = (c.win_s * SAMPLE_RATE as f64).round() as usize;
    MelFilterbank::new(c.mels, n_fft, SAMPLE_RATE)
}

fn hop(c: &RunConfig) -> usize {
    ((c.hop_s * SAMPLE_RATE as f64).round() as usize).max(1)
}

fn utterance_pair(seed: u64, duration_s: f64) -> Result<(AudioClip, AudioClip)> {
    Ok((synth_source_signal(0, seed, duration_s)?, synth_source_signal(1, seed, duration_s)?))
}

/// Feature segments of every node: each node hears the same utterances,
/// through its own impulse responses.
pub fn client_data(c: &RunConfig, scenario: &Scenario) -> Result<Vec<ClientData>> {
    let fb = filterbank(c)?;
    let len = (c.utterance_s * SAMPLE_RATE as f64).round() as usize;
    let renderer = NodeRenderer::new(scenario, len)?;
    let mut clients: Vec<ClientData> = (0..scenario.nodes.len())
        .map(|id| ClientData { id, segments: Vec::new() })
        .collect();
    for u in 0..c.utterances {
        let (s1, s2) = utterance_pair(mix_seed(scenario.seed, KEY_UTTERANCE, u as u64), c.utterance_s)?;
        for (client, clip) in clients.iter_mut().zip(renderer.render(&s1, &s2)?) {
            for seg in lmbe_segments_with_hop(&clip, &fb, hop(c))? {
                let index = client.segments.len();
                client.segments.push(FeatureSegment::new(seg.values().to_vec(), client.id, index)?);
            }
        }
    }
    Ok(clients)
}

/// Pretraining segments from scenarios and utterances disjoint from the
/// evaluation ones; each draw renders one node of a fresh scenario.
pub fn pretraining_corpus(c: &RunConfig) -> Result<Vec<FeatureSegment>> {
    let fb = filterbank(c)?;
    let params = scenario_params(c);
    let mut corpus = Vec::with_capacity(c.pretrain_segments);
    let mut k = 0u64;
    while corpus.len() < c.pretrain_segments {
        let key = mix_seed(c.seed, KEY_CORPUS, k);
        let scenario = generate_scenario(key, &params)?;
        let (s1, s2) = utterance_pair(key, c.utterance_s)?;
        let node = (k % scenario.nodes.len() as u64) as usize;
        let clip = render_node_signal(&scenario, &s1, &s2, node)?;
        for seg in lmbe_segments_with_hop(&clip, &fb, hop(c))? {
            corpus.push(FeatureSegment::new(seg.values().to_vec(), node, corpus.len())?);
        }
        k += 1;
    }
    corpus.truncate(c.pretrain_segments);
    Ok(corpus)
}

pub fn cfl_config(c: &RunConfig, scenario: &Scenario) -> CflConfig {
    CflConfig {
        thresholds: c.thresholds,
        max_rounds: c.max_rounds,
        lr: c.lr,
        seed: mix_seed(scenario.seed, KEY_CFL, 0),
        recursive: c.recursive,
        parallel: true,
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub log: RoundLog,
    /// Absent when CFL never split.
    pub membership: Option<MembershipReport>,
    pub eval: EvalResult,
}

/// Clusters one scenario with a pretrained model and scores the result.
///
/// Scoring uses the first split: with `recursive` on, later splits refine
/// the clusters but the two top-level groups are what gets matched to the
/// two sources.
pub fn run_scenario(c: &RunConfig, model: &Autoencoder, scenario: &Scenario) -> Result<ScenarioResult> {
    let clients = client_data(c, scenario)?;
    let outcome = run_unsupervised_cfl(&clients, model, &cfl_config(c, scenario))?;
    let labels = SyntheticLabeler {
        max_error: c.labeler_max_error,
    }
    .label(scenario, mix_seed(scenario.seed, KEY_LABELS, 0))?;
    let n = scenario.nodes.len();

    let (clusters, membership) = match outcome.log.splits.first() {
        Some(split) => {
            let [c1, c2] = &split.children;
            let report = membership_values(&split.similarity, c1, c2, c.lambda)?;
            (vec![c1.clone(), c2.clone()], Some(report))
        }
        None => (vec![(0..n).collect()], None),
    };
    let per_node = |r: &MembershipReport| -> Vec<f64> { (0..n).map(|i| r.mu(i).unwrap_or(0.0)).collect() };
    let mu = membership.as_ref().map(per_node).unwrap_or_else(|| vec![1.0; n]);
    let eval = evaluate(
        scenario,
        &Outcome {
            clusters: &clusters,
            mu: &mu,
            labels: &labels,
        },
        &c.v,
        |v| {
            let r = membership.as_ref().expect("thresholds only apply after a split");
            Ok(per_node(&threshold_mvs(r, v)?))
        },
    )?;
    Ok(ScenarioResult {
        log: outcome.log,
        membership,
        eval,
    })
}
