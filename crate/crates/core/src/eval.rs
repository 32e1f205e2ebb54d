//! Scoring of a clustering outcome.
//!
//! Geometry: each cluster gets a membership-weighted centroid, and its
//! distance to either source is normalized by the source spacing. Node
//! level: the fraction of nodes whose cluster matches their dominant source.
//! Downstream: node-wise class predictions are fused per cluster, either by
//! majority vote or weighted by membership values, and compared with the
//! cluster's ground-truth class.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acoustics::{distance, dominant_sources, mix_seed, Position, Scenario};
use crate::error::{Error, Result};

pub const EVAL_SCHEMA_VERSION: u32 = 1;

/// Assignment accuracy credited when CFL never split (chance level).
pub const SINGLE_CLUSTER_ACCURACY: f64 = 0.5;

/// `sum mu_i p_i / sum mu_i`.
pub fn mv_weighted_centroid(positions: &[Position], mu: &[f64]) -> Result<Position> {
    if positions.len() != mu.len() {
        return Err(Error::LengthMismatch {
            expected: positions.len(),
            actual: mu.len(),
        });
    }
    if mu.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(Error::InvalidArgument("membership weights must be finite and >= 0".into()));
    }
    let total: f64 = mu.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("all membership weights are zero".into()));
    }
    let mut c = [0.0; 3];
    for (p, m) in positions.iter().zip(mu) {
        for k in 0..3 {
            c[k] += m * p[k];
        }
    }
    Ok(c.map(|v| v / total))
}

/// Distance from `centroid` to `source`, in units of the source spacing.
pub fn normalized_cluster_distance(centroid: &Position, source: &Position, s1: &Position, s2: &Position) -> Result<f64> {
    let spacing = distance(s1, s2);
    if !(spacing > 0.0) {
        return Err(Error::InvalidArgument("sources coincide".into()));
    }
    Ok(distance(centroid, source) / spacing)
}

/// Cluster index matched to each source: identity unless swapping the two
/// clusters assigns strictly more nodes correctly.
fn best_matching(clusters: &[Vec<usize>], truth: &[usize]) -> Result<([usize; 2], f64)> {
    if clusters.len() != 2 {
        return Err(Error::InvalidArgument(format!("expected 2 clusters, got {}", clusters.len())));
    }
    let total: usize = clusters.iter().map(Vec::len).sum();
    if total != truth.len() || total == 0 {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            actual: total,
        });
    }
    let mut seen = vec![false; truth.len()];
    for &n in clusters.iter().flatten() {
        if n >= truth.len() || std::mem::replace(&mut seen[n], true) {
            return Err(Error::InvalidArgument(format!("node {n} is out of range or repeated")));
        }
    }
    let hits = |map: [usize; 2]| -> usize {
        (0..2).map(|c| clusters[c].iter().filter(|&&n| truth[n] == map[c]).count()).sum()
    };
    let (straight, crossed) = (hits([0, 1]), hits([1, 0]));
    let acc = |h: usize| h as f64 / total as f64;
    if crossed > straight {
        Ok(([1, 0], acc(crossed)))
    } else {
        Ok(([0, 1], acc(straight)))
    }
}

/// Fraction of nodes in the cluster matched to their dominant source, under
/// the better of the two cluster-to-source bijections.
pub fn assignment_accuracy(clusters: &[Vec<usize>], truth: &[usize]) -> Result<f64> {
    best_matching(clusters, truth).map(|(_, a)| a)
}

/// A node's downstream prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeLabel {
    pub class: u8,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionMode {
    /// Majority vote, ties to class 0.
    Plain,
    /// Membership-weighted mean of the labels, class 1 from 0.5 up.
    MvWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusedLabel {
    pub class: u8,
    /// Every weight in the cluster was zero, so the majority vote was used.
    pub fallback: bool,
}

/// One predicted class per cluster. `labels` and `mu` are indexed by node;
/// `mu` is expected to be thresholded already.
pub fn fuse_node_labels(labels: &[NodeLabel], clusters: &[Vec<usize>], mu: &[f64], mode: FusionMode) -> Result<Vec<FusedLabel>> {
    if labels.len() != mu.len() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            actual: mu.len(),
        });
    }
    if labels.iter().any(|l| l.class > 1) {
        return Err(Error::InvalidArgument("labels must be binary".into()));
    }
    let majority = |c: &[usize]| -> u8 {
        let ones = c.iter().filter(|&&n| labels[n].class == 1).count();
        (2 * ones > c.len()) as u8
    };
    clusters
        .iter()
        .map(|c| {
            if c.is_empty() {
                return Err(Error::Empty("cluster"));
            }
            if let Some(&n) = c.iter().find(|&&n| n >= labels.len()) {
                return Err(Error::InvalidArgument(format!("node {n} has no label")));
            }
            Ok(match mode {
                FusionMode::Plain => FusedLabel {
                    class: majority(c),
                    fallback: false,
                },
                FusionMode::MvWeighted => {
                    let total: f64 = c.iter().map(|&n| mu[n]).sum();
                    if total > 0.0 {
                        let ones: f64 = c.iter().map(|&n| mu[n] * labels[n].class as f64).sum();
                        FusedLabel {
                            class: (ones / total >= 0.5) as u8,
                            fallback: false,
                        }
                    } else {
                        FusedLabel {
                            class: majority(c),
                            fallback: true,
                        }
                    }
                }
            })
        })
        .collect()
}

/// Mode of the ground-truth classes of a cluster's nodes, ties to class 0.
pub fn cluster_truth(cluster: &[usize], truth: &[usize]) -> u8 {
    let ones = cluster.iter().filter(|&&n| truth[n] == 1).count();
    (2 * ones > cluster.len()) as u8
}

/// `(predicted, true)` class of one cluster.
pub type ClusterOutcome = (u8, u8);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionScore {
    pub accuracy: f64,
    pub f1: f64,
}

/// Accuracy and F1 (class 1 positive) per scenario, averaged over
/// scenarios. A scenario with no positives at all, predicted or true, has
/// nothing to get wrong and scores F1 = 1.
pub fn score_fusion(scenarios: &[Vec<ClusterOutcome>]) -> Result<FusionScore> {
    if scenarios.is_empty() {
        return Err(Error::Empty("scenarios"));
    }
    let mut acc = 0.0;
    let mut f1 = 0.0;
    for s in scenarios {
        if s.is_empty() {
            return Err(Error::Empty("cluster predictions"));
        }
        let correct = s.iter().filter(|(p, t)| p == t).count();
        acc += correct as f64 / s.len() as f64;
        let tp = s.iter().filter(|&&(p, t)| p == 1 && t == 1).count() as f64;
        let fp = s.iter().filter(|&&(p, t)| p == 1 && t == 0).count() as f64;
        let fneg = s.iter().filter(|&&(p, t)| p == 0 && t == 1).count() as f64;
        f1 += if tp + fp + fneg == 0.0 { 1.0 } else { 2.0 * tp / (2.0 * tp + fp + fneg) };
    }
    let n = scenarios.len() as f64;
    Ok(FusionScore {
        accuracy: acc / n,
        f1: f1 / n,
    })
}

/// Stand-in for a per-node classifier: a node reports the class of its
/// dominant source, flipped with probability `max_error * (d_own / d_other)`.
/// Nodes close to their source are nearly always right, nodes halfway
/// between the sources are at chance when `max_error` is 0.5.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLabeler {
    pub max_error: f64,
}

impl Default for SyntheticLabeler {
    fn default() -> Self {
        Self { max_error: 0.5 }
    }
}

impl SyntheticLabeler {
    pub fn error_probability(&self, scenario: &Scenario, node: usize, dominant: usize) -> f64 {
        let p = &scenario.nodes[node];
        let own = distance(p, &scenario.sources[dominant]);
        let other = distance(p, &scenario.sources[1 - dominant]);
        (self.max_error * own / other).min(self.max_error)
    }

    /// One label per node, seeded by `seed` and the node index.
    pub fn label(&self, scenario: &Scenario, seed: u64) -> Result<Vec<NodeLabel>> {
        if !(0.0..=1.0).contains(&self.max_error) {
            return Err(Error::InvalidArgument(format!("max_error {}", self.max_error)));
        }
        let truth = dominant_sources(scenario);
        Ok(truth
            .iter()
            .enumerate()
            .map(|(i, &dom)| {
                let p_err = self.error_probability(scenario, i, dom);
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x1abe_1000, i as u64));
                let flip = rng.random::<f64>() < p_err;
                NodeLabel {
                    class: (dom as u8) ^ flip as u8,
                    confidence: 1.0 - p_err,
                }
            })
            .collect())
    }
}

/// Fusion outcome for one setting: plain vote, or MV weighting after
/// thresholding at `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionRecord {
    pub mode: FusionMode,
    pub v: Option<f64>,
    pub clusters: Vec<ClusterOutcome>,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub schema_version: u32,
    pub seed: u64,
    pub cluster_count: usize,
    /// `d_tilde[x][z]`: cluster matched to source `x` against source `z`.
    pub d_tilde: [[f64; 2]; 2],
    pub assignment_accuracy: f64,
    pub fusion: Vec<FusionRecord>,
}

/// Inputs to [`evaluate`] beyond the scenario.
pub struct Outcome<'a> {
    /// One or two clusters of node indices.
    pub clusters: &'a [Vec<usize>],
    /// Unthresholded membership values per node; ignored for one cluster.
    pub mu: &'a [f64],
    pub labels: &'a [NodeLabel],
}

/// Scores one scenario. `thresholded(v)` must return the membership values
/// after thresholding at `v`.
pub fn evaluate(
    scenario: &Scenario,
    outcome: &Outcome<'_>,
    vs: &[f64],
    thresholded: impl Fn(f64) -> Result<Vec<f64>>,
) -> Result<EvalResult> {
    let truth = dominant_sources(scenario);
    let n = scenario.nodes.len();
    let [s1, s2] = &scenario.sources;
    let (d_tilde, accuracy, mu) = match outcome.clusters.len() {
        2 => {
            let (map, acc) = best_matching(outcome.clusters, &truth)?;
            let mut d = [[0.0; 2]; 2];
            for c in 0..2 {
                let members = &outcome.clusters[c];
                let pos: Vec<Position> = members.iter().map(|&i| scenario.nodes[i]).collect();
                let w: Vec<f64> = members.iter().map(|&i| outcome.mu[i]).collect();
                let centroid = mv_weighted_centroid(&pos, &w)?;
                for z in 0..2 {
                    d[map[c]][z] = normalized_cluster_distance(&centroid, &scenario.sources[z], s1, s2)?;
                }
            }
            (d, acc, outcome.mu.to_vec())
        }
        1 => {
            if outcome.clusters[0].len() != n {
                return Err(Error::InvalidArgument("single cluster must hold every node".into()));
            }
            // No split: one plain centroid stands in for both clusters.
            let centroid = mv_weighted_centroid(&scenario.nodes, &vec![1.0; n])?;
            let mut d = [[0.0; 2]; 2];
            for row in &mut d {
                for z in 0..2 {
                    row[z] = normalized_cluster_distance(&centroid, &scenario.sources[z], s1, s2)?;
                }
            }
            (d, SINGLE_CLUSTER_ACCURACY, vec![1.0; n])
        }
        k => return Err(Error::InvalidArgument(format!("expected 1 or 2 clusters, got {k}"))),
    };
    if mu.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: mu.len(),
        });
    }
    let cluster_truths: Vec<u8> = outcome.clusters.iter().map(|c| cluster_truth(c, &truth)).collect();
    let record = |mode, v, weights: &[f64]| -> Result<FusionRecord> {
        let fused = fuse_node_labels(outcome.labels, outcome.clusters, weights, mode)?;
        Ok(FusionRecord {
            mode,
            v,
            clusters: fused.iter().zip(&cluster_truths).map(|(f, t)| (f.class, *t)).collect(),
            fallback: fused.iter().any(|f| f.fallback),
        })
    };
    let mut fusion = vec![record(FusionMode::Plain, None, &mu)?];
    for &v in vs {
        let w = if outcome.clusters.len() == 2 { thresholded(v)? } else { mu.clone() };
        fusion.push(record(FusionMode::MvWeighted, Some(v), &w)?);
    }
    Ok(EvalResult {
        schema_version: EVAL_SCHEMA_VERSION,
        seed: scenario.seed,
        cluster_count: outcome.clusters.len(),
        d_tilde,
        assignment_accuracy: accuracy,
        fusion,
    })
}
