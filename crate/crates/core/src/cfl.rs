//! Unsupervised clustered federated learning.
//!
//! Every round each client trains the bottleneck of its cluster's model for
//! one epoch and uploads the parameter change. The server averages the
//! changes per cluster, weighted by client data size. When a cluster's mean
//! update has become small and stopped changing while some individual update
//! is still large, its clients disagree about where the optimum is; the
//! server then splits the cluster in two by the cosine similarity of the
//! updates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Autoencoder, EncodedSegment, FeatureSegment};
use crate::vecspace::{similarity_matrix, ParamVector, SimilarityMatrix};

pub const ROUND_LOG_SCHEMA_VERSION: u32 = 1;

/// One client's local dataset.
#[derive(Debug, Clone)]
pub struct ClientData {
    pub id: usize,
    pub segments: Vec<FeatureSegment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Upper bound on the norm of the mean update.
    pub eps1: f64,
    /// Lower bound on the largest client update norm.
    pub eps2: f64,
    /// Upper bound on the round-to-round change of the mean-update norm.
    pub eps3: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            eps1: 0.0134,
            eps2: 0.005,
            eps3: 0.0007,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CflConfig {
    pub thresholds: Thresholds,
    pub max_rounds: usize,
    pub lr: f64,
    /// Seed for re-initializing the bottleneck before the first round.
    pub seed: u64,
    /// Keep splitting child clusters in later rounds instead of stopping
    /// after the first split.
    pub recursive: bool,
    /// Train clients of a round on the rayon pool.
    pub parallel: bool,
}

impl Default for CflConfig {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            max_rounds: 25,
            lr: 0.1,
            seed: 0,
            recursive: false,
            parallel: true,
        }
    }
}

/// Congruence statistics of one cluster in one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CongruenceStats {
    /// Norm of the mean client update.
    pub mean_norm: f64,
    /// Largest client update norm.
    pub max_norm: f64,
    /// `|mean_norm - previous mean_norm|`; absent on a cluster's first round.
    pub grad: Option<f64>,
}

/// Loads `theta` into a copy of `model` and runs one masked SGD epoch.
pub fn client_update(model: &Autoencoder, theta: &ParamVector, data: &[FeatureSegment], lr: f64) -> Result<ParamVector> {
    if data.is_empty() {
        return Err(Error::Empty("client data"));
    }
    let mut local = model.clone();
    local.load_masked(theta)?;
    local.sgd_epoch(data, lr, true)
}

/// [`client_update`] over segments already passed through the frozen
/// encoder of `model`.
pub fn client_update_encoded(model: &Autoencoder, theta: &ParamVector, data: &[EncodedSegment], lr: f64) -> Result<ParamVector> {
    if data.is_empty() {
        return Err(Error::Empty("client data"));
    }
    let mut local = model.clone();
    local.load_masked(theta)?;
    local.sgd_epoch_encoded(data, lr)
}

/// `theta + sum_i (n_i / N) delta_i`, summed in ascending client id order.
///
/// Each entry is `(client id, delta, data size)`.
pub fn cluster_aggregate(theta: &ParamVector, deltas: &[(usize, &ParamVector, usize)]) -> Result<ParamVector> {
    let total: usize = deltas.iter().map(|d| d.2).sum();
    if total == 0 {
        return Err(Error::Empty("aggregation data"));
    }
    let mut order: Vec<_> = deltas.iter().collect();
    order.sort_by_key(|d| d.0);
    let mut sum = ParamVector::zeros(theta.len());
    for (_, delta, n) in order {
        sum.add_scaled(*n as f64 / total as f64, delta)?;
    }
    let mut out = theta.clone();
    out.add_scaled(1.0, &sum)?;
    Ok(out)
}

/// Mean-update norm, largest update norm and the backward difference of the
/// mean-update norm against `previous_mean`.
pub fn congruence_stats(deltas: &[&ParamVector], previous_mean: Option<f64>) -> Result<CongruenceStats> {
    let first = deltas.first().ok_or(Error::Empty("cluster updates"))?;
    let mut mean = ParamVector::zeros(first.len());
    for d in deltas {
        mean.add_scaled(1.0 / deltas.len() as f64, d)?;
    }
    let mean_norm = mean.norm();
    let max_norm = deltas.iter().map(|d| d.norm()).fold(0.0, f64::max);
    Ok(CongruenceStats {
        // The mean of vectors is never longer than the longest of them;
        // clamp away the rounding that could say otherwise.
        mean_norm: mean_norm.min(max_norm),
        max_norm,
        grad: previous_mean.map(|p| (mean_norm.min(max_norm) - p).abs()),
    })
}

/// True when the mean update is small, some update is still large and the
/// mean has stopped moving. Never true on a cluster's first round.
pub fn should_split(stats: &CongruenceStats, t: &Thresholds) -> bool {
    match stats.grad {
        Some(g) => stats.mean_norm <= t.eps1 && stats.max_norm >= t.eps2 && g <= t.eps3,
        None => false,
    }
}

/// Largest similarity between a member of `a` and a member of `b`.
pub fn max_cross_similarity(m: &SimilarityMatrix, a: &[usize], b: &[usize]) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for &i in a {
        for &j in b {
            best = best.max(m.get(i, j));
        }
    }
    best
}

/// Smallest similarity within `c`, or `+inf` for a singleton.
pub fn min_intra_similarity(m: &SimilarityMatrix, c: &[usize]) -> f64 {
    let mut worst = f64::INFINITY;
    for (k, &i) in c.iter().enumerate() {
        for &j in &c[k + 1..] {
            worst = worst.min(m.get(i, j));
        }
    }
    worst
}

/// Whether the split separates cleanly: the largest cross-cluster
/// similarity is below the smallest similarity inside either cluster.
pub fn is_separating(m: &SimilarityMatrix, a: &[usize], b: &[usize]) -> bool {
    max_cross_similarity(m, a, b) < min_intra_similarity(m, a).min(min_intra_similarity(m, b))
}

fn check_bipartition_input(m: &SimilarityMatrix) -> Result<()> {
    if m.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "bipartition needs at least 2 clients, got {}",
            m.len()
        )));
    }
    Ok(())
}

/// Splits clients into two groups minimizing the largest cross-group
/// similarity.
///
/// Single linkage cut at two clusters: the bottleneck (smallest) edge of a
/// maximum spanning tree is the optimal value `w`. Clients joined by
/// similarities strictly above `w` must share a side; the first group is the
/// connected component of the lowest client id under those edges, which is
/// the smallest optimal group containing that client. Both groups are
/// returned as sorted client ids.
pub fn bipartition(m: &SimilarityMatrix) -> Result<(Vec<usize>, Vec<usize>)> {
    check_bipartition_input(m)?;
    let n = m.len();
    // Prim's algorithm, maximizing.
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::NEG_INFINITY; n];
    let mut bottleneck = f64::INFINITY;
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let mut next = usize::MAX;
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            best[j] = best[j].max(m.at(current, j));
            if next == usize::MAX || best[j] > best[next] {
                next = j;
            }
        }
        bottleneck = bottleneck.min(best[next]);
        in_tree[next] = true;
        current = next;
    }

    let ids = m.client_ids();
    let root = (0..n).min_by_key(|&i| ids[i]).expect("non-empty");
    let mut seen = vec![false; n];
    let mut stack = vec![root];
    seen[root] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            if !seen[j] && m.at(i, j) > bottleneck {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    let mut c1: Vec<usize> = (0..n).filter(|&i| seen[i]).map(|i| ids[i]).collect();
    let mut c2: Vec<usize> = (0..n).filter(|&i| !seen[i]).map(|i| ids[i]).collect();
    c1.sort_unstable();
    c2.sort_unstable();
    Ok((c1, c2))
}

/// Exhaustive search over all `2^(M-1) - 1` bipartitions for the one with
/// the smallest largest cross similarity. Ties go to the smallest group
/// containing the lowest client id, then lexicographic order.
pub fn brute_force_bipartition(m: &SimilarityMatrix) -> Result<(Vec<usize>, Vec<usize>, f64)> {
    check_bipartition_input(m)?;
    let n = m.len();
    if n > 20 {
        return Err(Error::InvalidArgument(format!("brute force limited to 20 clients, got {n}")));
    }
    let mut ids = m.client_ids().to_vec();
    ids.sort_unstable();
    let (lowest, rest) = ids.split_first().expect("non-empty");
    let mut best: Option<(f64, Vec<usize>, Vec<usize>)> = None;
    // Bit k set: rest[k] joins the lowest id in the first group.
    for mask in 0u32..(1 << rest.len()) - 1 {
        let mut c1 = vec![*lowest];
        let mut c2 = Vec::new();
        for (k, &id) in rest.iter().enumerate() {
            if mask >> k & 1 == 1 {
                c1.push(id);
            } else {
                c2.push(id);
            }
        }
        let v = max_cross_similarity(m, &c1, &c2);
        let better = match &best {
            None => true,
            Some((bv, b1, _)) => v < *bv || (v == *bv && (c1.len(), &c1) < (b1.len(), b1)),
        };
        if better {
            best = Some((v, c1, c2));
        }
    }
    let (v, c1, c2) = best.expect("at least one bipartition");
    Ok((c1, c2, v))
}

/// Per-cluster statistics of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRound {
    pub members: Vec<usize>,
    pub stats: CongruenceStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEvent {
    pub round: usize,
    pub parent: Vec<usize>,
    pub children: [Vec<usize>; 2],
    pub similarity: SimilarityMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub clusters: Vec<ClusterRound>,
}

/// Observable history of a CFL run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub schema_version: u32,
    pub rounds: Vec<RoundRecord>,
    pub splits: Vec<SplitEvent>,
    /// Set when the run ended without any split.
    pub no_split: bool,
}

impl RoundLog {
    pub fn round_count(&self) -> usize {
        self.rounds.len()
    }
}

/// Current partition of clients with one bottleneck model per cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub clusters: Vec<Vec<usize>>,
    pub thetas: Vec<ParamVector>,
    /// Mean-update norm per round, per cluster, since the cluster was formed.
    pub history: Vec<Vec<f64>>,
}

impl ClusterState {
    fn single(ids: Vec<usize>, theta: ParamVector) -> Self {
        Self {
            clusters: vec![ids],
            thetas: vec![theta],
            history: vec![Vec::new()],
        }
    }

    /// Checks that the clusters partition `ids`.
    pub fn is_partition_of(&self, ids: &[usize]) -> bool {
        let mut all: Vec<usize> = self.clusters.iter().flatten().copied().collect();
        all.sort_unstable();
        let mut want = ids.to_vec();
        want.sort_unstable();
        all == want
    }
}

/// Result of [`run_unsupervised_cfl`].
#[derive(Debug, Clone)]
pub struct CflOutcome {
    pub state: ClusterState,
    pub log: RoundLog,
    /// Client updates of the round in which the first split happened.
    pub split_deltas: Option<Vec<(usize, ParamVector)>>,
}

impl CflOutcome {
    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.state.clusters
    }
}

/// Runs the unsupervised CFL round loop on a pretrained, frozen model.
///
/// The bottleneck is re-initialized from `config.seed`, then up to
/// `max_rounds` rounds are played. Without `recursive`, the loop ends after
/// the round that produced the first split.
pub fn run_unsupervised_cfl(clients: &[ClientData], model: &Autoencoder, config: &CflConfig) -> Result<CflOutcome> {
    if clients.is_empty() {
        return Err(Error::Empty("clients"));
    }
    if model.trainable_count() == model.param_count() {
        return Err(Error::InvalidArgument(
            "model must be frozen except for the bottleneck before CFL".into(),
        ));
    }
    if let Some(c) = clients.iter().find(|c| c.segments.is_empty()) {
        return Err(Error::InvalidArgument(format!("client {} has no data", c.id)));
    }
    let mut ids: Vec<usize> = clients.iter().map(|c| c.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("client ids are not distinct".into()));
    }
    let by_id = |id: usize| clients.iter().find(|c| c.id == id).expect("known id");

    let mut base = model.clone();
    base.reinit_trainable(config.seed);
    let mut state = ClusterState::single(ids.clone(), base.extract_masked());
    // The encoder stays frozen, so every client encodes its data once.
    let encoded: Vec<(usize, Vec<EncodedSegment>)> = clients
        .iter()
        .map(|c| Ok((c.id, c.segments.iter().map(|s| base.encode(s)).collect::<Result<Vec<_>>>()?)))
        .collect::<Result<_>>()?;
    let encoded_of = |id: usize| &encoded.iter().find(|e| e.0 == id).expect("known id").1;
    let mut log = RoundLog {
        schema_version: ROUND_LOG_SCHEMA_VERSION,
        rounds: Vec::new(),
        splits: Vec::new(),
        no_split: true,
    };
    let mut split_deltas = None;

    for round in 1..=config.max_rounds {
        let mut next = ClusterState {
            clusters: Vec::new(),
            thetas: Vec::new(),
            history: Vec::new(),
        };
        let mut record = RoundRecord {
            round,
            clusters: Vec::new(),
        };
        let mut split_this_round = false;

        for ((members, theta), history) in state.clusters.iter().zip(&state.thetas).zip(&state.history) {
            let train = |&id: &usize| -> Result<ParamVector> {
                client_update_encoded(&base, theta, encoded_of(id), config.lr)
            };
            let deltas: Vec<ParamVector> = if config.parallel {
                members.par_iter().map(train).collect::<Result<_>>()?
            } else {
                members.iter().map(train).collect::<Result<_>>()?
            };
            let refs: Vec<&ParamVector> = deltas.iter().collect();
            let stats = congruence_stats(&refs, history.last().copied())?;
            record.clusters.push(ClusterRound {
                members: members.clone(),
                stats,
            });

            let sizes: Vec<(usize, &ParamVector, usize)> = members
                .iter()
                .zip(&deltas)
                .map(|(&id, d)| (id, d, by_id(id).segments.len()))
                .collect();

            if members.len() >= 2 && should_split(&stats, &config.thresholds) {
                let sim = similarity_matrix(&deltas, members)?;
                let (c1, c2) = bipartition(&sim)?;
                for child in [&c1, &c2] {
                    let part: Vec<_> = sizes.iter().filter(|s| child.contains(&s.0)).cloned().collect();
                    next.clusters.push(child.clone());
                    next.thetas.push(cluster_aggregate(theta, &part)?);
                    next.history.push(Vec::new());
                }
                if split_deltas.is_none() {
                    split_deltas = Some(members.iter().copied().zip(deltas.iter().cloned()).collect());
                }
                log.splits.push(SplitEvent {
                    round,
                    parent: members.clone(),
                    children: [c1, c2],
                    similarity: sim,
                });
                log.no_split = false;
                split_this_round = true;
            } else {
                next.clusters.push(members.clone());
                next.thetas.push(cluster_aggregate(theta, &sizes)?);
                let mut h = history.clone();
                h.push(stats.mean_norm);
                next.history.push(h);
            }
        }

        log.rounds.push(record);
        state = next;
        debug_assert!(state.is_partition_of(&ids));
        if split_this_round && !config.recursive {
            break;
        }
    }

    Ok(CflOutcome {
        state,
        log,
        split_deltas,
    })
}
