//! Membership values: how strongly each node belongs to its cluster.
//!
//! For a two-way split, every node gets a mean similarity to its own cluster
//! (`q`) and to the other one (`r`). Both are min–max normalized per cluster
//! and blended with weight `λ` into a score `p`. The node with the lowest
//! score is the cluster's reference; a node's membership value is its
//! similarity to the reference, again min–max normalized per cluster.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecspace::SimilarityMatrix;

pub const DEFAULT_LAMBDA: f64 = 0.5;

/// Mean similarities of one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSimilarity {
    pub node: usize,
    /// Mean similarity to the rest of its own cluster; `None` for a singleton.
    pub q: Option<f64>,
    /// Mean similarity to the other cluster.
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMembership {
    pub node: usize,
    /// 0 for the first cluster, 1 for the second.
    pub cluster: usize,
    pub q: Option<f64>,
    pub r: f64,
    /// Blended score; `None` in a singleton cluster.
    pub p: Option<f64>,
    /// Similarity to the cluster reference before normalization.
    pub raw_mu: f64,
    pub mu: f64,
    pub zeroed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipReport {
    /// Nodes of the first cluster, then the second, each in ascending id order.
    pub nodes: Vec<NodeMembership>,
    pub references: [usize; 2],
    pub lambda: f64,
    /// Threshold applied, if any.
    pub v: Option<f64>,
    pub zeroed: Vec<usize>,
}

impl MembershipReport {
    pub fn mu(&self, node: usize) -> Option<f64> {
        self.nodes.iter().find(|n| n.node == node).map(|n| n.mu)
    }

    pub fn cluster_members(&self, cluster: usize) -> Vec<usize> {
        self.nodes.iter().filter(|n| n.cluster == cluster).map(|n| n.node).collect()
    }

    /// CSV rows `node,cluster,mu,zeroed`, with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("node,cluster,mu,zeroed\n");
        for n in &self.nodes {
            s.push_str(&format!("{},{},{},{}\n", n.node, n.cluster, n.mu, n.zeroed as u8));
        }
        s
    }
}

fn check_partition(a: &SimilarityMatrix, c1: &[usize], c2: &[usize]) -> Result<()> {
    if c1.is_empty() || c2.is_empty() {
        return Err(Error::InvalidArgument("both clusters must be non-empty".into()));
    }
    let mut all: Vec<usize> = c1.iter().chain(c2).copied().collect();
    all.sort_unstable();
    let mut ids = a.client_ids().to_vec();
    ids.sort_unstable();
    if all != ids {
        return Err(Error::InvalidArgument(
            "clusters do not partition the similarity matrix clients".into(),
        ));
    }
    Ok(())
}

fn sorted(c: &[usize]) -> Vec<usize> {
    let mut v = c.to_vec();
    v.sort_unstable();
    v
}

/// Intra-cluster and cross-cluster mean similarities for every node, first
/// cluster first.
pub fn mean_similarities(a: &SimilarityMatrix, c1: &[usize], c2: &[usize]) -> Result<Vec<MeanSimilarity>> {
    check_partition(a, c1, c2)?;
    let (c1, c2) = (sorted(c1), sorted(c2));
    let mut out = Vec::with_capacity(a.len());
    for (own, other) in [(&c1, &c2), (&c2, &c1)] {
        for &i in own.iter() {
            let q = (own.len() > 1).then(|| {
                let sum: f64 = own.iter().filter(|&&j| j != i).map(|&j| a.get(i, j)).sum();
                sum / (own.len() - 1) as f64
            });
            let r = other.iter().map(|&k| a.get(i, k)).sum::<f64>() / other.len() as f64;
            out.push(MeanSimilarity { node: i, q, r });
        }
    }
    Ok(out)
}

/// Min–max normalization; a constant vector maps to all 0.5.
pub fn min_max(x: &[f64]) -> Vec<f64> {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        x.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.5; x.len()]
    }
}

/// `λ·norm(q) + (1-λ)·norm(r)` over one cluster.
pub fn fused_scores(q: &[f64], r: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} outside [0, 1]")));
    }
    if q.len() != r.len() {
        return Err(Error::LengthMismatch {
            expected: q.len(),
            actual: r.len(),
        });
    }
    let (qn, rn) = (min_max(q), min_max(r));
    Ok(qn.iter().zip(&rn).map(|(q, r)| lambda * q + (1.0 - lambda) * r).collect())
}

/// Membership values for the split `(c1, c2)` of the clients of `a`.
pub fn membership_values(a: &SimilarityMatrix, c1: &[usize], c2: &[usize], lambda: f64) -> Result<MembershipReport> {
    let means = mean_similarities(a, c1, c2)?;
    let mut nodes = Vec::with_capacity(means.len());
    let mut references = [0; 2];
    let split = c1.len();
    for (cluster, part) in [&means[..split], &means[split..]].into_iter().enumerate() {
        if part.len() == 1 {
            let m = part[0];
            references[cluster] = m.node;
            nodes.push(NodeMembership {
                node: m.node,
                cluster,
                q: None,
                r: m.r,
                p: None,
                raw_mu: 1.0,
                mu: 1.0,
                zeroed: false,
            });
            continue;
        }
        let q: Vec<f64> = part.iter().map(|m| m.q.expect("multi-node cluster")).collect();
        let r: Vec<f64> = part.iter().map(|m| m.r).collect();
        let p = fused_scores(&q, &r, lambda)?;
        // Nodes are in ascending id order, so the first minimum wins ties.
        let mut best = 0;
        for k in 1..p.len() {
            if p[k] < p[best] {
                best = k;
            }
        }
        let reference = part[best].node;
        references[cluster] = reference;
        let raw: Vec<f64> = part.iter().map(|m| a.get(m.node, reference)).collect();
        let mu = min_max(&raw);
        for (k, m) in part.iter().enumerate() {
            nodes.push(NodeMembership {
                node: m.node,
                cluster,
                q: m.q,
                r: m.r,
                p: Some(p[k]),
                raw_mu: raw[k],
                mu: mu[k],
                zeroed: false,
            });
        }
    }
    Ok(MembershipReport {
        nodes,
        references,
        lambda,
        v: None,
        zeroed: Vec::new(),
    })
}

/// Sets every membership value `<= v` to zero.
pub fn threshold_mvs(report: &MembershipReport, v: f64) -> Result<MembershipReport> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidArgument(format!("threshold {v} outside [0, 1]")));
    }
    let mut out = report.clone();
    out.v = Some(v);
    out.zeroed.clear();
    for n in &mut out.nodes {
        if n.mu <= v {
            n.mu = 0.0;
            n.zeroed = true;
            out.zeroed.push(n.node);
        }
    }
    out.zeroed.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Nodes 1..=4 with the similarities of the worked example.
    pub(crate) fn example_matrix() -> SimilarityMatrix {
        let rows = vec![
            vec![1.0, 0.9, 0.5, 0.1],
            vec![0.9, 1.0, 0.6, 0.2],
            vec![0.5, 0.6, 1.0, 0.8],
            vec![0.1, 0.2, 0.8, 1.0],
        ];
        SimilarityMatrix::from_rows(vec![1, 2, 3, 4], rows).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12
    }

    #[test]
    fn worked_example() {
        let a = example_matrix();
        let means = mean_similarities(&a, &[1, 2, 3], &[4]).unwrap();
        let q: Vec<f64> = means[..3].iter().map(|m| m.q.unwrap()).collect();
        let r: Vec<f64> = means[..3].iter().map(|m| m.r).collect();
        for (got, want) in q.iter().zip([0.7, 0.75, 0.55]) {
            assert!(close(*got, want), "{q:?}");
        }
        for (got, want) in r.iter().zip([0.1, 0.2, 0.8]) {
            assert!(close(*got, want), "{r:?}");
        }
        assert_eq!(means[3].q, None);

        let p = fused_scores(&q, &r, 0.5).unwrap();
        for (got, want) in p.iter().zip([0.375, 0.5 * (1.0 + 1.0 / 7.0), 0.5]) {
            assert!(close(*got, want), "{p:?}");
        }

        let rep = membership_values(&a, &[1, 2, 3], &[4], 0.5).unwrap();
        assert_eq!(rep.references, [1, 4]);
        let mu: Vec<f64> = rep.nodes.iter().map(|n| n.mu).collect();
        for (got, want) in mu.iter().zip([1.0, 0.8, 0.0, 1.0]) {
            assert!(close(*got, want), "{mu:?}");
        }
        let raw: Vec<f64> = rep.nodes[..3].iter().map(|n| n.raw_mu).collect();
        assert_eq!(raw, vec![1.0, 0.9, 0.5]);
    }

    #[test]
    fn lambda_extremes() {
        let (q, r) = ([0.7, 0.75, 0.55], [0.1, 0.2, 0.8]);
        assert_eq!(fused_scores(&q, &r, 1.0).unwrap(), min_max(&q));
        assert_eq!(fused_scores(&q, &r, 0.0).unwrap(), min_max(&r));
        assert!(fused_scores(&q, &r, 1.5).is_err());
        assert!(fused_scores(&q, &r[..2], 0.5).is_err());
    }

    #[test]
    fn two_node_cluster() {
        let a = example_matrix();
        let means = mean_similarities(&a, &[1, 2], &[3, 4]).unwrap();
        assert_eq!(means[0].q, Some(0.9));
        assert_eq!(means[1].q, Some(0.9));
        let rep = membership_values(&a, &[1, 2], &[3, 4], 0.5).unwrap();
        let ref0 = rep.references[0];
        assert_eq!(rep.mu(ref0), Some(1.0));
        let other = if ref0 == 1 { 2 } else { 1 };
        assert_eq!(rep.mu(other), Some(0.0));
    }

    #[test]
    fn identical_updates() {
        let rows = vec![vec![1.0; 3]; 3];
        let a = SimilarityMatrix::from_rows(vec![0, 1, 2], rows).unwrap();
        let means = mean_similarities(&a, &[0, 1], &[2]).unwrap();
        assert!(means.iter().all(|m| m.r == 1.0 && m.q.unwrap_or(1.0) == 1.0));
    }

    #[test]
    fn thresholds() {
        let rep = membership_values(&example_matrix(), &[1, 2, 3], &[4], 0.5).unwrap();
        let t = threshold_mvs(&rep, 0.9).unwrap();
        let mu: Vec<f64> = t.nodes.iter().map(|n| n.mu).collect();
        assert_eq!(mu, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(t.zeroed, vec![2, 3]);
        assert_eq!(threshold_mvs(&rep, 0.0).unwrap().zeroed, vec![3]);
        assert_eq!(threshold_mvs(&rep, 1.0).unwrap().zeroed, vec![1, 2, 3, 4]);
        assert!(threshold_mvs(&rep, -0.1).is_err());
    }

    #[test]
    fn bad_partitions() {
        let a = example_matrix();
        assert!(mean_similarities(&a, &[1, 2, 3, 4], &[]).is_err());
        assert!(mean_similarities(&a, &[1, 2], &[3]).is_err());
        assert!(mean_similarities(&a, &[1, 2], &[2, 3, 4]).is_err());
    }

    #[test]
    fn csv_rows() {
        let rep = membership_values(&example_matrix(), &[1, 2, 3], &[4], 0.5).unwrap();
        let csv = threshold_mvs(&rep, 0.9).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "node,cluster,mu,zeroed");
        assert_eq!(lines[2], "2,0,0,1");
        assert_eq!(lines.len(), 5);
    }

    mod props {
        use super::super::*;
        use crate::vecspace::{similarity_matrix, ParamVector};
        use proptest::prelude::*;

        fn updates() -> impl Strategy<Value = Vec<Vec<f64>>> {
            (4usize..10).prop_flat_map(|m| prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 6), m))
        }

        proptest! {
            #[test]
            fn threshold_is_monotone(rows in updates(), v1 in 0.0f64..1.0, v2 in 0.0f64..1.0) {
                let ds: Vec<ParamVector> = rows.into_iter().map(|r| ParamVector::new(r).unwrap()).collect();
                let ids: Vec<usize> = (0..ds.len()).collect();
                let Ok(a) = similarity_matrix(&ds, &ids) else { return Ok(()) };
                let half = ds.len() / 2;
                let rep = membership_values(&a, &ids[..half], &ids[half..], 0.5).unwrap();
                let (lo, hi) = if v1 <= v2 { (v1, v2) } else { (v2, v1) };
                let zl = threshold_mvs(&rep, lo).unwrap().zeroed;
                let zh = threshold_mvs(&rep, hi).unwrap().zeroed;
                prop_assert!(zl.iter().all(|n| zh.contains(n)));
            }

            #[test]
            fn normalized_extremes(rows in updates()) {
                let ds: Vec<ParamVector> = rows.into_iter().map(|r| ParamVector::new(r).unwrap()).collect();
                let ids: Vec<usize> = (0..ds.len()).collect();
                let Ok(a) = similarity_matrix(&ds, &ids) else { return Ok(()) };
                let rep = membership_values(&a, &ids[..2], &ids[2..], 0.5).unwrap();
                for c in 0..2 {
                    let mu: Vec<f64> = rep.nodes.iter().filter(|n| n.cluster == c).map(|n| n.mu).collect();
                    let reference = rep.nodes.iter().find(|n| n.node == rep.references[c]).unwrap();
                    prop_assert_eq!(reference.raw_mu, 1.0);
                    let hi = mu.iter().copied().fold(f64::MIN, f64::max);
                    let lo = mu.iter().copied().fold(f64::MAX, f64::min);
                    prop_assert!((hi == 1.0 && lo == 0.0) || (hi == 0.5 && lo == 0.5));
                }
            }
        }
    }
}
