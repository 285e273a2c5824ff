use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::embed::{embedding_distance, Embedding};
use crate::error::Result;

/// A partition of embedding indices. Clusters are ordered by their smallest
/// member, members ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clustering {
    pub clusters: Vec<Vec<usize>>,
}

impl Clustering {
    /// Cluster number of each input index.
    pub fn labels(&self) -> Vec<usize> {
        let n = self.clusters.iter().map(Vec::len).sum();
        let mut out = vec![0; n];
        for (c, members) in self.clusters.iter().enumerate() {
            for &m in members {
                out[m] = c;
            }
        }
        out
    }
}

/// Average-linkage agglomeration on squared L2 distances. Merges the closest
/// pair of clusters while their mean pairwise distance is at most
/// `threshold`; equal distances go to the pair whose smallest members are
/// lowest (lexicographically).
pub fn cluster_identities(embeddings: &[Embedding], threshold: f64) -> Result<Clustering> {
    let n = embeddings.len();
    // Sum of cross distances between active clusters, indexed by the slot of
    // each cluster's smallest member.
    let mut sum = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = embedding_distance(&embeddings[i], &embeddings[j])?;
            sum[i * n + j] = d;
            sum[j * n + i] = d;
        }
    }
    let mut members: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    loop {
        let active: Vec<usize> = (0..n).filter(|&i| members[i].is_some()).collect();
        let mut best: Option<(f64, usize, usize)> = None;
        for (x, &i) in active.iter().enumerate() {
            let ni = members[i].as_ref().map_or(0, Vec::len) as f64;
            for &j in &active[x + 1..] {
                let nj = members[j].as_ref().map_or(0, Vec::len) as f64;
                let avg = sum[i * n + j] / (ni * nj);
                if best.map_or(true, |(b, _, _)| avg < b) {
                    best = Some((avg, i, j));
                }
            }
        }
        let Some((avg, i, j)) = best else { break };
        if !(avg <= threshold) {
            break;
        }
        // i < j, so the merged cluster keeps slot i.
        for &k in &active {
            if k != i && k != j {
                let s = sum[i * n + k] + sum[j * n + k];
                sum[i * n + k] = s;
                sum[k * n + i] = s;
            }
        }
        let mut moved = members[j].take().unwrap_or_default();
        let target = members[i].get_or_insert_with(Vec::new);
        target.append(&mut moved);
        target.sort_unstable();
    }
    Ok(Clustering {
        clusters: members.into_iter().flatten().collect(),
    })
}

/// How well clusters line up with true identities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterQuality {
    pub clusters: usize,
    pub identities: usize,
    /// Share of embeddings that carry their cluster's majority identity.
    pub purity: f64,
    /// Mean number of clusters an identity is spread across.
    pub clusters_per_identity: f64,
    /// Clusters holding more than one identity.
    pub mixed_clusters: usize,
}

pub fn cluster_quality(embeddings: &[Embedding], clustering: &Clustering) -> ClusterQuality {
    let n = embeddings.len();
    let mut majority = 0usize;
    let mut mixed = 0usize;
    let mut spread: BTreeMap<u32, BTreeSet<usize>> = BTreeMap::new();
    for (c, members) in clustering.clusters.iter().enumerate() {
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for &m in members {
            let id = embeddings[m].identity;
            *counts.entry(id).or_default() += 1;
            spread.entry(id).or_default().insert(c);
        }
        majority += counts.values().max().copied().unwrap_or(0);
        if counts.len() > 1 {
            mixed += 1;
        }
    }
    let identities = spread.len();
    ClusterQuality {
        clusters: clustering.clusters.len(),
        identities,
        purity: if n == 0 { 0.0 } else { majority as f64 / n as f64 },
        clusters_per_identity: if identities == 0 {
            0.0
        } else {
            spread.values().map(BTreeSet::len).sum::<usize>() as f64 / identities as f64
        },
        mixed_clusters: mixed,
    }
}
