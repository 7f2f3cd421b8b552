//! Threshold + transitive clustering.
//!
//! Two documents are similar when their score reaches the threshold. Because
//! similarity is not transitive (a short and a long repetition of the same
//! text can fall on either side of the cutoff), documents linked through any
//! chain of similar documents end up in the same cluster: the clusters are the
//! connected components of the "similar" graph.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::ingest::FindingId;
use crate::similarity::SimilarityMatrix;

/// Disjoint-set forest with path compression and union by rank.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn find(&mut self, mut node: usize) -> usize {
        let mut root = node;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[node] != root {
            let next = self.parent[node];
            self.parent[node] = root;
            node = next;
        }
        root
    }

    /// Merge the sets of `a` and `b`; returns false if they were already one.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.rank[ra] < self.rank[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        if self.rank[ra] == self.rank[rb] {
            self.rank[ra] = self.rank[ra].saturating_add(1);
        }
        true
    }

    /// Members of every set, each sorted, sets ordered by smallest member.
    pub fn groups(&mut self) -> Vec<Vec<usize>> {
        let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..self.len() {
            by_root.entry(self.find(i)).or_default().push(i);
        }
        let mut out: Vec<Vec<usize>> = by_root.into_values().collect();
        out.sort_by_key(|g| g[0]);
        out
    }
}

/// For every document, the documents scoring at least `threshold` with it.
/// A document is always in its own set.
pub fn similar_sets(matrix: &SimilarityMatrix, threshold: f64) -> BTreeMap<usize, BTreeSet<usize>> {
    (0..matrix.n())
        .map(|i| {
            let mut set: BTreeSet<usize> = matrix
                .row(i)
                .iter()
                .enumerate()
                .filter(|(_, &s)| s >= threshold)
                .map(|(j, _)| j)
                .collect();
            set.insert(i);
            (i, set)
        })
        .collect()
}

/// Connected components of the undirected graph joining every key to each
/// member of its set. IDs that only appear as members are nodes too.
///
/// Components are returned ordered by their smallest ID.
pub fn transitive_closure<K: Ord + Copy>(sets: &BTreeMap<K, BTreeSet<K>>) -> Vec<BTreeSet<K>> {
    let nodes: BTreeSet<K> = sets
        .iter()
        .flat_map(|(k, members)| std::iter::once(*k).chain(members.iter().copied()))
        .collect();
    let index: BTreeMap<K, usize> = nodes.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let keys: Vec<K> = nodes.into_iter().collect();

    let mut uf = UnionFind::new(keys.len());
    for (k, members) in sets {
        let a = index[k];
        for m in members {
            uf.union(a, index[m]);
        }
    }
    uf.groups()
        .into_iter()
        .map(|g| g.into_iter().map(|i| keys[i]).collect())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterOrigin {
    Predicted,
    GroundTruth,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ClusterError {
    #[error("empty cluster")]
    EmptyCluster,
    #[error("finding {0} belongs to more than one cluster")]
    Overlap(FindingId),
    #[error("threshold {0} outside [0, 1]")]
    BadThreshold(f64),
    #[error("malformed cluster file: {0}")]
    Malformed(String),
    #[error("{0}")]
    Io(String),
}

/// A partition of finding IDs into clusters, in canonical form.
///
/// Each cluster is sorted ascending; clusters are ordered by size
/// (descending), then by smallest ID. Identical clusters collapse.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterSet {
    pub origin: ClusterOrigin,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    clusters: Vec<Vec<FindingId>>,
}

impl ClusterSet {
    pub fn new<I, C>(origin: ClusterOrigin, threshold: Option<f64>, clusters: I) -> Result<Self, ClusterError>
    where
        I: IntoIterator<Item = C>,
        C: IntoIterator<Item = FindingId>,
    {
        if let Some(t) = threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(ClusterError::BadThreshold(t));
            }
        }
        let mut unique: BTreeSet<Vec<FindingId>> = BTreeSet::new();
        for c in clusters {
            let set: BTreeSet<FindingId> = c.into_iter().collect();
            if set.is_empty() {
                return Err(ClusterError::EmptyCluster);
            }
            unique.insert(set.into_iter().collect());
        }
        let mut seen = BTreeSet::new();
        for c in &unique {
            for id in c {
                if !seen.insert(*id) {
                    return Err(ClusterError::Overlap(*id));
                }
            }
        }
        let mut clusters: Vec<Vec<FindingId>> = unique.into_iter().collect();
        clusters.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a[0].cmp(&b[0])));
        Ok(ClusterSet {
            origin,
            threshold,
            clusters,
        })
    }

    pub fn clusters(&self) -> &[Vec<FindingId>] {
        &self.clusters
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn universe(&self) -> BTreeSet<FindingId> {
        self.clusters.iter().flatten().copied().collect()
    }

    /// Cluster containing `id`, if any.
    pub fn cluster_of(&self, id: FindingId) -> Option<&[FindingId]> {
        self.clusters
            .iter()
            .find(|c| c.binary_search(&id).is_ok())
            .map(Vec::as_slice)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("cluster set serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self, ClusterError> {
        #[derive(Deserialize)]
        struct Raw {
            origin: ClusterOrigin,
            #[serde(default)]
            threshold: Option<f64>,
            clusters: Vec<Vec<FindingId>>,
        }
        let raw: Raw = serde_json::from_str(s).map_err(|e| ClusterError::Malformed(e.to_string()))?;
        ClusterSet::new(raw.origin, raw.threshold, raw.clusters)
    }

    pub fn load(path: &Path) -> Result<Self, ClusterError> {
        let text = std::fs::read_to_string(path).map_err(|e| ClusterError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }
}

impl<'de> Deserialize<'de> for ClusterSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        ClusterSet::from_json_str(&value.to_string()).map_err(serde::de::Error::custom)
    }
}

/// Expand document components into finding clusters.
pub fn to_finding_clusters(
    components: &[BTreeSet<usize>],
    corpus: &Corpus,
    threshold: Option<f64>,
) -> Result<ClusterSet, ClusterError> {
    let expanded = components.iter().map(|component| {
        component
            .iter()
            .flat_map(|&doc| corpus.documents[doc].finding_ids.iter().copied())
            .collect::<BTreeSet<FindingId>>()
    });
    ClusterSet::new(ClusterOrigin::Predicted, threshold, expanded)
}

/// The whole clustering step: threshold, close transitively, expand.
pub fn cluster(matrix: &SimilarityMatrix, corpus: &Corpus, threshold: f64) -> Result<ClusterSet, ClusterError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(ClusterError::BadThreshold(threshold));
    }
    let components = transitive_closure(&similar_sets(matrix, threshold));
    to_finding_clusters(&components, corpus, Some(threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CorpusDocument, CorpusKind};

    fn set(xs: &[usize]) -> BTreeSet<usize> {
        xs.iter().copied().collect()
    }

    fn three_doc_matrix() -> SimilarityMatrix {
        SimilarityMatrix::from_pair_fn(3, "t", |i, j| match (i, j) {
            (0, 1) => 0.8,
            (1, 2) => 0.7,
            (0, 2) => 0.4,
            _ => unreachable!(),
        })
    }

    #[test]
    fn thresholding_by_hand() {
        let sets = similar_sets(&three_doc_matrix(), 0.6);
        assert_eq!(sets[&0], set(&[0, 1]));
        assert_eq!(sets[&1], set(&[0, 1, 2]));
        assert_eq!(sets[&2], set(&[1, 2]));
    }

    #[test]
    fn threshold_zero_and_above_max() {
        let m = three_doc_matrix();
        assert!(similar_sets(&m, 0.0).values().all(|s| s.len() == 3));
        let above = m.max_off_diagonal().unwrap() + 1e-9;
        assert!(similar_sets(&m, above).iter().all(|(k, s)| s == &set(&[*k])));
    }

    #[test]
    fn threshold_is_inclusive() {
        let sets = similar_sets(&three_doc_matrix(), 0.7);
        assert!(sets[&1].contains(&2));
    }

    #[test]
    fn worked_transitive_example() {
        let sets = BTreeMap::from([
            (1, set(&[1, 2, 4])),
            (2, set(&[2, 1, 3, 5])),
            (3, set(&[3])),
            (4, set(&[4])),
            (5, set(&[5])),
        ]);
        assert_eq!(transitive_closure(&sets), vec![set(&[1, 2, 3, 4, 5])]);
    }

    #[test]
    fn singletons_stay_singletons() {
        let sets: BTreeMap<usize, BTreeSet<usize>> = (0..4).map(|i| (i, set(&[i]))).collect();
        assert_eq!(transitive_closure(&sets).len(), 4);
    }

    #[test]
    fn union_find_basics() {
        let mut uf = UnionFind::new(5);
        assert!(uf.union(0, 3));
        assert!(uf.union(3, 4));
        assert!(!uf.union(0, 4));
        assert_eq!(uf.groups(), vec![vec![0, 3, 4], vec![1], vec![2]]);
    }

    fn corpus(docs: &[&[u64]]) -> Corpus {
        Corpus {
            kind: CorpusKind::SastConcD,
            documents: docs
                .iter()
                .enumerate()
                .map(|(doc_id, ids)| CorpusDocument {
                    doc_id,
                    finding_ids: ids.iter().map(|&i| FindingId(i)).collect(),
                    text: String::new(),
                })
                .collect(),
        }
    }

    #[test]
    fn expansion_through_merged_documents() {
        let c = corpus(&[&[3, 7], &[1], &[2]]);
        let cs = to_finding_clusters(&[set(&[0]), set(&[1, 2])], &c, None).unwrap();
        assert_eq!(
            cs.clusters(),
            &[vec![FindingId(1), FindingId(2)], vec![FindingId(3), FindingId(7)]]
        );
    }

    #[test]
    fn identical_clusters_collapse() {
        let cs = ClusterSet::new(
            ClusterOrigin::Predicted,
            None,
            vec![vec![FindingId(1), FindingId(2)], vec![FindingId(2), FindingId(1)]],
        )
        .unwrap();
        assert_eq!(cs.len(), 1);
    }

    #[test]
    fn cluster_set_rejects_overlap_and_empty() {
        let overlap = ClusterSet::new(
            ClusterOrigin::GroundTruth,
            None,
            vec![vec![FindingId(1), FindingId(2)], vec![FindingId(2)]],
        );
        assert_eq!(overlap.unwrap_err(), ClusterError::Overlap(FindingId(2)));
        let empty = ClusterSet::new(ClusterOrigin::GroundTruth, None, vec![Vec::<FindingId>::new()]);
        assert_eq!(empty.unwrap_err(), ClusterError::EmptyCluster);
    }

    #[test]
    fn canonical_json() {
        let cs = ClusterSet::new(
            ClusterOrigin::Predicted,
            Some(0.9),
            vec![vec![FindingId(4)], vec![FindingId(3), FindingId(1), FindingId(2)]],
        )
        .unwrap();
        let json = serde_json::to_string(&cs).unwrap();
        assert_eq!(
            json,
            r#"{"origin":"predicted","threshold":0.9,"clusters":[[1,2,3],[4]]}"#
        );
        let truth = ClusterSet::new(ClusterOrigin::GroundTruth, None, vec![vec![FindingId(1)]]).unwrap();
        assert_eq!(
            serde_json::to_string(&truth).unwrap(),
            r#"{"origin":"ground_truth","clusters":[[1]]}"#
        );
        assert_eq!(ClusterSet::from_json_str(&json).unwrap(), cs);
    }
}
