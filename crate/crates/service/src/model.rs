use std::collections::{BTreeMap, BTreeSet};

use dedupsec::{evaluate, ClusterOrigin, ClusterSet, Dataset, Finding, FindingId};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

/// Explanations for incorrect predictions that every session starts with.
pub const BUILTIN_REASONS: [(u32, &str); 9] = [
    (1, "In the context of the product, this result can only be identified by somebody knowing the context of the application."),
    (2, "Different tools use a different phrasing to explain the same issue."),
    (3, "The tools sometimes provide no description of the finding. Hence, the features could only rely on the title."),
    (4, "Some tools provide more and some tools provide less text in their description, which reduces the impact of actual relevant features."),
    (5, "Additional review necessary due to an unknown reason for the decision."),
    (6, "The sub-optimally constructed feature string could be the reason for the incorrect clustering."),
    (7, "The tool describes the finding precisely according to the location of occurrence. Hence the finding text is over-specified."),
    (8, "Human annotation error and the suggested clustering by the algorithm is correct."),
    (9, "One tool addresses the issue of using an eval function, while the other one has the problem of user controlled values in it. However, it would not be considered as a major false positive."),
];

/// First ID handed out to reasons added by annotators.
pub const FIRST_CUSTOM_REASON: u32 = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonTag {
    pub reason_id: u32,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pending,
    Incorrect,
    CorrectAnnotationError,
}

/// One false-positive prediction waiting for (or carrying) an explanation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub predicted_cluster: Vec<FindingId>,
    pub matched_truth: Option<Vec<FindingId>>,
    pub verdict: Verdict,
    pub reasons: BTreeSet<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Review {
    pub predicted: ClusterSet,
    pub items: Vec<ReviewItem>,
}

/// Everything the service knows about one annotation session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub dataset: Dataset,
    pub named_clusters: BTreeMap<String, BTreeSet<FindingId>>,
    pub custom_reasons: BTreeMap<u32, String>,
    pub review: Option<Review>,
    pub created_at: String,
    pub updated_at: String,
}

/// A state change. Sessions are rebuilt by replaying these in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Created {
        session_id: String,
        dataset: Dataset,
        at: String,
    },
    FindingsAdded {
        findings: Vec<Finding>,
        at: String,
    },
    Assigned {
        cluster: String,
        finding_ids: Vec<FindingId>,
        at: String,
    },
    ReasonAdded {
        reason_id: u32,
        text: String,
        at: String,
    },
    ReviewOpened {
        review: Review,
        at: String,
    },
    Tagged {
        index: usize,
        verdict: Verdict,
        reasons: BTreeSet<u32>,
        at: String,
    },
}

impl Session {
    pub fn from_created(event: &Event) -> Option<Session> {
        match event {
            Event::Created {
                session_id,
                dataset,
                at,
            } => Some(Session {
                session_id: session_id.clone(),
                dataset: dataset.clone(),
                named_clusters: BTreeMap::new(),
                custom_reasons: BTreeMap::new(),
                review: None,
                created_at: at.clone(),
                updated_at: at.clone(),
            }),
            _ => None,
        }
    }

    /// Apply an event that has already been validated. Replay relies on this
    /// being deterministic.
    pub fn apply(&mut self, event: &Event) {
        match event {
            Event::Created { .. } => {}
            Event::FindingsAdded { findings, at } => {
                self.dataset.findings.extend(findings.iter().cloned());
                self.updated_at = at.clone();
            }
            Event::Assigned {
                cluster,
                finding_ids,
                at,
            } => {
                let moved: BTreeSet<FindingId> = finding_ids.iter().copied().collect();
                for members in self.named_clusters.values_mut() {
                    members.retain(|id| !moved.contains(id));
                }
                self.named_clusters.entry(cluster.clone()).or_default().extend(moved);
                self.named_clusters.retain(|_, members| !members.is_empty());
                self.updated_at = at.clone();
            }
            Event::ReasonAdded { reason_id, text, at } => {
                self.custom_reasons.insert(*reason_id, text.clone());
                self.updated_at = at.clone();
            }
            Event::ReviewOpened { review, at } => {
                self.review = Some(review.clone());
                self.updated_at = at.clone();
            }
            Event::Tagged {
                index,
                verdict,
                reasons,
                at,
            } => {
                if let Some(item) = self.review.as_mut().and_then(|r| r.items.get_mut(*index)) {
                    item.verdict = *verdict;
                    item.reasons = reasons.clone();
                }
                self.updated_at = at.clone();
            }
        }
    }

    pub fn assigned(&self) -> BTreeSet<FindingId> {
        self.named_clusters.values().flatten().copied().collect()
    }

    pub fn unassigned(&self) -> Vec<FindingId> {
        let assigned = self.assigned();
        self.dataset
            .findings
            .iter()
            .map(|f| f.id)
            .filter(|id| !assigned.contains(id))
            .collect()
    }

    pub fn reasons(&self) -> Vec<ReasonTag> {
        BUILTIN_REASONS
            .iter()
            .map(|(id, text)| ReasonTag {
                reason_id: *id,
                text: text.to_string(),
            })
            .chain(self.custom_reasons.iter().map(|(id, text)| ReasonTag {
                reason_id: *id,
                text: text.clone(),
            }))
            .collect()
    }

    pub fn knows_reason(&self, id: u32) -> bool {
        BUILTIN_REASONS.iter().any(|(r, _)| *r == id) || self.custom_reasons.contains_key(&id)
    }

    pub fn next_reason_id(&self) -> u32 {
        self.custom_reasons
            .keys()
            .next_back()
            .map(|id| id + 1)
            .unwrap_or(FIRST_CUSTOM_REASON)
    }

    pub fn next_finding_id(&self) -> u64 {
        self.dataset.findings.iter().map(|f| f.id.0 + 1).max().unwrap_or(1)
    }

    /// The annotation as a ground-truth cluster set. Fails while any finding
    /// is unassigned.
    pub fn ground_truth(&self) -> Result<ClusterSet, ServiceError> {
        let unassigned = self.unassigned();
        if !unassigned.is_empty() {
            return Err(ServiceError::IncompleteAnnotation(unassigned));
        }
        ClusterSet::new(
            ClusterOrigin::GroundTruth,
            None,
            self.named_clusters.values().map(|c| c.iter().copied()),
        )
        .map_err(|e| ServiceError::Internal(e.to_string()))
    }

    /// Review items for every predicted cluster without an exact twin in
    /// the ground truth.
    pub fn build_review(&self, predicted: ClusterSet) -> Result<Review, ServiceError> {
        let truth = self.ground_truth()?;
        evaluate(&predicted, &truth).map_err(|e| ServiceError::UniverseMismatch(e.to_string()))?;
        let truth_clusters: BTreeSet<&[FindingId]> = truth.clusters().iter().map(Vec::as_slice).collect();
        let items = predicted
            .clusters()
            .iter()
            .filter(|c| !truth_clusters.contains(c.as_slice()))
            .map(|c| ReviewItem {
                predicted_cluster: c.clone(),
                matched_truth: max_overlap(c, truth.clusters()).map(<[FindingId]>::to_vec),
                verdict: Verdict::Pending,
                reasons: BTreeSet::new(),
            })
            .collect();
        Ok(Review { predicted, items })
    }

    pub fn reason_counts(&self) -> BTreeMap<u32, usize> {
        let mut counts: BTreeMap<u32, usize> = self.reasons().iter().map(|r| (r.reason_id, 0)).collect();
        if let Some(review) = &self.review {
            for item in &review.items {
                for r in &item.reasons {
                    *counts.entry(*r).or_default() += 1;
                }
            }
        }
        counts
    }
}

/// The cluster sharing the most findings with `cluster`; ties go to the
/// cluster with the smallest finding ID. `None` when nothing overlaps.
pub fn max_overlap<'a>(cluster: &[FindingId], candidates: &'a [Vec<FindingId>]) -> Option<&'a [FindingId]> {
    let members: BTreeSet<FindingId> = cluster.iter().copied().collect();
    candidates
        .iter()
        .map(|c| (c.iter().filter(|id| members.contains(id)).count(), c))
        .filter(|(n, _)| *n > 0)
        .max_by(|(na, a), (nb, b)| na.cmp(nb).then_with(|| b[0].cmp(&a[0])))
        .map(|(_, c)| c.as_slice())
}

/// Findings grouped differently by two annotators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disagreement {
    pub finding_id: FindingId,
    pub cluster_a: Option<String>,
    pub members_a: Vec<FindingId>,
    pub cluster_b: Option<String>,
    pub members_b: Vec<FindingId>,
}

/// Compare the clusters around every finding in two sessions over the same
/// findings. Unassigned findings count as alone.
pub fn diff_sessions(a: &Session, b: &Session) -> Result<Vec<Disagreement>, ServiceError> {
    if a.dataset.ids() != b.dataset.ids() {
        return Err(ServiceError::UniverseMismatch(
            "sessions annotate different findings".into(),
        ));
    }
    let home = |s: &Session, id: FindingId| -> (Option<String>, Vec<FindingId>) {
        s.named_clusters
            .iter()
            .find(|(_, m)| m.contains(&id))
            .map(|(name, m)| (Some(name.clone()), m.iter().copied().collect()))
            .unwrap_or((None, vec![id]))
    };
    Ok(a.dataset
        .ids()
        .into_iter()
        .filter_map(|id| {
            let (cluster_a, members_a) = home(a, id);
            let (cluster_b, members_b) = home(b, id);
            (members_a != members_b).then_some(Disagreement {
                finding_id: id,
                cluster_a,
                members_a,
                cluster_b,
                members_b,
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(xs: &[u64]) -> Vec<FindingId> {
        xs.iter().map(|&i| FindingId(i)).collect()
    }

    #[test]
    fn overlap_prefers_larger_then_smaller_id() {
        let truth = vec![ids(&[1, 2]), ids(&[3, 4]), ids(&[5])];
        assert_eq!(max_overlap(&ids(&[2, 3]), &truth), Some(&ids(&[1, 2])[..]));
        assert_eq!(max_overlap(&ids(&[3, 4, 1]), &truth), Some(&ids(&[3, 4])[..]));
        assert_eq!(max_overlap(&ids(&[9]), &truth), None);
    }

    #[test]
    fn builtin_reasons_are_numbered_one_to_nine() {
        let ids: Vec<u32> = BUILTIN_REASONS.iter().map(|(id, _)| *id).collect();
        assert_eq!(ids, (1..=9).collect::<Vec<_>>());
    }
}
