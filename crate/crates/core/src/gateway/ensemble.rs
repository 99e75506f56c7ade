//! Consensus fusion of several backends' outputs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{normalize_answer, Detection};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    /// Two detections pair up when their IoU is at least this.
    pub iou_threshold: f64,
    /// Clusters need detections from at least this many distinct backends.
    pub min_votes: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            min_votes: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Highest-scoring member; its box stands for the cluster.
    pub representative: Detection,
    pub members: Vec<Detection>,
    pub score_sum: f64,
    pub backends: BTreeSet<String>,
}

fn detection_order(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    b.score()
        .total_cmp(&a.score())
        .then_with(|| {
            a.bbox
                .coords()
                .iter()
                .zip(b.bbox.coords().iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .then_with(|| a.source_backend.cmp(&b.source_backend))
}

/// Greedy IoU clustering. Detections are visited by descending score; each
/// joins the first cluster whose representative it overlaps by at least the
/// threshold, or seeds a new one. Clusters backed by fewer than `min_votes`
/// distinct backends are dropped; the rest come back by descending score sum.
///
/// The visiting order is fully determined by the detections themselves, so
/// the result does not depend on input order.
pub fn fuse_detections(detections: &[Detection], config: &EnsembleConfig) -> Vec<Cluster> {
    let mut sorted: Vec<&Detection> = detections.iter().collect();
    sorted.sort_by(|a, b| detection_order(a, b));

    let mut clusters: Vec<Cluster> = Vec::new();
    for det in sorted {
        let home = clusters
            .iter_mut()
            .find(|c| c.representative.bbox.iou(&det.bbox) >= config.iou_threshold);
        match home {
            Some(cluster) => {
                cluster.score_sum += det.score();
                cluster.backends.insert(det.source_backend.clone());
                cluster.members.push(det.clone());
            }
            None => clusters.push(Cluster {
                representative: det.clone(),
                members: vec![det.clone()],
                score_sum: det.score(),
                backends: BTreeSet::from([det.source_backend.clone()]),
            }),
        }
    }
    clusters.retain(|c| c.backends.len() >= config.min_votes);
    clusters.sort_by(|a, b| b.score_sum.total_cmp(&a.score_sum));
    clusters
}

/// Plurality vote over normalized answers. `ballots` pairs each answer with
/// its backend's priority; ties go to the answer backed by the lowest
/// priority number. Returns `None` for an empty ballot.
pub fn majority_vote(ballots: &[(u32, String)]) -> Option<String> {
    let mut tally: BTreeMap<String, (usize, u32)> = BTreeMap::new();
    for (priority, answer) in ballots {
        let entry = tally
            .entry(normalize_answer(answer))
            .or_insert((0, u32::MAX));
        entry.0 += 1;
        entry.1 = entry.1.min(*priority);
    }
    tally
        .into_iter()
        .max_by(|(_, (ca, pa)), (_, (cb, pb))| ca.cmp(cb).then_with(|| pb.cmp(pa)))
        .map(|(answer, _)| answer)
}
