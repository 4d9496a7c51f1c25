//! Localization quality, storage and timing measurements.
//!
//! Each top-1 node match becomes a labeled score: positive when the query
//! node and the database node stand for the same ground-truth landmark.
//! Sweeping a threshold over the scores gives the precision-recall curve.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::json::ser_quantized;
use crate::mapping::AssociationRecord;
use crate::matching::{LocalizationResult, NodeMatch};
use crate::simulator::GroundTruth;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub score: f64,
    pub positive: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    /// Matches scoring at least this much count as predicted. The first
    /// point of a curve sits at `+inf`: nothing predicted, precision 1.
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
}

/// Ground-truth landmark of each node, by majority over the observations
/// associated with it (ties go to the smaller landmark id). Nodes built only
/// from distractors are absent.
pub fn node_landmarks(associations: &[AssociationRecord], truth: &GroundTruth) -> BTreeMap<NodeId, u32> {
    let lookup = truth.landmark_of();
    let mut votes: BTreeMap<NodeId, BTreeMap<u32, usize>> = BTreeMap::new();
    for a in associations {
        if let Some(&lm) = lookup.get(&(a.frame, a.obs)) {
            *votes.entry(a.node).or_default().entry(lm).or_default() += 1;
        }
    }
    votes
        .into_iter()
        .map(|(node, v)| {
            let best = v
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(lm, _)| *lm)
                .expect("at least one vote");
            (node, best)
        })
        .collect()
}

/// Labels top-1 matches against the landmark oracles of both maps. A query
/// node without a landmark is a negative whatever it matched.
pub fn score_correspondences(
    matches: &[NodeMatch],
    query_landmarks: &BTreeMap<NodeId, u32>,
    db_landmarks: &BTreeMap<NodeId, u32>,
) -> Result<Vec<LabeledScore>> {
    if !matches.is_empty() && (query_landmarks.is_empty() || db_landmarks.is_empty()) {
        return Err(Error::Empty("correspondence oracle"));
    }
    Ok(matches
        .iter()
        .map(|m| LabeledScore {
            score: m.score,
            positive: match (query_landmarks.get(&m.query), db_landmarks.get(&m.db)) {
                (Some(a), Some(b)) => a == b,
                _ => false,
            },
        })
        .collect())
}

/// One point per distinct score, thresholds descending, after the `+inf`
/// anchor.
pub fn pr_curve(labels: &[LabeledScore]) -> Result<Vec<PrPoint>> {
    if labels.is_empty() {
        return Err(Error::Empty("labeled scores"));
    }
    if labels.iter().any(|l| !l.score.is_finite()) {
        return Err(Error::NonFinite("match score"));
    }
    let positives = labels.iter().filter(|l| l.positive).count();
    let mut sorted = labels.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut curve = vec![PrPoint {
        threshold: f64::INFINITY,
        precision: 1.0,
        recall: 0.0,
        tp: 0,
        fp: 0,
    }];
    let (mut tp, mut fp) = (0, 0);
    for (i, l) in sorted.iter().enumerate() {
        if l.positive {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_score = sorted.get(i + 1).is_none_or(|next| next.score != l.score);
        if last_of_score {
            curve.push(point(l.score, tp, fp, positives));
        }
    }
    Ok(curve)
}

fn point(threshold: f64, tp: usize, fp: usize, positives: usize) -> PrPoint {
    PrPoint {
        threshold,
        precision: if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        },
        recall: if positives == 0 {
            0.0
        } else {
            tp as f64 / positives as f64
        },
        tp,
        fp,
    }
}

/// Trapezoidal area under precision over recall. Recall steps are taken from
/// the true-positive counts, so a curve at precision 1 has area exactly 1.
/// Hand-built curves without counts (all `tp` zero) fall back to the recall
/// values.
pub fn auc(curve: &[PrPoint]) -> Result<f64> {
    if curve.len() < 2 {
        return Err(Error::NotEnoughContext("a PR curve needs at least two points"));
    }
    let positives = curve.iter().map(|p| p.tp).max().unwrap_or(0);
    let mut area = 0.0;
    for w in curve.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if positives > 0 {
            area += (b.tp - a.tp) as f64 * (a.precision + b.precision);
        } else {
            area += (b.recall - a.recall) * (a.precision + b.precision);
        }
    }
    let area = if positives > 0 {
        area / (2 * positives) as f64
    } else {
        area / 2.0
    };
    Ok(area.clamp(0.0, 1.0))
}

/// Exact size of a serialized map on disk.
pub fn map_storage_bytes(path: &Path) -> Result<u64> {
    Ok(std::fs::metadata(path)?.len())
}

/// One localization query and whether its top correspondence was right.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub accepted: bool,
    pub top_correct: bool,
}

impl QueryOutcome {
    pub fn judge(
        result: &LocalizationResult,
        query_landmarks: &BTreeMap<NodeId, u32>,
        db_landmarks: &BTreeMap<NodeId, u32>,
    ) -> Self {
        let top_correct = result.top().is_some_and(
            |m| matches!((query_landmarks.get(&m.query), db_landmarks.get(&m.db)), (Some(a), Some(b)) if a == b),
        );
        Self {
            accepted: result.accepted,
            top_correct,
        }
    }
}

/// Fraction of queries that were accepted with a correct top match.
pub fn success_rate(outcomes: &[QueryOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::Empty("queries"));
    }
    let ok = outcomes.iter().filter(|o| o.accepted && o.top_correct).count();
    Ok(ok as f64 / outcomes.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub samples: usize,
    #[serde(serialize_with = "ser_quantized")]
    pub median_ms: f64,
    #[serde(serialize_with = "ser_quantized")]
    pub p95_ms: f64,
}

impl TimingStats {
    /// Median and nearest-rank 95th percentile, after dropping the first
    /// `warmup` samples.
    pub fn from_samples(samples: &[Duration], warmup: usize) -> Self {
        let mut ms: Vec<f64> = samples.iter().skip(warmup).map(|d| d.as_secs_f64() * 1e3).collect();
        if ms.is_empty() {
            return Self::default();
        }
        ms.sort_by(f64::total_cmp);
        let n = ms.len();
        let median = if n % 2 == 1 {
            ms[n / 2]
        } else {
            (ms[n / 2 - 1] + ms[n / 2]) / 2.0
        };
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Self {
            samples: n,
            median_ms: median,
            p95_ms: ms[rank - 1],
        }
    }
}

/// Per-frame wall-clock cost of the localization stages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub descriptor: TimingStats,
    pub matching: TimingStats,
    pub total: TimingStats,
}

pub const TIMING_WARMUP: usize = 10;

#[derive(Clone, Debug, Default)]
pub struct TimingRecorder {
    pub descriptor: Vec<Duration>,
    pub matching: Vec<Duration>,
    pub total: Vec<Duration>,
}

impl TimingRecorder {
    pub fn report(&self) -> TimingReport {
        TimingReport {
            descriptor: TimingStats::from_samples(&self.descriptor, TIMING_WARMUP),
            matching: TimingStats::from_samples(&self.matching, TIMING_WARMUP),
            total: TimingStats::from_samples(&self.total, TIMING_WARMUP),
        }
    }
}

/// `threshold,precision,recall` rows; the anchor's threshold is `inf`.
pub fn pr_csv(curve: &[PrPoint]) -> String {
    let mut out = String::from("threshold,precision,recall\n");
    for p in curve {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.precision, p.recall));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    #[serde(serialize_with = "ser_quantized")]
    pub auc: f64,
    #[serde(serialize_with = "ser_quantized")]
    pub success_rate: f64,
    pub storage_bytes: u64,
    pub timing: TimingReport,
    pub queries: usize,
    pub labeled: usize,
    pub positives: usize,
}
