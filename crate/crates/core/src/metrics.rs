//! Partition agreement scores and end-to-end property accuracy.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::GroupingOutput;
use crate::room_typing::RoomType;
use crate::synthgen::GroundTruth;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("label vectors differ in length: {truth} vs {pred}")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("need at least {needed} items, got {got}")]
    TooFewItems { needed: usize, got: usize },
    #[error("no ground truth for {0}")]
    MissingTruth(String),
}

/// Joint counts of two labelings with their marginals.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Contingency {
    pub joint: BTreeMap<(usize, usize), usize>,
    pub truth_sizes: BTreeMap<usize, usize>,
    pub pred_sizes: BTreeMap<usize, usize>,
    pub n: usize,
}

pub fn contingency(truth: &[usize], pred: &[usize]) -> Result<Contingency, MetricError> {
    if truth.len() != pred.len() {
        return Err(MetricError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    let mut t = Contingency {
        n: truth.len(),
        ..Contingency::default()
    };
    for (&a, &b) in truth.iter().zip(pred) {
        *t.joint.entry((a, b)).or_insert(0) += 1;
        *t.truth_sizes.entry(a).or_insert(0) += 1;
        *t.pred_sizes.entry(b).or_insert(0) += 1;
    }
    Ok(t)
}

fn choose2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index in `[-1, 1]`; 1.0 when both labelings are trivial
/// in the same way.
pub fn adjusted_rand_index(truth: &[usize], pred: &[usize]) -> Result<f64, MetricError> {
    let t = contingency(truth, pred)?;
    if t.n < 2 {
        return Err(MetricError::TooFewItems { needed: 2, got: t.n });
    }
    let index: f64 = t.joint.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = t.truth_sizes.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = t.pred_sizes.values().map(|&c| choose2(c)).sum();
    let expected = sum_a * sum_b / choose2(t.n);
    let max = 0.5 * (sum_a + sum_b);
    let denom = max - expected;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

/// Adjusted Rand index mapped affinely onto `[0, 1]`.
pub fn normalized_ari(truth: &[usize], pred: &[usize]) -> Result<f64, MetricError> {
    Ok((adjusted_rand_index(truth, pred)? + 1.0) / 2.0)
}

fn entropy<'a>(sizes: impl Iterator<Item = &'a usize>, n: f64) -> f64 {
    sizes
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Homogeneity, completeness and their harmonic mean.
pub fn v_measure(truth: &[usize], pred: &[usize]) -> Result<(f64, f64, f64), MetricError> {
    let t = contingency(truth, pred)?;
    if t.n == 0 {
        return Err(MetricError::TooFewItems { needed: 1, got: 0 });
    }
    let n = t.n as f64;
    let h_truth = entropy(t.truth_sizes.values(), n);
    let h_pred = entropy(t.pred_sizes.values(), n);
    // H(C|K) and H(K|C) from the joint table
    let mut h_truth_given_pred = 0.0;
    let mut h_pred_given_truth = 0.0;
    for (&(a, b), &c) in &t.joint {
        let c = c as f64;
        h_truth_given_pred -= c / n * (c / t.pred_sizes[&b] as f64).ln();
        h_pred_given_truth -= c / n * (c / t.truth_sizes[&a] as f64).ln();
    }
    let h = if h_truth == 0.0 { 1.0 } else { 1.0 - h_truth_given_pred / h_truth };
    let c = if h_pred == 0.0 { 1.0 } else { 1.0 - h_pred_given_truth / h_pred };
    let v = if h + c == 0.0 { 0.0 } else { 2.0 * h * c / (h + c) };
    Ok((h, c, v))
}

/// Agreement scores for one labeled set of images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterScores {
    pub ari: f64,
    pub ari_normalized: f64,
    pub completeness: f64,
    pub homogeneity: f64,
    pub images: usize,
    pub v_measure: f64,
}

impl ClusterScores {
    /// Scores two aligned labelings. A single item counts as perfect
    /// agreement.
    pub fn compute(truth: &[usize], pred: &[usize]) -> Result<Self, MetricError> {
        let ari = if truth.len() == 1 && pred.len() == 1 {
            1.0
        } else {
            adjusted_rand_index(truth, pred)?
        };
        let (homogeneity, completeness, v_measure) = v_measure(truth, pred)?;
        Ok(ClusterScores {
            ari,
            ari_normalized: (ari + 1.0) / 2.0,
            completeness,
            homogeneity,
            images: truth.len(),
            v_measure,
        })
    }
}

/// Aligned truth and predicted labels over the retained images of one room
/// type. Truth labels index rooms, predicted labels index groups.
fn room_type_labels(
    pred: &GroupingOutput,
    room_type: &str,
    truth: &GroundTruth,
) -> Result<(Vec<usize>, Vec<usize>), MetricError> {
    let mut room_label: BTreeMap<(RoomType, usize), usize> = BTreeMap::new();
    let mut t = Vec::new();
    let mut p = Vec::new();
    for (g, group) in pred.groups(room_type).iter().enumerate() {
        for id in &group.image_ids {
            let room = truth.room_of(id).ok_or_else(|| MetricError::MissingTruth(format!("image `{id}`")))?;
            let next = room_label.len();
            t.push(*room_label.entry(room).or_insert(next));
            p.push(g);
        }
    }
    Ok((t, p))
}

/// Scores per room type for one property; room types without retained
/// images are skipped.
pub fn score_property(
    pred: &GroupingOutput,
    truth: &GroundTruth,
) -> Result<BTreeMap<String, ClusterScores>, MetricError> {
    let mut out = BTreeMap::new();
    for room_type in pred.room_types.keys() {
        let (t, p) = room_type_labels(pred, room_type, truth)?;
        if !t.is_empty() {
            out.insert(room_type.clone(), ClusterScores::compute(&t, &p)?);
        }
    }
    Ok(out)
}

/// Whether one predicted property is fully correct.
///
/// Every room type's groups must match the true rooms on the retained
/// images, and every bedroom group's bed type must equal the bed type of the
/// room most of its images come from.
pub fn property_correct(pred: &GroupingOutput, truth: &GroundTruth) -> Result<bool, MetricError> {
    let mut correct = true;
    for (room_type, groups) in &pred.room_types {
        let mut rooms: HashMap<(RoomType, usize), BTreeSet<&str>> = HashMap::new();
        let mut predicted: BTreeSet<BTreeSet<&str>> = BTreeSet::new();
        for g in groups {
            for id in &g.image_ids {
                let room = truth.room_of(id).ok_or_else(|| MetricError::MissingTruth(format!("image `{id}`")))?;
                rooms.entry(room).or_default().insert(id);
            }
            if !g.image_ids.is_empty() {
                predicted.insert(g.image_ids.iter().map(String::as_str).collect());
            }
        }
        let actual: BTreeSet<BTreeSet<&str>> = rooms.into_values().collect();
        correct &= predicted == actual;

        if room_type != RoomType::Bedroom.as_str() {
            continue;
        }
        for g in groups.iter().filter(|g| !g.image_ids.is_empty()) {
            let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
            for id in &g.image_ids {
                if let Some((RoomType::Bedroom, r)) = truth.room_of(id) {
                    *votes.entry(r).or_insert(0) += 1;
                }
            }
            let best = votes.values().copied().max();
            let room = votes.iter().find(|(_, &c)| Some(c) == best).map(|(&r, _)| r);
            let expected = room.and_then(|r| truth.bed_type(r));
            correct &= expected.is_some() && g.bed_type.as_deref() == expected;
        }
    }
    Ok(correct)
}

/// Fraction of predicted properties that are fully correct.
pub fn property_accuracy(
    preds: &[GroupingOutput],
    truths: &BTreeMap<String, GroundTruth>,
) -> Result<f64, MetricError> {
    if preds.is_empty() {
        return Err(MetricError::TooFewItems { needed: 1, got: 0 });
    }
    let mut hits = 0usize;
    for p in preds {
        let truth = truths
            .get(&p.property_id)
            .ok_or_else(|| MetricError::MissingTruth(format!("property `{}`", p.property_id)))?;
        hits += usize::from(property_correct(p, truth)?);
    }
    Ok(hits as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyRow {
    pub bedrooms: usize,
    pub correct: bool,
    pub property_id: String,
    pub room_types: BTreeMap<String, ClusterScores>,
}

/// Mean bedroom scores over a set of properties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketMeans {
    pub ari: f64,
    pub ari_normalized: f64,
    pub completeness: f64,
    pub homogeneity: f64,
    pub properties: usize,
    pub v_measure: f64,
}

impl BucketMeans {
    fn of(scores: &[ClusterScores]) -> Option<Self> {
        if scores.is_empty() {
            return None;
        }
        let n = scores.len() as f64;
        let mean = |f: fn(&ClusterScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
        Some(BucketMeans {
            ari: mean(|s| s.ari),
            ari_normalized: mean(|s| s.ari_normalized),
            completeness: mean(|s| s.completeness),
            homogeneity: mean(|s| s.homogeneity),
            properties: scores.len(),
            v_measure: mean(|s| s.v_measure),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    /// Bedroom scores by true bedroom count: "1" to "4" and ">4".
    pub by_bedrooms: BTreeMap<String, BucketMeans>,
    pub overall: Option<BucketMeans>,
    pub properties: Vec<PropertyRow>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serializes");
        out.push('\n');
        out
    }
}

pub fn bedroom_bucket(bedrooms: usize) -> String {
    if bedrooms > 4 {
        ">4".into()
    } else {
        bedrooms.to_string()
    }
}

/// Evaluates every prediction against its truth; rows keep input order.
pub fn evaluate(preds: &[GroupingOutput], truths: &BTreeMap<String, GroundTruth>) -> Result<MetricReport, MetricError> {
    let mut rows = Vec::with_capacity(preds.len());
    let mut buckets: BTreeMap<String, Vec<ClusterScores>> = BTreeMap::new();
    let mut all = Vec::new();
    for p in preds {
        let truth = truths
            .get(&p.property_id)
            .ok_or_else(|| MetricError::MissingTruth(format!("property `{}`", p.property_id)))?;
        let room_types = score_property(p, truth)?;
        let bedrooms = truth.bedroom_count();
        if let Some(s) = room_types.get(RoomType::Bedroom.as_str()) {
            buckets.entry(bedroom_bucket(bedrooms)).or_default().push(*s);
            all.push(*s);
        }
        rows.push(PropertyRow {
            bedrooms,
            correct: property_correct(p, truth)?,
            property_id: p.property_id.clone(),
            room_types,
        });
    }
    let accuracy = if rows.is_empty() {
        0.0
    } else {
        rows.iter().filter(|r| r.correct).count() as f64 / rows.len() as f64
    };
    Ok(MetricReport {
        accuracy,
        by_bedrooms: buckets
            .into_iter()
            .filter_map(|(k, v)| BucketMeans::of(&v).map(|m| (k, m)))
            .collect(),
        overall: BucketMeans::of(&all),
        properties: rows,
    })
}
