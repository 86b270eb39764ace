//! Average precision over FULL / PRES / ABS description partitions, and the
//! corruption robustness summaries mFULL and rFULL.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{AnnotationDoc, DescriptionType};
use crate::geometry::{iou, BBox};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no ground truth in partition {0}")]
    EmptyGroundTruth(Partition),
    #[error("IoU threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("prediction score {0} is not in [0, 1]")]
    InvalidScore(f64),
    #[error("prediction references unknown image {0}")]
    UnknownImage(String),
    #[error("empty list")]
    EmptyList,
    #[error("clean score must be positive, got {0}")]
    ZeroCleanScore(f64),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub image_id: String,
    pub bbox: BBox,
    #[serde(alias = "description_id")]
    pub category_id: u32,
    pub score: f64,
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>, EvalError> {
    let err = |reason: String| EvalError::Io {
        path: path.display().to_string(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    pub image_id: String,
    pub bbox: BBox,
    pub category_id: u32,
    pub description_type: Option<DescriptionType>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalSet {
    pub image_ids: Vec<String>,
    pub ground_truth: Vec<GtObject>,
    pub predictions: Vec<Prediction>,
}

impl EvalSet {
    pub fn from_doc(doc: &AnnotationDoc, predictions: Vec<Prediction>) -> Result<Self, EvalError> {
        let es = Self {
            image_ids: doc.images.iter().map(|i| i.id.clone()).collect(),
            ground_truth: doc
                .annotations
                .iter()
                .map(|a| GtObject {
                    image_id: a.image_id.clone(),
                    bbox: a.bbox,
                    category_id: a.category_id,
                    description_type: a.description_type,
                })
                .collect(),
            predictions,
        };
        es.validate()?;
        Ok(es)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let ids: std::collections::HashSet<&str> = self.image_ids.iter().map(String::as_str).collect();
        for p in &self.predictions {
            if !(0.0..=1.0).contains(&p.score) {
                return Err(EvalError::InvalidScore(p.score));
            }
            if !ids.contains(p.image_id.as_str()) {
                return Err(EvalError::UnknownImage(p.image_id.clone()));
            }
        }
        Ok(())
    }

    /// Description type of each label, taken from its first typed annotation.
    fn label_types(&self) -> HashMap<u32, DescriptionType> {
        let mut m = HashMap::new();
        for g in &self.ground_truth {
            if let Some(t) = g.description_type {
                m.entry(g.category_id).or_insert(t);
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Partition {
    Full,
    Pres,
    Abs,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Full, Partition::Pres, Partition::Abs];

    fn admits(&self, t: Option<DescriptionType>) -> bool {
        match self {
            Partition::Full => true,
            Partition::Pres => t == Some(DescriptionType::Presence),
            Partition::Abs => t == Some(DescriptionType::Absence),
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::Full => "FULL",
            Partition::Pres => "PRES",
            Partition::Abs => "ABS",
        })
    }
}

impl FromStr for Partition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "FULL" => Ok(Partition::Full),
            "PRES" => Ok(Partition::Pres),
            "ABS" => Ok(Partition::Abs),
            _ => Err(format!("unknown partition {s:?}")),
        }
    }
}

/// 0.50, 0.55, ..., 0.95
pub fn default_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

pub const RECALL_POINTS: usize = 101;

/// Area under the interpolated precision/recall curve, sampled at 101
/// recall points. `hits` are the TP flags of detections in descending score
/// order.
pub fn interpolated_ap(hits: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(hits.len());
    let mut precision = Vec::with_capacity(hits.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &h in hits {
        if h {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut total = 0.0;
    let mut idx = 0;
    for r in 0..RECALL_POINTS {
        let target = r as f64 / (RECALL_POINTS - 1) as f64;
        while idx < recall.len() && recall[idx] < target - 1e-12 {
            idx += 1;
        }
        if idx < recall.len() {
            total += precision[idx];
        }
    }
    total / RECALL_POINTS as f64
}

/// Greedy one-to-one matching at one threshold. Returns TP flags in score
/// order for the given predictions against the given ground truth.
fn match_label(gts: &[&GtObject], preds: &[&Prediction], threshold: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score).then(a.cmp(&b)));
    let mut by_image: HashMap<&str, Vec<(usize, &GtObject)>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_image.entry(g.image_id.as_str()).or_default().push((i, g));
    }
    let mut taken = vec![false; gts.len()];
    order
        .into_iter()
        .map(|pi| {
            let p = preds[pi];
            let mut best: Option<(usize, f64)> = None;
            for &(gi, g) in by_image.get(p.image_id.as_str()).map(Vec::as_slice).unwrap_or(&[]) {
                if taken[gi] {
                    continue;
                }
                let v = iou(&p.bbox, &g.bbox);
                if v >= threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((gi, v));
                }
            }
            match best {
                Some((gi, _)) => {
                    taken[gi] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// Mean over thresholds of the mean over labels of the interpolated AP.
/// Labels without ground truth in the partition are ignored.
pub fn evaluate_ap(es: &EvalSet, iou_thresholds: &[f64], partition: Partition) -> Result<f64, EvalError> {
    for &t in iou_thresholds {
        if !(t > 0.0 && t <= 1.0) {
            return Err(EvalError::InvalidThreshold(t));
        }
    }
    if iou_thresholds.is_empty() {
        return Err(EvalError::EmptyList);
    }
    es.validate()?;
    let types = es.label_types();
    let mut gt_by_label: BTreeMap<u32, Vec<&GtObject>> = BTreeMap::new();
    for g in es.ground_truth.iter().filter(|g| partition.admits(g.description_type)) {
        gt_by_label.entry(g.category_id).or_default().push(g);
    }
    if gt_by_label.is_empty() {
        return Err(EvalError::EmptyGroundTruth(partition));
    }
    let mut pred_by_label: HashMap<u32, Vec<&Prediction>> = HashMap::new();
    for p in &es.predictions {
        let t = types.get(&p.category_id).copied();
        if partition.admits(t) {
            pred_by_label.entry(p.category_id).or_default().push(p);
        }
    }
    let mut total = 0.0;
    for &t in iou_thresholds {
        let mut sum = 0.0;
        for (label, gts) in &gt_by_label {
            let preds = pred_by_label.get(label).map(Vec::as_slice).unwrap_or(&[]);
            sum += interpolated_ap(&match_label(gts, preds, t), gts.len());
        }
        total += sum / gt_by_label.len() as f64;
    }
    Ok(total / iou_thresholds.len() as f64)
}

/// Mean over corruption types.
pub fn mfull(full_values: &[f64]) -> Result<f64, EvalError> {
    if full_values.is_empty() {
        return Err(EvalError::EmptyList);
    }
    Ok(full_values.iter().sum::<f64>() / full_values.len() as f64)
}

/// Corrupted score as a percentage of the clean score.
pub fn rfull(mfull_v: f64, full_v: f64) -> Result<f64, EvalError> {
    if !(full_v > 0.0) {
        return Err(EvalError::ZeroCleanScore(full_v));
    }
    Ok(100.0 * mfull_v / full_v)
}

pub fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// AP per partition on the 0-100 scale; absent when the partition has no
    /// ground truth.
    pub ap: BTreeMap<Partition, Option<f64>>,
    /// FULL per corruption set.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub corrupted_full: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mfull: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rfull: Option<f64>,
}

/// Clean AP per partition plus, when corrupted predictions are supplied,
/// FULL per corruption type, mFULL over types and rFULL. Keys of
/// `corrupted` are `kind` or `kind@severity`; severities of one kind are
/// averaged before averaging over kinds.
pub fn metrics_report(
    doc: &AnnotationDoc,
    clean: Vec<Prediction>,
    corrupted: &BTreeMap<String, Vec<Prediction>>,
    thresholds: &[f64],
) -> Result<MetricsReport, EvalError> {
    let es = EvalSet::from_doc(doc, clean)?;
    let mut ap = BTreeMap::new();
    for part in Partition::ALL {
        let v = match evaluate_ap(&es, thresholds, part) {
            Ok(v) => Some(100.0 * v),
            Err(EvalError::EmptyGroundTruth(_)) => None,
            Err(e) => return Err(e),
        };
        ap.insert(part, v);
    }
    let mut corrupted_full = BTreeMap::new();
    let mut per_kind: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (name, preds) in corrupted {
        let es = EvalSet::from_doc(doc, preds.clone())?;
        let full = 100.0 * evaluate_ap(&es, thresholds, Partition::Full)?;
        corrupted_full.insert(name.clone(), full);
        let kind = name.split('@').next().unwrap_or(name).to_string();
        per_kind.entry(kind).or_default().push(full);
    }
    let (m, r) = if per_kind.is_empty() {
        (None, None)
    } else {
        let kinds: Vec<f64> = per_kind.values().map(|v| mfull(v)).collect::<Result<_, _>>()?;
        let m = mfull(&kinds)?;
        let clean_full = ap[&Partition::Full].unwrap_or(0.0);
        (Some(m), rfull(m, clean_full).ok())
    };
    Ok(MetricsReport {
        ap,
        corrupted_full,
        mfull: m,
        rfull: r,
    })
}
