//! Polyphonic detection score over a grid of operating points.
//!
//! Detections are validated in two stages: a detection counts as relevant
//! when enough of it lands inside the ground-truth union of its class and
//! clip (detection tolerance), and a ground-truth event counts as recalled
//! when enough of it is covered by relevant detections (ground-truth
//! tolerance). Non-relevant detections are false positives, expressed per
//! hour of audio. Each class contributes the area under the best-so-far
//! staircase of (eFPR, TPR) points up to an eFPR ceiling; the score is the
//! mean over classes minus an optional variance penalty, clamped at zero.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dataset::merge_intervals;
use crate::error::{Error, Result};
use crate::eval::{overlap_with, EventList, EventRole, ScoreTrack};

#[derive(Clone, Copy, Debug)]
pub struct PsdsConfig {
    /// Fraction of a detection that must overlap ground truth.
    pub dtc: f64,
    /// Fraction of a ground-truth event that must be covered.
    pub gtc: f64,
    /// eFPR ceiling in false positives per hour.
    pub max_efpr: f64,
    /// Weight on the across-class standard deviation.
    pub variance_penalty: f64,
}

impl Default for PsdsConfig {
    fn default() -> Self {
        PsdsConfig {
            dtc: 0.7,
            gtc: 0.7,
            max_efpr: 100.0,
            variance_penalty: 0.0,
        }
    }
}

impl PsdsConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("dtc", self.dtc), ("gtc", self.gtc)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::invalid(format!("psds: {name} must be in (0, 1]")));
            }
        }
        if !(self.max_efpr > 0.0 && self.max_efpr.is_finite()) {
            return Err(Error::invalid("psds: max_efpr must be positive"));
        }
        if !(self.variance_penalty >= 0.0) {
            return Err(Error::invalid("psds: variance_penalty must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassCurve {
    pub class_id: String,
    /// One (eFPR, TPR) point per operating point, in threshold order.
    pub points: Vec<(f64, f64)>,
    /// Normalized staircase area up to the eFPR ceiling.
    pub auc: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PsdsReport {
    pub value: f64,
    pub mean: f64,
    pub std: f64,
    pub per_class: Vec<ClassCurve>,
    /// Classes with no ground-truth events (recall undefined).
    pub skipped: Vec<String>,
}

/// Evenly spaced detection thresholds covering [-1, 1] inclusive.
pub fn threshold_grid(n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect()
}

/// Thresholds each score track at each threshold, producing one detection
/// list per operating point.
pub fn detection_grid(tracks: &[ScoreTrack], thresholds: &[f64]) -> Result<Vec<(f64, EventList)>> {
    thresholds
        .iter()
        .map(|&thr| {
            let mut events = Vec::new();
            for track in tracks {
                events.extend(crate::eval::extract_events(track, thr));
            }
            Ok((thr, EventList::new(events, EventRole::Detection)?))
        })
        .collect()
}

/// TPR and false-positive count for one class at one operating point.
/// The detection tolerance compares against the merged ground-truth union;
/// the ground-truth tolerance checks each raw event individually.
fn class_operating_point(
    detections: &EventList,
    merged_by_clip: &BTreeMap<&str, Vec<(f64, f64)>>,
    raw_by_clip: &BTreeMap<&str, Vec<(f64, f64)>>,
    n_gt: usize,
    class_id: &str,
    cfg: &PsdsConfig,
) -> (f64, usize) {
    let empty: Vec<(f64, f64)> = Vec::new();
    let mut passing_by_clip: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    let mut false_positives = 0usize;
    for d in detections.events.iter().filter(|d| d.class_id == class_id) {
        let gt = merged_by_clip.get(d.clip_id.as_str()).unwrap_or(&empty);
        let inter = overlap_with(d.onset, d.offset, gt);
        if inter >= cfg.dtc * d.duration() {
            passing_by_clip
                .entry(d.clip_id.as_str())
                .or_default()
                .push((d.onset, d.offset));
        } else {
            false_positives += 1;
        }
    }
    let mut recalled = 0usize;
    for (clip, gt) in raw_by_clip {
        let Some(passing) = passing_by_clip.get(clip) else {
            continue;
        };
        let merged = merge_intervals(passing);
        for &(on, off) in gt {
            if overlap_with(on, off, &merged) >= cfg.gtc * (off - on) {
                recalled += 1;
            }
        }
    }
    (recalled as f64 / n_gt as f64, false_positives)
}

/// Area under the best-so-far staircase of (eFPR, TPR) points on
/// [0, max_efpr], divided by max_efpr. The curve starts at (0, 0).
fn staircase_area(points: &[(f64, f64)], max_efpr: f64) -> f64 {
    let mut sorted: Vec<(f64, f64)> = points.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut area = 0.0;
    let mut best = 0.0f64;
    let mut at = 0.0f64;
    for &(e, t) in &sorted {
        let e = e.min(max_efpr);
        if e > at {
            area += best * (e - at);
            at = e;
        }
        if t > best {
            best = t;
        }
    }
    if at < max_efpr {
        area += best * (max_efpr - at);
    }
    area / max_efpr
}

/// Scores a detection grid against ground truth. `dataset_duration_s` is
/// the total audio length behind the detections and sets the eFPR scale.
pub fn psds1(
    operating_points: &[(f64, EventList)],
    ground_truth: &EventList,
    class_ids: &[String],
    dataset_duration_s: f64,
    cfg: &PsdsConfig,
) -> Result<PsdsReport> {
    cfg.validate()?;
    ground_truth.expect_role(EventRole::GroundTruth)?;
    if operating_points.is_empty() {
        return Err(Error::invalid("psds: no operating points"));
    }
    for (_, list) in operating_points {
        list.expect_role(EventRole::Detection)?;
    }
    if !(dataset_duration_s > 0.0 && dataset_duration_s.is_finite()) {
        return Err(Error::invalid("psds: dataset duration must be positive"));
    }
    if class_ids.is_empty() {
        return Err(Error::invalid("psds: no classes to evaluate"));
    }
    let hours = dataset_duration_s / 3600.0;

    let mut per_class = Vec::new();
    let mut skipped = Vec::new();
    for class_id in class_ids {
        // Ground truth union per clip; merging makes overlap sums exact.
        let mut gt_by_clip: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
        let mut n_gt = 0usize;
        for e in ground_truth.events.iter().filter(|e| &e.class_id == class_id) {
            gt_by_clip
                .entry(e.clip_id.as_str())
                .or_default()
                .push((e.onset, e.offset));
            n_gt += 1;
        }
        if n_gt == 0 {
            skipped.push(class_id.clone());
            continue;
        }
        let merged_by_clip: BTreeMap<&str, Vec<(f64, f64)>> = gt_by_clip
            .iter()
            .map(|(clip, iv)| (*clip, merge_intervals(iv)))
            .collect();

        let mut points = Vec::with_capacity(operating_points.len());
        for (_, detections) in operating_points {
            let (tpr, fps) = class_operating_point(
                detections,
                &merged_by_clip,
                &gt_by_clip,
                n_gt,
                class_id,
                cfg,
            );
            points.push((fps as f64 / hours, tpr));
        }
        let auc = staircase_area(&points, cfg.max_efpr);
        per_class.push(ClassCurve {
            class_id: class_id.clone(),
            points,
            auc,
        });
    }
    if per_class.is_empty() {
        return Err(Error::invalid("psds: no class has ground truth"));
    }

    let n = per_class.len() as f64;
    let mean = per_class.iter().map(|c| c.auc).sum::<f64>() / n;
    let var = per_class.iter().map(|c| (c.auc - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let value = (mean - cfg.variance_penalty * std).max(0.0);
    Ok(PsdsReport {
        value,
        mean,
        std,
        per_class,
        skipped,
    })
}
