//! Partial area under the ROC curve on fixed-length segments.
//!
//! Each score track is max-pooled into segments; a segment is positive when
//! any ground-truth event of that class overlaps it. The ROC is integrated
//! only up to a false-positive-rate ceiling and renormalized, so a
//! non-informative scorer lands at max_fpr/2 / max_fpr = 0.05 when
//! max_fpr = 0.1, and a perfect one at 1.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{overlap_with, EventList, EventRole, ScoreTrack};

#[derive(Clone, Copy, Debug)]
pub struct PaurocConfig {
    /// Pooling window in seconds.
    pub segment_duration: f64,
    /// FPR ceiling for the partial integral, in (0, 1].
    pub max_fpr: f64,
}

impl Default for PaurocConfig {
    fn default() -> Self {
        PaurocConfig {
            segment_duration: 1.0,
            max_fpr: 0.1,
        }
    }
}

impl PaurocConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.segment_duration > 0.0 && self.segment_duration.is_finite()) {
            return Err(Error::invalid("pauroc: segment_duration must be positive"));
        }
        if !(self.max_fpr > 0.0 && self.max_fpr <= 1.0) {
            return Err(Error::invalid("pauroc: max_fpr must be in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassPauroc {
    pub class_id: String,
    pub value: f64,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct PaurocReport {
    pub per_class: Vec<ClassPauroc>,
    /// Classes that could not be scored (missing positives or negatives).
    pub skipped: Vec<String>,
    /// Unweighted mean over scored classes.
    pub macro_average: f64,
    pub max_fpr: f64,
}

/// Max-pooled segment scores with overlap-derived labels for one track.
fn segment_pairs(track: &ScoreTrack, gt_events: &[(f64, f64)], seg: f64) -> Vec<(f64, bool)> {
    let n = track.scores.len();
    debug_assert!(n > 0);
    // Segment count follows the frames so a rounding sliver past the last
    // frame start never creates an empty segment.
    let n_seg = ((n - 1) as f64 * track.delta / seg).floor() as usize + 1;
    let duration = n as f64 * track.delta;
    let mut pooled = vec![f64::NEG_INFINITY; n_seg];
    for (t, &s) in track.scores.iter().enumerate() {
        let k = ((t as f64 * track.delta / seg).floor() as usize).min(n_seg - 1);
        if s > pooled[k] {
            pooled[k] = s;
        }
    }
    pooled
        .into_iter()
        .enumerate()
        .map(|(k, score)| {
            let on = k as f64 * seg;
            let off = ((k + 1) as f64 * seg).min(duration);
            (score, overlap_with(on, off, gt_events) > 0.0)
        })
        .collect()
}

/// Area under the ROC restricted to FPR in [0, max_fpr], divided by max_fpr.
/// Ties share one curve point; trapezoids handle the resulting diagonals.
pub fn partial_auroc(pairs: &[(f64, bool)], max_fpr: f64) -> Result<f64> {
    if !(max_fpr > 0.0 && max_fpr <= 1.0) {
        return Err(Error::invalid("partial_auroc: max_fpr must be in (0, 1]"));
    }
    let pos = pairs.iter().filter(|p| p.1).count();
    let neg = pairs.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid(format!(
            "partial_auroc: need both labels, got {pos} positive / {neg} negative"
        )));
    }
    if pairs.iter().any(|p| !p.0.is_finite()) {
        return Err(Error::invalid("partial_auroc: non-finite score"));
    }

    let mut sorted: Vec<(f64, bool)> = pairs.to_vec();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_fpr, mut prev_tpr) = (0.0f64, 0.0f64);
    let mut area = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == score {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let fpr = fp as f64 / neg as f64;
        let tpr = tp as f64 / pos as f64;
        if fpr >= max_fpr {
            // Cut the final trapezoid at the ceiling.
            let t_cut = prev_tpr + (tpr - prev_tpr) * (max_fpr - prev_fpr) / (fpr - prev_fpr);
            area += (max_fpr - prev_fpr) * (prev_tpr + t_cut) / 2.0;
            return Ok(area / max_fpr);
        }
        area += (fpr - prev_fpr) * (prev_tpr + tpr) / 2.0;
        prev_fpr = fpr;
        prev_tpr = tpr;
    }
    // Reached only when max_fpr == 1 and the loop consumed the whole curve.
    Ok(area / max_fpr)
}

/// Scores every class that appears in a track. Classes lacking positive or
/// negative segments are reported in `skipped` rather than averaged.
pub fn pauroc_report(
    tracks: &[ScoreTrack],
    ground_truth: &EventList,
    cfg: &PaurocConfig,
) -> Result<PaurocReport> {
    cfg.validate()?;
    ground_truth.expect_role(EventRole::GroundTruth)?;

    let mut by_class: BTreeMap<&str, Vec<&ScoreTrack>> = BTreeMap::new();
    for track in tracks {
        if track.scores.is_empty() {
            return Err(Error::invalid(format!(
                "pauroc: empty score track for {}/{}",
                track.clip_id, track.class_id
            )));
        }
        if !(track.delta > 0.0) {
            return Err(Error::invalid("pauroc: track delta must be positive"));
        }
        let entry = by_class.entry(&track.class_id).or_default();
        if entry.iter().any(|t| t.clip_id == track.clip_id) {
            return Err(Error::invalid(format!(
                "pauroc: duplicate track for {}/{}",
                track.clip_id, track.class_id
            )));
        }
        entry.push(track);
    }

    let mut per_class = Vec::new();
    let mut skipped = Vec::new();
    for (class_id, class_tracks) in &by_class {
        let mut pairs = Vec::new();
        for track in class_tracks {
            let gt: Vec<(f64, f64)> = ground_truth
                .for_clip_class(&track.clip_id, class_id)
                .iter()
                .map(|e| (e.onset, e.offset))
                .collect();
            pairs.extend(segment_pairs(track, &gt, cfg.segment_duration));
        }
        let positives = pairs.iter().filter(|p| p.1).count();
        let negatives = pairs.len() - positives;
        if positives == 0 || negatives == 0 {
            skipped.push(class_id.to_string());
            continue;
        }
        per_class.push(ClassPauroc {
            class_id: class_id.to_string(),
            value: partial_auroc(&pairs, cfg.max_fpr)?,
            positives,
            negatives,
        });
    }
    if per_class.is_empty() {
        return Err(Error::invalid("pauroc: no class had both segment labels"));
    }
    let macro_average = per_class.iter().map(|c| c.value).sum::<f64>() / per_class.len() as f64;
    Ok(PaurocReport {
        per_class,
        skipped,
        macro_average,
        max_fpr: cfg.max_fpr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Event;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pairs(scores: &[f64], labels: &[u8]) -> Vec<(f64, bool)> {
        scores.iter().zip(labels).map(|(&s, &l)| (s, l == 1)).collect()
    }

    #[test]
    fn hand_worked_six_segments() {
        // Sorted walk: two true positives before any false positive pins
        // TPR at 2/3 across the whole [0, 0.1] FPR window.
        let p = pairs(&[0.9, 0.8, 0.4, 0.3, 0.2, 0.1], &[1, 1, 0, 1, 0, 0]);
        let v = partial_auroc(&p, 0.1).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn degenerate_scorers_hit_known_values() {
        let labels = [1, 1, 1, 0, 0, 0];
        let constant = pairs(&[0.5; 6], &labels);
        assert!((partial_auroc(&constant, 0.1).unwrap() - 0.05).abs() < 1e-12);

        let perfect = pairs(&[0.9, 0.8, 0.7, 0.3, 0.2, 0.1], &labels);
        assert!((partial_auroc(&perfect, 0.1).unwrap() - 1.0).abs() < 1e-12);

        let inverted = pairs(&[0.1, 0.2, 0.3, 0.7, 0.8, 0.9], &labels);
        assert_eq!(partial_auroc(&inverted, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn full_area_matches_pair_counting() {
        // At max_fpr = 1 the value is plain AUROC, equal to the fraction of
        // (positive, negative) pairs ranked correctly, ties counted half.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = 30;
            let p: Vec<(f64, bool)> = (0..n)
                .map(|_| ((rng.gen_range(0..10) as f64) / 10.0, rng.gen_bool(0.4)))
                .collect();
            let pos = p.iter().filter(|x| x.1).count();
            if pos == 0 || pos == n {
                continue;
            }
            let mut won = 0.0;
            for a in p.iter().filter(|x| x.1) {
                for b in p.iter().filter(|x| !x.1) {
                    won += if a.0 > b.0 {
                        1.0
                    } else if a.0 == b.0 {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
            let expect = won / (pos * (n - pos)) as f64;
            let got = partial_auroc(&p, 1.0).unwrap();
            assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        }
    }

    #[test]
    fn partial_area_matches_dense_sampling() {
        // Independent check: rebuild the piecewise-linear ROC and integrate
        // it with a fine Riemann sum.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let n = 40;
            let p: Vec<(f64, bool)> = (0..n)
                .map(|_| ((rng.gen_range(0..8) as f64) / 8.0, rng.gen_bool(0.5)))
                .collect();
            let pos = p.iter().filter(|x| x.1).count();
            if pos == 0 || pos == n {
                continue;
            }
            let mut sorted = p.clone();
            sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            let mut points = vec![(0.0f64, 0.0f64)];
            let (mut tp, mut fp) = (0.0, 0.0);
            let mut i = 0;
            while i < sorted.len() {
                let s = sorted[i].0;
                while i < sorted.len() && sorted[i].0 == s {
                    if sorted[i].1 {
                        tp += 1.0;
                    } else {
                        fp += 1.0;
                    }
                    i += 1;
                }
                points.push((fp / (n - pos) as f64, tp / pos as f64));
            }
            let max_fpr = 0.3;
            let steps = 200_000;
            let mut riemann = 0.0;
            for k in 0..steps {
                let x = max_fpr * (k as f64 + 0.5) / steps as f64;
                let j = points.iter().position(|pt| pt.0 >= x).unwrap();
                let (x1, y1) = points[j - 1];
                let (x2, y2) = points[j];
                let y = if x2 == x1 { y1 } else { y1 + (y2 - y1) * (x - x1) / (x2 - x1) };
                riemann += y * max_fpr / steps as f64;
            }
            let got = partial_auroc(&p, max_fpr).unwrap();
            assert!((got - riemann / max_fpr).abs() < 1e-4, "{got} vs {riemann}");
        }
    }

    #[test]
    fn rejects_single_label_inputs() {
        assert!(partial_auroc(&pairs(&[0.5, 0.4], &[1, 1]), 0.1).is_err());
        assert!(partial_auroc(&pairs(&[0.5, 0.4], &[0, 0]), 0.1).is_err());
        assert!(partial_auroc(&pairs(&[f64::NAN, 0.4], &[1, 0]), 0.1).is_err());
    }

    fn make_track(clip: &str, class: &str, scores: Vec<f64>, delta: f64) -> ScoreTrack {
        ScoreTrack {
            clip_id: clip.into(),
            class_id: class.into(),
            scores,
            delta,
        }
    }

    #[test]
    fn report_pools_segments_and_labels_by_overlap() {
        // 4 segments of 1s at delta 0.5: scores pool pairwise by max.
        let track = make_track("c1", "k", vec![0.9, 0.1, 0.2, 0.8, 0.3, 0.1, 0.0, 0.05], 0.5);
        // One event covering segment 0 and leaking 0.2s into segment 1.
        let gt = EventList::new(
            vec![Event {
                clip_id: "c1".into(),
                class_id: "k".into(),
                onset: 0.3,
                offset: 1.2,
            }],
            EventRole::GroundTruth,
        )
        .unwrap();
        let cfg = PaurocConfig::default();
        let report = pauroc_report(&[track], &gt, &cfg).unwrap();
        assert_eq!(report.per_class.len(), 1);
        let c = &report.per_class[0];
        assert_eq!((c.positives, c.negatives), (2, 2));
        // Pooled segments: (0.9, pos) (0.8, pos) (0.3, neg) (0.05, neg):
        // perfect ranking.
        assert!((c.value - 1.0).abs() < 1e-12);
        assert!((report.macro_average - c.value).abs() < 1e-15);
    }

    #[test]
    fn report_skips_unscorable_classes() {
        // Class "all_pos" is fully covered by an event; class "ok" is mixed.
        let tracks = vec![
            make_track("c1", "all_pos", vec![0.5, 0.6], 1.0),
            make_track("c1", "ok", vec![0.9, 0.1], 1.0),
        ];
        let gt = EventList::new(
            vec![
                Event {
                    clip_id: "c1".into(),
                    class_id: "all_pos".into(),
                    onset: 0.0,
                    offset: 2.0,
                },
                Event {
                    clip_id: "c1".into(),
                    class_id: "ok".into(),
                    onset: 0.0,
                    offset: 1.0,
                },
            ],
            EventRole::GroundTruth,
        )
        .unwrap();
        let report = pauroc_report(&tracks, &gt, &PaurocConfig::default()).unwrap();
        assert_eq!(report.skipped, vec!["all_pos".to_string()]);
        assert_eq!(report.per_class.len(), 1);
        assert_eq!(report.per_class[0].class_id, "ok");
    }

    #[test]
    fn report_rejects_duplicates_and_detection_role() {
        let tracks = vec![
            make_track("c1", "k", vec![0.5], 1.0),
            make_track("c1", "k", vec![0.4], 1.0),
        ];
        let gt = EventList::new(vec![], EventRole::GroundTruth).unwrap();
        assert!(pauroc_report(&tracks, &gt, &PaurocConfig::default()).is_err());

        let det = EventList::new(vec![], EventRole::Detection).unwrap();
        let one = vec![make_track("c1", "k", vec![0.5], 1.0)];
        assert!(pauroc_report(&one, &det, &PaurocConfig::default()).is_err());
    }
}
