//! Text-query sound event detection and retrieval evaluation.
//!
//! A trained model is probed by sliding a text query across the frame
//! embeddings of a clip, producing a per-frame score track. Tracks are
//! thresholded into detected events and scored against ground truth.

pub mod io;
pub mod pauroc;
pub mod psds;
pub mod retrieval;

use crate::encoder::{FrameEmbeddings, TextEmbedding};
use crate::error::{Error, Result};

/// Per-frame similarity between one clip and one text query, clamped to
/// [-1, 1]. `delta` is the frame duration in seconds.
#[derive(Clone, Debug)]
pub struct ScoreTrack {
    pub clip_id: String,
    pub class_id: String,
    pub scores: Vec<f64>,
    pub delta: f64,
}

impl ScoreTrack {
    pub fn duration(&self) -> f64 {
        self.scores.len() as f64 * self.delta
    }
}

/// A labelled time interval within one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub clip_id: String,
    pub class_id: String,
    pub onset: f64,
    pub offset: f64,
}

impl Event {
    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }

    fn validate(&self) -> Result<()> {
        if self.clip_id.is_empty() || self.class_id.is_empty() {
            return Err(Error::invalid("event: empty clip or class id"));
        }
        if !(self.onset.is_finite() && self.offset.is_finite() && self.onset < self.offset) {
            return Err(Error::invalid(format!(
                "event {}/{}: bad interval [{}, {})",
                self.clip_id, self.class_id, self.onset, self.offset
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventRole {
    GroundTruth,
    Detection,
}

/// A set of events sharing one role. Keeping the role explicit prevents
/// accidentally scoring detections against detections.
#[derive(Clone, Debug)]
pub struct EventList {
    pub events: Vec<Event>,
    pub role: EventRole,
}

impl EventList {
    pub fn new(events: Vec<Event>, role: EventRole) -> Result<EventList> {
        for e in &events {
            e.validate()?;
        }
        Ok(EventList { events, role })
    }

    pub fn expect_role(&self, role: EventRole) -> Result<()> {
        if self.role != role {
            return Err(Error::invalid(format!(
                "event list has role {:?}, expected {:?}",
                self.role, role
            )));
        }
        Ok(())
    }

    /// Events for one clip and class, in input order.
    pub fn for_clip_class(&self, clip_id: &str, class_id: &str) -> Vec<&Event> {
        self.events
            .iter()
            .filter(|e| e.clip_id == clip_id && e.class_id == class_id)
            .collect()
    }

    pub fn class_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.events.iter().map(|e| e.class_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

/// Dot products between each frame embedding and the query. Both sides are
/// unit vectors, so values are cosines; clamping absorbs rounding spill.
pub fn score_track(
    frames: &FrameEmbeddings,
    query: &TextEmbedding,
    clip_id: &str,
    class_id: &str,
) -> Result<ScoreTrack> {
    if frames.dim() != query.data.len() {
        return Err(Error::shape(format!(
            "score_track: frame dim {} vs query dim {}",
            frames.dim(),
            query.data.len()
        )));
    }
    let scores = (0..frames.frames())
        .map(|t| {
            let s = crate::tensor::dot(frames.data.row(t), &query.data);
            s.clamp(-1.0, 1.0)
        })
        .collect();
    Ok(ScoreTrack {
        clip_id: clip_id.to_string(),
        class_id: class_id.to_string(),
        scores,
        delta: frames.delta,
    })
}

/// Maximal runs of frames scoring at or above the threshold, mapped back to
/// seconds through the frame duration.
pub fn extract_events(track: &ScoreTrack, threshold: f64) -> Vec<Event> {
    let mut events = Vec::new();
    let mut run_start: Option<usize> = None;
    for t in 0..=track.scores.len() {
        let active = t < track.scores.len() && track.scores[t] >= threshold;
        match (active, run_start) {
            (true, None) => run_start = Some(t),
            (false, Some(start)) => {
                events.push(Event {
                    clip_id: track.clip_id.clone(),
                    class_id: track.class_id.clone(),
                    onset: start as f64 * track.delta,
                    offset: t as f64 * track.delta,
                });
                run_start = None;
            }
            _ => {}
        }
    }
    events
}

/// Sum of intersection lengths between [on, off) and a set of intervals.
/// The intervals need not be disjoint; merge first when they may overlap.
pub(crate) fn overlap_with(on: f64, off: f64, intervals: &[(f64, f64)]) -> f64 {
    intervals
        .iter()
        .map(|&(a, b)| (off.min(b) - on.max(a)).max(0.0))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn track(scores: &[f64]) -> ScoreTrack {
        ScoreTrack {
            clip_id: "c".into(),
            class_id: "k".into(),
            scores: scores.to_vec(),
            delta: 0.02,
        }
    }

    #[test]
    fn extract_events_finds_runs() {
        let t = track(&[0.1, 0.8, 0.9, 0.2, 0.7, 0.7]);
        let events = extract_events(&t, 0.5);
        assert_eq!(events.len(), 2);
        assert!((events[0].onset - 0.02).abs() < 1e-12);
        assert!((events[0].offset - 0.06).abs() < 1e-12);
        assert!((events[1].onset - 0.08).abs() < 1e-12);
        assert!((events[1].offset - 0.12).abs() < 1e-12);
    }

    #[test]
    fn extract_events_handles_edges_and_threshold_equality() {
        // A run touching the final frame closes at the track end, and a
        // score exactly at the threshold counts as active.
        let t = track(&[0.5, 0.4, 0.5]);
        let events = extract_events(&t, 0.5);
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].onset, 0.0);
        assert!((events[1].offset - 0.06).abs() < 1e-12);
        assert!(extract_events(&t, 0.95).is_empty());
        assert_eq!(extract_events(&t, -1.0).len(), 1);
    }

    #[test]
    fn score_track_is_cosine_and_clamped() {
        let mut data = Tensor::zeros(2, 2);
        *data.at_mut(0, 0) = 1.0;
        // Deliberately unnormalized row to exercise the clamp.
        *data.at_mut(1, 0) = 2.0;
        let frames = FrameEmbeddings { data, delta: 0.02 };
        let query = TextEmbedding { data: vec![1.0, 0.0] };
        let t = score_track(&frames, &query, "c", "k").unwrap();
        assert_eq!(t.scores, vec![1.0, 1.0]);

        let bad = TextEmbedding { data: vec![1.0, 0.0, 0.0] };
        assert!(score_track(&frames, &bad, "c", "k").is_err());
    }

    #[test]
    fn event_list_checks_roles_and_intervals() {
        let e = Event {
            clip_id: "c".into(),
            class_id: "k".into(),
            onset: 1.0,
            offset: 0.5,
        };
        assert!(EventList::new(vec![e], EventRole::GroundTruth).is_err());
        let list = EventList::new(vec![], EventRole::Detection).unwrap();
        assert!(list.expect_role(EventRole::GroundTruth).is_err());
        assert!(list.expect_role(EventRole::Detection).is_ok());
    }

    #[test]
    fn overlap_sums_clipped_intersections() {
        let iv = [(0.0, 1.0), (2.0, 3.0)];
        assert!((overlap_with(0.5, 2.5, &iv) - 1.0).abs() < 1e-12);
        assert_eq!(overlap_with(1.0, 2.0, &iv), 0.0);
        assert!((overlap_with(-1.0, 4.0, &iv) - 2.0).abs() < 1e-12);
    }
}
