//! Synthetic benchmark corpus: five spectrally distinct event families
//! placed without overlap on a noise floor, with exact region annotations.
//!
//! The generator exists to give the trainer and the detection metrics a
//! ground truth that is correct by construction, so end-to-end claims about
//! temporal alignment can be checked without any external data.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::{apply_edge_fade, peak_normalize, write_wav, Waveform};
use crate::dataset::{save_manifest, AnnotatedClip, Region};
use crate::error::{Error, Result};
use crate::eval::io::{write_events_tsv, write_query_list};
use crate::eval::{Event, EventList, EventRole};

struct Template {
    id: &'static str,
    caption: &'static str,
}

/// Event families ordered by spectral centroid, low to high.
const TEMPLATES: [Template; 5] = [
    Template {
        id: "tone",
        caption: "A low tone hums steadily.",
    },
    Template {
        id: "chirp",
        caption: "A rising chirp sweeps upward.",
    },
    Template {
        id: "beep",
        caption: "A pulsing beep wavers repeatedly.",
    },
    Template {
        id: "clicks",
        caption: "Rapid clicks tick in quick succession.",
    },
    Template {
        id: "static",
        caption: "A harsh burst of static hisses.",
    },
];

pub fn class_ids(n: usize) -> Vec<String> {
    TEMPLATES.iter().take(n).map(|t| t.id.to_string()).collect()
}

pub fn class_caption(class: &str) -> Option<&'static str> {
    TEMPLATES.iter().find(|t| t.id == class).map(|t| t.caption)
}

#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub classes: usize,
    pub clips_per_class: usize,
    /// Uniform clip length range, within [15, 30] seconds.
    pub clip_duration: (f64, f64),
    /// Uniform event length range in seconds.
    pub event_duration: (f64, f64),
    /// Inclusive range of events per clip.
    pub events_per_clip: (usize, usize),
    /// Background level relative to full scale, e.g. -45.
    pub noise_floor_db: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 5,
            clips_per_class: 8,
            clip_duration: (15.0, 20.0),
            event_duration: (1.0, 4.0),
            events_per_clip: (1, 3),
            noise_floor_db: -45.0,
            sample_rate: 32_000,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.classes > TEMPLATES.len() {
            return Err(Error::invalid(format!(
                "synth: classes must be 1..={}, got {}",
                TEMPLATES.len(),
                self.classes
            )));
        }
        if self.clips_per_class == 0 {
            return Err(Error::invalid("synth: clips_per_class must be positive"));
        }
        let (lo, hi) = self.clip_duration;
        if !(15.0..=30.0).contains(&lo) || !(15.0..=30.0).contains(&hi) || lo > hi {
            return Err(Error::invalid(format!(
                "synth: clip_duration ({lo}, {hi}) must sit inside [15, 30]"
            )));
        }
        let (elo, ehi) = self.event_duration;
        if !(elo > 0.0 && elo <= ehi && ehi.is_finite()) {
            return Err(Error::invalid("synth: bad event_duration range"));
        }
        let (nlo, nhi) = self.events_per_clip;
        if nlo == 0 || nlo > nhi {
            return Err(Error::invalid("synth: bad events_per_clip range"));
        }
        if !(self.noise_floor_db < 0.0) {
            return Err(Error::invalid("synth: noise_floor_db must be negative"));
        }
        if self.sample_rate == 0 {
            return Err(Error::invalid("synth: sample_rate must be positive"));
        }
        Ok(())
    }
}

/// One generated clip: its annotation record plus the audio itself.
#[derive(Clone, Debug)]
pub struct SynthClip {
    pub clip: AnnotatedClip,
    pub waveform: Waveform,
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub clips: Vec<SynthClip>,
    pub ground_truth: EventList,
    pub class_ids: Vec<String>,
}

/// One event waveform at full scale before amplitude and ramps.
fn render_sample(class: usize, t: f64, duration: f64, rng: &mut ChaCha8Rng) -> f64 {
    match class {
        // Steady low tone.
        0 => (2.0 * PI * 220.0 * t).sin(),
        // Linear sweep 500 -> 2000 Hz; the phase is the frequency integral.
        1 => {
            let phase = 2.0 * PI * (500.0 * t + 750.0 * t * t / duration);
            phase.sin()
        }
        // 3500 Hz carrier pulsing at 6 Hz.
        2 => (2.0 * PI * 3500.0 * t).sin() * 0.5 * (1.0 - (2.0 * PI * 6.0 * t).cos()),
        // 6 kHz pips: 4 ms Hann bursts every 50 ms.
        3 => {
            let u = t % 0.05;
            if u < 0.004 {
                (2.0 * PI * 6000.0 * t).sin() * 0.5 * (1.0 - (2.0 * PI * u / 0.004).cos())
            } else {
                0.0
            }
        }
        // Broadband noise.
        4 => rng.gen_range(-1.0..1.0),
        _ => unreachable!("class index bounded by TEMPLATES"),
    }
}

const EVENT_RAMP: f64 = 0.010;

fn render_event(
    class: usize,
    duration: f64,
    amplitude: f64,
    sample_rate: u32,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let n = (duration * sample_rate as f64).round() as usize;
    let ramp_n = ((EVENT_RAMP * sample_rate as f64).round() as usize).min(n / 2);
    (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate as f64;
            let mut v = amplitude * render_sample(class, t, duration, rng);
            if ramp_n > 0 {
                if i < ramp_n {
                    v *= 0.5 * (1.0 - (PI * i as f64 / ramp_n as f64).cos());
                } else if i >= n - ramp_n {
                    v *= 0.5 * (1.0 - (PI * (n - 1 - i) as f64 / ramp_n as f64).cos());
                }
            }
            v
        })
        .collect()
}

/// Non-overlapping event layout: durations first, then the leftover time
/// split into randomly weighted gaps around them.
fn place_events(
    durations: &[f64],
    clip_len: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let used: f64 = durations.iter().sum();
    if used > clip_len {
        return Err(Error::invalid(format!(
            "synth: {used:.2}s of events cannot fit a {clip_len:.2}s clip"
        )));
    }
    let weights: Vec<f64> = (0..durations.len() + 1)
        .map(|_| rng.gen_range(0.01..1.0))
        .collect();
    let total_w: f64 = weights.iter().sum();
    let free = clip_len - used;
    let mut onsets = Vec::with_capacity(durations.len());
    let mut at = 0.0;
    for (i, &d) in durations.iter().enumerate() {
        at += free * weights[i] / total_w;
        onsets.push(at);
        at += d;
    }
    Ok(onsets)
}

pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let sr = spec.sample_rate as f64;
    let noise_amp = 10f64.powf(spec.noise_floor_db / 20.0);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut clips = Vec::new();
    let mut gt_events = Vec::new();
    for class in 0..spec.classes {
        for idx in 0..spec.clips_per_class {
            let clip_id = format!("synth_{}_{idx:03}", TEMPLATES[class].id);
            let clip_len = rng.gen_range(spec.clip_duration.0..=spec.clip_duration.1);
            let n_samples = (clip_len * sr).round() as usize;
            let duration = n_samples as f64 / sr;

            let n_events = rng.gen_range(spec.events_per_clip.0..=spec.events_per_clip.1);
            // The clip's own family always appears; the rest are drawn
            // from every family so clips mix classes.
            let mut event_classes = vec![class];
            for _ in 1..n_events {
                event_classes.push(rng.gen_range(0..spec.classes));
            }
            let mut durations = Vec::with_capacity(n_events);
            let mut tries = 0;
            loop {
                durations.clear();
                for _ in 0..n_events {
                    durations
                        .push(rng.gen_range(spec.event_duration.0..=spec.event_duration.1));
                }
                if durations.iter().sum::<f64>() <= duration {
                    break;
                }
                tries += 1;
                if tries >= 100 {
                    return Err(Error::invalid(format!(
                        "synth: events never fit clip {clip_id}; shorten event_duration \
                         or lower events_per_clip"
                    )));
                }
            }
            let onsets = place_events(&durations, duration, &mut rng)?;

            let mut samples: Vec<f64> =
                (0..n_samples).map(|_| noise_amp * rng.gen_range(-1.0..1.0)).collect();
            let mut regions = Vec::with_capacity(n_events);
            for ((&onset, &dur), &ev_class) in
                onsets.iter().zip(&durations).zip(&event_classes)
            {
                let amplitude = rng.gen_range(0.25..0.7);
                let start = (onset * sr).round() as usize;
                let event = render_event(ev_class, dur, amplitude, spec.sample_rate, &mut rng);
                // Region boundaries come from the placed samples so the
                // annotations match the audio exactly.
                let on = start as f64 / sr;
                let off = (start + event.len()).min(n_samples) as f64 / sr;
                for (i, &v) in event.iter().enumerate() {
                    if start + i < n_samples {
                        samples[start + i] += v;
                    }
                }
                regions.push(Region {
                    onset: on,
                    offset: off,
                    text: TEMPLATES[ev_class].caption.to_string(),
                    annotator: None,
                });
                gt_events.push(Event {
                    clip_id: clip_id.clone(),
                    class_id: TEMPLATES[ev_class].id.to_string(),
                    onset: on,
                    offset: off,
                });
            }
            regions.sort_by(|a, b| a.onset.partial_cmp(&b.onset).unwrap());

            let mut weak_parts: Vec<&str> = Vec::new();
            for r in &regions {
                if !weak_parts.contains(&r.text.as_str()) {
                    weak_parts.push(&r.text);
                }
            }

            let waveform = Waveform {
                samples,
                sample_rate: spec.sample_rate,
            };
            let waveform = apply_edge_fade(&peak_normalize(&waveform)?, 0.016)?;

            let clip = AnnotatedClip {
                clip_id: clip_id.clone(),
                audio_path: Some(format!("audio/{clip_id}.wav")),
                duration,
                subclass: TEMPLATES[class].id.to_string(),
                weak_caption: Some(weak_parts.join(" ")),
                regions,
            };
            clip.validate()
                .map_err(|m| Error::invalid(format!("synth produced a bad clip: {m}")))?;
            clips.push(SynthClip { clip, waveform });
        }
    }

    Ok(SynthCorpus {
        clips,
        ground_truth: EventList::new(gt_events, EventRole::GroundTruth)?,
        class_ids: class_ids(spec.classes),
    })
}

/// Writes audio/, manifest.jsonl, ground_truth.tsv, and classes.tsv.
pub fn write_corpus(corpus: &SynthCorpus, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir.join("audio"))?;
    for sc in &corpus.clips {
        let rel = sc.clip.audio_path.as_deref().ok_or_else(|| {
            Error::invalid(format!("synth clip {} has no audio path", sc.clip.clip_id))
        })?;
        write_wav(&out_dir.join(rel), &sc.waveform)?;
    }
    let records: Vec<AnnotatedClip> = corpus.clips.iter().map(|c| c.clip.clone()).collect();
    save_manifest(&out_dir.join("manifest.jsonl"), &records)?;
    write_events_tsv(&out_dir.join("ground_truth.tsv"), &corpus.ground_truth)?;
    // Class file doubles as the query list: id plus the caption a text
    // query would use for that family.
    let queries: Vec<(String, String)> = corpus
        .class_ids
        .iter()
        .map(|id| (id.clone(), class_caption(id).expect("known class").to_string()))
        .collect();
    write_query_list(&out_dir.join("classes.tsv"), &queries)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::load_manifest;
    use rustfft::num_complex::Complex;
    use rustfft::FftPlanner;

    fn small_spec() -> SynthSpec {
        SynthSpec {
            classes: 3,
            clips_per_class: 2,
            clip_duration: (15.0, 16.0),
            event_duration: (1.0, 3.0),
            events_per_clip: (1, 2),
            noise_floor_db: -45.0,
            sample_rate: 32_000,
            seed: 7,
        }
    }

    #[test]
    fn spec_validation_catches_bad_ranges() {
        let mut s = small_spec();
        s.classes = 6;
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.clip_duration = (10.0, 16.0);
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.events_per_clip = (0, 2);
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.noise_floor_db = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn corpus_is_well_formed() {
        let corpus = generate(&small_spec()).unwrap();
        assert_eq!(corpus.clips.len(), 6);
        assert_eq!(corpus.class_ids, vec!["tone", "chirp", "beep"]);
        for sc in &corpus.clips {
            assert!(sc.clip.validate_processed().is_ok(), "{:?}", sc.clip.clip_id);
            assert_eq!(sc.waveform.samples.len(),
                (sc.clip.duration * 32_000.0).round() as usize);
            // Peak normalized.
            let peak = sc.waveform.samples.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            assert!((peak - 1.0).abs() < 1e-9);
            // The clip's own family is annotated somewhere in the clip.
            let own = class_caption(&sc.clip.subclass).unwrap();
            assert!(sc.clip.regions.iter().any(|r| r.text == own));
            // Events never overlap.
            for pair in sc.clip.regions.windows(2) {
                assert!(pair[0].offset <= pair[1].onset + 1e-12);
            }
            // The weak caption mentions every event family present.
            let weak = sc.clip.weak_caption.as_ref().unwrap();
            for r in &sc.clip.regions {
                assert!(weak.contains(&r.text));
            }
        }
        let n_regions: usize = corpus.clips.iter().map(|c| c.clip.regions.len()).sum();
        assert_eq!(corpus.ground_truth.events.len(), n_regions);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small_spec()).unwrap();
        let b = generate(&small_spec()).unwrap();
        assert_eq!(a.clips.len(), b.clips.len());
        for (x, y) in a.clips.iter().zip(&b.clips) {
            assert_eq!(x.clip.clip_id, y.clip.clip_id);
            assert_eq!(x.waveform.samples, y.waveform.samples);
            assert_eq!(x.clip.regions.len(), y.clip.regions.len());
        }
        let mut other = small_spec();
        other.seed = 8;
        let c = generate(&other).unwrap();
        assert_ne!(a.clips[0].waveform.samples, c.clips[0].waveform.samples);
    }

    #[test]
    fn events_sit_where_annotated() {
        // Inside an annotated region the signal should rise well above the
        // -45 dB noise floor; in gaps it should stay near it.
        let corpus = generate(&small_spec()).unwrap();
        let sc = &corpus.clips[0];
        let sr = 32_000.0;
        for r in &sc.clip.regions {
            let mid = ((r.onset + r.offset) / 2.0 * sr) as usize;
            let window = &sc.waveform.samples[mid..(mid + 3200).min(sc.waveform.samples.len())];
            let rms = (window.iter().map(|v| v * v).sum::<f64>() / window.len() as f64).sqrt();
            assert!(rms > 0.02, "region rms {rms} too quiet");
        }
        // Probe 100 ms after the last offset if it fits.
        let last = sc.clip.regions.last().unwrap();
        let probe = ((last.offset + 0.1) * sr) as usize;
        if probe + 1600 < sc.waveform.samples.len()
            && sc.clip.regions.iter().all(|r| (last.offset + 0.15) < r.onset || probe as f64 / sr >= r.offset)
        {
            let window = &sc.waveform.samples[probe..probe + 1600];
            let rms = (window.iter().map(|v| v * v).sum::<f64>() / window.len() as f64).sqrt();
            assert!(rms < 0.05, "gap rms {rms} too loud");
        }
    }

    /// Power spectral centroid of a waveform, in Hz.
    fn centroid(samples: &[f64], sr: f64) -> f64 {
        let n = samples.len().next_power_of_two();
        let mut buf: Vec<Complex<f64>> =
            samples.iter().map(|&v| Complex::new(v, 0.0)).collect();
        buf.resize(n, Complex::new(0.0, 0.0));
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let (mut num, mut den) = (0.0, 0.0);
        for (k, c) in buf.iter().take(n / 2).enumerate() {
            let p = c.norm_sqr();
            num += k as f64 * sr / n as f64 * p;
            den += p;
        }
        num / den
    }

    #[test]
    fn template_centroids_are_well_separated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sr = 32_000u32;
        let mut means = Vec::new();
        let mut stds = Vec::new();
        for class in 0..TEMPLATES.len() {
            let cs: Vec<f64> = (0..6)
                .map(|i| {
                    let dur = 1.0 + 0.4 * i as f64;
                    let ev = render_event(class, dur, 0.5, sr, &mut rng);
                    centroid(&ev, sr as f64)
                })
                .collect();
            let mean = cs.iter().sum::<f64>() / cs.len() as f64;
            let var = cs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / cs.len() as f64;
            means.push(mean);
            stds.push(var.sqrt());
        }
        let max_std = stds.iter().cloned().fold(0.0f64, f64::max);
        let mut min_gap = f64::INFINITY;
        for i in 0..means.len() {
            for j in i + 1..means.len() {
                min_gap = min_gap.min((means[i] - means[j]).abs());
            }
        }
        assert!(
            min_gap >= 2.0 * max_std,
            "centroid gap {min_gap:.0} Hz vs max std {max_std:.0} Hz (means {means:?})"
        );
        // Sanity: ordering matches the template list.
        for pair in means.windows(2) {
            assert!(pair[0] < pair[1], "{means:?}");
        }
    }

    #[test]
    fn written_corpus_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = small_spec();
        spec.classes = 2;
        spec.clips_per_class = 1;
        let corpus = generate(&spec).unwrap();
        write_corpus(&corpus, dir.path()).unwrap();

        let loaded = load_manifest(&dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].clip_id, corpus.clips[0].clip.clip_id);
        assert_eq!(loaded[0].regions.len(), corpus.clips[0].clip.regions.len());
        let wav_path = dir.path().join(loaded[0].audio_path.as_deref().unwrap());
        let w = crate::audio::read_wav(&wav_path).unwrap();
        assert_eq!(w.samples.len(), corpus.clips[0].waveform.samples.len());
        let gt = crate::eval::io::read_events_tsv(
            &dir.path().join("ground_truth.tsv"),
            EventRole::GroundTruth,
        )
        .unwrap();
        assert_eq!(gt.events.len(), corpus.ground_truth.events.len());
        let classes = crate::eval::io::read_class_list(&dir.path().join("classes.tsv")).unwrap();
        assert_eq!(classes, vec!["tone", "chirp"]);
    }
}
