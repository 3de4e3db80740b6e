//! Audio preprocessing: normalization, silence trimming, resampling,
//! highest-energy segment selection, edge fades, and the log-mel frontend.

pub mod mel;
pub mod resample;
pub mod wav;

pub use mel::{mel_frontend, MelFrames};
pub use resample::resample;
pub use wav::{read_wav, write_wav};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Mono audio at a known sample rate, samples in [-1, 1] by convention
/// (not enforced; peak_normalize restores it).
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Waveform {
            samples,
            sample_rate,
        }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn reject_empty(w: &Waveform, op: &str) -> Result<()> {
    if w.samples.is_empty() {
        return Err(Error::audio(format!("{op}: empty waveform")));
    }
    if w.sample_rate == 0 {
        return Err(Error::audio(format!("{op}: zero sample rate")));
    }
    Ok(())
}

/// Scales the signal so its peak magnitude is 1. An all-zero signal is
/// returned unchanged.
pub fn peak_normalize(w: &Waveform) -> Result<Waveform> {
    reject_empty(w, "peak_normalize")?;
    let peak = w.samples.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    if peak == 0.0 {
        return Ok(w.clone());
    }
    Ok(Waveform::new(
        w.samples.iter().map(|&x| x / peak).collect(),
        w.sample_rate,
    ))
}

/// Half-open sample range kept by silence trimming.
fn trim_range(w: &Waveform, threshold_db: f64) -> Result<(usize, usize)> {
    reject_empty(w, "trim_silence")?;
    if !(threshold_db > 0.0) {
        return Err(Error::invalid(format!(
            "trim_silence: threshold_db {threshold_db} must be positive"
        )));
    }
    let peak = w.samples.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    if peak == 0.0 {
        return Ok((0, w.samples.len()));
    }
    let cutoff = peak * 10f64.powf(-threshold_db / 20.0);
    let first = w.samples.iter().position(|x| x.abs() >= cutoff);
    let last = w.samples.iter().rposition(|x| x.abs() >= cutoff);
    match (first, last) {
        (Some(a), Some(b)) => Ok((a, b + 1)),
        _ => unreachable!("peak sample always meets the cutoff"),
    }
}

/// Removes leading and trailing samples whose magnitude falls below
/// `peak * 10^(-threshold_db / 20)`. The peak itself always survives, so the
/// result is never empty and a second application changes nothing.
pub fn trim_silence(w: &Waveform, threshold_db: f64) -> Result<Waveform> {
    let (a, b) = trim_range(w, threshold_db)?;
    Ok(Waveform::new(w.samples[a..b].to_vec(), w.sample_rate))
}

/// Picks the contiguous window with the highest energy. Signals no longer
/// than 30 s are returned unchanged along with a zero shift. Candidate
/// starts lie on a `search_hop` grid (default 100 ms); ties resolve to the
/// earliest start. When `target_duration` is not supplied it is drawn
/// uniformly from [15, 30] s using `seed`.
pub fn select_energy_segment(
    w: &Waveform,
    target_duration: Option<f64>,
    search_hop: f64,
    seed: u64,
) -> Result<(Waveform, f64)> {
    reject_empty(w, "select_energy_segment")?;
    if !(search_hop > 0.0) {
        return Err(Error::invalid("select_energy_segment: non-positive search hop"));
    }
    if w.duration() <= 30.0 {
        return Ok((w.clone(), 0.0));
    }
    let target = match target_duration {
        Some(t) => {
            if !(15.0..=30.0).contains(&t) {
                return Err(Error::invalid(format!(
                    "select_energy_segment: target {t} outside [15, 30]"
                )));
            }
            t
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.gen_range(15.0..=30.0)
        }
    };

    let n = w.samples.len();
    let win = ((target * w.sample_rate as f64).round() as usize).min(n);
    let hop = ((search_hop * w.sample_rate as f64).round() as usize).max(1);

    // prefix[i] = sum of squares of the first i samples.
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0f64);
    let mut acc = 0.0;
    for &x in &w.samples {
        acc += x * x;
        prefix.push(acc);
    }

    let mut best_start = 0usize;
    let mut best_energy = f64::NEG_INFINITY;
    let mut start = 0usize;
    while start + win <= n {
        let e = prefix[start + win] - prefix[start];
        if e > best_energy {
            best_energy = e;
            best_start = start;
        }
        start += hop;
    }

    let segment = Waveform::new(w.samples[best_start..best_start + win].to_vec(), w.sample_rate);
    Ok((segment, best_start as f64 / w.sample_rate as f64))
}

/// Applies half-Hamming ramps to both ends. The first and last samples are
/// scaled by exactly 0.54 - 0.46; interior samples beyond the ramps are
/// untouched. The clip must be at least twice the fade long.
pub fn apply_edge_fade(w: &Waveform, fade_duration: f64) -> Result<Waveform> {
    reject_empty(w, "apply_edge_fade")?;
    if !(fade_duration > 0.0) {
        return Err(Error::invalid("apply_edge_fade: non-positive fade duration"));
    }
    if w.duration() < 2.0 * fade_duration {
        return Err(Error::audio(format!(
            "apply_edge_fade: clip of {:.3} s shorter than two fades of {:.3} s",
            w.duration(),
            fade_duration
        )));
    }
    let len = (fade_duration * w.sample_rate as f64).round() as usize;
    let mut samples = w.samples.clone();
    if len >= 1 {
        let n = samples.len();
        for k in 0..len.min(n) {
            let gain = if len == 1 {
                0.54 - 0.46
            } else {
                0.54 - 0.46 * (std::f64::consts::PI * k as f64 / (len - 1) as f64).cos()
            };
            samples[k] *= gain;
            samples[n - 1 - k] *= gain;
        }
    }
    Ok(Waveform::new(samples, w.sample_rate))
}

/// Knobs for the standard preprocessing chain.
#[derive(Clone, Debug)]
pub struct PreprocessOptions {
    pub trim_threshold_db: f64,
    pub target_sample_rate: u32,
    pub min_duration: f64,
    pub max_duration: f64,
    pub fade_duration: f64,
    pub search_hop: f64,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            trim_threshold_db: 60.0,
            target_sample_rate: 32_000,
            min_duration: 15.0,
            max_duration: 30.0,
            fade_duration: 0.016,
            search_hop: 0.1,
        }
    }
}

/// Result of preprocessing one clip: the processed waveform and the number
/// of seconds removed from the front of the original timeline (trim plus
/// segment start), needed to remap region annotations.
#[derive(Clone, Debug)]
pub struct ProcessedClip {
    pub waveform: Waveform,
    pub shift: f64,
}

/// Runs the full chain: peak normalize, trim silence, discard clips shorter
/// than `min_duration`, resample to the target rate, select the
/// highest-energy segment when longer than `max_duration`, fade the edges.
/// Returns None for discarded clips.
pub fn preprocess_waveform(
    w: &Waveform,
    opts: &PreprocessOptions,
    seed: u64,
) -> Result<Option<ProcessedClip>> {
    let normalized = peak_normalize(w)?;
    let (keep_from, keep_to) = trim_range(&normalized, opts.trim_threshold_db)?;
    let trimmed = Waveform::new(
        normalized.samples[keep_from..keep_to].to_vec(),
        normalized.sample_rate,
    );
    let trim_shift = keep_from as f64 / normalized.sample_rate as f64;
    if trimmed.duration() < opts.min_duration {
        return Ok(None);
    }
    let resampled = resample(&trimmed, opts.target_sample_rate)?;
    let (segment, segment_shift) = if resampled.duration() > opts.max_duration {
        select_energy_segment(&resampled, None, opts.search_hop, seed)?
    } else {
        (resampled, 0.0)
    };
    let faded = apply_edge_fade(&segment, opts.fade_duration)?;
    Ok(Some(ProcessedClip {
        waveform: faded,
        shift: trim_shift + segment_shift,
    }))
}
