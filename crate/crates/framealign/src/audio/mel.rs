//! Log-mel spectrogram frontend.
//!
//! Frames advance by `hop` seconds (20 ms default) with a window of twice the
//! hop, Hann weighted, zero padded to the FFT size. Power spectra are pooled
//! through a triangular mel filter bank and compressed with ln(1 + x), so
//! silence maps to exactly zero.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::Waveform;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const EXPECTED_SAMPLE_RATE: u32 = 32_000;

/// A time-mel matrix plus the frame geometry needed to map frame indices
/// back to seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFrames {
    /// frames x mel_bins.
    pub data: Tensor,
    /// Frame hop in seconds.
    pub hop: f64,
    pub sample_rate: u32,
}

impl MelFrames {
    pub fn frames(&self) -> usize {
        self.data.rows()
    }

    pub fn bins(&self) -> usize {
        self.data.cols()
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters over FFT bin center frequencies, HTK mel spacing from
/// 0 Hz to Nyquist. Returned dense as mel_bins x (fft_size / 2 + 1).
fn mel_filter_bank(mel_bins: usize, fft_size: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let nyquist = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let points: Vec<f64> = (0..mel_bins + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (mel_bins + 1) as f64))
        .collect();
    let n_bins = fft_size / 2 + 1;
    let mut bank = vec![vec![0.0; n_bins]; mel_bins];
    for m in 0..mel_bins {
        let (lo, mid, hi) = (points[m], points[m + 1], points[m + 2]);
        for (k, w) in bank[m].iter_mut().enumerate() {
            let f = k as f64 * sample_rate as f64 / fft_size as f64;
            if f > lo && f < hi {
                *w = if f <= mid {
                    (f - lo) / (mid - lo)
                } else {
                    (hi - f) / (hi - mid)
                };
            }
        }
    }
    bank
}

/// Computes log-mel frames. The frame count is ceil(len / hop_samples), so
/// every sample lands in at least one frame and a 30 s clip at 32 kHz with a
/// 20 ms hop yields exactly 1500 frames.
pub fn mel_frontend(w: &Waveform, hop: f64, mel_bins: usize) -> Result<MelFrames> {
    if w.sample_rate != EXPECTED_SAMPLE_RATE {
        return Err(Error::audio(format!(
            "mel_frontend: expected {EXPECTED_SAMPLE_RATE} Hz input, got {}",
            w.sample_rate
        )));
    }
    if w.samples.is_empty() {
        return Err(Error::audio("mel_frontend: empty waveform"));
    }
    if !(hop > 0.0) || mel_bins < 1 {
        return Err(Error::invalid("mel_frontend: hop and mel_bins must be positive"));
    }

    let hop_samples = (hop * w.sample_rate as f64).round() as usize;
    if hop_samples == 0 {
        return Err(Error::invalid("mel_frontend: hop shorter than one sample"));
    }
    let win = 2 * hop_samples;
    let fft_size = win.next_power_of_two();
    let n = w.samples.len();
    let frames = n.div_ceil(hop_samples);

    let window: Vec<f64> = (0..win)
        .map(|i| {
            0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / (win - 1) as f64).cos())
        })
        .collect();
    let bank = mel_filter_bank(mel_bins, fft_size, w.sample_rate);
    let fft = FftPlanner::new().plan_fft_forward(fft_size);

    let mut data = Tensor::zeros(frames, mel_bins);
    let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); fft_size];
    for t in 0..frames {
        let start = t * hop_samples;
        for (i, slot) in buf.iter_mut().enumerate() {
            let x = if i < win && start + i < n {
                w.samples[start + i] * window[i]
            } else {
                0.0
            };
            *slot = Complex::new(x, 0.0);
        }
        fft.process(&mut buf);
        let row = data.row_mut(t);
        for (m, filt) in bank.iter().enumerate() {
            let mut e = 0.0;
            for (k, &w_mk) in filt.iter().enumerate() {
                if w_mk > 0.0 {
                    e += w_mk * buf[k].norm_sqr();
                }
            }
            row[m] = e.ln_1p();
        }
    }

    Ok(MelFrames {
        data,
        hop,
        sample_rate: w.sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, seconds: f64) -> Waveform {
        let rate = EXPECTED_SAMPLE_RATE;
        let n = (rate as f64 * seconds).round() as usize;
        Waveform::new(
            (0..n)
                .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin() * 0.7)
                .collect(),
            rate,
        )
    }

    #[test]
    fn thirty_seconds_gives_1500_frames() {
        let w = Waveform::new(vec![0.1; 960_000], EXPECTED_SAMPLE_RATE);
        let mel = mel_frontend(&w, 0.02, 64).unwrap();
        assert_eq!(mel.frames(), 1500);
        assert_eq!(mel.bins(), 64);
    }

    #[test]
    fn frame_count_is_ceiling() {
        let w = Waveform::new(vec![0.1; 960_001], EXPECTED_SAMPLE_RATE);
        assert_eq!(mel_frontend(&w, 0.02, 64).unwrap().frames(), 1501);
        let w = Waveform::new(vec![0.1; 640], EXPECTED_SAMPLE_RATE);
        assert_eq!(mel_frontend(&w, 0.02, 64).unwrap().frames(), 1);
        let w = Waveform::new(vec![0.1; 641], EXPECTED_SAMPLE_RATE);
        assert_eq!(mel_frontend(&w, 0.02, 64).unwrap().frames(), 2);
    }

    #[test]
    fn silence_maps_to_zero() {
        let w = Waveform::new(vec![0.0; 64_000], EXPECTED_SAMPLE_RATE);
        let mel = mel_frontend(&w, 0.02, 64).unwrap();
        assert!(mel.data.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn all_entries_finite_on_loud_input() {
        let w = Waveform::new(vec![1.0; 64_000], EXPECTED_SAMPLE_RATE);
        let mel = mel_frontend(&w, 0.02, 64).unwrap();
        assert!(mel.data.is_finite());
        assert!(mel.data.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn pure_tone_peaks_in_constant_bin() {
        let mel = mel_frontend(&tone(1000.0, 2.0), 0.02, 64).unwrap();
        let argmax = |row: &[f64]| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        let first = argmax(mel.data.row(0));
        for t in 0..mel.frames() {
            assert_eq!(argmax(mel.data.row(t)), first, "frame {t}");
        }
        // Distinct tones land in distinct bins.
        let mel_hi = mel_frontend(&tone(6000.0, 0.5), 0.02, 64).unwrap();
        assert!(argmax(mel_hi.data.row(5)) > first);
    }

    #[test]
    fn rejects_wrong_sample_rate() {
        let w = Waveform::new(vec![0.1; 16_000], 16_000);
        assert!(mel_frontend(&w, 0.02, 64).is_err());
    }

    #[test]
    fn filter_bank_covers_spectrum_without_gaps() {
        let bank = mel_filter_bank(64, 2048, EXPECTED_SAMPLE_RATE);
        // Every FFT bin strictly between the first filter start and Nyquist
        // receives nonzero total weight.
        let n_bins = 2048 / 2 + 1;
        for k in 1..n_bins - 1 {
            let total: f64 = bank.iter().map(|f| f[k]).sum();
            assert!(total > 0.0, "bin {k} uncovered");
        }
    }
}
