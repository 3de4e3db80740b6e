//! Band-limited sample rate conversion with a Kaiser-windowed sinc kernel.
//!
//! For each output sample the kernel is evaluated at the fractional input
//! position and normalized to unit DC gain, so constant signals pass through
//! exactly. When downsampling, the sinc is stretched by the rate ratio so its
//! cutoff sits at the new Nyquist frequency; the support grows accordingly
//! (64 taps measured at the limiting rate).

use super::Waveform;
use crate::error::{Error, Result};

const KAISER_BETA: f64 = 8.0;
const HALF_TAPS: f64 = 32.0;

/// Modified Bessel function of the first kind, order zero. Power series,
/// converges fast for the argument range used here (0..=8).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut sum = 1.0;
    let mut term = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Converts `w` to `target_rate`. The output length is
/// round(len * target / source), so durations match to within one sample.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if w.sample_rate == 0 || target_rate == 0 {
        return Err(Error::audio("resample: zero sample rate"));
    }
    if w.samples.is_empty() {
        return Err(Error::audio("resample: empty waveform"));
    }
    if w.sample_rate == target_rate {
        return Ok(w.clone());
    }

    let ratio = target_rate as f64 / w.sample_rate as f64;
    // Relative cutoff: 1.0 when upsampling, ratio when downsampling.
    let cutoff = ratio.min(1.0);
    // Kernel half-support in input samples; stretched when downsampling.
    let half_width = HALF_TAPS / cutoff;
    let i0_beta = bessel_i0(KAISER_BETA);

    let n_in = w.samples.len();
    let n_out = (n_in as f64 * ratio).round() as usize;
    let mut out = Vec::with_capacity(n_out);

    for i in 0..n_out {
        let center = i as f64 / ratio;
        let k_min = (center - half_width).ceil() as i64;
        let k_max = (center + half_width).floor() as i64;
        let mut acc = 0.0;
        let mut gain = 0.0;
        for k in k_min..=k_max {
            let u = k as f64 - center;
            let frac = u / half_width;
            let window = bessel_i0(KAISER_BETA * (1.0 - frac * frac).max(0.0).sqrt()) / i0_beta;
            let h = cutoff * sinc(cutoff * u) * window;
            gain += h;
            if k >= 0 && (k as usize) < n_in {
                acc += w.samples[k as usize] * h;
            }
        }
        out.push(if gain != 0.0 { acc / gain } else { 0.0 });
    }

    Ok(Waveform::new(out, target_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::num_complex::Complex;
    use rustfft::FftPlanner;

    fn sine(freq: f64, rate: u32, seconds: f64) -> Waveform {
        let n = (rate as f64 * seconds).round() as usize;
        let samples = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin() * 0.8)
            .collect();
        Waveform::new(samples, rate)
    }

    /// Peak frequency by Hann-windowed zero-padded FFT with parabolic
    /// refinement on log magnitudes.
    fn peak_frequency(w: &Waveform) -> f64 {
        let fft_size = 1 << 16;
        let n = w.samples.len().min(fft_size);
        let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); fft_size];
        for i in 0..n {
            let win = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos());
            buf[i] = Complex::new(w.samples[i] * win, 0.0);
        }
        FftPlanner::new().plan_fft_forward(fft_size).process(&mut buf);
        let mags: Vec<f64> = buf[..fft_size / 2].iter().map(|c| c.norm()).collect();
        let mut peak = 1usize;
        for (i, &m) in mags.iter().enumerate().skip(1) {
            if m > mags[peak] {
                peak = i;
            }
        }
        let (a, b, c) = (mags[peak - 1].ln(), mags[peak].ln(), mags[peak + 1].ln());
        let delta = 0.5 * (a - c) / (a - 2.0 * b + c);
        (peak as f64 + delta) * w.sample_rate as f64 / fft_size as f64
    }

    #[test]
    fn identity_when_rates_match() {
        let w = sine(440.0, 32_000, 0.1);
        assert_eq!(resample(&w, 32_000).unwrap(), w);
    }

    #[test]
    fn output_length_matches_ratio() {
        let w = sine(1000.0, 44_100, 10.0);
        let out = resample(&w, 32_000).unwrap();
        assert_eq!(out.samples.len(), 320_000);
        assert_eq!(out.sample_rate, 32_000);

        let up = resample(&sine(1000.0, 16_000, 1.0), 32_000).unwrap();
        assert_eq!(up.samples.len(), 32_000);
    }

    #[test]
    fn tone_frequency_preserved_downsampling() {
        let w = sine(1000.0, 48_000, 1.0);
        let out = resample(&w, 32_000).unwrap();
        assert_eq!(out.samples.len(), 32_000);
        let f = peak_frequency(&out);
        assert!((f - 1000.0).abs() < 1.0, "peak at {f} Hz");
    }

    #[test]
    fn tone_frequency_preserved_upsampling() {
        let w = sine(1000.0, 22_050, 1.0);
        let out = resample(&w, 32_000).unwrap();
        let f = peak_frequency(&out);
        assert!((f - 1000.0).abs() < 1.0, "peak at {f} Hz");
    }

    #[test]
    fn dc_passes_through_exactly() {
        let w = Waveform::new(vec![0.5; 4410], 44_100);
        let out = resample(&w, 32_000).unwrap();
        // Away from the edges every sample is exactly DC thanks to the
        // per-sample gain normalization.
        for &x in &out.samples[100..out.samples.len() - 100] {
            assert!((x - 0.5).abs() < 1e-9, "sample {x}");
        }
    }

    #[test]
    fn amplitude_roughly_preserved() {
        let w = sine(440.0, 48_000, 0.5);
        let out = resample(&w, 32_000).unwrap();
        let peak = out.samples.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        assert!((peak - 0.8).abs() < 0.01, "peak {peak}");
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(resample(&Waveform::new(vec![], 48_000), 32_000).is_err());
        assert!(resample(&Waveform::new(vec![0.0], 0), 32_000).is_err());
        assert!(resample(&Waveform::new(vec![0.0], 48_000), 0).is_err());
    }

    #[test]
    fn bessel_i0_matches_reference_values() {
        // Abramowitz & Stegun table values.
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.2660658777520084).abs() < 1e-12);
        assert!((bessel_i0(2.0) - 2.2795853023360673).abs() < 1e-12);
        assert!((bessel_i0(8.0) - 427.56411572180474).abs() < 1e-9 * 427.0);
    }
}
