//! WAV file reading and writing. Readable inputs are 16-bit integer or
//! 32-bit float PCM; multi-channel files are downmixed by averaging.
//! Output is always 16-bit PCM.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::Waveform;
use crate::error::{Error, Result};

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = WavReader::open(path)
        .map_err(|e| Error::audio(format!("read {}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels == 0 {
        return Err(Error::audio(format!("read {}: zero channels", path.display())));
    }
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::audio(format!("read {}: {e}", path.display())))?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::audio(format!("read {}: {e}", path.display())))?,
        (format, bits) => {
            return Err(Error::audio(format!(
                "read {}: unsupported format {format:?} {bits}-bit (want 16-bit int or 32-bit float)",
                path.display()
            )));
        }
    };
    let frames = interleaved.len() / channels;
    let mut samples = Vec::with_capacity(frames);
    for f in 0..frames {
        let mut acc = 0.0;
        for c in 0..channels {
            acc += interleaved[f * channels + c];
        }
        samples.push(acc / channels as f64);
    }
    Ok(Waveform::new(samples, spec.sample_rate))
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    if w.sample_rate == 0 {
        return Err(Error::audio("write_wav: zero sample rate"));
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)
        .map_err(|e| Error::audio(format!("write {}: {e}", path.display())))?;
    for &x in &w.samples {
        let v = (x.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer
            .write_sample(v)
            .map_err(|e| Error::audio(format!("write {}: {e}", path.display())))?;
    }
    writer
        .finalize()
        .map_err(|e| Error::audio(format!("write {}: {e}", path.display())))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let w = Waveform::new(
            (0..2000)
                .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 32_000.0).sin() * 0.9)
                .collect(),
            32_000,
        );
        write_wav(&path, &w).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 32_000);
        assert_eq!(back.samples.len(), 2000);
        for (a, b) in w.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 2.0 / 32767.0, "{a} vs {b}");
        }
    }

    #[test]
    fn stereo_downmixes_by_averaging() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut writer = WavWriter::create(&path, spec).unwrap();
        // Left 0.5, right -0.25 throughout.
        for _ in 0..100 {
            writer.write_sample((0.5f64 * 32768.0) as i16).unwrap();
            writer.write_sample((-0.25f64 * 32768.0) as i16).unwrap();
        }
        writer.finalize().unwrap();
        let w = read_wav(&path).unwrap();
        assert_eq!(w.samples.len(), 100);
        for &x in &w.samples {
            assert!((x - 0.125).abs() < 1e-4, "{x}");
        }
    }

    #[test]
    fn float_wav_reads_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f32.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut writer = WavWriter::create(&path, spec).unwrap();
        for i in 0..50 {
            writer.write_sample(i as f32 / 100.0).unwrap();
        }
        writer.finalize().unwrap();
        let w = read_wav(&path).unwrap();
        assert_eq!(w.samples.len(), 50);
        assert!((w.samples[49] - 0.49).abs() < 1e-7);
    }

    #[test]
    fn unsupported_bit_depth_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b24.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 24,
            sample_format: SampleFormat::Int,
        };
        let mut writer = WavWriter::create(&path, spec).unwrap();
        writer.write_sample(0i32).unwrap();
        writer.finalize().unwrap();
        assert!(read_wav(&path).is_err());
    }
}
