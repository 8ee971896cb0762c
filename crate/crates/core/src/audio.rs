//! Mono 16-bit PCM WAV reading and writing.
//!
//! The toolkit fixes audio at 16 kHz mono 16-bit PCM; anything else is
//! rejected rather than resampled.

use std::path::Path;

use crate::error::{Error, Result};

pub const SAMPLE_RATE_HZ: u32 = 16_000;

fn audio_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Audio {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Reads a WAV file, returning samples scaled to [-1, 1) and the sample rate.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| audio_err(path, format!("cannot open wav: {e}")))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(audio_err(
            path,
            format!("expected mono audio, got {} channels", spec.channels),
        ));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(audio_err(path, "expected 16-bit PCM samples"));
    }
    let samples: std::result::Result<Vec<i16>, _> = reader.samples::<i16>().collect();
    let samples = samples.map_err(|e| audio_err(path, format!("corrupt sample data: {e}")))?;
    let scaled = samples.iter().map(|&s| f64::from(s) / 32768.0).collect();
    Ok((scaled, spec.sample_rate))
}

/// Writes samples as mono 16-bit PCM, clamping to the representable range.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| audio_err(path, format!("cannot create wav: {e}")))?;
    for &s in samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer
            .write_sample(q)
            .map_err(|e| audio_err(path, format!("write failed: {e}")))?;
    }
    writer
        .finalize()
        .map_err(|e| audio_err(path, format!("finalize failed: {e}")))?;
    Ok(())
}

/// Checks that a referenced audio file exists and is mono 16-bit PCM at `expected_rate`.
pub fn verify_wav(path: &Path, expected_rate: u32) -> Result<()> {
    let reader = hound::WavReader::open(path)
        .map_err(|e| audio_err(path, format!("cannot open wav: {e}")))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(audio_err(path, "audio must be mono"));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(audio_err(path, "audio must be 16-bit PCM"));
    }
    if spec.sample_rate != expected_rate {
        return Err(audio_err(
            path,
            format!(
                "sample rate {} does not match corpus rate {}",
                spec.sample_rate, expected_rate
            ),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_roundtrip_preserves_samples_to_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let samples: Vec<f64> = (0..320)
            .map(|n| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * n as f64 / 16000.0).sin())
            .collect();
        write_wav(&path, &samples, SAMPLE_RATE_HZ).unwrap();
        let (back, rate) = read_wav(&path).unwrap();
        assert_eq!(rate, SAMPLE_RATE_HZ);
        assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(&back) {
            assert!((a - b).abs() < 1.0 / 32768.0 + 1e-12);
        }
    }

    #[test]
    fn verify_rejects_wrong_rate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        write_wav(&path, &[0.0; 100], 8000).unwrap();
        assert!(verify_wav(&path, 16000).is_err());
        assert!(verify_wav(&path, 8000).is_ok());
    }
}
