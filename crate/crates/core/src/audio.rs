//! Mono PCM clips and WAV input/output.

use std::path::Path;

use thiserror::Error;

/// The only sample rate the pipeline accepts.
pub const SAMPLE_RATE: u32 = 16_000;

/// Peak that over-range clips are scaled to before 16-bit quantization.
pub const WRITE_PEAK: f64 = 0.999;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("{path}: {source}")]
    Wav {
        path: String,
        #[source]
        source: hound::Error,
    },
    #[error("{path}: unsupported encoding ({bits}-bit {format})")]
    UnsupportedEncoding {
        path: String,
        bits: u16,
        format: &'static str,
    },
    #[error("{path}: unsupported sample rate {rate} Hz (expected {SAMPLE_RATE})")]
    UnsupportedSampleRate { path: String, rate: u32 },
    #[error("{0}: zero-length audio")]
    ZeroLength(String),
    #[error("empty clip")]
    EmptyClip,
}

/// A mono clip with samples nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub id: String,
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(id: impl Into<String>, samples: Vec<f64>) -> Self {
        AudioClip {
            id: id.into(),
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        peak(&self.samples)
    }

    pub fn with_samples(&self, id: impl Into<String>, samples: Vec<f64>) -> Self {
        AudioClip {
            id: id.into(),
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

pub fn peak(samples: &[f64]) -> f64 {
    samples.iter().fold(0.0_f64, |m, s| m.max(s.abs()))
}

/// Scales `samples` so the peak is [`WRITE_PEAK`] if the peak exceeds 1.0.
/// Returns the applied gain (1.0 when untouched).
pub fn peak_guard(samples: &mut [f64]) -> f64 {
    let p = peak(samples);
    if p > 1.0 {
        let gain = WRITE_PEAK / p;
        samples.iter_mut().for_each(|s| *s *= gain);
        gain
    } else {
        1.0
    }
}

/// Mean squared amplitude.
pub fn rms_power(samples: &[f64]) -> Result<f64, AudioError> {
    if samples.is_empty() {
        return Err(AudioError::EmptyClip);
    }
    Ok(samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64)
}

/// Reads a 16-bit integer or 32-bit float WAV, averaging channels to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let wav_err = |source| AudioError::Wav {
        path: name.clone(),
        source,
    };
    let reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(AudioError::UnsupportedSampleRate {
            path: name,
            rate: spec.sample_rate,
        });
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(wav_err)?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()
            .map_err(wav_err)?,
        (fmt, bits) => {
            return Err(AudioError::UnsupportedEncoding {
                path: name,
                bits,
                format: match fmt {
                    hound::SampleFormat::Int => "int",
                    hound::SampleFormat::Float => "float",
                },
            })
        }
    };
    let channels = spec.channels.max(1) as usize;
    let samples: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    if samples.is_empty() {
        return Err(AudioError::ZeroLength(name));
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(AudioClip {
        id,
        samples,
        sample_rate: spec.sample_rate,
    })
}

fn quantize(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Writes a 16-bit mono WAV. Clips whose peak exceeds 1.0 are scaled to a
/// peak of [`WRITE_PEAK`] first.
pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let path = path.as_ref();
    let wav_err = |source| AudioError::Wav {
        path: path.display().to_string(),
        source,
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let p = clip.peak();
    let gain = if p > 1.0 { WRITE_PEAK / p } else { 1.0 };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &clip.samples {
        w.write_sample(quantize(s * gain)).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}

/// Writes a 32-bit float mono WAV without any normalization. Used for
/// impulse responses, whose absolute scale matters.
pub fn write_wav_f32(clip: &AudioClip, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let path = path.as_ref();
    let wav_err = |source| AudioError::Wav {
        path: path.display().to_string(),
        source,
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &clip.samples {
        w.write_sample(s as f32).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_raw(path: &Path, spec: hound::WavSpec, f: impl FnOnce(&mut hound::WavWriter<std::io::BufWriter<std::fs::File>>)) {
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        f(&mut w);
        w.finalize().unwrap();
    }

    fn spec16(channels: u16, rate: u32) -> hound::WavSpec {
        hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        }
    }

    #[test]
    fn full_scale_int_maps_below_one() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_raw(&p, spec16(1, SAMPLE_RATE), |w| w.write_sample(32767i16).unwrap());
        let clip = read_wav(&p).unwrap();
        assert_eq!(clip.samples.len(), 1);
        assert!((clip.samples[0] - 32767.0 / 32768.0).abs() < 1e-12);
        assert_eq!(clip.id, "a");
    }

    #[test]
    fn stereo_float_is_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: SAMPLE_RATE,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        write_raw(&p, spec, |w| {
            w.write_sample(1.0f32).unwrap();
            w.write_sample(0.0f32).unwrap();
        });
        let clip = read_wav(&p).unwrap();
        assert_eq!(clip.samples, vec![0.5]);
    }

    #[test]
    fn rejects_8khz() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("low.wav");
        write_raw(&p, spec16(1, 8000), |w| w.write_sample(1i16).unwrap());
        let err = read_wav(&p).unwrap_err();
        assert!(matches!(err, AudioError::UnsupportedSampleRate { rate: 8000, .. }));
        assert!(err.to_string().contains("unsupported sample rate"));
    }

    #[test]
    fn rejects_24bit_and_empty_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b24.wav");
        let spec = hound::WavSpec {
            bits_per_sample: 24,
            ..spec16(1, SAMPLE_RATE)
        };
        write_raw(&p, spec, |w| w.write_sample(5i32).unwrap());
        assert!(matches!(read_wav(&p), Err(AudioError::UnsupportedEncoding { bits: 24, .. })));

        let e = dir.path().join("empty.wav");
        write_raw(&e, spec16(1, SAMPLE_RATE), |_| {});
        assert!(matches!(read_wav(&e), Err(AudioError::ZeroLength(_))));

        assert!(matches!(read_wav(dir.path().join("nope.wav")), Err(AudioError::Wav { .. })));
    }

    #[test]
    fn over_range_clip_is_peak_normalized_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loud.wav");
        let clip = AudioClip::new("loud", vec![2.0, -1.0, 0.5]);
        write_wav(&clip, &p).unwrap();
        let back = read_wav(&p).unwrap();
        let q = 1.0 / 32768.0;
        assert!((back.samples[0] - 0.999).abs() <= q);
        assert!((back.samples[1] + 0.4995).abs() <= q);
        assert!((back.samples[2] - 0.24975).abs() <= q);
    }

    #[test]
    fn in_range_clip_is_written_unchanged() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("quiet.wav");
        let clip = AudioClip::new("quiet", vec![0.5, -0.25, 0.125, 0.0]);
        write_wav(&clip, &p).unwrap();
        let back = read_wav(&p).unwrap();
        for (a, b) in clip.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn rms_power_cases() {
        assert_eq!(rms_power(&[0.5; 10]).unwrap(), 0.25);
        assert_eq!(rms_power(&[0.0; 10]).unwrap(), 0.0);
        assert!(matches!(rms_power(&[]), Err(AudioError::EmptyClip)));
        // 16 whole periods of a unit sine: the integral of sin^2 over a period is 1/2.
        let n = 1600;
        let s: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 16.0 * i as f64 / n as f64).sin())
            .collect();
        assert!((rms_power(&s).unwrap() - 0.5).abs() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn wav_round_trip_within_one_step(samples in proptest::collection::vec(-1.0f64..=1.0, 1..400)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("rt.wav");
            let clip = AudioClip::new("rt", samples);
            write_wav(&clip, &p).unwrap();
            let back = read_wav(&p).unwrap();
            prop_assert_eq!(back.samples.len(), clip.samples.len());
            for (a, b) in clip.samples.iter().zip(&back.samples) {
                prop_assert!((a - b).abs() <= 1.0 / 32768.0);
            }
        }

        #[test]
        fn rms_power_scales_quadratically(samples in proptest::collection::vec(-1.0f64..=1.0, 1..200), k in -4.0f64..4.0) {
            let p = rms_power(&samples).unwrap();
            let scaled: Vec<f64> = samples.iter().map(|s| s * k).collect();
            let pk = rms_power(&scaled).unwrap();
            prop_assert!((pk - k * k * p).abs() <= 1e-9 * (k * k * p).abs().max(1e-300));
        }
    }
}
