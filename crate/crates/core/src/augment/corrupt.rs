use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::AugmentError;
use crate::audio::{rms_power, AudioClip};

/// Target SNR draws are clamped to this range (dB).
pub const SNR_RANGE_DB: (f64, f64) = (-5.0, 40.0);

/// Parameters of additive noise/music corruption.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionSpec {
    pub snr_mean_db: f64,
    pub snr_std_db: f64,
    /// Share of the interference power given to the noise source; the rest
    /// goes to music.
    pub noise_music_split: f64,
    pub rng_seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        CorruptionSpec {
            snr_mean_db: 10.0,
            snr_std_db: 3.0,
            noise_music_split: 0.5,
            rng_seed: 0,
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if !self.snr_mean_db.is_finite() {
            return Err(AugmentError::Spec("snr_mean_db must be finite".into()));
        }
        if !(self.snr_std_db >= 0.0 && self.snr_std_db.is_finite()) {
            return Err(AugmentError::Spec("snr_std_db must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_music_split) {
            return Err(AugmentError::Spec("noise_music_split must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Draws a target SNR in dB, clamped to [`SNR_RANGE_DB`].
    pub fn draw_snr<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let normal = Normal::new(self.snr_mean_db, self.snr_std_db).expect("validated spec");
        normal.sample(rng).clamp(SNR_RANGE_DB.0, SNR_RANGE_DB.1)
    }
}

/// Output of [`corrupt`], with enough of the decomposition kept to
/// recompute the SNR independently.
#[derive(Debug, Clone)]
pub struct Corrupted {
    pub clip: AudioClip,
    pub target_snr_db: f64,
    pub realized_snr_db: f64,
    pub alpha: f64,
    pub beta: f64,
    /// `alpha * n + beta * m`, aligned to the clip.
    pub interference: Vec<f64>,
}

/// Tiles `src` when shorter than `len`, otherwise crops it at a random offset.
pub fn fit_to_length<R: Rng + ?Sized>(src: &[f64], len: usize, rng: &mut R) -> Vec<f64> {
    if src.len() >= len {
        let start = rng.random_range(0..=src.len() - len);
        src[start..start + len].to_vec()
    } else {
        src.iter().copied().cycle().take(len).collect()
    }
}

/// `x + alpha * n + beta * m` at a drawn target SNR.
///
/// The split fixes the noise-to-music power ratio; both gains then share one
/// correction factor so the summed interference has exactly the power the
/// target SNR requires, even when `n` and `m` are correlated.
pub fn corrupt_with_rng<R: Rng + ?Sized>(
    clip: &AudioClip,
    noise: &AudioClip,
    music: &AudioClip,
    spec: &CorruptionSpec,
    rng: &mut R,
) -> Result<Corrupted, AugmentError> {
    spec.validate()?;
    if clip.is_empty() {
        return Err(AugmentError::EmptyInput("clip"));
    }
    let len = clip.len();
    let target = spec.draw_snr(rng);
    let signal_power = rms_power(&clip.samples)?;
    if signal_power == 0.0 {
        return Err(AugmentError::SilentSignal);
    }
    let interference_power = signal_power / 10f64.powf(target / 10.0);
    let split = spec.noise_music_split;

    let mut prepare = |src: &AudioClip, share: f64, name: &'static str| -> Result<(Vec<f64>, f64), AugmentError> {
        if share == 0.0 {
            return Ok((Vec::new(), 0.0));
        }
        if src.is_empty() {
            return Err(AugmentError::EmptyInput(name));
        }
        let fitted = fit_to_length(&src.samples, len, rng);
        let p = rms_power(&fitted)?;
        if p == 0.0 {
            return Err(AugmentError::SilentInterference(name));
        }
        Ok((fitted, (share * interference_power / p).sqrt()))
    };
    let (n, mut alpha) = prepare(noise, split, "noise")?;
    let (m, mut beta) = prepare(music, 1.0 - split, "music")?;

    let mix = |a: f64, b: f64| -> Vec<f64> {
        (0..len)
            .map(|i| n.get(i).map_or(0.0, |v| a * v) + m.get(i).map_or(0.0, |v| b * v))
            .collect()
    };
    let raw = mix(alpha, beta);
    let raw_power = rms_power(&raw)?;
    if raw_power == 0.0 {
        return Err(AugmentError::SilentInterference("combined"));
    }
    let correction = (interference_power / raw_power).sqrt();
    alpha *= correction;
    beta *= correction;
    let interference: Vec<f64> = raw.iter().map(|v| v * correction).collect();

    let samples: Vec<f64> = clip
        .samples
        .iter()
        .zip(&interference)
        .map(|(x, i)| x + i)
        .collect();
    let realized = 10.0 * (signal_power / rms_power(&interference)?).log10();
    Ok(Corrupted {
        clip: clip.with_samples(clip.id.clone(), samples),
        target_snr_db: target,
        realized_snr_db: realized,
        alpha,
        beta,
        interference,
    })
}

/// [`corrupt_with_rng`] with an RNG seeded from `spec.rng_seed`.
pub fn corrupt(
    clip: &AudioClip,
    noise: &AudioClip,
    music: &AudioClip,
    spec: &CorruptionSpec,
) -> Result<Corrupted, AugmentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    corrupt_with_rng(clip, noise, music, spec, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(seed: u64, n: usize) -> AudioClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioClip::new(format!("n{seed}"), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn unit_power(mut c: AudioClip) -> AudioClip {
        let p = rms_power(&c.samples).unwrap();
        c.samples.iter_mut().for_each(|s| *s /= p.sqrt());
        c
    }

    fn fixed(snr: f64, split: f64) -> CorruptionSpec {
        CorruptionSpec {
            snr_mean_db: snr,
            snr_std_db: 0.0,
            noise_music_split: split,
            rng_seed: 1,
        }
    }

    #[test]
    fn noise_only_closed_form_gain() {
        let x = unit_power(noise(1, 4000));
        let n = unit_power(noise(2, 4000));
        let silent = AudioClip::new("m", vec![0.0; 10]);
        let out = corrupt(&x, &n, &silent, &fixed(10.0, 1.0)).unwrap();
        assert_eq!(out.beta, 0.0);
        assert!((out.alpha - 0.1f64.sqrt()).abs() < 1e-9, "alpha = {}", out.alpha);
        assert!((out.realized_snr_db - 10.0).abs() < 0.1);
        let measured = 10.0 * (rms_power(&x.samples).unwrap() / rms_power(&out.interference).unwrap()).log10();
        assert!((measured - out.realized_snr_db).abs() < 0.01);
    }

    #[test]
    fn two_sources_hit_target_and_ratio() {
        let x = noise(3, 5000);
        let n = noise(4, 7000);
        let m = noise(5, 1200);
        let spec = fixed(5.0, 0.25);
        let out = corrupt(&x, &n, &m, &spec).unwrap();
        assert!((out.realized_snr_db - 5.0).abs() < 1e-9);
        // output decomposes as x + interference
        for i in 0..x.len() {
            assert!((out.clip.samples[i] - x.samples[i] - out.interference[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_draw_is_the_mean() {
        let spec = fixed(10.0, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            assert_eq!(spec.draw_snr(&mut rng), 10.0);
        }
    }

    #[test]
    fn draws_are_clamped() {
        let spec = CorruptionSpec {
            snr_mean_db: 60.0,
            snr_std_db: 1.0,
            ..CorruptionSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(spec.draw_snr(&mut rng), 40.0);
    }

    #[test]
    fn zero_power_interference_with_share_is_an_error() {
        let x = noise(1, 100);
        let z = AudioClip::new("z", vec![0.0; 100]);
        assert!(matches!(
            corrupt(&x, &z, &noise(2, 100), &fixed(10.0, 0.5)),
            Err(AugmentError::SilentInterference("noise"))
        ));
        assert!(corrupt(&x, &noise(2, 100), &z, &fixed(10.0, 1.0)).is_ok());
        assert!(matches!(
            corrupt(&AudioClip::new("e", vec![]), &x, &x, &fixed(10.0, 0.5)),
            Err(AugmentError::EmptyInput("clip"))
        ));
    }

    #[test]
    fn tiling_and_cropping() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(fit_to_length(&[1.0, 2.0], 5, &mut rng), vec![1.0, 2.0, 1.0, 2.0, 1.0]);
        let src: Vec<f64> = (0..10).map(f64::from).collect();
        let c = fit_to_length(&src, 4, &mut rng);
        assert_eq!(c.len(), 4);
        assert!(c.windows(2).all(|w| w[1] == w[0] + 1.0));
    }
}
