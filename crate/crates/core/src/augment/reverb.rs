use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{AugmentError, RirFilter};
use crate::audio::{peak_guard, AudioClip};

// Below this many multiply-adds the direct sum beats the FFT round trip.
const DIRECT_LIMIT: usize = 1 << 16;

/// Direct-form linear convolution, full length `x.len() + h.len() - 1`.
pub fn convolve_direct(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let mut y = vec![0.0; x.len() + h.len() - 1];
    for (k, &hk) in h.iter().enumerate() {
        if hk == 0.0 {
            continue;
        }
        for (n, &xn) in x.iter().enumerate() {
            y[n + k] += xn * hk;
        }
    }
    y
}

fn convolve_fft(x: &[f64], h: &[f64], out_len: usize) -> Vec<f64> {
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let load = |s: &[f64]| {
        let mut b = vec![Complex::new(0.0, 0.0); n];
        for (d, &v) in b.iter_mut().zip(s) {
            d.re = v;
        }
        b
    };
    let mut a = load(x);
    let mut b = load(h);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    let scale = 1.0 / n as f64;
    a.iter().take(out_len).map(|c| c.re * scale).collect()
}

/// `x * h` keeping only the first `x.len()` samples, without normalization.
pub fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let nonzero = h.iter().filter(|&&v| v != 0.0).count();
    if nonzero * x.len() <= DIRECT_LIMIT {
        let mut y = convolve_direct(x, h);
        y.truncate(x.len());
        y
    } else {
        convolve_fft(x, h, x.len())
    }
}

/// Reverberated copy of `clip`: linear convolution with the RIR truncated
/// to the clip length, peak-normalized only if it leaves `[-1, 1]`.
pub fn reverberate(clip: &AudioClip, rir: &RirFilter) -> Result<AudioClip, AugmentError> {
    if clip.is_empty() {
        return Err(AugmentError::EmptyInput("clip"));
    }
    if rir.taps.is_empty() {
        return Err(AugmentError::EmptyInput("rir"));
    }
    let mut y = convolve_truncated(&clip.samples, &rir.taps);
    peak_guard(&mut y);
    Ok(clip.with_samples(clip.id.clone(), y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_impulse_is_identity() {
        let clip = AudioClip::new("c", (0..500).map(|i| ((i * 7) % 13) as f64 / 20.0 - 0.3).collect());
        let out = reverberate(&clip, &RirFilter::unit_impulse("d")).unwrap();
        assert_eq!(out.samples, clip.samples);
    }

    #[test]
    fn delayed_half_impulse() {
        let clip = AudioClip::new("c", (0..3000).map(|i| (i as f64 * 0.01).sin() * 0.8).collect());
        let mut taps = vec![0.0; 101];
        taps[100] = 0.5;
        let out = reverberate(&clip, &RirFilter::new("h", taps).unwrap()).unwrap();
        assert_eq!(out.len(), 3000);
        assert!(out.samples[..100].iter().all(|s| s.abs() < 1e-12));
        for n in 100..3000 {
            assert!((out.samples[n] - 0.5 * clip.samples[n - 100]).abs() < 1e-12);
        }
    }

    #[test]
    fn fft_path_agrees_with_direct() {
        let x: Vec<f64> = (0..4000).map(|i| ((i * 31 % 17) as f64 - 8.0) / 10.0).collect();
        let h: Vec<f64> = (0..300).map(|i| 0.9f64.powi(i) * if i % 2 == 0 { 1.0 } else { -0.5 }).collect();
        let fast = convolve_fft(&x, &h, x.len());
        let mut slow = convolve_direct(&x, &h);
        slow.truncate(x.len());
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_inputs() {
        let rir = RirFilter::unit_impulse("d");
        assert!(reverberate(&AudioClip::new("e", vec![]), &rir).is_err());
        let bad = RirFilter { id: "x".into(), taps: vec![] };
        assert!(reverberate(&AudioClip::new("c", vec![0.1]), &bad).is_err());
    }

    #[test]
    fn loud_output_is_normalized() {
        let clip = AudioClip::new("c", vec![0.9; 50]);
        let out = reverberate(&clip, &RirFilter::new("g", vec![1.0, 1.0]).unwrap()).unwrap();
        assert!((out.peak() - crate::audio::WRITE_PEAK).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn convolution_is_linear(
            x in proptest::collection::vec(-1.0f64..1.0, 1..600),
            h in proptest::collection::vec(-1.0f64..1.0, 1..400),
            a in -3.0f64..3.0,
        ) {
            let y = convolve_truncated(&x, &h);
            let ax: Vec<f64> = x.iter().map(|v| a * v).collect();
            let ay = convolve_truncated(&ax, &h);
            for (p, q) in ay.iter().zip(&y) {
                prop_assert!((p - a * q).abs() <= 1e-9);
            }
        }
    }
}
