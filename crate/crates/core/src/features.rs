//! Log filterbank energies (LFBE) and context stacking for the spotter input.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::audio::AudioClip;

/// Frames of left context stacked in front of the current frame.
pub const LEFT_CONTEXT: usize = 20;
/// Frames of right context stacked after the current frame.
pub const RIGHT_CONTEXT: usize = 10;
pub const CONTEXT_FRAMES: usize = LEFT_CONTEXT + 1 + RIGHT_CONTEXT;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("clip of {samples} samples is shorter than one {window}-sample window")]
    ClipTooShort { samples: usize, window: usize },
    #[error("empty feature matrix")]
    Empty,
    #[error("invalid feature config: {0}")]
    Config(String),
    #[error("feature dump: {0}")]
    Dump(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LfbeConfig {
    pub sample_rate: u32,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub num_mel_bins: usize,
    pub mel_low_hz: f64,
    pub mel_high_hz: f64,
    pub log_floor: f64,
}

impl Default for LfbeConfig {
    fn default() -> Self {
        LfbeConfig {
            sample_rate: crate::audio::SAMPLE_RATE,
            window_ms: 25.0,
            hop_ms: 10.0,
            num_mel_bins: 20,
            mel_low_hz: 20.0,
            mel_high_hz: 7600.0,
            log_floor: 1e-10,
        }
    }
}

impl LfbeConfig {
    pub fn window_len(&self) -> usize {
        (self.window_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.hop_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn fft_size(&self) -> usize {
        self.window_len().next_power_of_two()
    }

    /// Number of frames for a clip of `num_samples`, or 0 if shorter than a window.
    pub fn frame_count(&self, num_samples: usize) -> usize {
        let w = self.window_len();
        if num_samples < w {
            0
        } else {
            1 + (num_samples - w) / self.hop_len()
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: &str| Err(FeatureError::Config(m.to_string()));
        if !(self.hop_ms > 0.0 && self.window_ms > self.hop_ms) {
            return bad("need window_ms > hop_ms > 0");
        }
        if self.num_mel_bins == 0 {
            return bad("num_mel_bins must be >= 1");
        }
        if !(self.mel_low_hz >= 0.0
            && self.mel_low_hz < self.mel_high_hz
            && self.mel_high_hz <= self.sample_rate as f64 / 2.0)
        {
            return bad("need 0 <= mel_low_hz < mel_high_hz <= sample_rate/2");
        }
        if self.log_floor <= 0.0 {
            return bad("log_floor must be positive");
        }
        Ok(())
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with centers equally spaced on the mel scale, peak 1.
/// Returned as `num_mel_bins x (fft_size/2 + 1)`.
pub fn mel_filterbank(cfg: &LfbeConfig) -> Array2<f64> {
    let n_fft = cfg.fft_size();
    let n_bins = n_fft / 2 + 1;
    let lo = hz_to_mel(cfg.mel_low_hz);
    let hi = hz_to_mel(cfg.mel_high_hz);
    let edges: Vec<f64> = (0..cfg.num_mel_bins + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.num_mel_bins + 1) as f64))
        .collect();
    let mut fb = Array2::zeros((cfg.num_mel_bins, n_bins));
    for m in 0..cfg.num_mel_bins {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * cfg.sample_rate as f64 / n_fft as f64;
            let w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            fb[[m, k]] = w;
        }
    }
    fb
}

/// Reusable LFBE extractor (FFT plan, window and filterbank precomputed).
pub struct LfbeExtractor {
    cfg: LfbeConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filters: Array2<f64>,
}

impl LfbeExtractor {
    pub fn new(cfg: LfbeConfig) -> Result<Self, FeatureError> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size());
        let n = cfg.window_len();
        // periodic Hann
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let filters = mel_filterbank(&cfg);
        Ok(LfbeExtractor {
            cfg,
            fft,
            window,
            filters,
        })
    }

    pub fn config(&self) -> &LfbeConfig {
        &self.cfg
    }

    pub fn compute(&self, samples: &[f64]) -> Result<FeatureMatrix, FeatureError> {
        let cfg = &self.cfg;
        let win = cfg.window_len();
        let hop = cfg.hop_len();
        let t = cfg.frame_count(samples.len());
        if t == 0 {
            return Err(FeatureError::ClipTooShort {
                samples: samples.len(),
                window: win,
            });
        }
        let n_fft = cfg.fft_size();
        let n_bins = n_fft / 2 + 1;
        let mut frames = Array2::zeros((t, cfg.num_mel_bins));
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; n_bins];
        for f in 0..t {
            let start = f * hop;
            for (i, c) in buf.iter_mut().enumerate() {
                *c = if i < win {
                    Complex::new(samples[start + i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for m in 0..cfg.num_mel_bins {
                let e: f64 = self
                    .filters
                    .row(m)
                    .iter()
                    .zip(&power)
                    .map(|(w, p)| w * p)
                    .sum();
                frames[[f, m]] = (e + cfg.log_floor).ln();
            }
        }
        Ok(FeatureMatrix { frames })
    }
}

/// `T x num_mel_bins` log energies at 100 frames per second.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frames: Array2<f64>,
}

impl FeatureMatrix {
    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.frames.ncols()
    }
}

pub fn compute_lfbe(clip: &AudioClip, cfg: &LfbeConfig) -> Result<FeatureMatrix, FeatureError> {
    LfbeExtractor::new(cfg.clone())?.compute(&clip.samples)
}

/// LFBE for many clips, one job per clip.
pub fn compute_lfbe_batch(
    clips: &[AudioClip],
    cfg: &LfbeConfig,
) -> Result<Vec<FeatureMatrix>, FeatureError> {
    let ex = LfbeExtractor::new(cfg.clone())?;
    crate::exec::map(clips, |c| ex.compute(&c.samples))
        .into_iter()
        .collect()
}

/// `T x (CONTEXT_FRAMES * bins)` stacked context vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedFeatures {
    pub vectors: Array2<f64>,
}

/// Writes the context window of frame `t` into `out` (length
/// `CONTEXT_FRAMES * bins`), replicating edge frames past either end.
pub fn stack_frame_into(frames: ArrayView2<f64>, t: usize, out: &mut [f64]) {
    let n = frames.nrows() as isize;
    let bins = frames.ncols();
    for (slot, offset) in (-(LEFT_CONTEXT as isize)..=RIGHT_CONTEXT as isize).enumerate() {
        let src = (t as isize + offset).clamp(0, n - 1) as usize;
        let dst = &mut out[slot * bins..(slot + 1) * bins];
        for (d, s) in dst.iter_mut().zip(frames.row(src)) {
            *d = *s;
        }
    }
}

pub fn stack_context(feat: &FeatureMatrix) -> Result<StackedFeatures, FeatureError> {
    let t = feat.num_frames();
    if t == 0 {
        return Err(FeatureError::Empty);
    }
    let dim = CONTEXT_FRAMES * feat.num_bins();
    let mut vectors = Array2::zeros((t, dim));
    for (i, mut row) in vectors.rows_mut().into_iter().enumerate() {
        stack_frame_into(
            feat.frames.view(),
            i,
            row.as_slice_mut().expect("standard layout"),
        );
    }
    Ok(StackedFeatures { vectors })
}

/// Writes the text dump format: header `T D`, then `T` whitespace-separated rows.
pub fn write_dump(m: ArrayView2<f64>, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{} {}", m.nrows(), m.ncols())?;
    let mut line = String::new();
    for row in m.rows() {
        line.clear();
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                line.push(' ');
            }
            write!(line, "{v}").expect("write to string");
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_dump(r: impl BufRead) -> Result<Array2<f64>, FeatureError> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| FeatureError::Dump("missing header".into()))?
        .map_err(|e| FeatureError::Dump(e.to_string()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|s| s.parse())
        .collect::<Result<_, _>>()
        .map_err(|_| FeatureError::Dump(format!("bad header {header:?}")))?;
    let [rows, cols] = dims[..] else {
        return Err(FeatureError::Dump(format!("bad header {header:?}")));
    };
    let mut data = Vec::with_capacity(rows * cols);
    for (i, line) in lines.enumerate().take(rows) {
        let line = line.map_err(|e| FeatureError::Dump(e.to_string()))?;
        let before = data.len();
        for tok in line.split_whitespace() {
            data.push(
                tok.parse::<f64>()
                    .map_err(|_| FeatureError::Dump(format!("row {}: bad value {tok:?}", i + 1)))?,
            );
        }
        if data.len() - before != cols {
            return Err(FeatureError::Dump(format!("row {}: expected {cols} values", i + 1)));
        }
    }
    if data.len() != rows * cols {
        return Err(FeatureError::Dump(format!("expected {rows} rows")));
    }
    Ok(Array2::from_shape_vec((rows, cols), data).expect("shape checked"))
}
