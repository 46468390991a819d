use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2};

use super::SpotterError;
use crate::features::{stack_frame_into, FeatureMatrix, CONTEXT_FRAMES};
use crate::mining::Polarity;

/// Per-dimension standardization fitted on training inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

/// Standard deviations below this are replaced by 1.
const MIN_STD: f64 = 1e-8;

impl FeatureScaler {
    pub fn identity(dim: usize) -> Self {
        FeatureScaler {
            mean: Array1::zeros(dim),
            std: Array1::ones(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn fit(rows: ArrayView2<f64>) -> Self {
        let n = rows.nrows().max(1) as f64;
        let mean = rows.sum_axis(ndarray::Axis(0)) / n;
        let mut var = Array1::<f64>::zeros(rows.ncols());
        for r in rows.rows() {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m).powi(2);
            }
        }
        let std = var.mapv(|v| {
            let s = (v / n).sqrt();
            if s > MIN_STD {
                s
            } else {
                1.0
            }
        });
        FeatureScaler { mean, std }
    }

    pub fn transform(&self, raw: ArrayView2<f64>) -> Array2<f64> {
        let mut x = raw.to_owned();
        self.transform_inplace(x.view_mut());
        x
    }

    pub fn transform_inplace(&self, mut x: ArrayViewMut2<f64>) {
        for mut row in x.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }
}

/// Log filterbank frames of one utterance with its frame targets.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceFrames {
    pub utt_id: String,
    pub features: FeatureMatrix,
    pub targets: Vec<u8>,
    pub polarity: Polarity,
}

/// One materialized training record.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub x: Vec<f64>,
    pub y: u8,
    pub polarity: Polarity,
    pub utt_id: String,
}

/// Frame-level training set. Stacked context vectors are assembled on
/// demand from per-utterance filterbank frames.
#[derive(Debug, Clone)]
pub struct FrameDataset {
    utterances: Vec<UtteranceFrames>,
    index: Vec<(u32, u32)>,
    input_dim: usize,
}

impl FrameDataset {
    /// Keeps every `frame_stride`-th frame of every utterance.
    pub fn new(utterances: Vec<UtteranceFrames>, frame_stride: usize) -> Result<Self, SpotterError> {
        if frame_stride == 0 {
            return Err(SpotterError::Dataset("frame_stride must be >= 1".into()));
        }
        let bins = utterances.first().map_or(0, |u| u.features.num_bins());
        let mut index = Vec::new();
        for (ui, u) in utterances.iter().enumerate() {
            let t = u.features.num_frames();
            if u.features.num_bins() != bins {
                return Err(SpotterError::Dataset(format!("{}: inconsistent bin count", u.utt_id)));
            }
            if u.targets.len() != t {
                return Err(SpotterError::Dataset(format!(
                    "{}: {} targets for {t} frames",
                    u.utt_id,
                    u.targets.len()
                )));
            }
            if u.targets.iter().any(|&y| y > 1) {
                return Err(SpotterError::Dataset(format!("{}: targets must be 0 or 1", u.utt_id)));
            }
            if u.polarity == Polarity::Negative && u.targets.contains(&1) {
                return Err(SpotterError::Dataset(format!(
                    "{}: wake-word targets in a negative utterance",
                    u.utt_id
                )));
            }
            if !u.features.frames.iter().all(|v| v.is_finite()) {
                return Err(SpotterError::Dataset(format!("{}: non-finite features", u.utt_id)));
            }
            index.extend((0..t).step_by(frame_stride).map(|f| (ui as u32, f as u32)));
        }
        Ok(FrameDataset {
            utterances,
            index,
            input_dim: bins * CONTEXT_FRAMES,
        })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn utterances(&self) -> &[UtteranceFrames] {
        &self.utterances
    }

    pub fn target(&self, i: usize) -> u8 {
        let (u, f) = self.index[i];
        self.utterances[u as usize].targets[f as usize]
    }

    pub fn is_positive_utt(&self, i: usize) -> bool {
        self.utterances[self.index[i].0 as usize].polarity == Polarity::Positive
    }

    pub fn has_both_classes(&self) -> bool {
        let ones = (0..self.len()).filter(|&i| self.target(i) == 1 && self.is_positive_utt(i)).count();
        ones > 0 && ones < self.len()
    }

    pub fn record(&self, i: usize) -> FrameRecord {
        let (u, f) = self.index[i];
        let utt = &self.utterances[u as usize];
        let mut x = vec![0.0; self.input_dim];
        stack_frame_into(utt.features.frames.view(), f as usize, &mut x);
        FrameRecord {
            x,
            y: utt.targets[f as usize],
            polarity: utt.polarity,
            utt_id: utt.utt_id.clone(),
        }
    }

    /// Writes the raw stacked vectors of `rows` into `out` (`rows.len() x input_dim`).
    pub fn fill_inputs(&self, rows: &[usize], mut out: ArrayViewMut2<f64>) {
        for (r, &i) in rows.iter().enumerate() {
            let (u, f) = self.index[i];
            let utt = &self.utterances[u as usize];
            let mut row = out.row_mut(r);
            stack_frame_into(
                utt.features.frames.view(),
                f as usize,
                row.as_slice_mut().expect("standard layout"),
            );
        }
    }

    /// All raw inputs as one matrix. Memory is `len x input_dim` floats.
    pub fn inputs(&self) -> Array2<f64> {
        let all: Vec<usize> = (0..self.len()).collect();
        let mut out = Array2::zeros((self.len(), self.input_dim));
        self.fill_inputs(&all, out.view_mut());
        out
    }

    /// Fits the scaler over every record, streaming in blocks.
    pub fn fit_scaler(&self) -> FeatureScaler {
        let d = self.input_dim;
        let n = self.len().max(1) as f64;
        let mut sum = Array1::<f64>::zeros(d);
        let mut sq = Array1::<f64>::zeros(d);
        let mut buf = Array2::zeros((256.min(self.len().max(1)), d));
        let all: Vec<usize> = (0..self.len()).collect();
        for chunk in all.chunks(256) {
            let mut view = buf.slice_mut(ndarray::s![..chunk.len(), ..]);
            self.fill_inputs(chunk, view.view_mut());
            for r in view.rows() {
                for ((s, q), x) in sum.iter_mut().zip(sq.iter_mut()).zip(r) {
                    *s += x;
                    *q += x * x;
                }
            }
        }
        let mean = sum / n;
        let std = ndarray::Zip::from(&sq).and(&mean).map_collect(|&q, &m| {
            let s = (q / n - m * m).max(0.0).sqrt();
            if s > MIN_STD {
                s
            } else {
                1.0
            }
        });
        FeatureScaler { mean, std }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(id: &str, t: usize, ones: std::ops::Range<usize>, polarity: Polarity) -> UtteranceFrames {
        UtteranceFrames {
            utt_id: id.into(),
            features: FeatureMatrix {
                frames: Array2::from_shape_fn((t, 20), |(i, j)| (i * 20 + j) as f64),
            },
            targets: (0..t).map(|i| u8::from(ones.contains(&i))).collect(),
            polarity,
        }
    }

    #[test]
    fn records_and_stride() {
        let ds = FrameDataset::new(vec![utt("a", 10, 2..5, Polarity::Positive), utt("b", 5, 0..0, Polarity::Negative)], 2)
            .unwrap();
        assert_eq!(ds.len(), 5 + 3);
        assert_eq!(ds.input_dim(), 620);
        let r = ds.record(1);
        assert_eq!((r.y, r.polarity, r.utt_id.as_str()), (1, Polarity::Positive, "a"));
        assert_eq!(r.x.len(), 620);
        // frame 2: slot 20 is the frame itself
        assert_eq!(r.x[20 * 20], 40.0);
        assert!(ds.has_both_classes());
    }

    #[test]
    fn rejects_positive_targets_in_negatives() {
        let err = FrameDataset::new(vec![utt("n", 5, 1..2, Polarity::Negative)], 1).unwrap_err();
        assert!(matches!(err, SpotterError::Dataset(_)));
        let mut bad = utt("a", 5, 1..2, Polarity::Positive);
        bad.targets.pop();
        assert!(FrameDataset::new(vec![bad], 1).is_err());
    }

    #[test]
    fn streaming_scaler_matches_direct() {
        let ds = FrameDataset::new(vec![utt("a", 30, 2..5, Polarity::Positive), utt("b", 7, 0..0, Polarity::Negative)], 1)
            .unwrap();
        let a = ds.fit_scaler();
        let b = FeatureScaler::fit(ds.inputs().view());
        for (x, y) in a.mean.iter().zip(&b.mean) {
            assert!((x - y).abs() < 1e-9);
        }
        for (x, y) in a.std.iter().zip(&b.std) {
            assert!((x - y).abs() < 1e-6);
        }
        assert!(a.std.iter().all(|&s| s > 0.0));
    }
}
