use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{gradient, Batch, ModelShape, Params, SpotterModel};
use super::{FrameDataset, SpotterError};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub rng_seed: u64,
    pub l2_coefficient: f64,
    pub shape: ModelShape,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            minibatch_size: 256,
            epochs: 10,
            rng_seed: 0,
            l2_coefficient: 0.0,
            shape: ModelShape::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SpotterError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SpotterError::Config("learning_rate must be > 0".into()));
        }
        if self.minibatch_size == 0 {
            return Err(SpotterError::Config("minibatch_size must be >= 1".into()));
        }
        if !(self.l2_coefficient >= 0.0 && self.l2_coefficient.is_finite()) {
            return Err(SpotterError::Config("l2_coefficient must be >= 0".into()));
        }
        self.shape.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Mean per-frame loss of each epoch, accumulated over its minibatches
    /// before their updates.
    pub epoch_losses: Vec<f64>,
}

/// Shuffled minibatch gradient descent on the SSL loss.
///
/// The update is `theta -= lr * (g / batch + l2 * theta)`, the decay term
/// applying to weight matrices only.
pub fn train(data: &FrameDataset, cfg: &TrainConfig) -> Result<(SpotterModel, TrainLog), SpotterError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(SpotterError::Dataset("empty training set".into()));
    }
    if data.input_dim() != cfg.shape.input_dim {
        return Err(SpotterError::Shape(format!(
            "dataset vectors have {} dimensions, model input is {}",
            data.input_dim(),
            cfg.shape.input_dim
        )));
    }
    if !data.has_both_classes() {
        return Err(SpotterError::Dataset("training set needs both target classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let params = Params::init(&cfg.shape, &mut rng);
    let scaler = data.fit_scaler();
    let mut model = SpotterModel::new(cfg.shape, params, scaler)?;
    let mut log = TrainLog::default();

    let n = data.len();
    let bs = cfg.minibatch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut x = Array2::<f64>::zeros((bs, cfg.shape.input_dim));
    let mut targets = Vec::with_capacity(bs);
    let mut positive = Vec::with_capacity(bs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for rows in order.chunks(bs) {
            let mut xb = x.slice_mut(ndarray::s![..rows.len(), ..]);
            data.fill_inputs(rows, xb.view_mut());
            model.scaler.transform_inplace(xb.view_mut());
            targets.clear();
            positive.clear();
            targets.extend(rows.iter().map(|&i| data.target(i)));
            positive.extend(rows.iter().map(|&i| data.is_positive_utt(i)));
            let batch = Batch {
                x: x.slice(ndarray::s![..rows.len(), ..]),
                targets: &targets,
                positive: &positive,
            };
            let (g, loss) = gradient(&model, &batch)?;
            if !loss.is_finite() || g.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
                return Err(SpotterError::Diverged { epoch, loss });
            }
            total += loss;
            let scale = cfg.learning_rate / rows.len() as f64;
            for ((w, is_weight), gw) in model.params.tensors_mut().into_iter().zip(g.tensors()) {
                let decay = if is_weight { cfg.learning_rate * cfg.l2_coefficient } else { 0.0 };
                for (p, d) in w.iter_mut().zip(gw) {
                    *p -= scale * d + decay * *p;
                }
            }
        }
        let mean = total / n as f64;
        if !mean.is_finite() || model.params.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(SpotterError::Diverged { epoch, loss: mean });
        }
        log::debug!("epoch {epoch}: mean loss {mean:.6}");
        log.epoch_losses.push(mean);
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureMatrix;
    use crate::mining::Polarity;
    use crate::spotter::UtteranceFrames;
    use rand::Rng;

    /// Single-bin frames; the wake-word frames sit well above the rest.
    fn toy(n_utts: usize, frames: usize, seed: u64) -> FrameDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let utts = (0..n_utts)
            .map(|u| {
                let positive = u % 2 == 0;
                let targets: Vec<u8> = (0..frames).map(|t| u8::from(positive && (8..16).contains(&t))).collect();
                let frames = Array2::from_shape_fn((frames, 1), |(t, _)| {
                    let base = if targets[t] == 1 { 2.0 } else { -1.0 };
                    base + rng.random_range(-0.4..0.4)
                });
                UtteranceFrames {
                    utt_id: format!("u{u}"),
                    features: FeatureMatrix { frames },
                    targets,
                    polarity: if positive { Polarity::Positive } else { Polarity::Negative },
                }
            })
            .collect();
        FrameDataset::new(utts, 1).unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.1,
            minibatch_size: 16,
            epochs: 50,
            rng_seed: 4,
            l2_coefficient: 0.0,
            shape: ModelShape { input_dim: 31, bottleneck: 4, hidden: 8, blocks: 2, classes: 2 },
        }
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let data = toy(8, 25, 1);
        assert_eq!(data.len(), 200);
        // the centre slot alone separates the classes: a linear classifier exists
        let centre = crate::features::LEFT_CONTEXT;
        let (mut lo1, mut hi0) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..data.len() {
            let r = data.record(i);
            if r.y == 1 {
                lo1 = lo1.min(r.x[centre]);
            } else {
                hi0 = hi0.max(r.x[centre]);
            }
        }
        assert!(lo1 > hi0);

        let (model, log) = train(&data, &tiny_cfg()).unwrap();
        assert!(*log.epoch_losses.last().unwrap() < 0.1, "{:?}", log.epoch_losses);
        let q = model.wake_posteriors(data.inputs().view()).unwrap();
        let correct = (0..data.len()).filter(|&i| u8::from(q[i] >= 0.5) == data.target(i)).count();
        assert!(correct as f64 / data.len() as f64 >= 0.99);
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let data = toy(6, 20, 2);
        let cfg = TrainConfig { epochs: 5, ..tiny_cfg() };
        let (a, _) = train(&data, &cfg).unwrap();
        let (b, _) = train(&data, &cfg).unwrap();
        let bits = |m: &SpotterModel| -> Vec<u64> {
            m.params.tensors().iter().flat_map(|t| t.iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let data = toy(4, 20, 3);
        let cfg = TrainConfig { epochs: 0, ..tiny_cfg() };
        let (m, log) = train(&data, &cfg).unwrap();
        assert!(log.epoch_losses.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        assert_eq!(m.params, Params::init(&cfg.shape, &mut rng));
    }

    #[test]
    fn full_batch_descent_is_monotone() {
        let data = toy(6, 20, 4);
        let cfg = TrainConfig { learning_rate: 0.02, minibatch_size: data.len(), epochs: 40, ..tiny_cfg() };
        let (_, log) = train(&data, &cfg).unwrap();
        for w in log.epoch_losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", log.epoch_losses);
        }
    }

    #[test]
    fn config_and_dataset_errors() {
        let data = toy(4, 20, 5);
        assert!(matches!(train(&data, &TrainConfig { learning_rate: 0.0, ..tiny_cfg() }), Err(SpotterError::Config(_))));
        assert!(matches!(train(&data, &TrainConfig { minibatch_size: 0, ..tiny_cfg() }), Err(SpotterError::Config(_))));
        let negatives_only = toy(4, 20, 5)
            .utterances()
            .iter()
            .filter(|u| u.polarity == Polarity::Negative)
            .cloned()
            .collect();
        let single = FrameDataset::new(negatives_only, 1).unwrap();
        assert!(matches!(train(&single, &tiny_cfg()), Err(SpotterError::Dataset(_))));
        let wide = TrainConfig { shape: ModelShape::default(), ..tiny_cfg() };
        assert!(matches!(train(&data, &wide), Err(SpotterError::Shape(_))));
    }

    #[test]
    fn exploding_steps_are_caught() {
        let data = toy(6, 20, 6);
        let cfg = TrainConfig { learning_rate: 1e200, epochs: 3, ..tiny_cfg() };
        assert!(matches!(train(&data, &cfg), Err(SpotterError::Diverged { .. })));
    }
}
