use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::loss::{effective_target, frame_loss};
use super::{FeatureScaler, SpotterError};

/// Index of the wake-word class in the softmax output.
pub const WW_CLASS: usize = 1;

/// Rows per gradient work item. Chunk gradients are summed in index order,
/// so results do not depend on how chunks are scheduled.
const GRAD_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub input_dim: usize,
    pub bottleneck: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub classes: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape {
            input_dim: 620,
            bottleneck: 87,
            hidden: 400,
            blocks: 3,
            classes: 2,
        }
    }
}

impl ModelShape {
    pub fn validate(&self) -> Result<(), SpotterError> {
        let ModelShape { input_dim, bottleneck, hidden, blocks, classes } = *self;
        if input_dim == 0 || bottleneck == 0 || hidden == 0 || blocks == 0 || classes < 2 {
            return Err(SpotterError::Shape(format!("degenerate model shape {self:?}")));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        let first = self.input_dim * self.bottleneck;
        let rest = (self.blocks - 1) * self.hidden * self.bottleneck;
        let affine = self.blocks * (self.bottleneck * self.hidden + self.hidden);
        first + rest + affine + self.hidden * self.classes + self.classes
    }
}

/// Bottleneck factor followed by an affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    /// `in x bottleneck`, no bias.
    pub bottleneck: Array2<f64>,
    /// `bottleneck x hidden`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// All trainable tensors. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub blocks: Vec<Block>,
    /// `hidden x classes`.
    pub out_weight: Array2<f64>,
    pub out_bias: Array1<f64>,
}

impl Params {
    pub fn zeros(shape: &ModelShape) -> Self {
        let blocks = (0..shape.blocks)
            .map(|i| {
                let fan_in = if i == 0 { shape.input_dim } else { shape.hidden };
                Block {
                    bottleneck: Array2::zeros((fan_in, shape.bottleneck)),
                    weight: Array2::zeros((shape.bottleneck, shape.hidden)),
                    bias: Array1::zeros(shape.hidden),
                }
            })
            .collect();
        Params {
            blocks,
            out_weight: Array2::zeros((shape.hidden, shape.classes)),
            out_bias: Array1::zeros(shape.classes),
        }
    }

    /// Scaled-uniform fan-in initialization. Factors feeding a ReLU get
    /// limit `sqrt(6 / fan_in)`, linear ones `sqrt(3 / fan_in)`. Biases are zero.
    pub fn init<R: Rng + ?Sized>(shape: &ModelShape, rng: &mut R) -> Self {
        let mut p = Params::zeros(shape);
        let mut fill = |a: &mut Array2<f64>, gain: f64| {
            let limit = (gain / a.nrows() as f64).sqrt();
            a.iter_mut().for_each(|w| *w = rng.random_range(-limit..limit));
        };
        for b in &mut p.blocks {
            fill(&mut b.bottleneck, 3.0);
            fill(&mut b.weight, 6.0);
        }
        fill(&mut p.out_weight, 3.0);
        p
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::with_capacity(3 * self.blocks.len() + 2);
        for b in &self.blocks {
            v.push(b.bottleneck.as_slice().expect("standard layout"));
            v.push(b.weight.as_slice().expect("standard layout"));
            v.push(b.bias.as_slice().expect("standard layout"));
        }
        v.push(self.out_weight.as_slice().expect("standard layout"));
        v.push(self.out_bias.as_slice().expect("standard layout"));
        v
    }

    /// Mutable tensors in [`Params::tensors`] order, each tagged with whether
    /// it is a weight matrix (as opposed to a bias).
    pub fn tensors_mut(&mut self) -> Vec<(&mut [f64], bool)> {
        let mut v: Vec<(&mut [f64], bool)> = Vec::with_capacity(3 * self.blocks.len() + 2);
        for b in &mut self.blocks {
            v.push((b.bottleneck.as_slice_mut().expect("standard layout"), true));
            v.push((b.weight.as_slice_mut().expect("standard layout"), true));
            v.push((b.bias.as_slice_mut().expect("standard layout"), false));
        }
        v.push((self.out_weight.as_slice_mut().expect("standard layout"), true));
        v.push((self.out_bias.as_slice_mut().expect("standard layout"), false));
        v
    }

    pub fn add_assign(&mut self, other: &Params) {
        for ((a, _), b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

/// The trained network plus the input standardization it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct SpotterModel {
    pub shape: ModelShape,
    pub params: Params,
    pub scaler: FeatureScaler,
    /// Posterior smoothing window measured from training positives, if known.
    pub smooth_window: Option<usize>,
}

/// Frames with their targets and source-utterance polarity.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    /// Standardized inputs, one row per frame.
    pub x: ArrayView2<'a, f64>,
    pub targets: &'a [u8],
    /// Whether each frame comes from a positive utterance.
    pub positive: &'a [bool],
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    fn slice(&self, start: usize, end: usize) -> Batch<'_> {
        Batch {
            x: self.x.slice(s![start..end, ..]),
            targets: &self.targets[start..end],
            positive: &self.positive[start..end],
        }
    }
}

struct Activations {
    /// Input to each block's bottleneck.
    inputs: Vec<Array2<f64>>,
    /// Bottleneck outputs.
    narrow: Vec<Array2<f64>>,
    /// Post-ReLU outputs of each block.
    relu: Vec<Array2<f64>>,
    probs: Array2<f64>,
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
}

fn forward_full(p: &Params, x: ArrayView2<f64>) -> Activations {
    let mut inputs = Vec::with_capacity(p.blocks.len());
    let mut narrow = Vec::with_capacity(p.blocks.len());
    let mut relu = Vec::with_capacity(p.blocks.len());
    let mut cur = x.to_owned();
    for b in &p.blocks {
        let h = cur.dot(&b.bottleneck);
        let mut z = h.dot(&b.weight);
        z += &b.bias;
        z.mapv_inplace(|v| v.max(0.0));
        inputs.push(std::mem::replace(&mut cur, z.clone()));
        narrow.push(h);
        relu.push(z);
    }
    let mut logits = cur.dot(&p.out_weight);
    logits += &p.out_bias;
    softmax_rows(&mut logits);
    Activations { inputs, narrow, relu, probs: logits }
}

impl SpotterModel {
    pub fn new(shape: ModelShape, params: Params, scaler: FeatureScaler) -> Result<Self, SpotterError> {
        let m = SpotterModel { shape, params, scaler, smooth_window: None };
        m.check()?;
        Ok(m)
    }

    /// Verifies that every tensor matches `shape`.
    pub fn check(&self) -> Result<(), SpotterError> {
        self.shape.validate()?;
        let reference = Params::zeros(&self.shape);
        let got: Vec<usize> = self.params.tensors().iter().map(|t| t.len()).collect();
        let want: Vec<usize> = reference.tensors().iter().map(|t| t.len()).collect();
        let dims_ok = self.params.blocks.len() == reference.blocks.len()
            && self
                .params
                .blocks
                .iter()
                .zip(&reference.blocks)
                .all(|(a, b)| a.bottleneck.dim() == b.bottleneck.dim() && a.weight.dim() == b.weight.dim())
            && self.params.out_weight.dim() == reference.out_weight.dim();
        if got != want || !dims_ok {
            return Err(SpotterError::Shape("parameter tensors do not match the declared shape".into()));
        }
        if self.scaler.dim() != self.shape.input_dim {
            return Err(SpotterError::Shape(format!(
                "scaler has {} dimensions, model input is {}",
                self.scaler.dim(),
                self.shape.input_dim
            )));
        }
        Ok(())
    }

    /// Softmax posteriors for standardized inputs.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, SpotterError> {
        if x.ncols() != self.shape.input_dim {
            return Err(SpotterError::Shape(format!(
                "input has {} columns, model expects {}",
                x.ncols(),
                self.shape.input_dim
            )));
        }
        Ok(forward_full(&self.params, x).probs)
    }

    /// Standardizes raw stacked features, then runs [`SpotterModel::forward`].
    pub fn posteriors(&self, raw: ArrayView2<f64>) -> Result<Array2<f64>, SpotterError> {
        if raw.ncols() != self.shape.input_dim {
            return Err(SpotterError::Shape(format!(
                "input has {} columns, model expects {}",
                raw.ncols(),
                self.shape.input_dim
            )));
        }
        let x = self.scaler.transform(raw);
        self.forward(x.view())
    }

    /// Wake-word posterior per row of raw stacked features.
    pub fn wake_posteriors(&self, raw: ArrayView2<f64>) -> Result<Vec<f64>, SpotterError> {
        Ok(self.posteriors(raw)?.column(WW_CLASS).to_vec())
    }
}

fn chunk_gradient(p: &Params, batch: &Batch<'_>) -> (Params, f64) {
    let act = forward_full(p, batch.x);
    let n = batch.len();
    let mut loss = 0.0;
    // d loss / d logits = probs - onehot(effective target)
    let mut delta = act.probs.clone();
    for i in 0..n {
        let y = effective_target(batch.targets[i], batch.positive[i]);
        loss += frame_loss(act.probs[[i, WW_CLASS]], batch.targets[i], batch.positive[i]);
        let class = if y == 1 { WW_CLASS } else { 1 - WW_CLASS };
        delta[[i, class]] -= 1.0;
    }
    let mut g = Params {
        blocks: Vec::with_capacity(p.blocks.len()),
        out_weight: act.relu.last().expect("at least one block").t().dot(&delta),
        out_bias: delta.sum_axis(Axis(0)),
    };
    let mut d_act = delta.dot(&p.out_weight.t());
    let mut blocks_rev = Vec::with_capacity(p.blocks.len());
    for k in (0..p.blocks.len()).rev() {
        let b = &p.blocks[k];
        let mut d_z = d_act;
        d_z.zip_mut_with(&act.relu[k], |d, &a| {
            if a <= 0.0 {
                *d = 0.0
            }
        });
        let weight = act.narrow[k].t().dot(&d_z);
        let bias = d_z.sum_axis(Axis(0));
        let d_h = d_z.dot(&b.weight.t());
        let bottleneck = act.inputs[k].t().dot(&d_h);
        d_act = d_h.dot(&b.bottleneck.t());
        blocks_rev.push(Block { bottleneck, weight, bias });
    }
    blocks_rev.reverse();
    g.blocks = blocks_rev;
    (g, loss)
}

/// Analytic gradient of the summed loss over `batch`, plus the loss itself.
pub fn gradient(model: &SpotterModel, batch: &Batch<'_>) -> Result<(Params, f64), SpotterError> {
    if batch.is_empty() {
        return Err(SpotterError::Dataset("empty batch".into()));
    }
    if batch.x.ncols() != model.shape.input_dim
        || batch.targets.len() != batch.len()
        || batch.positive.len() != batch.len()
    {
        return Err(SpotterError::Shape("batch fields disagree with the model or each other".into()));
    }
    let chunks = batch.len().div_ceil(GRAD_CHUNK);
    let parts = crate::exec::map_range(chunks, |c| {
        let start = c * GRAD_CHUNK;
        let end = (start + GRAD_CHUNK).min(batch.len());
        chunk_gradient(&model.params, &batch.slice(start, end))
    });
    let mut iter = parts.into_iter();
    let (mut total, mut loss) = iter.next().expect("non-empty batch");
    for (g, l) in iter {
        total.add_assign(&g);
        loss += l;
    }
    Ok((total, loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelShape {
        ModelShape { input_dim: 6, bottleneck: 3, hidden: 5, blocks: 2, classes: 2 }
    }

    fn random_model(seed: u64) -> SpotterModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = tiny();
        let mut params = Params::init(&shape, &mut rng);
        for (t, _) in params.tensors_mut() {
            t.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
        SpotterModel::new(shape, params, FeatureScaler::identity(shape.input_dim)).unwrap()
    }

    #[test]
    fn param_count() {
        let s = ModelShape::default();
        assert_eq!(
            s.num_params(),
            620 * 87 + 87 * 400 + 400 + 2 * (400 * 87 + 87 * 400 + 400) + 400 * 2 + 2
        );
        let p = Params::zeros(&s);
        assert_eq!(p.tensors().iter().map(|t| t.len()).sum::<usize>(), s.num_params());
    }

    #[test]
    fn zero_model_is_uniform() {
        let shape = tiny();
        let m = SpotterModel::new(shape, Params::zeros(&shape), FeatureScaler::identity(6)).unwrap();
        let x = Array2::from_shape_fn((4, 6), |(i, j)| (i as f64 - j as f64) * 3.0);
        let q = m.forward(x.view()).unwrap();
        assert!(q.iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let m = random_model(3);
        let x = Array2::from_shape_fn((50, 6), |(i, j)| ((i * 7 + j * 13) % 17) as f64 - 8.0);
        let q = m.forward(x.view()).unwrap();
        for r in q.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
            assert!(r.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn matches_row_by_row_evaluation() {
        let m = random_model(5);
        let x = Array2::from_shape_fn((3, 6), |(i, j)| (i as f64 * 0.7 - j as f64 * 0.3).sin());
        let q = m.forward(x.view()).unwrap();
        for (r, row) in x.rows().into_iter().enumerate() {
            let mut a: Vec<f64> = row.to_vec();
            for b in &m.params.blocks {
                let h: Vec<f64> = (0..b.bottleneck.ncols())
                    .map(|k| (0..a.len()).map(|i| a[i] * b.bottleneck[[i, k]]).sum())
                    .collect();
                a = (0..b.weight.ncols())
                    .map(|o| {
                        let z: f64 = b.bias[o] + (0..h.len()).map(|k| h[k] * b.weight[[k, o]]).sum::<f64>();
                        if z > 0.0 { z } else { 0.0 }
                    })
                    .collect();
            }
            let logits: Vec<f64> = (0..2)
                .map(|c| m.params.out_bias[c] + (0..a.len()).map(|i| a[i] * m.params.out_weight[[i, c]]).sum::<f64>())
                .collect();
            let ww = 1.0 / (1.0 + (logits[0] - logits[1]).exp());
            assert!((q[[r, WW_CLASS]] - ww).abs() < 1e-9);
        }
    }

    #[test]
    fn shape_errors() {
        let m = random_model(1);
        assert!(matches!(m.forward(Array2::zeros((2, 5)).view()), Err(SpotterError::Shape(_))));
        let mut bad = m.clone();
        bad.params.out_bias = Array1::zeros(3);
        assert!(bad.check().is_err());
        assert!(SpotterModel::new(tiny(), Params::zeros(&tiny()), FeatureScaler::identity(4)).is_err());
    }

    #[test]
    fn chunked_gradient_equals_single_pass() {
        let m = random_model(8);
        let n = 150;
        let x = Array2::from_shape_fn((n, 6), |(i, j)| ((i * 31 + j * 7) % 23) as f64 / 10.0 - 1.1);
        let targets: Vec<u8> = (0..n).map(|i| u8::from(i % 3 == 0)).collect();
        let positive: Vec<bool> = (0..n).map(|i| i % 5 != 0).collect();
        let batch = Batch { x: x.view(), targets: &targets, positive: &positive };
        let (g, loss) = gradient(&m, &batch).unwrap();
        let (g1, l1) = chunk_gradient(&m.params, &batch);
        assert!((loss - l1).abs() < 1e-9);
        for (a, b) in g.tensors().iter().zip(g1.tensors()) {
            for (u, v) in a.iter().zip(b) {
                assert!((u - v).abs() < 1e-9);
            }
        }
    }
}
