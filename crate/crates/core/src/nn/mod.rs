//! The light-weight convolutional autoencoder and its training loop.
//!
//! Layer chain (input 1x128x128):
//!
//! | # | operator        | output       | params |
//! |---|-----------------|--------------|--------|
//! | 1 | conv 5x5, relu  | 6x124x124    | 156    |
//! | 2 | maxpool 2x2     | 6x62x62      | 0      |
//! | 3 | conv 5x5, relu  | 16x58x58     | 2416   |
//! | 4 | maxpool 2x2     | 16x29x29     | 0      |
//! | 5 | dense 29, relu  | 16x29x29     | 870    |
//! | 6 | unpool 2x2      | 16x58x58     | 0      |
//! | 7 | convT 5x5, relu | 6x62x62      | 2406   |
//! | 8 | unpool 2x2      | 6x124x124    | 0      |
//! | 9 | convT 5x5, sig  | 1x128x128    | 151    |
//!
//! The dense layer is an affine map over the last axis shared by every
//! channel and row. Its 29x29 weight block is the bottleneck that stays
//! trainable after freezing; everything else, including the dense bias, is
//! frozen.

mod checkpoint;
mod ops;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use ops::Tensor;
use ops::InputGrad;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecspace::ParamVector;

/// Side length of the square input feature map.
pub const INPUT_SIZE: usize = 128;
pub const TOTAL_PARAMS: usize = 5999;
pub const BOTTLENECK_PARAMS: usize = 841;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d,
    MaxPool,
    Dense,
    MaxUnpool,
    ConvTranspose2d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub activation: Activation,
}

impl LayerSpec {
    const fn new(
        kind: LayerKind,
        in_channels: usize,
        out_channels: usize,
        k: usize,
        stride: usize,
        activation: Activation,
    ) -> Self {
        Self {
            kind,
            in_channels,
            out_channels,
            kernel: (k, k),
            stride,
            activation,
        }
    }

    pub fn weight_count(&self) -> usize {
        let (kh, kw) = self.kernel;
        match self.kind {
            LayerKind::Conv2d | LayerKind::ConvTranspose2d => self.in_channels * self.out_channels * kh * kw,
            LayerKind::Dense => self.in_channels * self.out_channels,
            LayerKind::MaxPool | LayerKind::MaxUnpool => 0,
        }
    }

    pub fn bias_count(&self) -> usize {
        match self.kind {
            LayerKind::Conv2d | LayerKind::ConvTranspose2d | LayerKind::Dense => self.out_channels,
            LayerKind::MaxPool | LayerKind::MaxUnpool => 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.bias_count()
    }

    /// Fan-in used for the uniform `±1/sqrt(fan_in)` initialization: the
    /// number of inputs feeding one output element.
    pub fn fan_in(&self) -> usize {
        let (kh, kw) = self.kernel;
        match self.kind {
            LayerKind::Conv2d | LayerKind::ConvTranspose2d => self.in_channels * kh * kw,
            LayerKind::Dense => self.in_channels,
            LayerKind::MaxPool | LayerKind::MaxUnpool => 0,
        }
    }
}

/// The fixed nine-layer architecture.
pub fn architecture() -> Vec<LayerSpec> {
    use Activation::*;
    use LayerKind::*;
    vec![
        LayerSpec::new(Conv2d, 1, 6, 5, 1, Relu),
        LayerSpec::new(MaxPool, 6, 6, 2, 2, None),
        LayerSpec::new(Conv2d, 6, 16, 5, 1, Relu),
        LayerSpec::new(MaxPool, 16, 16, 2, 2, None),
        LayerSpec::new(Dense, 29, 29, 1, 1, Relu),
        LayerSpec::new(MaxUnpool, 16, 16, 2, 2, None),
        LayerSpec::new(ConvTranspose2d, 16, 6, 5, 1, Relu),
        LayerSpec::new(MaxUnpool, 6, 6, 2, 2, None),
        LayerSpec::new(ConvTranspose2d, 6, 1, 5, 1, Sigmoid),
    ]
}

/// Index of the dense bottleneck layer in [`architecture`].
pub const BOTTLENECK_LAYER: usize = 4;

/// A 128x128 normalized log-mel feature map (rows are mel bands, columns
/// are frames), values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSegment {
    values: Vec<f64>,
    pub node: usize,
    pub index: usize,
}

impl FeatureSegment {
    pub fn new(values: Vec<f64>, node: usize, index: usize) -> Result<Self> {
        if values.len() != INPUT_SIZE * INPUT_SIZE {
            return Err(Error::Shape {
                expected: format!("{INPUT_SIZE}x{INPUT_SIZE}"),
                actual: format!("{} values", values.len()),
            });
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("feature values must lie in [0, 1]".into()));
        }
        Ok(Self { values, node, index })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * INPUT_SIZE + col]
    }

    fn to_tensor(&self) -> Tensor {
        Tensor {
            c: 1,
            h: INPUT_SIZE,
            w: INPUT_SIZE,
            data: self.values.clone(),
        }
    }
}

/// Everything `backward` needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input, `activations[l + 1]` the output of layer `l`.
    activations: Vec<Tensor>,
    /// Argmax indices per pooling layer (empty for other layers).
    pool_indices: Vec<Vec<u32>>,
    version: u64,
}

impl ForwardCache {
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("non-empty cache")
    }

    /// Shapes of the input followed by every layer output.
    pub fn shapes(&self) -> Vec<(usize, usize, usize)> {
        self.activations.iter().map(Tensor::shape).collect()
    }
}

/// Output of the frozen layers below the lowest trainable one, for one
/// segment. Produced by [`Autoencoder::encode`] and only valid for a model
/// with the same frozen parameters and mask.
#[derive(Debug, Clone)]
pub struct EncodedSegment {
    start: usize,
    shapes: Vec<(usize, usize, usize)>,
    activation: Tensor,
    pool_indices: Vec<Vec<u32>>,
    target: Vec<f64>,
    frozen_hash: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scope {
    All,
    /// Stop once every layer holding trainable parameters is done.
    Trainable,
}

/// The autoencoder: architecture, flat parameters and trainable mask.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    layers: Vec<LayerSpec>,
    params: Vec<f64>,
    offsets: Vec<usize>,
    trainable: Vec<bool>,
    /// For each unpool layer, the pool layer whose indices it consumes.
    unpool_source: Vec<Option<usize>>,
    seed: u64,
    version: u64,
}

impl Autoencoder {
    /// Builds the network with every parameter drawn uniformly from
    /// `±1/sqrt(fan_in)` of its layer, deterministic in `seed`. All
    /// parameters start trainable.
    pub fn new(seed: u64) -> Self {
        let layers = architecture();
        let mut offsets = Vec::with_capacity(layers.len() + 1);
        let mut total = 0;
        for l in &layers {
            offsets.push(total);
            total += l.param_count();
        }
        offsets.push(total);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(total);
        for l in &layers {
            let bound = init_bound(l);
            for _ in 0..l.param_count() {
                params.push(rng.random_range(-bound..bound));
            }
        }

        let mut stack = Vec::new();
        let unpool_source = layers
            .iter()
            .enumerate()
            .map(|(i, l)| match l.kind {
                LayerKind::MaxPool => {
                    stack.push(i);
                    None
                }
                LayerKind::MaxUnpool => Some(stack.pop().expect("unpool without pool")),
                _ => None,
            })
            .collect();

        Self {
            layers,
            params,
            offsets,
            trainable: vec![true; total],
            unpool_source,
            seed,
            version: 0,
        }
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Sets a single parameter by canonical index.
    pub fn set_param(&mut self, i: usize, value: f64) {
        self.params[i] = value;
        self.bump();
    }

    pub fn trainable_mask(&self) -> &[bool] {
        &self.trainable
    }

    pub fn trainable_count(&self) -> usize {
        self.trainable.iter().filter(|t| **t).count()
    }

    /// Parameter range `(start, end)` of layer `l` in canonical order.
    pub fn layer_range(&self, l: usize) -> (usize, usize) {
        (self.offsets[l], self.offsets[l + 1])
    }

    /// Freezes every parameter except the bottleneck weight block.
    pub fn freeze_all_but_bottleneck(&mut self) {
        let start = self.offsets[BOTTLENECK_LAYER];
        let n = self.layers[BOTTLENECK_LAYER].weight_count();
        self.set_trainable_ranges(&[(start, n)]);
    }

    /// Replaces the mask with the given `(start, len)` ranges.
    pub fn set_trainable_ranges(&mut self, ranges: &[(usize, usize)]) {
        self.trainable.fill(false);
        for &(start, len) in ranges {
            self.trainable[start..start + len].fill(true);
        }
    }

    /// The mask as contiguous `(start, len)` ranges, ascending.
    pub fn trainable_ranges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < self.trainable.len() {
            if self.trainable[i] {
                let start = i;
                while i < self.trainable.len() && self.trainable[i] {
                    i += 1;
                }
                out.push((start, i - start));
            } else {
                i += 1;
            }
        }
        out
    }

    pub(crate) fn from_parts(seed: u64, params: Vec<f64>, ranges: &[(usize, usize)]) -> Result<Self> {
        let mut m = Self::new(seed);
        if params.len() != m.params.len() {
            return Err(Error::LengthMismatch {
                expected: m.params.len(),
                actual: params.len(),
            });
        }
        for &(s, l) in ranges {
            if s + l > m.params.len() {
                return Err(Error::Format {
                    what: "checkpoint",
                    detail: format!("mask range {s}+{l} out of bounds"),
                });
            }
        }
        m.params = params;
        m.set_trainable_ranges(ranges);
        Ok(m)
    }

    fn bump(&mut self) {
        self.version += 1;
    }

    /// Runs the network on `x`, keeping every intermediate for backprop.
    pub fn forward(&self, x: &FeatureSegment) -> Result<(Tensor, ForwardCache)> {
        let cache = self.forward_tensor(x.to_tensor())?;
        Ok((cache.output().clone(), cache))
    }

    fn forward_tensor(&self, input: Tensor) -> Result<ForwardCache> {
        if input.shape() != (1, INPUT_SIZE, INPUT_SIZE) {
            return Err(Error::Shape {
                expected: format!("1x{INPUT_SIZE}x{INPUT_SIZE}"),
                actual: format!("{:?}", input.shape()),
            });
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input);
        let pool_indices = vec![Vec::new(); self.layers.len()];
        Ok(self.run_layers(0, self.layers.len(), activations, pool_indices))
    }

    /// Runs layers `from..to`. `activations[from]` must hold their input;
    /// earlier entries may be empty placeholders.
    fn run_layers(&self, from: usize, to: usize, mut activations: Vec<Tensor>, mut pool_indices: Vec<Vec<u32>>) -> ForwardCache {
        for l in from..to {
            let spec = &self.layers[l];
            let x = &activations[l];
            let (w, b) = self.layer_params(l);
            let mut y = match spec.kind {
                LayerKind::Conv2d => ops::conv2d_forward(x, w, b, spec.out_channels, spec.kernel.0),
                LayerKind::ConvTranspose2d => {
                    ops::conv_transpose2d_forward(x, w, b, spec.out_channels, spec.kernel.0)
                }
                LayerKind::Dense => ops::dense_forward(x, w, b, spec.out_channels),
                LayerKind::MaxPool => {
                    let (y, idx) = ops::maxpool_forward(x);
                    pool_indices[l] = idx;
                    y
                }
                LayerKind::MaxUnpool => {
                    let src = self.unpool_source[l].expect("paired unpool");
                    let shape = activations[src].shape();
                    ops::unpool_forward(x, &pool_indices[src], shape)
                }
            };
            apply_activation(spec.activation, &mut y.data);
            activations.push(y);
        }
        ForwardCache {
            activations,
            pool_indices,
            version: self.version,
        }
    }

    /// Index of the first layer holding a trainable parameter.
    fn lowest_trainable_layer(&self) -> Option<usize> {
        let first = self.trainable.iter().position(|t| *t)?;
        Some(self.offsets.partition_point(|&o| o <= first) - 1)
    }

    fn frozen_prefix_hash(&self, layers: usize) -> u64 {
        // FNV-1a over the bit patterns.
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for p in &self.params[..self.offsets[layers]] {
            for b in p.to_bits().to_le_bytes() {
                h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    /// Runs the frozen layers below the lowest trainable one on `x` so that
    /// masked training can start from their output.
    pub fn encode(&self, x: &FeatureSegment) -> Result<EncodedSegment> {
        let start = self
            .lowest_trainable_layer()
            .ok_or_else(|| Error::InvalidArgument("model has no trainable parameters".into()))?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_tensor());
        let cache = self.run_layers(0, start, activations, vec![Vec::new(); self.layers.len()]);
        let mut activations = cache.activations;
        let activation = activations.pop().expect("input present");
        Ok(EncodedSegment {
            start,
            shapes: activations.iter().map(Tensor::shape).collect(),
            activation,
            pool_indices: cache.pool_indices,
            target: x.values().to_vec(),
            frozen_hash: self.frozen_prefix_hash(start),
        })
    }

    fn forward_encoded(&self, e: &EncodedSegment) -> Result<ForwardCache> {
        if self.lowest_trainable_layer() != Some(e.start) || self.frozen_prefix_hash(e.start) != e.frozen_hash {
            return Err(Error::InvalidArgument(
                "encoded segment does not match the model's frozen layers".into(),
            ));
        }
        // Shape-only placeholders: unpooling needs the shapes of pool inputs.
        let mut activations: Vec<Tensor> = e
            .shapes
            .iter()
            .map(|&(c, h, w)| Tensor {
                c,
                h,
                w,
                data: Vec::new(),
            })
            .collect();
        activations.push(e.activation.clone());
        Ok(self.run_layers(e.start, self.layers.len(), activations, e.pool_indices.clone()))
    }

    fn layer_params(&self, l: usize) -> (&[f64], &[f64]) {
        let start = self.offsets[l];
        let nw = self.layers[l].weight_count();
        let end = self.offsets[l + 1];
        (&self.params[start..start + nw], &self.params[start + nw..end])
    }

    /// Gradient of the reconstruction MSE against `target` with respect to
    /// every parameter, in canonical order.
    pub fn backward(&self, cache: &ForwardCache, target: &FeatureSegment) -> Result<ParamVector> {
        let mut grad = vec![0.0; self.params.len()];
        self.accumulate_gradient(cache, target.values(), Scope::All, &mut grad)?;
        ParamVector::new(grad)
    }

    fn accumulate_gradient(&self, cache: &ForwardCache, target: &[f64], scope: Scope, grad: &mut [f64]) -> Result<()> {
        if cache.version != self.version {
            return Err(Error::StaleCache {
                cache: cache.version,
                model: self.version,
            });
        }
        let out = cache.output();
        if target.len() != out.data.len() {
            return Err(Error::LengthMismatch {
                expected: out.data.len(),
                actual: target.len(),
            });
        }
        let lowest = match scope {
            Scope::All => 0,
            Scope::Trainable => match self.lowest_trainable_layer() {
                Some(l) => l,
                None => return Ok(()),
            },
        };

        let n = out.data.len() as f64;
        let mut g = Tensor {
            c: out.c,
            h: out.h,
            w: out.w,
            data: out.data.iter().zip(target).map(|(yh, y)| 2.0 * (yh - y) / n).collect(),
        };

        for l in (lowest..self.layers.len()).rev() {
            let spec = self.layers[l];
            let y = &cache.activations[l + 1];
            let x = &cache.activations[l];
            activation_backward(spec.activation, &y.data, &mut g.data);
            let need_input = l > lowest;
            let (start, end) = (self.offsets[l], self.offsets[l + 1]);
            let nw = spec.weight_count();
            let (w, _) = self.layer_params(l);
            let (gw, gb) = grad[start..end].split_at_mut(nw);
            // Frozen layers only pass the gradient through.
            let wanted = matches!(scope, Scope::All) || self.trainable[start..end].iter().any(|t| *t);
            let param_grad = wanted.then_some((gw, gb));
            let next = match spec.kind {
                LayerKind::Conv2d => ops::conv2d_backward(x, w, &g, spec.kernel.0, param_grad, need_input),
                LayerKind::ConvTranspose2d => {
                    // After an unpool only the positions it wrote are read back.
                    let input_grad = match (need_input, l.checked_sub(1).and_then(|p| self.unpool_source[p])) {
                        (false, _) => InputGrad::Skip,
                        (true, Some(src)) => InputGrad::At(&cache.pool_indices[src]),
                        (true, None) => InputGrad::Full,
                    };
                    ops::conv_transpose2d_backward(x, w, &g, spec.kernel.0, param_grad, input_grad)
                }
                LayerKind::Dense => ops::dense_backward(x, w, &g, param_grad, need_input),
                LayerKind::MaxPool => Some(ops::maxpool_backward(&g, &cache.pool_indices[l], x.shape())),
                LayerKind::MaxUnpool => {
                    let src = self.unpool_source[l].expect("paired unpool");
                    Some(ops::unpool_backward(&g, &cache.pool_indices[src], x.shape()))
                }
            };
            match next {
                Some(t) if need_input => g = t,
                _ => break,
            }
        }
        Ok(())
    }

    /// MSE of the current reconstruction of `x`.
    pub fn loss(&self, x: &FeatureSegment) -> Result<f64> {
        let (y, _) = self.forward(x)?;
        mse(x.values(), &y.data)
    }

    /// One pass of per-sample SGD over `data` in stored order.
    ///
    /// With `mask_only`, only trainable parameters move and the returned
    /// delta covers just those (in canonical order); otherwise every
    /// parameter moves and the delta covers all of them.
    pub fn sgd_epoch(&mut self, data: &[FeatureSegment], lr: f64, mask_only: bool) -> Result<ParamVector> {
        self.sgd_pass(data, lr, mask_only, |m, seg| Ok((m.forward_tensor(seg.to_tensor())?, seg.values())))
    }

    /// [`Autoencoder::sgd_epoch`] with `mask_only` over pre-encoded
    /// segments; gives bitwise the same delta without rerunning the frozen
    /// encoder.
    pub fn sgd_epoch_encoded(&mut self, data: &[EncodedSegment], lr: f64) -> Result<ParamVector> {
        self.sgd_pass(data, lr, true, |m, e| Ok((m.forward_encoded(e)?, &e.target[..])))
    }

    fn sgd_pass<T>(
        &mut self,
        data: &[T],
        lr: f64,
        mask_only: bool,
        forward: impl for<'a> Fn(&Self, &'a T) -> Result<(ForwardCache, &'a [f64])>,
    ) -> Result<ParamVector> {
        if data.is_empty() {
            return Err(Error::Empty("training data"));
        }
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {lr}")));
        }
        let before = if mask_only {
            self.extract_masked()
        } else {
            ParamVector::new(self.params.clone())?
        };
        let scope = if mask_only { Scope::Trainable } else { Scope::All };
        let mut grad = vec![0.0; self.params.len()];
        for item in data {
            let (cache, target) = forward(self, item)?;
            grad.fill(0.0);
            self.accumulate_gradient(&cache, target, scope, &mut grad)?;
            if mask_only {
                for ((p, g), t) in self.params.iter_mut().zip(&grad).zip(&self.trainable) {
                    if *t {
                        *p -= lr * g;
                    }
                }
            } else {
                for (p, g) in self.params.iter_mut().zip(&grad) {
                    *p -= lr * g;
                }
            }
            self.bump();
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        let after = if mask_only {
            self.extract_masked()
        } else {
            ParamVector::new(self.params.clone())?
        };
        after.sub(&before)
    }

    /// Redraws only the trainable parameters from the initialization scheme.
    pub fn reinit_trainable(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..self.layers.len() {
            let bound = init_bound(&self.layers[l]);
            for i in self.offsets[l]..self.offsets[l + 1] {
                if self.trainable[i] {
                    self.params[i] = rng.random_range(-bound..bound);
                }
            }
        }
        self.bump();
    }

    /// The trainable parameters in canonical order.
    pub fn extract_masked(&self) -> ParamVector {
        let v: Vec<f64> = self
            .params
            .iter()
            .zip(&self.trainable)
            .filter(|(_, t)| **t)
            .map(|(p, _)| *p)
            .collect();
        ParamVector::new(v).expect("model has trainable, finite parameters")
    }

    /// Overwrites the trainable parameters with `values`.
    pub fn load_masked(&mut self, values: &ParamVector) -> Result<()> {
        self.update_masked(values, |_, v| v)
    }

    /// Adds `delta` to the trainable parameters.
    pub fn apply_delta(&mut self, delta: &ParamVector) -> Result<()> {
        self.update_masked(delta, |p, d| p + d)
    }

    fn update_masked(&mut self, values: &ParamVector, f: impl Fn(f64, f64) -> f64) -> Result<()> {
        let n = self.trainable_count();
        if values.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: values.len(),
            });
        }
        let mut it = values.as_slice().iter();
        for (p, t) in self.params.iter_mut().zip(&self.trainable) {
            if *t {
                *p = f(*p, *it.next().expect("length checked"));
            }
        }
        self.bump();
        Ok(())
    }

    /// Full-parameter SGD for `epochs` passes; returns the mean loss of each
    /// epoch as measured during the pass.
    pub fn pretrain(&mut self, data: &[FeatureSegment], epochs: usize, lr: f64) -> Result<Vec<f64>> {
        self.pretrain_with(data, epochs, lr, |_, _| {})
    }

    /// Like [`Autoencoder::pretrain`], reporting `(epoch, mean_loss)` after each epoch.
    pub fn pretrain_with(
        &mut self,
        data: &[FeatureSegment],
        epochs: usize,
        lr: f64,
        mut on_epoch: impl FnMut(usize, f64),
    ) -> Result<Vec<f64>> {
        if data.is_empty() {
            return Err(Error::Empty("pretraining corpus"));
        }
        let all = vec![(0, self.params.len())];
        let saved = self.trainable_ranges();
        self.set_trainable_ranges(&all);
        let mut trace = Vec::with_capacity(epochs);
        let mut grad = vec![0.0; self.params.len()];
        let result = (|| {
            for epoch in 0..epochs {
                let mut total = 0.0;
                for seg in data {
                    let cache = self.forward_tensor(seg.to_tensor())?;
                    total += mse(seg.values(), &cache.output().data)?;
                    grad.fill(0.0);
                    self.accumulate_gradient(&cache, seg.values(), Scope::All, &mut grad)?;
                    for (p, g) in self.params.iter_mut().zip(&grad) {
                        *p -= lr * g;
                    }
                    self.bump();
                }
                let mean = total / data.len() as f64;
                if !mean.is_finite() || self.params.iter().any(|p| !p.is_finite()) {
                    return Err(Error::Diverged { epoch });
                }
                on_epoch(epoch, mean);
                trace.push(mean);
            }
            Ok(())
        })();
        self.set_trainable_ranges(&saved);
        result.map(|_| trace)
    }
}

fn init_bound(l: &LayerSpec) -> f64 {
    match l.fan_in() {
        0 => 0.0,
        f => 1.0 / (f as f64).sqrt(),
    }
}

fn apply_activation(a: Activation, data: &mut [f64]) {
    match a {
        Activation::Relu => data.iter_mut().for_each(|v| *v = v.max(0.0)),
        Activation::Sigmoid => data.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp())),
        Activation::None => {}
    }
}

/// Multiplies `grad` by the activation derivative, expressed through the
/// activation output `y`.
fn activation_backward(a: Activation, y: &[f64], grad: &mut [f64]) {
    match a {
        Activation::Relu => {
            for (g, y) in grad.iter_mut().zip(y) {
                if *y <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        Activation::Sigmoid => {
            for (g, y) in grad.iter_mut().zip(y) {
                *g *= y * (1.0 - y);
            }
        }
        Activation::None => {}
    }
}

/// Mean squared error `(1/N) sum (y - y_hat)^2`.
pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::LengthMismatch {
            expected: y.len(),
            actual: y_hat.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::Empty("loss input"));
    }
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

#[cfg(test)]
mod tests;
