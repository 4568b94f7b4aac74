//! Minimal feed-forward network with exact reverse-mode gradients.
//!
//! The model is a stack of dense layers with one activation between layers
//! and none on the final layer. The final layer is the linear classifier; the
//! output of the layer before it is the feature vector the rebalancing
//! prototype accumulates. All arithmetic is `f64`.
//!
//! `forward` snapshots the parameter version into the cache it returns;
//! `backward_and_step` refuses a cache taken under different parameters.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;

const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative evaluated at the pre-activation value.
    #[inline]
    pub fn grad(self, pre: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if pre > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Layer {
    /// Row-major (out_dim x in_dim).
    w: Mat,
    b: Vec<f64>,
}

impl Layer {
    pub fn weights(&self) -> &Mat {
        &self.w
    }

    pub fn biases(&self) -> &[f64] {
        &self.b
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }
}

#[derive(Clone, Debug)]
pub struct MlpModel {
    layers: Vec<Layer>,
    activation: Activation,
    /// When false the final layer's bias is pinned at zero and never updated.
    final_bias: bool,
    seed: u64,
    version: u64,
}

impl MlpModel {
    /// Builds a model from `widths = [input_dim, hidden..., num_classes]`.
    ///
    /// Weights use uniform fan-in bounds `±sqrt(6/fan_in)` drawn from a
    /// ChaCha stream seeded with `seed`; biases start at zero.
    pub fn new(widths: &[usize], activation: Activation, final_bias: bool, seed: u64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Validation(
                "model needs at least an input and an output width".into(),
            ));
        }
        if widths.contains(&0) {
            return Err(Error::Validation("layer widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (1.0 / fan_in as f64).sqrt();
            let mut w = Mat::zeros(fan_out, fan_in);
            for v in w.data_mut() {
                *v = rng.random_range(-limit..limit);
            }
            layers.push(Layer {
                w,
                b: vec![0.0; fan_out],
            });
        }
        Ok(Self {
            layers,
            activation,
            final_bias,
            seed,
            version: 0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    /// Width of the penultimate output, i.e. the feature space the prototype
    /// lives in. For a single-layer model this is the input dimension.
    pub fn feature_dim(&self) -> usize {
        self.layers.last().unwrap().in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, k: usize) -> &Layer {
        &self.layers[k]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    #[cfg(test)]
    pub(crate) fn layer_mut(&mut self, k: usize) -> (&mut Mat, &mut Vec<f64>) {
        let layer = &mut self.layers[k];
        (&mut layer.w, &mut layer.b)
    }

    /// Forward pass over a batch (rows are samples).
    pub fn forward(&self, batch: &Mat) -> Result<ForwardCache> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Structural(format!(
                "batch has {} columns, model expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        if batch.rows() == 0 {
            return Err(Error::Validation("empty batch".into()));
        }
        if !batch.is_finite() {
            return Err(Error::Validation("non-finite entries in batch".into()));
        }
        let n = batch.rows();
        let num_layers = self.layers.len();
        let mut pre: Vec<Mat> = Vec::with_capacity(num_layers);
        let mut post: Vec<Mat> = Vec::with_capacity(num_layers.saturating_sub(1));
        let mut current = batch;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Mat::zeros(n, layer.out_dim());
            for r in 0..n {
                let x = current.row(r);
                let out = z.row_mut(r);
                for (o, out_v) in out.iter_mut().enumerate() {
                    let mut acc = layer.b[o];
                    for (wv, xv) in layer.w.row(o).iter().zip(x) {
                        acc += wv * xv;
                    }
                    *out_v = acc;
                }
            }
            if k + 1 < num_layers {
                let mut a = z.clone();
                for v in a.data_mut() {
                    *v = self.activation.apply(*v);
                }
                post.push(a);
                pre.push(z);
                current = post.last().unwrap();
            } else {
                pre.push(z);
            }
        }
        Ok(ForwardCache {
            version: self.version,
            input: batch.clone(),
            pre,
            post,
        })
    }

    /// Applies only the final linear layer to a single feature vector.
    pub fn classifier_logits(&self, feature: &[f64]) -> Result<Vec<f64>> {
        let last = self.layers.last().unwrap();
        if feature.len() != last.in_dim() {
            return Err(Error::Structural(format!(
                "feature has length {}, classifier expects {}",
                feature.len(),
                last.in_dim()
            )));
        }
        let mut z = last.b.clone();
        for (o, zv) in z.iter_mut().enumerate() {
            for (wv, fv) in last.w.row(o).iter().zip(feature) {
                *zv += wv * fv;
            }
        }
        Ok(z)
    }

    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            layer_shapes: self
                .layers
                .iter()
                .map(|l| [l.out_dim(), l.in_dim()])
                .collect(),
            weights: self.layers.iter().map(|l| l.w.data().to_vec()).collect(),
            biases: self.layers.iter().map(|l| l.b.clone()).collect(),
            activation: self.activation,
            final_bias: self.final_bias,
            seed: self.seed,
        }
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self> {
        if ck.layer_shapes.is_empty() {
            return Err(Error::Validation("checkpoint has no layers".into()));
        }
        let mut layers = Vec::with_capacity(ck.layer_shapes.len());
        for (k, shape) in ck.layer_shapes.iter().enumerate() {
            let w = Mat::from_vec(shape[0], shape[1], ck.weights[k].clone())?;
            let b = ck.biases[k].clone();
            if b.len() != shape[0] {
                return Err(Error::Structural("bias length mismatch in checkpoint".into()));
            }
            if k > 0 && shape[1] != ck.layer_shapes[k - 1][0] {
                return Err(Error::Structural("layer shapes do not chain".into()));
            }
            layers.push(Layer { w, b });
        }
        Ok(Self {
            layers,
            activation: ck.activation,
            final_bias: ck.final_bias,
            seed: ck.seed,
            version: 0,
        })
    }
}

/// JSON-serializable model snapshot: shapes, flat row-major weights per
/// layer, biases, the activation tag, and the init seed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub layer_shapes: Vec<[usize; 2]>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub activation: Activation,
    #[serde(default = "default_true")]
    pub final_bias: bool,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

/// Activations of one forward pass, tied to the parameter version that
/// produced them.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    version: u64,
    input: Mat,
    /// Pre-activations per layer; the last entry is the logits.
    pre: Vec<Mat>,
    /// Post-activations per non-final layer.
    post: Vec<Mat>,
}

impl ForwardCache {
    pub fn logits(&self) -> &Mat {
        self.pre.last().unwrap()
    }

    /// Penultimate output, the f(x) fed to the classifier. Falls back to the
    /// input for single-layer models.
    pub fn features(&self) -> &Mat {
        self.post.last().unwrap_or(&self.input)
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }
}

/// SGD-with-momentum state plus the schedule inputs.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    momentum: f64,
    weight_decay: f64,
    base_lr: f64,
    epochs: usize,
    bufs: Vec<(Mat, Vec<f64>)>,
}

impl OptimizerState {
    pub fn new(
        model: &MlpModel,
        momentum: f64,
        weight_decay: f64,
        base_lr: f64,
        epochs: usize,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Validation("momentum must be in [0,1)".into()));
        }
        if weight_decay < 0.0 {
            return Err(Error::Validation("weight_decay must be >= 0".into()));
        }
        if base_lr <= 0.0 {
            return Err(Error::Validation("base_lr must be positive".into()));
        }
        if epochs == 0 {
            return Err(Error::Validation("epoch budget must be positive".into()));
        }
        let bufs = model
            .layers
            .iter()
            .map(|l| (Mat::zeros(l.out_dim(), l.in_dim()), vec![0.0; l.out_dim()]))
            .collect();
        Ok(Self {
            momentum,
            weight_decay,
            base_lr,
            epochs,
            bufs,
        })
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn weight_decay(&self) -> f64 {
        self.weight_decay
    }

    pub fn base_lr(&self) -> f64 {
        self.base_lr
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }
}

/// Cosine schedule value for the given epoch: `base_lr * 0.5 * (1 + cos(pi * epoch / T))`.
pub fn lr_at(epoch: usize, opt: &OptimizerState) -> Result<f64> {
    if epoch >= opt.epochs {
        return Err(Error::Validation(format!(
            "epoch {} out of range 0..{}",
            epoch, opt.epochs
        )));
    }
    let frac = epoch as f64 / opt.epochs as f64;
    Ok(opt.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()))
}

/// Per-layer parameter gradients, same shapes as the model.
#[derive(Clone, Debug)]
pub struct Gradients {
    per_layer: Vec<(Mat, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            per_layer: model
                .layers
                .iter()
                .map(|l| (Mat::zeros(l.out_dim(), l.in_dim()), vec![0.0; l.out_dim()]))
                .collect(),
        }
    }

    pub fn layer(&self, k: usize) -> (&Mat, &[f64]) {
        let (w, b) = &self.per_layer[k];
        (w, b)
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) -> Result<()> {
        if self.per_layer.len() != other.per_layer.len() {
            return Err(Error::Structural("gradient layer count mismatch".into()));
        }
        for ((w, b), (ow, ob)) in self.per_layer.iter_mut().zip(&other.per_layer) {
            w.add_scaled(ow, scale)?;
            for (bv, obv) in b.iter_mut().zip(ob) {
                *bv += scale * obv;
            }
        }
        Ok(())
    }
}

/// Exact reverse-mode gradients of a logits-level loss.
///
/// `dloss_dlogits` is dL/dz for the batch the cache was produced from; no
/// batch scaling is applied here, the caller owns any 1/B factor.
pub fn backward(model: &MlpModel, cache: &ForwardCache, dloss_dlogits: &Mat) -> Result<Gradients> {
    if cache.version != model.version {
        return Err(Error::Contract(
            "stale forward cache: parameters changed since the forward pass".into(),
        ));
    }
    let n = cache.batch_size();
    let c = model.num_classes();
    if dloss_dlogits.rows() != n || dloss_dlogits.cols() != c {
        return Err(Error::Structural(format!(
            "dloss is {}x{}, expected {}x{}",
            dloss_dlogits.rows(),
            dloss_dlogits.cols(),
            n,
            c
        )));
    }
    let num_layers = model.layers.len();
    let mut grads = Gradients::zeros_like(model);
    let mut delta = dloss_dlogits.clone();
    for k in (0..num_layers).rev() {
        let layer = &model.layers[k];
        let input: &Mat = if k == 0 { &cache.input } else { &cache.post[k - 1] };
        {
            let (dw, db) = &mut grads.per_layer[k];
            for r in 0..n {
                let d = delta.row(r);
                let x = input.row(r);
                for (o, dv) in d.iter().enumerate() {
                    db[o] += dv;
                    let row = dw.row_mut(o);
                    for (rw, xv) in row.iter_mut().zip(x) {
                        *rw += dv * xv;
                    }
                }
            }
        }
        if k > 0 {
            // delta_prev = (delta . W) * act'(pre[k-1])
            let mut prev = Mat::zeros(n, layer.in_dim());
            for r in 0..n {
                let d = delta.row(r);
                let out = prev.row_mut(r);
                for (o, dv) in d.iter().enumerate() {
                    for (pv, wv) in out.iter_mut().zip(layer.w.row(o)) {
                        *pv += dv * wv;
                    }
                }
                let pre = cache.pre[k - 1].row(r);
                for (pv, &z) in out.iter_mut().zip(pre) {
                    *pv *= model.activation.grad(z);
                }
            }
            delta = prev;
        }
    }
    Ok(grads)
}

/// Momentum SGD with decoupled-from-nothing classic weight decay:
/// `g = grad + wd * param; buf = m * buf + g; param -= lr * buf`.
pub fn sgd_step(
    model: &mut MlpModel,
    grads: &Gradients,
    opt: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if lr < 0.0 || !lr.is_finite() {
        return Err(Error::Validation("learning rate must be finite and >= 0".into()));
    }
    if grads.per_layer.len() != model.layers.len() {
        return Err(Error::Structural("gradient/model layer count mismatch".into()));
    }
    let last = model.layers.len() - 1;
    for (k, layer) in model.layers.iter_mut().enumerate() {
        let (dw, db) = &grads.per_layer[k];
        let (bw, bb) = &mut opt.bufs[k];
        for ((w, g), buf) in layer
            .w
            .data_mut()
            .iter_mut()
            .zip(dw.data())
            .zip(bw.data_mut())
        {
            let g = g + opt.weight_decay * *w;
            *buf = opt.momentum * *buf + g;
            *w -= lr * *buf;
        }
        let skip_bias = k == last && !model.final_bias;
        if !skip_bias {
            for ((b, g), buf) in layer.b.iter_mut().zip(db).zip(bb.iter_mut()) {
                let g = g + opt.weight_decay * *b;
                *buf = opt.momentum * *buf + g;
                *b -= lr * *buf;
            }
        }
    }
    model.version += 1;
    Ok(())
}

/// Backprop the logits-level gradient and apply one optimizer step.
pub fn backward_and_step(
    model: &mut MlpModel,
    cache: &ForwardCache,
    dloss_dlogits: &Mat,
    opt: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    let grads = backward(model, cache, dloss_dlogits)?;
    sgd_step(model, &grads, opt, lr)
}
