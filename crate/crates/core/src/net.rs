//! Feed-forward classifier with explicit forward and backward passes.
//!
//! Parameters live in one flat buffer, layer by layer: the row-major
//! `out × in` weight matrix followed by the `out` biases. Gradients use the
//! same layout, so the optimizer works on plain slices.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const OUTPUT_INIT_GAIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

/// Multi-layer perceptron producing raw logits.
///
/// Hidden layers use `hidden_activation`; the output layer is always the
/// identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    hidden_activation: Activation,
    params: Vec<f64>,
}

/// Forward or training-time evaluation.
pub enum Mode<'a> {
    Eval,
    /// Inverted dropout on every hidden activation.
    Train {
        keep_prob: f64,
        rng: &'a mut dyn RngCore,
    },
}

/// What `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub inputs: Array2<f64>,
    /// Pre-activation of every layer, output layer included.
    pub pre: Vec<Array2<f64>>,
    /// Post-activation (after dropout) of every hidden layer.
    pub post: Vec<Array2<f64>>,
    /// Dropout multipliers per hidden layer (`0` or `1/keep_prob`); `None` in eval mode.
    pub masks: Vec<Option<Array2<f64>>>,
}

impl Mlp {
    fn validate_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 {
            return Err(Error::Config(format!("need at least input and output dims, got {dims:?}")));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("zero-width layer in {dims:?}")));
        }
        Ok(())
    }

    fn param_count(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    /// All-zero parameters.
    pub fn zeros(dims: &[usize], hidden_activation: Activation) -> Result<Self> {
        Self::validate_dims(dims)?;
        Ok(Self {
            dims: dims.to_vec(),
            hidden_activation,
            params: vec![0.0; Self::param_count(dims)],
        })
    }

    /// He-uniform weights (`U(±√(6/fan_in))`), zero biases. The output
    /// layer is scaled by [`OUTPUT_INIT_GAIN`] so a fresh model predicts
    /// close to uniform.
    pub fn he_uniform(dims: &[usize], hidden_activation: Activation, rng: &mut impl Rng) -> Result<Self> {
        let mut model = Self::zeros(dims, hidden_activation)?;
        let mut offset = 0;
        let last = dims.len() - 2;
        for (l, w) in dims.windows(2).enumerate() {
            let (fan_in, out) = (w[0], w[1]);
            let gain = if l == last { OUTPUT_INIT_GAIN } else { 1.0 };
            let limit = gain * (6.0 / fan_in as f64).sqrt();
            for p in &mut model.params[offset..offset + out * fan_in] {
                *p = rng.random_range(-limit..limit);
            }
            offset += out * fan_in + out;
        }
        Ok(model)
    }

    /// Builds a model from explicit parameters in the flat layout.
    pub fn from_params(dims: &[usize], hidden_activation: Activation, params: Vec<f64>) -> Result<Self> {
        Self::validate_dims(dims)?;
        let expected = Self::param_count(dims);
        if params.len() != expected {
            return Err(Error::Shape(format!("{} parameters for dims {dims:?}, expected {expected}", params.len())));
        }
        Ok(Self { dims: dims.to_vec(), hidden_activation, params })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.dims.last().expect("dims validated non-empty")
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offset(&self, layer: usize) -> usize {
        Self::param_count(&self.dims[..=layer])
    }

    pub fn weights(&self, layer: usize) -> ArrayView2<'_, f64> {
        let (inp, out) = (self.dims[layer], self.dims[layer + 1]);
        let off = self.offset(layer);
        ArrayView2::from_shape((out, inp), &self.params[off..off + out * inp]).expect("layout")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let (inp, out) = (self.dims[layer], self.dims[layer + 1]);
        let off = self.offset(layer) + out * inp;
        ArrayView1::from(&self.params[off..off + out])
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            Activation::Identity
        } else {
            self.hidden_activation
        }
    }

    fn check_batch(&self, batch: &ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, model expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Logits for `batch` (rows are samples) plus the trace for `backward`.
    pub fn forward(&self, batch: ArrayView2<f64>, mode: Mode<'_>) -> Result<(Array2<f64>, ForwardTrace)> {
        self.check_batch(&batch)?;
        let (keep_prob, mut rng) = match mode {
            Mode::Eval => (1.0, None),
            Mode::Train { keep_prob, rng } => {
                if !(keep_prob > 0.0 && keep_prob <= 1.0) {
                    return Err(Error::Config(format!("keep_prob must be in (0, 1], got {keep_prob}")));
                }
                (keep_prob, Some(rng))
            }
        };
        let n_layers = self.num_layers();
        let mut trace = ForwardTrace {
            inputs: batch.to_owned(),
            pre: Vec::with_capacity(n_layers),
            post: Vec::with_capacity(n_layers - 1),
            masks: Vec::with_capacity(n_layers - 1),
        };
        let mut current = batch.to_owned();
        for layer in 0..n_layers {
            let z = current.dot(&self.weights(layer).t()) + &self.bias(layer);
            if layer + 1 == n_layers {
                trace.pre.push(z.clone());
                return Ok((z, trace));
            }
            let mut a = match self.activation(layer) {
                Activation::Relu => z.mapv(|v| v.max(0.0)),
                Activation::Identity => z.clone(),
            };
            let mask = match rng.as_deref_mut() {
                Some(rng) if keep_prob < 1.0 => {
                    let scale = 1.0 / keep_prob;
                    let m = Array2::from_shape_fn(a.raw_dim(), |_| {
                        if rng.random::<f64>() < keep_prob { scale } else { 0.0 }
                    });
                    a *= &m;
                    Some(m)
                }
                _ => None,
            };
            trace.pre.push(z);
            trace.post.push(a.clone());
            trace.masks.push(mask);
            current = a;
        }
        unreachable!("network has at least one layer")
    }

    /// Eval-mode logits without keeping a trace.
    pub fn predict_logits(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_batch(&batch)?;
        let n_layers = self.num_layers();
        let mut current = batch.to_owned();
        for layer in 0..n_layers {
            let mut z = current.dot(&self.weights(layer).t()) + &self.bias(layer);
            if self.activation(layer) == Activation::Relu {
                z.mapv_inplace(|v| v.max(0.0));
            }
            current = z;
        }
        Ok(current)
    }

    /// Gradient of a loss with respect to every parameter, in the flat layout.
    ///
    /// `dlogits` is `∂L/∂logits` for the batch in `trace`; whatever averaging
    /// the loss did is already folded into it.
    pub fn backward(&self, trace: &ForwardTrace, dlogits: ArrayView2<f64>) -> Result<Vec<f64>> {
        let n_layers = self.num_layers();
        let batch = trace.inputs.nrows();
        if trace.pre.len() != n_layers || trace.post.len() + 1 != n_layers || trace.inputs.ncols() != self.input_dim() {
            return Err(Error::Shape("trace does not match model".into()));
        }
        if dlogits.dim() != (batch, self.num_classes()) {
            return Err(Error::Shape(format!(
                "dL/dlogits is {:?}, expected ({batch}, {})",
                dlogits.dim(),
                self.num_classes()
            )));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = dlogits.to_owned();
        for layer in (0..n_layers).rev() {
            let input = if layer == 0 { trace.inputs.view() } else { trace.post[layer - 1].view() };
            let (inp, out) = (self.dims[layer], self.dims[layer + 1]);
            if input.ncols() != inp || delta.ncols() != out {
                return Err(Error::Shape(format!("trace layer {layer} does not match model")));
            }
            let off = self.offset(layer);
            let dw = delta.t().dot(&input);
            grads[off..off + out * inp].copy_from_slice(dw.as_slice().expect("standard layout"));
            let db = delta.sum_axis(Axis(0));
            grads[off + out * inp..off + out * inp + out].copy_from_slice(db.as_slice().expect("contiguous"));
            if layer == 0 {
                break;
            }
            let mut upstream = delta.dot(&self.weights(layer));
            if let Some(mask) = &trace.masks[layer - 1] {
                upstream *= mask;
            }
            if self.activation(layer - 1) == Activation::Relu {
                ndarray::Zip::from(&mut upstream)
                    .and(&trace.pre[layer - 1])
                    .for_each(|g, &z| {
                        if z <= 0.0 {
                            *g = 0.0;
                        }
                    });
            }
            delta = upstream;
        }
        Ok(grads)
    }
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalProbs(Vec<f64>);

impl CategoricalProbs {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("categorical distribution"));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::domain("CategoricalProbs", format!("entries must be finite and non-negative: {probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::domain("CategoricalProbs", format!("entries sum to {sum}")));
        }
        Ok(Self(probs))
    }

    pub(crate) fn new_unchecked(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Shannon entropy in nats, `0 ln 0 = 0`.
    pub fn entropy(&self) -> f64 {
        entropy(&self.0)
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub(crate) fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// First index of the largest entry.
pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// `exp(z_c / T) / Σ exp(z_k / T)`, computed after subtracting the max.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<CategoricalProbs> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::domain("softmax", format!("temperature must be positive, got {temperature}")));
    }
    if logits.is_empty() {
        return Err(Error::Empty("logits"));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::domain("softmax", format!("non-finite logits {logits:?}")));
    }
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, temperature, &mut out);
    Ok(CategoricalProbs(out))
}

pub(crate) fn softmax_into(logits: &[f64], temperature: f64, out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = ((z - max) / temperature).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// `ln softmax(z / T)` without forming the probabilities.
pub(crate) fn log_softmax_into(logits: &[f64], temperature: f64, out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&z| ((z - max) / temperature).exp()).sum::<f64>().ln();
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max) / temperature - lse;
    }
}

/// Row-wise tempered softmax.
pub fn softmax_rows(logits: ArrayView2<f64>, temperature: f64) -> Array2<f64> {
    let mut out = Array2::zeros(logits.raw_dim());
    for (row, mut o) in logits.rows().into_iter().zip(out.rows_mut()) {
        let row = row.to_vec();
        softmax_into(&row, temperature, o.as_slice_mut().expect("contiguous"));
    }
    out
}

/// A scalar loss of a batch of logits with its gradient.
pub trait LogitLoss {
    fn loss_and_grad(&self, logits: ArrayView2<f64>) -> Result<(f64, Array2<f64>)>;
}

/// Mean cross-entropy of integer labels.
pub struct CrossEntropy<'a> {
    pub labels: &'a [usize],
}

impl LogitLoss for CrossEntropy<'_> {
    fn loss_and_grad(&self, logits: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
        let (n, k) = logits.dim();
        if self.labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} rows", self.labels.len())));
        }
        let mut grad = Array2::zeros((n, k));
        let mut loss = 0.0;
        let mut logp = vec![0.0; k];
        for (i, (row, mut g)) in logits.rows().into_iter().zip(grad.rows_mut()).enumerate() {
            let label = self.labels[i];
            if label >= k {
                return Err(Error::LabelOutOfRange { label, num_classes: k });
            }
            let row = row.to_vec();
            log_softmax_into(&row, 1.0, &mut logp);
            loss -= logp[label];
            for c in 0..k {
                g[c] = (logp[c].exp() - if c == label { 1.0 } else { 0.0 }) / n as f64;
            }
        }
        Ok((loss / n as f64, grad))
    }
}

/// Worst relative error between `backward` and central differences over
/// every parameter.
///
/// Relative error is `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`;
/// the floor keeps parameters with vanishing gradient from dividing by zero.
pub fn grad_check(model: &Mlp, loss: &dyn LogitLoss, batch: ArrayView2<f64>) -> Result<f64> {
    const H: f64 = 1e-5;
    const FLOOR: f64 = 1e-6;
    let (logits, trace) = model.forward(batch, Mode::Eval)?;
    let (_, dlogits) = loss.loss_and_grad(logits.view())?;
    let analytic = model.backward(&trace, dlogits.view())?;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe.params[i];
        probe.params[i] = orig + H;
        let (up, _) = loss.loss_and_grad(probe.predict_logits(batch)?.view())?;
        probe.params[i] = orig - H;
        let (down, _) = loss.loss_and_grad(probe.predict_logits(batch)?.view())?;
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * H);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Dnn,
    End,
    End2,
    Member,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Dnn => "dnn",
            ModelKind::End => "end",
            ModelKind::End2 => "end2",
            ModelKind::Member => "member",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epochs: usize,
    pub model_kind: ModelKind,
}

/// A model plus its provenance, stored as JSON.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Mlp,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct ArchJson {
    dims: Vec<usize>,
    activation: Activation,
}

#[derive(Serialize, Deserialize)]
struct LayerJson {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointJson {
    arch: ArchJson,
    layers: Vec<LayerJson>,
    meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(model: Mlp, meta: CheckpointMeta) -> Self {
        Self { model, meta }
    }

    pub fn to_json(&self) -> Result<String> {
        let m = &self.model;
        let layers = (0..m.num_layers())
            .map(|l| LayerJson {
                w: m.weights(l).rows().into_iter().map(|r| r.to_vec()).collect(),
                b: m.bias(l).to_vec(),
            })
            .collect();
        let file = CheckpointJson {
            arch: ArchJson { dims: m.dims.clone(), activation: m.hidden_activation },
            layers,
            meta: self.meta.clone(),
        };
        let mut s = serde_json::to_string(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: CheckpointJson = serde_json::from_str(s)?;
        let dims = file.arch.dims;
        Mlp::validate_dims(&dims)?;
        if file.layers.len() + 1 != dims.len() {
            return Err(Error::Shape(format!("{} layers for dims {dims:?}", file.layers.len())));
        }
        let mut params = Vec::with_capacity(Mlp::param_count(&dims));
        for (l, layer) in file.layers.into_iter().enumerate() {
            let (inp, out) = (dims[l], dims[l + 1]);
            if layer.w.len() != out || layer.w.iter().any(|r| r.len() != inp) || layer.b.len() != out {
                return Err(Error::Shape(format!("layer {l} does not match {inp}->{out}")));
            }
            params.extend(layer.w.into_iter().flatten());
            params.extend(layer.b);
        }
        let model = Mlp::from_params(&dims, file.arch.activation, params)?;
        Ok(Self { model, meta: file.meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Copies the listed rows of `source` into a new matrix.
pub(crate) fn gather_rows(source: ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    source.select(Axis(0), rows)
}
