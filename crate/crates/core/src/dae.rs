//! Denoising autoencoder with category and temporal-chunk constraint heads.
//!
//! One layer encodes a (corrupted) input into `h = s(W x̃ + b)` and decodes
//! three things from `h`: the clean input, the one-hot category `c` and the
//! one-hot temporal chunk `t`. The training objective per example is
//!
//! ```text
//! ‖x − r_x‖² + λ‖c − r_c‖² + β‖t − r_t‖²
//! ```
//!
//! averaged over the mini-batch, plus `w · Σ_j KL(ρ ‖ h̄_j)` on the layer
//! chosen to be sparse (the second one), where `h̄_j` is the batch-mean
//! activation. Layers are trained greedily and then fine-tuned jointly
//! through the deep reconstruction path.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{sigmoid, Matrix};
use crate::preprocess::{flatten_frame, unflatten_frame, ConstraintTargets};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::skeleton_io::{ActionSequence, SkeletonFrame};

pub const MODEL_VERSION: u32 = 1;

/// Index of the layer that carries the sparsity penalty.
pub const SPARSE_LAYER: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Masking probability.
    pub q: f64,
    /// Category head weight.
    pub lambda: f64,
    /// Temporal head weight.
    pub beta: f64,
    /// Sparsity target.
    pub rho: f64,
    pub sparsity_weight: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub finetune_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            q: 0.1,
            lambda: 1.5,
            beta: 1.5,
            rho: 0.1,
            sparsity_weight: 0.1,
            learning_rate: 0.05,
            batch_size: 32,
            epochs: 200,
            finetune_epochs: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.q) {
            return Err(Error::config("q must lie in [0, 1]"));
        }
        if !(self.lambda >= 0.0 && self.beta >= 0.0 && self.sparsity_weight >= 0.0) {
            return Err(Error::config("lambda, beta and sparsity_weight must be >= 0"));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::config("rho must lie in (0, 1)"));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::config("learning_rate must be > 0 and batch_size >= 1"));
        }
        Ok(())
    }

    /// Step size for a 0-based epoch: `lr / (1 + epoch / 50)`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate / (1.0 + epoch as f64 / 50.0)
    }
}

/// Loss weights for one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub lambda: f64,
    pub beta: f64,
    pub rho: f64,
    /// Zero disables the KL term.
    pub sparsity_weight: f64,
}

impl Objective {
    pub fn for_layer(cfg: &TrainConfig, layer_index: usize) -> Self {
        Objective {
            lambda: cfg.lambda,
            beta: cfg.beta,
            rho: cfg.rho,
            sparsity_weight: if layer_index == SPARSE_LAYER { cfg.sparsity_weight } else { 0.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaeLayer {
    pub w_enc: Matrix,
    pub b_enc: Vec<f64>,
    pub w_dec_x: Matrix,
    pub o_dec_x: Vec<f64>,
    pub w_dec_c: Matrix,
    pub o_dec_c: Vec<f64>,
    pub w_dec_t: Matrix,
    pub o_dec_t: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    pub h: Vec<f64>,
    pub r_x: Vec<f64>,
    pub r_c: Vec<f64>,
    pub r_t: Vec<f64>,
}

impl DaeLayer {
    pub fn zeros(input_dim: usize, hidden: usize, categories: usize, chunks: usize) -> Self {
        DaeLayer {
            w_enc: Matrix::zeros(hidden, input_dim),
            b_enc: vec![0.0; hidden],
            w_dec_x: Matrix::zeros(input_dim, hidden),
            o_dec_x: vec![0.0; input_dim],
            w_dec_c: Matrix::zeros(categories, hidden),
            o_dec_c: vec![0.0; categories],
            w_dec_t: Matrix::zeros(chunks, hidden),
            o_dec_t: vec![0.0; chunks],
        }
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, offsets zero.
    pub fn random(input_dim: usize, hidden: usize, categories: usize, chunks: usize, rng: &mut Rng) -> Self {
        let mut layer = Self::zeros(input_dim, hidden, categories, chunks);
        for m in [&mut layer.w_enc, &mut layer.w_dec_x, &mut layer.w_dec_c, &mut layer.w_dec_t] {
            let bound = (6.0 / (m.rows + m.cols) as f64).sqrt();
            m.data.iter_mut().for_each(|w| *w = rng.gen_range(-bound..bound));
        }
        layer
    }

    pub fn input_dim(&self) -> usize {
        self.w_enc.cols
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_enc.rows
    }

    pub fn category_count(&self) -> usize {
        self.w_dec_c.rows
    }

    pub fn chunk_count(&self) -> usize {
        self.w_dec_t.rows
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        let mut h = vec![0.0; self.hidden_dim()];
        self.w_enc.affine_into(x, &self.b_enc, &mut h);
        h.iter_mut().for_each(|v| *v = sigmoid(*v));
        Ok(h)
    }

    pub fn decode_x(&self, h: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.hidden_dim(), h.len())?;
        Ok(head(&self.w_dec_x, &self.o_dec_x, h))
    }

    pub fn forward(&self, x_tilde: &[f64]) -> Result<Activations> {
        let h = self.encode(x_tilde)?;
        Ok(Activations {
            r_x: head(&self.w_dec_x, &self.o_dec_x, &h),
            r_c: head(&self.w_dec_c, &self.o_dec_c, &h),
            r_t: head(&self.w_dec_t, &self.o_dec_t, &h),
            h,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    /// Parameter tensors in a fixed order.
    pub fn params(&self) -> [&[f64]; 8] {
        [
            &self.w_enc.data,
            &self.b_enc,
            &self.w_dec_x.data,
            &self.o_dec_x,
            &self.w_dec_c.data,
            &self.o_dec_c,
            &self.w_dec_t.data,
            &self.o_dec_t,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.w_enc.data,
            &mut self.b_enc,
            &mut self.w_dec_x.data,
            &mut self.o_dec_x,
            &mut self.w_dec_c.data,
            &mut self.o_dec_c,
            &mut self.w_dec_t.data,
            &mut self.o_dec_t,
        ]
    }

    /// `self += alpha · other`, tensor by tensor.
    pub fn add_scaled(&mut self, alpha: f64, other: &DaeLayer) {
        for (p, g) in self.params_mut().into_iter().zip(other.params()) {
            for (pi, gi) in p.iter_mut().zip(g) {
                *pi += alpha * gi;
            }
        }
    }

    fn shape_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden_dim(), self.category_count(), self.chunk_count())
    }
}

fn head(w: &Matrix, o: &[f64], h: &[f64]) -> Vec<f64> {
    let mut r = vec![0.0; w.rows];
    w.affine_into(h, o, &mut r);
    r.iter_mut().for_each(|v| *v = sigmoid(*v));
    r
}

/// Zeroes each coordinate independently with probability `q`.
pub fn corrupt(x: &[f64], q: f64, rng: &mut Rng) -> Vec<f64> {
    if q <= 0.0 {
        return x.to_vec();
    }
    x.iter()
        .map(|&v| if rng.gen_bool(q.min(1.0)) { 0.0 } else { v })
        .collect()
}

/// One training example: clean input, the corrupted input actually fed to
/// the encoder, and the side targets.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub x: &'a [f64],
    pub x_tilde: &'a [f64],
    pub targets: &'a ConstraintTargets,
}

fn sq_err(target: &[f64], r: &[f64]) -> f64 {
    target.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn kl_bernoulli(rho: f64, mean: f64) -> f64 {
    let m = mean.clamp(1e-12, 1.0 - 1e-12);
    rho * (rho / m).ln() + (1.0 - rho) * ((1.0 - rho) / (1.0 - m)).ln()
}

fn kl_derivative(rho: f64, mean: f64) -> f64 {
    let m = mean.clamp(1e-12, 1.0 - 1e-12);
    -rho / m + (1.0 - rho) / (1.0 - m)
}

fn check_example(layer: &DaeLayer, ex: &Example) -> Result<()> {
    check_dim(layer.input_dim(), ex.x.len())?;
    check_dim(layer.input_dim(), ex.x_tilde.len())?;
    check_dim(layer.category_count(), ex.targets.c.len())?;
    check_dim(layer.chunk_count(), ex.targets.t.len())
}

/// Mini-batch objective; see the module docs.
pub fn loss(batch: &[Example], layer: &DaeLayer, obj: &Objective) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::data("empty batch"));
    }
    let n = batch.len() as f64;
    let mut total = 0.0;
    let mut mean_h = vec![0.0; layer.hidden_dim()];
    for ex in batch {
        check_example(layer, ex)?;
        let a = layer.forward(ex.x_tilde)?;
        total += sq_err(ex.x, &a.r_x) + obj.lambda * sq_err(&ex.targets.c, &a.r_c) + obj.beta * sq_err(&ex.targets.t, &a.r_t);
        mean_h.iter_mut().zip(&a.h).for_each(|(m, h)| *m += h / n);
    }
    let mut value = total / n;
    if obj.sparsity_weight != 0.0 {
        value += obj.sparsity_weight * mean_h.iter().map(|&m| kl_bernoulli(obj.rho, m)).sum::<f64>();
    }
    Ok(value)
}

/// Backpropagates one decoder head: accumulates its weight/offset gradients
/// and adds its contribution to `dh`.
fn head_backward(
    w: &Matrix,
    target: &[f64],
    r: &[f64],
    h: &[f64],
    scale: f64,
    gw: &mut Matrix,
    go: &mut [f64],
    dh: &mut [f64],
    dz: &mut Vec<f64>,
) {
    dz.clear();
    dz.extend(r.iter().zip(target).map(|(&ri, &ti)| scale * 2.0 * (ri - ti) * ri * (1.0 - ri)));
    gw.add_outer(1.0, dz, h);
    go.iter_mut().zip(dz.iter()).for_each(|(g, d)| *g += d);
    w.add_transpose_mul(dz, dh);
}

/// Loss value and its exact gradient with respect to every parameter.
pub fn gradients(batch: &[Example], layer: &DaeLayer, obj: &Objective) -> Result<(f64, DaeLayer)> {
    if batch.is_empty() {
        return Err(Error::data("empty batch"));
    }
    let n = batch.len() as f64;
    let inv_n = 1.0 / n;
    let acts = batch
        .iter()
        .map(|ex| {
            check_example(layer, ex)?;
            layer.forward(ex.x_tilde)
        })
        .collect::<Result<Vec<_>>>()?;

    let hidden = layer.hidden_dim();
    let mut mean_h = vec![0.0; hidden];
    for a in &acts {
        mean_h.iter_mut().zip(&a.h).for_each(|(m, h)| *m += h * inv_n);
    }
    let sparse_dh: Option<Vec<f64>> = (obj.sparsity_weight != 0.0).then(|| {
        mean_h
            .iter()
            .map(|&m| obj.sparsity_weight * kl_derivative(obj.rho, m) * inv_n)
            .collect()
    });

    let mut g = layer.shape_like();
    let mut total = 0.0;
    let mut dh = vec![0.0; hidden];
    let mut dz = Vec::new();
    for (ex, a) in batch.iter().zip(&acts) {
        total += sq_err(ex.x, &a.r_x) + obj.lambda * sq_err(&ex.targets.c, &a.r_c) + obj.beta * sq_err(&ex.targets.t, &a.r_t);
        dh.iter_mut().for_each(|v| *v = 0.0);
        head_backward(&layer.w_dec_x, ex.x, &a.r_x, &a.h, inv_n, &mut g.w_dec_x, &mut g.o_dec_x, &mut dh, &mut dz);
        if obj.lambda != 0.0 {
            head_backward(&layer.w_dec_c, &ex.targets.c, &a.r_c, &a.h, obj.lambda * inv_n, &mut g.w_dec_c, &mut g.o_dec_c, &mut dh, &mut dz);
        }
        if obj.beta != 0.0 {
            head_backward(&layer.w_dec_t, &ex.targets.t, &a.r_t, &a.h, obj.beta * inv_n, &mut g.w_dec_t, &mut g.o_dec_t, &mut dh, &mut dz);
        }
        if let Some(s) = &sparse_dh {
            dh.iter_mut().zip(s).for_each(|(d, si)| *d += si);
        }
        // through the encoder sigmoid
        dh.iter_mut().zip(&a.h).for_each(|(d, &h)| *d *= h * (1.0 - h));
        g.w_enc.add_outer(1.0, &dh, ex.x_tilde);
        g.b_enc.iter_mut().zip(&dh).for_each(|(b, d)| *b += d);
    }
    let mut value = total * inv_n;
    if obj.sparsity_weight != 0.0 {
        value += obj.sparsity_weight * mean_h.iter().map(|&m| kl_bernoulli(obj.rho, m)).sum::<f64>();
    }
    Ok((value, g))
}

/// Clean input plus side targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub targets: ConstraintTargets,
}

fn check_samples(inputs: &[Sample]) -> Result<(usize, usize, usize)> {
    let first = inputs.first().ok_or_else(|| Error::data("no training inputs"))?;
    let dims = (first.x.len(), first.targets.c.len(), first.targets.t.len());
    for s in inputs {
        check_dim(dims.0, s.x.len())?;
        check_dim(dims.1, s.targets.c.len())?;
        check_dim(dims.2, s.targets.t.len())?;
    }
    Ok(dims)
}

/// Trains one layer with mini-batch SGD, fresh corruption on every
/// presentation. Returns the layer and the mean loss of every epoch.
pub fn train_layer_with_history(
    inputs: &[Sample],
    hidden: usize,
    cfg: &TrainConfig,
    layer_index: usize,
) -> Result<(DaeLayer, Vec<f64>)> {
    cfg.validate()?;
    if hidden < 1 {
        return Err(Error::config("hidden layer size must be at least 1"));
    }
    let (d, l, chunks) = check_samples(inputs)?;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, "dae/layer", layer_index as u64));
    let mut layer = DaeLayer::random(d, hidden, l, chunks, &mut rng);
    let obj = Objective::for_layer(cfg, layer_index);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let corrupted: Vec<Vec<f64>> = idx.iter().map(|&i| corrupt(&inputs[i].x, cfg.q, &mut rng)).collect();
            let batch: Vec<Example> = idx
                .iter()
                .zip(&corrupted)
                .map(|(&i, xt)| Example {
                    x: &inputs[i].x,
                    x_tilde: xt,
                    targets: &inputs[i].targets,
                })
                .collect();
            let (value, g) = gradients(&batch, &layer, &obj)?;
            layer.add_scaled(-lr, &g);
            epoch_loss += value * idx.len() as f64;
        }
        history.push(epoch_loss / inputs.len() as f64);
    }
    if !layer.is_finite() {
        return Err(Error::data("training diverged (non-finite parameters)"));
    }
    Ok((layer, history))
}

pub fn train_layer(inputs: &[Sample], hidden: usize, cfg: &TrainConfig) -> Result<DaeLayer> {
    train_layer_with_history(inputs, hidden, cfg, 0).map(|(l, _)| l)
}

/// Coordinate ranges narrower than this are treated as constant.
pub const CONSTANT_SPAN: f64 = 1e-9;

/// Per-coordinate affine map of normalized joint coordinates into
/// `[0.1, 0.9]`, fitted on training data. Missing joints map to 0, the same
/// value masking corruption produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaler {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl InputScaler {
    /// The map that leaves values unchanged.
    pub fn identity(dim: usize) -> Self {
        InputScaler {
            lo: vec![0.1; dim],
            hi: vec![0.9; dim],
        }
    }

    pub fn fit<'a>(frames: impl IntoIterator<Item = &'a SkeletonFrame>) -> Result<Self> {
        let mut lo: Vec<f64> = Vec::new();
        let mut hi: Vec<f64> = Vec::new();
        for f in frames {
            if lo.is_empty() {
                lo = vec![f64::INFINITY; 3 * f.joints.len()];
                hi = vec![f64::NEG_INFINITY; 3 * f.joints.len()];
            }
            check_dim(lo.len(), 3 * f.joints.len())?;
            for (j, joint) in f.joints.iter().enumerate() {
                if joint.is_missing {
                    continue;
                }
                for (k, v) in joint.position().into_iter().enumerate() {
                    lo[3 * j + k] = lo[3 * j + k].min(v);
                    hi[3 * j + k] = hi[3 * j + k].max(v);
                }
            }
        }
        if lo.is_empty() {
            return Err(Error::data("cannot fit input scaling on zero frames"));
        }
        for (l, h) in lo.iter_mut().zip(hi.iter_mut()) {
            if !l.is_finite() {
                // coordinate never observed
                *l = 0.0;
                *h = 0.0;
            } else if *h - *l < CONSTANT_SPAN {
                // e.g. the hip center after normalization, constant up to rounding
                *h = *l;
            }
        }
        Ok(InputScaler { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    fn forward_value(&self, i: usize, v: f64) -> f64 {
        let span = self.hi[i] - self.lo[i];
        if span > 0.0 {
            0.1 + 0.8 * (v - self.lo[i]) / span
        } else {
            0.5
        }
    }

    fn inverse_value(&self, i: usize, r: f64) -> f64 {
        let span = self.hi[i] - self.lo[i];
        if span > 0.0 {
            self.lo[i] + (r - 0.1) * span / 0.8
        } else {
            self.lo[i]
        }
    }

    pub fn scale_frame(&self, frame: &SkeletonFrame) -> Result<Vec<f64>> {
        check_dim(self.dim(), 3 * frame.joints.len())?;
        let mut out = flatten_frame(frame);
        for (j, joint) in frame.joints.iter().enumerate() {
            for k in 0..3 {
                let i = 3 * j + k;
                out[i] = if joint.is_missing { 0.0 } else { self.forward_value(i, out[i]) };
            }
        }
        Ok(out)
    }

    pub fn unscale(&self, values: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), values.len())?;
        Ok(values.iter().enumerate().map(|(i, &r)| self.inverse_value(i, r)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedModel {
    pub version: u32,
    pub input_dim: usize,
    pub category_count: usize,
    pub chunk_count: usize,
    pub layers: Vec<DaeLayer>,
    pub scaler: InputScaler,
    pub train_config: TrainConfig,
}

/// Loss curves recorded while training a stack.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub layers: Vec<Vec<f64>>,
    pub finetune: Vec<f64>,
}

impl StackedModel {
    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.hidden_dim())
    }

    /// Clean encoding through every layer.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim, x.len())?;
        let mut h = x.to_vec();
        for layer in &self.layers {
            h = layer.encode(&h)?;
        }
        Ok(h)
    }

    /// Encoder stack followed by the skeleton decoders in reverse order.
    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut r = self.encode(x)?;
        for layer in self.layers.iter().rev() {
            r = layer.decode_x(&r)?;
        }
        Ok(r)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: StackedModel = serde_json::from_str(text)?;
        if m.version != MODEL_VERSION {
            return Err(Error::data(format!("unsupported model version {}", m.version)));
        }
        let mut dim = m.input_dim;
        for l in &m.layers {
            check_dim(dim, l.input_dim())?;
            check_dim(m.category_count, l.category_count())?;
            check_dim(m.chunk_count, l.chunk_count())?;
            dim = l.hidden_dim();
        }
        check_dim(m.input_dim, m.scaler.dim())?;
        if !m.layers.iter().all(DaeLayer::is_finite) {
            return Err(Error::data("model contains non-finite parameters"));
        }
        Ok(m)
    }
}

/// Greedy layer-wise training followed by joint fine-tuning. Layer `k + 1`
/// is trained on layer `k`'s clean hidden activations; every layer gets its
/// own category/chunk heads against the same targets.
pub fn train_stack_with_history(
    inputs: &[Sample],
    hidden_sizes: &[usize],
    cfg: &TrainConfig,
) -> Result<(StackedModel, TrainingHistory)> {
    if hidden_sizes.is_empty() {
        return Err(Error::config("at least one hidden layer is required"));
    }
    let (d, l, chunks) = check_samples(inputs)?;
    let mut history = TrainingHistory::default();
    let mut layers = Vec::with_capacity(hidden_sizes.len());
    let mut current: Vec<Sample> = inputs.to_vec();
    for (k, &size) in hidden_sizes.iter().enumerate() {
        let (layer, curve) = train_layer_with_history(&current, size, cfg, k)?;
        history.layers.push(curve);
        if k + 1 < hidden_sizes.len() {
            current = current
                .iter()
                .map(|s| {
                    Ok(Sample {
                        x: layer.encode(&s.x)?,
                        targets: s.targets.clone(),
                    })
                })
                .collect::<Result<_>>()?;
        }
        layers.push(layer);
    }
    let mut model = StackedModel {
        version: MODEL_VERSION,
        input_dim: d,
        category_count: l,
        chunk_count: chunks,
        layers,
        scaler: InputScaler::identity(d),
        train_config: cfg.clone(),
    };
    history.finetune = finetune(&mut model, inputs, cfg)?;
    Ok((model, history))
}

pub fn train_stack(inputs: &[Sample], hidden_sizes: &[usize], cfg: &TrainConfig) -> Result<StackedModel> {
    train_stack_with_history(inputs, hidden_sizes, cfg).map(|(m, _)| m)
}

/// Gradient container for fine-tuning: one full layer shape per layer, of
/// which only the encoders, skeleton decoders and the top layer's side
/// heads are used.
pub type StackGradients = Vec<DaeLayer>;

/// Deep objective on clean inputs: reconstruction through the whole
/// encoder/decoder chain plus the top layer's category and chunk heads, plus
/// the sparsity term on [`SPARSE_LAYER`] when the stack has one.
pub fn finetune_gradients(model: &StackedModel, batch: &[(&[f64], &ConstraintTargets)], cfg: &TrainConfig) -> Result<(f64, StackGradients)> {
    if batch.is_empty() {
        return Err(Error::data("empty batch"));
    }
    let depth = model.layers.len();
    let inv_n = 1.0 / batch.len() as f64;
    let top = depth - 1;

    // forward
    struct Trace {
        enc: Vec<Vec<f64>>, // enc[0] = x, enc[k+1] = h_k
        dec: Vec<Vec<f64>>, // dec[k] = output of layer k's skeleton decoder
        r_c: Vec<f64>,
        r_t: Vec<f64>,
    }
    let traces = batch
        .iter()
        .map(|(x, tg)| {
            check_dim(model.input_dim, x.len())?;
            check_dim(model.category_count, tg.c.len())?;
            check_dim(model.chunk_count, tg.t.len())?;
            let mut enc = vec![x.to_vec()];
            for layer in &model.layers {
                let h = layer.encode(enc.last().expect("non-empty"))?;
                enc.push(h);
            }
            let mut dec = vec![Vec::new(); depth];
            let mut r = enc[depth].clone();
            for k in (0..depth).rev() {
                r = model.layers[k].decode_x(&r)?;
                dec[k] = r.clone();
            }
            let ht = &enc[depth];
            let tl = &model.layers[top];
            Ok(Trace {
                r_c: head(&tl.w_dec_c, &tl.o_dec_c, ht),
                r_t: head(&tl.w_dec_t, &tl.o_dec_t, ht),
                enc,
                dec,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let sparse = cfg.sparsity_weight != 0.0 && depth > SPARSE_LAYER;
    let mut mean_h = Vec::new();
    if sparse {
        mean_h = vec![0.0; model.layers[SPARSE_LAYER].hidden_dim()];
        for tr in &traces {
            mean_h.iter_mut().zip(&tr.enc[SPARSE_LAYER + 1]).for_each(|(m, h)| *m += h * inv_n);
        }
    }

    let mut grads: StackGradients = model.layers.iter().map(DaeLayer::shape_like).collect();
    let mut total = 0.0;
    let mut dz = Vec::new();
    for ((x, tg), tr) in batch.iter().zip(&traces) {
        total += sq_err(x, &tr.dec[0]) + cfg.lambda * sq_err(&tg.c, &tr.r_c) + cfg.beta * sq_err(&tg.t, &tr.r_t);

        // decoder chain, bottom (output) to top
        let mut d_out: Vec<f64> = tr.dec[0].iter().zip(x.iter()).map(|(r, t)| 2.0 * (r - t) * inv_n).collect();
        for k in 0..depth {
            let r = &tr.dec[k];
            let input = if k + 1 < depth { &tr.dec[k + 1] } else { &tr.enc[depth] };
            dz.clear();
            dz.extend(d_out.iter().zip(r).map(|(d, &ri)| d * ri * (1.0 - ri)));
            let g = &mut grads[k];
            g.w_dec_x.add_outer(1.0, &dz, input);
            g.o_dec_x.iter_mut().zip(&dz).for_each(|(o, d)| *o += d);
            let mut d_in = vec![0.0; input.len()];
            model.layers[k].w_dec_x.add_transpose_mul(&dz, &mut d_in);
            d_out = d_in;
        }
        // d_out is now dL/dh_top from the reconstruction path
        let mut dh = d_out;
        let tl = &model.layers[top];
        let ht = &tr.enc[depth];
        {
            let g = &mut grads[top];
            if cfg.lambda != 0.0 {
                head_backward(&tl.w_dec_c, &tg.c, &tr.r_c, ht, cfg.lambda * inv_n, &mut g.w_dec_c, &mut g.o_dec_c, &mut dh, &mut dz);
            }
            if cfg.beta != 0.0 {
                head_backward(&tl.w_dec_t, &tg.t, &tr.r_t, ht, cfg.beta * inv_n, &mut g.w_dec_t, &mut g.o_dec_t, &mut dh, &mut dz);
            }
        }
        // encoder chain, top to bottom
        for k in (0..depth).rev() {
            let h = &tr.enc[k + 1];
            if sparse && k == SPARSE_LAYER {
                for (d, &m) in dh.iter_mut().zip(&mean_h) {
                    *d += cfg.sparsity_weight * kl_derivative(cfg.rho, m) * inv_n;
                }
            }
            dh.iter_mut().zip(h).for_each(|(d, &hv)| *d *= hv * (1.0 - hv));
            let input = &tr.enc[k];
            let g = &mut grads[k];
            g.w_enc.add_outer(1.0, &dh, input);
            g.b_enc.iter_mut().zip(&dh).for_each(|(b, d)| *b += d);
            if k > 0 {
                let mut d_in = vec![0.0; input.len()];
                model.layers[k].w_enc.add_transpose_mul(&dh, &mut d_in);
                dh = d_in;
            }
        }
    }
    let mut value = total * inv_n;
    if sparse {
        value += cfg.sparsity_weight * mean_h.iter().map(|&m| kl_bernoulli(cfg.rho, m)).sum::<f64>();
    }
    Ok((value, grads))
}

/// Fine-tuning pass on clean inputs at a tenth of the layer-wise learning
/// rate. Returns the per-epoch mean loss.
fn finetune(model: &mut StackedModel, inputs: &[Sample], cfg: &TrainConfig) -> Result<Vec<f64>> {
    let mut rng = rng_from_seed(derive_seed(cfg.seed, "dae/finetune", 0));
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut history = Vec::with_capacity(cfg.finetune_epochs);
    for epoch in 0..cfg.finetune_epochs {
        let lr = cfg.learning_rate_at(epoch) / 10.0;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[f64], &ConstraintTargets)> =
                idx.iter().map(|&i| (inputs[i].x.as_slice(), &inputs[i].targets)).collect();
            let (value, grads) = finetune_gradients(model, &batch, cfg)?;
            for (layer, g) in model.layers.iter_mut().zip(&grads) {
                layer.add_scaled(-lr, g);
            }
            epoch_loss += value * idx.len() as f64;
        }
        history.push(epoch_loss / inputs.len() as f64);
    }
    if !model.layers.iter().all(DaeLayer::is_finite) {
        return Err(Error::data("fine-tuning diverged (non-finite parameters)"));
    }
    Ok(history)
}

/// Per-frame top-layer features of one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    pub features: Vec<Vec<f64>>,
    pub label: Option<usize>,
    pub subject_id: u32,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, |f| f.len())
    }
}

/// Encodes every frame of a preprocessed sequence, without corruption.
pub fn encode_sequence(model: &StackedModel, sequence: &ActionSequence) -> Result<FeatureSequence> {
    let features = sequence
        .frames
        .iter()
        .map(|f| model.encode(&model.scaler.scale_frame(f)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureSequence {
        features,
        label: sequence.label,
        subject_id: sequence.subject_id,
    })
}

/// Runs every frame through the full encoder/decoder chain and maps the
/// reconstruction back to joint coordinates. Missing joints in the input are
/// seen as masked and come back restored.
pub fn restore_sequence(model: &StackedModel, sequence: &ActionSequence) -> Result<ActionSequence> {
    let frames = sequence
        .frames
        .iter()
        .map(|f| {
            let r = model.reconstruct(&model.scaler.scale_frame(f)?)?;
            let mut out = unflatten_frame(&model.scaler.unscale(&r)?, f.timestamp_index)?;
            for (o, j) in out.joints.iter_mut().zip(&f.joints) {
                o.confidence = j.confidence.map(|_| 1.0);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ActionSequence {
        frames,
        ..sequence.clone()
    })
}

/// Scaled inputs and side targets for every frame of preprocessed, labeled
/// sequences.
pub fn training_samples(
    sequences: &[&ActionSequence],
    scaler: &InputScaler,
    category_count: usize,
    chunk_count: usize,
) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for s in sequences {
        let label = s
            .label
            .ok_or_else(|| Error::data(format!("training sequence {} has no label", s.instance_id)))?;
        let len = s.frames.len();
        for (i, f) in s.frames.iter().enumerate() {
            out.push(Sample {
                x: scaler.scale_frame(f)?,
                targets: ConstraintTargets::new(label, category_count, i, len, chunk_count)?,
            });
        }
    }
    Ok(out)
}
