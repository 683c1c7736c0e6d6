//! Feedforward mask estimator: a ±C frame context window, two tanh layers, a
//! sigmoid mask head and an optional softplus activation head, trained with
//! Adam on one chunk of frames per step under permutation invariance.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{pit_wrap_with_grad, LossGradient, LossKind, LossTargets, ModelOutputs};
use crate::mask_cov::{input_feature, oracle_activation, ActivationTensor, FeatureTensor, MaskTensor, Tensor3};
use crate::scene::Scene;
use crate::stft::{stft, ComplexSpectrogram, StftConfig};

const MAGIC: &[u8; 4] = b"MBEM";
const VERSION: u32 = 1;

/// Network dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub bins: usize,
    pub sources: usize,
    pub context: usize,
    pub hidden: usize,
    pub activation_head: bool,
}

impl ModelSpec {
    pub fn input_dim(&self) -> usize {
        (2 * self.context + 1) * self.bins
    }

    fn outputs(&self) -> usize {
        self.bins * self.sources
    }

    /// (rows, cols) of each parameter block; biases have one column.
    fn blocks(&self) -> Vec<(usize, usize)> {
        let (h, d, o) = (self.hidden, self.input_dim(), self.outputs());
        let mut b = vec![(h, d), (h, 1), (h, h), (h, 1), (o, h), (o, 1)];
        if self.activation_head {
            b.extend([(o, h), (o, 1)]);
        }
        b
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|(r, c)| r * c).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorModel {
    spec: ModelSpec,
    params: Vec<f64>,
}

struct Cache {
    input: Array2<f64>,
    h1: Array2<f64>,
    h2: Array2<f64>,
    mask: Array2<f64>,
    act_pre: Option<Array2<f64>>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Stacks frames t−C..t+C of `feat` into one row per frame, zero outside the tensor.
pub fn context_window(feat: &FeatureTensor, context: usize) -> Array2<f64> {
    let (frames, bins) = (feat.frames(), feat.bins());
    let width = 2 * context + 1;
    let mut x = Array2::zeros((frames, width * bins));
    for t in 0..frames {
        let mut row = x.row_mut(t);
        for k in 0..width {
            let src = t as isize + k as isize - context as isize;
            if src < 0 || src >= frames as isize {
                continue;
            }
            for (f, v) in feat.frame(src as usize).iter().enumerate() {
                row[k * bins + f] = *v;
            }
        }
    }
    x
}

impl EstimatorModel {
    /// Weights uniform in ±1/√fan_in, biases zero.
    pub fn new(spec: ModelSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(spec.num_params());
        for (rows, cols) in spec.blocks() {
            if cols == 1 {
                params.extend(std::iter::repeat_n(0.0, rows));
            } else {
                let bound = 1.0 / (cols as f64).sqrt();
                params.extend((0..rows * cols).map(|_| rng.random_range(-bound..bound)));
            }
        }
        Self { spec, params }
    }

    pub fn zeros(spec: ModelSpec) -> Self {
        Self { spec, params: vec![0.0; spec.num_params()] }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn views(&self) -> Vec<ArrayView2<'_, f64>> {
        let mut out = Vec::new();
        let mut off = 0;
        for (r, c) in self.spec.blocks() {
            out.push(ArrayView2::from_shape((r, c), &self.params[off..off + r * c]).expect("block shape"));
            off += r * c;
        }
        out
    }

    fn forward_cached(&self, feat: &FeatureTensor) -> Result<(ModelOutputs, Cache)> {
        if feat.bins() != self.spec.bins {
            return Err(Error::Shape(format!("model expects {} bins, feature has {}", self.spec.bins, feat.bins())));
        }
        if feat.frames() == 0 {
            return Err(Error::Empty("feature frames"));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("model weights"));
        }
        let v = self.views();
        let input = context_window(feat, self.spec.context);
        let h1 = (input.dot(&v[0].t()) + v[1].column(0)).mapv(f64::tanh);
        let h2 = (h1.dot(&v[2].t()) + v[3].column(0)).mapv(f64::tanh);
        let mask = (h2.dot(&v[4].t()) + v[5].column(0)).mapv(sigmoid);
        let act_pre = self.spec.activation_head.then(|| h2.dot(&v[6].t()) + v[7].column(0));

        let (frames, bins, n) = (feat.frames(), self.spec.bins, self.spec.sources);
        let mask_t = MaskTensor::from_vec(mask.iter().copied().collect(), frames, bins, n)?;
        let activation = match &act_pre {
            Some(a) => Some(ActivationTensor::from_vec(a.iter().map(|z| softplus(*z)).collect(), frames, bins, n)?),
            None => None,
        };
        Ok((ModelOutputs { mask: mask_t, activation }, Cache { input, h1, h2, mask, act_pre }))
    }

    /// Per-frame masks (and activations when the head exists).
    pub fn forward(&self, feat: &FeatureTensor) -> Result<ModelOutputs> {
        self.forward_cached(feat).map(|(o, _)| o)
    }

    /// Parameter gradient given loss gradients with respect to the outputs.
    fn backward(&self, cache: &Cache, grad: &LossGradient) -> Vec<f64> {
        let v = self.views();
        let frames = cache.mask.nrows();
        let outs = self.spec.outputs();
        let dm = ArrayView2::from_shape((frames, outs), grad.d_mask.values()).expect("mask grad shape");
        let dz_m = &dm * &cache.mask.mapv(|m| m * (1.0 - m));
        let mut blocks: Vec<Array2<f64>> = Vec::with_capacity(8);
        let mut dh2 = dz_m.dot(&v[4]);
        let head_m = (dz_m.t().dot(&cache.h2), dz_m.sum_axis(Axis(0)));
        let head_a = match (&cache.act_pre, &grad.d_activation) {
            (Some(pre), Some(da)) => {
                let da = ArrayView2::from_shape((frames, outs), da.values()).expect("activation grad shape");
                let dz_a = &da * &pre.mapv(sigmoid);
                dh2 = dh2 + dz_a.dot(&v[6]);
                Some((dz_a.t().dot(&cache.h2), dz_a.sum_axis(Axis(0))))
            }
            (Some(_), None) => Some((Array2::zeros((outs, self.spec.hidden)), Array1::zeros(outs))),
            _ => None,
        };
        let dz2 = dh2 * cache.h2.mapv(|h| 1.0 - h * h);
        let dh1 = dz2.dot(&v[2]);
        let dz1 = dh1 * cache.h1.mapv(|h| 1.0 - h * h);
        blocks.push(dz1.t().dot(&cache.input));
        blocks.push(dz1.sum_axis(Axis(0)).insert_axis(Axis(1)));
        blocks.push(dz2.t().dot(&cache.h1));
        blocks.push(dz2.sum_axis(Axis(0)).insert_axis(Axis(1)));
        blocks.push(head_m.0);
        blocks.push(head_m.1.insert_axis(Axis(1)));
        if let Some((w, b)) = head_a {
            blocks.push(w);
            blocks.push(b.insert_axis(Axis(1)));
        }
        let mut flat = Vec::with_capacity(self.params.len());
        for b in blocks {
            flat.extend(b.iter().copied());
        }
        flat
    }

    /// Loss on one example and its gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, kind: LossKind, ex: &TrainingExample) -> Result<(f64, Vec<f64>)> {
        let (outputs, cache) = self.forward_cached(&ex.feature)?;
        let targets = ex.targets();
        let (value, mut grad, _) = pit_wrap_with_grad(kind, &outputs, &targets)?;
        let norm = ex.normalizer(kind);
        grad.d_mask.values_mut().iter_mut().for_each(|g| *g *= norm);
        if let Some(da) = grad.d_activation.as_mut() {
            da.values_mut().iter_mut().for_each(|g| *g *= norm);
        }
        Ok((value.total * norm, self.backward(&cache, &grad)))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = Vec::with_capacity(32 + 4 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let s = &self.spec;
        for d in [s.bins, s.sources, s.context, s.hidden, s.activation_head as usize] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for p in &self.params {
            out.extend_from_slice(&(*p as f32).to_le_bytes());
        }
        fs::File::create(path)?.write_all(&out)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        if bytes.len() < 28 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a model checkpoint".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
        let version = word(4) as u32;
        if version != VERSION {
            return Err(Error::Format(format!("checkpoint version {version}, expected {VERSION}")));
        }
        let spec = ModelSpec {
            bins: word(8),
            sources: word(12),
            context: word(16),
            hidden: word(20),
            activation_head: word(24) != 0,
        };
        let body = &bytes[28..];
        if body.len() != 4 * spec.num_params() {
            return Err(Error::Format("checkpoint size does not match its dimensions".into()));
        }
        let params = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
        Ok(Self { spec, params })
    }
}

/// Spectral data of one scene as the training loop consumes it.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub mixture: ComplexSpectrogram,
    pub images: Vec<ComplexSpectrogram>,
    pub oracle_activation: ActivationTensor,
    pub feature: FeatureTensor,
}

impl TrainingExample {
    pub fn from_scene(scene: &Scene, cfg: &StftConfig) -> Result<Self> {
        let mixture = stft(&scene.mixture, cfg)?;
        let images: Vec<ComplexSpectrogram> = scene.images.iter().map(|c| stft(c, cfg)).collect::<Result<_>>()?;
        Self::from_spectra(mixture, images)
    }

    pub fn from_spectra(mixture: ComplexSpectrogram, images: Vec<ComplexSpectrogram>) -> Result<Self> {
        let oracle_activation = oracle_activation(&images)?;
        let feature = input_feature(&mixture)?;
        Ok(Self { mixture, images, oracle_activation, feature })
    }

    pub fn frames(&self) -> usize {
        self.mixture.frames()
    }

    /// Frames `start..start + len`. Oracle activations are renormalized over
    /// the chunk so that they share their time average with the chunk's
    /// mask-weighted covariances.
    pub fn chunk(&self, start: usize, len: usize) -> Result<Self> {
        let images: Vec<ComplexSpectrogram> = self.images.iter().map(|c| c.slice_frames(start, len)).collect();
        Ok(Self {
            mixture: self.mixture.slice_frames(start, len),
            oracle_activation: oracle_activation(&images)?,
            images,
            feature: self.feature.slice_frames(start, len),
        })
    }

    pub fn targets(&self) -> LossTargets<'_> {
        LossTargets {
            mixture: &self.mixture,
            images: &self.images,
            oracle_activation: Some(&self.oracle_activation),
            ref_channel: 0,
        }
    }

    /// Scale applied to the summed loss: multichannel losses become per-bin means.
    fn normalizer(&self, kind: LossKind) -> f64 {
        match kind {
            LossKind::Psa => 1.0,
            LossKind::L1 | LossKind::L2 => 1.0 / (self.mixture.frames() * self.mixture.bins()) as f64,
        }
    }
}

fn default_loss() -> LossKind {
    LossKind::Psa
}
fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_chunk() -> usize {
    100
}
fn default_context() -> usize {
    3
}
fn default_hidden() -> usize {
    64
}
fn default_steps() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    #[serde(default = "default_chunk")]
    pub chunk_frames: usize,
    #[serde(default = "default_context")]
    pub context: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(loss: LossKind, steps: usize, seed: u64) -> Self {
        Self {
            loss,
            steps,
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_eps(),
            chunk_frames: default_chunk(),
            context: default_context(),
            hidden: default_hidden(),
            seed,
        }
    }

    pub fn model_spec(&self, bins: usize, sources: usize) -> ModelSpec {
        ModelSpec {
            bins,
            sources,
            context: self.context,
            hidden: self.hidden,
            activation_head: self.loss.uses_activation(),
        }
    }
}

/// Adam state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Adam on one randomly placed chunk per step; returns the model and the per-step loss.
///
/// Per-step losses are the PIT minimum on the chunk, with the multichannel
/// losses divided by the number of time-frequency bins.
pub fn train(model: &EstimatorModel, dataset: &[TrainingExample], cfg: &TrainConfig) -> Result<(EstimatorModel, Vec<f64>)> {
    train_with_monitor(model, dataset, cfg, |_, _| {})
}

/// [`train`] with a callback invoked after each update with the step index and current model.
pub fn train_with_monitor(
    model: &EstimatorModel,
    dataset: &[TrainingExample],
    cfg: &TrainConfig,
    mut monitor: impl FnMut(usize, &EstimatorModel),
) -> Result<(EstimatorModel, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if cfg.chunk_frames == 0 {
        return Err(Error::Config("chunk_frames must be positive".into()));
    }
    if cfg.loss.uses_activation() != model.spec.activation_head {
        return Err(Error::Incompatible(format!(
            "loss {} {} an activation head",
            cfg.loss.name(),
            if cfg.loss.uses_activation() { "needs" } else { "must run without" }
        )));
    }
    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005E_ED0F_7A11);
    let mut adam = Adam::new(model.params.len(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let ex = &dataset[rng.random_range(0..dataset.len())];
        let len = cfg.chunk_frames.min(ex.frames());
        let start = rng.random_range(0..=ex.frames() - len);
        let chunk = ex.chunk(start, len)?;
        let (loss, grad) = model.loss_and_gradient(cfg.loss, &chunk)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, loss });
        }
        curve.push(loss);
        adam.update(&mut model.params, &grad);
        monitor(step, &model);
    }
    Ok((model, curve))
}

/// CSV with header `step,loss`.
pub fn loss_curve_csv(curve: &[f64]) -> String {
    let mut s = String::from("step,loss\n");
    for (i, l) in curve.iter().enumerate() {
        s.push_str(&format!("{i},{l}\n"));
    }
    s
}

/// Mean squared difference between two mask tensors.
pub fn mask_mse(a: &Tensor3, b: &Tensor3) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.values().len().max(1) as f64
}
