//! Permutation-invariant neural Bayes estimator.
//!
//! Each row of a sample passes through a shared encoder, the encodings are
//! mean-pooled, and a decoder maps the pooled vector to parameter space.
//! Pooling sums every feature column in sorted order, so the output is
//! bitwise identical under any row permutation.
//!
//! Training minimizes the mean squared error between network outputs and
//! the parameters that generated each training sample, which approximates
//! the posterior mean under the prior used to draw those parameters.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::Simulator;
use crate::param::Bounds;
use crate::rng::{open01, RandomSource};

pub const NET_FORMAT: &str = "exceed-deepsets";
pub const NET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: usize,
    /// Dense layers in the row encoder, all followed by `tanh`.
    pub encoder_depth: usize,
    /// Dense layers after pooling; `tanh` on all but the last.
    pub decoder_depth: usize,
    #[serde(default)]
    pub input_transform: InputTransform,
}

/// Elementwise map applied to every input before standardization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InputTransform {
    #[default]
    Identity,
    /// Natural log; inputs must be positive.
    Log,
}

impl InputTransform {
    fn apply(self, x: f64) -> f64 {
        match self {
            InputTransform::Identity => x,
            InputTransform::Log => x.ln(),
        }
    }
}

impl Architecture {
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        Self { input_dim, output_dim, hidden: 64, encoder_depth: 2, decoder_depth: 2, input_transform: InputTransform::Identity }
    }

    pub fn with_input_transform(self, input_transform: InputTransform) -> Self {
        Self { input_transform, ..self }
    }

    pub fn with_hidden(self, hidden: usize) -> Self {
        Self { hidden, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden == 0 {
            return Err(Error::InvalidSpec("network dimensions must be positive".into()));
        }
        if self.encoder_depth == 0 || self.decoder_depth == 0 {
            return Err(Error::InvalidSpec("encoder and decoder need at least one layer".into()));
        }
        Ok(())
    }

    fn encoder_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(std::iter::repeat(self.hidden).take(self.encoder_depth));
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }

    fn decoder_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.hidden; self.decoder_depth];
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
}

/// Output parameterization: `Log` outputs are `exp(raw)`, keeping them positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Log,
}

impl Link {
    fn apply(self, raw: f64) -> f64 {
        match self {
            Link::Identity => raw,
            Link::Log => raw.exp(),
        }
    }

    fn inverse(self, value: f64) -> f64 {
        match self {
            Link::Identity => value,
            Link::Log => value.ln(),
        }
    }

    /// d output / d raw, given the output.
    fn slope(self, out: f64) -> f64 {
        match self {
            Link::Identity => 1.0,
            Link::Log => out,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `out x in`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(out: usize, inp: usize) -> Self {
        Self { weights: Array2::zeros((out, inp)), bias: Array1::zeros(out) }
    }

    fn glorot<R: Rng + ?Sized>(out: usize, inp: usize, rng: &mut R) -> Self {
        let s = (6.0 / (out + inp) as f64).sqrt();
        let weights = Array2::from_shape_fn((out, inp), |_| s * (2.0 * open01(rng) - 1.0));
        Self { weights, bias: Array1::zeros(out) }
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Independent prior over the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum PriorSpec {
    /// Uniform on a box.
    Uniform { lower: Vec<f64>, upper: Vec<f64> },
    /// One-dimensional Pareto with density `alpha beta^alpha t^-(alpha+1)` on `t > beta`.
    Pareto { alpha: f64, beta: f64 },
}

/// Upper tail mass left out of the Pareto clamping box.
const PARETO_TAIL: f64 = 1e-9;

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            PriorSpec::Uniform { lower, upper } => {
                Bounds::new(lower.clone(), upper.clone())?;
                if lower.iter().zip(upper).any(|(l, u)| l >= u) {
                    return Err(Error::InvalidSpec("uniform prior needs lower < upper".into()));
                }
            }
            PriorSpec::Pareto { alpha, beta } => {
                if !(*alpha > 0.0 && *beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
                    return Err(Error::InvalidSpec("Pareto prior needs alpha, beta > 0".into()));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            PriorSpec::Uniform { lower, .. } => lower.len(),
            PriorSpec::Pareto { .. } => 1,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            PriorSpec::Uniform { lower, upper } => {
                lower.iter().zip(upper).map(|(l, u)| l + (u - l) * open01(rng)).collect()
            }
            PriorSpec::Pareto { .. } => vec![self.quantile(0, open01(rng))],
        }
    }

    /// Marginal quantile of component `k`.
    pub fn quantile(&self, k: usize, p: f64) -> f64 {
        match self {
            PriorSpec::Uniform { lower, upper } => lower[k] + p * (upper[k] - lower[k]),
            PriorSpec::Pareto { alpha, beta } => beta * (1.0 - p).powf(-1.0 / alpha),
        }
    }

    pub fn iqr(&self, k: usize) -> f64 {
        self.quantile(k, 0.75) - self.quantile(k, 0.25)
    }

    /// Support box used to clamp estimates; the Pareto tail beyond the
    /// `1 - 1e-9` quantile is cut off.
    pub fn support(&self) -> Bounds {
        match self {
            PriorSpec::Uniform { lower, upper } => Bounds { lower: lower.clone(), upper: upper.clone() },
            PriorSpec::Pareto { beta, .. } => Bounds { lower: vec![*beta], upper: vec![self.quantile(0, 1.0 - PARETO_TAIL)] },
        }
    }

    /// Log links for components whose support is strictly positive.
    pub fn links(&self) -> Vec<Link> {
        self.support().lower.iter().map(|&l| if l > 0.0 { Link::Log } else { Link::Identity }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepSetsNet {
    pub arch: Architecture,
    pub pooling: Pooling,
    /// Inputs are standardized as `(x - shift) / scale` per column.
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub links: Vec<Link>,
    /// Estimates are projected into this box.
    pub bounds: Bounds,
    pub encoder: Vec<Dense>,
    pub decoder: Vec<Dense>,
    pub trained: bool,
}

/// Same shape as the network weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub encoder: Vec<Dense>,
    pub decoder: Vec<Dense>,
}

impl Gradient {
    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.encoder, &self.decoder)
    }
}

fn flatten(encoder: &[Dense], decoder: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for layer in encoder.iter().chain(decoder) {
        out.extend(layer.weights.iter());
        out.extend(layer.bias.iter());
    }
    out
}

struct Cache {
    /// Standardized input followed by every encoder activation.
    enc: Vec<Array2<f64>>,
    pooled: Array1<f64>,
    /// Pooled vector followed by every hidden decoder activation.
    dec: Vec<Array1<f64>>,
    raw: Vec<f64>,
    output: Vec<f64>,
}

fn check_finite<'a>(values: impl IntoIterator<Item = &'a f64>, layer: String) -> Result<()> {
    if values.into_iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteActivation { layer });
    }
    Ok(())
}

impl DeepSetsNet {
    /// Network with every weight zero; the output is the link image of the
    /// zero vector for every input.
    pub fn zeros(arch: Architecture, links: Vec<Link>, bounds: Bounds) -> Result<Self> {
        arch.validate()?;
        if links.len() != arch.output_dim || bounds.dim() != arch.output_dim {
            return Err(Error::DimensionMismatch { expected: arch.output_dim, got: links.len() });
        }
        Ok(Self {
            arch,
            pooling: Pooling::Mean,
            input_shift: vec![0.0; arch.input_dim],
            input_scale: vec![1.0; arch.input_dim],
            links,
            bounds,
            encoder: arch.encoder_shapes().into_iter().map(|(o, i)| Dense::zeros(o, i)).collect(),
            decoder: arch.decoder_shapes().into_iter().map(|(o, i)| Dense::zeros(o, i)).collect(),
            trained: false,
        })
    }

    /// Glorot-uniform weights; the output bias starts at the link image of
    /// the prior median.
    pub fn init(arch: Architecture, prior: &PriorSpec, src: &RandomSource) -> Result<Self> {
        prior.validate()?;
        if prior.dim() != arch.output_dim {
            return Err(Error::DimensionMismatch { expected: arch.output_dim, got: prior.dim() });
        }
        let mut net = Self::zeros(arch, prior.links(), prior.support())?;
        let mut rng = src.rng();
        for (layer, (o, i)) in net.encoder.iter_mut().zip(arch.encoder_shapes()) {
            *layer = Dense::glorot(o, i, &mut rng);
        }
        for (layer, (o, i)) in net.decoder.iter_mut().zip(arch.decoder_shapes()) {
            *layer = Dense::glorot(o, i, &mut rng);
        }
        let last = net.decoder.last_mut().expect("decoder depth >= 1");
        last.weights.mapv_inplace(|w| 0.1 * w);
        for k in 0..arch.output_dim {
            last.bias[k] = net.links[k].inverse(prior.quantile(k, 0.5));
        }
        Ok(net)
    }

    pub fn n_params(&self) -> usize {
        self.encoder.iter().chain(&self.decoder).map(Dense::n_params).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        flatten(&self.encoder, &self.decoder)
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::DimensionMismatch { expected: self.n_params(), got: flat.len() });
        }
        let mut k = 0;
        for layer in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = flat[k];
                k += 1;
            }
        }
        Ok(())
    }

    fn prepare_input(&self, sample: ArrayView2<'_, f64>) -> Array2<f64> {
        let t = self.arch.input_transform;
        Array2::from_shape_fn(sample.raw_dim(), |(i, j)| (t.apply(sample[[i, j]]) - self.input_shift[j]) / self.input_scale[j])
    }

    fn forward_cached(&self, sample: ArrayView2<'_, f64>) -> Result<Cache> {
        if sample.ncols() != self.arch.input_dim {
            return Err(Error::DimensionMismatch { expected: self.arch.input_dim, got: sample.ncols() });
        }
        let n = sample.nrows();
        if n == 0 {
            return Err(Error::Empty("sample"));
        }
        let h = self.prepare_input(sample);
        check_finite(h.iter(), "input".into())?;
        let mut enc = vec![h];
        for (l, layer) in self.encoder.iter().enumerate() {
            let mut next = enc[l].dot(&layer.weights.t());
            next += &layer.bias;
            next.mapv_inplace(f64::tanh);
            check_finite(next.iter(), format!("encoder {}", l + 1))?;
            enc.push(next);
        }
        let last = enc.last().expect("encoder output");
        let mut pooled = Array1::zeros(last.ncols());
        let mut column = Vec::with_capacity(n);
        for (k, p) in pooled.iter_mut().enumerate() {
            column.clear();
            column.extend(last.column(k).iter().copied());
            column.sort_by(f64::total_cmp);
            *p = column.iter().sum::<f64>() / n as f64;
        }
        let mut dec = vec![pooled.clone()];
        let depth = self.decoder.len();
        let mut raw = Array1::zeros(0);
        for (l, layer) in self.decoder.iter().enumerate() {
            let mut next = layer.weights.dot(&dec[l]);
            next += &layer.bias;
            if l + 1 < depth {
                next.mapv_inplace(f64::tanh);
                check_finite(next.iter(), format!("decoder {}", l + 1))?;
                dec.push(next);
            } else {
                raw = next;
            }
        }
        let output: Vec<f64> = raw.iter().zip(&self.links).map(|(r, l)| l.apply(*r)).collect();
        check_finite(output.iter(), "output".into())?;
        Ok(Cache { enc, pooled, dec, raw: raw.to_vec(), output })
    }

    /// Unclamped network output.
    pub fn forward_raw(&self, sample: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        Ok(self.forward_cached(sample)?.output)
    }

    /// Network output projected into the support box.
    pub fn forward(&self, sample: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        Ok(self.bounds.projected(&self.forward_raw(sample)?))
    }

    /// Residuals in `space` and their derivatives with respect to the raw outputs.
    fn residuals(&self, cache: &Cache, theta: &[f64], space: LossSpace) -> (Vec<f64>, Vec<f64>) {
        let links = self.links.iter();
        match space {
            LossSpace::Parameter => cache
                .output
                .iter()
                .zip(theta)
                .zip(links)
                .map(|((o, t), l)| (o - t, l.slope(*o)))
                .unzip(),
            LossSpace::Link => cache.raw.iter().zip(theta).zip(links).map(|((r, t), l)| (r - l.inverse(*t), 1.0)).unzip(),
        }
    }

    /// Add the gradient of `scale * ||resid||^2` for one training pair.
    fn backward(&self, cache: &Cache, theta: &[f64], space: LossSpace, scale: f64, grad: &mut Gradient) -> f64 {
        let (resid, slope) = self.residuals(cache, theta, space);
        let loss: f64 = resid.iter().map(|r| r * r).sum();
        let mut delta: Array1<f64> = resid.iter().zip(&slope).map(|(r, s)| 2.0 * scale * r * s).collect();
        for l in (0..self.decoder.len()).rev() {
            let input = &cache.dec[l];
            let g = &mut grad.decoder[l];
            g.weights += &delta.view().insert_axis(Axis(1)).dot(&input.view().insert_axis(Axis(0)));
            g.bias += &delta;
            let back = self.decoder[l].weights.t().dot(&delta);
            delta = if l > 0 { &back * &input.mapv(|a| 1.0 - a * a) } else { back };
        }
        // delta is now d loss / d pooled; each row contributes 1/n of the mean
        let n = cache.enc[0].nrows() as f64;
        let _ = &cache.pooled;
        let last = cache.enc.len() - 1;
        let mut d_rows = Array2::from_shape_fn(cache.enc[last].raw_dim(), |(_, k)| delta[k] / n);
        for l in (0..self.encoder.len()).rev() {
            let out = &cache.enc[l + 1];
            let d_pre = &d_rows * &out.mapv(|a| 1.0 - a * a);
            let g = &mut grad.encoder[l];
            g.weights += &d_pre.t().dot(&cache.enc[l]);
            g.bias += &d_pre.sum_axis(Axis(0));
            if l > 0 {
                d_rows = d_pre.dot(&self.encoder[l].weights);
            }
        }
        loss
    }

    fn zero_gradient(&self) -> Gradient {
        Gradient {
            encoder: self.encoder.iter().map(|d| Dense::zeros(d.weights.nrows(), d.weights.ncols())).collect(),
            decoder: self.decoder.iter().map(|d| Dense::zeros(d.weights.nrows(), d.weights.ncols())).collect(),
        }
    }

    /// Digest of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&NetFile::from(self)).expect("net serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&NetFile::from(self)).expect("net serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: NetFile = serde_json::from_str(text)?;
        if file.format != NET_FORMAT || file.version != NET_VERSION {
            return Err(Error::Parse(format!("unsupported network file {} v{}", file.format, file.version)));
        }
        let net = file.net;
        net.arch.validate()?;
        let enc_ok = net.encoder.len() == net.arch.encoder_depth
            && net.encoder.iter().zip(net.arch.encoder_shapes()).all(|(l, s)| l.weights.dim() == s && l.bias.len() == s.0);
        let dec_ok = net.decoder.len() == net.arch.decoder_depth
            && net.decoder.iter().zip(net.arch.decoder_shapes()).all(|(l, s)| l.weights.dim() == s && l.bias.len() == s.0);
        let io_ok = net.links.len() == net.arch.output_dim
            && net.bounds.dim() == net.arch.output_dim
            && net.input_shift.len() == net.arch.input_dim
            && net.input_scale.len() == net.arch.input_dim;
        if !(enc_ok && dec_ok && io_ok) {
            return Err(Error::Parse("network weights do not match the architecture header".into()));
        }
        Ok(net)
    }

    /// Load and check the dimensions against the model in use.
    pub fn load(path: &std::path::Path, input_dim: usize, output_dim: usize) -> Result<Self> {
        let net = Self::from_json(&std::fs::read_to_string(path)?)?;
        if net.arch.input_dim != input_dim {
            return Err(Error::DimensionMismatch { expected: input_dim, got: net.arch.input_dim });
        }
        if net.arch.output_dim != output_dim {
            return Err(Error::DimensionMismatch { expected: output_dim, got: net.arch.output_dim });
        }
        Ok(net)
    }
}

#[derive(Serialize, Deserialize)]
struct NetFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    net: DeepSetsNet,
}

impl From<&DeepSetsNet> for NetFile {
    fn from(net: &DeepSetsNet) -> Self {
        Self { format: NET_FORMAT.into(), version: NET_VERSION, net: net.clone() }
    }
}

/// One simulated training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub theta: Vec<f64>,
    pub sample: Array2<f64>,
}

/// Where the quadratic training loss is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossSpace {
    /// `||estimate - theta||^2`; targets the posterior mean.
    #[default]
    Parameter,
    /// Squared error of the link-scale outputs, e.g. `log sigma`. Keeps
    /// heavy-tailed priors from dominating the loss.
    Link,
}

/// Mean squared error over `batch` and its gradient.
pub fn loss_and_grad(net: &DeepSetsNet, batch: &[TrainingPair]) -> Result<(f64, Gradient)> {
    loss_and_grad_in(net, batch, LossSpace::Parameter)
}

pub fn loss_and_grad_in(net: &DeepSetsNet, batch: &[TrainingPair], space: LossSpace) -> Result<(f64, Gradient)> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grad = net.zero_gradient();
    let mut loss = 0.0;
    for pair in batch {
        if pair.theta.len() != net.arch.output_dim {
            return Err(Error::DimensionMismatch { expected: net.arch.output_dim, got: pair.theta.len() });
        }
        let cache = net.forward_cached(pair.sample.view())?;
        loss += scale * net.backward(&cache, &pair.theta, space, scale, &mut grad);
    }
    Ok((loss, grad))
}

fn mean_loss(net: &DeepSetsNet, pairs: &[TrainingPair], space: LossSpace) -> Result<f64> {
    let mut total = 0.0;
    for pair in pairs {
        let cache = net.forward_cached(pair.sample.view())?;
        total += net.residuals(&cache, &pair.theta, space).0.iter().map(|r| r * r).sum::<f64>();
    }
    Ok(total / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Rows per simulated sample.
    pub sample_size: usize,
    /// Number of simulated training pairs.
    pub training_sets: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub loss: LossSpace,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { sample_size: 100, training_sets: 5000, epochs: 50, batch_size: 32, learning_rate: 1e-3, loss: LossSpace::Parameter }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_size == 0 || self.training_sets == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter("sample size, training sets and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Full training-set loss before training and after every epoch.
    pub losses: Vec<f64>,
    /// Epoch whose weights were kept (0 means the initial weights).
    pub best_epoch: usize,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.losses[self.best_epoch]
    }
}

/// Training pairs `(theta_k ~ prior, sample_k ~ model(theta_k))`; pair `k`
/// draws from stream `k` of `src`.
pub fn simulate_training_set(
    prior: &PriorSpec,
    sim: &dyn Simulator,
    sample_size: usize,
    count: usize,
    src: &RandomSource,
) -> Result<Vec<TrainingPair>> {
    prior.validate()?;
    if prior.dim() != sim.param_dim() {
        return Err(Error::DimensionMismatch { expected: sim.param_dim(), got: prior.dim() });
    }
    (0..count)
        .map(|k| {
            let stream = src.split(k as u64);
            let theta = prior.sample(&mut stream.rng());
            let sample = sim
                .sample(&theta, sample_size, &stream.split(1))
                .map_err(|e| Error::Simulation(format!("training pair {k}: {e}")))?;
            Ok(TrainingPair { theta, sample })
        })
        .collect()
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Column means and standard deviations over every row of every sample.
fn input_standardization(pairs: &[TrainingPair], d: usize, transform: InputTransform) -> (Vec<f64>, Vec<f64>) {
    let mut sum = vec![0.0; d];
    let mut sq = vec![0.0; d];
    let mut count = 0.0;
    for pair in pairs {
        for row in pair.sample.rows() {
            for j in 0..d {
                let x = transform.apply(row[j]);
                sum[j] += x;
                sq[j] += x * x;
            }
            count += 1.0;
        }
    }
    let shift: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let scale = sq
        .iter()
        .zip(&shift)
        .map(|(q, m)| {
            let sd = (q / count - m * m).max(0.0).sqrt();
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (shift, scale)
}

/// Minibatch Adam on fixed training pairs, reshuffled every epoch. The
/// weights with the lowest full training-set loss are returned.
pub fn train_on(
    mut net: DeepSetsNet,
    pairs: &[TrainingPair],
    cfg: &TrainConfig,
    src: &RandomSource,
) -> Result<(DeepSetsNet, TrainReport)> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut rng = src.rng();
    let mut params = net.flat_params();
    let mut adam = Adam::new(params.len(), cfg.learning_rate);
    let initial = mean_loss(&net, pairs, cfg.loss)?;
    if !initial.is_finite() {
        return Err(Error::Diverged { epoch: 0, loss: initial });
    }
    let mut losses = vec![initial];
    let mut best = (initial, 0, params.clone());
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&k| pairs[k].clone()));
            let (loss, grad) = loss_and_grad_in(&net, &batch, cfg.loss)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            adam.step(&mut params, &grad.flat());
            net.set_flat_params(&params)?;
        }
        let loss = mean_loss(&net, pairs, cfg.loss).map_err(|e| match e {
            Error::NonFiniteActivation { .. } => Error::Diverged { epoch, loss: f64::NAN },
            other => other,
        })?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        log::debug!("epoch {epoch}: loss {loss:.6e}");
        losses.push(loss);
        if loss < best.0 {
            best = (loss, epoch, params.clone());
        }
    }
    net.set_flat_params(&best.2)?;
    net.trained = true;
    Ok((net, TrainReport { losses, best_epoch: best.1 }))
}

/// Simulate the training pairs and fit a freshly initialized network.
pub fn train(
    arch: Architecture,
    prior: &PriorSpec,
    sim: &dyn Simulator,
    cfg: &TrainConfig,
    src: &RandomSource,
) -> Result<(DeepSetsNet, TrainReport)> {
    cfg.validate()?;
    if arch.input_dim != sim.data_dim() {
        return Err(Error::DimensionMismatch { expected: sim.data_dim(), got: arch.input_dim });
    }
    let pairs = simulate_training_set(prior, sim, cfg.sample_size, cfg.training_sets, &src.split(0))?;
    let mut net = DeepSetsNet::init(arch, prior, &src.split(1))?;
    let (shift, scale) = input_standardization(&pairs, arch.input_dim, arch.input_transform);
    net.input_shift = shift;
    net.input_scale = scale;
    train_on(net, &pairs, cfg, &src.split(2))
}

/// Estimate from a trained network, projected into its support box.
pub fn estimate_nbe(net: &DeepSetsNet, sample: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    if !net.trained {
        return Err(Error::Estimation("network has not been trained".into()));
    }
    net.forward(sample)
}
