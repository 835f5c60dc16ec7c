//! Backpropagation, minibatch SGD, symmetry-breaking initialization,
//! neural tangent kernels and invariance-preserving training checks.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::correlators::{correlator_from_draws, slots_at, CorrelatorTensor, InputSet};
use crate::ensembles::{
    zoo, ArchitectureSpec, LayerParams, LayerSpec, NetworkDraw, NetworkSampler, WeightSource,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mc::{map_indexed, run_blocks, McConfig};
use crate::rng::{derive_seed, RngStream};
use crate::stats::{mean_std, t_critical_95, MomentAccumulator};
use crate::symmetry::{deviation_report, ActionSide, DeviationConfig, DeviationReport, GroupSpec};

/// Labelled classification data with features in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, classes: usize) -> Result<Self> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::Dataset(format!(
                "{} features for {} samples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Dataset(format!(
                "label {l} out of range for {classes} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// The first `n` samples.
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            features: self.features[..n * self.dim].to_vec(),
            labels: self.labels[..n].to_vec(),
            dim: self.dim,
            classes: self.classes,
        }
    }
}

/// Isotropic Gaussian clusters around the given centers, `per_class`
/// samples each, interleaved by class.
pub fn gaussian_blobs(
    centers: &[Vec<f64>],
    per_class: usize,
    std: f64,
    rng: &mut RngStream,
) -> Result<Dataset> {
    let dim = centers.first().map_or(0, Vec::len);
    let mut features = Vec::with_capacity(centers.len() * per_class * dim);
    let mut labels = Vec::with_capacity(centers.len() * per_class);
    for _ in 0..per_class {
        for (c, center) in centers.iter().enumerate() {
            for &m in center {
                features.push(m + std * rng.sample::<f64, _>(StandardNormal));
            }
            labels.push(c);
        }
    }
    Dataset::new(features, labels, dim, centers.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// Class `i` ↦ `e_i`, decoded by argmax.
    OneHot,
    /// Class `i` ↦ `1 - e_i`, decoded by argmin.
    OneCold,
}

impl Encoding {
    pub fn encode(&self, label: usize, classes: usize, out: &mut [f64]) {
        let (on, off) = match self {
            Self::OneHot => (1.0, 0.0),
            Self::OneCold => (0.0, 1.0),
        };
        for (i, v) in out[..classes].iter_mut().enumerate() {
            *v = if i == label { on } else { off };
        }
    }

    pub fn decode(&self, outputs: &[f64]) -> usize {
        let better = |a: f64, b: f64| match self {
            Self::OneHot => a > b,
            Self::OneCold => a < b,
        };
        let mut best = 0;
        for (i, &v) in outputs.iter().enumerate() {
            if better(v, outputs[best]) {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Mean over batch and output components of `(f - y)²`.
    Mse,
    /// Batch mean of `f·f - y·y`, invariant under output rotations.
    SoInvariant,
}

impl Loss {
    /// Loss of one sample and its gradient with respect to the output,
    /// both already divided by `batch`.
    fn eval(&self, f: &[f64], y: &[f64], batch: usize, grad: &mut [f64]) -> f64 {
        let b = batch as f64;
        match self {
            Self::Mse => {
                let scale = 1.0 / (b * f.len() as f64);
                let mut l = 0.0;
                for ((g, &fv), &yv) in grad.iter_mut().zip(f).zip(y) {
                    let r = fv - yv;
                    l += r * r;
                    *g = 2.0 * r * scale;
                }
                l * scale
            }
            Self::SoInvariant => {
                let mut l = 0.0;
                for ((g, &fv), &yv) in grad.iter_mut().zip(f).zip(y) {
                    l += fv * fv - yv * yv;
                    *g = 2.0 * fv / b;
                }
                l / b
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss: Loss,
    pub encoding: Encoding,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            learning_rate: 0.001,
            loss: Loss::Mse,
            encoding: Encoding::OneHot,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and ≥ 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Offsets of every trainable tensor in the flat parameter vector: per
/// layer, weight then bias. Fixed weights are not parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    layers: Vec<(Option<usize>, Option<usize>)>,
    total: usize,
}

impl ParamLayout {
    pub fn of(spec: &ArchitectureSpec) -> Result<Self> {
        let mut total = 0;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for l in &spec.layers {
            let mut take = |n: usize| {
                let off = total;
                total += n;
                Some(off)
            };
            layers.push(match l {
                LayerSpec::Linear {
                    inputs,
                    outputs,
                    weight,
                    bias,
                    ..
                } => {
                    let w = match weight {
                        WeightSource::Prior(_) => take(inputs * outputs),
                        WeightSource::Fixed(_) => None,
                    };
                    let b = bias.as_ref().and_then(|_| take(*outputs));
                    (w, b)
                }
                LayerSpec::TLayer { outputs, .. } => (None, take(*outputs)),
                LayerSpec::Activation { .. } => (None, None),
                LayerSpec::ComplexLinear { .. } => {
                    return Err(Error::Unsupported(
                        "gradients of complex layers are not implemented".into(),
                    ))
                }
            });
        }
        Ok(Self { layers, total })
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }
}

/// Trainable parameters as one flat vector in [`ParamLayout`] order.
pub fn parameters(draw: &NetworkDraw) -> Result<Vec<f64>> {
    let layout = ParamLayout::of(&draw.spec)?;
    let mut out = vec![0.0; layout.len()];
    for ((w, b), p) in layout.layers.iter().zip(&draw.layers) {
        match p {
            LayerParams::Linear { weight, bias } => {
                if let Some(o) = w {
                    out[*o..*o + weight.as_slice().len()].copy_from_slice(weight.as_slice());
                }
                if let (Some(o), Some(bias)) = (b, bias) {
                    out[*o..*o + bias.len()].copy_from_slice(bias);
                }
            }
            LayerParams::TLayer { bias } => {
                if let Some(o) = b {
                    out[*o..*o + bias.len()].copy_from_slice(bias);
                }
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Adds `scale · delta` to the trainable parameters.
pub fn add_to_parameters(draw: &mut NetworkDraw, delta: &[f64], scale: f64) -> Result<()> {
    let layout = ParamLayout::of(&draw.spec)?;
    if delta.len() != layout.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} updates for {} parameters",
            delta.len(),
            layout.len()
        )));
    }
    let axpy = |dst: &mut [f64], src: &[f64]| {
        for (d, s) in dst.iter_mut().zip(src) {
            *d += scale * s;
        }
    };
    for ((w, b), p) in layout.layers.iter().zip(draw.layers.iter_mut()) {
        match p {
            LayerParams::Linear { weight, bias } => {
                if let Some(o) = w {
                    let n = weight.as_slice().len();
                    axpy(weight.as_mut_slice(), &delta[*o..*o + n]);
                }
                if let (Some(o), Some(bias)) = (b, bias) {
                    let n = bias.len();
                    axpy(bias, &delta[*o..*o + n]);
                }
            }
            LayerParams::TLayer { bias } => {
                if let Some(o) = b {
                    let n = bias.len();
                    axpy(bias, &delta[*o..*o + n]);
                }
            }
            _ => {}
        }
    }
    Ok(())
}

/// Forward-pass record: `inputs[l]` is the value entering layer `l`, the
/// last entry is the network output.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    values: Vec<Vec<f64>>,
    grad_a: Vec<f64>,
    grad_b: Vec<f64>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.values.last().map_or(&[], Vec::as_slice)
    }

    /// Value entering layer `l`.
    pub fn layer_input(&self, l: usize) -> &[f64] {
        &self.values[l]
    }
}

/// Forward pass that records every intermediate value. T-layer outputs are
/// wrapped onto the circle as in the plain forward pass.
pub fn forward_tape(draw: &NetworkDraw, x: &[f64], tape: &mut Tape) -> Result<()> {
    let spec = &draw.spec;
    if x.len() != spec.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "input of length {} for input_dim {}",
            x.len(),
            spec.input_dim
        )));
    }
    tape.values.resize_with(spec.layers.len() + 1, Vec::new);
    tape.values[0].clear();
    tape.values[0].extend_from_slice(x);
    for (l, (ls, lp)) in spec.layers.iter().zip(&draw.layers).enumerate() {
        let (head, tail) = tape.values.split_at_mut(l + 1);
        let input = &head[l];
        let out = &mut tail[0];
        out.clear();
        match (ls, lp) {
            (LayerSpec::Linear { scale, .. }, LayerParams::Linear { weight, bias }) => {
                for r in 0..weight.rows() {
                    let dot: f64 = weight.row(r).iter().zip(input).map(|(a, b)| a * b).sum();
                    out.push(scale * dot + bias.as_ref().map_or(0.0, |b| b[r]));
                }
            }
            (LayerSpec::TLayer { weight, .. }, LayerParams::TLayer { bias }) => {
                for (r, &b) in bias.iter().enumerate() {
                    let dot: f64 = weight.row(r).iter().zip(input).map(|(a, b)| a * b).sum();
                    out.push(crate::ensembles::wrap_unit(
                        crate::ensembles::wrap_unit(dot) + b,
                    ));
                }
            }
            (LayerSpec::Activation { function }, LayerParams::Activation) => {
                out.extend_from_slice(input);
                function.apply_in_place(out);
            }
            _ => {
                return Err(Error::Unsupported(
                    "layer not supported by the real-valued trainer".into(),
                ))
            }
        }
    }
    Ok(())
}

/// Accumulates `Σ_i grad_out_i ∂f_i/∂θ` into `grad`, given a tape from
/// [`forward_tape`]. The mod of a T-layer is differentiated as the identity.
pub fn backward(
    draw: &NetworkDraw,
    layout: &ParamLayout,
    tape: &mut Tape,
    grad_out: &[f64],
    grad: &mut [f64],
) -> Result<()> {
    let spec = &draw.spec;
    let Tape {
        values,
        grad_a: g,
        grad_b: gx,
    } = tape;
    g.clear();
    g.extend_from_slice(grad_out);
    for l in (0..spec.layers.len()).rev() {
        let input = &values[l];
        let need_input_grad = l > 0;
        let (w_off, b_off) = layout.layers[l];
        match (&spec.layers[l], &draw.layers[l]) {
            (LayerSpec::Linear { scale, .. }, LayerParams::Linear { weight, .. }) => {
                if let Some(o) = b_off {
                    for (d, &v) in grad[o..o + g.len()].iter_mut().zip(g.iter()) {
                        *d += v;
                    }
                }
                if let Some(o) = w_off {
                    let cols = weight.cols();
                    for (r, &gr) in g.iter().enumerate() {
                        if gr == 0.0 {
                            continue;
                        }
                        let sg = scale * gr;
                        let dst = &mut grad[o + r * cols..o + (r + 1) * cols];
                        for (d, &xv) in dst.iter_mut().zip(input) {
                            *d += sg * xv;
                        }
                    }
                }
                if need_input_grad {
                    gx.clear();
                    gx.resize(weight.cols(), 0.0);
                    for (r, &gr) in g.iter().enumerate() {
                        if gr == 0.0 {
                            continue;
                        }
                        for (d, &w) in gx.iter_mut().zip(weight.row(r)) {
                            *d += scale * gr * w;
                        }
                    }
                    std::mem::swap(g, gx);
                }
            }
            (LayerSpec::TLayer { weight, .. }, LayerParams::TLayer { .. }) => {
                if let Some(o) = b_off {
                    for (d, &v) in grad[o..o + g.len()].iter_mut().zip(g.iter()) {
                        *d += v;
                    }
                }
                if need_input_grad {
                    gx.clear();
                    gx.resize(weight.cols(), 0.0);
                    for (r, &gr) in g.iter().enumerate() {
                        for (d, &w) in gx.iter_mut().zip(weight.row(r)) {
                            *d += gr * w;
                        }
                    }
                    std::mem::swap(g, gx);
                }
            }
            (LayerSpec::Activation { function }, LayerParams::Activation) => {
                for (gv, &z) in g.iter_mut().zip(input) {
                    *gv *= function.derivative(z);
                }
            }
            _ => {
                return Err(Error::Unsupported(
                    "layer not supported by the real-valued trainer".into(),
                ))
            }
        }
    }
    Ok(())
}

/// `J[i][θ] = ∂f_i(x)/∂θ` by one backward pass per output.
pub fn jacobian(draw: &NetworkDraw, x: &[f64]) -> Result<Matrix<f64>> {
    let layout = ParamLayout::of(&draw.spec)?;
    let mut tape = Tape::default();
    forward_tape(draw, x, &mut tape)?;
    let d = draw.spec.output_dim;
    let mut jac = Matrix::zeros(d, layout.len());
    let mut seed = vec![0.0; d];
    for i in 0..d {
        seed.iter_mut().for_each(|v| *v = 0.0);
        seed[i] = 1.0;
        backward(draw, &layout, &mut tape, &seed, jac.row_mut(i))?;
    }
    Ok(jac)
}

/// Central finite-difference Jacobian.
pub fn finite_difference_jacobian(draw: &NetworkDraw, x: &[f64], step: f64) -> Result<Matrix<f64>> {
    let layout = ParamLayout::of(&draw.spec)?;
    let d = draw.spec.output_dim;
    let mut jac = Matrix::zeros(d, layout.len());
    let mut probe = draw.clone();
    let mut unit = vec![0.0; layout.len()];
    for k in 0..layout.len() {
        unit[k] = 1.0;
        add_to_parameters(&mut probe, &unit, step)?;
        let plus = probe.forward(x)?;
        add_to_parameters(&mut probe, &unit, -2.0 * step)?;
        let minus = probe.forward(x)?;
        add_to_parameters(&mut probe, &unit, step)?;
        unit[k] = 0.0;
        for i in 0..d {
            jac[(i, k)] = (plus[i] - minus[i]) / (2.0 * step);
        }
    }
    Ok(jac)
}

/// Largest `|a - b| / max(|a|, |b|)`; pairs both below `floor` agree.
pub fn max_relative_error(a: &Matrix<f64>, b: &Matrix<f64>, floor: f64) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| {
            let scale = x.abs().max(y.abs());
            if scale < floor {
                0.0
            } else {
                (x - y).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

/// Output-by-output neural tangent kernel at one input pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NtkTensor {
    pub values: Matrix<f64>,
    /// Present for ensemble averages.
    pub stderr: Option<Matrix<f64>>,
    pub samples: u64,
    /// A relu preactivation was exactly 0 or a T-layer preimage sat on an
    /// integer; the conventional one-sided derivative was used.
    pub nondifferentiable: bool,
}

fn touches_kink(draw: &NetworkDraw, x: &[f64]) -> Result<bool> {
    let mut tape = Tape::default();
    forward_tape(draw, x, &mut tape)?;
    for (l, layer) in draw.spec.layers.iter().enumerate() {
        match layer {
            LayerSpec::Activation {
                function: crate::ensembles::Activation::Relu,
            } if tape.values[l].contains(&0.0) => return Ok(true),
            LayerSpec::TLayer { weight, .. } => {
                let z = weight.apply(&tape.values[l])?;
                if z.iter().any(|v| v.fract() == 0.0) {
                    return Ok(true);
                }
            }
            _ => {}
        }
    }
    Ok(false)
}

/// `Θ̂_{ij}(x, x') = Σ_θ ∂f_i(x)/∂θ ∂f_j(x')/∂θ`.
pub fn empirical_ntk(draw: &NetworkDraw, x: &[f64], x_prime: &[f64]) -> Result<NtkTensor> {
    let a = jacobian(draw, x)?;
    let b = jacobian(draw, x_prime)?;
    Ok(NtkTensor {
        values: a.matmul(&b.transpose())?,
        stderr: None,
        samples: 1,
        nondifferentiable: touches_kink(draw, x)? || touches_kink(draw, x_prime)?,
    })
}

/// Monte Carlo mean of [`empirical_ntk`] over draws of `spec`.
pub fn ensemble_ntk(
    spec: &Arc<ArchitectureSpec>,
    x: &[f64],
    x_prime: &[f64],
    mc: &McConfig,
) -> Result<NtkTensor> {
    if mc.samples < 2 {
        return Err(Error::InvalidArgument(
            "at least two samples are needed".into(),
        ));
    }
    let d = spec.output_dim;
    let blocks = run_blocks(mc, |_, count, rng| {
        let mut sampler = NetworkSampler::new(spec.clone(), rng)?;
        let mut draw = NetworkDraw::zeros(spec.clone());
        let mut acc = MomentAccumulator::<f64>::new(d * d);
        let mut kink = false;
        for _ in 0..count {
            sampler.sample_into(rng, &mut draw)?;
            let t = empirical_ntk(&draw, x, x_prime)?;
            kink |= t.nondifferentiable;
            acc.push(t.values.as_slice());
        }
        Ok((acc, kink))
    })?;
    let mut acc = MomentAccumulator::<f64>::new(d * d);
    let mut kink = false;
    for (b, k) in &blocks {
        acc.merge(b);
        kink |= k;
    }
    Ok(NtkTensor {
        values: Matrix::new(d, d, acc.mean().to_vec())?,
        stderr: Some(Matrix::new(d, d, acc.stderr())?),
        samples: acc.count(),
        nondifferentiable: kink,
    })
}

/// Relu network in NTK parameterization: `f = W₁ relu(W₀ x/√d + b₀)/√N`
/// with unit-variance weights and no output bias.
pub fn ntk_relu_net(
    input_dim: usize,
    width: usize,
    output_dim: usize,
    bias_std: f64,
) -> ArchitectureSpec {
    let unit = crate::ensembles::ParameterPrior::gaussian(1.0);
    ArchitectureSpec {
        input_dim,
        output_dim,
        layers: vec![
            LayerSpec::Linear {
                inputs: input_dim,
                outputs: width,
                weight: WeightSource::Prior(unit.clone()),
                bias: Some(crate::ensembles::ParameterPrior::gaussian(bias_std)),
                scale: 1.0 / (input_dim as f64).sqrt(),
                row_offsets: None,
            },
            LayerSpec::activation(crate::ensembles::Activation::Relu),
            LayerSpec::Linear {
                inputs: width,
                outputs: output_dim,
                weight: WeightSource::Prior(unit),
                bias: None,
                scale: 1.0 / (width as f64).sqrt(),
                row_offsets: None,
            },
        ],
        field: crate::ensembles::FieldType::Real,
    }
}

/// Copy of `spec` whose output layer has rows `0..k` shifted by `mu_w`.
pub fn breaking_spec(spec: &ArchitectureSpec, k: usize, mu_w: f64) -> Result<ArchitectureSpec> {
    let mut out = spec.clone();
    let d = spec.output_dim;
    if k > d {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds output dimension {d}"
        )));
    }
    let last = out.layers.len().checked_sub(1);
    match last.map(|l| &mut out.layers[l]) {
        Some(LayerSpec::Linear {
            bias: None,
            row_offsets,
            ..
        }) => {
            *row_offsets = Some((0..d).map(|i| if i < k { mu_w } else { 0.0 }).collect());
        }
        _ => {
            return Err(Error::InvalidArchitecture(
                "symmetry breaking needs a final linear layer without bias".into(),
            ))
        }
    }
    out.validate()?;
    Ok(out)
}

/// Draws a network whose output rows `0..k` have mean `mu_w`. All weights
/// are drawn first and the shift added afterwards, so equal seeds give the
/// same underlying draw for every `(k, mu_w)`.
pub fn breaking_init(
    spec: &ArchitectureSpec,
    k: usize,
    mu_w: f64,
    rng: &mut RngStream,
) -> Result<NetworkDraw> {
    let broken = Arc::new(breaking_spec(spec, k, mu_w)?);
    NetworkSampler::new(broken, rng)?.sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub network: NetworkDraw,
    pub metrics: Vec<EpochMetrics>,
}

impl TrainingRun {
    pub fn max_test_accuracy(&self) -> f64 {
        self.metrics
            .iter()
            .map(|m| m.test_accuracy)
            .fold(f64::NAN, f64::max)
    }
}

pub fn accuracy(draw: &NetworkDraw, data: &Dataset, encoding: Encoding) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Dataset("empty dataset".into()));
    }
    let mut bufs = crate::ensembles::ForwardBuffers::default();
    let mut correct = 0usize;
    for i in 0..data.len() {
        let y = draw.forward_into(data.features(i), &mut bufs)?;
        if encoding.decode(y) == data.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Plain minibatch SGD. Samples are reshuffled every epoch from the
/// config seed; test accuracy is recorded after each epoch.
pub fn sgd_train(
    mut net: NetworkDraw,
    train: &Dataset,
    test: &Dataset,
    config: &TrainingConfig,
) -> Result<TrainingRun> {
    config.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Dataset("empty dataset".into()));
    }
    let d = net.spec.output_dim;
    if train.dim() != net.spec.input_dim || train.classes() > d {
        return Err(Error::DimensionMismatch(format!(
            "data of dimension {} with {} classes for a {}→{d} network",
            train.dim(),
            train.classes(),
            net.spec.input_dim
        )));
    }
    let layout = ParamLayout::of(&net.spec)?;
    let mut grad = vec![0.0; layout.len()];
    let mut tape = Tape::default();
    let mut target = vec![0.0; d];
    let mut grad_out = vec![0.0; d];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = RngStream::new(config.seed, 1);
    let mut metrics = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut loss = 0.0;
            for &i in batch {
                forward_tape(&net, train.features(i), &mut tape)?;
                config.encoding.encode(train.label(i), d, &mut target);
                loss += config
                    .loss
                    .eval(tape.output(), &target, batch.len(), &mut grad_out);
                backward(&net, &layout, &mut tape, &grad_out, &mut grad)?;
            }
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            add_to_parameters(&mut net, &grad, -config.learning_rate)?;
            total += loss;
            batches += 1;
        }
        metrics.push(EpochMetrics {
            epoch: epoch + 1,
            train_loss: total / batches as f64,
            test_accuracy: accuracy(&net, test, config.encoding)?,
        });
    }
    Ok(TrainingRun {
        network: net,
        metrics,
    })
}

/// One training run of a breaking grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub k: usize,
    pub mu_w: f64,
    pub metrics: Vec<EpochMetrics>,
}

impl RunRecord {
    pub fn max_test_accuracy(&self) -> f64 {
        self.metrics
            .iter()
            .map(|m| m.test_accuracy)
            .fold(f64::NAN, f64::max)
    }
}

/// Relu classifier grid over `(k, μ_W, seed)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub width: usize,
    pub ks: Vec<usize>,
    pub mu_ws: Vec<f64>,
    pub seeds: Vec<u64>,
    pub training: TrainingConfig,
    pub workers: usize,
}

/// Trains every `(k, μ_W, seed)` combination. The initial draw depends only
/// on the seed (before the shift), so configurations share random numbers.
pub fn train_grid(train: &Dataset, test: &Dataset, grid: &GridConfig) -> Result<Vec<RunRecord>> {
    if grid.ks.is_empty() || grid.mu_ws.is_empty() || grid.seeds.is_empty() {
        return Err(Error::InvalidArgument("grid axes must be non-empty".into()));
    }
    let base = zoo::relu_classifier(train.dim(), grid.width, train.classes(), None);
    let mut cells = Vec::new();
    for &seed in &grid.seeds {
        for &k in &grid.ks {
            for &mu in &grid.mu_ws {
                cells.push((seed, k, mu));
            }
        }
    }
    map_indexed(cells.len(), grid.workers, |c| {
        let (seed, k, mu_w) = cells[c];
        let mut rng = RngStream::new(seed, 0);
        let net = breaking_init(&base, k, mu_w, &mut rng)?;
        let config = TrainingConfig {
            seed,
            ..grid.training
        };
        let run = sgd_train(net, train, test, &config)?;
        Ok(RunRecord {
            seed,
            k,
            mu_w,
            metrics: run.metrics,
        })
    })
}

/// Max-over-epochs test accuracy aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub k: usize,
    pub mu_w: f64,
    pub seeds: usize,
    pub mean_max_accuracy: f64,
    pub std_max_accuracy: f64,
    /// Half width of the 95% Student-t interval of the mean.
    pub ci95: f64,
}

pub fn summarize(records: &[RunRecord]) -> Vec<GridCell> {
    let mut keys: Vec<(usize, f64)> = Vec::new();
    for r in records {
        if !keys.iter().any(|&(k, m)| k == r.k && m == r.mu_w) {
            keys.push((r.k, r.mu_w));
        }
    }
    keys.into_iter()
        .map(|(k, mu_w)| {
            let accs: Vec<f64> = records
                .iter()
                .filter(|r| r.k == k && r.mu_w == mu_w)
                .map(RunRecord::max_test_accuracy)
                .collect();
            let (mean, std) = mean_std(&accs);
            let n = accs.len();
            GridCell {
                k,
                mu_w,
                seeds: n,
                mean_max_accuracy: mean,
                std_max_accuracy: std,
                ci95: if n > 1 {
                    t_critical_95(n - 1) * std / (n as f64).sqrt()
                } else {
                    f64::NAN
                },
            }
        })
        .collect()
}

/// Fully broken (`k = D`) initialization with one-cold labels across a
/// `μ_W` grid.
pub fn one_cold_experiment(
    train: &Dataset,
    test: &Dataset,
    mu_ws: &[f64],
    seeds: &[u64],
    width: usize,
    training: &TrainingConfig,
    workers: usize,
) -> Result<(Vec<RunRecord>, Vec<GridCell>)> {
    let grid = GridConfig {
        width,
        ks: vec![train.classes()],
        mu_ws: mu_ws.to_vec(),
        seeds: seeds.to_vec(),
        training: TrainingConfig {
            encoding: Encoding::OneCold,
            ..*training
        },
        workers,
    };
    let records = train_grid(train, test, &grid)?;
    let cells = summarize(&records);
    Ok((records, cells))
}

/// Mean relu activation `E[relu(W₀x + b₀)]` over hidden units, draws and
/// the given inputs, for the classifier initialization.
pub fn mean_hidden_activation(
    data: &Dataset,
    width: usize,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    let spec = Arc::new(zoo::relu_classifier(
        data.dim(),
        width,
        data.classes(),
        None,
    ));
    let mut rng = RngStream::new(seed, 0);
    let mut sampler = NetworkSampler::new(spec.clone(), &mut rng)?;
    let mut tape = Tape::default();
    let mut total = 0.0;
    let mut count = 0usize;
    for _ in 0..draws {
        let draw = sampler.sample(&mut rng)?;
        for i in 0..data.len() {
            forward_tape(&draw, data.features(i), &mut tape)?;
            total += tape.values[2].iter().sum::<f64>();
            count += tape.values[2].len();
        }
    }
    Ok(total / count as f64)
}

/// Result of training an ensemble with an invariant and a non-invariant
/// loss and measuring output-layer symmetry before and after.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub steps: usize,
    pub members: usize,
    /// Orders 1 and 2 at initialization.
    pub initial: Vec<DeviationReport>,
    pub invariant: Vec<DeviationReport>,
    pub mse: Vec<DeviationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub members: usize,
    pub experiments: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub elements: usize,
    pub seed: u64,
    pub workers: usize,
}

/// Trains every ensemble member by full-batch gradient descent on `data`,
/// once with the invariant loss and once with one-hot MSE, then compares
/// 1-pt and 2-pt deviation reports. Members are split into `experiments`
/// equal groups, each giving one correlator estimate.
pub fn density_flow_check(
    spec: &Arc<ArchitectureSpec>,
    data: &Dataset,
    inputs: &InputSet,
    config: &FlowConfig,
) -> Result<FlowReport> {
    if config.experiments < 2 || config.members < 2 * config.experiments {
        return Err(Error::InvalidArgument(
            "need at least two experiments of two members each".into(),
        ));
    }
    let mut rng = RngStream::new(config.seed, 0);
    let mut sampler = NetworkSampler::new(spec.clone(), &mut rng)?;
    let population: Vec<NetworkDraw> = (0..config.members)
        .map(|_| sampler.sample(&mut rng))
        .collect::<Result<_>>()?;
    let train = |loss: Loss| -> Result<Vec<NetworkDraw>> {
        let cfg = TrainingConfig {
            epochs: config.steps,
            batch_size: data.len(),
            learning_rate: config.learning_rate,
            loss,
            encoding: Encoding::OneHot,
            seed: config.seed,
        };
        map_indexed(population.len(), config.workers, |m| {
            full_batch_descent(population[m].clone(), data, &cfg)
        })
    };
    let group = GroupSpec::so(spec.output_dim, ActionSide::Output);
    let dev = DeviationConfig {
        elements: config.elements,
        threshold: 1.0,
        seed: derive_seed(config.seed, 7),
        workers: config.workers,
    };
    let report = |nets: &[NetworkDraw]| -> Result<Vec<DeviationReport>> {
        let per = nets.len() / config.experiments;
        let mut out = Vec::new();
        for slots in [vec![0usize], vec![0, 1.min(inputs.len() - 1)]] {
            let exps: Vec<Vec<CorrelatorTensor>> = (0..config.experiments)
                .map(|e| {
                    let chunk = &nets[e * per..(e + 1) * per];
                    Ok(vec![correlator_from_draws(
                        chunk,
                        inputs,
                        &slots_at(&slots),
                    )?])
                })
                .collect::<Result<_>>()?;
            out.push(deviation_report(&exps, &group, &dev)?);
        }
        Ok(out)
    };
    Ok(FlowReport {
        steps: config.steps,
        members: config.members,
        initial: report(&population)?,
        invariant: report(&train(Loss::SoInvariant)?)?,
        mse: report(&train(Loss::Mse)?)?,
    })
}

fn full_batch_descent(
    mut net: NetworkDraw,
    data: &Dataset,
    cfg: &TrainingConfig,
) -> Result<NetworkDraw> {
    let layout = ParamLayout::of(&net.spec)?;
    let d = net.spec.output_dim;
    let mut grad = vec![0.0; layout.len()];
    let mut tape = Tape::default();
    let mut target = vec![0.0; d];
    let mut grad_out = vec![0.0; d];
    for step in 0..cfg.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for i in 0..data.len() {
            forward_tape(&net, data.features(i), &mut tape)?;
            cfg.encoding.encode(data.label(i), d, &mut target);
            loss += cfg
                .loss
                .eval(tape.output(), &target, data.len(), &mut grad_out);
            backward(&net, &layout, &mut tape, &grad_out, &mut grad)?;
        }
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch: 0,
                step,
                loss,
            });
        }
        add_to_parameters(&mut net, &grad, -cfg.learning_rate)?;
    }
    Ok(net)
}
