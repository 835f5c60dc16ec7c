//! Network architectures, parameter priors, sampling and forward passes.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::RngStream;

/// Distribution over the entries of one parameter tensor.
///
/// Standard deviations are the full standard deviation of each entry; no
/// width scaling is applied implicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParameterPrior {
    Gaussian {
        mean: f64,
        std: f64,
    },
    /// Uniform on the unit-circumference circle `[0, 1)`.
    UniformCircle,
    /// Density `exp(-|θ|²/2σ² - λ|θ|⁴)` over the whole tensor.
    QuarticInvariant {
        std: f64,
        coupling: f64,
    },
}

impl ParameterPrior {
    pub fn gaussian(std: f64) -> Self {
        Self::Gaussian { mean: 0.0, std }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Gaussian { mean, std } => {
                if !(std > 0.0 && std.is_finite() && mean.is_finite()) {
                    return Err(Error::InvalidPrior(format!(
                        "gaussian needs finite mean and std > 0, got mean {mean}, std {std}"
                    )));
                }
            }
            Self::UniformCircle => {}
            Self::QuarticInvariant { std, coupling } => {
                if !(std > 0.0 && std.is_finite()) {
                    return Err(Error::InvalidPrior(format!(
                        "quartic std must be > 0, got {std}"
                    )));
                }
                if !(coupling >= 0.0 && coupling.is_finite()) {
                    return Err(Error::InvalidPrior(format!(
                        "quartic coupling must be >= 0, got {coupling}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_quartic(&self) -> bool {
        matches!(self, Self::QuarticInvariant { .. })
    }

    /// Fills `out` with independent draws. Quartic priors need a chain; see
    /// [`MetropolisChain`].
    pub fn sample_iid(&self, rng: &mut RngStream, out: &mut [f64]) -> Result<()> {
        match *self {
            Self::Gaussian { mean, std } => {
                for v in out {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = mean + std * z;
                }
            }
            Self::UniformCircle => {
                for v in out {
                    *v = rng.random::<f64>();
                }
            }
            Self::QuarticInvariant { .. } => {
                return Err(Error::Unsupported(
                    "quartic priors are sampled by a Metropolis chain".into(),
                ))
            }
        }
        Ok(())
    }
}

/// Elementwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// `exp(z) / sqrt(exp(2(σ_b² + σ_W²/d)))`.
    ExpNormalized {
        bias_std: f64,
        weight_std: f64,
        input_dim: usize,
    },
}

impl Activation {
    fn log_norm(&self) -> f64 {
        match *self {
            Self::Relu => 0.0,
            Self::ExpNormalized {
                bias_std,
                weight_std,
                input_dim,
            } => bias_std * bias_std + weight_std * weight_std / input_dim as f64,
        }
    }

    pub fn apply_in_place(&self, z: &mut [f64]) {
        match self {
            Self::Relu => {
                for v in z {
                    *v = v.max(0.0);
                }
            }
            Self::ExpNormalized { .. } => {
                let c = self.log_norm();
                for v in z {
                    *v = (*v - c).exp();
                }
            }
        }
    }

    pub fn apply(&self, z: f64) -> f64 {
        let mut v = [z];
        self.apply_in_place(&mut v);
        v[0]
    }

    /// Derivative at preactivation `z`; relu has derivative 0 at exactly 0.
    pub fn derivative(&self, z: f64) -> f64 {
        match self {
            Self::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::ExpNormalized { .. } => (z - self.log_norm()).exp(),
        }
    }

    fn validate(&self) -> Result<()> {
        if let Self::ExpNormalized {
            bias_std,
            weight_std,
            input_dim,
        } = *self
        {
            if input_dim == 0 || !bias_std.is_finite() || !weight_std.is_finite() {
                return Err(Error::InvalidArchitecture(
                    "exp-normalized activation needs finite σ_b, σ_W and d ≥ 1".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Where a linear layer's weight comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    Prior(ParameterPrior),
    /// Deterministic weight, identical in every draw and never trained.
    Fixed(Matrix<f64>),
}

fn unit_scale() -> f64 {
    1.0
}

fn is_unit(x: &f64) -> bool {
    *x == 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// `y = scale · W x + b`, with optional per-row shifts added to `W`
    /// after sampling.
    Linear {
        inputs: usize,
        outputs: usize,
        weight: WeightSource,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<ParameterPrior>,
        #[serde(default = "unit_scale", skip_serializing_if = "is_unit")]
        scale: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        row_offsets: Option<Vec<f64>>,
    },
    /// `y = ((W x mod 1) + b) mod 1` with fixed `W` and circle-valued `b`.
    TLayer {
        inputs: usize,
        outputs: usize,
        weight: Matrix<f64>,
        bias: ParameterPrior,
    },
    Activation {
        function: Activation,
    },
    /// Complex output layer acting on a real hidden vector; real and
    /// imaginary parts of every entry are independent `N(0, std²)`.
    ComplexLinear {
        inputs: usize,
        outputs: usize,
        weight_std: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias_std: Option<f64>,
    },
}

impl LayerSpec {
    pub fn linear(inputs: usize, outputs: usize, weight_std: f64, bias_std: Option<f64>) -> Self {
        Self::Linear {
            inputs,
            outputs,
            weight: WeightSource::Prior(ParameterPrior::gaussian(weight_std)),
            bias: bias_std.map(ParameterPrior::gaussian),
            scale: 1.0,
            row_offsets: None,
        }
    }

    pub fn activation(function: Activation) -> Self {
        Self::Activation { function }
    }

    fn dims(&self, current: usize) -> (Option<usize>, usize) {
        match *self {
            Self::Linear {
                inputs, outputs, ..
            }
            | Self::TLayer {
                inputs, outputs, ..
            }
            | Self::ComplexLinear {
                inputs, outputs, ..
            } => (Some(inputs), outputs),
            Self::Activation { .. } => (None, current),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldType {
    #[default]
    Real,
    Complex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub field: FieldType,
}

impl ArchitectureSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArchitecture(msg));
        if self.input_dim == 0 || self.output_dim == 0 {
            return bad("input and output dimensions must be positive".into());
        }
        let mut current = self.input_dim;
        for (i, layer) in self.layers.iter().enumerate() {
            let (inputs, outputs) = layer.dims(current);
            if let Some(inputs) = inputs {
                if inputs != current {
                    return bad(format!(
                        "layer {i} expects {inputs} inputs, receives {current}"
                    ));
                }
            }
            if outputs == 0 {
                return bad(format!("layer {i} has zero outputs"));
            }
            match layer {
                LayerSpec::Linear {
                    weight,
                    bias,
                    scale,
                    row_offsets,
                    ..
                } => {
                    match weight {
                        WeightSource::Prior(p) => p.validate()?,
                        WeightSource::Fixed(m) => {
                            if m.rows() != outputs || m.cols() != current {
                                return bad(format!(
                                    "layer {i} fixed weight is {}x{}, expected {outputs}x{current}",
                                    m.rows(),
                                    m.cols()
                                ));
                            }
                        }
                    }
                    if let Some(b) = bias {
                        b.validate()?;
                    }
                    if !scale.is_finite() {
                        return bad(format!("layer {i} scale must be finite"));
                    }
                    if let Some(off) = row_offsets {
                        if off.len() != outputs {
                            return bad(format!(
                                "layer {i} has {} row offsets for {outputs} rows",
                                off.len()
                            ));
                        }
                    }
                }
                LayerSpec::TLayer { weight, bias, .. } => {
                    if *bias != ParameterPrior::UniformCircle {
                        return bad(format!("t-layer {i} bias prior must be uniform_circle"));
                    }
                    if weight.rows() != outputs || weight.cols() != current {
                        return bad(format!(
                            "t-layer {i} weight is {}x{}, expected {outputs}x{current}",
                            weight.rows(),
                            weight.cols()
                        ));
                    }
                }
                LayerSpec::Activation { function } => function.validate()?,
                LayerSpec::ComplexLinear {
                    weight_std,
                    bias_std,
                    ..
                } => {
                    if self.field != FieldType::Complex {
                        return bad(format!("complex layer {i} in a real-valued architecture"));
                    }
                    if i + 1 != self.layers.len() {
                        return bad(format!("complex layer {i} must be the final layer"));
                    }
                    if !(*weight_std > 0.0) || bias_std.is_some_and(|s| !(s > 0.0)) {
                        return bad(format!("complex layer {i} needs positive std"));
                    }
                }
            }
            current = outputs;
        }
        if self.field == FieldType::Complex
            && !matches!(self.layers.last(), Some(LayerSpec::ComplexLinear { .. }))
        {
            return bad("complex architectures end in a complex_linear layer".into());
        }
        if current != self.output_dim {
            return bad(format!(
                "final layer produces {current} outputs, declared output_dim is {}",
                self.output_dim
            ));
        }
        Ok(())
    }

    /// Index of the last `Linear` layer, the "output layer" for symmetry
    /// breaking and invariant training.
    pub fn output_layer(&self) -> Option<usize> {
        self.layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Linear { .. }))
    }
}

/// Sampled parameters of one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Linear {
        weight: Matrix<f64>,
        bias: Option<Vec<f64>>,
    },
    TLayer {
        bias: Vec<f64>,
    },
    Activation,
    ComplexLinear {
        weight: Matrix<Complex64>,
        bias: Option<Vec<Complex64>>,
    },
}

/// One concrete network drawn from an architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkDraw {
    pub spec: Arc<ArchitectureSpec>,
    pub layers: Vec<LayerParams>,
}

/// Reusable scratch space for forward passes.
#[derive(Debug, Default, Clone)]
pub struct ForwardBuffers {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl NetworkDraw {
    /// All-zero parameters with the right shapes (fixed weights filled in).
    pub fn zeros(spec: Arc<ArchitectureSpec>) -> Self {
        let layers = spec
            .layers
            .iter()
            .map(|l| match l {
                LayerSpec::Linear {
                    inputs,
                    outputs,
                    weight,
                    bias,
                    ..
                } => LayerParams::Linear {
                    weight: match weight {
                        WeightSource::Fixed(m) => m.clone(),
                        WeightSource::Prior(_) => Matrix::zeros(*outputs, *inputs),
                    },
                    bias: bias.as_ref().map(|_| vec![0.0; *outputs]),
                },
                LayerSpec::TLayer { outputs, .. } => LayerParams::TLayer {
                    bias: vec![0.0; *outputs],
                },
                LayerSpec::Activation { .. } => LayerParams::Activation,
                LayerSpec::ComplexLinear {
                    inputs,
                    outputs,
                    bias_std,
                    ..
                } => LayerParams::ComplexLinear {
                    weight: Matrix::zeros(*outputs, *inputs),
                    bias: bias_std.map(|_| vec![Complex64::new(0.0, 0.0); *outputs]),
                },
            })
            .collect();
        Self { spec, layers }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut bufs = ForwardBuffers::default();
        Ok(self.forward_into(x, &mut bufs)?.to_vec())
    }

    /// Real forward pass; the result borrows from `bufs`.
    pub fn forward_into<'a>(&self, x: &[f64], bufs: &'a mut ForwardBuffers) -> Result<&'a [f64]> {
        if self.spec.field != FieldType::Real {
            return Err(Error::Unsupported(
                "real forward pass on a complex architecture".into(),
            ));
        }
        let n = self.hidden_into(x, self.layers.len(), bufs)?;
        Ok(&bufs.a[..n])
    }

    /// Complex forward pass: real layers, then the complex output layer.
    pub fn forward_complex(&self, x: &[f64]) -> Result<Vec<Complex64>> {
        let mut bufs = ForwardBuffers::default();
        let mut out = vec![Complex64::new(0.0, 0.0); self.spec.output_dim];
        self.forward_complex_into(x, &mut bufs, &mut out)?;
        Ok(out)
    }

    pub fn forward_complex_into(
        &self,
        x: &[f64],
        bufs: &mut ForwardBuffers,
        out: &mut [Complex64],
    ) -> Result<()> {
        if self.spec.field != FieldType::Complex {
            return Err(Error::Unsupported(
                "complex forward pass on a real architecture".into(),
            ));
        }
        let last = self.layers.len() - 1;
        let n = self.hidden_into(x, last, bufs)?;
        let g = &bufs.a[..n];
        match &self.layers[last] {
            LayerParams::ComplexLinear { weight, bias } => {
                for (r, o) in out.iter_mut().enumerate() {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (w, &gv) in weight.row(r).iter().zip(g) {
                        acc += w * gv;
                    }
                    if let Some(b) = bias {
                        acc += b[r];
                    }
                    *o = acc;
                }
                Ok(())
            }
            _ => Err(Error::Unsupported("final layer is not complex".into())),
        }
    }

    /// Runs layers `0..upto` on real values, leaving the result in `bufs.a`.
    fn hidden_into(&self, x: &[f64], upto: usize, bufs: &mut ForwardBuffers) -> Result<usize> {
        if x.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "input of length {} for input_dim {}",
                x.len(),
                self.spec.input_dim
            )));
        }
        bufs.a.clear();
        bufs.a.extend_from_slice(x);
        for (spec, params) in self.spec.layers[..upto].iter().zip(&self.layers) {
            match (spec, params) {
                (LayerSpec::Linear { scale, .. }, LayerParams::Linear { weight, bias }) => {
                    affine(weight, *scale, bias.as_deref(), &bufs.a, &mut bufs.b);
                    std::mem::swap(&mut bufs.a, &mut bufs.b);
                }
                (LayerSpec::TLayer { weight, .. }, LayerParams::TLayer { bias }) => {
                    affine(weight, 1.0, None, &bufs.a, &mut bufs.b);
                    for (v, &b) in bufs.b.iter_mut().zip(bias) {
                        *v = wrap_unit(wrap_unit(*v) + b);
                    }
                    std::mem::swap(&mut bufs.a, &mut bufs.b);
                }
                (LayerSpec::Activation { function }, LayerParams::Activation) => {
                    function.apply_in_place(&mut bufs.a);
                }
                _ => {
                    return Err(Error::Unsupported(
                        "layer parameters do not match the architecture".into(),
                    ))
                }
            }
        }
        Ok(bufs.a.len())
    }

    /// Conjugates every complex parameter.
    pub fn conjugate(&self) -> Self {
        let mut out = self.clone();
        for l in &mut out.layers {
            if let LayerParams::ComplexLinear { weight, bias } = l {
                *weight = weight.conj();
                if let Some(b) = bias {
                    for v in b.iter_mut() {
                        *v = v.conj();
                    }
                }
            }
        }
        out
    }
}

fn affine(w: &Matrix<f64>, scale: f64, bias: Option<&[f64]>, x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    for r in 0..w.rows() {
        let dot: f64 = w.row(r).iter().zip(x).map(|(a, b)| a * b).sum();
        out.push(scale * dot + bias.map_or(0.0, |b| b[r]));
    }
}

/// Reduces onto `[0, 1)`.
#[inline]
pub fn wrap_unit(v: f64) -> f64 {
    let r = v - v.floor();
    // v slightly below an integer can round up to exactly 1
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Metropolis sampler settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetropolisConfig {
    pub burn_in: usize,
    pub thinning: usize,
    pub target_acceptance: f64,
}

impl Default for MetropolisConfig {
    fn default() -> Self {
        Self {
            burn_in: 10_000,
            thinning: 10,
            target_acceptance: 0.4,
        }
    }
}

/// Random-walk Metropolis chain for `exp(-|θ|²/2σ² - λ|θ|⁴)`.
///
/// The isotropic Gaussian step is adapted during burn-in toward the target
/// acceptance rate and frozen afterwards.
#[derive(Debug, Clone)]
pub struct MetropolisChain {
    std: f64,
    coupling: f64,
    state: Vec<f64>,
    proposal: Vec<f64>,
    log_density: f64,
    step: f64,
    thinning: usize,
    accepted: u64,
    proposed: u64,
}

impl MetropolisChain {
    pub fn new(
        std: f64,
        coupling: f64,
        len: usize,
        config: &MetropolisConfig,
        rng: &mut RngStream,
    ) -> Result<Self> {
        ParameterPrior::QuarticInvariant { std, coupling }.validate()?;
        if len == 0 {
            return Err(Error::InvalidArgument("empty parameter tensor".into()));
        }
        if config.thinning == 0 {
            return Err(Error::InvalidArgument("thinning must be at least 1".into()));
        }
        let mut state = vec![0.0; len];
        ParameterPrior::gaussian(std).sample_iid(rng, &mut state)?;
        let mut chain = Self {
            std,
            coupling,
            log_density: 0.0,
            state,
            proposal: vec![0.0; len],
            step: 2.4 * std / (len as f64).sqrt(),
            thinning: config.thinning,
            accepted: 0,
            proposed: 0,
        };
        chain.log_density = chain.log_density_of_norm2(norm2(&chain.state));
        const WINDOW: usize = 100;
        let mut done = 0;
        while done < config.burn_in {
            let n = WINDOW.min(config.burn_in - done);
            let before = chain.accepted;
            for _ in 0..n {
                chain.step_once(rng);
            }
            let rate = (chain.accepted - before) as f64 / n as f64;
            chain.step *= (2.0 * (rate - config.target_acceptance)).exp();
            done += n;
        }
        chain.accepted = 0;
        chain.proposed = 0;
        Ok(chain)
    }

    fn log_density_of_norm2(&self, s: f64) -> f64 {
        -s / (2.0 * self.std * self.std) - self.coupling * s * s
    }

    fn step_once(&mut self, rng: &mut RngStream) {
        for (p, &s) in self.proposal.iter_mut().zip(&self.state) {
            let z: f64 = rng.sample(StandardNormal);
            *p = s + self.step * z;
        }
        let lp = self.log_density_of_norm2(norm2(&self.proposal));
        let u: f64 = rng.random();
        self.proposed += 1;
        if u.ln() < lp - self.log_density {
            std::mem::swap(&mut self.state, &mut self.proposal);
            self.log_density = lp;
            self.accepted += 1;
        }
    }

    /// Advances by the thinning interval and returns the new state.
    pub fn next_draw(&mut self, rng: &mut RngStream) -> &[f64] {
        for _ in 0..self.thinning {
            self.step_once(rng);
        }
        &self.state
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn step_size(&self) -> f64 {
        self.step
    }

    /// Acceptance rate since burn-in ended.
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetropolisRun {
    pub draws: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
    pub step_size: f64,
}

/// Draws `count` thinned tensors of length `len` from a quartic prior.
pub fn metropolis_sample(
    prior: &ParameterPrior,
    len: usize,
    count: usize,
    config: &MetropolisConfig,
    rng: &mut RngStream,
) -> Result<MetropolisRun> {
    let ParameterPrior::QuarticInvariant { std, coupling } = *prior else {
        return Err(Error::InvalidPrior(
            "metropolis sampling needs a quartic prior".into(),
        ));
    };
    let mut chain = MetropolisChain::new(std, coupling, len, config, rng)?;
    let draws = (0..count).map(|_| chain.next_draw(rng).to_vec()).collect();
    Ok(MetropolisRun {
        draws,
        acceptance_rate: chain.acceptance_rate(),
        step_size: chain.step_size(),
    })
}

/// Draws networks from one architecture, reusing allocations and keeping a
/// persistent Metropolis chain for every quartic tensor.
#[derive(Debug, Clone)]
pub struct NetworkSampler {
    spec: Arc<ArchitectureSpec>,
    /// One slot per layer: (weight chain, bias chain).
    chains: Vec<(Option<MetropolisChain>, Option<MetropolisChain>)>,
}

impl NetworkSampler {
    pub fn new(spec: Arc<ArchitectureSpec>, rng: &mut RngStream) -> Result<Self> {
        Self::with_config(spec, &MetropolisConfig::default(), rng)
    }

    pub fn with_config(
        spec: Arc<ArchitectureSpec>,
        config: &MetropolisConfig,
        rng: &mut RngStream,
    ) -> Result<Self> {
        spec.validate()?;
        let mut chains = Vec::with_capacity(spec.layers.len());
        for layer in &spec.layers {
            let mut make = |prior: Option<&ParameterPrior>, len: usize| match prior {
                Some(&ParameterPrior::QuarticInvariant { std, coupling }) => {
                    MetropolisChain::new(std, coupling, len, config, rng).map(Some)
                }
                _ => Ok(None),
            };
            let pair = match layer {
                LayerSpec::Linear {
                    inputs,
                    outputs,
                    weight,
                    bias,
                    ..
                } => {
                    let wp = match weight {
                        WeightSource::Prior(p) => Some(p),
                        WeightSource::Fixed(_) => None,
                    };
                    (make(wp, inputs * outputs)?, make(bias.as_ref(), *outputs)?)
                }
                _ => (None, None),
            };
            chains.push(pair);
        }
        Ok(Self { spec, chains })
    }

    pub fn spec(&self) -> &Arc<ArchitectureSpec> {
        &self.spec
    }

    pub fn sample(&mut self, rng: &mut RngStream) -> Result<NetworkDraw> {
        let mut draw = NetworkDraw::zeros(self.spec.clone());
        self.sample_into(rng, &mut draw)?;
        Ok(draw)
    }

    /// Overwrites `draw` (which must come from the same architecture).
    pub fn sample_into(&mut self, rng: &mut RngStream, draw: &mut NetworkDraw) -> Result<()> {
        for ((layer, params), (wchain, bchain)) in self
            .spec
            .layers
            .iter()
            .zip(draw.layers.iter_mut())
            .zip(self.chains.iter_mut())
        {
            match (layer, params) {
                (
                    LayerSpec::Linear {
                        weight: source,
                        bias: bias_prior,
                        row_offsets,
                        ..
                    },
                    LayerParams::Linear { weight, bias },
                ) => {
                    if let WeightSource::Prior(prior) = source {
                        fill(prior, wchain.as_mut(), rng, weight.as_mut_slice())?;
                        if let Some(off) = row_offsets {
                            for (r, &o) in off.iter().enumerate() {
                                for v in weight.row_mut(r) {
                                    *v += o;
                                }
                            }
                        }
                    }
                    if let (Some(prior), Some(b)) = (bias_prior, bias.as_mut()) {
                        fill(prior, bchain.as_mut(), rng, b)?;
                    }
                }
                (LayerSpec::TLayer { bias: prior, .. }, LayerParams::TLayer { bias }) => {
                    prior.sample_iid(rng, bias)?;
                }
                (LayerSpec::Activation { .. }, LayerParams::Activation) => {}
                (
                    LayerSpec::ComplexLinear {
                        weight_std,
                        bias_std,
                        ..
                    },
                    LayerParams::ComplexLinear { weight, bias },
                ) => {
                    fill_complex(*weight_std, rng, weight.as_mut_slice());
                    if let (Some(s), Some(b)) = (bias_std, bias.as_mut()) {
                        fill_complex(*s, rng, b);
                    }
                }
                _ => {
                    return Err(Error::Unsupported(
                        "draw does not match the sampler's architecture".into(),
                    ))
                }
            }
        }
        Ok(())
    }
}

fn fill(
    prior: &ParameterPrior,
    chain: Option<&mut MetropolisChain>,
    rng: &mut RngStream,
    out: &mut [f64],
) -> Result<()> {
    match chain {
        Some(c) => {
            out.copy_from_slice(c.next_draw(rng));
            Ok(())
        }
        None => prior.sample_iid(rng, out),
    }
}

fn fill_complex(std: f64, rng: &mut RngStream, out: &mut [Complex64]) {
    for v in out {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *v = Complex64::new(std * re, std * im);
    }
}

/// Draws one network. Quartic tensors get a fresh, burned-in chain.
pub fn sample_network(spec: &Arc<ArchitectureSpec>, rng: &mut RngStream) -> Result<NetworkDraw> {
    NetworkSampler::new(spec.clone(), rng)?.sample(rng)
}

/// Ready-made architectures. Standard deviations are given explicitly:
/// hidden weights `σ_W/√d`, output weights `σ_W/√N`.
pub mod zoo {
    use super::*;

    /// Exponential "Gauss-net": one hidden layer with the normalized
    /// exponential activation, whose kernel depends only on `x - x'`.
    pub fn gauss_net(
        input_dim: usize,
        width: usize,
        output_dim: usize,
        weight_std: f64,
        bias_std: f64,
    ) -> ArchitectureSpec {
        ArchitectureSpec {
            input_dim,
            output_dim,
            layers: vec![
                LayerSpec::linear(
                    input_dim,
                    width,
                    weight_std / (input_dim as f64).sqrt(),
                    Some(bias_std),
                ),
                LayerSpec::activation(Activation::ExpNormalized {
                    bias_std,
                    weight_std,
                    input_dim,
                }),
                LayerSpec::linear(
                    width,
                    output_dim,
                    weight_std / (width as f64).sqrt(),
                    Some(bias_std),
                ),
            ],
            field: FieldType::Real,
        }
    }

    /// One hidden relu layer; `output_bias_std = None` gives a bias-free
    /// output layer.
    pub fn relu_net(
        input_dim: usize,
        width: usize,
        output_dim: usize,
        weight_std: f64,
        bias_std: f64,
        output_bias_std: Option<f64>,
    ) -> ArchitectureSpec {
        ArchitectureSpec {
            input_dim,
            output_dim,
            layers: vec![
                LayerSpec::linear(
                    input_dim,
                    width,
                    weight_std / (input_dim as f64).sqrt(),
                    Some(bias_std),
                ),
                LayerSpec::activation(Activation::Relu),
                LayerSpec::linear(
                    width,
                    output_dim,
                    weight_std / (width as f64).sqrt(),
                    output_bias_std,
                ),
            ],
            field: FieldType::Real,
        }
    }

    /// Single linear map `f = W x` without bias.
    pub fn linear_net(input_dim: usize, output_dim: usize, weight_std: f64) -> ArchitectureSpec {
        ArchitectureSpec {
            input_dim,
            output_dim,
            layers: vec![LayerSpec::linear(input_dim, output_dim, weight_std, None)],
            field: FieldType::Real,
        }
    }

    /// T-layer with fixed weight, then a Gaussian linear readout.
    pub fn t_layer_net(
        t_weight: Matrix<f64>,
        output_dim: usize,
        weight_std: f64,
        output_bias_std: Option<f64>,
    ) -> ArchitectureSpec {
        let (width, input_dim) = (t_weight.rows(), t_weight.cols());
        ArchitectureSpec {
            input_dim,
            output_dim,
            layers: vec![
                LayerSpec::TLayer {
                    inputs: input_dim,
                    outputs: width,
                    weight: t_weight,
                    bias: ParameterPrior::UniformCircle,
                },
                LayerSpec::linear(
                    width,
                    output_dim,
                    weight_std / (width as f64).sqrt(),
                    output_bias_std,
                ),
            ],
            field: FieldType::Real,
        }
    }

    /// Relu hidden layer followed by a complex output layer.
    pub fn complex_relu_net(
        input_dim: usize,
        width: usize,
        output_dim: usize,
        weight_std: f64,
        bias_std: f64,
    ) -> ArchitectureSpec {
        ArchitectureSpec {
            input_dim,
            output_dim,
            layers: vec![
                LayerSpec::linear(
                    input_dim,
                    width,
                    weight_std / (input_dim as f64).sqrt(),
                    Some(bias_std),
                ),
                LayerSpec::activation(Activation::Relu),
                LayerSpec::ComplexLinear {
                    inputs: width,
                    outputs: output_dim,
                    weight_std: weight_std / (width as f64).sqrt(),
                    bias_std: None,
                },
            ],
            field: FieldType::Complex,
        }
    }

    /// Fixed hidden map `g = H x` followed by an output weight with a
    /// quartic prior and no bias.
    pub fn quartic_readout_net(
        hidden: Matrix<f64>,
        output_dim: usize,
        std: f64,
        coupling: f64,
    ) -> ArchitectureSpec {
        let (width, input_dim) = (hidden.rows(), hidden.cols());
        ArchitectureSpec {
            input_dim,
            output_dim,
            layers: vec![
                LayerSpec::Linear {
                    inputs: input_dim,
                    outputs: width,
                    weight: WeightSource::Fixed(hidden),
                    bias: None,
                    scale: 1.0,
                    row_offsets: None,
                },
                LayerSpec::Linear {
                    inputs: width,
                    outputs: output_dim,
                    weight: WeightSource::Prior(ParameterPrior::QuarticInvariant { std, coupling }),
                    bias: None,
                    scale: 1.0,
                    row_offsets: None,
                },
            ],
            field: FieldType::Real,
        }
    }

    /// Relu classifier with a bias-free linear readout, as used for
    /// training: hidden `W ~ N(0, 1/√d)`, `b ~ N(0, 1/√d)`, readout
    /// `N(0, 1/√N)` plus `row_offsets`.
    pub fn relu_classifier(
        input_dim: usize,
        width: usize,
        output_dim: usize,
        row_offsets: Option<Vec<f64>>,
    ) -> ArchitectureSpec {
        let hidden_std = 1.0 / (input_dim as f64).sqrt();
        ArchitectureSpec {
            input_dim,
            output_dim,
            layers: vec![
                LayerSpec::linear(input_dim, width, hidden_std, Some(hidden_std)),
                LayerSpec::activation(Activation::Relu),
                LayerSpec::Linear {
                    inputs: width,
                    outputs: output_dim,
                    weight: WeightSource::Prior(ParameterPrior::gaussian(
                        1.0 / (width as f64).sqrt(),
                    )),
                    bias: None,
                    scale: 1.0,
                    row_offsets,
                },
            ],
            field: FieldType::Real,
        }
    }
}
