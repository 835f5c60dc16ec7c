//! Experiment configuration files.
//!
//! A config is a JSON object `{subcommand, seed, samples, params}` where
//! `params` holds the subcommand-specific fields below. Missing fields take
//! their defaults; unknown fields are rejected.

use std::path::PathBuf;

use anyhow::{bail, ensure, Context, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use nnsym::ensembles::{zoo, ArchitectureSpec};
use nnsym::linalg::Matrix;
use nnsym::rng::{derive_seed, RngStream};
use nnsym::symmetry::GroupSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    CheckSymmetry,
    GpLimit,
    TranslateCheck,
    SuCheck,
    Ward,
    Ntk,
    TrainGrid,
    TrainOnecold,
    FlowCheck,
    Perturbative,
}

impl Subcommand {
    pub fn name(&self) -> &'static str {
        match self {
            Self::CheckSymmetry => "check-symmetry",
            Self::GpLimit => "gp-limit",
            Self::TranslateCheck => "translate-check",
            Self::SuCheck => "su-check",
            Self::Ward => "ward",
            Self::Ntk => "ntk",
            Self::TrainGrid => "train-grid",
            Self::TrainOnecold => "train-onecold",
            Self::FlowCheck => "flow-check",
            Self::Perturbative => "perturbative",
        }
    }
}

/// Config as read from disk; everything is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub subcommand: Option<Subcommand>,
    pub seed: Option<u64>,
    pub samples: Option<u64>,
    #[serde(default)]
    pub params: Option<Value>,
}

/// Fully resolved config: the unit that is hashed and replayed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub subcommand: Subcommand,
    pub seed: u64,
    pub samples: u64,
    pub params: Params,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Params {
    CheckSymmetry(CheckSymmetry),
    GpLimit(GpLimit),
    TranslateCheck(TranslateCheck),
    SuCheck(SuCheck),
    Ward(Ward),
    Ntk(Ntk),
    Train(Train),
    FlowCheck(FlowCheck),
    Perturbative(Perturbative),
}

/// Overrides given on the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub samples: Option<u64>,
}

fn default_samples(sub: Subcommand) -> u64 {
    match sub {
        Subcommand::CheckSymmetry => 100_000,
        Subcommand::GpLimit => 1_000_000,
        Subcommand::TranslateCheck | Subcommand::SuCheck => 200_000,
        Subcommand::Ward => 200_000,
        Subcommand::Ntk => 10_000,
        Subcommand::Perturbative => 0,
        Subcommand::TrainGrid | Subcommand::TrainOnecold | Subcommand::FlowCheck => 0,
    }
}

fn field<T: for<'de> Deserialize<'de>>(value: Value) -> Result<T> {
    serde_json::from_value(value).context("field `params`")
}

/// Resolves a config file against the subcommand and flag overrides and
/// validates it.
pub fn resolve(sub: Subcommand, file: ConfigFile, over: &Overrides) -> Result<RunConfig> {
    if let Some(s) = file.subcommand {
        ensure!(
            s == sub,
            "field `subcommand`: config is for `{}`, not `{}`",
            s.name(),
            sub.name()
        );
    }
    let params = file.params.unwrap_or(Value::Object(Default::default()));
    let params = match sub {
        Subcommand::CheckSymmetry => Params::CheckSymmetry(field(params)?),
        Subcommand::GpLimit => Params::GpLimit(field(params)?),
        Subcommand::TranslateCheck => Params::TranslateCheck(field(params)?),
        Subcommand::SuCheck => Params::SuCheck(field(params)?),
        Subcommand::Ward => Params::Ward(field(params)?),
        Subcommand::Ntk => Params::Ntk(field(params)?),
        Subcommand::TrainGrid | Subcommand::TrainOnecold => Params::Train(field(params)?),
        Subcommand::FlowCheck => Params::FlowCheck(field(params)?),
        Subcommand::Perturbative => Params::Perturbative(field(params)?),
    };
    let config = RunConfig {
        subcommand: sub,
        seed: over.seed.or(file.seed).unwrap_or(0),
        samples: over
            .samples
            .or(file.samples)
            .unwrap_or(default_samples(sub)),
        params,
    };
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    /// Parses a resolved config as stored in a manifest.
    pub fn from_value(value: Value) -> Result<Self> {
        let file: ConfigFile = serde_json::from_value(value).context("manifest config")?;
        let sub = file
            .subcommand
            .context("field `subcommand`: missing from manifest config")?;
        resolve(sub, file, &Overrides::default())
    }
}

pub fn read_config(path: &std::path::Path) -> Result<ConfigFile> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn nonempty<T>(name: &str, v: &[T]) -> Result<()> {
    ensure!(!v.is_empty(), "field `{name}`: must be non-empty");
    Ok(())
}

fn positive(name: &str, v: usize) -> Result<()> {
    ensure!(v > 0, "field `{name}`: must be ≥ 1");
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let sampled = !matches!(
            self.subcommand,
            Subcommand::TrainGrid
                | Subcommand::TrainOnecold
                | Subcommand::FlowCheck
                | Subcommand::Perturbative
        );
        if sampled {
            ensure!(self.samples >= 2, "field `samples`: must be ≥ 2");
        }
        match &self.params {
            Params::CheckSymmetry(p) => p.validate(),
            Params::GpLimit(p) => p.validate(),
            Params::TranslateCheck(p) => p.validate(),
            Params::SuCheck(p) => p.validate(),
            Params::Ward(p) => p.validate(),
            Params::Ntk(p) => p.validate(),
            Params::Train(p) => p.validate(self.subcommand),
            Params::FlowCheck(p) => p.validate(),
            Params::Perturbative(p) => p.validate(),
        }
    }
}

/// One-hidden-layer architecture families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    Gauss {
        input_dim: usize,
        width: usize,
        output_dim: usize,
        #[serde(default = "one")]
        weight_std: f64,
        #[serde(default = "one")]
        bias_std: f64,
    },
    Relu {
        input_dim: usize,
        width: usize,
        output_dim: usize,
        #[serde(default = "one")]
        weight_std: f64,
        #[serde(default = "one")]
        bias_std: f64,
        #[serde(default)]
        output_bias_std: Option<f64>,
    },
    /// T-layer with a fixed standard-normal weight drawn from the run seed.
    TLayer {
        input_dim: usize,
        width: usize,
        output_dim: usize,
        #[serde(default = "one")]
        weight_std: f64,
        #[serde(default)]
        output_bias_std: Option<f64>,
    },
    /// Gaussian process with kernel `1 + x·x'` whose correlators are
    /// computed exactly from the Wick expansion.
    ExactGp {
        input_dim: usize,
        output_dim: usize,
    },
    Explicit {
        spec: ArchitectureSpec,
    },
}

fn one() -> f64 {
    1.0
}

impl Architecture {
    pub fn input_dim(&self) -> usize {
        match self {
            Self::Gauss { input_dim, .. }
            | Self::Relu { input_dim, .. }
            | Self::TLayer { input_dim, .. }
            | Self::ExactGp { input_dim, .. } => *input_dim,
            Self::Explicit { spec } => spec.input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Self::Gauss { output_dim, .. }
            | Self::Relu { output_dim, .. }
            | Self::TLayer { output_dim, .. }
            | Self::ExactGp { output_dim, .. } => *output_dim,
            Self::Explicit { spec } => spec.output_dim,
        }
    }

    pub fn width(&self) -> Option<usize> {
        match self {
            Self::Gauss { width, .. } | Self::Relu { width, .. } | Self::TLayer { width, .. } => {
                Some(*width)
            }
            _ => None,
        }
    }

    /// Network spec with the width replaced by `width` when given.
    pub fn build(&self, width: Option<usize>, seed: u64) -> Result<ArchitectureSpec> {
        let spec = match self.clone() {
            Self::Gauss {
                input_dim,
                width: w,
                output_dim,
                weight_std,
                bias_std,
            } => zoo::gauss_net(
                input_dim,
                width.unwrap_or(w),
                output_dim,
                weight_std,
                bias_std,
            ),
            Self::Relu {
                input_dim,
                width: w,
                output_dim,
                weight_std,
                bias_std,
                output_bias_std,
            } => zoo::relu_net(
                input_dim,
                width.unwrap_or(w),
                output_dim,
                weight_std,
                bias_std,
                output_bias_std,
            ),
            Self::TLayer {
                input_dim,
                width: w,
                output_dim,
                weight_std,
                output_bias_std,
            } => {
                let n = width.unwrap_or(w);
                let mut rng = RngStream::new(derive_seed(seed, 0x7_1a7e), 0);
                let t = Matrix::from_fn(n, input_dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                zoo::t_layer_net(t, output_dim, weight_std, output_bias_std)
            }
            Self::ExactGp { .. } => bail!("field `architecture`: exact_gp has no network form"),
            Self::Explicit { spec } => {
                ensure!(
                    width.is_none(),
                    "field `widths`: not applicable to explicit specs"
                );
                spec
            }
        };
        spec.validate().context("field `architecture`")?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::ExactGp {
                input_dim,
                output_dim,
            } => {
                positive("architecture.input_dim", *input_dim)?;
                positive("architecture.output_dim", *output_dim)
            }
            _ => self.build(None, 0).map(|_| ()),
        }
    }
}

fn default_inputs() -> Vec<Vec<f64>> {
    vec![vec![0.1], vec![0.5], vec![-0.3]]
}

fn check_inputs(inputs: &[Vec<f64>], dim: usize) -> Result<()> {
    nonempty("inputs", inputs)?;
    for (a, x) in inputs.iter().enumerate() {
        ensure!(
            x.len() == dim,
            "field `inputs[{a}]`: length {} but architecture input_dim is {dim}",
            x.len()
        );
        ensure!(
            x.iter().all(|v| v.is_finite()),
            "field `inputs[{a}]`: non-finite value"
        );
    }
    Ok(())
}

fn check_assignments(assignments: &[Vec<usize>], inputs: usize) -> Result<()> {
    for (k, a) in assignments.iter().enumerate() {
        ensure!(!a.is_empty(), "field `assignments[{k}]`: must be non-empty");
        ensure!(
            a.iter().all(|&p| p < inputs),
            "field `assignments[{k}]`: point index out of range for {inputs} inputs"
        );
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSymmetry {
    pub architecture: Architecture,
    /// Width grid; defaults to the architecture's own width.
    pub widths: Vec<usize>,
    pub orders: Vec<usize>,
    /// Per-order sample counts overriding `samples`, parallel to `orders`.
    pub order_samples: Option<Vec<u64>>,
    pub inputs: Vec<Vec<f64>>,
    /// Point assignments; those whose length equals an order are used for
    /// it. An order without any uses points `0, 1, ..` cyclically.
    pub assignments: Vec<Vec<usize>>,
    pub group: Option<GroupSpec>,
    pub experiments: usize,
    pub elements: usize,
    pub threshold: f64,
}

impl Default for CheckSymmetry {
    fn default() -> Self {
        Self {
            architecture: Architecture::Gauss {
                input_dim: 1,
                width: 50,
                output_dim: 3,
                weight_std: 1.0,
                bias_std: 1.0,
            },
            widths: vec![],
            orders: vec![2],
            order_samples: None,
            inputs: default_inputs(),
            assignments: vec![],
            group: None,
            experiments: 10,
            elements: 100,
            threshold: 1.0,
        }
    }
}

impl CheckSymmetry {
    pub fn assignments_for(&self, order: usize) -> Vec<Vec<usize>> {
        let given: Vec<Vec<usize>> = self
            .assignments
            .iter()
            .filter(|a| a.len() == order)
            .cloned()
            .collect();
        if given.is_empty() {
            vec![(0..order).map(|p| p % self.inputs.len()).collect()]
        } else {
            given
        }
    }

    fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        nonempty("orders", &self.orders)?;
        ensure!(
            self.orders.iter().all(|&o| o >= 1),
            "field `orders`: orders must be ≥ 1"
        );
        if self.architecture.width().is_none() {
            ensure!(
                self.widths.is_empty(),
                "field `widths`: architecture has no width"
            );
        }
        ensure!(
            self.widths.iter().all(|&w| w > 0),
            "field `widths`: widths must be ≥ 1"
        );
        if let Some(s) = &self.order_samples {
            ensure!(
                s.len() == self.orders.len(),
                "field `order_samples`: {} entries for {} orders",
                s.len(),
                self.orders.len()
            );
            ensure!(
                s.iter().all(|&n| n >= 2),
                "field `order_samples`: must be ≥ 2"
            );
        }
        check_inputs(&self.inputs, self.architecture.input_dim())?;
        check_assignments(&self.assignments, self.inputs.len())?;
        ensure!(self.experiments >= 2, "field `experiments`: must be ≥ 2");
        positive("elements", self.elements)?;
        ensure!(self.threshold > 0.0, "field `threshold`: must be > 0");
        if let Some(g) = &self.group {
            g.validate().context("field `group`")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpLimit {
    pub architecture: Architecture,
    pub widths: Vec<usize>,
    pub inputs: Vec<Vec<f64>>,
    pub assignments: Vec<Vec<usize>>,
    pub threshold: f64,
}

impl Default for GpLimit {
    fn default() -> Self {
        Self {
            architecture: Architecture::Relu {
                input_dim: 1,
                width: 10,
                output_dim: 1,
                weight_std: 1.0,
                bias_std: 1.0,
                output_bias_std: None,
            },
            widths: vec![10, 100, 1000],
            inputs: vec![vec![1.0]],
            assignments: vec![vec![0, 0, 0, 0]],
            threshold: 4.0,
        }
    }
}

impl GpLimit {
    fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        ensure!(
            self.architecture.width().is_some(),
            "field `architecture`: needs a width family"
        );
        nonempty("widths", &self.widths)?;
        ensure!(
            self.widths.iter().all(|&w| w > 0),
            "field `widths`: widths must be ≥ 1"
        );
        check_inputs(&self.inputs, self.architecture.input_dim())?;
        nonempty("assignments", &self.assignments)?;
        check_assignments(&self.assignments, self.inputs.len())?;
        ensure!(
            self.assignments.iter().all(|a| a.len() % 2 == 0),
            "field `assignments`: Wick comparison needs even orders"
        );
        ensure!(self.threshold > 0.0, "field `threshold`: must be > 0");
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslateCheck {
    pub architecture: Architecture,
    pub shifts: usize,
    pub shift_scale: f64,
    pub inputs: Vec<Vec<f64>>,
    pub assignments: Vec<Vec<usize>>,
    pub threshold: f64,
    /// Minimum fraction of pooled entries within `threshold`.
    pub required_fraction: f64,
}

impl Default for TranslateCheck {
    fn default() -> Self {
        Self {
            architecture: Architecture::TLayer {
                input_dim: 2,
                width: 100,
                output_dim: 3,
                weight_std: 1.0,
                output_bias_std: None,
            },
            shifts: 5,
            shift_scale: 1.0,
            inputs: vec![vec![0.1, 0.2], vec![0.4, -0.3]],
            assignments: vec![vec![0, 1], vec![0, 0, 1, 1]],
            threshold: 3.0,
            required_fraction: 0.99,
        }
    }
}

impl TranslateCheck {
    fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        positive("shifts", self.shifts)?;
        ensure!(self.shift_scale > 0.0, "field `shift_scale`: must be > 0");
        check_inputs(&self.inputs, self.architecture.input_dim())?;
        nonempty("assignments", &self.assignments)?;
        check_assignments(&self.assignments, self.inputs.len())?;
        ensure!(self.threshold > 0.0, "field `threshold`: must be > 0");
        ensure!(
            (0.0..=1.0).contains(&self.required_fraction),
            "field `required_fraction`: must lie in [0, 1]"
        );
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuCheck {
    pub input_dim: usize,
    pub width: usize,
    pub output_dim: usize,
    pub weight_std: f64,
    pub bias_std: f64,
    pub inputs: Vec<Vec<f64>>,
    pub elements: usize,
    pub experiments: usize,
    /// Invariance threshold in units of δM.
    pub threshold: f64,
    /// Vanishing threshold for unbalanced correlators, in stderr.
    pub vanishing_threshold: f64,
}

impl Default for SuCheck {
    fn default() -> Self {
        Self {
            input_dim: 1,
            width: 50,
            output_dim: 3,
            weight_std: 1.0,
            bias_std: 1.0,
            inputs: vec![vec![0.2], vec![0.7]],
            elements: 100,
            experiments: 10,
            threshold: 3.0,
            vanishing_threshold: 4.0,
        }
    }
}

impl SuCheck {
    pub fn spec(&self) -> ArchitectureSpec {
        zoo::complex_relu_net(
            self.input_dim,
            self.width,
            self.output_dim,
            self.weight_std,
            self.bias_std,
        )
    }

    fn validate(&self) -> Result<()> {
        self.spec()
            .validate()
            .context("field `width`/`input_dim`/`output_dim`")?;
        ensure!(
            self.output_dim >= 2,
            "field `output_dim`: SU(D) needs D ≥ 2"
        );
        ensure!(self.inputs.len() >= 2, "field `inputs`: needs two points");
        check_inputs(&self.inputs, self.input_dim)?;
        positive("elements", self.elements)?;
        ensure!(self.experiments >= 2, "field `experiments`: must be ≥ 2");
        ensure!(self.threshold > 0.0, "field `threshold`: must be > 0");
        ensure!(
            self.vanishing_threshold > 0.0,
            "field `vanishing_threshold`: must be > 0"
        );
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ward {
    pub architecture: Architecture,
    /// Output-weight mean shifts to compare; each adds `μ_W` to the first
    /// `k` output rows.
    pub mu_ws: Vec<f64>,
    pub k: usize,
    pub inputs: Vec<Vec<f64>>,
    pub points: Vec<usize>,
    /// Index into the SO(D) generator basis.
    pub generator: usize,
    pub threshold: f64,
}

impl Default for Ward {
    fn default() -> Self {
        Self {
            architecture: Architecture::Relu {
                input_dim: 1,
                width: 50,
                output_dim: 2,
                weight_std: 1.0,
                bias_std: 1.0,
                output_bias_std: None,
            },
            mu_ws: vec![0.0, 0.1],
            k: 2,
            inputs: vec![vec![0.3], vec![0.8]],
            points: vec![0, 1],
            generator: 0,
            threshold: 4.0,
        }
    }
}

impl Ward {
    fn validate(&self) -> Result<()> {
        let spec = self.architecture.build(None, 0)?;
        nonempty("mu_ws", &self.mu_ws)?;
        ensure!(
            self.mu_ws.iter().all(|m| m.is_finite()),
            "field `mu_ws`: non-finite"
        );
        for &mu in &self.mu_ws {
            nnsym::training::breaking_spec(&spec, self.k, mu).context("field `k`")?;
        }
        check_inputs(&self.inputs, spec.input_dim)?;
        nonempty("points", &self.points)?;
        check_assignments(std::slice::from_ref(&self.points), self.inputs.len())
            .context("field `points`")?;
        let d = spec.output_dim;
        ensure!(d >= 2, "field `architecture.output_dim`: SO(D) needs D ≥ 2");
        ensure!(
            self.generator < d * (d - 1) / 2,
            "field `generator`: SO({d}) has {} generators",
            d * (d - 1) / 2
        );
        ensure!(self.threshold > 0.0, "field `threshold`: must be > 0");
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ntk {
    pub input_dim: usize,
    pub width: usize,
    pub output_dim: usize,
    pub bias_std: f64,
    pub x: Vec<f64>,
    pub x_prime: Vec<f64>,
    pub elements: usize,
    pub fd_step: f64,
}

impl Default for Ntk {
    fn default() -> Self {
        Self {
            input_dim: 2,
            width: 500,
            output_dim: 3,
            bias_std: 1.0,
            x: vec![0.3, -0.5],
            x_prime: vec![0.8, 0.1],
            elements: 20,
            fd_step: 1e-4,
        }
    }
}

impl Ntk {
    pub fn spec(&self) -> ArchitectureSpec {
        nnsym::training::ntk_relu_net(self.input_dim, self.width, self.output_dim, self.bias_std)
    }

    fn validate(&self) -> Result<()> {
        self.spec()
            .validate()
            .context("field `width`/`input_dim`/`output_dim`")?;
        ensure!(
            self.output_dim >= 2,
            "field `output_dim`: rotation check needs D ≥ 2"
        );
        check_inputs(&[self.x.clone(), self.x_prime.clone()], self.input_dim)
            .context("fields `x`, `x_prime`")?;
        positive("elements", self.elements)?;
        ensure!(self.fd_step > 0.0, "field `fd_step`: must be > 0");
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// IDX files; `dir` is overridden by `NNSYM_DATA_DIR`.
    FashionMnist {
        #[serde(default)]
        dir: Option<PathBuf>,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
    /// Gaussian blobs centred at `separation · e_c` (cyclically in `dim`).
    Blobs {
        classes: usize,
        dim: usize,
        train_per_class: usize,
        test_per_class: usize,
        spread: f64,
        separation: f64,
    },
}

impl DatasetSource {
    pub fn blobs() -> Self {
        Self::Blobs {
            classes: 3,
            dim: 4,
            train_per_class: 100,
            test_per_class: 50,
            spread: 0.5,
            separation: 3.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Self::Blobs {
            classes,
            dim,
            train_per_class,
            test_per_class,
            spread,
            separation,
        } = self
        {
            ensure!(*classes >= 2, "field `dataset.classes`: must be ≥ 2");
            positive("dataset.dim", *dim)?;
            positive("dataset.train_per_class", *train_per_class)?;
            positive("dataset.test_per_class", *test_per_class)?;
            ensure!(*spread >= 0.0, "field `dataset.spread`: must be ≥ 0");
            ensure!(
                separation.is_finite(),
                "field `dataset.separation`: non-finite"
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Train {
    pub dataset: DatasetSource,
    pub width: usize,
    /// Broken output rows; ignored by `train-onecold`, which breaks all.
    pub ks: Vec<usize>,
    pub mu_ws: Vec<f64>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for Train {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::blobs(),
            width: 50,
            ks: vec![],
            mu_ws: vec![0.0],
            seeds: vec![0],
            epochs: 2,
            batch_size: 64,
            learning_rate: 0.001,
        }
    }
}

impl Train {
    fn validate(&self, sub: Subcommand) -> Result<()> {
        self.dataset.validate()?;
        positive("width", self.width)?;
        if sub == Subcommand::TrainGrid {
            nonempty("ks", &self.ks)?;
        }
        nonempty("mu_ws", &self.mu_ws)?;
        ensure!(
            self.mu_ws.iter().all(|m| m.is_finite()),
            "field `mu_ws`: non-finite"
        );
        nonempty("seeds", &self.seeds)?;
        positive("epochs", self.epochs)?;
        positive("batch_size", self.batch_size)?;
        ensure!(
            self.learning_rate >= 0.0 && self.learning_rate.is_finite(),
            "field `learning_rate`: must be finite and ≥ 0"
        );
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowCheck {
    pub dataset: DatasetSource,
    pub width: usize,
    pub members: usize,
    pub experiments: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub elements: usize,
    pub inputs: Vec<Vec<f64>>,
}

impl Default for FlowCheck {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Blobs {
                classes: 3,
                dim: 2,
                train_per_class: 10,
                test_per_class: 1,
                spread: 0.5,
                separation: 2.0,
            },
            width: 20,
            members: 2000,
            experiments: 10,
            steps: 100,
            learning_rate: 0.05,
            elements: 50,
            inputs: vec![vec![0.5, -0.5], vec![1.0, 1.0]],
        }
    }
}

impl FlowCheck {
    fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        positive("width", self.width)?;
        ensure!(self.experiments >= 2, "field `experiments`: must be ≥ 2");
        ensure!(
            self.members >= 2 * self.experiments,
            "field `members`: need at least two per experiment"
        );
        ensure!(
            self.learning_rate >= 0.0 && self.learning_rate.is_finite(),
            "field `learning_rate`: must be finite and ≥ 0"
        );
        positive("elements", self.elements)?;
        nonempty("inputs", &self.inputs)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Perturbative {
    pub std: f64,
    pub coupling: f64,
    /// Fixed hidden map `g = H x`, one row per hidden unit.
    pub hidden: Vec<Vec<f64>>,
    pub output_dim: usize,
    pub inputs: Vec<Vec<f64>>,
    /// Metropolis samples for the sampled comparison; 0 skips it.
    pub metropolis_samples: u64,
}

impl Default for Perturbative {
    fn default() -> Self {
        Self {
            std: 1.0,
            coupling: 0.01,
            hidden: vec![vec![1.0]],
            output_dim: 1,
            inputs: vec![vec![1.0]],
            metropolis_samples: 0,
        }
    }
}

impl Perturbative {
    pub fn hidden_matrix(&self) -> Result<Matrix<f64>> {
        Matrix::from_rows(&self.hidden).context("field `hidden`")
    }

    fn validate(&self) -> Result<()> {
        ensure!(
            self.std > 0.0 && self.std.is_finite(),
            "field `std`: must be > 0"
        );
        ensure!(self.coupling.is_finite(), "field `coupling`: non-finite");
        nonempty("hidden", &self.hidden)?;
        let h = self.hidden_matrix()?;
        positive("output_dim", self.output_dim)?;
        check_inputs(&self.inputs, h.cols())?;
        ensure!(
            self.metropolis_samples == 0 || self.metropolis_samples >= 2,
            "field `metropolis_samples`: must be 0 or ≥ 2"
        );
        Ok(())
    }
}
