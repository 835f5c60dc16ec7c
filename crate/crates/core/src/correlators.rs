//! Monte Carlo n-point correlators, Wick contractions of a kernel, and
//! related estimators.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ensembles::{ArchitectureSpec, FieldType, ForwardBuffers, NetworkDraw, NetworkSampler};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, increment_index, DenseTensor, Matrix, Scalar};
use crate::mc::{run_blocks, McConfig};
use crate::rng::{derive_seed, RngStream};
use crate::stats::MomentAccumulator;

/// Fixed input points `x_1..x_m`, all of the same dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct InputSet {
    points: Vec<Vec<f64>>,
}

impl InputSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidArgument("input set is empty".into()))?;
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch(
                "all input points need the same positive dimension".into(),
            ));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input point"));
        }
        Ok(Self { points })
    }

    /// Scalar inputs `x_a ∈ ℝ`.
    pub fn scalars(xs: &[f64]) -> Result<Self> {
        Self::new(xs.iter().map(|&x| vec![x]).collect())
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, a: usize) -> &[f64] {
        &self.points[a]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }
}

impl TryFrom<Vec<Vec<f64>>> for InputSet {
    type Error = Error;
    fn try_from(points: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(points)
    }
}

impl From<InputSet> for Vec<Vec<f64>> {
    fn from(s: InputSet) -> Self {
        s.points
    }
}

/// One tensor slot: which input point it evaluates and whether the output
/// is conjugated (`f†`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub point: usize,
    #[serde(default)]
    pub conjugate: bool,
}

impl Slot {
    pub fn at(point: usize) -> Self {
        Self {
            point,
            conjugate: false,
        }
    }

    pub fn conj(point: usize) -> Self {
        Self {
            point,
            conjugate: true,
        }
    }
}

/// Unconjugated slots at the given points.
pub fn slots_at(points: &[usize]) -> Vec<Slot> {
    points.iter().map(|&p| Slot::at(p)).collect()
}

/// Monte Carlo estimate of `G^(n)_{i_1..i_n} = E[f_{i_1}(x_{s_1}) .. f_{i_n}(x_{s_n})]`.
///
/// Serialized as a flat record: `order`, `shape`, `slots`, `field`, row-major
/// `mean` (complex entries as `[re, im]`), `stderr`, `samples`, `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    into = "CorrelatorRecord<T>",
    try_from = "CorrelatorRecord<T>",
    bound(
        serialize = "T: Scalar + Serialize",
        deserialize = "T: Scalar + Deserialize<'de>"
    )
)]
pub struct CorrelatorTensor<T: Scalar = f64> {
    pub slots: Vec<Slot>,
    pub mean: DenseTensor<T>,
    pub stderr: DenseTensor<f64>,
    pub samples: u64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct CorrelatorRecord<T> {
    order: usize,
    shape: Vec<usize>,
    slots: Vec<Slot>,
    field: FieldType,
    mean: Vec<T>,
    stderr: Vec<f64>,
    samples: u64,
    seed: u64,
}

impl<T: Scalar> From<CorrelatorTensor<T>> for CorrelatorRecord<T> {
    fn from(c: CorrelatorTensor<T>) -> Self {
        Self {
            order: c.order(),
            shape: c.mean.shape().to_vec(),
            slots: c.slots,
            field: if T::IS_COMPLEX {
                FieldType::Complex
            } else {
                FieldType::Real
            },
            mean: c.mean.into_vec(),
            stderr: c.stderr.into_vec(),
            samples: c.samples,
            seed: c.seed,
        }
    }
}

impl<T: Scalar> TryFrom<CorrelatorRecord<T>> for CorrelatorTensor<T> {
    type Error = Error;
    fn try_from(r: CorrelatorRecord<T>) -> Result<Self> {
        if r.shape.len() != r.order || r.slots.len() != r.order {
            return Err(Error::DimensionMismatch(
                "order, shape and slots disagree".into(),
            ));
        }
        if r.stderr.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::InvalidArgument("negative stderr".into()));
        }
        Ok(Self {
            mean: DenseTensor::new(r.shape.clone(), r.mean)?,
            stderr: DenseTensor::new(r.shape, r.stderr)?,
            slots: r.slots,
            samples: r.samples,
            seed: r.seed,
        })
    }
}

impl<T: Scalar> CorrelatorTensor<T> {
    pub fn order(&self) -> usize {
        self.slots.len()
    }

    pub fn output_dim(&self) -> usize {
        self.mean.shape().first().copied().unwrap_or(1)
    }

    /// Largest `|mean| / stderr` over elements; entries with zero stderr and
    /// zero mean count as 0.
    pub fn max_z(&self) -> f64 {
        self.mean
            .as_slice()
            .iter()
            .zip(self.stderr.as_slice())
            .map(|(m, &s)| ratio(m.modulus(), s))
            .fold(0.0, f64::max)
    }
}

/// `|a - b| / sqrt(se_a² + se_b²)` elementwise.
pub fn combined_z<T: Scalar>(
    a: &DenseTensor<T>,
    se_a: &DenseTensor<f64>,
    b: &DenseTensor<T>,
    se_b: &DenseTensor<f64>,
) -> Result<Vec<f64>> {
    if a.shape() != b.shape() || a.shape() != se_a.shape() || b.shape() != se_b.shape() {
        return Err(Error::DimensionMismatch("tensor shapes differ".into()));
    }
    Ok((0..a.len())
        .map(|e| {
            let diff = (a.as_slice()[e] - b.as_slice()[e]).modulus();
            let se = se_a.as_slice()[e].hypot(se_b.as_slice()[e]);
            ratio(diff, se)
        })
        .collect())
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Fraction of values at or below `threshold`.
pub fn fraction_within(zs: &[f64], threshold: f64) -> f64 {
    if zs.is_empty() {
        return 1.0;
    }
    zs.iter().filter(|&&z| z <= threshold).count() as f64 / zs.len() as f64
}

/// A distribution over functions `ℝ^d → F^D` that can be sampled at a fixed
/// input set.
pub trait Ensemble: Sync {
    type Field: Scalar;
    type Sampler: OutputSampler<Self::Field>;

    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// A sampler for one block of draws; `rng` may be used for set-up such
    /// as Metropolis burn-in.
    fn sampler(&self, inputs: &InputSet, rng: &mut RngStream) -> Result<Self::Sampler>;
}

pub trait OutputSampler<T>: Send {
    /// Draws one function and writes `f_i(x_a)` to `out[a * D + i]`.
    fn draw(&mut self, rng: &mut RngStream, out: &mut [T]) -> Result<()>;
}

/// Real-valued networks drawn from an architecture.
#[derive(Debug, Clone)]
pub struct RealNetworks {
    spec: Arc<ArchitectureSpec>,
}

impl RealNetworks {
    pub fn new(spec: ArchitectureSpec) -> Result<Self> {
        Self::from_arc(Arc::new(spec))
    }

    pub fn from_arc(spec: Arc<ArchitectureSpec>) -> Result<Self> {
        spec.validate()?;
        if spec.field != FieldType::Real {
            return Err(Error::Unsupported("architecture is complex-valued".into()));
        }
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &Arc<ArchitectureSpec> {
        &self.spec
    }
}

pub struct NetworkOutputSampler {
    inputs: InputSet,
    sampler: NetworkSampler,
    draw: NetworkDraw,
    bufs: ForwardBuffers,
}

impl Ensemble for RealNetworks {
    type Field = f64;
    type Sampler = NetworkOutputSampler;

    fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    fn sampler(&self, inputs: &InputSet, rng: &mut RngStream) -> Result<Self::Sampler> {
        check_inputs(inputs, self.spec.input_dim)?;
        Ok(NetworkOutputSampler {
            inputs: inputs.clone(),
            sampler: NetworkSampler::new(self.spec.clone(), rng)?,
            draw: NetworkDraw::zeros(self.spec.clone()),
            bufs: ForwardBuffers::default(),
        })
    }
}

impl OutputSampler<f64> for NetworkOutputSampler {
    fn draw(&mut self, rng: &mut RngStream, out: &mut [f64]) -> Result<()> {
        self.sampler.sample_into(rng, &mut self.draw)?;
        let d = self.draw.spec.output_dim;
        for (a, x) in self.inputs.points().iter().enumerate() {
            let y = self.draw.forward_into(x, &mut self.bufs)?;
            out[a * d..(a + 1) * d].copy_from_slice(y);
        }
        Ok(())
    }
}

/// Complex-valued networks drawn from an architecture ending in a complex
/// linear layer.
#[derive(Debug, Clone)]
pub struct ComplexNetworks {
    spec: Arc<ArchitectureSpec>,
}

impl ComplexNetworks {
    pub fn new(spec: ArchitectureSpec) -> Result<Self> {
        spec.validate()?;
        if spec.field != FieldType::Complex {
            return Err(Error::Unsupported("architecture is real-valued".into()));
        }
        Ok(Self {
            spec: Arc::new(spec),
        })
    }
}

impl Ensemble for ComplexNetworks {
    type Field = Complex64;
    type Sampler = NetworkOutputSampler;

    fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    fn sampler(&self, inputs: &InputSet, rng: &mut RngStream) -> Result<Self::Sampler> {
        check_inputs(inputs, self.spec.input_dim)?;
        Ok(NetworkOutputSampler {
            inputs: inputs.clone(),
            sampler: NetworkSampler::new(self.spec.clone(), rng)?,
            draw: NetworkDraw::zeros(self.spec.clone()),
            bufs: ForwardBuffers::default(),
        })
    }
}

impl OutputSampler<Complex64> for NetworkOutputSampler {
    fn draw(&mut self, rng: &mut RngStream, out: &mut [Complex64]) -> Result<()> {
        self.sampler.sample_into(rng, &mut self.draw)?;
        let d = self.draw.spec.output_dim;
        for (a, x) in self.inputs.points().iter().enumerate() {
            self.draw
                .forward_complex_into(x, &mut self.bufs, &mut out[a * d..(a + 1) * d])?;
        }
        Ok(())
    }
}

/// Exact zero-mean Gaussian process with `E[f_i(x) f_j(y)] = δ_ij k(x, y)`.
pub struct GaussianProcess<K> {
    kernel: K,
    input_dim: usize,
    output_dim: usize,
}

impl<K: Fn(&[f64], &[f64]) -> f64 + Sync> GaussianProcess<K> {
    pub fn new(kernel: K, input_dim: usize, output_dim: usize) -> Self {
        Self {
            kernel,
            input_dim,
            output_dim,
        }
    }
}

pub struct GaussianProcessSampler {
    chol: Matrix<f64>,
    output_dim: usize,
    z: Vec<f64>,
}

impl<K: Fn(&[f64], &[f64]) -> f64 + Sync> Ensemble for GaussianProcess<K> {
    type Field = f64;
    type Sampler = GaussianProcessSampler;

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn sampler(&self, inputs: &InputSet, _rng: &mut RngStream) -> Result<Self::Sampler> {
        check_inputs(inputs, self.input_dim)?;
        let m = inputs.len();
        let k = Matrix::from_fn(m, m, |a, b| (self.kernel)(inputs.point(a), inputs.point(b)));
        Ok(GaussianProcessSampler {
            chol: cholesky(&k)?,
            output_dim: self.output_dim,
            z: vec![0.0; m],
        })
    }
}

impl OutputSampler<f64> for GaussianProcessSampler {
    fn draw(&mut self, rng: &mut RngStream, out: &mut [f64]) -> Result<()> {
        let m = self.chol.rows();
        let d = self.output_dim;
        for i in 0..d {
            for z in self.z.iter_mut() {
                *z = rng.sample(StandardNormal);
            }
            for a in 0..m {
                let v: f64 = self.chol.row(a)[..=a]
                    .iter()
                    .zip(&self.z)
                    .map(|(l, z)| l * z)
                    .sum();
                out[a * d + i] = v;
            }
        }
        Ok(())
    }
}

fn check_inputs(inputs: &InputSet, dim: usize) -> Result<()> {
    if inputs.dim() != dim {
        return Err(Error::DimensionMismatch(format!(
            "inputs of dimension {} for an ensemble on ℝ^{dim}",
            inputs.dim()
        )));
    }
    Ok(())
}

fn check_slots(slots: &[Slot], inputs: &InputSet) -> Result<()> {
    if let Some(s) = slots.iter().find(|s| s.point >= inputs.len()) {
        return Err(Error::InvalidArgument(format!(
            "slot refers to point {} but only {} points given",
            s.point,
            inputs.len()
        )));
    }
    Ok(())
}

/// Writes the outer product `⊗_s f(x_{slot s})` (conjugated where flagged)
/// into `dst`, using `tmp` as scratch.
fn outer_product<T: Scalar>(
    outputs: &[T],
    d: usize,
    slots: &[Slot],
    dst: &mut Vec<T>,
    tmp: &mut Vec<T>,
) {
    dst.clear();
    dst.push(T::ONE);
    for s in slots {
        let v = &outputs[s.point * d..(s.point + 1) * d];
        tmp.clear();
        for &e in dst.iter() {
            for &vi in v {
                tmp.push(e * if s.conjugate { vi.conj() } else { vi });
            }
        }
        std::mem::swap(dst, tmp);
    }
}

/// Per-block accumulators, one per slot set, in block order.
fn block_accumulators<E: Ensemble>(
    ens: &E,
    inputs: &InputSet,
    slot_sets: &[Vec<Slot>],
    mc: &McConfig,
) -> Result<Vec<Vec<MomentAccumulator<E::Field>>>> {
    if mc.samples < 2 {
        return Err(Error::InvalidArgument(
            "at least two samples are needed".into(),
        ));
    }
    check_inputs(inputs, ens.input_dim())?;
    for s in slot_sets {
        check_slots(s, inputs)?;
    }
    let d = ens.output_dim();
    let m = inputs.len();
    run_blocks(mc, |_, count, rng| {
        let mut sampler = ens.sampler(inputs, rng)?;
        let mut accs: Vec<_> = slot_sets
            .iter()
            .map(|s| MomentAccumulator::new(d.pow(s.len() as u32)))
            .collect();
        let mut out = vec![E::Field::ZERO; m * d];
        let (mut prod, mut tmp) = (Vec::new(), Vec::new());
        for _ in 0..count {
            sampler.draw(rng, &mut out)?;
            for (acc, slots) in accs.iter_mut().zip(slot_sets) {
                outer_product(&out, d, slots, &mut prod, &mut tmp);
                acc.push(&prod);
            }
        }
        Ok(accs)
    })
}

fn to_tensor<T: Scalar>(
    acc: &MomentAccumulator<T>,
    slots: &[Slot],
    d: usize,
    seed: u64,
) -> Result<CorrelatorTensor<T>> {
    let shape = vec![d; slots.len()];
    Ok(CorrelatorTensor {
        slots: slots.to_vec(),
        mean: DenseTensor::new(shape.clone(), acc.mean().to_vec())?,
        stderr: DenseTensor::new(shape, acc.stderr())?,
        samples: acc.count(),
        seed,
    })
}

/// Several correlators estimated from the same network draws.
pub fn estimate_correlators<E: Ensemble>(
    ens: &E,
    inputs: &InputSet,
    slot_sets: &[Vec<Slot>],
    mc: &McConfig,
) -> Result<Vec<CorrelatorTensor<E::Field>>> {
    let blocks = block_accumulators(ens, inputs, slot_sets, mc)?;
    let mut merged: Vec<_> = slot_sets
        .iter()
        .map(|s| MomentAccumulator::new(ens.output_dim().pow(s.len() as u32)))
        .collect();
    for block in &blocks {
        for (m, b) in merged.iter_mut().zip(block) {
            m.merge(b);
        }
    }
    merged
        .iter()
        .zip(slot_sets)
        .map(|(acc, slots)| to_tensor(acc, slots, ens.output_dim(), mc.seed))
        .collect()
}

pub fn estimate_correlator<E: Ensemble>(
    ens: &E,
    inputs: &InputSet,
    slots: &[Slot],
    mc: &McConfig,
) -> Result<CorrelatorTensor<E::Field>> {
    let mut v = estimate_correlators(ens, inputs, &[slots.to_vec()], mc)?;
    Ok(v.remove(0))
}

/// Correlator from an explicit finite population of networks (each member
/// counted once).
pub fn correlator_from_draws(
    draws: &[NetworkDraw],
    inputs: &InputSet,
    slots: &[Slot],
) -> Result<CorrelatorTensor<f64>> {
    let first = draws
        .first()
        .ok_or_else(|| Error::InvalidArgument("no networks given".into()))?;
    check_inputs(inputs, first.spec.input_dim)?;
    check_slots(slots, inputs)?;
    let d = first.spec.output_dim;
    let mut acc = MomentAccumulator::new(d.pow(slots.len() as u32));
    let mut out = vec![0.0; inputs.len() * d];
    let (mut prod, mut tmp, mut bufs) = (Vec::new(), Vec::new(), ForwardBuffers::default());
    for draw in draws {
        for (a, x) in inputs.points().iter().enumerate() {
            out[a * d..(a + 1) * d].copy_from_slice(draw.forward_into(x, &mut bufs)?);
        }
        outer_product(&out, d, slots, &mut prod, &mut tmp);
        acc.push(&prod);
    }
    to_tensor(&acc, slots, d, 0)
}

/// Connected correlator (joint cumulant of the slot outputs), with stderr
/// from the spread of per-block estimates.
pub fn estimate_connected<E: Ensemble<Field = f64>>(
    ens: &E,
    inputs: &InputSet,
    slots: &[Slot],
    mc: &McConfig,
) -> Result<CorrelatorTensor<f64>> {
    let n = slots.len();
    if n == 0 || n > 6 {
        return Err(Error::InvalidArgument(
            "connected order must be 1..=6".into(),
        ));
    }
    let d = ens.output_dim();
    // every non-empty subset of slots, as a bitmask
    let subsets: Vec<u32> = (1..(1u32 << n)).collect();
    let slot_sets: Vec<Vec<Slot>> = subsets
        .iter()
        .map(|&mask| {
            (0..n)
                .filter(|k| mask >> k & 1 == 1)
                .map(|k| slots[k])
                .collect()
        })
        .collect();
    let blocks = block_accumulators(ens, inputs, &slot_sets, mc)?;
    if blocks.len() < 2 {
        return Err(Error::InvalidArgument(
            "connected correlators need at least four samples".into(),
        ));
    }
    let partitions = set_partitions(n);
    let cumulant = |accs: &[MomentAccumulator<f64>]| -> Vec<f64> {
        let shape = vec![d; n];
        DenseTensor::from_fn(shape, |idx| {
            partitions
                .iter()
                .map(|blocks| {
                    let k = blocks.len();
                    let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                    let weight = sign * (1..k).product::<usize>() as f64;
                    let prod: f64 = blocks
                        .iter()
                        .map(|&mask| {
                            let sub: Vec<usize> = (0..n)
                                .filter(|j| mask >> j & 1 == 1)
                                .map(|j| idx[j])
                                .collect();
                            let off = sub.iter().fold(0, |acc, &i| acc * d + i);
                            accs[(mask - 1) as usize].mean()[off]
                        })
                        .product();
                    weight * prod
                })
                .sum()
        })
        .into_vec()
    };
    let mut pooled: Vec<MomentAccumulator<f64>> = slot_sets
        .iter()
        .map(|s| MomentAccumulator::new(d.pow(s.len() as u32)))
        .collect();
    let mut per_block = MomentAccumulator::new(d.pow(n as u32));
    for b in &blocks {
        for (p, a) in pooled.iter_mut().zip(b) {
            p.merge(a);
        }
        per_block.push(&cumulant(b));
    }
    let shape = vec![d; n];
    Ok(CorrelatorTensor {
        slots: slots.to_vec(),
        mean: DenseTensor::new(shape.clone(), cumulant(&pooled))?,
        stderr: DenseTensor::new(shape, per_block.stderr())?,
        samples: mc.samples,
        seed: mc.seed,
    })
}

/// All set partitions of `0..n`, each block a bitmask.
pub fn set_partitions(n: usize) -> Vec<Vec<u32>> {
    fn rec(k: usize, n: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if k == n {
            out.push(current.clone());
            return;
        }
        for b in 0..current.len() {
            current[b] |= 1 << k;
            rec(k + 1, n, current, out);
            current[b] &= !(1 << k);
        }
        current.push(1 << k);
        rec(k + 1, n, current, out);
        current.pop();
    }
    let mut out = Vec::new();
    rec(0, n, &mut Vec::new(), &mut out);
    out
}

/// Per-component averaged 2-pt function `K(x_a, x_b) = (1/D) Σ_i E[f_i(x_a) f_i(x_b)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub values: Matrix<f64>,
    pub stderr: Matrix<f64>,
    pub samples: u64,
}

impl Kernel {
    /// A kernel known exactly.
    pub fn exact(values: Matrix<f64>) -> Self {
        let n = values.rows();
        Self {
            stderr: Matrix::zeros(n, n),
            values,
            samples: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn estimate_kernel<E: Ensemble<Field = f64>>(
    ens: &E,
    inputs: &InputSet,
    mc: &McConfig,
) -> Result<Kernel> {
    if mc.samples < 2 {
        return Err(Error::InvalidArgument(
            "at least two samples are needed".into(),
        ));
    }
    check_inputs(inputs, ens.input_dim())?;
    let d = ens.output_dim();
    let m = inputs.len();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|a| (a..m).map(move |b| (a, b))).collect();
    let blocks = run_blocks(mc, |_, count, rng| {
        let mut sampler = ens.sampler(inputs, rng)?;
        let mut acc = MomentAccumulator::<f64>::new(pairs.len());
        let mut out = vec![0.0; m * d];
        let mut k = vec![0.0; pairs.len()];
        for _ in 0..count {
            sampler.draw(rng, &mut out)?;
            for (kv, &(a, b)) in k.iter_mut().zip(&pairs) {
                let dot: f64 = (0..d).map(|i| out[a * d + i] * out[b * d + i]).sum();
                *kv = dot / d as f64;
            }
            acc.push(&k);
        }
        Ok(acc)
    })?;
    let mut acc = MomentAccumulator::<f64>::new(pairs.len());
    for b in &blocks {
        acc.merge(b);
    }
    let se = acc.stderr();
    let mut values = Matrix::zeros(m, m);
    let mut stderr = Matrix::zeros(m, m);
    for (e, &(a, b)) in pairs.iter().enumerate() {
        values[(a, b)] = acc.mean()[e];
        values[(b, a)] = acc.mean()[e];
        stderr[(a, b)] = se[e];
        stderr[(b, a)] = se[e];
    }
    Ok(Kernel {
        values,
        stderr,
        samples: acc.count(),
    })
}

/// All perfect matchings of `0..n`, built by pairing the lowest unpaired
/// element with each remaining one.
pub fn pair_partitions(n: usize) -> Result<Vec<Vec<(usize, usize)>>> {
    if n % 2 == 1 {
        return Err(Error::InvalidArgument(format!(
            "pair partitions need an even count, got {n}"
        )));
    }
    fn rec(rest: &[usize], current: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        let Some((&first, tail)) = rest.split_first() else {
            out.push(current.clone());
            return;
        };
        for k in 0..tail.len() {
            current.push((first, tail[k]));
            let remaining: Vec<usize> = tail
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .map(|(_, &v)| v)
                .collect();
            rec(&remaining, current, out);
            current.pop();
        }
    }
    let mut out = Vec::new();
    rec(&(0..n).collect::<Vec<_>>(), &mut Vec::new(), &mut out);
    Ok(out)
}

/// Gaussian prediction for an even-order correlator, with stderr
/// propagated linearly from the kernel stderr.
#[derive(Debug, Clone, PartialEq)]
pub struct WickTensor {
    pub mean: DenseTensor<f64>,
    pub stderr: DenseTensor<f64>,
}

/// `Σ_{pairings} Π δ_{i_a i_b} K(x_{p_a}, x_{p_b})` for slots at `points`.
pub fn wick_correlator(kernel: &Kernel, points: &[usize], output_dim: usize) -> Result<WickTensor> {
    let partitions = pair_partitions(points.len())?;
    let m = kernel.len();
    if let Some(&p) = points.iter().find(|&&p| p >= m) {
        return Err(Error::InvalidArgument(format!(
            "point {p} outside a kernel over {m} points"
        )));
    }
    let shape = vec![output_dim; points.len()];
    let len: usize = shape.iter().product();
    let mut mean = Vec::with_capacity(len);
    let mut stderr = Vec::with_capacity(len);
    let mut idx = vec![0usize; points.len()];
    let key = |a: usize, b: usize| (points[a].min(points[b]), points[a].max(points[b]));
    for _ in 0..len {
        let mut total = 0.0;
        let mut grad: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for part in &partitions {
            if part.iter().any(|&(a, b)| idx[a] != idx[b]) {
                continue;
            }
            let factors: Vec<f64> = part
                .iter()
                .map(|&(a, b)| {
                    let (p, q) = key(a, b);
                    kernel.values[(p, q)]
                })
                .collect();
            total += factors.iter().product::<f64>();
            for (j, &(a, b)) in part.iter().enumerate() {
                let others: f64 = factors
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != j)
                    .map(|(_, f)| f)
                    .product();
                *grad.entry(key(a, b)).or_insert(0.0) += others;
            }
        }
        let var: f64 = grad
            .iter()
            .map(|(&(p, q), g)| (g * kernel.stderr[(p, q)]).powi(2))
            .sum();
        mean.push(total);
        stderr.push(var.sqrt());
        increment_index(&mut idx, &shape);
    }
    Ok(WickTensor {
        mean: DenseTensor::new(shape.clone(), mean)?,
        stderr: DenseTensor::new(shape, stderr)?,
    })
}

/// Comparison of a measured correlator against its Wick prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianityCheck {
    /// Elementwise `|G - Wick| / sqrt(se_G² + se_Wick²)`, pooled over all
    /// point assignments.
    pub discrepancies: Vec<f64>,
    pub max_discrepancy: f64,
    pub mean_discrepancy: f64,
    pub fraction_within: f64,
    pub threshold: f64,
}

/// Compares even-order correlators at each point assignment with the Wick
/// expansion of a kernel measured on an independent stream.
pub fn gaussianity_check<E: Ensemble<Field = f64>>(
    ens: &E,
    inputs: &InputSet,
    assignments: &[Vec<usize>],
    mc: &McConfig,
    threshold: f64,
) -> Result<GaussianityCheck> {
    if assignments.is_empty() {
        return Err(Error::InvalidArgument("no point assignments given".into()));
    }
    let slot_sets: Vec<Vec<Slot>> = assignments.iter().map(|a| slots_at(a)).collect();
    let measured = estimate_correlators(ens, inputs, &slot_sets, mc)?;
    let kernel = estimate_kernel(ens, inputs, &mc.with_seed(derive_seed(mc.seed, 1)))?;
    let mut discrepancies = Vec::new();
    for (g, points) in measured.iter().zip(assignments) {
        let w = wick_correlator(&kernel, points, ens.output_dim())?;
        discrepancies.extend(combined_z(&g.mean, &g.stderr, &w.mean, &w.stderr)?);
    }
    let max_discrepancy = discrepancies.iter().copied().fold(0.0, f64::max);
    let mean_discrepancy = discrepancies.iter().sum::<f64>() / discrepancies.len() as f64;
    Ok(GaussianityCheck {
        fraction_within: fraction_within(&discrepancies, threshold),
        discrepancies,
        max_discrepancy,
        mean_discrepancy,
        threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpLimitRow {
    pub width: usize,
    pub max_discrepancy: f64,
    pub mean_discrepancy: f64,
    pub fraction_within: f64,
}

/// Runs [`gaussianity_check`] across a width family; the discrepancy is
/// expected to fall as the width grows.
pub fn gp_limit_check<E, F>(
    family: F,
    widths: &[usize],
    inputs: &InputSet,
    assignments: &[Vec<usize>],
    mc: &McConfig,
    threshold: f64,
) -> Result<Vec<GpLimitRow>>
where
    E: Ensemble<Field = f64>,
    F: Fn(usize) -> Result<E>,
{
    widths
        .iter()
        .enumerate()
        .map(|(k, &width)| {
            let ens = family(width)?;
            let run = mc.with_seed(derive_seed(mc.seed, 100 + k as u64));
            let c = gaussianity_check(&ens, inputs, assignments, &run, threshold)?;
            Ok(GpLimitRow {
                width,
                max_discrepancy: c.max_discrepancy,
                mean_discrepancy: c.mean_discrepancy,
                fraction_within: c.fraction_within,
            })
        })
        .collect()
}

/// `E[θ^k]` of a centered Gaussian with standard deviation `std`.
pub fn gaussian_moment(k: u32, std: f64) -> f64 {
    if k % 2 == 1 {
        return 0.0;
    }
    let double_factorial: f64 = (1..k).step_by(2).map(|v| v as f64).product();
    double_factorial * std.powi(k as i32)
}

/// First-order quartic correction to the diagonal second moment of one
/// output weight: returns `c` with `E_λ[θ²] = σ² - λ c + O(λ²)`.
///
/// The numerator and denominator expansions are summed over `params`
/// weights with the excluded index coincidences taken pairwise distinct.
pub fn quartic_first_order_coefficient(std: f64, params: usize) -> f64 {
    let p = params as f64;
    let (e2, e4, e6) = (
        gaussian_moment(2, std),
        gaussian_moment(4, std),
        gaussian_moment(6, std),
    );
    // numerator: θ_1² |θ|⁴ split by index coincidences
    let numerator =
        (p - 1.0) * (p - 2.0) * e2 * e2 * e2 + (p - 1.0) * (e2 * e4 + 2.0 * e4 * e2) + e6;
    // denominator: |θ|⁴
    let denominator = p * e4 + p * (p - 1.0) * e2 * e2;
    numerator - e2 * denominator
}

/// Perturbative 2-pt function of an output layer with a weak quartic prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbativeTwoPoint {
    /// `G_{i1 i2}(x_a, x_b) = δ_{i1 i2} kernel.values[(a, b)]`.
    pub kernel: Kernel,
    /// Corrected second moment `σ² - λ c` of one output weight.
    pub weight_second_moment: f64,
    pub first_order_coefficient: f64,
    /// Set when `λ` is outside the regime where the expansion is trusted.
    pub warning: Option<String>,
}

/// `G^(2)_{i1 i2}(x_1, x_2) = δ_{i1 i2} (σ² - λ c) N K_g(x_1, x_2)` where
/// `K_g` is the per-unit hidden kernel of width `width` and the output
/// weight matrix has `output_dim × width` entries.
pub fn perturbative_ngp_2pt(
    std: f64,
    coupling: f64,
    hidden_kernel: &Kernel,
    width: usize,
    output_dim: usize,
) -> Result<PerturbativeTwoPoint> {
    if !(std > 0.0 && std.is_finite()) {
        return Err(Error::InvalidPrior(format!("std must be > 0, got {std}")));
    }
    if !coupling.is_finite() {
        return Err(Error::InvalidPrior("coupling must be finite".into()));
    }
    let c = quartic_first_order_coefficient(std, output_dim * width);
    let second = gaussian_moment(2, std) - coupling * c;
    let scale = second * width as f64;
    let limit = 0.1 / (2.0 * std * std).powi(2);
    let warning = (coupling.abs() > limit).then(|| {
        format!("coupling {coupling} exceeds {limit:.3e}; first-order result may be inaccurate")
    });
    Ok(PerturbativeTwoPoint {
        kernel: Kernel {
            values: hidden_kernel.values.scale(scale),
            stderr: hidden_kernel.stderr.scale(scale.abs()),
            samples: hidden_kernel.samples,
        },
        weight_second_moment: second,
        first_order_coefficient: c,
        warning,
    })
}

/// Ward sum `Σ_s E[f(x_1) ⊗ .. (T f)(x_s) .. ⊗ f(x_n)]` for generator `T`,
/// with stderr from the per-draw spread.
pub fn ward_identity_sum<E: Ensemble<Field = f64>>(
    ens: &E,
    inputs: &InputSet,
    generator: &Matrix<f64>,
    points: &[usize],
    mc: &McConfig,
) -> Result<CorrelatorTensor<f64>> {
    let d = ens.output_dim();
    if generator.rows() != d || generator.cols() != d {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} generator for {d} outputs",
            generator.rows(),
            generator.cols()
        )));
    }
    if mc.samples < 2 {
        return Err(Error::InvalidArgument(
            "at least two samples are needed".into(),
        ));
    }
    check_inputs(inputs, ens.input_dim())?;
    let slots = slots_at(points);
    check_slots(&slots, inputs)?;
    let n = points.len();
    let m = inputs.len();
    let len = d.pow(n as u32);
    let blocks = run_blocks(mc, |_, count, rng| {
        let mut sampler = ens.sampler(inputs, rng)?;
        let mut acc = MomentAccumulator::<f64>::new(len);
        let mut out = vec![0.0; m * d];
        let mut rotated = vec![0.0; m * d];
        let mut mixed = vec![0.0; 2 * m * d];
        let mut total = vec![0.0; len];
        let (mut prod, mut tmp) = (Vec::new(), Vec::new());
        for _ in 0..count {
            sampler.draw(rng, &mut out)?;
            for a in 0..m {
                let tf = generator.apply(&out[a * d..(a + 1) * d])?;
                rotated[a * d..(a + 1) * d].copy_from_slice(&tf);
            }
            // points 0..m hold f, points m..2m hold T f
            mixed[..m * d].copy_from_slice(&out);
            mixed[m * d..].copy_from_slice(&rotated);
            total.iter_mut().for_each(|v| *v = 0.0);
            for s in 0..n {
                let mut sl = slots.clone();
                sl[s].point += m;
                outer_product(&mixed, d, &sl, &mut prod, &mut tmp);
                for (t, &p) in total.iter_mut().zip(&prod) {
                    *t += p;
                }
            }
            acc.push(&total);
        }
        Ok(acc)
    })?;
    let mut acc = MomentAccumulator::<f64>::new(len);
    for b in &blocks {
        acc.merge(b);
    }
    let mut t = to_tensor(&acc, &slots, d, mc.seed)?;
    t.samples = acc.count();
    Ok(t)
}
