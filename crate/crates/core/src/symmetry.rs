//! Group elements, their action on inputs and correlators, and the
//! deviation statistics used to test invariance.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::correlators::{
    combined_z, estimate_correlators, fraction_within, CorrelatorTensor, Ensemble, InputSet, Slot,
};
use crate::error::{Error, Result};
use crate::linalg::{expm, DenseTensor, Matrix, Scalar};
use crate::mc::{map_indexed, McConfig};
use crate::rng::{derive_seed, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupKind {
    SpecialOrthogonal,
    SpecialUnitary,
    /// Shifts `c_j = scale · N(0, 1)`.
    Translation {
        scale: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSide {
    Input,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub group: GroupKind,
    pub dim: usize,
    pub side: ActionSide,
}

impl GroupSpec {
    pub fn so(dim: usize, side: ActionSide) -> Self {
        Self {
            group: GroupKind::SpecialOrthogonal,
            dim,
            side,
        }
    }

    pub fn su(dim: usize) -> Self {
        Self {
            group: GroupKind::SpecialUnitary,
            dim,
            side: ActionSide::Output,
        }
    }

    pub fn translation(dim: usize, scale: f64) -> Self {
        Self {
            group: GroupKind::Translation { scale },
            dim,
            side: ActionSide::Input,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.group {
            GroupKind::SpecialOrthogonal | GroupKind::SpecialUnitary if self.dim < 2 => {
                Err(Error::InvalidArgument(format!(
                    "matrix groups need dimension ≥ 2, got {}",
                    self.dim
                )))
            }
            GroupKind::SpecialUnitary if self.side == ActionSide::Input => Err(Error::Unsupported(
                "SU acts on complex inputs, which are not supported".into(),
            )),
            GroupKind::Translation { .. } if self.side == ActionSide::Output => {
                Err(Error::Unsupported("translations act on inputs only".into()))
            }
            GroupKind::Translation { scale } if !(scale.is_finite() && scale >= 0.0) => Err(
                Error::InvalidArgument(format!("translation scale must be ≥ 0, got {scale}")),
            ),
            _ if self.dim == 0 => Err(Error::InvalidArgument("dimension must be positive".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupAction {
    Orthogonal(Matrix<f64>),
    Unitary(Matrix<Complex64>),
    Translation(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupElement {
    pub spec: GroupSpec,
    pub action: GroupAction,
    /// `max |M†M - I|`.
    pub residual: f64,
    /// Mean modulus of the off-diagonal entries of `M†M`.
    pub off_diagonal_error: f64,
}

/// Basis of so(D): one generator per plane `p < q` with `T[p][q] = -1`,
/// `T[q][p] = 1`, listed in reverse lexicographic plane order (for D = 3:
/// planes (2,3), (1,3), (1,2)).
pub fn so_generators(dim: usize) -> Result<Vec<Matrix<f64>>> {
    if dim < 2 {
        return Err(Error::InvalidArgument(format!(
            "so(D) needs D ≥ 2, got {dim}"
        )));
    }
    let mut planes: Vec<(usize, usize)> = (0..dim)
        .flat_map(|p| (p + 1..dim).map(move |q| (p, q)))
        .collect();
    planes.reverse();
    Ok(planes
        .into_iter()
        .map(|(p, q)| {
            let mut t = Matrix::zeros(dim, dim);
            t[(p, q)] = -1.0;
            t[(q, p)] = 1.0;
            t
        })
        .collect())
}

/// Generalized Gell-Mann matrices: a Hermitian traceless basis of su(D),
/// in the standard order (Pauli matrices for D = 2).
pub fn su_generators(dim: usize) -> Result<Vec<Matrix<Complex64>>> {
    if dim < 2 {
        return Err(Error::InvalidArgument(format!(
            "su(D) needs D ≥ 2, got {dim}"
        )));
    }
    let c = |re: f64, im: f64| Complex64::new(re, im);
    let mut out = Vec::with_capacity(dim * dim - 1);
    for k in 1..dim {
        for j in 0..k {
            let mut sym = Matrix::zeros(dim, dim);
            sym[(j, k)] = c(1.0, 0.0);
            sym[(k, j)] = c(1.0, 0.0);
            out.push(sym);
            let mut anti = Matrix::zeros(dim, dim);
            anti[(j, k)] = c(0.0, -1.0);
            anti[(k, j)] = c(0.0, 1.0);
            out.push(anti);
        }
        let norm = (2.0 / (k * (k + 1)) as f64).sqrt();
        let mut diag = Matrix::zeros(dim, dim);
        for j in 0..k {
            diag[(j, j)] = c(norm, 0.0);
        }
        diag[(k, k)] = c(-(k as f64) * norm, 0.0);
        out.push(diag);
    }
    Ok(out)
}

/// Number of coefficients [`group_element_from_coefficients`] expects.
pub fn coefficient_count(spec: &GroupSpec) -> usize {
    match spec.group {
        GroupKind::SpecialOrthogonal => spec.dim * (spec.dim - 1) / 2,
        GroupKind::SpecialUnitary => spec.dim * spec.dim - 1,
        GroupKind::Translation { .. } => spec.dim,
    }
}

/// `exp(Σ α_a T_a)` for SO, `exp(i Σ α_a λ_a)` for SU, the shift `α` for
/// translations.
pub fn group_element_from_coefficients(spec: &GroupSpec, alpha: &[f64]) -> Result<GroupElement> {
    spec.validate()?;
    if alpha.len() != coefficient_count(spec) {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients for a group with {} parameters",
            alpha.len(),
            coefficient_count(spec)
        )));
    }
    let d = spec.dim;
    let (action, residual, off) = match spec.group {
        GroupKind::SpecialOrthogonal => {
            let mut a = Matrix::zeros(d, d);
            for (t, &x) in so_generators(d)?.iter().zip(alpha) {
                a = a.add(&t.scale(x))?;
            }
            let r = expm(&a)?;
            let (res, off) = (r.unitarity_residual(), r.mean_off_diagonal_gram());
            (GroupAction::Orthogonal(r), res, off)
        }
        GroupKind::SpecialUnitary => {
            let mut h = Matrix::<Complex64>::zeros(d, d);
            for (t, &x) in su_generators(d)?.iter().zip(alpha) {
                h = h.add(&t.scale(x))?;
            }
            let s = expm(&h.map(|z| Complex64::i() * z))?;
            let (res, off) = (s.unitarity_residual(), s.mean_off_diagonal_gram());
            (GroupAction::Unitary(s), res, off)
        }
        GroupKind::Translation { .. } => (GroupAction::Translation(alpha.to_vec()), 0.0, 0.0),
    };
    Ok(GroupElement {
        spec: *spec,
        action,
        residual,
        off_diagonal_error: off,
    })
}

/// Random element: coefficients `α ~ U(0, 1)` for SO and SU, `N(0, scale²)`
/// shifts for translations.
pub fn random_group_element(spec: &GroupSpec, rng: &mut RngStream) -> Result<GroupElement> {
    spec.validate()?;
    let alpha: Vec<f64> = match spec.group {
        GroupKind::Translation { scale } => (0..spec.dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect(),
        _ => (0..coefficient_count(spec)).map(|_| rng.random()).collect(),
    };
    group_element_from_coefficients(spec, &alpha)
}

/// `count` random elements drawn sequentially from `RngStream::new(seed, 0)`.
pub fn random_group_elements(
    spec: &GroupSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<GroupElement>> {
    let mut rng = RngStream::new(seed, 0);
    (0..count)
        .map(|_| random_group_element(spec, &mut rng))
        .collect()
}

/// Field types correlators can be transformed over.
pub trait GroupField: Scalar {
    fn element_matrix(elem: &GroupElement) -> Result<Matrix<Self>>;
}

impl GroupField for f64 {
    fn element_matrix(elem: &GroupElement) -> Result<Matrix<f64>> {
        match &elem.action {
            GroupAction::Orthogonal(r) => Ok(r.clone()),
            _ => Err(Error::Unsupported(
                "real correlators transform under orthogonal elements only".into(),
            )),
        }
    }
}

impl GroupField for Complex64 {
    fn element_matrix(elem: &GroupElement) -> Result<Matrix<Complex64>> {
        match &elem.action {
            GroupAction::Orthogonal(r) => Ok(r.to_complex()),
            GroupAction::Unitary(s) => Ok(s.clone()),
            GroupAction::Translation(_) => Err(Error::Unsupported(
                "translations act on inputs, not on correlators".into(),
            )),
        }
    }
}

fn output_matrix<T: GroupField>(elem: &GroupElement, dim: usize) -> Result<Matrix<T>> {
    if elem.spec.side != ActionSide::Output {
        return Err(Error::Unsupported("element acts on inputs".into()));
    }
    let m = T::element_matrix(elem)?;
    if m.rows() != dim {
        return Err(Error::DimensionMismatch(format!(
            "{}-dimensional element on {dim} outputs",
            m.rows()
        )));
    }
    Ok(m)
}

/// Contracts every slot of `tensor` with `m` (conjugated on `f†` slots).
fn contract_all<T: Scalar>(
    tensor: &DenseTensor<T>,
    m: &Matrix<T>,
    slots: &[Slot],
) -> Result<DenseTensor<T>> {
    let conj = m.conj();
    let mut out = tensor.clone();
    for (axis, s) in slots.iter().enumerate() {
        out = out.contract_index(if s.conjugate { &conj } else { m }, axis)?;
    }
    Ok(out)
}

/// Propagated error of the transformed tensor `M_{i p} .. G_p`:
/// `sqrt(Σ_t (δR Σ_p Π_{s≠t} M G)² + Σ_p Π_s |M|² δG²)`, with one
/// derivative term per slot `t` and `δR` the element's off-diagonal error.
pub fn propagate_error<T: Scalar>(
    mean: &DenseTensor<T>,
    error: &DenseTensor<f64>,
    m: &Matrix<T>,
    slots: &[Slot],
    delta_r: f64,
) -> Result<DenseTensor<f64>> {
    let d = m.rows();
    let conj = m.conj();
    let sq = m.map(|v| v.modulus() * v.modulus());
    let mut total = error.map(|e| e * e);
    for axis in 0..slots.len() {
        total = total.contract_index(&sq, axis)?;
    }
    if delta_r != 0.0 {
        let ones = Matrix::from_fn(d, d, |_, _| T::from_real(delta_r));
        for t in 0..slots.len() {
            let mut term = mean.clone();
            for (axis, s) in slots.iter().enumerate() {
                let mat = if axis == t {
                    &ones
                } else if s.conjugate {
                    &conj
                } else {
                    m
                };
                term = term.contract_index(mat, axis)?;
            }
            total = total.zip_map(&term, |a, b| a + b.modulus() * b.modulus())?;
        }
    }
    Ok(total.map(f64::sqrt))
}

/// Applies an output-side element: `G'_{i..} = M_{i1 p1} .. M_{in pn} G_{p..}`
/// with stderr propagated by [`propagate_error`].
pub fn transform_correlator<T: GroupField>(
    g: &CorrelatorTensor<T>,
    elem: &GroupElement,
) -> Result<CorrelatorTensor<T>> {
    let m = output_matrix::<T>(elem, g.output_dim())?;
    Ok(CorrelatorTensor {
        slots: g.slots.clone(),
        mean: contract_all(&g.mean, &m, &g.slots)?,
        stderr: propagate_error(&g.mean, &g.stderr, &m, &g.slots, elem.off_diagonal_error)?,
        samples: g.samples,
        seed: g.seed,
    })
}

/// Applies an input-side element to every point.
pub fn transform_inputs(inputs: &InputSet, elem: &GroupElement) -> Result<InputSet> {
    if elem.spec.side != ActionSide::Input {
        return Err(Error::Unsupported("element acts on outputs".into()));
    }
    if elem.spec.dim != inputs.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{}-dimensional element on inputs of dimension {}",
            elem.spec.dim,
            inputs.dim()
        )));
    }
    let points = match &elem.action {
        GroupAction::Orthogonal(r) => inputs
            .points()
            .iter()
            .map(|x| r.apply(x))
            .collect::<Result<Vec<_>>>()?,
        GroupAction::Translation(c) => inputs
            .points()
            .iter()
            .map(|x| x.iter().zip(c).map(|(a, b)| a + b).collect())
            .collect(),
        GroupAction::Unitary(_) => {
            return Err(Error::Unsupported(
                "complex inputs are not supported".into(),
            ))
        }
    };
    InputSet::new(points)
}

/// Deviation statistics of transformed correlators, per tensor element
/// (pooled over point assignments) and averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub order: usize,
    pub output_dim: usize,
    pub elements: usize,
    pub experiments: usize,
    /// Mean over elements of the off-diagonal error of `M†M`.
    pub delta_r: f64,
    pub mu_m: f64,
    pub sigma_m: f64,
    pub delta_m: f64,
    /// Fraction of tensor elements with `μ_M ≤ threshold · δM`.
    pub pass_fraction: f64,
    pub threshold: f64,
    pub per_element_mu: Vec<f64>,
    pub per_element_sigma: Vec<f64>,
    pub per_element_delta: Vec<f64>,
    pub error_formula: String,
}

pub const ERROR_FORMULA: &str = "dM = sqrt(dG'^2 + dG^2); dG = elementwise std of G across \
experiments; dG' = mean over elements b of sqrt(sum_t (dR * sum_p prod_{s!=t} M_b G)^2 + \
sum_p prod_s |M_b|^2 dG^2), one derivative term per slot t, G the experiment mean";

impl DeviationReport {
    pub const CSV_HEADER: &'static str = "n,D,N,mu_M,sigma_M,delta_M,pass_fraction";

    pub fn csv_row(&self, width: usize) -> String {
        format!(
            "{},{},{},{:e},{:e},{:e},{}",
            self.order,
            self.output_dim,
            width,
            self.mu_m,
            self.sigma_m,
            self.delta_m,
            self.pass_fraction
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationConfig {
    pub elements: usize,
    /// Pass when `μ_M ≤ threshold · δM`.
    pub threshold: f64,
    pub seed: u64,
    pub workers: usize,
}

impl DeviationConfig {
    pub fn new(elements: usize, seed: u64) -> Self {
        Self {
            elements,
            threshold: 1.0,
            seed,
            workers: crate::mc::default_workers(),
        }
    }
}

/// Deviation `M = |G' - G|` of independently estimated correlators under
/// random group elements.
///
/// `experiments[e][a]` is experiment `e` at point assignment `a`. Every
/// experiment sees the same elements. For each tensor element, `M` is
/// averaged over group elements; `μ_M` and `σ_M` are the mean and std of
/// that average across experiments.
pub fn deviation_report<T: GroupField>(
    experiments: &[Vec<CorrelatorTensor<T>>],
    group: &GroupSpec,
    config: &DeviationConfig,
) -> Result<DeviationReport> {
    if experiments.len() < 2 {
        return Err(Error::InvalidArgument(
            "at least two experiments are needed".into(),
        ));
    }
    if config.elements == 0 {
        return Err(Error::InvalidArgument(
            "at least one group element is needed".into(),
        ));
    }
    let reference = &experiments[0];
    if reference.is_empty() {
        return Err(Error::InvalidArgument("no correlators given".into()));
    }
    for exp in experiments {
        if exp.len() != reference.len()
            || exp
                .iter()
                .zip(reference)
                .any(|(a, b)| a.mean.shape() != b.mean.shape() || a.slots.len() != b.slots.len())
        {
            return Err(Error::DimensionMismatch(
                "experiments have mismatched tensor shapes".into(),
            ));
        }
    }
    if group.side != ActionSide::Output {
        return Err(Error::Unsupported(
            "deviation reports need an output-side group".into(),
        ));
    }
    let d = reference[0].output_dim();
    if group.dim != d {
        return Err(Error::DimensionMismatch(format!(
            "group of dimension {} on {d} outputs",
            group.dim
        )));
    }
    let elems = random_group_elements(group, config.elements, config.seed)?;
    let mats: Vec<Matrix<T>> = elems
        .iter()
        .map(|e| output_matrix(e, d))
        .collect::<Result<_>>()?;
    let delta_r = elems.iter().map(|e| e.off_diagonal_error).sum::<f64>() / elems.len() as f64;
    let n_exp = experiments.len() as f64;

    // per experiment: element-averaged M for each assignment, concatenated
    let averaged: Vec<Vec<f64>> = map_indexed(experiments.len(), config.workers, |e| {
        let mut out = Vec::new();
        for g in &experiments[e] {
            let mut acc = vec![0.0; g.mean.len()];
            for m in &mats {
                let gp = contract_all(&g.mean, m, &g.slots)?;
                for ((a, x), y) in acc.iter_mut().zip(gp.as_slice()).zip(g.mean.as_slice()) {
                    *a += (*x - *y).modulus();
                }
            }
            out.extend(acc.into_iter().map(|a| a / mats.len() as f64));
        }
        Ok(out)
    })?;
    let len = averaged[0].len();
    let mut mu = vec![0.0; len];
    let mut sigma = vec![0.0; len];
    for k in 0..len {
        let xs: Vec<f64> = averaged.iter().map(|v| v[k]).collect();
        let (m, s) = crate::stats::mean_std(&xs);
        mu[k] = m;
        sigma[k] = s;
    }

    let mut delta = Vec::with_capacity(len);
    for (a, g0) in reference.iter().enumerate() {
        let count = g0.mean.len();
        let mut mean = vec![T::ZERO; count];
        for exp in experiments {
            for (m, &x) in mean.iter_mut().zip(exp[a].mean.as_slice()) {
                *m += x.scale(1.0 / n_exp);
            }
        }
        let spread: Vec<f64> = (0..count)
            .map(|k| {
                let ss: f64 = experiments
                    .iter()
                    .map(|exp| (exp[a].mean.as_slice()[k] - mean[k]).modulus().powi(2))
                    .sum();
                (ss / (n_exp - 1.0)).sqrt()
            })
            .collect();
        let mean = DenseTensor::new(g0.mean.shape().to_vec(), mean)?;
        let spread = DenseTensor::new(g0.mean.shape().to_vec(), spread)?;
        let mut dg_prime = vec![0.0; count];
        for (m, e) in mats.iter().zip(&elems) {
            let p = propagate_error(&mean, &spread, m, &g0.slots, e.off_diagonal_error)?;
            for (acc, &v) in dg_prime.iter_mut().zip(p.as_slice()) {
                *acc += v / mats.len() as f64;
            }
        }
        delta.extend(
            dg_prime
                .iter()
                .zip(spread.as_slice())
                .map(|(a, b)| a.hypot(*b)),
        );
    }

    let passes = mu
        .iter()
        .zip(&delta)
        .filter(|&(&m, &dm)| m <= config.threshold * dm)
        .count();
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(DeviationReport {
        order: reference[0].order(),
        output_dim: d,
        elements: config.elements,
        experiments: experiments.len(),
        delta_r,
        mu_m: avg(&mu),
        sigma_m: avg(&sigma),
        delta_m: avg(&delta),
        pass_fraction: passes as f64 / len as f64,
        threshold: config.threshold,
        per_element_mu: mu,
        per_element_sigma: sigma,
        per_element_delta: delta,
        error_formula: ERROR_FORMULA.into(),
    })
}

/// Estimates the same correlators in `experiments` independent runs;
/// result is indexed `[experiment][slot set]`.
pub fn run_experiments<E: Ensemble>(
    ens: &E,
    inputs: &InputSet,
    slot_sets: &[Vec<Slot>],
    mc: &McConfig,
    experiments: usize,
) -> Result<Vec<Vec<CorrelatorTensor<E::Field>>>> {
    (0..experiments)
        .map(|e| {
            estimate_correlators(
                ens,
                inputs,
                slot_sets,
                &mc.with_seed(derive_seed(mc.seed, e as u64)),
            )
        })
        .collect()
}

/// Agreement of correlators at original and transformed inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputInvarianceCheck {
    pub elements: usize,
    pub max_z: f64,
    pub fraction_within: f64,
    pub threshold: f64,
    pub z: Vec<f64>,
}

/// Compares correlators at `inputs` with correlators at each transformed
/// input set, estimated on independent streams; z-scores are pooled over
/// elements, slot sets and tensor entries.
pub fn input_invariance_check<E: Ensemble>(
    ens: &E,
    inputs: &InputSet,
    slot_sets: &[Vec<Slot>],
    elements: &[GroupElement],
    mc: &McConfig,
    threshold: f64,
) -> Result<InputInvarianceCheck> {
    let base = estimate_correlators(ens, inputs, slot_sets, mc)?;
    let mut z = Vec::new();
    for (k, elem) in elements.iter().enumerate() {
        let moved = transform_inputs(inputs, elem)?;
        let run = mc.with_seed(derive_seed(mc.seed, 1 + k as u64));
        let other = estimate_correlators(ens, &moved, slot_sets, &run)?;
        for (a, b) in base.iter().zip(&other) {
            z.extend(combined_z(&a.mean, &a.stderr, &b.mean, &b.stderr)?);
        }
    }
    Ok(InputInvarianceCheck {
        elements: elements.len(),
        max_z: z.iter().copied().fold(0.0, f64::max),
        fraction_within: fraction_within(&z, threshold),
        threshold,
        z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn so3_generators_match_standard_basis() {
        let g = so_generators(3).unwrap();
        let t1 = Matrix::from_rows(&[
            vec![0.0, 0.0, 0.0],
            vec![0.0, 0.0, -1.0],
            vec![0.0, 1.0, 0.0],
        ])
        .unwrap();
        let t2 = Matrix::from_rows(&[
            vec![0.0, 0.0, -1.0],
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
        ])
        .unwrap();
        let t3 = Matrix::from_rows(&[
            vec![0.0, -1.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0],
        ])
        .unwrap();
        assert_eq!(g, vec![t1, t2, t3]);
    }

    #[test]
    fn so2_and_so5_generators() {
        let g = so_generators(2).unwrap();
        assert_eq!(
            g,
            vec![Matrix::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap()]
        );
        let g5 = so_generators(5).unwrap();
        assert_eq!(g5.len(), 10);
        for t in &g5 {
            assert_eq!(t.transpose(), t.scale(-1.0));
        }
        // distinct planes have disjoint supports, hence independence
        for a in 0..10 {
            for b in a + 1..10 {
                let overlap: f64 = g5[a]
                    .as_slice()
                    .iter()
                    .zip(g5[b].as_slice())
                    .map(|(x, y)| x * y)
                    .sum();
                assert_eq!(overlap, 0.0);
            }
        }
        assert!(so_generators(1).is_err());
    }

    #[test]
    fn su_generators_hermitian_traceless_orthogonal() {
        for d in 2..5 {
            let g = su_generators(d).unwrap();
            assert_eq!(g.len(), d * d - 1);
            for (a, ta) in g.iter().enumerate() {
                assert_eq!(ta.adjoint(), *ta);
                assert!(ta.trace().norm() < 1e-15);
                for (b, tb) in g.iter().enumerate() {
                    let tr = ta.matmul(tb).unwrap().trace();
                    let want = if a == b { 2.0 } else { 0.0 };
                    assert!((tr - Complex64::new(want, 0.0)).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_coefficients_give_identity() {
        let spec = GroupSpec::so(4, ActionSide::Output);
        let e = group_element_from_coefficients(&spec, &[0.0; 6]).unwrap();
        assert_eq!(e.action, GroupAction::Orthogonal(Matrix::identity(4)));
        let su = group_element_from_coefficients(&GroupSpec::su(3), &[0.0; 8]).unwrap();
        assert_eq!(su.action, GroupAction::Unitary(Matrix::identity(3)));
    }

    #[test]
    fn random_elements_have_unit_determinant() {
        let spec = GroupSpec::so(5, ActionSide::Output);
        for e in random_group_elements(&spec, 1000, 9).unwrap() {
            let GroupAction::Orthogonal(r) = &e.action else {
                panic!()
            };
            assert!((r.determinant().unwrap() - 1.0).abs() < 1e-10);
            assert!(e.residual <= 1e-12);
            assert!(e.off_diagonal_error < 1e-14);
        }
        for e in random_group_elements(&GroupSpec::su(3), 200, 9).unwrap() {
            let GroupAction::Unitary(s) = &e.action else {
                panic!()
            };
            assert!((s.determinant().unwrap() - Complex64::new(1.0, 0.0)).norm() < 1e-10);
            assert!(e.residual <= 1e-12);
        }
    }

    #[test]
    fn unsupported_groups() {
        let su_in = GroupSpec {
            group: GroupKind::SpecialUnitary,
            dim: 2,
            side: ActionSide::Input,
        };
        assert!(matches!(
            random_group_element(&su_in, &mut RngStream::new(0, 0)),
            Err(Error::Unsupported(_))
        ));
        let t_out = GroupSpec {
            group: GroupKind::Translation { scale: 1.0 },
            dim: 2,
            side: ActionSide::Output,
        };
        assert!(t_out.validate().is_err());
    }

    fn quarter_turn_element(angle: f64, side: ActionSide) -> GroupElement {
        // α T for T = [[0,-1],[1,0]] rotates by α
        group_element_from_coefficients(&GroupSpec::so(2, side), &[angle]).unwrap()
    }

    fn correlator(shape: Vec<usize>, mean: Vec<f64>) -> CorrelatorTensor {
        let n = shape.len();
        CorrelatorTensor {
            slots: (0..n).map(Slot::at).collect(),
            stderr: DenseTensor::zeros(shape.clone()),
            mean: DenseTensor::new(shape, mean).unwrap(),
            samples: 1,
            seed: 0,
        }
    }

    #[test]
    fn transform_unit_vector() {
        let g = correlator(vec![2], vec![1.0, 0.0]);
        let out =
            transform_correlator(&g, &quarter_turn_element(FRAC_PI_2, ActionSide::Output)).unwrap();
        assert!(
            out.mean
                .max_abs_diff(&DenseTensor::new(vec![2], vec![0.0, 1.0]).unwrap())
                < 1e-12
        );
    }

    #[test]
    fn identity_transform_is_exact() {
        let g = correlator(vec![3, 3], (0..9).map(|v| v as f64 * 0.37).collect());
        let id = group_element_from_coefficients(&GroupSpec::so(3, ActionSide::Output), &[0.0; 3])
            .unwrap();
        assert_eq!(transform_correlator(&g, &id).unwrap().mean, g.mean);
    }

    #[test]
    fn delta_is_invariant() {
        let k = 1.7;
        let g = correlator(
            vec![3, 3],
            (0..9).map(|e| if e % 4 == 0 { k } else { 0.0 }).collect(),
        );
        for e in random_group_elements(&GroupSpec::so(3, ActionSide::Output), 20, 1).unwrap() {
            let out = transform_correlator(&g, &e).unwrap();
            assert!(out.mean.max_abs_diff(&g.mean) < 1e-10);
        }
    }

    #[test]
    fn propagation_with_zero_rotation_error_preserves_norm() {
        // for a permutation, errors are permuted
        let mut g = correlator(vec![2], vec![1.0, 2.0]);
        g.stderr = DenseTensor::new(vec![2], vec![0.1, 0.3]).unwrap();
        let swap = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let p = propagate_error(&g.mean, &g.stderr, &swap, &g.slots, 0.0).unwrap();
        assert_eq!(p.as_slice(), &[0.3, 0.1]);
        let q = propagate_error(&g.mean, &g.stderr, &swap, &g.slots, 0.01).unwrap();
        // derivative term: δR Σ_p G_p = 0.03
        assert!((q.as_slice()[0] - (0.09f64 + 0.0009).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn input_transforms() {
        let inputs = InputSet::new(vec![vec![1.0, 0.0], vec![0.3, -2.0]]).unwrap();
        let t0 =
            group_element_from_coefficients(&GroupSpec::translation(2, 1.0), &[0.0, 0.0]).unwrap();
        assert_eq!(transform_inputs(&inputs, &t0).unwrap(), inputs);
        let r = quarter_turn_element(PI, ActionSide::Input);
        let out = transform_inputs(&inputs, &r).unwrap();
        assert!((out.point(0)[0] + 1.0).abs() < 1e-12 && out.point(0)[1].abs() < 1e-12);
        for e in random_group_elements(&GroupSpec::so(2, ActionSide::Input), 10, 4).unwrap() {
            let out = transform_inputs(&inputs, &e).unwrap();
            for (a, b) in inputs.points().iter().zip(out.points()) {
                let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((na - nb).abs() < 1e-12);
            }
        }
        let wrong = InputSet::scalars(&[1.0]).unwrap();
        assert!(transform_inputs(&wrong, &r).is_err());
    }

    #[test]
    fn exact_tensor_has_zero_deviation() {
        let g = correlator(
            vec![3, 3],
            (0..9).map(|e| if e % 4 == 0 { 2.0 } else { 0.0 }).collect(),
        );
        let exps = vec![vec![g.clone()], vec![g]];
        let r = deviation_report(
            &exps,
            &GroupSpec::so(3, ActionSide::Output),
            &DeviationConfig::new(50, 2),
        )
        .unwrap();
        assert!(r.mu_m < 1e-10);
        assert!(r.sigma_m < 1e-10);
        assert!(r.delta_m >= 0.0);
        assert!((0.0..=1.0).contains(&r.pass_fraction));
    }

    #[test]
    fn deviation_report_rejects_bad_input() {
        let g = correlator(vec![3, 3], vec![0.0; 9]);
        let h = correlator(vec![3], vec![0.0; 3]);
        let spec = GroupSpec::so(3, ActionSide::Output);
        let cfg = DeviationConfig::new(5, 0);
        assert!(deviation_report(&[vec![g.clone()]], &spec, &cfg).is_err());
        assert!(deviation_report(&[vec![g.clone()], vec![h]], &spec, &cfg).is_err());
        assert!(deviation_report(
            &[vec![g.clone()], vec![g]],
            &GroupSpec::so(2, ActionSide::Output),
            &cfg
        )
        .is_err());
    }
}
