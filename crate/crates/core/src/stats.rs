//! Streaming moment accumulation.

use crate::linalg::Scalar;

/// Elementwise running mean and spread of fixed-length vectors (Welford).
///
/// The spread is tracked as `sum |x - mean|^2`, which for complex entries is
/// the variance of the modulus-distance, so stderr is meaningful for both
/// fields.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator<T> {
    count: u64,
    mean: Vec<T>,
    m2: Vec<f64>,
}

impl<T: Scalar> MomentAccumulator<T> {
    pub fn new(len: usize) -> Self {
        Self {
            count: 0,
            mean: vec![T::ZERO; len],
            m2: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    #[inline]
    pub fn push(&mut self, x: &[T]) {
        debug_assert_eq!(x.len(), self.mean.len());
        self.count += 1;
        let inv = 1.0 / self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *m;
            *m += delta.scale(inv);
            let (dr, di) = delta.parts();
            let (er, ei) = (v - *m).parts();
            *s += dr * er + di * ei;
        }
    }

    /// Chan et al. pairwise combination; merging in a fixed order gives a
    /// fixed result.
    pub fn merge(&mut self, other: &Self) {
        debug_assert_eq!(self.len(), other.len());
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let n_a = self.count as f64;
        let n_b = other.count as f64;
        let n = n_a + n_b;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta.scale(n_b / n);
            let d2 = delta.modulus().powi(2);
            self.m2[i] += other.m2[i] + d2 * n_a * n_b / n;
        }
        self.count += other.count;
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    /// Unbiased sample variance; zero with fewer than two samples.
    pub fn variance(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![0.0; self.mean.len()];
        }
        let denom = (self.count - 1) as f64;
        self.m2.iter().map(|&s| (s / denom).max(0.0)).collect()
    }

    pub fn stderr(&self) -> Vec<f64> {
        let n = self.count as f64;
        self.variance()
            .into_iter()
            .map(|v| (v / n).sqrt())
            .collect()
    }
}

/// Mean and unbiased standard deviation of a slice.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Median of a slice (NaNs sort last).
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Two-sided 95% Student-t critical value.
pub fn t_critical_95(dof: usize) -> f64 {
    const TABLE: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160,
        2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056,
        2.052, 2.048, 2.045, 2.042,
    ];
    match dof {
        0 => f64::INFINITY,
        1..=30 => TABLE[dof - 1],
        31..=60 => 2.000,
        61..=120 => 1.980,
        _ => 1.960,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn direct(xs: &[f64]) -> (f64, f64) {
        let (m, s) = mean_std(xs);
        (m, s * s)
    }

    #[test]
    fn matches_two_pass() {
        let xs: Vec<f64> = (0..101)
            .map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.0)
            .collect();
        let mut acc = MomentAccumulator::<f64>::new(1);
        for &x in &xs {
            acc.push(&[x]);
        }
        let (m, v) = direct(&xs);
        assert!((acc.mean()[0] - m).abs() < 1e-14);
        assert!((acc.variance()[0] - v).abs() < 1e-13);
        assert!((acc.stderr()[0] - (v / 101.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn complex_spread_is_modulus_variance() {
        let zs = [
            Complex64::new(1.0, 0.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(0.0, -1.0),
        ];
        let mut acc = MomentAccumulator::new(1);
        for z in zs {
            acc.push(&[z]);
        }
        assert!(acc.mean()[0].norm() < 1e-15);
        // sum |z|^2 / (n - 1) = 4 / 3
        assert!((acc.variance()[0] - 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn t_table_limits() {
        assert_eq!(t_critical_95(2), 4.303);
        assert_eq!(t_critical_95(1000), 1.960);
    }

    proptest! {
        #[test]
        fn merge_equals_sequential(xs in proptest::collection::vec(-100.0f64..100.0, 2..60), split in 0usize..60) {
            let split = split.min(xs.len());
            let mut whole = MomentAccumulator::<f64>::new(1);
            let mut left = MomentAccumulator::<f64>::new(1);
            let mut right = MomentAccumulator::<f64>::new(1);
            for (i, &x) in xs.iter().enumerate() {
                whole.push(&[x]);
                if i < split { left.push(&[x]) } else { right.push(&[x]) }
            }
            left.merge(&right);
            prop_assert_eq!(left.count(), whole.count());
            prop_assert!((left.mean()[0] - whole.mean()[0]).abs() < 1e-9);
            prop_assert!((left.variance()[0] - whole.variance()[0]).abs() < 1e-7 * (1.0 + whole.variance()[0]));
        }
    }
}
