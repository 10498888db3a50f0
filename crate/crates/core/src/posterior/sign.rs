//! Sign declarations: FSR estimates, s-values, rejection sets and realized
//! false sign proportions.

use std::cmp::Ordering;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Effects whose signs are declared at level `threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionSet<T: Scalar> {
    /// `(observation, condition)` pairs, in ascending lfsr order.
    pub indices: Vec<(usize, usize)>,
    /// +1 or -1 per member, from the posterior mean.
    pub estimated_signs: Vec<i8>,
    pub threshold: T,
    /// Members whose posterior mean was exactly zero (assigned +1).
    pub zero_mean_ties: usize,
    /// `fsr_hat` over the set (zero when empty).
    pub fsr_hat: T,
}

impl<T: Scalar> DecisionSet<T> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Mean of `lfsr_values` over `gamma`.
pub fn fsr_hat<T: Scalar>(lfsr_values: &[T], gamma: &[usize]) -> Result<T> {
    if gamma.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut sum = T::zero();
    for &j in gamma {
        let v = lfsr_values
            .get(j)
            .ok_or_else(|| Error::InvalidArgument(format!("index {j} out of range")))?;
        sum += *v;
    }
    Ok(sum / T::from_usize(gamma.len()).unwrap())
}

fn ascending_order<T: Scalar>(values: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    order
}

/// `s_j` = mean of every lfsr value `<= lfsr_j` (ties included).
pub fn s_values<T: Scalar>(lfsr_values: &[T]) -> Vec<T> {
    let order = ascending_order(lfsr_values);
    let mut out = vec![T::zero(); lfsr_values.len()];
    let mut sum = T::zero();
    let mut start = 0;
    while start < order.len() {
        let v = lfsr_values[order[start]];
        let mut end = start;
        while end < order.len() && lfsr_values[order[end]] == v {
            sum += lfsr_values[order[end]];
            end += 1;
        }
        let s = sum / T::from_usize(end).unwrap();
        for &j in &order[start..end] {
            out[j] = s;
        }
        start = end;
    }
    out
}

/// Declares the sign of every effect with s-value `<= alpha`, over the
/// flattened `N x R` table. Signs come from the posterior means.
pub fn reject_at_level<T: Scalar>(lfsr: &DMatrix<T>, posterior_means: &DMatrix<T>, alpha: T) -> Result<DecisionSet<T>> {
    if !(alpha > T::zero() && alpha < T::one()) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if lfsr.shape() != posterior_means.shape() {
        return Err(Error::DimensionMismatch { expected: lfsr.len(), found: posterior_means.len() });
    }
    let (n, r) = lfsr.shape();
    // row-major flattening: effect (i, j) -> i * r + j
    let flat: Vec<T> = (0..n * r).map(|f| lfsr[(f / r, f % r)]).collect();
    let s = s_values(&flat);
    let order = ascending_order(&flat);
    let mut indices = Vec::new();
    let mut estimated_signs = Vec::new();
    let mut zero_mean_ties = 0;
    let mut sum = T::zero();
    for f in order {
        if !(s[f] <= alpha) {
            break;
        }
        let (i, j) = (f / r, f % r);
        let m = posterior_means[(i, j)];
        if m == T::zero() {
            zero_mean_ties += 1;
        }
        estimated_signs.push(if m < T::zero() { -1 } else { 1 });
        indices.push((i, j));
        sum += flat[f];
    }
    let fsr_hat = if indices.is_empty() { T::zero() } else { sum / T::from_usize(indices.len()).unwrap() };
    Ok(DecisionSet { indices, estimated_signs, threshold: alpha, zero_mean_ties, fsr_hat })
}

/// Realized false sign proportion `V / |Gamma|`. True effects equal to zero
/// count as errors whichever sign was claimed.
pub fn fsp<T: Scalar>(decisions: &DecisionSet<T>, true_effects: &DMatrix<T>) -> Result<T> {
    if decisions.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut wrong = 0usize;
    for (&(i, j), &sign) in decisions.indices.iter().zip(&decisions.estimated_signs) {
        if i >= true_effects.nrows() || j >= true_effects.ncols() {
            return Err(Error::DimensionMismatch { expected: true_effects.nrows(), found: i + 1 });
        }
        let mu = true_effects[(i, j)];
        let correct = (sign > 0 && mu > T::zero()) || (sign < 0 && mu < T::zero());
        if !correct {
            wrong += 1;
        }
    }
    Ok(T::from_usize(wrong).unwrap() / T::from_usize(decisions.len()).unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fsr_hat_examples() {
        let l = [0.1_f64, 0.2, 0.3];
        assert!((fsr_hat(&l, &[0, 1, 2]).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(fsr_hat(&l, &[1]).unwrap(), 0.2);
        assert_eq!(fsr_hat(&l, &[]), Err(Error::EmptySet));
    }

    #[test]
    fn fsr_hat_random_subset() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l: Vec<f64> = (0..100).map(|_| rng.random_range(0.0..0.5)).collect();
        let subset: Vec<usize> = (0..100).filter(|_| rng.random_bool(0.3)).collect();
        let direct = subset.iter().map(|&j| l[j]).sum::<f64>() / subset.len() as f64;
        assert!((fsr_hat(&l, &subset).unwrap() - direct).abs() < 1e-15);
    }

    #[test]
    fn s_values_running_means() {
        let s = s_values(&[0.1_f64, 0.2, 0.3]);
        let expected = [0.1, 0.15, 0.2];
        for (a, b) in s.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(s_values(&[0.3, 0.3, 0.3]), vec![0.3, 0.3, 0.3]);
    }

    #[test]
    fn s_values_match_set_definition_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let l: Vec<f64> = (0..200).map(|_| (rng.random_range(0..20) as f64) * 0.025).collect();
        let s = s_values(&l);
        for j in 0..l.len() {
            let members: Vec<f64> = l.iter().copied().filter(|&v| v <= l[j]).collect();
            let brute = members.iter().sum::<f64>() / members.len() as f64;
            assert!((s[j] - brute).abs() < 1e-12);
            assert!(s[j] <= l[j] + 1e-15);
        }
    }

    #[test]
    fn rejection_edge_cases() {
        let lfsr = DMatrix::from_element(3, 2, 0.4);
        let means = DMatrix::from_element(3, 2, 1.0);
        assert!(reject_at_level(&lfsr, &means, 0.05).unwrap().is_empty());
        let all = reject_at_level(&lfsr, &means, 0.5).unwrap();
        assert_eq!(all.len(), 6);
    }

    #[test]
    fn rejection_matches_prefix_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let lfsr = DMatrix::from_fn(40, 3, |_, _| rng.random_range(0.0..0.5_f64).powi(2) * 2.0);
        let means = DMatrix::from_fn(40, 3, |_, _| rng.random_range(-1.0..1.0));
        let d = reject_at_level(&lfsr, &means, 0.1).unwrap();
        let mut flat: Vec<f64> = lfsr.transpose().iter().copied().collect();
        flat.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut best = 0;
        let mut sum = 0.0;
        for (n, v) in flat.iter().enumerate() {
            sum += v;
            if sum / (n + 1) as f64 <= 0.1 {
                best = n + 1;
            }
        }
        assert_eq!(d.len(), best);
        assert!(d.fsr_hat <= 0.1);
        for (&(i, j), &s) in d.indices.iter().zip(&d.estimated_signs) {
            assert_eq!(s, if means[(i, j)] < 0.0 { -1 } else { 1 });
        }
    }

    #[test]
    fn zero_means_are_flagged() {
        let lfsr = DMatrix::from_element(1, 2, 0.01);
        let means = DMatrix::from_row_slice(1, 2, &[0.0, -2.0]);
        let d = reject_at_level(&lfsr, &means, 0.05).unwrap();
        assert_eq!(d.zero_mean_ties, 1);
        assert_eq!(d.estimated_signs, vec![1, -1]);
    }

    #[test]
    fn fsp_counts() {
        let lfsr = DMatrix::from_element(10, 1, 0.01);
        let means = DMatrix::from_element(10, 1, 1.0);
        let d = reject_at_level(&lfsr, &means, 0.05).unwrap();
        assert_eq!(fsp(&d, &DMatrix::from_element(10, 1, 2.0)).unwrap(), 0.0);
        assert_eq!(fsp(&d, &DMatrix::from_element(10, 1, -2.0)).unwrap(), 1.0);
        let half = DMatrix::from_fn(10, 1, |i, _| if i < 5 { 1.0 } else { -1.0 });
        assert_eq!(fsp(&d, &half).unwrap(), 0.5);
        assert_eq!(fsp(&d, &DMatrix::zeros(10, 1)).unwrap(), 1.0);
        let empty = reject_at_level(&lfsr, &means, 0.001).unwrap();
        assert_eq!(fsp(&empty, &half), Err(Error::EmptySet));
    }

    proptest::proptest! {
        #[test]
        fn selected_set_controls_estimated_fsr(seed in 0u64..500, alpha in 0.01f64..0.45) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lfsr = DMatrix::from_fn(30, 4, |_, _| rng.random_range(0.0..0.5_f64));
            let means = DMatrix::from_fn(30, 4, |_, _| rng.random_range(-1.0..1.0));
            let d = reject_at_level(&lfsr, &means, alpha).unwrap();
            if !d.is_empty() {
                let flat: Vec<f64> = d.indices.iter().map(|&(i, j)| lfsr[(i, j)]).collect();
                let idx: Vec<usize> = (0..flat.len()).collect();
                proptest::prop_assert!(fsr_hat(&flat, &idx).unwrap() <= alpha + 1e-12);
            }
            let s = s_values(lfsr.as_slice());
            let mut pairs: Vec<(f64, f64)> = lfsr.iter().copied().zip(s).collect();
            pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            proptest::prop_assert!(pairs.windows(2).all(|w| w[0].1 <= w[1].1 + 1e-15));
        }
    }
}
