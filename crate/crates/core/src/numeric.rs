//! Small numerically-stable helpers.

/// `log Σ exp(x)` over the given values with max subtraction. Returns
/// `-inf` for an empty iterator.
pub fn logsumexp<I: IntoIterator<Item = f64> + Clone>(xs: I) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = xs.into_iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// In-place softmax with max subtraction.
pub fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_matches_naive() {
        let xs = [0.3, -1.2, 2.5];
        let naive = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((logsumexp(xs) - naive).abs() < 1e-14);
        assert!(logsumexp([1000.0, 1000.0]).is_finite());
        assert_eq!(logsumexp(std::iter::empty::<f64>()), f64::NEG_INFINITY);
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut xs = [1.0, 2.0, 3.0, 800.0];
        softmax_in_place(&mut xs);
        assert!((xs.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
