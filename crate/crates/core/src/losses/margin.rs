use crate::error::{Error, Result};
use crate::matrix::{dot, CorrelationMatrix, Matrix};
use crate::par::map_range;

use super::{check_pair, LossResult};

/// Per-triple margin rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Margin {
    /// Same margin `γ` for every triple.
    Fixed(f64),
    /// Margin `c_ij · γ`, scaled by the anchor/positive correlation.
    Adaptive(f64),
}

impl Margin {
    #[inline]
    fn value(self, c_ij: f64) -> f64 {
        match self {
            Margin::Fixed(g) => g,
            Margin::Adaptive(g) => c_ij * g,
        }
    }

    fn gamma(self) -> f64 {
        match self {
            Margin::Fixed(g) | Margin::Adaptive(g) => g,
        }
    }
}

/// Multi-instance max-margin loss.
///
/// Triples are `(i, j, k)` with `c_ij > threshold` and `c_ik ≤ threshold`.
/// Each contributes `[γ + v_i·t_k − v_i·t_j]₊ + [γ + t_i·v_k − t_i·v_j]₊`;
/// the loss is the mean over triples.
pub fn mi_mm(
    video: &Matrix,
    text: &Matrix,
    corr: &CorrelationMatrix,
    gamma: f64,
    positive_threshold: f64,
) -> Result<LossResult> {
    margin_loss(video, text, corr, Margin::Fixed(gamma), positive_threshold)
}

/// [`mi_mm`] with the margin of triple `(i, j, k)` set to `c_ij · γ`.
pub fn adaptive_mi_mm(
    video: &Matrix,
    text: &Matrix,
    corr: &CorrelationMatrix,
    gamma: f64,
    positive_threshold: f64,
) -> Result<LossResult> {
    margin_loss(
        video,
        text,
        corr,
        Margin::Adaptive(gamma),
        positive_threshold,
    )
}

struct AnchorTerms {
    value: f64,
    triples: usize,
    // ∂/∂(v_i·t_b) and ∂/∂(t_i·v_b), unnormalized.
    coef_vt: Vec<f64>,
    coef_tv: Vec<f64>,
}

fn split_anchor(corr: &CorrelationMatrix, i: usize, threshold: f64) -> (Vec<usize>, Vec<usize>) {
    (0..corr.cols()).partition(|&b| corr.get(i, b) > threshold)
}

fn check_inputs(
    video: &Matrix,
    text: &Matrix,
    corr: &CorrelationMatrix,
    margin: Margin,
    threshold: f64,
) -> Result<()> {
    check_pair(video, text)?;
    let n = video.rows();
    if corr.shape() != (n, n) {
        return Err(Error::ShapeMismatch(format!(
            "correlation is {}x{}, batch has {n} rows",
            corr.rows(),
            corr.cols()
        )));
    }
    if !margin.gamma().is_finite() || margin.gamma() < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "margin must be non-negative, got {}",
            margin.gamma()
        )));
    }
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::InvalidConfig(format!(
            "positive threshold must lie in [0, 1), got {threshold}"
        )));
    }
    Ok(())
}

fn margin_loss(
    video: &Matrix,
    text: &Matrix,
    corr: &CorrelationMatrix,
    margin: Margin,
    threshold: f64,
) -> Result<LossResult> {
    check_inputs(video, text, corr, margin, threshold)?;
    let n = video.rows();

    let anchors = map_range(n, |i| {
        let (pos, neg) = split_anchor(corr, i, threshold);
        let vt: Vec<f64> = (0..n).map(|b| dot(video.row(i), text.row(b))).collect();
        let tv: Vec<f64> = (0..n).map(|b| dot(text.row(i), video.row(b))).collect();
        let mut out = AnchorTerms {
            value: 0.0,
            triples: pos.len() * neg.len(),
            coef_vt: vec![0.0; n],
            coef_tv: vec![0.0; n],
        };
        for &j in &pos {
            let m = margin.value(corr.get(i, j));
            for &k in &neg {
                let a = m + vt[k] - vt[j];
                if a > 0.0 {
                    out.value += a;
                    out.coef_vt[k] += 1.0;
                    out.coef_vt[j] -= 1.0;
                }
                let b = m + tv[k] - tv[j];
                if b > 0.0 {
                    out.value += b;
                    out.coef_tv[k] += 1.0;
                    out.coef_tv[j] -= 1.0;
                }
            }
        }
        out
    });

    let total: usize = anchors.iter().map(|a| a.triples).sum();
    if total == 0 {
        return Err(Error::EmptyTripleSet);
    }
    let scale = 1.0 / total as f64;
    let value = anchors.iter().map(|a| a.value).sum::<f64>() * scale;

    // v_i·t_b feeds ∂v_i and ∂t_b; t_i·v_b feeds ∂t_i and ∂v_b.
    let d = video.cols();
    let mut grad_video = Matrix::zeros(n, d);
    let mut grad_text = Matrix::zeros(n, d);
    for (i, a) in anchors.iter().enumerate() {
        for b in 0..n {
            let c = a.coef_vt[b] * scale;
            if c != 0.0 {
                crate::matrix::axpy(grad_video.row_mut(i), c, text.row(b));
                crate::matrix::axpy(grad_text.row_mut(b), c, video.row(i));
            }
            let c = a.coef_tv[b] * scale;
            if c != 0.0 {
                crate::matrix::axpy(grad_text.row_mut(i), c, video.row(b));
                crate::matrix::axpy(grad_video.row_mut(b), c, text.row(i));
            }
        }
    }
    LossResult {
        value,
        grad_video,
        grad_text,
    }
    .check_finite()
}

/// Smallest `|hinge argument|` over every triple term. Gradients are only
/// classical away from zero; finite-difference probes should keep their
/// step below this distance.
pub fn hinge_kink_distance(
    video: &Matrix,
    text: &Matrix,
    corr: &CorrelationMatrix,
    margin: Margin,
    positive_threshold: f64,
) -> Result<f64> {
    check_inputs(video, text, corr, margin, positive_threshold)?;
    let n = video.rows();
    let per_anchor = map_range(n, |i| {
        let (pos, neg) = split_anchor(corr, i, positive_threshold);
        let mut best = f64::INFINITY;
        for &j in &pos {
            let m = margin.value(corr.get(i, j));
            for &k in &neg {
                let a = m + dot(video.row(i), text.row(k)) - dot(video.row(i), text.row(j));
                let b = m + dot(text.row(i), video.row(k)) - dot(text.row(i), video.row(j));
                best = best.min(a.abs()).min(b.abs());
            }
        }
        best
    });
    Ok(per_anchor.into_iter().fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::validate_correlation;

    fn corr(rows: &[&[f64]]) -> CorrelationMatrix {
        validate_correlation(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn satisfied_margin_is_zero() {
        // One triple (0, 0, 1): row 1 has no negative.
        let c = corr(&[&[1.0, 0.0], &[1.0, 1.0]]);
        let v = Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        let t = v.clone();
        let r = mi_mm(&v, &t, &c, 0.2, 0.1).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.grad_video.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn equal_similarities_leave_bare_margin() {
        let c = corr(&[&[1.0, 0.0], &[1.0, 1.0]]);
        let v = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap();
        let t = Matrix::from_rows(&[[0.0, 1.0], [0.0, 1.0]]).unwrap();
        // s(0,0) = s(0,1) = 0 in both directions.
        let r = mi_mm(&v, &t, &c, 0.2, 0.1).unwrap();
        assert!((r.value - 0.4).abs() < 1e-15);
    }

    #[test]
    fn adaptive_scales_margin() {
        // c_01 = 0.5 admitted as positive; with equal similarities every
        // triple costs 2·c_ij·γ.
        let c = corr(&[&[1.0, 0.5, 0.0], &[0.5, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let v = Matrix::from_rows(&[[0.0, 0.0, 1.0]; 3]).unwrap();
        let t = Matrix::from_rows(&[[1.0, 0.0, 0.0]; 3]).unwrap();
        let r = adaptive_mi_mm(&v, &t, &c, 0.4, 0.1).unwrap();
        // Triples: anchor 0 → j∈{0,1}, k=2; anchor 1 → j∈{0,1}, k=2;
        // anchor 2 → j=2, k∈{0,1}. Margins: 0.4, 0.2, 0.2, 0.4, 0.4, 0.4.
        let expected = 2.0 * (0.4 + 0.2 + 0.2 + 0.4 + 0.4 + 0.4) / 6.0;
        assert!((r.value - expected).abs() < 1e-15);
        assert_eq!(Margin::Adaptive(0.4).value(0.1), 0.1 * 0.4);
    }

    #[test]
    fn no_negatives_is_an_error() {
        let c = corr(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let v = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(
            mi_mm(&v, &v, &c, 0.2, 0.1),
            Err(Error::EmptyTripleSet)
        ));
    }

    #[test]
    fn shape_checked() {
        let c = corr(&[&[1.0]]);
        let v = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(
            mi_mm(&v, &v, &c, 0.2, 0.1),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
