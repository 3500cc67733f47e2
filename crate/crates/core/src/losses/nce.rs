use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::numeric::logsumexp;
use crate::par::map_range;
use crate::sampling::{PositiveSets, TrainingBatch};

use super::{check_pair, check_tau, grads_from_pair_coefficients, LossResult};

/// Scaled logits `logits[a][b] = v_a · t_b / tau`.
fn logits(video: &Matrix, text: &Matrix, tau: f64) -> Matrix {
    let n = video.rows();
    let rows = map_range(n, |a| {
        (0..n)
            .map(|b| dot(video.row(a), text.row(b)) / tau)
            .collect::<Vec<_>>()
    });
    Matrix::new(n, n, rows.concat()).expect("square")
}

/// Symmetric InfoNCE with the paired row as the only positive.
///
/// `L = L_v2t + L_t2v`, each direction being the mean negative log-softmax
/// of the diagonal over its row (v2t) or column (t2v) of `V Tᵀ / tau`.
pub fn info_nce(video: &Matrix, text: &Matrix, tau: f64) -> Result<LossResult> {
    check_pair(video, text)?;
    check_tau(tau)?;
    let n = video.rows();
    let s = logits(video, text, tau);
    let inv_n = 1.0 / n as f64;

    // v2t: anchor a is a row of s.
    let v2t = map_range(n, |a| {
        let row = s.row(a);
        let lse = logsumexp(row.iter().copied());
        let coef: Vec<f64> = row
            .iter()
            .enumerate()
            .map(|(b, &x)| ((x - lse).exp() - (a == b) as u8 as f64) * inv_n)
            .collect();
        (lse - row[a], coef)
    });
    // t2v: anchor a is a column of s.
    let t2v = map_range(n, |a| {
        let col = (0..n).map(|b| s.get(b, a));
        let lse = logsumexp(col.clone());
        let coef: Vec<f64> = col
            .enumerate()
            .map(|(b, x)| ((x - lse).exp() - (a == b) as u8 as f64) * inv_n)
            .collect();
        (lse - s.get(a, a), coef)
    });

    let mut coef = Matrix::zeros(n, n);
    let mut loss_v = 0.0;
    let mut loss_t = 0.0;
    for (a, (l, c)) in v2t.iter().enumerate() {
        loss_v += l;
        for (b, x) in c.iter().enumerate() {
            coef.set(a, b, coef.get(a, b) + x / tau);
        }
    }
    for (a, (l, c)) in t2v.iter().enumerate() {
        loss_t += l;
        for (b, x) in c.iter().enumerate() {
            coef.set(b, a, coef.get(b, a) + x / tau);
        }
    }
    let (grad_video, grad_text) = grads_from_pair_coefficients(video, text, &coef);
    LossResult {
        value: loss_v * inv_n + loss_t * inv_n,
        grad_video,
        grad_text,
    }
    .check_finite()
}

/// EgoNCE on a [`TrainingBatch`]; see [`ego_nce_with`].
pub fn ego_nce(batch: &TrainingBatch, tau: f64) -> Result<LossResult> {
    let positives = batch
        .positive_sets
        .as_ref()
        .ok_or(Error::MissingPositiveSets)?;
    ego_nce_with(
        &batch.video_emb,
        &batch.text_emb,
        positives,
        &batch.active_rows(),
        tau,
    )
}

/// EgoNCE over explicit matrices.
///
/// `active[r]` is false for self-filled scene-negative rows; those rows are
/// neither anchors, positives nor denominator terms and receive zero
/// gradient. For every active anchor `a`,
///
/// ```text
/// ℓ_v2t(a) = log Σ_{b active} exp(v_a·t_b/τ) − log Σ_{k ∈ P_a, active} exp(v_a·t_k/τ)
/// ```
///
/// and `ℓ_t2v` swaps the roles of `v` and `t`. The loss is the mean of
/// `ℓ_v2t` over active anchors plus the mean of `ℓ_t2v`.
pub fn ego_nce_with(
    video: &Matrix,
    text: &Matrix,
    positives: &PositiveSets,
    active: &[bool],
    tau: f64,
) -> Result<LossResult> {
    check_pair(video, text)?;
    check_tau(tau)?;
    let n = video.rows();
    if positives.len() != n || active.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "batch of {n} rows has {} positive sets and {} activity flags",
            positives.len(),
            active.len()
        )));
    }
    let m = active.iter().filter(|&&a| a).count();
    if m == 0 {
        return Err(Error::ShapeMismatch("batch has no active rows".into()));
    }
    let s = logits(video, text, tau);
    let inv_m = 1.0 / m as f64;

    // One direction: `score(a, b)` is the logit of anchor a against item b.
    // Returns the anchor loss and ∂ℓ/∂score(a, ·).
    let anchor_term = |a: usize, score: &dyn Fn(usize) -> f64| -> (f64, Vec<f64>) {
        if !active[a] {
            return (0.0, vec![0.0; n]);
        }
        let den_idx = (0..n).filter(|&b| active[b]);
        let num_idx = positives.get(a).iter().copied().filter(|&k| active[k]);
        let lse_den = logsumexp(den_idx.clone().map(score));
        let lse_num = logsumexp(num_idx.clone().map(score));
        let mut coef = vec![0.0; n];
        for b in den_idx {
            coef[b] += (score(b) - lse_den).exp() * inv_m;
        }
        for k in num_idx {
            coef[k] -= (score(k) - lse_num).exp() * inv_m;
        }
        (lse_den - lse_num, coef)
    };

    let v2t = map_range(n, |a| anchor_term(a, &|b| s.get(a, b)));
    let t2v = map_range(n, |a| anchor_term(a, &|b| s.get(b, a)));

    let mut coef = Matrix::zeros(n, n);
    let mut loss_v = 0.0;
    let mut loss_t = 0.0;
    for (a, (l, c)) in v2t.iter().enumerate() {
        loss_v += l;
        for (b, x) in c.iter().enumerate() {
            coef.set(a, b, coef.get(a, b) + x / tau);
        }
    }
    for (a, (l, c)) in t2v.iter().enumerate() {
        loss_t += l;
        for (b, x) in c.iter().enumerate() {
            coef.set(b, a, coef.get(b, a) + x / tau);
        }
    }
    let (grad_video, grad_text) = grads_from_pair_coefficients(video, text, &coef);
    LossResult {
        value: loss_v * inv_m + loss_t * inv_m,
        grad_video,
        grad_text,
    }
    .check_finite()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn single_pair_is_zero() {
        let v = m(&[&[0.6, 0.8]]);
        let t = m(&[&[1.0, 0.0]]);
        let r = info_nce(&v, &t, 0.05).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.grad_video.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn two_by_two_closed_form() {
        // v_i · t_j = δ_ij, τ = 1: each direction is log(1 + e^{-1}).
        let v = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let t = v.clone();
        let r = info_nce(&v, &t, 1.0).unwrap();
        let per_direction = (1.0 + (-1.0f64).exp()).ln();
        assert!((r.value - 2.0 * per_direction).abs() < 1e-15);
    }

    #[test]
    fn one_anchor_with_scene_negative() {
        // Rows: anchor 0 and its scene negative 1. v_0·t_0 = 1, v_0·t_1 = 0.
        let v = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let t = v.clone();
        let p = PositiveSets::identity(2);
        let r = ego_nce_with(&v, &t, &p, &[true, true], 1.0).unwrap();
        // Both rows anchor; each direction averages two identical terms.
        let expected = 2.0 * (1.0 + (-1.0f64).exp()).ln();
        assert!((r.value - expected).abs() < 1e-15);
    }

    #[test]
    fn self_filled_rows_are_inert() {
        let v = m(&[&[1.0, 0.0], &[0.6, 0.8], &[1.0, 0.0]]);
        let t = m(&[&[0.8, 0.6], &[0.0, 1.0], &[0.8, 0.6]]);
        let p = PositiveSets::from_lists(vec![vec![2], vec![], vec![0]]).unwrap();
        let with_fill = ego_nce_with(&v, &t, &p, &[true, true, false], 0.1).unwrap();
        let base = ego_nce_with(
            &v.select_rows(&[0, 1]),
            &t.select_rows(&[0, 1]),
            &PositiveSets::identity(2),
            &[true, true],
            0.1,
        )
        .unwrap();
        assert!((with_fill.value - base.value).abs() < 1e-14);
        assert!(with_fill.grad_video.row(2).iter().all(|&g| g == 0.0));
        assert!(with_fill.grad_text.row(2).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn errors() {
        let v = m(&[&[1.0, 0.0]]);
        let t = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(matches!(
            info_nce(&v, &t, 0.05),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            info_nce(&v, &v, 0.0),
            Err(Error::NonPositiveTau(_))
        ));
        assert!(matches!(
            info_nce(&v, &v, -1.0),
            Err(Error::NonPositiveTau(_))
        ));
    }
}
