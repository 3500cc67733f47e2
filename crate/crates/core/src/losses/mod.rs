//! Training objectives with hand-derived gradients.
//!
//! Every loss takes the video and text embeddings as plain matrices and
//! returns the scalar value together with `∂L/∂video` and `∂L/∂text`. The
//! math does not assume unit-norm rows, so the same functions serve finite
//! difference probes off the sphere.
//!
//! | loss | positives | negatives |
//! |------|-----------|-----------|
//! | [`info_nce`] | paired row only | every other row |
//! | [`ego_nce`] | shared noun and verb | in-batch rows plus scene negatives |
//! | [`mi_mm`] | `c_ij > threshold` | `c_ik ≤ threshold`, fixed margin |
//! | [`adaptive_mi_mm`] | as `mi_mm` | as `mi_mm`, margin `c_ij · γ` |

mod margin;
mod nce;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{CorrelationMatrix, Matrix};
use crate::sampling::TrainingBatch;

pub use margin::{adaptive_mi_mm, hinge_kink_distance, mi_mm, Margin};
pub use nce::{ego_nce, ego_nce_with, info_nce};

pub const DEFAULT_TAU: f64 = 0.05;
pub const DEFAULT_GAMMA_MIMM: f64 = 0.2;
pub const DEFAULT_GAMMA_ADAPTIVE: f64 = 0.4;
pub const DEFAULT_POSITIVE_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad_video: Matrix,
    pub grad_text: Matrix,
}

impl LossResult {
    pub(crate) fn check_finite(self) -> Result<Self> {
        if !self.value.is_finite() || !self.grad_video.is_finite() || !self.grad_text.is_finite() {
            return Err(Error::NonFinite { what: "loss" });
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "infonce")]
    InfoNce,
    #[serde(rename = "egonce")]
    EgoNce,
    #[serde(rename = "mimm")]
    MiMm,
    #[serde(rename = "ada_mimm", alias = "ada-mimm")]
    AdaptiveMiMm,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [
        LossKind::InfoNce,
        LossKind::EgoNce,
        LossKind::MiMm,
        LossKind::AdaptiveMiMm,
    ];

    pub fn default_gamma(self) -> f64 {
        match self {
            LossKind::AdaptiveMiMm => DEFAULT_GAMMA_ADAPTIVE,
            _ => DEFAULT_GAMMA_MIMM,
        }
    }

    pub fn needs_correlation(self) -> bool {
        matches!(self, LossKind::MiMm | LossKind::AdaptiveMiMm)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::InfoNce => "infonce",
            LossKind::EgoNce => "egonce",
            LossKind::MiMm => "mimm",
            LossKind::AdaptiveMiMm => "ada_mimm",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "infonce" => Ok(LossKind::InfoNce),
            "egonce" => Ok(LossKind::EgoNce),
            "mimm" => Ok(LossKind::MiMm),
            "ada_mimm" | "ada-mimm" => Ok(LossKind::AdaptiveMiMm),
            other => Err(Error::InvalidConfig(format!("unknown loss `{other}`"))),
        }
    }
}

/// Loss hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    pub gamma: f64,
    pub positive_threshold: f64,
}

impl LossConfig {
    /// Defaults for `kind`; only the margin differs between kinds.
    pub fn for_kind(kind: LossKind) -> Self {
        Self {
            tau: DEFAULT_TAU,
            gamma: kind.default_gamma(),
            positive_threshold: DEFAULT_POSITIVE_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.tau.is_finite() || self.tau <= 0.0 {
            return Err(Error::NonPositiveTau(self.tau));
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "margin must be non-negative, got {}",
                self.gamma
            )));
        }
        if !(0.0..1.0).contains(&self.positive_threshold) {
            return Err(Error::InvalidConfig(format!(
                "positive threshold must lie in [0, 1), got {}",
                self.positive_threshold
            )));
        }
        Ok(())
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::for_kind(LossKind::MiMm)
    }
}

/// Evaluates `kind` on a batch. Margin losses need `corr`; EgoNCE uses the
/// batch's positive sets and scene negatives.
pub fn compute_loss(
    kind: LossKind,
    batch: &TrainingBatch,
    corr: Option<&CorrelationMatrix>,
    config: &LossConfig,
) -> Result<LossResult> {
    config.validate()?;
    match kind {
        LossKind::InfoNce => info_nce(&batch.video_emb, &batch.text_emb, config.tau),
        LossKind::EgoNce => ego_nce(batch, config.tau),
        LossKind::MiMm | LossKind::AdaptiveMiMm => {
            let corr = corr.ok_or_else(|| {
                Error::InvalidConfig(format!("loss `{kind}` needs a correlation matrix"))
            })?;
            let f = if kind == LossKind::MiMm {
                mi_mm
            } else {
                adaptive_mi_mm
            };
            f(
                &batch.video_emb,
                &batch.text_emb,
                corr,
                config.gamma,
                config.positive_threshold,
            )
        }
    }
}

pub(crate) fn check_pair(video: &Matrix, text: &Matrix) -> Result<()> {
    if video.shape() != text.shape() {
        return Err(Error::ShapeMismatch(format!(
            "video is {}x{}, text is {}x{}",
            video.rows(),
            video.cols(),
            text.rows(),
            text.cols()
        )));
    }
    if video.rows() == 0 || video.cols() == 0 {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    Ok(())
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveTau(tau))
    }
}

/// Turns coefficient matrices on the score grid into embedding gradients.
///
/// `coef[a][b]` is `∂L/∂(v_a · t_b)` after any temperature scaling has been
/// folded in, so `∂L/∂v_a = Σ_b coef[a][b] t_b` and
/// `∂L/∂t_b = Σ_a coef[a][b] v_a`.
pub(crate) fn grads_from_pair_coefficients(
    video: &Matrix,
    text: &Matrix,
    coef: &Matrix,
) -> (Matrix, Matrix) {
    let (n, d) = video.shape();
    let gv = crate::par::map_range(n, |a| {
        let mut g = vec![0.0; d];
        for b in 0..n {
            let c = coef.get(a, b);
            if c != 0.0 {
                crate::matrix::axpy(&mut g, c, text.row(b));
            }
        }
        g
    });
    let gt = crate::par::map_range(n, |b| {
        let mut g = vec![0.0; d];
        for a in 0..n {
            let c = coef.get(a, b);
            if c != 0.0 {
                crate::matrix::axpy(&mut g, c, video.row(a));
            }
        }
        g
    });
    (
        Matrix::new(n, d, gv.concat()).expect("rows are d wide"),
        Matrix::new(n, d, gt.concat()).expect("rows are d wide"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_round_trip() {
        for k in LossKind::ALL {
            assert_eq!(k.to_string().parse::<LossKind>().unwrap(), k);
        }
        assert_eq!(
            "ada-mimm".parse::<LossKind>().unwrap(),
            LossKind::AdaptiveMiMm
        );
        assert!("triplet".parse::<LossKind>().is_err());
    }

    #[test]
    fn config_defaults() {
        let c = LossConfig::for_kind(LossKind::MiMm);
        assert_eq!((c.tau, c.gamma, c.positive_threshold), (0.05, 0.2, 0.1));
        assert_eq!(LossConfig::for_kind(LossKind::AdaptiveMiMm).gamma, 0.4);
    }

    #[test]
    fn config_validation() {
        let mut c = LossConfig::default();
        c.tau = 0.0;
        assert!(matches!(c.validate(), Err(Error::NonPositiveTau(_))));
        let mut c = LossConfig::default();
        c.gamma = -0.1;
        assert!(c.validate().is_err());
        let mut c = LossConfig::default();
        c.positive_threshold = 1.0;
        assert!(c.validate().is_err());
    }
}
