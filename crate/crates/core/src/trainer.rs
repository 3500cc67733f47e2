//! Fine-tuning of linear projection heads over frozen features.
//!
//! Forward pass: `y = normalize(x · W)` per modality. The loss gradient with
//! respect to the unit-norm outputs is pulled back through the normalization
//! (`∂x̂ = (g − y (y·g)) / ‖x̂‖` for `x̂ = x · W`) and then into `W`. Updates are
//! plain gradient descent.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{plain_scores, similarity};
use crate::losses::{
    adaptive_mi_mm, ego_nce_with, info_nce, mi_mm, LossConfig, LossKind, LossResult,
};
use crate::matrix::{dot, norm, EmbeddingMatrix, Matrix, ZERO_NORM};
use crate::metrics::evaluate;
use crate::sampling::{
    build_positive_sets, compute_correlation, sample_scene_negatives, ClipMeta, DEFAULT_WINDOW_SECS,
};

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    /// `d_in × d_out`.
    pub weight_video: Matrix,
    /// `d_in × d_out`.
    pub weight_text: Matrix,
}

impl ProjectionHead {
    pub fn d_out(&self) -> usize {
        self.weight_video.cols()
    }

    fn is_finite(&self) -> bool {
        self.weight_video.is_finite() && self.weight_text.is_finite()
    }
}

/// Uniform initialization in `[-1/√d_in, 1/√d_in]`.
pub fn init_head(d_in: usize, d_out: usize, seed: u64) -> Result<ProjectionHead> {
    if d_in == 0 || d_out == 0 {
        return Err(Error::InvalidConfig(format!(
            "head dimensions must be positive, got {d_in}x{d_out}"
        )));
    }
    let bound = 1.0 / (d_in as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM);
    let mut draw = |_, _| rng.random_range(-bound..=bound);
    let weight_video = Matrix::from_fn(d_in, d_out, &mut draw);
    let weight_text = Matrix::from_fn(d_in, d_out, &mut draw);
    Ok(ProjectionHead {
        weight_video,
        weight_text,
    })
}

/// Projected rows plus their pre-normalization norms.
struct Projection {
    unit: Matrix,
    norms: Vec<f64>,
}

fn project(features: &Matrix, weight: &Matrix) -> Result<Projection> {
    let mut unit = features.matmul(weight)?;
    let mut norms = Vec::with_capacity(unit.rows());
    for i in 0..unit.rows() {
        let row = unit.row_mut(i);
        let n = norm(row);
        if n.is_nan() || n < ZERO_NORM {
            if !n.is_finite() {
                return Err(Error::NonFinite {
                    what: "projected features",
                });
            }
            return Err(Error::ZeroRow { row: i, norm: n });
        }
        row.iter_mut().for_each(|x| *x /= n);
        norms.push(n);
    }
    Ok(Projection { unit, norms })
}

/// Pulls `∂L/∂y` back through `y = normalize(x · W)` to `∂L/∂W`.
fn backprop(features: &Matrix, proj: &Projection, grad_unit: &Matrix) -> Matrix {
    let (n, d_out) = grad_unit.shape();
    let mut grad_pre = Matrix::zeros(n, d_out);
    for r in 0..n {
        let y = proj.unit.row(r);
        let g = grad_unit.row(r);
        let radial = dot(y, g);
        for ((o, &gi), &yi) in grad_pre.row_mut(r).iter_mut().zip(g).zip(y) {
            *o = (gi - yi * radial) / proj.norms[r];
        }
    }
    features
        .transpose()
        .matmul(&grad_pre)
        .expect("feature rows match projected rows")
}

fn check_features(head: &ProjectionHead, video: &Matrix, text: &Matrix) -> Result<()> {
    if video.cols() != head.weight_video.rows() || text.cols() != head.weight_text.rows() {
        return Err(Error::ShapeMismatch(format!(
            "features have dims ({}, {}), head expects ({}, {})",
            video.cols(),
            text.cols(),
            head.weight_video.rows(),
            head.weight_text.rows()
        )));
    }
    if video.rows() != text.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} video rows vs {} text rows",
            video.rows(),
            text.rows()
        )));
    }
    Ok(())
}

/// Projects and L2-normalizes both modalities.
pub fn forward(
    head: &ProjectionHead,
    video_features: &Matrix,
    text_features: &Matrix,
) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    check_features(head, video_features, text_features)?;
    let v = project(video_features, &head.weight_video)?;
    let t = project(text_features, &head.weight_text)?;
    Ok((
        EmbeddingMatrix::from_normalized_unchecked(v.unit),
        EmbeddingMatrix::from_normalized_unchecked(t.unit),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient {
    pub loss: f64,
    pub grad_video: Matrix,
    pub grad_text: Matrix,
}

/// Loss of one assembled batch and its gradient with respect to the head.
///
/// Rows of the feature matrices line up with `meta`. For EgoNCE, `active`
/// marks which rows take part (self-filled scene negatives are inactive);
/// other losses ignore it.
pub fn head_loss_and_grad(
    head: &ProjectionHead,
    video_features: &Matrix,
    text_features: &Matrix,
    meta: &[ClipMeta],
    active: Option<&[bool]>,
    kind: LossKind,
    loss: &LossConfig,
) -> Result<HeadGradient> {
    check_features(head, video_features, text_features)?;
    if meta.len() != video_features.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} metadata rows for {} feature rows",
            meta.len(),
            video_features.rows()
        )));
    }
    loss.validate()?;
    let v = project(video_features, &head.weight_video)?;
    let t = project(text_features, &head.weight_text)?;
    let LossResult {
        value,
        grad_video,
        grad_text,
    } = match kind {
        LossKind::InfoNce => info_nce(&v.unit, &t.unit, loss.tau)?,
        LossKind::EgoNce => {
            let all_active = vec![true; meta.len()];
            let active = active.unwrap_or(&all_active);
            ego_nce_with(
                &v.unit,
                &t.unit,
                &build_positive_sets(meta),
                active,
                loss.tau,
            )?
        }
        LossKind::MiMm | LossKind::AdaptiveMiMm => {
            let corr = compute_correlation(meta, meta);
            let f = if kind == LossKind::MiMm {
                mi_mm
            } else {
                adaptive_mi_mm
            };
            f(&v.unit, &t.unit, &corr, loss.gamma, loss.positive_threshold)?
        }
    };
    Ok(HeadGradient {
        loss: value,
        grad_video: backprop(video_features, &v, &grad_video),
        grad_text: backprop(text_features, &t, &grad_text),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub tau: f64,
    /// Defaults to the margin of `loss_kind` when absent.
    pub gamma: Option<f64>,
    pub positive_threshold: f64,
    /// Scene-negative adjacency window (EgoNCE only), seconds.
    pub window: f64,
    pub d_out: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let loss = LossConfig::for_kind(LossKind::MiMm);
        Self {
            loss_kind: LossKind::MiMm,
            learning_rate: 3e-5,
            epochs: 100,
            batch_size: 64,
            seed: 0,
            tau: loss.tau,
            gamma: None,
            positive_threshold: loss.positive_threshold,
            window: DEFAULT_WINDOW_SECS,
            d_out: 256,
        }
    }
}

impl TrainConfig {
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            tau: self.tau,
            gamma: self.gamma.unwrap_or_else(|| self.loss_kind.default_gamma()),
            positive_threshold: self.positive_threshold,
        }
    }

    /// Copy with the margin made explicit, for echoing in outputs.
    pub fn resolved(&self) -> Self {
        Self {
            gamma: Some(self.loss_config().gamma),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch size must be at least 2".into()));
        }
        if self.window.is_nan() || self.window <= 0.0 {
            return Err(Error::InvalidConfig("window must be positive".into()));
        }
        if self.d_out == 0 {
            return Err(Error::InvalidConfig("d_out must be positive".into()));
        }
        self.loss_config().validate()
    }
}

/// Features and metadata for one split; rows are index-paired.
#[derive(Debug, Clone)]
pub struct Split {
    pub video: Matrix,
    pub text: Matrix,
    pub meta: Vec<ClipMeta>,
}

impl Split {
    pub fn new(video: Matrix, text: Matrix, meta: Vec<ClipMeta>) -> Result<Self> {
        if video.rows() != meta.len() || text.rows() != meta.len() {
            return Err(Error::ShapeMismatch(format!(
                "split has {} metadata rows, {} video rows, {} text rows",
                meta.len(),
                video.rows(),
                text.rows()
            )));
        }
        Ok(Self { video, text, meta })
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Split {
        Split {
            video: self.video.select_rows(rows),
            text: self.text.select_rows(rows),
            meta: rows.iter().map(|&r| self.meta[r].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over the epoch's batches of the loss before each update.
    pub loss: f64,
    pub map_avg: f64,
    pub ndcg_avg: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub records: Vec<EpochRecord>,
}

/// Validation mAP/nDCG averages with plain scoring.
pub fn validate_head(head: &ProjectionHead, split: &Split) -> Result<(f64, f64)> {
    let (v, t) = forward(head, &split.video, &split.text)?;
    let scores = plain_scores(&similarity(&t, &v)?)?;
    let corr = compute_correlation(&split.meta, &split.meta);
    let report = evaluate(&scores, &corr)?;
    Ok((report.map_avg, report.ndcg_avg))
}

/// Shuffled index chunks for one epoch. A single full batch keeps the natural
/// order; a trailing singleton joins the previous chunk.
fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    if n <= batch_size {
        return vec![order];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch as u64));
    rng.set_stream(SHUFFLE_STREAM);
    order.shuffle(&mut rng);
    let mut chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() < 2) {
        let tail = chunks.pop().expect("non-empty");
        chunks.last_mut().expect("non-empty").extend(tail);
    }
    chunks
}

/// Rows of one batch: the base indices, then for EgoNCE a scene negative per
/// base row (or the base row again, inactive, when none exists).
fn assemble_rows(
    train: &Split,
    base: &[usize],
    config: &TrainConfig,
    epoch: usize,
) -> Result<(Vec<usize>, Option<Vec<bool>>)> {
    if config.loss_kind != LossKind::EgoNce {
        return Ok((base.to_vec(), None));
    }
    let metas: Vec<ClipMeta> = base.iter().map(|&i| train.meta[i].clone()).collect();
    let pairing = sample_scene_negatives(
        &metas,
        &train.meta,
        config.window,
        config.seed.wrapping_add(epoch as u64),
    )?;
    let mut rows = base.to_vec();
    let mut active = vec![true; base.len()];
    for (&i, p) in base.iter().zip(&pairing) {
        rows.push(p.unwrap_or(i));
        active.push(p.is_some());
    }
    Ok((rows, Some(active)))
}

fn descend(weight: &mut Matrix, grad: &Matrix, lr: f64) {
    for (w, g) in weight.as_mut_slice().iter_mut().zip(grad.as_slice()) {
        *w -= lr * g;
    }
}

/// Trains a fresh head from `config.seed` and returns it with its curve.
pub fn train(
    train: &Split,
    val: &Split,
    config: &TrainConfig,
) -> Result<(ProjectionHead, TrainingCurve)> {
    config.validate()?;
    if train.len() < 2 {
        return Err(Error::InvalidConfig(
            "training split needs at least 2 samples".into(),
        ));
    }
    if val.is_empty() {
        return Err(Error::InvalidConfig("validation split is empty".into()));
    }
    if train.video.cols() != train.text.cols() {
        return Err(Error::ShapeMismatch(format!(
            "video features have dim {}, text features {}",
            train.video.cols(),
            train.text.cols()
        )));
    }
    let head = init_head(train.video.cols(), config.d_out, config.seed)?;
    train_from(head, train, val, config)
}

/// Trains starting from an existing head.
pub fn train_from(
    mut head: ProjectionHead,
    train: &Split,
    val: &Split,
    config: &TrainConfig,
) -> Result<(ProjectionHead, TrainingCurve)> {
    config.validate()?;
    let loss_cfg = config.loss_config();
    let mut curve = TrainingCurve::default();
    for epoch in 0..config.epochs {
        let mut losses = Vec::new();
        for base in epoch_batches(train.len(), config.batch_size, config.seed, epoch) {
            let (rows, active) = assemble_rows(train, &base, config, epoch)?;
            let batch = train.select(&rows);
            let step = head_loss_and_grad(
                &head,
                &batch.video,
                &batch.text,
                &batch.meta,
                active.as_deref(),
                config.loss_kind,
                &loss_cfg,
            );
            let step = match step {
                Ok(s) => s,
                // Single-class mini-batch: no triples, no step.
                Err(Error::EmptyTripleSet) => continue,
                Err(Error::NonFinite { .. }) => {
                    return Err(Error::Diverged {
                        epoch,
                        loss: f64::NAN,
                    })
                }
                Err(e) => return Err(e),
            };
            descend(
                &mut head.weight_video,
                &step.grad_video,
                config.learning_rate,
            );
            descend(&mut head.weight_text, &step.grad_text, config.learning_rate);
            if !head.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: step.loss,
                });
            }
            losses.push(step.loss);
        }
        if losses.is_empty() {
            return Err(Error::EmptyTripleSet);
        }
        let loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let (map_avg, ndcg_avg) = match validate_head(&head, val) {
            Err(Error::NonFinite { .. }) => return Err(Error::Diverged { epoch, loss }),
            other => other?,
        };
        curve.records.push(EpochRecord {
            epoch,
            loss,
            map_avg,
            ndcg_avg,
        });
    }
    Ok((head, curve))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = init_head(64, 32, 9).unwrap();
        let b = init_head(64, 32, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_head(64, 32, 10).unwrap());
        assert_eq!(a.weight_video.shape(), (64, 32));
        let bound = 1.0 / 8.0;
        let all = a
            .weight_video
            .as_slice()
            .iter()
            .chain(a.weight_text.as_slice());
        assert!(all.clone().all(|w| w.abs() <= bound));
        // Spread: the sample should come close to both ends.
        let max = all.clone().copied().fold(f64::MIN, f64::max);
        let min = all.copied().fold(f64::MAX, f64::min);
        assert!(max > 0.9 * bound && min < -0.9 * bound);
        let small = init_head(4, 2, 0).unwrap();
        assert_eq!(small.weight_text.shape(), (4, 2));
        assert!(init_head(0, 2, 0).is_err());
    }

    #[test]
    fn identity_head_keeps_unit_features() {
        let head = ProjectionHead {
            weight_video: Matrix::from_fn(3, 3, |i, j| (i == j) as u8 as f64),
            weight_text: Matrix::from_fn(3, 3, |i, j| (i == j) as u8 as f64),
        };
        let x = Matrix::from_rows(&[[0.6, 0.8, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let (v, t) = forward(&head, &x, &x).unwrap();
        assert!(v.max_abs_diff(&x) < 1e-7);
        assert!(t.max_abs_diff(&x) < 1e-7);
    }

    #[test]
    fn zero_projection_is_rejected() {
        let head = ProjectionHead {
            weight_video: Matrix::zeros(2, 2),
            weight_text: Matrix::zeros(2, 2),
        };
        let x = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        assert!(matches!(forward(&head, &x, &x), Err(Error::ZeroRow { .. })));
    }

    #[test]
    fn batches_cover_every_index_once() {
        let chunks = epoch_batches(11, 5, 3, 2);
        assert_eq!(chunks.iter().map(Vec::len).collect::<Vec<_>>(), vec![5, 6]);
        let mut all: Vec<usize> = chunks.concat();
        all.sort_unstable();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
        assert_eq!(epoch_batches(4, 8, 3, 0), vec![vec![0, 1, 2, 3]]);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.batch_size = 1;
        assert!(c.validate().is_err());
        let c = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            loss_kind: LossKind::AdaptiveMiMm,
            ..TrainConfig::default()
        };
        assert_eq!(c.loss_config().gamma, 0.4);
        assert_eq!(c.resolved().gamma, Some(0.4));
    }
}
