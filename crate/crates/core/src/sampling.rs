//! Batch construction: action-aware positive sets, scene-aware negatives drawn
//! from temporally adjacent clips of the same video, and graded action
//! correlations.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{validate_correlation, CorrelationMatrix, EmbeddingMatrix, Matrix};

/// Default adjacency window for scene negatives, in seconds.
pub const DEFAULT_WINDOW_SECS: f64 = 60.0;

/// Per-clip metadata. Tags and class ids arrive pre-extracted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub clip_id: String,
    pub video_id: String,
    pub t_start: f64,
    pub t_end: f64,
    pub nouns: BTreeSet<i64>,
    pub verbs: BTreeSet<i64>,
    pub verb_class: u32,
    pub noun_class: u32,
    pub text: String,
}

impl ClipMeta {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.t_start + self.t_end)
    }

    /// True when both tag sets intersect those of `other`.
    pub fn shares_action(&self, other: &ClipMeta) -> bool {
        intersects(&self.nouns, &other.nouns) && intersects(&self.verbs, &other.verbs)
    }
}

fn intersects(a: &BTreeSet<i64>, b: &BTreeSet<i64>) -> bool {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small.iter().any(|x| large.contains(x))
}

/// For every batch index `i`, the sorted batch indices treated as positives
/// of `i`. Always reflexive and symmetric.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositiveSets(Vec<Vec<usize>>);

impl PositiveSets {
    /// `P_i = {i}` for every index.
    pub fn identity(n: usize) -> Self {
        Self((0..n).map(|i| vec![i]).collect())
    }

    /// Builds sets from explicit index lists. Each list is sorted and
    /// deduplicated; the anchor itself is always added.
    pub fn from_lists(lists: Vec<Vec<usize>>) -> Result<Self> {
        let n = lists.len();
        let mut out = Vec::with_capacity(n);
        for (i, mut l) in lists.into_iter().enumerate() {
            if let Some(&bad) = l.iter().find(|&&j| j >= n) {
                return Err(Error::ShapeMismatch(format!(
                    "positive index {bad} out of range for batch of {n}"
                )));
            }
            l.push(i);
            l.sort_unstable();
            l.dedup();
            out.push(l);
        }
        Ok(Self(out))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> &[usize] {
        &self.0[i]
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.0[i].binary_search(&j).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.0.iter().map(Vec::as_slice)
    }
}

/// `P_i = {j | nouns(j) ∩ nouns(i) ≠ ∅ and verbs(j) ∩ verbs(i) ≠ ∅} ∪ {i}`.
pub fn build_positive_sets(metas: &[ClipMeta]) -> PositiveSets {
    let n = metas.len();
    let mut sets = vec![Vec::new(); n];
    for i in 0..n {
        sets[i].push(i);
        for j in (i + 1)..n {
            if metas[i].shares_action(&metas[j]) {
                sets[i].push(j);
                sets[j].push(i);
            }
        }
    }
    for s in &mut sets {
        s.sort_unstable();
    }
    PositiveSets(sets)
}

/// Chosen scene negative per batch index, as an index into the pool.
pub type ScenePairing = Vec<Option<usize>>;

/// Pool indices eligible as scene negatives of `anchor`: same video, a
/// different clip, midpoint gap strictly below `window`.
pub fn scene_candidates(anchor: &ClipMeta, pool: &[ClipMeta], window: f64) -> Vec<usize> {
    let mid = anchor.midpoint();
    pool.iter()
        .enumerate()
        .filter(|(_, c)| {
            c.video_id == anchor.video_id
                && c.clip_id != anchor.clip_id
                && (c.midpoint() - mid).abs() < window
        })
        .map(|(k, _)| k)
        .collect()
}

/// Draws one scene negative per batch clip, uniformly among its candidates.
pub fn sample_scene_negatives(
    batch: &[ClipMeta],
    pool: &[ClipMeta],
    window: f64,
    seed: u64,
) -> Result<ScenePairing> {
    if window.is_nan() || window <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "adjacency window must be positive, got {window}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(batch
        .iter()
        .map(|clip| {
            scene_candidates(clip, pool, window)
                .choose(&mut rng)
                .copied()
        })
        .collect())
}

/// Paired video/text embeddings plus metadata.
///
/// The first `base_size` rows form the base batch. An augmented batch has
/// `2 * base_size` rows where row `base_size + i` is the scene negative of
/// row `i`; rows whose pairing was absent duplicate the base clip and are
/// flagged in `self_filled`.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub video_emb: EmbeddingMatrix,
    pub text_emb: EmbeddingMatrix,
    pub meta: Vec<ClipMeta>,
    pub base_size: usize,
    pub self_filled: Vec<bool>,
    pub positive_sets: Option<PositiveSets>,
}

impl TrainingBatch {
    /// Un-augmented batch with positive sets derived from `meta`.
    pub fn new(
        video_emb: EmbeddingMatrix,
        text_emb: EmbeddingMatrix,
        meta: Vec<ClipMeta>,
    ) -> Result<Self> {
        let n = meta.len();
        if video_emb.rows() != n || text_emb.rows() != n {
            return Err(Error::ShapeMismatch(format!(
                "batch has {n} metadata rows, {} video rows, {} text rows",
                video_emb.rows(),
                text_emb.rows()
            )));
        }
        if video_emb.cols() != text_emb.cols() {
            return Err(Error::ShapeMismatch(format!(
                "video dim {} != text dim {}",
                video_emb.cols(),
                text_emb.cols()
            )));
        }
        let positive_sets = Some(build_positive_sets(&meta));
        Ok(Self {
            video_emb,
            text_emb,
            meta,
            base_size: n,
            self_filled: vec![false; n],
            positive_sets,
        })
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn is_augmented(&self) -> bool {
        self.len() > self.base_size
    }

    /// Rows that take part in the loss (everything except self-filled rows).
    pub fn active_rows(&self) -> Vec<bool> {
        self.self_filled.iter().map(|&f| !f).collect()
    }
}

/// Appends the scene negatives selected by `pairing` to `base`.
pub fn augment_batch(
    base: &TrainingBatch,
    pairing: &[Option<usize>],
    pool_meta: &[ClipMeta],
    pool_video: &EmbeddingMatrix,
    pool_text: &EmbeddingMatrix,
) -> Result<TrainingBatch> {
    let n = base.base_size;
    if base.is_augmented() {
        return Err(Error::InvalidPairing("batch is already augmented".into()));
    }
    if pairing.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "pairing has {} entries for a batch of {n}",
            pairing.len()
        )));
    }
    if pool_video.cols() != base.video_emb.cols() || pool_text.cols() != base.text_emb.cols() {
        return Err(Error::ShapeMismatch(format!(
            "pool dims ({}, {}) differ from batch dims ({}, {})",
            pool_video.cols(),
            pool_text.cols(),
            base.video_emb.cols(),
            base.text_emb.cols()
        )));
    }
    if pool_video.rows() != pool_meta.len() || pool_text.rows() != pool_meta.len() {
        return Err(Error::ShapeMismatch(format!(
            "pool has {} metadata rows, {} video rows, {} text rows",
            pool_meta.len(),
            pool_video.rows(),
            pool_text.rows()
        )));
    }

    let mut video_rows = Vec::with_capacity(n);
    let mut text_rows = Vec::with_capacity(n);
    let mut meta = base.meta.clone();
    let mut self_filled = base.self_filled.clone();
    for (i, p) in pairing.iter().enumerate() {
        match *p {
            Some(k) => {
                let clip = pool_meta
                    .get(k)
                    .ok_or_else(|| Error::InvalidPairing(format!("pool index {k} out of range")))?;
                if clip.video_id != base.meta[i].video_id {
                    return Err(Error::InvalidPairing(format!(
                        "clip {} is not from video {}",
                        clip.clip_id, base.meta[i].video_id
                    )));
                }
                video_rows.push(pool_video.row(k).to_vec());
                text_rows.push(pool_text.row(k).to_vec());
                meta.push(clip.clone());
                self_filled.push(false);
            }
            None => {
                video_rows.push(base.video_emb.row(i).to_vec());
                text_rows.push(base.text_emb.row(i).to_vec());
                meta.push(base.meta[i].clone());
                self_filled.push(true);
            }
        }
    }
    let extra_video = EmbeddingMatrix::from_normalized_unchecked(Matrix::from_rows(&video_rows)?);
    let extra_text = EmbeddingMatrix::from_normalized_unchecked(Matrix::from_rows(&text_rows)?);
    let positive_sets = Some(build_positive_sets(&meta));
    Ok(TrainingBatch {
        video_emb: base.video_emb.vstack(&extra_video)?,
        text_emb: base.text_emb.vstack(&extra_text)?,
        meta,
        base_size: n,
        self_filled,
        positive_sets,
    })
}

/// `c_ij = (1[verb_i = verb_j] + 1[noun_i = noun_j]) / 2`, texts on rows.
pub fn compute_correlation(text: &[ClipMeta], video: &[ClipMeta]) -> CorrelationMatrix {
    let m = Matrix::from_fn(text.len(), video.len(), |i, j| {
        let verb = (text[i].verb_class == video[j].verb_class) as u8 as f64;
        let noun = (text[i].noun_class == video[j].noun_class) as u8 as f64;
        0.5 * (verb + noun)
    });
    validate_correlation(m).expect("indicator average lies in [0, 1]")
}
