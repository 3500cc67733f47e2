//! Seeded fixtures shared by the integration tests and benches.
#![allow(dead_code)]

use std::collections::BTreeSet;

use mir_core::sampling::ClipMeta;
use mir_core::trainer::Split;
use mir_core::{l2_normalize, EmbeddingMatrix, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> EmbeddingMatrix {
    l2_normalize(&gaussian(rng, rows, cols)).unwrap()
}

pub fn clip(id: usize, video: usize, t0: f64, t1: f64) -> ClipMeta {
    ClipMeta {
        clip_id: format!("c{id}"),
        video_id: format!("v{video}"),
        t_start: t0,
        t_end: t1,
        nouns: BTreeSet::new(),
        verbs: BTreeSet::new(),
        verb_class: 0,
        noun_class: 0,
        text: String::new(),
    }
}

/// Random metadata: small tag vocabularies so intersections are common,
/// a few videos, clips a few seconds long spread over a few minutes.
pub fn random_metas(rng: &mut ChaCha8Rng, n: usize) -> Vec<ClipMeta> {
    (0..n)
        .map(|i| {
            let t0 = rng.random_range(0.0..240.0);
            let mut c = clip(
                i,
                rng.random_range(0..3),
                t0,
                t0 + rng.random_range(0.5..8.0),
            );
            c.nouns = (0..rng.random_range(0..3))
                .map(|_| rng.random_range(0..4))
                .collect();
            c.verbs = (0..rng.random_range(0..3))
                .map(|_| rng.random_range(0..4))
                .collect();
            c.verb_class = rng.random_range(0..3);
            c.noun_class = rng.random_range(0..3);
            c.text = format!("narration {i}");
            c
        })
        .collect()
}

/// Correlation-style matrix with entries in {0, 0.5, 1} and unit diagonal.
pub fn random_metas_corr(rng: &mut ChaCha8Rng, n: usize) -> mir_core::CorrelationMatrix {
    let metas = random_metas(rng, n);
    mir_core::sampling::compute_correlation(&metas, &metas)
}

pub struct ClusterFixture {
    pub train: Split,
    pub val: Split,
}

pub const CLUSTERS: usize = 3;
pub const FEATURE_DIM: usize = 16;

/// Three well-separated clusters in feature space. Video and text features
/// of a cluster sit around unrelated centers, so the heads must learn the
/// alignment. Cluster `c` has verb class `c`, noun class `c`, one noun and
/// one verb tag, and its own video with 10 s clips.
pub fn three_clusters(
    seed: u64,
    per_cluster_train: usize,
    per_cluster_val: usize,
) -> ClusterFixture {
    three_clusters_with_noise(seed, per_cluster_train, per_cluster_val, NOISE)
}

pub const NOISE: f64 = 0.5;

pub fn three_clusters_with_noise(
    seed: u64,
    per_cluster_train: usize,
    per_cluster_val: usize,
    noise: f64,
) -> ClusterFixture {
    let mut r = rng(seed);
    let centers_v = gaussian(&mut r, CLUSTERS, FEATURE_DIM);
    let centers_t = gaussian(&mut r, CLUSTERS, FEATURE_DIM);
    let make = |count: usize, offset: usize, r: &mut ChaCha8Rng| {
        let n = CLUSTERS * count;
        let mut video = Matrix::zeros(n, FEATURE_DIM);
        let mut text = Matrix::zeros(n, FEATURE_DIM);
        let mut meta = Vec::with_capacity(n);
        for row in 0..n {
            let c = row % CLUSTERS;
            let slot = row / CLUSTERS;
            for k in 0..FEATURE_DIM {
                let e1: f64 = StandardNormal.sample(r);
                let e2: f64 = StandardNormal.sample(r);
                video.set(row, k, centers_v.get(c, k) + noise * e1);
                text.set(row, k, centers_t.get(c, k) + noise * e2);
            }
            let t0 = 10.0 * (offset + slot) as f64;
            let mut m = clip(offset * CLUSTERS + row, c, t0, t0 + 8.0);
            m.verb_class = c as u32;
            m.noun_class = c as u32;
            m.nouns = [c as i64].into_iter().collect();
            m.verbs = [c as i64 + 100].into_iter().collect();
            m.text = format!("action {c} clip {slot}");
            meta.push(m);
        }
        Split::new(video, text, meta).unwrap()
    };
    let train = make(per_cluster_train, 0, &mut r);
    let val = make(per_cluster_val, per_cluster_train, &mut r);
    ClusterFixture { train, val }
}
