//! Similarity and retrieval scoring.
//!
//! Matrices are laid out texts × videos. Plain scoring normalizes each video
//! column over texts. Dual-softmax first forms a per-text prior over videos
//! from `softmax(sim / prior_temperature)` along each row, multiplies it into
//! the similarities, then normalizes columns as before.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, EmbeddingMatrix, Matrix, ScoreMatrix, SimilarityMatrix};
use crate::numeric::softmax_in_place;
use crate::par::map_range;

pub const DEFAULT_PRIOR_TEMPERATURE: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    Plain,
    DualSoftmax,
}

impl fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreMethod::Plain => "plain",
            ScoreMethod::DualSoftmax => "dual-softmax",
        })
    }
}

impl FromStr for ScoreMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(ScoreMethod::Plain),
            "dual-softmax" | "dual_softmax" => Ok(ScoreMethod::DualSoftmax),
            other => Err(Error::InvalidConfig(format!(
                "unknown scoring method `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub method: ScoreMethod,
    pub prior_temperature: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            method: ScoreMethod::Plain,
            prior_temperature: DEFAULT_PRIOR_TEMPERATURE,
        }
    }
}

impl InferenceConfig {
    pub fn score(&self, sim: &SimilarityMatrix) -> Result<ScoreMatrix> {
        match self.method {
            ScoreMethod::Plain => plain_scores(sim),
            ScoreMethod::DualSoftmax => dual_softmax_scores(sim, self.prior_temperature),
        }
    }
}

/// `sim[i][j] = t_i · v_j`.
pub fn similarity(text: &EmbeddingMatrix, video: &EmbeddingMatrix) -> Result<SimilarityMatrix> {
    similarity_raw(text, video)
}

pub(crate) fn similarity_raw(text: &Matrix, video: &Matrix) -> Result<SimilarityMatrix> {
    if text.cols() != video.cols() {
        return Err(Error::ShapeMismatch(format!(
            "text dim {} != video dim {}",
            text.cols(),
            video.cols()
        )));
    }
    let (n, m) = (text.rows(), video.rows());
    let rows = map_range(n, |i| {
        (0..m)
            .map(|j| dot(text.row(i), video.row(j)))
            .collect::<Vec<_>>()
    });
    Ok(SimilarityMatrix::from_raw(Matrix::new(
        n,
        m,
        rows.concat(),
    )?))
}

fn column_softmax(m: &Matrix) -> Matrix {
    let (n, cols) = m.shape();
    let columns = map_range(cols, |j| {
        let mut c = m.column(j);
        softmax_in_place(&mut c);
        c
    });
    Matrix::from_fn(n, cols, |i, j| columns[j][i])
}

fn check_finite(sim: &SimilarityMatrix) -> Result<()> {
    if sim.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: "similarity matrix",
        })
    }
}

/// Column-wise softmax of the similarities.
pub fn plain_scores(sim: &SimilarityMatrix) -> Result<ScoreMatrix> {
    check_finite(sim)?;
    Ok(ScoreMatrix::from_raw(column_softmax(sim)))
}

pub fn dual_softmax_scores(sim: &SimilarityMatrix, prior_temperature: f64) -> Result<ScoreMatrix> {
    check_finite(sim)?;
    if prior_temperature.is_nan() || prior_temperature <= 0.0 {
        return Err(Error::NonPositiveTemperature(prior_temperature));
    }
    let (n, m) = sim.shape();
    let weighted = map_range(n, |i| {
        let row = sim.row(i);
        let mut prior: Vec<f64> = row.iter().map(|s| s / prior_temperature).collect();
        softmax_in_place(&mut prior);
        prior
            .iter()
            .zip(row)
            .map(|(p, s)| p * s)
            .collect::<Vec<_>>()
    });
    let weighted = Matrix::new(n, m, weighted.concat())?;
    Ok(ScoreMatrix::from_raw(column_softmax(&weighted)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Text queries (rows) retrieving videos (columns).
    TextToVideo,
    /// Video queries (columns) retrieving texts (rows).
    VideoToText,
}

impl Direction {
    pub fn num_queries(self, m: &Matrix) -> usize {
        match self {
            Direction::TextToVideo => m.rows(),
            Direction::VideoToText => m.cols(),
        }
    }

    /// The values seen by query `q`, indexed by retrieved item.
    pub fn query_values(self, m: &Matrix, q: usize) -> Vec<f64> {
        match self {
            Direction::TextToVideo => m.row(q).to_vec(),
            Direction::VideoToText => m.column(q),
        }
    }
}

/// Indices sorted by descending score, ties broken by ascending index.
pub fn rank_values(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Ranked item lists for every query in `direction`.
pub fn rank(scores: &Matrix, direction: Direction) -> Vec<Vec<usize>> {
    map_range(direction.num_queries(scores), |q| {
        rank_values(&direction.query_values(scores, q))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::l2_normalize;

    fn sim(rows: &[&[f64]]) -> SimilarityMatrix {
        SimilarityMatrix::from_matrix(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn unit_and_orthogonal() {
        let a = l2_normalize(&Matrix::from_rows(&[[1.0, 2.0]]).unwrap()).unwrap();
        let s = similarity(&a, &a).unwrap();
        assert!((s.get(0, 0) - 1.0).abs() < 1e-15);
        let b = l2_normalize(&Matrix::from_rows(&[[-2.0, 1.0]]).unwrap()).unwrap();
        assert_eq!(similarity(&a, &b).unwrap().get(0, 0), 0.0);
    }

    #[test]
    fn plain_uniform_and_closed_form() {
        let s = plain_scores(&sim(&[&[0.0, 0.0], &[0.0, 0.0]])).unwrap();
        assert!(s.as_slice().iter().all(|&x| x == 0.5));
        let s = plain_scores(&sim(&[&[1.0], &[0.0]])).unwrap();
        let e = std::f64::consts::E;
        assert!((s.get(0, 0) - e / (e + 1.0)).abs() < 1e-15);
        assert!((s.get(1, 0) - 1.0 / (e + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn dual_softmax_degenerate_cases() {
        assert_eq!(
            dual_softmax_scores(&sim(&[&[-0.7]]), 500.0)
                .unwrap()
                .get(0, 0),
            1.0
        );
        let s = dual_softmax_scores(&sim(&[&[0.3, 0.3], &[0.3, 0.3]]), 500.0).unwrap();
        assert!(s.as_slice().iter().all(|&x| (x - 0.5).abs() < 1e-15));
        assert!(matches!(
            dual_softmax_scores(&sim(&[&[0.3]]), 0.0),
            Err(Error::NonPositiveTemperature(_))
        ));
    }

    #[test]
    fn non_finite_similarity() {
        let m = Matrix::from_rows(&[[f64::NAN]]).unwrap();
        assert!(SimilarityMatrix::from_matrix(m.clone()).is_err());
        let raw = SimilarityMatrix::from_raw(m);
        assert!(matches!(plain_scores(&raw), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn ranking_and_ties() {
        assert_eq!(rank_values(&[0.1, 0.7, 0.2]), vec![1, 2, 0]);
        assert_eq!(rank_values(&[0.3, 0.3, 0.3]), vec![0, 1, 2]);
        let m = Matrix::from_rows(&[[0.1, 0.9], [0.5, 0.2]]).unwrap();
        assert_eq!(
            rank(&m, Direction::TextToVideo),
            vec![vec![1, 0], vec![0, 1]]
        );
        assert_eq!(
            rank(&m, Direction::VideoToText),
            vec![vec![1, 0], vec![0, 1]]
        );
    }
}
