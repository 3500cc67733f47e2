//! Multi-instance retrieval metrics: mAP with binarized relevance and nDCG
//! with graded relevance, in both retrieval directions.
//!
//! Queries without any relevant item (mAP) or with zero ideal DCG (nDCG) are
//! left out of the mean and counted in [`MetricValue::skipped`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{rank_values, Direction};
use crate::matrix::{CorrelationMatrix, Matrix};
use crate::par::map_range;

/// Items with correlation strictly above this count as relevant for mAP.
pub const DEFAULT_MAP_CUTOFF: f64 = 0.0;

pub fn average_precision(relevance_in_rank_order: &[bool]) -> Result<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (p, &rel) in relevance_in_rank_order.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (p + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::NoRelevant);
    }
    Ok(sum / hits as f64)
}

/// `Σ_p gain_p / log2(p + 1)`, ranks starting at 1.
pub fn dcg(gains_in_rank_order: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (p, &g) in gains_in_rank_order.iter().enumerate() {
        if g < 0.0 || g.is_nan() {
            return Err(Error::NegativeGain { index: p, value: g });
        }
        total += g / ((p + 2) as f64).log2();
    }
    Ok(total)
}

/// A metric averaged over the queries of one direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    /// Mean over evaluated queries, in percent. Zero when none were evaluated.
    pub percent: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

impl MetricValue {
    fn from_per_query(values: Vec<Option<f64>>) -> Self {
        let mut sum = 0.0;
        let mut evaluated = 0;
        for v in values.iter().flatten() {
            sum += v;
            evaluated += 1;
        }
        let percent = if evaluated == 0 {
            0.0
        } else {
            100.0 * sum / evaluated as f64
        };
        Self {
            percent,
            evaluated,
            skipped: values.len() - evaluated,
        }
    }
}

fn check_shapes(scores: &Matrix, corr: &CorrelationMatrix) -> Result<()> {
    if scores.shape() != corr.shape() {
        return Err(Error::ShapeMismatch(format!(
            "scores are {}x{}, correlation is {}x{}",
            scores.rows(),
            scores.cols(),
            corr.rows(),
            corr.cols()
        )));
    }
    Ok(())
}

/// Mean average precision with relevance `c > cutoff`.
pub fn mean_ap(
    scores: &Matrix,
    corr: &CorrelationMatrix,
    direction: Direction,
    cutoff: f64,
) -> Result<MetricValue> {
    check_shapes(scores, corr)?;
    let per_query = map_range(direction.num_queries(scores), |q| {
        let order = rank_values(&direction.query_values(scores, q));
        let gains = direction.query_values(corr, q);
        let rel: Vec<bool> = order.iter().map(|&k| gains[k] > cutoff).collect();
        average_precision(&rel).ok()
    });
    Ok(MetricValue::from_per_query(per_query))
}

/// Mean nDCG with the raw correlations as gains.
pub fn ndcg(
    scores: &Matrix,
    corr: &CorrelationMatrix,
    direction: Direction,
) -> Result<MetricValue> {
    check_shapes(scores, corr)?;
    let per_query = map_range(direction.num_queries(scores), |q| {
        let order = rank_values(&direction.query_values(scores, q));
        let gains = direction.query_values(corr, q);
        let ranked: Vec<f64> = order.iter().map(|&k| gains[k]).collect();
        let mut ideal = gains;
        ideal.sort_by(|a, b| b.total_cmp(a));
        let idcg = dcg(&ideal).ok()?;
        if idcg <= 0.0 {
            return None;
        }
        Some(dcg(&ranked).ok()? / idcg)
    });
    Ok(MetricValue::from_per_query(per_query))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub map_cutoff: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            map_cutoff: DEFAULT_MAP_CUTOFF,
        }
    }
}

/// Six-number retrieval summary, percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub map_v2t: f64,
    pub map_t2v: f64,
    pub map_avg: f64,
    pub ndcg_v2t: f64,
    pub ndcg_t2v: f64,
    pub ndcg_avg: f64,
    pub queries: QueryCounts,
    /// Set when no query in any direction could be evaluated.
    pub empty: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryCounts {
    pub map_v2t: MetricValue,
    pub map_t2v: MetricValue,
    pub ndcg_v2t: MetricValue,
    pub ndcg_t2v: MetricValue,
}

pub fn evaluate(scores: &Matrix, corr: &CorrelationMatrix) -> Result<RetrievalReport> {
    evaluate_with(scores, corr, &MetricsConfig::default())
}

pub fn evaluate_with(
    scores: &Matrix,
    corr: &CorrelationMatrix,
    config: &MetricsConfig,
) -> Result<RetrievalReport> {
    let map_v2t = mean_ap(scores, corr, Direction::VideoToText, config.map_cutoff)?;
    let map_t2v = mean_ap(scores, corr, Direction::TextToVideo, config.map_cutoff)?;
    let ndcg_v2t = ndcg(scores, corr, Direction::VideoToText)?;
    let ndcg_t2v = ndcg(scores, corr, Direction::TextToVideo)?;
    let queries = QueryCounts {
        map_v2t,
        map_t2v,
        ndcg_v2t,
        ndcg_t2v,
    };
    let empty = [map_v2t, map_t2v, ndcg_v2t, ndcg_t2v]
        .iter()
        .all(|m| m.evaluated == 0);
    Ok(RetrievalReport {
        map_v2t: map_v2t.percent,
        map_t2v: map_t2v.percent,
        map_avg: 0.5 * (map_v2t.percent + map_t2v.percent),
        ndcg_v2t: ndcg_v2t.percent,
        ndcg_t2v: ndcg_t2v.percent,
        ndcg_avg: 0.5 * (ndcg_v2t.percent + ndcg_t2v.percent),
        queries,
        empty,
    })
}
