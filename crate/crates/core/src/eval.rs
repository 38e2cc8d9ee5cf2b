//! Ranking and retrieval runners, Recall@k / MRR@k, and ablation slices.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::geodata::QueryType;
use crate::matching::{Head, MatchDataset, Scorer};
use crate::nn::loss::cosine;

pub const REPORT_RECALL_KS: [usize; 6] = [1, 3, 5, 20, 50, 100];
pub const REPORT_MRR_KS: [usize; 2] = [5, 10];

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPoi {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub query_id: String,
    /// Descending by score, ties by POI id ascending.
    pub ranked: Vec<ScoredPoi>,
    pub gold: String,
    /// 1-based; `None` when the gold is not in `ranked`.
    pub gold_rank: Option<usize>,
}

/// Orders a scored pool and keeps the first `k_max` entries.
pub fn rank_scored(query_id: &str, mut pool: Vec<ScoredPoi>, gold: &str, k_max: Option<usize>) -> RankingResult {
    pool.sort_by(|a, b| match b.score.total_cmp(&a.score) {
        Ordering::Equal => a.id.cmp(&b.id),
        o => o,
    });
    if let Some(k) = k_max {
        pool.truncate(k);
    }
    let gold_rank = pool.iter().position(|p| p.id == gold).map(|i| i + 1);
    RankingResult {
        query_id: query_id.to_string(),
        ranked: pool,
        gold: gold.to_string(),
        gold_rank,
    }
}

fn check(results: &[RankingResult], k: usize) -> Result<()> {
    if results.is_empty() {
        return Err(Error::Empty("ranking results"));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1"));
    }
    Ok(())
}

/// Fraction of queries whose gold is ranked within the top `k`.
pub fn recall_at_k(results: &[RankingResult], k: usize) -> Result<f64> {
    check(results, k)?;
    let hits = results.iter().filter(|r| r.gold_rank.is_some_and(|x| x <= k)).count();
    Ok(hits as f64 / results.len() as f64)
}

/// Mean of `1 / rank` over queries, counting ranks beyond `k` as zero.
pub fn mrr_at_k(results: &[RankingResult], k: usize) -> Result<f64> {
    check(results, k)?;
    let sum: f64 = results
        .iter()
        .filter_map(|r| r.gold_rank.filter(|&x| x <= k))
        .map(|x| 1.0 / x as f64)
        .sum();
    Ok(sum / results.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub queries: usize,
    pub recall: Vec<(usize, f64)>,
    pub mrr: Vec<(usize, f64)>,
}

impl Metrics {
    /// Recall and MRR at the report cutoffs.
    pub fn compute(results: &[RankingResult]) -> Result<Self> {
        Ok(Self {
            queries: results.len(),
            recall: REPORT_RECALL_KS
                .iter()
                .map(|&k| Ok((k, recall_at_k(results, k)?)))
                .collect::<Result<_>>()?,
            mrr: REPORT_MRR_KS
                .iter()
                .map(|&k| Ok((k, mrr_at_k(results, k)?)))
                .collect::<Result<_>>()?,
        })
    }

    pub fn recall_at(&self, k: usize) -> f64 {
        self.recall.iter().find(|(x, _)| *x == k).map_or(f64::NAN, |(_, v)| *v)
    }

    pub fn mrr_at(&self, k: usize) -> f64 {
        self.mrr.iter().find(|(x, _)| *x == k).map_or(f64::NAN, |(_, v)| *v)
    }
}

/// Scores every query against its own candidate list.
pub fn run_ranking(scorer: &Scorer, ds: &MatchDataset) -> Result<Vec<RankingResult>> {
    let poi_vectors = match scorer.head {
        Head::Bi => Some(scorer.poi_vectors(ds)?),
        Head::Cross => None,
    };
    ds.queries
        .iter()
        .map(|q| {
            let scores = scorer.score(ds, q, &q.candidates, poi_vectors.as_deref())?;
            let pool = q
                .candidates
                .iter()
                .zip(scores)
                .map(|(&i, score)| ScoredPoi {
                    id: ds.pois[i].id.clone(),
                    score,
                })
                .collect();
            Ok(rank_scored(&q.entity.id, pool, &ds.pois[q.gold].id, None))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrievalPool<'a> {
    /// Every POI of the dataset.
    Full,
    /// Each query's own candidate list.
    Candidates,
    Explicit(&'a [usize]),
}

/// Bi-encoder retrieval: POI vectors are computed once, each query is
/// scored by cosine against the pool and the top `k_max` are kept.
pub fn run_retrieval(
    scorer: &Scorer,
    ds: &MatchDataset,
    pool: RetrievalPool,
    k_max: usize,
) -> Result<Vec<RankingResult>> {
    if scorer.head == Head::Cross {
        return Err(Error::CrossHeadRetrieval);
    }
    if k_max == 0 {
        return Err(Error::InvalidConfig("k_max must be at least 1"));
    }
    let poi_vectors = scorer.poi_vectors(ds)?;
    let full: Vec<usize> = (0..ds.pois.len()).collect();
    ds.queries
        .iter()
        .map(|q| {
            let members: &[usize] = match pool {
                RetrievalPool::Full => &full,
                RetrievalPool::Candidates => &q.candidates,
                RetrievalPool::Explicit(p) => p,
            };
            let qv = scorer.query_vector(&q.entity)?;
            let scored = members
                .iter()
                .map(|&i| ScoredPoi {
                    id: ds.pois[i].id.clone(),
                    score: cosine(&qv, &poi_vectors[i]),
                })
                .collect();
            Ok(rank_scored(&q.entity.id, scored, &ds.pois[q.gold].id, Some(k_max)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AblationAxis {
    QueryType,
    GcPercent,
    Truncation,
}

impl AblationAxis {
    pub const fn as_str(self) -> &'static str {
        match self {
            AblationAxis::QueryType => "QUERY_TYPE",
            AblationAxis::GcPercent => "GC_PERCENT",
            AblationAxis::Truncation => "TRUNCATION",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "QUERY_TYPE" => Some(AblationAxis::QueryType),
            "GC_PERCENT" => Some(AblationAxis::GcPercent),
            "TRUNCATION" => Some(AblationAxis::Truncation),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceMetrics {
    pub label: String,
    pub metrics: Metrics,
}

/// Metrics per query type present in `results`, in ADDRESS, STREET_NO,
/// COLLOQUIAL order.
pub fn slice_by_query_type(results: &[RankingResult], ds: &MatchDataset) -> Result<Vec<SliceMetrics>> {
    let type_of = |id: &str| ds.queries.iter().find(|q| q.entity.id == id).map(|q| q.query_type);
    let mut out = Vec::new();
    for t in QueryType::ALL {
        let slice: Vec<RankingResult> = results
            .iter()
            .filter(|r| type_of(&r.query_id) == Some(t))
            .cloned()
            .collect();
        if !slice.is_empty() {
            out.push(SliceMetrics {
                label: t.as_str().to_string(),
                metrics: Metrics::compute(&slice)?,
            });
        }
    }
    Ok(out)
}

/// Per-slice metrics along one axis. `levels` are fractions in `[0, 1]`:
/// the share of queries keeping their GC, or the share of query tokens cut
/// from the end. They are ignored for the query-type axis.
pub fn ablation_slice(
    scorer: &Scorer,
    ds: &MatchDataset,
    axis: AblationAxis,
    levels: &[f64],
) -> Result<Vec<SliceMetrics>> {
    match axis {
        AblationAxis::QueryType => slice_by_query_type(&run_ranking(scorer, ds)?, ds),
        AblationAxis::GcPercent | AblationAxis::Truncation => levels
            .iter()
            .map(|&level| {
                let variant = if axis == AblationAxis::GcPercent {
                    ds.with_query_gc_fraction(level)
                } else {
                    ds.with_truncated_queries(level)
                };
                Ok(SliceMetrics {
                    label: alloc::format!("{}={:.0}%", axis.as_str(), level * 100.0),
                    metrics: Metrics::compute(&run_ranking(scorer, &variant)?)?,
                })
            })
            .collect(),
    }
}
