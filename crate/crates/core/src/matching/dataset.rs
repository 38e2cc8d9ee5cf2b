use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::model::GcVectors;
use super::tokenizer::Tokenizer;
use crate::error::{Error, Result};
use crate::geodata::{CorpusBundle, QueryType};
use crate::rng::stable_hash;

/// Tokenized text plus optional frozen GC vectors of a POI or query.
#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub id: String,
    pub tokens: Vec<u32>,
    pub gc: Option<GcVectors>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchQuery {
    pub entity: Entity,
    pub query_type: QueryType,
    /// Indices into [`MatchDataset::pois`].
    pub candidates: Vec<usize>,
    pub gold: usize,
}

/// Model-ready view of one split: every POI of the corpus and the split's
/// queries with candidate lists resolved to POI indices.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchDataset {
    pub pois: Vec<Entity>,
    pub queries: Vec<MatchQuery>,
}

impl MatchDataset {
    /// `poi_gc` must cover every POI; `query_gc` every query with a location.
    pub fn from_bundle(
        bundle: &CorpusBundle,
        split: &str,
        tokenizer: &Tokenizer,
        poi_gc: &BTreeMap<String, GcVectors>,
        query_gc: &BTreeMap<String, GcVectors>,
    ) -> Result<Self> {
        let pois = bundle
            .pois()
            .iter()
            .map(|p| {
                let gc = poi_gc.get(&p.id).cloned().ok_or_else(|| Error::MissingGc { id: p.id.clone() })?;
                Ok(Entity {
                    id: p.id.clone(),
                    tokens: tokenizer.encode(&p.text),
                    gc: Some(gc),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let queries = bundle
            .split(split)
            .into_iter()
            .map(|q| {
                let gc = match q.location {
                    Some(_) => Some(query_gc.get(&q.id).cloned().ok_or_else(|| Error::MissingGc { id: q.id.clone() })?),
                    None => None,
                };
                let pos = |id: &str| bundle.poi_position(id).ok_or_else(|| Error::DanglingReference { id: id.into() });
                let candidates = q.candidates.iter().map(|c| pos(c)).collect::<Result<Vec<_>>>()?;
                let gold = pos(&q.gold)?;
                if !candidates.contains(&gold) {
                    return Err(Error::GoldNotInCandidates { query: q.id.clone() });
                }
                Ok(MatchQuery {
                    entity: Entity {
                        id: q.id.clone(),
                        tokens: tokenizer.encode(&q.text),
                        gc,
                    },
                    query_type: q.query_type,
                    candidates,
                    gold,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { pois, queries })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Keeps query GC on a `fraction` of the queries, chosen by a stable
    /// hash of the query id. Larger fractions keep a superset.
    pub fn with_query_gc_fraction(&self, fraction: f64) -> Self {
        let mut order: Vec<usize> = (0..self.queries.len()).collect();
        order.sort_by_key(|&i| (stable_hash(&self.queries[i].entity.id), i));
        let keep = libm::round(fraction.clamp(0.0, 1.0) * self.queries.len() as f64) as usize;
        let mut out = self.clone();
        for &i in &order[keep..] {
            out.queries[i].entity.gc = None;
        }
        out
    }

    /// Drops the trailing `fraction` of every query's tokens.
    pub fn with_truncated_queries(&self, fraction: f64) -> Self {
        let mut out = self.clone();
        for q in &mut out.queries {
            let n = q.entity.tokens.len();
            let keep = libm::ceil(n as f64 * (1.0 - fraction.clamp(0.0, 1.0))) as usize;
            q.entity.tokens.truncate(keep.min(n));
        }
        out
    }
}
