//! In-memory data model: coordinates, map objects, POIs, queries and the
//! cross-referenced corpus bundle.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A longitude/latitude pair in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub lng: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub fn new(lng: f64, lat: f64) -> Result<Self> {
        let ok = lng.is_finite()
            && lat.is_finite()
            && (-180.0..=180.0).contains(&lng)
            && (-90.0..=90.0).contains(&lat);
        if ok {
            Ok(Self { lng, lat })
        } else {
            Err(Error::CoordinateOutOfRange { lng, lat })
        }
    }

    /// Caller guarantees the coordinates are in range.
    pub const fn new_unchecked(lng: f64, lat: f64) -> Self {
        Self { lng, lat }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Shape {
    Line,
    Polygon,
}

impl Shape {
    pub const fn code(self) -> usize {
        match self {
            Shape::Line => 0,
            Shape::Polygon => 1,
        }
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            Shape::Line => "LINE",
            Shape::Polygon => "POLYGON",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "LINE" => Some(Shape::Line),
            "POLYGON" => Some(Shape::Polygon),
            _ => None,
        }
    }
}

/// A road (`Line`) or region (`Polygon`) described by its vertices.
/// Polygons are implicitly closed.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoObject {
    id: String,
    shape: Shape,
    vertices: Vec<GeoPoint>,
}

impl GeoObject {
    /// Consecutive duplicate vertices are dropped, as is an explicit closing
    /// vertex on a polygon. The remaining count must meet the shape minimum.
    pub fn new(id: impl Into<String>, shape: Shape, vertices: Vec<GeoPoint>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::InvalidObject { id, reason: "empty id" });
        }
        let mut clean: Vec<GeoPoint> = Vec::with_capacity(vertices.len());
        for v in vertices {
            GeoPoint::new(v.lng, v.lat)?;
            if clean.last() != Some(&v) {
                clean.push(v);
            }
        }
        if shape == Shape::Polygon && clean.len() > 1 && clean.first() == clean.last() {
            clean.pop();
        }
        let min = match shape {
            Shape::Line => 2,
            Shape::Polygon => 3,
        };
        if clean.len() < min {
            return Err(Error::InvalidObject {
                id,
                reason: "too few distinct vertices for shape",
            });
        }
        Ok(Self {
            id,
            shape,
            vertices: clean,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn vertices(&self) -> &[GeoPoint] {
        &self.vertices
    }

    /// Segment endpoints, including the closing edge of a polygon.
    pub fn segments(&self) -> impl Iterator<Item = (GeoPoint, GeoPoint)> + '_ {
        let n = self.vertices.len();
        let count = match self.shape {
            Shape::Line => n - 1,
            Shape::Polygon => n,
        };
        (0..count).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Poi {
    pub id: String,
    pub text: String,
    pub location: GeoPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QueryType {
    Address,
    StreetNo,
    Colloquial,
}

impl QueryType {
    pub const ALL: [QueryType; 3] = [QueryType::Address, QueryType::StreetNo, QueryType::Colloquial];

    pub const fn as_str(self) -> &'static str {
        match self {
            QueryType::Address => "ADDRESS",
            QueryType::StreetNo => "STREET_NO",
            QueryType::Colloquial => "COLLOQUIAL",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ADDRESS" => Some(QueryType::Address),
            "STREET_NO" => Some(QueryType::StreetNo),
            "COLLOQUIAL" => Some(QueryType::Colloquial),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub id: String,
    pub text: String,
    pub location: Option<GeoPoint>,
    pub query_type: QueryType,
    pub candidates: Vec<String>,
    pub gold: String,
}

/// Objects, POIs, queries and named query splits with every reference
/// resolved. Immutable once built.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusBundle {
    objects: Vec<GeoObject>,
    pois: Vec<Poi>,
    queries: Vec<Query>,
    splits: BTreeMap<String, Vec<String>>,
    poi_index: BTreeMap<String, usize>,
    query_index: BTreeMap<String, usize>,
}

impl CorpusBundle {
    pub fn new(
        objects: Vec<GeoObject>,
        pois: Vec<Poi>,
        queries: Vec<Query>,
        splits: BTreeMap<String, Vec<String>>,
    ) -> Result<Self> {
        let mut object_ids = BTreeSet::new();
        for o in &objects {
            if !object_ids.insert(o.id()) {
                return Err(Error::DuplicateId { id: o.id().into() });
            }
        }
        let mut poi_index = BTreeMap::new();
        for (i, p) in pois.iter().enumerate() {
            if p.text.trim().is_empty() {
                return Err(Error::InvalidRecord {
                    id: p.id.clone(),
                    reason: "empty text",
                });
            }
            GeoPoint::new(p.location.lng, p.location.lat)?;
            if poi_index.insert(p.id.clone(), i).is_some() {
                return Err(Error::DuplicateId { id: p.id.clone() });
            }
        }
        let mut query_index = BTreeMap::new();
        for (i, q) in queries.iter().enumerate() {
            if q.text.trim().is_empty() {
                return Err(Error::InvalidRecord {
                    id: q.id.clone(),
                    reason: "empty text",
                });
            }
            if let Some(l) = q.location {
                GeoPoint::new(l.lng, l.lat)?;
            }
            if !q.candidates.is_empty() && !q.candidates.contains(&q.gold) {
                return Err(Error::GoldNotInCandidates { query: q.id.clone() });
            }
            for c in q.candidates.iter().chain(core::iter::once(&q.gold)) {
                if !poi_index.contains_key(c) {
                    return Err(Error::DanglingReference { id: c.clone() });
                }
            }
            if query_index.insert(q.id.clone(), i).is_some() {
                return Err(Error::DuplicateId { id: q.id.clone() });
            }
        }
        let mut seen = BTreeSet::new();
        for ids in splits.values() {
            for id in ids {
                if !query_index.contains_key(id) {
                    return Err(Error::DanglingReference { id: id.clone() });
                }
                if !seen.insert(id.as_str()) {
                    return Err(Error::DuplicateId { id: id.clone() });
                }
            }
        }
        Ok(Self {
            objects,
            pois,
            queries,
            splits,
            poi_index,
            query_index,
        })
    }

    pub fn objects(&self) -> &[GeoObject] {
        &self.objects
    }

    pub fn pois(&self) -> &[Poi] {
        &self.pois
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn splits(&self) -> &BTreeMap<String, Vec<String>> {
        &self.splits
    }

    pub fn poi(&self, id: &str) -> Option<&Poi> {
        self.poi_index.get(id).map(|&i| &self.pois[i])
    }

    pub fn poi_position(&self, id: &str) -> Option<usize> {
        self.poi_index.get(id).copied()
    }

    pub fn query(&self, id: &str) -> Option<&Query> {
        self.query_index.get(id).map(|&i| &self.queries[i])
    }

    /// Queries of a named split in file order; empty for an unknown split.
    pub fn split(&self, name: &str) -> Vec<&Query> {
        self.splits
            .get(name)
            .map(|ids| ids.iter().filter_map(|id| self.query(id)).collect())
            .unwrap_or_default()
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        (self.objects.len(), self.pois.len(), self.queries.len())
    }
}
