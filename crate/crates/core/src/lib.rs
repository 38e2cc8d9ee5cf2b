//! Geographic-context features, a from-scratch neural substrate, and the
//! encoders that turn text plus nearby map objects into query-POI relevance
//! scores.
//!
//! The crate is `no_std` (it needs `alloc`). Everything that touches files,
//! clocks, threads or the command line lives in the `geomatch` companion crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bench;
pub mod error;
pub mod eval;
pub mod gcfeat;
pub mod geodata;
pub mod geoenc;
pub mod masking;
pub mod matching;
pub mod nn;
pub mod rng;
pub mod spatial;

pub use error::{Error, Result};
pub use geodata::{CorpusBundle, GeoObject, GeoPoint, Poi, Query, QueryType, Shape};
pub use spatial::{Rect, Relation, RelationType, SpatialIndex};
