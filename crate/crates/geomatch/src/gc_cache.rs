//! GC cache files written by `extract-gc`: one line per entity with its
//! anchor and the feature codes of its nearby objects, nearest first.
//!
//! Every line carries a key over the GC config, the digest of the objects
//! file and the exact anchor bits. Re-extraction reuses lines whose key is
//! unchanged.

use std::collections::BTreeMap;
use std::path::Path;

use geomatch_core::gcfeat::{extract_gc, GcConfig, GcRecord, ObjectFeatures, FAMILIES};
use geomatch_core::{GeoPoint, SpatialIndex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

pub const POI_CACHE_FILE: &str = "pois.jl";
pub const QUERY_CACHE_FILE: &str = "queries.jl";

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    id: String,
    key: String,
    #[serde(serialize_with = "jsonl::ser_coord")]
    lng: f64,
    #[serde(serialize_with = "jsonl::ser_coord")]
    lat: f64,
    objects: Vec<[u32; FAMILIES]>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExtractStats {
    pub computed: usize,
    pub reused: usize,
}

/// Content key of one entry.
pub fn entry_key(cfg: &GcConfig, objects_digest: &str, anchor: GeoPoint) -> String {
    let text = format!(
        "{cfg:?}|{objects_digest}|{:016x}|{:016x}",
        anchor.lng.to_bits(),
        anchor.lat.to_bits()
    );
    jsonl::sha256_hex(text.as_bytes())[..32].to_string()
}

fn read_lines(path: &Path) -> Result<Vec<(usize, CacheLine)>> {
    jsonl::read(path)
}

fn to_record(path: &Path, line: usize, r: &CacheLine) -> Result<GcRecord> {
    let anchor = GeoPoint::new(r.lng, r.lat).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    })?;
    Ok(GcRecord {
        anchor,
        objects: r.objects.iter().map(|&c| ObjectFeatures::from_codes(c)).collect(),
    })
}

/// Records of a cache file by entity id.
pub fn load_cache(path: &Path) -> Result<BTreeMap<String, GcRecord>> {
    if !path.is_file() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    read_lines(path)?
        .iter()
        .map(|(line, r)| Ok((r.id.clone(), to_record(path, *line, r)?)))
        .collect()
}

/// Brings the cache at `path` up to date for `entities`, in their order.
/// Entries whose key matches the existing file are reused as is.
pub fn update_cache(
    path: &Path,
    entities: &[(String, GeoPoint)],
    index: &SpatialIndex,
    cfg: &GcConfig,
    objects_digest: &str,
) -> Result<(BTreeMap<String, GcRecord>, ExtractStats)> {
    let mut old: BTreeMap<String, (String, GcRecord)> = BTreeMap::new();
    if path.is_file() {
        for (line, r) in read_lines(path)? {
            let rec = to_record(path, line, &r)?;
            old.insert(r.id, (r.key, rec));
        }
    }
    let mut stats = ExtractStats::default();
    let mut lines = Vec::with_capacity(entities.len());
    let mut records = BTreeMap::new();
    for (id, anchor) in entities {
        let key = entry_key(cfg, objects_digest, *anchor);
        let rec = match old.remove(id) {
            Some((k, rec)) if k == key => {
                stats.reused += 1;
                rec
            }
            _ => {
                stats.computed += 1;
                extract_gc(*anchor, index, cfg)?
            }
        };
        lines.push(CacheLine {
            id: id.clone(),
            key,
            lng: anchor.lng,
            lat: anchor.lat,
            objects: rec.objects.iter().map(ObjectFeatures::codes).collect(),
        });
        records.insert(id.clone(), rec);
    }
    jsonl::write_atomic(path, jsonl::render(lines).as_bytes())?;
    Ok((records, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use geomatch_core::spatial::Rect;
    use geomatch_core::{GeoObject, Shape};

    fn fixture() -> (SpatialIndex, GcConfig, Vec<(String, GeoPoint)>) {
        let pt = |lng, lat| GeoPoint::new(lng, lat).unwrap();
        let objects = vec![
            GeoObject::new("road1", Shape::Line, vec![pt(120.0, 30.001), pt(120.01, 30.001)]).unwrap(),
            GeoObject::new(
                "area1",
                Shape::Polygon,
                vec![pt(120.0, 30.0), pt(120.004, 30.0), pt(120.004, 30.004), pt(120.0, 30.004)],
            )
            .unwrap(),
        ];
        let mut cfg = GcConfig::new(Rect::new(119.99, 29.99, 120.02, 30.02).unwrap());
        cfg.id_buckets = 97;
        let entities = vec![("a".to_string(), pt(120.002, 30.002)), ("b".to_string(), pt(120.008, 30.003))];
        (SpatialIndex::new(objects), cfg, entities)
    }

    #[test]
    fn rerun_recomputes_nothing_and_keeps_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(POI_CACHE_FILE);
        let (index, cfg, entities) = fixture();
        let (recs, s) = update_cache(&path, &entities, &index, &cfg, "d0").unwrap();
        assert_eq!(s, ExtractStats { computed: 2, reused: 0 });
        let bytes = std::fs::read(&path).unwrap();
        let (again, s) = update_cache(&path, &entities, &index, &cfg, "d0").unwrap();
        assert_eq!(s, ExtractStats { computed: 0, reused: 2 });
        assert_eq!(again, recs);
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
        assert_eq!(load_cache(&path).unwrap(), recs);
    }

    #[test]
    fn changed_inputs_invalidate_entries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(POI_CACHE_FILE);
        let (index, mut cfg, mut entities) = fixture();
        update_cache(&path, &entities, &index, &cfg, "d0").unwrap();
        entities[1].1 = GeoPoint::new(120.009, 30.003).unwrap();
        let (_, s) = update_cache(&path, &entities, &index, &cfg, "d0").unwrap();
        assert_eq!(s, ExtractStats { computed: 1, reused: 1 });
        let (_, s) = update_cache(&path, &entities, &index, &cfg, "d1").unwrap();
        assert_eq!(s.computed, 2);
        cfg.k = 4;
        let (_, s) = update_cache(&path, &entities, &index, &cfg, "d1").unwrap();
        assert_eq!(s.computed, 2);
    }
}
