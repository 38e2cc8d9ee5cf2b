//! Corpus files. Each of `objects.jl`, `pois.jl`, `queries.jl` and
//! `splits.jl` holds one JSON record per line; `manifest.json` lists line
//! counts and SHA-256 digests. Coordinates are written in decimal degrees
//! with at least six fractional digits and round-trip exactly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use geomatch_core::{CorpusBundle, GeoObject, GeoPoint, Poi, Query, QueryType, Shape};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

pub const OBJECTS_FILE: &str = "objects.jl";
pub const POIS_FILE: &str = "pois.jl";
pub const QUERIES_FILE: &str = "queries.jl";
pub const SPLITS_FILE: &str = "splits.jl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CORPUS_FILES: [&str; 4] = [OBJECTS_FILE, POIS_FILE, QUERIES_FILE, SPLITS_FILE];

#[derive(Debug, Serialize, Deserialize)]
struct ObjectLine {
    id: String,
    shape: String,
    /// Flat `lng, lat, lng, lat, ...`.
    #[serde(serialize_with = "jsonl::ser_coords")]
    vertices: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PoiLine {
    id: String,
    text: String,
    #[serde(serialize_with = "jsonl::ser_coord")]
    lng: f64,
    #[serde(serialize_with = "jsonl::ser_coord")]
    lat: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct QueryLine {
    id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none", serialize_with = "jsonl::ser_opt_coord")]
    lng: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", serialize_with = "jsonl::ser_opt_coord")]
    lat: Option<f64>,
    #[serde(rename = "type")]
    query_type: String,
    candidates: Vec<String>,
    gold: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitLine {
    split: String,
    queries: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub lines: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub objects: usize,
    pub pois: usize,
    pub queries: usize,
    pub files: Vec<FileEntry>,
}

fn bad(path: &Path, line: usize, message: impl ToString) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    }
}

fn point(path: &Path, line: usize, lng: f64, lat: f64) -> Result<GeoPoint> {
    GeoPoint::new(lng, lat).map_err(|e| bad(path, line, e))
}

/// Reads the four corpus files from `dir` and cross-references them.
pub fn load_corpus(dir: &Path) -> Result<CorpusBundle> {
    let path = |name: &str| -> PathBuf { dir.join(name) };
    for name in CORPUS_FILES {
        if !path(name).is_file() {
            return Err(Error::MissingArtifact(path(name)));
        }
    }

    let p = path(OBJECTS_FILE);
    let mut objects = Vec::new();
    for (line, r) in jsonl::read::<ObjectLine>(&p)? {
        let shape = Shape::parse(&r.shape).ok_or_else(|| bad(&p, line, format!("unknown shape {:?}", r.shape)))?;
        if r.vertices.len() % 2 != 0 {
            return Err(bad(&p, line, "odd number of vertex coordinates"));
        }
        let vertices = r
            .vertices
            .chunks_exact(2)
            .map(|c| point(&p, line, c[0], c[1]))
            .collect::<Result<Vec<_>>>()?;
        objects.push(GeoObject::new(r.id, shape, vertices).map_err(|e| bad(&p, line, e))?);
    }

    let p = path(POIS_FILE);
    let mut pois = Vec::new();
    for (line, r) in jsonl::read::<PoiLine>(&p)? {
        pois.push(Poi {
            location: point(&p, line, r.lng, r.lat)?,
            id: r.id,
            text: r.text,
        });
    }

    let p = path(QUERIES_FILE);
    let mut queries = Vec::new();
    for (line, r) in jsonl::read::<QueryLine>(&p)? {
        let location = match (r.lng, r.lat) {
            (Some(lng), Some(lat)) => Some(point(&p, line, lng, lat)?),
            (None, None) => None,
            _ => return Err(bad(&p, line, "lng and lat must be given together")),
        };
        let query_type = QueryType::parse(&r.query_type)
            .ok_or_else(|| bad(&p, line, format!("unknown query type {:?}", r.query_type)))?;
        if !r.candidates.is_empty() && !r.candidates.contains(&r.gold) {
            return Err(bad(&p, line, format!("gold not in candidates for query {}", r.id)));
        }
        queries.push(Query {
            id: r.id,
            text: r.text,
            location,
            query_type,
            candidates: r.candidates,
            gold: r.gold,
        });
    }

    let p = path(SPLITS_FILE);
    let mut splits = BTreeMap::new();
    for (line, r) in jsonl::read::<SplitLine>(&p)? {
        if splits.insert(r.split.clone(), r.queries).is_some() {
            return Err(bad(&p, line, format!("split {} listed twice", r.split)));
        }
    }
    Ok(CorpusBundle::new(objects, pois, queries, splits)?)
}

fn render_files(bundle: &CorpusBundle) -> [(&'static str, String); 4] {
    let objects = jsonl::render(bundle.objects().iter().map(|o| ObjectLine {
        id: o.id().to_string(),
        shape: o.shape().as_str().to_string(),
        vertices: o.vertices().iter().flat_map(|v| [v.lng, v.lat]).collect(),
    }));
    let pois = jsonl::render(bundle.pois().iter().map(|p| PoiLine {
        id: p.id.clone(),
        text: p.text.clone(),
        lng: p.location.lng,
        lat: p.location.lat,
    }));
    let queries = jsonl::render(bundle.queries().iter().map(|q| QueryLine {
        id: q.id.clone(),
        text: q.text.clone(),
        lng: q.location.map(|l| l.lng),
        lat: q.location.map(|l| l.lat),
        query_type: q.query_type.as_str().to_string(),
        candidates: q.candidates.clone(),
        gold: q.gold.clone(),
    }));
    let splits = jsonl::render(bundle.splits().iter().map(|(name, ids)| SplitLine {
        split: name.clone(),
        queries: ids.clone(),
    }));
    [(OBJECTS_FILE, objects), (POIS_FILE, pois), (QUERIES_FILE, queries), (SPLITS_FILE, splits)]
}

/// Writes the corpus files and the manifest into `dir`. Identical bundles
/// give identical bytes.
pub fn save_corpus(bundle: &CorpusBundle, dir: &Path) -> Result<Manifest> {
    let (objects, pois, queries) = bundle.counts();
    let mut manifest = Manifest {
        objects,
        pois,
        queries,
        files: Vec::new(),
    };
    for (name, text) in render_files(bundle) {
        jsonl::write_atomic(&dir.join(name), text.as_bytes())?;
        manifest.files.push(FileEntry {
            name: name.to_string(),
            lines: text.lines().count(),
            sha256: jsonl::sha256_hex(text.as_bytes()),
        });
    }
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    jsonl::write_atomic(&dir.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> CorpusBundle {
        let pt = |lng, lat| GeoPoint::new(lng, lat).unwrap();
        let objects = vec![GeoObject::new(
            "area1",
            Shape::Polygon,
            vec![pt(120.0, 30.0), pt(120.01, 30.0), pt(120.01, 30.01)],
        )
        .unwrap()];
        let pois = vec![Poi {
            id: "p1".into(),
            text: "tea house no 3".into(),
            location: pt(120.005, 30.002),
        }];
        let queries = vec![Query {
            id: "q1".into(),
            text: "tea house".into(),
            location: None,
            query_type: QueryType::Colloquial,
            candidates: vec!["p1".into()],
            gold: "p1".into(),
        }];
        let splits = BTreeMap::from([("train".to_string(), vec!["q1".to_string()])]);
        CorpusBundle::new(objects, pois, queries, splits).unwrap()
    }

    #[test]
    fn empty_files_give_an_empty_bundle() {
        let dir = tempfile::tempdir().unwrap();
        for name in CORPUS_FILES {
            std::fs::write(dir.path().join(name), "").unwrap();
        }
        assert_eq!(load_corpus(dir.path()).unwrap().counts(), (0, 0, 0));
    }

    #[test]
    fn minimal_bundle_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let b = minimal();
        let m = save_corpus(&b, dir.path()).unwrap();
        assert_eq!((m.objects, m.pois, m.queries), (1, 1, 1));
        let back = load_corpus(dir.path()).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.counts(), (1, 1, 1));
    }

    #[test]
    fn gold_outside_candidates_is_rejected_with_its_line() {
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&minimal(), dir.path()).unwrap();
        let q = dir.path().join(QUERIES_FILE);
        let text = std::fs::read_to_string(&q).unwrap().replace("\"gold\":\"p1\"", "\"gold\":\"p9\"");
        std::fs::write(&q, text).unwrap();
        let err = load_corpus(dir.path()).unwrap_err().to_string();
        assert!(err.contains("queries.jl:1:"), "{err}");
        assert!(err.contains("gold not in candidates"), "{err}");
    }

    #[test]
    fn malformed_lines_and_bad_coordinates_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&minimal(), dir.path()).unwrap();
        let p = dir.path().join(POIS_FILE);
        let good = std::fs::read_to_string(&p).unwrap();
        std::fs::write(&p, format!("{good}{{\"id\": \n")).unwrap();
        assert!(load_corpus(dir.path()).unwrap_err().to_string().contains("pois.jl:2:"));
        std::fs::write(&p, good.replace("30.002000", "95.0")).unwrap();
        let err = load_corpus(dir.path()).unwrap_err().to_string();
        assert!(err.contains("pois.jl:1:") && err.contains("out of range"), "{err}");
    }

    #[test]
    fn dangling_reference_names_the_id() {
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&minimal(), dir.path()).unwrap();
        let s = dir.path().join(SPLITS_FILE);
        std::fs::write(&s, "{\"split\":\"dev\",\"queries\":[\"q7\"]}\n").unwrap();
        assert!(load_corpus(dir.path()).unwrap_err().to_string().contains("q7"));
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_corpus(dir.path()).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact(p) if p.ends_with(OBJECTS_FILE)));
    }
}
