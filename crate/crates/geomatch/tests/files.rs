use std::collections::BTreeMap;
use std::path::Path;

use geomatch::corpus::{load_corpus, save_corpus, CORPUS_FILES, OBJECTS_FILE};
use geomatch::gc_cache::{load_cache, update_cache, POI_CACHE_FILE};
use geomatch::jsonl;
use geomatch_core::bench::{generate_benchmark, GenSpec};
use geomatch_core::gcfeat::{corpus_map_bounds, GcConfig};
use geomatch_core::{rng, CorpusBundle, GeoObject, GeoPoint, Poi, Shape, SpatialIndex};
use rand::Rng;

const GOLDEN_CACHE: &str = "tests/fixtures/gc_cache.jl";

fn random_bundle(seed: u64) -> CorpusBundle {
    let mut r = rng::stream(seed, "objects");
    let pt = |r: &mut rng::StreamRng| {
        GeoPoint::new(r.gen_range(-179.9..179.9), r.gen_range(-89.9..89.9)).unwrap()
    };
    let objects = (0..1000)
        .map(|i| {
            let (shape, n) = if r.gen_bool(0.5) { (Shape::Line, r.gen_range(2..6)) } else { (Shape::Polygon, r.gen_range(3..9)) };
            let vertices = (0..n).map(|_| pt(&mut r)).collect();
            GeoObject::new(format!("obj{i}"), shape, vertices).unwrap()
        })
        .collect();
    let pois = (0..50)
        .map(|i| Poi { id: format!("poi{i}"), text: format!("shop {i} on \"main\" st"), location: pt(&mut r) })
        .collect();
    CorpusBundle::new(objects, pois, Vec::new(), BTreeMap::new()).unwrap()
}

fn read_all(dir: &Path) -> Vec<Vec<u8>> {
    CORPUS_FILES.iter().map(|f| std::fs::read(dir.join(f)).unwrap()).collect()
}

#[test]
fn random_corpus_round_trips_byte_for_byte() {
    let bundle = random_bundle(3);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = save_corpus(&bundle, a.path()).unwrap();
    let back = load_corpus(a.path()).unwrap();
    assert_eq!(back, bundle);
    let second = save_corpus(&back, b.path()).unwrap();
    assert_eq!(first, second);
    assert_eq!(read_all(a.path()), read_all(b.path()));
}

/// Set `GEOMATCH_BLESS=1` to rewrite the fixture after an intended change
/// to extraction or the cache format.
#[test]
fn gc_cache_matches_the_committed_fixture() {
    let spec = GenSpec { roads: 8, regions: 10, pois: 25, queries: 10, ..GenSpec::default() };
    let bundle = generate_benchmark(&spec).unwrap();
    let (corpus, cache) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    save_corpus(&bundle, corpus.path()).unwrap();
    let digest = jsonl::file_sha256(&corpus.path().join(OBJECTS_FILE)).unwrap();
    let mut gc = GcConfig::new(corpus_map_bounds(&bundle).unwrap());
    gc.id_buckets = 97;
    let index = SpatialIndex::new(bundle.objects().to_vec());
    let pois: Vec<(String, GeoPoint)> = bundle.pois().iter().map(|p| (p.id.clone(), p.location)).collect();
    let path = cache.path().join(POI_CACHE_FILE);
    let (records, _) = update_cache(&path, &pois, &index, &gc, &digest).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join(GOLDEN_CACHE);
    if std::env::var_os("GEOMATCH_BLESS").is_some() {
        std::fs::write(&golden, &bytes).unwrap();
    }
    assert_eq!(String::from_utf8(bytes).unwrap(), std::fs::read_to_string(&golden).unwrap());
    assert_eq!(load_cache(&golden).unwrap(), records);
}
