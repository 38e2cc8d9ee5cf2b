use geomatch_core::gcfeat::{extract_gc, map_scale, GcConfig, GcRecord};
use geomatch_core::spatial::bounding_rect;
use geomatch_core::{GeoObject, GeoPoint, Rect, Shape, SpatialIndex};
use proptest::prelude::*;

fn p(lng: f64, lat: f64) -> GeoPoint {
    GeoPoint::new(lng, lat).unwrap()
}

fn quad(id: &str, left: f64, bottom: f64, w: f64, h: f64) -> GeoObject {
    GeoObject::new(
        id,
        Shape::Polygon,
        vec![p(left, bottom), p(left + w, bottom), p(left + w, bottom + h), p(left, bottom + h)],
    )
    .unwrap()
}

fn shifted(o: &GeoObject, dx: f64, dy: f64) -> GeoObject {
    let v = o.vertices().iter().map(|v| p(v.lng + dx, v.lat + dy)).collect();
    GeoObject::new(o.id(), o.shape(), v).unwrap()
}

prop_compose! {
    fn object(id: usize)(
        corner in (120.0..120.1f64, 30.0..30.1f64),
        size in (0.0..0.02f64, 0.0..0.02f64),
        line in any::<bool>(),
    ) -> GeoObject {
        if line {
            GeoObject::new(format!("o{id}"), Shape::Line, vec![p(corner.0, corner.1), p(corner.0 + size.0, corner.1 + size.1)])
                .unwrap()
        } else {
            quad(&format!("o{id}"), corner.0, corner.1, size.0.max(1e-4), size.1.max(1e-4))
        }
    }
}

fn database() -> impl Strategy<Value = Vec<GeoObject>> {
    (1usize..40).prop_flat_map(|n| (0..n).map(object).collect::<Vec<_>>())
}

/// Whether `k·|offset| / span` sits within `tol` of an integer for any side.
fn near_floor_boundary(l: GeoPoint, r: &Rect, k: u32, tol: f64) -> bool {
    let k = f64::from(k);
    [
        (l.lng - r.left, r.width()),
        (l.lat - r.bottom, r.height()),
        (l.lng - r.right, r.width()),
        (l.lat - r.top, r.height()),
    ]
    .iter()
    .any(|&(off, span)| {
        let x = k * off.abs() / span.max(1e-9);
        off.abs() < tol || (x < k + 1.0 && (x - x.round()).abs() < tol)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn codes_stay_in_range(
        objects in database(),
        probes in prop::collection::vec((119.99..120.12f64, 29.99..30.12f64), 20),
        k in 1u32..12,
        n_grid in 1u32..3000,
        inset in 0.0..0.05f64,
    ) {
        // The map may be smaller than the data, which exercises the clamp.
        let mut cfg = GcConfig::new(Rect::new(120.0 + inset, 30.0 + inset, 120.1, 30.1).unwrap());
        cfg.k = k;
        cfg.n_grid = n_grid;
        cfg.radius = 3000.0;
        let index = SpatialIndex::new(objects);
        for (lng, lat) in probes {
            let l = p(lng, lat);
            let rec = extract_gc(l, &index, &cfg).unwrap();
            prop_assert!(rec.objects.len() <= cfg.n_max);
            for o in &rec.objects {
                prop_assert!(o.rel_pos_codes.iter().all(|&c| c <= 2 * k));
                prop_assert!(o.grid_codes.iter().all(|&c| c < n_grid));
            }
            let order: Vec<u32> = index
                .nearby(l, cfg.n_max, cfg.radius, cfg.line_eps)
                .iter()
                .map(|r| cfg.id_code(index.object(r.object).id()))
                .collect();
            prop_assert_eq!(rec.objects.iter().map(|o| o.object_id_code).collect::<Vec<_>>(), order);
        }
    }

    #[test]
    fn relative_codes_survive_a_small_common_shift(
        objects in database(),
        anchor in (120.0..120.1f64, 30.0..30.1f64),
        shift in (-1.0..1.0f64, -1.0..1.0f64),
    ) {
        let cfg = {
            let mut c = GcConfig::new(Rect::new(119.9, 29.9, 120.2, 30.2).unwrap());
            c.radius = 1e5;
            c.n_max = 100;
            c
        };
        let (sx, sy) = map_scale(&cfg.map_bounds, cfg.n_grid).unwrap();
        let (dx, dy) = (shift.0 * sx, shift.1 * sy);
        let l = p(anchor.0, anchor.1);
        prop_assume!(objects.iter().all(|o| !near_floor_boundary(l, &bounding_rect(o), cfg.k, 1e-6)));
        let moved: Vec<GeoObject> = objects.iter().map(|o| shifted(o, dx, dy)).collect();
        let a = extract_gc(l, &SpatialIndex::new(objects), &cfg).unwrap();
        let b = extract_gc(p(l.lng + dx, l.lat + dy), &SpatialIndex::new(moved), &cfg).unwrap();
        prop_assert_eq!(a.objects.len(), b.objects.len());
        let key = |r: &GcRecord| {
            let mut v: Vec<(u32, [u32; 4])> = r.objects.iter().map(|o| (o.object_id_code, o.rel_pos_codes)).collect();
            v.sort();
            v
        };
        prop_assert_eq!(key(&a), key(&b));
    }

    #[test]
    fn interior_anchors_have_the_inside_sign_pattern(
        corner in (120.0..120.1f64, 30.0..30.1f64),
        size in (1e-4..0.02f64, 1e-4..0.02f64),
        at in (0.001..0.999f64, 0.001..0.999f64),
        k in 1u32..12,
    ) {
        let o = quad("q", corner.0, corner.1, size.0, size.1);
        let l = p(corner.0 + at.0 * size.0, corner.1 + at.1 * size.1);
        let mut cfg = GcConfig::new(Rect::new(119.9, 29.9, 120.2, 30.2).unwrap());
        cfg.k = k;
        let rec = extract_gc(l, &SpatialIndex::new(vec![o]), &cfg).unwrap();
        prop_assert_eq!(rec.objects.len(), 1);
        let f = rec.objects[0];
        prop_assert_eq!(f.relation_code, 1);
        let [left, bottom, right, top] = f.rel_pos_codes;
        prop_assert!(left >= k && bottom >= k);
        prop_assert!(right <= k && top <= k);
    }
}

fn fixture() -> (SpatialIndex, GcConfig) {
    let objects = vec![
        quad("block-a", 120.010, 30.010, 0.004, 0.003),
        quad("block-b", 120.016, 30.010, 0.003, 0.005),
        quad("block-c", 120.008, 30.016, 0.006, 0.002),
        quad("park", 120.012, 30.012, 0.001, 0.001),
        GeoObject::new("road-1", Shape::Line, vec![p(120.000, 30.0145), p(120.030, 30.0145)]).unwrap(),
        GeoObject::new("road-2", Shape::Line, vec![p(120.0150, 30.000), p(120.0150, 30.030)]).unwrap(),
        GeoObject::new("road-3", Shape::Line, vec![p(120.005, 30.005), p(120.020, 30.020), p(120.025, 30.020)])
            .unwrap(),
        GeoObject::new(
            "lake",
            Shape::Polygon,
            vec![p(120.020, 30.016), p(120.024, 30.017), p(120.023, 30.021), p(120.019, 30.020)],
        )
        .unwrap(),
        quad("plaza", 120.0125, 30.0125, 0.0005, 0.0005),
        GeoObject::new("alley", Shape::Line, vec![p(120.013, 30.011), p(120.013, 30.011 + 1e-5)]).unwrap(),
    ];
    let mut cfg = GcConfig::new(Rect::new(120.0, 30.0, 120.03, 30.03).unwrap());
    cfg.id_buckets = 97;
    cfg.n_grid = 50;
    (SpatialIndex::new(objects), cfg)
}

#[test]
fn fixed_fixture_gives_the_frozen_record() {
    let (index, cfg) = fixture();
    let rec = extract_gc(p(120.0128, 30.0124), &index, &cfg).unwrap();
    let codes: Vec<[u32; 11]> = rec.objects.iter().map(|o| o.codes()).collect();
    assert_eq!(codes, GOLDEN);
    assert_eq!(extract_gc(p(120.0128, 30.0124), &index, &cfg).unwrap(), rec);
}

/// Relation, id, shape, four relative-position and four grid codes per object.
const GOLDEN: [[u32; 11]; 10] = [
    [1, 1, 1, 16, 17, 7, 8, 16, 16, 23, 21],
    [1, 53, 1, 17, 13, 8, 4, 20, 20, 21, 21],
    [0, 38, 1, 15, 8, 6, 0, 20, 20, 21, 21],
    [0, 82, 0, 13, 14, 4, 5, 8, 8, 41, 33],
    [0, 50, 0, 0, 20, 0, 20, 21, 18, 21, 18],
    [0, 96, 0, 0, 14, 0, 5, 25, 0, 25, 49],
    [0, 54, 0, 14, 0, 5, 0, 0, 24, 49, 24],
    [0, 56, 1, 0, 14, 0, 5, 26, 16, 31, 25],
    [0, 70, 1, 18, 0, 9, 0, 13, 26, 23, 29],
    [0, 61, 1, 0, 3, 0, 0, 31, 26, 40, 35],
];
