//! Discrete geographic-context features: relative position of an anchor
//! against each nearby object's bounding rectangle, the object's position on
//! a global map grid, and its relation, shape and hashed id.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geodata::{CorpusBundle, GeoPoint, Shape};
use crate::rng::stable_hash;
use crate::spatial::{self, Rect, RelationType, SpatialIndex};

/// Number of feature families per object: relation, id, shape, four
/// relative-position sides and four grid sides.
pub const FAMILIES: usize = 11;

pub const FAMILY_NAMES: [&str; FAMILIES] = [
    "relation",
    "object_id",
    "shape",
    "rel_pos_left",
    "rel_pos_bottom",
    "rel_pos_right",
    "rel_pos_top",
    "grid_left",
    "grid_bottom",
    "grid_right",
    "grid_top",
];

/// Smallest span used as a relative-position denominator, in degrees.
pub const MIN_SPAN_DEG: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct GcConfig {
    /// Discretization factor for relative positions.
    pub k: u32,
    /// Grid cells per map axis.
    pub n_grid: u32,
    pub map_bounds: Rect,
    pub n_max: usize,
    pub radius: f64,
    pub line_eps: f64,
    /// Hash buckets for object ids. Code `id_buckets` is the out-of-vocabulary row.
    pub id_buckets: u32,
}

impl GcConfig {
    pub const DEFAULT_K: u32 = 10;
    pub const DEFAULT_N_GRID: u32 = 2000;
    pub const DEFAULT_ID_BUCKETS: u32 = 50_021;

    pub fn new(map_bounds: Rect) -> Self {
        Self {
            k: Self::DEFAULT_K,
            n_grid: Self::DEFAULT_N_GRID,
            map_bounds,
            n_max: spatial::DEFAULT_NEARBY_N,
            radius: spatial::DEFAULT_RADIUS_M,
            line_eps: spatial::DEFAULT_LINE_EPS_M,
            id_buckets: Self::DEFAULT_ID_BUCKETS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidConfig("k must be at least 1"));
        }
        if self.n_grid < 1 {
            return Err(Error::InvalidConfig("grid count must be at least 1"));
        }
        if self.n_max < 1 {
            return Err(Error::InvalidConfig("n_max must be at least 1"));
        }
        if !(self.radius > 0.0) || !(self.line_eps >= 0.0) {
            return Err(Error::InvalidConfig("radius must be positive, line_eps non-negative"));
        }
        if self.id_buckets < 1 {
            return Err(Error::InvalidConfig("id_buckets must be at least 1"));
        }
        map_scale(&self.map_bounds, self.n_grid).map(|_| ())
    }

    /// Valid code counts per family (MASK rows excluded).
    pub fn family_sizes(&self) -> [usize; FAMILIES] {
        let rp = 2 * self.k as usize + 1;
        let g = self.n_grid as usize;
        [2, self.id_buckets as usize + 1, 2, rp, rp, rp, rp, g, g, g, g]
    }

    pub fn id_code(&self, id: &str) -> u32 {
        if id.is_empty() {
            self.id_buckets
        } else {
            (stable_hash(id) % u64::from(self.id_buckets)) as u32
        }
    }
}

/// Bounding box of every coordinate in the corpus, padded by 1% per side.
pub fn corpus_map_bounds(bundle: &CorpusBundle) -> Option<Rect> {
    let points = bundle
        .objects()
        .iter()
        .flat_map(|o| o.vertices().iter().copied())
        .chain(bundle.pois().iter().map(|p| p.location))
        .chain(bundle.queries().iter().filter_map(|q| q.location));
    let mut rect: Option<Rect> = None;
    for p in points {
        let r = Rect {
            left: p.lng,
            bottom: p.lat,
            right: p.lng,
            top: p.lat,
        };
        rect = Some(rect.map_or(r, |acc| acc.union(&r)));
    }
    rect.map(|r| r.padded(0.01))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ObjectFeatures {
    pub object_id_code: u32,
    pub shape_code: u32,
    pub relation_code: u32,
    /// Left, bottom, right, top; each in `[0, 2k]`.
    pub rel_pos_codes: [u32; 4],
    /// Left, bottom, right, top; each in `[0, N-1]`.
    pub grid_codes: [u32; 4],
}

impl ObjectFeatures {
    /// Codes in family order (see [`FAMILY_NAMES`]).
    pub fn codes(&self) -> [u32; FAMILIES] {
        let [a, b, c, d] = self.rel_pos_codes;
        let [e, f, g, h] = self.grid_codes;
        [
            self.relation_code,
            self.object_id_code,
            self.shape_code,
            a,
            b,
            c,
            d,
            e,
            f,
            g,
            h,
        ]
    }

    pub fn from_codes(c: [u32; FAMILIES]) -> Self {
        Self {
            relation_code: c[0],
            object_id_code: c[1],
            shape_code: c[2],
            rel_pos_codes: [c[3], c[4], c[5], c[6]],
            grid_codes: [c[7], c[8], c[9], c[10]],
        }
    }

    pub fn shape(&self) -> Shape {
        if self.shape_code == Shape::Polygon.code() as u32 {
            Shape::Polygon
        } else {
            Shape::Line
        }
    }
}

/// Geographic context of one anchor: its nearby objects, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct GcRecord {
    pub anchor: GeoPoint,
    pub objects: Vec<ObjectFeatures>,
}

impl GcRecord {
    pub fn empty(anchor: GeoPoint) -> Self {
        Self {
            anchor,
            objects: Vec::new(),
        }
    }

    /// Keeps only objects of one shape, preserving order.
    pub fn only_shape(&self, shape: Shape) -> Self {
        Self {
            anchor: self.anchor,
            objects: self
                .objects
                .iter()
                .copied()
                .filter(|o| o.shape() == shape)
                .collect(),
        }
    }
}

fn side_code(offset: f64, span: f64, k: u32) -> u32 {
    let kf = f64::from(k);
    let ratio = libm::floor(kf * offset.abs() / span.max(MIN_SPAN_DEG)).min(kf);
    let signed = if offset > 0.0 {
        ratio
    } else if offset < 0.0 {
        -ratio
    } else {
        0.0
    };
    (signed + kf) as u32
}

/// Signed, capped, floored offset of `l` from each rectangle side, shifted
/// into `[0, 2k]`. Longitude sides are normalized by the rectangle width,
/// latitude sides by its height.
pub fn relative_position(l: GeoPoint, rect: &Rect, k: u32) -> [u32; 4] {
    let (w, h) = (rect.width(), rect.height());
    [
        side_code(l.lng - rect.left, w, k),
        side_code(l.lat - rect.bottom, h, k),
        side_code(l.lng - rect.right, w, k),
        side_code(l.lat - rect.top, h, k),
    ]
}

/// Grid scale factors `(width / N, height / N)`.
pub fn map_scale(map_bounds: &Rect, n: u32) -> Result<(f64, f64)> {
    let (w, h) = (map_bounds.width(), map_bounds.height());
    if !(w > 0.0 && h > 0.0) || n == 0 {
        return Err(Error::DegenerateBounds);
    }
    Ok((w / f64::from(n), h / f64::from(n)))
}

/// Floored map-grid cell of each rectangle side, clamped into `[0, N-1]`.
pub fn map_grid_position(rect: &Rect, scale: (f64, f64), map_bounds: &Rect, n: u32) -> [u32; 4] {
    let max = f64::from(n - 1);
    let cell = |offset: f64, s: f64| libm::floor(offset / s).clamp(0.0, max) as u32;
    [
        cell(rect.left - map_bounds.left, scale.0),
        cell(rect.bottom - map_bounds.bottom, scale.1),
        cell(rect.right - map_bounds.left, scale.0),
        cell(rect.top - map_bounds.bottom, scale.1),
    ]
}

/// Nearby objects of `l` turned into discrete features, in the order
/// returned by the spatial index.
pub fn extract_gc(l: GeoPoint, index: &SpatialIndex, cfg: &GcConfig) -> Result<GcRecord> {
    let scale = map_scale(&cfg.map_bounds, cfg.n_grid)?;
    let objects = index
        .nearby(l, cfg.n_max, cfg.radius, cfg.line_eps)
        .into_iter()
        .map(|rel| {
            let obj = index.object(rel.object);
            let rect = index.rect(rel.object);
            ObjectFeatures {
                object_id_code: cfg.id_code(obj.id()),
                shape_code: obj.shape().code() as u32,
                relation_code: match rel.relation_type {
                    RelationType::Near => 0,
                    RelationType::Covered => 1,
                },
                rel_pos_codes: relative_position(l, &rect, cfg.k),
                grid_codes: map_grid_position(&rect, scale, &cfg.map_bounds, cfg.n_grid),
            }
        })
        .collect();
    Ok(GcRecord { anchor: l, objects })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::GeoObject;
    use alloc::vec;

    fn p(lng: f64, lat: f64) -> GeoPoint {
        GeoPoint::new(lng, lat).unwrap()
    }

    fn unit() -> Rect {
        Rect::new(0.0, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn relative_position_examples() {
        assert_eq!(relative_position(p(0.0, 0.5), &unit(), 10)[0], 10);
        assert_eq!(relative_position(p(0.5, 0.5), &unit(), 10)[0], 15);
        assert_eq!(relative_position(p(100.0, 0.5), &unit(), 10)[0], 20);
        assert_eq!(relative_position(p(-100.0, 0.5), &unit(), 10)[0], 0);
        // right side: 0.5 left of it
        assert_eq!(relative_position(p(0.5, 0.5), &unit(), 10)[2], 5);
    }

    #[test]
    fn degenerate_rect_saturates() {
        let r = Rect::new(5.0, 5.0, 5.0, 9.0).unwrap();
        let codes = relative_position(p(5.001, 7.0), &r, 10);
        assert_eq!(codes[0], 20);
        assert_eq!(codes[2], 20);
        assert_eq!(relative_position(p(5.0, 7.0), &r, 10)[0], 10);
    }

    #[test]
    fn map_scale_examples() {
        let world = Rect::new(-180.0, -90.0, 180.0, 90.0).unwrap();
        let (sx, sy) = map_scale(&world, 2000).unwrap();
        assert_eq!(sx, 0.18);
        assert_eq!(sy, 0.09);
        let (s, _) = map_scale(&Rect::new(3.0, 0.0, 4.0, 2.0).unwrap(), 1).unwrap();
        assert_eq!(s, 1.0);
        assert!(map_scale(&Rect::new(0.0, 0.0, 0.0, 1.0).unwrap(), 10).is_err());
    }

    #[test]
    fn grid_examples() {
        let world = Rect::new(-180.0, -90.0, 180.0, 90.0).unwrap();
        let s = map_scale(&world, 2000).unwrap();
        let r = Rect::new(-180.0, 0.0, 200.0, 10.0).unwrap();
        let g = map_grid_position(&r, s, &world, 2000);
        assert_eq!(g[0], 0);
        assert_eq!(g[2], 1999);
        let r = Rect::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(map_grid_position(&r, s, &world, 2000)[0], 1000);
    }

    #[test]
    fn extraction_on_empty_map_and_inside_polygon() {
        let cfg = GcConfig::new(Rect::new(119.0, 29.0, 121.0, 31.0).unwrap());
        cfg.validate().unwrap();
        let empty = SpatialIndex::new(Vec::new());
        assert!(extract_gc(p(120.0, 30.0), &empty, &cfg).unwrap().objects.is_empty());

        let poly = GeoObject::new(
            "roi",
            Shape::Polygon,
            vec![p(120.0, 30.0), p(120.004, 30.0), p(120.004, 30.003), p(120.0, 30.003)],
        )
        .unwrap();
        let index = SpatialIndex::new(vec![poly]);
        let rec = extract_gc(p(120.001, 30.002), &index, &cfg).unwrap();
        assert_eq!(rec.objects.len(), 1);
        let f = rec.objects[0];
        assert_eq!(f.relation_code, 1);
        assert_eq!(f.shape_code, 1);
        for c in f.rel_pos_codes {
            assert!(c > 0 && c < 2 * cfg.k, "{c}");
        }
        assert!(f.rel_pos_codes[0] >= cfg.k && f.rel_pos_codes[1] >= cfg.k);
        assert!(f.rel_pos_codes[2] <= cfg.k && f.rel_pos_codes[3] <= cfg.k);
    }

    #[test]
    fn codes_round_trip() {
        let f = ObjectFeatures {
            object_id_code: 7,
            shape_code: 0,
            relation_code: 1,
            rel_pos_codes: [1, 2, 3, 4],
            grid_codes: [5, 6, 7, 8],
        };
        assert_eq!(ObjectFeatures::from_codes(f.codes()), f);
    }
}
