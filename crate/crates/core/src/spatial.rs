//! Geometric kernels over longitude/latitude: great-circle distance,
//! bounding rectangles, containment, point-to-object distance and a uniform
//! grid index for nearest-object queries.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::geodata::{GeoObject, GeoPoint, Shape};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const DEFAULT_LINE_EPS_M: f64 = 5.0;
pub const DEFAULT_NEARBY_N: usize = 20;
pub const DEFAULT_RADIUS_M: f64 = 1_000.0;
pub const DEFAULT_CELL_DEG: f64 = 0.01;

const DEG: f64 = core::f64::consts::PI / 180.0;

/// Great-circle distance in meters on a sphere of radius 6,371 km.
pub fn haversine(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat * DEG, b.lat * DEG);
    let half_dphi = (phi2 - phi1) * 0.5;
    let half_dlambda = (b.lng - a.lng) * DEG * 0.5;
    let s1 = libm::sin(half_dphi);
    let s2 = libm::sin(half_dlambda);
    let h = s1 * s1 + libm::cos(phi1) * libm::cos(phi2) * s2 * s2;
    2.0 * EARTH_RADIUS_M * libm::asin(libm::sqrt(h.min(1.0)))
}

/// Axis-aligned rectangle in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub left: f64,
    pub bottom: f64,
    pub right: f64,
    pub top: f64,
}

impl Rect {
    pub fn new(left: f64, bottom: f64, right: f64, top: f64) -> Result<Self> {
        if left <= right && bottom <= top {
            Ok(Self {
                left,
                bottom,
                right,
                top,
            })
        } else {
            Err(Error::InvalidConfig("rect sides out of order"))
        }
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn height(&self) -> f64 {
        self.top - self.bottom
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        p.lng >= self.left && p.lng <= self.right && p.lat >= self.bottom && p.lat <= self.top
    }

    pub fn union(&self, other: &Rect) -> Rect {
        Rect {
            left: self.left.min(other.left),
            bottom: self.bottom.min(other.bottom),
            right: self.right.max(other.right),
            top: self.top.max(other.top),
        }
    }

    /// Grows every side by `fraction` of the corresponding span.
    pub fn padded(&self, fraction: f64) -> Rect {
        let dx = self.width() * fraction;
        let dy = self.height() * fraction;
        Rect {
            left: self.left - dx,
            bottom: self.bottom - dy,
            right: self.right + dx,
            top: self.top + dy,
        }
    }

    /// Corners counter-clockwise from bottom-left.
    pub fn corners(&self) -> [GeoPoint; 4] {
        [
            GeoPoint::new_unchecked(self.left, self.bottom),
            GeoPoint::new_unchecked(self.right, self.bottom),
            GeoPoint::new_unchecked(self.right, self.top),
            GeoPoint::new_unchecked(self.left, self.top),
        ]
    }
}

/// Min/max of vertex longitudes and latitudes.
pub fn bounding_rect(o: &GeoObject) -> Rect {
    bounding_rect_of(o.vertices())
}

pub fn bounding_rect_of(points: &[GeoPoint]) -> Rect {
    let first = points[0];
    points.iter().skip(1).fold(
        Rect {
            left: first.lng,
            bottom: first.lat,
            right: first.lng,
            top: first.lat,
        },
        |r, p| Rect {
            left: r.left.min(p.lng),
            bottom: r.bottom.min(p.lat),
            right: r.right.max(p.lng),
            top: r.top.max(p.lat),
        },
    )
}

fn on_segment(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> bool {
    let cross = (b.lng - a.lng) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lng - a.lng);
    cross == 0.0
        && p.lng >= a.lng.min(b.lng)
        && p.lng <= a.lng.max(b.lng)
        && p.lat >= a.lat.min(b.lat)
        && p.lat <= a.lat.max(b.lat)
}

/// Even-odd ray casting in the lng/lat plane; points on an edge are inside.
pub fn point_in_polygon(l: GeoPoint, o: &GeoObject) -> Result<bool> {
    if o.shape() != Shape::Polygon {
        return Err(Error::ShapeMismatch {
            expected: "POLYGON",
        });
    }
    Ok(ray_cast(l, o))
}

fn ray_cast(l: GeoPoint, o: &GeoObject) -> bool {
    if !bounding_rect(o).contains(l) {
        return false;
    }
    let mut inside = false;
    for (a, b) in o.segments() {
        if on_segment(l, a, b) {
            return true;
        }
        if (a.lat > l.lat) != (b.lat > l.lat) {
            let x = a.lng + (l.lat - a.lat) * (b.lng - a.lng) / (b.lat - a.lat);
            if l.lng < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Closest point of segment `a`-`b` to `l`, found in an equirectangular
/// plane centered on `l`.
fn closest_on_segment(l: GeoPoint, a: GeoPoint, b: GeoPoint) -> GeoPoint {
    let kx = libm::cos(l.lat * DEG);
    let (ax, ay) = ((a.lng - l.lng) * kx, a.lat - l.lat);
    let (bx, by) = ((b.lng - l.lng) * kx, b.lat - l.lat);
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (-(ax * dx + ay * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    GeoPoint::new_unchecked(a.lng + t * (b.lng - a.lng), a.lat + t * (b.lat - a.lat))
}

/// Zero when a polygon covers `l`, otherwise the smallest great-circle
/// distance from `l` to any segment of the object.
pub fn point_to_object_distance(l: GeoPoint, o: &GeoObject) -> f64 {
    if o.shape() == Shape::Polygon && ray_cast(l, o) {
        return 0.0;
    }
    segment_distance(l, o)
}

fn segment_distance(l: GeoPoint, o: &GeoObject) -> f64 {
    o.segments()
        .map(|(a, b)| {
            let c = closest_on_segment(l, a, b);
            haversine(l, c).min(haversine(l, a)).min(haversine(l, b))
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RelationType {
    Near,
    Covered,
}

impl RelationType {
    pub const fn code(self) -> usize {
        match self {
            RelationType::Near => 0,
            RelationType::Covered => 1,
        }
    }
}

pub fn relation_type(l: GeoPoint, o: &GeoObject, line_eps: f64) -> RelationType {
    relation_and_distance(l, o, line_eps).0
}

fn relation_and_distance(l: GeoPoint, o: &GeoObject, line_eps: f64) -> (RelationType, f64) {
    match o.shape() {
        Shape::Polygon => {
            if ray_cast(l, o) {
                (RelationType::Covered, 0.0)
            } else {
                (RelationType::Near, segment_distance(l, o))
            }
        }
        Shape::Line => {
            let d = segment_distance(l, o);
            if d <= line_eps {
                (RelationType::Covered, 0.0)
            } else {
                (RelationType::Near, d)
            }
        }
    }
}

/// One nearby object. `object` indexes [`SpatialIndex::object`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Relation {
    pub object: usize,
    pub relation_type: RelationType,
    pub distance: f64,
}

/// Uniform lng/lat grid over immutable objects. Objects are stored sorted by
/// id, so lookups do not depend on insertion order.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    objects: Vec<GeoObject>,
    rects: Vec<Rect>,
    extent: Option<Rect>,
    cell: f64,
    cols: usize,
    rows: usize,
    cells: Vec<Vec<usize>>,
}

impl SpatialIndex {
    pub fn new(objects: Vec<GeoObject>) -> Self {
        Self::with_cell_size(objects, DEFAULT_CELL_DEG)
    }

    pub fn with_cell_size(mut objects: Vec<GeoObject>, cell: f64) -> Self {
        assert!(cell > 0.0, "cell size must be positive");
        objects.sort_by(|a, b| a.id().cmp(b.id()));
        let rects: Vec<Rect> = objects.iter().map(bounding_rect).collect();
        let extent = rects.iter().copied().reduce(|a, b| a.union(&b));
        let (cols, rows) = match extent {
            Some(e) => (
                (e.width() / cell) as usize + 1,
                (e.height() / cell) as usize + 1,
            ),
            None => (0, 0),
        };
        let mut index = Self {
            objects,
            rects,
            extent,
            cell,
            cols,
            rows,
            cells: vec![Vec::new(); cols * rows],
        };
        for (i, r) in index.rects.clone().iter().enumerate() {
            let (c0, r0) = index.cell_of(r.left, r.bottom);
            let (c1, r1) = index.cell_of(r.right, r.top);
            for row in r0..=r1 {
                for col in c0..=c1 {
                    index.cells[row * cols + col].push(i);
                }
            }
        }
        index
    }

    fn cell_of(&self, lng: f64, lat: f64) -> (usize, usize) {
        let e = self.extent.expect("cell_of on empty index");
        let c = libm::floor((lng - e.left) / self.cell).clamp(0.0, (self.cols - 1) as f64);
        let r = libm::floor((lat - e.bottom) / self.cell).clamp(0.0, (self.rows - 1) as f64);
        (c as usize, r as usize)
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn object(&self, i: usize) -> &GeoObject {
        &self.objects[i]
    }

    pub fn rect(&self, i: usize) -> Rect {
        self.rects[i]
    }

    pub fn objects(&self) -> &[GeoObject] {
        &self.objects
    }

    pub fn extent(&self) -> Option<Rect> {
        self.extent
    }

    /// At most `n` objects within `radius` meters, ascending by distance with
    /// ties broken by id. Covered objects carry distance zero.
    pub fn nearby(&self, l: GeoPoint, n: usize, radius: f64, line_eps: f64) -> Vec<Relation> {
        let Some(e) = self.extent else {
            return Vec::new();
        };
        // Degree extents of the radius with a safety margin; candidates only
        // need to be a superset of the true answer.
        let dlat = radius / (EARTH_RADIUS_M * DEG) * 1.1 + 1e-9;
        let coslat = libm::cos((l.lat.abs() + dlat).min(89.9) * DEG);
        let dlng = dlat / coslat;
        let (lo_lng, hi_lng) = (l.lng - dlng, l.lng + dlng);
        let (lo_lat, hi_lat) = (l.lat - dlat, l.lat + dlat);
        if hi_lng < e.left || lo_lng > e.right || hi_lat < e.bottom || lo_lat > e.top {
            return Vec::new();
        }
        let (c0, r0) = self.cell_of(lo_lng, lo_lat);
        let (c1, r1) = self.cell_of(hi_lng, hi_lat);
        let mut seen = vec![false; self.objects.len()];
        let mut out = Vec::new();
        for row in r0..=r1 {
            for col in c0..=c1 {
                for &i in &self.cells[row * self.cols + col] {
                    if core::mem::replace(&mut seen[i], true) {
                        continue;
                    }
                    let (relation_type, distance) =
                        relation_and_distance(l, &self.objects[i], line_eps);
                    if distance <= radius {
                        out.push(Relation {
                            object: i,
                            relation_type,
                            distance,
                        });
                    }
                }
            }
        }
        self.sort_relations(&mut out);
        out.truncate(n);
        out
    }

    /// Distance ascending, then object id.
    pub fn sort_relations(&self, rels: &mut [Relation]) {
        rels.sort_by(|a, b| {
            a.distance
                .partial_cmp(&b.distance)
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.objects[a.object].id().cmp(self.objects[b.object].id()))
        });
    }
}

/// [`SpatialIndex::nearby`] with the default line tolerance.
pub fn nearby_objects(l: GeoPoint, index: &SpatialIndex, n: usize, radius: f64) -> Vec<Relation> {
    index.nearby(l, n, radius, DEFAULT_LINE_EPS_M)
}
