//! Synthetic grid-city benchmark with name collisions as hard negatives.
//!
//! Roads are jittered polylines crossing the whole city; regions are the
//! cells of a jittered grid, so every point lies in exactly one region.
//! POI text carries only a name and a house number. Unique names borrow a
//! nearby road or region word. Chain members share name and number and sit
//! in different regions, far apart, so their texts are identical.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geodata::{CorpusBundle, GeoObject, GeoPoint, Poi, Query, QueryType, Shape};
use crate::rng::{self, StreamRng};
use crate::spatial::{haversine, point_in_polygon, point_to_object_distance, Rect, EARTH_RADIUS_M};

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

const BRANDS: [&str; 32] = [
    "amberleaf", "bluecrest", "copperpot", "driftwood", "emberline", "foxglove", "goldfinch", "harborview",
    "ironbark", "juniper", "kestrel", "lanternfly", "marigold", "northwind", "oakmoss", "pinecone",
    "quartzite", "redwing", "saffron", "thistle", "umberhill", "velvetine", "willowby", "xenon",
    "yellowtail", "zephyr", "brightwater", "cinderella", "dovetail", "evergreen", "fairhaven", "greystone",
];

/// Category words and the synonym used by colloquial queries.
const CATEGORIES: [(&str, &str); 24] = [
    ("cafe", "coffeehouse"),
    ("bakery", "breadshop"),
    ("pharmacy", "drugstore"),
    ("hotel", "inn"),
    ("bank", "atm"),
    ("clinic", "doctor"),
    ("library", "reading"),
    ("cinema", "movies"),
    ("gym", "fitness"),
    ("market", "grocery"),
    ("school", "academy"),
    ("restaurant", "diner"),
    ("bookstore", "books"),
    ("florist", "flowers"),
    ("garage", "mechanic"),
    ("salon", "hairdresser"),
    ("museum", "gallery"),
    ("hostel", "lodging"),
    ("bistro", "eatery"),
    ("tailor", "alterations"),
    ("dentist", "dental"),
    ("laundry", "laundromat"),
    ("stadium", "arena"),
    ("teahouse", "tearoom"),
];

const FILLERS: [&str; 6] = ["where is", "how do i get to", "looking for", "take me to", "find the", "any"];
const CONNECTORS: [&str; 3] = ["near", "by", "around"];
const MAX_HOUSE_NUMBER: u32 = 300;
const NEAR_RADIUS_M: f64 = 1_000.0;
const PLACEMENT_ATTEMPTS: usize = 20_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub bounds: Rect,
    /// LINE objects; split between east-west and north-south roads.
    pub roads: usize,
    /// POLYGON objects; they tile the city.
    pub regions: usize,
    pub pois: usize,
    pub queries: usize,
    /// Relative weights of ADDRESS, STREET_NO and COLLOQUIAL queries.
    pub query_mix: [f64; 3],
    /// Fraction of POIs whose name is shared with at least one other POI.
    pub collision_rate: f64,
    /// POIs per shared name (the last group may be larger by one).
    pub chain_size: usize,
    /// Minimum distance between POIs that share a name.
    pub chain_separation_m: f64,
    /// Fraction of queries placed within 1 km of their gold POI.
    pub near_fraction: f64,
    /// Train, dev and test shares of the queries.
    pub split: [f64; 3],
    pub train_candidates: usize,
    pub eval_candidates: usize,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            bounds: Rect::new(120.0, 30.15, 120.2, 30.33).expect("valid bounds"),
            roads: 40,
            regions: 60,
            pois: 500,
            queries: 2_000,
            query_mix: [0.90, 0.07, 0.03],
            collision_rate: 0.4,
            chain_size: 16,
            chain_separation_m: 2_500.0,
            near_fraction: 0.5,
            split: [0.56, 0.22, 0.22],
            train_candidates: 20,
            eval_candidates: 40,
            seed: 17,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        let fraction = |x: f64| (0.0..=1.0).contains(&x);
        if self.roads < 1 || self.regions < 1 || self.pois < 1 || self.queries < 1 {
            return Err(Error::InvalidConfig("generator counts must be at least 1"));
        }
        if !fraction(self.collision_rate) || !fraction(self.near_fraction) {
            return Err(Error::InvalidConfig("generator fractions must lie in [0, 1]"));
        }
        if self.query_mix.iter().any(|w| !(*w >= 0.0)) || self.query_mix.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidConfig("query mix needs non-negative weights with a positive sum"));
        }
        if self.split.iter().any(|w| !fraction(*w)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("split shares must lie in [0, 1] and sum to 1"));
        }
        if self.chain_size < 2 {
            return Err(Error::InvalidConfig("chain_size must be at least 2"));
        }
        if self.train_candidates < 1 || self.eval_candidates < 1 {
            return Err(Error::InvalidConfig("candidate list sizes must be at least 1"));
        }
        if !(self.chain_separation_m >= 0.0) {
            return Err(Error::InvalidConfig("chain_separation_m must be non-negative"));
        }
        Ok(())
    }

    /// Sizes of the shared-name groups.
    fn chains(&self) -> Result<Vec<usize>> {
        let shared = libm::round(self.collision_rate * self.pois as f64) as usize;
        if shared > self.pois {
            return Err(Error::InfeasibleSpec("more colliding POIs than POIs"));
        }
        if shared == 1 {
            return Err(Error::InfeasibleSpec("a shared name needs at least two POIs"));
        }
        let mut groups = Vec::new();
        let mut left = shared;
        while left > 0 {
            let take = if left < 2 * self.chain_size && left > self.chain_size {
                left - left / 2
            } else {
                left.min(self.chain_size)
            };
            groups.push(take);
            left -= take;
        }
        if groups.len() > BRANDS.len() {
            return Err(Error::InfeasibleSpec("more shared names than brand words"));
        }
        Ok(groups)
    }
}

fn padded_id(prefix: &str, i: usize, count: usize) -> String {
    let width = format!("{count}").len().max(2);
    format!("{prefix}{:0width$}", i + 1)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn point(lng: f64, lat: f64) -> GeoPoint {
    // Six decimals (about 0.1 m) keep the files compact and round-trip exact.
    GeoPoint::new_unchecked(libm::round(lng * 1e6) / 1e6, libm::round(lat * 1e6) / 1e6)
}

fn roads(spec: &GenSpec, r: &mut StreamRng) -> Result<Vec<GeoObject>> {
    let b = &spec.bounds;
    let east_west = spec.roads / 2;
    let north_south = spec.roads - east_west;
    let segments = 8;
    let mut out = Vec::with_capacity(spec.roads);
    for i in 0..spec.roads {
        let (count, j, horizontal) = if i < east_west {
            (east_west, i, true)
        } else {
            (north_south, i - east_west, false)
        };
        let span = if horizontal { b.height() } else { b.width() };
        let step = span / count as f64;
        let base = (j as f64 + 0.5) * step;
        let vertices = (0..=segments)
            .map(|s| {
                let t = s as f64 / segments as f64;
                let off = base + r.gen_range(-0.2..0.2) * step;
                if horizontal {
                    point(lerp(b.left, b.right, t), b.bottom + off)
                } else {
                    point(b.left + off, lerp(b.bottom, b.top, t))
                }
            })
            .collect();
        out.push(GeoObject::new(padded_id("road", i, spec.roads), Shape::Line, vertices)?);
    }
    Ok(out)
}

/// Columns and rows of the region grid: the factor pair closest to the
/// city's aspect ratio.
fn grid_shape(n: usize, bounds: &Rect) -> (usize, usize) {
    let aspect = bounds.width() / bounds.height();
    (1..=n)
        .filter(|c| n % c == 0)
        .map(|c| (c, n / c))
        .min_by(|a, b| {
            let da = libm::fabs(libm::log(a.0 as f64 / a.1 as f64 / aspect));
            let db = libm::fabs(libm::log(b.0 as f64 / b.1 as f64 / aspect));
            da.total_cmp(&db)
        })
        .expect("n >= 1")
}

fn regions(spec: &GenSpec, r: &mut StreamRng) -> Result<Vec<GeoObject>> {
    let b = &spec.bounds;
    let (cols, rows) = grid_shape(spec.regions, b);
    let (dx, dy) = (b.width() / cols as f64, b.height() / rows as f64);
    // Shared jittered grid nodes; border nodes stay on the city edge.
    let mut nodes = Vec::with_capacity((cols + 1) * (rows + 1));
    for y in 0..=rows {
        for x in 0..=cols {
            let jx = if x == 0 || x == cols { 0.0 } else { r.gen_range(-0.2..0.2) * dx };
            let jy = if y == 0 || y == rows { 0.0 } else { r.gen_range(-0.2..0.2) * dy };
            nodes.push(point(b.left + x as f64 * dx + jx, b.bottom + y as f64 * dy + jy));
        }
    }
    let at = |x: usize, y: usize| nodes[y * (cols + 1) + x];
    let mut out = Vec::with_capacity(spec.regions);
    for y in 0..rows {
        for x in 0..cols {
            let i = y * cols + x;
            let ring = alloc::vec![at(x, y), at(x + 1, y), at(x + 1, y + 1), at(x, y + 1)];
            out.push(GeoObject::new(padded_id("area", i, spec.regions), Shape::Polygon, ring)?);
        }
    }
    Ok(out)
}

struct City {
    roads: Vec<GeoObject>,
    regions: Vec<GeoObject>,
}

impl City {
    fn region_of(&self, p: GeoPoint) -> usize {
        for (i, o) in self.regions.iter().enumerate() {
            if point_in_polygon(p, o).unwrap_or(false) {
                return i;
            }
        }
        nearest(&self.regions, p)
    }

    fn road_near(&self, p: GeoPoint) -> usize {
        nearest(&self.roads, p)
    }
}

fn nearest(objects: &[GeoObject], p: GeoPoint) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, o) in objects.iter().enumerate() {
        let d = point_to_object_distance(p, o);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

fn uniform_point(b: &Rect, r: &mut StreamRng) -> GeoPoint {
    point(r.gen_range(b.left..b.right), r.gen_range(b.bottom..b.top))
}

/// Uniform over the disk of `radius` metres around `c`, clipped to `b` by
/// rejection.
fn point_near(c: GeoPoint, radius: f64, b: &Rect, r: &mut StreamRng) -> GeoPoint {
    let deg = core::f64::consts::PI / 180.0;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let d = radius * libm::sqrt(r.gen::<f64>());
        let theta = r.gen_range(0.0..core::f64::consts::TAU);
        let dlat = d * libm::cos(theta) / (EARTH_RADIUS_M * deg);
        let dlng = d * libm::sin(theta) / (EARTH_RADIUS_M * deg * libm::cos(c.lat * deg));
        let p = point(c.lng + dlng, c.lat + dlat);
        if b.contains(p) && haversine(p, c) <= radius {
            return p;
        }
    }
    c
}

struct PoiDraft {
    name: String,
    category: usize,
    number: u32,
    location: GeoPoint,
}

fn place_chain(
    size: usize,
    spec: &GenSpec,
    city: &City,
    r: &mut StreamRng,
) -> Result<Vec<GeoPoint>> {
    let mut placed: Vec<GeoPoint> = Vec::with_capacity(size);
    let mut used_regions = BTreeSet::new();
    let distinct_regions = size <= city.regions.len();
    for _ in 0..PLACEMENT_ATTEMPTS {
        if placed.len() == size {
            break;
        }
        let p = uniform_point(&spec.bounds, r);
        let region = city.region_of(p);
        if distinct_regions && used_regions.contains(&region) {
            continue;
        }
        if placed.iter().all(|&q| haversine(p, q) >= spec.chain_separation_m) {
            used_regions.insert(region);
            placed.push(p);
        }
    }
    if placed.len() < size {
        return Err(Error::InfeasibleSpec("shared-name POIs cannot be spread that far apart"));
    }
    Ok(placed)
}

fn pois(spec: &GenSpec, city: &City, r: &mut StreamRng) -> Result<Vec<PoiDraft>> {
    let chains = spec.chains()?;
    let mut brands: Vec<&str> = BRANDS.to_vec();
    brands.shuffle(r);
    let mut drafts = Vec::with_capacity(spec.pois);
    let mut names = BTreeSet::new();
    for (c, &size) in chains.iter().enumerate() {
        let category = r.gen_range(0..CATEGORIES.len());
        let name = format!("{} {}", brands[c], CATEGORIES[category].0);
        names.insert(name.clone());
        // One number for the whole chain keeps member texts identical.
        let number = r.gen_range(1..=MAX_HOUSE_NUMBER);
        for location in place_chain(size, spec, city, r)? {
            drafts.push(PoiDraft {
                name: name.clone(),
                category,
                number,
                location,
            });
        }
    }
    while drafts.len() < spec.pois {
        let location = uniform_point(&spec.bounds, r);
        let words = [
            city.regions[city.region_of(location)].id(),
            city.roads[city.road_near(location)].id(),
        ];
        let mut options: Vec<(usize, usize)> =
            (0..words.len()).flat_map(|w| (0..CATEGORIES.len()).map(move |c| (w, c))).collect();
        options.shuffle(r);
        let pick = options.into_iter().find(|&(w, c)| !names.contains(&format!("{} {}", words[w], CATEGORIES[c].0)));
        let Some((w, category)) = pick else {
            continue;
        };
        let name = format!("{} {}", words[w], CATEGORIES[category].0);
        names.insert(name.clone());
        drafts.push(PoiDraft {
            name,
            category,
            number: r.gen_range(1..=MAX_HOUSE_NUMBER),
            location,
        });
    }
    drafts.shuffle(r);
    Ok(drafts)
}

fn pick_type(mix: &[f64; 3], r: &mut StreamRng) -> QueryType {
    let total: f64 = mix.iter().sum();
    let mut u = r.gen::<f64>() * total;
    for (t, w) in QueryType::ALL.into_iter().zip(mix) {
        if u < *w {
            return t;
        }
        u -= w;
    }
    QueryType::ALL
        .into_iter()
        .zip(mix)
        .filter(|(_, w)| **w > 0.0)
        .last()
        .expect("positive mix")
        .0
}

fn query_text(t: QueryType, poi: &PoiDraft, city: &City, r: &mut StreamRng) -> String {
    let region = city.regions[city.region_of(poi.location)].id();
    let road = city.roads[city.road_near(poi.location)].id();
    match t {
        QueryType::Address => format!("{region} {road} {}", poi.name),
        QueryType::StreetNo => format!("{road} no {}", poi.number),
        QueryType::Colloquial => {
            let (word, synonym) = CATEGORIES[poi.category];
            let name = poi.name.replace(word, synonym);
            let filler = FILLERS[r.gen_range(0..FILLERS.len())];
            let connector = CONNECTORS[r.gen_range(0..CONNECTORS.len())];
            format!("{filler} {name} {connector} {road} {region}")
        }
    }
}

/// Gold, then POIs sharing its name, then POIs sharing a name word, then
/// random POIs; the final list is shuffled.
fn candidates(gold: usize, drafts: &[PoiDraft], size: usize, r: &mut StreamRng) -> Vec<usize> {
    let size = size.min(drafts.len());
    let words: BTreeSet<&str> = drafts[gold].name.split(' ').collect();
    let mut same = Vec::new();
    let mut similar = Vec::new();
    let mut rest = Vec::new();
    for (i, d) in drafts.iter().enumerate() {
        if i == gold {
            continue;
        }
        if d.name == drafts[gold].name {
            same.push(i);
        } else if d.name.split(' ').any(|w| words.contains(w)) {
            similar.push(i);
        } else {
            rest.push(i);
        }
    }
    let mut out = alloc::vec![gold];
    for mut tier in [same, similar, rest] {
        tier.shuffle(r);
        let room = size - out.len();
        out.extend(tier.into_iter().take(room));
    }
    out.shuffle(r);
    out
}

/// Generates a complete corpus. The same spec always gives the same bundle.
pub fn generate_benchmark(spec: &GenSpec) -> Result<CorpusBundle> {
    spec.validate()?;
    let mut city_rng = rng::stream(spec.seed, "bench.city");
    let city = City {
        roads: roads(spec, &mut city_rng)?,
        regions: regions(spec, &mut city_rng)?,
    };
    let drafts = pois(spec, &city, &mut rng::stream(spec.seed, "bench.pois"))?;
    let poi_ids: Vec<String> = (0..drafts.len()).map(|i| padded_id("poi", i, drafts.len())).collect();

    let mut order: Vec<usize> = (0..spec.queries).collect();
    order.shuffle(&mut rng::stream(spec.seed, "bench.split"));
    let n_train = libm::round(spec.split[0] * spec.queries as f64) as usize;
    let n_dev = (libm::round(spec.split[1] * spec.queries as f64) as usize).min(spec.queries - n_train);
    let mut split_of = alloc::vec![2usize; spec.queries];
    for (rank, &q) in order.iter().enumerate() {
        split_of[q] = if rank < n_train {
            0
        } else if rank < n_train + n_dev {
            1
        } else {
            2
        };
    }

    let mut r = rng::stream(spec.seed, "bench.queries");
    let mut queries = Vec::with_capacity(spec.queries);
    let mut splits: BTreeMap<String, Vec<String>> = SPLITS.iter().map(|s| (s.to_string(), Vec::new())).collect();
    for (qi, &split) in split_of.iter().enumerate() {
        let gold = r.gen_range(0..drafts.len());
        let t = pick_type(&spec.query_mix, &mut r);
        let location = if r.gen::<f64>() < spec.near_fraction {
            point_near(drafts[gold].location, NEAR_RADIUS_M, &spec.bounds, &mut r)
        } else {
            uniform_point(&spec.bounds, &mut r)
        };
        let text = query_text(t, &drafts[gold], &city, &mut r);
        let size = if split == 0 { spec.train_candidates } else { spec.eval_candidates };
        let cands = candidates(gold, &drafts, size, &mut r);
        let id = padded_id("q", qi, spec.queries);
        splits.get_mut(SPLITS[split]).expect("known split").push(id.clone());
        queries.push(Query {
            id,
            text,
            location: Some(location),
            query_type: t,
            candidates: cands.iter().map(|&i| poi_ids[i].clone()).collect(),
            gold: poi_ids[gold].clone(),
        });
    }

    let pois = drafts
        .iter()
        .zip(&poi_ids)
        .map(|(d, id)| Poi {
            id: id.clone(),
            text: format!("{} no {}", d.name, d.number),
            location: d.location,
        })
        .collect();
    let mut objects = city.roads;
    objects.extend(city.regions);
    CorpusBundle::new(objects, pois, queries, splits)
}

/// The name part of a generated POI text (everything before the house
/// number).
pub fn poi_name(text: &str) -> &str {
    text.rsplit_once(" no ").map_or(text, |(name, _)| name)
}
