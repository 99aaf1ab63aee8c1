//! Planar geometry, zone/grid data types and areal reallocation of gridded
//! visitor counts to zones.
//!
//! All geometry is planar (projected meters). Inputs expressed in WGS84 are
//! projected once on load with a [`Projection`].

mod allocate;
mod clip;
pub mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use allocate::{allocate_cell_counts, AllocKey, AllocatedCounts, CountKey, GridCell};
pub use clip::{clip_ring_to_rect, polygon_rect_intersection_area, ring_area, ring_signed_area};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn distance_sq(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Rect {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.min_x < other.max_x && other.min_x < self.max_x && self.min_y < other.max_y && other.min_y < self.max_y
    }

    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.min_x + self.max_x), 0.5 * (self.min_y + self.max_y))
    }

    pub fn to_ring(&self) -> Vec<Point> {
        vec![
            Point::new(self.min_x, self.min_y),
            Point::new(self.max_x, self.min_y),
            Point::new(self.max_x, self.max_y),
            Point::new(self.min_x, self.max_y),
        ]
    }

    /// Bounding box of a set of points, `None` when empty.
    pub fn bounding(points: impl IntoIterator<Item = Point>) -> Option<Rect> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut r = Rect::new(first.x, first.y, first.x, first.y);
        for p in it {
            r.min_x = r.min_x.min(p.x);
            r.min_y = r.min_y.min(p.y);
            r.max_x = r.max_x.max(p.x);
            r.max_y = r.max_y.max(p.y);
        }
        Some(r)
    }
}

/// A polygon made of one or more disjoint simple parts, each an outer ring
/// without holes. Rings are stored open (the closing vertex is not repeated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub parts: Vec<Vec<Point>>,
}

impl Polygon {
    /// Builds a polygon, rejecting degenerate or self-intersecting rings.
    pub fn new(parts: Vec<Vec<Point>>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::Geometry("polygon has no rings".into()));
        }
        let mut cleaned = Vec::with_capacity(parts.len());
        for (k, mut ring) in parts.into_iter().enumerate() {
            if ring.len() >= 2 && ring.first() == ring.last() {
                ring.pop();
            }
            if ring.len() < 3 {
                return Err(Error::Geometry(format!(
                    "ring {k} has {} distinct vertices, need at least 3",
                    ring.len()
                )));
            }
            if ring.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
                return Err(Error::Geometry(format!("ring {k} has non-finite coordinates")));
            }
            if ring_area(&ring) <= 0.0 {
                return Err(Error::Geometry(format!("ring {k} has zero area")));
            }
            if let Some((a, b)) = clip::first_self_intersection(&ring) {
                return Err(Error::Geometry(format!(
                    "ring {k} is self-intersecting (edges {a} and {b})"
                )));
            }
            cleaned.push(ring);
        }
        Ok(Polygon { parts: cleaned })
    }

    pub fn from_rect(rect: &Rect) -> Self {
        Polygon {
            parts: vec![rect.to_ring()],
        }
    }

    pub fn area(&self) -> f64 {
        self.parts.iter().map(|r| ring_area(r)).sum()
    }

    /// Area-weighted centroid over all parts.
    pub fn centroid(&self) -> Point {
        let mut a_sum = 0.0;
        let mut cx = 0.0;
        let mut cy = 0.0;
        for ring in &self.parts {
            let (a, c) = ring_centroid(ring);
            a_sum += a;
            cx += a * c.x;
            cy += a * c.y;
        }
        Point::new(cx / a_sum, cy / a_sum)
    }

    pub fn bbox(&self) -> Rect {
        Rect::bounding(self.parts.iter().flatten().copied()).expect("polygon has vertices")
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.parts.iter().any(|r| ring_contains(r, p))
    }
}

/// Returns (absolute area, centroid) of a simple ring.
fn ring_centroid(ring: &[Point]) -> (f64, Point) {
    let n = ring.len();
    let mut a2 = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    // Shift to the first vertex to limit cancellation on projected coordinates.
    let o = ring[0];
    for i in 0..n {
        let p = ring[i];
        let q = ring[(i + 1) % n];
        let (px, py) = (p.x - o.x, p.y - o.y);
        let (qx, qy) = (q.x - o.x, q.y - o.y);
        let cross = px * qy - qx * py;
        a2 += cross;
        cx += (px + qx) * cross;
        cy += (py + qy) * cross;
    }
    let c = Point::new(o.x + cx / (3.0 * a2), o.y + cy / (3.0 * a2));
    (0.5 * a2.abs(), c)
}

/// Even-odd point-in-ring test.
pub fn ring_contains(ring: &[Point], p: &Point) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let a = ring[i];
        let b = ring[j];
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Neighborhood-level spatial unit with its census attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct Zone {
    pub id: String,
    /// Projected polygon (meters).
    pub polygon: Polygon,
    pub centroid: Point,
    pub population: f64,
    pub hdi: f64,
    pub mean_age: f64,
    pub pct_women: f64,
    pub immigrant_ratio: f64,
    pub rent_mean: f64,
    pub rent_per_m2: f64,
    /// Raw visitation density; the log transform happens at feature-build time.
    pub touristic_attractiveness: f64,
}

/// Census attributes of a zone, as read from the feature properties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneAttributes {
    pub population: f64,
    pub hdi: f64,
    pub mean_age: f64,
    pub pct_women: f64,
    pub immigrant_ratio: f64,
    pub rent_mean: f64,
    pub rent_per_m2: f64,
    pub touristic_attractiveness: f64,
}

impl ZoneAttributes {
    pub const NAMES: [&'static str; 8] = [
        "population",
        "hdi",
        "mean_age",
        "pct_women",
        "immigrant_ratio",
        "rent_mean",
        "rent_per_m2",
        "touristic_attractiveness",
    ];
}

impl Zone {
    pub fn new(id: impl Into<String>, polygon: Polygon, attrs: ZoneAttributes) -> Result<Self> {
        let id = id.into();
        let check = |field: &str, ok: bool, msg: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::invalid(format!("{id}.{field}"), msg))
            }
        };
        let a = &attrs;
        check(
            "population",
            a.population.is_finite() && a.population > 0.0,
            "must be > 0",
        )?;
        check("hdi", (0.0..=10.0).contains(&a.hdi), "must lie in [0, 10]")?;
        check("mean_age", a.mean_age.is_finite() && a.mean_age > 0.0, "must be > 0")?;
        check("pct_women", (0.0..=1.0).contains(&a.pct_women), "must lie in [0, 1]")?;
        check(
            "immigrant_ratio",
            a.immigrant_ratio.is_finite() && a.immigrant_ratio >= 0.0,
            "must be >= 0",
        )?;
        check("rent_mean", a.rent_mean.is_finite(), "must be finite")?;
        check("rent_per_m2", a.rent_per_m2.is_finite(), "must be finite")?;
        check(
            "touristic_attractiveness",
            a.touristic_attractiveness.is_finite() && a.touristic_attractiveness >= 0.0,
            "must be >= 0",
        )?;
        let centroid = polygon.centroid();
        Ok(Zone {
            id,
            polygon,
            centroid,
            population: a.population,
            hdi: a.hdi,
            mean_age: a.mean_age,
            pct_women: a.pct_women,
            immigrant_ratio: a.immigrant_ratio,
            rent_mean: a.rent_mean,
            rent_per_m2: a.rent_per_m2,
            touristic_attractiveness: a.touristic_attractiveness,
        })
    }

    pub fn attributes(&self) -> ZoneAttributes {
        ZoneAttributes {
            population: self.population,
            hdi: self.hdi,
            mean_age: self.mean_age,
            pct_women: self.pct_women,
            immigrant_ratio: self.immigrant_ratio,
            rent_mean: self.rent_mean,
            rent_per_m2: self.rent_per_m2,
            touristic_attractiveness: self.touristic_attractiveness,
        }
    }

    pub fn area(&self) -> f64 {
        self.polygon.area()
    }
}

/// Amenity categories; `PublicTransport` is excluded from diversity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmenityCategory {
    Education,
    Entertainment,
    Finance,
    Food,
    Government,
    Health,
    Professional,
    Recreation,
    Religion,
    Retail,
    PublicTransport,
}

impl AmenityCategory {
    pub const ALL: [AmenityCategory; 11] = [
        AmenityCategory::Education,
        AmenityCategory::Entertainment,
        AmenityCategory::Finance,
        AmenityCategory::Food,
        AmenityCategory::Government,
        AmenityCategory::Health,
        AmenityCategory::Professional,
        AmenityCategory::Recreation,
        AmenityCategory::Religion,
        AmenityCategory::Retail,
        AmenityCategory::PublicTransport,
    ];

    pub const COUNT: usize = 11;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AmenityCategory::Education => "education",
            AmenityCategory::Entertainment => "entertainment",
            AmenityCategory::Finance => "finance",
            AmenityCategory::Food => "food",
            AmenityCategory::Government => "government",
            AmenityCategory::Health => "health",
            AmenityCategory::Professional => "professional",
            AmenityCategory::Recreation => "recreation",
            AmenityCategory::Religion => "religion",
            AmenityCategory::Retail => "retail",
            AmenityCategory::PublicTransport => "public_transport",
        }
    }

    pub fn is_public_transport(self) -> bool {
        self == AmenityCategory::PublicTransport
    }
}

impl std::fmt::Display for AmenityCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AmenityCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AmenityCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid("category", format!("unknown amenity category `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Amenity {
    pub category: AmenityCategory,
    pub location: Point,
}

/// Approximate home location of one inhabitant (or a sample of them).
#[derive(Debug, Clone, PartialEq)]
pub struct ResidentPoint {
    pub zone_id: String,
    pub location: Point,
}

/// How input coordinates are projected. A transverse Mercator without an
/// explicit center is centered on the bounding box of the zones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProjectionSpec {
    Planar,
    TransverseMercator {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lon0: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lat0: Option<f64>,
    },
}

impl Default for ProjectionSpec {
    fn default() -> Self {
        ProjectionSpec::TransverseMercator { lon0: None, lat0: None }
    }
}

impl ProjectionSpec {
    pub fn resolve(&self, lonlat: impl IntoIterator<Item = Point>) -> Result<Projection> {
        match *self {
            ProjectionSpec::Planar => Ok(Projection::Planar),
            ProjectionSpec::TransverseMercator {
                lon0: Some(lon0),
                lat0: Some(lat0),
            } => Ok(Projection::TransverseMercator { lon0, lat0 }),
            ProjectionSpec::TransverseMercator { .. } => Projection::centered_on(lonlat)
                .ok_or_else(|| Error::Geometry("no coordinates to center the projection on".into())),
        }
    }
}

const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Mapping from input coordinates to planar meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Projection {
    /// Coordinates are already planar meters.
    Planar,
    /// Spherical transverse Mercator centered on (`lon0`, `lat0`) degrees.
    TransverseMercator { lon0: f64, lat0: f64 },
}

impl Projection {
    /// Transverse Mercator centered on the bounding box of lon/lat points.
    pub fn centered_on(lonlat: impl IntoIterator<Item = Point>) -> Option<Self> {
        let bb = Rect::bounding(lonlat)?;
        let c = bb.center();
        Some(Projection::TransverseMercator { lon0: c.x, lat0: c.y })
    }

    pub fn forward(&self, p: Point) -> Point {
        match *self {
            Projection::Planar => p,
            Projection::TransverseMercator { lon0, lat0 } => {
                let lam = (p.x - lon0).to_radians();
                let phi = p.y.to_radians();
                let phi0 = lat0.to_radians();
                let b = phi.cos() * lam.sin();
                let x = EARTH_RADIUS_M * b.atanh();
                let y = EARTH_RADIUS_M * (phi.tan().atan2(lam.cos()) - phi0);
                Point::new(x, y)
            }
        }
    }

    pub fn inverse(&self, p: Point) -> Point {
        match *self {
            Projection::Planar => p,
            Projection::TransverseMercator { lon0, lat0 } => {
                let d = p.y / EARTH_RADIUS_M + lat0.to_radians();
                let xr = p.x / EARTH_RADIUS_M;
                let phi = (d.sin() / xr.cosh()).asin();
                let lam = xr.sinh().atan2(d.cos());
                Point::new(lon0 + lam.to_degrees(), phi.to_degrees())
            }
        }
    }
}
