//! Synthetic cities with known NB gravity parameters.
//!
//! Zones are a jittered brick tiling of a square extent, the walk network is
//! a lattice, and amenities follow per-category gradients with a few
//! hotspots. Daily OD counts are drawn from NB2 with `log mu = beta . x`,
//! where `x` is produced by the same accessibility and feature code used on
//! real data.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::access::{
    zone_accessibility, AccessibilityTable, DiversityMode, WalkGraph, DEFAULT_BUDGET_S, DEFAULT_SNAP_M,
    DEFAULT_WALKING_SPEED,
};
use crate::error::{Error, Result};
use crate::flows::{build_features, feature_names, zone_distances, Calendar, DayType, FeatureMatrix, ODObservation};
use crate::geo::io::{write_amenities, write_graph, write_grid, write_residents, write_zones};
use crate::geo::{
    Amenity, AmenityCategory, CountKey, GridCell, Point, Polygon, Projection, Rect, ResidentPoint, Zone, ZoneAttributes,
};
use crate::glm::INTERCEPT;

pub const TIME_WINDOW: &str = "all_day";
pub const VISITOR_CLASS: &str = "resident";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpatialPattern {
    Constant,
    /// `variable` has coefficient `+magnitude` for origins east of the
    /// vertical midline and `-magnitude` west of it.
    EastWestFlip {
        variable: String,
        magnitude: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_zones: usize,
    /// Side of the square extent, meters.
    pub extent_m: f64,
    pub lattice_spacing_m: f64,
    pub amenities_per_category: usize,
    pub start_date: NaiveDate,
    pub n_days: usize,
    /// Coefficients by feature name (plus `intercept`); missing names are 0.
    pub true_beta: BTreeMap<String, f64>,
    pub true_alpha: f64,
    pub spatial_pattern: SpatialPattern,
    /// Daily counts below this value are reported as 0; 0 disables.
    pub censor_threshold: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 1,
            n_zones: 73,
            extent_m: 10_000.0,
            lattice_spacing_m: 100.0,
            amenities_per_category: 120,
            start_date: NaiveDate::from_ymd_opt(2019, 6, 1).expect("valid date"),
            n_days: 30,
            true_beta: default_true_beta(),
            true_alpha: 0.5,
            spatial_pattern: SpatialPattern::Constant,
            censor_threshold: 0.0,
        }
    }
}

/// Coefficients giving mean daily flows mostly between 1 and a few hundred.
pub fn default_true_beta() -> BTreeMap<String, f64> {
    [
        (INTERCEPT, 2.0),
        ("delta_education", 0.05),
        ("delta_entertainment", -0.05),
        ("delta_finance", 0.03),
        ("delta_food", 0.1),
        ("delta_government", -0.03),
        ("delta_health", 0.05),
        ("delta_professional", 0.04),
        ("delta_recreation", 0.04),
        ("delta_religion", -0.04),
        ("delta_retail", 0.08),
        ("delta_public_transport", 0.03),
        ("delta_amenity_diversity", 0.3),
        ("delta_hdi", 0.1),
        ("delta_age", -0.02),
        ("delta_pct_women", 0.5),
        ("delta_pct_immigrants", -0.5),
        ("log_distance", -1.0),
        ("log_dst_population", 0.4),
        ("log_dst_touristic_attractiveness", 0.1),
        ("log_src_population", 0.5),
        ("log_src_touristic_attractiveness", 0.05),
        ("to_other_neighborhood", -0.5),
        ("in_weekend", -0.3),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Parameters that generated a city.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    /// Intercept first, then the feature columns.
    pub names: Vec<String>,
    /// Coefficients for origins where the pattern does not apply (east).
    pub beta: Vec<f64>,
    pub alpha: f64,
    pub pattern: SpatialPattern,
    /// Origin zones whose coefficient is negated by the pattern.
    pub western_zones: Vec<String>,
    /// x coordinate of the east/west split.
    pub split_x: f64,
}

impl SynthTruth {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|k| self.beta[k])
    }

    /// Coefficients in effect for rows originating at `zone_id`.
    pub fn beta_for_origin(&self, zone_id: &str) -> Vec<f64> {
        let mut b = self.beta.clone();
        if let SpatialPattern::EastWestFlip { variable, .. } = &self.pattern {
            if self.western_zones.iter().any(|z| z == zone_id) {
                if let Some(k) = self.names.iter().position(|n| n == variable) {
                    b[k] = -b[k];
                }
            }
        }
        b
    }
}

pub struct SyntheticCity {
    pub zones: Vec<Zone>,
    pub graph: WalkGraph,
    pub amenities: Vec<Amenity>,
    pub residents: Vec<ResidentPoint>,
    /// One cell per zone, covering exactly that zone.
    pub cells: Vec<GridCell>,
    pub accessibility: AccessibilityTable,
    /// Features of every ordered zone pair and day type.
    pub features: FeatureMatrix,
    /// Mean daily flow of each feature row.
    pub mu: Vec<f64>,
    pub truth: SynthTruth,
}

impl SyntheticCity {
    /// Daily counts keyed by (date, origin, destination).
    pub fn daily_counts(&self) -> BTreeMap<(NaiveDate, String, String), f64> {
        let mut out = BTreeMap::new();
        for c in &self.cells {
            for (k, v) in &c.counts {
                out.insert((k.date, k.origin_zone_id.clone(), c.id.clone()), *v);
            }
        }
        out
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_ZONES: u64 = 0;
const STREAM_AMENITIES: u64 = 1;
const STREAM_RESIDENTS: u64 = 2;
const STREAM_FLOWS: u64 = 16;

fn jittered_shares(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

fn tiling(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Rect> {
    let n = cfg.n_zones;
    let rows = ((n as f64).sqrt().round() as usize).max(1);
    let mut per_row = vec![n / rows; rows];
    for count in per_row.iter_mut().take(n % rows) {
        *count += 1;
    }
    let heights = jittered_shares(rng, rows, 0.75, 1.25);
    let mut rects = Vec::with_capacity(n);
    let mut y0 = 0.0;
    for (r, &cols) in per_row.iter().enumerate() {
        let y1 = if r + 1 == rows {
            cfg.extent_m
        } else {
            y0 + heights[r] * cfg.extent_m
        };
        let widths = jittered_shares(rng, cols, 0.6, 1.4);
        let mut x0 = 0.0;
        for (c, w) in widths.iter().enumerate() {
            let x1 = if c + 1 == cols {
                cfg.extent_m
            } else {
                x0 + w * cfg.extent_m
            };
            rects.push(Rect::new(x0, y0, x1, y1));
            x0 = x1;
        }
        y0 = y1;
    }
    rects
}

fn lattice(cfg: &SynthConfig) -> Result<WalkGraph> {
    let k = (cfg.extent_m / cfg.lattice_spacing_m).round() as usize;
    let step = cfg.extent_m / k as f64;
    let id = |i: usize, j: usize| format!("n{:04}_{:04}", i, j);
    let mut nodes = Vec::with_capacity((k + 1) * (k + 1));
    let mut edges = Vec::with_capacity(2 * k * (k + 1));
    for i in 0..=k {
        for j in 0..=k {
            nodes.push((id(i, j), Point::new(j as f64 * step, i as f64 * step)));
            if j < k {
                edges.push((id(i, j), id(i, j + 1), step));
            }
            if i < k {
                edges.push((id(i, j), id(i + 1, j), step));
            }
        }
    }
    WalkGraph::new(nodes, edges, DEFAULT_WALKING_SPEED)
}

/// Relative amenity density: a linear gradient plus Gaussian hotspots.
struct Density {
    gradient: (f64, f64),
    hotspots: Vec<(Point, f64, f64)>,
    extent: f64,
}

impl Density {
    fn random(rng: &mut ChaCha8Rng, extent: f64) -> Self {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let strength = rng.random_range(0.3..0.9);
        let hotspots = (0..3)
            .map(|_| {
                let c = Point::new(rng.random_range(0.0..extent), rng.random_range(0.0..extent));
                (c, rng.random_range(0.05..0.15) * extent, rng.random_range(1.0..3.0))
            })
            .collect();
        Density {
            gradient: (strength * angle.cos(), strength * angle.sin()),
            hotspots,
            extent,
        }
    }

    fn at(&self, p: &Point) -> f64 {
        let u = p.x / self.extent - 0.5;
        let v = p.y / self.extent - 0.5;
        let mut d = 1.0 + self.gradient.0 * u * 2.0 + self.gradient.1 * v * 2.0;
        for (c, s, h) in &self.hotspots {
            d += h * (-c.distance_sq(p) / (2.0 * s * s)).exp();
        }
        d.max(0.05)
    }

    fn max(&self) -> f64 {
        1.0 + self.gradient.0.abs() + self.gradient.1.abs() + self.hotspots.iter().map(|h| h.2).sum::<f64>()
    }
}

fn amenities(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Amenity> {
    let mut out = Vec::with_capacity(cfg.amenities_per_category * AmenityCategory::COUNT);
    for category in AmenityCategory::ALL {
        let density = Density::random(rng, cfg.extent_m);
        let max = density.max();
        let mut placed = 0;
        while placed < cfg.amenities_per_category {
            let p = Point::new(rng.random_range(0.0..cfg.extent_m), rng.random_range(0.0..cfg.extent_m));
            if rng.random::<f64>() * max < density.at(&p) {
                out.push(Amenity { category, location: p });
                placed += 1;
            }
        }
    }
    out
}

fn zone_attributes(rng: &mut ChaCha8Rng, center: Point, extent: f64) -> ZoneAttributes {
    // Wealth rises towards the north-east corner.
    let wealth = 0.5 * (center.x + center.y) / extent;
    let hdi = (2.0 + 6.0 * wealth + rng.random_range(-1.0..1.0)).clamp(0.0, 10.0);
    let rent_per_m2 = 10.0 + 3.0 * hdi + rng.random_range(-2.0..2.0);
    ZoneAttributes {
        population: rng.random_range(5_000.0..40_000.0),
        hdi,
        mean_age: rng.random_range(28.0..48.0),
        pct_women: rng.random_range(0.45..0.56),
        immigrant_ratio: rng.random_range(0.01..0.3),
        rent_mean: rent_per_m2 * rng.random_range(50.0..110.0),
        rent_per_m2,
        touristic_attractiveness: (rng.random_range(-1.0..4.0f64)).exp(),
    }
}

fn residents(zones: &[Zone], rects: &[Rect], rng: &mut ChaCha8Rng) -> Vec<ResidentPoint> {
    let mut out = Vec::new();
    for (z, r) in zones.iter().zip(rects) {
        let n = ((z.population / 1000.0).round() as usize).max(3);
        for _ in 0..n {
            out.push(ResidentPoint {
                zone_id: z.id.clone(),
                location: Point::new(rng.random_range(r.min_x..r.max_x), rng.random_range(r.min_y..r.max_y)),
            });
        }
    }
    out
}

/// One NB2 draw through its Gamma-Poisson mixture.
fn draw_nb(rng: &mut ChaCha8Rng, mu: f64, alpha: f64) -> Result<f64> {
    let gamma = Gamma::new(1.0 / alpha, alpha * mu).map_err(|e| Error::Numerical(e.to_string()))?;
    let lambda = gamma.sample(rng);
    if !(lambda > 0.0) {
        return Ok(0.0);
    }
    let pois = Poisson::new(lambda).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(pois.sample(rng))
}

fn validate(cfg: &SynthConfig) -> Result<()> {
    if cfg.n_zones < 4 {
        return Err(Error::invalid(
            "synth.n_zones",
            format!("need at least 4 zones, got {}", cfg.n_zones),
        ));
    }
    if !(cfg.extent_m > 0.0) || !(cfg.lattice_spacing_m > 0.0) || cfg.lattice_spacing_m > cfg.extent_m {
        return Err(Error::invalid(
            "synth.extent_m",
            "extent and lattice spacing must be positive",
        ));
    }
    if !(cfg.true_alpha > 0.0) {
        return Err(Error::invalid("synth.true_alpha", "must be > 0"));
    }
    if cfg.n_days == 0 {
        return Err(Error::invalid("synth.n_days", "must be > 0"));
    }
    if cfg.amenities_per_category == 0 {
        return Err(Error::invalid("synth.amenities_per_category", "must be > 0"));
    }
    if !(cfg.censor_threshold >= 0.0) {
        return Err(Error::invalid("synth.censor_threshold", "must be >= 0"));
    }
    let names = feature_names();
    for k in cfg.true_beta.keys() {
        if k != INTERCEPT && !names.contains(k) {
            return Err(Error::invalid("synth.true_beta", format!("unknown coefficient `{k}`")));
        }
    }
    if let SpatialPattern::EastWestFlip { variable, .. } = &cfg.spatial_pattern {
        if variable != INTERCEPT && !names.contains(variable) {
            return Err(Error::invalid(
                "synth.spatial_pattern",
                format!("unknown coefficient `{variable}`"),
            ));
        }
    }
    Ok(())
}

pub fn generate_city(cfg: &SynthConfig) -> Result<SyntheticCity> {
    validate(cfg)?;
    let mut rng = stream_rng(cfg.seed, STREAM_ZONES);
    let rects = tiling(cfg, &mut rng);
    let zones = rects
        .iter()
        .enumerate()
        .map(|(i, r)| {
            Zone::new(
                format!("Z{:03}", i + 1),
                Polygon::from_rect(r),
                zone_attributes(&mut rng, r.center(), cfg.extent_m),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let graph = lattice(cfg)?;
    let amenities = amenities(cfg, &mut stream_rng(cfg.seed, STREAM_AMENITIES));
    let residents = residents(&zones, &rects, &mut stream_rng(cfg.seed, STREAM_RESIDENTS));
    let accessibility = zone_accessibility(
        &graph,
        &amenities,
        &residents,
        &zones,
        DEFAULT_BUDGET_S,
        DEFAULT_SNAP_M,
        DiversityMode::ZoneTotals,
    )?;

    let mut obs = Vec::with_capacity(zones.len() * zones.len() * 2);
    for o in &zones {
        for d in &zones {
            for dt in [DayType::Business, DayType::Weekend] {
                obs.push(ODObservation::new(o.id.clone(), d.id.clone(), dt, 0.0));
            }
        }
    }
    let features = build_features(&obs, &zones, &accessibility, &zone_distances(&zones))?;

    let split_x = 0.5 * cfg.extent_m;
    let mut names = vec![INTERCEPT.to_string()];
    names.extend(features.columns.iter().cloned());
    let mut beta: Vec<f64> = names
        .iter()
        .map(|n| cfg.true_beta.get(n).copied().unwrap_or(0.0))
        .collect();
    let western_zones: Vec<String> = match &cfg.spatial_pattern {
        SpatialPattern::Constant => Vec::new(),
        SpatialPattern::EastWestFlip { variable, magnitude } => {
            let k = names.iter().position(|n| n == variable).expect("validated");
            beta[k] = *magnitude;
            zones
                .iter()
                .filter(|z| z.centroid.x < split_x)
                .map(|z| z.id.clone())
                .collect()
        }
    };
    let truth = SynthTruth {
        names,
        beta,
        alpha: cfg.true_alpha,
        pattern: cfg.spatial_pattern.clone(),
        western_zones,
        split_x,
    };

    let n = zones.len();
    let origin_beta: Vec<Vec<f64>> = zones.iter().map(|z| truth.beta_for_origin(&z.id)).collect();
    let mu: Vec<f64> = (0..features.n_rows())
        .map(|i| {
            let b = &origin_beta[i / (2 * n)];
            let eta = b[0] + features.row(i).iter().zip(&b[1..]).map(|(x, c)| x * c).sum::<f64>();
            eta.exp()
        })
        .collect();
    if let Some(m) = mu.iter().find(|m| !m.is_finite() || **m > 1e12) {
        return Err(Error::invalid(
            "synth.true_beta",
            format!("mean flow {m} is out of range"),
        ));
    }

    let calendar = Calendar::default();
    let dates: Vec<(NaiveDate, usize)> = (0..cfg.n_days)
        .map(|k| {
            let d = cfg.start_date + Days::new(k as u64);
            let dt = calendar.day_type(&d);
            (d, if dt == DayType::Business { 0 } else { 1 })
        })
        .collect();
    // Counts per origin, each origin on its own random stream.
    let per_origin: Vec<Vec<(usize, NaiveDate, f64)>> = (0..n)
        .into_par_iter()
        .map(|o| {
            let mut rng = stream_rng(cfg.seed, STREAM_FLOWS + o as u64);
            let mut out = Vec::new();
            for &(date, dt) in &dates {
                for d in 0..n {
                    let m = mu[(o * n + d) * 2 + dt];
                    let mut y = draw_nb(&mut rng, m, cfg.true_alpha)?;
                    if y < cfg.censor_threshold {
                        y = 0.0;
                    }
                    if y > 0.0 {
                        out.push((d, date, y));
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut cells: Vec<GridCell> = zones
        .iter()
        .zip(&rects)
        .map(|(z, r)| GridCell {
            id: format!("C{}", &z.id[1..]),
            rect: *r,
            counts: BTreeMap::new(),
        })
        .collect();
    for (o, rows) in per_origin.into_iter().enumerate() {
        for (d, date, y) in rows {
            cells[d].counts.insert(
                CountKey {
                    date,
                    time_window: TIME_WINDOW.to_string(),
                    visitor_class: VISITOR_CLASS.to_string(),
                    origin_zone_id: zones[o].id.clone(),
                },
                y,
            );
        }
    }

    Ok(SyntheticCity {
        zones,
        graph,
        amenities,
        residents,
        cells,
        accessibility,
        features,
        mu,
        truth,
    })
}

/// File names written by [`write_city`], relative to the output directory.
pub mod files {
    pub const ZONES: &str = "zones.geojson";
    pub const AMENITIES: &str = "amenities.geojson";
    pub const RESIDENTS: &str = "residents.geojson";
    pub const NODES: &str = "nodes.csv";
    pub const EDGES: &str = "edges.csv";
    pub const GRID_CELLS: &str = "grid_cells.csv";
    pub const GRID_COUNTS: &str = "grid_counts.csv";
    pub const TRUTH: &str = "truth.json";
}

/// Writes the city in the formats the loaders read (planar coordinates).
pub fn write_city(city: &SyntheticCity, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let proj = Projection::Planar;
    write_zones(&dir.join(files::ZONES), &city.zones, &proj, &BTreeMap::new())?;
    write_amenities(&dir.join(files::AMENITIES), &city.amenities, &proj)?;
    write_residents(&dir.join(files::RESIDENTS), &city.residents, &proj)?;
    write_graph(&dir.join(files::NODES), &dir.join(files::EDGES), &city.graph, &proj)?;
    write_grid(&dir.join(files::GRID_CELLS), &dir.join(files::GRID_COUNTS), &city.cells)?;
    let truth = serde_json::to_string_pretty(&city.truth).map_err(|e| Error::parse("truth.json", e))?;
    let path = dir.join(files::TRUTH);
    std::fs::write(&path, truth + "\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            n_zones: 12,
            extent_m: 4000.0,
            amenities_per_category: 40,
            n_days: 14,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn tiling_covers_extent() {
        let cfg = SynthConfig::default();
        let rects = tiling(&cfg, &mut stream_rng(3, STREAM_ZONES));
        assert_eq!(rects.len(), 73);
        let area: f64 = rects.iter().map(Rect::area).sum();
        assert!((area - 1e8).abs() < 1e-3);
        for (i, a) in rects.iter().enumerate() {
            for b in &rects[i + 1..] {
                assert!(!a.intersects(b));
            }
        }
    }

    #[test]
    fn same_seed_same_city() {
        let a = generate_city(&small(5)).unwrap();
        let b = generate_city(&small(5)).unwrap();
        assert_eq!(a.cells, b.cells);
        assert_eq!(a.amenities, b.amenities);
        assert_eq!(a.zones, b.zones);
        let c = generate_city(&small(6)).unwrap();
        assert_ne!(a.cells, c.cells);
    }

    #[test]
    fn censoring_removes_small_counts() {
        let cfg = SynthConfig {
            censor_threshold: 50.0,
            ..small(2)
        };
        let city = generate_city(&cfg).unwrap();
        let counts = city.daily_counts();
        assert!(!counts.is_empty());
        assert!(counts.values().all(|&v| v >= 50.0));
    }

    #[test]
    fn antisymmetric_deltas() {
        let city = generate_city(&small(4)).unwrap();
        let fm = &city.features;
        let n = city.zones.len();
        for o in 0..n {
            for d in 0..n {
                let a = fm.row((o * n + d) * 2);
                let b = fm.row((d * n + o) * 2);
                for k in 0..16 {
                    assert!((a[k] + b[k]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn too_few_zones() {
        let cfg = SynthConfig {
            n_zones: 3,
            ..SynthConfig::default()
        };
        assert!(generate_city(&cfg).is_err());
    }

    #[test]
    fn flip_negates_west() {
        let cfg = SynthConfig {
            spatial_pattern: SpatialPattern::EastWestFlip {
                variable: "delta_retail".into(),
                magnitude: 1.0,
            },
            ..small(1)
        };
        let city = generate_city(&cfg).unwrap();
        let k = city.truth.names.iter().position(|n| n == "delta_retail").unwrap();
        for z in &city.zones {
            let b = city.truth.beta_for_origin(&z.id)[k];
            assert_eq!(b, if z.centroid.x < city.truth.split_x { -1.0 } else { 1.0 });
        }
    }
}
