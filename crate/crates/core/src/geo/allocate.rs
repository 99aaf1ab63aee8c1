use std::collections::BTreeMap;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::clip::intersection_area_unchecked;
use super::{Rect, Zone};
use crate::error::{Error, Result};

/// Key of one raw count inside a grid cell.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CountKey {
    pub date: NaiveDate,
    pub time_window: String,
    pub visitor_class: String,
    pub origin_zone_id: String,
}

/// A cell of the regular grid in which visitor counts are reported.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub id: String,
    pub rect: Rect,
    pub counts: BTreeMap<CountKey, f64>,
}

/// Key of a count reallocated to a destination zone.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AllocKey {
    pub zone_id: String,
    pub date: NaiveDate,
    pub time_window: String,
    pub visitor_class: String,
    pub origin_zone_id: String,
}

pub type AllocatedCounts = BTreeMap<AllocKey, f64>;

/// Splits every cell count across zones with weight
/// `area(cell ∩ zone) / area(cell)`. Mass over uncovered cell area is dropped.
pub fn allocate_cell_counts(cells: &[GridCell], zones: &[Zone]) -> Result<AllocatedCounts> {
    for cell in cells {
        let area = cell.rect.area();
        if !(area > 0.0) || !area.is_finite() {
            return Err(Error::Geometry(format!("grid cell {} has zero area", cell.id)));
        }
        if let Some((k, c)) = cell.counts.iter().find(|(_, c)| !(**c >= 0.0) || !c.is_finite()) {
            return Err(Error::invalid(
                format!("cell {}.count", cell.id),
                format!("count {c} for {} is not a nonnegative number", k.date),
            ));
        }
    }

    let per_cell: Vec<Vec<(usize, f64)>> = cells
        .par_iter()
        .map(|cell| {
            let area = cell.rect.area();
            zones
                .iter()
                .enumerate()
                .filter_map(|(zi, z)| {
                    let a = intersection_area_unchecked(&z.polygon, &cell.rect);
                    (a > 0.0).then_some((zi, a / area))
                })
                .collect()
        })
        .collect();

    let mut out = AllocatedCounts::new();
    for (cell, weights) in cells.iter().zip(&per_cell) {
        for (key, &count) in &cell.counts {
            for &(zi, w) in weights {
                let k = AllocKey {
                    zone_id: zones[zi].id.clone(),
                    date: key.date,
                    time_window: key.time_window.clone(),
                    visitor_class: key.visitor_class.clone(),
                    origin_zone_id: key.origin_zone_id.clone(),
                };
                *out.entry(k).or_insert(0.0) += count * w;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{Polygon, ZoneAttributes};

    fn attrs() -> ZoneAttributes {
        ZoneAttributes {
            population: 1000.0,
            hdi: 5.0,
            mean_age: 40.0,
            pct_women: 0.5,
            immigrant_ratio: 0.1,
            rent_mean: 800.0,
            rent_per_m2: 12.0,
            touristic_attractiveness: 1.0,
        }
    }

    fn zone(id: &str, r: Rect) -> Zone {
        Zone::new(id, Polygon::from_rect(&r), attrs()).unwrap()
    }

    fn cell(r: Rect, count: f64) -> GridCell {
        let mut counts = BTreeMap::new();
        counts.insert(
            CountKey {
                date: NaiveDate::from_ymd_opt(2019, 6, 3).unwrap(),
                time_window: "08-12".into(),
                visitor_class: "resident".into(),
                origin_zone_id: "o".into(),
            },
            count,
        );
        GridCell {
            id: "c".into(),
            rect: r,
            counts,
        }
    }

    fn by_zone(out: &AllocatedCounts) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        for (k, v) in out {
            *m.entry(k.zone_id.clone()).or_insert(0.0) += v;
        }
        m
    }

    #[test]
    fn fully_contained_cell() {
        let zones = [zone("a", Rect::new(0.0, 0.0, 1000.0, 1000.0))];
        let out = allocate_cell_counts(&[cell(Rect::new(100.0, 100.0, 600.0, 600.0), 100.0)], &zones).unwrap();
        assert_eq!(by_zone(&out)["a"], 100.0);
    }

    #[test]
    fn straddling_cell_splits_in_halves() {
        let zones = [
            zone("a", Rect::new(0.0, 0.0, 500.0, 1000.0)),
            zone("b", Rect::new(500.0, 0.0, 1000.0, 1000.0)),
        ];
        let out = allocate_cell_counts(&[cell(Rect::new(250.0, 0.0, 750.0, 500.0), 100.0)], &zones).unwrap();
        let m = by_zone(&out);
        assert_eq!(m["a"], 50.0);
        assert_eq!(m["b"], 50.0);
    }

    #[test]
    fn quarter_three_quarter_split() {
        let zones = [
            zone("a", Rect::new(0.0, 0.0, 125.0, 500.0)),
            zone("b", Rect::new(125.0, 0.0, 500.0, 500.0)),
        ];
        let out = allocate_cell_counts(&[cell(Rect::new(0.0, 0.0, 500.0, 500.0), 80.0)], &zones).unwrap();
        let m = by_zone(&out);
        assert!((m["a"] - 20.0).abs() < 1e-12);
        assert!((m["b"] - 60.0).abs() < 1e-12);
    }

    #[test]
    fn uncovered_area_drops_mass() {
        let zones = [zone("a", Rect::new(0.0, 0.0, 250.0, 500.0))];
        let out = allocate_cell_counts(&[cell(Rect::new(0.0, 0.0, 500.0, 500.0), 80.0)], &zones).unwrap();
        assert!((by_zone(&out)["a"] - 40.0).abs() < 1e-12);
    }

    #[test]
    fn zero_area_cell_is_an_error() {
        let zones = [zone("a", Rect::new(0.0, 0.0, 250.0, 500.0))];
        let err = allocate_cell_counts(&[cell(Rect::new(10.0, 0.0, 10.0, 500.0), 1.0)], &zones).unwrap_err();
        assert!(matches!(err, Error::Geometry(_)));
    }
}
