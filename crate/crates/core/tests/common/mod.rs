#![allow(dead_code)]

use walkflow::flows::{
    build_features, build_od_table, filter_zero_pairs, zone_distances, Calendar, FeatureMatrix, YearMonth,
};
use walkflow::geo::allocate_cell_counts;
use walkflow::synth::{SyntheticCity, VISITOR_CLASS};

/// Runs the ingestion pipeline on a synthetic city: allocation, monthly OD
/// table, zero filter and features.
pub fn month_features(city: &SyntheticCity, month: YearMonth) -> FeatureMatrix {
    let allocated = allocate_cell_counts(&city.cells, &city.zones).unwrap();
    let ids: Vec<String> = city.zones.iter().map(|z| z.id.clone()).collect();
    let obs = build_od_table(&allocated, &ids, month, &Calendar::default(), VISITOR_CLASS).unwrap();
    let obs = filter_zero_pairs(&obs);
    build_features(&obs, &city.zones, &city.accessibility, &zone_distances(&city.zones)).unwrap()
}

pub fn june() -> YearMonth {
    YearMonth::new(2019, 6).unwrap()
}

/// Mean zone width, used to leave out zones next to the east/west split.
pub fn mean_zone_width(city: &SyntheticCity) -> f64 {
    let total: f64 = city.zones.iter().map(|z| z.area()).sum();
    (total / city.zones.len() as f64).sqrt()
}
