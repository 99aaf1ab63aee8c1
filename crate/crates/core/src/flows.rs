//! Origin-destination observation table, zero-pair filtering, importance
//! scores and the regression feature matrix.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::access::AccessibilityTable;
use crate::error::{Error, Result};
use crate::geo::{AllocatedCounts, AmenityCategory, Point, Zone};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DayType {
    Business,
    Weekend,
}

impl DayType {
    pub fn as_str(self) -> &'static str {
        match self {
            DayType::Business => "business",
            DayType::Weekend => "weekend",
        }
    }
}

impl FromStr for DayType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "business" => Ok(DayType::Business),
            "weekend" => Ok(DayType::Weekend),
            _ => Err(Error::invalid("day_type", format!("unknown day type `{s}`"))),
        }
    }
}

/// A calendar month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::invalid("month", format!("{month} is not in 1..=12")));
        }
        Ok(YearMonth { year, month })
    }

    pub fn first_day(&self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.year, self.month, 1).expect("valid month")
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> {
        let ym = *self;
        self.first_day()
            .iter_days()
            .take_while(move |d| d.month() == ym.month && d.year() == ym.year)
    }

    pub fn contains(&self, d: &NaiveDate) -> bool {
        d.year() == self.year && d.month() == self.month
    }

    pub fn of(d: &NaiveDate) -> Self {
        YearMonth {
            year: d.year(),
            month: d.month(),
        }
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid("month", format!("`{s}` is not of the form YYYY-MM"));
        let (y, m) = s.split_once('-').ok_or_else(bad)?;
        YearMonth::new(y.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?)
    }
}

impl Serialize for YearMonth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Maps dates to day types. Saturdays, Sundays and listed holidays are
/// weekend-type days.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Calendar {
    #[serde(default)]
    pub holidays: BTreeSet<NaiveDate>,
}

impl Calendar {
    pub fn day_type(&self, d: &NaiveDate) -> DayType {
        if matches!(d.weekday(), Weekday::Sat | Weekday::Sun) || self.holidays.contains(d) {
            DayType::Weekend
        } else {
            DayType::Business
        }
    }
}

/// Monthly mean of daily visitor counts for one OD pair and day type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ODObservation {
    pub origin_zone: String,
    pub dest_zone: String,
    pub day_type: DayType,
    pub avg_count: f64,
    /// `avg_count` rounded half to even; the regression response.
    pub response_count: u64,
}

impl ODObservation {
    pub fn new(
        origin_zone: impl Into<String>,
        dest_zone: impl Into<String>,
        day_type: DayType,
        avg_count: f64,
    ) -> Self {
        ODObservation {
            origin_zone: origin_zone.into(),
            dest_zone: dest_zone.into(),
            day_type,
            avg_count,
            response_count: avg_count.round_ties_even() as u64,
        }
    }
}

/// Averages reallocated counts of `visitor_class` over the days of `month`,
/// per (origin, destination, day type). Every ordered pair of `zone_ids`
/// yields a business and a weekend observation; days without records count
/// as zero.
pub fn build_od_table(
    allocated: &AllocatedCounts,
    zone_ids: &[String],
    month: YearMonth,
    calendar: &Calendar,
    visitor_class: &str,
) -> Result<Vec<ODObservation>> {
    let known: BTreeSet<&str> = zone_ids.iter().map(String::as_str).collect();
    let mut sums: BTreeMap<(&str, &str, DayType), f64> = BTreeMap::new();
    let mut any = false;
    for (k, &v) in allocated {
        if k.visitor_class != visitor_class || !month.contains(&k.date) {
            continue;
        }
        for id in [&k.origin_zone_id, &k.zone_id] {
            if !known.contains(id.as_str()) {
                return Err(Error::InvalidInput(format!("counts reference unknown zone `{id}`")));
            }
        }
        any = true;
        *sums
            .entry((
                k.origin_zone_id.as_str(),
                k.zone_id.as_str(),
                calendar.day_type(&k.date),
            ))
            .or_insert(0.0) += v;
    }
    if !any {
        return Err(Error::InvalidInput(format!(
            "no `{visitor_class}` counts in month {month}"
        )));
    }
    let mut n_days: BTreeMap<DayType, usize> = BTreeMap::new();
    for d in month.days() {
        *n_days.entry(calendar.day_type(&d)).or_insert(0) += 1;
    }
    let mut obs = Vec::with_capacity(zone_ids.len() * zone_ids.len() * 2);
    for o in zone_ids {
        for d in zone_ids {
            for dt in [DayType::Business, DayType::Weekend] {
                let days = n_days.get(&dt).copied().unwrap_or(0);
                let total = sums.get(&(o.as_str(), d.as_str(), dt)).copied().unwrap_or(0.0);
                let avg = if days == 0 { 0.0 } else { total / days as f64 };
                obs.push(ODObservation::new(o.clone(), d.clone(), dt, avg));
            }
        }
    }
    Ok(obs)
}

/// Drops both observations of an OD pair when all of its day types are zero.
pub fn filter_zero_pairs(obs: &[ODObservation]) -> Vec<ODObservation> {
    let mut pair_max: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for o in obs {
        let e = pair_max
            .entry((o.origin_zone.as_str(), o.dest_zone.as_str()))
            .or_insert(0.0);
        *e = e.max(o.avg_count);
    }
    obs.iter()
        .filter(|o| pair_max[&(o.origin_zone.as_str(), o.dest_zone.as_str())] > 0.0)
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Origin,
    Destination,
}

/// Square root of the mean business-day flow with the zone in `role`.
pub fn importance_scores(obs: &[ODObservation], role: Role) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for o in obs.iter().filter(|o| o.day_type == DayType::Business) {
        let zone = match role {
            Role::Origin => o.origin_zone.as_str(),
            Role::Destination => o.dest_zone.as_str(),
        };
        let e = acc.entry(zone).or_insert((0.0, 0));
        e.0 += o.avg_count;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(z, (s, n))| (z.to_string(), (s / n as f64).sqrt()))
        .collect()
}

/// Dense zone-to-zone distance matrix in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    ids: Vec<String>,
    index: BTreeMap<String, usize>,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn get(&self, from: &str, to: &str) -> Option<f64> {
        let i = *self.index.get(from)?;
        let j = *self.index.get(to)?;
        Some(self.d[i * self.ids.len() + j])
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// Euclidean centroid distances; the intra-zonal distance is half the radius
/// of the circle with the zone's area.
pub fn zone_distances(zones: &[Zone]) -> DistanceMatrix {
    let n = zones.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            d[i * n + j] = if i == j {
                0.5 * (zones[i].area() / std::f64::consts::PI).sqrt()
            } else {
                zones[i].centroid.distance(&zones[j].centroid)
            };
        }
    }
    DistanceMatrix {
        ids: zones.iter().map(|z| z.id.clone()).collect(),
        index: zones.iter().enumerate().map(|(i, z)| (z.id.clone(), i)).collect(),
        d,
    }
}

pub const N_FEATURES: usize = 23;

/// Column names of the feature matrix, in order.
pub fn feature_names() -> Vec<String> {
    let mut names: Vec<String> = AmenityCategory::ALL
        .iter()
        .map(|c| format!("delta_{}", c.as_str()))
        .collect();
    names.extend(
        [
            "delta_amenity_diversity",
            "delta_hdi",
            "delta_age",
            "delta_pct_women",
            "delta_pct_immigrants",
            "log_distance",
            "log_dst_population",
            "log_dst_touristic_attractiveness",
            "log_src_population",
            "log_src_touristic_attractiveness",
            "to_other_neighborhood",
            "in_weekend",
        ]
        .map(String::from),
    );
    names
}

/// Covariates aligned row-by-row with observations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub columns: Vec<String>,
    /// Row-major, `n_rows * columns.len()`.
    pub data: Vec<f64>,
    pub response: Vec<f64>,
    pub origin: Vec<String>,
    pub dest: Vec<String>,
    pub day_type: Vec<DayType>,
    /// Regression anchor (origin zone centroid) per row.
    pub anchor: Vec<Point>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_cols();
        &self.data[i * p..(i + 1) * p]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.column_index(name)?;
        Some((0..self.n_rows()).map(|i| self.row(i)[k]).collect())
    }

    /// Audit dump: identifiers, response and one column per covariate.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::parse("feature csv", e);
        let mut header = vec![
            "origin_zone".to_string(),
            "dest_zone".into(),
            "day_type".into(),
            "response".into(),
        ];
        header.extend(self.columns.iter().cloned());
        wr.write_record(&header).map_err(err)?;
        for i in 0..self.n_rows() {
            let mut rec = vec![
                self.origin[i].clone(),
                self.dest[i].clone(),
                self.day_type[i].as_str().to_string(),
                format!("{}", self.response[i]),
            ];
            rec.extend(self.row(i).iter().map(|v| format!("{v}")));
            wr.write_record(&rec).map_err(err)?;
        }
        wr.flush().map_err(|e| Error::parse("feature csv", e))?;
        Ok(())
    }
}

/// Floor added before taking the log of touristic attractiveness.
pub fn attractiveness_epsilon(zones: &[Zone]) -> f64 {
    let max = zones.iter().map(|z| z.touristic_attractiveness).fold(0.0, f64::max);
    if max > 0.0 {
        1e-6 * max
    } else {
        1e-6
    }
}

/// Builds the 23 covariates for each observation.
pub fn build_features(
    obs: &[ODObservation],
    zones: &[Zone],
    access: &AccessibilityTable,
    distances: &DistanceMatrix,
) -> Result<FeatureMatrix> {
    let by_id: BTreeMap<&str, &Zone> = zones.iter().map(|z| (z.id.as_str(), z)).collect();
    let eps = attractiveness_epsilon(zones);
    let columns = feature_names();
    let p = columns.len();
    let mut fm = FeatureMatrix {
        columns,
        data: Vec::with_capacity(obs.len() * p),
        response: Vec::with_capacity(obs.len()),
        origin: Vec::with_capacity(obs.len()),
        dest: Vec::with_capacity(obs.len()),
        day_type: Vec::with_capacity(obs.len()),
        anchor: Vec::with_capacity(obs.len()),
    };
    let zone = |id: &str| {
        by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("observation references unknown zone `{id}`")))
    };
    let accessibility = |id: &str| {
        let a = access
            .get(id)
            .ok_or_else(|| Error::InvalidInput(format!("zone `{id}` has no accessibility values")))?;
        let h = a
            .diversity
            .ok_or_else(|| Error::InvalidInput(format!("zone `{id}` has undefined amenity diversity")))?;
        Ok::<_, Error>((a, h))
    };
    for o in obs {
        let zi = zone(&o.origin_zone)?;
        let zj = zone(&o.dest_zone)?;
        let (ai, hi) = accessibility(&zi.id)?;
        let (aj, hj) = accessibility(&zj.id)?;
        let d = distances
            .get(&zi.id, &zj.id)
            .ok_or_else(|| Error::InvalidInput(format!("no distance for {} -> {}", zi.id, zj.id)))?;
        if !(d > 0.0) {
            return Err(Error::invalid(
                "distance",
                format!("{} -> {} has nonpositive distance {d}", zi.id, zj.id),
            ));
        }
        for z in [zi, zj] {
            if !(z.population > 0.0) {
                return Err(Error::invalid(format!("{}.population", z.id), "must be > 0"));
            }
        }
        for c in AmenityCategory::ALL {
            fm.data.push(aj.get(c) - ai.get(c));
        }
        fm.data.extend([
            hj - hi,
            zj.hdi - zi.hdi,
            zj.mean_age - zi.mean_age,
            zj.pct_women - zi.pct_women,
            zj.immigrant_ratio - zi.immigrant_ratio,
            d.ln(),
            zj.population.ln(),
            (zj.touristic_attractiveness + eps).ln(),
            zi.population.ln(),
            (zi.touristic_attractiveness + eps).ln(),
            if zi.id != zj.id { 1.0 } else { 0.0 },
            if o.day_type == DayType::Weekend { 1.0 } else { 0.0 },
        ]);
        fm.response.push(o.response_count as f64);
        fm.origin.push(zi.id.clone());
        fm.dest.push(zj.id.clone());
        fm.day_type.push(o.day_type);
        fm.anchor.push(zi.centroid);
    }
    Ok(fm)
}

#[derive(Debug, Serialize, Deserialize)]
struct OdRecord {
    origin_zone: String,
    dest_zone: String,
    day_type: DayType,
    avg_count: f64,
}

pub fn write_od_csv(w: impl Write, obs: &[ODObservation]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for o in obs {
        wr.serialize(OdRecord {
            origin_zone: o.origin_zone.clone(),
            dest_zone: o.dest_zone.clone(),
            day_type: o.day_type,
            avg_count: o.avg_count,
        })
        .map_err(|e| Error::parse("od csv", e))?;
    }
    wr.flush().map_err(|e| Error::parse("od csv", e))?;
    Ok(())
}

pub fn read_od_csv(path: &Path) -> Result<Vec<ODObservation>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rd = csv::Reader::from_reader(file);
    rd.deserialize::<OdRecord>()
        .map(|r| {
            let r = r.map_err(|e| Error::parse(path.display().to_string(), e))?;
            if !(r.avg_count >= 0.0) || !r.avg_count.is_finite() {
                return Err(Error::invalid("avg_count", "must be a nonnegative number"));
            }
            Ok(ODObservation::new(r.origin_zone, r.dest_zone, r.day_type, r.avg_count))
        })
        .collect()
}
