//! Walking reachability on the pedestrian network and per-zone accessibility.
//!
//! Accessibility of zone `i` to category `c` is the mean, over the zone's
//! resident points, of the number of category-`c` amenities whose snapped node
//! lies within the walking time budget of the resident's snapped node.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{Amenity, AmenityCategory, Point, ResidentPoint, Zone};

/// 5 km/h.
pub const DEFAULT_WALKING_SPEED: f64 = 5000.0 / 3600.0;
pub const DEFAULT_BUDGET_S: f64 = 900.0;
pub const DEFAULT_SNAP_M: f64 = 100.0;

/// Undirected pedestrian street network.
#[derive(Debug, Clone)]
pub struct WalkGraph {
    ids: Vec<String>,
    coords: Vec<Point>,
    index: HashMap<String, usize>,
    adjacency: Vec<Vec<(usize, f64)>>,
    walking_speed: f64,
}

impl WalkGraph {
    pub fn new(
        nodes: impl IntoIterator<Item = (String, Point)>,
        edges: impl IntoIterator<Item = (String, String, f64)>,
        walking_speed: f64,
    ) -> Result<Self> {
        if !(walking_speed > 0.0) || !walking_speed.is_finite() {
            return Err(Error::invalid("walking_speed", "must be a positive number"));
        }
        let mut ids = Vec::new();
        let mut coords = Vec::new();
        let mut index = HashMap::new();
        for (id, p) in nodes {
            if index.insert(id.clone(), ids.len()).is_some() {
                return Err(Error::Graph(format!("duplicate node id `{id}`")));
            }
            ids.push(id);
            coords.push(p);
        }
        let mut adjacency = vec![Vec::new(); ids.len()];
        for (u, v, len) in edges {
            let ui = *index
                .get(&u)
                .ok_or_else(|| Error::Graph(format!("edge references unknown node `{u}`")))?;
            let vi = *index
                .get(&v)
                .ok_or_else(|| Error::Graph(format!("edge references unknown node `{v}`")))?;
            if !(len > 0.0) || !len.is_finite() {
                return Err(Error::Graph(format!("edge {u}-{v} has non-positive length {len}")));
            }
            adjacency[ui].push((vi, len));
            if ui != vi {
                adjacency[vi].push((ui, len));
            }
        }
        Ok(WalkGraph {
            ids,
            coords,
            index,
            adjacency,
            walking_speed,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn walking_speed(&self) -> f64 {
        self.walking_speed
    }

    pub fn with_walking_speed(mut self, speed: f64) -> Result<Self> {
        if !(speed > 0.0) || !speed.is_finite() {
            return Err(Error::invalid("walking_speed", "must be a positive number"));
        }
        self.walking_speed = speed;
        Ok(self)
    }

    pub fn node_id(&self, idx: usize) -> &str {
        &self.ids[idx]
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn coord(&self, idx: usize) -> Point {
        self.coords[idx]
    }

    pub fn neighbors(&self, idx: usize) -> &[(usize, f64)] {
        &self.adjacency[idx]
    }

    /// Iterates undirected edges once each as `(u, v, length_m)` with `u <= v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(u, adj)| {
            adj.iter()
                .filter(move |(v, _)| u <= *v)
                .map(move |&(v, len)| (u, v, len))
        })
    }

    /// Nodes reachable from `origin` within `budget_s` seconds of walking.
    pub fn reachable_nodes(&self, origin: &str, budget_s: f64) -> Result<ReachResult> {
        let o = self
            .node_index(origin)
            .ok_or_else(|| Error::Graph(format!("unknown origin node `{origin}`")))?;
        if !(budget_s > 0.0) {
            return Err(Error::invalid("budget_s", "must be > 0"));
        }
        let times = self
            .reach_from(o, budget_s)
            .into_iter()
            .map(|(n, t)| (self.ids[n].clone(), t))
            .collect();
        Ok(ReachResult {
            origin: origin.to_string(),
            times,
        })
    }

    /// Budget-pruned Dijkstra. Distances accumulate in meters and are
    /// converted to seconds at the end, so the time of a node is
    /// `(sum of edge lengths along its shortest path) / speed`.
    pub(crate) fn reach_from(&self, origin: usize, budget_s: f64) -> Vec<(usize, f64)> {
        let speed = self.walking_speed;
        let mut dist: HashMap<usize, f64> = HashMap::new();
        let mut heap = BinaryHeap::new();
        dist.insert(origin, 0.0);
        heap.push(HeapEntry {
            dist: 0.0,
            node: origin,
        });
        let mut settled = Vec::new();
        let mut done = vec![false; self.ids.len()];
        while let Some(HeapEntry { dist: d, node }) = heap.pop() {
            if done[node] {
                continue;
            }
            done[node] = true;
            settled.push((node, d / speed));
            for &(next, len) in &self.adjacency[node] {
                if done[next] {
                    continue;
                }
                let nd = d + len;
                if nd / speed > budget_s {
                    continue;
                }
                let better = dist.get(&next).is_none_or(|&cur| nd < cur);
                if better {
                    dist.insert(next, nd);
                    heap.push(HeapEntry { dist: nd, node: next });
                }
            }
        }
        settled
    }

    /// Nearest node within `max_snap_m`; ties go to the lexicographically
    /// smaller node id.
    pub fn snap_to_node(&self, p: &Point, max_snap_m: f64) -> Result<Option<usize>> {
        if self.is_empty() {
            return Err(Error::Graph("cannot snap to an empty graph".into()));
        }
        if !(max_snap_m > 0.0) {
            return Err(Error::invalid("max_snap_m", "must be > 0"));
        }
        let mut best: Option<(f64, usize)> = None;
        for (i, c) in self.coords.iter().enumerate() {
            let d2 = c.distance_sq(p);
            best = match best {
                None => Some((d2, i)),
                Some((bd, bi)) => {
                    if d2 < bd || (d2 == bd && self.ids[i] < self.ids[bi]) {
                        Some((d2, i))
                    } else {
                        Some((bd, bi))
                    }
                }
            };
        }
        let (d2, i) = best.expect("non-empty graph");
        Ok((d2.sqrt() <= max_snap_m).then_some(i))
    }
}

#[derive(Debug, Clone, Copy)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    // min-heap on distance
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// Walking times (seconds) of every node within the budget, origin included.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachResult {
    pub origin: String,
    pub times: BTreeMap<String, f64>,
}

/// How the zone-level amenity diversity is aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiversityMode {
    /// Entropy of the category totals summed over the zone's residents.
    #[default]
    ZoneTotals,
    /// Mean over residents of each resident's own entropy.
    ResidentMean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneAccess {
    /// Mean reachable amenities per resident, indexed by [`AmenityCategory::index`].
    pub values: [f64; AmenityCategory::COUNT],
    /// Shannon entropy (nats) over the non-transport categories, `None` when no
    /// amenity is reachable at all.
    pub diversity: Option<f64>,
    pub residents: usize,
}

impl ZoneAccess {
    pub fn get(&self, c: AmenityCategory) -> f64 {
        self.values[c.index()]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AccessibilityTable {
    pub rows: BTreeMap<String, ZoneAccess>,
    /// Zones without a single snappable resident; accessibility is undefined.
    pub flagged: Vec<String>,
    pub dropped_amenities: usize,
    pub dropped_residents: usize,
}

impl AccessibilityTable {
    pub fn get(&self, zone_id: &str) -> Option<&ZoneAccess> {
        self.rows.get(zone_id)
    }

    pub fn csv_header() -> Vec<String> {
        let mut h = vec!["zone_id".to_string()];
        h.extend(AmenityCategory::ALL.iter().map(|c| c.as_str().to_string()));
        h.push("diversity".into());
        h
    }

    /// One row per zone, six decimals. Undefined diversity is written empty.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let ctx = |e: csv::Error| Error::parse("accessibility csv", e);
        wr.write_record(Self::csv_header()).map_err(ctx)?;
        for (zone, row) in &self.rows {
            let mut rec = vec![zone.clone()];
            rec.extend(row.values.iter().map(|v| format!("{v:.6}")));
            rec.push(row.diversity.map(|h| format!("{h:.6}")).unwrap_or_default());
            wr.write_record(&rec).map_err(ctx)?;
        }
        wr.flush().map_err(|e| Error::parse("accessibility csv", e))?;
        Ok(())
    }

    pub fn read_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let ctx = path.display().to_string();
        let mut rd = csv::Reader::from_reader(file);
        let header: Vec<String> = rd
            .headers()
            .map_err(|e| Error::parse(&ctx, e))?
            .iter()
            .map(str::to_string)
            .collect();
        if header != Self::csv_header() {
            return Err(Error::parse(&ctx, format!("unexpected header {header:?}")));
        }
        let mut table = AccessibilityTable::default();
        for rec in rd.records() {
            let rec = rec.map_err(|e| Error::parse(&ctx, e))?;
            let mut values = [0.0; AmenityCategory::COUNT];
            for (k, v) in values.iter_mut().enumerate() {
                *v = rec[k + 1]
                    .parse()
                    .map_err(|e| Error::parse(&ctx, format!("column {}: {e}", header[k + 1])))?;
            }
            let div = &rec[AmenityCategory::COUNT + 1];
            let diversity = if div.is_empty() {
                None
            } else {
                Some(div.parse().map_err(|e| Error::parse(&ctx, format!("diversity: {e}")))?)
            };
            table.rows.insert(
                rec[0].to_string(),
                ZoneAccess {
                    values,
                    diversity,
                    residents: 0,
                },
            );
        }
        Ok(table)
    }
}

/// Shannon entropy in nats of a vector of category counts.
pub fn diversity(counts: &[f64]) -> Result<f64> {
    if counts.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
        return Err(Error::invalid("counts", "must be finite and nonnegative"));
    }
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidInput("entropy is undefined for all-zero counts".into()));
    }
    let h = counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / total;
            -p * p.ln()
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}

fn non_transport(counts: &[f64; AmenityCategory::COUNT]) -> [f64; AmenityCategory::COUNT - 1] {
    let mut out = [0.0; AmenityCategory::COUNT - 1];
    let mut k = 0;
    for c in AmenityCategory::ALL {
        if !c.is_public_transport() {
            out[k] = counts[c.index()];
            k += 1;
        }
    }
    out
}

/// Per-zone accessibility and diversity.
pub fn zone_accessibility(
    graph: &WalkGraph,
    amenities: &[Amenity],
    residents: &[ResidentPoint],
    zones: &[Zone],
    budget_s: f64,
    max_snap_m: f64,
    mode: DiversityMode,
) -> Result<AccessibilityTable> {
    if !(budget_s > 0.0) {
        return Err(Error::invalid("budget_s", "must be > 0"));
    }
    let mut at_node: HashMap<usize, [f64; AmenityCategory::COUNT]> = HashMap::new();
    let mut dropped_amenities = 0;
    for a in amenities {
        match graph.snap_to_node(&a.location, max_snap_m)? {
            Some(n) => at_node.entry(n).or_insert([0.0; AmenityCategory::COUNT])[a.category.index()] += 1.0,
            None => dropped_amenities += 1,
        }
    }

    let zone_ids: BTreeMap<&str, ()> = zones.iter().map(|z| (z.id.as_str(), ())).collect();
    let snapped: Vec<Option<usize>> = residents
        .par_iter()
        .map(|r| graph.snap_to_node(&r.location, max_snap_m))
        .collect::<Result<_>>()?;
    for r in residents {
        if !zone_ids.contains_key(r.zone_id.as_str()) {
            return Err(Error::InvalidInput(format!(
                "resident references unknown zone `{}`",
                r.zone_id
            )));
        }
    }

    let mut origins: Vec<usize> = snapped.iter().flatten().copied().collect();
    origins.sort_unstable();
    origins.dedup();
    let reach_counts: HashMap<usize, [f64; AmenityCategory::COUNT]> = origins
        .par_iter()
        .map(|&o| {
            let mut counts = [0.0; AmenityCategory::COUNT];
            for (n, _) in graph.reach_from(o, budget_s) {
                if let Some(c) = at_node.get(&n) {
                    for (acc, v) in counts.iter_mut().zip(c) {
                        *acc += v;
                    }
                }
            }
            (o, counts)
        })
        .collect();

    struct Acc {
        sum: [f64; AmenityCategory::COUNT],
        entropy_sum: f64,
        entropy_n: usize,
        n: usize,
    }
    let mut per_zone: BTreeMap<&str, Acc> = BTreeMap::new();
    let mut dropped_residents = 0;
    for (r, s) in residents.iter().zip(&snapped) {
        let Some(node) = s else {
            dropped_residents += 1;
            continue;
        };
        let counts = &reach_counts[node];
        let acc = per_zone.entry(r.zone_id.as_str()).or_insert(Acc {
            sum: [0.0; AmenityCategory::COUNT],
            entropy_sum: 0.0,
            entropy_n: 0,
            n: 0,
        });
        for (a, v) in acc.sum.iter_mut().zip(counts) {
            *a += v;
        }
        acc.n += 1;
        if mode == DiversityMode::ResidentMean {
            if let Ok(h) = diversity(&non_transport(counts)) {
                acc.entropy_sum += h;
                acc.entropy_n += 1;
            }
        }
    }

    let mut table = AccessibilityTable {
        dropped_amenities,
        dropped_residents,
        ..Default::default()
    };
    for z in zones {
        let Some(acc) = per_zone.get(z.id.as_str()) else {
            table.flagged.push(z.id.clone());
            continue;
        };
        let n = acc.n as f64;
        let values = acc.sum.map(|s| s / n);
        let diversity = match mode {
            DiversityMode::ZoneTotals => diversity(&non_transport(&acc.sum)).ok(),
            DiversityMode::ResidentMean => (acc.entropy_n > 0).then(|| acc.entropy_sum / acc.entropy_n as f64),
        };
        table.rows.insert(
            z.id.clone(),
            ZoneAccess {
                values,
                diversity,
                residents: acc.n,
            },
        );
    }
    Ok(table)
}
