//! Readers and writers for the on-disk inputs: GeoJSON feature collections
//! (zones, amenities, residents) and CSV tables (walk graph, grid cells,
//! grid counts).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{
    Amenity, AmenityCategory, CountKey, GridCell, Point, Polygon, Projection, ProjectionSpec, Rect, ResidentPoint,
    Zone, ZoneAttributes,
};
use crate::access::WalkGraph;
use crate::error::{Error, Result};

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn ctx(path: &Path) -> String {
    path.display().to_string()
}

/// Features of a GeoJSON FeatureCollection.
pub fn read_features(path: &Path) -> Result<Vec<Value>> {
    let v: Value = serde_json::from_reader(BufReader::new(open(path)?)).map_err(|e| Error::parse(ctx(path), e))?;
    if v.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::parse(ctx(path), "not a GeoJSON FeatureCollection"));
    }
    match v.get("features") {
        Some(Value::Array(f)) => Ok(f.clone()),
        _ => Err(Error::parse(ctx(path), "FeatureCollection without a features array")),
    }
}

fn feature_label(f: &Value, k: usize) -> String {
    f.get("properties")
        .and_then(|p| p.get("id"))
        .or_else(|| f.get("id"))
        .map(|v| match v {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        })
        .unwrap_or_else(|| format!("#{k}"))
}

fn prop<'a>(f: &'a Value, label: &str, field: &str) -> Result<&'a Value> {
    f.get("properties")
        .and_then(|p| p.get(field))
        .filter(|v| !v.is_null())
        .ok_or_else(|| Error::MissingField {
            feature: label.to_string(),
            field: field.to_string(),
        })
}

fn num_prop(f: &Value, label: &str, field: &str) -> Result<f64> {
    prop(f, label, field)?.as_f64().ok_or_else(|| Error::MissingField {
        feature: label.to_string(),
        field: field.to_string(),
    })
}

fn str_prop(f: &Value, label: &str, field: &str) -> Result<String> {
    match prop(f, label, field)? {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(Error::MissingField {
            feature: label.to_string(),
            field: field.to_string(),
        }),
    }
}

fn position(v: &Value) -> Result<Point> {
    match v.as_array().map(Vec::as_slice) {
        Some([x, y, ..]) => match (x.as_f64(), y.as_f64()) {
            (Some(x), Some(y)) => Ok(Point::new(x, y)),
            _ => Err(Error::Geometry(format!("non-numeric position {v}"))),
        },
        _ => Err(Error::Geometry(format!("invalid position {v}"))),
    }
}

fn ring(v: &Value) -> Result<Vec<Point>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::Geometry("ring is not an array".into()))?;
    let pts = arr.iter().map(position).collect::<Result<Vec<_>>>()?;
    if pts.len() < 4 || pts.first() != pts.last() {
        return Err(Error::Geometry(
            "ring must be closed and have at least 4 positions".into(),
        ));
    }
    Ok(pts)
}

fn polygon_rings(v: &Value, label: &str) -> Result<Vec<Point>> {
    let rings = v
        .as_array()
        .ok_or_else(|| Error::Geometry(format!("{label}: polygon coordinates not an array")))?;
    match rings.as_slice() {
        [outer] => ring(outer),
        [] => Err(Error::Geometry(format!("{label}: polygon without rings"))),
        _ => Err(Error::Geometry(format!(
            "{label}: polygons with holes are not supported"
        ))),
    }
}

/// Raw (unprojected) outer rings of a Polygon / MultiPolygon geometry.
fn zone_parts(f: &Value, label: &str) -> Result<Vec<Vec<Point>>> {
    let g = f
        .get("geometry")
        .filter(|g| !g.is_null())
        .ok_or_else(|| Error::Geometry(format!("{label}: missing geometry")))?;
    let coords = g
        .get("coordinates")
        .ok_or_else(|| Error::Geometry(format!("{label}: geometry without coordinates")))?;
    match g.get("type").and_then(Value::as_str) {
        Some("Polygon") => Ok(vec![polygon_rings(coords, label)?]),
        Some("MultiPolygon") => coords
            .as_array()
            .ok_or_else(|| Error::Geometry(format!("{label}: bad MultiPolygon")))?
            .iter()
            .map(|p| polygon_rings(p, label))
            .collect(),
        other => Err(Error::Geometry(format!(
            "{label}: expected Polygon or MultiPolygon, got {other:?}"
        ))),
    }
}

fn point_geometry(f: &Value, label: &str) -> Result<Point> {
    let g = f
        .get("geometry")
        .filter(|g| !g.is_null())
        .ok_or_else(|| Error::Geometry(format!("{label}: missing geometry")))?;
    if g.get("type").and_then(Value::as_str) != Some("Point") {
        return Err(Error::Geometry(format!("{label}: expected a Point geometry")));
    }
    position(g.get("coordinates").unwrap_or(&Value::Null))
}

/// Loads zones and returns them with the projection that was applied.
pub fn load_zones(path: &Path, spec: &ProjectionSpec) -> Result<(Vec<Zone>, Projection)> {
    let features = read_features(path)?;
    let mut raw = Vec::with_capacity(features.len());
    for (k, f) in features.iter().enumerate() {
        let label = feature_label(f, k);
        let id = str_prop(f, &label, "id")?;
        let parts = zone_parts(f, &label)?;
        let attrs = ZoneAttributes {
            population: num_prop(f, &label, "population")?,
            hdi: num_prop(f, &label, "hdi")?,
            mean_age: num_prop(f, &label, "mean_age")?,
            pct_women: num_prop(f, &label, "pct_women")?,
            immigrant_ratio: num_prop(f, &label, "immigrant_ratio")?,
            rent_mean: num_prop(f, &label, "rent_mean")?,
            rent_per_m2: num_prop(f, &label, "rent_per_m2")?,
            touristic_attractiveness: num_prop(f, &label, "touristic_attractiveness")?,
        };
        raw.push((id, parts, attrs));
    }
    let projection = spec.resolve(raw.iter().flat_map(|(_, p, _)| p.iter().flatten().copied()))?;
    let mut seen = BTreeMap::new();
    let mut zones = Vec::with_capacity(raw.len());
    for (id, parts, attrs) in raw {
        if seen.insert(id.clone(), ()).is_some() {
            return Err(Error::InvalidInput(format!("duplicate zone id `{id}`")));
        }
        let projected = parts
            .into_iter()
            .map(|r| r.into_iter().map(|p| projection.forward(p)).collect())
            .collect();
        let polygon = Polygon::new(projected).map_err(|e| Error::Geometry(format!("zone {id}: {e}")))?;
        zones.push(Zone::new(id, polygon, attrs)?);
    }
    Ok((zones, projection))
}

pub fn load_amenities(path: &Path, projection: &Projection) -> Result<Vec<Amenity>> {
    read_features(path)?
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let label = feature_label(f, k);
            let category: AmenityCategory = str_prop(f, &label, "category")?
                .parse()
                .map_err(|e| Error::invalid(format!("{label}.category"), format!("{e}")))?;
            Ok(Amenity {
                category,
                location: projection.forward(point_geometry(f, &label)?),
            })
        })
        .collect()
}

pub fn load_residents(path: &Path, projection: &Projection) -> Result<Vec<ResidentPoint>> {
    read_features(path)?
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let label = feature_label(f, k);
            Ok(ResidentPoint {
                zone_id: str_prop(f, &label, "zone_id")?,
                location: projection.forward(point_geometry(f, &label)?),
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeRecord {
    node_id: String,
    x: f64,
    y: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeRecord {
    u: String,
    v: String,
    length_m: f64,
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rd = csv::Reader::from_reader(BufReader::new(open(path)?));
    rd.deserialize()
        .enumerate()
        .map(|(k, r)| r.map_err(|e| Error::parse(format!("{} row {}", ctx(path), k + 2), e)))
        .collect()
}

/// Nodes CSV `node_id,x,y` (input coordinates) and edges CSV `u,v,length_m`.
pub fn load_graph(
    nodes_path: &Path,
    edges_path: &Path,
    projection: &Projection,
    walking_speed: f64,
) -> Result<WalkGraph> {
    let nodes: Vec<NodeRecord> = read_csv(nodes_path)?;
    let edges: Vec<EdgeRecord> = read_csv(edges_path)?;
    WalkGraph::new(
        nodes
            .into_iter()
            .map(|n| (n.node_id, projection.forward(Point::new(n.x, n.y)))),
        edges.into_iter().map(|e| (e.u, e.v, e.length_m)),
        walking_speed,
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct CellRecord {
    cell_id: String,
    min_x: f64,
    min_y: f64,
    max_x: f64,
    max_y: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CountRecord {
    cell_id: String,
    date: NaiveDate,
    time_window: String,
    visitor_class: String,
    origin_zone_id: String,
    count: f64,
}

/// Cells CSV `cell_id,min_x,min_y,max_x,max_y` (projected meters) and counts
/// CSV `cell_id,date,time_window,visitor_class,origin_zone_id,count`.
pub fn load_grid(cells_path: &Path, counts_path: &Path) -> Result<Vec<GridCell>> {
    let cells: Vec<CellRecord> = read_csv(cells_path)?;
    let mut out: Vec<GridCell> = Vec::with_capacity(cells.len());
    let mut index = BTreeMap::new();
    for c in cells {
        if index.insert(c.cell_id.clone(), out.len()).is_some() {
            return Err(Error::InvalidInput(format!("duplicate cell id `{}`", c.cell_id)));
        }
        out.push(GridCell {
            id: c.cell_id,
            rect: Rect::new(c.min_x, c.min_y, c.max_x, c.max_y),
            counts: BTreeMap::new(),
        });
    }
    let counts: Vec<CountRecord> = read_csv(counts_path)?;
    for r in counts {
        let &k = index
            .get(&r.cell_id)
            .ok_or_else(|| Error::InvalidInput(format!("count references unknown cell `{}`", r.cell_id)))?;
        if !(r.count >= 0.0) || !r.count.is_finite() {
            return Err(Error::invalid(
                "count",
                format!("negative or non-finite count in cell {}", r.cell_id),
            ));
        }
        *out[k]
            .counts
            .entry(CountKey {
                date: r.date,
                time_window: r.time_window,
                visitor_class: r.visitor_class,
                origin_zone_id: r.origin_zone_id,
            })
            .or_insert(0.0) += r.count;
    }
    Ok(out)
}

fn ring_json(ring: &[Point], projection: &Projection) -> Value {
    let mut coords: Vec<Value> = ring
        .iter()
        .map(|p| {
            let q = projection.inverse(*p);
            json!([q.x, q.y])
        })
        .collect();
    coords.push(coords[0].clone());
    Value::Array(coords)
}

fn write_collection(path: &Path, features: Vec<Value>) -> Result<()> {
    let fc = json!({ "type": "FeatureCollection", "features": features });
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, &fc).map_err(|e| Error::parse(ctx(path), e))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes zones back in input coordinates. `extra` adds per-zone numeric
/// properties (e.g. accessibility values); missing values are written `null`.
pub fn write_zones(
    path: &Path,
    zones: &[Zone],
    projection: &Projection,
    extra: &BTreeMap<String, Vec<(String, Option<f64>)>>,
) -> Result<()> {
    let features = zones
        .iter()
        .map(|z| {
            let mut props = Map::new();
            props.insert("id".into(), json!(z.id));
            let a = z.attributes();
            let values = [
                a.population,
                a.hdi,
                a.mean_age,
                a.pct_women,
                a.immigrant_ratio,
                a.rent_mean,
                a.rent_per_m2,
                a.touristic_attractiveness,
            ];
            for (name, v) in ZoneAttributes::NAMES.iter().zip(values) {
                props.insert((*name).into(), json!(v));
            }
            if let Some(e) = extra.get(&z.id) {
                for (k, v) in e {
                    props.insert(k.clone(), v.map_or(Value::Null, |v| json!(v)));
                }
            }
            let geometry = if z.polygon.parts.len() == 1 {
                json!({
                    "type": "Polygon",
                    "coordinates": [ring_json(&z.polygon.parts[0], projection)],
                })
            } else {
                let parts: Vec<Value> = z
                    .polygon
                    .parts
                    .iter()
                    .map(|r| json!([ring_json(r, projection)]))
                    .collect();
                json!({ "type": "MultiPolygon", "coordinates": parts })
            };
            json!({ "type": "Feature", "properties": props, "geometry": geometry })
        })
        .collect();
    write_collection(path, features)
}

fn point_feature(p: Point, projection: &Projection, props: Value) -> Value {
    let q = projection.inverse(p);
    json!({
        "type": "Feature",
        "properties": props,
        "geometry": { "type": "Point", "coordinates": [q.x, q.y] },
    })
}

pub fn write_amenities(path: &Path, amenities: &[Amenity], projection: &Projection) -> Result<()> {
    let features = amenities
        .iter()
        .map(|a| point_feature(a.location, projection, json!({ "category": a.category.as_str() })))
        .collect();
    write_collection(path, features)
}

pub fn write_residents(path: &Path, residents: &[ResidentPoint], projection: &Projection) -> Result<()> {
    let features = residents
        .iter()
        .map(|r| point_feature(r.location, projection, json!({ "zone_id": r.zone_id })))
        .collect();
    write_collection(path, features)
}

fn write_records<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let mut wr = csv::Writer::from_writer(create(path)?);
    for r in records {
        wr.serialize(r).map_err(|e| Error::parse(ctx(path), e))?;
    }
    wr.flush().map_err(|e| Error::io(path, e))
}

pub fn write_graph(nodes_path: &Path, edges_path: &Path, graph: &WalkGraph, projection: &Projection) -> Result<()> {
    write_records(
        nodes_path,
        (0..graph.len()).map(|i| {
            let q = projection.inverse(graph.coord(i));
            NodeRecord {
                node_id: graph.node_id(i).to_string(),
                x: q.x,
                y: q.y,
            }
        }),
    )?;
    write_records(
        edges_path,
        graph.edges().map(|(u, v, len)| EdgeRecord {
            u: graph.node_id(u).to_string(),
            v: graph.node_id(v).to_string(),
            length_m: len,
        }),
    )
}

pub fn write_grid(cells_path: &Path, counts_path: &Path, cells: &[GridCell]) -> Result<()> {
    write_records(
        cells_path,
        cells.iter().map(|c| CellRecord {
            cell_id: c.id.clone(),
            min_x: c.rect.min_x,
            min_y: c.rect.min_y,
            max_x: c.rect.max_x,
            max_y: c.rect.max_y,
        }),
    )?;
    write_records(
        counts_path,
        cells.iter().flat_map(|c| {
            c.counts.iter().map(move |(k, &count)| CountRecord {
                cell_id: c.id.clone(),
                date: k.date,
                time_window: k.time_window.clone(),
                visitor_class: k.visitor_class.clone(),
                origin_zone_id: k.origin_zone_id.clone(),
                count,
            })
        }),
    )
}
