//! Rectangle clipping of simple polygons.
//!
//! The subject ring is clipped successively against the four half-planes of
//! the rectangle (Sutherland-Hodgman). For a convex clip window this yields a
//! ring whose signed area equals the area of the true intersection even when
//! the subject is concave: the degenerate zero-width bridges it may produce
//! contribute no area.

use super::{Point, Polygon, Rect};
use crate::error::{Error, Result};

pub fn ring_signed_area(ring: &[Point]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    let o = ring[0];
    let mut a2 = 0.0;
    for i in 1..n - 1 {
        let p = ring[i];
        let q = ring[i + 1];
        a2 += (p.x - o.x) * (q.y - o.y) - (q.x - o.x) * (p.y - o.y);
    }
    0.5 * a2
}

pub fn ring_area(ring: &[Point]) -> f64 {
    ring_signed_area(ring).abs()
}

#[derive(Clone, Copy)]
enum Edge {
    Left(f64),
    Right(f64),
    Bottom(f64),
    Top(f64),
}

impl Edge {
    fn inside(&self, p: &Point) -> bool {
        match *self {
            Edge::Left(x) => p.x >= x,
            Edge::Right(x) => p.x <= x,
            Edge::Bottom(y) => p.y >= y,
            Edge::Top(y) => p.y <= y,
        }
    }

    fn intersect(&self, a: &Point, b: &Point) -> Point {
        match *self {
            Edge::Left(x) | Edge::Right(x) => {
                let t = (x - a.x) / (b.x - a.x);
                Point::new(x, a.y + t * (b.y - a.y))
            }
            Edge::Bottom(y) | Edge::Top(y) => {
                let t = (y - a.y) / (b.y - a.y);
                Point::new(a.x + t * (b.x - a.x), y)
            }
        }
    }
}

fn clip_against(input: &[Point], edge: Edge) -> Vec<Point> {
    let mut out = Vec::with_capacity(input.len() + 4);
    let n = input.len();
    for i in 0..n {
        let cur = input[i];
        let prev = input[(i + n - 1) % n];
        let cur_in = edge.inside(&cur);
        let prev_in = edge.inside(&prev);
        if cur_in {
            if !prev_in {
                out.push(edge.intersect(&prev, &cur));
            }
            out.push(cur);
        } else if prev_in {
            out.push(edge.intersect(&prev, &cur));
        }
    }
    out
}

/// Clips an open ring to `rect`; the result may contain degenerate edges.
pub fn clip_ring_to_rect(ring: &[Point], rect: &Rect) -> Vec<Point> {
    let mut poly = ring.to_vec();
    for edge in [
        Edge::Left(rect.min_x),
        Edge::Right(rect.max_x),
        Edge::Bottom(rect.min_y),
        Edge::Top(rect.max_y),
    ] {
        if poly.is_empty() {
            break;
        }
        poly = clip_against(&poly, edge);
    }
    poly
}

pub(crate) fn intersection_area_unchecked(polygon: &Polygon, rect: &Rect) -> f64 {
    let bb = polygon.bbox();
    if !bb.intersects(rect) {
        return 0.0;
    }
    polygon
        .parts
        .iter()
        .map(|ring| ring_area(&clip_ring_to_rect(ring, rect)))
        .sum()
}

/// Area of `polygon ∩ rect`. Fails on self-intersecting rings.
pub fn polygon_rect_intersection_area(polygon: &Polygon, rect: &Rect) -> Result<f64> {
    for (k, ring) in polygon.parts.iter().enumerate() {
        if let Some((a, b)) = first_self_intersection(ring) {
            return Err(Error::Geometry(format!(
                "ring {k} is self-intersecting (edges {a} and {b})"
            )));
        }
    }
    Ok(intersection_area_unchecked(polygon, rect))
}

fn orient(a: &Point, b: &Point, c: &Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: &Point, b: &Point, p: &Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn segments_intersect(p1: &Point, p2: &Point, q1: &Point, q2: &Point) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// First pair of non-adjacent edges that touch or cross, if any.
pub(crate) fn first_self_intersection(ring: &[Point]) -> Option<(usize, usize)> {
    let n = ring.len();
    if n < 4 {
        return None;
    }
    for i in 0..n {
        let a1 = ring[i];
        let a2 = ring[(i + 1) % n];
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let b1 = ring[j];
            let b2 = ring[(j + 1) % n];
            if segments_intersect(&a1, &a2, &b1, &b2) {
                return Some((i, j));
            }
        }
    }
    None
}
