//! Level-set extraction on the grid: marching-squares segments, chained
//! polylines, and the area enclosed by a superlevel set.
//!
//! Coordinates are in grid-index units, `(i, j)` with `i` along the first
//! axis; callers convert to domain units with `dx`. Within each cell the
//! level set of the bilinear interpolant is approximated by straight chords
//! between edge crossings, walked in a fixed cyclic order so the same chords
//! bound the per-cell area polygons. Saddle cells are resolved by walk
//! order, deterministically.

use crate::Grid;

/// One level-set chord inside a cell, endpoints in grid-index coordinates.
pub type Segment = [(f64, f64); 2];

fn crossing(p: (f64, f64), q: (f64, f64), vp: f64, vq: f64, level: f64) -> (f64, f64) {
    let t = (level - vp) / (vq - vp);
    (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
}

/// Walks one cell boundary, returning the polygon of `{f > level}` within
/// the cell and the chords of the level set, in walk order.
fn cell_walk(
    corners: [((f64, f64), f64); 4],
    level: f64,
) -> (Vec<(f64, f64)>, Vec<Segment>) {
    let mut polygon = Vec::with_capacity(6);
    let mut crossings = Vec::with_capacity(4);
    for e in 0..4 {
        let (p, vp) = corners[e];
        let (q, vq) = corners[(e + 1) % 4];
        let p_in = vp > level;
        let q_in = vq > level;
        if p_in {
            polygon.push(p);
        }
        if p_in != q_in {
            let c = crossing(p, q, vp, vq, level);
            polygon.push(c);
            // Records whether this crossing leaves the inside region.
            crossings.push((c, p_in));
        }
    }
    let mut segments = Vec::new();
    let k = crossings.len();
    for (idx, &(c, leaving)) in crossings.iter().enumerate() {
        if leaving {
            let (entry, entering) = crossings[(idx + 1) % k];
            debug_assert!(!entering);
            segments.push([c, entry]);
        }
    }
    (polygon, segments)
}

fn shoelace(polygon: &[(f64, f64)]) -> f64 {
    let n = polygon.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for k in 0..n {
        let (x0, y0) = polygon[k];
        let (x1, y1) = polygon[(k + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    acc / 2.0
}

fn cell_corners(field: &Grid, i: usize, j: usize) -> [((f64, f64), f64); 4] {
    let v = |a: usize, b: usize| field[[a, b]];
    [
        ((i as f64, j as f64), v(i, j)),
        (((i + 1) as f64, j as f64), v(i + 1, j)),
        (((i + 1) as f64, (j + 1) as f64), v(i + 1, j + 1)),
        ((i as f64, (j + 1) as f64), v(i, j + 1)),
    ]
}

/// All level-set chords of the field at `level`.
pub fn extract_segments(field: &Grid, level: f64) -> Vec<Segment> {
    let (ni, nj) = field.dim();
    let mut out = Vec::new();
    for i in 0..ni.saturating_sub(1) {
        for j in 0..nj.saturating_sub(1) {
            let (_, segs) = cell_walk(cell_corners(field, i, j), level);
            out.extend(segs);
        }
    }
    out
}

/// Area of `{f > level}` under the piecewise-linear level-set approximation,
/// in grid-index units squared; multiply by `dx^2` for domain units.
pub fn enclosed_area_cells(field: &Grid, level: f64) -> f64 {
    let (ni, nj) = field.dim();
    let mut acc = 0.0;
    for i in 0..ni.saturating_sub(1) {
        for j in 0..nj.saturating_sub(1) {
            let (polygon, _) = cell_walk(cell_corners(field, i, j), level);
            acc += shoelace(&polygon);
        }
    }
    acc
}

/// [`enclosed_area_cells`] scaled to domain units.
pub fn enclosed_area(field: &Grid, level: f64, dx: f64) -> f64 {
    enclosed_area_cells(field, level) * dx * dx
}

fn quantize(p: (f64, f64)) -> (i64, i64) {
    ((p.0 * 1e7).round() as i64, (p.1 * 1e7).round() as i64)
}

/// Chains chords sharing endpoints into polylines; open chains first, then
/// closed loops, in deterministic order.
pub fn chain_polylines(segments: &[Segment]) -> Vec<Vec<(f64, f64)>> {
    use std::collections::HashMap;
    let mut adjacency: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (idx, seg) in segments.iter().enumerate() {
        adjacency.entry(quantize(seg[0])).or_default().push(idx);
        adjacency.entry(quantize(seg[1])).or_default().push(idx);
    }
    let mut used = vec![false; segments.len()];
    let mut polylines = Vec::new();

    let walk = |start: usize, used: &mut Vec<bool>| -> Vec<(f64, f64)> {
        let mut line = vec![segments[start][0], segments[start][1]];
        used[start] = true;
        loop {
            let tail = *line.last().unwrap();
            let key = quantize(tail);
            let next = adjacency
                .get(&key)
                .and_then(|ids| ids.iter().find(|&&s| !used[s]).copied());
            match next {
                Some(s) => {
                    used[s] = true;
                    let seg = segments[s];
                    if quantize(seg[0]) == key {
                        line.push(seg[1]);
                    } else {
                        line.push(seg[0]);
                    }
                }
                None => break,
            }
        }
        line
    };

    // Open chains start at endpoints of degree one.
    for idx in 0..segments.len() {
        if used[idx] {
            continue;
        }
        let deg0 = adjacency[&quantize(segments[idx][0])].len();
        if deg0 == 1 {
            polylines.push(walk(idx, &mut used));
        }
    }
    for idx in 0..segments.len() {
        if !used[idx] {
            polylines.push(walk(idx, &mut used));
        }
    }
    polylines
}

/// Segments chained into polylines at `level`.
pub fn extract_polylines(field: &Grid, level: f64) -> Vec<Vec<(f64, f64)>> {
    chain_polylines(&extract_segments(field, level))
}
