//! Uniform-grid spatial hash for close vertex pairs.

use std::collections::HashMap;

use crate::mesh::dist;

type Cell = [i64; 3];

fn cell_of(p: [f64; 3], size: f64) -> Cell {
    [(p[0] / size).floor() as i64, (p[1] / size).floor() as i64, (p[2] / size).floor() as i64]
}

/// All unordered pairs `(u, v)`, `u < v`, with `|p_u - p_v| < radius`, sorted.
///
/// Points are bucketed into cells of edge `radius`; each point is compared
/// against the 27 cells around its own. Cells are visited in sorted order and
/// points within a cell by index, so the result does not depend on hashing.
pub fn close_pairs(points: &[[f64; 3]], radius: f64) -> Vec<[usize; 2]> {
    assert!(radius > 0.0, "hash radius must be positive");
    let mut order: Vec<(Cell, usize)> = points.iter().enumerate().map(|(i, &p)| (cell_of(p, radius), i)).collect();
    order.sort_unstable();

    let mut ranges: HashMap<Cell, (usize, usize)> = HashMap::new();
    let mut start = 0;
    while start < order.len() {
        let cell = order[start].0;
        let mut end = start;
        while end < order.len() && order[end].0 == cell {
            end += 1;
        }
        ranges.insert(cell, (start, end));
        start = end;
    }

    let mut pairs = Vec::new();
    for &(cell, u) in &order {
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let neighbor = [cell[0] + dx, cell[1] + dy, cell[2] + dz];
                    let Some(&(s, e)) = ranges.get(&neighbor) else { continue };
                    for &(_, v) in &order[s..e] {
                        if v > u && dist(points[u], points[v]) < radius {
                            pairs.push([u, v]);
                        }
                    }
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs
}
