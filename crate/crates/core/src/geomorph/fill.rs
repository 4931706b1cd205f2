use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::raster::{Grid, Heightmap};

/// Gradient imposed across filled flats so every interior cell drains.
pub const FILL_EPSILON_M: f64 = 1e-5;

pub(crate) const NEIGHBOURS: [(isize, isize); 8] =
    [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

pub(crate) fn neighbour(w: usize, h: usize, x: usize, y: usize, d: usize) -> Option<(usize, usize)> {
    let (dx, dy) = NEIGHBOURS[d];
    let nx = x as isize + dx;
    let ny = y as isize + dy;
    (nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h).then(|| (nx as usize, ny as usize))
}

#[derive(PartialEq)]
struct Entry {
    z: f64,
    order: u64,
    idx: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // min-heap on (z, insertion order)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .z
            .total_cmp(&self.z)
            .then_with(|| other.order.cmp(&self.order))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Priority-Flood from the border. With `epsilon > 0` each raised cell sits
/// `epsilon` above the cell it was reached from; `epsilon = 0` gives the
/// plain spill-level fill.
pub fn fill_grid(dem: &Grid<f64>, epsilon: f64) -> Grid<f64> {
    let (w, h) = (dem.width(), dem.height());
    let mut out = dem.clone();
    let mut seen = vec![false; w * h];
    let mut heap = BinaryHeap::new();
    let mut order = 0u64;
    for y in 0..h {
        for x in 0..w {
            if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                let idx = y * w + x;
                seen[idx] = true;
                heap.push(Entry { z: out.data()[idx], order, idx });
                order += 1;
            }
        }
    }
    while let Some(Entry { idx, .. }) = heap.pop() {
        let (x, y) = (idx % w, idx / w);
        let zc = out.data()[idx];
        for d in 0..8 {
            let Some((nx, ny)) = neighbour(w, h, x, y, d) else { continue };
            let n = ny * w + nx;
            if seen[n] {
                continue;
            }
            seen[n] = true;
            let data = out.data_mut();
            if data[n] <= zc {
                data[n] = if epsilon > 0.0 { zc + epsilon } else { zc };
            }
            heap.push(Entry { z: data[n], order, idx: n });
            order += 1;
        }
    }
    out
}

/// Depression filling with the epsilon gradient, evaluated in double
/// precision and rounded back to the heightmap's storage type.
pub fn fill_depressions(hm: &Heightmap) -> Heightmap {
    let filled = fill_grid(&hm.to_f64(), FILL_EPSILON_M);
    let grid = filled.map(|v| v as f32);
    Heightmap::from_grid(grid, hm.resolution_m()).expect("filling preserves shape and finiteness")
}
