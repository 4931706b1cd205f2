//! Brute-force references for depression filling and D8 routing.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use terrain_diffusion::raster::Grid;

pub const OFFSETS: [(isize, isize); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

pub fn neighbours(w: usize, h: usize, x: usize, y: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    OFFSETS.iter().enumerate().filter_map(move |(d, &(dx, dy))| {
        let nx = x as isize + dx;
        let ny = y as isize + dy;
        (nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize).then(|| (d, nx as usize, ny as usize))
    })
}

pub fn is_border(w: usize, h: usize, x: usize, y: usize) -> bool {
    x == 0 || y == 0 || x == w - 1 || y == h - 1
}

/// Spill-level fixpoint: W = dem on the border, W = max(dem, min neighbour W)
/// inside, iterated from +inf until nothing changes.
pub fn fixpoint_fill(dem: &Grid<f64>) -> Grid<f64> {
    let (w, h) = (dem.width(), dem.height());
    let mut water = Grid::from_fn(w, h, |x, y| if is_border(w, h, x, y) { dem.get(x, y) } else { f64::INFINITY });
    loop {
        let mut changed = false;
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let m = neighbours(w, h, x, y).map(|(_, nx, ny)| water.get(nx, ny)).fold(f64::INFINITY, f64::min);
                let v = dem.get(x, y).max(m);
                if v < water.get(x, y) {
                    water.set(x, y, v);
                    changed = true;
                }
            }
        }
        if !changed {
            return water;
        }
    }
}

pub fn random_grid(rng: &mut ChaCha8Rng, w: usize, h: usize, integer: bool) -> Grid<f64> {
    Grid::from_fn(w, h, |_, _| {
        if integer {
            rng.random_range(0..5) as f64
        } else {
            rng.random_range(0.0..100.0)
        }
    })
}

pub fn oracle_direction(dem: &Grid<f64>, x: usize, y: usize) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (d, nx, ny) in neighbours(dem.width(), dem.height(), x, y) {
        let dist = if d % 2 == 1 { 2f64.sqrt() } else { 1.0 };
        let slope = (dem.get(x, y) - dem.get(nx, ny)) / dist;
        if slope > 0.0 && best.is_none_or(|(_, s)| slope > s) {
            best = Some((d, slope));
        }
    }
    best.map(|(d, _)| d)
}

/// Upstream counts by walking every cell's steepest-descent path to its end.
pub fn oracle_accumulation(dem: &Grid<f64>) -> Grid<u32> {
    let (w, h) = (dem.width(), dem.height());
    let mut counts = Grid::filled(w, h, 0u32);
    for y in 0..h {
        for x in 0..w {
            let (mut px, mut py) = (x, y);
            for step in 0.. {
                assert!(step <= w * h, "path from ({x},{y}) does not terminate");
                counts.set(px, py, counts.get(px, py) + 1);
                match oracle_direction(dem, px, py) {
                    Some(d) => {
                        px = (px as isize + OFFSETS[d].0) as usize;
                        py = (py as isize + OFFSETS[d].1) as usize;
                    }
                    None => break,
                }
            }
        }
    }
    counts
}
