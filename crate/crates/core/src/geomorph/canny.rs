use crate::raster::Grid;

fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

fn gaussian_blur(g: &Grid<f64>, sigma: f64) -> Grid<f64> {
    if sigma <= 0.0 {
        return g.clone();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let (w, h) = (g.width(), g.height());
    let horiz = Grid::from_fn(w, h, |x, y| {
        (-r..=r)
            .map(|i| k[(i + r) as usize] * g.get(clamp_idx(x as isize + i, w), y))
            .sum::<f64>()
    });
    Grid::from_fn(w, h, |x, y| {
        (-r..=r)
            .map(|i| k[(i + r) as usize] * horiz.get(x, clamp_idx(y as isize + i, h)))
            .sum::<f64>()
    })
}

/// Per-pixel gradient (Sobel divided by 8) with replicated borders.
fn sobel(g: &Grid<f64>) -> (Grid<f64>, Grid<f64>) {
    let (w, h) = (g.width(), g.height());
    let at = |x: usize, y: usize, dx: isize, dy: isize| {
        g.get(clamp_idx(x as isize + dx, w), clamp_idx(y as isize + dy, h))
    };
    let gx = Grid::from_fn(w, h, |x, y| {
        (at(x, y, 1, -1) + 2.0 * at(x, y, 1, 0) + at(x, y, 1, 1)
            - at(x, y, -1, -1)
            - 2.0 * at(x, y, -1, 0)
            - at(x, y, -1, 1))
            / 8.0
    });
    let gy = Grid::from_fn(w, h, |x, y| {
        (at(x, y, -1, 1) + 2.0 * at(x, y, 0, 1) + at(x, y, 1, 1)
            - at(x, y, -1, -1)
            - 2.0 * at(x, y, 0, -1)
            - at(x, y, 1, -1))
            / 8.0
    });
    (gx, gy)
}

/// Canny edges on the min-max normalized surface. `low`/`high` apply to
/// the per-pixel gradient magnitude.
pub fn canny_grid(dem: &Grid<f64>, sigma: f64, low: f64, high: f64) -> Grid<bool> {
    let (w, h) = (dem.width(), dem.height());
    let (lo, hi) = dem
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi <= lo {
        return Grid::filled(w, h, false);
    }
    let norm = dem.map(|v| (v - lo) / (hi - lo));
    let (gx, gy) = sobel(&gaussian_blur(&norm, sigma));
    let mag = Grid::from_fn(w, h, |x, y| gx.get(x, y).hypot(gy.get(x, y)));

    let magnitude_at = |x: isize, y: isize| {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mag.get(x as usize, y as usize)
        }
    };
    let thin = Grid::from_fn(w, h, |x, y| {
        let m = mag.get(x, y);
        if m < low {
            return 0.0;
        }
        let angle = gy.get(x, y).atan2(gx.get(x, y)).to_degrees().rem_euclid(180.0);
        let (dx, dy) = if !(22.5..157.5).contains(&angle) {
            (1, 0)
        } else if angle < 67.5 {
            (1, 1)
        } else if angle < 112.5 {
            (0, 1)
        } else {
            (-1, 1)
        };
        let (xi, yi) = (x as isize, y as isize);
        let ahead = magnitude_at(xi + dx, yi + dy);
        let behind = magnitude_at(xi - dx, yi - dy);
        if m >= ahead && m > behind {
            m
        } else {
            0.0
        }
    });

    let mut out = Grid::filled(w, h, false);
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if thin.get(x, y) >= high {
                out.set(x, y, true);
                stack.push((x, y));
            }
        }
    }
    while let Some((x, y)) = stack.pop() {
        for d in 0..8 {
            let Some((nx, ny)) = super::fill::neighbour(w, h, x, y, d) else { continue };
            if !out.get(nx, ny) && thin.get(nx, ny) >= low {
                out.set(nx, ny, true);
                stack.push((nx, ny));
            }
        }
    }
    out
}
