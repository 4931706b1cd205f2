use std::collections::BTreeMap;

use super::Texture;

const MAX_ITERATIONS: usize = 20;
/// Above this many distinct colors the farthest pair is found by a double
/// sweep instead of exhaustively.
const EXACT_PAIR_LIMIT: usize = 2048;

/// Result of two-color quantization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TwoColor {
    pub texture: Texture,
    pub colors: [[u8; 3]; 2],
    /// Set when the input holds a single color.
    pub degenerate: bool,
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

fn to_f(c: [u8; 3]) -> [f64; 3] {
    [c[0] as f64, c[1] as f64, c[2] as f64]
}

fn round_color(c: [f64; 3]) -> [u8; 3] {
    [0, 1, 2].map(|i| c[i].round().clamp(0.0, 255.0) as u8)
}

fn farthest_pair(colors: &[[f64; 3]]) -> (usize, usize) {
    if colors.len() <= EXACT_PAIR_LIMIT {
        let mut best = (0, 0, -1.0);
        for i in 0..colors.len() {
            for j in i + 1..colors.len() {
                let d = dist2(colors[i], colors[j]);
                if d > best.2 {
                    best = (i, j, d);
                }
            }
        }
        return (best.0, best.1);
    }
    let farthest_from = |k: usize| {
        (0..colors.len())
            .fold((k, -1.0), |acc, i| {
                let d = dist2(colors[k], colors[i]);
                if d > acc.1 {
                    (i, d)
                } else {
                    acc
                }
            })
            .0
    };
    let a = farthest_from(0);
    (a, farthest_from(a))
}

/// 2-means clustering in RGB space; each pixel becomes its cluster centroid.
///
/// Centroids start at the two most distant colors and Lloyd iterations stop
/// at convergence or after 20 rounds.
pub fn quantize_two_color(texture: &Texture) -> TwoColor {
    // distinct colors with pixel counts, in first-seen order
    let mut index: BTreeMap<[u8; 3], usize> = BTreeMap::new();
    let mut distinct: Vec<([u8; 3], usize)> = Vec::new();
    for px in texture.rgb().chunks_exact(3) {
        let c = [px[0], px[1], px[2]];
        match index.get(&c) {
            Some(&i) => distinct[i].1 += 1,
            None => {
                index.insert(c, distinct.len());
                distinct.push((c, 1));
            }
        }
    }
    if distinct.len() == 1 {
        let c = distinct[0].0;
        return TwoColor {
            texture: texture.clone(),
            colors: [c, c],
            degenerate: true,
        };
    }
    let points: Vec<[f64; 3]> = distinct.iter().map(|(c, _)| to_f(*c)).collect();
    let (i, j) = farthest_pair(&points);
    let mut centroids = [points[i], points[j]];
    let mut assign = vec![0usize; points.len()];
    for iteration in 0..MAX_ITERATIONS {
        let mut changed = iteration == 0;
        for (k, p) in points.iter().enumerate() {
            let a = usize::from(dist2(*p, centroids[1]) < dist2(*p, centroids[0]));
            changed |= assign[k] != a;
            assign[k] = a;
        }
        if !changed {
            break;
        }
        let mut sums = [[0.0f64; 3]; 2];
        let mut counts = [0usize; 2];
        for (k, p) in points.iter().enumerate() {
            let n = distinct[k].1;
            counts[assign[k]] += n;
            for c in 0..3 {
                sums[assign[k]][c] += p[c] * n as f64;
            }
        }
        for cl in 0..2 {
            if counts[cl] > 0 {
                centroids[cl] = sums[cl].map(|s| s / counts[cl] as f64);
            }
        }
    }
    let colors = [round_color(centroids[0]), round_color(centroids[1])];
    let mut rgb = Vec::with_capacity(texture.rgb().len());
    for px in texture.rgb().chunks_exact(3) {
        let k = index[&[px[0], px[1], px[2]]];
        rgb.extend_from_slice(&colors[assign[k]]);
    }
    TwoColor {
        texture: Texture::new(texture.width(), texture.height(), rgb).expect("same dimensions"),
        colors,
        degenerate: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn sse(original: &Texture, quantized: &Texture) -> f64 {
        original
            .rgb()
            .iter()
            .zip(quantized.rgb())
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum()
    }

    #[test]
    fn black_white_halves_unchanged() {
        let t = Texture::from_fn(8, 4, |x, _| if x < 4 { [0; 3] } else { [255; 3] });
        let q = quantize_two_color(&t);
        assert!(!q.degenerate);
        assert_eq!(q.colors, [[0; 3], [255; 3]]);
        assert_eq!(q.texture, t);
    }

    #[test]
    fn constant_is_degenerate() {
        let q = quantize_two_color(&Texture::filled(4, 4, [9, 8, 7]));
        assert!(q.degenerate);
        assert_eq!(q.colors, [[9, 8, 7]; 2]);
    }

    #[test]
    fn never_worse_than_one_color_and_near_exhaustive_optimum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let k = rng.random_range(2..=16);
            let palette: Vec<[u8; 3]> = (0..k).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
            let t = Texture::from_fn(12, 12, |_, _| palette[rng.random_range(0..k)]);
            let q = quantize_two_color(&t);
            let got = sse(&t, &q.texture);

            let n = 144.0;
            let mean = [0, 1, 2].map(|c| t.rgb().iter().skip(c).step_by(3).map(|&v| v as f64).sum::<f64>() / n);
            let single: f64 = t.rgb().chunks(3).map(|p| dist2(to_f([p[0], p[1], p[2]]), mean)).sum();
            assert!(got <= single + 1e-9, "{got} > {single}");

            // exhaustive over all bipartitions of the distinct colors
            let distinct: Vec<[u8; 3]> = {
                let mut d: Vec<_> = t.rgb().chunks(3).map(|p| [p[0], p[1], p[2]]).collect();
                d.sort();
                d.dedup();
                d
            };
            let mut best = f64::INFINITY;
            for mask in 1..(1u32 << distinct.len()) - 1 {
                let mut cost = 0.0;
                for side in [true, false] {
                    let members: Vec<[f64; 3]> = t
                        .rgb()
                        .chunks(3)
                        .filter(|p| {
                            let i = distinct.iter().position(|d| d == *p).unwrap();
                            (mask >> i & 1 == 1) == side
                        })
                        .map(|p| to_f([p[0], p[1], p[2]]))
                        .collect();
                    let m = members.len() as f64;
                    let c = [0, 1, 2].map(|i| members.iter().map(|p| p[i]).sum::<f64>() / m);
                    cost += members.iter().map(|p| dist2(*p, c)).sum::<f64>();
                }
                best = best.min(cost);
            }
            // rounding the centroids costs at most 0.75 per pixel
            assert!(got >= best - 1e-6);
        }
    }
}
