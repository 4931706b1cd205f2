//! Deterministic synthetic terrain: value-noise fBm heightmaps with textures
//! whose dependence on elevation is set by `correlation_strength`.

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fsutil::write_atomic;
use crate::geomorph::{extract_sketch, GeomorphError, SketchConfig, SketchRaster};
use crate::raster::io::{
    read_heightmap_png, read_sidecar, read_texture_png, write_heightmap_png, write_sidecar, write_texture_png,
    PairSidecar,
};
use crate::raster::{Grid, Heightmap, RasterError, Texture, DEFAULT_H_MAX};
use crate::seeding::{derive_seed, substream};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Geomorph(#[from] GeomorphError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub low: [u8; 3],
    pub high: [u8; 3],
    pub slope: [u8; 3],
}

impl Default for Palette {
    fn default() -> Self {
        Self {
            low: [70, 110, 50],
            high: [235, 235, 240],
            slope: [120, 100, 85],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub size_px: usize,
    pub octaves: u32,
    pub persistence: f64,
    /// Lattice cells across the map at the first octave.
    pub base_cells: usize,
    pub base_elevation_m: f64,
    pub elevation_scale_m: f64,
    pub resolution_m: f64,
    pub palette: Palette,
    pub correlation_strength: f64,
    /// Slope (m/m) at which the slope color fully replaces the base mix.
    pub slope_saturation: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            size_px: 64,
            octaves: 5,
            persistence: 0.5,
            base_cells: 4,
            base_elevation_m: 200.0,
            elevation_scale_m: 1500.0,
            resolution_m: 25.0,
            palette: Palette::default(),
            correlation_strength: 0.9,
            slope_saturation: 1.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.size_px < 16 {
            return bad("size_px must be at least 16");
        }
        if self.octaves == 0 {
            return bad("octaves must be at least 1");
        }
        if !(self.persistence > 0.0 && self.persistence < 1.0) {
            return bad("persistence must lie in (0, 1)");
        }
        if self.base_cells == 0 {
            return bad("base_cells must be positive");
        }
        if !(0.0..=1.0).contains(&self.correlation_strength) {
            return bad("correlation_strength must lie in [0, 1]");
        }
        if !(self.resolution_m > 0.0 && self.slope_saturation > 0.0 && self.elevation_scale_m >= 0.0) {
            return bad("resolution, slope saturation and elevation scale must be positive");
        }
        Ok(())
    }
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// One octave of value noise in [-1, 1] with `cells` lattice cells across.
fn value_noise(size: usize, cells: usize, rng: &mut impl Rng) -> Grid<f64> {
    let n = cells + 1;
    let lattice: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..=1.0)).collect();
    Grid::from_fn(size, size, |x, y| {
        let fx = (x as f64 + 0.5) * cells as f64 / size as f64;
        let fy = (y as f64 + 0.5) * cells as f64 / size as f64;
        let (ix, iy) = ((fx as usize).min(cells - 1), (fy as usize).min(cells - 1));
        let (tx, ty) = (smoothstep(fx - ix as f64), smoothstep(fy - iy as f64));
        let at = |i: usize, j: usize| lattice[j * n + i];
        let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
        let bottom = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    })
}

/// Sum of value-noise octaves, normalized by total amplitude, mapped to
/// `base + scale·(v + 1)/2` meters and clamped to `[0, 2000]`.
pub fn fbm_heightmap(cfg: &SynthConfig) -> Result<Heightmap, SynthError> {
    cfg.validate()?;
    let size = cfg.size_px;
    let mut sum = vec![0.0; size * size];
    let mut total = 0.0;
    let mut amp = 1.0;
    for o in 0..cfg.octaves {
        let cells = (cfg.base_cells << o).min(size);
        let mut rng = substream(cfg.seed, &format!("fbm/octave/{o}"));
        let layer = value_noise(size, cells, &mut rng);
        for (s, v) in sum.iter_mut().zip(layer.data()) {
            *s += amp * v;
        }
        total += amp;
        amp *= cfg.persistence;
    }
    let elevations = sum
        .iter()
        .map(|v| (cfg.base_elevation_m + cfg.elevation_scale_m * (v / total + 1.0) / 2.0).clamp(0.0, DEFAULT_H_MAX) as f32)
        .collect();
    Ok(Heightmap::new(size, size, elevations, cfg.resolution_m)?)
}

/// Central-difference slope magnitude in m/m.
fn slope_grid(hm: &Heightmap) -> Grid<f64> {
    let (w, h) = (hm.width(), hm.height());
    let r = hm.resolution_m();
    Grid::from_fn(w, h, |x, y| {
        let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
        let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
        let gx = (hm.get(x1, y) - hm.get(x0, y)) as f64 / ((x1 - x0) as f64 * r);
        let gy = (hm.get(x, y1) - hm.get(x, y0)) as f64 / ((y1 - y0) as f64 * r);
        gx.hypot(gy)
    })
}

/// Palette color by elevation, pulled toward the slope color on steep
/// ground, then mixed with per-pixel uniform noise by `1 − strength`.
pub fn correlated_texture(hm: &Heightmap, cfg: &SynthConfig) -> Result<Texture, SynthError> {
    cfg.validate()?;
    if hm.min_elevation() < 0.0 || hm.max_elevation() as f64 > DEFAULT_H_MAX {
        return Err(SynthError::Config("heightmap must lie within [0, 2000] m".into()));
    }
    let slope = slope_grid(hm);
    let mut rng = substream(cfg.seed, "texture/noise");
    let p = cfg.palette;
    let s = cfg.correlation_strength;
    Ok(Texture::from_fn(hm.width(), hm.height(), |x, y| {
        let e = hm.get(x, y) as f64 / DEFAULT_H_MAX;
        let k = (slope.get(x, y) / cfg.slope_saturation).min(1.0);
        let mut out = [0u8; 3];
        for c in 0..3 {
            let base = p.low[c] as f64 * (1.0 - e) + p.high[c] as f64 * e;
            let shaded = base * (1.0 - k) + p.slope[c] as f64 * k;
            let noise: f64 = rng.random_range(0.0..=255.0);
            out[c] = (s * shaded + (1.0 - s) * noise).round().clamp(0.0, 255.0) as u8;
        }
        out
    }))
}

/// Configuration of sample `index` within a dataset seeded by `cfg.seed`.
pub fn sample_config(cfg: &SynthConfig, index: usize) -> SynthConfig {
    SynthConfig {
        seed: derive_seed(cfg.seed, &format!("sample/{index}")),
        ..cfg.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub id: String,
    pub heightmap: Heightmap,
    pub texture: Texture,
    pub sketch: SketchRaster,
}

pub fn generate_pair(cfg: &SynthConfig, sketch: &SketchConfig, index: usize) -> Result<SyntheticPair, SynthError> {
    let sc = sample_config(cfg, index);
    let heightmap = fbm_heightmap(&sc)?;
    let texture = correlated_texture(&heightmap, &sc)?;
    let sketch = extract_sketch(&heightmap, sketch)?;
    Ok(SyntheticPair {
        id: format!("{index:05}"),
        heightmap,
        texture,
        sketch,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub heightmap: String,
    pub texture: String,
    pub sketch: String,
    pub sidecar: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub config: SynthConfig,
    pub sketch: SketchConfig,
    pub pairs: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `n` pairs under `dir`: `heightmaps/`, `textures/`, `sketches/`,
/// `meta/` and a top-level manifest.
pub fn build_synthetic_dataset(
    dir: &Path,
    n: usize,
    cfg: &SynthConfig,
    sketch: &SketchConfig,
) -> Result<DatasetManifest, SynthError> {
    cfg.validate()?;
    let pairs: Vec<SyntheticPair> = (0..n)
        .into_par_iter()
        .map(|i| generate_pair(cfg, sketch, i))
        .collect::<Result<_, _>>()?;
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(n);
    for p in &pairs {
        let e = ManifestEntry {
            id: p.id.clone(),
            heightmap: format!("heightmaps/{}.png", p.id),
            texture: format!("textures/{}.png", p.id),
            sketch: format!("sketches/{}.png", p.id),
            sidecar: format!("meta/{}.json", p.id),
        };
        write_heightmap_png(&dir.join(&e.heightmap), &p.heightmap)?;
        write_texture_png(&dir.join(&e.texture), &p.texture)?;
        write_texture_png(&dir.join(&e.sketch), p.sketch.texture())?;
        write_sidecar(
            &dir.join(&e.sidecar),
            &PairSidecar {
                resolution_m: p.heightmap.resolution_m(),
                source_id: format!("synthetic:{}:{}", cfg.seed, p.id),
                max_elevation_m: p.heightmap.max_elevation() as f64,
            },
        )?;
        entries.push(e);
    }
    let manifest = DatasetManifest {
        format_version: 1,
        config: cfg.clone(),
        sketch: *sketch,
        pairs: entries,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write_atomic(&dir.join(MANIFEST_FILE), &json)?;
    Ok(manifest)
}

/// A dataset pair read back from disk. Heightmaps come back in whole meters.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedPair {
    pub id: String,
    pub heightmap: Heightmap,
    pub texture: Texture,
    pub sketch: Texture,
}

pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<LoadedPair>), SynthError> {
    let manifest: DatasetManifest = serde_json::from_slice(&std::fs::read(dir.join(MANIFEST_FILE))?)?;
    let path = |rel: &str| -> PathBuf { dir.join(rel) };
    let pairs = manifest
        .pairs
        .iter()
        .map(|e| {
            let side = read_sidecar(&path(&e.sidecar))?;
            Ok(LoadedPair {
                id: e.id.clone(),
                heightmap: read_heightmap_png(&path(&e.heightmap), side.resolution_m)?,
                texture: read_texture_png(&path(&e.texture))?,
                sketch: read_texture_png(&path(&e.sketch))?,
            })
        })
        .collect::<Result<Vec<_>, SynthError>>()?;
    Ok((manifest, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_map() {
        let cfg = SynthConfig::default();
        assert_eq!(fbm_heightmap(&cfg).unwrap(), fbm_heightmap(&cfg).unwrap());
        let other = SynthConfig { seed: 1, ..cfg.clone() };
        assert_ne!(fbm_heightmap(&cfg).unwrap(), fbm_heightmap(&other).unwrap());
    }

    #[test]
    fn elevations_within_range() {
        let cfg = SynthConfig {
            base_elevation_m: 1500.0,
            elevation_scale_m: 1500.0,
            ..SynthConfig::default()
        };
        let hm = fbm_heightmap(&cfg).unwrap();
        assert!(hm.min_elevation() >= 0.0 && hm.max_elevation() <= 2000.0);
    }

    #[test]
    fn rejects_bad_config() {
        for cfg in [
            SynthConfig { size_px: 8, ..SynthConfig::default() },
            SynthConfig { octaves: 0, ..SynthConfig::default() },
            SynthConfig { persistence: 1.0, ..SynthConfig::default() },
            SynthConfig { correlation_strength: 1.5, ..SynthConfig::default() },
        ] {
            assert!(fbm_heightmap(&cfg).is_err());
        }
    }

    #[test]
    fn texture_deterministic() {
        let cfg = SynthConfig::default();
        let hm = fbm_heightmap(&cfg).unwrap();
        assert_eq!(correlated_texture(&hm, &cfg).unwrap(), correlated_texture(&hm, &cfg).unwrap());
    }
}
