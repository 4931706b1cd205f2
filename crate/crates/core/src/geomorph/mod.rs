//! Sketch extraction from heightmaps: depression filling, D8 flow
//! accumulation, valley and ridge thresholding, Canny cliffs and the RGB
//! composite (red valleys, green ridges, blue cliffs).

mod canny;
mod fill;
mod flow;

use serde::{Deserialize, Serialize};

pub use canny::canny_grid;
pub use fill::{fill_depressions, fill_grid, FILL_EPSILON_M};
pub use flow::{accumulate, d8_directions, flow_accumulation_d8, AccumulationGrid, Direction, FlowField};

use crate::raster::{Grid, Heightmap, RasterError, Texture};

#[derive(Debug, thiserror::Error)]
pub enum GeomorphError {
    #[error("flow graph has a cycle through {cells} cells")]
    FlowCycle { cells: usize },
    #[error("percentile {0} outside (0, 100)")]
    Percentile(f64),
    #[error("canny thresholds need 0 < low < high, got low={low} high={high}")]
    CannyThresholds { low: f64, high: f64 },
    #[error("mask dimensions differ: {0}")]
    Dimensions(String),
    #[error("sketch pixel ({x}, {y}) is not a pure channel color")]
    NotBinary { x: usize, y: usize },
    #[error(transparent)]
    Raster(#[from] RasterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelMode {
    Valley,
    Ridge,
}

/// Thresholds for the full extraction pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SketchConfig {
    pub valley_percentile: f64,
    pub ridge_percentile: f64,
    pub canny_sigma: f64,
    pub canny_low: f64,
    pub canny_high: f64,
}

impl Default for SketchConfig {
    fn default() -> Self {
        Self {
            valley_percentile: 98.0,
            ridge_percentile: 98.0,
            canny_sigma: 1.4,
            canny_low: 0.1,
            canny_high: 0.2,
        }
    }
}

/// Linear-interpolation quantile (`p` in [0, 1]) of unsorted values.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Pixels whose accumulation reaches the given percentile.
pub fn extract_channels(dem: &Grid<f64>, mode: ChannelMode, percentile: f64) -> Result<Grid<bool>, GeomorphError> {
    if !(percentile > 0.0 && percentile < 100.0) {
        return Err(GeomorphError::Percentile(percentile));
    }
    let (lo, hi) = dem
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi <= lo {
        log::warn!("constant heightmap has no channels");
        return Ok(Grid::filled(dem.width(), dem.height(), false));
    }
    let surface = match mode {
        ChannelMode::Valley => dem.clone(),
        ChannelMode::Ridge => dem.map(|v| hi - v),
    };
    let filled = fill_grid(&surface, FILL_EPSILON_M);
    let (_, acc) = flow_accumulation_d8(&filled)?;
    let values: Vec<f64> = acc.data().iter().map(|&a| a as f64).collect();
    let threshold = quantile(&values, percentile / 100.0);
    Ok(acc.map(|a| a as f64 >= threshold))
}

pub fn canny_cliffs(hm: &Heightmap, sigma: f64, low: f64, high: f64) -> Result<Grid<bool>, GeomorphError> {
    if !(low > 0.0 && low < high) {
        return Err(GeomorphError::CannyThresholds { low, high });
    }
    Ok(canny_grid(&hm.to_f64(), sigma, low, high))
}

/// Three-channel binary line image: red valleys, green ridges, blue cliffs.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchRaster {
    texture: Texture,
}

impl SketchRaster {
    /// Accepts only images whose channels are each 0 or 255.
    pub fn from_texture(texture: Texture) -> Result<Self, GeomorphError> {
        for y in 0..texture.height() {
            for x in 0..texture.width() {
                if texture.pixel(x, y).iter().any(|&c| c != 0 && c != 255) {
                    return Err(GeomorphError::NotBinary { x, y });
                }
            }
        }
        Ok(Self { texture })
    }

    pub fn texture(&self) -> &Texture {
        &self.texture
    }

    pub fn into_texture(self) -> Texture {
        self.texture
    }

    pub fn width(&self) -> usize {
        self.texture.width()
    }

    pub fn height(&self) -> usize {
        self.texture.height()
    }

    /// Channel `c` (0 valley, 1 ridge, 2 cliff) as a mask.
    pub fn mask(&self, c: usize) -> Grid<bool> {
        Grid::from_fn(self.width(), self.height(), |x, y| self.texture.pixel(x, y)[c] == 255)
    }
}

pub fn compose_sketch(valley: &Grid<bool>, ridge: &Grid<bool>, cliff: &Grid<bool>) -> Result<SketchRaster, GeomorphError> {
    let (w, h) = (valley.width(), valley.height());
    for (name, m) in [("ridge", ridge), ("cliff", cliff)] {
        if m.width() != w || m.height() != h {
            return Err(GeomorphError::Dimensions(format!(
                "valley {w}x{h}, {name} {}x{}",
                m.width(),
                m.height()
            )));
        }
    }
    let on = |b: bool| if b { 255 } else { 0 };
    let texture = Texture::from_fn(w, h, |x, y| [on(valley.get(x, y)), on(ridge.get(x, y)), on(cliff.get(x, y))]);
    Ok(SketchRaster { texture })
}

/// Full pipeline from a heightmap to its sketch.
pub fn extract_sketch(hm: &Heightmap, cfg: &SketchConfig) -> Result<SketchRaster, GeomorphError> {
    let dem = hm.to_f64();
    let valley = extract_channels(&dem, ChannelMode::Valley, cfg.valley_percentile)?;
    let ridge = extract_channels(&dem, ChannelMode::Ridge, cfg.ridge_percentile)?;
    let cliff = canny_cliffs(hm, cfg.canny_sigma, cfg.canny_low, cfg.canny_high)?;
    compose_sketch(&valley, &ridge, &cliff)
}
