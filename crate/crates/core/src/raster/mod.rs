//! Heightmap/texture rasters, DEM ingestion and dataset preparation.

mod filter;
mod hgt;
pub mod io;
mod quantize;
mod resample;

pub use filter::{
    apply_category_cap, elevation_filter, region_filter, Climate, Landcover, RegionDecision, RegionMetadata,
    RejectReason, CATEGORY_CAP, HUMAN_MODIFICATION_LIMIT, MIN_MEAN_ELEVATION_M,
};
pub use hgt::{parse_hgt, write_hgt, DemTile, HGT_SIDE, HGT_VOID};
pub use quantize::{quantize_two_color, TwoColor};
pub use resample::{extract_patches, resample_bilinear, upsample_patch, PatchPair};

/// Elevation ceiling used for the `[-1, 1]` mapping of heightmaps.
pub const DEFAULT_H_MAX: f64 = 2000.0;

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("invalid dimensions: {0}")]
    Dimensions(String),
    #[error("HGT tile has {0} bytes, expected {expected}", expected = 2 * HGT_SIDE * HGT_SIDE)]
    HgtLength(usize),
    #[error("HGT tile contains only void samples")]
    AllVoid,
    #[error("elevation {value} m at index {index} outside [0, {h_max}]")]
    ElevationRange { value: f64, index: usize, h_max: f64 },
    #[error("non-finite elevation at index {0}")]
    NonFinite(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("PNG decode: {0}")]
    PngDecode(#[from] png::DecodingError),
    #[error("PNG encode: {0}")]
    PngEncode(#[from] png::EncodingError),
    #[error("unsupported PNG layout: {0}")]
    PngLayout(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Row-major 2-d grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(RasterError::Dimensions(format!(
                "{width}x{height} grid with {} values",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Sub-rectangle starting at `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self, RasterError> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(RasterError::Dimensions(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(Self { width: w, height: h, data })
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }
}

/// Elevation grid in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Heightmap {
    grid: Grid<f32>,
    /// Ground distance between adjacent samples, meters.
    resolution_m: f64,
}

impl Heightmap {
    pub fn new(width: usize, height: usize, elevations: Vec<f32>, resolution_m: f64) -> Result<Self, RasterError> {
        Self::from_grid(Grid::new(width, height, elevations)?, resolution_m)
    }

    pub fn from_grid(grid: Grid<f32>, resolution_m: f64) -> Result<Self, RasterError> {
        if grid.width < 2 || grid.height < 2 {
            return Err(RasterError::Dimensions(format!(
                "heightmap must be at least 2x2, got {}x{}",
                grid.width, grid.height
            )));
        }
        if !(resolution_m > 0.0 && resolution_m.is_finite()) {
            return Err(RasterError::InvalidArgument(format!("resolution {resolution_m} m")));
        }
        if let Some(i) = grid.data.iter().position(|v| !v.is_finite()) {
            return Err(RasterError::NonFinite(i));
        }
        Ok(Self { grid, resolution_m })
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn resolution_m(&self) -> f64 {
        self.resolution_m
    }

    pub fn grid(&self) -> &Grid<f32> {
        &self.grid
    }

    pub fn elevations(&self) -> &[f32] {
        &self.grid.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.grid.get(x, y)
    }

    pub fn max_elevation(&self) -> f32 {
        self.grid.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn min_elevation(&self) -> f32 {
        self.grid.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn mean_elevation(&self) -> f64 {
        self.grid.data.iter().map(|&v| v as f64).sum::<f64>() / self.grid.len() as f64
    }

    pub fn to_f64(&self) -> Grid<f64> {
        self.grid.map(|v| v as f64)
    }
}

/// 8-bit RGB image, interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Texture {
    width: usize,
    height: usize,
    rgb: Vec<u8>,
}

impl Texture {
    pub fn new(width: usize, height: usize, rgb: Vec<u8>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 || rgb.len() != width * height * 3 {
            return Err(RasterError::Dimensions(format!(
                "{width}x{height} RGB texture with {} bytes",
                rgb.len()
            )));
        }
        Ok(Self { width, height, rgb })
    }

    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        Self {
            width,
            height,
            rgb: color.iter().copied().cycle().take(width * height * 3).collect(),
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut rgb = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                rgb.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, rgb }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn rgb(&self) -> &[u8] {
        &self.rgb
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, c: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.rgb[i..i + 3].copy_from_slice(&c);
    }

    /// One channel as a float grid.
    pub fn channel(&self, c: usize) -> Grid<f64> {
        Grid::from_fn(self.width, self.height, |x, y| self.pixel(x, y)[c] as f64)
    }

    pub fn same_dims(&self, hm: &Heightmap) -> bool {
        self.width == hm.width() && self.height == hm.height()
    }

    /// Channel-planar values mapped to `[-1, 1]` by `v / 127.5 − 1`.
    pub fn to_unit_planes(&self) -> Vec<f32> {
        let n = self.width * self.height;
        let mut out = vec![0.0; 3 * n];
        for i in 0..n {
            for c in 0..3 {
                out[c * n + i] = self.rgb[i * 3 + c] as f32 / 127.5 - 1.0;
            }
        }
        out
    }

    /// Inverse of [`Texture::to_unit_planes`], clamping and rounding.
    pub fn from_unit_planes(width: usize, height: usize, planes: &[f32]) -> Result<Self, RasterError> {
        let n = width * height;
        if planes.len() != 3 * n {
            return Err(RasterError::Dimensions(format!(
                "{} planar values for {width}x{height}x3",
                planes.len()
            )));
        }
        let mut rgb = vec![0u8; 3 * n];
        for i in 0..n {
            for c in 0..3 {
                let v = ((planes[c * n + i].clamp(-1.0, 1.0) + 1.0) * 127.5).round();
                rgb[i * 3 + c] = v as u8;
            }
        }
        Self::new(width, height, rgb)
    }
}

/// Height normalization ceiling `H_max`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormalizationSpec {
    pub h_max: f64,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        Self { h_max: DEFAULT_H_MAX }
    }
}

impl NormalizationSpec {
    pub fn new(h_max: f64) -> Result<Self, RasterError> {
        if !(h_max > 0.0 && h_max.is_finite()) {
            return Err(RasterError::InvalidArgument(format!("H_max {h_max} must be positive")));
        }
        Ok(Self { h_max })
    }

    pub fn normalize_value(&self, h: f64) -> f64 {
        (h / self.h_max - 0.5) * 2.0
    }

    pub fn denormalize_value(&self, v: f64) -> f64 {
        (v / 2.0 + 0.5) * self.h_max
    }
}

/// Maps elevations in `[0, H_max]` to `[-1, 1]`.
pub fn normalize_height(hm: &Heightmap, spec: &NormalizationSpec) -> Result<Vec<f32>, RasterError> {
    hm.elevations()
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            let h = h as f64;
            if !(0.0..=spec.h_max).contains(&h) {
                return Err(RasterError::ElevationRange {
                    value: h,
                    index: i,
                    h_max: spec.h_max,
                });
            }
            Ok(spec.normalize_value(h) as f32)
        })
        .collect()
}

/// Inverse of [`normalize_height`].
pub fn denormalize_height(
    values: &[f32],
    width: usize,
    height: usize,
    resolution_m: f64,
    spec: &NormalizationSpec,
) -> Result<Heightmap, RasterError> {
    let data = values
        .iter()
        .map(|&v| spec.denormalize_value(v as f64) as f32)
        .collect();
    Heightmap::new(width, height, data, resolution_m)
}
