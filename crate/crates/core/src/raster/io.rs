//! On-disk raster formats: 16-bit grayscale PNG heightmaps holding whole
//! meters, 8-bit RGB PNG textures and sketches, and a JSON sidecar per pair.

use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Grid, Heightmap, RasterError, Texture, DEFAULT_H_MAX};
use crate::fsutil::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSidecar {
    pub resolution_m: f64,
    pub source_id: String,
    pub max_elevation_m: f64,
}

fn encode(width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Result<Vec<u8>, RasterError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc.write_header()?;
        writer.write_image_data(data)?;
        writer.finish()?;
    }
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<(png::OutputInfo, Vec<u8>), RasterError> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| RasterError::PngLayout("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

/// Encodes elevations rounded to whole meters in `[0, 2000]`.
pub fn heightmap_to_png16(hm: &Heightmap) -> Result<Vec<u8>, RasterError> {
    let mut data = Vec::with_capacity(hm.elevations().len() * 2);
    for &h in hm.elevations() {
        let v = (h as f64).round().clamp(0.0, DEFAULT_H_MAX) as u16;
        data.extend_from_slice(&v.to_be_bytes());
    }
    encode(hm.width(), hm.height(), png::ColorType::Grayscale, png::BitDepth::Sixteen, &data)
}

pub fn heightmap_from_png16(bytes: &[u8], resolution_m: f64) -> Result<Heightmap, RasterError> {
    let (info, buf) = decode(bytes)?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(RasterError::PngLayout(format!(
            "heightmap must be 16-bit grayscale, got {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let data = buf
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as f32)
        .collect();
    Heightmap::from_grid(Grid::new(info.width as usize, info.height as usize, data)?, resolution_m)
}

pub fn texture_to_png(t: &Texture) -> Result<Vec<u8>, RasterError> {
    encode(t.width(), t.height(), png::ColorType::Rgb, png::BitDepth::Eight, t.rgb())
}

/// Decodes 8-bit RGB (alpha, if present, is dropped).
pub fn texture_from_png(bytes: &[u8]) -> Result<Texture, RasterError> {
    let (info, buf) = decode(bytes)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(RasterError::PngLayout(format!("expected 8-bit RGB, got {:?}", info.bit_depth)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let rgb = match info.color_type {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        other => return Err(RasterError::PngLayout(format!("expected RGB, got {other:?}"))),
    };
    Texture::new(w, h, rgb)
}

pub fn write_heightmap_png(path: &Path, hm: &Heightmap) -> Result<(), RasterError> {
    Ok(write_atomic(path, &heightmap_to_png16(hm)?)?)
}

pub fn read_heightmap_png(path: &Path, resolution_m: f64) -> Result<Heightmap, RasterError> {
    heightmap_from_png16(&std::fs::read(path)?, resolution_m)
}

pub fn write_texture_png(path: &Path, t: &Texture) -> Result<(), RasterError> {
    Ok(write_atomic(path, &texture_to_png(t)?)?)
}

pub fn read_texture_png(path: &Path) -> Result<Texture, RasterError> {
    texture_from_png(&std::fs::read(path)?)
}

pub fn write_sidecar(path: &Path, sidecar: &PairSidecar) -> Result<(), RasterError> {
    let mut json = serde_json::to_vec_pretty(sidecar)?;
    json.push(b'\n');
    Ok(write_atomic(path, &json)?)
}

pub fn read_sidecar(path: &Path) -> Result<PairSidecar, RasterError> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

/// Heightmap/texture pairs stored as `heightmaps/{id}.png`,
/// `textures/{id}.png` and `meta/{id}.json` under one directory.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredPair {
    pub id: String,
    pub heightmap: Heightmap,
    pub texture: Texture,
}

/// Writes every pair; `source` prefixes each sidecar's `source_id`.
pub fn write_pair_dir(dir: &Path, pairs: &[StoredPair], source: &str) -> Result<(), RasterError> {
    for p in pairs {
        write_heightmap_png(&dir.join(format!("heightmaps/{}.png", p.id)), &p.heightmap)?;
        write_texture_png(&dir.join(format!("textures/{}.png", p.id)), &p.texture)?;
        write_sidecar(
            &dir.join(format!("meta/{}.json", p.id)),
            &PairSidecar {
                resolution_m: p.heightmap.resolution_m(),
                source_id: format!("{source}:{}", p.id),
                max_elevation_m: p.heightmap.max_elevation() as f64,
            },
        )?;
    }
    Ok(())
}

/// Reads every `heightmaps/*.png` with its texture and sidecar, sorted by id.
pub fn read_pair_dir(dir: &Path) -> Result<Vec<StoredPair>, RasterError> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir.join("heightmaps"))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "png") {
            if let Some(stem) = path.file_stem() {
                ids.push(stem.to_string_lossy().into_owned());
            }
        }
    }
    ids.sort();
    ids.into_iter()
        .map(|id| {
            let side = read_sidecar(&dir.join(format!("meta/{id}.json")))?;
            Ok(StoredPair {
                heightmap: read_heightmap_png(&dir.join(format!("heightmaps/{id}.png")), side.resolution_m)?,
                texture: read_texture_png(&dir.join(format!("textures/{id}.png")))?,
                id,
            })
        })
        .collect()
}
