use super::{Grid, Heightmap, RasterError, Texture};

/// Source coordinate of output sample `i` under pixel-centre alignment.
fn source_coord(i: usize, n_in: usize, n_out: usize) -> (usize, usize, f64) {
    let s = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(n_in - 1);
    (i0, i1, s - i0 as f64)
}

/// Bilinear resize of a float grid.
pub fn resize_bilinear(src: &Grid<f64>, out_w: usize, out_h: usize) -> Grid<f64> {
    let xs: Vec<_> = (0..out_w).map(|x| source_coord(x, src.width(), out_w)).collect();
    let ys: Vec<_> = (0..out_h).map(|y| source_coord(y, src.height(), out_h)).collect();
    Grid::from_fn(out_w, out_h, |x, y| {
        let (x0, x1, fx) = xs[x];
        let (y0, y1, fy) = ys[y];
        let top = src.get(x0, y0) * (1.0 - fx) + src.get(x1, y0) * fx;
        let bottom = src.get(x0, y1) * (1.0 - fx) + src.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

fn resize_heightmap(hm: &Heightmap, out_w: usize, out_h: usize) -> Result<Heightmap, RasterError> {
    if out_w < 2 || out_h < 2 {
        return Err(RasterError::Dimensions(format!("resampled size {out_w}x{out_h} below 2x2")));
    }
    if out_w == hm.width() && out_h == hm.height() {
        return Ok(hm.clone());
    }
    let g = resize_bilinear(&hm.to_f64(), out_w, out_h).map(|v| v as f32);
    let resolution = hm.resolution_m() * hm.width() as f64 / out_w as f64;
    Heightmap::from_grid(g, resolution)
}

fn resize_texture(t: &Texture, out_w: usize, out_h: usize) -> Texture {
    if out_w == t.width() && out_h == t.height() {
        return t.clone();
    }
    let planes: Vec<Grid<f64>> = (0..3).map(|c| resize_bilinear(&t.channel(c), out_w, out_h)).collect();
    Texture::from_fn(out_w, out_h, |x, y| {
        let px = |c: usize| planes[c].get(x, y).round().clamp(0.0, 255.0) as u8;
        [px(0), px(1), px(2)]
    })
}

/// Resamples to a new ground resolution, keeping the covered extent.
pub fn resample_bilinear(hm: &Heightmap, target_resolution_m: f64) -> Result<Heightmap, RasterError> {
    if !(target_resolution_m > 0.0 && target_resolution_m.is_finite()) {
        return Err(RasterError::InvalidArgument(format!(
            "target resolution {target_resolution_m} m"
        )));
    }
    let scale = hm.resolution_m() / target_resolution_m;
    let out_w = (hm.width() as f64 * scale).round() as usize;
    let out_h = (hm.height() as f64 * scale).round() as usize;
    let mut out = resize_heightmap(hm, out_w, out_h)?;
    if out_w == hm.width() && out_h == hm.height() {
        out = Heightmap::from_grid(out.grid().clone(), target_resolution_m)?;
    }
    Ok(out)
}

/// Spatially aligned heightmap/texture pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub heightmap: Heightmap,
    pub texture: Texture,
}

/// Non-overlapping row-major tiling; partial tiles at the right and bottom
/// edges are dropped.
pub fn extract_patches(hm: &Heightmap, texture: &Texture, patch_px: usize) -> Result<Vec<PatchPair>, RasterError> {
    if !texture.same_dims(hm) {
        return Err(RasterError::Dimensions(format!(
            "heightmap {}x{} vs texture {}x{}",
            hm.width(),
            hm.height(),
            texture.width(),
            texture.height()
        )));
    }
    if patch_px < 2 || hm.width() < patch_px || hm.height() < patch_px {
        return Err(RasterError::Dimensions(format!(
            "{}x{} grid smaller than one {patch_px}px patch",
            hm.width(),
            hm.height()
        )));
    }
    let (nx, ny) = (hm.width() / patch_px, hm.height() / patch_px);
    let mut out = Vec::with_capacity(nx * ny);
    for py in 0..ny {
        for px in 0..nx {
            let (x0, y0) = (px * patch_px, py * patch_px);
            let g = hm.grid().crop(x0, y0, patch_px, patch_px)?;
            let tex = Texture::from_fn(patch_px, patch_px, |x, y| texture.pixel(x0 + x, y0 + y));
            out.push(PatchPair {
                heightmap: Heightmap::from_grid(g, hm.resolution_m())?,
                texture: tex,
            });
        }
    }
    Ok(out)
}

/// Bilinear upsampling of both members of a pair to `out_px` square.
pub fn upsample_patch(pair: &PatchPair, out_px: usize) -> Result<PatchPair, RasterError> {
    Ok(PatchPair {
        heightmap: resize_heightmap(&pair.heightmap, out_px, out_px)?,
        texture: resize_texture(&pair.texture, out_px, out_px),
    })
}
