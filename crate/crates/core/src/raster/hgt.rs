//! 1 arc-second HGT tiles: 3601×3601 big-endian `i16` samples, row-major
//! from the northwest corner.

use super::{Grid, Heightmap, RasterError};

pub const HGT_SIDE: usize = 3601;
pub const HGT_VOID: i16 = -32768;
/// Nominal ground spacing of a 1 arc-second sample.
pub const HGT_RESOLUTION_M: f64 = 30.0;

/// Decoded tile. Void samples read as 0 m in the heightmap and are flagged
/// in `void_mask`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemTile {
    pub heightmap: Heightmap,
    pub void_mask: Grid<bool>,
}

impl DemTile {
    pub fn void_count(&self) -> usize {
        self.void_mask.data().iter().filter(|&&v| v).count()
    }
}

pub fn parse_hgt(bytes: &[u8]) -> Result<DemTile, RasterError> {
    if bytes.len() != 2 * HGT_SIDE * HGT_SIDE {
        return Err(RasterError::HgtLength(bytes.len()));
    }
    let mut elevations = Vec::with_capacity(HGT_SIDE * HGT_SIDE);
    let mut voids = Vec::with_capacity(HGT_SIDE * HGT_SIDE);
    for pair in bytes.chunks_exact(2) {
        let v = i16::from_be_bytes([pair[0], pair[1]]);
        let void = v == HGT_VOID;
        voids.push(void);
        elevations.push(if void { 0.0 } else { v as f32 });
    }
    if voids.iter().all(|&v| v) {
        return Err(RasterError::AllVoid);
    }
    Ok(DemTile {
        heightmap: Heightmap::new(HGT_SIDE, HGT_SIDE, elevations, HGT_RESOLUTION_M)?,
        void_mask: Grid::new(HGT_SIDE, HGT_SIDE, voids)?,
    })
}

/// Encodes a tile; elevations are rounded to whole meters.
pub fn write_hgt(tile: &DemTile) -> Result<Vec<u8>, RasterError> {
    let hm = &tile.heightmap;
    if hm.width() != HGT_SIDE || hm.height() != HGT_SIDE {
        return Err(RasterError::Dimensions(format!(
            "HGT tiles are {HGT_SIDE}x{HGT_SIDE}, got {}x{}",
            hm.width(),
            hm.height()
        )));
    }
    let mut out = Vec::with_capacity(2 * HGT_SIDE * HGT_SIDE);
    for (&h, &void) in hm.elevations().iter().zip(tile.void_mask.data()) {
        let v = if void {
            HGT_VOID
        } else {
            (h.round() as i32).clamp(i16::MIN as i32 + 1, i16::MAX as i32) as i16
        };
        out.extend_from_slice(&v.to_be_bytes());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tile_bytes(f: impl Fn(usize) -> i16) -> Vec<u8> {
        (0..HGT_SIDE * HGT_SIDE).flat_map(|i| f(i).to_be_bytes()).collect()
    }

    #[test]
    fn expected_length() {
        assert_eq!(2 * HGT_SIDE * HGT_SIDE, 25_934_402);
        assert!(matches!(parse_hgt(&[0u8; 10]), Err(RasterError::HgtLength(10))));
    }

    #[test]
    fn big_endian_first_sample() {
        let mut bytes = tile_bytes(|_| 0);
        bytes[0] = 0x00;
        bytes[1] = 0x64;
        let tile = parse_hgt(&bytes).unwrap();
        assert_eq!(tile.heightmap.get(0, 0), 100.0);
    }

    #[test]
    fn voids_reported_and_all_void_rejected() {
        let tile = parse_hgt(&tile_bytes(|i| if i % 7 == 0 { HGT_VOID } else { 12 })).unwrap();
        assert!(tile.void_mask.get(0, 0));
        assert!(!tile.void_mask.get(1, 0));
        assert_eq!(tile.void_count(), (HGT_SIDE * HGT_SIDE).div_ceil(7));
        assert!(matches!(parse_hgt(&tile_bytes(|_| HGT_VOID)), Err(RasterError::AllVoid)));
    }

    #[test]
    fn write_parse_round_trip() {
        let bytes = tile_bytes(|i| if i == 5 { HGT_VOID } else { ((i * 37) % 4000) as i16 - 100 });
        let tile = parse_hgt(&bytes).unwrap();
        assert_eq!(write_hgt(&tile).unwrap(), bytes);
        assert_eq!(parse_hgt(&write_hgt(&tile).unwrap()).unwrap(), tile);
    }
}
