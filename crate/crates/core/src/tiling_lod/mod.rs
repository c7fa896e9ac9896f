//! Morton tiling, LoD schedules and the tiled container.
//!
//! A frame's Gaussians are sorted along a Z-order curve over a
//! `2^grid_bits` grid spanning the frame's bounding box, then cut into runs
//! of at most `tile_size`. Each tile carries its positions losslessly and
//! one payload per LoD level, so a receiver can stop at any level of any
//! tile.

pub mod codec;
pub mod container;
pub mod schedule;

use thiserror::Error;

pub use codec::{codec_by_name, Deflate, Identity, LosslessCodec};
pub use container::{
    assemble_container, decode_container, decode_tile, encode_items, Manifest, TileManifest, TilePayload, TiledLodContainer,
    DEFAULT_CODEBOOK_NAME,
};
pub use schedule::{LayerRef, LodSchedule};

use crate::svq::SvqError;

pub const DEFAULT_GRID_BITS: u32 = 10;

#[derive(Debug, Error)]
pub enum TilingError {
    #[error("gaussian {id} has a non-finite position")]
    NonFinite { id: u32 },
    #[error("grid_bits {0} outside 1..=21")]
    GridBits(u32),
    #[error("tile_size must be at least 1")]
    TileSize,
    #[error("schedule: {0}")]
    Schedule(String),
    #[error("tile {tile}, lod {lod}: {reason}")]
    Payload { tile: u32, lod: usize, reason: String },
    #[error("container: {0}")]
    Format(String),
    #[error(transparent)]
    Svq(#[from] SvqError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TilingError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Aabb {
    pub min: [f32; 3],
    pub max: [f32; 3],
}

impl Aabb {
    pub fn of(points: impl IntoIterator<Item = [f32; 3]>) -> Self {
        let mut b = Aabb { min: [f32::INFINITY; 3], max: [f32::NEG_INFINITY; 3] };
        for p in points {
            for k in 0..3 {
                b.min[k] = b.min[k].min(p[k]);
                b.max[k] = b.max[k].max(p[k]);
            }
        }
        b
    }

    pub fn contains(&self, p: [f32; 3]) -> bool {
        (0..3).all(|k| self.min[k] <= p[k] && p[k] <= self.max[k])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub tile_id: u32,
    /// Gaussian ids in Morton order.
    pub gaussian_ids: Vec<u32>,
    /// Positions of the members within the encoded item list.
    pub members: Vec<usize>,
    pub bbox: Aabb,
}

/// Spreads the low 21 bits of `v` so there are two zero bits between each.
fn spread3(v: u64) -> u64 {
    let mut x = v & 0x1f_ffff;
    x = (x | x << 32) & 0x001f_0000_0000_ffff;
    x = (x | x << 16) & 0x001f_0000_ff00_00ff;
    x = (x | x << 8) & 0x100f_00f0_0f00_f00f;
    x = (x | x << 4) & 0x10c3_0c30_c30c_30c3;
    x = (x | x << 2) & 0x1249_2492_4924_9249;
    x
}

/// Morton code of a grid cell, x in the least significant bit.
pub fn interleave(x: u32, y: u32, z: u32) -> u64 {
    spread3(x as u64) | spread3(y as u64) << 1 | spread3(z as u64) << 2
}

/// Codes of `positions` normalized to their bounding box and discretized to
/// `2^grid_bits` cells per axis. `ids` only label errors.
pub fn morton_codes(positions: &[[f32; 3]], ids: &[u32], grid_bits: u32) -> Result<Vec<u64>> {
    if !(1..=21).contains(&grid_bits) {
        return Err(TilingError::GridBits(grid_bits));
    }
    if let Some(i) = positions.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(TilingError::NonFinite { id: ids.get(i).copied().unwrap_or(i as u32) });
    }
    let bbox = Aabb::of(positions.iter().copied());
    let cells = (1u64 << grid_bits) as f64;
    let max_cell = (1u32 << grid_bits) - 1;
    Ok(positions
        .iter()
        .map(|p| {
            let q = |k: usize| {
                let ext = (bbox.max[k] - bbox.min[k]) as f64;
                if ext <= 0.0 {
                    return 0;
                }
                let t = (p[k] - bbox.min[k]) as f64 / ext;
                ((t * cells) as u32).min(max_cell)
            };
            interleave(q(0), q(1), q(2))
        })
        .collect())
}

/// Stable sort order of positions by Morton code.
pub fn morton_sort(positions: &[[f32; 3]], ids: &[u32], grid_bits: u32) -> Result<Vec<usize>> {
    let codes = morton_codes(positions, ids, grid_bits)?;
    let mut perm: Vec<usize> = (0..positions.len()).collect();
    perm.sort_by_key(|&i| codes[i]);
    Ok(perm)
}

/// Consecutive runs of `perm` of length `tile_size`; the last may be short.
pub fn make_tiles(positions: &[[f32; 3]], ids: &[u32], perm: &[usize], tile_size: usize) -> Result<Vec<Tile>> {
    if tile_size == 0 {
        return Err(TilingError::TileSize);
    }
    Ok(perm
        .chunks(tile_size)
        .enumerate()
        .map(|(t, run)| Tile {
            tile_id: t as u32,
            gaussian_ids: run.iter().map(|&i| ids[i]).collect(),
            members: run.to_vec(),
            bbox: Aabb::of(run.iter().map(|&i| positions[i])),
        })
        .collect())
}
