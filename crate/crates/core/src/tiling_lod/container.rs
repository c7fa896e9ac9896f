//! Tiled LoD container assembly, decoding and file format.
//!
//! File layout (little-endian):
//!
//! | field            | type                         |
//! |------------------|------------------------------|
//! | magic            | `"GSVC"`                     |
//! | version          | `u32` = 1                    |
//! | manifest length  | `u32`                        |
//! | manifest         | UTF-8 JSON ([`Manifest`])    |
//! | payloads         | per tile in `tile_id` order: position payload, then LoD payloads 0.. |
//!
//! Payload sizes are listed in the manifest. Every payload is compressed
//! independently with the manifest's codec. Uncompressed contents:
//!
//! * position payload: `u32 count`, `count × u32` Gaussian ids, then
//!   `count × 3 × f32` positions, in the tile's Morton order;
//! * LoD payload `l`: for each [`LayerRef`] of schedule level `l`, the
//!   packed bits of that layer for the tile's Gaussians (see
//!   [`crate::svq::bits`]), each part padded to a whole byte.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::codec::{codec_by_name, LosslessCodec};
use super::schedule::{LayerRef, LodSchedule};
use super::{make_tiles, morton_sort, Aabb, Result, Tile, TilingError};
use crate::gaussian_model::Gaussian;
use crate::svq::bits::{pack, packed_len, unpack};
use crate::svq::{AttributeSpec, CodebookSet, QuantizedAttribute};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileManifest {
    pub tile_id: u32,
    pub count: usize,
    pub bbox: Aabb,
    pub position_bytes: u64,
    pub lod_bytes: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub frame_index: u64,
    pub keyframe: bool,
    pub sh_degree: u8,
    pub gaussian_count: usize,
    pub codec: String,
    /// File name of the codebook set the codes refer to.
    pub codebook: String,
    pub attributes: Vec<AttributeLayout>,
    pub schedule: LodSchedule,
    pub tiles: Vec<TileManifest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeLayout {
    pub attribute: crate::svq::AttributeKind,
    pub layer_widths: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePayload {
    pub position: Vec<u8>,
    pub lods: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TiledLodContainer {
    pub manifest: Manifest,
    pub tiles: Vec<Tile>,
    pub payloads: Vec<TilePayload>,
}

pub const DEFAULT_CODEBOOK_NAME: &str = "codebooks.svqs";

fn widths_of(manifest: &Manifest, r: &LayerRef) -> Result<u8> {
    manifest
        .attributes
        .iter()
        .find(|a| a.attribute == r.attribute)
        .and_then(|a| a.layer_widths.get(r.layer).copied())
        .ok_or_else(|| TilingError::Schedule(format!("{} layer {} not in layout", r.attribute, r.layer)))
}

#[allow(clippy::too_many_arguments)]
/// Serializes tiles into per-LoD payloads. `quantized[i]` covers all
/// encoded items in the order of `ids`, for attribute `specs[i]`.
pub fn assemble_container(
    frame_index: u64,
    keyframe: bool,
    sh_degree: u8,
    ids: &[u32],
    positions: &[[f32; 3]],
    tiles: Vec<Tile>,
    quantized: &[QuantizedAttribute],
    specs: &[AttributeSpec],
    schedule: &LodSchedule,
    codec: &dyn LosslessCodec,
) -> Result<TiledLodContainer> {
    schedule.validate(specs)?;
    if quantized.len() != specs.len() || quantized.iter().zip(specs).any(|(q, s)| q.len != ids.len() || q.kind != s.kind) {
        return Err(TilingError::Schedule("quantized attributes do not match specs".into()));
    }
    let layout: Vec<AttributeLayout> =
        specs.iter().map(|s| AttributeLayout { attribute: s.kind, layer_widths: s.layer_widths.clone() }).collect();
    let payloads: Vec<TilePayload> = tiles
        .par_iter()
        .map(|tile| {
            let ctx = |lod: usize, e: std::io::Error| TilingError::Payload { tile: tile.tile_id, lod, reason: e.to_string() };
            let mut raw = Vec::with_capacity(4 + 16 * tile.members.len());
            raw.extend_from_slice(&(tile.members.len() as u32).to_le_bytes());
            for &m in &tile.members {
                raw.extend_from_slice(&ids[m].to_le_bytes());
            }
            for &m in &tile.members {
                for v in positions[m] {
                    raw.extend_from_slice(&v.to_le_bytes());
                }
            }
            let position = codec.compress(&raw).map_err(|e| ctx(0, e))?;
            let mut lods = Vec::with_capacity(schedule.level_count());
            for (l, level) in schedule.levels.iter().enumerate() {
                let mut raw = Vec::new();
                for r in level {
                    let i = specs.iter().position(|s| s.kind == r.attribute).expect("validated schedule");
                    let q = &quantized[i];
                    let seg: Vec<u16> = tile.members.iter().map(|&m| q.segments[r.layer][m]).collect();
                    raw.extend_from_slice(&pack(&seg, q.widths[r.layer]));
                }
                lods.push(codec.compress(&raw).map_err(|e| ctx(l, e))?);
            }
            Ok(TilePayload { position, lods })
        })
        .collect::<Result<Vec<_>>>()?;
    let tile_manifests = tiles
        .iter()
        .zip(&payloads)
        .map(|(t, p)| TileManifest {
            tile_id: t.tile_id,
            count: t.gaussian_ids.len(),
            bbox: t.bbox,
            position_bytes: p.position.len() as u64,
            lod_bytes: p.lods.iter().map(|b| b.len() as u64).collect(),
        })
        .collect();
    let manifest = Manifest {
        frame_index,
        keyframe,
        sh_degree,
        gaussian_count: ids.len(),
        codec: codec.name().to_string(),
        codebook: DEFAULT_CODEBOOK_NAME.to_string(),
        attributes: layout,
        schedule: schedule.clone(),
        tiles: tile_manifests,
    };
    Ok(TiledLodContainer { manifest, tiles, payloads })
}

#[allow(clippy::too_many_arguments)]
/// Quantizes, Morton-tiles and assembles `items` (sorted by id).
pub fn encode_items(
    frame_index: u64,
    keyframe: bool,
    items: &[(u32, &Gaussian)],
    codebooks: &CodebookSet,
    schedule: &LodSchedule,
    tile_size: usize,
    grid_bits: u32,
    codec: &dyn LosslessCodec,
) -> Result<TiledLodContainer> {
    let ids: Vec<u32> = items.iter().map(|(i, _)| *i).collect();
    let positions: Vec<[f32; 3]> = items.iter().map(|(_, g)| g.position).collect();
    let gs: Vec<&Gaussian> = items.iter().map(|(_, g)| *g).collect();
    let quantized = codebooks.quantize(&gs)?;
    let perm = morton_sort(&positions, &ids, grid_bits)?;
    let tiles = make_tiles(&positions, &ids, &perm, tile_size)?;
    let specs: Vec<AttributeSpec> = codebooks.codebooks.iter().map(|c| c.spec.clone()).collect();
    assemble_container(frame_index, keyframe, codebooks.sh_degree, &ids, &positions, tiles, &quantized, &specs, schedule, codec)
}

impl TiledLodContainer {
    pub fn tile_count(&self) -> usize {
        self.tiles.len()
    }

    pub fn max_level(&self) -> usize {
        self.manifest.schedule.max_level()
    }

    /// Bytes to send level `lod` of `tile`; level 0 includes positions.
    pub fn level_bytes(&self, tile: usize, lod: usize) -> u64 {
        let t = &self.manifest.tiles[tile];
        t.lod_bytes[lod] + if lod == 0 { t.position_bytes } else { 0 }
    }

    /// Bytes for levels `0..=lod` of `tile`.
    pub fn cumulative_bytes(&self, tile: usize, lod: usize) -> u64 {
        (0..=lod).map(|l| self.level_bytes(tile, l)).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        (0..self.tile_count()).map(|t| self.cumulative_bytes(t, self.max_level())).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest).expect("manifest serializes");
        let mut out = Vec::new();
        out.extend_from_slice(b"GSVC");
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        for p in &self.payloads {
            out.extend_from_slice(&p.position);
            for l in &p.lods {
                out.extend_from_slice(l);
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let bad = |m: &str| TilingError::Format(m.to_string());
        if buf.len() < 12 || &buf[..4] != b"GSVC" {
            return Err(bad("bad magic"));
        }
        if u32::from_le_bytes(buf[4..8].try_into().unwrap()) != 1 {
            return Err(bad("unsupported version"));
        }
        let mlen = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        let mend = 12usize.checked_add(mlen).filter(|&e| e <= buf.len()).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest =
            serde_json::from_slice(&buf[12..mend]).map_err(|e| TilingError::Format(format!("manifest: {e}")))?;
        let mut pos = mend;
        let mut take = |n: u64| -> Result<Vec<u8>> {
            let n = n as usize;
            if buf.len() < pos + n {
                return Err(bad("truncated payload"));
            }
            let v = buf[pos..pos + n].to_vec();
            pos += n;
            Ok(v)
        };
        let mut payloads = Vec::with_capacity(manifest.tiles.len());
        for t in &manifest.tiles {
            let position = take(t.position_bytes)?;
            let lods = t.lod_bytes.iter().map(|&n| take(n)).collect::<Result<Vec<_>>>()?;
            payloads.push(TilePayload { position, lods });
        }
        if pos != buf.len() {
            return Err(bad("trailing bytes"));
        }
        let codec = codec_by_name(&manifest.codec).ok_or_else(|| bad("unknown codec"))?;
        let mut tiles = Vec::with_capacity(payloads.len());
        let mut all_ids = Vec::new();
        for (t, p) in manifest.tiles.iter().zip(&payloads) {
            let (ids, _) = read_positions(codec.as_ref(), t.tile_id, &p.position)?;
            all_ids.extend_from_slice(&ids);
            tiles.push(Tile { tile_id: t.tile_id, gaussian_ids: ids, members: Vec::new(), bbox: t.bbox });
        }
        all_ids.sort_unstable();
        for t in &mut tiles {
            t.members = t.gaussian_ids.iter().map(|id| all_ids.binary_search(id).unwrap()).collect();
        }
        Ok(Self { manifest, tiles, payloads })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn read_positions(codec: &dyn LosslessCodec, tile: u32, payload: &[u8]) -> Result<(Vec<u32>, Vec<[f32; 3]>)> {
    let raw = codec.decompress(payload).map_err(|e| TilingError::Payload { tile, lod: 0, reason: e.to_string() })?;
    let bad = || TilingError::Payload { tile, lod: 0, reason: "malformed position payload".into() };
    if raw.len() < 4 {
        return Err(bad());
    }
    let n = u32::from_le_bytes(raw[..4].try_into().unwrap()) as usize;
    if raw.len() != 4 + 16 * n {
        return Err(bad());
    }
    let ids = raw[4..4 + 4 * n].chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
    let positions = raw[4 + 4 * n..]
        .chunks_exact(12)
        .map(|c| {
            let f = |k: usize| f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().unwrap());
            [f(0), f(1), f(2)]
        })
        .collect();
    Ok((ids, positions))
}

/// Decodes one tile from levels `0..=lod`.
pub fn decode_tile(container: &TiledLodContainer, tile: usize, codebooks: &CodebookSet, lod: usize) -> Result<Vec<(u32, Gaussian)>> {
    let m = &container.manifest;
    let tile_id = m.tiles[tile].tile_id;
    let payload = &container.payloads[tile];
    if lod >= m.schedule.level_count() || lod >= payload.lods.len() {
        return Err(TilingError::Payload { tile: tile_id, lod, reason: "payload missing".into() });
    }
    let codec = codec_by_name(&m.codec).ok_or_else(|| TilingError::Format(format!("unknown codec {}", m.codec)))?;
    let (ids, positions) = read_positions(codec.as_ref(), tile_id, &payload.position)?;
    let n = ids.len();
    let mut segments: Vec<Vec<Vec<u16>>> = vec![Vec::new(); codebooks.codebooks.len()];
    for l in 0..=lod {
        let raw = codec
            .decompress(&payload.lods[l])
            .map_err(|e| TilingError::Payload { tile: tile_id, lod: l, reason: e.to_string() })?;
        let mut off = 0;
        for r in &m.schedule.levels[l] {
            let w = widths_of(m, r)?;
            let len = packed_len(n, w);
            let part = raw.get(off..off + len).ok_or_else(|| TilingError::Payload {
                tile: tile_id,
                lod: l,
                reason: format!("{} bytes short", off + len - raw.len()),
            })?;
            off += len;
            let i = codebooks
                .codebooks
                .iter()
                .position(|c| c.spec.kind == r.attribute)
                .ok_or_else(|| TilingError::Schedule(format!("no codebook for {}", r.attribute)))?;
            segments[i].push(unpack(part, w, n, r.layer)?);
        }
    }
    let mut quantized = Vec::with_capacity(segments.len());
    let mut layers = Vec::with_capacity(segments.len());
    for (cb, segs) in codebooks.codebooks.iter().zip(segments) {
        let k = segs.len();
        layers.push(k);
        quantized.push(QuantizedAttribute { kind: cb.spec.kind, len: n, widths: cb.spec.layer_widths[..k].to_vec(), segments: segs });
    }
    let gs = codebooks.reconstruct(&positions, &quantized, &layers)?;
    Ok(ids.into_iter().zip(gs).collect())
}

/// Decodes every tile at its own LoD limit; output sorted by id.
pub fn decode_container(container: &TiledLodContainer, codebooks: &CodebookSet, lod_limits: &[usize]) -> Result<Vec<(u32, Gaussian)>> {
    if lod_limits.len() != container.tile_count() {
        return Err(TilingError::Format(format!("{} limits for {} tiles", lod_limits.len(), container.tile_count())));
    }
    let parts = (0..container.tile_count())
        .into_par_iter()
        .map(|t| decode_tile(container, t, codebooks, lod_limits[t]))
        .collect::<Result<Vec<_>>>()?;
    let mut out: Vec<(u32, Gaussian)> = parts.into_iter().flatten().collect();
    out.sort_by_key(|(id, _)| *id);
    Ok(out)
}
