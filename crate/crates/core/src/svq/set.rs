//! One codebook per attribute of a video.
//!
//! File layout: `"SVQS"`, `u32 version = 1`, `u8 sh_degree`,
//! `u32 count`, then `count` records of `u32 length` + codebook bytes.

use std::path::Path;

use super::{decode_into, encode, AttributeKind, AttributeSpec, QuantizedAttribute, Result, SvqCodebook, SvqError};
use crate::gaussian_model::{sh_len, Gaussian};

#[derive(Debug, Clone, PartialEq)]
pub struct CodebookSet {
    pub sh_degree: u8,
    pub codebooks: Vec<SvqCodebook>,
}

impl CodebookSet {
    /// Builds every codebook in `specs` from `gaussians`; attribute `i`
    /// uses seed `seed + i`.
    pub fn build(gaussians: &[&Gaussian], sh_degree: u8, specs: &[AttributeSpec], sample_size: usize, seed: u64) -> Result<Self> {
        let codebooks = specs
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let v = spec.kind.extract(gaussians.iter().copied());
                super::build_codebook(&v, spec, sample_size, seed.wrapping_add(i as u64)).map(|(_, cb)| cb)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { sh_degree, codebooks })
    }

    pub fn kinds(&self) -> Vec<AttributeKind> {
        self.codebooks.iter().map(|c| c.spec.kind).collect()
    }

    pub fn get(&self, kind: AttributeKind) -> Option<&SvqCodebook> {
        self.codebooks.iter().find(|c| c.spec.kind == kind)
    }

    /// Quantizes every attribute; output order follows `codebooks`.
    pub fn quantize(&self, gaussians: &[&Gaussian]) -> Result<Vec<QuantizedAttribute>> {
        self.codebooks.iter().map(|cb| encode(&cb.spec.kind.extract(gaussians.iter().copied()), cb)).collect()
    }

    /// Rebuilds Gaussians from quantized attributes decoded at
    /// `layers[i]` layers for attribute `i`.
    pub fn reconstruct(&self, positions: &[[f32; 3]], quantized: &[QuantizedAttribute], layers: &[usize]) -> Result<Vec<Gaussian>> {
        if quantized.len() != self.codebooks.len() || layers.len() != self.codebooks.len() {
            return Err(SvqError::BadSpec(format!(
                "{} codebooks, {} quantized attributes, {} layer counts",
                self.codebooks.len(),
                quantized.len(),
                layers.len()
            )));
        }
        let mut gs: Vec<Gaussian> = positions
            .iter()
            .map(|&p| Gaussian { position: p, scale: [0.0; 3], rotation: [1.0, 0.0, 0.0, 0.0], opacity: 0.0, sh: vec![0.0; sh_len(self.sh_degree)] })
            .collect();
        let mut buf = Vec::new();
        for ((cb, q), &l) in self.codebooks.iter().zip(quantized).zip(layers) {
            if q.len != positions.len() {
                return Err(SvqError::DimMismatch { expected: positions.len(), found: q.len });
            }
            buf.resize(q.len * cb.dim(), 0.0);
            decode_into(q, cb, l, &mut buf)?;
            cb.spec.kind.inject(&buf, &mut gs);
        }
        Ok(gs)
    }

    /// Full round trip through every layer.
    pub fn quantize_full(&self, gaussians: &[&Gaussian]) -> Result<Vec<Gaussian>> {
        let q = self.quantize(gaussians)?;
        let positions: Vec<[f32; 3]> = gaussians.iter().map(|g| g.position).collect();
        let layers: Vec<usize> = self.codebooks.iter().map(|c| c.layer_count()).collect();
        self.reconstruct(&positions, &q, &layers)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"SVQS");
        out.extend_from_slice(&1u32.to_le_bytes());
        out.push(self.sh_degree);
        out.extend_from_slice(&(self.codebooks.len() as u32).to_le_bytes());
        for cb in &self.codebooks {
            let b = cb.to_bytes();
            out.extend_from_slice(&(b.len() as u32).to_le_bytes());
            out.extend_from_slice(&b);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let err = |offset: usize, reason: &str| SvqError::Parse { offset, reason: reason.into() };
        if buf.len() < 13 || &buf[..4] != b"SVQS" {
            return Err(err(0, "bad codebook set header"));
        }
        if u32::from_le_bytes(buf[4..8].try_into().unwrap()) != 1 {
            return Err(err(4, "unsupported version"));
        }
        let sh_degree = buf[8];
        let count = u32::from_le_bytes(buf[9..13].try_into().unwrap()) as usize;
        let mut pos = 13;
        let mut codebooks = Vec::with_capacity(count);
        for _ in 0..count {
            if buf.len() < pos + 4 {
                return Err(err(pos, "truncated length"));
            }
            let len = u32::from_le_bytes(buf[pos..pos + 4].try_into().unwrap()) as usize;
            pos += 4;
            if buf.len() < pos + len {
                return Err(err(pos, "truncated codebook"));
            }
            codebooks.push(SvqCodebook::from_bytes(&buf[pos..pos + len])?);
            pos += len;
        }
        if pos != buf.len() {
            return Err(err(pos, "trailing bytes"));
        }
        Ok(Self { sh_degree, codebooks })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
