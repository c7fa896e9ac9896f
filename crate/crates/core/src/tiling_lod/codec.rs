//! Lossless byte codecs for tile payloads.

use std::io::{Read, Write};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;

pub trait LosslessCodec: Send + Sync {
    /// Identifier stored in container manifests.
    fn name(&self) -> &'static str;
    fn compress(&self, data: &[u8]) -> std::io::Result<Vec<u8>>;
    fn decompress(&self, data: &[u8]) -> std::io::Result<Vec<u8>>;
}

/// Raw DEFLATE (RFC 1951) at a fixed level.
#[derive(Debug, Clone, Copy)]
pub struct Deflate {
    pub level: u32,
}

impl Default for Deflate {
    fn default() -> Self {
        Self { level: 9 }
    }
}

impl LosslessCodec for Deflate {
    fn name(&self) -> &'static str {
        "deflate"
    }

    fn compress(&self, data: &[u8]) -> std::io::Result<Vec<u8>> {
        let mut enc = DeflateEncoder::new(Vec::new(), Compression::new(self.level));
        enc.write_all(data)?;
        enc.finish()
    }

    fn decompress(&self, data: &[u8]) -> std::io::Result<Vec<u8>> {
        let mut out = Vec::new();
        DeflateDecoder::new(data).read_to_end(&mut out)?;
        Ok(out)
    }
}

/// Stores bytes unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl LosslessCodec for Identity {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn compress(&self, data: &[u8]) -> std::io::Result<Vec<u8>> {
        Ok(data.to_vec())
    }

    fn decompress(&self, data: &[u8]) -> std::io::Result<Vec<u8>> {
        Ok(data.to_vec())
    }
}

pub fn codec_by_name(name: &str) -> Option<Box<dyn LosslessCodec>> {
    match name {
        "deflate" => Some(Box::new(Deflate::default())),
        "identity" => Some(Box::new(Identity)),
        _ => None,
    }
}
