//! Bit packing of layer segments.
//!
//! Layer `k` of `n` Gaussians is `n` consecutive `width_k`-bit values in
//! Gaussian order, most significant bit first, packed from the most
//! significant bit of byte 0. The final byte is zero-padded; the buffer is
//! exactly `ceil(n * width_k / 8)` bytes.

use super::{AttributeKind, QuantizedAttribute, Result, SvqError};

pub fn packed_len(n: usize, width: u8) -> usize {
    (n * width as usize).div_ceil(8)
}

pub fn pack(values: &[u16], width: u8) -> Vec<u8> {
    let mut out = vec![0u8; packed_len(values.len(), width)];
    let mut bit = 0usize;
    for &v in values {
        for b in (0..width).rev() {
            if (v >> b) & 1 == 1 {
                out[bit / 8] |= 0x80 >> (bit % 8);
            }
            bit += 1;
        }
    }
    out
}

pub fn unpack(buf: &[u8], width: u8, n: usize, layer: usize) -> Result<Vec<u16>> {
    let expected = packed_len(n, width);
    if buf.len() != expected {
        return Err(SvqError::Truncated { layer, expected_bits: n * width as usize, actual_bits: buf.len() * 8 });
    }
    let mut out = Vec::with_capacity(n);
    let mut bit = 0usize;
    for _ in 0..n {
        let mut v = 0u16;
        for _ in 0..width {
            v = (v << 1) | ((buf[bit / 8] >> (7 - bit % 8)) & 1) as u16;
            bit += 1;
        }
        out.push(v);
    }
    Ok(out)
}

/// One independently transmittable buffer per layer.
pub fn split_layers(q: &QuantizedAttribute) -> Vec<Vec<u8>> {
    q.segments.iter().zip(&q.widths).map(|(s, &w)| pack(s, w)).collect()
}

/// Rebuilds a quantized attribute from any leading run of layer buffers.
pub fn join_layers(kind: AttributeKind, buffers: &[Vec<u8>], n: usize, widths: &[u8]) -> Result<QuantizedAttribute> {
    if buffers.len() > widths.len() {
        return Err(SvqError::BadSpec(format!("{} buffers for {} layers", buffers.len(), widths.len())));
    }
    let segments = buffers
        .iter()
        .zip(widths)
        .enumerate()
        .map(|(k, (b, &w))| unpack(b, w, n, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantizedAttribute { kind, len: n, widths: widths[..buffers.len()].to_vec(), segments })
}
