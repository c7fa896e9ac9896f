//! Layered codebook, encoding and table-lookup decoding.
//!
//! Codebook file (`.svqc`), little-endian:
//!
//! ```text
//! "SVQC"  u32 version (=1)
//! u8 name_len  name bytes (attribute name, e.g. "sh_level_0")
//! u32 dim  u8 init_bits  u8 top_bits  u8 layer_count  u8 width[layer_count]
//! per layer: u32 entry_count, entry_count x (u32 prefix, f32 centroid[dim])
//! ```
//!
//! Entries are written in ascending prefix order. A prefix is the
//! right-aligned high-order `cumulative_width` bits of a full code.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::kmeans::{kmeans_pp_init, lloyd, KMeansConfig};
use super::tree::{ClusterStats, MergeTree};
use super::{AttributeKind, AttributeSpec, Result, SvqError};

/// Centroids addressed by prefixes of one cumulative width. Stored densely
/// so lookups are plain indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTable {
    pub width: u8,
    pub present: Vec<bool>,
    pub centroids: Vec<f32>,
}

impl LayerTable {
    fn empty(width: u8, dim: usize) -> Self {
        let n = 1usize << width;
        Self { width, present: vec![false; n], centroids: vec![0.0; n * dim] }
    }

    pub fn get(&self, prefix: u32, dim: usize) -> Option<&[f32]> {
        let p = prefix as usize;
        if *self.present.get(p)? {
            Some(&self.centroids[p * dim..(p + 1) * dim])
        } else {
            None
        }
    }

    fn set(&mut self, prefix: u32, dim: usize, c: &[f32]) {
        let p = prefix as usize;
        self.present[p] = true;
        self.centroids[p * dim..(p + 1) * dim].copy_from_slice(c);
    }

    pub fn entries(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvqCodebook {
    pub spec: AttributeSpec,
    /// One table per layer, `layers[k]` keyed by cumulative width `w_k`.
    pub layers: Vec<LayerTable>,
    /// Full-width leaf codes in ascending order.
    leaf_codes: Vec<u32>,
    leaf_centroids: Vec<f32>,
}

/// Per-Gaussian codes split into layer segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedAttribute {
    pub kind: AttributeKind,
    pub len: usize,
    /// Width of each present layer segment.
    pub widths: Vec<u8>,
    /// `segments[k][g]` holds bits of layer `k` for Gaussian `g`.
    pub segments: Vec<Vec<u16>>,
}

impl QuantizedAttribute {
    pub fn from_codes(kind: AttributeKind, codes: &[u32], widths: &[u8]) -> Self {
        let total: u8 = widths.iter().sum();
        let mut shift = total;
        let segments = widths
            .iter()
            .map(|&w| {
                shift -= w;
                let mask = (1u32 << w) - 1;
                codes.iter().map(|&c| ((c >> shift) & mask) as u16).collect()
            })
            .collect();
        Self { kind, len: codes.len(), widths: widths.to_vec(), segments }
    }

    pub fn layer_count(&self) -> usize {
        self.segments.len()
    }

    /// Concatenates the first `layers` segments of each Gaussian.
    pub fn prefixes(&self, layers: usize) -> Vec<u32> {
        let mut out: Vec<u32> = self.segments[0].iter().map(|&s| s as u32).collect();
        for k in 1..layers {
            let w = self.widths[k];
            for (p, &s) in out.iter_mut().zip(&self.segments[k]) {
                *p = (*p << w) | s as u32;
            }
        }
        out
    }

    /// Full codes; requires every layer to be present.
    pub fn codes(&self) -> Vec<u32> {
        self.prefixes(self.layer_count())
    }

    /// Subset of Gaussians in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            kind: self.kind,
            len: indices.len(),
            widths: self.widths.clone(),
            segments: self.segments.iter().map(|s| indices.iter().map(|&i| s[i]).collect()).collect(),
        }
    }

    /// Keeps only the first `layers` segments.
    pub fn truncated(&self, layers: usize) -> Self {
        Self {
            kind: self.kind,
            len: self.len,
            widths: self.widths[..layers].to_vec(),
            segments: self.segments[..layers].to_vec(),
        }
    }
}

fn distinct_rows(data: &[f32], dim: usize) -> Vec<usize> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, row) in data.chunks_exact(dim).enumerate() {
        let key: Vec<u32> = row.iter().map(|v| v.to_bits()).collect();
        if seen.insert(key) {
            out.push(i);
        }
        // early out: once there are more distinct rows than any k we need
        if out.len() > 1 << 16 {
            break;
        }
    }
    out
}

/// Runs KMeans on a seeded subset of `vectors`, builds the merge tree and
/// the layered tables. When the subset holds no more distinct vectors than
/// `2^init_bits`, the distinct vectors themselves become the leaves.
pub fn build_codebook(
    vectors: &[f32],
    spec: &AttributeSpec,
    sample_size: usize,
    seed: u64,
) -> Result<(MergeTree, SvqCodebook)> {
    spec.validate()?;
    let dim = spec.dim;
    if vectors.is_empty() {
        return Err(SvqError::Empty);
    }
    if vectors.len() % dim != 0 {
        return Err(SvqError::DimMismatch { expected: dim, found: vectors.len() % dim });
    }
    let n = vectors.len() / dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = sample_size.clamp(1, n);
    let mut idx = if m == n { (0..n).collect::<Vec<_>>() } else { sample(&mut rng, n, m).into_vec() };
    idx.sort_unstable();
    let subset: Vec<f32> = idx.iter().flat_map(|&i| vectors[i * dim..(i + 1) * dim].iter().copied()).collect();

    let k_max = 1usize << spec.init_bits;
    let distinct = distinct_rows(&subset, dim);
    let needed = 1usize << spec.top_bits;
    if distinct.len() < needed {
        return Err(SvqError::TooFewDistinct { distinct: distinct.len(), needed });
    }

    let leaves: Vec<ClusterStats> = if distinct.len() <= k_max {
        let mut stats: Vec<ClusterStats> = distinct
            .iter()
            .map(|&i| ClusterStats {
                centroid: subset[i * dim..(i + 1) * dim].iter().map(|&v| v as f64).collect(),
                count: 0,
                radius: 0.0,
            })
            .collect();
        let cents: Vec<f64> = stats.iter().flat_map(|s| s.centroid.clone()).collect();
        for x in subset.chunks_exact(dim) {
            stats[super::kmeans::nearest(x, &cents, dim).0].count += 1;
        }
        stats
    } else {
        let init = kmeans_pp_init(&subset, dim, k_max, &mut rng);
        let res = lloyd(&subset, dim, init, KMeansConfig::default());
        let mut count = vec![0u64; k_max];
        let mut dist = vec![0.0f64; k_max];
        for (x, &l) in subset.chunks_exact(dim).zip(&res.assignment) {
            let l = l as usize;
            count[l] += 1;
            dist[l] += super::kmeans::sq_dist_f64(x, res.centroid(l)).sqrt();
        }
        (0..k_max)
            .filter(|&c| count[c] > 0)
            .map(|c| ClusterStats { centroid: res.centroid(c).to_vec(), count: count[c], radius: dist[c] / count[c] as f64 })
            .collect()
    };

    let tree = MergeTree::build(leaves, spec.init_bits, spec.top_bits)?;
    let codebook = SvqCodebook::from_tree(&tree, spec.clone());
    Ok((tree, codebook))
}

impl SvqCodebook {
    /// Tabulates every layer of `tree`. Layer `k` maps each node at depth
    /// `w_k` to its code, and each shallower leaf to its zero-padded code.
    pub fn from_tree(tree: &MergeTree, spec: AttributeSpec) -> Self {
        let dim = spec.dim;
        let cum = spec.cumulative_widths();
        let mut layers: Vec<LayerTable> = cum.iter().map(|&w| LayerTable::empty(w, dim)).collect();
        for node in &tree.nodes {
            let c: Vec<f32> = node.stats.centroid.iter().map(|&v| v as f32).collect();
            let is_leaf = node.children.is_none();
            for (table, &w) in layers.iter_mut().zip(&cum) {
                if node.depth == w {
                    table.set(node.code, dim, &c);
                } else if is_leaf && node.depth < w {
                    table.set(node.code << (w - node.depth), dim, &c);
                }
            }
        }
        Self::from_layers(spec, layers)
    }

    fn from_layers(spec: AttributeSpec, layers: Vec<LayerTable>) -> Self {
        let dim = spec.dim;
        let last = layers.last().expect("at least one layer");
        let mut leaf_codes = Vec::new();
        let mut leaf_centroids = Vec::new();
        for (p, &present) in last.present.iter().enumerate() {
            if present {
                leaf_codes.push(p as u32);
                leaf_centroids.extend_from_slice(&last.centroids[p * dim..(p + 1) * dim]);
            }
        }
        Self { spec, layers, leaf_codes, leaf_centroids }
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn leaf_codes(&self) -> &[u32] {
        &self.leaf_codes
    }

    pub fn leaf_centroids(&self) -> &[f32] {
        &self.leaf_centroids
    }

    /// Full code of the nearest leaf (squared Euclidean in f64, smaller code
    /// on ties). Scans leaves in code order with early abandoning.
    pub fn nearest_code(&self, x: &[f32]) -> u32 {
        let dim = self.dim();
        let mut best = f64::INFINITY;
        let mut best_code = self.leaf_codes[0];
        'leaf: for (c, &code) in self.leaf_centroids.chunks_exact(dim).zip(&self.leaf_codes) {
            let mut d = 0.0f64;
            for (&a, &b) in x.iter().zip(c) {
                let t = a as f64 - b as f64;
                d += t * t;
                if d > best {
                    continue 'leaf;
                }
            }
            if d < best {
                best = d;
                best_code = code;
            }
        }
        best_code
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"SVQC");
        out.extend_from_slice(&1u32.to_le_bytes());
        let name = self.spec.kind.name();
        out.push(name.len() as u8);
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(self.spec.dim as u32).to_le_bytes());
        out.push(self.spec.init_bits);
        out.push(self.spec.top_bits);
        out.push(self.spec.layer_widths.len() as u8);
        out.extend_from_slice(&self.spec.layer_widths);
        let dim = self.dim();
        for t in &self.layers {
            out.extend_from_slice(&(t.entries() as u32).to_le_bytes());
            for (p, &present) in t.present.iter().enumerate() {
                if present {
                    out.extend_from_slice(&(p as u32).to_le_bytes());
                    for v in &t.centroids[p * dim..(p + 1) * dim] {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if buf.len() < pos + n {
                return Err(SvqError::Parse { offset: pos, reason: format!("need {n} more bytes") });
            }
            let s = &buf[pos..pos + n];
            pos += n;
            Ok(s)
        };
        if take(4)? != b"SVQC" {
            return Err(SvqError::Parse { offset: 0, reason: "bad magic".into() });
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != 1 {
            return Err(SvqError::Parse { offset: 4, reason: format!("unsupported version {version}") });
        }
        let name_len = take(1)?[0] as usize;
        let name = std::str::from_utf8(take(name_len)?)
            .map_err(|_| SvqError::Parse { offset: 9, reason: "bad attribute name".into() })?
            .to_string();
        let kind = AttributeKind::parse(&name)
            .ok_or_else(|| SvqError::Parse { offset: 9, reason: format!("unknown attribute {name}") })?;
        let dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let hdr = take(3)?;
        let (init_bits, top_bits, nlayers) = (hdr[0], hdr[1], hdr[2] as usize);
        let widths = take(nlayers)?.to_vec();
        let spec = AttributeSpec { kind, dim, init_bits, top_bits, layer_widths: widths };
        spec.validate()?;
        let mut layers = Vec::new();
        for &w in &spec.cumulative_widths() {
            let mut t = LayerTable::empty(w, dim);
            let entries = u32::from_le_bytes(take(4)?.try_into().unwrap());
            for _ in 0..entries {
                let p = u32::from_le_bytes(take(4)?.try_into().unwrap());
                if p as usize >= t.present.len() {
                    return Err(SvqError::Parse { offset: 0, reason: format!("prefix {p} exceeds width {w}") });
                }
                let c: Vec<f32> =
                    take(4 * dim)?.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
                t.set(p, dim, &c);
            }
            layers.push(t);
        }
        Ok(Self::from_layers(spec, layers))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Assigns every vector the full-width code of its nearest leaf.
pub fn encode(vectors: &[f32], codebook: &SvqCodebook) -> Result<QuantizedAttribute> {
    let dim = codebook.dim();
    if vectors.len() % dim != 0 {
        return Err(SvqError::DimMismatch { expected: dim, found: vectors.len() % dim });
    }
    let codes: Vec<u32> = vectors.par_chunks_exact(dim).map(|x| codebook.nearest_code(x)).collect();
    Ok(QuantizedAttribute::from_codes(codebook.spec.kind, &codes, &codebook.spec.layer_widths))
}

/// Reconstructs vectors from the first `layers_available` layers.
pub fn decode(q: &QuantizedAttribute, codebook: &SvqCodebook, layers_available: usize) -> Result<Vec<f32>> {
    let dim = codebook.dim();
    let mut out = vec![0.0f32; q.len * dim];
    decode_into(q, codebook, layers_available, &mut out)?;
    Ok(out)
}

pub fn decode_into(q: &QuantizedAttribute, codebook: &SvqCodebook, layers_available: usize, out: &mut [f32]) -> Result<()> {
    let available = q.layer_count().min(codebook.layer_count());
    if layers_available == 0 || layers_available > available {
        return Err(SvqError::LayersAvailable { requested: layers_available, available });
    }
    if q.widths[..layers_available] != codebook.spec.layer_widths[..layers_available] {
        return Err(SvqError::BadSpec("quantized layer widths do not match codebook".into()));
    }
    let dim = codebook.dim();
    let table = &codebook.layers[layers_available - 1];
    let prefixes = q.prefixes(layers_available);
    for (p, dst) in prefixes.iter().zip(out.chunks_exact_mut(dim)) {
        let i = *p as usize;
        if !table.present[i] {
            return Err(SvqError::CorruptPrefix { layer: layers_available - 1, prefix: *p });
        }
        dst.copy_from_slice(&table.centroids[i * dim..(i + 1) * dim]);
    }
    Ok(())
}
