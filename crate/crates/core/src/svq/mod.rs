//! Scalable vector quantization.
//!
//! Each attribute is clustered with KMeans into `2^init_bits` leaves, the
//! leaves are merged pairwise into a binary tree with `2^top_bits` roots, and
//! every node receives a code extending its parent's code by one bit. A
//! Gaussian's code therefore truncates to the code of one of its leaf's
//! ancestors, so the high-order bits form a base layer and the low-order bits
//! form independently transmittable enhancement layers.

pub mod bits;
pub mod codebook;
pub mod kmeans;
pub mod set;
pub mod tree;

use thiserror::Error;

use crate::gaussian_model::Gaussian;

pub use bits::{join_layers, split_layers};
pub use codebook::{build_codebook, decode, decode_into, encode, LayerTable, QuantizedAttribute, SvqCodebook};
pub use set::CodebookSet;
pub use kmeans::{kmeans_pp_init, lloyd, KMeansConfig, KMeansResult};
pub use tree::{merge_distance, ClusterStats, MergeTree, TreeNode};

#[derive(Debug, Error)]
pub enum SvqError {
    #[error("no input vectors")]
    Empty,
    #[error("only {distinct} distinct vectors but 2^top_bits = {needed} roots requested; use a smaller top_bits")]
    TooFewDistinct { distinct: usize, needed: usize },
    #[error("vector dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("invalid attribute spec: {0}")]
    BadSpec(String),
    #[error("layers_available {requested} outside 1..={available}")]
    LayersAvailable { requested: usize, available: usize },
    #[error("codebook corruption: prefix {prefix:#x} missing from layer {layer}")]
    CorruptPrefix { layer: usize, prefix: u32 },
    #[error("layer {layer} buffer truncated: expected {expected_bits} bits, got {actual_bits}")]
    Truncated { layer: usize, expected_bits: usize, actual_bits: usize },
    #[error("codebook parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SvqError> = std::result::Result<T, E>;

/// Gaussian attributes quantized independently. Positions are never
/// quantized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttributeKind {
    Scale,
    RotReal,
    RotImag,
    Opacity,
    /// SH level `l`: coefficients `l^2 .. (l+1)^2` of all three channels.
    Sh(u8),
}

impl AttributeKind {
    pub fn name(self) -> String {
        match self {
            Self::Scale => "scale".into(),
            Self::RotReal => "rot_real".into(),
            Self::RotImag => "rot_imag".into(),
            Self::Opacity => "opacity".into(),
            Self::Sh(l) => format!("sh_level_{l}"),
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "scale" => Self::Scale,
            "rot_real" => Self::RotReal,
            "rot_imag" => Self::RotImag,
            "opacity" => Self::Opacity,
            s => {
                let l: u8 = s.strip_prefix("sh_level_")?.parse().ok()?;
                if l > 3 {
                    return None;
                }
                Self::Sh(l)
            }
        })
    }

    pub fn dim(self) -> usize {
        match self {
            Self::Scale | Self::RotImag => 3,
            Self::RotReal | Self::Opacity => 1,
            Self::Sh(l) => 3 * (2 * l as usize + 1),
        }
    }

    /// All attribute kinds present for an SH degree, in canonical order.
    pub fn all(sh_degree: u8) -> Vec<Self> {
        let mut v = vec![Self::Scale, Self::RotReal, Self::RotImag, Self::Opacity];
        v.extend((0..=sh_degree).map(Self::Sh));
        v
    }

    fn read(self, g: &Gaussian, out: &mut Vec<f32>) {
        match self {
            Self::Scale => out.extend_from_slice(&g.scale),
            Self::RotReal => out.push(g.rotation[0]),
            Self::RotImag => out.extend_from_slice(&g.rotation[1..]),
            Self::Opacity => out.push(g.opacity),
            Self::Sh(l) => {
                let l = l as usize;
                out.extend_from_slice(&g.sh[3 * l * l..3 * (l + 1) * (l + 1)]);
            }
        }
    }

    fn write(self, v: &[f32], g: &mut Gaussian) {
        match self {
            Self::Scale => g.scale.copy_from_slice(v),
            Self::RotReal => g.rotation[0] = v[0],
            Self::RotImag => g.rotation[1..].copy_from_slice(v),
            Self::Opacity => g.opacity = v[0],
            Self::Sh(l) => {
                let l = l as usize;
                g.sh[3 * l * l..3 * (l + 1) * (l + 1)].copy_from_slice(v);
            }
        }
    }

    /// Flattened `n x dim` attribute matrix.
    pub fn extract<'a>(self, gaussians: impl IntoIterator<Item = &'a Gaussian>) -> Vec<f32> {
        let mut out = Vec::new();
        for g in gaussians {
            self.read(g, &mut out);
        }
        out
    }

    /// Writes a flattened attribute matrix back into `gaussians`.
    pub fn inject(self, values: &[f32], gaussians: &mut [Gaussian]) {
        let d = self.dim();
        assert_eq!(values.len(), d * gaussians.len());
        for (g, v) in gaussians.iter_mut().zip(values.chunks_exact(d)) {
            self.write(v, g);
        }
    }
}

impl serde::Serialize for AttributeKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> serde::Deserialize<'de> for AttributeKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        Self::parse(&name).ok_or_else(|| serde::de::Error::custom(format!("unknown attribute {name}")))
    }
}

impl std::fmt::Display for AttributeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

/// Bit allocation for one attribute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeSpec {
    pub kind: AttributeKind,
    pub dim: usize,
    pub init_bits: u8,
    pub top_bits: u8,
    /// Width of each layer; the first equals `top_bits`, the sum equals
    /// `init_bits`.
    pub layer_widths: Vec<u8>,
}

impl AttributeSpec {
    /// Base layer of `top_bits`, then 2-bit enhancement layers with any odd
    /// remainder in the last one.
    pub fn new(kind: AttributeKind, init_bits: u8, top_bits: u8) -> Self {
        let mut widths = vec![top_bits];
        let mut left = init_bits.saturating_sub(top_bits);
        while left > 0 {
            let w = left.min(2);
            widths.push(w);
            left -= w;
        }
        Self { kind, dim: kind.dim(), init_bits, top_bits, layer_widths: widths }
    }

    pub fn with_layer_widths(mut self, widths: Vec<u8>) -> Self {
        self.layer_widths = widths;
        self
    }

    /// 66-bit allocation: scale 10, rotation real 8 / imaginary 10,
    /// opacity 8, SH levels 9/8/7/6, all merged down to 16 roots.
    pub fn defaults(sh_degree: u8) -> Vec<Self> {
        AttributeKind::all(sh_degree)
            .into_iter()
            .map(|k| {
                let bits = match k {
                    AttributeKind::Scale => 10,
                    AttributeKind::RotReal => 8,
                    AttributeKind::RotImag => 10,
                    AttributeKind::Opacity => 8,
                    AttributeKind::Sh(l) => 9 - l,
                };
                Self::new(k, bits, 4)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.top_bits && self.top_bits <= self.init_bits && self.init_bits <= 16) {
            return Err(SvqError::BadSpec(format!(
                "{}: need 1 <= top_bits ({}) <= init_bits ({}) <= 16",
                self.kind, self.top_bits, self.init_bits
            )));
        }
        if self.dim != self.kind.dim() {
            return Err(SvqError::BadSpec(format!("{}: dim {} != {}", self.kind, self.dim, self.kind.dim())));
        }
        let sum: u32 = self.layer_widths.iter().map(|&w| w as u32).sum();
        if self.layer_widths.first() != Some(&self.top_bits)
            || sum != self.init_bits as u32
            || self.layer_widths.iter().any(|&w| w == 0)
        {
            return Err(SvqError::BadSpec(format!(
                "{}: layer widths {:?} must start with top_bits and sum to init_bits",
                self.kind, self.layer_widths
            )));
        }
        Ok(())
    }

    /// Cumulative code width after each layer.
    pub fn cumulative_widths(&self) -> Vec<u8> {
        self.layer_widths
            .iter()
            .scan(0u8, |acc, &w| {
                *acc += w;
                Some(*acc)
            })
            .collect()
    }

    pub fn layer_count(&self) -> usize {
        self.layer_widths.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_allocation_totals_66_bits() {
        let specs = AttributeSpec::defaults(3);
        assert_eq!(specs.iter().map(|s| s.init_bits as u32).sum::<u32>(), 66);
        for s in &specs {
            s.validate().unwrap();
            assert_eq!(s.top_bits, 4);
        }
        let scale = &specs[0];
        assert_eq!(scale.layer_widths, vec![4, 2, 2, 2]);
        assert_eq!(scale.cumulative_widths(), vec![4, 6, 8, 10]);
        assert_eq!(AttributeSpec::new(AttributeKind::Sh(0), 9, 4).layer_widths, vec![4, 2, 2, 1]);
        assert_eq!(AttributeSpec::new(AttributeKind::Sh(0), 4, 4).layer_widths, vec![4]);
    }

    #[test]
    fn bad_specs() {
        assert!(AttributeSpec::new(AttributeKind::Scale, 17, 4).validate().is_err());
        assert!(AttributeSpec::new(AttributeKind::Scale, 3, 4).validate().is_err());
        assert!(AttributeSpec::new(AttributeKind::Scale, 8, 0).validate().is_err());
        let mut s = AttributeSpec::new(AttributeKind::Scale, 8, 4);
        s.dim = 2;
        assert!(s.validate().is_err());
        let s = AttributeSpec::new(AttributeKind::Scale, 8, 4).with_layer_widths(vec![4, 3]);
        assert!(s.validate().is_err());
    }

    #[test]
    fn extract_inject_sh_levels() {
        let mut g = Gaussian::isotropic([0.0; 3], 0.0, 0.0, 3);
        for (i, v) in g.sh.iter_mut().enumerate() {
            *v = i as f32;
        }
        let lvl2 = AttributeKind::Sh(2).extract([&g]);
        assert_eq!(lvl2, (12..27).map(|i| i as f32).collect::<Vec<_>>());
        let mut h = g.clone();
        AttributeKind::Sh(2).inject(&vec![0.0; 15], std::slice::from_mut(&mut h));
        assert!(h.sh[12..27].iter().all(|&v| v == 0.0));
        assert_eq!(h.sh[27], 27.0);
        assert_eq!(AttributeKind::parse("sh_level_3"), Some(AttributeKind::Sh(3)));
        assert_eq!(AttributeKind::parse("rot_imag"), Some(AttributeKind::RotImag));
        assert_eq!(AttributeKind::parse("sh_level_4"), None);
    }
}
