//! Scene data types: Gaussians, keyframes and differential frames.
//!
//! Attributes are kept in their stored (pre-activation) space: `scale` is a
//! log-scale, `opacity` a logit. Activation happens in the renderer only, so
//! quantization works on exactly what is stored on disk.
//!
//! Spherical-harmonics coefficients are laid out coefficient-major with the
//! three color channels interleaved: `sh[3 * k + c]` is basis function `k`,
//! channel `c`. SH level `l` therefore occupies the contiguous range
//! `3 * l^2 .. 3 * (l + 1)^2`.

pub mod io;

use std::collections::HashSet;

use thiserror::Error;

pub use io::{load_diff, load_frame, save_diff, save_frame, FrameFormat};

/// Number of SH coefficients (all channels) for a given degree.
pub const fn sh_len(degree: u8) -> usize {
    let d = degree as usize + 1;
    3 * d * d
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("gaussian {id}: expected {expected} SH values for degree {degree}, found {found}")]
    ShCount { id: usize, degree: u8, expected: usize, found: usize },
    #[error("invalid gaussians (ids {ids:?}): {reason}")]
    Invalid { ids: Vec<usize>, reason: String },
    #[error("frame {frame_index}: update id {id} out of range for {len} gaussians")]
    IdOutOfRange { frame_index: u64, id: u32, len: usize },
    #[error("frame {frame_index}: duplicate update id {id}")]
    DuplicateId { frame_index: u64, id: u32 },
    #[error("frame size mismatch: {prev} vs {next}")]
    SizeMismatch { prev: usize, next: usize },
    #[error("SH degree mismatch: {0} vs {1}")]
    DegreeMismatch(u8, u8),
    #[error("keyframe must contain at least one gaussian")]
    Empty,
    #[error("parse error at byte {offset}: {reason}")]
    Parse { offset: u64, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// One splat.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub position: [f32; 3],
    /// Log-scale per axis.
    pub scale: [f32; 3],
    /// `(w, x, y, z)`, not necessarily normalized.
    pub rotation: [f32; 4],
    /// Logit.
    pub opacity: f32,
    pub sh: Vec<f32>,
}

impl Gaussian {
    /// An isotropic gray Gaussian with only the DC term set.
    pub fn isotropic(position: [f32; 3], log_scale: f32, opacity: f32, degree: u8) -> Self {
        Self {
            position,
            scale: [log_scale; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity,
            sh: vec![0.0; sh_len(degree)],
        }
    }

    pub fn activated_opacity(&self) -> f32 {
        1.0 / (1.0 + (-self.opacity).exp())
    }

    pub fn activated_scale(&self) -> [f32; 3] {
        self.scale.map(f32::exp)
    }

    /// Rotation normalized to unit length.
    pub fn unit_rotation(&self) -> [f32; 4] {
        let q = self.rotation;
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        q.map(|c| c / n)
    }

    /// Sets the DC coefficient so the rendered base color equals `rgb`.
    pub fn set_base_color(&mut self, rgb: [f32; 3]) {
        for c in 0..3 {
            self.sh[c] = (rgb[c] - 0.5) / crate::renderer::sh::SH_C0;
        }
    }

    fn values(&self) -> impl Iterator<Item = f32> + '_ {
        self.position
            .iter()
            .chain(&self.scale)
            .chain(&self.rotation)
            .chain(std::iter::once(&self.opacity))
            .chain(&self.sh)
            .copied()
    }

    /// Whether any attribute differs by more than `epsilon`. With
    /// `epsilon == 0` this is bitwise inequality.
    pub fn differs(&self, other: &Gaussian, epsilon: f32) -> bool {
        if self.sh.len() != other.sh.len() {
            return true;
        }
        self.values().zip(other.values()).any(|(a, b)| {
            if epsilon == 0.0 {
                a.to_bits() != b.to_bits()
            } else {
                !((a - b).abs() <= epsilon)
            }
        })
    }

    fn problem(&self, degree: u8) -> Option<&'static str> {
        if self.sh.len() != sh_len(degree) {
            return Some("SH length does not match degree");
        }
        if !self.values().all(f32::is_finite) {
            return Some("non-finite attribute");
        }
        let q = self.rotation;
        let n2 = q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3];
        if !(n2 > 1e-12) {
            return Some("zero-length rotation");
        }
        None
    }
}

/// A full set of Gaussians; `gaussians[id]` is the Gaussian with that id.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFrame {
    pub frame_index: u64,
    pub sh_degree: u8,
    pub gaussians: Vec<Gaussian>,
}

impl GaussianFrame {
    /// Builds a frame and enforces every attribute invariant.
    pub fn new(frame_index: u64, sh_degree: u8, gaussians: Vec<Gaussian>) -> Result<Self> {
        let frame = Self { frame_index, sh_degree, gaussians };
        frame.validate()?;
        Ok(frame)
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.gaussians.is_empty() {
            return Err(ModelError::Empty);
        }
        validate_all(self.sh_degree, self.gaussians.iter().enumerate())
    }
}

fn validate_all<'a>(degree: u8, it: impl Iterator<Item = (usize, &'a Gaussian)>) -> Result<()> {
    let mut ids = Vec::new();
    let mut reason = "";
    for (id, g) in it {
        if g.sh.len() != sh_len(degree) && ids.is_empty() {
            return Err(ModelError::ShCount {
                id,
                degree,
                expected: sh_len(degree),
                found: g.sh.len(),
            });
        }
        if let Some(r) = g.problem(degree) {
            if ids.is_empty() {
                reason = r;
            }
            ids.push(id);
        }
    }
    if ids.is_empty() {
        Ok(())
    } else {
        Err(ModelError::Invalid { ids, reason: reason.to_string() })
    }
}

/// Attribute updates relative to the previous frame. Ids come from the
/// keyframe and never change over a video.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DifferentialFrame {
    pub frame_index: u64,
    pub updates: Vec<(u32, Gaussian)>,
}

impl DifferentialFrame {
    pub fn new(frame_index: u64, updates: Vec<(u32, Gaussian)>) -> Self {
        Self { frame_index, updates }
    }

    pub fn len(&self) -> usize {
        self.updates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.updates.is_empty()
    }

    /// Checks ids are unique and below `len`, and updates are well formed.
    pub fn validate(&self, len: usize, degree: u8) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.updates.len());
        for (id, _) in &self.updates {
            if *id as usize >= len {
                return Err(ModelError::IdOutOfRange { frame_index: self.frame_index, id: *id, len });
            }
            if !seen.insert(*id) {
                return Err(ModelError::DuplicateId { frame_index: self.frame_index, id: *id });
            }
        }
        validate_all(degree, self.updates.iter().map(|(id, g)| (*id as usize, g)))
    }
}

/// Applies `diff` on top of `base`, returning the next frame. `base` is left
/// untouched.
pub fn apply_differential(base: &GaussianFrame, diff: &DifferentialFrame) -> Result<GaussianFrame> {
    diff.validate(base.len(), base.sh_degree)?;
    let mut next = base.clone();
    next.frame_index = diff.frame_index;
    for (id, g) in &diff.updates {
        next.gaussians[*id as usize] = g.clone();
    }
    Ok(next)
}

/// Lists every Gaussian of `next` that differs from `prev` by more than
/// `epsilon` in any attribute.
pub fn diff_frames(prev: &GaussianFrame, next: &GaussianFrame, epsilon: f32) -> Result<DifferentialFrame> {
    if prev.len() != next.len() {
        return Err(ModelError::SizeMismatch { prev: prev.len(), next: next.len() });
    }
    if prev.sh_degree != next.sh_degree {
        return Err(ModelError::DegreeMismatch(prev.sh_degree, next.sh_degree));
    }
    let updates = prev
        .gaussians
        .iter()
        .zip(&next.gaussians)
        .enumerate()
        .filter(|(_, (a, b))| a.differs(b, epsilon))
        .map(|(id, (_, b))| (id as u32, b.clone()))
        .collect();
    Ok(DifferentialFrame { frame_index: next.frame_index, updates })
}

/// A keyframe followed by differential frames.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianVideo {
    pub keyframe: GaussianFrame,
    pub diffs: Vec<DifferentialFrame>,
}

impl GaussianVideo {
    pub fn frame_count(&self) -> usize {
        1 + self.diffs.len()
    }

    /// Reconstructs every frame in order.
    pub fn frames(&self) -> Result<Vec<GaussianFrame>> {
        let mut out = Vec::with_capacity(self.frame_count());
        out.push(self.keyframe.clone());
        for d in &self.diffs {
            let next = apply_differential(out.last().unwrap(), d)?;
            out.push(next);
        }
        Ok(out)
    }

    /// Builds a video from full frames, diffing consecutive pairs exactly.
    pub fn from_frames(frames: &[GaussianFrame]) -> Result<Self> {
        let keyframe = frames.first().ok_or(ModelError::Empty)?.clone();
        let diffs = frames
            .windows(2)
            .map(|w| diff_frames(&w[0], &w[1], 0.0))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { keyframe, diffs })
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    pub fn random_gaussian(rng: &mut ChaCha8Rng, degree: u8) -> Gaussian {
        Gaussian {
            position: [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)],
            scale: [rng.gen_range(-4.0..0.0), rng.gen_range(-4.0..0.0), rng.gen_range(-4.0..0.0)],
            rotation: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.5],
            opacity: rng.gen_range(-3.0..3.0),
            sh: (0..sh_len(degree)).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    pub fn random_frame(seed: u64, n: usize, degree: u8) -> GaussianFrame {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gs = (0..n).map(|_| random_gaussian(&mut rng, degree)).collect();
        GaussianFrame::new(0, degree, gs).unwrap()
    }
}
