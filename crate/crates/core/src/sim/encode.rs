//! Encoding a Gaussian video into per-frame tiled containers.
//!
//! Directory layout: `codebooks.svqs`, `video.json` (frame count, GoF
//! length, SH degree, Gaussian count) and one `frame_NNNNN.gsvc` per frame.
//! GoF starts carry every Gaussian; other frames carry only the Gaussians
//! that changed.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{Result, SimError};
use crate::gaussian_model::{diff_frames, Gaussian, GaussianFrame, GaussianVideo};
use crate::metrics::psnr;
use crate::renderer::{render, Camera, DEFAULT_VIS_THRESHOLD};
use crate::svq::{AttributeSpec, CodebookSet};
use crate::tiling_lod::{
    assemble_container, codec_by_name, encode_items, LodSchedule, TiledLodContainer, DEFAULT_CODEBOOK_NAME, DEFAULT_GRID_BITS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncodeConfig {
    /// Gaussians per tile in keyframes.
    pub tile_size: usize,
    /// Gaussians per tile in differential frames.
    pub diff_tile_size: usize,
    pub schedule: ScheduleMode,
    pub grid_bits: u32,
    pub codec: String,
    /// Training sample size per codebook.
    pub sample_size: usize,
    pub seed: u64,
    /// Frames per group of frames; 0 keeps a single group.
    pub gof: usize,
    /// Attribute changes at or below this count as unchanged.
    pub diff_epsilon: f32,
    /// Bit allocation; empty selects the default for the scene's SH degree.
    #[serde(skip)]
    pub specs: Vec<AttributeSpec>,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        Self {
            tile_size: 256,
            diff_tile_size: 128,
            schedule: ScheduleMode::Default,
            grid_bits: DEFAULT_GRID_BITS,
            codec: "deflate".into(),
            sample_size: 20_000,
            seed: 1,
            gof: 0,
            diff_epsilon: 0.0,
            specs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    /// Fixed attribute ranking.
    Default,
    /// Greedy order by rendered PSNR gain on the first frame.
    Sweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VideoIndex {
    pub frames: usize,
    pub gof: usize,
    pub sh_degree: u8,
    pub gaussian_count: usize,
}

#[derive(Debug, Clone)]
pub struct EncodedVideo {
    pub index: VideoIndex,
    pub codebooks: CodebookSet,
    pub containers: Vec<TiledLodContainer>,
}

impl EncodedVideo {
    pub fn is_gof_start(&self, frame: usize) -> bool {
        frame == 0 || (self.index.gof > 0 && frame % self.index.gof == 0)
    }

    pub fn codebook_bytes(&self) -> u64 {
        self.codebooks.to_bytes().len() as u64
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.codebooks.save(dir.join(DEFAULT_CODEBOOK_NAME))?;
        std::fs::write(dir.join("video.json"), serde_json::to_string_pretty(&self.index).expect("index serializes"))?;
        for (i, c) in self.containers.iter().enumerate() {
            c.save(dir.join(format!("frame_{i:05}.gsvc")))?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let index: VideoIndex = serde_json::from_str(&std::fs::read_to_string(dir.join("video.json"))?)
            .map_err(|e| SimError::Data(format!("video.json: {e}")))?;
        let codebooks = CodebookSet::load(dir.join(DEFAULT_CODEBOOK_NAME))?;
        let containers = (0..index.frames)
            .map(|i| TiledLodContainer::load(dir.join(format!("frame_{i:05}.gsvc"))))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self { index, codebooks, containers })
    }
}

fn encode_frame_items(
    frame: u64,
    keyframe: bool,
    items: &[(u32, &Gaussian)],
    codebooks: &CodebookSet,
    schedule: &LodSchedule,
    cfg: &EncodeConfig,
) -> Result<TiledLodContainer> {
    let codec = codec_by_name(&cfg.codec).ok_or_else(|| SimError::Config(format!("unknown codec {}", cfg.codec)))?;
    if items.is_empty() {
        let specs: Vec<AttributeSpec> = codebooks.codebooks.iter().map(|c| c.spec.clone()).collect();
        let quantized = codebooks.quantize(&[])?;
        return Ok(assemble_container(frame, keyframe, codebooks.sh_degree, &[], &[], Vec::new(), &quantized, &specs, schedule, codec.as_ref())?);
    }
    let tile_size = if keyframe { cfg.tile_size } else { cfg.diff_tile_size };
    Ok(encode_items(frame, keyframe, items, codebooks, schedule, tile_size, cfg.grid_bits, codec.as_ref())?)
}

/// Builds codebooks from the first frame and encodes every frame.
pub fn encode_video(video: &GaussianVideo, cfg: &EncodeConfig) -> Result<EncodedVideo> {
    let frames = video.frames()?;
    encode_frames(&frames, cfg)
}

pub fn encode_frames(frames: &[GaussianFrame], cfg: &EncodeConfig) -> Result<EncodedVideo> {
    let first = frames.first().ok_or_else(|| SimError::Data("video has no frames".into()))?;
    let degree = first.sh_degree;
    let specs = if cfg.specs.is_empty() { AttributeSpec::defaults(degree) } else { cfg.specs.clone() };
    let refs: Vec<&Gaussian> = first.gaussians.iter().collect();
    let codebooks = CodebookSet::build(&refs, degree, &specs, cfg.sample_size, cfg.seed)?;
    let schedule = match cfg.schedule {
        ScheduleMode::Default => LodSchedule::default_for(&specs),
        ScheduleMode::Sweep => sweep_schedule(first, &codebooks)?,
    };
    let mut containers = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let key = i == 0 || (cfg.gof > 0 && i % cfg.gof == 0);
        let c = if key {
            let items: Vec<(u32, &Gaussian)> = f.gaussians.iter().enumerate().map(|(id, g)| (id as u32, g)).collect();
            encode_frame_items(f.frame_index, true, &items, &codebooks, &schedule, cfg)?
        } else {
            let diff = diff_frames(&frames[i - 1], f, cfg.diff_epsilon)?;
            let items: Vec<(u32, &Gaussian)> = diff.updates.iter().map(|(id, g)| (*id, g)).collect();
            encode_frame_items(f.frame_index, false, &items, &codebooks, &schedule, cfg)?
        };
        containers.push(c);
    }
    let index = VideoIndex { frames: frames.len(), gof: cfg.gof, sh_degree: degree, gaussian_count: first.len() };
    Ok(EncodedVideo { index, codebooks, containers })
}

/// Schedule ordered by mean PSNR of `frame`'s reconstruction, rendered
/// at 80×60 from four cameras circling its bounding box, against renders
/// of the uncompressed frame.
pub fn sweep_schedule(frame: &GaussianFrame, codebooks: &CodebookSet) -> Result<LodSchedule> {
    let refs: Vec<&Gaussian> = frame.gaussians.iter().collect();
    let quantized = codebooks.quantize(&refs)?;
    let positions: Vec<[f32; 3]> = frame.gaussians.iter().map(|g| g.position).collect();
    let (lo, hi) = positions.iter().fold(([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]), |(lo, hi), p| {
        (std::array::from_fn(|i| lo[i].min(p[i] as f64)), std::array::from_fn(|i| hi[i].max(p[i] as f64)))
    });
    let center = Vector3::from(std::array::from_fn::<f64, 3, _>(|i| 0.5 * (lo[i] + hi[i])));
    let extent = (0..3).map(|i| hi[i] - lo[i]).fold(1e-3, f64::max);
    let cameras: Vec<Camera> = (0..4)
        .map(|k| {
            let yaw = k as f64 * std::f64::consts::FRAC_PI_2;
            let eye = center + 1.5 * extent * Vector3::new(yaw.sin(), 0.0, -yaw.cos());
            Camera::look_at(eye, center, Vector3::new(0.0, -1.0, 0.0), 1.48, 1.2, 80, 60)
        })
        .collect();
    let truth: Vec<_> = cameras.iter().map(|c| render(frame, c, DEFAULT_VIS_THRESHOLD).color).collect();
    let specs: Vec<AttributeSpec> = codebooks.codebooks.iter().map(|c| c.spec.clone()).collect();
    let mut failure = None;
    let schedule = LodSchedule::sweep(&specs, |layers| {
        let rebuilt = codebooks
            .reconstruct(&positions, &quantized, layers)
            .map_err(SimError::from)
            .and_then(|gs| Ok(GaussianFrame::new(frame.frame_index, frame.sh_degree, gs)?));
        match rebuilt {
            Ok(f) => cameras.iter().zip(&truth).map(|(c, t)| psnr(&render(&f, c, DEFAULT_VIS_THRESHOLD).color, t).map_or(0.0, |p| p.min(100.0))).sum::<f64>() / 4.0,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NEG_INFINITY
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(schedule),
    }
}
