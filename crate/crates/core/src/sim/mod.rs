//! Trace-driven streaming simulation.
//!
//! Per frame the server predicts the viewport `buffer` frames ahead, picks
//! a FoV scale, renders a low-resolution reference from the full-quality
//! decode, and plans tiles and LoDs under the frame budget. The client
//! decodes what it received, renders at the actual viewport, aligns the
//! reference, restores colors and is scored against the uncompressed
//! render at the same viewport.
//!
//! The codebooks and the base LoD of the first keyframe are delivered
//! before frame 0 and reported as bootstrap bytes.

pub mod encode;
pub mod scene;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptation::{frame_budget, plans_to_csv, visible_tiles, AdaptationError, BandwidthTrace, FramePlan, Planner, TileCandidate, TileKey};
use crate::gaussian_model::{Gaussian, GaussianFrame, ModelError};
use crate::image::{Image, ImageError, Mask};
use crate::metrics::{psnr, ssim, FrameQuality, QualityReport};
use crate::prpa::{align, AlignOptions, AlignmentOutput};
use crate::renderer::{render_gaussians, Camera, RenderOptions};
use crate::restore::{LocalStatTransfer, Restorer};
use crate::svq::SvqError;
use crate::tiling_lod::{decode_container, decode_tile, TilingError};
use crate::viewport_fov::train::{predicted_at, SequenceConfig};
use crate::viewport_fov::{approx_ground_truth_fov, rolling_predict, train_fov, FovConfig, FovError, FovLstm, FovScale, TrainConfig, ViewportTrace};

pub use encode::{encode_frames, encode_video, sweep_schedule, EncodeConfig, EncodedVideo, ScheduleMode, VideoIndex};
pub use scene::{generate_scene, plane_gaussians, SceneSpec};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("frame {frame}: {source}")]
    Frame { frame: usize, source: Box<SimError> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Svq(#[from] SvqError),
    #[error(transparent)]
    Tiling(#[from] TilingError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Fov(#[from] FovError),
    #[error(transparent)]
    Adaptation(#[from] AdaptationError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FovMode {
    /// LSTM-predicted scale.
    Adaptive,
    /// Constant `fixed_fov_margin` enlargement.
    Fixed,
    /// Corner-based scale computed from the actual viewport.
    Oracle,
}

/// Simulation settings; the TOML config file uses these field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub width: usize,
    pub height: usize,
    pub fov_x: f64,
    pub fov_y: f64,
    pub ref_width: usize,
    pub ref_height: usize,
    /// The reference is rendered this many times larger per axis and
    /// box-filtered down.
    pub ref_supersample: usize,
    /// Prediction horizon in frames.
    pub buffer: usize,
    pub fps: f64,
    /// Fixed bandwidth; ignored when `bandwidth_trace` is set.
    pub mbps: f64,
    pub bandwidth_trace: Option<PathBuf>,
    /// Multiplies every bandwidth value. The default maps rates meant for
    /// a 1600×1200 client onto the 1/100 pixel count of 160×120.
    pub bandwidth_scale: f64,
    pub fov_mode: FovMode,
    pub fixed_fov_margin: f64,
    pub fov_checkpoint: Option<PathBuf>,
    /// Actual viewports reach the server every this many frames.
    pub refresh_period: usize,
    pub fixed_depth: f64,
    pub prpa: bool,
    pub restore: bool,
    pub restore_window: usize,
    /// PRPA depth agreement threshold, world units.
    pub occlusion_threshold: f64,
    pub erosion_k: usize,
    /// Reference image bytes charged per frame, as a fraction of its raw
    /// RGB size.
    pub reference_overhead: f64,
    /// Resend lower layers with every upgrade.
    pub resend: bool,
    pub vis_threshold: f32,
    pub seed: u64,
    /// Record wall-clock decode time; off makes reports byte-reproducible.
    pub timing: bool,
    pub encode: EncodeConfig,
    pub scene: SceneSpec,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            width: 160,
            height: 120,
            fov_x: 1.48,
            fov_y: 1.20,
            ref_width: 40,
            ref_height: 30,
            ref_supersample: 4,
            buffer: 6,
            fps: 30.0,
            mbps: 60.0,
            bandwidth_scale: 0.01,
            bandwidth_trace: None,
            fov_mode: FovMode::Adaptive,
            fixed_fov_margin: 0.1,
            fov_checkpoint: None,
            refresh_period: 1,
            fixed_depth: 10.0,
            prpa: true,
            restore: true,
            restore_window: 8,
            occlusion_threshold: 0.1,
            erosion_k: 2,
            reference_overhead: 0.1,
            resend: false,
            vis_threshold: crate::renderer::DEFAULT_VIS_THRESHOLD,
            seed: 1,
            timing: true,
            encode: EncodeConfig::default(),
            scene: SceneSpec::default(),
        }
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: &str| Err(SimError::Config(s.to_string()));
        if self.width == 0 || self.height == 0 || self.ref_width == 0 || self.ref_height == 0 || self.ref_supersample == 0 {
            return bad("resolutions must be positive");
        }
        if self.buffer == 0 {
            return bad("buffer must be at least 1");
        }
        if !(self.fps > 0.0) || !(self.mbps >= 0.0) || !(self.bandwidth_scale >= 0.0) {
            return bad("fps must be positive, mbps and bandwidth_scale non-negative");
        }
        let pi = std::f64::consts::PI;
        if !(self.fov_x > 0.0 && self.fov_x < pi && self.fov_y > 0.0 && self.fov_y < pi) {
            return bad("fov must lie in (0, pi)");
        }
        if self.restore_window == 0 {
            return bad("restore_window must be at least 1");
        }
        Ok(())
    }

    pub fn bandwidth(&self) -> Result<BandwidthTrace> {
        match &self.bandwidth_trace {
            Some(p) => Ok(BandwidthTrace::load(p)?),
            None => Ok(BandwidthTrace::constant(self.mbps)),
        }
    }

    pub fn sequence_config(&self) -> SequenceConfig {
        SequenceConfig {
            horizon: self.buffer,
            fov_x: self.fov_x,
            fov_y: self.fov_y,
            width: self.width,
            height: self.height,
            fov: FovConfig { fixed_depth: self.fixed_depth, ..FovConfig::default() },
        }
    }

    pub fn client_camera(&self, trace: &ViewportTrace, frame: usize) -> Camera {
        trace.samples[frame].camera(self.fov_x, self.fov_y, self.width, self.height)
    }
}

/// Training traces for the default FoV model, disjoint from the
/// evaluation traces built from `seed`.
pub fn training_traces(seed: u64, frames: usize, fps: f64) -> Vec<ViewportTrace> {
    let eye = nalgebra::Vector3::zeros();
    (0..8u64)
        .map(|k| {
            let a = 0.5 + 0.05 * ((seed + k) % 8) as f64;
            let w = 2.0 + 0.4 * k as f64;
            let phase = 0.4 * k as f64 + 0.1 * (seed % 5) as f64;
            ViewportTrace::turning(frames, fps, eye, move |t| a * (w * t + phase).sin())
        })
        .collect()
}

/// Training schedule of the default FoV model.
pub const DEFAULT_MODEL_TRAINING: TrainConfig = TrainConfig { epochs: 500, lr: 0.05, clip: 1.0, batch: 1 };

/// LSTM trained on [`training_traces`] with [`DEFAULT_MODEL_TRAINING`].
pub fn default_fov_model(cfg: &SimConfig) -> Result<FovLstm> {
    let mut model = FovLstm::new(32, cfg.seed.wrapping_add(1000));
    let traces = training_traces(cfg.seed.wrapping_add(1000), 120, cfg.fps);
    train_fov(&mut model, &traces, &cfg.sequence_config(), &DEFAULT_MODEL_TRAINING)?;
    Ok(model)
}

pub struct SimInputs<'a> {
    pub video: &'a EncodedVideo,
    /// Uncompressed frames for ground truth.
    pub frames: &'a [GaussianFrame],
    pub trace: &'a ViewportTrace,
    pub bandwidth: &'a BandwidthTrace,
    /// Required for [`FovMode::Adaptive`].
    pub fov_model: Option<&'a FovLstm>,
    /// Per-frame PNGs are written here when set.
    pub frame_dir: Option<&'a Path>,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub report: QualityReport,
    pub plans: Vec<FramePlan>,
    pub scales: Vec<FovScale>,
}

impl SimOutput {
    /// Writes `report.csv`, `plan.csv` and `summary.txt` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.csv"), self.report.to_csv())?;
        std::fs::write(dir.join("plan.csv"), plans_to_csv(&self.plans))?;
        std::fs::write(dir.join("summary.txt"), self.report.summary_text())?;
        Ok(())
    }
}

fn with_frame<T>(frame: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| SimError::Frame { frame, source: Box::new(e) })
}

fn scales_for(cfg: &SimConfig, inputs: &SimInputs, n: usize) -> Result<Vec<FovScale>> {
    let seq = cfg.sequence_config();
    let trace = ViewportTrace { samples: inputs.trace.samples[..n].to_vec() };
    Ok(match cfg.fov_mode {
        FovMode::Fixed => vec![FovScale::new(cfg.fixed_fov_margin, cfg.fixed_fov_margin); n],
        FovMode::Oracle => (0..n)
            .map(|i| {
                let pred = predicted_at(&trace, i, cfg.buffer);
                let pc = pred.camera(cfg.fov_x, cfg.fov_y, cfg.width, cfg.height);
                approx_ground_truth_fov(&pc, &cfg.client_camera(&trace, i), &seq.fov)
            })
            .collect(),
        FovMode::Adaptive => {
            let model = inputs.fov_model.ok_or_else(|| SimError::Config("adaptive FoV needs a model".into()))?;
            rolling_predict(model, &trace, &seq, cfg.refresh_period)
        }
    })
}

fn set_items(state: &mut [Option<(u64, Gaussian)>], frame: u64, items: Vec<(u32, Gaussian)>) -> Result<()> {
    for (id, g) in items {
        let slot = state.get_mut(id as usize).ok_or_else(|| SimError::Data(format!("gaussian id {id} out of range")))?;
        if slot.as_ref().map_or(true, |(v, _)| *v <= frame) {
            *slot = Some((frame, g));
        }
    }
    Ok(())
}

fn render_state(state: &[Option<(u64, Gaussian)>], degree: u8, cam: &Camera, opts: &RenderOptions) -> crate::renderer::RenderOutput {
    render_gaussians(state.iter().enumerate().filter_map(|(i, s)| s.as_ref().map(|(_, g)| (i as u32, g))), degree, cam, opts)
}

pub fn simulate(cfg: &SimConfig, inputs: &SimInputs) -> Result<SimOutput> {
    cfg.validate()?;
    let video = inputs.video;
    let n = video.containers.len().min(inputs.frames.len()).min(inputs.trace.len());
    if n == 0 {
        return Err(SimError::Data("nothing to simulate: empty video or trace".into()));
    }
    let count = video.index.gaussian_count;
    let degree = video.index.sh_degree;
    let scales = scales_for(cfg, inputs, n)?;
    let opts = RenderOptions { vis_threshold: cfg.vis_threshold, ..RenderOptions::default() };
    let align_opts = AlignOptions { k: cfg.erosion_k, ..AlignOptions::new(cfg.occlusion_threshold) };
    let restorer = LocalStatTransfer { window: cfg.restore_window, ..LocalStatTransfer::default() };
    let overhead = ((cfg.ref_width * cfg.ref_height * 3) as f64 * cfg.reference_overhead).round() as u64;
    let max_fov = std::f64::consts::PI - 1e-3;

    let mut server: Vec<Option<(u64, Gaussian)>> = vec![None; count];
    let mut client: Vec<Option<(u64, Gaussian)>> = vec![None; count];
    let mut owner: HashMap<u32, TileKey> = HashMap::new();
    let mut planner = Planner::new(cfg.resend);
    let mut report = QualityReport::default();
    let mut plans = Vec::with_capacity(n);

    let first = &video.containers[0];
    report.bootstrap_bytes = video.codebook_bytes() + (0..first.tile_count()).map(|t| first.level_bytes(t, 0)).sum::<u64>();
    for t in 0..first.tile_count() {
        let items = with_frame(0, decode_tile(first, t, &video.codebooks, 0).map_err(SimError::from))?;
        set_items(&mut client, 0, items)?;
        planner.mark_sent((0, first.manifest.tiles[t].tile_id), 0);
    }

    for i in 0..n {
        with_frame(i, (|| {
            let container = &video.containers[i];
            let fi = i as u64;
            if video.is_gof_start(i) {
                owner.clear();
                if i > 0 {
                    planner.reset();
                }
            }
            for tile in &container.tiles {
                for id in &tile.gaussian_ids {
                    owner.insert(*id, (fi, tile.tile_id));
                }
            }
            let full = vec![container.max_level(); container.tile_count()];
            set_items(&mut server, fi, decode_container(container, &video.codebooks, &full)?)?;

            let cam_l = cfg.client_camera(inputs.trace, i);
            let pred = predicted_at(inputs.trace, i, cfg.buffer);
            let (fx, fy) = scales[i].apply(cfg.fov_x, cfg.fov_y);
            let cam_r = pred.camera(fx.min(max_fov), fy.min(max_fov), cfg.ref_width, cfg.ref_height);
            let ss = cfg.ref_supersample;
            let cam_ss = pred.camera(fx.min(max_fov), fy.min(max_fov), cfg.ref_width * ss, cfg.ref_height * ss);
            let mut reference = render_state(&server, degree, &cam_ss, &opts);
            if ss > 1 {
                reference.color = reference.color.downsample(ss);
            }

            let visible = visible_tiles(&reference.visible_ids, &owner);
            let candidates: Vec<TileCandidate> = visible
                .into_iter()
                .map(|(key, v)| {
                    let c = &video.containers[key.0 as usize];
                    let t = key.1 as usize;
                    TileCandidate { key, visible: v, level_bytes: (0..=c.max_level()).map(|l| c.level_bytes(t, l)).collect() }
                })
                .collect();
            let budget = (frame_budget(inputs.bandwidth, i as f64 / cfg.fps, cfg.fps).bytes as f64 * cfg.bandwidth_scale) as u64;
            let plan = planner.select(fi, &candidates, budget.saturating_sub(overhead));

            let t0 = Instant::now();
            for e in &plan.entries {
                let c = &video.containers[e.key.0 as usize];
                set_items(&mut client, e.key.0, decode_tile(c, e.key.1 as usize, &video.codebooks, e.lod)?)?;
            }
            let decode_ms = if cfg.timing { t0.elapsed().as_secs_f64() * 1e3 } else { 0.0 };

            let local = render_state(&client, degree, &cam_l, &opts);
            let truth = render_gaussians(
                inputs.frames[i].gaussians.iter().enumerate().map(|(k, g)| (k as u32, g)),
                inputs.frames[i].sh_degree,
                &cam_l,
                &opts,
            );
            let AlignmentOutput { aligned, valid, occluded, uncovered, .. } =
                align(&reference.color, &local.depth, &cam_l, &cam_r, &align_opts);
            let (guide_img, guidance) = if cfg.prpa {
                (aligned.clone(), valid.or(&occluded))
            } else {
                (reference.color.resize(cfg.width, cfg.height), Mask::new(cfg.width, cfg.height, true))
            };
            let restored = if cfg.restore { restorer.restore(&local.color, &guide_img, &guidance) } else { local.color.clone() };

            let missing = uncovered.data.iter().zip(&local.depth.data).filter(|(u, d)| **u && **d > 0.0).count();
            report.frames.push(FrameQuality {
                frame: fi,
                psnr: psnr(&restored, &truth.color)?,
                ssim: ssim(&restored, &truth.color)?,
                psnr_distorted: psnr(&local.color, &truth.color)?,
                ssim_distorted: ssim(&local.color, &truth.color)?,
                bytes: plan.used() + overhead,
                decode_ms,
                uncovered: missing as f64 / (cfg.width * cfg.height) as f64,
                starved: plan.starved,
            });
            if let Some(dir) = inputs.frame_dir {
                std::fs::create_dir_all(dir)?;
                let save = |name: &str, img: &Image| img.save_png(dir.join(format!("{i:05}_{name}.png")));
                save("truth", &truth.color)?;
                save("distorted", &local.color)?;
                save("reference", &reference.color)?;
                save("aligned", &guide_img)?;
                save("restored", &restored)?;
            }
            plans.push(plan);
            Ok(())
        })())?;
    }
    Ok(SimOutput { report, plans, scales })
}

/// Generates the configured scene, encodes it and simulates it.
pub fn simulate_scene(cfg: &SimConfig, trace: &ViewportTrace, fov_model: Option<&FovLstm>) -> Result<SimOutput> {
    let video = generate_scene(&cfg.scene)?;
    let frames = video.frames()?;
    let encoded = encode_frames(&frames, &cfg.encode)?;
    let bandwidth = cfg.bandwidth()?;
    let trained;
    let model = match (fov_model, cfg.fov_mode) {
        (Some(m), _) => Some(m),
        (None, FovMode::Adaptive) => {
            trained = match &cfg.fov_checkpoint {
                Some(p) => FovLstm::load(p)?,
                None => default_fov_model(cfg)?,
            };
            Some(&trained)
        }
        (None, _) => None,
    };
    simulate(
        cfg,
        &SimInputs { video: &encoded, frames: &frames, trace, bandwidth: &bandwidth, fov_model: model, frame_dir: None },
    )
}
