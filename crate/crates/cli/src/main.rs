use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gsvv::gaussian_model::{load_frame, save_frame, FrameFormat, GaussianFrame};
use gsvv::image::{DepthMap, Image, Mask};
use gsvv::metrics::{plot_series, psnr, ssim};
use gsvv::prpa::{align, AlignOptions};
use gsvv::renderer::{render, Camera, DEFAULT_VIS_THRESHOLD};
use gsvv::restore::restore;
use gsvv::sim::*;
use gsvv::viewport_fov::{build_sequence, rolling_predict, train_fov, FovLstm, SequenceConfig, TrainConfig, ViewportTrace};
use nalgebra::Vector3;

#[derive(Parser)]
#[command(name = "gsvv", version, about = "Layered Gaussian-splat video coding and streaming simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Schedule {
    Default,
    Sweep,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic scene as frame files, a viewport trace and the
    /// client and reference cameras of its first viewport.
    GenScene {
        #[arg(long)]
        out: PathBuf,
        /// Simulation config whose `[scene]` table is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write text frames instead of binary.
        #[arg(long)]
        text: bool,
    },
    /// Encode a directory of frame files into tiled LoD containers.
    Encode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        tile_size_key: usize,
        #[arg(long, default_value_t = 128)]
        tile_size_diff: usize,
        #[arg(long, value_enum, default_value_t = Schedule::Default)]
        schedule: Schedule,
        /// Frames per group of frames; 0 keeps one group.
        #[arg(long, default_value_t = 0)]
        gof: usize,
    },
    /// Render one frame from a camera.
    Render {
        #[arg(long)]
        frame: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        out_color: PathBuf,
        #[arg(long)]
        out_depth: Option<PathBuf>,
    },
    /// Warp a reference image into a client view using the client depth.
    Align {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        ref_cam: PathBuf,
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        client_cam: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pixels that may guide restoration.
        #[arg(long)]
        out_mask: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        threshold: f64,
        #[arg(long, default_value_t = 2)]
        k: usize,
    },
    /// Restore a distorted render against an aligned reference.
    Restore {
        #[arg(long)]
        distorted: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        window: usize,
    },
    /// Train the FoV model on a directory of viewport traces.
    TrainFov {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        hidden: usize,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-2)]
        lr: f64,
        /// Traces per update; 0 uses all of them.
        #[arg(long, default_value_t = 0)]
        batch: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Score a FoV model on one trace.
    FovEval {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 1)]
        refresh: usize,
    },
    /// Run the streaming simulation.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Viewport trace; defaults to a seeded turning trace.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Frame directory to stream instead of the configured scene.
        #[arg(long)]
        frames: Option<PathBuf>,
        #[arg(long)]
        mbps: Option<f64>,
        /// Also write per-frame PNGs.
        #[arg(long)]
        save_frames: bool,
        /// Also plot restored and distorted PSNR per frame.
        #[arg(long)]
        plot: bool,
    },
    /// PSNR and SSIM of an image against a reference.
    Metrics {
        #[arg(long)]
        image: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Data(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Internal(_) => 3,
        }
    }
}

fn data(e: impl Display) -> Failure {
    Failure::Data(e.to_string())
}

fn sim(e: SimError) -> Failure {
    match e {
        SimError::Config(m) => Failure::Usage(m),
        e => data(e),
    }
}

fn at(path: &Path) -> impl Fn(String) -> Failure + '_ {
    move |e| Failure::Data(format!("{}: {e}", path.display()))
}

fn read_camera(path: &Path) -> Result<Camera, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| at(path)(e.to_string()))?;
    Camera::from_json(&text).map_err(|e| at(path)(e.to_string()))
}

fn frame_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| at(dir)(e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(at(dir)("no files".into()));
    }
    Ok(files)
}

fn load_frames(dir: &Path) -> Result<Vec<GaussianFrame>, Failure> {
    // frame files carry no index; file order assigns it
    let files = frame_files(dir)?;
    files
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut f = load_frame(p).map_err(|e| at(p)(e.to_string()))?;
            f.frame_index = i as u64;
            Ok(f)
        })
        .collect()
}

fn default_trace(cfg: &SimConfig) -> ViewportTrace {
    ViewportTrace::turning(cfg.scene.frames, cfg.fps, Vector3::zeros(), |t| 0.4 * (2.0 * t).sin())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenScene { out, config, frames, seed, text } => {
            let mut cfg = match config {
                Some(p) => SimConfig::load(&p).map_err(sim)?,
                None => SimConfig::default(),
            };
            cfg.scene.frames = frames.unwrap_or(cfg.scene.frames);
            cfg.scene.seed = seed.unwrap_or(cfg.scene.seed);
            let frames = generate_scene(&cfg.scene).map_err(data)?.frames().map_err(data)?;
            let dir = out.join("frames");
            std::fs::create_dir_all(&dir).map_err(data)?;
            let (format, ext) = if text { (FrameFormat::Text, "txt") } else { (FrameFormat::Binary, "gsvv") };
            for (i, f) in frames.iter().enumerate() {
                save_frame(dir.join(format!("frame_{i:05}.{ext}")), f, format).map_err(data)?;
            }
            let trace = default_trace(&cfg);
            trace.save(out.join("viewport.csv")).map_err(data)?;
            // client and enlarged reference cameras at the first viewport
            let v = &trace.samples[0];
            let (fx, fy) = (cfg.fov_x * (1.0 + cfg.fixed_fov_margin), cfg.fov_y * (1.0 + cfg.fixed_fov_margin));
            std::fs::write(out.join("camera.json"), cfg.client_camera(&trace, 0).to_json()).map_err(data)?;
            std::fs::write(out.join("ref_camera.json"), v.camera(fx, fy, cfg.ref_width, cfg.ref_height).to_json()).map_err(data)?;
            println!("{} frames of {} gaussians in {}", frames.len(), frames[0].len(), dir.display());
        }
        Command::Encode { input, out, tile_size_key, tile_size_diff, schedule, gof } => {
            if tile_size_key == 0 || tile_size_diff == 0 {
                return Err(Failure::Usage("tile sizes must be positive".into()));
            }
            let frames = load_frames(&input)?;
            let schedule = match schedule {
                Schedule::Default => ScheduleMode::Default,
                Schedule::Sweep => ScheduleMode::Sweep,
            };
            let cfg = EncodeConfig { tile_size: tile_size_key, diff_tile_size: tile_size_diff, schedule, gof, ..EncodeConfig::default() };
            let video = encode_frames(&frames, &cfg).map_err(sim)?;
            video.save(&out).map_err(sim)?;
            let bytes: u64 = video.containers.iter().map(|c| c.total_bytes()).sum();
            println!("{} frames, {} bytes of containers, {} bytes of codebooks", video.containers.len(), bytes, video.codebook_bytes());
        }
        Command::Render { frame, camera, out_color, out_depth } => {
            let f = load_frame(&frame).map_err(|e| at(&frame)(e.to_string()))?;
            let cam = read_camera(&camera)?;
            let r = render(&f, &cam, DEFAULT_VIS_THRESHOLD);
            r.color.save_png(&out_color).map_err(data)?;
            if let Some(p) = out_depth {
                r.depth.save(&p).map_err(data)?;
            }
            println!("{} visible gaussians", r.visible_ids.len());
        }
        Command::Align { reference, ref_cam, depth, client_cam, out, out_mask, threshold, k } => {
            let a = Image::load(&reference).map_err(|e| at(&reference)(e.to_string()))?;
            let d = DepthMap::load(&depth).map_err(|e| at(&depth)(e.to_string()))?;
            let cam_r = read_camera(&ref_cam)?;
            let cam_l = read_camera(&client_cam)?;
            if (a.width, a.height) != (cam_r.width, cam_r.height) {
                return Err(Failure::Data(format!("reference is {}x{} but its camera is {}x{}", a.width, a.height, cam_r.width, cam_r.height)));
            }
            if (d.width, d.height) != (cam_l.width, cam_l.height) {
                return Err(Failure::Data(format!("depth is {}x{} but the client camera is {}x{}", d.width, d.height, cam_l.width, cam_l.height)));
            }
            let o = align(&a, &d, &cam_l, &cam_r, &AlignOptions { k, ..AlignOptions::new(threshold) });
            o.aligned.save_png(&out).map_err(data)?;
            if let Some(p) = out_mask {
                o.covered().save_png(&p).map_err(data)?;
            }
            println!("{} occluded, {} uncovered, {} erosion iterations", o.occluded.count(), o.uncovered.count(), o.stats.iterations);
        }
        Command::Restore { distorted, reference, mask, out, window } => {
            let dist = Image::load(&distorted).map_err(|e| at(&distorted)(e.to_string()))?;
            let r = Image::load(&reference).map_err(|e| at(&reference)(e.to_string()))?;
            dist.same_shape(&r).map_err(data)?;
            let m = match mask {
                Some(p) => Mask::load(&p).map_err(|e| at(&p)(e.to_string()))?,
                None => Mask::new(dist.width, dist.height, true),
            };
            if (m.width, m.height) != (dist.width, dist.height) {
                return Err(Failure::Data("mask size differs from the images".into()));
            }
            restore(&dist, &r, &m, window).save_png(&out).map_err(data)?;
        }
        Command::TrainFov { traces, out, hidden, epochs, lr, batch, seed } => {
            if hidden == 0 || !(lr > 0.0) {
                return Err(Failure::Usage("hidden and lr must be positive".into()));
            }
            let ts = frame_files(&traces)?
                .iter()
                .map(|p| ViewportTrace::load(p).map_err(|e| at(p)(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            let mut model = FovLstm::new(hidden, seed);
            let report = train_fov(&mut model, &ts, &SequenceConfig::default(), &TrainConfig { epochs, lr, batch, ..TrainConfig::default() }).map_err(data)?;
            model.save(&out).map_err(data)?;
            let first = report.losses.first().copied().unwrap_or(report.final_loss);
            println!("{} traces, loss {first:.5} -> {:.5}", ts.len(), report.final_loss);
        }
        Command::FovEval { trace, ckpt, refresh } => {
            let t = ViewportTrace::load(&trace).map_err(|e| at(&trace)(e.to_string()))?;
            let model = FovLstm::load(&ckpt).map_err(|e| at(&ckpt)(e.to_string()))?;
            let cfg = SequenceConfig::default();
            let seq = build_sequence(&t, &cfg);
            let pred = rolling_predict(&model, &t, &cfg, refresh);
            let n = seq.targets.len().min(pred.len());
            if n == 0 {
                return Err(Failure::Data("trace too short".into()));
            }
            let mae = seq.targets.iter().zip(&pred).map(|(g, p)| 0.5 * ((g[0] - p.sx).abs() + (g[1] - p.sy).abs())).sum::<f64>() / n as f64;
            let under = seq.targets.iter().zip(&pred).filter(|(g, p)| p.sx < g[0] || p.sy < g[1]).count();
            println!("frames {n}, mean abs error {mae:.5}, under-predicted {under}");
        }
        Command::Simulate { config, out, trace, frames, mbps, save_frames, plot } => {
            let mut cfg = match config {
                Some(p) => SimConfig::load(&p).map_err(sim)?,
                None => SimConfig::default(),
            };
            if let Some(m) = mbps {
                cfg.mbps = m;
            }
            cfg.validate().map_err(sim)?;
            let frames = match frames {
                Some(dir) => load_frames(&dir)?,
                None => generate_scene(&cfg.scene).map_err(data)?.frames().map_err(data)?,
            };
            cfg.scene.frames = frames.len();
            let trace = match trace {
                Some(p) => ViewportTrace::load(&p).map_err(|e| at(&p)(e.to_string()))?,
                None => default_trace(&cfg),
            };
            let video = encode_frames(&frames, &cfg.encode).map_err(sim)?;
            let bandwidth = cfg.bandwidth().map_err(sim)?;
            let model = match cfg.fov_mode {
                FovMode::Adaptive => Some(match &cfg.fov_checkpoint {
                    Some(p) => FovLstm::load(p).map_err(|e| at(p)(e.to_string()))?,
                    None => default_fov_model(&cfg).map_err(sim)?,
                }),
                _ => None,
            };
            let frame_dir = save_frames.then(|| out.join("frames"));
            let inputs = SimInputs { video: &video, frames: &frames, trace: &trace, bandwidth: &bandwidth, fov_model: model.as_ref(), frame_dir: frame_dir.as_deref() };
            let output = simulate(&cfg, &inputs).map_err(sim)?;
            output.save(&out).map_err(sim)?;
            if plot {
                let restored: Vec<f64> = output.report.frames.iter().map(|f| f.psnr).collect();
                let distorted: Vec<f64> = output.report.frames.iter().map(|f| f.psnr_distorted).collect();
                plot_series(out.join("psnr.png"), &[&restored, &distorted], 480, 240).map_err(data)?;
            }
            print!("{}", output.report.summary_text());
        }
        Command::Metrics { image, reference } => {
            let a = Image::load(&image).map_err(|e| at(&image)(e.to_string()))?;
            let b = Image::load(&reference).map_err(|e| at(&reference)(e.to_string()))?;
            let p = psnr(&a, &b).map_err(data)?;
            let s = ssim(&a, &b).map_err(data)?;
            println!("psnr {p:.4}\nssim {s:.6}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = std::panic::catch_unwind(|| run(cli)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(Failure::Internal(msg.unwrap_or_else(|| "panic".into())))
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, msg) = match &f {
                Failure::Usage(m) => ("usage", m),
                Failure::Data(m) => ("data", m),
                Failure::Internal(m) => ("internal", m),
            };
            eprintln!("gsvv: {kind} error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
