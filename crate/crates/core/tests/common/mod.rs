//! Oracles and fixtures shared by the integration tests.

#![allow(dead_code)]

use std::sync::OnceLock;

use gsvv::gaussian_model::{Gaussian, GaussianFrame};
use gsvv::image::{DepthMap, Image, Mask};
use gsvv::prpa::{align, warp, AlignOptions, Sampling};
use gsvv::renderer::Camera;
use gsvv::sim::{default_fov_model, encode_frames, generate_scene, EncodedVideo, SimConfig};
use gsvv::viewport_fov::{FovLstm, ViewportTrace};
use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_gaussian(rng: &mut ChaCha8Rng, degree: u8) -> Gaussian {
    let mut g = Gaussian::isotropic(
        [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)],
        rng.gen_range(-3.0..0.0),
        rng.gen_range(-4.0..4.0),
        degree,
    );
    for s in &mut g.scale {
        *s += rng.gen_range(-0.5..0.5);
    }
    let q: [f32; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0f32));
    let n = q.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-3);
    let sign = if q[0] < 0.0 { -1.0 } else { 1.0 };
    g.rotation = q.map(|v| sign * v / n);
    g.sh.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    g
}

pub fn random_frame(seed: u64, n: usize, degree: u8) -> GaussianFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GaussianFrame::new(seed, degree, (0..n).map(|_| random_gaussian(&mut rng, degree)).collect()).unwrap()
}

pub fn smooth_texture(w: usize, h: usize) -> Image {
    Image::from_fn(w, h, |x, y| {
        let (u, v) = (x as f32 / w as f32, y as f32 / h as f32);
        [
            0.5 + 0.4 * (6.0 * u).sin() * (4.0 * v).cos(),
            0.5 + 0.4 * (5.0 * v + 1.0).sin(),
            0.3 + 0.6 * u * v,
        ]
    })
}

pub fn axis_camera(center: Vector3<f64>, w: usize, h: usize) -> Camera {
    Camera::from_pose(center, UnitQuaternion::identity(), 1.48, 1.2, w, h)
}

/// Client at the origin, reference shifted by `baseline` along x, both
/// looking down +z at an opaque square `|x|,|y| <= half` at `z = near`
/// in front of an infinite plane at `z = far`. Returns the client depth
/// map and the client pixels that see the far plane where the reference
/// sees the square.
pub struct TwoPlanes {
    pub cam_l: Camera,
    pub cam_r: Camera,
    pub depth: DepthMap,
    pub band: Mask,
}

pub fn two_planes(w: usize, h: usize, baseline: f64, near: f64, far: f64, half: f64) -> TwoPlanes {
    let cam_l = axis_camera(Vector3::zeros(), w, h);
    let cam_r = axis_camera(Vector3::new(baseline, 0.0, 0.0), w, h);
    let ray = |x: usize, y: usize| ((x as f64 - cam_l.cx()) / cam_l.fx(), (y as f64 - cam_l.cy()) / cam_l.fy());
    let in_square = |x: f64, y: f64| x.abs() <= half && y.abs() <= half;
    let depth = DepthMap::from_fn(w, h, |x, y| {
        let (dx, dy) = ray(x, y);
        if in_square(near * dx, near * dy) {
            near as f32
        } else {
            far as f32
        }
    });
    let mut band = Mask::new(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = ray(x, y);
            if in_square(near * dx, near * dy) {
                continue;
            }
            // segment from the reference center to the far-plane point
            let t = near / far;
            let (px, py) = (far * dx, far * dy);
            if in_square(baseline + (px - baseline) * t, py * t) {
                band.set(x, y, true);
            }
        }
    }
    TwoPlanes { cam_l, cam_r, depth, band }
}

pub fn iou(a: &Mask, b: &Mask) -> f64 {
    let inter = a.data.iter().zip(&b.data).filter(|(x, y)| **x && **y).count();
    let union = a.data.iter().zip(&b.data).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Resamples `reference` into `cam_l` through the rotation-only
/// homography `K_r R_r R_lᵀ K_l⁻¹`, with bilinear lookups. Pixels whose
/// sample falls outside the reference are left out of the mask.
pub fn homography_resample(reference: &Image, cam_l: &Camera, cam_r: &Camera) -> (Image, Mask) {
    let h = cam_r.k * cam_r.r * cam_l.r.transpose() * cam_l.k.try_inverse().unwrap();
    let (w, hh) = (cam_l.width, cam_l.height);
    let mut out = Image::new(w, hh);
    let mut mask = Mask::new(w, hh, false);
    for y in 0..hh {
        for x in 0..w {
            let p = h * Vector3::new(x as f64, y as f64, 1.0);
            if p.z <= 0.0 {
                continue;
            }
            let (i, j) = (p.x / p.z, p.y / p.z);
            if i < -0.5 || j < -0.5 || i > cam_r.width as f64 - 0.5 || j > cam_r.height as f64 - 0.5 {
                continue;
            }
            out.set(x, y, reference.sample_bilinear(i, j));
            mask.set(x, y, true);
        }
    }
    (out, mask)
}

/// Fraction of `actual` pixels whose fixed-depth point lands inside
/// `reference`, computed from the raw matrices.
pub fn plane_coverage(reference: &Camera, actual: &Camera, depth: f64) -> f64 {
    let kinv = actual.k.try_inverse().unwrap();
    let mut inside = 0usize;
    for y in 0..actual.height {
        for x in 0..actual.width {
            let ray = kinv * Vector3::new(x as f64, y as f64, 1.0);
            let cam = ray / ray.z * depth;
            let world = actual.r.transpose() * (cam - actual.t);
            let c = reference.r * world + reference.t;
            if c.z <= 0.0 {
                continue;
            }
            let p = reference.k * c;
            let (u, v) = (p.x / p.z, p.y / p.z);
            if u >= -0.5 && v >= -0.5 && u <= reference.width as f64 - 0.5 && v <= reference.height as f64 - 0.5 {
                inside += 1;
            }
        }
    }
    inside as f64 / (actual.width * actual.height) as f64
}

/// Default 60-frame scene, its encoding and the default FoV model, built
/// once per test binary.
pub struct SimFixture {
    pub config: SimConfig,
    pub frames: Vec<GaussianFrame>,
    pub video: EncodedVideo,
    pub model: FovLstm,
}

pub fn sim_fixture() -> &'static SimFixture {
    static FIXTURE: OnceLock<SimFixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let config = SimConfig { timing: false, ..SimConfig::default() };
        let frames = generate_scene(&config.scene).unwrap().frames().unwrap();
        let video = encode_frames(&frames, &config.encode).unwrap();
        let model = default_fov_model(&config).unwrap();
        SimFixture { config, frames, video, model }
    })
}

/// Viewer at the origin sweeping its yaw as `amplitude * sin(rate * t)`.
pub fn yaw_trace(frames: usize, amplitude: f64, rate: f64) -> ViewportTrace {
    ViewportTrace::turning(frames, 30.0, Vector3::zeros(), move |t| amplitude * (rate * t).sin())
}

pub fn moderate_turn(frames: usize) -> ViewportTrace {
    yaw_trace(frames, 0.4, 2.0)
}

pub fn fast_turn(frames: usize) -> ViewportTrace {
    yaw_trace(frames, 0.8, 4.0)
}

pub struct TwoPlaneResult {
    pub iou: f64,
    pub band: usize,
    pub iterations: usize,
    pub limit: usize,
    pub filled: usize,
    pub occluded: usize,
}

pub fn two_plane_check() -> TwoPlaneResult {
    let s = two_planes(160, 120, 0.8, 2.0, 5.0, 0.6);
    let opts = AlignOptions::new(0.5);
    let w = warp(&smooth_texture(160, 120), &s.depth, &s.cam_l, &s.cam_r, &opts);
    let out = align(&smooth_texture(160, 120), &s.depth, &s.cam_l, &s.cam_r, &opts);
    TwoPlaneResult {
        iou: iou(&w.occluded, &s.band),
        band: s.band.count(),
        iterations: out.stats.iterations,
        limit: 160 + 120,
        filled: out.stats.filled,
        occluded: out.occluded.count(),
    }
}

/// `(within one gray level, covered)` pixel counts of a pure-rotation
/// alignment against the homography, for a full-size and a quarter-size
/// reference.
pub fn rotation_check() -> Vec<(usize, usize)> {
    let cam_l = Camera::from_pose(Vector3::new(0.5, 0.0, -1.0), UnitQuaternion::from_euler_angles(0.02, 0.1, 0.0), 1.48, 1.2, 160, 120);
    [(160, 120), (40, 30)]
        .into_iter()
        .enumerate()
        .map(|(k, (w, h))| {
            let rot = UnitQuaternion::from_euler_angles(-0.04, 0.12 + 0.05 * k as f64, 0.03);
            let cam_r = Camera::from_pose(cam_l.center(), rot, 1.6, 1.3, w, h);
            let reference = smooth_texture(w, h);
            let depth = DepthMap::from_fn(160, 120, |_, _| 6.0);
            let out = align(&reference, &depth, &cam_l, &cam_r, &AlignOptions::new(0.5));
            let (want, inside) = homography_resample(&reference, &cam_l, &cam_r);
            let covered = out.covered();
            let (mut n, mut good) = (0, 0);
            for p in 0..160 * 120 {
                if covered.data[p] && inside.data[p] {
                    n += 1;
                    good += (0..3).all(|c| (out.aligned.data[3 * p + c] - want.data[3 * p + c]).abs() * 255.0 <= 1.0) as usize;
                }
            }
            (good, n)
        })
        .collect()
}

/// Bit-exactness and occluded count of a same-camera nearest alignment.
pub fn identity_check() -> (bool, usize) {
    let cam = Camera::from_pose(Vector3::new(0.2, -0.4, 1.0), UnitQuaternion::from_euler_angles(0.05, -0.3, 0.02), 1.48, 1.2, 160, 120);
    let reference = smooth_texture(160, 120);
    let depth = DepthMap::from_fn(160, 120, |x, y| 2.0 + ((x * 7 + y * 3) % 11) as f32 * 0.3);
    let out = align(&reference, &depth, &cam, &cam, &AlignOptions { sampling: Sampling::Nearest, ..AlignOptions::new(0.5) });
    (out.aligned == reference, out.occluded.count())
}
