//! Seeded synthetic scenes: a curved textured wall and a floor around the
//! origin, plus Gaussian blobs, some of which drift linearly.
//!
//! World axes follow the camera convention: y points down, the default
//! viewer sits at the origin looking along +z.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::gaussian_model::{sh_len, Gaussian, GaussianFrame, GaussianVideo, Result};

const PALETTE: [[f32; 3]; 6] = [
    [0.85, 0.30, 0.25],
    [0.25, 0.55, 0.85],
    [0.90, 0.80, 0.30],
    [0.30, 0.75, 0.45],
    [0.70, 0.40, 0.80],
    [0.95, 0.60, 0.20],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub frames: usize,
    pub sh_degree: u8,
    /// Wall radius around the origin.
    pub radius: f32,
    /// Half-angle of the wall arc, radians.
    pub arc: f32,
    pub wall_spacing: f32,
    pub floor_spacing: f32,
    pub blobs: usize,
    pub blob_size: usize,
    /// The first `moving_blobs` blobs drift.
    pub moving_blobs: usize,
    /// Drift speed, world units per frame.
    pub drift: f32,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            frames: 60,
            sh_degree: 1,
            radius: 6.0,
            arc: 1.8,
            wall_spacing: 0.25,
            floor_spacing: 0.3,
            blobs: 8,
            blob_size: 60,
            moving_blobs: 3,
            drift: 0.01,
        }
    }
}

fn logit(p: f32) -> f32 {
    (p / (1.0 - p)).ln()
}

/// A slightly anisotropic, randomly oriented splat of roughly `sigma`.
fn splat(rng: &mut ChaCha8Rng, position: [f32; 3], sigma: f32, opacity: f32, rgb: [f32; 3], degree: u8) -> Gaussian {
    let o = (opacity + rng.gen_range(-0.04..0.04f32)).clamp(0.05, 0.995);
    let mut g = Gaussian::isotropic(position, sigma.ln(), logit(o), degree);
    for s in &mut g.scale {
        *s += rng.gen_range(-0.15..0.15f32);
    }
    let q: [f32; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0f32));
    let n = q.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-3);
    let sign = if q[0] < 0.0 { -1.0 } else { 1.0 };
    g.rotation = q.map(|v| sign * v / n);
    g.set_base_color(rgb);
    for v in g.sh.iter_mut().skip(3) {
        *v = rng.gen_range(-0.04..0.04);
    }
    g
}

fn wall_color(theta: f32, y: f32) -> [f32; 3] {
    let cell = ((theta * 3.0).floor() as i64 + (y * 2.0).floor() as i64).rem_euclid(PALETTE.len() as i64) as usize;
    let shade = 0.8 + 0.2 * (theta * 11.0).sin() * (y * 7.0).cos();
    PALETTE[cell].map(|c| (c * shade).clamp(0.0, 1.0))
}

fn floor_color(x: f32, z: f32) -> [f32; 3] {
    let v = if ((x * 1.5).floor() as i64 + (z * 1.5).floor() as i64).rem_euclid(2) == 0 { 0.75 } else { 0.3 };
    [v, v * 0.95, v * 0.85]
}

/// Keyframe, blob centers and per-Gaussian drift velocities.
fn keyframe(spec: &SceneSpec) -> (Vec<Gaussian>, Vec<[f32; 3]>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.sh_degree;
    let mut gs = Vec::new();
    let mut vel = Vec::new();
    let r = spec.radius;
    let n_theta = ((2.0 * spec.arc * r) / spec.wall_spacing).ceil() as usize;
    let n_y = (3.5 / spec.wall_spacing).ceil() as usize;
    for j in 0..=n_y {
        let y = -2.5 + j as f32 * spec.wall_spacing;
        for i in 0..=n_theta {
            let theta = -spec.arc + i as f32 * spec.wall_spacing / r;
            let p = [r * theta.sin(), y, r * theta.cos()];
            gs.push(splat(&mut rng, p, 0.6 * spec.wall_spacing, 0.95, wall_color(theta, y), d));
            vel.push([0.0; 3]);
        }
    }
    let mut rr = 1.5;
    while rr < r {
        let n = ((2.0 * spec.arc * rr) / spec.floor_spacing).ceil() as usize;
        for i in 0..=n {
            let theta = -spec.arc + i as f32 * spec.floor_spacing / rr;
            let (x, z) = (rr * theta.sin(), rr * theta.cos());
            gs.push(splat(&mut rng, [x, 1.0, z], 0.6 * spec.floor_spacing, 0.95, floor_color(x, z), d));
            vel.push([0.0; 3]);
        }
        rr += spec.floor_spacing;
    }
    let spread = Normal::new(0.0f32, 0.15).unwrap();
    for b in 0..spec.blobs {
        let theta = rng.gen_range(-0.7..0.7f32);
        let dist = rng.gen_range(2.5..4.5f32);
        let center = [dist * theta.sin(), rng.gen_range(-0.8..0.6f32), dist * theta.cos()];
        let base = PALETTE[b % PALETTE.len()];
        let v = if b < spec.moving_blobs {
            let a = rng.gen_range(0.0..std::f32::consts::TAU);
            [spec.drift * a.cos(), 0.0, spec.drift * a.sin()]
        } else {
            [0.0; 3]
        };
        for _ in 0..spec.blob_size {
            let p = [
                center[0] + spread.sample(&mut rng),
                center[1] + spread.sample(&mut rng),
                center[2] + spread.sample(&mut rng),
            ];
            let tint: f32 = rng.gen_range(0.85..1.1);
            let rgb = base.map(|c| (c * tint).clamp(0.0, 1.0));
            gs.push(splat(&mut rng, p, 0.06, 0.8, rgb, d));
            vel.push(v);
        }
    }
    (gs, vel)
}

impl SceneSpec {
    pub fn gaussian_count(&self) -> usize {
        keyframe(self).0.len()
    }

    /// Number of Gaussians that move between consecutive frames.
    pub fn moving_count(&self) -> usize {
        if self.drift == 0.0 {
            0
        } else {
            self.moving_blobs.min(self.blobs) * self.blob_size
        }
    }
}

/// Generates `spec.frames` frames as a keyframe plus exact differentials.
pub fn generate_scene(spec: &SceneSpec) -> Result<GaussianVideo> {
    let (gs, vel) = keyframe(spec);
    debug_assert!(gs.iter().all(|g| g.sh.len() == sh_len(spec.sh_degree)));
    let mut frames = Vec::with_capacity(spec.frames.max(1));
    let mut current = gs;
    for f in 0..spec.frames.max(1) {
        if f > 0 {
            for (g, v) in current.iter_mut().zip(&vel) {
                for k in 0..3 {
                    g.position[k] += v[k];
                }
            }
        }
        frames.push(GaussianFrame::new(f as u64, spec.sh_degree, current.clone())?);
    }
    GaussianVideo::from_frames(&frames)
}

/// Opaque fronto-parallel square of Gaussians at depth `z`, covering
/// `x0..x1` and `y0..y1`.
pub fn plane_gaussians(z: f32, x0: f32, x1: f32, y0: f32, y1: f32, spacing: f32, rgb: [f32; 3], degree: u8) -> Vec<Gaussian> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let nx = ((x1 - x0) / spacing).round() as usize;
    let ny = ((y1 - y0) / spacing).round() as usize;
    let mut out = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let mut g = splat(&mut rng, [x0 + i as f32 * spacing, y0 + j as f32 * spacing, z], 0.7 * spacing, 0.99, rgb, degree);
            g.sh.iter_mut().skip(3).for_each(|v| *v = 0.0);
            out.push(g);
        }
    }
    out
}
