//! Deterministic CPU splat rasterizer.
//!
//! Each Gaussian is projected with the EWA approximation
//! `Σ' = J W Σ Wᵀ Jᵀ + 0.3 I`, culled to its 3σ ellipse, and composited front
//! to back in `(z, id)` order within 16×16 screen tiles. Tiles are rendered
//! in parallel; every pixel sees the same splat order regardless of thread
//! count, so outputs are bit-identical across runs.
//!
//! Per pixel, blend weight `w_i = α_i Π_{j<i} (1 - α_j)`. Color is
//! `Σ w_i c_i` over a black background, depth is `Σ w_i z_i / Σ w_i` (0 where
//! nothing contributed), and a Gaussian is visible when its largest weight
//! over all pixels exceeds the visibility threshold.

pub mod camera;
pub mod sh;

use nalgebra::{Matrix2, Matrix3, Quaternion, UnitQuaternion, Vector3};
use rayon::prelude::*;

pub use camera::{Camera, CameraError};

use crate::gaussian_model::{Gaussian, GaussianFrame};
use crate::image::{DepthMap, Image};

pub const DEFAULT_VIS_THRESHOLD: f32 = 1.0 / 255.0;
const TILE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub vis_threshold: f32,
    /// Splat contributions below this alpha are skipped.
    pub alpha_min: f32,
    pub alpha_max: f32,
    /// Added to the 2D covariance diagonal.
    pub low_pass: f64,
    /// Gaussians closer than this in camera z are dropped.
    pub near: f64,
    /// Compositing stops once transmittance falls below this.
    pub min_transmittance: f32,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            vis_threshold: DEFAULT_VIS_THRESHOLD,
            alpha_min: 1.0 / 255.0,
            alpha_max: 0.9999,
            low_pass: 0.3,
            near: 0.2,
            min_transmittance: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: Image,
    pub depth: DepthMap,
    /// Accumulated opacity `Σ w_i` per pixel.
    pub alpha: Vec<f32>,
    /// Sorted ascending.
    pub visible_ids: Vec<u32>,
}

#[derive(Debug, Clone)]
struct Splat {
    id: u32,
    z: f32,
    mean: [f32; 2],
    /// Inverse 2D covariance `(a, b, c)` for `[[a, b], [b, c]]`.
    conic: [f32; 3],
    opacity: f32,
    color: [f32; 3],
    /// Inclusive pixel bounds `x0, y0, x1, y1`.
    rect: [usize; 4],
}

pub fn render(frame: &GaussianFrame, cam: &Camera, vis_threshold: f32) -> RenderOutput {
    let opts = RenderOptions { vis_threshold, ..RenderOptions::default() };
    render_gaussians(frame.gaussians.iter().enumerate().map(|(i, g)| (i as u32, g)), frame.sh_degree, cam, &opts)
}

/// Renders an arbitrary set of `(id, gaussian)` pairs. Ids are only used
/// for depth tie-breaking and the visibility set.
pub fn render_gaussians<'a>(
    items: impl IntoIterator<Item = (u32, &'a Gaussian)>,
    sh_degree: u8,
    cam: &Camera,
    opts: &RenderOptions,
) -> RenderOutput {
    let items: Vec<(u32, &Gaussian)> = items.into_iter().collect();
    let mut splats: Vec<Splat> =
        items.par_iter().filter_map(|&(id, g)| project(id, g, sh_degree, cam, opts)).collect();
    splats.sort_by(|a, b| a.z.total_cmp(&b.z).then(a.id.cmp(&b.id)));

    let (w, h) = (cam.width, cam.height);
    let (tx, ty) = (w.div_ceil(TILE), h.div_ceil(TILE));
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tx * ty];
    for (i, s) in splats.iter().enumerate() {
        let [x0, y0, x1, y1] = s.rect;
        for by in y0 / TILE..=y1 / TILE {
            for bx in x0 / TILE..=x1 / TILE {
                bins[by * tx + bx].push(i as u32);
            }
        }
    }

    let tiles: Vec<TileResult> = (0..tx * ty)
        .into_par_iter()
        .map(|t| render_tile(t % tx, t / tx, &bins[t], &splats, w, h, opts))
        .collect();

    let mut color = Image::new(w, h);
    let mut depth = DepthMap::new(w, h);
    let mut alpha = vec![0.0f32; w * h];
    let mut visible = Vec::new();
    for (t, tile) in tiles.into_iter().enumerate() {
        let (bx, by) = (t % tx * TILE, t / tx * TILE);
        let tw = TILE.min(w - bx);
        for (k, px) in tile.pixels.iter().enumerate() {
            let (x, y) = (bx + k % tw, by + k / tw);
            color.set(x, y, px.color);
            depth.data[y * w + x] = px.depth;
            alpha[y * w + x] = px.alpha;
        }
        visible.extend(tile.visible.iter().map(|&i| splats[i as usize].id));
    }
    visible.sort_unstable();
    visible.dedup();
    RenderOutput { color, depth, alpha, visible_ids: visible }
}

fn project(id: u32, g: &Gaussian, degree: u8, cam: &Camera, opts: &RenderOptions) -> Option<Splat> {
    let opacity = g.activated_opacity();
    if !(opacity >= opts.alpha_min) {
        return None;
    }
    let p = Vector3::new(g.position[0] as f64, g.position[1] as f64, g.position[2] as f64);
    let c = cam.to_camera(&p);
    if !(c.z > opts.near) {
        return None;
    }
    let q = g.unit_rotation();
    let rot = UnitQuaternion::from_quaternion(Quaternion::new(q[0] as f64, q[1] as f64, q[2] as f64, q[3] as f64))
        .to_rotation_matrix()
        .into_inner();
    let s = g.activated_scale();
    let s2 = Matrix3::from_diagonal(&Vector3::new((s[0] as f64).powi(2), (s[1] as f64).powi(2), (s[2] as f64).powi(2)));
    let sigma = cam.r * rot * s2 * rot.transpose() * cam.r.transpose();
    let (fx, fy) = (cam.fx(), cam.fy());
    // Off-axis splats use the Jacobian at a point clamped just outside the
    // frustum so that their footprint stays bounded.
    let z = c.z;
    let lim_x = 1.3 * (0.5 * cam.width as f64 / fx);
    let lim_y = 1.3 * (0.5 * cam.height as f64 / fy);
    let x = (c.x / z).clamp(-lim_x, lim_x) * z;
    let y = (c.y / z).clamp(-lim_y, lim_y) * z;
    let j = nalgebra::Matrix2x3::new(fx / z, 0.0, -fx * x / (z * z), 0.0, fy / z, -fy * y / (z * z));
    let cov = j * sigma * j.transpose() + Matrix2::identity() * opts.low_pass;
    let det = cov.determinant();
    if !(det > 0.0) {
        return None;
    }
    let (a, b, d) = (cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]);
    let mid = 0.5 * (a + d);
    let lambda = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = 3.0 * lambda.sqrt();
    let (u, v, _) = cam.project_camera(&c);
    let x0 = (u - radius).ceil().max(0.0);
    let y0 = (v - radius).ceil().max(0.0);
    let x1 = (u + radius).floor().min(cam.width as f64 - 1.0);
    let y1 = (v + radius).floor().min(cam.height as f64 - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    let dir = (p - cam.center()).normalize();
    let color = sh::eval_color(degree, &g.sh, [dir.x as f32, dir.y as f32, dir.z as f32]);
    Some(Splat {
        id,
        z: z as f32,
        mean: [u as f32, v as f32],
        conic: [(d / det) as f32, (-b / det) as f32, (a / det) as f32],
        opacity,
        color,
        rect: [x0 as usize, y0 as usize, x1 as usize, y1 as usize],
    })
}

#[derive(Clone, Copy, Default)]
struct Pixel {
    color: [f32; 3],
    depth: f32,
    alpha: f32,
}

struct TileResult {
    pixels: Vec<Pixel>,
    /// Splat indices that pass the visibility threshold somewhere here.
    visible: Vec<u32>,
}

fn render_tile(bx: usize, by: usize, list: &[u32], splats: &[Splat], w: usize, h: usize, opts: &RenderOptions) -> TileResult {
    let (x0, y0) = (bx * TILE, by * TILE);
    let (x1, y1) = ((x0 + TILE).min(w), (y0 + TILE).min(h));
    let mut max_w = vec![0.0f32; list.len()];
    let mut pixels = Vec::with_capacity((x1 - x0) * (y1 - y0));
    for py in y0..y1 {
        for px in x0..x1 {
            let mut t = 1.0f32;
            let mut out = Pixel::default();
            let mut zsum = 0.0f32;
            for (k, &si) in list.iter().enumerate() {
                let s = &splats[si as usize];
                let [rx0, ry0, rx1, ry1] = s.rect;
                if px < rx0 || px > rx1 || py < ry0 || py > ry1 {
                    continue;
                }
                let dx = px as f32 - s.mean[0];
                let dy = py as f32 - s.mean[1];
                let power = -0.5 * (s.conic[0] * dx * dx + s.conic[2] * dy * dy) - s.conic[1] * dx * dy;
                if power > 0.0 {
                    continue;
                }
                let a = (s.opacity * power.exp()).min(opts.alpha_max);
                if a < opts.alpha_min {
                    continue;
                }
                let wgt = a * t;
                for c in 0..3 {
                    out.color[c] += wgt * s.color[c];
                }
                zsum += wgt * s.z;
                out.alpha += wgt;
                if wgt > max_w[k] {
                    max_w[k] = wgt;
                }
                t *= 1.0 - a;
                if t < opts.min_transmittance {
                    break;
                }
            }
            if out.alpha > 0.0 {
                out.depth = zsum / out.alpha;
            }
            pixels.push(out);
        }
    }
    let visible = list.iter().zip(&max_w).filter(|(_, &m)| m > opts.vis_threshold).map(|(&i, _)| i).collect();
    TileResult { pixels, visible }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian_model::testutil::random_frame;

    fn axis_camera(w: usize, h: usize) -> Camera {
        Camera::from_pose(Vector3::zeros(), UnitQuaternion::identity(), 1.0, 0.8, w, h)
    }

    fn opaque(pos: [f32; 3], log_scale: f32, rgb: [f32; 3]) -> Gaussian {
        let mut g = Gaussian::isotropic(pos, log_scale, 20.0, 0);
        g.set_base_color(rgb);
        g
    }

    #[test]
    fn single_gaussian_center_pixel() {
        let cam = axis_camera(41, 31);
        let frame = GaussianFrame::new(0, 0, vec![opaque([0.0, 0.0, 3.0], -2.0, [0.6, 0.6, 0.6])]).unwrap();
        let out = render(&frame, &cam, DEFAULT_VIS_THRESHOLD);
        let c = out.color.get(20, 15);
        for v in c {
            assert!((v - 0.6).abs() < 1e-3, "{c:?}");
        }
        assert!((out.depth.get(20, 15) - 3.0).abs() < 1e-3);
        assert_eq!(out.visible_ids, vec![0]);
        assert_eq!(out.depth.get(0, 0), 0.0);
    }

    #[test]
    fn behind_camera_gives_black() {
        let cam = axis_camera(32, 24);
        let frame = GaussianFrame::new(0, 0, vec![opaque([0.0, 0.0, -3.0], -1.0, [1.0, 1.0, 1.0])]).unwrap();
        let out = render(&frame, &cam, DEFAULT_VIS_THRESHOLD);
        assert!(out.color.data.iter().all(|&v| v == 0.0));
        assert!(out.visible_ids.is_empty());
    }

    #[test]
    fn grazing_gaussian_beside_camera_stays_off_screen() {
        let cam = axis_camera(32, 24);
        let frame = GaussianFrame::new(0, 0, vec![opaque([5.0, 0.0, 0.25], -2.0, [1.0, 1.0, 1.0])]).unwrap();
        let out = render(&frame, &cam, DEFAULT_VIS_THRESHOLD);
        assert!(out.color.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn occluded_rear_gaussian_is_not_visible() {
        // the front splat covers the rear one everywhere; the rear weight
        // is α_r g (1 - 0.9999 g) <= 0.25 < 0.5
        let cam = axis_camera(41, 31);
        let front = opaque([0.0, 0.0, 1.0], -2.5, [1.0, 0.0, 0.0]);
        let rear = opaque([0.0, 0.0, 2.0], -1.8, [0.0, 1.0, 0.0]);
        let frame = GaussianFrame::new(0, 0, vec![rear, front]).unwrap();
        let out = render(&frame, &cam, 0.5);
        assert_eq!(out.visible_ids, vec![1]);
        let all = render(&frame, &cam, DEFAULT_VIS_THRESHOLD);
        assert_eq!(all.visible_ids, vec![0, 1]);
    }

    #[test]
    fn weights_bounded_and_deterministic() {
        let frame = random_frame(5, 400, 3);
        let cam = Camera::look_at(
            Vector3::new(0.0, 0.0, -4.0),
            Vector3::zeros(),
            Vector3::new(0.0, -1.0, 0.0),
            1.2,
            1.0,
            64,
            48,
        );
        let a = render(&frame, &cam, DEFAULT_VIS_THRESHOLD);
        let b = render(&frame, &cam, DEFAULT_VIS_THRESHOLD);
        assert_eq!(a.color.data, b.color.data);
        assert_eq!(a.depth.data, b.depth.data);
        assert!(a.alpha.iter().all(|&w| w <= 1.0 + 1e-6));
        for (i, &wsum) in a.alpha.iter().enumerate() {
            assert_eq!(wsum > 0.0, a.depth.data[i] > 0.0);
        }
        assert!(a.color.data.iter().all(|v| v.is_finite() && (0.0..=1.0 + 1e-6).contains(v)));
    }

    #[test]
    fn permutation_and_transparent_gaussian_are_no_ops() {
        let frame = random_frame(9, 200, 1);
        let cam = Camera::look_at(
            Vector3::new(0.5, 0.2, -4.0),
            Vector3::zeros(),
            Vector3::new(0.0, -1.0, 0.0),
            1.2,
            1.0,
            48,
            40,
        );
        let base = render(&frame, &cam, DEFAULT_VIS_THRESHOLD);
        let opts = RenderOptions::default();
        let rev: Vec<(u32, &Gaussian)> = frame.gaussians.iter().enumerate().rev().map(|(i, g)| (i as u32, g)).collect();
        let permuted = render_gaussians(rev, 1, &cam, &opts);
        assert_eq!(base.color.data, permuted.color.data);
        assert_eq!(base.visible_ids, permuted.visible_ids);

        let mut ghost = frame.gaussians[0].clone();
        ghost.opacity = -30.0;
        let with_ghost = frame.gaussians.iter().enumerate().map(|(i, g)| (i as u32, g)).chain([(9999, &ghost)]);
        let ghosted = render_gaussians(with_ghost, 1, &cam, &opts);
        assert_eq!(base.color.data, ghosted.color.data);
        assert_eq!(base.depth.data, ghosted.depth.data);
    }

    #[test]
    fn plane_depth_is_consistent() {
        let d = 5.0f32;
        let mut gs = Vec::new();
        for iy in -30..=30 {
            for ix in -40..=40 {
                gs.push(opaque([ix as f32 * 0.1, iy as f32 * 0.1, d], (0.08f32).ln(), [0.5, 0.5, 0.5]));
            }
        }
        let frame = GaussianFrame::new(0, 0, gs).unwrap();
        let cam = axis_camera(80, 60);
        let out = render(&frame, &cam, DEFAULT_VIS_THRESHOLD);
        let covered: Vec<f32> = out.depth.data.iter().copied().filter(|&z| z > 0.0).collect();
        assert!(covered.len() > 80 * 60 / 2);
        let good = covered.iter().filter(|&&z| (z - d).abs() <= 0.05 * d).count();
        assert!(good as f64 >= 0.95 * covered.len() as f64);
    }
}
