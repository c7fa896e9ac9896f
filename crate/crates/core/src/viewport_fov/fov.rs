//! FoV scale a predicted camera needs to cover the actual viewport.

use nalgebra::Vector3;

use crate::renderer::Camera;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FovConfig {
    /// Depth of the plane the actual viewport's corners are placed on.
    pub fixed_depth: f64,
    /// Lower bound on `1 + s`.
    pub floor: f64,
    /// Upper bound on `s`.
    pub cap: f64,
}

impl Default for FovConfig {
    fn default() -> Self {
        Self { fixed_depth: 10.0, floor: 0.5, cap: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FovScale {
    pub sx: f64,
    pub sy: f64,
    /// A corner fell behind the predicted camera and the scale was capped.
    pub capped: bool,
}

impl FovScale {
    pub fn new(sx: f64, sy: f64) -> Self {
        Self { sx, sy, capped: false }
    }

    pub fn clamped(self, cfg: &FovConfig) -> Self {
        let c = |s: f64| s.clamp(cfg.floor - 1.0, cfg.cap);
        Self { sx: c(self.sx), sy: c(self.sy), capped: self.capped }
    }

    /// Scaled FoV pair.
    pub fn apply(&self, fov_x: f64, fov_y: f64) -> (f64, f64) {
        ((1.0 + self.sx) * fov_x, (1.0 + self.sy) * fov_y)
    }
}

/// Smallest centered FoV, relative to `actual`'s own FoV, with which a
/// camera at `pred`'s pose sees the four image-extent corners of `actual`
/// placed at camera depth `fixed_depth`.
pub fn approx_ground_truth_fov(pred: &Camera, actual: &Camera, cfg: &FovConfig) -> FovScale {
    let (w, h) = (actual.width as f64, actual.height as f64);
    let corners = [(-0.5, -0.5), (w - 0.5, -0.5), (-0.5, h - 0.5), (w - 0.5, h - 0.5)];
    let (mut ax, mut ay) = (0.0f64, 0.0f64);
    for (u, v) in corners {
        let world = actual.unproject_pixel(u, v, cfg.fixed_depth);
        let c: Vector3<f64> = pred.to_camera(&world);
        if !(c.z > 0.0) {
            return FovScale { sx: cfg.cap, sy: cfg.cap, capped: true };
        }
        ax = ax.max((c.x / c.z).abs().atan());
        ay = ay.max((c.y / c.z).abs().atan());
    }
    let s = FovScale::new(2.0 * ax / actual.fov_x() - 1.0, 2.0 * ay / actual.fov_y() - 1.0);
    let capped = s.sx > cfg.cap || s.sy > cfg.cap;
    FovScale { capped, ..s.clamped(cfg) }
}

/// Fraction of `actual`'s pixels whose fixed-depth points land inside
/// `reference`.
pub fn coverage(reference: &Camera, actual: &Camera, fixed_depth: f64) -> f64 {
    let mut inside = 0usize;
    for y in 0..actual.height {
        for x in 0..actual.width {
            let world = actual.unproject_pixel(x as f64, y as f64, fixed_depth);
            if let Ok((u, v, _)) = reference.project_point(&world) {
                if reference.contains(u, v) {
                    inside += 1;
                }
            }
        }
    }
    inside as f64 / (actual.width * actual.height) as f64
}
