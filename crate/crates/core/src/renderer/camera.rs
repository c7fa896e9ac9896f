//! Pinhole camera shared by the renderer, alignment and FoV modules.
//!
//! World-to-camera: `X_cam = R * X_world + t`. Camera axes are x right,
//! y down, z forward. Pixel centers sit on integer image coordinates, so a
//! centered camera has its principal point at `((w-1)/2, (h-1)/2)` and the
//! image spans `[-0.5, w-0.5]` horizontally.
//!
//! JSON form:
//!
//! ```json
//! {"width":160,"height":120,"fx":..,"fy":..,"cx":..,"cy":..,
//!  "rotation":[[r00,r01,r02],[r10,r11,r12],[r20,r21,r22]],
//!  "translation":[tx,ty,tz]}
//! ```

use nalgebra::{Matrix3, Point3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("rotation is not orthonormal (max |R^T R - I| = {0:e})")]
    NotOrthonormal(f64),
    #[error("invalid intrinsics: {0}")]
    Intrinsics(String),
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "CameraJson", try_from = "CameraJson")]
pub struct Camera {
    pub k: Matrix3<f64>,
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
    pub width: usize,
    pub height: usize,
}

#[derive(Serialize, Deserialize)]
struct CameraJson {
    width: usize,
    height: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl From<Camera> for CameraJson {
    fn from(c: Camera) -> Self {
        let mut rotation = [[0.0; 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = c.r[(i, j)];
            }
        }
        Self {
            width: c.width,
            height: c.height,
            fx: c.k[(0, 0)],
            fy: c.k[(1, 1)],
            cx: c.k[(0, 2)],
            cy: c.k[(1, 2)],
            rotation,
            translation: [c.t.x, c.t.y, c.t.z],
        }
    }
}

impl TryFrom<CameraJson> for Camera {
    type Error = CameraError;
    fn try_from(j: CameraJson) -> Result<Self, CameraError> {
        let r = Matrix3::from_fn(|i, k| j.rotation[i][k]);
        Camera::new(intrinsics(j.fx, j.fy, j.cx, j.cy), r, Vector3::from(j.translation), j.width, j.height)
    }
}

pub fn intrinsics(fx: f64, fy: f64, cx: f64, cy: f64) -> Matrix3<f64> {
    Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0)
}

impl Camera {
    pub fn new(k: Matrix3<f64>, r: Matrix3<f64>, t: Vector3<f64>, width: usize, height: usize) -> Result<Self, CameraError> {
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !(err <= 1e-5) {
            return Err(CameraError::NotOrthonormal(err));
        }
        if width == 0 || height == 0 || !(k[(0, 0)] > 0.0) || !(k[(1, 1)] > 0.0) {
            return Err(CameraError::Intrinsics(format!("{width}x{height}, K = {k}")));
        }
        Ok(Self { k, r, t, width, height })
    }

    /// Centered intrinsics for the given FoV pair and resolution.
    pub fn centered_intrinsics(fov_x: f64, fov_y: f64, width: usize, height: usize) -> Matrix3<f64> {
        let fx = width as f64 / (2.0 * (fov_x / 2.0).tan());
        let fy = height as f64 / (2.0 * (fov_y / 2.0).tan());
        intrinsics(fx, fy, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
    }

    /// Camera at `center` with `orientation` mapping camera axes to world
    /// axes.
    pub fn from_pose(
        center: Vector3<f64>,
        orientation: UnitQuaternion<f64>,
        fov_x: f64,
        fov_y: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let r = orientation.inverse().to_rotation_matrix().into_inner();
        let t = -(r * center);
        Self { k: Self::centered_intrinsics(fov_x, fov_y, width, height), r, t, width, height }
    }

    /// Camera at `eye` looking at `target`; `up` is the world direction that
    /// should appear up on screen.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>, fov_x: f64, fov_y: f64, width: usize, height: usize) -> Self {
        let z = (target - eye).normalize();
        let x = (-up).cross(&z).normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let t = -(r * eye);
        Self { k: Self::centered_intrinsics(fov_x, fov_y, width, height), r, t, width, height }
    }

    /// Same pose with new centered intrinsics.
    pub fn with_fov(&self, fov_x: f64, fov_y: f64, width: usize, height: usize) -> Self {
        Self { k: Self::centered_intrinsics(fov_x, fov_y, width, height), r: self.r, t: self.t, width, height }
    }

    pub fn fx(&self) -> f64 {
        self.k[(0, 0)]
    }
    pub fn fy(&self) -> f64 {
        self.k[(1, 1)]
    }
    pub fn cx(&self) -> f64 {
        self.k[(0, 2)]
    }
    pub fn cy(&self) -> f64 {
        self.k[(1, 2)]
    }

    pub fn fov_x(&self) -> f64 {
        2.0 * (self.width as f64 / (2.0 * self.fx())).atan()
    }

    pub fn fov_y(&self) -> f64 {
        2.0 * (self.height as f64 / (2.0 * self.fy())).atan()
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.r.transpose() * self.t)
    }

    /// Rotation taking camera axes to world axes.
    pub fn orientation(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.r.transpose()))
    }

    pub fn to_camera(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.r * x + self.t
    }

    pub fn to_world(&self, x_cam: &Vector3<f64>) -> Vector3<f64> {
        self.r.transpose() * (x_cam - self.t)
    }

    /// Pixel coordinates and camera-space depth of a world point.
    pub fn project_point(&self, x: &Vector3<f64>) -> Result<(f64, f64, f64), CameraError> {
        let c = self.to_camera(x);
        if !(c.z > 0.0) {
            return Err(CameraError::BehindCamera(c.z));
        }
        Ok(self.project_camera(&c))
    }

    /// Projection of a camera-space point; `z` must be positive.
    #[inline]
    pub fn project_camera(&self, c: &Vector3<f64>) -> (f64, f64, f64) {
        (self.fx() * c.x / c.z + self.cx(), self.fy() * c.y / c.z + self.cy(), c.z)
    }

    /// Camera-space point at pixel `(u, v)` with camera z = `depth`.
    #[inline]
    pub fn unproject_camera(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx()) / self.fx() * depth, (v - self.cy()) / self.fy() * depth, depth)
    }

    pub fn unproject_pixel(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        self.to_world(&self.unproject_camera(u, v, depth))
    }

    /// Whether continuous pixel coordinates fall inside the image.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= -0.5 && v >= -0.5 && u < self.width as f64 - 0.5 && v < self.height as f64 - 0.5
    }

    pub fn center_point(&self) -> Point3<f64> {
        Point3::from(self.center())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("camera serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}
