//! Viewport traces, autoregressive viewport prediction, the corner-based
//! FoV target and the LSTM that predicts FoV enlargement.
//!
//! Trace CSV: header `frame,timestamp,px,py,pz,qw,qx,qy,qz`, one sample per
//! line. The quaternion maps camera axes to world axes (camera x right,
//! y down, z forward).

pub mod fov;
pub mod lstm;
pub mod predict;
pub mod train;

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::renderer::Camera;

pub use fov::{approx_ground_truth_fov, FovConfig, FovScale};
pub use lstm::{FovLstm, LstmState, INPUT_DIM};
pub use predict::{predict_viewport, Prediction};
pub use train::{build_sequence, rolling_predict, train_fov, train_on_sequences, FovSequence, SequenceConfig, TrainConfig, TrainReport};

#[derive(Debug, Error)]
pub enum FovError {
    #[error("trace line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("trace: {0}")]
    Trace(String),
    #[error("training diverged at epoch {epoch} (loss {loss}); try a lower learning rate")]
    Diverged { epoch: usize, loss: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = FovError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewportSample {
    pub frame: u64,
    pub timestamp: f64,
    pub position: Vector3<f64>,
    /// Camera-to-world rotation.
    pub rotation: UnitQuaternion<f64>,
}

impl ViewportSample {
    pub fn camera(&self, fov_x: f64, fov_y: f64, width: usize, height: usize) -> Camera {
        Camera::from_pose(self.position, self.rotation, fov_x, fov_y, width, height)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ViewportTrace {
    pub samples: Vec<ViewportSample>,
}

impl ViewportTrace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, w) in self.samples.windows(2).enumerate() {
            if !(w[1].timestamp > w[0].timestamp) {
                return Err(FovError::Trace(format!("timestamps not increasing at sample {}", i + 1)));
            }
        }
        Ok(())
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut samples = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (n == 0 && line.starts_with("frame")) {
                continue;
            }
            let err = |reason: String| FovError::Parse { line: n + 1, reason };
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 9 {
                return Err(err(format!("expected 9 fields, found {}", f.len())));
            }
            let frame: u64 = f[0].parse().map_err(|e| err(format!("frame: {e}")))?;
            let v: Vec<f64> =
                f[1..].iter().map(|s| s.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|e| err(e.to_string()))?;
            let q = Quaternion::new(v[4], v[5], v[6], v[7]);
            let norm = q.norm();
            if !v.iter().all(|x| x.is_finite()) || (norm - 1.0).abs() > 1e-3 {
                return Err(err(format!("quaternion norm {norm} is not 1")));
            }
            samples.push(ViewportSample {
                frame,
                timestamp: v[0],
                position: Vector3::new(v[1], v[2], v[3]),
                rotation: UnitQuaternion::from_quaternion(q),
            });
        }
        let t = Self { samples };
        t.validate()?;
        Ok(t)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame,timestamp,px,py,pz,qw,qx,qy,qz\n");
        for v in &self.samples {
            let q = v.rotation.quaternion();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                v.frame, v.timestamp, v.position.x, v.position.y, v.position.z, q.w, q.i, q.j, q.k
            );
        }
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_csv(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Viewer orbiting `center` at `radius` and height `height`, always
    /// looking at the center; `speed` in radians per second.
    pub fn orbit(n: usize, fps: f64, center: Vector3<f64>, radius: f64, height: f64, speed: f64, phase: f64) -> Self {
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / fps;
                let a = phase + speed * t;
                let eye = center + Vector3::new(radius * a.sin(), height, -radius * a.cos());
                ViewportSample { frame: i as u64, timestamp: t, position: eye, rotation: look_rotation(eye, center) }
            })
            .collect();
        Self { samples }
    }

    /// Stationary viewer at `eye` whose yaw follows `yaw(t)` (radians, about
    /// world -y) while looking horizontally.
    pub fn turning(n: usize, fps: f64, eye: Vector3<f64>, yaw: impl Fn(f64) -> f64) -> Self {
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / fps;
                let a = yaw(t);
                let target = eye + Vector3::new(a.sin(), 0.0, a.cos());
                ViewportSample { frame: i as u64, timestamp: t, position: eye, rotation: look_rotation(eye, target) }
            })
            .collect();
        Self { samples }
    }
}

/// Camera-to-world rotation looking from `eye` at `target` with world -y up.
pub fn look_rotation(eye: Vector3<f64>, target: Vector3<f64>) -> UnitQuaternion<f64> {
    let cam = Camera::look_at(eye, target, Vector3::new(0.0, -1.0, 0.0), 1.0, 1.0, 2, 2);
    cam.orientation()
}
