//! Order-2 autoregressive viewport extrapolation.

use nalgebra::UnitQuaternion;

use super::ViewportSample;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub samples: Vec<ViewportSample>,
    /// Fewer than two history samples: the last sample was held.
    pub fallback: bool,
}

/// Extrapolates `horizon` future samples at constant linear velocity and
/// constant angular velocity, both taken from the last two samples.
pub fn predict_viewport(history: &[ViewportSample], horizon: usize) -> Prediction {
    let Some(last) = history.last() else {
        return Prediction { samples: Vec::new(), fallback: true };
    };
    if history.len() < 2 {
        let samples = (1..=horizon)
            .map(|h| ViewportSample { frame: last.frame + h as u64, timestamp: last.timestamp + h as f64 / 30.0, ..*last })
            .collect();
        return Prediction { samples, fallback: true };
    }
    let prev = &history[history.len() - 2];
    let dt = last.timestamp - prev.timestamp;
    let dp = last.position - prev.position;
    let mut delta = last.rotation * prev.rotation.inverse();
    if delta.w < 0.0 {
        delta = UnitQuaternion::new_unchecked(-delta.into_inner());
    }
    let samples = (1..=horizon)
        .map(|h| {
            let hf = h as f64;
            let step = delta.powf(hf);
            ViewportSample {
                frame: last.frame + h as u64,
                timestamp: last.timestamp + hf * dt,
                position: last.position + dp * hf,
                rotation: UnitQuaternion::new_normalize((step * last.rotation).into_inner()),
            }
        })
        .collect();
    Prediction { samples, fallback: false }
}
