//! Training sequences, full-batch training and the refreshed rollout.
//!
//! For frame `i` the server only knows actual viewports up to
//! `i - horizon`, so the model's viewport inputs are the order-2
//! predictions made from that history. The target is the corner FoV scale
//! between that prediction and the actual viewport.

use nalgebra::UnitQuaternion;

use super::fov::{approx_ground_truth_fov, FovConfig, FovScale};
use super::lstm::{FovLstm, LstmState, INPUT_DIM};
use super::predict::predict_viewport;
use super::{FovError, Result, ViewportSample, ViewportTrace};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceConfig {
    pub horizon: usize,
    pub fov_x: f64,
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
    pub fov: FovConfig,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self { horizon: 6, fov_x: 1.48, fov_y: 1.2, width: 160, height: 120, fov: FovConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub clip: f64,
    /// Sequences per update; 0 uses every sequence (full batch).
    pub batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 50, lr: 1e-2, clip: 1.0, batch: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Loss before each epoch's update.
    pub losses: Vec<f64>,
    pub final_loss: f64,
}

/// Teacher-forced inputs (previous-frame targets fed back) and targets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FovSequence {
    pub predicted: Vec<ViewportSample>,
    pub inputs: Vec<[f64; INPUT_DIM]>,
    pub targets: Vec<[f64; 2]>,
}

/// Viewport predicted for frame `i` from actual samples up to `i - horizon`.
pub fn predicted_at(trace: &ViewportTrace, i: usize, horizon: usize) -> ViewportSample {
    let last = i.saturating_sub(horizon);
    if last == i {
        return trace.samples[i];
    }
    let pred = predict_viewport(&trace.samples[..=last], i - last);
    ViewportSample { frame: trace.samples[i].frame, timestamp: trace.samples[i].timestamp, ..pred.samples[i - last - 1] }
}

fn canonical(q: &UnitQuaternion<f64>) -> [f64; 4] {
    let q = q.quaternion();
    let s = if q.w < 0.0 { -1.0 } else { 1.0 };
    [s * q.w, s * q.i, s * q.j, s * q.k]
}

/// Model input for `cur` given the previous predicted sample and the
/// previous scale.
pub fn features(cur: &ViewportSample, prev: &ViewportSample, s_prev: [f64; 2]) -> [f64; INPUT_DIM] {
    let q = canonical(&cur.rotation);
    let mut qp = canonical(&prev.rotation);
    if q.iter().zip(&qp).map(|(a, b)| a * b).sum::<f64>() < 0.0 {
        qp.iter_mut().for_each(|v| *v = -*v);
    }
    let mut x = [0.0; INPUT_DIM];
    for k in 0..4 {
        x[k] = q[k];
        x[4 + k] = q[k] - qp[k];
    }
    for k in 0..3 {
        x[8 + k] = cur.position[k];
        x[11 + k] = cur.position[k] - prev.position[k];
    }
    x[14] = s_prev[0];
    x[15] = s_prev[1];
    x
}

pub fn build_sequence(trace: &ViewportTrace, cfg: &SequenceConfig) -> FovSequence {
    let n = trace.len();
    let predicted: Vec<ViewportSample> = (0..n).map(|i| predicted_at(trace, i, cfg.horizon)).collect();
    let cam = |s: &ViewportSample| s.camera(cfg.fov_x, cfg.fov_y, cfg.width, cfg.height);
    let targets: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let s = approx_ground_truth_fov(&cam(&predicted[i]), &cam(&trace.samples[i]), &cfg.fov);
            [s.sx, s.sy]
        })
        .collect();
    let inputs = (0..n)
        .map(|i| {
            let prev = if i == 0 { &predicted[0] } else { &predicted[i - 1] };
            let s_prev = if i == 0 { [0.0; 2] } else { targets[i - 1] };
            features(&predicted[i], prev, s_prev)
        })
        .collect();
    FovSequence { predicted, inputs, targets }
}

fn mean_loss(model: &FovLstm, seqs: &[FovSequence], grad: &mut [f64]) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let steps: usize = seqs.iter().map(|s| s.inputs.len()).sum();
    let total: f64 = seqs.iter().map(|s| model.l1_loss_grad(&s.inputs, &s.targets, grad)).sum();
    let n = steps.max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    total / n
}

fn clipped_step(model: &mut FovLstm, grad: &[f64], cfg: &TrainConfig) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let scale = if norm > cfg.clip { cfg.clip / norm } else { 1.0 };
    for (p, g) in model.params.iter_mut().zip(grad) {
        *p -= cfg.lr * scale * g;
    }
}

/// Plain SGD on the mean L1 loss over batches of `cfg.batch` sequences
/// taken in order, with the gradient norm clipped to `cfg.clip`.
/// `losses[e]` is the full mean loss before epoch `e`.
pub fn train_on_sequences(model: &mut FovLstm, seqs: &[FovSequence], cfg: &TrainConfig) -> Result<TrainReport> {
    let mut grad = vec![0.0; model.params.len()];
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let loss = mean_loss(model, seqs, &mut grad);
        if !loss.is_finite() {
            return Err(FovError::Diverged { epoch, loss });
        }
        losses.push(loss);
        let batch = if cfg.batch == 0 { seqs.len().max(1) } else { cfg.batch };
        for chunk in seqs.chunks(batch) {
            mean_loss(model, chunk, &mut grad);
            clipped_step(model, &grad, cfg);
        }
    }
    let final_loss = mean_loss(model, seqs, &mut grad);
    if !final_loss.is_finite() {
        return Err(FovError::Diverged { epoch: cfg.epochs, loss: final_loss });
    }
    Ok(TrainReport { losses, final_loss })
}

pub fn train_fov(
    model: &mut FovLstm,
    traces: &[ViewportTrace],
    seq: &SequenceConfig,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if let Some(t) = traces.iter().find(|t| t.len() < 8) {
        return Err(FovError::Trace(format!("training traces need at least 8 frames, found {}", t.len())));
    }
    let seqs: Vec<FovSequence> = traces.iter().map(|t| build_sequence(t, seq)).collect();
    train_on_sequences(model, &seqs, cfg)
}

/// Per-frame FoV scale as the server would compute it. Actual viewports
/// arrive every `refresh_period` frames (0 disables refresh) and become
/// usable `horizon` frames later; at that point the hidden state and the
/// fed-back scale resynchronize from the teacher-forced pass. In between,
/// the model's own previous output is fed back.
pub fn rolling_predict(model: &FovLstm, trace: &ViewportTrace, cfg: &SequenceConfig, refresh_period: usize) -> Vec<FovScale> {
    let seq = build_sequence(trace, cfg);
    let n = seq.inputs.len();
    let mut teacher = Vec::with_capacity(n);
    let mut s = LstmState::zeros(model.hidden);
    for x in &seq.inputs {
        s = model.forward(x, &s).1;
        teacher.push(s.clone());
    }
    let anchor = |i: usize| -> Option<usize> {
        if refresh_period == 0 || i < cfg.horizon.max(1) {
            return None;
        }
        let latest = i - cfg.horizon.max(1);
        Some(latest - latest % refresh_period)
    };
    let mut out = Vec::with_capacity(n);
    let mut current: Option<Option<usize>> = None;
    let mut state = LstmState::zeros(model.hidden);
    let mut s_prev = [0.0; 2];
    let mut next = 0usize;
    for i in 0..n {
        let a = anchor(i);
        if current != Some(a) {
            current = Some(a);
            match a {
                Some(r) => {
                    state = teacher[r].clone();
                    s_prev = seq.targets[r];
                    next = r + 1;
                }
                None => {
                    state = LstmState::zeros(model.hidden);
                    s_prev = [0.0; 2];
                    next = 0;
                }
            }
        }
        let mut y = s_prev;
        while next <= i {
            let prev = if next == 0 { &seq.predicted[0] } else { &seq.predicted[next - 1] };
            let x = features(&seq.predicted[next], prev, s_prev);
            let (o, st) = model.forward(&x, &state);
            state = st;
            s_prev = o;
            y = o;
            next += 1;
        }
        out.push(FovScale::new(y[0], y[1]).clamped(&cfg.fov));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn turning(seed: u64) -> ViewportTrace {
        let a = 0.8 + 0.1 * seed as f64;
        ViewportTrace::turning(60, 30.0, Vector3::new(0.0, 0.0, 0.0), move |t| a * (1.5 * t).sin())
    }

    fn static_trace() -> ViewportTrace {
        ViewportTrace::turning(30, 30.0, Vector3::new(0.0, 0.0, 0.0), |_| 0.3)
    }

    #[test]
    fn static_trace_targets_are_zero() {
        let seq = build_sequence(&static_trace(), &SequenceConfig::default());
        assert!(seq.targets.iter().all(|t| t[0].abs() < 1e-9 && t[1].abs() < 1e-9));
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let mut m = FovLstm::new(8, 1);
        let before = m.clone();
        let r = train_fov(&mut m, &[turning(0)], &SequenceConfig::default(), &TrainConfig { epochs: 0, ..Default::default() })
            .unwrap();
        assert_eq!(m, before);
        assert!(r.losses.is_empty());
    }

    #[test]
    fn learns_a_constant_target() {
        let seq = build_sequence(&static_trace(), &SequenceConfig::default());
        let seqs = vec![FovSequence { targets: vec![[0.2, 0.2]; seq.inputs.len()], ..seq }];
        let mut m = FovLstm::new(8, 2);
        train_on_sequences(&mut m, &seqs, &TrainConfig { epochs: 400, ..Default::default() }).unwrap();
        for y in m.run(&seqs[0].inputs) {
            assert!((y[0] - 0.2).abs() < 0.02 && (y[1] - 0.2).abs() < 0.02, "{y:?}");
        }
    }

    #[test]
    fn loss_decreases_over_ten_epochs() {
        let mut m = FovLstm::new(32, 7);
        let traces: Vec<_> = (0..3).map(turning).collect();
        let r = train_fov(&mut m, &traces, &SequenceConfig::default(), &TrainConfig { epochs: 10, ..Default::default() })
            .unwrap();
        for w in r.losses.windows(2) {
            assert!(w[1] < w[0], "{:?}", r.losses);
        }
        assert!(r.final_loss < r.losses[0]);
    }

    #[test]
    fn single_sequence_batches_agree() {
        let traces = [turning(0)];
        let fit = |batch| {
            let mut m = FovLstm::new(8, 3);
            train_fov(&mut m, &traces, &SequenceConfig::default(), &TrainConfig { epochs: 5, batch, ..Default::default() }).unwrap();
            m.params
        };
        assert_eq!(fit(0), fit(1));
    }

    #[test]
    fn nan_loss_is_reported() {
        let mut m = FovLstm::new(4, 0);
        m.params[0] = f64::NAN;
        let r = train_fov(&mut m, &[turning(0)], &SequenceConfig::default(), &TrainConfig::default());
        assert!(matches!(r, Err(FovError::Diverged { epoch: 0, .. })));
        assert!(train_fov(&mut FovLstm::new(4, 0), &[ViewportTrace::default()], &SequenceConfig::default(), &TrainConfig::default()).is_err());
    }

    #[test]
    fn unit_horizon_with_every_frame_refresh_is_teacher_forced() {
        let m = FovLstm::new(8, 3);
        let trace = turning(1);
        let cfg = SequenceConfig { horizon: 1, ..Default::default() };
        let seq = build_sequence(&trace, &cfg);
        let teacher = m.run(&seq.inputs);
        let rolled = rolling_predict(&m, &trace, &cfg, 1);
        for (a, b) in rolled.iter().zip(&teacher) {
            let want = FovScale::new(b[0], b[1]).clamped(&cfg.fov);
            assert!((a.sx - want.sx).abs() < 1e-12 && (a.sy - want.sy).abs() < 1e-12);
        }
    }

    #[test]
    fn static_rollout_drift_is_small() {
        let cfg = SequenceConfig::default();
        let seqs = vec![build_sequence(&static_trace(), &cfg)];
        let mut m = FovLstm::new(8, 4);
        train_on_sequences(&mut m, &seqs, &TrainConfig { epochs: 150, ..Default::default() }).unwrap();
        let rolled = rolling_predict(&m, &static_trace(), &cfg, 6);
        for s in &rolled[12..] {
            assert!(s.sx.abs() < 0.05 && s.sy.abs() < 0.05, "{s:?}");
        }
    }

    /// Hand-set weights that copy the fed-back scale to the output.
    fn copy_model() -> FovLstm {
        let hsz = 2;
        let mut m = FovLstm::zeros(hsz);
        let n = INPUT_DIM + hsz;
        let b = 4 * hsz * n;
        for k in 0..hsz {
            m.params[b + k] = 12.0;
            m.params[b + hsz + k] = -12.0;
            m.params[b + 3 * hsz + k] = 12.0;
            m.params[(2 * hsz + k) * n + 14 + k] = 0.5;
        }
        let wy = b + 4 * hsz;
        m.params[wy] = 2.0;
        m.params[wy + hsz + 1] = 2.0;
        m
    }

    #[test]
    fn refresh_resynchronizes_the_fed_back_scale() {
        let cfg = SequenceConfig::default();
        let test = turning(4);
        let seq = build_sequence(&test, &cfg);
        let m = copy_model();
        let mae = |r: &[FovScale]| {
            r.iter().zip(&seq.targets).map(|(a, t)| (a.sx - t[0]).abs() + (a.sy - t[1]).abs()).sum::<f64>() / r.len() as f64
        };
        let on = mae(&rolling_predict(&m, &test, &cfg, 1));
        let off = mae(&rolling_predict(&m, &test, &cfg, 0));
        assert!(on < off, "{on} >= {off}");
    }
}
