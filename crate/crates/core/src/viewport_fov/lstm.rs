//! Single-cell LSTM with a linear head, in f64, with backpropagation
//! through time.
//!
//! Parameters live in one flat vector: gate weights `W` (4H x (I+H),
//! row-major, gate order i, f, g, o), gate bias `b` (4H), head weights
//! `Wy` (2 x H) and head bias `by` (2).
//!
//! Checkpoint: `FOVL`, then u32 LE version (1), hidden size, input dim and
//! parameter count, then the parameters as f32 LE in the order above.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FovError, Result};

pub const INPUT_DIM: usize = 16;
pub const OUTPUT_DIM: usize = 2;
const MAGIC: &[u8; 4] = b"FOVL";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FovLstm {
    pub hidden: usize,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }
}

/// Per-step activations kept for the backward pass.
struct StepCache {
    z: Vec<f64>,
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl FovLstm {
    pub fn param_count(hidden: usize) -> usize {
        4 * hidden * (INPUT_DIM + hidden) + 4 * hidden + OUTPUT_DIM * hidden + OUTPUT_DIM
    }

    pub fn zeros(hidden: usize) -> Self {
        Self { hidden, params: vec![0.0; Self::param_count(hidden)] }
    }

    /// Uniform weights in ±1/√H, zero biases except a forget bias of 1.
    pub fn new(hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Self::zeros(hidden);
        let bound = 1.0 / (hidden as f64).sqrt();
        let (w, b, wy, _) = m.offsets();
        for p in &mut m.params[w..b] {
            *p = rng.gen_range(-bound..bound);
        }
        for p in &mut m.params[b + hidden..b + 2 * hidden] {
            *p = 1.0;
        }
        for p in &mut m.params[wy..wy + OUTPUT_DIM * hidden] {
            *p = rng.gen_range(-bound..bound);
        }
        m
    }

    fn offsets(&self) -> (usize, usize, usize, usize) {
        let h = self.hidden;
        let w = 0;
        let b = 4 * h * (INPUT_DIM + h);
        let wy = b + 4 * h;
        let by = wy + OUTPUT_DIM * h;
        (w, b, wy, by)
    }

    pub fn head_bias(&self) -> [f64; 2] {
        let by = self.offsets().3;
        [self.params[by], self.params[by + 1]]
    }

    pub fn set_head_bias(&mut self, v: [f64; 2]) {
        let by = self.offsets().3;
        self.params[by..by + 2].copy_from_slice(&v);
    }

    fn step_cached(&self, x: &[f64; INPUT_DIM], state: &LstmState) -> ([f64; 2], LstmState, StepCache) {
        let hsz = self.hidden;
        let n = INPUT_DIM + hsz;
        let (w, b, wy, by) = self.offsets();
        let mut z = Vec::with_capacity(n);
        z.extend_from_slice(x);
        z.extend_from_slice(&state.h);
        let mut gates = vec![0.0; 4 * hsz];
        for (r, g) in gates.iter_mut().enumerate() {
            let row = &self.params[w + r * n..w + (r + 1) * n];
            let a = self.params[b + r] + row.iter().zip(&z).map(|(p, v)| p * v).sum::<f64>();
            *g = if r / hsz == 2 { a.tanh() } else { sigmoid(a) };
        }
        let mut c = vec![0.0; hsz];
        let mut tanh_c = vec![0.0; hsz];
        let mut h = vec![0.0; hsz];
        for k in 0..hsz {
            let (i, f, g, o) = (gates[k], gates[hsz + k], gates[2 * hsz + k], gates[3 * hsz + k]);
            c[k] = f * state.c[k] + i * g;
            tanh_c[k] = c[k].tanh();
            h[k] = o * tanh_c[k];
        }
        let mut y = [0.0; 2];
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.params[wy + o * hsz..wy + (o + 1) * hsz];
            *yo = self.params[by + o] + row.iter().zip(&h).map(|(p, v)| p * v).sum::<f64>();
        }
        let next = LstmState { h: h.clone(), c };
        (y, next, StepCache { z, gates, c_prev: state.c.clone(), tanh_c, h })
    }

    /// One step: returns the predicted scale pair and the next state.
    pub fn forward(&self, x: &[f64; INPUT_DIM], state: &LstmState) -> ([f64; 2], LstmState) {
        let (y, s, _) = self.step_cached(x, state);
        (y, s)
    }

    /// Outputs for a whole sequence from the zero state.
    pub fn run(&self, inputs: &[[f64; INPUT_DIM]]) -> Vec<[f64; 2]> {
        let mut s = LstmState::zeros(self.hidden);
        inputs
            .iter()
            .map(|x| {
                let (y, n) = self.forward(x, &s);
                s = n;
                y
            })
            .collect()
    }

    /// Sum over steps and outputs of `|y - target|`, and its gradient
    /// added into `grad`.
    pub fn l1_loss_grad(&self, inputs: &[[f64; INPUT_DIM]], targets: &[[f64; 2]], grad: &mut [f64]) -> f64 {
        assert_eq!(inputs.len(), targets.len());
        assert_eq!(grad.len(), self.params.len());
        let hsz = self.hidden;
        let n = INPUT_DIM + hsz;
        let (w, b, wy, by) = self.offsets();
        let mut state = LstmState::zeros(hsz);
        let mut caches = Vec::with_capacity(inputs.len());
        let mut loss = 0.0;
        let mut dys = Vec::with_capacity(inputs.len());
        for (x, t) in inputs.iter().zip(targets) {
            let (y, next, cache) = self.step_cached(x, &state);
            let mut dy = [0.0; 2];
            for o in 0..2 {
                let r = y[o] - t[o];
                loss += r.abs();
                dy[o] = if r > 0.0 {
                    1.0
                } else if r < 0.0 {
                    -1.0
                } else {
                    0.0
                };
            }
            dys.push(dy);
            caches.push(cache);
            state = next;
        }
        let mut dh_next = vec![0.0; hsz];
        let mut dc_next = vec![0.0; hsz];
        let mut da = vec![0.0; 4 * hsz];
        for (cache, dy) in caches.iter().zip(&dys).rev() {
            let mut dh = dh_next.clone();
            for o in 0..2 {
                grad[by + o] += dy[o];
                for k in 0..hsz {
                    grad[wy + o * hsz + k] += dy[o] * cache.h[k];
                    dh[k] += dy[o] * self.params[wy + o * hsz + k];
                }
            }
            for k in 0..hsz {
                let g = &cache.gates;
                let (i, f, gg, o) = (g[k], g[hsz + k], g[2 * hsz + k], g[3 * hsz + k]);
                let dc = dh[k] * o * (1.0 - cache.tanh_c[k] * cache.tanh_c[k]) + dc_next[k];
                da[k] = dc * gg * i * (1.0 - i);
                da[hsz + k] = dc * cache.c_prev[k] * f * (1.0 - f);
                da[2 * hsz + k] = dc * i * (1.0 - gg * gg);
                da[3 * hsz + k] = dh[k] * cache.tanh_c[k] * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..4 * hsz {
                grad[b + r] += da[r];
                let row = w + r * n;
                for j in 0..n {
                    grad[row + j] += da[r] * cache.z[j];
                }
                for k in 0..hsz {
                    dh_next[k] += da[r] * self.params[row + INPUT_DIM + k];
                }
            }
        }
        loss
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 4 * self.params.len());
        out.extend_from_slice(MAGIC);
        for v in [VERSION, self.hidden as u32, INPUT_DIM as u32, self.params.len() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for p in &self.params {
            out.extend_from_slice(&(*p as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |s: &str| FovError::Checkpoint(s.to_string());
        if bytes.len() < 20 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint"));
        }
        let u = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        if u(0) != VERSION as usize {
            return Err(bad("unsupported version"));
        }
        let (hidden, input, count) = (u(1), u(2), u(3));
        if input != INPUT_DIM || hidden == 0 || count != Self::param_count(hidden) {
            return Err(bad("dimension mismatch"));
        }
        let body = &bytes[20..];
        if body.len() != 4 * count {
            return Err(bad("truncated parameters"));
        }
        let params: Vec<f64> =
            body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        if !params.iter().all(|p| p.is_finite()) {
            return Err(bad("non-finite parameter"));
        }
        Ok(Self { hidden, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
