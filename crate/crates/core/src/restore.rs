//! Reference-guided color restoration.
//!
//! The default restorer transfers local color statistics: in a
//! `(2w+1)²` window restricted to guided pixels, each channel of the
//! distorted image is shifted and scaled so its mean and standard deviation
//! match those of the aligned reference.

use crate::image::{Image, Mask};

pub trait Restorer {
    fn restore(&self, distorted: &Image, aligned_ref: &Image, guidance: &Mask) -> Image;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalStatTransfer {
    pub window: usize,
    pub eps: f64,
}

impl Default for LocalStatTransfer {
    fn default() -> Self {
        Self { window: 8, eps: 1e-4 }
    }
}

/// Summed-area table with a zero first row and column.
struct Integral {
    w: usize,
    data: Vec<f64>,
}

impl Integral {
    fn new(w: usize, h: usize, f: impl Fn(usize) -> f64) -> Self {
        let stride = w + 1;
        let mut data = vec![0.0; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += f(y * w + x);
                data[(y + 1) * stride + x + 1] = data[y * stride + x + 1] + row;
            }
        }
        Self { w, data }
    }

    /// Sum over `[x0, x1) x [y0, y1)`.
    fn sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let s = self.w + 1;
        self.data[y1 * s + x1] - self.data[y0 * s + x1] - self.data[y1 * s + x0] + self.data[y0 * s + x0]
    }
}

impl Restorer for LocalStatTransfer {
    fn restore(&self, distorted: &Image, aligned_ref: &Image, guidance: &Mask) -> Image {
        assert_eq!((distorted.width, distorted.height), (aligned_ref.width, aligned_ref.height));
        assert_eq!((distorted.width, distorted.height), (guidance.width, guidance.height));
        let (w, h) = (distorted.width, distorted.height);
        let m = |p: usize| if guidance.data[p] { 1.0 } else { 0.0 };
        let count = Integral::new(w, h, m);
        let mut out = distorted.clone();
        for c in 0..3 {
            let d = |p: usize| distorted.data[3 * p + c] as f64;
            let r = |p: usize| aligned_ref.data[3 * p + c] as f64;
            let sd = Integral::new(w, h, |p| m(p) * d(p));
            let sd2 = Integral::new(w, h, |p| m(p) * d(p) * d(p));
            let sr = Integral::new(w, h, |p| m(p) * r(p));
            let sr2 = Integral::new(w, h, |p| m(p) * r(p) * r(p));
            for y in 0..h {
                let (y0, y1) = (y.saturating_sub(self.window), (y + self.window + 1).min(h));
                for x in 0..w {
                    let (x0, x1) = (x.saturating_sub(self.window), (x + self.window + 1).min(w));
                    let n = count.sum(x0, y0, x1, y1);
                    if n < 0.5 {
                        continue;
                    }
                    let mu_d = sd.sum(x0, y0, x1, y1) / n;
                    let mu_r = sr.sum(x0, y0, x1, y1) / n;
                    let var_d = (sd2.sum(x0, y0, x1, y1) / n - mu_d * mu_d).max(0.0);
                    let var_r = (sr2.sum(x0, y0, x1, y1) / n - mu_r * mu_r).max(0.0);
                    let p = y * w + x;
                    let v = (d(p) - mu_d) * var_r.sqrt() / var_d.sqrt().max(self.eps) + mu_r;
                    out.data[3 * p + c] = v.clamp(0.0, 1.0) as f32;
                }
            }
        }
        out
    }
}

/// Restores with [`LocalStatTransfer`] at window half-size `window`.
pub fn restore(distorted: &Image, aligned_ref: &Image, guidance: &Mask, window: usize) -> Image {
    LocalStatTransfer { window, ..LocalStatTransfer::default() }.restore(distorted, aligned_ref, guidance)
}
