//! PSNR, SSIM and per-run quality reports.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::image::{Image, ImageError};

/// `10 log10(1 / MSE)` over all channels; `+inf` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, ImageError> {
    a.same_shape(b)?;
    let se: f64 = a.data.iter().zip(&b.data).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    let mse = se / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03 }
    }
}

/// Rec.601 luma.
pub fn gray(img: &Image) -> Vec<f64> {
    img.data.chunks_exact(3).map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).collect()
}

fn gaussian_kernel(n: usize, sigma: f64) -> Vec<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..n).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of a `w x h` plane.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean Gaussian-window SSIM of the luma planes over window positions fully
/// inside the image, with dynamic range 1.
pub fn ssim_with(a: &Image, b: &Image, p: &SsimParams) -> Result<f64, ImageError> {
    a.same_shape(b)?;
    if a.width < p.window || a.height < p.window {
        return Err(ImageError::Shape(a.width, a.height, p.window, p.window));
    }
    let (w, h) = (a.width, a.height);
    let (x, y) = (gray(a), gray(b));
    let k = gaussian_kernel(p.window, p.sigma);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
    let (mx, my) = (filter_valid(&x, w, h, &k), filter_valid(&y, w, h, &k));
    let (sxx, syy, sxy) = (filter_valid(&xx, w, h, &k), filter_valid(&yy, w, h, &k), filter_valid(&xy, w, h, &k));
    let c1 = (p.k1).powi(2);
    let c2 = (p.k2).powi(2);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (m1, m2) = (mx[i], my[i]);
        let v1 = sxx[i] - m1 * m1;
        let v2 = syy[i] - m2 * m2;
        let cov = sxy[i] - m1 * m2;
        let num = (2.0 * m1 * m2 + c1) * (2.0 * cov + c2);
        let den = (m1 * m1 + m2 * m2 + c1) * (v1 + v2 + c2);
        total += num / den;
    }
    Ok(total / mx.len() as f64)
}

pub fn ssim(a: &Image, b: &Image) -> Result<f64, ImageError> {
    ssim_with(a, b, &SsimParams::default())
}

/// One simulated frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameQuality {
    pub frame: u64,
    /// Restored output against ground truth.
    pub psnr: f64,
    pub ssim: f64,
    /// Client render before restoration against ground truth.
    pub psnr_distorted: f64,
    pub ssim_distorted: f64,
    pub bytes: u64,
    pub decode_ms: f64,
    /// Fraction of client pixels without a reference sample.
    pub uncovered: f64,
    pub starved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    /// Infinite values (identical images) are skipped by the mean.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        let finite: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
        let mean = if finite.is_empty() {
            if v.is_empty() { f64::NAN } else { f64::INFINITY }
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        Self {
            mean,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct QualityReport {
    pub frames: Vec<FrameQuality>,
    /// Codebooks and initial keyframe payload sent before frame 0.
    pub bootstrap_bytes: u64,
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() { "inf".into() } else { format!("{v:.4}") }
}

impl QualityReport {
    pub fn psnr(&self) -> Summary {
        Summary::of(self.frames.iter().map(|f| f.psnr))
    }
    pub fn ssim(&self) -> Summary {
        Summary::of(self.frames.iter().map(|f| f.ssim))
    }
    pub fn psnr_distorted(&self) -> Summary {
        Summary::of(self.frames.iter().map(|f| f.psnr_distorted))
    }
    pub fn uncovered(&self) -> Summary {
        Summary::of(self.frames.iter().map(|f| f.uncovered))
    }
    pub fn total_bytes(&self) -> u64 {
        self.frames.iter().map(|f| f.bytes).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame,psnr,ssim,psnr_distorted,ssim_distorted,bytes,decode_ms,uncovered,starved\n");
        for f in &self.frames {
            let _ = writeln!(
                s,
                "{},{},{:.6},{},{:.6},{},{:.3},{:.6},{}",
                f.frame,
                fmt_db(f.psnr),
                f.ssim,
                fmt_db(f.psnr_distorted),
                f.ssim_distorted,
                f.bytes,
                f.decode_ms,
                f.uncovered,
                f.starved as u8
            );
        }
        s
    }

    pub fn summary_text(&self) -> String {
        let (p, s, d) = (self.psnr(), self.ssim(), self.psnr_distorted());
        format!(
            "frames {}\nbootstrap bytes {}\nstream bytes {}\npsnr mean {} min {} max {}\nssim mean {:.4} min {:.4} max {:.4}\ndistorted psnr mean {}\nuncovered mean {:.4}\nstarved frames {}\nlpips not computed\n",
            self.frames.len(),
            self.bootstrap_bytes,
            self.total_bytes(),
            fmt_db(p.mean),
            fmt_db(p.min),
            fmt_db(p.max),
            s.mean,
            s.min,
            s.max,
            fmt_db(d.mean),
            self.uncovered().mean,
            self.frames.iter().filter(|f| f.starved).count()
        )
    }
}

/// Line plot of one or more series on a white canvas, no axes labels.
/// Infinite values are drawn at the top edge.
pub fn plot_series(path: impl AsRef<Path>, series: &[&[f64]], width: usize, height: usize) -> Result<(), ImageError> {
    const COLORS: [[f32; 3]; 4] = [[0.1, 0.3, 0.8], [0.8, 0.2, 0.1], [0.1, 0.6, 0.2], [0.5, 0.2, 0.6]];
    let mut img = Image::filled(width, height, [1.0; 3]);
    let finite = series.iter().flat_map(|s| s.iter().copied()).filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return img.save_png(path);
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let margin = 4.0;
    let to_y = |v: f64| {
        let t = if v.is_finite() { (v - lo) / span } else { 1.0 };
        (height as f64 - 1.0 - margin) - t * (height as f64 - 1.0 - 2.0 * margin)
    };
    for (si, s) in series.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        let n = s.len().max(2) - 1;
        let to_x = |i: usize| margin + i as f64 / n as f64 * (width as f64 - 1.0 - 2.0 * margin);
        for i in 1..s.len() {
            let (x0, y0, x1, y1) = (to_x(i - 1), to_y(s[i - 1]), to_x(i), to_y(s[i]));
            let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
            for k in 0..=steps {
                let t = k as f64 / steps as f64;
                let (x, y) = ((x0 + t * (x1 - x0)).round(), (y0 + t * (y1 - y0)).round());
                if x >= 0.0 && y >= 0.0 && (x as usize) < width && (y as usize) < height {
                    img.set(x as usize, y as usize, color);
                }
            }
        }
    }
    img.save_png(path)
}
