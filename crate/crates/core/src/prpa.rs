//! Post-render perspective alignment.
//!
//! Every client pixel with depth is lifted to 3D, moved into the reference
//! camera and projected into the reference image, where its color is
//! sampled. Reference pixels record how many client pixels landed on them
//! and the smallest reference-space depth among those; a client pixel
//! whose own reference depth exceeds that minimum by more than the
//! threshold looks at a surface the reference could not see and is marked
//! occluded. Occluded pixels are then filled from their neighbors by
//! iterative erosion.

use rayon::prelude::*;

use crate::image::{DepthMap, Image, Mask};
use crate::renderer::Camera;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    Bilinear,
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignOptions {
    /// Erosion window half-size.
    pub k: usize,
    /// Occlusion depth threshold in world units.
    pub threshold: f64,
    pub sampling: Sampling,
}

impl AlignOptions {
    pub fn new(threshold: f64) -> Self {
        Self { k: 2, threshold, sampling: Sampling::Bilinear }
    }
}

/// Reprojection result before erosion.
#[derive(Debug, Clone)]
pub struct Warp {
    pub aligned: Image,
    /// Reference samples agree with the client depth.
    pub valid: Mask,
    pub occluded: Mask,
    /// No depth, or outside the reference frustum.
    pub uncovered: Mask,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ErosionStats {
    pub iterations: usize,
    pub filled: usize,
    /// The remaining occluded pixels were filled with a mean color.
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct AlignmentOutput {
    pub aligned: Image,
    pub valid: Mask,
    /// Occluded pixels as detected, before erosion.
    pub occluded: Mask,
    pub uncovered: Mask,
    pub stats: ErosionStats,
}

impl AlignmentOutput {
    /// Pixels carrying reference information after erosion.
    pub fn covered(&self) -> Mask {
        self.valid.or(&self.occluded)
    }
}

/// Reprojects `reference` (seen by `cam_r`) into `cam_l` using the client
/// depth map, classifying every client pixel.
pub fn warp(reference: &Image, depth: &DepthMap, cam_l: &Camera, cam_r: &Camera, opts: &AlignOptions) -> Warp {
    let (w, h) = (cam_l.width, cam_l.height);
    assert_eq!((depth.width, depth.height), (w, h), "depth map must match the client camera");
    assert_eq!((reference.width, reference.height), (cam_r.width, cam_r.height), "reference must match its camera");
    let (rw, rh) = (cam_r.width, cam_r.height);
    let rel = cam_r.r * cam_l.r.transpose();
    let off = cam_r.t - rel * cam_l.t;

    // (ref x, ref y, ref depth) per client pixel
    let hits: Vec<Option<(f64, f64, f64)>> = (0..w * h)
        .into_par_iter()
        .map(|p| {
            let d = depth.data[p] as f64;
            if !(d > 0.0 && d.is_finite()) {
                return None;
            }
            let xl = cam_l.unproject_camera((p % w) as f64, (p / w) as f64, d);
            let xr = rel * xl + off;
            if !(xr.z > 0.0) {
                return None;
            }
            let (i, j, z) = cam_r.project_camera(&xr);
            cam_r.contains(i, j).then_some((i, j, z))
        })
        .collect();

    let bin = |i: f64, j: f64| {
        let x = (i.round().max(0.0) as usize).min(rw - 1);
        let y = (j.round().max(0.0) as usize).min(rh - 1);
        y * rw + x
    };
    let mut min_depth = vec![f64::INFINITY; rw * rh];
    for &(i, j, z) in hits.iter().flatten() {
        let b = bin(i, j);
        if z < min_depth[b] {
            min_depth[b] = z;
        }
    }

    let mut aligned = Image::new(w, h);
    let mut valid = Mask::new(w, h, false);
    let mut occluded = Mask::new(w, h, false);
    let mut uncovered = Mask::new(w, h, false);
    for (p, hit) in hits.iter().enumerate() {
        let Some((i, j, z)) = *hit else {
            uncovered.data[p] = true;
            continue;
        };
        let c = match opts.sampling {
            Sampling::Bilinear => reference.sample_bilinear(i, j),
            Sampling::Nearest => reference.sample_nearest(i, j),
        };
        aligned.data[3 * p..3 * p + 3].copy_from_slice(&c);
        if (z - min_depth[bin(i, j)]).abs() <= opts.threshold {
            valid.data[p] = true;
        } else {
            occluded.data[p] = true;
        }
    }
    Warp { aligned, valid, occluded, uncovered }
}

/// Fills `occluded` pixels of `img` in place.
///
/// Each iteration takes the pixels bordering the occluded set (3×3
/// dilation minus the set). For each in raster order, the mean color of the
/// pixels in its `(2k+1)²` window that hold information (valid or already
/// filled, not occluded) is written to every occluded pixel of the window
/// not yet written this iteration. Reads see only the state at the start of
/// the iteration. If an iteration fills nothing, the rest is filled with
/// the mean of all informative pixels (or of the whole image) and the
/// fallback flag is set.
pub fn erode_errors(img: &mut Image, valid: &Mask, occluded: &Mask, k: usize) -> ErosionStats {
    let (w, h) = (img.width, img.height);
    let mut pending: Vec<bool> = occluded.data.clone();
    let mut info: Vec<bool> = valid.data.iter().zip(&occluded.data).map(|(&v, &o)| v && !o).collect();
    let mut stats = ErosionStats::default();
    let mut remaining = pending.iter().filter(|&&b| b).count();
    let k = k as isize;
    while remaining > 0 {
        stats.iterations += 1;
        let src = img.clone();
        let src_info = info.clone();
        let src_pending = pending.clone();
        let mut written = vec![false; w * h];
        let mut progress = 0;
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                if src_pending[p] || !near_pending(&src_pending, w, h, x, y) {
                    continue;
                }
                let mut sum = [0.0f64; 3];
                let mut n = 0usize;
                for_window(w, h, x, y, k, |q| {
                    if src_info[q] {
                        for c in 0..3 {
                            sum[c] += src.data[3 * q + c] as f64;
                        }
                        n += 1;
                    }
                });
                if n == 0 {
                    continue;
                }
                let mean = sum.map(|s| (s / n as f64) as f32);
                for_window(w, h, x, y, k, |q| {
                    if src_pending[q] && !written[q] {
                        written[q] = true;
                        img.data[3 * q..3 * q + 3].copy_from_slice(&mean);
                        progress += 1;
                    }
                });
            }
        }
        if progress == 0 {
            fill_mean(img, &info, &pending);
            stats.filled += remaining;
            stats.fallback = true;
            break;
        }
        for q in 0..w * h {
            if written[q] {
                pending[q] = false;
                info[q] = true;
            }
        }
        remaining -= progress;
        stats.filled += progress;
    }
    stats
}

fn near_pending(pending: &[bool], w: usize, h: usize, x: usize, y: usize) -> bool {
    let mut hit = false;
    for_window(w, h, x, y, 1, |q| hit |= pending[q]);
    hit
}

#[inline]
fn for_window(w: usize, h: usize, x: usize, y: usize, k: isize, mut f: impl FnMut(usize)) {
    let (x0, x1) = ((x as isize - k).max(0) as usize, ((x as isize + k) as usize).min(w - 1));
    let (y0, y1) = ((y as isize - k).max(0) as usize, ((y as isize + k) as usize).min(h - 1));
    for yy in y0..=y1 {
        for xx in x0..=x1 {
            f(yy * w + xx);
        }
    }
}

fn fill_mean(img: &mut Image, info: &[bool], pending: &[bool]) {
    let mut sum = [0.0f64; 3];
    let mut n = 0usize;
    for (p, &i) in info.iter().enumerate() {
        if i {
            for c in 0..3 {
                sum[c] += img.data[3 * p + c] as f64;
            }
            n += 1;
        }
    }
    if n == 0 {
        for px in img.data.chunks_exact(3) {
            for c in 0..3 {
                sum[c] += px[c] as f64;
            }
        }
        n = img.width * img.height;
    }
    let mean = sum.map(|s| (s / n.max(1) as f64) as f32);
    for (p, &pd) in pending.iter().enumerate() {
        if pd {
            img.data[3 * p..3 * p + 3].copy_from_slice(&mean);
        }
    }
}

/// Warp followed by erosion.
pub fn align(reference: &Image, depth: &DepthMap, cam_l: &Camera, cam_r: &Camera, opts: &AlignOptions) -> AlignmentOutput {
    let Warp { mut aligned, valid, occluded, uncovered } = warp(reference, depth, cam_l, cam_r, opts);
    let stats = erode_errors(&mut aligned, &valid, &occluded, opts.k);
    AlignmentOutput { aligned, valid, occluded, uncovered, stats }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector3};
    use std::collections::HashSet;

    fn gradient(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| [x as f32 / w as f32, y as f32 / h as f32, 0.25 + 0.5 * ((x + y) % 2) as f32])
    }

    #[test]
    fn identity_warp_is_exact() {
        let cam = Camera::from_pose(Vector3::new(0.3, -0.1, 0.0), UnitQuaternion::from_euler_angles(0.1, 0.2, 0.0), 1.2, 1.0, 48, 36);
        let a = gradient(48, 36);
        let depth = DepthMap::from_fn(48, 36, |x, y| 1.0 + 0.05 * x as f32 + 0.02 * y as f32);
        for sampling in [Sampling::Nearest, Sampling::Bilinear] {
            let out = align(&a, &depth, &cam, &cam, &AlignOptions { sampling, ..AlignOptions::new(0.01) });
            assert_eq!(out.aligned, a);
            assert!(out.occluded.is_empty());
            assert_eq!(out.valid.count(), 48 * 36);
        }
    }

    #[test]
    fn missing_depth_is_uncovered() {
        let cam = Camera::from_pose(Vector3::zeros(), UnitQuaternion::identity(), 1.2, 1.0, 8, 6);
        let mut depth = DepthMap::from_fn(8, 6, |_, _| 2.0);
        depth.data[3] = 0.0;
        let w = warp(&gradient(8, 6), &depth, &cam, &cam, &AlignOptions::new(0.1));
        assert!(w.uncovered.data[3] && !w.valid.data[3] && !w.occluded.data[3]);
        assert_eq!(w.aligned.get(3, 0), [0.0; 3]);
        assert_eq!(w.uncovered.count(), 1);
    }

    #[test]
    fn no_occlusion_is_a_no_op() {
        let mut img = gradient(10, 10);
        let before = img.clone();
        let s = erode_errors(&mut img, &Mask::new(10, 10, true), &Mask::new(10, 10, false), 2);
        assert_eq!(img, before);
        assert_eq!(s, ErosionStats::default());
    }

    #[test]
    fn single_pixel_in_constant_field() {
        let c = [0.2, 0.4, 0.6];
        let mut img = Image::filled(9, 9, c);
        img.set(4, 4, [1.0, 0.0, 0.0]);
        let mut occ = Mask::new(9, 9, false);
        occ.set(4, 4, true);
        let mut valid = Mask::new(9, 9, true);
        valid.set(4, 4, false);
        let s = erode_errors(&mut img, &valid, &occ, 1);
        assert_eq!(s.iterations, 1);
        assert_eq!(img.get(4, 4), c);
    }

    /// Same semantics as `erode_errors`, written over hash sets.
    fn erode_oracle(img: &Image, valid: &Mask, occ: &Mask, k: isize) -> (Image, usize) {
        let (w, h) = (img.width as isize, img.height as isize);
        let mut out = img.clone();
        let mut pending: HashSet<(isize, isize)> = HashSet::new();
        let mut info: HashSet<(isize, isize)> = HashSet::new();
        for y in 0..h {
            for x in 0..w {
                let p = (y * w + x) as usize;
                if occ.data[p] {
                    pending.insert((x, y));
                } else if valid.data[p] {
                    info.insert((x, y));
                }
            }
        }
        let mut iters = 0;
        while !pending.is_empty() {
            iters += 1;
            let prev = out.clone();
            let mut boundary: Vec<(isize, isize)> = Vec::new();
            for &(x, y) in &pending {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let q = (x + dx, y + dy);
                        if q.0 >= 0 && q.1 >= 0 && q.0 < w && q.1 < h && !pending.contains(&q) {
                            boundary.push(q);
                        }
                    }
                }
            }
            boundary.sort_by_key(|&(x, y)| (y, x));
            boundary.dedup();
            let mut written: HashSet<(isize, isize)> = HashSet::new();
            for (bx, by) in boundary {
                let window: Vec<(isize, isize)> = (-k..=k)
                    .flat_map(|dy| (-k..=k).map(move |dx| (bx + dx, by + dy)))
                    .filter(|q| q.0 >= 0 && q.1 >= 0 && q.0 < w && q.1 < h)
                    .collect();
                let src: Vec<&(isize, isize)> = window.iter().filter(|q| info.contains(q)).collect();
                if src.is_empty() {
                    continue;
                }
                let mut m = [0.0f64; 3];
                for q in &src {
                    let c = prev.get(q.0 as usize, q.1 as usize);
                    for i in 0..3 {
                        m[i] += c[i] as f64;
                    }
                }
                let m = m.map(|v| (v / src.len() as f64) as f32);
                for q in &window {
                    if pending.contains(q) && written.insert(*q) {
                        out.set(q.0 as usize, q.1 as usize, m);
                    }
                }
            }
            assert!(!written.is_empty());
            for q in written {
                pending.remove(&q);
                info.insert(q);
            }
        }
        (out, iters)
    }

    #[test]
    fn gradient_square_matches_oracle_and_ring_range() {
        let (w, h) = (15, 13);
        let img0 = Image::from_fn(w, h, |x, y| [0.05 * x as f32, 0.03 * y as f32 + 0.1, 0.5]);
        let mut occ = Mask::new(w, h, false);
        for y in 4..9 {
            for x in 5..10 {
                occ.set(x, y, true);
            }
        }
        let valid = Mask { width: w, height: h, data: occ.data.iter().map(|&o| !o).collect() };
        let mut img = img0.clone();
        let s = erode_errors(&mut img, &valid, &occ, 2);
        let (want, iters) = erode_oracle(&img0, &valid, &occ, 2);
        assert_eq!(img, want);
        assert_eq!(s.iterations, iters);
        assert!(s.iterations <= 3);
        assert_eq!(s.filled, 25);
        // range over the ring of width k + 1 around the square
        let (mut lo, mut hi) = ([f32::INFINITY; 3], [f32::NEG_INFINITY; 3]);
        for y in 1..12 {
            for x in 2..13 {
                if !occ.get(x, y) {
                    let c = img0.get(x, y);
                    for i in 0..3 {
                        lo[i] = lo[i].min(c[i]);
                        hi[i] = hi[i].max(c[i]);
                    }
                }
            }
        }
        for y in 4..9 {
            for x in 5..10 {
                let c = img.get(x, y);
                for i in 0..3 {
                    assert!(c[i] >= lo[i] - 1e-6 && c[i] <= hi[i] + 1e-6);
                }
            }
        }
    }

    #[test]
    fn fully_masked_image_falls_back_to_mean() {
        let mut img = gradient(6, 4);
        let s = erode_errors(&mut img, &Mask::new(6, 4, false), &Mask::new(6, 4, true), 2);
        assert!(s.fallback);
        let first = img.get(0, 0);
        assert!(img.data.chunks_exact(3).all(|p| p == first));
    }

    proptest::proptest! {
        #[test]
        fn erosion_terminates_within_bound(seed in 0u64..500, k in 1usize..3) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (w, h) = (rng.gen_range(3..20), rng.gen_range(3..20));
            let img0 = Image::from_fn(w, h, |x, y| [x as f32 / w as f32, y as f32 / h as f32, 0.5]);
            let occ = Mask { width: w, height: h, data: (0..w * h).map(|_| rng.gen_bool(0.4)).collect() };
            let valid = Mask { width: w, height: h, data: occ.data.iter().map(|&o| !o && rng.gen_bool(0.8)).collect() };
            let mut img = img0.clone();
            let s = erode_errors(&mut img, &valid, &occ, k);
            proptest::prop_assert!(s.iterations <= w + h);
            proptest::prop_assert_eq!(s.filled, occ.count());
            if !s.fallback {
                for p in 0..w * h {
                    if occ.data[p] {
                        for c in 0..3 {
                            let v = img.data[3 * p + c];
                            let range = img0.data.iter().skip(c).step_by(3);
                            let (lo, hi) = range.fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
                            proptest::prop_assert!(v >= lo - 1e-6 && v <= hi + 1e-6);
                        }
                    }
                }
            }
        }
    }
}
