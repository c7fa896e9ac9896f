use gsvv::gaussian_model::GaussianFrame;
use gsvv::image::Mask;
use gsvv::metrics::psnr;
use gsvv::renderer::{render, Camera};
use gsvv::restore::restore;
use gsvv::sim::{generate_scene, SceneSpec};
use gsvv::svq::{AttributeKind, AttributeSpec, CodebookSet};
use nalgebra::Vector3;

// Each case renders a scene with coarse SH colors and restores it against
// a render of the full-depth decode from the same viewpoint.
fn case(seed: u64) -> (f64, f64) {
    let spec = SceneSpec { seed, frames: 1, ..SceneSpec::default() };
    let frame = generate_scene(&spec).unwrap().frames().unwrap().remove(0);
    let refs: Vec<_> = frame.gaussians.iter().collect();
    let set = CodebookSet::build(&refs, frame.sh_degree, &AttributeSpec::defaults(frame.sh_degree), 4096, seed).unwrap();
    let q = set.quantize(&refs).unwrap();
    let positions: Vec<_> = frame.gaussians.iter().map(|g| g.position).collect();
    let full: Vec<usize> = set.codebooks.iter().map(|c| c.layer_count()).collect();
    let coarse: Vec<usize> = set
        .codebooks
        .iter()
        .map(|c| if matches!(c.spec.kind, AttributeKind::Sh(_)) { 1 } else { c.layer_count() })
        .collect();
    let as_frame = |layers: &[usize]| GaussianFrame::new(0, frame.sh_degree, set.reconstruct(&positions, &q, layers).unwrap()).unwrap();
    let yaw = 0.3 * ((seed % 5) as f64 - 2.0);
    let target = Vector3::new(6.0 * yaw.sin(), 0.2, 6.0 * yaw.cos());
    let cam = Camera::look_at(Vector3::new(0.0, -0.3, 0.0), target, Vector3::new(0.0, -1.0, 0.0), 1.48, 1.2, 160, 120);
    let truth = render(&frame, &cam, 1.0 / 255.0).color;
    let reference = render(&as_frame(&full), &cam, 1.0 / 255.0).color;
    let distorted = render(&as_frame(&coarse), &cam, 1.0 / 255.0).color;
    let restored = restore(&distorted, &reference, &Mask::new(160, 120, true), 8);
    (psnr(&distorted, &truth).unwrap(), psnr(&restored, &truth).unwrap())
}

#[test]
fn restoration_improves_coarse_colors() {
    let results: Vec<(f64, f64)> = (1..=10).map(case).collect();
    let wins = results.iter().filter(|(d, r)| r >= d).count();
    assert!(wins >= 9, "{results:?}");
}
