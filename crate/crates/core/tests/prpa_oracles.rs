mod common;

use common::*;

#[test]
fn identity_cameras_copy_the_reference() {
    assert_eq!(identity_check(), (true, 0));
}

#[test]
fn two_plane_occlusion_band() {
    let r = two_plane_check();
    assert!(r.band > 500);
    assert!(r.iou >= 0.95, "IoU {}", r.iou);
    assert!(r.iterations <= r.limit);
    assert_eq!(r.filled, r.occluded);
}

#[test]
fn pure_rotation_matches_homography() {
    for (good, n) in rotation_check() {
        assert!(n > 10_000);
        assert!(good as f64 >= 0.99 * n as f64, "{good}/{n}");
    }
}
