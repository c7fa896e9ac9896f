use gsvv::sim::*;
use gsvv::svq::AttributeSpec;

fn scene(frames: usize) -> SceneSpec {
    SceneSpec { frames, blobs: 3, blob_size: 40, moving_blobs: 2, wall_spacing: 0.5, floor_spacing: 0.6, ..SceneSpec::default() }
}

#[test]
fn keyframes_and_differential_frames_use_their_tile_sizes() {
    let frames = generate_scene(&scene(4)).unwrap().frames().unwrap();
    let cfg = EncodeConfig { tile_size: 200, diff_tile_size: 30, gof: 3, ..EncodeConfig::default() };
    let video = encode_frames(&frames, &cfg).unwrap();
    for (i, c) in video.containers.iter().enumerate() {
        let key = i % 3 == 0;
        assert_eq!(c.manifest.keyframe, key);
        let cap = if key { 200 } else { 30 };
        assert!(c.manifest.tiles.iter().all(|t| t.count <= cap), "frame {i}");
        let total: usize = c.manifest.tiles.iter().map(|t| t.count).sum();
        if key {
            assert_eq!(total, frames[i].len());
        } else {
            assert!(total > 0 && total < frames[i].len());
        }
    }
}

#[test]
fn encoded_video_round_trips_through_a_directory() {
    let frames = generate_scene(&scene(3)).unwrap().frames().unwrap();
    let video = encode_frames(&frames, &EncodeConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    video.save(dir.path()).unwrap();
    let back = EncodedVideo::load(dir.path()).unwrap();
    assert_eq!(back.index, video.index);
    assert_eq!(back.codebooks, video.codebooks);
    assert_eq!(back.containers, video.containers);
}

#[test]
fn sweep_schedule_is_a_valid_reordering() {
    let frames = generate_scene(&scene(1)).unwrap().frames().unwrap();
    let cfg = EncodeConfig { schedule: ScheduleMode::Sweep, ..EncodeConfig::default() };
    let video = encode_frames(&frames, &cfg).unwrap();
    let schedule = &video.containers[0].manifest.schedule;
    let specs = AttributeSpec::defaults(frames[0].sh_degree);
    schedule.validate(&specs).unwrap();
    let default = gsvv::tiling_lod::LodSchedule::default_for(&specs);
    assert_eq!(schedule.level_count(), default.level_count());
    assert_eq!(sweep_schedule(&frames[0], &video.codebooks).unwrap(), *schedule);
}
