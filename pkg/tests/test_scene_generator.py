import math

import numpy as np
import pytest

from tools.scene_generator import (MembraneSpec, SceneConfig, SceneError, SplitMix64, WormScript,
                                   body_points, crossing_scene, disk_coverage, dose_series_configs,
                                   read_ground_truth, render_scene, scene_summary, simulate,
                                   truth_to_tracks)
from utilities.frame_io import open_sequence, read_manifest


def test_splitmix64_reference_vectors():
    rng = SplitMix64(1234567)
    assert [rng.next_u64() for _ in range(5)] == [
        6457827717110365317, 3203168211198807973, 9817491932198370423,
        4593380528125082431, 16408922859458223821]


def test_vectorized_stream_matches_scalar():
    a, b = SplitMix64(42), SplitMix64(42)
    a.next_u64()
    b.u64s(1)
    assert [int(v) for v in b.u64s(6)] == [a.next_u64() for _ in range(6)]
    u = SplitMix64(7).uniforms(10000)
    assert u.min() >= 0.0 and u.max() < 1.0
    n = SplitMix64(7).normals(20001)
    assert len(n) == 20001
    assert abs(n.mean()) < 0.05 and abs(n.std() - 1.0) < 0.05


def test_disk_coverage_area():
    cov = disk_coverage(64, 64, 31.3, 30.8, 20.0)
    assert cov.min() >= 0.0 and cov.max() <= 1.0
    assert cov.sum() == pytest.approx(math.pi * 400, rel = 0.005)


def test_body_points_span_the_worm_length():
    cfg = SceneConfig()
    body = body_points(cfg, 100.0, 50.0, 0.0, 0)
    assert body[:, 0].min() == pytest.approx(100.0 - cfg.worm_length_px / 2)
    assert body[:, 0].max() == pytest.approx(100.0 + cfg.worm_length_px / 2)
    assert np.abs(body[:, 1] - 50.0).max() <= cfg.undulation_amp_px + 1e-9


def test_same_seed_same_bytes(single_membrane_config):
    cfg = single_membrane_config(frame_count = 4)
    frames_a, truth_a = simulate(cfg)
    frames_b, truth_b = simulate(cfg)
    assert all(np.array_equal(a.pixels, b.pixels) for a, b in zip(frames_a, frames_b))
    assert truth_a.rows == truth_b.rows
    frames_c, _ = simulate(single_membrane_config(frame_count = 4, seed = 8))
    assert not np.array_equal(frames_a[0].pixels, frames_c[0].pixels)


def test_worms_stay_inside_their_membranes(single_membrane_config):
    cfg = single_membrane_config(frame_count = 60, speed_px_per_frame = 6.0, noise_std = 0.0)
    _, truth = simulate(cfg)
    m = cfg.membranes[0]
    reach = cfg.free_radius(m) + cfg.worm_length_px / 2 + cfg.undulation_amp_px
    for row in truth.rows:
        assert math.hypot(row.x - m.cx, row.y - m.cy) <= reach


def test_config_validation():
    with pytest.raises(SceneError):
        SceneConfig(width = 256, height = 256)                # default membranes leave the frame
    with pytest.raises(SceneError):
        SceneConfig(worm_intensity = 300)
    with pytest.raises(SceneError):
        SceneConfig(worm_scripts = [WormScript(7, 10, 10)])
    with pytest.raises(SceneError):
        simulate(SceneConfig(worm_length_px = 250, frame_count = 1))
    cfg = SceneConfig(membranes = [dict(cx = 100, cy = 100, r = 60)], width = 200, height = 200)
    assert isinstance(cfg.membranes[0], MembraneSpec)


def test_scripted_speed_is_ground_truth():
    cfg = crossing_scene(frame_count = 10)
    _, truth = simulate(cfg)
    assert truth.worm_ids() == [0, 1]
    assert all(r.speed_px_s == pytest.approx(20.0) for r in truth.rows)
    first = [r for r in truth.rows if r.frame_index == 0]
    assert (first[0].x, first[0].y) == pytest.approx((68.0, 128.0), abs = 0.1)


def test_crossing_scene_merges_and_separates():
    _, truth = simulate(crossing_scene())
    merged = sorted(set(r.frame_index for r in truth.rows if r.merged))
    assert merged
    assert merged[0] > 0 and merged[-1] < truth.frame_count - 5
    by_frame = truth.by_frame()
    for f in merged:
        assert all(r.merged for r in by_frame[f])


def test_dose_series_scales_speed():
    base = SceneConfig(frame_count = 5)
    series = dose_series_configs(base, [0.0, 40.0, 4000.0], ec50 = 40.0, hill_slope = 2.0)
    assert [name for name, _, _ in series] == ["dose_00", "dose_01", "dose_02"]
    speeds = [cfg.speed_px_per_frame for _, _, cfg in series]
    assert speeds[0] == pytest.approx(base.speed_px_per_frame)
    assert speeds[1] == pytest.approx(base.speed_px_per_frame / 2)
    assert speeds[2] < 0.01 * base.speed_px_per_frame
    assert [cfg.seed for _, _, cfg in series] == [base.seed, base.seed + 1, base.seed + 2]


def test_write_scene_round_trip(single_membrane_config, scene_writer):
    cfg = single_membrane_config(frame_count = 3, seed = 5)
    out, truth = scene_writer(cfg)
    manifest = read_manifest(out)
    assert manifest.frame_count == 3 and manifest.extra["seed"] == 5
    assert len(list(open_sequence(manifest, out))) == 3
    back = read_ground_truth(out)
    assert len(back.rows) == len(truth.rows)
    assert back.rows[0].x == pytest.approx(truth.rows[0].x, abs = 1e-6)
    assert back.circles[0].r == 100.0
    tracks = truth_to_tracks(back)
    assert [len(t.points) for t in tracks] == [3]
    summary = scene_summary(cfg, truth)
    assert summary["worms"] == 1 and summary["membranes"] == 1


def test_read_ground_truth_missing(tmp_path):
    with pytest.raises(SceneError):
        read_ground_truth(str(tmp_path))


@pytest.mark.parametrize("heading, frame", [(0.3, 0), (1.9, 3), (-2.4, 7), (math.pi / 2, 5)])
def test_body_bbox_is_centred_on_the_worm(heading, frame):
    cfg = SceneConfig()
    body = body_points(cfg, 120.0, 80.0, heading, frame)
    assert 0.5 * (body[:, 0].min() + body[:, 0].max()) == pytest.approx(120.0, abs = 1e-9)
    assert 0.5 * (body[:, 1].min() + body[:, 1].max()) == pytest.approx(80.0, abs = 1e-9)
    reach = np.hypot(body[:, 0] - 120.0, body[:, 1] - 80.0).max()
    assert reach <= cfg.worm_length_px / 2 + 2 * cfg.undulation_amp_px


@pytest.mark.parametrize("speed", [1.0, 3.0, 6.0])
def test_truth_speed_is_the_position_step(single_membrane_config, speed):
    cfg = single_membrane_config(frame_count = 40, speed_px_per_frame = speed, noise_std = 0.0)
    _, truth = simulate(cfg)
    for track in truth_to_tracks(truth):
        pts = track.points
        for a, b in zip(pts, pts[1:]):
            row = next(r for r in truth.rows
                       if r.frame_index == b.frame_index and r.worm_id == track.id)
            step = math.hypot(b.x - a.x, b.y - a.y)
            assert row.speed_px_s == pytest.approx(step * cfg.fps, abs = 1e-9)


def test_render_scene_streams_the_same_scene(single_membrane_config, tmp_path):
    cfg = single_membrane_config(frame_count = 5, seed = 21)
    frames, truth = simulate(cfg)
    streamed = render_scene(cfg, str(tmp_path / "scene"))
    assert streamed.rows == truth.rows
    manifest = read_manifest(str(tmp_path / "scene"))
    for a, b in zip(frames, open_sequence(manifest, str(tmp_path / "scene"))):
        assert np.array_equal(a.pixels, b.pixels)
    assert read_ground_truth(str(tmp_path / "scene")).rows[-1].frame_index == 4
