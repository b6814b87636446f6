import numpy as np
import pytest

from algorithms.membrane_finder import Circle, Contour, Membrane
from algorithms.vision_ops import Blob, VisionError
from algorithms.worm_segmenter import (ThresholdConfig, WormFilterConfig, classify_worms,
                                       dump_mask, local_threshold, segment_frame,
                                       write_detections_csv)
from utilities.frame_io import read_pgm
from utilities.logging_utils import read_csv_table


def _naive_threshold(img, ww, wh, ratio):
    h, w = img.shape
    out = np.zeros(img.shape, dtype = bool)
    for y in range(h):
        for x in range(w):
            y0, y1 = max(0, y - wh // 2), min(h - 1, y + (wh - 1) // 2)
            x0, x1 = max(0, x - ww // 2), min(w - 1, x + (ww - 1) // 2)
            s = int(img[y0:y1 + 1, x0:x1 + 1].astype(np.int64).sum())
            c = (y1 - y0 + 1) * (x1 - x0 + 1)
            out[y, x] = img[y, x] < ratio * (s / c)
    return out


@pytest.mark.parametrize("seed", range(10))
def test_local_threshold_matches_naive_window_mean(seed):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(5, 30, size = 2)
    img = rng.integers(0, 256, size = (h, w)).astype(np.uint8)
    ww, wh = (int(v) for v in rng.integers(3, 12, size = 2))
    ratio = float(rng.uniform(0.5, 0.99))
    cfg = ThresholdConfig(window_w = ww, window_h = wh, ratio = ratio)
    assert np.array_equal(local_threshold(img, cfg), _naive_threshold(img, ww, wh, ratio))


def test_threshold_config_validation():
    with pytest.raises(VisionError):
        ThresholdConfig(ratio = 1.0)
    with pytest.raises(VisionError):
        ThresholdConfig(window_w = 2)
    with pytest.raises(VisionError):
        WormFilterConfig(min_area_px = 300, max_area_px = 200)


def _blob(area, perimeter):
    return Blob(label = 1, area = area, perimeter = perimeter, bbox = (0, 0, 1, 1),
                centroid = (0.5, 0.5))


def test_classifier_bounds_are_inclusive():
    blobs = [_blob(200, 100), _blob(300, 300), _blob(199, 150), _blob(301, 200),
             _blob(250, 124), _blob(250, 251)]
    kept = classify_worms(blobs)
    assert [(b.area, b.perimeter) for b in kept] == [(200, 100), (300, 300)]


def _whole_frame_membrane(mid, mask):
    ys, xs = np.nonzero(mask)
    contour = Contour(points = np.array([[xs.min(), ys.min()], [xs.max(), ys.min()],
                                         [xs.max(), ys.max()], [xs.min(), ys.max()]], dtype = float))
    return Membrane(id = mid, circle = Circle(0, 0, 1), contour = contour, mask = mask)


def _bar_frame():
    img = np.full((200, 200), 190, dtype = np.uint8)
    img[40:44, 30:90] = 40          # 4 x 60 bar: area 240, perimeter 128
    img[100:160, 140:144] = 40      # vertical bar
    img[120:124, 112:172] = 40      # crossing it: one merged blob
    return img


def test_segment_frame_reports_worms_and_merged_blobs():
    img = _bar_frame()
    mask = np.zeros(img.shape, dtype = bool)
    mask[10:190, 10:190] = True
    dets = segment_frame(img, [_whole_frame_membrane(0, mask)], frame_index = 7)
    assert len(dets) == 2
    worm, merged = dets
    assert worm.frame_index == 7 and worm.membrane_id == 0
    assert worm.area_px == 240 and worm.perimeter_px == 128
    assert worm.centroid == (59.5, 41.5)
    assert not worm.merged
    assert merged.merged
    assert merged.area_px == 2 * 240 - 16
    assert merged.perimeter_px == 2 * 128 - 16
    assert merged.bbox == (112, 100, 171, 159)


def test_segment_frame_clips_to_membrane_interior():
    img = _bar_frame()
    left = np.zeros(img.shape, dtype = bool)
    left[10:190, 10:60] = True
    right = np.zeros(img.shape, dtype = bool)
    right[10:190, 60:110] = True
    dets = segment_frame(img, [_whole_frame_membrane(0, left), _whole_frame_membrane(1, right)])
    # the bar is split 30/30 columns, 120 px per side: below the area floor
    assert dets == []


def test_detections_csv_and_mask_dump(tmp_path):
    img = _bar_frame()
    mask = np.ones(img.shape, dtype = bool)
    dets = segment_frame(img, [_whole_frame_membrane(3, mask)], frame_index = 2)
    path = write_detections_csv(dets, str(tmp_path / "detections.csv"))
    rows = read_csv_table(path)
    assert list(rows[0]) == ["frame", "membraneId", "cx", "cy", "area", "perimeter", "merged"]
    assert rows[0]["membraneId"] == "3"
    assert [r["merged"] for r in rows] == ["0", "1"]
    back = read_pgm(dump_mask(local_threshold(img), str(tmp_path / "mask.pgm")))
    assert set(np.unique(back)) == {0, 255}
    assert int((back == 255).sum()) == 240 + 464


@pytest.mark.parametrize("seed, gain", [(0, 2), (1, 3), (2, 4), (3, 4)])
def test_local_threshold_ignores_illumination_gain(seed, gain):
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 64, size = (24, 31)).astype(np.uint8)
    cfg = ThresholdConfig(window_w = 7, window_h = 5, ratio = 0.8537)
    bright = (img.astype(np.int64) * gain).astype(np.uint8)
    assert int(img.max()) * gain <= 255
    base = local_threshold(img, cfg)
    scaled = local_threshold(bright, cfg)
    margin = np.abs(img.astype(np.float64) - cfg.ratio * _naive_window_mean(img, 7, 5)) > 1e-6
    assert np.array_equal(base[margin], scaled[margin])
    assert base.any() and not base.all()


def _naive_window_mean(img, ww, wh):
    h, w = img.shape
    out = np.zeros(img.shape)
    for y in range(h):
        for x in range(w):
            y0, y1 = max(0, y - wh // 2), min(h - 1, y + (wh - 1) // 2)
            x0, x1 = max(0, x - ww // 2), min(w - 1, x + (ww - 1) // 2)
            out[y, x] = img[y0:y1 + 1, x0:x1 + 1].mean()
    return out
