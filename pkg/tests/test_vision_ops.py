from collections import deque

import numpy as np
import pytest

from algorithms.vision_ops import (IntegralImage, VisionError, block_downscale,
                                   connected_components, gaussian_blur, gaussian_kernel,
                                   label_mask, sobel)


def _clamped(img, y, x):
    h, w = img.shape
    return float(img[min(max(y, 0), h - 1), min(max(x, 0), w - 1)])


def test_sobel_matches_naive_loops():
    img = np.random.default_rng(0).integers(0, 256, size = (9, 12))
    grad = sobel(img)
    weights = {-1: 1.0, 0: 2.0, 1: 1.0}
    for y in range(img.shape[0]):
        for x in range(img.shape[1]):
            gx = sum(w * (_clamped(img, y + d, x + 1) - _clamped(img, y + d, x - 1))
                     for d, w in weights.items())
            gy = sum(w * (_clamped(img, y + 1, x + d) - _clamped(img, y - 1, x + d))
                     for d, w in weights.items())
            assert grad.gx[y, x] == pytest.approx(gx)
            assert grad.gy[y, x] == pytest.approx(gy)
            assert grad.magnitude[y, x] == pytest.approx(np.hypot(gx, gy))


def test_sobel_too_small():
    with pytest.raises(VisionError):
        sobel(np.zeros((2, 8)))


def test_gaussian_kernel_and_blur():
    kern = gaussian_kernel(1.5)
    assert len(kern) == 2 * 5 + 1
    assert kern.sum() == pytest.approx(1.0)
    flat = np.full((10, 10), 77, dtype = np.uint8)
    assert np.allclose(gaussian_blur(flat, 2.0), 77.0)
    img = np.random.default_rng(1).integers(0, 256, size = (5, 5))
    assert np.array_equal(gaussian_blur(img, 0), img.astype(np.float64))
    with pytest.raises(VisionError):
        gaussian_blur(img, -1)


def test_block_downscale_drops_partial_blocks():
    img = np.arange(25, dtype = np.float64).reshape(5, 5)
    out = block_downscale(img, 2)
    assert out.shape == (2, 2)
    assert out[0, 0] == pytest.approx((0 + 1 + 5 + 6) / 4)
    assert out[1, 1] == pytest.approx((12 + 13 + 17 + 18) / 4)
    with pytest.raises(VisionError):
        block_downscale(img, 0)
    with pytest.raises(VisionError):
        block_downscale(img, 6)


def test_rect_sum_matches_numpy():
    rng = np.random.default_rng(2)
    img = rng.integers(0, 256, size = (13, 21))
    table = IntegralImage(img)
    for _ in range(200):
        x0, x1 = sorted(rng.integers(-3, 24, size = 2))
        y0, y1 = sorted(rng.integers(-3, 16, size = 2))
        naive = int(img[max(y0, 0):max(y1 + 1, 0), max(x0, 0):max(x1 + 1, 0)].sum())
        assert table.rect_sum(x0, y0, x1, y1) == naive


@pytest.mark.parametrize("seed, window", [(0, (3, 3)), (1, (4, 6)), (2, (7, 5)), (3, (30, 30))])
def test_window_sums_match_naive(seed, window):
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 256, size = (11, 16))
    ww, wh = window
    sums, counts = IntegralImage(img).window_sums(ww, wh)
    h, w = img.shape
    for y in range(h):
        for x in range(w):
            ys = slice(max(0, y - wh // 2), min(h, y + (wh - 1) // 2 + 1))
            xs = slice(max(0, x - ww // 2), min(w, x + (ww - 1) // 2 + 1))
            assert sums[y, x] == img[ys, xs].sum()
            assert counts[y, x] == img[ys, xs].size


def _flood_fill_blobs(mask):
    ''' Reference labelling: BFS over 8 neighbours, raster-order seeds '''
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype = bool)
    blobs = []
    for sy in range(h):
        for sx in range(w):
            if not mask[sy, sx] or seen[sy, sx]:
                continue
            pixels = []
            queue = deque([(sy, sx)])
            seen[sy, sx] = True
            while queue:
                y, x = queue.popleft()
                pixels.append((y, x))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = y + dy, x + dx
                        if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            queue.append((ny, nx))
            perim = 0
            for y, x in pixels:
                for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                    ny, nx = y + dy, x + dx
                    if not (0 <= ny < h and 0 <= nx < w) or not mask[ny, nx]:
                        perim += 1
            ys = [p[0] for p in pixels]; xs = [p[1] for p in pixels]
            blobs.append((len(pixels), perim, (min(xs), min(ys), max(xs), max(ys))))
    return blobs


@pytest.mark.parametrize("seed", range(8))
def test_connected_components_match_flood_fill(seed):
    mask = np.random.default_rng(seed).random((24, 19)) < 0.35
    got = [(b.area, b.perimeter, b.bbox) for b in connected_components(mask)]
    assert got == _flood_fill_blobs(mask)


def test_connectivity_and_blob_stats():
    mask = np.zeros((5, 5), dtype = bool)
    mask[1, 1] = mask[2, 2] = True
    assert len(connected_components(mask, connectivity = 8)) == 1
    singles = connected_components(mask, connectivity = 4)
    assert len(singles) == 2
    assert singles[0].area == 1 and singles[0].perimeter == 4
    assert singles[0].pa_ratio == pytest.approx(4.0)
    with pytest.raises(VisionError):
        label_mask(mask, connectivity = 6)


def test_components_offset_and_centroid():
    mask = np.zeros((10, 10), dtype = bool)
    mask[2:4, 3:8] = True
    blob, = connected_components(mask, offset = (100, 50))
    assert blob.bbox == (103, 52, 107, 53)
    assert blob.centroid == (105.0, 52.5)
    assert blob.bbox_area == 10
    assert blob.perimeter == 14


def test_components_empty_mask():
    assert connected_components(np.zeros((4, 4), dtype = bool)) == []


@pytest.mark.parametrize("sigma, shape", [(0.8, (7, 9)), (1.5, (12, 10)), (2.0, (6, 15))])
def test_gaussian_blur_matches_naive_convolution(sigma, shape):
    img = np.random.default_rng(4).integers(0, 256, size = shape)
    kern = gaussian_kernel(sigma)
    radius = len(kern) // 2
    out = gaussian_blur(img, sigma)
    for y in range(shape[0]):
        for x in range(shape[1]):
            naive = sum(kern[i + radius] * kern[j + radius] * _clamped(img, y + i, x + j)
                        for i in range(-radius, radius + 1) for j in range(-radius, radius + 1))
            assert abs(out[y, x] - naive) <= 1e-9


def test_gaussian_blur_of_impulse_is_the_kernel():
    img = np.zeros((21, 21))
    img[10, 10] = 1.0
    kern = gaussian_kernel(1.5)
    out = gaussian_blur(img, 1.5)
    expected = np.zeros_like(img)
    expected[5:16, 5:16] = np.outer(kern, kern)
    assert np.allclose(out, expected, atol = 1e-12)
    assert out.sum() == pytest.approx(1.0)


def test_sobel_is_linear():
    rng = np.random.default_rng(6)
    a = rng.normal(size = (10, 13))
    b = rng.normal(size = (10, 13))
    both = sobel(2.5 * a - 0.75 * b)
    ga, gb = sobel(a), sobel(b)
    assert np.allclose(both.gx, 2.5 * ga.gx - 0.75 * gb.gx, atol = 1e-12)
    assert np.allclose(both.gy, 2.5 * ga.gy - 0.75 * gb.gy, atol = 1e-12)
    assert np.allclose(sobel(a + 40.0).gx, ga.gx, atol = 1e-12)
