''' Membrane detection: circular Hough transform on a downscaled frame, then an
active contour (snake) refining every circle at full resolution.
The refined interiors are the only regions searched for worms.
'''

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
from scipy import ndimage
from loguru import logger

from algorithms.vision_ops import (VisionError, as_pixels, block_downscale,
                                   gaussian_blur, sobel)
from utilities.logging_utils import fmt_float, write_csv_table


class MembraneError(Exception):
    pass


##====== Types =================================================================

@dataclass(frozen = True)
class ChtConfig:
    downscale: int = 4
    grad_percentile: float = 90.0     # candidate gate: top 10% of gradient magnitudes
    r_min_px: float = 40.0
    r_max_px: float = 110.0
    r_step_px: float = 2.0
    peak_fraction: float = 0.5
    min_center_sep_px: Optional[float] = None
    min_support: float = 0.4          # votes / ring samples a peak needs

    def __post_init__(self):
        if int(self.downscale) != self.downscale or self.downscale < 1:
            raise MembraneError("downscale must be an integer >= 1")
        if not 0 < self.r_min_px < self.r_max_px:
            raise MembraneError("need 0 < r_min_px < r_max_px, got {} / {}".format(
                                    self.r_min_px, self.r_max_px))
        if not 0 < self.peak_fraction <= 1:
            raise MembraneError("peak_fraction must be in (0, 1]")
        if not 0 <= self.grad_percentile < 100:
            raise MembraneError("grad_percentile must be in [0, 100)")
        if self.r_step_px <= 0:
            raise MembraneError("r_step_px must be > 0")

    @property
    def center_sep_px(self):
        return self.r_min_px if self.min_center_sep_px is None else self.min_center_sep_px


@dataclass(frozen = True)
class SnakeConfig:
    n_points: int = 128
    alpha: float = 0.01       # elasticity
    beta: float = 0.0         # rigidity
    gamma: float = 4.0        # external force weight
    step_size: float = 1.0
    edge_sigma: float = 2.0
    max_iters: int = 400
    epsilon: float = 0.1      # px, max point displacement for convergence
    max_move_px: float = 1.0  # per-iteration displacement cap

    def __post_init__(self):
        if self.n_points < 16:
            raise MembraneError("snake needs at least 16 points")
        if min(self.alpha, self.beta, self.gamma, self.step_size, self.edge_sigma) < 0:
            raise MembraneError("snake weights must be >= 0")


@dataclass
class Circle:
    cx: float
    cy: float
    r: float
    votes: int = 0
    score: float = 0.0


@dataclass
class Contour:
    points: np.ndarray     # (N, 2) as (x, y)
    converged: bool = False
    iterations: int = 0

    @property
    def signed_area(self):
        x = self.points[:, 0]; y = self.points[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


@dataclass
class Membrane:
    id: int
    circle: Circle
    contour: Contour
    mask: np.ndarray       # bool, full frame

    @cached_property
    def bbox(self):
        ''' (xmin, ymin, xmax, ymax) of the mask, inclusive '''
        ys, xs = np.nonzero(self.mask)
        return int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())


##====== Circular Hough transform ==============================================

def ring_offsets(radius):
    ''' Unique integer (dy, dx) offsets of a digital circle
    '''
    n = max(8, int(math.ceil(4 * math.pi * radius)))
    theta = np.arange(n) * (2 * math.pi / n)
    dx = np.round(radius * np.cos(theta)).astype(np.int64)
    dy = np.round(radius * np.sin(theta)).astype(np.int64)
    return np.unique(np.stack([dy, dx], axis = 1), axis = 0)


def hough_accumulator(candidates, radii):
    ''' Full-circle voting. acc[k, y, x] counts candidate pixels lying on the
    digital circle of radius radii[k] around (x, y).
    Returns accumulator (K, H, W) and ring sample count per radius.
    '''
    candidates = np.asarray(candidates, dtype = bool)
    H, W = candidates.shape
    ys, xs = np.nonzero(candidates)
    acc = np.zeros((len(radii), H, W), dtype = np.int64)
    ring_sizes = np.zeros(len(radii), dtype = np.int64)
    for k, radius in enumerate(radii):
        offs = ring_offsets(radius)
        ring_sizes[k] = len(offs)
        if len(ys) == 0:
            continue
        cy = (ys[:, None] + offs[None, :, 0]).ravel()
        cx = (xs[:, None] + offs[None, :, 1]).ravel()
        inside = (cy >= 0) & (cy < H) & (cx >= 0) & (cx < W)
        flat = cy[inside] * W + cx[inside]
        acc[k] = np.bincount(flat, minlength = H * W).reshape(H, W)
    return acc, ring_sizes


def _refine_peak(score, k, y, x, level):
    ''' Vote-weighted centroid of the plateau around a peak (sub-bin)
    '''
    K, H, W = score.shape
    k0, k1 = max(0, k - 4), min(K, k + 5)
    y0, y1 = max(0, y - 2), min(H, y + 3)
    x0, x1 = max(0, x - 2), min(W, x + 3)
    win = score[k0:k1, y0:y1, x0:x1]
    wts = np.clip(win - level, 0, None)
    total = wts.sum()
    if total <= 0:
        return float(k), float(y), float(x)
    kk, yy, xx = np.meshgrid(np.arange(k0, k1), np.arange(y0, y1), np.arange(x0, x1),
                             indexing = "ij")
    return (float((wts * kk).sum() / total), float((wts * yy).sum() / total),
            float((wts * xx).sum() / total))


def detect_circles(frame, cfg = ChtConfig()):
    ''' Circles sorted by votes, descending, in full-resolution coordinates
    '''
    pixels = as_pixels(frame)
    f = int(cfg.downscale)
    if cfg.r_max_px / f < 2:
        raise MembraneError("r_max_px / downscale must be >= 2")
    radii_full = np.arange(cfg.r_min_px, cfg.r_max_px + 1e-9, cfg.r_step_px)
    if len(radii_full) == 0:
        raise MembraneError("empty radius range")
    try:
        small = block_downscale(pixels, f)
        grad = sobel(small)
    except VisionError as err:
        raise MembraneError("frame too small after downscaling: {}".format(err))

    mag = grad.magnitude
    positive = mag > 0
    if not positive.any():
        logger.debug("no gradients, no circles")
        return []
    gate = np.percentile(mag, cfg.grad_percentile)
    candidates = positive & (mag >= gate)

    radii_ds = radii_full / f
    acc, ring_sizes = hough_accumulator(candidates, radii_ds)
    score = acc / ring_sizes[:, None, None].astype(np.float64)
    best = float(score.max())
    level = max(cfg.peak_fraction * best, cfg.min_support)
    logger.debug("CHT: {} candidates, best support {:.3f}, level {:.3f}",
                 int(candidates.sum()), best, level)
    if best < level:
        return []

    local_max = ndimage.maximum_filter(score, size = 3, mode = "constant") == score
    ks, ys, xs = np.nonzero(local_max & (score >= level))
    order = sorted(range(len(ks)), key = lambda i: (-score[ks[i], ys[i], xs[i]],
                                                   -acc[ks[i], ys[i], xs[i]],
                                                   ks[i], ys[i], xs[i]))
    half = (f - 1) / 2.0
    found = []
    for i in order:
        k, y, x = int(ks[i]), int(ys[i]), int(xs[i])
        rk, ry, rx = _refine_peak(score, k, y, x, 0.6 * score[k, y, x])
        cx = rx * f + half
        cy = ry * f + half
        r = float(np.interp(rk, np.arange(len(radii_full)), radii_full))
        if any(math.hypot(cx - c.cx, cy - c.cy) < cfg.center_sep_px for c in found):
            continue
        found.append(Circle(cx = cx, cy = cy, r = r, votes = int(acc[k, y, x]),
                            score = float(score[k, y, x])))
    found.sort(key = lambda c: (-c.votes, c.cy, c.cx))
    logger.debug("CHT: {} circles", len(found))
    return found


##====== Active contour ========================================================

def edge_force_field(frame, sigma):
    ''' Gradient of the normalized edge map |grad(G_sigma * I)|; points toward edges
    Returns (fx, fy) arrays.
    '''
    smooth = gaussian_blur(frame, sigma)
    edge = sobel(smooth).magnitude
    peak = edge.max()
    if peak > 0:
        edge = edge / peak
    fy, fx = np.gradient(edge)
    return fx, fy


def _internal_matrix(n, alpha, beta):
    ''' Circulant alpha*(-D2) + beta*D4 '''
    eye_n = np.eye(n)
    d2 = (np.roll(eye_n, -1, axis = 1) + np.roll(eye_n, 1, axis = 1) - 2 * eye_n)
    d4 = (np.roll(eye_n, -2, axis = 1) + np.roll(eye_n, 2, axis = 1)
          - 4 * np.roll(eye_n, -1, axis = 1) - 4 * np.roll(eye_n, 1, axis = 1)
          + 6 * eye_n)
    return -alpha * d2 + beta * d4


def circle_points(circle, n):
    ''' n points, counter-clockwise as displayed (y axis pointing down) '''
    theta = np.arange(n) * (2 * math.pi / n)
    return np.stack([circle.cx + circle.r * np.cos(theta),
                     circle.cy - circle.r * np.sin(theta)], axis = 1)


def refine_contour(frame, init, cfg = SnakeConfig(), force = None):
    ''' Semi-implicit snake started on `init`
    force: optional precomputed (fx, fy) from edge_force_field
    '''
    pixels = as_pixels(frame)
    H, W = pixels.shape
    tol = 2.0
    if (init.r <= 0 or init.cx - init.r < -tol or init.cy - init.r < -tol
            or init.cx + init.r > W - 1 + tol or init.cy + init.r > H - 1 + tol):
        raise MembraneError("init circle ({:.1f}, {:.1f}, r={:.1f}) outside {}x{} frame"
                            .format(init.cx, init.cy, init.r, W, H))
    fx, fy = force if force is not None else edge_force_field(pixels, cfg.edge_sigma)

    n = cfg.n_points
    pts = circle_points(init, n)
    x = np.clip(pts[:, 0], 0, W - 1)
    y = np.clip(pts[:, 1], 0, H - 1)
    inv = np.linalg.inv(np.eye(n) + cfg.step_size * _internal_matrix(n, cfg.alpha, cfg.beta))
    tau_gamma = cfg.step_size * cfg.gamma

    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        coords = np.vstack([y, x])
        ext_x = ndimage.map_coordinates(fx, coords, order = 1, mode = "nearest")
        ext_y = ndimage.map_coordinates(fy, coords, order = 1, mode = "nearest")
        xn = inv @ (x + tau_gamma * ext_x)
        yn = inv @ (y + tau_gamma * ext_y)
        dx = cfg.max_move_px * np.tanh(xn - x)
        dy = cfg.max_move_px * np.tanh(yn - y)
        x = np.clip(x + dx, 0, W - 1)
        y = np.clip(y + dy, 0, H - 1)
        if np.max(np.hypot(dx, dy)) < cfg.epsilon:
            converged = True
            break
    logger.debug("snake: {} iterations, converged={}", it, converged)
    return Contour(points = np.stack([x, y], axis = 1), converged = converged, iterations = it)


##====== Masks =================================================================

def _row_spans(x0, y0, x1, y1, row, upper):
    ''' Column intervals [c0, c1) strictly between paired edge crossings of one row
    upper: vertices lying on the row count as above it
    '''
    above0 = y0 >= row if upper else y0 > row
    above1 = y1 >= row if upper else y1 > row
    crossing = above0 != above1
    if not crossing.any():
        return []
    ax, ay, bx, by = x0[crossing], y0[crossing], x1[crossing], y1[crossing]
    xi = np.sort((bx - ax) * (row - ay) / (by - ay) + ax)
    return [(int(math.floor(left)) + 1, int(math.ceil(right)))
            for left, right in zip(xi[0::2], xi[1::2])]


def contour_mask(contour, width, height):
    ''' Even-odd scanline fill of the pixels whose centre (col, row) lies strictly inside
    A centre on the boundary is dropped: both vertex conventions must agree on the row.
    '''
    pts = np.asarray(contour.points if isinstance(contour, Contour) else contour,
                     dtype = np.float64)
    if len(pts) < 3 or abs(Contour(points = pts).signed_area) < 1e-9:
        raise MembraneError("degenerate contour (zero area)")
    x0 = pts[:, 0]; y0 = pts[:, 1]
    x1 = np.roll(x0, -1); y1 = np.roll(y0, -1)
    mask = np.zeros((height, width), dtype = bool)
    row_lo = max(0, int(math.floor(y0.min())))
    row_hi = min(height - 1, int(math.ceil(y0.max())))
    line = np.zeros((2, width), dtype = bool)
    for row in range(row_lo, row_hi + 1):
        line[:] = False
        for k, upper in enumerate((False, True)):
            for c0, c1 in _row_spans(x0, y0, x1, y1, row, upper):
                c0, c1 = max(0, c0), min(width, c1)
                if c1 > c0:
                    line[k, c0:c1] = True
        mask[row] = line[0] & line[1]
    return mask


##====== Pipeline stage ========================================================

def find_membranes(frame, cht_cfg = ChtConfig(), snake_cfg = SnakeConfig()):
    ''' Circles on the frame, each refined and rasterized; ids follow vote order
    '''
    pixels = as_pixels(frame)
    H, W = pixels.shape
    circles = detect_circles(pixels, cht_cfg)
    force = edge_force_field(pixels, snake_cfg.edge_sigma) if circles else None
    membranes = []
    for circle in circles:
        try:
            contour = refine_contour(pixels, circle, snake_cfg, force = force)
        except MembraneError as err:
            logger.warning("skipping circle {}: {}", circle, err)
            continue
        if not contour.converged:
            logger.warning("snake for circle at ({:.1f}, {:.1f}) hit max_iters",
                           circle.cx, circle.cy)
        mask = contour_mask(contour, W, H)
        if not mask.any():
            continue
        membranes.append(Membrane(id = len(membranes), circle = circle,
                                  contour = contour, mask = mask))
    logger.info("found {} membranes", len(membranes))
    return membranes


##====== Debug output ==========================================================

def write_circles_csv(circles, path):
    rows = [[fmt_float(c.cx), fmt_float(c.cy), fmt_float(c.r), c.votes] for c in circles]
    return write_csv_table(path, ["cx", "cy", "r", "votes"], rows)


def write_contours_csv(membranes, path):
    ''' One row per contour point: membrane_id, point index, x, y '''
    rows = []
    for m in membranes:
        for i, (x, y) in enumerate(m.contour.points):
            rows.append([m.id, i, fmt_float(x), fmt_float(y)])
    return write_csv_table(path, ["membrane_id", "point", "x", "y"], rows)
