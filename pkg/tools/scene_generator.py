""" Deterministic synthetic worm scenes with exact ground truth.

Each scene is a set of static gel membranes (bright disk, dark rim) on an
illumination ramp, with dark undulating worms wandering inside them. All
randomness comes from one counter-based SplitMix64 stream, so a (config, seed)
pair fixes every output byte.

USAGE:
    frames, truth = simulate(SceneConfig(seed = 7, frame_count = 50))
    truth = render_scene(SceneConfig(seed = 7, frame_count = 1800), "data/scene_7")
"""

import math
import os
from dataclasses import asdict, dataclass, field
from typing import List

import numpy as np
from scipy.spatial import cKDTree
from loguru import logger

from algorithms.dose_response import hill_response
from algorithms.membrane_finder import Circle
from algorithms.worm_tracker import Track, TrackPoint
from utilities.frame_io import Frame, SequenceManifest, write_sequence
from utilities.logging_utils import fmt_float, read_csv_table, write_csv_table

GROUND_TRUTH_NAME = "ground_truth.csv"
CIRCLES_NAME = "circles.csv"
TRUTH_HEADER = ["frame_index", "worm_id", "membrane_id", "x_px", "y_px", "speed_px_s", "merged"]


class SceneError(Exception):
    pass


##====== PRNG ==================================================================

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def splitmix64_mix(z):
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


class SplitMix64():
    ''' Counter-based SplitMix64: output n (1-based) = mix(seed + n * golden)
    '''
    def __init__(self, seed):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def next_u64(self):
        self.counter += 1
        return splitmix64_mix((self.seed + self.counter * _GOLDEN) & _MASK64)

    def u64s(self, n):
        ''' Next n outputs as a uint64 array, same values as n next_u64 calls
        '''
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype = np.uint64)
        self.counter += n
        with np.errstate(over = "ignore"):
            z = np.uint64(self.seed) + idx * np.uint64(_GOLDEN)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    def uniforms(self, n):
        ''' [0, 1) with 53-bit resolution '''
        return (self.u64s(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def normals(self, n):
        ''' Box-Muller pairs, standard normal '''
        pairs = (n + 1) // 2
        u = self.uniforms(2 * pairs).reshape(pairs, 2)
        rad = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
        ang = 2.0 * math.pi * u[:, 1]
        out = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis = 1).ravel()
        return out[:n]


##====== Config ================================================================

@dataclass
class MembraneSpec:
    cx: float
    cy: float
    r: float
    rim_darkness: float = 55.0
    interior_brightness: float = 190.0
    rim_width_px: float = 4.0


@dataclass
class WormScript:
    membrane_id: int
    x: float
    y: float
    heading_rad: float = 0.0
    speed_px_per_frame: float = 3.0


def _default_membranes():
    return [MembraneSpec(128, 128, 100), MembraneSpec(384, 128, 100),
            MembraneSpec(128, 384, 100), MembraneSpec(384, 384, 100)]


@dataclass
class SceneConfig:
    width: int = 512
    height: int = 512
    membranes: List[MembraneSpec] = field(default_factory = _default_membranes)
    worms_per_membrane: int = 1
    worm_length_px: float = 50.0
    worm_width_px: float = 4.0
    worm_intensity: float = 40.0
    speed_px_per_frame: float = 3.0
    speed_spread_px_per_frame: float = 0.0    # uniform +- spread per worm
    heading_noise_std: float = 0.1            # rad / frame
    undulation_amp_px: float = 2.5
    undulation_period_frames: float = 10.0
    undulation_wavelength_px: float = 25.0
    background_base: float = 70.0
    illumination_gradient_per_px: float = 0.05
    noise_std: float = 3.0
    seed: int = 1234567
    fps: float = 10.0
    frame_count: int = 100
    um_per_pixel: float = 1.0
    worm_scripts: List[WormScript] = field(default_factory = list)

    def __post_init__(self):
        self.membranes = [m if isinstance(m, MembraneSpec) else MembraneSpec(**m)
                            for m in self.membranes]
        self.worm_scripts = [w if isinstance(w, WormScript) else WormScript(**w)
                                for w in self.worm_scripts]
        if self.width < 16 or self.height < 16:
            raise SceneError("scene must be at least 16x16")
        if self.frame_count < 1 or not self.fps > 0 or not self.um_per_pixel > 0:
            raise SceneError("need frame_count >= 1, fps > 0, um_per_pixel > 0")
        if self.worms_per_membrane < 0 or self.worm_length_px <= 0 or self.worm_width_px <= 0:
            raise SceneError("bad worm geometry")
        if self.noise_std < 0 or self.heading_noise_std < 0 or self.undulation_period_frames <= 0 \
                or self.undulation_wavelength_px <= 0:
            raise SceneError("noise, period and wavelength settings must be positive")
        levels = [self.worm_intensity, self.background_base]
        for m in self.membranes:
            levels += [m.rim_darkness, m.interior_brightness]
            if m.r <= 0 or m.rim_width_px < 0:
                raise SceneError("bad membrane radius/rim {}".format(m))
            reach = m.r + m.rim_width_px
            if m.cx - reach < 0 or m.cy - reach < 0 or m.cx + reach > self.width - 1 \
                    or m.cy + reach > self.height - 1:
                raise SceneError("membrane at ({}, {}) r={} leaves the frame".format(m.cx, m.cy, m.r))
        if any(not 0 <= v <= 255 for v in levels):
            raise SceneError("intensities must lie in [0, 255]")
        for w in self.worm_scripts:
            if not 0 <= w.membrane_id < len(self.membranes):
                raise SceneError("worm script names unknown membrane {}".format(w.membrane_id))

    def free_radius(self, membrane):
        ''' Radius the worm centre may roam so the whole body stays inside '''
        return (membrane.r - self.worm_length_px / 2.0 - self.worm_width_px / 2.0
                - 2.0 * self.undulation_amp_px - 1.0)

    def to_dict(self):
        return asdict(self)


def scene_manifest(cfg):
    return SequenceManifest(fps = cfg.fps, um_per_pixel = cfg.um_per_pixel,
                            frame_pattern = "frame_%06d.pgm", frame_count = cfg.frame_count,
                            extra = {"seed": cfg.seed, "generator": "gelpad synthetic scene"})


##====== Ground truth ==========================================================

@dataclass(frozen = True)
class TruthRow:
    frame_index: int
    worm_id: int
    membrane_id: int
    x: float
    y: float
    speed_px_s: float
    merged: bool


@dataclass
class GroundTruth:
    circles: List[Circle]
    rows: List[TruthRow] = field(default_factory = list)

    @property
    def frame_count(self):
        return 1 + max(r.frame_index for r in self.rows) if self.rows else 0

    def by_frame(self):
        out = {}
        for r in self.rows:
            out.setdefault(r.frame_index, []).append(r)
        return out

    def worm_ids(self):
        return sorted(set(r.worm_id for r in self.rows))


def truth_to_tracks(truth):
    ''' One Track per worm holding its true centroids '''
    tracks = {}
    for r in sorted(truth.rows, key = lambda r: (r.worm_id, r.frame_index)):
        t = tracks.setdefault(r.worm_id, Track(id = r.worm_id, membrane_id = r.membrane_id))
        t.points.append(TrackPoint(r.frame_index, r.x, r.y))
    return [tracks[k] for k in sorted(tracks)]


##====== Rendering =============================================================

_SUB = (np.arange(4) + 0.5) / 4.0 - 0.5
_SUB_X, _SUB_Y = [a.ravel() for a in np.meshgrid(_SUB, _SUB)]
_BAND = 0.75   # > half pixel diagonal: pixels outside the band are fully in or out


def _supersample(cols, rows, inside):
    xs = cols[:, None] + _SUB_X[None, :]
    ys = rows[:, None] + _SUB_Y[None, :]
    return inside(xs, ys).mean(axis = 1)


def disk_coverage(width, height, cx, cy, r):
    ''' Fraction of each pixel inside the disk, 4x4 supersampled at the boundary '''
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    dist = np.hypot(cols - cx, rows - cy)
    cov = (dist < r).astype(np.float64)
    band = np.abs(dist - r) < _BAND
    cov[band] = _supersample(cols[band], rows[band],
                             lambda x, y: np.hypot(x - cx, y - cy) < r)
    return cov


def static_layer(cfg):
    ''' Noise-free background, rims and membrane interiors (before the ramp) '''
    img = np.full((cfg.height, cfg.width), float(cfg.background_base))
    for m in cfg.membranes:
        outer = disk_coverage(cfg.width, cfg.height, m.cx, m.cy, m.r + m.rim_width_px)
        img += outer * (m.rim_darkness - img)
        inner = disk_coverage(cfg.width, cfg.height, m.cx, m.cy, m.r)
        img += inner * (m.interior_brightness - img)
    return img


def body_points(cfg, x, y, heading, frame_index, spacing = 0.25):
    ''' Dense centre line: straight axis along the heading plus a travelling
    lateral sine wave; (n, 2) as (x, y)
    The line is shifted so its bounding-box centre sits on (x, y).
    '''
    n = int(math.ceil(cfg.worm_length_px / spacing)) + 1
    s = np.linspace(-cfg.worm_length_px / 2.0, cfg.worm_length_px / 2.0, n)
    lateral = cfg.undulation_amp_px * np.sin(2 * math.pi * (s / cfg.undulation_wavelength_px
                                                         - frame_index / cfg.undulation_period_frames))
    ux, uy = math.cos(heading), math.sin(heading)
    pts = np.stack([s * ux - lateral * uy, s * uy + lateral * ux], axis = 1)
    cx, cy = _bbox_centre(pts)
    return pts + np.array([x - cx, y - cy])


def _draw_worm(img, grad, body, cfg):
    half = cfg.worm_width_px / 2.0
    x0 = max(0, int(math.floor(body[:, 0].min() - half - 1)))
    x1 = min(cfg.width - 1, int(math.ceil(body[:, 0].max() + half + 1)))
    y0 = max(0, int(math.floor(body[:, 1].min() - half - 1)))
    y1 = min(cfg.height - 1, int(math.ceil(body[:, 1].max() + half + 1)))
    rows, cols = np.mgrid[y0:y1 + 1, x0:x1 + 1].astype(np.float64)
    tree = cKDTree(body)
    dist, _ = tree.query(np.stack([cols.ravel(), rows.ravel()], axis = 1))
    dist = dist.reshape(cols.shape)
    cov = (dist <= half).astype(np.float64)
    band = np.abs(dist - half) < _BAND

    def inside(xs, ys):
        d, _ = tree.query(np.stack([xs.ravel(), ys.ravel()], axis = 1))
        return (d <= half).reshape(xs.shape)

    if band.any():
        cov[band] = _supersample(cols[band], rows[band], inside)
    region = img[y0:y1 + 1, x0:x1 + 1]
    target = cfg.worm_intensity + grad[y0:y1 + 1, x0:x1 + 1]
    region += cov * (target - region)


def _bbox_centre(body):
    return (0.5 * (body[:, 0].min() + body[:, 0].max()),
            0.5 * (body[:, 1].min() + body[:, 1].max()))


##====== Simulation ============================================================

@dataclass
class _WormState:
    worm_id: int
    membrane_id: int
    x: float
    y: float
    heading: float
    speed: float


def _wrap(angle):
    return math.atan2(math.sin(angle), math.cos(angle))


def _spawn(cfg, rng):
    worms = []
    if cfg.worm_scripts:
        for w in cfg.worm_scripts:
            m = cfg.membranes[w.membrane_id]
            r_free = cfg.free_radius(m)
            if r_free <= 0:
                raise SceneError("worms too large for membrane {}".format(w.membrane_id))
            if math.hypot(w.x - m.cx, w.y - m.cy) > r_free:
                raise SceneError("scripted worm at ({}, {}) outside its roaming radius".format(w.x, w.y))
            worms.append(_WormState(len(worms), w.membrane_id, float(w.x), float(w.y),
                                    _wrap(w.heading_rad), float(w.speed_px_per_frame)))
        return worms
    for mid, m in enumerate(cfg.membranes):
        if cfg.worms_per_membrane == 0:
            continue
        r_free = cfg.free_radius(m)
        if r_free <= 0:
            raise SceneError("worms too large for membrane {} (r={})".format(mid, m.r))
        for _ in range(cfg.worms_per_membrane):
            u_rad, u_ang, u_head, u_speed = rng.uniforms(4)
            rho = 0.8 * r_free * math.sqrt(u_rad)
            phi = 2 * math.pi * u_ang
            speed = cfg.speed_px_per_frame + cfg.speed_spread_px_per_frame * (2 * u_speed - 1)
            worms.append(_WormState(len(worms), mid, m.cx + rho * math.cos(phi),
                                    m.cy + rho * math.sin(phi),
                                    _wrap(2 * math.pi * u_head - math.pi), max(0.0, speed)))
    return worms


def _move(worm, cfg, heading_kick):
    ''' One frame of motion, reflecting off the roaming circle; returns step length
    '''
    m = cfg.membranes[worm.membrane_id]
    r_free = cfg.free_radius(m)
    worm.heading = _wrap(worm.heading + heading_kick)
    ux, uy = math.cos(worm.heading), math.sin(worm.heading)
    nx_, ny_ = worm.x + worm.speed * ux, worm.y + worm.speed * uy
    dist = math.hypot(nx_ - m.cx, ny_ - m.cy)
    if dist > r_free:
        nrm_x, nrm_y = (nx_ - m.cx) / dist, (ny_ - m.cy) / dist
        dot = ux * nrm_x + uy * nrm_y
        ux, uy = ux - 2 * dot * nrm_x, uy - 2 * dot * nrm_y
        worm.heading = math.atan2(uy, ux)
        nx_, ny_ = worm.x + worm.speed * ux, worm.y + worm.speed * uy
        dist = math.hypot(nx_ - m.cx, ny_ - m.cy)
        if dist > r_free:
            nx_ = m.cx + (nx_ - m.cx) * r_free / dist
            ny_ = m.cy + (ny_ - m.cy) * r_free / dist
    step = math.hypot(nx_ - worm.x, ny_ - worm.y)
    worm.x, worm.y = nx_, ny_
    return step


def _merged_flags(worms, bodies, cfg):
    flags = [False] * len(worms)
    limit = cfg.worm_width_px + 1.0
    for i in range(len(worms)):
        for j in range(i + 1, len(worms)):
            if worms[i].membrane_id != worms[j].membrane_id:
                continue
            d, _ = cKDTree(bodies[j]).query(bodies[i], distance_upper_bound = limit)
            if np.isfinite(d).any() and d.min() < limit:
                flags[i] = flags[j] = True
    return flags


def iter_scene(cfg):
    ''' Lazily yields (Frame, truth rows of that frame) '''
    rng = SplitMix64(cfg.seed)
    worms = _spawn(cfg, rng)
    base = static_layer(cfg)
    grad = cfg.illumination_gradient_per_px * np.arange(cfg.width, dtype = np.float64)[None, :] \
                * np.ones((cfg.height, 1))
    base = base + grad

    for t in range(cfg.frame_count):
        if t == 0:
            steps = [w.speed for w in worms]
        else:
            kicks = rng.normals(len(worms)) * cfg.heading_noise_std if worms else []
            steps = [_move(w, cfg, float(k)) for w, k in zip(worms, kicks)]

        img = base.copy()
        bodies = [body_points(cfg, w.x, w.y, w.heading, t) for w in worms]
        for body in bodies:
            _draw_worm(img, grad, body, cfg)
        if cfg.noise_std > 0:
            img += cfg.noise_std * rng.normals(img.size).reshape(img.shape)
        pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)

        merged = _merged_flags(worms, bodies, cfg)
        rows = [TruthRow(t, w.worm_id, w.membrane_id, w.x, w.y, step * cfg.fps, flag)
                    for w, step, flag in zip(worms, steps, merged)]
        yield Frame(pixels, index = t, timestamp_s = t / cfg.fps), rows


def true_circles(cfg):
    return [Circle(cx = m.cx, cy = m.cy, r = m.r) for m in cfg.membranes]


def simulate(cfg):
    ''' Whole scene in memory: (frames, GroundTruth) '''
    frames = []
    truth = GroundTruth(circles = true_circles(cfg))
    for frame, rows in iter_scene(cfg):
        frames.append(frame)
        truth.rows.extend(rows)
    logger.debug("simulated {} frames, {} worms, seed {}", len(frames),
                 len(truth.worm_ids()), cfg.seed)
    return frames, truth


##====== Scripted scenes =======================================================

def crossing_scene(frame_count = 60, seed = 99):
    ''' Two worms in one membrane crossing at right angles, no heading noise
    '''
    return SceneConfig(width = 256, height = 256, membranes = [MembraneSpec(128, 128, 110)],
                       heading_noise_std = 0.0, seed = seed, frame_count = frame_count,
                       worm_scripts = [WormScript(0, 68.0, 128.0, 0.0, 2.0),
                                       WormScript(0, 128.0, 68.0, math.pi / 2, 2.0)])


def dose_series_configs(base_cfg, concentrations, ec50, hill_slope = 1.0, top = 100.0, bottom = 0.0):
    ''' One scene per concentration, worm speed scaled by the 4PL response (%)
    Returns list of (condition name, concentration, SceneConfig), seeds base + i.
    '''
    series = []
    for i, conc in enumerate(concentrations):
        scale = float(hill_response(conc, top, bottom, ec50, hill_slope)) / 100.0
        cfg = SceneConfig(**{**base_cfg.to_dict(),
                             "speed_px_per_frame": base_cfg.speed_px_per_frame * scale,
                             "speed_spread_px_per_frame": base_cfg.speed_spread_px_per_frame * scale,
                             "seed": base_cfg.seed + i})
        series.append(("dose_{:02d}".format(i), float(conc), cfg))
    return series


##====== Files =================================================================

def write_truth_csv(truth, path):
    rows = [[r.frame_index, r.worm_id, r.membrane_id, fmt_float(r.x), fmt_float(r.y),
             fmt_float(r.speed_px_s), int(r.merged)]
                for r in sorted(truth.rows, key = lambda r: (r.frame_index, r.worm_id))]
    return write_csv_table(path, TRUTH_HEADER, rows)


def write_circles(circles, path):
    rows = [[fmt_float(c.cx), fmt_float(c.cy), fmt_float(c.r)] for c in circles]
    return write_csv_table(path, ["cx", "cy", "r"], rows)


def write_scene(frames, truth, manifest, out_dir):
    ''' PGM sequence, manifest.json, ground_truth.csv and circles.csv '''
    write_sequence(frames, manifest, out_dir)
    write_truth_csv(truth, os.path.join(out_dir, GROUND_TRUTH_NAME))
    write_circles(truth.circles, os.path.join(out_dir, CIRCLES_NAME))
    return out_dir


def render_scene(cfg, out_dir):
    ''' Streams the scene to out_dir one frame at a time; returns the GroundTruth '''
    truth = GroundTruth(circles = true_circles(cfg))

    def frames():
        for frame, rows in iter_scene(cfg):
            truth.rows.extend(rows)
            yield frame

    write_scene(frames(), truth, scene_manifest(cfg), out_dir)
    logger.debug("rendered {} frames to {}", cfg.frame_count, out_dir)
    return truth


def read_ground_truth(path):
    ''' ground_truth.csv (file or scene directory); circles.csv is read when beside it
    '''
    if os.path.isdir(path):
        path = os.path.join(path, GROUND_TRUTH_NAME)
    if not os.path.isfile(path):
        raise SceneError("no ground truth at {}".format(path))
    try:
        rows = [TruthRow(int(r["frame_index"]), int(r["worm_id"]), int(r["membrane_id"]),
                         float(r["x_px"]), float(r["y_px"]), float(r["speed_px_s"]),
                         r["merged"] == "1")
                    for r in read_csv_table(path)]
    except (KeyError, ValueError) as err:
        raise SceneError("malformed ground truth {}: {}".format(path, err))
    circles = []
    circ_path = os.path.join(os.path.dirname(path), CIRCLES_NAME)
    if os.path.isfile(circ_path):
        circles = [Circle(float(r["cx"]), float(r["cy"]), float(r["r"]))
                    for r in read_csv_table(circ_path)]
    return GroundTruth(circles = circles, rows = rows)


def scene_summary(cfg, truth):
    speeds = [r.speed_px_s for r in truth.rows]
    return {"frames": cfg.frame_count, "size": "{}x{}".format(cfg.width, cfg.height),
            "membranes": len(cfg.membranes), "worms": len(truth.worm_ids()),
            "seed": cfg.seed,
            "mean_speed_px_s": round(sum(speeds) / len(speeds), 6) if speeds else 0.0,
            "merged_rows": sum(1 for r in truth.rows if r.merged)}
