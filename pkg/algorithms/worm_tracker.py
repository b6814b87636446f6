''' Frame-to-frame worm tracking by bounding-box centroid.

Association is greedy global nearest neighbour inside one membrane, with a
distance gate. Oversized (merged) blobs terminate every track they cover; the
worms get fresh ids once they separate again.
'''

import math
import os
import re
from dataclasses import dataclass, field
from typing import List, Optional

from loguru import logger

from utilities.logging_utils import fmt_float, read_csv_table, write_csv_table

ACTIVE = "active"
TERMINATED = "terminated"

TRACK_FILE_FMT = "track_{:04d}.csv"
TRACK_INDEX_NAME = "tracks.csv"
TRACK_HEADER = ["frame_index", "time_s", "cx_px", "cy_px", "velocity_px_s", "velocity_um_s"]
INDEX_HEADER = ["track_id", "membrane_id", "n_points", "first_frame", "last_frame",
                "end_reason", "path_length_px", "mean_velocity_px_s", "mean_velocity_um_s"]


class TrackerError(Exception):
    pass


##====== Types =================================================================

@dataclass(frozen = True)
class TrackerConfig:
    max_assoc_dist_px: float = 25.0
    max_gap_frames: int = 5
    merge_area_px: float = 300.0
    occlusion_metric: str = "blob_area"     # or "bbox_area"

    def __post_init__(self):
        if self.max_assoc_dist_px <= 0 or self.max_gap_frames < 1 or self.merge_area_px <= 0:
            raise TrackerError("tracker limits must be positive")
        if self.occlusion_metric not in ("blob_area", "bbox_area"):
            raise TrackerError("occlusion_metric must be blob_area or bbox_area, got {!r}"
                                .format(self.occlusion_metric))


@dataclass(frozen = True)
class TrackPoint:
    frame_index: int
    x: float
    y: float


@dataclass
class VelocitySeries:
    frame_index: List[int] = field(default_factory = list)   # later frame of each step
    px_s: List[float] = field(default_factory = list)
    um_s: List[float] = field(default_factory = list)
    mean_px_s: Optional[float] = None
    mean_um_s: Optional[float] = None


@dataclass
class Track:
    id: int
    membrane_id: int
    points: List[TrackPoint] = field(default_factory = list)
    state: str = ACTIVE
    gap_count: int = 0
    end_reason: str = ""
    velocity: Optional[VelocitySeries] = None

    @property
    def last(self):
        return self.points[-1]

    def add(self, point):
        if self.state != ACTIVE:
            raise TrackerError("track {} is terminated".format(self.id))
        if self.points and point.frame_index <= self.last.frame_index:
            raise TrackerError("track {}: frame {} not after {}".format(
                                self.id, point.frame_index, self.last.frame_index))
        self.points.append(point)
        self.gap_count = 0

    def terminate(self, reason):
        self.state = TERMINATED
        self.end_reason = reason


def _det_point(det):
    return TrackPoint(det.frame_index, float(det.centroid[0]), float(det.centroid[1]))


##====== Per-frame operations ==================================================

def apply_occlusion_rule(detections, tracks, cfg = TrackerConfig()):
    ''' Drops detections larger than merge_area_px and terminates every active
    track whose last centroid lies in such a detection's bbox.
    Returns (kept detections, terminated tracks)
    '''
    kept = []
    terminated = []
    for det in detections:
        size = det.area_px if cfg.occlusion_metric == "blob_area" else det.bbox_area
        if size <= cfg.merge_area_px:
            kept.append(det)
            continue
        xmin, ymin, xmax, ymax = det.bbox
        for t in tracks:
            if t.state != ACTIVE:
                continue
            p = t.last
            if xmin <= p.x <= xmax and ymin <= p.y <= ymax:
                t.terminate("occlusion")
                terminated.append(t)
                logger.debug("track {} ends in merge at frame {}", t.id, det.frame_index)
    return kept, terminated


def associate(tracks, detections, cfg, frame_index, new_id):
    ''' Greedy one-to-one matching of active tracks to one frame's detections.
    Pairs sorted by (distance, track id, detection order) and gated; same membrane only.
    new_id: callable handing out fresh track ids
    Returns (matches as (track id, detection index), new tracks)
    '''
    for det in detections:
        if det.frame_index != frame_index:
            raise TrackerError("detection from frame {} passed with frame {}".format(
                                det.frame_index, frame_index))
    active = [t for t in tracks if t.state == ACTIVE]
    for t in active:
        if t.last.frame_index >= frame_index:
            raise TrackerError("frame {} is not after track {}'s last frame {}".format(
                                frame_index, t.id, t.last.frame_index))

    pairs = []
    for t in active:
        for j, det in enumerate(detections):
            if det.membrane_id != t.membrane_id:
                continue
            dist = math.hypot(det.centroid[0] - t.last.x, det.centroid[1] - t.last.y)
            if dist <= cfg.max_assoc_dist_px:
                pairs.append((dist, t.id, j))
    pairs.sort()

    by_id = {t.id: t for t in active}
    used_tracks = set()
    used_dets = set()
    matches = []
    for dist, tid, j in pairs:
        if tid in used_tracks or j in used_dets:
            continue
        used_tracks.add(tid); used_dets.add(j)
        by_id[tid].add(_det_point(detections[j]))
        matches.append((tid, j))

    for t in active:
        if t.id in used_tracks:
            continue
        t.gap_count += 1
        if t.gap_count >= cfg.max_gap_frames:
            t.terminate("gap")

    fresh = []
    for j, det in enumerate(detections):
        if j in used_dets:
            continue
        t = Track(id = new_id(), membrane_id = det.membrane_id)
        t.add(_det_point(det))
        fresh.append(t)
    return matches, fresh


##====== Velocities ============================================================

def compute_velocities(track, fps, um_per_pixel = 1.0):
    ''' v_i = step distance * fps / frames between the two points
    Fewer than 2 points gives an empty series with means None.
    '''
    if fps <= 0:
        raise TrackerError("fps must be > 0")
    series = VelocitySeries()
    for a, b in zip(track.points, track.points[1:]):
        gap = b.frame_index - a.frame_index
        v = math.hypot(b.x - a.x, b.y - a.y) * fps / gap
        series.frame_index.append(b.frame_index)
        series.px_s.append(v)
        series.um_s.append(v * um_per_pixel)
    if series.px_s:
        series.mean_px_s = sum(series.px_s) / len(series.px_s)
        series.mean_um_s = sum(series.um_s) / len(series.um_s)
    return series


def path_length_px(track):
    return sum(math.hypot(b.x - a.x, b.y - a.y) for a, b in zip(track.points, track.points[1:]))


##====== Sequence tracking =====================================================

class WormTracker():
    ''' Tracking state of one sequence: id counter plus every track ever opened
    '''
    def __init__(self, cfg = TrackerConfig()):
        self.cfg = cfg
        self.tracks = []
        self.last_frame = None
        self._next_id = 0

    def _new_id(self):
        tid = self._next_id
        self._next_id += 1
        return tid

    @property
    def active(self):
        return [t for t in self.tracks if t.state == ACTIVE]

    def step(self, frame_index, detections):
        if self.last_frame is not None and frame_index <= self.last_frame:
            raise TrackerError("frame {} arrives after frame {}".format(frame_index, self.last_frame))
        self.last_frame = frame_index
        kept, _ = apply_occlusion_rule(detections, self.active, self.cfg)
        _, fresh = associate(self.tracks, kept, self.cfg, frame_index, self._new_id)
        self.tracks.extend(fresh)
        return fresh


def track_sequence(per_frame_detections, cfg = TrackerConfig(), fps = 10.0, um_per_pixel = 1.0):
    ''' per_frame_detections[i] holds the detections of frame i (possibly empty)
    Returns every track, ordered by id, with its velocity series filled.
    '''
    tracker = WormTracker(cfg)
    for frame_index, detections in enumerate(per_frame_detections):
        tracker.step(frame_index, detections)
    for t in tracker.tracks:
        t.velocity = compute_velocities(t, fps, um_per_pixel)
    ended = sum(1 for t in tracker.tracks if t.state == TERMINATED)
    logger.debug("{} tracks ({} terminated)", len(tracker.tracks), ended)
    return sorted(tracker.tracks, key = lambda t: t.id)


##====== CSV output ============================================================

def write_track_csv(track, fps, um_per_pixel, path):
    series = track.velocity or compute_velocities(track, fps, um_per_pixel)
    rows = []
    for i, p in enumerate(track.points):
        v_px = series.px_s[i - 1] if i > 0 else None
        v_um = series.um_s[i - 1] if i > 0 else None
        rows.append([p.frame_index, fmt_float(p.frame_index / fps), fmt_float(p.x),
                     fmt_float(p.y), fmt_float(v_px), fmt_float(v_um)])
    return write_csv_table(path, TRACK_HEADER, rows)


def write_tracks(tracks, fps, um_per_pixel, out_dir):
    ''' track_XXXX.csv per track plus the tracks.csv index
    '''
    os.makedirs(out_dir, exist_ok = True)
    index_rows = []
    for t in sorted(tracks, key = lambda t: t.id):
        if t.velocity is None:
            t.velocity = compute_velocities(t, fps, um_per_pixel)
        write_track_csv(t, fps, um_per_pixel, os.path.join(out_dir, TRACK_FILE_FMT.format(t.id)))
        index_rows.append([t.id, t.membrane_id, len(t.points), t.points[0].frame_index,
                           t.last.frame_index, t.end_reason or ACTIVE,
                           fmt_float(path_length_px(t)), fmt_float(t.velocity.mean_px_s),
                           fmt_float(t.velocity.mean_um_s)])
    write_csv_table(os.path.join(out_dir, TRACK_INDEX_NAME), INDEX_HEADER, index_rows)
    return out_dir


def write_velocity_timeseries(tracks, frame_count, fps, path):
    ''' One row per frame, one velocity column (px/s) per track; blank where undefined
    '''
    tracks = sorted(tracks, key = lambda t: t.id)
    lookup = []
    for t in tracks:
        series = t.velocity or compute_velocities(t, fps)
        lookup.append(dict(zip(series.frame_index, series.px_s)))
    header = ["frame_index", "time_s"] + ["track_{:04d}".format(t.id) for t in tracks]
    rows = []
    for f in range(frame_count):
        rows.append([f, fmt_float(f / fps)] + [fmt_float(v.get(f)) for v in lookup])
    return write_csv_table(path, header, rows)


##====== CSV input =============================================================

_TRACK_FILE_RE = re.compile(r"track_(\d+)\.csv$")

def read_track_csv(path, track_id = None, membrane_id = -1):
    ''' Track from a per-track CSV; id taken from the file name when not given
    '''
    if track_id is None:
        match = _TRACK_FILE_RE.search(os.path.basename(path))
        if not match:
            raise TrackerError("cannot infer track id from {}".format(path))
        track_id = int(match.group(1))
    track = Track(id = track_id, membrane_id = membrane_id)
    try:
        for row in read_csv_table(path):
            track.points.append(TrackPoint(int(row["frame_index"]), float(row["cx_px"]),
                                           float(row["cy_px"])))
    except (KeyError, ValueError) as err:
        raise TrackerError("malformed track file {}: {}".format(path, err))
    return track


def read_tracks_dir(directory, fps = None, um_per_pixel = 1.0):
    ''' All track_XXXX.csv files of a directory, with membrane ids from the index
    '''
    if not os.path.isdir(directory):
        raise TrackerError("no track directory {}".format(directory))
    index = {}
    index_path = os.path.join(directory, TRACK_INDEX_NAME)
    if os.path.isfile(index_path):
        for row in read_csv_table(index_path):
            index[int(row["track_id"])] = row
    tracks = []
    for name in sorted(os.listdir(directory)):
        match = _TRACK_FILE_RE.match(name)
        if not match:
            continue
        tid = int(match.group(1))
        row = index.get(tid, {})
        t = read_track_csv(os.path.join(directory, name), tid, int(row.get("membrane_id", -1)))
        reason = row.get("end_reason", ACTIVE)
        if reason != ACTIVE:
            t.terminate(reason)
        if fps:
            t.velocity = compute_velocities(t, fps, um_per_pixel)
        tracks.append(t)
    return tracks
