''' Whole-sequence worm analysis: membranes on the first frame, then per-frame
segmentation and tracking, then velocities, CSV artifacts and overlays.
'''

import os
import time
from dataclasses import dataclass, field
from typing import List, Optional

from tqdm import tqdm
from loguru import logger

from algorithms.dose_response import AssayError, summarize_velocities
from algorithms.membrane_finder import find_membranes, write_circles_csv, write_contours_csv
from algorithms.worm_segmenter import segment_frame, write_detections_csv
from algorithms.worm_tracker import (WormTracker, compute_velocities, write_tracks,
                                     write_velocity_timeseries)
from tools.visualization.overlay_plotter import contour_overlay, save_overlay, track_overlay
from utilities.frame_io import open_sequence, read_manifest, write_manifest
from utilities.logging_utils import LOG2CSV, fmt_float, write_csv_table

SUMMARY_HEADER = ["worm", "membrane_id", "n_steps", "mean_velocity_px_s",
                  "mean_velocity_um_s", "std_velocity_um_s"]


class NoMembranesError(Exception):
    pass


@dataclass
class SequenceResult:
    name: str
    manifest: object
    membranes: list
    tracks: list = field(default_factory = list)
    detections: list = field(default_factory = list)
    summary: Optional[object] = None
    frames_per_s: float = 0.0
    warnings: List[str] = field(default_factory = list)


##===== Stages =================================================================

def detect_stage(in_dir, cfgs):
    ''' Membranes from the first frame; returns (manifest, first frame, membranes)
    '''
    manifest = read_manifest(in_dir)
    first = next(open_sequence(manifest, in_dir))
    membranes = find_membranes(first, cfgs.cht, cfgs.snake)
    if not membranes:
        raise NoMembranesError("no membranes found in {}".format(in_dir))
    return manifest, first, membranes


def track_stage(in_dir, manifest, membranes, cfgs, out_dir = None, progress = False):
    ''' Segments and tracks every frame; returns (detections, tracks, frames/s)
    out_dir: per-frame counts are logged to frame_log.csv there when given
    '''
    tracker = WormTracker(cfgs.tracker)
    detections = []
    frames = open_sequence(manifest, in_dir)
    if progress:
        frames = tqdm(frames, total = manifest.frame_count, desc = os.path.basename(in_dir))
    log_path = os.path.join(out_dir, "frame_log.csv") if out_dir else None
    elapsed = 0.0
    for frame in frames:
        tick = time.perf_counter()
        found = segment_frame(frame, membranes, cfgs.threshold, cfgs.worm_filter)
        tracker.step(frame.index, found)
        elapsed += time.perf_counter() - tick
        detections.extend(found)
        if log_path:
            LOG2CSV([frame.index, len(found), len(tracker.active)], log_path,
                    flag = 'w' if frame.index == 0 else 'a',
                    header = ["frame_index", "detections", "active_tracks"])
    tracks = sorted(tracker.tracks, key = lambda t: t.id)
    for t in tracks:
        t.velocity = compute_velocities(t, manifest.fps, manifest.um_per_pixel)
    fps = manifest.frame_count / elapsed if elapsed > 0 else float("inf")
    logger.info("{}: {} frames, {} detections, {} tracks, {:.1f} frames/s",
                in_dir, manifest.frame_count, len(detections), len(tracks), fps)
    return detections, tracks, fps


##===== Outputs ================================================================

def write_detect_outputs(out_dir, first, membranes):
    os.makedirs(out_dir, exist_ok = True)
    write_circles_csv([m.circle for m in membranes], os.path.join(out_dir, "circles.csv"))
    write_contours_csv(membranes, os.path.join(out_dir, "contours.csv"))
    save_overlay(contour_overlay(first, membranes), os.path.join(out_dir, "membranes_overlay.pgm"))


def write_velocity_summary(tracks, summary, path):
    rows = []
    for t in tracks:
        if len(t.points) < 2:
            continue
        rows.append([t.id, t.membrane_id, len(t.velocity.px_s), fmt_float(t.velocity.mean_px_s),
                     fmt_float(t.velocity.mean_um_s), ""])
    if summary is not None:
        rows.append(["population", "", summary.n, "", fmt_float(summary.population_mean),
                     fmt_float(summary.population_std)])
    return write_csv_table(path, SUMMARY_HEADER, rows)


def run_sequence(in_dir, out_dir, cfgs, name = None, progress = False):
    ''' Full pipeline on one sequence directory; every artifact lands in out_dir
    '''
    name = name or os.path.basename(os.path.normpath(in_dir))
    manifest, first, membranes = detect_stage(in_dir, cfgs)
    write_detect_outputs(out_dir, first, membranes)
    write_manifest(manifest, out_dir)
    detections, tracks, fps = track_stage(in_dir, manifest, membranes, cfgs, out_dir, progress)
    result = SequenceResult(name = name, manifest = manifest, membranes = membranes,
                            tracks = tracks, detections = detections, frames_per_s = fps)

    write_detections_csv(detections, os.path.join(out_dir, "detections.csv"))
    write_tracks(tracks, manifest.fps, manifest.um_per_pixel, os.path.join(out_dir, "tracks"))
    write_velocity_timeseries(tracks, manifest.frame_count, manifest.fps,
                              os.path.join(out_dir, "velocity_timeseries.csv"))
    moving = [t for t in tracks if len(t.points) >= 2]
    if moving:
        result.summary = summarize_velocities(moving)
    else:
        msg = "no worms tracked in {}".format(name)
        logger.warning(msg)
        result.warnings.append(msg)
    write_velocity_summary(tracks, result.summary, os.path.join(out_dir, "velocity_summary.csv"))
    save_overlay(track_overlay(first, membranes, tracks), os.path.join(out_dir, "tracks_overlay.pgm"))
    return result


def population_summary(result):
    ''' VelocitySummary of a finished sequence; AssayError when nothing moved '''
    if result.summary is None:
        raise AssayError("sequence {} has no tracked worms".format(result.name))
    return result.summary


##===== Running Configuration ==================================================

if __name__ == "__main__":
    from utilities.logging_utils import setup_logger
    from utilities.running_utils import algorithm_configs, load_run_config

    INST_NAME = "Pipeline_Test"
    DATA_PATH = "data/scene_default/"
    LOG_PATH = "hypotheses/" + INST_NAME + "/"

    setup_logger()
    run_cfg = load_run_config()
    run_sequence(DATA_PATH, LOG_PATH, algorithm_configs(run_cfg), progress = True)
