"""
A script to score worm tracks against synthetic-scene ground truth:
detection recall and precision, id switches, centroid RMSE and per-worm
mean-velocity error.

USAGE:
    <<script.py>> --tracks hypotheses/run_1/tracks --truth data/scene_1/ground_truth.csv
                  --fps 10 [--match-radius 5] [--save-output-csv metrics.csv]
"""

import math
import sys
from dataclasses import dataclass, field
from typing import Dict, Optional

from loguru import logger

from algorithms.worm_tracker import compute_velocities
from utilities.logging_utils import fmt_float, write_csv_table

DEFAULT_THRESHOLDS = {"min_recall": 0.95, "min_precision": 0.90, "max_id_switches": 0,
                      "max_rmse_px": 1.5, "max_velocity_rel_error": 0.05}


class EvaluationError(Exception):
    pass


@dataclass
class EvalMetrics:
    recall: float
    precision: float
    id_switches: int
    rmse_px: float
    velocity_rel_error: Dict[int, float] = field(default_factory = dict)   # worm id -> error
    mean_velocity_rel_error: Optional[float] = None
    n_truth: int = 0
    n_points: int = 0
    n_matched: int = 0


def match_frame(points, truth_rows, radius):
    ''' Greedy one-to-one matching of one frame's track points to true centroids
    points: list of (track id, x, y)
    Returns list of (track id, truth row, distance)
    '''
    pairs = []
    for tid, x, y in points:
        for row in truth_rows:
            d = math.hypot(x - row.x, y - row.y)
            if d <= radius:
                pairs.append((d, row.worm_id, tid, row))
    pairs.sort(key = lambda p: (p[0], p[1], p[2]))
    used_t = set(); used_w = set()
    out = []
    for d, wid, tid, row in pairs:
        if tid in used_t or wid in used_w:
            continue
        used_t.add(tid); used_w.add(wid)
        out.append((tid, row, d))
    return out


def evaluate(tracks, truth, match_radius_px = 5.0, fps = None):
    '''
    Per-frame greedy matching within match_radius_px.
    Recall counts non-merged truth entries; precision counts every track point.
    A new track id after a merged spell is not an id switch.
    fps: needed only for tracks without a stored velocity series
    '''
    by_frame = truth.by_frame()
    n_frames = truth.frame_count
    points = {}
    for t in tracks:
        for p in t.points:
            if not 0 <= p.frame_index < n_frames:
                raise EvaluationError("track {} has frame {} outside truth range [0, {})".format(
                                        t.id, p.frame_index, n_frames))
            points.setdefault(p.frame_index, []).append((t.id, p.x, p.y))

    n_truth = sum(1 for r in truth.rows if not r.merged)
    n_points = sum(len(v) for v in points.values())
    matched_truth = 0
    matched_points = 0
    sq_err = 0.0
    switches = 0
    last_id = {}
    merged_since = {}
    votes = {}
    for f in range(n_frames):
        rows = by_frame.get(f, [])
        for r in rows:
            if r.merged:
                merged_since[r.worm_id] = True
        for tid, row, d in match_frame(points.get(f, []), rows, match_radius_px):
            matched_points += 1
            matched_truth += 0 if row.merged else 1
            sq_err += d * d
            wid = row.worm_id
            if wid in last_id and last_id[wid] != tid and not merged_since.get(wid):
                switches += 1
                logger.debug("worm {} switched {} -> {} at frame {}", wid, last_id[wid], tid, f)
            last_id[wid] = tid
            merged_since[wid] = False
            votes.setdefault(wid, {}).setdefault(tid, 0)
            votes[wid][tid] += 1

    vel_err = _velocity_errors(tracks, truth, votes, fps)
    metrics = EvalMetrics(
        recall = matched_truth / n_truth if n_truth else 1.0,
        precision = matched_points / n_points if n_points else 0.0,
        id_switches = switches,
        rmse_px = math.sqrt(sq_err / matched_points) if matched_points else float("nan"),
        velocity_rel_error = vel_err,
        mean_velocity_rel_error = sum(vel_err.values()) / len(vel_err) if vel_err else None,
        n_truth = n_truth, n_points = n_points, n_matched = matched_points)
    return metrics


def _velocity_errors(tracks, truth, votes, fps):
    ''' Mean speed of each worm's majority track vs. true mean speed over the same steps
    '''
    by_id = {t.id: t for t in tracks}
    speed = {(r.worm_id, r.frame_index): r.speed_px_s for r in truth.rows}
    errors = {}
    for wid in sorted(votes):
        tid = min(votes[wid], key = lambda k: (-votes[wid][k], k))
        track = by_id[tid]
        if len(track.points) < 2:
            continue
        series = track.velocity
        if series is None:
            if fps is None:
                raise EvaluationError("track {} has no velocities and no fps given".format(tid))
            series = compute_velocities(track, fps)
        true_speeds = [speed[(wid, f)] for f in series.frame_index if (wid, f) in speed]
        if not true_speeds:
            continue
        true_mean = sum(true_speeds) / len(true_speeds)
        if true_mean > 0:
            errors[wid] = abs(series.mean_px_s - true_mean) / true_mean
    return errors


def thresholds_met(metrics, thresholds = DEFAULT_THRESHOLDS):
    ''' Returns (ok, list of failed checks) '''
    failed = []
    if metrics.recall < thresholds["min_recall"]:
        failed.append("recall {:.4f} < {}".format(metrics.recall, thresholds["min_recall"]))
    if metrics.precision < thresholds["min_precision"]:
        failed.append("precision {:.4f} < {}".format(metrics.precision, thresholds["min_precision"]))
    if metrics.id_switches > thresholds["max_id_switches"]:
        failed.append("id switches {} > {}".format(metrics.id_switches, thresholds["max_id_switches"]))
    if not metrics.rmse_px <= thresholds["max_rmse_px"]:
        failed.append("rmse {:.4f} px > {}".format(metrics.rmse_px, thresholds["max_rmse_px"]))
    vel = metrics.mean_velocity_rel_error
    if vel is not None and vel > thresholds["max_velocity_rel_error"]:
        failed.append("velocity error {:.4f} > {}".format(vel, thresholds["max_velocity_rel_error"]))
    return not failed, failed


def metric_rows(metrics):
    rows = [["recall", fmt_float(metrics.recall)], ["precision", fmt_float(metrics.precision)],
            ["id_switches", metrics.id_switches], ["rmse_px", fmt_float(metrics.rmse_px)],
            ["mean_velocity_rel_error", fmt_float(metrics.mean_velocity_rel_error)],
            ["n_truth", metrics.n_truth], ["n_points", metrics.n_points],
            ["n_matched", metrics.n_matched]]
    for wid in sorted(metrics.velocity_rel_error):
        rows.append(["velocity_rel_error_worm_{}".format(wid),
                     fmt_float(metrics.velocity_rel_error[wid])])
    return rows


def write_metrics(metrics, path):
    return write_csv_table(path, ["metric", "value"], metric_rows(metrics))


def print_metrics(metrics, stream = None):
    stream = stream or sys.stdout
    stream.write("\nTRACKING SCORES ({} truth entries, {} track points):\n".format(
                    metrics.n_truth, metrics.n_points))
    for name, value in metric_rows(metrics):
        stream.write("{:<28} {}\n".format(name + ":", value))


if __name__ == '__main__':
    import argparse
    from algorithms.worm_tracker import read_tracks_dir
    from tools.scene_generator import read_ground_truth

    parser = argparse.ArgumentParser()
    parser.add_argument('--tracks', type=str, required=True)
    parser.add_argument('--truth', type=str, required=True)
    parser.add_argument('--fps', type=float, required=True)
    parser.add_argument('--match-radius', type=float, default=5.0)
    parser.add_argument('--save-output-csv', type=str)
    args = parser.parse_args()

    scores = evaluate(read_tracks_dir(args.tracks, fps = args.fps),
                      read_ground_truth(args.truth), args.match_radius, args.fps)
    print_metrics(scores)
    if args.save_output_csv:
        write_metrics(scores, args.save_output_csv)
