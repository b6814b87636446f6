''' Dose-response assay over a set of conditions (one sequence directory each):
per-condition pipeline runs in a worker pool, percent response against the
pooled control, 4PL fit and report.
'''

import os
from concurrent.futures import ThreadPoolExecutor

from loguru import logger

from algorithms.dose_response import (AssayError, DEFAULT_CONDITION, DosePoint,
                                      assay_report, fit_hill, percent_response,
                                      read_dose_points_csv, summarize_velocities,
                                      summary_from_means)
from algorithms.worm_tracker import read_tracks_dir
from tasks.pipeline_runner import population_summary, run_sequence
from utilities.frame_io import read_manifest


def run_conditions(in_root, conditions, out_root, cfgs, threads = 1):
    ''' run_sequence on in_root/<condition> for each condition -> {condition: result}
    Results come back keyed and ordered by condition name whatever the worker count.
    '''
    names = sorted(conditions)
    for name in names:
        if not os.path.isdir(os.path.join(in_root, name)):
            raise AssayError("condition {!r} has no directory under {}".format(name, in_root))

    def _one(name):
        return run_sequence(os.path.join(in_root, name), os.path.join(out_root, name), cfgs, name)

    if threads > 1 and len(names) > 1:
        with ThreadPoolExecutor(max_workers = threads) as pool:
            results = list(pool.map(_one, names))
    else:
        results = [_one(n) for n in names]
    return dict(zip(names, results))


def pooled_control(summaries, dose_map):
    ''' Control = every condition at concentration 0, worms pooled '''
    means = []
    for cond, summary in summaries.items():
        if dose_map[cond] == 0:
            means.extend(summary.per_worm_means)
    if not means:
        raise AssayError("dose map has no control condition (concentration 0)")
    return summary_from_means(means)


def dose_points(summaries, dose_map):
    ''' One DosePoint per condition, percent of the pooled control '''
    control = pooled_control(summaries, dose_map)
    points = []
    for cond in sorted(summaries):
        pct = percent_response(summaries[cond], control)
        points.append(DosePoint(dose_map[cond], pct))
        logger.info("{}: {:.3f} uM -> {:.2f} % of control", cond, dose_map[cond], pct)
    return points


def fit_and_report(points_by_condition, out_dir, curve_samples = 50):
    fits = {cond: fit_hill(points) for cond, points in sorted(points_by_condition.items())}
    assay_report(fits, points_by_condition, out_dir, curve_samples = curve_samples)
    return fits


def run_assay(in_root, dose_map, out_root, cfgs, threads = 1, label = None, curve_samples = 50):
    ''' Pipeline per condition, then percent response and the Hill fit
    '''
    results = run_conditions(in_root, dose_map, out_root, cfgs, threads)
    summaries = {}
    for cond, res in results.items():
        try:
            summaries[cond] = population_summary(res)
        except AssayError as err:
            logger.warning("{}; condition left out of the fit", err)
    label = label or os.path.basename(os.path.normpath(in_root)) or DEFAULT_CONDITION
    points = {label: dose_points(summaries, {c: dose_map[c] for c in summaries})}
    fits = fit_and_report(points, out_root, curve_samples)
    return results, fits


##===== Analysis of existing outputs ===========================================

def analyze_points_csv(path, out_dir, curve_samples = 50):
    return fit_and_report(read_dose_points_csv(path), out_dir, curve_samples)


def analyze_track_dirs(root, dose_map, out_dir, frames_root = None, label = None, curve_samples = 50):
    ''' Reuses tracks written by an earlier run: root/<condition>/tracks
    frames_root: where manifests live (fps, scale); defaults to root
    '''
    summaries = {}
    for cond in sorted(dose_map):
        manifest = read_manifest(os.path.join(frames_root or root, cond))
        tracks = [t for t in read_tracks_dir(os.path.join(root, cond, "tracks"),
                                             fps = manifest.fps,
                                             um_per_pixel = manifest.um_per_pixel)
                    if len(t.points) >= 2]
        if not tracks:
            logger.warning("no usable tracks for {}", cond)
            continue
        summaries[cond] = summarize_velocities(tracks)
    label = label or DEFAULT_CONDITION
    points = {label: dose_points(summaries, {c: dose_map[c] for c in summaries})}
    return fit_and_report(points, out_dir, curve_samples)
