"""
Command line front end of the worm-analysis pipeline.

USAGE:
    $ python3 apps/gelpad_cli.py synth --out data/scene_1 [--set scene.seed=7]
    $ python3 apps/gelpad_cli.py run --in data/scene_1 --out hypotheses/run_1
    $ python3 apps/gelpad_cli.py run --in data/series --dose-map data/series/dose_map.json --out hypotheses/assay_1
    $ python3 apps/gelpad_cli.py eval --tracks hypotheses/run_1/tracks --truth data/scene_1/ground_truth.csv

Exit codes: 0 ok, 1 config/input error, 2 I/O error, 3 no membranes, 4 eval thresholds unmet.
"""

import argparse
import json
import os
import sys

BASEPATH = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if BASEPATH not in sys.path:
    sys.path.append(BASEPATH)

from loguru import logger

from algorithms.dose_response import AssayError
from algorithms.membrane_finder import MembraneError
from algorithms.vision_ops import VisionError
from algorithms.worm_segmenter import write_detections_csv
from algorithms.worm_tracker import TrackerError, read_tracks_dir, write_tracks
from tasks.assay_runner import analyze_points_csv, analyze_track_dirs, run_assay
from tasks.pipeline_runner import (NoMembranesError, detect_stage, run_sequence, track_stage,
                                   write_detect_outputs)
from tools.accuracy_reporter.track_accuracy import (EvaluationError, evaluate, print_metrics,
                                                    thresholds_met, write_metrics)
from tools.json_handler import JsonInputError, read_dose_map, save_dose_map, save_to_json
from tools.scene_generator import (SceneError, dose_series_configs, read_ground_truth,
                                   render_scene, scene_summary)
from utilities.frame_io import FrameIOError, read_manifest
from utilities.logging_utils import setup_logger
from utilities.running_utils import (ConfigError, ExitCode, algorithm_configs, config_to_json,
                                     load_run_config, resolve_threads)

DEFAULT_CONFIG = os.path.join(BASEPATH, "apps", "gelpad_default.json")


## ------------------------- Commands --------------------------------------- ##

def _out_dir(args, run_cfg):
    out = args.out or run_cfg.paths.out_dir
    if not out:
        raise ConfigError("no output directory (--out or paths.out_dir)")
    os.makedirs(out, exist_ok = True)
    return out


def _in_dir(args, run_cfg):
    src = getattr(args, "inp", None) or run_cfg.paths.in_dir
    if not src:
        raise ConfigError("no input directory (--in or paths.in_dir)")
    return src


def cmd_synth(args, run_cfg):
    cfgs = algorithm_configs(run_cfg)
    out = _out_dir(args, run_cfg)
    concentrations = run_cfg.assay.concentrations_um
    if not concentrations:
        truth = render_scene(cfgs.scene, out)
        summary = scene_summary(cfgs.scene, truth)
    else:
        series = dose_series_configs(cfgs.scene, concentrations, run_cfg.assay.dose_ec50_um,
                                     run_cfg.assay.dose_hill_slope)
        summary = {}
        for name, conc, scene_cfg in series:
            truth = render_scene(scene_cfg, os.path.join(out, name))
            summary[name] = dict(scene_summary(scene_cfg, truth), concentration_um = conc)
        save_dose_map(os.path.join(out, "dose_map.json"), {n: c for n, c, _ in series})
    save_to_json(os.path.join(out, "scene_config.json"), json.loads(config_to_json(run_cfg.scene)))
    sys.stdout.write(json.dumps(summary, indent = 2, sort_keys = True) + "\n")
    return ExitCode.OK


def cmd_detect(args, run_cfg):
    cfgs = algorithm_configs(run_cfg)
    out = _out_dir(args, run_cfg)
    _, first, membranes = detect_stage(_in_dir(args, run_cfg), cfgs)
    write_detect_outputs(out, first, membranes)
    for m in membranes:
        sys.stdout.write("membrane {}: cx={:.2f} cy={:.2f} r={:.2f} votes={}\n".format(
                            m.id, m.circle.cx, m.circle.cy, m.circle.r, m.circle.votes))
    return ExitCode.OK


def cmd_track(args, run_cfg):
    cfgs = algorithm_configs(run_cfg)
    out = _out_dir(args, run_cfg)
    src = _in_dir(args, run_cfg)
    manifest, first, membranes = detect_stage(src, cfgs)
    write_detect_outputs(out, first, membranes)
    detections, tracks, _ = track_stage(src, manifest, membranes, cfgs, out, progress = args.verbose)
    write_detections_csv(detections, os.path.join(out, "detections.csv"))
    write_tracks(tracks, manifest.fps, manifest.um_per_pixel, os.path.join(out, "tracks"))
    return ExitCode.OK


def cmd_run(args, run_cfg):
    cfgs = algorithm_configs(run_cfg)
    out = _out_dir(args, run_cfg)
    src = _in_dir(args, run_cfg)
    if args.dose_map:
        threads = resolve_threads(args.threads)
        results, fits = run_assay(src, read_dose_map(args.dose_map), out, cfgs, threads,
                                  curve_samples = run_cfg.assay.curve_samples)
        for name, fit in sorted(fits.items()):
            sys.stdout.write("{}: ec50 {:.4f} uM, hill slope {:.4f}{}\n".format(
                                name, fit.ec50, fit.hill_slope,
                                "" if fit.converged else " (not converged)"))
        return ExitCode.OK
    result = run_sequence(src, out, cfgs, progress = args.verbose)
    sys.stdout.write("{} tracks, {:.1f} frames/s\n".format(len(result.tracks), result.frames_per_s))
    return ExitCode.OK


def cmd_analyze(args, run_cfg):
    out = _out_dir(args, run_cfg)
    samples = run_cfg.assay.curve_samples
    if args.points:
        fits = analyze_points_csv(args.points, out, samples)
    else:
        if not args.dose_map:
            raise ConfigError("analyze needs --points or --in with --dose-map")
        fits = analyze_track_dirs(_in_dir(args, run_cfg), read_dose_map(args.dose_map), out,
                                  frames_root = args.frames, curve_samples = samples)
    for name, fit in sorted(fits.items()):
        sys.stdout.write("{}: ec50 {:.4f} uM, hill slope {:.4f}\n".format(name, fit.ec50, fit.hill_slope))
    return ExitCode.OK


def cmd_eval(args, run_cfg):
    out = _out_dir(args, run_cfg)
    fps = args.fps
    if fps is None:
        truth_dir = args.truth if os.path.isdir(args.truth) else os.path.dirname(args.truth)
        fps = read_manifest(truth_dir).fps
    radius = args.match_radius if args.match_radius is not None else run_cfg.eval.match_radius_px
    tracks = read_tracks_dir(args.tracks, fps = fps)
    metrics = evaluate(tracks, read_ground_truth(args.truth), radius, fps)
    print_metrics(metrics)
    write_metrics(metrics, os.path.join(out, "metrics.csv"))
    ok, failed = thresholds_met(metrics, run_cfg.eval)
    for msg in failed:
        logger.warning("threshold unmet: {}", msg)
    return ExitCode.OK if ok else ExitCode.EVAL_THRESHOLD_FAILURE


COMMANDS = {"synth": cmd_synth, "detect": cmd_detect, "track": cmd_track,
            "run": cmd_run, "analyze": cmd_analyze, "eval": cmd_eval}


## ------------------------- Parser ----------------------------------------- ##

def build_parser():
    common = argparse.ArgumentParser(add_help = False)
    common.add_argument('--config', type=str, default=None,
                        help="JSON run config (defaults to apps/gelpad_default.json)")
    common.add_argument('--out', type=str)
    common.add_argument('--set', dest='overrides', action='append', default=[],
                        metavar='SECTION.KEY=VALUE')
    common.add_argument('--threads', type=int)
    common.add_argument('--verbose', action='store_true')

    parser = argparse.ArgumentParser(prog="gelpad", description="worm analysis on gel-membrane videos")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write a synthetic scene")
    for name in ("detect", "track"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument('--in', dest='inp', type=str)
    p = sub.add_parser("run", parents=[common], help="full pipeline")
    p.add_argument('--in', dest='inp', type=str)
    p.add_argument('--dose-map', type=str)
    p = sub.add_parser("analyze", parents=[common], help="dose-response fit")
    p.add_argument('--points', type=str)
    p.add_argument('--in', dest='inp', type=str)
    p.add_argument('--dose-map', type=str)
    p.add_argument('--frames', type=str, help="root holding the manifests, when not beside the tracks")
    p = sub.add_parser("eval", parents=[common], help="score tracks against ground truth")
    p.add_argument('--tracks', type=str, required=True)
    p.add_argument('--truth', type=str, required=True)
    p.add_argument('--match-radius', type=float)
    p.add_argument('--fps', type=float)
    return parser


def main(argv = None):
    args = build_parser().parse_args(argv)
    setup_logger(args.verbose)
    try:
        config_path = args.config
        if config_path is None and os.path.isfile(DEFAULT_CONFIG):
            config_path = DEFAULT_CONFIG
        overrides = list(args.overrides)
        if getattr(args, "inp", None):
            overrides.append("paths.in_dir=" + json.dumps(args.inp))
        run_cfg = load_run_config(config_path, overrides)
        resolve_threads(args.threads)
        return int(COMMANDS[args.command](args, run_cfg))
    except NoMembranesError as err:
        logger.error(str(err))
        return int(ExitCode.DETECTION_FAILURE)
    except (ConfigError, JsonInputError, SceneError, MembraneError, VisionError, TrackerError,
            AssayError, EvaluationError) as err:
        logger.error(str(err))
        return int(ExitCode.CONFIG_ERROR)
    except (FrameIOError, OSError) as err:
        logger.error(str(err))
        return int(ExitCode.IO_ERROR)


if __name__ == "__main__":
    sys.exit(main())
