import copy
import enum
import json
import os
from dataclasses import asdict

from munch import Munch, munchify, unmunchify

from algorithms.membrane_finder import ChtConfig, MembraneError, SnakeConfig
from algorithms.vision_ops import VisionError
from algorithms.worm_segmenter import ThresholdConfig, WormFilterConfig
from algorithms.worm_tracker import TrackerConfig, TrackerError
from tools.json_handler import JsonInputError, load_json
from tools.scene_generator import SceneConfig, SceneError

THREADS_ENV = "GELPAD_THREADS"


class ExitCode(enum.IntEnum):
    OK = 0
    CONFIG_ERROR = 1
    IO_ERROR = 2
    DETECTION_FAILURE = 3
    EVAL_THRESHOLD_FAILURE = 4


class ConfigError(Exception):
    pass


## ================ Defaults ===================================================

def default_config():
    '''
    Every recognised key with its default; sections mirror the algorithm configs
    '''
    return {
        "cht": asdict(ChtConfig()),
        "snake": asdict(SnakeConfig()),
        "threshold": asdict(ThresholdConfig()),
        "worm_filter": asdict(WormFilterConfig()),
        "tracker": asdict(TrackerConfig()),
        "scene": asdict(SceneConfig()),
        "assay": {
            "concentrations_um": [],        # synth: one scene per entry when non-empty
            "dose_ec50_um": 40.0,
            "dose_hill_slope": 2.0,
            "curve_samples": 50,
        },
        "eval": {
            "match_radius_px": 5.0,
            "min_recall": 0.95,
            "min_precision": 0.90,
            "max_id_switches": 0,
            "max_rmse_px": 1.5,
            "max_velocity_rel_error": 0.05,
        },
        "paths": {
            "in_dir": None,
            "out_dir": "hypotheses/run",
        },
    }


## ================ Loading ====================================================

def _type_ok(default, value):
    if default is None or value is None:
        return True
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    return isinstance(value, type(default))


def _merge(base, update, where):
    for key, value in update.items():
        name = "{}.{}".format(where, key) if where else key
        if key not in base:
            raise ConfigError("unknown config key '{}'".format(name))
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError("'{}' must be an object".format(name))
            _merge(base[key], value, name)
            continue
        if not _type_ok(base[key], value):
            raise ConfigError("'{}' expects {}, got {!r}".format(
                                name, type(base[key]).__name__, value))
        base[key] = value


def parse_override(text):
    '''
    "section.key=value" -> (["section", "key"], value); value read as JSON, else kept as text
    '''
    if "=" not in text:
        raise ConfigError("override {!r} is not key=value".format(text))
    key, raw = text.split("=", 1)
    path = [k for k in key.strip().split(".") if k]
    if not path:
        raise ConfigError("override {!r} has an empty key".format(text))
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def apply_overrides(cfg_dict, overrides):
    for text in overrides or []:
        path, value = parse_override(text)
        update = value
        for key in reversed(path):
            update = {key: update}
        _merge(cfg_dict, update, "")
    return cfg_dict


def load_run_config(path = None, overrides = ()):
    '''
    Defaults <- JSON file <- --set overrides, validated; returns a Munch
    '''
    cfg = default_config()
    if path:
        try:
            data = load_json(path)
        except JsonInputError as err:
            raise ConfigError(str(err))
        if not isinstance(data, dict):
            raise ConfigError("config {} must be a JSON object".format(path))
        _merge(cfg, data, "")
    apply_overrides(cfg, overrides)
    run_cfg = munchify(cfg)
    check_paths(run_cfg.paths)
    algorithm_configs(run_cfg)
    return run_cfg


def check_paths(paths):
    ''' in_dir, when given, must name an existing directory '''
    src = paths.in_dir
    if src is None:
        return
    if not isinstance(src, str) or not src:
        raise ConfigError("'paths.in_dir' expects a directory path, got {!r}".format(src))
    if not os.path.isdir(src):
        raise ConfigError("input directory {} does not exist".format(src))


def algorithm_configs(run_cfg):
    '''
    RunConfig sections -> frozen algorithm dataclasses (validated on construction)
    '''
    try:
        return Munch(
            cht = ChtConfig(**run_cfg.cht),
            snake = SnakeConfig(**run_cfg.snake),
            threshold = ThresholdConfig(**run_cfg.threshold),
            worm_filter = WormFilterConfig(**run_cfg.worm_filter),
            tracker = TrackerConfig(**run_cfg.tracker),
            scene = scene_config(run_cfg),
        )
    except (MembraneError, VisionError, TrackerError, SceneError, TypeError) as err:
        raise ConfigError("invalid configuration: {}".format(err))


def scene_config(run_cfg):
    return SceneConfig(**copy.deepcopy(unmunchify(run_cfg.scene)))


def config_to_json(run_cfg):
    return json.dumps(unmunchify(run_cfg), indent = 4, sort_keys = True)


def resolve_threads(cli_value = None):
    '''
    --threads, else $GELPAD_THREADS, else 1
    '''
    value = cli_value
    if value is None:
        env = os.environ.get(THREADS_ENV)
        if env is None:
            return 1
        try:
            value = int(env)
        except ValueError:
            raise ConfigError("{}={!r} is not an integer".format(THREADS_ENV, env))
    if value < 1:
        raise ConfigError("thread count must be >= 1, got {}".format(value))
    return value
