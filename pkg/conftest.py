import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.abspath(__file__))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from tools.scene_generator import MembraneSpec, SceneConfig, disk_coverage, render_scene


@pytest.fixture
def single_membrane_config():
    ''' Factory for 256x256 scenes holding one membrane at (128, 128), r = 100 '''
    def _make(**overrides):
        params = dict(width = 256, height = 256, membranes = [MembraneSpec(128, 128, 100)],
                      frame_count = 20)
        params.update(overrides)
        return SceneConfig(**params)
    return _make


@pytest.fixture
def scene_writer(tmp_path):
    ''' Simulates a SceneConfig into tmp_path/<name>; returns (directory, truth) '''
    def _write(cfg, name = "scene"):
        out = str(tmp_path / name)
        return out, render_scene(cfg, out)
    return _write


@pytest.fixture
def disk_image():
    ''' Anti-aliased bright disk on a darker background, as uint8 '''
    def _make(width, height, cx, cy, r, inside = 190.0, outside = 70.0):
        cov = disk_coverage(width, height, cx, cy, r)
        return np.rint(outside + cov * (inside - outside)).astype(np.uint8)
    return _make
