import os

import numpy as np
import pytest

from algorithms.dose_response import AssayError, VelocitySummary, summary_from_means
from algorithms.worm_tracker import Track, TrackPoint, write_tracks
from tasks.assay_runner import (analyze_points_csv, analyze_track_dirs, dose_points,
                                pooled_control, run_conditions)
from utilities.frame_io import SequenceManifest, write_manifest
from utilities.logging_utils import read_csv_table

DOSES = {"ctrl": 0.0, "d1": 10.0, "d2": 40.0, "d3": 160.0}
STEPS = {"ctrl": 3.0, "d1": 2.7, "d2": 1.5, "d3": 0.3}      # px per frame


def test_control_pools_every_zero_dose():
    summaries = {"a": summary_from_means([10.0, 20.0]), "b": summary_from_means([30.0]),
                 "c": summary_from_means([5.0])}
    control = pooled_control(summaries, {"a": 0.0, "b": 0.0, "c": 10.0})
    assert control.per_worm_means == [10.0, 20.0, 30.0]
    assert control.population_mean == pytest.approx(20.0)
    assert control.population_std == pytest.approx(10.0)
    assert isinstance(control, VelocitySummary) and control.n == 3
    assert control.population_std == pytest.approx(np.std([10.0, 20.0, 30.0], ddof = 1))
    with pytest.raises(AssayError):
        pooled_control(summaries, {"a": 1.0, "b": 2.0, "c": 3.0})


def test_dose_points_are_percent_of_control():
    summaries = {"ctrl": summary_from_means([20.0]), "low": summary_from_means([15.0]),
                 "high": summary_from_means([2.0])}
    points = dose_points(summaries, {"ctrl": 0.0, "low": 5.0, "high": 50.0})
    assert [(p.concentration_um, p.percent_response) for p in points] == [
        (0.0, 100.0), (50.0, pytest.approx(10.0)), (5.0, pytest.approx(75.0))]


def _write_condition(root, name, step, fps = 10.0):
    cond_dir = os.path.join(root, name)
    os.makedirs(cond_dir)
    write_manifest(SequenceManifest(fps = fps, frame_count = 10), cond_dir)
    tracks = [Track(id = i, membrane_id = i,
                    points = [TrackPoint(f, 50.0 + step * f, 40.0 * (i + 1)) for f in range(10)])
              for i in range(2)]
    write_tracks(tracks, fps, 1.0, os.path.join(cond_dir, "tracks"))


def test_analyze_existing_track_dirs(tmp_path):
    root = str(tmp_path / "runs")
    for name, step in STEPS.items():
        _write_condition(root, name, step)
    out = str(tmp_path / "report")
    fits = analyze_track_dirs(root, DOSES, out, label = "lev")
    assert list(fits) == ["lev"]
    rows = read_csv_table(os.path.join(out, "dose_points.csv"))
    percents = {float(r["concentration_uM"]): float(r["percent_response"]) for r in rows}
    assert percents[0.0] == pytest.approx(100.0)
    assert percents[10.0] == pytest.approx(90.0)
    assert percents[40.0] == pytest.approx(50.0)
    assert percents[160.0] == pytest.approx(10.0)
    assert os.path.isfile(os.path.join(out, "hill_fits.csv"))


def test_analyze_points_csv(tmp_path):
    path = tmp_path / "points.csv"
    path.write_text("condition,concentration_uM,percent_response\n"
                    "a,0,100\na,5,96\na,20,80\na,40,50\na,80,20\na,320,3\n")
    fits = analyze_points_csv(str(path), str(tmp_path / "out"), curve_samples = 10)
    assert fits["a"].ec50 == pytest.approx(40.0, rel = 0.25)


def test_missing_condition_directory(tmp_path):
    with pytest.raises(AssayError):
        run_conditions(str(tmp_path), {"absent": 0.0}, str(tmp_path / "out"), cfgs = None)
