import numpy as np

from algorithms.membrane_finder import Circle, Contour, Membrane
from algorithms.worm_tracker import Track, TrackPoint
from tools.visualization.overlay_plotter import (CONTOUR_LEVEL, TRACK_LEVEL, draw_polyline,
                                                 save_overlay, track_overlay)
from utilities.frame_io import read_pgm


def test_horizontal_and_vertical_segments():
    canvas = np.zeros((8, 10), dtype = np.uint8)
    draw_polyline(canvas, [(1.0, 2.0), (7.0, 2.0), (7.0, 6.0)], 200)
    assert np.all(canvas[2, 1:8] == 200)
    assert np.all(canvas[2:7, 7] == 200)
    assert int((canvas == 200).sum()) == 7 + 4


def test_closed_outline_and_single_point():
    canvas = np.zeros((10, 10), dtype = np.uint8)
    draw_polyline(canvas, [(2, 2), (6, 2), (6, 6), (2, 6)], 9, closed = True)
    ring = np.zeros((10, 10), dtype = bool)
    ring[2, 2:7] = ring[6, 2:7] = ring[2:7, 2] = ring[2:7, 6] = True
    assert np.array_equal(canvas == 9, ring)
    dot = np.zeros((5, 5), dtype = np.uint8)
    draw_polyline(dot, [(3.0, 1.0)], 50)
    assert dot[1, 3] == 50 and int((dot > 0).sum()) == 1


def test_segments_leaving_the_canvas_are_clipped():
    canvas = np.zeros((6, 6), dtype = np.uint8)
    draw_polyline(canvas, [(-20.0, 3.0), (40.0, 3.0)], 1)
    assert np.all(canvas[3] == 1) and int(canvas.sum()) == 6
    draw_polyline(canvas, [], 7)
    assert int(canvas.sum()) == 6


def test_track_overlay_draws_contours_then_paths(tmp_path):
    frame = np.full((40, 40), 120, dtype = np.uint8)
    square = Contour(points = np.array([[5.0, 5.0], [34.0, 5.0], [34.0, 34.0], [5.0, 34.0]]))
    membrane = Membrane(id = 0, circle = Circle(20, 20, 15), contour = square,
                        mask = np.ones((40, 40), dtype = bool))
    track = Track(id = 0, membrane_id = 0,
                  points = [TrackPoint(0, 10.0, 20.0), TrackPoint(1, 30.0, 20.0)])
    canvas = track_overlay(frame, [membrane], [track])
    assert frame[5, 5] == 120
    assert canvas[5, 20] == CONTOUR_LEVEL and canvas[20, 34] == CONTOUR_LEVEL
    assert np.all(canvas[20, 10:31] == TRACK_LEVEL)
    assert canvas[12, 12] == 120
    back = read_pgm(save_overlay(canvas, str(tmp_path / "overlay.pgm")))
    assert np.array_equal(back, canvas)
