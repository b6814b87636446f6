import cv2
import numpy as np

from algorithms.vision_ops import as_pixels
from utilities.frame_io import write_pgm

CONTOUR_LEVEL = 255
TRACK_LEVEL = 0


def draw_polyline(canvas, points, level, closed = False):
    '''
    Burns a polyline into a uint8 canvas (in place) with cv2.polylines;
    vertices are rounded to the nearest pixel, segments leaving the canvas are clipped
    '''
    pts = np.asarray(points, dtype = np.float64).reshape(-1, 2)
    if len(pts) == 0:
        return canvas
    if len(pts) == 1:
        pts = np.vstack([pts, pts])
    vertices = np.rint(pts).astype(np.int32).reshape(-1, 1, 2)
    cv2.polylines(canvas, [vertices], isClosed = closed, color = int(level),
                  thickness = 1, lineType = cv2.LINE_8)
    return canvas


def contour_overlay(frame, membranes):
    canvas = np.ascontiguousarray(as_pixels(frame), dtype = np.uint8).copy()
    for m in membranes:
        draw_polyline(canvas, m.contour.points, CONTOUR_LEVEL, closed = True)
    return canvas


def track_overlay(frame, membranes, tracks):
    '''
    Contours in white, track paths in black over the given frame
    '''
    canvas = contour_overlay(frame, membranes)
    for t in tracks:
        draw_polyline(canvas, [(p.x, p.y) for p in t.points], TRACK_LEVEL)
    return canvas


def save_overlay(canvas, path):
    return write_pgm(path, canvas)
